//! Hybrid thermal model of a single cooling TCL.
//!
//! Between switching events the room temperature obeys the linear ODE
//!
//! ```text
//! dT/dt = -(T - Ta + s·P·R) / (R·C)
//! ```
//!
//! with `s ∈ {0, 1}` the compressor state. Because the ODE is linear for a
//! fixed `s`, every step uses the exact exponential solution. `C` is in
//! kWh/°C, so `R·C` is in hours and is multiplied by 3600 for second-based
//! clocks.

use crate::{Error, Result, Scalar};

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Physical constants of one TCL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TclParams<T> {
    /// °C/kW
    pub thermal_resistance: T,
    /// kWh/°C
    pub thermal_capacitance: T,
    /// kW drawn while ON
    pub power: T,
    /// °C
    pub ambient: T,
    /// °C
    pub set_point: T,
    /// °C, full width of the hysteresis band
    pub deadband: T,
    /// coefficient of performance applied to the drawn power
    pub efficiency: T,
}

/// Instantaneous thermal state of one TCL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TclThermalState<T> {
    pub temperature: T,
    pub switch: bool,
    pub clock: T,
}

impl<T: Scalar> TclParams<T> {
    pub fn new(
        thermal_resistance: T,
        thermal_capacitance: T,
        power: T,
        ambient: T,
        set_point: T,
        deadband: T,
        efficiency: T,
    ) -> Result<Self> {
        let p = Self {
            thermal_resistance,
            thermal_capacitance,
            power,
            ambient,
            set_point,
            deadband,
            efficiency,
        };
        p.validate()?;
        Ok(p)
    }

    /// The household air conditioner used throughout the single-TCL figures:
    /// Ta = 32 °C, δ = 1 °C, R = 2 °C/kW, C = 10 kWh/°C, P = 14 kW, Ts = 20 °C.
    pub fn reference() -> Self {
        Self {
            thermal_resistance: T::of(2.0),
            thermal_capacitance: T::of(10.0),
            power: T::of(14.0),
            ambient: T::of(32.0),
            set_point: T::of(20.0),
            deadband: T::one(),
            efficiency: T::one(),
        }
    }

    /// Build parameters whose natural limit cycle has the given duty cycle and
    /// frequency, keeping ambient, set point, deadband and power fixed.
    ///
    /// The OFF phase length in units of the time constant depends only on the
    /// temperatures, so the duty cycle pins `P·R` in closed form and the
    /// frequency then pins `R·C`.
    pub fn from_cycle(
        ambient: T,
        set_point: T,
        deadband: T,
        power: T,
        efficiency: T,
        duty: T,
        frequency: T,
    ) -> Result<Self> {
        if !(duty > T::zero() && duty < T::one()) {
            return Err(Error::InvalidParams(format!(
                "duty cycle {duty} must lie strictly inside (0, 1)"
            )));
        }
        if !(frequency > T::zero()) || !frequency.is_finite() {
            return Err(Error::InvalidParams(format!(
                "frequency {frequency} Hz must be positive"
            )));
        }
        if !(power > T::zero()) || !(deadband > T::zero()) {
            return Err(Error::InvalidParams(
                "power and deadband must be positive".into(),
            ));
        }
        let t_min = set_point - deadband * T::half();
        let t_max = set_point + deadband * T::half();
        if !(ambient > t_max) {
            return Err(Error::Infeasible(format!(
                "ambient {ambient} °C must exceed T_max = {t_max} °C"
            )));
        }
        let off_units = ((ambient - t_min) / (ambient - t_max)).ln();
        let on_units = off_units * duty / (T::one() - duty);
        let q = on_units.exp();
        // (T_max - Ta + x) / (T_min - Ta + x) = q, solved for x = P·R
        let pr = ambient + (t_max - q * t_min) / (q - T::one());
        let tau_s = T::one() / (frequency * (on_units + off_units));
        let r = pr / power;
        let c = tau_s / (r * T::of(SECONDS_PER_HOUR));
        Self::new(r, c, power, ambient, set_point, deadband, efficiency)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.thermal_resistance,
            self.thermal_capacitance,
            self.power,
            self.ambient,
            self.set_point,
            self.deadband,
            self.efficiency,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite thermal parameter".into()));
        }
        if !(self.thermal_resistance > T::zero()) {
            return Err(Error::InvalidParams("R must be positive".into()));
        }
        if !(self.thermal_capacitance > T::zero()) {
            return Err(Error::InvalidParams("C must be positive".into()));
        }
        if !(self.power > T::zero()) {
            return Err(Error::InvalidParams("P must be positive".into()));
        }
        if !(self.deadband > T::zero()) {
            return Err(Error::InvalidParams("deadband must be positive".into()));
        }
        if !(self.efficiency > T::zero() && self.efficiency <= T::one()) {
            return Err(Error::InvalidParams("efficiency must lie in (0, 1]".into()));
        }
        let (t_min, t_max) = self.bounds();
        if !(self.ambient > t_max) {
            return Err(Error::Infeasible(format!(
                "ambient {} °C does not exceed T_max = {} °C; the OFF phase never ends",
                self.ambient, t_max
            )));
        }
        if !(self.on_equilibrium() < t_min) {
            return Err(Error::Infeasible(format!(
                "ON equilibrium Ta - P·R = {} °C is not below T_min = {} °C; the ON phase never ends",
                self.on_equilibrium(),
                t_min
            )));
        }
        Ok(())
    }

    /// `(T_min, T_max)`
    pub fn bounds(&self) -> (T, T) {
        let half = self.deadband * T::half();
        (self.set_point - half, self.set_point + half)
    }

    /// R·C in seconds.
    pub fn time_constant(&self) -> T {
        self.thermal_resistance * self.thermal_capacitance * T::of(SECONDS_PER_HOUR)
    }

    pub fn on_equilibrium(&self) -> T {
        self.ambient - self.power * self.thermal_resistance
    }

    /// Temperature the ODE relaxes toward in the given switch state.
    pub fn equilibrium(&self, switch: bool) -> T {
        if switch {
            self.on_equilibrium()
        } else {
            self.ambient
        }
    }

    /// Largest |dT/dt| reachable inside the deadband, °C/s.
    pub fn max_rate(&self) -> T {
        let (t_min, t_max) = self.bounds();
        let tau = self.time_constant();
        let heating = (self.ambient - t_min) / tau;
        let cooling = (t_max - self.on_equilibrium()) / tau;
        heating.max(cooling)
    }
}

pub fn derived_bounds<T: Scalar>(params: &TclParams<T>) -> (T, T) {
    params.bounds()
}

/// Hysteresis switch: OFF below `T_min`, ON above `T_max`, otherwise hold.
/// The band edges themselves hold.
pub fn thermostat<T: Scalar>(temperature: T, previous: bool, params: &TclParams<T>) -> bool {
    let (t_min, t_max) = params.bounds();
    if temperature < t_min {
        false
    } else if temperature > t_max {
        true
    } else {
        previous
    }
}

/// Exact solution of the ODE over `dt` seconds with the switch held fixed.
#[inline]
pub fn advance_temperature<T: Scalar>(
    temperature: T,
    switch: bool,
    params: &TclParams<T>,
    dt: T,
) -> T {
    let target = params.equilibrium(switch);
    target + (temperature - target) * (-dt / params.time_constant()).exp()
}

/// Advance one thermostat-driven TCL by `dt`: integrate exactly with the
/// current switch state, then let the thermostat react to the new temperature.
pub fn step_temperature<T: Scalar>(
    state: &TclThermalState<T>,
    params: &TclParams<T>,
    dt: T,
) -> Result<TclThermalState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::StepSize {
            dt: dt.as_f64(),
            limit: 0.0,
        });
    }
    let limit = step_limit(params)?;
    if dt > limit {
        return Err(Error::StepSize {
            dt: dt.as_f64(),
            limit: limit.as_f64(),
        });
    }
    let temperature = advance_temperature(state.temperature, state.switch, params, dt);
    Ok(TclThermalState {
        temperature,
        switch: thermostat(temperature, state.switch, params),
        clock: state.clock + dt,
    })
}

/// Largest step accepted by [`step_temperature`].
pub fn step_limit<T: Scalar>(params: &TclParams<T>) -> Result<T> {
    let (t_on, t_off) = cycle_times(params)?;
    Ok(t_on.min(t_off) * T::of(0.1))
}

/// Natural `(t_on, t_off)` in seconds of the thermostat limit cycle.
pub fn cycle_times<T: Scalar>(params: &TclParams<T>) -> Result<(T, T)> {
    let (t_min, t_max) = params.bounds();
    let tau = params.time_constant();
    let off_ratio = (params.ambient - t_min) / (params.ambient - t_max);
    let on_ratio = (t_max - params.on_equilibrium()) / (t_min - params.on_equilibrium());
    for (name, ratio, den) in [
        ("OFF", off_ratio, params.ambient - t_max),
        ("ON", on_ratio, t_min - params.on_equilibrium()),
    ] {
        if !(den > T::zero()) || !(ratio > T::zero()) || !ratio.is_finite() {
            return Err(Error::Infeasible(format!(
                "{name} phase never reaches its switching boundary"
            )));
        }
    }
    Ok((tau * on_ratio.ln(), tau * off_ratio.ln()))
}

/// Duty cycle and switching frequency of a TCL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyFrequency<T> {
    pub duty: T,
    /// Hz
    pub frequency: T,
}

impl<T: Scalar> DutyFrequency<T> {
    /// Declared values, e.g. measured on a field unit, bypassing the thermal model.
    pub fn declared(duty: T, frequency: T) -> Result<Self> {
        if !(duty > T::zero() && duty < T::one()) {
            return Err(Error::InvalidParams(format!("duty {duty} outside (0, 1)")));
        }
        if !(frequency > T::zero()) || !frequency.is_finite() {
            return Err(Error::InvalidParams(format!("frequency {frequency} must be positive")));
        }
        Ok(Self { duty, frequency })
    }

    pub fn period(&self) -> T {
        self.frequency.recip()
    }
}

pub fn duty_and_frequency<T: Scalar>(params: &TclParams<T>) -> Result<DutyFrequency<T>> {
    let (t_on, t_off) = cycle_times(params)?;
    let period = t_on + t_off;
    Ok(DutyFrequency {
        duty: t_on / period,
        frequency: period.recip(),
    })
}
