//! Heterogeneous TCL populations and the full closed-loop simulation.
//!
//! Every TCL carries a thermal model, a switching frequency and a duty bias.
//! The compressor command comes from the oscillator signal
//! `Θ[sin(2π f_i t + α_i) - s0_i]`; the thermostat only intervenes when the
//! room leaves its comfort band, and its mandated state wins for that step.
//! A unit whose thermal phase drifted from its oscillator is pulled back in
//! line within one cycle by these interventions. Frequencies are driven to their mean by the
//! distributed-averaging protocol, one consensus step per simulation step.
//!
//! A run walks through a schedule of regimes:
//!
//! * `random`: each TCL at its own frequency and a random phase,
//! * `consensus`: frequencies converge with no phase offsets, so the
//!   population synchronizes,
//! * `desynchronized`: uniform offsets `α_i = i·α` on top of the common
//!   frequency.

use rand::Rng as _;

use crate::consensus::{build_weight_matrix, consensus_step_into, FrequencyVector, WeightMatrix};
use crate::metrics::Series;
use crate::seed;
use crate::signals::{duty_bias, duty_phase, heaviside, kuramoto_coupling};
use crate::thermal::{cycle_times, DutyFrequency, TclParams};
use crate::{Error, Result, Scalar};

/// Closed interval a heterogeneous parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> Bounds<T> {
    pub fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    pub fn fixed(v: T) -> Self {
        Self { min: v, max: v }
    }

    pub fn midpoint(&self) -> T {
        (self.min + self.max) * T::half()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() || self.min > self.max {
            return Err(Error::Config(format!(
                "{name} range [{}, {}] is empty",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut seed::Rng) -> T {
        let u: f64 = rng.gen();
        self.min + (self.max - self.min) * T::of(u)
    }
}

/// How frequencies and phases are coordinated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol<T> {
    /// All-to-all averaging with edge weight `weight`. `step` is the consensus
    /// Euler step in seconds; `None` uses a tenth of the stability limit.
    DistributedAveraging { weight: T, step: Option<T> },
    /// Boolean Kuramoto phase coupling with gain `coupling` (rad/s per disagreeing pair).
    Kuramoto { coupling: T },
    /// No coordination: frequencies stay at their natural values.
    Uncoordinated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Random,
    Consensus,
    Desynchronized,
}

impl Regime {
    pub fn tag(&self) -> &'static str {
        match self {
            Regime::Random => "random",
            Regime::Consensus => "consensus",
            Regime::Desynchronized => "desynchronized",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "random" => Some(Regime::Random),
            "consensus" | "synchronized" => Some(Regime::Consensus),
            "desynchronized" | "desync" => Some(Regime::Desynchronized),
            _ => None,
        }
    }
}

/// One schedule entry. `spacing` is the offset `α` between consecutive TCLs
/// in the desynchronized regime; `None` means `2π/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry<T> {
    pub start: T,
    pub regime: Regime,
    pub spacing: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig<T> {
    pub n: usize,
    pub seed: u64,
    /// kW
    pub power: Bounds<T>,
    pub duty: Bounds<T>,
    /// Hz
    pub frequency: Bounds<T>,
    /// °C
    pub deadband: T,
    /// °C
    pub set_point: T,
    /// °C
    pub ambient: T,
    pub eta: T,
    pub protocol: Protocol<T>,
    /// Empty means random / consensus / desynchronized in equal thirds.
    pub schedule: Vec<ScheduleEntry<T>>,
    pub record_switches: bool,
}

impl<T: Scalar> PopulationConfig<T> {
    /// Homogeneous population at the given operating point: 20 °C set point, 1 °C deadband, 32 °C ambient.
    pub fn homogeneous(n: usize, power: T, duty: T, frequency: T) -> Self {
        Self {
            n,
            seed: 0,
            power: Bounds::fixed(power),
            duty: Bounds::fixed(duty),
            frequency: Bounds::fixed(frequency),
            deadband: T::one(),
            set_point: T::of(20.0),
            ambient: T::of(32.0),
            eta: T::one(),
            protocol: Protocol::DistributedAveraging {
                weight: T::of(0.06),
                step: None,
            },
            schedule: Vec::new(),
            record_switches: false,
        }
    }

    /// 100 TCLs of 14 kW with frequencies within ±5 % of 0.271 Hz, W = 0.06.
    pub fn heterogeneous_100() -> Self {
        Self {
            frequency: Bounds::new(T::of(0.271 * 0.95), T::of(0.271 * 1.05)),
            ..Self::homogeneous(100, T::of(14.0), T::half(), T::of(0.271))
        }
    }

    /// 1000 field units (1.66 kW) at 27 °C / 3 °C.
    pub fn case_study_1() -> Self {
        Self {
            n: 1000,
            power: Bounds::fixed(T::of(1.66)),
            duty: Bounds::new(T::of(0.422), T::of(0.482)),
            frequency: Bounds::new(T::of(0.0029), T::of(0.0033)),
            deadband: T::of(3.0),
            set_point: T::of(27.0),
            ..Self::homogeneous(1000, T::of(1.66), T::half(), T::of(0.003))
        }
    }

    /// 10000 field units (1.66 kW) at 24 °C / 2 °C.
    pub fn case_study_2() -> Self {
        Self {
            n: 10_000,
            power: Bounds::fixed(T::of(1.66)),
            duty: Bounds::new(T::of(0.4812), T::of(0.5354)),
            frequency: Bounds::new(T::of(0.0026), T::of(0.0036)),
            deadband: T::of(2.0),
            set_point: T::of(24.0),
            ..Self::homogeneous(10_000, T::of(1.66), T::half(), T::of(0.003))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        self.power.validate("power")?;
        self.duty.validate("duty")?;
        self.frequency.validate("frequency")?;
        if !(self.power.min > T::zero()) {
            return Err(Error::Config("power must be positive".into()));
        }
        if !(self.duty.min > T::zero() && self.duty.max < T::one()) {
            return Err(Error::Config("duty must lie strictly inside (0, 1)".into()));
        }
        if !(self.frequency.min > T::zero()) {
            return Err(Error::Config("frequency must be positive".into()));
        }
        if !(self.eta > T::zero() && self.eta <= T::one()) {
            return Err(Error::Config("eta must lie in (0, 1]".into()));
        }
        if !(self.deadband > T::zero()) {
            return Err(Error::Config("deadband must be positive".into()));
        }
        match self.protocol {
            Protocol::DistributedAveraging { weight, step } => {
                if !(weight >= T::zero()) {
                    return Err(Error::Config("consensus weight must be non-negative".into()));
                }
                if let Some(h) = step {
                    if !(h > T::zero()) {
                        return Err(Error::Config("consensus step must be positive".into()));
                    }
                }
            }
            Protocol::Kuramoto { coupling } => {
                if !coupling.is_finite() {
                    return Err(Error::Config("coupling must be finite".into()));
                }
            }
            Protocol::Uncoordinated => {}
        }
        Ok(())
    }

    /// Mean switching period of the configured frequency range, seconds.
    pub fn nominal_period(&self) -> T {
        self.frequency.midpoint().recip()
    }

    /// The schedule actually run for `duration` seconds.
    pub fn resolved_schedule(&self, duration: T) -> Result<Vec<ScheduleEntry<T>>> {
        let schedule = if self.schedule.is_empty() {
            let third = duration / T::of(3.0);
            vec![
                ScheduleEntry { start: T::zero(), regime: Regime::Random, spacing: None },
                ScheduleEntry { start: third, regime: Regime::Consensus, spacing: None },
                ScheduleEntry {
                    start: third + third,
                    regime: Regime::Desynchronized,
                    spacing: None,
                },
            ]
        } else {
            self.schedule.clone()
        };
        validate_schedule(&schedule, duration)?;
        Ok(schedule)
    }
}

fn validate_schedule<T: Scalar>(schedule: &[ScheduleEntry<T>], duration: T) -> Result<()> {
    let first = schedule
        .first()
        .ok_or_else(|| Error::Config("schedule is empty".into()))?;
    if first.start != T::zero() {
        return Err(Error::Config("the first regime must start at t = 0".into()));
    }
    for pair in schedule.windows(2) {
        if !(pair[1].start > pair[0].start) {
            return Err(Error::Config(format!(
                "regimes overlap: {} at {} s does not start after {} at {} s",
                pair[1].regime.tag(),
                pair[1].start,
                pair[0].regime.tag(),
                pair[0].start
            )));
        }
    }
    for e in schedule {
        if e.start >= duration && e.start != T::zero() {
            return Err(Error::Config(format!(
                "{} starts at {} s, after the run ends at {} s",
                e.regime.tag(),
                e.start,
                duration
            )));
        }
        if let Some(a) = e.spacing {
            if !(a >= T::zero()) || !a.is_finite() {
                return Err(Error::Config(format!("phase spacing {a} must be non-negative")));
            }
        }
    }
    Ok(())
}

/// One member of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct TclUnit<T> {
    pub params: TclParams<T>,
    pub cycle: DutyFrequency<T>,
    /// `sin((π - 2π d)/2)`
    pub bias: T,
    /// Initial oscillator phase, radians.
    pub phase: T,
    pub temperature: T,
    pub switch: bool,
}

impl<T: Scalar> TclUnit<T> {
    /// kW drawn while ON, after the efficiency factor.
    pub fn rated(&self) -> T {
        self.params.power * self.params.efficiency
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population<T> {
    pub units: Vec<TclUnit<T>>,
}

impl<T: Scalar> Population<T> {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// `Σ P_j η_j`, the aggregate with every unit ON.
    pub fn capacity(&self) -> T {
        self.units.iter().map(TclUnit::rated).sum()
    }

    /// `Σ P_j η_j d_j`, the aggregate a perfectly desynchronized population draws.
    pub fn expected_mean(&self) -> T {
        self.units.iter().map(|u| u.rated() * u.cycle.duty).sum()
    }

    pub fn mean_frequency(&self) -> T {
        self.units.iter().map(|u| u.cycle.frequency).sum::<T>() / T::of_usize(self.units.len())
    }
}

/// Draw `n` TCLs. Power, duty and frequency are independent uniforms; the
/// thermal constants are then fitted so the unit's own thermostat cycle has
/// exactly that duty and frequency. Initial phases are uniform on `[0, 2π)`,
/// temperatures uniform in the deadband, switch states Bernoulli(d).
pub fn sample_population<T: Scalar>(cfg: &PopulationConfig<T>) -> Result<Population<T>> {
    cfg.validate()?;
    let mut rng = seed::labeled_rng(cfg.seed, "population");
    let mut units = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let power = cfg.power.sample(&mut rng);
        let duty = cfg.duty.sample(&mut rng);
        let frequency = cfg.frequency.sample(&mut rng);
        let phase = T::TAU() * T::of(rng.gen::<f64>());
        let params = TclParams::from_cycle(
            cfg.ambient,
            cfg.set_point,
            cfg.deadband,
            power,
            cfg.eta,
            duty,
            frequency,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        let (t_min, t_max) = params.bounds();
        let temperature = t_min + (t_max - t_min) * T::of(rng.gen::<f64>());
        let switch = T::of(rng.gen::<f64>()) < duty;
        units.push(TclUnit {
            params,
            cycle: DutyFrequency::declared(duty, frequency)?,
            bias: duty_bias(duty_phase(duty))?,
            phase,
            temperature,
            switch,
        });
    }
    Ok(Population { units })
}

/// `Σ P_j η_j s_j`
pub fn aggregate_power<T: Scalar>(switches: &[bool], powers: &[T], etas: &[T]) -> Result<T> {
    for len in [powers.len(), etas.len()] {
        if len != switches.len() {
            return Err(Error::Shape {
                expected: switches.len(),
                got: len,
            });
        }
    }
    Ok(switches
        .iter()
        .zip(powers.iter().zip(etas))
        .filter(|(s, _)| **s)
        .map(|(_, (&p, &e))| p * e)
        .sum())
}

/// `α_i = i · 2π/n`
pub fn uniform_phase_offsets<T: Scalar>(n: usize) -> Vec<T> {
    let spacing = if n == 0 { T::zero() } else { T::TAU() / T::of_usize(n) };
    spaced_offsets(n, spacing)
}

pub fn spaced_offsets<T: Scalar>(n: usize, spacing: T) -> Vec<T> {
    (0..n).map(|i| T::of_usize(i) * spacing).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSpan<T> {
    pub start: T,
    pub regime: Regime,
    /// Offset between consecutive TCLs while this span ran, radians.
    pub spacing: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult<T> {
    pub dt: T,
    pub time: Vec<T>,
    /// kW, one value per step, sampled before the step's thermal update.
    pub p_agg: Vec<T>,
    /// Hz, population-mean switching frequency per step.
    pub f_mean: Vec<T>,
    /// `switches[k][i]`, only when requested.
    pub switches: Option<Vec<Vec<bool>>>,
    pub final_frequencies: Vec<T>,
    pub regimes: Vec<RegimeSpan<T>>,
    /// Per-TCL (min, max) temperature over the run.
    pub temperature_envelope: Vec<(T, T)>,
    /// Largest excursion outside any comfort band, in units of that TCL's
    /// single-step overshoot bound `dt·|dT/dt|_max`. At most 1 when comfort holds.
    pub comfort_ratio: T,
    /// Steps in which the thermostat overrode the oscillator command.
    pub clamp_events: usize,
    /// `Σ P_j η_j`
    pub capacity: T,
    /// `Σ P_j η_j d_j`
    pub expected_mean: T,
}

impl<T: Scalar> SimResult<T> {
    pub fn len(&self) -> usize {
        self.p_agg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_agg.is_empty()
    }

    pub fn series(&self) -> Series<T> {
        Series {
            dt: self.dt,
            values: self.p_agg.clone(),
        }
    }

    /// First step index at or after `t` seconds.
    pub fn index_at(&self, t: T) -> usize {
        self.time.partition_point(|&x| x < t)
    }

    /// Power samples in `[from, to)` seconds.
    pub fn window(&self, from: T, to: T) -> &[T] {
        let a = self.index_at(from);
        let b = self.index_at(to).max(a);
        &self.p_agg[a..b]
    }

    /// The trailing `fraction` of the run.
    pub fn tail(&self, fraction: T) -> &[T] {
        let keep = (T::of_usize(self.len()) * fraction).round().to_usize().unwrap_or(0);
        let keep = keep.clamp(1, self.len());
        &self.p_agg[self.len() - keep..]
    }

    /// Power samples of the span running `regime`, from its start to the next span.
    pub fn regime_window(&self, regime: Regime) -> Option<&[T]> {
        let pos = self.regimes.iter().position(|r| r.regime == regime)?;
        let from = self.regimes[pos].start;
        let to = self
            .regimes
            .get(pos + 1)
            .map(|r| r.start)
            .unwrap_or(T::infinity());
        Some(self.window(from, to))
    }
}

/// Step-by-step simulator over a sampled population. [`simulate`] drives it
/// from a schedule; the load-following controller drives it directly.
pub struct Engine<'a, T: Scalar> {
    pop: &'a Population<T>,
    protocol: Protocol<T>,
    dt: T,
    step: usize,
    regime: Regime,
    offsets: Vec<T>,
    temps: Vec<T>,
    decay: Vec<T>,
    switches: Vec<bool>,
    freqs: FrequencyVector<T>,
    scratch: FrequencyVector<T>,
    weights: Option<WeightMatrix<T>>,
    consensus_h: T,
    phases: Vec<T>,
    overshoot: Vec<T>,
    envelope: Vec<(T, T)>,
    comfort_ratio: T,
    clamp_events: usize,
}

impl<'a, T: Scalar> Engine<'a, T> {
    pub fn new(pop: &'a Population<T>, protocol: Protocol<T>, dt: T) -> Result<Self> {
        if pop.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if !(dt > T::zero()) {
            return Err(Error::Config(format!("dt = {dt} must be positive")));
        }
        for u in &pop.units {
            let (t_on, t_off) = cycle_times(&u.params)?;
            let limit = t_on.min(t_off) * T::of(0.1);
            if dt > limit {
                return Err(Error::StepSize {
                    dt: dt.as_f64(),
                    limit: limit.as_f64(),
                });
            }
        }
        let n = pop.len();
        let freqs = FrequencyVector::new(pop.units.iter().map(|u| u.cycle.frequency).collect())?;
        let (weights, consensus_h) = match protocol {
            Protocol::DistributedAveraging { weight, step } => {
                let w = build_weight_matrix(n, weight)?;
                let h = step.unwrap_or_else(|| w.step_bound().scaled_or(T::of(0.1), dt));
                // validate once; the per-step call re-checks cheaply
                let mut probe = freqs.clone();
                consensus_step_into(&freqs, &w, h, &mut probe)?;
                (Some(w), h)
            }
            _ => (None, T::zero()),
        };
        Ok(Self {
            pop,
            protocol,
            dt,
            step: 0,
            regime: Regime::Random,
            offsets: vec![T::zero(); n],
            temps: pop.units.iter().map(|u| u.temperature).collect(),
            decay: pop
                .units
                .iter()
                .map(|u| (-dt / u.params.time_constant()).exp())
                .collect(),
            switches: pop.units.iter().map(|u| u.switch).collect(),
            scratch: freqs.clone(),
            freqs,
            weights,
            consensus_h,
            phases: pop.units.iter().map(|u| u.phase).collect(),
            overshoot: pop.units.iter().map(|u| dt * u.params.max_rate()).collect(),
            envelope: pop.units.iter().map(|u| (u.temperature, u.temperature)).collect(),
            comfort_ratio: T::zero(),
            clamp_events: 0,
        })
    }

    pub fn time(&self) -> T {
        T::of_usize(self.step) * self.dt
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn frequencies(&self) -> &[T] {
        &self.freqs.values
    }

    pub fn switches(&self) -> &[bool] {
        &self.switches
    }

    pub fn temperatures(&self) -> &[T] {
        &self.temps
    }

    /// Switch regime. Offsets are re-spaced instantly; phases and
    /// temperatures carry over.
    pub fn set_regime(&mut self, regime: Regime, spacing: T) {
        self.regime = regime;
        let spacing = match regime {
            Regime::Desynchronized => spacing,
            _ => T::zero(),
        };
        self.offsets = spaced_offsets(self.pop.len(), spacing);
    }

    fn command(&self, i: usize, t: T) -> bool {
        let u = &self.pop.units[i];
        let arg = match self.protocol {
            Protocol::Kuramoto { .. } => self.phases[i],
            _ => match self.regime {
                Regime::Random => T::TAU() * u.cycle.frequency * t + u.phase,
                Regime::Consensus | Regime::Desynchronized => {
                    T::TAU() * self.freqs.values[i] * t + self.offsets[i]
                }
            },
        };
        heaviside(arg.sin() - u.bias)
    }

    /// Advance one step and return the aggregate power at the start of it.
    pub fn advance(&mut self) -> Result<T> {
        let t = self.time();
        let mut p_agg = T::zero();
        for i in 0..self.pop.len() {
            let u = &self.pop.units[i];
            let cmd = self.command(i, t);
            let temp = self.temps[i];
            let (t_min, t_max) = u.params.bounds();
            let mandated = if temp < t_min {
                Some(false)
            } else if temp > t_max {
                Some(true)
            } else {
                None
            };
            let s = mandated.unwrap_or(cmd);
            if s != cmd {
                self.clamp_events += 1;
            }
            self.switches[i] = s;
            if s {
                p_agg = p_agg + u.rated();
            }

            let target = u.params.equilibrium(s);
            let next = target + (temp - target) * self.decay[i];
            self.temps[i] = next;
            let env = &mut self.envelope[i];
            env.0 = env.0.min(next);
            env.1 = env.1.max(next);
            let excess = (t_min - next).max(next - t_max);
            if excess > T::zero() {
                self.comfort_ratio = self.comfort_ratio.max(excess / self.overshoot[i]);
            }
        }
        self.coordinate()?;
        self.step += 1;
        Ok(p_agg)
    }

    fn coordinate(&mut self) -> Result<()> {
        match self.protocol {
            Protocol::DistributedAveraging { .. } => {
                if self.regime != Regime::Random {
                    let w = self.weights.as_ref().expect("weights built for averaging");
                    consensus_step_into(&self.freqs, w, self.consensus_h, &mut self.scratch)?;
                    std::mem::swap(&mut self.freqs, &mut self.scratch);
                }
            }
            Protocol::Kuramoto { coupling } => {
                let n = self.pop.len();
                let coupled = self.regime != Regime::Random && coupling != T::zero();
                let mut next = Vec::with_capacity(n);
                for i in 0..n {
                    let pull = if coupled {
                        coupling * kuramoto_coupling(&self.phases, &self.offsets, i)?
                    } else {
                        T::zero()
                    };
                    next.push(self.phases[i] + self.dt * (T::TAU() * self.freqs.values[i] + pull));
                }
                self.phases = next;
            }
            Protocol::Uncoordinated => {}
        }
        Ok(())
    }

    fn mean_frequency(&self) -> T {
        self.freqs.mean()
    }
}

/// Simulate `cfg` for `duration` seconds at step `dt`.
pub fn simulate<T: Scalar>(cfg: &PopulationConfig<T>, duration: T, dt: T) -> Result<SimResult<T>> {
    let pop = sample_population(cfg)?;
    simulate_population(&pop, cfg, duration, dt)
}

/// [`simulate`] on an already sampled population.
pub fn simulate_population<T: Scalar>(
    pop: &Population<T>,
    cfg: &PopulationConfig<T>,
    duration: T,
    dt: T,
) -> Result<SimResult<T>> {
    if !(duration > T::zero()) {
        return Err(Error::Config(format!("duration {duration} must be positive")));
    }
    let schedule = cfg.resolved_schedule(duration)?;
    let mut engine = Engine::new(pop, cfg.protocol, dt)?;
    let steps = (duration / dt).round().to_usize().unwrap_or(0).max(1);
    let default_spacing = T::TAU() / T::of_usize(pop.len());

    let mut rec = Recorder::new(dt, steps, cfg.record_switches);
    let mut regimes = Vec::with_capacity(schedule.len());
    let mut next_entry = 0;
    for _ in 0..steps {
        let t = engine.time();
        while next_entry < schedule.len() && schedule[next_entry].start <= t {
            let e = schedule[next_entry];
            let spacing = e.spacing.unwrap_or(default_spacing);
            engine.set_regime(e.regime, spacing);
            regimes.push(RegimeSpan {
                start: t,
                regime: e.regime,
                spacing: if e.regime == Regime::Desynchronized { spacing } else { T::zero() },
            });
            next_entry += 1;
        }
        rec.record(&mut engine)?;
    }
    Ok(rec.finish(engine, pop, regimes))
}

/// Accumulates per-step output of an [`Engine`].
pub(crate) struct Recorder<T> {
    dt: T,
    time: Vec<T>,
    p_agg: Vec<T>,
    f_mean: Vec<T>,
    switches: Option<Vec<Vec<bool>>>,
}

impl<T: Scalar> Recorder<T> {
    pub(crate) fn new(dt: T, steps: usize, record_switches: bool) -> Self {
        Self {
            dt,
            time: Vec::with_capacity(steps),
            p_agg: Vec::with_capacity(steps),
            f_mean: Vec::with_capacity(steps),
            switches: record_switches.then(|| Vec::with_capacity(steps)),
        }
    }

    pub(crate) fn record(&mut self, engine: &mut Engine<'_, T>) -> Result<()> {
        self.time.push(engine.time());
        self.f_mean.push(engine.mean_frequency());
        let p = engine.advance()?;
        self.p_agg.push(p);
        if let Some(sw) = self.switches.as_mut() {
            sw.push(engine.switches().to_vec());
        }
        Ok(())
    }

    pub(crate) fn finish(
        self,
        engine: Engine<'_, T>,
        pop: &Population<T>,
        regimes: Vec<RegimeSpan<T>>,
    ) -> SimResult<T> {
        SimResult {
            dt: self.dt,
            time: self.time,
            p_agg: self.p_agg,
            f_mean: self.f_mean,
            switches: self.switches,
            final_frequencies: engine.freqs.values.clone(),
            regimes,
            temperature_envelope: engine.envelope.clone(),
            comfort_ratio: engine.comfort_ratio,
            clamp_events: engine.clamp_events,
            capacity: pop.capacity(),
            expected_mean: pop.expected_mean(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn case_configs_sample_inside_ranges() {
        let cfg = PopulationConfig::<f64>::case_study_1();
        let pop = sample_population(&cfg).unwrap();
        assert_eq!(pop.len(), 1000);
        for u in &pop.units {
            assert!((0.422..=0.482).contains(&u.cycle.duty));
            assert!((0.0029..=0.0033).contains(&u.cycle.frequency));
            assert_eq!(u.params.bounds(), (25.5, 28.5));
            assert!((0.0..PI * 2.0).contains(&u.phase));
        }
        let cfg = PopulationConfig::<f64>::case_study_2();
        assert_eq!(cfg.n, 10_000);
        assert_eq!((cfg.duty.min, cfg.duty.max), (0.4812, 0.5354));
        assert_eq!(cfg.set_point, 24.0);
    }

    #[test]
    fn degenerate_ranges_give_identical_units() {
        let cfg = PopulationConfig::<f64>::homogeneous(4, 14.0, 0.5, 0.5);
        let pop = sample_population(&cfg).unwrap();
        for u in &pop.units[1..] {
            assert_eq!(u.params, pop.units[0].params);
            assert_eq!(u.cycle, pop.units[0].cycle);
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut cfg = PopulationConfig::<f64>::case_study_1();
        cfg.duty = Bounds::new(0.5, 0.4);
        assert!(matches!(sample_population(&cfg), Err(Error::Config(_))));
        cfg.duty = Bounds::fixed(0.45);
        cfg.n = 0;
        assert!(matches!(sample_population(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = PopulationConfig::<f64>::case_study_1();
        assert_eq!(sample_population(&cfg).unwrap(), sample_population(&cfg).unwrap());
        let other = PopulationConfig { seed: 1, ..cfg.clone() };
        assert_ne!(sample_population(&cfg).unwrap(), sample_population(&other).unwrap());
    }

    #[test]
    fn aggregate_power_cases() {
        let p = [14.0; 4];
        let e = [1.0; 4];
        assert_eq!(aggregate_power(&[false; 4], &p, &e).unwrap(), 0.0);
        assert_eq!(aggregate_power(&[true; 4], &p, &e).unwrap(), 56.0);
        assert!(matches!(aggregate_power(&[true; 3], &p, &e), Err(Error::Shape { .. })));
    }

    #[test]
    fn four_phased_square_waves_sum_to_half() {
        // enumeration oracle: at any phase exactly two of four π/2-shifted
        // half-duty square waves are ON
        let offsets = uniform_phase_offsets::<f64>(4);
        for k in 0..1000 {
            let theta = 0.001 + k as f64 * 0.00628;
            let sw: Vec<bool> = offsets.iter().map(|a| (theta + a).sin() >= 0.0).collect();
            assert_eq!(aggregate_power(&sw, &[14.0; 4], &[1.0; 4]).unwrap(), 28.0);
        }
    }

    #[test]
    fn offsets() {
        let a = uniform_phase_offsets::<f64>(4);
        assert!((a[1] - FRAC_PI_2).abs() < 1e-15);
        let a = uniform_phase_offsets::<f64>(1000);
        assert!((a[1] - PI / 500.0).abs() < 1e-15);
        assert_eq!(uniform_phase_offsets::<f64>(1), vec![0.0]);
    }

    #[test]
    fn overlapping_schedule_rejected() {
        let mut cfg = PopulationConfig::<f64>::homogeneous(4, 14.0, 0.5, 0.5);
        cfg.schedule = vec![
            ScheduleEntry { start: 0.0, regime: Regime::Random, spacing: None },
            ScheduleEntry { start: 10.0, regime: Regime::Consensus, spacing: None },
            ScheduleEntry { start: 10.0, regime: Regime::Desynchronized, spacing: None },
        ];
        assert!(matches!(simulate(&cfg, 30.0, 0.01), Err(Error::Config(_))));
        cfg.schedule.truncate(1);
        cfg.schedule[0].start = 1.0;
        assert!(matches!(simulate(&cfg, 30.0, 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn oversized_dt_rejected() {
        let cfg = PopulationConfig::<f64>::homogeneous(4, 14.0, 0.5, 0.5);
        // t_on = 1 s, so the limit is 0.1 s
        assert!(simulate(&cfg, 30.0, 0.2).is_err());
        assert!(simulate(&cfg, 30.0, 0.1).is_ok());
    }

    #[test]
    fn single_tcl_is_its_own_square_wave() {
        let mut cfg = PopulationConfig::<f64>::homogeneous(1, 14.0, 0.3, 0.5);
        cfg.seed = 3;
        let r = simulate(&cfg, 60.0, 0.005).unwrap();
        assert!(r.p_agg.iter().all(|&p| p == 0.0 || p == 14.0));
        let tail = r.tail(0.5);
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((mean - 14.0 * 0.3).abs() < 0.2, "{mean}");
    }

    #[test]
    fn power_bound_and_comfort_hold() {
        let mut cfg = PopulationConfig::<f64>::heterogeneous_100();
        cfg.n = 30;
        let r = simulate(&cfg, 90.0, 0.01).unwrap();
        assert!(r.p_agg.iter().all(|&p| p >= 0.0 && p <= r.capacity + 1e-9));
        assert!(r.comfort_ratio <= 1.0, "{}", r.comfort_ratio);
    }

    #[test]
    fn regime_spans_follow_thirds() {
        let cfg = PopulationConfig::<f64>::homogeneous(4, 14.0, 0.5, 0.5);
        let r = simulate(&cfg, 30.0, 0.01).unwrap();
        let tags: Vec<_> = r.regimes.iter().map(|s| s.regime).collect();
        assert_eq!(tags, vec![Regime::Random, Regime::Consensus, Regime::Desynchronized]);
        assert!((r.regimes[1].start - 10.0).abs() < 0.011);
        assert!((r.regimes[2].spacing - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn f32_simulation_runs() {
        let cfg = PopulationConfig::<f32>::homogeneous(4, 14.0, 0.5, 0.5);
        let r = simulate(&cfg, 30.0, 0.01).unwrap();
        assert_eq!(r.len(), 3000);
        assert!(r.p_agg.iter().all(|&p| p <= 56.0));
    }
}
