//! Switching-signal synthesis and the Boolean Kuramoto baseline.
//!
//! A TCL's compressor command is a thresholded sinusoid,
//! `s(t) = Θ[sin(2π f t + α) - s0]`, where the bias `s0 = sin((π - T_ON)/2)`
//! makes the ON window exactly `T_ON` radians wide, i.e. duty `T_ON / 2π`.
//!
//! Phase rates are in rad/s throughout: a natural frequency `ω` in Hz
//! contributes `2π ω`, and coupling gains are added as rad/s.

use crate::{Error, Result, Scalar};

/// Unit step with `Θ(0) = 1`.
#[inline]
pub fn heaviside<T: Scalar>(x: T) -> bool {
    !(x < T::zero())
}

/// Bias that maps an ON phase width (radians) onto the sinusoid threshold.
pub fn duty_bias<T: Scalar>(t_on_phase: T) -> Result<T> {
    if !(t_on_phase >= T::zero() && t_on_phase <= T::TAU()) {
        return Err(Error::Domain(format!("ON phase width {t_on_phase} rad (expected [0, 2π])")));
    }
    Ok(((T::PI() - t_on_phase) * T::half()).sin())
}

/// ON phase width for a duty cycle.
#[inline]
pub fn duty_phase<T: Scalar>(duty: T) -> T {
    T::TAU() * duty
}

#[inline]
pub fn switching_signal<T: Scalar>(frequency: T, t: T, alpha: T, bias: T) -> bool {
    heaviside((T::TAU() * frequency * t + alpha).sin() - bias)
}

/// Oscillator view of one TCL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscState<T> {
    phase: T,
    pub natural_frequency: T,
    pub phase_offset: T,
    duty_phase: T,
    bias: T,
}

impl<T: Scalar> OscState<T> {
    pub fn new(phase: T, natural_frequency: T, phase_offset: T, duty_phase: T) -> Result<Self> {
        let bias = duty_bias(duty_phase)?;
        Ok(Self {
            phase,
            natural_frequency,
            phase_offset,
            duty_phase,
            bias,
        })
    }

    /// Phase reduced to `[0, 2π)`.
    pub fn phase(&self) -> T {
        wrap_phase(self.phase)
    }

    pub fn set_phase(&mut self, phase: T) {
        self.phase = phase;
    }

    pub fn duty_phase(&self) -> T {
        self.duty_phase
    }

    pub fn bias(&self) -> T {
        self.bias
    }

    /// Switch state implied by the current phase.
    pub fn switch(&self) -> bool {
        heaviside(self.phase.sin() - self.bias)
    }
}

#[inline]
pub fn wrap_phase<T: Scalar>(phase: T) -> T {
    let r = phase % T::TAU();
    if r < T::zero() {
        r + T::TAU()
    } else {
        r
    }
}

/// `Σ_{j≠i} |Θ[sin φ_j] - Θ[sin(φ_i + α_ij)]|` with `α_ij = α_j - α_i`.
pub fn kuramoto_coupling<T: Scalar>(phases: &[T], alphas: &[T], i: usize) -> Result<T> {
    if phases.len() != alphas.len() {
        return Err(Error::Shape {
            expected: phases.len(),
            got: alphas.len(),
        });
    }
    if i >= phases.len() {
        return Err(Error::Domain(format!("oscillator index {i}")));
    }
    let mut count = 0usize;
    for j in 0..phases.len() {
        if j == i {
            continue;
        }
        let own = heaviside((phases[i] + alphas[j] - alphas[i]).sin());
        let other = heaviside(phases[j].sin());
        if own != other {
            count += 1;
        }
    }
    Ok(T::of_usize(count))
}

/// One explicit-Euler step of the Boolean Kuramoto model, all couplings
/// evaluated on the pre-step phases.
pub fn kuramoto_boolean_step<T: Scalar>(
    phases: &[T],
    omegas: &[T],
    coupling: T,
    alphas: &[T],
    dt: T,
) -> Result<Vec<T>> {
    let n = phases.len();
    for len in [omegas.len(), alphas.len()] {
        if len != n {
            return Err(Error::Shape { expected: n, got: len });
        }
    }
    if !(dt > T::zero()) {
        return Err(Error::InvalidParams(format!("dt = {dt} must be positive")));
    }
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let pull = if coupling == T::zero() {
            T::zero()
        } else {
            coupling * kuramoto_coupling(phases, alphas, i)?
        };
        next.push(phases[i] + dt * (T::TAU() * omegas[i] + pull));
    }
    Ok(next)
}

/// Natural frequency (Hz) that yields an observed common frequency
/// `omega_fft` once the coupling at the given phase snapshot is removed.
/// The coupling sum is a rad/s contribution, hence the `2π`.
pub fn natural_frequency_correction<T: Scalar>(
    omega_fft: T,
    coupling: T,
    phases: &[T],
    alphas: &[T],
    i: usize,
) -> Result<T> {
    let sum = kuramoto_coupling(phases, alphas, i)?;
    Ok(omega_fft - coupling * sum / T::TAU())
}
