//! Scalar figures of merit for aggregate-power waveforms.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Result, Scalar};

/// Uniformly sampled series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series<T> {
    pub dt: T,
    pub values: Vec<T>,
}

impl<T: Scalar> Series<T> {
    pub fn new(dt: T, values: Vec<T>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidParams(format!("sample interval {dt} must be positive")));
        }
        if values.is_empty() {
            return Err(Error::InvalidParams("series is empty".into()));
        }
        Ok(Self { dt, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> T {
        self.dt * T::of_usize(self.values.len())
    }

    pub fn mean(&self) -> T {
        mean(&self.values)
    }
}

pub fn mean<T: Scalar>(values: &[T]) -> T {
    values.iter().copied().sum::<T>() / T::of_usize(values.len())
}

pub fn rms<T: Scalar>(s: &Series<T>) -> T {
    rms_of(&s.values)
}

pub fn rms_of<T: Scalar>(values: &[T]) -> T {
    (values.iter().map(|&v| v * v).sum::<T>() / T::of_usize(values.len())).sqrt()
}

/// RMS of the deviation from the series mean.
pub fn ripple_rms<T: Scalar>(values: &[T]) -> T {
    let m = mean(values);
    (values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::of_usize(values.len())).sqrt()
}

/// `max |x - mean| / mean`, as a fraction.
pub fn fluctuation_band<T: Scalar>(values: &[T]) -> T {
    let m = mean(values);
    values
        .iter()
        .map(|&v| (v - m).abs())
        .fold(T::zero(), T::max)
        / m
}

/// Percent RMS reduction of the offset run relative to the synchronized baseline.
pub fn p_norm<T: Scalar>(p_rms_agg: T, p_rms_alpha: T) -> Result<T> {
    if !(p_rms_agg > T::zero()) {
        return Err(Error::ZeroBaseline("p_norm"));
    }
    Ok((p_rms_agg - p_rms_alpha) / p_rms_agg * T::of(100.0))
}

/// Percent reduction of a fluctuation level relative to the random-phase case.
pub fn p_red<T: Scalar>(p_random: T, p_desync: T) -> Result<T> {
    if !(p_random > T::zero()) {
        return Err(Error::ZeroBaseline("p_red"));
    }
    Ok((p_random - p_desync) / p_random * T::of(100.0))
}

/// RMS tracking error over the window, normalized by `p_base`, in percent.
/// The integral uses the trapezoid rule on the shared grid.
pub fn rmse_percent<T: Scalar>(p_ref: &Series<T>, p_agg: &Series<T>, p_base: T) -> Result<T> {
    if p_ref.len() != p_agg.len() {
        return Err(Error::Shape {
            expected: p_ref.len(),
            got: p_agg.len(),
        });
    }
    if p_ref.dt != p_agg.dt {
        return Err(Error::InvalidParams("series are sampled on different grids".into()));
    }
    if !(p_base > T::zero()) {
        return Err(Error::ZeroBaseline("rmse_percent"));
    }
    let sq: Vec<T> = p_ref
        .values
        .iter()
        .zip(&p_agg.values)
        .map(|(&r, &a)| (r - a) * (r - a))
        .collect();
    let mean_sq = if sq.len() == 1 {
        sq[0]
    } else {
        let interior: T = sq[1..sq.len() - 1].iter().copied().sum();
        let integral = p_ref.dt * (interior + (sq[0] + sq[sq.len() - 1]) * T::half());
        integral / (p_ref.dt * T::of_usize(sq.len() - 1))
    };
    Ok((mean_sq / (p_base * p_base)).sqrt() * T::of(100.0))
}

/// Frequency of the strongest non-DC bin.
///
/// The mean is removed, the series is zero-padded to the next power of two
/// under a rectangular window, and the peak is reported at its bin centre.
/// Fewer than two cycles of the peak inside the window is a resolution error.
pub fn dominant_frequency<T: Scalar>(s: &Series<T>) -> Result<T> {
    if s.len() < 4 {
        return Err(Error::Resolution(format!("{} samples", s.len())));
    }
    let m = s.mean();
    let size = s.len().next_power_of_two();
    let mut buf: Vec<Complex<T>> = s
        .values
        .iter()
        .map(|&v| Complex::new(v - m, T::zero()))
        .chain(std::iter::repeat(Complex::new(T::zero(), T::zero())))
        .take(size)
        .collect();
    FftPlanner::new().plan_fft_forward(size).process(&mut buf);

    let mut best = 0usize;
    let mut best_mag = T::zero();
    for (k, c) in buf.iter().enumerate().take(size / 2 + 1).skip(1) {
        let mag = c.norm_sqr();
        if mag > best_mag {
            best_mag = mag;
            best = k;
        }
    }
    let energy: T = s.values.iter().map(|&v| (v - m) * (v - m)).sum();
    if best == 0 || !(best_mag > T::epsilon() * energy * T::of_usize(size)) {
        return Err(Error::Resolution("series carries no oscillation".into()));
    }
    let freq = T::of_usize(best) / (T::of_usize(size) * s.dt);
    if freq * s.duration() < T::two() {
        return Err(Error::Resolution(format!(
            "peak at {freq} Hz completes fewer than two cycles in the window"
        )));
    }
    Ok(freq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn series(dt: f64, v: Vec<f64>) -> Series<f64> {
        Series::new(dt, v).unwrap()
    }

    #[test]
    fn rms_values() {
        assert!((rms(&series(1.0, vec![-2.5; 7])) - 2.5).abs() < 1e-15);
        assert!((rms(&series(0.3, vec![3.0, 4.0])) - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rms(&series(1.0, vec![0.0; 5])), 0.0);
    }

    #[test]
    fn empty_series_rejected() {
        assert!(Series::<f64>::new(1.0, vec![]).is_err());
        assert!(Series::new(0.0, vec![1.0]).is_err());
    }

    #[test]
    fn p_norm_values() {
        assert_eq!(p_norm(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(p_norm(10.0, 0.0).unwrap(), 100.0);
        assert_eq!(p_norm(10.0, 5.0).unwrap(), 50.0);
        assert_eq!(p_norm(0.0, 5.0), Err(Error::ZeroBaseline("p_norm")));
    }

    #[test]
    fn p_red_values() {
        assert_eq!(p_red(7.0, 7.0).unwrap(), 0.0);
        assert!((p_red(1400.0f64, 840.0).unwrap() - 40.0).abs() < 1e-12);
        assert!(p_red(0.0, 1.0).is_err());
    }

    #[test]
    fn rmse_identical_and_offset() {
        let a = series(0.5, vec![1.0, 4.0, 2.0, 8.0]);
        assert_eq!(rmse_percent(&a, &a, 3.0).unwrap(), 0.0);
        let shifted = series(0.5, a.values.iter().map(|v| v + 1.5).collect());
        assert!((rmse_percent(&a, &shifted, 30.0).unwrap() - 5.0).abs() < 1e-12);
        let short = series(0.5, vec![1.0]);
        assert!(matches!(rmse_percent(&a, &short, 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn rmse_trapezoid_weights_endpoints_half() {
        let r = series(1.0, vec![0.0; 3]);
        let a = series(1.0, vec![2.0, 0.0, 0.0]);
        // ∫ over [0, 2] of the piecewise-linear square error: (4 + 0)/2 + 0 = 2 → mean 1
        assert!((rmse_percent(&r, &a, 1.0).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn square_wave_frequency() {
        let dt = 0.01;
        let v: Vec<f64> = (0..6000)
            .map(|k| if (TAU * 0.5 * k as f64 * dt).sin() >= 0.0 { 1.0 } else { 0.0 })
            .collect();
        let f = dominant_frequency(&series(dt, v)).unwrap();
        let bin = 1.0 / (8192.0 * dt);
        assert!((f - 0.5).abs() <= bin, "{f}");
    }

    #[test]
    fn sine_frequency() {
        let dt = 0.05;
        let n = (600.0 / dt) as usize;
        let v: Vec<f64> = (0..n).map(|k| (TAU * 0.298 * k as f64 * dt).sin()).collect();
        let f = dominant_frequency(&series(dt, v)).unwrap();
        let bin = 1.0 / (n.next_power_of_two() as f64 * dt);
        assert!((f - 0.298).abs() <= bin, "{f}");
    }

    #[test]
    fn constant_series_has_no_peak() {
        assert!(matches!(
            dominant_frequency(&series(0.1, vec![3.0; 256])),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn short_window_rejected() {
        // a bit over one cycle
        let v: Vec<f64> = (0..120).map(|k| (TAU * k as f64 / 100.0).sin()).collect();
        assert!(matches!(dominant_frequency(&series(1.0, v)), Err(Error::Resolution(_))));
    }

    #[test]
    fn band_and_ripple() {
        let v = vec![98.0f64, 102.0, 100.0, 100.0];
        assert!((fluctuation_band(&v) - 0.02).abs() < 1e-15);
        assert!((ripple_rms(&v) - 2.0f64.sqrt()).abs() < 1e-12);
    }
}
