//! Distributed averaging of switching frequencies.
//!
//! Each TCL nudges its frequency toward its neighbours':
//!
//! ```text
//! df_i/dt = Σ_j W_ij (f_j - f_i)
//! ```
//!
//! integrated with explicit Euler and a simultaneous (Jacobi) update. For a
//! symmetric weight matrix the update is a Laplacian flow, so the mean is
//! invariant and every frequency converges to the initial average.

use crate::{Error, Result, Scalar};

/// Symmetric, non-negative edge weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T> {
    n: usize,
    kind: Weights<T>,
}

#[derive(Debug, Clone, PartialEq)]
enum Weights<T> {
    /// Every off-diagonal entry equals `w`; stepping costs O(n).
    Uniform(T),
    /// Row-major n×n.
    Dense(Vec<T>),
}

/// Frequencies (Hz) of the population plus the consensus clock (s).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector<T> {
    pub values: Vec<T>,
    pub clock: T,
}

/// Largest stable Euler step, or no bound when there is no coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepBound<T> {
    Bounded(T),
    Unbounded,
}

impl<T: Scalar> StepBound<T> {
    pub fn admits(&self, h: T) -> bool {
        match *self {
            StepBound::Bounded(max) => h < max,
            StepBound::Unbounded => true,
        }
    }

    /// `fraction · h_max`, or `fallback` when unbounded.
    pub fn scaled_or(&self, fraction: T, fallback: T) -> T {
        match *self {
            StepBound::Bounded(max) => max * fraction,
            StepBound::Unbounded => fallback,
        }
    }
}

/// All-to-all topology, `W = w (1 1ᵀ - I)`.
pub fn build_weight_matrix<T: Scalar>(n: usize, w: T) -> Result<WeightMatrix<T>> {
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    if !(w >= T::zero()) || !w.is_finite() {
        return Err(Error::InvalidParams(format!("edge weight {w} must be non-negative")));
    }
    Ok(WeightMatrix {
        n,
        kind: Weights::Uniform(w),
    })
}

impl<T: Scalar> WeightMatrix<T> {
    /// General graph from a row-major n×n matrix.
    pub fn from_dense(n: usize, entries: Vec<T>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyPopulation);
        }
        if entries.len() != n * n {
            return Err(Error::Shape {
                expected: n * n,
                got: entries.len(),
            });
        }
        for i in 0..n {
            if entries[i * n + i] != T::zero() {
                return Err(Error::InvalidParams(format!("W[{i}][{i}] must be zero")));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !(v >= T::zero()) || !v.is_finite() {
                    return Err(Error::InvalidParams(format!("W[{i}][{j}] = {v} is negative")));
                }
                if v != entries[j * n + i] {
                    return Err(Error::InvalidParams(format!("W is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            n,
            kind: Weights::Dense(entries),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        assert!(i < self.n && j < self.n, "index out of range");
        match &self.kind {
            Weights::Uniform(w) => {
                if i == j {
                    T::zero()
                } else {
                    *w
                }
            }
            Weights::Dense(m) => m[i * self.n + j],
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Upper bound on the largest Laplacian eigenvalue: exact `w·n` for the
    /// all-to-all case, twice the largest weighted degree otherwise.
    pub fn laplacian_bound(&self) -> T {
        match &self.kind {
            Weights::Uniform(w) => {
                if self.n < 2 {
                    T::zero()
                } else {
                    *w * T::of_usize(self.n)
                }
            }
            Weights::Dense(m) => {
                let max_degree = m
                    .chunks(self.n)
                    .map(|row| row.iter().copied().sum::<T>())
                    .fold(T::zero(), T::max);
                T::two() * max_degree
            }
        }
    }

    pub fn step_bound(&self) -> StepBound<T> {
        let lambda = self.laplacian_bound();
        if lambda > T::zero() {
            StepBound::Bounded(T::two() / lambda)
        } else {
            StepBound::Unbounded
        }
    }

    fn check_step(&self, h: T) -> Result<()> {
        if !(h > T::zero()) {
            return Err(Error::InvalidParams(format!("consensus step {h} must be positive")));
        }
        let bound = self.step_bound();
        if !bound.admits(h) {
            let StepBound::Bounded(max) = bound else { unreachable!() };
            return Err(Error::Stability {
                h: h.as_f64(),
                bound: max.as_f64(),
            });
        }
        Ok(())
    }

    /// Jacobi update of `values` in place of `out`; both slices have length n.
    fn apply(&self, values: &[T], h: T, out: &mut [T]) {
        match &self.kind {
            Weights::Uniform(w) => {
                let n = T::of_usize(self.n);
                let total: T = values.iter().copied().sum();
                for (o, &f) in out.iter_mut().zip(values) {
                    *o = f + h * *w * (total - n * f);
                }
            }
            Weights::Dense(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let fi = values[i];
                    let row = &m[i * self.n..(i + 1) * self.n];
                    let pull: T = row
                        .iter()
                        .zip(values)
                        .map(|(&wij, &fj)| wij * (fj - fi))
                        .sum();
                    *o = fi + h * pull;
                }
            }
        }
    }
}

/// Euler stability limit `2 / (w·n)` of the all-to-all flow.
pub fn stability_bound<T: Scalar>(n: usize, w: T) -> Result<StepBound<T>> {
    Ok(build_weight_matrix(n, w)?.step_bound())
}

impl<T: Scalar> FrequencyVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if let Some(bad) = values.iter().find(|f| !(**f > T::zero()) || !f.is_finite()) {
            return Err(Error::InvalidParams(format!("frequency {bad} Hz must be positive")));
        }
        Ok(Self {
            values,
            clock: T::zero(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::of_usize(self.values.len())
    }

    pub fn spread(&self) -> T {
        let (lo, hi) = self
            .values
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &f| (lo.min(f), hi.max(f)));
        hi - lo
    }

    pub fn max_deviation_from(&self, target: T) -> T {
        self.values
            .iter()
            .map(|&f| (f - target).abs())
            .fold(T::zero(), T::max)
    }
}

pub fn consensus_step<T: Scalar>(
    f: &FrequencyVector<T>,
    weights: &WeightMatrix<T>,
    h: T,
) -> Result<FrequencyVector<T>> {
    let mut next = f.clone();
    consensus_step_into(f, weights, h, &mut next)?;
    Ok(next)
}

/// [`consensus_step`] writing into a caller-owned buffer.
pub fn consensus_step_into<T: Scalar>(
    f: &FrequencyVector<T>,
    weights: &WeightMatrix<T>,
    h: T,
    out: &mut FrequencyVector<T>,
) -> Result<()> {
    if f.len() != weights.n() {
        return Err(Error::Shape {
            expected: weights.n(),
            got: f.len(),
        });
    }
    weights.check_step(h)?;
    out.values.resize(f.len(), T::zero());
    weights.apply(&f.values, h, &mut out.values);
    out.clock = f.clock + h;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ConsensusRun<T> {
    /// Snapshots every `stride` steps, always including the initial and final vectors.
    pub trajectory: Vec<FrequencyVector<T>>,
    pub converged: bool,
    pub steps: usize,
    /// Final `max_i |f_i - mean(f0)|`.
    pub max_deviation: T,
    pub target: T,
}

impl<T: Scalar> ConsensusRun<T> {
    pub fn last(&self) -> &FrequencyVector<T> {
        self.trajectory.last().expect("trajectory holds the initial vector")
    }
}

/// Iterate until every frequency is within `tol` of the initial mean, or
/// `max_steps` steps have run. Non-convergence is reported, not raised.
pub fn run_consensus<T: Scalar>(
    f0: &FrequencyVector<T>,
    weights: &WeightMatrix<T>,
    h: T,
    tol: T,
    max_steps: usize,
    stride: usize,
) -> Result<ConsensusRun<T>> {
    if f0.len() != weights.n() {
        return Err(Error::Shape {
            expected: weights.n(),
            got: f0.len(),
        });
    }
    weights.check_step(h)?;
    let stride = stride.max(1);
    let target = f0.mean();
    let mut current = f0.clone();
    let mut scratch = f0.clone();
    let mut trajectory = vec![f0.clone()];
    let mut steps = 0;
    let mut deviation = current.max_deviation_from(target);
    while deviation > tol && steps < max_steps {
        consensus_step_into(&current, weights, h, &mut scratch)?;
        std::mem::swap(&mut current, &mut scratch);
        steps += 1;
        deviation = current.max_deviation_from(target);
        if steps % stride == 0 {
            trajectory.push(current.clone());
        }
    }
    if steps % stride != 0 {
        trajectory.push(current.clone());
    }
    Ok(ConsensusRun {
        trajectory,
        converged: deviation <= tol,
        steps,
        max_deviation: deviation,
        target,
    })
}
