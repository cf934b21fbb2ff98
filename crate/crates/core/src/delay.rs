//! Delay calculator and load-following controller.
//!
//! The delay table maps a uniform phase spacing `α ∈ [0, 2π/N]` to the
//! steady-state RMS power reduction `P_norm` it achieves relative to the
//! synchronized (`α = 0`) population. The controller inverts the table: for
//! every segment of a utility reference it picks the spacing whose reduction
//! is nearest the requested one and re-spaces the running population.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::ensemble::{
    sample_population, simulate_population, Engine, Population, PopulationConfig, Recorder,
    Regime, RegimeSpan, ScheduleEntry, SimResult,
};
use crate::metrics::{p_norm, rms_of};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayRow<T> {
    /// radians between consecutive TCLs
    pub alpha: T,
    /// percent
    pub p_norm: T,
}

/// Where a table came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable<T> {
    pub n: usize,
    /// `Σ P_j η_j` of the population the table was measured on, kW.
    pub rated_power: T,
    pub rows: Vec<DelayRow<T>>,
    pub provenance: Provenance,
}

impl<T: Scalar> DelayTable<T> {
    pub fn new(n: usize, rated_power: T, rows: Vec<DelayRow<T>>, provenance: Provenance) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyPopulation);
        }
        if rows.is_empty() {
            return Err(Error::InvalidParams("delay table has no rows".into()));
        }
        let max_alpha = T::TAU() / T::of_usize(n);
        let slack = max_alpha * T::of(1e-9);
        for pair in rows.windows(2) {
            if !(pair[1].alpha > pair[0].alpha) {
                return Err(Error::InvalidParams("delay table rows must be sorted by alpha".into()));
            }
        }
        for r in &rows {
            if !(r.alpha >= T::zero() && r.alpha <= max_alpha + slack) || !r.p_norm.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "row (alpha = {}, p_norm = {}) outside [0, 2π/{n}]",
                    r.alpha, r.p_norm
                )));
            }
        }
        Ok(Self {
            n,
            rated_power,
            rows,
            provenance,
        })
    }

    pub fn max_alpha(&self) -> T {
        T::TAU() / T::of_usize(self.n)
    }

    /// `(min, max)` achievable `P_norm`.
    pub fn p_norm_range(&self) -> (T, T) {
        self.rows.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), r| {
            (lo.min(r.p_norm), hi.max(r.p_norm))
        })
    }

    /// Spacing between grid points.
    pub fn resolution(&self) -> T {
        if self.rows.len() < 2 {
            T::zero()
        } else {
            self.max_alpha() / T::of_usize(self.rows.len() - 1)
        }
    }
}

/// How long each table point is simulated. Both windows are counted in mean
/// switching periods of the population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState<T> {
    pub settle_periods: T,
    pub measure_periods: T,
    pub samples_per_period: usize,
}

impl<T: Scalar> Default for SteadyState<T> {
    fn default() -> Self {
        Self {
            settle_periods: T::of(3.0),
            measure_periods: T::two(),
            samples_per_period: 200,
        }
    }
}

impl<T: Scalar> SteadyState<T> {
    fn timing(&self, pop: &Population<T>) -> (T, T, T) {
        let period = pop.mean_frequency().recip();
        let dt = period / T::of_usize(self.samples_per_period.max(1));
        let settle = self.settle_periods * period;
        (dt, settle, settle + self.measure_periods * period)
    }
}

/// RMS aggregate power in steady state with every TCL offset by `alpha`
/// from its predecessor.
pub fn steady_state_rms<T: Scalar>(
    pop: &Population<T>,
    cfg: &PopulationConfig<T>,
    alpha: T,
    steady: &SteadyState<T>,
) -> Result<T> {
    let (dt, settle, duration) = steady.timing(pop);
    let run_cfg = PopulationConfig {
        schedule: vec![ScheduleEntry {
            start: T::zero(),
            regime: Regime::Desynchronized,
            spacing: Some(alpha),
        }],
        record_switches: false,
        ..cfg.clone()
    };
    let r = simulate_population(pop, &run_cfg, duration, dt)?;
    let from = r.index_at(settle).min(r.len() - 1);
    Ok(rms_of(&r.p_agg[from..]))
}

/// Short stable identifier of a configuration.
pub fn config_hash<T: Scalar>(cfg: &PopulationConfig<T>) -> String {
    let digest = Sha256::digest(format!("{cfg:?}").as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Sweep `grid_size` equally spaced offsets over `[0, 2π/N]`.
pub fn build_delay_table<T: Scalar>(cfg: &PopulationConfig<T>, grid_size: usize) -> Result<DelayTable<T>> {
    build_delay_table_with(cfg, grid_size, &SteadyState::default())
}

pub fn build_delay_table_with<T: Scalar>(
    cfg: &PopulationConfig<T>,
    grid_size: usize,
    steady: &SteadyState<T>,
) -> Result<DelayTable<T>> {
    if grid_size < 2 {
        return Err(Error::InvalidParams(format!("grid size {grid_size} must be at least 2")));
    }
    let pop = sample_population(cfg)?;
    let max_alpha = T::TAU() / T::of_usize(cfg.n);
    let step = max_alpha / T::of_usize(grid_size - 1);
    let alphas: Vec<T> = (0..grid_size)
        .map(|k| if k == grid_size - 1 { max_alpha } else { T::of_usize(k) * step })
        .collect();
    let levels = alphas
        .par_iter()
        .map(|&a| steady_state_rms(&pop, cfg, a, steady))
        .collect::<Result<Vec<T>>>()?;
    let baseline = levels[0];
    let rows = alphas
        .iter()
        .zip(&levels)
        .map(|(&alpha, &level)| Ok(DelayRow { alpha, p_norm: p_norm(baseline, level)? }))
        .collect::<Result<Vec<_>>>()?;
    DelayTable::new(
        cfg.n,
        pop.capacity(),
        rows,
        Provenance {
            config_hash: config_hash(cfg),
            seed: cfg.seed,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup<T> {
    pub alpha: T,
    /// `P_norm` of the chosen row.
    pub p_norm: T,
    /// The target was outside the table's achievable range.
    pub clamped: bool,
}

/// Row whose `P_norm` is nearest `target`; ties go to the smaller offset.
pub fn lookup_alpha<T: Scalar>(table: &DelayTable<T>, target: T) -> Result<Lookup<T>> {
    let first = table
        .rows
        .first()
        .ok_or_else(|| Error::InvalidParams("delay table has no rows".into()))?;
    if !target.is_finite() {
        return Err(Error::InvalidParams(format!("target {target} is not finite")));
    }
    let mut best = *first;
    let mut best_gap = (first.p_norm - target).abs();
    for r in &table.rows[1..] {
        let gap = (r.p_norm - target).abs();
        if gap < best_gap {
            best = *r;
            best_gap = gap;
        }
    }
    let (lo, hi) = table.p_norm_range();
    Ok(Lookup {
        alpha: best.alpha,
        p_norm: best.p_norm,
        clamped: target < lo || target > hi,
    })
}

/// Piecewise-constant utility reference: `(start s, target P_norm %)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSchedule<T> {
    pub segments: Vec<(T, T)>,
}

impl<T: Scalar> ReferenceSchedule<T> {
    pub fn new(segments: Vec<(T, T)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("reference schedule is empty".into()));
        }
        if segments[0].0 != T::zero() {
            return Err(Error::Config("the first segment must start at t = 0".into()));
        }
        for pair in segments.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(Error::Config(format!(
                    "segment start {} s does not follow {} s",
                    pair[1].0, pair[0].0
                )));
            }
        }
        if let Some((_, bad)) = segments.iter().find(|(_, p)| !p.is_finite()) {
            return Err(Error::Config(format!("target {bad} is not finite")));
        }
        Ok(Self { segments })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPlan<T> {
    pub start: T,
    pub target: T,
    pub lookup: Lookup<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadFollowRun<T> {
    pub sim: SimResult<T>,
    pub plan: Vec<SegmentPlan<T>>,
}

/// Track `schedule` by re-spacing the population at every segment boundary.
/// Phases and temperatures are never re-randomized.
pub fn load_follow<T: Scalar>(
    cfg: &PopulationConfig<T>,
    table: &DelayTable<T>,
    schedule: &ReferenceSchedule<T>,
    duration: T,
    dt: T,
) -> Result<LoadFollowRun<T>> {
    if table.n != cfg.n {
        return Err(Error::Config(format!(
            "delay table was built for n = {}, population has n = {}",
            table.n, cfg.n
        )));
    }
    if !(duration > T::zero()) {
        return Err(Error::Config(format!("duration {duration} must be positive")));
    }
    let plan = schedule
        .segments
        .iter()
        .map(|&(start, target)| {
            Ok(SegmentPlan {
                start,
                target,
                lookup: lookup_alpha(table, target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pop = sample_population(cfg)?;
    let mut engine = Engine::new(&pop, cfg.protocol, dt)?;
    let steps = (duration / dt).round().to_usize().unwrap_or(0).max(1);
    let mut rec = Recorder::new(dt, steps, cfg.record_switches);
    let mut regimes = Vec::with_capacity(plan.len());
    let mut next = 0;
    for _ in 0..steps {
        let t = engine.time();
        while next < plan.len() && plan[next].start <= t {
            let alpha = plan[next].lookup.alpha;
            engine.set_regime(Regime::Desynchronized, alpha);
            regimes.push(RegimeSpan {
                start: t,
                regime: Regime::Desynchronized,
                spacing: alpha,
            });
            next += 1;
        }
        rec.record(&mut engine)?;
    }
    Ok(LoadFollowRun {
        sim: rec.finish(engine, &pop, regimes),
        plan,
    })
}
