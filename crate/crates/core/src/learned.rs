//! Learned offset map: a small MLP that predicts the phase offset `α` from
//! the population size `N` and a target `P_norm`.
//!
//! The pipeline is dataset generation by steady-state sweeps, min-max
//! scaling, a seeded 7:3 split, mini-batch gradient descent on MSE in the
//! scaled domain, and evaluation in both the scaled and physical domains.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::delay::{build_delay_table_with, SteadyState};
use crate::ensemble::{Bounds, PopulationConfig, Protocol};
use crate::seed;
use crate::{Error, Result, Scalar};

pub const LAYERS: [usize; 4] = [2, 2, 4, 1];
const FORMAT_HEADER: &str = "tclswarm-mlp v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow<T> {
    pub n: usize,
    /// percent
    pub p_norm: T,
    /// radians
    pub alpha: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub rows: Vec<DatasetRow<T>>,
    pub seed: u64,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(rows: Vec<DatasetRow<T>>, seed: u64) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.n == 0 {
                return Err(Error::InvalidParams(format!("row {i}: n must be positive")));
            }
            if !r.p_norm.is_finite() || !r.alpha.is_finite() {
                return Err(Error::InvalidParams(format!("row {i}: non-finite value")));
            }
            let max_alpha = T::TAU() / T::of_usize(r.n);
            let slack = max_alpha * T::of(1e-9);
            if r.alpha < T::zero() || r.alpha > max_alpha + slack {
                return Err(Error::InvalidParams(format!(
                    "row {i}: alpha {} outside [0, 2π/{}]",
                    r.alpha, r.n
                )));
            }
        }
        Ok(Self { rows, seed })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn column(&self, f: impl Fn(&DatasetRow<T>) -> T) -> Vec<T> {
        self.rows.iter().map(f).collect()
    }
}

/// Population and sweep settings for dataset generation.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec<T> {
    pub n_min: usize,
    pub n_max: usize,
    pub n_stride: usize,
    pub grid_size: usize,
    pub power: Bounds<T>,
    pub duty: Bounds<T>,
    /// Hz
    pub frequency: Bounds<T>,
    pub deadband: T,
    pub set_point: T,
    pub ambient: T,
    pub steady: SteadyState<T>,
}

impl<T: Scalar> Default for DatasetSpec<T> {
    /// N = 10..=500 at stride 1, 100 offsets per N, 24 °C / 2 °C units.
    fn default() -> Self {
        Self {
            n_min: 10,
            n_max: 500,
            n_stride: 1,
            grid_size: 100,
            power: Bounds::new(T::of(1.2), T::of(2.2)),
            duty: Bounds::new(T::of(0.4812), T::of(0.5354)),
            frequency: Bounds::fixed(T::of(0.0027)),
            deadband: T::two(),
            set_point: T::of(24.0),
            ambient: T::of(32.0),
            steady: SteadyState {
                settle_periods: T::one(),
                measure_periods: T::one(),
                samples_per_period: 100,
            },
        }
    }
}

impl<T: Scalar> DatasetSpec<T> {
    /// Same grid with every fifth N.
    pub fn fast() -> Self {
        Self {
            n_stride: 5,
            ..Self::default()
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        (self.n_min..=self.n_max).step_by(self.n_stride.max(1)).collect()
    }

    pub fn expected_rows(&self) -> usize {
        self.sizes().len() * self.grid_size
    }

    pub fn population(&self, n: usize, master: u64) -> PopulationConfig<T> {
        PopulationConfig {
            n,
            seed: seed::derive(master, &format!("dataset/n={n}")),
            power: self.power,
            duty: self.duty,
            frequency: self.frequency,
            deadband: self.deadband,
            set_point: self.set_point,
            ambient: self.ambient,
            eta: T::one(),
            protocol: Protocol::Uncoordinated,
            schedule: Vec::new(),
            record_switches: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_min == 0 || self.n_min > self.n_max || self.n_stride == 0 {
            return Err(Error::InvalidParams(format!(
                "bad N range {}..={} step {}",
                self.n_min, self.n_max, self.n_stride
            )));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidParams("grid size must be at least 2".into()));
        }
        Ok(())
    }
}

/// One delay-table sweep per N, each on its own seeded population.
pub fn generate_dataset<T: Scalar>(spec: &DatasetSpec<T>, seed: u64) -> Result<Dataset<T>> {
    spec.validate()?;
    let tables = spec
        .sizes()
        .par_iter()
        .map(|&n| build_delay_table_with(&spec.population(n, seed), spec.grid_size, &spec.steady))
        .collect::<Result<Vec<_>>>()?;
    let rows = tables
        .iter()
        .flat_map(|t| {
            t.rows.iter().map(move |r| DatasetRow {
                n: t.n,
                p_norm: r.p_norm,
                alpha: r.alpha,
            })
        })
        .collect();
    Dataset::new(rows, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> Scaler<T> {
    pub fn fit(column: &[T]) -> Result<Self> {
        if column.is_empty() {
            return Err(Error::InvalidParams("cannot fit a scaler to an empty column".into()));
        }
        let min = column.iter().copied().fold(T::infinity(), T::min);
        let max = column.iter().copied().fold(T::neg_infinity(), T::max);
        Self::new(min, max)
    }

    pub fn new(min: T, max: T) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidParams("scaler bounds must be finite".into()));
        }
        if !(max > min) {
            return Err(Error::DegenerateScaler(min.as_f64()));
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn normalize(&self, x: T) -> T {
        (x - self.min) / (self.max - self.min)
    }

    #[inline]
    pub fn denormalize(&self, y: T) -> T {
        y * (self.max - self.min) + self.min
    }
}

/// Scale a column, fitting a new scaler unless one is supplied.
pub fn minmax_normalize<T: Scalar>(column: &[T], scaler: Option<&Scaler<T>>) -> Result<(Vec<T>, Scaler<T>)> {
    let s = match scaler {
        Some(s) => *s,
        None => Scaler::fit(column)?,
    };
    Ok((column.iter().map(|&x| s.normalize(x)).collect(), s))
}

pub fn minmax_denormalize<T: Scalar>(scaler: &Scaler<T>, y: T) -> T {
    scaler.denormalize(y)
}

/// Scalers for the two inputs and the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalers<T> {
    pub n: Scaler<T>,
    pub p_norm: Scaler<T>,
    pub alpha: Scaler<T>,
}

impl<T: Scalar> Scalers<T> {
    pub fn fit(ds: &Dataset<T>) -> Result<Self> {
        Ok(Self {
            n: Scaler::fit(&ds.column(|r| T::of_usize(r.n)))?,
            p_norm: Scaler::fit(&ds.column(|r| r.p_norm))?,
            alpha: Scaler::fit(&ds.column(|r| r.alpha))?,
        })
    }

    pub fn input(&self, n: usize, p_norm: T) -> [T; 2] {
        [self.n.normalize(T::of_usize(n)), self.p_norm.normalize(p_norm)]
    }

    /// Scaled `(inputs, targets)` for every row.
    pub fn encode(&self, ds: &Dataset<T>) -> (Vec<[T; 2]>, Vec<T>) {
        ds.rows
            .iter()
            .map(|r| (self.input(r.n, r.p_norm), self.alpha.normalize(r.alpha)))
            .unzip()
    }
}

/// Seeded shuffle, then the first `floor(ratio · len)` rows train.
pub fn split_dataset<T: Scalar>(ds: &Dataset<T>, ratio: f64, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    if ds.is_empty() {
        return Err(Error::InvalidParams("cannot split an empty dataset".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidParams(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut seed::labeled_rng(seed, "split"));
    let cut = (ratio * ds.len() as f64).floor() as usize;
    let pick = |ids: &[usize]| Dataset {
        rows: ids.iter().map(|&i| ds.rows[i]).collect(),
        seed: ds.seed,
    };
    Ok((pick(&idx[..cut]), pick(&idx[cut..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Scalar>(&self, z: T) -> T {
        match self {
            Activation::Relu if z > T::zero() || z.is_nan() => z,
            Activation::Relu => T::zero(),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative<T: Scalar>(&self, z: T) -> T {
        match self {
            Activation::Relu if z > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

/// Dense layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            biases: vec![T::zero(); outputs],
        }
    }

    fn affine(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + self.biases[o]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub layers: Vec<Layer<T>>,
    pub hidden: Activation,
    pub output: Activation,
    pub scalers: Option<Scalers<T>>,
}

impl<T: Scalar> MlpModel<T> {
    /// `[2, 2, 4, 1]` with seeded uniform weights in `±1/sqrt(fan_in)`.
    pub fn init(seed: u64) -> Self {
        Self::with_sizes(&LAYERS, seed).expect("default sizes are valid")
    }

    pub fn with_sizes(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(sizes)?;
        let mut rng = seed::labeled_rng(seed, "mlp-init");
        for layer in &mut m.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::of(rng.gen_range(-bound..=bound));
            }
        }
        Ok(m)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidParams(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            hidden: Activation::Relu,
            output: Activation::Identity,
            scalers: None,
        })
    }

    pub fn with_scalers(mut self, scalers: Scalers<T>) -> Self {
        self.scalers = Some(scalers);
        self
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *p = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return Err(Error::ModelCorrupt(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    w[0].outputs,
                    i + 1,
                    w[1].inputs
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::ModelCorrupt(format!("layer {i} has the wrong parameter count")));
            }
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::ModelCorrupt("non-finite parameter".into()));
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Scaled-domain forward pass.
    pub fn forward(&self, input: &[T]) -> Result<T> {
        if input.len() != self.layers[0].inputs {
            return Err(Error::Shape {
                expected: self.layers[0].inputs,
                got: input.len(),
            });
        }
        let mut a = input.to_vec();
        let mut z = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.affine(&a, &mut z);
            let act = self.activation(i);
            a.clear();
            a.extend(z.iter().map(|&v| act.apply(v)));
        }
        let y = a[0];
        if !y.is_finite() {
            return Err(Error::ModelCorrupt("forward pass produced a non-finite value".into()));
        }
        Ok(y)
    }

    /// Offset in radians for `n` TCLs and a target `P_norm` in percent,
    /// clamped to `[0, 2π/n]`.
    pub fn predict_alpha(&self, n: usize, p_norm: T) -> Result<T> {
        if n == 0 {
            return Err(Error::InvalidParams("n must be positive".into()));
        }
        let s = self
            .scalers
            .ok_or_else(|| Error::ModelCorrupt("model carries no scalers".into()))?;
        let y = self.forward(&s.input(n, p_norm))?;
        let max_alpha = T::TAU() / T::of_usize(n);
        Ok(s.alpha.denormalize(y).max(T::zero()).min(max_alpha))
    }

    /// Mean squared error over the batch and its gradient, laid out like [`Self::params`].
    pub fn loss_and_gradient(&self, inputs: &[[T; 2]], targets: &[T]) -> Result<(T, Vec<T>)> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::InvalidParams("empty batch".into()));
        }
        let depth = self.layers.len();
        let mut grads: Vec<Layer<T>> = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        let mut acts: Vec<Vec<T>> = vec![Vec::new(); depth + 1];
        let mut pre: Vec<Vec<T>> = vec![Vec::new(); depth];
        let mut loss = T::zero();
        let scale = T::two() / T::of_usize(inputs.len());

        for (x, &y) in inputs.iter().zip(targets) {
            acts[0].clear();
            acts[0].extend_from_slice(x);
            for i in 0..depth {
                let (lo, hi) = acts.split_at_mut(i + 1);
                self.layers[i].affine(&lo[i], &mut pre[i]);
                let act = self.activation(i);
                hi[0].clear();
                hi[0].extend(pre[i].iter().map(|&v| act.apply(v)));
            }
            let err = acts[depth][0] - y;
            loss = loss + err * err;

            let mut delta: Vec<T> = vec![err * scale * self.activation(depth - 1).derivative(pre[depth - 1][0])];
            for i in (0..depth).rev() {
                let l = &self.layers[i];
                let g = &mut grads[i];
                for o in 0..l.outputs {
                    g.biases[o] = g.biases[o] + delta[o];
                    for k in 0..l.inputs {
                        let w = &mut g.weights[o * l.inputs + k];
                        *w = *w + delta[o] * acts[i][k];
                    }
                }
                if i > 0 {
                    let act = self.activation(i - 1);
                    delta = (0..l.inputs)
                        .map(|k| {
                            let back: T = (0..l.outputs).map(|o| l.weights[o * l.inputs + k] * delta[o]).sum();
                            back * act.derivative(pre[i - 1][k])
                        })
                        .collect();
                }
            }
        }
        let grad = grads
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect();
        Ok((loss / T::of_usize(inputs.len()), grad))
    }

    /// Versioned plain-text form: header, sizes, activations, then row-major
    /// weights and biases per layer, then scaler bounds.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[T]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let sizes = self.sizes().iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        writeln!(out, "{FORMAT_HEADER}").unwrap();
        writeln!(out, "layers {sizes}").unwrap();
        writeln!(out, "activations {} {}", self.hidden.tag(), self.output.tag()).unwrap();
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(out, "weights {i} {}", join(&l.weights)).unwrap();
            writeln!(out, "biases {i} {}", join(&l.biases)).unwrap();
        }
        if let Some(s) = &self.scalers {
            for (name, sc) in [("n", s.n), ("p_norm", s.p_norm), ("alpha", s.alpha)] {
                writeln!(out, "scaler {name} {} {}", sc.min, sc.max).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::ModelCorrupt(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());

        match lines.next() {
            Some((_, FORMAT_HEADER)) => {}
            Some((no, other)) => return Err(bad(no, &format!("unknown header {other:?}"))),
            None => return Err(Error::ModelCorrupt("empty model file".into())),
        }
        let mut model: Option<Self> = None;
        let mut scalers: [Option<Scaler<T>>; 3] = [None; 3];
        let mut seen = Vec::new();

        for (no, line) in lines {
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            let nums = |items: &[&str]| -> Result<Vec<T>> {
                items
                    .iter()
                    .map(|s| s.parse::<f64>().map(T::of).map_err(|_| bad(no, &format!("bad number {s:?}"))))
                    .collect()
            };
            match key {
                "layers" => {
                    let sizes = rest
                        .iter()
                        .map(|s| s.parse::<usize>().map_err(|_| bad(no, "bad layer size")))
                        .collect::<Result<Vec<_>>>()?;
                    model = Some(Self::zeros(&sizes).map_err(|e| bad(no, &e.to_string()))?);
                }
                "activations" => {
                    let m = model.as_mut().ok_or_else(|| bad(no, "activations before layers"))?;
                    let [h, o] = rest[..] else {
                        return Err(bad(no, "expected two activation tags"));
                    };
                    m.hidden = Activation::from_tag(h).ok_or_else(|| bad(no, "unknown activation"))?;
                    m.output = Activation::from_tag(o).ok_or_else(|| bad(no, "unknown activation"))?;
                }
                "weights" | "biases" => {
                    let m = model.as_mut().ok_or_else(|| bad(no, "parameters before layers"))?;
                    let idx: usize = rest
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(no, "missing layer index"))?;
                    let layer = m.layers.get_mut(idx).ok_or_else(|| bad(no, "layer index out of range"))?;
                    let values = nums(&rest[1..])?;
                    let slot = if key == "weights" { &mut layer.weights } else { &mut layer.biases };
                    if values.len() != slot.len() {
                        return Err(bad(no, &format!("expected {} values, got {}", slot.len(), values.len())));
                    }
                    *slot = values;
                    seen.push((key, idx));
                }
                "scaler" => {
                    let slot = match rest.first() {
                        Some(&"n") => 0,
                        Some(&"p_norm") => 1,
                        Some(&"alpha") => 2,
                        _ => return Err(bad(no, "unknown scaler")),
                    };
                    let v = nums(&rest[1..])?;
                    if v.len() != 2 {
                        return Err(bad(no, "scaler needs min and max"));
                    }
                    scalers[slot] = Some(Scaler::new(v[0], v[1]).map_err(|e| bad(no, &e.to_string()))?);
                }
                other => return Err(bad(no, &format!("unknown record {other:?}"))),
            }
        }

        let mut model = model.ok_or_else(|| Error::ModelCorrupt("missing layers record".into()))?;
        for i in 0..model.layers.len() {
            for key in ["weights", "biases"] {
                if !seen.contains(&(key, i)) {
                    return Err(Error::ModelCorrupt(format!("missing {key} for layer {i}")));
                }
            }
        }
        model.scalers = match scalers {
            [Some(n), Some(p_norm), Some(alpha)] => Some(Scalers { n, p_norm, alpha }),
            [None, None, None] => None,
            _ => return Err(Error::ModelCorrupt("incomplete scaler records".into())),
        };
        model.check()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Share of the training rows held out for early stopping.
    pub validation_fraction: f64,
    /// Independent initializations tried by [`fit`].
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 8,
            learning_rate: 0.05,
            patience: Some(30),
            validation_fraction: 0.1,
            restarts: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats<T> {
    /// Scaled-domain RMSE over the fitted rows.
    pub train_rmse: T,
    pub validation_rmse: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    /// Training RMSE before the first update.
    pub initial_rmse: T,
    pub history: Vec<EpochStats<T>>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Validation RMSE of the kept parameters, or training RMSE without a validation split.
    pub best_score: T,
    pub stopped_early: bool,
    /// Which initialization of [`fit`] produced this run.
    pub restart: usize,
}

impl<T: Scalar> TrainReport<T> {
    /// Share of the total training-loss (MSE) decrease reached after
    /// `epoch` (zero-based); 1 means no later epoch did better.
    pub fn loss_progress_at(&self, epoch: usize) -> T {
        let Some(at) = self.history.get(epoch.min(self.history.len().saturating_sub(1))) else {
            return T::zero();
        };
        let floor = self.history.iter().map(|e| e.train_rmse).fold(T::infinity(), T::min);
        let start = self.initial_rmse * self.initial_rmse;
        let total = start - floor * floor;
        if !(total > T::zero()) {
            return T::one();
        }
        (start - at.train_rmse * at.train_rmse) / total
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError<T: Scalar> {
    #[error(transparent)]
    Invalid(#[from] Error),

    #[error("training diverged in epoch {epoch}")]
    Diverged {
        epoch: usize,
        checkpoint: Box<MlpModel<T>>,
        history: Vec<EpochStats<T>>,
    },
}

fn batch_rmse<T: Scalar>(model: &MlpModel<T>, x: &[[T; 2]], y: &[T]) -> Result<T> {
    let sq = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| model.forward(xi).map(|p| (p - yi) * (p - yi)))
        .sum::<Result<T>>()?;
    Ok((sq / T::of_usize(x.len())).sqrt())
}

/// Mini-batch gradient descent on scaled-domain MSE. The model must carry
/// scalers. Returns the parameters with the best validation RMSE (or the
/// last epoch when no rows are held out).
pub fn train<T: Scalar>(
    mut model: MlpModel<T>,
    train_set: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(MlpModel<T>, TrainReport<T>), TrainError<T>> {
    if train_set.is_empty() {
        return Err(Error::InvalidParams("empty training set".into()).into());
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidParams("batch size and learning rate must be positive".into()).into());
    }
    model.check()?;
    let scalers = model
        .scalers
        .ok_or_else(|| Error::ModelCorrupt("model carries no scalers".into()))?;

    let (fit_set, val_set) = if cfg.validation_fraction > 0.0 && train_set.len() >= 10 {
        split_dataset(train_set, 1.0 - cfg.validation_fraction, seed::derive(cfg.seed, "validation"))?
    } else {
        (train_set.clone(), Dataset { rows: Vec::new(), seed: train_set.seed })
    };
    let (x, y) = scalers.encode(&fit_set);
    let (vx, vy) = scalers.encode(&val_set);
    let lr = T::of(cfg.learning_rate);
    let mut rng = seed::labeled_rng(cfg.seed, "batches");
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut bx = Vec::with_capacity(cfg.batch_size);
    let mut by = Vec::with_capacity(cfg.batch_size);

    let initial_rmse = batch_rmse(&model, &x, &y)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (model.clone(), T::infinity(), 0usize);
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let checkpoint = model.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(chunk.iter().map(|&i| x[i]));
            by.extend(chunk.iter().map(|&i| y[i]));
            let (_, grad) = model.loss_and_gradient(&bx, &by)?;
            let params: Vec<T> = model.params().iter().zip(&grad).map(|(&p, &g)| p - lr * g).collect();
            if params.iter().any(|p| !p.is_finite()) {
                return Err(TrainError::Diverged {
                    epoch,
                    checkpoint: Box::new(checkpoint),
                    history,
                });
            }
            model.set_params(&params)?;
        }
        let train_rmse = match batch_rmse(&model, &x, &y) {
            Ok(v) if v.is_finite() => v,
            _ => {
                return Err(TrainError::Diverged {
                    epoch,
                    checkpoint: Box::new(checkpoint),
                    history,
                })
            }
        };
        let validation_rmse = if vx.is_empty() { None } else { Some(batch_rmse(&model, &vx, &vy)?) };
        history.push(EpochStats {
            train_rmse,
            validation_rmse,
        });
        let score = validation_rmse.unwrap_or(train_rmse);
        if score < best.1 {
            best = (model.clone(), score, epoch);
        }
        if let Some(p) = cfg.patience {
            if validation_rmse.is_some() && epoch - best.2 >= p {
                stopped_early = true;
                break;
            }
        }
    }
    let (kept, best_epoch, best_score) = if vx.is_empty() {
        let last = history.len() - 1;
        let score = history[last].train_rmse;
        (model, last, score)
    } else {
        (best.0, best.2, best.1)
    };
    Ok((
        kept,
        TrainReport {
            initial_rmse,
            history,
            best_epoch,
            best_score,
            stopped_early,
            restart: 0,
        },
    ))
}

/// Train `cfg.restarts` freshly initialized `[2, 2, 4, 1]` models and keep
/// the one with the lowest validation RMSE. With zero biases and inputs in
/// `[0, 1]`, a hidden unit whose weights all start negative never activates,
/// and the two-unit first layer makes that likely enough to matter.
pub fn fit<T: Scalar>(
    scalers: Scalers<T>,
    train_set: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(MlpModel<T>, TrainReport<T>), TrainError<T>> {
    let mut best: Option<(MlpModel<T>, TrainReport<T>)> = None;
    for k in 0..cfg.restarts.max(1) {
        let init = MlpModel::init(seed::derive(cfg.seed, &format!("restart/{k}"))).with_scalers(scalers);
        let run_cfg = TrainConfig {
            seed: seed::derive(cfg.seed, &format!("restart/{k}/batches")),
            ..*cfg
        };
        let (model, mut report) = train(init, train_set, &run_cfg)?;
        report.restart = k;
        if best.as_ref().map_or(true, |(_, r)| report.best_score < r.best_score) {
            best = Some((model, report));
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation<T> {
    /// Scaled-domain RMSE, percent.
    pub rmse_pct: T,
    /// Scaled-domain MSE, percent.
    pub mse_pct: T,
    /// Mean absolute error of the clamped physical offset, degrees.
    pub mae_deg: T,
    /// Physical-domain RMSE, radians.
    pub rmse_rad: T,
}

pub fn evaluate<T: Scalar>(model: &MlpModel<T>, test_set: &Dataset<T>) -> Result<Evaluation<T>> {
    if test_set.is_empty() {
        return Err(Error::InvalidParams("empty test set".into()));
    }
    let scalers = model
        .scalers
        .ok_or_else(|| Error::ModelCorrupt("model carries no scalers".into()))?;
    let (x, y) = scalers.encode(test_set);
    let mut sq = T::zero();
    let mut abs = T::zero();
    let mut sq_rad = T::zero();
    for ((xi, &yi), row) in x.iter().zip(&y).zip(&test_set.rows) {
        let p = model.forward(xi)?;
        sq = sq + (p - yi) * (p - yi);
        let alpha = model.predict_alpha(row.n, row.p_norm)?;
        abs = abs + (alpha - row.alpha).abs();
        sq_rad = sq_rad + (alpha - row.alpha) * (alpha - row.alpha);
    }
    let count = T::of_usize(x.len());
    let mse = sq / count;
    Ok(Evaluation {
        rmse_pct: mse.sqrt() * T::of(100.0),
        mse_pct: mse * T::of(100.0),
        mae_deg: (abs / count).to_degrees(),
        rmse_rad: (sq_rad / count).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(len: usize) -> Dataset<f64> {
        let rows = (0..len)
            .map(|i| {
                let n = 10 + i % 7;
                let frac = (i % 5) as f64 / 4.0;
                DatasetRow {
                    n,
                    p_norm: 60.0 * frac,
                    alpha: std::f64::consts::TAU / n as f64 * frac,
                }
            })
            .collect();
        Dataset::new(rows, 1).unwrap()
    }

    #[test]
    fn scaler_endpoints_and_round_trip() {
        let (v, s) = minmax_normalize(&[2.0f64, 6.0, 4.0], None).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.5]);
        assert_eq!(minmax_denormalize(&s, 0.0), 2.0);
        assert_eq!(minmax_denormalize(&s, 1.0), 6.0);
        for x in [2.0, 3.7, 5.123456789, 6.0] {
            let back = s.denormalize(s.normalize(x));
            assert!((back - x).abs() <= 1e-12 * x.abs());
        }
        assert_eq!(Scaler::fit(&[3.0, 3.0]), Err(Error::DegenerateScaler(3.0)));
        let (reused, same) = minmax_normalize(&[4.0], Some(&s)).unwrap();
        assert_eq!((reused, same), (vec![0.5], s));
    }

    #[test]
    fn split_is_exact_and_seeded() {
        let ds = toy_dataset(10);
        let (a, b) = split_dataset(&ds, 0.7, 3).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a2, b2) = split_dataset(&ds, 0.7, 3).unwrap();
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn parameter_count_and_chain() {
        let m = MlpModel::<f64>::init(5);
        assert_eq!(m.param_count(), 23);
        assert_eq!(m.sizes(), LAYERS.to_vec());
        m.check().unwrap();
        assert_eq!(m, MlpModel::init(5));
        assert_ne!(m, MlpModel::init(6));
        for l in &m.layers {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn forward_hand_values() {
        let mut m = MlpModel::<f64>::zeros(&LAYERS).unwrap();
        assert_eq!(m.forward(&[0.3, 0.9]).unwrap(), 0.0);
        m.set_params(&[1.0; 23]).unwrap();
        for l in &mut m.layers {
            l.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        assert_eq!(m.forward(&[0.5, 0.5]).unwrap(), 8.0);
        m.layers[0].weights[0] = f64::NAN;
        assert!(matches!(m.forward(&[0.5, 0.5]), Err(Error::ModelCorrupt(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seed::rng(11);
        for trial in 0..5 {
            let mut m = MlpModel::<f64>::init(100 + trial);
            let biases: Vec<f64> = (0..7).map(|_| rng.gen_range(-0.5..0.5)).collect();
            for (b, v) in m.layers.iter_mut().flat_map(|l| l.biases.iter_mut()).zip(biases) {
                *b = v;
            }
            let x: Vec<[f64; 2]> = (0..16).map(|_| [rng.gen(), rng.gen()]).collect();
            let y: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
            let (_, grad) = m.loss_and_gradient(&x, &y).unwrap();
            let base = m.params();
            let h = 1e-6;
            for k in 0..base.len() {
                let mut probe = m.clone();
                let mut p = base.clone();
                p[k] += h;
                probe.set_params(&p).unwrap();
                let up = probe.loss_and_gradient(&x, &y).unwrap().0;
                p[k] -= 2.0 * h;
                probe.set_params(&p).unwrap();
                let down = probe.loss_and_gradient(&x, &y).unwrap().0;
                let fd = (up - down) / (2.0 * h);
                let scale = fd.abs().max(grad[k].abs()).max(1e-3);
                assert!((fd - grad[k]).abs() / scale < 1e-5, "param {k}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn memorizes_a_single_point() {
        let ds = Dataset::<f64>::new(
            vec![
                DatasetRow { n: 10, p_norm: 0.0, alpha: 0.0 },
                DatasetRow { n: 20, p_norm: 50.0, alpha: 0.2 },
            ],
            0,
        )
        .unwrap();
        let scalers = Scalers::fit(&ds).unwrap();
        let single = Dataset::new(vec![ds.rows[1]], 0).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            batch_size: 1,
            learning_rate: 0.05,
            patience: None,
            validation_fraction: 0.0,
            restarts: 1,
            seed: 1,
        };
        let (m, report) = train(MlpModel::init(4).with_scalers(scalers), &single, &cfg).unwrap();
        assert!(report.history.last().unwrap().train_rmse.powi(2) < 1e-6);
        assert!((m.predict_alpha(20, 50.0).unwrap() - 0.2).abs() < 1e-3);
    }

    #[test]
    fn evaluation_formulas() {
        let ds = toy_dataset(40);
        let scalers = Scalers::fit(&ds).unwrap();
        let mut m = MlpModel::zeros(&LAYERS).unwrap().with_scalers(scalers);
        // output = bias of the last layer, a constant scaled prediction
        m.layers[2].biases[0] = 0.25;
        let ev = evaluate(&m, &ds).unwrap();
        let (_, y) = scalers.encode(&ds);
        let mse: f64 = y.iter().map(|t| (0.25 - t).powi(2)).sum::<f64>() / y.len() as f64;
        assert!((ev.mse_pct - 100.0 * mse).abs() < 1e-12);
        assert!((ev.rmse_pct - 100.0 * mse.sqrt()).abs() < 1e-12);

        let constant = Dataset::new(vec![DatasetRow { n: 10, p_norm: 30.0, alpha: 0.1 }; 4], 0).unwrap();
        let shifted = Scalers { alpha: Scaler::new(0.0, 1.0).unwrap(), ..scalers };
        let mut c = MlpModel::zeros(&LAYERS).unwrap().with_scalers(shifted);
        c.layers[2].biases[0] = 0.1 + 0.02;
        let ev = evaluate(&c, &constant).unwrap();
        assert!((ev.rmse_pct - 2.0).abs() < 1e-9);
        assert!((ev.mse_pct - 100.0 * 0.0004).abs() < 1e-9);
        c.layers[2].biases[0] = 0.1;
        let ev = evaluate(&c, &constant).unwrap();
        assert!(ev.rmse_pct.abs() < 1e-12 && ev.mae_deg.abs() < 1e-12);
    }

    #[test]
    fn prediction_is_clamped() {
        let ds = toy_dataset(40);
        let mut m = MlpModel::zeros(&LAYERS).unwrap().with_scalers(Scalers::fit(&ds).unwrap());
        m.layers[2].biases[0] = 50.0;
        assert_eq!(m.predict_alpha(100, 20.0).unwrap(), std::f64::consts::TAU / 100.0);
        m.layers[2].biases[0] = -50.0;
        assert_eq!(m.predict_alpha(100, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn text_round_trip() {
        let ds = toy_dataset(40);
        let m = MlpModel::<f64>::init(9).with_scalers(Scalers::fit(&ds).unwrap());
        let text = m.to_text();
        assert!(text.starts_with("tclswarm-mlp v1\nlayers 2 2 4 1\nactivations relu identity\n"));
        assert_eq!(MlpModel::from_text(&text).unwrap(), m);
        assert!(MlpModel::<f64>::from_text("tclswarm-mlp v1\nlayers 2 2 4 1\n").is_err());
        assert!(MlpModel::<f64>::from_text(&text.replace("v1", "v9")).is_err());
        assert!(MlpModel::<f64>::from_text(&text.replacen("weights 0 ", "weights 0 1 ", 1)).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy_dataset(200);
        let scalers = Scalers::fit(&ds).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = train(MlpModel::init(2).with_scalers(scalers), &ds, &cfg).unwrap();
        let b = train(MlpModel::init(2).with_scalers(scalers), &ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restarts_keep_the_best_validation_score() {
        let ds = toy_dataset(300);
        let scalers = Scalers::fit(&ds).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            restarts: 3,
            ..TrainConfig::default()
        };
        let (model, report) = fit(scalers, &ds, &cfg).unwrap();
        let single = TrainConfig { restarts: 1, ..cfg };
        let (_, first) = fit(scalers, &ds, &single).unwrap();
        assert!(report.best_score <= first.best_score);
        assert!(report.restart < 3);
        assert_eq!(model.scalers, Some(scalers));
        let p = report.loss_progress_at(report.history.len() - 1);
        assert!(p > 0.0 && p <= 1.0);
        assert_eq!(report.loss_progress_at(report.best_epoch.min(report.history.len() - 1)) <= 1.0, true);
    }

    #[test]
    fn smoothed_training_loss_does_not_rise() {
        let ds = toy_dataset(400);
        let scalers = Scalers::fit(&ds).unwrap();
        let cfg = TrainConfig {
            patience: None,
            epochs: 60,
            ..TrainConfig::default()
        };
        let (_, report) = train(MlpModel::init(5).with_scalers(scalers), &ds, &cfg).unwrap();
        let loss: Vec<f64> = report.history.iter().map(|e| e.train_rmse * e.train_rmse).collect();
        let avg: Vec<f64> = loss.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        for (k, w) in avg.windows(2).enumerate() {
            assert!(w[1] <= w[0], "moving average rose after epoch {}: {} -> {}", k + 5, w[0], w[1]);
        }
    }

    #[test]
    fn divergence_returns_checkpoint() {
        let ds = toy_dataset(200);
        let scalers = Scalers::fit(&ds).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e6,
            ..TrainConfig::default()
        };
        match train(MlpModel::init(2).with_scalers(scalers), &ds, &cfg) {
            Err(TrainError::Diverged { checkpoint, .. }) => checkpoint.check().unwrap(),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn small_dataset_generation() {
        let spec = DatasetSpec::<f64> {
            n_min: 10,
            n_max: 12,
            grid_size: 5,
            ..DatasetSpec::default()
        };
        let ds = generate_dataset(&spec, 3).unwrap();
        assert_eq!(ds.len(), spec.expected_rows());
        assert_eq!(ds.len(), 15);
        for r in &ds.rows {
            assert!(r.alpha >= 0.0 && r.alpha <= std::f64::consts::TAU / r.n as f64 + 1e-12);
            if r.alpha == 0.0 {
                assert!(r.p_norm.abs() < 1e-9);
            }
        }
        assert_eq!(ds, generate_dataset(&spec, 3).unwrap());
        assert_eq!(DatasetSpec::<f64>::default().expected_rows(), 49_100);
    }
}
