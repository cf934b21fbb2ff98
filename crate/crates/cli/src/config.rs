//! Experiment configuration files.
//!
//! Line-oriented `key = value` text with `[section]` headers and `#`
//! comments. Keys before the first header belong to the top level. Ranges
//! are written as one number (fixed) or two (`min max`). Unknown sections
//! and keys are errors, reported with their line number.
//!
//! ```text
//! seed = 7
//!
//! [population]
//! preset = het100          # het100 | case1 | case2 | exact4
//! n = 100
//! power_kw = 14
//! frequency_hz = 0.25745 0.28455
//!
//! [run]
//! duration_s = 180
//! dt_s = 0.01
//! regime = 0 random
//! regime = 60 consensus
//! regime = 120 desynchronized 0.0628
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use tclswarm_core::delay::SteadyState;
use tclswarm_core::ensemble::{Bounds, PopulationConfig, Protocol, Regime, ScheduleEntry};
use tclswarm_core::learned::{DatasetSpec, TrainConfig};

use crate::error::{CliError, Result};

const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["seed"]),
    (
        "population",
        &[
            "preset",
            "n",
            "power_kw",
            "duty",
            "frequency_hz",
            "deadband_c",
            "set_point_c",
            "ambient_c",
            "eta",
        ],
    ),
    ("protocol", &["kind", "weight", "step_s", "coupling"]),
    ("run", &["duration_s", "dt_s", "regime", "record_frequency"]),
    ("sweep", &["grid", "settle_periods", "measure_periods", "samples_per_period"]),
    ("metrics", &["p_base_kw"]),
    (
        "dataset",
        &[
            "n_min",
            "n_max",
            "n_stride",
            "grid",
            "power_kw",
            "duty",
            "frequency_hz",
            "deadband_c",
            "set_point_c",
            "ambient_c",
            "settle_periods",
            "measure_periods",
            "samples_per_period",
        ],
    ),
    (
        "train",
        &[
            "split",
            "epochs",
            "batch_size",
            "learning_rate",
            "patience",
            "validation_fraction",
            "restarts",
        ],
    ),
];

const REPEATABLE: &[(&str, &str)] = &[("run", "regime")];

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

/// Parsed but untyped file.
struct Raw {
    path: String,
    entries: BTreeMap<(String, String), Vec<Entry>>,
}

impl Raw {
    fn parse(text: &str, path: &str) -> Result<Self> {
        let mut raw = Raw {
            path: path.to_string(),
            entries: BTreeMap::new(),
        };
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| raw.err(no, "unterminated section header"))?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) || name.is_empty() {
                    return Err(raw.err(no, &format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| raw.err(no, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            let keys = SCHEMA.iter().find(|(s, _)| *s == section).expect("section checked").1;
            if !keys.contains(&key) {
                let place = if section.is_empty() { "top level".to_string() } else { format!("[{section}]") };
                return Err(raw.err(no, &format!("unknown key `{key}` in {place}")));
            }
            if value.is_empty() {
                return Err(raw.err(no, &format!("`{key}` has no value")));
            }
            let slot = raw.entries.entry((section.clone(), key.to_string())).or_default();
            if !slot.is_empty() && !REPEATABLE.contains(&(section.as_str(), key)) {
                let first = slot[0].line;
                return Err(raw.err(no, &format!("`{key}` repeated (first set on line {first})")));
            }
            slot.push(Entry {
                line: no,
                value: value.to_string(),
            });
        }
        Ok(raw)
    }

    fn err(&self, line: usize, msg: &str) -> CliError {
        CliError::ConfigLine {
            path: self.path.clone(),
            line,
            msg: msg.to_string(),
        }
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string())).and_then(|v| v.first())
    }

    fn all(&self, section: &str, key: &str) -> &[Entry] {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn parse_with<V>(&self, section: &str, key: &str, f: impl Fn(&str) -> Option<V>, what: &str) -> Result<Option<V>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .ok_or_else(|| self.err(e.line, &format!("`{key}` must be {what}, got {:?}", e.value))),
        }
    }

    fn f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.parse_with(section, key, |s| s.parse::<f64>().ok().filter(|v| v.is_finite()), "a number")
    }

    fn usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.parse_with(section, key, |s| s.parse().ok(), "a non-negative integer")
    }

    fn u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        self.parse_with(section, key, |s| s.parse().ok(), "a non-negative integer")
    }

    fn bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        self.parse_with(section, key, |s| s.parse().ok(), "true or false")
    }

    fn range(&self, section: &str, key: &str) -> Result<Option<Bounds<f64>>> {
        self.parse_with(
            section,
            key,
            |s| {
                let v: Vec<f64> = s.split_whitespace().map(|w| w.parse().ok()).collect::<Option<_>>()?;
                match v[..] {
                    [x] if x.is_finite() => Some(Bounds::fixed(x)),
                    [a, b] if a.is_finite() && b.is_finite() && a <= b => Some(Bounds::new(a, b)),
                    _ => None,
                }
            },
            "one number or `min max`",
        )
    }
}

fn set<V>(slot: &mut V, value: Option<V>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Settings of a delay-table sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub grid: usize,
    pub steady: SteadyState<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            grid: 100,
            steady: SteadyState::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: String,
    pub population: PopulationConfig<f64>,
    /// Seconds; `None` runs 30 nominal periods.
    pub duration: Option<f64>,
    /// Seconds; `None` takes 200 steps per nominal period.
    pub dt: Option<f64>,
    pub record_frequency: bool,
    pub sweep: SweepSettings,
    /// kW normalizer of the tracking error; `None` uses the population capacity.
    pub p_base: Option<f64>,
    pub dataset: DatasetSpec<f64>,
    pub split: f64,
    pub train: TrainConfig,
}

pub fn preset(name: &str) -> Option<PopulationConfig<f64>> {
    match name {
        "het100" => Some(PopulationConfig::heterogeneous_100()),
        "case1" => Some(PopulationConfig::case_study_1()),
        "case2" => Some(PopulationConfig::case_study_2()),
        "exact4" => Some(PopulationConfig::homogeneous(4, 14.0, 0.5, 0.5)),
        _ => None,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: "het100".into(),
            population: PopulationConfig::heterogeneous_100(),
            duration: None,
            dt: None,
            record_frequency: true,
            sweep: SweepSettings::default(),
            p_base: None,
            dataset: DatasetSpec::default(),
            split: 0.7,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let raw = Raw::parse(text, path)?;
        let mut c = RunConfig::default();
        set(&mut c.seed, raw.u64("", "seed")?);

        if let Some(e) = raw.get("population", "preset") {
            c.population = preset(&e.value).ok_or_else(|| raw.err(e.line, &format!("unknown preset {:?}", e.value)))?;
            c.preset = e.value.clone();
        }
        let p = &mut c.population;
        set(&mut p.n, raw.usize("population", "n")?);
        set(&mut p.power, raw.range("population", "power_kw")?);
        set(&mut p.duty, raw.range("population", "duty")?);
        set(&mut p.frequency, raw.range("population", "frequency_hz")?);
        set(&mut p.deadband, raw.f64("population", "deadband_c")?);
        set(&mut p.set_point, raw.f64("population", "set_point_c")?);
        set(&mut p.ambient, raw.f64("population", "ambient_c")?);
        set(&mut p.eta, raw.f64("population", "eta")?);

        let kind = raw.get("protocol", "kind");
        let weight = raw.f64("protocol", "weight")?;
        let step = raw.f64("protocol", "step_s")?;
        let coupling = raw.f64("protocol", "coupling")?;
        p.protocol = match kind.map(|e| e.value.as_str()) {
            None | Some("averaging") => {
                let (w0, h0) = match p.protocol {
                    Protocol::DistributedAveraging { weight, step } => (weight, step),
                    _ => (0.06, None),
                };
                Protocol::DistributedAveraging {
                    weight: weight.unwrap_or(w0),
                    step: step.or(h0),
                }
            }
            Some("kuramoto") => Protocol::Kuramoto {
                coupling: coupling.unwrap_or(0.0),
            },
            Some("none") => Protocol::Uncoordinated,
            Some(other) => {
                let e = kind.expect("matched Some");
                return Err(raw.err(e.line, &format!("unknown protocol {other:?} (averaging | kuramoto | none)")));
            }
        };

        c.duration = raw.f64("run", "duration_s")?;
        c.dt = raw.f64("run", "dt_s")?;
        set(&mut c.record_frequency, raw.bool("run", "record_frequency")?);
        for e in raw.all("run", "regime") {
            let words: Vec<&str> = e.value.split_whitespace().collect();
            let bad = || raw.err(e.line, "regime must be `<start_s> <random|consensus|desynchronized> [spacing_rad]`");
            let (start, tag, spacing) = match words[..] {
                [s, t] => (s, t, None),
                [s, t, a] => (s, t, Some(a.parse::<f64>().map_err(|_| bad())?)),
                _ => return Err(bad()),
            };
            c.population.schedule.push(ScheduleEntry {
                start: start.parse().map_err(|_| bad())?,
                regime: Regime::from_tag(tag).ok_or_else(bad)?,
                spacing,
            });
        }

        set(&mut c.sweep.grid, raw.usize("sweep", "grid")?);
        set(&mut c.sweep.steady.settle_periods, raw.f64("sweep", "settle_periods")?);
        set(&mut c.sweep.steady.measure_periods, raw.f64("sweep", "measure_periods")?);
        set(&mut c.sweep.steady.samples_per_period, raw.usize("sweep", "samples_per_period")?);
        c.p_base = raw.f64("metrics", "p_base_kw")?;

        let d = &mut c.dataset;
        set(&mut d.n_min, raw.usize("dataset", "n_min")?);
        set(&mut d.n_max, raw.usize("dataset", "n_max")?);
        set(&mut d.n_stride, raw.usize("dataset", "n_stride")?);
        set(&mut d.grid_size, raw.usize("dataset", "grid")?);
        set(&mut d.power, raw.range("dataset", "power_kw")?);
        set(&mut d.duty, raw.range("dataset", "duty")?);
        set(&mut d.frequency, raw.range("dataset", "frequency_hz")?);
        set(&mut d.deadband, raw.f64("dataset", "deadband_c")?);
        set(&mut d.set_point, raw.f64("dataset", "set_point_c")?);
        set(&mut d.ambient, raw.f64("dataset", "ambient_c")?);
        set(&mut d.steady.settle_periods, raw.f64("dataset", "settle_periods")?);
        set(&mut d.steady.measure_periods, raw.f64("dataset", "measure_periods")?);
        set(&mut d.steady.samples_per_period, raw.usize("dataset", "samples_per_period")?);

        set(&mut c.split, raw.f64("train", "split")?);
        let t = &mut c.train;
        set(&mut t.epochs, raw.usize("train", "epochs")?);
        set(&mut t.batch_size, raw.usize("train", "batch_size")?);
        set(&mut t.learning_rate, raw.f64("train", "learning_rate")?);
        if let Some(p) = raw.usize("train", "patience")? {
            t.patience = (p > 0).then_some(p);
        }
        set(&mut t.validation_fraction, raw.f64("train", "validation_fraction")?);
        set(&mut t.restarts, raw.usize("train", "restarts")?);

        c.population.seed = c.seed;
        c.population
            .validate()
            .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
        if !(0.0..=1.0).contains(&c.split) {
            return Err(CliError::Config(format!("{path}: split {} outside [0, 1]", c.split)));
        }
        Ok(c)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.population.seed = seed;
        self
    }

    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or_else(|| 30.0 * self.population.nominal_period())
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| self.population.nominal_period() / 200.0)
    }

    /// Canonical text form; parses back to an equal configuration.
    pub fn to_text(&self) -> String {
        let range = |b: &Bounds<f64>| {
            if b.min == b.max {
                format!("{}", b.min)
            } else {
                format!("{} {}", b.min, b.max)
            }
        };
        let mut s = String::new();
        let p = &self.population;
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "\n[population]").unwrap();
        writeln!(s, "preset = {}", self.preset).unwrap();
        writeln!(s, "n = {}", p.n).unwrap();
        writeln!(s, "power_kw = {}", range(&p.power)).unwrap();
        writeln!(s, "duty = {}", range(&p.duty)).unwrap();
        writeln!(s, "frequency_hz = {}", range(&p.frequency)).unwrap();
        writeln!(s, "deadband_c = {}", p.deadband).unwrap();
        writeln!(s, "set_point_c = {}", p.set_point).unwrap();
        writeln!(s, "ambient_c = {}", p.ambient).unwrap();
        writeln!(s, "eta = {}", p.eta).unwrap();
        writeln!(s, "\n[protocol]").unwrap();
        match p.protocol {
            Protocol::DistributedAveraging { weight, step } => {
                writeln!(s, "kind = averaging\nweight = {weight}").unwrap();
                if let Some(h) = step {
                    writeln!(s, "step_s = {h}").unwrap();
                }
            }
            Protocol::Kuramoto { coupling } => writeln!(s, "kind = kuramoto\ncoupling = {coupling}").unwrap(),
            Protocol::Uncoordinated => writeln!(s, "kind = none").unwrap(),
        }
        writeln!(s, "\n[run]").unwrap();
        if let Some(d) = self.duration {
            writeln!(s, "duration_s = {d}").unwrap();
        }
        if let Some(dt) = self.dt {
            writeln!(s, "dt_s = {dt}").unwrap();
        }
        writeln!(s, "record_frequency = {}", self.record_frequency).unwrap();
        for e in &p.schedule {
            match e.spacing {
                Some(a) => writeln!(s, "regime = {} {} {a}", e.start, e.regime.tag()).unwrap(),
                None => writeln!(s, "regime = {} {}", e.start, e.regime.tag()).unwrap(),
            }
        }
        let st = &self.sweep.steady;
        writeln!(s, "\n[sweep]\ngrid = {}", self.sweep.grid).unwrap();
        writeln!(
            s,
            "settle_periods = {}\nmeasure_periods = {}\nsamples_per_period = {}",
            st.settle_periods, st.measure_periods, st.samples_per_period
        )
        .unwrap();
        if let Some(b) = self.p_base {
            writeln!(s, "\n[metrics]\np_base_kw = {b}").unwrap();
        }
        let d = &self.dataset;
        writeln!(s, "\n[dataset]").unwrap();
        writeln!(s, "n_min = {}\nn_max = {}\nn_stride = {}\ngrid = {}", d.n_min, d.n_max, d.n_stride, d.grid_size).unwrap();
        writeln!(s, "power_kw = {}\nduty = {}\nfrequency_hz = {}", range(&d.power), range(&d.duty), range(&d.frequency)).unwrap();
        writeln!(s, "deadband_c = {}\nset_point_c = {}\nambient_c = {}", d.deadband, d.set_point, d.ambient).unwrap();
        writeln!(
            s,
            "settle_periods = {}\nmeasure_periods = {}\nsamples_per_period = {}",
            d.steady.settle_periods, d.steady.measure_periods, d.steady.samples_per_period
        )
        .unwrap();
        let t = &self.train;
        writeln!(s, "\n[train]").unwrap();
        writeln!(s, "split = {}\nepochs = {}\nbatch_size = {}", self.split, t.epochs, t.batch_size).unwrap();
        writeln!(s, "learning_rate = {}\npatience = {}", t.learning_rate, t.patience.unwrap_or(0)).unwrap();
        writeln!(s, "validation_fraction = {}\nrestarts = {}", t.validation_fraction, t.restarts).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_overrides() {
        let c = RunConfig::parse("seed = 3\n[population]\npreset = case1\nn = 50\n", "t").unwrap();
        assert_eq!(c.population.n, 50);
        assert_eq!(c.population.seed, 3);
        assert_eq!(c.population.power, Bounds::fixed(1.66));
        assert_eq!(c.population.set_point, 27.0);
    }

    #[test]
    fn schedule_entries() {
        let c = RunConfig::parse(
            "[run]\nregime = 0 random\nregime = 10 consensus\nregime = 20 desynchronized 0.5 # spaced\n",
            "t",
        )
        .unwrap();
        let s = &c.population.schedule;
        assert_eq!(s.len(), 3);
        assert_eq!(s[2].regime, Regime::Desynchronized);
        assert_eq!(s[2].spacing, Some(0.5));
        assert_eq!(s[1].start, 10.0);
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        let e = RunConfig::parse("seed = 1\n\n[population]\nsize = 4\n", "pop.cfg").unwrap_err();
        assert_eq!(e.to_string(), "pop.cfg:4: unknown key `size` in [population]");
        let e = RunConfig::parse("[nowhere]\n", "x").unwrap_err();
        assert!(e.to_string().starts_with("x:1: unknown section"));
        let e = RunConfig::parse("[population]\nn = many\n", "x").unwrap_err();
        assert!(e.to_string().starts_with("x:2: `n` must be"));
        let e = RunConfig::parse("[population]\nn = 3\nn = 4\n", "x").unwrap_err();
        assert!(e.to_string().contains("repeated"));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = RunConfig::parse(
            "seed = 9\n[population]\npreset = case2\n[protocol]\nweight = 0.01\nstep_s = 0.5\n[run]\ndt_s = 1\nregime = 0 consensus\nregime = 5 desync 0.001\n[train]\npatience = 0\n",
            "t",
        )
        .unwrap();
        let again = RunConfig::parse(&c.to_text(), "snapshot").unwrap();
        assert_eq!(again, c);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text(), "d").unwrap(), RunConfig::default());
    }

    #[test]
    fn invalid_population_is_a_config_error() {
        let e = RunConfig::parse("[population]\nduty = 1.5\n", "x").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
