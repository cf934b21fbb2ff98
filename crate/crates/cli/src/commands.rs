//! Subcommand implementations. Each writes its primary output, a manifest,
//! and a JSON report on stdout; warnings go to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use tclswarm_core::delay::{build_delay_table_with, config_hash, load_follow as run_load_follow, ReferenceSchedule};
use tclswarm_core::ensemble::{simulate as run_simulation, SimResult};
use tclswarm_core::learned::{evaluate, fit, generate_dataset, split_dataset, MlpModel, Scalers, TrainError};
use tclswarm_core::metrics::{dominant_frequency, fluctuation_band, mean, rms_of, ripple_rms, rmse_percent, Series};
use tclswarm_core::seed;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::{self, TimeSeries};
use crate::manifest::{check_writable, manifest_path, RunManifest};
use crate::Common;

fn load_config(common: &Common, required: bool) -> Result<(RunConfig, Option<Vec<u8>>)> {
    let (cfg, bytes) = match &common.config {
        Some(path) => {
            let bytes = fs::read(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
            (RunConfig::parse(&text, &path.display().to_string())?, Some(bytes))
        }
        None if required => return Err(CliError::Config("--config is required".into())),
        None => (RunConfig::default(), None),
    };
    Ok((match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    }, bytes))
}

fn out_path(common: &Common) -> Result<PathBuf> {
    let out = common
        .out
        .clone()
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    check_writable(&[&out, &manifest_path(&out)], common.force)?;
    Ok(out)
}

fn start_manifest(name: &str, common: &Common, cfg: &RunConfig, cfg_bytes: Option<&[u8]>) -> RunManifest {
    let mut m = RunManifest::new(name);
    m.config(cfg.to_text()).seed("master", cfg.seed);
    if let (Some(path), Some(bytes)) = (&common.config, cfg_bytes) {
        m.input(path, bytes);
    }
    m
}

/// Print the report; a closed stdout (e.g. piped into `head`) is not an error.
fn emit(report: &Value) {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn regime_summary(sim: &SimResult<f64>) -> Vec<Value> {
    sim.regimes
        .iter()
        .enumerate()
        .map(|(k, span)| {
            let end = sim.regimes.get(k + 1).map_or(f64::INFINITY, |r| r.start);
            let w = sim.window(span.start, end);
            // the second half of each span is past the switching transient
            let settled = &w[w.len() / 2..];
            if settled.is_empty() {
                return json!({ "regime": span.regime.tag(), "start_s": span.start });
            }
            json!({
                "regime": span.regime.tag(),
                "start_s": span.start,
                "spacing_rad": span.spacing,
                "settled_mean_kw": mean(settled),
                "settled_rms_kw": rms_of(settled),
                "settled_band_pct": 100.0 * fluctuation_band(settled),
                "settled_ripple_rms_kw": ripple_rms(settled),
            })
        })
        .collect()
}

fn time_series(sim: &SimResult<f64>, with_frequency: bool) -> TimeSeries {
    TimeSeries {
        time: sim.time.clone(),
        p_agg: sim.p_agg.clone(),
        f_mean: with_frequency.then(|| sim.f_mean.clone()),
    }
}

pub fn simulate(common: &Common) -> Result<()> {
    let (cfg, bytes) = load_config(common, true)?;
    let out = out_path(common)?;
    let mut manifest = start_manifest("simulate", common, &cfg, bytes.as_deref());
    manifest.seed("population", cfg.population.seed);

    let sim = run_simulation(&cfg.population, cfg.duration(), cfg.dt())?;
    manifest.write_output(&out, &formats::series_csv(&time_series(&sim, cfg.record_frequency))?)?;
    let report = json!({
        "n": cfg.population.n,
        "duration_s": cfg.duration(),
        "dt_s": cfg.dt(),
        "capacity_kw": sim.capacity,
        "expected_mean_kw": sim.expected_mean,
        "mean_kw": mean(&sim.p_agg),
        "clamp_events": sim.clamp_events,
        "comfort_ratio": sim.comfort_ratio,
        "regimes": regime_summary(&sim),
    });
    manifest.report(report.clone()).finish(&out)?;
    emit(&report);
    Ok(())
}

pub fn sweep(common: &Common, grid: Option<usize>) -> Result<()> {
    let (cfg, bytes) = load_config(common, true)?;
    let out = out_path(common)?;
    let mut manifest = start_manifest("sweep", common, &cfg, bytes.as_deref());
    let grid = grid.unwrap_or(cfg.sweep.grid);

    let table = build_delay_table_with(&cfg.population, grid, &cfg.sweep.steady)?;
    manifest.write_output(&out, &formats::table_csv(&table)?)?;
    let (lo, hi) = table.p_norm_range();
    let report = json!({
        "n": table.n,
        "grid": grid,
        "rated_power_kw": table.rated_power,
        "max_alpha_rad": table.max_alpha(),
        "p_norm_min_pct": lo,
        "p_norm_max_pct": hi,
        "config_hash": table.provenance.config_hash,
    });
    manifest.report(report.clone()).finish(&out)?;
    emit(&report);
    Ok(())
}

pub fn load_follow(common: &Common, schedule_path: &Path) -> Result<()> {
    let (cfg, bytes) = load_config(common, true)?;
    let out = out_path(common)?;
    let mut manifest = start_manifest("load-follow", common, &cfg, bytes.as_deref());
    let sched_bytes = formats::read(schedule_path).map_err(|e| CliError::Config(e.to_string()))?;
    manifest.input(schedule_path, &sched_bytes);
    let segments = formats::parse_schedule(&sched_bytes, &schedule_path.display().to_string())?;
    let schedule = ReferenceSchedule::new(segments)?;

    let table = build_delay_table_with(&cfg.population, cfg.sweep.grid, &cfg.sweep.steady)?;
    let last_start = schedule.segments.last().map_or(0.0, |s| s.0);
    let duration = cfg
        .duration
        .unwrap_or(last_start + 10.0 * cfg.population.nominal_period());
    let run = run_load_follow(&cfg.population, &table, &schedule, duration, cfg.dt())?;
    for p in run.plan.iter().filter(|p| p.start >= duration) {
        eprintln!("warning: segment at {} s starts after the run ends at {duration} s", p.start);
    }
    for p in run.plan.iter().filter(|p| p.lookup.clamped) {
        eprintln!(
            "warning: target {}% at {} s is outside the table range; using {}% (alpha = {} rad)",
            p.target, p.start, p.lookup.p_norm, p.lookup.alpha
        );
    }
    manifest.write_output(&out, &formats::series_csv(&time_series(&run.sim, cfg.record_frequency))?)?;

    let baseline = table.rows[0].p_norm;
    let segments: Vec<Value> = run
        .plan
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let end = run.plan.get(k + 1).map_or(duration, |q| q.start);
            let w = run.sim.window(p.start, end);
            let settled = &w[w.len() / 2..];
            json!({
                "start_s": p.start,
                "target_p_norm_pct": p.target,
                "alpha_rad": p.lookup.alpha,
                "table_p_norm_pct": p.lookup.p_norm,
                "clamped": p.lookup.clamped,
                "settled_mean_kw": if settled.is_empty() { Value::Null } else { json!(mean(settled)) },
                "settled_rms_kw": if settled.is_empty() { Value::Null } else { json!(rms_of(settled)) },
            })
        })
        .collect();
    let report = json!({
        "n": cfg.population.n,
        "duration_s": duration,
        "table_baseline_p_norm_pct": baseline,
        "config_hash": config_hash(&cfg.population),
        "segments": segments,
    });
    manifest.report(report.clone()).finish(&out)?;
    emit(&report);
    Ok(())
}

pub fn dataset(common: &Common, fast: bool) -> Result<()> {
    let (mut cfg, bytes) = load_config(common, false)?;
    if fast {
        cfg.dataset.n_stride = 5;
    }
    let out = out_path(common)?;
    let mut manifest = start_manifest("dataset", common, &cfg, bytes.as_deref());
    let data_seed = seed::derive(cfg.seed, "dataset");
    manifest.seed("dataset", data_seed);

    let ds = generate_dataset(&cfg.dataset, data_seed)?;
    manifest.write_output(&out, &formats::dataset_csv(&ds)?)?;
    let report = json!({
        "rows": ds.len(),
        "n_min": cfg.dataset.n_min,
        "n_max": cfg.dataset.n_max,
        "n_stride": cfg.dataset.n_stride,
        "grid": cfg.dataset.grid_size,
    });
    manifest.report(report.clone()).finish(&out)?;
    emit(&report);
    Ok(())
}

pub fn train(common: &Common, data: &Path) -> Result<()> {
    let (cfg, bytes) = load_config(common, false)?;
    let out = out_path(common)?;
    let mut manifest = start_manifest("train", common, &cfg, bytes.as_deref());
    let data_bytes = formats::read(data)?;
    manifest.input(data, &data_bytes);
    let ds = formats::parse_dataset(&data_bytes, &data.display().to_string())?;

    let split_seed = seed::derive(cfg.seed, "split");
    let train_seed = seed::derive(cfg.seed, "train");
    manifest.seed("split", split_seed).seed("train", train_seed);
    let scalers = Scalers::fit(&ds)?;
    let (train_set, test_set) = split_dataset(&ds, cfg.split, split_seed)?;
    let train_cfg = tclswarm_core::learned::TrainConfig {
        seed: train_seed,
        ..cfg.train
    };
    let (model, report) = match fit(scalers, &train_set, &train_cfg) {
        Ok(r) => r,
        Err(TrainError::Invalid(e)) => return Err(e.into()),
        Err(TrainError::Diverged { epoch, checkpoint, .. }) => {
            let mut path = out.clone().into_os_string();
            path.push(".checkpoint");
            let path = PathBuf::from(path);
            fs::write(&path, checkpoint.to_text())
                .map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
            return Err(CliError::Runtime(format!(
                "training diverged in epoch {epoch}; last good parameters saved to {}",
                path.display()
            )));
        }
    };
    let eval = evaluate(&model, &test_set)?;
    manifest.write_output(&out, model.to_text().as_bytes())?;
    let report = json!({
        "rows": ds.len(),
        "train_rows": train_set.len(),
        "test_rows": test_set.len(),
        "epochs_run": report.history.len(),
        "best_epoch": report.best_epoch,
        "restart": report.restart,
        "initial_train_rmse": report.initial_rmse,
        "loss_progress_at_epoch_30": report.loss_progress_at(29),
        "train_rmse_history": report.history.iter().map(|e| e.train_rmse).collect::<Vec<_>>(),
        "test_rmse_pct": eval.rmse_pct,
        "test_mse_pct": eval.mse_pct,
        "test_mae_deg": eval.mae_deg,
        "test_rmse_rad": eval.rmse_rad,
    });
    manifest.report(report.clone()).finish(&out)?;
    emit(&report);
    Ok(())
}

pub fn predict(common: &Common, model_path: &Path, n: usize, pnorm: f64) -> Result<()> {
    let bytes = formats::read(model_path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Runtime("model file is not UTF-8".into()))?;
    let model = MlpModel::<f64>::from_text(&text).map_err(|e| CliError::Runtime(e.to_string()))?;
    if n == 0 {
        return Err(CliError::Config("--n must be positive".into()));
    }
    let alpha = model.predict_alpha(n, pnorm).map_err(|e| CliError::Runtime(e.to_string()))?;
    let report = json!({ "n": n, "p_norm_pct": pnorm, "alpha_rad": alpha });
    if let Some(out) = &common.out {
        check_writable(&[out, &manifest_path(out)], common.force)?;
        let mut manifest = RunManifest::new("predict");
        manifest.input(model_path, text.as_bytes());
        manifest.write_output(out, format!("{}\n", serde_json::to_string_pretty(&report).unwrap()).as_bytes())?;
        manifest.report(report.clone()).finish(out)?;
    }
    emit(&report);
    Ok(())
}

pub fn metrics(
    common: &Common,
    input: &Path,
    from_s: Option<f64>,
    to_s: Option<f64>,
    reference: Option<&Path>,
    p_base: Option<f64>,
) -> Result<()> {
    let (cfg, _) = load_config(common, false)?;
    let bytes = formats::read(input)?;
    let ts = formats::parse_series(&bytes, &input.display().to_string())?;
    let dt = ts.dt()?;
    let from = from_s.unwrap_or(f64::NEG_INFINITY);
    let to = to_s.unwrap_or(f64::INFINITY);
    let (a, b) = (
        ts.time.partition_point(|&t| t < from),
        ts.time.partition_point(|&t| t < to),
    );
    if b <= a {
        return Err(CliError::Config(format!("window [{from}, {to}) s holds no samples")));
    }
    let w = &ts.p_agg[a..b];
    let series = Series::new(dt, w.to_vec())?;
    let m = mean(w);

    let reference_values = match reference {
        Some(path) => {
            let rb = formats::read(path)?;
            let r = formats::parse_series(&rb, &path.display().to_string())?;
            let ra = r.time.partition_point(|&t| t < from);
            let rv = r.p_agg.get(ra..ra + w.len()).ok_or_else(|| {
                CliError::Runtime(format!("reference {} does not cover the window", path.display()))
            })?;
            rv.to_vec()
        }
        None => vec![m; w.len()],
    };
    let reference_series = Series::new(dt, reference_values.clone())?;
    let p_base = p_base.or(cfg.p_base);
    let tracking = match p_base {
        Some(base) => {
            let rmse = rmse_percent(&reference_series, &series, base)?;
            let rel = w
                .iter()
                .zip(&reference_values)
                .map(|(p, r)| (p - r).abs() / r.abs())
                .fold(0.0, f64::max);
            json!({ "p_base_kw": base, "rmse_pct": rmse, "max_relative_error_pct": 100.0 * rel })
        }
        None => Value::Null,
    };
    let report = json!({
        "samples": w.len(),
        "dt_s": dt,
        "mean_kw": m,
        "rms_kw": rms_of(w),
        "ripple_rms_kw": ripple_rms(w),
        "band_pct": 100.0 * fluctuation_band(w),
        "dominant_frequency_hz": dominant_frequency(&series).ok(),
        "tracking": tracking,
    });
    if let Some(out) = &common.out {
        check_writable(&[out, &manifest_path(out)], common.force)?;
        let mut manifest = RunManifest::new("metrics");
        manifest.input(input, &bytes);
        manifest.write_output(out, format!("{}\n", serde_json::to_string_pretty(&report).unwrap()).as_bytes())?;
        manifest.report(report.clone()).finish(out)?;
    }
    emit(&report);
    Ok(())
}
