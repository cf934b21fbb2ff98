//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero on any failure not listed in `KNOWN_GAPS`.
//!
//! `TCLSWARM_ACCEPTANCE_FULL=1` trains on every population size instead of
//! every fifth one.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::time::{Duration, Instant};

use rand::Rng;

use tclswarm::formats::{self, TimeSeries};
use tclswarm_core::consensus::{build_weight_matrix, consensus_step, stability_bound, FrequencyVector};
use tclswarm_core::ensemble::{sample_population, simulate, PopulationConfig, Regime, SimResult};
use tclswarm_core::learned::{
    evaluate, fit, generate_dataset, split_dataset, DatasetSpec, MlpModel, Scalers, TrainConfig,
};
use tclswarm_core::metrics::{dominant_frequency, fluctuation_band, mean, ripple_rms, rmse_percent, Series};
use tclswarm_core::signals::{
    duty_bias, duty_phase, kuramoto_boolean_step, kuramoto_coupling, natural_frequency_correction,
    switching_signal,
};
use tclswarm_core::{seed, Error};

/// Criteria (or sub-checks) that are known not to hold; see the README.
const KNOWN_GAPS: &[&str] = &["2/band", "10/mae"];

const SEED: u64 = 20_240_601;

struct Outcome {
    id: &'static str,
    failed: Vec<&'static str>,
    detail: String,
    elapsed: Duration,
}

impl Outcome {
    fn pass(&self) -> bool {
        self.failed.is_empty()
    }

    fn tolerated(&self) -> bool {
        self.failed
            .iter()
            .all(|f| KNOWN_GAPS.contains(&format!("{}/{f}", self.id).as_str()))
    }
}

/// Sub-check bookkeeping for one criterion.
struct Checks {
    failed: Vec<&'static str>,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self { failed: Vec::new(), notes: Vec::new() }
    }

    fn check(&mut self, name: &'static str, ok: bool, note: String) {
        if !ok {
            self.failed.push(name);
        }
        self.notes.push(if ok { note } else { format!("{note} [{name} FAILED]") });
    }

    fn budget(&mut self, elapsed: Duration, limit_s: f64) {
        let s = elapsed.as_secs_f64();
        self.check("runtime", s < limit_s, format!("{s:.2} s (< {limit_s} s)"));
    }

    fn finish(self, id: &'static str, elapsed: Duration) -> Outcome {
        Outcome { id, failed: self.failed, detail: self.notes.join("; "), elapsed }
    }
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn series_bytes(sim: &SimResult<f64>) -> Vec<u8> {
    formats::series_csv(&TimeSeries {
        time: sim.time.clone(),
        p_agg: sim.p_agg.clone(),
        f_mean: Some(sim.f_mean.clone()),
    })
    .unwrap()
}

/// Second half of a regime's span: past the switching transient.
fn settled(sim: &SimResult<f64>, regime: Regime) -> &[f64] {
    let w = sim.regime_window(regime).expect("regime in schedule");
    &w[w.len() / 2..]
}

fn seeded(cfg: PopulationConfig<f64>) -> PopulationConfig<f64> {
    PopulationConfig { seed: SEED, ..cfg }
}

// ---- runs shared between criteria; each returns its CSV for the determinism check

fn exact4_run() -> SimResult<f64> {
    simulate(&seeded(PopulationConfig::homogeneous(4, 14.0, 0.5, 0.5)), 60.0, 0.01).unwrap()
}

fn het100_run() -> SimResult<f64> {
    simulate(&seeded(PopulationConfig::heterogeneous_100()), 180.0, 0.01).unwrap()
}

fn case_run(cfg: PopulationConfig<f64>) -> SimResult<f64> {
    let cfg = seeded(cfg);
    let duration = 30.0 * cfg.nominal_period();
    simulate(&cfg, duration, 1.0).unwrap()
}

fn dataset_spec() -> DatasetSpec<f64> {
    if std::env::var_os("TCLSWARM_ACCEPTANCE_FULL").is_some() {
        DatasetSpec::default()
    } else {
        DatasetSpec::fast()
    }
}

struct Learned {
    dataset_csv: Vec<u8>,
    model_text: String,
    rows: usize,
    rmse_pct: f64,
    mae_deg: f64,
    rmse_rad: f64,
    progress_30: f64,
    epochs: usize,
}

fn learned_run() -> Learned {
    let ds = generate_dataset(&dataset_spec(), seed::derive(SEED, "dataset")).unwrap();
    let scalers = Scalers::fit(&ds).unwrap();
    let (train, test) = split_dataset(&ds, 0.7, seed::derive(SEED, "split")).unwrap();
    let cfg = TrainConfig { seed: seed::derive(SEED, "train"), ..TrainConfig::default() };
    let (model, report) = fit(scalers, &train, &cfg).map_err(|e| e.to_string()).unwrap();
    let eval = evaluate(&model, &test).unwrap();
    Learned {
        dataset_csv: formats::dataset_csv(&ds).unwrap(),
        model_text: model.to_text(),
        rows: ds.len(),
        rmse_pct: eval.rmse_pct,
        mae_deg: eval.mae_deg,
        rmse_rad: eval.rmse_rad,
        progress_30: report.loss_progress_at(29),
        epochs: report.history.len(),
    }
}

// ---- criteria

fn criterion_1(sim: &SimResult<f64>, elapsed: Duration) -> Outcome {
    let mut c = Checks::new();
    let (f, spacing) = (0.5, FRAC_PI_2);
    let start = sim.index_at(sim.regimes[2].start);
    let from = start + (sim.len() - start) / 2;
    let (t0, t1) = (from as f64 * sim.dt, sim.len() as f64 * sim.dt);

    // oracle: four ideal square waves, sin(2πft + iπ/2) ≥ b, enumerated on the grid
    let bias = duty_bias(duty_phase(0.5)).unwrap();
    let level_ok = (from..sim.len()).all(|k| {
        let t = k as f64 * sim.dt;
        let on = (0..4).filter(|&i| switching_signal(f, t, i as f64 * spacing, bias)).count();
        on == 2 || edge_near(t, sim.dt, f, spacing, bias)
    });
    c.check("oracle", level_ok, "ideal waves hold 28 kW away from transitions".into());

    let off: Vec<usize> = (from..sim.len()).filter(|&k| (sim.p_agg[k] - 28.0).abs() > 1e-9).collect();
    let stray = off
        .iter()
        .filter(|&&k| !edge_near(k as f64 * sim.dt, sim.dt, f, spacing, bias))
        .count();
    let periods = (t1 - t0) * f;
    c.check(
        "constant",
        stray == 0,
        format!(
            "{} of {} samples off 28 kW over {periods:.0} periods, {stray} more than one sample from a transition",
            off.len(),
            sim.len() - from
        ),
    );
    c.budget(elapsed, 1.0);
    c.finish("1", elapsed)
}

/// Whether some unit of a π/2-spaced square-wave family switches within
/// one step of `t`.
fn edge_near(t: f64, dt: f64, f: f64, spacing: f64, bias: f64) -> bool {
    let w = TAU * f;
    let roots = [bias.asin(), std::f64::consts::PI - bias.asin()];
    (0..4).any(|i| {
        roots.iter().any(|&x0| {
            // nearest solution of wt + iα = x0 + 2πm
            let m = ((w * t + i as f64 * spacing - x0) / TAU).round();
            let te = (x0 + TAU * m - i as f64 * spacing) / w;
            (te - t).abs() <= dt * (1.0 + 1e-9)
        })
    })
}

fn criterion_2(sim: &SimResult<f64>, elapsed: Duration) -> Outcome {
    let mut c = Checks::new();
    let tail = sim.tail(0.2);
    let band = 100.0 * fluctuation_band(tail);
    c.check("band", band <= 3.0, format!("band ±{band:.2}% of {:.1} kW (≤ ±3%)", mean(tail)));
    c.budget(elapsed, 10.0);
    c.finish("2", elapsed)
}

fn case_criterion(id: &'static str, sim: &SimResult<f64>, target: f64, elapsed: Duration, limit_s: f64) -> Outcome {
    let mut c = Checks::new();
    let w = settled(sim, Regime::Desynchronized);
    let m = mean(w);
    let err = 100.0 * (m - target).abs() / target;
    c.check("mean", err <= 2.0, format!("mean {m:.1} kW vs {target} kW ({err:.2}% ≤ 2%)"));
    let band = 100.0 * fluctuation_band(w);
    c.check("band", band <= 3.5, format!("band ±{band:.2}% (≤ ±3.5%)"));
    c.budget(elapsed, limit_s);
    c.finish(id, elapsed)
}

fn criterion_5(sim: &SimResult<f64>) -> Outcome {
    let mut c = Checks::new();
    let ((), elapsed) = timed(|| {
        let cfg = seeded(PopulationConfig::heterogeneous_100());
        let pop = sample_population(&cfg).unwrap();
        let target = pop.mean_frequency();
        let weights = build_weight_matrix(100, 0.06).unwrap();
        let h = stability_bound(100, 0.06).unwrap().scaled_or(0.1, 0.0);
        let mut f = FrequencyVector::new(pop.units.iter().map(|u| u.cycle.frequency).collect()).unwrap();
        let (mut worst_drift, mut monotone, mut steps) = (0.0f64, true, 0);
        while f.max_deviation_from(target) > 1e-6 && steps < 100_000 {
            let next = consensus_step(&f, &weights, h).unwrap();
            worst_drift = worst_drift.max((next.mean() - f.mean()).abs() / f.mean());
            monotone &= next.spread() <= f.spread();
            f = next;
            steps += 1;
        }
        c.check("mean", worst_drift <= 1e-12, format!("mean drift ≤ {worst_drift:.1e} per step"));
        c.check("spread", monotone, format!("spread non-increasing over {steps} steps"));
        c.check(
            "converged",
            f.max_deviation_from(target) <= 1e-6,
            format!("max |f - mean| = {:.1e} Hz", f.max_deviation_from(target)),
        );
        let in_sim = sim
            .final_frequencies
            .iter()
            .map(|&x| (x - target).abs())
            .fold(0.0, f64::max);
        c.check("simulated", in_sim <= 1e-6, format!("simulated run ends within {in_sim:.1e} Hz"));
    });
    c.budget(elapsed, 5.0);
    c.finish("5", elapsed)
}

fn criterion_6(sim: &SimResult<f64>, elapsed: Duration) -> Outcome {
    let mut c = Checks::new();
    let random = ripple_rms(settled(sim, Regime::Random));
    let desync = ripple_rms(settled(sim, Regime::Desynchronized));
    let reduction = 100.0 * (random - desync) / random;
    c.check(
        "reduction",
        reduction >= 30.0,
        format!("ripple RMS {random:.1} → {desync:.1} kW, {reduction:.1}% reduction (≥ 30%)"),
    );
    c.budget(elapsed, 30.0);
    c.finish("6", elapsed)
}

fn criterion_7(sim: &SimResult<f64>, elapsed: Duration) -> Outcome {
    let mut c = Checks::new();
    let w = settled(sim, Regime::Desynchronized);
    let m = mean(w);
    let agg = Series::new(sim.dt, w.to_vec()).unwrap();
    let reference = Series::new(sim.dt, vec![m; w.len()]).unwrap();
    let rmse = rmse_percent(&reference, &agg, sim.capacity).unwrap();
    c.check("rmse", rmse <= 6.5, format!("RMSE {rmse:.3}% of {:.0} kW (≤ 6.5%)", sim.capacity));
    let rel = 100.0 * w.iter().map(|p| (p - m).abs() / m).fold(0.0, f64::max);
    c.check("relative", rel <= 3.5, format!("relative error {rel:.2}% (≤ 3.5%)"));
    c.budget(elapsed, 60.0);
    c.finish("7", elapsed)
}

fn criterion_8() -> Outcome {
    let mut c = Checks::new();
    let ((), elapsed) = timed(|| {
        let mut rng = seed::labeled_rng(SEED, "duty-law");
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let t_on: f64 = rng.gen_range(0.0..TAU);
            let bias = duty_bias(t_on).unwrap();
            let on = (0..1000)
                .filter(|&k| switching_signal(1.0, k as f64 / 1000.0, 0.0, bias))
                .count();
            worst = worst.max((on as f64 / 1000.0 - t_on / TAU).abs());
        }
        c.check("duty", worst <= 1e-3, format!("worst |ON fraction - T_ON/2π| = {worst:.2e} (≤ 1e-3)"));
    });
    c.budget(elapsed, 5.0);
    c.finish("8", elapsed)
}

fn criterion_9() -> (Outcome, Vec<u8>) {
    let mut c = Checks::new();
    let phases = [0.3, 1.7, 4.0, 5.9];
    let omegas = [0.25, 0.27, 0.29, 0.31];
    let alphas = [0.0, FRAC_PI_2, 2.0 * FRAC_PI_2, 3.0 * FRAC_PI_2];
    let next = kuramoto_boolean_step(&phases, &omegas, 0.0, &alphas, 0.01).unwrap();
    let exact = (0..4).all(|i| next[i] == phases[i] + 0.01 * (TAU * omegas[i]));
    c.check("free", exact, "K = 0 is free rotation".into());

    let sync = [1.1; 4];
    let zeros = [0.0; 4];
    let pull = (0..4).map(|i| kuramoto_coupling(&sync, &zeros, i).unwrap()).fold(0.0, f64::max);
    c.check("sync", pull == 0.0, format!("coupling at synchronized α = 0: {pull}"));
    let w = natural_frequency_correction(0.298, 0.8, &sync, &zeros, 2).unwrap();
    c.check("correction", w == 0.298, format!("ω_i = {w} for ω_FFT = 0.298"));

    let cfg = PopulationConfig {
        protocol: tclswarm_core::ensemble::Protocol::Kuramoto { coupling: 0.5 },
        ..seeded(PopulationConfig::homogeneous(4, 14.0, 0.5, 0.271))
    };
    let sim = simulate(&cfg, 120.0, 0.01).unwrap();
    let w = sim.regime_window(Regime::Desynchronized).unwrap();
    let peak = dominant_frequency(&Series::new(sim.dt, w.to_vec()).unwrap());
    c.notes.push(match peak {
        Ok(f) => format!("N = 4 Kuramoto ω_FFT = {f:.3} Hz (informational)"),
        Err(Error::Resolution(_)) => "N = 4 Kuramoto output has no resolvable peak (informational)".into(),
        Err(e) => format!("N = 4 Kuramoto ω_FFT unavailable: {e}"),
    });
    (c.finish("9", Duration::ZERO), series_bytes(&sim))
}

fn criterion_10(run: &Learned, elapsed: Duration) -> Outcome {
    let mut c = Checks::new();
    c.notes.push(format!("{} rows", run.rows));
    c.check("rmse", run.rmse_pct <= 5.0, format!("test RMSE {:.2}% scaled (≤ 5%)", run.rmse_pct));
    c.check(
        "mae",
        run.mae_deg <= 0.06,
        format!("MAE {:.3}° (≤ 0.06°), RMSE {:.4} rad", run.mae_deg, run.rmse_rad),
    );
    c.check(
        "saturation",
        run.progress_30 >= 0.9,
        format!("{:.0}% of the loss decrease by epoch 30 of {}", 100.0 * run.progress_30, run.epochs),
    );

    let model = MlpModel::<f64>::init(seed::derive(SEED, "gradcheck"));
    let mut rng = seed::labeled_rng(SEED, "gradcheck-data");
    let x: Vec<[f64; 2]> = (0..16).map(|_| [rng.gen(), rng.gen()]).collect();
    let y: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
    let (_, grad) = model.loss_and_gradient(&x, &y).unwrap();
    let params = model.params();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let loss_at = |d: f64| {
            let mut p = params.clone();
            p[k] += d;
            let mut m = model.clone();
            m.set_params(&p).unwrap();
            m.loss_and_gradient(&x, &y).unwrap().0
        };
        let h = 1e-6;
        let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        worst = worst.max((numeric - grad[k]).abs());
    }
    c.check("gradient", worst <= 1e-5, format!("max |analytic - finite difference| = {worst:.1e}"));
    c.budget(elapsed, 600.0);
    c.finish("10", elapsed)
}

fn main() {
    let mut outcomes = Vec::new();
    let mut artifacts: Vec<(&str, Vec<u8>)> = Vec::new();

    let (exact4, t) = timed(exact4_run);
    outcomes.push(criterion_1(&exact4, t));
    artifacts.push(("criterion 1 series", series_bytes(&exact4)));

    let (het, t_het) = timed(het100_run);
    outcomes.push(criterion_2(&het, t_het));
    artifacts.push(("criterion 2/5/6 series", series_bytes(&het)));

    let (case1, t1) = timed(|| case_run(PopulationConfig::case_study_1()));
    outcomes.push(case_criterion("3", &case1, 750.0, t1, 60.0));
    artifacts.push(("criterion 3/7 series", series_bytes(&case1)));

    let (case2, t) = timed(|| case_run(PopulationConfig::case_study_2()));
    outcomes.push(case_criterion("4", &case2, 8445.0, t, 600.0));
    artifacts.push(("criterion 4 series", series_bytes(&case2)));
    drop(case2);

    outcomes.push(criterion_5(&het));
    outcomes.push(criterion_6(&het, t_het));
    outcomes.push(criterion_7(&case1, t1));
    outcomes.push(criterion_8());

    let (c9, kuramoto_csv) = criterion_9();
    outcomes.push(c9);
    artifacts.push(("criterion 9 series", kuramoto_csv));

    let (learned, t) = timed(learned_run);
    outcomes.push(criterion_10(&learned, t));
    artifacts.push(("criterion 10 dataset", learned.dataset_csv.clone()));
    artifacts.push(("criterion 10 model", learned.model_text.clone().into_bytes()));

    // criterion 11: regenerate every artifact and compare bytes
    {
        let again: Vec<Vec<u8>> = vec![
            series_bytes(&exact4_run()),
            series_bytes(&het100_run()),
            series_bytes(&case_run(PopulationConfig::case_study_1())),
            series_bytes(&case_run(PopulationConfig::case_study_2())),
            criterion_9().1,
            {
                let l = learned_run();
                l.dataset_csv
            },
        ];
        let mut c = Checks::new();
        let mut differing = Vec::new();
        for ((name, first), second) in artifacts.iter().zip(&again) {
            if first != second {
                differing.push(*name);
            }
        }
        c.check(
            "bytes",
            differing.is_empty(),
            if differing.is_empty() {
                format!("{} CSV artifacts byte-identical on rerun", again.len())
            } else {
                format!("differing: {}", differing.join(", "))
            },
        );
        outcomes.push(c.finish("11", Duration::ZERO));
    }

    let mut unexpected = 0;
    for o in &outcomes {
        let verdict = match (o.pass(), o.tolerated()) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known gap)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        let time = if o.elapsed.is_zero() { String::new() } else { format!(" [{:.1} s]", o.elapsed.as_secs_f64()) };
        println!("criterion {:>2}: {verdict}{time}: {}", o.id, o.detail);
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
