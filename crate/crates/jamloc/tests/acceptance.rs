//! Acceptance suite: every release criterion of the toolkit, one test per
//! criterion, each printing a single PASS/FAIL line with the measured
//! values (run with `--nocapture` to see them).

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use jamloc::baselines::{ls_estimate, LsCalibration};
use jamloc::detect::{
    build_observations, build_observations_with_baselines, detect, estimate_baseline,
    expected_false_alarm_rate, DetectionConfig,
};
use jamloc::eval::{combinations, run_sweep, Method, SweepSpec};
use jamloc::ingest::{
    average_satellites, parse_log, write_flat_log, AveragingDomain, LogFormat, ParseOptions,
};
use jamloc::mle::{
    alpha_grid_search, estimate, gradient, negative_log_likelihood, sigma2_closed_form,
    LikelihoodState, MleConfig, ReceiverEstimate,
};
use jamloc::sim::{self, AlphaPolicy, ScenarioSpec};
use jamloc::types::{distance, Baseline, ObservationSet, Position, ReceiverId};

fn report(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    println!(
        "ACCEPTANCE {id} ({name}): {} - {detail} [{:.2?}]",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed()
    );
}

fn noisy_observations(seed: u64) -> (ObservationSet, Position) {
    let spec = ScenarioSpec {
        seed,
        ..ScenarioSpec::default()
    };
    let sim = sim::generate(&spec).unwrap();
    let truth = sim.scenario.jammer_position;
    let obs = build_observations(sim.tracks, sim.series, &DetectionConfig::default()).unwrap();
    (obs, truth)
}

/// 1. Analytic gradient matches central finite differences of the NLL.
#[test]
fn acceptance_1_gradient_matches_finite_differences() {
    let started = Instant::now();
    let h = 1e-4;
    let tol = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;

    for scenario_idx in 0..10u64 {
        let (obs, _) = noisy_observations(1000 + scenario_idx);
        let mut rng = ChaCha12Rng::seed_from_u64(500 + scenario_idx);
        for _ in 0..10 {
            let state = LikelihoodState {
                p0: Position::new(
                    rng.random_range(-1500.0..1500.0),
                    rng.random_range(-1500.0..1500.0),
                    rng.random_range(0.0..60.0),
                ),
                receivers: (0..obs.len() as u32)
                    .map(|i| ReceiverEstimate {
                        receiver_id: ReceiverId(i),
                        eta: 10f64.powf(rng.random_range(2.0..8.0)),
                        alpha: rng.random_range(1.6..3.5),
                        sigma2: rng.random_range(0.5..4.0),
                    })
                    .collect(),
            };
            let g = gradient(&state, &obs).unwrap();
            let nll = |s: &LikelihoodState| negative_log_likelihood(s, &obs).unwrap();
            let nll0 = nll(&state);

            let mut fd = Vec::new();
            for dim in 0..3 {
                let mut plus = state.clone();
                let mut minus = state.clone();
                match dim {
                    0 => {
                        plus.p0.x += h;
                        minus.p0.x -= h;
                    }
                    1 => {
                        plus.p0.y += h;
                        minus.p0.y -= h;
                    }
                    _ => {
                        plus.p0.z += h;
                        minus.p0.z -= h;
                    }
                }
                fd.push((nll(&plus) - nll(&minus)) / (2.0 * h));
            }
            for j in 0..state.receivers.len() {
                let mut plus = state.clone();
                let mut minus = state.clone();
                plus.receivers[j].eta *= h.exp();
                minus.receivers[j].eta *= (-h).exp();
                fd.push((nll(&plus) - nll(&minus)) / (2.0 * h));
            }

            let analytic: Vec<f64> = g.p0.iter().copied().chain(g.ln_eta).collect();
            // the oracle itself carries rounding noise of order eps*|NLL|/h;
            // the relative check applies above that floor
            let fd_noise = 64.0 * f64::EPSILON * nll0.abs().max(1.0) / h;
            for (a, f) in analytic.iter().zip(&fd) {
                let rel = (a - f).abs() / (tol * a.abs().max(f.abs()) + fd_noise).max(1e-300) * tol;
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    let pass = worst < tol;
    report(
        1,
        "gradient vs finite differences",
        pass,
        &format!("{checked} components over 100 states, worst relative error {worst:.2e} (tol {tol:.0e})"),
        started,
    );
    assert!(pass, "worst relative error {worst}");
}

/// 2. Closed-form sigma2 equals the 1D golden-section minimizer of the NLL.
#[test]
fn acceptance_2_sigma2_matches_golden_section_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(271828);
    let mut worst: f64 = 0.0;

    for _ in 0..100 {
        let n = rng.random_range(3..200usize);
        let spread = rng.random_range(0.2..4.0);
        let residuals: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * spread
            })
            .collect();

        // independent oracle: golden-section search on ln(sigma2) of
        // NLL(sigma2) = (n/2) ln(2 pi sigma2) + sum(r^2) / (2 sigma2)
        let sum_sq: f64 = residuals.iter().map(|r| r * r).sum();
        let nf = n as f64;
        let nll = |ln_s2: f64| -> f64 {
            let s2 = ln_s2.exp();
            0.5 * nf * (std::f64::consts::TAU * s2).ln() + 0.5 * sum_sq / s2
        };
        let (mut a, mut b) = ((1e-9f64).ln(), (1e4f64).ln());
        let inv_phi = 0.618_033_988_749_894_9f64;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (nll(c), nll(d));
        for _ in 0..120 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = nll(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = nll(d);
            }
        }
        let oracle = (0.5 * (a + b)).exp();
        let closed = sigma2_closed_form(&residuals);
        let rel = (closed - oracle).abs() / oracle;
        worst = worst.max(rel);
    }
    let pass = worst < 1e-6;
    report(
        2,
        "closed-form sigma2 vs golden section",
        pass,
        &format!("100 residual sets, worst relative deviation {worst:.2e} (tol 1e-6)"),
        started,
    );
    assert!(pass, "worst relative deviation {worst}");
}

/// 3. Noiseless exact recovery: MLE under 1 m, calibrated LS under 1e-6 m.
#[test]
fn acceptance_3_noiseless_exact_recovery() {
    let started = Instant::now();
    let spec = ScenarioSpec {
        seed: 31,
        sigma_s_db: 0.0,
        ..ScenarioSpec::default()
    };
    let sim = sim::generate(&spec).unwrap();
    let truth = sim.scenario.jammer_position;
    let cal = LsCalibration::from_scenario(&sim.scenario, 100.0).unwrap();
    let obs = build_observations(sim.tracks, sim.series, &DetectionConfig::default()).unwrap();

    let cfg = MleConfig {
        known_alpha: Some(2.0),
        seed: 1,
        ..MleConfig::default()
    };
    let mle_err = distance(&estimate(&obs, &cfg).unwrap().p0_hat, &truth);
    let ls_err = distance(&ls_estimate(&obs, &cal).unwrap(), &truth);

    let pass = mle_err < 1.0 && ls_err < 1e-6;
    report(
        3,
        "noiseless exact recovery",
        pass,
        &format!("MLE error {mle_err:.2e} m (< 1), LS error {ls_err:.2e} m (< 1e-6)"),
        started,
    );
    assert!(pass, "mle {mle_err} m, ls {ls_err} m");
}

/// 4. Paper-shaped Monte Carlo: MLE medians, baseline ratios, regression
///    guard on receiver count.
#[test]
fn acceptance_4_monte_carlo_reproduction() {
    let started = Instant::now();
    let spec = SweepSpec {
        trials: 50,
        seed: 2024,
        ..SweepSpec::default()
    };
    let result = run_sweep(&spec).unwrap();

    let median = |method: Method, k: usize| result.cell(method, k).and_then(|c| c.median_m);

    let mut pass = true;
    let mut notes = Vec::new();
    for k in [6, 7, 8] {
        let mle = median(Method::Mle, k).unwrap_or(f64::INFINITY);
        pass &= mle <= 150.0;
        notes.push(format!("mle@{k}={mle:.0}m"));
        if let Some(mean) = median(Method::MeanPosition, k) {
            pass &= mean >= 3.0 * mle;
            notes.push(format!("mean@{k}={mean:.0}m"));
        } else {
            pass = false;
            notes.push(format!("mean@{k}=none"));
        }
        if let Some(ls) = median(Method::LeastSquares, k) {
            pass &= ls >= 2.0 * mle;
            notes.push(format!("ls@{k}={ls:.0}m"));
        } else {
            pass = false;
            notes.push(format!("ls@{k}=none"));
        }
    }
    // adding receivers must not make the MLE worse beyond noise
    let mle4 = median(Method::Mle, 4).unwrap_or(f64::INFINITY);
    let mle8 = median(Method::Mle, 8).unwrap_or(f64::INFINITY);
    pass &= mle8 <= mle4 + 25.0;
    notes.push(format!("mle@4={mle4:.0}m"));

    report(
        4,
        "Monte Carlo reproduction (alpha = 2)",
        pass,
        &format!(
            "50 trials/size: {} (require mle<=150 @ k>=6, mean>=3x, ls>=2x, mle@8<=mle@4+25)",
            notes.join(" ")
        ),
        started,
    );
    assert!(pass, "{}", notes.join(" "));
}

/// 5. Noiseless per-receiver pathloss recovery on the grid.
#[test]
fn acceptance_5_alpha_grid_recovery() {
    let started = Instant::now();
    let alphas = vec![2.0, 2.5, 2.9338, 2.0, 2.5, 2.9338];
    let expected = [2.0, 2.5, 2.95, 2.0, 2.5, 2.95]; // 2.9338 snaps to the nearest grid point
    let spec = ScenarioSpec {
        seed: 5,
        sigma_s_db: 0.0,
        receiver_count: alphas.len(),
        alpha: AlphaPolicy::Explicit { values: alphas },
        ..ScenarioSpec::default()
    };
    let sim = sim::generate(&spec).unwrap();
    let truth = sim.scenario.jammer_position;
    let baselines: Vec<Baseline> = sim
        .scenario
        .receivers
        .iter()
        .map(|r| Baseline {
            receiver_id: r.receiver_id,
            s_bar_dbhz: r.s_bar_dbhz,
        })
        .collect();
    let obs = build_observations_with_baselines(
        sim.tracks,
        sim.series,
        baselines,
        &DetectionConfig::default(),
    )
    .unwrap();

    let estimates = alpha_grid_search(&obs, &truth, &MleConfig::default()).unwrap();
    let recovered: Vec<f64> = estimates.iter().map(|e| e.alpha).collect();
    let pass = recovered
        .iter()
        .zip(&expected)
        .all(|(got, want)| (got - want).abs() < 1e-12);
    report(
        5,
        "pathloss grid recovery",
        pass,
        &format!("true {{2.0, 2.5, 2.9338}} -> recovered {recovered:?} (want {expected:?})"),
        started,
    );
    assert!(pass, "recovered {recovered:?}");
}

/// 6. Mixed pathloss: LS mostly unsolvable, MLE still converging.
#[test]
fn acceptance_6_varying_pathloss_behaviour() {
    let started = Instant::now();
    let spec = SweepSpec {
        scenario: ScenarioSpec {
            alpha: AlphaPolicy::RandomChoice {
                values: vec![2.0, 2.5, 2.9338],
            },
            ..ScenarioSpec::default()
        },
        methods: vec![Method::Mle, Method::LeastSquares],
        trials: 50,
        seed: 2026,
        ..SweepSpec::default()
    };
    let result = run_sweep(&spec).unwrap();

    let aggregate = |method: Method| {
        let (mut conv, mut runs) = (0usize, 0usize);
        for c in result.cells.iter().filter(|c| c.method == method) {
            conv += c.n_converged;
            runs += c.n_runs;
        }
        (conv, runs, conv as f64 / runs.max(1) as f64)
    };
    let (_, ls_runs, ls_rate) = aggregate(Method::LeastSquares);
    let (_, mle_runs, mle_rate) = aggregate(Method::Mle);
    let ls_failure = 1.0 - ls_rate;

    let pass = ls_failure >= 0.5 && mle_rate >= 0.3;
    report(
        6,
        "varying pathloss behaviour",
        pass,
        &format!(
            "LS failure rate {ls_failure:.2} over {ls_runs} runs (require >= 0.5), \
             MLE convergence {mle_rate:.2} over {mle_runs} runs (require >= 0.3)"
        ),
        started,
    );
    assert!(pass, "ls failure {ls_failure}, mle convergence {mle_rate}");
}

/// 7. Empirical false-alarm rate matches the Gaussian tail probability.
#[test]
fn acceptance_7_detection_false_alarm_calibration() {
    let started = Instant::now();
    let n = 1_000_000usize;
    let (gamma, sigma) = (-3.0, 1.0);
    let mut rng = ChaCha12Rng::seed_from_u64(314159);
    let samples: Vec<jamloc::types::CnirSample> = (0..n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            jamloc::types::CnirSample {
                time_s: i as f64,
                value: jamloc::types::CnirValue::Db(45.0 + sigma * z),
            }
        })
        .collect();
    let series = jamloc::types::CnirSeries::new(ReceiverId(0), samples).unwrap();
    let baseline = Baseline {
        receiver_id: ReceiverId(0),
        s_bar_dbhz: 45.0,
    };
    let mask = detect(
        &series,
        &baseline,
        &DetectionConfig {
            gamma_db: gamma,
            ..DetectionConfig::default()
        },
    )
    .unwrap();

    let expected = expected_false_alarm_rate(gamma, sigma);
    let observed = mask.detected_fraction();
    let se = (expected * (1.0 - expected) / n as f64).sqrt();
    let deviation = (observed - expected).abs() / se;

    let pass = deviation <= 3.0;
    report(
        7,
        "false-alarm calibration",
        pass,
        &format!(
            "observed {observed:.6} vs Phi(-3) = {expected:.6} over 1e6 samples ({deviation:.2} standard errors, limit 3)"
        ),
        started,
    );
    assert!(pass, "deviation {deviation} standard errors");
}

/// 8. Determinism of seeded sweeps and subset combinatorics.
#[test]
fn acceptance_8_determinism_and_combinatorics() {
    let started = Instant::now();
    let counts: Vec<usize> = (4..=8).map(|k| combinations(8, k).len()).collect();
    let counts_ok = counts == vec![70, 56, 28, 8, 1];

    let spec = SweepSpec {
        methods: vec![Method::MeanPosition],
        trials: 2,
        seed: 99,
        ..SweepSpec::default()
    };
    let a = run_sweep(&spec).unwrap();
    let b = run_sweep(&spec).unwrap();
    let deterministic = a.to_csv() == b.to_csv() && a.to_json().unwrap() == b.to_json().unwrap();

    let pass = counts_ok && deterministic;
    report(
        8,
        "determinism and combinatorics",
        pass,
        &format!("subset counts {counts:?} (want [70, 56, 28, 8, 1]), byte-identical reruns: {deterministic}"),
        started,
    );
    assert!(pass, "counts {counts:?}, deterministic {deterministic}");
}

/// 9. Phone-log ingestion round trip and satellite averaging bounds.
#[test]
fn acceptance_9_ingestion_round_trip() {
    let started = Instant::now();
    let raw = include_str!("data/sample_gnsslogger.csv");
    let parsed = parse_log(std::io::Cursor::new(raw), &ParseOptions::default()).unwrap();
    let diag_free = parsed.diagnostics.is_empty();
    let non_empty = !parsed.records.is_empty();

    let flat = write_flat_log(&parsed.records);
    let opts = ParseOptions {
        format: LogFormat::Flat,
        ..ParseOptions::default()
    };
    let reparsed = parse_log(std::io::Cursor::new(flat.clone()), &opts).unwrap();
    let lossless = reparsed.records == parsed.records && write_flat_log(&reparsed.records) == flat;

    let sat_samples: Vec<_> = parsed
        .records
        .iter()
        .map(|r| r.satellite_sample())
        .collect();
    let mut bounds_ok = true;
    for domain in [AveragingDomain::Decibel, AveragingDomain::Linear] {
        let series = average_satellites(&sat_samples, ReceiverId(0), domain).unwrap();
        for (sample, sat) in series.samples().iter().zip(&sat_samples) {
            if let Some(v) = sample.value.db() {
                let lo = sat.cn0_dbhz.iter().fold(f64::INFINITY, |m, x| m.min(*x));
                let hi = sat
                    .cn0_dbhz
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, x| m.max(*x));
                bounds_ok &= v >= lo - 1e-9 && v <= hi + 1e-9;
            }
        }
        // the averaged series feeds the standard baseline estimator
        bounds_ok &= estimate_baseline(&series, 20.0).is_ok();
    }

    let pass = diag_free && non_empty && lossless && bounds_ok;
    report(
        9,
        "ingestion round trip",
        pass,
        &format!(
            "{} epochs, lossless round trip: {lossless}, averages within per-epoch satellite bounds: {bounds_ok}",
            parsed.records.len()
        ),
        started,
    );
    assert!(pass, "lossless {lossless}, bounds {bounds_ok}");
}
