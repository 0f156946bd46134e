//! Monte Carlo evaluation harness.
//!
//! Sweeps receiver-subset sizes over freshly simulated scenarios, runs each
//! configured method per trial and aggregates 3D position errors into
//! percentile bands plus a convergence rate. Non-converged runs are excluded
//! from the percentiles and show up in the rate instead. Every trial derives
//! its own seed, so results are byte-identical across runs (and independent
//! of the parallel execution order).

use serde::{Deserialize, Serialize};

use crate::baselines::{self, LsCalibration, MeanPositionMode};
use crate::detect::{self, DetectionConfig};
use crate::error::{Error, Result};
use crate::mle::{self, MleConfig};
use crate::rng::{derive_seed, stream_rng};
use crate::sim::{self, ScenarioSpec};
use crate::types::distance;

const TAG_TRIAL: u64 = 0x6576;
const TAG_SUBSET: u64 = 0x7375;
const TAG_MLE: u64 = 0x6d6c;

/// An estimation method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mle,
    MeanPosition,
    LeastSquares,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::MeanPosition => "mean",
            Method::LeastSquares => "ls",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Method> {
        match tag {
            "mle" => Ok(Method::Mle),
            "mean" => Ok(Method::MeanPosition),
            "ls" => Ok(Method::LeastSquares),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

fn default_subset_min() -> usize {
    4
}
fn default_trials() -> usize {
    50
}
fn default_methods() -> Vec<Method> {
    vec![Method::Mle, Method::MeanPosition, Method::LeastSquares]
}
fn default_ls_ref() -> f64 {
    100.0
}

/// Sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub scenario: ScenarioSpec,
    /// Smallest subset size; sizes run up to the full receiver count.
    pub subset_min: usize,
    pub methods: Vec<Method>,
    /// Trials per subset size.
    pub trials: usize,
    pub detection: DetectionConfig,
    pub mle: MleConfig,
    /// Calibration distance handed to the least-squares baseline.
    pub ls_reference_distance_m: f64,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            scenario: ScenarioSpec::default(),
            subset_min: default_subset_min(),
            methods: default_methods(),
            trials: default_trials(),
            detection: DetectionConfig::default(),
            mle: MleConfig::default(),
            ls_reference_distance_m: default_ls_ref(),
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.detection.validate()?;
        self.mle.validate()?;
        if self.subset_min == 0 || self.subset_min > self.scenario.receiver_count {
            return Err(Error::invalid(format!(
                "subset_min {} out of range for {} receivers",
                self.subset_min, self.scenario.receiver_count
            )));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        if !(self.ls_reference_distance_m > 0.0) {
            return Err(Error::invalid("ls reference distance must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Aggregated outcome of one (method, subset size) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub subset_size: usize,
    /// Percentiles over the 3D errors of converged runs; absent when no
    /// run converged.
    pub median_m: Option<f64>,
    pub p25_m: Option<f64>,
    pub p75_m: Option<f64>,
    pub convergence_rate: f64,
    pub n_runs: usize,
    pub n_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

pub const SWEEP_CSV_HEADER: &str =
    "method,subset_size,median_m,p25_m,p75_m,convergence_rate,n_runs";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(SWEEP_CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.method,
                c.subset_size,
                opt(c.median_m),
                opt(c.p25_m),
                opt(c.p75_m),
                c.convergence_rate,
                c.n_runs
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn cell(&self, method: Method, subset_size: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.subset_size == subset_size)
    }
}

/// All subsets of `0..n` of size `k_min..=n`, in lexicographic order per size.
pub fn enumerate_subsets(n: usize, k_min: usize) -> Result<Vec<Vec<usize>>> {
    if k_min > n {
        return Err(Error::invalid(format!("k_min {k_min} exceeds n {n}")));
    }
    let mut all = Vec::new();
    for k in k_min..=n {
        all.extend(combinations(n, k));
    }
    Ok(all)
}

/// All size-`k` subsets of `0..n`, lexicographic.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Order statistics with linear interpolation between ranks.
pub fn error_stats(errors: &[f64]) -> Result<(f64, f64, f64)> {
    if errors.is_empty() {
        return Err(Error::invalid("no values to aggregate"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((
        quantile(&sorted, 0.5),
        quantile(&sorted, 0.25),
        quantile(&sorted, 0.75),
    ))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy)]
struct MethodOutcome {
    converged: bool,
    error_3d_m: Option<f64>,
}

fn failed() -> MethodOutcome {
    MethodOutcome {
        converged: false,
        error_3d_m: None,
    }
}

/// One (subset size, trial) evaluation across all configured methods.
fn run_trial(spec: &SweepSpec, size: usize, trial: usize) -> Vec<MethodOutcome> {
    let scenario_seed = derive_seed(spec.seed, TAG_TRIAL, (size as u64) << 32 | trial as u64);
    let scenario_spec = ScenarioSpec {
        seed: scenario_seed,
        ..spec.scenario.clone()
    };

    let Ok(simulated) = sim::generate(&scenario_spec) else {
        return vec![failed(); spec.methods.len()];
    };
    let truth = simulated.scenario.jammer_position;
    let Ok(obs) = detect::build_observations(simulated.tracks, simulated.series, &spec.detection)
    else {
        return vec![failed(); spec.methods.len()];
    };

    // deterministic subset choice: seeded shuffle of the combination list
    let combos = combinations(spec.scenario.receiver_count, size);
    let subset = {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..combos.len()).collect();
        let mut rng = stream_rng(spec.seed, TAG_SUBSET, size as u64);
        order.shuffle(&mut rng);
        combos[order[trial % order.len()]].clone()
    };
    let Ok(sub_obs) = obs.subset(&subset) else {
        return vec![failed(); spec.methods.len()];
    };

    spec.methods
        .iter()
        .map(|method| match method {
            Method::Mle => {
                let cfg = MleConfig {
                    seed: derive_seed(spec.seed, TAG_MLE, (size as u64) << 32 | trial as u64),
                    ..spec.mle.clone()
                };
                match mle::estimate(&sub_obs, &cfg) {
                    Ok(report) if report.converged => MethodOutcome {
                        converged: true,
                        error_3d_m: Some(distance(&report.p0_hat, &truth)),
                    },
                    _ => failed(),
                }
            }
            Method::MeanPosition => {
                match baselines::mean_position_estimate(&sub_obs, MeanPositionMode::PerSample) {
                    Ok(p) => MethodOutcome {
                        converged: true,
                        error_3d_m: Some(distance(&p, &truth)),
                    },
                    Err(_) => failed(),
                }
            }
            Method::LeastSquares => {
                match LsCalibration::from_scenario(
                    &simulated.scenario,
                    spec.ls_reference_distance_m,
                )
                .and_then(|cal| baselines::ls_estimate(&sub_obs, &cal))
                {
                    Ok(p) => MethodOutcome {
                        converged: true,
                        error_3d_m: Some(distance(&p, &truth)),
                    },
                    Err(_) => failed(),
                }
            }
        })
        .collect()
}

/// Run the full sweep. Deterministic given `spec.seed`; trials execute in
/// parallel when the `parallel` feature is on.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let sizes: Vec<usize> = (spec.subset_min..=spec.scenario.receiver_count).collect();
    let tasks: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&k| (0..spec.trials).map(move |t| (k, t)))
        .collect();

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Vec<MethodOutcome>> = {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|&(k, t)| run_trial(spec, k, t))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Vec<MethodOutcome>> =
        tasks.iter().map(|&(k, t)| run_trial(spec, k, t)).collect();

    let mut cells = Vec::new();
    for (mi, method) in spec.methods.iter().enumerate() {
        for &size in &sizes {
            let outcomes_for_cell = tasks
                .iter()
                .zip(&outcomes)
                .filter(|((k, _), _)| *k == size)
                .map(|(_, methods)| methods[mi]);
            let mut errors = Vec::new();
            let mut n_runs = 0usize;
            let mut n_converged = 0usize;
            for o in outcomes_for_cell {
                n_runs += 1;
                if o.converged {
                    n_converged += 1;
                    if let Some(e) = o.error_3d_m {
                        errors.push(e);
                    }
                }
            }
            let (median_m, p25_m, p75_m) = if errors.is_empty() {
                (None, None, None)
            } else {
                let (m, p25, p75) = error_stats(&errors)?;
                (Some(m), Some(p25), Some(p75))
            };
            cells.push(SweepCell {
                method: *method,
                subset_size: size,
                median_m,
                p25_m,
                p75_m,
                convergence_rate: n_converged as f64 / n_runs.max(1) as f64,
                n_runs,
                n_converged,
            });
        }
    }
    Ok(SweepResult { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_counts_match_binomials() {
        assert_eq!(combinations(8, 4).len(), 70);
        assert_eq!(combinations(8, 5).len(), 56);
        assert_eq!(combinations(8, 6).len(), 28);
        assert_eq!(combinations(8, 7).len(), 8);
        assert_eq!(combinations(8, 8).len(), 1);
        assert_eq!(combinations(4, 4).len(), 1);
        let all = enumerate_subsets(8, 4).unwrap();
        assert_eq!(all.len(), 70 + 56 + 28 + 8 + 1);
        assert!(enumerate_subsets(3, 4).is_err());
    }

    #[test]
    fn subsets_are_sorted_and_unique() {
        let combos = combinations(5, 3);
        for c in &combos {
            assert!(c.windows(2).all(|w| w[0] < w[1]));
        }
        let mut dedup = combos.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), combos.len());
    }

    #[test]
    fn error_stats_examples() {
        let (m, p25, p75) = error_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m, p25, p75), (2.0, 1.5, 2.5));
        let (m, p25, p75) = error_stats(&[5.0]).unwrap();
        assert_eq!((m, p25, p75), (5.0, 5.0, 5.0));
        let (m, _, _) = error_stats(&[0.0, 0.0, 0.0, 100.0]).unwrap();
        assert_eq!(m, 0.0);
        assert!(error_stats(&[]).is_err());
    }

    fn small_spec() -> SweepSpec {
        SweepSpec {
            subset_min: 7,
            trials: 2,
            methods: vec![Method::MeanPosition],
            seed: 77,
            ..SweepSpec::default()
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let spec = small_spec();
        let a = run_sweep(&spec).unwrap();
        let b = run_sweep(&spec).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_sweep_recovers_the_jammer() {
        let spec = SweepSpec {
            scenario: ScenarioSpec {
                sigma_s_db: 0.0,
                ..ScenarioSpec::default()
            },
            subset_min: 8,
            trials: 2,
            methods: vec![Method::Mle],
            mle: MleConfig {
                known_alpha: Some(2.0),
                ..MleConfig::default()
            },
            seed: 13,
            ..SweepSpec::default()
        };
        let result = run_sweep(&spec).unwrap();
        let cell = result.cell(Method::Mle, 8).unwrap();
        assert_eq!(cell.n_converged, 2);
        assert!(cell.median_m.unwrap() < 1.0, "median {:?}", cell.median_m);
    }

    #[test]
    fn sweep_without_jamming_reports_zero_convergence() {
        let spec = SweepSpec {
            scenario: ScenarioSpec {
                eta: sim::EtaPolicy::Explicit {
                    values: vec![0.0; 8],
                },
                sigma_s_db: 0.0,
                ..ScenarioSpec::default()
            },
            ..small_spec()
        };
        let result = run_sweep(&spec).unwrap();
        for cell in &result.cells {
            assert_eq!(cell.convergence_rate, 0.0);
            assert_eq!(cell.median_m, None);
            assert_eq!(cell.n_converged, 0);
        }
    }

    #[test]
    fn percentiles_are_ordered_in_every_cell() {
        let result = run_sweep(&small_spec()).unwrap();
        for cell in &result.cells {
            if let (Some(p25), Some(m), Some(p75)) = (cell.p25_m, cell.median_m, cell.p75_m) {
                assert!(p25 <= m && m <= p75);
            }
        }
    }
}
