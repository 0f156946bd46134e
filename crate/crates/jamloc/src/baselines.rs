//! Comparison estimators: detection-weighted mean position and calibrated
//! range least squares.
//!
//! The mean-position method simply averages the positions of receivers while
//! they detect jamming. The least-squares method inverts each detecting
//! sample's CNIR drop to a jamming-to-noise ratio, converts it to a range
//! using a free-space (`alpha = 2`) pathloss with a known calibration point,
//! and solves the linearized multilateration problem. Its published
//! description does not include the internal algebra, so the
//! subtract-reference linearization here is a reconstruction of the standard
//! approach rather than a replication.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::EstimateReport;
use crate::types::{db_to_linear, distance, ObservationSet, Position, ReceiverId, Scenario};

/// Jamming-to-noise ratio implied by a CNIR drop: `10^((S_bar - S)/10) - 1`,
/// clipped to zero when the measurement sits above the baseline.
pub fn jnr_from_cnir(s_dbhz: f64, s_bar_dbhz: f64) -> f64 {
    (db_to_linear(s_bar_dbhz - s_dbhz) - 1.0).max(0.0)
}

/// How the mean-position method aggregates detecting samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanPositionMode {
    /// Average over every detecting (receiver, time) pair; receivers with
    /// more detections weigh more.
    #[default]
    PerSample,
    /// Average each receiver's detected positions first, then average the
    /// receivers.
    PerReceiver,
}

/// Mean position of the receivers that detect the jamming.
pub fn mean_position_estimate(obs: &ObservationSet, mode: MeanPositionMode) -> Result<Position> {
    let mut receiver_means = Vec::new();
    let mut sample_sum = [0.0f64; 3];
    let mut sample_count = 0usize;
    for r in &obs.receivers {
        let mut sum = [0.0f64; 3];
        let mut count = 0usize;
        for (t, det) in r.track.samples().iter().zip(r.mask.detected()) {
            if *det {
                sum[0] += t.position.x;
                sum[1] += t.position.y;
                sum[2] += t.position.z;
                count += 1;
            }
        }
        if count > 0 {
            let c = count as f64;
            receiver_means.push(Position::new(sum[0] / c, sum[1] / c, sum[2] / c));
            sample_sum[0] += sum[0];
            sample_sum[1] += sum[1];
            sample_sum[2] += sum[2];
            sample_count += count;
        }
    }
    if sample_count == 0 {
        return Err(Error::impossible("no receiver detects the jamming"));
    }
    Ok(match mode {
        MeanPositionMode::PerSample => {
            let c = sample_count as f64;
            Position::new(sample_sum[0] / c, sample_sum[1] / c, sample_sum[2] / c)
        }
        MeanPositionMode::PerReceiver => {
            let c = receiver_means.len() as f64;
            let mut sum = [0.0f64; 3];
            for p in &receiver_means {
                sum[0] += p.x;
                sum[1] += p.y;
                sum[2] += p.z;
            }
            Position::new(sum[0] / c, sum[1] / c, sum[2] / c)
        }
    })
}

/// Known jamming-to-noise ratio at a known distance, per receiver or shared.
/// The least-squares method needs this calibration and assumes `alpha = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsCalibration {
    pub d_ref_m: f64,
    pub reference: CalibrationReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationReference {
    Shared(f64),
    PerReceiver(Vec<(ReceiverId, f64)>),
}

impl LsCalibration {
    pub fn shared(d_ref_m: f64, ratio: f64) -> Result<Self> {
        if !(d_ref_m > 0.0) || !(ratio > 0.0) {
            return Err(Error::invalid(
                "calibration distance and ratio must be positive",
            ));
        }
        Ok(LsCalibration {
            d_ref_m,
            reference: CalibrationReference::Shared(ratio),
        })
    }

    /// Perfect calibration from scenario ground truth: the ratio each
    /// receiver would measure at `d_ref_m` under its true pathloss.
    pub fn from_scenario(scenario: &Scenario, d_ref_m: f64) -> Result<Self> {
        if !(d_ref_m > 0.0) {
            return Err(Error::invalid("calibration distance must be positive"));
        }
        let ratios = scenario
            .receivers
            .iter()
            .map(|r| (r.receiver_id, r.eta * d_ref_m.powf(-r.alpha)))
            .collect();
        Ok(LsCalibration {
            d_ref_m,
            reference: CalibrationReference::PerReceiver(ratios),
        })
    }

    fn ratio_for(&self, id: ReceiverId) -> Result<f64> {
        match &self.reference {
            CalibrationReference::Shared(r) => Ok(*r),
            CalibrationReference::PerReceiver(list) => list
                .iter()
                .find(|(rid, _)| *rid == id)
                .map(|(_, r)| *r)
                .ok_or_else(|| Error::invalid(format!("no calibration for receiver {id}"))),
        }
    }
}

/// Relative range-residual level above which the least-squares solution is
/// rejected as inconsistent with a point source. Calibrated so that
/// measurement noise under a correct free-space model passes while
/// systematically inflated ranges from higher pathloss exponents fail
/// (reconstruction choice).
const LS_MAX_RELATIVE_RESIDUAL: f64 = 3.0;

/// Range-based least-squares position estimate.
///
/// Each detecting, non-saturated sample is converted to a range via the
/// calibrated `alpha = 2` pathloss; the subtract-reference linearization is
/// then solved in the least-squares sense. Fails on degenerate geometry,
/// on solutions far outside the sensed area and on range residuals too
/// large to describe a single source.
pub fn ls_estimate(obs: &ObservationSet, cal: &LsCalibration) -> Result<Position> {
    let (solution, rel_residual, in_bbox) = ls_estimate_diagnostics(obs, cal)?;
    if !in_bbox {
        return Err(Error::SingularSystem(
            "solution lies far outside the sensed area".to_string(),
        ));
    }
    if rel_residual > LS_MAX_RELATIVE_RESIDUAL {
        return Err(Error::SingularSystem(format!(
            "relative range residual {rel_residual:.2} inconsistent with a point source"
        )));
    }
    Ok(solution)
}

/// The raw least-squares solution plus its plausibility metrics: the median
/// range residual relative to the median range, and whether the solution
/// falls inside the 10x-inflated bounding box of the sample positions.
pub fn ls_estimate_diagnostics(
    obs: &ObservationSet,
    cal: &LsCalibration,
) -> Result<(Position, f64, bool)> {
    let mut rows: Vec<(Position, f64)> = Vec::new();
    let mut receivers_with_ranges = 0usize;
    for r in &obs.receivers {
        let ratio_ref = cal.ratio_for(r.receiver_id())?;
        if !(ratio_ref > 0.0) {
            return Err(Error::invalid(format!(
                "calibration ratio for receiver {} must be positive",
                r.receiver_id()
            )));
        }
        let mut usable = false;
        for ((t, s), det) in r
            .track
            .samples()
            .iter()
            .zip(r.series.samples())
            .zip(r.mask.detected())
        {
            if !det {
                continue;
            }
            let Some(v) = s.value.db() else { continue };
            let ratio = jnr_from_cnir(v, r.baseline.s_bar_dbhz);
            if ratio <= 0.0 {
                continue;
            }
            let d_hat = cal.d_ref_m * (ratio_ref / ratio).sqrt();
            rows.push((t.position, d_hat));
            usable = true;
        }
        if usable {
            receivers_with_ranges += 1;
        }
    }
    if receivers_with_ranges < 4 {
        return Err(Error::impossible(format!(
            "least squares needs ranges from at least 4 receivers, got {receivers_with_ranges}"
        )));
    }

    let solution = solve_multilateration(&rows)?;

    // physicality box: the full receiver tracks, inflated 10x
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for r in &obs.receivers {
        for t in r.track.samples() {
            for (i, c) in [t.position.x, t.position.y, t.position.z]
                .iter()
                .enumerate()
            {
                lo[i] = lo[i].min(*c);
                hi[i] = hi[i].max(*c);
            }
        }
    }
    // isotropic inflation: flat track geometry must not make the z band
    // tighter than the horizontal one
    let half = (0..3).map(|i| 0.5 * (hi[i] - lo[i])).fold(1.0f64, f64::max) * 10.0;
    let coords = [solution.x, solution.y, solution.z];
    let in_bbox = (0..3).all(|i| (coords[i] - 0.5 * (lo[i] + hi[i])).abs() <= half);

    let mut residuals: Vec<f64> = rows
        .iter()
        .map(|(p, d_hat)| (distance(&solution, p) - d_hat).abs())
        .collect();
    residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ranges: Vec<f64> = rows.iter().map(|(_, d)| *d).collect();
    ranges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med_res = residuals[residuals.len() / 2];
    let med_range = ranges[ranges.len() / 2];
    Ok((solution, med_res / med_range.max(1.0), in_bbox))
}

/// [`mean_position_estimate`] wrapped in the common report shape.
pub fn mean_position_report(
    obs: &ObservationSet,
    mode: MeanPositionMode,
) -> Result<EstimateReport> {
    let p0_hat = mean_position_estimate(obs, mode)?;
    let n = obs.receivers.len();
    let mut selected: Vec<ReceiverId> = obs
        .receivers
        .iter()
        .filter(|r| r.mask.any_detected())
        .map(|r| r.receiver_id())
        .collect();
    selected.sort();
    Ok(EstimateReport {
        method: "mean".to_string(),
        p0_hat,
        converged: true,
        selected_receivers: selected,
        alpha_hat: vec![None; n],
        eta_hat: vec![None; n],
        sigma2_hat: vec![None; n],
        nll: f64::NAN,
        iterations: 0,
        error_3d_m: None,
        error_horizontal_m: None,
    })
}

/// [`ls_estimate`] wrapped in the common report shape. The method assumes a
/// free-space exponent, so `alpha_hat` is 2 for every participating receiver.
pub fn ls_report(obs: &ObservationSet, cal: &LsCalibration) -> Result<EstimateReport> {
    let p0_hat = ls_estimate(obs, cal)?;
    let n = obs.receivers.len();
    let mut alpha_hat = vec![None; n];
    let mut selected = Vec::new();
    for (i, r) in obs.receivers.iter().enumerate() {
        if r.mask.any_detected() {
            alpha_hat[i] = Some(2.0);
            selected.push(r.receiver_id());
        }
    }
    selected.sort();
    Ok(EstimateReport {
        method: "ls".to_string(),
        p0_hat,
        converged: true,
        selected_receivers: selected,
        alpha_hat,
        eta_hat: vec![None; n],
        sigma2_hat: vec![None; n],
        nll: f64::NAN,
        iterations: 0,
        error_3d_m: None,
        error_horizontal_m: None,
    })
}

/// Subtract-reference linearization: with reference sample `(q0, r0)`,
/// every other `(qk, rk)` yields the linear row
/// `2 (qk - q0) . p = r0^2 - rk^2 + |qk|^2 - |q0|^2`.
fn solve_multilateration(rows: &[(Position, f64)]) -> Result<Position> {
    if rows.len() < 4 {
        return Err(Error::impossible("too few range rows"));
    }
    // center coordinates for conditioning
    let n = rows.len() as f64;
    let cx = rows.iter().map(|(p, _)| p.x).sum::<f64>() / n;
    let cy = rows.iter().map(|(p, _)| p.y).sum::<f64>() / n;
    let cz = rows.iter().map(|(p, _)| p.z).sum::<f64>() / n;

    let reference = rows
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.1.partial_cmp(&b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let (q0, r0) = rows[reference];
    let q0 = [q0.x - cx, q0.y - cy, q0.z - cz];
    let q0_sq = q0[0] * q0[0] + q0[1] * q0[1] + q0[2] * q0[2];

    let mut m = [[0.0f64; 3]; 3];
    let mut v = [0.0f64; 3];
    for (i, (p, rk)) in rows.iter().enumerate() {
        if i == reference {
            continue;
        }
        let q = [p.x - cx, p.y - cy, p.z - cz];
        let a = [
            2.0 * (q[0] - q0[0]),
            2.0 * (q[1] - q0[1]),
            2.0 * (q[2] - q0[2]),
        ];
        let q_sq = q[0] * q[0] + q[1] * q[1] + q[2] * q[2];
        let b = r0 * r0 - rk * rk + q_sq - q0_sq;
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += a[r] * a[c];
            }
            v[r] += a[r] * b;
        }
    }

    match solve_symmetric(&m, &v, 3) {
        Some(x) => Ok(Position::new(x[0] + cx, x[1] + cy, x[2] + cz)),
        None => {
            // horizontal-only fallback for coplanar geometry (all rows at
            // one altitude): estimate (x, y), pin z to the common plane.
            let m2 = [[m[0][0], m[0][1], 0.0], [m[1][0], m[1][1], 0.0], [0.0; 3]];
            match solve_symmetric(&m2, &[v[0], v[1], 0.0], 2) {
                Some(x) => {
                    let z = rows.iter().map(|(p, _)| p.z).sum::<f64>() / n;
                    Ok(Position::new(x[0] + cx, x[1] + cy, z))
                }
                None => Err(Error::SingularSystem(
                    "normal equations are singular (degenerate sample geometry)".to_string(),
                )),
            }
        }
    }
}

/// Gaussian elimination with partial pivoting on the leading `dim` block.
/// Returns `None` when a pivot is negligible relative to the matrix scale.
#[allow(clippy::needless_range_loop)] // dense 3x3 kernels read best indexed
fn solve_symmetric(m: &[[f64; 3]; 3], v: &[f64; 3], dim: usize) -> Option<[f64; 3]> {
    let mut a = [[0.0f64; 4]; 3];
    let mut scale = 0.0f64;
    for r in 0..dim {
        for c in 0..dim {
            a[r][c] = m[r][c];
            scale = scale.max(m[r][c].abs());
        }
        a[r][3] = v[r];
    }
    if scale <= 0.0 {
        return None;
    }
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())?;
        if a[pivot_row][col].abs() < 1e-10 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        for r in (col + 1)..dim {
            let f = a[r][col] / a[col][col];
            for c in col..=3 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = [0.0f64; 3];
    for r in (0..dim).rev() {
        let mut acc = a[r][3];
        for c in (r + 1)..dim {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{build_observations_with_baselines, DetectionConfig};
    use crate::sim::{self, ScenarioSpec};
    use crate::types::{
        Baseline, CnirSample, CnirSeries, CnirValue, DetectionMask, ReceiverObservations,
        ReceiverTrack, TrackSample,
    };

    #[test]
    fn jnr_examples() {
        assert_eq!(jnr_from_cnir(45.0, 45.0), 0.0);
        assert!((jnr_from_cnir(35.0, 45.0) - 9.0).abs() < 1e-12);
        assert!((jnr_from_cnir(45.0 - 3.0103, 45.0) - 1.0).abs() < 1e-4);
        // above-baseline measurements clip to zero
        assert_eq!(jnr_from_cnir(46.0, 45.0), 0.0);
    }

    fn stationary_obs(points: &[(Position, bool)]) -> ObservationSet {
        let receivers = points
            .iter()
            .enumerate()
            .map(|(i, (p, detects))| {
                let id = crate::types::ReceiverId(i as u32);
                let track = ReceiverTrack::new(
                    id,
                    vec![
                        TrackSample {
                            time_s: 0.0,
                            position: *p,
                        },
                        TrackSample {
                            time_s: 1.0,
                            position: *p,
                        },
                    ],
                )
                .unwrap();
                let series = CnirSeries::new(
                    id,
                    vec![
                        CnirSample {
                            time_s: 0.0,
                            value: CnirValue::Db(40.0),
                        },
                        CnirSample {
                            time_s: 1.0,
                            value: CnirValue::Db(40.0),
                        },
                    ],
                )
                .unwrap();
                let baseline = Baseline {
                    receiver_id: id,
                    s_bar_dbhz: 45.0,
                };
                let mask = DetectionMask::new(id, vec![*detects, *detects]);
                ReceiverObservations::new(track, series, baseline, mask).unwrap()
            })
            .collect();
        ObservationSet::new(receivers, -3.0).unwrap()
    }

    #[test]
    fn mean_position_single_receiver() {
        let p = Position::new(7.0, -2.0, 3.0);
        let obs = stationary_obs(&[(p, true)]);
        let est = mean_position_estimate(&obs, MeanPositionMode::PerSample).unwrap();
        assert_eq!(est, p);
    }

    #[test]
    fn mean_position_two_receivers() {
        let obs = stationary_obs(&[
            (Position::new(0.0, 0.0, 0.0), true),
            (Position::new(2.0, 0.0, 0.0), true),
        ]);
        for mode in [MeanPositionMode::PerSample, MeanPositionMode::PerReceiver] {
            let est = mean_position_estimate(&obs, mode).unwrap();
            assert_eq!(est, Position::new(1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn mean_position_without_detections_fails() {
        let obs = stationary_obs(&[(Position::new(0.0, 0.0, 0.0), false)]);
        assert!(matches!(
            mean_position_estimate(&obs, MeanPositionMode::PerSample),
            Err(Error::EstimationImpossible(_))
        ));
    }

    fn noiseless_alpha_obs(alpha: f64, seed: u64) -> (ObservationSet, Scenario) {
        let spec = ScenarioSpec {
            seed,
            sigma_s_db: 0.0,
            alpha: sim::AlphaPolicy::Fixed { value: alpha },
            ..ScenarioSpec::default()
        };
        let sim = sim::generate(&spec).unwrap();
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
        (obs, sim.scenario)
    }

    #[test]
    fn ls_recovers_noiseless_free_space_exactly() {
        let (obs, scenario) = noiseless_alpha_obs(2.0, 51);
        let cal = LsCalibration::from_scenario(&scenario, 100.0).unwrap();
        let est = ls_estimate(&obs, &cal).unwrap();
        let err = distance(&est, &scenario.jammer_position);
        assert!(err < 1e-6, "error {err} m");
    }

    #[test]
    fn ls_fails_or_degrades_on_higher_pathloss() {
        let (obs, scenario) = noiseless_alpha_obs(2.5, 52);
        let cal = LsCalibration::from_scenario(&scenario, 100.0).unwrap();
        match ls_estimate(&obs, &cal) {
            Err(Error::SingularSystem(_)) | Err(Error::EstimationImpossible(_)) => {}
            Ok(est) => {
                let err = distance(&est, &scenario.jammer_position);
                assert!(err > 100.0, "unexpectedly accurate: {err} m");
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn ls_rejects_degenerate_geometry() {
        let p = Position::new(10.0, 20.0, 0.0);
        let obs = stationary_obs(&[(p, true), (p, true), (p, true), (p, true)]);
        let cal = LsCalibration::shared(100.0, 9.0).unwrap();
        assert!(matches!(
            ls_estimate(&obs, &cal),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn ls_needs_four_receivers() {
        let (obs, scenario) = noiseless_alpha_obs(2.0, 53);
        let cal = LsCalibration::from_scenario(&scenario, 100.0).unwrap();
        let small = obs.subset(&[0, 1, 2]).unwrap();
        assert!(matches!(
            ls_estimate(&small, &cal),
            Err(Error::EstimationImpossible(_))
        ));
    }

    #[test]
    fn jnr_inverts_the_forward_model() {
        for jnr in [0.01, 1.0, 9.0, 250.0] {
            let s = 45.0 - crate::types::cnir_suppression_db(jnr);
            let back = jnr_from_cnir(s, 45.0);
            assert!((back - jnr).abs() / jnr < 1e-10, "jnr {jnr} -> {back}");
        }
    }
}
