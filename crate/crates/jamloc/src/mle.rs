//! Gated maximum-likelihood jammer localization.
//!
//! The estimator maximizes a Gaussian likelihood of the CNIR drops over the
//! jammer position `p0`, the per-receiver jamming scale `eta_i` and noise
//! variance `sigma2_i`, with the per-receiver pathloss exponent `alpha_i`
//! found by grid search. Only samples where jamming is actually detected
//! (`S - S_bar < gamma`) enter the residuals; everything else contributes
//! zero. The gated residual of one sample is
//!
//! ```text
//! X = S - S_bar + 10*log10(eta * d^-alpha + 1)
//! ```
//!
//! and the negative log-likelihood is
//!
//! ```text
//! NLL = sum_i [ (N_i/2) * ln(2*pi*sigma2_i) + sum_n X_i[n]^2 / (2*sigma2_i) ]
//! ```
//!
//! where `N_i` counts all samples of receiver `i`, gated or not. `sigma2_i`
//! has the closed form `mean(X_i^2)` and is refreshed after every descent
//! iteration, so the descent effectively minimizes the profile likelihood.
//!
//! The full pipeline in [`estimate`]:
//! 1. receivers with any detection participate;
//! 2. multistart gradient descent over `(p0, ln eta)` with a free-space
//!    pathloss prior (or the known exponent, if given);
//! 3. per-receiver pathloss grid search at the stage-1 optimum;
//! 4. receivers with `alpha_hat <= 2.3` are kept, the rest are excluded;
//! 5. a second multistart descent over the kept receivers.
//!
//! The descent takes damped Gauss-Newton steps (the normal matrix is
//! arrow-shaped, so the direction costs one 3x3 Schur solve on top of the
//! gradient pass) behind an Armijo backtracking line search with a
//! steepest-descent fallback, so the NLL never increases across accepted
//! iterations. `eta` is optimized as `ln eta` to stay positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::types::{
    db_to_linear, distance, CnirValue, ObservationSet, Position, ReceiverId, MIN_RANGE_M,
};
use rand_distr::{Distribution, Normal};

/// dB per natural log unit: `10 / ln(10)`.
const DB_PER_LN: f64 = 10.0 / std::f64::consts::LN_10;

/// Lower bound for the closed-form noise variance, dB^2.
pub const SIGMA2_FLOOR_DB2: f64 = 1e-6;

/// Pathloss exponent assumed during the first descent, before the grid
/// search has produced per-receiver estimates: free space.
pub const DEFAULT_STAGE1_ALPHA: f64 = 2.0;

const TAG_START: u64 = 0x6d73;

/// Pathloss exponent search grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid {
            min: 1.5,
            max: 4.0,
            step: 0.05,
        }
    }
}

impl AlphaGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.min >= 1.0) || !(self.min < self.max) || !(self.step > 0.0) {
            return Err(Error::invalid(
                "alpha grid must satisfy 1 <= min < max, step > 0",
            ));
        }
        Ok(())
    }

    /// Grid points, computed in integer micro-units so round values like
    /// 2.0 and 2.5 land exactly on the grid.
    pub fn values(&self) -> Vec<f64> {
        let scale = 1e6;
        let min_u = (self.min * scale).round() as i64;
        let max_u = (self.max * scale).round() as i64;
        let step_u = (self.step * scale).round().max(1.0) as i64;
        (0..)
            .map(|k| min_u + k * step_u)
            .take_while(|v| *v <= max_u)
            .map(|v| v as f64 / scale)
            .collect()
    }
}

fn default_threshold() -> f64 {
    2.3
}
fn default_max_iterations() -> usize {
    300
}
fn default_gradient_tolerance() -> f64 {
    1e-6
}
fn default_armijo_c() -> f64 {
    1e-4
}
fn default_backtrack_factor() -> f64 {
    0.5
}
fn default_max_backtracks() -> usize {
    50
}
fn default_multistart() -> usize {
    16
}

/// Estimator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub alpha_grid: AlphaGrid,
    /// Receivers whose estimated exponent exceeds this are excluded from
    /// the final estimation.
    pub alpha_select_threshold: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the scaled gradient sup-norm, relative to
    /// `max(1, |NLL|)`.
    pub gradient_tolerance: f64,
    /// Armijo sufficient-decrease constant of the backtracking line search.
    pub armijo_c: f64,
    /// Step shrink factor per backtrack.
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Number of descent starts; the first is the detection-weighted
    /// centroid, the rest are random perturbations of it.
    pub multistart_count: usize,
    /// Fixed, known pathloss exponent. Skips the grid search and the
    /// receiver selection entirely.
    pub known_alpha: Option<f64>,
    /// Seed for the multistart perturbations.
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            alpha_grid: AlphaGrid::default(),
            alpha_select_threshold: default_threshold(),
            max_iterations: default_max_iterations(),
            gradient_tolerance: default_gradient_tolerance(),
            armijo_c: default_armijo_c(),
            backtrack_factor: default_backtrack_factor(),
            max_backtracks: default_max_backtracks(),
            multistart_count: default_multistart(),
            known_alpha: None,
            seed: 0,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        self.alpha_grid.validate()?;
        if self.alpha_select_threshold < self.alpha_grid.min
            || self.alpha_select_threshold > self.alpha_grid.max
        {
            return Err(Error::invalid(
                "selection threshold must lie within the alpha grid",
            ));
        }
        if self.multistart_count == 0 {
            return Err(Error::invalid("multistart count must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max iterations must be >= 1"));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::invalid("gradient tolerance must be positive"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0)
            || !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0)
        {
            return Err(Error::invalid("line search parameters out of range"));
        }
        if let Some(a) = self.known_alpha {
            if !(a >= 1.0) || !a.is_finite() {
                return Err(Error::invalid("known alpha must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Jamming parameters of one receiver inside a [`LikelihoodState`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverEstimate {
    pub receiver_id: ReceiverId,
    pub eta: f64,
    pub alpha: f64,
    pub sigma2: f64,
}

/// A full parameter tuple of the likelihood: jammer position plus
/// per-receiver `(eta, alpha, sigma2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodState {
    pub p0: Position,
    pub receivers: Vec<ReceiverEstimate>,
}

impl LikelihoodState {
    pub fn validate(&self) -> Result<()> {
        if !self.p0.is_finite() {
            return Err(Error::invalid("p0 must be finite"));
        }
        for r in &self.receivers {
            if !(r.eta >= 0.0) {
                return Err(Error::invalid("eta must be >= 0"));
            }
            if !(r.sigma2 > 0.0) {
                return Err(Error::invalid("sigma2 must be positive"));
            }
            if !(r.alpha >= 1.0) {
                return Err(Error::invalid("alpha must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Gradient of the negative log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct NllGradient {
    /// Partials w.r.t. the jammer coordinates, per meter.
    pub p0: [f64; 3],
    /// Partials w.r.t. `ln eta_i`, one per state receiver.
    pub ln_eta: Vec<f64>,
}

/// Result of estimating the pathloss exponent of one receiver by grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub receiver_id: ReceiverId,
    pub alpha: f64,
    pub eta: f64,
    pub sigma2: f64,
    /// NLL span across the grid; near zero when the data cannot
    /// distinguish exponents.
    pub nll_spread: f64,
    pub low_information: bool,
}

/// Final output of [`estimate`] (and, shape-wise, of the baseline methods).
///
/// The per-receiver arrays are parallel to the input receiver order; entries
/// are `null` for receivers that did not participate. `converged == false`
/// flags `p0_hat` as unreliable - callers must not treat it as a valid fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub p0_hat: Position,
    pub converged: bool,
    pub selected_receivers: Vec<ReceiverId>,
    pub alpha_hat: Vec<Option<f64>>,
    pub eta_hat: Vec<Option<f64>>,
    pub sigma2_hat: Vec<Option<f64>>,
    pub nll: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_3d_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_horizontal_m: Option<f64>,
}

impl EstimateReport {
    /// Attach error metrics against a known true jammer position.
    pub fn with_truth(mut self, truth: &Position) -> Self {
        self.error_3d_m = Some(distance(&self.p0_hat, truth));
        self.error_horizontal_m = Some(self.p0_hat.horizontal_distance_to(truth));
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The gated residual of one sample: `S - S_bar + 10*log10(eta*d^-alpha + 1)`
/// when the drop `S - S_bar` is below `gamma`, zero otherwise. Saturated
/// samples contribute zero. The distance is clamped at [`MIN_RANGE_M`].
pub fn gated_residual(
    value: CnirValue,
    s_bar_dbhz: f64,
    d_m: f64,
    eta: f64,
    alpha: f64,
    gamma_db: f64,
) -> f64 {
    match value {
        CnirValue::Saturated => 0.0,
        CnirValue::Db(s) => {
            let drop = s - s_bar_dbhz;
            if drop < gamma_db {
                let u = eta * d_m.max(MIN_RANGE_M).powf(-alpha);
                drop + DB_PER_LN * u.ln_1p()
            } else {
                0.0
            }
        }
    }
}

/// Closed-form noise variance: the mean of the squared gated residuals
/// (gated-out samples count as zeros), floored at [`SIGMA2_FLOOR_DB2`].
pub fn sigma2_closed_form(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return SIGMA2_FLOOR_DB2;
    }
    let mean_sq = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    mean_sq.max(SIGMA2_FLOOR_DB2)
}

// ---------------------------------------------------------------------------
// Likelihood evaluation core.
// ---------------------------------------------------------------------------

struct ActiveSample {
    pos: Position,
    /// `S - S_bar`, dB; below gamma by construction.
    delta_db: f64,
}

struct RxProblem {
    obs_index: usize,
    receiver_id: ReceiverId,
    alpha: f64,
    n_total: f64,
    active: Vec<ActiveSample>,
}

struct Problem {
    rx: Vec<RxProblem>,
    /// Half-diagonal of the horizontal bounding box of the involved track
    /// positions; characteristic length for scaling and start spreads.
    length_scale: f64,
    bbox: ([f64; 3], [f64; 3]),
}

impl Problem {
    /// Gather the gated-in samples of the given receivers. `alphas` is
    /// parallel to `indices`. Errors when not a single sample survives the
    /// gate anywhere.
    fn build(obs: &ObservationSet, indices: &[usize], alphas: &[f64]) -> Result<Problem> {
        let mut rx = Vec::with_capacity(indices.len());
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut total_active = 0usize;
        for (&i, &alpha) in indices.iter().zip(alphas) {
            let r = obs
                .receivers
                .get(i)
                .ok_or_else(|| Error::invalid(format!("receiver index {i} out of range")))?;
            let mut active = Vec::new();
            for (t, s) in r.track.samples().iter().zip(r.series.samples()) {
                let p = t.position;
                lo[0] = lo[0].min(p.x);
                lo[1] = lo[1].min(p.y);
                lo[2] = lo[2].min(p.z);
                hi[0] = hi[0].max(p.x);
                hi[1] = hi[1].max(p.y);
                hi[2] = hi[2].max(p.z);
                if let CnirValue::Db(v) = s.value {
                    let delta = v - r.baseline.s_bar_dbhz;
                    if delta < obs.gamma_db {
                        active.push(ActiveSample {
                            pos: p,
                            delta_db: delta,
                        });
                    }
                }
            }
            total_active += active.len();
            rx.push(RxProblem {
                obs_index: i,
                receiver_id: r.receiver_id(),
                alpha,
                n_total: r.series.len() as f64,
                active,
            });
        }
        if total_active == 0 {
            return Err(Error::impossible(
                "no sample passes the detection gate; nothing constrains the position",
            ));
        }
        let length_scale =
            (0.5 * ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()).max(1.0);
        Ok(Problem {
            rx,
            length_scale,
            bbox: (lo, hi),
        })
    }

    fn dim(&self) -> usize {
        3 + self.rx.len()
    }

    /// Per-receiver sum of squared gated residuals at `(p0, eta)`.
    fn residual_sumsq(&self, p0: &Position, eta: &[f64]) -> Vec<f64> {
        self.rx
            .iter()
            .zip(eta)
            .map(|(rx, &eta)| {
                rx.active
                    .iter()
                    .map(|s| {
                        let d = distance(p0, &s.pos).max(MIN_RANGE_M);
                        let u = eta * d.powf(-rx.alpha);
                        let x = s.delta_db + DB_PER_LN * u.ln_1p();
                        x * x
                    })
                    .sum()
            })
            .collect()
    }

    fn sums_to_sigma2(&self, sums: &[f64]) -> Vec<f64> {
        sums.iter()
            .zip(&self.rx)
            .map(|(&ss, rx)| (ss / rx.n_total).max(SIGMA2_FLOOR_DB2))
            .collect()
    }

    fn refresh_sigma2(&self, p0: &Position, eta: &[f64]) -> Vec<f64> {
        self.sums_to_sigma2(&self.residual_sumsq(p0, eta))
    }

    fn nll_of_sums(&self, sums: &[f64], sigma2: &[f64]) -> f64 {
        self.rx
            .iter()
            .zip(sums)
            .zip(sigma2)
            .map(|((rx, &ss), &s2)| {
                0.5 * rx.n_total * (std::f64::consts::TAU * s2).ln() + 0.5 * ss / s2
            })
            .sum()
    }

    fn nll(&self, p0: &Position, eta: &[f64], sigma2: &[f64]) -> f64 {
        self.nll_of_sums(&self.residual_sumsq(p0, eta), sigma2)
    }

    /// NLL and its gradient w.r.t. `[x0, y0, z0, ln eta_1, ..]` at fixed
    /// `sigma2` and fixed gating. Samples at the clamped minimum range have
    /// zero position gradient.
    fn nll_grad(&self, p0: &Position, eta: &[f64], sigma2: &[f64]) -> (f64, Vec<f64>) {
        let (f, g, _) = self.nll_grad_gn(p0, eta, sigma2, 1.0);
        (f, g)
    }

    /// Like [`Problem::nll_grad`] but also assembles the Gauss-Newton
    /// normal blocks of the weighted residual sum in scaled variables
    /// (`pos_scale` multiplies the position partials). The normal matrix is
    /// arrow-shaped: a dense 3x3 position block `a`, one 3-vector coupling
    /// `b[j]` and one diagonal entry `d[j]` per receiver.
    fn nll_grad_gn(
        &self,
        p0: &Position,
        eta: &[f64],
        sigma2: &[f64],
        pos_scale: f64,
    ) -> (f64, Vec<f64>, GnBlocks) {
        let mut f = 0.0;
        let mut g = vec![0.0; self.dim()];
        let mut gn = GnBlocks {
            a: [[0.0; 3]; 3],
            b: vec![[0.0; 3]; self.rx.len()],
            d: vec![0.0; self.rx.len()],
        };
        for (j, (rx, &eta_j)) in self.rx.iter().zip(eta).enumerate() {
            let s2 = sigma2[j];
            let inv_s2 = 1.0 / s2;
            let mut sumsq = 0.0;
            for s in &rx.active {
                let dx = p0.x - s.pos.x;
                let dy = p0.y - s.pos.y;
                let dz = p0.z - s.pos.z;
                let d_raw = (dx * dx + dy * dy + dz * dz).sqrt();
                let d = d_raw.max(MIN_RANGE_M);
                let u = eta_j * d.powf(-rx.alpha);
                let x = s.delta_db + DB_PER_LN * u.ln_1p();
                sumsq += x * x;
                let through = DB_PER_LN * u / (1.0 + u);
                // residual partials in scaled variables
                let mut a3 = [0.0f64; 3];
                if d_raw >= MIN_RANGE_M {
                    let c = -through * rx.alpha / (d * d) * pos_scale;
                    a3 = [c * dx, c * dy, c * dz];
                }
                let w = x * inv_s2;
                g[0] += w * a3[0];
                g[1] += w * a3[1];
                g[2] += w * a3[2];
                g[3 + j] += w * through;
                for r in 0..3 {
                    for c in r..3 {
                        gn.a[r][c] += inv_s2 * a3[r] * a3[c];
                    }
                    gn.b[j][r] += inv_s2 * a3[r] * through;
                }
                gn.d[j] += inv_s2 * through * through;
            }
            f += 0.5 * rx.n_total * (std::f64::consts::TAU * s2).ln() + 0.5 * inv_s2 * sumsq;
        }
        for r in 0..3 {
            for c in 0..r {
                gn.a[r][c] = gn.a[c][r];
            }
        }
        (f, g, gn)
    }
}

/// Gauss-Newton normal blocks of the arrow-shaped system.
struct GnBlocks {
    a: [[f64; 3]; 3],
    b: Vec<[f64; 3]>,
    d: Vec<f64>,
}

impl GnBlocks {
    /// Damped Gauss-Newton (Levenberg-Marquardt) direction via the Schur
    /// complement of the diagonal eta block. Returns `None` when the
    /// reduced 3x3 system is too ill-conditioned.
    #[allow(clippy::needless_range_loop)] // dense 3x3 kernels read best indexed
    fn lm_direction(&self, g: &[f64], mu: f64) -> Option<Vec<f64>> {
        let k = self.d.len();
        // Marquardt damping relative to the diagonal, with an absolute
        // floor so empty blocks stay invertible.
        let diag_max = {
            let mut m: f64 = 0.0;
            for r in 0..3 {
                m = m.max(self.a[r][r]);
            }
            for &dj in &self.d {
                m = m.max(dj);
            }
            m.max(1e-300)
        };
        let floor = 1e-12 * diag_max;
        let damp = |h: f64| h + mu * h.max(floor) + floor;

        let d_bar: Vec<f64> = self.d.iter().map(|&dj| damp(dj)).collect();
        // S = A_bar - sum_j b_j b_j^T / d_bar_j
        let mut s = [[0.0f64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                s[r][c] = self.a[r][c];
            }
            s[r][r] = damp(self.a[r][r]);
        }
        let mut rhs = [-g[0], -g[1], -g[2]];
        for j in 0..k {
            let bj = self.b[j];
            let inv_dj = 1.0 / d_bar[j];
            for r in 0..3 {
                for c in 0..3 {
                    s[r][c] -= bj[r] * bj[c] * inv_dj;
                }
                rhs[r] += bj[r] * g[3 + j] * inv_dj;
            }
        }
        let dp = solve3(&s, &rhs)?;
        let mut dir = vec![0.0; 3 + k];
        dir[..3].copy_from_slice(&dp);
        for j in 0..k {
            let bj = self.b[j];
            let bt_dp = bj[0] * dp[0] + bj[1] * dp[1] + bj[2] * dp[2];
            dir[3 + j] = -(g[3 + j] + bt_dp) / d_bar[j];
        }
        Some(dir)
    }
}

/// 3x3 linear solve with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve3(m: &[[f64; 3]; 3], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    let mut a = [[0.0f64; 4]; 3];
    let mut scale = 0.0f64;
    for r in 0..3 {
        for c in 0..3 {
            a[r][c] = m[r][c];
            scale = scale.max(m[r][c].abs());
        }
        a[r][3] = rhs[r];
    }
    if !(scale > 0.0) {
        return None;
    }
    for col in 0..3 {
        let pivot =
            (col..3).max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-14 * scale {
            return None;
        }
        a.swap(col, pivot);
        for r in (col + 1)..3 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = [0.0f64; 3];
    for r in (0..3).rev() {
        let mut acc = a[r][3];
        for c in (r + 1)..3 {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

fn state_problem(
    state: &LikelihoodState,
    obs: &ObservationSet,
) -> Result<(Problem, Vec<f64>, Vec<f64>)> {
    state.validate()?;
    let mut indices = Vec::with_capacity(state.receivers.len());
    for r in &state.receivers {
        let idx = obs
            .receivers
            .iter()
            .position(|o| o.receiver_id() == r.receiver_id)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "state receiver {} not in observations",
                    r.receiver_id
                ))
            })?;
        indices.push(idx);
    }
    let alphas: Vec<f64> = state.receivers.iter().map(|r| r.alpha).collect();
    let problem = Problem::build(obs, &indices, &alphas)?;
    let eta: Vec<f64> = state.receivers.iter().map(|r| r.eta).collect();
    let sigma2: Vec<f64> = state.receivers.iter().map(|r| r.sigma2).collect();
    Ok((problem, eta, sigma2))
}

/// Negative log of the gated likelihood at the given state.
pub fn negative_log_likelihood(state: &LikelihoodState, obs: &ObservationSet) -> Result<f64> {
    let (problem, eta, sigma2) = state_problem(state, obs)?;
    Ok(problem.nll(&state.p0, &eta, &sigma2))
}

/// Analytic partials of [`negative_log_likelihood`] w.r.t. the jammer
/// position and each receiver's `ln eta`, treating the gating membership and
/// `sigma2` as fixed.
pub fn gradient(state: &LikelihoodState, obs: &ObservationSet) -> Result<NllGradient> {
    let (problem, eta, sigma2) = state_problem(state, obs)?;
    let (_, g) = problem.nll_grad(&state.p0, &eta, &sigma2);
    Ok(NllGradient {
        p0: [g[0], g[1], g[2]],
        ln_eta: g[3..].to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Descent: damped Gauss-Newton directions behind Armijo backtracking.
// ---------------------------------------------------------------------------

struct DescentOutcome {
    p0: Position,
    eta: Vec<f64>,
    sigma2: Vec<f64>,
    nll: f64,
    iterations: usize,
    grad_converged: bool,
    /// NLL after each accepted iteration (with refreshed sigma2),
    /// starting at the initial point.
    nll_trace: Vec<f64>,
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Relative NLL improvement below which a stalled line search counts as
/// having hit the numerical floor of the objective.
const STALL_RELATIVE_IMPROVEMENT: f64 = 1e-9;
/// Relative improvement counting as "no progress" for the ftol rule.
const FTOL_RELATIVE: f64 = 1e-8;
/// Scaled step sup-norm counting as "not moving" for the ftol rule
/// (about millimeters in position at km-scale geometry).
const XTOL_SCALED: f64 = 1e-6;
/// Consecutive no-progress, no-move iterations after which the descent is
/// treated as converged at the numerical floor.
const FTOL_STREAK: usize = 5;

/// Descent in scaled variables `[x/L, y/L, z/L, ln eta..]` where `L` is the
/// track length scale; the scaling balances the position and `ln eta`
/// blocks, which otherwise differ by a factor of the geometry size.
///
/// Each iteration takes a damped Gauss-Newton step (falling back to
/// steepest descent when the reduced system is degenerate), backtracks it
/// under the Armijo condition, and then refreshes every `sigma2` with its
/// closed form - both moves only ever lower the NLL. The eta block is
/// strongly correlated with the radial position directions (long narrow
/// valleys); `ln eta` is additionally re-solved exactly by 1D search at the
/// start and whenever the line search stalls.
fn descend(problem: &Problem, p0_start: Position, cfg: &MleConfig) -> DescentOutcome {
    let ls = problem.length_scale;
    let unpack = |u: &[f64]| -> (Position, Vec<f64>) {
        (
            Position::new(u[0] * ls, u[1] * ls, u[2] * ls),
            u[3..].iter().map(|v| v.exp()).collect(),
        )
    };

    let mut u = vec![0.0; problem.dim()];
    u[0] = p0_start.x / ls;
    u[1] = p0_start.y / ls;
    u[2] = p0_start.z / ls;
    for (j, rx) in problem.rx.iter().enumerate() {
        u[3 + j] = initial_ln_eta(rx, &p0_start);
    }

    let tol_for = |f: f64| cfg.gradient_tolerance * f.abs().max(1.0);
    // exact eta re-solve; returns the candidate only if it does not
    // increase the NLL at the current sigma2 (it practically never does)
    let polished = |u: &[f64], sigma2: &[f64], f: f64, search: &EtaSearch| -> Option<Vec<f64>> {
        let (p0, _) = unpack(u);
        let mut un = u.to_vec();
        for (j, rx) in problem.rx.iter().enumerate() {
            if rx.active.is_empty() {
                continue;
            }
            let weighted: Vec<(f64, f64)> = rx
                .active
                .iter()
                .map(|s| {
                    let d = distance(&p0, &s.pos).max(MIN_RANGE_M);
                    (s.delta_db, d.powf(-rx.alpha))
                })
                .collect();
            let (_, eta) = minimize_eta_with(&weighted, search);
            un[3 + j] = eta.max(1e-300).ln();
        }
        let (p0n, etan) = unpack(&un);
        let fn_ = problem.nll(&p0n, &etan, sigma2);
        (fn_.is_finite() && fn_ <= f).then_some(un)
    };

    {
        let (p0_init, eta_init) = unpack(&u);
        let sigma2 = problem.refresh_sigma2(&p0_init, &eta_init);
        let f = problem.nll(&p0_init, &eta_init, &sigma2);
        if let Some(un) = polished(&u, &sigma2, f, &ETA_SEARCH_FULL) {
            u = un;
        }
    }

    let (p0_init, eta_init) = unpack(&u);
    let mut sigma2 = problem.refresh_sigma2(&p0_init, &eta_init);
    let (mut f, mut g, mut gn) = {
        let (p0, eta) = unpack(&u);
        problem.nll_grad_gn(&p0, &eta, &sigma2, ls)
    };
    let mut trace = vec![f];
    let mut mu = 1e-3; // Levenberg-Marquardt damping, adapted per iteration
    let mut iterations = 0;
    let mut last_rel_improvement = f64::INFINITY;
    let mut no_progress_streak = 0usize;
    let mut grad_converged = inf_norm(&g) <= tol_for(f);

    while iterations < cfg.max_iterations {
        if grad_converged {
            break;
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if !(g2 > 0.0) {
            grad_converged = true;
            break;
        }
        // damped Gauss-Newton direction; steepest descent as fallback
        let (dir, slope, full_step) = match gn.lm_direction(&g, mu) {
            Some(d) => {
                let slope: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
                if slope < 0.0 {
                    (d, slope, 1.0)
                } else {
                    let d: Vec<f64> = g.iter().map(|gi| -gi).collect();
                    (d, -g2, 0.05 / inf_norm(&g).max(1e-300))
                }
            }
            None => {
                let d: Vec<f64> = g.iter().map(|gi| -gi).collect();
                (d, -g2, 0.05 / inf_norm(&g).max(1e-300))
            }
        };

        let mut accepted = None;
        let mut lam = full_step;
        for _ in 0..cfg.max_backtracks {
            let un: Vec<f64> = u.iter().zip(&dir).map(|(ui, di)| ui + lam * di).collect();
            let (p0n, etan) = unpack(&un);
            let sums = problem.residual_sumsq(&p0n, &etan);
            let fn_ = problem.nll_of_sums(&sums, &sigma2);
            if fn_.is_finite() && fn_ <= f + cfg.armijo_c * lam * slope {
                accepted = Some((un, lam, sums));
                break;
            }
            lam *= cfg.backtrack_factor;
        }
        let Some((un, lam_used, sums)) = accepted else {
            // The line search cannot improve the NLL any further. Try one
            // exact eta re-solve; if that does not help either, we are at
            // the numerical floor (converged) unless progress was still
            // being made, which counts as a genuine stall (not converged).
            if let Some(un) = polished(&u, &sigma2, f, &ETA_SEARCH_FULL) {
                let (p0n, etan) = unpack(&un);
                let fn_ = problem.nll(&p0n, &etan, &sigma2);
                if fn_ < f - STALL_RELATIVE_IMPROVEMENT * f.abs().max(1.0) {
                    u = un;
                    sigma2 = {
                        let (p0n, etan) = unpack(&u);
                        problem.refresh_sigma2(&p0n, &etan)
                    };
                    let fge = {
                        let (p0, eta) = unpack(&u);
                        problem.nll_grad_gn(&p0, &eta, &sigma2, ls)
                    };
                    f = fge.0;
                    g = fge.1;
                    gn = fge.2;
                    trace.push(f);
                    iterations += 1;
                    mu = (mu * 4.0).min(1e8);
                    grad_converged = inf_norm(&g) <= tol_for(f);
                    continue;
                }
            }
            grad_converged = last_rel_improvement < STALL_RELATIVE_IMPROVEMENT
                || inf_norm(&g) <= 1e3 * tol_for(f);
            break;
        };
        iterations += 1;
        // classic LM damping update: relax after clean steps, stiffen
        // after backtracked ones
        mu = if lam_used >= full_step {
            (mu / 3.0).max(1e-12)
        } else {
            (mu * 4.0).min(1e8)
        };
        let step_inf: f64 = u
            .iter()
            .zip(&un)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = un;
        sigma2 = problem.sums_to_sigma2(&sums);
        let f_prev = f;
        let fge = {
            let (p0, eta) = unpack(&u);
            problem.nll_grad_gn(&p0, &eta, &sigma2, ls)
        };
        f = fge.0;
        g = fge.1;
        gn = fge.2;
        trace.push(f);
        last_rel_improvement = (f_prev - f) / f.abs().max(1.0);
        if last_rel_improvement < FTOL_RELATIVE && step_inf < XTOL_SCALED {
            no_progress_streak += 1;
            if no_progress_streak >= FTOL_STREAK {
                grad_converged = true;
                break;
            }
        } else {
            no_progress_streak = 0;
        }
        grad_converged = inf_norm(&g) <= tol_for(f);
    }

    let (p0, eta) = unpack(&u);
    DescentOutcome {
        p0,
        eta,
        sigma2,
        nll: f,
        iterations,
        grad_converged,
        nll_trace: trace,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Data-driven starting value for `ln eta`: invert the model at each active
/// sample and take the median implied eta.
fn initial_ln_eta(rx: &RxProblem, p0: &Position) -> f64 {
    let mut implied: Vec<f64> = rx
        .active
        .iter()
        .filter_map(|s| {
            let u = db_to_linear(-s.delta_db) - 1.0;
            if u > 0.0 {
                let d = distance(p0, &s.pos).max(MIN_RANGE_M);
                Some((u * d.powf(rx.alpha)).max(1e-12))
            } else {
                None
            }
        })
        .collect();
    if implied.is_empty() {
        0.0
    } else {
        median(&mut implied).ln()
    }
}

/// Multistart positions: the detection-weighted centroid of the receiver
/// positions first, then seeded Gaussian perturbations with std equal to the
/// track bounding-box radius; z starts at the mean receiver altitude.
fn make_starts(obs: &ObservationSet, indices: &[usize], cfg: &MleConfig) -> Vec<Position> {
    let mut sum = [0.0f64; 2];
    let mut count = 0usize;
    let mut z_sum = 0.0;
    let mut z_count = 0usize;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &i in indices {
        let r = &obs.receivers[i];
        for (t, det) in r.track.samples().iter().zip(r.mask.detected()) {
            z_sum += t.position.z;
            z_count += 1;
            lo[0] = lo[0].min(t.position.x);
            lo[1] = lo[1].min(t.position.y);
            hi[0] = hi[0].max(t.position.x);
            hi[1] = hi[1].max(t.position.y);
            if *det {
                sum[0] += t.position.x;
                sum[1] += t.position.y;
                count += 1;
            }
        }
    }
    let z0 = if z_count > 0 {
        z_sum / z_count as f64
    } else {
        0.0
    };
    let centroid = if count > 0 {
        Position::new(sum[0] / count as f64, sum[1] / count as f64, z0)
    } else {
        Position::new(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), z0)
    };
    let radius = (0.5 * ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()).max(1.0);

    let mut starts = vec![centroid];
    let mut rng = stream_rng(cfg.seed, TAG_START, 0);
    let normal = Normal::new(0.0, radius).expect("positive std");
    for _ in 1..cfg.multistart_count {
        starts.push(Position::new(
            centroid.x + normal.sample(&mut rng),
            centroid.y + normal.sample(&mut rng),
            z0,
        ));
    }
    starts
}

/// Run the descent from every start and keep the outcome with the lowest
/// NLL; the likelihood decides, the winner's convergence status is reported.
fn multistart_descend(problem: &Problem, starts: &[Position], cfg: &MleConfig) -> DescentOutcome {
    let mut best: Option<DescentOutcome> = None;
    for &start in starts {
        let out = descend(problem, start, cfg);
        if best.as_ref().is_none_or(|b| out.nll < b.nll) {
            best = Some(out);
        }
    }
    best.expect("at least one start")
}

// ---------------------------------------------------------------------------
// Pathloss grid search and receiver selection.
// ---------------------------------------------------------------------------

/// Profile NLL of one receiver given its residual sum of squares.
fn profile_nll(sumsq: f64, n_total: f64) -> f64 {
    let s2 = (sumsq / n_total).max(SIGMA2_FLOOR_DB2);
    0.5 * n_total * (std::f64::consts::TAU * s2).ln() + 0.5 * sumsq / s2
}

/// Precision of the 1D eta search: coarse-scan geometry plus
/// golden-section refinement depth.
struct EtaSearch {
    span: f64,
    points: usize,
    golden_iters: usize,
}

/// Full precision, used at descent start/stall and by the pathloss grid
/// search where exact noiseless recovery matters.
const ETA_SEARCH_FULL: EtaSearch = EtaSearch {
    span: 15.0,
    points: 61,
    golden_iters: 70,
};

/// Minimize the residual sum of squares over `ln eta` for fixed weights
/// `w_n = d_n^-alpha`: coarse scan around the data-implied eta, then
/// golden-section refinement.
fn minimize_eta(samples: &[(f64, f64)]) -> (f64, f64) {
    minimize_eta_with(samples, &ETA_SEARCH_FULL)
}

fn minimize_eta_with(samples: &[(f64, f64)], search: &EtaSearch) -> (f64, f64) {
    let h = |ln_eta: f64| -> f64 {
        let eta = ln_eta.exp();
        samples
            .iter()
            .map(|&(delta, w)| {
                let x = delta + DB_PER_LN * (eta * w).ln_1p();
                x * x
            })
            .sum()
    };

    let mut implied: Vec<f64> = samples
        .iter()
        .filter_map(|&(delta, w)| {
            let u = db_to_linear(-delta) - 1.0;
            if u > 0.0 && w > 0.0 {
                Some((u / w).max(1e-300))
            } else {
                None
            }
        })
        .collect();
    let center = if implied.is_empty() {
        0.0
    } else {
        median(&mut implied).ln()
    };

    let span = search.span;
    let points = search.points;
    let step = 2.0 * span / (points - 1) as f64;
    let mut best_k = 0;
    let mut best_val = f64::INFINITY;
    for k in 0..points {
        let v = h(center - span + k as f64 * step);
        if v < best_val {
            best_val = v;
            best_k = k;
        }
    }
    let a = center - span + (best_k as f64 - 1.0) * step;
    let b = center - span + (best_k as f64 + 1.0) * step;

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = h(c);
    let mut fd = h(d);
    for _ in 0..search.golden_iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = h(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = h(d);
        }
    }
    let ln_eta = 0.5 * (a + b);
    (h(ln_eta), ln_eta.exp())
}

/// For each receiver, the grid exponent minimizing that receiver's profile
/// NLL at the candidate position, with eta re-optimized per grid point.
/// Receivers whose NLL barely varies across the grid are flagged
/// low-information.
pub fn alpha_grid_search(
    obs: &ObservationSet,
    p0: &Position,
    config: &MleConfig,
) -> Result<Vec<AlphaEstimate>> {
    config.alpha_grid.validate()?;
    let grid = config.alpha_grid.values();
    obs.receivers
        .iter()
        .map(|r| {
            let active: Vec<(f64, f64)> = r
                .track
                .samples()
                .iter()
                .zip(r.series.samples())
                .filter_map(|(t, s)| {
                    s.value.db().and_then(|v| {
                        let delta = v - r.baseline.s_bar_dbhz;
                        (delta < obs.gamma_db)
                            .then(|| (delta, distance(p0, &t.position).max(MIN_RANGE_M)))
                    })
                })
                .collect();
            let n_total = r.series.len() as f64;
            if active.is_empty() {
                return Ok(AlphaEstimate {
                    receiver_id: r.receiver_id(),
                    alpha: DEFAULT_STAGE1_ALPHA,
                    eta: 0.0,
                    sigma2: SIGMA2_FLOOR_DB2,
                    nll_spread: 0.0,
                    low_information: true,
                });
            }
            let mut best: Option<(f64, f64, f64, f64)> = None; // (nll, alpha, eta, sumsq)
            let mut worst = f64::NEG_INFINITY;
            for &alpha in &grid {
                let weighted: Vec<(f64, f64)> = active
                    .iter()
                    .map(|&(delta, d)| (delta, d.powf(-alpha)))
                    .collect();
                let (sumsq, eta) = minimize_eta(&weighted);
                let nll = profile_nll(sumsq, n_total);
                worst = worst.max(nll);
                if best.is_none_or(|(bn, ..)| nll < bn) {
                    best = Some((nll, alpha, eta, sumsq));
                }
            }
            let (nll_min, alpha, eta, sumsq) = best.expect("non-empty grid");
            let spread = worst - nll_min;
            Ok(AlphaEstimate {
                receiver_id: r.receiver_id(),
                alpha,
                eta,
                sigma2: (sumsq / n_total).max(SIGMA2_FLOOR_DB2),
                nll_spread: spread,
                low_information: spread < 1e-3 * nll_min.abs().max(1.0),
            })
        })
        .collect()
}

/// Keep receivers whose estimated exponent is at most `threshold` and that
/// detected the attack at all. Fewer than three kept receivers cannot pin a
/// position.
pub fn select_receivers(
    estimates: &[AlphaEstimate],
    obs: &ObservationSet,
    threshold: f64,
) -> Result<Vec<ReceiverId>> {
    let mut selected: Vec<ReceiverId> = estimates
        .iter()
        .filter(|e| {
            e.alpha <= threshold
                && obs
                    .receivers
                    .iter()
                    .find(|r| r.receiver_id() == e.receiver_id)
                    .is_some_and(|r| r.mask.any_detected())
        })
        .map(|e| e.receiver_id)
        .collect();
    selected.sort();
    if selected.len() < 3 {
        return Err(Error::impossible(format!(
            "only {} receivers selected (alpha <= {threshold}); at least 3 needed",
            selected.len()
        )));
    }
    Ok(selected)
}

// ---------------------------------------------------------------------------
// Full pipeline.
// ---------------------------------------------------------------------------

fn inflated_bbox_contains(bbox: &([f64; 3], [f64; 3]), p: &Position, factor: f64) -> bool {
    let (lo, hi) = bbox;
    // isotropic inflation: flat track geometry must not make the z band
    // tighter than the horizontal one
    let half = (0..3).map(|i| 0.5 * (hi[i] - lo[i])).fold(1.0f64, f64::max) * factor;
    let coords = [p.x, p.y, p.z];
    for i in 0..3 {
        let center = 0.5 * (lo[i] + hi[i]);
        if (coords[i] - center).abs() > half {
            return false;
        }
    }
    true
}

/// Detection-gated maximum-likelihood estimate of the jammer position.
///
/// Fails with [`Error::EstimationImpossible`] when no receiver detects
/// jamming, when nothing passes the sample gate, or when fewer than three
/// receivers survive the pathloss selection.
pub fn estimate(obs: &ObservationSet, config: &MleConfig) -> Result<EstimateReport> {
    config.validate()?;
    let participants: Vec<usize> = obs
        .receivers
        .iter()
        .enumerate()
        .filter(|(_, r)| r.mask.any_detected())
        .map(|(i, _)| i)
        .collect();
    if participants.is_empty() {
        return Err(Error::impossible("no jamming detected"));
    }

    let stage1_alpha = config.known_alpha.unwrap_or(DEFAULT_STAGE1_ALPHA);
    let stage1_alphas = vec![stage1_alpha; participants.len()];
    let problem1 = Problem::build(obs, &participants, &stage1_alphas)?;
    let starts = make_starts(obs, &participants, config);
    let stage1 = multistart_descend(&problem1, &starts, config);

    let n = obs.receivers.len();
    let mut alpha_hat: Vec<Option<f64>> = vec![None; n];
    let mut eta_hat: Vec<Option<f64>> = vec![None; n];
    let mut sigma2_hat: Vec<Option<f64>> = vec![None; n];

    let (outcome, problem) = if config.known_alpha.is_some() {
        (stage1, problem1)
    } else {
        let grid_estimates = alpha_grid_search(obs, &stage1.p0, config)?;
        let selected_ids = select_receivers(&grid_estimates, obs, config.alpha_select_threshold)?;
        // grid results stand in for receivers that end up excluded
        for (i, _) in obs.receivers.iter().enumerate() {
            if participants.contains(&i) {
                let e = &grid_estimates[i];
                alpha_hat[i] = Some(e.alpha);
                eta_hat[i] = Some(e.eta);
                sigma2_hat[i] = Some(e.sigma2);
            }
        }
        let sel_indices: Vec<usize> = obs
            .receivers
            .iter()
            .enumerate()
            .filter(|(_, r)| selected_ids.contains(&r.receiver_id()))
            .map(|(i, _)| i)
            .collect();
        let sel_alphas: Vec<f64> = sel_indices
            .iter()
            .map(|&i| grid_estimates[i].alpha)
            .collect();
        let problem2 = Problem::build(obs, &sel_indices, &sel_alphas)?;
        let mut starts2 = make_starts(obs, &sel_indices, config);
        starts2.push(stage1.p0);
        let stage2 = multistart_descend(&problem2, &starts2, config);
        (stage2, problem2)
    };

    for (j, rx) in problem.rx.iter().enumerate() {
        alpha_hat[rx.obs_index] = Some(rx.alpha);
        eta_hat[rx.obs_index] = Some(outcome.eta[j]);
        sigma2_hat[rx.obs_index] = Some(outcome.sigma2[j]);
    }
    let mut selected_receivers: Vec<ReceiverId> =
        problem.rx.iter().map(|rx| rx.receiver_id).collect();
    selected_receivers.sort();

    let converged = outcome.grad_converged
        && outcome.nll.is_finite()
        && inflated_bbox_contains(&problem.bbox, &outcome.p0, 10.0);

    Ok(EstimateReport {
        method: "mle".to_string(),
        p0_hat: outcome.p0,
        converged,
        selected_receivers,
        alpha_hat,
        eta_hat,
        sigma2_hat,
        nll: outcome.nll,
        iterations: outcome.iterations,
        error_3d_m: None,
        error_horizontal_m: None,
    })
}

/// Like [`estimate`] but also returns the per-iteration NLL trace of the
/// winning descent; used by tests asserting monotone decrease.
pub fn estimate_with_trace(
    obs: &ObservationSet,
    config: &MleConfig,
) -> Result<(EstimateReport, Vec<f64>)> {
    config.validate()?;
    let participants: Vec<usize> = obs
        .receivers
        .iter()
        .enumerate()
        .filter(|(_, r)| r.mask.any_detected())
        .map(|(i, _)| i)
        .collect();
    if participants.is_empty() {
        return Err(Error::impossible("no jamming detected"));
    }
    let stage1_alpha = config.known_alpha.unwrap_or(DEFAULT_STAGE1_ALPHA);
    let alphas = vec![stage1_alpha; participants.len()];
    let problem = Problem::build(obs, &participants, &alphas)?;
    let starts = make_starts(obs, &participants, config);
    let outcome = multistart_descend(&problem, &starts, config);
    let trace = outcome.nll_trace.clone();
    let report = estimate(obs, config)?;
    Ok((report, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{build_observations_with_baselines, DetectionConfig};
    use crate::sim::{self, ScenarioSpec};
    use crate::types::{Baseline, CnirSample, CnirSeries, ReceiverTrack, TrackSample};

    #[test]
    fn alpha_grid_hits_round_values() {
        let grid = AlphaGrid::default().values();
        assert_eq!(grid.len(), 51);
        assert_eq!(grid[0], 1.5);
        assert_eq!(grid[10], 2.0);
        assert_eq!(grid[20], 2.5);
        assert_eq!(grid[50], 4.0);
        assert!((grid[29] - 2.95).abs() < 1e-12);
    }

    #[test]
    fn gated_residual_examples() {
        // drop above the threshold: gated out
        assert_eq!(
            gated_residual(CnirValue::Db(44.0), 45.0, 100.0, 5.0, 2.0, -3.0),
            0.0
        );
        // perfect model fit: drop of -10 dB with eta*d^-alpha = 9
        let x = gated_residual(CnirValue::Db(35.0), 45.0, 1.0, 9.0, 2.0, -3.0);
        assert!(x.abs() < 1e-12, "got {x}");
        // 2 dB of unexplained drop
        let x = gated_residual(CnirValue::Db(33.0), 45.0, 1.0, 9.0, 2.0, -3.0);
        assert!((x - (-2.0)).abs() < 1e-12, "got {x}");
        // saturated slots contribute nothing
        assert_eq!(
            gated_residual(CnirValue::Saturated, 45.0, 1.0, 9.0, 2.0, -3.0),
            0.0
        );
    }

    #[test]
    fn sigma2_closed_form_examples() {
        assert!((sigma2_closed_form(&[3.0, 3.0, 3.0]) - 9.0).abs() < 1e-12);
        assert!((sigma2_closed_form(&[0.0, 0.0, 2.0]) - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(sigma2_closed_form(&[0.0, 0.0]), SIGMA2_FLOOR_DB2);
        assert_eq!(sigma2_closed_form(&[]), SIGMA2_FLOOR_DB2);
    }

    /// One receiver, one usable sample, crafted drop.
    fn tiny_obs(drop_db: f64) -> ObservationSet {
        let id = ReceiverId(0);
        let track = ReceiverTrack::new(
            id,
            vec![
                TrackSample {
                    time_s: 0.0,
                    position: Position::new(100.0, 0.0, 0.0),
                },
                TrackSample {
                    time_s: 1.0,
                    position: Position::new(100.0, 10.0, 0.0),
                },
            ],
        )
        .unwrap();
        let series = CnirSeries::new(
            id,
            vec![
                CnirSample {
                    time_s: 0.0,
                    value: CnirValue::Db(45.0 + drop_db),
                },
                CnirSample {
                    time_s: 1.0,
                    value: CnirValue::Db(45.0),
                },
            ],
        )
        .unwrap();
        let baseline = Baseline {
            receiver_id: id,
            s_bar_dbhz: 45.0,
        };
        let mask = crate::detect::detect(
            &series,
            &baseline,
            &DetectionConfig {
                gamma_db: -3.0,
                ..DetectionConfig::default()
            },
        )
        .unwrap();
        ObservationSet::new(
            vec![crate::types::ReceiverObservations::new(track, series, baseline, mask).unwrap()],
            -3.0,
        )
        .unwrap()
    }

    fn tiny_state(eta: f64, sigma2: f64) -> LikelihoodState {
        LikelihoodState {
            p0: Position::new(0.0, 0.0, 0.0),
            receivers: vec![ReceiverEstimate {
                receiver_id: ReceiverId(0),
                eta,
                alpha: 2.0,
                sigma2,
            }],
        }
    }

    #[test]
    fn nll_constant_term_only() {
        // gated-in sample with a perfect fit: eta*d^-2 = 10^(10/10)-1 = 9 at d=100
        let obs = tiny_obs(-10.0);
        let eta = 9.0 * 100.0f64.powi(2);
        let nll = negative_log_likelihood(&tiny_state(eta, 1.0), &obs).unwrap();
        // N = 2 samples, one gated in with X = 0
        let expected = 2.0 * 0.5 * std::f64::consts::TAU.ln();
        assert!((nll - expected).abs() < 1e-9, "nll {nll} vs {expected}");
    }

    #[test]
    fn nll_single_residual() {
        // craft drop -5 and eta over-explaining it by 2 dB:
        // X = -5 + 10log10(u+1) = 2 => u = 10^0.7 - 1
        let obs = tiny_obs(-5.0);
        let u = db_to_linear(7.0) - 1.0;
        let eta = u * 100.0f64.powi(2);
        let nll = negative_log_likelihood(&tiny_state(eta, 1.0), &obs).unwrap();
        let expected = 2.0 * 0.5 * std::f64::consts::TAU.ln() + 0.5 * 4.0;
        assert!((nll - expected).abs() < 1e-9, "nll {nll} vs {expected}");
    }

    #[test]
    fn nll_sigma_doubling_adds_log2() {
        let obs = tiny_obs(-10.0);
        let eta = 9.0 * 100.0f64.powi(2);
        let n1 = negative_log_likelihood(&tiny_state(eta, 1.0), &obs).unwrap();
        let n2 = negative_log_likelihood(&tiny_state(eta, 2.0), &obs).unwrap();
        // zero residuals: doubling sigma2 adds (N/2) ln 2 with N = 2
        assert!((n2 - n1 - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn nll_errors_without_gated_samples() {
        let obs = tiny_obs(-1.0); // drop never crosses -3
        let err = negative_log_likelihood(&tiny_state(1.0, 1.0), &obs);
        assert!(matches!(err, Err(Error::EstimationImpossible(_))));
    }

    #[test]
    fn gradient_is_zero_for_eta_zero() {
        let obs = tiny_obs(-10.0);
        let g = gradient(&tiny_state(0.0, 1.0), &obs).unwrap();
        assert_eq!(g.p0, [0.0, 0.0, 0.0]);
        assert_eq!(g.ln_eta, vec![0.0]);
    }

    #[test]
    fn gradient_respects_mirror_symmetry() {
        // two receivers mirrored across the x axis, jammer on the axis
        let mut receivers = Vec::new();
        for (rid, sign) in [(0u32, 1.0f64), (1, -1.0)] {
            let id = ReceiverId(rid);
            let track = ReceiverTrack::new(
                id,
                vec![
                    TrackSample {
                        time_s: 0.0,
                        position: Position::new(50.0, sign * 80.0, 0.0),
                    },
                    TrackSample {
                        time_s: 1.0,
                        position: Position::new(60.0, sign * 80.0, 0.0),
                    },
                ],
            )
            .unwrap();
            let series = CnirSeries::new(
                id,
                vec![
                    CnirSample {
                        time_s: 0.0,
                        value: CnirValue::Db(38.0),
                    },
                    CnirSample {
                        time_s: 1.0,
                        value: CnirValue::Db(38.5),
                    },
                ],
            )
            .unwrap();
            let baseline = Baseline {
                receiver_id: id,
                s_bar_dbhz: 45.0,
            };
            let mask = crate::detect::detect(
                &series,
                &baseline,
                &DetectionConfig {
                    gamma_db: -3.0,
                    ..DetectionConfig::default()
                },
            )
            .unwrap();
            receivers.push(
                crate::types::ReceiverObservations::new(track, series, baseline, mask).unwrap(),
            );
        }
        let obs = ObservationSet::new(receivers, -3.0).unwrap();
        let state = LikelihoodState {
            p0: Position::new(10.0, 0.0, 0.0),
            receivers: vec![
                ReceiverEstimate {
                    receiver_id: ReceiverId(0),
                    eta: 5e4,
                    alpha: 2.0,
                    sigma2: 1.0,
                },
                ReceiverEstimate {
                    receiver_id: ReceiverId(1),
                    eta: 5e4,
                    alpha: 2.0,
                    sigma2: 1.0,
                },
            ],
        };
        let g = gradient(&state, &obs).unwrap();
        assert!(g.p0[1].abs() < 1e-12, "cross-axis component {}", g.p0[1]);
        assert!(g.p0[0].abs() > 0.0);
    }

    fn noiseless_observations(spec: &ScenarioSpec) -> (ObservationSet, Position) {
        let sim = sim::generate(spec).unwrap();
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
        (obs, sim.scenario.jammer_position)
    }

    #[test]
    fn grid_search_recovers_alpha_noiselessly() {
        for true_alpha in [2.0, 2.5] {
            let spec = ScenarioSpec {
                seed: 21,
                sigma_s_db: 0.0,
                alpha: sim::AlphaPolicy::Fixed { value: true_alpha },
                receiver_count: 3,
                ..ScenarioSpec::default()
            };
            let (obs, p0) = noiseless_observations(&spec);
            let est = alpha_grid_search(&obs, &p0, &MleConfig::default()).unwrap();
            for e in est {
                assert!(
                    (e.alpha - true_alpha).abs() < 1e-12,
                    "alpha {} for true {true_alpha}",
                    e.alpha
                );
                assert!(!e.low_information);
            }
        }
    }

    #[test]
    fn grid_search_flags_flat_data() {
        let spec = ScenarioSpec {
            seed: 22,
            sigma_s_db: 0.0,
            eta: sim::EtaPolicy::Explicit {
                values: vec![0.0; 2],
            },
            receiver_count: 2,
            ..ScenarioSpec::default()
        };
        let (obs, p0) = noiseless_observations(&spec);
        let est = alpha_grid_search(&obs, &p0, &MleConfig::default()).unwrap();
        assert!(est.iter().all(|e| e.low_information));
    }

    #[test]
    fn selection_examples() {
        let mk = |id: u32, alpha: f64| AlphaEstimate {
            receiver_id: ReceiverId(id),
            alpha,
            eta: 1.0,
            sigma2: 1.0,
            nll_spread: 10.0,
            low_information: false,
        };
        let spec = ScenarioSpec {
            seed: 23,
            receiver_count: 4,
            ..ScenarioSpec::default()
        };
        let (obs, _) = noiseless_observations(&spec);

        let est = vec![mk(0, 2.0), mk(1, 2.2), mk(2, 2.4), mk(3, 3.0)];
        // only two below threshold: unidentifiable
        assert!(select_receivers(&est, &obs, 2.3).is_err());

        let est = vec![mk(0, 2.0), mk(1, 2.2), mk(2, 2.3), mk(3, 3.0)];
        let sel = select_receivers(&est, &obs, 2.3).unwrap();
        assert_eq!(sel, vec![ReceiverId(0), ReceiverId(1), ReceiverId(2)]);

        let est = vec![mk(0, 2.0), mk(1, 2.0), mk(2, 2.0), mk(3, 2.0)];
        assert_eq!(select_receivers(&est, &obs, 2.3).unwrap().len(), 4);

        let est = vec![mk(0, 2.4), mk(1, 2.5), mk(2, 2.6), mk(3, 3.0)];
        assert!(select_receivers(&est, &obs, 2.3).is_err());
    }

    #[test]
    fn estimate_recovers_noiseless_jammer_with_known_alpha() {
        let spec = ScenarioSpec {
            seed: 31,
            sigma_s_db: 0.0,
            ..ScenarioSpec::default()
        };
        let (obs, truth) = noiseless_observations(&spec);
        let cfg = MleConfig {
            known_alpha: Some(2.0),
            seed: 1,
            ..MleConfig::default()
        };
        let report = estimate(&obs, &cfg).unwrap().with_truth(&truth);
        assert!(report.converged);
        let err = report.error_3d_m.unwrap();
        assert!(err < 1.0, "error {err} m");
    }

    #[test]
    fn estimate_without_detections_is_impossible() {
        let spec = ScenarioSpec {
            seed: 32,
            sigma_s_db: 0.0,
            eta: sim::EtaPolicy::Explicit {
                values: vec![0.0; 8],
            },
            ..ScenarioSpec::default()
        };
        let (obs, _) = noiseless_observations(&spec);
        let err = estimate(&obs, &MleConfig::default());
        assert!(matches!(err, Err(Error::EstimationImpossible(_))));
    }

    #[test]
    fn nll_trace_never_increases() {
        let spec = ScenarioSpec {
            seed: 33,
            ..ScenarioSpec::default()
        };
        let (obs, _) = noiseless_observations(&spec);
        let cfg = MleConfig {
            known_alpha: Some(2.0),
            ..MleConfig::default()
        };
        let (_, trace) = estimate_with_trace(&obs, &cfg).unwrap();
        assert!(trace.len() > 1);
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0),
                "NLL increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}
