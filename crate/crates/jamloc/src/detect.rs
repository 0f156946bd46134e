//! Jamming detection.
//!
//! A receiver is flagged as jammed at time `n` when its CNIR drop
//! `S_i[n] - S_bar_i` falls below the (negative) decision threshold gamma,
//! or when it is saturated and outputs nothing. The jam-free baseline
//! `S_bar_i` is the mean CNIR over an initialization window assumed free of
//! jamming.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Baseline, CnirSeries, CnirValue, DetectionMask, ObservationSet, ReceiverObservations,
    ReceiverTrack,
};

fn default_gamma() -> f64 {
    -3.0
}
fn default_window() -> f64 {
    300.0
}

/// Detection parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Decision threshold on `S - S_bar`, dB, strictly negative.
    pub gamma_db: f64,
    /// Length of the jam-free initialization window used for the baseline,
    /// seconds from the start of the series.
    pub baseline_window_s: f64,
    /// Optional centered moving-average width (odd sample count) applied to
    /// the CNIR drop before thresholding. Off by default.
    pub smoothing_window: Option<usize>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            gamma_db: default_gamma(),
            baseline_window_s: default_window(),
            smoothing_window: None,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_db < 0.0) {
            return Err(Error::invalid("gamma must be negative"));
        }
        if !(self.baseline_window_s > 0.0) {
            return Err(Error::invalid("baseline window must be positive"));
        }
        if let Some(w) = self.smoothing_window {
            if w == 0 || w % 2 == 0 {
                return Err(Error::invalid("smoothing window must be odd and >= 1"));
            }
        }
        Ok(())
    }
}

/// Minimum number of non-saturated samples required in the baseline window.
pub const MIN_BASELINE_SAMPLES: usize = 10;

/// Mean CNIR over the initialization window (assumed jam-free).
pub fn estimate_baseline(series: &CnirSeries, window_s: f64) -> Result<Baseline> {
    if !(window_s > 0.0) {
        return Err(Error::invalid("baseline window must be positive"));
    }
    let end = series.start_time_s() + window_s;
    let values: Vec<f64> = series
        .samples()
        .iter()
        .take_while(|s| s.time_s < end)
        .filter_map(|s| s.value.db())
        .collect();
    if values.len() < MIN_BASELINE_SAMPLES {
        return Err(Error::invalid(format!(
            "receiver {}: baseline window holds {} usable samples, need {}",
            series.receiver_id(),
            values.len(),
            MIN_BASELINE_SAMPLES
        )));
    }
    Ok(Baseline {
        receiver_id: series.receiver_id(),
        s_bar_dbhz: values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// Threshold the CNIR drop of every sample. Saturated samples are detected.
pub fn detect(
    series: &CnirSeries,
    baseline: &Baseline,
    config: &DetectionConfig,
) -> Result<DetectionMask> {
    config.validate()?;
    if baseline.receiver_id != series.receiver_id() {
        return Err(Error::invalid("baseline/series receiver id mismatch"));
    }
    if !baseline.s_bar_dbhz.is_finite() {
        return Err(Error::invalid("baseline must be finite"));
    }
    let drops: Vec<Option<f64>> = series
        .samples()
        .iter()
        .map(|s| s.value.db().map(|v| v - baseline.s_bar_dbhz))
        .collect();
    let effective: Vec<Option<f64>> = match config.smoothing_window {
        None | Some(1) => drops.clone(),
        Some(w) => smoothed_drops_with_window(&drops, w),
    };
    let detected = series
        .samples()
        .iter()
        .zip(&effective)
        .map(|(s, drop)| match (s.value, drop) {
            (CnirValue::Saturated, _) => true,
            (_, Some(d)) => *d < config.gamma_db,
            (_, None) => true,
        })
        .collect();
    Ok(DetectionMask::new(series.receiver_id(), detected))
}

/// Centered moving average over available (non-saturated) drops; the window
/// truncates at the series edges and around saturated slots.
fn smoothed_drops_with_window(drops: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let half = window / 2;
    (0..drops.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(drops.len() - 1);
            let vals: Vec<f64> = drops[lo..=hi].iter().filter_map(|d| *d).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect()
}

/// Probability that pure baseline noise of std `sigma_db` dips below the
/// threshold: the Gaussian tail `Phi(gamma / sigma)`.
pub fn expected_false_alarm_rate(gamma_db: f64, sigma_db: f64) -> f64 {
    if sigma_db <= 0.0 {
        return 0.0;
    }
    0.5 * libm::erfc(-(gamma_db / sigma_db) / std::f64::consts::SQRT_2)
}

/// Assemble the estimator input from tracks and series: estimates each
/// receiver's baseline over the initialization window, builds its detection
/// mask and validates track/series alignment.
pub fn build_observations(
    tracks: Vec<ReceiverTrack>,
    series: Vec<CnirSeries>,
    config: &DetectionConfig,
) -> Result<ObservationSet> {
    config.validate()?;
    if tracks.len() != series.len() {
        return Err(Error::invalid(format!(
            "{} tracks but {} series",
            tracks.len(),
            series.len()
        )));
    }
    let receivers = tracks
        .into_iter()
        .zip(series)
        .map(|(track, series)| {
            let baseline = estimate_baseline(&series, config.baseline_window_s)?;
            let mask = detect(&series, &baseline, config)?;
            ReceiverObservations::new(track, series, baseline, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(receivers, config.gamma_db)
}

/// Same as [`build_observations`] but with externally known baselines
/// (for example ground truth in noiseless tests).
pub fn build_observations_with_baselines(
    tracks: Vec<ReceiverTrack>,
    series: Vec<CnirSeries>,
    baselines: Vec<Baseline>,
    config: &DetectionConfig,
) -> Result<ObservationSet> {
    config.validate()?;
    if tracks.len() != series.len() || tracks.len() != baselines.len() {
        return Err(Error::invalid(
            "tracks, series and baselines must have equal length",
        ));
    }
    let receivers = tracks
        .into_iter()
        .zip(series)
        .zip(baselines)
        .map(|((track, series), baseline)| {
            let mask = detect(&series, &baseline, config)?;
            ReceiverObservations::new(track, series, baseline, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(receivers, config.gamma_db)
}
