//! Shared domain types.
//!
//! Positions live in a flat local Cartesian frame (ENU-style, meters);
//! geodetic conversion is out of scope. CNIR values are carried in dB-Hz.
//! All types are immutable value types after construction and safe to share
//! across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Receiver-jammer distances are clamped below at this range (meters) inside
/// the measurement model and the likelihood; a handheld receiver cannot
/// co-locate with the jammer antenna.
pub const MIN_RANGE_M: f64 = 1.0;

/// `10^(db/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `10*log10(x)`.
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// CNIR suppression `10*log10(1 + jnr)` caused by a linear
/// jamming-to-noise ratio, in dB. Stable for tiny ratios.
pub fn cnir_suppression_db(jnr_linear: f64) -> f64 {
    (10.0 / std::f64::consts::LN_10) * jnr_linear.ln_1p()
}

/// A point in the local Cartesian frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Self {
        Position::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        distance(self, other)
    }

    /// Horizontal (x, y) distance, ignoring z.
    pub fn horizontal_distance_to(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Euclidean distance between two points, meters.
pub fn distance(a: &Position, b: &Position) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Identifier of one participating receiver (sensor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReceiverId(pub u32);

impl std::fmt::Display for ReceiverId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One timestamped position of a receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub time_s: f64,
    pub position: Position,
}

/// The known movement of one receiver: strictly increasing timestamps,
/// at least two samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverTrack {
    receiver_id: ReceiverId,
    samples: Vec<TrackSample>,
}

impl ReceiverTrack {
    pub fn new(receiver_id: ReceiverId, samples: Vec<TrackSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid(format!(
                "track for receiver {receiver_id} needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        for s in &samples {
            if !s.time_s.is_finite() || !s.position.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite track sample for receiver {receiver_id}"
                )));
            }
        }
        if samples.windows(2).any(|w| w[1].time_s <= w[0].time_s) {
            return Err(Error::invalid(format!(
                "track timestamps for receiver {receiverid} must be strictly increasing",
                receiverid = receiver_id
            )));
        }
        Ok(ReceiverTrack {
            receiver_id,
            samples,
        })
    }

    pub fn receiver_id(&self) -> ReceiverId {
        self.receiver_id
    }

    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least 2 samples by construction
    }

    /// Mean altitude over the whole track.
    pub fn mean_altitude(&self) -> f64 {
        self.samples.iter().map(|s| s.position.z).sum::<f64>() / self.samples.len() as f64
    }
}

/// A CNIR sample slot: either a measured value in dB-Hz or a marker that the
/// receiver was saturated and produced no output at that instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CnirValue {
    Db(f64),
    Saturated,
}

impl CnirValue {
    pub fn db(self) -> Option<f64> {
        match self {
            CnirValue::Db(v) => Some(v),
            CnirValue::Saturated => None,
        }
    }

    pub fn is_saturated(self) -> bool {
        matches!(self, CnirValue::Saturated)
    }
}

/// One timestamped averaged-CNIR measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnirSample {
    pub time_s: f64,
    pub value: CnirValue,
}

/// Per-satellite CNIR values reported at one epoch. An empty list marks an
/// epoch where the receiver output nothing (saturated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteCnirSample {
    pub time_s: f64,
    pub cn0_dbhz: Vec<f64>,
}

impl SatelliteCnirSample {
    pub fn is_saturated(&self) -> bool {
        self.cn0_dbhz.is_empty()
    }
}

/// The averaged CNIR time series of one receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnirSeries {
    receiver_id: ReceiverId,
    samples: Vec<CnirSample>,
}

impl CnirSeries {
    pub fn new(receiver_id: ReceiverId, samples: Vec<CnirSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid(format!(
                "CNIR series for receiver {receiver_id} is empty"
            )));
        }
        for s in &samples {
            if !s.time_s.is_finite() {
                return Err(Error::invalid("non-finite CNIR timestamp"));
            }
            if let CnirValue::Db(v) = s.value {
                if !v.is_finite() {
                    return Err(Error::invalid("non-finite CNIR value"));
                }
            }
        }
        if samples.windows(2).any(|w| w[1].time_s <= w[0].time_s) {
            return Err(Error::invalid(format!(
                "CNIR timestamps for receiver {receiver_id} must be strictly increasing"
            )));
        }
        Ok(CnirSeries {
            receiver_id,
            samples,
        })
    }

    pub fn receiver_id(&self) -> ReceiverId {
        self.receiver_id
    }

    pub fn samples(&self) -> &[CnirSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_time_s(&self) -> f64 {
        self.samples[0].time_s
    }
}

/// Jam-free mean CNIR of one receiver, estimated during initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub receiver_id: ReceiverId,
    pub s_bar_dbhz: f64,
}

/// Ground-truth jamming parameters of one receiver in a scenario.
///
/// `eta` is the combined unknown: jamming power times the propagation
/// constant over the receiver noise power, so the received
/// jamming-to-noise ratio at distance `d` is `eta * d^-alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverParams {
    pub receiver_id: ReceiverId,
    pub alpha: f64,
    pub eta: f64,
    pub sigma_s_db: f64,
    pub s_bar_dbhz: f64,
}

/// Ground truth of one simulated (or calibrated) scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub jammer_position: Position,
    pub receivers: Vec<ReceiverParams>,
    pub jam_start_time_s: f64,
    pub sample_rate_hz: f64,
    /// Noiseless CNIR below this level is reported as saturated.
    pub saturation_floor_dbhz: f64,
}

impl Scenario {
    /// Validates parameter ranges. `sigma_s_db` may be zero: the noiseless
    /// limit is used throughout testing.
    pub fn validate(&self) -> Result<()> {
        if !self.jammer_position.is_finite() {
            return Err(Error::invalid("jammer position must be finite"));
        }
        if self.sample_rate_hz <= 0.0 || !self.sample_rate_hz.is_finite() {
            return Err(Error::invalid("sample rate must be positive"));
        }
        for r in &self.receivers {
            if r.alpha < 1.0 || !r.alpha.is_finite() {
                return Err(Error::invalid(format!(
                    "receiver {}: pathloss exponent must be >= 1",
                    r.receiver_id
                )));
            }
            if r.eta < 0.0 || !r.eta.is_finite() {
                return Err(Error::invalid(format!(
                    "receiver {}: eta must be >= 0",
                    r.receiver_id
                )));
            }
            if r.sigma_s_db < 0.0 || !r.sigma_s_db.is_finite() {
                return Err(Error::invalid(format!(
                    "receiver {}: noise std must be >= 0",
                    r.receiver_id
                )));
            }
            if !r.s_bar_dbhz.is_finite() {
                return Err(Error::invalid(format!(
                    "receiver {}: baseline CNIR must be finite",
                    r.receiver_id
                )));
            }
        }
        Ok(())
    }

    pub fn params_for(&self, id: ReceiverId) -> Option<&ReceiverParams> {
        self.receivers.iter().find(|r| r.receiver_id == id)
    }
}

/// Per-sample jamming detection decisions for one receiver.
///
/// Saturated samples count as detected: a receiver that is silenced by the
/// jammer is certainly under attack even though it reports no CNIR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMask {
    receiver_id: ReceiverId,
    detected: Vec<bool>,
}

impl DetectionMask {
    pub fn new(receiver_id: ReceiverId, detected: Vec<bool>) -> Self {
        DetectionMask {
            receiver_id,
            detected,
        }
    }

    pub fn receiver_id(&self) -> ReceiverId {
        self.receiver_id
    }

    pub fn detected(&self) -> &[bool] {
        &self.detected
    }

    pub fn len(&self) -> usize {
        self.detected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detected.is_empty()
    }

    pub fn any_detected(&self) -> bool {
        self.detected.iter().any(|d| *d)
    }

    pub fn detected_count(&self) -> usize {
        self.detected.iter().filter(|d| **d).count()
    }

    pub fn detected_fraction(&self) -> f64 {
        if self.detected.is_empty() {
            0.0
        } else {
            self.detected_count() as f64 / self.detected.len() as f64
        }
    }
}

/// Everything known about one receiver: where it was, what it measured,
/// its jam-free baseline and its detection mask. Construction validates
/// that the series, the mask and the track are aligned one-to-one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverObservations {
    pub track: ReceiverTrack,
    pub series: CnirSeries,
    pub baseline: Baseline,
    pub mask: DetectionMask,
}

impl ReceiverObservations {
    pub fn new(
        track: ReceiverTrack,
        series: CnirSeries,
        baseline: Baseline,
        mask: DetectionMask,
    ) -> Result<Self> {
        let id = track.receiver_id();
        if series.receiver_id() != id || baseline.receiver_id != id || mask.receiver_id() != id {
            return Err(Error::invalid(format!(
                "mismatched receiver ids: track {id}, series {}, baseline {}, mask {}",
                series.receiver_id(),
                baseline.receiver_id,
                mask.receiver_id()
            )));
        }
        if series.len() != track.len() {
            return Err(Error::invalid(format!(
                "receiver {id}: series has {} samples but track has {}",
                series.len(),
                track.len()
            )));
        }
        if mask.len() != series.len() {
            return Err(Error::invalid(format!(
                "receiver {id}: mask has {} entries but series has {}",
                mask.len(),
                series.len()
            )));
        }
        let misaligned = track
            .samples()
            .iter()
            .zip(series.samples())
            .any(|(t, s)| t.time_s != s.time_s);
        if misaligned {
            return Err(Error::invalid(format!(
                "receiver {id}: series timestamps do not match track timestamps"
            )));
        }
        if !baseline.s_bar_dbhz.is_finite() {
            return Err(Error::invalid(format!(
                "receiver {id}: non-finite baseline"
            )));
        }
        Ok(ReceiverObservations {
            track,
            series,
            baseline,
            mask,
        })
    }

    pub fn receiver_id(&self) -> ReceiverId {
        self.track.receiver_id()
    }
}

/// The full input to the position estimators: a set of receivers plus the
/// detection threshold their masks were built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub receivers: Vec<ReceiverObservations>,
    /// Decision threshold (dB, negative) used both for the masks and for
    /// gating samples in the likelihood.
    pub gamma_db: f64,
}

impl ObservationSet {
    pub fn new(receivers: Vec<ReceiverObservations>, gamma_db: f64) -> Result<Self> {
        if gamma_db >= 0.0 || !gamma_db.is_finite() {
            return Err(Error::invalid("detection threshold gamma must be negative"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &receivers {
            if !seen.insert(r.receiver_id()) {
                return Err(Error::invalid(format!(
                    "duplicate receiver id {}",
                    r.receiver_id()
                )));
            }
        }
        Ok(ObservationSet {
            receivers,
            gamma_db,
        })
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }

    /// Restrict to a subset of receivers given by indices into `receivers`.
    pub fn subset(&self, indices: &[usize]) -> Result<ObservationSet> {
        let receivers = indices
            .iter()
            .map(|&i| {
                self.receivers
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("receiver index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        ObservationSet::new(receivers, self.gamma_db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_identity() {
        let o = Position::new(0.0, 0.0, 0.0);
        assert_eq!(distance(&o, &o), 0.0);
    }

    #[test]
    fn distance_3_4_5() {
        let a = Position::new(0.0, 0.0, 0.0);
        let b = Position::new(3.0, 4.0, 0.0);
        assert_eq!(distance(&a, &b), 5.0);
        assert_eq!(distance(&b, &a), 5.0);
    }

    #[test]
    fn distance_unit_diagonal() {
        let a = Position::new(1.0, 1.0, 1.0);
        let b = Position::new(2.0, 2.0, 2.0);
        assert!((distance(&a, &b) - 3.0f64.sqrt()).abs() < 1e-15);
    }

    fn sample(t: f64, x: f64) -> TrackSample {
        TrackSample {
            time_s: t,
            position: Position::new(x, 0.0, 0.0),
        }
    }

    #[test]
    fn track_rejects_short_and_unsorted() {
        let id = ReceiverId(0);
        assert!(ReceiverTrack::new(id, vec![sample(0.0, 0.0)]).is_err());
        assert!(ReceiverTrack::new(id, vec![sample(1.0, 0.0), sample(1.0, 1.0)]).is_err());
        assert!(ReceiverTrack::new(id, vec![sample(2.0, 0.0), sample(1.0, 1.0)]).is_err());
        assert!(ReceiverTrack::new(id, vec![sample(0.0, 0.0), sample(1.0, 1.0)]).is_ok());
    }

    #[test]
    fn observations_reject_misaligned_series() {
        let id = ReceiverId(3);
        let track = ReceiverTrack::new(id, vec![sample(0.0, 0.0), sample(1.0, 1.0)]).unwrap();
        let series_ok = CnirSeries::new(
            id,
            vec![
                CnirSample {
                    time_s: 0.0,
                    value: CnirValue::Db(45.0),
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
        let mask = DetectionMask::new(id, vec![false, false]);
        assert!(ReceiverObservations::new(
            track.clone(),
            series_ok.clone(),
            baseline,
            mask.clone()
        )
        .is_ok());

        let series_shifted = CnirSeries::new(
            id,
            vec![
                CnirSample {
                    time_s: 0.5,
                    value: CnirValue::Db(45.0),
                },
                CnirSample {
                    time_s: 1.5,
                    value: CnirValue::Db(45.0),
                },
            ],
        )
        .unwrap();
        assert!(
            ReceiverObservations::new(track.clone(), series_shifted, baseline, mask.clone())
                .is_err()
        );

        let series_short = CnirSeries::new(
            id,
            vec![CnirSample {
                time_s: 0.0,
                value: CnirValue::Db(45.0),
            }],
        )
        .unwrap();
        assert!(ReceiverObservations::new(track, series_short, baseline, mask).is_err());
    }

    #[test]
    fn observation_set_rejects_duplicates_and_bad_gamma() {
        let id = ReceiverId(1);
        let track = ReceiverTrack::new(id, vec![sample(0.0, 0.0), sample(1.0, 1.0)]).unwrap();
        let series = CnirSeries::new(
            id,
            vec![
                CnirSample {
                    time_s: 0.0,
                    value: CnirValue::Db(45.0),
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
        let mask = DetectionMask::new(id, vec![false, false]);
        let obs = ReceiverObservations::new(track, series, baseline, mask).unwrap();
        assert!(ObservationSet::new(vec![obs.clone()], 3.0).is_err());
        assert!(ObservationSet::new(vec![obs.clone(), obs.clone()], -3.0).is_err());
        assert!(ObservationSet::new(vec![obs], -3.0).is_ok());
    }
}
