//! Scenario simulation.
//!
//! Generates straight-line receiver tracks inside a bounding box and
//! synthesizes CNIR measurements from the log-domain pathloss model: the
//! averaged CNIR of receiver `i` at time `n` is
//!
//! ```text
//! S_i[n] = S_bar_i - 10*log10(eta_i * d_i[n]^-alpha_i + 1) + w,   w ~ N(0, sigma_i^2)
//! ```
//!
//! where `d_i[n]` is the receiver-jammer distance. Each receiver sits still
//! during the startup window (getting its position fix, jammer off), then
//! moves along a straight segment at constant speed while the jammer is on.
//! Distances are clamped below at [`MIN_RANGE_M`]: a handheld receiver cannot
//! co-locate with the jammer antenna.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::types::{
    cnir_suppression_db, db_to_linear, distance, CnirSample, CnirSeries, CnirValue, Position,
    ReceiverId, ReceiverParams, ReceiverTrack, Scenario, TrackSample, MIN_RANGE_M,
};

/// Pathloss exponents used by the mixed-pathloss evaluation scenarios:
/// free space, moderate obstruction, heavy obstruction.
pub const MIXED_ALPHA_CHOICES: [f64; 3] = [2.0, 2.5, 2.9338];

const TAG_TRACK: u64 = 0x7472;
const TAG_ALPHA: u64 = 0x616c;
const TAG_NOISE: u64 = 0x6e6f;

/// Axis-aligned box the tracks must stay inside, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Position,
    pub max: Position,
}

impl BoundingBox {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min.x && x <= self.max.x && y >= self.min.y && y <= self.max.y
    }

    pub fn xy_half_diagonal(&self) -> f64 {
        0.5 * ((self.max.x - self.min.x).powi(2) + (self.max.y - self.min.y).powi(2)).sqrt()
    }
}

/// Per-receiver pathloss exponent assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AlphaPolicy {
    /// Same exponent for every receiver.
    Fixed { value: f64 },
    /// Each receiver draws one value from the list (seeded).
    RandomChoice { values: Vec<f64> },
    /// Explicit per-receiver values, one per receiver.
    Explicit { values: Vec<f64> },
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Fixed { value: 2.0 }
    }
}

/// Per-receiver jamming scale assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum EtaPolicy {
    /// Explicit per-receiver eta values.
    Explicit { values: Vec<f64> },
    /// Choose each receiver's eta so its jamming-to-noise ratio reaches
    /// `excess_db` at that receiver's closest approach to the jammer.
    CalibratedExcess { excess_db: f64 },
}

impl Default for EtaPolicy {
    fn default() -> Self {
        EtaPolicy::CalibratedExcess { excess_db: 15.0 }
    }
}

fn default_config_version() -> u32 {
    1
}
fn default_receiver_count() -> usize {
    8
}
fn default_area() -> BoundingBox {
    BoundingBox {
        min: Position::new(-2000.0, -2000.0, 0.0),
        max: Position::new(2000.0, 2000.0, 30.0),
    }
}
fn default_speed() -> f64 {
    22.22 // 80 km/h
}
fn default_startup() -> f64 {
    300.0
}
fn default_jam_duration() -> f64 {
    150.0
}
fn default_rate() -> f64 {
    1.0
}
fn default_jammer_position() -> Position {
    Position::new(1000.0, 800.0, 10.0)
}
fn default_sigma() -> f64 {
    1.0
}
fn default_s_bar() -> f64 {
    45.0
}
fn default_saturation_floor() -> f64 {
    10.0
}

/// Everything needed to generate one scenario. Serializes to the JSON
/// scenario-spec document; omitted fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub config_version: u32,
    pub receiver_count: usize,
    pub area: BoundingBox,
    pub speed_mps: f64,
    /// Jam-free initialization window; receivers are stationary while
    /// acquiring their fix and the jammer is off.
    pub startup_duration_s: f64,
    /// Length of the jammed, moving phase.
    pub jam_duration_s: f64,
    pub sample_rate_hz: f64,
    pub jammer_position: Position,
    pub alpha: AlphaPolicy,
    pub eta: EtaPolicy,
    pub sigma_s_db: f64,
    pub s_bar_dbhz: f64,
    pub saturation_floor_dbhz: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            config_version: default_config_version(),
            receiver_count: default_receiver_count(),
            area: default_area(),
            speed_mps: default_speed(),
            startup_duration_s: default_startup(),
            jam_duration_s: default_jam_duration(),
            sample_rate_hz: default_rate(),
            jammer_position: default_jammer_position(),
            alpha: AlphaPolicy::default(),
            eta: EtaPolicy::default(),
            sigma_s_db: default_sigma(),
            s_bar_dbhz: default_s_bar(),
            saturation_floor_dbhz: default_saturation_floor(),
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.receiver_count == 0 {
            return Err(Error::invalid("receiver count must be positive"));
        }
        if !(self.speed_mps >= 0.0) {
            return Err(Error::invalid("speed must be >= 0"));
        }
        if !(self.startup_duration_s > 0.0) || !(self.jam_duration_s > 0.0) {
            return Err(Error::invalid("durations must be positive"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !(self.sigma_s_db >= 0.0) {
            return Err(Error::invalid("noise std must be >= 0"));
        }
        if !self.jammer_position.is_finite() {
            return Err(Error::invalid("jammer position must be finite"));
        }
        if self.area.max.x < self.area.min.x
            || self.area.max.y < self.area.min.y
            || self.area.max.z < self.area.min.z
        {
            return Err(Error::invalid("bounding box is inverted"));
        }
        let check_len = |len: usize, what: &str| {
            if len != self.receiver_count {
                Err(Error::invalid(format!(
                    "{what} list has {len} entries for {} receivers",
                    self.receiver_count
                )))
            } else {
                Ok(())
            }
        };
        if let AlphaPolicy::Explicit { values } = &self.alpha {
            check_len(values.len(), "alpha")?;
        }
        if let EtaPolicy::Explicit { values } = &self.eta {
            check_len(values.len(), "eta")?;
        }
        Ok(())
    }

    pub fn total_duration_s(&self) -> f64 {
        self.startup_duration_s + self.jam_duration_s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A generated scenario: ground truth, tracks and synthetic measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedScenario {
    pub scenario: Scenario,
    pub tracks: Vec<ReceiverTrack>,
    pub series: Vec<CnirSeries>,
}

/// Received jamming-to-noise ratio `eta * d^-alpha` (linear).
///
/// Errors on `d <= 0`; model-internal callers clamp the distance at
/// [`MIN_RANGE_M`] instead (see [`received_jamming_ratio_clamped`]).
pub fn received_jamming_power_linear(eta: f64, d: f64, alpha: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!(
            "distance must be positive, got {d}"
        )));
    }
    if !(eta >= 0.0) {
        return Err(Error::invalid("eta must be >= 0"));
    }
    if !(alpha >= 1.0) {
        return Err(Error::invalid("alpha must be >= 1"));
    }
    Ok(eta * d.powf(-alpha))
}

/// Same as [`received_jamming_power_linear`] but with the distance clamped
/// below at [`MIN_RANGE_M`]; used inside the measurement model and the
/// likelihood, where the singularity at zero range must not be reachable.
pub fn received_jamming_ratio_clamped(eta: f64, d: f64, alpha: f64) -> f64 {
    eta * d.max(MIN_RANGE_M).powf(-alpha)
}

/// Eta such that the jamming-to-noise ratio reaches `target_excess_db` at
/// the reference distance: `eta = 10^(target/10) * d_ref^alpha`.
pub fn calibrate_eta_for_excess(target_excess_db: f64, d_ref: f64, alpha: f64) -> Result<f64> {
    if !(d_ref > 0.0) {
        return Err(Error::invalid("reference distance must be positive"));
    }
    Ok(db_to_linear(target_excess_db) * d_ref.powf(alpha))
}

/// Uniform-motion track: `duration_s * rate + 1` samples starting at
/// `start`, moving along `heading_rad` (in the horizontal plane) at
/// `speed_mps`. Speed zero gives a stationary track.
pub fn straight_track(
    receiver_id: ReceiverId,
    start: Position,
    heading_rad: f64,
    speed_mps: f64,
    duration_s: f64,
    sample_rate_hz: f64,
) -> Result<ReceiverTrack> {
    if !(duration_s > 0.0) || !(sample_rate_hz > 0.0) {
        return Err(Error::invalid("duration and rate must be positive"));
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    let (dir_x, dir_y) = (heading_rad.cos(), heading_rad.sin());
    let samples = (0..=n)
        .map(|k| {
            let t = k as f64 / sample_rate_hz;
            TrackSample {
                time_s: t,
                position: Position::new(
                    start.x + speed_mps * t * dir_x,
                    start.y + speed_mps * t * dir_y,
                    start.z,
                ),
            }
        })
        .collect();
    ReceiverTrack::new(receiver_id, samples)
}

/// Track of one scenario receiver: stationary at a random start point during
/// the startup window, then a straight constant-speed segment for the jammed
/// phase. The whole segment stays inside the bounding box.
fn scenario_track(
    spec: &ScenarioSpec,
    receiver_id: ReceiverId,
    rng: &mut impl Rng,
) -> Result<ReceiverTrack> {
    let area = &spec.area;
    let length = spec.speed_mps * spec.jam_duration_s;
    let z = if area.max.z > area.min.z {
        rng.random_range(area.min.z..=area.max.z)
    } else {
        area.min.z
    };

    let mut placed = None;
    for _ in 0..10_000 {
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let x = rng.random_range(area.min.x..=area.max.x);
        let y = rng.random_range(area.min.y..=area.max.y);
        let ex = x + length * heading.cos();
        let ey = y + length * heading.sin();
        if area.contains_xy(ex, ey) {
            placed = Some((x, y, heading));
            break;
        }
    }
    let Some((x, y, heading)) = placed else {
        return Err(Error::invalid(format!(
            "bounding box too small for a {length:.0} m segment at {} m/s",
            spec.speed_mps
        )));
    };

    let n = (spec.total_duration_s() * spec.sample_rate_hz).round() as usize;
    let (dir_x, dir_y) = (heading.cos(), heading.sin());
    let samples = (0..=n)
        .map(|k| {
            let t = k as f64 / spec.sample_rate_hz;
            let s = (t - spec.startup_duration_s).clamp(0.0, spec.jam_duration_s);
            TrackSample {
                time_s: t,
                position: Position::new(
                    x + spec.speed_mps * s * dir_x,
                    y + spec.speed_mps * s * dir_y,
                    z,
                ),
            }
        })
        .collect();
    ReceiverTrack::new(receiver_id, samples)
}

/// Generate the receiver tracks for a spec. Deterministic given the seed.
pub fn generate_tracks(spec: &ScenarioSpec) -> Result<Vec<ReceiverTrack>> {
    spec.validate()?;
    (0..spec.receiver_count)
        .map(|i| {
            let mut rng = stream_rng(spec.seed, TAG_TRACK, i as u64);
            scenario_track(spec, ReceiverId(i as u32), &mut rng)
        })
        .collect()
}

/// Synthesize the averaged CNIR series of one receiver.
///
/// Before `jam_start_time_s` the jamming term is zero. Samples whose
/// noiseless CNIR falls below the saturation floor are marked saturated.
pub fn synth_cnir(
    track: &ReceiverTrack,
    jammer: &Position,
    params: &ReceiverParams,
    jam_start_time_s: f64,
    saturation_floor_dbhz: f64,
    rng: &mut impl Rng,
) -> Result<CnirSeries> {
    let samples = track
        .samples()
        .iter()
        .map(|s| {
            let noise: f64 = StandardNormal.sample(rng);
            let u = if s.time_s >= jam_start_time_s {
                received_jamming_ratio_clamped(
                    params.eta,
                    distance(jammer, &s.position),
                    params.alpha,
                )
            } else {
                0.0
            };
            let noiseless = params.s_bar_dbhz - cnir_suppression_db(u);
            let value = if noiseless < saturation_floor_dbhz {
                CnirValue::Saturated
            } else {
                CnirValue::Db(noiseless + params.sigma_s_db * noise)
            };
            CnirSample {
                time_s: s.time_s,
                value,
            }
        })
        .collect();
    CnirSeries::new(track.receiver_id(), samples)
}

/// Generate a complete scenario: tracks, ground-truth parameters and
/// synthetic CNIR series. Deterministic given `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<SimulatedScenario> {
    spec.validate()?;
    let tracks = generate_tracks(spec)?;
    let jam_start = spec.startup_duration_s;

    let alphas: Vec<f64> = match &spec.alpha {
        AlphaPolicy::Fixed { value } => vec![*value; spec.receiver_count],
        AlphaPolicy::Explicit { values } => values.clone(),
        AlphaPolicy::RandomChoice { values } => {
            if values.is_empty() {
                return Err(Error::invalid("alpha choice list is empty"));
            }
            (0..spec.receiver_count)
                .map(|i| {
                    let mut rng = stream_rng(spec.seed, TAG_ALPHA, i as u64);
                    values[rng.random_range(0..values.len())]
                })
                .collect()
        }
    };

    let etas: Vec<f64> = match &spec.eta {
        EtaPolicy::Explicit { values } => values.clone(),
        EtaPolicy::CalibratedExcess { excess_db } => tracks
            .iter()
            .zip(&alphas)
            .map(|(track, &alpha)| {
                let d_min = track
                    .samples()
                    .iter()
                    .filter(|s| s.time_s >= jam_start)
                    .map(|s| distance(&spec.jammer_position, &s.position).max(MIN_RANGE_M))
                    .fold(f64::INFINITY, f64::min);
                calibrate_eta_for_excess(*excess_db, d_min, alpha)
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let receivers: Vec<ReceiverParams> = (0..spec.receiver_count)
        .map(|i| ReceiverParams {
            receiver_id: ReceiverId(i as u32),
            alpha: alphas[i],
            eta: etas[i],
            sigma_s_db: spec.sigma_s_db,
            s_bar_dbhz: spec.s_bar_dbhz,
        })
        .collect();

    let scenario = Scenario {
        jammer_position: spec.jammer_position,
        receivers,
        jam_start_time_s: jam_start,
        sample_rate_hz: spec.sample_rate_hz,
        saturation_floor_dbhz: spec.saturation_floor_dbhz,
    };
    scenario.validate()?;

    let series = tracks
        .iter()
        .zip(&scenario.receivers)
        .enumerate()
        .map(|(i, (track, params))| {
            let mut rng = stream_rng(spec.seed, TAG_NOISE, i as u64);
            synth_cnir(
                track,
                &scenario.jammer_position,
                params,
                jam_start,
                spec.saturation_floor_dbhz,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SimulatedScenario {
        scenario,
        tracks,
        series,
    })
}

// ---------------------------------------------------------------------------
// Per-receiver CSV format: `time_s, x_m, y_m, z_m, cnir_dbhz, saturated`.
// The CNIR cell is empty on saturated rows. Floats are written with the
// shortest round-trippable representation, so save/load is lossless.
// ---------------------------------------------------------------------------

pub const RECEIVER_CSV_HEADER: &str = "time_s,x_m,y_m,z_m,cnir_dbhz,saturated";

/// Render one receiver's track and series as CSV.
pub fn receiver_csv(track: &ReceiverTrack, series: &CnirSeries) -> Result<String> {
    if track.len() != series.len() {
        return Err(Error::invalid("track and series lengths differ"));
    }
    let mut out = String::with_capacity(track.len() * 48);
    out.push_str(RECEIVER_CSV_HEADER);
    out.push('\n');
    for (t, s) in track.samples().iter().zip(series.samples()) {
        if t.time_s != s.time_s {
            return Err(Error::invalid("track and series timestamps differ"));
        }
        let (cnir, saturated) = match s.value {
            CnirValue::Db(v) => (v.to_string(), "false"),
            CnirValue::Saturated => (String::new(), "true"),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.time_s, t.position.x, t.position.y, t.position.z, cnir, saturated
        ));
    }
    Ok(out)
}

/// Parse a receiver CSV written by [`receiver_csv`].
pub fn parse_receiver_csv(
    receiver_id: ReceiverId,
    text: &str,
) -> Result<(ReceiverTrack, CnirSeries)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == RECEIVER_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{RECEIVER_CSV_HEADER}`"),
            })
        }
    }
    let mut track_samples = Vec::new();
    let mut cnir_samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad {name} value `{}`", fields[i]),
            })
        };
        let time_s = num(0, "time_s")?;
        let position = Position::new(num(1, "x_m")?, num(2, "y_m")?, num(3, "z_m")?);
        let saturated = match fields[5].trim() {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("bad saturated flag `{other}`"),
                })
            }
        };
        let value = if saturated {
            CnirValue::Saturated
        } else {
            CnirValue::Db(num(4, "cnir_dbhz")?)
        };
        track_samples.push(TrackSample { time_s, position });
        cnir_samples.push(CnirSample { time_s, value });
    }
    let track = ReceiverTrack::new(receiver_id, track_samples)?;
    let series = CnirSeries::new(receiver_id, cnir_samples)?;
    Ok((track, series))
}

/// Manifest written next to the per-receiver CSV files (`scenario.json`).
/// Ground truth is present for simulated scenarios and absent for ingested
/// real logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub config_version: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spec: Option<ScenarioSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<Scenario>,
    pub receivers: Vec<ReceiverFileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverFileEntry {
    pub id: ReceiverId,
    pub file: String,
}
