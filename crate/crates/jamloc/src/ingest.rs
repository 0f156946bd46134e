//! Phone log ingestion.
//!
//! Parses GnssLogger-style CSV logs (per-satellite `Status` rows keyed by a
//! `# Status,...` header) and a flat per-satellite CSV used as the crate's
//! own interchange format. Structural problems (missing mandatory columns,
//! unparseable timestamps) are hard errors; per-row data problems (values
//! outside the CNIR sanity band, malformed numbers) reject the row and are
//! reported as diagnostics with line numbers.
//!
//! Positions in real GnssLogger logs are geodetic and out of scope here;
//! they are left empty and a separate local-frame track file supplies the
//! receiver positions instead.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    linear_to_db, CnirSample, CnirSeries, CnirValue, Position, ReceiverId, ReceiverTrack,
    SatelliteCnirSample, TrackSample,
};

/// GPS L1 center frequency, Hz.
const L1_HZ: f64 = 1.57542e9;
const L1_TOLERANCE_HZ: f64 = 10.0e6;

/// Supported input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    /// GnssLogger application export: `# Status,...` header comment naming
    /// the columns, then `Status,...` rows, one per satellite per epoch.
    GnssLogger,
    /// Flat per-satellite rows: `time_s,x_m,y_m,z_m,agc_db,cn0_dbhz`.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub format: LogFormat,
    /// Keep only GPS L1 satellite rows (when the log carries constellation
    /// and frequency columns).
    pub gps_l1_only: bool,
    /// CNIR sanity band, dB-Hz; rows outside are rejected with a diagnostic.
    pub cnir_band_dbhz: (f64, f64),
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            format: LogFormat::GnssLogger,
            gps_l1_only: true,
            cnir_band_dbhz: (0.0, 65.0),
        }
    }
}

/// One receiver epoch out of a phone log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneLogRecord {
    pub time_s: f64,
    /// Local-frame position, when the log carries one.
    pub position: Option<Position>,
    /// Per-satellite CNIR values; empty means the receiver output nothing.
    pub cn0_dbhz: Vec<f64>,
    pub agc_db: Option<f64>,
}

impl PhoneLogRecord {
    pub fn satellite_sample(&self) -> SatelliteCnirSample {
        SatelliteCnirSample {
            time_s: self.time_s,
            cn0_dbhz: self.cn0_dbhz.clone(),
        }
    }
}

/// A row-level problem that did not abort the parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedLog {
    pub records: Vec<PhoneLogRecord>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

pub const FLAT_CSV_HEADER: &str = "time_s,x_m,y_m,z_m,agc_db,cn0_dbhz";

/// Parse a phone log into per-epoch records.
pub fn parse_log<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<ParsedLog> {
    match opts.format {
        LogFormat::GnssLogger => parse_gnsslogger(reader, opts),
        LogFormat::Flat => parse_flat(reader, opts),
    }
}

struct StatusColumns {
    time_millis: usize,
    cn0: usize,
    constellation: Option<usize>,
    carrier_freq: Option<usize>,
    agc: Option<usize>,
}

fn parse_gnsslogger<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<ParsedLog> {
    let mut diagnostics = Vec::new();
    let mut records: Vec<PhoneLogRecord> = Vec::new();
    let mut columns: Option<StatusColumns> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let fields: Vec<&str> = comment.trim().split(',').map(str::trim).collect();
            if fields.first() == Some(&"Status") {
                let find = |name: &str| fields.iter().position(|f| *f == name);
                let time_millis = find("UnixTimeMillis").ok_or(Error::Parse {
                    line: line_no,
                    message: "Status header lacks UnixTimeMillis column".to_string(),
                })?;
                let cn0 = find("Cn0DbHz").ok_or(Error::Parse {
                    line: line_no,
                    message: "Status header lacks Cn0DbHz column".to_string(),
                })?;
                columns = Some(StatusColumns {
                    time_millis,
                    cn0,
                    constellation: find("ConstellationType"),
                    carrier_freq: find("CarrierFrequencyHz"),
                    agc: find("AgcDb"),
                });
            }
            continue;
        }

        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.first() != Some(&"Status") {
            continue; // Fix/Raw/... rows are not used
        }
        let Some(cols) = &columns else {
            return Err(Error::Parse {
                line: line_no,
                message: "Status row before any `# Status,...` header".to_string(),
            });
        };
        let get = |i: usize| fields.get(i).copied().unwrap_or("");
        let time_s = get(cols.time_millis)
            .parse::<f64>()
            .map_err(|_| Error::Parse {
                line: line_no,
                message: format!("unparseable timestamp `{}`", get(cols.time_millis)),
            })?
            / 1000.0;

        if opts.gps_l1_only {
            if let Some(ci) = cols.constellation {
                if get(ci) != "1" {
                    continue;
                }
            }
            if let Some(fi) = cols.carrier_freq {
                if let Ok(freq) = get(fi).parse::<f64>() {
                    if (freq - L1_HZ).abs() > L1_TOLERANCE_HZ {
                        continue;
                    }
                }
            }
        }

        let agc = cols.agc.and_then(|i| get(i).parse::<f64>().ok());

        // start a new epoch when the timestamp changes
        if records.last().map(|r| r.time_s) != Some(time_s) {
            records.push(PhoneLogRecord {
                time_s,
                position: None,
                cn0_dbhz: Vec::new(),
                agc_db: None,
            });
        }
        let record = records.last_mut().expect("just pushed");
        if record.agc_db.is_none() {
            record.agc_db = agc;
        }

        let cn0_text = get(cols.cn0);
        if cn0_text.is_empty() {
            continue; // epoch marker without a tracked satellite
        }
        match cn0_text.parse::<f64>() {
            Ok(v) if v >= opts.cnir_band_dbhz.0 && v <= opts.cnir_band_dbhz.1 => {
                record.cn0_dbhz.push(v);
            }
            Ok(v) => diagnostics.push(ParseDiagnostic {
                line: line_no,
                message: format!(
                    "CNIR {v} dB-Hz outside sanity band [{}, {}]; row rejected",
                    opts.cnir_band_dbhz.0, opts.cnir_band_dbhz.1
                ),
            }),
            Err(_) => diagnostics.push(ParseDiagnostic {
                line: line_no,
                message: format!("unparseable CNIR `{cn0_text}`; row rejected"),
            }),
        }
    }
    if columns.is_none() {
        return Err(Error::Parse {
            line: 1,
            message: "no `# Status,...` header found; not a GnssLogger log".to_string(),
        });
    }
    Ok(ParsedLog {
        records,
        diagnostics,
    })
}

fn parse_flat<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<ParsedLog> {
    let mut diagnostics = Vec::new();
    let mut records: Vec<PhoneLogRecord> = Vec::new();
    let mut lines = reader.lines().enumerate();

    match lines.next() {
        Some((_, Ok(header))) if header.trim() == FLAT_CSV_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header `{FLAT_CSV_HEADER}`, got `{}`",
                    header.trim()
                ),
            })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file".to_string(),
            });
        }
    }

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            diagnostics.push(ParseDiagnostic {
                line: line_no,
                message: format!("expected 6 fields, got {}; row rejected", fields.len()),
            });
            continue;
        }
        let time_s = fields[0].parse::<f64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("unparseable timestamp `{}`", fields[0]),
        })?;

        let pos_fields = [fields[1], fields[2], fields[3]];
        let position = if pos_fields.iter().all(|f| f.is_empty()) {
            None
        } else {
            let mut coords = [0.0f64; 3];
            let mut ok = true;
            for (i, f) in pos_fields.iter().enumerate() {
                match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => coords[i] = v,
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                diagnostics.push(ParseDiagnostic {
                    line: line_no,
                    message: "malformed position; row rejected".to_string(),
                });
                continue;
            }
            Some(Position::new(coords[0], coords[1], coords[2]))
        };
        let agc_db = if fields[4].is_empty() {
            None
        } else {
            match fields[4].parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    diagnostics.push(ParseDiagnostic {
                        line: line_no,
                        message: format!("unparseable AGC `{}`; row rejected", fields[4]),
                    });
                    continue;
                }
            }
        };

        if records.last().map(|r| r.time_s) != Some(time_s) {
            records.push(PhoneLogRecord {
                time_s,
                position,
                cn0_dbhz: Vec::new(),
                agc_db,
            });
        }
        let record = records.last_mut().expect("just pushed");
        if record.position.is_none() {
            record.position = position;
        }
        if record.agc_db.is_none() {
            record.agc_db = agc_db;
        }

        if fields[5].is_empty() {
            continue; // saturated epoch marker
        }
        match fields[5].parse::<f64>() {
            Ok(v) if v >= opts.cnir_band_dbhz.0 && v <= opts.cnir_band_dbhz.1 => {
                record.cn0_dbhz.push(v)
            }
            Ok(v) => diagnostics.push(ParseDiagnostic {
                line: line_no,
                message: format!(
                    "CNIR {v} dB-Hz outside sanity band [{}, {}]; row rejected",
                    opts.cnir_band_dbhz.0, opts.cnir_band_dbhz.1
                ),
            }),
            Err(_) => diagnostics.push(ParseDiagnostic {
                line: line_no,
                message: format!("unparseable CNIR `{}`; row rejected", fields[5]),
            }),
        }
    }
    Ok(ParsedLog {
        records,
        diagnostics,
    })
}

/// Serialize records to the flat per-satellite CSV. Inverse of
/// [`parse_log`] with [`LogFormat::Flat`] for the fields the schema covers.
pub fn write_flat_log(records: &[PhoneLogRecord]) -> String {
    let mut out = String::new();
    out.push_str(FLAT_CSV_HEADER);
    out.push('\n');
    for r in records {
        let (x, y, z) = match &r.position {
            Some(p) => (p.x.to_string(), p.y.to_string(), p.z.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let agc = r.agc_db.map(|v| v.to_string()).unwrap_or_default();
        if r.cn0_dbhz.is_empty() {
            out.push_str(&format!("{},{},{},{},{},\n", r.time_s, x, y, z, agc));
        } else {
            for v in &r.cn0_dbhz {
                out.push_str(&format!("{},{},{},{},{},{}\n", r.time_s, x, y, z, agc, v));
            }
        }
    }
    out
}

/// Domain in which per-satellite CNIR values are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingDomain {
    /// Arithmetic mean of the dB values (what the measurement pipeline
    /// reports).
    #[default]
    Decibel,
    /// Mean of linear ratios, converted back to dB.
    Linear,
}

/// Collapse per-satellite epochs into an averaged CNIR series. Epochs
/// without a single satellite become saturated slots.
pub fn average_satellites(
    samples: &[SatelliteCnirSample],
    receiver_id: ReceiverId,
    domain: AveragingDomain,
) -> Result<CnirSeries> {
    let out = samples
        .iter()
        .map(|s| {
            let value = if s.cn0_dbhz.is_empty() {
                CnirValue::Saturated
            } else {
                let n = s.cn0_dbhz.len() as f64;
                let mean = match domain {
                    AveragingDomain::Decibel => s.cn0_dbhz.iter().sum::<f64>() / n,
                    AveragingDomain::Linear => linear_to_db(
                        s.cn0_dbhz
                            .iter()
                            .map(|v| crate::types::db_to_linear(*v))
                            .sum::<f64>()
                            / n,
                    ),
                };
                CnirValue::Db(mean)
            };
            CnirSample {
                time_s: s.time_s,
                value,
            }
        })
        .collect();
    CnirSeries::new(receiver_id, out)
}

/// Sliding median with edge truncation; the window must be odd. Length and
/// timestamps are preserved.
pub fn smooth_agc(series: &[(f64, f64)], window: usize) -> Result<Vec<(f64, f64)>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid("smoothing window must be odd and >= 1"));
    }
    let half = window / 2;
    Ok((0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(series.len().saturating_sub(1));
            let mut vals: Vec<f64> = series[lo..=hi].iter().map(|(_, v)| *v).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = vals.len();
            let med = if n % 2 == 1 {
                vals[n / 2]
            } else {
                0.5 * (vals[n / 2 - 1] + vals[n / 2])
            };
            (series[i].0, med)
        })
        .collect())
}

/// Local-frame track CSV: `time_s,x_m,y_m,z_m`.
pub const TRACK_CSV_HEADER: &str = "time_s,x_m,y_m,z_m";

pub fn parse_track_csv(receiver_id: ReceiverId, text: &str) -> Result<ReceiverTrack> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == TRACK_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{TRACK_CSV_HEADER}`"),
            })
        }
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; 4];
        for (i, f) in fields.iter().enumerate() {
            nums[i] = f.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad number `{f}`"),
            })?;
        }
        samples.push(TrackSample {
            time_s: nums[0],
            position: Position::new(nums[1], nums[2], nums[3]),
        });
    }
    ReceiverTrack::new(receiver_id, samples)
}

/// Attach positions from a separate track to records lacking one, by
/// nearest timestamp within `max_gap_s`.
pub fn join_positions(
    records: &mut [PhoneLogRecord],
    track: &ReceiverTrack,
    max_gap_s: f64,
) -> Vec<ParseDiagnostic> {
    let mut diagnostics = Vec::new();
    let samples = track.samples();
    for r in records.iter_mut() {
        if r.position.is_some() {
            continue;
        }
        let nearest = samples
            .iter()
            .min_by(|a, b| {
                (a.time_s - r.time_s)
                    .abs()
                    .partial_cmp(&(b.time_s - r.time_s).abs())
                    .unwrap()
            })
            .expect("track has samples");
        if (nearest.time_s - r.time_s).abs() <= max_gap_s {
            r.position = Some(nearest.position);
        } else {
            diagnostics.push(ParseDiagnostic {
                line: 0,
                message: format!(
                    "no track position within {max_gap_s} s of epoch t={}",
                    r.time_s
                ),
            });
        }
    }
    diagnostics
}

/// Turn positioned records into the core track/series pair used by the rest
/// of the pipeline. Epochs without positions or with non-increasing
/// timestamps are dropped with diagnostics.
pub fn build_receiver_data(
    records: &[PhoneLogRecord],
    receiver_id: ReceiverId,
    domain: AveragingDomain,
) -> Result<(ReceiverTrack, CnirSeries, Vec<ParseDiagnostic>)> {
    let mut diagnostics = Vec::new();
    let mut track_samples = Vec::new();
    let mut sat_samples = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for r in records {
        let Some(position) = r.position else {
            diagnostics.push(ParseDiagnostic {
                line: 0,
                message: format!("epoch t={} has no position; dropped", r.time_s),
            });
            continue;
        };
        if r.time_s <= last_time {
            diagnostics.push(ParseDiagnostic {
                line: 0,
                message: format!("epoch t={} is not after its predecessor; dropped", r.time_s),
            });
            continue;
        }
        last_time = r.time_s;
        track_samples.push(TrackSample {
            time_s: r.time_s,
            position,
        });
        sat_samples.push(r.satellite_sample());
    }
    let track = ReceiverTrack::new(receiver_id, track_samples)?;
    let series = average_satellites(&sat_samples, receiver_id, domain)?;
    Ok((track, series, diagnostics))
}
