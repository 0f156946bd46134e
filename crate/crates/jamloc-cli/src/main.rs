//! `jamloc` - command-line workflows for GNSS jammer localization:
//! simulate scenarios, detect jamming, estimate the jammer position,
//! sweep Monte Carlo evaluations and ingest phone logs.
//!
//! Exit codes: 0 on success, 1 when estimation is impossible or a runtime
//! error occurs, 2 on usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use jamloc::baselines::{ls_report, mean_position_report, LsCalibration, MeanPositionMode};
use jamloc::detect::{build_observations, detect, estimate_baseline, DetectionConfig};
use jamloc::eval::{combinations, run_sweep, Method, SweepSpec};
use jamloc::ingest::{
    build_receiver_data, join_positions, parse_log, parse_track_csv, AveragingDomain, LogFormat,
    ParseOptions,
};
use jamloc::mle::MleConfig;
use jamloc::sim::{
    self, parse_receiver_csv, receiver_csv, AlphaPolicy, ReceiverFileEntry, ScenarioDocument,
    ScenarioSpec, MIXED_ALPHA_CHOICES,
};
use jamloc::types::{CnirSeries, ObservationSet, ReceiverId, ReceiverTrack, Scenario};
use jamloc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "jamloc",
    about = "Localize a stationary GNSS jammer from crowdsensed CNIR measurements",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario and write it as per-receiver CSV files
    /// plus a `scenario.json` manifest.
    Simulate(SimulateArgs),
    /// Run baseline estimation and threshold detection over a scenario
    /// directory, producing a per-sample mask CSV.
    Detect(DetectArgs),
    /// Estimate the jammer position from a scenario directory.
    Estimate(EstimateArgs),
    /// Monte Carlo sweep over receiver subset sizes.
    Sweep(SweepArgs),
    /// Convert a phone GNSS log into a scenario directory.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario spec JSON (defaults apply for missing fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the receiver count.
    #[arg(long)]
    receivers: Option<usize>,
    /// Pathloss policy: `fixed:<value>` or `random`.
    #[arg(long)]
    alpha: Option<String>,
    /// Override the CNIR noise std, dB.
    #[arg(long)]
    sigma: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Scenario directory produced by `simulate` or `ingest`.
    #[arg(long)]
    scenario: PathBuf,
    /// Decision threshold on the CNIR drop, dB (negative).
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Baseline window, seconds from the start of each series.
    #[arg(long)]
    baseline_window: Option<f64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Estimation method.
    #[arg(long, value_enum, default_value_t = MethodArg::Mle)]
    method: MethodArg,
    /// `fixed:<value>` pins the pathloss exponent and skips the grid
    /// search; omit to estimate it per receiver.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    baseline_window: Option<f64>,
    /// Seed for the multistart initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Least-squares calibration `<d_ref_m>:<ratio>` when the scenario has
    /// no ground truth to calibrate from.
    #[arg(long)]
    ls_calibration: Option<String>,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON (defaults apply for missing fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subset_min: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Methods to run (repeatable).
    #[arg(long = "method", value_enum)]
    methods: Vec<MethodArg>,
    /// `fixed:<value>` gives the MLE the true exponent; omit to estimate.
    #[arg(long)]
    alpha: Option<String>,
    /// Output prefix; writes `<prefix>.csv` and `<prefix>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Input log file.
    #[arg(long)]
    input: PathBuf,
    /// Log layout.
    #[arg(long, value_enum, default_value_t = FormatArg::Gnsslogger)]
    format: FormatArg,
    /// Receiver id to assign to this log.
    #[arg(long, default_value_t = 0)]
    receiver_id: u32,
    /// Local-frame track CSV (`time_s,x_m,y_m,z_m`) supplying positions.
    #[arg(long)]
    track: Option<PathBuf>,
    /// Keep all constellations instead of GPS L1 only.
    #[arg(long)]
    all_constellations: bool,
    /// Average satellites in the linear domain instead of dB.
    #[arg(long)]
    linear_average: bool,
    /// Output scenario directory (created or extended).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Mle,
    Mean,
    Ls,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Mle => Method::Mle,
            MethodArg::Mean => Method::MeanPosition,
            MethodArg::Ls => Method::LeastSquares,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Gnsslogger,
    Flat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ingest(args) => cmd_ingest(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// `fixed:<value>` or `random`.
fn parse_alpha_policy(text: &str) -> Result<AlphaPolicy> {
    if text == "random" {
        return Ok(AlphaPolicy::RandomChoice {
            values: MIXED_ALPHA_CHOICES.to_vec(),
        });
    }
    if let Some(v) = text.strip_prefix("fixed:") {
        let value: f64 = v
            .parse()
            .map_err(|_| Error::invalid(format!("bad alpha value `{v}`")))?;
        return Ok(AlphaPolicy::Fixed { value });
    }
    Err(Error::invalid(format!(
        "bad --alpha `{text}`; expected `fixed:<value>` or `random`"
    )))
}

fn parse_known_alpha(text: &str) -> Result<f64> {
    text.strip_prefix("fixed:")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| Error::invalid(format!("bad --alpha `{text}`; expected `fixed:<value>`")))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

fn emit(out: &Option<PathBuf>, contents: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => ScenarioSpec::from_json(&fs::read_to_string(path)?)?,
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.receivers {
        spec.receiver_count = n;
    }
    if let Some(alpha) = &args.alpha {
        spec.alpha = parse_alpha_policy(alpha)?;
    }
    if let Some(sigma) = args.sigma {
        spec.sigma_s_db = sigma;
    }
    spec.validate()?;

    let simulated = sim::generate(&spec)?;
    fs::create_dir_all(&args.out)?;
    let mut entries = Vec::new();
    for (track, series) in simulated.tracks.iter().zip(&simulated.series) {
        let file = format!("receiver_{}.csv", track.receiver_id());
        write_file(&args.out.join(&file), &receiver_csv(track, series)?)?;
        entries.push(ReceiverFileEntry {
            id: track.receiver_id(),
            file,
        });
    }
    let document = ScenarioDocument {
        config_version: spec.config_version,
        spec: Some(spec.clone()),
        truth: Some(simulated.scenario.clone()),
        receivers: entries,
    };
    write_file(
        &args.out.join("scenario.json"),
        &serde_json::to_string_pretty(&document)?,
    )?;
    eprintln!(
        "wrote {} receivers x {} samples to {} (seed {})",
        simulated.tracks.len(),
        simulated.tracks[0].len(),
        args.out.display(),
        spec.seed
    );
    Ok(())
}

struct LoadedScenario {
    tracks: Vec<ReceiverTrack>,
    series: Vec<CnirSeries>,
    truth: Option<Scenario>,
}

fn load_scenario_dir(dir: &Path) -> Result<LoadedScenario> {
    let manifest_path = dir.join("scenario.json");
    let document: ScenarioDocument =
        serde_json::from_str(&fs::read_to_string(&manifest_path).map_err(|e| {
            Error::invalid(format!("cannot read {}: {e}", manifest_path.display()))
        })?)?;
    let mut tracks = Vec::new();
    let mut series = Vec::new();
    for entry in &document.receivers {
        let text = fs::read_to_string(dir.join(&entry.file))?;
        let (track, s) = parse_receiver_csv(entry.id, &text)?;
        tracks.push(track);
        series.push(s);
    }
    if tracks.is_empty() {
        return Err(Error::invalid("scenario directory lists no receivers"));
    }
    Ok(LoadedScenario {
        tracks,
        series,
        truth: document.truth,
    })
}

fn detection_config(gamma: Option<f64>, baseline_window: Option<f64>) -> Result<DetectionConfig> {
    let mut config = DetectionConfig::default();
    if let Some(g) = gamma {
        config.gamma_db = g;
    }
    if let Some(w) = baseline_window {
        config.baseline_window_s = w;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let loaded = load_scenario_dir(&args.scenario)?;
    let config = detection_config(args.gamma, args.baseline_window)?;
    let mut out = String::from("receiver_id,time_s,detected\n");
    for series in &loaded.series {
        let baseline = estimate_baseline(series, config.baseline_window_s)?;
        let mask = detect(series, &baseline, &config)?;
        for (sample, det) in series.samples().iter().zip(mask.detected()) {
            out.push_str(&format!(
                "{},{},{}\n",
                series.receiver_id(),
                sample.time_s,
                det
            ));
        }
        eprintln!(
            "receiver {}: {}/{} samples detected (baseline {:.2} dB-Hz)",
            series.receiver_id(),
            mask.detected_count(),
            mask.len(),
            baseline.s_bar_dbhz
        );
    }
    emit(&args.out, &out)
}

fn build_obs(loaded: &LoadedScenario, config: &DetectionConfig) -> Result<ObservationSet> {
    build_observations(loaded.tracks.clone(), loaded.series.clone(), config)
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let loaded = load_scenario_dir(&args.scenario)?;
    let config = detection_config(args.gamma, args.baseline_window)?;
    let obs = build_obs(&loaded, &config)?;

    let mut report = match args.method {
        MethodArg::Mle => {
            let mut mle_config = MleConfig {
                seed: args.seed,
                ..MleConfig::default()
            };
            if let Some(alpha) = &args.alpha {
                mle_config.known_alpha = Some(parse_known_alpha(alpha)?);
            }
            jamloc::mle::estimate(&obs, &mle_config)?
        }
        MethodArg::Mean => mean_position_report(&obs, MeanPositionMode::PerSample)?,
        MethodArg::Ls => {
            let cal = match (&args.ls_calibration, &loaded.truth) {
                (Some(text), _) => {
                    let (d_ref, ratio) = text
                        .split_once(':')
                        .and_then(|(a, b)| Some((a.parse::<f64>().ok()?, b.parse::<f64>().ok()?)))
                        .ok_or_else(|| {
                            Error::invalid("bad --ls-calibration; expected `<d_ref_m>:<ratio>`")
                        })?;
                    LsCalibration::shared(d_ref, ratio)?
                }
                (None, Some(truth)) => LsCalibration::from_scenario(truth, 100.0)?,
                (None, None) => return Err(Error::invalid(
                    "least squares needs --ls-calibration when the scenario has no ground truth",
                )),
            };
            ls_report(&obs, &cal)?
        }
    };
    if let Some(truth) = &loaded.truth {
        report = report.with_truth(&truth.jammer_position);
    }
    if !report.converged {
        eprintln!("warning: estimate did not converge; the reported position is unreliable");
    }
    emit(&args.out, &(report.to_json()? + "\n"))
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => SweepSpec::from_json(&fs::read_to_string(path)?)?,
        None => SweepSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(subset_min) = args.subset_min {
        spec.subset_min = subset_min;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    if !args.methods.is_empty() {
        spec.methods = args.methods.iter().map(|m| Method::from(*m)).collect();
    }
    if let Some(alpha) = &args.alpha {
        spec.mle.known_alpha = Some(parse_known_alpha(alpha)?);
    }
    spec.validate()?;

    for k in spec.subset_min..=spec.scenario.receiver_count {
        eprintln!(
            "subset size {k}: {} combinations of {} receivers",
            combinations(spec.scenario.receiver_count, k).len(),
            spec.scenario.receiver_count
        );
    }
    let result = run_sweep(&spec)?;
    let csv_path = args.out.with_extension("csv");
    let json_path = args.out.with_extension("json");
    write_file(&csv_path, &result.to_csv())?;
    write_file(&json_path, &(result.to_json()? + "\n"))?;
    eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let opts = ParseOptions {
        format: match args.format {
            FormatArg::Gnsslogger => LogFormat::GnssLogger,
            FormatArg::Flat => LogFormat::Flat,
        },
        gps_l1_only: !args.all_constellations,
        ..ParseOptions::default()
    };
    let file = fs::File::open(&args.input)?;
    let parsed = parse_log(std::io::BufReader::new(file), &opts)?;
    for d in &parsed.diagnostics {
        eprintln!("{}:{}: {}", args.input.display(), d.line, d.message);
    }
    let mut records = parsed.records;
    if records.is_empty() {
        return Err(Error::invalid("log contains no usable epochs"));
    }

    let receiver_id = ReceiverId(args.receiver_id);
    if let Some(track_path) = &args.track {
        let track = parse_track_csv(receiver_id, &fs::read_to_string(track_path)?)?;
        // phone logs carry absolute epochs; a local track that starts near
        // zero is aligned to the first record first
        let offset = records[0].time_s - track.samples()[0].time_s;
        let aligned = if offset.abs() > 1.0 {
            for r in records.iter_mut() {
                r.time_s -= offset;
            }
            true
        } else {
            false
        };
        if aligned {
            eprintln!("aligned log epochs to track time (offset {offset:.3} s)");
        }
        for d in join_positions(&mut records, &track, 0.75) {
            eprintln!("{}", d.message);
        }
    }

    let domain = if args.linear_average {
        AveragingDomain::Linear
    } else {
        AveragingDomain::Decibel
    };
    let (track, series, diags) = build_receiver_data(&records, receiver_id, domain)?;
    for d in &diags {
        eprintln!("{}", d.message);
    }

    fs::create_dir_all(&args.out)?;
    let file = format!("receiver_{receiver_id}.csv");
    write_file(&args.out.join(&file), &receiver_csv(&track, &series)?)?;

    // extend an existing manifest or start a fresh one
    let manifest_path = args.out.join("scenario.json");
    let mut document: ScenarioDocument = match fs::read_to_string(&manifest_path) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => ScenarioDocument {
            config_version: 1,
            spec: None,
            truth: None,
            receivers: Vec::new(),
        },
    };
    document.receivers.retain(|e| e.id != receiver_id);
    document.receivers.push(ReceiverFileEntry {
        id: receiver_id,
        file,
    });
    document.receivers.sort_by_key(|e| e.id);
    write_file(&manifest_path, &serde_json::to_string_pretty(&document)?)?;
    eprintln!(
        "ingested {} epochs for receiver {} into {}",
        track.len(),
        receiver_id,
        args.out.display()
    );
    Ok(())
}
