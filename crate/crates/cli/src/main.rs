//! `interflow` command-line tool.

mod report;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use interflow::classifier::{load_model, save_model, FeaturesPerSplit};
use interflow::config::{derive_seed, stage, RunConfig};
use interflow::evaluation::{grid_search, run_holdout, SplitMode};
use interflow::features::feature_dim;
use interflow::pipeline::{self, ModelProvenance};
use interflow::synth::{generate_capture, generate_suite, TrafficProfile};
use interflow::{Error, Result};

const WINDOW_SWEEP: [f64; 6] = [300.0, 200.0, 80.0, 50.0, 30.0, 10.0];
const OVERLAP_SWEEP: [f64; 6] = [180.0, 120.0, 30.0, 10.0, 2.0, 1.0];

#[derive(Parser, Debug)]
#[command(name = "interflow", version, about = "Encrypted-traffic classification from packet captures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a manifest of labeled captures into a features CSV.
    Extract {
        #[command(flatten)]
        run: RunArgs,
        /// Output CSV (stdout when omitted)
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Split a features CSV, train a forest and score the held-out rows.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory for `train_report.toml`; defaults to the model's directory
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Classify the chunks of a capture or of a features CSV.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        capture: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output CSV (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every (window, overlap) pair of a grid.
    Grid {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        windows: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        overlaps: Option<Vec<f64>>,
        /// Directory receiving `grid.csv` and `best.toml`
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Generate labeled synthetic captures.
    Synth {
        /// Profile file or built-in profile name; repeatable with --suite
        #[arg(long)]
        profile: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output pcap for a single capture
        #[arg(long, conflicts_with = "suite")]
        out: Option<PathBuf>,
        /// Write `--per-profile` captures per profile plus manifest.csv into this directory
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, default_value_t = 20, requires = "suite")]
        per_profile: usize,
        /// Print the built-in profile names
        #[arg(long, exclusive = true)]
        list_profiles: bool,
    },
}

/// Flags overriding fields of the run configuration.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML run configuration; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    signal_bins: Option<usize>,
    #[arg(long)]
    min_packets: Option<usize>,
    /// Comma-separated ports; `none` disables filtering
    #[arg(long)]
    filtered_ports: Option<String>,
    /// Local address or prefix, e.g. 10.0.0.2 or 192.168.1.0/24
    #[arg(long)]
    local_endpoint: Option<String>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_split: Option<usize>,
    /// `sqrt`, `all` or a count
    #[arg(long)]
    features_per_split: Option<String>,
    /// `by-capture` or `by-chunk`
    #[arg(long)]
    split_mode: Option<String>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    /// File values on top of `base`, then flags on top of that.
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => base,
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(window => window, overlap => overlap, delta => delta, signal_bins => n_bins,
             min_packets => min_packets, n_trees => n_trees, max_depth => max_depth,
             min_samples_split => min_samples_split, split_ratio => split_ratio, seed => seed);
        if let Some(ports) = &self.filtered_ports {
            c.filtered_ports = parse_ports(ports)?;
        }
        if let Some(ep) = &self.local_endpoint {
            c.local_endpoint = Some(interflow::ingest::parse_local_endpoint(ep)?);
        }
        if let Some(f) = &self.features_per_split {
            c.features_per_split = f.parse::<FeaturesPerSplit>()?;
        }
        if let Some(m) = &self.split_mode {
            c.split_mode = m.parse::<SplitMode>()?;
        }
        c.validate()?;
        Ok(c)
    }

    fn extraction_flags_set(&self) -> bool {
        self.window.is_some()
            || self.overlap.is_some()
            || self.delta.is_some()
            || self.signal_bins.is_some()
            || self.min_packets.is_some()
            || self.filtered_ports.is_some()
            || self.local_endpoint.is_some()
    }
}

fn parse_ports(s: &str) -> Result<std::collections::BTreeSet<u16>> {
    if s.trim().eq_ignore_ascii_case("none") || s.trim().is_empty() {
        return Ok(Default::default());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u16>()
                .map_err(|_| Error::Config(format!("invalid port {p:?}")))
        })
        .collect()
}

fn required(value: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("missing --{flag}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| io_error(path, e))
}

fn read_features(path: &Path) -> Result<pipeline::FeatureTable> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    pipeline::read_features_csv(io::BufReader::new(file)).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn load_captures(manifest: &Path, config: &RunConfig) -> Result<Vec<pipeline::PreparedCapture>> {
    let (captures, failures) = pipeline::load_manifest_captures(manifest, &config.ingest_config())?;
    pipeline::require_some(&captures, &failures)?;
    for c in captures.iter().filter(|c| c.parse_warnings > 0) {
        warn!("{}: capture truncated or damaged", c.id);
    }
    Ok(captures)
}

fn cmd_extract(run: RunArgs, features: Option<PathBuf>, manifest: Option<PathBuf>) -> Result<()> {
    let config = run.resolve(RunConfig::default())?;
    let manifest = required(manifest, &config.manifest, "manifest")?;
    let config = RunConfig {
        manifest: Some(manifest.clone()),
        features: features.clone().or(config.features.clone()),
        ..config
    };
    let captures = load_captures(&manifest, &config)?;
    let extracted = pipeline::extract_prepared(&captures, &config)?;
    let mut out = output(config.features.as_deref())?;
    pipeline::write_features_csv(&mut out, &extracted.rows, &config)?;
    out.flush().map_err(|e| io_error(Path::new("<features>"), e))?;
    eprintln!(
        "captures {} chunks kept {} dropped {} feature dimension {}",
        captures.len(),
        extracted.chunks_kept,
        extracted.chunks_dropped,
        feature_dim(config.n_bins)
    );
    Ok(())
}

fn cmd_train(run: RunArgs, features: Option<PathBuf>, model: Option<PathBuf>, report_dir: Option<PathBuf>) -> Result<()> {
    let mut config = run.resolve(RunConfig::default())?;
    let features = required(features, &config.features, "features")?;
    let model_path = required(model, &config.model, "model")?;
    let table = read_features(&features)?;
    if let Some(embedded) = &table.config {
        let diff = embedded.extraction().diff(&config.extraction());
        if run.extraction_flags_set() && !diff.is_empty() {
            return Err(Error::Config(format!(
                "extraction flags disagree with the features file (file vs flags): {}",
                diff.join("; ")
            )));
        }
        config = config.with_extraction(&embedded.extraction());
    }
    if feature_dim(config.n_bins) != table.dim {
        return Err(Error::DimensionMismatch {
            expected: feature_dim(config.n_bins),
            found: table.dim,
        });
    }
    let report_dir = report_dir
        .or(config.report_dir.clone())
        .or_else(|| model_path.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    config.features = Some(features);
    config.model = Some(model_path.clone());
    config.report_dir = Some(report_dir.clone());

    let mut outcome = run_holdout(&table.rows, &config)?;
    ModelProvenance::new(&config).attach(&mut outcome.model);
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    save_model(&outcome.model, &model_path)?;

    let report = report::TrainReport::new(&config, &outcome, table.rows.len());
    let report_path = report_dir.join("train_report.toml");
    write_text(&report_path, &report.to_toml())?;
    eprintln!(
        "train {} test {} accuracy {:.4} macro-F1 {:.4}",
        outcome.n_train(),
        outcome.n_test(),
        outcome.metrics.accuracy,
        outcome.metrics.macro_f1
    );
    info!("model written to {}, report to {}", model_path.display(), report_path.display());
    Ok(())
}

fn cmd_predict(
    run: RunArgs,
    model_path: PathBuf,
    capture: Option<PathBuf>,
    features: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = load_model(&model_path)?;
    let base = ModelProvenance::of(&model).map(|p| p.run_config).unwrap_or_default();
    let config = RunConfig {
        model: Some(model_path),
        ..run.resolve(base)?
    };
    pipeline::check_compatible(&model, &config.extraction())?;

    let rows = match (capture, features) {
        (Some(path), _) => {
            let id = path.to_string_lossy().into_owned();
            let prepared = pipeline::prepare_capture(&path, &id, "", &config.ingest_config())?;
            pipeline::capture_features(&prepared, &config)?.rows
        }
        (None, Some(path)) => {
            let table = read_features(&path)?;
            if let Some(embedded) = &table.config {
                pipeline::check_compatible(&model, &embedded.extraction())?;
            }
            if table.dim != model.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: model.feature_dim,
                    found: table.dim,
                });
            }
            table.rows
        }
        (None, None) => return Err(Error::Config("missing --capture or --features".into())),
    };
    let predictions = pipeline::predict_rows(&model, &rows)?;
    let mut w = output(out.as_deref())?;
    pipeline::write_predictions_csv(&mut w, &model, &predictions, &config)?;
    w.flush().map_err(|e| io_error(Path::new("<predictions>"), e))?;
    eprintln!("predicted {} chunks", predictions.len());
    Ok(())
}

fn cmd_grid(
    run: RunArgs,
    manifest: Option<PathBuf>,
    windows: Option<Vec<f64>>,
    overlaps: Option<Vec<f64>>,
    report_dir: Option<PathBuf>,
) -> Result<()> {
    let config = run.resolve(RunConfig::default())?;
    let manifest = required(manifest, &config.manifest, "manifest")?;
    let report_dir = required(report_dir, &config.report_dir, "report-dir")?;
    let config = RunConfig {
        manifest: Some(manifest.clone()),
        report_dir: Some(report_dir.clone()),
        ..config
    };
    let windows = windows.unwrap_or_else(|| WINDOW_SWEEP.to_vec());
    let overlaps = overlaps.unwrap_or_else(|| OVERLAP_SWEEP.to_vec());

    let captures = load_captures(&manifest, &config)?;
    let result = grid_search(&captures, &windows, &overlaps, &config)?;
    fs::create_dir_all(&report_dir).map_err(|e| io_error(&report_dir, e))?;
    let mut csv_out = create(&report_dir.join("grid.csv"))?;
    report::write_grid_csv(&mut csv_out, &result, &config)?;
    csv_out
        .flush()
        .map_err(|e| io_error(&report_dir.join("grid.csv"), e))?;
    let best = report::BestReport::new(&config, &result);
    write_text(&report_dir.join("best.toml"), &best.to_toml())?;

    let cell = result.best_cell();
    eprintln!(
        "{} cells, {} skipped; best window {} overlap {} accuracy {:.4}",
        result.cells.len(),
        result.skipped.len(),
        cell.window,
        cell.overlap,
        cell.metrics.accuracy
    );
    Ok(())
}

fn load_profile(name: &str) -> Result<TrafficProfile> {
    let path = Path::new(name);
    if path.exists() {
        return TrafficProfile::load(path);
    }
    TrafficProfile::builtin(name).ok_or_else(|| {
        let names: Vec<String> = TrafficProfile::builtins().into_iter().map(|p| p.label).collect();
        Error::Config(format!(
            "{name:?} is neither a profile file nor a built-in profile ({})",
            names.join(", ")
        ))
    })
}

fn cmd_synth(
    profiles: Vec<String>,
    seed: u64,
    out: Option<PathBuf>,
    suite: Option<PathBuf>,
    per_profile: usize,
    list: bool,
) -> Result<()> {
    if list {
        for p in TrafficProfile::builtins() {
            println!("{}", p.label);
        }
        return Ok(());
    }
    match (out, suite) {
        (Some(out), None) => {
            let [name] = profiles.as_slice() else {
                return Err(Error::Config("a single capture needs exactly one --profile".into()));
            };
            let capture = generate_capture(&load_profile(name)?, derive_seed(seed, stage::SYNTH))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            capture.write_pcap(&out)?;
            eprintln!("{} packets written to {}", capture.packets.len(), out.display());
        }
        (None, Some(dir)) => {
            let profiles = if profiles.is_empty() {
                TrafficProfile::builtins()
            } else {
                profiles.iter().map(|s| load_profile(s)).collect::<Result<_>>()?
            };
            let entries = generate_suite(&dir, &profiles, per_profile, seed)?;
            eprintln!("{} captures and manifest.csv written to {}", entries.len(), dir.display());
        }
        _ => return Err(Error::Config("synth needs --out or --suite".into())),
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::EmptyInput(_) => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("INTERFLOW_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract { run, features, manifest } => cmd_extract(run, features, manifest),
        Command::Train {
            run,
            features,
            model,
            report_dir,
        } => cmd_train(run, features, model, report_dir),
        Command::Predict {
            run,
            model,
            capture,
            features,
            out,
        } => cmd_predict(run, model, capture, features, out),
        Command::Grid {
            run,
            manifest,
            windows,
            overlaps,
            report_dir,
        } => cmd_grid(run, manifest, windows, overlaps, report_dir),
        Command::Synth {
            profile,
            seed,
            out,
            suite,
            per_profile,
            list_profiles,
        } => cmd_synth(profile, seed, out, suite, per_profile, list_profiles),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
