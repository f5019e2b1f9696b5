//! Command-line front end.
//!
//! Exit codes: 0 success, 1 `detect` flagged a backdoor, 2 usage error,
//! 3 runtime error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::detector::{self, DetectorConfig, Mode, ProbeDist, SimDirection};
use crate::eval;
use crate::headspec::HeadSpec;
use crate::indicators::IndicatorKind;
use crate::json;
use crate::probe;
use crate::synth::{self, BenchmarkParams, Mechanism, TruthLabel};
use crate::zoo::{self, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FLAGGED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "headprobe", version, about = "Data-free backdoor auditing of classifier heads")]
pub struct Cli {
    /// Seed for all randomness (overrides the config's probe seed)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for scan, calibrate and synth
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Machine-readable JSON on stdout
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe one head and decide whether it is backdoored
    Detect(DetectArgs),
    /// Fit a detector threshold on clean and backdoored configuration heads
    Calibrate(CalibrateArgs),
    /// Detect every head in a directory and compute zoo metrics
    Scan(ScanArgs),
    /// Generate a synthetic benchmark of clean and backdoored heads
    Synth(SynthArgs),
    /// Dump a probe batch as CSV
    Probe(ProbeArgs),
    /// Dump a head's responses to its probes as CSV
    ExportIndicators(ExportArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Targeted,
    Sim,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Above,
    Below,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub backdoor: PathBuf,
    /// Defaults per architecture tag
    #[arg(long)]
    pub indicator: Option<IndicatorKind>,
    #[arg(long, default_value_t = detector::DEFAULT_FPR_CAP)]
    pub fpr_cap: f64,
    #[arg(long, value_enum, default_value = "targeted")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "above")]
    pub sim_direction: DirectionArg,
    #[arg(long, default_value_t = probe::DEFAULT_PROBE_COUNT)]
    pub probe_count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub zoo: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Ground truth; defaults to `manifest.json` inside the zoo when present
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub clean: usize,
    #[arg(long, default_value_t = 0)]
    pub backdoor: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Comma-separated list cycled over backdoored heads, or `all`
    #[arg(long, default_value = "all")]
    pub mechanism: String,
    /// Inflation range `lo:hi`
    #[arg(long, default_value = "1.8:3.0")]
    pub inflate: String,
    /// Bias-shift range `lo:hi`
    #[arg(long, default_value = "2.0:2.5")]
    pub bias_shift: String,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Rewrite every n-th head as an equivalent two-layer head
    #[arg(long)]
    pub two_layer_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub dist: DistArg,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = probe::DEFAULT_PROBE_COUNT)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistArg {
    Auto,
    Uniform01,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResponseArg {
    Logits,
    Probabilities,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Probe settings are read from this config when given
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "probabilities")]
    pub what: ResponseArg,
    #[arg(long)]
    pub out: PathBuf,
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;
type CmdResult = Result<i32, BoxError>;

fn usage(msg: impl Into<String>) -> BoxError {
    Box::new(UsageError(msg.into()))
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    if workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return EXIT_USAGE;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    let result = pool.install(|| dispatch(&cli, workers));
    match result {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cli: &Cli, workers: usize) -> CmdResult {
    match &cli.command {
        Command::Detect(a) => cmd_detect(cli, a),
        Command::Calibrate(a) => cmd_calibrate(cli, a),
        Command::Scan(a) => cmd_scan(cli, a, workers),
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Probe(a) => cmd_probe(cli, a),
        Command::ExportIndicators(a) => cmd_export(cli, a),
    }
}

fn load_config(path: &Path) -> Result<DetectorConfig, BoxError> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(DetectorConfig::from_json(&bytes)?)
}

fn write_out(path: &Path, contents: &[u8]) -> Result<(), BoxError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn cmd_detect(cli: &Cli, a: &DetectArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = cli.seed {
        cfg.probe.seed = seed;
    }
    let head = HeadSpec::from_path(&a.model).map_err(|e| format!("{}: {e}", a.model.display()))?;
    let verdict = detector::run(&head, &cfg)?;
    let doc = verdict.to_json();
    if let Some(out) = &a.out {
        write_out(out, doc.as_bytes())?;
    }
    if cli.json {
        print!("{doc}");
    } else {
        let target = verdict.target.map(|t| format!(", target {t}")).unwrap_or_default();
        println!(
            "{}: {}{} (score {:.6}, {:.2} ms)",
            verdict.model_id,
            if verdict.is_backdoored() { "backdoored" } else { "clean" },
            target,
            verdict.score,
            verdict.elapsed_ms()
        );
    }
    Ok(if verdict.is_backdoored() { EXIT_FLAGGED } else { EXIT_OK })
}

fn cmd_calibrate(cli: &Cli, a: &CalibrateArgs) -> CmdResult {
    if !(a.fpr_cap > 0.0 && a.fpr_cap < 1.0) {
        return Err(usage("--fpr-cap must lie in (0, 1)"));
    }
    if a.probe_count == 0 {
        return Err(usage("--probe-count must be at least 1"));
    }
    let seed = cli.seed.unwrap_or(0);
    let base = DetectorConfig {
        indicator: a.indicator,
        tau: None,
        probe: detector::ProbeSettings {
            dist: ProbeDist::Auto,
            sigma: None,
            count: a.probe_count,
            seed,
        },
        mode: match a.mode {
            ModeArg::Targeted => Mode::Targeted,
            ModeArg::Sim => Mode::Sim,
        },
        clean_mean: None,
        tau_sim: None,
        sim_direction: match a.sim_direction {
            DirectionArg::Above => SimDirection::FlagAbove,
            DirectionArg::Below => SimDirection::FlagBelow,
        },
        fpr_cap: a.fpr_cap,
    };
    let clean = zoo::load_models(&a.clean)?;
    let backdoor = zoo::load_models(&a.backdoor)?;
    info!("calibrating on {} clean and {} backdoored heads", clean.len(), backdoor.len());
    let (cfg, cal) = zoo::calibrate_config(&clean, &backdoor, &base, seed)?;
    let doc = cfg.to_json();
    write_out(&a.out, doc.as_bytes())?;

    // target-aware TPR when the backdoor directory carries a manifest
    let manifest_path = a.backdoor.join(MANIFEST_FILE);
    let mut target_match = None;
    if cfg.mode == Mode::Targeted && manifest_path.is_file() {
        let manifest = synth::read_manifest(&manifest_path)?;
        let verdicts = zoo::detect_all(&backdoor, &cfg, seed)?;
        let mut hits = 0;
        let mut known = 0;
        for v in &verdicts {
            let entry = manifest.iter().find(|e| e.model_id() == v.model_id);
            if let Some(t) = entry.filter(|e| e.label == TruthLabel::Backdoor).and_then(|e| e.target) {
                known += 1;
                hits += usize::from(v.is_backdoored() && v.target == Some(t));
            }
        }
        if known > 0 {
            target_match = Some(hits as f64 / known as f64);
        }
    }
    if cli.json {
        let summary = serde_json::json!({
            "tau": cal.tau,
            "tpr": cal.tpr,
            "fpr": cal.fpr,
            "margin": if cal.margin.is_finite() { Some(cal.margin) } else { None },
            "tpr_target_match": target_match,
            "config": serde_json::to_value(&cfg)?,
        });
        println!("{}", json::to_canonical_string(&summary)?);
    } else {
        println!("tau {} (tpr {:.4}, fpr {:.4})", cal.tau, cal.tpr, cal.fpr);
        if let Some(m) = target_match {
            println!("tpr with target match {m:.4}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_scan(cli: &Cli, a: &ScanArgs, workers: usize) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let manifest_path = a.manifest.clone().or_else(|| {
        let p = a.zoo.join(MANIFEST_FILE);
        p.is_file().then_some(p)
    });
    let manifest = manifest_path.as_deref().map(synth::read_manifest).transpose()?;
    let scan_seed = cli.seed.unwrap_or(cfg.probe.seed);
    let report = zoo::scan(&a.zoo, &cfg, manifest.as_deref(), workers, scan_seed)?;
    if report.errors() > 0 {
        warn!("{} of {} files failed", report.errors(), report.per_model.len());
    }
    let doc = report.to_json();
    if let Some(out) = &a.out {
        write_out(out, doc.as_bytes())?;
    }
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        write_out(path, &buf)?;
    }
    if cli.json {
        print!("{doc}");
    } else {
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let m = report.metrics;
        println!(
            "{} models, {} errors | tpr {} tpr_target {} fpr {} mtpr {} ap {} | mean {} ms p95 {} ms",
            report.per_model.len(),
            report.errors(),
            fmt(m.tpr),
            fmt(m.tpr_target_match),
            fmt(m.fpr),
            fmt(m.mtpr),
            fmt(report.average_precision),
            fmt(report.mean_latency_ms),
            fmt(report.p95_latency_ms),
        );
    }
    Ok(EXIT_OK)
}

fn parse_range(s: &str, flag: &str) -> Result<(f64, f64), BoxError> {
    let parsed = match s.split_once(':') {
        Some((lo, hi)) => lo.trim().parse::<f64>().ok().zip(hi.trim().parse::<f64>().ok()),
        None => s.trim().parse::<f64>().ok().map(|v| (v, v)),
    };
    match parsed {
        Some((lo, hi)) if lo.is_finite() && hi.is_finite() && lo <= hi => Ok((lo, hi)),
        _ => Err(usage(format!("{flag} expects `lo:hi` with lo <= hi, got `{s}`"))),
    }
}

fn parse_mechanisms(s: &str) -> Result<Vec<Mechanism>, BoxError> {
    if s == "all" {
        return Ok(Mechanism::ALL.to_vec());
    }
    s.split(',')
        .map(|m| m.trim().parse::<Mechanism>().map_err(usage))
        .collect()
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> CmdResult {
    let mut p = BenchmarkParams::new(a.clean, a.backdoor, cli.seed.unwrap_or(0));
    p.dim = a.dim;
    p.classes = a.classes;
    p.mechanisms = parse_mechanisms(&a.mechanism)?;
    p.inflate = parse_range(&a.inflate, "--inflate")?;
    p.bias_shift = parse_range(&a.bias_shift, "--bias-shift")?;
    p.margin = a.margin;
    p.two_layer_every = a.two_layer_every;
    if a.clean + a.backdoor == 0 {
        return Err(usage("need --clean or --backdoor > 0"));
    }
    if !(a.margin > 0.0) {
        return Err(usage("--margin must be positive"));
    }
    let entries = synth::gen_benchmark(&p, &a.out)?;
    if cli.json {
        print!("{}", synth::manifest_json(&entries));
    } else {
        println!("wrote {} heads and {} to {}", entries.len(), MANIFEST_FILE, a.out.display());
    }
    Ok(EXIT_OK)
}

fn write_matrix_csv(path: &Path, header_prefix: &str, m: ndarray::ArrayView2<'_, f64>) -> Result<(), BoxError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..m.ncols()).map(|i| format!("{header_prefix}{i}")))?;
    for row in m.outer_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let mut buf = w.into_inner().map_err(|e| e.to_string())?;
    buf.flush()?;
    write_out(path, &buf)
}

fn probe_settings(dist: DistArg, sigma: Option<f64>, count: usize, seed: u64) -> detector::ProbeSettings {
    detector::ProbeSettings {
        dist: match dist {
            DistArg::Auto => ProbeDist::Auto,
            DistArg::Uniform01 => ProbeDist::Uniform01,
            DistArg::Gaussian => ProbeDist::Gaussian,
        },
        sigma,
        count,
        seed,
    }
}

fn cmd_probe(cli: &Cli, a: &ProbeArgs) -> CmdResult {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if matches!(a.dist, DistArg::Gaussian) && a.sigma.is_none() {
        return Err(usage("--dist gaussian needs --sigma"));
    }
    let head = HeadSpec::from_path(&a.model).map_err(|e| format!("{}: {e}", a.model.display()))?;
    let settings = probe_settings(a.dist, a.sigma, a.count, cli.seed.unwrap_or(0));
    let cfg = settings.resolve(&head)?;
    let batch = probe::generate_probes(&cfg, head.input_shape());
    write_matrix_csv(&a.out, "x", batch.values.view())?;
    info!("{:?}, {} probes", cfg.distribution(), cfg.count());
    Ok(EXIT_OK)
}

fn cmd_export(cli: &Cli, a: &ExportArgs) -> CmdResult {
    let head = HeadSpec::from_path(&a.model).map_err(|e| format!("{}: {e}", a.model.display()))?;
    let mut settings = match &a.config {
        Some(path) => load_config(path)?.probe,
        None => detector::ProbeSettings::default(),
    };
    if let Some(seed) = cli.seed {
        settings.seed = seed;
    }
    let cfg = settings.resolve(&head)?;
    let batch = probe::generate_probes(&cfg, head.input_shape());
    let resp = eval::forward(&head, &batch)?;
    let m = match a.what {
        ResponseArg::Logits => resp.logits.view(),
        ResponseArg::Probabilities => resp.probabilities.view(),
    };
    write_matrix_csv(&a.out, "class", m)?;
    Ok(EXIT_OK)
}
