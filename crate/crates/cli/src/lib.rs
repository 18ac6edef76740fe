//! Command-line driver: argument parsing and the five subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use walldiff_core::config::RunConfig;
use walldiff_core::drawing::SnapMode;
use walldiff_core::metrics::{FeatureExtractor, DEFAULT_EXTRACTOR};
use walldiff_core::pipeline::{self, ConvertOp, ConvertOptions, LoadedModel};
use walldiff_core::suite::{run_suite, SuiteOptions};
use walldiff_core::{Error, VerificationReport};

pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_MISSING: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_EMPTY_EVAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "walldiff",
    version,
    about = "Conditional diffusion for shear-wall layout design"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser from a config file
    Train(TrainArgs),
    /// Generate structural drawings from an architectural drawing or canvas
    Sample(SampleArgs),
    /// Score predicted drawings against labels
    Eval(EvalArgs),
    /// Rasterize segment tables, augment drawings or extract canvases
    Convert(ConvertArgs),
    /// Run the numerical verification suite
    Verify(VerifyArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: the config's output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Architectural drawing (RGB PNG) or canvas (gray PNG)
    #[arg(long)]
    input: PathBuf,
    /// Physical condition
    #[arg(long, allow_negative_numbers = true)]
    d: f64,
    /// Number of outputs
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Reverse steps (default: as trained)
    #[arg(long)]
    infer_steps: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    label: PathBuf,
    #[arg(long, default_value = DEFAULT_EXTRACTOR)]
    extractor: String,
    /// Also write the JSON report here
    #[arg(long)]
    json: Option<PathBuf>,
    /// Snap off-palette colors instead of rejecting them
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct ConvertArgs {
    /// Comma-separated conversions applied in order: rasterize, augment, canvas
    #[arg(long, value_delimiter = ',', required = true)]
    op: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Raster width for rasterize
    #[arg(long)]
    width: Option<usize>,
    /// Raster height for rasterize
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    lenient: bool,
    /// Input files or directories
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Take the schedule and seed from this config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also check a trained model
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo draws per marginal check
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Perturb the posterior variance in the loss/KL identity by this
    /// relative amount (fault injection)
    #[arg(long, default_value_t = 0.0)]
    fault_beta_tilde: f64,
    /// Also write the JSON report here
    #[arg(long)]
    json: Option<PathBuf>,
}

enum Failure {
    Core(Error),
    Code(u8),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Missing(_) => EXIT_MISSING,
        Error::Config(_) => EXIT_CONFIG,
        _ => 1,
    }
}

/// Parses `args` (program name first) and runs the subcommand; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let res = match cli.command {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::Convert(a) => convert(a),
        Command::Verify(a) => verify(a),
    };
    match res {
        Ok(()) => 0,
        Err(Failure::Code(c)) => c,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, Error> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    RunConfig::parse(&std::fs::read_to_string(path)?, overrides)
}

fn train(a: TrainArgs) -> CmdResult {
    let cfg = load_config(&a.config, &a.overrides)?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir.clone());
    if !a.quiet {
        eprintln!("config {} -> {}", cfg.hash(), out.display());
    }
    let quiet = a.quiet;
    let res = pipeline::train_run(&cfg, &out, |e, s| {
        if !quiet {
            eprintln!("epoch {e:>3}  mean loss {:.6}  ({} steps)", s.mean, s.steps);
        }
    })?;
    println!(
        "{}",
        res.checkpoints.last().expect("final checkpoint").display()
    );
    Ok(())
}

fn sample(a: SampleArgs) -> CmdResult {
    let mut m = LoadedModel::load(&a.checkpoint)?;
    if a.infer_steps.is_some() {
        m.diffusion.infer_steps = a.infer_steps;
    }
    if a.d <= 0.0 {
        eprintln!(
            "warning: condition d = {} is not positive; the model will extrapolate",
            a.d
        );
    }
    for f in pipeline::sample_to_dir(&m, &a.input, a.d, a.n, a.seed, &a.out)? {
        println!("{}", f.structural.display());
    }
    Ok(())
}

fn snap(lenient: bool) -> SnapMode {
    if lenient {
        SnapMode::Lenient
    } else {
        SnapMode::Strict
    }
}

fn eval(a: EvalArgs) -> CmdResult {
    let extractor = FeatureExtractor::by_name(&a.extractor)?;
    let report = pipeline::evaluate_dirs(&a.pred, &a.label, extractor, snap(a.lenient))?;
    for u in &report.unmatched {
        eprintln!("warning: no counterpart for {u}, skipped");
    }
    if !report.unmatched.is_empty() {
        eprintln!("{} warnings", report.unmatched.len());
    }
    if report.pairs == 0 {
        eprintln!("error: no file names in common between the two directories");
        return Err(Failure::Code(EXIT_EMPTY_EVAL));
    }
    println!(
        "{:<40} {:>7} {:>7} {:>7} {:>7}",
        "name", "SIoU", "WIoU", "eta", "score"
    );
    for r in &report.rows {
        let x = &r.report;
        println!(
            "{:<40} {:>7.4} {:>7.4} {:>7.4} {:>7.4}{}",
            r.name,
            x.siou,
            x.wiou,
            x.eta_sw,
            x.score,
            if x.eta_undefined { "  (no walls)" } else { "" }
        );
    }
    println!(
        "{:<40} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
        "mean", report.mean_siou, report.mean_wiou, report.mean_eta_sw, report.mean_score
    );
    match report.frechet {
        Some(f) => println!("frechet distance ({}): {f:.6}", report.extractor),
        None => println!("frechet distance: n/a (fewer than 2 pairs)"),
    }
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(())
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Error> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.is_file()
                        && f.extension().is_some_and(|e| {
                            e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("csv")
                        })
                })
                .collect();
            v.sort();
            out.extend(v);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(Error::Missing(p.clone()));
        }
    }
    Ok(out)
}

fn convert(a: ConvertArgs) -> CmdResult {
    let ops =
        a.op.iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<ConvertOp>, Error>>()?;
    let inputs = expand_inputs(&a.inputs)?;
    if inputs.is_empty() {
        return Err(Error::Missing(a.inputs[0].clone()).into());
    }
    let extent = match (a.width, a.height) {
        (Some(w), Some(h)) => Some((w, h)),
        (None, None) => None,
        _ => return Err(Error::Config("give both --width and --height".into()).into()),
    };
    let opts = ConvertOptions {
        snap: snap(a.lenient),
        extent,
    };
    let written = pipeline::convert(&inputs, &a.out, &ops, opts)?;
    eprintln!(
        "{} inputs -> {} files in {}",
        inputs.len(),
        written.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    config_hash: Option<String>,
    passed: bool,
    checks: &'a [VerificationReport],
}

fn verify(a: VerifyArgs) -> CmdResult {
    let mut opts = SuiteOptions {
        mc_samples: a.samples,
        theorem2_fault: a.fault_beta_tilde,
        ..SuiteOptions::default()
    };
    let mut hash = None;
    if let Some(p) = &a.config {
        let cfg = load_config(p, &[])?;
        opts.schedule = cfg.schedule();
        opts.seed = cfg.seed;
        hash = Some(cfg.hash());
    }
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let model = a.checkpoint.as_deref().map(LoadedModel::load).transpose()?;
    let checks = run_suite(&opts, model.as_ref())?;
    let passed = checks.iter().all(|c| c.pass);
    println!(
        "{:<34} {:>6} {:>12} {:>12}",
        "check", "result", "discrepancy", "tolerance"
    );
    for c in &checks {
        println!(
            "{:<34} {:>6} {:>12.3e} {:>12.3e}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.discrepancy,
            c.tolerance
        );
    }
    let out = VerifyOutput {
        config_hash: hash,
        passed,
        checks: &checks,
    };
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_vec_pretty(&out)?)?;
    }
    if passed {
        Ok(())
    } else {
        eprintln!("verification failed");
        Err(Failure::Code(EXIT_VERIFY))
    }
}
