//! `simlab` command-line driver.
//!
//! Every experiment writes a CSV whose leading `# ` lines hold the resolved
//! configuration as TOML, followed by a column line and one row per record.
//! Such a CSV can be passed back with `--config` to regenerate it.
//!
//! Seed precedence: `--seed`, then `SIMLAB_SEED`, then the config file, then 0.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use simlab_core::nonlinear::MapKind;
use simlab_core::pipeline::PipelineConfig;

use crate::commands::AttackMode;
use crate::config::{
    AttackParams, CodebookParams, CompressorParams, ConcentrationParams, DetectParams, ExperimentConfig, RatioParams, RobustnessParams,
    WorldParams,
};
use crate::output::RunOutput;
use crate::plot::{emit_plot_script, PlotKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config file error: {0}")]
    ConfigFile(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("CSV schema mismatch: {0}")]
    Schema(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::ConfigFile(_) => 3,
            Self::InvalidParams(_) => 4,
            Self::Io(_) => 5,
            Self::Compute(_) => 6,
            Self::Schema(_) => 7,
        }
    }
}

impl From<simlab_core::Error> for CliError {
    fn from(e: simlab_core::Error) -> Self {
        use simlab_core::Error as E;
        match e {
            E::Config(_) | E::OutOfRange(_) | E::DimensionMismatch { .. } => Self::InvalidParams(e.to_string()),
            _ => Self::Compute(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "simlab", version, about = "Adversarial fragility experiments for compressed classifiers")]
struct Cli {
    /// Master seed (overrides SIMLAB_SEED and the config file).
    #[arg(long, global = true, env = "SIMLAB_SEED")]
    seed: Option<u64>,
    /// TOML config, or a CSV previously written by simlab.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism. Results do not
    /// depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file. Without it the CSV goes to stdout and the summary to
    /// stderr.
    #[arg(long, global = true, visible_alias = "csv")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Codeword synthesis.
    Codebook {
        #[command(subcommand)]
        action: CodebookCmd,
    },
    /// Random compressors and their projector diagnostics.
    Compressor {
        #[command(subcommand)]
        action: CompressorCmd,
    },
    /// Minimum-norm attacks on the compressed classifier.
    Attack {
        #[command(subcommand)]
        action: AttackCmd,
    },
    /// Survival and misdirection rates under random perturbations.
    Robustness {
        #[command(subcommand)]
        action: RobustnessCmd,
    },
    /// Tail frequencies of projected norms against their bounds.
    Concentration {
        #[command(subcommand)]
        action: ConcentrationCmd,
    },
    /// Worst-case to average-case Jacobian gain ratio.
    Ratio(RatioArgs),
    /// Reconstruction-residual detection.
    Detect {
        #[command(subcommand)]
        action: DetectCmd,
    },
    /// Synthetic waveform decode-and-correlate experiment.
    Pipeline {
        #[command(subcommand)]
        action: PipelineCmd,
    },
    /// Plot scripts for CSV outputs.
    Report {
        #[command(subcommand)]
        action: ReportCmd,
    },
}

#[derive(Debug, Subcommand)]
enum CodebookCmd {
    /// Generate a codebook and write every codeword.
    Gen(CodebookArgs),
}

#[derive(Debug, Subcommand)]
enum CompressorCmd {
    /// Sample compressors and check the projector laws.
    Gen(CompressorArgs),
}

#[derive(Debug, Subcommand)]
enum AttackCmd {
    /// Push inputs into a chosen wrong label.
    Targeted(AttackArgs),
    /// Push inputs out of their own label.
    Untargeted(AttackArgs),
}

#[derive(Debug, Subcommand)]
enum RobustnessCmd {
    /// Sweep the perturbation radius for one input.
    Sweep(RobustnessArgs),
}

#[derive(Debug, Subcommand)]
enum ConcentrationCmd {
    /// Compare empirical tails with the exponential bounds.
    Check(ConcentrationArgs),
}

#[derive(Debug, Subcommand)]
enum DetectCmd {
    /// Check that every attack inside the guarantee radius is flagged.
    Run(DetectArgs),
    /// Threshold sweep over clean and attacked residuals.
    Roc(DetectArgs),
}

#[derive(Debug, Subcommand)]
enum PipelineCmd {
    /// One clean and one attacked trial per sentence.
    Run(PipelineArgs),
}

#[derive(Debug, Subcommand)]
enum ReportCmd {
    /// Write a gnuplot script for a CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct CodebookArgs {
    /// Ambient dimension N.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    labels: Option<usize>,
    /// Codewords per label.
    #[arg(long)]
    nuisances: Option<usize>,
    /// Separation radius.
    #[arg(long)]
    r0: Option<f64>,
    /// Sphere radius r (default r0 / 2).
    #[arg(long)]
    radius: Option<f64>,
    /// Typical anchor distance in units of r0.
    #[arg(long)]
    anchor_spread: Option<f64>,
    /// Typical codeword-to-anchor distance in units of r0.
    #[arg(long)]
    nuisance_spread: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
}

#[derive(Debug, Args)]
struct WorldArgs {
    /// Compressed dimension M.
    #[arg(long)]
    m: Option<usize>,
    /// Inputs sit at this fraction of r from a codeword.
    #[arg(long)]
    offset_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct CompressorArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Number of compressors, seeded by index.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[command(flatten)]
    codebook: CodebookArgs,
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    trials: Option<usize>,
    /// Fixed target label for targeted attacks (default: random per trial).
    #[arg(long)]
    target: Option<usize>,
    /// Landing depth (targeted) or overshoot (untargeted).
    #[arg(long)]
    margin: Option<f64>,
    /// Epsilon of the attack-size bound.
    #[arg(long)]
    epsilon: Option<f64>,
    /// New codebook and compressor for every trial.
    #[arg(long)]
    fresh_world: bool,
}

#[derive(Debug, Args)]
struct RobustnessArgs {
    #[command(flatten)]
    codebook: CodebookArgs,
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated radii; overrides the automatic grid.
    #[arg(long, visible_alias = "l-grid", value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long)]
    steps: Option<usize>,
    /// Largest radius of the automatic grid, in attack norms.
    #[arg(long)]
    max_factor: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Debug, Args)]
struct ConcentrationArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated epsilons in (0, 1).
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Debug, Args)]
struct RatioArgs {
    /// linear, tanh or twolayer.
    #[arg(long)]
    map: Option<MapKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Number of independently seeded maps.
    #[arg(long)]
    seeds: Option<usize>,
    /// Directions for the average gain.
    #[arg(long)]
    trials: Option<usize>,
    /// Probe point scale (0 for the origin).
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Compare analytic and finite-difference Jacobians.
    #[arg(long)]
    fd_check: bool,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    codebook: CodebookArgs,
    #[command(flatten)]
    world: WorldArgs,
    /// Attacks inside the guarantee radius to collect (run), or clean and
    /// attacked trials each (roc).
    #[arg(long)]
    trials: Option<usize>,
    /// Detection threshold for `run` (default: the sphere radius r).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_attempts: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    /// Clean-trial noise norm as a fraction of r.
    #[arg(long)]
    clean_noise: Option<f64>,
    /// Thresholds in the ROC grid.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    num_sentences: Option<usize>,
    #[arg(long)]
    waveform_length: Option<usize>,
    #[arg(long)]
    compressed_dim: Option<usize>,
    #[arg(long)]
    radius_fraction: Option<f64>,
    #[arg(long)]
    channel_snr_db: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    channel_gain: Option<f64>,
    #[arg(long)]
    attack_snr_db: Option<f64>,
    #[arg(long)]
    correlation_threshold: Option<f64>,
    #[arg(long)]
    reconstruction_fraction: Option<f64>,
    /// Also write a gnuplot script for the CSV (needs --out).
    #[arg(long)]
    plot_script: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// CSV written by simlab.
    input: PathBuf,
    /// fig4 or tail.
    #[arg(long)]
    kind: String,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl CodebookArgs {
    fn apply(self, p: &mut CodebookParams) {
        set(&mut p.n, self.n);
        set(&mut p.labels, self.labels);
        set(&mut p.nuisances, self.nuisances);
        set(&mut p.r0, self.r0);
        if self.radius.is_some() {
            p.radius = self.radius;
        }
        set(&mut p.anchor_spread, self.anchor_spread);
        set(&mut p.nuisance_spread, self.nuisance_spread);
        set(&mut p.max_retries, self.max_retries);
    }
}

impl WorldArgs {
    fn apply(self, p: &mut WorldParams) {
        set(&mut p.m, self.m);
        set(&mut p.offset_fraction, self.offset_fraction);
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CliError::Usage(String::new()).exit_code() } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let pool = match cli.threads {
        Some(0) => return Err(CliError::InvalidParams("--threads must be at least 1".into())),
        t => rayon::ThreadPoolBuilder::new()
            .num_threads(t.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Compute(format!("cannot start worker pool: {e}")))?,
    };
    let out = cli.out.clone();
    if let Command::Report { action: ReportCmd::Plot(args) } = cli.command {
        let kind: PlotKind = args.kind.parse()?;
        let script = emit_plot_script(&args.input, kind)?;
        return match &out {
            Some(path) => write_file(path, script.as_bytes()),
            None => write_stdout(script.as_bytes()),
        };
    }
    let plot_script = match &cli.command {
        Command::Pipeline { action: PipelineCmd::Run(args) } => args.plot_script.clone(),
        _ => None,
    };
    if plot_script.is_some() && out.is_none() {
        return Err(CliError::InvalidParams("--plot-script needs --out for the CSV it plots".into()));
    }
    let result = pool.install(|| dispatch(cli.command, file, seed))?;
    emit(&result, out.as_deref())?;
    if let (Some(script), Some(csv)) = (plot_script, out) {
        write_file(&script, emit_plot_script(&csv, PlotKind::Fig4)?.as_bytes())?;
    }
    Ok(())
}

fn dispatch(command: Command, file: ExperimentConfig, seed: u64) -> Result<RunOutput, CliError> {
    let mut cb = file.codebook.unwrap_or_default();
    let mut world = file.world.unwrap_or_default();
    match command {
        Command::Codebook { action: CodebookCmd::Gen(args) } => {
            args.apply(&mut cb);
            commands::codebook_gen(&cb, seed)
        }
        Command::Compressor { action: CompressorCmd::Gen(args) } => {
            let mut p: CompressorParams = file.compressor.unwrap_or_default();
            set(&mut p.m, args.m);
            set(&mut p.n, args.n);
            set(&mut p.count, args.count);
            commands::compressor_gen(&p, seed)
        }
        Command::Attack { action } => {
            let (mode, args) = match action {
                AttackCmd::Targeted(a) => (AttackMode::Targeted, a),
                AttackCmd::Untargeted(a) => (AttackMode::Untargeted, a),
            };
            args.codebook.apply(&mut cb);
            args.world.apply(&mut world);
            let mut p: AttackParams = file.attack.unwrap_or_default();
            set(&mut p.trials, args.trials);
            if args.target.is_some() {
                p.target = args.target;
            }
            if args.margin.is_some() {
                p.margin = args.margin;
            }
            set(&mut p.epsilon, args.epsilon);
            p.fresh_world |= args.fresh_world;
            commands::attack(mode, &cb, &world, &p, seed)
        }
        Command::Robustness { action: RobustnessCmd::Sweep(args) } => {
            args.codebook.apply(&mut cb);
            args.world.apply(&mut world);
            let mut p: RobustnessParams = file.robustness.unwrap_or_default();
            set(&mut p.trials, args.trials);
            set(&mut p.radii, args.radii);
            set(&mut p.steps, args.steps);
            set(&mut p.max_factor, args.max_factor);
            set(&mut p.epsilon, args.epsilon);
            commands::robustness_sweep(&cb, &world, &p, seed)
        }
        Command::Concentration { action: ConcentrationCmd::Check(args) } => {
            let mut p: ConcentrationParams = file.concentration.unwrap_or_default();
            set(&mut p.m, args.m);
            set(&mut p.n, args.n);
            set(&mut p.eps, args.eps);
            set(&mut p.trials, args.trials);
            commands::concentration_check(&p, seed)
        }
        Command::Ratio(args) => {
            let mut p: RatioParams = file.ratio.unwrap_or_default();
            set(&mut p.map, args.map);
            set(&mut p.n, args.n);
            set(&mut p.m, args.m);
            set(&mut p.seeds, args.seeds);
            set(&mut p.trials, args.trials);
            set(&mut p.scale, args.scale);
            set(&mut p.delta, args.delta);
            p.fd_check |= args.fd_check;
            commands::ratio(&p, seed)
        }
        Command::Detect { action } => {
            let (roc, args) = match action {
                DetectCmd::Run(a) => (false, a),
                DetectCmd::Roc(a) => (true, a),
            };
            args.codebook.apply(&mut cb);
            args.world.apply(&mut world);
            let mut p: DetectParams = file.detect.unwrap_or_default();
            set(&mut p.trials, args.trials);
            if args.threshold.is_some() {
                p.threshold = args.threshold;
            }
            set(&mut p.max_attempts, args.max_attempts);
            set(&mut p.margin, args.margin);
            set(&mut p.clean_noise, args.clean_noise);
            set(&mut p.grid, args.grid);
            if roc {
                commands::detect_roc(&cb, &world, &p, seed)
            } else {
                commands::detect_run(&cb, &world, &p, seed)
            }
        }
        Command::Pipeline { action: PipelineCmd::Run(args) } => {
            let mut p: PipelineConfig = file.pipeline.unwrap_or_default();
            set(&mut p.num_sentences, args.num_sentences);
            set(&mut p.waveform_length, args.waveform_length);
            set(&mut p.compressed_dim, args.compressed_dim);
            set(&mut p.radius_fraction, args.radius_fraction);
            set(&mut p.channel_snr_db, args.channel_snr_db);
            set(&mut p.channel_gain, args.channel_gain);
            set(&mut p.attack_snr_db, args.attack_snr_db);
            set(&mut p.correlation_threshold, args.correlation_threshold);
            set(&mut p.reconstruction_fraction, args.reconstruction_fraction);
            p.seed = seed;
            commands::pipeline_run(&p)
        }
        Command::Report { .. } => unreachable!("handled before dispatch"),
    }
}

fn emit(result: &RunOutput, out: Option<&Path>) -> Result<(), CliError> {
    let csv = result.to_csv()?;
    match out {
        Some(path) => {
            write_file(path, &csv)?;
            let mut so = std::io::stdout().lock();
            for line in &result.summary {
                writeln!(so, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
            }
            writeln!(so, "wrote {}", path.display()).map_err(|e| CliError::Io(e.to_string()))
        }
        None => {
            write_stdout(&csv)?;
            for line in &result.summary {
                eprintln!("{line}");
            }
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_stdout(bytes: &[u8]) -> Result<(), CliError> {
    std::io::stdout().lock().write_all(bytes).map_err(|e| CliError::Io(e.to_string()))
}
