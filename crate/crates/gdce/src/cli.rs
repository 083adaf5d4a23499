//! The `gdce` command line. Exit codes: 0 success, 1 usage or configuration,
//! 2 data, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gdce_core::gradcheck;
use gdce_core::image::Normalization;
use gdce_core::synth::ShiftProfile;
use gdce_core::Error as CoreError;

use crate::config::{ConfigError, RunConfig};
use crate::error::DataError;
use crate::pipeline::{self, AblationInputs, GdceInputs, PipelineError, Scanner, Split, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "gdce", version, about = "Global tone-curve harmonization pipeline")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set gdce.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed; overrides the configuration and GDCE_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress (repeat for more detail).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScannerArg {
    Reference,
    Shifted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// Continue from the training state in the output directory.
    #[arg(long)]
    resume: bool,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Stop after this many completed epochs, leaving a resumable state.
    #[arg(long)]
    stop_after_epoch: Option<usize>,
}

impl TrainFlags {
    fn options(&self) -> TrainOptions {
        TrainOptions { resume: self.resume, force: self.force, stop_after_epoch: self.stop_after_epoch }
    }
}

#[derive(Debug, Args)]
struct EnhancerInputs {
    /// Shifted-domain training manifest.
    #[arg(long)]
    shifted: PathBuf,
    /// Reference-domain manifest used as the perceptual reference pool.
    #[arg(long)]
    reference: PathBuf,
    /// Frozen discriminator checkpoint from train-clf.
    #[arg(long)]
    discriminator: PathBuf,
}

impl EnhancerInputs {
    fn inputs(&self) -> GdceInputs {
        GdceInputs {
            shifted: self.shifted.clone(),
            reference: self.reference.clone(),
            discriminator: self.discriminator.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "reference")]
        scanner: ScannerArg,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        force: bool,
    },
    /// Apply an acquisition-shift profile to every image of a manifest.
    Shift {
        #[arg(long)]
        manifest: PathBuf,
        /// Profile as JSON or TOML; defaults to the configuration's [shift].
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train the task classifier used as discriminator.
    TrainClf {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Train the curve-coefficient predictor against a frozen discriminator.
    TrainGdce {
        #[command(flatten)]
        inputs: EnhancerInputs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Enhance images and log the applied coefficients.
    Apply {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Apply explicit coefficients to images.
    Curve {
        /// Comma-separated coefficients applied to every image.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "from_log")]
        alphas: Vec<f32>,
        /// Coefficient log written by `apply`, matched by file name.
        #[arg(long)]
        from_log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Metrics report of a discriminator, optionally behind an enhancer.
    Eval {
        #[arg(long)]
        discriminator: PathBuf,
        #[arg(long)]
        gdce: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one enhancer per (layers, iterations) cell.
    Ablate {
        #[command(flatten)]
        inputs: EnhancerInputs,
        /// Shifted-domain test manifest.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        curve_cases: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("gradient check failed for: {0}")]
    Gradcheck(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Pipeline(e.into())
    }
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::NonFinite(_) | CoreError::Diverged { .. } => 3,
        CoreError::InvalidConfig(_)
        | CoreError::InvalidProfile(_)
        | CoreError::TapIndex { .. }
        | CoreError::CoefficientRange { .. }
        | CoreError::EmptyCurve => 1,
        _ => 2,
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Gradcheck(_) => 3,
            CliError::Pipeline(p) => match p {
                PipelineError::Config(_) | PipelineError::Usage(_) => 1,
                PipelineError::Data(DataError::NotEmpty(_)) => 1,
                PipelineError::Data(DataError::Image(_, e)) => core_code(e).max(2),
                PipelineError::Data(_) => 2,
                PipelineError::Core(e) => core_code(e),
            },
        }
    }
}

fn load_profile(path: &Path) -> Result<ShiftProfile, CliError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Read(name.clone(), e))?;
    let profile: ShiftProfile = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| ConfigError::Parse(name, e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(name, e.to_string()))?
    };
    Ok(profile)
}

fn print_outcome(what: &str, o: &pipeline::TrainOutcome) {
    match (&o.checkpoint, o.best_worst_group) {
        (Some(p), Some(w)) => println!(
            "{what}: {} epochs, best epoch {} (worst-group {w:.4}) -> {} sha256 {}",
            o.epochs_completed,
            o.best_epoch.unwrap_or(0),
            p.display(),
            o.sha256.as_deref().unwrap_or("")
        ),
        _ => println!("{what}: stopped after {} epochs; rerun with --resume", o.epochs_completed),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    let norm = cfg.normalization()?;
    match cli.command {
        Command::GenData { out, scanner, split, force } => {
            let scanner = match scanner {
                ScannerArg::Reference => Scanner::Reference,
                ScannerArg::Shifted => Scanner::Shifted,
            };
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let m = pipeline::gen_data(&cfg, scanner, split, &out, force)?;
            println!("wrote {} images to {}", m.entries.len(), out.display());
        }
        Command::Shift { manifest, profile, out, force } => {
            let profile = match profile {
                Some(p) => load_profile(&p)?,
                None => cfg.shift,
            };
            let m = pipeline::shift_dataset(&manifest, &profile, &out, force)?;
            println!("shifted {} images into {}", m.entries.len(), out.display());
        }
        Command::TrainClf { manifest, out, flags } => {
            let o = pipeline::train_clf(&cfg, &manifest, &out, flags.options())?;
            print_outcome("train-clf", &o);
        }
        Command::TrainGdce { inputs, out, flags } => {
            let o = pipeline::train_gdce(&cfg, &inputs.inputs(), &out, flags.options())?;
            print_outcome("train-gdce", &o);
        }
        Command::Apply { checkpoint, out, force, images } => {
            let alphas = pipeline::apply(&checkpoint, &images, unit(norm)?, &out, force)?;
            println!("enhanced {} images into {}", alphas.len(), out.display());
        }
        Command::Curve { alphas, from_log, out, force, images } => {
            let jobs: Vec<(PathBuf, Vec<f32>)> = match from_log {
                Some(log) => {
                    let entries = pipeline::parse_alpha_log(&log)?;
                    images
                        .iter()
                        .map(|p| {
                            let name = pipeline::out_name(p);
                            entries.iter().find(|(n, _)| *n == name).map(|(_, a)| (p.clone(), a.clone())).ok_or_else(
                                || {
                                    PipelineError::Usage(format!(
                                        "{} has no entry for {}",
                                        log.display(),
                                        name.display()
                                    ))
                                },
                            )
                        })
                        .collect::<Result<_, _>>()?
                }
                None if alphas.is_empty() => {
                    return Err(PipelineError::Usage("give --alphas or --from-log".into()).into());
                }
                None => images.iter().map(|p| (p.clone(), alphas.clone())).collect(),
            };
            pipeline::curve(&jobs, unit(norm)?, &out, force)?;
            println!("wrote {} images to {}", jobs.len(), out.display());
        }
        Command::Eval { discriminator, gdce, manifest, out } => {
            let report = pipeline::eval(&cfg, &discriminator, gdce.as_deref(), &manifest)?;
            pipeline::write_report(&report, &out)?;
            print!("{}", report.render());
            if !report.absent_groups.is_empty() {
                println!("absent groups: {}", report.absent_groups.join(", "));
            }
        }
        Command::Ablate { inputs, test, out, force } => {
            let grid = pipeline::ablate(&cfg, &AblationInputs { gdce: inputs.inputs(), test }, &out, force)?;
            println!("validation worst-group\n{}", grid.render(&grid.validation));
            println!("test worst-group\n{}", grid.render(&grid.test));
        }
        Command::Gradcheck { curve_cases } => {
            let checks = gradcheck::run_all(cfg.seed, curve_cases)?;
            println!("{:<16} {:>12} {:>10} {:>7} {:>7}  result", "op", "max rel err", "tolerance", "probes", "skipped");
            for c in &checks {
                println!(
                    "{:<16} {:>12.3e} {:>10.0e} {:>7} {:>7}  {}",
                    c.op,
                    c.max_rel_error,
                    c.tolerance,
                    c.probes,
                    c.skipped,
                    if c.passed() { "ok" } else { "FAIL" }
                );
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.op).collect();
            if !failed.is_empty() {
                return Err(CliError::Gradcheck(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn unit(norm: Normalization) -> Result<Normalization, CliError> {
    if norm.is_unit_range() {
        Ok(norm)
    } else {
        Err(PipelineError::Usage(format!("normalization `{}` does not produce unit-range images", norm.name())).into())
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
