//! `repinf`: train the VAE, run repeated inference, and export the latent
//! analyses as CSV.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use repinf_core::experiments::{read_config, RunConfig};
use repinf_core::vae::default_schedule;
use repinf_core::Error;

#[derive(Parser)]
#[command(name = "repinf", version, about = "VAE repeated-inference experiments on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: <config output_dir>/<command>).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel trials or sweep cells; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory holding the MNIST IDX files (default: $REPINF_DATA_DIR or data/mnist).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// 10,000 training images, 20 epochs, 100 trials per noise level.
    #[arg(long)]
    desk_scale: bool,
    /// Use only the first N training images.
    #[arg(long)]
    train_images: Option<usize>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Trials {
    /// Digit whose images start the runs.
    #[arg(long)]
    label: Option<u8>,
    /// Fraction of pixels inverted in the start image.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Number of generation/recognition iterations.
    #[arg(long = "T", alias = "steps")]
    steps: Option<usize>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Training {
    /// Latent width.
    #[arg(long)]
    nz: Option<usize>,
    /// Total epochs, split over the three learning-rate stages.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a VAE and write its checkpoints and per-epoch log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
    },
    /// Run repeated inference from corrupted training images.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        trials: Trials,
        /// Also write every latent trajectory as a binary array file.
        #[arg(long)]
        dump_arrays: bool,
    },
    /// Per-label concepts and the abstract concept.
    Concepts {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Concept cosine similarities and active latent units.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// A unit is active when its encoder-mean std exceeds this.
        #[arg(long, default_value_t = repinf_core::analysis::DEFAULT_ACTIVE_THRESHOLD)]
        threshold: f64,
    },
    /// Principal components of the training-set encoder means.
    Pca {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Closest hierarchy level (memory, concept, abstract) per noise level.
    Stages {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        trials: Trials,
        #[arg(long)]
        p_max: Option<f64>,
        #[arg(long)]
        p_step: Option<f64>,
    },
    /// Train one model per latent width and compare concept geometry.
    SweepNz {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        trials: Trials,
        /// Latent widths.
        #[arg(long = "nz-values", value_delimiter = ',', default_values_t = repinf_core::experiments::SWEEP_NZ_GRID)]
        nz_values: Vec<usize>,
    },
    /// Held-out bound over latent width x learning rate x batch size.
    SweepGen {
        #[command(flatten)]
        common: Common,
        #[arg(long = "nz-values", value_delimiter = ',', default_values_t = repinf_core::experiments::DEFAULT_GEN_NZ_GRID)]
        nz_values: Vec<usize>,
        #[arg(long = "lr-values", value_delimiter = ',', default_values_t = repinf_core::experiments::SWEEP_LR_GRID)]
        lr_values: Vec<f64>,
        #[arg(long = "batch-values", value_delimiter = ',', default_values_t = repinf_core::experiments::SWEEP_BATCH_GRID)]
        batch_values: Vec<usize>,
        /// Epochs per cell (default 100, or 20 with --desk-scale).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Label final inference states with a convolutional classifier.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trained classifier; one is trained and saved when absent.
        #[arg(long)]
        discriminator: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        disc_epochs: usize,
        #[command(flatten)]
        trials: Trials,
    },
    /// Finite-difference check of every analytic gradient on small models.
    GradCheck {
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Concepts { .. } => "concepts",
            Command::Analyze { .. } => "analyze",
            Command::Pca { .. } => "pca",
            Command::Stages { .. } => "stages",
            Command::SweepNz { .. } => "sweep-nz",
            Command::SweepGen { .. } => "sweep-gen",
            Command::Classify { .. } => "classify",
            Command::GradCheck { .. } => "grad-check",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } | Error::NonFinite(_) => Failure::Numerical(e.to_string()),
            Error::Format { .. } | Error::InsufficientData(_) | Error::Io { .. } => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

/// Base config (file or defaults), then desk scale, then flags.
pub fn resolve_config(command: &str, common: &Common) -> Result<RunConfig, Failure> {
    let mut c = match &common.config {
        Some(path) => read_config(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if common.desk_scale {
        let desk = RunConfig::desk();
        c.schedule = desk.schedule;
        c.train_images = desk.train_images;
        c.stage_trials = desk.stage_trials;
    }
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(w) = common.workers {
        c.workers = w;
    }
    if let Some(d) = &common.data_dir {
        c.data_dir = Some(d.clone());
    }
    if let Some(n) = common.train_images {
        c.train_images = Some(n);
    }
    c.output_dir = common.out.clone().unwrap_or_else(|| c.output_dir.join(command));
    Ok(c)
}

pub fn apply_training(c: &mut RunConfig, t: &Training) {
    if let Some(nz) = t.nz {
        c.latent_dim = nz;
    }
    if let Some(e) = t.epochs {
        c.schedule = default_schedule(e);
    }
    if let Some(b) = t.batch_size {
        c.batch_size = b;
    }
}

pub fn apply_trials(c: &mut RunConfig, t: &Trials) {
    if let Some(l) = t.label {
        c.label = l;
    }
    if let Some(p) = t.p {
        c.p = p;
    }
    if let Some(n) = t.trials {
        c.trials = n;
    }
    if let Some(s) = t.steps {
        c.steps = s;
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let name = cli.command.name();
    match cli.command {
        Command::Train { common, training } => {
            let mut c = resolve_config(name, &common)?;
            apply_training(&mut c, &training);
            commands::train(c)
        }
        Command::Infer { common, checkpoint, trials, dump_arrays } => {
            let mut c = resolve_config(name, &common)?;
            apply_trials(&mut c, &trials);
            commands::infer(c, &checkpoint, dump_arrays)
        }
        Command::Concepts { common, checkpoint } => commands::concepts(resolve_config(name, &common)?, &checkpoint),
        Command::Analyze { common, checkpoint, threshold } => {
            commands::analyze(resolve_config(name, &common)?, &checkpoint, threshold)
        }
        Command::Pca { common, checkpoint } => commands::pca(resolve_config(name, &common)?, &checkpoint),
        Command::Stages { common, checkpoint, trials, p_max, p_step } => {
            let mut c = resolve_config(name, &common)?;
            apply_trials(&mut c, &Trials { trials: None, ..trials.clone() });
            if let Some(n) = trials.trials {
                c.stage_trials = n;
            }
            if let Some(v) = p_max {
                c.p_max = v;
            }
            if let Some(v) = p_step {
                c.p_step = v;
            }
            commands::stages(c, &checkpoint)
        }
        Command::SweepNz { common, training, trials, nz_values } => {
            let mut c = resolve_config(name, &common)?;
            apply_training(&mut c, &training);
            apply_trials(&mut c, &trials);
            commands::sweep_nz(c, &nz_values)
        }
        Command::SweepGen { common, nz_values, lr_values, batch_values, epochs } => {
            let c = resolve_config(name, &common)?;
            let epochs = epochs.unwrap_or(if common.desk_scale { 20 } else { 100 });
            commands::sweep_gen(c, &nz_values, &lr_values, &batch_values, epochs)
        }
        Command::Classify { common, checkpoint, discriminator, disc_epochs, trials } => {
            let mut c = resolve_config(name, &common)?;
            apply_trials(&mut c, &trials);
            commands::classify(c, &checkpoint, discriminator.as_deref(), disc_epochs)
        }
        Command::GradCheck { out, seeds } => commands::grad_check(out.as_deref(), seeds),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
