use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use infoplane::harness::{
    emit_csv, emit_svg_infoplane, read_csv, run_experiment, sweep, ExperimentConfig, MiEndpoint, SweepGrid,
};
use infoplane::mnist::{self, Source};
use infoplane::topology::ArchitectureKind;
use infoplane::Error;

#[derive(Parser)]
#[command(name = "infoplane", version, about = "Train dense nets on MNIST and track first/last-layer mutual information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download and checksum-verify the four MNIST files.
    Fetch {
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        /// Copy from a local directory (raw or .gz files) instead of downloading.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Train one network and write its per-epoch trajectory as CSV.
    Run(RunArgs),
    /// Run a grid of configurations into a directory with a resumable manifest.
    Sweep(SweepArgs),
    /// Draw trajectories from CSV files as an information-plane SVG.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

/// Settings shared by `run` and `sweep`; unset flags fall back to the config file, then defaults.
#[derive(Args, Default)]
struct Overrides {
    /// TOML file with an experiment config (`run`) or a sweep grid (`sweep`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Optimizer steps; epoch 0 is always recorded at initialization.
    #[arg(long)]
    epochs: Option<usize>,
    /// RMSprop learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// RMSprop decay of the squared-gradient average.
    #[arg(long)]
    rho: Option<f64>,
    /// Neighbor count of the MI estimator.
    #[arg(long)]
    k: Option<usize>,
    /// Validation rows used for MI; 0 uses all of them.
    #[arg(long)]
    mi_subsample: Option<usize>,
    /// Half-width of the uniform noise added before MI estimation.
    #[arg(long)]
    jitter_amplitude: Option<f64>,
    /// Second MI layer: softmax-input or last-hidden.
    #[arg(long)]
    mi_endpoint: Option<MiEndpoint>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Write zero in the wall_ms column so output is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

impl Overrides {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.rho {
            c.rho = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.mi_subsample {
            c.mi_subsample = v;
        }
        if let Some(v) = self.jitter_amplitude {
            c.jitter_amplitude = v;
        }
        if let Some(v) = self.mi_endpoint {
            c.mi_endpoint = v;
        }
        if let Some(v) = &self.data_dir {
            c.data_dir = v.clone();
        }
        if self.no_timing {
            c.timing = false;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    /// mlp, shortcut, residual or shortcut-residual.
    #[arg(long)]
    arch: Option<ArchitectureKind>,
    /// Hidden width W; the first and last hidden layers get 2W.
    #[arg(long)]
    width: Option<usize>,
    /// Number of hidden layers.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV path for the trajectory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    /// Comma-separated architectures.
    #[arg(long, value_delimiter = ',')]
    arch: Vec<ArchitectureKind>,
    #[arg(long, value_delimiter = ',')]
    width: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    depth: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory for run CSVs and the manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Idx { .. } | Error::Io { .. } | Error::Csv(_) => 3,
        Error::Divergence(_) => 4,
        Error::Node { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn run(args: RunArgs) -> Result<(), Error> {
    let mut c = match &args.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    args.common.apply(&mut c);
    if let Some(v) = args.arch {
        c.architecture = v;
    }
    if let Some(v) = args.width {
        c.width = v;
    }
    if let Some(v) = args.depth {
        c.depth = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.out {
        c.out = v;
    }
    c.validate()?;
    let trajectory = run_experiment(&c)?;
    emit_csv(&trajectory.records, &c.out)?;
    log::info!("wrote {} records to {}", trajectory.records.len(), c.out.display());
    if trajectory.diverged {
        return Err(Error::Divergence(format!("see the final row of {}", c.out.display())));
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<(), Error> {
    let mut grid = match &args.common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
            SweepGrid::from_toml(&text)?
        }
        None => SweepGrid::default(),
    };
    args.common.apply(&mut grid.base);
    if !args.arch.is_empty() {
        grid.architectures = args.arch;
    }
    if !args.width.is_empty() {
        grid.widths = args.width;
    }
    if !args.depth.is_empty() {
        grid.depths = args.depth;
    }
    if !args.seed.is_empty() {
        grid.seeds = args.seed;
    }
    grid.expand(&args.out)?;
    let report = sweep(&grid, &args.out, args.parallelism)?;
    println!(
        "executed {}, skipped {}, diverged {}, failed {}",
        report.executed,
        report.skipped,
        report.diverged,
        report.failures.len()
    );
    for (hash, msg) in &report.failures {
        eprintln!("run {hash} failed: {msg}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fetch { data_dir, from } => {
            let sources = match from {
                Some(dir) => vec![Source::Directory(dir)],
                None => mnist::default_sources(),
            };
            mnist::fetch(&data_dir, &sources)
        }
        Command::Run(args) => run(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Plot { out, csv } => csv
            .iter()
            .map(|p| {
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                read_csv(p).map(|r| (name, r))
            })
            .collect::<Result<Vec<_>, _>>()
            .and_then(|runs| emit_svg_infoplane(&runs, &out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
