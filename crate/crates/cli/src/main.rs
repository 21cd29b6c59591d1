//! `paldc`: dataset generation, identification, inverse training,
//! evaluation and offline compensation.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "paldc", version, about = "Parametric array loudspeaker distortion identification and compensation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run configuration (TOML). Without it the preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration when no file is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Paper)]
    preset: Preset,
    /// Reseeds every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; defaults to `paths.run_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs and accept artifacts from other configurations.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Wavenet,
    Volterra,
    Fir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemKind {
    /// Plant alone.
    Before,
    /// Plant behind the WaveNet inverse.
    Wavenet,
    /// Plant behind the second-order Volterra inverse.
    Vf2,
    /// Plant behind the third-order Volterra inverse.
    Vf3,
    /// Identified model in place of the plant.
    Model,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the corpus, drive the plant and write the segmented dataset.
    Dataset,
    /// Fit an identified model to the dataset.
    Identify {
        #[arg(long, value_enum, default_value_t = Method::Wavenet)]
        method: Method,
        /// Dataset directory; defaults to `<out>/dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the WaveNet inverse through the frozen identified model.
    TrainInverse {
        /// Identified-model checkpoint; defaults to `<out>/identify/wavenet.ckpt`.
        #[arg(long)]
        id: Option<PathBuf>,
        /// Linear-reference checkpoint; defaults to `<out>/identify/linref.ckpt`.
        #[arg(long)]
        linref: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// THD/IMD/response sweeps of the listed systems.
    Evaluate {
        #[arg(long, value_enum, value_delimiter = ',', default_value = "before")]
        systems: Vec<SystemKind>,
        /// Also write SVG charts.
        #[arg(long)]
        svg: bool,
        #[arg(long)]
        inverse: Option<PathBuf>,
        #[arg(long)]
        volterra: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run a WAV file through a trained inverse.
    Compensate {
        #[arg(long)]
        inverse: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = commands::Context::new(
        cli.global.config.as_deref(),
        match cli.global.preset {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        },
        cli.global.seed,
        cli.global.out,
        cli.global.force,
    )?;
    match cli.command {
        Command::Dataset => commands::dataset(&ctx),
        Command::Identify { method, dataset } => commands::identify(&ctx, method, dataset),
        Command::TrainInverse { id, linref, dataset } => commands::train_inverse(&ctx, id, linref, dataset),
        Command::Evaluate {
            systems,
            svg,
            inverse,
            volterra,
            model,
        } => commands::evaluate(&ctx, &systems, svg, inverse, volterra, model),
        Command::Compensate {
            inverse,
            input,
            output,
        } => commands::compensate(&inverse, &input, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("paldc: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
