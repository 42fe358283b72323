mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epochface_core::pipeline::ARTIFACT_ROOT_ENV;

use crate::config::Config;

#[derive(Parser, Debug)]
#[command(name = "epochface", version, about = "Decade-conditioned portrait transfer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output run directory. Relative paths resolve against $EPOCHFACE_ARTIFACT_ROOT when set.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the parent generator and one child per decade.
    TrainFamily {
        #[command(flatten)]
        common: Common,
    },
    /// Project an image into the latent space of one decade's generator.
    Invert {
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        decade: u16,
        #[command(flatten)]
        common: Common,
    },
    /// Tune the source generator around an inversion and store the weight offset.
    Tune {
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// `inversion.json` or the directory written by `invert`.
        #[arg(long)]
        inversion: PathBuf,
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Render an inversion in every decade of the family using a stored offset.
    Transform {
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        inversion: PathBuf,
        #[arg(long)]
        offset: PathBuf,
        /// Copied into the output as `input.png` for the gallery.
        #[arg(long)]
        image: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute FID, KMMD, DCA and identity accuracy on the synthetic corpus.
    Evaluate {
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Group face embeddings into identities.
    Cluster {
        /// CSV with columns face_id, image_id, e0, e1, ...
        #[arg(long)]
        faces: PathBuf,
        /// Reference faces of the target identity, same format.
        #[arg(long)]
        references: Option<PathBuf>,
        /// Maximum embedding distance for an edge [default: 1.0]
        #[arg(long)]
        epsilon: Option<f64>,
        /// MAD multiplier for outlier removal [default: 3.0]
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Project family members and tuned offsets onto two principal axes.
    Viz {
        #[arg(long)]
        family: PathBuf,
        #[arg(long = "offset")]
        offsets: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Assemble transform outputs into one self-contained HTML page.
    Gallery {
        /// Directories written by `transform`, one row each.
        #[arg(long = "row", required = true)]
        rows: Vec<PathBuf>,
        /// Evaluation directory or report text shown under the grid.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::TrainFamily { common }
            | Command::Invert { common, .. }
            | Command::Tune { common, .. }
            | Command::Transform { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Cluster { common, .. }
            | Command::Viz { common, .. }
            | Command::Gallery { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::TrainFamily { .. } => "train-family",
            Command::Invert { .. } => "invert",
            Command::Tune { .. } => "tune",
            Command::Transform { .. } => "transform",
            Command::Evaluate { .. } => "evaluate",
            Command::Cluster { .. } => "cluster",
            Command::Viz { .. } => "viz",
            Command::Gallery { .. } => "gallery",
        }
    }
}

fn resolve_out(out: Option<&Path>, command: &str) -> PathBuf {
    let rel = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs").join(command));
    match std::env::var_os(ARTIFACT_ROOT_ENV) {
        Some(root) if rel.is_relative() => PathBuf::from(root).join(rel),
        _ => rel,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = cli.command.common().clone();
    let cfg = Config::load(common.config.as_deref())?.with_seed(common.seed);
    let out = resolve_out(common.out.as_deref(), cli.command.name());
    match cli.command {
        Command::TrainFamily { .. } => commands::train_family_cmd(&cfg, &out),
        Command::Invert { family, image, decade, .. } => {
            commands::invert_cmd(&cfg, &family, &image, decade, &out)
        }
        Command::Tune { family, image, inversion, embedder, .. } => {
            commands::tune_cmd(&cfg, &family, &image, &inversion, embedder.as_deref(), &out)
        }
        Command::Transform { family, inversion, offset, image, .. } => {
            commands::transform_cmd(&family, &inversion, &offset, image.as_deref(), &out)
        }
        Command::Evaluate { family, embedder, .. } => {
            commands::evaluate_cmd(&cfg, &family, embedder.as_deref(), &out)
        }
        Command::Cluster { faces, references, epsilon, alpha, .. } => {
            commands::cluster_cmd(&cfg, &faces, references.as_deref(), epsilon, alpha, &out)
        }
        Command::Viz { family, offsets, .. } => commands::viz_cmd(&family, &offsets, &out),
        Command::Gallery { rows, report, .. } => commands::gallery_cmd(&rows, report.as_deref(), &out),
    }
}

/// 1 for bad input, 2 for numeric or internal failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<epochface_core::Error>() {
        return if e.is_user_error() { 1 } else { 2 };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 1;
    }
    2
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
