use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Parser, Subcommand};
use vslab::cli::{execute, replay, Command, Invocation};
use vslab::config::{documented_keys, Config};

fn after_help() -> &'static str {
    static TEXT: OnceLock<String> = OnceLock::new();
    TEXT.get_or_init(|| {
        format!(
            "Configuration keys and their defaults:\n{}",
            documented_keys()
        )
    })
}

#[derive(Parser)]
#[command(
    name = "vslab",
    version,
    about = "Spatial interpolation of a single gridded field"
)]
#[command(after_long_help = after_help())]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed. Every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for `reproduce`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a Gaussian random field and, optionally, an observation mask.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Ordinary kriging from the observed cells of a field.
    Krige {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured network on one field and write its prediction.
    Train {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration loss components as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// RMSE, MAE and Moran's I discrepancy of a prediction.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Score only these cells.
        #[arg(long, conflicts_with = "observed_mask")]
        eval_mask: Option<PathBuf>,
        /// Score every cell not marked here.
        #[arg(long)]
        observed_mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment plan and write results and tables.
    Reproduce {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Rasterise an x,y,value point file and split it into train and test cells.
    Ingest {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// SVG heatmap of a grid, with observed cells outlined.
    Render {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the invocation recorded in a manifest.
    Replay { manifest: PathBuf },
}

fn run(cli: Cli) -> vslab::Result<String> {
    let command = match cli.cmd {
        Cmd::Replay { manifest } => return replay(&manifest).map(|o| o.summary),
        Cmd::Simulate { out, mask_out } => Command::Simulate { out, mask_out },
        Cmd::Krige { field, mask, out } => Command::Krige { field, mask, out },
        Cmd::Train {
            field,
            mask,
            out,
            report,
        } => Command::Train {
            field,
            mask,
            out,
            report,
        },
        Cmd::Evaluate {
            pred,
            truth,
            eval_mask,
            observed_mask,
            out,
        } => Command::Evaluate {
            pred,
            truth,
            eval_mask,
            observed_mask,
            out,
        },
        Cmd::Reproduce { out_dir } => Command::Reproduce { out_dir },
        Cmd::Ingest { points, out_dir } => Command::Ingest { points, out_dir },
        Cmd::Render { grid, mask, out } => Command::Render { grid, mask, out },
    };
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let inv = Invocation {
        command,
        config,
        seed: cli.seed,
        jobs: cli.jobs,
    };
    execute(&inv).map(|o| o.summary)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
