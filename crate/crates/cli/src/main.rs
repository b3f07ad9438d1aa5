use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use wmera_cli::{
    cmd_eval, cmd_finegrain, cmd_pipeline, cmd_preprocess, cmd_train, with_threads, CliResult, Overrides,
    PipelineConfig,
};

#[derive(Parser, Debug)]
#[command(name = "wmera", version, about = "Multi-scale tensor-network learning on wavelet-MERA coarse-grained signals")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode and coarse-grain the dataset into per-scale caches.
    Preprocess,
    /// Train the weights at one scale.
    Train {
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Project trained weights one scale finer.
    Finegrain {
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Evaluate a saved model on both splits.
    Eval {
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Run every step from preprocessing to the finest requested scale.
    Pipeline,
}

fn print<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(cli: Cli) -> CliResult<()> {
    let Some(path) = cli.config.as_deref() else {
        return Err(wmera_cli::CliError::Config("--config is required".into()));
    };
    let mut cfg = PipelineConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        output: cli.output.clone(),
    });
    with_threads(cli.threads, || -> CliResult<()> {
        match cli.command {
            Command::Preprocess => {
                let p = cmd_preprocess(&cfg)?;
                println!(
                    "cache {} ({}), widths {:?}, {} train / {} test samples",
                    p.dir.display(),
                    if p.reused { "reused" } else { "built" },
                    p.widths(),
                    p.train.scales[0].len(),
                    p.test.scales[0].len()
                );
            }
            Command::Train { scale } => print(&cmd_train(&cfg, scale)?),
            Command::Finegrain { scale } => print(&cmd_finegrain(&cfg, scale)?),
            Command::Eval { scale } => print(&cmd_eval(&cfg, scale)?),
            Command::Pipeline => print(&cmd_pipeline(&cfg)?),
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
