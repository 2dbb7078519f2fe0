use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adaptive_replay::harness::{
    self, cmd_compare, cmd_run, cmd_sweep, render_table, RunConfig, SweepGrid,
};
use adaptive_replay::Result;

#[derive(Parser)]
#[command(name = "amr", version, about = "Adaptive memory replay experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Overrides `output_dir` (and the AMR_OUTPUT_DIR variable).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    parallel: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured strategy over the task sequence.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train all six strategies and print the normalized table.
    Compare {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Repeat compare over a hyperparameter grid.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load(config: &Path, o: Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply_env();
    if let Some(dir) = o.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(seeds) = o.seeds {
        cfg.seeds = seeds;
    }
    cfg.parallel |= o.parallel;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, overrides)?;
            let out = cmd_run(&cfg)?;
            println!("strategy {} seeds {:?}", cfg.train.strategy, cfg.seeds);
            for r in &out.results {
                println!(
                    "seed {:>4}  final loss {:.6}  forgetting {:.6}  passes {} (selecting {}, training {})",
                    r.seed,
                    r.final_loss_raw,
                    r.forgetting_raw,
                    r.ledger.total(),
                    r.ledger.selecting_passes,
                    r.ledger.training_passes
                );
            }
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Compare { config, overrides } => {
            let cfg = load(&config, overrides)?;
            let out = cmd_compare(&cfg)?;
            print!("{}", render_table(&out.rows));
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Sweep {
            config,
            grid,
            overrides,
        } => {
            let cfg = load(&config, overrides)?;
            let grid = SweepGrid::load(&grid)?;
            let out = cmd_sweep(&cfg, &grid)?;
            println!("{} grid points, {} rows", out.points.len(), out.rows);
            eprintln!("wrote {}", out.file.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                harness::EXIT_CONFIG
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
