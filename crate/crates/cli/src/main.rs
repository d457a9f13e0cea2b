use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use retarget_cli::{load_config, run, Overrides};

/// Retargeted policy learning: weight diagnostics, policy learning and
/// synthetic regret experiments.
#[derive(Parser, Debug)]
#[command(name = "retarget", version)]
struct Args {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for simulations.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let overrides = Overrides {
        seed: args.seed,
        out: args.out,
        workers: args.workers,
    };
    let result = load_config(&args.config, &overrides).and_then(|cfg| run(&cfg, overrides.workers.max(1)));
    match result {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
