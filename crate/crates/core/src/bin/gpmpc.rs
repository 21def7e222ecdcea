use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpmpc::experiments::{cmd_bench, cmd_closed_loop, cmd_propagate, csv_io::timing_table, Experiment, ExperimentConfig};
use gpmpc::Error;

/// Sampling-based GP-MPC experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compare uncertainty propagation methods under one optimized input.
    Propagate(Common),
    /// Run the receding-horizon controller on the plant.
    ClosedLoop {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of closed-loop steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Per-step solve times over sample and iteration counts.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma list, e.g. `5,10,20`.
        #[arg(long)]
        samples: Option<String>,
        /// Comma list or inclusive range, e.g. `1,2,3` or `1..5`.
        #[arg(long)]
        iters: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

fn parse_list(s: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::Config(format!("cannot parse list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn load(common: &Common) -> Result<(Experiment, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    let out = cfg.out_dir.clone();
    Ok((Experiment::build(cfg)?, out))
}

fn print_json<T: serde::Serialize>(v: &T) {
    if let Ok(s) = serde_json::to_string_pretty(v) {
        println!("{s}");
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Propagate(common) => {
            let (exp, out) = load(&common)?;
            print_json(&cmd_propagate(&exp, &out)?);
        }
        Command::ClosedLoop { common, steps } => {
            let (mut exp, out) = load(&common)?;
            if let Some(t) = steps {
                exp.config.mpc.steps = t;
                exp.config.mpc.validate()?;
            }
            print_json(&cmd_closed_loop(&exp, &out)?);
        }
        Command::Bench {
            common,
            samples,
            iters,
            repeats,
        } => {
            let (exp, out) = load(&common)?;
            let b = &exp.config.bench;
            let ns = samples.as_deref().map(parse_list).transpose()?.unwrap_or_else(|| b.samples.clone());
            let ls = iters.as_deref().map(parse_list).transpose()?.unwrap_or_else(|| b.iterations.clone());
            if ns.contains(&0) || ls.contains(&0) {
                return Err(Error::Config("sample and iteration counts must be at least 1".into()));
            }
            let rows = cmd_bench(&exp, &ns, &ls, repeats.unwrap_or(b.repeats), Some(Path::new(&out)))?;
            print!("{}", timing_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("GPMPC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot size the worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
