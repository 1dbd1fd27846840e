use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use perchomog::percolation::Mode;
use perchomog_cli::commands::{run, CliError, Subcommand};
use perchomog_cli::config::{parse, RunConfig};
use perchomog_cli::manifest::RunManifest;

/// Homogenization experiments on random conductance models over percolation clusters.
#[derive(Parser, Debug)]
#[command(name = "perchomog", version)]
struct Args {
    /// What to run.
    #[arg(value_enum)]
    command: Subcommand,
    /// key = value configuration file; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides `n_envs`.
    #[arg(long, value_name = "N")]
    envs: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Output directory (default: $PERCHOMOG_OUT, else ./perchomog-out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides `mode` (exact or strided).
    #[arg(long)]
    mode: Option<String>,
}

fn load(args: &Args) -> Result<RunConfig, CliError> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = parse(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.envs {
        cfg.n_envs = n;
    }
    if let Some(m) = &args.mode {
        cfg.mode = Mode::parse(m).map_err(|e| CliError::Config(format!("--mode: {e}")))?;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn main_inner(args: Args) -> Result<(), CliError> {
    let cfg = load(&args)?;
    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os("PERCHOMOG_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("perchomog-out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let t = Instant::now();
    let artifacts = run(args.command, &cfg, &out)?;
    for (name, bytes) in &artifacts.files {
        let p = out.join(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    let normalized = cfg.dump();
    let manifest = RunManifest::new(args.command.name(), &normalized, &cfg.calibration(), &artifacts.files, t.elapsed().as_secs_f64(), workers);
    let mp = out.join(format!("manifest_{}.json", args.command.name()));
    std::fs::write(&mp, manifest.to_json()).map_err(|e| CliError::Io(format!("{}: {e}", mp.display())))?;
    let cp = out.join(format!("config_{}.txt", args.command.name()));
    std::fs::write(&cp, normalized).map_err(|e| CliError::Io(format!("{}: {e}", cp.display())))?;
    for line in &artifacts.summary {
        println!("{line}");
    }
    println!("{} files written to {}", artifacts.files.len() + 2, out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("perchomog: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
