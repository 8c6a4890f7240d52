use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use monocanon::alloc::TrackingAllocator;
use monocanon::cli::{run, Command, RunConfig};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Gen,
    Train,
    Eval,
    CheckGroup,
    CheckClaim1,
    DemoWarp,
    Bench,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Gen => Command::Gen,
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::CheckGroup => Command::CheckGroup,
            Cmd::CheckClaim1 => Command::CheckClaim1,
            Cmd::DemoWarp => Command::DemoWarp,
            Cmd::Bench => Command::Bench,
        }
    }
}

/// Monotone-scaling warps, deep equilibrium canonicalization and the toy
/// local-scale experiments.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON config; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config value by dotted path, e.g. `--set dec.grid=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = std::env::var("MONOCANON_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // only fails if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut sets = args.set.clone();
    if let Some(s) = args.seed {
        for key in ["seed", "eval.seed", "check_group.seed", "claim1.seed", "bench.seed"] {
            sets.push(format!("{key}={s}"));
        }
    }
    let cfg = match &args.config {
        Some(p) => RunConfig::from_file(p, &sets),
        None => RunConfig::from_json("{}", &sets),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            report_error(&e);
            return ExitCode::from(2);
        }
    };
    match run(args.command.into(), &cfg, &args.out) {
        Ok(o) => {
            println!("{}", o.summary);
            println!("wrote {} in {}", o.files.join(", "), args.out.display());
            if o.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            report_error(&e);
            ExitCode::from(2)
        }
    }
}

fn report_error(e: &monocanon::Error) {
    if let monocanon::Error::Config(list) = e {
        eprintln!("error: invalid configuration");
        for item in list {
            eprintln!("  - {item}");
        }
    } else {
        eprintln!("error: {e}");
    }
}
