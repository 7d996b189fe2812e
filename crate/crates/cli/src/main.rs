//! `degwave <command> --config <path>`: runs an experiment pipeline and writes
//! its artifacts, `gates.csv` and a `MANIFEST` of SHA-256 hashes.

use clap::Parser;
use degwave::experiment::{load_config, resolve_domain, run, Command, OUTPUT_DIR_ENV};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "degwave", about = "Degenerate wave equation experiments")]
struct Args {
    /// certify | spectrum | wave | identities | sweep | observe | all
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and the DEGWAVE_OUT variable.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for randomized checks; defaults to the first config seed.
    #[arg(long)]
    seed: Option<u64>,
}

const EXIT_GATE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let base = args.config.parent().unwrap_or(Path::new("."));
    let domain = match resolve_domain(&cfg, base) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(n) = args.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("CONFIG_INVALID: --threads: cannot start {n} worker threads");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let out_dir = args
        .out
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.outputs));

    let result = match run(args.command, &cfg, &domain, args.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error in {}: {e}", args.command);
            return ExitCode::from(EXIT_GATE);
        }
    };
    if let Err(e) = result.write_to(&out_dir) {
        eprintln!("{e}");
        return ExitCode::from(EXIT_GATE);
    }
    for g in &result.gates {
        println!("{:<5} {}/{}: {}", if g.pass { "PASS" } else { "FAIL" }, g.command, g.name, g.detail);
    }
    println!("{} artifacts written to {}", result.artifacts.len() + 2, out_dir.display());
    if result.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_GATE)
    }
}
