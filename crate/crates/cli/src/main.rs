use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use krlab::experiment::{run_experiment, selftest, ExperimentConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_COMPUTE: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "krlab", version, about = "Kernel and random-feature regression sweeps on anisotropic sphere data")]
struct Cli {
    /// Worker threads for grid points (defaults to all cores).
    #[arg(long, global = true, env = "KRLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a config and run the experiment it describes.
    Run(ConfigArgs),
    /// Check a config without computing anything.
    Validate(ConfigArgs),
    /// Run the built-in invariant suite.
    Selftest,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the JSON config.
    #[arg(value_name = "CONFIG", required_unless_present = "config", conflicts_with = "config")]
    path: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Added to every seed in the config.
    #[arg(long, value_name = "K")]
    seed_offset: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, String> {
        let path: &Path = self.path.as_deref().or(self.config.as_deref()).ok_or("no config given")?;
        let mut cfg = ExperimentConfig::from_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(out) = &self.output {
            cfg.output = out.clone();
        }
        if let Some(k) = self.seed_offset {
            cfg = cfg.with_seed_offset(k);
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn validate(args: &ConfigArgs) -> u8 {
    let cfg = match args.load() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {e}");
            return EXIT_VALIDATION;
        }
    };
    // a config that validates must also survive a serialization round trip
    let again = cfg.to_json().and_then(|s| ExperimentConfig::from_json(&s)).and_then(|c| c.validate().map(|_| c));
    match again {
        Ok(c) if c == cfg => {
            println!("ok: {} config, {} methods", cfg.kind.name(), cfg.methods.len());
            0
        }
        Ok(_) => {
            eprintln!("invalid config: serialization round trip changed the config");
            EXIT_VALIDATION
        }
        Err(e) => {
            eprintln!("invalid config: {e}");
            EXIT_VALIDATION
        }
    }
}

fn run(args: &ConfigArgs) -> u8 {
    let cfg = match args.load() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {e}");
            return EXIT_VALIDATION;
        }
    };
    match run_experiment(&cfg) {
        Ok(s) => {
            println!("wrote {} rows to {} ({} failed)", s.rows, s.csv.display(), s.failed);
            for c in &s.collapse {
                let at = c.n.map(|n| format!(" at n = {n}")).unwrap_or_default();
                println!("collapse {}{at}: gap {:.4} (raw axis {:.4})", c.method, c.gap, c.gap_raw);
            }
            if s.rows > 0 && s.failed == s.rows {
                eprintln!("every grid point failed");
                return EXIT_COMPUTE;
            }
            0
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            match e {
                krlab::Error::Config(_) => EXIT_VALIDATION,
                _ => EXIT_COMPUTE,
            }
        }
    }
}

fn run_selftest() -> u8 {
    let results = selftest();
    let mut failed = 0;
    for r in &results {
        println!("{:<12} {} passed, {} failed", r.name, r.passed, r.failed);
        for m in &r.messages {
            println!("    {m}");
        }
        failed += r.failed;
    }
    if failed == 0 {
        0
    } else {
        EXIT_COMPUTE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("--threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("could not configure the thread pool: {e}");
        }
    }
    ExitCode::from(match &cli.command {
        Command::Run(a) => run(a),
        Command::Validate(a) => validate(a),
        Command::Selftest => run_selftest(),
    })
}
