use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cogflow_cli::harness::{self, threads_from_env};
use cogflow_cli::{load_config, EXIT_CONFIG};

/// Run cogflow experiments and validation suites.
///
/// Exit status: 0 all criteria pass, 1 a criterion failed, 2 configuration
/// error, 3 numerical divergence. `COGFLOW_THREADS` caps sweep parallelism.
#[derive(Debug, Parser)]
#[command(name = "cogflow", version)]
struct Cli {
    /// scaling, recovery, reduction, decision, gradcheck or all
    experiment: String,
    /// Configuration file (flat `key = value`, optional `[section]` headers)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a configuration key; repeatable, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    ExitCode::from(real_main(cli) as u8)
}

fn real_main(cli: Cli) -> i32 {
    let text = match &cli.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        },
        None => String::new(),
    };
    let mut overrides = vec![format!("experiment={}", cli.experiment)];
    if let Some(out) = &cli.out {
        overrides.push(format!("output_dir={}", out.display()));
    }
    overrides.extend(cli.set.iter().cloned());
    let cfg = match load_config(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = harness::run(&cfg, threads);
    for line in outcome.summary_lines() {
        println!("{line}");
    }
    outcome.exit_code
}
