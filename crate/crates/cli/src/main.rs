use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vlasov_ctrl::config::ExperimentConfig;
use vlasov_ctrl::run::{run, run_gradcheck};
use vlasov_ctrl::Error;

/// Overrides `output_dir` from the config file.
const OUTPUT_DIR_VAR: &str = "VLASOV_CTRL_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "vlasov-ctrl",
    version,
    about = "Particle-in-cell Vlasov-Poisson runs and magnetic control optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a config file without running it.
    Validate {
        config: PathBuf,
        /// Print the config with all preset defaults filled in.
        #[arg(long)]
        print: bool,
    },
    /// Compare adjoint directional derivatives with finite differences.
    Gradcheck { config: PathBuf },
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_VAR) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output_dir.clone(),
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::load(path).map_err(|e| fail(&e))
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::ConfigInvalid(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let out = output_dir(&cfg);
            match run(&cfg, &out) {
                Ok(_) => {
                    println!("wrote {}", out.join("summary.toml").display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Validate { config, print } => match load(&config) {
            Ok(cfg) => {
                if print {
                    match cfg.to_toml_string() {
                        Ok(text) => print!("{text}"),
                        Err(e) => return fail(&e),
                    }
                } else {
                    println!("{}: ok", config.display());
                }
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Gradcheck { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let out = output_dir(&cfg);
            match run_gradcheck(&cfg, &out) {
                Ok(report) => {
                    for d in &report.directions {
                        println!(
                            "direction {}: adjoint {:.6e} finite difference {:.6e} relative error {:.4}",
                            d.direction, d.adjoint, d.finite_difference, d.relative_error
                        );
                    }
                    if report.passed {
                        println!("gradcheck passed (tolerance {})", report.tolerance);
                        ExitCode::SUCCESS
                    } else {
                        println!(
                            "gradcheck failed: worst relative error {:.4} above {}",
                            report.worst_relative_error, report.tolerance
                        );
                        ExitCode::from(4)
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}
