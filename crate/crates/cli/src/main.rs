use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wrkmap_core::harness::{
    analyze_snapshots, load_config, parse_lambdas, run_potential_check, run_single, run_sweep,
    HarnessError, HarnessResult, LambdaSummary, Overrides, EXIT_RUNTIME,
};

/// Train and analyze self-organizing maps of the winner-relaxing family.
#[derive(Debug, Parser)]
#[command(name = "wrkmap", version)]
struct Cli {
    /// Accept rule parameters outside the serial stability window [-1, 1].
    #[arg(long, global = true)]
    allow_unstable_lambda: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured rule and write result rows and snapshots.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.path`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replicated runs of the generalized rule over a list of lambda values.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated lambda values.
        #[arg(long, allow_hyphen_values = true, default_value = "-1,-0.5,0,0.5,1")]
        lambdas: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the potential on random weight configurations.
    PotentialCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the analysis on a directory of stored snapshots and print CSV.
    Analyze {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn print_summary(s: &LambdaSummary) {
    println!(
        "lambda {:>5}: exponent {} +/- {} (theory {}), entropy {:.4} nats, ordering step {}, failed fits {}/{}",
        s.lambda,
        fmt_opt(s.fitted_mean),
        fmt_opt(s.mean_stderr),
        fmt_opt(s.theoretical_exponent),
        s.firing_entropy_mean,
        s.ordering_step_mean.map(|x| format!("{x:.0}")).unwrap_or_else(|| "-".into()),
        s.failed_fits,
        s.replicates
    );
}

fn fail_on(failures: Vec<String>) -> HarnessResult<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("error: {f}");
    }
    Err(HarnessError::Analysis(format!(
        "{} run(s) failed analysis; results written with empty fields",
        failures.len()
    )))
}

fn run(cli: Cli) -> HarnessResult<()> {
    let unstable = cli.allow_unstable_lambda;
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(
                &config,
                &Overrides {
                    seed,
                    output: out,
                    allow_unstable_lambda: unstable,
                },
            )?;
            let result = run_single(&cfg)?;
            print_summary(&result.summary);
            println!("wrote {}", cfg.output.path.display());
            fail_on(result.failures())
        }
        Command::Sweep {
            config,
            lambdas,
            seed,
            out,
        } => {
            let cfg = load_config(
                &config,
                &Overrides {
                    seed,
                    output: out,
                    allow_unstable_lambda: unstable,
                },
            )?;
            let lambdas = parse_lambdas(&lambdas)?;
            let result = run_sweep(&cfg, &lambdas)?;
            for s in &result.summary {
                print_summary(s);
            }
            if let Some(fit) = &result.meta_fit {
                println!(
                    "fitted vs theoretical slope {:.4} (stderr {:.4})",
                    fit.slope, fit.stderr
                );
            }
            println!("wrote {}", cfg.output.path.display());
            fail_on(result.failures())
        }
        Command::PotentialCheck { config, out } => {
            let cfg = load_config(
                &config,
                &Overrides {
                    seed: None,
                    output: out,
                    allow_unstable_lambda: unstable,
                },
            )?;
            let report = run_potential_check(&cfg)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Analyze { snapshots, config } => {
            let cfg = load_config(
                &config,
                &Overrides {
                    allow_unstable_lambda: unstable,
                    ..Overrides::default()
                },
            )?;
            let report = analyze_snapshots(&cfg, &snapshots)?;
            print!("{}", report.to_csv(&cfg));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                wrkmap_core::harness::EXIT_CONFIG
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
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(EXIT_RUNTIME as u8))
        }
    }
}
