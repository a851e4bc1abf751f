use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use knrl::harness::{self, Fault, RunConfig, ENVIRONMENTS};
use knrl::Error;

#[derive(Parser)]
#[command(name = "knrl", version, about = "Kernel policy Newton experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a config file.
    Run { config: PathBuf },
    /// Run the numerical self-checks.
    Verify {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Run several configs on one environment and merge their logs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        /// Merged CSV path.
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
    },
    /// Environment registry.
    Env {
        #[command(subcommand)]
        command: EnvCommand,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    #[value(alias = "kernel_symmetry")]
    KernelSymmetry,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config(_))));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("KNRL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().with_context(|| format!("KNRL_THREADS must be a non-negative integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = harness::execute(&cfg)?;
            if let Some(last) = out.log.last() {
                println!(
                    "{} iterations, final mean return {}, disc objective {}",
                    out.log.len(),
                    last.mean_return,
                    last.disc_objective
                );
            }
            println!("wrote {}", out.dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { inject_fault } => {
            let report = harness::verify(inject_fault.map(|FaultArg::KernelSymmetry| Fault::KernelSymmetry));
            print!("{report}");
            if report.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("failed checks: {}", report.failures().join(", "));
                Ok(ExitCode::from(1))
            }
        }
        Command::Compare { configs, out } => {
            let loaded = configs
                .iter()
                .map(|p| {
                    let label = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                    Ok((label, RunConfig::load(p)?))
                })
                .collect::<knrl::Result<Vec<_>>>()?;
            let report = harness::compare(&loaded, &out)?;
            print!("{report}");
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Env { command: EnvCommand::List } => {
            for (name, about) in ENVIRONMENTS {
                println!("{name:<18} {about}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
