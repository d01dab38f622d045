//! Command-line front end: `run`, `reproduce-table`, `oracle`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfg_decarb::experiment::{reproduce_table, run, run_oracle, RunConfig};
use mfg_decarb::Error;

#[derive(Parser)]
#[command(
    version,
    about = "Equilibrium discount factor for the mean-field decarbonization game"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, solve and write report.json plus CSV series.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the P1/P2 price table into table.csv.
    ReproduceTable {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quadrature reference solution for one or two time steps.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        n: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

fn load(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => {
            if let Some(k) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            load(&config, out, seed).and_then(|cfg| {
                let report = run(&cfg)?;
                for p in &report.points {
                    println!(
                        "gamma={} lambda={} rho={}  P1={:.5} ± {:.5}  P2={:.4} ± {:.4}  residual={:.3e}",
                        p.gamma_pen,
                        p.lambda,
                        p.rho,
                        p.p1.mean,
                        p.p1.se,
                        p.p2.mean,
                        p.p2.se,
                        p.trace.last().map_or(f64::NAN, |r| r.residual)
                    );
                }
                println!("wrote {}", cfg.out_dir.display());
                Ok(())
            })
        }
        Command::ReproduceTable { config, out } => load(&config, out, None).and_then(|cfg| {
            let rows = reproduce_table(&cfg)?;
            println!("gamma  lambda  rho   P1                 P2");
            for r in rows {
                println!(
                    "{:<6} {:<7} {:<5} {:.4} ± {:.4}   {:.3} ± {:.3}",
                    r.gamma, r.lambda, r.rho, r.p1.mean, r.p1.se, r.p2.mean, r.p2.se
                );
            }
            Ok(())
        }),
        Command::Oracle { config, n, out } => load(&config, out, None).and_then(|cfg| {
            let report = run_oracle(&cfg, n as usize)?;
            for s in &report.points {
                println!(
                    "n={} G={} iterations={} P1={:.6} P2={:.6} mean_psi_bar={:.6}",
                    s.n_steps, s.levels, s.iterations, s.p1, s.p2, s.mean_psi_bar
                );
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
