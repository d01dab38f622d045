//! Recompute the P1/P2 price table over γ, λ and ρ with `R` seeds per row.
//!
//!     cargo run --release --example price_table -- [repetitions] [n_paths]

use mfg_decarb::experiment::{reproduce_table_in_memory, RunConfig, TABLE_ROWS};

fn main() -> mfg_decarb::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args
        .next()
        .map_or(Ok(3), |s| s.parse())
        .expect("repetitions");
    let n_paths: usize = args
        .next()
        .map_or(Ok(50_000), |s| s.parse())
        .expect("n_paths");
    let mut cfg = RunConfig {
        repetitions: reps,
        ..Default::default()
    };
    cfg.model.n_paths = n_paths;
    let rows = reproduce_table_in_memory(&cfg, &TABLE_ROWS)?;
    println!(
        "{:>5} {:>6} {:>5} {:>16} {:>16} {:>10}",
        "gamma", "lambda", "rho", "P1", "P2", "mean psi"
    );
    for r in rows {
        println!(
            "{:>5} {:>6} {:>5} {:>8.4} ± {:.4} {:>8.3} ± {:.3} {:>10.4}",
            r.gamma, r.lambda, r.rho, r.p1.mean, r.p1.se, r.p2.mean, r.p2.se, r.psi_bar_mean.mean
        );
    }
    Ok(())
}
