//! Solve the base configuration (γ=0.3, λ=0, ρ=0.5) once and print the
//! convergence trace and the price components.
//!
//!     cargo run --release --example solve_base_case -- [seed]

use mfg_decarb::analytics::{price_components, total_emissions};
use mfg_decarb::paths::simulate_paths;
use mfg_decarb::{solver, FeatureSpec, ModelParams};

fn main() -> mfg_decarb::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map_or(Ok(0), |s| s.parse())
        .expect("seed must be a u64");
    let params = ModelParams {
        gamma_pen: 0.3,
        seed,
        ..Default::default()
    };
    let ens = simulate_paths(&params, &params.grid())?;
    let sol = solver::solve(&ens, &FeatureSpec::default())?;

    println!(
        "{:>3} {:>8} {:>12} {:>12} {:>12} {:>10}",
        "q", "alpha", "H", "L", "G", "residual"
    );
    for r in &sol.trace.records {
        println!(
            "{:>3} {:>8.4} {:>12.6} {:>12.6} {:>12.6} {:>10.3e}",
            r.q,
            r.alpha,
            r.potential.entropy,
            r.potential.linear_quadratic,
            r.potential.total,
            r.residual
        );
    }
    let prices = price_components(&ens, &sol.models)?;
    let psi = total_emissions(&ens, &sol.models)?.summary();
    println!("P1 = {:.5}  P2 = {:.4}", prices.p1, prices.p2);
    println!("S0(V=1, C0²=1) = {:.4}", prices.price(1.0, 1.0));
    println!("mean total emissions = {:.4} (sd {:.4})", psi.mean, psi.sd);
    Ok(())
}
