//! Compare the Monte-Carlo solver with the Gauss–Hermite tensor oracle on a
//! one- and two-step problem.
//!
//!     cargo run --release --example oracle_crosscheck -- [n_paths]

use mfg_decarb::analytics::{price_components, total_emissions};
use mfg_decarb::oracle::oracle_solve;
use mfg_decarb::paths::simulate_paths;
use mfg_decarb::{solver, FeatureSpec, ModelParams};

fn main() -> mfg_decarb::Result<()> {
    let n_paths = std::env::args()
        .nth(1)
        .map_or(Ok(200_000), |s| s.parse())
        .expect("n_paths");
    for n in [1, 2] {
        let params = ModelParams {
            horizon: 0.25 * n as f64,
            n_steps: n,
            gamma_pen: 0.3,
            lambda: 0.4,
            rho: 0.5,
            n_paths,
            ..Default::default()
        };
        let (_, reference) = oracle_solve(&params, n, 32)?;
        let ens = simulate_paths(&params, &params.grid())?;
        let sol = solver::solve(&ens, &FeatureSpec::default())?;
        let prices = price_components(&ens, &sol.models)?;
        let psi = total_emissions(&ens, &sol.models)?.summary().mean;
        println!(
            "n = {n} (oracle: {} iterations, change {:.1e})",
            reference.iterations, reference.residual
        );
        for (name, mc, or) in [
            ("P1", prices.p1, reference.p1),
            ("P2", prices.p2, reference.p2),
            ("mean psi_bar", psi, reference.mean_psi_bar),
        ] {
            println!(
                "  {name:<13} mc {mc:.6}  oracle {or:.6}  rel {:+.3e}",
                (mc - or) / or
            );
        }
    }
    Ok(())
}
