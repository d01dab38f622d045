//! With no climate risk, no green investors and no common-noise volatility,
//! the equilibrium is known in closed form: ξ ≡ 1, P1 = e^{μT},
//! P2 = (e^{2μT} − 1)/(2μ), mean total emissions = C̄(e^{μT} − 1)/μ.
//!
//!     cargo run --release --example degenerate_closed_form

use mfg_decarb::analytics::{price_components, total_emissions};
use mfg_decarb::paths::simulate_paths;
use mfg_decarb::{solver, FeatureSpec, ModelParams};

fn main() -> mfg_decarb::Result<()> {
    let params = ModelParams {
        gamma_pen: 0.0,
        lambda: 0.0,
        sigma0: 0.0,
        ..Default::default()
    };
    let ens = simulate_paths(&params, &params.grid())?;
    let sol = solver::solve(&ens, &FeatureSpec::default())?;
    let prices = price_components(&ens, &sol.models)?;
    let psi = total_emissions(&ens, &sol.models)?.summary();

    let (mu, t, c) = (params.mu, params.horizon, params.c_bar);
    let rows = [
        ("P1", prices.p1, (mu * t).exp()),
        ("P2", prices.p2, ((2.0 * mu * t).exp() - 1.0) / (2.0 * mu)),
        ("mean emissions", psi.mean, c * ((mu * t).exp() - 1.0) / mu),
    ];
    for (name, got, want) in rows {
        println!(
            "{name:<15} {got:.6}  closed form {want:.6}  rel err {:.2e}",
            (got - want) / want
        );
    }
    let unit = sol.xi.xi.iter().all(|&x| x == 1.0);
    println!("xi identically one: {unit}");
    Ok(())
}
