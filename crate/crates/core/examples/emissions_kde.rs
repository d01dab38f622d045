//! Distribution of total average emissions Ψ̄_T for several climate-risk
//! levels, smoothed with a Gaussian kernel, plus the expected-emission curve.
//!
//!     cargo run --release --example emissions_kde

use mfg_decarb::analytics::{expected_emission_curve, kde_smooth, total_emissions};
use mfg_decarb::paths::simulate_paths;
use mfg_decarb::{solver, FeatureSpec, ModelParams};

fn main() -> mfg_decarb::Result<()> {
    for gamma in [0.0, 0.15, 0.3, 0.45] {
        let params = ModelParams {
            gamma_pen: gamma,
            n_paths: 20_000,
            ..Default::default()
        };
        let ens = simulate_paths(&params, &params.grid())?;
        let sol = solver::solve(&ens, &FeatureSpec::default())?;
        let psi = total_emissions(&ens, &sol.models)?;
        let s = psi.summary();
        println!(
            "gamma = {gamma:<4}  mean {:.3}  sd {:.3}  q05 {:.3}  median {:.3}  q95 {:.3}",
            s.mean, s.sd, s.q05, s.q50, s.q95
        );
        let kde = kde_smooth(&psi.samples, None)?;
        if !kde.is_degenerate() {
            let mode = kde
                .grid
                .iter()
                .zip(&kde.density)
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(x, _)| *x)
                .unwrap_or(f64::NAN);
            println!(
                "    bandwidth {:.4}  density mode {:.3}",
                kde.bandwidth, mode
            );
        }
        let curve = expected_emission_curve(&ens, &sol.xi, &sol.models)?;
        let last = curve.t.len() - 1;
        println!(
            "    E[psi] at t=0: {:.4}/{:.4}   at T: {:.4}/{:.4}  (direct/regression)",
            curve.direct[0], curve.regression[0], curve.direct[last], curve.regression[last]
        );
    }
    Ok(())
}
