use mfg_decarb::analytics::{expected_emission_curve, price_components, total_emissions};
use mfg_decarb::paths::simulate_paths;
use mfg_decarb::regress::ModelForm;
use mfg_decarb::solver::{solve, solve_with, SolveOptions};
use mfg_decarb::{FeatureKind, FeatureSpec, ModelParams, PathEnsemble, Solution};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = FeatureKind> {
    prop_oneof![
        Just(FeatureKind::Markov),
        Just(FeatureKind::MarkovPlusAccumulator),
        Just(FeatureKind::IncrementPoly),
    ]
}

prop_compose! {
    fn small_params()(
        gamma_pen in 0.0..0.5f64,
        lambda in 0.0..0.6f64,
        rho in 0.0..=1.0f64,
        gamma_star in 0.1..1.0f64,
        sigma0 in 0.0..0.25f64,
        n_steps in 1usize..=5,
        n_iter in 1usize..=4,
        seed in any::<u64>(),
    ) -> ModelParams {
        ModelParams {
            gamma_pen, lambda, rho, gamma_star, sigma0, n_steps, n_iter, seed,
            horizon: 0.5 * n_steps as f64,
            n_paths: 3_000,
            ..Default::default()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn solver_invariants(p in small_params(), kind in kind_strategy()) {
        let ens = simulate_paths(&p, &p.grid()).unwrap();
        let spec = FeatureSpec { kind, ..Default::default() };
        let sol = solve_with(&ens, &spec, SolveOptions { keep_history: true }).unwrap();
        for (q, xi) in sol.history.iter().enumerate() {
            let mean = xi.iter().sum::<f64>() / xi.len() as f64;
            prop_assert!((mean - 1.0).abs() <= 1e-12, "q={} mean {}", q, mean);
            if q >= 1 {
                prop_assert!(xi.iter().all(|&x| x > 0.0 && x.is_finite()));
            }
        }
        prop_assert_eq!(sol.history.last().unwrap(), &sol.xi.xi);
        for m in &sol.models {
            if let ModelForm::Linear { .. } = m.form {
                prop_assert!(m.diagnostics.rmse <= m.diagnostics.rmse_constant * (1.0 + 1e-9) + 1e-12);
            }
            prop_assert!(m.fitted.iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
        let floor = ens.log_z.iter().map(|z| (p.rho * z).exp()).sum::<f64>() / ens.len() as f64;
        for r in &sol.trace.records {
            prop_assert!(r.potential.entropy >= -floor - 1e-12);
        }
        prop_assert_eq!(sol.trace.records.len(), p.n_iter + 1);
    }
}

fn base_case(n_paths: usize, seed: u64) -> (PathEnsemble, Solution) {
    let p = ModelParams {
        gamma_pen: 0.3,
        lambda: 0.4,
        n_paths,
        n_steps: 10,
        seed,
        ..Default::default()
    };
    let ens = simulate_paths(&p, &p.grid()).unwrap();
    let sol = solve(&ens, &FeatureSpec::default()).unwrap();
    (ens, sol)
}

#[test]
fn tower_identities_hold() {
    let (ens, sol) = base_case(30_000, 17);
    // E[v_k] = E[ξ·Ē_{t_k,T}] at every date, P1 included.
    let n = ens.n_steps();
    for k in 0..=n {
        let y: Vec<f64> = (0..ens.len())
            .map(|i| sol.xi.xi[i] * ens.growth_to_end(i, k))
            .collect();
        let len = y.len() as f64;
        let my = y.iter().sum::<f64>() / len;
        let se = (y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (len - 1.0) / len).sqrt();
        let mv = sol.models[k].fitted.iter().sum::<f64>() / len;
        assert!((mv - my).abs() <= 3.0 * se, "k={k}: {mv} vs {my} ± {se}");
    }
    // Mean total emissions is the trapezoid integral of the regression curve.
    let curve = expected_emission_curve(&ens, &sol.xi, &sol.models).unwrap();
    let psi = total_emissions(&ens, &sol.models).unwrap().summary().mean;
    let integral = ens.grid.trapezoid(|k| curve.regression[k]);
    assert!(
        (psi - integral).abs() <= 1e-10 * integral,
        "{psi} vs {integral}"
    );
    // The direct and regression curves estimate the same E[ψ_t]. They differ by
    // the part of 1/α_k outside the polynomial span, which stays within the
    // regression accuracy bound rather than shrinking with N.
    for k in 0..=n {
        let rel = (curve.direct[k] - curve.regression[k]).abs() / curve.direct[k];
        assert!(
            rel <= 0.02,
            "k={k}: {} vs {}",
            curve.direct[k],
            curve.regression[k]
        );
    }
}

fn fingerprint(ens: &PathEnsemble, sol: &Solution) -> Vec<u64> {
    let prices = price_components(ens, &sol.models).unwrap();
    let psi = total_emissions(ens, &sol.models).unwrap();
    let mut out: Vec<u64> = sol.xi.xi.iter().map(|x| x.to_bits()).collect();
    out.extend(psi.samples.iter().map(|x| x.to_bits()));
    out.push(prices.p1.to_bits());
    out.push(prices.p2.to_bits());
    for r in &sol.trace.records {
        out.extend(
            [
                r.alpha,
                r.potential.entropy,
                r.potential.linear_quadratic,
                r.residual,
            ]
            .map(f64::to_bits),
        );
    }
    out
}

#[test]
fn idiosyncratic_volatility_is_inert() {
    let run = |s: f64| {
        let p = ModelParams {
            gamma_pen: 0.3,
            lambda: 0.2,
            n_paths: 5_000,
            n_steps: 6,
            sigma_idio: s,
            ..Default::default()
        };
        let ens = simulate_paths(&p, &p.grid()).unwrap();
        let sol = solve(&ens, &FeatureSpec::default()).unwrap();
        fingerprint(&ens, &sol)
    };
    assert_eq!(run(0.0), run(0.35));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let (ens, sol) = base_case(9_000, 4);
            fingerprint(&ens, &sol)
        })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}
