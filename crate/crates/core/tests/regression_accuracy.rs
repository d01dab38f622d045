use mfg_decarb::oracle::oracle_solve;
use mfg_decarb::paths::simulate_paths;
use mfg_decarb::regress::{fit_cond_exp, ModelForm};
use mfg_decarb::{solver, FeatureKind, FeatureSpec, ModelParams};

/// Weighted relative RMSE `sqrt(Σw(a−b)²/Σw) / (Σw|b|/Σw)`.
fn rel_rmse(pairs: impl Iterator<Item = (f64, f64, f64)>) -> f64 {
    let (mut se, mut mag, mut wt) = (0.0, 0.0, 0.0);
    for (a, b, w) in pairs {
        se += w * (a - b).powi(2);
        mag += w * b.abs();
        wt += w;
    }
    (se / wt).sqrt() / (mag / wt)
}

#[test]
fn markov_fit_recovers_exponential_tilt() {
    // ξ = exp(a·B¹_T + b·B²_T) has a closed-form conditional expectation.
    let p = ModelParams {
        n_paths: 40_000,
        seed: 9,
        ..Default::default()
    };
    let ens = simulate_paths(&p, &p.grid()).unwrap();
    let n = ens.n_steps();
    let (a, b) = (-0.1, 0.1);
    let xi: Vec<f64> = (0..ens.len())
        .map(|i| (a * ens.b1.get(i, n) + b * ens.b2.get(i, n)).exp())
        .collect();
    let truth = |k: usize, b1: f64, b2: f64| {
        let dt = p.horizon - ens.grid.t[k];
        let s = p.sigma0;
        (a * b1 + b * b2 + (((a + s).powi(2) - s * s + b * b) / 2.0 + p.mu) * dt).exp()
    };
    for kind in [FeatureKind::Markov, FeatureKind::IncrementPoly] {
        for k in [1, 5, 10, 15, 19] {
            if kind == FeatureKind::IncrementPoly && k > 5 {
                continue;
            }
            let spec = FeatureSpec {
                kind,
                ..Default::default()
            };
            let m = fit_cond_exp(&ens, &xi, k, &spec, &[]).unwrap();
            let err = rel_rmse((0..ens.len()).map(|i| {
                (
                    m.fitted[i],
                    truth(k, ens.b1.get(i, k), ens.b2.get(i, k)),
                    1.0,
                )
            }));
            assert!(err <= 0.02, "{kind:?} k={k}: relative RMSE {err}");
        }
    }
}

#[test]
fn equilibrium_fits_match_oracle_at_prefixes() {
    for n in [1, 2] {
        let p = ModelParams {
            horizon: 0.25 * n as f64,
            n_steps: n,
            gamma_pen: 0.3,
            lambda: 0.4,
            rho: 0.5,
            n_paths: 100_000,
            ..Default::default()
        };
        let (grid, reference) = oracle_solve(&p, n, 24).unwrap();
        let ens = simulate_paths(&p, &p.grid()).unwrap();
        let sol = solver::solve(&ens, &FeatureSpec::default()).unwrap();
        for k in 1..n {
            let err = rel_rmse(
                grid.prefixes(k)
                    .into_iter()
                    .zip(&reference.cond_exp[k])
                    .map(|((b1, b2, w), &v)| (sol.models[k].predict_markov(b1, b2), v, w)),
            );
            assert!(err <= 0.02, "n={n} k={k}: relative RMSE {err}");
        }
        let ModelForm::Constant { value } = sol.models[0].form else {
            panic!("v_0 must be constant");
        };
        assert!(((value - reference.cond_exp[0][0]) / reference.cond_exp[0][0]).abs() <= 0.005);
    }
}
