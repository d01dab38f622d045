//! Damped fixed-point iteration on the stochastic discount factor.
//!
//! One sweep `q`:
//!
//! 1. fit `v_k` from `ξ_q` for `k = 0..n` ([`fit_all`]),
//! 2. discretized terminal firm value `V̂_T` ([`terminal_value`]),
//! 3. market-clearing map `η_q ∝ exp(−γ*·V̂_T + ρ·ln Z)` ([`clearing_map`]),
//! 4. `ξ_{q+1} = α_q·η_q + (1 − α_q)·ξ_q` with `α_q = 2/(q+p)` ([`damped_update`]).
//!
//! The potential `Ĝ = Ĥ + L̂` of every iterate is recorded as a convergence
//! certificate.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::step_size;
use crate::paths::PathEnsemble;
use crate::reduce::{mean_by, sum_by};
use crate::regress::{fit_cond_exp, CondExpModel, FeatureSpec};

/// Per-path values of a candidate discount factor; empirical mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountField {
    pub xi: Vec<f64>,
    pub q: usize,
}

impl DiscountField {
    /// The initial field `ξ ≡ 1`.
    pub fn ones(len: usize) -> Self {
        Self {
            xi: vec![1.0; len],
            q: 0,
        }
    }

    pub fn mean(&self) -> f64 {
        mean_by(self.xi.len(), |i| self.xi[i])
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Discretized `V̂_T` per path.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalValueField {
    pub vhat: Vec<f64>,
}

/// Fits `v_0, …, v_n` in date order (accumulator features need earlier fits).
pub fn fit_all(ens: &PathEnsemble, xi: &[f64], spec: &FeatureSpec) -> Result<Vec<CondExpModel>> {
    let mut models = Vec::with_capacity(ens.n_steps() + 1);
    for k in 0..=ens.n_steps() {
        let m = fit_cond_exp(ens, xi, k, spec, &models)?;
        models.push(m);
    }
    Ok(models)
}

fn check_models(ens: &PathEnsemble, models: &[CondExpModel]) -> Result<()> {
    if models.len() != ens.n_steps() + 1 || models.iter().any(|m| m.fitted.len() != ens.len()) {
        return Err(Error::Usage(format!(
            "need {} fitted models on {} paths",
            ens.n_steps() + 1,
            ens.len()
        )));
    }
    Ok(())
}

/// `V̂_T = V̄·Ē_{0,T} + h·Σ_k w_k·C̄²·(1/α_{t_k})·Ē_{t_k,T}·v_k`.
pub fn terminal_value(ens: &PathEnsemble, models: &[CondExpModel]) -> Result<TerminalValueField> {
    check_models(ens, models)?;
    let (n, h) = (ens.n_steps(), ens.grid.h);
    let (v_bar, c2) = (ens.params.v_bar, ens.params.c2_bar);
    let vhat = (0..ens.len())
        .into_par_iter()
        .map(|i| {
            let emissions: f64 = (0..=n)
                .map(|k| {
                    ens.grid.w[k]
                        * ens.inv_alpha.get(i, k)
                        * ens.growth_to_end(i, k)
                        * models[k].fitted[i]
                })
                .sum();
            v_bar * ens.log_e0t.get(i, n).exp() + h * c2 * emissions
        })
        .collect();
    Ok(TerminalValueField { vhat })
}

/// `η_i = exp(s_i) / ((1/N)·Σ_j exp(s_j))` with `s_i = −γ*·V̂_i + ρ·ln Z_i`,
/// evaluated with a max shift.
pub fn clearing_map(ens: &PathEnsemble, vhat: &TerminalValueField) -> Result<DiscountField> {
    if vhat.vhat.len() != ens.len() {
        return Err(Error::Usage(
            "terminal value field does not match ensemble".into(),
        ));
    }
    let (gs, rho) = (ens.params.gamma_star, ens.params.rho);
    let s: Vec<f64> = (0..ens.len())
        .into_par_iter()
        .map(|i| -gs * vhat.vhat[i] + rho * ens.log_z[i])
        .collect();
    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration: 0,
            path: i,
            what: "clearing exponent",
        });
    }
    let shift = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.par_iter().map(|v| (v - shift).exp()).collect();
    let norm = mean_by(e.len(), |i| e[i]);
    Ok(DiscountField {
        xi: e.par_iter().map(|v| v / norm).collect(),
        q: 0,
    })
}

/// `ξ_{q+1} = α_q·η + (1 − α_q)·ξ`, `α_q = 2/(q+p)`.
pub fn damped_update(xi: &DiscountField, eta: &DiscountField, q: usize, p: f64) -> DiscountField {
    let a = step_size(q, p);
    DiscountField {
        xi: xi
            .xi
            .par_iter()
            .zip(&eta.xi)
            .map(|(x, e)| a * e + (1.0 - a) * x)
            .collect(),
        q: q + 1,
    }
}

/// Empirical potential of one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Potential {
    /// `Ĥ = (1/N)Σ Z_i^ρ·h(ξ_i/Z_i^ρ)`, `h(x) = x(ln x − 1)`.
    pub entropy: f64,
    /// `L̂`, the linear-quadratic part.
    pub linear_quadratic: f64,
    pub total: f64,
    /// Monte-Carlo standard error of `Ĝ`.
    pub total_se: f64,
    /// `−(1/N)Σ Z_i^ρ`, the lower bound of `Ĥ`.
    pub entropy_floor: f64,
}

/// `z·h(x/z)` with `ln z = log_zr`.
#[inline]
fn relative_entropy_term(x: f64, log_zr: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x.ln() - log_zr - 1.0)
    }
}

/// `Ĝ(ξ) = Ĥ(ξ) + L̂(ξ)` using the models fitted from `ξ`.
pub fn potential(
    ens: &PathEnsemble,
    xi: &DiscountField,
    models: &[CondExpModel],
) -> Result<Potential> {
    check_models(ens, models)?;
    if let Some(i) = xi.xi.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::Invariant(format!(
            "ξ[{i}] = {} is negative",
            xi.xi[i]
        )));
    }
    let p = &ens.params;
    let (n, h) = (ens.n_steps(), ens.grid.h);
    let len = ens.len();
    let ent = |i: usize| relative_entropy_term(xi.xi[i], p.rho * ens.log_z[i]);
    let lq = |i: usize| {
        let quad: f64 = (0..=n)
            .map(|k| {
                let v = models[k].fitted[i];
                ens.grid.w[k] * ens.inv_alpha.get(i, k) * v * v
            })
            .sum();
        p.gamma_star
            * (xi.xi[i] * p.v_bar * ens.log_e0t.get(i, n).exp() + 0.5 * p.c2_bar * h * quad)
    };
    let entropy = mean_by(len, ent);
    let linear_quadratic = mean_by(len, lq);
    let total = entropy + linear_quadratic;
    let sq = sum_by(len, |i| (ent(i) + lq(i) - total).powi(2));
    let total_se = (sq / (len as f64 - 1.0) / len as f64).sqrt();
    let entropy_floor = -mean_by(len, |i| (p.rho * ens.log_z[i]).exp());
    Ok(Potential {
        entropy,
        linear_quadratic,
        total,
        total_se,
        entropy_floor,
    })
}

/// One line of the convergence trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub q: usize,
    /// Step applied after this record; the final evaluation row carries the
    /// step that would come next.
    pub alpha: f64,
    #[serde(flatten)]
    pub potential: Potential,
    /// `(1/N)Σ|η_q − ξ_q|`.
    pub residual: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PotentialTrace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Keep a copy of every iterate `ξ_0, …, ξ_{n_iter}`.
    pub keep_history: bool,
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    /// `ξ_{n_iter}`.
    pub xi: DiscountField,
    /// `v_k` fitted from the final field.
    pub models: Vec<CondExpModel>,
    /// Records for `q = 0..=n_iter`; the last row evaluates the final field
    /// without applying a step.
    pub trace: PotentialTrace,
    pub history: Vec<Vec<f64>>,
}

impl Solution {
    pub fn final_residual(&self) -> f64 {
        self.trace.records.last().map_or(f64::NAN, |r| r.residual)
    }
}

pub fn solve(ens: &PathEnsemble, spec: &FeatureSpec) -> Result<Solution> {
    solve_with(ens, spec, SolveOptions::default())
}

/// Fits, maps and returns `(models, potential, η)` for one field.
fn evaluate(
    ens: &PathEnsemble,
    xi: &DiscountField,
    spec: &FeatureSpec,
) -> Result<(Vec<CondExpModel>, Potential, DiscountField)> {
    let models = fit_all(ens, &xi.xi, spec)?;
    let pot = potential(ens, xi, &models)?;
    let vhat = terminal_value(ens, &models)?;
    if let Some(i) = vhat.vhat.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration: xi.q,
            path: i,
            what: "terminal value",
        });
    }
    let eta = clearing_map(ens, &vhat).map_err(|e| match e {
        Error::NonFinite { path, what, .. } => Error::NonFinite {
            iteration: xi.q,
            path,
            what,
        },
        other => other,
    })?;
    Ok((models, pot, eta))
}

pub fn solve_with(ens: &PathEnsemble, spec: &FeatureSpec, opts: SolveOptions) -> Result<Solution> {
    let p = &ens.params;
    if p.n_iter < 1 {
        return Err(Error::param("n_iter", "n_iter ≥ 1"));
    }
    spec.validate_at("features")?;
    let mut xi = DiscountField::ones(ens.len());
    let mut trace = PotentialTrace::default();
    let mut history = Vec::new();
    for q in 0..=p.n_iter {
        let start = Instant::now();
        if opts.keep_history {
            history.push(xi.xi.clone());
        }
        let (models, pot, eta) = evaluate(ens, &xi, spec)?;
        let residual = mean_by(xi.len(), |i| (eta.xi[i] - xi.xi[i]).abs());
        let alpha = step_size(q, p.p);
        let done = q == p.n_iter;
        if !done {
            xi = damped_update(&xi, &eta, q, p.p);
            if let Some(i) = xi.xi.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    iteration: q,
                    path: i,
                    what: "discount factor",
                });
            }
        }
        trace.records.push(TraceRecord {
            q,
            alpha,
            potential: pot,
            residual,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if done {
            return Ok(Solution {
                xi,
                models,
                trace,
                history,
            });
        }
    }
    unreachable!("loop returns on its last sweep")
}
