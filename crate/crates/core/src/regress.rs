//! Regression estimates of `v_k ≈ E[ξ·Ē_{t_k,T} | F_{t_k}]`.
//!
//! Each date gets a ridge least-squares fit of the target
//! `y_i = Ē^i_{t_k,T}·ξ_i` on a polynomial basis of path features. Feature
//! columns are centred and scaled before fitting and the ridge penalty skips
//! the intercept, so the fitted values keep the sample mean of `y`. Fitted
//! values are clamped at zero after the fit.
//!
//! Two dates need no regression: at `k = 0` the common-noise filtration is
//! trivial and the fit is the sample mean; at `k = n` the target is `ξ`
//! itself.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathEnsemble;
use crate::reduce::{mean_by, sum_vec_by};

/// Basis used for the conditional-expectation fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Polynomial in `(B¹_{t_k}, B²_{t_k})`.
    #[default]
    Markov,
    /// Polynomial in `(B¹_{t_k}, B²_{t_k}, A_k)` where `A_k` is the running
    /// emission integral built from earlier fits.
    MarkovPlusAccumulator,
    /// Monomials of degree ≤ 2 in all `2k` increments.
    IncrementPoly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub degree: usize,
    pub ridge: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Markov,
            degree: 2,
            ridge: 1e-8,
        }
    }
}

impl FeatureSpec {
    pub fn validate_at(&self, prefix: &str) -> Result<()> {
        if !(1..=3).contains(&self.degree) {
            return Err(Error::param(
                &format!("{prefix}.degree"),
                "degree ∈ {1, 2, 3}",
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::param(&format!("{prefix}.ridge"), "ridge ≥ 0"));
        }
        Ok(())
    }

    fn effective_degree(&self) -> usize {
        match self.kind {
            FeatureKind::IncrementPoly => self.degree.min(2),
            _ => self.degree,
        }
    }
}

/// Exponent tuples (as sorted variable-index lists) of all monomials of
/// degree `1..=degree` in `vars` variables, graded then lexicographic.
fn monomials(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(
        start: usize,
        vars: usize,
        left: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for v in start..vars {
            cur.push(v);
            rec(v, vars, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for d in 1..=degree {
        rec(0, vars, d, &mut Vec::new(), &mut out);
    }
    out
}

fn expand(base: &[f64], terms: &[Vec<usize>], out: &mut [f64]) {
    out[0] = 1.0;
    for (slot, term) in out[1..].iter_mut().zip(terms) {
        *slot = term.iter().map(|&v| base[v]).product();
    }
}

/// Running accumulator `A_k = h·Σ_{j<k} w_j·C̄²·(1/α_{t_j})·v_j/Ē_{0,t_j}` per
/// path, so that `Ē_{0,T}·A_{n+1}` is the emission part of `V̂_T`.
pub fn accumulator(ens: &PathEnsemble, k: usize, prior: &[CondExpModel]) -> Result<Vec<f64>> {
    if prior.len() < k || prior.iter().take(k).enumerate().any(|(j, m)| m.k != j) {
        return Err(Error::Usage(format!(
            "accumulator at k={k} needs fitted models for 0..{k}, got {}",
            prior.len()
        )));
    }
    let (h, c2) = (ens.grid.h, ens.params.c2_bar);
    Ok((0..ens.len())
        .into_par_iter()
        .map(|i| {
            (0..k)
                .map(|j| {
                    h * ens.grid.w[j] * c2 * ens.inv_alpha.get(i, j) * prior[j].fitted[i]
                        / ens.log_e0t.get(i, j).exp()
                })
                .sum()
        })
        .collect())
}

/// Base (pre-polynomial) variables of path `i` at date `k`.
fn base_vars(
    ens: &PathEnsemble,
    kind: FeatureKind,
    k: usize,
    i: usize,
    acc: Option<&[f64]>,
) -> Vec<f64> {
    match kind {
        FeatureKind::Markov => vec![ens.b1.get(i, k), ens.b2.get(i, k)],
        FeatureKind::MarkovPlusAccumulator => {
            vec![
                ens.b1.get(i, k),
                ens.b2.get(i, k),
                acc.expect("accumulator")[i],
            ]
        }
        FeatureKind::IncrementPoly => (0..k)
            .flat_map(|j| [ens.eps1.get(i, j), ens.eps2.get(i, j)])
            .collect(),
    }
}

fn base_count(kind: FeatureKind, k: usize) -> usize {
    match kind {
        FeatureKind::Markov => 2,
        FeatureKind::MarkovPlusAccumulator => 3,
        FeatureKind::IncrementPoly => 2 * k,
    }
}

/// Dense `N × d` design matrix, intercept in column 0.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Design matrix at date `k`. At `k = 0` it is the intercept column alone.
pub fn build_features(
    ens: &PathEnsemble,
    k: usize,
    spec: &FeatureSpec,
    prior: &[CondExpModel],
) -> Result<FeatureMatrix> {
    if k > ens.n_steps() {
        return Err(Error::Usage(format!(
            "k={k} beyond grid of {} steps",
            ens.n_steps()
        )));
    }
    let rows = ens.len();
    if k == 0 {
        return Ok(FeatureMatrix {
            rows,
            cols: 1,
            data: vec![1.0; rows],
        });
    }
    let acc = match spec.kind {
        FeatureKind::MarkovPlusAccumulator => Some(accumulator(ens, k, prior)?),
        _ => None,
    };
    let terms = monomials(base_count(spec.kind, k), spec.effective_degree());
    let cols = 1 + terms.len();
    let mut data = vec![0.0; rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        let base = base_vars(ens, spec.kind, k, i, acc.as_deref());
        expand(&base, &terms, row);
    });
    Ok(FeatureMatrix { rows, cols, data })
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    /// In-sample RMSE of the clamped fit.
    pub rmse: f64,
    /// In-sample RMSE of the constant (sample-mean) model.
    pub rmse_constant: f64,
    /// Ratio of extreme eigenvalues of the regularized, standardized Gram matrix.
    pub condition: f64,
    /// Feature columns dropped for having zero variance.
    pub dropped: usize,
    /// Paths whose raw prediction was negative.
    pub clamped: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum ModelForm {
    Constant {
        value: f64,
    },
    /// `v_n = ξ`; the values are the training field.
    Identity {
        #[serde(skip)]
        values: Vec<f64>,
    },
    /// `ȳ + Σ_j β_j (x_j − m_j)/s_j` over the kept polynomial columns `j`.
    Linear {
        intercept: f64,
        columns: Vec<usize>,
        means: Vec<f64>,
        scales: Vec<f64>,
        coef: Vec<f64>,
        #[serde(skip)]
        terms: Vec<Vec<usize>>,
    },
}

/// A fitted `v_k`.
#[derive(Debug, Clone, Serialize)]
pub struct CondExpModel {
    pub k: usize,
    pub spec: FeatureSpec,
    pub form: ModelForm,
    pub diagnostics: FitDiagnostics,
    /// Clamped predictions on the training ensemble.
    #[serde(skip)]
    pub fitted: Vec<f64>,
    /// Training accumulator column (accumulator features only).
    #[serde(skip)]
    accumulator: Option<Vec<f64>>,
}

impl CondExpModel {
    /// Model that predicts `value` everywhere on an ensemble of `rows` paths.
    pub fn constant(k: usize, value: f64, rows: usize) -> Self {
        Self {
            k,
            spec: FeatureSpec::default(),
            form: ModelForm::Constant { value },
            diagnostics: FitDiagnostics {
                rmse: 0.0,
                rmse_constant: 0.0,
                condition: 1.0,
                dropped: 0,
                clamped: 0,
            },
            fitted: vec![value.max(0.0); rows],
            accumulator: None,
        }
    }

    /// Raw (unclamped) prediction from the base variables
    /// (`[b1, b2]`, `[b1, b2, A]` or the increments).
    pub fn predict_base(&self, base: &[f64]) -> f64 {
        match &self.form {
            ModelForm::Constant { value } => *value,
            ModelForm::Identity { .. } => f64::NAN,
            ModelForm::Linear {
                intercept,
                columns,
                means,
                scales,
                coef,
                terms,
            } => {
                let mut s = *intercept;
                for (((&c, m), sc), b) in columns.iter().zip(means).zip(scales).zip(coef) {
                    let x: f64 = terms[c - 1].iter().map(|&v| base[v]).product();
                    s += b * (x - m) / sc;
                }
                s
            }
        }
    }

    /// Clamped prediction from Brownian values (Markov features only).
    pub fn predict_markov(&self, b1: f64, b2: f64) -> f64 {
        self.predict_base(&[b1, b2]).max(0.0)
    }
}

fn rmse(a: &[f64], y: &[f64]) -> f64 {
    mean_by(y.len(), |i| (a[i] - y[i]).powi(2)).sqrt()
}

/// Fits `v_k` to the targets `y_i = Ē^i_{t_k,T}·ξ_i`.
pub fn fit_cond_exp(
    ens: &PathEnsemble,
    xi: &[f64],
    k: usize,
    spec: &FeatureSpec,
    prior: &[CondExpModel],
) -> Result<CondExpModel> {
    let rows = ens.len();
    if xi.len() != rows {
        return Err(Error::Usage(format!(
            "ξ has {} entries, ensemble {rows}",
            xi.len()
        )));
    }
    if k > ens.n_steps() {
        return Err(Error::Usage(format!(
            "k={k} beyond grid of {} steps",
            ens.n_steps()
        )));
    }
    if k == ens.n_steps() {
        let values = xi.to_vec();
        return Ok(CondExpModel {
            k,
            spec: *spec,
            form: ModelForm::Identity {
                values: values.clone(),
            },
            diagnostics: FitDiagnostics {
                rmse: 0.0,
                rmse_constant: rmse(&vec![mean_by(rows, |i| xi[i]); rows], xi),
                condition: 1.0,
                dropped: 0,
                clamped: 0,
            },
            fitted: values,
            accumulator: None,
        });
    }
    let y: Vec<f64> = (0..rows)
        .into_par_iter()
        .map(|i| ens.growth_to_end(i, k) * xi[i])
        .collect();
    let y_mean = mean_by(rows, |i| y[i]);
    let constant_rmse = rmse(&vec![y_mean; rows], &y);
    let flat = y.iter().all(|&v| v == y[0]);
    if k == 0 || flat {
        let value = if flat { y[0] } else { y_mean };
        let mut m = CondExpModel::constant(k, value, rows);
        m.spec = *spec;
        m.diagnostics.rmse = rmse(&m.fitted, &y);
        m.diagnostics.rmse_constant = constant_rmse;
        return Ok(m);
    }

    let x = build_features(ens, k, spec, prior)?;
    let d = x.cols;
    let sums = sum_vec_by(rows, 2 * d, |i, acc| {
        let r = x.row(i);
        for j in 0..d {
            acc[j] += r[j];
            acc[d + j] += r[j] * r[j];
        }
    });
    let n = rows as f64;
    let mut columns = Vec::new();
    let mut means = Vec::new();
    let mut scales = Vec::new();
    for j in 1..d {
        let m = sums[j] / n;
        let var = (sums[d + j] / n - m * m).max(0.0);
        // Second pass for accuracy on columns with large means.
        let var = if var < 1e-6 * m * m {
            mean_by(rows, |i| (x.row(i)[j] - m).powi(2))
        } else {
            var
        };
        let sd = var.sqrt();
        if sd > 1e-12 * m.abs().max(1e-300) && sd > 0.0 {
            columns.push(j);
            means.push(m);
            scales.push(sd);
        }
    }
    let dropped = d - 1 - columns.len();
    let p = columns.len();
    if p == 0 {
        let mut m = CondExpModel::constant(k, y_mean, rows);
        m.spec = *spec;
        m.diagnostics.rmse = rmse(&m.fitted, &y);
        m.diagnostics.rmse_constant = constant_rmse;
        m.diagnostics.dropped = dropped;
        return Ok(m);
    }

    let gram = sum_vec_by(rows, p * p + p, |i, acc| {
        let r = x.row(i);
        let z: Vec<f64> = (0..p)
            .map(|a| (r[columns[a]] - means[a]) / scales[a])
            .collect();
        let dy = y[i] - y_mean;
        for a in 0..p {
            for b in a..p {
                acc[a * p + b] += z[a] * z[b];
            }
            acc[p * p + a] += z[a] * dy;
        }
    });
    let mut a = DMatrix::<f64>::zeros(p, p);
    for r in 0..p {
        for c in r..p {
            let v = gram[r * p + c] / n;
            a[(r, c)] = v;
            a[(c, r)] = v;
        }
        a[(r, r)] += spec.ridge;
    }
    let rhs = DVector::from_iterator(p, (0..p).map(|r| gram[p * p + r] / n));
    let eig = SymmetricEigen::new(a);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > 0.0 {
        lmax / lmin
    } else {
        f64::INFINITY
    };
    if !(lmin > 1e-13 * lmax) || !condition.is_finite() {
        return Err(Error::RankDeficient { k, condition });
    }
    let proj = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(
        p,
        proj.iter().zip(eig.eigenvalues.iter()).map(|(q, l)| q / l),
    );
    let coef: Vec<f64> = (eig.eigenvectors * scaled).iter().copied().collect();

    let terms = monomials(base_count(spec.kind, k), spec.effective_degree());
    let acc = match spec.kind {
        FeatureKind::MarkovPlusAccumulator => Some(accumulator(ens, k, prior)?),
        _ => None,
    };
    let mut model = CondExpModel {
        k,
        spec: *spec,
        form: ModelForm::Linear {
            intercept: y_mean,
            columns,
            means,
            scales,
            coef,
            terms,
        },
        diagnostics: FitDiagnostics {
            rmse: 0.0,
            rmse_constant: constant_rmse,
            condition,
            dropped,
            clamped: 0,
        },
        fitted: Vec::new(),
        accumulator: acc,
    };
    let raw: Vec<f64> = (0..rows)
        .into_par_iter()
        .map(|i| raw_prediction(&model, ens, i))
        .collect();
    model.diagnostics.clamped = raw.iter().filter(|&&v| v < 0.0).count();
    model.fitted = raw.into_iter().map(|v| v.max(0.0)).collect();
    model.diagnostics.rmse = rmse(&model.fitted, &y);
    Ok(model)
}

fn raw_prediction(model: &CondExpModel, ens: &PathEnsemble, i: usize) -> f64 {
    match &model.form {
        ModelForm::Constant { value } => *value,
        ModelForm::Identity { values } => values[i],
        ModelForm::Linear { .. } => {
            let base = base_vars(
                ens,
                model.spec.kind,
                model.k,
                i,
                model.accumulator.as_deref(),
            );
            model.predict_base(&base)
        }
    }
}

/// `v_k` on path `i` of the ensemble the model was trained on, clamped at 0.
pub fn predict(model: &CondExpModel, ens: &PathEnsemble, i: usize) -> Result<f64> {
    if model.k > ens.n_steps()
        || i >= ens.len()
        || (!model.fitted.is_empty() && model.fitted.len() != ens.len())
    {
        return Err(Error::Usage(format!(
            "model k={} trained on {} paths cannot predict path {i} of a {}-path, {}-step ensemble",
            model.k,
            model.fitted.len(),
            ens.len(),
            ens.n_steps()
        )));
    }
    Ok(raw_prediction(model, ens, i).max(0.0))
}
