//! Equilibrium outputs computed from a solved discount factor.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::paths::PathEnsemble;
use crate::reduce::{mean_by, sum_by};
use crate::regress::{CondExpModel, ModelForm};
use crate::solver::DiscountField;

/// Total average emissions `Ψ̄_T = h·Σ_k w_k·C̄·(1/α_{t_k})·v_k` per path.
#[derive(Debug, Clone, Serialize)]
pub struct EmissionDistribution {
    pub samples: Vec<f64>,
}

impl EmissionDistribution {
    pub fn summary(&self) -> Summary {
        Summary::of(&self.samples)
    }
}

pub fn total_emissions(
    ens: &PathEnsemble,
    models: &[CondExpModel],
) -> Result<EmissionDistribution> {
    let n = ens.n_steps();
    if models.len() != n + 1 {
        return Err(Error::Usage(format!(
            "need {} models, got {}",
            n + 1,
            models.len()
        )));
    }
    let (h, c) = (ens.grid.h, ens.params.c_bar);
    let samples = (0..ens.len())
        .into_par_iter()
        .map(|i| {
            h * c
                * (0..=n)
                    .map(|k| ens.grid.w[k] * ens.inv_alpha.get(i, k) * models[k].fitted[i])
                    .sum::<f64>()
        })
        .collect();
    Ok(EmissionDistribution { samples })
}

/// Two estimators of `E[ψ_{t_k}]` for a firm with efficacy `C̄`.
#[derive(Debug, Clone, Serialize)]
pub struct ExpectedEmissionCurve {
    pub t: Vec<f64>,
    /// `(C̄/N)·Σ_i ξ_i·(1/α^i_{t_k})·Ē^i_{t_k,T}`
    pub direct: Vec<f64>,
    pub direct_se: Vec<f64>,
    /// `(C̄/N)·Σ_i (1/α^i_{t_k})·v_k(i)`
    pub regression: Vec<f64>,
    pub regression_se: Vec<f64>,
}

fn mean_and_se(len: usize, f: impl Fn(usize) -> f64 + Sync) -> (f64, f64) {
    let m = mean_by(len, &f);
    let ss = sum_by(len, |i| (f(i) - m).powi(2));
    (m, (ss / (len as f64 - 1.0) / len as f64).sqrt())
}

pub fn expected_emission_curve(
    ens: &PathEnsemble,
    xi: &DiscountField,
    models: &[CondExpModel],
) -> Result<ExpectedEmissionCurve> {
    let n = ens.n_steps();
    if xi.len() != ens.len() || models.len() != n + 1 {
        return Err(Error::Usage("solution does not match ensemble".into()));
    }
    let c = ens.params.c_bar;
    let len = ens.len();
    let mut curve = ExpectedEmissionCurve {
        t: ens.grid.t.clone(),
        direct: Vec::with_capacity(n + 1),
        direct_se: Vec::with_capacity(n + 1),
        regression: Vec::with_capacity(n + 1),
        regression_se: Vec::with_capacity(n + 1),
    };
    for k in 0..=n {
        let (d, dse) = mean_and_se(len, |i| {
            c * xi.xi[i] * ens.inv_alpha.get(i, k) * ens.growth_to_end(i, k)
        });
        let (r, rse) = mean_and_se(len, |i| c * ens.inv_alpha.get(i, k) * models[k].fitted[i]);
        curve.direct.push(d);
        curve.direct_se.push(dse);
        curve.regression.push(r);
        curve.regression_se.push(rse);
    }
    Ok(curve)
}

/// Share price `S₀ = V·P1 + C₀²·P2` of a firm with value `V` and squared
/// efficacy `C₀²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceDecomposition {
    pub p1: f64,
    pub p2: f64,
}

impl PriceDecomposition {
    pub fn price(&self, firm_value: f64, efficacy_sq: f64) -> f64 {
        firm_value * self.p1 + efficacy_sq * self.p2
    }
}

/// `P1 = v_0`, `P2 = (h/N)·Σ_i Σ_k w_k·(1/α^i_{t_k})·v_k(i)²`.
pub fn price_components(ens: &PathEnsemble, models: &[CondExpModel]) -> Result<PriceDecomposition> {
    let n = ens.n_steps();
    if models.len() != n + 1 {
        return Err(Error::Usage(format!(
            "need {} models, got {}",
            n + 1,
            models.len()
        )));
    }
    let p1 = match models[0].form {
        ModelForm::Constant { value } => value,
        _ => return Err(Error::Usage("v_0 must be a constant model".into())),
    };
    let h = ens.grid.h;
    let p2 = mean_by(ens.len(), |i| {
        h * (0..=n)
            .map(|k| {
                let v = models[k].fitted[i];
                ens.grid.w[k] * ens.inv_alpha.get(i, k) * v * v
            })
            .sum::<f64>()
    });
    Ok(PriceDecomposition { p1, p2 })
}

/// Mean and standard error of independent repetitions
/// (`sd/√R`, sample standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepeatedEstimate {
    pub mean: f64,
    pub se: f64,
}

impl RepeatedEstimate {
    pub fn of(values: &[f64]) -> Self {
        let r = values.len() as f64;
        let mean = values.iter().sum::<f64>() / r;
        let se = if values.len() < 2 {
            f64::NAN
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt()
        };
        Self { mean, se }
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_se(&self, other: &Self) -> f64 {
        self.se.hypot(other.se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = mean_by(n, |i| samples[i]);
        let sd = (sum_by(n, |i| (samples[i] - mean).powi(2)) / (n as f64 - 1.0).max(1.0)).sqrt();
        let mut sorted = samples.to_vec();
        sorted.par_sort_unstable_by(f64::total_cmp);
        Self {
            mean,
            sd,
            q05: quantile(&sorted, 0.05),
            q25: quantile(&sorted, 0.25),
            q50: quantile(&sorted, 0.50),
            q75: quantile(&sorted, 0.75),
            q95: quantile(&sorted, 0.95),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gaussian kernel density estimate on an even grid.
#[derive(Debug, Clone, Serialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Set when all samples coincide; the density is then a point mass here
    /// and `grid`/`density` are empty.
    pub point_mass: Option<f64>,
    #[serde(skip)]
    samples: Vec<f64>,
}

impl Kde {
    pub fn is_degenerate(&self) -> bool {
        self.point_mass.is_some()
    }

    /// Density at an arbitrary point.
    pub fn eval(&self, x: f64) -> f64 {
        let bw = self.bandwidth;
        let norm = 1.0 / (self.samples.len() as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
        norm * self
            .samples
            .iter()
            .map(|s| (-0.5 * ((x - s) / bw).powi(2)).exp())
            .sum::<f64>()
    }
}

/// Silverman's rule `0.9·min(sd, IQR/1.34)·n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let s = Summary::of(samples);
    let iqr = (s.q75 - s.q25) / 1.34;
    let spread = if iqr > 0.0 { s.sd.min(iqr) } else { s.sd };
    0.9 * spread * (samples.len() as f64).powf(-0.2)
}

/// Gaussian KDE spanning `[min − 3·bw, max + 3·bw]`.
pub fn kde_smooth(samples: &[f64], bandwidth: Option<f64>) -> Result<Kde> {
    if samples.len() < 2 {
        return Err(Error::Usage(
            "kernel density needs at least two samples".into(),
        ));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(Kde {
            bandwidth: 0.0,
            grid: Vec::new(),
            density: Vec::new(),
            point_mass: Some(lo),
            samples: samples.to_vec(),
        });
    }
    let bw = match bandwidth {
        Some(b) if b > 0.0 => b,
        Some(_) => return Err(Error::Usage("bandwidth must be positive".into())),
        None => silverman_bandwidth(samples),
    };
    let (a, b) = (lo - 3.0 * bw, hi + 3.0 * bw);
    let points = (((b - a) / (bw / 8.0)).ceil() as usize).clamp(512, 8192);
    let step = (b - a) / (points - 1) as f64;
    let mut kde = Kde {
        bandwidth: bw,
        grid: (0..points).map(|j| a + j as f64 * step).collect(),
        density: Vec::new(),
        point_mass: None,
        samples: samples.to_vec(),
    };
    kde.density = kde.grid.par_iter().map(|&x| kde.eval(x)).collect();
    Ok(kde)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kde_normalizes() {
        let s: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let k = kde_smooth(&s, None).unwrap();
        let step = k.grid[1] - k.grid[0];
        let mut integral = 0.0;
        for j in 1..k.grid.len() {
            integral += 0.5 * step * (k.density[j] + k.density[j - 1]);
        }
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    #[test]
    fn kde_point_mass() {
        let k = kde_smooth(&[0.0, 0.0], None).unwrap();
        assert_eq!(k.point_mass, Some(0.0));
        assert!(kde_smooth(&[1.0], None).is_err());
    }

    #[test]
    fn ks_statistics() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.5, 10.0]) - 0.5).abs() < 1e-15);
        let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_one_sample(&u, |x| x) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn repeated_estimate() {
        let r = RepeatedEstimate::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.mean, 2.5);
        assert!((r.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(RepeatedEstimate::of(&[1.0]).se.is_nan());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.0);
        assert_eq!(quantile(&s, 0.05), 0.2);
    }

    #[test]
    fn price_is_linear() {
        let d = PriceDecomposition { p1: 1.2, p2: 6.5 };
        assert_eq!(d.price(1.0, 0.0), 1.2);
        assert_eq!(d.price(0.0, 1.0), 6.5);
        assert_eq!(d.price(2.0, 0.5), 2.4 + 3.25);
    }
}
