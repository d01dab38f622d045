//! Model parameters, the time grid, and the closed-form common-noise factors.
//!
//! Everything here is a pure function of immutable records. The three path
//! factors are
//!
//! * growth `Ē_{0,t} = exp(σ⁰·B¹_t + (μ − σ⁰²/2)·t)` and `Ē_{t,T} = Ē_{0,T}/Ē_{0,t}`,
//! * inverse emission penalty `1/α_t = exp(−γ·B²_t + γ²·t/2)`,
//! * green-investor density `ln Z = λ·B²_T − λ²·T/2`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Risk aversions of the two representative investors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvestorParams {
    pub gamma_r: f64,
    pub gamma_g: f64,
    pub lambda: f64,
    /// Initial wealths; only used to interpret `rho` as a wealth share.
    #[serde(default)]
    pub w_r: Option<f64>,
    #[serde(default)]
    pub w_g: Option<f64>,
}

/// Aggregate risk aversion `γ* = (1/γ^r + 1/γ^g)^{-1}` and green share
/// `ρ = γ^r/(γ^r + γ^g)`.
pub fn derive_aggregates(inv: &InvestorParams) -> Result<(f64, f64)> {
    if !(inv.gamma_r > 0.0 && inv.gamma_r.is_finite()) {
        return Err(Error::param("gamma_r", "must be positive and finite"));
    }
    if !(inv.gamma_g > 0.0) {
        return Err(Error::param("gamma_g", "must be positive"));
    }
    let gamma_star = 1.0 / (1.0 / inv.gamma_r + 1.0 / inv.gamma_g);
    let rho = inv.gamma_r / (inv.gamma_r + inv.gamma_g);
    Ok((gamma_star, rho))
}

/// All scalar inputs of one solver run. Defaults reproduce the base case
/// (`γ = 0.3`, `λ = 0`, `ρ = 0.5`) with the standard parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Horizon `T` in years.
    pub horizon: f64,
    pub gamma_star: f64,
    pub rho: f64,
    pub lambda: f64,
    /// Volatility `γ` of the emission penalty.
    pub gamma_pen: f64,
    pub sigma0: f64,
    pub mu: f64,
    pub v_bar: f64,
    pub c_bar: f64,
    pub c2_bar: f64,
    /// Idiosyncratic volatility. It integrates out of every common-noise
    /// quantity, so the solver never reads it.
    pub sigma_idio: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    /// Offset in the step rule `α_q = 2/(q+p)`.
    pub p: f64,
    pub n_iter: usize,
    pub seed: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            gamma_star: 0.5,
            rho: 0.5,
            lambda: 0.0,
            gamma_pen: 0.3,
            sigma0: 0.1,
            mu: 0.05,
            v_bar: 1.0,
            c_bar: 0.7,
            c2_bar: 1.0,
            sigma_idio: 0.0,
            n_steps: 20,
            n_paths: 50_000,
            p: 2.0,
            n_iter: 10,
            seed: 42,
        }
    }
}

fn finite(field: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, "must be finite"))
    }
}

impl ModelParams {
    /// Checks every documented range. Field names in errors are prefixed
    /// with `prefix` (e.g. `"model"`).
    pub fn validate_at(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| {
            if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            }
        };
        for (name, x) in [
            ("horizon", self.horizon),
            ("gamma_star", self.gamma_star),
            ("rho", self.rho),
            ("lambda", self.lambda),
            ("gamma_pen", self.gamma_pen),
            ("sigma0", self.sigma0),
            ("mu", self.mu),
            ("v_bar", self.v_bar),
            ("c_bar", self.c_bar),
            ("c2_bar", self.c2_bar),
            ("sigma_idio", self.sigma_idio),
            ("p", self.p),
        ] {
            finite(&f(name), x)?;
        }
        if self.horizon <= 0.0 {
            return Err(Error::param(&f("horizon"), "T > 0"));
        }
        if self.gamma_star < 0.0 {
            return Err(Error::param(&f("gamma_star"), "γ* ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::param(&f("rho"), "ρ ∈ [0, 1]"));
        }
        if self.gamma_pen < 0.0 {
            return Err(Error::param(&f("gamma_pen"), "γ ≥ 0"));
        }
        if self.sigma0 < 0.0 {
            return Err(Error::param(&f("sigma0"), "σ0 ≥ 0"));
        }
        if self.sigma_idio < 0.0 {
            return Err(Error::param(&f("sigma_idio"), "σ ≥ 0"));
        }
        if self.v_bar <= 0.0 {
            return Err(Error::param(&f("v_bar"), "V̄ > 0"));
        }
        if self.c_bar < 0.0 {
            return Err(Error::param(&f("c_bar"), "C̄ ≥ 0"));
        }
        if self.c2_bar < 0.0 {
            return Err(Error::param(&f("c2_bar"), "C̄² ≥ 0"));
        }
        if self.c2_bar < self.c_bar * self.c_bar * (1.0 - 1e-12) {
            return Err(Error::param(&f("c2_bar"), "C̄² ≥ (C̄)² (Jensen)"));
        }
        if self.n_steps < 1 {
            return Err(Error::param(&f("n_steps"), "n ≥ 1"));
        }
        if self.n_paths < 2 {
            return Err(Error::param(&f("n_paths"), "N ≥ 2"));
        }
        if self.p < 2.0 {
            return Err(Error::param(&f("p"), "p ≥ 2"));
        }
        if self.n_iter < 1 {
            return Err(Error::param(&f("n_iter"), "n_iter ≥ 1"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("")
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.horizon, self.n_steps)
    }

    /// Stable 64-bit fingerprint of the parameter record.
    pub fn hash64(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("params serialize");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Step size of sweep `q` (0-based).
    pub fn step_size(&self, q: usize) -> f64 {
        step_size(q, self.p)
    }
}

/// `α_q = 2/(q+p)`.
pub fn step_size(q: usize, p: f64) -> f64 {
    2.0 / (q as f64 + p)
}

/// Uniform time grid with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub h: f64,
    pub t: Vec<f64>,
    pub w: Vec<f64>,
}

impl GridSpec {
    pub fn new(horizon: f64, n: usize) -> Self {
        assert!(n >= 1, "grid needs at least one step");
        let h = horizon / n as f64;
        let t = (0..=n)
            .map(|k| if k == n { horizon } else { k as f64 * h })
            .collect();
        let w = (0..=n)
            .map(|k| if k == 0 || k == n { 0.5 } else { 1.0 })
            .collect();
        Self { n, h, t, w }
    }

    pub fn horizon(&self) -> f64 {
        self.t[self.n]
    }

    /// `h·Σ_k w_k f(k)`.
    pub fn trapezoid(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.h * (0..=self.n).map(|k| self.w[k] * f(k)).sum::<f64>()
    }
}

/// `ln Ē_{0,t}` for Brownian value `b1` at time `t`.
#[inline]
pub fn log_growth(params: &ModelParams, t: f64, b1: f64) -> f64 {
    params.sigma0 * b1 + (params.mu - 0.5 * params.sigma0 * params.sigma0) * t
}

/// `Ē_{0,t_k}`.
pub fn growth_factor(params: &ModelParams, grid: &GridSpec, k: usize, b1: f64) -> f64 {
    log_growth(params, grid.t[k], b1).exp()
}

/// Both legs of the growth factor at `t_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthSplit {
    /// `Ē_{0,t_k}`
    pub from_start: f64,
    /// `Ē_{t_k,T}`
    pub to_end: f64,
}

/// Splits `Ē_{0,T}` at `t_k` given `B¹_{t_k}` and `B¹_T`; the ratio is taken
/// in log space.
pub fn growth_split(
    params: &ModelParams,
    grid: &GridSpec,
    k: usize,
    b1_k: f64,
    b1_end: f64,
) -> GrowthSplit {
    let start = log_growth(params, grid.t[k], b1_k);
    let total = log_growth(params, grid.horizon(), b1_end);
    GrowthSplit {
        from_start: start.exp(),
        to_end: (total - start).exp(),
    }
}

/// `ln(1/α_t) = −γ·b2 + γ²·t/2`.
#[inline]
pub fn log_penalty_inverse(params: &ModelParams, t: f64, b2: f64) -> f64 {
    let g = params.gamma_pen;
    -g * b2 + 0.5 * g * g * t
}

/// `1/α_{t_k}`.
pub fn penalty_inverse_factor(params: &ModelParams, grid: &GridSpec, k: usize, b2: f64) -> f64 {
    log_penalty_inverse(params, grid.t[k], b2).exp()
}

/// `ln Z = λ·B²_T − λ²T/2`.
#[inline]
pub fn green_density_log_z(params: &ModelParams, b2_end: f64) -> f64 {
    let l = params.lambda;
    l * b2_end - 0.5 * l * l * params.horizon
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn inv(gr: f64, gg: f64) -> InvestorParams {
        InvestorParams {
            gamma_r: gr,
            gamma_g: gg,
            lambda: 0.0,
            w_r: None,
            w_g: None,
        }
    }

    #[test]
    fn aggregates_symmetric() {
        let (gs, rho) = derive_aggregates(&inv(1.0, 1.0)).unwrap();
        assert_eq!(gs, 0.5);
        assert_eq!(rho, 0.5);
        let (gs, rho) = derive_aggregates(&inv(2.0, 2.0)).unwrap();
        assert_eq!(gs, 1.0);
        assert_eq!(rho, 0.5);
    }

    #[test]
    fn aggregates_no_green_limit() {
        let (gs, rho) = derive_aggregates(&inv(1.0, 1e9)).unwrap();
        assert!((gs - 1.0).abs() < 1e-8);
        assert!(rho.abs() < 1e-8);
    }

    #[test]
    fn aggregates_reject_nonpositive() {
        assert!(derive_aggregates(&inv(0.0, 1.0)).is_err());
        assert!(derive_aggregates(&inv(1.0, -1.0)).is_err());
    }

    #[test]
    fn growth_examples() {
        let mut p = ModelParams {
            sigma0: 0.0,
            ..Default::default()
        };
        let grid = p.grid();
        assert_relative_eq!(
            growth_factor(&p, &grid, 20, 0.3),
            0.25f64.exp(),
            max_relative = 1e-15
        );
        let s = growth_split(&p, &grid, 20, 0.7, 0.7);
        assert_eq!(s.to_end, 1.0);
        p.sigma0 = 0.1;
        assert_relative_eq!(
            growth_factor(&p, &grid, 20, 1.0),
            0.325f64.exp(),
            max_relative = 1e-15
        );
        let s = growth_split(&p, &grid, 10, 0.4, 1.0);
        assert_relative_eq!(
            s.from_start * s.to_end,
            growth_factor(&p, &grid, 20, 1.0),
            max_relative = 1e-14
        );
    }

    #[test]
    fn penalty_and_density_examples() {
        let mut p = ModelParams {
            gamma_pen: 0.0,
            ..Default::default()
        };
        let grid = p.grid();
        assert_eq!(penalty_inverse_factor(&p, &grid, 7, -1.3), 1.0);
        p.gamma_pen = 0.3;
        assert_relative_eq!(
            penalty_inverse_factor(&p, &grid, 20, 0.0),
            0.225f64.exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(0.225f64.exp(), 1.25232, epsilon = 1e-5);
        p.lambda = 0.0;
        assert_eq!(green_density_log_z(&p, 2.0), 0.0);
        p.lambda = 0.4;
        assert_relative_eq!(green_density_log_z(&p, 0.0), -0.4, max_relative = 1e-15);
    }

    #[test]
    fn trapezoid_weights_sum_to_horizon() {
        for n in [1, 2, 3, 7, 20, 333] {
            let g = GridSpec::new(5.0, n);
            let s = g.h * g.w.iter().sum::<f64>();
            assert!((s - 5.0).abs() <= 5.0 * 1e-12, "n={n}: {s}");
            assert_eq!(g.t[0], 0.0);
            assert_eq!(g.t[n], 5.0);
        }
    }

    #[test]
    fn validation_messages_name_the_field() {
        let p = ModelParams {
            n_paths: 1,
            ..Default::default()
        };
        let err = p.validate_at("model").unwrap_err().to_string();
        assert!(
            err.contains("model.n_paths") && err.contains("N ≥ 2"),
            "{err}"
        );
        let p = ModelParams {
            c_bar: 1.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = ModelParams {
            p: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        ModelParams::default().validate().unwrap();
    }
}
