//! Regression-free reference solver on a Gauss–Hermite tensor grid.
//!
//! For one or two time steps the common noise is a vector of `2n` standard
//! normal increments, so every expectation in the fixed-point map is a finite
//! weighted sum over `G^{2n}` nodes. Conditional expectations given `F_{t_k}`
//! are sums over the nodes sharing the first `k` steps. Nodes are stored
//! prefix-major (step 1 varies slowest, and within a step `ε¹` before `ε²`),
//! so those groups are contiguous blocks.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{green_density_log_z, log_growth, log_penalty_inverse, GridSpec, ModelParams};
use crate::quadrature::GaussHermite;

/// Tensor grid over the increments of `n` steps.
#[derive(Debug, Clone)]
pub struct OracleGrid {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub rule: GaussHermite,
    n: usize,
    /// Joint node weights.
    weights: Vec<f64>,
    /// `[node][k]`, `k = 0..=n`.
    b1: Vec<f64>,
    b2: Vec<f64>,
    growth_to_end: Vec<f64>,
    inv_alpha: Vec<f64>,
    growth_total: Vec<f64>,
    log_z: Vec<f64>,
}

impl OracleGrid {
    /// `params.n_steps` is ignored in favour of `n`; the horizon is kept.
    pub fn new(params: &ModelParams, n: usize, levels: usize) -> Result<Self> {
        if !(1..=2).contains(&n) {
            return Err(Error::param("n", "oracle supports n ∈ {1, 2}"));
        }
        if !(1..=64).contains(&levels) {
            return Err(Error::param("levels", "1 ≤ G ≤ 64"));
        }
        let mut params = params.clone();
        params.n_steps = n;
        let grid = params.grid();
        let rule = GaussHermite::new(levels)?;
        let dims = 2 * n;
        let count = levels.pow(dims as u32);
        let sqrt_h = grid.h.sqrt();
        let cols = n + 1;
        let mut weights = vec![0.0; count];
        let mut b1 = vec![0.0; count * cols];
        let mut b2 = vec![0.0; count * cols];
        weights
            .par_iter_mut()
            .zip(b1.par_chunks_mut(cols).zip(b2.par_chunks_mut(cols)))
            .enumerate()
            .for_each(|(idx, (w, (r1, r2)))| {
                // digits[d] for d = 0..dims, most significant first.
                let mut rem = idx;
                let mut digits = vec![0usize; dims];
                for d in (0..dims).rev() {
                    digits[d] = rem % levels;
                    rem /= levels;
                }
                *w = digits.iter().map(|&a| rule.weights[a]).product();
                let (mut s1, mut s2) = (0.0, 0.0);
                r1[0] = 0.0;
                r2[0] = 0.0;
                for j in 0..n {
                    s1 += rule.nodes[digits[2 * j]];
                    s2 += rule.nodes[digits[2 * j + 1]];
                    r1[j + 1] = sqrt_h * s1;
                    r2[j + 1] = sqrt_h * s2;
                }
            });
        let mut growth_to_end = vec![0.0; count * cols];
        let mut inv_alpha = vec![0.0; count * cols];
        let mut growth_total = vec![0.0; count];
        let mut log_z = vec![0.0; count];
        growth_to_end
            .par_chunks_mut(cols)
            .zip(inv_alpha.par_chunks_mut(cols))
            .zip(growth_total.par_iter_mut().zip(log_z.par_iter_mut()))
            .enumerate()
            .for_each(|(idx, ((ge, ia), (gt, lz)))| {
                let r1 = &b1[idx * cols..(idx + 1) * cols];
                let r2 = &b2[idx * cols..(idx + 1) * cols];
                let total = log_growth(&params, grid.t[n], r1[n]);
                for k in 0..=n {
                    let start = if k == 0 {
                        0.0
                    } else {
                        log_growth(&params, grid.t[k], r1[k])
                    };
                    ge[k] = (total - start).exp();
                    ia[k] = if k == 0 {
                        1.0
                    } else {
                        log_penalty_inverse(&params, grid.t[k], r2[k]).exp()
                    };
                }
                *gt = total.exp();
                *lz = green_density_log_z(&params, r2[n]);
            });
        Ok(Self {
            params,
            grid,
            rule,
            n,
            weights,
            b1,
            b2,
            growth_to_end,
            inv_alpha,
            growth_total,
            log_z,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(node)]` under the quadrature measure.
    pub fn expect(&self, f: impl Fn(usize) -> f64 + Sync) -> f64 {
        self.weights
            .par_chunks(4096)
            .enumerate()
            .map(|(b, w)| {
                w.iter()
                    .enumerate()
                    .map(|(j, wj)| wj * f(b * 4096 + j))
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum()
    }

    /// Number of nodes sharing one `F_{t_k}` prefix.
    fn block(&self, k: usize) -> usize {
        self.rule.len().pow((2 * (self.n - k)) as u32)
    }

    /// Exact `v_k = E[ξ·Ē_{t_k,T} | F_{t_k}]`, one value per prefix
    /// (`G^{2k}` values at date `k`).
    pub fn cond_exp(&self, xi: &[f64]) -> Vec<Vec<f64>> {
        let cols = self.n + 1;
        (0..=self.n)
            .map(|k| {
                let block = self.block(k);
                (0..self.len() / block)
                    .into_par_iter()
                    .map(|prefix| {
                        let range = prefix * block..(prefix + 1) * block;
                        let (mut num, mut den) = (0.0, 0.0);
                        for idx in range {
                            let w = self.weights[idx];
                            num += w * xi[idx] * self.growth_to_end[idx * cols + k];
                            den += w;
                        }
                        num / den
                    })
                    .collect()
            })
            .collect()
    }

    /// `v_k` seen from node `idx`.
    #[inline]
    fn v_at(&self, v: &[Vec<f64>], k: usize, idx: usize) -> f64 {
        v[k][idx / self.block(k)]
    }

    pub fn terminal_value(&self, v: &[Vec<f64>]) -> Vec<f64> {
        let cols = self.n + 1;
        let p = &self.params;
        (0..self.len())
            .into_par_iter()
            .map(|idx| {
                let em: f64 = (0..=self.n)
                    .map(|k| {
                        self.grid.w[k]
                            * self.inv_alpha[idx * cols + k]
                            * self.growth_to_end[idx * cols + k]
                            * self.v_at(v, k, idx)
                    })
                    .sum();
                p.v_bar * self.growth_total[idx] + self.grid.h * p.c2_bar * em
            })
            .collect()
    }

    /// Clearing map normalized by the quadrature mean.
    pub fn clearing(&self, vhat: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let s: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|i| -p.gamma_star * vhat[i] + p.rho * self.log_z[i])
            .collect();
        let shift = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.par_iter().map(|v| (v - shift).exp()).collect();
        let norm = self.expect(|i| e[i]);
        e.par_iter().map(|v| v / norm).collect()
    }

    /// The exact fixed-point map `ξ ↦ η`.
    pub fn map(&self, xi: &[f64]) -> Vec<f64> {
        self.clearing(&self.terminal_value(&self.cond_exp(xi)))
    }

    /// `(B¹_{t_k}, B²_{t_k}, prefix weight)` for each prefix at date `k`.
    pub fn prefixes(&self, k: usize) -> Vec<(f64, f64, f64)> {
        let block = self.block(k);
        let cols = self.n + 1;
        (0..self.len() / block)
            .map(|prefix| {
                let first = prefix * block;
                let w: f64 = self.weights[first..first + block].iter().sum();
                (self.b1[first * cols + k], self.b2[first * cols + k], w)
            })
            .collect()
    }
}

/// Step rule for the oracle iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleDamping {
    /// `α = 1`, halved whenever the residual grows.
    Picard,
    /// `α_q = 2/(q+p)`, the main solver's schedule.
    Schedule { p: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub damping: OracleDamping,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            damping: OracleDamping::Picard,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSolution {
    pub n_steps: usize,
    pub levels: usize,
    pub iterations: usize,
    /// Sup-norm of the last change of ξ.
    pub residual: f64,
    pub p1: f64,
    pub p2: f64,
    pub mean_psi_bar: f64,
    /// `E[ψ_{t_k}]` for `k = 0..=n`.
    pub expected_emissions: Vec<f64>,
    #[serde(skip)]
    pub xi: Vec<f64>,
    /// `v_k` per prefix.
    #[serde(skip)]
    pub cond_exp: Vec<Vec<f64>>,
    /// `Ψ̄_T` per node.
    #[serde(skip)]
    pub psi_bar: Vec<f64>,
}

pub fn oracle_solve(
    params: &ModelParams,
    n: usize,
    levels: usize,
) -> Result<(OracleGrid, OracleSolution)> {
    oracle_solve_with(params, n, levels, OracleOptions::default())
}

pub fn oracle_solve_with(
    params: &ModelParams,
    n: usize,
    levels: usize,
    opts: OracleOptions,
) -> Result<(OracleGrid, OracleSolution)> {
    let grid = OracleGrid::new(params, n, levels)?;
    let mut xi = vec![1.0; grid.len()];
    let mut relax: f64 = 1.0;
    let mut last_gap = f64::INFINITY;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let eta = grid.map(&xi);
        let gap = eta
            .par_iter()
            .zip(&xi)
            .map(|(e, x)| (e - x).abs())
            .reduce(|| 0.0, f64::max);
        if !gap.is_finite() {
            return Err(Error::NonFinite {
                iteration: iterations,
                path: 0,
                what: "oracle map",
            });
        }
        let alpha = match opts.damping {
            OracleDamping::Picard => {
                if gap > last_gap {
                    relax = (relax * 0.5).max(1e-3);
                }
                relax
            }
            OracleDamping::Schedule { p } => 2.0 / (iterations as f64 + p),
        };
        last_gap = gap;
        xi.par_iter_mut()
            .zip(&eta)
            .for_each(|(x, e)| *x = alpha * e + (1.0 - alpha) * *x);
        change = alpha * gap;
        iterations += 1;
        if change < opts.tol {
            break;
        }
    }
    if change >= opts.tol {
        return Err(Error::NoConvergence {
            iterations,
            residual: change,
        });
    }
    let solution = summarize(&grid, xi, iterations, change);
    Ok((grid, solution))
}

fn summarize(grid: &OracleGrid, xi: Vec<f64>, iterations: usize, residual: f64) -> OracleSolution {
    let n = grid.n;
    let cols = n + 1;
    let v = grid.cond_exp(&xi);
    let p = &grid.params;
    let h = grid.grid.h;
    let psi_bar: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            h * p.c_bar
                * (0..=n)
                    .map(|k| {
                        grid.grid.w[k] * grid.inv_alpha[idx * cols + k] * grid.v_at(&v, k, idx)
                    })
                    .sum::<f64>()
        })
        .collect();
    let p2 = grid.expect(|idx| {
        h * (0..=n)
            .map(|k| {
                let vk = grid.v_at(&v, k, idx);
                grid.grid.w[k] * grid.inv_alpha[idx * cols + k] * vk * vk
            })
            .sum::<f64>()
    });
    let expected_emissions = (0..=n)
        .map(|k| {
            grid.expect(|idx| {
                p.c_bar
                    * xi[idx]
                    * grid.inv_alpha[idx * cols + k]
                    * grid.growth_to_end[idx * cols + k]
            })
        })
        .collect();
    OracleSolution {
        n_steps: n,
        levels: grid.rule.len(),
        iterations,
        residual,
        p1: v[0][0],
        p2,
        mean_psi_bar: grid.expect(|i| psi_bar[i]),
        expected_emissions,
        xi,
        cond_exp: v,
        psi_bar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(f: impl FnOnce(&mut ModelParams)) -> ModelParams {
        let mut p = ModelParams {
            horizon: 0.25,
            ..Default::default()
        };
        f(&mut p);
        p
    }

    #[test]
    fn deterministic_case_is_unit() {
        let p = base(|p| {
            p.gamma_pen = 0.0;
            p.lambda = 0.0;
            p.sigma0 = 0.0;
        });
        let (_, sol) = oracle_solve(&p, 2, 8).unwrap();
        assert!(sol.xi.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn pure_measure_change_closed_form() {
        // γ* = 0: ξ = Z^ρ/E[Z^ρ] = exp(ρλB²_T − ρ²λ²T/2).
        let p = base(|p| {
            p.gamma_star = 0.0;
            p.lambda = 0.4;
            p.rho = 0.5;
            p.horizon = 0.5;
        });
        let (grid, sol) = oracle_solve(&p, 2, 16).unwrap();
        let cols = 3;
        for idx in (0..grid.len()).step_by(997) {
            let b2 = grid.b2[idx * cols + 2];
            let want = (0.2 * b2 - 0.04 * 0.5 / 2.0).exp();
            assert!((sol.xi[idx] - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn prefix_blocks_partition_weights() {
        let p = base(|_| {});
        let g = OracleGrid::new(&p, 2, 6).unwrap();
        let pre = g.prefixes(1);
        assert_eq!(pre.len(), 36);
        let s: f64 = pre.iter().map(|x| x.2).sum();
        assert!((s - 1.0).abs() < 1e-13);
        assert_eq!(g.prefixes(0).len(), 1);
        assert_eq!(g.prefixes(2).len(), g.len());
    }

    #[test]
    fn rejects_bad_sizes() {
        let p = base(|_| {});
        assert!(OracleGrid::new(&p, 3, 8).is_err());
        assert!(OracleGrid::new(&p, 1, 65).is_err());
    }
}
