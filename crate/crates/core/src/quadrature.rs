//! Gauss–Hermite rules for the standard normal measure.
//!
//! Nodes start from the Golub–Welsch eigenvalues of the Jacobi matrix and
//! are polished by Newton's method on the normalized probabilists' Hermite
//! polynomial; weights come from `w_i = 1/(G·h_{G−1}(x_i)²)`, which keeps
//! tiny tail weights accurate to full relative precision.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `(h_{n}(x), h_{n−1}(x))` with `h_k = He_k/√(k!)`.
fn normalized_hermite(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

impl GaussHermite {
    /// `levels`-point rule, exact for polynomials of degree `2·levels − 1`.
    pub fn new(levels: usize) -> Result<Self> {
        if !(1..=128).contains(&levels) {
            return Err(Error::param("levels", "1 ≤ G ≤ 128"));
        }
        let mut jacobi = DMatrix::<f64>::zeros(levels, levels);
        for k in 1..levels {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nodes.sort_by(f64::total_cmp);
        let g = levels as f64;
        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let (hn, hm) = normalized_hermite(levels, *x);
                if hm == 0.0 {
                    break;
                }
                *x -= hn / (g.sqrt() * hm);
            }
        }
        // Exact symmetry.
        for i in 0..levels / 2 {
            let j = levels - 1 - i;
            let m = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -m;
            nodes[j] = m;
        }
        if levels % 2 == 1 {
            nodes[levels / 2] = 0.0;
        }
        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let (_, hm) = normalized_hermite(levels, x);
                1.0 / (g * hm * hm)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(X)]`, `X ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(f64::from).product()
    }

    #[test]
    fn weights_sum_to_one() {
        for g in [1, 2, 5, 16, 32, 40, 64] {
            let r = GaussHermite::new(g).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "G={g}: {s}");
        }
    }

    #[test]
    fn moments_match_standard_normal() {
        for g in [4usize, 8, 16, 32] {
            let r = GaussHermite::new(g).unwrap();
            for m in 0..(2 * g as u32) {
                let got = r.expect(|x| x.powi(m as i32));
                if m % 2 == 1 {
                    let scale = r.expect(|x| x.abs().powi(m as i32));
                    assert!(got.abs() <= 1e-10 * scale, "G={g} m={m}: {got}");
                } else {
                    let want = double_factorial(m.saturating_sub(1));
                    assert!(
                        ((got - want) / want).abs() < 1e-10,
                        "G={g} m={m}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn lognormal_mean() {
        let r = GaussHermite::new(32).unwrap();
        let got = r.expect(|x| (0.7 * x).exp());
        assert!((got - (0.245f64).exp()).abs() < 1e-14);
    }
}
