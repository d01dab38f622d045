//! Blocked reductions whose result is independent of the rayon thread count.
//!
//! Paths are split into fixed blocks of [`BLOCK`] indices; each block is
//! summed sequentially with compensation and the block partials are combined
//! in block order.

use rayon::prelude::*;

pub(crate) const BLOCK: usize = 2048;

#[derive(Clone, Copy, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn blocks(len: usize) -> usize {
    len.div_ceil(BLOCK)
}

/// `Σ_{i<len} f(i)`.
pub(crate) fn sum_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partials: Vec<f64> = (0..blocks(len))
        .into_par_iter()
        .map(|b| {
            let mut acc = Neumaier::default();
            for i in b * BLOCK..((b + 1) * BLOCK).min(len) {
                acc.add(f(i));
            }
            acc.value()
        })
        .collect();
    let mut total = Neumaier::default();
    for p in partials {
        total.add(p);
    }
    total.value()
}

pub(crate) fn mean_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    sum_by(len, f) / len as f64
}

/// Element-wise `Σ_i f(i)` for vector-valued terms of length `dim`; `f`
/// accumulates its term into the provided buffer.
pub(crate) fn sum_vec_by<F>(len: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let partials: Vec<Vec<f64>> = (0..blocks(len))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; dim];
            for i in b * BLOCK..((b + 1) * BLOCK).min(len) {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut totals = vec![Neumaier::default(); dim];
    for p in &partials {
        for (t, x) in totals.iter_mut().zip(p) {
            t.add(*x);
        }
    }
    totals.iter().map(Neumaier::value).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_thread_count_independent() {
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e3 + 1e-7 * i as f64;
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sum_by(100_003, f));
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(5)
            .build()
            .unwrap()
            .install(|| sum_by(100_003, f));
        assert_eq!(one.to_bits(), many.to_bits());
    }

    #[test]
    fn compensated_sum_of_ones() {
        assert_eq!(sum_by(1_000_001, |_| 1.0), 1_000_001.0);
        assert_eq!(mean_by(7, |_| 0.1), 0.1 * 7.0 / 7.0);
    }

    #[test]
    fn vector_sum_matches_scalar() {
        let v = sum_vec_by(5000, 2, |i, acc| {
            acc[0] += i as f64;
            acc[1] += 1.0;
        });
        assert_eq!(v, vec![(4999.0 * 5000.0) / 2.0, 5000.0]);
    }
}
