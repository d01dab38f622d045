//! The common-noise path ensemble.
//!
//! Each path owns one ChaCha8 stream (`stream = path index`) seeded from the
//! run seed, and draws its increments in the order `(step 1, dim 1), (step 1,
//! dim 2), (step 2, dim 1), …`. Paths are therefore reproducible one by one,
//! and a parallel fill is bitwise identical to the sequential one.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{green_density_log_z, log_growth, log_penalty_inverse, GridSpec, ModelParams};

/// Default cap on the memory the ensemble may occupy.
pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;

/// Row-major `rows × cols` matrix of `f64`, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PathMatrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn par_rows_mut(&mut self) -> rayon::slice::ChunksMut<'_, f64> {
        self.data.par_chunks_mut(self.cols)
    }
}

/// Which seed and stream layout produced an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngPolicy {
    pub seed: u64,
}

impl RngPolicy {
    /// The generator for path `i`.
    pub fn path_rng(&self, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        rng
    }
}

/// Simulated common noise plus the per-path factors the solver consumes.
///
/// `eps*` are `N × n` standard normal increments; every other matrix is
/// `N × (n+1)` on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub rng: RngPolicy,
    /// Whether the second half of the paths mirrors the first half.
    pub antithetic: bool,
    pub eps1: PathMatrix,
    pub eps2: PathMatrix,
    pub b1: PathMatrix,
    pub b2: PathMatrix,
    /// `ln Ē_{0,t_k}`
    pub log_e0t: PathMatrix,
    /// `ln Ē_{t_k,T}`
    pub log_e_to_end: PathMatrix,
    /// `1/α_{t_k}`
    pub inv_alpha: PathMatrix,
    /// `ln Z`
    pub log_z: Vec<f64>,
}

/// Bytes needed by an ensemble of `n_paths × n_steps`.
pub fn ensemble_bytes(n_paths: usize, n_steps: usize) -> u64 {
    let per_path = 2 * n_steps + 5 * (n_steps + 1) + 1;
    (n_paths as u64) * (per_path as u64) * 8
}

/// Simulates `params.n_paths` paths with the default memory budget.
pub fn simulate_paths(params: &ModelParams, grid: &GridSpec) -> Result<PathEnsemble> {
    simulate_paths_with_budget(params, grid, DEFAULT_MEMORY_BUDGET)
}

pub fn simulate_paths_with_budget(
    params: &ModelParams,
    grid: &GridSpec,
    budget: u64,
) -> Result<PathEnsemble> {
    params.validate()?;
    if grid.n != params.n_steps {
        return Err(Error::Usage(format!(
            "grid has {} steps but params.n_steps = {}",
            grid.n, params.n_steps
        )));
    }
    let (n_paths, n) = (params.n_paths, grid.n);
    let required = ensemble_bytes(n_paths, n);
    if required > budget {
        return Err(Error::Resource { required, budget });
    }
    let rng = RngPolicy { seed: params.seed };
    let mut eps1 = PathMatrix::zeros(n_paths, n);
    let mut eps2 = PathMatrix::zeros(n_paths, n);
    eps1.par_rows_mut()
        .zip(eps2.par_rows_mut())
        .enumerate()
        .for_each(|(i, (r1, r2))| {
            let mut g = rng.path_rng(i);
            for j in 0..n {
                r1[j] = g.sample(StandardNormal);
                r2[j] = g.sample(StandardNormal);
            }
        });
    Ok(from_increments(
        params.clone(),
        grid.clone(),
        rng,
        false,
        eps1,
        eps2,
    ))
}

/// Builds Brownian values and all derived factors from stored increments.
fn from_increments(
    params: ModelParams,
    grid: GridSpec,
    rng: RngPolicy,
    antithetic: bool,
    eps1: PathMatrix,
    eps2: PathMatrix,
) -> PathEnsemble {
    let (rows, n) = (eps1.rows(), grid.n);
    let sqrt_h = grid.h.sqrt();
    let brownian = |eps: &PathMatrix| {
        let mut b = PathMatrix::zeros(rows, n + 1);
        b.par_rows_mut().enumerate().for_each(|(i, row)| {
            let inc = eps.row(i);
            let mut acc = 0.0;
            for j in 0..n {
                acc += inc[j];
                row[j + 1] = sqrt_h * acc;
            }
        });
        b
    };
    let b1 = brownian(&eps1);
    let b2 = brownian(&eps2);

    let mut log_e0t = PathMatrix::zeros(rows, n + 1);
    log_e0t.par_rows_mut().enumerate().for_each(|(i, row)| {
        for (k, x) in row.iter_mut().enumerate() {
            *x = if k == 0 {
                0.0
            } else {
                log_growth(&params, grid.t[k], b1.get(i, k))
            };
        }
    });
    let mut log_e_to_end = PathMatrix::zeros(rows, n + 1);
    log_e_to_end
        .par_rows_mut()
        .enumerate()
        .for_each(|(i, row)| {
            let e = log_e0t.row(i);
            for k in 0..=n {
                row[k] = e[n] - e[k];
            }
        });
    let mut inv_alpha = PathMatrix::zeros(rows, n + 1);
    inv_alpha.par_rows_mut().enumerate().for_each(|(i, row)| {
        for (k, x) in row.iter_mut().enumerate() {
            *x = if k == 0 {
                1.0
            } else {
                log_penalty_inverse(&params, grid.t[k], b2.get(i, k)).exp()
            };
        }
    });
    let log_z = (0..rows)
        .into_par_iter()
        .map(|i| green_density_log_z(&params, b2.get(i, n)))
        .collect();
    PathEnsemble {
        params,
        grid,
        rng,
        antithetic,
        eps1,
        eps2,
        b1,
        b2,
        log_e0t,
        log_e_to_end,
        inv_alpha,
        log_z,
    }
}

/// Appends the mirror image of every path (negated increments).
pub fn antithetic_extend(ens: &PathEnsemble) -> PathEnsemble {
    let mirror = |m: &PathMatrix| {
        let mut data = Vec::with_capacity(2 * m.data.len());
        data.extend_from_slice(&m.data);
        data.extend(m.data.iter().map(|x| -x));
        PathMatrix {
            rows: 2 * m.rows,
            cols: m.cols,
            data,
        }
    };
    let mut params = ens.params.clone();
    params.n_paths = 2 * ens.len();
    from_increments(
        params,
        ens.grid.clone(),
        ens.rng,
        true,
        mirror(&ens.eps1),
        mirror(&ens.eps2),
    )
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.eps1.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n
    }

    /// `Ē_{t_k,T}` on path `i`.
    #[inline]
    pub fn growth_to_end(&self, i: usize, k: usize) -> f64 {
        self.log_e_to_end.get(i, k).exp()
    }

    /// Checks the structural invariants; used by tests and after loading.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n_steps();
        let sqrt_h = self.grid.h.sqrt();
        for i in 0..self.len() {
            for (b, eps, name) in [(&self.b1, &self.eps1, "b1"), (&self.b2, &self.eps2, "b2")] {
                if b.get(i, 0) != 0.0 {
                    return Err(Error::Invariant(format!("{name}[{i}][0] != 0")));
                }
                let mut acc = 0.0;
                for j in 0..n {
                    acc += eps.get(i, j);
                    let want = sqrt_h * acc;
                    if (b.get(i, j + 1) - want).abs() > 1e-12 * (1.0 + want.abs()) {
                        return Err(Error::Invariant(format!("{name}[{i}][{}] mismatch", j + 1)));
                    }
                }
            }
            if self.log_e_to_end.get(i, n) != 0.0 || self.log_e0t.get(i, 0) != 0.0 {
                return Err(Error::Invariant(format!("growth endpoints on path {i}")));
            }
            if self.inv_alpha.get(i, 0) != 1.0 {
                return Err(Error::Invariant(format!("1/α_0 != 1 on path {i}")));
            }
        }
        Ok(())
    }

    /// Writes the increments with a header of `(seed, N, n, antithetic,
    /// params hash)`. Derived factors are rebuilt on load.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(48 + 16 * self.eps1.data.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.rng.seed.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_steps() as u64).to_le_bytes());
        buf.extend_from_slice(&u64::from(self.antithetic).to_le_bytes());
        buf.extend_from_slice(&self.params.hash64().to_le_bytes());
        for x in self.eps1.data.iter().chain(&self.eps2.data) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
        let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
        tmp.write_all(&buf)?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Loads an ensemble written by [`PathEnsemble::dump`]. `params` must be
    /// the record the ensemble was generated with.
    pub fn load(path: &Path, params: &ModelParams) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 48 || &bytes[..8] != MAGIC {
            return Err(Error::Usage(format!(
                "{} is not an ensemble dump",
                path.display()
            )));
        }
        let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
        let (seed, rows, n, anti, hash) = (
            word(0),
            word(1) as usize,
            word(2) as usize,
            word(3),
            word(4),
        );
        if hash != params.hash64() {
            return Err(Error::Usage(
                "ensemble was generated with different parameters".into(),
            ));
        }
        if n != params.n_steps || seed != params.seed {
            return Err(Error::Usage(
                "ensemble header does not match parameters".into(),
            ));
        }
        let count = rows * n;
        if bytes.len() != 48 + 16 * count {
            return Err(Error::Usage("truncated ensemble dump".into()));
        }
        let floats: Vec<f64> = bytes[48..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let eps1 = PathMatrix {
            rows,
            cols: n,
            data: floats[..count].to_vec(),
        };
        let eps2 = PathMatrix {
            rows,
            cols: n,
            data: floats[count..].to_vec(),
        };
        let mut p = params.clone();
        p.n_paths = rows;
        Ok(from_increments(
            p,
            params.grid(),
            RngPolicy { seed },
            anti != 0,
            eps1,
            eps2,
        ))
    }
}

const MAGIC: &[u8; 8] = b"MFGENS01";

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, n_paths: usize, n_steps: usize) -> ModelParams {
        ModelParams {
            seed,
            n_paths,
            n_steps,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let p = small(42, 500, 5);
        let a = simulate_paths(&p, &p.grid()).unwrap();
        let b = simulate_paths(&p, &p.grid()).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&small(43, 500, 5), &p.grid()).unwrap();
        assert_ne!(a.eps1, c.eps1);
    }

    #[test]
    fn path_prefix_is_stable_in_n_paths() {
        let a = simulate_paths(&small(9, 100, 4), &GridSpec::new(5.0, 4)).unwrap();
        let b = simulate_paths(&small(9, 300, 4), &GridSpec::new(5.0, 4)).unwrap();
        assert_eq!(a.eps1.row(57), b.eps1.row(57));
        assert_eq!(a.eps2.row(99), b.eps2.row(99));
    }

    #[test]
    fn single_step_bridge() {
        let p = small(1, 200, 1);
        let e = simulate_paths(&p, &p.grid()).unwrap();
        for i in 0..e.len() {
            assert_eq!(e.b1.get(i, 1), 5f64.sqrt() * e.eps1.get(i, 0));
            assert_eq!(e.b2.get(i, 1), 5f64.sqrt() * e.eps2.get(i, 0));
        }
        e.check_invariants().unwrap();
    }

    #[test]
    fn growth_consistency() {
        let p = small(3, 300, 7);
        let e = simulate_paths(&p, &p.grid()).unwrap();
        for i in 0..e.len() {
            let end = e.log_e0t.get(i, 7).exp();
            for k in 0..=7 {
                let v = (e.log_e0t.get(i, k) + e.log_e_to_end.get(i, k)).exp();
                assert!((v - end).abs() <= 1e-10 * end);
            }
        }
    }

    #[test]
    fn memory_budget_is_enforced() {
        let p = small(3, 10_000, 20);
        match simulate_paths_with_budget(&p, &p.grid(), 1 << 20) {
            Err(Error::Resource { required, .. }) => {
                assert_eq!(required, ensemble_bytes(10_000, 20))
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn antithetic_cancels_pairwise() {
        let p = small(5, 400, 6);
        let e = simulate_paths(&p, &p.grid()).unwrap();
        let a = antithetic_extend(&e);
        assert_eq!(a.len(), 800);
        a.check_invariants().unwrap();
        for k in 0..=6 {
            let s: f64 = (0..400)
                .map(|i| a.b2.get(i, k) + a.b2.get(i + 400, k))
                .sum();
            assert_eq!(s, 0.0);
        }
        assert_eq!(a.eps1.row(10), e.eps1.row(10));
        assert_eq!(a.eps1.get(410, 2), -e.eps1.get(10, 2));
    }

    #[test]
    fn dump_and_load_round_trip() {
        let p = small(11, 64, 3);
        let e = simulate_paths(&p, &p.grid()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("ens.bin");
        e.dump(&file).unwrap();
        let back = PathEnsemble::load(&file, &p).unwrap();
        assert_eq!(back, e);
        let other = small(11, 64, 3);
        let other = ModelParams { mu: 0.07, ..other };
        assert!(PathEnsemble::load(&file, &other).is_err());
    }
}
