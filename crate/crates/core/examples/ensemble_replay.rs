//! Dump a path ensemble to disk, reload it and check that the solver gives
//! bit-identical prices on the replayed noise.
//!
//!     cargo run --release --example ensemble_replay

use mfg_decarb::analytics::price_components;
use mfg_decarb::paths::{simulate_paths, PathEnsemble};
use mfg_decarb::{solver, FeatureSpec, ModelParams};

fn main() -> mfg_decarb::Result<()> {
    let params = ModelParams {
        gamma_pen: 0.3,
        lambda: 0.4,
        n_paths: 10_000,
        ..Default::default()
    };
    let dir = tempfile::tempdir()?;
    let file = dir.path().join("ensemble.bin");

    let ens = simulate_paths(&params, &params.grid())?;
    ens.dump(&file)?;
    let replay = PathEnsemble::load(&file, &params)?;

    let spec = FeatureSpec::default();
    let a = price_components(&ens, &solver::solve(&ens, &spec)?.models)?;
    let b = price_components(&replay, &solver::solve(&replay, &spec)?.models)?;
    println!("original P1 {:.17} P2 {:.17}", a.p1, a.p2);
    println!("replayed P1 {:.17} P2 {:.17}", b.p1, b.p2);
    println!("identical: {}", a == b);
    Ok(())
}
