//! Configured runs: parameter sweeps, repeated seeds, and JSON/CSV output.
//!
//! A run is described by a single JSON document ([`RunConfig`]). Unknown
//! fields are rejected, and errors name the offending field path.
//!
//! Output layout (`out_dir`):
//!
//! * `report.json`: config echo, hashes, per-point estimates and traces.
//! * `trace.csv`: `q,alpha,H,L,G,residual,wall_ms`.
//! * `emissions.csv`: `path,psi_bar`.
//! * `curve.csv`: `k,t,expected_emission_direct,expected_emission_regression`.
//! * `prices.csv`: `rep,P1,P2`.
//!
//! With more than one sweep point the CSVs go to `point-NNN/` subdirectories.
//! Trace, emissions and curve come from the first repetition.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    expected_emission_curve, price_components, total_emissions, ExpectedEmissionCurve,
    RepeatedEstimate, Summary,
};
use crate::error::{Error, Result};
use crate::oracle::{oracle_solve, OracleSolution};
use crate::params::ModelParams;
use crate::paths::{
    antithetic_extend, simulate_paths_with_budget, PathEnsemble, DEFAULT_MEMORY_BUDGET,
};
use crate::regress::{CondExpModel, FeatureSpec};
use crate::solver::{solve, TraceRecord};

/// Values swept over; missing lists default to the model's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_pen: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_levels() -> usize {
    32
}
fn default_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub antithetic: bool,
    /// Also solve with the quadrature oracle (only when `n_steps ≤ 2`).
    #[serde(default)]
    pub oracle_crosscheck: bool,
    #[serde(default = "default_levels")]
    pub oracle_levels: usize,
    /// Write the first repetition's ensemble to `ensemble.bin`.
    #[serde(default)]
    pub ensemble_dump: bool,
    /// Reuse the same seeds at every sweep point.
    #[serde(default = "yes")]
    pub common_random_numbers: bool,
    #[serde(default = "default_budget")]
    pub memory_budget_bytes: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Param { field, reason } => Error::Config {
                path: field,
                message: reason,
            },
            other => other,
        };
        self.model.validate_at("model").map_err(as_config)?;
        self.features.validate_at("features").map_err(as_config)?;
        if self.repetitions < 1 {
            return Err(Error::Config {
                path: "repetitions".into(),
                message: "R ≥ 1".into(),
            });
        }
        for (name, list) in [
            ("gamma_pen", &self.sweep.gamma_pen),
            ("lambda", &self.sweep.lambda),
            ("rho", &self.sweep.rho),
        ] {
            if let Some(l) = list {
                if l.is_empty() {
                    return Err(Error::Config {
                        path: format!("sweep.{name}"),
                        message: "sweep lists must be nonempty".into(),
                    });
                }
            }
        }
        if !(1..=64).contains(&self.oracle_levels) {
            return Err(Error::Config {
                path: "oracle_levels".into(),
                message: "1 ≤ G ≤ 64".into(),
            });
        }
        for (i, p) in self.points().iter().enumerate() {
            p.validate_at(&format!("sweep[{i}]")).map_err(as_config)?;
        }
        Ok(())
    }

    /// Sweep points in `gamma_pen × lambda × rho` order.
    pub fn points(&self) -> Vec<ModelParams> {
        let m = &self.model;
        let gs = self
            .sweep
            .gamma_pen
            .clone()
            .unwrap_or_else(|| vec![m.gamma_pen]);
        let ls = self.sweep.lambda.clone().unwrap_or_else(|| vec![m.lambda]);
        let rs = self.sweep.rho.clone().unwrap_or_else(|| vec![m.rho]);
        let mut out = Vec::new();
        for &g in &gs {
            for &l in &ls {
                for &r in &rs {
                    out.push(ModelParams {
                        gamma_pen: g,
                        lambda: l,
                        rho: r,
                        ..m.clone()
                    });
                }
            }
        }
        out
    }

    /// Seed of repetition `rep` at sweep point `point`.
    pub fn seed_for(&self, point: usize, rep: usize) -> u64 {
        let offset = if self.common_random_numbers {
            rep
        } else {
            point * self.repetitions + rep
        };
        self.model.seed.wrapping_add(offset as u64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RepetitionReport {
    pub rep: usize,
    pub seed: u64,
    pub p1: f64,
    pub p2: f64,
    pub psi_bar_mean: f64,
    pub final_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Crosscheck {
    pub p1_rel: f64,
    pub p2_rel: f64,
    pub psi_bar_rel: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub gamma_pen: f64,
    pub lambda: f64,
    pub rho: f64,
    pub params_hash: String,
    pub p1: RepeatedEstimate,
    pub p2: RepeatedEstimate,
    pub psi_bar_mean: RepeatedEstimate,
    pub repetitions: Vec<RepetitionReport>,
    /// First repetition.
    pub trace: Vec<TraceRecord>,
    pub psi_bar: Summary,
    pub curve: ExpectedEmissionCurve,
    pub models: Vec<CondExpModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crosscheck: Option<Crosscheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub oracle: bool,
    pub config: RunConfig,
    pub params_hash: String,
    pub points: Vec<PointReport>,
    pub wall_ms: f64,
}

/// In-memory outputs of one sweep point that go to CSV.
#[derive(Debug, Clone)]
pub struct PointArtifacts {
    pub emissions: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: Vec<PointArtifacts>,
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

/// One seed at one parameter point.
pub struct SingleRun {
    pub ensemble: PathEnsemble,
    pub solution: crate::solver::Solution,
    pub p1: f64,
    pub p2: f64,
    pub emissions: Vec<f64>,
    pub curve: ExpectedEmissionCurve,
}

/// simulate → solve → analytics for one parameter record.
pub fn single_run(
    params: &ModelParams,
    features: &FeatureSpec,
    antithetic: bool,
    budget: u64,
) -> Result<SingleRun> {
    let mut ens = simulate_paths_with_budget(params, &params.grid(), budget)?;
    if antithetic {
        ens = antithetic_extend(&ens);
    }
    let solution = solve(&ens, features)?;
    let prices = price_components(&ens, &solution.models)?;
    let emissions = total_emissions(&ens, &solution.models)?.samples;
    let curve = expected_emission_curve(&ens, &solution.xi, &solution.models)?;
    Ok(SingleRun {
        ensemble: ens,
        p1: prices.p1,
        p2: prices.p2,
        emissions,
        curve,
        solution,
    })
}

fn point_dir(cfg: &RunConfig, idx: usize, total: usize) -> PathBuf {
    if total == 1 {
        cfg.out_dir.clone()
    } else {
        cfg.out_dir.join(format!("point-{idx:03}"))
    }
}

/// Runs every sweep point and repetition without writing anything.
pub fn run_in_memory(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let points = cfg.points();
    let mut reports = Vec::with_capacity(points.len());
    let mut artifacts = Vec::with_capacity(points.len());
    for (pi, base) in points.iter().enumerate() {
        let mut reps = Vec::with_capacity(cfg.repetitions);
        let mut first: Option<SingleRun> = None;
        for rep in 0..cfg.repetitions {
            let params = ModelParams {
                seed: cfg.seed_for(pi, rep),
                ..base.clone()
            };
            let run = single_run(
                &params,
                &cfg.features,
                cfg.antithetic,
                cfg.memory_budget_bytes,
            )?;
            let psi_mean = run.emissions.iter().sum::<f64>() / run.emissions.len() as f64;
            reps.push(RepetitionReport {
                rep,
                seed: params.seed,
                p1: run.p1,
                p2: run.p2,
                psi_bar_mean: psi_mean,
                final_residual: run.solution.final_residual(),
            });
            if rep == 0 {
                first = Some(run);
            }
        }
        let first = first.expect("at least one repetition");
        let (oracle, crosscheck) = if cfg.oracle_crosscheck && base.n_steps <= 2 {
            let (_, sol) = oracle_solve(base, base.n_steps, cfg.oracle_levels)?;
            let p1 = RepeatedEstimate::of(&reps.iter().map(|r| r.p1).collect::<Vec<_>>()).mean;
            let p2 = RepeatedEstimate::of(&reps.iter().map(|r| r.p2).collect::<Vec<_>>()).mean;
            let psi =
                RepeatedEstimate::of(&reps.iter().map(|r| r.psi_bar_mean).collect::<Vec<_>>()).mean;
            let cross = Crosscheck {
                p1_rel: (p1 - sol.p1) / sol.p1,
                p2_rel: (p2 - sol.p2) / sol.p2,
                psi_bar_rel: (psi - sol.mean_psi_bar) / sol.mean_psi_bar,
            };
            (Some(sol), Some(cross))
        } else {
            (None, None)
        };
        if cfg.ensemble_dump {
            let dir = point_dir(cfg, pi, points.len());
            std::fs::create_dir_all(&dir)?;
            first.ensemble.dump(&dir.join("ensemble.bin"))?;
        }
        let collect = |f: fn(&RepetitionReport) -> f64| {
            RepeatedEstimate::of(&reps.iter().map(f).collect::<Vec<_>>())
        };
        reports.push(PointReport {
            gamma_pen: base.gamma_pen,
            lambda: base.lambda,
            rho: base.rho,
            params_hash: hex(base.hash64()),
            p1: collect(|r| r.p1),
            p2: collect(|r| r.p2),
            psi_bar_mean: collect(|r| r.psi_bar_mean),
            trace: first.solution.trace.records.clone(),
            psi_bar: Summary::of(&first.emissions),
            curve: first.curve.clone(),
            models: first.solution.models.clone(),
            repetitions: reps,
            oracle,
            crosscheck,
        });
        artifacts.push(PointArtifacts {
            emissions: first.emissions,
        });
    }
    Ok(RunOutput {
        report: RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            oracle: false,
            config: cfg.clone(),
            params_hash: hex(cfg.model.hash64()),
            points: reports,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        },
        artifacts,
    })
}

/// Runs and writes `report.json` plus the CSV artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let out = run_in_memory(cfg)?;
    write_outputs(cfg, &out)?;
    Ok(out.report)
}

/// Seventeen significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn trace_csv(trace: &[TraceRecord]) -> Result<Vec<u8>> {
    csv_bytes(
        &["q", "alpha", "H", "L", "G", "residual", "wall_ms"],
        trace.iter().map(|r| {
            vec![
                r.q.to_string(),
                fmt_float(r.alpha),
                fmt_float(r.potential.entropy),
                fmt_float(r.potential.linear_quadratic),
                fmt_float(r.potential.total),
                fmt_float(r.residual),
                fmt_float(r.wall_ms),
            ]
        }),
    )
}

pub fn emissions_csv(samples: &[f64]) -> Result<Vec<u8>> {
    csv_bytes(
        &["path", "psi_bar"],
        samples
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), fmt_float(*v)]),
    )
}

pub fn curve_csv(curve: &ExpectedEmissionCurve) -> Result<Vec<u8>> {
    csv_bytes(
        &[
            "k",
            "t",
            "expected_emission_direct",
            "expected_emission_regression",
        ],
        (0..curve.t.len()).map(|k| {
            vec![
                k.to_string(),
                fmt_float(curve.t[k]),
                fmt_float(curve.direct[k]),
                fmt_float(curve.regression[k]),
            ]
        }),
    )
}

pub fn prices_csv(reps: &[RepetitionReport]) -> Result<Vec<u8>> {
    csv_bytes(
        &["rep", "P1", "P2"],
        reps.iter()
            .map(|r| vec![r.rep.to_string(), fmt_float(r.p1), fmt_float(r.p2)]),
    )
}

pub fn write_outputs(cfg: &RunConfig, out: &RunOutput) -> Result<()> {
    let total = out.report.points.len();
    for (pi, (point, art)) in out.report.points.iter().zip(&out.artifacts).enumerate() {
        let dir = point_dir(cfg, pi, total);
        write_atomic(&dir.join("trace.csv"), &trace_csv(&point.trace)?)?;
        write_atomic(&dir.join("emissions.csv"), &emissions_csv(&art.emissions)?)?;
        write_atomic(&dir.join("curve.csv"), &curve_csv(&point.curve)?)?;
        write_atomic(&dir.join("prices.csv"), &prices_csv(&point.repetitions)?)?;
    }
    let json = serde_json::to_vec_pretty(&out.report)?;
    write_atomic(&cfg.out_dir.join("report.json"), &json)?;
    Ok(())
}

/// `(γ, λ, ρ)` rows of the reference price table, in its layout order.
pub const TABLE_ROWS: [(f64, f64, f64); 11] = [
    (0.15, 0.0, 0.5),
    (0.3, 0.0, 0.5),
    (0.45, 0.0, 0.5),
    (0.3, 0.0, 0.5),
    (0.3, 0.2, 0.5),
    (0.3, 0.4, 0.5),
    (0.3, 0.4, 0.0),
    (0.3, 0.4, 0.25),
    (0.3, 0.4, 0.5),
    (0.3, 0.4, 0.75),
    (0.3, 0.4, 1.0),
];

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
    pub p1: RepeatedEstimate,
    pub p2: RepeatedEstimate,
    pub psi_bar_mean: RepeatedEstimate,
}

/// Price components for every distinct table row, `R` seeds each. Rows
/// come back in table layout; duplicated rows reuse the same runs.
pub fn reproduce_table_in_memory(
    cfg: &RunConfig,
    rows: &[(f64, f64, f64)],
) -> Result<Vec<TableRow>> {
    cfg.validate()?;
    let mut done: Vec<TableRow> = Vec::new();
    let mut out = Vec::with_capacity(rows.len());
    for &(g, l, r) in rows {
        if let Some(prev) = done
            .iter()
            .find(|x| (x.gamma, x.lambda, x.rho) == (g, l, r))
        {
            out.push(prev.clone());
            continue;
        }
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        let mut psi = Vec::new();
        for rep in 0..cfg.repetitions {
            let params = ModelParams {
                gamma_pen: g,
                lambda: l,
                rho: r,
                seed: cfg.seed_for(done.len(), rep),
                ..cfg.model.clone()
            };
            params.validate()?;
            let run = single_run(
                &params,
                &cfg.features,
                cfg.antithetic,
                cfg.memory_budget_bytes,
            )?;
            p1.push(run.p1);
            p2.push(run.p2);
            psi.push(run.emissions.iter().sum::<f64>() / run.emissions.len() as f64);
        }
        let row = TableRow {
            gamma: g,
            lambda: l,
            rho: r,
            p1: RepeatedEstimate::of(&p1),
            p2: RepeatedEstimate::of(&p2),
            psi_bar_mean: RepeatedEstimate::of(&psi),
        };
        done.push(row.clone());
        out.push(row);
    }
    Ok(out)
}

pub fn table_csv(rows: &[TableRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &["gamma", "lambda", "rho", "P1", "P1_se", "P2", "P2_se"],
        rows.iter().map(|r| {
            vec![
                fmt_float(r.gamma),
                fmt_float(r.lambda),
                fmt_float(r.rho),
                fmt_float(r.p1.mean),
                fmt_float(r.p1.se),
                fmt_float(r.p2.mean),
                fmt_float(r.p2.se),
            ]
        }),
    )
}

/// Runs the table rows and writes `table.csv` to `out_dir`.
pub fn reproduce_table(cfg: &RunConfig) -> Result<Vec<TableRow>> {
    let rows = reproduce_table_in_memory(cfg, &TABLE_ROWS)?;
    write_atomic(&cfg.out_dir.join("table.csv"), &table_csv(&rows)?)?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub version: String,
    pub oracle: bool,
    pub config: RunConfig,
    pub params_hash: String,
    pub n_steps: usize,
    pub points: Vec<OracleSolution>,
    pub wall_ms: f64,
}

/// Oracle solve at every sweep point with `n` steps; writes
/// `oracle-n{n}/report.json` under `out_dir`.
pub fn run_oracle(cfg: &RunConfig, n: usize) -> Result<OracleReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut points = Vec::new();
    for p in cfg.points() {
        let (_, sol) = oracle_solve(&p, n, cfg.oracle_levels)?;
        points.push(sol);
    }
    let report = OracleReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        oracle: true,
        config: cfg.clone(),
        params_hash: hex(cfg.model.hash64()),
        n_steps: n,
        points,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    write_atomic(
        &cfg.out_dir.join(format!("oracle-n{n}")).join("report.json"),
        &serde_json::to_vec_pretty(&report)?,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_parameter_table() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        let m = &cfg.model;
        assert_eq!(
            (
                m.horizon,
                m.gamma_star,
                m.sigma0,
                m.mu,
                m.v_bar,
                m.c2_bar,
                m.c_bar
            ),
            (5.0, 0.5, 0.1, 0.05, 1.0, 1.0, 0.7)
        );
        assert_eq!((m.n_steps, m.n_paths, m.p, m.n_iter), (20, 50_000, 2.0, 10));
        assert_eq!(cfg.points().len(), 1);
    }

    #[test]
    fn unknown_fields_are_rejected_with_path() {
        match RunConfig::from_json_str(r#"{"model": {"gama_pen": 0.3}}"#) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "model.gama_pen");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            RunConfig::from_json_str(r#"{"repetitons": 3}"#),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn invalid_values_name_the_field() {
        match RunConfig::from_json_str(r#"{"model": {"n_paths": 1}}"#) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "model.n_paths");
                assert!(message.contains("N ≥ 2"));
            }
            other => panic!("{other:?}"),
        }
        match RunConfig::from_json_str(r#"{"sweep": {"rho": []}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "sweep.rho"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_json_str(r#"{"model": {"n_steps": "x"}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "model.n_steps"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_order_and_seeds() {
        let cfg = RunConfig::from_json_str(
            r#"{"repetitions": 3, "sweep": {"gamma_pen": [0.1, 0.2], "rho": [0.0, 1.0]}}"#,
        )
        .unwrap();
        let pts: Vec<_> = cfg.points().iter().map(|p| (p.gamma_pen, p.rho)).collect();
        assert_eq!(pts, vec![(0.1, 0.0), (0.1, 1.0), (0.2, 0.0), (0.2, 1.0)]);
        assert_eq!(cfg.seed_for(3, 2), 44);
        let crn = RunConfig {
            common_random_numbers: false,
            ..cfg
        };
        assert_eq!(crn.seed_for(1, 2), 42 + 5);
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-6.928).parse::<f64>().unwrap(), -6.928);
    }

    #[test]
    fn config_echo_round_trips() {
        let cfg =
            RunConfig::from_json_str(r#"{"model": {"lambda": 0.4}, "repetitions": 2}"#).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json_str(&text).unwrap(), cfg);
    }
}
