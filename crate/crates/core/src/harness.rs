//! Experiment manifests, sweeps over an accuracy grid, and scaling fits.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::protocol::{derive_seed, grad_norm, run_instance, run_with, Control, Trace};
use crate::solvers::SolverConfig;
use crate::transforms::{build_instance, Instance, InstanceSpec};

/// Environment variable that caps the sweep's worker threads.
pub const THREADS_ENV: &str = "ZEROCHAIN_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    /// Instance template; `eps` and `seed` are overwritten per run.
    pub instance: InstanceSpec,
    pub solver: SolverConfig,
    /// Strictly decreasing accuracies.
    pub eps_grid: Vec<f64>,
    pub trials: u64,
    pub master_seed: u64,
    /// Directory receiving `results.csv` and `summary.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Overrides the solver's own round cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u64>,
}

impl ExperimentManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.eps_grid.is_empty() {
            return bad("eps_grid is empty".into());
        }
        if self.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps_grid entries must be positive and finite".into());
        }
        if self.eps_grid.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps_grid must be strictly decreasing".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.max_rounds == Some(0) {
            return bad("max_rounds must be at least 1".into());
        }
        self.solver.validate()
    }

    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn round_cap(&self) -> u64 {
        self.max_rounds.unwrap_or_else(|| self.solver.max_rounds())
    }

    /// Instance spec for one cell of the sweep.
    pub fn spec_for(&self, eps: f64, trial: u64) -> InstanceSpec {
        let mut spec = self.instance.clone();
        spec.eps = eps;
        spec.seed = self.trial_seed(eps, trial);
        spec
    }

    pub fn trial_seed(&self, eps: f64, trial: u64) -> u64 {
        derive_seed(derive_seed(self.master_seed, eps.to_bits()), trial)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub eps: f64,
    pub trial: u64,
    pub seed: u64,
    /// Oracle queries until the slot-1 point was eps-stationary; `None` when
    /// the run hit its round cap first.
    pub queries: Option<u64>,
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSummary {
    pub eps: f64,
    pub t: Option<usize>,
    pub p: Option<f64>,
    /// Rounds the lower bound forces, when the instance has a scaling.
    pub threshold_rounds: Option<f64>,
    /// Censored runs count as infinite; `None` if at least half are censored.
    pub median_queries: Option<f64>,
    pub censored: u64,
    pub trials: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub manifest: ExperimentManifest,
    pub version: String,
    pub manifest_sha256: String,
    pub per_eps: Vec<EpsSummary>,
    /// `log(median queries)` against `log(1/eps)`.
    pub fit: Option<ScalingFit>,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<TrialRow>,
    pub summary: SweepSummary,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_scaling(x: &[f64], y: &[f64]) -> Result<ScalingFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Argument("need at least two points to fit".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Argument("x values are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(ScalingFit { slope, intercept, stderr, points: n })
}

/// Runs one trial, stopping at the first eps-stationary slot-1 point.
pub fn run_trial(manifest: &ExperimentManifest, eps: f64, trial: u64) -> Result<TrialRow> {
    let spec = manifest.spec_for(eps, trial);
    let instance = build_instance(&spec)?;
    let mut alg = manifest.solver.build(&spec)?;
    if alg.batch_size() != spec.k {
        return Err(Error::DimensionMismatch { expected: spec.k, got: alg.batch_size() });
    }
    let oracle = instance.oracle.as_ref();
    let mut queries = None;
    let mut last = f64::NAN;
    let mut err = None;
    run_with(alg.as_mut(), oracle, manifest.round_cap(), spec.seed, |t, round| {
        match grad_norm(oracle, &round.points[0]) {
            Ok(g) => {
                last = g;
                if g <= eps {
                    queries = Some(t * spec.k as u64);
                    return Control::Halt;
                }
                Control::Continue
            }
            Err(e) => {
                err = Some(e);
                Control::Halt
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(TrialRow { eps, trial, seed: spec.seed, queries, final_grad_norm: last })
}

/// Full trace of one trial, for replay and inspection.
pub fn trace_trial(manifest: &ExperimentManifest, eps: f64, trial: u64) -> Result<(Instance, Trace)> {
    let spec = manifest.spec_for(eps, trial);
    let instance = build_instance(&spec)?;
    let mut alg = manifest.solver.build(&spec)?;
    let trace = run_instance(alg.as_mut(), &instance, manifest.round_cap(), spec.seed)?;
    Ok((instance, trace))
}

/// Rebuilds the instance recorded in `trace`, re-runs `solver` with the same
/// run seed and round count, and compares every round bit for bit.
pub fn replay_matches(trace: &Trace, solver: &SolverConfig) -> Result<bool> {
    let spec = InstanceSpec::from_canonical_str(&trace.manifest)?;
    let instance = build_instance(&spec)?;
    let mut alg = solver.build(&spec)?;
    let again = run_instance(alg.as_mut(), &instance, trace.rounds.len() as u64, trace.run_seed)?;
    Ok(again.to_text() == trace.to_text())
}

fn median_with_censoring(values: &[Option<u64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().map(|q| q.map_or(f64::INFINITY, |q| q as f64)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| Error::Argument(format!("{THREADS_ENV}={v:?} is not a count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Argument(e.to_string()))
}

/// Runs every `(eps, trial)` cell. Rows come back in grid order regardless
/// of scheduling.
pub fn sweep(manifest: &ExperimentManifest) -> Result<SweepResult> {
    manifest.validate()?;
    let start = Instant::now();
    let cells: Vec<(f64, u64)> =
        manifest.eps_grid.iter().flat_map(|e| (0..manifest.trials).map(move |t| (*e, t))).collect();
    let rows: Vec<TrialRow> = thread_pool()?
        .install(|| cells.par_iter().map(|(e, t)| run_trial(manifest, *e, *t)).collect::<Result<_>>())?;

    let mut per_eps = Vec::new();
    for &eps in &manifest.eps_grid {
        let qs: Vec<Option<u64>> = rows.iter().filter(|r| r.eps == eps).map(|r| r.queries).collect();
        let scale = build_instance(&manifest.spec_for(eps, 0))?.scale;
        per_eps.push(EpsSummary {
            eps,
            t: scale.map(|s| s.t),
            p: scale.map(|s| s.p),
            threshold_rounds: scale.map(|s| s.rounds),
            median_queries: median_with_censoring(&qs),
            censored: qs.iter().filter(|q| q.is_none()).count() as u64,
            trials: qs.len() as u64,
        });
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = per_eps
        .iter()
        .filter_map(|s| s.median_queries.map(|m| ((1.0 / s.eps).ln(), m.ln())))
        .unzip();
    let fit = fit_scaling(&lx, &ly).ok();
    let summary = SweepSummary {
        manifest: manifest.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        manifest_sha256: manifest.sha256(),
        per_eps,
        fit,
        runtime_secs: start.elapsed().as_secs_f64(),
    };
    Ok(SweepResult { rows, summary })
}

pub fn write_csv(rows: &[TrialRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eps", "trial", "seed", "queries", "final_grad_norm"])?;
    for r in rows {
        w.write_record([
            r.eps.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.queries.map(|q| q.to_string()).unwrap_or_default(),
            r.final_grad_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| Error::Argument(format!("bad number {:?} in column {i}", field(i))))
        };
        let int = |i: usize| -> Result<u64> {
            field(i).parse().map_err(|_| Error::Argument(format!("bad integer {:?} in column {i}", field(i))))
        };
        out.push(TrialRow {
            eps: num(0)?,
            trial: int(1)?,
            seed: int(2)?,
            queries: if field(3).is_empty() { None } else { Some(int(3)?) },
            final_grad_norm: num(4)?,
        });
    }
    Ok(out)
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn write_outputs(result: &SweepResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&result.rows, &dir.join("results.csv"))?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)?)?;
    Ok(())
}
