//! Executable checks for every bound the constructions claim.
//!
//! A suite samples points (or pairs of points) with a deterministic
//! counter-based generator, evaluates one quantity per clause and compares
//! the worst value seen against the certified bound. Sampled Lipschitz and
//! mean-squared-smoothness ratios can only disprove a bound; a pass is
//! evidence, not a certificate.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{progress, progress_computed, theta, theta_gradient, ChainFunction, CONSTANTS};
use crate::error::{Error, Result};
use crate::kernels::{eval_kernel, Kernel, KernelBoundTable};
use crate::oracles::{
    closed_form_moments, closed_form_mss, f_stat_value, g_basic, g_coord, g_smooth, g_stat, gauss_hermite_moments,
    seed_space_size, zeta, ActiveOracle, ChainEstimator, ChainOracle, Permutation, QuadOracle, StochasticOracle,
};
use crate::protocol::{derive_seed, run_with, Control, SeedStream};
use crate::solvers::{ActiveWalker, GreedyWalker};
use crate::transforms::{sample_rotation, soft_project, CompressedInstance};

/// Slack allowed on continuous bounds.
pub const BOUND_TOL: f64 = 1e-9;

/// Probabilities the oracle suites cycle through.
const P_GRID: [f64; 4] = [0.02, 0.1, 0.3, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub check: String,
    pub anchor: String,
    pub samples: u64,
    pub worst: f64,
    pub bound: f64,
    pub pass: bool,
    pub runtime_secs: f64,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<12} {:<44} worst={:<14.6e} bound={:<12.6e} n={} ({:.2}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.anchor,
            self.check,
            self.worst,
            self.bound,
            self.samples,
            self.runtime_secs
        )
    }
}

struct Clock(Instant);

impl Clock {
    fn start() -> Self {
        Clock(Instant::now())
    }

    /// Upper-bound clause: passes when `worst <= bound + BOUND_TOL`.
    fn upper(&self, anchor: &str, check: &str, samples: u64, worst: f64, bound: f64) -> AuditReport {
        AuditReport {
            check: check.into(),
            anchor: anchor.into(),
            samples,
            worst,
            bound,
            pass: worst <= bound + BOUND_TOL,
            runtime_secs: self.0.elapsed().as_secs_f64(),
        }
    }

    /// Exact clause: `worst` is a violation count and must be zero.
    fn exact(&self, anchor: &str, check: &str, samples: u64, violations: u64) -> AuditReport {
        AuditReport {
            check: check.into(),
            anchor: anchor.into(),
            samples,
            worst: violations as f64,
            bound: 0.0,
            pass: violations == 0,
            runtime_secs: self.0.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LemmaId {
    Lemma2,
    Obs2,
    ObsA1,
    Lemma3,
    Lemma4,
    Lemma7,
    Lemma8,
    LemmaB1,
    LemmaA1,
    Quad,
}

impl LemmaId {
    pub const ALL: [LemmaId; 10] = [
        LemmaId::Lemma2,
        LemmaId::Obs2,
        LemmaId::ObsA1,
        LemmaId::Lemma3,
        LemmaId::Lemma4,
        LemmaId::Lemma7,
        LemmaId::Lemma8,
        LemmaId::LemmaB1,
        LemmaId::LemmaA1,
        LemmaId::Quad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LemmaId::Lemma2 => "lemma2",
            LemmaId::Obs2 => "obs2",
            LemmaId::ObsA1 => "obsa1",
            LemmaId::Lemma3 => "lemma3",
            LemmaId::Lemma4 => "lemma4",
            LemmaId::Lemma7 => "lemma7",
            LemmaId::Lemma8 => "lemma8",
            LemmaId::LemmaB1 => "lemmab1",
            LemmaId::LemmaA1 => "lemmaa1",
            LemmaId::Quad => "quad",
        }
    }

    /// Sample count used when the caller does not give one.
    pub fn default_budget(self) -> u64 {
        match self {
            LemmaId::Lemma2 | LemmaId::Obs2 | LemmaId::ObsA1 | LemmaId::Lemma3 | LemmaId::Lemma4 | LemmaId::Lemma8 => {
                1_000_000
            }
            LemmaId::Lemma7 | LemmaId::LemmaB1 | LemmaId::LemmaA1 => 100_000,
            LemmaId::Quad => 10_000,
        }
    }
}

impl FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        LemmaId::ALL
            .into_iter()
            .find(|id| id.name() == key)
            .ok_or_else(|| Error::Argument(format!("unknown suite {s:?}")))
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ------------------------------------------------------------ sampling

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

const LANDMARKS: [f64; 9] = [0.0, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0, 0.375, 2.0];

/// A chain probe in `[-3, 3]^T`. Half the probes are uniform; the rest have
/// a random prefix and a tail that is zero or within `[-1/4, 1/4]`, so the
/// zero-chain and large-gradient clauses are actually exercised. Some
/// entries snap near kernel landmarks.
pub fn chain_probe(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    let kind = rng.random_range(0..8u8);
    let mut x: Vec<f64> = (0..t).map(|_| uniform(rng, -3.0, 3.0)).collect();
    if kind < 4 {
        return x;
    }
    let m = rng.random_range(0..=t);
    for xi in x.iter_mut().skip(m) {
        *xi = if kind == 4 { 0.0 } else { uniform(rng, -0.25, 0.25) };
    }
    if kind == 7 {
        for xi in x.iter_mut().take(m) {
            *xi = LANDMARKS[rng.random_range(0..LANDMARKS.len())] + uniform(rng, -1e-3, 1e-3);
        }
    }
    x
}

/// A pair `(x, y)` with `x` in `[-1, 1]^T` (or a structured probe) and
/// `|x - y|` log-uniform in `[1e-4, 1]`.
pub fn sample_pair(rng: &mut ChaCha8Rng, t: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = if rng.random::<bool>() {
        (0..t).map(|_| uniform(rng, -1.0, 1.0)).collect()
    } else {
        chain_probe(rng, t).into_iter().map(|v| v / 3.0 * 1.5).collect()
    };
    let dir: Vec<f64> = (0..t).map(|_| uniform(rng, -1.0, 1.0)).collect();
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let r = 10f64.powf(uniform(rng, -4.0, 0.0));
    let y = x.iter().zip(&dir).map(|(a, d)| a + r * d / n).collect();
    (x, y)
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Parallel map over `0..n` with a per-index generator, reduced by `max`.
fn par_max<F>(n: u64, seed: u64, f: F) -> f64
where
    F: Fn(&mut ChaCha8Rng, u64) -> f64 + Sync,
{
    let stream = SeedStream::new(seed);
    (0..n)
        .into_par_iter()
        .map(|i| f(&mut stream.round_rng(i), i))
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Parallel map over `0..n`, summed.
fn par_count<F>(n: u64, seed: u64, f: F) -> u64
where
    F: Fn(&mut ChaCha8Rng, u64) -> u64 + Sync,
{
    let stream = SeedStream::new(seed);
    (0..n).into_par_iter().map(|i| f(&mut stream.round_rng(i), i)).sum()
}

// ------------------------------------------------------------ fd

/// `max |fd - analytic| / (1 + |analytic|)` over points and coordinates,
/// using central differences with step `h`.
pub fn fd_gradient_check<V, G>(value: V, gradient: G, points: &[Vec<f64>], h: f64) -> f64
where
    V: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    points
        .par_iter()
        .map(|x| {
            let g = gradient(x);
            let mut xp = x.clone();
            let mut worst = 0.0f64;
            for i in 0..x.len() {
                xp[i] = x[i] + h;
                let up = value(&xp);
                xp[i] = x[i] - h;
                let dn = value(&xp);
                xp[i] = x[i];
                let fd = (up - dn) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs() / (1.0 + g[i].abs()));
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

// ------------------------------------------------------------ suites

pub fn lemma_suite(id: LemmaId, budget: u64, rng_seed: u64) -> Result<Vec<AuditReport>> {
    if budget == 0 {
        return Err(Error::Argument("budget must be positive".into()));
    }
    Ok(match id {
        LemmaId::Lemma2 => lemma2(25, budget, rng_seed),
        LemmaId::Obs2 => obs2(budget),
        LemmaId::ObsA1 => obs_a1(budget),
        LemmaId::Lemma3 => lemma3(12, budget, rng_seed, CONSTANTS.varsigma),
        LemmaId::Lemma4 => lemma4(12, budget, rng_seed),
        LemmaId::Lemma7 => lemma7(8, 32, budget, rng_seed)?,
        LemmaId::Lemma8 => lemma8(10, budget, rng_seed),
        LemmaId::LemmaB1 => lemma_b1(10, budget, rng_seed),
        LemmaId::LemmaA1 => lemma_a1(6, budget, rng_seed),
        LemmaId::Quad => quad_suite(4, budget, rng_seed)?,
    })
}

/// Every suite at its default budget.
pub fn run_all(rng_seed: u64) -> Result<Vec<AuditReport>> {
    let mut out = Vec::new();
    for id in LemmaId::ALL {
        out.extend(lemma_suite(id, id.default_budget(), rng_seed)?);
    }
    Ok(out)
}

/// The five clauses on `F_T`: gap, gradient sup-norm, smoothness (sampled
/// pairs and Hessian row sums), zero-chain and large gradient.
pub fn lemma2(t: usize, samples: u64, seed: u64) -> Vec<AuditReport> {
    let a = "lemma2";
    let f = ChainFunction::new(t).expect("t >= 1");
    let c = CONSTANTS;
    let f0 = f.value_unchecked(&vec![0.0; t]);

    let clock = Clock::start();
    let min_value = -par_max(samples, seed, |rng, _| -f.value_unchecked(&chain_probe(rng, t)));
    let gap = clock.upper(a, "gap F(0) - min over probes <= 12T", samples, f0 - min_value, c.delta0 * t as f64);

    let clock = Clock::start();
    let worst = par_max(samples, seed, |rng, _| {
        f.gradient_unchecked(&chain_probe(rng, t)).iter().fold(0.0, |m, g| m.max(g.abs()))
    });
    let sup = clock.upper(a, "gradient sup-norm <= 23", samples, worst, c.grad_inf);

    let clock = Clock::start();
    let pairs = (samples / 10).max(1);
    let ratio = par_max(pairs, derive_seed(seed, 1), |rng, _| {
        let (x, y) = sample_pair(rng, t);
        dist(&f.gradient_unchecked(&x), &f.gradient_unchecked(&y)) / dist(&x, &y)
    });
    let rows = par_max(samples, seed, |rng, _| {
        let x = chain_probe(rng, t);
        let (d, o) = f.hessian_bands(&x).expect("dimension matches");
        let dmax = d.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let omax = o.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        dmax + 2.0 * omax
    });
    let smooth = clock.upper(a, "gradient Lipschitz (pairs, Hessian rows) <= 152", samples + pairs, ratio.max(rows), c.lip1);

    let clock = Clock::start();
    let zc = par_count(samples, seed, |rng, _| {
        let x = chain_probe(rng, t);
        u64::from(progress_computed(&f.gradient_unchecked(&x)) > progress(&x, 0.5) + 1)
    });
    let zero_chain = clock.exact(a, "zero-chain prog0(grad) <= prog_1/2 + 1", samples, zc);

    let clock = Clock::start();
    let lg = par_count(samples, seed, |rng, _| {
        let x = chain_probe(rng, t);
        let j = progress(&x, 1.0);
        if j < t {
            u64::from(f.gradient_unchecked(&x)[j].abs() <= c.large_grad)
        } else {
            0
        }
    });
    let large = clock.exact(a, "large gradient |grad_{j+1}| > 1", samples, lg);

    vec![gap, sup, smooth, zero_chain, large]
}

fn grid(lo: f64, hi: f64, n: u64) -> impl ParallelIterator<Item = f64> {
    (0..n).into_par_iter().map(move |k| lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64)
}

fn grid_max(lo: f64, hi: f64, n: u64, f: impl Fn(f64) -> f64 + Sync + Send) -> f64 {
    grid(lo, hi, n).map(f).reduce(|| f64::NEG_INFINITY, f64::max)
}

/// `Gamma` plateaus and derivative bounds on dense grids.
pub fn obs2(n: u64) -> Vec<AuditReport> {
    let a = "obs2";
    let b = KernelBoundTable::standard();
    let n = n.max(2);
    let k = |o, t| eval_kernel(Kernel::Gamma, o, t).expect("finite grid");
    let clock = Clock::start();
    let bad: u64 = grid(-5.0, 5.0, n)
        .chain(grid(0.0, 1.0, n))
        .map(|t| {
            let v = k(0, t);
            let d = k(1, t);
            let lo = t <= 0.25 && (v != 0.0 || d != 0.0);
            let hi = t >= 0.5 && (v != 1.0 || d != 0.0);
            u64::from(lo || hi)
        })
        .sum();
    let plateau = clock.exact(a, "plateaus Gamma=0 below 1/4, 1 above 1/2", 2 * n, bad);

    let clock = Clock::start();
    let neg = -grid_max(-5.0, 5.0, n, |t| -k(1, t)).min(-grid_max(0.0, 1.0, n, |t| -k(1, t)));
    let mono = clock.upper(a, "Gamma' >= 0 (worst -Gamma')", 2 * n, -neg.min(0.0), 0.0);

    let clock = Clock::start();
    let d1 = grid_max(0.0, 1.0, n, |t| k(1, t)).max(grid_max(-5.0, 5.0, n, |t| k(1, t)));
    let d1r = clock.upper(a, "Gamma' <= 6", 2 * n, d1, b.gamma_d1_max);

    let clock = Clock::start();
    let d2 = grid_max(0.0, 1.0, n, |t| k(2, t).abs()).max(grid_max(-5.0, 5.0, n, |t| k(2, t).abs()));
    let d2r = clock.upper(a, "|Gamma''| <= 128", 2 * n, d2, b.gamma_d2_max);

    vec![plateau, mono, d1r, d2r]
}

/// Bounds on `Psi`, `Phi` and their first two derivatives over `[-5, 5]`.
pub fn obs_a1(n: u64) -> Vec<AuditReport> {
    let a = "obsa1";
    let b = KernelBoundTable::standard();
    let n = n.max(2);
    let mut out = Vec::new();
    for kernel in [Kernel::Psi, Kernel::Phi] {
        for order in 0..=2u8 {
            let clock = Clock::start();
            let worst = grid_max(-5.0, 5.0, n, |t| eval_kernel(kernel, order, t).expect("finite").abs());
            let bound = b.bound(kernel, order).expect("certified");
            let name = format!("|{}{}| <= {bound:.6}", kernel.name(), "'".repeat(order as usize));
            out.push(clock.upper(a, &name, n, worst, bound));
        }
        let clock = Clock::start();
        let neg = grid_max(-5.0, 5.0, n, |t| {
            let v = eval_kernel(kernel, 0, t).expect("finite");
            let d = eval_kernel(kernel, 1, t).expect("finite");
            (-v).max(-d)
        });
        out.push(clock.upper(a, &format!("{} and {}' non-negative", kernel.name(), kernel.name()), n, neg.max(0.0), 0.0));
    }
    out
}

/// Clause on a Bernoulli chain oracle: worst `|mean - grad F|_inf`.
fn unbiased_residual(o: &dyn StochasticOracle, x: &[f64]) -> f64 {
    let m = closed_form_moments(o, x).expect("enumerable");
    max_abs_diff(&m.mean, &o.gradient(x).expect("dimension matches"))
}

/// Definition-1 violations of a Bernoulli chain estimator at `x`.
fn zero_chain_violations(est: impl Fn(&[f64], bool) -> Vec<f64>, x: &[f64]) -> u64 {
    let gate = progress(x, 0.25);
    let off = progress_computed(&est(x, false)) > gate;
    let on = progress_computed(&est(x, true)) > gate + 1;
    u64::from(off) + u64::from(on)
}

fn p_of(i: u64) -> f64 {
    P_GRID[(i % P_GRID.len() as u64) as usize]
}

/// `g_basic`: zero chain, unbiased, variance at most `varsigma^2 (1-p)/p`.
/// `varsigma` is a parameter so corrupted certificates can be tested.
pub fn lemma3(t: usize, samples: u64, seed: u64, varsigma: f64) -> Vec<AuditReport> {
    let a = "lemma3";
    let f = ChainFunction::new(t).expect("t >= 1");
    let moments_n = samples.min(1000);

    let clock = Clock::start();
    let zc = par_count(samples, seed, |rng, i| {
        let x = chain_probe(rng, t);
        let p = p_of(i);
        let mut v = zero_chain_violations(|x, z| g_basic(&f, p, x, z).expect("valid"), &x);
        let bits: Vec<bool> = (0..t).map(|_| rng.random::<bool>()).collect();
        let g = g_coord(&f, p, &x, &bits).expect("valid");
        let gate = progress(&x, 0.25);
        let coord_bad = progress_computed(&g) > gate + 1
            || g.iter().enumerate().skip(gate).any(|(j, gj)| !bits[j] && gj.abs() > crate::chain::ZERO_TOL);
        v += u64::from(coord_bad);
        v
    });
    let zero_chain = clock.exact(a, "probability-p zero-chain (g_basic, g_coord)", samples, zc);

    let clock = Clock::start();
    let oracles: Vec<ChainOracle> =
        P_GRID.iter().map(|p| ChainOracle::new(t, *p, ChainEstimator::Basic).expect("valid")).collect();
    let res = par_max(moments_n, derive_seed(seed, 3), |rng, i| {
        unbiased_residual(&oracles[(i % 4) as usize], &chain_probe(rng, t))
    });
    let unbiased = clock.upper(a, "unbiased: |E g - grad F|_inf <= 1e-8", moments_n, res, 1e-8);

    let clock = Clock::start();
    let var = par_max(moments_n, derive_seed(seed, 3), |rng, i| {
        let o = &oracles[(i % 4) as usize];
        let m = closed_form_moments(o, &chain_probe(rng, t)).expect("enumerable");
        m.variance * o.p() / (1.0 - o.p())
    });
    let name = format!("variance * p/(1-p) <= {varsigma}^2");
    let variance = clock.upper(a, &name, moments_n, var, varsigma * varsigma);

    vec![zero_chain, unbiased, variance]
}

/// `g_smooth`: zero chain, unbiased, variance and mean-squared smoothness.
pub fn lemma4(t: usize, samples: u64, seed: u64) -> Vec<AuditReport> {
    let a = "lemma4";
    let c = CONSTANTS;
    let f = ChainFunction::new(t).expect("t >= 1");
    let moments_n = samples.min(1000);
    let pairs = (samples / 10).max(1);
    let oracles: Vec<ChainOracle> =
        P_GRID.iter().map(|p| ChainOracle::new(t, *p, ChainEstimator::Smooth).expect("valid")).collect();

    let clock = Clock::start();
    let zc = par_count(samples, seed, |rng, i| {
        let p = p_of(i);
        zero_chain_violations(|x, z| g_smooth(&f, p, x, z).expect("valid"), &chain_probe(rng, t))
    });
    let zero_chain = clock.exact(a, "probability-p zero-chain (g_smooth)", samples, zc);

    let clock = Clock::start();
    let res = par_max(moments_n, derive_seed(seed, 3), |rng, i| {
        unbiased_residual(&oracles[(i % 4) as usize], &chain_probe(rng, t))
    });
    let unbiased = clock.upper(a, "unbiased: |E g - grad F|_inf <= 1e-8", moments_n, res, 1e-8);

    let clock = Clock::start();
    let var = par_max(moments_n, derive_seed(seed, 3), |rng, i| {
        let o = &oracles[(i % 4) as usize];
        closed_form_moments(o, &chain_probe(rng, t)).expect("enumerable").variance * o.p() / (1.0 - o.p())
    });
    let variance = clock.upper(a, "variance * p/(1-p) <= 23^2", moments_n, var, c.varsigma.powi(2));

    let clock = Clock::start();
    let mss = par_max(pairs, derive_seed(seed, 4), |rng, i| {
        let o = &oracles[(i % 4) as usize];
        let (x, y) = sample_pair(rng, t);
        closed_form_mss(o, &x, &y).expect("enumerable") * o.p() / dist(&x, &y).powi(2)
    });
    let mss = clock.upper(a, "mean-squared smoothness * p <= 328^2", pairs, mss, c.lip1_bar.powi(2));

    vec![zero_chain, unbiased, variance, mss]
}

fn compressed_probe(rng: &mut ChaCha8Rng, u: &crate::transforms::RotationMatrix) -> Vec<f64> {
    let y = chain_probe(rng, u.t());
    let mut x = u.lift(&y);
    let noise = if rng.random::<bool>() { 0.0 } else { 0.5 };
    for xi in x.iter_mut() {
        *xi += noise * uniform(rng, -1.0, 1.0);
    }
    x
}

/// The compressed instance: gap, smoothness, unbiasedness, variance and
/// mean-squared smoothness.
pub fn lemma7(t: usize, d: usize, samples: u64, seed: u64) -> Result<Vec<AuditReport>> {
    let a = "lemma7";
    let c = CONSTANTS;
    let u = Arc::new(sample_rotation(d, t, seed)?);
    let inst: Vec<CompressedInstance> =
        P_GRID.iter().map(|p| CompressedInstance::new(u.clone(), *p)).collect::<Result<_>>()?;
    let moments_n = samples.min(1000);
    let pairs = samples;

    let clock = Clock::start();
    let f0 = inst[0].value(&vec![0.0; d])?;
    let min_value = -par_max(samples, seed, |rng, _| -inst[0].value(&compressed_probe(rng, &u)).expect("dim"));
    let gap = clock.upper(a, "gap F(0) - min over probes <= 12T", samples, f0 - min_value, c.delta0 * t as f64);

    let pair = |rng: &mut ChaCha8Rng| {
        let x = compressed_probe(rng, &u);
        let r = 10f64.powf(uniform(rng, -4.0, 0.0));
        let dir: Vec<f64> = (0..d).map(|_| uniform(rng, -1.0, 1.0)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + r * b / n).collect();
        (x, y)
    };

    let clock = Clock::start();
    let lip = par_max(pairs, derive_seed(seed, 1), |rng, _| {
        let (x, y) = pair(rng);
        dist(&inst[0].gradient(&x).expect("dim"), &inst[0].gradient(&y).expect("dim")) / dist(&x, &y)
    });
    let smooth = clock.upper(a, "gradient Lipschitz <= 155", pairs, lip, c.lip1_rot);

    let clock = Clock::start();
    let res = par_max(moments_n, derive_seed(seed, 3), |rng, i| {
        unbiased_residual(&inst[(i % 4) as usize], &compressed_probe(rng, &u))
    });
    let unbiased = clock.upper(a, "unbiased: |E g - grad F|_inf <= 1e-8", moments_n, res, 1e-8);

    let clock = Clock::start();
    let var = par_max(moments_n, derive_seed(seed, 3), |rng, i| {
        let o = &inst[(i % 4) as usize];
        let p = o.certificate().p;
        closed_form_moments(o, &compressed_probe(rng, &u)).expect("enumerable").variance * p / (1.0 - p)
    });
    let variance = clock.upper(a, "variance * p/(1-p) <= 23^2", moments_n, var, c.varsigma.powi(2));

    let clock = Clock::start();
    let mss = par_max(pairs, derive_seed(seed, 4), |rng, i| {
        let o = &inst[(i % 4) as usize];
        let (x, y) = pair(rng);
        closed_form_mss(o, &x, &y).expect("enumerable") * o.certificate().p / dist(&x, &y).powi(2)
    });
    let mss = clock.upper(a, "mean-squared smoothness * p <= 336^2", pairs, mss, c.lip1_bar_rot.powi(2));

    Ok(vec![gap, smooth, unbiased, variance, mss])
}

/// Probes for the smoothed indicator: entries concentrated where `Gamma`
/// is not flat.
pub fn theta_probe(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    let scale = [0.45, 0.6, 1.2][rng.random_range(0..3)];
    (0..t).map(|_| uniform(rng, -scale, scale)).collect()
}

/// The statistical-learning oracle `f_T(x, z)`.
pub fn lemma8(t: usize, samples: u64, seed: u64) -> Vec<AuditReport> {
    let a = "lemma8";
    let f = ChainFunction::new(t).expect("t >= 1");
    let moments_n = samples.min(1000);
    let pairs = (samples / 10).max(1);
    let oracles: Vec<ChainOracle> =
        P_GRID.iter().map(|p| ChainOracle::new(t, *p, ChainEstimator::Stat).expect("valid")).collect();
    let probe = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { chain_probe(rng, t) } else { theta_probe(rng, t) };

    let clock = Clock::start();
    let zc = par_count(samples, seed, |rng, i| {
        let p = p_of(i);
        zero_chain_violations(|x, z| g_stat(&f, p, x, z).expect("valid"), &probe(rng))
    });
    let zero_chain = clock.exact(a, "probability-p zero-chain (g_stat)", samples, zc);

    let clock = Clock::start();
    let res = par_max(moments_n, derive_seed(seed, 3), |rng, i| unbiased_residual(&oracles[(i % 4) as usize], &probe(rng)));
    let unbiased = clock.upper(a, "unbiased: |E g - grad F|_inf <= 1e-8", moments_n, res, 1e-8);

    let clock = Clock::start();
    let var = par_max(moments_n, derive_seed(seed, 3), |rng, i| {
        let o = &oracles[(i % 4) as usize];
        closed_form_moments(o, &probe(rng)).expect("enumerable").variance * o.p()
    });
    let variance = clock.upper(a, "variance * p <= 1e6", moments_n, var, 1e6);

    let clock = Clock::start();
    let mss = par_max(pairs, derive_seed(seed, 4), |rng, i| {
        let o = &oracles[(i % 4) as usize];
        let (x, y) = if rng.random::<bool>() {
            sample_pair(rng, t)
        } else {
            let x = theta_probe(rng, t);
            let y = x.iter().map(|v| v + 1e-3 * uniform(rng, -1.0, 1.0)).collect();
            (x, y)
        };
        closed_form_mss(o, &x, &y).expect("enumerable") * o.p() / dist(&x, &y).powi(2)
    });
    let bound = 1e11 + CONSTANTS.lip1.powi(2);
    let mss = clock.upper(a, "mean-squared smoothness * p <= 1e11 + 152^2", pairs, mss, bound);

    let clock = Clock::start();
    let stream = SeedStream::new(derive_seed(seed, 5));
    let pts: Vec<Vec<f64>> = (0..moments_n).map(|i| probe(&mut stream.round_rng(i))).collect();
    let mut fd = 0.0f64;
    for (z, p) in [(false, 0.3), (true, 0.3), (true, 0.05)] {
        fd = fd.max(fd_gradient_check(
            |x| f_stat_value(&f, p, x, z).expect("valid"),
            |x| g_stat(&f, p, x, z).expect("valid"),
            &pts,
            1e-6,
        ));
    }
    let consistency = clock.upper(a, "g_stat matches FD of f_stat (rel) <= 1e-4", 3 * moments_n, fd, 1e-4);

    vec![zero_chain, unbiased, variance, mss, consistency]
}

/// Smoothed indicator: gradient norm, Lipschitz constants, sandwich and
/// finite differences.
pub fn lemma_b1(t: usize, samples: u64, seed: u64) -> Vec<AuditReport> {
    let a = "lemmab1";
    let stream = SeedStream::new(seed);
    let draw = |i: u64| {
        let mut rng = stream.round_rng(i);
        let j = rng.random_range(1..=t);
        let x = theta_probe(&mut rng, t);
        let r = 10f64.powf(uniform(&mut rng, -4.0, -1.0));
        let y: Vec<f64> = x.iter().map(|v| v + r * uniform(&mut rng, -1.0, 1.0)).collect();
        (j, x, y)
    };

    let clock = Clock::start();
    let gn = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (j, x, _) = draw(i);
            theta_gradient(j, &x).expect("valid").iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .reduce(|| 0.0, f64::max);
    let norm = clock.upper(a, "|grad Theta_j| <= 36", samples, gn, 36.0);

    let clock = Clock::start();
    let (l0, l1) = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (j, x, y) = draw(i);
            let d = dist(&x, &y);
            let v = (theta(j, &x).expect("valid") - theta(j, &y).expect("valid")).abs() / d;
            let g = dist(&theta_gradient(j, &x).expect("valid"), &theta_gradient(j, &y).expect("valid")) / d;
            (v, g)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let lip0 = clock.upper(a, "Theta_j Lipschitz <= 36", samples, l0, 36.0);
    let lip1 = clock.upper(a, "grad Theta_j Lipschitz <= 1e4", samples, l1, 1e4);

    let clock = Clock::start();
    let bad: u64 = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (j, x, _) = draw(i);
            let th = theta(j, &x).expect("valid");
            let lo = if j > progress(&x, 0.25) { 1.0 } else { 0.0 };
            let hi = if j > progress(&x, 0.5) { 1.0 } else { 0.0 };
            u64::from(th < lo || th > hi)
        })
        .sum();
    let sandwich = clock.exact(a, "1{j > prog_1/4} <= Theta_j <= 1{j > prog_1/2}", samples, bad);

    let clock = Clock::start();
    let n = samples.min(1000);
    let mut worst = 0.0f64;
    for j in [1, t / 2 + 1, t] {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut rng = stream.round_rng(i + samples);
                let m = 0.3 + 0.15 * rng.random::<f64>();
                (0..t).map(|_| uniform(&mut rng, -m, m)).collect()
            })
            .collect();
        worst = worst.max(fd_gradient_check(
            |x| theta(j, x).expect("valid"),
            |x| theta_gradient(j, x).expect("valid"),
            &pts,
            1e-6,
        ));
    }
    let fd = clock.upper(a, "grad Theta matches FD (rel) <= 1e-4", 3 * n, worst, 1e-4);

    vec![norm, lip0, lip1, sandwich, fd]
}

/// Operator norm of a symmetric matrix.
fn sym_op_norm(m: DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().iter().fold(0.0, |a: f64, v| a.max(v.abs()))
}

fn jacobian_matrix(x: &[f64], radius: f64) -> DMatrix<f64> {
    let sp = soft_project(x, radius).expect("radius > 0");
    let d = x.len();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let col = sp.jacobian_apply(&e);
        for (r, v) in col.into_iter().enumerate() {
            m[(r, i)] = v;
        }
    }
    m
}

/// Soft projection: stays in the ball, is 1-Lipschitz, and its Jacobian is
/// `3/R`-Lipschitz in operator norm.
pub fn lemma_a1(d: usize, samples: u64, seed: u64) -> Vec<AuditReport> {
    let a = "lemmaa1";
    let stream = SeedStream::new(seed);
    let draw = |i: u64| {
        let mut rng = stream.round_rng(i);
        let radius = 10f64.powf(uniform(&mut rng, -1.0, 1.0));
        let scale = radius * 10f64.powf(uniform(&mut rng, -1.0, 1.0));
        let x: Vec<f64> = (0..d).map(|_| scale * uniform(&mut rng, -1.0, 1.0)).collect();
        let r = scale * 10f64.powf(uniform(&mut rng, -4.0, 0.0));
        let y: Vec<f64> = x.iter().map(|v| v + r * uniform(&mut rng, -1.0, 1.0)).collect();
        (radius, x, y)
    };

    let clock = Clock::start();
    let inside = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (radius, x, _) = draw(i);
            let rho = soft_project(&x, radius).expect("radius > 0").rho;
            rho.iter().map(|v| v * v).sum::<f64>().sqrt() / radius
        })
        .reduce(|| 0.0, f64::max);
    let ball = AuditReport { pass: inside < 1.0, ..clock.upper(a, "|rho(x)| / R < 1", samples, inside, 1.0) };

    let clock = Clock::start();
    let (lr, lj) = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (radius, x, y) = draw(i);
            let d_xy = dist(&x, &y);
            let rx = soft_project(&x, radius).expect("radius > 0").rho;
            let ry = soft_project(&y, radius).expect("radius > 0").rho;
            let jd = jacobian_matrix(&x, radius) - jacobian_matrix(&y, radius);
            (dist(&rx, &ry) / d_xy, sym_op_norm(jd) * radius / (3.0 * d_xy))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let rho_lip = clock.upper(a, "rho 1-Lipschitz", samples, lr, 1.0);
    let jac_lip = clock.upper(a, "|J(x)-J(y)|_op * R / (3|x-y|) <= 1", samples, lj, 1.0);

    let clock = Clock::start();
    let n = samples.min(1000);
    let fd = (0..n)
        .into_par_iter()
        .map(|i| {
            let (radius, x, _) = draw(i);
            let jm = jacobian_matrix(&x, radius);
            let h = 1e-6 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let mut worst = 0.0f64;
            for c in 0..d {
                let mut xp = x.clone();
                xp[c] += h;
                let mut xm = x.clone();
                xm[c] -= h;
                let up = soft_project(&xp, radius).expect("radius > 0").rho;
                let dn = soft_project(&xm, radius).expect("radius > 0").rho;
                for r in 0..d {
                    let fd = (up[r] - dn[r]) / (2.0 * h);
                    worst = worst.max((fd - jm[(r, c)]).abs() / (1.0 + jm[(r, c)].abs()));
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    let jac_fd = clock.upper(a, "J matches FD of rho (rel) <= 1e-6", n, fd, 1e-6);

    vec![ball, rho_lip, jac_lip, jac_fd]
}

/// Quadratic estimation instance: variance is exactly `sigma^2` and the
/// gradient map is exactly `Lbar`-Lipschitz for every seed.
pub fn quad_suite(d: usize, samples: u64, seed: u64) -> Result<Vec<AuditReport>> {
    let a = "quad";
    let stream = SeedStream::new(seed);
    let (lbar, sigma2, r) = (3.0, 2.5, 1.5);
    let oracles = [QuadOracle::new(d, r, 1.0, lbar, sigma2)?, QuadOracle::new(d, r, -1.0, lbar, sigma2)?];

    let clock = Clock::start();
    let worst = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.round_rng(i);
            let x: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -5.0, 5.0)).collect();
            let o = &oracles[(i % 2) as usize];
            let m = gauss_hermite_moments(o, &x).expect("gaussian");
            ((m.variance - sigma2).abs()).max(max_abs_diff(&m.mean, &o.gradient(&x).expect("dim")))
        })
        .reduce(|| 0.0, f64::max);
    let var = clock.upper(a, "variance == sigma^2 and mean == grad F", samples, worst, 1e-10);

    let clock = Clock::start();
    let worst = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.round_rng(i + samples);
            let x: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -5.0, 5.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -5.0, 5.0)).collect();
            let z = crate::oracles::Seed::Real(uniform(&mut rng, -10.0, 10.0));
            let o = &oracles[(i % 2) as usize];
            let ratio = dist(&o.estimate(&x, &z).expect("dim"), &o.estimate(&y, &z).expect("dim")) / dist(&x, &y);
            (ratio - lbar).abs()
        })
        .reduce(|| 0.0, f64::max);
    let lip = clock.upper(a, "|ratio - Lbar| on sampled pairs", samples, worst, 1e-10);

    Ok(vec![var, lip])
}

// ------------------------------------------------------------ simulations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingReport {
    pub t: usize,
    pub p: f64,
    pub delta: f64,
    pub trials: u64,
    /// `floor((T - ln(1/delta)) / (2p))`
    pub threshold: u64,
    pub failure_rate: f64,
    /// `delta + 3 sqrt(delta / trials)`
    pub failure_bound: f64,
    pub mean_hitting_time: f64,
    pub stderr: f64,
    /// Runs that never reached progress `T` within the round cap.
    pub censored: u64,
    pub pass: bool,
}

/// Round (1-based) at which a greedy walker against unscaled `g_basic` first
/// receives a response with `prog_0 = T`, or `None` if that needs more than
/// `cap` rounds.
pub fn walker_hitting_time(t: usize, p: f64, cap: u64, run_seed: u64) -> Result<Option<u64>> {
    let oracle = ChainOracle::new(t, p, ChainEstimator::Basic)?;
    let mut walker = GreedyWalker::new(1.0);
    let mut hit = None;
    run_with(&mut walker, &oracle, cap, run_seed, |round, r| {
        if progress_computed(&r.responses[0].gradient) >= t {
            hit = Some(round);
            Control::Halt
        } else {
            Control::Continue
        }
    })?;
    Ok(hit)
}

/// Monte Carlo check that reaching the end of the chain takes more than
/// `(T - ln(1/delta)) / (2p)` rounds with probability at least `1 - delta`.
pub fn hitting_time_sim(t: usize, p: f64, delta: f64, trials: u64, rng_seed: u64) -> Result<HittingReport> {
    if trials < 100 {
        return Err(Error::Argument(format!("need at least 100 trials, got {trials}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    crate::error::check_probability(p)?;
    let threshold = ((t as f64 - (1.0 / delta).ln()) / (2.0 * p)).floor().max(0.0) as u64;
    let cap = ((40.0 * t as f64 / p).ceil() as u64).max(threshold + 1);
    let times: Vec<Option<u64>> = (0..trials)
        .into_par_iter()
        .map(|i| walker_hitting_time(t, p, cap, derive_seed(rng_seed, i)))
        .collect::<Result<_>>()?;
    let failures = times.iter().filter(|h| h.is_some_and(|h| h <= threshold)).count() as f64;
    let done: Vec<f64> = times.iter().flatten().map(|h| *h as f64).collect();
    let n = done.len() as f64;
    let mean = done.iter().sum::<f64>() / n;
    let var = done.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let failure_rate = failures / trials as f64;
    let failure_bound = delta + 3.0 * (delta / trials as f64).sqrt();
    Ok(HittingReport {
        t,
        p,
        delta,
        trials,
        threshold,
        failure_rate,
        failure_bound,
        mean_hitting_time: mean,
        stderr: (var / n).sqrt(),
        censored: trials - done.len() as u64,
        pass: failure_rate <= failure_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveEquivalenceReport {
    pub n: u64,
    pub t: usize,
    /// `counts[mask]` is the number of seeds mapping to bit pattern `mask`
    /// (bit `j` of `mask` is bit `j` of the pattern).
    pub counts: Vec<u64>,
    pub marginals: Vec<u64>,
    pub pattern_counts_ok: bool,
    pub marginals_ok: bool,
    pub pass: bool,
}

/// Exhaustive check that `zeta(pi(k))` for uniform `k` has i.i.d.
/// `Bernoulli(1/N)` bits: pattern `b` must appear `(N-1)^{#zeros(b)}` times
/// and every bit must be set for exactly `N^{T-1}` seeds.
pub fn active_equivalence(n: u64, t: usize, key: u64) -> Result<ActiveEquivalenceReport> {
    let size = seed_space_size(n, t).filter(|s| *s <= 1_000_000).ok_or_else(|| {
        Error::Argument(format!("{n}^{t} seeds exceed the exhaustive limit of 1e6"))
    })?;
    if t > 20 {
        return Err(Error::Argument("T too large for pattern enumeration".into()));
    }
    let pi = Permutation::random(size, key)?;
    let mut counts = vec![0u64; 1 << t];
    let mut marginals = vec![0u64; t];
    for k in 1..=size {
        let bits = zeta(pi.apply(k)?, n, t)?;
        let mut mask = 0usize;
        for (j, b) in bits.iter().enumerate() {
            if *b {
                mask |= 1 << j;
                marginals[j] += 1;
            }
        }
        counts[mask] += 1;
    }
    let pattern_counts_ok = counts
        .iter()
        .enumerate()
        .all(|(mask, c)| *c == (n - 1).pow(t as u32 - (mask as u32).count_ones()));
    let per_bit = n.pow(t as u32 - 1);
    let marginals_ok = marginals.iter().all(|m| *m == per_bit);
    Ok(ActiveEquivalenceReport {
        n,
        t,
        counts,
        marginals,
        pattern_counts_ok,
        marginals_ok,
        pass: pattern_counts_ok && marginals_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveWalkerReport {
    pub n: u64,
    pub t: usize,
    pub runs: u64,
    pub rounds: u64,
    pub increments: u64,
    /// Progress increments per round played before the chain was finished.
    pub rate: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Greedy walkers that also pick their seed index against `g_pi` with a
/// fresh random permutation per run. The per-round chance of extending the
/// chain should stay at most `2/N`.
pub fn active_walker_rate(n: u64, t: usize, runs: u64, max_rounds: u64, rng_seed: u64) -> Result<ActiveWalkerReport> {
    let size = seed_space_size(n, t).ok_or_else(|| Error::Unsupported(format!("{n}^{t} seeds overflow")))?;
    let per_run: Vec<(u64, u64)> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let run_seed = derive_seed(rng_seed, i);
            let oracle = ActiveOracle::new(t, n, Permutation::random(size, derive_seed(run_seed, 7))?)?;
            let mut walker = ActiveWalker::new(1.0, size);
            let (mut rounds, mut incs, mut best) = (0u64, 0u64, 0usize);
            run_with(&mut walker, &oracle, max_rounds, run_seed, |_, r| {
                rounds += 1;
                let prog = progress_computed(&r.responses[0].gradient);
                if prog > best {
                    incs += (prog - best) as u64;
                    best = prog;
                }
                if best >= t {
                    Control::Halt
                } else {
                    Control::Continue
                }
            })?;
            Ok((rounds, incs))
        })
        .collect::<Result<_>>()?;
    let rounds: u64 = per_run.iter().map(|r| r.0).sum();
    let increments: u64 = per_run.iter().map(|r| r.1).sum();
    let rate = increments as f64 / rounds as f64;
    let bound = 2.0 / n as f64;
    Ok(ActiveWalkerReport { n, t, runs, rounds, increments, rate, bound, pass: rate <= bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessPoint {
    pub delta: f64,
    /// `E |g_basic(x,z) - g_basic(y,z)|^2`
    pub basic_mss: f64,
    /// `basic_mss / |x - y|^2`
    pub basic_ratio: f64,
    /// Same ratio for `g_smooth`.
    pub smooth_ratio: f64,
}

/// The pair `x = (1, 1/4, 0)`, `y = (1, 1/4 + delta, 0)` straddles the
/// `prog_{1/4}` switch of `g_basic`, so its expected squared difference
/// stays near `Phi'(1/4)^2 (1-p)/p` as `delta -> 0` while `|x-y| -> 0`.
pub fn mss_witness(p: f64, deltas: &[f64]) -> Result<Vec<WitnessPoint>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let basic = ChainOracle::new(3, p, ChainEstimator::Basic)?;
    let smooth = ChainOracle::new(3, p, ChainEstimator::Smooth)?;
    deltas
        .iter()
        .map(|&delta| {
            let x = [1.0, 0.25, 0.0];
            let y = [1.0, 0.25 + delta, 0.0];
            let d2 = dist(&x, &y).powi(2);
            let basic_mss = closed_form_mss(&basic, &x, &y)?;
            Ok(WitnessPoint {
                delta,
                basic_mss,
                basic_ratio: basic_mss / d2,
                smooth_ratio: closed_form_mss(&smooth, &x, &y)? / d2,
            })
        })
        .collect()
}
