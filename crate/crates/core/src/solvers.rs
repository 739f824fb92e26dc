//! Baseline algorithms: SGD, a SPIDER-style two-point method and the greedy
//! chain walker. All of them start at the origin and only move along
//! returned gradients, so they are zero-respecting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::ZERO_TOL;
use crate::error::{Error, Result};
use crate::oracles::{OracleResponse, Seed};
use crate::protocol::{run_instance, Algorithm, Step, Trace};
use crate::transforms::{Instance, InstanceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// `eta = min(1/L, sqrt(2 Delta / (L sigma^2 N)))`.
    Tuned,
    /// `eta = c / L`.
    Constant { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub step: StepRule,
    /// Number of update rounds `N`; one reporting round follows.
    pub budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiderConfig {
    /// Target accuracy; defaults to the instance's `eps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Restart batch is `ceil(batch_mult * sigma^2 / eps^2)` rounds.
    #[serde(default = "one")]
    pub batch_mult: f64,
    /// Epoch length; defaults to `ceil(sigma / eps)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u64>,
    pub max_rounds: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    /// Value placed on every discovered coordinate.
    #[serde(default = "one")]
    pub magnitude: f64,
    pub max_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SolverConfig {
    Sgd(SgdConfig),
    Spider(SpiderConfig),
    Greedy(GreedyConfig),
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        match self {
            SolverConfig::Sgd(c) => {
                if let StepRule::Constant { c } = c.step {
                    if !(c >= 0.0 && c.is_finite()) {
                        return bad("SGD step constant must be finite and non-negative");
                    }
                }
                if c.budget == 0 {
                    return bad("SGD budget must be positive");
                }
            }
            SolverConfig::Spider(c) => {
                if !(c.batch_mult > 0.0) || c.epoch == Some(0) || c.eps.is_some_and(|e| !(e > 0.0)) {
                    return bad("SPIDER needs eps > 0, batch_mult > 0 and epoch >= 1");
                }
            }
            SolverConfig::Greedy(c) => {
                if !(c.magnitude > 0.0) {
                    return bad("walker magnitude must be positive");
                }
            }
        }
        Ok(())
    }

    /// Rounds the protocol should allow.
    pub fn max_rounds(&self) -> u64 {
        match self {
            SolverConfig::Sgd(c) => c.budget + 1,
            SolverConfig::Spider(c) => c.max_rounds,
            SolverConfig::Greedy(c) => c.max_rounds,
        }
    }

    pub fn build(&self, spec: &InstanceSpec) -> Result<Box<dyn Algorithm + Send>> {
        self.validate()?;
        Ok(match self {
            SolverConfig::Sgd(c) => {
                let eta = match c.step {
                    StepRule::Constant { c } => c / spec.lip,
                    StepRule::Tuned => tuned_step(spec.lip, spec.delta, spec.sigma2, c.budget),
                };
                Box::new(Sgd::new(eta, c.budget))
            }
            SolverConfig::Spider(c) => {
                let eps = c.eps.unwrap_or(spec.eps);
                Box::new(Spider::from_noise(eps, spec.lip, spec.sigma2, c.batch_mult, c.epoch))
            }
            SolverConfig::Greedy(c) => Box::new(GreedyWalker::new(c.magnitude)),
        })
    }
}

/// `min(1/L, sqrt(2 Delta / (L sigma^2 N)))`.
pub fn tuned_step(l: f64, delta: f64, sigma2: f64, budget: u64) -> f64 {
    let noisy = (2.0 * delta / (l * sigma2 * budget as f64)).sqrt();
    (1.0 / l).min(noisy)
}

// ------------------------------------------------------------ SGD

/// `x_{t+1} = x_t - eta g(x_t, z_t)` for `budget` rounds, then one round
/// querying an iterate drawn uniformly from `x_0, ..., x_{N-1}`.
#[derive(Debug, Clone)]
pub struct Sgd {
    eta: f64,
    budget: u64,
    x: Vec<f64>,
    t: u64,
    output_index: u64,
    output: Vec<f64>,
}

impl Sgd {
    pub fn new(eta: f64, budget: u64) -> Self {
        Sgd { eta, budget, x: Vec::new(), t: 0, output_index: 0, output: Vec::new() }
    }

    pub fn iterate(&self) -> &[f64] {
        &self.x
    }
}

impl Algorithm for Sgd {
    fn batch_size(&self) -> usize {
        1
    }

    fn reset(&mut self, dim: usize, seed: u64) {
        self.x = vec![0.0; dim];
        self.t = 0;
        self.output_index = ChaCha8Rng::seed_from_u64(seed).random_range(0..self.budget.max(1));
        self.output = self.x.clone();
    }

    fn propose(&mut self) -> Step {
        if self.t < self.budget {
            if self.t == self.output_index {
                self.output.clone_from(&self.x);
            }
            Step::Query(vec![self.x.clone()])
        } else if self.t == self.budget {
            Step::Query(vec![self.output.clone()])
        } else {
            Step::Stop
        }
    }

    fn observe(&mut self, responses: &[OracleResponse]) {
        if self.t < self.budget {
            for (xi, gi) in self.x.iter_mut().zip(&responses[0].gradient) {
                *xi -= self.eta * gi;
            }
        }
        self.t += 1;
    }
}

// ------------------------------------------------------------ SPIDER

#[derive(Debug, Clone)]
enum Phase {
    Restart { remaining: u64, acc: Vec<f64> },
    Inner,
}

/// Recursive two-point estimator `v_t = v_{t-1} + g(x_t, z) - g(x_{t-1}, z)`
/// with a fresh minibatch estimate every `epoch` steps and normalized steps
/// `min(eps / (Lbar |v|), 1 / (2 Lbar)) v`.
#[derive(Debug, Clone)]
pub struct Spider {
    eps: f64,
    lbar: f64,
    epoch: u64,
    batch: u64,
    x: Vec<f64>,
    x_prev: Vec<f64>,
    v: Vec<f64>,
    since_restart: u64,
    phase: Phase,
}

impl Spider {
    pub fn new(eps: f64, lbar: f64, epoch: u64, batch: u64) -> Self {
        Spider {
            eps,
            lbar,
            epoch: epoch.max(1),
            batch: batch.max(1),
            x: Vec::new(),
            x_prev: Vec::new(),
            v: Vec::new(),
            since_restart: 0,
            phase: Phase::Inner,
        }
    }

    /// Epoch `ceil(sigma / eps)` and batch `ceil(mult * sigma^2 / eps^2)`
    /// unless overridden.
    pub fn from_noise(eps: f64, lbar: f64, sigma2: f64, batch_mult: f64, epoch: Option<u64>) -> Self {
        let sigma = sigma2.sqrt();
        let q = epoch.unwrap_or((sigma / eps).ceil() as u64);
        let b = (batch_mult * sigma2 / (eps * eps)).ceil() as u64;
        Spider::new(eps, lbar, q, b)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batch(&self) -> u64 {
        self.batch
    }

    pub fn estimator(&self) -> &[f64] {
        &self.v
    }

    pub fn iterate(&self) -> &[f64] {
        &self.x
    }

    fn restart(&mut self) {
        self.phase = Phase::Restart { remaining: self.batch, acc: vec![0.0; self.x.len()] };
        self.since_restart = 0;
    }

    fn step(&mut self) {
        let norm = self.v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut eta = 1.0 / (2.0 * self.lbar);
        if norm > 0.0 {
            eta = eta.min(self.eps / (self.lbar * norm));
        }
        self.x_prev.clone_from(&self.x);
        for (xi, vi) in self.x.iter_mut().zip(&self.v) {
            *xi -= eta * vi;
        }
        self.since_restart += 1;
        if self.since_restart >= self.epoch {
            // the estimate at the new point comes from a fresh batch
            self.restart();
        } else {
            self.phase = Phase::Inner;
        }
    }
}

impl Algorithm for Spider {
    fn batch_size(&self) -> usize {
        2
    }

    fn reset(&mut self, dim: usize, _seed: u64) {
        self.x = vec![0.0; dim];
        self.x_prev = vec![0.0; dim];
        self.v = vec![0.0; dim];
        self.restart();
    }

    fn propose(&mut self) -> Step {
        match self.phase {
            Phase::Restart { .. } => Step::Query(vec![self.x.clone(), self.x.clone()]),
            Phase::Inner => Step::Query(vec![self.x.clone(), self.x_prev.clone()]),
        }
    }

    fn observe(&mut self, responses: &[OracleResponse]) {
        match &mut self.phase {
            Phase::Restart { remaining, acc } => {
                for (a, g) in acc.iter_mut().zip(&responses[0].gradient) {
                    *a += g;
                }
                *remaining -= 1;
                if *remaining == 0 {
                    let b = self.batch as f64;
                    self.v = acc.iter().map(|a| a / b).collect();
                    self.step();
                }
            }
            Phase::Inner => {
                let (gx, gp) = (&responses[0].gradient, &responses[1].gradient);
                for ((v, a), b) in self.v.iter_mut().zip(gx).zip(gp) {
                    *v += a - b;
                }
                self.step();
            }
        }
    }
}

// ------------------------------------------------------------ walkers

/// Queries `magnitude` on every coordinate some response has revealed.
#[derive(Debug, Clone)]
pub struct GreedyWalker {
    magnitude: f64,
    x: Vec<f64>,
}

impl GreedyWalker {
    pub fn new(magnitude: f64) -> Self {
        GreedyWalker { magnitude, x: Vec::new() }
    }

    pub fn discovered(&self) -> usize {
        self.x.iter().filter(|v| **v != 0.0).count()
    }
}

impl Algorithm for GreedyWalker {
    fn batch_size(&self) -> usize {
        1
    }

    fn reset(&mut self, dim: usize, _seed: u64) {
        self.x = vec![0.0; dim];
    }

    fn propose(&mut self) -> Step {
        Step::Query(vec![self.x.clone()])
    }

    fn observe(&mut self, responses: &[OracleResponse]) {
        for r in responses {
            for (xi, g) in self.x.iter_mut().zip(&r.gradient) {
                if g.abs() > ZERO_TOL {
                    *xi = self.magnitude;
                }
            }
        }
    }
}

/// Greedy walker for the active oracle: every round it also picks a
/// uniformly random seed index from `1..=seed_space`.
#[derive(Debug, Clone)]
pub struct ActiveWalker {
    inner: GreedyWalker,
    seed_space: u64,
    rng: ChaCha8Rng,
}

impl ActiveWalker {
    pub fn new(magnitude: f64, seed_space: u64) -> Self {
        ActiveWalker { inner: GreedyWalker::new(magnitude), seed_space, rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Algorithm for ActiveWalker {
    fn batch_size(&self) -> usize {
        1
    }

    fn reset(&mut self, dim: usize, seed: u64) {
        self.inner.reset(dim, seed);
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn propose(&mut self) -> Step {
        let k = self.rng.random_range(1..=self.seed_space);
        Step::QueryWithSeed(vec![self.inner.x.clone()], Seed::Index(k))
    }

    fn observe(&mut self, responses: &[OracleResponse]) {
        self.inner.observe(responses);
    }
}

// ------------------------------------------------------------ entry points

fn checked_run(config: &SolverConfig, instance: &Instance, run_seed: u64) -> Result<Trace> {
    let mut alg = config.build(&instance.spec)?;
    run_instance(alg.as_mut(), instance, config.max_rounds(), run_seed)
}

pub fn sgd(config: &SgdConfig, instance: &Instance, run_seed: u64) -> Result<Trace> {
    checked_run(&SolverConfig::Sgd(config.clone()), instance, run_seed)
}

pub fn spider(config: &SpiderConfig, instance: &Instance, run_seed: u64) -> Result<Trace> {
    checked_run(&SolverConfig::Spider(config.clone()), instance, run_seed)
}

pub fn greedy_chain_walker(config: &GreedyConfig, instance: &Instance, run_seed: u64) -> Result<Trace> {
    if instance.oracle.chain_len().is_none() {
        return Err(Error::Argument("the greedy walker needs a chain instance".into()));
    }
    checked_run(&SolverConfig::Greedy(config.clone()), instance, run_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{ChainEstimator, ChainOracle, QuadOracle, StochasticOracle};
    use crate::protocol::{run, zero_respecting_audit};

    #[test]
    fn sgd_solves_noiseless_quadratic() {
        let q = QuadOracle::new(3, 2.0, 1.0, 4.0, 0.0).unwrap();
        let mut a = Sgd::new(0.25, 200);
        let tr = run(&mut a, &q, 201, 1).unwrap();
        let last = &a.iterate().to_vec();
        let g = q.gradient(last).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
        assert_eq!(tr.rounds.len(), 201);
    }

    #[test]
    fn sgd_zero_step_stays_put() {
        let o = ChainOracle::new(4, 0.5, ChainEstimator::Basic).unwrap();
        let mut a = Sgd::new(0.0, 30);
        let tr = run(&mut a, &o, 100, 2).unwrap();
        assert_eq!(tr.rounds.len(), 31);
        assert!(tr.rounds.iter().all(|r| r.points[0].iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn spider_tracks_exact_gradient_without_noise() {
        let q = QuadOracle::new(3, 1.0, -1.0, 2.0, 0.0).unwrap();
        // batch 1 so every round completes an estimate, which is then used
        // for the step from x_prev
        let mut a = Spider::new(1e-3, 2.0, 7, 1);
        a.reset(3, 0);
        let mut drift = 0.0f64;
        for _ in 0..300 {
            let Step::Query(pts) = a.propose() else { unreachable!() };
            let resp: Vec<_> = pts.iter().map(|x| q.respond(x, &Seed::Real(-1.0)).unwrap()).collect();
            a.observe(&resp);
            let exact = q.gradient(&a.x_prev).unwrap();
            let d = exact.iter().zip(&a.v).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            drift = drift.max(d);
        }
        assert!(drift <= 1e-8, "{drift}");
    }

    #[test]
    fn spider_defaults() {
        let s = Spider::from_noise(0.1, 1.0, 4.0, 1.0, None);
        assert_eq!(s.epoch(), 20);
        assert_eq!(s.batch(), 400);
    }

    #[test]
    fn walker_reveals_one_coordinate_per_success() {
        let o = ChainOracle::new(6, 1.0, ChainEstimator::Basic).unwrap();
        let mut w = GreedyWalker::new(1.0);
        let tr = run(&mut w, &o, 6, 0).unwrap();
        assert!(zero_respecting_audit(&tr).is_empty());
        assert_eq!(w.discovered(), 6);
    }
}
