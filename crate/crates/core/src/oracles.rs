//! Stochastic gradient oracles over the chain function and the quadratic
//! estimation instance.
//!
//! Every oracle implements [`StochasticOracle`]. Seed spaces that are finite
//! can be enumerated with [`SeedDistribution::atoms`], which is what
//! [`closed_form_moments`] uses to compute exact means and variances.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chain::{progress, ChainFunction, ThetaCache, CONSTANTS};
use crate::error::{check_dim, check_probability, Error, Result};

/// Largest seed space that moment computations will enumerate.
pub const MAX_ATOMS: u64 = 1 << 20;

/// Largest permutation stored as an explicit array.
pub const EXPLICIT_PERMUTATION_MAX: u64 = 1_000_000;

/// Progress threshold that gates the noisy coordinates of `g_basic`.
const GATE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Seed {
    Bit(bool),
    Bits(Vec<bool>),
    /// 1-based finite-sum index.
    Index(u64),
    Real(f64),
}

impl Seed {
    fn as_bit(&self) -> Result<bool> {
        match self {
            Seed::Bit(b) => Ok(*b),
            other => Err(Error::Argument(format!("expected a Bernoulli seed, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeedDistribution {
    Bernoulli { p: f64 },
    BitVector { p: f64, t: usize },
    FiniteSum { n: u64, t: usize },
    Gaussian { mean: f64, variance: f64 },
}

impl SeedDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Seed {
        match *self {
            SeedDistribution::Bernoulli { p } => Seed::Bit(rng.random::<f64>() < p),
            SeedDistribution::BitVector { p, t } => {
                Seed::Bits((0..t).map(|_| rng.random::<f64>() < p).collect())
            }
            SeedDistribution::FiniteSum { n, t } => {
                let size = seed_space_size(n, t).unwrap_or(u64::MAX);
                Seed::Index(rng.random_range(1..=size))
            }
            SeedDistribution::Gaussian { mean, variance } => {
                let normal = Normal::new(mean, variance.sqrt()).expect("variance is finite and >= 0");
                Seed::Real(normal.sample(rng))
            }
        }
    }

    /// All seeds with their probabilities. Atoms of probability zero are
    /// dropped.
    pub fn atoms(&self) -> Result<Vec<(Seed, f64)>> {
        match *self {
            SeedDistribution::Bernoulli { p } => {
                let mut out = vec![(Seed::Bit(true), p)];
                if p < 1.0 {
                    out.push((Seed::Bit(false), 1.0 - p));
                }
                Ok(out)
            }
            SeedDistribution::BitVector { p, t } => {
                if t >= 64 || (1u64 << t) > MAX_ATOMS {
                    return Err(Error::Unsupported(format!("2^{t} bit-vector seeds exceed the enumeration limit")));
                }
                let mut out = Vec::with_capacity(1 << t);
                for mask in 0u64..(1u64 << t) {
                    let bits: Vec<bool> = (0..t).map(|j| mask >> j & 1 == 1).collect();
                    let ones = bits.iter().filter(|b| **b).count() as i32;
                    let w = p.powi(ones) * (1.0 - p).powi(t as i32 - ones);
                    if w > 0.0 {
                        out.push((Seed::Bits(bits), w));
                    }
                }
                Ok(out)
            }
            SeedDistribution::FiniteSum { n, t } => match seed_space_size(n, t) {
                Some(size) if size <= MAX_ATOMS => {
                    let w = 1.0 / size as f64;
                    Ok((1..=size).map(|k| (Seed::Index(k), w)).collect())
                }
                _ => Err(Error::Unsupported(format!("{n}^{t} finite-sum seeds exceed the enumeration limit"))),
            },
            SeedDistribution::Gaussian { .. } => {
                Err(Error::Unsupported("Gaussian seeds are not enumerable".into()))
            }
        }
    }
}

/// `N^T`, or `None` on overflow.
pub fn seed_space_size(n: u64, t: usize) -> Option<u64> {
    n.checked_pow(u32::try_from(t).ok()?)
}

/// Parameters an instance declares about itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Bound on `F(0) - inf F`.
    pub delta: f64,
    /// Gradient Lipschitz constant of the objective.
    pub lip: f64,
    /// Mean-squared smoothness constant, if claimed.
    pub lbar: Option<f64>,
    pub sigma2: f64,
    pub p: f64,
    pub t: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResponse {
    pub value: f64,
    pub gradient: Vec<f64>,
}

pub trait StochasticOracle: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    /// The deterministic objective.
    fn value(&self, x: &[f64]) -> Result<f64>;
    /// The exact gradient of the objective.
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// The stochastic gradient `g(x, z)`.
    fn estimate(&self, x: &[f64], z: &Seed) -> Result<Vec<f64>>;
    fn seed_distribution(&self) -> &SeedDistribution;
    fn certificate(&self) -> &Certificate;

    /// Chain length when the oracle is built over `F_T`.
    fn chain_len(&self) -> Option<usize> {
        None
    }

    fn respond(&self, x: &[f64], z: &Seed) -> Result<OracleResponse> {
        Ok(OracleResponse { value: self.value(x)?, gradient: self.estimate(x, z)? })
    }
}

// ------------------------------------------------------------ chain oracles

fn check_chain_args(f: &ChainFunction, p: f64, x: &[f64]) -> Result<()> {
    check_dim(f.len(), x.len())?;
    check_probability(p)
}

fn bit_factor(z: bool, p: f64) -> f64 {
    if z {
        1.0 / p
    } else {
        0.0
    }
}

/// `[g_T(x,z)]_i = grad_i F_T(x) (1 + 1{i > prog_{1/4}(x)} (z/p - 1))`.
pub fn g_basic(f: &ChainFunction, p: f64, x: &[f64], z: bool) -> Result<Vec<f64>> {
    check_chain_args(f, p, x)?;
    let mut g = f.gradient_unchecked(x);
    let gate = progress(x, GATE);
    let s = bit_factor(z, p);
    for gi in g.iter_mut().skip(gate) {
        *gi *= s;
    }
    Ok(g)
}

/// The smoothed estimator `grad_i F_T(x) * nu_i(x, z)` with
/// `nu_i = 1 + Theta_i(x) (z/p - 1)`.
pub fn g_smooth(f: &ChainFunction, p: f64, x: &[f64], z: bool) -> Result<Vec<f64>> {
    check_chain_args(f, p, x)?;
    let mut g = f.gradient_unchecked(x);
    let cache = ThetaCache::new(x);
    let c = bit_factor(z, p) - 1.0;
    for (gi, th) in g.iter_mut().zip(&cache.theta) {
        *gi *= 1.0 + th * c;
    }
    Ok(g)
}

fn link_parts(x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = x.len();
    let mut h = vec![0.0; t];
    let mut h1 = vec![0.0; t];
    // h2[i] pairs (x_i, x_{i+1}); the last entry stays zero
    let mut h2 = vec![0.0; t];
    for i in 0..t {
        let a = if i == 0 { 1.0 } else { x[i - 1] };
        let l = crate::chain::link_terms(a, x[i]);
        h[i] = l.h;
        h1[i] = l.h1;
        if i > 0 {
            h2[i - 1] = l.h2;
        }
    }
    (h, h1, h2)
}

/// The statistical-learning sample loss `f_T(x, z) = sum_i H_i nu_i(x, z)`.
pub fn f_stat_value(f: &ChainFunction, p: f64, x: &[f64], z: bool) -> Result<f64> {
    check_chain_args(f, p, x)?;
    let cache = ThetaCache::new(x);
    let c = bit_factor(z, p) - 1.0;
    let mut prev = 1.0;
    let mut acc = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        acc += crate::chain::link_terms(prev, xi).h * (1.0 + cache.theta[i] * c);
        prev = xi;
    }
    Ok(acc)
}

/// Exact gradient of [`f_stat_value`] in `x`.
pub fn g_stat(f: &ChainFunction, p: f64, x: &[f64], z: bool) -> Result<Vec<f64>> {
    check_chain_args(f, p, x)?;
    let t = x.len();
    let cache = ThetaCache::new(x);
    let c = bit_factor(z, p) - 1.0;
    let (h, h1, h2) = link_parts(x);
    let nu: Vec<f64> = cache.theta.iter().map(|th| 1.0 + th * c).collect();
    let mut g = vec![0.0; t];
    // running sum over j <= i of H_j Gamma'(1 - n_j) / n_j
    let mut prefix = 0.0;
    for i in 0..t {
        let n = cache.norms[i];
        if n > 1e-300 {
            prefix += h[i] * cache.theta_outer_d1[i] / n;
        }
        let mut gi = -h1[i] * nu[i];
        if i + 1 < t {
            gi -= h2[i] * nu[i + 1];
        }
        if c != 0.0 {
            let mu = cache.mu(x, i);
            if mu != 0.0 {
                gi -= c * mu * prefix;
            }
        }
        g[i] = gi;
    }
    Ok(g)
}

/// Coordinate-wise estimator: coordinate `i` past the gate is scaled by
/// `z_i / p`.
pub fn g_coord(f: &ChainFunction, p: f64, x: &[f64], zbits: &[bool]) -> Result<Vec<f64>> {
    check_chain_args(f, p, x)?;
    check_dim(f.len(), zbits.len())?;
    let mut g = f.gradient_unchecked(x);
    let gate = progress(x, GATE);
    for i in gate..g.len() {
        g[i] *= bit_factor(zbits[i], p);
    }
    Ok(g)
}

/// Bit `j` of `zeta(k)` is set iff digit `j` of `k - 1` in base `N` (least
/// significant first) is zero.
pub fn zeta(k: u64, n: u64, t: usize) -> Result<Vec<bool>> {
    if n < 2 {
        return Err(Error::Argument(format!("base N must be at least 2, got {n}")));
    }
    if t == 0 {
        return Err(Error::Argument("T must be at least 1".into()));
    }
    let in_range = match seed_space_size(n, t) {
        Some(size) => (1..=size).contains(&k),
        None => k >= 1,
    };
    if !in_range {
        return Err(Error::IndexOutOfRange { index: k, len: seed_space_size(n, t).unwrap_or(u64::MAX) });
    }
    let mut rest = k - 1;
    Ok((0..t)
        .map(|_| {
            let d = rest % n;
            rest /= n;
            d == 0
        })
        .collect())
}

/// A bijection of `{1, ..., size}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Permutation {
    Identity { size: u64 },
    /// `table[k - 1]` is the image of `k`, 1-based.
    Explicit { table: Vec<u64> },
    /// Keyed balanced Feistel network on `2 * half_bits` bits with
    /// cycle-walking back into range.
    Feistel { size: u64, half_bits: u32, key: u64 },
}

const FEISTEL_ROUNDS: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Permutation {
    pub fn identity(size: u64) -> Self {
        Permutation::Identity { size }
    }

    /// A uniformly shuffled table for small sizes, a keyed Feistel bijection
    /// otherwise.
    pub fn random(size: u64, key: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Argument("permutation size must be positive".into()));
        }
        if size <= EXPLICIT_PERMUTATION_MAX {
            let mut table: Vec<u64> = (1..=size).collect();
            table.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
            return Ok(Permutation::Explicit { table });
        }
        if size >= 1 << 62 {
            return Err(Error::Unsupported(format!("permutation of {size} elements")));
        }
        let bits = 64 - (size - 1).leading_zeros();
        Ok(Permutation::Feistel { size, half_bits: bits.div_ceil(2), key })
    }

    pub fn size(&self) -> u64 {
        match self {
            Permutation::Identity { size } | Permutation::Feistel { size, .. } => *size,
            Permutation::Explicit { table } => table.len() as u64,
        }
    }

    /// Image of the 1-based index `k`.
    pub fn apply(&self, k: u64) -> Result<u64> {
        let size = self.size();
        if k == 0 || k > size {
            return Err(Error::IndexOutOfRange { index: k, len: size });
        }
        Ok(match self {
            Permutation::Identity { .. } => k,
            Permutation::Explicit { table } => table[(k - 1) as usize],
            Permutation::Feistel { size, half_bits, key } => {
                let mut v = k - 1;
                loop {
                    v = feistel(v, *half_bits, *key);
                    if v < *size {
                        break v + 1;
                    }
                }
            }
        })
    }
}

fn feistel(v: u64, half_bits: u32, key: u64) -> u64 {
    let mask = (1u64 << half_bits) - 1;
    let mut l = v >> half_bits;
    let mut r = v & mask;
    for round in 0..FEISTEL_ROUNDS {
        let f = splitmix64(key ^ round.wrapping_mul(0xd1b5_4a32_d192_ed03) ^ r) & mask;
        let next = l ^ f;
        l = r;
        r = next;
    }
    (l << half_bits) | r
}

/// `g_pi(x; k) = g_coord(x, zeta(pi(k)))` with `p = 1/N`.
pub fn g_active(f: &ChainFunction, n: u64, pi: &Permutation, x: &[f64], k: u64) -> Result<Vec<f64>> {
    let bits = zeta(pi.apply(k)?, n, f.len())?;
    g_coord(f, 1.0 / n as f64, x, &bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainEstimator {
    Basic,
    Smooth,
    Stat,
}

/// A chain oracle with a Bernoulli seed.
#[derive(Debug, Clone)]
pub struct ChainOracle {
    f: ChainFunction,
    p: f64,
    estimator: ChainEstimator,
    seeds: SeedDistribution,
    cert: Certificate,
}

impl ChainOracle {
    pub fn new(t: usize, p: f64, estimator: ChainEstimator) -> Result<Self> {
        check_probability(p)?;
        let f = ChainFunction::new(t)?;
        let c = CONSTANTS;
        let (sigma2, lbar) = match estimator {
            ChainEstimator::Basic => (c.varsigma.powi(2) * (1.0 - p) / p, None),
            ChainEstimator::Smooth => (c.varsigma.powi(2) * (1.0 - p) / p, Some(c.lip1_bar / p.sqrt())),
            ChainEstimator::Stat => (1e6 / p, Some(((1e11 + c.lip1 * c.lip1) / p).sqrt())),
        };
        Ok(ChainOracle {
            f,
            p,
            estimator,
            seeds: SeedDistribution::Bernoulli { p },
            cert: Certificate { delta: c.delta0 * t as f64, lip: c.lip1, lbar, sigma2, p, t, d: t },
        })
    }

    pub fn estimator(&self) -> ChainEstimator {
        self.estimator
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// The sample loss `f_T(x, z)`; only defined for the `Stat` estimator.
    pub fn sample_value(&self, x: &[f64], z: &Seed) -> Result<f64> {
        match self.estimator {
            ChainEstimator::Stat => f_stat_value(&self.f, self.p, x, z.as_bit()?),
            _ => Err(Error::Unsupported("sample loss exists only for the statistical-learning oracle".into())),
        }
    }
}

impl StochasticOracle for ChainOracle {
    fn dim(&self) -> usize {
        self.f.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.f.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.f.gradient(x)
    }

    fn estimate(&self, x: &[f64], z: &Seed) -> Result<Vec<f64>> {
        let z = z.as_bit()?;
        match self.estimator {
            ChainEstimator::Basic => g_basic(&self.f, self.p, x, z),
            ChainEstimator::Smooth => g_smooth(&self.f, self.p, x, z),
            ChainEstimator::Stat => g_stat(&self.f, self.p, x, z),
        }
    }

    fn seed_distribution(&self) -> &SeedDistribution {
        &self.seeds
    }

    fn certificate(&self) -> &Certificate {
        &self.cert
    }

    fn chain_len(&self) -> Option<usize> {
        Some(self.f.len())
    }
}

/// The coordinate-wise oracle with i.i.d. `Bernoulli(p)` bits.
#[derive(Debug, Clone)]
pub struct CoordOracle {
    f: ChainFunction,
    p: f64,
    seeds: SeedDistribution,
    cert: Certificate,
}

impl CoordOracle {
    pub fn new(t: usize, p: f64) -> Result<Self> {
        check_probability(p)?;
        let c = CONSTANTS;
        Ok(CoordOracle {
            f: ChainFunction::new(t)?,
            p,
            seeds: SeedDistribution::BitVector { p, t },
            cert: Certificate {
                delta: c.delta0 * t as f64,
                lip: c.lip1,
                lbar: None,
                sigma2: c.varsigma.powi(2) * (1.0 - p) / p,
                p,
                t,
                d: t,
            },
        })
    }
}

impl StochasticOracle for CoordOracle {
    fn dim(&self) -> usize {
        self.f.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.f.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.f.gradient(x)
    }

    fn estimate(&self, x: &[f64], z: &Seed) -> Result<Vec<f64>> {
        match z {
            Seed::Bits(bits) => g_coord(&self.f, self.p, x, bits),
            other => Err(Error::Argument(format!("expected a bit-vector seed, got {other:?}"))),
        }
    }

    fn seed_distribution(&self) -> &SeedDistribution {
        &self.seeds
    }

    fn certificate(&self) -> &Certificate {
        &self.cert
    }

    fn chain_len(&self) -> Option<usize> {
        Some(self.f.len())
    }
}

/// The active (finite-sum) oracle `g_pi(x; k)`.
#[derive(Debug, Clone)]
pub struct ActiveOracle {
    f: ChainFunction,
    n: u64,
    perm: Permutation,
    seeds: SeedDistribution,
    cert: Certificate,
}

impl ActiveOracle {
    pub fn new(t: usize, n: u64, perm: Permutation) -> Result<Self> {
        if n < 2 {
            return Err(Error::Argument(format!("N must be at least 2, got {n}")));
        }
        let size = seed_space_size(n, t)
            .ok_or_else(|| Error::Unsupported(format!("{n}^{t} seeds overflow 64 bits")))?;
        if perm.size() != size {
            return Err(Error::Argument(format!("permutation has {} elements, need {size}", perm.size())));
        }
        let p = 1.0 / n as f64;
        let c = CONSTANTS;
        Ok(ActiveOracle {
            f: ChainFunction::new(t)?,
            n,
            perm,
            seeds: SeedDistribution::FiniteSum { n, t },
            cert: Certificate {
                delta: c.delta0 * t as f64,
                lip: c.lip1,
                lbar: None,
                sigma2: c.varsigma.powi(2) * (1.0 - p) / p,
                p,
                t,
                d: t,
            },
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }
}

impl StochasticOracle for ActiveOracle {
    fn dim(&self) -> usize {
        self.f.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.f.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.f.gradient(x)
    }

    fn estimate(&self, x: &[f64], z: &Seed) -> Result<Vec<f64>> {
        match z {
            Seed::Index(k) => g_active(&self.f, self.n, &self.perm, x, *k),
            other => Err(Error::Argument(format!("expected a finite-sum index, got {other:?}"))),
        }
    }

    fn seed_distribution(&self) -> &SeedDistribution {
        &self.seeds
    }

    fn certificate(&self) -> &Certificate {
        &self.cert
    }

    fn chain_len(&self) -> Option<usize> {
        Some(self.f.len())
    }
}

// ------------------------------------------------------------ quadratic

/// Sample loss and gradient of the quadratic estimation instance:
/// `f(x, z) = (lbar/2)(|x|^2 - 2 z x_1 + r^2)`.
pub fn quad_pair(x: &[f64], z: f64, r: f64, lbar: f64) -> Result<(f64, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::Argument("quadratic instance needs d >= 1".into()));
    }
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let value = 0.5 * lbar * (sq - 2.0 * z * x[0] + r * r);
    let mut g: Vec<f64> = x.iter().map(|v| lbar * v).collect();
    g[0] -= lbar * z;
    Ok((value, g))
}

/// `F_s(x) = (lbar/2) |x - theta_s|^2`, `theta_s = (r s, 0, ..., 0)`, with
/// seed `z ~ N(r s, sigma^2 / lbar^2)`.
#[derive(Debug, Clone)]
pub struct QuadOracle {
    d: usize,
    r: f64,
    s: f64,
    lbar: f64,
    seeds: SeedDistribution,
    cert: Certificate,
}

impl QuadOracle {
    pub fn new(d: usize, r: f64, s: f64, lbar: f64, sigma2: f64) -> Result<Self> {
        if d == 0 || !(r > 0.0) || !(lbar > 0.0) || !(sigma2 >= 0.0) {
            return Err(Error::Argument("quadratic instance needs d >= 1, r > 0, lbar > 0, sigma2 >= 0".into()));
        }
        if s != 1.0 && s != -1.0 {
            return Err(Error::Argument(format!("sign s must be +1 or -1, got {s}")));
        }
        Ok(QuadOracle {
            d,
            r,
            s,
            lbar,
            seeds: SeedDistribution::Gaussian { mean: r * s, variance: sigma2 / (lbar * lbar) },
            cert: Certificate {
                delta: 0.5 * lbar * r * r,
                lip: lbar,
                lbar: Some(lbar),
                sigma2,
                p: 1.0,
                t: 1,
                d,
            },
        })
    }

    pub fn minimizer(&self) -> Vec<f64> {
        let mut th = vec![0.0; self.d];
        th[0] = self.r * self.s;
        th
    }
}

impl StochasticOracle for QuadOracle {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x.len())?;
        let th0 = self.r * self.s;
        let sq: f64 = x.iter().enumerate().map(|(i, v)| if i == 0 { (v - th0).powi(2) } else { v * v }).sum();
        Ok(0.5 * self.lbar * sq)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d, x.len())?;
        let mut g: Vec<f64> = x.iter().map(|v| self.lbar * v).collect();
        g[0] -= self.lbar * self.r * self.s;
        Ok(g)
    }

    fn estimate(&self, x: &[f64], z: &Seed) -> Result<Vec<f64>> {
        check_dim(self.d, x.len())?;
        match z {
            Seed::Real(z) => Ok(quad_pair(x, *z, self.r, self.lbar)?.1),
            other => Err(Error::Argument(format!("expected a real seed, got {other:?}"))),
        }
    }

    fn seed_distribution(&self) -> &SeedDistribution {
        &self.seeds
    }

    fn certificate(&self) -> &Certificate {
        &self.cert
    }
}

// ------------------------------------------------------------ moments

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: f64,
}

fn moments_over(oracle: &dyn StochasticOracle, x: &[f64], atoms: &[(Seed, f64)]) -> Result<Moments> {
    let mut mean = vec![0.0; oracle.dim()];
    let mut samples = Vec::with_capacity(atoms.len());
    for (z, w) in atoms {
        let g = oracle.estimate(x, z)?;
        for (m, gi) in mean.iter_mut().zip(&g) {
            *m += w * gi;
        }
        samples.push(g);
    }
    let mut variance = 0.0;
    for ((_, w), g) in atoms.iter().zip(&samples) {
        variance += w * g.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(Moments { mean, variance })
}

/// Exact mean and variance of `g(x, .)` by enumerating the seed space.
pub fn closed_form_moments(oracle: &dyn StochasticOracle, x: &[f64]) -> Result<Moments> {
    let atoms = oracle.seed_distribution().atoms()?;
    moments_over(oracle, x, &atoms)
}

/// Moments under a Gaussian seed by three-point Gauss-Hermite quadrature,
/// which is exact whenever `g` is affine in `z`.
pub fn gauss_hermite_moments(oracle: &dyn StochasticOracle, x: &[f64]) -> Result<Moments> {
    match *oracle.seed_distribution() {
        SeedDistribution::Gaussian { mean, variance } => {
            let sd = variance.sqrt();
            let r3 = 3f64.sqrt();
            let atoms = [
                (Seed::Real(mean), 2.0 / 3.0),
                (Seed::Real(mean - r3 * sd), 1.0 / 6.0),
                (Seed::Real(mean + r3 * sd), 1.0 / 6.0),
            ];
            moments_over(oracle, x, &atoms)
        }
        _ => Err(Error::Unsupported("Gauss-Hermite moments need a Gaussian seed".into())),
    }
}

/// `E_z |g(x, z) - g(y, z)|^2` by seed enumeration.
pub fn closed_form_mss(oracle: &dyn StochasticOracle, x: &[f64], y: &[f64]) -> Result<f64> {
    let atoms = oracle.seed_distribution().atoms()?;
    let mut acc = 0.0;
    for (z, w) in &atoms {
        let gx = oracle.estimate(x, z)?;
        let gy = oracle.estimate(y, z)?;
        acc += w * gx.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(acc)
}
