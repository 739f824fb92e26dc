//! Instance builders: the scaling recipes, Haar rotations, the soft
//! projection and compressed instance, and the dimension formulas.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chain::{ChainFunction, CONSTANTS};
use crate::error::{check_dim, check_probability, Error, Result};
use crate::oracles::{
    seed_space_size, ActiveOracle, Certificate, ChainEstimator, ChainOracle, Permutation, QuadOracle,
    Seed, SeedDistribution, StochasticOracle,
};

/// `floor` with a small guard so exact integers computed in floating point
/// are not pushed down by rounding.
fn guarded_floor(v: f64) -> f64 {
    (v + 1e-9).floor()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub lambda: f64,
    pub t: usize,
    pub p: f64,
    /// Smoothness used by the recipe; differs from the caller's `L` only for
    /// the mean-squared-smooth variants.
    pub l_effective: f64,
    /// Lower-bound round count guaranteed by the recipe.
    pub rounds: f64,
    /// Gradient Lipschitz constant of the unscaled function.
    pub lip1: f64,
}

impl ScaleParams {
    /// Multiplier on unscaled values: `L lambda^2 / l1`.
    pub fn value_scale(&self) -> f64 {
        self.l_effective * self.lambda * self.lambda / self.lip1
    }

    /// Multiplier on unscaled gradients: `L lambda / l1`.
    pub fn gradient_scale(&self) -> f64 {
        self.l_effective * self.lambda / self.lip1
    }
}

fn check_positive(pairs: &[(&str, f64)]) -> Result<()> {
    for (name, v) in pairs {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::Argument(format!("{name} must be finite and positive, got {v}")));
        }
    }
    Ok(())
}

/// Largest `eps` in `(0, hi]` with `ok(eps)`, assuming `ok` is monotone.
fn max_feasible_eps(ok: impl Fn(f64) -> bool, hi: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

struct Recipe {
    lip1: f64,
    lip1_bar: f64,
    /// `lambda = lip1 * factor * eps / L`
    factor: f64,
    min_t: usize,
    /// rounds = (T - offset) / (2p)
    offset: f64,
}

const ZERO_RESPECTING: Recipe = Recipe {
    lip1: CONSTANTS.lip1,
    lip1_bar: CONSTANTS.lip1_bar,
    factor: 2.0,
    min_t: 3,
    offset: 1.0,
};

const RANDOMIZED: Recipe = Recipe {
    lip1: CONSTANTS.lip1_rot,
    lip1_bar: CONSTANTS.lip1_bar_rot,
    factor: 4.0,
    min_t: 4,
    offset: 2.0,
};

impl Recipe {
    fn p(&self, eps: f64, sigma2: f64, varsigma: f64) -> f64 {
        ((self.factor * varsigma * eps).powi(2) / sigma2).min(1.0)
    }

    fn t_of(&self, eps: f64, delta: f64, l: f64) -> f64 {
        guarded_floor(l * delta / (self.lip1 * CONSTANTS.delta0 * (self.factor * eps).powi(2)))
    }

    fn build(&self, eps: f64, delta: f64, l: f64, p: f64, min_t: usize) -> Result<ScaleParams> {
        let t = self.t_of(eps, delta, l);
        if t < min_t as f64 {
            let max_eps = (l * delta / (self.lip1 * CONSTANTS.delta0 * self.factor.powi(2) * min_t as f64)).sqrt();
            return Err(Error::Infeasible { reason: format!("chain length {t} is below {min_t}"), max_eps });
        }
        let t = t as usize;
        Ok(ScaleParams {
            lambda: self.lip1 * self.factor * eps / l,
            t,
            p,
            l_effective: l,
            rounds: ((t as f64 - self.offset) / (2.0 * p)).max(0.0),
            lip1: self.lip1,
        })
    }

    fn bounded_variance(&self, eps: f64, delta: f64, l: f64, sigma2: f64, varsigma: f64) -> Result<ScaleParams> {
        check_positive(&[("eps", eps), ("delta", delta), ("L", l), ("sigma2", sigma2)])?;
        self.build(eps, delta, l, self.p(eps, sigma2, varsigma), self.min_t)
    }

    fn mss(&self, eps: f64, delta: f64, lbar: f64, sigma2: f64, min_t: usize) -> Result<ScaleParams> {
        check_positive(&[("eps", eps), ("delta", delta), ("Lbar", lbar), ("sigma2", sigma2)])?;
        let varsigma = CONSTANTS.varsigma;
        let l_eff = |e: f64| self.lip1 / self.lip1_bar * lbar * self.p(e, sigma2, varsigma).sqrt();
        let p = self.p(eps, sigma2, varsigma);
        let l = l_eff(eps);
        match self.build(eps, delta, l, p, min_t) {
            Err(Error::Infeasible { reason, .. }) => {
                let ok = |e: f64| self.t_of(e, delta, l_eff(e)) >= min_t as f64;
                Err(Error::Infeasible { reason, max_eps: max_feasible_eps(ok, eps) })
            }
            other => other,
        }
    }
}

/// Bounded-variance recipe over `F_T` and `g_T`.
pub fn scale_params_bounded_variance(eps: f64, delta: f64, l: f64, sigma2: f64) -> Result<ScaleParams> {
    ZERO_RESPECTING.bounded_variance(eps, delta, l, sigma2, CONSTANTS.varsigma)
}

/// Mean-squared-smooth recipe: the bounded-variance recipe run with
/// `L = (l1 / lbar1) * Lbar * sqrt(p)`. Requires `T >= 1`.
pub fn scale_params_mss(eps: f64, delta: f64, lbar: f64, sigma2: f64) -> Result<ScaleParams> {
    ZERO_RESPECTING.mss(eps, delta, lbar, sigma2, 1)
}

/// Recipe for the rotated and compressed instances (factor `4 eps`,
/// `l1 = 155`, `T >= 4`).
pub fn scale_params_randomized(eps: f64, delta: f64, l: f64, sigma2: f64) -> Result<ScaleParams> {
    RANDOMIZED.bounded_variance(eps, delta, l, sigma2, CONSTANTS.varsigma)
}

/// Mean-squared-smooth variant of [`scale_params_randomized`].
pub fn scale_params_randomized_mss(eps: f64, delta: f64, lbar: f64, sigma2: f64) -> Result<ScaleParams> {
    RANDOMIZED.mss(eps, delta, lbar, sigma2, RANDOMIZED.min_t)
}

// ------------------------------------------------------------ rotation

/// A `d x T` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    u: DMatrix<f64>,
}

impl RotationMatrix {
    pub fn from_matrix(u: DMatrix<f64>) -> Result<Self> {
        if u.nrows() < u.ncols() {
            return Err(Error::Argument(format!("rotation needs d >= T, got {}x{}", u.nrows(), u.ncols())));
        }
        Ok(RotationMatrix { u })
    }

    pub fn d(&self) -> usize {
        self.u.nrows()
    }

    pub fn t(&self) -> usize {
        self.u.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// `U^T x`
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.u.tr_mul(&DVector::from_column_slice(x)).as_slice().to_vec()
    }

    /// `U y`
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        (&self.u * DVector::from_column_slice(y)).as_slice().to_vec()
    }

    /// `max |U^T U - I|`
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.u.tr_mul(&self.u);
        let t = self.t();
        (g - DMatrix::<f64>::identity(t, t)).amax()
    }
}

/// Haar-distributed `U in Ortho(d, T)`: QR of a Gaussian matrix with the
/// column signs fixed by the diagonal of `R`.
pub fn sample_rotation(d: usize, t: usize, rng_seed: u64) -> Result<RotationMatrix> {
    if t == 0 || d < t {
        return Err(Error::Argument(format!("rotation needs d >= T >= 1, got d={d}, T={t}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let g = DMatrix::<f64>::from_fn(d, t, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..t {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(RotationMatrix { u: q })
}

// ------------------------------------------------------------ soft projection

/// `rho(x) = x / s` with `s = sqrt(1 + |x|^2 / R^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftProjection {
    pub rho: Vec<f64>,
    pub s: f64,
    pub radius: f64,
}

pub fn soft_project(x: &[f64], radius: f64) -> Result<SoftProjection> {
    check_positive(&[("R", radius)])?;
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let s = (1.0 + sq / (radius * radius)).sqrt();
    Ok(SoftProjection { rho: x.iter().map(|v| v / s).collect(), s, radius })
}

impl SoftProjection {
    /// `J(x) v = (v - rho (rho . v) / R^2) / s`. `J` is symmetric, so this is
    /// also `J(x)^T v`.
    pub fn jacobian_apply(&self, v: &[f64]) -> Vec<f64> {
        let dot: f64 = self.rho.iter().zip(v).map(|(a, b)| a * b).sum();
        let c = dot / (self.radius * self.radius);
        v.iter().zip(&self.rho).map(|(vi, ri)| (vi - ri * c) / self.s).collect()
    }
}

// ------------------------------------------------------------ compressed

/// `F(x) = F_T(U^T rho(x)) + (eta/2)|x|^2` with the smoothed estimator.
#[derive(Debug, Clone)]
pub struct CompressedInstance {
    base: ChainOracle,
    f: ChainFunction,
    rotation: Arc<RotationMatrix>,
    radius: f64,
    eta: f64,
    cert: Certificate,
}

impl CompressedInstance {
    /// Uses `R = 230 sqrt(T)` and `eta = 1/5`.
    pub fn new(rotation: Arc<RotationMatrix>, p: f64) -> Result<Self> {
        let t = rotation.t();
        Self::with_params(rotation, p, 230.0 * (t as f64).sqrt(), 0.2)
    }

    pub fn with_params(rotation: Arc<RotationMatrix>, p: f64, radius: f64, eta: f64) -> Result<Self> {
        check_probability(p)?;
        check_positive(&[("R", radius), ("eta", eta)])?;
        let t = rotation.t();
        let c = CONSTANTS;
        Ok(CompressedInstance {
            base: ChainOracle::new(t, p, ChainEstimator::Smooth)?,
            f: ChainFunction::new(t)?,
            cert: Certificate {
                delta: c.delta0 * t as f64,
                lip: c.lip1_rot,
                lbar: Some(c.lip1_bar_rot / p.sqrt()),
                sigma2: c.varsigma.powi(2) * (1.0 - p) / p,
                p,
                t,
                d: rotation.d(),
            },
            rotation,
            radius,
            eta,
        })
    }

    pub fn rotation(&self) -> &Arc<RotationMatrix> {
        &self.rotation
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `U^T rho(x)`, the point at which the chain is evaluated.
    pub fn inner_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.rotation.d(), x.len())?;
        Ok(self.rotation.project(&soft_project(x, self.radius)?.rho))
    }

    fn assemble(&self, x: &[f64], sp: &SoftProjection, inner_grad: &[f64]) -> Vec<f64> {
        let mut g = sp.jacobian_apply(&self.rotation.lift(inner_grad));
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += self.eta * xi;
        }
        g
    }

    /// Value and stochastic gradient.
    pub fn compressed_eval(&self, x: &[f64], z: &Seed) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(x)?, self.estimate(x, z)?))
    }
}

impl StochasticOracle for CompressedInstance {
    fn dim(&self) -> usize {
        self.rotation.d()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let y = self.inner_point(x)?;
        let sq: f64 = x.iter().map(|v| v * v).sum();
        Ok(self.f.value_unchecked(&y) + 0.5 * self.eta * sq)
    }

    /// The deterministic mean `J(x) U grad F_T(U^T rho(x)) + eta x`.
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.rotation.d(), x.len())?;
        let sp = soft_project(x, self.radius)?;
        let y = self.rotation.project(&sp.rho);
        Ok(self.assemble(x, &sp, &self.f.gradient_unchecked(&y)))
    }

    fn estimate(&self, x: &[f64], z: &Seed) -> Result<Vec<f64>> {
        check_dim(self.rotation.d(), x.len())?;
        let sp = soft_project(x, self.radius)?;
        let y = self.rotation.project(&sp.rho);
        Ok(self.assemble(x, &sp, &self.base.estimate(&y, z)?))
    }

    fn seed_distribution(&self) -> &SeedDistribution {
        self.base.seed_distribution()
    }

    fn certificate(&self) -> &Certificate {
        &self.cert
    }

    fn chain_len(&self) -> Option<usize> {
        Some(self.rotation.t())
    }
}

// ------------------------------------------------------------ scaling

/// `F*(x) = a F(x / lambda)`, `g*(x, z) = (a / lambda) g(x / lambda, z)`.
#[derive(Debug)]
pub struct ScaledOracle {
    inner: Box<dyn StochasticOracle>,
    lambda: f64,
    value_scale: f64,
    cert: Certificate,
}

impl ScaledOracle {
    pub fn new(inner: Box<dyn StochasticOracle>, params: &ScaleParams, sigma2: f64, lbar: Option<f64>) -> Self {
        let ic = *inner.certificate();
        let b = params.gradient_scale();
        let cert = Certificate {
            delta: ic.delta * params.value_scale(),
            lip: params.l_effective,
            lbar: lbar.or(ic.lbar.map(|v| v * b / params.lambda)),
            sigma2,
            p: ic.p,
            t: ic.t,
            d: ic.d,
        };
        ScaledOracle { inner, lambda: params.lambda, value_scale: params.value_scale(), cert }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn inner(&self) -> &dyn StochasticOracle {
        self.inner.as_ref()
    }

    fn unscale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v / self.lambda).collect()
    }

    fn grad_scale(&self) -> f64 {
        self.value_scale / self.lambda
    }
}

impl StochasticOracle for ScaledOracle {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_scale * self.inner.value(&self.unscale(x))?)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let b = self.grad_scale();
        Ok(self.inner.gradient(&self.unscale(x))?.into_iter().map(|v| b * v).collect())
    }

    fn estimate(&self, x: &[f64], z: &Seed) -> Result<Vec<f64>> {
        let b = self.grad_scale();
        Ok(self.inner.estimate(&self.unscale(x), z)?.into_iter().map(|v| b * v).collect())
    }

    fn seed_distribution(&self) -> &SeedDistribution {
        self.inner.seed_distribution()
    }

    fn certificate(&self) -> &Certificate {
        &self.cert
    }

    fn chain_len(&self) -> Option<usize> {
        self.inner.chain_len()
    }
}

// ------------------------------------------------------------ builders

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InstanceKind {
    ZrBv,
    ZrMss,
    RandBv,
    RandMss,
    Stat,
    Active,
    Quad,
}

/// Everything needed to rebuild an instance bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    pub eps: f64,
    pub delta: f64,
    /// `L` for bounded-variance kinds, `Lbar` for mean-squared-smooth kinds
    /// and the quadratic.
    pub lip: f64,
    pub sigma2: f64,
    /// Batch size the instance is meant to be queried with.
    pub k: usize,
    /// Ambient dimension for rotated kinds (default `4T`) and the quadratic
    /// (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub seed: u64,
    /// Quadratic only: distance of the minimizer from the origin. Defaults to
    /// `sqrt(2 delta / lip)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Quadratic only: side of the minimizer, +1 or -1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<f64>,
}

impl InstanceSpec {
    pub fn new(kind: InstanceKind, eps: f64, delta: f64, lip: f64, sigma2: f64) -> Self {
        let k = match kind {
            InstanceKind::ZrMss | InstanceKind::RandMss => 2,
            _ => 1,
        };
        InstanceSpec { kind, eps, delta, lip, sigma2, k, d: None, seed: 0, radius: None, sign: None }
    }

    /// Canonical flat key/value text.
    pub fn to_canonical_string(&self) -> String {
        toml::to_string(self).expect("instance spec always serializes")
    }

    pub fn from_canonical_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Manifest(e.to_string()))
    }
}

/// Variance-proxy constant for the statistical-learning oracle.
pub const STAT_VARSIGMA: f64 = 1000.0;

/// A built instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub oracle: Arc<dyn StochasticOracle>,
    pub scale: Option<ScaleParams>,
    pub rotation: Option<Arc<RotationMatrix>>,
    /// Soft-projection radius of the compressed base, when rotated.
    pub radius: Option<f64>,
    pub warnings: Vec<String>,
}

impl Instance {
    pub fn certificate(&self) -> &Certificate {
        self.oracle.certificate()
    }

    pub fn dim(&self) -> usize {
        self.oracle.dim()
    }
}

pub fn build_instance(spec: &InstanceSpec) -> Result<Instance> {
    let mut warnings = Vec::new();
    let mut rotation = None;
    let mut radius = None;
    let (oracle, scale): (Arc<dyn StochasticOracle>, Option<ScaleParams>) = match spec.kind {
        InstanceKind::ZrBv => {
            let sp = scale_params_bounded_variance(spec.eps, spec.delta, spec.lip, spec.sigma2)?;
            let base = ChainOracle::new(sp.t, sp.p, ChainEstimator::Basic)?;
            (Arc::new(ScaledOracle::new(Box::new(base), &sp, spec.sigma2, None)), Some(sp))
        }
        InstanceKind::ZrMss => {
            let sp = scale_params_mss(spec.eps, spec.delta, spec.lip, spec.sigma2)?;
            let base = ChainOracle::new(sp.t, sp.p, ChainEstimator::Smooth)?;
            (Arc::new(ScaledOracle::new(Box::new(base), &sp, spec.sigma2, None)), Some(sp))
        }
        InstanceKind::RandBv | InstanceKind::RandMss => {
            let sp = if spec.kind == InstanceKind::RandBv {
                scale_params_randomized(spec.eps, spec.delta, spec.lip, spec.sigma2)?
            } else {
                scale_params_randomized_mss(spec.eps, spec.delta, spec.lip, spec.sigma2)?
            };
            let d = spec.d.unwrap_or(4 * sp.t);
            let need = required_dimension(spec.k as u64, sp.t as u64, sp.p, 0.5, None)?;
            if (d as u64) < need {
                warnings.push(format!(
                    "rotated instance uses d = {d}, far below the d = {need} needed for the \
                     hardness guarantee; only mechanics and certificates are meaningful"
                ));
            }
            let u = Arc::new(sample_rotation(d, sp.t, spec.seed)?);
            let base = CompressedInstance::new(u.clone(), sp.p)?;
            radius = Some(base.radius());
            rotation = Some(u);
            (Arc::new(ScaledOracle::new(Box::new(base), &sp, spec.sigma2, None)), Some(sp))
        }
        InstanceKind::Stat => {
            let sp = ZERO_RESPECTING.bounded_variance(spec.eps, spec.delta, spec.lip, spec.sigma2, STAT_VARSIGMA)?;
            let base = ChainOracle::new(sp.t, sp.p, ChainEstimator::Stat)?;
            (Arc::new(ScaledOracle::new(Box::new(base), &sp, spec.sigma2, None)), Some(sp))
        }
        InstanceKind::Active => {
            let mut sp = scale_params_bounded_variance(spec.eps, spec.delta, spec.lip, spec.sigma2)?;
            let n = ((1.0 / sp.p).floor() as u64).max(2);
            sp.p = 1.0 / n as f64;
            sp.rounds = (sp.t as f64 - 1.0) / (2.0 * sp.p);
            let size = seed_space_size(n, sp.t)
                .ok_or_else(|| Error::Unsupported(format!("{n}^{} seeds overflow 64 bits", sp.t)))?;
            let base = ActiveOracle::new(sp.t, n, Permutation::random(size, spec.seed)?)?;
            (Arc::new(ScaledOracle::new(Box::new(base), &sp, spec.sigma2, None)), Some(sp))
        }
        InstanceKind::Quad => {
            check_positive(&[("Lbar", spec.lip), ("delta", spec.delta)])?;
            let r = spec.radius.unwrap_or((2.0 * spec.delta / spec.lip).sqrt());
            let q = QuadOracle::new(spec.d.unwrap_or(1), r, spec.sign.unwrap_or(1.0), spec.lip, spec.sigma2)?;
            (Arc::new(q), None)
        }
    };
    Ok(Instance { spec: spec.clone(), oracle, scale, rotation, radius, warnings })
}

/// `ceil(18 R^2 K T / p * ln(2 K T^2 / (p delta)))`, with `R^2 = 230^2 T`
/// when `radius` is `None`.
pub fn required_dimension(k: u64, t: u64, p: f64, delta: f64, radius: Option<f64>) -> Result<u64> {
    if k == 0 || t == 0 {
        return Err(Error::Argument("K and T must be positive".into()));
    }
    check_probability(p)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let (k, t) = (k as f64, t as f64);
    let r2 = match radius {
        Some(r) => {
            check_positive(&[("R", r)])?;
            r * r
        }
        None => 230.0 * 230.0 * t,
    };
    let v = 18.0 * r2 * k * t / p * (2.0 * k * t * t / (p * delta)).ln();
    Ok(v.ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_variance_example() {
        let sp = scale_params_bounded_variance(0.5, 18240.0, 1.0, 52900.0).unwrap();
        assert!((sp.lambda - 152.0).abs() < 1e-12);
        assert_eq!(sp.t, 10);
        assert!((sp.p - 0.01).abs() < 1e-15);
        assert!((sp.rounds - 450.0).abs() < 1e-9);
        let sp = scale_params_bounded_variance(0.5, 18240.0, 1.0, 100.0).unwrap();
        assert_eq!(sp.p, 1.0);
    }

    #[test]
    fn infeasible_reports_max_eps() {
        match scale_params_bounded_variance(5.0, 100.0, 1.0, 1.0) {
            Err(Error::Infeasible { max_eps, .. }) => {
                let ok = scale_params_bounded_variance(max_eps * 0.999, 100.0, 1.0, 1.0);
                assert!(ok.is_ok(), "{max_eps}");
            }
            other => panic!("{other:?}"),
        }
        assert!(scale_params_randomized(5.0, 100.0, 1.0, 1.0).is_err());
        assert!(scale_params_mss(50.0, 100.0, 10.0, 100.0).is_err());
    }

    #[test]
    fn mss_example() {
        let sp = scale_params_mss(0.1, 100.0, 10.0, 100.0).unwrap();
        assert!((sp.p - 0.2116).abs() < 1e-12);
        let l_eff = 152.0 / 328.0 * 10.0 * 0.46;
        assert!((sp.l_effective - l_eff).abs() < 1e-12);
        assert_eq!(sp.t, 2);
        assert!((sp.lambda - 304.0 * 0.1 / l_eff).abs() < 1e-12);
        let full = scale_params_mss(0.1, 1e5, 10.0, 1.0).unwrap();
        assert!((full.l_effective - 152.0 / 328.0 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn randomized_example() {
        let sp = scale_params_randomized(0.25, 7440.0, 1.0, 21160.0).unwrap();
        assert!((sp.lambda - 155.0).abs() < 1e-12);
        assert_eq!(sp.t, 4);
        assert!((sp.p - 0.025).abs() < 1e-15);
        assert!((sp.rounds - 40.0).abs() < 1e-9);
    }

    #[test]
    fn required_dimension_example() {
        assert_eq!(required_dimension(1, 4, 0.25, 0.5, None).unwrap(), 337_927_550);
        let base = required_dimension(1, 4, 0.25, 0.5, None).unwrap();
        assert!(required_dimension(2, 4, 0.25, 0.5, None).unwrap() > 2 * base);
        assert!(required_dimension(1, 4, 0.25, 1.0, None).is_err());
    }

    #[test]
    fn rotation_is_orthonormal_and_deterministic() {
        let a = sample_rotation(5, 2, 9).unwrap();
        let b = sample_rotation(5, 2, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.orthonormality_error() <= 1e-10);
        let sq = sample_rotation(6, 6, 1).unwrap();
        assert!(sq.orthonormality_error() <= 1e-10);
        assert!(sample_rotation(2, 3, 0).is_err());
    }

    #[test]
    fn soft_projection_examples() {
        let sp = soft_project(&[0.0; 3], 2.0).unwrap();
        assert_eq!(sp.rho, vec![0.0; 3]);
        assert_eq!(sp.jacobian_apply(&[1.0, -2.0, 3.0]), vec![1.0, -2.0, 3.0]);
        let x = [3.0, 4.0];
        let sp = soft_project(&x, 5.0).unwrap();
        for (r, xi) in sp.rho.iter().zip(&x) {
            assert!((r - xi / 2f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn compressed_at_origin() {
        let u = Arc::new(sample_rotation(12, 3, 4).unwrap());
        let ci = CompressedInstance::new(u.clone(), 0.3).unwrap();
        let x = vec![0.0; 12];
        let f3 = ChainFunction::new(3).unwrap();
        assert!((ci.value(&x).unwrap() - f3.value(&[0.0; 3]).unwrap()).abs() < 1e-14);
        let m = ci.gradient(&x).unwrap();
        let expect = u.lift(&f3.gradient(&[0.0; 3]).unwrap());
        for (a, b) in m.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn spec_round_trips() {
        let mut spec = InstanceSpec::new(InstanceKind::RandMss, 0.2, 50.0, 3.0, 40.0);
        spec.d = Some(17);
        spec.seed = 123;
        let text = spec.to_canonical_string();
        assert!(text.contains("kind = \"RAND_MSS\""));
        assert_eq!(InstanceSpec::from_canonical_str(&text).unwrap(), spec);
    }

    #[test]
    fn quad_gradient_norm_at_origin() {
        let mut spec = InstanceSpec::new(InstanceKind::Quad, 0.1, 2.0, 4.0, 1.0);
        spec.radius = Some(1.5);
        spec.d = Some(3);
        let inst = build_instance(&spec).unwrap();
        let g = inst.oracle.gradient(&[0.0; 3]).unwrap();
        assert!((g.iter().map(|v| v * v).sum::<f64>().sqrt() - 6.0).abs() < 1e-12);
    }
}
