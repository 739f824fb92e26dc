//! The chain function `F_T`, its derivatives, progress functionals and the
//! smoothed progress indicator `Theta`.
//!
//! Coordinates are 1-based in the math and 0-based in slices. The virtual
//! coordinate `x_0 = 1` is never stored.

use crate::error::{check_dim, Error, Result};
use crate::kernels::{gamma, gamma_d1, phi, phi_d1, phi_d2, psi, psi_d1, psi_d2};

/// Entries with magnitude at or below this count as zero in computed
/// gradients.
pub const ZERO_TOL: f64 = 1e-12;

/// Norms below this take the zero branch of `grad Theta`.
const THETA_NORM_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConstants {
    pub delta0: f64,
    pub lip1: f64,
    pub grad_inf: f64,
    pub varsigma: f64,
    pub lip1_bar: f64,
    pub lip1_rot: f64,
    pub lip1_bar_rot: f64,
    pub large_grad: f64,
}

pub const CONSTANTS: ChainConstants = ChainConstants {
    delta0: 12.0,
    lip1: 152.0,
    grad_inf: 23.0,
    varsigma: 23.0,
    lip1_bar: 328.0,
    lip1_rot: 155.0,
    lip1_bar_rot: 336.0,
    large_grad: 1.0,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTerms {
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
}

pub fn link_terms(a: f64, b: f64) -> LinkTerms {
    let (pa, pma) = (psi(a), psi(-a));
    LinkTerms {
        h: pma * phi(-b) - pa * phi(b),
        h1: pma * phi_d1(-b) + pa * phi_d1(b),
        h2: psi_d1(-a) * phi(-b) + psi_d1(a) * phi(b),
    }
}

#[inline]
fn link_h(a: f64, b: f64) -> f64 {
    let (pa, pma) = (psi(a), psi(-a));
    if pa == 0.0 && pma == 0.0 {
        return 0.0;
    }
    pma * phi(-b) - pa * phi(b)
}

#[inline]
fn link_h1(a: f64, b: f64) -> f64 {
    let (pa, pma) = (psi(a), psi(-a));
    if pa == 0.0 && pma == 0.0 {
        return 0.0;
    }
    pma * phi_d1(-b) + pa * phi_d1(b)
}

#[inline]
fn link_h2(a: f64, b: f64) -> f64 {
    let (da, dma) = (psi_d1(a), psi_d1(-a));
    if da == 0.0 && dma == 0.0 {
        return 0.0;
    }
    dma * phi(-b) + da * phi(b)
}

/// `prog_alpha(x)`: the largest 1-based index with `|x_i| > alpha`, or 0.
pub fn progress(x: &[f64], alpha: f64) -> usize {
    x.iter().rposition(|v| v.abs() > alpha).map_or(0, |i| i + 1)
}

/// `prog_0` of a computed vector, treating entries within `ZERO_TOL` as zero.
pub fn progress_computed(x: &[f64]) -> usize {
    progress(x, ZERO_TOL)
}

/// 1-based indices of the nonzero entries.
pub fn support(x: &[f64]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i + 1)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainFunction {
    t: usize,
}

impl ChainFunction {
    pub fn new(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::Argument("chain length T must be at least 1".into()));
        }
        Ok(ChainFunction { t })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.t, x.len())?;
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        let mut prev = 1.0;
        let mut acc = 0.0;
        for &xi in x {
            acc += link_h(prev, xi);
            prev = xi;
        }
        acc
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.t, x.len())?;
        Ok(self.gradient_unchecked(x))
    }

    pub(crate) fn gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let t = self.t;
        let mut g = vec![0.0; t];
        for i in 0..t {
            let prev = if i == 0 { 1.0 } else { x[i - 1] };
            let mut gi = -link_h1(prev, x[i]);
            if i + 1 < t {
                gi -= link_h2(x[i], x[i + 1]);
            }
            g[i] = gi;
        }
        g
    }

    /// Diagonal (length `T`) and off-diagonal (length `T-1`) bands of the
    /// Hessian.
    pub fn hessian_bands(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.t, x.len())?;
        let t = self.t;
        let mut diag = vec![0.0; t];
        let mut off = vec![0.0; t.saturating_sub(1)];
        for i in 0..t {
            let a = if i == 0 { 1.0 } else { x[i - 1] };
            let b = x[i];
            let mut d = psi(-a) * phi_d2(-b) - psi(a) * phi_d2(b);
            if i + 1 < t {
                let c = x[i + 1];
                d += psi_d2(-b) * phi(-c) - psi_d2(b) * phi(c);
                off[i] = psi_d1(-b) * phi_d1(-c) - psi_d1(b) * phi_d1(c);
            }
            diag[i] = d;
        }
        Ok((diag, off))
    }
}

/// Per-point cache of the quantities behind `Theta_j` for every `j`.
#[derive(Debug, Clone)]
pub struct ThetaCache {
    /// `Gamma(|x_i|)`
    pub gam: Vec<f64>,
    /// `Gamma'(|x_i|)`
    pub gam_d1: Vec<f64>,
    /// `n_j = ||Gamma(|x_{>=j}|)||`
    pub norms: Vec<f64>,
    /// `Theta_j(x) = Gamma(1 - n_j)`
    pub theta: Vec<f64>,
    /// `Gamma'(1 - n_j)`
    pub theta_outer_d1: Vec<f64>,
}

impl ThetaCache {
    pub fn new(x: &[f64]) -> Self {
        let t = x.len();
        let gam: Vec<f64> = x.iter().map(|v| gamma(v.abs())).collect();
        let gam_d1: Vec<f64> = x.iter().map(|v| gamma_d1(v.abs())).collect();
        let mut norms = vec![0.0; t];
        let mut suffix = 0.0;
        for j in (0..t).rev() {
            suffix += gam[j] * gam[j];
            norms[j] = suffix.sqrt();
        }
        let theta = norms.iter().map(|n| gamma(1.0 - n)).collect();
        let theta_outer_d1 = norms.iter().map(|n| gamma_d1(1.0 - n)).collect();
        ThetaCache { gam, gam_d1, norms, theta, theta_outer_d1 }
    }

    /// `mu_i = Gamma(|x_i|) Gamma'(|x_i|) sgn(x_i)`, the common factor of
    /// every `grad_i Theta_j`.
    pub fn mu(&self, x: &[f64], i: usize) -> f64 {
        let s = if x[i] > 0.0 {
            1.0
        } else if x[i] < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.gam[i] * self.gam_d1[i] * s
    }

    /// `grad Theta_j` for 0-based `j`.
    pub fn gradient(&self, x: &[f64], j: usize) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let n = self.norms[j];
        if n <= THETA_NORM_FLOOR {
            return g;
        }
        let outer = self.theta_outer_d1[j];
        if outer == 0.0 {
            return g;
        }
        for i in j..x.len() {
            g[i] = -outer * self.mu(x, i) / n;
        }
        g
    }
}

fn check_theta_index(j: usize, len: usize) -> Result<()> {
    if j == 0 || j > len {
        return Err(Error::IndexOutOfRange { index: j as u64, len: len as u64 });
    }
    Ok(())
}

/// `Theta_j(x)` with 1-based `j`.
pub fn theta(j: usize, x: &[f64]) -> Result<f64> {
    check_theta_index(j, x.len())?;
    let n: f64 = x[j - 1..]
        .iter()
        .map(|v| {
            let g = gamma(v.abs());
            g * g
        })
        .sum::<f64>()
        .sqrt();
    Ok(gamma(1.0 - n))
}

/// `grad Theta_j(x)` with 1-based `j`.
pub fn theta_gradient(j: usize, x: &[f64]) -> Result<Vec<f64>> {
    check_theta_index(j, x.len())?;
    let cache = ThetaCache::new(x);
    Ok(cache.gradient(x, j - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PHI0: f64 = 2.066_365_677_061_246;
    const PHI1: f64 = 3.477_051_811_703_69;
    const SQRT_E: f64 = 1.648_721_270_700_128;

    #[test]
    fn progress_examples() {
        assert_eq!(progress(&[0.0; 7], 0.3), 0);
        assert_eq!(progress(&[1.0, 0.6, 0.3], 0.5), 2);
        assert_eq!(progress(&[0.2, 0.9, 0.0], 0.0), 2);
        // strict inequality
        assert_eq!(progress(&[0.5], 0.5), 0);
    }

    #[test]
    fn support_examples() {
        assert!(support(&[0.0, 0.0, 0.0]).is_empty());
        assert_eq!(support(&[0.0, 3.0, 0.0]), vec![2]);
    }

    #[test]
    fn value_examples() {
        let f5 = ChainFunction::new(5).unwrap();
        assert!((f5.value(&[0.0; 5]).unwrap() + PHI0).abs() < 1e-12);
        let f2 = ChainFunction::new(2).unwrap();
        assert!((f2.value(&[1.0, 1.0]).unwrap() + 2.0 * PHI1).abs() < 1e-12);
        let f1 = ChainFunction::new(1).unwrap();
        for t in [-2.0, -0.3, 0.0, 0.8, 3.0] {
            assert!((f1.value(&[t]).unwrap() + phi(t)).abs() < 1e-14);
        }
        assert!(matches!(f2.value(&[0.0; 3]), Err(Error::DimensionMismatch { expected: 2, got: 3 })));
        assert!(ChainFunction::new(0).is_err());
    }

    #[test]
    fn gradient_at_origin() {
        let f = ChainFunction::new(5).unwrap();
        let g = f.gradient(&[0.0; 5]).unwrap();
        assert!((g[0] + SQRT_E).abs() < 1e-14);
        assert!(g[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hessian_at_origin_has_zero_off_band() {
        let f = ChainFunction::new(3).unwrap();
        let (diag, off) = f.hessian_bands(&[0.0; 3]).unwrap();
        assert_eq!(off, vec![0.0, 0.0]);
        assert_eq!(diag, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn link_terms_examples() {
        let z = link_terms(0.0, 0.0);
        assert_eq!((z.h, z.h1, z.h2), (0.0, 0.0, 0.0));
        let l = link_terms(1.0, 0.0);
        assert!((l.h + PHI0).abs() < 1e-12);
        assert!((l.h1 - SQRT_E).abs() < 1e-14);
        assert!((l.h2 - 4.0 * PHI0).abs() < 1e-12);
        for (a, b) in [(0.7, -0.2), (-1.3, 2.0), (0.55, 0.55)] {
            assert!((link_terms(-a, -b).h + link_terms(a, b).h).abs() < 1e-14);
        }
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta(2, &[0.0; 4]).unwrap(), 1.0);
        assert_eq!(theta(1, &[0.7, 0.0]).unwrap(), 0.0);
        assert!(theta_gradient(3, &[0.0; 4]).unwrap().iter().all(|v| *v == 0.0));
        assert!(matches!(theta(0, &[0.0; 2]), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(theta(3, &[0.0; 2]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn theta_cache_matches_direct() {
        let x = [0.31, -0.42, 0.05, 0.38, -0.27];
        let c = ThetaCache::new(&x);
        for j in 1..=5 {
            assert!((c.theta[j - 1] - theta(j, &x).unwrap()).abs() < 1e-15);
        }
    }
}
