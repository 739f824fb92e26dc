//! Scalar building blocks of the hard function and the smoothed progress
//! indicator.
//!
//! * `Psi(t) = exp(1 - 1/(2t-1)^2)` for `t > 1/2`, zero otherwise.
//! * `Phi(t) = sqrt(e) * int_{-inf}^t exp(-s^2/2) ds`, evaluated through the
//!   normal CDF.
//! * `Lambda` is the bump `exp(-1/(100 (t-1/4)(1/2-t)))` supported on
//!   `(1/4, 1/2)`.
//! * `Gamma` is the normalized running integral of `Lambda`: zero below 1/4,
//!   one above 1/2, tabulated once on a uniform grid and interpolated with
//!   cubic Hermite segments (the slopes at the nodes are exact).
//!
//! All functions are pure; the `Gamma` table is built lazily on first use.

use std::sync::OnceLock;

use libm::erfc;

use crate::error::{Error, Result};

/// Exponents below this underflow `exp` to zero in double precision.
const EXP_UNDERFLOW: f64 = -745.0;

const SQRT_E: f64 = 1.648_721_270_700_128_1;
const SQRT_2PI_E: f64 = 4.132_731_354_122_492_5;

const GAMMA_LO: f64 = 0.25;
const GAMMA_HI: f64 = 0.5;
pub const GAMMA_TABLE_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    Psi,
    Phi,
    Lambda,
    Gamma,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Kernel::Psi, Kernel::Phi, Kernel::Lambda, Kernel::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Psi => "psi",
            Kernel::Phi => "phi",
            Kernel::Lambda => "lambda",
            Kernel::Gamma => "gamma",
        }
    }
}

/// Certified magnitude bounds for the kernels and their derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBoundTable {
    pub psi_max: f64,
    pub psi_d1_max: f64,
    pub psi_d2_max: f64,
    pub phi_max: f64,
    pub phi_d1_max: f64,
    pub phi_d2_max: f64,
    pub gamma_d1_max: f64,
    pub gamma_d2_max: f64,
}

impl KernelBoundTable {
    pub fn standard() -> Self {
        let e = std::f64::consts::E;
        KernelBoundTable {
            psi_max: e,
            psi_d1_max: (54.0 / e).sqrt(),
            psi_d2_max: 32.5,
            phi_max: (2.0 * std::f64::consts::PI * e).sqrt(),
            phi_d1_max: e.sqrt(),
            phi_d2_max: 1.0,
            gamma_d1_max: 6.0,
            gamma_d2_max: 128.0,
        }
    }

    /// Bound on `|kernel^(order)|`, where one is certified.
    pub fn bound(&self, kernel: Kernel, order: u8) -> Option<f64> {
        match (kernel, order) {
            (Kernel::Psi, 0) => Some(self.psi_max),
            (Kernel::Psi, 1) => Some(self.psi_d1_max),
            (Kernel::Psi, 2) => Some(self.psi_d2_max),
            (Kernel::Phi, 0) => Some(self.phi_max),
            (Kernel::Phi, 1) => Some(self.phi_d1_max),
            (Kernel::Phi, 2) => Some(self.phi_d2_max),
            (Kernel::Gamma, 0) => Some(1.0),
            (Kernel::Gamma, 1) => Some(self.gamma_d1_max),
            (Kernel::Gamma, 2) => Some(self.gamma_d2_max),
            _ => None,
        }
    }
}

/// Checked evaluation of a kernel or one of its first two derivatives.
pub fn eval_kernel(kernel: Kernel, order: u8, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("kernel argument must be finite, got {t}")));
    }
    let f = match order {
        0 => match kernel {
            Kernel::Psi => psi(t),
            Kernel::Phi => phi(t),
            Kernel::Lambda => lambda(t),
            Kernel::Gamma => gamma(t),
        },
        1 => match kernel {
            Kernel::Psi => psi_d1(t),
            Kernel::Phi => phi_d1(t),
            Kernel::Lambda => lambda_d1(t),
            Kernel::Gamma => gamma_d1(t),
        },
        2 => match kernel {
            Kernel::Psi => psi_d2(t),
            Kernel::Phi => phi_d2(t),
            Kernel::Lambda => lambda_d2(t),
            Kernel::Gamma => gamma_d2(t),
        },
        _ => return Err(Error::Argument(format!("derivative order must be 0, 1 or 2, got {order}"))),
    };
    Ok(f)
}

// ---------------------------------------------------------------- Psi

#[inline]
pub fn psi(t: f64) -> f64 {
    if t <= 0.5 {
        return 0.0;
    }
    let u = 2.0 * t - 1.0;
    let ex = 1.0 - 1.0 / (u * u);
    if ex < EXP_UNDERFLOW {
        0.0
    } else {
        ex.exp()
    }
}

#[inline]
pub fn psi_d1(t: f64) -> f64 {
    let v = psi(t);
    if v == 0.0 {
        return 0.0;
    }
    let u = 2.0 * t - 1.0;
    v * 4.0 / (u * u * u)
}

#[inline]
pub fn psi_d2(t: f64) -> f64 {
    let v = psi(t);
    if v == 0.0 {
        return 0.0;
    }
    let u = 2.0 * t - 1.0;
    let u2 = u * u;
    let u4 = u2 * u2;
    v * (16.0 / (u4 * u2) - 24.0 / u4)
}

// ---------------------------------------------------------------- Phi

#[inline]
pub fn phi(t: f64) -> f64 {
    SQRT_2PI_E * 0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

#[inline]
pub fn phi_d1(t: f64) -> f64 {
    SQRT_E * (-0.5 * t * t).exp()
}

#[inline]
pub fn phi_d2(t: f64) -> f64 {
    -t * phi_d1(t)
}

// ---------------------------------------------------------------- Lambda

#[inline]
fn lambda_gap(t: f64) -> f64 {
    (t - GAMMA_LO) * (GAMMA_HI - t)
}

#[inline]
pub fn lambda(t: f64) -> f64 {
    if t <= GAMMA_LO || t >= GAMMA_HI {
        return 0.0;
    }
    let ex = -1.0 / (100.0 * lambda_gap(t));
    if ex < EXP_UNDERFLOW {
        0.0
    } else {
        ex.exp()
    }
}

/// `Lambda'(t) = Lambda(t) * q'(t) / (100 q(t)^2)` with `q = (t-1/4)(1/2-t)`.
#[inline]
pub fn lambda_d1(t: f64) -> f64 {
    let v = lambda(t);
    if v == 0.0 {
        return 0.0;
    }
    let q = lambda_gap(t);
    let dq = 0.75 - 2.0 * t;
    v * dq / (100.0 * q * q)
}

#[inline]
pub fn lambda_d2(t: f64) -> f64 {
    let v = lambda(t);
    if v == 0.0 {
        return 0.0;
    }
    let q = lambda_gap(t);
    let dq = 0.75 - 2.0 * t;
    // w = q'/(100 q^2);  w' = (q'' q - 2 q'^2) / (100 q^3), q'' = -2
    let w = dq / (100.0 * q * q);
    let dw = (-2.0 * q - 2.0 * dq * dq) / (100.0 * q * q * q);
    v * (w * w + dw)
}

// ---------------------------------------------------------------- Gamma

struct GammaTable {
    step: f64,
    norm: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

fn gamma_table() -> &'static GammaTable {
    static TABLE: OnceLock<GammaTable> = OnceLock::new();
    TABLE.get_or_init(build_gamma_table)
}

fn build_gamma_table() -> GammaTable {
    let n = GAMMA_TABLE_POINTS;
    let step = (GAMMA_HI - GAMMA_LO) / (n - 1) as f64;
    let mut cumulative = Vec::with_capacity(n);
    cumulative.push(0.0);
    let mut acc = 0.0;
    for k in 1..n {
        let a = GAMMA_LO + (k - 1) as f64 * step;
        let b = if k == n - 1 { GAMMA_HI } else { GAMMA_LO + k as f64 * step };
        acc += adaptive_simpson(lambda, a, b, 1e-16);
        cumulative.push(acc);
    }
    let norm = acc;
    let values: Vec<f64> = cumulative.iter().map(|c| c / norm).collect();
    let slopes: Vec<f64> = (0..n)
        .map(|k| lambda(GAMMA_LO + k as f64 * step) / norm)
        .collect();
    GammaTable { step, norm, values, slopes }
}

/// `int_{1/4}^{1/2} Lambda`, the normalizer shared by `Gamma` and its
/// derivatives.
pub fn gamma_normalizer() -> f64 {
    gamma_table().norm
}

#[inline]
pub fn gamma(t: f64) -> f64 {
    if t <= GAMMA_LO {
        return 0.0;
    }
    if t >= GAMMA_HI {
        return 1.0;
    }
    let tab = gamma_table();
    let s = (t - GAMMA_LO) / tab.step;
    let k = (s.floor() as usize).min(GAMMA_TABLE_POINTS - 2);
    let u = s - k as f64;
    let (y0, y1) = (tab.values[k], tab.values[k + 1]);
    let (m0, m1) = (tab.slopes[k] * tab.step, tab.slopes[k + 1] * tab.step);
    let u2 = u * u;
    let u3 = u2 * u;
    let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
    let h10 = u3 - 2.0 * u2 + u;
    let h01 = -2.0 * u3 + 3.0 * u2;
    let h11 = u3 - u2;
    (h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1).clamp(0.0, 1.0)
}

#[inline]
pub fn gamma_d1(t: f64) -> f64 {
    lambda(t) / gamma_normalizer()
}

#[inline]
pub fn gamma_d2(t: f64) -> f64 {
    lambda_d1(t) / gamma_normalizer()
}

/// `Gamma(t)` by direct quadrature of `Lambda`, bypassing the table.
pub fn gamma_by_quadrature(t: f64) -> f64 {
    if t <= GAMMA_LO {
        return 0.0;
    }
    if t >= GAMMA_HI {
        return 1.0;
    }
    adaptive_simpson(lambda, GAMMA_LO, t, 1e-14) / adaptive_simpson(lambda, GAMMA_LO, GAMMA_HI, 1e-14)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Force a few levels of refinement: Simpson on a bump can report a tiny
    // error estimate on the very first split.
    let mut total = 0.0;
    let pieces = 8;
    let width = (b - a) / pieces as f64;
    if width > 1e-3 {
        for i in 0..pieces {
            let lo = a + i as f64 * width;
            let hi = if i == pieces - 1 { b } else { lo + width };
            let (flo, fhi) = (f(lo), f(hi));
            let fmid = f(0.5 * (lo + hi));
            let w = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            total += recurse(&f, lo, hi, flo, fmid, fhi, w, tol / pieces as f64, 48);
        }
        return total;
    }
    recurse(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_values() {
        assert_eq!(eval_kernel(Kernel::Psi, 0, 0.5).unwrap(), 0.0);
        assert_eq!(eval_kernel(Kernel::Psi, 0, 1.0).unwrap(), 1.0);
        assert_eq!(psi(-3.0), 0.0);
        // exponent underflow right above 1/2 returns exact zero, not NaN
        let t = 0.5 + 1e-10;
        assert_eq!(psi(t), 0.0);
        assert_eq!(psi_d1(t), 0.0);
        assert_eq!(psi_d2(t), 0.0);
    }

    #[test]
    fn phi_at_zero_matches_quadrature() {
        // sqrt(e) * int_{-inf}^0 exp(-s^2/2) ds = sqrt(pi e / 2)
        let q = SQRT_E * adaptive_simpson(|s| (-0.5 * s * s).exp(), -40.0, 0.0, 1e-14);
        let v = eval_kernel(Kernel::Phi, 0, 0.0).unwrap();
        assert!((v - 2.066_365_677_061_246).abs() < 1e-12, "{v}");
        assert!((v - q).abs() < 1e-10);
    }

    #[test]
    fn gamma_landmarks() {
        assert_eq!(eval_kernel(Kernel::Gamma, 0, 0.25).unwrap(), 0.0);
        assert_eq!(eval_kernel(Kernel::Gamma, 0, 0.5).unwrap(), 1.0);
        let mid = eval_kernel(Kernel::Gamma, 0, 0.375).unwrap();
        assert!((mid - 0.5).abs() < 1e-10, "{mid}");
        assert!((gamma_normalizer() - 0.088_615_094_986_765_75).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(eval_kernel(Kernel::Psi, 0, f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(eval_kernel(Kernel::Phi, 1, f64::INFINITY), Err(Error::Domain(_))));
        assert!(matches!(eval_kernel(Kernel::Gamma, 3, 0.3), Err(Error::Argument(_))));
    }

    #[test]
    fn gamma_plateaus_on_grid() {
        for k in 0..=10_000 {
            let t = -5.0 + 5.25 * k as f64 / 10_000.0;
            assert_eq!(gamma(t), 0.0);
            assert_eq!(gamma_d1(t), 0.0);
            let s = 0.5 + 4.5 * k as f64 / 10_000.0;
            assert_eq!(gamma(s), 1.0);
            assert_eq!(gamma_d1(s), 0.0);
        }
    }

    #[test]
    fn table_agrees_with_direct_quadrature() {
        for k in 0..=200 {
            let t = 0.25 + 0.25 * k as f64 / 200.0 + 1.7e-5;
            let d = (gamma(t) - gamma_by_quadrature(t)).abs();
            assert!(d <= 1e-8, "t={t} diff={d}");
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        let cases: [(fn(f64) -> f64, fn(f64) -> f64, &str); 7] = [
            (psi, psi_d1, "psi'"),
            (psi_d1, psi_d2, "psi''"),
            (phi, phi_d1, "phi'"),
            (phi_d1, phi_d2, "phi''"),
            (lambda, lambda_d1, "lambda'"),
            (gamma, gamma_d1, "gamma'"),
            (gamma_d1, gamma_d2, "gamma''"),
        ];
        for (f, df, name) in cases {
            for k in 0..4000 {
                let t = -2.0 + 4.0 * (k as f64 + 0.37) / 4000.0;
                if [0.25, 0.5].iter().any(|b| (t - b).abs() < 1e-4) {
                    continue;
                }
                let fd = (f(t + h) - f(t - h)) / (2.0 * h);
                let an = df(t);
                let err = (fd - an).abs() / (1.0 + an.abs());
                assert!(err <= 1e-6, "{name} at {t}: fd={fd} analytic={an}");
            }
        }
    }
}
