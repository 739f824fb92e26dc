use std::sync::Arc;

use proptest::prelude::*;
use zerochain::audit::fd_gradient_check;
use zerochain::chain::{progress, progress_computed, theta, ChainFunction, ZERO_TOL};
use zerochain::kernels::{eval_kernel, Kernel};
use zerochain::oracles::{
    closed_form_moments, g_basic, g_smooth, g_stat, zeta, ChainEstimator, ChainOracle, Permutation, Seed,
    StochasticOracle,
};
use zerochain::protocol::{run, run_instance, stationarity_time, zero_respecting_audit, Trace};
use zerochain::solvers::{Sgd, Spider, SolverConfig, SpiderConfig};
use zerochain::transforms::{
    build_instance, sample_rotation, soft_project, InstanceKind, InstanceSpec,
};

fn chain_point(t: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-3.0f64..3.0, t), 0..=t, prop::bool::ANY).prop_map(|(mut x, m, zero)| {
        for v in x.iter_mut().skip(m) {
            *v = if zero { 0.0 } else { *v / 12.0 };
        }
        x
    })
}

fn sized_chain_point() -> impl Strategy<Value = Vec<f64>> {
    (1usize..16).prop_flat_map(chain_point)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gamma_plateaus(t in -5.0f64..5.0) {
        let v = eval_kernel(Kernel::Gamma, 0, t).unwrap();
        let d = eval_kernel(Kernel::Gamma, 1, t).unwrap();
        if t <= 0.25 {
            prop_assert_eq!((v, d), (0.0, 0.0));
        }
        if t >= 0.5 {
            prop_assert_eq!((v, d), (1.0, 0.0));
        }
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn kernels_nondecreasing(t in -5.0f64..5.0) {
        for k in [Kernel::Gamma, Kernel::Psi, Kernel::Phi] {
            prop_assert!(eval_kernel(k, 1, t).unwrap() >= 0.0);
        }
    }

    #[test]
    fn chain_zero_chain_and_large_gradient(x in sized_chain_point()) {
        let t = x.len();
        let f = ChainFunction::new(t).unwrap();
        let g = f.gradient(&x).unwrap();
        prop_assert!(progress_computed(&g) <= progress(&x, 0.5) + 1);
        let j = progress(&x, 1.0);
        if j < t {
            prop_assert!(g[j].abs() > 1.0);
        }
        prop_assert!(g.iter().all(|v| v.abs() <= 23.0));
    }

    #[test]
    fn hessian_bands_match_gradient_differences(x in chain_point(6)) {
        let f = ChainFunction::new(6).unwrap();
        let (diag, off) = f.hessian_bands(&x).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut up = x.clone();
            up[i] += h;
            let mut dn = x.clone();
            dn[i] -= h;
            let (gu, gd) = (f.gradient(&up).unwrap(), f.gradient(&dn).unwrap());
            let col: Vec<f64> = gu.iter().zip(&gd).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            prop_assert!((col[i] - diag[i]).abs() <= 1e-4 * (1.0 + diag[i].abs()));
            if i + 1 < 6 {
                prop_assert!((col[i + 1] - off[i]).abs() <= 1e-4 * (1.0 + off[i].abs()));
            }
            for (r, c) in col.iter().enumerate() {
                if r + 1 < i || r > i + 1 {
                    prop_assert!(c.abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn theta_stays_between_indicators(x in chain_point(8), j in 1usize..=8) {
        let th = theta(j, &x).unwrap();
        let lo = if j > progress(&x, 0.25) { 1.0 } else { 0.0 };
        let hi = if j > progress(&x, 0.5) { 1.0 } else { 0.0 };
        prop_assert!(lo <= th && th <= hi);
    }

    #[test]
    fn estimators_are_probability_p_zero_chains(x in sized_chain_point(), p in 0.01f64..=1.0) {
        let f = ChainFunction::new(x.len()).unwrap();
        let gate = progress(&x, 0.25);
        for est in [g_basic, g_smooth, g_stat] {
            prop_assert!(progress_computed(&est(&f, p, &x, false).unwrap()) <= gate);
            prop_assert!(progress_computed(&est(&f, p, &x, true).unwrap()) <= gate + 1);
        }
    }

    #[test]
    fn chain_oracles_unbiased(x in chain_point(7), p in 0.01f64..=1.0) {
        for est in [ChainEstimator::Basic, ChainEstimator::Smooth, ChainEstimator::Stat] {
            let o = ChainOracle::new(7, p, est).unwrap();
            let m = closed_form_moments(&o, &x).unwrap();
            let g = o.gradient(&x).unwrap();
            for (a, b) in m.mean.iter().zip(&g) {
                prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
            }
            prop_assert!(m.variance <= o.certificate().sigma2 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn feistel_permutation_is_bijective_on_samples(size in 1_000_001u64..1u64 << 40, key in any::<u64>(), ks in prop::collection::vec(1u64..1_000_000, 20)) {
        let pi = Permutation::random(size, key).unwrap();
        let mut seen = std::collections::HashSet::new();
        for k in ks {
            let v = pi.apply(k).unwrap();
            prop_assert!((1..=size).contains(&v));
            seen.insert((k, v));
        }
        let images: std::collections::HashSet<u64> = seen.iter().map(|(_, v)| *v).collect();
        let preimages: std::collections::HashSet<u64> = seen.iter().map(|(k, _)| *k).collect();
        prop_assert_eq!(images.len(), preimages.len());
    }

    #[test]
    fn zeta_bits_match_digits(n in 2u64..6, t in 1usize..6, k0 in any::<u64>()) {
        let size = n.pow(t as u32);
        let k = k0 % size + 1;
        let bits = zeta(k, n, t).unwrap();
        let mut r = k - 1;
        for b in bits {
            prop_assert_eq!(b, r % n == 0);
            r /= n;
        }
    }

    #[test]
    fn soft_projection_inside_ball(x in prop::collection::vec(-1e3f64..1e3, 1..12), r in 0.1f64..100.0) {
        let s = soft_project(&x, r).unwrap();
        prop_assert!(s.rho.iter().map(|v| v * v).sum::<f64>().sqrt() < r);
    }

    #[test]
    fn rotation_columns_orthonormal(t in 1usize..8, extra in 0usize..12, seed in any::<u64>()) {
        let u = sample_rotation(t + extra, t, seed).unwrap();
        prop_assert!(u.orthonormality_error() <= 1e-10);
    }

    #[test]
    fn instance_spec_round_trips(eps in 0.01f64..1.0, delta in 1.0f64..1e6, sigma2 in 0.1f64..1e5, seed in any::<u64>()) {
        let mut spec = InstanceSpec::new(InstanceKind::RandMss, eps, delta, 3.0, sigma2);
        spec.seed = seed;
        spec.d = Some(17);
        let back = InstanceSpec::from_canonical_str(&spec.to_canonical_string()).unwrap();
        prop_assert_eq!(back, spec);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scaled_instance_large_gradient(y in chain_point(12), eps in 0.2f64..0.5) {
        let spec = InstanceSpec::new(InstanceKind::ZrBv, eps, 12.0 * 7296.0 * 0.25, 1.0, 100.0);
        let inst = build_instance(&spec).unwrap();
        let sp = inst.scale.unwrap();
        let y: Vec<f64> = y.into_iter().cycle().take(sp.t).collect();
        prop_assume!(progress(&y, 1.0) < sp.t);
        let x: Vec<f64> = y.iter().map(|v| v * sp.lambda).collect();
        let g = inst.oracle.gradient(&x).unwrap();
        prop_assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() > 2.0 * eps);
    }

    #[test]
    fn rotated_gradient_matches_finite_differences(seed in any::<u64>()) {
        let t = 5;
        let u = sample_rotation(12, t, seed).unwrap();
        let f = ChainFunction::new(t).unwrap();
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|i| u.lift(&(0..t).map(|j| ((i * 7 + j * 3) % 11) as f64 / 4.0 - 1.2).collect::<Vec<_>>()))
            .collect();
        let worst = fd_gradient_check(
            |x| f.value(&u.project(x)).unwrap(),
            |x| u.lift(&f.gradient(&u.project(x)).unwrap()),
            &pts,
            1e-6,
        );
        prop_assert!(worst <= 1e-6, "{}", worst);
    }

    #[test]
    fn recorded_rounds_share_one_seed(run_seed in any::<u64>()) {
        let spec = InstanceSpec::new(InstanceKind::ZrMss, 0.3, 6000.0, 1.0, 400.0);
        let inst = build_instance(&spec).unwrap();
        let mut alg = Spider::from_noise(0.3, 1.0, 400.0, 0.01, Some(4));
        let trace = run_instance(&mut alg, &inst, 60, run_seed).unwrap();
        for round in &trace.rounds {
            for (x, r) in round.points.iter().zip(&round.responses) {
                let again = inst.oracle.respond(x, &round.seed).unwrap();
                prop_assert_eq!(again.value.to_bits(), r.value.to_bits());
                prop_assert!(again.gradient.iter().zip(&r.gradient).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
        prop_assert_eq!(Trace::from_text(&trace.to_text()).unwrap(), trace);
    }
}

#[test]
fn baseline_solvers_are_zero_respecting() {
    let bv = build_instance(&InstanceSpec::new(InstanceKind::ZrBv, 0.3, 6000.0, 1.0, 3000.0)).unwrap();
    let mut sgd = Sgd::new(1.0, 2000);
    let trace = run_instance(&mut sgd, &bv, 2001, 5).unwrap();
    assert!(zero_respecting_audit(&trace).is_empty());
    assert!(trace.rounds.iter().any(|r| progress_computed(&r.responses[0].gradient) > 1));

    let mss = build_instance(&InstanceSpec::new(InstanceKind::ZrMss, 0.3, 6000.0, 1.0, 400.0)).unwrap();
    let mut spider = Spider::from_noise(0.3, 1.0, 400.0, 0.05, None);
    let trace = run_instance(&mut spider, &mss, 3000, 9).unwrap();
    assert!(zero_respecting_audit(&trace).is_empty());
    assert!(trace.rounds.iter().all(|r| r.responses.iter().all(|g| g.gradient.iter().all(|v| v.is_finite()))));
}

#[test]
fn doubling_the_round_cap_never_delays_stationarity() {
    let spec = InstanceSpec::new(InstanceKind::ZrMss, 0.4, 6000.0, 1.0, 400.0);
    let inst = build_instance(&spec).unwrap();
    let cfg = SolverConfig::Spider(SpiderConfig { eps: None, batch_mult: 0.2, epoch: None, max_rounds: 0 });
    let mut previous: Option<usize> = None;
    for cap in [2_000u64, 4_000, 8_000, 16_000, 32_000, 64_000] {
        let mut alg = cfg.build(&spec).unwrap();
        let trace = run(alg.as_mut(), inst.oracle.as_ref(), cap, 3).unwrap();
        let st = stationarity_time(&trace, inst.oracle.as_ref(), spec.eps).unwrap();
        if let Some(p) = previous {
            assert_eq!(st, Some(p));
        }
        previous = previous.or(st);
    }
    assert!(previous.is_some());
}

#[test]
fn built_instances_honor_their_certificates() {
    let kinds = [
        InstanceSpec::new(InstanceKind::ZrBv, 0.3, 6000.0, 1.0, 3000.0),
        InstanceSpec::new(InstanceKind::ZrMss, 0.3, 6000.0, 1.0, 400.0),
        InstanceSpec::new(InstanceKind::RandBv, 0.3, 30000.0, 1.0, 3000.0),
        InstanceSpec::new(InstanceKind::RandMss, 0.3, 60000.0, 1.0, 3000.0),
        InstanceSpec::new(InstanceKind::Stat, 0.3, 6000.0, 1.0, 1e7),
        InstanceSpec::new(InstanceKind::Active, 0.3, 6000.0, 1.0, 3000.0),
    ];
    for spec in kinds {
        let inst = build_instance(&spec).unwrap();
        let cert = *inst.certificate();
        let sp = inst.scale.unwrap();
        let d = inst.dim();
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..30 {
            let x: Vec<f64> = (0..d).map(|_| 1.5 * sp.lambda * next()).collect();
            let y: Vec<f64> = x.iter().map(|v| v + 1e-2 * sp.lambda * next()).collect();
            let g = inst.oracle.gradient(&x).unwrap();
            if let Ok(m) = closed_form_moments(inst.oracle.as_ref(), &x) {
                assert!(m.variance <= cert.sigma2 * (1.0 + 1e-9), "{:?}", spec.kind);
                for (a, b) in m.mean.iter().zip(&g) {
                    assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{:?}", spec.kind);
                }
            }
            let dxy = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let gy = inst.oracle.gradient(&y).unwrap();
            let dg = g.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dg <= cert.lip * dxy * (1.0 + 1e-9), "{:?}: {} > {}", spec.kind, dg / dxy, cert.lip);
            if let Some(lbar) = cert.lbar {
                if let Ok(mss) = zerochain::oracles::closed_form_mss(inst.oracle.as_ref(), &x, &y) {
                    assert!(mss <= lbar * lbar * dxy * dxy * (1.0 + 1e-9), "{:?}", spec.kind);
                }
            }
        }
    }
}

#[test]
fn zero_step_sgd_stays_at_origin_on_chain() {
    let o = ChainOracle::new(4, 0.5, ChainEstimator::Basic).unwrap();
    let mut sgd = Sgd::new(0.0, 10);
    let trace = run(&mut sgd, &o, 11, 1).unwrap();
    assert!(trace.rounds.iter().all(|r| r.points[0].iter().all(|v| *v == 0.0)));
    assert!(trace.rounds.iter().all(|r| matches!(r.seed, Seed::Bit(_))));
    assert!(trace.rounds.iter().all(|r| r.responses[0].gradient[1..].iter().all(|v| v.abs() <= ZERO_TOL)));
}

#[test]
fn shared_rotation_is_reusable_across_instances() {
    let u = Arc::new(sample_rotation(20, 5, 4).unwrap());
    let a = zerochain::transforms::CompressedInstance::new(u.clone(), 0.2).unwrap();
    let b = zerochain::transforms::CompressedInstance::new(u, 0.7).unwrap();
    let x = vec![0.3; 20];
    assert_eq!(a.value(&x).unwrap().to_bits(), b.value(&x).unwrap().to_bits());
}
