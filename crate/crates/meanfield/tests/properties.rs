use meanfield::certificates::{build_reference_function_with, InitialLaw, QuadratureSettings};
use meanfield::metrics::{
    d_l1, fit_decay_rate, gaussian_quantile, w1_1d, w1_oracle, EmpiricalMeasure, GroundMetric,
};
use meanfield::par::Workers;
use meanfield::potentials::{make_builtin, ModelKind};
use meanfield::simulator::{lambda_pi, reflect, step_particles, Ensemble};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::Gaussian), Just(ModelKind::CurieWeiss), Just(ModelKind::DoubleWell)]
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn measure(max: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    (1..=max).prop_flat_map(|n| {
        (prop::collection::vec(-5.0f64..5.0, n), weights(n))
            .prop_map(|(a, w)| EmpiricalMeasure::weighted(a, 1, w).unwrap())
    })
}

proptest! {
    #[test]
    fn synchronous_and_reflection_weights_are_unit(r in 0.0f64..3.0, delta in 1e-3f64..2.0) {
        let (lam, pi) = lambda_pi(r, delta);
        prop_assert!((lam * lam + pi * pi - 1.0).abs() < 1e-14);
        prop_assert!((0.0..=1.0).contains(&lam) && (0.0..=1.0).contains(&pi));
        if r >= delta { prop_assert_eq!(lam, 1.0); }
        if r <= delta / 2.0 { prop_assert_eq!(lam, 0.0); }
        let (lam2, _) = lambda_pi(r + 1e-3, delta);
        prop_assert!(lam2 >= lam);
    }

    #[test]
    fn reflection_is_isometric_involution(
        e in prop::collection::vec(-1.0f64..1.0, 3),
        xi in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let e: Vec<f64> = e.iter().map(|v| v / norm).collect();
        let mut once = vec![0.0; 3];
        let mut twice = vec![0.0; 3];
        reflect(&e, &xi, &mut once);
        reflect(&e, &once, &mut twice);
        let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        prop_assert!((sq(&once) - sq(&xi)).abs() < 1e-12);
        for (a, b) in twice.iter().zip(&xi) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let along = |v: &[f64]| v.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!((along(&once) + along(&xi)).abs() < 1e-12);
    }

    #[test]
    fn w1_1d_matches_transport_oracle(mu in measure(6), nu in measure(6)) {
        let fast = w1_1d(&mu, &nu).unwrap();
        let exact = w1_oracle(&mu, &nu, GroundMetric::Euclidean).unwrap();
        prop_assert!((fast - exact).abs() < 1e-9 * (1.0 + exact), "{} vs {}", fast, exact);
    }

    #[test]
    fn w1_is_a_metric(a in measure(8), b in measure(8), c in measure(8)) {
        let ab = w1_1d(&a, &b).unwrap();
        let ba = w1_1d(&b, &a).unwrap();
        let bc = w1_1d(&b, &c).unwrap();
        let ac = w1_1d(&a, &c).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(w1_1d(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn product_transport_tensorizes(mu in measure(2), mu2 in measure(2), nu in measure(2), nu2 in measure(2)) {
        let product = |a: &EmpiricalMeasure, b: &EmpiricalMeasure| {
            let mut atoms = Vec::new();
            let mut w = Vec::new();
            for i in 0..a.len() {
                for j in 0..b.len() {
                    atoms.extend([a.atom(i)[0], b.atom(j)[0]]);
                    w.push(a.weights()[i] * b.weights()[j]);
                }
            }
            EmpiricalMeasure::weighted(atoms, 2, w).unwrap()
        };
        let joint = w1_oracle(&product(&mu, &nu), &product(&mu2, &nu2), GroundMetric::BlockL1 { block_dim: 1 }).unwrap();
        let first = w1_1d(&mu, &mu2).unwrap();
        let second = w1_1d(&nu, &nu2).unwrap();
        prop_assert!(joint <= first + second + 1e-9);
        prop_assert!(joint >= first.max(second) - 1e-9);
    }

    #[test]
    fn block_l1_is_a_metric(
        x in prop::collection::vec(-4.0f64..4.0, 6),
        y in prop::collection::vec(-4.0f64..4.0, 6),
        z in prop::collection::vec(-4.0f64..4.0, 6),
    ) {
        let xy = d_l1(&x, &y, 2).unwrap();
        prop_assert!((xy - d_l1(&y, &x, 2).unwrap()).abs() < 1e-12);
        prop_assert!(d_l1(&x, &z, 2).unwrap() <= xy + d_l1(&y, &z, 2).unwrap() + 1e-12);
        prop_assert_eq!(d_l1(&x, &x, 2).unwrap(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences(
        kind in kind(),
        beta in 0.2f64..3.0,
        k in -0.5f64..0.5,
        x in -2.5f64..2.5,
        y in -2.5f64..2.5,
    ) {
        let m = make_builtin(kind, beta, k, 1).unwrap();
        let h = 1e-5;
        let mut g = [0.0];
        m.grad_v(&[x], &mut g);
        let fd = (m.potential_v(&[x + h]).unwrap() - m.potential_v(&[x - h]).unwrap()) / (2.0 * h);
        prop_assert!((g[0] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{} vs {}", g[0], fd);
        m.grad_xw(&[x], &[y], &mut g);
        let fd = (m.potential_w(&[x + h], &[y]).unwrap() - m.potential_w(&[x - h], &[y]).unwrap()) / (2.0 * h);
        prop_assert!((g[0] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{} vs {}", g[0], fd);
    }

    #[test]
    fn confinement_profile_bounds_drift_difference(
        kind in kind(),
        beta in 0.2f64..3.0,
        k in -0.5f64..0.5,
        x in -4.0f64..4.0,
        y in -4.0f64..4.0,
    ) {
        prop_assume!((x - y).abs() > 1e-6);
        let m = make_builtin(kind, beta, k, 1).unwrap();
        // Self-part of the pair force: grad_x W(x, 0).
        let drift = |p: f64| {
            let (mut gv, mut gw) = ([0.0], [0.0]);
            m.grad_v(&[p], &mut gv);
            m.grad_xw(&[p], &[0.0], &mut gw);
            -(gv[0] + gw[0])
        };
        let r = (x - y).abs();
        let lhs = (x - y) * (drift(x) - drift(y)) / r;
        prop_assert!(lhs <= m.b0(r) + 1e-9 * (1.0 + lhs.abs()), "{} > {}", lhs, m.b0(r));
    }

    #[test]
    fn decay_fit_recovers_exponentials(rate in 0.05f64..5.0, pre in 0.1f64..10.0) {
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|t| pre * (-rate * t).exp()).collect();
        let fit = fit_decay_rate(&times, &values).unwrap();
        prop_assert!((fit.rate - rate).abs() < 1e-9);
        prop_assert!((fit.prefactor - pre).abs() < 1e-9 * pre);
    }

    #[test]
    fn quantile_inverts_normal_cdf(p in 1e-10f64..(1.0 - 1e-10)) {
        let q = gaussian_quantile(p);
        let cdf = 0.5 * libm::erfc(-q / std::f64::consts::SQRT_2);
        prop_assert!((cdf - p).abs() < 1e-13 + 1e-12 * p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stepping_is_independent_of_worker_count(seed in any::<u64>(), n in 1usize..70, steps in 1usize..6) {
        let model = make_builtin(ModelKind::DoubleWell, 1.0, 0.2, 1).unwrap();
        let law = InitialLaw::IsotropicGaussian { variance: 1.0 };
        let run = |workers: usize| {
            let pool = Workers::new(workers);
            let mut ens = Ensemble::sample(n, 1, &law, seed).unwrap();
            for _ in 0..steps {
                pool.install(|| step_particles(&model, &mut ens, 1e-2)).unwrap();
            }
            ens.positions().to_vec()
        };
        prop_assert_eq!(run(1), run(3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reference_derivative_converges_under_refinement(
        kind in kind(),
        beta in 0.5f64..3.0,
        r in 0.0f64..6.0,
    ) {
        let m = make_builtin(kind, beta, 0.0, 1).unwrap();
        let coarse = QuadratureSettings { grid_step: 10.0 / 1024.0, ..QuadratureSettings::default() };
        let fine = QuadratureSettings { grid_step: 10.0 / 8192.0, ..QuadratureSettings::default() };
        let a = build_reference_function_with(&m, &coarse).unwrap();
        let b = build_reference_function_with(&m, &fine).unwrap();
        let (ha, hb) = (a.hprime_at(r), b.hprime_at(r));
        prop_assert!((ha - hb).abs() < 1e-5 * hb.abs().max(1.0), "{} vs {}", ha, hb);
        prop_assert!((a.h_at(r) - b.h_at(r)).abs() < 1e-5 * (1.0 + r));
    }
}
