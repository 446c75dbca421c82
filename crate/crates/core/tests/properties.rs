use faer::{c64, Mat};
use proptest::prelude::*;

use sensor_metrology::counting;
use sensor_metrology::fock::{self, HilbertSpec, Operator, Support};
use sensor_metrology::liouvillian::{
    build, param_derivative, vectorize, ModelConfig, SensorParams, SourceParams, Theta,
};
use sensor_metrology::metrology::{self, SearchOptions};
use sensor_metrology::steady;
use sensor_metrology::sweep::{self, Axis, AxisName, Quantity, Scale, SweepConfig};

fn source() -> impl Strategy<Value = SourceParams> {
    (-2.0..2.0f64, 0.2..2.0f64, 0.5..1.5f64).prop_map(|(d, o, g)| SourceParams::new(d, o, g))
}

fn sensor() -> impl Strategy<Value = SensorParams> {
    (-3.0..3.0f64, 0.2..2.0f64).prop_map(|(d, w)| SensorParams::new(d, w))
}

fn theta() -> impl Strategy<Value = Theta> {
    prop_oneof![Just(Theta::Delta), Just(Theta::Omega), Just(Theta::GammaDecay)]
}

fn one_sensor(n_exc: usize) -> impl Strategy<Value = ModelConfig> {
    (source(), sensor(), 0.05..1.0f64, theta())
        .prop_map(move |(src, s, eps, th)| ModelConfig::one_sensor(src, s, eps, n_exc, th).unwrap())
}

fn two_sensor(n_exc: usize) -> impl Strategy<Value = ModelConfig> {
    (source(), sensor(), sensor(), 0.05..1.0f64, theta())
        .prop_map(move |(src, a, b, eps, th)| ModelConfig::two_sensor(src, [a, b], eps, n_exc, th).unwrap())
}

fn alpha() -> impl Strategy<Value = c64> {
    (-1.5..1.5f64, -1.5..1.5f64).prop_map(|(re, im)| c64::new(re, im))
}

fn random_matrix(d: usize, seed: &[f64]) -> Mat<c64> {
    Mat::from_fn(d, d, |i, j| {
        let k = (i * d + j) % seed.len();
        c64::new(seed[k] * (1.0 + i as f64), seed[(k + 1) % seed.len()] - 0.3 * j as f64)
    })
}

fn hermitian(m: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

fn max_abs(m: &Mat<c64>) -> f64 {
    let mut out: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].norm());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partial_trace_is_linear_trace_preserving_and_hermitian(
        seed_a in prop::collection::vec(-1.0..1.0f64, 7),
        seed_b in prop::collection::vec(-1.0..1.0f64, 5),
        s in -2.0..2.0f64,
        two in any::<bool>(),
    ) {
        let spec = if two { HilbertSpec::two_sensor(2).unwrap() } else { HilbertSpec::one_sensor(3).unwrap() };
        let d = spec.total_dim();
        let a = random_matrix(d, &seed_a);
        let b = random_matrix(d, &seed_b);
        let op = |m: Mat<c64>| Operator::new(m, spec.clone(), Support::Full).unwrap();
        let combo = &a + &b * faer::Scale(c64::new(s, 0.0));
        let lhs = fock::partial_trace_to_sensors(&op(combo)).unwrap();
        let ta = fock::partial_trace_to_sensors(&op(a.clone())).unwrap();
        let tb = fock::partial_trace_to_sensors(&op(b)).unwrap();
        let rhs = ta.matrix() + tb.matrix() * faer::Scale(c64::new(s, 0.0));
        prop_assert!(max_abs(&(lhs.matrix() - &rhs)) < 1e-12);
        prop_assert!((ta.trace() - op(a.clone()).trace()).norm() < 1e-12);
        let h = fock::partial_trace_to_sensors(&op(hermitian(&a))).unwrap();
        prop_assert!(h.hermiticity_defect() < 1e-14);
    }

    #[test]
    fn displacement_columns_are_normalized(n in 0usize..10, re in -2.5..2.5f64, im in -2.5..2.5f64) {
        let a = c64::new(re, im);
        let cutoff = n + a.norm_sqr().ceil() as usize + 40;
        let col: f64 = (0..=cutoff).map(|m| fock::displacement_element(m, n, a).norm_sqr()).sum();
        let row: f64 = (0..=cutoff).map(|m| fock::displacement_element(n, m, a).norm_sqr()).sum();
        prop_assert!((col - 1.0).abs() < 1e-8, "column sum {}", col);
        prop_assert!((row - 1.0).abs() < 1e-8, "row sum {}", row);
    }

    #[test]
    fn generator_preserves_trace_and_hermiticity(
        cfg in prop_oneof![one_sensor(3), two_sensor(2)],
        seed in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let l = build(&cfg).unwrap();
        let worst = l.trace_row_product().iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-10);
        let d = l.hilbert_dim();
        let rho = hermitian(&random_matrix(d, &seed));
        let out = sensor_metrology::liouvillian::unvectorize(&l.apply_vec(&vectorize(&rho)), d);
        let defect = max_abs(&(&out - out.adjoint()));
        prop_assert!(defect < 1e-12 * max_abs(&out).max(1.0));
    }

    #[test]
    fn parameter_derivative_matches_finite_differences(cfg in prop_oneof![one_sensor(2), two_sensor(1)]) {
        let h = 1e-6;
        let dl = param_derivative(&cfg).unwrap().to_dense();
        let plus = build(&cfg.shifted(h)).unwrap().to_dense();
        let minus = build(&cfg.shifted(-h)).unwrap().to_dense();
        for j in 0..dl.ncols() {
            for i in 0..dl.nrows() {
                let fd = (plus[(i, j)] - minus[(i, j)]) * (0.5 / h);
                let exact = dl[(i, j)];
                if exact.norm().max(fd.norm()) >= 1e-8 {
                    prop_assert!((fd - exact).norm() <= 1e-6 * exact.norm().max(fd.norm()),
                        "entry ({}, {}): {:?} vs {:?}", i, j, exact, fd);
                }
            }
        }
    }

    #[test]
    fn each_sensor_of_the_pair_sees_half_the_emission(cfg in two_sensor(2)) {
        let pair = steady::solve(&cfg).unwrap();
        let (rho_s, _) = counting::sensor_states(&pair).unwrap();
        for i in 0..2 {
            let alone = ModelConfig::one_sensor(cfg.source, cfg.sensors[i], cfg.epsilon / 2.0, 2, cfg.theta).unwrap();
            let single = steady::solve(&alone).unwrap();
            let (rho_1, _) = counting::sensor_states(&single).unwrap();
            let reduced = fock::reduce_to_sensor(&rho_s, i).unwrap();
            prop_assert!(max_abs(&(&reduced - rho_1.matrix())) < 1e-9);
        }
    }

    #[test]
    fn stationary_state_is_physical_and_reproducible(cfg in prop_oneof![one_sensor(4), two_sensor(2)]) {
        let a = steady::solve(&cfg).unwrap();
        let b = steady::solve(&cfg).unwrap();
        prop_assert!(a.min_eigenvalue >= -1e-9);
        prop_assert!(a.rho_ss.matrix() == b.rho_ss.matrix());
        prop_assert!(a.drho_ss.matrix() == b.drho_ss.matrix());
    }

    #[test]
    fn joint_marginal_matches_single_sensor_statistics(cfg in two_sensor(2), a1 in alpha(), a2 in alpha()) {
        let sol = steady::solve(&cfg).unwrap();
        let marginal = counting::distribution(&sol, &[a1, a2]).unwrap().marginal(0).unwrap();
        let alone = ModelConfig::one_sensor(cfg.source, cfg.sensors[0], cfg.epsilon / 2.0, 2, cfg.theta).unwrap();
        let single = counting::distribution(&steady::solve(&alone).unwrap(), &[a1]).unwrap();
        prop_assert_eq!(&marginal.shape, &single.shape);
        for (x, y) in marginal.probs.iter().zip(&single.probs) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in marginal.dprobs.iter().zip(&single.dprobs) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn undisplaced_marginal_is_the_reduced_diagonal(cfg in two_sensor(2)) {
        let sol = steady::solve(&cfg).unwrap();
        let dist = counting::distribution(&sol, &[c64::new(0.0, 0.0); 2]).unwrap();
        let (rho_s, _) = counting::sensor_states(&sol).unwrap();
        for i in 0..2 {
            let reduced = fock::reduce_to_sensor(&rho_s, i).unwrap();
            let m = dist.marginal(i).unwrap();
            for (n, p) in m.probs.iter().enumerate() {
                prop_assert!((p - reduced[(n, n)].re).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn probability_derivatives_match_finite_differences(cfg in one_sensor(4), a in alpha()) {
        let h = 1e-5;
        let dist = counting::distribution(&steady::solve(&cfg).unwrap(), &[a]).unwrap();
        let plus = counting::distribution(&steady::solve(&cfg.shifted(h)).unwrap(), &[a]).unwrap();
        let minus = counting::distribution(&steady::solve(&cfg.shifted(-h)).unwrap(), &[a]).unwrap();
        let scale = dist.dprobs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let rows = dist.len().min(plus.len()).min(minus.len());
        for n in 0..rows {
            let fd = (plus.probs[n] - minus.probs[n]) / (2.0 * h);
            prop_assert!((fd - dist.dprobs[n]).abs() <= 1e-5 * scale, "n = {}: {} vs {}", n, dist.dprobs[n], fd);
        }
    }

    #[test]
    fn fisher_from_moments_equals_direct_fisher(cfg in prop_oneof![one_sensor(4), two_sensor(2)]) {
        let sol = steady::solve(&cfg).unwrap();
        let direct = metrology::classical_fisher(
            &counting::distribution(&sol, &vec![c64::new(0.0, 0.0); cfg.num_sensors()]).unwrap(),
        ).unwrap();
        let table = counting::full_moments(&sol).unwrap();
        let rebuilt = metrology::classical_fisher(&counting::distribution_from_moments(&table).unwrap()).unwrap();
        prop_assert!((direct - rebuilt).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn quantum_bound_chain(cfg in prop_oneof![one_sensor(4), two_sensor(2)], a in alpha(), b in alpha()) {
        let sol = steady::solve(&cfg).unwrap();
        let alphas = if cfg.num_sensors() == 1 { vec![a] } else { vec![a, b] };
        let qfi = metrology::sensor_quantum_fisher(&sol).unwrap();
        let cfi = metrology::fisher_at(&sol, &alphas).unwrap();
        let cfi0 = metrology::fisher_at(&sol, &vec![c64::new(0.0, 0.0); cfg.num_sensors()]).unwrap();
        let snr = metrology::photon_snr(&sol).unwrap();
        prop_assert!(qfi >= cfi - 1e-8 * qfi.max(1.0), "qfi {} < cfi {}", qfi, cfi);
        prop_assert!(cfi0 >= snr - 1e-8 * cfi0.max(1.0), "cfi {} < snr {}", cfi0, snr);
    }

    #[test]
    fn joint_counting_beats_the_average_marginal(cfg in two_sensor(2), a in alpha(), b in alpha()) {
        let dist = counting::distribution(&steady::solve(&cfg).unwrap(), &[a, b]).unwrap();
        let joint = metrology::classical_fisher(&dist).unwrap();
        let sum = metrology::uncorrelated_fisher(&dist).unwrap();
        prop_assert!(joint >= 0.5 * sum - 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn alpha_search_is_deterministic(cfg in one_sensor(3)) {
        let sol = steady::solve(&cfg).unwrap();
        let a = metrology::optimize_alpha(&cfg, &sol, &SearchOptions::default()).unwrap();
        let b = metrology::optimize_alpha(&cfg, &sol, &SearchOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sweep_rows_do_not_depend_on_workers(cfg in one_sensor(3), lo in -3.0..0.0f64, hi in 0.1..3.0f64) {
        let sweep = SweepConfig {
            base: cfg,
            axes: vec![Axis { name: AxisName::DeltaS1, start: lo, stop: hi, points: 5, scale: Scale::Linear }],
            quantities: vec![Quantity::Population, Quantity::Moments, Quantity::Cfi, Quantity::Qfi],
            output: None,
            truncation: None,
            alphas: None,
            convergence: Default::default(),
        };
        let one = sweep::run_sweep(&sweep, 1).unwrap();
        let three = sweep::run_sweep(&sweep, 3).unwrap();
        // Bitwise, so that NaN cells compare equal.
        let bits = |t: &sweep::SweepTable| -> Vec<Vec<u64>> {
            t.rows.iter().map(|r| r.values.iter().map(|v| v.to_bits()).collect()).collect()
        };
        prop_assert_eq!(bits(&one), bits(&three));
        let width = one.columns.len() - 1;
        prop_assert!(one.rows.iter().all(|r| r.values.len() == width && r.error.is_none()));
    }
}
