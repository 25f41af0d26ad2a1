use hennion_lab::algebra::{Element, Norm, StateKind, TracialAlgebra, C64};
use hennion_lab::cli::ExperimentConfig;
use hennion_lab::config::Tolerances;
use hennion_lab::fcs::{
    factorized_value, iterate_generator, psi_value, FcsMaps, GeneratorEnsemble, GeneratorEnsembleSpec, LocalObservable,
    PsiOptions,
};
use hennion_lab::hennion::{hennion_distance, m_quantity};
use hennion_lab::process::{DriverKind, ErgodicDriver};
use hennion_lab::qmaps::{contraction_estimate, EstimateOptions, SuperOperator};
use hennion_lab::rng::stream;
use proptest::prelude::*;

fn algebra(i: usize) -> TracialAlgebra {
    match i % 3 {
        0 => TracialAlgebra::full(2),
        1 => TracialAlgebra::full(3),
        _ => TracialAlgebra::new(&[2, 1], &[0.3, 0.7]).unwrap(),
    }
}

fn full_state(alg: &TracialAlgebra, seed: u64, idx: i64) -> Element {
    let mut rng = stream(seed, "prop-state", idx);
    alg.random_state(StateKind::Full, &mut rng).into_element()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_a_bounded_symmetric_pseudometric(i in 0usize..3, seed in any::<u64>()) {
        let alg = algebra(i);
        let tol = Tolerances::default();
        let (x, y, z) = (full_state(&alg, seed, 0), full_state(&alg, seed, 1), full_state(&alg, seed, 2));
        let d = |a: &Element, b: &Element| hennion_distance(&alg, a, b, &tol).unwrap();
        let dxy = d(&x, &y);
        prop_assert!((0.0..1.0).contains(&dxy));
        prop_assert!((dxy - d(&y, &x)).abs() <= 1e-10);
        prop_assert!(d(&x, &z) <= dxy + d(&y, &z) + 1e-9);
        prop_assert!(d(&x, &x) <= 1e-12);
    }

    #[test]
    fn distance_is_projective_and_m_is_homogeneous(
        i in 0usize..3,
        seed in any::<u64>(),
        s in 0.01f64..100.0,
        t in 0.01f64..100.0,
    ) {
        let alg = algebra(i);
        let tol = Tolerances::default();
        let (x, y) = (full_state(&alg, seed, 0), full_state(&alg, seed, 1));
        let d = hennion_distance(&alg, &x, &y, &tol).unwrap();
        let ds = hennion_distance(&alg, &x.scale(s), &y.scale(t), &tol).unwrap();
        prop_assert!((d - ds).abs() <= 1e-8);
        let m = m_quantity(&alg, &x, &y, &tol).unwrap().value;
        let ms = m_quantity(&alg, &x.scale(s), &y.scale(t), &tol).unwrap().value;
        prop_assert!((ms - m * s / t).abs() <= 1e-8 * (1.0 + m * s / t));
    }

    #[test]
    fn dual_pairs_with_the_map(i in 0usize..3, seed in any::<u64>(), k in 1usize..4) {
        let alg = algebra(i);
        let tol = Tolerances::default();
        let mut rng = stream(seed, "prop-pairing", 0);
        let target = alg.random_state(StateKind::Full, &mut rng).into_element();
        let s = SuperOperator::random_channel(&alg, k, 0.1, &target, &mut rng, &tol).unwrap();
        let x = alg.random_hermitian(&mut rng);
        let a = alg.random_hermitian(&mut rng);
        let lhs = alg.trace_product(&s.apply(&x), &a);
        let rhs = alg.trace_product(&x, &s.apply_dual(&a));
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + lhs.norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn images_contract_by_the_certified_bound(i in 0usize..3, seed in any::<u64>()) {
        let alg = algebra(i);
        let tol = Tolerances::default();
        let mut rng = stream(seed, "prop-contraction", 0);
        let target = alg.random_state(StateKind::Full, &mut rng).into_element();
        let s = SuperOperator::random_channel(&alg, 2, 0.2, &target, &mut rng, &tol).unwrap();
        let opts = EstimateOptions { upper_only: true, ..EstimateOptions::default() };
        let est = contraction_estimate(&s, &opts, &mut rng, &tol).unwrap();
        for j in 0..20 {
            let (x, y) = (full_state(&alg, seed, 2 * j), full_state(&alg, seed, 2 * j + 1));
            let before = hennion_distance(&alg, &x, &y, &tol).unwrap();
            let after = hennion_distance(&alg, &s.apply(&x), &s.apply(&y), &tol).unwrap();
            prop_assert!(after <= est.upper * before + 1e-9, "{after} > {} * {before}", est.upper);
        }
    }

    #[test]
    fn limiting_functional_is_a_bounded_state(seed in 1u64..1_000_000, d0 in -1.0f64..1.0, d1 in -1.0f64..1.0) {
        let tol = Tolerances::default();
        let m = TracialAlgebra::full(2);
        let ens = GeneratorEnsemble::new(&m, &m, GeneratorEnsembleSpec::RandomStinespring { kraus: 2, mix: 0.2 }, &tol).unwrap();
        let maps = FcsMaps::new(ErgodicDriver::new(DriverKind::IidShift { seed }).unwrap(), ens);
        let opts = PsiOptions::default();
        let a = LocalObservable::product(&m, 0, vec![m.diag(&[&[d0, d1]]).unwrap(), m.diag(&[&[d1, 1.0]]).unwrap()]).unwrap();
        let psi_a = psi_value(&maps, &a, 20, &opts, &tol).unwrap();
        prop_assert!(psi_a.value.norm() <= a.norm_inf() + psi_a.truncation_bound + 1e-12);
        let aa = a.adjoint().mul(&a).unwrap();
        let psi_aa = psi_value(&maps, &aa, 20, &opts, &tol).unwrap();
        prop_assert!(psi_aa.value.re >= -psi_aa.truncation_bound - 1e-12);
        prop_assert!(psi_aa.value.im.abs() <= psi_aa.truncation_bound + 1e-12);
        let one = LocalObservable::identity(&m, 0);
        let psi_one = psi_value(&maps, &one, 20, &opts, &tol).unwrap();
        prop_assert!((psi_one.value - C64::new(1.0, 0.0)).norm() <= 1e-9);
    }

    #[test]
    fn product_observables_factor_through_the_generators(seed in 1u64..1_000_000) {
        let tol = Tolerances::default();
        let m = TracialAlgebra::full(2);
        let ens = GeneratorEnsemble::new(&m, &m, GeneratorEnsembleSpec::RandomStinespring { kraus: 2, mix: 0.3 }, &tol).unwrap();
        let maps = FcsMaps::new(ErgodicDriver::new(DriverKind::IidShift { seed }).unwrap(), ens);
        let mut rng = stream(seed, "prop-factor", 0);
        let ops: Vec<Element> = (0..3).map(|_| m.random_contraction(&mut rng)).collect();
        let a = LocalObservable::product(&m, -1, ops).unwrap();
        let direct = iterate_generator(&maps, -2, 2, &a).unwrap();
        let factored = factorized_value(&maps, -2, 2, &a).unwrap();
        prop_assert!(m.norm(&(&direct - &factored), Norm::Inf) <= 1e-10);
    }
}

proptest! {
    #[test]
    fn config_round_trips_through_canonical_json(seed in any::<u64>(), streams in 1usize..50, length in 1usize..500) {
        let text = format!(
            r#"{{"algebra": {{"dims": [2, 1], "weights": [1, 2]}},
                "driver": {{"kind": "rotation", "alpha": 0.618}},
                "ensemble": {{"kind": "fixed", "channel": {{"kind": "depolarizing", "eps": 0.25}}}},
                "streams": {streams}, "process": {{"length": {length}}}, "master_seed": {seed}}}"#
        );
        let a = ExperimentConfig::from_json(&text).unwrap();
        let b = ExperimentConfig::from_json(&a.canonical_json()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert_eq!(a.streams, streams);
    }
}
