mod common;

use common::{brute_force_matching, normal_mat, normal_vec, random_graph};
use dgsp::distrib::{self, DistSignal, Empirical, Gaussian};
use dgsp::graph::GsoKind;
use dgsp::operators::{self, Band, FilterMap, OperatorPair, PushOptions};
use dgsp::pipelines::anomaly::peak_distance;
use dgsp::rng;
use dgsp::sags::{GraphDistribution, Sags};
use dgsp::sampling::{self, SampleSet};
use dgsp::wasserstein::{self, W2Options};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn empirical(seed: u64, k: usize, d: usize) -> Empirical {
    let mut r = rng::stream(seed, 0);
    Empirical::uniform((0..k).map(|_| normal_vec(&mut r, d)).collect()).unwrap()
}

fn exact(a: &Empirical, b: &Empirical) -> f64 {
    wasserstein::w2_empirical_exact(a, b).unwrap().0
}

fn pair(seed: u64, n: usize) -> OperatorPair {
    let mut r = rng::stream(seed, 1);
    let graphs = (0..3).map(|_| random_graph(&mut r, n, n)).collect();
    let coeffs = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
    OperatorPair::new(Sags::Constant(GraphDistribution::uniform(graphs).unwrap()), FilterMap::Polynomial { coeffs, gso: GsoKind::Laplacian })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_symmetric_and_satisfies_triangle(s in any::<u64>(), k in 1usize..6, d in 1usize..4) {
        let (a, b, c) = (empirical(s, k, d), empirical(s ^ 1, k + 1, d), empirical(s ^ 2, k, d));
        prop_assert!((exact(&a, &b) - exact(&b, &a)).abs() < 1e-10);
        prop_assert!(exact(&a, &c) <= exact(&a, &b) + exact(&b, &c) + 1e-9);
        prop_assert!(exact(&a, &a) < 1e-7);
    }

    #[test]
    fn equal_weight_transport_is_a_matching(s in any::<u64>(), k in 1usize..6) {
        let (a, b) = (empirical(s, k, 2), empirical(s ^ 7, k, 2));
        let w = exact(&a, &b);
        prop_assert!((w * w - brute_force_matching(a.points(), b.points())).abs() < 1e-10);
    }

    #[test]
    fn translation_moves_w2_by_the_shift(s in any::<u64>(), k in 1usize..8) {
        let a = empirical(s, k, 3);
        let shift = normal_vec(&mut rng::stream(s, 9), 3);
        let b = Empirical::new(a.points().iter().map(|p| p + &shift).collect(), a.weights().to_vec()).unwrap();
        prop_assert!((exact(&a, &b) - shift.norm()).abs() < 1e-8);
    }

    #[test]
    fn gaussian_w2_is_symmetric(s in any::<u64>()) {
        let mut r = rng::stream(s, 0);
        let mut g = || {
            let a = normal_mat(&mut r, 3, 3);
            Gaussian::new(normal_vec(&mut r, 3), &a * a.transpose() + DMatrix::identity(3, 3) * 0.1).unwrap()
        };
        let (g1, g2) = (g(), g());
        let d12 = wasserstein::w2_gaussian(&g1, &g2).unwrap();
        prop_assert!((d12 - wasserstein::w2_gaussian(&g2, &g1).unwrap()).abs() < 1e-7);
        prop_assert!(d12 >= (g1.mean() - g2.mean()).norm() - 1e-9);
    }

    #[test]
    fn delta_distance_is_euclidean(x in prop::collection::vec(-100.0f64..100.0, 1..20), shift in -10.0f64..10.0) {
        let x = DVector::from_vec(x);
        let y = x.add_scalar(shift);
        let d = wasserstein::w2(&DistSignal::Delta(x.clone()), &DistSignal::Delta(y.clone()), &W2Options::default()).unwrap().distance;
        prop_assert!((d - (x - y).norm()).abs() <= 1e-12 * (1.0 + d));
    }

    #[test]
    fn conditional_expectation_is_linear_for_constant_structures(s in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let n = 5;
        let c = pair(s, n);
        let mut r = rng::stream(s, 2);
        let (x, y) = (normal_vec(&mut r, n), normal_vec(&mut r, n));
        let lhs = operators::cond_expectation(&c, &(&x * a + &y * b)).unwrap();
        let rhs = operators::cond_expectation(&c, &x).unwrap() * a + operators::cond_expectation(&c, &y).unwrap() * b;
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn exact_pushforward_keeps_mass_and_mean(s in any::<u64>()) {
        let n = 4;
        let c = pair(s, n);
        let x = normal_vec(&mut rng::stream(s, 3), n);
        let out = operators::pushforward(&c, &DistSignal::Delta(x.clone()), &PushOptions::default()).unwrap();
        let DistSignal::Empirical(e) = &out else { panic!("expected an empirical law, got {}", out.kind()) };
        prop_assert!((e.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mean = distrib::moments(&out).0;
        prop_assert!((mean - operators::cond_expectation(&c, &x).unwrap()).amax() < 1e-10);
    }

    #[test]
    fn polynomial_filter_matches_matrix_powers(s in any::<u64>(), n in 2usize..12) {
        let mut r = rng::stream(s, 0);
        let g = random_graph(&mut r, n, n);
        let coeffs: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let shift = g.gso(GsoKind::Laplacian).unwrap();
        let mut power = DMatrix::identity(n, n);
        let mut direct = DMatrix::zeros(n, n);
        for c in &coeffs {
            direct += &power * *c;
            power = &power * &shift;
        }
        let m = FilterMap::Polynomial { coeffs, gso: GsoKind::Laplacian }.evaluate(&g).unwrap();
        prop_assert!((m - &direct).amax() <= 1e-9 * (1.0 + direct.amax()));
    }

    #[test]
    fn projection_filters_are_orthogonal_projections(s in any::<u64>(), n in 2usize..12) {
        let mut r = rng::stream(s, 0);
        let g = random_graph(&mut r, n, n);
        let hi = r.random_range(0..n);
        let p = FilterMap::Projection { band: Band::IndexRange { lo: 0, hi }, gso: GsoKind::NormalizedLaplacian }.evaluate(&g).unwrap();
        prop_assert!((&p * &p - &p).amax() < 1e-10);
        prop_assert!((&p - p.transpose()).amax() < 1e-12);
        prop_assert!((p.trace() - (hi + 1) as f64).abs() < 1e-9);
    }

    #[test]
    fn bandlimited_recovery_is_exact(s in any::<u64>(), m in 1usize..5, extra in 0usize..6) {
        let mut r = rng::stream(s, 0);
        let n = m + 1 + extra;
        let basis = normal_mat(&mut r, n, m);
        let x = &basis * normal_vec(&mut r, m);
        let rows = sampling::choose_sample_set(&basis, 0).unwrap();
        let rec = sampling::recover_bandlimited(&basis, &SampleSet::observe(&x, &rows).unwrap()).unwrap();
        prop_assert!((rec.signal - &x).amax() < 1e-8 * (1.0 + x.amax()));
    }

    #[test]
    fn peak_distance_is_symmetric(s in any::<u64>(), ka in 1usize..4, kb in 1usize..4) {
        let mut r = rng::stream(s, 0);
        let a: Vec<DVector<f64>> = (0..ka).map(|_| normal_vec(&mut r, 2)).collect();
        let b: Vec<DVector<f64>> = (0..kb).map(|_| normal_vec(&mut r, 2)).collect();
        prop_assert!((peak_distance(&a, &b) - peak_distance(&b, &a)).abs() < 1e-12);
        prop_assert_eq!(peak_distance(&a, &a), 0.0);
    }

    #[test]
    fn draws_do_not_depend_on_batch_size(s in any::<u64>(), small in 1usize..20, more in 0usize..20) {
        let g = DistSignal::Gaussian(Gaussian::standard(3));
        let a = distrib::sample(&g, small, s).unwrap().points;
        let b = distrib::sample(&g, small + more, s).unwrap().points;
        prop_assert_eq!(&a[..], &b[..small]);
    }
}
