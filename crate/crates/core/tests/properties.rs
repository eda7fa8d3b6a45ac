use grfpp::exact::masked_error;
use grfpp::graph::{generate, Graph, GraphKind, NormalizationMode};
use grfpp::series::{root_modulation, CoefficientSeries};
use grfpp::stitch::{StitchMode, StitchedEstimator};
use grfpp::termination::TerminationStrategy;
use grfpp::walks::{build_feature_pairs, WalkConfig};
use grfpp::{build_estimator, EstimatorConfig};
use ndarray::Array2;
use proptest::prelude::*;

fn arb_kind() -> impl Strategy<Value = GraphKind> {
    prop_oneof![
        (4usize..30, 0.15f64..0.6, any::<u64>()).prop_map(|(n, p, seed)| GraphKind::ErdosRenyi {
            n,
            p,
            seed
        }),
        (0u32..5).prop_map(|depth| GraphKind::BinaryTree { depth }),
        (3usize..10, any::<u64>()).prop_map(|(half, seed)| GraphKind::DRegular {
            n: 2 * half,
            d: 3,
            seed
        }),
    ]
}

fn spectral_radius(g: &Graph) -> f64 {
    // Power iteration on W² (positive semidefinite for symmetric W).
    let w = g.to_dense();
    let w2 = w.dot(&w);
    let mut v = ndarray::Array1::from_elem(g.num_nodes(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..500 {
        let next = w2.dot(&v);
        let n = next.dot(&next).sqrt();
        if n == 0.0 {
            return 0.0;
        }
        lambda = n / v.dot(&v).sqrt();
        v = next / n;
    }
    lambda.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_graphs_are_symmetric_connected_and_round_trip(kind in arb_kind()) {
        let g = generate(kind).unwrap();
        prop_assert!(g.is_symmetric());
        prop_assert!(g.is_connected());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        g.save_edge_list(&path).unwrap();
        let once = Graph::load_edge_list(&path, NormalizationMode::None).unwrap();
        once.save_edge_list(&path).unwrap();
        let twice = Graph::load_edge_list(&path, NormalizationMode::None).unwrap();
        prop_assert_eq!(&once, &g);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn sym_degree_bounds_the_spectrum(kind in arb_kind()) {
        let g = generate(kind).unwrap().normalized(NormalizationMode::SymDegree);
        prop_assert!(spectral_radius(&g) <= 1.0 + 1e-9);
    }

    #[test]
    fn fourth_root_is_square_root_of_square_root(lambda in 0.1f64..2.0) {
        let alpha = CoefficientSeries::diffusion(lambda, 20).unwrap();
        let twice = root_modulation(&root_modulation(&alpha, 1).unwrap().as_series().unwrap(), 1).unwrap();
        let direct = root_modulation(&alpha, 2).unwrap();
        for p in 0..=20 {
            prop_assert!((twice.at(p) - direct.at(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn length_distributions_are_normalized(p in 0.02f64..0.95, mean in 0.1f64..40.0) {
        for t in [TerminationStrategy::bernoulli(p).unwrap(), TerminationStrategy::poisson(mean).unwrap()] {
            let cap = t.max_length().unwrap_or(4000);
            let total: f64 = (0..=cap).map(|k| t.probability(k)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "{t}: {total}");
            for k in 0..cap.min(200) {
                let diff = t.survival(k).unwrap() - t.survival(k + 1).unwrap_or(0.0);
                prop_assert!((diff - t.probability(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stitching_paths_agree(seed in any::<u64>(), degree in 1usize..=4, n in 4usize..15) {
        let g = generate(GraphKind::ErdosRenyi { n, p: 0.4, seed }).unwrap().normalized(NormalizationMode::RowMax);
        let alpha = CoefficientSeries::diffusion(1.0, 20).unwrap();
        let cfg = WalkConfig::new(2, root_modulation(&alpha, degree).unwrap(), TerminationStrategy::bernoulli(0.4).unwrap(), seed).unwrap();
        let pairs = build_feature_pairs(&g, &cfg, degree, false).unwrap();
        let xy = StitchedEstimator::from_pairs(&pairs, StitchMode::ExplicitXy).unwrap().materialize().unwrap();
        let op = StitchedEstimator::from_pairs(&pairs, StitchMode::Operator).unwrap();
        let chain = op.materialize().unwrap();
        let v: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let applied = op.apply(&v).unwrap();
        let dense = xy.dot(&ndarray::Array1::from(v));
        prop_assert!(xy.iter().zip(&chain).all(|(a, b)| (a - b).abs() < 1e-10));
        prop_assert!(applied.iter().zip(&dense).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn masked_error_ignores_relabeling(seed in any::<u64>(), hops in 0u32..4) {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 9;
        let k = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() + 0.1);
        let k_hat = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permute = |m: &Array2<f64>| Array2::from_shape_fn((n, n), |(i, j)| m[[perm[i], perm[j]]]);
        let mask = |i: usize, j: usize| i.abs_diff(j) as u32 >= hops;
        let a = masked_error(&k, &k_hat, mask).unwrap();
        let b = masked_error(&permute(&k), &permute(&k_hat), |i, j| mask(perm[i], perm[j])).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn sym_degree_row_sums_are_bounded_only_on_regular_graphs() {
    let regular = generate(GraphKind::DRegular {
        n: 10,
        d: 3,
        seed: 4,
    })
    .unwrap()
    .normalized(NormalizationMode::SymDegree);
    assert!(regular
        .weighted_row_sums()
        .iter()
        .all(|&s| s <= 1.0 + 1e-12));
    // A star centre has row sum k / sqrt(k) = sqrt(k), yet the spectrum stays in [-1, 1].
    let star = Graph::from_edges(5, (1..5).map(|i| (0, i, 1.0)))
        .unwrap()
        .normalized(NormalizationMode::SymDegree);
    assert!((star.weighted_row_sums()[0] - 2.0).abs() < 1e-12);
    assert!((spectral_radius(&star) - 1.0).abs() < 1e-9);
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let g = generate(GraphKind::ErdosRenyi {
        n: 40,
        p: 0.15,
        seed: 9,
    })
    .unwrap()
    .normalized(NormalizationMode::RowMax);
    let cfg = EstimatorConfig::new(
        CoefficientSeries::diffusion(1.0, 30).unwrap(),
        2,
        8,
        TerminationStrategy::poisson(4.0).unwrap(),
        21,
    );
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                build_estimator(&g, &cfg)
                    .unwrap()
                    .estimator
                    .materialize()
                    .unwrap()
            })
    };
    assert_eq!(run(1), run(5));
}
