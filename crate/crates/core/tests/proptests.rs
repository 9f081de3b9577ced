//! Property-based invariants across modules.

use proptest::prelude::*;

use staygraph_core::autodiff::{Tape, Tensor};
use staygraph_core::graph::{
    approx_ip_knn, normalize_prune, DenseMatrix, EdgeType, NormScheme, TypedEdgeList,
};
use staygraph_core::metrics::{full_report, regression_metrics, PredictionSet, LOG_MAPE_EPS};
use staygraph_core::model::fusion::target_transform;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_fusion_weights_are_shift_invariant(
        logits in prop::array::uniform3(-5.0f64..5.0),
        shift in -50.0f64..50.0,
    ) {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(logits.to_vec())).unwrap();
        let b = tape
            .leaf(Tensor::from_vec(logits.iter().map(|l| l + shift).collect()))
            .unwrap();
        let sa = tape.softmax(a).unwrap();
        let sb = tape.softmax(b).unwrap();
        for (x, y) in tape.data(sa).data().iter().zip(tape.data(sb).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        // normalized weights are positive and sum to one
        let sum: f64 = tape.data(sa).data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(tape.data(sa).data().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn ip_knn_equals_brute_force(
        seed in 0u64..1000,
        n in 2usize..40,
        k in 0usize..8,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(1..5);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = DenseMatrix::new(n, dim, data.clone()).unwrap();
        let got = approx_ip_knn(&m, k).unwrap();
        let keff = k.min(n - 1);
        for i in 0..n {
            let mut scored: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    (j, (0..dim).map(|c| data[i * dim + c] * data[j * dim + c]).sum::<f64>())
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(keff);
            let mine: Vec<(usize, f64)> = got
                .edges()
                .iter()
                .filter(|e| e.src == i)
                .map(|e| (e.dst, e.weight))
                .collect();
            prop_assert_eq!(mine.len(), scored.len());
            for ((gj, gw), (ej, ew)) in mine.iter().zip(&scored) {
                prop_assert_eq!(gj, ej);
                prop_assert!((gw - ew).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log1p_normalization_preserves_weight_order(
        weights in prop::collection::vec(0.0f64..100.0, 1..40),
    ) {
        let n = weights.len() + 1;
        let mut e = TypedEdgeList::new(n);
        for (i, &w) in weights.iter().enumerate() {
            e.push(i, i + 1, w, EdgeType::Diagnosis).unwrap();
        }
        let out = normalize_prune(&e, NormScheme::Log1p, 0.0).unwrap();
        let rank = |e: &TypedEdgeList| {
            let mut idx: Vec<usize> = (0..e.len()).collect();
            idx.sort_by(|&a, &b| {
                e.edges()[a].weight.partial_cmp(&e.edges()[b].weight).unwrap().then(a.cmp(&b))
            });
            idx
        };
        prop_assert_eq!(rank(&e), rank(&out));
    }

    #[test]
    fn metrics_are_permutation_invariant(
        pairs in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 3..40),
        seed in 0u64..100,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yh: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let a = full_report(&PredictionSet::new(y.clone(), yh.clone()).unwrap());
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let yp: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let yhp: Vec<f64> = order.iter().map(|&i| yh[i]).collect();
        let b = full_report(&PredictionSet::new(yp, yhp).unwrap());
        for (x, z) in a.values().iter().zip(b.values()) {
            prop_assert!(
                (x - z).abs() < 1e-10 || (x.is_nan() && z.is_nan()),
                "{x} vs {z}"
            );
        }
    }

    #[test]
    fn msle_equals_mse_of_transformed_values(
        pairs in prop::collection::vec((0.0f64..80.0, 0.0f64..80.0), 1..40),
    ) {
        // cross-module identity with the model's target transform
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yh: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (_, msle, _, _, _) = regression_metrics(
            &PredictionSet::new(y.clone(), yh.clone()).unwrap(),
            LOG_MAPE_EPS,
        );
        let ty: Vec<f64> = y.iter().map(|&v| target_transform(v).unwrap()).collect();
        let tyh: Vec<f64> = yh.iter().map(|&v| target_transform(v).unwrap()).collect();
        let mse_t: f64 = ty
            .iter()
            .zip(&tyh)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / ty.len() as f64;
        prop_assert!((msle - mse_t).abs() < 1e-12);
    }

    #[test]
    fn r2_never_exceeds_one(
        pairs in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 2..40),
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yh: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (_, _, _, _, r2) =
            regression_metrics(&PredictionSet::new(y, yh).unwrap(), LOG_MAPE_EPS);
        prop_assert!(r2.is_nan() || r2 <= 1.0);
    }

    #[test]
    fn transform_round_trip_is_exact(y in 0.0f64..1000.0) {
        use staygraph_core::model::fusion::inverse_transform;
        let z = target_transform(y).unwrap();
        prop_assert!((inverse_transform(z) - y).abs() <= 1e-12 * y.max(1.0));
    }
}
