use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowcast::arma2d::ArmaOrders;
use flowcast::cluster::{agglomerate, StationEmbedding};
use flowcast::forecast::{lean_update, prefix_mask, DayPrediction, Provenance};
use flowcast::lrtc::{lrtc_fit, lrtc_predict, LrtcHyperParams};
use flowcast::tensor::relative_residual_full;
use flowcast::{CpModel, DenseTensor, ObservationMask};

fn model(shape: &[usize], rank: usize, seed: u64) -> CpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = shape.iter().map(|&n| DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0))).collect();
    CpModel::from_factors(factors).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalizing_keeps_the_tensor(dims in prop::collection::vec(1..6usize, 2..4), rank in 1..4usize, seed: u64) {
        let m = model(&dims, rank, seed);
        let mut n = m.clone();
        n.normalize();
        let (a, b) = (m.reconstruct(), n.reconstruct());
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-10 * (1.0 + a.frobenius_norm()));
        prop_assert!(n.weights.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn arma_orders_round_trip(p1 in 0..4usize, p2 in 0..4usize, q1 in 0..3usize, q2 in 0..3usize) {
        let o = ArmaOrders::new(p1, p2, q1, q2);
        prop_assert_eq!(o.to_string().parse::<ArmaOrders>().unwrap(), o);
        prop_assert_eq!(o.ar_count(), (p1 + 1) * (p2 + 1) - 1);
        prop_assert_eq!(o.ma_count(), (q1 + 1) * (q2 + 1));
    }

    #[test]
    fn upgma_trace_is_monotone(n in 2..12usize, dim in 1..4usize, k_seed: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = StationEmbedding::from_coords(DMatrix::from_fn(n, dim, |_, _| rng.random_range(-5.0..5.0)));
        let k = 1 + k_seed % n;
        let a = agglomerate(&e, k).unwrap();
        prop_assert_eq!(a.k, k);
        prop_assert_eq!(a.linkage_trace.len(), n - 1);
        prop_assert!(a.linkage_trace.windows(2).all(|w| w[1].distance >= w[0].distance - 1e-12));
        prop_assert!(a.labels.iter().all(|&l| l < k));
        prop_assert_eq!(a.sizes().iter().sum::<usize>(), n);
        prop_assert!(a.sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn lean_update_keeps_observed_cells(l in 1..6usize, p in 2..12usize, rank in 1..3usize, frac in 0.0..1.0f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = CpModel::from_factors(vec![
            DMatrix::from_fn(l, rank, |_, _| rng.random_range(0.1..1.0)),
            DMatrix::from_fn(1, rank, |_, _| rng.random_range(0.1..1.0)),
            DMatrix::from_fn(p, rank, |_, _| rng.random_range(0.1..1.0)),
        ]).unwrap();
        let truth = DenseTensor::from_fn(vec![l, 1, p], |_| rng.random_range(0.0..3.0)).unwrap();
        let prefix = ((frac * p as f64) as usize).max(1);
        let mask = prefix_mask(l, p, prefix).unwrap();
        let pred = DayPrediction { tensor: base.reconstruct(), source_model: base.clone(), provenance: Provenance::LongTerm };
        let up = lean_update(&pred, &truth, &mask, &base).unwrap();
        prop_assert_eq!(up.provenance, Provenance::Updated);
        for ((v, t), &m) in up.tensor.data().iter().zip(truth.data()).zip(mask.flags()) {
            prop_assert!(*v >= 0.0);
            if m {
                prop_assert_eq!(v, t);
            }
        }
    }

    #[test]
    fn completion_passes_observations_through(dims in prop::collection::vec(2..5usize, 3), density in 0.3..0.9f64, seed: u64) {
        let y = model(&dims, 2, seed).reconstruct();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mask = ObservationMask::from_fn(dims.clone(), |_| rng.random_bool(density));
        prop_assume!(mask.is_ok());
        let mask = mask.unwrap();
        let hp = LrtcHyperParams { max_rank: 3, max_iters: 15, seed, ..Default::default() };
        let post = lrtc_fit(&y, &mask, &hp).unwrap();
        prop_assert!(post.elbo_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0)));
        let out = lrtc_predict(&post, &mask, &y).unwrap();
        prop_assert!(out.effective_rank >= 1 && out.effective_rank <= 3);
        for ((v, t), (&m, var)) in out.imputed.data().iter().zip(y.data()).zip(mask.flags().iter().zip(out.predictive_variance.data())) {
            if m {
                prop_assert_eq!(v, t);
                prop_assert_eq!(*var, 0.0);
            } else {
                prop_assert!(v.is_finite() && *var >= 0.0);
            }
        }
        prop_assert!(relative_residual_full(&out.imputed, &y).unwrap().is_finite());
    }
}
