use flowcast::cluster::{agglomerate, choose_k_by_gap, embed_stations, split_tensor_by_cluster};
use flowcast::harness::config::ExperimentConfig;
use flowcast::harness::experiments::{load_data, run_shortterm_experiment, same_partition};
use flowcast::harness::synth::{generate_synthetic, SyntheticSpec};
use flowcast::lrtc::{short_term_predict, LrtcHyperParams};
use flowcast::{cp_fit, relative_residual, AlsConfig, DenseTensor, ObservationMask};

fn history_mean_baseline(t: &DenseTensor, last: usize) -> DenseTensor {
    let s = t.shape();
    let mut out = t.clone();
    for l in 0..s[0] {
        for p in 0..s[2] {
            let mean = (0..last).map(|d| t.get(&[l, d, p])).sum::<f64>() / last as f64;
            out.set(&[l, last, p], mean);
        }
    }
    out
}

#[test]
fn masked_future_beats_history_mean() {
    for seed in 0..3 {
        let spec = SyntheticSpec { stations: 8, days: 21, slots: 24, rank: 2, seed, ..Default::default() };
        let t = generate_synthetic(&spec).unwrap().tensor;
        let last = spec.days - 1;
        let mask = ObservationMask::from_fn(t.shape().to_vec(), |i| i[1] < last || i[2] < 8).unwrap();
        let out = short_term_predict(&t, &mask, &LrtcHyperParams { seed, ..Default::default() }).unwrap();
        let target = mask.complement().unwrap();
        let lrtc = relative_residual(&out.imputed, &t, &target).unwrap();
        let baseline = relative_residual(&history_mean_baseline(&t, last), &t, &target).unwrap();
        assert!(lrtc < baseline, "seed {seed}: LRTC {lrtc:.4} vs history mean {baseline:.4}");
        for (i, (&v, &m)) in out.predictive_variance.data().iter().zip(mask.flags()).enumerate() {
            assert!(if m { v == 0.0 } else { v > 0.0 }, "cell {i}: variance {v}");
        }
    }
}

#[test]
fn planted_populations_found_without_a_given_k() {
    for seed in 0..3 {
        let spec = SyntheticSpec { clusters: 2, separation: 1.0, cluster_spread: 0.1, seed, ..Default::default() };
        let data = generate_synthetic(&spec).unwrap();
        let fit = cp_fit(&data.tensor, &AlsConfig::new(6).with_seed(seed)).unwrap();
        let e = embed_stations(&fit.model, 0.9).unwrap();
        assert_eq!(choose_k_by_gap(&e, 6, 2.0).unwrap(), 2, "seed {seed}");
        let assign = agglomerate(&e, 2).unwrap();
        assert!(same_partition(&assign.labels, &data.labels), "seed {seed}: {:?}", assign.labels);

        let (within, between) = spreads(&e.coords, &data.labels);
        assert!(between > 5.0 * within, "seed {seed}: between {between}, within {within}");

        let parts = split_tensor_by_cluster(&data.tensor, &assign).unwrap();
        assert_eq!(parts.iter().map(|p| p.stations.len()).sum::<usize>(), spec.stations);
    }
}

/// Largest distance to the own-group centroid, and the distance between
/// the two group centroids.
fn spreads(coords: &nalgebra::DMatrix<f64>, labels: &[usize]) -> (f64, f64) {
    let centroid = |g: usize| {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
        let mut sum = nalgebra::RowDVector::zeros(coords.ncols());
        for &i in &rows {
            sum += coords.row(i);
        }
        sum / rows.len() as f64
    };
    let c = [centroid(0), centroid(1)];
    let within = (0..labels.len()).map(|i| (coords.row(i) - &c[labels[i]]).norm()).fold(0.0, f64::max);
    (within, (&c[0] - &c[1]).norm())
}

fn shortterm_config(extra: &[(&str, &str)]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [("seed", "2"), ("plan.rank", "3"), ("plan.horizon_days", "7")].iter().chain(extra) {
        cfg.set(k, v).unwrap();
    }
    cfg
}

#[test]
fn clustering_is_a_no_op_on_one_population() {
    let cfg = shortterm_config(&[("synth.stations", "8"), ("synth.slots", "24")]);
    let data = load_data(&cfg).unwrap();
    let report = run_shortterm_experiment(&cfg, &data, true).unwrap();
    let s = &report.summary;
    assert_eq!(s["k"].as_u64(), Some(1));
    let (joint, clustered) = (s["mean_res_joint"].as_f64().unwrap(), s["mean_res_clustered"].as_f64().unwrap());
    assert!((clustered - joint).abs() <= 0.05 * joint, "joint {joint} clustered {clustered}");
    assert_eq!(report.table("clustered").unwrap().rows.len(), 8);
}

#[test]
fn two_populations_improve_with_clustering() {
    let cfg = shortterm_config(&[
        ("synth.clusters", "2"),
        ("synth.separation", "1"),
        ("cluster.rank", "6"),
        ("synth.slots", "24"),
    ]);
    let data = load_data(&cfg).unwrap();
    let report = run_shortterm_experiment(&cfg, &data, true).unwrap();
    let s = &report.summary;
    assert_eq!(s["planted_recovered"].as_bool(), Some(true));
    let (joint, clustered) = (s["mean_res_joint"].as_f64().unwrap(), s["mean_res_clustered"].as_f64().unwrap());
    assert!(clustered < joint, "joint {joint} clustered {clustered}");
}

#[test]
fn no_separation_means_no_recoverable_partition() {
    let mut recovered = 0;
    for seed in 0..10 {
        let spec = SyntheticSpec { clusters: 2, separation: 0.0, seed, ..Default::default() };
        let data = generate_synthetic(&spec).unwrap();
        let fit = cp_fit(&data.tensor, &AlsConfig::new(6).with_seed(seed)).unwrap();
        let assign = agglomerate(&embed_stations(&fit.model, 0.9).unwrap(), 2).unwrap();
        if same_partition(&assign.labels, &data.labels) {
            recovered += 1;
        }
    }
    assert!(recovered <= 2, "recovered a signal-free partition {recovered}/10 times");
}
