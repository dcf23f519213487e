use flowcast::harness::config::ExperimentConfig;
use flowcast::harness::experiments::{load_data, run_longterm_experiment, run_update_experiment};
use flowcast::harness::ingest::{export, ingest, Extents};
use flowcast::harness::synth::{generate_synthetic, SyntheticSpec};
use flowcast::tensor::relative_residual_full;
use flowcast::{cp_fit, AlsConfig};

#[test]
fn default_spec_fits_down_to_its_noise_floor() {
    let spec = SyntheticSpec::default();
    let data = generate_synthetic(&spec).unwrap();
    let mut clean = data.model.reconstruct();
    clean.clamp_non_negative();
    // The generating model itself leaves exactly the noise as residual, so
    // the least-squares fit at the true rank can do no worse.
    let floor = relative_residual_full(&clean, &data.tensor).unwrap();
    let fit = cp_fit(&data.tensor, &AlsConfig::new(spec.rank)).unwrap();
    let res = relative_residual_full(&fit.model.reconstruct(), &data.tensor).unwrap();
    assert!(res <= floor * (1.0 + 1e-6), "fit {res} vs noise floor {floor}");
    assert!(floor > 0.01 && floor < 0.03, "floor {floor}");
}

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap();
    }
    cfg
}

#[test]
fn without_weekly_pattern_the_models_tie() {
    let (mut arma, mut ar) = (0.0, 0.0);
    for seed in 0..8 {
        let seed = seed.to_string();
        let cfg = config(&[
            ("seed", &seed),
            ("plan.rank", "3"),
            ("plan.horizon_days", "7"),
            ("synth.days", "112"),
            ("synth.weekly_strength", "0"),
            ("synth.daily_strength", "0.2"),
            ("synth.day_lag_corr", "0.5"),
            ("synth.noise_std", "0"),
        ]);
        let data = load_data(&cfg).unwrap();
        let report = run_longterm_experiment(&cfg, &data).unwrap();
        arma += report.summary["mean_res_arma2d"].as_f64().unwrap();
        ar += report.summary["mean_res_ar"].as_f64().unwrap();
    }
    let improvement = 100.0 * (ar - arma) / ar;
    assert!(improvement.abs() <= 5.0, "improvement {improvement:.2}%");
}

#[test]
fn file_round_trip_through_the_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { stations: 5, days: 35, slots: 12, rank: 2, seed: 4, ..Default::default() };
    let data = generate_synthetic(&spec).unwrap();
    let csv = dir.path().join("flows.csv");
    export(&csv, &data.tensor, &data.station_ids).unwrap();

    let cfg_path = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg_path,
        format!(
            "# small run\ndata.path = {}\nplan.rank = 2\nplan.horizon_days = 7\noutput.dir = {}\n",
            csv.display(),
            out.display()
        ),
    )
    .unwrap();
    let cfg = ExperimentConfig::from_file(&cfg_path).unwrap();
    let loaded = load_data(&cfg).unwrap();
    assert_eq!(loaded.dataset.tensor, data.tensor);
    assert!(loaded.planted.is_none());

    let long = run_longterm_experiment(&cfg, &loaded).unwrap();
    let written = long.write(&cfg.output_dir).unwrap();
    assert_eq!(written.len(), 2);
    let table = std::fs::read_to_string(out.join("longterm_longterm.csv")).unwrap();
    assert!(table.starts_with("station,res_2d_arma,res_1d_ar,improvement_pct\n"));
    assert_eq!(table.lines().count(), 1 + spec.stations);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("longterm_summary.json")).unwrap()).unwrap();
    assert!(summary["mean_res_arma2d"].as_f64().unwrap().is_finite());

    let update = run_update_experiment(&cfg, &loaded, 0.3).unwrap();
    let rows = &update.table("update").unwrap().rows;
    assert_eq!(rows.len(), (12 - 4usize).div_ceil(5));
}

#[test]
fn ingest_with_declared_extents_zero_fills() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sparse.csv");
    std::fs::write(&path, "station_id,day_index,slot_index,count\nA,0,1,3\nB,2,0,5.5\n").unwrap();
    let extents = Extents { stations: Some(3), days: Some(4), slots: Some(2) };
    let ds = ingest(&path, extents).unwrap();
    assert_eq!(ds.tensor.shape(), &[3, 4, 2]);
    assert_eq!(ds.report.missing_count, 22);
    assert_eq!(ds.tensor.get(&[1, 2, 0]), 5.5);
    assert_eq!(ds.station_ids, ["A", "B", "unlisted_2"]);
}

#[test]
fn update_needs_a_partial_observation() {
    let cfg = config(&[("plan.rank", "2"), ("plan.horizon_days", "7"), ("synth.stations", "4"), ("synth.slots", "10")]);
    let data = load_data(&cfg).unwrap();
    assert!(run_update_experiment(&cfg, &data, 0.0).is_err());
    assert!(run_update_experiment(&cfg, &data, 1.0).is_err());
}
