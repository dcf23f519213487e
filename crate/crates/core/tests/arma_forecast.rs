use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use flowcast::arma2d::{arma2d_fit, arma2d_forecast, reshape_to_field, ArmaOrders};
use flowcast::forecast::{
    lean_update, prefix_mask, rolling_update_evaluation, two_step_forecast, DayPrediction, ForecastPlan, Provenance,
};
use flowcast::tensor::relative_residual_full;
use flowcast::{relative_residual, AlsConfig, CpModel, DenseTensor, ObservationMask};

const TRUTH: [((usize, usize), f64); 3] = [((0, 1), 0.5), ((1, 0), 0.3), ((1, 1), -0.15)];

/// Runs `v[t] = −Σ a_ij v[t − i − 7j] + e[t]` forward from zero.
fn simulate(seed: u64, weeks: usize, sigma: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let burn = 100 * 7;
    let mut v: Vec<f64> = Vec::with_capacity(burn + weeks * 7);
    for t in 0..burn + weeks * 7 {
        let mut x = noise.sample(&mut rng);
        for &((i, j), a) in &TRUTH {
            if let Some(back) = t.checked_sub(i + 7 * j) {
                x -= a * v[back];
            }
        }
        v.push(x);
    }
    v.split_off(burn)
}

fn mean_abs_error(weeks: usize) -> f64 {
    let mut total = 0.0;
    for seed in 0..10 {
        let field = reshape_to_field(&simulate(seed, weeks, 0.1), 7).unwrap();
        let model = arma2d_fit(&field, ArmaOrders::new(1, 1, 0, 0)).unwrap();
        total += TRUTH.iter().map(|&(lag, a)| (model.ar[lag] - a).abs()).sum::<f64>() / 3.0;
    }
    total / 10.0
}

#[test]
fn estimates_tighten_as_the_grid_grows() {
    let errs: Vec<f64> = [50, 200, 800].iter().map(|&w| mean_abs_error(w)).collect();
    // Least squares error shrinks like 1/sqrt(W); a factor of 16 in W
    // should cut it by about four.
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[2] < errs[0] / 2.0, "{errs:?}");
    assert!(errs[2] < 0.02, "{errs:?}");
}

#[test]
fn one_week_forecast_beats_zero() {
    let mut wins = 0;
    for seed in 0..10 {
        let series = simulate(100 + seed, 201, 0.1);
        let (train, test) = series.split_at(200 * 7);
        let field = reshape_to_field(train, 7).unwrap();
        let model = arma2d_fit(&field, ArmaOrders::new(1, 1, 0, 0)).unwrap();
        let ahead = arma2d_forecast(&model, &field, 1).unwrap().flatten();
        let num: f64 = ahead[200 * 7..].iter().zip(test).map(|(f, t)| (f - t).powi(2)).sum();
        let den: f64 = test.iter().map(|t| t * t).sum();
        if num < den {
            wins += 1;
        }
    }
    assert!(wins >= 8, "beat zero forecast on {wins}/10 seeds");
}

fn periodic_model(l: usize, days: usize, p: usize, seed: u64) -> CpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = 2;
    let week: Vec<Vec<f64>> = (0..rank).map(|_| (0..7).map(|_| rng.random_range(0.5..1.5)).collect()).collect();
    let loc = DMatrix::from_fn(l, rank, |_, _| rng.random_range(0.2..1.0));
    let day = DMatrix::from_fn(days, rank, |t, r| week[r][t % 7]);
    let slot = DMatrix::from_fn(p, rank, |_, _| rng.random_range(0.2..1.0));
    CpModel::from_factors(vec![loc, day, slot]).unwrap()
}

#[test]
fn periodic_temporal_factors_continue() {
    let full = periodic_model(6, 35, 10, 3).reconstruct();
    let history = full.slice_axis(1, 0, 28).unwrap();
    let truth = full.slice_axis(1, 28, 35).unwrap();
    let plan = ForecastPlan { horizon_days: 7, rank: 2, als: AlsConfig::new(2), ..ForecastPlan::default() };
    let pred = two_step_forecast(&history, &plan).unwrap();
    let res = relative_residual_full(&pred.tensor, &truth).unwrap();
    assert!(res < 0.05, "RES {res}");
}

struct UpdateCase {
    prediction: DayPrediction,
    truth: DenseTensor,
    model: CpModel,
}

/// Prediction from a known one-day model; the truth scales each station's
/// location row by a common factor plus a small per-component part.
fn perturbed_day(seed: u64) -> UpdateCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, p, rank) = (10, 48, 3);
    let loc = DMatrix::from_fn(l, rank, |_, _| rng.random_range(0.2..1.0));
    let day = DMatrix::from_fn(1, rank, |_, _| rng.random_range(0.5..1.5));
    // Every component has a morning and an evening peak.
    let slot = DMatrix::from_fn(p, rank, |k, r| {
        let bump = |centre: f64| (-((k as f64 - centre) / 4.0).powi(2)).exp();
        0.1 + bump(10.0 + 2.0 * r as f64) + 0.8 * bump(34.0 + 3.0 * r as f64)
    });
    let model = CpModel::from_factors(vec![loc.clone(), day.clone(), slot.clone()]).unwrap();
    let level: Vec<f64> = (0..l).map(|_| 1.0 + 0.4 * rng.random_range(-1.0..1.0)).collect();
    let shifted = DMatrix::from_fn(l, rank, |i, r| loc[(i, r)] * (level[i] + 0.05 * rng.random_range(-1.0..1.0)));
    let truth = CpModel::from_factors(vec![shifted, day, slot]).unwrap().reconstruct();
    let prediction = DayPrediction { tensor: model.reconstruct(), source_model: model.clone(), provenance: Provenance::LongTerm };
    UpdateCase { prediction, truth, model }
}

#[test]
fn partial_day_update_improves_the_suffix() {
    let (l, p) = (10, 48);
    let prefix = (0.3 * p as f64).ceil() as usize;
    let suffix = ObservationMask::from_fn(vec![l, 1, p], |i| i[2] >= prefix).unwrap();
    let (mut early, mut improved) = (0, 0);
    for seed in 0..10 {
        let case = perturbed_day(seed);
        let mask = prefix_mask(l, p, prefix).unwrap();
        let updated = lean_update(&case.prediction, &case.truth, &mask, &case.model).unwrap();
        let before = relative_residual(&case.prediction.tensor, &case.truth, &suffix).unwrap();
        let after = relative_residual(&updated.tensor, &case.truth, &suffix).unwrap();
        assert!(after < before, "seed {seed}: {after} vs {before}");
        let midpoint = prefix + (p - prefix) / 2;
        let blocks = rolling_update_evaluation(&case.truth, &case.prediction, &updated, prefix, 5).unwrap();
        for b in blocks.iter().filter(|b| !b.partial && b.start < midpoint) {
            early += 1;
            if b.res_updated < b.res_long {
                improved += 1;
            }
        }
    }
    assert!(2 * improved > early, "{improved}/{early} early blocks improved");
}

#[test]
fn block_count_on_a_long_day() {
    let truth = DenseTensor::filled(vec![2, 1, 247], 1.0).unwrap();
    let model = CpModel::from_factors(vec![
        DMatrix::from_element(2, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(247, 1, 0.9),
    ])
    .unwrap();
    let pred = DayPrediction { tensor: model.reconstruct(), source_model: model, provenance: Provenance::LongTerm };
    let blocks = rolling_update_evaluation(&truth, &pred, &pred, 75, 5).unwrap();
    // 172 suffix slots: 34 windows of five and a remainder of two.
    assert_eq!(blocks.iter().filter(|b| !b.partial).count(), 34);
    assert_eq!(blocks.last().map(|b| (b.start, b.len, b.partial)), Some((245, 2, true)));
}
