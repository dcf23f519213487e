//! Experiment runners producing the comparison tables.
//!
//! * long-term: 2-step 2D-ARMA against the scalar AR baseline, per station
//! * update: long-term against refreshed prediction, per block of slots
//! * short-term: completion (joint or per cluster) against the refresh

use serde::Serialize;

use crate::cluster::{agglomerate, choose_k_by_gap, embed_stations, split_tensor_by_cluster, ClusterAssignment};
use crate::cp::{cp_fit, AlsConfig, CpModel};
use crate::error::{Error, Result};
use crate::forecast::{
    forecast_from_model, forecast_with, lean_update, prefix_mask, rolling_update_evaluation, DayPrediction, DAY_AXIS,
    LOCATION_AXIS, SLOT_AXIS,
};
use crate::harness::baseline::ar_extend;
use crate::harness::config::{ConfigSummary, ExperimentConfig};
use crate::harness::ingest::{ingest, Dataset, LoadReport};
use crate::harness::report::{Cell, Report, Table};
use crate::harness::synth::generate_synthetic;
use crate::lrtc::short_term_predict;
use crate::tensor::{relative_residual, DenseTensor, ObservationMask};

/// Input data for an experiment, with the planted partition when the data
/// is synthetic.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub dataset: Dataset,
    pub planted: Option<Vec<usize>>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    match &cfg.data_path {
        Some(path) => Ok(ExperimentData { dataset: ingest(path, cfg.extents)?, planted: None }),
        None => {
            let s = generate_synthetic(&cfg.synth)?;
            let shape = [s.tensor.shape()[0], s.tensor.shape()[1], s.tensor.shape()[2]];
            let report = LoadReport { records: s.tensor.len(), shape, missing_count: 0 };
            Ok(ExperimentData {
                dataset: Dataset { tensor: s.tensor, station_ids: s.station_ids, report },
                planted: Some(s.labels),
            })
        }
    }
}

fn check_flow(t: &DenseTensor) -> Result<()> {
    if t.order() != 3 {
        return Err(Error::Shape(format!("expected an L x T x P tensor, got {:?}", t.shape())));
    }
    Ok(())
}

/// RES of station `l` over the cells selected by `mask`; NaN when the
/// truth is zero there.
fn station_res(estimate: &DenseTensor, truth: &DenseTensor, mask: &ObservationMask, l: usize) -> Result<f64> {
    let station = ObservationMask::from_fn(truth.shape().to_vec(), |i| i[LOCATION_AXIS] == l && mask.is_observed(i));
    match station {
        Ok(m) => match relative_residual(estimate, truth, &m) {
            Err(Error::ZeroReference) => Ok(f64::NAN),
            other => other,
        },
        Err(Error::EmptyMask) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

fn nan_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn improvement_pct(reference: f64, candidate: f64) -> f64 {
    100.0 * (reference - candidate) / reference
}

fn fit_history(history: &DenseTensor, cfg: &ExperimentConfig, rank: usize) -> Result<CpModel> {
    let als = AlsConfig { rank, ..cfg.plan.als.clone() };
    let fit = cp_fit(history, &als)?;
    if fit.degenerate {
        log::warn!("CP fit at rank {rank} hit a singular Gram product");
    }
    Ok(fit.model)
}

struct Split {
    history: DenseTensor,
    train: usize,
}

fn split(t: &DenseTensor, cfg: &ExperimentConfig) -> Result<Split> {
    check_flow(t)?;
    let days = t.shape()[DAY_AXIS];
    let train = cfg.train_days_for(days)?;
    Ok(Split { history: t.slice_axis(DAY_AXIS, 0, train)?, train })
}

/// Long-term forecast of day `train` onward from the history before it.
fn long_term(history: &DenseTensor, cfg: &ExperimentConfig, horizon: usize) -> Result<DayPrediction> {
    let mut plan = cfg.plan.clone();
    plan.horizon_days = horizon;
    let model = fit_history(history, cfg, plan.rank)?;
    forecast_from_model(&model, &plan)
}

#[derive(Debug, Clone, Serialize)]
pub struct LongTermSummary {
    pub stations: usize,
    pub train_days: usize,
    pub horizon_days: usize,
    pub mean_res_arma2d: f64,
    pub mean_res_ar: f64,
    /// Relative reduction of the mean RES, in percent.
    pub mean_improvement_pct: f64,
    pub config: ConfigSummary,
}

pub fn run_longterm_experiment(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<Report> {
    cfg.validate()?;
    let t = &data.dataset.tensor;
    let Split { history, train } = split(t, cfg)?;
    let horizon = cfg.plan.horizon_days;
    if train + horizon > t.shape()[DAY_AXIS] {
        return Err(Error::InvalidArgument(format!(
            "{train} history days plus a {horizon}-day horizon exceed {} days",
            t.shape()[DAY_AXIS]
        )));
    }
    cfg.plan.validate(train)?;
    let truth = t.slice_axis(DAY_AXIS, train, train + horizon)?;
    let model = fit_history(&history, cfg, cfg.plan.rank)?;
    let arma = forecast_from_model(&model, &cfg.plan)?;
    let ar = forecast_with(&model, horizon, |series| ar_extend(series, cfg.baseline_lags, horizon))?;

    let all = ObservationMask::full(truth.shape().to_vec())?;
    let mut table = Table::new(
        "longterm",
        "2-step prediction comparison (RES)",
        &["station", "res_2d_arma", "res_1d_ar", "improvement_pct"],
    );
    let (mut res_arma, mut res_ar) = (Vec::new(), Vec::new());
    for (l, id) in data.dataset.station_ids.iter().enumerate() {
        let a = station_res(&arma.tensor, &truth, &all, l)?;
        let b = station_res(&ar.tensor, &truth, &all, l)?;
        table.push(vec![id.as_str().into(), a.into(), b.into(), improvement_pct(b, a).into()]);
        res_arma.push(a);
        res_ar.push(b);
    }
    let (mean_a, mean_b) = (nan_mean(res_arma), nan_mean(res_ar));
    let summary = LongTermSummary {
        stations: t.shape()[LOCATION_AXIS],
        train_days: train,
        horizon_days: horizon,
        mean_res_arma2d: mean_a,
        mean_res_ar: mean_b,
        mean_improvement_pct: improvement_pct(mean_b, mean_a),
        config: cfg.summary(),
    };
    let mut report = Report::new("longterm", summary)?;
    report.tables.push(table);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct UpdateSummary {
    pub day: usize,
    pub observed_prefix: usize,
    pub window: usize,
    pub blocks: usize,
    pub improved_blocks: usize,
    /// Full blocks starting in the first half of the unobserved suffix.
    pub early_blocks: usize,
    pub early_improved: usize,
    pub early_improved_share: f64,
    pub res_long_suffix: f64,
    pub res_updated_suffix: f64,
    pub config: ConfigSummary,
}

/// Number of observed slots for a prefix fraction of `slots`.
pub fn observed_prefix(fraction: f64, slots: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("observed fraction must lie in (0, 1), got {fraction}")));
    }
    let prefix = (fraction * slots as f64).ceil() as usize;
    if prefix == 0 || prefix >= slots {
        return Err(Error::InvalidArgument(format!("fraction {fraction} leaves no suffix in {slots} slots")));
    }
    Ok(prefix)
}

pub fn run_update_experiment(cfg: &ExperimentConfig, data: &ExperimentData, observed_fraction: f64) -> Result<Report> {
    let t = &data.dataset.tensor;
    let slots = t.shape().get(SLOT_AXIS).copied().unwrap_or(0);
    let prefix = observed_prefix(observed_fraction, slots)?;
    cfg.validate()?;
    let Split { history, train } = split(t, cfg)?;
    let prediction = long_term(&history, cfg, 1)?;
    let day = prediction.day(0)?;
    let truth = t.slice_axis(DAY_AXIS, train, train + 1)?;
    let mask = prefix_mask(t.shape()[LOCATION_AXIS], slots, prefix)?;
    let updated = lean_update(&day, &truth, &mask, &day.source_model)?;
    let blocks = rolling_update_evaluation(&truth, &day, &updated, prefix, cfg.update_window.min(slots - prefix))?;

    let mut table = Table::new(
        "update",
        "Improvement on long-term prediction (RES)",
        &["slots", "start", "len", "res_long", "res_updated", "improvement_pct", "partial"],
    );
    for b in &blocks {
        table.push(vec![
            format!("{}-{}", b.start, b.start + b.len - 1).into(),
            b.start.into(),
            b.len.into(),
            b.res_long.into(),
            b.res_updated.into(),
            b.improvement_pct().into(),
            b.partial.into(),
        ]);
    }
    let midpoint = prefix + (slots - prefix) / 2;
    let early: Vec<_> = blocks.iter().filter(|b| !b.partial && b.start < midpoint).collect();
    let early_improved = early.iter().filter(|b| b.res_updated < b.res_long).count();
    let suffix = ObservationMask::from_fn(truth.shape().to_vec(), |i| i[SLOT_AXIS] >= prefix)?;
    let summary = UpdateSummary {
        day: train,
        observed_prefix: prefix,
        window: cfg.update_window,
        blocks: blocks.len(),
        improved_blocks: blocks.iter().filter(|b| b.res_updated < b.res_long).count(),
        early_blocks: early.len(),
        early_improved,
        early_improved_share: early_improved as f64 / early.len().max(1) as f64,
        res_long_suffix: relative_residual(&day.tensor, &truth, &suffix)?,
        res_updated_suffix: relative_residual(&updated.tensor, &truth, &suffix)?,
        config: cfg.summary(),
    };
    let mut report = Report::new("update", summary)?;
    report.tables.push(table);
    Ok(report)
}

/// Embedding, cluster count and assignment from a CP fit of `history`.
pub fn cluster_stations(history: &DenseTensor, cfg: &ExperimentConfig) -> Result<ClusterAssignment> {
    let rank = cfg.cluster.rank.unwrap_or(cfg.plan.rank);
    let model = fit_history(history, cfg, rank)?;
    let embedding = embed_stations(&model, cfg.cluster.variance_retained)?;
    let k = match cfg.cluster.k {
        Some(k) => k,
        None => choose_k_by_gap(&embedding, cfg.cluster.max_k, cfg.cluster.gap_ratio)?,
    };
    agglomerate(&embedding, k)
}

fn restrict_mask(mask: &ObservationMask, stations: &[usize]) -> Result<ObservationMask> {
    let mut shape = mask.shape().to_vec();
    shape[LOCATION_AXIS] = stations.len();
    let mut full = vec![0; 3];
    ObservationMask::from_fn(shape, |i| {
        full.copy_from_slice(i);
        full[LOCATION_AXIS] = stations[i[LOCATION_AXIS]];
        mask.is_observed(&full)
    })
}

fn complete_per_cluster(
    window: &DenseTensor,
    mask: &ObservationMask,
    assign: &ClusterAssignment,
    cfg: &ExperimentConfig,
) -> Result<DenseTensor> {
    let mut out = window.clone();
    for part in split_tensor_by_cluster(window, assign)? {
        let sub_mask = restrict_mask(mask, &part.stations)?;
        let done = short_term_predict(&part.tensor, &sub_mask, &cfg.lrtc)?;
        let [_, days, slots] = [window.shape()[0], window.shape()[1], window.shape()[2]];
        for (row, &l) in part.stations.iter().enumerate() {
            for d in 0..days {
                for p in 0..slots {
                    out.set(&[l, d, p], done.imputed.get(&[row, d, p]));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ShortTermSummary {
    pub day: usize,
    pub observed_prefix: usize,
    pub history_days: usize,
    pub clustering: bool,
    pub k: Option<usize>,
    pub labels: Option<Vec<usize>>,
    /// Planted partition recovered up to label names.
    pub planted_recovered: Option<bool>,
    pub mean_res_lean: f64,
    pub mean_res_joint: f64,
    pub mean_res_clustered: Option<f64>,
    pub mean_improvement_pct: Option<f64>,
    pub config: ConfigSummary,
}

/// Same partition up to a relabelling.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

pub fn run_shortterm_experiment(cfg: &ExperimentConfig, data: &ExperimentData, use_clustering: bool) -> Result<Report> {
    cfg.validate()?;
    let t = &data.dataset.tensor;
    let Split { history, train } = split(t, cfg)?;
    let slots = t.shape()[SLOT_AXIS];
    let prefix = observed_prefix(cfg.shortterm_fraction, slots)?;
    let first = match cfg.shortterm_history {
        Some(h) if h == 0 || h > train => {
            return Err(Error::InvalidArgument(format!("shortterm.history_days must lie in [1, {train}]")))
        }
        Some(h) => train - h,
        None => 0,
    };
    let window = t.slice_axis(DAY_AXIS, first, train + 1)?;
    let last = train - first;
    let mask = ObservationMask::from_fn(window.shape().to_vec(), |i| i[DAY_AXIS] < last || i[SLOT_AXIS] < prefix)?;
    let target = mask.complement().ok_or_else(|| Error::InvalidMask("nothing to predict".into()))?;

    let joint = short_term_predict(&window, &mask, &cfg.lrtc)?.imputed;

    let day = long_term(&history, cfg, 1)?.day(0)?;
    let truth_day = t.slice_axis(DAY_AXIS, train, train + 1)?;
    let day_mask = prefix_mask(t.shape()[LOCATION_AXIS], slots, prefix)?;
    let lean = lean_update(&day, &truth_day, &day_mask, &day.source_model)?;
    let mut lean_window = window.clone();
    for l in 0..t.shape()[LOCATION_AXIS] {
        for p in 0..slots {
            lean_window.set(&[l, last, p], lean.tensor.get(&[l, 0, p]));
        }
    }

    let assignment = if use_clustering { Some(cluster_stations(&history, cfg)?) } else { None };
    let clustered = match &assignment {
        Some(a) => Some(complete_per_cluster(&window, &mask, a, cfg)?),
        None => None,
    };
    let primary = clustered.as_ref().unwrap_or(&joint);

    let mut table3 = Table::new(
        "shortterm",
        "Prediction comparison (RES)",
        &["station", "res_lean_update", "res_lrtc", "improvement_pct"],
    );
    let mut table4 = Table::new(
        "clustered",
        "Improvement on LRTC by same cluster (RES)",
        &["station", "cluster", "res_joint", "res_clustered", "improvement_pct"],
    );
    let (mut lean_res, mut joint_res, mut clustered_res) = (Vec::new(), Vec::new(), Vec::new());
    for (l, id) in data.dataset.station_ids.iter().enumerate() {
        let r_lean = station_res(&lean_window, &window, &target, l)?;
        let r_joint = station_res(&joint, &window, &target, l)?;
        let r_primary = station_res(primary, &window, &target, l)?;
        table3.push(vec![id.as_str().into(), r_lean.into(), r_primary.into(), improvement_pct(r_lean, r_primary).into()]);
        if let Some(a) = &assignment {
            table4.push(vec![
                id.as_str().into(),
                Cell::Int(a.labels[l]),
                r_joint.into(),
                r_primary.into(),
                improvement_pct(r_joint, r_primary).into(),
            ]);
            clustered_res.push(r_primary);
        }
        lean_res.push(r_lean);
        joint_res.push(r_joint);
    }
    let mean_joint = nan_mean(joint_res);
    let mean_clustered = assignment.as_ref().map(|_| nan_mean(clustered_res));
    let summary = ShortTermSummary {
        day: train,
        observed_prefix: prefix,
        history_days: last,
        clustering: use_clustering,
        k: assignment.as_ref().map(|a| a.k),
        labels: assignment.as_ref().map(|a| a.labels.clone()),
        planted_recovered: match (&assignment, &data.planted) {
            (Some(a), Some(p)) => Some(same_partition(&a.labels, p)),
            _ => None,
        },
        mean_res_lean: nan_mean(lean_res),
        mean_res_joint: mean_joint,
        mean_res_clustered: mean_clustered,
        mean_improvement_pct: mean_clustered.map(|c| improvement_pct(mean_joint, c)),
        config: cfg.summary(),
    };
    let mut report = Report::new("shortterm", summary)?;
    report.tables.push(table3);
    if assignment.is_some() {
        report.tables.push(table4);
    }
    Ok(report)
}
