//! Long-term prediction and intra-day refresh.
//!
//! [`two_step_forecast`] fits CP to the `L x T x P` history, extends every
//! temporal factor column with a 2D-ARMA forecast and rebuilds the future
//! day slices. [`lean_update`] refreshes one predicted day once a prefix of
//! its slots has been observed, re-solving only the location factor.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::arma2d::{arma2d_fit, arma2d_forecast, reshape_to_field, ArmaOrders};
use crate::cp::{cp_fit, AlsConfig, CpModel};
use crate::error::{Error, Result};
use crate::linalg::pinv_symmetric;
use crate::tensor::{khatri_rao, relative_residual, unfold, DenseTensor, FactorMatrix, ObservationMask};

/// Axis order of flow tensors.
pub const LOCATION_AXIS: usize = 0;
pub const DAY_AXIS: usize = 1;
pub const SLOT_AXIS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPlan {
    pub horizon_days: usize,
    pub rank: usize,
    pub arma_orders: ArmaOrders,
    pub als: AlsConfig,
    pub days_per_week: usize,
}

impl Default for ForecastPlan {
    fn default() -> Self {
        Self {
            horizon_days: 9,
            rank: 50,
            arma_orders: ArmaOrders::default(),
            als: AlsConfig::default(),
            days_per_week: 7,
        }
    }
}

impl ForecastPlan {
    pub fn validate(&self, history_days: usize) -> Result<()> {
        if self.horizon_days < 1 {
            return Err(Error::InvalidArgument("horizon must be at least one day".into()));
        }
        if self.days_per_week == 0 {
            return Err(Error::InvalidArgument("days_per_week must be at least 1".into()));
        }
        if history_days < 2 * self.days_per_week {
            return Err(Error::InsufficientSupport(format!(
                "{history_days} history days; at least two weeks ({}) are required",
                2 * self.days_per_week
            )));
        }
        let o = self.arma_orders;
        let weeks = history_days / self.days_per_week;
        if self.days_per_week <= o.p1 + o.q1 || weeks <= o.p2 + o.q2 {
            return Err(Error::InsufficientSupport(format!(
                "orders ({o}) need more than {} days per week and {} full weeks",
                o.p1 + o.q1,
                o.p2 + o.q2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LongTerm,
    Updated,
}

/// Predicted day slices together with the CP model that produced them.
///
/// `source_model`'s temporal factor holds one row per predicted day, so its
/// reconstruction equals `tensor` before clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct DayPrediction {
    pub tensor: DenseTensor,
    pub source_model: CpModel,
    pub provenance: Provenance,
}

impl DayPrediction {
    pub fn days(&self) -> usize {
        self.tensor.shape()[DAY_AXIS]
    }

    /// The single-day prediction for day `k` of the horizon.
    pub fn day(&self, k: usize) -> Result<DayPrediction> {
        if k >= self.days() {
            return Err(Error::InvalidArgument(format!("day {k} beyond a {}-day horizon", self.days())));
        }
        let mut model = self.source_model.clone();
        model.factors[DAY_AXIS] = model.factors[DAY_AXIS].rows(k, 1).into_owned();
        Ok(DayPrediction {
            tensor: self.tensor.slice_axis(DAY_AXIS, k, k + 1)?,
            source_model: model,
            provenance: self.provenance,
        })
    }
}

fn check_flow_tensor(t: &DenseTensor) -> Result<()> {
    if t.order() != 3 {
        return Err(Error::Shape(format!("expected an L x T x P tensor, got shape {:?}", t.shape())));
    }
    Ok(())
}

/// Extends the temporal factor of `model` by `horizon` rows using `extend`,
/// then reconstructs and clamps the future slices.
///
/// `extend` receives one temporal column and returns exactly `horizon`
/// future values.
pub fn forecast_with(
    model: &CpModel,
    horizon: usize,
    mut extend: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<DayPrediction> {
    if model.order() != 3 {
        return Err(Error::Shape("forecasting needs a third-order CP model".into()));
    }
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be at least one day".into()));
    }
    let temporal = &model.factors[DAY_AXIS];
    let mut future = DMatrix::zeros(horizon, model.rank());
    for r in 0..model.rank() {
        let series: Vec<f64> = temporal.column(r).iter().copied().collect();
        let ext = extend(&series)?;
        if ext.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "temporal forecaster returned {} values for a {horizon}-day horizon",
                ext.len()
            )));
        }
        future.column_mut(r).copy_from_slice(&ext);
    }
    let source = CpModel::new(
        model.weights.clone(),
        vec![model.factors[LOCATION_AXIS].clone(), future, model.factors[SLOT_AXIS].clone()],
    )?;
    let mut tensor = source.reconstruct();
    tensor.clamp_non_negative();
    Ok(DayPrediction { tensor, source_model: source, provenance: Provenance::LongTerm })
}

/// Forecasts `horizon` values past the end of `series` with a 2D-ARMA model
/// on the day-of-week x week fold.
pub fn extend_series_arma2d(series: &[f64], days_per_week: usize, orders: ArmaOrders, horizon: usize) -> Result<Vec<f64>> {
    let field = reshape_to_field(series, days_per_week)?;
    let model = arma2d_fit(&field, orders)?;
    let needed_weeks = (series.len() + horizon).div_ceil(days_per_week);
    let extra = needed_weeks.saturating_sub(field.weeks()).max(1);
    let extended = arma2d_forecast(&model, &field, extra)?.flatten();
    Ok(extended[series.len()..series.len() + horizon].to_vec())
}

/// CP fit followed by per-component 2D-ARMA extension of the temporal factor.
pub fn two_step_forecast(t: &DenseTensor, plan: &ForecastPlan) -> Result<DayPrediction> {
    check_flow_tensor(t)?;
    plan.validate(t.shape()[DAY_AXIS])?;
    let fit = cp_fit(t, &AlsConfig { rank: plan.rank, ..plan.als.clone() })?;
    forecast_from_model(&fit.model, plan)
}

/// The ARMA half of [`two_step_forecast`] for an already fitted model.
pub fn forecast_from_model(model: &CpModel, plan: &ForecastPlan) -> Result<DayPrediction> {
    plan.validate(model.factors[DAY_AXIS].nrows())?;
    forecast_with(model, plan.horizon_days, |series| {
        extend_series_arma2d(series, plan.days_per_week, plan.arma_orders, plan.horizon_days)
    })
}

/// Location factor for a single day:
/// `U'_L = X'_(0) (U_T ⊙ U_P) (U_TᵀU_T ∗ U_PᵀU_P)^†`, with `U_T` the one
/// temporal row of that day. Weights are expected to be folded into the
/// result, so the returned factor pairs with unit weights.
pub fn lean_location_update(day: &DenseTensor, model: &CpModel) -> Result<(FactorMatrix, bool)> {
    check_day_model(day, model)?;
    let ut = &model.factors[DAY_AXIS];
    let up = &model.factors[SLOT_AXIS];
    let kr = khatri_rao(ut, up)?;
    let gram = (ut.transpose() * ut).component_mul(&(up.transpose() * up));
    let (gram_pinv, degenerate) = pinv_symmetric(&gram);
    Ok((unfold(day, LOCATION_AXIS)? * kr * gram_pinv, degenerate))
}

fn check_day_model(day: &DenseTensor, model: &CpModel) -> Result<()> {
    check_flow_tensor(day)?;
    let s = day.shape();
    if s[DAY_AXIS] != 1 {
        return Err(Error::Shape(format!("expected a single day slice, got shape {s:?}")));
    }
    if model.order() != 3 || model.factors[DAY_AXIS].nrows() != 1 {
        return Err(Error::RankMismatch("model must carry exactly one temporal row".into()));
    }
    if model.factors[LOCATION_AXIS].nrows() != s[LOCATION_AXIS] || model.factors[SLOT_AXIS].nrows() != s[SLOT_AXIS] {
        return Err(Error::DimensionMismatch(format!(
            "model shape {:?} does not match day shape {s:?}",
            model.shape()
        )));
    }
    Ok(())
}

/// Number of observed leading slots per location; errors unless every
/// location's observed cells form a prefix of the slot axis.
fn prefix_lengths(mask: &ObservationMask) -> Result<Vec<usize>> {
    let s = mask.shape();
    let (locations, slots) = (s[LOCATION_AXIS], s[SLOT_AXIS]);
    let flags = mask.flags();
    (0..locations)
        .map(|l| {
            let row = &flags[l * slots..(l + 1) * slots];
            let len = row.iter().take_while(|&&f| f).count();
            if row[len..].iter().any(|&f| f) {
                Err(Error::InvalidMask(format!("observations of location {l} are not a prefix")))
            } else {
                Ok(len)
            }
        })
        .collect()
}

/// Refreshes a one-day prediction from a partially observed day.
///
/// The observed prefix is spliced with the predicted remainder, the location
/// factor is re-solved with the temporal and slot factors of `model` held
/// fixed, and the day is rebuilt. Observed cells are copied through.
pub fn lean_update(
    prediction: &DayPrediction,
    new_data: &DenseTensor,
    mask: &ObservationMask,
    model: &CpModel,
) -> Result<DayPrediction> {
    check_day_model(&prediction.tensor, model)?;
    if new_data.shape() != prediction.tensor.shape() {
        return Err(Error::DimensionMismatch(format!(
            "new data {:?} vs prediction {:?}",
            new_data.shape(),
            prediction.tensor.shape()
        )));
    }
    mask.check_matches(new_data)?;
    prefix_lengths(mask)?;

    let mut spliced = prediction.tensor.clone();
    for ((s, &obs), &m) in spliced.data_mut().iter_mut().zip(new_data.data()).zip(mask.flags()) {
        if m {
            *s = obs;
        }
    }
    let (location, _) = lean_location_update(&spliced, model)?;
    let mut updated = CpModel::from_factors(vec![
        location,
        model.factors[DAY_AXIS].clone(),
        model.factors[SLOT_AXIS].clone(),
    ])?;
    let mut tensor = updated.reconstruct();
    for r in 0..updated.rank() {
        let norm = updated.factors[LOCATION_AXIS].column(r).norm();
        if norm > 0.0 {
            updated.factors[LOCATION_AXIS].column_mut(r).unscale_mut(norm);
        }
        updated.weights[r] = norm;
    }
    for ((v, &obs), &m) in tensor.data_mut().iter_mut().zip(new_data.data()).zip(mask.flags()) {
        if m {
            *v = obs;
        }
    }
    tensor.clamp_non_negative();
    Ok(DayPrediction { tensor, source_model: updated, provenance: Provenance::Updated })
}

/// Relative residuals of the long-term and refreshed predictions over one
/// block of slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResidual {
    pub start: usize,
    pub len: usize,
    pub res_long: f64,
    pub res_updated: f64,
    /// Trailing block shorter than the window.
    pub partial: bool,
}

impl BlockResidual {
    /// `(long − updated) / long` in percent.
    pub fn improvement_pct(&self) -> f64 {
        100.0 * (self.res_long - self.res_updated) / self.res_long
    }
}

/// Splits the slots `suffix_start..P` into windows and scores both
/// predictions on each. A trailing partial window is reported with
/// `partial = true`. Blocks where the truth is identically zero score NaN.
pub fn rolling_update_evaluation(
    truth: &DenseTensor,
    long_term: &DayPrediction,
    updated: &DayPrediction,
    suffix_start: usize,
    window: usize,
) -> Result<Vec<BlockResidual>> {
    check_flow_tensor(truth)?;
    if long_term.tensor.shape() != truth.shape() || updated.tensor.shape() != truth.shape() {
        return Err(Error::DimensionMismatch("predictions and truth must share a shape".into()));
    }
    let slots = truth.shape()[SLOT_AXIS];
    if suffix_start >= slots {
        return Err(Error::InvalidArgument(format!("suffix start {suffix_start} beyond {slots} slots")));
    }
    let suffix = slots - suffix_start;
    if window < 1 || window > suffix {
        return Err(Error::InvalidArgument(format!(
            "window {window} must be in 1..={suffix} (suffix length)"
        )));
    }
    let mut blocks = Vec::new();
    let mut start = suffix_start;
    while start < slots {
        let len = window.min(slots - start);
        let end = start + len;
        let mask = ObservationMask::from_fn(truth.shape().to_vec(), |i| (start..end).contains(&i[SLOT_AXIS]))?;
        let score = |p: &DayPrediction| match relative_residual(&p.tensor, truth, &mask) {
            Ok(v) => Ok(v),
            Err(Error::ZeroReference) => Ok(f64::NAN),
            Err(e) => Err(e),
        };
        blocks.push(BlockResidual {
            start,
            len,
            res_long: score(long_term)?,
            res_updated: score(updated)?,
            partial: len < window,
        });
        start = end;
    }
    Ok(blocks)
}

/// Observation mask over a single day that covers the first `prefix` slots.
pub fn prefix_mask(locations: usize, slots: usize, prefix: usize) -> Result<ObservationMask> {
    ObservationMask::from_fn(vec![locations, 1, slots], |i| i[SLOT_AXIS] < prefix)
}
