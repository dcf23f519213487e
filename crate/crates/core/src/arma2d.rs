//! Two-dimensional ARMA random fields over a day-of-week x week grid.
//!
//! A temporal series `u[t]` is folded so that `v[d, w] = u[w * D + d]`:
//! rows are days of the week, columns are weeks. The model is
//!
//! ```text
//! v[d,w] + Σ_{(i,j)≠(0,0)} a_ij v[d−i, w−j] = Σ_{i,j} b_ij ε[d−i, w−j]
//! ```
//!
//! with `b_00 = 1` and `ε` white noise of variance `σ²`. Lags follow the
//! folded series in time order: lag `(i, j)` of the cell at time `t` is the
//! cell at `t − i − jD`, so a day lag reaching before the first day of a
//! week lands on the end of the previous week. Estimation and forecasting
//! both use this reading; estimation skips cells whose lags fall before
//! the start of the series rather than padding them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmaOrders {
    /// AR lag along the day-of-week axis.
    pub p1: usize,
    /// AR lag along the week axis.
    pub p2: usize,
    pub q1: usize,
    pub q2: usize,
}

impl ArmaOrders {
    pub const fn new(p1: usize, p2: usize, q1: usize, q2: usize) -> Self {
        Self { p1, p2, q1, q2 }
    }

    /// `(p1+1)(p2+1) − 1`
    pub fn ar_count(&self) -> usize {
        (self.p1 + 1) * (self.p2 + 1) - 1
    }

    /// `(q1+1)(q2+1)`, including the fixed `b_00`.
    pub fn ma_count(&self) -> usize {
        (self.q1 + 1) * (self.q2 + 1)
    }

    pub fn has_ma(&self) -> bool {
        self.q1 + self.q2 > 0
    }

    fn ar_lags(&self) -> Vec<(usize, usize)> {
        grid_lags(self.p1, self.p2)
    }

    fn ma_lags(&self) -> Vec<(usize, usize)> {
        grid_lags(self.q1, self.q2)
    }
}

impl Default for ArmaOrders {
    fn default() -> Self {
        Self::new(2, 2, 0, 0)
    }
}

impl std::fmt::Display for ArmaOrders {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.p1, self.p2, self.q1, self.q2)
    }
}

impl std::str::FromStr for ArmaOrders {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("ARMA orders '{s}': {e}")))?;
        match parts[..] {
            [p1, p2, q1, q2] => Ok(Self::new(p1, p2, q1, q2)),
            _ => Err(Error::Parse(format!("ARMA orders '{s}' need four comma-separated values"))),
        }
    }
}

/// Every `(i, j)` in `[0, m1] x [0, m2]` except the origin.
fn grid_lags(m1: usize, m2: usize) -> Vec<(usize, usize)> {
    (0..=m2)
        .flat_map(|j| (0..=m1).map(move |i| (i, j)))
        .filter(|&l| l != (0, 0))
        .collect()
}

/// Values `v[d, w]` on a `D x W` grid. Present cells form a prefix of the
/// folded time order; trailing cells of a partial last week are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    days: usize,
    weeks: usize,
    values: Vec<f64>,
    present: usize,
}

impl Field2D {
    /// Fully observed field from a `D x W` matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::Shape("field needs at least one day and one week".into()));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("field"));
        }
        // nalgebra storage is column-major, which is exactly the folded order.
        Ok(Self { days: m.nrows(), weeks: m.ncols(), values: m.as_slice().to_vec(), present: m.len() })
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn weeks(&self) -> usize {
        self.weeks
    }

    /// Number of present cells.
    pub fn observed_len(&self) -> usize {
        self.present
    }

    pub fn is_present(&self, d: usize, w: usize) -> bool {
        w * self.days + d < self.present
    }

    pub fn get(&self, d: usize, w: usize) -> Option<f64> {
        self.is_present(d, w).then(|| self.values[w * self.days + d])
    }

    /// Dense view; absent cells read as NaN.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.days, self.weeks, |d, w| self.get(d, w).unwrap_or(f64::NAN))
    }

    /// Present cells in folded time order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values[..self.present].to_vec()
    }
}

/// Folds `u` into a `D x ceil(T/D)` field with `v[d, w] = u[w * D + d]`.
pub fn reshape_to_field(u: &[f64], days_per_week: usize) -> Result<Field2D> {
    if u.is_empty() {
        return Err(Error::InvalidArgument("cannot reshape an empty series".into()));
    }
    if days_per_week == 0 {
        return Err(Error::InvalidArgument("days_per_week must be at least 1".into()));
    }
    if !u.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("series"));
    }
    let weeks = u.len().div_ceil(days_per_week);
    let mut values = u.to_vec();
    values.resize(weeks * days_per_week, 0.0);
    Ok(Field2D { days: days_per_week, weeks, values, present: u.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arma2dModel {
    pub orders: ArmaOrders,
    /// `(p1+1) x (p2+1)` grid of `a_ij`; the `(0,0)` cell is unused and zero.
    pub ar: DMatrix<f64>,
    /// `(q1+1) x (q2+1)` grid of `b_ij` with `b_00 = 1`.
    pub ma: DMatrix<f64>,
    pub sigma2: f64,
    /// Sample mean removed before fitting and re-added to forecasts.
    pub mean: f64,
    /// Standard errors of the AR coefficients, same layout as `ar`.
    pub ar_std_err: DMatrix<f64>,
    /// The final regression was rank deficient (minimum-norm solution).
    pub degenerate: bool,
}

impl Arma2dModel {
    /// All coefficients zero, `b_00 = 1`, zero mean.
    pub fn zero(orders: ArmaOrders) -> Self {
        let mut ma = DMatrix::zeros(orders.q1 + 1, orders.q2 + 1);
        ma[(0, 0)] = 1.0;
        Self {
            orders,
            ar: DMatrix::zeros(orders.p1 + 1, orders.p2 + 1),
            ma,
            sigma2: 0.0,
            mean: 0.0,
            ar_std_err: DMatrix::zeros(orders.p1 + 1, orders.p2 + 1),
            degenerate: false,
        }
    }

    /// AR coefficients `((i, j), a_ij)`, origin excluded.
    pub fn ar_coefficients(&self) -> Vec<((usize, usize), f64)> {
        self.orders.ar_lags().into_iter().map(|l| (l, self.ar[l])).collect()
    }

    /// MA coefficients `((i, j), b_ij)`, origin included.
    pub fn ma_coefficients(&self) -> Vec<((usize, usize), f64)> {
        std::iter::once((0, 0))
            .chain(self.orders.ma_lags())
            .map(|l| (l, self.ma[l]))
            .collect()
    }
}

fn check_support(f: &Field2D, orders: ArmaOrders) -> Result<()> {
    if f.days <= orders.p1 + orders.q1 || f.weeks <= orders.p2 + orders.q2 {
        return Err(Error::InsufficientSupport(format!(
            "{}x{} grid cannot support orders ({orders})",
            f.days, f.weeks
        )));
    }
    Ok(())
}

struct Regression {
    coef: DVector<f64>,
    std_err: DVector<f64>,
    rss: f64,
    rows: usize,
    residuals: Vec<((usize, usize), f64)>,
    degenerate: bool,
}

/// Regresses `x[d, w]` on the regressors produced by `row` for every cell
/// where `row` returns `Some`.
fn regress(
    f: &Field2D,
    params: usize,
    mut row: impl FnMut(usize, usize) -> Option<(f64, Vec<f64>)>,
) -> Result<Regression> {
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut cells = Vec::new();
    for w in 0..f.weeks {
        for d in 0..f.days {
            if !f.is_present(d, w) {
                continue;
            }
            if let Some((y, regs)) = row(d, w) {
                ys.push(y);
                xs.extend(regs);
                cells.push((d, w));
            }
        }
    }
    let rows = ys.len();
    if rows <= params {
        return Err(Error::InsufficientSupport(format!(
            "{rows} usable cells for {params} coefficients"
        )));
    }
    let x = DMatrix::from_row_slice(rows, params, &xs);
    let y = DVector::from_vec(ys);
    let (coef, xtx_pinv, degenerate) = least_squares(&x, &y);
    let fitted = &x * &coef;
    let resid = &y - fitted;
    let rss = resid.norm_squared();
    let dof = (rows - params) as f64;
    let std_err = DVector::from_fn(params, |k, _| (rss / dof * xtx_pinv[(k, k)]).max(0.0).sqrt());
    let residuals = cells.into_iter().zip(resid.iter().copied()).collect();
    Ok(Regression { coef, std_err, rss, rows, residuals, degenerate })
}

/// Two-stage least-squares estimate of a 2D-ARMA model.
///
/// Stage one fits a pure AR model of orders `(p1+q1, p2+q2)` to estimate the
/// innovations; stage two regresses each cell on its AR lags and the
/// estimated innovation lags jointly.
pub fn arma2d_fit(f: &Field2D, orders: ArmaOrders) -> Result<Arma2dModel> {
    check_support(f, orders)?;
    let n = f.observed_len();
    let days = f.days;
    let mean = f.values[..n].iter().sum::<f64>() / n as f64;
    let x = |t: usize| f.values[t] - mean;
    let offsets = |lags: &[(usize, usize)]| -> Vec<usize> { lags.iter().map(|&(i, j)| i + j * days).collect() };

    let innovations: Option<Vec<Option<f64>>> = if orders.has_ma() {
        let lags = offsets(&grid_lags(orders.p1 + orders.q1, orders.p2 + orders.q2));
        let reach = lags.iter().copied().max().unwrap_or(0);
        let stage1 = regress(f, lags.len(), |d, w| {
            let t = w * days + d;
            (t >= reach).then(|| (x(t), lags.iter().map(|&o| x(t - o)).collect()))
        })?;
        let mut eps = vec![None; n];
        for ((d, w), e) in stage1.residuals {
            eps[w * days + d] = Some(e);
        }
        Some(eps)
    } else {
        None
    };

    let ar_lags = orders.ar_lags();
    let ma_lags = orders.ma_lags();
    let (ar_off, ma_off) = (offsets(&ar_lags), offsets(&ma_lags));
    let ar_reach = ar_off.iter().copied().max().unwrap_or(0);
    let params = ar_lags.len() + ma_lags.len();
    let fit = regress(f, params, |d, w| {
        let t = w * days + d;
        if t < ar_reach {
            return None;
        }
        let mut regs: Vec<f64> = ar_off.iter().map(|&o| x(t - o)).collect();
        if let Some(eps) = &innovations {
            for &o in &ma_off {
                regs.push(eps[t.checked_sub(o)?]?);
            }
        }
        Some((x(t), regs))
    })?;

    let mut model = Arma2dModel::zero(orders);
    model.mean = mean;
    model.degenerate = fit.degenerate;
    model.sigma2 = fit.rss / fit.rows as f64;
    for (k, &lag) in ar_lags.iter().enumerate() {
        // Regression gives v = −Σ a v_lag + ...; flip to the LHS convention.
        model.ar[lag] = -fit.coef[k];
        model.ar_std_err[lag] = fit.std_err[k];
    }
    for (k, &lag) in ma_lags.iter().enumerate() {
        model.ma[lag] = fit.coef[ar_lags.len() + k];
    }
    Ok(model)
}

/// Extends the field by `horizon_weeks` columns of conditional expectations.
///
/// Future innovations are zero; in-sample innovations are recomputed with
/// the model so that MA terms reaching observed cells contribute. Absent
/// trailing cells of the input are filled as forecasts too.
pub fn arma2d_forecast(model: &Arma2dModel, f: &Field2D, horizon_weeks: usize) -> Result<Field2D> {
    if horizon_weeks < 1 {
        return Err(Error::InvalidArgument("forecast horizon must be at least one week".into()));
    }
    let days = f.days;
    let weeks = f.weeks + horizon_weeks;
    let total = weeks * days;
    let observed = f.observed_len();
    let ar: Vec<(usize, f64)> = model
        .ar_coefficients()
        .into_iter()
        .filter(|(_, a)| *a != 0.0)
        .map(|((i, j), a)| (i + j * days, a))
        .collect();
    let ma: Vec<(usize, f64)> = model
        .ma_coefficients()
        .into_iter()
        .skip(1)
        .filter(|(_, b)| *b != 0.0)
        .map(|((i, j), b)| (i + j * days, b))
        .collect();

    let mut x = vec![0.0; total];
    let mut eps = vec![0.0; total];
    for t in 0..observed {
        x[t] = f.values[t] - model.mean;
    }
    for t in 0..observed {
        if ar.iter().any(|&(lag, _)| lag > t) {
            continue;
        }
        let ar_part: f64 = ar.iter().map(|&(lag, a)| a * x[t - lag]).sum();
        let ma_part: f64 = ma.iter().filter(|&&(lag, _)| lag <= t).map(|&(lag, b)| b * eps[t - lag]).sum();
        eps[t] = x[t] + ar_part - ma_part;
    }
    for t in observed..total {
        let ar_part: f64 = ar.iter().filter(|&&(lag, _)| lag <= t).map(|&(lag, a)| a * x[t - lag]).sum();
        let ma_part: f64 = ma.iter().filter(|&&(lag, _)| lag <= t).map(|&(lag, b)| b * eps[t - lag]).sum();
        x[t] = -ar_part + ma_part;
    }
    let mut values: Vec<f64> = x.iter().map(|v| v + model.mean).collect();
    values[..observed].copy_from_slice(&f.values[..observed]);
    Ok(Field2D { days, weeks, values, present: total })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Simulates the folded series `v_t = −Σ a_ij v_{t − i − jD} + ε_t`
    /// with a burn-in, returning a fully observed `D x W` field.
    pub(crate) fn simulate_ar(coeffs: &[((usize, usize), f64)], sigma: f64, days: usize, weeks: usize, seed: u64) -> Field2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let burn = 20 * days;
        let total = burn + days * weeks;
        let mut v = vec![0.0; total];
        for t in 0..total {
            let mut value = noise.sample(&mut rng);
            for &((i, j), a) in coeffs {
                let lag = i + j * days;
                if lag <= t {
                    value -= a * v[t - lag];
                }
            }
            v[t] = value;
        }
        let m = DMatrix::from_column_slice(days, weeks, &v[burn..]);
        Field2D::from_matrix(&m).unwrap()
    }

    #[test]
    fn reshape_two_weeks() {
        let u: Vec<f64> = (0..14).map(|v| v as f64).collect();
        let f = reshape_to_field(&u, 7).unwrap();
        assert_eq!((f.days(), f.weeks()), (7, 2));
        assert_eq!(f.get(3, 1), Some(10.0));
        assert_eq!(f.to_matrix().column(1).iter().copied().collect::<Vec<_>>(), u[7..].to_vec());
    }

    #[test]
    fn reshape_single_week_and_partial() {
        let u: Vec<f64> = (0..7).map(|v| v as f64 * 0.5).collect();
        let f = reshape_to_field(&u, 7).unwrap();
        assert_eq!(f.weeks(), 1);
        assert_eq!(f.flatten(), u);
        let g = reshape_to_field(&u[..5], 3).unwrap();
        assert_eq!(g.weeks(), 2);
        assert!(!g.is_present(2, 1));
        assert_eq!(g.flatten(), u[..5].to_vec());
        assert!(reshape_to_field(&[], 7).is_err());
    }

    #[test]
    fn coefficient_counts() {
        assert_eq!(ArmaOrders::new(2, 2, 0, 0).ar_count(), 8);
        let m = Arma2dModel::zero(ArmaOrders::new(2, 2, 1, 1));
        assert_eq!(m.ar_coefficients().len(), 8);
        assert_eq!(m.ma_coefficients().len(), 4);
        assert_eq!(m.ma_coefficients()[0], ((0, 0), 1.0));
    }

    #[test]
    fn zero_model_forecasts_zero() {
        let f = Field2D::from_matrix(&DMatrix::from_fn(7, 3, |d, w| (d + w) as f64)).unwrap();
        let out = arma2d_forecast(&Arma2dModel::zero(ArmaOrders::new(1, 1, 1, 1)), &f, 2).unwrap();
        assert_eq!(out.weeks(), 5);
        for w in 3..5 {
            for d in 0..7 {
                assert_eq!(out.get(d, w), Some(0.0));
            }
        }
        assert_eq!(out.get(4, 2), f.get(4, 2));
    }

    #[test]
    fn pure_week_lag_forecast() {
        let mut model = Arma2dModel::zero(ArmaOrders::new(0, 1, 0, 0));
        model.ar[(0, 1)] = -0.9;
        let f = Field2D::from_matrix(&DMatrix::from_fn(7, 2, |d, w| 1.0 + d as f64 + 3.0 * w as f64)).unwrap();
        let out = arma2d_forecast(&model, &f, 1).unwrap();
        for d in 0..7 {
            assert!((out.get(d, 2).unwrap() - 0.9 * f.get(d, 1).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn forecast_rejects_zero_horizon() {
        let f = Field2D::from_matrix(&DMatrix::zeros(7, 2)).unwrap();
        assert!(arma2d_forecast(&Arma2dModel::zero(ArmaOrders::new(1, 1, 0, 0)), &f, 0).is_err());
    }

    #[test]
    fn fit_rejects_small_grid() {
        let f = Field2D::from_matrix(&DMatrix::from_fn(3, 3, |d, w| (d * w) as f64)).unwrap();
        assert!(matches!(
            arma2d_fit(&f, ArmaOrders::new(2, 2, 1, 1)),
            Err(Error::InsufficientSupport(_))
        ));
    }

    #[test]
    fn recovers_ar11_coefficients() {
        let truth = [((0, 1), 0.5), ((1, 0), 0.3), ((1, 1), -0.15)];
        let f = simulate_ar(&truth, 0.1, 7, 200, 17);
        let model = arma2d_fit(&f, ArmaOrders::new(1, 1, 0, 0)).unwrap();
        for &(lag, a) in &truth {
            assert!((model.ar[lag] - a).abs() < 0.05, "{lag:?}: {} vs {a}", model.ar[lag]);
        }
        assert!((model.sigma2 - 0.01).abs() < 0.003);
    }

    #[test]
    fn pure_noise_gives_small_coefficients() {
        let f = simulate_ar(&[], 1.0, 7, 200, 5);
        let model = arma2d_fit(&f, ArmaOrders::new(1, 1, 0, 0)).unwrap();
        for ((i, j), a) in model.ar_coefficients() {
            assert!(a.abs() < 3.0 * model.ar_std_err[(i, j)], "a_{i}{j} = {a}");
        }
    }

    #[test]
    fn arma_fit_with_ma_terms_runs() {
        let f = simulate_ar(&[((0, 1), -0.6), ((1, 0), 0.2)], 0.5, 7, 150, 9);
        let model = arma2d_fit(&f, ArmaOrders::new(1, 1, 1, 1)).unwrap();
        assert!((model.ar[(0, 1)] + 0.6).abs() < 0.1);
        assert_eq!(model.ma[(0, 0)], 1.0);
        assert!(model.sigma2 > 0.0);
    }

    #[test]
    fn orders_parse() {
        assert_eq!("2,2,1,1".parse::<ArmaOrders>().unwrap(), ArmaOrders::new(2, 2, 1, 1));
        assert!("2,2".parse::<ArmaOrders>().is_err());
    }
}
