//! CP models and their alternating-least-squares fit.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::pinv_symmetric;
use crate::tensor::{
    for_each_index, gram_hadamard_except, khatri_rao_except, relative_residual, unfold, DenseTensor, FactorMatrix,
    ObservationMask,
};

/// `⟦λ; U^(1), ..., U^(K)⟧`: weights plus one `I_k x R` factor per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    pub weights: Vec<f64>,
    pub factors: Vec<FactorMatrix>,
}

impl CpModel {
    pub fn new(weights: Vec<f64>, factors: Vec<FactorMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Shape("a CP model needs at least one factor".into()));
        }
        let rank = weights.len();
        if let Some((k, f)) = factors.iter().enumerate().find(|(_, f)| f.ncols() != rank) {
            return Err(Error::RankMismatch(format!(
                "factor {k} has {} columns but there are {rank} weights",
                f.ncols()
            )));
        }
        if factors.iter().any(|f| f.nrows() == 0) {
            return Err(Error::Shape("factor with zero rows".into()));
        }
        if !weights.iter().all(|w| w.is_finite()) || !factors.iter().all(|f| f.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("CP model"));
        }
        Ok(Self { weights, factors })
    }

    /// Unit weights; magnitudes live in the factors.
    pub fn from_factors(factors: Vec<FactorMatrix>) -> Result<Self> {
        let rank = factors.first().map_or(0, |f| f.ncols());
        Self::new(vec![1.0; rank], factors)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// Factor `mode` with the weights multiplied into its columns.
    pub fn absorbed_factor(&self, mode: usize) -> FactorMatrix {
        let mut f = self.factors[mode].clone();
        for (r, &w) in self.weights.iter().enumerate() {
            f.column_mut(r).scale_mut(w);
        }
        f
    }

    /// Rescales every column to unit norm, moves the magnitude into the
    /// weights and sorts components by non-increasing weight.
    pub fn normalize(&mut self) {
        for r in 0..self.rank() {
            let mut w = self.weights[r];
            for f in &mut self.factors {
                let norm = f.column(r).norm();
                if norm > 0.0 {
                    f.column_mut(r).unscale_mut(norm);
                    w *= norm;
                } else {
                    w = 0.0;
                    let fill = 1.0 / (f.nrows() as f64).sqrt();
                    f.column_mut(r).fill(fill);
                }
            }
            if w < 0.0 {
                w = -w;
                self.factors[0].column_mut(r).neg_mut();
            }
            self.weights[r] = w;
        }
        let mut order: Vec<usize> = (0..self.rank()).collect();
        order.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            self.weights = order.iter().map(|&r| self.weights[r]).collect();
            for f in &mut self.factors {
                *f = f.select_columns(&order);
            }
        }
    }

    /// Value of the model at one index tuple.
    pub fn value_at(&self, index: &[usize]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .zip(index)
                    .fold(self.weights[r], |acc, (f, &i)| acc * f[(i, r)])
            })
            .sum()
    }

    pub fn reconstruct(&self) -> DenseTensor {
        let shape = self.shape();
        let rank = self.rank();
        let order = self.order();
        // Row-major traversal: accumulate the product over all but the last
        // mode once per fiber.
        let last = order - 1;
        let fiber = shape[last];
        let mut data = Vec::with_capacity(shape.iter().product());
        let mut partial = vec![0.0; rank];
        let outer: Vec<usize> = shape[..last].to_vec();
        let mut emit = |prefix: &[usize]| {
            for (r, p) in partial.iter_mut().enumerate() {
                *p = self.factors[..last]
                    .iter()
                    .zip(prefix)
                    .fold(self.weights[r], |acc, (f, &i)| acc * f[(i, r)]);
            }
            let u = &self.factors[last];
            for i in 0..fiber {
                data.push(partial.iter().enumerate().map(|(r, p)| p * u[(i, r)]).sum());
            }
        };
        if outer.is_empty() {
            emit(&[]);
        } else {
            for_each_index(&outer, |prefix| emit(prefix));
        }
        DenseTensor::new(shape, data).expect("shape derived from factors")
    }
}

/// Entry `(i_1, ..., i_K)` is `Σ_r λ_r ∏_k U^(k)[i_k, r]`.
pub fn cp_reconstruct(model: &CpModel) -> Result<DenseTensor> {
    CpModel::new(model.weights.clone(), model.factors.clone())?;
    Ok(model.reconstruct())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once successive relative errors differ by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl AlsConfig {
    pub fn new(rank: usize) -> Self {
        Self { rank, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self { rank: 50, max_iters: 500, tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct CpFit {
    pub model: CpModel,
    /// Relative reconstruction error after each sweep.
    pub history: Vec<f64>,
    /// Some Gram Hadamard product was singular during the fit.
    pub degenerate: bool,
}

/// Matricized-tensor times Khatri-Rao product, streamed over the cells.
///
/// Equals `unfold(t, mode) * khatri_rao_except(factors, mode)` without
/// materialising either operand.
pub fn mttkrp(t: &DenseTensor, factors: &[FactorMatrix], mode: usize) -> DMatrix<f64> {
    let rank = factors[0].ncols();
    let mut out = DMatrix::zeros(t.shape()[mode], rank);
    let mut prod = vec![0.0; rank];
    let data = t.data();
    let mut flat = 0;
    for_each_index(t.shape(), |idx| {
        let x = data[flat];
        flat += 1;
        if x == 0.0 {
            return;
        }
        prod.fill(x);
        for (k, f) in factors.iter().enumerate() {
            if k != mode {
                for (r, p) in prod.iter_mut().enumerate() {
                    *p *= f[(idx[k], r)];
                }
            }
        }
        for (r, p) in prod.iter().enumerate() {
            out[(idx[mode], r)] += p;
        }
    });
    out
}

fn check_rank_feasible(shape: &[usize], rank: usize) -> Result<()> {
    let total: usize = shape.iter().product();
    let limit = shape.iter().map(|&e| total / e).min().unwrap_or(0);
    if rank > limit {
        return Err(Error::RankInfeasible {
            rank,
            reason: format!("exceeds the smallest unfolding width {limit} for shape {shape:?}"),
        });
    }
    Ok(())
}

fn random_model(shape: &[usize], rank: usize, seed: u64) -> CpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = shape
        .iter()
        .map(|&n| DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let mut model = CpModel { weights: vec![1.0; rank], factors };
    model.normalize();
    model
}

/// One ALS sweep over all modes; returns whether a solve was degenerate.
fn als_sweep(t: &DenseTensor, model: &mut CpModel) -> bool {
    let mut degenerate = false;
    for mode in 0..model.order() {
        let gram = gram_hadamard_except(&model.factors, mode);
        let (gram_pinv, singular) = pinv_symmetric(&gram);
        degenerate |= singular;
        let m = mttkrp(t, &model.factors, mode);
        let mut updated = m * gram_pinv;
        let mut weights = vec![0.0; model.rank()];
        for (r, w) in weights.iter_mut().enumerate() {
            let norm = updated.column(r).norm();
            if norm > 0.0 {
                updated.column_mut(r).unscale_mut(norm);
                *w = norm;
            } else {
                let unit = 1.0 / (updated.nrows() as f64).sqrt();
                updated.column_mut(r).fill(unit);
            }
        }
        model.factors[mode] = updated;
        model.weights = weights;
    }
    degenerate
}

fn relative_error(t: &DenseTensor, model: &CpModel, t_norm: f64) -> f64 {
    if t_norm == 0.0 {
        return model.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    }
    let recon = model.reconstruct();
    let diff: f64 = t.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    diff.sqrt() / t_norm
}

fn check_inputs(t: &DenseTensor, cfg: &AlsConfig) -> Result<()> {
    cfg.validate()?;
    if t.order() < 2 {
        return Err(Error::Shape("CP fit needs a tensor with at least two modes".into()));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("input tensor"));
    }
    check_rank_feasible(t.shape(), cfg.rank)
}

/// Fits a rank-`cfg.rank` CP model by alternating least squares.
pub fn cp_fit(t: &DenseTensor, cfg: &AlsConfig) -> Result<CpFit> {
    check_inputs(t, cfg)?;
    let t_norm = t.frobenius_norm();
    let mut model = random_model(t.shape(), cfg.rank, cfg.seed);
    let mut history = Vec::new();
    let mut degenerate = false;
    for _ in 0..cfg.max_iters {
        degenerate |= als_sweep(t, &mut model);
        let err = relative_error(t, &model, t_norm);
        let converged = history.last().is_some_and(|prev: &f64| (prev - err).abs() < cfg.tol);
        history.push(err);
        if converged || err == 0.0 {
            break;
        }
    }
    model.normalize();
    log::debug!("cp_fit rank {} finished after {} sweeps", cfg.rank, history.len());
    Ok(CpFit { model, history, degenerate })
}

/// Fits CP to the observed cells only, imputing missing cells with the
/// running reconstruction before every sweep (EM-style).
pub fn cp_fit_masked(t: &DenseTensor, mask: &ObservationMask, cfg: &AlsConfig) -> Result<CpFit> {
    check_inputs(t, cfg)?;
    mask.check_matches(t)?;
    let flags = mask.flags();
    let observed: Vec<f64> = t.data().iter().zip(flags).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let mut work = t.clone();
    for (v, &m) in work.data_mut().iter_mut().zip(flags) {
        if !m {
            *v = mean;
        }
    }
    let mut model = random_model(t.shape(), cfg.rank, cfg.seed);
    let mut history = Vec::new();
    let mut degenerate = false;
    for _ in 0..cfg.max_iters {
        degenerate |= als_sweep(&work, &mut model);
        let recon = model.reconstruct();
        for ((w, r), &m) in work.data_mut().iter_mut().zip(recon.data()).zip(flags) {
            if !m {
                *w = *r;
            }
        }
        let err = relative_residual(&recon, t, mask).unwrap_or(0.0);
        let converged = history.last().is_some_and(|prev: &f64| (prev - err).abs() < cfg.tol);
        history.push(err);
        if converged || err == 0.0 {
            break;
        }
    }
    model.normalize();
    Ok(CpFit { model, history, degenerate })
}

/// Least-squares optimal factor for `mode` with every other factor fixed.
#[derive(Debug, Clone)]
pub struct ModeSolve {
    /// The new factor with the model weights folded in.
    pub factor: FactorMatrix,
    pub degenerate: bool,
}

/// Solves one mode: `unfold(t, mode) · KR(others) · pinv(⊛ Grams)`.
pub fn cp_solve_mode(t: &DenseTensor, model: &CpModel, mode: usize) -> Result<ModeSolve> {
    if mode >= t.order() {
        return Err(Error::ModeOutOfRange { mode, order: t.order() });
    }
    if model.order() != t.order() {
        return Err(Error::RankMismatch(format!(
            "model has {} modes, tensor has {}",
            model.order(),
            t.order()
        )));
    }
    for (k, (f, &extent)) in model.factors.iter().zip(t.shape()).enumerate() {
        if k != mode && f.nrows() != extent {
            return Err(Error::RankMismatch(format!(
                "factor {k} has {} rows but the tensor extent is {extent}",
                f.nrows()
            )));
        }
    }
    let kr = khatri_rao_except(&model.factors, mode)?;
    let (gram_pinv, degenerate) = pinv_symmetric(&gram_hadamard_except(&model.factors, mode));
    let factor = unfold(t, mode)? * kr * gram_pinv;
    Ok(ModeSolve { factor, degenerate })
}

/// Candidates whose holdout residual is within this relative margin of the
/// best are treated as tied.
const RANK_TIE_RTOL: f64 = 1e-2;
const RANK_TIE_ATOL: f64 = 1e-6;

/// Picks the candidate rank with the lowest residual on a random holdout set.
pub fn cp_rank_select(
    t: &DenseTensor,
    candidate_ranks: &[usize],
    holdout_fraction: f64,
    cfg: &AlsConfig,
) -> Result<usize> {
    if candidate_ranks.is_empty() {
        return Err(Error::InvalidArgument("no candidate ranks".into()));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {holdout_fraction} outside (0, 0.5)"
        )));
    }
    let mut ranks = candidate_ranks.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.len() == 1 {
        return Ok(ranks[0]);
    }
    let n = t.len();
    let holdout = ((holdout_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut cells: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5e1e);
    cells.shuffle(&mut rng);
    let mut held = vec![false; n];
    for &c in &cells[..holdout] {
        held[c] = true;
    }
    let train_mask = ObservationMask::new(t.shape().to_vec(), held.iter().map(|h| !h).collect())?;
    let test_mask = ObservationMask::new(t.shape().to_vec(), held)?;

    let mut scores = Vec::with_capacity(ranks.len());
    for &rank in &ranks {
        let fit = cp_fit_masked(t, &train_mask, &AlsConfig { rank, ..cfg.clone() })?;
        let res = relative_residual(&fit.model.reconstruct(), t, &test_mask).unwrap_or(0.0);
        log::debug!("rank {rank}: holdout RES {res:.6}");
        scores.push(res);
    }
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let chosen = ranks
        .iter()
        .zip(&scores)
        .find(|(_, &s)| s <= best * (1.0 + RANK_TIE_RTOL) + RANK_TIE_ATOL)
        .map(|(&r, _)| r)
        .expect("best score is attained");
    Ok(chosen)
}
