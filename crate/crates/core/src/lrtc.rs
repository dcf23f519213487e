//! Bayesian low-rank tensor completion over a CP generative model.
//!
//! Generative model, with the weights absorbed into the factor rows:
//!
//! ```text
//! τ   ~ Ga(a0, b0)            λ_r ~ Ga(c0, d0)
//! u_i^(k) ~ N(0, diag(λ)^{-1})    for every row i of every mode k
//! y_j ~ N(⟨u_{j1}^(1), ..., u_{jK}^(K)⟩, τ^{-1})    for observed j
//! ```
//!
//! Inference is mean-field coordinate-ascent variational Bayes: Gaussian
//! row posteriors, Gamma posteriors for each `λ_r` and for `τ`. Every
//! update is the exact conditional optimum, so the evidence lower bound
//! never decreases from one sweep to the next. Factor means start from the
//! leading eigenvectors of each zero-filled unfolding, so surplus components
//! start near zero and their precisions grow quickly. Components whose
//! precision `E[λ_r]` has grown far beyond the smallest, or whose energy is
//! negligible, are pruned once the sweeps finish.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::spd_inverse_logdet;
use crate::tensor::{for_each_index, unfold, DenseTensor, ObservationMask};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct LrtcHyperParams {
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub d0: f64,
    /// Initial number of components.
    pub max_rank: usize,
    pub max_iters: usize,
    /// Stop when the relative ELBO change of a sweep falls below this.
    pub elbo_tol: f64,
    /// Drop component `r` when `E[λ_r] > prune_ratio * min E[λ]`.
    pub prune_ratio: f64,
    /// Drop component `r` when its share of the total component energy
    /// `∏_k ‖ũ_r^(k)‖²` falls below this.
    pub prune_energy: f64,
    pub seed: u64,
}

impl Default for LrtcHyperParams {
    fn default() -> Self {
        Self {
            a0: 1e-6,
            b0: 1e-6,
            c0: 1e-6,
            d0: 1e-6,
            max_rank: 10,
            max_iters: 200,
            elbo_tol: 1e-7,
            prune_ratio: 1e6,
            prune_energy: 1e-8,
            seed: 0,
        }
    }
}

impl LrtcHyperParams {
    pub fn validate(&self) -> Result<()> {
        let gammas = [self.a0, self.b0, self.c0, self.d0];
        if !gammas.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument("Gamma hyperparameters must be positive".into()));
        }
        if self.max_rank == 0 || self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_rank and max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Shape/rate parameters of a Gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    fn expected_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }

    fn entropy(&self) -> f64 {
        self.shape - self.rate.ln() + ln_gamma(self.shape) + (1.0 - self.shape) * digamma(self.shape)
    }
}

#[derive(Debug, Clone)]
pub struct LrtcPosterior {
    pub shape: Vec<usize>,
    /// Per mode, `I_k x R` matrix of row means.
    pub factor_means: Vec<DMatrix<f64>>,
    /// Per mode, one `R x R` covariance per row.
    pub factor_covs: Vec<Vec<DMatrix<f64>>>,
    pub lambda_post: Vec<GammaParams>,
    pub tau_post: GammaParams,
    /// ELBO after each sweep (before pruning).
    pub elbo_trace: Vec<f64>,
    /// Components removed by rank pruning.
    pub pruned: usize,
}

impl LrtcPosterior {
    pub fn rank(&self) -> usize {
        self.lambda_post.len()
    }
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    /// Observations on Ω, predictive means elsewhere.
    pub imputed: DenseTensor,
    /// Predictive variance on missing cells, zero on observed ones.
    pub predictive_variance: DenseTensor,
    pub effective_rank: usize,
}

struct Observations {
    /// `K` indices per observed cell.
    index: Vec<usize>,
    values: Vec<f64>,
    /// Per mode and row, the observation ids that touch that row.
    by_row: Vec<Vec<Vec<usize>>>,
}

impl Observations {
    fn collect(y: &DenseTensor, mask: &ObservationMask) -> Self {
        let shape = y.shape();
        let order = shape.len();
        let mut index = Vec::new();
        let mut values = Vec::new();
        let mut by_row: Vec<Vec<Vec<usize>>> = shape.iter().map(|&n| vec![Vec::new(); n]).collect();
        let flags = mask.flags();
        let mut flat = 0;
        for_each_index(shape, |idx| {
            if flags[flat] {
                let id = values.len();
                values.push(y.data()[flat]);
                index.extend_from_slice(idx);
                for (k, &i) in idx.iter().enumerate() {
                    by_row[k][i].push(id);
                }
            }
            flat += 1;
        });
        debug_assert_eq!(index.len(), values.len() * order);
        Self { index, values, by_row }
    }

    fn idx(&self, id: usize, order: usize) -> &[usize] {
        &self.index[id * order..(id + 1) * order]
    }
}

struct State {
    rank: usize,
    /// Per mode, row-major `I_k x R` row means.
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<DMatrix<f64>>>,
    logdets: Vec<Vec<f64>>,
    /// Per mode, `ũũᵀ + V` for every row, each stored as `R x R`.
    second: Vec<Vec<f64>>,
    lambda: Vec<GammaParams>,
    tau: GammaParams,
    /// `E[Σ_Ω (y − ⟨u⟩)²]` for the current factors.
    sq_err: f64,
}

impl State {
    fn refresh_second(&mut self, mode: usize, i: usize) {
        let r = self.rank;
        let m = &self.means[mode][i * r..(i + 1) * r];
        let v = &self.covs[mode][i];
        let out = &mut self.second[mode][i * r * r..(i + 1) * r * r];
        for a in 0..r {
            for b in 0..r {
                out[a * r + b] = m[a] * m[b] + v[(a, b)];
            }
        }
    }

    /// Hadamard products over the modes other than `skip` of the second
    /// moments (into `h`) and the means (into `g`) for one observation.
    fn products(&self, idx: &[usize], skip: Option<usize>, h: &mut [f64], g: &mut [f64]) {
        let (r, rr) = (self.rank, self.rank * self.rank);
        h.fill(1.0);
        g.fill(1.0);
        for (k, &i) in idx.iter().enumerate() {
            if Some(k) == skip {
                continue;
            }
            for (hq, sq) in h.iter_mut().zip(&self.second[k][i * rr..(i + 1) * rr]) {
                *hq *= sq;
            }
            for (gq, mq) in g.iter_mut().zip(&self.means[k][i * r..(i + 1) * r]) {
                *gq *= mq;
            }
        }
    }

    fn expected_sq_error(&self, obs: &Observations) -> f64 {
        let order = self.means.len();
        let (mut h, mut g) = (vec![0.0; self.rank * self.rank], vec![0.0; self.rank]);
        let mut total = 0.0;
        for (id, &y) in obs.values.iter().enumerate() {
            self.products(obs.idx(id, order), None, &mut h, &mut g);
            total += y * y - 2.0 * y * g.iter().sum::<f64>() + h.iter().sum::<f64>();
        }
        total
    }

    fn update_mode(&mut self, mode: usize, obs: &Observations) {
        let order = self.means.len();
        let r = self.rank;
        let e_tau = self.tau.mean();
        let (mut h, mut g) = (vec![0.0; r * r], vec![0.0; r]);
        let mut a = DMatrix::zeros(r, r);
        let mut b = DVector::zeros(r);
        for i in 0..obs.by_row[mode].len() {
            a.fill(0.0);
            b.fill(0.0);
            for &id in &obs.by_row[mode][i] {
                self.products(obs.idx(id, order), Some(mode), &mut h, &mut g);
                // `h` is symmetric, so its storage order does not matter.
                for (aq, hq) in a.as_mut_slice().iter_mut().zip(&h) {
                    *aq += hq;
                }
                let y = obs.values[id];
                for (bq, gq) in b.iter_mut().zip(&g) {
                    *bq += y * gq;
                }
            }
            let mut precision = &a * e_tau;
            for q in 0..r {
                precision[(q, q)] += self.lambda[q].mean();
            }
            let (cov, logdet_prec) = spd_inverse_logdet(&precision);
            let mean = &cov * &b * e_tau;
            self.means[mode][i * r..(i + 1) * r].copy_from_slice(mean.as_slice());
            self.covs[mode][i] = cov;
            self.logdets[mode][i] = -logdet_prec;
            self.refresh_second(mode, i);
        }
    }

    /// `Σ_i (ũ_ir² + V_i[r, r])` summed over all modes, per component.
    fn component_energy(&self) -> Vec<f64> {
        let (r, rr) = (self.rank, self.rank * self.rank);
        let mut energy = vec![0.0; r];
        for second in &self.second {
            for row in second.chunks_exact(rr) {
                for (q, e) in energy.iter_mut().enumerate() {
                    *e += row[q * r + q];
                }
            }
        }
        energy
    }

    fn update_lambda(&mut self, hp: &LrtcHyperParams) {
        let rows: usize = self.covs.iter().map(Vec::len).sum();
        let energy = self.component_energy();
        for (g, e) in self.lambda.iter_mut().zip(energy) {
            *g = GammaParams { shape: hp.c0 + 0.5 * rows as f64, rate: hp.d0 + 0.5 * e };
        }
    }

    fn update_tau(&mut self, hp: &LrtcHyperParams, obs: &Observations) {
        self.sq_err = self.expected_sq_error(obs).max(0.0);
        self.tau = GammaParams { shape: hp.a0 + 0.5 * obs.values.len() as f64, rate: hp.b0 + 0.5 * self.sq_err };
    }

    /// Evidence lower bound; `sq_err` must be current.
    fn elbo(&self, hp: &LrtcHyperParams, obs: &Observations) -> f64 {
        let rank = self.rank as f64;
        let n_obs = obs.values.len() as f64;
        let e_tau = self.tau.mean();
        let elog_tau = self.tau.expected_log();
        let likelihood = 0.5 * n_obs * (elog_tau - LN_2PI) - 0.5 * e_tau * self.sq_err;

        let rows: f64 = self.covs.iter().map(Vec::len).sum::<usize>() as f64;
        let elog_lambda: f64 = self.lambda.iter().map(|g| g.expected_log()).sum();
        let quad: f64 = self.component_energy().iter().zip(&self.lambda).map(|(e, g)| g.mean() * e).sum();
        let factor_prior = rows * (-0.5 * rank * LN_2PI + 0.5 * elog_lambda) - 0.5 * quad;
        let factor_entropy: f64 = self
            .logdets
            .iter()
            .flatten()
            .map(|ld| 0.5 * rank * (1.0 + LN_2PI) + 0.5 * ld)
            .sum();
        let lambda_prior: f64 = self
            .lambda
            .iter()
            .map(|g| hp.c0 * hp.d0.ln() - ln_gamma(hp.c0) + (hp.c0 - 1.0) * g.expected_log() - hp.d0 * g.mean())
            .sum();
        let tau_prior = hp.a0 * hp.b0.ln() - ln_gamma(hp.a0) + (hp.a0 - 1.0) * elog_tau - hp.b0 * e_tau;
        let lambda_entropy: f64 = self.lambda.iter().map(|g| g.entropy()).sum();
        likelihood + factor_prior + lambda_prior + tau_prior + factor_entropy + lambda_entropy + self.tau.entropy()
    }

    fn init(y: &DenseTensor, mask: &ObservationMask, obs: &Observations, hp: &LrtcHyperParams) -> Self {
        let shape = y.shape();
        let order = shape.len() as f64;
        let rank = hp.max_rank;
        let n = obs.values.len() as f64;
        let mean_sq = obs.values.iter().map(|v| v * v).sum::<f64>() / n;
        let rms = if mean_sq > 0.0 { mean_sq.sqrt() } else { 1.0 };
        let scale = (rms / (rank as f64).sqrt()).powf(1.0 / order);
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let filled = DenseTensor::from_fn(shape.to_vec(), |idx| {
            if mask.is_observed(idx) {
                y.get(idx) * y.len() as f64 / n
            } else {
                0.0
            }
        })
        .expect("shape already validated");
        let means: Vec<Vec<f64>> = (0..shape.len())
            .map(|k| {
                let rows = shape[k];
                let m = unfold(&filled, k).expect("mode in range");
                let eig = (&m * m.transpose()).symmetric_eigen();
                let mut ranked: Vec<usize> = (0..rows).collect();
                ranked.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
                let mut out = vec![0.0; rows * rank];
                for r in 0..rank {
                    let lead = ranked.get(r).map(|&c| (c, eig.eigenvalues[c].max(0.0).powf(0.5 / order)));
                    for i in 0..rows {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let base = lead.map_or(0.0, |(c, w)| eig.eigenvectors[(i, c)] * w);
                        out[i * rank + r] = base + 1e-2 * scale * z;
                    }
                }
                out
            })
            .collect();
        let v0 = scale * scale * 1e-2;
        let covs: Vec<Vec<DMatrix<f64>>> =
            shape.iter().map(|&rows| vec![DMatrix::identity(rank, rank) * v0; rows]).collect();
        let logdets = shape.iter().map(|&rows| vec![rank as f64 * v0.ln(); rows]).collect();
        let variance = mean_sq - (obs.values.iter().sum::<f64>() / n).powi(2);
        let tau_rate = if variance > 0.0 { variance } else { mean_sq.max(1.0) };
        let mut state = State {
            rank,
            means,
            covs,
            logdets,
            second: shape.iter().map(|&rows| vec![0.0; rows * rank * rank]).collect(),
            lambda: vec![GammaParams { shape: 1.0, rate: scale * scale }; rank],
            tau: GammaParams { shape: 1.0, rate: tau_rate },
            sq_err: 0.0,
        };
        for (k, &rows) in shape.iter().enumerate() {
            for i in 0..rows {
                state.refresh_second(k, i);
            }
        }
        state
    }

    fn mean_matrix(&self, mode: usize) -> DMatrix<f64> {
        let rows = self.covs[mode].len();
        DMatrix::from_row_slice(rows, self.rank, &self.means[mode])
    }

    /// Components to keep after fitting.
    fn surviving_components(&self, hp: &LrtcHyperParams) -> Vec<usize> {
        let rank = self.rank;
        let min_lambda = self.lambda.iter().map(|g| g.mean()).fold(f64::INFINITY, f64::min);
        let energy: Vec<f64> = (0..rank)
            .map(|r| {
                (0..self.means.len())
                    .map(|k| self.means[k].iter().skip(r).step_by(rank).map(|v| v * v).sum::<f64>())
                    .product()
            })
            .collect();
        let total: f64 = energy.iter().sum();
        let keep: Vec<usize> = (0..rank)
            .filter(|&r| self.lambda[r].mean() <= hp.prune_ratio * min_lambda)
            .filter(|&r| total == 0.0 || energy[r] >= hp.prune_energy * total)
            .collect();
        if keep.is_empty() {
            // Keep the strongest component so the posterior stays usable.
            let best = (0..rank).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap_or(0);
            vec![best]
        } else {
            keep
        }
    }
}

fn check_inputs(y: &DenseTensor, mask: &ObservationMask) -> Result<()> {
    mask.check_matches(y)?;
    let finite = y.data().iter().zip(mask.flags()).all(|(v, &m)| !m || v.is_finite());
    if !finite {
        return Err(Error::NonFinite("observed values"));
    }
    Ok(())
}

/// Variational posterior of the CP generative model given the observed
/// cells of `y`.
pub fn lrtc_fit(y: &DenseTensor, mask: &ObservationMask, hp: &LrtcHyperParams) -> Result<LrtcPosterior> {
    hp.validate()?;
    check_inputs(y, mask)?;
    let obs = Observations::collect(y, mask);
    if obs.values.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut state = State::init(y, mask, &obs, hp);
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..hp.max_iters {
        for mode in 0..y.order() {
            state.update_mode(mode, &obs);
        }
        state.update_lambda(hp);
        state.update_tau(hp, &obs);
        let elbo = state.elbo(hp, &obs);
        let converged = trace
            .last()
            .is_some_and(|&prev| (elbo - prev).abs() <= hp.elbo_tol * elbo.abs().max(1.0));
        trace.push(elbo);
        if converged {
            break;
        }
    }
    let keep = state.surviving_components(hp);
    let pruned = hp.max_rank - keep.len();
    log::debug!("lrtc: {} sweeps, kept {} of {} components", trace.len(), keep.len(), hp.max_rank);
    let factor_means = (0..y.order()).map(|k| state.mean_matrix(k).select_columns(&keep)).collect();
    let factor_covs = state
        .covs
        .iter()
        .map(|covs| covs.iter().map(|v| v.select_rows(&keep).select_columns(&keep)).collect())
        .collect();
    Ok(LrtcPosterior {
        shape: y.shape().to_vec(),
        factor_means,
        factor_covs,
        lambda_post: keep.iter().map(|&r| state.lambda[r]).collect(),
        tau_post: state.tau,
        elbo_trace: trace,
        pruned,
    })
}

/// Posterior-predictive mean and variance for every cell; observed cells
/// are passed through unchanged.
pub fn lrtc_predict(post: &LrtcPosterior, mask: &ObservationMask, y: &DenseTensor) -> Result<CompletionResult> {
    if y.shape() != post.shape.as_slice() {
        return Err(Error::DimensionMismatch(format!(
            "posterior fitted on {:?}, data has shape {:?}",
            post.shape,
            y.shape()
        )));
    }
    mask.check_matches(y)?;
    let rank = post.rank();
    let order = y.order();
    let noise_var = 1.0 / post.tau_post.mean();
    let mut imputed = y.clone();
    let mut variance = DenseTensor::zeros(y.shape().to_vec())?;
    let flags = mask.flags();
    let mut flat = 0;
    let mut rows: Vec<DVector<f64>> = vec![DVector::zeros(rank); order];
    for_each_index(y.shape(), |idx| {
        if !flags[flat] {
            for (k, &i) in idx.iter().enumerate() {
                rows[k] = post.factor_means[k].row(i).transpose();
            }
            let mean: f64 = (0..rank).map(|r| rows.iter().map(|u| u[r]).product::<f64>()).sum();
            // First-order propagation of each mode's row covariance.
            let mut var = noise_var;
            for n in 0..order {
                let mut g = DVector::from_element(rank, 1.0);
                for (k, u) in rows.iter().enumerate() {
                    if k != n {
                        g.component_mul_assign(u);
                    }
                }
                var += (g.transpose() * &post.factor_covs[n][idx[n]] * &g)[(0, 0)];
            }
            imputed.data_mut()[flat] = mean;
            variance.data_mut()[flat] = var;
        }
        flat += 1;
    });
    Ok(CompletionResult { imputed, predictive_variance: variance, effective_rank: rank })
}

/// Short-horizon prediction: the cells to predict are marked missing in
/// `future_mask` and completed from the rest.
///
/// Completion only fills closed dimensions, so a day with no observed cell
/// at all (an extension of the day axis) is rejected.
pub fn short_term_predict(t: &DenseTensor, future_mask: &ObservationMask, hp: &LrtcHyperParams) -> Result<CompletionResult> {
    future_mask.check_matches(t)?;
    if t.order() == 3 {
        let s = t.shape();
        let flags = future_mask.flags();
        for day in 0..s[1] {
            let any = (0..s[0]).any(|l| (0..s[2]).any(|p| flags[(l * s[1] + day) * s[2] + p]));
            if !any {
                return Err(Error::InvalidMask(format!(
                    "day {day} is entirely unobserved; completion cannot extend the day axis"
                )));
            }
        }
    }
    if future_mask.missing_count() == 0 {
        return Ok(CompletionResult {
            imputed: t.clone(),
            predictive_variance: DenseTensor::zeros(t.shape().to_vec())?,
            effective_rank: 0,
        });
    }
    let post = lrtc_fit(t, future_mask, hp)?;
    lrtc_predict(&post, future_mask, t)
}
