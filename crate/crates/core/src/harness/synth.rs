//! Seeded synthetic flow tensors with weekly and daily structure.
//!
//! Each cluster owns `rank` CP components. A component's day factor is a
//! level plus a period-7 profile plus AR(1) day-to-day noise. The profile
//! mixes a fixed day-of-week shape with a per-weekday AR(2) process over
//! weeks, so the same weekday two weeks back carries information. Its slot
//! factor is a two-peak (morning and evening) profile. Stations load on
//! their own cluster's components and, scaled by `1 − separation`, on the
//! others'.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cp::CpModel;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub stations: usize,
    pub days: usize,
    pub slots: usize,
    /// Components per cluster.
    pub rank: usize,
    /// Amplitude of the day-of-week profile relative to the level.
    pub weekly_strength: f64,
    /// Share in `[0, 1]` of the profile that varies from week to week.
    pub weekly_noise: f64,
    /// AR coefficients of the week-to-week variation at lags one and two
    /// weeks.
    pub week_ar: [f64; 2],
    /// Stationary standard deviation of the day-to-day noise.
    pub daily_strength: f64,
    /// Lag-one correlation of the day-to-day noise.
    pub day_lag_corr: f64,
    pub clusters: usize,
    /// 0 gives identical populations, 1 fully disjoint component sets.
    pub separation: f64,
    /// Relative standard deviation of station loadings within a cluster.
    pub cluster_spread: f64,
    /// Per station and day multiplicative perturbation, as a standard
    /// deviation. Non-zero values take the data off the CP model.
    pub station_jitter: f64,
    /// Cell noise standard deviation relative to the noiseless RMS.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            stations: 12,
            days: 56,
            slots: 48,
            rank: 3,
            weekly_strength: 0.6,
            weekly_noise: 0.6,
            week_ar: [0.2, 0.7],
            daily_strength: 0.05,
            day_lag_corr: 0.5,
            clusters: 1,
            separation: 0.0,
            cluster_spread: 0.1,
            station_jitter: 0.0,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.stations, self.days, self.slots, self.rank, self.clusters].contains(&0) {
            return Err(Error::InvalidArgument("synthetic extents, rank and clusters must be at least 1".into()));
        }
        if self.clusters > self.stations {
            return Err(Error::InvalidArgument(format!(
                "{} clusters for {} stations",
                self.clusters, self.stations
            )));
        }
        let strengths = [
            self.weekly_strength,
            self.daily_strength,
            self.separation,
            self.cluster_spread,
            self.station_jitter,
            self.noise_std,
        ];
        if strengths.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("synthetic strengths must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.weekly_noise) {
            return Err(Error::InvalidArgument("weekly_noise must lie in [0, 1]".into()));
        }
        let [a1, a2] = self.week_ar;
        if !(a2.abs() < 1.0 && a1 + a2 < 1.0 && a2 - a1 < 1.0) {
            return Err(Error::InvalidArgument(format!("week_ar {:?} is not stationary", self.week_ar)));
        }
        if !(self.day_lag_corr.abs() < 1.0) {
            return Err(Error::InvalidArgument("day_lag_corr must lie in (-1, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub tensor: DenseTensor,
    /// Generating model; exact for the noiseless, unjittered tensor.
    pub model: CpModel,
    /// Planted cluster of each station, stations assigned round-robin.
    pub labels: Vec<usize>,
    pub station_ids: Vec<String>,
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

fn day_factor(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Weekdays busy, weekend quiet, with a per-component twist.
    let base = [1.0, 1.0, 1.0, 1.0, 1.1, -1.6, -2.5];
    let mut profile: Vec<f64> = base.iter().map(|b| b + rng.random_range(-0.5..0.5)).collect();
    standardize(&mut profile);

    let weeks = spec.days.div_ceil(7);
    let [a1, a2] = spec.week_ar;
    let burn = 50;
    let mut drift = vec![vec![0.0; weeks]; 7];
    for row in drift.iter_mut() {
        let (mut z1, mut z2) = (0.0, 0.0);
        for w in 0..burn + weeks {
            let z = a1 * z1 + a2 * z2 + rng.sample::<f64, _>(StandardNormal);
            (z2, z1) = (z1, z);
            if w >= burn {
                row[w - burn] = z;
            }
        }
    }
    // Stationary variance of the AR(2) recursion with unit innovations.
    let var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1));
    let (fixed, varying) = ((1.0 - spec.weekly_noise.powi(2)).sqrt(), spec.weekly_noise / var.sqrt());

    let innov = spec.daily_strength * (1.0 - spec.day_lag_corr * spec.day_lag_corr).sqrt();
    let mut e: f64 = spec.daily_strength * rng.sample::<f64, _>(StandardNormal);
    (0..spec.days)
        .map(|t| {
            if t > 0 {
                e = spec.day_lag_corr * e + innov * rng.sample::<f64, _>(StandardNormal);
            }
            let weekly = fixed * profile[t % 7] + varying * drift[t % 7][t / 7];
            1.0 + 0.5 * spec.weekly_strength * weekly + e
        })
        .collect()
}

fn slot_factor(slots: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = slots as f64;
    let morning = rng.random_range(0.2..0.35) * p;
    let evening = rng.random_range(0.6..0.8) * p;
    let width = (p / 16.0).max(0.5);
    let (hm, he) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
    (0..slots)
        .map(|k| {
            let x = k as f64;
            0.1 + hm * (-((x - morning) / width).powi(2) / 2.0).exp() + he * (-((x - evening) / width).powi(2) / 2.0).exp()
        })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total_rank = spec.rank * spec.clusters;
    let mut days = DMatrix::zeros(spec.days, total_rank);
    let mut slots = DMatrix::zeros(spec.slots, total_rank);
    for r in 0..total_rank {
        days.set_column(r, &DMatrix::from_vec(spec.days, 1, day_factor(spec, &mut rng)).column(0));
        slots.set_column(r, &DMatrix::from_vec(spec.slots, 1, slot_factor(spec.slots, &mut rng)).column(0));
    }
    let labels: Vec<usize> = (0..spec.stations).map(|l| l % spec.clusters).collect();
    let cross = (1.0 - spec.separation).max(0.0);
    let mut locations = DMatrix::zeros(spec.stations, total_rank);
    for l in 0..spec.stations {
        for r in 0..total_rank {
            let own = r / spec.rank == labels[l];
            let z: f64 = rng.sample(StandardNormal);
            let scale = if own { 1.0 } else { cross };
            locations[(l, r)] = (scale * (1.0 + spec.cluster_spread * z)).max(0.0);
        }
    }
    let model = CpModel::from_factors(vec![locations, days, slots])?;
    let mut tensor = model.reconstruct();
    if spec.station_jitter > 0.0 {
        let jitter = Normal::new(0.0, spec.station_jitter).expect("finite jitter");
        for l in 0..spec.stations {
            for t in 0..spec.days {
                let factor = 1.0 + jitter.sample(&mut rng);
                for k in 0..spec.slots {
                    let v = tensor.get(&[l, t, k]);
                    tensor.set(&[l, t, k], v * factor);
                }
            }
        }
    }
    if spec.noise_std > 0.0 {
        let rms = tensor.frobenius_norm() / (tensor.len() as f64).sqrt();
        let noise = Normal::new(0.0, spec.noise_std * rms).expect("finite noise");
        for v in tensor.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    tensor.clamp_non_negative();
    let station_ids = (0..spec.stations).map(|l| format!("S{l:03}")).collect();
    Ok(SyntheticData { tensor, model, labels, station_ids })
}
