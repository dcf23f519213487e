//! `key = value` experiment configuration with dotted section prefixes.
//!
//! ```text
//! # comments and blank lines are ignored
//! data.path = flows.csv
//! plan.rank = 20
//! plan.arma_orders = 2,2,1,1
//! cluster.k = auto
//! ```
//!
//! Keys are applied in order, so a later line overrides an earlier one.
//! The bare `seed` key sets the ALS, LRTC and synthetic seeds at once.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forecast::ForecastPlan;
use crate::harness::baseline::DEFAULT_AR_LAGS;
use crate::harness::ingest::Extents;
use crate::harness::synth::SyntheticSpec;
use crate::lrtc::LrtcHyperParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOptions {
    /// Fixed cluster count; `None` picks it from the linkage gaps.
    pub k: Option<usize>,
    pub variance_retained: f64,
    pub max_k: usize,
    /// Minimum ratio between the merge distances around the chosen gap.
    pub gap_ratio: f64,
    /// CP rank of the embedding fit; `None` reuses the plan rank.
    pub rank: Option<usize>,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self { k: None, variance_retained: 0.9, max_k: 10, gap_ratio: 2.0, rank: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Input records; synthetic data is generated when unset.
    pub data_path: Option<PathBuf>,
    pub extents: Extents,
    /// Days used as history; defaults to all days before the horizon.
    pub train_days: Option<usize>,
    pub plan: ForecastPlan,
    pub lrtc: LrtcHyperParams,
    pub cluster: ClusterOptions,
    pub baseline_lags: usize,
    /// Observed share of the refreshed day's slots.
    pub update_fraction: f64,
    pub update_window: usize,
    /// Observed share of the final day's slots in short-term runs.
    pub shortterm_fraction: f64,
    /// Trailing days fed to completion; all when unset.
    pub shortterm_history: Option<usize>,
    pub synth: SyntheticSpec,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            extents: Extents::default(),
            train_days: None,
            plan: ForecastPlan::default(),
            lrtc: LrtcHyperParams::default(),
            cluster: ClusterOptions::default(),
            baseline_lags: DEFAULT_AR_LAGS,
            update_fraction: 0.3,
            update_window: 5,
            shortterm_fraction: 0.3,
            shortterm_history: None,
            synth: SyntheticSpec::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Parse(format!("{key} = {value}: {e}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match value {
        "" | "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => {
                let s = parse(key, v)?;
                self.plan.als.seed = s;
                self.lrtc.seed = s;
                self.synth.seed = s;
            }
            "data.path" => self.data_path = parse_optional(key, v)?,
            "data.stations" => self.extents.stations = parse_optional(key, v)?,
            "data.days" => self.extents.days = parse_optional(key, v)?,
            "data.slots" => self.extents.slots = parse_optional(key, v)?,
            "split.train_days" => self.train_days = parse_optional(key, v)?,
            "plan.horizon_days" => self.plan.horizon_days = parse(key, v)?,
            "plan.rank" => {
                self.plan.rank = parse(key, v)?;
                self.plan.als.rank = self.plan.rank;
            }
            "plan.arma_orders" => self.plan.arma_orders = parse(key, v)?,
            "plan.days_per_week" => self.plan.days_per_week = parse(key, v)?,
            "als.max_iters" => self.plan.als.max_iters = parse(key, v)?,
            "als.tol" => self.plan.als.tol = parse(key, v)?,
            "als.seed" => self.plan.als.seed = parse(key, v)?,
            "lrtc.a0" => self.lrtc.a0 = parse(key, v)?,
            "lrtc.b0" => self.lrtc.b0 = parse(key, v)?,
            "lrtc.c0" => self.lrtc.c0 = parse(key, v)?,
            "lrtc.d0" => self.lrtc.d0 = parse(key, v)?,
            "lrtc.max_rank" => self.lrtc.max_rank = parse(key, v)?,
            "lrtc.max_iters" => self.lrtc.max_iters = parse(key, v)?,
            "lrtc.elbo_tol" => self.lrtc.elbo_tol = parse(key, v)?,
            "lrtc.prune_ratio" => self.lrtc.prune_ratio = parse(key, v)?,
            "lrtc.prune_energy" => self.lrtc.prune_energy = parse(key, v)?,
            "lrtc.seed" => self.lrtc.seed = parse(key, v)?,
            "cluster.k" => self.cluster.k = parse_optional(key, v)?,
            "cluster.variance_retained" => self.cluster.variance_retained = parse(key, v)?,
            "cluster.max_k" => self.cluster.max_k = parse(key, v)?,
            "cluster.gap_ratio" => self.cluster.gap_ratio = parse(key, v)?,
            "cluster.rank" => self.cluster.rank = parse_optional(key, v)?,
            "baseline.lags" => self.baseline_lags = parse(key, v)?,
            "update.observed_fraction" => self.update_fraction = parse(key, v)?,
            "update.window" => self.update_window = parse(key, v)?,
            "shortterm.observed_fraction" => self.shortterm_fraction = parse(key, v)?,
            "shortterm.history_days" => self.shortterm_history = parse_optional(key, v)?,
            "synth.stations" => self.synth.stations = parse(key, v)?,
            "synth.days" => self.synth.days = parse(key, v)?,
            "synth.slots" => self.synth.slots = parse(key, v)?,
            "synth.rank" => self.synth.rank = parse(key, v)?,
            "synth.weekly_strength" => self.synth.weekly_strength = parse(key, v)?,
            "synth.weekly_noise" => self.synth.weekly_noise = parse(key, v)?,
            "synth.week_ar" => {
                let parts: Vec<&str> = v.split(',').collect();
                if parts.len() != 2 {
                    return Err(Error::Parse(format!("{key} = {v}: expected two comma-separated coefficients")));
                }
                self.synth.week_ar = [parse(key, parts[0].trim())?, parse(key, parts[1].trim())?];
            }
            "synth.daily_strength" => self.synth.daily_strength = parse(key, v)?,
            "synth.day_lag_corr" => self.synth.day_lag_corr = parse(key, v)?,
            "synth.clusters" => self.synth.clusters = parse(key, v)?,
            "synth.separation" => self.synth.separation = parse(key, v)?,
            "synth.cluster_spread" => self.synth.cluster_spread = parse(key, v)?,
            "synth.station_jitter" => self.synth.station_jitter = parse(key, v)?,
            "synth.noise_std" => self.synth.noise_std = parse(key, v)?,
            "synth.seed" => self.synth.seed = parse(key, v)?,
            "output.dir" => self.output_dir = parse(key, v)?,
            other => return Err(Error::Parse(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value, got `{line}`", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// History length for a tensor with `days` days.
    pub fn train_days_for(&self, days: usize) -> Result<usize> {
        let train = match self.train_days {
            Some(t) => t,
            None => days.saturating_sub(self.plan.horizon_days),
        };
        if train == 0 || train >= days {
            return Err(Error::InvalidArgument(format!("train split {train} must lie in [1, {days})")));
        }
        Ok(train)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.als.validate()?;
        self.lrtc.validate()?;
        self.synth.validate()?;
        for (name, f) in [("update", self.update_fraction), ("shortterm", self.shortterm_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidArgument(format!("{name}.observed_fraction must lie in (0, 1), got {f}")));
            }
        }
        if let Some(p) = &self.data_path {
            if !p.exists() {
                return Err(Error::InvalidArgument(format!("data path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Flat view of the effective settings for run summaries.
    pub fn summary(&self) -> ConfigSummary {
        ConfigSummary {
            data_path: self.data_path.as_ref().map(|p| p.display().to_string()),
            train_days: self.train_days,
            horizon_days: self.plan.horizon_days,
            rank: self.plan.rank,
            arma_orders: self.plan.arma_orders.to_string(),
            lrtc_max_rank: self.lrtc.max_rank,
            cluster_k: self.cluster.k,
            baseline_lags: self.baseline_lags,
            update_fraction: self.update_fraction,
            update_window: self.update_window,
            shortterm_fraction: self.shortterm_fraction,
            synth: self.synth.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigSummary {
    pub data_path: Option<String>,
    pub train_days: Option<usize>,
    pub horizon_days: usize,
    pub rank: usize,
    pub arma_orders: String,
    pub lrtc_max_rank: usize,
    pub cluster_k: Option<usize>,
    pub baseline_lags: usize,
    pub update_fraction: f64,
    pub update_window: usize,
    pub shortterm_fraction: f64,
    pub synth: SyntheticSpec,
}
