//! Per-layer merge counts from the redundancy proxy.
//!
//! `z = ((S̄ − μ_l) / σ_l) / T` and `r = ⌊r_max · σ(α z)⌋`, clamped to the
//! number of `A` tokens available.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Adaptive,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub r_max: usize,
    /// Gain on the z-score. Defaults to 1.
    pub alpha: f64,
    pub temperature: f64,
    pub mode: ScheduleMode,
}

impl ScheduleConfig {
    pub fn adaptive(r_max: usize) -> Self {
        Self {
            r_max,
            alpha: 1.0,
            temperature: 1.0,
            mode: ScheduleMode::Adaptive,
        }
    }

    pub fn fixed(r: usize) -> Self {
        Self {
            r_max: r,
            alpha: 1.0,
            temperature: 1.0,
            mode: ScheduleMode::Fixed(r),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.mode, ScheduleMode::Adaptive)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("alpha must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsMeta {
    pub model_id: String,
    pub r_max: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub passes: usize,
    pub calibration_size: usize,
}

/// Calibrated `(μ_l, σ_l)` of the redundancy proxy, one pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub meta: StatsMeta,
}

impl LayerStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, meta: StatsMeta) -> Result<Self> {
        let stats = Self { mu, sigma, meta };
        stats.validate()?;
        Ok(stats)
    }

    pub fn num_layers(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() {
            return Err(Error::Stats(format!(
                "mu has {} layers but sigma has {}",
                self.mu.len(),
                self.sigma.len()
            )));
        }
        if let Some((l, s)) = self
            .sigma
            .iter()
            .enumerate()
            .find(|(_, s)| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::Stats(format!("sigma[{l}] = {s} must be positive")));
        }
        if let Some(l) = self.mu.iter().position(|m| !m.is_finite()) {
            return Err(Error::Stats(format!("mu[{l}] is not finite")));
        }
        Ok(())
    }
}

/// Mean over rows of the row maximum. An empty matrix yields 0.
pub fn redundancy_proxy(scores: &Matrix) -> f64 {
    if scores.rows() == 0 || scores.cols() == 0 {
        return 0.0;
    }
    let total = scores.iter_rows().fold(0.0f64, |acc, row| {
        acc + row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64
    });
    total / scores.rows() as f64
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDecision {
    pub r: usize,
    /// Temperature-scaled z-score; `None` for fixed schedules.
    pub z: Option<f64>,
    /// The schedule asked for more merges than `|A|` allows.
    pub clamped: bool,
}

/// Temperature-scaled z-score of the proxy at `layer`.
pub fn z_score(sbar: f64, stats: &LayerStats, layer: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if layer >= stats.num_layers() {
        return Err(Error::Stats(format!(
            "layer {layer} out of range for {} calibrated layers",
            stats.num_layers()
        )));
    }
    let sigma = stats.sigma[layer].max(SIGMA_FLOOR);
    Ok((sbar - stats.mu[layer]) / sigma / cfg.temperature)
}

pub fn r_from_z(z: f64, cfg: &ScheduleConfig) -> usize {
    (cfg.r_max as f64 * logistic(cfg.alpha * z)).floor() as usize
}

/// Merge count for one layer. Fixed schedules ignore `sbar` and `stats`.
pub fn decide_r(
    sbar: f64,
    stats: Option<&LayerStats>,
    layer: usize,
    cfg: &ScheduleConfig,
    a_size: usize,
) -> Result<RDecision> {
    let (wanted, z) = match cfg.mode {
        ScheduleMode::Fixed(r) => (r, None),
        ScheduleMode::Adaptive => {
            let stats = stats.ok_or(Error::MissingStats)?;
            let z = z_score(sbar, stats, layer, cfg)?;
            (r_from_z(z, cfg), Some(z))
        }
    };
    Ok(RDecision {
        r: wanted.min(a_size),
        z,
        clamped: wanted > a_size,
    })
}
