//! Offline estimation of the per-layer redundancy statistics.
//!
//! Pass 0 runs every calibration image with the neutral fixed schedule
//! `r_l = ⌊r_max / 2⌋` (what `z = 0` would give) and fits `(μ_l, σ_l)` to
//! the observed proxies. Every later pass reruns the images adaptively under
//! the previous statistics and refits, so the statistics describe the token
//! distribution the adaptive schedule itself produces.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::TieBreak;
use crate::model::ModelWeights;
use crate::runtime::{forward_model, Method, RunConfig, RunTrace};
use crate::salience::SalienceSource;
use crate::schedule::{LayerStats, ScheduleConfig, StatsMeta, SIGMA_FLOOR};
use crate::tokens::TokenSequence;

pub const STATS_VERSION: u64 = 1;
pub const DEFAULT_PASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    /// The adaptive method being calibrated; determines how scores are formed.
    pub method: Method,
    pub r_max: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub passes: usize,
    pub salience_source: SalienceSource,
    pub tie_break: TieBreak,
}

impl CalibrationConfig {
    pub fn new(method: Method, r_max: usize) -> Self {
        Self {
            method,
            r_max,
            alpha: 1.0,
            temperature: 1.0,
            passes: DEFAULT_PASSES,
            salience_source: SalienceSource::Normalized,
            tie_break: TieBreak::Index,
        }
    }

    fn schedule(&self, bootstrap: bool) -> ScheduleConfig {
        let base = if bootstrap {
            ScheduleConfig::fixed(self.r_max / 2)
        } else {
            ScheduleConfig::adaptive(self.r_max)
        };
        base.with_alpha(self.alpha).with_temperature(self.temperature)
    }

    fn run_config(&self, bootstrap: bool) -> Result<RunConfig> {
        let schedule = self.schedule(bootstrap);
        // The bootstrap pass scores like the method but with a fixed count.
        let method = match (self.method, bootstrap) {
            (Method::AdaMerge, true) => Method::SwOnly,
            (Method::AdpOnly, true) => Method::Tome,
            (m, _) => m,
        };
        Ok(RunConfig::with_source(method, schedule, self.salience_source)?.with_tie_break(self.tie_break))
    }
}

/// Proxies of one pass: `samples[l][i]` is `S̄_l` of image `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pass {
    pub samples: Vec<Vec<f64>>,
    pub traces: Vec<RunTrace>,
}

/// Runs every image once and records the proxy at every layer. `stats =
/// None` is the bootstrap pass. Images run in parallel; results are kept in
/// image order.
pub fn collect_pass(
    weights: &ModelWeights,
    images: &[TokenSequence],
    stats: Option<&LayerStats>,
    cfg: &CalibrationConfig,
) -> Result<Pass> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !cfg.method.is_adaptive() {
        return Err(Error::InvalidArgument(format!(
            "calibration needs an adaptive method, got {}",
            cfg.method
        )));
    }
    let run = cfg.run_config(stats.is_none())?;
    let traces = images
        .par_iter()
        .map(|img| forward_model(img, weights, &run, stats).map(|o| o.trace))
        .collect::<Result<Vec<_>>>()?;
    let layers = weights.dims.layers;
    let samples = (0..layers)
        .map(|l| {
            traces
                .iter()
                .map(|t| t.layers[l].sbar.unwrap_or(0.0))
                .collect()
        })
        .collect();
    Ok(Pass { samples, traces })
}

/// Per-layer mean and population standard deviation (floored).
pub fn fit_stats(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    samples
        .iter()
        .map(|xs| {
            if xs.is_empty() {
                return (0.0, SIGMA_FLOOR);
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            if xs.len() < 2 {
                return (mean, SIGMA_FLOOR);
            }
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt().max(SIGMA_FLOOR))
        })
        .unzip()
}

/// Statistics after every pass, first entry from the bootstrap pass.
pub fn refine_history(
    weights: &ModelWeights,
    images: &[TokenSequence],
    cfg: &CalibrationConfig,
) -> Result<Vec<LayerStats>> {
    if cfg.passes == 0 {
        return Err(Error::InvalidArgument("passes must be at least 1".into()));
    }
    let mut history: Vec<LayerStats> = Vec::with_capacity(cfg.passes);
    for pass in 0..cfg.passes {
        let collected = collect_pass(weights, images, history.last(), cfg)?;
        let (mu, sigma) = fit_stats(&collected.samples);
        history.push(LayerStats::new(
            mu,
            sigma,
            StatsMeta {
                model_id: weights.id.clone(),
                r_max: cfg.r_max,
                alpha: cfg.alpha,
                temperature: cfg.temperature,
                passes: pass + 1,
                calibration_size: images.len(),
            },
        )?);
    }
    Ok(history)
}

pub fn refine(weights: &ModelWeights, images: &[TokenSequence], cfg: &CalibrationConfig) -> Result<LayerStats> {
    Ok(refine_history(weights, images, cfg)?
        .pop()
        .expect("at least one pass"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsFile {
    version: u64,
    model_id: String,
    num_layers: usize,
    r_max: usize,
    alpha: f64,
    temperature: f64,
    passes: usize,
    calibration_size: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

pub fn stats_to_json(stats: &LayerStats) -> Result<String> {
    let file = StatsFile {
        version: STATS_VERSION,
        model_id: stats.meta.model_id.clone(),
        num_layers: stats.num_layers(),
        r_max: stats.meta.r_max,
        alpha: stats.meta.alpha,
        temperature: stats.meta.temperature,
        passes: stats.meta.passes,
        calibration_size: stats.meta.calibration_size,
        mu: stats.mu.clone(),
        sigma: stats.sigma.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn stats_from_json(text: &str) -> Result<LayerStats> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Stats(format!("malformed stats.json: {e}")))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(STATS_VERSION) => {}
        Some(found) => {
            return Err(Error::StatsVersion {
                found,
                expected: STATS_VERSION,
            })
        }
        None => return Err(Error::Stats("missing or non-integer `version`".into())),
    }
    let file: StatsFile = serde_json::from_value(value)
        .map_err(|e| Error::Stats(format!("stats.json v{STATS_VERSION}: {e}")))?;
    if file.mu.len() != file.num_layers || file.sigma.len() != file.num_layers {
        return Err(Error::Stats(format!(
            "num_layers = {} but mu has {} and sigma {} entries",
            file.num_layers,
            file.mu.len(),
            file.sigma.len()
        )));
    }
    LayerStats::new(
        file.mu,
        file.sigma,
        StatsMeta {
            model_id: file.model_id,
            r_max: file.r_max,
            alpha: file.alpha,
            temperature: file.temperature,
            passes: file.passes,
            calibration_size: file.calibration_size,
        },
    )
}

pub fn save_stats(stats: &LayerStats, path: &Path) -> Result<()> {
    let text = stats_to_json(stats)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_stats(path: &Path) -> Result<LayerStats> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    stats_from_json(&text)
}
