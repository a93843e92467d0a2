//! Pre-norm ViT forward pass with a merge step ahead of every block.
//!
//! Per block: strip CLS, score salience, split A/B, score edges, decide
//! `r_l`, merge, reattach CLS, then run `LN → MHSA → +res → LN → MLP → +res`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops;
use crate::matcher::{
    execute_merge, partition, score_sequence, select_merges_with, Aggregation, Scoring, TieBreak,
};
use crate::model::{BlockWeights, ModelWeights};
use crate::numeric::{gelu, layer_norm, linear, matmul, row_softmax, Matrix, LAYER_NORM_EPS};
use crate::salience::{SalienceSource, SalienceVector};
use crate::schedule::{decide_r, redundancy_proxy, LayerStats, ScheduleConfig};
use crate::tokens::TokenSequence;

/// Merging configurations, including the two single-component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    None,
    Tome,
    #[serde(rename = "adamerge")]
    AdaMerge,
    /// Salience-weighted scoring and aggregation with a fixed `r`.
    SwOnly,
    /// Uniform scoring and averaging with the adaptive `r` schedule.
    AdpOnly,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::None,
        Method::Tome,
        Method::AdaMerge,
        Method::SwOnly,
        Method::AdpOnly,
    ];

    pub fn is_adaptive(&self) -> bool {
        matches!(self, Method::AdaMerge | Method::AdpOnly)
    }

    pub fn merges(&self) -> bool {
        !matches!(self, Method::None)
    }

    pub fn scoring(&self) -> Scoring {
        match self {
            Method::AdaMerge | Method::SwOnly => Scoring::Weighted,
            _ => Scoring::Uniform,
        }
    }

    pub fn aggregation(&self, source: SalienceSource) -> Aggregation {
        match self {
            Method::AdaMerge | Method::SwOnly => Aggregation::Salience(source),
            _ => Aggregation::Size,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Tome => "tome",
            Method::AdaMerge => "adamerge",
            Method::SwOnly => "sw-only",
            Method::AdpOnly => "adp-only",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergePlan {
    pub scoring: Scoring,
    pub aggregation: Aggregation,
    pub schedule: ScheduleConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    /// `None` runs the vanilla model.
    pub plan: Option<MergePlan>,
    pub salience_source: SalienceSource,
    pub tie_break: TieBreak,
    /// Keep per-layer origins and salience for visualization.
    pub record_snapshots: bool,
}

impl RunConfig {
    pub fn vanilla() -> Self {
        Self {
            plan: None,
            salience_source: SalienceSource::Normalized,
            tie_break: TieBreak::Index,
            record_snapshots: false,
        }
    }

    /// Configuration for a named method. Adaptive methods need an adaptive
    /// schedule and fixed-`r` methods a fixed one.
    pub fn for_method(method: Method, schedule: ScheduleConfig) -> Result<Self> {
        Self::with_source(method, schedule, SalienceSource::Normalized)
    }

    pub fn with_source(method: Method, schedule: ScheduleConfig, source: SalienceSource) -> Result<Self> {
        schedule.validate()?;
        if method.merges() && method.is_adaptive() != schedule.is_adaptive() {
            return Err(Error::InvalidArgument(format!(
                "method {method} requires a {} schedule",
                if method.is_adaptive() { "adaptive" } else { "fixed-r" }
            )));
        }
        let plan = method.merges().then(|| MergePlan {
            scoring: method.scoring(),
            aggregation: method.aggregation(source),
            schedule,
        });
        Ok(Self {
            plan,
            salience_source: source,
            ..Self::vanilla()
        })
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn with_snapshots(mut self, on: bool) -> Self {
        self.record_snapshots = on;
        self
    }
}

/// A consumed token: the original patch `source` folded into the token
/// carrying original patch `dest`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MergeRecord {
    pub source: usize,
    pub dest: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSnapshot {
    /// Origin of every token entering the merge step.
    pub origins: Vec<usize>,
    /// Normalized salience of every token entering the merge step.
    pub salience: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTrace {
    pub layer: usize,
    /// Patch tokens (CLS excluded) arriving at the merge step.
    pub n_before: usize,
    pub r: usize,
    pub sbar: Option<f64>,
    pub z: Option<f64>,
    pub clamped: bool,
    /// Fewer than two patch tokens: nothing could be partitioned.
    pub degenerate: bool,
    pub zero_weight_groups: usize,
    pub salience_mass: Option<f64>,
    /// Σ sizes after the merge step.
    pub size_total: u64,
    pub cls_preserved: bool,
    pub merges: Vec<MergeRecord>,
    pub snapshot: Option<LayerSnapshot>,
}

impl LayerTrace {
    pub fn n_after(&self) -> usize {
        self.n_before - self.r
    }

    /// Tokens the block itself processes, CLS included.
    pub fn block_tokens(&self) -> usize {
        self.n_after() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub n_initial: usize,
    pub merging: bool,
    pub layers: Vec<LayerTrace>,
    /// Executed MACs, merge overhead included.
    pub flops: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunTrace {
    pub fn total_merges(&self) -> usize {
        self.layers.iter().map(|l| l.r).sum()
    }

    pub fn final_tokens(&self) -> usize {
        self.layers.last().map_or(self.n_initial, |l| l.n_after())
    }

    pub fn block_lengths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.block_tokens()).collect()
    }

    /// Checks the bookkeeping invariants: the length chain, size
    /// conservation, CLS identity and salience mass.
    pub fn verify_ledger(&self) -> std::result::Result<(), String> {
        let mut expected = self.n_initial;
        for l in &self.layers {
            if l.n_before != expected {
                return Err(format!(
                    "layer {}: {} tokens arrived, expected {expected}",
                    l.layer, l.n_before
                ));
            }
            if l.r > l.n_before {
                return Err(format!("layer {}: r = {} exceeds {}", l.layer, l.r, l.n_before));
            }
            if l.size_total != self.n_initial as u64 {
                return Err(format!(
                    "layer {}: sizes sum to {}, expected {}",
                    l.layer, l.size_total, self.n_initial
                ));
            }
            if !l.cls_preserved {
                return Err(format!("layer {}: CLS changed during merge", l.layer));
            }
            if let Some(mass) = l.salience_mass {
                let n = l.n_before as f64;
                if (mass - n).abs() > 1e-5 * n {
                    return Err(format!("layer {}: salience mass {mass} for {n} tokens", l.layer));
                }
            }
            if l.merges.len() != l.r {
                return Err(format!("layer {}: {} merge records for r = {}", l.layer, l.merges.len(), l.r));
            }
            expected = l.n_after();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub logits: Vec<f32>,
    /// Token state after the last block, before the final norm.
    pub tokens: TokenSequence,
    pub trace: RunTrace,
}

/// One pre-norm transformer block on a `[1 + N, d]` sequence.
pub fn forward_block(x: &Matrix, block: &BlockWeights, heads: usize) -> Result<Matrix> {
    let d = x.cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::shape("forward_block", format!("dim {d}"), format!("{heads} heads")));
    }
    if block.qkv_weight.shape() != (d, 3 * d) {
        return Err(Error::shape(
            "forward_block qkv",
            format!("dim {d}"),
            format!("{:?}", block.qkv_weight.shape()),
        ));
    }
    let n = x.rows();
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    let h = layer_norm(x, &block.ln1_gamma, &block.ln1_beta, LAYER_NORM_EPS)?;
    let qkv = linear(&h, &block.qkv_weight, &block.qkv_bias)?;
    let mut attn = Matrix::zeros(n, d);
    for head in 0..heads {
        let q = Matrix::from_fn(n, hd, |i, c| qkv.get(i, head * hd + c));
        let kt = Matrix::from_fn(hd, n, |c, j| qkv.get(j, d + head * hd + c));
        let v = Matrix::from_fn(n, hd, |j, c| qkv.get(j, 2 * d + head * hd + c));
        let mut logits = matmul(&q, &kt)?;
        for i in 0..n {
            for val in logits.row_mut(i) {
                *val = (*val as f64 * scale) as f32;
            }
        }
        let out = matmul(&row_softmax(&logits), &v)?;
        for i in 0..n {
            attn.row_mut(i)[head * hd..(head + 1) * hd].copy_from_slice(out.row(i));
        }
    }
    let x = x.add(&linear(&attn, &block.proj_weight, &block.proj_bias)?)?;

    let h = layer_norm(&x, &block.ln2_gamma, &block.ln2_beta, LAYER_NORM_EPS)?;
    let m = gelu(&linear(&h, &block.fc1_weight, &block.fc1_bias)?);
    x.add(&linear(&m, &block.fc2_weight, &block.fc2_bias)?)
}

/// Final norm on CLS followed by the classifier.
pub fn classify(cls: &[f32], weights: &ModelWeights) -> Result<Vec<f32>> {
    let c = Matrix::new(1, cls.len(), cls.to_vec())?;
    let c = layer_norm(&c, &weights.norm_gamma, &weights.norm_beta, LAYER_NORM_EPS)?;
    Ok(linear(&c, &weights.head_weight, &weights.head_bias)?.into_data())
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the model on one token sequence. `stats` is required when the plan
/// uses the adaptive schedule.
pub fn forward_model(
    input: &TokenSequence,
    weights: &ModelWeights,
    cfg: &RunConfig,
    stats: Option<&LayerStats>,
) -> Result<RunOutput> {
    let start = Instant::now();
    let dims = weights.dims;
    if input.dim() != dims.dim {
        return Err(Error::shape(
            "forward_model",
            format!("token dim {}", input.dim()),
            format!("model dim {}", dims.dim),
        ));
    }
    if let Some(plan) = &cfg.plan {
        if plan.schedule.is_adaptive() {
            let stats = stats.ok_or(Error::MissingStats)?;
            if stats.num_layers() != dims.layers {
                return Err(Error::Stats(format!(
                    "stats cover {} layers, model has {}",
                    stats.num_layers(),
                    dims.layers
                )));
            }
        }
    }

    let mut seq = input.clone();
    let mut layers = Vec::with_capacity(dims.layers);
    for (l, block) in weights.blocks.iter().enumerate() {
        let n_before = seq.len();
        let mut lt = LayerTrace {
            layer: l,
            n_before,
            r: 0,
            sbar: None,
            z: None,
            clamped: false,
            degenerate: false,
            zero_weight_groups: 0,
            salience_mass: None,
            size_total: 0,
            cls_preserved: true,
            merges: Vec::new(),
            snapshot: None,
        };

        if cfg.plan.is_some() || cfg.record_snapshots {
            seq.salience = SalienceVector::from_tokens(&seq.patches);
            lt.salience_mass = Some(seq.salience.mass());
        }
        if cfg.record_snapshots {
            lt.snapshot = Some(LayerSnapshot {
                origins: seq.origins.clone(),
                salience: seq.salience.normalized.clone(),
            });
        }

        if let Some(plan) = &cfg.plan {
            match partition(n_before) {
                None => lt.degenerate = true,
                Some(part) => {
                    let scores = score_sequence(&seq, part, plan.scoring, cfg.salience_source)?;
                    let sbar = redundancy_proxy(&scores);
                    let decision = decide_r(sbar, stats, l, &plan.schedule, part.a_len)?;
                    let tie = match cfg.tie_break {
                        TieBreak::Index => TieBreak::Index,
                        TieBreak::Seeded(s) => TieBreak::Seeded(layer_seed(s, l)),
                    };
                    let merge = select_merges_with(&scores, decision.r, tie);
                    let cls_before: Vec<u32> = seq.cls.iter().map(|v| v.to_bits()).collect();
                    let (merged, outcome) = execute_merge(&seq, &merge, plan.aggregation)?;
                    lt.merges = merge
                        .edges
                        .iter()
                        .map(|e| MergeRecord {
                            source: seq.origins[e.src],
                            dest: seq.origins[part.a_len + e.dst],
                        })
                        .collect();
                    lt.cls_preserved = merged.cls.iter().map(|v| v.to_bits()).eq(cls_before);
                    lt.r = merge.r;
                    lt.sbar = Some(sbar);
                    lt.z = decision.z;
                    lt.clamped = decision.clamped || merge.clamped;
                    lt.zero_weight_groups = outcome.zero_weight_groups;
                    seq = merged;
                }
            }
        }
        lt.size_total = seq.total_size();
        layers.push(lt);

        let out = forward_block(&seq.to_full(), block, dims.heads)?;
        seq = seq.with_full(out)?;
    }

    let logits = classify(&seq.cls, weights)?;
    let mut trace = RunTrace {
        n_initial: input.len(),
        merging: cfg.plan.is_some(),
        layers,
        flops: 0,
        wall_time: Duration::ZERO,
    };
    trace.flops = flops::trace_flops(&trace, &dims, true).total;
    trace.wall_time = start.elapsed();
    Ok(RunOutput {
        logits,
        tokens: seq,
        trace,
    })
}

/// The schedule a method runs with: `r` for fixed methods, `r_max` for
/// adaptive ones.
pub fn schedule_for(method: Method, r: usize) -> ScheduleConfig {
    if method.is_adaptive() {
        ScheduleConfig::adaptive(r)
    } else {
        ScheduleConfig::fixed(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_weights, ModelDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(d: usize, h: usize, layers: usize) -> ModelDims {
        ModelDims {
            dim: d,
            heads: h,
            mlp_dim: 2 * d,
            layers,
            num_classes: 4,
        }
    }

    fn random_seq(n: usize, d: usize, seed: u64) -> TokenSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = Matrix::from_fn(n + 1, d, |_, _| rng.random_range(-1.0f32..1.0));
        TokenSequence::from_full(&full).unwrap()
    }

    /// Straight-line block in f64 with explicit loops.
    fn reference_block(x: &Matrix, b: &BlockWeights, heads: usize) -> Vec<Vec<f64>> {
        let (n, d) = x.shape();
        let hd = d / heads;
        let ln = |row: &[f64], g: &[f32], be: &[f32]| -> Vec<f64> {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            (0..d)
                .map(|c| (row[c] - mean) / (var + 1e-6).sqrt() * g[c] as f64 + be[c] as f64)
                .collect()
        };
        let lin = |row: &[f64], w: &Matrix, bias: &[f32]| -> Vec<f64> {
            (0..w.cols())
                .map(|j| (0..w.rows()).map(|k| row[k] * w.get(k, j) as f64).sum::<f64>() + bias[j] as f64)
                .collect()
        };
        let xs: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().map(|v| *v as f64).collect()).collect();
        let hs: Vec<Vec<f64>> = xs.iter().map(|r| ln(r, &b.ln1_gamma, &b.ln1_beta)).collect();
        let qkv: Vec<Vec<f64>> = hs.iter().map(|r| lin(r, &b.qkv_weight, &b.qkv_bias)).collect();
        let mut att = vec![vec![0.0; d]; n];
        for h in 0..heads {
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| (0..hd).map(|c| qkv[i][h * hd + c] * qkv[j][d + h * hd + c]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..hd {
                    att[i][h * hd + c] = (0..n).map(|j| e[j] / z * qkv[j][2 * d + h * hd + c]).sum();
                }
            }
        }
        let x1: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let p = lin(&att[i], &b.proj_weight, &b.proj_bias);
                (0..d).map(|c| xs[i][c] + p[c]).collect()
            })
            .collect();
        x1.iter()
            .map(|r| {
                let h = ln(r, &b.ln2_gamma, &b.ln2_beta);
                let a: Vec<f64> = lin(&h, &b.fc1_weight, &b.fc1_bias)
                    .into_iter()
                    .map(|v| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
                    .collect();
                let o = lin(&a, &b.fc2_weight, &b.fc2_bias);
                (0..d).map(|c| r[c] + o[c]).collect()
            })
            .collect()
    }

    #[test]
    fn zero_block_is_identity() {
        let dm = dims(8, 2, 1);
        let x = random_seq(5, 8, 1).to_full();
        assert_eq!(forward_block(&x, &BlockWeights::zeros(&dm), 2).unwrap(), x);
    }

    #[test]
    fn single_token_block_is_finite() {
        let w = synth_weights(3, dims(8, 2, 1), 0.3).unwrap();
        let x = Matrix::from_fn(1, 8, |_, j| j as f32 * 0.1);
        assert!(forward_block(&x, &w.blocks[0], 2).unwrap().is_finite());
    }

    #[test]
    fn block_matches_reference() {
        let w = synth_weights(11, dims(8, 2, 1), 0.3).unwrap();
        let x = random_seq(5, 8, 2).to_full();
        let got = forward_block(&x, &w.blocks[0], 2).unwrap();
        let want = reference_block(&x, &w.blocks[0], 2);
        for i in 0..6 {
            for c in 0..8 {
                assert!((got.get(i, c) as f64 - want[i][c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn vanilla_keeps_length() {
        let w = synth_weights(4, dims(8, 2, 3), 0.1).unwrap();
        let out = forward_model(&random_seq(10, 8, 3), &w, &RunConfig::vanilla(), None).unwrap();
        assert!(out.trace.layers.iter().all(|l| l.n_before == 10 && l.r == 0));
        assert_eq!(out.logits.len(), 4);
        out.trace.verify_ledger().unwrap();
    }

    #[test]
    fn fixed_tome_schedule_length_chain() {
        let w = synth_weights(4, dims(8, 2, 12), 0.1).unwrap();
        let cfg = RunConfig::for_method(Method::Tome, ScheduleConfig::fixed(8)).unwrap();
        let out = forward_model(&random_seq(196, 8, 5), &w, &cfg, None).unwrap();
        assert_eq!(out.trace.final_tokens(), 100);
        assert_eq!(out.trace.total_merges(), 96);
        out.trace.verify_ledger().unwrap();
    }

    #[test]
    fn merging_stops_when_tokens_run_out() {
        let w = synth_weights(4, dims(8, 2, 6), 0.1).unwrap();
        let cfg = RunConfig::for_method(Method::SwOnly, ScheduleConfig::fixed(50)).unwrap();
        let out = forward_model(&random_seq(12, 8, 5), &w, &cfg, None).unwrap();
        let lens: Vec<usize> = out.trace.layers.iter().map(|l| l.n_before).collect();
        assert_eq!(lens, vec![12, 6, 3, 1, 1, 1]);
        assert!(out.trace.layers[0].clamped);
        assert!(out.trace.layers[3].degenerate);
        out.trace.verify_ledger().unwrap();
    }

    #[test]
    fn adaptive_without_stats_is_an_error() {
        let w = synth_weights(4, dims(8, 2, 2), 0.1).unwrap();
        let cfg = RunConfig::for_method(Method::AdaMerge, ScheduleConfig::adaptive(4)).unwrap();
        let err = forward_model(&random_seq(6, 8, 5), &w, &cfg, None).unwrap_err();
        assert!(err.to_string().contains("calibrate"));
    }

    #[test]
    fn method_schedule_mismatch() {
        assert!(RunConfig::for_method(Method::Tome, ScheduleConfig::adaptive(4)).is_err());
        assert!(RunConfig::for_method(Method::AdaMerge, ScheduleConfig::fixed(4)).is_err());
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let w = synth_weights(4, dims(8, 2, 2), 0.1).unwrap();
        assert!(forward_model(&random_seq(6, 4, 5), &w, &RunConfig::vanilla(), None).is_err());
    }
}
