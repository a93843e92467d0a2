//! Analytic FLOPs accounting.
//!
//! One multiply-accumulate counts as one FLOP. Per block with `n` tokens:
//! `4·n·d²` for the qkv and output projections, `2·n²·d` for attention
//! scores and the value product, `2·n·d·d_ff` for the MLP. The affinity
//! matrix for salience and scoring costs an extra `n²·d` per layer whenever
//! merging is active; it is reported separately. Patch embedding and the
//! classifier are excluded since they do not depend on the merge schedule.

use serde::Serialize;

use crate::model::ModelDims;
use crate::runtime::RunTrace;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FlopsConvention {
    /// 1 MAC = 1 FLOP.
    #[default]
    Mac,
    /// 1 MAC = 2 FLOPs.
    TwoFlop,
}

impl FlopsConvention {
    pub fn factor(self) -> u64 {
        match self {
            FlopsConvention::Mac => 1,
            FlopsConvention::TwoFlop => 2,
        }
    }
}

/// Core block cost for `n_tokens` tokens (CLS included).
pub fn block_flops(n_tokens: usize, dims: &ModelDims) -> u64 {
    let n = n_tokens as u64;
    let d = dims.dim as u64;
    let f = dims.mlp_dim as u64;
    4 * n * d * d + 2 * n * n * d + 2 * n * d * f
}

/// Cost of forming the patch affinity matrix ahead of a merge.
pub fn merge_overhead_flops(n_patches: usize, dims: &ModelDims) -> u64 {
    let n = n_patches as u64;
    n * n * dims.dim as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopsReport {
    pub core: u64,
    pub overhead: u64,
    /// `core`, plus `overhead` when it was requested.
    pub total: u64,
    /// Every block at the unmerged length.
    pub baseline: u64,
    /// `1 − total / baseline`
    pub reduction: f64,
}

impl FlopsReport {
    pub fn scaled(self, convention: FlopsConvention) -> Self {
        let k = convention.factor();
        Self {
            core: self.core * k,
            overhead: self.overhead * k,
            total: self.total * k,
            baseline: self.baseline * k,
            reduction: self.reduction,
        }
    }

    pub fn total_g(&self) -> f64 {
        self.total as f64 / 1e9
    }

    pub fn reduction_pct(&self) -> f64 {
        100.0 * self.reduction
    }
}

/// Cost of running the blocks at the given per-block lengths (CLS included)
/// against a baseline of every block at `baseline_tokens`.
pub fn schedule_flops(block_tokens: &[usize], baseline_tokens: usize, dims: &ModelDims) -> FlopsReport {
    let core: u64 = block_tokens.iter().map(|&n| block_flops(n, dims)).sum();
    let baseline = block_tokens.len() as u64 * block_flops(baseline_tokens, dims);
    report(core, 0, false, baseline)
}

pub fn trace_flops(trace: &RunTrace, dims: &ModelDims, include_overhead: bool) -> FlopsReport {
    let core: u64 = trace
        .layers
        .iter()
        .map(|l| block_flops(l.block_tokens(), dims))
        .sum();
    let overhead: u64 = if trace.merging {
        trace
            .layers
            .iter()
            .filter(|l| !l.degenerate)
            .map(|l| merge_overhead_flops(l.n_before, dims))
            .sum()
    } else {
        0
    };
    let baseline = trace.layers.len() as u64 * block_flops(trace.n_initial + 1, dims);
    report(core, overhead, include_overhead, baseline)
}

fn report(core: u64, overhead: u64, include_overhead: bool, baseline: u64) -> FlopsReport {
    let total = if include_overhead { core + overhead } else { core };
    let reduction = if baseline == 0 {
        0.0
    } else {
        1.0 - total as f64 / baseline as f64
    };
    FlopsReport {
        core,
        overhead,
        total,
        baseline,
        reduction,
    }
}

/// Per-block lengths (CLS included) of a fixed-`r` ToMe run as ToMe
/// accounts for it: block `l` sees the tokens left after the merges of the
/// `l` preceding blocks, `1 + n − r·l`.
pub fn tome_block_lengths(n_patches: usize, r: usize, layers: usize) -> Vec<usize> {
    (0..layers)
        .map(|l| 1 + n_patches.saturating_sub(r * l).max(1))
        .collect()
}
