//! Bipartite soft matching over a sequential A/B split.
//!
//! Each token of `A` proposes an edge to its best-scoring partner in `B`;
//! the `r` highest-scoring proposals are merged. The scores are either
//! plain cosine similarities (the uniform ToMe rule) or cosine similarities
//! scaled by the salience of the `A` token.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{cosine_matrix, Matrix};
use crate::salience::{SalienceSource, SalienceVector};
use crate::tokens::TokenSequence;

/// Sequential split: `A = [0, ⌈n/2⌉)`, `B = [⌈n/2⌉, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub a_len: usize,
    pub b_len: usize,
}

impl Partition {
    pub fn set_a(&self) -> Range<usize> {
        0..self.a_len
    }

    pub fn set_b(&self) -> Range<usize> {
        self.a_len..self.a_len + self.b_len
    }

    pub fn len(&self) -> usize {
        self.a_len + self.b_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Returns `None` when fewer than two patch tokens remain; nothing can be
/// merged then.
pub fn partition(n_patch_tokens: usize) -> Option<Partition> {
    if n_patch_tokens < 2 {
        return None;
    }
    let a_len = n_patch_tokens.div_ceil(2);
    Some(Partition {
        a_len,
        b_len: n_patch_tokens - a_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// `score[i][j] = ŝ_i · cos(a_i, b_j)`
    Weighted,
    /// `score[i][j] = cos(a_i, b_j)`
    Uniform,
}

/// Salience-weighted similarity. Passing `None` for `sa` gives the uniform
/// (unit salience) scores.
pub fn weighted_scores(xa: &Matrix, xb: &Matrix, sa: Option<&[f64]>) -> Result<Matrix> {
    let mut scores = cosine_matrix(xa, xb)?;
    if let Some(sa) = sa {
        if sa.len() != xa.rows() {
            return Err(Error::shape(
                "weighted_scores",
                format!("|A| = {}", xa.rows()),
                format!("{} salience values", sa.len()),
            ));
        }
        for (i, s) in sa.iter().enumerate() {
            for v in scores.row_mut(i) {
                *v = (*v as f64 * s) as f32;
            }
        }
    }
    Ok(scores)
}

/// Scores for a sequence under its current salience.
pub fn score_sequence(
    seq: &TokenSequence,
    part: Partition,
    scoring: Scoring,
    source: SalienceSource,
) -> Result<Matrix> {
    let xa = seq.patches.slice_rows(0, part.a_len);
    let xb = seq.patches.slice_rows(part.a_len, part.len());
    let sa = match scoring {
        Scoring::Weighted => Some(&seq.salience.weights(source)[..part.a_len]),
        Scoring::Uniform => None,
    };
    weighted_scores(&xa, &xb, sa)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Lower source index first, then lower destination index.
    #[default]
    Index,
    /// Equal scores are ordered by a seeded random key.
    Seeded(u64),
}

/// `src` indexes `A`, `dst` indexes `B` (both zero-based within their set).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEdge {
    pub src: usize,
    pub dst: usize,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeDecision {
    pub a_len: usize,
    pub b_len: usize,
    pub r: usize,
    /// Selected edges in selection order (best score first).
    pub edges: Vec<MergeEdge>,
    /// Destination in `B` -> sources in `A`, ascending.
    pub groups: BTreeMap<usize, Vec<usize>>,
    /// Sequence indices of the tokens that remain, in output order.
    pub survivors: Vec<usize>,
    /// The requested `r` exceeded `|A|` and was clamped.
    pub clamped: bool,
}

impl MergeDecision {
    /// The no-op decision for an `n` token sequence.
    pub fn none(n: usize) -> Self {
        let part = partition(n).unwrap_or(Partition { a_len: n, b_len: 0 });
        Self {
            a_len: part.a_len,
            b_len: part.b_len,
            r: 0,
            edges: Vec::new(),
            groups: BTreeMap::new(),
            survivors: (0..n).collect(),
            clamped: false,
        }
    }

    pub fn len_before(&self) -> usize {
        self.a_len + self.b_len
    }

    pub fn len_after(&self) -> usize {
        self.len_before() - self.r
    }
}

pub fn select_merges(scores: &Matrix, r: usize) -> MergeDecision {
    select_merges_with(scores, r, TieBreak::Index)
}

pub fn select_merges_with(scores: &Matrix, r: usize, tie: TieBreak) -> MergeDecision {
    let (a_len, b_len) = scores.shape();
    let clamped = r > a_len;
    let r = if b_len == 0 { 0 } else { r.min(a_len) };

    let mut rng = match tie {
        TieBreak::Index => None,
        TieBreak::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
    };

    // Per-row argmax; keys order ties when seeded.
    let mut candidates: Vec<(MergeEdge, u64)> = Vec::with_capacity(a_len);
    if b_len > 0 {
        for i in 0..a_len {
            let row = scores.row(i);
            let best = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let dst = match rng.as_mut() {
                None => row.iter().position(|v| *v == best).unwrap_or(0),
                Some(rng) => {
                    let ties: Vec<usize> = (0..b_len).filter(|&j| row[j] == best).collect();
                    ties[rng.random_range(0..ties.len())]
                }
            };
            let key = rng.as_mut().map_or(i as u64, |rng| rng.random());
            candidates.push((
                MergeEdge {
                    src: i,
                    dst,
                    score: best,
                },
                key,
            ));
        }
    }
    candidates.sort_by(|(x, kx), (y, ky)| {
        y.score
            .total_cmp(&x.score)
            .then(kx.cmp(ky))
            .then(x.src.cmp(&y.src))
    });
    let edges: Vec<MergeEdge> = candidates.into_iter().take(r).map(|(e, _)| e).collect();

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut merged = vec![false; a_len];
    for e in &edges {
        groups.entry(e.dst).or_default().push(e.src);
        merged[e.src] = true;
    }
    for g in groups.values_mut() {
        g.sort_unstable();
    }
    let survivors = (0..a_len)
        .filter(|&i| !merged[i])
        .chain(a_len..a_len + b_len)
        .collect();

    MergeDecision {
        a_len,
        b_len,
        r,
        edges,
        groups,
        survivors,
        clamped,
    }
}

/// How merged features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Salience-proportional mean; merged salience is the group maximum.
    Salience(SalienceSource),
    /// Size-weighted mean (ToMe).
    Size,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeOutcome {
    /// Groups whose weights summed to zero and fell back to the plain mean.
    pub zero_weight_groups: usize,
}

/// Applies a decision. Unmerged tokens are copied through unchanged; the
/// output holds the surviving `A` tokens followed by the (updated) `B`
/// tokens, each in their original order.
pub fn execute_merge(
    seq: &TokenSequence,
    decision: &MergeDecision,
    aggregation: Aggregation,
) -> Result<(TokenSequence, MergeOutcome)> {
    let n = seq.len();
    if decision.len_before() != n {
        return Err(Error::shape(
            "execute_merge",
            format!("{n} tokens"),
            format!("decision over {}", decision.len_before()),
        ));
    }
    let d = seq.dim();
    let a_len = decision.a_len;
    let mut patches = seq.patches.select_rows(&decision.survivors);
    let mut raw: Vec<f64> = decision.survivors.iter().map(|&i| seq.salience.raw[i]).collect();
    let mut norm: Vec<f64> = decision
        .survivors
        .iter()
        .map(|&i| seq.salience.normalized[i])
        .collect();
    let mut sizes: Vec<u32> = decision.survivors.iter().map(|&i| seq.sizes[i]).collect();
    let origins: Vec<usize> = decision.survivors.iter().map(|&i| seq.origins[i]).collect();

    let b_offset = decision.survivors.len() - decision.b_len;
    let mut outcome = MergeOutcome::default();
    let mut acc = vec![0.0f64; d];
    for (&dst, sources) in &decision.groups {
        let members: Vec<usize> = std::iter::once(a_len + dst)
            .chain(sources.iter().copied())
            .collect();
        let weights: Vec<f64> = match aggregation {
            Aggregation::Salience(src) => {
                let w = seq.salience.weights(src);
                members.iter().map(|&k| w[k]).collect()
            }
            Aggregation::Size => members.iter().map(|&k| seq.sizes[k] as f64).collect(),
        };
        let mut total: f64 = weights.iter().sum();
        let weights = if total > 0.0 {
            weights
        } else {
            outcome.zero_weight_groups += 1;
            total = members.len() as f64;
            vec![1.0; members.len()]
        };
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (&k, w) in members.iter().zip(&weights) {
            for (a, x) in acc.iter_mut().zip(seq.patches.row(k)) {
                *a += w * *x as f64;
            }
        }
        let out = b_offset + dst;
        for (o, a) in patches.row_mut(out).iter_mut().zip(&acc) {
            *o = (a / total) as f32;
        }
        raw[out] = members.iter().map(|&k| seq.salience.raw[k]).fold(f64::MIN, f64::max);
        norm[out] = members
            .iter()
            .map(|&k| seq.salience.normalized[k])
            .fold(f64::MIN, f64::max);
        sizes[out] = members.iter().map(|&k| seq.sizes[k]).sum();
    }

    Ok((
        TokenSequence {
            cls: seq.cls.clone(),
            patches,
            salience: SalienceVector {
                raw,
                normalized: norm,
            },
            sizes,
            origins,
        },
        outcome,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionGap {
    /// `ℓ_uniform − ℓ_weighted = (s_i − s_j)² / (4 (s_i + s_j)) · ‖x_i − x_j‖²`
    pub exact: f64,
    /// `(s_i − s_j)² / (2 (s_i + s_j)²) · ‖x_i − x_j‖²`; coincides with
    /// `exact` when `s_i + s_j = 2`.
    pub leading: f64,
}

/// Reduction in salience-weighted squared reconstruction error
/// `ℓ(x̃) = s_i‖x_i − x̃‖² + s_j‖x_j − x̃‖²` obtained by the
/// salience-proportional mean instead of the plain mean.
///
/// With `S = s_i + s_j` and `D = ‖x_i − x_j‖²`, the plain mean costs
/// `S·D/4` and the weighted mean costs `s_i s_j D / S`; their difference is
/// `(s_i − s_j)² D / (4S)`.
pub fn reconstruction_gap(xi: &[f64], xj: &[f64], si: f64, sj: f64) -> Result<ReconstructionGap> {
    if !(si > 0.0 && sj > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "salience must be positive, got ({si}, {sj})"
        )));
    }
    if xi.len() != xj.len() {
        return Err(Error::shape("reconstruction_gap", xi.len(), xj.len()));
    }
    let dist: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b).powi(2)).sum();
    let diff = si - sj;
    let total = si + sj;
    Ok(ReconstructionGap {
        exact: diff * diff / (4.0 * total) * dist,
        leading: diff * diff / (2.0 * total * total) * dist,
    })
}
