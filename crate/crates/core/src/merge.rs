//! Merge planning for low-responsiveness conditioning frames.
//!
//! The learned convolutional compressor is replaced by a deterministic mean
//! pooling stand-in with the same interface (`N_t` tokens in, `ceil(N_t/r)`
//! out, dimension unchanged); that is enough for planning, cost accounting,
//! and data-flow testing. Target-video tokens are never merged. Discarding
//! instead of merging is available only as a comparison baseline.

use crate::budget::{attention_cost, TokenAllocation};
use crate::responsiveness::ResponsivenessVector;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("score/video misalignment: {0}")]
    Misaligned(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// How the reduction value of a policy is interpreted.
///
/// `Divisor` means `r` divides the token count (`r = 2` halves it);
/// `KeptFraction` means the policy value is the fraction kept (`0.5` halves
/// it), matching the convention of training-time compression factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RConvention {
    Divisor,
    KeptFraction,
}

/// Frame-selection fraction and the reduction-factor schedule.
///
/// The effective reduction is `r_base + r_slope * (n_memory_videos - 1)`,
/// scaling compression with the size of the memory set, clamped to at
/// least 1. The base/slope defaults are configuration, not anchored values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergePolicy {
    /// Fraction of frames eligible for merging, lowest responsiveness first.
    pub fraction_low: f64,
    pub r_base: f64,
    pub r_slope: f64,
    pub convention: RConvention,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self { fraction_low: 0.5, r_base: 1.5, r_slope: 0.25, convention: RConvention::Divisor }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<(), MergeError> {
        if !(0.0..=1.0).contains(&self.fraction_low) {
            return Err(MergeError::InvalidPolicy(format!(
                "fraction_low must be in [0, 1], got {}",
                self.fraction_low
            )));
        }
        if !self.r_base.is_finite() || !self.r_slope.is_finite() {
            return Err(MergeError::InvalidPolicy("non-finite reduction schedule".into()));
        }
        Ok(())
    }

    /// Effective token-count divisor for a given memory-set size.
    pub fn reduction_factor(&self, n_memory_videos: usize) -> Result<f64, MergeError> {
        self.validate()?;
        let n = n_memory_videos.max(1) as f64;
        let raw = self.r_base + self.r_slope * (n - 1.0);
        let r = match self.convention {
            RConvention::Divisor => raw,
            RConvention::KeptFraction => {
                if !(raw > 0.0 && raw <= 1.0) {
                    return Err(MergeError::InvalidPolicy(format!(
                        "kept-fraction value must be in (0, 1], got {raw}"
                    )));
                }
                1.0 / raw
            }
        };
        Ok(r.max(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    Merge,
    Discard,
}

/// Per-block merge plan over the conditioning videos of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergePlan {
    /// Transformer blocks where merging applies.
    pub block_points: Vec<u32>,
    /// Frame indices to merge, one list per conditioning (non-target) video,
    /// in allocation order.
    pub frames_to_merge: Vec<Vec<usize>>,
    /// Token-count divisor r.
    pub reduction: f64,
    pub mode: MergeMode,
    pub pre_tokens: u64,
    pub post_tokens: u64,
}

impl MergePlan {
    /// Modeled attention-cost reduction of the merged sequence:
    /// `1 - cost(post_tokens) / cost(pre_tokens)`.
    pub fn modeled_cost_reduction(&self, head_dim: u32, blocks: u32) -> Result<f64, MergeError> {
        let base = attention_cost(self.pre_tokens, head_dim, blocks);
        if base == 0.0 {
            return Err(MergeError::InvalidArgument("plan has zero pre-merge tokens".into()));
        }
        Ok(1.0 - attention_cost(self.post_tokens, head_dim, blocks) / base)
    }
}

/// Selects the `floor(fraction_low * T)` lowest-responsiveness unprotected
/// frames; selection ties break toward the lower index. Returned ascending.
pub fn select_frames(
    scores: &ResponsivenessVector,
    policy: &MergePolicy,
    protected: &BTreeSet<usize>,
) -> Vec<usize> {
    let t = scores.len();
    let count = (policy.fraction_low * t as f64).floor() as usize;
    let mut order: Vec<usize> = (0..t).filter(|i| !protected.contains(i)).collect();
    order.sort_by(|&a, &b| {
        scores.scores()[a]
            .partial_cmp(&scores.scores()[b])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order.into_iter().take(count).collect();
    selected.sort_unstable();
    selected
}

fn ceil_div_f(n: u64, r: f64) -> u64 {
    (n as f64 / r).ceil() as u64
}

/// Builds a merge plan for the conditioning videos of an allocation.
///
/// `per_video_scores` aligns with the allocation's non-target videos in
/// order; each vector's length must equal the video's tokenized frame count.
/// The reduction factor scales with the number of memory videos.
pub fn plan(
    allocation: &TokenAllocation,
    per_video_scores: &[ResponsivenessVector],
    policy: &MergePolicy,
    block_points: &[u32],
    mode: MergeMode,
) -> Result<MergePlan, MergeError> {
    policy.validate()?;
    let conditioning: Vec<_> = allocation.conditioning_videos().collect();
    if conditioning.len() != per_video_scores.len() {
        return Err(MergeError::Misaligned(format!(
            "allocation has {} conditioning videos, got {} score vectors",
            conditioning.len(),
            per_video_scores.len()
        )));
    }
    let r = policy.reduction_factor(allocation.memory_video_count())?;
    let no_protected = BTreeSet::new();
    let mut frames_to_merge = Vec::with_capacity(conditioning.len());
    let mut savings = 0u64;
    for (video, scores) in conditioning.iter().zip(per_video_scores) {
        let frame_count = video.tokenizer.frame_count(&video.shape) as usize;
        if scores.len() != frame_count {
            return Err(MergeError::Misaligned(format!(
                "{} has {frame_count} tokenized frames, score vector has {}",
                video.role,
                scores.len()
            )));
        }
        let selected = select_frames(scores, policy, &no_protected);
        let tokens_per_frame = video.tokenizer.tokens_per_frame(&video.shape);
        let per_frame_saving = match mode {
            MergeMode::Merge => tokens_per_frame - ceil_div_f(tokens_per_frame, r),
            MergeMode::Discard => tokens_per_frame,
        };
        savings += per_frame_saving * selected.len() as u64;
        frames_to_merge.push(selected);
    }
    Ok(MergePlan {
        block_points: block_points.to_vec(),
        frames_to_merge,
        reduction: r,
        mode,
        pre_tokens: allocation.total_tokens,
        post_tokens: allocation.total_tokens - savings,
    })
}

/// Mean-pooling merge of one frame's tokens: partitions the `N_t x dim`
/// row-major matrix into `ceil(N_t / r)` contiguous, near-equal groups and
/// averages each. The stand-in for the learned compressor.
pub fn apply_merge(tokens: &[f64], dim: usize, r: f64) -> Vec<f64> {
    assert!(dim > 0 && tokens.len().is_multiple_of(dim), "tokens must be N x dim row-major");
    let n = tokens.len() / dim;
    assert!(n >= 1, "need at least one token");
    assert!(r >= 1.0, "reduction factor must be at least 1");
    let groups = ceil_div_f(n as u64, r) as usize;
    let base = n / groups;
    let remainder = n % groups;
    let mut out = Vec::with_capacity(groups * dim);
    let mut start = 0usize;
    for g in 0..groups {
        let size = base + usize::from(g < remainder);
        let mut mean = vec![0.0f64; dim];
        for row in start..start + size {
            for (acc, &v) in mean.iter_mut().zip(&tokens[row * dim..(row + 1) * dim]) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= size as f64;
        }
        out.extend_from_slice(&mean);
        start += size;
    }
    out
}
