//! Dynamic tokenizer tiers, token counting, and the modeled attention cost.
//!
//! Tier assignment by relevance rank: the target and user-input videos use
//! the fine tier (1x2x2), memory ranks 1..=3 the middle tier (1x4x4), and
//! all remaining memory videos the coarse tier (1x8x8). Token counts use
//! per-axis ceiling division (implicit edge padding, content is never
//! dropped).
//!
//! The cost model counts only the self-attention matmul MACs per block
//! (`QK^T` plus `attn * V`, each `2 N^2 D`) — the dominant quadratic term.
//! MLP and modulation layers scale linearly with tokenization and are
//! excluded; the model is meant for relative comparisons only.

use crate::cache::LatentShape;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BudgetError {
    #[error("invalid tokenizer spec `{0}`")]
    InvalidTier(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("baseline attention cost is zero")]
    ZeroBaseline,
}

/// Spatio-temporal compression factors `f x h x w` of one tokenizer tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerSpec {
    pub f: u32,
    pub h: u32,
    pub w: u32,
}

impl TokenizerSpec {
    pub fn new(f: u32, h: u32, w: u32) -> Result<Self, BudgetError> {
        if f == 0 || h == 0 || w == 0 {
            return Err(BudgetError::InvalidTier(format!("{f}x{h}x{w}")));
        }
        Ok(Self { f, h, w })
    }

    /// Tokens produced for a latent shape: `ceil(F/f) * ceil(H/h) * ceil(W/w)`.
    pub fn token_count(&self, shape: &LatentShape) -> u64 {
        u64::from(shape.frames.div_ceil(self.f))
            * u64::from(shape.height.div_ceil(self.h))
            * u64::from(shape.width.div_ceil(self.w))
    }

    /// Temporal extent after tokenization: `ceil(F/f)`.
    pub fn frame_count(&self, shape: &LatentShape) -> u32 {
        shape.frames.div_ceil(self.f)
    }

    /// Spatial tokens per tokenized frame: `ceil(H/h) * ceil(W/w)`.
    pub fn tokens_per_frame(&self, shape: &LatentShape) -> u64 {
        u64::from(shape.height.div_ceil(self.h)) * u64::from(shape.width.div_ceil(self.w))
    }
}

impl fmt::Display for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.f, self.h, self.w)
    }
}

impl FromStr for TokenizerSpec {
    type Err = BudgetError;

    fn from_str(s: &str) -> Result<Self, BudgetError> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 3 {
            return Err(BudgetError::InvalidTier(s.to_string()));
        }
        let parse = |p: &str| p.parse::<u32>().map_err(|_| BudgetError::InvalidTier(s.to_string()));
        Self::new(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)
    }
}

impl Serialize for TokenizerSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TokenizerSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Role of one video in the conditioning sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "rank")]
pub enum VideoRole {
    Target,
    UserInput,
    /// Retrieved memory video; rank is 1-based relevance order.
    Memory(u32),
}

impl fmt::Display for VideoRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VideoRole::Target => write!(f, "target"),
            VideoRole::UserInput => write!(f, "user_input"),
            VideoRole::Memory(rank) => write!(f, "memory_rank_{rank}"),
        }
    }
}

/// Tier set and the relevance cutoff between the middle and coarse tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    /// Exactly three tiers: fine (target + user input), middle (top ranks),
    /// coarse (the rest).
    pub tiers: Vec<TokenizerSpec>,
    /// Memory ranks `1..=fine_top_k` use the middle tier.
    pub fine_top_k: u32,
}

impl Default for TierConfig {
    fn default() -> Self {
        Self {
            tiers: vec![
                TokenizerSpec { f: 1, h: 2, w: 2 },
                TokenizerSpec { f: 1, h: 4, w: 4 },
                TokenizerSpec { f: 1, h: 8, w: 8 },
            ],
            fine_top_k: 3,
        }
    }
}

impl TierConfig {
    pub fn validate(&self) -> Result<(), BudgetError> {
        if self.tiers.len() != 3 {
            return Err(BudgetError::InvalidArgument(format!(
                "tier set needs exactly 3 tiers, got {}",
                self.tiers.len()
            )));
        }
        Ok(())
    }

    pub fn tier_for(&self, role: VideoRole) -> TokenizerSpec {
        match role {
            VideoRole::Target | VideoRole::UserInput => self.tiers[0],
            VideoRole::Memory(rank) if rank <= self.fine_top_k => self.tiers[1],
            VideoRole::Memory(_) => self.tiers[2],
        }
    }
}

/// Shape parameters of the attention cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub head_dim: u32,
    pub blocks: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { head_dim: 64, blocks: 30 }
    }
}

impl CostModel {
    pub fn cost(&self, total_tokens: u64) -> f64 {
        attention_cost(total_tokens, self.head_dim, self.blocks)
    }
}

/// Tier assignment and token accounting of one conditioning sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAllocation {
    #[serde(flatten)]
    pub role: VideoRole,
    pub shape: LatentShape,
    pub tokenizer: TokenizerSpec,
    pub token_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAllocation {
    pub per_video: Vec<VideoAllocation>,
    pub total_tokens: u64,
    /// Modeled multiply-accumulates under the cost model the allocation was
    /// built with; for relative comparisons only.
    pub attention_cost: f64,
}

impl TokenAllocation {
    fn from_videos(per_video: Vec<VideoAllocation>, cost: &CostModel) -> Self {
        let total_tokens = per_video.iter().map(|v| v.token_count).sum();
        Self { per_video, total_tokens, attention_cost: cost.cost(total_tokens) }
    }

    /// Videos that may be merged: everything except the target.
    pub fn conditioning_videos(&self) -> impl Iterator<Item = &VideoAllocation> {
        self.per_video.iter().filter(|v| v.role != VideoRole::Target)
    }

    pub fn memory_video_count(&self) -> usize {
        self.per_video.iter().filter(|v| matches!(v.role, VideoRole::Memory(_))).count()
    }
}

/// Assigns tiers by relevance rank and counts tokens.
///
/// `memory_shapes` must already be sorted by relevance (the output order of
/// a retrieval module); rank 1 is the most relevant.
pub fn allocate(
    target_shape: LatentShape,
    user_shape: LatentShape,
    memory_shapes: &[LatentShape],
    tiers: &TierConfig,
    cost: &CostModel,
) -> Result<TokenAllocation, BudgetError> {
    tiers.validate()?;
    let mut per_video = Vec::with_capacity(2 + memory_shapes.len());
    for (role, shape) in [(VideoRole::Target, target_shape), (VideoRole::UserInput, user_shape)] {
        let tokenizer = tiers.tier_for(role);
        per_video.push(VideoAllocation { role, shape, tokenizer, token_count: tokenizer.token_count(&shape) });
    }
    for (i, &shape) in memory_shapes.iter().enumerate() {
        let role = VideoRole::Memory(i as u32 + 1);
        let tokenizer = tiers.tier_for(role);
        per_video.push(VideoAllocation { role, shape, tokenizer, token_count: tokenizer.token_count(&shape) });
    }
    Ok(TokenAllocation::from_videos(per_video, cost))
}

/// Baseline allocation where every video uses the same tier (the uniform
/// conditioning setup dynamic tokenization is compared against).
pub fn uniform_allocation(
    target_shape: LatentShape,
    user_shape: LatentShape,
    memory_shapes: &[LatentShape],
    tier: TokenizerSpec,
    cost: &CostModel,
) -> TokenAllocation {
    let mut per_video = Vec::with_capacity(2 + memory_shapes.len());
    for (role, shape) in [(VideoRole::Target, target_shape), (VideoRole::UserInput, user_shape)] {
        per_video.push(VideoAllocation { role, shape, tokenizer: tier, token_count: tier.token_count(&shape) });
    }
    for (i, &shape) in memory_shapes.iter().enumerate() {
        per_video.push(VideoAllocation {
            role: VideoRole::Memory(i as u32 + 1),
            shape,
            tokenizer: tier,
            token_count: tier.token_count(&shape),
        });
    }
    TokenAllocation::from_videos(per_video, cost)
}

/// Self-attention MACs over all blocks: `blocks * (2 N^2 D + 2 N^2 D)`.
pub fn attention_cost(total_tokens: u64, head_dim: u32, blocks: u32) -> f64 {
    let n = total_tokens as f64;
    let d = f64::from(head_dim);
    f64::from(blocks) * (2.0 * n * n * d + 2.0 * n * n * d)
}

/// Fractional cost reduction of `candidate` relative to `baseline` under the
/// same block/head configuration: `1 - cost(candidate) / cost(baseline)`.
pub fn reduction_report(
    baseline: &TokenAllocation,
    candidate: &TokenAllocation,
    blocks: u32,
    head_dim: u32,
) -> Result<f64, BudgetError> {
    let base = attention_cost(baseline.total_tokens, head_dim, blocks);
    if base == 0.0 {
        return Err(BudgetError::ZeroBaseline);
    }
    Ok(1.0 - attention_cost(candidate.total_tokens, head_dim, blocks) / base)
}
