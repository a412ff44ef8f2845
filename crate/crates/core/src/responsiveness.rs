//! Frame-level attention responsiveness and cross-block stability analysis.
//!
//! Responsiveness of frame `t` is the maximum softmax attention mass any
//! target query places on the frame's spatially averaged key:
//! `R_t = max_q softmax(q . Kbar_t / sqrt(D))_t`, softmax taken over the
//! frame axis. Slabs are single-head; callers average or max over heads
//! upstream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic number of the slab file header ("SLAB").
pub const SLAB_MAGIC: u32 = 0x534C_4142;

#[derive(Debug, Error)]
pub enum SlabError {
    #[error("invalid slab: {0}")]
    InvalidSlab(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("slab file: {0}")]
    Format(String),
}

/// Query/key matrices of one attention block plus the token-to-frame map and
/// the target-query mask. Values are not needed for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSlab {
    n_tokens: usize,
    dim: usize,
    n_frames: usize,
    queries: Vec<f64>,
    keys: Vec<f64>,
    frame_index: Vec<u32>,
    target_mask: Vec<bool>,
}

impl AttentionSlab {
    /// Validates and builds a slab. `queries` and `keys` are `N x D`
    /// row-major; `frame_index` maps each token to its frame, and frames
    /// must cover `0..n_frames` contiguously (every frame has a token).
    pub fn new(
        dim: usize,
        queries: Vec<f64>,
        keys: Vec<f64>,
        frame_index: Vec<u32>,
        target_mask: Vec<bool>,
    ) -> Result<Self, SlabError> {
        let n_tokens = frame_index.len();
        if n_tokens == 0 || dim == 0 {
            return Err(SlabError::InvalidSlab("slab needs at least one token and one dimension".into()));
        }
        if queries.len() != n_tokens * dim || keys.len() != n_tokens * dim {
            return Err(SlabError::InvalidSlab(format!(
                "expected {n_tokens}x{dim} queries and keys, got {} and {}",
                queries.len(),
                keys.len()
            )));
        }
        if target_mask.len() != n_tokens {
            return Err(SlabError::InvalidSlab("target mask length mismatch".into()));
        }
        if !target_mask.iter().any(|&t| t) {
            return Err(SlabError::InvalidSlab("slab needs at least one target token".into()));
        }
        if queries.iter().chain(&keys).any(|v| !v.is_finite()) {
            return Err(SlabError::InvalidSlab("non-finite values".into()));
        }
        let n_frames = frame_index.iter().max().copied().unwrap_or(0) as usize + 1;
        let mut seen = vec![false; n_frames];
        for &f in &frame_index {
            seen[f as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(SlabError::InvalidSlab(format!("frame {missing} has no tokens")));
        }
        Ok(Self { n_tokens, dim, n_frames, queries, keys, frame_index, target_mask })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame_index(&self) -> &[u32] {
        &self.frame_index
    }

    pub fn target_mask(&self) -> &[bool] {
        &self.target_mask
    }

    pub fn query(&self, token: usize) -> &[f64] {
        &self.queries[token * self.dim..(token + 1) * self.dim]
    }

    pub fn key(&self, token: usize) -> &[f64] {
        &self.keys[token * self.dim..(token + 1) * self.dim]
    }

    /// Parses the little-endian slab format:
    /// `u32 magic, u32 N, u32 D, u32 n_frames, u32 n_target`, then
    /// frame indices (`N x u32`), target token indices (`n_target x u32`),
    /// queries and keys (`N x D` float32 each).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SlabError> {
        let take_u32 = |pos: &mut usize| -> Result<u32, SlabError> {
            let end = *pos + 4;
            if end > bytes.len() {
                return Err(SlabError::Format(format!("truncated at byte {pos}")));
            }
            let v = u32::from_le_bytes(bytes[*pos..end].try_into().unwrap());
            *pos = end;
            Ok(v)
        };
        let mut pos = 0usize;
        let magic = take_u32(&mut pos)?;
        if magic != SLAB_MAGIC {
            return Err(SlabError::Format(format!("bad magic 0x{magic:08X}, expected 0x{SLAB_MAGIC:08X}")));
        }
        let n = take_u32(&mut pos)? as usize;
        let d = take_u32(&mut pos)? as usize;
        let n_frames = take_u32(&mut pos)? as usize;
        let n_target = take_u32(&mut pos)? as usize;
        let expected = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_mul(8))
            .and_then(|qk| qk.checked_add(n.checked_mul(4)?))
            .and_then(|s| s.checked_add(n_target.checked_mul(4)?))
            .and_then(|s| s.checked_add(20))
            .ok_or_else(|| SlabError::Format("header sizes overflow".into()))?;
        if bytes.len() != expected {
            return Err(SlabError::Format(format!("file is {} bytes, expected {expected}", bytes.len())));
        }
        let mut frame_index = Vec::with_capacity(n);
        for _ in 0..n {
            let f = take_u32(&mut pos)?;
            if f as usize >= n_frames {
                return Err(SlabError::Format(format!("frame index {f} out of range ({n_frames} frames)")));
            }
            frame_index.push(f);
        }
        let mut target_mask = vec![false; n];
        for _ in 0..n_target {
            let idx = take_u32(&mut pos)? as usize;
            if idx >= n {
                return Err(SlabError::Format(format!("target index {idx} out of range ({n} tokens)")));
            }
            if target_mask[idx] {
                return Err(SlabError::Format(format!("duplicate target index {idx}")));
            }
            target_mask[idx] = true;
        }
        let mut take_f32s = |count: usize| -> Result<Vec<f64>, SlabError> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let end = pos + 4;
                out.push(f64::from(f32::from_le_bytes(bytes[pos..end].try_into().unwrap())));
                pos = end;
            }
            Ok(out)
        };
        let queries = take_f32s(n * d)?;
        let keys = take_f32s(n * d)?;
        let slab = Self::new(d, queries, keys, frame_index, target_mask)
            .map_err(|e| SlabError::Format(e.to_string()))?;
        if slab.n_frames != n_frames {
            return Err(SlabError::Format(format!(
                "header claims {n_frames} frames, tokens cover {}",
                slab.n_frames
            )));
        }
        Ok(slab)
    }

    /// Serializes to the slab file format (values narrowed to float32).
    pub fn to_bytes(&self) -> Vec<u8> {
        let target_indices: Vec<u32> = self
            .target_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| t.then_some(i as u32))
            .collect();
        let mut out = Vec::with_capacity(20 + self.n_tokens * 4 + target_indices.len() * 4 + self.n_tokens * self.dim * 8);
        out.extend_from_slice(&SLAB_MAGIC.to_le_bytes());
        out.extend_from_slice(&(self.n_tokens as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        out.extend_from_slice(&(target_indices.len() as u32).to_le_bytes());
        for &f in &self.frame_index {
            out.extend_from_slice(&f.to_le_bytes());
        }
        for idx in target_indices {
            out.extend_from_slice(&idx.to_le_bytes());
        }
        for v in self.queries.iter().chain(&self.keys) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }
}

/// Per-frame responsiveness scores; each score lies in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsivenessVector {
    scores: Vec<f64>,
}

impl ResponsivenessVector {
    pub fn from_scores(scores: Vec<f64>) -> Result<Self, SlabError> {
        if scores.is_empty() {
            return Err(SlabError::InvalidArgument("score vector must be non-empty".into()));
        }
        if scores.iter().any(|&s| !s.is_finite() || s <= 0.0 || s > 1.0) {
            return Err(SlabError::InvalidArgument("scores must lie in (0, 1]".into()));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Per-frame arithmetic mean of key vectors: `Kbar_t = mean_{i in I_t} K_i`.
pub fn aggregate_keys(slab: &AttentionSlab) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0f64; slab.dim]; slab.n_frames];
    let mut counts = vec![0usize; slab.n_frames];
    for token in 0..slab.n_tokens {
        let frame = slab.frame_index[token] as usize;
        counts[frame] += 1;
        for (acc, &v) in sums[frame].iter_mut().zip(slab.key(token)) {
            *acc += v;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        for v in sum.iter_mut() {
            *v /= count as f64;
        }
    }
    sums
}

/// Frame responsiveness: for each target query, softmax over the frame axis
/// of `q . Kbar_t / sqrt(D)`; `R_t` is the maximum over target queries.
pub fn responsiveness(slab: &AttentionSlab) -> ResponsivenessVector {
    let kbar = aggregate_keys(slab);
    let scale = 1.0 / (slab.dim as f64).sqrt();
    let mut r = vec![0.0f64; slab.n_frames];
    let mut logits = vec![0.0f64; slab.n_frames];
    for token in 0..slab.n_tokens {
        if !slab.target_mask[token] {
            continue;
        }
        let q = slab.query(token);
        for (t, kb) in kbar.iter().enumerate() {
            logits[t] = q.iter().zip(kb).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for l in &mut logits {
            *l = (*l - max_logit).exp();
            denom += *l;
        }
        debug_assert!((logits.iter().sum::<f64>() / denom - 1.0).abs() < 1e-9);
        for (t, &e) in logits.iter().enumerate() {
            let p = e / denom;
            if p > r[t] {
                r[t] = p;
            }
        }
    }
    ResponsivenessVector { scores: r }
}

/// Mean and population standard deviation of a comparison statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Cross-block stability of responsiveness scores: the anchor block compared
/// against every subsequent block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStabilityReport {
    /// 0-based anchor block index.
    pub anchor: usize,
    /// Number of compared blocks (anchor+1 .. end).
    pub compared: usize,
    /// None when every comparison was skipped (constant score vectors).
    pub pearson: Option<MeanStd>,
    pub spearman: Option<MeanStd>,
    pub bottom_k_overlap: MeanStd,
    /// Comparisons where the correlation was undefined (a constant vector).
    pub skipped: usize,
    /// Number of frames in the bottom-k set: `ceil(k_fraction * T)`.
    pub k_frames: usize,
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

/// Average ranks (1-based); ties receive the mean of their rank positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (average ranks for ties); `None` when either
/// rank vector is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Indices of the `k_frames` lowest-scored frames; threshold ties break
/// toward the lower frame index. Returned in ascending index order.
pub fn bottom_k_indices(scores: &[f64], k_frames: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores").then(a.cmp(&b)));
    let mut selected: Vec<usize> = order.into_iter().take(k_frames).collect();
    selected.sort_unstable();
    selected
}

/// Compares the anchor block's scores against every subsequent block:
/// Pearson, Spearman, and bottom-k overlap, each reported as mean and
/// standard deviation over the compared blocks.
pub fn block_stability(
    per_block: &[ResponsivenessVector],
    anchor: usize,
    k_fraction: f64,
) -> Result<BlockStabilityReport, SlabError> {
    if per_block.len() < 2 {
        return Err(SlabError::InvalidArgument("need at least 2 blocks".into()));
    }
    if anchor >= per_block.len() {
        return Err(SlabError::InvalidArgument(format!(
            "anchor {anchor} out of range for {} blocks",
            per_block.len()
        )));
    }
    if anchor + 1 >= per_block.len() {
        return Err(SlabError::InvalidArgument(format!("anchor {anchor} has no subsequent blocks")));
    }
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(SlabError::InvalidArgument(format!("k_fraction must be in (0, 1], got {k_fraction}")));
    }
    let t = per_block[0].len();
    if per_block.iter().any(|b| b.len() != t) {
        return Err(SlabError::InvalidArgument("blocks have differing frame counts".into()));
    }
    let k_frames = (k_fraction * t as f64).ceil() as usize;
    let anchor_scores = per_block[anchor].scores();
    let anchor_bottom = bottom_k_indices(anchor_scores, k_frames);

    let mut pearsons = Vec::new();
    let mut spearmans = Vec::new();
    let mut overlaps = Vec::new();
    let mut skipped = 0usize;
    for block in &per_block[anchor + 1..] {
        let scores = block.scores();
        match (pearson(anchor_scores, scores), spearman(anchor_scores, scores)) {
            (Some(p), Some(s)) => {
                pearsons.push(p);
                spearmans.push(s);
            }
            _ => skipped += 1,
        }
        let bottom = bottom_k_indices(scores, k_frames);
        let inter = anchor_bottom.iter().filter(|i| bottom.contains(i)).count();
        overlaps.push(inter as f64 / k_frames as f64);
    }
    Ok(BlockStabilityReport {
        anchor,
        compared: per_block.len() - anchor - 1,
        pearson: (!pearsons.is_empty()).then(|| mean_std(&pearsons)),
        spearman: (!spearmans.is_empty()).then(|| mean_std(&spearmans)),
        bottom_k_overlap: mean_std(&overlaps),
        skipped,
        k_frames,
    })
}
