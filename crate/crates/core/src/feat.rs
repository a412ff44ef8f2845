//! Feature-similarity retrieval for previously edited segments.
//!
//! Segments are represented by the mean of their per-frame embedding vectors
//! (the encoder itself is external; the engine is encoder-agnostic by
//! dimension). Ranking is descending cosine similarity with an optional
//! recent-first override that always promotes the latest segment.

use thiserror::Error;

/// Magic number of the embedding file header ("MCTX").
pub const EMBEDDING_MAGIC: u32 = 0x4D43_5458;
/// Current embedding file version.
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("degenerate descriptor: zero norm")]
    DegenerateDescriptor,
    #[error("embedding file: {0}")]
    Format(String),
}

/// Mean per-frame embedding of one video segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDescriptor {
    vector: Vec<f64>,
    frame_count: usize,
}

impl SegmentDescriptor {
    pub fn new(vector: Vec<f64>, frame_count: usize) -> Result<Self, FeatureError> {
        if vector.is_empty() {
            return Err(FeatureError::InvalidArgument("descriptor dimension must be positive".into()));
        }
        if frame_count == 0 {
            return Err(FeatureError::InvalidArgument("frame count must be at least 1".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidArgument("descriptor must be finite".into()));
        }
        Ok(Self { vector, frame_count })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }
}

/// Arithmetic mean of per-frame embeddings, accumulated in f64.
pub fn descriptor(frames: &[Vec<f32>]) -> Result<SegmentDescriptor, FeatureError> {
    let first = frames
        .first()
        .ok_or_else(|| FeatureError::InvalidArgument("descriptor needs at least one frame".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(FeatureError::InvalidArgument("embedding dimension must be positive".into()));
    }
    let mut sum = vec![0.0f64; dim];
    for frame in frames {
        if frame.len() != dim {
            return Err(FeatureError::DimMismatch { left: dim, right: frame.len() });
        }
        for (acc, &v) in sum.iter_mut().zip(frame) {
            *acc += f64::from(v);
        }
    }
    let n = frames.len() as f64;
    for v in &mut sum {
        *v /= n;
    }
    SegmentDescriptor::new(sum, frames.len())
}

/// Cosine similarity `<a, b> / (|a| |b|)`; symmetric and invariant under
/// positive scaling of either argument.
pub fn cosine_sim(a: &SegmentDescriptor, b: &SegmentDescriptor) -> Result<f64, FeatureError> {
    if a.dim() != b.dim() {
        return Err(FeatureError::DimMismatch { left: a.dim(), right: b.dim() });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.vector.iter().zip(&b.vector) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(FeatureError::DegenerateDescriptor);
    }
    Ok(dot / (na * nb).sqrt())
}

/// Result of ranking a history of segments against a target.
///
/// `ranked` holds 1-based history indices in retrieval order (truncated to
/// k); `similarities[i]` is the cosine similarity of history segment `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRanking {
    pub ranked: Vec<usize>,
    pub similarities: Vec<f64>,
}

/// Ranks history segments (1-based indices, temporal order) by descending
/// cosine similarity to the target; equal similarities break toward the more
/// recent index. With `enforce_recent_first`, index N is moved to the front
/// regardless of its similarity. Returns the first `min(k, N)` indices.
pub fn rank_segments(
    target: &SegmentDescriptor,
    history: &[SegmentDescriptor],
    k: usize,
    enforce_recent_first: bool,
) -> Result<SegmentRanking, FeatureError> {
    let n = history.len();
    let mut similarities = Vec::with_capacity(n);
    for item in history {
        similarities.push(cosine_sim(target, item)?);
    }
    let mut order: Vec<usize> = (1..=n).collect();
    order.sort_by(|&a, &b| {
        similarities[b - 1]
            .partial_cmp(&similarities[a - 1])
            .expect("cosine similarities are finite")
            .then(b.cmp(&a))
    });
    if enforce_recent_first && n > 0 {
        order.retain(|&i| i != n);
        order.insert(0, n);
    }
    order.truncate(k.min(n));
    Ok(SegmentRanking { ranked: order, similarities })
}

/// Decoded embedding file: `frame_count` rows of `dim` float32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub frames: Vec<Vec<f32>>,
}

impl EmbeddingFile {
    pub fn descriptor(&self) -> Result<SegmentDescriptor, FeatureError> {
        descriptor(&self.frames)
    }
}

/// Parses the little-endian embedding format:
/// `u32 magic, u32 version, u32 frame_count, u32 dim`, then
/// `frame_count x dim` float32 row-major.
pub fn read_embedding(bytes: &[u8]) -> Result<EmbeddingFile, FeatureError> {
    let mut r = Cursor { bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != EMBEDDING_MAGIC {
        return Err(FeatureError::Format(format!(
            "bad magic 0x{magic:08X}, expected 0x{EMBEDDING_MAGIC:08X}"
        )));
    }
    let version = r.u32()?;
    if version != EMBEDDING_VERSION {
        return Err(FeatureError::Format(format!("unsupported version {version}")));
    }
    let frame_count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if frame_count == 0 || dim == 0 {
        return Err(FeatureError::Format(format!("empty embedding: {frame_count} frames x {dim} dims")));
    }
    let expected = frame_count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FeatureError::Format("size overflow".into()))?;
    if r.remaining() != expected {
        return Err(FeatureError::Format(format!(
            "payload is {} bytes, expected {expected} for {frame_count}x{dim} float32",
            r.remaining()
        )));
    }
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(r.f32()?);
        }
        frames.push(row);
    }
    Ok(EmbeddingFile { frames })
}

/// Serializes per-frame embeddings to the embedding file format.
pub fn write_embedding(frames: &[Vec<f32>]) -> Result<Vec<u8>, FeatureError> {
    let first = frames
        .first()
        .ok_or_else(|| FeatureError::InvalidArgument("cannot write an empty embedding".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(FeatureError::InvalidArgument("embedding dimension must be positive".into()));
    }
    let mut out = Vec::with_capacity(16 + frames.len() * dim * 4);
    out.extend_from_slice(&EMBEDDING_MAGIC.to_le_bytes());
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for frame in frames {
        if frame.len() != dim {
            return Err(FeatureError::DimMismatch { left: dim, right: frame.len() });
        }
        for v in frame {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], FeatureError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(FeatureError::Format(format!(
                "truncated at byte {} ({} bytes needed)", self.pos, n
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FeatureError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
