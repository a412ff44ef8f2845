//! Spherical field-of-view sets and top-k trajectory retrieval.
//!
//! A [`FovSet`] is a bitset over the sample points of a [`SphereGrid`]: bit
//! `m` is set iff sample `m` is visible from at least one frame. Trajectory
//! relevance combines Jaccard overlap with target containment, weighted by
//! `lambda` (default 0.5).

use crate::cache::{CacheSnapshot, RetrievalKey};
use crate::camera::{in_fov, relative_pose, CameraTrajectory, GeometryError, GridId, Pose, SphereGrid, TrajectoryFrame};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FovError {
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: GridId, right: GridId },
    #[error("degenerate target: target FOV is empty")]
    DegenerateTarget,
    #[error("lambda must be in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("cache entry {0} is not keyed by a camera trajectory")]
    MissingTrajectory(u64),
    #[error("sample index {index} out of range for grid of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Visibility footprint over a sphere grid, stored as a packed bitset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FovSet {
    grid_id: GridId,
    n_bits: usize,
    words: Vec<u64>,
}

impl FovSet {
    pub fn empty(grid_id: GridId, n_bits: usize) -> Self {
        Self { grid_id, n_bits, words: vec![0; n_bits.div_ceil(64)] }
    }

    pub fn from_indices<I>(grid_id: GridId, n_bits: usize, indices: I) -> Result<Self, FovError>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut set = Self::empty(grid_id, n_bits);
        for index in indices {
            if index >= n_bits {
                return Err(FovError::IndexOutOfRange { index, len: n_bits });
            }
            set.set(index);
        }
        Ok(set)
    }

    #[inline]
    fn set(&mut self, index: usize) {
        self.words[index / 64] |= 1u64 << (index % 64);
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        index < self.n_bits && self.words[index / 64] & (1u64 << (index % 64)) != 0
    }

    pub fn grid_id(&self) -> GridId {
        self.grid_id
    }

    /// Number of bit positions (the grid's M), not the popcount.
    pub fn len(&self) -> usize {
        self.n_bits
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Number of set bits.
    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    fn check_compatible(&self, other: &Self) -> Result<(), FovError> {
        if self.grid_id != other.grid_id || self.n_bits != other.n_bits {
            return Err(FovError::GridMismatch { left: self.grid_id, right: other.grid_id });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Self) -> Result<u64, FovError> {
        self.check_compatible(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum())
    }

    pub fn union_count(&self, other: &Self) -> Result<u64, FovError> {
        self.check_compatible(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a | b).count_ones()))
            .sum())
    }

    pub fn union_with(&mut self, other: &Self) -> Result<(), FovError> {
        self.check_compatible(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    /// True iff every bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> Result<bool, FovError> {
        self.check_compatible(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0))
    }

    pub fn iter_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let bit = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + bit)
                }
            })
        })
    }
}

/// FOV similarity between a target and a candidate set.
///
/// `overlap` is intersection over union, `contain` is intersection over the
/// target size, and `weighted = lambda * overlap + (1 - lambda) * contain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovScore {
    pub overlap: f64,
    pub contain: f64,
    pub weighted: f64,
    pub lambda: f64,
}

/// Per-frame FOV: the frame's pose is first relativized against `reference`
/// (the trajectory's first frame), then every grid point is tested for
/// positive depth and in-bounds projection.
pub fn frame_fov(frame: &TrajectoryFrame, grid: &SphereGrid, reference: &Pose) -> Result<FovSet, FovError> {
    let rel = relative_pose(&frame.pose, reference)?;
    let mut set = FovSet::empty(grid.id(), grid.len());
    for (m, point) in grid.points().iter().enumerate() {
        if in_fov(point, &frame.intrinsics, &rel) {
            set.set(m);
        }
    }
    Ok(set)
}

/// Video-level FOV: the union of all frame FOVs, each relativized to the
/// trajectory's own first frame.
pub fn video_fov(traj: &CameraTrajectory, grid: &SphereGrid) -> Result<FovSet, FovError> {
    let reference = traj.frames()[0].pose;
    let mut acc = FovSet::empty(grid.id(), grid.len());
    for frame in traj.frames() {
        let set = frame_fov(frame, grid, &reference)?;
        acc.union_with(&set)?;
    }
    Ok(acc)
}

/// Scores a candidate FOV against a target FOV.
pub fn fov_score(target: &FovSet, candidate: &FovSet, lambda: f64) -> Result<FovScore, FovError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FovError::InvalidLambda(lambda));
    }
    target.check_compatible(candidate)?;
    let target_count = target.count();
    if target_count == 0 {
        return Err(FovError::DegenerateTarget);
    }
    let inter = target.intersection_count(candidate)? as f64;
    let union = target.union_count(candidate)? as f64;
    let overlap = inter / union;
    let contain = inter / target_count as f64;
    Ok(FovScore { overlap, contain, weighted: lambda * overlap + (1.0 - lambda) * contain, lambda })
}

/// Precomputed per-entry FOV sets for one grid; the hot path of retrieval.
/// Rebuild on grid change; queries against a built index are pure.
pub struct FovIndex {
    grid: SphereGrid,
    // (entry_id, created_seq, fov)
    sets: Vec<(u64, u64, FovSet)>,
}

impl FovIndex {
    /// Computes the FOV set of every trajectory-keyed entry in the snapshot.
    pub fn build(snapshot: &CacheSnapshot, grid: &SphereGrid) -> Result<Self, FovError> {
        let mut sets = Vec::with_capacity(snapshot.len());
        for entry in snapshot.entries() {
            match &entry.key {
                RetrievalKey::Trajectory(traj) => {
                    sets.push((entry.entry_id, entry.created_seq, video_fov(traj, grid)?));
                }
                RetrievalKey::Descriptor(_) => return Err(FovError::MissingTrajectory(entry.entry_id)),
            }
        }
        Ok(Self { grid: grid.clone(), sets })
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    /// Ranks indexed entries against a target trajectory: weighted score
    /// descending, ties broken most-recent-first, then entry id ascending.
    pub fn rank(&self, target: &CameraTrajectory, k: usize, lambda: f64) -> Result<Vec<(u64, FovScore)>, FovError> {
        let target_fov = video_fov(target, &self.grid)?;
        if target_fov.count() == 0 {
            return Err(FovError::DegenerateTarget);
        }
        let mut scored: Vec<(u64, u64, FovScore)> = Vec::with_capacity(self.sets.len());
        for (entry_id, created_seq, set) in &self.sets {
            scored.push((*entry_id, *created_seq, fov_score(&target_fov, set, lambda)?));
        }
        scored.sort_by(|a, b| {
            b.2.weighted
                .partial_cmp(&a.2.weighted)
                .expect("scores are finite")
                .then(b.1.cmp(&a.1))
                .then(a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored.into_iter().map(|(id, _, score)| (id, score)).collect())
    }
}

/// One-shot top-k retrieval over a cache snapshot (builds a transient
/// [`FovIndex`]).
pub fn rank_by_fov(
    target: &CameraTrajectory,
    snapshot: &CacheSnapshot,
    k: usize,
    lambda: f64,
    grid: &SphereGrid,
) -> Result<Vec<(u64, FovScore)>, FovError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FovError::InvalidLambda(lambda));
    }
    FovIndex::build(snapshot, grid)?.rank(target, k, lambda)
}
