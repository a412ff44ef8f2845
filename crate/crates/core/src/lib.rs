//! memctx: a deterministic retrieval-and-compression engine for multi-turn
//! video editing pipelines.
//!
//! The engine maintains a persistent cache of prior edits, ranks cached
//! videos by geometric field-of-view overlap or by feature similarity,
//! assigns dynamic token budgets by relevance rank, scores per-frame
//! attention responsiveness, plans adaptive token merges, and emits
//! temporal RoPE index layouts. It contains no neural network: latents and
//! embeddings are opaque payloads produced upstream.
//!
//! Module map:
//! - [`camera`]: pinhole camera math, relative poses, sphere sampling
//! - [`fov`]: spherical FOV sets, overlap scoring, top-k trajectory retrieval
//! - [`feat`]: descriptor averaging and cosine-similarity segment ranking
//! - [`cache`]: append-ordered persistent store of prior edits
//! - [`budget`]: tier assignment, token counting, attention cost model
//! - [`responsiveness`]: frame-level attention responsiveness and block stability
//! - [`merge`]: low-responsiveness frame selection and merge planning
//! - [`rope`]: disjoint temporal RoPE index ranges per video role
//! - [`config`]: declarative engine configuration with built-in defaults

pub mod budget;
pub mod cache;
pub mod camera;
pub mod config;
pub mod feat;
pub mod fov;
pub mod merge;
pub mod responsiveness;
pub mod rope;

pub use budget::{
    allocate, attention_cost, reduction_report, uniform_allocation, BudgetError, CostModel,
    TierConfig, TokenAllocation, TokenizerSpec, VideoAllocation, VideoRole,
};
pub use cache::{Cache, CacheEntry, CacheError, CacheSnapshot, KeySource, LatentShape, RetrievalKey, Task};
pub use camera::{
    flatten_extrinsics, in_fov, project, relative_pose, unflatten_extrinsics, CameraTrajectory,
    GeometryError, GridId, Intrinsics, Pose, SphereGrid, TrajectoryFrame,
};
pub use config::{ConfigError, EngineConfig};
pub use feat::{cosine_sim, descriptor, rank_segments, FeatureError, SegmentDescriptor, SegmentRanking};
pub use fov::{fov_score, frame_fov, rank_by_fov, video_fov, FovError, FovIndex, FovScore, FovSet};
pub use merge::{
    apply_merge, plan, select_frames, MergeError, MergeMode, MergePlan, MergePolicy, RConvention,
};
pub use responsiveness::{
    aggregate_keys, block_stability, responsiveness, AttentionSlab, BlockStabilityReport, MeanStd,
    ResponsivenessVector, SlabError,
};
pub use rope::{index_of, layout_edit, layout_nvs, MemLayout, RopeError, RopeRange, RopeRanges, RopeRole};
