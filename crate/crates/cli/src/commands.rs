//! Subcommand implementations.

use crate::UsageError;
use anyhow::{anyhow, Context, Result};
use memctx_core::budget::{allocate, uniform_allocation, TierConfig, TokenAllocation};
use memctx_core::cache::{Cache, KeySource, LatentShape, RetrievalKey, Task};
use memctx_core::camera::CameraTrajectory;
use memctx_core::config::{EngineConfig, MergeSection};
use memctx_core::feat::{rank_segments, read_embedding};
use memctx_core::fov::rank_by_fov;
use memctx_core::merge::{plan, MergeMode, MergePlan, MergePolicy, RConvention};
use memctx_core::responsiveness::{block_stability, responsiveness, AttentionSlab, ResponsivenessVector};
use memctx_core::rope::{index_of, layout_edit, layout_nvs_with, MemLayout, RopeRanges};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub fn load_config(flag: Option<&Path>) -> Result<EngineConfig> {
    let path = flag
        .map(|p| p.to_path_buf())
        .or_else(|| std::env::var_os("MEMCTX_CONFIG").map(Into::into));
    match path {
        Some(path) => EngineConfig::load(&path).with_context(|| format!("config: loading {}", path.display())),
        None => Ok(EngineConfig::default()),
    }
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

fn parse_shape(text: &str) -> Result<LatentShape> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 4 {
        return Err(usage(format!("shape must be FxHxWxC, got `{text}`")));
    }
    let mut dims = [0u32; 4];
    for (slot, part) in dims.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| usage(format!("invalid shape component `{part}` in `{text}`")))?;
    }
    LatentShape::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| usage(e.to_string()))
}

fn parse_task(text: &str) -> Result<Task> {
    match text {
        "novel_view" => Ok(Task::NovelView),
        "text_edit" => Ok(Task::TextEdit),
        other => Err(usage(format!("task must be novel_view or text_edit, got `{other}`"))),
    }
}

fn open_or_create_cache(root: &Path) -> Result<Cache> {
    if root.join("manifest.jsonl").exists() {
        Cache::load(root).with_context(|| format!("memory_cache: loading {}", root.display()))
    } else {
        Cache::create(root).with_context(|| format!("memory_cache: creating {}", root.display()))
    }
}

pub fn cache_add(
    config: &EngineConfig,
    root: &Path,
    task: &str,
    shape: &str,
    traj: Option<&Path>,
    emb: Option<&Path>,
    payload: Option<&Path>,
) -> Result<()> {
    let task = parse_task(task)?;
    let shape = parse_shape(shape)?;
    let key = match (task, traj, emb) {
        (Task::NovelView, Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("camera_geometry: reading {}", path.display()))?;
            let defaults = config
                .default_intrinsics()
                .context("camera_geometry: default intrinsics")?;
            let trajectory = CameraTrajectory::from_text(&text, Some(&defaults))
                .with_context(|| format!("camera_geometry: parsing {}", path.display()))?;
            KeySource::Trajectory(trajectory)
        }
        (Task::TextEdit, None, Some(path)) => {
            let bytes = std::fs::read(path)
                .with_context(|| format!("feature_retrieval: reading {}", path.display()))?;
            let file = read_embedding(&bytes)
                .with_context(|| format!("feature_retrieval: parsing {}", path.display()))?;
            KeySource::Embedding(file.frames)
        }
        _ => {
            return Err(usage(
                "novel_view entries need --traj, text_edit entries need --emb (exactly one of the two)",
            ))
        }
    };
    let payload_bytes = match payload {
        Some(path) => Some(
            std::fs::read(path).with_context(|| format!("memory_cache: reading payload {}", path.display()))?,
        ),
        None => None,
    };
    let mut cache = open_or_create_cache(root)?;
    let entry_id = cache
        .insert(task, shape, key, payload_bytes.as_deref())
        .with_context(|| format!("memory_cache: inserting into {}", root.display()))?;
    println!("inserted entry {entry_id}");
    Ok(())
}

#[derive(Serialize)]
struct ListRecord {
    entry_id: u64,
    task: Task,
    latent_shape: LatentShape,
    key_ref: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload_ref: Option<String>,
    created_seq: u64,
}

pub fn cache_list(root: &Path, json: bool) -> Result<()> {
    let cache = Cache::load(root).with_context(|| format!("memory_cache: loading {}", root.display()))?;
    let records: Vec<ListRecord> = cache
        .entries()
        .iter()
        .map(|e| ListRecord {
            entry_id: e.entry_id,
            task: e.task,
            latent_shape: e.latent_shape,
            key_ref: match e.key {
                RetrievalKey::Trajectory(_) => format!("keys/{}.traj", e.entry_id),
                RetrievalKey::Descriptor(_) => format!("keys/{}.emb", e.entry_id),
            },
            payload_ref: e.payload_ref.clone(),
            created_seq: e.created_seq,
        })
        .collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&records)?);
    } else {
        for r in &records {
            println!(
                "{} {} {} {} {}",
                r.entry_id,
                r.task,
                r.latent_shape,
                r.key_ref,
                r.payload_ref.as_deref().unwrap_or("-")
            );
        }
    }
    Ok(())
}

pub fn cache_gc(root: &Path) -> Result<()> {
    let cache = Cache::load(root).with_context(|| format!("memory_cache: loading {}", root.display()))?;
    let mut report = cache.gc().with_context(|| format!("memory_cache: gc in {}", root.display()))?;
    report.removed.sort();
    for path in &report.removed {
        println!("removed {}", path.display());
    }
    println!("{} orphaned files removed", report.removed.len());
    Ok(())
}

fn parse_grid_flag(text: &str) -> Result<(u32, u32)> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 2 {
        return Err(usage(format!("grid must be THETAxPHI, got `{text}`")));
    }
    let n_theta = parts[0].parse().map_err(|_| usage(format!("invalid grid `{text}`")))?;
    let n_phi = parts[1].parse().map_err(|_| usage(format!("invalid grid `{text}`")))?;
    Ok((n_theta, n_phi))
}

#[derive(Serialize)]
struct FovResult {
    rank: usize,
    entry_id: u64,
    weighted: f64,
    overlap: f64,
    contain: f64,
    lambda: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn retrieve_fov(
    config: &EngineConfig,
    cache_root: &Path,
    target: &Path,
    k: usize,
    lambda: Option<f64>,
    grid_flag: Option<&str>,
    radius: Option<f64>,
    json: bool,
) -> Result<()> {
    let cache = Cache::load(cache_root)
        .with_context(|| format!("memory_cache: loading {}", cache_root.display()))?;
    let text = std::fs::read_to_string(target)
        .with_context(|| format!("camera_geometry: reading {}", target.display()))?;
    let defaults = config.default_intrinsics().context("camera_geometry: default intrinsics")?;
    let trajectory = CameraTrajectory::from_text(&text, Some(&defaults))
        .with_context(|| format!("camera_geometry: parsing {}", target.display()))?;

    let (n_theta, n_phi) = match grid_flag {
        Some(flag) => parse_grid_flag(flag)?,
        None => (config.grid.n_theta, config.grid.n_phi),
    };
    let radius = radius.unwrap_or(config.grid.radius);
    let grid = memctx_core::camera::SphereGrid::sample(n_theta, n_phi, radius)
        .context("camera_geometry: sphere grid")?;
    let lambda = lambda.unwrap_or_else(|| config.lambda());

    let ranked = rank_by_fov(&trajectory, &cache.snapshot(), k, lambda, &grid)
        .with_context(|| format!("fov_retrieval: ranking against {}", target.display()))?;
    let results: Vec<FovResult> = ranked
        .iter()
        .enumerate()
        .map(|(i, (entry_id, score))| FovResult {
            rank: i + 1,
            entry_id: *entry_id,
            weighted: score.weighted,
            overlap: score.overlap,
            contain: score.contain,
            lambda: score.lambda,
        })
        .collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        for r in &results {
            println!("{} {} {:.6} {:.6} {:.6}", r.rank, r.entry_id, r.weighted, r.overlap, r.contain);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct FeatResult {
    rank: usize,
    entry_id: u64,
    similarity: f64,
}

pub fn retrieve_feat(cache_root: &Path, target: &Path, k: usize, recent_first: bool, json: bool) -> Result<()> {
    let cache = Cache::load(cache_root)
        .with_context(|| format!("memory_cache: loading {}", cache_root.display()))?;
    let bytes = std::fs::read(target)
        .with_context(|| format!("feature_retrieval: reading {}", target.display()))?;
    let file = read_embedding(&bytes)
        .with_context(|| format!("feature_retrieval: parsing {}", target.display()))?;
    let target_desc = file.descriptor().context("feature_retrieval: target descriptor")?;

    let mut history = Vec::with_capacity(cache.len());
    for entry in cache.entries() {
        match &entry.key {
            RetrievalKey::Descriptor(d) => history.push(d.clone()),
            RetrievalKey::Trajectory(_) => {
                return Err(anyhow!(
                    "feature_retrieval: cache entry {} is keyed by a trajectory, not an embedding",
                    entry.entry_id
                ))
            }
        }
    }
    let ranking = rank_segments(&target_desc, &history, k, recent_first)
        .context("feature_retrieval: ranking history")?;
    let results: Vec<FeatResult> = ranking
        .ranked
        .iter()
        .enumerate()
        .map(|(i, &index)| FeatResult {
            rank: i + 1,
            entry_id: cache.entries()[index - 1].entry_id,
            similarity: ranking.similarities[index - 1],
        })
        .collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        for r in &results {
            println!("{} {} {:.6}", r.rank, r.entry_id, r.similarity);
        }
    }
    Ok(())
}

/// Machine output of plan-tokens; `allocation` round-trips into plan-merge.
#[derive(Serialize, Deserialize)]
struct PlanTokensOutput {
    allocation: TokenAllocation,
    uniform_total_tokens: u64,
    modeled_reduction_vs_uniform: f64,
}

fn tier_config_from_flag(config: &EngineConfig, flag: &str) -> Result<TierConfig> {
    if flag == "default" {
        return Ok(config.tier_config());
    }
    let file = EngineConfig::load(Path::new(flag))
        .with_context(|| format!("token_budget: loading tier config {flag}"))?;
    Ok(file.tier_config())
}

pub fn plan_tokens(
    config: &EngineConfig,
    target: &str,
    user: &str,
    memory: Option<&str>,
    tiers_flag: &str,
    json: bool,
) -> Result<()> {
    let target_shape = parse_shape(target)?;
    let user_shape = parse_shape(user)?;
    let memory_shapes: Vec<LatentShape> = match memory {
        Some(list) if !list.is_empty() => {
            list.split(',').map(parse_shape).collect::<Result<Vec<_>>>()?
        }
        _ => Vec::new(),
    };
    let tiers = tier_config_from_flag(config, tiers_flag)?;
    let cost = config.cost_model();
    let allocation = allocate(target_shape, user_shape, &memory_shapes, &tiers, &cost)
        .context("token_budget: allocation")?;
    let uniform = uniform_allocation(target_shape, user_shape, &memory_shapes, tiers.tiers[0], &cost);
    let reduction = memctx_core::budget::reduction_report(&uniform, &allocation, cost.blocks, cost.head_dim)
        .context("token_budget: reduction report")?;

    if json {
        let out = PlanTokensOutput {
            allocation,
            uniform_total_tokens: uniform.total_tokens,
            modeled_reduction_vs_uniform: reduction,
        };
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("{:<14} {:<14} {:<6} {:>10}", "role", "shape", "tier", "tokens");
        for v in &allocation.per_video {
            println!(
                "{:<14} {:<14} {:<6} {:>10}",
                v.role.to_string(),
                v.shape.to_string(),
                v.tokenizer.to_string(),
                v.token_count
            );
        }
        println!("total tokens: {}", allocation.total_tokens);
        println!(
            "modeled attention cost: {:.6e} MACs ({} blocks, head_dim {})",
            allocation.attention_cost, cost.blocks, cost.head_dim
        );
        println!("uniform {} baseline tokens: {}", tiers.tiers[0], uniform.total_tokens);
        println!("modeled reduction vs uniform: {:.6}", reduction);
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PlanMergeOutput {
    plan: MergePlan,
    modeled_cost_reduction: f64,
}

fn load_slabs_sorted(dir: &Path) -> Result<Vec<(String, AttentionSlab)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("responsiveness: reading slab directory {}", dir.display()))?
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("responsiveness: reading slab directory {}", dir.display()))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("slab"))
        .collect();
    paths.sort();
    let mut slabs = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = std::fs::read(&path)
            .with_context(|| format!("responsiveness: reading {}", path.display()))?;
        let slab = AttentionSlab::from_bytes(&bytes)
            .with_context(|| format!("responsiveness: parsing {}", path.display()))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        slabs.push((name, slab));
    }
    Ok(slabs)
}

#[allow(clippy::too_many_arguments)]
pub fn plan_merge(
    config: &EngineConfig,
    alloc_path: &Path,
    slabs_dir: &Path,
    policy_path: Option<&Path>,
    discard: bool,
    r_convention: Option<&str>,
    json: bool,
) -> Result<()> {
    let alloc_text = std::fs::read_to_string(alloc_path)
        .with_context(|| format!("token_budget: reading {}", alloc_path.display()))?;
    // Accept either a bare TokenAllocation or the plan-tokens --json wrapper.
    let allocation: TokenAllocation = match serde_json::from_str::<PlanTokensOutput>(&alloc_text) {
        Ok(wrapper) => wrapper.allocation,
        Err(_) => serde_json::from_str(&alloc_text)
            .with_context(|| format!("token_budget: parsing {}", alloc_path.display()))?,
    };

    let merge_section: MergeSection = match policy_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("merge_planner: reading {}", path.display()))?;
            memctx_core::config::parse_merge_section(&text)
                .with_context(|| format!("merge_planner: parsing {}", path.display()))?
        }
        None => config.merge.clone(),
    };
    let mut policy = MergePolicy {
        fraction_low: merge_section.fraction_low,
        r_base: merge_section.r_base,
        r_slope: merge_section.r_slope,
        convention: merge_section.r_convention,
    };
    if let Some(flag) = r_convention {
        policy.convention = match flag {
            "divisor" => RConvention::Divisor,
            "kept-fraction" => RConvention::KeptFraction,
            other => return Err(usage(format!("--r-convention must be divisor or kept-fraction, got `{other}`"))),
        };
    }

    let slabs = load_slabs_sorted(slabs_dir)?;
    let scores: Vec<ResponsivenessVector> = slabs.iter().map(|(_, s)| responsiveness(s)).collect();
    let mode = if discard { MergeMode::Discard } else { MergeMode::Merge };
    let merge_plan = plan(&allocation, &scores, &policy, &merge_section.block_points, mode)
        .context("merge_planner: planning")?;
    let cost = config.cost_model();
    let reduction = merge_plan
        .modeled_cost_reduction(cost.head_dim, cost.blocks)
        .context("merge_planner: cost reduction")?;

    if json {
        let out = PlanMergeOutput { plan: merge_plan, modeled_cost_reduction: reduction };
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("mode: {}", if discard { "discard" } else { "merge" });
        println!("reduction factor: {}", merge_plan.reduction);
        println!(
            "block points: {}",
            merge_plan.block_points.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" ")
        );
        println!("pre tokens: {}", merge_plan.pre_tokens);
        println!("post tokens: {}", merge_plan.post_tokens);
        println!("modeled attention-cost reduction: {:.6}", reduction);
        for (i, ((name, _), frames)) in slabs.iter().zip(&merge_plan.frames_to_merge).enumerate() {
            println!(
                "video {} ({}): frames {}",
                i + 1,
                name,
                frames.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
            );
        }
    }
    Ok(())
}

pub fn score(slab_path: &Path, json: bool) -> Result<()> {
    let bytes = std::fs::read(slab_path)
        .with_context(|| format!("responsiveness: reading {}", slab_path.display()))?;
    let slab = AttentionSlab::from_bytes(&bytes)
        .with_context(|| format!("responsiveness: parsing {}", slab_path.display()))?;
    let scores = responsiveness(&slab);
    if json {
        println!("{}", serde_json::to_string_pretty(&scores)?);
    } else {
        for (frame, value) in scores.scores().iter().enumerate() {
            println!("{frame} {value:.6}");
        }
    }
    Ok(())
}

pub fn analyze_blocks(slabs_dir: &Path, anchor: usize, k: f64, json: bool) -> Result<()> {
    let slabs = load_slabs_sorted(slabs_dir)?;
    if slabs.is_empty() {
        return Err(anyhow!("responsiveness: no .slab files in {}", slabs_dir.display()));
    }
    if anchor == 0 || anchor > slabs.len() {
        return Err(usage(format!("--anchor is 1-based and must be in 1..={}", slabs.len())));
    }
    let per_block: Vec<ResponsivenessVector> = slabs.iter().map(|(_, s)| responsiveness(s)).collect();
    let report = block_stability(&per_block, anchor - 1, k)
        .context("responsiveness: block stability")?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "Block {} vs {}-{} (bottom-k = {} of {} frames, {} compared, {} skipped)",
            anchor,
            anchor + 1,
            slabs.len(),
            report.k_frames,
            per_block[0].len(),
            report.compared,
            report.skipped
        );
        let fmt_stat = |s: Option<memctx_core::responsiveness::MeanStd>| match s {
            Some(m) => format!("{:.4} +/- {:.4}", m.mean, m.std),
            None => "undefined (all comparisons skipped)".to_string(),
        };
        println!("  pearson   {}", fmt_stat(report.pearson));
        println!("  spearman  {}", fmt_stat(report.spearman));
        println!("  bottom-k  {:.4} +/- {:.4}", report.bottom_k_overlap.mean, report.bottom_k_overlap.std);
    }
    Ok(())
}

pub fn rope(
    config: &EngineConfig,
    task: &str,
    frames: u64,
    reverse_memory: bool,
    mem_videos: u32,
    json: bool,
) -> Result<()> {
    if frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    let layout: RopeRanges = match task {
        "nvs" => {
            if reverse_memory {
                return Err(usage("--reverse-memory applies to the edit task only"));
            }
            layout_nvs_with(frames, mem_videos, config.rope.mem_layout)
        }
        "edit" => layout_edit(frames, reverse_memory),
        other => return Err(usage(format!("task must be nvs or edit, got `{other}`"))),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&layout)?);
    } else {
        for range in &layout.ranges {
            for frame in 0..layout.segment_length {
                let index = match (range.role, range.mem_index, config.rope.mem_layout) {
                    (memctx_core::rope::RopeRole::Memory, Some(video), MemLayout::Stacked) => {
                        memctx_core::rope::index_of_memory_video(&layout, video, frame)
                            .context("rope_layout: index")?
                    }
                    _ => index_of(&layout, range.role, frame).context("rope_layout: index")?,
                };
                match range.mem_index {
                    Some(video) => println!("{}[{}] {} {}", range.role, video, frame, index),
                    None => println!("{} {} {}", range.role, frame, index),
                }
            }
        }
    }
    Ok(())
}
