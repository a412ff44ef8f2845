//! Exit codes, error surfaces, JSON round-trips, and config resolution.

mod common;

use common::{build_pipeline_fixture, memctx, run, run_ok, write_slab_file};
use memctx_core::budget::TokenAllocation;
use memctx_core::merge::MergePlan;
use memctx_core::responsiveness::ResponsivenessVector;
use memctx_core::rope::RopeRanges;

#[test]
fn version_prints_and_exits_zero() {
    let out = run_ok(memctx().arg("version"));
    assert_eq!(out.trim(), format!("memctx {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = run(memctx().args(["retrieve-fov", "--cache", "/nonexistent", "--k", "2"]));
    assert_eq!(out.status.code(), Some(2), "clap should reject missing --target with exit 2");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = run(memctx().arg("frobnicate"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one_with_module_context() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("t.traj");
    std::fs::write(&target, "96 96 64 64 128 128 1 0 0 0 1 0 0 0 1 0 0 0\n").unwrap();
    let out = run(memctx().args([
        "retrieve-fov",
        "--cache",
        dir.path().join("no_cache").to_str().unwrap(),
        "--target",
        target.to_str().unwrap(),
        "--k",
        "2",
    ]));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("memory_cache"), "error must name the module: {stderr}");
    assert_eq!(stderr.lines().count(), 1, "one-line error expected: {stderr}");
}

#[test]
fn bad_shape_is_usage_error() {
    let out = run(memctx().args(["plan-tokens", "--target", "21x60", "--user", "21x60x104x16"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reverse_memory_rejected_for_nvs() {
    let out = run(memctx().args(["rope", "--task", "nvs", "--frames", "4", "--reverse-memory"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_slab_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let slab = dir.path().join("bad.slab");
    std::fs::write(&slab, b"not a slab").unwrap();
    let out = run(memctx().args(["score", "--slab", slab.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("responsiveness"));
}

#[test]
fn json_outputs_roundtrip_through_loaders() {
    let fixture = build_pipeline_fixture();

    let rope_json = run_ok(memctx().args(["rope", "--task", "edit", "--frames", "81", "--reverse-memory", "--json"]));
    let layout: RopeRanges = serde_json::from_str(&rope_json).expect("rope --json parses as RopeRanges");
    assert_eq!(layout.segment_length, 81);
    assert!(layout.reversed_memory);

    let alloc_json = run_ok(memctx().args([
        "plan-tokens",
        "--target",
        "20x64x64x16",
        "--user",
        "20x64x64x16",
        "--memory",
        "20x64x64x16,20x64x64x16",
        "--json",
    ]));
    let value: serde_json::Value = serde_json::from_str(&alloc_json).unwrap();
    let allocation: TokenAllocation =
        serde_json::from_value(value["allocation"].clone()).expect("allocation parses");
    assert_eq!(allocation.per_video.len(), 4);
    assert_eq!(allocation.total_tokens, 2 * 20 * 32 * 32 + 2 * 20 * 16 * 16);

    // plan-merge accepts the wrapper file directly and emits a MergePlan.
    let alloc_path = fixture.dir.path().join("alloc.json");
    std::fs::write(&alloc_path, &alloc_json).unwrap();
    let slabs = fixture.dir.path().join("rt_slabs");
    std::fs::create_dir_all(&slabs).unwrap();
    for i in 0..3u64 {
        write_slab_file(&slabs.join(format!("{i}.slab")), 20, 2, 4, 1, 9000 + i);
    }
    let merge_json = run_ok(memctx().args([
        "plan-merge",
        "--alloc",
        alloc_path.to_str().unwrap(),
        "--slabs",
        slabs.to_str().unwrap(),
        "--json",
    ]));
    let value: serde_json::Value = serde_json::from_str(&merge_json).unwrap();
    let plan: MergePlan = serde_json::from_value(value["plan"].clone()).expect("plan parses");
    assert_eq!(plan.frames_to_merge.len(), 3);
    assert!(plan.post_tokens < plan.pre_tokens);

    let slab_path = slabs.join("0.slab");
    let score_json = run_ok(memctx().args(["score", "--slab", slab_path.to_str().unwrap(), "--json"]));
    let scores: ResponsivenessVector = serde_json::from_str(&score_json).expect("score --json parses");
    assert_eq!(scores.len(), 20);
}

#[test]
fn plan_merge_policy_discard_and_convention_flags() {
    let dir = tempfile::tempdir().unwrap();
    let alloc_json = run_ok(memctx().args([
        "plan-tokens",
        "--target",
        "20x64x64x16",
        "--user",
        "20x64x64x16",
        "--memory",
        "20x64x64x16,20x64x64x16,20x64x64x16,20x64x64x16",
        "--json",
    ]));
    let alloc_path = dir.path().join("alloc.json");
    std::fs::write(&alloc_path, &alloc_json).unwrap();
    let slabs = dir.path().join("slabs");
    std::fs::create_dir_all(&slabs).unwrap();
    for i in 0..5u64 {
        write_slab_file(&slabs.join(format!("{i}.slab")), 20, 2, 4, 1, 200 + i);
    }
    let alloc = alloc_path.to_str().unwrap();
    let slabs = slabs.to_str().unwrap();

    let merge = run_ok(memctx().args(["plan-merge", "--alloc", alloc, "--slabs", slabs]));
    assert!(merge.contains("mode: merge"));
    assert!(merge.contains("reduction factor: 2.25"), "{merge}");

    let discard = run_ok(memctx().args(["plan-merge", "--alloc", alloc, "--slabs", slabs, "--discard"]));
    assert!(discard.contains("mode: discard"));
    let post = |s: &str| -> u64 {
        s.lines()
            .find_map(|l| l.strip_prefix("post tokens: "))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(post(&discard) < post(&merge), "discard must drop more tokens than merge");

    // A kept-fraction policy of 0.5 is a divisor of 2.
    let policy_path = dir.path().join("policy.toml");
    std::fs::write(&policy_path, "fraction_low = 0.5\nr_base = 0.5\nr_slope = 0.0\n").unwrap();
    let kept = run_ok(memctx().args([
        "plan-merge",
        "--alloc",
        alloc,
        "--slabs",
        slabs,
        "--policy",
        policy_path.to_str().unwrap(),
        "--r-convention",
        "kept-fraction",
    ]));
    assert!(kept.contains("reduction factor: 2"), "{kept}");

    let bad = run(memctx().args([
        "plan-merge",
        "--alloc",
        alloc,
        "--slabs",
        slabs,
        "--r-convention",
        "sideways",
    ]));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn plan_tokens_accepts_tier_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let tiers_path = dir.path().join("tiers.toml");
    std::fs::write(
        &tiers_path,
        "[tokenizer]\ntiers = [\"1x1x1\", \"1x2x2\", \"1x4x4\"]\nfine_top_k = 1\n",
    )
    .unwrap();
    let out = run_ok(memctx().args([
        "plan-tokens",
        "--target",
        "20x64x64x16",
        "--user",
        "20x64x64x16",
        "--memory",
        "20x64x64x16,20x64x64x16",
        "--tiers",
        tiers_path.to_str().unwrap(),
    ]));
    assert!(out.contains("1x1x1"), "{out}");
    assert!(out.contains("memory_rank_2  20x64x64x16    1x4x4"), "{out}");
}

#[test]
fn retrieve_feat_orders_by_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");

    // Embeddings with known cosines against the target (1, 0):
    // entry 1 -> 1.0, entry 2 -> 0.0, entry 3 -> 0.6 (3-4-5 triangle).
    let write_emb = |name: &str, frames: &[[f32; 2]]| {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x4D43_5458u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(frames.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for f in frames {
            bytes.extend_from_slice(&f[0].to_le_bytes());
            bytes.extend_from_slice(&f[1].to_le_bytes());
        }
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    };
    let e1 = write_emb("e1.emb", &[[2.0, 0.0]]);
    let e2 = write_emb("e2.emb", &[[0.0, 1.0]]);
    let e3 = write_emb("e3.emb", &[[3.0, 4.0]]);
    let target = write_emb("target.emb", &[[1.0, 0.0]]);

    for path in [&e1, &e2, &e3] {
        run_ok(memctx().args([
            "cache",
            "add",
            "--cache",
            cache.to_str().unwrap(),
            "--task",
            "text_edit",
            "--shape",
            "21x60x104x16",
            "--emb",
            path.to_str().unwrap(),
        ]));
    }

    let out = run_ok(memctx().args([
        "retrieve-feat",
        "--cache",
        cache.to_str().unwrap(),
        "--target",
        target.to_str().unwrap(),
        "--k",
        "3",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines, vec!["1 1 1.000000", "2 3 0.600000", "3 2 0.000000"]);

    // recent-first pins the newest entry (3) at rank 1.
    let out = run_ok(memctx().args([
        "retrieve-feat",
        "--cache",
        cache.to_str().unwrap(),
        "--target",
        target.to_str().unwrap(),
        "--k",
        "3",
        "--recent-first",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines, vec!["1 3 0.600000", "2 1 1.000000", "3 2 0.000000"]);
}

#[test]
fn config_file_and_env_var_are_honored() {
    let fixture = build_pipeline_fixture();
    let config_path = fixture.dir.path().join("memctx.toml");
    std::fs::write(&config_path, "lambda = 1.0\n[grid]\nn_theta = 36\nn_phi = 72\n").unwrap();

    let base = run_ok(memctx().args([
        "retrieve-fov",
        "--cache",
        fixture.cache.to_str().unwrap(),
        "--target",
        fixture.target.to_str().unwrap(),
        "--k",
        "4",
        "--grid",
        "36x72",
    ]));
    // lambda = 1.0 makes weighted equal overlap on every row; the config
    // also supplies the 36x72 grid the flag provided above.
    let with_config = run_ok(memctx().args([
        "--config",
        config_path.to_str().unwrap(),
        "retrieve-fov",
        "--cache",
        fixture.cache.to_str().unwrap(),
        "--target",
        fixture.target.to_str().unwrap(),
        "--k",
        "4",
    ]));
    for line in with_config.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields[2], fields[3], "lambda = 1.0 must make weighted == overlap: {line}");
    }
    assert_ne!(base, with_config);

    let via_env = run_ok(
        memctx()
            .env("MEMCTX_CONFIG", &config_path)
            .args([
                "retrieve-fov",
                "--cache",
                fixture.cache.to_str().unwrap(),
                "--target",
                fixture.target.to_str().unwrap(),
                "--k",
                "4",
            ]),
    );
    assert_eq!(via_env, with_config);

    let bad_config = fixture.dir.path().join("bad.toml");
    std::fs::write(&bad_config, "not_a_key = 1\n").unwrap();
    let out = run(memctx().args(["--config", bad_config.to_str().unwrap(), "version"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn cache_gc_reports_orphans() {
    let fixture = build_pipeline_fixture();
    std::fs::write(fixture.cache.join("keys/99.traj"), "junk").unwrap();
    let out = run_ok(memctx().args(["cache", "gc", "--cache", fixture.cache.to_str().unwrap()]));
    assert!(out.contains("99.traj"));
    assert!(out.trim_end().ends_with("1 orphaned files removed"));
    let again = run_ok(memctx().args(["cache", "gc", "--cache", fixture.cache.to_str().unwrap()]));
    assert!(again.trim_end().ends_with("0 orphaned files removed"));
}

#[test]
fn analyze_blocks_prints_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let blocks = dir.path().join("blocks");
    std::fs::create_dir_all(&blocks).unwrap();
    for b in 0..30u64 {
        write_slab_file(&blocks.join(format!("{b:02}.slab")), 16, 3, 8, 2, 500 + b);
    }
    let out = run_ok(memctx().args([
        "analyze-blocks",
        "--slabs",
        blocks.to_str().unwrap(),
        "--anchor",
        "11",
        "--k",
        "0.5",
    ]));
    assert!(out.starts_with("Block 11 vs 12-30"), "{out}");
    assert!(out.contains("pearson"));
    assert!(out.contains("spearman"));
    assert!(out.contains("bottom-k"));

    let json = run_ok(memctx().args([
        "analyze-blocks",
        "--slabs",
        blocks.to_str().unwrap(),
        "--anchor",
        "11",
        "--k",
        "0.5",
        "--json",
    ]));
    let report: memctx_core::responsiveness::BlockStabilityReport =
        serde_json::from_str(&json).expect("analyze-blocks --json parses");
    assert_eq!(report.anchor, 10, "report anchor is 0-based");
    assert_eq!(report.compared, 19);

    let bad_anchor = run(memctx().args([
        "analyze-blocks",
        "--slabs",
        blocks.to_str().unwrap(),
        "--anchor",
        "31",
        "--k",
        "0.5",
    ]));
    assert_eq!(bad_anchor.status.code(), Some(2));
}
