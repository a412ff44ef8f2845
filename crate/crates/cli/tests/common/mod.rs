//! Shared fixtures for the CLI tests.
//!
//! Trajectory fixtures use exact decimal rotations (Pythagorean-style
//! cos/sin pairs) so the files, and everything derived from them, are
//! bit-identical on every platform; no transcendental function is involved.
//! The slab writer here is an independent encoder of the documented binary
//! format, not a reuse of the library serializer.

#![allow(dead_code)]
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn memctx() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_memctx"));
    cmd.env_remove("MEMCTX_CONFIG");
    cmd
}

pub fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("spawn memctx");
    assert!(
        output.status.success(),
        "command failed: {:?}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).expect("stdout is utf-8")
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn memctx")
}

const INTR: &str = "96 96 64 64 128 128";

fn roty_row(c: &str, s: &str) -> String {
    let neg = if let Some(stripped) = s.strip_prefix('-') { stripped.to_string() } else { format!("-{s}") };
    format!("{c} 0 {s} 0 1 0 {neg} 0 {c}")
}

fn rotx_row(c: &str, s: &str) -> String {
    let neg = if let Some(stripped) = s.strip_prefix('-') { stripped.to_string() } else { format!("-{s}") };
    format!("1 0 0 0 {c} {neg} 0 {s} {c}")
}

/// Target: a rightward yaw arc with slight forward drift.
pub fn target_trajectory() -> String {
    format!(
        "# target: rightward yaw arc\n{INTR} 1 0 0 0 1 0 0 0 1 0 0 0\n{INTR} {} 0.25 0 0\n{INTR} {} 0.5 0 0\n",
        roty_row("0.96", "0.28"),
        roty_row("0.6", "0.8"),
    )
}

/// Four cache candidates: same-orbit, adjacent-pan (shorter arc),
/// opposite-facing turn, and an upward tilt.
pub fn cache_trajectories() -> Vec<String> {
    vec![
        format!(
            "{INTR} 1 0 0 0 1 0 0 0 1 0 0 0\n{INTR} {} 0.2 0 0\n{INTR} {} 0.45 0 0\n",
            roty_row("0.96", "0.28"),
            roty_row("0.6", "0.8"),
        ),
        format!(
            "{INTR} 1 0 0 0 1 0 0 0 1 0 0 0\n{INTR} {} 0.25 0 0\n",
            roty_row("0.96", "0.28"),
        ),
        format!(
            "{INTR} 1 0 0 0 1 0 0 0 1 0 0 0\n{INTR} {} 0 0 0\n{INTR} {} 0 0 0\n",
            roty_row("-0.6", "0.8"),
            roty_row("-0.96", "0.28"),
        ),
        format!(
            "{INTR} 1 0 0 0 1 0 0 0 1 0 0 0\n{INTR} {} 0 0 0\n{INTR} {} 0 0 0\n",
            rotx_row("0.8", "0.6"),
            rotx_row("0.28", "0.96"),
        ),
    ]
}

/// Independent slab encoder (little-endian, per the documented layout).
pub fn write_slab_file(
    path: &Path,
    n_frames: u32,
    tokens_per_frame: u32,
    dim: u32,
    n_target: u32,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_frames * tokens_per_frame;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&0x534C_4142u32.to_le_bytes());
    bytes.extend_from_slice(&n.to_le_bytes());
    bytes.extend_from_slice(&dim.to_le_bytes());
    bytes.extend_from_slice(&n_frames.to_le_bytes());
    bytes.extend_from_slice(&n_target.to_le_bytes());
    for token in 0..n {
        bytes.extend_from_slice(&(token / tokens_per_frame).to_le_bytes());
    }
    for target in 0..n_target {
        bytes.extend_from_slice(&target.to_le_bytes());
    }
    for _ in 0..2 * n * dim {
        bytes.extend_from_slice(&rng.random_range(-1.0f32..1.0).to_le_bytes());
    }
    std::fs::write(path, bytes).expect("write slab fixture");
}

/// Builds the 4-entry novel-view cache plus target file, slab directory,
/// and working paths for the pipeline.
pub struct Pipeline {
    pub dir: tempfile::TempDir,
    pub cache: PathBuf,
    pub target: PathBuf,
    pub slabs: PathBuf,
}

pub fn build_pipeline_fixture() -> Pipeline {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let cache = root.join("cache");
    let target = root.join("target.traj");
    std::fs::write(&target, target_trajectory()).unwrap();
    for (i, text) in cache_trajectories().iter().enumerate() {
        let path = root.join(format!("entry{i}.traj"));
        std::fs::write(&path, text).unwrap();
        run_ok(memctx().args([
            "cache",
            "add",
            "--cache",
            cache.to_str().unwrap(),
            "--task",
            "novel_view",
            "--shape",
            "21x60x104x16",
            "--traj",
            path.to_str().unwrap(),
        ]));
    }
    // One slab per conditioning video (user + ranks 1..4); F=21 tokenized
    // frames each, filename order is allocation order.
    let slabs = root.join("slabs");
    std::fs::create_dir_all(&slabs).unwrap();
    for i in 0..5u64 {
        write_slab_file(&slabs.join(format!("{i:02}.slab")), 21, 4, 8, 3, 7000 + i);
    }
    Pipeline { dir, cache, target, slabs }
}
