//! Independent oracles for the acceptance suite.
//!
//! Everything here recomputes results through a different route than the
//! library: plain scalar arrays instead of nalgebra, homogeneous 4x4
//! composition with a general Gauss-Jordan inverse instead of the transpose
//! shortcut, hash sets instead of bitsets, naive softmax instead of the
//! max-shifted one.

#![allow(dead_code, clippy::needless_range_loop)]
use memctx_core::camera::{CameraTrajectory, Intrinsics, Pose, SphereGrid, TrajectoryFrame};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

pub type Mat4 = [[f64; 4]; 4];

pub fn pose_to_homogeneous(pose: &Pose) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = pose.rotation[(i, j)];
        }
        m[i][3] = pose.translation[i];
    }
    m[3][3] = 1.0;
    m
}

/// General 4x4 inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert4(m: &Mat4) -> Mat4 {
    let mut a = *m;
    let mut inv: Mat4 = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let mut pivot = col;
        for row in col + 1..4 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let scale = a[col][col];
        for j in 0..4 {
            a[col][j] /= scale;
            inv[col][j] /= scale;
        }
        for row in 0..4 {
            if row != col {
                let factor = a[row][col];
                for j in 0..4 {
                    a[row][j] -= factor * a[col][j];
                    inv[row][j] -= factor * inv[col][j];
                }
            }
        }
    }
    inv
}

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

/// Relativizes a frame against a reference by composing T_ref^-1 * T with
/// full homogeneous matrices.
pub fn oracle_relativize(pose: &Pose, reference: &Pose) -> Mat4 {
    mat4_mul(&invert4(&pose_to_homogeneous(reference)), &pose_to_homogeneous(pose))
}

/// Visibility of a world point through a relativized camera, computed via an
/// explicit 3x4 projection matrix P = K [R | -R t].
pub fn oracle_visible(point: &Vector3<f64>, intr: &Intrinsics, rel: &Mat4) -> bool {
    let k = [
        [intr.fx, 0.0, intr.cx],
        [0.0, intr.fy, intr.cy],
        [0.0, 0.0, 1.0],
    ];
    // rel holds [R | t] blocks with t the camera center: column 4 of P is
    // K * (-R t).
    let t = [rel[0][3], rel[1][3], rel[2][3]];
    let mut minus_rt = [0.0f64; 3];
    for i in 0..3 {
        for (j, tj) in t.iter().enumerate() {
            minus_rt[i] -= rel[i][j] * tj;
        }
    }
    let mut p = [[0.0f64; 4]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                p[i][j] += k[i][l] * rel[l][j];
            }
            p[i][3] += k[i][j] * minus_rt[j];
        }
    }
    let hom = [point.x, point.y, point.z, 1.0];
    let mut proj = [0.0f64; 3];
    for (i, row) in p.iter().enumerate() {
        for (j, h) in hom.iter().enumerate() {
            proj[i] += row[j] * h;
        }
    }
    if proj[2] <= 0.0 {
        return false;
    }
    let u = proj[0] / proj[2];
    let v = proj[1] / proj[2];
    u >= 0.0 && u < f64::from(intr.width) && v >= 0.0 && v < f64::from(intr.height)
}

/// Brute-force video FOV: a set of visible sample indices.
pub fn oracle_video_fov(traj: &CameraTrajectory, grid: &SphereGrid) -> BTreeSet<usize> {
    let reference = traj.frames()[0].pose;
    let mut visible = BTreeSet::new();
    for frame in traj.frames() {
        let rel = oracle_relativize(&frame.pose, &reference);
        for (m, point) in grid.points().iter().enumerate() {
            if oracle_visible(point, &frame.intrinsics, &rel) {
                visible.insert(m);
            }
        }
    }
    visible
}

pub struct OracleScores {
    pub overlap: f64,
    pub contain: f64,
    pub weighted: f64,
}

pub fn oracle_scores(target: &BTreeSet<usize>, candidate: &BTreeSet<usize>, lambda: f64) -> OracleScores {
    let inter = target.intersection(candidate).count() as f64;
    let union = target.union(candidate).count() as f64;
    let overlap = inter / union;
    let contain = inter / target.len() as f64;
    OracleScores { overlap, contain, weighted: lambda * overlap + (1.0 - lambda) * contain }
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    nalgebra::Rotation3::from_euler_angles(
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.random_range(-1.2..1.2),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .into_inner()
}

pub fn random_trajectory(rng: &mut ChaCha8Rng, max_frames: usize) -> CameraTrajectory {
    let size = [96u32, 128, 192][rng.random_range(0..3)];
    let f = f64::from(size) * rng.random_range(0.4..1.2);
    let intr = Intrinsics::new(
        f,
        f * rng.random_range(0.9..1.1),
        f64::from(size) / 2.0,
        f64::from(size) / 2.0,
        size,
        size,
    )
    .unwrap();
    let n = rng.random_range(1..=max_frames);
    let frames = (0..n)
        .map(|_| TrajectoryFrame {
            intrinsics: intr,
            pose: Pose::new(
                random_rotation(rng),
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
            )
            .unwrap(),
        })
        .collect();
    CameraTrajectory::new(frames).unwrap()
}
