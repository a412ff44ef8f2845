//! Pinhole camera math: relative poses, point projection, visibility tests,
//! and uniform latitude-longitude sphere sampling.
//!
//! Conventions:
//! - Extrinsics are stored world-to-camera with the translation interpreted
//!   as the camera center in world coordinates; a world point `p` maps to
//!   camera coordinates as `x_c = R (p - t)`.
//! - Pixel bounds are half-open: a projection is inside the image iff
//!   `0 <= u < width` and `0 <= v < height`.
//! - Relativization composes raw `[R | t]` blocks as homogeneous matrices:
//!   `relative_pose(p, ref) = T_ref^-1 * T_p`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Tolerance for the rotation orthonormality check.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid pose: rotation is not orthonormal (deviation {deviation:.3e})")]
    InvalidPose { deviation: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("trajectory parse error at line {line}: {reason}")]
    TrajectoryParse { line: usize, reason: String },
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidArgument(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidArgument(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if [fx, fy, cx, cy].iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidArgument("non-finite intrinsics".into()));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Default intrinsics for a given resolution: `fx = fy = min(width, height)`,
    /// principal point at the image center.
    pub fn default_for(width: u32, height: u32) -> Result<Self, GeometryError> {
        let f = f64::from(width.min(height));
        Self::new(f, f, f64::from(width) / 2.0, f64::from(height) / 2.0, width, height)
    }
}

/// Camera extrinsics: world-to-camera rotation plus camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidArgument("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera-frame coordinates of a world point: `x_c = R (p - t)`.
    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (point - self.translation)
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidPose { deviation: f64::INFINITY });
    }
    let gram = r.transpose() * r;
    let mut deviation: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let expected = if i == j { 1.0 } else { 0.0 };
            deviation = deviation.max((gram[(i, j)] - expected).abs());
        }
    }
    deviation = deviation.max((r.determinant() - 1.0).abs());
    if deviation > ROTATION_TOL {
        return Err(GeometryError::InvalidPose { deviation });
    }
    Ok(())
}

/// One frame of a camera trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryFrame {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// An ordered, non-empty camera trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrajectory {
    frames: Vec<TrajectoryFrame>,
}

impl CameraTrajectory {
    pub fn new(frames: Vec<TrajectoryFrame>) -> Result<Self, GeometryError> {
        if frames.is_empty() {
            return Err(GeometryError::InvalidArgument("trajectory must have at least one frame".into()));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[TrajectoryFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parses the line-oriented trajectory text format.
    ///
    /// Each frame is one line of whitespace-separated values; `#` starts a
    /// comment. Full lines carry 18 fields
    /// (`fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz`);
    /// 12-field lines carry extrinsics only and require `default_intrinsics`.
    pub fn from_text(text: &str, default_intrinsics: Option<&Intrinsics>) -> Result<Self, GeometryError> {
        let mut frames = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<f64, GeometryError> {
                s.parse::<f64>().map_err(|_| GeometryError::TrajectoryParse {
                    line: lineno + 1,
                    reason: format!("invalid number `{s}`"),
                })
            };
            let (intrinsics, ext) = match fields.len() {
                18 => {
                    let fx = parse(fields[0])?;
                    let fy = parse(fields[1])?;
                    let cx = parse(fields[2])?;
                    let cy = parse(fields[3])?;
                    let width = fields[4].parse::<u32>().map_err(|_| GeometryError::TrajectoryParse {
                        line: lineno + 1,
                        reason: format!("invalid width `{}`", fields[4]),
                    })?;
                    let height = fields[5].parse::<u32>().map_err(|_| GeometryError::TrajectoryParse {
                        line: lineno + 1,
                        reason: format!("invalid height `{}`", fields[5]),
                    })?;
                    let intr = Intrinsics::new(fx, fy, cx, cy, width, height).map_err(|e| {
                        GeometryError::TrajectoryParse { line: lineno + 1, reason: e.to_string() }
                    })?;
                    (intr, &fields[6..18])
                }
                12 => {
                    let intr = default_intrinsics.ok_or_else(|| GeometryError::TrajectoryParse {
                        line: lineno + 1,
                        reason: "12-field line needs default intrinsics, none configured".into(),
                    })?;
                    (*intr, &fields[0..12])
                }
                n => {
                    return Err(GeometryError::TrajectoryParse {
                        line: lineno + 1,
                        reason: format!("expected 18 (or 12) fields, got {n}"),
                    })
                }
            };
            let mut v = [0.0f64; 12];
            for (i, s) in ext.iter().enumerate() {
                v[i] = parse(s)?;
            }
            let rotation = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
            let translation = Vector3::new(v[9], v[10], v[11]);
            let pose = Pose::new(rotation, translation).map_err(|e| GeometryError::TrajectoryParse {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
            frames.push(TrajectoryFrame { intrinsics, pose });
        }
        Self::new(frames)
    }

    /// Serializes to the trajectory text format (18 fields per line).
    /// Numbers are written in shortest round-trip form, so parse(to_text) is lossless.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for frame in &self.frames {
            let i = &frame.intrinsics;
            let r = &frame.pose.rotation;
            let t = &frame.pose.translation;
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}\n",
                i.fx, i.fy, i.cx, i.cy, i.width, i.height,
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
                t.x, t.y, t.z,
            ));
        }
        out
    }
}

/// Relative pose by homogeneous block composition: `T_ref^-1 * T`.
///
/// `R' = R_ref^T R`, `t' = R_ref^T (t - t_ref)`. `relative_pose(p, p)` is the
/// identity pose up to floating-point rounding.
pub fn relative_pose(pose: &Pose, reference: &Pose) -> Result<Pose, GeometryError> {
    check_rotation(&pose.rotation)?;
    check_rotation(&reference.rotation)?;
    let rt = reference.rotation.transpose();
    Ok(Pose {
        rotation: rt * pose.rotation,
        translation: rt * (pose.translation - reference.translation),
    })
}

/// Projects a world point to pixel coordinates; `None` when the camera-frame
/// depth is not positive.
pub fn project(point: &Vector3<f64>, intr: &Intrinsics, pose: &Pose) -> Option<(f64, f64)> {
    let xc = pose.world_to_camera(point);
    if xc.z <= 0.0 {
        return None;
    }
    let u = intr.fx * xc.x / xc.z + intr.cx;
    let v = intr.fy * xc.y / xc.z + intr.cy;
    Some((u, v))
}

/// True iff the point projects with positive depth inside the half-open
/// pixel bounds `[0, width) x [0, height)`.
pub fn in_fov(point: &Vector3<f64>, intr: &Intrinsics, pose: &Pose) -> bool {
    match project(point, intr, pose) {
        Some((u, v)) => {
            u >= 0.0 && u < f64::from(intr.width) && v >= 0.0 && v < f64::from(intr.height)
        }
        None => false,
    }
}

/// Identity of a sphere grid; set algebra is only defined between FOV sets
/// built on the same grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridId {
    n_theta: u32,
    n_phi: u32,
    radius_bits: u64,
}

impl std::fmt::Display for GridId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}@r{}", self.n_theta, self.n_phi, f64::from_bits(self.radius_bits))
    }
}

/// Uniform latitude-longitude sample grid on a sphere centered at the origin.
///
/// Point order is deterministic row-major: `index(u, v) = u * n_phi + v`,
/// with latitude midpoints `theta_u = pi (u + 0.5) / n_theta` (no degenerate
/// poles) and longitudes `phi_v = 2 pi v / n_phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    n_theta: u32,
    n_phi: u32,
    radius: f64,
    points: Vec<Vector3<f64>>,
}

impl SphereGrid {
    pub fn sample(n_theta: u32, n_phi: u32, radius: f64) -> Result<Self, GeometryError> {
        if n_theta == 0 || n_phi == 0 {
            return Err(GeometryError::InvalidArgument(format!(
                "grid counts must be at least 1, got {n_theta}x{n_phi}"
            )));
        }
        if radius <= 0.0 || !radius.is_finite() {
            return Err(GeometryError::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        let m = (n_theta as usize)
            .checked_mul(n_phi as usize)
            .filter(|&m| m <= 100_000_000)
            .ok_or_else(|| GeometryError::InvalidArgument("grid too large".into()))?;
        let mut points = Vec::with_capacity(m);
        for u in 0..n_theta {
            let theta = std::f64::consts::PI * (f64::from(u) + 0.5) / f64::from(n_theta);
            let (sin_t, cos_t) = theta.sin_cos();
            for v in 0..n_phi {
                let phi = 2.0 * std::f64::consts::PI * f64::from(v) / f64::from(n_phi);
                let (sin_p, cos_p) = phi.sin_cos();
                points.push(Vector3::new(radius * sin_t * cos_p, radius * sin_t * sin_p, radius * cos_t));
            }
        }
        Ok(Self { n_theta, n_phi, radius, points })
    }

    pub fn id(&self) -> GridId {
        GridId { n_theta: self.n_theta, n_phi: self.n_phi, radius_bits: self.radius.to_bits() }
    }

    pub fn n_theta(&self) -> u32 {
        self.n_theta
    }

    pub fn n_phi(&self) -> u32 {
        self.n_phi
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn index(&self, u: u32, v: u32) -> usize {
        u as usize * self.n_phi as usize + v as usize
    }
}

/// Flattens per-frame extrinsics to an F x 12 matrix: row t is the row-major
/// flattening of the 3x4 block `[R_t | t_t]`.
pub fn flatten_extrinsics(traj: &CameraTrajectory) -> Vec<[f64; 12]> {
    traj.frames()
        .iter()
        .map(|frame| {
            let r = &frame.pose.rotation;
            let t = &frame.pose.translation;
            [
                r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
                r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
                r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            ]
        })
        .collect()
}

/// Inverse of [`flatten_extrinsics`]; exact bit-for-bit round-trip.
pub fn unflatten_extrinsics(rows: &[[f64; 12]]) -> Result<Vec<Pose>, GeometryError> {
    rows.iter()
        .map(|v| {
            let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
            let translation = Vector3::new(v[3], v[7], v[11]);
            Pose::new(rotation, translation)
        })
        .collect()
}
