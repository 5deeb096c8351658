//! Skeleton and motion data model, rotation helpers, finite-difference
//! kinematics and the JSON file formats.
//!
//! Conventions: meters and seconds, +Z up, ground plane at `z = 0`.
//! Quaternions are stored `(w, x, y, z)`.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{FidelityError, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `|q| - 1` for stored orientations.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Orientations read from disk within this distance of unit norm are re-normalized.
pub const LOAD_RENORMALIZE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Inverse of [`Quat::rotation_vector`].
    pub fn from_rotation_vector(v: Vec3) -> Self {
        Quat::from_axis_angle(v, v.norm())
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn mul(&self, o: &Quat) -> Self {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Axis-angle vector of the rotation, taking the short way round
    /// (angle in `[0, π]`).
    pub fn rotation_vector(&self) -> Vec3 {
        let q = if self.w < 0.0 {
            Quat::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        };
        let v = q.vector();
        let s = v.norm();
        if s < 1e-300 {
            return Vec3::zeros();
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let p = Quat::new(0.0, v.x, v.y, v.z);
        self.mul(&p).mul(&self.conjugate()).vector()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

/// Geodesic angle between two unit rotations, in `[0, π]`.
///
/// `q` and `-q` describe the same rotation and give the same result.
pub fn quat_geodesic_distance(a: &Quat, b: &Quat) -> Result<f64> {
    for q in [a, b] {
        if !q.is_unit(UNIT_NORM_TOL) {
            return Err(FidelityError::Invariant(format!(
                "quaternion {:?} is not unit norm (|q| = {})",
                q.to_array(),
                q.norm()
            )));
        }
    }
    Ok(geodesic_unchecked(a, b))
}

pub(crate) fn geodesic_unchecked(a: &Quat, b: &Quat) -> f64 {
    if a == b {
        return 0.0;
    }
    let rel = a.conjugate().mul(b);
    2.0 * rel.vector().norm().atan2(rel.w.abs())
}

/// Joint hierarchy shared by every motion of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub parent_index: Vec<i64>,
    pub root_index: usize,
    pub foot_indices: Vec<usize>,
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        parent_index: Vec<i64>,
        root_index: usize,
        foot_indices: Vec<usize>,
    ) -> Result<Self> {
        let s = Skeleton { joint_names, parent_index, root_index, foot_indices };
        s.validate()?;
        Ok(s)
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joint_names.len();
        if n == 0 {
            return Err(FidelityError::Invariant("skeleton has no joints".into()));
        }
        if self.parent_index.len() != n {
            return Err(FidelityError::Invariant(format!(
                "parent_index has {} entries for {} joints",
                self.parent_index.len(),
                n
            )));
        }
        if self.root_index >= n {
            return Err(FidelityError::Invariant(format!(
                "root_index {} out of range",
                self.root_index
            )));
        }
        for (j, &p) in self.parent_index.iter().enumerate() {
            let is_root = j == self.root_index;
            if is_root != (p == -1) {
                return Err(FidelityError::Invariant(format!(
                    "joint {j} has parent {p}; exactly the root must have parent -1"
                )));
            }
            if p < -1 || p >= n as i64 {
                return Err(FidelityError::Invariant(format!("joint {j} has invalid parent {p}")));
            }
        }
        // every joint must reach the root within n steps
        for start in 0..n {
            let mut j = start;
            let mut steps = 0;
            while j != self.root_index {
                j = self.parent_index[j] as usize;
                steps += 1;
                if steps > n {
                    return Err(FidelityError::Invariant(format!(
                        "parent graph has a cycle through joint {start}"
                    )));
                }
            }
        }
        if self.foot_indices.is_empty() {
            return Err(FidelityError::Invariant("skeleton has no foot joints".into()));
        }
        if let Some(&f) = self.foot_indices.iter().find(|&&f| f >= n) {
            return Err(FidelityError::Invariant(format!("foot index {f} out of range")));
        }
        Ok(())
    }

    /// Foot joints split into (left, right) halves of `foot_indices`.
    pub fn left_right_feet(&self) -> Result<(&[usize], &[usize])> {
        if self.foot_indices.len() < 2 {
            return Err(FidelityError::FootConfig(format!(
                "need at least 2 foot joints, skeleton has {}",
                self.foot_indices.len()
            )));
        }
        let half = self.foot_indices.len() / 2;
        Ok(self.foot_indices.split_at(half))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePose {
    pub positions: Vec<Vec3>,
    pub orientations: Vec<Quat>,
}

/// A validated, immutable motion clip.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: f64,
    skeleton_id: String,
    frames: Vec<FramePose>,
}

impl MotionSequence {
    pub fn new(fps: f64, skeleton_id: impl Into<String>, frames: Vec<FramePose>) -> Result<Self> {
        let m = MotionSequence { fps, skeleton_id: skeleton_id.into(), frames };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(FidelityError::Invariant(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.len() < 2 {
            return Err(FidelityError::Invariant(format!(
                "motion needs at least 2 frames, got {}",
                self.frames.len()
            )));
        }
        let joints = self.frames[0].positions.len();
        if joints == 0 {
            return Err(FidelityError::Invariant("frames have no joints".into()));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.positions.len() != joints || f.orientations.len() != joints {
                return Err(FidelityError::Invariant(format!(
                    "frame {t} has {} positions and {} orientations, expected {joints}",
                    f.positions.len(),
                    f.orientations.len()
                )));
            }
            if f.positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(FidelityError::Invariant(format!("frame {t} has a non-finite position")));
            }
            if let Some(q) = f.orientations.iter().find(|q| !q.is_unit(UNIT_NORM_TOL)) {
                return Err(FidelityError::Invariant(format!(
                    "frame {t} has a non-unit quaternion (|q| = {})",
                    q.norm()
                )));
            }
        }
        Ok(())
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn skeleton_id(&self) -> &str {
        &self.skeleton_id
    }

    pub fn frames(&self) -> &[FramePose] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].positions.len()
    }

    pub fn position(&self, t: usize, j: usize) -> Vec3 {
        self.frames[t].positions[j]
    }

    /// Copy of the same clip with every position replaced by `f(t, j, p)`.
    pub fn map_positions(&self, mut f: impl FnMut(usize, usize, Vec3) -> Vec3) -> Result<Self> {
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(t, fr)| FramePose {
                positions: fr.positions.iter().enumerate().map(|(j, &p)| f(t, j, p)).collect(),
                orientations: fr.orientations.clone(),
            })
            .collect();
        MotionSequence::new(self.fps, self.skeleton_id.clone(), frames)
    }

    pub fn with_positions(&self, positions: Vec<Vec<Vec3>>) -> Result<Self> {
        if positions.len() != self.frames.len() {
            return Err(FidelityError::Shape(format!(
                "{} position frames for a {}-frame motion",
                positions.len(),
                self.frames.len()
            )));
        }
        let frames = positions
            .into_iter()
            .zip(&self.frames)
            .map(|(p, fr)| FramePose { positions: p, orientations: fr.orientations.clone() })
            .collect();
        MotionSequence::new(self.fps, self.skeleton_id.clone(), frames)
    }

    pub fn positions_by_frame(&self) -> Vec<Vec<Vec3>> {
        self.frames.iter().map(|f| f.positions.clone()).collect()
    }

    /// Same clip played backwards.
    pub fn reversed(&self) -> Self {
        let mut frames = self.frames.clone();
        frames.reverse();
        MotionSequence { fps: self.fps, skeleton_id: self.skeleton_id.clone(), frames }
    }

    pub fn check_joint_count(&self, skeleton: &Skeleton) -> Result<()> {
        if self.joint_count() != skeleton.joint_count() {
            return Err(FidelityError::Shape(format!(
                "motion has {} joints, skeleton `{}` has {}",
                self.joint_count(),
                self.skeleton_id,
                skeleton.joint_count()
            )));
        }
        Ok(())
    }
}

/// Checks that two motions can be compared frame by frame.
pub fn ensure_same_shape(a: &MotionSequence, b: &MotionSequence) -> Result<()> {
    if a.frame_count() != b.frame_count() || a.joint_count() != b.joint_count() {
        return Err(FidelityError::Shape(format!(
            "{}x{} vs {}x{} (frames x joints)",
            a.frame_count(),
            a.joint_count(),
            b.frame_count(),
            b.joint_count()
        )));
    }
    Ok(())
}

/// Per-frame, per-joint finite-difference kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTrack {
    pub linear_velocity: Vec<Vec<Vec3>>,
    pub angular_velocity: Vec<Vec<Vec3>>,
    pub linear_acceleration: Vec<Vec<Vec3>>,
}

/// Central differences on interior frames, one-sided at the two ends.
///
/// Angular velocity is the rotation vector of the relative rotation divided
/// by the elapsed time, which is exact for constant-rate rotations.
pub fn compute_derivatives(motion: &MotionSequence) -> Result<DerivativeTrack> {
    let n = motion.frame_count();
    if n < 2 {
        return Err(FidelityError::Invariant("derivatives need at least 2 frames".into()));
    }
    let fps = motion.fps();
    let joints = motion.joint_count();
    let frames = motion.frames();

    let mut lin = Vec::with_capacity(n);
    let mut ang = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    for t in 0..n {
        let (lo, hi, span) = if t == 0 {
            (0, 1, 1.0)
        } else if t == n - 1 {
            (n - 2, n - 1, 1.0)
        } else {
            (t - 1, t + 1, 2.0)
        };
        let scale = fps / span;
        let mut v_row = Vec::with_capacity(joints);
        let mut w_row = Vec::with_capacity(joints);
        let mut a_row = Vec::with_capacity(joints);
        for j in 0..joints {
            v_row.push((frames[hi].positions[j] - frames[lo].positions[j]) * scale);
            let rel = frames[hi].orientations[j].mul(&frames[lo].orientations[j].conjugate());
            w_row.push(rel.rotation_vector() * scale);
            let a = if n < 3 {
                Vec3::zeros()
            } else {
                let c = t.clamp(1, n - 2);
                (frames[c + 1].positions[j] - frames[c].positions[j] * 2.0 + frames[c - 1].positions[j])
                    * (fps * fps)
            };
            a_row.push(a);
        }
        lin.push(v_row);
        ang.push(w_row);
        acc.push(a_row);
    }
    Ok(DerivativeTrack { linear_velocity: lin, angular_velocity: ang, linear_acceleration: acc })
}

#[derive(Serialize, Deserialize)]
struct FrameFile {
    positions: Vec<[f64; 3]>,
    rotations: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    fps: f64,
    skeleton_id: String,
    frames: Vec<FrameFile>,
}

fn classify_json(path: &Path, err: serde_json::Error) -> FidelityError {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => FidelityError::Schema { path: path.to_path_buf(), message: err.to_string() },
        Category::Io => FidelityError::io(path, std::io::Error::other(err.to_string())),
        Category::Syntax | Category::Eof => {
            FidelityError::Parse { path: path.to_path_buf(), message: err.to_string() }
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| FidelityError::io(path, e))
}

pub fn motion_from_json(bytes: &[u8], path: &Path) -> Result<MotionSequence> {
    let raw: MotionFile = serde_json::from_slice(bytes).map_err(|e| classify_json(path, e))?;
    let mut frames = Vec::with_capacity(raw.frames.len());
    for (t, f) in raw.frames.into_iter().enumerate() {
        let mut orientations = Vec::with_capacity(f.rotations.len());
        for r in f.rotations {
            let q = Quat::new(r[0], r[1], r[2], r[3]);
            if !q.is_unit(LOAD_RENORMALIZE_TOL) {
                return Err(FidelityError::Invariant(format!(
                    "{}: frame {t} quaternion norm {} is not unit",
                    path.display(),
                    q.norm()
                )));
            }
            orientations.push(q.normalized());
        }
        let positions = f.positions.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        frames.push(FramePose { positions, orientations });
    }
    MotionSequence::new(raw.fps, raw.skeleton_id, frames)
}

pub fn motion_to_json(motion: &MotionSequence) -> Result<Vec<u8>> {
    motion.validate()?;
    let raw = MotionFile {
        fps: motion.fps,
        skeleton_id: motion.skeleton_id.clone(),
        frames: motion
            .frames
            .iter()
            .map(|f| FrameFile {
                positions: f.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
                rotations: f.orientations.iter().map(|q| q.to_array()).collect(),
            })
            .collect(),
    };
    serde_json::to_vec(&raw).map_err(|e| FidelityError::Invariant(e.to_string()))
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    motion_from_json(&read_file(path)?, path)
}

/// Writes the motion as compact JSON; floats use shortest round-trip formatting
/// so a reload reproduces every value exactly.
pub fn save_motion(motion: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = motion_to_json(motion)?;
    fs::write(path, bytes).map_err(|e| FidelityError::io(path, e))
}

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<Skeleton> {
    let path = path.as_ref();
    let s: Skeleton = serde_json::from_slice(&read_file(path)?).map_err(|e| classify_json(path, e))?;
    s.validate()?;
    Ok(s)
}

pub fn save_skeleton(skeleton: &Skeleton, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    skeleton.validate()?;
    let bytes = serde_json::to_vec_pretty(skeleton).map_err(|e| FidelityError::Invariant(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| FidelityError::io(path, e))
}
