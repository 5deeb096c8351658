//! Reference-relative pose errors. Distances are reported in millimeters,
//! except AE (meters) and AVE (square meters).
//!
//! The root joint is joint 0 unless a `_rooted` variant is used.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FidelityError, Result};
use crate::motion::{compute_derivatives, ensure_same_shape, MotionSequence, Vec3};

const MM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointScope {
    RootOnly,
    AllJoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMetricReport {
    pub recon_err_mm: f64,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub e_acc: f64,
    pub e_vel: f64,
    pub root_ae: f64,
    pub root_ave: f64,
    pub joint_ae: f64,
    pub joint_ave: f64,
}

impl PoseMetricReport {
    pub fn compute(pred: &MotionSequence, gt: &MotionSequence) -> Result<Self> {
        let (e_acc, e_vel) = accel_vel_err(pred, gt)?;
        let (root_ae, root_ave) = ae_ave(pred, gt, JointScope::RootOnly)?;
        let (joint_ae, joint_ave) = ae_ave(pred, gt, JointScope::AllJoints)?;
        Ok(PoseMetricReport {
            recon_err_mm: recon_err(pred, gt)?,
            mpjpe_mm: mpjpe(pred, gt)?,
            pa_mpjpe_mm: pa_mpjpe(pred, gt)?,
            e_acc,
            e_vel,
            root_ae,
            root_ave,
            joint_ae,
            joint_ave,
        })
    }

    pub const CSV_HEADER: &'static str =
        "recon_err_mm,mpjpe_mm,pa_mpjpe_mm,e_acc,e_vel,root_ae,root_ave,joint_ae,joint_ave";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.recon_err_mm,
            self.mpjpe_mm,
            self.pa_mpjpe_mm,
            self.e_acc,
            self.e_vel,
            self.root_ae,
            self.root_ave,
            self.joint_ae,
            self.joint_ave
        )
    }
}

fn mean_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

/// Mean world-space joint distance.
pub fn recon_err(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    ensure_same_shape(pred, gt)?;
    let total: f64 =
        pred.frames().iter().zip(gt.frames()).map(|(p, g)| mean_distance(&p.positions, &g.positions)).sum();
    Ok(total / pred.frame_count() as f64 * MM)
}

/// Mean joint distance after subtracting each frame's root position.
pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    mpjpe_rooted(pred, gt, 0)
}

pub fn mpjpe_rooted(pred: &MotionSequence, gt: &MotionSequence, root: usize) -> Result<f64> {
    ensure_same_shape(pred, gt)?;
    if root >= pred.joint_count() {
        return Err(FidelityError::Shape(format!("root {root} outside {} joints", pred.joint_count())));
    }
    let mut total = 0.0;
    for (p, g) in pred.frames().iter().zip(gt.frames()) {
        let (pr, gr) = (p.positions[root], g.positions[root]);
        total += p.positions.iter().zip(&g.positions).map(|(x, y)| ((x - pr) - (y - gr)).norm()).sum::<f64>()
            / p.positions.len() as f64;
    }
    Ok(total / pred.frame_count() as f64 * MM)
}

/// Similarity transform `y ≈ scale · R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x * self.scale + self.translation
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Least-squares similarity aligning `source` onto `target` (Umeyama), with
/// the reflection case folded back into a proper rotation.
pub fn umeyama(source: &[Vec3], target: &[Vec3], frame: usize) -> Result<Similarity> {
    let (mx, my) = (centroid(source), centroid(target));
    let var_x: f64 = source.iter().map(|x| (x - mx).norm_squared()).sum();
    let var_y: f64 = target.iter().map(|y| (y - my).norm_squared()).sum();
    if var_x == 0.0 || var_y == 0.0 {
        return Err(FidelityError::DegenerateFrame { frame });
    }
    let mut cov = Matrix3::zeros();
    for (x, y) in source.iter().zip(target) {
        cov += (y - my) * (x - mx).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let d = svd.singular_values;
    let scale = (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x;
    let translation = my - rotation * mx * scale;
    Ok(Similarity { rotation, scale, translation })
}

/// Mean joint distance after per-frame similarity Procrustes alignment of
/// `pred` onto `gt`.
pub fn pa_mpjpe(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    ensure_same_shape(pred, gt)?;
    let mut total = 0.0;
    for (t, (p, g)) in pred.frames().iter().zip(gt.frames()).enumerate() {
        let sim = umeyama(&p.positions, &g.positions, t)?;
        let aligned: Vec<Vec3> = p.positions.iter().map(|x| sim.apply(x)).collect();
        total += mean_distance(&aligned, &g.positions);
    }
    Ok(total / pred.frame_count() as f64 * MM)
}

/// `(e_acc, e_vel)`: mean per-joint acceleration and velocity differences,
/// in mm/s² and mm/s.
pub fn accel_vel_err(pred: &MotionSequence, gt: &MotionSequence) -> Result<(f64, f64)> {
    ensure_same_shape(pred, gt)?;
    let (dp, dg) = (compute_derivatives(pred)?, compute_derivatives(gt)?);
    let avg = |a: &[Vec<Vec3>], b: &[Vec<Vec3>]| {
        a.iter().zip(b).map(|(x, y)| mean_distance(x, y)).sum::<f64>() / a.len() as f64 * MM
    };
    Ok((
        avg(&dp.linear_acceleration, &dg.linear_acceleration),
        avg(&dp.linear_velocity, &dg.linear_velocity),
    ))
}

/// Per-axis population variance over time of one joint.
fn temporal_variance(m: &MotionSequence, j: usize) -> Vec3 {
    let n = m.frame_count() as f64;
    let mu = m.frames().iter().fold(Vec3::zeros(), |acc, f| acc + f.positions[j]) / n;
    m.frames().iter().fold(Vec3::zeros(), |acc, f| {
        let d = f.positions[j] - mu;
        acc + d.component_mul(&d)
    }) / n
}

/// `(AE, AVE)` over the given joints: mean position distance (m) and mean
/// distance between per-joint temporal variance vectors (m²).
pub fn ae_ave(pred: &MotionSequence, gt: &MotionSequence, scope: JointScope) -> Result<(f64, f64)> {
    ensure_same_shape(pred, gt)?;
    let joints: Vec<usize> = match scope {
        JointScope::RootOnly => vec![0],
        JointScope::AllJoints => (0..pred.joint_count()).collect(),
    };
    let mut ae = 0.0;
    for (p, g) in pred.frames().iter().zip(gt.frames()) {
        ae += joints.iter().map(|&j| (p.positions[j] - g.positions[j]).norm()).sum::<f64>();
    }
    ae /= (pred.frame_count() * joints.len()) as f64;
    let ave = joints
        .iter()
        .map(|&j| (temporal_variance(pred, j) - temporal_variance(gt, j)).norm())
        .sum::<f64>()
        / joints.len() as f64;
    Ok((ae, ave))
}
