//! Physical annotation by projection onto a feasible set.
//!
//! A motion `x` is corrected to the nearest motion `x'` (in the sense of
//! `‖y - x‖² + w·‖D²(y - x)‖²`, `D²` the second difference over frames) that
//! satisfies four hard constraints:
//!
//! - no joint below the ground plane;
//! - every contact window touches the ground (anti-floating);
//! - feet below contact height do not slide horizontally;
//! - no joint exceeds the speed limit.
//!
//! The distance `e_p = ‖x - x'‖` over all joint positions is the raw
//! annotation; it is z-normalized across a dataset and negated so that
//! higher scores mean more physically plausible motion.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FidelityError, Result};
use crate::motion::{
    compute_derivatives, ensure_same_shape, geodesic_unchecked, MotionSequence, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub max_iterations: usize,
    pub step_size: f64,
    pub constraint_tolerance_m: f64,
    pub max_joint_speed_mps: f64,
    /// Weight of the correction's second-difference energy.
    pub smoothness_weight: f64,
    pub contact_height_m: f64,
    /// Length of the windows in which the body must touch the ground.
    pub contact_window_s: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            max_iterations: 200,
            step_size: 0.05,
            constraint_tolerance_m: 1e-4,
            max_joint_speed_mps: 12.0,
            smoothness_weight: 0.1,
            contact_height_m: 0.05,
            contact_window_s: 1.0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_size", self.step_size),
            ("constraint_tolerance_m", self.constraint_tolerance_m),
            ("max_joint_speed_mps", self.max_joint_speed_mps),
            ("contact_height_m", self.contact_height_m),
            ("contact_window_s", self.contact_window_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FidelityError::Config(format!("annotator.{name} must be positive, got {v}")));
            }
        }
        if !(self.smoothness_weight >= 0.0 && self.smoothness_weight.is_finite()) {
            return Err(FidelityError::Config(format!(
                "annotator.smoothness_weight must be >= 0, got {}",
                self.smoothness_weight
            )));
        }
        if self.max_iterations == 0 {
            return Err(FidelityError::Config("annotator.max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Worst-case constraint values of a motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Lowest joint height over the clip.
    pub min_z: f64,
    /// Largest per-window ground clearance.
    pub max_window_clearance: f64,
    /// Largest horizontal step of a foot below contact height.
    pub max_contact_drift: f64,
    /// Largest frame-to-frame joint speed.
    pub max_speed: f64,
    pub feasible: bool,
}

/// Relative slack for float round-off in the feasibility test.
const SLACK: f64 = 1e-9;
/// Passes of the constraint operator per projection step.
const MAX_PASSES: usize = 8;
/// PGD stops once no coordinate moves by more than this.
const STATIONARY: f64 = 1e-12;

type Positions = Vec<Vec<Vec3>>;

fn window_bounds(frames: usize, fps: f64, window_s: f64) -> Vec<(usize, usize)> {
    let len = ((window_s * fps).round() as usize).max(1);
    let count = (frames / len).max(1);
    (0..count).map(|k| (k * len, if k + 1 == count { frames } else { (k + 1) * len })).collect()
}

fn frame_min_z(frame: &[Vec3]) -> f64 {
    frame.iter().map(|p| p.z).fold(f64::INFINITY, f64::min)
}

fn measure(y: &Positions, fps: f64, feet: &[usize], cfg: &ProjectionConfig) -> ConstraintReport {
    let min_z = y.iter().map(|f| frame_min_z(f)).fold(f64::INFINITY, f64::min);
    let max_window_clearance = window_bounds(y.len(), fps, cfg.contact_window_s)
        .into_iter()
        .map(|(a, b)| y[a..b].iter().map(|f| frame_min_z(f)).fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut max_contact_drift = 0.0f64;
    let mut max_step = 0.0f64;
    for t in 1..y.len() {
        for j in 0..y[t].len() {
            max_step = max_step.max((y[t][j] - y[t - 1][j]).norm());
        }
        for &f in feet {
            if y[t][f].z < cfg.contact_height_m {
                let d = y[t][f] - y[t - 1][f];
                max_contact_drift = max_contact_drift.max(d.x.hypot(d.y));
            }
        }
    }
    let tol = cfg.constraint_tolerance_m;
    let max_speed = max_step * fps;
    let feasible = min_z >= -tol
        && max_window_clearance <= tol * (1.0 + SLACK)
        && max_contact_drift <= tol * (1.0 + SLACK)
        && max_speed <= cfg.max_joint_speed_mps * (1.0 + SLACK);
    ConstraintReport { min_z, max_window_clearance, max_contact_drift, max_speed, feasible }
}

/// Constraint values of `motion` under `cfg`.
pub fn check_constraints(motion: &MotionSequence, feet: &[usize], cfg: &ProjectionConfig) -> ConstraintReport {
    measure(&motion.positions_by_frame(), motion.fps(), feet, cfg)
}

/// One pass of the constraint operator, applied in place.
fn constrain_pass(y: &mut Positions, fps: f64, feet: &[usize], cfg: &ProjectionConfig) {
    let tol = cfg.constraint_tolerance_m;
    for (a, b) in window_bounds(y.len(), fps, cfg.contact_window_s) {
        let lowest = y[a..b].iter().map(|f| frame_min_z(f)).fold(f64::INFINITY, f64::min);
        if lowest > tol {
            for frame in &mut y[a..b] {
                for p in frame.iter_mut() {
                    p.z -= lowest;
                }
            }
        }
    }
    for frame in y.iter_mut() {
        for p in frame.iter_mut() {
            p.z = p.z.max(0.0);
        }
    }
    let max_step = cfg.max_joint_speed_mps / fps;
    for t in 1..y.len() {
        let (done, rest) = y.split_at_mut(t);
        let (prev, cur) = (&done[t - 1], &mut rest[0]);
        for j in 0..cur.len() {
            let d = cur[j] - prev[j];
            let n = d.norm();
            if n > max_step {
                cur[j] = prev[j] + d * (max_step / n);
            }
        }
        for &f in feet {
            if cur[f].z < cfg.contact_height_m {
                let d = cur[f] - prev[f];
                let h = d.x.hypot(d.y);
                if h > tol {
                    let k = tol / h;
                    cur[f].x = prev[f].x + d.x * k;
                    cur[f].y = prev[f].y + d.y * k;
                }
            }
        }
    }
}

fn constrain(y: &mut Positions, fps: f64, feet: &[usize], cfg: &ProjectionConfig) -> ConstraintReport {
    let mut report = measure(y, fps, feet, cfg);
    let mut passes = 0;
    while !report.feasible && passes < MAX_PASSES {
        constrain_pass(y, fps, feet, cfg);
        report = measure(y, fps, feet, cfg);
        passes += 1;
    }
    report
}

/// Gradient of `‖y - x‖² + w‖D²(y - x)‖²` with respect to `y`.
fn objective_grad(y: &Positions, x: &Positions, w: f64) -> Positions {
    let r: Positions = y.iter().zip(x).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect();
    let mut g: Positions = r.iter().map(|f| f.iter().map(|p| p * 2.0).collect()).collect();
    if w > 0.0 && r.len() >= 3 {
        for t in 1..r.len() - 1 {
            for j in 0..r[t].len() {
                let acc = r[t - 1][j] - r[t][j] * 2.0 + r[t + 1][j];
                let s = acc * (2.0 * w);
                g[t - 1][j] += s;
                g[t][j] -= s * 2.0;
                g[t + 1][j] += s;
            }
        }
    }
    g
}

/// Result of projecting one motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub motion: MotionSequence,
    /// False when the constraints were still violated after the last iteration.
    pub converged: bool,
    pub iterations: usize,
    pub report: ConstraintReport,
}

impl Projection {
    /// The projected motion, or `NonConvergence` if it is still infeasible.
    pub fn into_result(self) -> Result<MotionSequence> {
        if self.converged {
            Ok(self.motion)
        } else {
            Err(FidelityError::NonConvergence {
                iterations: self.iterations,
                detail: format!("{:?}", self.report),
            })
        }
    }
}

/// Projected gradient descent onto the feasible set. Deterministic.
///
/// `feet` lists the joints subject to the anti-skating constraint.
pub fn project_to_physical(x: &MotionSequence, feet: &[usize], cfg: &ProjectionConfig) -> Result<Projection> {
    cfg.validate()?;
    if let Some(&f) = feet.iter().find(|&&f| f >= x.joint_count()) {
        return Err(FidelityError::Shape(format!("foot index {f} outside {} joints", x.joint_count())));
    }
    let fps = x.fps();
    let target = x.positions_by_frame();
    let mut y = target.clone();
    let mut report = constrain(&mut y, fps, feet, cfg);
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let g = objective_grad(&y, &target, cfg.smoothness_weight);
        let mut next: Positions = y
            .iter()
            .zip(&g)
            .map(|(f, gf)| f.iter().zip(gf).map(|(p, d)| p - d * cfg.step_size).collect())
            .collect();
        report = constrain(&mut next, fps, feet, cfg);
        let moved = next
            .iter()
            .zip(&y)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).amax()))
            .fold(0.0, f64::max);
        y = next;
        if moved <= STATIONARY && report.feasible {
            break;
        }
    }
    if !report.feasible {
        log::warn!("projection infeasible after {iterations} iterations: {report:?}");
    }
    Ok(Projection { motion: x.with_positions(y)?, converged: report.feasible, iterations, report })
}

/// `e_p`: L2 norm of the flattened joint-position difference (m).
pub fn physical_error(x: &MotionSequence, x_prime: &MotionSequence) -> Result<f64> {
    ensure_same_shape(x, x_prime)?;
    let ss: f64 = x
        .frames()
        .iter()
        .zip(x_prime.frames())
        .flat_map(|(a, b)| a.positions.iter().zip(&b.positions).map(|(p, q)| (p - q).norm_squared()))
        .sum();
    Ok(ss.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_jp: f64,
    pub w_jr: f64,
    pub w_jv: f64,
    pub w_jw: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w_jp: 0.25, w_jr: 0.25, w_jv: 0.25, w_jw: 0.25 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_jp, self.w_jr, self.w_jv, self.w_jw];
        if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(FidelityError::Config(format!("reward weights must be >= 0 and sum to 1, got {w:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImitationReward {
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

/// Per-frame exponential-kernel similarity between a motion and its
/// correction over positions, rotations, linear and angular velocities.
/// Each channel error is the mean per-joint norm in that frame.
pub fn imitation_reward(x: &MotionSequence, x_prime: &MotionSequence, w: &RewardWeights) -> Result<ImitationReward> {
    ensure_same_shape(x, x_prime)?;
    w.validate()?;
    let (d, dp) = (compute_derivatives(x)?, compute_derivatives(x_prime)?);
    let joints = x.joint_count() as f64;
    let mean_norm = |a: &[Vec3], b: &[Vec3]| a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / joints;
    let per_frame: Vec<f64> = (0..x.frame_count())
        .map(|t| {
            let (f, fp) = (&x.frames()[t], &x_prime.frames()[t]);
            let e_p = mean_norm(&fp.positions, &f.positions);
            let e_r = fp
                .orientations
                .iter()
                .zip(&f.orientations)
                .map(|(a, b)| geodesic_unchecked(a, b))
                .sum::<f64>()
                / joints;
            let e_v = mean_norm(&dp.linear_velocity[t], &d.linear_velocity[t]);
            let e_w = mean_norm(&dp.angular_velocity[t], &d.angular_velocity[t]);
            w.w_jp * (-100.0 * e_p).exp()
                + w.w_jr * (-10.0 * e_r).exp()
                + w.w_jv * (-0.1 * e_v).exp()
                + w.w_jw * (-0.1 * e_w).exp()
        })
        .collect();
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(ImitationReward { per_frame, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalAnnotation {
    pub motion_id: String,
    pub e_p_raw: f64,
    /// `-(e_p - mean) / std` over the dataset; higher is more plausible.
    pub physical_score: f64,
    pub converged: bool,
}

/// Z-normalizes raw distances (population std) and negates them.
pub fn normalize_annotations(raw: &[(String, f64)]) -> Result<Vec<PhysicalAnnotation>> {
    if raw.len() < 2 {
        return Err(FidelityError::DegenerateInput(format!(
            "normalization needs at least 2 motions, got {}",
            raw.len()
        )));
    }
    if let Some((id, v)) = raw.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
        return Err(FidelityError::Invariant(format!("e_p of `{id}` is {v}")));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = raw.iter().map(|(_, v)| (v - mean) * (v - mean)).sum::<f64>() / n;
    if raw.iter().all(|(_, v)| *v == raw[0].1) || var == 0.0 {
        return Err(FidelityError::DegenerateInput("all e_p values are equal".into()));
    }
    let std = var.sqrt();
    Ok(raw
        .iter()
        .map(|(id, v)| PhysicalAnnotation {
            motion_id: id.clone(),
            e_p_raw: *v,
            physical_score: -(v - mean) / std,
            converged: true,
        })
        .collect())
}

/// Projects every motion (in parallel), measures `e_p` and normalizes.
/// Output is sorted by motion id; infeasible projections are flagged.
pub fn annotate_dataset(
    motions: &[(String, MotionSequence)],
    feet: &[usize],
    cfg: &ProjectionConfig,
) -> Result<Vec<PhysicalAnnotation>> {
    if motions.is_empty() {
        return Err(FidelityError::DegenerateInput("no motions to annotate".into()));
    }
    cfg.validate()?;
    let mut raw: Vec<(String, f64, bool)> = motions
        .par_iter()
        .map(|(id, m)| {
            let p = project_to_physical(m, feet, cfg)?;
            Ok((id.clone(), physical_error(m, &p.motion)?, p.converged))
        })
        .collect::<Result<_>>()?;
    raw.sort_by(|a, b| a.0.cmp(&b.0));
    let pairs: Vec<(String, f64)> = raw.iter().map(|(id, e, _)| (id.clone(), *e)).collect();
    let mut out = normalize_annotations(&pairs)?;
    for (a, (_, _, ok)) in out.iter_mut().zip(&raw) {
        a.converged = *ok;
    }
    Ok(out)
}

pub const ANNOTATION_CSV_HEADER: &str = "motion_id,e_p_raw,physical_score,converged";

pub fn annotations_to_csv(rows: &[PhysicalAnnotation]) -> String {
    let mut out = String::from(ANNOTATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.motion_id, r.e_p_raw, r.physical_score, r.converged);
    }
    out
}
