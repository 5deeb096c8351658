//! Rule-based plausibility heuristics: ground penetration, floating, foot
//! skating and physical foot contact (PFC). Lower is better for all four.
//!
//! Definitions used here:
//! - penetration: mean over frames of `max(0, -min_z - penetration_tolerance)` (m)
//! - floating: mean over frames of `max(0, min_z - float_tolerance)` (m)
//! - skating: mean horizontal foot speed over (foot, frame) samples whose
//!   height is below `contact_height` (m/s)
//! - pfc: per-frame `|COM xy accel| · min|v_left| · min|v_right|`, averaged over
//!   time and divided by its largest frame value; products below 1e-9 count
//!   as zero

use serde::{Deserialize, Serialize};

use crate::error::{FidelityError, Result};
use crate::motion::{compute_derivatives, MotionSequence, Skeleton, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsHeuristicConfig {
    pub contact_height_m: f64,
    pub float_tolerance_m: f64,
    pub penetration_tolerance_m: f64,
}

impl Default for PhysicsHeuristicConfig {
    fn default() -> Self {
        PhysicsHeuristicConfig { contact_height_m: 0.05, float_tolerance_m: 0.05, penetration_tolerance_m: 0.005 }
    }
}

impl PhysicsHeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("contact_height_m", self.contact_height_m),
            ("float_tolerance_m", self.float_tolerance_m),
            ("penetration_tolerance_m", self.penetration_tolerance_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FidelityError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsHeuristicReport {
    pub penetration_m: f64,
    pub skate_m_per_s: f64,
    pub float_m: f64,
    pub pfc: f64,
}

impl PhysicsHeuristicReport {
    pub fn compute(motion: &MotionSequence, skeleton: &Skeleton, cfg: &PhysicsHeuristicConfig) -> Result<Self> {
        Ok(PhysicsHeuristicReport {
            penetration_m: penetration(motion, cfg),
            skate_m_per_s: skating(motion, skeleton, cfg)?,
            float_m: floating(motion, cfg),
            pfc: pfc(motion, skeleton)?,
        })
    }
}

pub(crate) fn min_height(positions: &[Vec3]) -> f64 {
    positions.iter().map(|p| p.z).fold(f64::INFINITY, f64::min)
}

pub fn penetration(motion: &MotionSequence, cfg: &PhysicsHeuristicConfig) -> f64 {
    let total: f64 = motion
        .frames()
        .iter()
        .map(|f| (-min_height(&f.positions) - cfg.penetration_tolerance_m).max(0.0))
        .sum();
    total / motion.frame_count() as f64
}

pub fn floating(motion: &MotionSequence, cfg: &PhysicsHeuristicConfig) -> f64 {
    let total: f64 =
        motion.frames().iter().map(|f| (min_height(&f.positions) - cfg.float_tolerance_m).max(0.0)).sum();
    total / motion.frame_count() as f64
}

pub fn skating(motion: &MotionSequence, skeleton: &Skeleton, cfg: &PhysicsHeuristicConfig) -> Result<f64> {
    motion.check_joint_count(skeleton)?;
    let d = compute_derivatives(motion)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, frame) in motion.frames().iter().enumerate() {
        for &f in &skeleton.foot_indices {
            if frame.positions[f].z < cfg.contact_height_m {
                let v = d.linear_velocity[t][f];
                total += v.x.hypot(v.y);
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Per-frame products below this are finite-difference round-off.
const PFC_NOISE_FLOOR: f64 = 1e-9;

/// Per-frame PFC products before normalization.
pub fn pfc_frames(motion: &MotionSequence, skeleton: &Skeleton) -> Result<Vec<f64>> {
    motion.check_joint_count(skeleton)?;
    let (left, right) = skeleton.left_right_feet()?;
    let d = compute_derivatives(motion)?;
    let joints = motion.joint_count() as f64;
    let side_speed = |t: usize, side: &[usize]| {
        side.iter().map(|&j| d.linear_velocity[t][j].norm()).fold(f64::INFINITY, f64::min)
    };
    Ok((0..motion.frame_count())
        .map(|t| {
            let com_acc = d.linear_acceleration[t].iter().fold(Vec3::zeros(), |acc, a| acc + a) / joints;
            let p = com_acc.x.hypot(com_acc.y) * side_speed(t, left) * side_speed(t, right);
            if p < PFC_NOISE_FLOOR { 0.0 } else { p }
        })
        .collect())
}

pub fn pfc(motion: &MotionSequence, skeleton: &Skeleton) -> Result<f64> {
    let frames = pfc_frames(motion, skeleton)?;
    let max = frames.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0.0);
    }
    Ok(frames.iter().sum::<f64>() / frames.len() as f64 / max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::tests::{chain_skeleton, motion_from_fn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> PhysicsHeuristicConfig {
        PhysicsHeuristicConfig::default()
    }

    #[test]
    fn penetration_anchors() {
        let grounded = motion_from_fn(5, 4, 30.0, |t, j| Vec3::new(t as f64, 0.0, j as f64 * 0.1));
        assert_eq!(penetration(&grounded, &cfg()), 0.0);
        let pinned = motion_from_fn(5, 4, 30.0, |_, j| Vec3::new(0.0, 0.0, if j == 2 { -0.055 } else { 0.5 }));
        assert!((penetration(&pinned, &cfg()) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn floating_anchors() {
        let grounded = motion_from_fn(5, 4, 30.0, |_, j| Vec3::new(0.0, 0.0, j as f64 * 0.1));
        assert_eq!(floating(&grounded, &cfg()), 0.0);
        let lifted = motion_from_fn(5, 4, 30.0, |_, j| Vec3::new(0.0, 0.0, j as f64 * 0.1 + 0.15));
        assert!((floating(&lifted, &cfg()) - 0.10).abs() < 1e-12);
    }

    #[test]
    fn skating_anchors() {
        let sk = chain_skeleton(4);
        let still = motion_from_fn(6, 4, 30.0, |_, j| Vec3::new(0.0, 0.0, j as f64 * 0.01));
        assert_eq!(skating(&still, &sk, &cfg()).unwrap(), 0.0);
        let airborne = motion_from_fn(6, 4, 30.0, |t, _| Vec3::new(t as f64, 0.0, 1.0));
        assert_eq!(skating(&airborne, &sk, &cfg()).unwrap(), 0.0);
        let sliding = motion_from_fn(6, 4, 30.0, |t, j| {
            let x = 0.2 * t as f64 / 30.0;
            if j >= 2 { Vec3::new(x, 0.0, 0.01) } else { Vec3::new(0.0, 0.0, 1.0) }
        });
        assert!((skating(&sliding, &sk, &cfg()).unwrap() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn pfc_anchors() {
        let sk = chain_skeleton(4);
        let still = motion_from_fn(6, 4, 30.0, |_, j| Vec3::new(0.0, 0.0, j as f64));
        assert_eq!(pfc(&still, &sk).unwrap(), 0.0);
        // joint 3 (right foot) never moves
        let one_foot = motion_from_fn(8, 4, 30.0, |t, j| {
            let tt = t as f64 / 30.0;
            if j == 3 { Vec3::new(0.0, 0.0, 0.0) } else { Vec3::new(tt * tt * (j + 1) as f64, tt.sin(), 0.1) }
        });
        assert_eq!(pfc(&one_foot, &sk).unwrap(), 0.0);
        let one_foot_skel = Skeleton::new(vec!["a".into(), "b".into()], vec![-1, 0], 0, vec![1]).unwrap();
        let m = motion_from_fn(3, 2, 30.0, |_, _| Vec3::zeros());
        assert!(matches!(pfc(&m, &one_foot_skel), Err(FidelityError::FootConfig(_))));
    }

    #[test]
    fn pfc_matches_frame_loop_oracle() {
        let sk = chain_skeleton(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<Vec3> = (0..40).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let m = motion_from_fn(8, 5, 20.0, |t, j| vals[t * 5 + j]);
        let (n, fps) = (8usize, 20.0);
        let mut per = Vec::new();
        for t in 0..n {
            let c = t.clamp(1, n - 2);
            let mut ax = 0.0;
            let mut ay = 0.0;
            for j in 0..5 {
                let a = (m.position(c + 1, j) - m.position(c, j) * 2.0 + m.position(c - 1, j)) * fps * fps;
                ax += a.x / 5.0;
                ay += a.y / 5.0;
            }
            let (lo, hi, span) = if t == 0 { (0, 1, 1.0) } else if t == n - 1 { (n - 2, n - 1, 1.0) } else { (t - 1, t + 1, 2.0) };
            let v = |j: usize| ((m.position(hi, j) - m.position(lo, j)) * fps / span).norm();
            per.push((ax * ax + ay * ay).sqrt() * v(3) * v(4));
        }
        let max = per.iter().cloned().fold(0.0, f64::max);
        let oracle = per.iter().sum::<f64>() / n as f64 / max;
        assert!((pfc(&m, &sk).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn config_rejects_nonpositive() {
        let bad = PhysicsHeuristicConfig { contact_height_m: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
        assert!(cfg().validate().is_ok());
    }
}
