//! Fixed spatio-temporal feature encoder for the fidelity scorer.
//!
//! Every feature is built from heights, finite differences or bone
//! lengths, so the vector is unchanged by a horizontal translation of the
//! whole motion.

use serde::{Deserialize, Serialize};

use crate::error::{FidelityError, Result};
use crate::motion::{compute_derivatives, MotionSequence, Skeleton, Vec3};
use crate::physics_metrics::{floating, pfc, skating, PhysicsHeuristicConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureGroup {
    /// Absolute heights.
    Height,
    /// Below-ground depth and ground clearance.
    Ground,
    /// Quantities restricted to foot contact frames.
    Contact,
    /// Speeds, accelerations and jerk.
    Kinematic,
    Angular,
    /// Bone-length consistency.
    Structure,
}

/// Name and group of each feature, in vector order.
pub const FEATURES: [(&str, FeatureGroup); FEATURE_DIM] = {
    use FeatureGroup::*;
    [
        ("min_height", Height),
        ("mean_height", Height),
        ("max_height", Height),
        ("mean_frame_min_height", Height),
        ("max_frame_min_height", Height),
        ("std_frame_min_height", Kinematic),
        ("min_foot_height", Height),
        ("mean_foot_height", Height),
        ("max_foot_height", Height),
        ("mean_penetration", Ground),
        ("max_penetration", Ground),
        ("below_ground_fraction", Ground),
        ("mean_clearance", Ground),
        ("max_window_clearance", Ground),
        ("airborne_fraction", Ground),
        ("log_floating", Ground),
        ("contact_fraction", Contact),
        ("mean_contact_foot_speed", Contact),
        ("p95_contact_foot_speed", Contact),
        ("max_contact_foot_speed", Contact),
        ("contact_drift", Contact),
        ("log_skating", Contact),
        ("mean_foot_speed", Kinematic),
        ("speed_p50", Kinematic),
        ("speed_p95", Kinematic),
        ("speed_max", Kinematic),
        ("log_speed_max", Kinematic),
        ("over_speed_fraction", Kinematic),
        ("accel_p50", Kinematic),
        ("accel_p95", Kinematic),
        ("accel_max", Kinematic),
        ("log_accel_p95", Kinematic),
        ("jerk_mean", Kinematic),
        ("jerk_p95", Kinematic),
        ("log_jerk_mean", Kinematic),
        ("max_frame_step", Kinematic),
        ("mean_frame_step", Kinematic),
        ("angular_speed_mean", Angular),
        ("angular_speed_max", Angular),
        ("com_xy_accel_mean", Kinematic),
        ("com_xy_accel_max", Kinematic),
        ("com_z_accel_mean", Kinematic),
        ("pfc", Kinematic),
        ("root_height_mean", Height),
        ("root_height_std", Kinematic),
        ("root_height_range", Kinematic),
        ("bone_length_variation", Structure),
        ("max_bone_length_deviation", Structure),
    ]
};

pub const FEATURE_DIM: usize = 48;

/// Thresholds the encoder shares with the physics heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub contact_height_m: f64,
    pub max_joint_speed_mps: f64,
    pub contact_window_s: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { contact_height_m: 0.05, max_joint_speed_mps: 12.0, contact_window_s: 1.0 }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        FEATURE_DIM
    }
}

/// Linear-interpolated percentile of unsorted data; 0 for empty input.
fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn mean_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn std_of(v: &[f64]) -> f64 {
    let m = mean_of(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

pub fn extract_features(motion: &MotionSequence, skeleton: &Skeleton, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    motion.check_joint_count(skeleton)?;
    let pos = motion.positions_by_frame();
    let (n, joints, fps) = (motion.frame_count(), motion.joint_count(), motion.fps());
    let d = compute_derivatives(motion)?;
    let feet = &skeleton.foot_indices;
    let contact = cfg.contact_height_m;

    let all_z: Vec<f64> = pos.iter().flatten().map(|p| p.z).collect();
    let frame_min: Vec<f64> = pos.iter().map(|f| f.iter().map(|p| p.z).fold(f64::INFINITY, f64::min)).collect();
    let foot_z: Vec<f64> = pos.iter().flat_map(|f| feet.iter().map(|&j| f[j].z)).collect();

    let window = ((cfg.contact_window_s * fps).round() as usize).max(1);
    let windows = (n / window).max(1);
    let max_window_clearance = (0..windows)
        .map(|k| {
            let end = if k + 1 == windows { n } else { (k + 1) * window };
            frame_min[k * window..end].iter().copied().fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);

    let mut contact_speed = Vec::new();
    let mut foot_speed = Vec::new();
    let mut contact_drift = 0.0;
    for t in 0..n {
        for &f in feet {
            let v = d.linear_velocity[t][f];
            let s = v.x.hypot(v.y);
            foot_speed.push(v.norm());
            if pos[t][f].z < contact {
                contact_speed.push(s);
                if t > 0 {
                    let step = pos[t][f] - pos[t - 1][f];
                    contact_drift += step.x.hypot(step.y);
                }
            }
        }
    }

    let speed: Vec<f64> = d.linear_velocity.iter().flatten().map(Vec3::norm).collect();
    let accel: Vec<f64> = d.linear_acceleration.iter().flatten().map(Vec3::norm).collect();
    let mut jerk = Vec::new();
    for t in 1..n.saturating_sub(1) {
        for j in 0..joints {
            let a = (d.linear_acceleration[t + 1][j] - d.linear_acceleration[t - 1][j]) * (fps / 2.0);
            jerk.push(a.norm());
        }
    }
    let mut steps = Vec::new();
    for t in 1..n {
        for j in 0..joints {
            steps.push((pos[t][j] - pos[t - 1][j]).norm());
        }
    }
    let angular: Vec<f64> = d.angular_velocity.iter().flatten().map(Vec3::norm).collect();
    let com_acc: Vec<Vec3> =
        d.linear_acceleration.iter().map(|f| f.iter().fold(Vec3::zeros(), |a, b| a + b) / joints as f64).collect();
    let com_xy: Vec<f64> = com_acc.iter().map(|a| a.x.hypot(a.y)).collect();
    let com_z: Vec<f64> = com_acc.iter().map(|a| a.z.abs()).collect();
    let root_z: Vec<f64> = pos.iter().map(|f| f[skeleton.root_index].z).collect();

    let mut bone_var = Vec::new();
    let mut bone_dev = 0.0f64;
    for (j, &p) in skeleton.parent_index.iter().enumerate() {
        if p < 0 {
            continue;
        }
        let lens: Vec<f64> = pos.iter().map(|f| (f[j] - f[p as usize]).norm()).collect();
        let m = mean_of(&lens);
        if m > 1e-9 {
            bone_var.push(std_of(&lens) / m);
            bone_dev = bone_dev.max(lens.iter().map(|l| (l - m).abs() / m).fold(0.0, f64::max));
        }
    }

    let heur = PhysicsHeuristicConfig { contact_height_m: contact, ..PhysicsHeuristicConfig::default() };
    let speed_max = max_of(&speed);
    let accel_p95 = percentile(&accel, 0.95);
    let jerk_mean = mean_of(&jerk);
    let over = speed.iter().filter(|&&s| s > cfg.max_joint_speed_mps).count() as f64 / speed.len() as f64;
    let pen: Vec<f64> = frame_min.iter().map(|z| (-z).max(0.0)).collect();
    let clear: Vec<f64> = frame_min.iter().map(|z| z.max(0.0)).collect();

    let v = vec![
        all_z.iter().copied().fold(f64::INFINITY, f64::min),
        mean_of(&all_z),
        all_z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_of(&frame_min),
        frame_min.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        std_of(&frame_min),
        foot_z.iter().copied().fold(f64::INFINITY, f64::min),
        mean_of(&foot_z),
        foot_z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_of(&pen),
        max_of(&pen),
        frame_min.iter().filter(|&&z| z < 0.0).count() as f64 / n as f64,
        mean_of(&clear),
        max_window_clearance,
        frame_min.iter().filter(|&&z| z >= contact).count() as f64 / n as f64,
        floating(motion, &heur).ln_1p(),
        contact_speed.len() as f64 / foot_z.len() as f64,
        mean_of(&contact_speed),
        percentile(&contact_speed, 0.95),
        max_of(&contact_speed),
        contact_drift,
        skating(motion, skeleton, &heur)?.ln_1p(),
        mean_of(&foot_speed),
        percentile(&speed, 0.5),
        percentile(&speed, 0.95),
        speed_max,
        speed_max.ln_1p(),
        over,
        percentile(&accel, 0.5),
        accel_p95,
        max_of(&accel),
        accel_p95.ln_1p(),
        jerk_mean,
        percentile(&jerk, 0.95),
        jerk_mean.ln_1p(),
        max_of(&steps),
        mean_of(&steps),
        mean_of(&angular),
        max_of(&angular),
        mean_of(&com_xy),
        max_of(&com_xy),
        mean_of(&com_z),
        if feet.len() >= 2 { pfc(motion, skeleton)? } else { 0.0 },
        mean_of(&root_z),
        std_of(&root_z),
        max_of(&root_z.iter().map(|z| z - root_z.iter().copied().fold(f64::INFINITY, f64::min)).collect::<Vec<_>>()),
        mean_of(&bone_var),
        bone_dev,
    ];
    debug_assert_eq!(v.len(), FEATURE_DIM);
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(FidelityError::Invariant(format!("feature `{}` is not finite", FEATURES[i].0)));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::tests::{chain_skeleton, motion_from_fn};

    fn wobble(t: usize, j: usize) -> Vec3 {
        let tt = t as f64 / 30.0;
        Vec3::new(0.3 * tt + 0.1 * j as f64, (2.0 * tt + j as f64).sin() * 0.2, 0.25 * j as f64 + 0.03 * (5.0 * tt).cos())
    }

    #[test]
    fn static_grounded_motion_has_no_motion_features() {
        let sk = chain_skeleton(4);
        let m = motion_from_fn(20, 4, 30.0, |_, j| Vec3::new(0.1 * j as f64, 0.0, 0.2 * j as f64));
        let f = extract_features(&m, &sk, &FeatureConfig::default()).unwrap();
        for (i, (name, g)) in FEATURES.iter().enumerate() {
            if matches!(g, FeatureGroup::Kinematic | FeatureGroup::Angular) || name.contains("speed") {
                assert_eq!(f[i], 0.0, "{name}");
            }
        }
    }

    #[test]
    fn horizontal_translation_invariance() {
        let sk = chain_skeleton(5);
        let m = motion_from_fn(40, 5, 30.0, wobble);
        let moved = m.map_positions(|_, _, p| p + Vec3::new(3.25, -1.5, 0.0)).unwrap();
        let (a, b) = (
            extract_features(&m, &sk, &FeatureConfig::default()).unwrap(),
            extract_features(&moved, &sk, &FeatureConfig::default()).unwrap(),
        );
        for i in 0..FEATURE_DIM {
            assert!((a[i] - b[i]).abs() <= 1e-9 * a[i].abs().max(1.0), "{}", FEATURES[i].0);
        }
    }

    #[test]
    fn levitation_changes_only_height_ground_contact_features() {
        let sk = chain_skeleton(5);
        let m = motion_from_fn(40, 5, 30.0, wobble);
        let up = m.map_positions(|_, _, p| p + Vec3::new(0.0, 0.0, 0.2)).unwrap();
        let (a, b) = (
            extract_features(&m, &sk, &FeatureConfig::default()).unwrap(),
            extract_features(&up, &sk, &FeatureConfig::default()).unwrap(),
        );
        let mut changed = 0;
        for (i, (name, g)) in FEATURES.iter().enumerate() {
            let same = (a[i] - b[i]).abs() <= 1e-9 * a[i].abs().max(1.0);
            match g {
                FeatureGroup::Height | FeatureGroup::Ground | FeatureGroup::Contact => changed += usize::from(!same),
                _ => assert!(same, "{name}: {} vs {}", a[i], b[i]),
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn table_matches_dimension() {
        let mut names: Vec<&str> = FEATURES.iter().map(|f| f.0).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), FEATURE_DIM);
    }
}
