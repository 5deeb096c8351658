//! Named fidelity metrics behind one trait, so evaluation can pick a score
//! source by name. Every metric is oriented so that higher means better.

use std::sync::Arc;

use crate::error::{FidelityError, Result};
use crate::motion::{MotionSequence, Skeleton};
use crate::physics_metrics::{floating, penetration, pfc, skating, PhysicsHeuristicConfig};
use crate::pose_metrics::{ae_ave, JointScope};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Needs only the motion.
    Physics,
    /// Compares against a reference motion.
    Pose,
}

pub struct MetricInput<'a> {
    pub motion: &'a MotionSequence,
    pub skeleton: &'a Skeleton,
    pub reference: Option<&'a MotionSequence>,
}

pub trait FidelityMetric: Send + Sync {
    fn name(&self) -> &str;
    /// Row label used in report tables.
    fn label(&self) -> &str;
    fn kind(&self) -> MetricKind;
    /// Raw metric value (lower is better for every built-in metric).
    fn raw(&self, input: &MetricInput) -> Result<f64>;
    /// Fidelity score: the negated raw value.
    fn score(&self, input: &MetricInput) -> Result<f64> {
        Ok(-self.raw(input)?)
    }
}

type RawFn = dyn Fn(&MetricInput, &PhysicsHeuristicConfig) -> Result<f64> + Send + Sync;

struct FnMetric {
    name: &'static str,
    label: &'static str,
    kind: MetricKind,
    cfg: PhysicsHeuristicConfig,
    f: Box<RawFn>,
}

impl FidelityMetric for FnMetric {
    fn name(&self) -> &str {
        self.name
    }
    fn label(&self) -> &str {
        self.label
    }
    fn kind(&self) -> MetricKind {
        self.kind
    }
    fn raw(&self, input: &MetricInput) -> Result<f64> {
        (self.f)(input, &self.cfg)
    }
}

fn reference<'a>(input: &MetricInput<'a>, name: &str) -> Result<&'a MotionSequence> {
    input.reference.ok_or_else(|| FidelityError::Config(format!("metric `{name}` needs a reference motion")))
}

/// Built-in metrics: the four physics heuristics and root/joint AE/AVE.
pub fn metric_registry(cfg: PhysicsHeuristicConfig) -> Registry<dyn FidelityMetric> {
    let mut r: Registry<dyn FidelityMetric> = Registry::new("metric");
    let mut add = |name: &'static str, label: &'static str, kind: MetricKind, f: Box<RawFn>| {
        r.register(name, Arc::new(FnMetric { name, label, kind, cfg, f }) as Arc<dyn FidelityMetric>);
    };
    add("penetration", "Penetration", MetricKind::Physics, Box::new(|i, c| Ok(penetration(i.motion, c))));
    add("floating", "Float", MetricKind::Physics, Box::new(|i, c| Ok(floating(i.motion, c))));
    add("skating", "Skate", MetricKind::Physics, Box::new(|i, c| skating(i.motion, i.skeleton, c)));
    add("pfc", "PFC", MetricKind::Physics, Box::new(|i, _| pfc(i.motion, i.skeleton)));
    for (name, label, scope, ave) in [
        ("root_ae", "Root AE", JointScope::RootOnly, false),
        ("root_ave", "Root AVE", JointScope::RootOnly, true),
        ("joint_ae", "Joint AE", JointScope::AllJoints, false),
        ("joint_ave", "Joint AVE", JointScope::AllJoints, true),
    ] {
        add(
            name,
            label,
            MetricKind::Pose,
            Box::new(move |i, _| {
                let (a, v) = ae_ave(i.motion, reference(i, name)?, scope)?;
                Ok(if ave { v } else { a })
            }),
        );
    }
    r
}
