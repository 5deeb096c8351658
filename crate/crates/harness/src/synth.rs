//! Procedural benchmark motions with severity-controlled physical artifacts.
//!
//! Base clips are closed-form: a gait with alternating planted feet, an
//! in-place hop, idle sway and squats. Every clean clip keeps a foot on the
//! ground in each frame, never dips below it and never slides a planted foot,
//! so all four heuristics read zero at severity 0.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::sync::Arc;

use mofid_core::{
    save_motion, save_skeleton, FidelityError, FramePose, MotionPair, MotionSequence, Quat, Registry, Result,
    Skeleton, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const SKELETON_ID: &str = "synth14";
pub const JOINT_NAMES: [&str; 14] = [
    "pelvis", "spine", "neck", "head", "l_shoulder", "l_hand", "r_shoulder", "r_hand", "l_hip", "l_knee", "l_foot",
    "r_hip", "r_knee", "r_foot",
];
const PARENTS: [i64; 14] = [-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 9, 0, 11, 12];
pub const LEFT_FOOT: usize = 10;
pub const RIGHT_FOOT: usize = 13;

/// Height below which the generator treats a foot as planted (matches the
/// default heuristic contact height).
const CONTACT_HEIGHT_M: f64 = 0.05;

pub fn synth_skeleton() -> Skeleton {
    Skeleton::new(
        JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        PARENTS.to_vec(),
        0,
        vec![LEFT_FOOT, RIGHT_FOOT],
    )
    .expect("built-in skeleton is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseFamily {
    Walk,
    Jump,
    Idle,
    Squat,
}

impl BaseFamily {
    pub const ALL: [BaseFamily; 4] = [BaseFamily::Walk, BaseFamily::Jump, BaseFamily::Idle, BaseFamily::Squat];

    pub fn name(self) -> &'static str {
        match self {
            BaseFamily::Walk => "walk",
            BaseFamily::Jump => "jump",
            BaseFamily::Idle => "idle",
            BaseFamily::Squat => "squat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        BaseFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| FidelityError::Config(format!("unknown base family `{s}` (known: walk, jump, idle, squat)")))
    }
}

/// Per-clip randomization of a base family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    /// Facing direction about +z (rad).
    pub heading: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    /// Cycle length (s).
    pub period: f64,
    /// Cycle phase in [0, 1).
    pub phase: f64,
    /// Walk speed (m/s), sway amplitude or squat depth (m); unused for jumps.
    pub amplitude: f64,
}

impl BaseParams {
    pub fn sample(family: BaseFamily, rng: &mut impl Rng) -> Self {
        let (period, amplitude) = match family {
            BaseFamily::Walk => (rng.random_range(1.0..1.2), rng.random_range(0.8..1.4)),
            BaseFamily::Jump => (rng.random_range(0.5..0.7), 0.0),
            BaseFamily::Idle => (rng.random_range(2.0..4.0), rng.random_range(0.01..0.03)),
            BaseFamily::Squat => (rng.random_range(1.5..2.5), rng.random_range(0.2..0.4)),
        };
        BaseParams {
            heading: rng.random_range(0.0..TAU),
            offset_x: rng.random_range(-2.0..2.0),
            offset_y: rng.random_range(-2.0..2.0),
            period,
            phase: rng.random_range(0.0..1.0),
            amplitude,
        }
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

const STANCE: f64 = 0.6;
const SWING_HEIGHT: f64 = 0.2;
/// Horizontal foot travel is confined to this slice of the swing, where the
/// foot is well above contact height.
const SWING_TRAVEL: (f64, f64) = (0.2, 0.8);

/// Forward position and height of one walking foot at gait phase `u`.
fn walk_foot(u: f64, stride: f64) -> (f64, f64) {
    let c = u.floor();
    let ph = u - c;
    if ph < STANCE {
        return (c * stride, 0.0);
    }
    let p = (ph - STANCE) / (1.0 - STANCE);
    let s = smoothstep((p - SWING_TRAVEL.0) / (SWING_TRAVEL.1 - SWING_TRAVEL.0));
    (c * stride + s * stride, SWING_HEIGHT * (PI * p).sin())
}

/// Joint positions in the body frame (x forward, y left, z up) plus the
/// pelvis yaw relative to the heading.
struct BodyPose {
    pelvis: Vec3,
    feet: [Vec3; 2],
    hands: [Vec3; 2],
    knee_forward: f64,
    lean: f64,
    yaw: f64,
}

fn body_pose(family: BaseFamily, p: &BaseParams, time: f64) -> BodyPose {
    match family {
        BaseFamily::Walk => {
            let stride = p.amplitude * p.period;
            let u = time / p.period + p.phase;
            let (xl, zl) = walk_foot(u, stride);
            let (xr, zr) = walk_foot(u + 0.5, stride);
            let px = 0.5 * (xl + xr);
            BodyPose {
                pelvis: Vec3::new(px, 0.02 * (TAU * u).sin(), 0.95 + 0.015 * (2.0 * TAU * u).cos()),
                feet: [Vec3::new(xl, 0.1, zl), Vec3::new(xr, -0.1, zr)],
                hands: [
                    Vec3::new(px + 0.15 * (TAU * (u + 0.5)).sin(), 0.22, 0.85),
                    Vec3::new(px + 0.15 * (TAU * u).sin(), -0.22, 0.85),
                ],
                knee_forward: 0.06,
                lean: 0.03,
                yaw: 0.1 * (TAU * u).sin(),
            }
        }
        BaseFamily::Jump => {
            let s = (TAU * (time / p.period + p.phase)).sin();
            let air = s.max(0.0);
            let crouch = (-s).max(0.0);
            BodyPose {
                pelvis: Vec3::new(0.0, 0.0, 0.95 + 0.04 * air - 0.1 * crouch),
                feet: [Vec3::new(0.0, 0.12, 0.04 * air), Vec3::new(0.0, -0.12, 0.04 * air)],
                hands: [Vec3::new(0.1 * air, 0.25, 0.85 + 0.3 * air), Vec3::new(0.1 * air, -0.25, 0.85 + 0.3 * air)],
                knee_forward: 0.05 + 0.1 * crouch,
                lean: 0.02,
                yaw: 0.0,
            }
        }
        BaseFamily::Idle => {
            let a = TAU * (time / p.period + p.phase);
            let px = p.amplitude * a.sin();
            BodyPose {
                pelvis: Vec3::new(px, p.amplitude * a.cos(), 0.95 + 0.005 * (2.0 * a).sin()),
                feet: [Vec3::new(0.0, 0.12, 0.0), Vec3::new(0.0, -0.12, 0.0)],
                hands: [Vec3::new(px + 0.02 * a.cos(), 0.22, 0.85), Vec3::new(px - 0.02 * a.cos(), -0.22, 0.85)],
                knee_forward: 0.04,
                lean: 0.01,
                yaw: 0.05 * a.sin(),
            }
        }
        BaseFamily::Squat => {
            let frac = 0.5 * (1.0 - (TAU * (time / p.period + p.phase)).cos());
            let pz = 0.95 - p.amplitude * frac;
            BodyPose {
                pelvis: Vec3::new(-0.15 * frac, 0.0, pz),
                feet: [Vec3::new(0.0, 0.15, 0.0), Vec3::new(0.0, -0.15, 0.0)],
                hands: [Vec3::new(0.3 * frac, 0.22, 0.85 - 0.2 * frac), Vec3::new(0.3 * frac, -0.22, 0.85 - 0.2 * frac)],
                knee_forward: 0.1 + 0.25 * frac,
                lean: 0.03 + 0.15 * frac,
                yaw: 0.0,
            }
        }
    }
}

fn skeleton_positions(b: &BodyPose) -> [Vec3; 14] {
    let pel = b.pelvis;
    let up = |dz: f64, fwd: f64| pel + Vec3::new(fwd, 0.0, dz);
    let spine = up(0.25, b.lean * 0.4);
    let neck = up(0.5, b.lean);
    let head = up(0.67, b.lean * 1.2);
    let shoulder = |side: f64| neck + Vec3::new(0.0, 0.18 * side, -0.03);
    let hip = |side: f64| pel + Vec3::new(0.0, 0.1 * side, -0.05);
    let knee = |h: Vec3, f: Vec3| (h + f) * 0.5 + Vec3::new(b.knee_forward, 0.0, 0.0);
    let (lh, rh) = (hip(1.0), hip(-1.0));
    [
        pel,
        spine,
        neck,
        head,
        shoulder(1.0),
        b.hands[0],
        shoulder(-1.0),
        b.hands[1],
        lh,
        knee(lh, b.feet[0]),
        b.feet[0],
        rh,
        knee(rh, b.feet[1]),
        b.feet[1],
    ]
}

pub fn frame_count(fps: f64, duration_s: f64) -> usize {
    ((fps * duration_s).round() as usize).max(3)
}

/// Clean clip of a base family.
pub fn base_motion(family: BaseFamily, params: &BaseParams, fps: f64, duration_s: f64) -> Result<MotionSequence> {
    let (sin_h, cos_h) = params.heading.sin_cos();
    let heading = Quat::from_axis_angle(Vec3::z(), params.heading);
    let to_world =
        |v: Vec3| Vec3::new(cos_h * v.x - sin_h * v.y + params.offset_x, sin_h * v.x + cos_h * v.y + params.offset_y, v.z);
    let frames = (0..frame_count(fps, duration_s))
        .map(|t| {
            let pose = body_pose(family, params, t as f64 / fps);
            let positions = skeleton_positions(&pose).iter().map(|v| to_world(*v)).collect();
            let mut orientations = vec![heading; JOINT_NAMES.len()];
            orientations[0] = heading.mul(&Quat::from_axis_angle(Vec3::z(), pose.yaw));
            FramePose { positions, orientations }
        })
        .collect();
    MotionSequence::new(fps, SKELETON_ID, frames)
}

/// Per-clip context a corruption may use.
pub struct CorruptionContext<'a> {
    pub feet: &'a [usize],
    /// Facing direction of the clip (rad); sliding and teleport follow it.
    pub heading: f64,
}

/// A named artifact injected with a magnitude set by severity level.
pub trait Corruption: Send + Sync {
    fn name(&self) -> &str;
    /// Injected magnitude at `severity`: metres, or m/s for sliding.
    fn magnitude(&self, severity: u8) -> f64;
    /// Severity 0 must return the clean motion unchanged.
    fn apply(
        &self,
        clean: &MotionSequence,
        ctx: &CorruptionContext,
        severity: u8,
        rng: &mut ChaCha8Rng,
    ) -> Result<MotionSequence>;
}

struct NoCorruption;

impl Corruption for NoCorruption {
    fn name(&self) -> &str {
        "none"
    }
    fn magnitude(&self, _: u8) -> f64 {
        0.0
    }
    fn apply(&self, clean: &MotionSequence, _: &CorruptionContext, _: u8, _: &mut ChaCha8Rng) -> Result<MotionSequence> {
        Ok(clean.clone())
    }
}

/// Rigid vertical shift of the whole clip.
struct Lift {
    name: &'static str,
    per_level: f64,
}

impl Corruption for Lift {
    fn name(&self) -> &str {
        self.name
    }
    fn magnitude(&self, severity: u8) -> f64 {
        self.per_level.abs() * severity as f64
    }
    fn apply(&self, clean: &MotionSequence, _: &CorruptionContext, severity: u8, _: &mut ChaCha8Rng) -> Result<MotionSequence> {
        if severity == 0 {
            return Ok(clean.clone());
        }
        let dz = self.per_level * severity as f64;
        clean.map_positions(|_, _, p| Vec3::new(p.x, p.y, p.z + dz))
    }
}

/// Planted feet slide back and forth along the heading at a constant speed,
/// turning around every `leg_s` seconds of accumulated contact, so drift is
/// bounded however long a foot stays planted.
struct Skate {
    per_level: f64,
    leg_s: f64,
}

impl Corruption for Skate {
    fn name(&self) -> &str {
        "skate"
    }
    fn magnitude(&self, severity: u8) -> f64 {
        self.per_level * severity as f64
    }
    fn apply(&self, clean: &MotionSequence, ctx: &CorruptionContext, severity: u8, _: &mut ChaCha8Rng) -> Result<MotionSequence> {
        if severity == 0 {
            return Ok(clean.clone());
        }
        let step = self.magnitude(severity) * clean.dt();
        let leg = ((self.leg_s / clean.dt()).round() as usize).max(1);
        let dir = Vec3::new(ctx.heading.cos(), ctx.heading.sin(), 0.0);
        let mut pos = clean.positions_by_frame();
        for &f in ctx.feet {
            // contact steps taken so far; the landing frame itself does not move
            let mut k = 0usize;
            let mut prev_contact = false;
            for (t, frame) in pos.iter_mut().enumerate() {
                let contact = clean.position(t, f).z < CONTACT_HEIGHT_M;
                if contact && prev_contact {
                    k += 1;
                }
                prev_contact = contact;
                let phase = k % (2 * leg);
                let travelled = if phase <= leg { phase } else { 2 * leg - phase };
                frame[f] += dir * (step * travelled as f64);
            }
        }
        clean.with_positions(pos)
    }
}

/// Independent Gaussian noise on every coordinate.
struct Jitter {
    per_level: f64,
}

impl Corruption for Jitter {
    fn name(&self) -> &str {
        "jitter"
    }
    fn magnitude(&self, severity: u8) -> f64 {
        self.per_level * severity as f64
    }
    fn apply(&self, clean: &MotionSequence, _: &CorruptionContext, severity: u8, rng: &mut ChaCha8Rng) -> Result<MotionSequence> {
        if severity == 0 {
            return Ok(clean.clone());
        }
        let sd = self.magnitude(severity);
        clean.map_positions(|_, _, p| {
            let n = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            p + n * sd
        })
    }
}

/// The whole body jumps sideways along the heading for a few frames.
struct Teleport {
    per_level: f64,
    frames: usize,
}

impl Corruption for Teleport {
    fn name(&self) -> &str {
        "teleport"
    }
    fn magnitude(&self, severity: u8) -> f64 {
        self.per_level * severity as f64
    }
    fn apply(&self, clean: &MotionSequence, ctx: &CorruptionContext, severity: u8, rng: &mut ChaCha8Rng) -> Result<MotionSequence> {
        let n = clean.frame_count();
        if n < self.frames + 2 {
            return Err(FidelityError::Config(format!("teleport needs more than {} frames", self.frames + 1)));
        }
        // drawn before the severity check so every level shares the burst
        let start = rng.random_range(1..n - self.frames);
        if severity == 0 {
            return Ok(clean.clone());
        }
        let shift = Vec3::new(ctx.heading.cos(), ctx.heading.sin(), 0.0) * self.magnitude(severity);
        clean.map_positions(|t, _, p| if (start..start + self.frames).contains(&t) { p + shift } else { p })
    }
}

/// Built-in corruptions: `float`, `penetrate`, `skate`, `jitter`,
/// `teleport` and `none`.
pub fn corruption_registry() -> Registry<dyn Corruption> {
    let mut r: Registry<dyn Corruption> = Registry::new("corruption");
    let items: Vec<Arc<dyn Corruption>> = vec![
        Arc::new(NoCorruption),
        Arc::new(Lift { name: "float", per_level: 0.02 }),
        Arc::new(Lift { name: "penetrate", per_level: -0.02 }),
        Arc::new(Skate { per_level: 0.15, leg_s: 0.25 }),
        Arc::new(Jitter { per_level: 0.01 }),
        Arc::new(Teleport { per_level: 0.1, frames: 6 }),
    ];
    for c in items {
        r.register(c.name().to_string(), c);
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub label: String,
    pub family: BaseFamily,
    pub collection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub prompts: Vec<PromptSpec>,
    pub motions_per_prompt: usize,
    /// Corruptions drawn for motions with severity above 0.
    pub corruptions: Vec<String>,
    pub max_severity: u8,
    pub fps: f64,
    pub duration_s: f64,
}

pub const DEFAULT_CORRUPTIONS: [&str; 5] = ["float", "penetrate", "skate", "jitter", "teleport"];

impl SynthSpec {
    /// `prompts` groups cycling through the base families; the first
    /// `detailed` prompts form collection `A`, the rest `B`.
    pub fn uniform(prompts: usize, detailed: usize, motions_per_prompt: usize) -> Self {
        SynthSpec {
            prompts: (0..prompts)
                .map(|i| {
                    let family = BaseFamily::ALL[i % BaseFamily::ALL.len()];
                    PromptSpec {
                        label: format!("{}-{i:02}", family.name()),
                        family,
                        collection: if i < detailed { "A".into() } else { "B".into() },
                    }
                })
                .collect(),
            motions_per_prompt,
            corruptions: DEFAULT_CORRUPTIONS.iter().map(|s| s.to_string()).collect(),
            max_severity: 5,
            fps: 30.0,
            duration_s: 2.0,
        }
    }

    /// 20 prompts of 8 motions each.
    pub fn standard() -> Self {
        Self::uniform(20, 12, 8)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(FidelityError::Config("synth spec needs at least one prompt".into()));
        }
        if self.motions_per_prompt < 2 {
            return Err(FidelityError::Config("motions_per_prompt must be at least 2".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite() && self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(FidelityError::Config("fps and duration_s must be positive".into()));
        }
        if frame_count(self.fps, self.duration_s) < 10 {
            return Err(FidelityError::Config("clips need at least 10 frames".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for p in &self.prompts {
            if p.label.is_empty() || p.label.contains(['/', '\\', ',']) || !labels.insert(&p.label) {
                return Err(FidelityError::Config(format!("invalid or duplicate prompt label `{}`", p.label)));
            }
        }
        if self.max_severity > 0 && self.corruptions.is_empty() {
            return Err(FidelityError::Config("no corruptions to draw from".into()));
        }
        let reg = corruption_registry();
        for c in &self.corruptions {
            reg.get(c)?;
        }
        Ok(())
    }
}

/// Everything needed to regenerate one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRecipe {
    pub id: String,
    pub prompt: String,
    pub collection: String,
    pub family: BaseFamily,
    pub params: BaseParams,
    pub corruption: String,
    pub severity: u8,
    pub noise_seed: u64,
}

impl MotionRecipe {
    pub fn realize(&self, spec: &SynthSpec, skeleton: &Skeleton) -> Result<(MotionSequence, MotionSequence, f64)> {
        let clean = base_motion(self.family, &self.params, spec.fps, spec.duration_s)?;
        let corruption = corruption_registry().get(&self.corruption)?;
        let ctx = CorruptionContext { feet: &skeleton.foot_indices, heading: self.params.heading };
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let motion = corruption.apply(&clean, &ctx, self.severity, &mut rng)?;
        Ok((motion, clean, corruption.magnitude(self.severity)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMotion {
    pub recipe: MotionRecipe,
    pub magnitude: f64,
    pub motion: MotionSequence,
    /// The uncorrupted clip, used as the pose-metric reference.
    pub reference: MotionSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub seed: u64,
    pub skeleton: Skeleton,
    /// Sorted by id.
    pub motions: Vec<SynthMotion>,
    pub pairs: Vec<MotionPair>,
}

/// Lower severity is better when both clips share a corruption, or when
/// the better clip is clean.
fn group_pairs(group: &[&MotionRecipe]) -> Vec<MotionPair> {
    let mut out = Vec::new();
    for a in group {
        for b in group {
            if a.severity < b.severity && (a.corruption == b.corruption || a.severity == 0) {
                out.push(MotionPair::new(&a.id, &b.id, &a.prompt));
            }
        }
    }
    out
}

pub fn draw_recipes(spec: &SynthSpec, seed: u64) -> Vec<MotionRecipe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for p in &spec.prompts {
        for m in 0..spec.motions_per_prompt {
            let params = BaseParams::sample(p.family, &mut rng);
            let severity = if m == 0 || spec.max_severity == 0 { 0 } else { rng.random_range(0..=spec.max_severity) };
            let pick = rng.random_range(0..spec.corruptions.len().max(1));
            let corruption = if severity == 0 { "none".to_string() } else { spec.corruptions[pick].clone() };
            out.push(MotionRecipe {
                id: format!("{}_{m:02}", p.label),
                prompt: p.label.clone(),
                collection: p.collection.clone(),
                family: p.family,
                params,
                corruption,
                severity,
                noise_seed: rng.random(),
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Deterministic benchmark for `seed`: recipes are drawn sequentially, clips
/// are built in parallel and merged in id order.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let skeleton = synth_skeleton();
    let recipes = draw_recipes(spec, seed);
    let motions = recipes
        .into_par_iter()
        .map(|recipe| {
            let (motion, reference, magnitude) = recipe.realize(spec, &skeleton)?;
            Ok(SynthMotion { recipe, magnitude, motion, reference })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut groups: BTreeMap<&str, Vec<&MotionRecipe>> = BTreeMap::new();
    for m in &motions {
        groups.entry(&m.recipe.prompt).or_default().push(&m.recipe);
    }
    let mut pairs: Vec<MotionPair> = groups.values().flat_map(|g| group_pairs(g)).collect();
    pairs.sort();
    Ok(SynthDataset { spec: spec.clone(), seed, skeleton, motions, pairs })
}

/// One clean clip and its corrupted copies at severities `0..=max_severity`,
/// all sharing base parameters and noise draws.
pub fn severity_ladder(
    family: BaseFamily,
    params: &BaseParams,
    corruption: &str,
    max_severity: u8,
    fps: f64,
    duration_s: f64,
    noise_seed: u64,
) -> Result<Vec<MotionSequence>> {
    let clean = base_motion(family, params, fps, duration_s)?;
    let c = corruption_registry().get(corruption)?;
    let skeleton = synth_skeleton();
    let ctx = CorruptionContext { feet: &skeleton.foot_indices, heading: params.heading };
    (0..=max_severity)
        .map(|s| c.apply(&clean, &ctx, s, &mut ChaCha8Rng::seed_from_u64(noise_seed)))
        .collect()
}

pub const PAIRS_HEADER: [&str; 3] = ["better_id", "worse_id", "prompt"];
pub const MANIFEST_HEADER: [&str; 5] = ["motion_id", "prompt", "family", "severity", "magnitude"];
pub const PROMPTS_HEADER: [&str; 3] = ["prompt", "base_family", "collection"];

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| FidelityError::Invariant(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(ser)?;
    for r in rows {
        w.write_record(&r).map_err(ser)?;
    }
    w.into_inner().map_err(|e| FidelityError::Invariant(format!("csv encoding failed: {e}")))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| FidelityError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| FidelityError::io(path, e))
}

impl SynthDataset {
    pub fn motion_list(&self) -> Vec<(String, MotionSequence)> {
        self.motions.iter().map(|m| (m.recipe.id.clone(), m.motion.clone())).collect()
    }

    pub fn pairs_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &PAIRS_HEADER,
            self.pairs.iter().map(|p| vec![p.better_id.clone(), p.worse_id.clone(), p.prompt.clone()]),
        )
    }

    pub fn manifest_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &MANIFEST_HEADER,
            self.motions.iter().map(|m| {
                let r = &m.recipe;
                vec![r.id.clone(), r.prompt.clone(), r.corruption.clone(), r.severity.to_string(), m.magnitude.to_string()]
            }),
        )
    }

    pub fn prompts_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &PROMPTS_HEADER,
            self.spec.prompts.iter().map(|p| vec![p.label.clone(), p.family.name().into(), p.collection.clone()]),
        )
    }

    /// Writes `skeleton.json`, `motions/`, `references/`, `pairs.csv`,
    /// `manifest.csv`, `prompts.csv` and `recipes.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(&dir.join("motions"))?;
        create_dir(&dir.join("references"))?;
        save_skeleton(&self.skeleton, dir.join("skeleton.json"))?;
        for m in &self.motions {
            let file = format!("{}.json", m.recipe.id);
            save_motion(&m.motion, dir.join("motions").join(&file))?;
            save_motion(&m.reference, dir.join("references").join(&file))?;
        }
        write_file(&dir.join("pairs.csv"), &self.pairs_csv()?)?;
        write_file(&dir.join("manifest.csv"), &self.manifest_csv()?)?;
        write_file(&dir.join("prompts.csv"), &self.prompts_csv()?)?;
        let recipes: Vec<&MotionRecipe> = self.motions.iter().map(|m| &m.recipe).collect();
        let doc = serde_json::json!({ "seed": self.seed, "spec": self.spec, "recipes": recipes });
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| FidelityError::Invariant(format!("recipe encoding failed: {e}")))?;
        write_file(&dir.join("recipes.json"), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mofid_core::physics_metrics::{floating, penetration, skating, PhysicsHeuristicConfig};

    fn ladder(family: BaseFamily, corruption: &str, seed: u64) -> Vec<MotionSequence> {
        let params = BaseParams::sample(family, &mut ChaCha8Rng::seed_from_u64(seed));
        severity_ladder(family, &params, corruption, 5, 30.0, 2.0, seed).unwrap()
    }

    #[test]
    fn clean_clips_read_zero_on_every_heuristic() {
        let cfg = PhysicsHeuristicConfig::default();
        let sk = synth_skeleton();
        for seed in 0..20 {
            for family in BaseFamily::ALL {
                let m = &ladder(family, "none", seed)[0];
                assert_eq!(penetration(m, &cfg), 0.0, "{family:?}");
                assert_eq!(floating(m, &cfg), 0.0, "{family:?}");
                assert_eq!(skating(m, &sk, &cfg).unwrap(), 0.0, "{family:?} seed {seed}");
            }
        }
    }

    #[test]
    fn float_matches_lift() {
        let cfg = PhysicsHeuristicConfig::default();
        let reg = corruption_registry();
        let lift = reg.get("float").unwrap();
        for (s, m) in ladder(BaseFamily::Walk, "float", 3).iter().enumerate() {
            let h = 0.02 * s as f64;
            assert!((lift.magnitude(s as u8) - h).abs() < 1e-15);
            assert!((floating(m, &cfg) - (h - 0.05).max(0.0)).abs() < 1e-12, "severity {s}");
        }
    }

    #[test]
    fn matched_heuristics_grow_with_severity() {
        let cfg = PhysicsHeuristicConfig::default();
        let sk = synth_skeleton();
        for family in BaseFamily::ALL {
            let pen: Vec<f64> = ladder(family, "penetrate", 1).iter().map(|m| penetration(m, &cfg)).collect();
            let sk8: Vec<f64> = ladder(family, "skate", 1).iter().map(|m| skating(m, &sk, &cfg).unwrap()).collect();
            for w in pen.windows(2).chain(sk8.windows(2)) {
                assert!(w[1] > w[0], "{family:?}: {pen:?} {sk8:?}");
            }
        }
    }

    #[test]
    fn severity_zero_is_identity_for_every_corruption() {
        let reg = corruption_registry();
        for name in reg.names() {
            let l = ladder(BaseFamily::Squat, &name, 5);
            assert_eq!(l[0], ladder(BaseFamily::Squat, "none", 5)[0], "{name}");
        }
    }

    #[test]
    fn generation_is_deterministic_and_pairs_are_within_prompt() {
        let spec = SynthSpec::uniform(4, 2, 6);
        let a = generate(&spec, 9).unwrap();
        let b = generate(&spec, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&spec, 10).unwrap());
        assert_eq!(a.motions.len(), 24);
        let by_id: BTreeMap<&str, &MotionRecipe> = a.motions.iter().map(|m| (m.recipe.id.as_str(), &m.recipe)).collect();
        assert!(!a.pairs.is_empty());
        for p in &a.pairs {
            let (x, y) = (by_id[p.better_id.as_str()], by_id[p.worse_id.as_str()]);
            assert_eq!(x.prompt, y.prompt);
            assert!(x.severity < y.severity);
        }
        for m in &a.motions {
            if m.recipe.id.ends_with("_00") {
                assert_eq!(m.recipe.severity, 0);
            }
            if m.recipe.severity == 0 {
                assert_eq!(m.motion, m.reference);
            }
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = SynthSpec::standard();
        assert!(s.validate().is_ok());
        s.corruptions.push("melt".into());
        assert!(matches!(s.validate(), Err(FidelityError::Config(_))));
        let mut s = SynthSpec::standard();
        s.motions_per_prompt = 1;
        assert!(s.validate().is_err());
        let mut s = SynthSpec::standard();
        s.prompts[1].label = s.prompts[0].label.clone();
        assert!(s.validate().is_err());
    }
}
