//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (bypassing output capture) and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mofid_core::annotator::{
    check_constraints, imitation_reward, physical_error, project_to_physical, ProjectionConfig, RewardWeights,
};
use mofid_core::losses::{
    critic_loss, grad_check, kl_loss, pearson_loss, perceptual_loss, total_loss, CriticConvention, LossConfig,
};
use mofid_core::pose_metrics::{mpjpe, pa_mpjpe};
use mofid_core::stats::{krocc, plcc, srocc, CorrelationReport};
use mofid_core::scorer::TrainingConfig;
use mofid_core::{FidelityError, FramePose, MotionSequence, Quat, Vec3};
use mofid_harness::config::RunConfig;
use mofid_harness::experiment::{AnnotatedSet, Benchmark, BenchmarkConfig};
use mofid_harness::pipeline;
use mofid_harness::synth::{
    severity_ladder, synth_skeleton, BaseFamily, BaseParams, MotionRecipe, SynthSpec, DEFAULT_CORRUPTIONS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("acceptance criterion {n:>2} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

// ---- independent oracles -------------------------------------------------

fn pearson_oracle(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Average ranks by counting, O(n^2).
fn ranks_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

fn spearman_closed_form(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks_oracle(a), ranks_oracle(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn tau_a_oracle(a: &[f64], b: &[f64]) -> f64 {
    let sgn = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += sgn(a[i] - a[j]) * sgn(b[i] - b[j]);
        }
    }
    s / (n * (n - 1) / 2) as f64
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

fn has_ties(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

#[test]
fn criterion_01_correlation_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut mismatches = Vec::new();
    for trial in 0..1000 {
        let n = rng.random_range(2..=200);
        let tied = trial % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| if tied { rng.random_range(0..6) as f64 } else { rng.random_range(-10.0..10.0) }).collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));

        let p = plcc(&a, &b);
        match (is_constant(&a), is_constant(&b)) {
            (true, true) => {
                if !matches!(p, Err(FidelityError::DegenerateInput(_))) {
                    mismatches.push(format!("trial {trial}: plcc of two constants = {p:?}"));
                }
            }
            (true, false) | (false, true) => {
                if p.as_ref().ok() != Some(&0.0) {
                    mismatches.push(format!("trial {trial}: plcc with one constant = {p:?}"));
                }
            }
            _ => worst = worst.max((p.unwrap() - pearson_oracle(&a, &b).unwrap()).abs()),
        }

        let s = srocc(&a, &b);
        match pearson_oracle(&ranks_oracle(&a), &ranks_oracle(&b)) {
            None => {
                if s.is_ok() {
                    mismatches.push(format!("trial {trial}: srocc defined on constant ranks"));
                }
            }
            Some(o) => {
                let s = s.unwrap();
                worst = worst.max((s - o).abs());
                if !has_ties(&a) && !has_ties(&b) {
                    worst = worst.max((s - spearman_closed_form(&a, &b)).abs());
                }
            }
        }

        worst = worst.max((krocc(&a, &b).unwrap() - tau_a_oracle(&a, &b)).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-10 && mismatches.is_empty() && elapsed < Duration::from_secs(10);
    verdict(
        1,
        "correlation oracle equivalence",
        pass,
        &format!("1000 pairs, max |diff| {worst:.2e}, {} semantic mismatches, {elapsed:.2?}", mismatches.len()),
    );
}

#[test]
fn criterion_02_hand_computed_anchors() {
    let (a, b) = ([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]);
    let (p, s, k) = (plcc(&a, &b).unwrap(), srocc(&a, &b).unwrap(), krocc(&a, &b).unwrap());
    let pass = (p - 0.8).abs() <= 1e-12 && (s - 0.8).abs() <= 1e-12 && (k - 2.0 / 3.0).abs() <= 1e-12;
    verdict(2, "hand-computed anchors", pass, &format!("plcc {p}, srocc {s}, krocc {k}"));
}

#[test]
fn criterion_03_gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let step = 1e-5;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for _ in 0..100 {
        let k = rng.random_range(1..10);
        let x: Vec<f64> = (0..2 * k).map(|_| rng.random_range(-4.0..4.0)).collect();
        note(
            "perceptual",
            grad_check(
                |v| {
                    let r = perceptual_loss(&v[..k], &v[k..]).unwrap();
                    (r.value, r.grad)
                },
                &x,
                step,
            ),
        );

        let n = rng.random_range(3..20);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let targ: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        note(
            "pearson",
            grad_check(
                |v| {
                    let r = pearson_loss(v, &targ).unwrap();
                    (r.value, r.grad)
                },
                &pred,
                step,
            ),
        );

        let pairs: Vec<(usize, usize)> = (0..rng.random_range(0..8))
            .map(|_| {
                let h = rng.random_range(0..n);
                let l = (h + rng.random_range(1..n)) % n;
                (h, l)
            })
            .collect();
        let cfg = LossConfig { lambda: rng.random_range(0.0..2.0), ..LossConfig::default() };
        note(
            "total",
            grad_check(
                |v| {
                    let r = total_loss(v, &pairs, &targ, &cfg).unwrap();
                    (r.value, r.grad)
                },
                &pred,
                step,
            ),
        );

        for convention in [CriticConvention::Literal, CriticConvention::Flipped] {
            let cfg = LossConfig { tau: rng.random_range(-1.0..1.0), critic_convention: convention, ..LossConfig::default() };
            note(
                "critic",
                grad_check(
                    |v| {
                        let r = critic_loss(v, &cfg).unwrap();
                        (r.value, r.grad)
                    },
                    &pred,
                    step,
                ),
            );
        }
    }
    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    let pass = max < 1e-5 && elapsed < Duration::from_secs(30);
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.2e}")).collect();
    verdict(3, "gradient suite", pass, &format!("100 points each, max rel err: {}, {elapsed:.2?}", detail.join(", ")));
}

#[test]
fn criterion_04_loss_anchors() {
    let lp = perceptual_loss(&[0.7], &[0.7]).unwrap().value;
    let kl_shift = kl_loss(&[-1.0, 1.0], &[0.0, 2.0]).unwrap();
    let kl_scale = kl_loss(&[-1.0, 1.0], &[-2.0, 2.0]).unwrap();
    let expected = 2f64.ln() - 3.0 / 8.0;
    let pass = (lp - 2f64.ln()).abs() <= 1e-12 && (kl_shift - 0.5).abs() <= 1e-12 && (kl_scale - expected).abs() <= 1e-12;
    verdict(4, "loss anchors", pass, &format!("perceptual(0) {lp}, kl shift {kl_shift}, kl scale {kl_scale} (want {expected})"));
}

fn motion_from_positions(fps: f64, pos: Vec<Vec<Vec3>>) -> MotionSequence {
    let frames = pos
        .into_iter()
        .map(|p| {
            let n = p.len();
            FramePose { positions: p, orientations: vec![Quat::IDENTITY; n] }
        })
        .collect();
    MotionSequence::new(fps, "random", frames).unwrap()
}

fn random_motion(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> MotionSequence {
    motion_from_positions(
        30.0,
        (0..frames)
            .map(|_| {
                (0..joints)
                    .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)))
                    .collect()
            })
            .collect(),
    )
}

#[test]
fn criterion_05_pose_metric_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_pa = 0.0f64;
    let mut violations = 0;
    let mut worst_shift = 0.0f64;
    for _ in 0..100 {
        let a = random_motion(&mut rng, 5, 8);
        let q = Quat::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            .normalized();
        let s = rng.random_range(0.5..2.0);
        let t = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let b = a.map_positions(|_, _, p| q.rotate(&p) * s + t).unwrap();
        worst_pa = worst_pa.max(pa_mpjpe(&b, &a).unwrap());

        let c = random_motion(&mut rng, 5, 8);
        if pa_mpjpe(&c, &a).unwrap() > mpjpe(&c, &a).unwrap() {
            violations += 1;
        }
        let shift = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let (ca, cs) = (c.map_positions(|_, _, p| p + shift).unwrap(), a.map_positions(|_, _, p| p + shift).unwrap());
        worst_shift = worst_shift.max((mpjpe(&ca, &cs).unwrap() - mpjpe(&c, &a).unwrap()).abs());
    }
    let pass = worst_pa <= 1e-8 && violations == 0 && worst_shift <= 1e-12;
    verdict(
        5,
        "pose-metric invariances",
        pass,
        &format!("max pa_mpjpe of similarity copy {worst_pa:.2e} mm, pa>mpjpe in {violations}/100 random pairs, translation drift {worst_shift:.2e}"),
    );
}

/// `count` corrupted clips cycling through base families, corruptions and
/// severities 1-5.
fn corrupted_recipes(count: usize, seed: u64) -> Vec<MotionRecipe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let family = BaseFamily::ALL[k % 4];
            MotionRecipe {
                id: format!("c{k:03}"),
                prompt: family.name().into(),
                collection: "A".into(),
                family,
                params: BaseParams::sample(family, &mut rng),
                corruption: DEFAULT_CORRUPTIONS[(k / 4) % DEFAULT_CORRUPTIONS.len()].into(),
                severity: 1 + ((k / 20) % 5) as u8,
                noise_seed: rng.random(),
            }
        })
        .collect()
}

#[test]
fn criterion_06_projection_feasibility() {
    let start = Instant::now();
    let spec = SynthSpec::standard();
    let sk = synth_skeleton();
    let cfg = ProjectionConfig::default();
    let tol = cfg.constraint_tolerance_m;
    let (mut feasible, mut flagged, mut unflagged_failures) = (0, 0, 0);
    let mut worst_idem = 0.0f64;
    // sequential on purpose: the budget is for one core
    for r in corrupted_recipes(500, 606) {
        let (x, _, _) = r.realize(&spec, &sk).unwrap();
        let p = project_to_physical(&x, &sk.foot_indices, &cfg).unwrap();
        let ok = check_constraints(&p.motion, &sk.foot_indices, &cfg).feasible;
        if p.converged && ok {
            feasible += 1;
            let again = project_to_physical(&p.motion, &sk.foot_indices, &cfg).unwrap();
            worst_idem = worst_idem.max(physical_error(&p.motion, &again.motion).unwrap());
        } else if matches!(p.into_result(), Err(FidelityError::NonConvergence { .. })) {
            flagged += 1;
        } else {
            unflagged_failures += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = feasible >= 495 && unflagged_failures == 0 && worst_idem < 10.0 * tol && elapsed < Duration::from_secs(300);
    verdict(
        6,
        "projection feasibility",
        pass,
        &format!("{feasible}/500 feasible, {flagged} flagged NonConvergence, {unflagged_failures} unflagged, max idempotence e_p {worst_idem:.2e} m, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_07_annotation_fidelity() {
    let sk = synth_skeleton();
    let cfg0 = ProjectionConfig { smoothness_weight: 0.0, ..ProjectionConfig::default() };
    let h = 0.1;
    let mut worst_closed = 0.0f64;
    for (i, family) in BaseFamily::ALL.into_iter().enumerate() {
        let params = BaseParams::sample(family, &mut ChaCha8Rng::seed_from_u64(i as u64));
        let clean = &severity_ladder(family, &params, "none", 0, 30.0, 2.0, 0).unwrap()[0];
        let lifted = clean.map_positions(|_, _, p| p + Vec3::new(0.0, 0.0, h)).unwrap();
        let p = project_to_physical(&lifted, &sk.foot_indices, &cfg0).unwrap();
        let e = physical_error(&lifted, &p.motion).unwrap();
        let closed = h * ((lifted.joint_count() * lifted.frame_count()) as f64).sqrt();
        worst_closed = worst_closed.max((e - closed).abs());
    }

    let cfg = ProjectionConfig::default();
    let mut spearman: BTreeMap<&str, f64> = BTreeMap::new();
    for corruption in DEFAULT_CORRUPTIONS {
        let (mut e_p, mut sev) = (Vec::new(), Vec::new());
        for family in BaseFamily::ALL {
            for seed in 0..3u64 {
                let params = BaseParams::sample(family, &mut ChaCha8Rng::seed_from_u64(700 + seed));
                let ladder = severity_ladder(family, &params, corruption, 5, 30.0, 2.0, seed).unwrap();
                for (s, m) in ladder.iter().enumerate() {
                    let p = project_to_physical(m, &sk.foot_indices, &cfg).unwrap();
                    e_p.push(physical_error(m, &p.motion).unwrap());
                    sev.push(s as f64);
                }
            }
        }
        spearman.insert(corruption, srocc(&e_p, &sev).unwrap());
    }
    let min_rho = spearman.values().copied().fold(f64::INFINITY, f64::min);

    let set = AnnotatedSet::build(&SynthSpec::standard(), 0, &cfg).unwrap();
    let scores: Vec<f64> = set.annotations.iter().map(|a| a.physical_score).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();

    let pass = worst_closed <= 1e-6 && min_rho >= 0.9 && mean.abs() <= 1e-9 && (std - 1.0).abs() <= 1e-9;
    let rho: Vec<String> = spearman.iter().map(|(k, v)| format!("{k} {v:.3}")).collect();
    verdict(
        7,
        "annotation fidelity",
        pass,
        &format!("levitation closed-form err {worst_closed:.2e}; Spearman(e_p, severity): {}; scores mean {mean:.1e} std {std:.12}", rho.join(", ")),
    );
}

#[test]
fn criterion_08_reward_anchor() {
    let params = BaseParams::sample(BaseFamily::Walk, &mut ChaCha8Rng::seed_from_u64(8));
    let x = &severity_ladder(BaseFamily::Walk, &params, "none", 0, 30.0, 2.0, 0).unwrap()[0];
    let w = RewardWeights::default();
    let same = imitation_reward(x, x, &w).unwrap();
    let shifted = x.map_positions(|_, _, p| p + Vec3::new(0.01, 0.0, 0.0)).unwrap();
    let r = imitation_reward(x, &shifted, &w).unwrap();
    let expected = 0.25 * (-1f64).exp() + 0.75;
    let worst = r.per_frame.iter().map(|v| (v - expected).abs()).fold((r.mean - expected).abs(), f64::max);
    let pass = same.mean == 1.0 && same.per_frame.iter().all(|v| *v == 1.0) && worst <= 1e-12;
    verdict(8, "reward anchor", pass, &format!("self reward {}, 0.01 m shift deviates by {worst:.2e} from {expected}", same.mean));
}

struct SeedOutcome {
    seed: u64,
    pearson: CorrelationReport,
    mse: CorrelationReport,
    mixed: CorrelationReport,
    heuristics: Vec<CorrelationReport>,
    pearson_time: Duration,
}

fn benchmark_outcomes() -> &'static [SeedOutcome] {
    static CELL: OnceLock<Vec<SeedOutcome>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = BenchmarkConfig::default();
        SEEDS
            .iter()
            .map(|&seed| {
                let start = Instant::now();
                let b = Benchmark::prepare(seed, &cfg).unwrap();
                let base = cfg.training.clone();
                let pearson = b.train_and_evaluate(&base, "pearson").unwrap().held_out;
                let pearson_time = start.elapsed();
                let mse = b.train_and_evaluate(&TrainingConfig { objective: "mse".into(), ..base.clone() }, "mse").unwrap();
                let mixed = b.train_and_evaluate(&TrainingConfig { prompt_categorized: false, ..base }, "mixed").unwrap();
                SeedOutcome {
                    seed,
                    pearson,
                    mse: mse.held_out,
                    mixed: mixed.held_out,
                    heuristics: b.heuristic_reports().unwrap(),
                    pearson_time,
                }
            })
            .collect()
    })
}

#[test]
fn criterion_09_training_beats_heuristics() {
    let mut lines = Vec::new();
    let mut pass = true;
    for o in benchmark_outcomes() {
        let p = o.pearson.total.plcc.unwrap_or(f64::NAN);
        let acc = o.pearson.pairwise_accuracy.unwrap_or(f64::NAN);
        let (best_name, best) = o
            .heuristics
            .iter()
            .map(|h| (h.source.as_str(), h.total.plcc.unwrap_or(f64::NEG_INFINITY)))
            .fold(("none", f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let ok = p >= 0.8 && acc >= 0.9 && p > best && o.pearson_time < Duration::from_secs(300);
        pass &= ok;
        lines.push(format!("seed {} plcc {p:.3} acc {acc:.3} best heuristic {best_name} {best:.3} ({:.1?})", o.seed, o.pearson_time));
    }
    verdict(9, "desk-scale training analogue", pass, &lines.join("; "));
}

#[test]
fn criterion_10_ablations() {
    let (mut loss_wins, mut batch_wins, mut plcc_wins) = (0, 0, 0);
    let mut lines = Vec::new();
    for o in benchmark_outcomes() {
        let (p, m, x) = (&o.pearson.total, &o.mse.total, &o.mixed.total);
        let loss_win = p.srocc > m.srocc && p.krocc > m.krocc;
        let batch_win = p.plcc > x.plcc;
        loss_wins += loss_win as usize;
        batch_wins += batch_win as usize;
        plcc_wins += (p.plcc > m.plcc) as usize;
        let f = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
        lines.push(format!(
            "seed {}: srocc/krocc pearson {}/{} vs mse {}/{}, plcc categorized {} vs mixed {}",
            o.seed,
            f(p.srocc),
            f(p.krocc),
            f(m.srocc),
            f(m.krocc),
            f(p.plcc),
            f(x.plcc)
        ));
    }
    let pass = loss_wins >= 4 && batch_wins >= 4;
    verdict(
        10,
        "desk-scale ablation analogue",
        pass,
        &format!(
            "pearson beats mse on {loss_wins}/5 seeds (plcc on {plcc_wins}/5), categorized beats mixed on {batch_wins}/5; {}",
            lines.join("; ")
        ),
    );
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn full_pipeline(root: &Path, seed: u64) {
    let mut cfg = RunConfig::default();
    cfg.paths.dataset_dir = root.join("data");
    cfg.paths.output_dir = root.join("out");
    cfg.training.seed = seed;
    pipeline::run_synth(&cfg, seed).unwrap();
    pipeline::run_annotate(&cfg).unwrap();
    pipeline::run_train(&cfg).unwrap();
    pipeline::run_eval(&cfg, "all").unwrap();
    pipeline::run_eval(&cfg, "physical").unwrap();
    pipeline::run_report(&cfg).unwrap();
}

#[test]
fn criterion_11_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_pipeline(a.path(), 11);
    full_pipeline(b.path(), 11);
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
    let pass = ta.len() == tb.len() && differing.is_empty() && ta.contains_key("out/report.md") && ta.contains_key("out/model.json");
    verdict(11, "determinism", pass, &format!("{} artifacts compared, {} differ {differing:?}", ta.len(), differing.len()));
}
