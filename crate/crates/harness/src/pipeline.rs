//! File-based stages: synth, annotate, train, eval and report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use mofid_core::annotator::{annotate_dataset, annotations_to_csv, PhysicalAnnotation};
use mofid_core::features::extract_features;
use mofid_core::metrics::{metric_registry, FidelityMetric, MetricInput, MetricKind};
use mofid_core::physics_metrics::PhysicsHeuristicReport;
use mofid_core::pose_metrics::PoseMetricReport;
use mofid_core::scorer::{predict_scores, train, ScorerModel, TrainingItem, TrainingLog};
use mofid_core::stats::{CorrelationReport, ScoredMotion};
use mofid_core::{FidelityError, Result};
use rayon::prelude::*;

use crate::config::{ReportFormat, RunConfig};
use crate::dataset::{load_annotations, DiskDataset};
use crate::report;
use crate::synth::{create_dir, generate, write_file, SynthDataset};

pub const MODEL_SOURCE: &str = "model";
pub const PHYSICAL_SOURCE: &str = "physical";
pub const MODEL_LABEL: &str = "Learned scorer";
pub const PHYSICAL_LABEL: &str = "Physical annotation";
pub const PHYSICS_TABLE: &str = "physics_heuristics.csv";
pub const POSE_TABLE: &str = "pose_metrics.csv";

/// Generates the benchmark for `seed` into `paths.dataset_dir`.
pub fn run_synth(cfg: &RunConfig, seed: u64) -> Result<SynthDataset> {
    let ds = generate(&cfg.synth.spec(), seed)?;
    ds.write(&cfg.paths.dataset_dir)?;
    info!("wrote {} motions and {} pairs to {}", ds.motions.len(), ds.pairs.len(), cfg.paths.dataset_dir.display());
    Ok(ds)
}

fn check_normalized(rows: &[PhysicalAnnotation]) -> Result<()> {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.physical_score).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.physical_score - mean).powi(2)).sum::<f64>() / n;
    if mean.abs() > 1e-9 || (var.sqrt() - 1.0).abs() > 1e-9 {
        return Err(FidelityError::Invariant(format!(
            "physical scores have mean {mean} and std {} after normalization",
            var.sqrt()
        )));
    }
    Ok(())
}

/// Projects every motion of the dataset and writes the annotation CSV.
pub fn run_annotate(cfg: &RunConfig) -> Result<Vec<PhysicalAnnotation>> {
    cfg.annotator.validate()?;
    let ds = DiskDataset::load(&cfg.paths.dataset_dir)?;
    let rows = annotate_dataset(&ds.motions, &ds.skeleton.foot_indices, &cfg.annotator)?;
    check_normalized(&rows)?;
    let failed = rows.iter().filter(|r| !r.converged).count();
    if failed > 0 {
        warn!("{failed} of {} projections did not reach a feasible motion", rows.len());
    }
    let path = cfg.paths.annotations_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_file(&path, annotations_to_csv(&rows).as_bytes())?;
    info!("wrote {} annotations to {}", rows.len(), path.display());
    Ok(rows)
}

fn annotation_map(ds: &DiskDataset, cfg: &RunConfig) -> Result<BTreeMap<String, f64>> {
    let rows = load_annotations(&cfg.paths.annotations_path())?;
    let map: BTreeMap<String, f64> = rows.into_iter().map(|r| (r.motion_id, r.physical_score)).collect();
    if let Some((id, _)) = ds.motions.iter().find(|(id, _)| !map.contains_key(id)) {
        return Err(FidelityError::MissingScore(id.clone()));
    }
    Ok(map)
}

/// Trains a scorer on the dataset and its annotations; writes `model.json`
/// and `training_log.csv` to the output directory.
pub fn run_train(cfg: &RunConfig) -> Result<(ScorerModel, TrainingLog)> {
    cfg.training.validate()?;
    let ds = DiskDataset::load(&cfg.paths.dataset_dir)?;
    let targets = annotation_map(&ds, cfg)?;
    let items = ds
        .motions
        .par_iter()
        .map(|(id, m)| {
            Ok(TrainingItem {
                id: id.clone(),
                prompt: ds.prompt_of(id).to_string(),
                features: extract_features(m, &ds.skeleton, &cfg.training.features)?,
                target: targets[id],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (model, log) = train(&items, &ds.pairs, &cfg.training)?;
    let out = &cfg.paths.output_dir;
    create_dir(out)?;
    let model_path = cfg.paths.model_path();
    if let Some(parent) = model_path.parent() {
        create_dir(parent)?;
    }
    write_file(&model_path, model.to_json()?.as_bytes())?;
    write_file(&out.join("training_log.csv"), log.to_csv().as_bytes())?;
    if let Some(last) = log.epochs.last() {
        info!("trained {} epochs (lr {}), final loss {}", log.epochs.len(), cfg.training.learning_rate, last.total);
    }
    Ok((model, log))
}

fn load_model(path: &Path) -> Result<ScorerModel> {
    if !path.is_file() {
        return Err(FidelityError::Config(format!("model {} not found; run `train` first", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| FidelityError::io(path, e))?;
    ScorerModel::from_json(&text, path)
}

fn metric_scores(ds: &DiskDataset, metric: &dyn FidelityMetric) -> Result<BTreeMap<String, f64>> {
    ds.motions
        .par_iter()
        .map(|(id, m)| {
            let input = MetricInput { motion: m, skeleton: &ds.skeleton, reference: ds.references.get(id) };
            Ok((id.clone(), metric.score(&input)?))
        })
        .collect()
}

fn has_all_references(ds: &DiskDataset) -> bool {
    ds.motions.iter().all(|(id, _)| ds.references.contains_key(id))
}

/// Sources evaluated for `source`: `all` expands to every usable metric
/// plus the model when a model file exists.
fn expand_sources(cfg: &RunConfig, ds: &DiskDataset, source: &str) -> Result<Vec<String>> {
    let reg = metric_registry(cfg.physics_heuristics);
    match source {
        "all" => {
            let refs = has_all_references(ds);
            let mut out: Vec<String> = reg
                .iter()
                .filter(|(_, m)| refs || m.kind() == MetricKind::Physics)
                .map(|(n, _)| n.to_string())
                .collect();
            if !refs {
                warn!("dataset has no complete references/ directory; pose metrics skipped");
            }
            if cfg.paths.model_path().is_file() {
                out.push(MODEL_SOURCE.into());
            } else {
                warn!("no model at {}; model row skipped", cfg.paths.model_path().display());
            }
            Ok(out)
        }
        MODEL_SOURCE | PHYSICAL_SOURCE => Ok(vec![source.to_string()]),
        name => {
            reg.get(name)?;
            Ok(vec![name.to_string()])
        }
    }
}

fn source_scores(cfg: &RunConfig, ds: &DiskDataset, source: &str, targets: &BTreeMap<String, f64>) -> Result<(String, BTreeMap<String, f64>)> {
    match source {
        MODEL_SOURCE => {
            let model = load_model(&cfg.paths.model_path())?;
            Ok((MODEL_LABEL.into(), predict_scores(&model, &ds.motions, &ds.skeleton)?))
        }
        PHYSICAL_SOURCE => Ok((PHYSICAL_LABEL.into(), targets.clone())),
        name => {
            let metric = metric_registry(cfg.physics_heuristics).get(name)?;
            Ok((metric.label().to_string(), metric_scores(ds, metric.as_ref())?))
        }
    }
}

fn per_motion_tables(cfg: &RunConfig, ds: &DiskDataset) -> Result<()> {
    let dir = cfg.paths.eval_dir();
    let mut physics = String::from("motion_id,family,severity,penetration_m,skate_m_per_s,float_m,pfc\n");
    let rows = ds
        .motions
        .par_iter()
        .map(|(id, m)| PhysicsHeuristicReport::compute(m, &ds.skeleton, &cfg.physics_heuristics).map(|r| (id, r)))
        .collect::<Result<Vec<_>>>()?;
    for (id, r) in rows {
        let e = &ds.manifest[id.as_str()];
        let _ = writeln!(
            physics,
            "{id},{},{},{},{},{},{}",
            e.family, e.severity, r.penetration_m, r.skate_m_per_s, r.float_m, r.pfc
        );
    }
    write_file(&dir.join(PHYSICS_TABLE), physics.as_bytes())?;
    if has_all_references(ds) {
        let mut pose = format!("motion_id,family,severity,{}\n", PoseMetricReport::CSV_HEADER);
        let rows = ds
            .motions
            .par_iter()
            .map(|(id, m)| PoseMetricReport::compute(m, &ds.references[id]).map(|r| (id, r)))
            .collect::<Result<Vec<_>>>()?;
        for (id, r) in rows {
            let e = &ds.manifest[id.as_str()];
            let _ = writeln!(pose, "{id},{},{},{}", e.family, e.severity, r.csv_row());
        }
        write_file(&dir.join(POSE_TABLE), pose.as_bytes())?;
    }
    Ok(())
}

/// Correlates one score source (or `all`) with the physical annotations and
/// writes `<source>.csv`, `<source>.md` and `<source>.json` under `eval/`.
pub fn run_eval(cfg: &RunConfig, source: &str) -> Result<Vec<CorrelationReport>> {
    let ds = DiskDataset::load(&cfg.paths.dataset_dir)?;
    let targets = annotation_map(&ds, cfg)?;
    let sources = expand_sources(cfg, &ds, source)?;
    let dir = cfg.paths.eval_dir();
    create_dir(&dir)?;
    let detailed = cfg
        .eval
        .detailed_collection
        .as_deref()
        .filter(|c| ds.collections.values().any(|v| v == c));
    let mut reports = Vec::new();
    for name in &sources {
        let (label, scores) = source_scores(cfg, &ds, name, &targets)?;
        let rows = ds
            .motions
            .iter()
            .map(|(id, _)| {
                Ok(ScoredMotion {
                    id: id.clone(),
                    prompt: ds.prompt_of(id).to_string(),
                    collection: ds.collection_of(id).to_string(),
                    predicted: *scores.get(id).ok_or_else(|| FidelityError::MissingScore(id.clone()))?,
                    target: targets[id],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = CorrelationReport::build(label, &rows, &ds.pairs, detailed)?;
        write_file(&dir.join(format!("{name}.csv")), report.to_csv().as_bytes())?;
        write_file(&dir.join(format!("{name}.md")), report.to_markdown().as_bytes())?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| FidelityError::Invariant(format!("report encoding failed: {e}")))?;
        write_file(&dir.join(format!("{name}.json")), json.as_bytes())?;
        info!("{name}: total PLCC {:?}, accuracy {:?}", report.total.plcc, report.pairwise_accuracy);
        reports.push(report);
    }
    if source == "all" {
        per_motion_tables(cfg, &ds)?;
    }
    Ok(reports)
}

/// Merges whatever eval outputs exist into `report.md` (or `report.csv`).
/// Absent inputs become `missing` cells.
pub fn run_report(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.paths.eval_dir();
    let reg = metric_registry(cfg.physics_heuristics);
    let mut rows: Vec<(String, Option<CorrelationReport>)> = Vec::new();
    let mut names: Vec<(String, String)> = reg.iter().map(|(n, m)| (n.to_string(), m.label().to_string())).collect();
    names.push((MODEL_SOURCE.into(), MODEL_LABEL.into()));
    for (name, label) in names {
        let path = dir.join(format!("{name}.json"));
        let report = if path.is_file() {
            let text = std::fs::read_to_string(&path).map_err(|e| FidelityError::io(&path, e))?;
            let r: CorrelationReport = serde_json::from_str(&text)
                .map_err(|e| FidelityError::Parse { path: path.clone(), message: e.to_string() })?;
            Some(r)
        } else {
            None
        };
        rows.push((label, report));
    }
    let text = match cfg.format {
        ReportFormat::Csv => report::comparison_csv(&rows),
        ReportFormat::Markdown => {
            let physics = report::read_optional(&dir.join(PHYSICS_TABLE))?;
            let pose = report::read_optional(&dir.join(POSE_TABLE))?;
            report::markdown(&rows, physics.as_deref(), pose.as_deref())?
        }
    };
    let name = match cfg.format {
        ReportFormat::Csv => "report.csv",
        ReportFormat::Markdown => "report.md",
    };
    create_dir(&cfg.paths.output_dir)?;
    write_file(&cfg.paths.output_dir.join(name), text.as_bytes())?;
    Ok(text)
}
