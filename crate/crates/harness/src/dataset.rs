//! Datasets and annotation files on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mofid_core::annotator::PhysicalAnnotation;
use mofid_core::{load_motion, load_skeleton, FidelityError, MotionPair, MotionSequence, Result, Skeleton};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ManifestRow {
    pub motion_id: String,
    pub prompt: String,
    pub family: String,
    pub severity: u8,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PromptRow {
    pub prompt: String,
    pub base_family: String,
    pub collection: String,
}

/// Collection assigned to prompts missing from `prompts.csv`.
pub const DEFAULT_COLLECTION: &str = "all";

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> FidelityError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FidelityError::io(path, io),
        other => FidelityError::Schema { path: path.to_path_buf(), message: format!("{other:?}") },
    }
}

/// Motion files in `dir` sorted by id (file stem).
fn motion_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| FidelityError::io(dir, e))? {
        let path = entry.map_err(|e| FidelityError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DiskDataset {
    pub dir: PathBuf,
    pub skeleton: Skeleton,
    /// Sorted by id.
    pub motions: Vec<(String, MotionSequence)>,
    pub references: BTreeMap<String, MotionSequence>,
    pub pairs: Vec<MotionPair>,
    pub manifest: BTreeMap<String, ManifestRow>,
    pub collections: BTreeMap<String, String>,
}

impl DiskDataset {
    /// Loads `skeleton.json`, `motions/*.json` and `manifest.csv` (required)
    /// plus `references/`, `pairs.csv` and `prompts.csv` when present.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(FidelityError::Config(format!("dataset directory {} does not exist", dir.display())));
        }
        let motion_dir = dir.join("motions");
        let files = if motion_dir.is_dir() { motion_files(&motion_dir)? } else { Vec::new() };
        if files.is_empty() {
            return Err(FidelityError::Config(format!("dataset {} contains no motions", dir.display())));
        }
        let skeleton_path = dir.join("skeleton.json");
        if !skeleton_path.is_file() {
            return Err(FidelityError::Config(format!("dataset {} has no skeleton.json", dir.display())));
        }
        let skeleton = load_skeleton(&skeleton_path)?;
        let motions = files
            .iter()
            .map(|(id, p)| {
                let m = load_motion(p)?;
                m.check_joint_count(&skeleton)?;
                Ok((id.clone(), m))
            })
            .collect::<Result<Vec<_>>>()?;

        let manifest_path = dir.join("manifest.csv");
        if !manifest_path.is_file() {
            return Err(FidelityError::Config(format!("dataset {} has no manifest.csv", dir.display())));
        }
        let manifest: BTreeMap<String, ManifestRow> =
            read_csv::<ManifestRow>(&manifest_path)?.into_iter().map(|r| (r.motion_id.clone(), r)).collect();
        if let Some((id, _)) = motions.iter().find(|(id, _)| !manifest.contains_key(id)) {
            return Err(FidelityError::Config(format!("motion `{id}` is not listed in manifest.csv")));
        }

        let mut references = BTreeMap::new();
        let ref_dir = dir.join("references");
        if ref_dir.is_dir() {
            for (id, p) in motion_files(&ref_dir)? {
                references.insert(id, load_motion(&p)?);
            }
        }
        let pairs_path = dir.join("pairs.csv");
        let pairs = if pairs_path.is_file() { read_csv::<MotionPair>(&pairs_path)? } else { Vec::new() };
        let ids: BTreeSet<&str> = motions.iter().map(|(id, _)| id.as_str()).collect();
        for p in &pairs {
            if p.better_id == p.worse_id {
                return Err(FidelityError::Config(format!("pair compares `{}` with itself", p.better_id)));
            }
            for id in [&p.better_id, &p.worse_id] {
                if !ids.contains(id.as_str()) {
                    return Err(FidelityError::Config(format!("pair references unknown motion `{id}`")));
                }
            }
        }
        let prompts_path = dir.join("prompts.csv");
        let collections = if prompts_path.is_file() {
            read_csv::<PromptRow>(&prompts_path)?.into_iter().map(|r| (r.prompt, r.collection)).collect()
        } else {
            BTreeMap::new()
        };
        Ok(DiskDataset { dir: dir.to_path_buf(), skeleton, motions, references, pairs, manifest, collections })
    }

    pub fn prompt_of(&self, id: &str) -> &str {
        &self.manifest[id].prompt
    }

    pub fn collection_of(&self, id: &str) -> &str {
        self.collections.get(self.prompt_of(id)).map(String::as_str).unwrap_or(DEFAULT_COLLECTION)
    }
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    motion_id: String,
    e_p_raw: f64,
    physical_score: f64,
    converged: bool,
}

pub fn load_annotations(path: &Path) -> Result<Vec<PhysicalAnnotation>> {
    if !path.is_file() {
        return Err(FidelityError::Config(format!("annotations {} not found; run `annotate` first", path.display())));
    }
    Ok(read_csv::<AnnotationRow>(path)?
        .into_iter()
        .map(|r| PhysicalAnnotation {
            motion_id: r.motion_id,
            e_p_raw: r.e_p_raw,
            physical_score: r.physical_score,
            converged: r.converged,
        })
        .collect())
}
