//! Report rendering. Every function is pure and iterates in sorted order,
//! so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mofid_core::stats::{coefficient_table, fmt_fixed, Coefficient, CorrelationReport};
use mofid_core::{FidelityError, Result};

pub const MISSING: &str = "missing";

pub fn read_optional(path: &Path) -> Result<Option<String>> {
    if !path.is_file() {
        return Ok(None);
    }
    std::fs::read_to_string(path).map(Some).map_err(|e| FidelityError::io(path, e))
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| MISSING.into())
}

/// `(accuracy %, PLCC, SROCC, KROCC)` cells of one row.
fn comparison_cells(r: Option<&CorrelationReport>) -> [String; 4] {
    match r {
        None => std::array::from_fn(|_| MISSING.to_string()),
        Some(r) => [
            cell(r.pairwise_accuracy.map(|a| 100.0 * a), 2),
            cell(r.total.plcc, 3),
            cell(r.total.srocc, 3),
            cell(r.total.krocc, 3),
        ],
    }
}

pub fn comparison_csv(rows: &[(String, Option<CorrelationReport>)]) -> String {
    let mut out = String::from("metric,accuracy,plcc,srocc,krocc\n");
    for (label, r) in rows {
        let _ = writeln!(out, "{label},{}", comparison_cells(r.as_ref()).join(","));
    }
    out
}

pub fn comparison_markdown(rows: &[(String, Option<CorrelationReport>)]) -> String {
    let mut out = String::from("| Metric | Accuracy (%) | PLCC | SROCC | KROCC |\n|---|---|---|---|---|\n");
    for (label, r) in rows {
        let _ = writeln!(out, "| {label} | {} |", comparison_cells(r.as_ref()).join(" | "));
    }
    out
}

/// Means of the numeric columns of a per-motion table, grouped by the
/// `family` column. Expects `motion_id,family,severity,<values...>`.
pub fn family_means(csv_text: &str) -> Result<(Vec<String>, BTreeMap<String, (usize, Vec<f64>)>)> {
    let bad = |m: String| FidelityError::Schema { path: "per-motion table".into(), message: m };
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[1] != "family" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let columns = header[3..].to_vec();
    let mut groups: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let entry = groups.entry(rec[1].to_string()).or_insert_with(|| (0, vec![0.0; columns.len()]));
        entry.0 += 1;
        for (k, v) in rec.iter().skip(3).enumerate() {
            entry.1[k] += v.parse::<f64>().map_err(|e| bad(format!("`{v}`: {e}")))?;
        }
    }
    for (n, sums) in groups.values_mut() {
        for s in sums.iter_mut() {
            *s /= *n as f64;
        }
    }
    Ok((columns, groups))
}

fn family_table(title: &str, csv_text: Option<&str>, expected: &[&str]) -> Result<String> {
    let mut out = format!("## {title}\n\n");
    match csv_text {
        None => {
            let _ = writeln!(out, "| Corruption | Motions | {} |", expected.join(" | "));
            let _ = writeln!(out, "|---|---|{}", "---|".repeat(expected.len()));
            let _ = writeln!(out, "| {MISSING} | {MISSING} | {} |", vec![MISSING; expected.len()].join(" | "));
        }
        Some(text) => {
            let (cols, groups) = family_means(text)?;
            let _ = writeln!(out, "| Corruption | Motions | {} |", cols.join(" | "));
            let _ = writeln!(out, "|---|---|{}", "---|".repeat(cols.len()));
            for (family, (n, means)) in &groups {
                let cells: Vec<String> = means.iter().map(|m| fmt_fixed(Some(*m), 4)).collect();
                let _ = writeln!(out, "| {family} | {n} | {} |", cells.join(" | "));
            }
        }
    }
    out.push('\n');
    Ok(out)
}

const PHYSICS_COLUMNS: [&str; 4] = ["penetration_m", "skate_m_per_s", "float_m", "pfc"];
const POSE_COLUMNS: [&str; 9] =
    ["recon_err_mm", "mpjpe_mm", "pa_mpjpe_mm", "e_acc", "e_vel", "root_ae", "root_ave", "joint_ae", "joint_ave"];

pub fn markdown(
    rows: &[(String, Option<CorrelationReport>)],
    physics_csv: Option<&str>,
    pose_csv: Option<&str>,
) -> Result<String> {
    let mut out = String::from("# Motion fidelity report\n\n## Metric comparison\n\n");
    out.push_str(&comparison_markdown(rows));
    out.push('\n');
    let present: Vec<&CorrelationReport> = rows.iter().filter_map(|(_, r)| r.as_ref()).collect();
    for c in Coefficient::ALL {
        let _ = writeln!(out, "## {} by prompt\n", c.label());
        if present.is_empty() {
            let _ = writeln!(out, "{MISSING}\n");
        } else {
            out.push_str(&coefficient_table(&present, c));
            out.push('\n');
        }
    }
    out.push_str(&family_table("Physics heuristics by corruption", physics_csv, &PHYSICS_COLUMNS)?);
    out.push_str(&family_table("Pose metrics by corruption", pose_csv, &POSE_COLUMNS)?);
    Ok(out)
}
