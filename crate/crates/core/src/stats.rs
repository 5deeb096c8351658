//! Correlation statistics used for evaluation and inside the training loss:
//! Pearson (PLCC), Spearman (SROCC), Kendall (KROCC), and better/worse
//! pairwise accuracy, plus the per-prompt report tables built on them.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::MotionPair;
use crate::error::{FidelityError, Result};

/// Scores with the motion ids they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(FidelityError::Shape(format!(
                "{} ids for {} values",
                ids.len(),
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(ScoreVector { ids, values })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `sign` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(FidelityError::Invariant(format!("non-finite score {v}")));
    }
    Ok(())
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(FidelityError::Shape(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(FidelityError::DegenerateInput(format!(
            "correlation needs at least 2 values, got {}",
            a.len()
        )));
    }
    check_finite(a)?;
    check_finite(b)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Pearson linear correlation.
///
/// Returns 0 when exactly one input is constant and fails when both are.
pub fn plcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let (ca, cb) = (is_constant(a), is_constant(b));
    if ca && cb {
        return Err(FidelityError::DegenerateInput("both score vectors are constant".into()));
    }
    if ca || cb {
        return Ok(0.0);
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        // values distinct but numerically indistinguishable from their mean
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn fractional_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
/// Without ties this equals `1 - 6 Σd² / (n(n²-1))`.
pub fn srocc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let (ra, rb) = (fractional_ranks(a), fractional_ranks(b));
    if is_constant(&ra) || is_constant(&rb) {
        return Err(FidelityError::DegenerateInput("rank vector is constant".into()));
    }
    plcc(&ra, &rb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KendallMode {
    /// `(C - D) / (n(n-1)/2)`; ties count as neither.
    #[default]
    TauA,
    /// Tie-corrected `(C - D) / sqrt((n0 - n1)(n0 - n2))`.
    TauB,
    /// `1 - 2/(n(n²-1)) Σ sign(Δa) sign(Δb)`, evaluated as written in the
    /// evaluation appendix this toolkit mirrors. Kept for comparison only:
    /// it is not bounded the way Kendall's tau is.
    Literal,
}

/// Tie and discordance counts behind every Kendall variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KendallCounts {
    /// n(n-1)/2
    pub pairs: u64,
    /// pairs tied in `a`
    pub ties_a: u64,
    /// pairs tied in `b`
    pub ties_b: u64,
    /// pairs tied in both
    pub ties_ab: u64,
    /// concordant minus discordant pairs
    pub score: i64,
}

fn tie_pairs(sorted_run_lengths: impl Iterator<Item = u64>) -> u64 {
    sorted_run_lengths.map(|k| k * (k - 1) / 2).sum()
}

/// Knight's O(n log n) algorithm: sort by `(a, b)`, then count the swaps a
/// merge sort on `b` needs.
pub fn kendall_counts(a: &[f64], b: &[f64]) -> Result<KendallCounts> {
    check_pair(a, b)?;
    let n = a.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let mut ties_a = 0;
    let mut ties_ab = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && a[idx[j]] == a[idx[i]] {
            j += 1;
        }
        ties_a += tie_pairs(std::iter::once((j - i) as u64));
        // within an `a` tie run the entries are sorted by b
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && b[idx[l]] == b[idx[k]] {
                l += 1;
            }
            ties_ab += tie_pairs(std::iter::once((l - k) as u64));
            k = l;
        }
        i = j;
    }

    let mut seq: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut seq, &mut buf);

    let mut ties_b = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && seq[j] == seq[i] {
            j += 1;
        }
        ties_b += tie_pairs(std::iter::once((j - i) as u64));
        i = j;
    }

    let pairs = (n as u64) * (n as u64 - 1) / 2;
    let score = pairs as i64 - ties_a as i64 - ties_b as i64 + ties_ab as i64 - 2 * swaps as i64;
    Ok(KendallCounts { pairs, ties_a, ties_b, ties_ab, score })
}

/// Bottom-up merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if v[j].total_cmp(&v[i]) == Ordering::Less {
                    buf[k] = v[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (hi - j)].copy_from_slice(&v[j..hi]);
            v[lo..hi].copy_from_slice(&buf[lo..hi]);
            lo = hi;
        }
        width *= 2;
    }
    swaps
}

/// Kendall rank correlation in the requested mode.
pub fn krocc_with(a: &[f64], b: &[f64], mode: KendallMode) -> Result<f64> {
    let c = kendall_counts(a, b)?;
    match mode {
        KendallMode::TauA => {
            if is_constant(a) || is_constant(b) {
                log::debug!("Kendall tau-a of a constant vector is 0");
            }
            Ok(c.score as f64 / c.pairs as f64)
        }
        KendallMode::TauB => {
            let da = (c.pairs - c.ties_a) as f64;
            let db = (c.pairs - c.ties_b) as f64;
            if da == 0.0 || db == 0.0 {
                return Err(FidelityError::DegenerateInput(
                    "Kendall tau-b is undefined for a constant vector".into(),
                ));
            }
            Ok(c.score as f64 / (da * db).sqrt())
        }
        KendallMode::Literal => {
            let n = a.len() as f64;
            Ok(1.0 - 2.0 / (n * (n * n - 1.0)) * c.score as f64)
        }
    }
}

/// Kendall tau-a.
pub fn krocc(a: &[f64], b: &[f64]) -> Result<f64> {
    krocc_with(a, b, KendallMode::TauA)
}

/// Fraction of pairs whose better member outscores the worse one.
/// Exact ties count as wrong.
pub fn pairwise_accuracy(scores: &BTreeMap<String, f64>, pairs: &[MotionPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(FidelityError::DegenerateInput("no pairs to classify".into()));
    }
    let mut correct = 0usize;
    for p in pairs {
        let hi = scores.get(&p.better_id).ok_or_else(|| FidelityError::MissingScore(p.better_id.clone()))?;
        let lo = scores.get(&p.worse_id).ok_or_else(|| FidelityError::MissingScore(p.worse_id.clone()))?;
        if hi > lo {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// PLCC / SROCC / KROCC for one group of motions. `None` marks a
/// coefficient that is undefined for the group (too small or constant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub plcc: Option<f64>,
    pub srocc: Option<f64>,
    pub krocc: Option<f64>,
    pub n: usize,
}

impl CoefficientSet {
    pub fn compute(predicted: &[f64], target: &[f64]) -> Self {
        CoefficientSet {
            plcc: plcc(predicted, target).ok(),
            srocc: srocc(predicted, target).ok(),
            krocc: krocc(predicted, target).ok(),
            n: predicted.len(),
        }
    }

    pub fn get(&self, c: Coefficient) -> Option<f64> {
        match c {
            Coefficient::Plcc => self.plcc,
            Coefficient::Srocc => self.srocc,
            Coefficient::Krocc => self.krocc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Plcc,
    Srocc,
    Krocc,
}

impl Coefficient {
    pub const ALL: [Coefficient; 3] = [Coefficient::Plcc, Coefficient::Srocc, Coefficient::Krocc];

    pub fn label(&self) -> &'static str {
        match self {
            Coefficient::Plcc => "PLCC",
            Coefficient::Srocc => "SROCC",
            Coefficient::Krocc => "KROCC",
        }
    }
}

/// One scored motion entering a [`CorrelationReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMotion {
    pub id: String,
    pub prompt: String,
    pub collection: String,
    pub predicted: f64,
    pub target: f64,
}

/// Per-prompt, per-collection and pooled correlation of one score source
/// against physical annotations, plus pairwise accuracy on labelled pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub source: String,
    /// Collection whose prompts get individual columns; the others are pooled.
    pub detailed_collection: Option<String>,
    pub prompt_collection: BTreeMap<String, String>,
    pub per_prompt: BTreeMap<String, CoefficientSet>,
    pub collections: BTreeMap<String, CoefficientSet>,
    pub total: CoefficientSet,
    pub pairwise_accuracy: Option<f64>,
    pub pair_count: usize,
}

impl CorrelationReport {
    pub fn build(
        source: impl Into<String>,
        rows: &[ScoredMotion],
        pairs: &[MotionPair],
        detailed_collection: Option<&str>,
    ) -> Result<Self> {
        if rows.len() < 2 {
            return Err(FidelityError::DegenerateInput("report needs at least 2 scored motions".into()));
        }
        let mut by_prompt: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut by_collection: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut prompt_collection = BTreeMap::new();
        for r in rows {
            let e = by_prompt.entry(&r.prompt).or_default();
            e.0.push(r.predicted);
            e.1.push(r.target);
            let e = by_collection.entry(&r.collection).or_default();
            e.0.push(r.predicted);
            e.1.push(r.target);
            prompt_collection.insert(r.prompt.clone(), r.collection.clone());
        }
        let per_prompt =
            by_prompt.into_iter().map(|(k, (p, t))| (k.to_string(), CoefficientSet::compute(&p, &t))).collect();
        let collections =
            by_collection.into_iter().map(|(k, (p, t))| (k.to_string(), CoefficientSet::compute(&p, &t))).collect();
        let pred: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
        let targ: Vec<f64> = rows.iter().map(|r| r.target).collect();
        let total = CoefficientSet::compute(&pred, &targ);
        let scores: BTreeMap<String, f64> = rows.iter().map(|r| (r.id.clone(), r.predicted)).collect();
        let pairwise_accuracy = if pairs.is_empty() { None } else { Some(pairwise_accuracy(&scores, pairs)?) };
        Ok(CorrelationReport {
            source: source.into(),
            detailed_collection: detailed_collection.map(str::to_string),
            prompt_collection,
            per_prompt,
            collections,
            total,
            pairwise_accuracy,
            pair_count: pairs.len(),
        })
    }

    /// Column headers and values in table order: detailed prompts, pooled
    /// collections, then `Total`.
    pub fn columns(&self) -> Vec<(String, CoefficientSet)> {
        let mut cols = Vec::new();
        let detailed = self.detailed_collection.as_deref();
        for (prompt, set) in &self.per_prompt {
            let coll = self.prompt_collection.get(prompt).map(String::as_str);
            if detailed.is_none() || coll == detailed {
                cols.push((prompt.clone(), *set));
            }
        }
        if detailed.is_some() {
            for (coll, set) in &self.collections {
                if Some(coll.as_str()) != detailed {
                    cols.push((coll.clone(), *set));
                }
            }
        }
        cols.push(("Total".to_string(), self.total));
        cols
    }

    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let mut out = String::from("coefficient");
        for (name, _) in &cols {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for c in Coefficient::ALL {
            out.push_str(c.label());
            for (_, set) in &cols {
                out.push(',');
                out.push_str(&fmt_full(set.get(c)));
            }
            out.push('\n');
        }
        out.push_str("accuracy");
        for (i, _) in cols.iter().enumerate() {
            out.push(',');
            if i + 1 == cols.len() {
                out.push_str(&fmt_full(self.pairwise_accuracy));
            }
        }
        out.push('\n');
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "### {}\n", self.source);
        let _ = writeln!(
            out,
            "Pairwise accuracy: {} over {} pairs\n",
            fmt_fixed(self.pairwise_accuracy.map(|a| a * 100.0), 2),
            self.pair_count
        );
        for c in Coefficient::ALL {
            let _ = writeln!(out, "#### {}\n", c.label());
            out.push_str(&coefficient_table(&[self], c));
            out.push('\n');
        }
        out
    }
}

/// Markdown table with one row per report and the per-prompt column layout.
pub fn coefficient_table(reports: &[&CorrelationReport], c: Coefficient) -> String {
    let mut out = String::new();
    let Some(first) = reports.first() else {
        return out;
    };
    let headers: Vec<String> = first.columns().into_iter().map(|(h, _)| h).collect();
    let _ = writeln!(out, "| Metric | {} |", headers.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(headers.len()));
    for r in reports {
        let cols = r.columns();
        let cells: Vec<String> = headers
            .iter()
            .map(|h| {
                cols.iter().find(|(name, _)| name == h).map(|(_, s)| fmt_fixed(s.get(c), 3)).unwrap_or_else(|| "missing".into())
            })
            .collect();
        let _ = writeln!(out, "| {} | {} |", r.source, cells.join(" | "));
    }
    out
}

pub fn fmt_full(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| "n/a".into())
}

pub fn fmt_fixed(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "n/a".into())
}
