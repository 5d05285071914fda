//! Ranking metrics, random baselines, the AP-versus-proximity correlation
//! and report output.
//!
//! AP is the non-interpolated rank-sum form: instances are sorted by score
//! (descending, ties in instance order) and AP is the mean of precision@k
//! over the ranks k of the positives. Classes without positives are skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantics::{nearest_neighbor, ClassId, SemanticEmbedding};

/// `Ok(None)` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::dim("average precision labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("average precision scores".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / positives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub value: f64,
    pub included: usize,
    pub skipped: usize,
}

pub fn mean_ap(per_class: &[Option<f64>]) -> Result<MeanAp> {
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::Data("every class was skipped (no positives)".into()));
    }
    Ok(MeanAp {
        value: included.iter().sum::<f64>() / included.len() as f64,
        included: included.len(),
        skipped: per_class.len() - included.len(),
    })
}

/// Fraction of correct predictions. With a restriction, every truth must
/// be among the allowed candidates.
pub fn top1_accuracy(predictions: &[ClassId], truths: &[ClassId], restriction: Option<&[ClassId]>) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::dim("accuracy truths", predictions.len(), truths.len()));
    }
    if truths.is_empty() {
        return Err(Error::Data("accuracy over an empty evaluation set".into()));
    }
    if let Some(allowed) = restriction {
        if let Some(t) = truths.iter().find(|t| !allowed.contains(t)) {
            return Err(Error::Data(format!("truth `{t}` is outside the candidate restriction")));
        }
    }
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tagging,
    Classification,
}

/// Expected AP of a random ranking, approximated by the class prevalence.
pub fn random_ap(labels: &[bool]) -> Option<f64> {
    let p = labels.iter().filter(|&&l| l).count();
    (p > 0).then(|| p as f64 / labels.len() as f64)
}

/// Tagging: mean prevalence over classes with positives (`labels[class][clip]`).
/// Classification: `1 / n_candidates`, where `labels.len()` is the candidate count.
pub fn random_baseline(labels: &[Vec<bool>], task: Task) -> Result<f64> {
    if labels.is_empty() || labels.iter().all(|l| l.is_empty()) {
        return Err(Error::Data("random baseline of an empty evaluation set".into()));
    }
    match task {
        Task::Classification => Ok(1.0 / labels.len() as f64),
        Task::Tagging => {
            let per: Vec<Option<f64>> = labels.iter().map(|l| random_ap(l)).collect();
            Ok(mean_ap(&per)?.value)
        }
    }
}

/// Pearson correlation; `None` when either variable has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if x.len() != y.len() || x.len() < 2 || constant(x) || constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityRow {
    pub class: ClassId,
    pub ap: f64,
    pub random_ap: f64,
    pub nearest_train_class: ClassId,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub rows: Vec<ProximityRow>,
    /// Correlation of `ap - random_ap` with `similarity`; absent when undefined.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: ClassId,
    pub ap: f64,
    pub random_ap: f64,
}

pub fn proximity_correlation(
    per_class: &[ClassAp],
    train: &[SemanticEmbedding],
    test: &[SemanticEmbedding],
) -> Result<ProximityReport> {
    if per_class.len() < 3 {
        return Err(Error::Data(format!(
            "proximity analysis needs at least 3 test classes, got {}",
            per_class.len()
        )));
    }
    let rows = per_class
        .iter()
        .map(|c| {
            let e = test
                .iter()
                .find(|e| e.class == c.class)
                .ok_or_else(|| Error::UnknownClass(c.class.to_string()))?;
            let (nearest, similarity) = nearest_neighbor(e, train)?;
            Ok(ProximityRow {
                class: c.class.clone(),
                ap: c.ap,
                random_ap: c.random_ap,
                nearest_train_class: nearest,
                similarity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let improvement: Vec<f64> = rows.iter().map(|r| r.ap - r.random_ap).collect();
    let proximity: Vec<f64> = rows.iter().map(|r| r.similarity).collect();
    let r = pearson(&improvement, &proximity);
    Ok(ProximityReport { rows, r })
}

/// A grid of percentages: one row per fold/category/condition, one column
/// per model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ReportTable {
    /// Fixed-width text rendering; values are fractions shown as percentages.
    pub fn render(&self) -> String {
        let cell = |v: &Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut widths = vec![self.row_header.len()];
        widths.extend(self.columns.iter().map(|c| c.len()));
        for (name, vals) in &self.rows {
            widths[0] = widths[0].max(name.len());
            for (j, v) in vals.iter().enumerate() {
                widths[j + 1] = widths[j + 1].max(cell(v).len());
            }
        }
        let mut out = String::new();
        writeln!(out, "{}", self.title).unwrap();
        let mut line = format!("{:<w$}", self.row_header, w = widths[0]);
        for (j, c) in self.columns.iter().enumerate() {
            write!(line, "  {:>w$}", c, w = widths[j + 1]).unwrap();
        }
        writeln!(out, "{line}").unwrap();
        writeln!(out, "{}", "-".repeat(line.len())).unwrap();
        for (name, vals) in &self.rows {
            let mut line = format!("{:<w$}", name, w = widths[0]);
            for (j, v) in vals.iter().enumerate() {
                write!(line, "  {:>w$}", cell(v), w = widths[j + 1]).unwrap();
            }
            writeln!(out, "{line}").unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub per_class_ap: BTreeMap<ClassId, Option<f64>>,
    pub map: Option<MeanAp>,
    pub accuracy: Option<f64>,
    pub category_accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub runs: Vec<RunMetrics>,
    pub mean_map: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub random_baseline: f64,
    pub proximity: Option<ProximityReport>,
    pub tables: Vec<ReportTable>,
    /// How equal scores were ordered when ranking.
    pub tie_rule: String,
    /// Free-form provenance (resolved config, version).
    pub provenance: serde_json::Value,
}

impl EvalReport {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))
    }
}

/// Writes `<path>` (JSON) and `<path>.txt` (tables).
pub fn emit_report<T: Serialize>(report: &T, tables: &[ReportTable], path: &Path) -> Result<()> {
    if tables.iter().any(|t| t.rows.is_empty()) {
        return Err(Error::Data("refusing to write a report table with no rows".into()));
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::format("report", e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    let text: String = tables.iter().map(|t| t.render() + "\n").collect();
    let txt = path.with_extension("txt");
    std::fs::write(&txt, text).map_err(|e| Error::io(&txt, e))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
