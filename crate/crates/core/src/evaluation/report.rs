use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datamodel::{DatasetManifest, LesionClass, Sample, LESION_ORDER};
use crate::error::{Error, Result};
use crate::evaluation::curves::{auc, merged_curve, Curve, CurveKind, Merge, UndefinedMetric};
use crate::training::PredictionRow;

/// An area under a curve, or the reason it does not exist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Value(f64),
    Undefined(UndefinedMetric),
}

/// Rounds half away from zero to two decimals.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl Metric {
    fn from_curve(curve: &Result<Curve, UndefinedMetric>) -> Self {
        match curve.as_ref().map_err(|e| *e).and_then(auc) {
            Ok(v) => Metric::Value(v),
            Err(e) => Metric::Undefined(e),
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined(_) => None,
        }
    }

    /// Percentage with two decimals.
    pub fn percent(self) -> Option<f64> {
        self.value().map(|v| round2(v * 100.0))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.percent() {
            Some(p) => write!(f, "{p:.2}"),
            None => f.write_str("undefined"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.percent() {
            Some(p) => s.serialize_f64(p),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Ok(Metric::Value(p / 100.0)),
            Raw::Str(s) if s == "undefined" => Ok(Metric::Undefined(UndefinedMetric::TooFewPoints)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    /// `amd` or a lesion class name.
    pub target: String,
    pub auc_roc: Metric,
    pub auc_pr: Metric,
    pub roc_points: usize,
    pub pr_points: usize,
    /// Counted once per sample, not per repetition.
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub merge: Merge,
    pub targets: Vec<TargetMetrics>,
    #[serde(skip)]
    pub curves: BTreeMap<String, (Option<Curve>, Option<Curve>)>,
}

impl MetricReport {
    pub fn target(&self, name: &str) -> Option<&TargetMetrics> {
        self.targets.iter().find(|t| t.target == name)
    }

    pub fn diagnosis(&self) -> &TargetMetrics {
        self.target("amd").expect("diagnosis target is always present")
    }

    /// ROC and PR curves of a target, where defined.
    pub fn curves_of(&self, name: &str) -> Vec<&Curve> {
        self.curves
            .get(name)
            .map(|(r, p)| r.iter().chain(p.iter()).collect())
            .unwrap_or_default()
    }
}

/// Per-repetition (score, label) sets for one target.
fn target_sets(
    rows: &[PredictionRow],
    index: &HashMap<&str, &Sample>,
    score: impl Fn(&PredictionRow) -> f64,
    label: impl Fn(&Sample) -> Option<bool>,
) -> Vec<Vec<(f64, bool)>> {
    let mut by_rep: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
    for row in rows {
        if let Some(y) = label(index[row.sample_id.as_str()]) {
            by_rep.entry(row.repetition).or_default().push((score(row), y));
        }
    }
    by_rep.into_values().collect()
}

fn target_metrics(name: &str, sets: &[Vec<(f64, bool)>], labels: impl Iterator<Item = bool>, merge: Merge) -> (TargetMetrics, (Option<Curve>, Option<Curve>)) {
    let (mut positives, mut negatives) = (0, 0);
    for y in labels {
        if y {
            positives += 1;
        } else {
            negatives += 1;
        }
    }
    let roc = merged_curve(sets, CurveKind::Roc, merge);
    let pr = merged_curve(sets, CurveKind::Pr, merge);
    let metrics = TargetMetrics {
        target: name.to_string(),
        auc_roc: Metric::from_curve(&roc),
        auc_pr: Metric::from_curve(&pr),
        roc_points: roc.as_ref().map_or(0, |c| c.points.len()),
        pr_points: pr.as_ref().map_or(0, |c| c.points.len()),
        positives,
        negatives,
    };
    (metrics, (roc.ok(), pr.ok()))
}

/// AUC-ROC and AUC-PR for the diagnosis and every lesion class. Predictions of
/// all repetitions are combined with `merge`; lesion targets only use samples
/// with known lesion labels.
pub fn metric_report(rows: &[PredictionRow], manifest: &DatasetManifest, merge: Merge) -> Result<MetricReport> {
    let index = manifest.index();
    let unknown: Vec<&str> = rows
        .iter()
        .map(|r| r.sample_id.as_str())
        .filter(|id| !index.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::invalid(format!(
            "{} predictions for samples missing from manifest {}: {}",
            unknown.len(),
            manifest.name,
            unknown.iter().take(5).copied().collect::<Vec<_>>().join(", ")
        )));
    }
    let predicted: std::collections::HashSet<&str> = rows.iter().map(|r| r.sample_id.as_str()).collect();
    let missing: Vec<&str> = manifest
        .samples
        .iter()
        .filter(|s| s.diagnosis.is_some() && !predicted.contains(s.sample_id.as_str()))
        .map(|s| s.sample_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "{} labelled samples have no prediction: {}",
            missing.len(),
            missing.iter().take(5).copied().collect::<Vec<_>>().join(", ")
        )));
    }

    let diag_label = |s: &Sample| s.diagnosis.map(|d| d == 1);
    let mut targets = Vec::new();
    let mut curves = BTreeMap::new();
    let sets = target_sets(rows, &index, |r| r.probabilities[0], diag_label);
    let (m, c) = target_metrics("amd", &sets, manifest.samples.iter().filter_map(diag_label), merge);
    curves.insert(m.target.clone(), c);
    targets.push(m);
    for class in LESION_ORDER {
        let label = move |s: &Sample| s.has_lesion(class);
        let sets = target_sets(rows, &index, |r| r.probabilities[1 + class.index()], label);
        let (m, c) = target_metrics(class.name(), &sets, manifest.samples.iter().filter_map(label), merge);
        curves.insert(m.target.clone(), c);
        targets.push(m);
    }
    Ok(MetricReport {
        dataset: manifest.name.clone(),
        merge,
        targets,
        curves,
    })
}

/// Diagnosis AUCs of several runs side by side, one column per run.
pub fn detection_table(columns: &[(&str, &MetricReport)]) -> String {
    let mut out = format!("{:<16}{:<10}", "Dataset", "Metric");
    for (label, _) in columns {
        out.push_str(&format!("{label:>12}"));
    }
    out.push('\n');
    let dataset = columns.first().map_or("", |(_, r)| r.dataset.as_str());
    for (i, (metric, pick)) in [("AUC-ROC", 0), ("AUC-PR", 1)].into_iter().enumerate() {
        let name = if i == 0 { dataset } else { "" };
        out.push_str(&format!("{name:<16}{metric:<10}"));
        for (_, r) in columns {
            let t = r.diagnosis();
            let m = if pick == 0 { t.auc_roc } else { t.auc_pr };
            out.push_str(&format!("{:>12}", m.to_string()));
        }
        out.push('\n');
    }
    out
}

/// Lesion AUC-ROC values of one run in canonical class order.
pub fn lesion_table(report: &MetricReport) -> String {
    let mut head = format!("{:<14}", "");
    let mut row = format!("{:<14}", "AUC-ROC (%)");
    for class in LESION_ORDER {
        let name = capitalized(class);
        head.push_str(&format!("{name:>12}"));
        let m = report.target(class.name()).map_or("undefined".to_string(), |t| t.auc_roc.to_string());
        row.push_str(&format!("{m:>12}"));
    }
    format!("{head}\n{row}\n")
}

fn capitalized(class: LesionClass) -> String {
    let mut name = class.name().to_string();
    name[..1].make_ascii_uppercase();
    name
}
