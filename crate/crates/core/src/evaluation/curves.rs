use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    /// False-positive rate against recall.
    Roc,
    /// Recall against precision.
    Pr,
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveKind::Roc => "roc",
            CurveKind::Pr => "pr",
        })
    }
}

/// Why a curve or an area cannot be computed for a set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum UndefinedMetric {
    #[error("no positive labels")]
    NoPositives,
    #[error("no negative labels")]
    NoNegatives,
    #[error("curve has fewer than 2 points")]
    TooFewPoints,
    #[error("no prediction sets")]
    NoSets,
}

/// Operating points ordered by non-decreasing x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
}

/// Scores with binary ground truth.
pub type ScoredSet = [(f64, bool)];

/// Confusion counts after admitting each distinct score, highest first.
/// Equal scores are admitted together.
fn sweep(scores: &ScoredSet) -> Vec<(usize, usize)> {
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, (s, y)) in sorted.iter().enumerate() {
        if *y {
            tp += 1;
        } else {
            fp += 1;
        }
        if sorted.get(i + 1).is_none_or(|n| n.0 != *s) {
            out.push((tp, fp));
        }
    }
    out
}

fn class_counts(scores: &ScoredSet) -> (usize, usize) {
    let pos = scores.iter().filter(|(_, y)| *y).count();
    (pos, scores.len() - pos)
}

/// ROC curve with one point per distinct score, anchored at (0,0) and (1,1).
pub fn roc_curve(scores: &ScoredSet) -> Result<Curve, UndefinedMetric> {
    let (pos, neg) = class_counts(scores);
    if pos == 0 {
        return Err(UndefinedMetric::NoPositives);
    }
    if neg == 0 {
        return Err(UndefinedMetric::NoNegatives);
    }
    let mut points = vec![(0.0, 0.0)];
    points.extend(sweep(scores).into_iter().map(|(tp, fp)| (fp as f64 / neg as f64, tp as f64 / pos as f64)));
    Ok(Curve {
        kind: CurveKind::Roc,
        points,
    })
}

/// PR curve with one point per distinct score. Recall 0 is anchored at the
/// precision of the highest threshold.
pub fn pr_curve(scores: &ScoredSet) -> Result<Curve, UndefinedMetric> {
    let (pos, _) = class_counts(scores);
    if pos == 0 {
        return Err(UndefinedMetric::NoPositives);
    }
    let mut points: Vec<(f64, f64)> = sweep(scores)
        .into_iter()
        .map(|(tp, fp)| (tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64))
        .collect();
    let first = points[0].1;
    points.insert(0, (0.0, first));
    Ok(Curve {
        kind: CurveKind::Pr,
        points,
    })
}

pub fn curve(scores: &ScoredSet, kind: CurveKind) -> Result<Curve, UndefinedMetric> {
    match kind {
        CurveKind::Roc => roc_curve(scores),
        CurveKind::Pr => pr_curve(scores),
    }
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &Curve) -> Result<f64, UndefinedMetric> {
    if curve.points.len() < 2 {
        return Err(UndefinedMetric::TooFewPoints);
    }
    Ok(curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// How curves of repeated runs are combined into one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    /// Pool every (score, label) pair, then build a single curve.
    #[default]
    Pool,
    /// Average y over a fixed x grid of per-set curves.
    Vertical,
}

const VERTICAL_GRID: usize = 100;

/// y of a curve at `x`, linear between neighbouring points. Where the curve is
/// vertical at `x` the highest point is used.
fn value_at(points: &[(f64, f64)], x: f64) -> f64 {
    let j = points.partition_point(|p| p.0 <= x);
    if j == 0 {
        return points[0].1;
    }
    let (x0, y0) = points[j - 1];
    match points.get(j) {
        Some(&(x1, y1)) => y0 + (y1 - y0) * (x - x0) / (x1 - x0),
        None => y0,
    }
}

/// One curve for several prediction sets of the same target.
pub fn merged_curve(sets: &[Vec<(f64, bool)>], kind: CurveKind, merge: Merge) -> Result<Curve, UndefinedMetric> {
    if sets.is_empty() {
        return Err(UndefinedMetric::NoSets);
    }
    match merge {
        Merge::Pool => {
            let pooled: Vec<(f64, bool)> = sets.iter().flatten().copied().collect();
            curve(&pooled, kind)
        }
        Merge::Vertical => {
            let curves = sets.iter().map(|s| curve(s, kind)).collect::<Result<Vec<_>, _>>()?;
            let points = (0..=VERTICAL_GRID)
                .map(|i| {
                    let x = i as f64 / VERTICAL_GRID as f64;
                    let y = curves.iter().map(|c| value_at(&c.points, x)).sum::<f64>() / curves.len() as f64;
                    (x, y)
                })
                .collect::<Vec<_>>();
            let points = match kind {
                CurveKind::Roc => std::iter::once((0.0, 0.0)).chain(points).collect(),
                CurveKind::Pr => points,
            };
            Ok(Curve { kind, points })
        }
    }
}

/// Writes curves as `kind,x,y` rows.
pub fn write_curves_csv(curves: &[&Curve], path: &Path) -> Result<()> {
    let mut out = String::from("kind,x,y\n");
    for c in curves {
        for (x, y) in &c.points {
            out.push_str(&format!("{},{x},{y}\n", c.kind));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mann_whitney(scores: &ScoredSet) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (sp, _) in scores.iter().filter(|s| s.1) {
            for (sn, _) in scores.iter().filter(|s| !s.1) {
                den += 1.0;
                num += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
            }
        }
        num / den
    }

    #[test]
    fn perfect_and_inverted() {
        let s = [(0.9, true), (0.8, true), (0.3, false), (0.1, false)];
        let c = roc_curve(&s).unwrap();
        assert!(c.points.contains(&(0.0, 1.0)));
        assert_eq!(auc(&c).unwrap(), 1.0);
        let inv: Vec<_> = s.iter().map(|(x, y)| (*x, !y)).collect();
        assert_eq!(auc(&roc_curve(&inv).unwrap()).unwrap(), 0.0);
        assert_eq!(auc(&pr_curve(&s).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn anchors_and_ties() {
        let s = [(0.5, true), (0.5, false), (0.5, true), (0.2, false)];
        let c = roc_curve(&s).unwrap();
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(c.points.len(), 3);
    }

    #[test]
    fn constant_scores_give_prevalence() {
        let s = [(0.3, true), (0.3, false), (0.3, false), (0.3, false)];
        let c = pr_curve(&s).unwrap();
        assert_eq!(c.points, vec![(0.0, 0.25), (1.0, 0.25)]);
        assert_eq!(auc(&c).unwrap(), 0.25);
        assert_eq!(auc(&roc_curve(&s).unwrap()).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        let s = [(0.3, true), (0.1, true)];
        assert_eq!(roc_curve(&s), Err(UndefinedMetric::NoNegatives));
        assert!(pr_curve(&s).is_ok());
        let s = [(0.3, false)];
        assert_eq!(pr_curve(&s), Err(UndefinedMetric::NoPositives));
        let c = Curve {
            kind: CurveKind::Roc,
            points: vec![(0.0, 0.0)],
        };
        assert_eq!(auc(&c), Err(UndefinedMetric::TooFewPoints));
    }

    #[test]
    fn trapezoid_basics() {
        let diag = Curve {
            kind: CurveKind::Roc,
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        };
        assert_eq!(auc(&diag).unwrap(), 0.5);
        let rect = Curve {
            kind: CurveKind::Roc,
            points: vec![(0.0, 1.0), (1.0, 1.0)],
        };
        assert_eq!(auc(&rect).unwrap(), 1.0);
    }

    #[test]
    fn merging_identical_sets() {
        let s = vec![(0.9, true), (0.4, false), (0.6, true), (0.6, false), (0.1, false)];
        for kind in [CurveKind::Roc, CurveKind::Pr] {
            let one = curve(&s, kind).unwrap();
            assert_eq!(merged_curve(std::slice::from_ref(&s), kind, Merge::Pool).unwrap(), one);
            assert_eq!(merged_curve(&[s.clone(), s.clone()], kind, Merge::Pool).unwrap(), one);
        }
        let v = merged_curve(&[s.clone(), s.clone()], CurveKind::Roc, Merge::Vertical).unwrap();
        assert_eq!(v.points.last(), Some(&(1.0, 1.0)));
        let a = auc(&v).unwrap();
        assert!((a - auc(&roc_curve(&s).unwrap()).unwrap()).abs() < 0.02);
    }

    #[test]
    fn interpolation_takes_top_of_vertical_segment() {
        let pts = [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)];
        assert_eq!(value_at(&pts, 0.0), 0.5);
        assert_eq!(value_at(&pts, 0.25), 0.75);
        assert_eq!(value_at(&pts, 1.0), 1.0);
    }

    proptest! {
        #[test]
        fn roc_auc_is_concordance(raw in prop::collection::vec((0u8..6, any::<bool>()), 2..60)) {
            let s: Vec<(f64, bool)> = raw.iter().map(|(v, y)| (*v as f64 / 5.0, *y)).collect();
            prop_assume!(s.iter().any(|x| x.1) && s.iter().any(|x| !x.1));
            let a = auc(&roc_curve(&s).unwrap()).unwrap();
            prop_assert!((a - mann_whitney(&s)).abs() < 1e-12);
            // strictly monotone transform of the scores
            let t: Vec<(f64, bool)> = s.iter().map(|(v, y)| ((3.0 * v).exp() - 7.0, *y)).collect();
            prop_assert!((auc(&roc_curve(&t).unwrap()).unwrap() - a).abs() < 1e-12);
        }
    }
}
