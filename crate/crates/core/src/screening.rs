//! Record-level screening: AHI estimation from segment predictions,
//! severity bands, confusion-matrix metrics and ROC analysis.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Normal,
    Mild,
    Moderate,
    Severe,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Normal => "normal",
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
        })
    }
}

/// Severity band of an AHI: [0,5) normal, [5,15) mild, [15,30) moderate, [30,inf) severe.
pub fn severity(ahi: f64) -> Result<Severity> {
    if !(ahi >= 0.0) {
        return Err(Error::Domain(format!("AHI must be nonnegative, got {ahi}")));
    }
    Ok(if ahi < 5.0 {
        Severity::Normal
    } else if ahi < 15.0 {
        Severity::Mild
    } else if ahi < 30.0 {
        Severity::Moderate
    } else {
        Severity::Severe
    })
}

/// Segments predicted as any event class (index > 0) per hour of recording.
/// Overlapping segments count individually.
pub fn estimate_ahi(predictions: &[usize], duration_hours: f64) -> Result<f64> {
    if !(duration_hours > 0.0) {
        return Err(Error::Domain(format!(
            "duration must be positive, got {duration_hours} h"
        )));
    }
    let events = predictions.iter().filter(|&&c| c != 0).count();
    Ok(events as f64 / duration_hours)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub id: String,
    pub ahi_est: f64,
    pub severity: Severity,
    pub verdict: bool,
}

/// AHI estimate, its severity band and the verdict `ahi_est > threshold`.
pub fn screen(
    id: &str,
    predictions: &[usize],
    duration_hours: f64,
    threshold: f64,
) -> Result<ScreeningResult> {
    let ahi_est = estimate_ahi(predictions, duration_hours)?;
    Ok(ScreeningResult {
        id: id.to_string(),
        ahi_est,
        severity: severity(ahi_est)?,
        verdict: ahi_est > threshold,
    })
}

/// Rows are known classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn from_labels(known: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if known.len() != predicted.len() {
            return Err(Error::Shape {
                what: "known vs predicted labels",
                expected: known.len(),
                found: predicted.len(),
            });
        }
        let mut counts = Array2::zeros((n_classes, n_classes));
        for (&k, &p) in known.iter().zip(predicted) {
            if k >= n_classes || p >= n_classes {
                return Err(Error::Domain(format!("label outside {n_classes} classes")));
            }
            counts[[k, p]] += 1;
        }
        Ok(Self { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.nrows()
    }

    /// Rows divided by their totals, in percent. Empty rows stay zero.
    pub fn normalized(&self) -> Array2<f64> {
        let mut out = self.counts.mapv(|v| v as f64);
        for mut row in out.rows_mut() {
            let total: f64 = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|v| 100.0 * v / total);
            }
        }
        out
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        class_metrics(self.counts.mapv(|v| v as f64).view())
    }
}

/// One-vs-rest rates in [0, 1]. `precision` is NaN when nothing was predicted
/// as the class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

/// Se, Sp and Pr for every class plus overall accuracy from a (possibly
/// row-normalized) confusion matrix.
pub fn class_metrics(matrix: ArrayView2<'_, f64>) -> Result<MetricsReport> {
    let k = matrix.nrows();
    if k == 0 || matrix.ncols() != k {
        return Err(Error::Domain("confusion matrix must be square and nonempty".into()));
    }
    let total = matrix.sum();
    if !(total > 0.0) {
        return Err(Error::Domain("confusion matrix is empty".into()));
    }
    let per_class = (0..k)
        .map(|c| {
            let tp = matrix[[c, c]];
            let fn_ = matrix.row(c).sum() - tp;
            let fp = matrix.column(c).sum() - tp;
            let tn = total - tp - fn_ - fp;
            ClassMetrics {
                sensitivity: ratio(tp, tp + fn_),
                specificity: ratio(tn, tn + fp),
                precision: ratio(tp, tp + fp),
            }
        })
        .collect();
    let trace: f64 = (0..k).map(|c| matrix[[c, c]]).sum();
    Ok(MetricsReport {
        per_class,
        accuracy: trace / total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Sorted by increasing threshold, from -inf to +inf.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// Point maximizing Se + Sp (lowest threshold on ties).
    pub optimal: RocPoint,
}

/// ROC of `score > threshold` verdicts against known positives, sweeping every
/// distinct score plus the infinite sentinels.
pub fn roc(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::Shape {
            what: "scores vs ground truth",
            expected: scores.len(),
            found: positive.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateCohort);
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.insert(0, f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);

    // sorted scores let each threshold be answered by counting
    let mut pos_scores: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    let mut neg_scores: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    pos_scores.sort_by(f64::total_cmp);
    neg_scores.sort_by(f64::total_cmp);
    let above = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&s| s <= t);

    let points: Vec<RocPoint> = thresholds
        .iter()
        .map(|&t| RocPoint {
            threshold: t,
            sensitivity: above(&pos_scores, t) as f64 / n_pos as f64,
            specificity: 1.0 - above(&neg_scores, t) as f64 / n_neg as f64,
        })
        .collect();

    let auc = points
        .windows(2)
        .map(|w| {
            let (x0, y0) = (1.0 - w[0].specificity, w[0].sensitivity);
            let (x1, y1) = (1.0 - w[1].specificity, w[1].sensitivity);
            (x0 - x1) * (y0 + y1) / 2.0
        })
        .sum();

    let mut optimal = points[0];
    for p in &points[1..] {
        if p.sensitivity + p.specificity > optimal.sensitivity + optimal.specificity {
            optimal = *p;
        }
    }
    Ok(RocCurve {
        points,
        auc,
        optimal,
    })
}

/// 2x2 matrix (row/column 0 = negative, 1 = positive) of `score > threshold`.
pub fn confusion_at(scores: &[f64], positive: &[bool], threshold: f64) -> Result<ConfusionMatrix> {
    let known: Vec<usize> = positive.iter().map(|&p| usize::from(p)).collect();
    let predicted: Vec<usize> = scores.iter().map(|&s| usize::from(s > threshold)).collect();
    ConfusionMatrix::from_labels(&known, &predicted, 2)
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Self-contained SVG plot of a ROC curve.
pub fn roc_svg(curve: &RocCurve, title: &str) -> String {
    let size = 400.0;
    let margin = 50.0;
    let plot = size - 2.0 * margin;
    let to_xy = |p: &RocPoint| {
        let x = margin + (1.0 - p.specificity) * plot;
        let y = size - margin - p.sensitivity * plot;
        (x, y)
    };
    let mut path = String::new();
    for (i, p) in curve.points.iter().rev().enumerate() {
        let (x, y) = to_xy(p);
        path.push_str(&format!("{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" }));
    }
    let (ox, oy) = to_xy(&curve.optimal);
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">
<rect width="100%" height="100%" fill="white"/>
<text x="{cx}" y="25" text-anchor="middle" font-family="sans-serif" font-size="14">{title} (AUC = {auc:.3})</text>
<rect x="{margin}" y="{margin}" width="{plot}" height="{plot}" fill="none" stroke="black"/>
<line x1="{margin}" y1="{bottom}" x2="{right}" y2="{margin}" stroke="#999" stroke-dasharray="4 4"/>
<path d="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>
<circle cx="{ox:.2}" cy="{oy:.2}" r="4" fill="#d62728"/>
<text x="{cx}" y="{xl}" text-anchor="middle" font-family="sans-serif" font-size="12">1 - specificity</text>
<text x="15" y="{cx}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {cx})">sensitivity</text>
</svg>
"##,
        cx = size / 2.0,
        auc = curve.auc,
        bottom = size - margin,
        right = size - margin,
        xl = size - 15.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn severity_bands() {
        assert_eq!(severity(0.0).unwrap(), Severity::Normal);
        assert_eq!(severity(4.99).unwrap(), Severity::Normal);
        assert_eq!(severity(5.0).unwrap(), Severity::Mild);
        assert_eq!(severity(15.0).unwrap(), Severity::Moderate);
        assert_eq!(severity(30.0).unwrap(), Severity::Severe);
        assert!(severity(-1.0).is_err());
    }

    #[test]
    fn ahi_arithmetic() {
        assert_eq!(estimate_ahi(&[0, 0, 0], 8.0).unwrap(), 0.0);
        let mut preds = vec![1; 30];
        preds.extend(vec![2; 10]);
        preds.extend(vec![0; 100]);
        assert_eq!(estimate_ahi(&preds, 8.0).unwrap(), 5.0);
        assert!(estimate_ahi(&preds, 0.0).is_err());
    }

    #[test]
    fn screen_boundary() {
        let mut preds = vec![1; 16];
        preds.push(0);
        let r = screen("a", &preds, 1.0, 15.0).unwrap();
        assert!(r.verdict);
        assert_eq!(r.severity, Severity::Moderate);
        let r = screen("b", &[1; 15], 1.0, 15.0).unwrap();
        assert!(!r.verdict);
    }

    #[test]
    fn identity_matrix_metrics() {
        let m = class_metrics(Array2::<f64>::eye(3).view()).unwrap();
        for c in &m.per_class {
            assert_eq!((c.sensitivity, c.specificity, c.precision), (1.0, 1.0, 1.0));
        }
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn precision_undefined_without_predictions() {
        let m = class_metrics(array![[3.0, 0.0], [2.0, 0.0]].view()).unwrap();
        assert!(m.per_class[1].precision.is_nan());
        assert!(class_metrics(Array2::<f64>::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn normalized_rows_sum_to_100() {
        let cm = ConfusionMatrix::from_labels(&[0, 0, 1, 1, 1, 2], &[0, 1, 1, 1, 2, 2], 3).unwrap();
        for row in cm.normalized().rows() {
            assert!((row.sum() - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn roc_extremes() {
        let r = roc(&[1.0, 2.0, 10.0, 12.0], &[false, false, true, true]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.optimal.threshold, 2.0);
        let r = roc(&[5.0; 6], &[true, false, true, false, true, false]).unwrap();
        assert!((r.auc - 0.5).abs() < 1e-15);
        assert!(matches!(roc(&[1.0, 2.0], &[true, true]), Err(Error::DegenerateCohort)));
    }

    #[test]
    fn roc_points_sorted_and_bounded() {
        let r = roc(&[3.0, 1.0, 2.0, 2.0, 7.0], &[true, false, true, false, true]).unwrap();
        assert!(r.points.windows(2).all(|w| w[0].threshold < w[1].threshold));
        assert!(r
            .points
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.sensitivity) && (0.0..=1.0).contains(&p.specificity)));
        assert_eq!(r.points.first().unwrap().sensitivity, 1.0);
        assert_eq!(r.points.last().unwrap().specificity, 1.0);
    }

    #[test]
    fn svg_is_wellformed_enough() {
        let r = roc(&[1.0, 2.0, 3.0], &[false, true, true]).unwrap();
        let svg = roc_svg(&r, "test <1>");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;1&gt;"));
    }
}
