//! One-vs-rest segmentation metrics with macro averaging.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::crf::Labeling;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// Number of nodes of this class in the truth.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean over classes that occur in the truth.
    pub macro_avg: ClassMetrics,
    /// `confusion[[truth, predicted]]`.
    pub confusion: Array2<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(
    predicted: &Labeling,
    truth: &Labeling,
    num_labels: usize,
) -> Result<MetricsReport> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "labeling length",
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    let mut confusion = Array2::zeros((num_labels, num_labels));
    for (node, (&p, &t)) in predicted.as_slice().iter().zip(truth.as_slice()).enumerate() {
        if p >= num_labels || t >= num_labels {
            return Err(Error::LabelOutOfRange {
                node,
                label: p.max(t),
                num_labels,
            });
        }
        confusion[[t, p]] += 1;
    }
    let total = truth.len();
    let per_class: Vec<ClassMetrics> = (0..num_labels)
        .map(|c| {
            let tp = confusion[[c, c]];
            let fn_ = confusion.row(c).sum() - tp;
            let fp = confusion.column(c).sum() - tp;
            let tn = total - tp - fn_ - fp;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                accuracy: ratio(tp + tn, total),
                f1,
                support: tp + fn_,
            }
        })
        .collect();

    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
        }
    };
    let macro_avg = ClassMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        accuracy: mean(|m| m.accuracy),
        f1: mean(|m| m.f1),
        support: total,
    };
    Ok(MetricsReport {
        per_class,
        macro_avg,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.3}", self.mean, self.std)
    }
}

/// Macro metrics of one method aggregated over several scenes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodSummary {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub accuracy: MeanStd,
    pub f1: MeanStd,
}

pub fn summarize(reports: &[MetricsReport]) -> MethodSummary {
    let col = |f: fn(&ClassMetrics) -> f64| {
        MeanStd::of(&reports.iter().map(|r| f(&r.macro_avg)).collect::<Vec<_>>())
    };
    MethodSummary {
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        accuracy: col(|m| m.accuracy),
        f1: col(|m| m.f1),
    }
}

/// Method comparison table, one row per method, columns Precision, Recall,
/// Accuracy, F1.
pub fn format_method_table(rows: &[(&str, MethodSummary)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>17}  {:>17}  {:>17}  {:>17}",
        "Method", "Average Precision", "Average Recall", "Average Accuracy", "F1 Score"
    );
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>17}  {:>17}  {:>17}  {:>17}",
            name,
            s.precision.to_string(),
            s.recall.to_string(),
            s.accuracy.to_string(),
            s.f1.to_string()
        );
    }
    out
}

impl MetricsReport {
    /// Per-class rows followed by the macro row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<7}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}",
            "class", "precision", "recall", "accuracy", "f1", "support"
        );
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<7}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
                c, m.precision, m.recall, m.accuracy, m.f1, m.support
            );
        }
        let m = &self.macro_avg;
        let _ = writeln!(
            out,
            "{:<7}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
            "macro", m.precision, m.recall, m.accuracy, m.f1, m.support
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,accuracy,f1,support\n");
        let rows = self
            .per_class
            .iter()
            .enumerate()
            .map(|(c, m)| (c.to_string(), m))
            .chain(std::iter::once(("macro".to_string(), &self.macro_avg)));
        for (name, m) in rows {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                m.precision, m.recall, m.accuracy, m.f1, m.support
            );
        }
        out
    }
}
