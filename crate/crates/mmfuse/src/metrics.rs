//! Classification metrics: per-class and macro-averaged precision, recall,
//! F1, and the confusion matrix. Undefined 0/0 ratios count as 0, which is
//! what makes a constant predictor's macro numbers come out the way the
//! bundled baseline expects.

use crate::error::EvalError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Full evaluation result for one prediction run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Rows are gold labels, columns are predictions.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

impl Metrics {
    /// Percent with two decimals, the reporting convention for all tables.
    pub fn pct(x: f64) -> String {
        format!("{:.2}", 100.0 * x)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "F1 {} P {} R {}",
            Metrics::pct(self.macro_f1),
            Metrics::pct(self.macro_precision),
            Metrics::pct(self.macro_recall)
        )
    }
}

/// Per-metric mean and sample standard deviation across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_precision: f64,
    pub std_precision: f64,
    pub mean_recall: f64,
    pub std_recall: f64,
    pub runs: usize,
}

/// Mean and (n-1) standard deviation over per-seed metrics. A single run
/// reports zero deviation.
pub fn summarize(runs: &[Metrics]) -> MetricSummary {
    let n = runs.len();
    let stat = |f: &dyn Fn(&Metrics) -> f64| -> (f64, f64) {
        let mean = runs.iter().map(|m| f(m)).sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            let var =
                runs.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            var.sqrt()
        };
        (mean, std)
    };
    let (mean_f1, std_f1) = stat(&|m| m.macro_f1);
    let (mean_precision, std_precision) = stat(&|m| m.macro_precision);
    let (mean_recall, std_recall) = stat(&|m| m.macro_recall);
    MetricSummary { mean_f1, std_f1, mean_precision, std_precision, mean_recall, std_recall, runs: n }
}

/// Compute metrics over aligned prediction/gold label sequences.
pub fn compute_metrics(
    preds: &[usize],
    golds: &[usize],
    classes: &[String],
) -> Result<Metrics, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    let m = classes.len();
    for &l in preds.iter().chain(golds) {
        if l >= m {
            return Err(EvalError::LabelOutOfRange { label: l, classes: m });
        }
    }
    let mut confusion = vec![vec![0usize; m]; m];
    for (&p, &g) in preds.iter().zip(golds) {
        confusion[g][p] += 1;
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(m);
    for c in 0..m {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..m).map(|g| confusion[g][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics { name: classes[c].clone(), precision, recall, f1, support });
    }
    let macro_of = |f: &dyn Fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|c| f(c)).sum::<f64>() / m as f64
    };
    Ok(Metrics {
        macro_precision: macro_of(&|c| c.precision),
        macro_recall: macro_of(&|c| c.recall),
        macro_f1: macro_of(&|c| c.f1),
        per_class,
        confusion,
        total: preds.len(),
    })
}
