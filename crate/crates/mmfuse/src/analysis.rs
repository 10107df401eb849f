//! Post-hoc analyses over a trained checkpoint: per-category modality
//! contribution from the gate activations, cross-attention weight dumps,
//! and misclassification reports.

use crate::data::{Dataset, Split};
use crate::error::{EvalError, TrainError};
use crate::matrix::{Matrix, Scalar};
use crate::metrics::Metrics;
use crate::models::{infer, predict, FusionOutput};
use crate::train::Checkpoint;
use serde::{Deserialize, Serialize};

/// Whether per-category averages group by the model's prediction or by the
/// gold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    #[default]
    Predicted,
    Gold,
}

impl clap::ValueEnum for Grouping {
    fn value_variants<'a>() -> &'a [Self] {
        &[Grouping::Predicted, Grouping::Gold]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Grouping::Predicted => "predicted",
            Grouping::Gold => "gold",
        }))
    }
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "predicted" => Ok(Grouping::Predicted),
            "gold" => Ok(Grouping::Gold),
            other => Err(format!("unknown grouping {other:?} (expected predicted|gold)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateCategoryShare {
    pub name: String,
    /// Mean gate activation x100 for the category, absent when no example
    /// landed in it.
    pub text_share_pct: Option<f64>,
    pub image_share_pct: Option<f64>,
    pub examples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateExampleShare {
    pub id: String,
    /// Mean of the gate activations, in [0,1].
    pub text_share: f64,
}

/// Average modality contribution per category, from the gate activations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateReport {
    pub format: String,
    pub grouping: Grouping,
    pub split: Split,
    pub per_category: Vec<GateCategoryShare>,
    pub overall_text_share_pct: f64,
    pub overall_image_share_pct: f64,
    pub per_example: Vec<GateExampleShare>,
}

/// One dumped example: both attention directions plus gate-derived modality
/// shares when the model has a gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub id: String,
    pub gold: String,
    pub pred: String,
    pub attn_t2v: Vec<Vec<f64>>,
    pub attn_v2t: Vec<Vec<f64>>,
    pub text_share_pct: Option<f64>,
    pub image_share_pct: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub gold: String,
    pub pred: String,
    pub count: usize,
    pub ids: Vec<String>,
}

/// Off-diagonal confusion cells ranked by descending count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub format: String,
    pub total_errors: usize,
    pub cells: Vec<ConfusionCell>,
}

fn infer_record<F: Scalar>(
    ckpt: &Checkpoint<F>,
    record: &crate::data::FeatureRecord,
) -> Result<FusionOutput<F>, TrainError> {
    let image: Matrix<F> = match (&record.image_feats, &ckpt.average_image) {
        (Some(img), _) => img.cast::<F>(),
        (None, Some(avg)) => avg.cast::<F>(),
        (None, None) => {
            return Err(TrainError::Data(crate::error::DataError::ImageFieldsInconsistent {
                id: record.id.clone(),
                has_image: record.has_image,
                offsets: "absent and checkpoint has no average image",
            }))
        }
    };
    Ok(infer(&ckpt.params, &ckpt.model_config, &record.text_feats.cast::<F>(), &image)?)
}

/// Mean gate activation of one fused example.
fn text_share<F: Scalar>(z: &Matrix<F>) -> f64 {
    z.data().iter().map(|&x| x.to_f64()).sum::<f64>() / z.len() as f64
}

/// Per-category modality contribution for a gate-bearing checkpoint.
pub fn gate_contribution<F: Scalar>(
    ckpt: &Checkpoint<F>,
    dataset: &Dataset,
    split: Split,
    grouping: Grouping,
) -> Result<GateReport, TrainError> {
    if !ckpt.kind.has_gate() {
        return Err(unsupported(ckpt, "gate"));
    }
    let classes = ckpt.classes.names();
    let mut sums = vec![0.0f64; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    let mut per_example = Vec::new();
    let mut overall = 0.0;
    let mut n = 0usize;
    for record in dataset.split(split) {
        let out = infer_record(ckpt, record)?;
        let z = out.z.as_ref().expect("gate models expose z");
        let share = text_share(z);
        let group = match grouping {
            Grouping::Predicted => predict(&out.logits),
            Grouping::Gold => record.label,
        };
        sums[group] += share;
        counts[group] += 1;
        overall += share;
        n += 1;
        per_example.push(GateExampleShare { id: record.id.clone(), text_share: share });
    }
    let per_category = classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (text, image) = if counts[c] == 0 {
                (None, None)
            } else {
                let t = 100.0 * sums[c] / counts[c] as f64;
                (Some(t), Some(100.0 - t))
            };
            GateCategoryShare {
                name: name.clone(),
                text_share_pct: text,
                image_share_pct: image,
                examples: counts[c],
            }
        })
        .collect();
    let overall_pct = if n == 0 { 0.0 } else { 100.0 * overall / n as f64 };
    Ok(GateReport {
        format: "gate-report.v1".to_string(),
        grouping,
        split,
        per_category,
        overall_text_share_pct: overall_pct,
        overall_image_share_pct: if n == 0 { 0.0 } else { 100.0 - overall_pct },
        per_example,
    })
}

/// Both cross-attention weight matrices per example, for attention models.
pub fn dump_attention<F: Scalar>(
    ckpt: &Checkpoint<F>,
    dataset: &Dataset,
    split: Split,
) -> Result<Vec<AttentionRecord>, TrainError> {
    if !ckpt.kind.has_cross_attention() {
        return Err(unsupported(ckpt, "attention"));
    }
    let classes = ckpt.classes.names();
    let mut out = Vec::new();
    for record in dataset.split(split) {
        let fused = infer_record(ckpt, record)?;
        let pred = predict(&fused.logits);
        let to_rows = |m: &Matrix<F>| -> Vec<Vec<f64>> {
            (0..m.rows())
                .map(|r| m.row_slice(r).iter().map(|&x| x.to_f64()).collect())
                .collect()
        };
        let share = fused.z.as_ref().map(|z| 100.0 * text_share(z));
        out.push(AttentionRecord {
            id: record.id.clone(),
            gold: classes[record.label].clone(),
            pred: classes[pred].clone(),
            attn_t2v: to_rows(fused.attn_t2v.as_ref().expect("attention models expose t2v")),
            attn_v2t: to_rows(fused.attn_v2t.as_ref().expect("attention models expose v2t")),
            text_share_pct: share,
            image_share_pct: share.map(|s| 100.0 - s),
        });
    }
    Ok(out)
}

/// Rank off-diagonal confusion cells and attach the offending example ids.
pub fn error_report(
    metrics: &Metrics,
    preds: &[usize],
    golds: &[usize],
    ids: &[String],
    classes: &[String],
) -> ErrorReport {
    let mut cells: Vec<ConfusionCell> = Vec::new();
    for (g, row) in metrics.confusion.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            if g == p || count == 0 {
                continue;
            }
            let cell_ids: Vec<String> = preds
                .iter()
                .zip(golds)
                .zip(ids)
                .filter(|((&pp, &gg), _)| pp == p && gg == g)
                .map(|(_, id)| id.clone())
                .collect();
            cells.push(ConfusionCell {
                gold: classes[g].clone(),
                pred: classes[p].clone(),
                count,
                ids: cell_ids,
            });
        }
    }
    cells.sort_by(|a, b| {
        b.count.cmp(&a.count).then(a.gold.cmp(&b.gold)).then(a.pred.cmp(&b.pred))
    });
    let total_errors = cells.iter().map(|c| c.count).sum();
    ErrorReport { format: "errors.v1".to_string(), total_errors, cells }
}

fn unsupported<F: Scalar>(ckpt: &Checkpoint<F>, analysis: &str) -> TrainError {
    TrainError::Eval(EvalError::Unsupported {
        analysis: analysis.to_string(),
        model: ckpt.kind.to_string(),
        supported: "gate: mm-gate, mm-gated-xatt; attention: mm-xatt, mm-gated-xatt".to_string(),
    })
}
