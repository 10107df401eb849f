//! Adam optimization with weighted cross-entropy, seeded mini-batch
//! shuffling, early stopping on validation loss, and multi-seed runs.

use crate::data::{class_weights, ClassCatalog, Dataset, Split};
use crate::error::{DataError, TrainError};
use crate::matrix::{Matrix, Scalar};
use crate::metrics::{compute_metrics, summarize, MetricSummary, Metrics};
use crate::models::{
    forward::{forward, predict, ModelVars},
    init_params, ModelConfig, ModelKind, ModelParams,
};
use crate::rng::{stream_rng, StreamId};
use crate::tape::Tape;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Single-run seed override; when unset, `seeds` drives multi-run.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps_adam: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    5
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0) {
            return Err("learning rate must be positive".into());
        }
        if self.patience == 0 {
            return Err("patience must be >= 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.effective_seeds().is_empty() {
            return Err("need at least one seed".into());
        }
        Ok(())
    }

    pub fn effective_seeds(&self) -> Vec<u64> {
        match self.seed {
            Some(s) => vec![s],
            None => self.seeds.clone(),
        }
    }
}

/// First/second moment buffers per parameter, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    m: Vec<Matrix<F>>,
    v: Vec<Matrix<F>>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        let zeros: Vec<Matrix<F>> =
            params.entries().iter().map(|(_, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&self) -> u64 {
        self.t
    }
}

/// One Adam update over all parameters in canonical order.
pub fn adam_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &[Matrix<F>],
    state: &mut AdamState<F>,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let mut entries = params.entries_mut();
    if entries.len() != grads.len() || entries.len() != state.m.len() {
        return Err(TrainError::StateMismatch {
            param: format!("{} params, {} grads", entries.len(), grads.len()),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::from_f64(cfg.beta1), F::from_f64(cfg.beta2));
    let lr = F::from_f64(cfg.learning_rate);
    let eps = F::from_f64(cfg.eps_adam);
    let corr1 = F::from_f64(1.0 - cfg.beta1.powi(t));
    let corr2 = F::from_f64(1.0 - cfg.beta2.powi(t));
    for (i, (name, p)) in entries.iter_mut().enumerate() {
        let g = &grads[i];
        if p.shape() != g.shape() {
            return Err(TrainError::StateMismatch { param: name.to_string() });
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGrad { param: name.to_string() });
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for ((pd, &gd), (md, vd)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *md = b1 * *md + (F::one() - b1) * gd;
            *vd = b2 * *vd + (F::one() - b2) * gd * gd;
            let mhat = *md / corr1;
            let vhat = *vd / corr2;
            *pd = *pd - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Everything inference needs, self-contained.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar> {
    pub kind: ModelKind,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ModelParams<F>,
    pub average_image: Option<Matrix<f32>>,
    pub classes: ClassCatalog,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

pub struct TrainOutcome<F: Scalar> {
    pub checkpoint: Checkpoint<F>,
    pub history: Vec<EpochStats>,
}

struct Prepared<F: Scalar> {
    text: Matrix<F>,
    image: Matrix<F>,
    label: usize,
}

fn prepare<F: Scalar>(
    dataset: &Dataset,
    split: Split,
    fallback_image: Option<&Matrix<f32>>,
) -> Result<Vec<Prepared<F>>, TrainError> {
    dataset
        .split(split)
        .map(|r| {
            let image = match (&r.image_feats, fallback_image) {
                (Some(img), _) => img.cast::<F>(),
                (None, Some(avg)) => avg.cast::<F>(),
                (None, None) => {
                    return Err(TrainError::Data(DataError::ImageFieldsInconsistent {
                        id: r.id.clone(),
                        has_image: r.has_image,
                        offsets: "absent and no average image on hand",
                    }))
                }
            };
            Ok(Prepared { text: r.text_feats.cast::<F>(), image, label: r.label })
        })
        .collect()
}

fn mean_weighted_loss<F: Scalar>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    examples: &[Prepared<F>],
    weights: &[f64],
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in examples {
        let tape = Tape::new();
        let vars = ModelVars::bind(&tape, params)?;
        let pass = forward(&tape, &vars, cfg, &ex.text, &ex.image, None, false)?;
        let loss = tape.weighted_cross_entropy(
            pass.logits,
            ex.label,
            F::from_f64(weights[ex.label]),
        )?;
        total += loss.value().get(0, 0).to_f64();
    }
    Ok(total / examples.len() as f64)
}

/// Train one model with early stopping on the dev loss.
///
/// The dataset must already be regime-filtered and imputed. The checkpoint
/// carries the parameters of the epoch with the lowest dev loss.
pub fn train_model<F: Scalar>(
    kind: ModelKind,
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    average_image: Option<Matrix<f32>>,
) -> Result<TrainOutcome<F>, TrainError> {
    if !kind.is_trainable() {
        return Err(TrainError::NotTrainable { model: kind.to_string() });
    }
    for split in [Split::Train, Split::Dev] {
        if dataset.split_len(split) == 0 {
            return Err(TrainError::Data(DataError::EmptySplit {
                split: split.as_str().to_string(),
            }));
        }
    }
    let mut cfg = model_cfg.clone();
    cfg.dropout = train_cfg.dropout;

    let weights = class_weights(&dataset.label_counts(Split::Train), &dataset.header.classes)?;
    let train: Vec<Prepared<F>> = prepare(dataset, Split::Train, average_image.as_ref())?;
    let dev: Vec<Prepared<F>> = prepare(dataset, Split::Dev, average_image.as_ref())?;

    let mut params: ModelParams<F> = init_params(kind, &cfg, seed)?;
    let mut state = AdamState::new(&params);
    let mut shuffle_rng = stream_rng(seed, StreamId::Shuffle);
    let mut dropout_rng = stream_rng(seed, StreamId::Dropout);

    let mut best: Option<(f64, usize, ModelParams<F>)> = None;
    let mut epochs_since_best = 0usize;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let tape = Tape::new();
            let vars = ModelVars::bind(&tape, &params)?;
            let mut total = None;
            for &idx in batch {
                let ex = &train[idx];
                let pass =
                    forward(&tape, &vars, &cfg, &ex.text, &ex.image, Some(&mut dropout_rng), true)?;
                let loss = tape.weighted_cross_entropy(
                    pass.logits,
                    ex.label,
                    F::from_f64(weights[ex.label]),
                )?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => loss.add(acc)?,
                });
            }
            let batch_loss =
                total.expect("non-empty batch").scale(F::from_f64(1.0 / batch.len() as f64));
            let loss_value = batch_loss.value().get(0, 0).to_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss_value * batch.len() as f64;
            tape.backward(batch_loss)?;
            let grads = vars.grads(&tape, &params)?;
            adam_step(&mut params, &grads, &mut state, train_cfg)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let dev_loss = mean_weighted_loss(&params, &cfg, &dev, &weights)?;
        if !dev_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        history.push(EpochStats { epoch, train_loss, dev_loss });
        log::debug!("{kind} seed {seed} epoch {epoch}: train {train_loss:.6} dev {dev_loss:.6}");

        let improved = best.as_ref().map_or(true, |(b, _, _)| dev_loss < *b);
        if improved {
            best = Some((dev_loss, epoch, params.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= train_cfg.patience {
                break;
            }
        }
    }

    let (best_dev_loss, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            kind,
            model_config: cfg,
            train_config: train_cfg.clone(),
            params: best_params,
            average_image,
            classes: dataset.header.classes.clone(),
            best_epoch,
            best_dev_loss,
        },
        history,
    })
}

/// Run the model over one split, producing aligned (pred, gold) labels.
/// Records without an image fall back to the supplied average.
pub fn predict_split<F: Scalar>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    dataset: &Dataset,
    split: Split,
    average_image: Option<&Matrix<f32>>,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let examples: Vec<Prepared<F>> = prepare(dataset, split, average_image)?;
    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    for ex in &examples {
        let out = crate::models::infer(params, cfg, &ex.text, &ex.image)?;
        preds.push(predict(&out.logits));
        golds.push(ex.label);
    }
    Ok((preds, golds))
}

/// One seed's training plus test-split evaluation.
pub struct SeedRun<F: Scalar> {
    pub seed: u64,
    pub checkpoint: Checkpoint<F>,
    pub metrics: Metrics,
    pub history: Vec<EpochStats>,
}

/// Train and evaluate once per seed. `train_data` is the regime-filtered
/// training dataset; `eval_data` supplies the test split (which may be the
/// same dataset). The average image is recomputed from the active train
/// split and reused for all seeds and for test-side imputation.
pub fn run_seeds<F: Scalar>(
    kind: ModelKind,
    train_data: &Dataset,
    eval_data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Vec<SeedRun<F>>, MetricSummary), TrainError> {
    let average_image = train_data.average_image()?;
    log::info!(
        "average image recomputed from {} paired train records",
        train_data.paired_count(Split::Train)
    );
    let mut runs = Vec::new();
    for &seed in &train_cfg.effective_seeds() {
        let outcome = train_model::<F>(
            kind,
            train_data,
            model_cfg,
            train_cfg,
            seed,
            Some(average_image.clone()),
        )?;
        let (preds, golds) = predict_split::<F>(
            &outcome.checkpoint.params,
            &outcome.checkpoint.model_config,
            eval_data,
            Split::Test,
            Some(&average_image),
        )?;
        let metrics = compute_metrics(&preds, &golds, eval_data.header.classes.names())?;
        log::info!("{kind} seed {seed}: {}", metrics.summary_line());
        runs.push(SeedRun { seed, checkpoint: outcome.checkpoint, metrics, history: outcome.history });
    }
    let summary = summarize(&runs.iter().map(|r| r.metrics.clone()).collect::<Vec<_>>());
    Ok((runs, summary))
}
