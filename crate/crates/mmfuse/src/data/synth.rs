//! Synthetic multimodal datasets for desk-scale experiments.
//!
//! Each example draws a class and an informativeness coin: with probability
//! `text_informative_frac` the text carries the class signal and the image
//! is pure noise, otherwise the roles swap. The informative modality samples
//! `Normal(signal_mean * u_c, signal_std)` around a fixed class-specific
//! +-1 pattern `u_c`; the other modality samples `Normal(0, noise_std)`.
//! Everything is deterministic under the seed.

use super::{ClassCatalog, Dataset, DatasetHeader, FeatureRecord, Split};
use crate::error::DataError;
use crate::matrix::Matrix;
use crate::models::Granularity;
use crate::rng::{stream_rng, StreamId};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default = "default_dev")]
    pub dev: usize,
    #[serde(default = "default_test")]
    pub test: usize,
    #[serde(default = "default_d_t")]
    pub d_t: usize,
    #[serde(default = "default_d_v")]
    pub d_v: usize,
    /// Text rows per example; more than one row produces a sequence dataset.
    #[serde(default = "default_rows")]
    pub text_rows: usize,
    #[serde(default = "default_rows")]
    pub image_rows: usize,
    /// Signal mean magnitude (mu).
    #[serde(default = "default_signal_mean")]
    pub signal_mean: f64,
    /// Signal standard deviation.
    #[serde(default = "default_signal_std")]
    pub signal_std: f64,
    /// Noise standard deviation; zero collapses the noise modality to 0.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// Probability that the text modality is the informative one (rho).
    #[serde(default = "default_rho")]
    pub text_informative_frac: f64,
    /// Fraction of records written without a genuine image.
    #[serde(default)]
    pub missing_image_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> usize {
    2
}
fn default_train() -> usize {
    2000
}
fn default_dev() -> usize {
    500
}
fn default_test() -> usize {
    500
}
fn default_d_t() -> usize {
    16
}
fn default_d_v() -> usize {
    12
}
fn default_rows() -> usize {
    1
}
fn default_signal_mean() -> f64 {
    1.0
}
fn default_signal_std() -> f64 {
    0.5
}
fn default_noise_std() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    0.5
}

impl Default for SynthConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.classes < 2 {
            return Err("need at least 2 classes".into());
        }
        if self.d_t == 0 || self.d_v == 0 || self.text_rows == 0 || self.image_rows == 0 {
            return Err("feature dimensions must be >= 1".into());
        }
        if !(self.signal_mean > 0.0) || !(self.signal_std > 0.0) {
            return Err("signal mean and stdev must be positive".into());
        }
        if self.noise_std < 0.0 {
            return Err("noise stdev must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.text_informative_frac) {
            return Err("text-informative fraction must lie in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.missing_image_frac) {
            return Err("missing-image fraction must lie in [0,1]".into());
        }
        Ok(())
    }

    pub fn granularity(&self) -> Granularity {
        if self.text_rows > 1 || self.image_rows > 1 {
            Granularity::Sequence
        } else {
            Granularity::Pooled
        }
    }
}

/// The fixed +-1 class patterns, one per class and modality, drawn from the
/// pattern stream of the seed. Exposed so oracle code can evaluate the
/// generator's own likelihoods.
pub fn class_patterns(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = stream_rng(cfg.seed, StreamId::SynthPattern);
    let mut draw = |width: usize| -> Vec<f64> {
        (0..width).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
    };
    let mut text = Vec::with_capacity(cfg.classes);
    let mut image = Vec::with_capacity(cfg.classes);
    for _ in 0..cfg.classes {
        text.push(draw(cfg.d_t));
        image.push(draw(cfg.d_v));
    }
    (text, image)
}

/// Generate a dataset according to the config. Identical configs produce
/// bitwise-identical datasets.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    cfg.validate().map_err(|m| DataError::Manifest { line: 0, message: m })?;
    let (text_patterns, image_patterns) = class_patterns(cfg);
    let signal = Normal::new(0.0, cfg.signal_std).expect("validated");
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated");
    let mut rng = stream_rng(cfg.seed, StreamId::SynthData);

    let mut records = Vec::with_capacity(cfg.train + cfg.dev + cfg.test);
    for (split, count) in [
        (Split::Train, cfg.train),
        (Split::Dev, cfg.dev),
        (Split::Test, cfg.test),
    ] {
        for i in 0..count {
            let class = rng.gen_range(0..cfg.classes);
            let text_informative = rng.gen::<f64>() < cfg.text_informative_frac;
            let missing = cfg.missing_image_frac > 0.0 && rng.gen::<f64>() < cfg.missing_image_frac;

            let text_feats = sample_matrix(
                &mut rng,
                cfg.text_rows,
                cfg.d_t,
                text_informative.then(|| (&text_patterns[class], cfg.signal_mean)),
                &signal,
                &noise,
            );
            let image_feats = if missing {
                None
            } else {
                Some(sample_matrix(
                    &mut rng,
                    cfg.image_rows,
                    cfg.d_v,
                    (!text_informative).then(|| (&image_patterns[class], cfg.signal_mean)),
                    &signal,
                    &noise,
                ))
            };
            records.push(FeatureRecord {
                id: format!("synth-{}-{i:05}", split.as_str()),
                label: class,
                split,
                has_image: image_feats.is_some(),
                text_feats,
                image_feats,
                informative: Some(
                    if text_informative { "text" } else { "image" }.to_string(),
                ),
            });
        }
    }

    Ok(Dataset::new(
        DatasetHeader {
            d_t: cfg.d_t,
            d_v: cfg.d_v,
            granularity: cfg.granularity(),
            classes: ClassCatalog::generic(cfg.classes),
        },
        records,
    ))
}

fn sample_matrix(
    rng: &mut rand_chacha::ChaCha12Rng,
    rows: usize,
    cols: usize,
    pattern: Option<(&Vec<f64>, f64)>,
    signal: &Normal<f64>,
    noise: &Normal<f64>,
) -> Matrix<f32> {
    Matrix::from_fn(rows, cols, |_, c| match pattern {
        Some((u, mean)) => (mean * u[c] + signal.sample(rng)) as f32,
        None => noise.sample(rng) as f32,
    })
}
