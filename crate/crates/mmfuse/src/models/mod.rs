//! The classifier zoo: unimodal heads, concatenation and self-attention
//! baselines, gated fusion, cross-attention fusion, and the gated
//! cross-attention combination.
//!
//! Parameters live in plain matrices; [`forward::forward`] binds them to a
//! tape and builds the loss graph. Canonical parameter order is fixed per
//! model kind and shared by initialization, the optimizer, and checkpoints.

pub mod forward;

pub use forward::{
    classify, concat_fuse, gate_fuse, gated_xatt_fuse, infer, predict, selfattn_fuse, xatt_fuse,
    Fusion, FusionOutput,
};

use crate::error::NumError;
use crate::matrix::{Matrix, Scalar};
use crate::rng::{stream_rng, StreamId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which classifier to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Majority,
    Text,
    Image,
    Concat,
    Selfattn,
    MmGate,
    MmXatt,
    MmGatedXatt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Majority,
        ModelKind::Text,
        ModelKind::Image,
        ModelKind::Concat,
        ModelKind::Selfattn,
        ModelKind::MmGate,
        ModelKind::MmXatt,
        ModelKind::MmGatedXatt,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Majority => "majority",
            ModelKind::Text => "text",
            ModelKind::Image => "image",
            ModelKind::Concat => "concat",
            ModelKind::Selfattn => "selfattn",
            ModelKind::MmGate => "mm-gate",
            ModelKind::MmXatt => "mm-xatt",
            ModelKind::MmGatedXatt => "mm-gated-xatt",
        }
    }

    /// Models whose fusion exposes a gate activation.
    pub fn has_gate(&self) -> bool {
        matches!(self, ModelKind::MmGate | ModelKind::MmGatedXatt)
    }

    /// Models whose fusion exposes cross-attention weight matrices.
    pub fn has_cross_attention(&self) -> bool {
        matches!(self, ModelKind::MmXatt | ModelKind::MmGatedXatt)
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self, ModelKind::Majority)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl clap::ValueEnum for ModelKind {
    fn value_variants<'a>() -> &'a [Self] {
        &ModelKind::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown model kind {s:?}"))
    }
}

/// Gate width: one activation per fused dimension, or one shared scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    Vector,
    Scalar,
}

/// Whether cross-attention runs over feature sequences or pooled vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Pooled,
    Sequence,
}

/// Shared model hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Text feature width.
    pub d_t: usize,
    /// Image feature width.
    pub d_v: usize,
    /// Fused hidden width.
    #[serde(default = "default_hidden")]
    pub d: usize,
    /// Attention projection width. Defaults to `d`.
    #[serde(default)]
    pub d_proj: Option<usize>,
    /// Number of classes.
    pub classes: usize,
    /// Dropout probability applied to `h` before the classification layer.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_gate_mode")]
    pub gate_mode: GateMode,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
}

fn default_hidden() -> usize {
    200
}

fn default_gate_mode() -> GateMode {
    GateMode::Vector
}

fn default_granularity() -> Granularity {
    Granularity::Sequence
}

impl ModelConfig {
    pub fn new(d_t: usize, d_v: usize, classes: usize) -> Self {
        ModelConfig {
            d_t,
            d_v,
            d: default_hidden(),
            d_proj: None,
            classes,
            dropout: 0.0,
            gate_mode: default_gate_mode(),
            granularity: default_granularity(),
        }
    }

    pub fn d_proj(&self) -> usize {
        self.d_proj.unwrap_or(self.d)
    }

    /// Gate width under the configured mode.
    pub fn gate_width(&self) -> usize {
        match self.gate_mode {
            GateMode::Vector => self.d,
            GateMode::Scalar => 1,
        }
    }

    /// Width of `h` as seen by the classification layer.
    pub fn head_input_dim(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Majority => 1,
            ModelKind::Text => self.d_t,
            ModelKind::Image => self.d_v,
            ModelKind::Concat => 2 * self.d_t,
            ModelKind::Selfattn | ModelKind::MmXatt | ModelKind::MmGatedXatt => self.d_proj(),
            ModelKind::MmGate => self.d,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_t == 0 || self.d_v == 0 || self.d == 0 || self.d_proj() == 0 {
            return Err("all widths must be >= 1".into());
        }
        if self.classes < 2 {
            return Err("need at least 2 classes".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0,1)", self.dropout));
        }
        Ok(())
    }
}

/// One linear map `y = W x + b` with `W` of shape out x in and `b` out x 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<F: Scalar> {
    pub w: Matrix<F>,
    pub b: Matrix<F>,
}

/// Trainable weights for the gate equations.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<F: Scalar> {
    pub w_t: Matrix<F>,
    pub b_t: Matrix<F>,
    pub w_v: Matrix<F>,
    pub b_v: Matrix<F>,
    pub w_z: Matrix<F>,
    pub b_z: Matrix<F>,
}

/// Per-modality projections to the shared attention width.
#[derive(Debug, Clone, PartialEq)]
pub struct XAttParams<F: Scalar> {
    pub text: LinearParams<F>,
    pub image: LinearParams<F>,
}

/// Softmax classification layer weights.
pub type HeadParams<F> = LinearParams<F>;

/// All trainable state for one model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams<F: Scalar> {
    /// Constant predictor; the class index is the entire state.
    Majority { class: usize },
    Text { head: HeadParams<F> },
    Image { head: HeadParams<F> },
    Concat { proj: LinearParams<F>, head: HeadParams<F> },
    Selfattn { xatt: XAttParams<F>, head: HeadParams<F> },
    Gate { gate: GateParams<F>, head: HeadParams<F> },
    Xatt { xatt: XAttParams<F>, head: HeadParams<F> },
    GatedXatt { gate: GateParams<F>, xatt: XAttParams<F>, head: HeadParams<F> },
}

/// Name and shape of one parameter in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
}

fn spec(name: &'static str, rows: usize, cols: usize) -> ParamSpec {
    ParamSpec { name, rows, cols }
}

/// Whether a canonical parameter name denotes a bias column.
pub fn is_bias(name: &str) -> bool {
    name.contains(".b")
}

/// Canonical parameter list for a model kind under a config. Initialization,
/// the optimizer, and the checkpoint blob all follow this order.
pub fn param_specs(kind: ModelKind, cfg: &ModelConfig) -> Vec<ParamSpec> {
    let head_in = cfg.head_input_dim(kind);
    let m = cfg.classes;
    let head = [spec("head.w", m, head_in), spec("head.b", m, 1)];
    let gate = |g: usize| {
        [
            spec("gate.w_t", cfg.d, cfg.d_t),
            spec("gate.b_t", cfg.d, 1),
            spec("gate.w_v", cfg.d, cfg.d_v),
            spec("gate.b_v", cfg.d, 1),
            spec("gate.w_z", g, cfg.d_t + cfg.d_v),
            spec("gate.b_z", g, 1),
        ]
    };
    let xatt = |in_t: usize, in_v: usize| {
        [
            spec("xatt.text.w", cfg.d_proj(), in_t),
            spec("xatt.text.b", cfg.d_proj(), 1),
            spec("xatt.image.w", cfg.d_proj(), in_v),
            spec("xatt.image.b", cfg.d_proj(), 1),
        ]
    };
    match kind {
        ModelKind::Majority => vec![],
        ModelKind::Text | ModelKind::Image => head.to_vec(),
        ModelKind::Concat => {
            let mut v = vec![spec("proj.w", cfg.d_t, cfg.d_v), spec("proj.b", cfg.d_t, 1)];
            v.extend(head);
            v
        }
        ModelKind::Selfattn | ModelKind::MmXatt => {
            let mut v = xatt(cfg.d_t, cfg.d_v).to_vec();
            v.extend(head);
            v
        }
        ModelKind::MmGate => {
            let mut v = gate(cfg.gate_width()).to_vec();
            v.extend(head);
            v
        }
        ModelKind::MmGatedXatt => {
            let mut v = gate(cfg.gate_width()).to_vec();
            v.extend(xatt(cfg.d, cfg.d));
            v.extend(head);
            v
        }
    }
}

impl<F: Scalar> ModelParams<F> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Majority { .. } => ModelKind::Majority,
            ModelParams::Text { .. } => ModelKind::Text,
            ModelParams::Image { .. } => ModelKind::Image,
            ModelParams::Concat { .. } => ModelKind::Concat,
            ModelParams::Selfattn { .. } => ModelKind::Selfattn,
            ModelParams::Gate { .. } => ModelKind::MmGate,
            ModelParams::Xatt { .. } => ModelKind::MmXatt,
            ModelParams::GatedXatt { .. } => ModelKind::MmGatedXatt,
        }
    }

    /// Parameters in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, &Matrix<F>)> {
        match self {
            ModelParams::Majority { .. } => vec![],
            ModelParams::Text { head } | ModelParams::Image { head } => {
                vec![("head.w", &head.w), ("head.b", &head.b)]
            }
            ModelParams::Concat { proj, head } => vec![
                ("proj.w", &proj.w),
                ("proj.b", &proj.b),
                ("head.w", &head.w),
                ("head.b", &head.b),
            ],
            ModelParams::Selfattn { xatt, head } | ModelParams::Xatt { xatt, head } => vec![
                ("xatt.text.w", &xatt.text.w),
                ("xatt.text.b", &xatt.text.b),
                ("xatt.image.w", &xatt.image.w),
                ("xatt.image.b", &xatt.image.b),
                ("head.w", &head.w),
                ("head.b", &head.b),
            ],
            ModelParams::Gate { gate, head } => vec![
                ("gate.w_t", &gate.w_t),
                ("gate.b_t", &gate.b_t),
                ("gate.w_v", &gate.w_v),
                ("gate.b_v", &gate.b_v),
                ("gate.w_z", &gate.w_z),
                ("gate.b_z", &gate.b_z),
                ("head.w", &head.w),
                ("head.b", &head.b),
            ],
            ModelParams::GatedXatt { gate, xatt, head } => vec![
                ("gate.w_t", &gate.w_t),
                ("gate.b_t", &gate.b_t),
                ("gate.w_v", &gate.w_v),
                ("gate.b_v", &gate.b_v),
                ("gate.w_z", &gate.w_z),
                ("gate.b_z", &gate.b_z),
                ("xatt.text.w", &xatt.text.w),
                ("xatt.text.b", &xatt.text.b),
                ("xatt.image.w", &xatt.image.w),
                ("xatt.image.b", &xatt.image.b),
                ("head.w", &head.w),
                ("head.b", &head.b),
            ],
        }
    }

    pub fn entries_mut(&mut self) -> Vec<(&'static str, &mut Matrix<F>)> {
        match self {
            ModelParams::Majority { .. } => vec![],
            ModelParams::Text { head } | ModelParams::Image { head } => {
                vec![("head.w", &mut head.w), ("head.b", &mut head.b)]
            }
            ModelParams::Concat { proj, head } => vec![
                ("proj.w", &mut proj.w),
                ("proj.b", &mut proj.b),
                ("head.w", &mut head.w),
                ("head.b", &mut head.b),
            ],
            ModelParams::Selfattn { xatt, head } | ModelParams::Xatt { xatt, head } => vec![
                ("xatt.text.w", &mut xatt.text.w),
                ("xatt.text.b", &mut xatt.text.b),
                ("xatt.image.w", &mut xatt.image.w),
                ("xatt.image.b", &mut xatt.image.b),
                ("head.w", &mut head.w),
                ("head.b", &mut head.b),
            ],
            ModelParams::Gate { gate, head } => vec![
                ("gate.w_t", &mut gate.w_t),
                ("gate.b_t", &mut gate.b_t),
                ("gate.w_v", &mut gate.w_v),
                ("gate.b_v", &mut gate.b_v),
                ("gate.w_z", &mut gate.w_z),
                ("gate.b_z", &mut gate.b_z),
                ("head.w", &mut head.w),
                ("head.b", &mut head.b),
            ],
            ModelParams::GatedXatt { gate, xatt, head } => vec![
                ("gate.w_t", &mut gate.w_t),
                ("gate.b_t", &mut gate.b_t),
                ("gate.w_v", &mut gate.w_v),
                ("gate.b_v", &mut gate.b_v),
                ("gate.w_z", &mut gate.w_z),
                ("gate.b_z", &mut gate.b_z),
                ("xatt.text.w", &mut xatt.text.w),
                ("xatt.text.b", &mut xatt.text.b),
                ("xatt.image.w", &mut xatt.image.w),
                ("xatt.image.b", &mut xatt.image.b),
                ("head.w", &mut head.w),
                ("head.b", &mut head.b),
            ],
        }
    }

    /// Reassemble from matrices in canonical order (checkpoint load path).
    pub fn from_parts(
        kind: ModelKind,
        cfg: &ModelConfig,
        parts: Vec<Matrix<F>>,
        majority_class: Option<usize>,
    ) -> Result<Self, NumError> {
        let specs = param_specs(kind, cfg);
        if parts.len() != specs.len() {
            return Err(NumError::LengthMismatch {
                rows: specs.len(),
                cols: 1,
                len: parts.len(),
            });
        }
        for (s, p) in specs.iter().zip(&parts) {
            if p.shape() != (s.rows, s.cols) {
                return Err(NumError::ShapeMismatch {
                    op: "checkpoint-params",
                    lhs: (s.rows, s.cols),
                    rhs: p.shape(),
                });
            }
        }
        let mut it = parts.into_iter();
        macro_rules! next {
            () => {
                it.next().expect("length checked")
            };
        }
        macro_rules! linear {
            () => {
                LinearParams { w: next!(), b: next!() }
            };
        }
        macro_rules! gate {
            () => {
                GateParams {
                    w_t: next!(),
                    b_t: next!(),
                    w_v: next!(),
                    b_v: next!(),
                    w_z: next!(),
                    b_z: next!(),
                }
            };
        }
        Ok(match kind {
            ModelKind::Majority => ModelParams::Majority { class: majority_class.unwrap_or(0) },
            ModelKind::Text => ModelParams::Text { head: linear!() },
            ModelKind::Image => ModelParams::Image { head: linear!() },
            ModelKind::Concat => ModelParams::Concat { proj: linear!(), head: linear!() },
            ModelKind::Selfattn => ModelParams::Selfattn {
                xatt: XAttParams { text: linear!(), image: linear!() },
                head: linear!(),
            },
            ModelKind::MmXatt => ModelParams::Xatt {
                xatt: XAttParams { text: linear!(), image: linear!() },
                head: linear!(),
            },
            ModelKind::MmGate => ModelParams::Gate { gate: gate!(), head: linear!() },
            ModelKind::MmGatedXatt => ModelParams::GatedXatt {
                gate: gate!(),
                xatt: XAttParams { text: linear!(), image: linear!() },
                head: linear!(),
            },
        })
    }
}

/// Glorot-uniform weights, zero biases, drawn in canonical order from the
/// init stream of `seed`. Bias entries consume no randomness.
pub fn init_params<F: Scalar>(
    kind: ModelKind,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<ModelParams<F>, NumError> {
    let mut rng = stream_rng(seed, StreamId::Init);
    let mut parts = Vec::new();
    for s in param_specs(kind, cfg) {
        if is_bias(s.name) {
            parts.push(Matrix::zeros(s.rows, s.cols));
        } else {
            let (fan_out, fan_in) = (s.rows, s.cols);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            parts.push(Matrix::from_fn(s.rows, s.cols, |_, _| {
                F::from_f64(rng.gen_range(-bound..bound))
            }));
        }
    }
    ModelParams::from_parts(kind, cfg, parts, Some(0))
}
