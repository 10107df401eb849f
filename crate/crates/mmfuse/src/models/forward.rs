//! Tape-level forward passes for every model kind.
//!
//! Each fusion operation takes feature variables already registered on a
//! tape plus bound parameter variables, and returns the fused representation
//! with whatever diagnostics the mechanism exposes (gate activations,
//! attention weight matrices). [`infer`] wraps a full no-dropout pass and
//! materializes plain matrices for evaluation and analysis.

use crate::error::NumError;
use crate::matrix::{Matrix, Scalar};
use crate::models::{GateParams, LinearParams, ModelConfig, ModelParams, XAttParams};
use crate::tape::{scaled_dot_attention, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// A linear map bound to a tape. The bias is bound as a 1xN row so it can
/// broadcast over feature rows.
#[derive(Clone, Copy)]
pub struct LinearVars<'t, F: Scalar> {
    pub w: Var<'t, F>,
    pub b: Var<'t, F>,
}

#[derive(Clone, Copy)]
pub struct GateVars<'t, F: Scalar> {
    pub w_t: Var<'t, F>,
    pub b_t: Var<'t, F>,
    pub w_v: Var<'t, F>,
    pub b_v: Var<'t, F>,
    pub w_z: Var<'t, F>,
    pub b_z: Var<'t, F>,
}

#[derive(Clone, Copy)]
pub struct XattVars<'t, F: Scalar> {
    pub text: LinearVars<'t, F>,
    pub image: LinearVars<'t, F>,
}

/// All parameters of one model bound to a tape.
pub enum ModelVars<'t, F: Scalar> {
    Majority { class: usize },
    Text { head: LinearVars<'t, F> },
    Image { head: LinearVars<'t, F> },
    Concat { proj: LinearVars<'t, F>, head: LinearVars<'t, F> },
    Selfattn { xatt: XattVars<'t, F>, head: LinearVars<'t, F> },
    Gate { gate: GateVars<'t, F>, head: LinearVars<'t, F> },
    Xatt { xatt: XattVars<'t, F>, head: LinearVars<'t, F> },
    GatedXatt { gate: GateVars<'t, F>, xatt: XattVars<'t, F>, head: LinearVars<'t, F> },
}

fn bind_linear<'t, F: Scalar>(
    tape: &'t Tape<F>,
    p: &LinearParams<F>,
) -> Result<LinearVars<'t, F>, NumError> {
    Ok(LinearVars {
        w: tape.param(p.w.clone()),
        b: tape.param(p.b.reshape(1, p.b.rows())?),
    })
}

fn bind_gate<'t, F: Scalar>(
    tape: &'t Tape<F>,
    p: &GateParams<F>,
) -> Result<GateVars<'t, F>, NumError> {
    Ok(GateVars {
        w_t: tape.param(p.w_t.clone()),
        b_t: tape.param(p.b_t.reshape(1, p.b_t.rows())?),
        w_v: tape.param(p.w_v.clone()),
        b_v: tape.param(p.b_v.reshape(1, p.b_v.rows())?),
        w_z: tape.param(p.w_z.clone()),
        b_z: tape.param(p.b_z.reshape(1, p.b_z.rows())?),
    })
}

fn bind_xatt<'t, F: Scalar>(
    tape: &'t Tape<F>,
    p: &XAttParams<F>,
) -> Result<XattVars<'t, F>, NumError> {
    Ok(XattVars { text: bind_linear(tape, &p.text)?, image: bind_linear(tape, &p.image)? })
}

impl<'t, F: Scalar> ModelVars<'t, F> {
    /// Register all parameters as tape leaves in canonical order.
    pub fn bind(tape: &'t Tape<F>, params: &ModelParams<F>) -> Result<Self, NumError> {
        Ok(match params {
            ModelParams::Majority { class } => ModelVars::Majority { class: *class },
            ModelParams::Text { head } => ModelVars::Text { head: bind_linear(tape, head)? },
            ModelParams::Image { head } => ModelVars::Image { head: bind_linear(tape, head)? },
            ModelParams::Concat { proj, head } => ModelVars::Concat {
                proj: bind_linear(tape, proj)?,
                head: bind_linear(tape, head)?,
            },
            ModelParams::Selfattn { xatt, head } => ModelVars::Selfattn {
                xatt: bind_xatt(tape, xatt)?,
                head: bind_linear(tape, head)?,
            },
            ModelParams::Gate { gate, head } => ModelVars::Gate {
                gate: bind_gate(tape, gate)?,
                head: bind_linear(tape, head)?,
            },
            ModelParams::Xatt { xatt, head } => ModelVars::Xatt {
                xatt: bind_xatt(tape, xatt)?,
                head: bind_linear(tape, head)?,
            },
            ModelParams::GatedXatt { gate, xatt, head } => ModelVars::GatedXatt {
                gate: bind_gate(tape, gate)?,
                xatt: bind_xatt(tape, xatt)?,
                head: bind_linear(tape, head)?,
            },
        })
    }

    /// Bound variables in canonical order, mirroring `ModelParams::entries`.
    pub fn var_entries(&self) -> Vec<(&'static str, Var<'t, F>)> {
        let lin = |name: &'static str, l: &LinearVars<'t, F>| {
            let (w, b): (&'static str, &'static str) = match name {
                "proj" => ("proj.w", "proj.b"),
                "xatt.text" => ("xatt.text.w", "xatt.text.b"),
                "xatt.image" => ("xatt.image.w", "xatt.image.b"),
                _ => ("head.w", "head.b"),
            };
            vec![(w, l.w), (b, l.b)]
        };
        let gate_entries = |g: &GateVars<'t, F>| {
            vec![
                ("gate.w_t", g.w_t),
                ("gate.b_t", g.b_t),
                ("gate.w_v", g.w_v),
                ("gate.b_v", g.b_v),
                ("gate.w_z", g.w_z),
                ("gate.b_z", g.b_z),
            ]
        };
        match self {
            ModelVars::Majority { .. } => vec![],
            ModelVars::Text { head } | ModelVars::Image { head } => lin("head", head),
            ModelVars::Concat { proj, head } => {
                let mut v = lin("proj", proj);
                v.extend(lin("head", head));
                v
            }
            ModelVars::Selfattn { xatt, head } | ModelVars::Xatt { xatt, head } => {
                let mut v = lin("xatt.text", &xatt.text);
                v.extend(lin("xatt.image", &xatt.image));
                v.extend(lin("head", head));
                v
            }
            ModelVars::Gate { gate, head } => {
                let mut v = gate_entries(gate);
                v.extend(lin("head", head));
                v
            }
            ModelVars::GatedXatt { gate, xatt, head } => {
                let mut v = gate_entries(gate);
                v.extend(lin("xatt.text", &xatt.text));
                v.extend(lin("xatt.image", &xatt.image));
                v.extend(lin("head", head));
                v
            }
        }
    }

    /// Gradients for every parameter in canonical order, reshaped to the
    /// parameter's own storage shape (biases back to Nx1 columns).
    pub fn grads(&self, tape: &Tape<F>, params: &ModelParams<F>) -> Result<Vec<Matrix<F>>, NumError> {
        let entries = params.entries();
        let vars = self.var_entries();
        debug_assert_eq!(entries.len(), vars.len());
        entries
            .iter()
            .zip(vars)
            .map(|((_, p), (_, v))| tape.grad(v)?.reshape(p.rows(), p.cols()))
            .collect()
    }
}

/// Fused representation plus mechanism diagnostics, as tape variables.
pub struct Fusion<'t, F: Scalar> {
    pub h: Var<'t, F>,
    pub z: Option<Var<'t, F>>,
    pub h_t: Option<Var<'t, F>>,
    pub h_v: Option<Var<'t, F>>,
    pub attn_t2v: Option<Var<'t, F>>,
    pub attn_v2t: Option<Var<'t, F>>,
}

impl<'t, F: Scalar> Fusion<'t, F> {
    fn plain(h: Var<'t, F>) -> Self {
        Fusion { h, z: None, h_t: None, h_v: None, attn_t2v: None, attn_v2t: None }
    }
}

/// Full forward result: fusion diagnostics plus classifier logits.
pub struct ForwardPass<'t, F: Scalar> {
    pub fusion: Fusion<'t, F>,
    pub logits: Var<'t, F>,
}

/// Materialized forward outputs for evaluation and analysis.
#[derive(Debug, Clone)]
pub struct FusionOutput<F: Scalar> {
    pub h: Matrix<F>,
    pub logits: Matrix<F>,
    /// Gate activations as a Gx1 column, gate models only.
    pub z: Option<Matrix<F>>,
    pub h_t: Option<Matrix<F>>,
    pub h_v: Option<Matrix<F>>,
    pub attn_t2v: Option<Matrix<F>>,
    pub attn_v2t: Option<Matrix<F>>,
}

fn linear_rows<'t, F: Scalar>(
    x: Var<'t, F>,
    lin: &LinearVars<'t, F>,
) -> Result<Var<'t, F>, NumError> {
    x.matmul_nt(lin.w)?.add_row(lin.b)
}

fn pool<F: Scalar>(x: Var<'_, F>) -> Var<'_, F> {
    if x.shape().0 > 1 {
        x.mean_rows()
    } else {
        x
    }
}

/// Gate activation from pooled raw features: `z = sigmoid(W_z [f_t;f_v] + b_z)`.
fn gate_activation<'t, F: Scalar>(
    f_t: Var<'t, F>,
    f_v: Var<'t, F>,
    p: &GateVars<'t, F>,
) -> Result<Var<'t, F>, NumError> {
    let cat = f_t.concat_cols(f_v)?;
    Ok(linear_rows(cat, &LinearVars { w: p.w_z, b: p.b_z })?.sigmoid())
}

/// Gated fusion of pooled modality vectors:
/// `h = z .* tanh(W_t f_t + b_t) + (1-z) .* tanh(W_v f_v + b_v)`.
pub fn gate_fuse<'t, F: Scalar>(
    f_t: Var<'t, F>,
    f_v: Var<'t, F>,
    p: &GateVars<'t, F>,
) -> Result<Fusion<'t, F>, NumError> {
    let f_t = pool(f_t);
    let f_v = pool(f_v);
    let h_t = linear_rows(f_t, &LinearVars { w: p.w_t, b: p.b_t })?.tanh();
    let h_v = linear_rows(f_v, &LinearVars { w: p.w_v, b: p.b_v })?.tanh();
    let z = gate_activation(f_t, f_v, p)?;
    let h = h_t.mul_row(z)?.add(h_v.mul_row(z.one_minus())?)?;
    Ok(Fusion { h, z: Some(z), h_t: Some(h_t), h_v: Some(h_v), attn_t2v: None, attn_v2t: None })
}

/// Cross-attention fusion: project both sides to the shared width, attend
/// text-to-image and image-to-text, mean-pool each direction, sum.
pub fn xatt_fuse<'t, F: Scalar>(
    f_t: Var<'t, F>,
    f_v: Var<'t, F>,
    p: &XattVars<'t, F>,
) -> Result<Fusion<'t, F>, NumError> {
    let p_t = linear_rows(f_t, &p.text)?;
    let p_v = linear_rows(f_v, &p.image)?;
    let (out_t2v, attn_t2v) = scaled_dot_attention(p_t, p_v, p_v)?;
    let (out_v2t, attn_v2t) = scaled_dot_attention(p_v, p_t, p_t)?;
    let h = pool(out_t2v).add(pool(out_v2t))?;
    Ok(Fusion {
        h,
        z: None,
        h_t: None,
        h_v: None,
        attn_t2v: Some(attn_t2v),
        attn_v2t: Some(attn_v2t),
    })
}

/// Gated cross-attention: the gate computed from pooled raw features weights
/// the position-wise modality projections, and cross-attention runs over the
/// weighted sequences `z .* h_t` and `(1-z) .* h_v`.
pub fn gated_xatt_fuse<'t, F: Scalar>(
    f_t: Var<'t, F>,
    f_v: Var<'t, F>,
    gp: &GateVars<'t, F>,
    xp: &XattVars<'t, F>,
) -> Result<Fusion<'t, F>, NumError> {
    let z = gate_activation(pool(f_t), pool(f_v), gp)?;
    let h_t = linear_rows(f_t, &LinearVars { w: gp.w_t, b: gp.b_t })?.tanh();
    let h_v = linear_rows(f_v, &LinearVars { w: gp.w_v, b: gp.b_v })?.tanh();
    let g_t = h_t.mul_row(z)?;
    let g_v = h_v.mul_row(z.one_minus())?;
    let p_t = linear_rows(g_t, &xp.text)?;
    let p_v = linear_rows(g_v, &xp.image)?;
    let (out_t2v, attn_t2v) = scaled_dot_attention(p_t, p_v, p_v)?;
    let (out_v2t, attn_v2t) = scaled_dot_attention(p_v, p_t, p_t)?;
    let h = pool(out_t2v).add(pool(out_v2t))?;
    Ok(Fusion {
        h,
        z: Some(z),
        h_t: None,
        h_v: None,
        attn_t2v: Some(attn_t2v),
        attn_v2t: Some(attn_v2t),
    })
}

/// Concatenation baseline: `h = [f_t ; W f_v + b]` with the image projected
/// to the text width.
pub fn concat_fuse<'t, F: Scalar>(
    f_t: Var<'t, F>,
    f_v: Var<'t, F>,
    proj: &LinearVars<'t, F>,
) -> Result<Fusion<'t, F>, NumError> {
    let f_t = pool(f_t);
    let f_v = pool(f_v);
    let h = f_t.concat_cols(linear_rows(f_v, proj)?)?;
    Ok(Fusion::plain(h))
}

/// Self-attention baseline: stack the two projected modality vectors and
/// attend the 2-row sequence onto itself, then mean-pool.
pub fn selfattn_fuse<'t, F: Scalar>(
    f_t: Var<'t, F>,
    f_v: Var<'t, F>,
    p: &XattVars<'t, F>,
) -> Result<Fusion<'t, F>, NumError> {
    let p_t = linear_rows(pool(f_t), &p.text)?;
    let p_v = linear_rows(pool(f_v), &p.image)?;
    let stacked = p_t.concat_rows(p_v)?;
    let (out, _) = scaled_dot_attention(stacked, stacked, stacked)?;
    Ok(Fusion::plain(out.mean_rows()))
}

/// Classification layer with inverted dropout on `h`.
///
/// In training mode each coordinate of `h` is dropped with probability
/// `dropout` and survivors are scaled by `1/(1-dropout)`; evaluation applies
/// neither the mask nor the rescale. With `dropout == 0` the two modes are
/// identical and no randomness is consumed.
pub fn classify<'t, F: Scalar>(
    h: Var<'t, F>,
    head: &LinearVars<'t, F>,
    dropout: f64,
    rng: Option<&mut ChaCha12Rng>,
    training: bool,
) -> Result<Var<'t, F>, NumError> {
    let h = if training && dropout > 0.0 {
        let rng = rng.expect("training with dropout requires the dropout stream");
        let (rows, cols) = h.shape();
        let keep_scale = 1.0 / (1.0 - dropout);
        let mask = Matrix::from_fn(rows, cols, |_, _| {
            let u: f64 = rng.gen();
            if u < dropout {
                F::zero()
            } else {
                F::from_f64(keep_scale)
            }
        });
        h.mul_mask(mask)?
    } else {
        h
    };
    linear_rows(h, head)
}

/// Argmax with ties broken toward the lowest class index.
pub fn predict<F: Scalar>(logits: &Matrix<F>) -> usize {
    let row = logits.row_slice(0);
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// One full forward pass building logits (and the loss graph when the caller
/// adds a loss node). Feature matrices are registered as constants.
pub fn forward<'t, F: Scalar>(
    tape: &'t Tape<F>,
    vars: &ModelVars<'t, F>,
    cfg: &ModelConfig,
    text: &Matrix<F>,
    image: &Matrix<F>,
    dropout_rng: Option<&mut ChaCha12Rng>,
    training: bool,
) -> Result<ForwardPass<'t, F>, NumError> {
    let f_t = tape.constant(text.clone());
    let f_v = tape.constant(image.clone());
    // Pooled granularity collapses sequences before any attention runs.
    let (f_t, f_v) = match (vars, cfg.granularity) {
        (ModelVars::Xatt { .. } | ModelVars::GatedXatt { .. }, crate::models::Granularity::Pooled) => {
            (pool(f_t), pool(f_v))
        }
        _ => (f_t, f_v),
    };
    let (fusion, head) = match vars {
        ModelVars::Majority { class } => {
            let mut logits = Matrix::zeros(1, cfg.classes);
            logits.set(0, *class, F::one());
            let logits = tape.constant(logits);
            return Ok(ForwardPass { fusion: Fusion::plain(logits), logits });
        }
        ModelVars::Text { head } => (Fusion::plain(pool(f_t)), head),
        ModelVars::Image { head } => (Fusion::plain(pool(f_v)), head),
        ModelVars::Concat { proj, head } => (concat_fuse(f_t, f_v, proj)?, head),
        ModelVars::Selfattn { xatt, head } => (selfattn_fuse(f_t, f_v, xatt)?, head),
        ModelVars::Gate { gate, head } => (gate_fuse(f_t, f_v, gate)?, head),
        ModelVars::Xatt { xatt, head } => (xatt_fuse(f_t, f_v, xatt)?, head),
        ModelVars::GatedXatt { gate, xatt, head } => {
            (gated_xatt_fuse(f_t, f_v, gate, xatt)?, head)
        }
    };
    let logits = classify(fusion.h, head, cfg.dropout, dropout_rng, training)?;
    Ok(ForwardPass { fusion, logits })
}

/// Evaluation-mode forward pass materializing all diagnostics.
pub fn infer<F: Scalar>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    text: &Matrix<F>,
    image: &Matrix<F>,
) -> Result<FusionOutput<F>, NumError> {
    let tape = Tape::new();
    let vars = ModelVars::bind(&tape, params)?;
    let pass = forward(&tape, &vars, cfg, text, image, None, false)?;
    let col = |v: Var<'_, F>| -> Result<Matrix<F>, NumError> {
        let m = v.value();
        m.reshape(m.len(), 1)
    };
    Ok(FusionOutput {
        h: pass.fusion.h.value(),
        logits: pass.logits.value(),
        z: pass.fusion.z.map(col).transpose()?,
        h_t: pass.fusion.h_t.map(|v| v.value()),
        h_v: pass.fusion.h_v.map(|v| v.value()),
        attn_t2v: pass.fusion.attn_t2v.map(|v| v.value()),
        attn_v2t: pass.fusion.attn_v2t.map(|v| v.value()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, GateMode, Granularity, ModelKind};
    use crate::rng::{stream_rng, StreamId};
    use crate::tape::grad_check;
    use approx::assert_relative_eq;

    fn m64(rows: usize, cols: usize, data: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    fn zeros_gate(tape: &Tape<f64>, d: usize, d_t: usize, d_v: usize, g: usize) -> GateVars<'_, f64> {
        GateVars {
            w_t: tape.param(Matrix::zeros(d, d_t)),
            b_t: tape.param(Matrix::zeros(1, d)),
            w_v: tape.param(Matrix::zeros(d, d_v)),
            b_v: tape.param(Matrix::zeros(1, d)),
            w_z: tape.param(Matrix::zeros(g, d_t + d_v)),
            b_z: tape.param(Matrix::zeros(1, g)),
        }
    }

    #[test]
    fn gate_zero_weights_give_even_blend() {
        let tape = Tape::<f64>::new();
        let d = 3;
        let mut p = zeros_gate(&tape, d, 2, 2, d);
        p.w_t = tape.param(m64(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]));
        p.w_v = tape.param(m64(3, 2, &[0.2, 0.0, 0.0, -0.4, 1.0, 1.0]));
        let f_t = tape.constant(m64(1, 2, &[0.7, -0.3]));
        let f_v = tape.constant(m64(1, 2, &[-0.1, 0.9]));
        let fusion = gate_fuse(f_t, f_v, &p).unwrap();
        let z = fusion.z.unwrap().value();
        assert!(z.data().iter().all(|&x| x == 0.5));
        let (h, ht, hv) =
            (fusion.h.value(), fusion.h_t.unwrap().value(), fusion.h_v.unwrap().value());
        for c in 0..d {
            assert_relative_eq!(
                h.get(0, c),
                0.5 * (ht.get(0, c) + hv.get(0, c)),
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn gate_saturates_to_text() {
        let tape = Tape::<f64>::new();
        let mut p = zeros_gate(&tape, 2, 2, 2, 2);
        p.w_t = tape.param(m64(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        p.w_v = tape.param(m64(2, 2, &[-1.0, 0.5, 0.25, 2.0]));
        p.b_z = tape.param(m64(1, 2, &[30.0, 30.0]));
        let f_t = tape.constant(m64(1, 2, &[0.8, -0.6]));
        let f_v = tape.constant(m64(1, 2, &[0.5, 0.5]));
        let fusion = gate_fuse(f_t, f_v, &p).unwrap();
        let h = fusion.h.value();
        let ht = fusion.h_t.unwrap().value();
        for c in 0..2 {
            assert!((h.get(0, c) - ht.get(0, c)).abs() < 1e-9);
        }
    }

    // Frozen hand evaluation: scalar gate, unit weights, f_t=1, f_v=-1
    // gives z = sigmoid(0) = 0.5 and h = 0.5 tanh(1) + 0.5 tanh(-1) = 0.
    #[test]
    fn gate_scalar_hand_example() {
        let tape = Tape::<f64>::new();
        let p = GateVars {
            w_t: tape.param(m64(1, 1, &[1.0])),
            b_t: tape.param(m64(1, 1, &[0.0])),
            w_v: tape.param(m64(1, 1, &[1.0])),
            b_v: tape.param(m64(1, 1, &[0.0])),
            w_z: tape.param(m64(1, 2, &[1.0, 1.0])),
            b_z: tape.param(m64(1, 1, &[0.0])),
        };
        let f_t = tape.constant(m64(1, 1, &[1.0]));
        let f_v = tape.constant(m64(1, 1, &[-1.0]));
        let fusion = gate_fuse(f_t, f_v, &p).unwrap();
        assert_eq!(fusion.z.unwrap().value().get(0, 0), 0.5);
        assert_relative_eq!(fusion.h.value().get(0, 0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gate_h_is_convex_combination() {
        let tape = Tape::<f64>::new();
        let mut rng = stream_rng(3, StreamId::Init);
        for _ in 0..20 {
            let p = GateVars {
                w_t: tape.param(Matrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0))),
                b_t: tape.param(Matrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0))),
                w_v: tape.param(Matrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0))),
                b_v: tape.param(Matrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0))),
                w_z: tape.param(Matrix::from_fn(3, 6, |_, _| rng.gen_range(-1.0..1.0))),
                b_z: tape.param(Matrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0))),
            };
            let f_t = tape.constant(Matrix::from_fn(1, 4, |_, _| rng.gen_range(-2.0..2.0)));
            let f_v = tape.constant(Matrix::from_fn(1, 2, |_, _| rng.gen_range(-2.0..2.0)));
            let fusion = gate_fuse(f_t, f_v, &p).unwrap();
            let (h, ht, hv, z) = (
                fusion.h.value(),
                fusion.h_t.unwrap().value(),
                fusion.h_v.unwrap().value(),
                fusion.z.unwrap().value(),
            );
            for c in 0..3 {
                let (lo, hi) = if ht.get(0, c) <= hv.get(0, c) {
                    (ht.get(0, c), hv.get(0, c))
                } else {
                    (hv.get(0, c), ht.get(0, c))
                };
                let x = h.get(0, c);
                assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                assert!(z.get(0, c) > 0.0 && z.get(0, c) < 1.0);
            }
        }
    }

    #[test]
    fn xatt_single_rows_sum_projections_exactly() {
        let tape = Tape::<f64>::new();
        let p = XattVars {
            text: LinearVars {
                w: tape.param(m64(2, 3, &[0.5, -1.0, 0.25, 2.0, 0.0, 1.0])),
                b: tape.param(m64(1, 2, &[0.1, -0.2])),
            },
            image: LinearVars {
                w: tape.param(m64(2, 2, &[1.5, 0.5, -0.5, 1.0])),
                b: tape.param(m64(1, 2, &[0.0, 0.3])),
            },
        };
        let f_t = tape.constant(m64(1, 3, &[1.0, 2.0, -0.5]));
        let f_v = tape.constant(m64(1, 2, &[0.5, -1.5]));
        let fusion = xatt_fuse(f_t, f_v, &p).unwrap();
        // recompute the projections directly
        let pt = linear_rows(f_t, &p.text).unwrap().value();
        let pv = linear_rows(f_v, &p.image).unwrap().value();
        let h = fusion.h.value();
        for c in 0..2 {
            assert_eq!(h.get(0, c), pv.get(0, c) + pt.get(0, c));
        }
        assert_eq!(fusion.attn_t2v.unwrap().value().data(), &[1.0]);
        assert_eq!(fusion.attn_v2t.unwrap().value().data(), &[1.0]);
    }

    #[test]
    fn xatt_symmetric_inputs_give_symmetric_attention() {
        let tape = Tape::<f64>::new();
        let shared_w = m64(2, 2, &[0.7, -0.3, 0.4, 1.1]);
        let shared_b = m64(1, 2, &[0.05, -0.15]);
        let p = XattVars {
            text: LinearVars {
                w: tape.param(shared_w.clone()),
                b: tape.param(shared_b.clone()),
            },
            image: LinearVars { w: tape.param(shared_w), b: tape.param(shared_b) },
        };
        let feats = m64(3, 2, &[0.2, 0.9, -0.4, 0.3, 1.2, -0.8]);
        let f_t = tape.constant(feats.clone());
        let f_v = tape.constant(feats);
        let fusion = xatt_fuse(f_t, f_v, &p).unwrap();
        let a = fusion.attn_t2v.unwrap().value();
        let b = fusion.attn_v2t.unwrap().value();
        assert_eq!(a, b);
    }

    // Frozen composition: identity projections, P_t = [[1,0]],
    // P_v = [[1,0],[0,1]]. The t->v direction reproduces the two-key
    // attention value (0.669761549327, 0.330238450673); the v->t direction
    // attends single-key onto P_t, pooling to (1, 0).
    #[test]
    fn xatt_two_region_frozen_composition() {
        let tape = Tape::<f64>::new();
        let p = XattVars {
            text: LinearVars {
                w: tape.param(Matrix::identity(2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
            image: LinearVars {
                w: tape.param(Matrix::identity(2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
        };
        let f_t = tape.constant(m64(1, 2, &[1.0, 0.0]));
        let f_v = tape.constant(m64(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let fusion = xatt_fuse(f_t, f_v, &p).unwrap();
        let h = fusion.h.value();
        assert_relative_eq!(h.get(0, 0), 1.669761549327, max_relative = 1e-10);
        assert_relative_eq!(h.get(0, 1), 0.330238450673, max_relative = 1e-10);
    }

    #[test]
    fn xatt_permuting_image_rows_leaves_h_unchanged() {
        let tape = Tape::<f64>::new();
        let p = XattVars {
            text: LinearVars {
                w: tape.param(m64(2, 2, &[0.3, 0.8, -0.6, 0.2])),
                b: tape.param(m64(1, 2, &[0.1, 0.0])),
            },
            image: LinearVars {
                w: tape.param(m64(2, 2, &[1.0, -0.5, 0.5, 0.9])),
                b: tape.param(m64(1, 2, &[-0.1, 0.2])),
            },
        };
        let f_t = tape.constant(m64(2, 2, &[0.5, 1.0, -1.0, 0.25]));
        let vdata = [0.4, -0.7, 1.3, 0.6, -0.2, 0.1];
        let f_v = tape.constant(m64(3, 2, &vdata));
        let perm = [1usize, 2, 0];
        let f_vp = tape.constant(Matrix::from_fn(3, 2, |r, c| vdata[perm[r] * 2 + c]));
        let h1 = xatt_fuse(f_t, f_v, &p).unwrap().h.value();
        let h2 = xatt_fuse(f_t, f_vp, &p).unwrap().h.value();
        for c in 0..2 {
            assert_relative_eq!(h1.get(0, c), h2.get(0, c), max_relative = 1e-12);
        }
    }

    // Frozen hand evaluation at width 1: z = 0.5, gated halves 0.380797077978
    // and -0.380797077978, each single-key attention returns the opposite
    // value, so h = 0.
    #[test]
    fn gated_xatt_hand_example() {
        let tape = Tape::<f64>::new();
        let one = |r, c| tape.param(Matrix::filled(r, c, 1.0));
        let zero = |r, c| tape.param(Matrix::<f64>::zeros(r, c));
        let gp = GateVars {
            w_t: one(1, 1),
            b_t: zero(1, 1),
            w_v: one(1, 1),
            b_v: zero(1, 1),
            w_z: one(1, 2),
            b_z: zero(1, 1),
        };
        let xp = XattVars {
            text: LinearVars { w: one(1, 1), b: zero(1, 1) },
            image: LinearVars { w: one(1, 1), b: zero(1, 1) },
        };
        let f_t = tape.constant(m64(1, 1, &[1.0]));
        let f_v = tape.constant(m64(1, 1, &[-1.0]));
        let fusion = gated_xatt_fuse(f_t, f_v, &gp, &xp).unwrap();
        assert_eq!(fusion.z.unwrap().value().get(0, 0), 0.5);
        assert_relative_eq!(fusion.h.value().get(0, 0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gated_xatt_saturated_gate_zeroes_the_text_to_image_direction() {
        let tape = Tape::<f64>::new();
        let gp = GateVars {
            w_t: tape.param(m64(2, 2, &[0.4, -0.2, 0.7, 0.1])),
            b_t: tape.param(Matrix::zeros(1, 2)),
            w_v: tape.param(m64(2, 2, &[-0.9, 0.3, 0.2, 0.8])),
            b_v: tape.param(Matrix::zeros(1, 2)),
            w_z: tape.param(Matrix::zeros(2, 4)),
            b_z: tape.param(Matrix::filled(1, 2, 30.0)),
        };
        let xp = XattVars {
            text: LinearVars {
                w: tape.param(m64(2, 2, &[1.0, 0.2, -0.3, 0.6])),
                b: tape.param(Matrix::zeros(1, 2)),
            },
            image: LinearVars {
                w: tape.param(m64(2, 2, &[0.5, -0.1, 0.9, 0.4])),
                b: tape.param(Matrix::zeros(1, 2)),
            },
        };
        let f_t = tape.constant(m64(2, 2, &[0.6, -0.4, 1.1, 0.2]));
        let f_v = tape.constant(m64(3, 2, &[0.3, 0.9, -0.5, 0.7, 0.0, -1.0]));
        let fusion = gated_xatt_fuse(f_t, f_v, &gp, &xp).unwrap();

        // With z ~ 1 the image branch is zeroed, so the whole fused vector
        // collapses to the v->t direction: uniform attention over the
        // projected gated text rows.
        let h_t = linear_rows(f_t, &LinearVars { w: gp.w_t, b: gp.b_t }).unwrap().tanh();
        let p_t = linear_rows(h_t, &xp.text).unwrap().value();
        let expect = p_t.mean_rows();
        let h = fusion.h.value();
        for c in 0..2 {
            assert!((h.get(0, c) - expect.get(0, c)).abs() < 1e-9, "{h:?} vs {expect:?}");
        }

        // And with zero projections everywhere the fused vector is zero.
        let xp0 = XattVars {
            text: LinearVars {
                w: tape.param(Matrix::zeros(2, 2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
            image: LinearVars {
                w: tape.param(Matrix::zeros(2, 2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
        };
        let fusion0 = gated_xatt_fuse(f_t, f_v, &gp, &xp0).unwrap();
        assert!(fusion0.h.value().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gated_xatt_pooled_rows_reduce_to_projected_gated_sum() {
        let tape = Tape::<f64>::new();
        let gp = GateVars {
            w_t: tape.param(m64(2, 3, &[0.4, -0.2, 0.1, 0.7, 0.1, -0.5])),
            b_t: tape.param(m64(1, 2, &[0.05, -0.1])),
            w_v: tape.param(m64(2, 2, &[-0.9, 0.3, 0.2, 0.8])),
            b_v: tape.param(m64(1, 2, &[0.0, 0.2])),
            w_z: tape.param(Matrix::from_fn(2, 5, |r, c| 0.1 * (r as f64 - c as f64))),
            b_z: tape.param(m64(1, 2, &[0.3, -0.3])),
        };
        let xp = XattVars {
            text: LinearVars {
                w: tape.param(m64(2, 2, &[1.0, 0.2, -0.3, 0.6])),
                b: tape.param(m64(1, 2, &[0.02, 0.04])),
            },
            image: LinearVars {
                w: tape.param(m64(2, 2, &[0.5, -0.1, 0.9, 0.4])),
                b: tape.param(m64(1, 2, &[-0.06, 0.08])),
            },
        };
        let f_t = tape.constant(m64(1, 3, &[0.6, -0.4, 0.9]));
        let f_v = tape.constant(m64(1, 2, &[0.3, 0.9]));
        let fusion = gated_xatt_fuse(f_t, f_v, &gp, &xp).unwrap();

        let z = fusion.z.unwrap();
        let h_t = linear_rows(f_t, &LinearVars { w: gp.w_t, b: gp.b_t }).unwrap().tanh();
        let h_v = linear_rows(f_v, &LinearVars { w: gp.w_v, b: gp.b_v }).unwrap().tanh();
        let pt = linear_rows(h_t.mul_row(z).unwrap(), &xp.text).unwrap().value();
        let pv = linear_rows(h_v.mul_row(z.one_minus()).unwrap(), &xp.image).unwrap().value();
        let h = fusion.h.value();
        for c in 0..2 {
            assert_eq!(h.get(0, c), pv.get(0, c) + pt.get(0, c));
        }
    }

    #[test]
    fn concat_projections() {
        let tape = Tape::<f64>::new();
        let f_t = tape.constant(m64(1, 2, &[0.25, -0.75]));

        // zero weights: only the bias side survives
        let proj0 = LinearVars {
            w: tape.param(Matrix::zeros(2, 3)),
            b: tape.param(m64(1, 2, &[0.5, -0.5])),
        };
        let f_v3 = tape.constant(m64(1, 3, &[9.0, 9.0, 9.0]));
        let h = concat_fuse(f_t, f_v3, &proj0).unwrap().h.value();
        assert_eq!(h.data(), &[0.25, -0.75, 0.5, -0.5]);

        // identity projection passes the image through
        let proj_id = LinearVars {
            w: tape.param(Matrix::identity(2)),
            b: tape.param(Matrix::zeros(1, 2)),
        };
        let f_v2 = tape.constant(m64(1, 2, &[1.5, 2.5]));
        let h = concat_fuse(f_t, f_v2, &proj_id).unwrap().h.value();
        assert_eq!(h.data(), &[0.25, -0.75, 1.5, 2.5]);

        // hand arithmetic: W = [[2],[0]], f_v = [3] -> (6, 0)
        let proj = LinearVars {
            w: tape.param(m64(2, 1, &[2.0, 0.0])),
            b: tape.param(Matrix::zeros(1, 2)),
        };
        let f_v1 = tape.constant(m64(1, 1, &[3.0]));
        let h = concat_fuse(f_t, f_v1, &proj).unwrap().h.value();
        assert_eq!(h.data(), &[0.25, -0.75, 6.0, 0.0]);
    }

    #[test]
    fn selfattn_identical_and_zero_projections() {
        let tape = Tape::<f64>::new();
        // identical projected vectors -> attention is an even split and
        // h equals the shared vector
        let p = XattVars {
            text: LinearVars {
                w: tape.param(Matrix::identity(2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
            image: LinearVars {
                w: tape.param(Matrix::identity(2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
        };
        let shared = m64(1, 2, &[0.6, -1.2]);
        let f_t = tape.constant(shared.clone());
        let f_v = tape.constant(shared.clone());
        let h = selfattn_fuse(f_t, f_v, &p).unwrap().h.value();
        for c in 0..2 {
            assert_relative_eq!(h.get(0, c), shared.get(0, c), max_relative = 1e-12);
        }

        // zero projections -> uniform weights and h = 0
        let p0 = XattVars {
            text: LinearVars {
                w: tape.param(Matrix::zeros(2, 2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
            image: LinearVars {
                w: tape.param(Matrix::zeros(2, 2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
        };
        let h = selfattn_fuse(f_t, f_v, &p0).unwrap().h.value();
        assert!(h.data().iter().all(|&x| x == 0.0));
    }

    // Orthogonal unit vectors at width 2: logits put 1/sqrt(2) on self and 0
    // on the other row, frozen weights 0.669761549327 / 0.330238450673.
    #[test]
    fn selfattn_orthogonal_frozen_weights() {
        let tape = Tape::<f64>::new();
        let p = XattVars {
            text: LinearVars {
                w: tape.param(Matrix::identity(2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
            image: LinearVars {
                w: tape.param(Matrix::identity(2)),
                b: tape.param(Matrix::zeros(1, 2)),
            },
        };
        let f_t = tape.constant(m64(1, 2, &[1.0, 0.0]));
        let f_v = tape.constant(m64(1, 2, &[0.0, 1.0]));
        let h = selfattn_fuse(f_t, f_v, &p).unwrap().h.value();
        // Mean of the two attended rows: each row is a (w, 1-w) blend of the
        // two unit vectors, so pooling gives (0.5, 0.5).
        assert_relative_eq!(h.get(0, 0), 0.5, max_relative = 1e-12);
        assert_relative_eq!(h.get(0, 1), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn classify_dropout_behaviour() {
        let tape = Tape::<f64>::new();
        let head = LinearVars {
            w: tape.param(m64(2, 3, &[0.5, -0.5, 1.0, 0.25, 0.75, -0.25])),
            b: tape.param(m64(1, 2, &[0.1, -0.1])),
        };
        let h = tape.constant(m64(1, 3, &[1.0, 2.0, 3.0]));

        // no dropout: training equals evaluation, no rng consumed
        let train = classify(h, &head, 0.0, None, true).unwrap().value();
        let eval = classify(h, &head, 0.0, None, false).unwrap().value();
        assert_eq!(train, eval);

        // fixed seed reproduces the dropped coordinate set
        let mut rng1 = stream_rng(11, StreamId::Dropout);
        let mut rng2 = stream_rng(11, StreamId::Dropout);
        let a = classify(h, &head, 0.5, Some(&mut rng1), true).unwrap().value();
        let b = classify(h, &head, 0.5, Some(&mut rng2), true).unwrap().value();
        assert_eq!(a, b);

        // zero head weights: logits are the bias regardless of h
        let head0 = LinearVars {
            w: tape.param(Matrix::zeros(2, 3)),
            b: tape.param(m64(1, 2, &[0.7, -0.3])),
        };
        let logits = classify(h, &head0, 0.0, None, false).unwrap().value();
        assert_eq!(logits.data(), &[0.7, -0.3]);
    }

    #[test]
    fn inverted_dropout_has_unit_expectation() {
        let tape = Tape::<f64>::new();
        let width = 8;
        let h = tape.constant(Matrix::filled(1, width, 1.0));
        let head = LinearVars {
            w: tape.param(Matrix::identity(width)),
            b: tape.param(Matrix::zeros(1, width)),
        };
        let mut rng = stream_rng(5, StreamId::Dropout);
        let samples = 100_000;
        let mut acc = vec![0.0; width];
        for _ in 0..samples {
            let logits = classify(h, &head, 0.3, Some(&mut rng), true).unwrap().value();
            for (a, &x) in acc.iter_mut().zip(logits.data()) {
                *a += x;
            }
        }
        for a in acc {
            let mean = a / samples as f64;
            assert!((mean - 1.0).abs() < 0.01, "dropout expectation {mean}");
        }
    }

    #[test]
    fn predict_argmax_and_tie_break() {
        assert_eq!(predict(&m64(1, 2, &[0.1, 0.9])), 1);
        assert_eq!(predict(&m64(1, 2, &[0.5, 0.5])), 0);
        let logits = m64(1, 4, &[0.3, -0.2, 0.9, 0.9]);
        assert_eq!(predict(&logits), 2);
        let shifted = logits.map(|x| x + 123.25);
        assert_eq!(predict(&shifted), predict(&logits));
    }

    #[test]
    fn forward_majority_emits_constant_prediction() {
        let cfg = ModelConfig::new(3, 2, 4);
        let params = ModelParams::<f64>::Majority { class: 2 };
        let out = infer(&params, &cfg, &Matrix::zeros(1, 3), &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(predict(&out.logits), 2);
    }

    /// Central differences validate every trainable model end to end,
    /// including both gate modes and both granularities.
    #[test]
    fn grad_check_every_model_at_desk_dims() {
        let mut cfg = ModelConfig::new(12, 10, 4);
        cfg.d = 8;
        cfg.d_proj = Some(8);
        let mut feat_rng = stream_rng(42, StreamId::SynthData);
        let text = Matrix::from_fn(3, 12, |_, _| feat_rng.gen_range(-1.0..1.0));
        let image = Matrix::from_fn(4, 10, |_, _| feat_rng.gen_range(-1.0..1.0));

        let mut configs: Vec<(ModelKind, ModelConfig)> = Vec::new();
        for kind in [ModelKind::Text, ModelKind::Image, ModelKind::Concat, ModelKind::Selfattn] {
            configs.push((kind, cfg.clone()));
        }
        for mode in [GateMode::Vector, GateMode::Scalar] {
            let mut c = cfg.clone();
            c.gate_mode = mode;
            configs.push((ModelKind::MmGate, c));
        }
        configs.push((ModelKind::MmXatt, cfg.clone()));
        for gran in [Granularity::Pooled, Granularity::Sequence] {
            let mut c = cfg.clone();
            c.granularity = gran;
            configs.push((ModelKind::MmGatedXatt, c));
        }

        for (kind, cfg) in configs {
            let params: ModelParams<f64> = init_params(kind, &cfg, 7).unwrap();
            // Biases go in row-shaped, exactly as bind() registers them.
            let parts: Vec<Matrix<f64>> = params
                .entries()
                .iter()
                .map(|(name, m)| {
                    if crate::models::is_bias(name) {
                        m.reshape(1, m.rows()).unwrap()
                    } else {
                        (*m).clone()
                    }
                })
                .collect();
            let err = grad_check(&parts, 1e-5, |tape, vars| {
                let bound = rebind(vars, kind);
                let pass = forward(tape, &bound, &cfg, &text, &image, None, false)?;
                tape.weighted_cross_entropy(pass.logits, 1, 1.3)
            })
            .unwrap();
            assert!(err < 1e-4, "{kind} gradient error {err}");
        }
    }

    /// Reassemble ModelVars from grad-check leaves in canonical order.
    fn rebind<'t>(vars: &[Var<'t, f64>], kind: ModelKind) -> ModelVars<'t, f64> {
        let mut it = vars.iter().copied();
        macro_rules! lin {
            () => {
                LinearVars { w: it.next().unwrap(), b: it.next().unwrap() }
            };
        }
        macro_rules! gate {
            () => {
                GateVars {
                    w_t: it.next().unwrap(),
                    b_t: it.next().unwrap(),
                    w_v: it.next().unwrap(),
                    b_v: it.next().unwrap(),
                    w_z: it.next().unwrap(),
                    b_z: it.next().unwrap(),
                }
            };
        }
        match kind {
            ModelKind::Majority => ModelVars::Majority { class: 0 },
            ModelKind::Text => ModelVars::Text { head: lin!() },
            ModelKind::Image => ModelVars::Image { head: lin!() },
            ModelKind::Concat => ModelVars::Concat { proj: lin!(), head: lin!() },
            ModelKind::Selfattn => ModelVars::Selfattn {
                xatt: XattVars { text: lin!(), image: lin!() },
                head: lin!(),
            },
            ModelKind::MmXatt => ModelVars::Xatt {
                xatt: XattVars { text: lin!(), image: lin!() },
                head: lin!(),
            },
            ModelKind::MmGate => ModelVars::Gate { gate: gate!(), head: lin!() },
            ModelKind::MmGatedXatt => ModelVars::GatedXatt {
                gate: gate!(),
                xatt: XattVars { text: lin!(), image: lin!() },
                head: lin!(),
            },
        }
    }
}
