//! Conv front end and the two linear heads, with a hand-written backward
//! pass. Activations are laid out channel-last: a conv layer's input is a
//! `(t·f) × c` matrix, so each convolution is an im2col gather followed by a
//! single matrix product.

use ndarray::{Array2, Axis};

use super::params::{ConvLayer, FrontEndConfig, LayerShape, PlfNetParams};
use crate::error::Result;

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn im2col(x: &Array2<f64>, s: &LayerShape, l: &ConvLayer) -> Array2<f64> {
    let k = l.kernel_time * l.kernel_freq * s.c_in;
    let mut cols = Array2::zeros((s.t_out * s.f_out, k));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for to in 0..s.t_out {
        for fo in 0..s.f_out {
            let mut dst = (to * s.f_out + fo) * k;
            for kt in 0..l.kernel_time {
                let ti = to * l.stride_time + kt;
                for kf in 0..l.kernel_freq {
                    let src = (ti * s.f_in + fo * l.stride_freq + kf) * s.c_in;
                    cs[dst..dst + s.c_in].copy_from_slice(&xs[src..src + s.c_in]);
                    dst += s.c_in;
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, s: &LayerShape, l: &ConvLayer) -> Array2<f64> {
    let k = l.kernel_time * l.kernel_freq * s.c_in;
    let mut dx = Array2::zeros((s.t_in * s.f_in, s.c_in));
    let ds = dcols.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().expect("standard layout");
    for to in 0..s.t_out {
        for fo in 0..s.f_out {
            let mut src = (to * s.f_out + fo) * k;
            for kt in 0..l.kernel_time {
                let ti = to * l.stride_time + kt;
                for kf in 0..l.kernel_freq {
                    let dst = (ti * s.f_in + fo * l.stride_freq + kf) * s.c_in;
                    for c in 0..s.c_in {
                        xs[dst + c] += ds[src + c];
                    }
                    src += s.c_in;
                }
            }
        }
    }
    dx
}

fn relu_in_place(a: &mut Array2<f64>) -> f64 {
    let mut min_abs = f64::INFINITY;
    a.mapv_inplace(|x| {
        min_abs = min_abs.min(x.abs());
        x.max(0.0)
    });
    min_abs
}

fn mask_relu(grad: &mut Array2<f64>, out: &Array2<f64>) {
    grad.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    shapes: Vec<LayerShape>,
    cols: Vec<Array2<f64>>,
    conv_out: Vec<Array2<f64>>,
    flat: Array2<f64>,
    /// `T'×E` embeddings after the final ReLU.
    pub embeddings: Array2<f64>,
    /// `T'×F` PLF logits.
    pub plf_logits: Array2<f64>,
    /// `T'×P` direct phone logits.
    pub direct_logits: Array2<f64>,
    /// Smallest |pre-activation| seen at any ReLU.
    pub min_relu_margin: f64,
}

/// Runs the network on `T×24` (normalized) frames.
pub fn forward(params: &PlfNetParams, cfg: &FrontEndConfig, frames: &Array2<f64>) -> Result<Forward> {
    let shapes = cfg.layer_shapes(frames.nrows())?;
    let mut x = frames.as_standard_layout().into_owned();
    // (T, 24) with one input channel is already the (t·f)×1 layout.
    x = x
        .into_shape_with_order((shapes[0].t_in * shapes[0].f_in, 1))
        .expect("contiguous");
    let mut cols = Vec::with_capacity(shapes.len());
    let mut conv_out = Vec::with_capacity(shapes.len());
    let mut min_margin = f64::INFINITY;
    for (i, (s, l)) in shapes.iter().zip(&cfg.conv).enumerate() {
        let c = im2col(&x, s, l);
        let mut out = standard(c.dot(&params.conv_w[i]) + &params.conv_b[i]);
        min_margin = min_margin.min(relu_in_place(&mut out));
        cols.push(c);
        conv_out.push(out.clone());
        x = out;
    }
    let last = shapes.last().expect("non-empty");
    let flat = x
        .into_shape_with_order((last.t_out, last.f_out * last.c_out))
        .expect("contiguous");
    let mut embeddings = standard(flat.dot(&params.fc_w) + &params.fc_b);
    min_margin = min_margin.min(relu_in_place(&mut embeddings));
    let plf_logits = standard(embeddings.dot(&params.plf_w) + &params.plf_b);
    let direct_logits = standard(embeddings.dot(&params.direct_w) + &params.direct_b);
    Ok(Forward {
        shapes,
        cols,
        conv_out,
        flat,
        embeddings,
        plf_logits,
        direct_logits,
        min_relu_margin: min_margin,
    })
}

/// Backpropagates head gradients into `grads` (accumulating).
pub fn backward(
    params: &PlfNetParams,
    cfg: &FrontEndConfig,
    fwd: &Forward,
    d_plf: &Array2<f64>,
    d_direct: &Array2<f64>,
    grads: &mut PlfNetParams,
) {
    let h = &fwd.embeddings;
    grads.plf_w += &h.t().dot(d_plf);
    grads.plf_b += &d_plf.sum_axis(Axis(0)).insert_axis(Axis(0));
    grads.direct_w += &h.t().dot(d_direct);
    grads.direct_b += &d_direct.sum_axis(Axis(0)).insert_axis(Axis(0));

    let mut dh = d_plf.dot(&params.plf_w.t()) + d_direct.dot(&params.direct_w.t());
    mask_relu(&mut dh, h);
    grads.fc_w += &fwd.flat.t().dot(&dh);
    grads.fc_b += &dh.sum_axis(Axis(0)).insert_axis(Axis(0));

    let last = fwd.shapes.last().expect("non-empty");
    let mut dout = standard(dh.dot(&params.fc_w.t()))
        .into_shape_with_order((last.t_out * last.f_out, last.c_out))
        .expect("contiguous");
    for i in (0..fwd.shapes.len()).rev() {
        mask_relu(&mut dout, &fwd.conv_out[i]);
        grads.conv_w[i] += &fwd.cols[i].t().dot(&dout);
        grads.conv_b[i] += &dout.sum_axis(Axis(0)).insert_axis(Axis(0));
        if i > 0 {
            let dcols = standard(dout.dot(&params.conv_w[i].t()));
            dout = col2im(&dcols, &fwd.shapes[i], &cfg.conv[i]);
        }
    }
}
