//! Three-path training objective for one utterance.
//!
//! * path 1: softmax NLL over phone scores computed with the fixed matrix `M`;
//! * path 2: softmax NLL over calibrated scores `a_p·s_p + b_p` computed with
//!   `M ⊙ exp(S)`;
//! * path 3: cross-entropy over the direct phone logits.
//!
//! Each path's loss is averaged over output frames; the total is the
//! weighted sum.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, Forward};
use super::params::{FrontEndConfig, PlfNetParams};
use super::scoring::PhoneScorer;
use crate::error::{Error, Result};

/// Effective path weights; a disabled path has weight zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathWeights {
    pub path1: f64,
    pub path2: f64,
    pub path3: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub path1: f64,
    pub path2: f64,
    pub path3: f64,
    pub frames: usize,
    /// Frames whose path-1 argmax equals the label.
    pub correct: usize,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.path1 += other.path1;
        self.path2 += other.path2;
        self.path3 += other.path3;
        self.frames += other.frames;
        self.correct += other.correct;
    }
}

fn log_softmax_nll(z: &[f64], label: usize, grad: &mut [f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    for (g, x) in grad.iter_mut().zip(z) {
        *g = (x - lse).exp();
    }
    grad[label] -= 1.0;
    lse - z[label]
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Maps input-frame labels to the output frames of the front end.
pub fn output_labels(cfg: &FrontEndConfig, labels: &[usize], t_out: usize) -> Vec<usize> {
    (0..t_out).map(|j| labels[cfg.center_frame(j)]).collect()
}

pub struct LossContext<'a> {
    pub frontend: &'a FrontEndConfig,
    pub scorer: &'a PhoneScorer,
    /// Fixed conversion matrix `M`.
    pub matrix: &'a Array2<f64>,
    pub weights: PathWeights,
}

impl LossContext<'_> {
    /// Loss and (optionally) gradients for one utterance of normalized frames.
    pub fn evaluate(
        &self,
        params: &PlfNetParams,
        frames: &Array2<f64>,
        labels: &[usize],
        grads: Option<&mut PlfNetParams>,
    ) -> Result<(LossBreakdown, Forward)> {
        let n_phones = self.scorer.num_phones();
        if labels.len() != frames.nrows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} frames",
                labels.len(),
                frames.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_phones) {
            return Err(Error::Index(format!(
                "phone label {bad} outside inventory of {n_phones}"
            )));
        }
        let fwd = forward(params, self.frontend, frames)?;
        let t_out = fwd.plf_logits.nrows();
        let targets = output_labels(self.frontend, labels, t_out);
        let inv_t = 1.0 / t_out as f64;
        let w = self.weights;
        let want_grad = grads.is_some();

        let scaled = self.matrix * &params.scale_raw.mapv(f64::exp);
        let mut d_plf = Array2::zeros(fwd.plf_logits.raw_dim());
        let mut d_direct = Array2::zeros(fwd.direct_logits.raw_dim());
        let mut d_scaled = Array2::zeros(scaled.raw_dim());
        let mut d_calib_scale = vec![0.0; n_phones];
        let mut d_calib_offset = vec![0.0; n_phones];

        let mut s1 = vec![0.0; n_phones];
        let mut s2 = vec![0.0; n_phones];
        let mut z2 = vec![0.0; n_phones];
        let mut g = vec![0.0; n_phones];
        let mut ds = vec![0.0; n_phones];
        let mut out = LossBreakdown {
            frames: t_out,
            ..Default::default()
        };

        for (j, &y) in targets.iter().enumerate() {
            let v = fwd.plf_logits.row(j);
            let v = v.as_slice().expect("row-major");
            let mut dv = d_plf.row_mut(j);
            let dv = dv.as_slice_mut().expect("row-major");

            self.scorer.score_frame(v, self.matrix.view(), &mut s1);
            out.path1 += log_softmax_nll(&s1, y, &mut g) * inv_t;
            if argmax(&s1) == y {
                out.correct += 1;
            }
            if want_grad && w.path1 != 0.0 {
                g.iter().zip(ds.iter_mut()).for_each(|(g, d)| *d = g * w.path1 * inv_t);
                self.scorer.backward_frame(v, self.matrix.view(), &ds, dv, None);
            }

            self.scorer.score_frame(v, scaled.view(), &mut s2);
            for p in 0..n_phones {
                z2[p] = params.calib_scale[[0, p]] * s2[p] + params.calib_offset[[0, p]];
            }
            out.path2 += log_softmax_nll(&z2, y, &mut g) * inv_t;
            if want_grad && w.path2 != 0.0 {
                for p in 0..n_phones {
                    let dz = g[p] * w.path2 * inv_t;
                    d_calib_scale[p] += dz * s2[p];
                    d_calib_offset[p] += dz;
                    ds[p] = dz * params.calib_scale[[0, p]];
                }
                let mut dsv = d_scaled.view_mut();
                self.scorer.backward_frame(v, scaled.view(), &ds, dv, Some(&mut dsv));
            }

            let d = fwd.direct_logits.row(j);
            let mut dd = d_direct.row_mut(j);
            let dd = dd.as_slice_mut().expect("row-major");
            out.path3 += log_softmax_nll(d.as_slice().expect("row-major"), y, dd) * inv_t;
            if want_grad {
                dd.iter_mut().for_each(|x| *x *= w.path3 * inv_t);
            }
        }
        out.total = w.path1 * out.path1 + w.path2 * out.path2 + w.path3 * out.path3;

        if let Some(grads) = grads {
            if w.path3 == 0.0 {
                d_direct.fill(0.0);
            }
            // d/dS of M⊙exp(S) is the scaled matrix itself.
            grads.scale_raw += &(&d_scaled * &scaled);
            for p in 0..n_phones {
                grads.calib_scale[[0, p]] += d_calib_scale[p];
                grads.calib_offset[[0, p]] += d_calib_offset[p];
            }
            backward(params, self.frontend, &fwd, &d_plf, &d_direct, grads);
        }
        Ok((out, fwd))
    }
}

/// Per-frame path-1 phone scores, `P×T'`.
pub fn path1_scores(scorer: &PhoneScorer, matrix: &Array2<f64>, plf_logits_tf: &Array2<f64>) -> Array2<f64> {
    let t = plf_logits_tf.nrows();
    let mut out = Array2::zeros((scorer.num_phones(), t));
    let mut s = vec![0.0; scorer.num_phones()];
    for (j, v) in plf_logits_tf.axis_iter(Axis(0)).enumerate() {
        scorer.score_frame(v.as_slice().expect("row-major"), matrix.view(), &mut s);
        out.column_mut(j).iter_mut().zip(&s).for_each(|(o, x)| *o = *x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phonology::{ConversionMatrix, ConversionSpec, PlfGroups, PlfInventory};
    use crate::signal::N_MELS;

    fn single_phone_spec() -> ConversionSpec {
        ConversionSpec::new(
            PlfInventory::new(
                vec!["A".into(), "B".into()],
                PlfGroups {
                    horizontal: vec![],
                    vertical: vec![],
                },
            )
            .unwrap(),
            vec!["x".into()],
            ConversionMatrix::new(ndarray::array![[1.0, -1.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn one_phone_has_zero_loss() {
        let spec = single_phone_spec();
        let fe = FrontEndConfig::default();
        let params = PlfNetParams::init(&fe, 2, 1, 0).unwrap();
        let scorer = PhoneScorer::new(&spec, 4.0);
        let ctx = LossContext {
            frontend: &fe,
            scorer: &scorer,
            matrix: spec.matrix.values(),
            weights: PathWeights {
                path1: 1.0,
                path2: 1.0,
                path3: 1.0,
            },
        };
        let frames = Array2::from_shape_fn((5, N_MELS), |(t, f)| (t + f) as f64 * 0.01);
        let (loss, _) = ctx.evaluate(&params, &frames, &[0; 5], None).unwrap();
        assert_eq!(loss.frames, 1);
        assert!(loss.total.abs() < 1e-15);
        assert!(loss.path1.abs() < 1e-15 && loss.path2.abs() < 1e-15 && loss.path3.abs() < 1e-15);
    }

    #[test]
    fn path_isolation_and_label_checks() {
        let spec = ConversionSpec::demo();
        let fe = FrontEndConfig::default();
        let params = PlfNetParams::init(&fe, 8, 10, 2).unwrap();
        let scorer = PhoneScorer::new(&spec, 4.0);
        let mk = |w| LossContext {
            frontend: &fe,
            scorer: &scorer,
            matrix: spec.matrix.values(),
            weights: w,
        };
        let frames = Array2::from_shape_fn((12, N_MELS), |(t, f)| ((t * 3 + f) as f64).cos());
        let labels: Vec<usize> = (0..12).map(|t| t % 10).collect();
        let only1 = mk(PathWeights {
            path1: 1.0,
            path2: 0.0,
            path3: 0.0,
        });
        let (l, _) = only1.evaluate(&params, &frames, &labels, None).unwrap();
        assert_eq!(l.total, l.path1);

        let mut bad = labels.clone();
        bad[3] = 10;
        assert!(matches!(
            only1.evaluate(&params, &frames, &bad, None),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            only1.evaluate(&params, &frames, &labels[..5], None),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn disabled_paths_leave_their_parameters_untouched() {
        let spec = ConversionSpec::demo();
        let fe = FrontEndConfig::default();
        let params = PlfNetParams::init(&fe, 8, 10, 2).unwrap();
        let scorer = PhoneScorer::new(&spec, 4.0);
        let ctx = LossContext {
            frontend: &fe,
            scorer: &scorer,
            matrix: spec.matrix.values(),
            weights: PathWeights {
                path1: 1.0,
                path2: 0.0,
                path3: 0.0,
            },
        };
        let frames = Array2::from_shape_fn((12, N_MELS), |(t, f)| ((t * 3 + f) as f64).cos());
        let labels: Vec<usize> = (0..12).map(|t| t % 10).collect();
        let mut grads = params.zeros_like();
        ctx.evaluate(&params, &frames, &labels, Some(&mut grads)).unwrap();
        assert!(grads.scale_raw.iter().all(|&g| g == 0.0));
        assert!(grads.calib_scale.iter().all(|&g| g == 0.0));
        assert!(grads.direct_w.iter().all(|&g| g == 0.0));
        assert!(grads.plf_w.iter().any(|&g| g != 0.0));
    }
}
