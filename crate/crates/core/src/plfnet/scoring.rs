//! PLF-to-phone scoring.
//!
//! For a frame with PLF logits `v` and conversion weights `W` (either `M`
//! or `M ⊙ exp(S)`), phone `p` receives
//!
//! ```text
//! s_p = Σ_{f ungrouped} |W_pf| · ψ(log P(f|p))  +  Σ_{active groups G} ψ(log P(G|p))
//! ```
//!
//! where `P(f|p)` is `σ(v_f)` when `W_pf ≥ 0` and `σ(-v_f)` otherwise,
//! `P(G|p)` is the `W`-weighted mean of `σ(v_g)` over the members of `G`,
//! and `ψ(x) = E·(exp(x/E) − 1)`. The sign of `W_pf` selects the branch of
//! `P(f|p)`; its magnitude weights the term.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::phonology::{ConversionSpec, GroupKind, ScalingMatrix};

/// `ln(1e-12)`: log-posteriors are floored here before compression.
pub const LOG_FLOOR: f64 = -27.631_021_115_928_547;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability that PLF `f` takes the value phone `p` expects.
pub fn plf_posterior(v_f: f64, m_pf: f64) -> f64 {
    if m_pf >= 0.0 {
        sigmoid(v_f)
    } else {
        sigmoid(-v_f)
    }
}

/// Compression `ψ(x) = E·(exp(x/E) − 1)`.
pub fn compress(x: f64, e: f64) -> f64 {
    e * (x / e).exp_m1()
}

/// `dψ/dx = exp(x/E)`.
pub fn compress_grad(x: f64, e: f64) -> f64 {
    (x / e).exp()
}

/// Weighted mean of member posteriors for one phone, or `None` when all of
/// the phone's weights in the group are zero (the group is inactive).
pub fn grouped_posterior(v: &[f64], members: &[usize], weights: &[f64]) -> Result<Option<f64>> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &g in members {
        let w = weights[g];
        if w < 0.0 {
            return Err(Error::Validation(format!("negative group weight {w} at column {g}")));
        }
        num += w * sigmoid(v[g]);
        den += w;
    }
    Ok((den > 0.0).then(|| num / den))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub scale: Array1<f64>,
    pub offset: Array1<f64>,
}

impl Calibration {
    pub fn identity(phones: usize) -> Self {
        Self {
            scale: Array1::ones(phones),
            offset: Array1::zeros(phones),
        }
    }
}

#[derive(Debug, Clone)]
struct PhoneTerms {
    /// Ungrouped PLFs with nonzero `M`, paired with their sign.
    singles: Vec<(usize, f64)>,
    /// Active groups, each as the member columns with positive `M`.
    groups: Vec<Vec<usize>>,
}

/// Precomputed per-phone term structure of a [`ConversionSpec`]. The
/// structure depends only on which entries of `M` are nonzero, so the same
/// scorer serves both `M` and `M ⊙ exp(S)`.
#[derive(Debug, Clone)]
pub struct PhoneScorer {
    terms: Vec<PhoneTerms>,
    num_plfs: usize,
    pub compression: f64,
}

fn clamp_log(ell: f64) -> (f64, bool) {
    if ell < LOG_FLOOR || ell.is_nan() {
        (LOG_FLOOR, true)
    } else {
        (ell, false)
    }
}

impl PhoneScorer {
    pub fn new(spec: &ConversionSpec, compression: f64) -> Self {
        let m = spec.matrix.values();
        let inv = &spec.plf_inventory;
        let terms = m
            .rows()
            .into_iter()
            .map(|row| {
                let singles = (0..inv.len())
                    .filter(|&f| inv.group_of(f).is_none() && row[f] != 0.0)
                    .map(|f| (f, if row[f] > 0.0 { 1.0 } else { -1.0 }))
                    .collect();
                let groups = [GroupKind::Horizontal, GroupKind::Vertical]
                    .into_iter()
                    .map(|k| {
                        inv.group_members(k)
                            .iter()
                            .copied()
                            .filter(|&g| row[g] > 0.0)
                            .collect::<Vec<_>>()
                    })
                    .filter(|members| !members.is_empty())
                    .collect();
                PhoneTerms { singles, groups }
            })
            .collect();
        Self {
            terms,
            num_plfs: inv.len(),
            compression,
        }
    }

    pub fn num_phones(&self) -> usize {
        self.terms.len()
    }

    pub fn num_plfs(&self) -> usize {
        self.num_plfs
    }

    /// Uncalibrated scores for one frame.
    pub fn score_frame(&self, v: &[f64], w: ArrayView2<f64>, out: &mut [f64]) {
        let e = self.compression;
        for (p, terms) in self.terms.iter().enumerate() {
            let mut s = 0.0;
            for &(f, sign) in &terms.singles {
                let (ell, _) = clamp_log(log_sigmoid(sign * v[f]));
                s += w[[p, f]].abs() * compress(ell, e);
            }
            for members in &terms.groups {
                let (num, den) = members
                    .iter()
                    .fold((0.0, 0.0), |(n, d), &g| (n + w[[p, g]] * sigmoid(v[g]), d + w[[p, g]]));
                let (ell, _) = clamp_log((num / den).ln());
                s += compress(ell, e);
            }
            out[p] = s;
        }
    }

    /// Accumulates `∂L/∂v` into `dv` and, if requested, `∂L/∂W` into `dw`,
    /// given `∂L/∂s` for one frame.
    pub fn backward_frame(
        &self,
        v: &[f64],
        w: ArrayView2<f64>,
        dscores: &[f64],
        dv: &mut [f64],
        mut dw: Option<&mut ArrayViewMut2<f64>>,
    ) {
        let e = self.compression;
        for (p, terms) in self.terms.iter().enumerate() {
            let ds = dscores[p];
            if ds == 0.0 {
                continue;
            }
            for &(f, sign) in &terms.singles {
                let (ell, floored) = clamp_log(log_sigmoid(sign * v[f]));
                let wpf = w[[p, f]];
                if let Some(dw) = dw.as_deref_mut() {
                    dw[[p, f]] += ds * wpf.signum() * compress(ell, e);
                }
                if !floored {
                    let dell = ds * wpf.abs() * compress_grad(ell, e);
                    dv[f] += dell * sign * sigmoid(-sign * v[f]);
                }
            }
            for members in &terms.groups {
                let mut num = 0.0;
                let mut den = 0.0;
                for &g in members {
                    num += w[[p, g]] * sigmoid(v[g]);
                    den += w[[p, g]];
                }
                let q = num / den;
                let (ell, floored) = clamp_log(q.ln());
                if floored {
                    continue;
                }
                let dell = ds * compress_grad(ell, e);
                for &g in members {
                    let sg = sigmoid(v[g]);
                    dv[g] += dell * w[[p, g]] * sg * (1.0 - sg) / num;
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[[p, g]] += dell * (sg - q) / (den * q);
                    }
                }
            }
        }
    }
}

/// Phone scores for a single frame of PLF logits. With a scaling matrix the
/// weights become `M ⊙ exp(S)`; with a calibration the result is
/// `a_p·s_p + b_p`.
pub fn phone_scores(
    v: &[f64],
    spec: &ConversionSpec,
    compression: f64,
    scaling: Option<&ScalingMatrix>,
    calibration: Option<&Calibration>,
) -> Result<Vec<f64>> {
    if v.len() != spec.num_plfs() {
        return Err(Error::Dimension(format!(
            "{} logits for {} PLFs",
            v.len(),
            spec.num_plfs()
        )));
    }
    let w: Array2<f64> = match scaling {
        Some(s) => crate::phonology::effective_matrix(&spec.matrix, s)?,
        None => spec.matrix.values().clone(),
    };
    let scorer = PhoneScorer::new(spec, compression);
    let mut out = vec![0.0; spec.num_phones()];
    scorer.score_frame(v, w.view(), &mut out);
    if let Some(c) = calibration {
        if c.scale.len() != out.len() || c.offset.len() != out.len() {
            return Err(Error::Dimension("calibration length differs from phone count".into()));
        }
        for (p, s) in out.iter_mut().enumerate() {
            *s = c.scale[p] * *s + c.offset[p];
        }
    }
    Ok(out)
}
