use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::loss::{LossBreakdown, LossContext, PathWeights};
use super::params::{FrontEndConfig, PlfNetParams};
use super::scoring::PhoneScorer;
use crate::corpus::UtteranceRecord;
use crate::error::{Error, Result};
use crate::phonology::ConversionSpec;
use crate::seeds::derive_seed;
use crate::signal::{spec_augment, AugmentConfig, MelFrames};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Compression parameter `E` of ψ.
    pub compression: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Path 2: learnable scaling of the conversion matrix plus calibration.
    pub enable_path2: bool,
    /// Path 3: direct phone classification from the embedding.
    pub enable_path3: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Utterances per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
    pub frontend: FrontEndConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            compression: 4.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            enable_path2: true,
            enable_path3: true,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 1,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            frontend: FrontEndConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn path_weights(&self) -> PathWeights {
        PathWeights {
            path1: self.lambda1,
            path2: if self.enable_path2 { self.lambda2 } else { 0.0 },
            path3: if self.enable_path3 { self.lambda3 } else { 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compression > 0.0 && self.compression.is_finite()) {
            return Err(Error::Config(format!(
                "compression E must be positive, got {}",
                self.compression
            )));
        }
        for (name, l) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {l}")));
            }
        }
        let w = self.path_weights();
        if w.path1 == 0.0 && w.path2 == 0.0 && w.path3 == 0.0 {
            return Err(Error::Config("no training path is enabled".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.frontend.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss per utterance over the (augmented) training pass.
    pub loss: f64,
    /// Path-1 framewise accuracy on the clean training utterances.
    pub frame_accuracy: f64,
}

pub fn write_training_log<W: Write>(out: W, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "frame_accuracy"])?;
    for e in log {
        w.write_record([e.epoch.to_string(), e.loss.to_string(), e.frame_accuracy.to_string()])?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

struct Adam {
    m: PlfNetParams,
    v: PlfNetParams,
    step: i32,
}

impl Adam {
    fn new(params: &PlfNetParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut PlfNetParams, grads: &PlfNetParams, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let lr = cfg.learning_rate;
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
            ndarray::Zip::from(p).and(g.1).and(m).and(v).for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
            });
        }
    }
}

struct Prepared<'a> {
    id: &'a str,
    frames: MelFrames,
    labels: &'a [usize],
}

fn prepare<'a>(corpus: &'a [UtteranceRecord], spec: &ConversionSpec) -> Result<Vec<Prepared<'a>>> {
    let mut out = Vec::new();
    for u in corpus {
        let Some(labels) = u.labels.as_deref() else {
            log::warn!("skipping unlabeled utterance {}", u.id);
            continue;
        };
        if labels.len() != u.frames.num_frames() {
            return Err(Error::Dimension(format!(
                "utterance {}: {} labels for {} frames",
                u.id,
                labels.len(),
                u.frames.num_frames()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= spec.num_phones()) {
            return Err(Error::Index(format!("utterance {}: label {bad}", u.id)));
        }
        out.push(Prepared {
            id: &u.id,
            frames: u.frames.normalized(),
            labels,
        });
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("corpus has no labeled utterances".into()));
    }
    Ok(out)
}

fn clean_pass(ctx: &LossContext, params: &PlfNetParams, data: &[Prepared]) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for u in data {
        let (l, _) = ctx.evaluate(params, &u.frames.values, u.labels, None)?;
        acc.accumulate(&l);
    }
    Ok(acc)
}

/// Trains a PLF network on frame-labeled utterances.
pub fn train(corpus: &[UtteranceRecord], spec: &ConversionSpec, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let data = prepare(corpus, spec)?;
    let mut params = PlfNetParams::init(
        &cfg.frontend,
        spec.num_plfs(),
        spec.num_phones(),
        derive_seed(cfg.seed, "init"),
    )?;
    let scorer = PhoneScorer::new(spec, cfg.compression);
    let ctx = LossContext {
        frontend: &cfg.frontend,
        scorer: &scorer,
        matrix: spec.matrix.values(),
        weights: cfg.path_weights(),
    };
    let mut adam = Adam::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let aug_seed = derive_seed(cfg.seed, "augment");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            for &i in batch {
                let u = &data[i];
                let frames: std::borrow::Cow<Array2<f64>> = match &cfg.augment {
                    Some(a) => {
                        let seed = derive_seed(aug_seed, &format!("{epoch}/{i}"));
                        std::borrow::Cow::Owned(spec_augment(&u.frames, &a.with_seed(seed)).values)
                    }
                    None => std::borrow::Cow::Borrowed(&u.frames.values),
                };
                let (l, _) = ctx.evaluate(&params, &frames, u.labels, Some(&mut grads))?;
                if !l.total.is_finite() {
                    return Err(Error::Divergence(format!(
                        "epoch {epoch}, batch {b}, utterance {}: loss {} (path1 {}, path2 {}, path3 {})",
                        u.id, l.total, l.path1, l.path2, l.path3
                    )));
                }
                epoch_loss += l.total;
            }
            if batch.len() > 1 {
                for t in grads.tensors_mut() {
                    *t /= batch.len() as f64;
                }
            }
            adam.update(&mut params, &grads, cfg);
            if !params.all_finite() {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}, batch {b}: non-finite parameters after update"
                )));
            }
        }
        let clean = clean_pass(&ctx, &params, &data)?;
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: epoch_loss / data.len() as f64,
            frame_accuracy: clean.correct as f64 / clean.frames as f64,
        };
        log::info!(
            "epoch {} loss {:.4} frame accuracy {:.4}",
            entry.epoch,
            entry.loss,
            entry.frame_accuracy
        );
        log.push(entry);
    }
    Ok(Checkpoint::new(spec.clone(), cfg.clone(), params, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    /// Path-1 argmax accuracy against frame labels.
    pub frame_accuracy: f64,
    /// Fraction of `|M| = 1` entries whose mean PLF logit over that phone's
    /// frames has the sign of `M`.
    pub sign_agreement: f64,
    pub mean_loss: f64,
}

/// Scores a checkpoint on labeled utterances (no augmentation).
pub fn evaluate(ckpt: &Checkpoint, corpus: &[UtteranceRecord]) -> Result<EvalReport> {
    let spec = &ckpt.spec;
    let data = prepare(corpus, spec)?;
    let scorer = PhoneScorer::new(spec, ckpt.config.compression);
    let ctx = LossContext {
        frontend: &ckpt.config.frontend,
        scorer: &scorer,
        matrix: spec.matrix.values(),
        weights: ckpt.config.path_weights(),
    };
    let (p, f) = spec.matrix.values().dim();
    let mut sums = Array2::<f64>::zeros((p, f));
    let mut counts = vec![0usize; p];
    let mut total = LossBreakdown::default();
    for u in &data {
        let (l, fwd) = ctx.evaluate(&ckpt.params, &u.frames.values, u.labels, None)?;
        total.accumulate(&l);
        let targets = super::loss::output_labels(&ckpt.config.frontend, u.labels, fwd.plf_logits.nrows());
        for (j, &y) in targets.iter().enumerate() {
            let mut row = sums.row_mut(y);
            row += &fwd.plf_logits.row(j);
            counts[y] += 1;
        }
    }
    let m = spec.matrix.values();
    let mut agree = 0usize;
    let mut considered = 0usize;
    for pi in 0..p {
        if counts[pi] == 0 {
            continue;
        }
        for fi in 0..f {
            if m[[pi, fi]].abs() == 1.0 {
                considered += 1;
                if sums[[pi, fi]] * m[[pi, fi]] > 0.0 {
                    agree += 1;
                }
            }
        }
    }
    Ok(EvalReport {
        frames: total.frames,
        frame_accuracy: total.correct as f64 / total.frames.max(1) as f64,
        sign_agreement: if considered == 0 {
            0.0
        } else {
            agree as f64 / considered as f64
        },
        mean_loss: total.total / data.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad_e = TrainConfig {
            compression: 0.0,
            ..Default::default()
        };
        assert!(bad_e.validate().is_err());
        let neg = TrainConfig {
            lambda2: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
        let none = TrainConfig {
            lambda1: 0.0,
            enable_path2: false,
            enable_path3: false,
            ..Default::default()
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn toggles_zero_the_path_weights() {
        let cfg = TrainConfig {
            enable_path2: false,
            ..Default::default()
        };
        let w = cfg.path_weights();
        assert_eq!((w.path1, w.path2, w.path3), (1.0, 0.0, 1.0));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let spec = ConversionSpec::demo();
        let err = train(&[], &spec, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn log_csv_has_three_columns() {
        let mut buf = Vec::new();
        write_training_log(
            &mut buf,
            &[EpochLog {
                epoch: 1,
                loss: 2.5,
                frame_accuracy: 0.25,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,loss,frame_accuracy\n1,2.5,0.25\n"
        );
    }
}
