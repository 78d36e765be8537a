//! Synthetic labeled corpora with known structure.
//!
//! Each phone is a Gaussian cluster in the 24-dim frame space: dimension `j`
//! of a frame carries `cue_scale · M[p, j]` for the first `F` dimensions and
//! zero elsewhere, plus isotropic noise. Pathological speakers have some PLF
//! dimensions pulled toward `neutral_cue`, and their intelligibility drops by
//! a fixed penalty per suppressed PLF.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::UtteranceRecord;
use crate::error::{Error, Result};
use crate::phonology::ConversionSpec;
use crate::plfnet::PlfLogits;
use crate::seeds::derive_seed;
use crate::signal::{MelFrames, N_MELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suppression {
    pub plf: String,
    /// 0 leaves the cue intact, 1 replaces it by the neutral value.
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerClass {
    pub name: String,
    pub count: usize,
    pub suppressed: Vec<Suppression>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub healthy_speakers: usize,
    pub pathological: Vec<SpeakerClass>,
    pub utterances_per_speaker: usize,
    pub phones_per_utterance: usize,
    pub frames_per_phone: usize,
    /// Per-segment duration varies uniformly by up to this many frames.
    pub frames_jitter: usize,
    pub noise_sigma: f64,
    pub cue_scale: f64,
    pub neutral_cue: f64,
    pub penalty_per_plf: f64,
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            healthy_speakers: 12,
            pathological: vec![SpeakerClass {
                name: "hyponasal".into(),
                count: 4,
                suppressed: vec![Suppression {
                    plf: "Nasal".into(),
                    severity: 1.0,
                }],
            }],
            utterances_per_speaker: 4,
            phones_per_utterance: 12,
            frames_per_phone: 8,
            frames_jitter: 3,
            noise_sigma: 0.3,
            cue_scale: 1.0,
            neutral_cue: -1.0,
            penalty_per_plf: 15.0,
            score_noise: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self, spec: &ConversionSpec) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if spec.num_plfs() > N_MELS {
            return bad(format!(
                "{} PLFs do not fit in {N_MELS} frame dimensions",
                spec.num_plfs()
            ));
        }
        if self.utterances_per_speaker == 0 || self.phones_per_utterance == 0 || self.frames_per_phone == 0 {
            return bad("utterance, phone and frame counts must be positive".into());
        }
        if self.frames_jitter >= self.frames_per_phone {
            return bad("frames_jitter must be below frames_per_phone".into());
        }
        if self.healthy_speakers + self.pathological.iter().map(|c| c.count).sum::<usize>() == 0 {
            return bad("no speakers".into());
        }
        for v in [self.noise_sigma, self.score_noise, self.penalty_per_plf] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("noise and penalty must be finite and >= 0, got {v}"));
            }
        }
        for class in &self.pathological {
            if class.name == "healthy" {
                return bad("pathological class may not be named healthy".into());
            }
            for s in &class.suppressed {
                if spec.plf_inventory.index_of(&s.plf).is_none() {
                    return bad(format!("class {}: unknown PLF {:?}", class.name, s.plf));
                }
                if !(0.0..=1.0).contains(&s.severity) {
                    return bad(format!("class {}: severity {} outside [0, 1]", class.name, s.severity));
                }
            }
        }
        Ok(())
    }
}

/// Noise-free cue vector of phone `p` with the given per-PLF severities.
fn cue(spec: &ConversionSpec, cfg: &SynthConfig, p: usize, severity: &[f64]) -> [f64; N_MELS] {
    let mut c = [0.0; N_MELS];
    for (j, s) in severity.iter().enumerate() {
        let clean = cfg.cue_scale * spec.matrix.values()[[p, j]];
        c[j] = (1.0 - s) * clean + s * cfg.neutral_cue;
    }
    c
}

fn utterance(
    spec: &ConversionSpec,
    cfg: &SynthConfig,
    severity: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(MelFrames, Vec<usize>)> {
    let n_phones = spec.num_phones();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut labels = Vec::new();
    let mut prev = None;
    for _ in 0..cfg.phones_per_utterance {
        let p = loop {
            let p = rng.random_range(0..n_phones);
            if n_phones == 1 || Some(p) != prev {
                break p;
            }
        };
        prev = Some(p);
        let j = cfg.frames_jitter as i64;
        let len = (cfg.frames_per_phone as i64 + rng.random_range(-j..=j)) as usize;
        labels.extend(std::iter::repeat_n(p, len));
    }
    let mut values = Array2::zeros((labels.len(), N_MELS));
    for (t, &p) in labels.iter().enumerate() {
        let c = cue(spec, cfg, p, severity);
        for d in 0..N_MELS {
            values[[t, d]] = c[d] + noise.sample(rng);
        }
    }
    Ok((MelFrames::new(values)?, labels))
}

/// Generates the corpus: healthy speakers first, then each pathological
/// class in order. Every speaker draws from its own derived seed.
pub fn generate(cfg: &SynthConfig, spec: &ConversionSpec) -> Result<Vec<UtteranceRecord>> {
    cfg.validate(spec)?;
    let f = spec.num_plfs();
    let mut speakers: Vec<(String, String, Vec<f64>)> = (0..cfg.healthy_speakers)
        .map(|i| (format!("healthy_{i:03}"), "healthy".to_string(), vec![0.0; f]))
        .collect();
    for class in &cfg.pathological {
        let mut severity = vec![0.0; f];
        for s in &class.suppressed {
            let j = spec.plf_inventory.index_of(&s.plf).expect("validated");
            severity[j] = s.severity;
        }
        for i in 0..class.count {
            speakers.push((format!("{}_{i:03}", class.name), class.name.clone(), severity.clone()));
        }
    }
    let score_noise = Normal::new(0.0, cfg.score_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for (speaker, pathology, severity) in speakers {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &speaker));
        let penalty = cfg.penalty_per_plf * severity.iter().sum::<f64>();
        let score = (100.0 - penalty + score_noise.sample(&mut rng)).clamp(0.0, 100.0);
        for u in 0..cfg.utterances_per_speaker {
            let (frames, labels) = utterance(spec, cfg, &severity, &mut rng)?;
            out.push(UtteranceRecord {
                id: format!("{speaker}_u{u:02}"),
                speaker: speaker.clone(),
                frames,
                labels: Some(labels),
                pathology: pathology.clone(),
                intelligibility: Some(score),
            });
        }
    }
    Ok(out)
}

/// Settings for [`histogram_speakers`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCorpusConfig {
    pub speakers: usize,
    pub frames: usize,
    /// Speaker means of each PLF's logits are uniform on `±mean_range`.
    pub mean_range: f64,
    pub logit_sigma: f64,
    /// PLF whose H0 mass drives the score.
    pub driver: String,
    pub intercept: f64,
    pub slope: f64,
    pub score_noise: f64,
    /// PLF whose speaker mean decides the pathology label.
    pub class_plf: String,
    pub seed: u64,
}

impl Default for HistogramCorpusConfig {
    fn default() -> Self {
        Self {
            speakers: 500,
            frames: 400,
            mean_range: 4.0,
            logit_sigma: 2.5,
            driver: "Alveolar".into(),
            intercept: 35.0,
            slope: 80.0,
            score_noise: 5.0,
            class_plf: "Nasal".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeaker {
    pub id: String,
    pub logits: PlfLogits,
    pub pathology: String,
    pub intelligibility: f64,
}

/// Speakers with frame-level PLF logits drawn directly, whose score is
/// `intercept + slope · H0(driver) + N(0, score_noise)` clamped to `[0, 100]`.
/// The pathology is `hypernasal` when the class PLF's speaker mean is
/// positive and `healthy` otherwise.
pub fn histogram_speakers(cfg: &HistogramCorpusConfig, spec: &ConversionSpec) -> Result<Vec<SyntheticSpeaker>> {
    let inv = &spec.plf_inventory;
    let driver = inv
        .index_of(&cfg.driver)
        .ok_or_else(|| Error::Config(format!("unknown PLF {:?}", cfg.driver)))?;
    let class_plf = inv
        .index_of(&cfg.class_plf)
        .ok_or_else(|| Error::Config(format!("unknown PLF {:?}", cfg.class_plf)))?;
    if cfg.speakers == 0 || cfg.frames == 0 {
        return Err(Error::Config("speakers and frames must be positive".into()));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let f = spec.num_plfs();
    let mut out = Vec::with_capacity(cfg.speakers);
    for s in 0..cfg.speakers {
        let id = format!("spk_{s:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &id));
        let means: Vec<f64> = (0..f)
            .map(|_| rng.random_range(-cfg.mean_range..=cfg.mean_range))
            .collect();
        let values = Array2::from_shape_fn((f, cfg.frames), |(j, _)| {
            means[j] + cfg.logit_sigma * unit.sample(&mut rng)
        });
        let logits = PlfLogits { values };
        let h0 = crate::features::plf_histogram(&logits)?.values[[driver, 6]];
        let score = (cfg.intercept + cfg.slope * h0 + cfg.score_noise * unit.sample(&mut rng)).clamp(0.0, 100.0);
        out.push(SyntheticSpeaker {
            id,
            logits,
            pathology: if means[class_plf] > 0.0 {
                "hypernasal"
            } else {
                "healthy"
            }
            .into(),
            intelligibility: score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SynthConfig {
        SynthConfig {
            noise_sigma: 0.0,
            score_noise: 0.0,
            healthy_speakers: 2,
            ..Default::default()
        }
    }

    #[test]
    fn labels_align_and_repeat_free() {
        let spec = ConversionSpec::demo();
        let corpus = generate(&SynthConfig::default(), &spec).unwrap();
        assert_eq!(corpus.len(), 16 * 4);
        for u in &corpus {
            let labels = u.labels.as_ref().unwrap();
            assert_eq!(labels.len(), u.frames.num_frames());
            assert_eq!(u.reference_phones().unwrap().len(), 12);
        }
    }

    #[test]
    fn noiseless_frames_sit_on_cues() {
        let spec = ConversionSpec::demo();
        let corpus = generate(&quiet(), &spec).unwrap();
        let nasal = spec.plf_inventory.index_of("Nasal").unwrap();
        for u in &corpus {
            for (t, &p) in u.labels.as_ref().unwrap().iter().enumerate() {
                let m = spec.matrix.values()[[p, nasal]];
                let v = u.frames.values[[t, nasal]];
                if u.pathology == "healthy" {
                    assert_eq!(v, m);
                } else {
                    assert_eq!(v, -1.0);
                }
                assert_eq!(u.frames.values[[t, 20]], 0.0);
            }
        }
    }

    #[test]
    fn scores_fall_with_more_suppression() {
        let spec = ConversionSpec::demo();
        let class = |name: &str, plfs: &[&str]| SpeakerClass {
            name: name.into(),
            count: 1,
            suppressed: plfs
                .iter()
                .map(|p| Suppression {
                    plf: p.to_string(),
                    severity: 1.0,
                })
                .collect(),
        };
        let cfg = SynthConfig {
            healthy_speakers: 1,
            pathological: vec![
                class("one", &["Nasal"]),
                class("two", &["Nasal", "Voiced"]),
                class("three", &["Nasal", "Voiced", "Alveolar"]),
            ],
            utterances_per_speaker: 1,
            ..quiet()
        };
        let scores: Vec<f64> = generate(&cfg, &spec)
            .unwrap()
            .iter()
            .map(|u| u.intelligibility.unwrap())
            .collect();
        assert_eq!(scores, vec![100.0, 85.0, 70.0, 55.0]);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ConversionSpec::demo();
        let a = generate(&SynthConfig::default(), &spec).unwrap();
        let b = generate(&SynthConfig::default(), &spec).unwrap();
        assert_eq!(a, b);
        let c = generate(
            &SynthConfig {
                seed: 1,
                ..Default::default()
            },
            &spec,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_suppression_is_rejected() {
        let spec = ConversionSpec::demo();
        let mut cfg = SynthConfig::default();
        cfg.pathological[0].suppressed[0].plf = "Lateral".into();
        assert!(matches!(generate(&cfg, &spec), Err(Error::Config(_))));
        cfg.pathological[0].suppressed[0].plf = "Nasal".into();
        cfg.pathological[0].suppressed[0].severity = 1.5;
        assert!(matches!(generate(&cfg, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn histogram_speakers_follow_driver() {
        let spec = ConversionSpec::demo();
        let cfg = HistogramCorpusConfig {
            speakers: 20,
            score_noise: 0.0,
            ..Default::default()
        };
        let speakers = histogram_speakers(&cfg, &spec).unwrap();
        assert_eq!(speakers.len(), 20);
        for s in &speakers {
            let h0 = crate::features::plf_histogram(&s.logits).unwrap().values[[3, 6]];
            assert!((s.intelligibility - (35.0 + 80.0 * h0)).abs() < 1e-12);
        }
    }
}
