use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::N_MELS;

/// One valid (unpadded) 2-D convolution over (time, frequency).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel_time: usize,
    pub kernel_freq: usize,
    pub stride_time: usize,
    pub stride_freq: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontEndConfig {
    pub conv: Vec<ConvLayer>,
    pub embedding_dim: usize,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            conv: vec![
                ConvLayer {
                    channels: 32,
                    kernel_time: 3,
                    kernel_freq: 3,
                    stride_time: 1,
                    stride_freq: 1,
                },
                ConvLayer {
                    channels: 64,
                    kernel_time: 3,
                    kernel_freq: 3,
                    stride_time: 2,
                    stride_freq: 1,
                },
            ],
            embedding_dim: 512,
        }
    }
}

/// Shape of one conv layer's input and output for a given utterance length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub t_in: usize,
    pub f_in: usize,
    pub c_in: usize,
    pub t_out: usize,
    pub f_out: usize,
    pub c_out: usize,
}

impl FrontEndConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config("front end needs at least one conv layer".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        for (i, l) in self.conv.iter().enumerate() {
            if l.channels == 0 || l.kernel_time == 0 || l.kernel_freq == 0 || l.stride_time == 0 || l.stride_freq == 0 {
                return Err(Error::Config(format!("conv layer {i} has a zero size")));
            }
        }
        self.freq_out().map(|_| ())
    }

    fn freq_out(&self) -> Result<usize> {
        let mut f = N_MELS;
        for (i, l) in self.conv.iter().enumerate() {
            if f < l.kernel_freq {
                return Err(Error::Config(format!(
                    "conv layer {i}: kernel {} exceeds {f} frequency bins",
                    l.kernel_freq
                )));
            }
            f = (f - l.kernel_freq) / l.stride_freq + 1;
        }
        Ok(f)
    }

    /// Input frames seen by one output frame.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.conv {
            rf += (l.kernel_time - 1) * jump;
            jump *= l.stride_time;
        }
        rf
    }

    /// Input-frame stride between consecutive output frames.
    pub fn total_stride(&self) -> usize {
        self.conv.iter().map(|l| l.stride_time).product()
    }

    /// Input frame at the center of output frame `j`'s receptive field.
    pub fn center_frame(&self, j: usize) -> usize {
        j * self.total_stride() + (self.receptive_field() - 1) / 2
    }

    pub fn layer_shapes(&self, t: usize) -> Result<Vec<LayerShape>> {
        let mut shapes = Vec::with_capacity(self.conv.len());
        let (mut t_in, mut f_in, mut c_in) = (t, N_MELS, 1);
        for l in &self.conv {
            if t_in < l.kernel_time {
                return Err(Error::TooShort(format!(
                    "{t} frames is shorter than the receptive field of {} frames",
                    self.receptive_field()
                )));
            }
            if f_in < l.kernel_freq {
                return Err(Error::Config("frequency kernel exceeds input".into()));
            }
            let s = LayerShape {
                t_in,
                f_in,
                c_in,
                t_out: (t_in - l.kernel_time) / l.stride_time + 1,
                f_out: (f_in - l.kernel_freq) / l.stride_freq + 1,
                c_out: l.channels,
            };
            shapes.push(s);
            (t_in, f_in, c_in) = (s.t_out, s.f_out, s.c_out);
        }
        Ok(shapes)
    }

    pub fn output_frames(&self, t: usize) -> Result<usize> {
        Ok(self.layer_shapes(t)?.last().expect("non-empty").t_out)
    }

    /// Width of the flattened conv output fed to the fully connected layer.
    pub fn flat_dim(&self) -> Result<usize> {
        Ok(self.freq_out()? * self.conv.last().map_or(1, |l| l.channels))
    }
}

/// All trainable parameters. Weight matrices are stored input-major so a
/// layer is `x.dot(&w) + b`; conv kernels are `(kt·kf·c_in) × c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlfNetParams {
    pub conv_w: Vec<Array2<f64>>,
    pub conv_b: Vec<Array2<f64>>,
    pub fc_w: Array2<f64>,
    pub fc_b: Array2<f64>,
    /// Embedding → PLF logits.
    pub plf_w: Array2<f64>,
    pub plf_b: Array2<f64>,
    /// Embedding → direct phone logits.
    pub direct_w: Array2<f64>,
    pub direct_b: Array2<f64>,
    /// `P×F` log-scale of the learnable conversion scaling.
    pub scale_raw: Array2<f64>,
    /// `1×P` calibration scale `a_p`.
    pub calib_scale: Array2<f64>,
    /// `1×P` calibration offset `b_p`.
    pub calib_offset: Array2<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl PlfNetParams {
    pub fn init(cfg: &FrontEndConfig, plfs: usize, phones: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        let mut c_in = 1;
        for l in &cfg.conv {
            let fan_in = l.kernel_time * l.kernel_freq * c_in;
            conv_w.push(gaussian(&mut rng, fan_in, l.channels, (2.0 / fan_in as f64).sqrt()));
            conv_b.push(Array2::zeros((1, l.channels)));
            c_in = l.channels;
        }
        let flat = cfg.flat_dim()?;
        let emb = cfg.embedding_dim;
        Ok(Self {
            conv_w,
            conv_b,
            fc_w: gaussian(&mut rng, flat, emb, (2.0 / flat as f64).sqrt()),
            fc_b: Array2::zeros((1, emb)),
            plf_w: gaussian(&mut rng, emb, plfs, (1.0 / emb as f64).sqrt()),
            plf_b: Array2::zeros((1, plfs)),
            direct_w: gaussian(&mut rng, emb, phones, (1.0 / emb as f64).sqrt()),
            direct_b: Array2::zeros((1, phones)),
            scale_raw: Array2::zeros((phones, plfs)),
            calib_scale: Array2::ones((1, phones)),
            calib_offset: Array2::zeros((1, phones)),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Self {
            conv_w: self.conv_w.iter().map(z).collect(),
            conv_b: self.conv_b.iter().map(z).collect(),
            fc_w: z(&self.fc_w),
            fc_b: z(&self.fc_b),
            plf_w: z(&self.plf_w),
            plf_b: z(&self.plf_b),
            direct_w: z(&self.direct_w),
            direct_b: z(&self.direct_b),
            scale_raw: z(&self.scale_raw),
            calib_scale: z(&self.calib_scale),
            calib_offset: z(&self.calib_offset),
        }
    }

    /// Named tensors in a fixed order; this order defines the checkpoint layout.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.conv_w.iter().zip(&self.conv_b).enumerate() {
            out.push((format!("conv{i}.weight"), w));
            out.push((format!("conv{i}.bias"), b));
        }
        out.extend([
            ("fc.weight".to_string(), &self.fc_w),
            ("fc.bias".to_string(), &self.fc_b),
            ("plf.weight".to_string(), &self.plf_w),
            ("plf.bias".to_string(), &self.plf_b),
            ("direct.weight".to_string(), &self.direct_w),
            ("direct.bias".to_string(), &self.direct_b),
            ("scaling.raw".to_string(), &self.scale_raw),
            ("calibration.scale".to_string(), &self.calib_scale),
            ("calibration.offset".to_string(), &self.calib_offset),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for (w, b) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.extend([
            &mut self.fc_w,
            &mut self.fc_b,
            &mut self.plf_w,
            &mut self.plf_b,
            &mut self.direct_w,
            &mut self.direct_b,
            &mut self.scale_raw,
            &mut self.calib_scale,
            &mut self.calib_offset,
        ]);
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_values());
        for (_, t) in self.tensors() {
            v.extend(t.iter().copied());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_values()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.iter_mut().zip(&flat[off..off + n]).for_each(|(d, s)| *d = *s);
            off += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn add_scaled(&mut self, other: &Self, k: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(k, b.1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let cfg = FrontEndConfig::default();
        assert_eq!(cfg.receptive_field(), 5);
        assert_eq!(cfg.total_stride(), 2);
        assert_eq!(cfg.center_frame(0), 2);
        assert_eq!(cfg.center_frame(3), 8);
        assert_eq!(cfg.output_frames(5).unwrap(), 1);
        assert_eq!(cfg.output_frames(6).unwrap(), 1);
        assert_eq!(cfg.output_frames(7).unwrap(), 2);
        assert_eq!(cfg.output_frames(100).unwrap(), 48);
        assert_eq!(cfg.flat_dim().unwrap(), 20 * 64);
        assert!(matches!(cfg.output_frames(4), Err(Error::TooShort(_))));
    }

    #[test]
    fn flat_round_trip_and_shapes() {
        let cfg = FrontEndConfig::default();
        let mut p = PlfNetParams::init(&cfg, 8, 10, 1).unwrap();
        assert_eq!(p.fc_w.dim(), (1280, 512));
        assert_eq!(p.conv_w[1].dim(), (3 * 3 * 32, 64));
        let flat = p.to_flat();
        let q = p.clone();
        p.set_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(p.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = FrontEndConfig::default();
        let a = PlfNetParams::init(&cfg, 8, 10, 3).unwrap();
        assert_eq!(a, PlfNetParams::init(&cfg, 8, 10, 3).unwrap());
        assert_ne!(a, PlfNetParams::init(&cfg, 8, 10, 4).unwrap());
        assert!(a.calib_scale.iter().all(|&x| x == 1.0));
        assert!(a.calib_offset.iter().all(|&x| x == 0.0));
        assert!(a.scale_raw.iter().all(|&x| x == 0.0));
    }
}
