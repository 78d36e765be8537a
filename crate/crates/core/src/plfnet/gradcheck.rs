//! Central finite-difference check of the full three-path loss gradient
//! over randomly drawn small networks, phonologies and utterances.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{LossContext, PathWeights};
use super::network::forward;
use super::params::{ConvLayer, FrontEndConfig, PlfNetParams};
use super::scoring::PhoneScorer;
use crate::error::Result;
use crate::phonology::{ConversionMatrix, ConversionSpec, PlfGroups, PlfInventory};
use crate::signal::N_MELS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub configurations: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub max_phones: usize,
    pub max_plfs: usize,
    pub max_frames: usize,
    /// Draws with a ReLU pre-activation closer than this to zero are
    /// redrawn, since finite differences are meaningless across a kink.
    pub kink_margin: f64,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            configurations: 100,
            seed: 0,
            epsilon: 1e-4,
            max_phones: 6,
            max_plfs: 8,
            max_frames: 5,
            kink_margin: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub configurations: usize,
    pub redrawn: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    /// Where the largest error occurred.
    pub worst: String,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Draw {
    spec: ConversionSpec,
    frontend: FrontEndConfig,
    params: PlfNetParams,
    frames: Array2<f64>,
    labels: Vec<usize>,
    weights: PathWeights,
    compression: f64,
}

fn random_spec(rng: &mut ChaCha8Rng, max_phones: usize, max_plfs: usize) -> ConversionSpec {
    let f = rng.random_range(2..=max_plfs.max(2));
    let p = rng.random_range(1..=max_phones.max(1));
    let names: Vec<String> = (0..f).map(|i| format!("F{i}")).collect();
    let mut cols: Vec<usize> = (0..f).collect();
    cols.sort_by_key(|_| rng.random::<u32>());
    let n_vert = if f >= 3 { rng.random_range(0..=3.min(f - 1)) } else { 0 };
    let n_horiz = rng.random_range(0..=2.min(f - 1 - n_vert));
    let vertical: Vec<usize> = cols[..n_vert].to_vec();
    let horizontal: Vec<usize> = cols[n_vert..n_vert + n_horiz].to_vec();
    let grouped = |c: usize| vertical.contains(&c) || horizontal.contains(&c);
    let mut m = Array2::zeros((p, f));
    for pi in 0..p {
        for c in 0..f {
            if !grouped(c) {
                m[[pi, c]] = [-1.0, 0.0, 1.0][rng.random_range(0..3)];
            }
        }
        for group in [&vertical, &horizontal] {
            if !group.is_empty() && rng.random_bool(0.6) {
                for &c in group.iter() {
                    if rng.random_bool(0.7) {
                        m[[pi, c]] = rng.random_range(0.1..1.0);
                    }
                }
            }
        }
        if m.row(pi).iter().all(|&v| v == 0.0) {
            let c = cols[n_vert + n_horiz..][0];
            m[[pi, c]] = 1.0;
        }
    }
    let groups = PlfGroups {
        horizontal: horizontal.iter().map(|&c| names[c].clone()).collect(),
        vertical: vertical.iter().map(|&c| names[c].clone()).collect(),
    };
    ConversionSpec::new(
        PlfInventory::new(names, groups).expect("valid inventory"),
        (0..p).map(|i| format!("ph{i}")).collect(),
        ConversionMatrix::new(m).expect("entries in range"),
    )
    .expect("valid random spec")
}

fn random_frontend(rng: &mut ChaCha8Rng, max_frames: usize) -> FrontEndConfig {
    loop {
        let mut conv = vec![ConvLayer {
            channels: rng.random_range(1..=3),
            kernel_time: rng.random_range(1..=3),
            kernel_freq: rng.random_range(2..=4),
            stride_time: 1,
            stride_freq: rng.random_range(1..=2),
        }];
        if rng.random_bool(0.7) {
            conv.push(ConvLayer {
                channels: rng.random_range(1..=3),
                kernel_time: rng.random_range(1..=3),
                kernel_freq: rng.random_range(2..=3),
                stride_time: rng.random_range(1..=2),
                stride_freq: rng.random_range(1..=2),
            });
        }
        let cfg = FrontEndConfig {
            conv,
            embedding_dim: rng.random_range(2..=6),
        };
        if cfg.validate().is_ok() && cfg.receptive_field() <= max_frames {
            return cfg;
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<Draw> {
    let spec = random_spec(rng, cfg.max_phones, cfg.max_plfs);
    let frontend = random_frontend(rng, cfg.max_frames);
    let (p, f) = (spec.num_phones(), spec.num_plfs());
    let mut params = PlfNetParams::init(&frontend, f, p, rng.random())?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noise = |scale: f64, a: &mut Array2<f64>| {
        a.mapv_inplace(|x| x + scale * normal.sample(rng));
    };
    for b in params.conv_b.iter_mut() {
        noise(0.1, b);
    }
    noise(0.1, &mut params.fc_b);
    noise(0.3, &mut params.plf_b);
    noise(0.3, &mut params.direct_b);
    noise(0.5, &mut params.scale_raw);
    noise(0.2, &mut params.calib_scale);
    noise(0.5, &mut params.calib_offset);
    // Scale up the PLF head so logits are O(1) despite the tiny embedding.
    params.plf_w.mapv_inplace(|x| 2.0 * x);
    let t = rng.random_range(frontend.receptive_field()..=cfg.max_frames);
    let frames = Array2::from_shape_simple_fn((t, N_MELS), || normal.sample(rng));
    let labels = (0..t).map(|_| rng.random_range(0..p)).collect();
    let weights = PathWeights {
        path1: rng.random_range(0.2..2.0),
        path2: rng.random_range(0.2..2.0),
        path3: rng.random_range(0.2..2.0),
    };
    Ok(Draw {
        spec,
        frontend,
        params,
        frames,
        labels,
        weights,
        compression: rng.random_range(0.5..20.0),
    })
}

pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        configurations: 0,
        redrawn: 0,
        parameters_checked: 0,
        max_relative_error: 0.0,
        worst: String::new(),
    };
    while report.configurations < cfg.configurations {
        let d = draw(&mut rng, cfg)?;
        let fwd = forward(&d.params, &d.frontend, &d.frames)?;
        if fwd.min_relu_margin < cfg.kink_margin {
            report.redrawn += 1;
            continue;
        }
        let scorer = PhoneScorer::new(&d.spec, d.compression);
        let ctx = LossContext {
            frontend: &d.frontend,
            scorer: &scorer,
            matrix: d.spec.matrix.values(),
            weights: d.weights,
        };
        let mut grads = d.params.zeros_like();
        ctx.evaluate(&d.params, &d.frames, &d.labels, Some(&mut grads))?;
        let analytic = grads.to_flat();
        let names: Vec<(String, usize)> = d.params.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
        let base = d.params.to_flat();
        let mut probe = d.params.clone();
        let mut theta = base.clone();
        let loss_at = |theta: &[f64], probe: &mut PlfNetParams| -> Result<f64> {
            probe.set_flat(theta)?;
            Ok(ctx.evaluate(probe, &d.frames, &d.labels, None)?.0.total)
        };
        let mut idx = 0;
        for (name, len) in &names {
            for k in 0..*len {
                theta[idx] = base[idx] + cfg.epsilon;
                let up = loss_at(&theta, &mut probe)?;
                theta[idx] = base[idx] - cfg.epsilon;
                let down = loss_at(&theta, &mut probe)?;
                theta[idx] = base[idx];
                let numeric = (up - down) / (2.0 * cfg.epsilon);
                let err = relative_error(analytic[idx], numeric, cfg.abs_floor);
                if err > report.max_relative_error {
                    report.max_relative_error = err;
                    report.worst = format!(
                        "configuration {} {name}[{k}]: analytic {:.6e} numeric {:.6e}",
                        report.configurations, analytic[idx], numeric
                    );
                }
                idx += 1;
            }
        }
        report.parameters_checked += base.len();
        report.configurations += 1;
    }
    Ok(report)
}
