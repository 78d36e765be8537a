//! Checkpoint file: 8-byte magic, little-endian `u64` header length, a JSON
//! header, then every parameter as a little-endian `f64` in the order the
//! header's tensor table lists them.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::loss::path1_scores;
use super::network::forward;
use super::params::PlfNetParams;
use super::scoring::PhoneScorer;
use super::train::{EpochLog, TrainConfig};
use crate::error::{Error, Result};
use crate::phonology::ConversionSpec;
use crate::signal::MelFrames;

pub const MAGIC: &[u8; 8] = b"PLFCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// `F×T` frame-level PLF logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PlfLogits {
    pub values: Array2<f64>,
}

impl PlfLogits {
    pub fn num_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Rows are PLFs, columns frames; the first column holds the PLF name.
    pub fn write_csv<W: Write>(&self, out: W, names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["plf".to_string()];
        header.extend((0..self.num_frames()).map(|t| format!("t{t}")));
        w.write_record(&header)?;
        for (name, row) in names.iter().zip(self.values.rows()) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

/// `P×T` per-frame phone scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneScores {
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec_hash: String,
    spec: String,
    config: TrainConfig,
    tensors: Vec<TensorEntry>,
    log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ConversionSpec,
    pub config: TrainConfig,
    pub params: PlfNetParams,
    pub log: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn new(spec: ConversionSpec, config: TrainConfig, params: PlfNetParams, log: Vec<EpochLog>) -> Self {
        Self {
            spec,
            config,
            params,
            log,
        }
    }

    pub fn spec_hash(&self) -> String {
        self.spec.content_hash()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            format: "plf-checkpoint".into(),
            version: FORMAT_VERSION,
            spec_hash: self.spec_hash(),
            spec: self.spec.to_json(),
            config: self.config.clone(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, t)| TensorEntry {
                    name,
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
            log: self.log.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let io = |e| Error::Parse(format!("writing checkpoint: {e}"));
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&json).map_err(io)?;
        let mut buf = Vec::with_capacity(self.params.num_values() * 8);
        for v in self.params.to_flat() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |msg: String| Error::Parse(format!("checkpoint: {msg}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(|e| bad(e.to_string()))?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json).map_err(|e| bad(e.to_string()))?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.format != "plf-checkpoint" || header.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
        }
        let spec = ConversionSpec::from_json(&header.spec)?;
        if spec.content_hash() != header.spec_hash {
            return Err(bad("embedded spec does not match its hash".into()));
        }
        let mut params = PlfNetParams::init(&header.config.frontend, spec.num_plfs(), spec.num_phones(), 0)?;
        let expected: Vec<(String, [usize; 2])> = params
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, [t.nrows(), t.ncols()]))
            .collect();
        let found: Vec<(String, [usize; 2])> = header.tensors.iter().map(|t| (t.name.clone(), t.shape)).collect();
        if expected != found {
            return Err(bad("tensor table does not match the configured network".into()));
        }
        let mut data = Vec::new();
        input.read_to_end(&mut data).map_err(|e| bad(e.to_string()))?;
        if data.len() != params.num_values() * 8 {
            return Err(bad(format!(
                "parameter block has {} bytes, expected {}",
                data.len(),
                params.num_values() * 8
            )));
        }
        let flat: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.set_flat(&flat)?;
        Ok(Self {
            spec,
            config: header.config,
            params,
            log: header.log,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// PLF logits for raw (unnormalized) frames, one column per output frame.
    pub fn plf_logits(&self, frames: &MelFrames) -> Result<PlfLogits> {
        let fwd = forward(&self.params, &self.config.frontend, &frames.normalized().values)?;
        Ok(PlfLogits {
            values: fwd.plf_logits.reversed_axes(),
        })
    }

    /// Path-1 phone scores (fixed matrix `M`) for PLF logits.
    pub fn phone_scores(&self, logits: &PlfLogits) -> PhoneScores {
        let scorer = PhoneScorer::new(&self.spec, self.config.compression);
        let tf = logits.values.t().as_standard_layout().into_owned();
        PhoneScores {
            values: path1_scores(&scorer, self.spec.matrix.values(), &tf),
        }
    }
}

/// Extracts frame-level PLF logits after checking the checkpoint was trained
/// against `spec`.
pub fn extract_plf(frames: &MelFrames, ckpt: &Checkpoint, spec: &ConversionSpec) -> Result<PlfLogits> {
    let (want, have) = (spec.content_hash(), ckpt.spec_hash());
    if want != have {
        return Err(Error::Incompatible(format!(
            "checkpoint spec hash {have} differs from configured spec {want}"
        )));
    }
    ckpt.plf_logits(frames)
}
