//! Utterance records and the corpus manifest.
//!
//! A corpus directory holds `manifest.csv` with columns
//! `utterance_id,speaker_id,frames_file,pathology,intelligibility` and one
//! frame file per utterance. Frame files are CSV with 24 columns
//! `mel_0..mel_23`, optionally preceded by a `phone` column carrying the
//! frame-aligned phone symbol. A `frames_file` ending in `.wav` is run
//! through the Mel front end instead (no labels).

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phonology::ConversionSpec;
use crate::signal::{load_wav, mel_spectrogram, MelFrames, N_MELS};

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub frames: MelFrames,
    /// Frame-aligned phone indices into the spec's inventory.
    pub labels: Option<Vec<usize>>,
    pub pathology: String,
    /// Intelligibility in `[0, 100]`.
    pub intelligibility: Option<f64>,
}

impl UtteranceRecord {
    /// Reference phone sequence: labels with consecutive repeats collapsed.
    pub fn reference_phones(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| {
            let mut out: Vec<usize> = Vec::new();
            for &p in l {
                if out.last() != Some(&p) {
                    out.push(p);
                }
            }
            out
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRow {
    utterance_id: String,
    speaker_id: String,
    frames_file: String,
    pathology: String,
    intelligibility: Option<f64>,
}

pub(crate) fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(f))
}

pub(crate) fn create_csv(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn check_score(v: Option<f64>, id: &str) -> Result<()> {
    match v {
        Some(x) if !(0.0..=100.0).contains(&x) => Err(Error::Parse(format!(
            "utterance {id}: intelligibility {x} outside [0, 100]"
        ))),
        _ => Ok(()),
    }
}

pub fn write_frames_csv(
    path: &Path,
    frames: &MelFrames,
    labels: Option<&[usize]>,
    spec: &ConversionSpec,
) -> Result<()> {
    let mut w = create_csv(path)?;
    let mut header = Vec::new();
    if labels.is_some() {
        header.push("phone".to_string());
    }
    header.extend((0..N_MELS).map(|i| format!("mel_{i}")));
    w.write_record(&header)?;
    for (t, row) in frames.values.rows().into_iter().enumerate() {
        let mut rec = Vec::with_capacity(N_MELS + 1);
        if let Some(l) = labels {
            rec.push(spec.phones[l[t]].clone());
        }
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_frames_csv(path: &Path, spec: &ConversionSpec) -> Result<(MelFrames, Option<Vec<usize>>)> {
    let mut r = open_csv(path)?;
    let header = r.headers()?.clone();
    let has_phone = header.get(0) == Some("phone");
    let offset = usize::from(has_phone);
    if header.len() != N_MELS + offset {
        return Err(Error::Parse(format!(
            "{}: expected {} columns, found {}",
            path.display(),
            N_MELS + offset,
            header.len()
        )));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if has_phone {
            let sym = &rec[0];
            labels.push(
                spec.phone_index(sym).ok_or_else(|| {
                    Error::Parse(format!("{} row {}: unknown phone {sym:?}", path.display(), line + 1))
                })?,
            );
        }
        for field in rec.iter().skip(offset) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{} row {}: {e}", path.display(), line + 1)))?,
            );
        }
    }
    let t = values.len() / N_MELS;
    let frames = MelFrames::new(Array2::from_shape_vec((t, N_MELS), values).map_err(|e| Error::Parse(e.to_string()))?)?;
    Ok((frames, has_phone.then_some(labels)))
}

pub fn write_corpus(dir: &Path, records: &[UtteranceRecord], spec: &ConversionSpec) -> Result<()> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = create_csv(&manifest)?;
    for r in records {
        let rel = format!("frames/{}.csv", r.id);
        write_frames_csv(&dir.join(&rel), &r.frames, r.labels.as_deref(), spec)?;
        w.serialize(ManifestRow {
            utterance_id: r.id.clone(),
            speaker_id: r.speaker.clone(),
            frames_file: rel,
            pathology: r.pathology.clone(),
            intelligibility: r.intelligibility,
        })?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))
}

/// Loads a corpus from its manifest; frame paths resolve against the
/// manifest's directory.
pub fn read_corpus(manifest: &Path, spec: &ConversionSpec) -> Result<Vec<UtteranceRecord>> {
    let base: PathBuf = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut r = open_csv(manifest)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ManifestRow = row?;
        check_score(row.intelligibility, &row.utterance_id)?;
        let path = base.join(&row.frames_file);
        let (frames, labels) = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            (mel_spectrogram(&load_wav(&path)?)?, None)
        } else {
            read_frames_csv(&path, spec)?
        };
        out.push(UtteranceRecord {
            id: row.utterance_id,
            speaker: row.speaker_id,
            frames,
            labels,
            pathology: row.pathology,
            intelligibility: row.intelligibility,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_round_trip() {
        let spec = ConversionSpec::demo();
        let frames = MelFrames::new(Array2::from_shape_fn((6, N_MELS), |(t, f)| {
            t as f64 * 0.5 - f as f64 / 3.0
        }))
        .unwrap();
        let recs = vec![
            UtteranceRecord {
                id: "u0".into(),
                speaker: "s0".into(),
                frames: frames.clone(),
                labels: Some(vec![0, 0, 3, 3, 3, 9]),
                pathology: "healthy".into(),
                intelligibility: Some(97.5),
            },
            UtteranceRecord {
                id: "u1".into(),
                speaker: "s1".into(),
                frames,
                labels: None,
                pathology: "dysarthria".into(),
                intelligibility: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &recs, &spec).unwrap();
        let back = read_corpus(&dir.path().join("manifest.csv"), &spec).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back[0].reference_phones().unwrap(), vec![0, 3, 9]);
    }

    #[test]
    fn unknown_phone_is_reported() {
        let spec = ConversionSpec::demo();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let mut text = String::from("phone");
        for i in 0..N_MELS {
            text += &format!(",mel_{i}");
        }
        text += "\nzz";
        text += &",0".repeat(N_MELS);
        text += "\n";
        std::fs::write(&path, text).unwrap();
        let err = read_frames_csv(&path, &spec).unwrap_err();
        assert!(err.to_string().contains("unknown phone"), "{err}");
    }
}
