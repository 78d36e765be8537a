//! Utterance-level features: phone error rate with its insertion, deletion
//! and substitution parts, the 7-bin PLF histogram, and Pearson
//! correlations against intelligibility.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plfnet::scoring::sigmoid;
use crate::plfnet::{PhoneScores, PlfLogits};

/// Histogram bin labels in output order.
pub const BIN_LABELS: [&str; 7] = ["L0", "L1", "L2", "M", "H2", "H1", "H0"];
pub const HISTOGRAM_BINS: usize = 20;

/// Column of each of the six edge bins within [`BIN_LABELS`], keyed by its
/// index among the 20 raw bins.
const EDGE_BINS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (17, 4), (18, 5), (19, 6)];

/// Framewise argmax over `P×T` phone scores (ties to the lower phone index),
/// consecutive repeats collapsed, and `silence` dropped if given.
pub fn decode_phones(scores: &PhoneScores, silence: Option<usize>) -> Result<Vec<usize>> {
    let v = &scores.values;
    if v.is_empty() {
        return Err(Error::EmptyInput("no phone scores to decode".into()));
    }
    let mut out: Vec<usize> = Vec::new();
    let mut prev = None;
    for col in v.columns() {
        let best = (0..col.len()).fold(0, |b, i| if col[i] > col[b] { i } else { b });
        if prev != Some(best) && Some(best) != silence {
            out.push(best);
        }
        prev = Some(best);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignCounts {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    /// Reference length.
    pub n: usize,
}

impl AlignCounts {
    pub fn distance(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }
}

/// Unit-cost Levenshtein alignment. Among minimal alignments the backtrace
/// prefers substitution (or match), then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<AlignCounts> {
    if reference.is_empty() {
        return Err(Error::UndefinedRate("empty reference sequence".into()));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut c = AlignCounts {
        insertions: 0,
        deletions: 0,
        substitutions: 0,
        n,
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let miss = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + miss {
                c.substitutions += miss;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerFeature {
    pub per: f64,
    pub ins_rate: f64,
    pub del_rate: f64,
    pub sub_rate: f64,
}

impl PerFeature {
    pub const NAMES: [&'static str; 4] = ["per", "ins_rate", "del_rate", "sub_rate"];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.per, self.ins_rate, self.del_rate, self.sub_rate]
    }
}

pub fn per_features<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<PerFeature> {
    let c = align(reference, hypothesis)?;
    let n = c.n as f64;
    Ok(PerFeature {
        per: c.distance() as f64 / n,
        ins_rate: c.insertions as f64 / n,
        del_rate: c.deletions as f64 / n,
        sub_rate: c.substitutions as f64 / n,
    })
}

/// `F×7` histogram masses in [`BIN_LABELS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFeature {
    pub values: Array2<f64>,
}

impl HistogramFeature {
    /// Row-major flattening: all seven bins of the first PLF, then the next.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    /// `<PLF>_<bin>` names matching [`HistogramFeature::flatten`].
    pub fn column_names(plfs: &[String]) -> Vec<String> {
        plfs.iter()
            .flat_map(|p| BIN_LABELS.iter().map(move |b| format!("{p}_{b}")))
            .collect()
    }
}

fn bin_of(x: f64) -> usize {
    ((x * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

/// Bins `σ(logit)` of every PLF row into 20 uniform bins on `[0, 1]` and
/// keeps the three lowest and highest bin masses plus the remainder `M`.
pub fn plf_histogram(v: &PlfLogits) -> Result<HistogramFeature> {
    let t = v.num_frames();
    if t == 0 {
        return Err(Error::EmptyInput("no frames for histogram".into()));
    }
    let f = v.values.nrows();
    let mut out = Array2::zeros((f, 7));
    for (row, mut dst) in v.values.rows().into_iter().zip(out.rows_mut()) {
        let mut counts = [0usize; HISTOGRAM_BINS];
        for &x in row {
            if x.is_nan() {
                return Err(Error::Format("NaN PLF logit".into()));
            }
            counts[bin_of(sigmoid(x))] += 1;
        }
        let mut edge = 0;
        for (bin, col) in EDGE_BINS {
            dst[col] = counts[bin] as f64 / t as f64;
            edge += counts[bin];
        }
        dst[3] = (t - edge) as f64 / t as f64;
    }
    Ok(HistogramFeature { values: out })
}

/// Pearson correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "pcc of sequences with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-utterance summary used by the correlation report.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceSummary {
    /// Mean logit of each PLF over frames.
    pub mean_logits: Vec<f64>,
    pub histogram: HistogramFeature,
}

impl UtteranceSummary {
    pub fn from_logits(v: &PlfLogits) -> Result<Self> {
        let histogram = plf_histogram(v)?;
        let mean_logits = v
            .values
            .rows()
            .into_iter()
            .map(|r| r.mean().expect("non-empty"))
            .collect();
        Ok(Self { mean_logits, histogram })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub plf: String,
    /// `None` when the mean logit is constant across utterances.
    pub mean_r: Option<f64>,
    pub bin_r: Option<f64>,
    pub bin_label: Option<String>,
}

/// For each PLF: correlation of the mean logit with the scores, and the bin
/// with the largest `|r|` (first in bin order on ties). Bins that are
/// constant across utterances are skipped.
pub fn correlation_report(
    plfs: &[String],
    summaries: &[UtteranceSummary],
    scores: &[f64],
) -> Result<Vec<CorrelationRow>> {
    if summaries.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} utterances but {} scores",
            summaries.len(),
            scores.len()
        )));
    }
    if summaries.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two utterances".into()));
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return Err(Error::UndefinedCorrelation("constant scores".into()));
    }
    for s in summaries {
        if s.mean_logits.len() != plfs.len() || s.histogram.values.nrows() != plfs.len() {
            return Err(Error::Dimension("summary does not match PLF inventory".into()));
        }
    }
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let mut rows = Vec::with_capacity(plfs.len());
    for (f, name) in plfs.iter().enumerate() {
        let means: Vec<f64> = summaries.iter().map(|s| s.mean_logits[f]).collect();
        let mean_r = defined(pcc(&means, scores))?;
        let mut best: Option<(f64, usize)> = None;
        for b in 0..BIN_LABELS.len() {
            let col: Vec<f64> = summaries.iter().map(|s| s.histogram.values[[f, b]]).collect();
            if let Some(r) = defined(pcc(&col, scores))? {
                if best.is_none_or(|(br, _)| r.abs() > br.abs()) {
                    best = Some((r, b));
                }
            }
        }
        rows.push(CorrelationRow {
            plf: name.clone(),
            mean_r,
            bin_r: best.map(|b| b.0),
            bin_label: best.map(|b| BIN_LABELS[b.1].to_string()),
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the report with columns `PLF, Mean r, Bin r, Bin label`.
pub fn write_correlation_csv<W: Write>(out: W, rows: &[CorrelationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["PLF", "Mean r", "Bin r", "Bin label"])?;
    for r in rows {
        w.write_record([
            r.plf.clone(),
            opt(r.mean_r),
            opt(r.bin_r),
            r.bin_label.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// One row per utterance: `utterance_id` then the named feature columns.
pub fn write_feature_csv<W: Write>(out: W, columns: &[String], rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["utterance_id".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (id, values) in rows {
        if values.len() != columns.len() {
            return Err(Error::Dimension(format!(
                "utterance {id}: {} values for {} columns",
                values.len(),
                columns.len()
            )));
        }
        let mut rec = vec![id.clone()];
        rec.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn scores(cols: &[&[f64]]) -> PhoneScores {
        let p = cols[0].len();
        PhoneScores {
            values: Array2::from_shape_fn((p, cols.len()), |(i, t)| cols[t][i]),
        }
    }

    #[test]
    fn decode_collapses_and_breaks_ties_low() {
        let s = scores(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        assert_eq!(decode_phones(&s, None).unwrap(), vec![0, 1, 0]);
        assert_eq!(decode_phones(&s, Some(0)).unwrap(), vec![1]);
        assert_eq!(decode_phones(&scores(&[&[0.0, 2.0, 1.0]]), None).unwrap(), vec![1]);
    }

    #[test]
    fn decode_skips_silence_between_repeats() {
        // a sil a keeps both a's since the silence frame breaks the run
        let s = scores(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(decode_phones(&s, Some(1)).unwrap(), vec![0, 0]);
    }

    #[test]
    fn per_examples() {
        let p = per_features(&['a', 'b'], &['a', 'b']).unwrap();
        assert_eq!(p.to_vec(), vec![0.0; 4]);
        let p = per_features(&['a'], &['b', 'b']).unwrap();
        assert_eq!((p.per, p.ins_rate, p.del_rate, p.sub_rate), (2.0, 1.0, 0.0, 1.0));
        let c = align(&['a', 'b', 'c', 'd'], &['a', 'x', 'c']).unwrap();
        assert_eq!((c.insertions, c.deletions, c.substitutions, c.n), (0, 1, 1, 4));
        let c = align(&['a', 'b', 'c'], &[]).unwrap();
        assert_eq!((c.insertions, c.deletions, c.substitutions, c.n), (0, 3, 0, 3));
        assert!(matches!(align::<u8>(&[], &[1]), Err(Error::UndefinedRate(_))));
    }

    #[test]
    fn histogram_examples() {
        let h = plf_histogram(&PlfLogits {
            values: Array2::zeros((3, 5)),
        })
        .unwrap();
        for r in h.values.rows() {
            assert_eq!(r.to_vec(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        }
        let h = plf_histogram(&PlfLogits {
            values: Array2::from_elem((1, 4), 50.0),
        })
        .unwrap();
        assert_eq!(h.values.row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let h = plf_histogram(&PlfLogits {
            values: array![[-50.0, 50.0, -50.0, 50.0]],
        })
        .unwrap();
        assert_eq!(h.values.row(0).to_vec(), vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(0.049), 0);
        assert_eq!(bin_of(0.05), 1);
        assert_eq!(bin_of(0.5), 10);
        assert_eq!(bin_of(1.0), 19);
    }

    #[test]
    fn column_names_follow_flatten() {
        let names = HistogramFeature::column_names(&["Nasal".into(), "Dorsal".into()]);
        assert_eq!(names.len(), 14);
        assert_eq!(names[0], "Nasal_L0");
        assert_eq!(names[3], "Nasal_M");
        assert_eq!(names[13], "Dorsal_H0");
    }

    #[test]
    fn pcc_examples() {
        let x = [1.0, 2.0, 4.0, 3.5];
        let y = [0.3, -1.0, 2.0, 5.0];
        assert!((pcc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pcc(&affine, &y).unwrap() - pcc(&x, &y).unwrap()).abs() < 1e-12);
        assert!(matches!(
            pcc(&[1.0, 1.0], &[0.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    fn summary(mean: f64, h0: f64) -> UtteranceSummary {
        UtteranceSummary {
            mean_logits: vec![mean],
            histogram: HistogramFeature {
                values: array![[0.0, 0.0, 0.0, 1.0 - h0, 0.0, 0.0, h0]],
            },
        }
    }

    #[test]
    fn report_picks_strongest_bin() {
        let s = vec![summary(0.1, 0.1), summary(0.3, 0.5), summary(0.2, 0.9)];
        let rows = correlation_report(&["A".into()], &s, &[10.0, 50.0, 90.0]).unwrap();
        // M and H0 are perfectly (anti)correlated; M comes first in bin order
        assert_eq!(rows[0].bin_label.as_deref(), Some("M"));
        assert!((rows[0].bin_r.unwrap() + 1.0).abs() < 1e-12);
        assert!(rows[0].mean_r.unwrap() > 0.0);
    }

    #[test]
    fn report_with_two_utterances() {
        let s = vec![summary(0.1, 0.2), summary(0.3, 0.7)];
        let rows = correlation_report(&["A".into()], &s, &[1.0, 2.0]).unwrap();
        assert!((rows[0].mean_r.unwrap().abs() - 1.0).abs() < 1e-12);
        assert!((rows[0].bin_r.unwrap().abs() - 1.0).abs() < 1e-12);
        assert!(matches!(
            correlation_report(&["A".into()], &s, &[3.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    fn oracle_distance(a: &[u8], b: &[u8]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let sub = oracle_distance(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
        sub.min(oracle_distance(&a[1..], b) + 1)
            .min(oracle_distance(a, &b[1..]) + 1)
    }

    proptest! {
        #[test]
        fn align_matches_recursive_oracle(
            a in proptest::collection::vec(0u8..4, 1..7),
            b in proptest::collection::vec(0u8..4, 0..7),
        ) {
            let c = align(&a, &b).unwrap();
            prop_assert_eq!(c.distance(), oracle_distance(&a, &b));
            prop_assert_eq!(c.insertions + c.n, c.deletions + b.len());
        }

        #[test]
        fn align_distance_is_symmetric(
            a in proptest::collection::vec(0u8..5, 1..15),
            b in proptest::collection::vec(0u8..5, 1..15),
        ) {
            let ab = align(&a, &b).unwrap();
            let ba = align(&b, &a).unwrap();
            prop_assert_eq!(ab.distance(), ba.distance());
        }

        #[test]
        fn per_decomposition(
            a in proptest::collection::vec(0u8..6, 1..20),
            b in proptest::collection::vec(0u8..6, 0..20),
        ) {
            let p = per_features(&a, &b).unwrap();
            prop_assert!((p.per - (p.ins_rate + p.del_rate + p.sub_rate)).abs() < 1e-12);
            prop_assert!(p.del_rate <= 1.0 && p.sub_rate <= 1.0);
        }

        #[test]
        fn decode_is_idempotent(seq in proptest::collection::vec(0usize..5, 1..12), rep in 1usize..4) {
            let mut collapsed: Vec<usize> = Vec::new();
            for &p in &seq {
                if collapsed.last() != Some(&p) {
                    collapsed.push(p);
                }
            }
            let frames: Vec<usize> = collapsed.iter().flat_map(|&p| std::iter::repeat_n(p, rep)).collect();
            let s = PhoneScores {
                values: Array2::from_shape_fn((5, frames.len()), |(i, t)| f64::from(u8::from(frames[t] == i))),
            };
            prop_assert_eq!(decode_phones(&s, None).unwrap(), collapsed);
        }

        #[test]
        fn histogram_rows_sum_to_one(vals in proptest::collection::vec(-20.0f64..20.0, 3 * 11)) {
            let h = plf_histogram(&PlfLogits { values: Array2::from_shape_vec((3, 11), vals).unwrap() }).unwrap();
            for r in h.values.rows() {
                prop_assert!((r.sum() - 1.0).abs() < 1e-9);
                prop_assert!(r.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }
}
