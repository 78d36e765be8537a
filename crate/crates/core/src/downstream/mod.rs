//! Speaker-level intelligibility regression and pathology classification
//! with five-fold cross-validation, an inner validation split and grid
//! search over model families.

pub mod models;

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{create_csv, open_csv};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

pub use models::{accuracy, evaluate, fit, rmse, Candidate, Model, ModelSpace, Standardizer, Targets, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub features: Vec<f64>,
    pub pathology: String,
    /// In `[0, 100]`.
    pub intelligibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub records: Vec<SpeakerRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    speaker_id: String,
    feature_file: String,
    pathology: String,
    intelligibility: f64,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, records: Vec<SpeakerRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.features.len() != feature_names.len() {
                return Err(Error::Dimension(format!(
                    "speaker {}: {} features, expected {}",
                    r.speaker_id,
                    r.features.len(),
                    feature_names.len()
                )));
            }
            if !(0.0..=100.0).contains(&r.intelligibility) {
                return Err(Error::Validation(format!(
                    "speaker {}: intelligibility {} outside [0, 100]",
                    r.speaker_id, r.intelligibility
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "speaker {}: non-finite feature",
                    r.speaker_id
                )));
            }
            if !seen.insert(r.speaker_id.as_str()) {
                return Err(Error::Validation(format!("duplicate speaker {}", r.speaker_id)));
            }
        }
        Ok(Self { feature_names, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted distinct pathology labels.
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self.records.iter().map(|r| r.pathology.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Population (divide by `n`) standard deviation of intelligibility.
    pub fn intelligibility_std(&self) -> f64 {
        let n = self.len() as f64;
        let m = self.records.iter().map(|r| r.intelligibility).sum::<f64>() / n;
        (self
            .records
            .iter()
            .map(|r| (r.intelligibility - m).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }

    fn matrix(&self, idx: &[usize]) -> Array2<f64> {
        let d = self.feature_names.len();
        Array2::from_shape_fn((idx.len(), d), |(i, j)| self.records[idx[i]].features[j])
    }

    /// Loads `speaker_id,feature_file,pathology,intelligibility`; each feature
    /// file is a CSV with a header of feature names and one data row. A
    /// leading `utterance_id` or `speaker_id` column is ignored.
    pub fn load(manifest: &Path) -> Result<Self> {
        let base: PathBuf = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut r = open_csv(manifest)?;
        let mut names: Option<Vec<String>> = None;
        let mut records = Vec::new();
        for row in r.deserialize() {
            let row: ManifestRow = row?;
            let path = base.join(&row.feature_file);
            let (cols, values) = read_feature_row(&path)?;
            match &names {
                None => names = Some(cols),
                Some(n) if *n != cols => {
                    return Err(Error::Dimension(format!(
                        "{}: feature columns differ from the first file",
                        path.display()
                    )))
                }
                _ => {}
            }
            records.push(SpeakerRecord {
                speaker_id: row.speaker_id,
                features: values,
                pathology: row.pathology,
                intelligibility: row.intelligibility,
            });
        }
        Self::new(names.unwrap_or_default(), records)
    }

    /// Writes `manifest.csv` plus `features/<speaker>.csv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let fdir = dir.join("features");
        std::fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
        let manifest = dir.join("manifest.csv");
        let mut w = create_csv(&manifest)?;
        for r in &self.records {
            let rel = format!("features/{}.csv", r.speaker_id);
            let mut fw = create_csv(&dir.join(&rel))?;
            fw.write_record(&self.feature_names)?;
            fw.write_record(r.features.iter().map(|v| v.to_string()))?;
            fw.flush().map_err(|e| Error::io(dir.join(&rel), e))?;
            w.serialize(ManifestRow {
                speaker_id: r.speaker_id.clone(),
                feature_file: rel,
                pathology: r.pathology.clone(),
                intelligibility: r.intelligibility,
            })?;
        }
        w.flush().map_err(|e| Error::io(&manifest, e))?;
        Ok(manifest)
    }
}

fn read_feature_row(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut r = open_csv(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let skip = usize::from(matches!(
        header.first().map(String::as_str),
        Some("utterance_id" | "speaker_id")
    ));
    let mut rows = r.records();
    let rec = rows
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: no data row", path.display())))??;
    if rows.next().is_some() {
        return Err(Error::Parse(format!(
            "{}: expected exactly one data row",
            path.display()
        )));
    }
    let values = rec
        .iter()
        .skip(skip)
        .map(|f| {
            f.parse::<f64>()
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((header[skip..].to_vec(), values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Balance pathology labels across folds.
    pub stratify: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            val_fraction: 0.2,
            seed: 0,
            stratify: false,
        }
    }
}

/// Speaker-level partition into folds (indices into the dataset).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

/// Shuffles speakers (within each class when stratified) and deals them
/// round-robin, so fold sizes differ by at most one.
pub fn make_folds(records: &[SpeakerRecord], cfg: &CvConfig) -> Result<CvPlan> {
    let k = cfg.folds;
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if records.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} speakers for {k} folds",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "folds"));
    let order: Vec<usize> = if cfg.stratify {
        let mut classes: Vec<&str> = records.iter().map(|r| r.pathology.as_str()).collect();
        classes.sort_unstable();
        classes.dedup();
        let mut order = Vec::with_capacity(records.len());
        for c in classes {
            let mut members: Vec<usize> = (0..records.len()).filter(|&i| records[i].pathology == c).collect();
            members.shuffle(&mut rng);
            order.extend(members);
        }
        order
    } else {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng);
        order
    };
    let mut folds = vec![Vec::new(); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(idx);
    }
    Ok(CvPlan { folds, seed: cfg.seed })
}

/// Train, validation and test indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl CvPlan {
    /// Splits fold `f`: the fold is the test set and a shuffled
    /// `val_fraction` of the remaining speakers is held out for validation.
    pub fn split(&self, f: usize, val_fraction: f64) -> Result<FoldSplit> {
        let test = self.folds[f].clone();
        let mut rest: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        if rest.len() < 2 {
            return Err(Error::InsufficientData("fewer than two training speakers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("val-{f}")));
        rest.shuffle(&mut rng);
        let n_val = ((rest.len() as f64 * val_fraction).round() as usize).clamp(1, rest.len() - 1);
        let val = rest[..n_val].to_vec();
        let train = rest[n_val..].to_vec();
        Ok(FoldSplit { train, val, test })
    }
}

/// Errors if any speaker id appears in more than one of a fold's sets.
pub fn check_no_leakage(records: &[SpeakerRecord], split: &FoldSplit) -> Result<()> {
    let ids = |idx: &[usize]| -> HashSet<&str> { idx.iter().map(|&i| records[i].speaker_id.as_str()).collect() };
    let (tr, va, te) = (ids(&split.train), ids(&split.val), ids(&split.test));
    let overlap = |a: &HashSet<&str>, b: &HashSet<&str>, what: &str| {
        if let Some(s) = a.intersection(b).next() {
            return Err(Error::Validation(format!("speaker {s} leaks between {what}")));
        }
        Ok(())
    };
    overlap(&te, &tr, "test and train")?;
    overlap(&te, &va, "test and validation")?;
    overlap(&tr, &va, "train and validation")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Record of one metric computed during cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub fold: usize,
    pub candidate: String,
    pub split: Split,
    /// Whether the metric took part in model selection.
    pub used_for_selection: bool,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub candidate: Candidate,
    pub metric: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub task: Task,
    pub folds: Vec<FoldResult>,
    /// Mean of the per-fold test metrics.
    pub mean_metric: f64,
    pub audit: Vec<AuditEntry>,
}

impl CvReport {
    /// Errors if any selection decision used a test-split metric.
    pub fn check_selection_audit(&self) -> Result<()> {
        match self
            .audit
            .iter()
            .find(|a| a.used_for_selection && a.split == Split::Test)
        {
            Some(a) => Err(Error::Validation(format!(
                "fold {} selected {} on test data",
                a.fold, a.candidate
            ))),
            None => Ok(()),
        }
    }

    /// Per-fold rows `fold,family,hyperparameters,<metric>` and a final
    /// `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fold", "family", "hyperparameters", self.task.metric_name()])?;
        for f in &self.folds {
            w.write_record([
                f.fold.to_string(),
                f.candidate.family().to_string(),
                f.candidate.hyperparameters(),
                f.metric.to_string(),
            ])?;
        }
        w.write_record([
            "mean".to_string(),
            String::new(),
            String::new(),
            self.mean_metric.to_string(),
        ])?;
        w.flush().map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Task targets for a set of rows: scores, or class indices into `classes`.
struct TaskData {
    y: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl TaskData {
    fn new(ds: &Dataset, task: Task, idx: &[usize], classes: &[String]) -> Self {
        let labels: Vec<usize> = idx
            .iter()
            .map(|&i| {
                classes
                    .binary_search(&ds.records[i].pathology)
                    .expect("class list covers the dataset")
            })
            .collect();
        let y = match task {
            Task::Intelligibility => idx.iter().map(|&i| ds.records[i].intelligibility).collect(),
            Task::Pathology => labels.iter().map(|&l| l as f64).collect(),
        };
        Self {
            y,
            labels,
            classes: classes.len(),
        }
    }

    fn targets(&self, task: Task) -> Targets<'_> {
        match task {
            Task::Intelligibility => Targets::Regression(&self.y),
            Task::Pathology => Targets::Classification {
                labels: &self.labels,
                classes: self.classes,
            },
        }
    }
}

fn better(task: Task, a: f64, b: f64) -> bool {
    if task.maximize() {
        a > b
    } else {
        a < b
    }
}

/// Fits `candidate` on `train` and scores it on `eval` (train statistics for
/// standardization).
fn fit_score(
    ds: &Dataset,
    task: Task,
    classes: &[String],
    candidate: &Candidate,
    train: &[usize],
    eval: &[usize],
    seed: u64,
) -> Result<f64> {
    let preds = fit_predict(ds, task, classes, candidate, train, eval, seed)?;
    evaluate(task, &preds, &TaskData::new(ds, task, eval, classes).y)
}

/// Standardizes with training statistics, fits and predicts.
pub fn fit_predict_rows(
    ds: &Dataset,
    task: Task,
    candidate: &Candidate,
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    fit_predict(ds, task, &ds.classes(), candidate, train, test, seed)
}

fn fit_predict(
    ds: &Dataset,
    task: Task,
    classes: &[String],
    candidate: &Candidate,
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    let xtr = ds.matrix(train);
    let scaler = Standardizer::fit(&xtr);
    let data = TaskData::new(ds, task, train, classes);
    let model = fit(candidate, &scaler.apply(&xtr), data.targets(task), seed)?;
    Ok(model.predict(&scaler.apply(&ds.matrix(test))))
}

/// Exhaustive grid search. Candidates are scored on `val`, or on `train`
/// when `val` holds a single class in a classification task. Ties keep the
/// earlier candidate.
#[allow(clippy::too_many_arguments)]
fn grid_search(
    ds: &Dataset,
    task: Task,
    classes: &[String],
    space: &ModelSpace,
    split: &FoldSplit,
    fold: usize,
    seed: u64,
    audit: &mut Vec<AuditEntry>,
) -> Result<Candidate> {
    let mut select_on = Split::Validation;
    if task == Task::Pathology {
        let val = TaskData::new(ds, task, &split.val, classes);
        if val.labels.iter().all(|&l| l == val.labels[0]) {
            log::warn!("fold {fold}: validation split has a single class; selecting on training accuracy");
            select_on = Split::Train;
        }
    }
    let eval = match select_on {
        Split::Train => &split.train,
        _ => &split.val,
    };
    let mut best: Option<(Candidate, f64)> = None;
    for c in &space.candidates {
        let s = derive_seed(seed, &format!("fit-{fold}-{c}"));
        let m = fit_score(ds, task, classes, c, &split.train, eval, s)?;
        audit.push(AuditEntry {
            fold,
            candidate: c.to_string(),
            split: select_on,
            used_for_selection: true,
            metric: m,
        });
        if best.is_none_or(|(_, bm)| better(task, m, bm)) {
            best = Some((*c, m));
        }
    }
    Ok(best.expect("non-empty space").0)
}

/// Five-fold (by default) cross-validation. Per fold: grid search on the
/// inner split, refit of the winner on train plus validation, scoring on
/// the test fold.
pub fn cross_validate(ds: &Dataset, task: Task, space: &ModelSpace, cfg: &CvConfig) -> Result<CvReport> {
    space.validate(task)?;
    if !(0.0..1.0).contains(&cfg.val_fraction) || cfg.val_fraction == 0.0 {
        return Err(Error::Config(format!(
            "val_fraction {} outside (0, 1)",
            cfg.val_fraction
        )));
    }
    let plan = make_folds(&ds.records, cfg)?;
    let classes = ds.classes();
    let mut audit = Vec::new();
    let mut folds = Vec::with_capacity(cfg.folds);
    for f in 0..cfg.folds {
        let split = plan.split(f, cfg.val_fraction)?;
        check_no_leakage(&ds.records, &split)?;
        let chosen = grid_search(ds, task, &classes, space, &split, f, cfg.seed, &mut audit)?;
        let full: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
        let seed = derive_seed(cfg.seed, &format!("refit-{f}-{chosen}"));
        let metric = fit_score(ds, task, &classes, &chosen, &full, &split.test, seed)?;
        log::info!("fold {f}: {chosen} test {} {metric:.4}", task.metric_name());
        audit.push(AuditEntry {
            fold: f,
            candidate: chosen.to_string(),
            split: Split::Test,
            used_for_selection: false,
            metric,
        });
        folds.push(FoldResult {
            fold: f,
            candidate: chosen,
            metric,
            n_train: split.train.len(),
            n_val: split.val.len(),
            n_test: split.test.len(),
        });
    }
    let mean_metric = folds.iter().map(|f| f.metric).sum::<f64>() / folds.len() as f64;
    let report = CvReport {
        task,
        folds,
        mean_metric,
        audit,
    };
    report.check_selection_audit()?;
    Ok(report)
}
