use plf_core::downstream::{cross_validate, CvConfig, Dataset, ModelSpace, SpeakerRecord, Task};
use plf_core::features::{correlation_report, HistogramFeature, UtteranceSummary};
use plf_core::phonology::ConversionSpec;
use plf_core::synthcorpus::{histogram_speakers, HistogramCorpusConfig};

fn dataset(speakers: usize, seed: u64) -> (Dataset, Vec<UtteranceSummary>) {
    let spec = ConversionSpec::demo();
    let cfg = HistogramCorpusConfig {
        speakers,
        seed,
        ..Default::default()
    };
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for s in histogram_speakers(&cfg, &spec).unwrap() {
        let summary = UtteranceSummary::from_logits(&s.logits).unwrap();
        records.push(SpeakerRecord {
            speaker_id: s.id,
            features: summary.histogram.flatten(),
            pathology: s.pathology,
            intelligibility: s.intelligibility,
        });
        summaries.push(summary);
    }
    let names = HistogramFeature::column_names(spec.plf_inventory.names());
    (Dataset::new(names, records).unwrap(), summaries)
}

#[test]
fn saved_dataset_gives_the_same_cv_report() {
    let (ds, _) = dataset(60, 2);
    let dir = tempfile::tempdir().unwrap();
    let manifest = ds.save(dir.path()).unwrap();
    let back = Dataset::load(&manifest).unwrap();
    assert_eq!(back, ds);
    let space = ModelSpace::default_for(Task::Intelligibility);
    let cfg = CvConfig::default();
    let a = cross_validate(&ds, Task::Intelligibility, &space, &cfg).unwrap();
    let b = cross_validate(&back, Task::Intelligibility, &space, &cfg).unwrap();
    assert_eq!(a, b);
    a.check_selection_audit().unwrap();
}

#[test]
fn pathology_beats_majority_baseline() {
    let (ds, _) = dataset(200, 5);
    let cfg = CvConfig {
        stratify: true,
        ..Default::default()
    };
    let full = cross_validate(&ds, Task::Pathology, &ModelSpace::default_for(Task::Pathology), &cfg).unwrap();
    let base = cross_validate(&ds, Task::Pathology, &ModelSpace::baseline(), &cfg).unwrap();
    assert!(
        full.mean_metric > base.mean_metric + 0.1,
        "{} vs {}",
        full.mean_metric,
        base.mean_metric
    );
}

#[test]
fn driver_plf_tops_the_correlation_report() {
    let (ds, summaries) = dataset(150, 8);
    let scores: Vec<f64> = ds.records.iter().map(|r| r.intelligibility).collect();
    let spec = ConversionSpec::demo();
    let rows = correlation_report(spec.plf_inventory.names(), &summaries, &scores).unwrap();
    let best = rows
        .iter()
        .max_by(|a, b| a.bin_r.unwrap_or(0.0).abs().total_cmp(&b.bin_r.unwrap_or(0.0).abs()))
        .unwrap();
    assert_eq!(best.plf, "Alveolar");
    assert_eq!(best.bin_label.as_deref(), Some("H0"));
}
