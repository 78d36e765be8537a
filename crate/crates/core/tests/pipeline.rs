use plf_core::corpus::{read_corpus, write_corpus};
use plf_core::features::{decode_phones, per_features, plf_histogram};
use plf_core::phonology::ConversionSpec;
use plf_core::plfnet::{extract_plf, train, Checkpoint, PlfNetParams, TrainConfig};
use plf_core::seeds::derive_seed;
use plf_core::synthcorpus::{generate, SynthConfig};

fn small_corpus(spec: &ConversionSpec) -> Vec<plf_core::corpus::UtteranceRecord> {
    let cfg = SynthConfig {
        healthy_speakers: 2,
        utterances_per_speaker: 2,
        ..Default::default()
    };
    generate(&cfg, spec).unwrap()
}

#[test]
fn training_is_deterministic() {
    let spec = ConversionSpec::demo();
    let corpus = small_corpus(&spec);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 11,
        ..Default::default()
    };
    let a = train(&corpus, &spec, &cfg).unwrap();
    let b = train(&corpus, &spec, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 2);
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let spec = ConversionSpec::demo();
    let corpus = small_corpus(&spec);
    let cfg = TrainConfig {
        epochs: 0,
        seed: 3,
        ..Default::default()
    };
    let ckpt = train(&corpus, &spec, &cfg).unwrap();
    let init = PlfNetParams::init(
        &cfg.frontend,
        spec.num_plfs(),
        spec.num_phones(),
        derive_seed(3, "init"),
    )
    .unwrap();
    assert_eq!(ckpt.params, init);
    assert!(ckpt.log.is_empty());
}

#[test]
fn checkpoint_and_corpus_survive_disk() {
    let spec = ConversionSpec::demo();
    let corpus = small_corpus(&spec);
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &corpus, &spec).unwrap();
    let back = read_corpus(&dir.path().join("manifest.csv"), &spec).unwrap();
    assert_eq!(back.len(), corpus.len());
    for (a, b) in corpus.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.frames, b.frames);
    }

    let ckpt = train(
        &corpus,
        &spec,
        &TrainConfig {
            epochs: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let path = dir.path().join("model.plf");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let x = extract_plf(&corpus[0].frames, &loaded, &spec).unwrap();
    let y = extract_plf(&corpus[0].frames, &ckpt, &spec).unwrap();
    assert_eq!(x, y);
    assert!(extract_plf(&corpus[0].frames, &loaded, &ConversionSpec::template()).is_err());
}

#[test]
fn nasal_suppression_lowers_nasal_logits() {
    let spec = ConversionSpec::demo();
    let corpus = generate(&SynthConfig::default(), &spec).unwrap();
    let ckpt = train(
        &corpus,
        &spec,
        &TrainConfig {
            epochs: 8,
            ..Default::default()
        },
    )
    .unwrap();
    let nasal = spec.plf_inventory.index_of("Nasal").unwrap();
    let m = spec.matrix.values();
    let fe = &ckpt.config.frontend;
    let (mut healthy, mut suppressed) = (Vec::new(), Vec::new());
    for u in &corpus {
        let v = extract_plf(&u.frames, &ckpt, &spec).unwrap();
        let labels = u.labels.as_ref().unwrap();
        for j in 0..v.num_frames() {
            if m[[labels[fe.center_frame(j)], nasal]] > 0.0 {
                let x = v.values[[nasal, j]];
                if u.speaker.starts_with("healthy") {
                    healthy.push(x);
                } else {
                    suppressed.push(x);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!healthy.is_empty() && !suppressed.is_empty());
    assert!(
        mean(&suppressed) < mean(&healthy),
        "{} vs {}",
        mean(&suppressed),
        mean(&healthy)
    );
}

#[test]
fn features_from_a_trained_model() {
    let spec = ConversionSpec::demo();
    let corpus = small_corpus(&spec);
    let ckpt = train(
        &corpus,
        &spec,
        &TrainConfig {
            epochs: 3,
            ..Default::default()
        },
    )
    .unwrap();
    for u in &corpus {
        let v = extract_plf(&u.frames, &ckpt, &spec).unwrap();
        let h = plf_histogram(&v).unwrap();
        assert_eq!(h.flatten().len(), spec.num_plfs() * 7);
        let hyp = decode_phones(&ckpt.phone_scores(&v), None).unwrap();
        let per = per_features(&u.reference_phones().unwrap(), &hyp).unwrap();
        assert!(per.per >= 0.0 && per.per.is_finite());
    }
}
