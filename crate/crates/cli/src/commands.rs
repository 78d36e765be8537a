use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use plf_core::corpus::{read_corpus, write_corpus, UtteranceRecord};
use plf_core::downstream::{cross_validate, CvConfig, Dataset, ModelSpace, SpeakerRecord, Task};
use plf_core::features::{
    correlation_report, decode_phones, per_features, plf_histogram, write_correlation_csv, write_feature_csv,
    HistogramFeature, PerFeature, UtteranceSummary,
};
use plf_core::phonology::{load_spec, write_spec, ConversionSpec};
use plf_core::plfnet::train::{evaluate, train, write_training_log, TrainConfig};
use plf_core::plfnet::{extract_plf, gradient_check, Checkpoint, GradCheckConfig, PhoneScores, PlfLogits};
use plf_core::seeds::derive_seed;
use plf_core::synthcorpus::{generate, histogram_speakers, HistogramCorpusConfig, SynthConfig};

use crate::summary::{file_sha256, manifest_sha256, Summary};
use crate::{
    AnalyzeArgs, Command, CrossvalArgs, ExtractArgs, FeatureArgs, FeatureSet, GradcheckArgs, SynthArgs, SynthKind,
    TaskArg, TrainArgs,
};

/// Runs a subcommand; `Ok(false)` means it completed but its check failed.
pub fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Extract(a) => extract(a),
        Command::Per(a) => per(a),
        Command::Histogram(a) => histogram(a),
        Command::Crossval(a) => crossval(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
    .map(|ok| ok.unwrap_or(true))
}

fn resolve_spec(arg: &str) -> Result<ConversionSpec> {
    Ok(match arg {
        "demo" => ConversionSpec::demo(),
        "template" => ConversionSpec::template(),
        path => load_spec(path)?,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn spec_digest(summary: &mut Summary, arg: &str, spec: &ConversionSpec) -> Result<()> {
    if Path::new(arg).is_file() {
        summary.input(Path::new(arg), file_sha256(Path::new(arg))?);
    }
    summary.config["spec"] = json!({ "source": arg, "content_hash": spec.content_hash() });
    Ok(())
}

fn synth(a: SynthArgs) -> Result<Option<bool>> {
    let spec = resolve_spec(&a.spec)?;
    create_dir(&a.out)?;
    let mut summary = Summary::new("synth");
    summary.seeds.insert("master".into(), a.seed);
    let read_config =
        |p: &Path| -> Result<String> { std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())) };
    match a.kind {
        SynthKind::Frames => {
            let mut cfg: SynthConfig = match &a.config {
                Some(p) => serde_json::from_str(&read_config(p)?)?,
                None => SynthConfig::default(),
            };
            cfg.seed = a.seed;
            if let Some(v) = a.healthy {
                cfg.healthy_speakers = v;
            }
            if let Some(v) = a.utterances_per_speaker {
                cfg.utterances_per_speaker = v;
            }
            if let Some(v) = a.noise_sigma {
                cfg.noise_sigma = v;
            }
            let corpus = generate(&cfg, &spec)?;
            write_corpus(&a.out, &corpus, &spec)?;
            let spec_path = a.out.join("spec.json");
            write_spec(&spec_path, &spec)?;
            summary.config = json!({ "kind": "frames", "synth": cfg });
            summary.metrics = json!({
                "utterances": corpus.len(),
                "frames": corpus.iter().map(|u| u.frames.num_frames()).sum::<usize>(),
            });
            summary.output(&a.out.join("manifest.csv"));
            summary.output(&spec_path);
        }
        SynthKind::Histogram => {
            let mut cfg: HistogramCorpusConfig = match &a.config {
                Some(p) => serde_json::from_str(&read_config(p)?)?,
                None => HistogramCorpusConfig::default(),
            };
            cfg.seed = a.seed;
            if let Some(v) = a.speakers {
                cfg.speakers = v;
            }
            let speakers = histogram_speakers(&cfg, &spec)?;
            let names = spec.plf_inventory.names().to_vec();
            let records = speakers
                .iter()
                .map(|s| {
                    Ok(SpeakerRecord {
                        speaker_id: s.id.clone(),
                        features: plf_histogram(&s.logits)?.flatten(),
                        pathology: s.pathology.clone(),
                        intelligibility: s.intelligibility,
                    })
                })
                .collect::<plf_core::Result<Vec<_>>>()?;
            let ds = Dataset::new(HistogramFeature::column_names(&names), records)?;
            let manifest = ds.save(&a.out)?;
            summary.config = json!({ "kind": "histogram", "synth": cfg });
            summary.metrics = json!({
                "speakers": ds.len(),
                "intelligibility_std": ds.intelligibility_std(),
            });
            summary.output(&manifest);
        }
    }
    spec_digest(&mut summary, &a.spec, &spec)?;
    summary.write(&a.out.join("summary.json"))?;
    Ok(None)
}

fn train_cmd(a: TrainArgs) -> Result<Option<bool>> {
    let spec = resolve_spec(&a.spec)?;
    let corpus = read_corpus(&a.corpus, &spec)?;
    let mut cfg = TrainConfig {
        seed: a.seed,
        enable_path2: !a.no_scaling_matrix,
        enable_path3: !a.no_direct_path,
        ..Default::default()
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.compression {
        cfg.compression = v;
    }
    if let Some(v) = a.lambda1 {
        cfg.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        cfg.lambda2 = v;
    }
    if let Some(v) = a.lambda3 {
        cfg.lambda3 = v;
    }
    if a.no_augment {
        cfg.augment = None;
    }
    create_dir(&a.out)?;
    let ckpt = train(&corpus, &spec, &cfg)?;
    let ckpt_path = a.out.join("checkpoint.plf");
    ckpt.save(&ckpt_path)?;
    let log_path = a.out.join("training_log.csv");
    let f = std::fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    write_training_log(f, &ckpt.log)?;
    let report = evaluate(&ckpt, &corpus)?;

    let mut summary = Summary::new("train");
    summary.config = json!({
        "train": cfg,
        "enabled_paths": {
            "path1": true,
            "path2": cfg.enable_path2,
            "path3": cfg.enable_path3,
        },
    });
    spec_digest(&mut summary, &a.spec, &spec)?;
    summary.seeds.insert("master".into(), a.seed);
    for label in ["init", "shuffle", "augment"] {
        summary.seeds.insert(label.into(), derive_seed(a.seed, label));
    }
    summary.input(&a.corpus, manifest_sha256(&a.corpus, "frames_file")?);
    summary.metrics = json!({
        "final_epoch": ckpt.log.last(),
        "evaluation": report,
    });
    summary.output(&ckpt_path);
    summary.output(&log_path);
    summary.write(&a.out.join("summary.json"))?;
    println!(
        "frame accuracy {:.4}, sign agreement {:.4}",
        report.frame_accuracy, report.sign_agreement
    );
    Ok(None)
}

/// Loads a checkpoint and the corpus labeled against its spec.
fn load_inputs(checkpoint: &Path, corpus: &Path, summary: &mut Summary) -> Result<(Checkpoint, Vec<UtteranceRecord>)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let utts = read_corpus(corpus, &ckpt.spec)?;
    summary.input(checkpoint, file_sha256(checkpoint)?);
    summary.input(corpus, manifest_sha256(corpus, "frames_file")?);
    summary.config["spec_hash"] = json!(ckpt.spec_hash());
    Ok((ckpt, utts))
}

fn write_scores_csv(path: &Path, scores: &PhoneScores, phones: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["phone".to_string()];
    header.extend((0..scores.values.ncols()).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for (name, row) in phones.iter().zip(scores.values.rows()) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<Option<bool>> {
    let mut summary = Summary::new("extract");
    let (ckpt, utts) = load_inputs(&a.checkpoint, &a.corpus, &mut summary)?;
    let spec = match &a.spec {
        Some(s) => resolve_spec(s)?,
        None => ckpt.spec.clone(),
    };
    let (ldir, sdir) = (a.out.join("logits"), a.out.join("phone_scores"));
    create_dir(&ldir)?;
    create_dir(&sdir)?;
    let mut frames = 0;
    for u in &utts {
        let logits = extract_plf(&u.frames, &ckpt, &spec)?;
        frames += logits.num_frames();
        let path = ldir.join(format!("{}.csv", u.id));
        let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        logits.write_csv(f, spec.plf_inventory.names())?;
        write_scores_csv(
            &sdir.join(format!("{}.csv", u.id)),
            &ckpt.phone_scores(&logits),
            &spec.phones,
        )?;
    }
    summary.metrics = json!({ "utterances": utts.len(), "output_frames": frames });
    summary.output(&ldir);
    summary.output(&sdir);
    summary.write(&a.out.join("summary.json"))?;
    Ok(None)
}

fn silence_index(ckpt: &Checkpoint, silence: &Option<String>) -> Result<Option<usize>> {
    silence
        .as_deref()
        .map(|s| {
            ckpt.spec
                .phone_index(s)
                .with_context(|| format!("silence symbol {s:?} is not in the phone inventory"))
        })
        .transpose()
}

fn utterance_per(ckpt: &Checkpoint, u: &UtteranceRecord, logits: &PlfLogits, sil: Option<usize>) -> Result<PerFeature> {
    let reference: Vec<usize> = u
        .reference_phones()
        .with_context(|| format!("utterance {} has no phone labels", u.id))?
        .into_iter()
        .filter(|&p| Some(p) != sil)
        .collect();
    let hyp = decode_phones(&ckpt.phone_scores(logits), sil)?;
    per_features(&reference, &hyp).with_context(|| format!("utterance {}", u.id))
}

fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

fn per(a: FeatureArgs) -> Result<Option<bool>> {
    let mut summary = Summary::new("per");
    let (ckpt, utts) = load_inputs(&a.checkpoint, &a.corpus, &mut summary)?;
    let sil = silence_index(&ckpt, &a.silence)?;
    let mut rows = Vec::with_capacity(utts.len());
    for u in &utts {
        let logits = ckpt.plf_logits(&u.frames)?;
        rows.push((u.id.clone(), utterance_per(&ckpt, u, &logits, sil)?.to_vec()));
    }
    let names: Vec<String> = PerFeature::NAMES.iter().map(|s| s.to_string()).collect();
    let f = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_feature_csv(f, &names, &rows)?;
    let mean_per = rows.iter().map(|r| r.1[0]).sum::<f64>() / rows.len() as f64;
    summary.config["silence"] = json!(a.silence);
    summary.metrics = json!({ "utterances": rows.len(), "mean_per": mean_per });
    summary.output(&a.out);
    summary.write(&summary_path(&a.out))?;
    Ok(None)
}

fn histogram(a: FeatureArgs) -> Result<Option<bool>> {
    let mut summary = Summary::new("histogram");
    let (ckpt, utts) = load_inputs(&a.checkpoint, &a.corpus, &mut summary)?;
    let mut rows = Vec::with_capacity(utts.len());
    for u in &utts {
        rows.push((u.id.clone(), plf_histogram(&ckpt.plf_logits(&u.frames)?)?.flatten()));
    }
    let names = HistogramFeature::column_names(ckpt.spec.plf_inventory.names());
    let f = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_feature_csv(f, &names, &rows)?;
    summary.metrics = json!({ "utterances": rows.len(), "features": names.len() });
    summary.output(&a.out);
    summary.write(&summary_path(&a.out))?;
    Ok(None)
}

/// Per-speaker mean of utterance-level features.
fn speaker_dataset(
    ckpt: &Checkpoint,
    utts: &[UtteranceRecord],
    set: FeatureSet,
    sil: Option<usize>,
) -> Result<Dataset> {
    let plfs = ckpt.spec.plf_inventory.names();
    let mut names = Vec::new();
    if matches!(set, FeatureSet::Per | FeatureSet::Both) {
        names.extend(PerFeature::NAMES.iter().map(|s| s.to_string()));
    }
    if matches!(set, FeatureSet::Histogram | FeatureSet::Both) {
        names.extend(HistogramFeature::column_names(plfs));
    }
    let mut order: Vec<String> = Vec::new();
    let mut acc: std::collections::HashMap<String, (Vec<f64>, usize, &UtteranceRecord)> = Default::default();
    for u in utts {
        let logits = ckpt.plf_logits(&u.frames)?;
        let mut v = Vec::with_capacity(names.len());
        if matches!(set, FeatureSet::Per | FeatureSet::Both) {
            v.extend(utterance_per(ckpt, u, &logits, sil)?.to_vec());
        }
        if matches!(set, FeatureSet::Histogram | FeatureSet::Both) {
            v.extend(plf_histogram(&logits)?.flatten());
        }
        let entry = acc.entry(u.speaker.clone()).or_insert_with(|| {
            order.push(u.speaker.clone());
            (vec![0.0; v.len()], 0, u)
        });
        for (s, x) in entry.0.iter_mut().zip(&v) {
            *s += x;
        }
        entry.1 += 1;
    }
    let records = order
        .iter()
        .map(|s| {
            let (sum, n, first) = &acc[s];
            let score = first
                .intelligibility
                .with_context(|| format!("speaker {s} has no intelligibility score"))?;
            Ok(SpeakerRecord {
                speaker_id: s.clone(),
                features: sum.iter().map(|x| x / *n as f64).collect(),
                pathology: first.pathology.clone(),
                intelligibility: score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(names, records)?)
}

fn crossval(a: CrossvalArgs) -> Result<Option<bool>> {
    let mut summary = Summary::new("crossval");
    let task = match a.task {
        TaskArg::Intelligibility => Task::Intelligibility,
        TaskArg::Pathology => Task::Pathology,
    };
    let ds = match (&a.dataset, &a.corpus, &a.checkpoint) {
        (Some(m), _, _) => {
            summary.input(m, manifest_sha256(m, "feature_file")?);
            Dataset::load(m)?
        }
        (None, Some(corpus), Some(ckpt_path)) => {
            let (ckpt, utts) = load_inputs(ckpt_path, corpus, &mut summary)?;
            let sil = silence_index(&ckpt, &a.silence)?;
            speaker_dataset(&ckpt, &utts, a.features, sil)?
        }
        _ => bail!("either --dataset or --corpus with --checkpoint is required"),
    };
    let space = if a.baseline_only {
        ModelSpace::baseline()
    } else {
        ModelSpace::default_for(task)
    };
    let cfg = CvConfig {
        folds: a.folds,
        seed: a.seed,
        stratify: a.stratify,
        ..Default::default()
    };
    let report = cross_validate(&ds, task, &space, &cfg)?;
    create_dir(&a.out)?;
    let results = a.out.join("results.csv");
    let f = std::fs::File::create(&results).with_context(|| format!("creating {}", results.display()))?;
    report.write_csv(f)?;
    let audit = a.out.join("audit.json");
    std::fs::write(&audit, serde_json::to_string_pretty(&report.audit)?)
        .with_context(|| format!("writing {}", audit.display()))?;
    summary.config["task"] = json!(task);
    summary.config["features"] = json!(format!("{:?}", a.features).to_lowercase());
    summary.config["cv"] = json!(cfg);
    summary.config["model_space"] = json!(space);
    summary.config["silence"] = json!(a.silence);
    summary.seeds.insert("master".into(), a.seed);
    summary.seeds.insert("folds".into(), derive_seed(a.seed, "folds"));
    summary.metrics = json!({
        "metric": task.metric_name(),
        "mean": report.mean_metric,
        "folds": report.folds,
        "speakers": ds.len(),
        "intelligibility_std": ds.intelligibility_std(),
    });
    summary.output(&results);
    summary.output(&audit);
    summary.write(&a.out.join("summary.json"))?;
    println!("mean {} {:.4}", task.metric_name(), report.mean_metric);
    Ok(None)
}

fn analyze(a: AnalyzeArgs) -> Result<Option<bool>> {
    let mut summary = Summary::new("analyze");
    let (ckpt, utts) = load_inputs(&a.checkpoint, &a.corpus, &mut summary)?;
    let mut sums = Vec::with_capacity(utts.len());
    let mut scores = Vec::with_capacity(utts.len());
    for u in &utts {
        let Some(s) = u.intelligibility else {
            log::warn!("skipping utterance {} without a score", u.id);
            continue;
        };
        sums.push(UtteranceSummary::from_logits(&ckpt.plf_logits(&u.frames)?)?);
        scores.push(s);
    }
    let rows = correlation_report(ckpt.spec.plf_inventory.names(), &sums, &scores)?;
    create_dir(&a.out)?;
    let out = a.out.join("correlation.csv");
    let f = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_correlation_csv(f, &rows)?;
    summary.metrics = json!({ "utterances": sums.len(), "rows": rows });
    summary.output(&out);
    summary.write(&a.out.join("summary.json"))?;
    Ok(None)
}

fn gradcheck(a: GradcheckArgs) -> Result<Option<bool>> {
    let cfg = GradCheckConfig {
        configurations: a.configurations,
        seed: a.seed,
        ..Default::default()
    };
    let report = gradient_check(&cfg)?;
    let pass = report.max_relative_error < a.tolerance;
    println!("max relative error {:e} ({})", report.max_relative_error, report.worst);
    if let Some(out) = &a.out {
        let mut summary = Summary::new("gradcheck");
        summary.config = json!({ "gradcheck": cfg, "tolerance": a.tolerance });
        summary.seeds.insert("master".into(), a.seed);
        summary.metrics = json!({ "report": report, "pass": pass });
        summary.write(out)?;
    }
    Ok(Some(pass))
}
