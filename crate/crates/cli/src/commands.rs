use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dasksvd::config::PipelineConfig;
use dasksvd::pipeline::{self, DictionaryArtifact, ModelArtifact, MODEL_JSON};
use dasksvd::screening::{class_metrics, confusion_at, roc_svg};
use dasksvd::signal::class_name;
use dasksvd::synth::{self, CohortSpec};
use dasksvd::{io, Error};
use serde::Serialize;
use serde_json::Value;

use crate::args::*;
use crate::manifest::{self, InputDigest, RunManifest};

/// Runs an invocation. `stored` is the resolved config of a replayed run.
pub fn run(inv: Invocation, stored: Option<Value>) -> Result<()> {
    let out = match &inv {
        Invocation::Synth(a) => a.out.clone(),
        Invocation::Prepare(a) => a.out.clone(),
        Invocation::Learn(a) => a.out.clone(),
        Invocation::Train(a) => a.out.clone(),
        Invocation::Classify(a) => a.out.clone(),
        Invocation::Screen(a) => a.out.clone(),
    };
    let (config, seed, inputs, outputs) = match &inv {
        Invocation::Synth(a) => {
            let spec = match stored {
                Some(v) => manifest::from_value(v)?,
                None => synth_spec(a)?,
            };
            spec.validate()?;
            fs::create_dir_all(&out)?;
            let outputs = synth_cmd(&spec, &out)?;
            let inputs = match &a.spec {
                Some(p) => manifest::digests(&[p])?,
                None => Vec::new(),
            };
            (serde_json::to_value(&spec)?, spec.seed, inputs, outputs)
        }
        other => {
            let cfg = match stored {
                Some(v) => {
                    let cfg: PipelineConfig = manifest::from_value(v)?;
                    cfg.validate()?;
                    cfg
                }
                None => pipeline_config(other)?,
            };
            fs::create_dir_all(&out)?;
            let (inputs, outputs) = match other {
                Invocation::Prepare(a) => (manifest::digests(&[&a.records])?, prepare_cmd(a, &cfg)?),
                Invocation::Learn(a) => (manifest::digests(&[&a.segments])?, learn_cmd(a, &cfg)?),
                Invocation::Train(a) => (
                    manifest::digests(&[&a.segments, &a.dictionary])?,
                    train_cmd(a, &cfg)?,
                ),
                Invocation::Classify(a) => (
                    manifest::digests(&[&a.segments, &a.dictionary, &a.model])?,
                    classify_cmd(a, &cfg)?,
                ),
                Invocation::Screen(a) => (
                    manifest::digests(&[&a.records, &a.dictionary, &a.model])?,
                    screen_cmd(a, &cfg)?,
                ),
                Invocation::Synth(_) => unreachable!(),
            };
            (serde_json::to_value(&cfg)?, cfg.seed, inputs, outputs)
        }
    };
    manifest::write_manifest(
        &out,
        &RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            invocation: inv,
            seed,
            config,
            inputs,
            outputs,
        },
    )
}

pub fn replay(args: &ReplayArgs) -> Result<()> {
    let m = manifest::read_manifest(&args.run)?;
    for InputDigest { path, sha256 } in &m.inputs {
        let now = manifest::digest(path)?;
        if &now != sha256 {
            return Err(Error::Parse {
                file: path.display().to_string(),
                msg: "input changed since the recorded run".into(),
            }
            .into());
        }
    }
    let mut inv = m.invocation;
    if let Some(out) = &args.out {
        *inv.out_mut() = out.clone();
    }
    log::info!("replaying `{}` into {}", inv.name(), inv.out_mut().display());
    run(inv, Some(m.config))
}

fn pipeline_config(inv: &Invocation) -> Result<PipelineConfig> {
    match inv {
        Invocation::Prepare(a) => manifest::resolve_config(&a.config, |_| {}),
        Invocation::Learn(a) => manifest::resolve_config(&a.config, |_| {}),
        Invocation::Train(a) => manifest::resolve_config(&a.config, |_| {}),
        Invocation::Classify(a) => manifest::resolve_config(&a.config, |_| {}),
        Invocation::Screen(a) => manifest::resolve_config(&a.config, |c| {
            if let Some(t) = a.threshold {
                c.threshold = t;
            }
        }),
        Invocation::Synth(_) => unreachable!(),
    }
}

fn synth_spec(a: &SynthArgs) -> Result<CohortSpec> {
    let doc = match &a.spec {
        Some(p) => manifest::read_document(p)?,
        None => Value::Object(Default::default()),
    };
    let mut spec: CohortSpec = manifest::from_value(doc)?;
    if let Some(n) = a.n_records {
        spec.n_records = n;
    }
    if let Some(h) = a.duration_hours {
        spec.duration_hours = h;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn synth_cmd(spec: &CohortSpec, out: &Path) -> Result<Vec<String>> {
    let cohort = synth::generate(spec)?;
    let mut rows = Vec::with_capacity(cohort.len());
    for r in &cohort {
        io::write_record(out, &r.record)?;
        rows.push(vec![
            r.record.id.clone(),
            r.true_ahi.to_string(),
            r.record.events.len().to_string(),
            r.record.duration_hours().to_string(),
        ]);
    }
    io::write_table(&out.join("truth.csv"), &["id", "ahi", "n_events", "duration_hours"], &rows)?;
    log::info!("wrote {} records to {}", cohort.len(), out.display());
    Ok(vec!["*.spo2.csv".into(), "*.events.csv".into(), "truth.csv".into()])
}

fn prepare_cmd(a: &PrepareArgs, cfg: &PipelineConfig) -> Result<Vec<String>> {
    let records = io::read_records(&a.records)?;
    let set = pipeline::prepare(&records, cfg)?;
    log::info!("{} segments from {} records, class counts {:?}", set.len(), records.len(), set.class_counts());
    io::write_segments(&a.out.join(SEGMENTS_CSV), &set)?;
    Ok(vec![SEGMENTS_CSV.into()])
}

pub const SEGMENTS_CSV: &str = "segments.csv";

/// Accepts a segments directory or the CSV itself.
fn segments_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(SEGMENTS_CSV)
    } else {
        p.to_path_buf()
    }
}

fn learn_cmd(a: &LearnArgs, cfg: &PipelineConfig) -> Result<Vec<String>> {
    let set = io::read_segments(&segments_path(&a.segments))?;
    let splits = pipeline::split(&set, cfg)?;
    let artifact = pipeline::learn(&splits.dictionary, a.method, cfg)?;
    for f in artifact.fallbacks() {
        log::warn!(
            "class {} won no atom in iteration {}; kept atom {} by margin",
            class_name(artifact.n_classes(), f.class),
            f.iteration,
            f.atom
        );
    }
    log::info!("{}: {} features {:?}", a.method, artifact.n_features(), artifact.meta().atoms_per_class);
    artifact.save(&a.out)?;
    Ok(vec![pipeline::DICTIONARY_CSV.into(), pipeline::DICTIONARY_JSON.into()])
}

fn train_cmd(a: &TrainArgs, cfg: &PipelineConfig) -> Result<Vec<String>> {
    let set = io::read_segments(&segments_path(&a.segments))?;
    let artifact = DictionaryArtifact::load(&a.dictionary)?;
    let splits = pipeline::split(&set, cfg)?;
    let (mlp, report) = pipeline::train(&artifact, &splits.train, &splits.validation, cfg)?;
    log::info!(
        "trained {} epochs, best validation MSE {:.5} at epoch {}",
        report.epochs_run,
        report.validation_mse[report.best_epoch],
        report.best_epoch
    );
    io::write_json(&a.out.join(MODEL_JSON), &ModelArtifact::new(&artifact, &mlp))?;
    io::write_json(&a.out.join("train_report.json"), &report)?;
    Ok(vec![MODEL_JSON.into(), "train_report.json".into()])
}

fn load_model(path: &Path, artifact: &DictionaryArtifact) -> Result<dasksvd::classifier::Mlp> {
    let path = if path.is_dir() { path.join(MODEL_JSON) } else { path.to_path_buf() };
    let model: ModelArtifact = io::read_json(&path)?;
    if model.method != artifact.method || model.sparsity != artifact.sparsity || model.n_classes != artifact.n_classes() {
        return Err(Error::Config(format!(
            "model was trained for {} (q = {}), dictionary is {} (q = {})",
            model.method, model.sparsity, artifact.method, artifact.sparsity
        ))
        .into());
    }
    Ok(model.mlp()?)
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn classify_cmd(a: &ClassifyArgs, _cfg: &PipelineConfig) -> Result<Vec<String>> {
    let set = io::read_segments(&segments_path(&a.segments))?;
    let artifact = DictionaryArtifact::load(&a.dictionary)?;
    let mlp = load_model(&a.model, &artifact)?;
    let (pred, cm) = pipeline::classify(&artifact, &mlp, &set)?;
    let k = artifact.n_classes();
    let known = artifact.conform(&set)?;
    let rows: Vec<Vec<String>> = known
        .labels()
        .iter()
        .zip(&pred)
        .enumerate()
        .map(|(i, (&t, &p))| vec![i.to_string(), class_name(k, t), class_name(k, p)])
        .collect();
    io::write_table(&a.out.join("predictions.csv"), &["segment", "known", "predicted"], &rows)?;

    let names: Vec<String> = (0..k).map(|c| class_name(k, c)).collect();
    let mut header = vec!["known"];
    header.extend(names.iter().map(String::as_str));
    let table = |m: ndarray::Array2<f64>| -> Vec<Vec<String>> {
        m.rows()
            .into_iter()
            .enumerate()
            .map(|(c, r)| std::iter::once(names[c].clone()).chain(r.iter().map(|&v| fmt(v))).collect())
            .collect()
    };
    io::write_table(&a.out.join("confusion.csv"), &header, &table(cm.counts.mapv(|v| v as f64)))?;
    io::write_table(&a.out.join("confusion_percent.csv"), &header, &table(cm.normalized()))?;

    let report = cm.metrics()?;
    let mut rows: Vec<Vec<String>> = report
        .per_class
        .iter()
        .enumerate()
        .map(|(c, m)| vec![names[c].clone(), fmt(m.sensitivity), fmt(m.specificity), fmt(m.precision)])
        .collect();
    rows.push(vec!["accuracy".into(), fmt(report.accuracy), String::new(), String::new()]);
    io::write_table(&a.out.join("metrics.csv"), &["class", "sensitivity", "specificity", "precision"], &rows)?;
    log::info!("accuracy {:.4}", report.accuracy);
    Ok(vec![
        "predictions.csv".into(),
        "confusion.csv".into(),
        "confusion_percent.csv".into(),
        "metrics.csv".into(),
    ])
}

#[derive(Serialize)]
struct ScreenSummary {
    method: String,
    n_records: usize,
    n_positive: usize,
    threshold: f64,
    auc: f64,
    pearson: f64,
    optimal_cutoff: f64,
    optimal_sensitivity: f64,
    optimal_specificity: f64,
    sensitivity_at_threshold: f64,
    specificity_at_threshold: f64,
    accuracy_at_threshold: f64,
}

fn screen_cmd(a: &ScreenArgs, cfg: &PipelineConfig) -> Result<Vec<String>> {
    let records = io::read_records(&a.records)?;
    let artifact = DictionaryArtifact::load(&a.dictionary)?;
    let mlp = load_model(&a.model, &artifact)?;
    let run = pipeline::screen_records(&records, &artifact, &mlp, cfg)?;

    let rows: Vec<Vec<String>> = run
        .rows
        .iter()
        .map(|r| {
            vec![
                r.id.clone(),
                fmt(r.ahi_true),
                fmt(r.ahi_est),
                r.severity.to_string(),
                r.verdict.to_string(),
            ]
        })
        .collect();
    io::write_table(
        &a.out.join("screening.csv"),
        &["id", "ahi_true", "ahi_est", "severity", "verdict"],
        &rows,
    )?;
    let roc_rows: Vec<Vec<String>> = run
        .roc
        .points
        .iter()
        .map(|p| vec![fmt(p.threshold), fmt(p.sensitivity), fmt(p.specificity)])
        .collect();
    io::write_table(&a.out.join("roc.csv"), &["threshold", "sensitivity", "specificity"], &roc_rows)?;
    fs::write(
        a.out.join("roc.svg"),
        roc_svg(&run.roc, &format!("{} screening, AHI > {}", artifact.method, cfg.threshold)),
    )
    .context("writing roc.svg")?;

    let est: Vec<f64> = run.rows.iter().map(|r| r.ahi_est).collect();
    let positive: Vec<bool> = run.rows.iter().map(|r| r.ahi_true > cfg.threshold).collect();
    let at = class_metrics(confusion_at(&est, &positive, cfg.threshold)?.counts.mapv(|v| v as f64).view())?;
    let summary = ScreenSummary {
        method: artifact.method.to_string(),
        n_records: run.rows.len(),
        n_positive: positive.iter().filter(|&&p| p).count(),
        threshold: cfg.threshold,
        auc: run.roc.auc,
        pearson: run.pearson,
        optimal_cutoff: run.roc.optimal.threshold,
        optimal_sensitivity: run.roc.optimal.sensitivity,
        optimal_specificity: run.roc.optimal.specificity,
        sensitivity_at_threshold: at.per_class[1].sensitivity,
        specificity_at_threshold: at.per_class[1].specificity,
        accuracy_at_threshold: at.accuracy,
    };
    io::write_json(&a.out.join("summary.json"), &summary)?;
    log::info!("AUC {:.4}, Pearson {:.4}", run.roc.auc, run.pearson);
    Ok(vec![
        "screening.csv".into(),
        "roc.csv".into(),
        "roc.svg".into(),
        "summary.json".into(),
    ])
}
