//! End-to-end composition: prepare, learn, train, classify and screen.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{self, featurize, one_hot, FeatureMap, Mlp, TrainReport};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::screening::{self, ConfusionMatrix, RocCurve, Severity};
use crate::selection::{
    das_ksvd, learn_and_rank, structured_from_ranking, subset_from_ranking, AtomSubset, FallbackEvent,
    SelectionMeasure, StructuredDictionary,
};
use crate::signal::{baseline_filter, repair, segment, Record, Segment, SegmentMatrix};
use crate::sparse::Dictionary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DasKsvd,
    MdcsBc,
    MdcsMc,
    MdasBc,
    MdasMc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::DasKsvd,
        Method::MdcsBc,
        Method::MdcsMc,
        Method::MdasBc,
        Method::MdasMc,
    ];

    /// Binary methods classify N against merged A+H.
    pub fn is_binary(self) -> bool {
        matches!(self, Method::MdcsBc | Method::MdasBc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::DasKsvd => "das-ksvd",
            Method::MdcsBc => "mdcs-bc",
            Method::MdcsMc => "mdcs-mc",
            Method::MdasBc => "mdas-bc",
            Method::MdasMc => "mdas-mc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Repair, baseline removal and segmentation of one record.
pub fn prepare_record(record: &Record, cfg: &PipelineConfig) -> Result<Vec<Segment>> {
    let repaired = repair(record, &cfg.repair)?;
    let filtered = baseline_filter(&repaired, cfg.filter_window)?;
    segment(&filtered, &cfg.segment)
}

/// Three-class segment set of all records, in record order.
pub fn prepare(records: &[Record], cfg: &PipelineConfig) -> Result<SegmentMatrix> {
    cfg.validate()?;
    let mut all = Vec::new();
    for r in records {
        all.extend(prepare_record(r, cfg)?);
    }
    if all.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    SegmentMatrix::from_segments(&all)
}

/// Disjoint balanced sets drawn from a prepared segment set.
#[derive(Clone, Debug)]
pub struct Splits {
    pub dictionary: SegmentMatrix,
    pub train: SegmentMatrix,
    pub validation: SegmentMatrix,
}

pub fn split(set: &SegmentMatrix, cfg: &PipelineConfig) -> Result<Splits> {
    let s = &cfg.split;
    let mut parts = set
        .balanced_subsets(
            &[s.dictionary_per_class, s.train_per_class, s.validation_per_class],
            cfg.seed,
        )?
        .into_iter();
    Ok(Splits {
        dictionary: parts.next().expect("three subsets"),
        train: parts.next().expect("three subsets"),
        validation: parts.next().expect("three subsets"),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Learned {
    Structured(StructuredDictionary),
    Subset(AtomSubset),
}

/// A learned dictionary together with how it was made and how to encode with it.
#[derive(Clone, Debug, PartialEq)]
pub struct DictionaryArtifact {
    pub method: Method,
    pub sparsity: usize,
    pub learned: Learned,
}

impl DictionaryArtifact {
    pub fn feature_map(&self) -> FeatureMap<'_> {
        match &self.learned {
            Learned::Structured(s) => FeatureMap::Structured(s),
            Learned::Subset(s) => FeatureMap::Subset(s),
        }
    }

    pub fn dictionary(&self) -> &Dictionary {
        match &self.learned {
            Learned::Structured(s) => &s.dictionary,
            Learned::Subset(s) => &s.dictionary,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.feature_map().n_classes()
    }

    pub fn n_features(&self) -> usize {
        self.feature_map().feature_len()
    }

    pub fn fallbacks(&self) -> &[FallbackEvent] {
        match &self.learned {
            Learned::Structured(s) => &s.fallbacks,
            Learned::Subset(s) => &s.fallbacks,
        }
    }

    /// Relabels a three-class set to the artifact's class layout.
    pub fn conform(&self, set: &SegmentMatrix) -> Result<SegmentMatrix> {
        if set.n_classes() == self.n_classes() {
            Ok(set.clone())
        } else {
            set.merge_ah()
        }
    }

    pub fn meta(&self) -> DictionaryMeta {
        let (class_of_feature, iteration_of_atom, selected_rows) = match &self.learned {
            Learned::Structured(s) => (s.class_of_atom.clone(), Some(s.iteration_of_atom.clone()), None),
            Learned::Subset(s) => (s.class_of_row.clone(), None, Some(s.selected_rows.clone())),
        };
        let mut per_class = vec![0; self.n_classes()];
        for &c in &class_of_feature {
            per_class[c] += 1;
        }
        DictionaryMeta {
            method: self.method,
            sparsity: self.sparsity,
            dim: self.dictionary().dim(),
            n_atoms: self.dictionary().len(),
            n_features: self.n_features(),
            n_classes: self.n_classes(),
            atoms_per_class: per_class,
            class_of_feature,
            iteration_of_atom,
            selected_rows,
            fallbacks: self.fallbacks().to_vec(),
        }
    }

    /// Writes `dictionary.csv` and `dictionary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_dictionary(&dir.join(DICTIONARY_CSV), self.dictionary())?;
        io::write_json(&dir.join(DICTIONARY_JSON), &self.meta())
    }

    /// Loads from a directory holding the two files, or from the CSV path
    /// with its JSON sidecar next to it.
    pub fn load(path: &Path) -> Result<Self> {
        let (csv, json) = if path.is_dir() {
            (path.join(DICTIONARY_CSV), path.join(DICTIONARY_JSON))
        } else {
            (path.to_path_buf(), path.with_extension("json"))
        };
        let dictionary = io::read_dictionary(&csv)?;
        let meta: DictionaryMeta = io::read_json(&json)?;
        let mismatch = |what: &'static str, expected: usize, found: usize| Error::Shape { what, expected, found };
        if meta.n_atoms != dictionary.len() {
            return Err(mismatch("dictionary atoms", meta.n_atoms, dictionary.len()));
        }
        if meta.class_of_feature.iter().any(|&c| c >= meta.n_classes) {
            return Err(Error::Parse {
                file: json.display().to_string(),
                msg: "class index out of range".into(),
            });
        }
        let learned = match (meta.selected_rows, meta.iteration_of_atom) {
            (Some(rows), _) => {
                if rows.len() != meta.class_of_feature.len() || rows.iter().any(|&r| r >= dictionary.len()) {
                    return Err(mismatch("selected rows", meta.class_of_feature.len(), rows.len()));
                }
                Learned::Subset(AtomSubset {
                    dictionary,
                    selected_rows: rows,
                    class_of_row: meta.class_of_feature,
                    n_classes: meta.n_classes,
                    fallbacks: meta.fallbacks,
                })
            }
            (None, iterations) => {
                if meta.class_of_feature.len() != dictionary.len() {
                    return Err(mismatch("atom classes", dictionary.len(), meta.class_of_feature.len()));
                }
                Learned::Structured(StructuredDictionary {
                    iteration_of_atom: iterations.unwrap_or_else(|| vec![0; dictionary.len()]),
                    dictionary,
                    class_of_atom: meta.class_of_feature,
                    n_classes: meta.n_classes,
                    fallbacks: meta.fallbacks,
                })
            }
        };
        Ok(Self {
            method: meta.method,
            sparsity: meta.sparsity,
            learned,
        })
    }
}

pub const DICTIONARY_CSV: &str = "dictionary.csv";
pub const DICTIONARY_JSON: &str = "dictionary.json";
pub const MODEL_JSON: &str = "model.json";

/// JSON sidecar of a dictionary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionaryMeta {
    pub method: Method,
    pub sparsity: usize,
    pub dim: usize,
    pub n_atoms: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub atoms_per_class: Vec<usize>,
    /// Class owning each feature (atom for structured, selected row for subsets).
    pub class_of_feature: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration_of_atom: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_rows: Option<Vec<usize>>,
    #[serde(default)]
    pub fallbacks: Vec<FallbackEvent>,
}

/// Learns a dictionary with `method` from a three-class balanced pool.
pub fn learn(pool: &SegmentMatrix, method: Method, cfg: &PipelineConfig) -> Result<DictionaryArtifact> {
    cfg.validate()?;
    let learned = match method {
        Method::DasKsvd => Learned::Structured(das_ksvd(pool, &cfg.das_ksvd())?.structured),
        _ => {
            let (set, measure) = if method.is_binary() {
                (pool.merge_ah()?, SelectionMeasure::Dcaf)
            } else {
                (pool.clone(), SelectionMeasure::Combined(cfg.weights))
            };
            let (dict, ranking) = learn_and_rank(&set, &cfg.mdcs(measure))?;
            match method {
                Method::MdcsBc | Method::MdcsMc => Learned::Structured(structured_from_ranking(&dict, &ranking)),
                _ => Learned::Subset(subset_from_ranking(dict, &ranking)),
            }
        }
    };
    Ok(DictionaryArtifact {
        method,
        sparsity: cfg.ksvd.sparsity,
        learned,
    })
}

/// Serialized classifier with the encoding parameters it was trained for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub method: Method,
    pub sparsity: usize,
    pub n_classes: usize,
    pub network: io::MlpFile,
}

impl ModelArtifact {
    pub fn new(artifact: &DictionaryArtifact, mlp: &Mlp) -> Self {
        Self {
            method: artifact.method,
            sparsity: artifact.sparsity,
            n_classes: artifact.n_classes(),
            network: io::MlpFile::from(mlp),
        }
    }

    pub fn mlp(&self) -> Result<Mlp> {
        self.network.clone().into_mlp()
    }
}

pub fn features(artifact: &DictionaryArtifact, set: &SegmentMatrix) -> Result<ndarray::Array2<f64>> {
    featurize(set.signals(), artifact.feature_map(), artifact.sparsity)
}

/// Trains the perceptron on the sparse codes of the train/validation sets.
pub fn train(
    artifact: &DictionaryArtifact,
    train_set: &SegmentMatrix,
    validation_set: &SegmentMatrix,
    cfg: &PipelineConfig,
) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    let k = artifact.n_classes();
    let tr = artifact.conform(train_set)?;
    let va = artifact.conform(validation_set)?;
    let x_tr = features(artifact, &tr)?;
    let x_va = features(artifact, &va)?;
    classifier::train(
        x_tr.view(),
        one_hot(tr.labels(), k).view(),
        x_va.view(),
        one_hot(va.labels(), k).view(),
        &cfg.mlp(),
    )
}

/// Predicted classes and the confusion matrix against the known labels.
pub fn classify(
    artifact: &DictionaryArtifact,
    model: &Mlp,
    set: &SegmentMatrix,
) -> Result<(Vec<usize>, ConfusionMatrix)> {
    let set = artifact.conform(set)?;
    let (pred, _) = classifier::predict(model, features(artifact, &set)?.view())?;
    let cm = ConfusionMatrix::from_labels(set.labels(), &pred, artifact.n_classes())?;
    Ok((pred, cm))
}

/// Segment predictions for a whole record.
pub fn record_predictions(
    record: &Record,
    artifact: &DictionaryArtifact,
    model: &Mlp,
    cfg: &PipelineConfig,
) -> Result<Vec<usize>> {
    let segments = prepare_record(record, cfg)?;
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let set = SegmentMatrix::from_segments(&segments)?;
    Ok(classifier::predict(model, features(artifact, &set)?.view())?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRow {
    pub id: String,
    pub ahi_true: f64,
    pub ahi_est: f64,
    pub severity: Severity,
    pub verdict: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScreeningRun {
    pub rows: Vec<ScreeningRow>,
    /// ROC of the estimated AHI against `ahi_true > threshold`.
    pub roc: RocCurve,
    pub pearson: f64,
}

pub fn screen_records(
    records: &[Record],
    artifact: &DictionaryArtifact,
    model: &Mlp,
    cfg: &PipelineConfig,
) -> Result<ScreeningRun> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let preds = record_predictions(r, artifact, model, cfg)?;
        let s = screening::screen(&r.id, &preds, r.duration_hours(), cfg.threshold)?;
        log::info!("{}: AHI {:.2} estimated {:.2}", r.id, r.annotated_ahi(), s.ahi_est);
        rows.push(ScreeningRow {
            id: s.id,
            ahi_true: r.annotated_ahi(),
            ahi_est: s.ahi_est,
            severity: s.severity,
            verdict: s.verdict,
        });
    }
    let est: Vec<f64> = rows.iter().map(|r| r.ahi_est).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.ahi_true).collect();
    let positive: Vec<bool> = truth.iter().map(|&a| a > cfg.threshold).collect();
    let roc = screening::roc(&est, &positive)?;
    Ok(ScreeningRun {
        rows,
        roc,
        pearson: screening::pearson(&est, &truth),
    })
}
