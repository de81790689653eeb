//! Single declarative configuration for the whole pipeline.

use serde::{Deserialize, Serialize};

use crate::classifier::MlpConfig;
use crate::discriminant::MeasureWeights;
use crate::error::{Error, Result};
use crate::ksvd::KsvdConfig;
use crate::selection::{DasKsvdConfig, MdcsConfig, SelectionMeasure};
use crate::signal::{RepairConfig, SegmentConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DasParams {
    /// Iterations I; also the number of atoms kept per class.
    pub iterations: usize,
    /// Signals drawn per class and iteration (t).
    pub per_class_samples: usize,
    pub keep_factor: f64,
    pub noise_factor: f64,
}

impl Default for DasParams {
    fn default() -> Self {
        Self {
            iterations: 20,
            per_class_samples: 500,
            keep_factor: 0.5,
            noise_factor: 0.1,
        }
    }
}

/// Sizes of the disjoint balanced sets drawn from a prepared segment set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    /// Pool the dictionaries are learned from.
    pub dictionary_per_class: usize,
    pub train_per_class: usize,
    pub validation_per_class: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            dictionary_per_class: 2000,
            train_per_class: 7000,
            validation_per_class: 1500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub repair: RepairConfig,
    /// Length of the centered moving average removed as baseline.
    pub filter_window: usize,
    pub segment: SegmentConfig,
    pub ksvd: KsvdConfig,
    pub das: DasParams,
    pub weights: MeasureWeights,
    pub split: SplitSizes,
    pub mlp: MlpConfig,
    /// Screening cutoff on the estimated AHI (events/hour).
    pub threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repair: RepairConfig::default(),
            filter_window: 512,
            segment: SegmentConfig::default(),
            ksvd: KsvdConfig::default(),
            das: DasParams::default(),
            weights: MeasureWeights::default(),
            split: SplitSizes::default(),
            mlp: MlpConfig::default(),
            threshold: 15.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.repair.lower < self.repair.upper) {
            return bad("repair bounds must satisfy lower < upper".into());
        }
        if self.filter_window == 0 {
            return bad("filter_window must be positive".into());
        }
        self.segment.validate()?;
        self.ksvd.validate(self.segment.length)?;
        if self.das.iterations == 0 || self.das.per_class_samples == 0 {
            return bad("das iterations and per_class_samples must be positive".into());
        }
        if !(0.0..1.0).contains(&self.das.keep_factor) || !(0.0..1.0).contains(&self.das.noise_factor) {
            return bad("keep_factor and noise_factor must lie in [0, 1)".into());
        }
        if self.das.per_class_samples > self.split.dictionary_per_class {
            return bad(format!(
                "per_class_samples {} exceeds dictionary_per_class {}",
                self.das.per_class_samples, self.split.dictionary_per_class
            ));
        }
        if self.split.train_per_class == 0 || self.split.validation_per_class == 0 {
            return bad("train and validation sets must be nonempty".into());
        }
        self.weights.validate()?;
        self.mlp.validate()?;
        if !(self.threshold >= 0.0) {
            return bad("threshold must be nonnegative".into());
        }
        Ok(())
    }

    pub fn das_ksvd(&self) -> DasKsvdConfig {
        DasKsvdConfig {
            ksvd: self.ksvd.clone(),
            iterations: self.das.iterations,
            per_class_samples: self.das.per_class_samples,
            keep_factor: self.das.keep_factor,
            noise_factor: self.das.noise_factor,
            weights: self.weights,
            seed: self.seed,
        }
    }

    /// Baseline config: one KSVD run, I atoms kept per class.
    pub fn mdcs(&self, measure: SelectionMeasure) -> MdcsConfig {
        MdcsConfig {
            ksvd: KsvdConfig {
                seed: self.seed,
                ..self.ksvd.clone()
            },
            atoms_per_class: self.das.iterations,
            measure,
        }
    }

    pub fn mlp(&self) -> MlpConfig {
        MlpConfig {
            seed: self.seed,
            ..self.mlp.clone()
        }
    }
}
