//! Structured discriminant dictionaries.
//!
//! [`das_ksvd`] builds the dictionary iteratively: each iteration re-samples
//! (and progressively degrades) the training signals, learns a KSVD
//! dictionary on them and keeps one maximally discriminant atom per class.
//! [`mdcs`] and [`mdas`] rank the atoms of a single KSVD dictionary and keep
//! the top `I` per class, either as a new dictionary (MDCS) or as a choice
//! of coefficient rows of the original one (MDAS).

use ndarray::{Array2, ShapeBuilder};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::discriminant::{compute_stats_labeled, dcaf, rank_classes, score_atoms, ClassStats, MeasureWeights};
use crate::error::{Error, Result};
use crate::ksvd::{ksvd_learn, KsvdConfig};
use crate::signal::{class_name, SegmentMatrix};
use crate::sparse::{batch_encode, Dictionary};

/// Atoms closer than this (absolute cosine) to a saved atom of the same class are skipped.
pub const DUPLICATE_CORRELATION: f64 = 0.999;

/// A class had no atom with positive measure left and received the
/// least-bad atom instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub iteration: usize,
    pub class: usize,
    pub atom: usize,
}

/// Class-blocked dictionary `[Phi_0 Phi_1 ... Phi_{k-1}]` with `I` atoms per class.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredDictionary {
    pub dictionary: Dictionary,
    pub class_of_atom: Vec<usize>,
    pub iteration_of_atom: Vec<usize>,
    pub n_classes: usize,
    pub fallbacks: Vec<FallbackEvent>,
}

impl StructuredDictionary {
    pub fn atoms_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &c in &self.class_of_atom {
            counts[c] += 1;
        }
        counts
    }

    /// Assembles the class-blocked layout from `(class, iteration, atom)` picks.
    fn from_picks(
        n_classes: usize,
        dim: usize,
        picks: &[(usize, usize, ndarray::Array1<f64>)],
        fallbacks: Vec<FallbackEvent>,
    ) -> Result<Self> {
        let mut order: Vec<usize> = (0..picks.len()).collect();
        order.sort_by_key(|&i| (picks[i].0, picks[i].1));
        let mut atoms = Array2::zeros((dim, picks.len()).f());
        for (k, &i) in order.iter().enumerate() {
            atoms.column_mut(k).assign(&picks[i].2);
        }
        Ok(Self {
            dictionary: Dictionary::new(atoms.view())?,
            class_of_atom: order.iter().map(|&i| picks[i].0).collect(),
            iteration_of_atom: order.iter().map(|&i| picks[i].1).collect(),
            n_classes,
            fallbacks,
        })
    }
}

/// Re-sampling distribution over the training columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleState {
    pub probabilities: Vec<f64>,
    pub iteration: usize,
    /// Multiplier applied to the probability of every drawn signal (tau1).
    pub keep_factor: f64,
    /// Noise growth per iteration, in units of segment std (tau2).
    pub noise_factor: f64,
    pub seed: u64,
}

impl ResampleState {
    pub fn new(n: usize, keep_factor: f64, noise_factor: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InsufficientData {
                needed: 1,
                available: 0,
            });
        }
        for (name, v) in [("tau1", keep_factor), ("tau2", noise_factor)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(Self {
            probabilities: vec![1.0 / n as f64; n],
            iteration: 0,
            keep_factor,
            noise_factor,
            seed,
        })
    }
}

/// Output of one re-sampling step.
#[derive(Clone, Debug)]
pub struct Resampled {
    /// Class-blocked learning signals.
    pub signals: SegmentMatrix,
    /// Training column behind each learning column.
    pub drawn: Vec<usize>,
    pub next: ResampleState,
}

fn sample_std(x: ndarray::ArrayView1<'_, f64>) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.sum() / n as f64;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Draws `per_class` signals of every class without replacement, weighted by
/// the current probabilities restricted to that class; adds Gaussian noise of
/// std `iteration * tau2 * std(segment)`; then multiplies drawn
/// probabilities by tau1 and renormalizes.
pub fn sample_data(
    train: &SegmentMatrix,
    per_class: usize,
    state: &ResampleState,
) -> Result<Resampled> {
    if state.probabilities.len() != train.len() {
        return Err(Error::Shape {
            what: "re-sampling probabilities",
            expected: train.len(),
            found: state.probabilities.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
    rng.set_stream(state.iteration as u64);

    let mut drawn = Vec::with_capacity(per_class * train.n_classes());
    for class in 0..train.n_classes() {
        let members = train.indices_of_class(class);
        if members.len() < per_class {
            return Err(Error::Quota {
                class: class_name(train.n_classes(), class),
                available: members.len(),
                requested: per_class,
            });
        }
        let (positive, zero): (Vec<usize>, Vec<usize>) = members
            .iter()
            .partition(|&&i| state.probabilities[i] > 0.0);
        let take = per_class.min(positive.len());
        let chosen = index::sample_weighted(
            &mut rng,
            positive.len(),
            |k| state.probabilities[positive[k]],
            take,
        )
        .map_err(|e| Error::Domain(format!("weighted sampling failed: {e}")))?;
        let mut picked: Vec<usize> = chosen.into_iter().map(|k| positive[k]).collect();
        if take < per_class {
            let extra = index::sample(&mut rng, zero.len(), per_class - take);
            picked.extend(extra.into_iter().map(|k| zero[k]));
        }
        picked.sort_unstable();
        drawn.extend(picked);
    }

    let mut learning = train.select(&drawn);
    let scale = state.iteration as f64 * state.noise_factor;
    if scale > 0.0 {
        let signals = learning.signals().to_owned();
        let mut noisy = signals.clone();
        for (mut col, orig) in noisy.columns_mut().into_iter().zip(signals.columns()) {
            let sd = scale * sample_std(orig);
            for v in col.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sd * z;
            }
        }
        learning = SegmentMatrix::new(noisy, learning.labels().to_vec(), train.n_classes())?;
    }

    let mut probabilities = state.probabilities.clone();
    for &i in &drawn {
        probabilities[i] *= state.keep_factor;
    }
    let total: f64 = probabilities.iter().sum();
    if total > 0.0 {
        probabilities.iter_mut().for_each(|p| *p /= total);
    } else {
        let u = 1.0 / probabilities.len() as f64;
        probabilities.iter_mut().for_each(|p| *p = u);
    }

    Ok(Resampled {
        signals: learning,
        drawn,
        next: ResampleState {
            probabilities,
            iteration: state.iteration + 1,
            ..state.clone()
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DasKsvdConfig {
    pub ksvd: KsvdConfig,
    /// Number of iterations I (atoms per class).
    pub iterations: usize,
    /// Signals drawn per class and iteration (t).
    pub per_class_samples: usize,
    pub keep_factor: f64,
    pub noise_factor: f64,
    pub weights: MeasureWeights,
    pub seed: u64,
}

impl Default for DasKsvdConfig {
    fn default() -> Self {
        Self {
            ksvd: KsvdConfig::default(),
            iterations: 20,
            per_class_samples: 500,
            keep_factor: 0.5,
            noise_factor: 0.1,
            weights: MeasureWeights::default(),
            seed: 0,
        }
    }
}

pub(crate) fn derived_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 step
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn is_duplicate(dict: &Dictionary, j: usize, saved: &[ndarray::Array1<f64>]) -> bool {
    let atom = dict.atom(j);
    saved
        .iter()
        .any(|s| atom.dot(s).abs() > DUPLICATE_CORRELATION)
}

/// Least-bad fallback score `p[c][j] - max_{l != c} p[l][j]`.
fn class_margin(stats: &ClassStats, class: usize, j: usize) -> f64 {
    let p = &stats.activation_probability;
    let other = (0..stats.n_classes())
        .filter(|&l| l != class)
        .map(|l| p[[l, j]])
        .fold(f64::NEG_INFINITY, f64::max);
    p[[class, j]] - other
}

fn argmax_by<F: Fn(usize) -> f64>(candidates: impl Iterator<Item = usize>, score: F) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in candidates {
        let s = score(j);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, _)| j)
}

/// One atom per class from a single dictionary (GetAtoms). `saved[c]`
/// holds atoms already kept for class `c`. Returns `(atom, fell_back)` per class.
pub fn select_one_per_class(
    stats: &ClassStats,
    weights: MeasureWeights,
    dict: &Dictionary,
    saved: &[Vec<ndarray::Array1<f64>>],
) -> Result<Vec<(usize, bool)>> {
    let scores = score_atoms(stats, weights)?;
    let m = dict.len();
    let mut taken = vec![false; m];
    let mut out = Vec::with_capacity(stats.n_classes());
    for class in 0..stats.n_classes() {
        let fresh = |j: &usize| !taken[*j] && !is_duplicate(dict, *j, &saved[class]);
        let pick = argmax_by(
            (0..m).filter(|j| scores[*j].winner == class && scores[*j].m_combined > 0.0).filter(fresh),
            |j| scores[j].m_combined,
        );
        let (atom, fell_back) = match pick {
            Some(j) => (j, false),
            None => {
                let j = argmax_by((0..m).filter(fresh), |j| class_margin(stats, class, j))
                    .or_else(|| argmax_by((0..m).filter(|j| !taken[*j]), |j| class_margin(stats, class, j)))
                    .ok_or_else(|| Error::InsufficientData {
                        needed: stats.n_classes(),
                        available: m,
                    })?;
                (j, true)
            }
        };
        taken[atom] = true;
        out.push((atom, fell_back));
    }
    Ok(out)
}

/// Outcome of [`das_ksvd`] with per-iteration diagnostics.
#[derive(Clone, Debug)]
pub struct DasKsvdOutcome {
    pub structured: StructuredDictionary,
    /// Final KSVD error trace of every iteration.
    pub ksvd_errors: Vec<f64>,
    pub final_state: ResampleState,
    /// Training columns drawn in each iteration.
    pub drawn: Vec<Vec<usize>>,
}

pub fn das_ksvd(train: &SegmentMatrix, cfg: &DasKsvdConfig) -> Result<DasKsvdOutcome> {
    if cfg.iterations == 0 {
        return Err(Error::config("DAS-KSVD needs at least one iteration"));
    }
    cfg.weights.validate()?;
    cfg.ksvd.validate(train.dim())?;
    let k = train.n_classes();
    if k < 2 {
        return Err(Error::config("DAS-KSVD needs at least two classes"));
    }
    let mut state = ResampleState::new(train.len(), cfg.keep_factor, cfg.noise_factor, cfg.seed)?;
    let mut saved: Vec<Vec<ndarray::Array1<f64>>> = vec![Vec::new(); k];
    let mut picks = Vec::with_capacity(cfg.iterations * k);
    let mut fallbacks = Vec::new();
    let mut ksvd_errors = Vec::with_capacity(cfg.iterations);
    let mut drawn = Vec::with_capacity(cfg.iterations);

    for l in 0..cfg.iterations {
        let sample = sample_data(train, cfg.per_class_samples, &state)?;
        let kcfg = KsvdConfig {
            seed: derived_seed(cfg.seed, l as u64 + 1),
            ..cfg.ksvd.clone()
        };
        let fit = ksvd_learn(sample.signals.signals(), &kcfg)?;
        let codes = batch_encode(sample.signals.signals(), &fit.dictionary, kcfg.sparsity)?;
        let stats = compute_stats_labeled(
            &codes,
            sample.signals.signals(),
            sample.signals.labels(),
            k,
            &fit.dictionary,
        )?;
        let chosen = select_one_per_class(&stats, cfg.weights, &fit.dictionary, &saved)?;
        for (class, &(atom, fell_back)) in chosen.iter().enumerate() {
            if fell_back {
                log::warn!(
                    "DAS-KSVD iteration {l}: no discriminant atom for class {}, using least-bad atom {atom}",
                    class_name(k, class)
                );
                fallbacks.push(FallbackEvent {
                    iteration: l,
                    class,
                    atom,
                });
            }
            let a = fit.dictionary.atom(atom).to_owned();
            saved[class].push(a.clone());
            picks.push((class, l, a));
        }
        log::info!(
            "DAS-KSVD iteration {}/{}: ksvd error {:.4e}",
            l + 1,
            cfg.iterations,
            fit.error_trace.last().copied().unwrap_or(0.0)
        );
        ksvd_errors.push(fit.error_trace.last().copied().unwrap_or(0.0));
        drawn.push(sample.drawn);
        state = sample.next;
    }

    Ok(DasKsvdOutcome {
        structured: StructuredDictionary::from_picks(k, train.dim(), &picks, fallbacks)?,
        ksvd_errors,
        final_state: state,
        drawn,
    })
}

/// Discriminability measure used to rank atoms in MDCS / MDAS.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionMeasure {
    /// Binary |p0 - p1|.
    Dcaf,
    Combined(MeasureWeights),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdcsConfig {
    pub ksvd: KsvdConfig,
    pub atoms_per_class: usize,
    pub measure: SelectionMeasure,
}

/// Top atoms per class, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomRanking {
    pub per_class: Vec<Vec<usize>>,
    pub fallbacks: Vec<FallbackEvent>,
}

impl AtomRanking {
    /// Class-blocked list of atom indices.
    pub fn flattened(&self) -> Vec<usize> {
        self.per_class.iter().flatten().copied().collect()
    }
}

/// Ranks the atoms of one dictionary and keeps `per_class` for every class,
/// among atoms whose winning class it is. Short classes are topped up with
/// the least-bad remaining atoms.
pub fn rank_atoms(stats: &ClassStats, measure: SelectionMeasure, per_class: usize) -> Result<AtomRanking> {
    let k = stats.n_classes();
    let m = stats.n_atoms();
    if per_class * k > m {
        return Err(Error::InsufficientData {
            needed: per_class * k,
            available: m,
        });
    }
    let (winners, values): (Vec<usize>, Vec<f64>) = match measure {
        SelectionMeasure::Dcaf => {
            let mut w = Vec::with_capacity(m);
            let mut v = Vec::with_capacity(m);
            for j in 0..m {
                v.push(dcaf(stats, j)?);
                w.push(rank_classes(stats, j).0);
            }
            (w, v)
        }
        SelectionMeasure::Combined(weights) => score_atoms(stats, weights)?
            .into_iter()
            .map(|s| (s.winner, s.m_combined))
            .unzip(),
    };

    let mut used = vec![false; m];
    let mut per: Vec<Vec<usize>> = Vec::with_capacity(k);
    for class in 0..k {
        let mut cands: Vec<usize> = (0..m)
            .filter(|&j| winners[j] == class && values[j] > 0.0)
            .collect();
        cands.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        cands.truncate(per_class);
        cands.iter().for_each(|&j| used[j] = true);
        per.push(cands);
    }
    let mut fallbacks = Vec::new();
    for class in 0..k {
        while per[class].len() < per_class {
            let j = argmax_by((0..m).filter(|&j| !used[j]), |j| class_margin(stats, class, j))
                .expect("enough atoms checked above");
            log::warn!(
                "class {} has too few discriminant atoms, adding least-bad atom {j}",
                class_name(k, class)
            );
            used[j] = true;
            fallbacks.push(FallbackEvent {
                iteration: per[class].len(),
                class,
                atom: j,
            });
            per[class].push(j);
        }
    }
    Ok(AtomRanking {
        per_class: per,
        fallbacks,
    })
}

/// KSVD on all training signals, then per-class ranking.
pub fn learn_and_rank(train: &SegmentMatrix, cfg: &MdcsConfig) -> Result<(Dictionary, AtomRanking)> {
    if cfg.atoms_per_class == 0 {
        return Err(Error::config("atoms_per_class must be positive"));
    }
    if matches!(cfg.measure, SelectionMeasure::Dcaf) && train.n_classes() != 2 {
        return Err(Error::BinaryOnly(train.n_classes()));
    }
    let fit = ksvd_learn(train.signals(), &cfg.ksvd)?;
    let codes = batch_encode(train.signals(), &fit.dictionary, cfg.ksvd.sparsity)?;
    let stats = compute_stats_labeled(
        &codes,
        train.signals(),
        train.labels(),
        train.n_classes(),
        &fit.dictionary,
    )?;
    let ranking = rank_atoms(&stats, cfg.measure, cfg.atoms_per_class)?;
    Ok((fit.dictionary, ranking))
}

/// Most Discriminative Columns Selection.
pub fn mdcs(train: &SegmentMatrix, cfg: &MdcsConfig) -> Result<StructuredDictionary> {
    let (dict, ranking) = learn_and_rank(train, cfg)?;
    Ok(structured_from_ranking(&dict, &ranking))
}

pub fn structured_from_ranking(dict: &Dictionary, ranking: &AtomRanking) -> StructuredDictionary {
    let flat = ranking.flattened();
    let mut class_of_atom = Vec::with_capacity(flat.len());
    let mut iteration_of_atom = Vec::with_capacity(flat.len());
    for (class, atoms) in ranking.per_class.iter().enumerate() {
        for rank in 0..atoms.len() {
            class_of_atom.push(class);
            iteration_of_atom.push(rank);
        }
    }
    StructuredDictionary {
        dictionary: dict.select(&flat),
        class_of_atom,
        iteration_of_atom,
        n_classes: ranking.per_class.len(),
        fallbacks: ranking.fallbacks.clone(),
    }
}

/// Full dictionary plus the coefficient rows used as features.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomSubset {
    pub dictionary: Dictionary,
    pub selected_rows: Vec<usize>,
    pub class_of_row: Vec<usize>,
    pub n_classes: usize,
    pub fallbacks: Vec<FallbackEvent>,
}

/// Most Discriminative Atoms Selection.
pub fn mdas(train: &SegmentMatrix, cfg: &MdcsConfig) -> Result<AtomSubset> {
    let (dict, ranking) = learn_and_rank(train, cfg)?;
    Ok(subset_from_ranking(dict, &ranking))
}

pub fn subset_from_ranking(dict: Dictionary, ranking: &AtomRanking) -> AtomSubset {
    let class_of_row = ranking
        .per_class
        .iter()
        .enumerate()
        .flat_map(|(c, atoms)| std::iter::repeat_n(c, atoms.len()))
        .collect();
    AtomSubset {
        dictionary: dict,
        selected_rows: ranking.flattened(),
        class_of_row,
        n_classes: ranking.per_class.len(),
        fallbacks: ranking.fallbacks.clone(),
    }
}
