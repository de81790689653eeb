//! KSVD dictionary learning: alternate OMP coding with one-at-a-time atom
//! updates from the dominant singular pair of each restricted residual.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dominant_singular_pair;
use crate::sparse::{Dictionary, OmpEncoder, SparseCodes, ACTIVE_EPS};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1000;
const DUPLICATE_LIMIT: f64 = 0.99;
const MIN_USAGE: usize = 4;
const STALL_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsvdConfig {
    /// M = round(redundancy * N).
    pub redundancy: f64,
    pub sparsity: usize,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Stop when the relative drop of the total squared error falls below this.
    pub convergence_tol: f64,
}

impl Default for KsvdConfig {
    fn default() -> Self {
        Self {
            redundancy: 2.0,
            sparsity: 4,
            max_sweeps: 30,
            seed: 0,
            convergence_tol: 1e-4,
        }
    }
}

impl KsvdConfig {
    pub fn n_atoms(&self, dim: usize) -> usize {
        (self.redundancy * dim as f64).round() as usize
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.redundancy.is_finite() && self.redundancy >= 1.0) {
            return Err(Error::config("redundancy factor must be >= 1 (M >= N)"));
        }
        if self.sparsity == 0 || self.sparsity > dim {
            return Err(Error::config(format!(
                "sparsity {} outside [1, {dim}]",
                self.sparsity
            )));
        }
        if self.max_sweeps == 0 {
            return Err(Error::config("max_sweeps must be positive"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::config("convergence_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// Learned dictionary with the codes of the training signals.
#[derive(Clone, Debug)]
pub struct KsvdFit {
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    /// Total squared representation error after each sweep.
    pub error_trace: Vec<f64>,
    /// Atoms re-seeded from badly represented signals.
    pub replaced_atoms: usize,
}

/// `m` distinct nonzero training columns drawn at random, l2-normalized.
pub fn init_dictionary(signals: ArrayView2<'_, f64>, m: usize, seed: u64) -> Result<Dictionary> {
    let n = signals.ncols();
    if n < m {
        return Err(Error::InsufficientData {
            needed: m,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = index::sample(&mut rng, n, n).into_vec();
    let mut chosen = Vec::with_capacity(m);
    for i in order {
        let col = signals.column(i);
        if col.dot(&col) > 0.0 && col.iter().all(|v| v.is_finite()) {
            chosen.push(i);
            if chosen.len() == m {
                break;
            }
        }
    }
    if chosen.len() < m {
        return Err(Error::InsufficientData {
            needed: m,
            available: chosen.len(),
        });
    }
    Dictionary::new(signals.select(Axis(1), &chosen).view())
}

/// Codes every column. When `keep_old` is set a column keeps its previous code
/// if the fresh one is worse, unless that code uses an atom flagged in `stale`.
fn code_columns(
    signals: ArrayView2<'_, f64>,
    dict: &Dictionary,
    q: usize,
    codes: &mut Array2<f64>,
    residual: &mut Array2<f64>,
    keep_old: bool,
    stale: &[bool],
) -> Result<()> {
    let encoder = OmpEncoder::new(dict);
    for i in 0..signals.ncols() {
        let x = signals.column(i);
        let p = encoder.encode(x, q)?;
        let valid = keep_old
            && !codes
                .column(i)
                .iter()
                .zip(stale)
                .any(|(a, &s)| s && a.abs() > ACTIVE_EPS);
        let old = residual.column(i).dot(&residual.column(i)).sqrt();
        if !valid || p.residual_norm <= old {
            let mut col = codes.column_mut(i);
            col.fill(0.0);
            for (&j, &v) in p.support.iter().zip(&p.values) {
                col[j] = v;
            }
            let recon = dict.synthesize(col.view());
            residual.column_mut(i).assign(&(&x - &recon));
        }
    }
    Ok(())
}

fn squared_error(residual: &Array2<f64>) -> f64 {
    residual.iter().map(|v| v * v).sum()
}

/// Atoms that nearly duplicate a more used atom or serve almost no signal.
fn clearing_candidates(dict: &Dictionary, codes: &Array2<f64>) -> Vec<usize> {
    let m = dict.len();
    let usage: Vec<usize> = (0..m)
        .map(|j| codes.row(j).iter().filter(|a| a.abs() > ACTIVE_EPS).count())
        .collect();
    let gram = dict.atoms().t().dot(&dict.atoms());
    (0..m)
        .filter(|&j| {
            usage[j] < MIN_USAGE
                || (0..m).any(|k| {
                    k != j
                        && gram[[j, k]].abs() > DUPLICATE_LIMIT
                        && (usage[j], k) < (usage[k], j)
                })
        })
        .collect()
}

/// Replaces every unused atom by a badly represented training column, then
/// refits each used atom and its coefficients to the dominant singular pair of
/// its restricted residual. Returns the number of re-seeded atoms.
fn update_atoms(
    signals: ArrayView2<'_, f64>,
    dict: &mut Dictionary,
    codes: &mut Array2<f64>,
    residual: &mut Array2<f64>,
) -> usize {
    let (m, n) = codes.dim();
    let mut reseeded = vec![false; n];
    let mut replaced = 0;
    for j in 0..m {
        let users: Vec<usize> = (0..n)
            .filter(|&i| codes[[j, i]].abs() > ACTIVE_EPS)
            .collect();
        if users.is_empty() {
            // re-seed with the worst represented column not used yet
            let worst = (0..n)
                .filter(|&i| !reseeded[i])
                .map(|i| (i, residual.column(i).dot(&residual.column(i))))
                .fold(None, |acc: Option<(usize, f64)>, (i, e)| match acc {
                    Some((_, be)) if be >= e => acc,
                    _ => Some((i, e)),
                });
            if let Some((i, e)) = worst {
                let col = signals.column(i);
                if e > 0.0 && col.dot(&col) > 0.0 {
                    dict.set_atom(j, col);
                    reseeded[i] = true;
                    replaced += 1;
                }
            }
            codes.row_mut(j).fill(0.0);
            continue;
        }
        let atom = dict.atom(j).to_owned();
        let mut restricted = residual.select(Axis(1), &users);
        for (k, &i) in users.iter().enumerate() {
            restricted.column_mut(k).scaled_add(codes[[j, i]], &atom);
        }
        let Some((u, coeffs)) =
            dominant_singular_pair(restricted.view(), atom.view(), POWER_TOL, POWER_MAX_ITER)
        else {
            continue;
        };
        dict.set_atom(j, u.view());
        let u = dict.atom(j).to_owned();
        for (k, &i) in users.iter().enumerate() {
            let c = coeffs[k];
            codes[[j, i]] = c;
            let mut r = residual.column_mut(i);
            r.assign(&restricted.column(k));
            r.scaled_add(-c, &u);
        }
    }
    replaced
}

struct State {
    dict: Dictionary,
    codes: Array2<f64>,
    residual: Array2<f64>,
    replaced: usize,
}

impl State {
    fn error(&self) -> f64 {
        squared_error(&self.residual)
    }

    /// One coding pass plus one atom-update pass.
    fn sweep(&mut self, signals: ArrayView2<'_, f64>, q: usize, keep_old: bool, stale: &[bool]) -> Result<()> {
        code_columns(signals, &self.dict, q, &mut self.codes, &mut self.residual, keep_old, stale)?;
        self.replaced += update_atoms(signals, &mut self.dict, &mut self.codes, &mut self.residual);
        Ok(())
    }

    /// Copy with the given atoms replaced by the normalized residuals of the
    /// worst represented columns, and the mask of replaced atoms.
    fn with_replaced(&self, atoms: &[usize]) -> (State, Vec<bool>) {
        let (m, n) = self.codes.dim();
        let err: Vec<f64> = self.residual.columns().into_iter().map(|c| c.dot(&c)).collect();
        let mut order: Vec<usize> = (0..n).filter(|&i| err[i] > 0.0).collect();
        order.sort_by(|&a, &b| err[b].total_cmp(&err[a]).then(a.cmp(&b)));
        let mut next = State {
            dict: self.dict.clone(),
            codes: self.codes.clone(),
            residual: self.residual.clone(),
            replaced: self.replaced,
        };
        let mut stale = vec![false; m];
        for (&j, &i) in atoms.iter().zip(&order) {
            next.dict.set_atom(j, self.residual.column(i));
            stale[j] = true;
            next.replaced += 1;
        }
        (next, stale)
    }
}

/// Atom carrying the least coefficient energy.
fn weakest_atom(codes: &Array2<f64>) -> usize {
    let energy: Vec<f64> = codes.rows().into_iter().map(|r| r.dot(&r)).collect();
    (0..energy.len())
        .min_by(|&a, &b| energy[a].total_cmp(&energy[b]))
        .unwrap_or(0)
}

/// Learns an M-atom dictionary for the columns of `signals`.
///
/// Duplicated or idle atoms are replaced before coding, and when a sweep
/// stalls a trial sweep with the weakest atom replaced is run alongside.
/// Either change is kept only if it lowers the error, so the error trace is
/// non-increasing.
pub fn ksvd_learn(signals: ArrayView2<'_, f64>, cfg: &KsvdConfig) -> Result<KsvdFit> {
    let (dim, n) = signals.dim();
    cfg.validate(dim)?;
    let m = cfg.n_atoms(dim);
    if n < m {
        return Err(Error::InsufficientData {
            needed: m,
            available: n,
        });
    }
    if signals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSignal("non-finite training value".into()));
    }
    let q = cfg.sparsity;
    let mut state = State {
        dict: init_dictionary(signals, m, cfg.seed)?,
        codes: Array2::<f64>::zeros((m, n)),
        residual: signals.to_owned(),
        replaced: 0,
    };
    let mut trace: Vec<f64> = Vec::new();
    let none_stale = vec![false; m];

    for sweep in 0..cfg.max_sweeps {
        let prev = trace.last().copied();
        let mut done = false;
        if prev.is_some() {
            let cleared = clearing_candidates(&state.dict, &state.codes);
            if !cleared.is_empty() {
                let (mut trial, stale) = state.with_replaced(&cleared);
                code_columns(signals, &trial.dict, q, &mut trial.codes, &mut trial.residual, true, &stale)?;
                if Some(trial.error()) <= prev {
                    trial.replaced += update_atoms(signals, &mut trial.dict, &mut trial.codes, &mut trial.residual);
                    state = trial;
                    done = true;
                }
            }
        }
        if !done {
            let stalled = match trace.as_slice() {
                [.., a, b] => *a > 0.0 && (a - b) / a < STALL_TOL,
                _ => false,
            };
            let snapshot = stalled.then(|| state.with_replaced(&[weakest_atom(&state.codes)]));
            state.sweep(signals, q, sweep > 0, &none_stale)?;
            if let Some((mut trial, stale)) = snapshot {
                trial.sweep(signals, q, true, &stale)?;
                if trial.error() < state.error() {
                    state = trial;
                }
            }
        }

        let err = state.error();
        log::debug!("ksvd sweep {sweep}: error {err:.6e}");
        trace.push(err);
        if err == 0.0 {
            break;
        }
        if let Some(prev) = prev {
            if prev > 0.0 && (prev - err) / prev < cfg.convergence_tol {
                break;
            }
        }
    }

    let residual_norms = state
        .residual
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .collect();
    Ok(KsvdFit {
        dictionary: state.dict,
        codes: SparseCodes {
            coefficients: state.codes,
            sparsity: q,
            residual_norms,
        },
        error_trace: trace,
        replaced_atoms: state.replaced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn init_is_permutation_when_exhausted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((5, 7), |_| rng.random_range(-1.0..1.0));
        let d = init_dictionary(x.view(), 7, 11).unwrap();
        let mut matched = vec![false; 7];
        for atom in d.atoms().columns() {
            let hit = (0..7).find(|&i| {
                let c = x.column(i);
                let c = &c / c.dot(&c).sqrt();
                !matched[i] && (&c - &atom).iter().all(|v| v.abs() < 1e-12)
            });
            matched[hit.expect("atom is a normalized column")] = true;
        }
        assert_eq!(d, init_dictionary(x.view(), 7, 11).unwrap());
        assert!(matches!(
            init_dictionary(x.view(), 8, 0),
            Err(Error::InsufficientData { needed: 8, available: 7 })
        ));
    }

    #[test]
    fn rank_one_data() {
        let c = ndarray::array![1.0, -2.0, 0.5, 3.0];
        let x = Array2::from_shape_fn((4, 10), |(r, _)| c[r]);
        let cfg = KsvdConfig {
            redundancy: 1.5,
            sparsity: 1,
            max_sweeps: 5,
            ..Default::default()
        };
        let fit = ksvd_learn(x.view(), &cfg).unwrap();
        let unit = &c / c.dot(&c).sqrt();
        let found = fit.dictionary.atoms().columns().into_iter().any(|a| {
            (&a - &unit).iter().all(|v| v.abs() < 1e-9) || (&a + &unit).iter().all(|v| v.abs() < 1e-9)
        });
        assert!(found);
    }

    #[test]
    fn too_few_columns() {
        let x = Array2::<f64>::ones((4, 5));
        let cfg = KsvdConfig {
            redundancy: 2.0,
            sparsity: 1,
            ..Default::default()
        };
        assert!(matches!(
            ksvd_learn(x.view(), &cfg),
            Err(Error::InsufficientData { needed: 8, available: 5 })
        ));
    }
}
