//! Dictionaries and sparsity-constrained coding by orthogonal matching pursuit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};

/// Residual norm at which pursuit stops selecting atoms.
pub const RESIDUAL_FLOOR: f64 = 1e-9;
/// Largest tolerated condition estimate of the selected sub-dictionary.
pub const MAX_CONDITION: f64 = 1e12;
/// Coefficients at or below this magnitude count as inactive.
pub const ACTIVE_EPS: f64 = 1e-12;

/// How atoms are scaled when a dictionary is displayed or exported.
/// Coding always uses unit-l2 atoms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    UnitL2,
    UnitL1,
}

/// An N x M matrix of unit-l2 atoms stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    atoms: Array2<f64>,
    norm_mode: NormMode,
}

impl Dictionary {
    /// Builds a dictionary from raw columns, rescaling each to unit l2 norm.
    pub fn new(atoms: ArrayView2<'_, f64>) -> Result<Self> {
        let (n, m) = atoms.dim();
        if n == 0 || m == 0 {
            return Err(Error::InvalidSignal("empty dictionary".into()));
        }
        let mut owned = Array2::zeros((n, m).f());
        owned.assign(&atoms);
        for (j, mut col) in owned.columns_mut().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::InvalidSignal(format!(
                    "atom {j} is zero or non-finite"
                )));
            }
            col /= norm;
        }
        Ok(Self {
            atoms: owned,
            norm_mode: NormMode::UnitL2,
        })
    }

    pub fn with_norm_mode(mut self, mode: NormMode) -> Self {
        self.norm_mode = mode;
        self
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    /// Unit-l2 atoms, one per column.
    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atom(&self, j: usize) -> ArrayView1<'_, f64> {
        self.atoms.column(j)
    }

    /// Signal length N.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms M.
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    /// Atoms rescaled to the declared norm mode.
    pub fn display_atoms(&self) -> Array2<f64> {
        let mut out = self.atoms.clone();
        if self.norm_mode == NormMode::UnitL1 {
            for mut col in out.columns_mut() {
                let l1: f64 = col.iter().map(|v| v.abs()).sum();
                col /= l1;
            }
        }
        out
    }

    /// Sub-dictionary of the given atoms, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dictionary {
        let mut atoms = Array2::zeros((self.dim(), indices.len()).f());
        for (k, &j) in indices.iter().enumerate() {
            atoms.column_mut(k).assign(&self.atoms.column(j));
        }
        Dictionary {
            atoms,
            norm_mode: self.norm_mode,
        }
    }

    /// Overwrites atom `j` with `values` rescaled to unit l2 norm.
    pub(crate) fn set_atom(&mut self, j: usize, values: ArrayView1<'_, f64>) {
        let norm = values.dot(&values).sqrt();
        debug_assert!(norm > 0.0);
        self.atoms.column_mut(j).assign(&(&values / norm));
    }

    /// Synthesis `Phi a`.
    pub fn synthesize(&self, coefficients: ArrayView1<'_, f64>) -> Array1<f64> {
        self.atoms.dot(&coefficients)
    }
}

/// Coefficients of a batch of signals in one dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCodes {
    /// M x n, one code per column.
    pub coefficients: Array2<f64>,
    pub sparsity: usize,
    pub residual_norms: Vec<f64>,
}

impl SparseCodes {
    pub fn len(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.ncols() == 0
    }

    /// Indices of active atoms in column `i`.
    pub fn support(&self, i: usize) -> Vec<usize> {
        self.coefficients
            .column(i)
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > ACTIVE_EPS)
            .map(|(j, _)| j)
            .collect()
    }

    /// Nonzero entries as (row, col, value).
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, col) in self.coefficients.columns().into_iter().enumerate() {
            for (j, &v) in col.iter().enumerate() {
                if v != 0.0 {
                    out.push((j, i, v));
                }
            }
        }
        out
    }
}

/// Result of encoding one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Pursuit {
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    /// Least-squares coefficients aligned with `support`.
    pub values: Vec<f64>,
    pub residual_norm: f64,
}

impl Pursuit {
    pub fn dense(&self, m: usize) -> Array1<f64> {
        let mut a = Array1::zeros(m);
        for (&j, &v) in self.support.iter().zip(&self.values) {
            a[j] = v;
        }
        a
    }
}

/// OMP over a fixed dictionary with a precomputed Gram matrix.
///
/// Correlations with the residual are `Phi^T x - G[:, S] a_S`; the
/// coefficients on the support come from an incrementally grown QR
/// factorization of the selected atoms (Gram-Schmidt with one
/// re-orthogonalization pass).
pub struct OmpEncoder<'a> {
    dict: &'a Dictionary,
    gram: Array2<f64>,
}

impl<'a> OmpEncoder<'a> {
    pub fn new(dict: &'a Dictionary) -> Self {
        let gram = dict.atoms.t().dot(&dict.atoms);
        Self { dict, gram }
    }

    pub fn encode(&self, x: ArrayView1<'_, f64>, q: usize) -> Result<Pursuit> {
        let n = self.dict.dim();
        let m = self.dict.len();
        if x.len() != n {
            return Err(Error::Shape {
                what: "signal length vs dictionary rows",
                expected: n,
                found: x.len(),
            });
        }
        if q == 0 || q > n {
            return Err(Error::config(format!("sparsity {q} outside [1, {n}]")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal("non-finite sample".into()));
        }
        let x: Vec<f64> = x.iter().copied().collect();
        let budget = q.min(m);

        let proj = self.dict.atoms.t().dot(&ArrayView1::from(x.as_slice()));
        let mut residual = x.clone();
        let mut support: Vec<usize> = Vec::with_capacity(budget);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(budget);
        // r_cols[k][i] = R[i][k] for i <= k
        let mut r_cols: Vec<Vec<f64>> = Vec::with_capacity(budget);
        let mut qtx: Vec<f64> = Vec::with_capacity(budget);
        let mut values: Vec<f64> = Vec::new();
        let mut in_support = vec![false; m];
        let (mut diag_max, mut diag_min) = (0.0_f64, f64::INFINITY);

        while support.len() < budget && norm2(&residual) > RESIDUAL_FLOOR {
            // pick the most correlated unused atom, lowest index on ties
            let mut best: Option<(usize, f64)> = None;
            for j in 0..m {
                if in_support[j] {
                    continue;
                }
                let mut c = proj[j];
                for (&s, &a) in support.iter().zip(&values) {
                    c -= self.gram[[j, s]] * a;
                }
                let c = c.abs();
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((j, c));
                }
            }
            let Some((j, corr)) = best else { break };
            if corr == 0.0 {
                break;
            }

            let atom = self.dict.atom(j);
            let mut w: Vec<f64> = atom.iter().copied().collect();
            let mut rcol = vec![0.0; basis.len() + 1];
            for _ in 0..2 {
                for (i, qv) in basis.iter().enumerate() {
                    let h = dot(qv, &w);
                    rcol[i] += h;
                    w.iter_mut().zip(qv).for_each(|(wv, qq)| *wv -= h * qq);
                }
            }
            let rkk = norm2(&w);
            let new_max = diag_max.max(rkk);
            let new_min = diag_min.min(rkk);
            if rkk <= 0.0 || new_max / new_min > MAX_CONDITION {
                break;
            }
            diag_max = new_max;
            diag_min = new_min;
            w.iter_mut().for_each(|v| *v /= rkk);
            rcol[basis.len()] = rkk;

            qtx.push(dot(&w, &x));
            let h = dot(&w, &residual);
            residual.iter_mut().zip(&w).for_each(|(r, qv)| *r -= h * qv);

            basis.push(w);
            r_cols.push(rcol);
            support.push(j);
            in_support[j] = true;
            values = back_substitute(&r_cols, &qtx);
        }

        let mut recon = vec![0.0; n];
        for (&j, &a) in support.iter().zip(&values) {
            recon
                .iter_mut()
                .zip(self.dict.atom(j))
                .for_each(|(r, p)| *r += a * p);
        }
        let residual_norm = x
            .iter()
            .zip(&recon)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(Pursuit {
            support,
            values,
            residual_norm,
        })
    }
}

/// Solves `R a = b` for upper-triangular `R` given column-wise.
fn back_substitute(r_cols: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let k = b.len();
    let mut a = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = b[i];
        for c in i + 1..k {
            s -= r_cols[c][i] * a[c];
        }
        a[i] = s / r_cols[i][i];
    }
    a
}

/// Encodes a single signal with at most `q` atoms.
pub fn omp_encode(
    x: ArrayView1<'_, f64>,
    dict: &Dictionary,
    q: usize,
) -> Result<(Array1<f64>, f64)> {
    let p = OmpEncoder::new(dict).encode(x, q)?;
    Ok((p.dense(dict.len()), p.residual_norm))
}

/// Column-wise OMP of an N x n signal matrix.
pub fn batch_encode(
    signals: ArrayView2<'_, f64>,
    dict: &Dictionary,
    q: usize,
) -> Result<SparseCodes> {
    if signals.nrows() != dict.dim() {
        return Err(Error::Shape {
            what: "signal rows vs dictionary rows",
            expected: dict.dim(),
            found: signals.nrows(),
        });
    }
    let n = signals.ncols();
    let mut coefficients = Array2::zeros((dict.len(), n));
    let mut residual_norms = Vec::with_capacity(n);
    if n > 0 {
        let encoder = OmpEncoder::new(dict);
        for (i, x) in signals.columns().into_iter().enumerate() {
            let p = encoder.encode(x, q)?;
            for (&j, &v) in p.support.iter().zip(&p.values) {
                coefficients[[j, i]] = v;
            }
            residual_norms.push(p.residual_norm);
        }
    }
    Ok(SparseCodes {
        coefficients,
        sparsity: q,
        residual_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dict(n: usize, m: usize, seed: u64) -> Dictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
        Dictionary::new(a.view()).unwrap()
    }

    #[test]
    fn atoms_are_unit_norm() {
        let d = random_dict(6, 9, 1);
        for col in d.atoms().columns() {
            assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-12);
        }
        let shown = d.clone().with_norm_mode(NormMode::UnitL1).display_atoms();
        for col in shown.columns() {
            assert!((col.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_atom_rejected() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(Dictionary::new(a.view()).is_err());
    }

    #[test]
    fn exact_atom_is_one_hot() {
        let d = random_dict(8, 12, 2);
        for q in 1..4 {
            let (a, res) = omp_encode(d.atom(3), &d, q).unwrap();
            assert!(res < 1e-12);
            assert!((a[3] - 1.0).abs() < 1e-12);
            assert_eq!(a.iter().filter(|v| v.abs() > ACTIVE_EPS).count(), 1);
        }
    }

    #[test]
    fn zero_signal_gives_zero_code() {
        let d = random_dict(8, 12, 3);
        let (a, res) = omp_encode(Array1::zeros(8).view(), &d, 3).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
        assert_eq!(res, 0.0);
    }

    #[test]
    fn non_finite_input_rejected() {
        let d = random_dict(3, 5, 4);
        let x = array![1.0, f64::NAN, 0.0];
        assert!(matches!(
            omp_encode(x.view(), &d, 1),
            Err(Error::InvalidSignal(_))
        ));
    }

    #[test]
    fn duplicate_atoms_stop_early() {
        let a = array![[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
        let d = Dictionary::new(a.view()).unwrap();
        let x = array![2.0, 0.0, 0.0];
        let p = OmpEncoder::new(&d).encode(x.view(), 3).unwrap();
        assert_eq!(p.support, vec![0]);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let d = Dictionary::new(a.view()).unwrap();
        let p = OmpEncoder::new(&d).encode(array![1.0, 1.0].view(), 1).unwrap();
        assert_eq!(p.support, vec![0]);
    }

    #[test]
    fn batch_matches_loop() {
        let d = random_dict(8, 12, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((8, 20), |_| rng.random_range(-1.0..1.0));
        let codes = batch_encode(x.view(), &d, 3).unwrap();
        for i in 0..20 {
            let (a, r) = omp_encode(x.column(i), &d, 3).unwrap();
            assert_eq!(codes.coefficients.column(i), a);
            assert_eq!(codes.residual_norms[i], r);
        }
    }

    #[test]
    fn empty_batch_and_shape_error() {
        let d = random_dict(8, 12, 7);
        let codes = batch_encode(Array2::zeros((8, 0)).view(), &d, 2).unwrap();
        assert!(codes.is_empty());
        assert!(matches!(
            batch_encode(Array2::zeros((7, 3)).view(), &d, 2),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn self_encoding_is_identity() {
        let d = random_dict(8, 6, 8);
        let codes = batch_encode(d.atoms(), &d, 2).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((codes.coefficients[[j, i]] - expected).abs() < 1e-12);
            }
        }
    }
}
