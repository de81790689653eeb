//! Class-conditional atom statistics and discriminability measures.
//!
//! For atom `j` and class `l` with `n_l` signals:
//!
//! - `p[l][j]`: fraction of class-`l` codes in which atom `j` is active
//! - `q[l][j]`: l1 norm of row `j` of the class-`l` codes over `n_l`
//! - `r[l][j]`: squared Frobenius error of class `l` with atom `j` removed, over `n_l`
//!
//! Classes are ranked per atom by `p`: the winner `l+` has the largest
//! activation probability and the runner-up `l*` the second largest.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{Dictionary, SparseCodes, ACTIVE_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    /// eta[l][j]: number of class-l codes using atom j.
    pub activations: Array2<usize>,
    pub class_sizes: Vec<usize>,
    pub activation_probability: Array2<f64>,
    pub magnitude: Array2<f64>,
    pub removal_error: Array2<f64>,
}

impl ClassStats {
    pub fn n_classes(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.activation_probability.ncols()
    }

    /// Stats from hand-set per-class values, mainly for tests and replay.
    pub fn from_parts(
        activation_probability: Array2<f64>,
        magnitude: Array2<f64>,
        removal_error: Array2<f64>,
    ) -> Self {
        let k = activation_probability.nrows();
        let m = activation_probability.ncols();
        Self {
            activations: Array2::zeros((k, m)),
            class_sizes: vec![0; k],
            activation_probability,
            magnitude,
            removal_error,
        }
    }
}

/// Computes p, q and r for every class and atom.
///
/// The removal error uses `E = R + phi_j a_j` where `R` is the full
/// residual, so `|E|^2 = |R|^2 + 2 a_j^T R^T phi_j + |a_j|^2`.
pub fn compute_stats(
    codes_by_class: &[SparseCodes],
    signals_by_class: &[ArrayView2<'_, f64>],
    dict: &Dictionary,
) -> Result<ClassStats> {
    let k = codes_by_class.len();
    if signals_by_class.len() != k {
        return Err(Error::Shape {
            what: "classes of codes vs signals",
            expected: k,
            found: signals_by_class.len(),
        });
    }
    let m = dict.len();
    let mut activations = Array2::<usize>::zeros((k, m));
    let mut p = Array2::zeros((k, m));
    let mut q = Array2::zeros((k, m));
    let mut r = Array2::zeros((k, m));
    let mut sizes = Vec::with_capacity(k);

    for (l, (codes, x)) in codes_by_class.iter().zip(signals_by_class).enumerate() {
        let n_l = codes.len();
        if n_l == 0 {
            return Err(Error::EmptyClass(l));
        }
        if x.ncols() != n_l || codes.coefficients.nrows() != m || x.nrows() != dict.dim() {
            return Err(Error::Shape {
                what: "class codes vs signals",
                expected: n_l,
                found: x.ncols(),
            });
        }
        sizes.push(n_l);
        let a = &codes.coefficients;
        let residual = x.to_owned() - dict.atoms().dot(a);
        let total: f64 = residual.iter().map(|v| v * v).sum();
        // phi_j^T R, M x n_l
        let corr = dict.atoms().t().dot(&residual);
        let nf = n_l as f64;
        for j in 0..m {
            let row = a.row(j);
            let eta = row.iter().filter(|v| v.abs() > ACTIVE_EPS).count();
            activations[[l, j]] = eta;
            p[[l, j]] = eta as f64 / nf;
            q[[l, j]] = row.iter().map(|v| v.abs()).sum::<f64>() / nf;
            let cross: f64 = row.iter().zip(corr.row(j)).map(|(a, c)| a * c).sum();
            let own: f64 = row.iter().map(|v| v * v).sum();
            r[[l, j]] = (total + 2.0 * cross + own).max(0.0) / nf;
        }
    }
    Ok(ClassStats {
        activations,
        class_sizes: sizes,
        activation_probability: p,
        magnitude: q,
        removal_error: r,
    })
}

/// Splits codes and signals by label, then calls [`compute_stats`].
pub fn compute_stats_labeled(
    codes: &SparseCodes,
    signals: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    dict: &Dictionary,
) -> Result<ClassStats> {
    let mut codes_by_class = Vec::with_capacity(n_classes);
    let mut signals_by_class = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        codes_by_class.push(SparseCodes {
            coefficients: codes.coefficients.select(ndarray::Axis(1), &idx),
            sparsity: codes.sparsity,
            residual_norms: idx.iter().map(|&i| codes.residual_norms[i]).collect(),
        });
        signals_by_class.push(signals.select(ndarray::Axis(1), &idx));
    }
    let views: Vec<_> = signals_by_class.iter().map(|s| s.view()).collect();
    compute_stats(&codes_by_class, &views, dict)
}

/// Winner and runner-up classes of atom `j` by activation probability,
/// smallest index on ties. The flag reports a tie at the top.
pub fn rank_classes(stats: &ClassStats, j: usize) -> (usize, usize, bool) {
    let p = stats.activation_probability.column(j);
    let mut order: Vec<usize> = (0..p.len()).collect();
    // stable sort keeps the smaller index first among equals
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let (winner, runner_up) = (order[0], order[1]);
    (winner, runner_up, p[winner] == p[runner_up])
}

fn relative_drop(top: f64, other: f64) -> f64 {
    if top == 0.0 {
        0.0
    } else {
        (top - other) / top
    }
}

/// Activation-frequency measure `(p[l+] - p[l*]) / p[l+]`.
pub fn measure_af(stats: &ClassStats, j: usize) -> f64 {
    let (w, s, _) = rank_classes(stats, j);
    let p = &stats.activation_probability;
    relative_drop(p[[w, j]], p[[s, j]])
}

/// Coefficient-magnitude measure before clamping; may be negative.
pub fn measure_cm_raw(stats: &ClassStats, j: usize) -> f64 {
    let (w, s, _) = rank_classes(stats, j);
    let q = &stats.magnitude;
    relative_drop(q[[w, j]], q[[s, j]])
}

/// `(q[l+] - q[l*]) / q[l+]` clamped to [0, 1].
pub fn measure_cm(stats: &ClassStats, j: usize) -> f64 {
    measure_cm_raw(stats, j).clamp(0.0, 1.0)
}

/// Representation-error measure before clamping; may be negative.
pub fn measure_re_raw(stats: &ClassStats, j: usize) -> f64 {
    let (w, s, _) = rank_classes(stats, j);
    let r = &stats.removal_error;
    relative_drop(r[[s, j]], r[[w, j]])
}

/// `(r[l*] - r[l+]) / r[l*]` clamped to [0, 1].
pub fn measure_re(stats: &ClassStats, j: usize) -> f64 {
    measure_re_raw(stats, j).clamp(0.0, 1.0)
}

/// Convex weights of the combined measure: `alpha` on m_af, `beta` on
/// m_cm and the rest on m_re.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl MeasureWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "measure weights need alpha, beta >= 0 and alpha + beta <= 1 (got {}, {})",
                self.alpha, self.beta
            )))
        }
    }

    pub fn combine(&self, af: f64, cm: f64, re: f64) -> f64 {
        self.alpha * af + self.beta * cm + (1.0 - self.alpha - self.beta) * re
    }
}

impl Default for MeasureWeights {
    fn default() -> Self {
        Self {
            alpha: 0.33,
            beta: 0.17,
        }
    }
}

pub fn measure_combined(stats: &ClassStats, j: usize, weights: MeasureWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.combine(
        measure_af(stats, j),
        measure_cm(stats, j),
        measure_re(stats, j),
    ))
}

/// Binary score `|p[0][j] - p[1][j]|`.
pub fn dcaf(stats: &ClassStats, j: usize) -> Result<f64> {
    if stats.n_classes() != 2 {
        return Err(Error::BinaryOnly(stats.n_classes()));
    }
    let p = &stats.activation_probability;
    Ok((p[[0, j]] - p[[1, j]]).abs())
}

/// Discriminability record for one atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomScore {
    pub atom: usize,
    pub winner: usize,
    pub runner_up: usize,
    pub winner_tie: bool,
    pub m_af: f64,
    pub m_cm: f64,
    pub m_re: f64,
    pub m_combined: f64,
    pub m_cm_raw: f64,
    pub m_re_raw: f64,
}

pub fn score_atom(stats: &ClassStats, j: usize, weights: MeasureWeights) -> AtomScore {
    let (winner, runner_up, winner_tie) = rank_classes(stats, j);
    let m_af = measure_af(stats, j);
    let m_cm_raw = measure_cm_raw(stats, j);
    let m_re_raw = measure_re_raw(stats, j);
    let m_cm = m_cm_raw.clamp(0.0, 1.0);
    let m_re = m_re_raw.clamp(0.0, 1.0);
    AtomScore {
        atom: j,
        winner,
        runner_up,
        winner_tie,
        m_af,
        m_cm,
        m_re,
        m_combined: weights.combine(m_af, m_cm, m_re),
        m_cm_raw,
        m_re_raw,
    }
}

pub fn score_atoms(stats: &ClassStats, weights: MeasureWeights) -> Result<Vec<AtomScore>> {
    weights.validate()?;
    Ok((0..stats.n_atoms())
        .map(|j| score_atom(stats, j, weights))
        .collect())
}

/// Simplex grid `{(i*step, k*step) : i*step + k*step <= 1}` in
/// lexicographic order of (alpha, beta).
pub fn alpha_beta_grid(step: f64) -> Vec<(f64, f64)> {
    assert!(step > 0.0, "grid step must be positive");
    let count = (1.0 / step + 1e-9).floor() as usize;
    let mut out = Vec::new();
    for i in 0..=count {
        for k in 0..=count - i {
            let (a, b) = (i as f64 * step, k as f64 * step);
            if a + b <= 1.0 + 1e-9 {
                out.push((a, b));
            }
        }
    }
    out
}

/// Maximizes `evaluate(alpha, beta)` over the simplex grid; ties go to the
/// smaller alpha, then the smaller beta.
pub fn grid_search_alpha_beta<F>(step: f64, mut evaluate: F) -> (f64, f64)
where
    F: FnMut(f64, f64) -> f64,
{
    let mut best = (0.0, 0.0);
    let mut best_score = f64::NEG_INFINITY;
    for (a, b) in alpha_beta_grid(step) {
        let s = evaluate(a, b);
        if s > best_score {
            best_score = s;
            best = (a, b);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn stats_p(p: &[f64]) -> ClassStats {
        let k = p.len();
        let p = Array2::from_shape_vec((k, 1), p.to_vec()).unwrap();
        ClassStats::from_parts(p.clone(), p.clone(), Array2::ones((k, 1)))
    }

    fn stats_full(p: &[f64], q: &[f64], r: &[f64]) -> ClassStats {
        let col = |v: &[f64]| Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap();
        ClassStats::from_parts(col(p), col(q), col(r))
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_classes(&stats_p(&[1.0, 0.5, 0.25, 0.25]), 0), (0, 1, false));
        assert_eq!(rank_classes(&stats_p(&[0.4, 0.4, 0.1]), 0), (0, 1, true));
        assert_eq!(rank_classes(&stats_p(&[0.0, 0.0, 0.0]), 0), (0, 1, true));
        assert_eq!(rank_classes(&stats_p(&[0.25, 0.5, 1.0, 0.25]), 0), (2, 1, false));
    }

    #[test]
    fn af_examples() {
        // four classes, l+ = 3, l* = 2 (1-based)
        assert_eq!(measure_af(&stats_p(&[0.25, 0.5, 1.0, 0.0]), 0), 0.5);
        assert_eq!(measure_af(&stats_p(&[0.6, 0.6]), 0), 0.0);
        assert_eq!(measure_af(&stats_p(&[0.8, 0.0, 0.0]), 0), 1.0);
        assert_eq!(measure_af(&stats_p(&[0.0, 0.0, 0.0]), 0), 0.0);
    }

    #[test]
    fn cm_examples() {
        let s = |q: [f64; 2]| stats_full(&[0.9, 0.1], &q, &[1.0, 1.0]);
        assert_eq!(measure_cm(&s([2.0, 1.0]), 0), 0.5);
        assert_eq!(measure_cm(&s([1.0, 1.0]), 0), 0.0);
        assert_eq!(measure_cm_raw(&s([1.0, 1.5]), 0), -0.5);
        assert_eq!(measure_cm(&s([1.0, 1.5]), 0), 0.0);
        assert_eq!(measure_cm(&s([0.0, 0.0]), 0), 0.0);
    }

    #[test]
    fn re_examples() {
        let s = |r: [f64; 2]| stats_full(&[0.9, 0.1], &[1.0, 1.0], &r);
        assert_eq!(measure_re(&s([1.0, 4.0]), 0), 0.75);
        assert_eq!(measure_re(&s([2.0, 2.0]), 0), 0.0);
        assert_eq!(measure_re_raw(&s([2.0, 1.0]), 0), -1.0);
        assert_eq!(measure_re(&s([2.0, 1.0]), 0), 0.0);
        assert_eq!(measure_re(&s([0.0, 0.0]), 0), 0.0);
    }

    #[test]
    fn combined_vertices_and_value() {
        let s = stats_full(&[1.0, 0.5], &[2.0, 1.6], &[1.0, 1.25]);
        let (af, cm, re) = (measure_af(&s, 0), measure_cm(&s, 0), measure_re(&s, 0));
        assert_eq!(measure_combined(&s, 0, MeasureWeights::new(1.0, 0.0).unwrap()).unwrap(), af);
        assert_eq!(measure_combined(&s, 0, MeasureWeights::new(0.0, 1.0).unwrap()).unwrap(), cm);
        assert_eq!(measure_combined(&s, 0, MeasureWeights::new(0.0, 0.0).unwrap()).unwrap(), re);
        let w = MeasureWeights::new(0.33, 0.17).unwrap();
        // 0.33*0.5 + 0.17*0.2 + 0.5*0.1 = 0.165 + 0.034 + 0.05
        assert!((w.combine(0.5, 0.2, 0.1) - 0.249).abs() < 1e-15);
    }

    #[test]
    fn weight_domain() {
        assert!(MeasureWeights::new(0.6, 0.5).is_err());
        assert!(MeasureWeights::new(-0.1, 0.5).is_err());
        let s = stats_p(&[1.0, 0.0]);
        assert!(matches!(
            measure_combined(&s, 0, MeasureWeights { alpha: 0.9, beta: 0.2 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dcaf_examples() {
        assert_eq!(dcaf(&stats_p(&[1.0, 0.0]), 0).unwrap(), 1.0);
        assert_eq!(dcaf(&stats_p(&[0.7, 0.7]), 0).unwrap(), 0.0);
        assert!((dcaf(&stats_p(&[0.9, 0.2]), 0).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(dcaf(&stats_p(&[0.9, 0.2, 0.1]), 0), Err(Error::BinaryOnly(3))));
    }

    #[test]
    fn grid_examples() {
        assert_eq!(grid_search_alpha_beta(0.1, |_, _| 1.0), (0.0, 0.0));
        let g = alpha_beta_grid(0.5);
        assert_eq!(
            g,
            vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 0.0), (0.5, 0.5), (1.0, 0.0)]
        );
        let (a, b) = grid_search_alpha_beta(0.01, |a, b| -(a - 0.33).powi(2) - (b - 0.17).powi(2));
        // brute-force argmax over the same grid
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=100 {
            for k in 0..=(100 - i) {
                let (x, y) = (i as f64 / 100.0, k as f64 / 100.0);
                let s = -(x - 0.33).powi(2) - (y - 0.17).powi(2);
                if s > best.0 {
                    best = (s, x, y);
                }
            }
        }
        assert!((a - best.1).abs() < 1e-12 && (b - best.2).abs() < 1e-12);
        assert!((a - 0.33).abs() < 1e-12 && (b - 0.17).abs() < 1e-12);
    }

    #[test]
    fn empty_class_rejected() {
        let d = Dictionary::new(array![[1.0, 0.0], [0.0, 1.0]].view()).unwrap();
        let empty = SparseCodes {
            coefficients: Array2::zeros((2, 0)),
            sparsity: 1,
            residual_norms: vec![],
        };
        let x = Array2::<f64>::zeros((2, 0));
        assert!(matches!(
            compute_stats(&[empty], &[x.view()], &d),
            Err(Error::EmptyClass(0))
        ));
    }
}
