use ndarray::{Array1, ArrayView1, ArrayView2};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dominant left singular vector of `e` (N x s) by power iteration on
/// `e e^T`, started from `start`. Returns the unit vector `u` and the
/// coefficients `e^T u`, i.e. the best rank-one fit `u (e^T u)^T`.
///
/// Starting from the current atom makes the fitted energy `|e^T u|^2`
/// non-decreasing in the iteration count.
pub(crate) fn dominant_singular_pair(
    e: ArrayView2<'_, f64>,
    start: ArrayView1<'_, f64>,
    tol: f64,
    max_iter: usize,
) -> Option<(Array1<f64>, Array1<f64>)> {
    let mut u = start.to_owned();
    let n0 = u.dot(&u).sqrt();
    if n0 == 0.0 {
        return None;
    }
    u /= n0;
    let mut v = e.t().dot(&u);
    if v.dot(&v) == 0.0 {
        // start orthogonal to the range; fall back to the largest column
        let (best, norm) = e
            .columns()
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i, c.dot(&c)))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if norm == 0.0 {
            return None;
        }
        u = e.column(best).to_owned() / norm.sqrt();
        v = e.t().dot(&u);
    }
    for _ in 0..max_iter {
        let mut next = e.dot(&v);
        let nn = next.dot(&next).sqrt();
        if nn == 0.0 {
            break;
        }
        next /= nn;
        let diff = (&next - &u).mapv(|d| d * d).sum().sqrt();
        u = next;
        v = e.t().dot(&u);
        if diff < tol {
            break;
        }
    }
    Some((u, v))
}
