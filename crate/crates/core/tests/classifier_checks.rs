use dasksvd::classifier::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Max over components of |analytic - numeric| / max(|analytic|, |numeric|),
/// components where both are below `floor` compared absolutely.
fn gradient_relative_error(dims: MlpDims, theta: &[f64], x: &Array2<f64>, t: &Array2<f64>) -> f64 {
    let (_, g) = mse_gradient(dims, theta, x.view(), t.view());
    let h = 1e-5;
    let floor = 1e-7;
    let mut worst: f64 = 0.0;
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let fp = mse(dims, &probe, x.view(), t.view());
        probe[i] = theta[i] - h;
        let fm = mse(dims, &probe, x.view(), t.view());
        probe[i] = theta[i];
        let num = (fp - fm) / (2.0 * h);
        let scale = g[i].abs().max(num.abs());
        let err = if scale < floor { (g[i] - num).abs() } else { (g[i] - num).abs() / scale };
        worst = worst.max(err);
    }
    worst
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let dims = MlpDims {
        input: 5,
        hidden: 7,
        output: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for point in 0..20 {
        let theta: Vec<f64> = (0..dims.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_fn((12, 5), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..12).map(|i| (i + point) % 3).collect();
        let t = one_hot(&labels, 3);
        worst = worst.max(gradient_relative_error(dims, &theta, &x, &t));
    }
    assert!(worst <= 1e-5, "max relative error {worst:e}");
}

fn two_gaussians(seed: u64, n: usize) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, c)| {
        let centre = if labels[i] == 0 { -1.0 } else { 1.0 };
        centre * if c == 0 { 1.0 } else { 0.5 } + noise.sample(&mut rng)
    });
    (x, labels)
}

/// Logistic regression by plain gradient descent: the linear-boundary oracle.
fn logistic_accuracy(x: &Array2<f64>, y: &[usize], xt: &Array2<f64>, yt: &[usize]) -> f64 {
    let mut w = [0.0; 3];
    for _ in 0..3000 {
        let mut g = [0.0; 3];
        for (row, &label) in x.rows().into_iter().zip(y) {
            let z = w[0] + w[1] * row[0] + w[2] * row[1];
            let p = 1.0 / (1.0 + (-z).exp());
            let d = p - label as f64;
            g[0] += d;
            g[1] += d * row[0];
            g[2] += d * row[1];
        }
        for k in 0..3 {
            w[k] -= 0.5 * g[k] / x.nrows() as f64;
        }
    }
    let hits = xt
        .rows()
        .into_iter()
        .zip(yt)
        .filter(|(r, &l)| usize::from(w[0] + w[1] * r[0] + w[2] * r[1] > 0.0) == l)
        .count();
    hits as f64 / yt.len() as f64
}

#[test]
fn toy_problem_close_to_logistic_oracle() {
    let (x, y) = two_gaussians(1, 400);
    let (xv, yv) = two_gaussians(2, 200);
    let (xt, yt) = two_gaussians(3, 2000);
    let cfg = MlpConfig {
        hidden: 10,
        max_epochs: 200,
        patience: 20,
        seed: 5,
    };
    let (model, report) = train(x.view(), one_hot(&y, 2).view(), xv.view(), one_hot(&yv, 2).view(), &cfg).unwrap();
    let (pred, _) = predict(&model, xt.view()).unwrap();
    let acc = pred.iter().zip(&yt).filter(|(a, b)| a == b).count() as f64 / yt.len() as f64;
    let oracle = logistic_accuracy(&x, &y, &xt, &yt);
    assert!(acc >= oracle - 0.03, "mlp {acc} vs logistic {oracle}");
    assert!(report.train_mse.last().unwrap() < &report.train_mse[0]);
}

#[test]
fn training_is_deterministic_and_returns_best_validation() {
    let (x, y) = two_gaussians(8, 120);
    let (xv, yv) = two_gaussians(9, 60);
    let cfg = MlpConfig {
        hidden: 6,
        max_epochs: 40,
        patience: 5,
        seed: 3,
    };
    let run = || train(x.view(), one_hot(&y, 2).view(), xv.view(), one_hot(&yv, 2).view(), &cfg).unwrap();
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);
    let best = r1.validation_mse.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(r1.validation_mse[r1.best_epoch], best);
    // the returned network reproduces the best validation error
    let xs = (&xv - &ndarray::ArrayView1::from(m1.input_mean.as_slice()))
        / &ndarray::ArrayView1::from(m1.input_scale.as_slice());
    let v = mse(m1.dims, &m1.params, xs.view(), one_hot(&yv, 2).view());
    assert!((v - best).abs() < 1e-12);
}
