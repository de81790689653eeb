use dasksvd::discriminant::*;
use dasksvd::sparse::{batch_encode, Dictionary};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(seed: u64, k: usize) -> (Dictionary, Vec<Array2<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = Dictionary::new(Array2::from_shape_fn((10, 16), |_| rng.random_range(-1.0..1.0)).view()).unwrap();
    let sets = (0..k)
        .map(|_| {
            let n = rng.random_range(3..20);
            Array2::from_shape_fn((10, n), |_| rng.random_range(-1.0..1.0))
        })
        .collect();
    (dict, sets)
}

#[test]
fn removal_error_matches_direct_resynthesis() {
    for seed in 0..10 {
        let (dict, sets) = random_problem(seed, 3);
        let codes: Vec<_> = sets.iter().map(|x| batch_encode(x.view(), &dict, 3).unwrap()).collect();
        let views: Vec<_> = sets.iter().map(|x| x.view()).collect();
        let stats = compute_stats(&codes, &views, &dict).unwrap();
        for (l, (x, c)) in sets.iter().zip(&codes).enumerate() {
            let n_l = x.ncols() as f64;
            for j in 0..dict.len() {
                let mut a = c.coefficients.clone();
                a.row_mut(j).fill(0.0);
                let e = x - &dict.atoms().dot(&a);
                let direct = e.iter().map(|v| v * v).sum::<f64>() / n_l;
                assert!((stats.removal_error[[l, j]] - direct).abs() <= 1e-8, "class {l} atom {j}");

                let eta = c.coefficients.row(j).iter().filter(|v| **v != 0.0).count();
                assert_eq!(stats.activations[[l, j]], eta);
                assert_eq!(stats.activation_probability[[l, j]], eta as f64 / n_l);
                let q = c.coefficients.row(j).iter().map(|v| v.abs()).sum::<f64>() / n_l;
                assert!((stats.magnitude[[l, j]] - q).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn labeled_split_equals_per_class_stats() {
    let (dict, sets) = random_problem(42, 2);
    let n0 = sets[0].ncols();
    let x = ndarray::concatenate(ndarray::Axis(1), &[sets[0].view(), sets[1].view()]).unwrap();
    let labels: Vec<usize> = (0..x.ncols()).map(|i| usize::from(i >= n0)).collect();
    let all = batch_encode(x.view(), &dict, 2).unwrap();
    let joint = compute_stats_labeled(&all, x.view(), &labels, 2, &dict).unwrap();
    let codes: Vec<_> = sets.iter().map(|s| batch_encode(s.view(), &dict, 2).unwrap()).collect();
    let views: Vec<_> = sets.iter().map(|s| s.view()).collect();
    let split = compute_stats(&codes, &views, &dict).unwrap();
    assert_eq!(joint.activations, split.activations);
    for (a, b) in joint.removal_error.iter().zip(split.removal_error.iter()) {
        assert!((a - b).abs() < 1e-10);
    }
}

fn stats_strategy() -> impl Strategy<Value = ClassStats> {
    (2usize..5, 1usize..6).prop_flat_map(|(k, m)| {
        (
            prop::collection::vec(0.0f64..=1.0, k * m),
            prop::collection::vec(0.0f64..3.0, k * m),
            prop::collection::vec(0.0f64..3.0, k * m),
        )
            .prop_map(move |(p, q, r)| {
                ClassStats::from_parts(
                    Array2::from_shape_vec((k, m), p).unwrap(),
                    Array2::from_shape_vec((k, m), q).unwrap(),
                    Array2::from_shape_vec((k, m), r).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn measures_in_unit_interval(stats in stats_strategy()) {
        for j in 0..stats.n_atoms() {
            let s = score_atom(&stats, j, MeasureWeights::default());
            for v in [s.m_af, s.m_cm, s.m_re, s.m_combined] {
                prop_assert!((0.0..=1.0).contains(&v), "{v}");
            }
            prop_assert_eq!(s.m_cm, s.m_cm_raw.clamp(0.0, 1.0));
            prop_assert_eq!(s.m_re, s.m_re_raw.clamp(0.0, 1.0));
            prop_assert!(s.m_cm_raw <= 1.0 && s.m_re_raw <= 1.0);
        }
    }

    #[test]
    fn winner_has_largest_probability(stats in stats_strategy()) {
        for j in 0..stats.n_atoms() {
            let (w, r, tie) = rank_classes(&stats, j);
            let p = stats.activation_probability.column(j);
            prop_assert_ne!(w, r);
            prop_assert!(p.iter().all(|&v| v <= p[w]));
            prop_assert!(p.iter().enumerate().all(|(c, &v)| c == w || v <= p[r]));
            prop_assert_eq!(tie, p[w] == p[r]);
            // smallest index among the maxima
            prop_assert!(p.iter().take(w).all(|&v| v < p[w]));
        }
    }

    #[test]
    fn combined_is_affine(stats in stats_strategy(), a in 0.0f64..1.0, t in 0.0f64..1.0) {
        let b = (1.0 - a) * t;
        for j in 0..stats.n_atoms() {
            let m = measure_combined(&stats, j, MeasureWeights::new(a, b).unwrap()).unwrap();
            let af = measure_combined(&stats, j, MeasureWeights::new(1.0, 0.0).unwrap()).unwrap();
            let cm = measure_combined(&stats, j, MeasureWeights::new(0.0, 1.0).unwrap()).unwrap();
            let re = measure_combined(&stats, j, MeasureWeights::new(0.0, 0.0).unwrap()).unwrap();
            prop_assert_eq!(af, measure_af(&stats, j));
            prop_assert_eq!(cm, measure_cm(&stats, j));
            prop_assert_eq!(re, measure_re(&stats, j));
            prop_assert!((m - (a * af + b * cm + (1.0 - a - b) * re)).abs() <= 1e-12);
        }
    }
}
