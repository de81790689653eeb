use dasksvd::discriminant::MeasureWeights;
use dasksvd::ksvd::KsvdConfig;
use dasksvd::selection::*;
use dasksvd::signal::SegmentMatrix;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let v = Array1::from_shape_fn(n, |_| rng.random_range(-1.0f64..1.0));
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Two classes over `dim`-sample signals. Class c mixes one atom from its own
/// exclusive pair with one atom from a shared set.
struct Planted {
    exclusive: [Vec<Array1<f64>>; 2],
    data: SegmentMatrix,
}

fn planted(seed: u64, dim: usize, per_class: usize) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exclusive = [
        vec![unit(&mut rng, dim), unit(&mut rng, dim)],
        vec![unit(&mut rng, dim), unit(&mut rng, dim)],
    ];
    let shared: Vec<_> = (0..4).map(|_| unit(&mut rng, dim)).collect();
    let n = 2 * per_class;
    let mut x = Array2::zeros((dim, n));
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= per_class)).collect();
    for (i, &c) in labels.iter().enumerate() {
        let own = &exclusive[c][rng.random_range(0..2)];
        let other = &shared[rng.random_range(0..4)];
        let mut col = x.column_mut(i);
        col.scaled_add(rng.random_range(1.0..2.0), own);
        col.scaled_add(rng.random_range(-1.0..1.0), other);
        col.mapv_inplace(|v| v + 0.01 * rng.random_range(-1.0..1.0));
    }
    Planted {
        exclusive,
        data: SegmentMatrix::new(x, labels, 2).unwrap(),
    }
}

fn small_config(iterations: usize) -> DasKsvdConfig {
    DasKsvdConfig {
        ksvd: KsvdConfig {
            redundancy: 1.5,
            sparsity: 2,
            max_sweeps: 20,
            seed: 0,
            convergence_tol: 1e-6,
        },
        iterations,
        per_class_samples: 150,
        keep_factor: 0.5,
        noise_factor: 0.1,
        weights: MeasureWeights::default(),
        seed: 12,
    }
}

#[test]
fn single_iteration_picks_exclusive_atoms() {
    let p = planted(3, 8, 300);
    let out = das_ksvd(&p.data, &small_config(1)).unwrap();
    let s = &out.structured;
    assert_eq!(s.atoms_per_class(), vec![1, 1]);
    for (k, &class) in s.class_of_atom.iter().enumerate() {
        let atom = s.dictionary.atom(k);
        let best = p.exclusive[class]
            .iter()
            .map(|e| e.dot(&atom).abs())
            .fold(0.0, f64::max);
        assert!(best >= 0.9, "class {class} atom correlation {best}");
    }
}

#[test]
fn structure_and_determinism() {
    let p = planted(5, 8, 300);
    let cfg = small_config(4);
    let a = das_ksvd(&p.data, &cfg).unwrap();
    let b = das_ksvd(&p.data, &cfg).unwrap();
    assert_eq!(a.structured, b.structured);
    assert_eq!(a.ksvd_errors, b.ksvd_errors);
    let s = &a.structured;
    assert_eq!(s.dictionary.len(), 8);
    assert_eq!(s.atoms_per_class(), vec![4, 4]);
    // class-blocked and ordered by iteration inside each block
    assert_eq!(s.class_of_atom, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    assert_eq!(s.iteration_of_atom, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    for a in s.dictionary.atoms().columns() {
        assert!((a.dot(&a) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_noise_leaves_segments_untouched() {
    let p = planted(8, 8, 200);
    let mut state = ResampleState::new(p.data.len(), 0.5, 0.0, 1).unwrap();
    for _ in 0..5 {
        let r = sample_data(&p.data, 80, &state).unwrap();
        assert_eq!(r.signals, p.data.select(&r.drawn));
        state = r.next;
    }
}

#[test]
fn first_iteration_is_noise_free_and_later_ones_are_not() {
    let p = planted(9, 8, 200);
    let state = ResampleState::new(p.data.len(), 0.5, 0.2, 1).unwrap();
    let first = sample_data(&p.data, 50, &state).unwrap();
    assert_eq!(first.signals, p.data.select(&first.drawn));
    let second = sample_data(&p.data, 50, &first.next).unwrap();
    assert_ne!(second.signals, p.data.select(&second.drawn));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resampling_keeps_a_distribution(seed in any::<u64>(), tau1 in 0.0f64..1.0, per_class in 1usize..40, steps in 1usize..6) {
        let p = planted(seed, 4, 40);
        let mut state = ResampleState::new(p.data.len(), tau1, 0.1, seed).unwrap();
        for _ in 0..steps {
            let r = sample_data(&p.data, per_class, &state).unwrap();
            prop_assert_eq!(r.drawn.len(), 2 * per_class);
            let mut d = r.drawn.clone();
            d.dedup();
            prop_assert_eq!(d.len(), r.drawn.len());
            for (c, chunk) in r.drawn.chunks(per_class).enumerate() {
                prop_assert!(chunk.iter().all(|&i| p.data.labels()[i] == c));
            }
            let total: f64 = r.next.probabilities.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(r.next.probabilities.iter().all(|&q| q >= 0.0));
            prop_assert_eq!(r.next.iteration, state.iteration + 1);
            state = r.next;
        }
    }
}
