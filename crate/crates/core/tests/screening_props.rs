use dasksvd::screening::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability that a positive outscores a negative, ties counted half.
fn mann_whitney(scores: &[f64], positive: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    let mut u = 0.0;
    for &a in &pos {
        for &b in &neg {
            u += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    u / (pos.len() * neg.len()) as f64
}

fn cohort(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=200);
    let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    positive[0] = true;
    positive[1] = false;
    // coarse grid so ties are common
    let scores = positive
        .iter()
        .map(|&p| (rng.random_range(0.0f64..40.0) + if p { 10.0 } else { 0.0 }).round() / 2.0)
        .collect();
    (scores, positive)
}

#[test]
fn auc_equals_mann_whitney() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let (s, p) = cohort(&mut rng);
        let curve = roc(&s, &p).unwrap();
        assert!((curve.auc - mann_whitney(&s, &p)).abs() <= 1e-9);
    }
}

#[test]
fn optimal_point_agrees_with_confusion_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let (s, p) = cohort(&mut rng);
        let curve = roc(&s, &p).unwrap();
        let cm = confusion_at(&s, &p, curve.optimal.threshold).unwrap();
        let m = cm.metrics().unwrap();
        assert!((m.per_class[1].sensitivity - curve.optimal.sensitivity).abs() < 1e-12);
        assert!((m.per_class[1].specificity - curve.optimal.specificity).abs() < 1e-12);
        let j = curve.optimal.sensitivity + curve.optimal.specificity;
        assert!(curve.points.iter().all(|q| q.sensitivity + q.specificity <= j));
    }
}

#[test]
fn severity_band_edges() {
    assert_eq!(severity(0.0).unwrap(), Severity::Normal);
    assert_eq!(severity(4.999).unwrap(), Severity::Normal);
    assert_eq!(severity(5.0).unwrap(), Severity::Mild);
    assert_eq!(severity(15.0).unwrap(), Severity::Moderate);
    assert_eq!(severity(30.0).unwrap(), Severity::Severe);
    assert!(severity(-1.0).is_err());
    // verdict is strict
    assert!(!screen("r", &[1; 15], 1.0, 15.0).unwrap().verdict);
    assert!(screen("r", &[1; 16], 1.0, 15.0).unwrap().verdict);
}

proptest! {
    #[test]
    fn roc_curve_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, p) = cohort(&mut rng);
        let curve = roc(&s, &p).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!((first.sensitivity, first.specificity), (1.0, 0.0));
        prop_assert_eq!((last.sensitivity, last.specificity), (0.0, 1.0));
        for w in curve.points.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[1].sensitivity <= w[0].sensitivity);
            prop_assert!(w[1].specificity >= w[0].specificity);
        }
        prop_assert!((0.0..=1.0).contains(&curve.auc));
    }

    #[test]
    fn auc_invariant_under_monotone_transform(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, p) = cohort(&mut rng);
        let t: Vec<f64> = s.iter().map(|v| (v * 0.3).exp() + 7.0).collect();
        prop_assert!((roc(&s, &p).unwrap().auc - roc(&t, &p).unwrap().auc).abs() <= 1e-12);
        // flipping scores mirrors the AUC
        let f: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc(&f, &p).unwrap().auc - (1.0 - roc(&s, &p).unwrap().auc)).abs() <= 1e-12);
    }

    #[test]
    fn ahi_counts_nonzero_predictions(preds in prop::collection::vec(0usize..3, 0..500), hours in 0.5f64..10.0) {
        let events = preds.iter().filter(|&&c| c != 0).count() as f64;
        prop_assert_eq!(estimate_ahi(&preds, hours).unwrap(), events / hours);
    }

    #[test]
    fn confusion_rows_sum_to_class_sizes(known in prop::collection::vec(0usize..3, 1..200), shift in 0usize..3) {
        let predicted: Vec<usize> = known.iter().enumerate().map(|(i, &k)| if i % 3 == 0 { (k + shift) % 3 } else { k }).collect();
        let cm = ConfusionMatrix::from_labels(&known, &predicted, 3).unwrap();
        for c in 0..3 {
            let size = known.iter().filter(|&&k| k == c).count() as u64;
            prop_assert_eq!(cm.counts.row(c).sum(), size);
        }
        let norm = cm.normalized();
        for c in 0..3 {
            let row: f64 = norm.row(c).sum();
            prop_assert!(row == 0.0 || (row - 100.0).abs() < 1e-9);
        }
    }
}
