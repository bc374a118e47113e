use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transgnn_core::metrics::Metrics;

#[test]
fn two_class_hand_example() {
    let m = Metrics::from_predictions(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
    assert_eq!(m.accuracy, 2.0 / 3.0);
    // Class 0: P 1, R 1/2. Class 1: P 1/2, R 1. Both F1 = 2/3.
    assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.weighted_f1 - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn constant_prediction_on_balanced_split() {
    let m = Metrics::from_predictions(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert!((m.weighted_f1 - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.per_class[1].precision, 0.0);
}

#[test]
fn single_node_single_class() {
    let m = Metrics::from_predictions(&[0], &[0], 1).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.weighted_f1, 1.0);
}

#[test]
fn weighted_recall_is_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let c = rng.random_range(1..8);
        let mut confusion = vec![vec![0usize; c]; c];
        for row in confusion.iter_mut() {
            for x in row.iter_mut() {
                if rng.random_bool(0.6) {
                    *x = rng.random_range(0..20);
                }
            }
        }
        confusion[0][0] += 1;
        let m = Metrics::from_confusion(&confusion);
        assert!((m.weighted_recall() - m.accuracy).abs() < 1e-12);
        assert!(m.weighted_f1 <= 1.0 && m.weighted_f1 >= 0.0);
    }
}
