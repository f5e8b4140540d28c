use proptest::prelude::*;
use tdxviz::metrics::{compute_metrics, f1_harmonic, round1, Confusion, MetricsRow, CSV_HEADER};

/// Support-weighted precision and recall by direct counting over the pairs.
fn brute_force(preds: &[usize], labels: &[usize], n: usize) -> (f64, f64, f64) {
    let total = labels.len() as f64;
    let (mut p, mut r) = (0.0, 0.0);
    for c in 0..n {
        let support = labels.iter().filter(|&&l| l == c).count();
        if support == 0 {
            continue;
        }
        let predicted = preds.iter().filter(|&&q| q == c).count();
        let hits = preds.iter().zip(labels).filter(|(q, l)| **q == c && **l == c).count();
        let w = support as f64 / total;
        if predicted > 0 {
            p += w * hits as f64 / predicted as f64;
        }
        r += w * hits as f64 / support as f64;
    }
    let acc = preds.iter().zip(labels).filter(|(q, l)| q == l).count() as f64 / total;
    (acc, p, r)
}

#[test]
fn three_class_example_with_two_errors() {
    let labels = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
    let preds = [0, 0, 0, 1, 1, 1, 1, 0, 2, 2];
    let row = compute_metrics("8", &preds, &labels, 3).unwrap();
    // per class precision 3/4, 3/4, 2/2 weighted by 4/10, 3/10, 3/10
    assert_eq!((row.accuracy, row.precision, row.recall), (80.0, 82.5, 80.0));
    assert_eq!(row.f1, 81.2);
    let (a, p, r) = brute_force(&preds, &labels, 3);
    assert_eq!(row.accuracy, round1(100.0 * a));
    assert_eq!(row.precision, round1(100.0 * p));
    assert_eq!(row.recall, round1(100.0 * r));
    assert_eq!(row.to_csv_line(), "8,80.0,82.5,80.0,81.2");
}

#[test]
fn confusion_counts_rows_by_label() {
    let cm = Confusion::new(&[1, 1, 0], &[0, 1, 0], 2).unwrap();
    assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
    assert_eq!(cm.total(), 3);
}

#[test]
fn invalid_inputs_are_argument_errors() {
    assert!(matches!(Confusion::new(&[0], &[0, 1], 2), Err(tdxviz::Error::Argument(_))));
    assert!(matches!(Confusion::new(&[2], &[0], 2), Err(tdxviz::Error::Argument(_))));
}

#[test]
fn header_is_exact() {
    assert_eq!(CSV_HEADER, "config_key,accuracy,precision,recall,f1");
    let row = MetricsRow::from_percentages("0", 88.44, 88.46, 88.44);
    assert_eq!(row.to_csv_line(), "0,88.4,88.5,88.4,88.4");
}

proptest! {
    #[test]
    fn matches_brute_force(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..80)) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = Confusion::new(&preds, &labels, 4).unwrap();
        let (a, p, r) = brute_force(&preds, &labels, 4);
        prop_assert!((cm.accuracy() - a).abs() <= 1e-12);
        prop_assert!((cm.weighted_precision() - p).abs() <= 1e-12);
        prop_assert!((cm.weighted_recall() - r).abs() <= 1e-12);
        let row = compute_metrics("k", &preds, &labels, 4).unwrap();
        prop_assert_eq!(row.recall, row.accuracy);
        prop_assert!((row.f1 - f1_harmonic(row.precision, row.recall)).abs() <= 0.05 + 1e-9);
    }
}
