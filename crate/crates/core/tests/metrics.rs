mod common;

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use ssmixnet::metrics::{confusion, ConfusionMatrix};

fn random_rows(r: &mut impl Rng) -> Vec<Vec<u64>> {
    let k = r.gen_range(2..=12);
    let mut rows: Vec<Vec<u64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let hi = if i == j { 200 } else { 30 };
                    if r.gen_bool(0.2) {
                        0
                    } else {
                        r.gen_range(0..hi)
                    }
                })
                .collect()
        })
        .collect();
    rows[0][0] += 1;
    rows
}

#[test]
fn random_matrices_match_direct_formulas() {
    let mut r = rng(600);
    for _ in 0..1000 {
        let rows = random_rows(&mut r);
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        let (oa, aa, kappa) = direct_metrics(&rows);
        let s = m.summary().unwrap();
        assert!((s.oa - oa).abs() < 1e-12);
        assert!((s.aa - aa).abs() < 1e-12);
        assert!((s.kappa - kappa).abs() < 1e-12);
        assert!(s.kappa <= s.oa + 1e-12);
    }
}

#[test]
fn relabelling_classes_leaves_metrics_unchanged() {
    let mut r = rng(601);
    for _ in 0..200 {
        let rows = random_rows(&mut r);
        let k = rows.len();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let mut permuted = vec![vec![0u64; k]; k];
        for i in 0..k {
            for j in 0..k {
                permuted[perm[i]][perm[j]] = rows[i][j];
            }
        }
        let a = ConfusionMatrix::from_rows(&rows).unwrap().summary().unwrap();
        let b = ConfusionMatrix::from_rows(&permuted).unwrap().summary().unwrap();
        assert!((a.oa - b.oa).abs() < 1e-12);
        assert!((a.aa - b.aa).abs() < 1e-12);
        assert!((a.kappa - b.kappa).abs() < 1e-12);
        for i in 0..k {
            assert_eq!(a.per_class[i], b.per_class[perm[i]]);
        }
    }
}

#[test]
fn confusion_counts_each_pair() {
    let mut r = rng(602);
    for _ in 0..50 {
        let k = r.gen_range(1..8);
        let n = r.gen_range(0..300);
        let truth: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let m = confusion(&truth, &pred, k).unwrap();
        for t in 0..k {
            for p in 0..k {
                let count = truth.iter().zip(&pred).filter(|&(&a, &b)| a == t && b == p).count();
                assert_eq!(m.get(t, p), count as u64);
            }
        }
        assert_eq!(m.total(), n as u64);
        assert_eq!(m.trace(), truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as u64);
    }
    assert!(confusion(&[0, 1], &[0], 2).is_err());
    assert!(confusion(&[0, 2], &[0, 1], 2).is_err());
}

#[test]
fn absent_classes_are_skipped_in_average_accuracy() {
    let m = ConfusionMatrix::from_rows(&[vec![3, 1, 0], vec![0, 0, 0], vec![1, 0, 4]]).unwrap();
    let s = m.summary().unwrap();
    assert_eq!(s.per_class, vec![Some(0.75), None, Some(0.8)]);
    assert!((s.aa - 0.775).abs() < 1e-12);
    let csv = s.to_csv();
    assert!(csv.starts_with("metric,value\noa,"));
    assert!(csv.contains("\nclass_2_acc,\n"));
    assert!(csv.ends_with("class_3_acc,0.8\n"));
}

#[test]
fn degenerate_matrices() {
    assert!(ConfusionMatrix::zeros(3).summary().is_err());
    let single = ConfusionMatrix::from_rows(&[vec![5, 0], vec![0, 0]]).unwrap();
    assert_eq!(single.chance_agreement().unwrap(), 1.0);
    assert_eq!(single.kappa().unwrap(), 0.0);
    assert_eq!(single.overall_accuracy().unwrap(), 1.0);
}
