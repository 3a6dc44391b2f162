use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::autodiff::Tensor;
use crate::error::Error;

const PRIORS: [f64; 4] = [0.309, 0.199, 0.296, 0.196];

fn random_labels(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<usize> {
    (0..m).map(|_| rng.random_range(0..n)).collect()
}

#[test]
fn identity_predictions_give_identity_matrix() {
    let labels = [0, 1, 2, 3, 2, 1];
    let cm = confusion_matrix(&labels, &labels, 4).unwrap();
    for t in 0..4 {
        for p in 0..4 {
            assert_eq!(cm.normalized_row(t)[p], if t == p { 1.0 } else { 0.0 });
        }
    }
    assert_eq!(ua(&cm).unwrap(), 1.0);
    assert_eq!(wa(&labels, &labels).unwrap(), 1.0);
}

#[test]
fn constant_prediction_fills_one_column() {
    let labels = [0, 1, 2, 3, 3];
    let cm = confusion_matrix(&[0; 5], &labels, 4).unwrap();
    for t in 0..4 {
        assert_eq!(cm.normalized_row(t), &[1.0, 0.0, 0.0, 0.0]);
    }
}

#[test]
fn confusion_matches_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels = random_labels(&mut rng, 1000, 4);
    let preds = random_labels(&mut rng, 1000, 4);
    let cm = confusion_matrix(&preds, &labels, 4).unwrap();
    for t in 0..4 {
        for p in 0..4 {
            let brute = (0..1000)
                .filter(|&i| labels[i] == t && preds[i] == p)
                .count() as u64;
            assert_eq!(cm.count(t, p), brute);
        }
        assert!((cm.normalized_row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn out_of_range_and_empty_class_errors() {
    assert!(matches!(
        confusion_matrix(&[4], &[0], 4),
        Err(Error::LabelOutOfRange { label: 4, .. })
    ));
    let cm = confusion_matrix(&[0, 1], &[0, 1], 3).unwrap();
    assert!(cm.is_empty_row(2));
    assert_eq!(cm.normalized_row(2), &[0.0, 0.0, 0.0]);
    assert!(matches!(ua(&cm), Err(Error::EmptyClass(2))));
}

#[test]
fn published_table_diagonals() {
    let cases = [
        ([0.575, 0.691, 0.511, 0.776], 0.6380, 0.6183),
        ([0.637, 0.705, 0.556, 0.777], 0.6686, 0.6540),
        ([0.544, 0.681, 0.476, 0.737], 0.6098, 0.5893),
        ([0.573, 0.720, 0.518, 0.793], 0.6513, 0.6296),
    ];
    for (diag, reported_ua, reported_wa) in cases {
        assert!((ua_from_diagonal(&diag) - reported_ua).abs() <= 0.001);
        assert!((wa_from_diagonal(&diag, &PRIORS) - reported_wa).abs() <= 0.001);
    }
    assert!((ua_from_diagonal(&cases[0].0) - 0.63825).abs() < 1e-12);
    assert!((ua_from_diagonal(&cases[3].0) - 0.651).abs() < 1e-12);
    assert!((wa_from_diagonal(&cases[1].0, &PRIORS) - 0.653996).abs() < 1e-9);
}

#[test]
fn averaging_normalized_matrices() {
    let a = confusion_matrix(&[0, 1, 1, 0], &[0, 0, 1, 1], 2).unwrap();
    assert_eq!(average_confusion(std::slice::from_ref(&a)).unwrap(), a);
    assert_eq!(
        average_confusion(&[a.clone(), a.clone()])
            .unwrap()
            .normalized(),
        a.normalized()
    );
    let b = confusion_matrix(&[0, 0, 0, 1, 1, 1], &[0, 0, 0, 0, 1, 1], 2).unwrap();
    let avg = average_confusion(&[a, b]).unwrap();
    assert!((avg.normalized_row(0)[0] - (0.5 + 0.75) / 2.0).abs() < 1e-12);
    assert!((avg.normalized_row(1)[1] - (0.5 + 1.0) / 2.0).abs() < 1e-12);
    assert_eq!(avg.count(0, 0), 4);
    assert!(average_confusion(&[]).is_err());
}

#[test]
fn cv_split_sizes_on_balanced_set() {
    let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
    let folds = cv_splits(&labels, 4, 1).unwrap();
    assert_eq!(folds.len(), 5);
    for fold in &folds {
        assert_eq!(fold.train.len(), 80);
        assert_eq!(fold.dev.len(), 10);
        assert_eq!(fold.test.len(), 10);
        let mut all: Vec<usize> = fold
            .train
            .iter()
            .chain(&fold.dev)
            .chain(&fold.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
    let subsets = stratified_subsets(&labels, 4, 1).unwrap();
    for s in &subsets {
        for c in 0..4 {
            assert_eq!(s.iter().filter(|&&i| labels[i] == c).count(), 5);
        }
    }
    // every index is tested exactly once over the five folds
    let mut held: Vec<usize> = folds
        .iter()
        .flat_map(|f| f.dev.iter().chain(&f.test))
        .copied()
        .collect();
    held.sort_unstable();
    assert_eq!(held, (0..100).collect::<Vec<_>>());
    assert_eq!(cv_splits(&labels, 4, 1).unwrap(), folds);
    assert_ne!(cv_splits(&labels, 4, 2).unwrap(), folds);
}

#[test]
fn cv_rejects_small_classes() {
    let mut labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    labels.extend([2; 9]);
    assert!(matches!(
        cv_splits(&labels, 3, 0),
        Err(Error::ClassTooSmall {
            class: 2,
            count: 9,
            needed: 10
        })
    ));
    assert!(matches!(
        cv_splits(&labels, 4, 0),
        Err(Error::ClassTooSmall { class: 2, .. })
    ));
}

#[test]
fn pca_of_points_on_a_line() {
    let dir = [0.3, -0.5, 0.8, 0.1];
    let m = 30;
    let data: Vec<f64> = (0..m)
        .flat_map(|i| dir.iter().map(move |d| 2.0 + d * (i as f64 - 7.0)))
        .collect();
    let pca = pca_embed(&Tensor::matrix(m, 4, data), 2).unwrap();
    assert!(pca.explained[1] < 1e-10);
    assert!((pca.explained[0] - 1.0).abs() < 1e-10);
}

#[test]
fn pca_isotropic_sample_has_even_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, d) = (4000, 3);
    let data: Vec<f64> = (0..m * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let pca = pca_embed(&Tensor::matrix(m, d, data), 2).unwrap();
    let (hi, lo) = (pca.eigenvalues[0], pca.eigenvalues[d - 1]);
    assert!(hi / lo < 1.2, "{:?}", pca.eigenvalues);
}

#[test]
fn pca_degenerate_input() {
    let same = Tensor::matrix(5, 3, [1.0, 2.0, 3.0].repeat(5));
    assert!(matches!(pca_embed(&same, 2), Err(Error::Degenerate(_))));
    assert!(pca_embed(&Tensor::matrix(2, 3, vec![0.0, 1.0, 2.0, 3.0, 1.0, 0.0]), 2).is_err());
}

#[test]
fn jacobi_agrees_with_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in [2, 5, 16, 64] {
        let b: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum();
            }
        }
        let (values, vectors) = symmetric_eigen(&a, d).unwrap();
        let oracle = nalgebra::DMatrix::from_row_slice(d, d, &a).symmetric_eigen();
        let mut expected: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
        expected.sort_by(|x, y| y.total_cmp(x));
        for (v, e) in values.iter().zip(&expected) {
            assert!((v - e).abs() < 1e-9 * expected[0].max(1.0));
        }
        // A v = lambda v, columns orthonormal, sign rule
        for c in 0..d {
            let col: Vec<f64> = (0..d).map(|k| vectors[k * d + c]).collect();
            for i in 0..d {
                let av: f64 = (0..d).map(|k| a[i * d + k] * col[k]).sum();
                assert!((av - values[c] * col[i]).abs() < 1e-8 * expected[0].max(1.0));
            }
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(pivot > 0.0);
            for c2 in 0..d {
                let dot: f64 = (0..d)
                    .map(|k| vectors[k * d + c] * vectors[k * d + c2])
                    .sum();
                assert!((dot - if c == c2 { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn pca_tsv_rows() {
    let coords = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]);
    let mut out = Vec::new();
    write_embedding_tsv(&mut out, &coords, &[1, 0], &["a".into(), "b".into()]).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "x\ty\tlabel\n0.5\t-1\tb\n2\t0.25\ta\n"
    );
}

#[test]
fn report_text_round_trip() {
    let s1 = score(&[0, 1, 1, 0, 1], &[0, 1, 0, 0, 1], 2).unwrap();
    let s2 = score(&[0, 1, 1], &[0, 1, 1], 2).unwrap();
    let report =
        EvalReport::from_folds(&[s1.clone(), s2.clone()], vec!["x".into(), "y".into()]).unwrap();
    let parsed = ParsedReport::parse(&report.to_text()).unwrap();
    assert_eq!(parsed.get_f64("ua").unwrap(), (s1.ua + s2.ua) / 2.0);
    assert_eq!(parsed.get("classes"), Some("x,y"));
    assert_eq!(parsed.get_f64("fold.1.wa").unwrap(), 1.0);
    assert_eq!(parsed.confusion.len(), 2);
    for row in &parsed.confusion {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(parsed.counts, vec![vec![3, 1], vec![0, 4]]);
}

#[test]
fn compactness_of_tight_and_loose_clusters() {
    let tight = vec![
        vec![0.0, 0.1],
        vec![0.0, -0.1],
        vec![4.0, 0.1],
        vec![4.0, -0.1],
    ];
    let c = compactness(&tight, &[0, 0, 1, 1], 2).unwrap();
    assert!((c.intra - 0.1).abs() < 1e-12);
    assert!((c.inter - 4.0).abs() < 1e-12);
    assert!((c.ratio - 0.025).abs() < 1e-12);
    assert!(compactness(&tight, &[0, 0, 0, 0], 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wa_is_prior_weighted_recall(seed in 0u64..100_000, m in 8usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = random_labels(&mut rng, m, 4);
        labels[..4].copy_from_slice(&[0, 1, 2, 3]);
        let preds = random_labels(&mut rng, m, 4);
        let cm = confusion_matrix(&preds, &labels, 4).unwrap();
        let priors: Vec<f64> = (0..4).map(|j| labels.iter().filter(|&&y| y == j).count() as f64 / m as f64).collect();
        let recalls: Vec<f64> = cm.recalls().into_iter().map(Option::unwrap).collect();
        prop_assert!((wa(&preds, &labels).unwrap() - wa_from_diagonal(&recalls, &priors)).abs() < 1e-12);
    }

    #[test]
    fn ua_equals_wa_on_balanced_sets(seed in 0u64..100_000, per_class in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..4 * per_class).map(|i| i % 4).collect();
        let preds = random_labels(&mut rng, labels.len(), 4);
        let cm = confusion_matrix(&preds, &labels, 4).unwrap();
        prop_assert!((ua(&cm).unwrap() - wa(&preds, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn averaged_rows_sum_to_one(seed in 0u64..100_000, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cms: Vec<_> = (0..k).map(|_| {
            let mut labels = random_labels(&mut rng, 40, 4);
            labels[..4].copy_from_slice(&[0, 1, 2, 3]);
            let preds = random_labels(&mut rng, 40, 4);
            confusion_matrix(&preds, &labels, 4).unwrap()
        }).collect();
        let avg = average_confusion(&cms).unwrap();
        for t in 0..4 {
            prop_assert!((avg.normalized_row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn subsets_are_stratified(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..6);
        let mut labels = Vec::new();
        for c in 0..n {
            labels.extend(std::iter::repeat_n(c, rng.random_range(10..60)));
        }
        labels.shuffle(&mut rng);
        let subsets = stratified_subsets(&labels, n, seed).unwrap();
        for c in 0..n {
            let total = labels.iter().filter(|&&y| y == c).count() as f64;
            for s in &subsets {
                let got = s.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!((got - total / 5.0).abs() <= 1.0);
            }
        }
        for fold in cv_splits(&labels, n, seed).unwrap() {
            for c in 0..n {
                let dev = fold.dev.iter().filter(|&&i| labels[i] == c).count() as f64;
                let test = fold.test.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!((dev - test).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn pca_error_shrinks_with_more_components(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d) = (40, 6);
        let data: Vec<f64> = (0..m * d).map(|i| rng.random_range(-1.0..1.0) * (1 + i % d) as f64).collect();
        let x = Tensor::matrix(m, d, data);
        let errors: Vec<f64> = (1..=d).map(|k| pca_embed(&x, k).unwrap().reconstruction_error(&x)).collect();
        for w in errors.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10);
        }
        prop_assert!(errors[d - 1] < 1e-10);
    }
}
