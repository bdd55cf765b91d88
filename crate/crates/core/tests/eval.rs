use std::collections::BTreeSet;

use proptest::prelude::*;
use surpsel_core::eval::{aggregate, compute_metrics, make_folds};
use surpsel_core::Sex;

/// Confusion matrix, then per-class F1 from precision and recall.
fn oracle(pairs: &[(usize, usize)]) -> (f64, f64) {
    let mut cm = [[0usize; 7]; 7];
    for &(t, p) in pairs {
        cm[t][p] += 1;
    }
    let correct: usize = (0..7).map(|c| cm[c][c]).sum();
    let mut f1 = 0.0;
    for c in 0..7 {
        let predicted: usize = (0..7).map(|t| cm[t][c]).sum();
        let actual: usize = cm[c].iter().sum();
        if predicted == 0 || actual == 0 || cm[c][c] == 0 {
            continue;
        }
        let precision = cm[c][c] as f64 / predicted as f64;
        let recall = cm[c][c] as f64 / actual as f64;
        f1 += 2.0 * precision * recall / (precision + recall);
    }
    (correct as f64 / pairs.len() as f64, f1 / 7.0)
}

fn speakers() -> impl Strategy<Value = Vec<(u32, Sex)>> {
    (2usize..15, 2usize..15).prop_map(|(m, f)| {
        let mut v: Vec<(u32, Sex)> = (0..m).map(|i| (2 * i as u32 + 1, Sex::Male)).collect();
        v.extend((0..f).map(|i| (2 * i as u32 + 2, Sex::Female)));
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_confusion_matrix(pairs in prop::collection::vec((0usize..7, 0usize..7), 1..200)) {
        let m = compute_metrics(&pairs);
        let (acc, f1) = oracle(&pairs);
        prop_assert_eq!(m.accuracy, acc);
        prop_assert!((m.macro_f1 - f1).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.macro_f1));
    }
}

proptest! {
    #[test]
    fn folds_are_speaker_disjoint(sp in speakers(), k in 1usize..12, seed in prop::option::of(any::<u64>())) {
        let males = sp.iter().filter(|s| s.1 == Sex::Male).count();
        let females = sp.len() - males;
        let folds = match make_folds(&sp, k, seed) {
            Ok(f) => f,
            Err(_) => {
                prop_assert!(males < k.max(2) || females < k.max(2));
                return Ok(());
            }
        };
        prop_assert_eq!(folds.len(), k);
        let sex = |id: u32| sp.iter().find(|s| s.0 == id).unwrap().1;
        let mut pairs = BTreeSet::new();
        for f in &folds {
            let test: BTreeSet<u32> = f.test_speakers.iter().copied().collect();
            let val: BTreeSet<u32> = f.val_speakers.iter().copied().collect();
            let train: BTreeSet<u32> = f.train_speakers.iter().copied().collect();
            prop_assert!(test.is_disjoint(&val) && test.is_disjoint(&train) && val.is_disjoint(&train));
            prop_assert_eq!(test.len() + val.len() + train.len(), sp.len());
            prop_assert_eq!(sex(f.test_speakers[0]), Sex::Male);
            prop_assert_eq!(sex(f.test_speakers[1]), Sex::Female);
            prop_assert_eq!(sex(f.val_speakers[0]), Sex::Male);
            prop_assert_eq!(sex(f.val_speakers[1]), Sex::Female);
            prop_assert!(pairs.insert(f.test_speakers.clone()));
        }
        prop_assert_eq!(make_folds(&sp, k, seed).unwrap(), folds);
    }

    #[test]
    fn aggregate_in_hull(values in prop::collection::vec(0.0f64..1.0, 1..12)) {
        let a = aggregate(&values).unwrap();
        prop_assert!(a.min <= a.mean + 1e-15 && a.mean <= a.max + 1e-15);
        let same = aggregate(&vec![values[0]; values.len()]).unwrap();
        prop_assert_eq!(same.std, 0.0);
    }
}

#[test]
fn degenerate_cell_reconstruction() {
    // 20% merged class, 13.33% for each of the other six; always predict "sad".
    let mut pairs = vec![(0, 2); 30];
    for c in 1..7 {
        pairs.extend(std::iter::repeat_n((c, 2), 20));
    }
    let m = compute_metrics(&pairs);
    assert!((100.0 * m.accuracy - 13.33).abs() < 0.1);
    assert!((100.0 * m.macro_f1 - 3.36).abs() < 0.05);
}
