use proptest::prelude::*;
use regen_tad::decision::{
    decide, flag_count, postprocess, rank_decision, threshold_decision, DecisionConfig, DecisionMode,
};
use regen_tad::eval::{auroc, confusion_metrics};

fn brute_auroc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut num = 0u64;
    let mut den = 0u64;
    for (i, &ti) in truth.iter().enumerate() {
        for (j, &tj) in truth.iter().enumerate() {
            if ti && !tj {
                den += 2;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    num as f64 / den as f64
}

#[test]
fn rank_flags_the_five_largest_of_a_hundred() {
    let scores: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
    let labels = rank_decision(&scores, 0.05);
    let flagged: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    assert_eq!(flagged.len(), 5);
    assert!(flagged.iter().all(|&s| s >= 95.0));
}

#[test]
fn rank_ties_go_to_the_earliest_windows() {
    let labels = rank_decision(&[1.0; 10], 0.2);
    assert_eq!(labels.iter().filter(|&&l| l).count(), 2);
    assert!(labels[0] && labels[1]);
}

#[test]
fn rank_can_flag_everything() {
    assert!(rank_decision(&[3.0, 1.0, 2.0], 0.99).iter().all(|&l| l));
}

#[test]
fn threshold_is_strict() {
    assert_eq!(threshold_decision(&[0.5, 1.0, 1.5], 1.0), vec![false, false, true]);
    assert!(threshold_decision(&[0.1, 0.2], 5.0).iter().all(|&l| !l));
}

#[test]
fn decide_filters_before_dilating() {
    let cfg = DecisionConfig {
        mode: DecisionMode::Threshold,
        alpha: 0.05,
        min_run: 2,
        dilation: 1,
    };
    let scores = [0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0];
    let d = decide(&scores, 1.0, &cfg).unwrap();
    assert_eq!(d.labels, vec![false, false, false, true, true, true, true, false]);
    assert_eq!(d.flagged_before_postprocess, 3);
    assert_eq!(d.removed_by_filter, 1);
    assert_eq!(d.added_by_dilation, 2);
}

#[test]
fn decide_rejects_bad_alpha() {
    let cfg = DecisionConfig {
        alpha: 1.0,
        ..DecisionConfig::default()
    };
    assert!(decide(&[1.0], 0.0, &cfg).is_err());
}

#[test]
fn metric_edge_cases() {
    let truth = [true, false, true, false];
    let m = confusion_metrics(&truth, &truth).unwrap();
    assert_eq!((m.precision, m.recall, m.f1, m.fpr), (1.0, 1.0, 1.0, 0.0));
    let m = confusion_metrics(&[false; 4], &truth).unwrap();
    assert_eq!((m.precision, m.recall, m.f1, m.fpr), (0.0, 0.0, 0.0, 0.0));
    assert!(confusion_metrics(&[true], &[true, false]).is_err());
}

#[test]
fn auroc_separated_classes() {
    assert_eq!(auroc(&[0.1, 0.2, 0.9, 0.8], &[false, false, true, true]), 1.0);
    assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.2], &[false, false, true, true]), 0.0);
}

fn scored_labels(max_len: usize) -> impl Strategy<Value = Vec<(f64, bool)>> {
    // Small integer scores make ties common.
    proptest::collection::vec(((0i32..8).prop_map(f64::from), any::<bool>()), 2..max_len)
}

proptest! {
    #[test]
    fn auroc_matches_pairwise_counting(pairs in scored_labels(50)) {
        let (scores, truth): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let got = auroc(&scores, &truth);
        if truth.iter().all(|&t| t) || truth.iter().all(|&t| !t) {
            prop_assert!(got.is_nan());
        } else {
            prop_assert_eq!(got, brute_auroc(&scores, &truth));
        }
    }

    #[test]
    fn rank_is_invariant_to_monotone_maps(scores in proptest::collection::vec(-50.0f64..50.0, 1..80), alpha in 0.01f64..0.5) {
        let mapped: Vec<f64> = scores.iter().map(|s| s.exp() + 3.0 * s).collect();
        prop_assert_eq!(rank_decision(&scores, alpha), rank_decision(&mapped, alpha));
    }

    #[test]
    fn rank_flags_exactly_the_ceiling(scores in proptest::collection::vec(-5.0f64..5.0, 1..200), alpha in 0.001f64..0.999) {
        let n = rank_decision(&scores, alpha).iter().filter(|&&l| l).count();
        prop_assert_eq!(n, flag_count(alpha, scores.len()));
        prop_assert_eq!(n, ((alpha * scores.len() as f64) - 1e-9).ceil() as usize);
    }

    #[test]
    fn run_filter_is_idempotent(labels in proptest::collection::vec(any::<bool>(), 0..60), min_run in 1usize..5) {
        let once = postprocess(&labels, min_run, 0);
        prop_assert_eq!(postprocess(&once, min_run, 0), once.clone());
        prop_assert!(once.iter().zip(&labels).all(|(o, l)| !*o || *l));
    }

    #[test]
    fn dilation_only_adds(labels in proptest::collection::vec(any::<bool>(), 0..60), d in 0usize..4) {
        let out = postprocess(&labels, 1, d);
        prop_assert!(labels.iter().zip(&out).all(|(l, o)| !*l || *o));
    }

    #[test]
    fn metrics_are_consistent(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
        let (pred, truth): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let m = confusion_metrics(&pred, &truth).unwrap();
        prop_assert_eq!(m.tp + m.fp + m.tn + m.fn_, pred.len());
        for v in [m.precision, m.recall, m.f1, m.fpr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
    }
}
