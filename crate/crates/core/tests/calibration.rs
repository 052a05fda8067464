mod common;

use proptest::prelude::*;
use vifi::calibration::{
    histogram, rank_auc, roc, score_frame_pairs, score_pairs, select_threshold, sweep_scales,
    FramePair, LabeledPair, PairLabel, ScoredPair, Strategy as Pick,
};
use vifi::imaging::{ScaleFactor, SsimParams};
use vifi::synth::{generate_sequence, SynthConfig};
use vifi::Frame;

use common::{brute_auc, exhaustive_target_fnr, random_scores, rates_at, rng, scored};

fn score_set() -> impl Strategy<Value = Vec<ScoredPair>> {
    prop::collection::vec((-1.0f64..1.0, any::<bool>()), 2..60)
        .prop_map(|v| {
            v.into_iter()
                .map(|(score, sim)| ScoredPair {
                    score,
                    label: if sim {
                        PairLabel::Similar
                    } else {
                        PairLabel::Dissimilar
                    },
                })
                .collect::<Vec<_>>()
        })
        .prop_filter("both classes", |v| {
            v.iter().any(|s| s.label == PairLabel::Similar)
                && v.iter().any(|s| s.label == PairLabel::Dissimilar)
        })
}

fn tied_score_set() -> impl Strategy<Value = Vec<ScoredPair>> {
    score_set().prop_map(|v| {
        v.into_iter()
            .map(|s| ScoredPair {
                score: (s.score * 4.0).round() / 4.0,
                ..s
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn auc_matches_pair_counting(scores in tied_score_set()) {
        prop_assert!((rank_auc(&scores).unwrap() - brute_auc(&scores)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform(scores in score_set()) {
        let squashed: Vec<ScoredPair> = scores.iter().map(|s| ScoredPair { score: (3.0 * s.score).tanh() * 7.0 + 2.0, ..*s }).collect();
        prop_assert!((rank_auc(&scores).unwrap() - rank_auc(&squashed).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn label_swap_flips_auc(scores in tied_score_set()) {
        let flipped: Vec<ScoredPair> = scores.iter().map(|s| ScoredPair { label: s.label.flipped(), ..*s }).collect();
        prop_assert!((rank_auc(&scores).unwrap() + rank_auc(&flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_rates_monotone_and_exact(scores in tied_score_set()) {
        let curve = roc(&scores).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[1].fnr <= w[0].fnr);
            prop_assert!(w[1].fpr >= w[0].fpr);
        }
        for p in &curve.points {
            prop_assert_eq!((p.fnr, p.fpr), rates_at(&scores, p.threshold));
        }
    }

    #[test]
    fn trapezoid_equals_rank_auc_without_ties(scores in score_set()) {
        let curve = roc(&scores).unwrap();
        prop_assert!((curve.trapezoid_auc() - curve.auc).abs() < 1e-12);
    }

    #[test]
    fn target_fnr_respected(scores in tied_score_set(), target in 0.0f64..1.0) {
        let curve = roc(&scores).unwrap();
        let op = select_threshold(&curve, Pick::TargetFnr, target).unwrap();
        prop_assert!(op.fnr <= target);
        prop_assert_eq!((op.fnr, op.fpr), rates_at(&scores, op.tau));
        let (tau, fnr, fpr) = exhaustive_target_fnr(&scores, target);
        prop_assert_eq!((op.tau, op.fnr, op.fpr), (tau, fnr, fpr));
    }

    #[test]
    fn target_fpr_and_youden_are_optimal(scores in tied_score_set(), target in 0.0f64..1.0) {
        let curve = roc(&scores).unwrap();
        let op = select_threshold(&curve, Pick::TargetFpr, target).unwrap();
        prop_assert!(op.fpr <= target);
        for p in curve.points.iter().filter(|p| p.fpr <= target) {
            prop_assert!(op.fnr <= p.fnr);
        }
        let y = select_threshold(&curve, Pick::Youden, 0.0).unwrap();
        for p in &curve.points {
            prop_assert!(1.0 - y.fnr - y.fpr >= 1.0 - p.fnr - p.fpr);
        }
    }

    #[test]
    fn histogram_preserves_class_sizes(scores in score_set(), bins in 1usize..30) {
        let h = histogram(&scores, bins).unwrap();
        let sim = scores.iter().filter(|s| s.label == PairLabel::Similar).count();
        prop_assert_eq!(h.similar.iter().sum::<usize>(), sim);
        prop_assert_eq!(h.dissimilar.iter().sum::<usize>(), scores.len() - sim);
        prop_assert_eq!(h.edges.len(), bins + 1);
    }
}

#[test]
fn ten_score_mixed_set_against_pair_counting() {
    use PairLabel::{Dissimilar as D, Similar as S};
    let scores = scored(&[
        (0.12, D),
        (0.35, S),
        (0.35, D),
        (0.41, D),
        (0.5, S),
        (0.62, D),
        (0.7, S),
        (0.71, S),
        (0.9, S),
        (0.05, S),
    ]);
    let auc = rank_auc(&scores).unwrap();
    assert!((auc - brute_auc(&scores)).abs() < 1e-12);
    // 24 cross pairs; wins per dissimilar score: 0.12 -> 5, 0.35 -> 4 + tie, 0.41 -> 4, 0.62 -> 3
    assert!((auc - 16.5 / 24.0).abs() < 1e-12);
}

#[test]
fn six_score_operating_point() {
    use PairLabel::{Dissimilar as D, Similar as S};
    let scores = scored(&[(0.2, D), (0.3, S), (0.4, D), (0.55, S), (0.6, D), (0.8, S)]);
    let curve = roc(&scores).unwrap();
    for target in [0.0, 0.3, 0.34, 0.5, 0.67, 1.0] {
        let op = select_threshold(&curve, Pick::TargetFnr, target).unwrap();
        assert_eq!(
            (op.tau, op.fnr, op.fpr),
            exhaustive_target_fnr(&scores, target),
            "target {target}"
        );
    }
    // fnr <= 1/3 first holds at tau = 0.475 (0.2, 0.4 novel; 0.6 missed), costing one similar pair
    let op = select_threshold(&curve, Pick::TargetFnr, 0.34).unwrap();
    assert!((op.tau - 0.475).abs() < 1e-12);
    assert!((op.fpr - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn random_sets_match_oracles() {
    let mut r = rng(20);
    for i in 0..40 {
        let scores = random_scores(&mut r, 2 + i % 99, i % 2 == 0);
        assert!((rank_auc(&scores).unwrap() - brute_auc(&scores)).abs() < 1e-12);
    }
}

fn noise_dominated_pairs(count: usize) -> Vec<FramePair> {
    let cfg = SynthConfig {
        frame_size: 256,
        num_scenes: 2,
        min_frames_per_scene: 2,
        max_frames_per_scene: 2,
        noise_sigma: 80.0,
        drift_step: 0,
        texture_grain: 64,
        texture_contrast: 0.1,
        seed: 0,
    };
    (0..count as u64)
        .flat_map(|seed| {
            let (f, _) = generate_sequence(&cfg.with_seed(seed)).unwrap();
            [
                FramePair {
                    reference: f[0].clone(),
                    candidate: f[1].clone(),
                    label: PairLabel::Similar,
                },
                FramePair {
                    reference: f[1].clone(),
                    candidate: f[2].clone(),
                    label: PairLabel::Dissimilar,
                },
            ]
        })
        .collect()
}

#[test]
fn coarse_scale_beats_full_resolution_under_noise() {
    let pairs = noise_dominated_pairs(25);
    let scales: Vec<ScaleFactor> = [1, 4, 32]
        .iter()
        .map(|&k| ScaleFactor::new(k).unwrap())
        .collect();
    let sweep = sweep_scales(&pairs, &scales, &SsimParams::default()).unwrap();
    let auc: Vec<f64> = sweep.entries.iter().map(|e| e.1).collect();
    assert!(auc[2] > auc[0], "{auc:?}");
    assert!(auc[1] > auc[0], "{auc:?}");
    assert_eq!(sweep.best.inverse(), 32);
}

#[test]
fn score_pairs_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let black = Frame::filled(16, 16, 0).unwrap();
    let white = Frame::filled(16, 16, 255).unwrap();
    black.save_pgm(&dir.path().join("b.pgm")).unwrap();
    white.save_pgm(&dir.path().join("w.pgm")).unwrap();
    let pair = |a: &str, b: &str, label| LabeledPair {
        ref_frame: dir.path().join(a),
        cand_frame: dir.path().join(b),
        label,
        line: 0,
    };
    let pairs = vec![
        pair("b.pgm", "b.pgm", PairLabel::Similar),
        pair("b.pgm", "w.pgm", PairLabel::Dissimilar),
    ];
    let scores = score_pairs(&pairs, ScaleFactor::IDENTITY, &SsimParams::default()).unwrap();
    assert_eq!(scores[0].score, 1.0);
    assert!((scores[1].score - 9.999e-5).abs() < 1e-8);

    let many: Vec<FramePair> = (0..100)
        .map(|i| FramePair {
            reference: black.clone(),
            candidate: if i % 2 == 0 {
                black.clone()
            } else {
                white.clone()
            },
            label: PairLabel::Similar,
        })
        .collect();
    assert_eq!(
        score_frame_pairs(&many, ScaleFactor::DEFAULT, &SsimParams::default())
            .unwrap()
            .len(),
        100
    );

    let missing = vec![pair("b.pgm", "nope.pgm", PairLabel::Similar)];
    match score_pairs(&missing, ScaleFactor::IDENTITY, &SsimParams::default()) {
        Err(vifi::calibration::CalibrationError::Frame { index, .. }) => assert_eq!(index, 0),
        other => panic!("unexpected {other:?}"),
    }
}
