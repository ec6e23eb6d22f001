mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use osattr::linear_probe::{train_probe, LogisticProbe, TrainOptions};
use osattr::matrix::softmax;
use osattr::metrics::{
    aggregate_reports, auroc, ccr_at, closed_set_accuracy, fpr_at, oscr, oscr_curve, EvalReport, ScoredPrediction,
};
use osattr::rejection::{
    apply_react, fit_id_statistics, score_energy, score_entropy, score_gen, score_gradnorm, score_maxlogit,
    score_msp, score_residual, score_vim, IdStatistics, ProbeScorer, ReactVariant, ScoreConfig, Strategy as Scoring,
};
use osattr::Matrix;

fn fitted() -> (LogisticProbe, IdStatistics, ScoreConfig) {
    let train = common::clusters(30, 21).sample().unwrap();
    let probe = train_probe(&train, 1.0, &TrainOptions::default()).unwrap();
    let cfg = ScoreConfig {
        gen_top_m: 5,
        ..ScoreConfig::default()
    };
    let stats = fit_id_statistics(&train, &probe, &cfg).unwrap();
    (probe, stats, cfg)
}

fn seen(correct: bool, confidence: f64) -> ScoredPrediction {
    ScoredPrediction {
        predicted_class: 0,
        correct,
        confidence,
        is_seen: true,
    }
}

fn arb_scores() -> impl Strategy<Value = (Vec<(bool, f64)>, Vec<f64>)> {
    (
        prop::collection::vec((any::<bool>(), (0u32..12).prop_map(|v| v as f64 / 4.0 - 1.0)), 1..40),
        prop::collection::vec((0u32..12).prop_map(|v| v as f64 / 4.0 - 1.0), 1..40),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn two_class_scores_rank_alike(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0, d in -10.0f64..10.0) {
        let (p, q) = (softmax(&[a, b]), softmax(&[c, d]));
        let dm = score_msp(&p).unwrap() - score_msp(&q).unwrap();
        prop_assume!(dm.abs() > 1e-9);
        let de = score_entropy(&p).unwrap() - score_entropy(&q).unwrap();
        let dg = score_gen(&p, 0.1, 2).unwrap() - score_gen(&q, 0.1, 2).unwrap();
        prop_assert!(dm.signum() == de.signum() && dm.signum() == dg.signum());
    }

    #[test]
    fn energy_exceeds_maxlogit_by_at_most_log_k(logits in prop::collection::vec(-100.0f64..100.0, 1..12)) {
        let gap = score_energy(&logits, 1.0).unwrap() - score_maxlogit(&logits);
        prop_assert!(gap >= 0.0);
        prop_assert!(gap <= (logits.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn auroc_ignores_increasing_transforms((s, u) in arb_scores()) {
        let ss: Vec<f64> = s.iter().map(|p| p.1).collect();
        let base = auroc(&ss, &u).unwrap();
        let maps: [fn(f64) -> f64; 3] = [f64::exp, |v| 3.0 * v - 7.0, |v| v * v * v];
        for f in maps {
            let ts: Vec<f64> = ss.iter().map(|&v| f(v)).collect();
            let tu: Vec<f64> = u.iter().map(|&v| f(v)).collect();
            prop_assert_eq!(auroc(&ts, &tu).unwrap(), base);
        }
        prop_assert!((base + auroc(&u, &ss).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccr_and_fpr_fall_with_threshold((s, u) in arb_scores(), t0 in -2.0f64..2.0, dt in 0.0f64..2.0) {
        let preds: Vec<ScoredPrediction> = s.iter().map(|&(c, v)| seen(c, v)).collect();
        prop_assert!(ccr_at(&preds, t0 + dt).unwrap() <= ccr_at(&preds, t0).unwrap());
        prop_assert!(fpr_at(&u, t0 + dt).unwrap() <= fpr_at(&u, t0).unwrap());
        let o = oscr(&preds, &u).unwrap();
        prop_assert!(o <= closed_set_accuracy(&preds).unwrap() + 1e-12);
        let curve = oscr_curve(&preds, &u).unwrap();
        prop_assert!(curve.fpr.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(curve.ccr.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn oscr_counts_strictly_ordered_correct_pairs((s, u) in arb_scores()) {
        let preds: Vec<ScoredPrediction> = s.iter().map(|&(c, v)| seen(c, v)).collect();
        let pairs = preds
            .iter()
            .filter(|p| p.correct)
            .map(|p| u.iter().filter(|&&x| p.confidence > x).count())
            .sum::<usize>();
        let want = pairs as f64 / (preds.len() * u.len()) as f64;
        prop_assert_eq!(oscr(&preds, &u).unwrap(), want);
    }
}

#[test]
fn residual_vanishes_on_the_principal_subspace_and_splits_orthogonally() {
    let (_, stats, _) = fitted();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (d, dd) = (stats.dim(), stats.subspace_dim());
    for _ in 0..20 {
        let coeffs: Vec<f64> = (0..dd).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut inside = stats.feature_mean.clone();
        for (j, c) in coeffs.iter().enumerate() {
            for (i, v) in inside.iter_mut().enumerate() {
                *v += c * stats.principal_basis[(i, j)];
            }
        }
        assert!(score_residual(&stats, &inside).unwrap().abs() < 1e-8);

        // add an arbitrary vector: ‖centered‖² = ‖projection‖² + ‖residual‖²
        let z: Vec<f64> = inside.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let centered: Vec<f64> = z.iter().zip(&stats.feature_mean).map(|(a, m)| a - m).collect();
        let proj_sq: f64 = (0..dd)
            .map(|j| (0..d).map(|i| stats.principal_basis[(i, j)] * centered[i]).sum::<f64>().powi(2))
            .sum();
        let total_sq: f64 = centered.iter().map(|v| v * v).sum();
        let r = stats.residual_norm(&z).unwrap();
        assert!((proj_sq + r * r - total_sq).abs() < 1e-8 * total_sq.max(1.0));
    }
}

#[test]
fn vim_without_virtual_logit_ranks_like_energy() {
    let (probe, mut stats, _) = fitted();
    stats.residual_scale = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples: Vec<Vec<f64>> = (0..60).map(|_| (0..64).map(|_| rng.random_range(-3.0..6.0)).collect()).collect();
    let vim: Vec<f64> = samples.iter().map(|z| score_vim(&stats, &probe, z).unwrap()).collect();
    let energy: Vec<f64> = samples
        .iter()
        .map(|z| score_energy(&probe.logits(z).unwrap(), 1.0).unwrap())
        .collect();
    for i in 0..samples.len() {
        for j in 0..samples.len() {
            if (energy[i] - energy[j]).abs() > 1e-9 {
                assert_eq!(vim[i] > vim[j], energy[i] > energy[j]);
            }
        }
    }
}

#[test]
fn react_above_every_activation_changes_nothing() {
    let (probe, mut stats, cfg) = fitted();
    stats.react_threshold = f64::INFINITY;
    let scorer = ProbeScorer {
        probe: &probe,
        stats: Some(&stats),
        cfg,
    };
    let z: Vec<f64> = (0..64).map(|i| (i as f64).sin() * 3.0).collect();
    let clipped = apply_react(Some(&stats), &probe, &z, ReactVariant::Global, 0.99).unwrap();
    assert_eq!(clipped, probe.logits(&z).unwrap());
    assert_eq!(
        scorer.score(Scoring::GenReact, &z).unwrap(),
        scorer.score(Scoring::Gen, &z).unwrap()
    );
}

#[test]
fn gradnorm_matches_numeric_kl_gradient() {
    let (probe, _, _) = fitted();
    let z: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
    let k = probe.num_classes();
    let kl = |p: &LogisticProbe| {
        let q = softmax(&p.logits(&z).unwrap());
        q.iter().map(|qi| -(qi.ln()) / k as f64).sum::<f64>() - (k as f64).ln()
    };
    let h = 1e-6;
    let mut l1 = 0.0;
    let mut p = probe.clone();
    for idx in 0..p.weights.as_slice().len() {
        let v = p.weights.as_slice()[idx];
        p.weights.as_mut_slice()[idx] = v + h;
        let up = kl(&p);
        p.weights.as_mut_slice()[idx] = v - h;
        let down = kl(&p);
        p.weights.as_mut_slice()[idx] = v;
        l1 += ((up - down) / (2.0 * h)).abs();
    }
    let g = score_gradnorm(&probe, &z).unwrap();
    assert!((g - l1).abs() < 1e-4 * g.max(1.0), "{g} vs {l1}");
}

#[test]
fn every_strategy_is_finite_and_deterministic() {
    let (probe, stats, cfg) = fitted();
    let val = common::clusters(10, 22).sample().unwrap();
    let stats = osattr::rejection::calibrate_ranges(&stats, &probe, &val, &cfg).unwrap();
    let scorer = ProbeScorer {
        probe: &probe,
        stats: Some(&stats),
        cfg,
    };
    let x = common::clusters(5, 23).sample().unwrap().to_matrix();
    for s in Scoring::ALL_PROBE {
        for z in x.rows_iter() {
            let a = scorer.score(s, z).unwrap();
            assert!(a.is_finite(), "{s}");
            assert_eq!(a.to_bits(), scorer.score(s, z).unwrap().to_bits());
        }
    }
    assert!(scorer.score(Scoring::NearestNeighbor, x.row(0)).is_err());
}

#[test]
fn tied_threshold_convention_is_pinned() {
    let preds = [seen(true, 0.5), seen(true, 0.5), seen(false, 0.9)];
    // strict for CCR, inclusive for FPR
    assert_eq!(ccr_at(&preds, 0.5).unwrap(), 0.0);
    assert_eq!(fpr_at(&[0.5, 0.1], 0.5).unwrap(), 0.5);
    assert_eq!(oscr(&preds, &[0.5]).unwrap(), 0.0);
}

#[test]
fn aggregation_uses_sample_std() {
    let reports: Vec<EvalReport> = [0.9, 0.8, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &a)| EvalReport::single(format!("s{i}"), a, Some(a - 0.1), None))
        .collect();
    let agg = aggregate_reports(&reports).unwrap();
    assert!((agg.accuracy - 0.9).abs() < 1e-12);
    assert!((agg.mean_std.accuracy.std - 0.1).abs() < 1e-12);
    assert!((agg.auroc.unwrap() - 0.8).abs() < 1e-12);
    assert!(agg.oscr.is_none());
    assert_eq!(agg.per_split.len(), 3);
}

#[test]
fn identity_covariance_makes_mahalanobis_euclidean() {
    let (_, mut stats, _) = fitted();
    let d = stats.dim();
    stats.precision = Matrix::identity(d);
    let z: Vec<f64> = (0..d).map(|i| i as f64 / d as f64).collect();
    let nearest = stats
        .class_means
        .rows_iter()
        .map(|m| m.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let m = osattr::rejection::score_mahalanobis(&stats, &z).unwrap();
    assert!((m + nearest).abs() < 1e-9);
}
