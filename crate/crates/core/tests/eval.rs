mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;
use vbfi_core::eval::{
    best_single_view, cross_validate, fold_csv, fold_partition, paired_significance, rmse, summary_csv, sweep,
    sweep_csv, CvData, EvalError, Learner, SweepParam,
};
use vbfi_core::synth::{generate_synthetic, SynthData, SynthSpec};
use vbfi_core::{BoostingConfig, Trait};

fn planted() -> SynthData {
    generate_synthetic(&SynthSpec::default()).unwrap()
}

#[test]
fn rmse_examples() {
    assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    assert_eq!(rmse(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
    assert_eq!(rmse(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), 2f64.sqrt());
    assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2))));
    assert!(matches!(rmse(&[], &[]), Err(EvalError::Empty)));
}

proptest! {
    #[test]
    fn folds_are_disjoint_covering_and_even(n in 2usize..200, folds in 2usize..12, seed: u64, repeat in 0usize..5) {
        prop_assume!(folds <= n);
        let parts = fold_partition(n, folds, seed, repeat);
        prop_assert_eq!(parts.len(), folds);
        let mut seen = vec![0u32; n];
        for p in &parts {
            for &i in p {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn rmse_is_sign_symmetric_and_scales(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40), c in 0.1f64..10.0) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = rmse(&a, &b).unwrap();
        prop_assert!((rmse(&b, &a).unwrap() - base).abs() <= 1e-12 * (1.0 + base));
        let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * c).collect();
        prop_assert!((rmse(&sa, &sb).unwrap() - c * base).abs() <= 1e-9 * (1.0 + c * base));
    }
}

#[test]
fn two_folds_test_each_sample_once_per_repeat() {
    for repeat in 0..5 {
        let parts = fold_partition(4, 2, 9, repeat);
        let mut all: Vec<usize> = parts.concat();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(parts[0].len(), 2);
    }
}

#[test]
fn constant_labels_give_zero_fold_error() {
    let data = planted();
    let labels: BTreeMap<String, f64> = data.views.rows.keys().map(|u| (u.clone(), 1.25)).collect();
    let cv = CvData::from_views(&data.views, &labels).unwrap();
    for learner in [
        Learner::Mean,
        Learner::Vgbdt(BoostingConfig::default()),
        Learner::SingleViewCart { view: 3, max_leaves: 5, min_leaf: 2 },
    ] {
        let report = cross_validate(&cv, &learner, 10, 2, 1, Trait::Openness).unwrap();
        assert_eq!(report.fold_rmse.len(), 20);
        assert!(report.fold_rmse.iter().all(|r| *r <= 1e-12), "{}", report.learner);
    }
}

#[test]
fn report_mean_is_fold_average() {
    let data = planted();
    let cv = CvData::from_views(&data.views, &data.labels[&Trait::Extraversion]).unwrap();
    let report = cross_validate(&cv, &Learner::Mean, 5, 3, 11, Trait::Extraversion).unwrap();
    assert_eq!(report.fold_rmse.len(), 15);
    let mean = report.fold_rmse.iter().sum::<f64>() / 15.0;
    assert!((report.mean_rmse - mean).abs() < 1e-15);
}

fn t_oracle(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let s2 = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    m / (s2 / n).sqrt()
}

#[test]
fn identical_lists_give_p_one() {
    let a = [1.0, 2.0, 3.5, 0.25];
    let t = paired_significance(&a, &a).unwrap();
    assert_eq!(t.p_value, 1.0);
}

#[test]
fn constant_shift_with_jitter_is_significant() {
    let mut r = common::rng(5);
    let b: Vec<f64> = (0..100).map(|_| r.random_range(1.0..2.0)).collect();
    let a: Vec<f64> = b.iter().map(|v| v + 0.5 + r.random_range(-1e-3..1e-3)).collect();
    let t = paired_significance(&a, &b).unwrap();
    assert!(t.p_value < 0.05);
    assert_eq!(t.degrees_of_freedom, 99);
    let expected = t_oracle(&a, &b);
    assert!((t.t_statistic - expected).abs() <= 1e-9 * expected.abs());
}

#[test]
fn p_value_matches_t_table() {
    // Two-sided 5% critical values: df 9 -> 2.262157, df 29 -> 2.045230.
    for (df, crit) in [(9usize, 2.262157f64), (29, 2.045230)] {
        let n = df + 1;
        // Differences 1 + c*e with e = +-1 alternating and zero mean have
        // t = sqrt(n) / (c * sqrt(n / (n-1))).
        let c = (n as f64).sqrt() / (crit * (n as f64 / (n - 1) as f64).sqrt());
        let a: Vec<f64> = (0..n).map(|i| 1.0 + if i % 2 == 0 { c } else { -c }).collect();
        let b = vec![0.0; n];
        let t = paired_significance(&a, &b).unwrap();
        assert!((t.t_statistic - crit).abs() < 1e-9, "{}", t.t_statistic);
        assert!((t.p_value - 0.05).abs() < 2e-6, "df {df}: {}", t.p_value);
    }
}

#[test]
fn independent_samples_give_a_probability() {
    let mut r = common::rng(8);
    for _ in 0..50 {
        let a: Vec<f64> = (0..30).map(|_| r.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..30).map(|_| r.random_range(0.0..1.0)).collect();
        let p = paired_significance(&a, &b).unwrap().p_value;
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn paired_test_errors() {
    assert!(matches!(paired_significance(&[1.0], &[1.0]), Err(EvalError::Empty)));
    assert!(matches!(paired_significance(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch(2, 1))));
}

#[test]
fn cross_validation_errors() {
    let data = planted();
    let cv = CvData::from_views(&data.views, &data.labels[&Trait::Openness]).unwrap();
    assert!(matches!(cross_validate(&cv, &Learner::Mean, 1, 1, 0, Trait::Openness), Err(EvalError::BadFolds)));
    assert!(matches!(cross_validate(&cv, &Learner::Mean, 2, 0, 0, Trait::Openness), Err(EvalError::BadFolds)));
    assert!(matches!(
        cross_validate(&cv, &Learner::Mean, 105, 1, 0, Trait::Openness),
        Err(EvalError::TooFewSamples { samples: 104, folds: 105 })
    ));
    let bad_view = Learner::SingleViewCart { view: 36, max_leaves: 5, min_leaf: 2 };
    assert!(matches!(cross_validate(&cv, &bad_view, 10, 1, 0, Trait::Openness), Err(EvalError::BadView { view: 36, views: 36 })));
    let mut partial = data.labels[&Trait::Openness].clone();
    partial.remove("user_000");
    assert!(matches!(CvData::from_views(&data.views, &partial), Err(EvalError::MissingLabel(u)) if u == "user_000"));
    let e = sweep(&cv, &BoostingConfig::default(), SweepParam::Rounds, &[], 10, 1, 0, Trait::Openness);
    assert!(matches!(e, Err(EvalError::EmptySweep)));
}

#[test]
fn planted_cv_matches_frozen_reference() {
    let data = planted();
    let cv = CvData::from_views(&data.views, &data.labels[&Trait::Openness]).unwrap();
    let report = cross_validate(&cv, &Learner::Vgbdt(BoostingConfig::default()), 10, 10, 42, Trait::Openness).unwrap();
    assert!((report.mean_rmse - FROZEN_OPENNESS_RMSE).abs() < 1e-3, "{}", report.mean_rmse);
    let again = cross_validate(&cv, &Learner::Vgbdt(BoostingConfig::default()), 10, 10, 42, Trait::Openness).unwrap();
    assert_eq!(report, again);
}

const FROZEN_OPENNESS_RMSE: f64 = 1.3632756254025336;

#[test]
fn vgbdt_beats_single_view_cart_on_planted_data() {
    let data = planted();
    for t in Trait::ALL {
        let cv = CvData::from_views(&data.views, &data.labels[&t]).unwrap();
        let mut boosted = cross_validate(&cv, &Learner::Vgbdt(BoostingConfig::default()), 10, 3, 42, t).unwrap();
        let (view, single) = best_single_view(&cv, 5, 2, 10, 3, 42, t).unwrap();
        assert!(boosted.mean_rmse < single.mean_rmse, "{t}: {} vs {}", boosted.mean_rmse, single.mean_rmse);
        assert!(data.planted.iter().any(|p| p.trait_ == t && p.view == view), "{t}: view {view}");
        boosted.compare_to(&single).unwrap();
        assert!(boosted.p_value().unwrap() < 0.05);
    }
}

#[test]
fn no_model_beats_the_mean_without_signal() {
    let spec = SynthSpec {
        informative_views: vec![],
        amplitudes: vec![],
        pool_images_per_concept: 0,
        ..SynthSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    for t in [Trait::Openness, Trait::Neuroticism] {
        let cv = CvData::from_views(&data.views, &data.labels[&t]).unwrap();
        let mean = cross_validate(&cv, &Learner::Mean, 10, 3, 42, t).unwrap();
        let boosted = cross_validate(&cv, &Learner::Vgbdt(BoostingConfig::default()), 10, 3, 42, t).unwrap();
        let (_, single) = best_single_view(&cv, 5, 2, 10, 3, 42, t).unwrap();
        for r in [&boosted, &single] {
            assert!(r.mean_rmse >= mean.mean_rmse - 0.1, "{t} {}: {} vs {}", r.learner, r.mean_rmse, mean.mean_rmse);
        }
    }
}

#[test]
fn zero_rounds_is_the_mean_baseline() {
    let data = planted();
    let cv = CvData::from_views(&data.views, &data.labels[&Trait::Agreeableness]).unwrap();
    let rows = sweep(&cv, &BoostingConfig::default(), SweepParam::Rounds, &[0], 10, 2, 3, Trait::Agreeableness).unwrap();
    let mean = cross_validate(&cv, &Learner::Mean, 10, 2, 3, Trait::Agreeableness).unwrap();
    assert_eq!(rows.len(), 1);
    for (a, b) in rows[0].report.fold_rmse.iter().zip(&mean.fold_rmse) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b));
    }
    assert_eq!(rows[0].report.p_value(), Some(1.0));
}

#[test]
fn leaf_sweep_completes_and_is_well_formed() {
    let data = planted();
    let cv = CvData::from_views(&data.views, &data.labels[&Trait::Conscientiousness]).unwrap();
    let values = [2, 3, 5, 8];
    let rows = sweep(&cv, &BoostingConfig::default(), SweepParam::Leaves, &values, 10, 2, 42, Trait::Conscientiousness)
        .unwrap();
    assert_eq!(rows.len(), 4);
    for (row, v) in rows.iter().zip(values) {
        assert_eq!(row.value, v);
        assert_eq!(row.param, SweepParam::Leaves);
        assert_eq!(row.report.fold_rmse.len(), 20);
        assert!(row.report.mean_rmse.is_finite() && row.report.mean_rmse > 0.0);
        let p = row.report.p_value().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    let csv = sweep_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("param,value,trait,mean_rmse,std_rmse,p_value"));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 4);
    assert!(body[0].starts_with("J,2,"));
    assert!(body.iter().all(|l| l.split(',').count() == 6));
}

#[test]
fn fold_and_summary_csv_shapes() {
    let data = planted();
    let cv = CvData::from_views(&data.views, &data.labels[&Trait::Openness]).unwrap();
    let report = cross_validate(&cv, &Learner::Mean, 10, 10, 42, Trait::Openness).unwrap();
    let folds = fold_csv(std::slice::from_ref(&report));
    assert_eq!(folds.lines().count(), 101);
    assert_eq!(folds.lines().next(), Some("trait,learner,repeat,fold,rmse"));
    let summary = summary_csv(&[report]);
    assert_eq!(summary.lines().count(), 2);
}
