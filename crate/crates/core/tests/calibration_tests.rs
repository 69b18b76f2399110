use competence_kit::error::Error;
use competence_kit::{
    accuracy_target_threshold, calibrated_report, fit_calibrator, fit_score_model,
    generate_synthetic_task, Interpolation, MonotonicCalibrator, ScoreConfig, ScoreMethod,
    SyntheticConfig,
};
use proptest::prelude::*;

#[test]
fn fit_reference_cases() {
    let cal = fit_calibrator(
        &[1.0, 2.0, 3.0, 4.0],
        &[false, false, true, true],
        Interpolation::Linear,
    )
    .unwrap();
    assert_eq!(cal.breakpoints(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(cal.levels(), &[0.0, 0.0, 1.0, 1.0]);

    let pooled = fit_calibrator(&[1.0, 2.0], &[true, false], Interpolation::Linear).unwrap();
    assert_eq!(pooled.levels(), &[0.5, 0.5]);

    let clean = fit_calibrator(
        &[5.0, 6.0, 7.0],
        &[false, false, false],
        Interpolation::Step,
    )
    .unwrap();
    assert_eq!(clean.levels(), &[0.0, 0.0, 0.0]);
    assert_eq!(clean.evaluate(100.0), 0.0);
}

#[test]
fn ties_merge_before_fitting() {
    // Scores {1,1,2}: the tied pair averages to 0.5, which then violates
    // against the clean point at 2 and pools to 1/3 overall.
    let cal = fit_calibrator(&[1.0, 1.0, 2.0], &[true, false, false], Interpolation::Step)
        .unwrap();
    assert_eq!(cal.breakpoints(), &[1.0, 2.0]);
    assert_eq!(cal.levels(), &[1.0 / 3.0, 1.0 / 3.0]);
}

#[test]
fn fit_rejects_bad_inputs() {
    assert!(matches!(
        fit_calibrator(&[1.0, 2.0], &[true], Interpolation::Step),
        Err(Error::LengthMismatch { .. })
    ));
    assert!(matches!(
        fit_calibrator(&[1.0], &[true], Interpolation::Step),
        Err(Error::TooFewSamples { n: 1, min: 2 })
    ));
}

#[test]
fn evaluation_follows_the_interpolation_rule() {
    let step =
        MonotonicCalibrator::from_parts(vec![1.0, 3.0], vec![0.0, 0.5], Interpolation::Step)
            .unwrap();
    assert_eq!(step.evaluate(0.0), 0.0);
    assert_eq!(step.evaluate(1.0), 0.0);
    assert_eq!(step.evaluate(2.0), 0.0);
    assert_eq!(step.evaluate(3.0), 0.5);
    assert_eq!(step.evaluate(99.0), 0.5);

    let linear =
        MonotonicCalibrator::from_parts(vec![1.0, 3.0], vec![0.0, 0.5], Interpolation::Linear)
            .unwrap();
    assert_eq!(linear.evaluate(1.0), 0.0);
    assert_eq!(linear.evaluate(2.0), 0.25);
    assert_eq!(linear.evaluate(2.5), 0.375);
    assert_eq!(linear.evaluate(3.0), 0.5);
    assert_eq!(linear.evaluate(-5.0), 0.0);
    assert_eq!(linear.evaluate(50.0), 0.5);
}

#[test]
fn from_parts_revalidates_invariants() {
    let ok = |b: Vec<f64>, l: Vec<f64>| {
        MonotonicCalibrator::from_parts(b, l, Interpolation::Step)
    };
    assert!(ok(vec![1.0, 2.0], vec![0.1, 0.9]).is_ok());
    assert!(matches!(
        ok(vec![2.0, 1.0], vec![0.1, 0.9]),
        Err(Error::InvalidConfig { .. })
    ));
    assert!(matches!(
        ok(vec![1.0, 1.0], vec![0.1, 0.9]),
        Err(Error::InvalidConfig { .. })
    ));
    assert!(matches!(
        ok(vec![1.0, f64::NAN], vec![0.1, 0.9]),
        Err(Error::InvalidConfig { .. })
    ));
    assert!(matches!(
        ok(vec![1.0, 2.0], vec![0.9, 0.1]),
        Err(Error::InvalidConfig { .. })
    ));
    assert!(matches!(
        ok(vec![1.0, 2.0], vec![0.1, 1.5]),
        Err(Error::InvalidConfig { .. })
    ));
    assert!(matches!(
        ok(vec![1.0, 2.0], vec![0.1, f64::NAN]),
        Err(Error::InvalidConfig { .. })
    ));
    assert!(matches!(
        ok(vec![], vec![]),
        Err(Error::TooFewSamples { .. })
    ));
    assert!(matches!(
        ok(vec![1.0], vec![0.1, 0.2]),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn json_round_trip_revalidates() {
    let cal = fit_calibrator(
        &[1.0, 2.0, 3.0, 4.0],
        &[false, true, false, true],
        Interpolation::Linear,
    )
    .unwrap();
    let text = cal.to_json();
    let back = MonotonicCalibrator::from_json(&text).unwrap();
    assert_eq!(back, cal);

    let tampered = text.replace("\"linear\"", "\"step\"");
    assert_eq!(
        MonotonicCalibrator::from_json(&tampered)
            .unwrap()
            .interpolation(),
        Interpolation::Step
    );

    let broken = r#"{"breakpoints":[2.0,1.0],"levels":[0.0,0.5],"interpolation":"step"}"#;
    assert!(MonotonicCalibrator::from_json(broken).is_err());
}

/// Brute-force oracle: best monotone assignment over a dense level grid via
/// dynamic programming on (point, level) with weighted squared error.
fn grid_dp_sse(means: &[f64], weights: &[f64]) -> f64 {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let mut dp = vec![0.0f64; grid.len()];
    for (&m, &w) in means.iter().zip(weights) {
        let mut best_so_far = f64::INFINITY;
        let mut next = vec![0.0f64; grid.len()];
        for (l, &g) in grid.iter().enumerate() {
            best_so_far = best_so_far.min(dp[l]);
            next[l] = best_so_far + w * (g - m) * (g - m);
        }
        dp = next;
    }
    dp.into_iter().fold(f64::INFINITY, f64::min)
}

#[test]
fn pav_is_no_worse_than_the_grid_oracle() {
    let mut state: u64 = 7;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        state >> 33
    };
    for round in 0..300 {
        let n = (next() % 7 + 2) as usize;
        let scores: Vec<f64> = (0..n).map(|_| (next() % 5) as f64).collect();
        let errors: Vec<bool> = (0..n).map(|_| next() % 2 == 0).collect();

        let cal = fit_calibrator(&scores, &errors, Interpolation::Step).unwrap();

        // Reduce to the merged weighted means the fit operates on.
        let mut distinct: Vec<f64> = scores.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut means = Vec::new();
        let mut weights = Vec::new();
        for &s in &distinct {
            let idx: Vec<usize> = (0..n).filter(|&i| scores[i] == s).collect();
            let errs = idx.iter().filter(|&&i| errors[i]).count();
            means.push(errs as f64 / idx.len() as f64);
            weights.push(idx.len() as f64);
        }

        let fitted_sse: f64 = cal
            .levels()
            .iter()
            .zip(means.iter().zip(&weights))
            .map(|(&l, (&m, &w))| w * (l - m) * (l - m))
            .sum();
        let oracle_sse = grid_dp_sse(&means, &weights);
        assert!(
            fitted_sse <= oracle_sse + 1e-12,
            "round {round}: PAV sse {fitted_sse} worse than grid {oracle_sse}"
        );
        // And the fit really is monotone within [0,1].
        assert!(cal.levels().windows(2).all(|w| w[0] <= w[1]));
        assert!(cal.levels().iter().all(|&l| (0.0..=1.0).contains(&l)));
    }
}

#[test]
fn accuracy_target_reference_values() {
    assert_eq!(accuracy_target_threshold(0.9), 1.0 - 0.9);
    assert_eq!(accuracy_target_threshold(1.0), 0.0);
    assert_eq!(accuracy_target_threshold(0.0), 1.0);
}

#[test]
fn calibrated_report_hand_case() {
    let cal = MonotonicCalibrator::from_parts(
        vec![1.0, 3.0],
        vec![0.0, 0.5],
        Interpolation::Step,
    )
    .unwrap();
    let ood = [0.0, 2.0, 4.0];
    let correct = [true, true, false];
    let report = calibrated_report(&cal, 0.8, &ood, &correct, &ood).unwrap();
    assert_eq!(report.alpha, 1.0 - 0.8);
    assert_eq!(report.a_ood_alpha, Some(1.0));
    assert_eq!(report.coverage_ood, 2.0 / 3.0);
    assert_eq!(report.n_accepted_ood, 2);
}

#[test]
fn calibrated_report_constant_calibrators() {
    let ood = [5.0, 6.0, 7.0, 8.0];
    let correct = [true, false, true, true];
    let id_val = [1.0, 2.0];

    let zero =
        MonotonicCalibrator::from_parts(vec![0.0], vec![0.0], Interpolation::Step).unwrap();
    let report = calibrated_report(&zero, 0.9, &ood, &correct, &id_val).unwrap();
    assert_eq!(report.coverage_ood, 1.0);
    assert_eq!(report.a_ood_alpha, Some(report.a_ood));
    assert_eq!(report.ood_gain, Some(0.0));

    let one = MonotonicCalibrator::from_parts(vec![0.0], vec![1.0], Interpolation::Step).unwrap();
    let report = calibrated_report(&one, 0.9, &ood, &correct, &id_val).unwrap();
    assert_eq!(report.coverage_ood, 0.0);
    assert_eq!(report.a_ood_alpha, None);
}

#[test]
fn id_error_rate_stays_near_target_on_synthetic_data() {
    let bundle = generate_synthetic_task(&SyntheticConfig {
        num_classes: 4,
        feature_dim: 8,
        n_train: 2000,
        n_val: 5000,
        n_test: 5000,
        n_ood: 10,
        n_open: 0,
        open_world_classes: 0,
        radius: 3.0,
        seed: 3,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let model = fit_score_model(
        ScoreMethod::Softmax,
        &bundle.id_train,
        &bundle.head,
        &ScoreConfig::default(),
    )
    .unwrap();
    let val_scores = model.score_split(&bundle.id_val).unwrap();
    let val_errors: Vec<bool> = bundle.id_val.correct().iter().map(|&c| !c).collect();
    let cal = fit_calibrator(val_scores.values(), &val_errors, Interpolation::Linear).unwrap();

    // Held-out ID test split plays the "OOD" role: the error rate inside the
    // accepted region must stay within slack of the target 1 - a_id.
    let a_id = bundle.id_test.accuracy();
    let test_scores = model.score_split(&bundle.id_test).unwrap();
    let report = calibrated_report(
        &cal,
        a_id,
        test_scores.values(),
        &bundle.id_test.correct(),
        val_scores.values(),
    )
    .unwrap();
    let accepted_accuracy = report.a_ood_alpha.expect("region must be nonempty");
    assert!(
        1.0 - accepted_accuracy <= (1.0 - a_id) + 0.02,
        "error rate {} exceeds target {} plus slack",
        1.0 - accepted_accuracy,
        1.0 - a_id
    );
}

proptest! {
    #[test]
    fn transform_preserves_order_and_range(
        raw in prop::collection::vec((0i32..12, any::<bool>()), 2..40),
        queries in prop::collection::vec(-5.0f64..17.0, 1..30),
        linear in any::<bool>(),
    ) {
        let scores: Vec<f64> = raw.iter().map(|p| p.0 as f64).collect();
        let errors: Vec<bool> = raw.iter().map(|p| p.1).collect();
        let interpolation = if linear { Interpolation::Linear } else { Interpolation::Step };
        let cal = fit_calibrator(&scores, &errors, interpolation).unwrap();

        let transformed = cal.transform(&queries);
        prop_assert!(transformed.iter().all(|&t| (0.0..=1.0).contains(&t)));
        for i in 0..queries.len() {
            for j in 0..queries.len() {
                if queries[i] <= queries[j] {
                    prop_assert!(transformed[i] <= transformed[j]);
                }
            }
        }
    }

    #[test]
    fn transformed_thresholds_have_raw_equivalents(
        raw in prop::collection::vec((0i32..10, any::<bool>()), 2..30),
        tau_grid in prop::collection::vec(0.0f64..1.0, 1..10),
    ) {
        let scores: Vec<f64> = raw.iter().map(|p| p.0 as f64).collect();
        let errors: Vec<bool> = raw.iter().map(|p| p.1).collect();
        let cal = fit_calibrator(&scores, &errors, Interpolation::Linear).unwrap();
        let transformed = cal.transform(&scores);

        for &tau in &tau_grid {
            let accepted: Vec<usize> =
                (0..scores.len()).filter(|&i| transformed[i] <= tau).collect();
            // The matching raw threshold accepts exactly the same set.
            let alpha = accepted
                .iter()
                .map(|&i| scores[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let raw_accepted: Vec<usize> =
                (0..scores.len()).filter(|&i| scores[i] <= alpha).collect();
            prop_assert_eq!(&accepted, &raw_accepted, "tau = {}", tau);
        }
    }
}
