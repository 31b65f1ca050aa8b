use survey_core::simulate::rep_rng;
use survey_core::*;

fn intro() -> DiscreteCostDistribution {
    DiscreteCostDistribution::new(vec![0.0, 4.0, 8.0], vec![0.5, 0.25, 0.25]).unwrap()
}

fn intro_plan() -> SurveyPlan {
    SurveyPlan::from_mechanism(&design_mechanism(&intro(), 7.0).unwrap())
}

fn obs(prob: f64, m: f64) -> Observation {
    Observation {
        type_index: 0,
        prob,
        price: 0.0,
        m: vec![m],
        x: Vec::new(),
        y: 0.0,
    }
}

fn config(n: usize, reps: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        n,
        reps,
        seed,
        adversarial: false,
    }
}

#[test]
fn single_type_buys_everyone() {
    let m = design_mechanism(&DiscreteCostDistribution::new(vec![3.0], vec![1.0]).unwrap(), 5.0).unwrap();
    let plan = SurveyPlan::from_mechanism(&m);
    let model = DataModel::MomentBinary { q: vec![0.5], dim: 1 };
    let s = run_survey(&model, &plan, 1000, &mut rep_rng(1, 0)).unwrap();
    assert_eq!(s.selected.len(), 1000);
    assert_eq!(s.total_spend, 3000.0);
}

#[test]
fn intro_spend_and_selection() {
    let plan = intro_plan();
    let model = DataModel::MomentBinary { q: vec![0.0, 1.0, 1.0], dim: 1 };
    let n = 100_000;
    let s = run_survey(&model, &plan, n, &mut rep_rng(7, 0)).unwrap();
    // payment X = 7.2 w.p. 3/4, 8 * Bernoulli(0.8) w.p. 1/4
    let ex2 = 0.75 * 7.2 * 7.2 + 0.25 * 0.8 * 64.0;
    let sigma = ((ex2 - 49.0) / n as f64).sqrt();
    let spend = s.total_spend / n as f64;
    assert!((spend - 7.0).abs() <= 3.0 * sigma, "spend {spend}, sigma {sigma}");

    let (k, m) = (s.type_selected[2] as f64, s.type_counts[2] as f64);
    let sd = (0.8 * 0.2 / m).sqrt();
    assert!((k / m - 0.8).abs() <= 3.0 * sd);
    assert_eq!(s.type_selected[0], s.type_counts[0]);
    assert_eq!(s.type_selected[1], s.type_counts[1]);
}

#[test]
fn every_type_takes_its_own_item() {
    let m = design_mechanism(&intro(), 7.0).unwrap();
    let plan = SurveyPlan::from_mechanism(&m);
    for (t, (a, p)) in plan.treatment().iter().enumerate() {
        assert!((a - m.design.probs.probs()[t]).abs() < 1e-9);
        assert!((p - m.payments.prices[t]).abs() < 1e-9);
    }
    let model = DataModel::MomentBinary { q: vec![0.5; 3], dim: 1 };
    let s = run_survey(&model, &plan, 5000, &mut rep_rng(3, 9)).unwrap();
    for o in &s.selected {
        assert!((o.price - m.payments.prices[o.type_index]).abs() < 1e-9);
        assert!((o.prob - m.design.probs.probs()[o.type_index]).abs() < 1e-9);
    }
}

#[test]
fn horvitz_thompson_examples() {
    let all: Vec<_> = [0.0, 1.0, 1.0, 0.0].iter().map(|m| obs(1.0, *m)).collect();
    assert_eq!(ht_estimate(&all, 4).unwrap(), 0.5);
    assert_eq!(ht_estimate(&[obs(0.5, 1.0)], 2).unwrap(), 1.0);
    assert_eq!(ht_estimate(&[], 10).unwrap(), 0.0);
    assert!(matches!(ht_estimate(&[obs(0.0, 1.0)], 1), Err(SurveyError::ZeroAllocation(0))));

    let mut two = obs(0.5, 1.0);
    two.m = vec![1.0, 1.0];
    assert_eq!(ht_estimate_multi(&[two.clone()], 2, 2).unwrap(), vec![1.0, 1.0]);
    assert_eq!(ht_estimate_multi(&[two], 2, 1).unwrap(), vec![ht_estimate(&[obs(0.5, 1.0)], 2).unwrap()]);
}

#[test]
fn wls_with_constant_feature_is_a_weighted_mean() {
    let data = [(0.5, 1.0), (1.0, 0.0), (0.25, 1.0), (0.8, 0.0)];
    let sample: Vec<Observation> = data
        .iter()
        .map(|&(prob, m)| Observation {
            type_index: 0,
            prob,
            price: 0.0,
            m: Vec::new(),
            x: vec![-1.0],
            y: -m,
        })
        .collect();
    let w: f64 = data.iter().map(|(a, _)| 1.0 / a).sum();
    let num: f64 = data.iter().map(|(a, m)| m / a).sum();
    let theta = wls_estimate(&sample).unwrap();
    assert!((theta[0] - num / w).abs() < 1e-12);
    assert!(matches!(wls_estimate(&[]), Err(SurveyError::SingularGram)));
    let flat = Observation {
        x: vec![1.0, 1.0],
        ..sample[0].clone()
    };
    assert!(matches!(wls_estimate(&[flat.clone(), flat]), Err(SurveyError::SingularGram)));
}

fn regression_setup(b: f64) -> (DataModel, SurveyPlan) {
    let inst = RegressionInstance::new(DiscreteCostDistribution::uniform(vec![1.0, 4.0]).unwrap(), -1.0, 2.0, b).unwrap();
    let d = design_regression(&inst).unwrap();
    let plan = SurveyPlan::from_regression(&d, &inst);
    let model = DataModel::Regression {
        theta_star: vec![0.5, -1.0],
        noise_lo: -1.0,
        noise_hi: 2.0,
        q: plan.adversary.clone().unwrap(),
        feature_scale: 1.0,
    };
    (model, plan)
}

#[test]
fn noiseless_regression_is_exact() {
    let (_, plan) = regression_setup(1.0);
    let model = DataModel::Regression {
        theta_star: vec![0.5, -1.0],
        noise_lo: 0.0,
        noise_hi: 0.0,
        q: vec![0.3, 0.9],
        feature_scale: 2.0,
    };
    let s = run_survey(&model, &plan, 200, &mut rep_rng(5, 0)).unwrap();
    let theta = wls_estimate(&s.selected).unwrap();
    assert!((theta[0] - 0.5).abs() < 1e-12 && (theta[1] + 1.0).abs() < 1e-12);
}

#[test]
fn regression_risk_shrinks_with_n() {
    let (model, plan) = regression_setup(1.0);
    let small = monte_carlo(&model, &plan, &config(1_000, 300, 11)).unwrap().0;
    let large = monte_carlo(&model, &plan, &config(10_000, 300, 11)).unwrap().0;
    let mse = |r: &SimulationReport| r.empirical_variance_scaled / r.n as f64;
    assert!(mse(&large) < mse(&small) / 4.0, "{} vs {}", mse(&large), mse(&small));
    // n-scaled risk tracks the analytic value
    let gap = (large.empirical_variance_scaled - large.predicted_value).abs() / large.predicted_value;
    assert!(gap < 0.15, "risk {} vs {}", large.empirical_variance_scaled, large.predicted_value);
}

#[test]
fn zero_data_has_zero_variance() {
    let model = DataModel::MomentBinary { q: vec![0.0; 3], dim: 1 };
    let (r, recs) = monte_carlo(&model, &intro_plan(), &config(500, 20, 1)).unwrap();
    assert_eq!(r.empirical_variance_scaled, 0.0);
    assert!(recs.iter().all(|x| x.estimate == vec![0.0]));
}

#[test]
fn estimates_are_unbiased() {
    let plan = intro_plan();
    for (i, q) in [vec![0.2, 0.9, 0.4], vec![1.0, 0.0, 1.0], vec![0.5, 0.5, 0.5]].into_iter().enumerate() {
        let model = DataModel::MomentBinary { q, dim: 2 };
        let r = monte_carlo(&model, &plan, &config(2_000, 400, 100 + i as u64)).unwrap().0;
        for j in 0..2 {
            let err = (r.mean_estimate[j] - r.truth[j]).abs();
            assert!(err <= 4.0 * r.estimate_se[j], "coordinate {j}: {err} vs se {}", r.estimate_se[j]);
        }
    }
}

#[test]
fn worst_case_dominates_any_adversary() {
    let m = design_mechanism(&intro(), 7.0).unwrap();
    let plan = SurveyPlan::from_mechanism(&m);
    let (worst, _) = worst_case_variance(&m.design.probs, &intro()).unwrap();
    let reps = 1000;
    for q in [vec![0.1, 0.8, 0.3], vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]] {
        let model = DataModel::MomentBinary { q, dim: 1 };
        let r = monte_carlo(&model, &plan, &config(2_000, reps, 5)).unwrap().0;
        // sd of a sample variance is about var * sqrt(2 / (reps - 1))
        let se = r.empirical_variance_scaled * (2.0 / (reps - 1) as f64).sqrt();
        assert!(r.empirical_variance_scaled <= worst + 3.0 * se, "{} > {worst}", r.empirical_variance_scaled);
    }
}

#[test]
fn spend_matches_expected_budget() {
    let m = design_mechanism(&intro(), 7.0).unwrap();
    let expected = expected_budget(&m.design.probs, &m.payments, &intro()).unwrap();
    let model = DataModel::MomentBinary { q: vec![0.5; 3], dim: 1 };
    let r = monte_carlo(&model, &SurveyPlan::from_mechanism(&m), &config(1_000, 200, 8)).unwrap().0;
    assert!((r.mean_spend_per_agent - expected).abs() <= 4.0 * r.spend_se);
}

#[test]
fn runs_are_reproducible() {
    let model = DataModel::MomentBinary { q: vec![0.3, 0.6, 0.9], dim: 2 };
    let mut cfg = config(1_000, 50, 42);
    cfg.adversarial = true;
    let a = monte_carlo(&model, &intro_plan(), &cfg).unwrap();
    let b = monte_carlo(&model, &intro_plan(), &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 43;
    let c = monte_carlo(&model, &intro_plan(), &cfg).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn scalar_and_one_dimensional_models_agree() {
    let plan = intro_plan();
    let model = DataModel::MomentBinary { q: vec![0.3, 0.6, 0.9], dim: 1 };
    let mut rng = rep_rng(9, 2);
    let s = run_survey(&model, &plan, 3_000, &mut rng).unwrap();
    assert_eq!(
        ht_estimate_multi(&s.selected, 3_000, 1).unwrap(),
        vec![ht_estimate(&s.selected, 3_000).unwrap()]
    );
}

#[test]
fn invalid_models_are_rejected() {
    let plan = intro_plan();
    let bad_q = DataModel::MomentBinary { q: vec![0.3, 0.6], dim: 1 };
    assert!(monte_carlo(&bad_q, &plan, &config(10, 2, 0)).is_err());
    let (mut model, rplan) = regression_setup(1.0);
    if let DataModel::Regression { q, .. } = &mut model {
        *q = vec![0.9, 0.9];
    }
    assert!(monte_carlo(&model, &rplan, &config(10, 2, 0)).is_err());
    assert!(monte_carlo(&bad_q, &plan, &config(0, 2, 0)).is_err());
}

#[test]
fn empty_regression_selections_count_as_zero() {
    let (model, plan) = regression_setup(1.0);
    // two agents rarely give a full-rank two-feature sample
    let (r, recs) = monte_carlo(&model, &plan, &config(2, 200, 3)).unwrap();
    assert_eq!(recs.len(), 200);
    assert!(recs.iter().any(|x| x.estimate == vec![0.0, 0.0]));
    assert!(r.empirical_variance_scaled.is_finite());
}
