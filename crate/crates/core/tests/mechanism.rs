use proptest::prelude::*;
use survey_core::*;

fn intro() -> DiscreteCostDistribution {
    DiscreteCostDistribution::new(vec![0.0, 4.0, 8.0], vec![0.5, 0.25, 0.25]).unwrap()
}

fn rule(a: &[f64]) -> AllocationRule {
    AllocationRule::new(a.to_vec()).unwrap()
}

/// Virtual costs straight from the definition.
fn phi(f: &DiscreteCostDistribution) -> Vec<f64> {
    let (c, pi) = (f.costs(), f.pmf());
    let mut below = 0.0;
    (0..c.len())
        .map(|t| {
            let prev = if t == 0 { 0.0 } else { c[t - 1] };
            let v = c[t] + (c[t] - prev) * below / pi[t];
            below += pi[t];
            v
        })
        .collect()
}

#[test]
fn intro_payments_and_menu() {
    let a = rule(&[1.0, 1.0, 0.8]);
    let p = payments_discrete(&a, intro().costs()).unwrap();
    for (x, y) in p.prices.iter().zip([7.2, 7.2, 8.0]) {
        assert!((x - y).abs() < 1e-12);
    }
    let spend = expected_budget(&a, &p, &intro()).unwrap();
    assert!((spend - 7.0).abs() < 1e-12);
    let menu = build_menu(&a, &p);
    assert_eq!(menu.items.len(), 2);
    assert!((menu.items[0].price - 7.2).abs() < 1e-12 && menu.items[0].prob == 1.0);
    assert!((menu.items[1].price - 8.0).abs() < 1e-12 && menu.items[1].prob == 0.8);

    let r = check_ic_ir(intro().costs(), &a, &p).unwrap();
    assert!(r.passed && r.witness.is_none());
    // the cost-4 agent is indifferent and takes the sure item
    assert!(((7.2 - 4.0) * 1.0 - (8.0 - 4.0) * 0.8_f64).abs() < 1e-12);
    assert_eq!(menu.choose(4.0), Some(0));
    assert_eq!(menu.choose(8.0), Some(1));
    assert_eq!(menu.choose(0.0), Some(0));
    assert_eq!(menu.choose(9.0), None);
}

#[test]
fn trivial_payments() {
    let c = [1.0, 2.5, 6.0];
    let p = payments_discrete(&rule(&[1.0; 3]), &c).unwrap();
    assert!(p.prices.iter().all(|x| (x - 6.0).abs() < 1e-12));
    let f = DiscreteCostDistribution::uniform(c.to_vec()).unwrap();
    assert!((expected_budget(&rule(&[1.0; 3]), &p, &f).unwrap() - 6.0).abs() < 1e-12);
    assert_eq!(build_menu(&rule(&[0.7; 3]), &payments_discrete(&rule(&[0.7; 3]), &c).unwrap()).items.len(), 1);
    assert_eq!(build_menu(&rule(&[0.9, 0.6, 0.3]), &payments_discrete(&rule(&[0.9, 0.6, 0.3]), &c).unwrap()).items.len(), 3);
    assert_eq!(payments_discrete(&rule(&[0.5]), &[3.0]).unwrap().prices, vec![3.0]);
    assert!(matches!(
        payments_discrete(&rule(&[0.5, 0.9]), &[1.0, 2.0]),
        Err(SurveyError::NonMonotoneAllocation { .. })
    ));
}

#[test]
fn underpaid_low_type_fails() {
    let a = rule(&[1.0, 0.5]);
    let p = PaymentRule { prices: vec![1.0, 2.0] };
    let r = check_ic_ir(&[1.0, 2.0], &a, &p).unwrap();
    assert!(!r.passed);
    match r.witness {
        Some(Violation::Ic { truth: 0, report: 1, gain }) => assert!((gain - 0.5).abs() < 1e-12),
        w => panic!("unexpected witness {w:?}"),
    }
    let r = check_ic_ir(&[1.0, 2.0], &a, &PaymentRule { prices: vec![1.5, 1.9] }).unwrap();
    assert!(matches!(r.witness, Some(Violation::Ir { index: 1, .. })));
}

#[test]
fn continuous_payments() {
    assert!((payment_continuous(|_| 1.0, 0.3, 1.0).unwrap() - 1.0).abs() < 1e-9);
    for c in [0.0, 0.2, 0.9] {
        assert!((payment_continuous(|_| 0.37, c, 1.0).unwrap() - 1.0).abs() < 1e-9);
    }
    let p = payment_continuous(|z: f64| (0.5 / z.sqrt()).min(1.0), 0.25, 1.0).unwrap();
    assert!((p - 0.75).abs() < 1e-9, "{p}");
    // pooled below 0.25, alpha / sqrt(z) above: c + (0.25 - c) + 0.5 from the tail
    let kinked = |z: f64| if z < 0.25 { 1.0 } else { 0.5 / z.sqrt() };
    let p = payment_continuous(kinked, 0.1, 1.0).unwrap();
    assert!((p - 0.1 - (0.15 + 0.5)).abs() < 1e-9, "{p}");
    assert!(payment_continuous(|_| 1.0, 1.5, 1.0).is_err());
    assert!(matches!(payment_continuous(|_| 0.0, 0.5, 1.0), Err(SurveyError::ZeroAllocation(_))));
}

#[test]
fn intro_end_to_end() {
    let m = design_mechanism(&intro(), 7.0).unwrap();
    assert_eq!(m.virtual_costs.virtual_costs, vec![0.0, 12.0, 20.0]);
    assert!((m.expected_spend_per_agent - 7.0).abs() < 1e-9);
    let prices: Vec<f64> = m.menu.items.iter().map(|i| i.price).collect();
    let probs: Vec<f64> = m.menu.items.iter().map(|i| i.prob).collect();
    assert!((prices[0] - 7.2).abs() < 1e-9 && (prices[1] - 8.0).abs() < 1e-9);
    assert!((probs[0] - 1.0).abs() < 1e-9 && (probs[1] - 0.8).abs() < 1e-9);
    assert!((m.alloc_at(4.0).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn generous_budget_pays_max_cost() {
    // E[phi] = 8, so any B >= 8 buys everyone at c_max
    let m = design_mechanism(&intro(), 8.0).unwrap();
    assert!(m.design.probs.probs().iter().all(|a| *a == 1.0));
    assert!(m.payments.prices.iter().all(|p| (p - 8.0).abs() < 1e-12));
    assert!((m.expected_spend_per_agent - 8.0).abs() < 1e-12);
    assert_eq!(m.menu.items.len(), 1);

    let single = DiscreteCostDistribution::new(vec![3.0], vec![1.0]).unwrap();
    let m = design_mechanism(&single, 5.0).unwrap();
    assert_eq!(m.menu.items, vec![MenuItem { price: 3.0, prob: 1.0 }]);
}

#[test]
fn irregular_prior_is_rejected() {
    let f = DiscreteCostDistribution::uniform(vec![1.0, 100.0, 101.0]).unwrap();
    assert!(matches!(design_mechanism(&f, 10.0), Err(SurveyError::NonRegular(_))));
    assert!(matches!(design_mechanism(&intro(), 0.0), Err(SurveyError::InfeasibleBudget(_))));
}

fn arb_instance() -> impl Strategy<Value = (DiscreteCostDistribution, Vec<f64>)> {
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05f64..3.0, n),
            prop::collection::vec(0.05f64..1.0, n),
            prop::collection::vec(0.01f64..=1.0, n),
        )
            .prop_map(|(gaps, w, a)| {
                let costs: Vec<f64> = gaps
                    .iter()
                    .scan(0.0, |c, g| {
                        *c += g;
                        Some(*c)
                    })
                    .collect();
                let s: f64 = w.iter().sum();
                let mut a = a;
                a.sort_by(|x, y| y.total_cmp(x));
                (DiscreteCostDistribution::new(costs, w.iter().map(|x| x / s).collect()).unwrap(), a)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn budget_identity((f, a) in arb_instance()) {
        let a = AllocationRule::new(a).unwrap();
        let p = payments_discrete(&a, f.costs()).unwrap();
        let lhs = expected_budget(&a, &p, &f).unwrap();
        let rhs: f64 = f.pmf().iter().zip(phi(&f)).zip(a.probs()).map(|((pi, v), x)| pi * v * x).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn truthful_payments_are_ic_ir((f, a) in arb_instance()) {
        let a = AllocationRule::new(a).unwrap();
        let p = payments_discrete(&a, f.costs()).unwrap();
        let r = check_ic_ir(f.costs(), &a, &p).unwrap();
        prop_assert!(r.passed, "{:?}", r.witness);
        for (x, c) in p.prices.iter().zip(f.costs()) {
            prop_assert!(x >= c);
        }
        // every type picks its own item from the posted menu (or an equal one)
        let menu = build_menu(&a, &p);
        for (t, c) in f.costs().iter().enumerate() {
            let item = menu.items[menu.choose(*c).unwrap()];
            let chosen = (item.price - c) * item.prob;
            let own = (p.prices[t] - c) * a.probs()[t];
            prop_assert!((chosen - own).abs() <= 1e-8 * own.abs().max(1.0));
        }
    }

    /// Shifting every utility by the same `k` keeps IC; any IC/IR payment
    /// dominates the truthful one.
    #[test]
    fn truthful_payments_are_minimal(
        (f, a) in arb_instance(),
        k in 0.0f64..2.0,
        noise in prop::collection::vec(-0.5f64..0.5, 8),
    ) {
        let a = AllocationRule::new(a).unwrap();
        let star = payments_discrete(&a, f.costs()).unwrap();
        let shifted = PaymentRule {
            prices: star.prices.iter().zip(a.probs()).map(|(p, x)| p + k / x).collect(),
        };
        prop_assert!(check_ic_ir(f.costs(), &a, &shifted).unwrap().passed);
        let random = PaymentRule {
            prices: star.prices.iter().zip(&noise).map(|(p, e)| p + e).collect(),
        };
        if check_ic_ir(f.costs(), &a, &random).unwrap().passed {
            for (x, y) in random.prices.iter().zip(&star.prices) {
                prop_assert!(*x >= y - 1e-9);
            }
        }
    }

    #[test]
    fn designed_mechanisms_respect_budget(
        (f, _) in arb_instance(),
        frac in 0.05f64..1.5,
    ) {
        prop_assume!(virtual_costs_discrete(&f).is_ok());
        let e_phi: f64 = f.pmf().iter().zip(phi(&f)).map(|(p, v)| p * v).sum();
        let b = frac * e_phi;
        prop_assume!(b > 0.0);
        let m = design_mechanism(&f, b).unwrap();
        prop_assert!(m.expected_spend_per_agent <= b + 1e-9 * b.max(1.0));
        if m.design.probs.probs().iter().any(|x| *x < 1.0) {
            prop_assert!((m.expected_spend_per_agent - b).abs() <= 1e-9 * b.max(1.0));
        }
    }
}
