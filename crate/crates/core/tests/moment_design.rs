use proptest::prelude::*;
use survey_core::moment_design::{g_fun, q_infinity, r_infinity};
use survey_core::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn virtual_intro() -> DiscreteCostDistribution {
    DiscreteCostDistribution::new(vec![0.0, 12.0, 20.0], vec![0.5, 0.25, 0.25]).unwrap()
}

fn spend(f: &DiscreteCostDistribution, a: &[f64]) -> f64 {
    f.pmf().iter().zip(f.costs()).zip(a).map(|((p, c), x)| p * c * x).sum()
}

#[test]
fn threshold_functions_by_hand() {
    let f = virtual_intro();
    let q21 = 3.0 + 240f64.sqrt() / 4.0;
    assert!(close(q_fun(&f, 2, 1.0).unwrap(), q21, 1e-12));
    assert!(close(r_fun(&f, 2, 1.0).unwrap(), 1.0, 1e-12));
    assert!(close(b_fun(&f, 2, 1.0).unwrap(), q21, 1e-12));
    assert!(close(q_fun(&f, 3, 1.0).unwrap(), 8.0, 1e-12));
    assert!(close(r_fun(&f, 3, 1.0).unwrap(), 0.8, 1e-12));
    assert!(close(b_fun(&f, 3, 1.0).unwrap(), 10.0, 1e-12));
    assert!(close(r_fun(&f, 0, 1.0).unwrap(), 2.0, 1e-15));
    assert!(q_fun(&f, 4, 1.0).is_err());
    assert!(q_fun(&f, 2, 0.0).is_err());
}

#[test]
fn three_type_virtual_design() {
    let d = design_moment_discrete(&virtual_intro(), 7.0).unwrap();
    for (a, b) in d.probs.probs().iter().zip([1.0, 1.0, 0.8]) {
        assert!(close(*a, b, 1e-9));
    }
    assert_eq!(d.pool_end, 2);
    assert!(close(d.pooled_level, 1.0, 1e-12));
    assert_eq!(d.case, DesignCase::PooledInterior);
    assert_eq!(d.k_star, Some(2));
    let x = d.x_star.unwrap();
    assert!(close(x, 0.976, 1e-3), "x* = {x}");
    assert!(r_fun(&virtual_intro(), 2, x).unwrap() < 1.0);
    assert!(close(d.budget_spend, 7.0, 1e-9));
    assert!(close(d.alloc_at(20.0).unwrap(), 0.8, 1e-9));
}

#[test]
fn corner_designs() {
    let f = DiscreteCostDistribution::uniform(vec![1.0, 2.0]).unwrap();
    let d = design_moment_discrete(&f, 1.2).unwrap();
    assert!(d.probs.probs().iter().all(|a| close(*a, 0.8, 1e-12)));

    let f = DiscreteCostDistribution::uniform(vec![1.0, 4.0]).unwrap();
    let d = design_moment_discrete(&f, 0.6).unwrap();
    assert!(close(d.probs.probs()[0], 0.4, 1e-12) && close(d.probs.probs()[1], 0.2, 1e-12));
    assert_eq!(d.pool_end, 0);
    assert_eq!(d.case, DesignCase::NoPoolLowBudget);
    assert!(close(d.value, 2.75, 1e-12));

    let d = design_moment_discrete(&f, 5.0).unwrap();
    assert_eq!(d.case, DesignCase::FlatHighBudget);
    assert!(d.probs.probs().iter().all(|a| *a == 1.0));
}

#[test]
fn budget_errors() {
    let f = virtual_intro();
    assert!(matches!(design_moment_discrete(&f, 0.0), Err(SurveyError::InfeasibleBudget(_))));
    assert!(matches!(design_moment_discrete(&f, -1.0), Err(SurveyError::InfeasibleBudget(_))));
    assert!(matches!(design_moment_discrete(&f, f64::NAN), Err(SurveyError::InfeasibleBudget(_))));
}

/// Bisection on the uniform closed forms `Q = (2/3) sqrt(x) - x^2/6`, `R = 2 - x`.
fn uniform_threshold(b: f64) -> f64 {
    let g = |x: f64| ((2.0 / 3.0) * x.sqrt() - x * x / 6.0) / (2.0 - x);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn continuous_uniform() {
    let u = ContinuousCostDistribution::Uniform;
    let d = design_moment_continuous(&u, 0.3).unwrap();
    assert!(close(d.x_star, uniform_threshold(0.3), 1e-9));
    assert!(close(d.x_star, 0.54, 0.01));
    assert!(close(d.pooled_level, 1.0 / (2.0 - d.x_star), 1e-12));
    assert!(close(d.pooled_level, 0.685, 0.005));
    assert_eq!(d.alloc_at(0.25).unwrap(), d.pooled_level);
    assert!(close(d.alloc_at(1.0).unwrap(), d.alpha, 1e-15));

    let d = design_moment_continuous(&u, 0.5).unwrap();
    assert_eq!((d.x_star, d.pooled_level), (1.0, 1.0));
    assert_eq!(d.alloc_at(0.7).unwrap(), 1.0);
}

#[test]
fn continuous_g_bounds() {
    // E[c] >= 1/2 for p >= 0; then 1 <= R_inf <= 2 brackets G
    for p in [0.0, 0.5, 2.0] {
        let f = ContinuousCostDistribution::power(p).unwrap();
        for i in 1..=20 {
            let x = i as f64 / 20.0;
            let (q, g) = (q_infinity(&f, x), g_fun(&f, x));
            let r = r_infinity(&f, x);
            assert!((1.0 - 1e-12..=2.0 + 1e-12).contains(&r), "R = {r}");
            assert!(g >= q / 2.0 - 1e-12 && g <= q + 1e-12);
        }
    }
}

#[test]
fn discrete_designs_approach_continuous() {
    let u = ContinuousCostDistribution::Uniform;
    let cont = design_moment_continuous(&u, 0.3).unwrap();
    let gap = |eps: f64| {
        let f = discretize(&u, eps).unwrap();
        let d = design_moment_discrete(&f, 0.3).unwrap();
        f.costs()
            .iter()
            .zip(d.probs.probs())
            .map(|(c, a)| (a - cont.alloc_at(*c).unwrap()).abs())
            .fold(0.0, f64::max)
    };
    assert!(gap(0.01) < gap(0.02));
}

#[test]
fn multi_dimensional_design_is_scalar_design() {
    let f = virtual_intro();
    let one = design_moment_discrete(&f, 7.0).unwrap();
    let three = design_moment_multi(&f, 7.0, 3).unwrap();
    assert_eq!(three.probs, one.probs);
    assert_eq!(three.value, 3.0 * one.value);
    assert!(design_moment_multi(&f, 7.0, 0).is_err());
}

pub fn arb_dist(max_len: usize) -> impl Strategy<Value = DiscreteCostDistribution> {
    (1..=max_len)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.05f64..3.0, n),
                prop::collection::vec(0.05f64..1.0, n),
                prop::bool::weighted(0.2),
            )
        })
        .prop_map(|(gaps, w, zero_first)| {
            let mut c = 0.0;
            let costs: Vec<f64> = gaps
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    if !(i == 0 && zero_first && gaps.len() > 1) {
                        c += g;
                    }
                    c
                })
                .collect();
            let s: f64 = w.iter().sum();
            DiscreteCostDistribution::new(costs, w.iter().map(|x| x / s).collect()).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn designs_are_monotone_and_bind(f in arb_dist(8), frac in 0.02f64..1.2) {
        let b = frac * f.mean();
        let d = design_moment_discrete(&f, b).unwrap();
        let a = d.probs.probs();
        prop_assert!(a.iter().all(|x| *x > 0.0 && *x <= 1.0));
        prop_assert!(a.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let s = spend(&f, a);
        if a.iter().all(|x| *x == 1.0) {
            prop_assert!(s <= b + 1e-9);
        } else {
            prop_assert!((s - b).abs() <= 1e-9 * b.max(1.0), "spend {} vs {}", s, b);
        }
        // pooled below t*, alpha / sqrt(c) above
        for (t, (c, x)) in f.costs().iter().zip(a).enumerate() {
            if t < d.pool_end {
                prop_assert!((x - d.pooled_level).abs() <= 1e-9);
            } else {
                prop_assert!((x - (d.alpha / c.sqrt()).min(1.0)).abs() <= 1e-9);
            }
        }
        // zero-cost types are always pooled
        if f.costs()[0] == 0.0 {
            prop_assert!(d.pool_end >= 1);
        }
    }

    #[test]
    fn scale_invariance(f in arb_dist(6), frac in 0.05f64..1.0, s in 0.1f64..20.0) {
        let b = frac * f.mean();
        let d = design_moment_discrete(&f, b).unwrap();
        let ds = design_moment_discrete(&f.scaled(s).unwrap(), b * s).unwrap();
        for (x, y) in d.probs.probs().iter().zip(ds.probs.probs()) {
            prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
        }
    }

    #[test]
    fn low_budget_formula(f in arb_dist(8), frac in 0.01f64..1.0) {
        let c = f.costs();
        prop_assume!(c[0] > 0.0);
        let e_sqrt: f64 = f.expect(f64::sqrt);
        let corner = c[0].sqrt() * e_sqrt / 2.0;
        let b = frac * corner;
        let d = design_moment_discrete(&f, b).unwrap();
        for (ct, a) in c.iter().zip(d.probs.probs()) {
            prop_assert!((a - b / (ct.sqrt() * e_sqrt)).abs() <= 1e-12);
        }
    }

    #[test]
    fn high_budget_formula(f in arb_dist(8), extra in 0.0f64..2.0) {
        let b = f.max_cost() / 2.0 * (1.0 + extra);
        let d = design_moment_discrete(&f, b).unwrap();
        let level = (b / f.mean()).min(1.0);
        for a in d.probs.probs() {
            prop_assert!((a - level).abs() <= 1e-12);
        }
    }

    #[test]
    fn threshold_claims(f in arb_dist(8)) {
        let n = f.len();
        for k in 1..n {
            let (q0, q1) = (q_fun(&f, k, 1.0).unwrap(), q_fun(&f, k + 1, 1.0).unwrap());
            let (r0, r1) = (r_fun(&f, k, 1.0).unwrap(), r_fun(&f, k + 1, 1.0).unwrap());
            prop_assert!(r0 >= r1 - 1e-12);
            prop_assert!(q0 <= q1 + 1e-12);
            prop_assert!(b_fun(&f, k, 1.0).unwrap() <= b_fun(&f, k + 1, 1.0).unwrap() * (1.0 + 1e-12) + 1e-12);
        }
    }

    /// No feasible allocation beats the design's worst-case variance.
    #[test]
    fn design_beats_random_feasible_rules(
        f in arb_dist(5),
        frac in 0.05f64..1.0,
        raw in prop::collection::vec(0.01f64..1.0, 5),
    ) {
        let b = frac * f.mean();
        let d = design_moment_discrete(&f, b).unwrap();
        let mut a: Vec<f64> = raw[..f.len()].to_vec();
        a.sort_by(|x, y| y.total_cmp(x));
        let s = spend(&f, &a);
        if s > 0.0 {
            let k = (b / s).min(1.0 / a[0]);
            a.iter_mut().for_each(|x| *x *= k);
        }
        let rule = AllocationRule::new(a).unwrap();
        let (v, _) = worst_case_variance(&rule, &f).unwrap();
        prop_assert!(v >= d.value - 1e-9 * d.value.max(1.0), "{} < {}", v, d.value);
    }
}
