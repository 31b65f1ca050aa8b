//! Truthful mechanisms: payments, posted menus and IC/IR checks, plus the
//! end-to-end design pipeline through virtual costs.

use serde::{Deserialize, Serialize};

use crate::cost_model::{virtual_costs_discrete, DiscreteCostDistribution, VirtualCostDistribution};
use crate::error::{Result, SurveyError};
use crate::moment_design::{design_moment_discrete, AllocationRule, MomentDesign};

/// Absolute tolerance on utility differences in [`check_ic_ir`].
pub const IC_TOL: f64 = 1e-10;
/// Absolute tolerance of the payment integral in [`payment_continuous`].
pub const PAYMENT_QUAD_TOL: f64 = 1e-9;
/// Prices (and probabilities) closer than this are the same menu item.
const MENU_TIE: f64 = 1e-9;

/// Payment conditional on selection, per cost type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PaymentRule {
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MenuItem {
    pub price: f64,
    pub prob: f64,
}

/// Posted menu, sorted by probability descending (prices ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Menu {
    pub items: Vec<MenuItem>,
}

impl Menu {
    /// The item an agent with cost `c` picks: highest `(price - c) * prob`,
    /// ties going to the higher probability. `None` if every item has
    /// negative utility.
    pub fn choose(&self, c: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, item) in self.items.iter().enumerate() {
            let u = (item.price - c) * item.prob;
            match best {
                Some((_, bu)) if u <= bu + MENU_TIE => {}
                _ => best = Some((i, u)),
            }
        }
        best.filter(|(_, u)| *u >= -IC_TOL).map(|(i, _)| i)
    }
}

/// `P_n = c_n`, `P_t = c_t + sum_{j>t} (A_j / A_t)(c_j - c_{j-1})`.
pub fn payments_discrete(a: &AllocationRule, costs: &[f64]) -> Result<PaymentRule> {
    let n = costs.len();
    if a.len() != n {
        return Err(SurveyError::DimensionMismatch { expected: n, got: a.len() });
    }
    if n == 0 {
        return Err(SurveyError::InvalidArgument("empty cost support".into()));
    }
    a.check_monotone(0.0)?;
    let p = a.probs();
    let mut prices = vec![0.0; n];
    // tail = sum_{j>t} A_j (c_j - c_{j-1})
    let mut tail = 0.0;
    prices[n - 1] = costs[n - 1];
    for t in (0..n - 1).rev() {
        tail += p[t + 1] * (costs[t + 1] - costs[t]);
        prices[t] = costs[t] + tail / p[t];
    }
    Ok(PaymentRule { prices })
}

/// `P(c) = c + (1/A(c)) * integral_c^{c_max} A(z) dz`, integrated by
/// adaptive Simpson to [`PAYMENT_QUAD_TOL`].
pub fn payment_continuous(a: impl Fn(f64) -> f64, c: f64, c_max: f64) -> Result<f64> {
    if !(c.is_finite() && c >= 0.0 && c <= c_max) {
        return Err(SurveyError::OutOfSupport(c));
    }
    let at = a(c);
    if !(at > 0.0) {
        return Err(SurveyError::ZeroAllocation(0));
    }
    if c == c_max {
        return Ok(c);
    }
    let integral = adaptive_simpson(&a, c, c_max, PAYMENT_QUAD_TOL);
    Ok(c + integral / at)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub(crate) fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &impl Fn(f64) -> f64,
        (a, fa): (f64, f64),
        (m, fm): (f64, f64),
        (b, fb): (f64, f64),
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, rm) = ((a + m) / 2.0, (m + b) / 2.0);
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, (a, fa), (lm, flm), (m, fm), left, tol / 2.0, depth - 1)
            + step(f, (m, fm), (rm, frm), (b, fb), right, tol / 2.0, depth - 1)
    }
    let m = (a + b) / 2.0;
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, (a, fa), (m, fm), (b, fb), whole, tol, 48)
}

/// Per-agent expected spend `sum_t pi_t P_t A_t`.
pub fn expected_budget(
    a: &AllocationRule,
    p: &PaymentRule,
    dist: &DiscreteCostDistribution,
) -> Result<f64> {
    let n = dist.len();
    for got in [a.len(), p.prices.len()] {
        if got != n {
            return Err(SurveyError::DimensionMismatch { expected: n, got });
        }
    }
    Ok(dist
        .pmf()
        .iter()
        .zip(a.probs())
        .zip(&p.prices)
        .map(|((pi, at), pt)| pi * pt * at)
        .sum())
}

/// Distinct `(price, prob)` pairs in cost order. Pooled types share one item.
pub fn build_menu(a: &AllocationRule, p: &PaymentRule) -> Menu {
    let mut items: Vec<MenuItem> = Vec::new();
    for (&prob, &price) in a.probs().iter().zip(&p.prices) {
        let dup = items.iter().any(|it| {
            (it.prob - prob).abs() <= MENU_TIE && (it.price - price).abs() <= MENU_TIE * price.max(1.0)
        });
        if !dup {
            items.push(MenuItem { price, prob });
        }
    }
    items.sort_by(|x, y| y.prob.total_cmp(&x.prob).then(x.price.total_cmp(&y.price)));
    Menu { items }
}

/// The first failed condition found by [`check_ic_ir`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Type `truth` gains `gain` by reporting `report`.
    Ic { truth: usize, report: usize, gain: f64 },
    /// `P_t < c_t`.
    Ir { index: usize, shortfall: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcIrReport {
    pub passed: bool,
    pub witness: Option<Violation>,
}

/// Checks `(P_t - c_t) A_t >= (P_s - c_t) A_s` for all `t, s` and `P_t >= c_t`,
/// both within [`IC_TOL`].
pub fn check_ic_ir(costs: &[f64], a: &AllocationRule, p: &PaymentRule) -> Result<IcIrReport> {
    check_ic_ir_with_tol(costs, a, p, IC_TOL)
}

/// [`check_ic_ir`] with a caller-chosen absolute tolerance.
pub fn check_ic_ir_with_tol(
    costs: &[f64],
    a: &AllocationRule,
    p: &PaymentRule,
    tol: f64,
) -> Result<IcIrReport> {
    let n = costs.len();
    for got in [a.len(), p.prices.len()] {
        if got != n {
            return Err(SurveyError::DimensionMismatch { expected: n, got });
        }
    }
    let (probs, prices) = (a.probs(), &p.prices);
    let fail = |v| Ok(IcIrReport { passed: false, witness: Some(v) });
    for t in 0..n {
        if prices[t] < costs[t] - tol {
            return fail(Violation::Ir { index: t, shortfall: costs[t] - prices[t] });
        }
        let own = (prices[t] - costs[t]) * probs[t];
        for s in 0..n {
            let gain = (prices[s] - costs[t]) * probs[s] - own;
            if gain > tol {
                return fail(Violation::Ic { truth: t, report: s, gain });
            }
        }
    }
    Ok(IcIrReport { passed: true, witness: None })
}

/// A complete truthful survey for a discrete prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismDesign {
    pub true_costs: DiscreteCostDistribution,
    pub virtual_costs: VirtualCostDistribution,
    /// The allocation computed on virtual costs; index `t` is true type `t`.
    pub design: MomentDesign,
    pub payments: PaymentRule,
    pub menu: Menu,
    pub expected_spend_per_agent: f64,
}

impl MechanismDesign {
    /// Purchase probability for a true cost in the support.
    pub fn alloc_at(&self, c: f64) -> Result<f64> {
        let t = self.true_costs.index_of(c).ok_or(SurveyError::OutOfSupport(c))?;
        Ok(self.design.probs.probs()[t])
    }

    /// Index into the menu of the item chosen by an agent with true cost `c`.
    pub fn choose_item(&self, c: f64) -> Option<usize> {
        self.menu.choose(c)
    }
}

/// Design on `phi(F)`, then price on the true costs.
pub fn design_mechanism(
    f_true: &DiscreteCostDistribution,
    budget_per_agent: f64,
) -> Result<MechanismDesign> {
    let virt = virtual_costs_discrete(f_true)?;
    let design = design_moment_discrete(&virt.as_distribution()?, budget_per_agent)?;
    let payments = payments_discrete(&design.probs, f_true.costs())?;
    let report = check_ic_ir(f_true.costs(), &design.probs, &payments)?;
    if let Some(w) = report.witness {
        return Err(SurveyError::Internal(format!("payments are not IC/IR: {w:?}")));
    }
    let spend = expected_budget(&design.probs, &payments, f_true)?;
    if spend > budget_per_agent + 1e-9 {
        return Err(SurveyError::Internal(format!(
            "spend {spend} exceeds budget {budget_per_agent}"
        )));
    }
    let virtual_spend: f64 = f_true
        .pmf()
        .iter()
        .zip(&virt.virtual_costs)
        .zip(design.probs.probs())
        .map(|((pi, phi), at)| pi * phi * at)
        .sum();
    if (spend - virtual_spend).abs() > 1e-9 * spend.abs().max(1.0) {
        return Err(SurveyError::Internal(format!(
            "budget identity failed: {spend} vs {virtual_spend}"
        )));
    }
    let menu = build_menu(&design.probs, &payments);
    Ok(MechanismDesign {
        true_costs: f_true.clone(),
        virtual_costs: virt,
        design,
        payments,
        menu,
        expected_spend_per_agent: spend,
    })
}
