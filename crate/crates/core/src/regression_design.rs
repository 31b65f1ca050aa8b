//! Optimal allocation rules for regression data with noise bounded in
//! `[L, U]`.
//!
//! The adversary's best response does not depend on the (monotone) allocation:
//! it is a fractional knapsack that fixes the per-type noise scale `gamma_t`.
//! The analyst then minimizes `sum_t pi_t gamma_t^2 / A_t` under the budget,
//! with the optimum taking the form
//!
//! ```text
//! A_t = min(1, mu |L| / sqrt(c_t))   t < t-
//! A_t = A_bar                         t- <= t <= t+
//! A_t = min(1, mu U / sqrt(c_t))     t > t+
//! ```
//!
//! Indices `t*`, `t-`, `t+` are 1-based throughout this module.

use serde::{Deserialize, Serialize};

use crate::cost_model::DiscreteCostDistribution;
use crate::error::{Result, SurveyError};
use crate::game_verify::grid;
use crate::moment_design::AllocationRule;
use crate::par;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    costs: Vec<f64>,
    pmf: Vec<f64>,
    #[serde(rename = "L")]
    noise_lo: f64,
    #[serde(rename = "U")]
    noise_hi: f64,
    budget_per_agent: f64,
}

impl TryFrom<RawInstance> for RegressionInstance {
    type Error = SurveyError;

    fn try_from(raw: RawInstance) -> Result<Self> {
        let dist = DiscreteCostDistribution::new(raw.costs, raw.pmf)?;
        RegressionInstance::new(dist, raw.noise_lo, raw.noise_hi, raw.budget_per_agent)
    }
}

/// Costs (optimization space), noise range and per-agent budget.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct RegressionInstance {
    pub costs_dist: DiscreteCostDistribution,
    pub noise_lo: f64,
    pub noise_hi: f64,
    pub budget_per_agent: f64,
}

impl Serialize for RegressionInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("RegressionInstance", 5)?;
        st.serialize_field("costs", self.costs_dist.costs())?;
        st.serialize_field("pmf", self.costs_dist.pmf())?;
        st.serialize_field("L", &self.noise_lo)?;
        st.serialize_field("U", &self.noise_hi)?;
        st.serialize_field("budget_per_agent", &self.budget_per_agent)?;
        st.end()
    }
}

impl RegressionInstance {
    pub fn new(
        costs_dist: DiscreteCostDistribution,
        noise_lo: f64,
        noise_hi: f64,
        budget_per_agent: f64,
    ) -> Result<Self> {
        if !(noise_lo.is_finite() && noise_hi.is_finite() && noise_lo <= 0.0 && noise_hi >= 0.0) {
            return Err(SurveyError::InvalidArgument(format!(
                "noise range must satisfy L <= 0 <= U, got [{noise_lo}, {noise_hi}]"
            )));
        }
        if !(budget_per_agent.is_finite() && budget_per_agent > 0.0) {
            return Err(SurveyError::InfeasibleBudget(budget_per_agent));
        }
        Ok(Self {
            costs_dist,
            noise_lo,
            noise_hi,
            budget_per_agent,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SurveyError::InvalidArgument(e.to_string()))
    }

    /// `(-U, -L)` in place of `(L, U)`.
    pub fn mirrored(&self) -> Self {
        Self {
            noise_lo: -self.noise_hi,
            noise_hi: -self.noise_lo,
            ..self.clone()
        }
    }

    /// The instance with `L^2 <= U^2`, and whether roles were exchanged.
    fn normalized(&self) -> (Self, bool) {
        if self.noise_lo * self.noise_lo > self.noise_hi * self.noise_hi {
            (self.mirrored(), true)
        } else {
            (self.clone(), false)
        }
    }
}

/// The adversary's knapsack response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnapsackAdversary {
    /// 1-based index of the fractional type.
    pub t_star: usize,
    pub q_star: f64,
    pub r_sq: f64,
    /// `|L|` below `t*`, `R` at `t*`, `U` above.
    pub gamma: Vec<f64>,
    /// Probability of the high noise value `U` per type.
    pub q: Vec<f64>,
}

/// Fills the high noise value from the most expensive type down until the
/// mean-zero capacity `-L/(U-L)` is used up. Uses the instance's `(L, U)` as
/// given; [`design_regression`] normalizes so that `L^2 <= U^2` first.
pub fn adversary_knapsack(instance: &RegressionInstance) -> Result<KnapsackAdversary> {
    let (lo, hi) = (instance.noise_lo, instance.noise_hi);
    if !(lo < 0.0 && hi > 0.0) {
        return Err(SurveyError::DegenerateNoise { lo, hi });
    }
    let pi = instance.costs_dist.pmf();
    let n = pi.len();
    let capacity = -lo / (hi - lo);
    // tail[j] = sum_{t > j} pi_t (0-based j)
    let mut tail = vec![0.0; n];
    for j in (0..n - 1).rev() {
        tail[j] = tail[j + 1] + pi[j + 1];
    }
    let ts = (0..n)
        .find(|&j| capacity > tail[j])
        .ok_or_else(|| SurveyError::Internal("knapsack capacity exceeds total mass".into()))?;
    let q_star = ((capacity - tail[ts]) / pi[ts]).min(1.0);
    let r_sq = (hi * hi - lo * lo) * q_star + lo * lo;
    let gamma = (0..n)
        .map(|t| match t.cmp(&ts) {
            std::cmp::Ordering::Less => -lo,
            std::cmp::Ordering::Equal => r_sq.sqrt(),
            std::cmp::Ordering::Greater => hi,
        })
        .collect();
    let q = (0..n)
        .map(|t| match t.cmp(&ts) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => q_star,
            std::cmp::Ordering::Greater => 1.0,
        })
        .collect();
    Ok(KnapsackAdversary {
        t_star: ts + 1,
        q_star,
        r_sq,
        gamma,
        q,
    })
}

/// `sum_t pi_t gamma_t^2 / A_t`.
pub fn regression_objective(
    a: &AllocationRule,
    instance: &RegressionInstance,
    adversary: &KnapsackAdversary,
) -> Result<f64> {
    let pi = instance.costs_dist.pmf();
    if a.len() != pi.len() {
        return Err(SurveyError::DimensionMismatch {
            expected: pi.len(),
            got: a.len(),
        });
    }
    Ok(pi
        .iter()
        .zip(&adversary.gamma)
        .zip(a.probs())
        .map(|((p, g), at)| p * g * g / at)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDesign {
    pub rule: AllocationRule,
    /// First and last pooled index, 1-based.
    pub t_minus: usize,
    pub t_plus: usize,
    /// Largest index bought with probability 1 outside the pool (0 if none).
    pub t_one: usize,
    pub pooled_level: f64,
    /// `mu = 1/sqrt(lambda)`.
    pub mu: f64,
    pub objective: f64,
    /// True if `L` and `U` were exchanged because `L^2 > U^2`.
    pub swapped: bool,
    /// True when `L = 0` or `U = 0`: mean-zero noise is then identically
    /// zero, every feasible rule is optimal, and a flat rule is returned.
    pub degenerate: bool,
    /// The knapsack response of the normalized instance (absent if degenerate).
    pub adversary: Option<KnapsackAdversary>,
    pub budget_per_agent: f64,
}

/// Closed interval of feasible `mu`.
#[derive(Clone, Copy)]
struct Span {
    lo: f64,
    hi: f64,
}

impl Span {
    /// Intersect with `{mu : a mu >= b}`.
    fn at_least(&mut self, a: f64, b: f64) {
        if a > 0.0 {
            self.lo = self.lo.max(b / a);
        } else if a < 0.0 {
            self.hi = self.hi.min(b / a);
        } else if b > 0.0 {
            self.hi = f64::NEG_INFINITY;
        }
    }

    /// Intersect with `{mu : a mu <= b}`.
    fn at_most(&mut self, a: f64, b: f64) {
        self.at_least(-a, -b);
    }

    fn is_empty(&self) -> bool {
        self.lo > self.hi * (1.0 + 1e-12) + 1e-300
    }
}

struct Candidate {
    probs: Vec<f64>,
    pooled_level: f64,
    mu: f64,
    objective: f64,
}

/// Best rule of the given shape (0-based pool `[lo, hi]`, outside types with
/// index `<= one` capped; `one = None` for no capped types).
fn solve_tuple(
    c: &[f64],
    pi: &[f64],
    gamma: &[f64],
    budget: f64,
    (pool_lo, pool_hi): (usize, usize),
    one: Option<usize>,
) -> Option<Candidate> {
    let n = c.len();
    let outside = |t: usize| t < pool_lo || t > pool_hi;
    let capped = |t: usize| outside(t) && one.is_some_and(|o| t <= o);

    let (mut spent_capped, mut kappa, mut s, mut w) = (0.0, 0.0, 0.0, 0.0);
    for t in 0..n {
        if !outside(t) {
            s += pi[t] * c[t];
            w += pi[t] * gamma[t] * gamma[t];
        } else if capped(t) {
            spent_capped += pi[t] * c[t];
        } else {
            kappa += pi[t] * gamma[t] * c[t].sqrt();
        }
    }
    let rest = budget - spent_capped;
    if rest <= 0.0 {
        return None;
    }
    // A_bar(mu) = p - slope * mu
    let (p, slope) = if s > 0.0 { (rest / s, kappa / s) } else { (1.0, 0.0) };

    let mut span = Span { lo: 0.0, hi: f64::INFINITY };
    for t in (0..n).filter(|&t| outside(t)) {
        let ratio = if c[t] > 0.0 { gamma[t] / c[t].sqrt() } else { f64::INFINITY };
        if capped(t) {
            if ratio.is_finite() {
                span.at_least(ratio, 1.0);
            }
        } else if ratio.is_finite() {
            span.at_most(ratio, 1.0);
        } else {
            return None;
        }
    }
    // 0 < A_bar <= 1
    span.at_least(slope, p - 1.0);
    span.at_most(slope, p);
    // A_{t- - 1} >= A_bar >= A_{t+ + 1}
    if pool_lo > 0 {
        let t = pool_lo - 1;
        if capped(t) {
            span.at_least(slope, p - 1.0);
        } else {
            span.at_least(gamma[t] / c[t].sqrt() + slope, p);
        }
    }
    if pool_hi + 1 < n {
        let t = pool_hi + 1;
        if capped(t) {
            span.at_most(slope, p - 1.0);
        } else {
            span.at_most(gamma[t] / c[t].sqrt() + slope, p);
        }
    }
    if span.is_empty() {
        return None;
    }

    let mu = if s == 0.0 {
        if kappa == 0.0 {
            return None;
        }
        rest / kappa
    } else if kappa > 0.0 {
        rest / (kappa + (w * s).sqrt())
    } else {
        p * (s / w).sqrt()
    };
    let mu = if span.hi.is_finite() {
        mu.clamp(span.lo, span.hi.max(span.lo))
    } else {
        mu.max(span.lo)
    };
    if s == 0.0 && !(mu >= span.lo * (1.0 - 1e-12) && mu <= span.hi * (1.0 + 1e-12)) {
        return None;
    }
    let pooled_level = (p - slope * mu).min(1.0);
    if !(pooled_level > 0.0) || !(mu > 0.0) {
        return None;
    }

    let probs: Vec<f64> = (0..n)
        .map(|t| {
            if !outside(t) {
                pooled_level
            } else if capped(t) || c[t] == 0.0 {
                1.0
            } else {
                (mu * gamma[t] / c[t].sqrt()).min(1.0)
            }
        })
        .collect();
    if probs.windows(2).any(|x| x[1] > x[0] * (1.0 + 1e-10)) {
        return None;
    }
    let spend: f64 = (0..n).map(|t| pi[t] * c[t] * probs[t]).sum();
    if (spend - budget).abs() > 1e-9 * budget.max(1.0) {
        return None;
    }
    let objective = (0..n).map(|t| pi[t] * gamma[t] * gamma[t] / probs[t]).sum();
    Some(Candidate {
        probs,
        pooled_level,
        mu,
        objective,
    })
}

/// Searches every `(t-, t+, t1)` with `t- <= t* <= t+` and returns the
/// feasible candidate of least objective, ties going to the lexicographically
/// first tuple.
pub fn design_regression(instance: &RegressionInstance) -> Result<RegressionDesign> {
    let (inst, swapped) = instance.normalized();
    let dist = &inst.costs_dist;
    let (c, pi) = (dist.costs(), dist.pmf());
    let n = c.len();
    let budget = inst.budget_per_agent;

    if inst.noise_lo == 0.0 {
        let level = (budget / dist.mean()).min(1.0);
        return Ok(RegressionDesign {
            rule: AllocationRule::constant(level, n)?,
            t_minus: 1,
            t_plus: n,
            t_one: 0,
            pooled_level: level,
            mu: 0.0,
            objective: 0.0,
            swapped,
            degenerate: true,
            adversary: None,
            budget_per_agent: budget,
        });
    }

    let adv = adversary_knapsack(&inst)?;
    let ts = adv.t_star - 1;
    let gamma = &adv.gamma;

    if budget >= dist.mean() {
        let mu = (0..n)
            .filter(|&t| c[t] > 0.0)
            .map(|t| c[t].sqrt() / gamma[t])
            .fold(0.0, f64::max);
        let rule = AllocationRule::constant(1.0, n)?;
        let objective = regression_objective(&rule, &inst, &adv)?;
        return Ok(RegressionDesign {
            rule,
            t_minus: 1,
            t_plus: n,
            t_one: 0,
            pooled_level: 1.0,
            mu,
            objective,
            swapped,
            degenerate: false,
            adversary: Some(adv),
            budget_per_agent: budget,
        });
    }

    // Tuples in lexicographic order; `one` ranges over "none" and every
    // outside index (indices inside the pool duplicate `pool_lo - 1`).
    let mut tuples = Vec::new();
    for lo in 0..=ts {
        for hi in ts..n {
            tuples.push((lo, hi, None));
            for o in (0..n).filter(|&o| o < lo || o > hi) {
                tuples.push((lo, hi, Some(o)));
            }
        }
    }
    let results = par::map_slice(&tuples, |&(lo, hi, one)| {
        solve_tuple(c, pi, gamma, budget, (lo, hi), one)
    });
    let mut best: Option<(usize, Candidate)> = None;
    for (i, cand) in results.into_iter().enumerate() {
        if let Some(cand) = cand {
            if best.as_ref().is_none_or(|(_, b)| cand.objective < b.objective) {
                best = Some((i, cand));
            }
        }
    }
    let (i, cand) = best.ok_or_else(|| {
        SurveyError::Internal("no feasible regression design found".into())
    })?;
    let (lo, hi, one) = tuples[i];
    Ok(RegressionDesign {
        rule: AllocationRule::new(cand.probs)?,
        t_minus: lo + 1,
        t_plus: hi + 1,
        t_one: one.map_or(0, |o| o + 1),
        pooled_level: cand.pooled_level,
        mu: cand.mu,
        objective: cand.objective,
        swapped,
        degenerate: false,
        adversary: Some(adv),
        budget_per_agent: budget,
    })
}

/// Grid oracle: least objective over monotone budget-feasible allocations,
/// with the adversary fixed to its knapsack response. The first `n - 1`
/// coordinates lie on the `a_step` grid and the last takes the largest value
/// the budget and monotonicity allow.
pub fn brute_force_regression(instance: &RegressionInstance, a_step: f64) -> Result<f64> {
    let n = instance.costs_dist.len();
    if n > 4 {
        return Err(SurveyError::TooLarge(n));
    }
    let (inst, _) = instance.normalized();
    if inst.noise_lo == 0.0 {
        return Ok(0.0);
    }
    let adv = adversary_knapsack(&inst)?;
    let agrid = grid(a_step, false)?;
    let (c, pi) = (inst.costs_dist.costs(), inst.costs_dist.pmf());
    let g2: Vec<f64> = adv.gamma.iter().map(|g| g * g).collect();
    let budget = inst.budget_per_agent;

    fn rec(
        t: usize,
        cap: f64,
        spent: f64,
        acc: f64,
        agrid: &[f64],
        c: &[f64],
        pi: &[f64],
        g2: &[f64],
        budget: f64,
    ) -> f64 {
        let n = c.len();
        if t + 1 == n {
            let unit = pi[t] * c[t];
            let last = if unit > 0.0 { ((budget - spent) / unit).min(cap) } else { cap };
            return if last > 0.0 { acc + pi[t] * g2[t] / last } else { f64::INFINITY };
        }
        let mut best = f64::INFINITY;
        for &a in agrid.iter().take_while(|a| **a <= cap) {
            let s = spent + pi[t] * c[t] * a;
            if s > budget {
                break;
            }
            let v = rec(t + 1, a, s, acc + pi[t] * g2[t] / a, agrid, c, pi, g2, budget);
            if v < best {
                best = v;
            }
        }
        best
    }

    let best = if n == 1 {
        rec(0, 1.0, 0.0, 0.0, &agrid, c, pi, &g2, budget)
    } else {
        par::map_slice(&agrid, |&a| {
            let s = pi[0] * c[0] * a;
            if s > budget {
                return f64::INFINITY;
            }
            rec(1, a, s, pi[0] * g2[0] / a, &agrid, c, pi, &g2, budget)
        })
        .into_iter()
        .fold(f64::INFINITY, |acc, v| if v < acc { v } else { acc })
    };
    if best.is_finite() {
        Ok(best)
    } else {
        Err(SurveyError::InfeasibleBudget(budget))
    }
}
