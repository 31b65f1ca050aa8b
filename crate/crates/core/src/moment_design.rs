//! Optimal allocation rules for moment estimation.
//!
//! Costs handed to this module are optimization-space costs: virtual costs
//! when called from the mechanism pipeline, or raw costs when the caller
//! works directly with the analyst's optimization problem.
//!
//! The discrete rule pools the `pool_end` cheapest types at a common level
//! and buys the rest with probability proportional to `1/sqrt(c)`. The pooling
//! threshold comes from the functions `Q`, `R` and `B = Q/R` below.

use serde::{Deserialize, Serialize};

use crate::cost_model::{ContinuousCostDistribution, DiscreteCostDistribution};
use crate::error::{Result, SurveyError};
use crate::game_verify;

/// Per-cost-type purchase probabilities, aligned to a cost support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllocationRule {
    probs: Vec<f64>,
}

impl AllocationRule {
    /// Entries must lie in (0, 1]. Monotonicity is not required here; use
    /// [`AllocationRule::check_monotone`] where it matters.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(i) = probs.iter().position(|a| !(*a > 0.0)) {
            return Err(SurveyError::ZeroAllocation(i));
        }
        if probs.iter().any(|a| !a.is_finite() || *a > 1.0) {
            return Err(SurveyError::InvalidArgument(
                "allocation probabilities must lie in (0, 1]".into(),
            ));
        }
        Ok(Self { probs })
    }

    pub fn constant(level: f64, len: usize) -> Result<Self> {
        Self::new(vec![level; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Errors with the first index `t` where `A_t > A_{t-1}` (beyond `tol`).
    pub fn check_monotone(&self, tol: f64) -> Result<()> {
        match self.probs.windows(2).position(|w| w[1] > w[0] + tol) {
            Some(i) => Err(SurveyError::NonMonotoneAllocation(i + 1)),
            None => Ok(()),
        }
    }
}

/// Which branch of the closed form produced a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignCase {
    /// Budget covers every type: buy everything.
    FlatHighBudget,
    /// Cheap types pooled at a common level, the rest at `alpha/sqrt(c)`.
    PooledInterior,
    /// Budget so small that no type is pooled.
    NoPoolLowBudget,
}

/// The auxiliary point `(k~, x~)` with `R(k~, x~) = 1` used to build the
/// adversary when the pooled level saturates at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    pub k: usize,
    pub x: f64,
}

/// A solved discrete moment-estimation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentDesign {
    pub probs: AllocationRule,
    /// Number of pooled (cheapest) types, `t*`.
    pub pool_end: usize,
    pub pooled_level: f64,
    pub alpha: f64,
    pub case: DesignCase,
    /// Worst-case adversary paired with `probs`.
    pub adversary: Vec<f64>,
    /// n-normalized worst-case variance.
    pub value: f64,
    pub budget_spend: f64,
    pub budget_per_agent: f64,
    /// Optimization-space support the rule is aligned to.
    pub costs: Vec<f64>,
    pub k_star: Option<usize>,
    pub x_star: Option<f64>,
    pub saturation: Option<SaturationPoint>,
}

impl MomentDesign {
    /// Threshold evaluator: the pooled level up to `c_{t*}`, `alpha/sqrt(c)` above.
    pub fn alloc_at(&self, c: f64) -> Result<f64> {
        let c_max = *self.costs.last().expect("non-empty");
        if !(c >= 0.0 && c <= c_max * (1.0 + 1e-12)) {
            return Err(SurveyError::OutOfSupport(c));
        }
        let threshold = if self.pool_end == 0 {
            f64::NEG_INFINITY
        } else {
            self.costs[self.pool_end - 1]
        };
        if c <= threshold {
            Ok(self.pooled_level)
        } else if let Some(i) = self.costs.iter().position(|&x| x == c) {
            Ok(self.probs.probs()[i])
        } else {
            Ok((self.alpha / c.sqrt()).min(1.0))
        }
    }
}

/// Prefix sums behind `Q`, `R`, `B`.
///
/// Index `k` ranges over `0..=n`: `head_cost[k] = sum_{t<=k} pi_t c_t`,
/// `tail_mass[k] = sum_{t>k} pi_t`, `tail_sqrt[k] = sum_{t>k} pi_t sqrt(c_t)`.
#[derive(Debug, Clone)]
pub(crate) struct CostSums<'a> {
    dist: &'a DiscreteCostDistribution,
    head_cost: Vec<f64>,
    tail_mass: Vec<f64>,
    tail_sqrt: Vec<f64>,
}

impl<'a> CostSums<'a> {
    pub(crate) fn new(dist: &'a DiscreteCostDistribution) -> Self {
        let n = dist.len();
        let (c, pi) = (dist.costs(), dist.pmf());
        let mut head_cost = vec![0.0; n + 1];
        for t in 0..n {
            head_cost[t + 1] = head_cost[t] + pi[t] * c[t];
        }
        let mut tail_mass = vec![0.0; n + 1];
        let mut tail_sqrt = vec![0.0; n + 1];
        for t in (0..n).rev() {
            tail_mass[t] = tail_mass[t + 1] + pi[t];
            tail_sqrt[t] = tail_sqrt[t + 1] + pi[t] * c[t].sqrt();
        }
        Self {
            dist,
            head_cost,
            tail_mass,
            tail_sqrt,
        }
    }

    fn n(&self) -> usize {
        self.dist.len()
    }

    /// `c_k` with `c_0 = 0`.
    fn cost(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.dist.costs()[k - 1]
        }
    }

    /// `sum_{t<=k} pi_t c_t / c_k`, with the `c_k = 0` limit `pi_k`.
    fn head_ratio(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else if self.cost(k) == 0.0 {
            self.dist.pmf()[k - 1]
        } else {
            self.head_cost[k] / self.cost(k)
        }
    }

    pub(crate) fn q(&self, k: usize, x: f64) -> f64 {
        let ck = self.cost(k);
        let tail = if ck == 0.0 || self.tail_sqrt[k] == 0.0 {
            0.0
        } else {
            self.tail_sqrt[k] * (ck / x).sqrt()
        };
        self.head_cost[k] + tail
    }

    pub(crate) fn r(&self, k: usize, x: f64) -> f64 {
        2.0 * (self.head_ratio(k) * x + self.tail_mass[k])
    }

    pub(crate) fn b(&self, k: usize, x: f64) -> f64 {
        self.q(k, x) / self.r(k, x)
    }
}

fn check_index(dist: &DiscreteCostDistribution, k: usize, x: f64) -> Result<()> {
    if k > dist.len() {
        return Err(SurveyError::IndexOutOfRange {
            index: k,
            max: dist.len(),
        });
    }
    if !(x > 0.0 && x <= 1.0) {
        return Err(SurveyError::InvalidArgument(format!(
            "x must lie in (0, 1], got {x}"
        )));
    }
    Ok(())
}

/// `Q(k,x) = sum_{t<=k} pi_t c_t + sum_{t>k} pi_t sqrt(c_t c_k / x)`.
pub fn q_fun(dist: &DiscreteCostDistribution, k: usize, x: f64) -> Result<f64> {
    check_index(dist, k, x)?;
    Ok(CostSums::new(dist).q(k, x))
}

/// `R(k,x) = 2 (sum_{t<=k} pi_t c_t x / c_k + sum_{t>k} pi_t)`.
pub fn r_fun(dist: &DiscreteCostDistribution, k: usize, x: f64) -> Result<f64> {
    check_index(dist, k, x)?;
    Ok(CostSums::new(dist).r(k, x))
}

/// `B(k,x) = Q(k,x) / R(k,x)`.
pub fn b_fun(dist: &DiscreteCostDistribution, k: usize, x: f64) -> Result<f64> {
    check_index(dist, k, x)?;
    Ok(CostSums::new(dist).b(k, x))
}

/// Solve `B(k, x) = budget` for `x` on `[x_lo, 1]` by bisection in `s = sqrt(x)`;
/// `B(k, .)` is decreasing in `x`.
fn solve_pool_point(sums: &CostSums, k: usize, budget: f64) -> f64 {
    let n = sums.n();
    let mut lo = if k < n {
        (sums.cost(k) / sums.cost(k + 1)).sqrt()
    } else {
        0.0
    };
    let mut hi = 1.0_f64;
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        if sums.b(k, mid * mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    s * s
}

/// Exact optimal allocation for discrete moment estimation.
pub fn design_moment_discrete(
    dist: &DiscreteCostDistribution,
    budget_per_agent: f64,
) -> Result<MomentDesign> {
    let budget = budget_per_agent;
    if !(budget.is_finite() && budget > 0.0) {
        return Err(SurveyError::InfeasibleBudget(budget));
    }
    if dist.costs().windows(2).any(|w| w[1] <= w[0]) {
        return Err(SurveyError::NonMonotoneInput);
    }
    let n = dist.len();
    let costs = dist.costs();
    let pi = dist.pmf();
    let sums = CostSums::new(dist);
    let mean_cost = sums.head_cost[n];

    let finish = |probs: Vec<f64>,
                  pool_end: usize,
                  pooled_level: f64,
                  alpha: f64,
                  case: DesignCase,
                  adversary: Option<Vec<f64>>,
                  k_star: Option<usize>,
                  x_star: Option<f64>,
                  saturation: Option<SaturationPoint>|
     -> Result<MomentDesign> {
        for (i, a) in probs.iter().enumerate() {
            if !(*a > 0.0 && *a <= 1.0 + 1e-9) {
                return Err(SurveyError::Internal(format!(
                    "allocation {a} at index {i} outside (0, 1]"
                )));
            }
        }
        let probs: Vec<f64> = probs.into_iter().map(|a| a.min(1.0)).collect();
        let rule = AllocationRule::new(probs)?;
        rule.check_monotone(1e-12)
            .map_err(|e| SurveyError::Internal(e.to_string()))?;
        let adversary = match adversary {
            Some(q) => q,
            None => game_verify::best_response_adversary(&rule, dist)?,
        };
        let value = game_verify::variance(&rule, &adversary, dist)?;
        let budget_spend = rule.probs().iter().zip(costs).zip(pi).map(|((a, c), p)| a * c * p).sum();
        Ok(MomentDesign {
            probs: rule,
            pool_end,
            pooled_level,
            alpha,
            case,
            adversary,
            value,
            budget_spend,
            budget_per_agent: budget,
            costs: costs.to_vec(),
            k_star,
            x_star,
            saturation,
        })
    };

    if budget >= mean_cost {
        return finish(
            vec![1.0; n],
            n,
            1.0,
            0.0,
            DesignCase::FlatHighBudget,
            None,
            None,
            None,
            None,
        );
    }

    let mean_sqrt = sums.tail_sqrt[0];
    let low_corner = costs[0].sqrt() * mean_sqrt / 2.0;
    if budget <= low_corner {
        let alpha = budget / mean_sqrt;
        let probs: Vec<f64> = costs.iter().map(|c| alpha / c.sqrt()).collect();
        let top = probs[0];
        return finish(
            probs,
            0,
            top,
            alpha,
            DesignCase::NoPoolLowBudget,
            Some(vec![1.0; n]),
            Some(0),
            None,
            None,
        );
    }

    // k*: B(k*,1) <= budget < B(k*+1,1), left-closed on ties.
    let mut k_star = 0;
    while k_star < n && sums.b(k_star + 1, 1.0) <= budget {
        k_star += 1;
    }
    let x_star = if sums.cost(k_star) == 0.0 {
        // B(k, .) vanishes identically when c_k = 0; the root sits at the
        // bracket's lower limit.
        0.0
    } else {
        solve_pool_point(&sums, k_star, budget)
    };
    let r_star = sums.r(k_star, x_star);

    let (pool_end, pooled_level, adversary, saturation) = if r_star >= 1.0 {
        let ck = sums.cost(k_star);
        let q: Vec<f64> = (0..n)
            .map(|t| {
                if t < k_star {
                    if ck == 0.0 {
                        x_star
                    } else {
                        costs[t] / ck * x_star
                    }
                } else {
                    1.0
                }
            })
            .collect();
        (k_star, 1.0 / r_star, q, None)
    } else {
        // t* = max{k : budget > Q(k,1)}; Q(., 1) is non-decreasing.
        let mut pool_end = 0;
        while pool_end < n && budget > sums.q(pool_end + 1, 1.0) {
            pool_end += 1;
        }
        // Smallest k~ with R(k~,1) > 1 >= R(k~+1,1).
        let mut k_sat = 0;
        while k_sat < n && sums.r(k_sat + 1, 1.0) > 1.0 {
            k_sat += 1;
        }
        if k_sat >= n {
            return Err(SurveyError::Internal(
                "no saturation point with R = 1".into(),
            ));
        }
        let ratio = sums.head_ratio(k_sat);
        let x_sat = if ratio > 0.0 {
            ((0.5 - sums.tail_mass[k_sat]) / ratio).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let ck = sums.cost(k_sat);
        let q: Vec<f64> = (0..n)
            .map(|t| {
                if t < k_sat {
                    if ck == 0.0 {
                        x_sat
                    } else {
                        costs[t] / ck * x_sat
                    }
                } else {
                    1.0
                }
            })
            .collect();
        (
            pool_end,
            1.0,
            q,
            Some(SaturationPoint { k: k_sat, x: x_sat }),
        )
    };

    if costs[0] == 0.0 && pool_end == 0 {
        return Err(SurveyError::Internal(
            "zero-cost type left outside the pool".into(),
        ));
    }

    let tail_sqrt = sums.tail_sqrt[pool_end];
    let alpha = if tail_sqrt > 0.0 {
        (budget - pooled_level * sums.head_cost[pool_end]) / tail_sqrt
    } else {
        0.0
    };
    let probs: Vec<f64> = (0..n)
        .map(|t| {
            if t < pool_end {
                pooled_level
            } else {
                alpha / costs[t].sqrt()
            }
        })
        .collect();
    finish(
        probs,
        pool_end,
        pooled_level,
        alpha,
        DesignCase::PooledInterior,
        Some(adversary),
        Some(k_star),
        Some(x_star),
        saturation,
    )
}

/// Design for a `d`-vector of moments. The worst-case risk is a sum of `d`
/// per-coordinate worst-case variances that share the allocation, so the
/// optimal rule is the scalar one and the value scales by `d`.
pub fn design_moment_multi(
    dist: &DiscreteCostDistribution,
    budget_per_agent: f64,
    d: usize,
) -> Result<MomentDesign> {
    if d == 0 {
        return Err(SurveyError::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut design = design_moment_discrete(dist, budget_per_agent)?;
    design.value *= d as f64;
    Ok(design)
}

/// A solved continuous design on (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousDesign {
    pub family: ContinuousCostDistribution,
    pub budget_per_agent: f64,
    /// Pooling threshold on the cost value.
    pub x_star: f64,
    pub pooled_level: f64,
    pub alpha: f64,
}

impl ContinuousDesign {
    pub fn alloc_at(&self, c: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&c) {
            return Err(SurveyError::OutOfSupport(c));
        }
        if c <= self.x_star {
            Ok(self.pooled_level)
        } else {
            Ok((self.alpha / c.sqrt()).min(1.0))
        }
    }
}

/// `Q_inf(x) = E[min(c, sqrt(c x))]`.
pub fn q_infinity(f: &ContinuousCostDistribution, x: f64) -> f64 {
    f.partial_moment(1.0, x) + x.sqrt() * (f.partial_moment(0.5, 1.0) - f.partial_moment(0.5, x))
}

/// `R_inf(x) = 2 E[min(c/x, 1)]`.
pub fn r_infinity(f: &ContinuousCostDistribution, x: f64) -> f64 {
    if x <= 0.0 {
        return 2.0;
    }
    2.0 * (f.partial_moment(1.0, x) / x + 1.0 - f.cdf(x))
}

/// `G(x) = Q_inf(x) / max(1, R_inf(x))`, non-decreasing on [0, 1].
pub fn g_fun(f: &ContinuousCostDistribution, x: f64) -> f64 {
    q_infinity(f, x) / r_infinity(f, x).max(1.0)
}

/// Optimal design for a continuous prior: `x* = min(1, G^{-1}(budget))`.
pub fn design_moment_continuous(
    f: &ContinuousCostDistribution,
    budget_per_agent: f64,
) -> Result<ContinuousDesign> {
    f.validate()?;
    let budget = budget_per_agent;
    if !(budget.is_finite() && budget > 0.0) {
        return Err(SurveyError::InfeasibleBudget(budget));
    }
    let mean = f.mean();
    let flat = |level: f64| ContinuousDesign {
        family: *f,
        budget_per_agent: budget,
        x_star: 1.0,
        pooled_level: level,
        alpha: level,
    };
    if budget >= mean {
        return Ok(flat(1.0));
    }
    if budget >= g_fun(f, 1.0) {
        // Everyone pooled; the budget fixes the level.
        return Ok(flat(budget / mean));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g_fun(f, mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    let x_star = 0.5 * (lo + hi);
    let pooled_level = 1.0 / r_infinity(f, x_star).max(1.0);
    let pooled_spend = pooled_level * f.partial_moment(1.0, x_star);
    let tail_sqrt = f.partial_moment(0.5, 1.0) - f.partial_moment(0.5, x_star);
    let alpha = (budget - pooled_spend) / tail_sqrt;
    Ok(ContinuousDesign {
        family: *f,
        budget_per_agent: budget,
        x_star,
        pooled_level,
        alpha,
    })
}
