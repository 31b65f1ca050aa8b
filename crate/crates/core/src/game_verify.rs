//! The zero-sum game between the analyst (allocation `A`) and the adversary
//! (conditional moment probabilities `q`), with payoff
//! `V(A, q) = <pi, q/A> - <pi, q>^2`.
//!
//! Provides both best responses, the exact worst-case variance, equilibrium
//! certificates, and a brute-force grid oracle for small instances.

use serde::{Deserialize, Serialize};

use crate::cost_model::DiscreteCostDistribution;
use crate::error::{Result, SurveyError};
use crate::moment_design::AllocationRule;
use crate::par;

/// Default certificate tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(SurveyError::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_q(q: &[f64]) -> Result<()> {
    if q.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(SurveyError::InvalidArgument(
            "adversary entries must lie in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// `V(A, q) = sum pi_t q_t / A_t - (sum pi_t q_t)^2`.
pub fn variance(a: &AllocationRule, q: &[f64], dist: &DiscreteCostDistribution) -> Result<f64> {
    check_dims(dist.len(), a.len())?;
    check_dims(dist.len(), q.len())?;
    check_q(q)?;
    let mut weighted = 0.0;
    let mut mean = 0.0;
    for ((&at, &qt), &pt) in a.probs().iter().zip(q).zip(dist.pmf()) {
        weighted += pt * qt / at;
        mean += pt * qt;
    }
    Ok(weighted - mean * mean)
}

/// Exact `sup_q V(A, q)` and a maximizer.
///
/// For a fixed mean `m = <pi, q>` the best `<pi, q/A>` is a fractional
/// knapsack: fill the largest `1/A_t` first (ties by lowest index). This gives
/// a concave piecewise-linear `h(m)`; `h(m) - m^2` is maximized by checking
/// the clamped stationary point `1/(2 A_t)` on every linear piece.
pub fn worst_case_variance(
    a: &AllocationRule,
    dist: &DiscreteCostDistribution,
) -> Result<(f64, Vec<f64>)> {
    check_dims(dist.len(), a.len())?;
    let pi = dist.pmf();
    let weight: Vec<f64> = a.probs().iter().map(|x| 1.0 / x).collect();
    let mut order: Vec<usize> = (0..weight.len()).collect();
    order.sort_by(|&i, &j| weight[j].total_cmp(&weight[i]).then(i.cmp(&j)));

    // (objective, piece position in `order`, mean at the optimum)
    let mut best: (f64, Option<usize>, f64) = (0.0, None, 0.0);
    let (mut start, mut h) = (0.0_f64, 0.0_f64);
    for (pos, &j) in order.iter().enumerate() {
        let end = start + pi[j];
        let m = (weight[j] / 2.0).clamp(start, end);
        let val = h + weight[j] * (m - start) - m * m;
        if val > best.0 {
            best = (val, Some(pos), m);
        }
        h += weight[j] * pi[j];
        start = end;
    }

    let mut q = vec![0.0; weight.len()];
    if let (_, Some(piece), m) = best {
        let mut filled = 0.0;
        for &j in &order[..piece] {
            q[j] = 1.0;
            filled += pi[j];
        }
        let j = order[piece];
        let frac = if m >= filled + pi[j] {
            1.0
        } else if m <= filled {
            0.0
        } else {
            ((m - filled) / pi[j]).clamp(0.0, 1.0)
        };
        q[j] = frac;
    }
    let value = variance(a, &q, dist)?;
    Ok((value, q))
}

/// The adversary's best response (the maximizer of [`worst_case_variance`]).
pub fn best_response_adversary(
    a: &AllocationRule,
    dist: &DiscreteCostDistribution,
) -> Result<Vec<f64>> {
    worst_case_variance(a, dist).map(|(_, q)| q)
}

/// Analyst's best response to a fixed adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResponse {
    pub rule: AllocationRule,
    /// Budget multiplier; `A_t = min(1, sqrt(q_t / (lambda c_t)))`.
    pub lambda: f64,
}

/// `A_t = min(1, sqrt(q_t / (lambda c_t)))` with `lambda` chosen so the budget binds.
pub fn best_response_alloc(
    q: &[f64],
    dist: &DiscreteCostDistribution,
    budget_per_agent: f64,
) -> Result<AllocationResponse> {
    check_dims(dist.len(), q.len())?;
    check_q(q)?;
    if let Some(i) = q.iter().position(|x| *x <= 0.0) {
        return Err(SurveyError::ZeroAdversaryEntry(i));
    }
    let budget = budget_per_agent;
    if !(budget.is_finite() && budget > 0.0) {
        return Err(SurveyError::InfeasibleBudget(budget));
    }
    let (c, pi) = (dist.costs(), dist.pmf());
    if budget >= dist.mean() {
        let lambda = c
            .iter()
            .zip(q)
            .filter(|(ct, _)| **ct > 0.0)
            .map(|(ct, qt)| qt / ct)
            .fold(f64::INFINITY, f64::min);
        let lambda = if lambda.is_finite() { lambda } else { 0.0 };
        return Ok(AllocationResponse {
            rule: AllocationRule::constant(1.0, q.len())?,
            lambda,
        });
    }

    // Work with mu = 1/sqrt(lambda): A_t = min(1, mu * sqrt(q_t/c_t)).
    let slope: Vec<f64> = c
        .iter()
        .zip(q)
        .map(|(ct, qt)| if *ct > 0.0 { (qt / ct).sqrt() } else { f64::INFINITY })
        .collect();
    let alloc = |mu: f64| -> Vec<f64> { slope.iter().map(|s| (mu * s).min(1.0)).collect() };
    let spend = |mu: f64| -> f64 {
        alloc(mu)
            .iter()
            .zip(c)
            .zip(pi)
            .map(|((a, ct), p)| a * ct * p)
            .sum()
    };

    const A_MIN: f64 = 1e-9;
    let lambda_hi = c
        .iter()
        .zip(q)
        .filter(|(ct, _)| **ct > 0.0)
        .map(|(ct, qt)| qt / (ct * A_MIN * A_MIN))
        .fold(0.0, f64::max);
    let mut mu_lo = 1.0 / lambda_hi.sqrt();
    let mut mu_hi = slope
        .iter()
        .filter(|s| s.is_finite())
        .map(|s| 1.0 / s)
        .fold(0.0, f64::max);
    if spend(mu_lo) > budget {
        return Err(SurveyError::InfeasibleBudget(budget));
    }
    let mut mu = mu_hi;
    for _ in 0..400 {
        mu = (mu_lo * mu_hi).sqrt();
        let s = spend(mu);
        if (s - budget).abs() <= 1e-11 * budget {
            break;
        }
        if s < budget {
            mu_lo = mu;
        } else {
            mu_hi = mu;
        }
    }
    // Exact solve on the linear piece the bisection landed on.
    let capped: Vec<bool> = slope.iter().map(|s| mu * s >= 1.0).collect();
    let capped_spend: f64 = (0..q.len())
        .filter(|&t| capped[t])
        .map(|t| pi[t] * c[t])
        .sum();
    let linear: f64 = (0..q.len())
        .filter(|&t| !capped[t])
        .map(|t| pi[t] * c[t] * slope[t])
        .sum();
    if linear > 0.0 {
        let exact = (budget - capped_spend) / linear;
        let same_piece = slope
            .iter()
            .zip(&capped)
            .all(|(s, cap)| (exact * s >= 1.0) == *cap || (exact * s - 1.0).abs() < 1e-12);
        if exact > 0.0 && same_piece {
            mu = exact;
        }
    }
    Ok(AllocationResponse {
        rule: AllocationRule::new(alloc(mu))?,
        lambda: 1.0 / (mu * mu),
    })
}

/// Per-condition record that `(A, q)` is an equilibrium of the game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCertificate {
    pub min_player_ok: bool,
    pub max_player_ok: bool,
    pub budget_binding: bool,
    pub lambda: f64,
    /// Largest best-response residual per index.
    pub per_index_slack: Vec<f64>,
    /// Indices with `q_t <= tol`, excluded from the analyst's condition.
    pub skipped: Vec<usize>,
    pub value: f64,
    pub spend: f64,
    pub tol: f64,
}

impl EquilibriumCertificate {
    pub fn passed(&self) -> bool {
        self.min_player_ok && self.max_player_ok && self.budget_binding
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Check both best-response conditions and budget binding within `tol`.
pub fn verify_equilibrium(
    a: &AllocationRule,
    q: &[f64],
    dist: &DiscreteCostDistribution,
    budget_per_agent: f64,
    tol: f64,
) -> Result<EquilibriumCertificate> {
    check_dims(dist.len(), a.len())?;
    check_dims(dist.len(), q.len())?;
    check_q(q)?;
    let (c, pi, probs) = (dist.costs(), dist.pmf(), a.probs());
    let n = probs.len();
    let budget = budget_per_agent;
    let scale = budget.abs().max(1.0);

    let spend: f64 = (0..n).map(|t| pi[t] * c[t] * probs[t]).sum();
    let all_one = probs.iter().all(|x| *x >= 1.0 - tol);
    let budget_binding = (spend - budget).abs() <= tol * scale
        || (all_one && spend <= budget + tol * scale);

    // Analyst: A_t = min(1, sqrt(q_t / (lambda c_t))) wherever q_t > tol.
    let implied: Vec<f64> = (0..n)
        .filter(|&t| q[t] > tol && c[t] > 0.0 && probs[t] < 1.0 - tol)
        .map(|t| q[t] / (c[t] * probs[t] * probs[t]))
        .collect();
    let lambda = if implied.is_empty() {
        let m = (0..n)
            .filter(|&t| q[t] > tol && c[t] > 0.0)
            .map(|t| q[t] / c[t])
            .fold(f64::INFINITY, f64::min);
        if m.is_finite() {
            m
        } else {
            0.0
        }
    } else {
        median(implied)
    };
    let mut skipped = Vec::new();
    let mut min_slack = vec![0.0; n];
    for t in 0..n {
        if q[t] <= tol {
            skipped.push(t);
            continue;
        }
        let target = if c[t] == 0.0 || lambda == 0.0 {
            1.0
        } else {
            (q[t] / (lambda * c[t])).sqrt().min(1.0)
        };
        min_slack[t] = (probs[t] - target).abs();
    }
    let min_player_ok = min_slack.iter().all(|s| *s <= tol);

    // Adversary: trichotomy against 2 <pi, q>.
    let threshold = 2.0 * (0..n).map(|t| pi[t] * q[t]).sum::<f64>();
    let max_tol = tol * threshold.max(1.0);
    let max_slack: Vec<f64> = (0..n)
        .map(|t| {
            let w = 1.0 / probs[t];
            if q[t] <= tol {
                (w - threshold).max(0.0)
            } else if q[t] >= 1.0 - tol {
                (threshold - w).max(0.0)
            } else {
                (w - threshold).abs()
            }
        })
        .collect();
    let max_player_ok = max_slack.iter().all(|s| *s <= max_tol);

    Ok(EquilibriumCertificate {
        min_player_ok,
        max_player_ok,
        budget_binding,
        lambda,
        per_index_slack: min_slack
            .iter()
            .zip(&max_slack)
            .map(|(a, b)| a.max(*b))
            .collect(),
        skipped,
        value: variance(a, q, dist)?,
        spend,
        tol,
    })
}

/// Grid `{step, 2 step, ..., 1}` (or `{0, step, ..., 1}` with `zero`).
pub(crate) fn grid(step: f64, zero: bool) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(SurveyError::InvalidArgument(format!(
            "grid step must lie in (0, 0.5], got {step}"
        )));
    }
    let k = (1.0 / step).round();
    let exact = (k * step - 1.0).abs() < 1e-9;
    let count = if exact { k as usize } else { (1.0 / step).floor() as usize };
    let mut g: Vec<f64> = (usize::from(!zero)..=count)
        .map(|i| if exact { i as f64 / count as f64 } else { i as f64 * step })
        .collect();
    if !exact {
        g.push(1.0);
    }
    Ok(g)
}

/// Max of `V(A, q)` for a fixed allocation, given as weights `w_t = 1/A_t`.
/// The first `n - 1` coordinates of `q` are enumerated on the grid; the last
/// enters as a concave parabola and is set to its clamped vertex.
fn grid_sup(weights: &[f64], pi: &[f64], qgrid: &[f64]) -> f64 {
    fn rec(t: usize, mean: f64, lin: f64, weights: &[f64], pi: &[f64], qgrid: &[f64]) -> f64 {
        if t + 1 == weights.len() {
            let qv = ((weights[t] / 2.0 - mean) / pi[t]).clamp(0.0, 1.0);
            let m = mean + pi[t] * qv;
            return lin + pi[t] * qv * weights[t] - m * m;
        }
        let mut best = f64::NEG_INFINITY;
        for &qv in qgrid {
            let v = rec(
                t + 1,
                mean + pi[t] * qv,
                lin + pi[t] * qv * weights[t],
                weights,
                pi,
                qgrid,
            );
            if v > best {
                best = v;
            }
        }
        best
    }
    rec(0, 0.0, 0.0, weights, pi, qgrid)
}

/// Brute-force `min_A max_q V(A, q)` for `|C| <= 4`.
///
/// The first `n - 1` coordinates of `A` range over monotone non-increasing
/// vectors on `{a_step, ..., 1}`. Since the inner maximum is non-increasing in
/// each `A_t`, the last coordinate is the largest feasible value
/// `min(A_{n-1}, (budget - spent) / (pi_n c_n))`, taken exactly rather than
/// on the grid. Every candidate spends at most `budget`, so the result is an
/// upper bound on the true minimax value up to the `q` discretization.
pub fn brute_force_minimax(
    dist: &DiscreteCostDistribution,
    budget_per_agent: f64,
    a_step: f64,
    q_step: f64,
) -> Result<f64> {
    let n = dist.len();
    if n > 4 {
        return Err(SurveyError::TooLarge(n));
    }
    if !(budget_per_agent.is_finite() && budget_per_agent > 0.0) {
        return Err(SurveyError::InfeasibleBudget(budget_per_agent));
    }
    let agrid = grid(a_step, false)?;
    let qgrid = grid(q_step, true)?;
    let (c, pi) = (dist.costs(), dist.pmf());
    let budget = budget_per_agent;

    fn complete(
        prefix: &mut Vec<f64>,
        spent: f64,
        n: usize,
        agrid: &[f64],
        qgrid: &[f64],
        c: &[f64],
        pi: &[f64],
        budget: f64,
    ) -> f64 {
        let t = prefix.len();
        let cap = prefix.last().copied().unwrap_or(1.0);
        if t + 1 == n {
            let unit = pi[t] * c[t];
            let last = if unit > 0.0 {
                ((budget - spent) / unit).min(cap)
            } else {
                cap
            };
            if !(last > 0.0) {
                return f64::INFINITY;
            }
            prefix.push(last);
            let weights: Vec<f64> = prefix.iter().map(|a| 1.0 / a).collect();
            prefix.pop();
            return grid_sup(&weights, pi, qgrid);
        }
        let mut best = f64::INFINITY;
        for &a in agrid.iter().take_while(|a| **a <= cap) {
            let s = spent + pi[t] * c[t] * a;
            if s > budget {
                break;
            }
            prefix.push(a);
            let v = complete(prefix, s, n, agrid, qgrid, c, pi, budget);
            prefix.pop();
            if v < best {
                best = v;
            }
        }
        best
    }

    let best = if n == 1 {
        complete(&mut Vec::new(), 0.0, n, &agrid, &qgrid, c, pi, budget)
    } else {
        let per_first = par::map_slice(&agrid, |&a| {
            let s = pi[0] * c[0] * a;
            if s > budget {
                return f64::INFINITY;
            }
            complete(&mut vec![a], s, n, &agrid, &qgrid, c, pi, budget)
        });
        per_first
            .into_iter()
            .fold(f64::INFINITY, |acc, v| if v < acc { v } else { acc })
    };
    if best.is_finite() {
        Ok(best)
    } else {
        Err(SurveyError::InfeasibleBudget(budget_per_agent))
    }
}
