//! Monte Carlo surveys: draw a population, run the posted menu, estimate.
//!
//! Every repetition has its own ChaCha8 stream keyed by `(seed, rep)`, so a
//! run is reproducible whatever the thread count.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cost_model::DiscreteCostDistribution;
use crate::error::{Result, SurveyError};
use crate::game_verify;
use crate::mechanism::{MechanismDesign, Menu};
use crate::moment_design::{AllocationRule, MomentDesign};
use crate::par;
use crate::regression_design::{RegressionDesign, RegressionInstance};

/// Worst-case style data: binary moments, or a linear model with two-point noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataModel {
    /// `d` moments, each `Pr[m = 1 | c_t] = q_t`, independent across coordinates.
    MomentBinary { q: Vec<f64>, dim: usize },
    /// `y = x^T theta* + eps`, `x ~ N(0, scale^2 I)`, `Pr[eps = U | c_t] = q_t`, else `L`.
    Regression {
        theta_star: Vec<f64>,
        #[serde(rename = "L")]
        noise_lo: f64,
        #[serde(rename = "U")]
        noise_hi: f64,
        q: Vec<f64>,
        feature_scale: f64,
    },
}

impl DataModel {
    pub fn dim(&self) -> usize {
        match self {
            DataModel::MomentBinary { dim, .. } => *dim,
            DataModel::Regression { theta_star, .. } => theta_star.len(),
        }
    }

    pub fn q(&self) -> &[f64] {
        match self {
            DataModel::MomentBinary { q, .. } | DataModel::Regression { q, .. } => q,
        }
    }

    fn with_q(&self, new_q: Vec<f64>) -> Self {
        let mut m = self.clone();
        match &mut m {
            DataModel::MomentBinary { q, .. } | DataModel::Regression { q, .. } => *q = new_q,
        }
        m
    }

    pub fn validate(&self, dist: &DiscreteCostDistribution) -> Result<()> {
        let q = self.q();
        if q.len() != dist.len() {
            return Err(SurveyError::DimensionMismatch {
                expected: dist.len(),
                got: q.len(),
            });
        }
        if q.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(SurveyError::InvalidArgument("q entries must lie in [0, 1]".into()));
        }
        if self.dim() == 0 {
            return Err(SurveyError::InvalidArgument("dimension must be at least 1".into()));
        }
        if let DataModel::Regression {
            noise_lo,
            noise_hi,
            feature_scale,
            theta_star,
            ..
        } = self
        {
            if !(*feature_scale > 0.0 && feature_scale.is_finite()) {
                return Err(SurveyError::InvalidArgument("feature scale must be positive".into()));
            }
            if theta_star.iter().any(|x| !x.is_finite()) {
                return Err(SurveyError::InvalidArgument("theta* must be finite".into()));
            }
            let mean: f64 = dist
                .pmf()
                .iter()
                .zip(q)
                .map(|(p, qt)| p * ((1.0 - qt) * noise_lo + qt * noise_hi))
                .sum();
            if mean.abs() > 1e-9 {
                return Err(SurveyError::InvalidArgument(format!(
                    "noise must have mean zero, got {mean}"
                )));
            }
        }
        Ok(())
    }

    /// The estimand: `(E[m], ..., E[m])` or `theta*`.
    pub fn truth(&self, dist: &DiscreteCostDistribution) -> Vec<f64> {
        match self {
            DataModel::MomentBinary { q, dim } => {
                let m: f64 = dist.pmf().iter().zip(q).map(|(p, qt)| p * qt).sum();
                vec![m; *dim]
            }
            DataModel::Regression { theta_star, .. } => theta_star.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Replace the model's `q` by the design's worst-case adversary.
    pub adversarial: bool,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.reps == 0 {
            return Err(SurveyError::InvalidArgument("n and reps must be at least 1".into()));
        }
        Ok(())
    }
}

/// What the simulator needs from a design: the population, how each type is
/// treated, and (optionally) the worst-case adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyPlan {
    pub dist: DiscreteCostDistribution,
    /// Per-type purchase probability and payment when `menu` is absent.
    pub alloc: Vec<f64>,
    pub prices: Vec<f64>,
    /// Posted menu; agents pick their utility-maximizing item.
    pub menu: Option<Menu>,
    /// Worst-case `q` aligned to the types, if the design has one.
    pub adversary: Option<Vec<f64>>,
}

impl SurveyPlan {
    pub fn from_mechanism(m: &MechanismDesign) -> Self {
        Self {
            dist: m.true_costs.clone(),
            alloc: m.design.probs.probs().to_vec(),
            prices: m.payments.prices.clone(),
            menu: Some(m.menu.clone()),
            adversary: Some(m.design.adversary.clone()),
        }
    }

    /// Direct survey in optimization space; agents are paid their cost.
    pub fn from_moment(d: &MomentDesign, dist: &DiscreteCostDistribution) -> Result<Self> {
        if dist.costs() != d.costs.as_slice() {
            return Err(SurveyError::InvalidArgument(
                "design support does not match the distribution".into(),
            ));
        }
        Ok(Self {
            dist: dist.clone(),
            alloc: d.probs.probs().to_vec(),
            prices: d.costs.clone(),
            menu: None,
            adversary: Some(d.adversary.clone()),
        })
    }

    /// Direct survey in optimization space. The adversary is expressed for
    /// the instance as given (undoing any internal `L`/`U` swap).
    pub fn from_regression(d: &RegressionDesign, inst: &RegressionInstance) -> Self {
        let adversary = d.adversary.as_ref().map(|a| {
            if d.swapped {
                a.q.iter().map(|q| 1.0 - q).collect()
            } else {
                a.q.clone()
            }
        });
        Self {
            dist: inst.costs_dist.clone(),
            alloc: d.rule.probs().to_vec(),
            prices: inst.costs_dist.costs().to_vec(),
            menu: None,
            adversary,
        }
    }

    /// `(probability, price)` an agent of each type ends up with.
    pub fn treatment(&self) -> Vec<(f64, f64)> {
        match &self.menu {
            Some(menu) => self
                .dist
                .costs()
                .iter()
                .map(|&c| match menu.choose(c) {
                    Some(i) => (menu.items[i].prob, menu.items[i].price),
                    None => (0.0, 0.0),
                })
                .collect(),
            None => self.alloc.iter().copied().zip(self.prices.iter().copied()).collect(),
        }
    }
}

/// One purchased data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub type_index: usize,
    /// Purchase probability the agent faced.
    pub prob: f64,
    pub price: f64,
    /// Moment values (binary model) or empty.
    pub m: Vec<f64>,
    /// Features and response (regression model) or empty / 0.
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySample {
    pub n: usize,
    pub selected: Vec<Observation>,
    pub total_spend: f64,
    /// Agents of each type, and how many of them were bought.
    pub type_counts: Vec<usize>,
    pub type_selected: Vec<usize>,
}

/// The RNG for repetition `rep`.
pub fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Runs one survey on `n` agents drawn from `plan.dist`.
pub fn run_survey(
    model: &DataModel,
    plan: &SurveyPlan,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SurveySample> {
    let dist = &plan.dist;
    let treatment = plan.treatment();
    let types = WeightedIndex::new(dist.pmf())
        .map_err(|e| SurveyError::InvalidDistribution(e.to_string()))?;
    let mut sample = SurveySample {
        n,
        selected: Vec::new(),
        total_spend: 0.0,
        type_counts: vec![0; dist.len()],
        type_selected: vec![0; dist.len()],
    };
    for _ in 0..n {
        let t = types.sample(rng);
        sample.type_counts[t] += 1;
        let (prob, price) = treatment[t];
        if !(rng.random::<f64>() < prob) {
            continue;
        }
        sample.type_selected[t] += 1;
        sample.total_spend += price;
        let mut obs = Observation {
            type_index: t,
            prob,
            price,
            m: Vec::new(),
            x: Vec::new(),
            y: 0.0,
        };
        match model {
            DataModel::MomentBinary { q, dim } => {
                obs.m = (0..*dim)
                    .map(|_| if rng.random::<f64>() < q[t] { 1.0 } else { 0.0 })
                    .collect();
            }
            DataModel::Regression {
                theta_star,
                noise_lo,
                noise_hi,
                q,
                feature_scale,
            } => {
                obs.x = (0..theta_star.len())
                    .map(|_| feature_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let eps = if rng.random::<f64>() < q[t] { *noise_hi } else { *noise_lo };
                obs.y = obs.x.iter().zip(theta_star).map(|(x, th)| x * th).sum::<f64>() + eps;
            }
        }
        sample.selected.push(obs);
    }
    Ok(sample)
}

/// `(1/n) sum_{i in S} m_i / A_i` for a scalar moment (the first coordinate).
pub fn ht_estimate(selected: &[Observation], n: usize) -> Result<f64> {
    ht_estimate_multi(selected, n, 1).map(|v| v[0])
}

/// Coordinatewise Horvitz-Thompson estimate of a `d`-vector of moments.
pub fn ht_estimate_multi(selected: &[Observation], n: usize, d: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(SurveyError::InvalidArgument("population size must be positive".into()));
    }
    let mut sum = vec![0.0; d];
    for (i, obs) in selected.iter().enumerate() {
        if !(obs.prob > 0.0) {
            return Err(SurveyError::ZeroAllocation(i));
        }
        if obs.m.len() < d {
            return Err(SurveyError::DimensionMismatch {
                expected: d,
                got: obs.m.len(),
            });
        }
        for (s, m) in sum.iter_mut().zip(&obs.m) {
            *s += m / obs.prob;
        }
    }
    Ok(sum.into_iter().map(|s| s / n as f64).collect())
}

/// Solves `(sum x x^T / A) theta = sum x y / A`.
pub fn wls_estimate(selected: &[Observation]) -> Result<Vec<f64>> {
    let d = selected.first().map(|o| o.x.len()).ok_or(SurveyError::SingularGram)?;
    if d == 0 {
        return Err(SurveyError::SingularGram);
    }
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for (i, obs) in selected.iter().enumerate() {
        if !(obs.prob > 0.0) {
            return Err(SurveyError::ZeroAllocation(i));
        }
        if obs.x.len() != d {
            return Err(SurveyError::DimensionMismatch {
                expected: d,
                got: obs.x.len(),
            });
        }
        let x = DVector::from_column_slice(&obs.x);
        let w = 1.0 / obs.prob;
        gram.ger(w, &x, &x, 1.0);
        rhs.axpy(w * obs.y, &x, 1.0);
    }
    let scale = gram.diagonal().max();
    let chol = gram.clone().cholesky().ok_or(SurveyError::SingularGram)?;
    let pivot_min = chol.l_dirty().diagonal().min();
    if !(scale > 0.0) || pivot_min * pivot_min <= 1e-12 * scale {
        return Err(SurveyError::SingularGram);
    }
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// One repetition's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimate: Vec<f64>,
    pub spend_per_agent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n: usize,
    pub reps: usize,
    pub truth: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    /// Standard error of each coordinate of `mean_estimate`.
    pub estimate_se: Vec<f64>,
    /// `n` times the sample variance summed over coordinates (moment models),
    /// or `n` times the mean squared error against `theta*` (regression).
    pub empirical_variance_scaled: f64,
    pub mean_spend_per_agent: f64,
    pub spend_se: f64,
    /// Analytic counterpart of `empirical_variance_scaled`.
    pub predicted_value: f64,
}

/// `n`-scaled variance (risk) the theory predicts for the plan under `model`.
pub fn predicted_value(model: &DataModel, plan: &SurveyPlan) -> Result<f64> {
    let treatment = plan.treatment();
    let probs: Vec<f64> = treatment.iter().map(|(a, _)| *a).collect();
    let rule = AllocationRule::new(probs)?;
    match model {
        DataModel::MomentBinary { q, dim } => {
            Ok(*dim as f64 * game_verify::variance(&rule, q, &plan.dist)?)
        }
        DataModel::Regression {
            theta_star,
            noise_lo,
            noise_hi,
            q,
            feature_scale,
        } => {
            let e: f64 = plan
                .dist
                .pmf()
                .iter()
                .zip(q)
                .zip(rule.probs())
                .map(|((p, qt), a)| p * ((1.0 - qt) * noise_lo.powi(2) + qt * noise_hi.powi(2)) / a)
                .sum();
            Ok(theta_star.len() as f64 * e / feature_scale.powi(2))
        }
    }
}

fn mean_and_var(xs: impl Iterator<Item = f64> + Clone, len: usize) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / len as f64;
    let var = if len > 1 {
        xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (len - 1) as f64
    } else {
        0.0
    };
    (mean, var)
}

/// Runs `config.reps` independent surveys (in parallel when enabled) and
/// aggregates them in rep order.
pub fn monte_carlo(
    model: &DataModel,
    plan: &SurveyPlan,
    config: &SimulationConfig,
) -> Result<(SimulationReport, Vec<RepRecord>)> {
    config.validate()?;
    let model = if config.adversarial {
        let q = plan.adversary.clone().ok_or_else(|| {
            SurveyError::InvalidArgument("design has no adversary to simulate against".into())
        })?;
        model.with_q(q)
    } else {
        model.clone()
    };
    model.validate(&plan.dist)?;
    let d = model.dim();

    let records: Vec<RepRecord> = par::map_range(config.reps, |rep| {
        let mut rng = rep_rng(config.seed, rep as u64);
        let sample = run_survey(&model, plan, config.n, &mut rng)?;
        let estimate = match &model {
            DataModel::MomentBinary { .. } => ht_estimate_multi(&sample.selected, config.n, d)?,
            // empty or rank-deficient selections are kept with estimate 0
            DataModel::Regression { .. } => match wls_estimate(&sample.selected) {
                Err(SurveyError::SingularGram) => vec![0.0; d],
                other => other?,
            },
        };
        Ok(RepRecord {
            rep,
            estimate,
            spend_per_agent: sample.total_spend / config.n as f64,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let reps = records.len();
    let truth = model.truth(&plan.dist);
    let mut mean_estimate = Vec::with_capacity(d);
    let mut estimate_se = Vec::with_capacity(d);
    let mut var_sum = 0.0;
    for j in 0..d {
        let (m, v) = mean_and_var(records.iter().map(|r| r.estimate[j]), reps);
        mean_estimate.push(m);
        estimate_se.push((v / reps as f64).sqrt());
        var_sum += v;
    }
    let n = config.n as f64;
    let empirical_variance_scaled = match &model {
        DataModel::MomentBinary { .. } => n * var_sum,
        DataModel::Regression { .. } => {
            let mse = records
                .iter()
                .map(|r| r.estimate.iter().zip(&truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>())
                .sum::<f64>()
                / reps as f64;
            n * mse
        }
    };
    let (mean_spend, spend_var) = mean_and_var(records.iter().map(|r| r.spend_per_agent), reps);
    let report = SimulationReport {
        n: config.n,
        reps,
        truth,
        mean_estimate,
        estimate_se,
        empirical_variance_scaled,
        mean_spend_per_agent: mean_spend,
        spend_se: (spend_var / reps as f64).sqrt(),
        predicted_value: predicted_value(&model, plan)?,
    };
    Ok((report, records))
}
