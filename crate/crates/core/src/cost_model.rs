//! Cost priors: discrete and continuous distributions over agents' costs,
//! virtual costs, regularity checks, and discretization of continuous priors.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurveyError};

/// Tolerance on the total probability mass of a discrete prior.
pub const MASS_TOL: f64 = 1e-12;

/// Number of grid points used to check continuous regularity.
pub const REGULARITY_GRID: usize = 10_001;

/// Discrete cost prior: strictly increasing support with positive masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiscrete", deny_unknown_fields)]
pub struct DiscreteCostDistribution {
    costs: Vec<f64>,
    pmf: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiscrete {
    costs: Vec<f64>,
    pmf: Vec<f64>,
}

impl TryFrom<RawDiscrete> for DiscreteCostDistribution {
    type Error = SurveyError;

    fn try_from(raw: RawDiscrete) -> Result<Self> {
        DiscreteCostDistribution::new(raw.costs, raw.pmf)
    }
}

impl DiscreteCostDistribution {
    pub fn new(costs: Vec<f64>, pmf: Vec<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(SurveyError::InvalidDistribution("empty support".into()));
        }
        if costs.len() != pmf.len() {
            return Err(SurveyError::DimensionMismatch {
                expected: costs.len(),
                got: pmf.len(),
            });
        }
        if costs.iter().any(|c| !c.is_finite()) || costs[0] < 0.0 {
            return Err(SurveyError::InvalidDistribution(
                "costs must be finite and non-negative".into(),
            ));
        }
        if costs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SurveyError::NonMonotoneInput);
        }
        if pmf.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(SurveyError::InvalidDistribution(
                "pmf entries must be positive".into(),
            ));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(SurveyError::InvalidDistribution(format!(
                "pmf sums to {total}, not 1"
            )));
        }
        Ok(Self { costs, pmf })
    }

    /// Uniform masses over the given support.
    pub fn uniform(costs: Vec<f64>) -> Result<Self> {
        let n = costs.len().max(1);
        Self::new(costs, vec![1.0 / n as f64; n])
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn max_cost(&self) -> f64 {
        *self.costs.last().expect("non-empty support")
    }

    /// E[c].
    pub fn mean(&self) -> f64 {
        self.expect(|c| c)
    }

    /// E[g(c)].
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.costs.iter().zip(&self.pmf).map(|(&c, &p)| p * g(c)).sum()
    }

    /// F(c_t) for each t: cumulative masses.
    pub fn cdf(&self) -> Vec<f64> {
        self.pmf
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    /// Same masses, support multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.costs.iter().map(|c| c * s).collect(), self.pmf.clone())
    }

    /// Same masses on a different (strictly increasing) support.
    pub fn with_costs(&self, costs: Vec<f64>) -> Result<Self> {
        Self::new(costs, self.pmf.clone())
    }

    /// Index of `c` in the support, matching within a relative 1e-9.
    pub fn index_of(&self, c: f64) -> Option<usize> {
        self.costs
            .iter()
            .position(|&x| (x - c).abs() <= 1e-9 * x.abs().max(1.0))
    }
}

/// Discrete prior together with its virtual costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualCostDistribution {
    pub base: DiscreteCostDistribution,
    pub virtual_costs: Vec<f64>,
}

impl VirtualCostDistribution {
    /// The distribution of virtual costs, phi(F).
    pub fn as_distribution(&self) -> Result<DiscreteCostDistribution> {
        self.base.with_costs(self.virtual_costs.clone())
    }
}

fn raw_virtual_costs(f: &DiscreteCostDistribution) -> Vec<f64> {
    let mut below = 0.0;
    let mut prev_cost = 0.0;
    f.costs
        .iter()
        .zip(&f.pmf)
        .map(|(&c, &p)| {
            let phi = c + (c - prev_cost) * below / p;
            below += p;
            prev_cost = c;
            phi
        })
        .collect()
}

/// Discrete virtual costs `phi_t = c_t + (c_t - c_{t-1}) F(c_{t-1}) / pi_t` with `c_0 = 0`.
pub fn virtual_costs_discrete(f: &DiscreteCostDistribution) -> Result<VirtualCostDistribution> {
    let phi = raw_virtual_costs(f);
    if phi.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SurveyError::NonRegular(phi));
    }
    Ok(VirtualCostDistribution {
        base: f.clone(),
        virtual_costs: phi,
    })
}

/// Built-in continuous priors on (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ContinuousCostDistribution {
    /// Uniform on (0, 1].
    Uniform,
    /// Density proportional to `c^p` on (0, 1], `p > -1`.
    Power { p: f64 },
}

impl ContinuousCostDistribution {
    pub fn power(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > -1.0) {
            return Err(SurveyError::InvalidDistribution(format!(
                "power family needs p > -1, got {p}"
            )));
        }
        Ok(ContinuousCostDistribution::Power { p })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ContinuousCostDistribution::Uniform => Ok(()),
            ContinuousCostDistribution::Power { p } => Self::power(p).map(|_| ()),
        }
    }

    fn exponent(&self) -> f64 {
        match *self {
            ContinuousCostDistribution::Uniform => 0.0,
            ContinuousCostDistribution::Power { p } => p,
        }
    }

    pub fn cdf(&self, c: f64) -> f64 {
        if c <= 0.0 {
            0.0
        } else if c >= 1.0 {
            1.0
        } else {
            c.powf(self.exponent() + 1.0)
        }
    }

    pub fn pdf(&self, c: f64) -> f64 {
        if !(0.0..=1.0).contains(&c) {
            return 0.0;
        }
        let p = self.exponent();
        if p == 0.0 {
            1.0
        } else {
            (p + 1.0) * c.powf(p)
        }
    }

    /// Partial moment `E[c^a 1{c <= x}]` for `x` in [0, 1], `a >= 0`.
    pub fn partial_moment(&self, a: f64, x: f64) -> f64 {
        let p = self.exponent();
        let x = x.clamp(0.0, 1.0);
        if x == 0.0 {
            return 0.0;
        }
        (p + 1.0) / (p + 1.0 + a) * x.powf(p + 1.0 + a)
    }

    pub fn mean(&self) -> f64 {
        self.partial_moment(1.0, 1.0)
    }

    /// Virtual costs in these families are linear: `phi(c) = s c` with
    /// `s = (p + 2)/(p + 1)`.
    pub fn virtual_scale(&self) -> f64 {
        let p = self.exponent();
        (p + 2.0) / (p + 1.0)
    }
}

/// `phi(c) = c + F(c)/f(c)`.
pub fn virtual_cost_continuous(f: &ContinuousCostDistribution, c: f64) -> Result<f64> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(SurveyError::OutOfSupport(c));
    }
    let density = f.pdf(c);
    if density <= 0.0 || !density.is_finite() {
        return Err(SurveyError::OutOfSupport(c));
    }
    Ok(c + f.cdf(c) / density)
}

/// A prior of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostPrior {
    Discrete(DiscreteCostDistribution),
    Continuous(ContinuousCostDistribution),
}

impl CostPrior {
    /// Parse the JSON prior document.
    pub fn from_json(text: &str) -> Result<Self> {
        let prior: CostPrior = serde_json::from_str(text)
            .map_err(|e| SurveyError::InvalidDistribution(e.to_string()))?;
        if let CostPrior::Continuous(c) = &prior {
            c.validate()?;
        }
        Ok(prior)
    }
}

/// Regularity: strictly increasing virtual costs.
pub fn check_regular(f: &CostPrior) -> bool {
    match f {
        CostPrior::Discrete(d) => virtual_costs_discrete(d).is_ok(),
        CostPrior::Continuous(c) => check_regular_continuous(c),
    }
}

/// Evaluates phi on a uniform grid over [0, 1] (phi(0) taken as its limit 0)
/// and requires each step to increase, up to 1e-10 of rounding.
pub fn check_regular_continuous(f: &ContinuousCostDistribution) -> bool {
    let steps = (REGULARITY_GRID - 1) as f64;
    let mut prev = 0.0;
    for i in 1..REGULARITY_GRID {
        let c = i as f64 / steps;
        let Ok(phi) = virtual_cost_continuous(f, c) else {
            return false;
        };
        if phi - prev <= -1e-10 || phi == prev {
            return false;
        }
        prev = phi;
    }
    true
}

/// Discretize onto the grid `{eps, 2 eps, ..., 1}` with masses
/// `F(k eps) - F((k-1) eps)`; empty cells are dropped.
pub fn discretize(f: &ContinuousCostDistribution, eps: f64) -> Result<DiscreteCostDistribution> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(SurveyError::BadGrid(eps));
    }
    let cells = (1.0 / eps).round();
    if (cells * eps - 1.0).abs() > 1e-9 {
        return Err(SurveyError::BadGrid(eps));
    }
    let cells = cells as usize;
    let mut costs = Vec::with_capacity(cells);
    let mut pmf = Vec::with_capacity(cells);
    let mut prev = 0.0;
    for k in 1..=cells {
        let right = k as f64 / cells as f64;
        let cum = f.cdf(right);
        let mass = cum - prev;
        prev = cum;
        if mass > 0.0 {
            costs.push(right);
            pmf.push(mass);
        }
    }
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    DiscreteCostDistribution::new(costs, pmf)
}
