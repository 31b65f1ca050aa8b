//! Persisted designs: one JSON format for every kind of design, tagged by
//! `"kind"`, with a self-check used by `survey verify`.

use serde::{Deserialize, Serialize};

use crate::cost_model::{ContinuousCostDistribution, DiscreteCostDistribution};
use crate::error::{Result, SurveyError};
use crate::game_verify::{verify_equilibrium, EquilibriumCertificate};
use crate::mechanism::{
    adaptive_simpson, build_menu, check_ic_ir_with_tol, expected_budget, payments_discrete, IcIrReport,
    MechanismDesign,
};
use crate::moment_design::{design_moment_continuous, g_fun, ContinuousDesign, MomentDesign};
use crate::regression_design::{
    design_regression, regression_objective, RegressionDesign, RegressionInstance,
};

/// Which costs the allocation is indexed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// True costs: a truthful mechanism designed through virtual costs.
    True,
    /// Costs taken as given (the analyst's optimization problem).
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignArtifact {
    Moment {
        distribution: DiscreteCostDistribution,
        design: MomentDesign,
    },
    Mechanism {
        mechanism: MechanismDesign,
    },
    Regression {
        instance: RegressionInstance,
        design: RegressionDesign,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
    },
    Continuous {
        family: ContinuousCostDistribution,
        space: Space,
        budget_per_agent: f64,
        /// `phi(c) / c`; the rule below was solved at budget `B / scale`.
        virtual_scale: f64,
        design: ContinuousDesign,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The measured quantity (residual, spend, ...).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub kind: String,
    pub passed: bool,
    pub tol: f64,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<EquilibriumCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ic_ir: Option<IcIrReport>,
}

fn check(name: &str, passed: bool, value: f64) -> Check {
    Check {
        name: name.to_string(),
        passed,
        value,
    }
}

impl DesignArtifact {
    pub fn kind(&self) -> &'static str {
        match self {
            DesignArtifact::Moment { .. } => "moment",
            DesignArtifact::Mechanism { .. } => "mechanism",
            DesignArtifact::Regression { .. } => "regression",
            DesignArtifact::Continuous { .. } => "continuous",
        }
    }

    pub fn regression(instance: RegressionInstance) -> Result<Self> {
        let design = design_regression(&instance)?;
        let warning = design.degenerate.then(|| {
            "noise range has a zero endpoint: the noise is identically zero and any feasible rule is optimal"
                .to_string()
        });
        Ok(DesignArtifact::Regression {
            instance,
            design,
            warning,
        })
    }

    /// Continuous design; in the true space the rule is the virtual-space
    /// rule at budget `B / s`, since `phi(c) = s c` for the built-in families.
    pub fn continuous(family: ContinuousCostDistribution, budget: f64, space: Space) -> Result<Self> {
        family.validate()?;
        let scale = match space {
            Space::True => family.virtual_scale(),
            Space::Virtual => 1.0,
        };
        if !(budget.is_finite() && budget > 0.0) {
            return Err(SurveyError::InfeasibleBudget(budget));
        }
        let design = design_moment_continuous(&family, budget / scale)?;
        Ok(DesignArtifact::Continuous {
            family,
            space,
            budget_per_agent: budget,
            virtual_scale: scale,
            design,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifacts serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SurveyError::InvalidArgument(e.to_string()))
    }

    /// Re-checks the design's defining properties within `tol`.
    pub fn verify(&self, tol: f64) -> Result<VerificationReport> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(SurveyError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
        }
        let mut checks = Vec::new();
        let mut certificate = None;
        let mut ic_ir = None;
        match self {
            DesignArtifact::Moment { distribution, design } => {
                checks.push(check("support_matches", distribution.costs() == design.costs.as_slice(), 0.0));
                let cert = verify_equilibrium(
                    &design.probs,
                    &design.adversary,
                    distribution,
                    design.budget_per_agent,
                    tol,
                )?;
                checks.push(check("equilibrium", cert.passed(), cert.value));
                certificate = Some(cert);
            }
            DesignArtifact::Mechanism { mechanism: m } => {
                let a = &m.design.probs;
                let b = m.design.budget_per_agent;
                let virt = m.virtual_costs.as_distribution()?;
                let cert = verify_equilibrium(a, &m.design.adversary, &virt, b, tol)?;
                checks.push(check("equilibrium", cert.passed(), cert.value));
                certificate = Some(cert);

                let fresh = payments_discrete(a, m.true_costs.costs())?;
                let gap = fresh
                    .prices
                    .iter()
                    .zip(&m.payments.prices)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                checks.push(check("payments_match_allocation", gap <= tol * b.max(1.0), gap));

                let report = check_ic_ir_with_tol(m.true_costs.costs(), a, &m.payments, tol * b.max(1.0))?;
                checks.push(check("ic_ir", report.passed, 0.0));
                ic_ir = Some(report);

                let spend = expected_budget(a, &m.payments, &m.true_costs)?;
                checks.push(check("spend_within_budget", spend <= b + tol * b.max(1.0), spend));

                let menu = build_menu(a, &m.payments);
                let same_menu = menu.items.len() == m.menu.items.len()
                    && menu.items.iter().zip(&m.menu.items).all(|(x, y)| {
                        (x.price - y.price).abs() <= tol * x.price.max(1.0) && (x.prob - y.prob).abs() <= tol
                    });
                checks.push(check("menu_matches", same_menu, 0.0));
            }
            DesignArtifact::Regression { instance, design, .. } => {
                let a = &design.rule;
                let b = instance.budget_per_agent;
                let dist = &instance.costs_dist;
                let spend: f64 = dist
                    .pmf()
                    .iter()
                    .zip(dist.costs())
                    .zip(a.probs())
                    .map(|((p, c), at)| p * c * at)
                    .sum();
                let scale = b.max(1.0);
                let all_one = a.probs().iter().all(|x| *x >= 1.0 - tol);
                checks.push(check("monotone", a.check_monotone(tol).is_ok(), 0.0));
                let binding = (spend - b).abs() <= tol * scale || (all_one && spend <= b + tol * scale);
                let binding = binding || (design.degenerate && spend <= b + tol * scale);
                checks.push(check("budget_binding", binding, spend - b));
                let fresh = design_regression(instance)?;
                if let Some(adv) = &fresh.adversary {
                    let obj = regression_objective(a, &normalized(instance, design.swapped), adv)?;
                    let obj_scale = fresh.objective.abs().max(1.0);
                    checks.push(check(
                        "objective_consistent",
                        (obj - design.objective).abs() <= tol * obj_scale,
                        obj - design.objective,
                    ));
                    checks.push(check(
                        "optimal",
                        obj <= fresh.objective + tol * obj_scale,
                        obj - fresh.objective,
                    ));
                }
            }
            DesignArtifact::Continuous {
                family,
                budget_per_agent,
                virtual_scale,
                design,
                ..
            } => {
                let b = budget_per_agent / virtual_scale;
                let alloc = |c: f64| design.alloc_at(c).unwrap_or(0.0);
                let spend = adaptive_simpson(
                    &|c: f64| if c > 0.0 { alloc(c) * c * family.pdf(c) } else { 0.0 },
                    0.0,
                    1.0,
                    1e-11,
                );
                let flat_one = design.pooled_level >= 1.0 - tol && design.x_star >= 1.0;
                let scale = b.max(1.0);
                checks.push(check(
                    "budget_binding",
                    (spend - b).abs() <= tol.max(1e-9) * scale || (flat_one && spend <= b + tol * scale),
                    spend - b,
                ));
                if design.x_star < 1.0 {
                    let g = g_fun(family, design.x_star);
                    checks.push(check("threshold", (g - b).abs() <= tol.max(1e-9) * scale, g - b));
                }
                let join = (design.alpha / design.x_star.sqrt()).min(1.0);
                checks.push(check("monotone", design.pooled_level >= join - tol, design.pooled_level - join));
            }
        }
        Ok(VerificationReport {
            kind: self.kind().to_string(),
            passed: checks.iter().all(|c| c.passed),
            tol,
            checks,
            certificate,
            ic_ir,
        })
    }
}

fn normalized(instance: &RegressionInstance, swapped: bool) -> RegressionInstance {
    if swapped {
        instance.mirrored()
    } else {
        instance.clone()
    }
}
