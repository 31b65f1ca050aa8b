use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use survey_core::{
    brute_force_minimax, design_mechanism, design_moment_discrete, discretize,
    monte_carlo, virtual_costs_discrete, CostPrior, DataModel, DesignArtifact,
    DiscreteCostDistribution, RegressionInstance, SimulationConfig, Space, SurveyError,
    SurveyPlan,
};

#[derive(Parser)]
#[command(name = "survey", version, about = "Design, verify and simulate budgeted data-purchase surveys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    True,
    Virtual,
}

impl From<SpaceArg> for Space {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::True => Space::True,
            SpaceArg::Virtual => Space::Virtual,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Optimal moment-estimation design for a cost prior.
    DesignMoment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        budget: f64,
        /// `true`: truthful mechanism on true costs; `virtual`: costs taken as given.
        #[arg(long, value_enum, default_value = "true")]
        space: SpaceArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal regression design for an instance file.
    DesignRegression {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a mechanism's posted menu.
    Menu {
        #[arg(long)]
        design: PathBuf,
        /// Also write the menu as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a design artifact; exits 5 if any check fails.
    Verify {
        #[arg(long)]
        design: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Brute-force minimax value next to the closed form (|C| <= 4).
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, value_enum, default_value = "virtual")]
        space: SpaceArg,
    },
    /// Monte Carlo surveys under a design.
    Simulate {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        /// Draw data from the design's worst-case adversary.
        #[arg(long)]
        adversarial: bool,
        /// Per-type data probabilities, comma separated (instead of --adversarial).
        #[arg(long, value_delimiter = ',')]
        q: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Standard deviation of regression features.
        #[arg(long, default_value_t = 1.0)]
        feature_scale: f64,
        /// Per-rep CSV.
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON (also printed to stdout).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Design summary across a grid of budgets, as CSV.
    Curve {
        #[arg(long)]
        config: PathBuf,
        /// `lo:hi:count` or a comma-separated list.
        #[arg(long)]
        budget_grid: String,
        #[arg(long, value_enum, default_value = "virtual")]
        space: SpaceArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Discretize a continuous prior on a grid of width eps.
    Discretize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    kind: String,
    msg: String,
}

impl From<SurveyError> for Failure {
    fn from(e: SurveyError) -> Self {
        let code = match e {
            SurveyError::NonRegular(_) => 3,
            SurveyError::InfeasibleBudget(_) => 4,
            SurveyError::Internal(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            kind: e.kind().to_string(),
            msg: e.to_string(),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        kind: "InvalidConfig".into(),
        msg: msg.into(),
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        kind: "Io".into(),
        msg: format!("{}: {e}", path.display()),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_artifact(path: &Path) -> CliResult<DesignArtifact> {
    Ok(DesignArtifact::from_json(&read(path)?)?)
}

fn load_discrete(path: &Path) -> CliResult<DiscreteCostDistribution> {
    match CostPrior::from_json(&read(path)?)? {
        CostPrior::Discrete(d) => Ok(d),
        CostPrior::Continuous(_) => Err(config_error("expected a discrete prior (costs, pmf)")),
    }
}

/// The distribution the optimization problem runs on.
fn optimization_space(dist: DiscreteCostDistribution, space: SpaceArg) -> CliResult<DiscreteCostDistribution> {
    match space {
        SpaceArg::Virtual => Ok(dist),
        SpaceArg::True => Ok(virtual_costs_discrete(&dist)?.as_distribution()?),
    }
}

fn csv_writer(path: Option<&Path>) -> CliResult<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| io_error(p, e))?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn csv_failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        kind: "Io".into(),
        msg: e.to_string(),
    }
}

fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let bad = || config_error(format!("bad budget grid {text:?}; use lo:hi:count or a,b,c"));
    if let [lo, hi, count] = text.split(':').collect::<Vec<_>>()[..] {
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        let count: usize = count.trim().parse().map_err(|_| bad())?;
        return match count {
            0 => Err(bad()),
            1 => Ok(vec![lo]),
            _ => Ok((0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect()),
        };
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::DesignMoment {
            config,
            budget,
            space,
            out,
        } => {
            let prior = CostPrior::from_json(&read(&config)?)?;
            let artifact = match (prior, space) {
                (CostPrior::Discrete(d), SpaceArg::True) => DesignArtifact::Mechanism {
                    mechanism: design_mechanism(&d, budget)?,
                },
                (CostPrior::Discrete(d), SpaceArg::Virtual) => DesignArtifact::Moment {
                    design: design_moment_discrete(&d, budget)?,
                    distribution: d,
                },
                (CostPrior::Continuous(f), space) => DesignArtifact::continuous(f, budget, space.into())?,
            };
            emit(out.as_deref(), &artifact.to_json())
        }
        Command::DesignRegression { config, out } => {
            let instance = RegressionInstance::from_json(&read(&config)?)?;
            let artifact = DesignArtifact::regression(instance)?;
            if let DesignArtifact::Regression {
                warning: Some(w), ..
            } = &artifact
            {
                eprintln!("warning: {w}");
            }
            emit(out.as_deref(), &artifact.to_json())
        }
        Command::Menu { design, out } => {
            let menu = match load_artifact(&design)? {
                DesignArtifact::Mechanism { mechanism } => mechanism.menu,
                other => {
                    return Err(config_error(format!(
                        "a {} design has no posted menu; design with --space true",
                        other.kind()
                    )))
                }
            };
            println!("{:>14}  {:>14}", "price", "probability");
            for item in &menu.items {
                println!("{:>14.6}  {:>14.6}", item.price, item.prob);
            }
            if let Some(path) = out {
                let mut w = csv_writer(Some(&path))?;
                w.write_record(["price", "probability"]).map_err(csv_failure)?;
                for item in &menu.items {
                    w.write_record([item.price.to_string(), item.prob.to_string()])
                        .map_err(csv_failure)?;
                }
                w.flush().map_err(csv_failure)?;
            }
            Ok(())
        }
        Command::Verify { design, tol } => {
            let report = load_artifact(&design)?.verify(tol)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.passed {
                Ok(())
            } else {
                let failed: Vec<_> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                Err(Failure {
                    code: 5,
                    kind: "VerificationFailed".into(),
                    msg: format!("failed checks: {}", failed.join(", ")),
                })
            }
        }
        Command::Oracle {
            config,
            budget,
            step,
            space,
        } => {
            let dist = optimization_space(load_discrete(&config)?, space)?;
            let closed = design_moment_discrete(&dist, budget)?.value;
            let oracle = brute_force_minimax(&dist, budget, step, step)?;
            println!("oracle\tclosed_form\trelative_gap");
            println!("{oracle}\t{closed}\t{}", (oracle - closed) / closed);
            Ok(())
        }
        Command::Simulate {
            design,
            n,
            reps,
            seed,
            adversarial,
            q,
            dim,
            feature_scale,
            out,
            summary,
        } => {
            let artifact = load_artifact(&design)?;
            let (plan, lo_hi) = match &artifact {
                DesignArtifact::Mechanism { mechanism } => (SurveyPlan::from_mechanism(mechanism), None),
                DesignArtifact::Moment { distribution, design } => {
                    (SurveyPlan::from_moment(design, distribution)?, None)
                }
                DesignArtifact::Regression { instance, design, .. } => (
                    SurveyPlan::from_regression(design, instance),
                    Some((instance.noise_lo, instance.noise_hi)),
                ),
                DesignArtifact::Continuous { .. } => {
                    return Err(config_error(
                        "continuous designs are simulated after discretization (survey discretize)",
                    ))
                }
            };
            let q = match (q, adversarial) {
                (Some(q), false) => q,
                (None, true) => vec![0.0; plan.dist.len()],
                (Some(_), true) => return Err(config_error("pass either --q or --adversarial, not both")),
                (None, false) => return Err(config_error("pass --q or --adversarial")),
            };
            let model = match lo_hi {
                None => DataModel::MomentBinary { q, dim },
                Some((noise_lo, noise_hi)) => DataModel::Regression {
                    theta_star: vec![1.0; dim],
                    noise_lo,
                    noise_hi,
                    q,
                    feature_scale,
                },
            };
            let config = SimulationConfig {
                n,
                reps,
                seed,
                adversarial,
            };
            let (report, records) = monte_carlo(&model, &plan, &config)?;

            let mut w = csv_writer(Some(&out))?;
            let d = report.mean_estimate.len();
            let mut header = vec!["rep".to_string()];
            if d == 1 {
                header.push("estimate".into());
            } else {
                header.extend((1..=d).map(|j| format!("estimate_{j}")));
            }
            header.push("spend".into());
            w.write_record(&header).map_err(csv_failure)?;
            for r in &records {
                let mut row = vec![r.rep.to_string()];
                row.extend(r.estimate.iter().map(|x| x.to_string()));
                row.push(r.spend_per_agent.to_string());
                w.write_record(&row).map_err(csv_failure)?;
            }
            w.flush().map_err(csv_failure)?;

            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(p) = summary {
                fs::write(&p, &text).map_err(|e| io_error(&p, e))?;
            }
            println!("{text}");
            Ok(())
        }
        Command::Curve {
            config,
            budget_grid,
            space,
            out,
        } => {
            let dist = optimization_space(load_discrete(&config)?, space)?;
            let budgets = parse_grid(&budget_grid)?;
            let mut w = csv_writer(out.as_deref())?;
            w.write_record(["budget", "value", "t_star", "pooled_level", "alpha"])
                .map_err(csv_failure)?;
            for b in budgets {
                let d = design_moment_discrete(&dist, b)?;
                w.write_record([
                    b.to_string(),
                    d.value.to_string(),
                    d.pool_end.to_string(),
                    d.pooled_level.to_string(),
                    d.alpha.to_string(),
                ])
                .map_err(csv_failure)?;
            }
            w.flush().map_err(csv_failure)
        }
        Command::Discretize { config, eps, out } => {
            let family = match CostPrior::from_json(&read(&config)?)? {
                CostPrior::Continuous(f) => f,
                CostPrior::Discrete(_) => return Err(config_error("expected a continuous prior")),
            };
            let d = discretize(&family, eps)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&d).expect("serializes"))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.kind, f.msg);
            ExitCode::from(f.code)
        }
    }
}
