//! Experiment configuration, runners, and solution validation for the
//! command-line driver.
//!
//! An experiment is a JSON document naming a problem, the scenario to
//! generate, solver settings, and optionally a one-parameter sweep. Runners
//! produce result CSV plus a fully resolved copy of the configuration (all
//! defaults filled in) so runs are reproducible from their artifacts alone.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use outage_power::bernstein::VarianceConvention;
use outage_power::llbcp::{SolverConfig, Status};
use outage_power::model::{BroadcastScenario, ModelError, ScenarioSpec};
use outage_power::montecarlo::{
    estimate_mse_satisfaction, estimate_outage, write_outage_csv, OutageReport,
};
use outage_power::problems::{
    solve_maxmin, solve_mse_power_min, solve_power_min, status_name, write_result_csv, Budget,
    ProblemError, ResultRow,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stale solution: row scenario id {found} does not match any scenario derivable from this config")]
    StaleSolution { found: String },
    #[error("solution file contains no solved rows")]
    EmptySolution,
    #[error("malformed solution file: {0}")]
    BadSolution(String),
    #[error("certification failed for {0} row(s)")]
    CertificationFailed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "powermin")]
    PowerMin,
    #[serde(rename = "maxmin-individual")]
    MaxMinIndividual,
    #[serde(rename = "maxmin-total")]
    MaxMinTotal,
    #[serde(rename = "msemin")]
    MseMin,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::PowerMin => "powermin",
            ProblemKind::MaxMinIndividual => "maxmin-individual",
            ProblemKind::MaxMinTotal => "maxmin-total",
            ProblemKind::MseMin => "msemin",
        }
    }
}

/// Generation parameters for a broadcast scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastSpec {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub sigma2: f64,
    pub mu: f64,
    pub phi: f64,
    #[serde(default = "default_broadcast_noise")]
    pub eta2: f64,
    pub seed: u64,
}

fn default_broadcast_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    #[serde(default)]
    pub individual: Option<Vec<f64>>,
    #[serde(default)]
    pub total: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSpec {
    pub epsilon: f64,
    pub theta: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub max_iters: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSpec {
            epsilon: d.epsilon,
            theta: d.theta,
            newton_tol: d.newton_tol,
            max_newton: d.max_newton,
            max_iters: d.max_iters,
        }
    }
}

impl SolverSpec {
    pub fn to_config(self) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon,
            theta: self.theta,
            newton_tol: self.newton_tol,
            max_newton: self.max_newton,
            max_iters: self.max_iters,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "kappa")]
    Kappa,
    #[serde(rename = "eps")]
    Eps,
    #[serde(rename = "mu")]
    Mu,
    #[serde(rename = "budget")]
    BudgetScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationSpec {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        ValidationSpec {
            samples: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ConventionSpec {
    #[default]
    #[serde(rename = "paper")]
    Paper,
    #[serde(rename = "norm")]
    Norm,
}

impl ConventionSpec {
    pub fn to_convention(self) -> VarianceConvention {
        match self {
            ConventionSpec::Paper => VarianceConvention::Paper,
            ConventionSpec::Norm => VarianceConvention::Norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub broadcast: Option<BroadcastSpec>,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    #[serde(default)]
    pub variance_convention: ConventionSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub validation: ValidationSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Ok(serde_json::from_str(text)?)
    }

    /// The configuration with all defaults made explicit; byte-stable across
    /// runs of the same input.
    pub fn resolved_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("serialize");
    let mut h = DefaultHasher::new();
    text.hash(&mut h);
    format!("{:016x}", h.finish())
}

/// One solvable unit: a concrete scenario instance plus the value the sweep
/// assigned (if any).
enum Instance {
    Interference {
        id: String,
        spec: ScenarioSpec,
    },
    Broadcast {
        id: String,
        spec: BroadcastSpec,
    },
}

impl Instance {
    fn id(&self) -> &str {
        match self {
            Instance::Interference { id, .. } => id,
            Instance::Broadcast { id, .. } => id,
        }
    }
}

fn apply_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    value: f64,
) -> Result<ExperimentConfig, CliError> {
    let mut out = cfg.clone();
    match param {
        SweepParam::Alpha => {
            let sc = out
                .scenario
                .as_mut()
                .ok_or_else(|| CliError::Config("alpha sweep needs a scenario".into()))?;
            sc.alpha = value;
        }
        SweepParam::Kappa => {
            let sc = out
                .scenario
                .as_mut()
                .ok_or_else(|| CliError::Config("kappa sweep needs a scenario".into()))?;
            sc.kappa = value;
        }
        SweepParam::Eps => {
            let sc = out
                .scenario
                .as_mut()
                .ok_or_else(|| CliError::Config("eps sweep needs a scenario".into()))?;
            sc.eps = value;
        }
        SweepParam::Mu => {
            let bc = out
                .broadcast
                .as_mut()
                .ok_or_else(|| CliError::Config("mu sweep needs a broadcast block".into()))?;
            bc.mu = value;
        }
        SweepParam::BudgetScale => {
            let b = out
                .budget
                .as_mut()
                .ok_or_else(|| CliError::Config("budget sweep needs a budget block".into()))?;
            if let Some(t) = b.total.as_mut() {
                *t = value;
            } else if let Some(ind) = b.individual.as_mut() {
                for v in ind.iter_mut() {
                    *v = value;
                }
            } else {
                return Err(CliError::Config("budget block is empty".into()));
            }
        }
    }
    Ok(out)
}

fn instances(cfg: &ExperimentConfig) -> Result<Vec<(ExperimentConfig, Instance)>, CliError> {
    let configs: Vec<ExperimentConfig> = match &cfg.sweep {
        Some(sweep) => {
            if sweep.values.is_empty() {
                return Err(CliError::Config("sweep has no values".into()));
            }
            sweep
                .values
                .iter()
                .map(|&v| apply_sweep(cfg, sweep.param, v))
                .collect::<Result<_, _>>()?
        }
        None => vec![cfg.clone()],
    };
    configs
        .into_iter()
        .map(|c| {
            let inst = match c.problem {
                ProblemKind::MseMin => {
                    let spec = c
                        .broadcast
                        .clone()
                        .ok_or_else(|| CliError::Config("msemin needs a broadcast block".into()))?;
                    Instance::Broadcast {
                        id: hash_json(&spec),
                        spec,
                    }
                }
                _ => {
                    let spec = c
                        .scenario
                        .clone()
                        .ok_or_else(|| CliError::Config("this problem needs a scenario".into()))?;
                    Instance::Interference {
                        id: format!("{:016x}", spec.content_hash()),
                        spec,
                    }
                }
            };
            Ok((c, inst))
        })
        .collect()
}

fn budget_for(cfg: &ExperimentConfig, k: usize) -> Result<Budget, CliError> {
    let spec = cfg
        .budget
        .as_ref()
        .ok_or_else(|| CliError::Config("max-min problems need a budget block".into()))?;
    match cfg.problem {
        ProblemKind::MaxMinIndividual => {
            let ind = spec.individual.clone().ok_or_else(|| {
                CliError::Config("maxmin-individual needs budget.individual".into())
            })?;
            if ind.len() == 1 && k > 1 {
                return Ok(Budget::Individual(vec![ind[0]; k]));
            }
            if ind.len() != k {
                return Err(CliError::Config(format!(
                    "budget.individual lists {} caps for K = {k}",
                    ind.len()
                )));
            }
            Ok(Budget::Individual(ind))
        }
        ProblemKind::MaxMinTotal => {
            let t = spec
                .total
                .ok_or_else(|| CliError::Config("maxmin-total needs budget.total".into()))?;
            Ok(Budget::Total(t))
        }
        _ => Err(CliError::Config("budget given for a non-max-min problem".into())),
    }
}

fn broadcast_scenario(spec: &BroadcastSpec) -> Result<BroadcastScenario, CliError> {
    Ok(BroadcastScenario::generate(
        spec.k, spec.m, spec.sigma2, spec.mu, spec.phi, spec.eta2, spec.seed,
    )?)
}

/// Output of a run: the result rows, their CSV rendering, and the resolved
/// configuration document.
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub csv: String,
    pub resolved_config: String,
}

/// Solves every instance the configuration describes, in declaration order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let mut rows = Vec::new();
    for (c, inst) in instances(cfg)? {
        let solver = c.solver.to_config();
        let convention = c.variance_convention.to_convention();
        let started = Instant::now();
        let row = match (&inst, c.problem) {
            (Instance::Interference { id, spec }, ProblemKind::PowerMin) => {
                let sc = outage_power::model::generate_interference_scenario(spec)?;
                let r = solve_power_min(&sc, convention, &solver)?;
                ResultRow {
                    scenario_id: id.clone(),
                    problem: c.problem.name().into(),
                    k: spec.k,
                    m: spec.m,
                    kappa: spec.kappa,
                    eps: spec.eps,
                    alpha_or_mu: spec.alpha,
                    objective: r.objective,
                    status: r.status,
                    iterations: r.iterations,
                    cuts: r.cuts_added,
                    runtime_ms: started.elapsed().as_secs_f64() * 1e3,
                    p: r.p.unwrap_or_default(),
                }
            }
            (
                Instance::Interference { id, spec },
                ProblemKind::MaxMinIndividual | ProblemKind::MaxMinTotal,
            ) => {
                let sc = outage_power::model::generate_interference_scenario(spec)?;
                let budget = budget_for(&c, spec.k)?;
                let r = solve_maxmin(&sc, &budget, convention, &solver)?;
                let status = if r.certified {
                    Status::Optimal
                } else {
                    Status::IterationCap
                };
                ResultRow {
                    scenario_id: id.clone(),
                    problem: c.problem.name().into(),
                    k: spec.k,
                    m: spec.m,
                    kappa: spec.kappa,
                    eps: spec.eps,
                    alpha_or_mu: r.alpha_star,
                    objective: Some(r.alpha_star),
                    status,
                    iterations: r.outer_iterations,
                    cuts: 0,
                    runtime_ms: started.elapsed().as_secs_f64() * 1e3,
                    p: r.p,
                }
            }
            (Instance::Broadcast { id, spec }, ProblemKind::MseMin) => {
                let sc = broadcast_scenario(spec)?;
                let r = solve_mse_power_min(&sc, &solver)?;
                ResultRow {
                    scenario_id: id.clone(),
                    problem: c.problem.name().into(),
                    k: spec.k,
                    m: spec.m,
                    kappa: 0.0,
                    eps: 1.0 - spec.phi,
                    alpha_or_mu: spec.mu,
                    objective: r.objective,
                    status: r.status,
                    iterations: r.iterations,
                    cuts: r.cuts_added,
                    runtime_ms: started.elapsed().as_secs_f64() * 1e3,
                    p: r.p.unwrap_or_default(),
                }
            }
            _ => {
                return Err(CliError::Config(
                    "problem kind does not match the scenario blocks present".into(),
                ))
            }
        };
        rows.push(row);
    }
    let mut buf = Vec::new();
    write_result_csv(&rows, &mut buf).expect("csv to memory");
    Ok(RunOutput {
        rows,
        csv: String::from_utf8(buf).expect("csv is utf8"),
        resolved_config: cfg.resolved_json(),
    })
}

/// A solved row parsed back from a result CSV.
#[derive(Debug, Clone)]
pub struct SolutionRow {
    pub scenario_id: String,
    pub problem: String,
    pub alpha_or_mu: f64,
    pub status: String,
    pub p: Vec<f64>,
}

/// Parses a result CSV back into rows (only the columns validation needs).
pub fn parse_result_csv(text: &str) -> Result<Vec<SolutionRow>, CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::BadSolution("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|&c| c == name)
            .ok_or_else(|| CliError::BadSolution(format!("missing column {name}")))
    };
    let i_id = find("scenario_id")?;
    let i_problem = find("problem")?;
    let i_target = find("alpha_or_mu")?;
    let i_status = find("status")?;
    let p_cols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with('p') && c[1..].chars().all(|ch| ch.is_ascii_digit()) && c.len() > 1)
        .map(|(i, _)| i)
        .collect();
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| {
            fields
                .get(i)
                .copied()
                .ok_or_else(|| CliError::BadSolution(format!("row {}: too few fields", ln + 2)))
        };
        let mut p = Vec::new();
        for &i in &p_cols {
            let f = get(i)?;
            if !f.is_empty() {
                p.push(f.parse::<f64>().map_err(|e| {
                    CliError::BadSolution(format!("row {}: bad power value: {e}", ln + 2))
                })?);
            }
        }
        rows.push(SolutionRow {
            scenario_id: get(i_id)?.to_string(),
            problem: get(i_problem)?.to_string(),
            alpha_or_mu: get(i_target)?.parse().map_err(|e| {
                CliError::BadSolution(format!("row {}: bad target: {e}", ln + 2))
            })?,
            status: get(i_status)?.to_string(),
            p,
        });
    }
    Ok(rows)
}

/// Result of validating one solved row.
pub struct ValidationRow {
    pub scenario_id: String,
    pub report: OutageReport,
}

pub struct ValidationOutput {
    pub rows: Vec<ValidationRow>,
    pub report_csv: String,
    pub failures: usize,
}

/// Re-certifies solved rows by Monte Carlo against the scenarios derivable
/// from the configuration.
///
/// Rows whose scenario id does not match any derivable scenario are stale
/// (the config changed since the solve) and abort validation. Rows without
/// a solution are skipped; if none remain, [`CliError::EmptySolution`].
pub fn validate_solution(
    cfg: &ExperimentConfig,
    solution_csv: &str,
    samples: Option<usize>,
    seed: Option<u64>,
) -> Result<ValidationOutput, CliError> {
    let n = samples.unwrap_or(cfg.validation.samples);
    let seed = seed.unwrap_or(cfg.validation.seed);
    let known = instances(cfg)?;
    let rows = parse_result_csv(solution_csv)?;
    let mut out_rows = Vec::new();
    let mut failures = 0usize;
    let mut report_csv = String::new();
    for row in &rows {
        let inst = known
            .iter()
            .map(|(_, i)| i)
            .find(|i| i.id() == row.scenario_id)
            .ok_or_else(|| CliError::StaleSolution {
                found: row.scenario_id.clone(),
            })?;
        if row.p.is_empty() {
            continue;
        }
        let report = match inst {
            Instance::Interference { spec, .. } => {
                let mut sc = outage_power::model::generate_interference_scenario(spec)?;
                if row.problem.starts_with("maxmin") {
                    // The achieved common target is what the row certifies.
                    for a in sc.alpha.iter_mut() {
                        *a = row.alpha_or_mu;
                    }
                }
                estimate_outage(&sc, &row.p, n, seed)
            }
            Instance::Broadcast { spec, .. } => {
                let sc = broadcast_scenario(spec)?;
                estimate_mse_satisfaction(&sc, &row.p, n, seed)?
            }
        };
        if !report.all_pass() {
            failures += 1;
        }
        let mut buf = Vec::new();
        write_outage_csv(&report, &mut buf).expect("csv to memory");
        let body = String::from_utf8(buf).expect("utf8");
        if report_csv.is_empty() {
            report_csv.push_str("scenario_id,user,rate,halfwidth,target,pass\n");
        }
        for line in body.lines().skip(1) {
            report_csv.push_str(&row.scenario_id);
            report_csv.push(',');
            report_csv.push_str(line);
            report_csv.push('\n');
        }
        out_rows.push(ValidationRow {
            scenario_id: row.scenario_id.clone(),
            report,
        });
    }
    if out_rows.is_empty() {
        return Err(CliError::EmptySolution);
    }
    Ok(ValidationOutput {
        rows: out_rows,
        report_csv,
        failures,
    })
}

/// Summarizes run rows for terminal output.
pub fn summarize(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let obj = r
            .objective
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{} {} K={} status={} objective={} iterations={}\n",
            r.scenario_id,
            r.problem,
            r.k,
            status_name(r.status),
            obj,
            r.iterations
        ));
    }
    s
}
