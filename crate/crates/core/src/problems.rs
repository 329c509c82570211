//! Optimization drivers: chance-constrained power minimization, max-min
//! SINR-target maximization under power budgets, and MSE-constrained power
//! minimization, all reduced to cutting-plane solves over the deterministic
//! constraint oracles.

use nalgebra::DVector;
use thiserror::Error;

use crate::bernstein::{
    minimize_over_t, ConstraintOracle, InterferenceOracle, MseOracle, SearchMode,
    VarianceConvention,
};
use crate::llbcp::{
    feasibility_tol, solve, ExitTest, Polytope, SolverConfig, SolverError, Status,
};
use crate::model::{BroadcastScenario, InterferenceScenario, ModelError};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid problem setup: {0}")]
    Invalid(String),
}

/// Transmit power in decibel-watts.
pub fn to_dbw(p: f64) -> f64 {
    10.0 * p.log10()
}

/// Power budget for the max-min problem.
#[derive(Debug, Clone)]
pub enum Budget {
    /// Per-transmitter budgets `p_k <= scale * p_bar_k`.
    Individual(Vec<f64>),
    /// Pooled budget `sum_k p_k <= scale * p_total`.
    Total(f64),
}

/// Outcome of a minimization driver.
#[derive(Debug, Clone)]
pub struct PowerMinResult {
    /// Solution vector (powers, or power-scale factors for the broadcast
    /// problem); `None` when no feasible point was found.
    pub p: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub status: Status,
    pub iterations: usize,
    pub cuts_added: usize,
    pub cuts_dropped: usize,
    pub exit_test: Option<ExitTest>,
    /// Final per-user inner minima of the constraint functions at the
    /// solution; all must clear the feasibility tolerance.
    pub inner_values: Vec<f64>,
    /// True when the returned point re-certified against every oracle.
    pub certified: bool,
}

fn certify(oracles: &[&dyn ConstraintOracle], x: &[f64]) -> (bool, Vec<f64>) {
    let mut vals = Vec::with_capacity(oracles.len());
    let mut ok = true;
    for o in oracles {
        let r = minimize_over_t(*o, x, SearchMode::FullMinimize);
        if r.g_value > feasibility_tol(r.g_value) {
            ok = false;
        }
        vals.push(r.g_value);
    }
    (ok, vals)
}

fn run_min(
    oracles: &[&dyn ConstraintOracle],
    objective: DVector<f64>,
    upper: Vec<f64>,
    extra: Vec<(DVector<f64>, f64)>,
    start: DVector<f64>,
    cfg: &SolverConfig,
) -> Result<PowerMinResult, ProblemError> {
    let poly = Polytope::from_bounds(&objective, &upper, extra, cfg.epsilon);
    let out = solve(oracles, &objective, poly, &start, cfg)?;
    let (p, objective_value, certified, inner_values) = match out.p_best {
        Some(pb) => {
            let x: Vec<f64> = pb.iter().cloned().collect();
            let (ok, vals) = certify(oracles, &x);
            (Some(x), out.objective_value, ok, vals)
        }
        None => (None, None, false, Vec::new()),
    };
    Ok(PowerMinResult {
        p,
        objective: objective_value,
        status: out.status,
        iterations: out.iterations,
        cuts_added: out.cuts_added,
        cuts_dropped: out.cuts_dropped,
        exit_test: out.exit_test,
        inner_values,
        certified,
    })
}

/// Minimizes total transmit power `sum_k p_k` subject to every user's SINR
/// outage constraint and any configured power caps.
pub fn solve_power_min(
    scenario: &InterferenceScenario,
    convention: VarianceConvention,
    cfg: &SolverConfig,
) -> Result<PowerMinResult, ProblemError> {
    scenario.validate()?;
    let k = scenario.k_links;
    let oracles: Vec<InterferenceOracle> = (0..k)
        .map(|u| InterferenceOracle::new(scenario, u, convention))
        .collect();
    let refs: Vec<&dyn ConstraintOracle> = oracles.iter().map(|o| o as _).collect();

    let fallback = 1.0 / cfg.epsilon;
    let upper: Vec<f64> = match &scenario.p_cap {
        Some(caps) => caps.clone(),
        None => vec![fallback; k],
    };
    let mut extra = Vec::new();
    if let Some(total) = scenario.p_cap_total {
        extra.push((DVector::from_element(k, -1.0), -total));
    }
    let start = match scenario.p_cap_total {
        Some(total) => {
            DVector::from_iterator(k, upper.iter().map(|&u| (u / 2.0).min(total / (2.0 * k as f64))))
        }
        None => DVector::from_iterator(k, upper.iter().map(|&u| u / 2.0)),
    };
    run_min(
        &refs,
        DVector::from_element(k, 1.0),
        upper,
        extra,
        start,
        cfg,
    )
}

/// Minimizes the transmit power of the broadcast precoder,
/// `sum_j q_j ||G[:, j]||^2`, subject to every user's MSE satisfaction
/// constraint.
pub fn solve_mse_power_min(
    scenario: &BroadcastScenario,
    cfg: &SolverConfig,
) -> Result<PowerMinResult, ProblemError> {
    scenario.validate()?;
    let k = scenario.k;
    let oracles: Vec<MseOracle> = (0..k).map(|u| MseOracle::new(scenario, u)).collect();
    let refs: Vec<&dyn ConstraintOracle> = oracles.iter().map(|o| o as _).collect();
    let objective = DVector::from_iterator(
        k,
        (0..k).map(|j| scenario.g_mat.column(j).norm_squared()),
    );
    let fallback = 1.0 / cfg.epsilon;
    let upper = vec![fallback; k];
    let start = DVector::from_element(k, fallback / 2.0);
    run_min(&refs, objective, upper, Vec::new(), start, cfg)
}

/// Upper bound on the budget-scale variable of the inner problem. The
/// bisection only needs to distinguish scales below and above one.
const SCALE_HI: f64 = 2.0;

/// Inner problem of the max-min driver: the smallest budget scale `b` such
/// that the SINR target `alpha` is met for every user within `b` times the
/// budget. Returns `None` when no feasible `(p, b)` exists with
/// `b <= SCALE_HI`.
pub fn inner_power_scale(
    scenario: &InterferenceScenario,
    alpha: f64,
    budget: &Budget,
    convention: VarianceConvention,
    cfg: &SolverConfig,
) -> Result<Option<(f64, Vec<f64>)>, ProblemError> {
    let k = scenario.k_links;
    let n = k + 1;
    let oracles: Vec<InterferenceOracle> = (0..k)
        .map(|u| InterferenceOracle::with_target(scenario, u, alpha, convention).lifted(n))
        .collect();
    let refs: Vec<&dyn ConstraintOracle> = oracles.iter().map(|o| o as _).collect();

    // Decision vector (p_0, ..., p_{K-1}, b); minimize b.
    let mut objective = DVector::zeros(n);
    objective[k] = 1.0;

    let (upper_p, extra): (Vec<f64>, Vec<(DVector<f64>, f64)>) = match budget {
        Budget::Individual(p_bar) => {
            if p_bar.len() != k || p_bar.iter().any(|&b| b <= 0.0) {
                return Err(ProblemError::Invalid(
                    "individual budget must list one positive cap per link".into(),
                ));
            }
            let rows = (0..k)
                .map(|i| {
                    let mut a = DVector::zeros(n);
                    a[i] = -1.0;
                    a[k] = p_bar[i];
                    (a, 0.0)
                })
                .collect();
            (p_bar.iter().map(|&b| b * SCALE_HI).collect(), rows)
        }
        Budget::Total(total) => {
            if *total <= 0.0 {
                return Err(ProblemError::Invalid(
                    "total budget must be positive".into(),
                ));
            }
            let mut a = DVector::from_element(n, -1.0);
            a[k] = *total;
            (vec![total * SCALE_HI; k], vec![(a, 0.0)])
        }
    };
    let mut upper = upper_p;
    upper.push(SCALE_HI);

    let mut start = DVector::zeros(n);
    match budget {
        Budget::Individual(p_bar) => {
            for i in 0..k {
                start[i] = SCALE_HI * p_bar[i] / 4.0;
            }
        }
        Budget::Total(total) => {
            for i in 0..k {
                start[i] = SCALE_HI * total / (4.0 * k as f64);
            }
        }
    }
    start[k] = SCALE_HI / 2.0;

    let r = run_min(&refs, objective, upper, extra, start, cfg)?;
    Ok(r.p.map(|x| (x[k], x[..k].to_vec())))
}

/// Result of the max-min SINR-target search.
#[derive(Debug, Clone)]
pub struct MaxMinResult {
    /// Largest certified common SINR target.
    pub alpha_star: f64,
    pub p: Vec<f64>,
    /// `|b* - 1|` at the accepted target: how exactly the budget binds.
    pub b_residual: f64,
    /// Inner solves performed across doubling and bisection.
    pub outer_iterations: usize,
    pub certified: bool,
}

fn certify_at_target(
    scenario: &InterferenceScenario,
    alpha: f64,
    p: &[f64],
    convention: VarianceConvention,
) -> bool {
    (0..scenario.k_links).all(|u| {
        let o = InterferenceOracle::with_target(scenario, u, alpha, convention);
        let r = minimize_over_t(&o, p, SearchMode::FullMinimize);
        r.g_value <= feasibility_tol(r.g_value)
    })
}

/// Maximizes the common SINR target achievable under the budget by bisection
/// on the target; each probe solves the inner budget-scale problem. The
/// returned allocation is scaled so the binding budget holds with equality
/// whenever the scaled point still certifies.
pub fn solve_maxmin(
    scenario: &InterferenceScenario,
    budget: &Budget,
    convention: VarianceConvention,
    cfg: &SolverConfig,
) -> Result<MaxMinResult, ProblemError> {
    scenario.validate()?;
    let mut outer = 0usize;
    let mut eval = |a: f64| -> Result<Option<(f64, Vec<f64>)>, ProblemError> {
        outer += 1;
        inner_power_scale(scenario, a, budget, convention, cfg)
    };

    // b*(0) ~ 0: with zero target every constraint holds at zero power.
    let mut a_lo = 0.0;
    let mut sol = match eval(0.0)? {
        Some(s) => s,
        None => {
            return Err(ProblemError::Invalid(
                "inner problem infeasible even at target zero".into(),
            ))
        }
    };
    // Grow until the target is out of reach within the budget.
    let mut a_hi = 1.0;
    let mut doublings = 0;
    loop {
        match eval(a_hi)? {
            Some((b, p)) if b <= 1.0 => {
                a_lo = a_hi;
                sol = (b, p);
                a_hi *= 2.0;
            }
            _ => break,
        }
        doublings += 1;
        if doublings >= 60 {
            break;
        }
    }

    let mut residual = (sol.0 - 1.0).abs();
    let mut probes = 0;
    while residual > 1e-3 && a_hi - a_lo > 1e-12 * (1.0 + a_hi) && probes < 200 {
        probes += 1;
        let mid = 0.5 * (a_lo + a_hi);
        match eval(mid)? {
            Some((b, p)) if b <= 1.0 => {
                a_lo = mid;
                residual = (b - 1.0).abs();
                sol = (b, p);
            }
            _ => a_hi = mid,
        }
    }

    let (_, mut p) = sol;
    // Spend the remaining budget headroom uniformly; keep the scaled point
    // only if it still certifies at the accepted target.
    let factor = match budget {
        Budget::Individual(p_bar) => p_bar
            .iter()
            .zip(&p)
            .filter(|(_, &pi)| pi > 0.0)
            .map(|(&b, &pi)| b / pi)
            .fold(f64::INFINITY, f64::min),
        Budget::Total(total) => {
            let s: f64 = p.iter().sum();
            if s > 0.0 {
                total / s
            } else {
                f64::INFINITY
            }
        }
    };
    if factor.is_finite() && factor > 1.0 {
        let scaled: Vec<f64> = p.iter().map(|&x| x * factor).collect();
        if certify_at_target(scenario, a_lo, &scaled, convention) {
            p = scaled;
        }
    }
    let certified = certify_at_target(scenario, a_lo, &p, convention);
    Ok(MaxMinResult {
        alpha_star: a_lo,
        p,
        b_residual: residual,
        outer_iterations: outer,
        certified,
    })
}

/// One line of a result table.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub scenario_id: String,
    pub problem: String,
    pub k: usize,
    pub m: usize,
    pub kappa: f64,
    pub eps: f64,
    /// SINR target for the interference problems, MSE target for the
    /// broadcast problem.
    pub alpha_or_mu: f64,
    pub objective: Option<f64>,
    pub status: Status,
    pub iterations: usize,
    pub cuts: usize,
    pub runtime_ms: f64,
    pub p: Vec<f64>,
}

pub fn status_name(status: Status) -> &'static str {
    match status {
        Status::Optimal => "optimal",
        Status::InfeasibleOrUnbounded => "infeasible-or-unbounded",
        Status::IterationCap => "iteration-cap",
    }
}

/// Writes result rows as CSV. The power columns are sized by the widest row;
/// rows with fewer entries (or no solution) leave the extra cells empty.
pub fn write_result_csv<W: std::io::Write>(
    rows: &[ResultRow],
    out: &mut W,
) -> std::io::Result<()> {
    let width = rows.iter().map(|r| r.p.len()).max().unwrap_or(0);
    write!(
        out,
        "scenario_id,problem,K,M,kappa,eps,alpha_or_mu,objective,objective_dBW,status,iterations,cuts,runtime_ms"
    )?;
    for i in 0..width {
        write!(out, ",p{i}")?;
    }
    writeln!(out)?;
    for r in rows {
        let (obj, dbw) = match r.objective {
            Some(v) => (v.to_string(), to_dbw(v).to_string()),
            None => (String::new(), String::new()),
        };
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario_id,
            r.problem,
            r.k,
            r.m,
            r.kappa,
            r.eps,
            r.alpha_or_mu,
            obj,
            dbw,
            status_name(r.status),
            r.iterations,
            r.cuts,
            r.runtime_ms
        )?;
        for i in 0..width {
            match r.p.get(i) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
