//! Long-step logarithmic-barrier cutting-plane solver.
//!
//! The feasible region is localized by a polytope `{p : a_n^T p >= c_n}`. At
//! each outer iteration the solver computes the tau-center (the minimizer of
//! `obj^T p / tau - sum_n log(a_n^T p - c_n)`) by damped Newton, prunes or
//! refreshes rows whose slack has grown large relative to the slack they were
//! added with, and then queries the constraint oracles at the center: if the
//! center is infeasible a subgradient cut through it is added, otherwise the
//! barrier weight `tau` is reduced and the objective lower bound tightened.
//! Termination is by the duality-style gap test (T3), an iteration budget
//! (T1), or collapse of the localization set (T2).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::bernstein::{minimize_over_t, ConstraintOracle, SearchMode};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("row {0} is protected and cannot be dropped")]
    ProtectedRow(usize),
    #[error("starting point is not strictly interior to the polytope")]
    BadStart,
    #[error("centering failed: {0}")]
    Centering(String),
}

/// Role of a polytope row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    /// Structural bound (nonnegativity, power cap, bounding box). Never
    /// dropped.
    Box,
    /// The objective lower-bound row `obj^T p >= l`. Never dropped; its
    /// pruning weight is fixed at one.
    LowerBound,
    /// Subgradient cut generated for the given user's constraint.
    Cut(usize),
}

/// One half-space `a^T p >= c` with its reference slack `pi` (the slack at
/// the tau-center where the row was added or last refreshed).
#[derive(Debug, Clone)]
pub struct Row {
    pub a: DVector<f64>,
    pub c: f64,
    pub pi: f64,
    pub tag: RowTag,
}

impl Row {
    pub fn slack(&self, p: &DVector<f64>) -> f64 {
        self.a.dot(p) - self.c
    }
}

/// The localization polytope.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub n: usize,
    pub rows: Vec<Row>,
}

impl Polytope {
    /// The textbook initializer: `-1/eps <= p_i <= 1/eps` component-wise and
    /// the lower-bound row `1^T p >= -sqrt(n)/eps`.
    pub fn init(n: usize, eps: f64) -> Self {
        let bound = 1.0 / eps;
        let mut rows = Vec::with_capacity(2 * n + 1);
        for i in 0..n {
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            rows.push(Row {
                a,
                c: -bound,
                pi: 1.0,
                tag: RowTag::Box,
            });
        }
        for i in 0..n {
            let mut a = DVector::zeros(n);
            a[i] = -1.0;
            rows.push(Row {
                a,
                c: -bound,
                pi: 1.0,
                tag: RowTag::Box,
            });
        }
        rows.push(Row {
            a: DVector::from_element(n, 1.0),
            c: -(n as f64).sqrt() * bound,
            pi: 1.0,
            tag: RowTag::LowerBound,
        });
        Polytope { n, rows }
    }

    /// Polytope for a nonnegative decision vector with optional upper bounds:
    /// `0 <= p_i <= upper_i` plus an optional coupling row `a^T p >= c` and
    /// the objective lower-bound row `obj^T p >= -sqrt(n)/eps`. All bound
    /// rows are protected.
    pub fn from_bounds(
        objective: &DVector<f64>,
        upper: &[f64],
        extra: Vec<(DVector<f64>, f64)>,
        eps: f64,
    ) -> Self {
        let n = objective.len();
        assert_eq!(upper.len(), n);
        let mut rows = Vec::new();
        for i in 0..n {
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            rows.push(Row {
                a,
                c: 0.0,
                pi: 1.0,
                tag: RowTag::Box,
            });
        }
        for (i, &u) in upper.iter().enumerate() {
            let mut a = DVector::zeros(n);
            a[i] = -1.0;
            rows.push(Row {
                a,
                c: -u,
                pi: 1.0,
                tag: RowTag::Box,
            });
        }
        for (a, c) in extra {
            rows.push(Row {
                a,
                c,
                pi: 1.0,
                tag: RowTag::Box,
            });
        }
        rows.push(Row {
            a: objective.clone(),
            c: -(n as f64).sqrt() / eps,
            pi: 1.0,
            tag: RowTag::LowerBound,
        });
        Polytope { n, rows }
    }

    pub fn slacks(&self, p: &DVector<f64>) -> Vec<f64> {
        self.rows.iter().map(|r| r.slack(p)).collect()
    }

    pub fn is_interior(&self, p: &DVector<f64>) -> bool {
        self.rows.iter().all(|r| r.slack(p) > 0.0)
    }

    /// Adds the half-space `normal^T (p - through) >= 0` with a unit normal;
    /// the new row has zero slack at `through`. `pi` is marked pending (NaN)
    /// and assigned at the next tau-center.
    pub fn add_cut(&mut self, normal: &DVector<f64>, through: &DVector<f64>, tag: RowTag) {
        let norm = normal.norm();
        assert!(norm > 0.0, "cut normal must be nonzero");
        let a = normal / norm;
        let c = a.dot(through);
        self.rows.push(Row {
            a,
            c,
            pi: f64::NAN,
            tag,
        });
    }

    /// Removes a cut row. Structural rows refuse to be dropped.
    pub fn drop_row(&mut self, idx: usize) -> Result<Row, SolverError> {
        if !matches!(self.rows[idx].tag, RowTag::Cut(_)) {
            return Err(SolverError::ProtectedRow(idx));
        }
        Ok(self.rows.remove(idx))
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Objective gap tolerance.
    pub epsilon: f64,
    /// Barrier reduction factor per feasible center, in (0.5, 1).
    pub theta: f64,
    /// Newton decrement threshold for centering convergence.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Cap on outer iterations (cut additions plus tau reductions).
    pub max_iters: usize,
    /// Record a per-iteration trace in the outcome.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 1e-5,
            theta: 0.7,
            newton_tol: 1e-6,
            max_newton: 200,
            max_iters: 20_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// A feasible point with objective within tolerance of the lower bound.
    Optimal,
    /// The localization set collapsed or the iteration bound was exhausted
    /// without ever finding a feasible point.
    InfeasibleOrUnbounded,
    /// `max_iters` reached with a feasible incumbent but an open gap.
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitTest {
    T1,
    T2,
    T3,
}

#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iteration: usize,
    pub tau: f64,
    pub rows: usize,
    pub min_slack: f64,
    pub objective: f64,
    pub feasible: bool,
}

/// Writes the iteration trace as CSV.
pub fn write_trace_csv<W: std::io::Write>(
    trace: &[TraceRecord],
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "iteration,tau,rows,min_slack,objective,feasible")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.tau, r.rows, r.min_slack, r.objective, r.feasible
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: Status,
    /// Best feasible center found, if any.
    pub p_best: Option<DVector<f64>>,
    pub objective_value: Option<f64>,
    pub lower_bound: f64,
    pub iterations: usize,
    pub cuts_added: usize,
    pub cuts_dropped: usize,
    pub newton_steps: usize,
    pub exit_test: Option<ExitTest>,
    pub trace: Vec<TraceRecord>,
}

struct CenterResult {
    p: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    slacks: Vec<f64>,
    steps: usize,
}

fn barrier_value(poly: &Polytope, obj: &DVector<f64>, tau: f64, p: &DVector<f64>) -> f64 {
    let mut f = obj.dot(p) / tau;
    for r in &poly.rows {
        let s = r.slack(p);
        if s <= 0.0 {
            return f64::INFINITY;
        }
        f -= s.ln();
    }
    f
}

fn factor_with_ridge(mut h: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, SolverError> {
    let n = h.nrows();
    let scale = 1.0 + h.trace().abs();
    let mut ridge = 0.0;
    for _ in 0..8 {
        let trial = if ridge == 0.0 {
            h.clone()
        } else {
            for i in 0..n {
                h[(i, i)] += ridge * scale;
            }
            h.clone()
        };
        if let Some(c) = Cholesky::new(trial) {
            return Ok(c);
        }
        ridge = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
    }
    Err(SolverError::Centering(
        "barrier Hessian is not positive definite".into(),
    ))
}

/// Damped Newton minimization of the tau-barrier from a strictly interior
/// start. Returns the center together with the Cholesky factor of the
/// barrier Hessian there. If the decrement tolerance is not met within the
/// step budget the best iterate reached is returned.
fn tau_center(
    poly: &Polytope,
    obj: &DVector<f64>,
    tau: f64,
    start: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<CenterResult, SolverError> {
    let n = poly.n;
    let mut p = start.clone();
    if !poly.is_interior(&p) {
        return Err(SolverError::BadStart);
    }
    let mut steps = 0;
    loop {
        let slacks = poly.slacks(&p);
        let mut g = obj * (1.0 / tau);
        let mut h = DMatrix::<f64>::zeros(n, n);
        for (r, &s) in poly.rows.iter().zip(&slacks) {
            g -= &r.a * (1.0 / s);
            h += (&r.a * r.a.transpose()) * (1.0 / (s * s));
        }
        let chol = factor_with_ridge(h)?;
        let d = -chol.solve(&g);
        let dec2 = -g.dot(&d);
        if dec2.max(0.0).sqrt() <= cfg.newton_tol || steps >= cfg.max_newton {
            return Ok(CenterResult {
                p,
                chol,
                slacks,
                steps,
            });
        }
        // Largest step keeping every slack positive.
        let mut alpha_max = f64::INFINITY;
        for (r, &s) in poly.rows.iter().zip(&slacks) {
            let ad = r.a.dot(&d);
            if ad < 0.0 {
                alpha_max = alpha_max.min(s / -ad);
            }
        }
        let mut alpha = (0.99 * alpha_max).min(1.0);
        let f0 = barrier_value(poly, obj, tau, &p);
        let slope = g.dot(&d);
        let mut moved = false;
        while alpha > 1e-18 {
            let cand = &p + &d * alpha;
            if barrier_value(poly, obj, tau, &cand) <= f0 + 0.01 * alpha * slope {
                p = cand;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            // Stalled line search: return the best iterate reached.
            return Ok(CenterResult {
                p,
                chol,
                slacks,
                steps,
            });
        }
        steps += 1;
    }
}

/// `a_j^T H^{-1} a_j / s_j^2`: the variational weight deciding whether a
/// loose row still shapes the center.
fn variational_quantity(chol: &Cholesky<f64, Dyn>, row: &Row, slack: f64) -> f64 {
    let y = chol.solve(&row.a);
    row.a.dot(&y) / (slack * slack)
}

/// Feasibility tolerance on the inner minimum of a constraint oracle.
pub fn feasibility_tol(g: f64) -> f64 {
    1e-8 * (1.0 + g.abs())
}

/// Steps off the newly added cuts back into the interior. The cuts pass
/// exactly through `p`, so the next centering needs a strictly interior
/// start.
fn restore_interior(poly: &mut Polytope, p: &DVector<f64>, first_new: usize) -> DVector<f64> {
    let n = poly.n;
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mut sum = DVector::zeros(n);
    for r in &poly.rows[first_new..] {
        sum += &r.a;
        candidates.push(r.a.clone());
    }
    candidates.insert(0, sum);
    for d in candidates {
        if poly.rows[first_new..].iter().any(|r| r.a.dot(&d) <= 0.0) {
            continue;
        }
        let mut alpha_max = 1.0f64;
        let mut ok = true;
        for r in &poly.rows {
            let ad = r.a.dot(&d);
            if ad < 0.0 {
                let s = r.slack(p);
                if s <= 0.0 {
                    ok = false;
                    break;
                }
                alpha_max = alpha_max.min(s / -ad);
            }
        }
        if !ok {
            continue;
        }
        let cand = p + &d * (0.5 * alpha_max);
        if poly.is_interior(&cand) {
            return cand;
        }
    }
    // Fallback: relax the new rows by a hair so `p` itself is interior.
    for r in &mut poly.rows[first_new..] {
        r.c -= 1e-10 * (1.0 + r.c.abs());
    }
    p.clone()
}

/// Runs the cutting-plane loop.
///
/// `polytope` must contain the structural rows for the problem (bounds,
/// caps, the lower-bound row) and `start` must be strictly interior to it.
/// Oracles are queried at every tau-center; feasibility of a center means
/// every oracle's inner minimum clears [`feasibility_tol`].
pub fn solve(
    oracles: &[&dyn ConstraintOracle],
    objective: &DVector<f64>,
    mut poly: Polytope,
    start: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveOutcome, SolverError> {
    let n = poly.n;
    assert_eq!(objective.len(), n);
    if !poly.is_interior(start) {
        return Err(SolverError::BadStart);
    }
    let log2_inv_eps = (1.0 / cfg.epsilon).log2();
    let t1_cap = (4093.0 * n as f64 * log2_inv_eps).ceil() as usize;
    let t2_threshold = 1e-5 * cfg.epsilon.powi(3) / (2.0 * (n as f64).powf(1.5) * log2_inv_eps);

    let mut tau = 1.0 / cfg.epsilon;
    let mut p = start.clone();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut lower = poly
        .rows
        .iter()
        .find(|r| r.tag == RowTag::LowerBound)
        .map(|r| r.c)
        .unwrap_or(f64::NEG_INFINITY);
    let mut cuts_added = 0usize;
    let mut cuts_dropped = 0usize;
    let mut newton_steps = 0usize;
    let mut trace = Vec::new();
    let mut exit = None;
    let mut status = Status::InfeasibleOrUnbounded;
    let mut iterations = 0usize;
    // Consecutive infeasible centers that did not move: the localization set
    // around them has no representable volume left, even if the slack bound
    // has not tripped yet (slacks decay only like 1/rows in that regime).
    let mut prev_center: Option<DVector<f64>> = None;
    let mut stalled = 0usize;

    'outer: for iteration in 0..cfg.max_iters {
        iterations = iteration + 1;
        let mut center = tau_center(&poly, objective, tau, &p, cfg)?;
        newton_steps += center.steps;
        // Pending rows take the slack at the first center after insertion.
        for (r, &s) in poly.rows.iter_mut().zip(&center.slacks) {
            if r.pi.is_nan() {
                r.pi = s;
            }
        }

        // Prune / refresh rows whose slack outgrew its reference value.
        loop {
            let mut j_max = None;
            let mut omega_max = 2.0;
            for (j, (r, &s)) in poly.rows.iter().zip(&center.slacks).enumerate() {
                let omega = match r.tag {
                    RowTag::LowerBound => 1.0,
                    _ => s / r.pi,
                };
                if omega > omega_max {
                    omega_max = omega;
                    j_max = Some(j);
                }
            }
            let Some(j) = j_max else { break };
            let varpi = variational_quantity(&center.chol, &poly.rows[j], center.slacks[j]);
            if varpi < 0.04 && matches!(poly.rows[j].tag, RowTag::Cut(_)) {
                poly.rows.remove(j);
                cuts_dropped += 1;
                center = tau_center(&poly, objective, tau, &center.p, cfg)?;
                newton_steps += center.steps;
            } else {
                poly.rows[j].pi = center.slacks[j];
            }
        }
        p = center.p.clone();
        let min_slack = center.slacks.iter().cloned().fold(f64::INFINITY, f64::min);
        let obj_val = objective.dot(&p);

        // Localization set collapsed: nothing with meaningful volume left.
        // Besides the theoretical threshold, treat a slack at the floating
        // point resolution of its row as collapse: below that the interior
        // cannot even be represented and cuts would stack up in place.
        let numerically_collapsed = poly
            .rows
            .iter()
            .zip(&center.slacks)
            .any(|(r, &s)| s < 3e-14 * (1.0 + r.c.abs()));
        if min_slack < t2_threshold || numerically_collapsed {
            exit = Some(ExitTest::T2);
            status = if best.is_some() {
                Status::Optimal
            } else {
                Status::InfeasibleOrUnbounded
            };
            if cfg.trace {
                trace.push(TraceRecord {
                    iteration,
                    tau,
                    rows: poly.rows.len(),
                    min_slack,
                    objective: obj_val,
                    feasible: false,
                });
            }
            break 'outer;
        }

        let mut violated: Vec<&&dyn ConstraintOracle> = Vec::new();
        let x: Vec<f64> = p.iter().cloned().collect();
        for oracle in oracles {
            let r = minimize_over_t(*oracle, &x, SearchMode::FeasibilityCheck);
            if r.g_value > feasibility_tol(r.g_value) {
                violated.push(oracle);
            }
        }
        let feasible = violated.is_empty();
        if !feasible {
            let moved = prev_center
                .as_ref()
                .map_or(true, |q| (&p - q).norm() > 1e-11 * (1.0 + p.norm()));
            stalled = if moved { 0 } else { stalled + 1 };
            if stalled >= 8 {
                exit = Some(ExitTest::T2);
                status = if best.is_some() {
                    Status::Optimal
                } else {
                    Status::InfeasibleOrUnbounded
                };
                if cfg.trace {
                    trace.push(TraceRecord {
                        iteration,
                        tau,
                        rows: poly.rows.len(),
                        min_slack,
                        objective: obj_val,
                        feasible,
                    });
                }
                break 'outer;
            }
        } else {
            stalled = 0;
        }
        prev_center = Some(p.clone());
        if cfg.trace {
            trace.push(TraceRecord {
                iteration,
                tau,
                rows: poly.rows.len(),
                min_slack,
                objective: obj_val,
                feasible,
            });
        }

        if feasible {
            if best.as_ref().map_or(true, |(v, _)| obj_val < *v) {
                best = Some((obj_val, p.clone()));
            }
            let gap = 1.25 * poly.rows.len() as f64 * tau;
            if gap < cfg.epsilon {
                exit = Some(ExitTest::T3);
                status = Status::Optimal;
                break 'outer;
            }
            let l_new = obj_val - gap;
            if l_new > lower {
                lower = l_new;
                for r in poly.rows.iter_mut() {
                    if r.tag == RowTag::LowerBound {
                        r.c = lower;
                    }
                }
            }
            tau *= cfg.theta;
        } else {
            let first_new = poly.rows.len();
            for oracle in violated {
                let r = minimize_over_t(*oracle, &x, SearchMode::FullMinimize);
                let t_star = r.t_star.max(oracle.t_lower(&x) * (1.0 + 2e-9) + 1e-12);
                let grad = oracle
                    .grad(&x, t_star)
                    .map_err(|e| SolverError::Centering(format!("cut gradient: {e}")))?;
                let normal = -DVector::from_vec(grad);
                poly.add_cut(&normal, &p, RowTag::Cut(oracle.user()));
                cuts_added += 1;
            }
            p = restore_interior(&mut poly, &p, first_new);
        }

        if iterations >= t1_cap {
            exit = Some(ExitTest::T1);
            status = if best.is_some() {
                Status::Optimal
            } else {
                Status::InfeasibleOrUnbounded
            };
            break 'outer;
        }
        if iteration + 1 == cfg.max_iters {
            status = if best.is_some() {
                Status::IterationCap
            } else {
                Status::InfeasibleOrUnbounded
            };
        }
    }

    let (objective_value, p_best) = match best {
        Some((v, pb)) => (Some(v), Some(pb)),
        None => (None, None),
    };
    Ok(SolveOutcome {
        status,
        p_best,
        objective_value,
        lower_bound: lower,
        iterations,
        cuts_added,
        cuts_dropped,
        newton_steps,
        exit_test: exit,
        trace,
    })
}
