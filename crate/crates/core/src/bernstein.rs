//! Deterministic convex constraint oracles for the outage constraints.
//!
//! Each probabilistic constraint is replaced by `inf_{t > rho(x)} G(x, t) <= 0`
//! where `G` is built from the log moment generating function of the channel
//! error statistics. The oracles expose the value, the analytic gradient in
//! the decision variables, and the lower edge of the `t` domain; the inner
//! minimization over `t` is a safeguarded golden-section line search.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::model::{BroadcastScenario, InterferenceScenario, C64};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("t = {t} is outside the oracle domain (lower bound {rho})")]
    Domain { t: f64, rho: f64 },
    #[error("moment generating function undefined for t = {0} >= 1/2")]
    MgfOutOfDomain(f64),
}

/// Log of the moment generating function of a noncentral chi-square variable
/// with two degrees of freedom and noncentrality `lambda`:
/// `lambda t / (1 - 2t) - log(1 - 2t)`, valid for `t < 1/2`.
pub fn log_mgf_noncentral_chi2(t: f64, lambda: f64) -> Result<f64, OracleError> {
    if t >= 0.5 {
        return Err(OracleError::MgfOutOfDomain(t));
    }
    let d = 1.0 - 2.0 * t;
    Ok(lambda * t / d - d.ln())
}

/// How the variance of the projected channel error is computed.
///
/// `Paper` uses the squared magnitude of the component sum of the beamformer
/// as printed in the source formulas; `Norm` uses the squared Euclidean norm,
/// which matches the simulated per-component error law. `Paper` is the
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceConvention {
    #[default]
    Paper,
    Norm,
}

impl VarianceConvention {
    fn beam_factor(self, g: &DVector<C64>) -> f64 {
        match self {
            VarianceConvention::Paper => g.iter().sum::<C64>().norm_sqr(),
            VarianceConvention::Norm => g.norm_squared(),
        }
    }
}

/// A convex feasibility oracle `g(x) = inf_{t > t_lower(x)} G(x, t)`.
///
/// Oracles are pure and immutable; concurrent evaluation is safe.
pub trait ConstraintOracle: Sync {
    /// Dimension of the decision vector the oracle is evaluated on.
    fn dim(&self) -> usize;
    /// Index of the user this constraint belongs to.
    fn user(&self) -> usize;
    /// The bound below which `G(x, .)` is undefined.
    fn t_lower(&self, x: &[f64]) -> f64;
    fn eval(&self, x: &[f64], t: f64) -> Result<f64, OracleError>;
    fn grad(&self, x: &[f64], t: f64) -> Result<Vec<f64>, OracleError>;
}

/// SINR outage constraint oracle for user `k` of an interference scenario.
#[derive(Debug, Clone)]
pub struct InterferenceOracle {
    k: usize,
    dim: usize,
    n_links: usize,
    alpha: f64,
    eta2: f64,
    eps: f64,
    /// `|h_hat_kj^H g_j|^2` per transmitter.
    sig: Vec<f64>,
    /// `sigma2_kj` times the beam variance factor, per transmitter.
    var: Vec<f64>,
}

impl InterferenceOracle {
    pub fn new(scenario: &InterferenceScenario, k: usize, convention: VarianceConvention) -> Self {
        Self::with_target(scenario, k, scenario.alpha[k], convention)
    }

    /// Same oracle with an overridden SINR target (used by the max-min
    /// epigraph drivers).
    pub fn with_target(
        scenario: &InterferenceScenario,
        k: usize,
        alpha: f64,
        convention: VarianceConvention,
    ) -> Self {
        let n = scenario.k_links;
        let sig = (0..n)
            .map(|j| scenario.h_hat[k][j].dotc(&scenario.beamformers[j]).norm_sqr())
            .collect();
        let var = (0..n)
            .map(|j| scenario.sigma2[k][j] * convention.beam_factor(&scenario.beamformers[j]))
            .collect();
        InterferenceOracle {
            k,
            dim: n,
            n_links: n,
            alpha,
            eta2: scenario.eta2[k],
            eps: scenario.eps[k],
            sig,
            var,
        }
    }

    /// Embeds the oracle into a larger decision space; coordinates past the
    /// first `K` (e.g. an epigraph scale variable) do not enter the
    /// constraint and get zero gradient.
    pub fn lifted(mut self, dim: usize) -> Self {
        assert!(dim >= self.n_links);
        self.dim = dim;
        self
    }

    /// Partial derivative of the constraint with respect to the auxiliary
    /// variable `t`. Unlike locating the inner minimizer through function
    /// values alone, root-finding this derivative stays well conditioned,
    /// which matters when the constraint values are large.
    pub fn d_dt(&self, x: &[f64], t: f64) -> Result<f64, OracleError> {
        let rho = self.t_lower(x);
        if t <= rho || t <= 0.0 {
            return Err(OracleError::Domain { t, rho });
        }
        let a = self.alpha;
        let mut dg = -self.eps.ln();
        for j in 0..self.n_links {
            if j == self.k {
                continue;
            }
            let u = a * x[j] * self.var[j] / t;
            let d = 1.0 - u;
            if d <= 0.0 {
                return Err(OracleError::Domain { t, rho });
            }
            dg += -a * x[j] * self.sig[j] * u / (t * d * d) - d.ln() - u / d;
        }
        let u = x[self.k] * self.var[self.k] / t;
        let w = 1.0 + u;
        dg -= x[self.k] * self.sig[self.k] * u / (t * w * w) - w.ln() + u / w;
        Ok(dg)
    }
}

impl ConstraintOracle for InterferenceOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn user(&self) -> usize {
        self.k
    }

    fn t_lower(&self, x: &[f64]) -> f64 {
        let mut rho: f64 = 0.0;
        for j in 0..self.n_links {
            if j != self.k {
                rho = rho.max(self.var[j] * x[j]);
            }
        }
        self.alpha * rho
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<f64, OracleError> {
        let rho = self.t_lower(x);
        if t <= rho || t <= 0.0 {
            return Err(OracleError::Domain { t, rho });
        }
        let a = self.alpha;
        let mut g = a * self.eta2 - t * self.eps.ln();
        for j in 0..self.n_links {
            if j == self.k {
                continue;
            }
            let d = 1.0 - a * x[j] * self.var[j] / t;
            if d <= 0.0 {
                return Err(OracleError::Domain { t, rho });
            }
            g += a * x[j] * self.sig[j] / d - t * d.ln();
        }
        let w = 1.0 + x[self.k] * self.var[self.k] / t;
        if w <= 0.0 {
            return Err(OracleError::Domain { t, rho });
        }
        g -= x[self.k] * self.sig[self.k] / w - t * w.ln();
        Ok(g)
    }

    fn grad(&self, x: &[f64], t: f64) -> Result<Vec<f64>, OracleError> {
        let rho = self.t_lower(x);
        if t <= rho || t <= 0.0 {
            return Err(OracleError::Domain { t, rho });
        }
        let a = self.alpha;
        let mut grad = vec![0.0; self.dim];
        for j in 0..self.n_links {
            if j == self.k {
                continue;
            }
            let d = 1.0 - a * x[j] * self.var[j] / t;
            if d <= 0.0 {
                return Err(OracleError::Domain { t, rho });
            }
            grad[j] = a * self.sig[j] / (d * d) + a * self.var[j] / d;
        }
        let w = 1.0 + x[self.k] * self.var[self.k] / t;
        if w <= 0.0 {
            return Err(OracleError::Domain { t, rho });
        }
        grad[self.k] = -self.sig[self.k] / (w * w) + self.var[self.k] / w;
        Ok(grad)
    }
}

/// MSE satisfaction constraint oracle for user `k` of a broadcast scenario.
#[derive(Debug, Clone)]
pub struct MseOracle {
    k: usize,
    n_users: usize,
    m: usize,
    eta2: f64,
    mu: f64,
    phi: f64,
    /// `w_j = Lambda_k^{1/2} G[:, j]`.
    w_cols: Vec<DVector<C64>>,
}

impl MseOracle {
    pub fn new(scenario: &BroadcastScenario, k: usize) -> Self {
        let sqrt_lambda: DVector<f64> = scenario.lambda[k].map(f64::sqrt);
        let w_cols = (0..scenario.k)
            .map(|j| {
                DVector::from_iterator(
                    scenario.m,
                    (0..scenario.m).map(|r| scenario.g_mat[(r, j)] * sqrt_lambda[r]),
                )
            })
            .collect();
        MseOracle {
            k,
            n_users: scenario.k,
            m: scenario.m,
            eta2: scenario.eta2[k],
            mu: scenario.mu[k],
            phi: scenario.phi[k],
            w_cols,
        }
    }

    /// `Lambda_k^{1/2} G Q G^H Lambda_k^{1/2}` as a Hermitian M x M matrix.
    fn weighted_gram(&self, q: &[f64]) -> DMatrix<C64> {
        let mut m = DMatrix::<C64>::zeros(self.m, self.m);
        for (j, w) in self.w_cols.iter().enumerate() {
            m += (w * w.adjoint()) * C64::new(q[j], 0.0);
        }
        m
    }

    fn eigenvalues(&self, q: &[f64]) -> DVector<f64> {
        SymmetricEigen::new(self.weighted_gram(q)).eigenvalues
    }
}

impl ConstraintOracle for MseOracle {
    fn dim(&self) -> usize {
        self.n_users
    }

    fn user(&self) -> usize {
        self.k
    }

    fn t_lower(&self, x: &[f64]) -> f64 {
        2.0 * self.eigenvalues(x).max().max(0.0)
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<f64, OracleError> {
        if t <= 0.0 {
            return Err(OracleError::Domain { t, rho: 0.0 });
        }
        let eig = self.eigenvalues(x);
        let mut log_det = 0.0;
        for &lam in eig.iter() {
            let term = 1.0 - 2.0 * lam / t;
            if term <= 0.0 {
                return Err(OracleError::Domain {
                    t,
                    rho: 2.0 * eig.max(),
                });
            }
            log_det += term.ln();
        }
        Ok(self.eta2 - x[self.k] * self.mu - 0.5 * t * log_det - t * (1.0 - self.phi).ln())
    }

    fn grad(&self, x: &[f64], t: f64) -> Result<Vec<f64>, OracleError> {
        if t <= 0.0 {
            return Err(OracleError::Domain { t, rho: 0.0 });
        }
        let gram = self.weighted_gram(x);
        let rho = 2.0 * SymmetricEigen::new(gram.clone()).eigenvalues.max().max(0.0);
        if t <= rho {
            return Err(OracleError::Domain { t, rho });
        }
        let a = DMatrix::<C64>::identity(self.m, self.m) - gram * C64::new(2.0 / t, 0.0);
        let chol = nalgebra::Cholesky::new(a).ok_or(OracleError::Domain { t, rho })?;
        let mut grad = vec![0.0; self.n_users];
        for (j, w) in self.w_cols.iter().enumerate() {
            let y = chol.solve(w);
            // w^H A^{-1} w is real for Hermitian positive definite A.
            grad[j] = w.dotc(&y).re;
        }
        grad[self.k] -= self.mu;
        Ok(grad)
    }
}

/// Outcome of the inner minimization over the scale parameter.
#[derive(Debug, Clone, Copy)]
pub struct InnerMinResult {
    pub t_star: f64,
    /// `G` at `t_star`; an upper bound on the infimum.
    pub g_value: f64,
    /// True iff some sampled `t` gave `G <= 0`.
    pub feasible: bool,
    pub evaluations: usize,
    /// False when bracket expansion hit the `t` cap without locating a
    /// decrease; `t_star` is then the best sampled point.
    pub bracketed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Return as soon as any sampled `t` certifies `G <= 0`.
    FeasibilityCheck,
    FullMinimize,
}

/// Cap on the bracket expansion; monotone-decreasing tails terminate here.
pub const T_MAX: f64 = 1e12;

const INITIAL_PROBES: usize = 32;
const GOLDEN_INV: f64 = 0.381_966_011_250_105; // 2 - golden ratio

struct Evaluator<'a> {
    oracle: &'a dyn ConstraintOracle,
    x: &'a [f64],
    count: usize,
}

impl Evaluator<'_> {
    fn g(&mut self, t: f64) -> f64 {
        self.count += 1;
        self.oracle.eval(self.x, t).unwrap_or(f64::INFINITY)
    }
}

/// Minimizes `G(x, .)` over its `t` domain.
///
/// Probes a geometric grid from the domain edge, expands the bracket
/// geometrically while the minimum sits on the right end, then refines by
/// golden-section search to an interval tolerance of `1e-8 * (1 + t*)`.
pub fn minimize_over_t(
    oracle: &dyn ConstraintOracle,
    x: &[f64],
    mode: SearchMode,
) -> InnerMinResult {
    let rho = oracle.t_lower(x);
    let t_edge = rho * (1.0 + 1e-9) + 1e-12;
    let mut ev = Evaluator {
        oracle,
        x,
        count: 0,
    };

    let mut ts: Vec<f64> = Vec::with_capacity(INITIAL_PROBES + 16);
    let mut gs: Vec<f64> = Vec::with_capacity(INITIAL_PROBES + 16);
    let d_min = 1e-6 * (1.0 + rho);
    let mut span = 8.0 * (1.0 + rho);
    ts.push(t_edge);
    let ratio = (span / d_min).powf(1.0 / (INITIAL_PROBES as f64 - 2.0));
    let mut d = d_min;
    for _ in 1..INITIAL_PROBES {
        ts.push(t_edge + d);
        d *= ratio;
    }
    for &t in &ts {
        let g = ev.g(t);
        gs.push(g);
        if mode == SearchMode::FeasibilityCheck && g <= 0.0 {
            return InnerMinResult {
                t_star: t,
                g_value: g,
                feasible: true,
                evaluations: ev.count,
                bracketed: true,
            };
        }
    }

    // Expand to the right while the minimum sits on the boundary.
    let argmin = |gs: &[f64]| {
        let mut best = 0;
        for i in 1..gs.len() {
            if gs[i] < gs[best] {
                best = i;
            }
        }
        best
    };
    let mut i_best = argmin(&gs);
    while i_best == ts.len() - 1 {
        if t_edge + span >= T_MAX {
            return InnerMinResult {
                t_star: ts[i_best],
                g_value: gs[i_best],
                feasible: gs[i_best] <= 0.0,
                evaluations: ev.count,
                bracketed: false,
            };
        }
        let new_span = (span * 8.0).min(T_MAX - t_edge);
        let r = (new_span / span).powf(1.0 / 8.0);
        let mut dd = span;
        for _ in 0..8 {
            dd *= r;
            let t = t_edge + dd;
            let g = ev.g(t);
            ts.push(t);
            gs.push(g);
            if mode == SearchMode::FeasibilityCheck && g <= 0.0 {
                return InnerMinResult {
                    t_star: t,
                    g_value: g,
                    feasible: true,
                    evaluations: ev.count,
                    bracketed: true,
                };
            }
        }
        span = new_span;
        i_best = argmin(&gs);
    }

    // Golden-section refinement inside the bracketing neighbors.
    let mut lo = if i_best == 0 { ts[0] } else { ts[i_best - 1] };
    let mut hi = ts[i_best + 1];
    let (mut best_t, mut best_g) = (ts[i_best], gs[i_best]);
    let mut x1 = lo + GOLDEN_INV * (hi - lo);
    let mut x2 = hi - GOLDEN_INV * (hi - lo);
    let mut f1 = ev.g(x1);
    let mut f2 = ev.g(x2);
    loop {
        for (t, g) in [(x1, f1), (x2, f2)] {
            if g < best_g {
                best_t = t;
                best_g = g;
            }
        }
        if mode == SearchMode::FeasibilityCheck && best_g <= 0.0 {
            break;
        }
        if hi - lo <= 1e-8 * (1.0 + best_t) {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = lo + GOLDEN_INV * (hi - lo);
            f1 = ev.g(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = hi - GOLDEN_INV * (hi - lo);
            f2 = ev.g(x2);
        }
    }
    InnerMinResult {
        t_star: best_t,
        g_value: best_g,
        feasible: best_g <= 0.0,
        evaluations: ev.count,
        bracketed: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        generate_interference_scenario, substream, Caps, Geometry, ScenarioSpec,
    };
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;

    fn spec(k: usize, m: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            k,
            m,
            kappa: 0.1,
            eps: 0.05,
            alpha: 1.5,
            seed,
            geometry: Geometry::paper(),
            caps: Caps::default(),
            noise: 1.0,
        }
    }

    /// Central finite differences of the oracle value in the decision vector.
    fn fd_grad(oracle: &dyn ConstraintOracle, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = 1e-6 * (1.0 + x[i].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            out[i] = (oracle.eval(&xp, t).unwrap() - oracle.eval(&xm, t).unwrap()) / (2.0 * h);
        }
        out
    }

    #[test]
    fn mgf_at_zero_is_zero() {
        assert_eq!(log_mgf_noncentral_chi2(0.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn mgf_central_closed_form() {
        assert_relative_eq!(
            log_mgf_noncentral_chi2(0.25, 0.0).unwrap(),
            -(0.5f64.ln()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn mgf_formula_value() {
        // 2 * 0.1 / 0.8 - ln 0.8
        assert_relative_eq!(
            log_mgf_noncentral_chi2(0.1, 2.0).unwrap(),
            0.473143551,
            epsilon = 1e-9
        );
    }

    #[test]
    fn mgf_matches_monte_carlo() {
        // X = |z|^2 / (var/2) with z complex Gaussian of mean sqrt(lambda*var/2)... use
        // the direct construction: X = (a + n1)^2 + n2^2 with a^2 = lambda.
        let mut rng = substream(3, "mgf-check");
        let lambda = 2.0f64;
        let t = 0.1f64;
        let a = lambda.sqrt();
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let n1: f64 = rng.sample(rand_distr::StandardNormal);
            let n2: f64 = rng.sample(rand_distr::StandardNormal);
            let x = (a + n1).powi(2) + n2 * n2;
            acc += (t * x).exp();
        }
        let mc = (acc / n as f64).ln();
        let exact = log_mgf_noncentral_chi2(t, lambda).unwrap();
        assert!((mc / exact - 1.0).abs() < 1e-2, "mc {mc} exact {exact}");
    }

    #[test]
    fn mgf_domain_error() {
        assert!(log_mgf_noncentral_chi2(0.5, 1.0).is_err());
    }

    /// Oracle with hand-set coefficients for the closed-form examples.
    fn manual_oracle(
        n: usize,
        k: usize,
        alpha: f64,
        eta2: f64,
        eps: f64,
        sig: Vec<f64>,
        var: Vec<f64>,
    ) -> InterferenceOracle {
        InterferenceOracle {
            k,
            dim: n,
            n_links: n,
            alpha,
            eta2,
            eps,
            sig,
            var,
        }
    }

    #[test]
    fn t_lower_examples() {
        let o = manual_oracle(1, 0, 2.0, 1.0, 0.05, vec![1.0], vec![0.3]);
        assert_eq!(o.t_lower(&[5.0]), 0.0); // empty max

        let o = manual_oracle(2, 0, 2.0, 1.0, 0.05, vec![1.0, 1.0], vec![0.5, 0.1]);
        assert_relative_eq!(o.t_lower(&[1.0, 3.0]), 0.6, epsilon = 1e-15);

        let o = manual_oracle(
            3,
            0,
            1.0,
            1.0,
            0.05,
            vec![1.0; 3],
            vec![0.0, 0.2, 0.5],
        );
        assert_relative_eq!(o.t_lower(&[9.0, 1.0, 1.0]), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn eval_deterministic_limit() {
        // sigma -> 0, eps = 1: G = alpha eta^2 - p |h^H g|^2, any t.
        let o = manual_oracle(1, 0, 1.0, 1.0, 1.0, vec![1.0], vec![0.0]);
        assert_relative_eq!(o.eval(&[1.0], 0.7).unwrap(), 0.0, epsilon = 1e-14);
        // eps = 1, p = 0, no interferers: alpha eta^2.
        let o = manual_oracle(1, 0, 3.0, 0.5, 1.0, vec![4.0], vec![0.2]);
        assert_relative_eq!(o.eval(&[0.0], 1.0).unwrap(), 1.5, epsilon = 1e-14);
    }

    #[test]
    fn eval_closed_form_value() {
        // alpha=2, eta2=1, |h^Hg|^2=4, sigma2=0.5, |1^Tg|^2=1, p=1, t=1, eps=0.05.
        let o = manual_oracle(1, 0, 2.0, 1.0, 0.05, vec![4.0], vec![0.5]);
        assert_relative_eq!(o.eval(&[1.0], 1.0).unwrap(), 2.734_530_715, epsilon = 1e-8);
    }

    #[test]
    fn eval_domain_error_below_rho() {
        let o = manual_oracle(2, 0, 2.0, 1.0, 0.05, vec![1.0, 1.0], vec![0.5, 0.1]);
        let rho = o.t_lower(&[1.0, 3.0]);
        assert!(o.eval(&[1.0, 3.0], rho).is_err());
        assert!(o.eval(&[1.0, 3.0], rho * 1.01).is_ok());
    }

    #[test]
    fn grad_linear_limit() {
        let o = manual_oracle(1, 0, 1.0, 1.0, 0.5, vec![2.5], vec![0.0]);
        let g = o.grad(&[0.8], 1.3).unwrap();
        assert_relative_eq!(g[0], -2.5, epsilon = 1e-14);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let sc = generate_interference_scenario(&spec(3, 3, 55)).unwrap();
        let mut rng = substream(9, "grad-fd");
        for k in 0..3 {
            let o = InterferenceOracle::new(&sc, k, VarianceConvention::Paper);
            for _ in 0..20 {
                let p: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..5.0)).collect();
                let t = o.t_lower(&p) * 1.5 + rng.gen_range(0.1..3.0);
                let ana = o.grad(&p, t).unwrap();
                let fd = fd_grad(&o, &p, t);
                for (a, f) in ana.iter().zip(&fd) {
                    assert_relative_eq!(a, f, max_relative = 1e-5, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn d_dt_matches_finite_differences() {
        let sc = generate_interference_scenario(&spec(3, 3, 55)).unwrap();
        let mut rng = substream(14, "ddt-fd");
        for k in 0..3 {
            let o = InterferenceOracle::new(&sc, k, VarianceConvention::Paper);
            for _ in 0..20 {
                let p: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..5.0)).collect();
                let t = o.t_lower(&p) * 1.5 + rng.gen_range(0.1..3.0);
                let h = 1e-6 * (1.0 + t);
                let fd =
                    (o.eval(&p, t + h).unwrap() - o.eval(&p, t - h).unwrap()) / (2.0 * h);
                let ana = o.d_dt(&p, t).unwrap();
                assert_relative_eq!(ana, fd, max_relative = 1e-5, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn d_dt_vanishes_at_inner_minimizer() {
        let sc = generate_interference_scenario(&spec(3, 3, 55)).unwrap();
        let o = InterferenceOracle::new(&sc, 0, VarianceConvention::Paper);
        let p = [1.0, 2.0, 0.5];
        let r = minimize_over_t(&o, &p, SearchMode::FullMinimize);
        assert!(r.bracketed);
        // Derivative changes sign across the located minimizer.
        let h = 1e-4 * (1.0 + r.t_star);
        assert!(o.d_dt(&p, r.t_star - h).unwrap() < 0.0);
        assert!(o.d_dt(&p, r.t_star + h).unwrap() > 0.0);
    }

    #[test]
    fn interference_entries_are_nonnegative() {
        let sc = generate_interference_scenario(&spec(3, 2, 91)).unwrap();
        let o = InterferenceOracle::new(&sc, 1, VarianceConvention::Paper);
        let mut rng = substream(10, "grad-sign");
        for _ in 0..50 {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..4.0)).collect();
            let t = o.t_lower(&p) * 2.0 + rng.gen_range(0.05..2.0);
            let g = o.grad(&p, t).unwrap();
            for j in 0..3 {
                if j != 1 {
                    assert!(g[j] >= 0.0, "interference gradient entry negative");
                }
            }
        }
    }

    #[test]
    fn eps_monotonicity() {
        let base = manual_oracle(1, 0, 2.0, 1.0, 0.05, vec![4.0], vec![0.5]);
        let looser = manual_oracle(1, 0, 2.0, 1.0, 0.10, vec![4.0], vec![0.5]);
        assert!(looser.eval(&[1.0], 1.0).unwrap() < base.eval(&[1.0], 1.0).unwrap());
    }

    #[test]
    fn lifted_oracle_pads_gradient() {
        let sc = generate_interference_scenario(&spec(2, 2, 61)).unwrap();
        let o = InterferenceOracle::new(&sc, 0, VarianceConvention::Paper).lifted(3);
        let x = [1.0, 1.0, 7.0];
        let t = o.t_lower(&x) * 2.0 + 1.0;
        let g = o.grad(&x, t).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn inner_min_monotone_case_returns_edge() {
        // sigma -> 0, eps < 1: G strictly increasing in t, inf at t -> 0+.
        let o = manual_oracle(1, 0, 1.0, 1.0, 0.5, vec![2.0], vec![0.0]);
        let r = minimize_over_t(&o, &[0.3], SearchMode::FullMinimize);
        let limit = 1.0 - 0.3 * 2.0; // alpha eta^2 - p |h^H g|^2
        assert!((r.g_value - limit).abs() < 1e-6, "g {}", r.g_value);
        assert!(r.bracketed);
    }

    #[test]
    fn inner_min_early_exit_on_first_probe() {
        // Feasible at the edge already: deterministic-limit oracle with slack.
        let o = manual_oracle(1, 0, 1.0, 1.0, 0.5, vec![2.0], vec![0.0]);
        let r = minimize_over_t(&o, &[2.0], SearchMode::FeasibilityCheck);
        assert!(r.feasible);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn inner_min_matches_dense_grid() {
        let sc = generate_interference_scenario(&spec(2, 3, 71)).unwrap();
        let o = InterferenceOracle::new(&sc, 0, VarianceConvention::Paper);
        let p = [2.0, 1.0];
        let r = minimize_over_t(&o, &p, SearchMode::FullMinimize);
        assert!(r.bracketed);
        let rho = o.t_lower(&p);
        let t_edge = rho * (1.0 + 1e-9) + 1e-12;
        let hi = 2.0 * r.t_star + 1.0;
        let mut best = f64::INFINITY;
        let n = 1_000_000;
        for i in 0..n {
            let t = t_edge + (hi - t_edge) * (i as f64 + 0.5) / n as f64;
            if let Ok(g) = o.eval(&p, t) {
                best = best.min(g);
            }
        }
        assert!(
            (r.g_value - best).abs() < 1e-6,
            "golden {} grid {}",
            r.g_value,
            best
        );
    }

    fn scalar_mse_oracle() -> (crate::model::BroadcastScenario, MseOracle) {
        // K = M = 1, g = 1: H_hat = [1].
        let h_hat = nalgebra::DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let sc = crate::model::BroadcastScenario::new(
            h_hat,
            vec![DVector::from_element(1, 0.01)],
            vec![0.1],
            vec![0.5],
            vec![0.9],
        )
        .unwrap();
        let o = MseOracle::new(&sc, 0);
        (sc, o)
    }

    #[test]
    fn mse_eval_scalar_value() {
        let (_, o) = scalar_mse_oracle();
        // -0.4 - 0.5 ln(0.98) - ln(0.1)
        assert_relative_eq!(o.eval(&[1.0], 1.0).unwrap(), 1.912_686_44, epsilon = 1e-7);
    }

    #[test]
    fn mse_deterministic_limit() {
        let h_hat = nalgebra::DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let sc = crate::model::BroadcastScenario::new(
            h_hat,
            vec![DVector::from_element(1, 0.0)],
            vec![1.0],
            vec![0.5],
            vec![1e-12],
        )
        .unwrap();
        let o = MseOracle::new(&sc, 0);
        // Lambda = 0, phi -> 0+: eta^2 - q mu = 1 - 2 * 0.5 = 0 up to the tiny
        // -t log(1 - phi) term.
        assert!(o.eval(&[2.0], 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn mse_logdet_eigen_vs_determinant() {
        let sc = crate::model::BroadcastScenario::generate(3, 3, 1.5e-3, 0.1, 0.99, 0.1, 77)
            .unwrap();
        let o = MseOracle::new(&sc, 1);
        let q = [3.0, 1.0, 2.0];
        let t = o.t_lower(&q) * 3.0 + 0.5;
        let gram = o.weighted_gram(&q);
        let a = DMatrix::<C64>::identity(3, 3) - gram * C64::new(2.0 / t, 0.0);
        let det = a.determinant().re;
        let eig_sum: f64 = o
            .eigenvalues(&q)
            .iter()
            .map(|&l| (1.0 - 2.0 * l / t).ln())
            .sum();
        assert_relative_eq!(det.ln(), eig_sum, epsilon = 1e-10);
    }

    #[test]
    fn mse_grad_zero_uncertainty() {
        let h_hat = nalgebra::DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let sc = crate::model::BroadcastScenario::new(
            h_hat,
            vec![DVector::from_element(1, 0.0)],
            vec![1.0],
            vec![0.5],
            vec![0.9],
        )
        .unwrap();
        let o = MseOracle::new(&sc, 0);
        let g = o.grad(&[2.0], 1.0).unwrap();
        assert_relative_eq!(g[0], -0.5, epsilon = 1e-14);
    }

    #[test]
    fn mse_grad_matches_finite_differences() {
        let sc = crate::model::BroadcastScenario::generate(3, 3, 1.5e-3, 0.1, 0.99, 0.1, 83)
            .unwrap();
        let mut rng = substream(12, "mse-grad-fd");
        for k in 0..3 {
            let o = MseOracle::new(&sc, k);
            for _ in 0..20 {
                let q: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..20.0)).collect();
                let t = o.t_lower(&q) * 1.5 + rng.gen_range(0.05..2.0);
                let ana = o.grad(&q, t).unwrap();
                let fd = fd_grad(&o, &q, t);
                for (a, f) in ana.iter().zip(&fd) {
                    assert_relative_eq!(a, f, max_relative = 1e-5, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn mse_grad_scalar_symbolic() {
        let (_, o) = scalar_mse_oracle();
        // Scalar formula: G = eta^2 - q mu - (t/2) ln(1 - 2 s q / t) - t ln(1-phi)
        // with s = sigma^2 g^2 = 0.01. dG/dq = -mu + s / (1 - 2 s q / t).
        let (q, t) = (3.0, 0.7);
        let s = 0.01;
        let expected = -0.5 + s / (1.0 - 2.0 * s * q / t);
        let g = o.grad(&[q], t).unwrap();
        assert_relative_eq!(g[0], expected, epsilon = 1e-10);
    }

    #[test]
    fn midpoint_convexity_sampled() {
        let sc = generate_interference_scenario(&spec(3, 3, 101)).unwrap();
        let o = InterferenceOracle::new(&sc, 0, VarianceConvention::Paper);
        let mut rng = substream(14, "convexity");
        for _ in 0..500 {
            let p0: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..4.0)).collect();
            let p1: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..4.0)).collect();
            let mid: Vec<f64> = p0.iter().zip(&p1).map(|(a, b)| 0.5 * (a + b)).collect();
            let t = o.t_lower(&p0).max(o.t_lower(&p1)) * 1.05 + 0.1;
            let g0 = o.eval(&p0, t).unwrap();
            let g1 = o.eval(&p1, t).unwrap();
            let gm = o.eval(&mid, t).unwrap();
            assert!(gm <= 0.5 * (g0 + g1) + 1e-9);
        }
    }
}
