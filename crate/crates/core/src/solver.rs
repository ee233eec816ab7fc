//! Per-component sparse PCA with an augmented-Lagrangian unit-norm penalty,
//! solved by monotone accelerated proximal gradient with adaptive step sizes.
//!
//! For one projection vector `p` the solver minimises
//!
//! ```text
//! J(p) = ||X - X p p^T||_F^2 + mu (p^T p - 1)^2 + (p - a)^T W (p - a) + lambda ||p||_1
//! ```
//!
//! where the quadratic prior `(a, W)` is present only when a previous mode's
//! model is being consolidated. Along the optimisation trajectory the solver
//! accumulates the path integral of `-grad g * delta p` per coordinate, the
//! synaptic-intelligence importance of each loading.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};

/// Optimisation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// L1 weight.
    pub lambda: f64,
    /// Initial Lagrange parameter.
    pub mu0: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub epsilon: f64,
    /// Conditioning constant of the importance normalisation.
    pub zeta: f64,
    /// Base rate for the projection-vector steps.
    pub alpha_p: f64,
    /// Base rate for the Lagrange-parameter steps.
    pub alpha_mu: f64,
    /// Starting value of every adaptive step size.
    pub initial_rate: f64,
    pub max_iters: usize,
    /// Allowed `| ||p||^2 - 1 |` at convergence.
    pub norm_tolerance: f64,
    /// Stop once `||p_{k+1} - p_k||_2` drops below this.
    pub convergence_tolerance: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.1,
            mu0: 1.0,
            tau1: 0.9,
            tau2: 0.999,
            epsilon: 1e-8,
            zeta: 1e-3,
            alpha_p: 1e-3,
            alpha_mu: 1e-2,
            initial_rate: 1e-4,
            max_iters: 5000,
            norm_tolerance: 1e-2,
            convergence_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_owned()));
        let all_finite = [
            self.lambda,
            self.mu0,
            self.tau1,
            self.tau2,
            self.epsilon,
            self.zeta,
            self.alpha_p,
            self.alpha_mu,
            self.initial_rate,
            self.norm_tolerance,
            self.convergence_tolerance,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("solver parameters must be finite");
        }
        if self.lambda < 0.0 {
            return bad("lambda must be >= 0");
        }
        if self.mu0 <= 0.0 {
            return bad("mu0 must be > 0");
        }
        if !(self.tau1 > 0.0 && self.tau1 < 1.0) {
            return bad("tau1 must lie in (0, 1)");
        }
        if !(self.tau2 > 0.0 && self.tau2 < 1.0) {
            return bad("tau2 must lie in (0, 1)");
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be > 0");
        }
        if self.zeta <= 0.0 {
            return bad("zeta must be > 0");
        }
        if self.alpha_p <= 0.0 || self.alpha_mu <= 0.0 {
            return bad("alpha_p and alpha_mu must be > 0");
        }
        if self.initial_rate <= 0.0 {
            return bad("initial_rate must be > 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if self.norm_tolerance <= 0.0 || self.convergence_tolerance <= 0.0 {
            return bad("tolerances must be > 0");
        }
        Ok(())
    }
}

/// Quadratic pull towards a previous mode's loading vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTerm {
    pub anchor: DVector<f64>,
    /// Diagonal of the weight matrix; nonnegative.
    pub weights: DVector<f64>,
}

impl PriorTerm {
    pub fn new(anchor: DVector<f64>, weights: DVector<f64>) -> Result<Self> {
        if anchor.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "prior anchor has {} entries, weights {}",
                anchor.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "prior weights must be finite and nonnegative".into(),
            ));
        }
        Ok(PriorTerm { anchor, weights })
    }

    fn value(&self, p: &DVector<f64>) -> f64 {
        p.iter()
            .zip(self.anchor.iter())
            .zip(self.weights.iter())
            .map(|((pi, ai), wi)| wi * (pi - ai) * (pi - ai))
            .sum()
    }

    fn add_gradient(&self, p: &DVector<f64>, grad: &mut DVector<f64>) {
        for i in 0..p.len() {
            grad[i] += 2.0 * self.weights[i] * (p[i] - self.anchor[i]);
        }
    }
}

/// `m x l` matrix whose columns are projection vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix(DMatrix<f64>);

impl ProjectionMatrix {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        if columns.ncols() > columns.nrows() {
            return Err(Error::InvalidArgument(format!(
                "projection has {} columns for {} variables",
                columns.ncols(),
                columns.nrows()
            )));
        }
        Ok(ProjectionMatrix(columns))
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument("projection needs at least one column".into()));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn n_vars(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.0.column(j).into_owned()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `m x l` matrix of per-loading importances; entries are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix(DMatrix<f64>);

impl ImportanceMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "importance entries must be finite and nonnegative".into(),
            ));
        }
        Ok(ImportanceMatrix(entries))
    }

    pub fn zeros(m: usize, l: usize) -> Self {
        ImportanceMatrix(DMatrix::zeros(m, l))
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.0.column(j).into_owned()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Which candidate became the next iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accepted {
    /// Prox step from the extrapolated point.
    Extrapolated,
    /// Prox step from the current iterate.
    Plain,
    /// Neither candidate decreased the objective; the iterate was kept.
    Kept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `J(p_{k+1})` at the Lagrange parameter in effect during the step.
    pub objective: f64,
    /// `J(p_k)` at the same Lagrange parameter.
    pub previous_objective: f64,
    pub objective_extrapolated: f64,
    pub objective_plain: f64,
    pub smooth: f64,
    pub rate_y: f64,
    pub rate_p: f64,
    pub rate_mu: f64,
    /// Momentum coefficient `t_k` used for the extrapolation.
    pub momentum: f64,
    /// Lagrange parameter after the dual step.
    pub mu: f64,
    pub delta_norm: f64,
    pub accepted: Accepted,
    /// Raw importance accumulator after this iteration.
    pub raw_importance: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Parameter motion fell below the convergence tolerance.
    Converged,
    /// No candidate decreased the objective at the current step sizes.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct ApgSolution {
    pub p: DVector<f64>,
    pub raw_importance: DVector<f64>,
    /// Summed parameter change `p_final - p_0`.
    pub total_delta: DVector<f64>,
    pub mu: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: SolverTrace,
}

impl ApgSolution {
    pub fn norm_violation(&self) -> f64 {
        (self.p.norm_squared() - 1.0).abs()
    }
}

/// Gram-form evaluation of the objective for a fixed data matrix.
struct Problem<'a> {
    gram: DMatrix<f64>,
    gram_trace: f64,
    lambda: f64,
    prior: Option<&'a PriorTerm>,
}

impl<'a> Problem<'a> {
    fn new(x: &DataMatrix, lambda: f64, prior: Option<&'a PriorTerm>) -> Self {
        let xm = x.as_matrix();
        let gram = xm.tr_mul(xm);
        let gram_trace = gram.trace();
        Problem {
            gram,
            gram_trace,
            lambda,
            prior,
        }
    }

    fn smooth(&self, p: &DVector<f64>, mu: f64) -> f64 {
        let cp = &self.gram * p;
        let pcp = p.dot(&cp);
        let pp = p.norm_squared();
        let mut value = self.gram_trace - 2.0 * pcp + pp * pcp + mu * (pp - 1.0).powi(2);
        if let Some(prior) = self.prior {
            value += prior.value(p);
        }
        value
    }

    fn objective(&self, p: &DVector<f64>, mu: f64) -> f64 {
        self.smooth(p, mu) + self.lambda * p.lp_norm(1)
    }

    /// `p p^T G p + G p p^T p - 2 G p` with `G = 2 (X^T X + mu I)`, plus the prior pull.
    fn grad(&self, p: &DVector<f64>, mu: f64) -> DVector<f64> {
        let gp = (&self.gram * p + p * mu) * 2.0;
        let pgp = p.dot(&gp);
        let pp = p.norm_squared();
        let mut grad = p * pgp + &gp * (pp - 2.0);
        if let Some(prior) = self.prior {
            prior.add_gradient(p, &mut grad);
        }
        grad
    }
}

fn check_dims(p: &DVector<f64>, x: &DataMatrix, prior: Option<&PriorTerm>) -> Result<()> {
    if p.len() != x.n_vars() {
        return Err(Error::DimensionMismatch(format!(
            "projection vector has {} entries, data has {} variables",
            p.len(),
            x.n_vars()
        )));
    }
    if let Some(prior) = prior {
        if prior.anchor.len() != p.len() || prior.weights.len() != p.len() {
            return Err(Error::DimensionMismatch(format!(
                "prior has {} entries, projection vector {}",
                prior.anchor.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Elementwise shrinkage towards zero by `kappa`.
pub fn soft_threshold(v: &DVector<f64>, kappa: f64) -> Result<DVector<f64>> {
    if !(kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shrinkage threshold must be nonnegative, got {kappa}"
        )));
    }
    Ok(v.map(|vi| shrink(vi, kappa)))
}

#[inline]
fn shrink(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// Smooth part of the objective, evaluated from the reconstruction residual.
pub fn smooth_value(
    p: &DVector<f64>,
    x: &DataMatrix,
    mu: f64,
    prior: Option<&PriorTerm>,
) -> Result<f64> {
    check_dims(p, x, prior)?;
    let xm = x.as_matrix();
    let scores = xm * p;
    let residual = xm - scores * p.transpose();
    let mut value = residual.norm_squared() + mu * (p.norm_squared() - 1.0).powi(2);
    if let Some(prior) = prior {
        value += prior.value(p);
    }
    Ok(value)
}

pub fn objective_value(
    p: &DVector<f64>,
    x: &DataMatrix,
    mu: f64,
    lambda: f64,
    prior: Option<&PriorTerm>,
) -> Result<f64> {
    Ok(smooth_value(p, x, mu, prior)? + lambda * p.lp_norm(1))
}

/// Gradient of [`smooth_value`] with respect to `p`.
pub fn grad_p(
    p: &DVector<f64>,
    x: &DataMatrix,
    mu: f64,
    prior: Option<&PriorTerm>,
) -> Result<DVector<f64>> {
    check_dims(p, x, prior)?;
    Ok(Problem::new(x, 0.0, prior).grad(p, mu))
}

/// Derivative of the smooth part with respect to the Lagrange parameter.
pub fn grad_mu(p: &DVector<f64>) -> f64 {
    (p.norm_squared() - 1.0).powi(2)
}

/// Adam-style step size from the previous step size and the squared gradient norm.
pub fn adaptive_rate(
    alpha: f64,
    t_prev: f64,
    grad_norm_sq: f64,
    tau1: f64,
    tau2: f64,
    epsilon: f64,
) -> f64 {
    let second = (tau2 * t_prev + (1.0 - tau1) * grad_norm_sq) / (1.0 - tau2);
    alpha / (second.sqrt() + epsilon)
}

/// Proximal gradient step for the L1 term: `S_{lambda t}(p - t grad)`.
pub fn prox_step(
    p: &DVector<f64>,
    grad: &DVector<f64>,
    t: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {t}")));
    }
    if p.len() != grad.len() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, gradient {}",
            p.len(),
            grad.len()
        )));
    }
    soft_threshold(&(p - grad * t), lambda * t)
}

/// `max(0, raw_i / (delta_i^2 + zeta))`.
pub fn normalize_importance(
    raw: &DVector<f64>,
    total_delta: &DVector<f64>,
    zeta: f64,
) -> DVector<f64> {
    raw.zip_map(total_delta, |w, d| (w / (d * d + zeta)).max(0.0))
}

/// Monotone APG for a single projection vector.
///
/// Each iteration forms two prox candidates, one from the momentum point and
/// one from the current iterate, and keeps whichever has the lower objective.
/// If neither improves on the current iterate the iterate is kept and the
/// solve ends with [`Termination::Stalled`]. The Lagrange parameter follows a
/// dual ascent on `(p^T p - 1)^2`.
pub fn apg_solve(
    x: &DataMatrix,
    p0: &DVector<f64>,
    config: &SolverConfig,
    prior: Option<&PriorTerm>,
) -> Result<ApgSolution> {
    config.validate()?;
    check_dims(p0, x, prior)?;
    if !x.is_finite() || p0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }

    let problem = Problem::new(x, config.lambda, prior);
    let m = p0.len();
    let rate = |alpha: f64, prev: f64, g2: f64| {
        adaptive_rate(alpha, prev, g2, config.tau1, config.tau2, config.epsilon)
    };

    let mut p = p0.clone();
    let mut p_prev = p0.clone();
    let mut z = p0.clone();
    // t_{k-1}, t_k
    let mut t_prev = 0.0_f64;
    let mut t_cur = 0.0_f64;
    let mut rate_y = config.initial_rate;
    let mut rate_p = config.initial_rate;
    let mut rate_mu = config.initial_rate;
    let mut mu = config.mu0;
    let mut raw = DVector::zeros(m);
    let mut trace = SolverTrace::default();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    for k in 1..=config.max_iters {
        iterations = k;
        // With t_1 = t_0 = 0 the first extrapolation is 0/0; all its
        // numerators vanish because z_1 = p_1 = p_0, so y_1 = p_1.
        let y = if k == 1 {
            p.clone()
        } else {
            &p + (&z - &p) * (t_prev / t_cur) + (&p - &p_prev) * ((t_prev - 1.0) / t_cur)
        };

        let grad_y = problem.grad(&y, mu);
        rate_y = rate(config.alpha_p, rate_y, grad_y.norm_squared());
        let z_next = prox_step(&y, &grad_y, rate_y, config.lambda)?;

        let grad_cur = problem.grad(&p, mu);
        rate_p = rate(config.alpha_p, rate_p, grad_cur.norm_squared());
        let v_next = prox_step(&p, &grad_cur, rate_p, config.lambda)?;

        let momentum = t_cur;
        t_prev = t_cur;
        t_cur = ((4.0 * t_cur * t_cur + 1.0).sqrt() + 1.0) / 2.0;

        let j_z = problem.objective(&z_next, mu);
        let j_v = problem.objective(&v_next, mu);
        let j_cur = problem.objective(&p, mu);
        if !(j_z.is_finite() && j_v.is_finite() && j_cur.is_finite()) {
            return Err(Error::Divergence {
                column: 0,
                iterations: k,
                trace: Box::new(trace),
            });
        }
        let (candidate, j_candidate, accepted) = if j_z <= j_v {
            (z_next.clone(), j_z, Accepted::Extrapolated)
        } else {
            (v_next, j_v, Accepted::Plain)
        };

        if j_candidate > j_cur {
            trace.records.push(IterationRecord {
                iteration: k,
                objective: j_cur,
                previous_objective: j_cur,
                objective_extrapolated: j_z,
                objective_plain: j_v,
                smooth: problem.smooth(&p, mu),
                rate_y,
                rate_p,
                rate_mu,
                momentum,
                mu,
                delta_norm: 0.0,
                accepted: Accepted::Kept,
                raw_importance: raw.iter().copied().collect(),
            });
            termination = Termination::Stalled;
            break;
        }
        let p_next = candidate;

        let g_mu = grad_mu(&p_next);
        rate_mu = rate(config.alpha_mu, rate_mu, g_mu * g_mu);
        mu += rate_mu * g_mu;

        let step = &p_next - &p;
        let grad_next = problem.grad(&p_next, mu);
        raw -= grad_next.component_mul(&step);

        let delta_norm = step.norm();
        trace.records.push(IterationRecord {
            iteration: k,
            objective: j_candidate,
            previous_objective: j_cur,
            objective_extrapolated: j_z,
            objective_plain: j_v,
            smooth: problem.smooth(&p_next, mu),
            rate_y,
            rate_p,
            rate_mu,
            momentum,
            mu,
            delta_norm,
            accepted,
            raw_importance: raw.iter().copied().collect(),
        });

        z = z_next;
        p_prev = std::mem::replace(&mut p, p_next);

        if delta_norm < config.convergence_tolerance {
            termination = Termination::Converged;
            break;
        }
    }

    let total_delta = &p - p0;
    Ok(ApgSolution {
        p,
        raw_importance: raw,
        total_delta,
        mu,
        iterations,
        termination,
        trace,
    })
}

/// Per-column solver summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub iterations: usize,
    pub termination: Termination,
    pub final_mu: f64,
    pub norm_violation: f64,
}

#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub projection: ProjectionMatrix,
    pub importance: ImportanceMatrix,
    pub columns: Vec<ColumnReport>,
}

/// Extracts `l` sparse loading vectors one at a time, deflating the data
/// after each. Column `j` starts from the `j`-th unit vector and, when
/// `priors` is given, is pulled towards `priors[j]`.
pub fn fit_projection(
    x: &DataMatrix,
    l: usize,
    config: &SolverConfig,
    priors: Option<&[PriorTerm]>,
) -> Result<ProjectionFit> {
    let m = x.n_vars();
    if l == 0 || l > m {
        return Err(Error::InvalidArgument(format!(
            "component count {l} must lie in 1..={m}"
        )));
    }
    if let Some(priors) = priors {
        if priors.len() != l {
            return Err(Error::DimensionMismatch(format!(
                "{} prior terms for {l} components",
                priors.len()
            )));
        }
    }

    let mut deflated = x.clone();
    let mut columns = Vec::with_capacity(l);
    let mut importances = Vec::with_capacity(l);
    let mut reports = Vec::with_capacity(l);
    for j in 0..l {
        let mut p0 = DVector::zeros(m);
        p0[j] = 1.0;
        let prior = priors.map(|ps| &ps[j]);
        let solution = apg_solve(&deflated, &p0, config, prior).map_err(|err| match err {
            Error::Divergence {
                iterations, trace, ..
            } => Error::Divergence {
                column: j,
                iterations,
                trace,
            },
            other => other,
        })?;
        let p = solution.p.clone();
        importances.push(normalize_importance(
            &solution.raw_importance,
            &solution.total_delta,
            config.zeta,
        ));
        reports.push(ColumnReport {
            iterations: solution.iterations,
            termination: solution.termination,
            final_mu: solution.mu,
            norm_violation: solution.norm_violation(),
        });

        let xm = deflated.as_matrix_mut();
        let scores = &*xm * &p;
        *xm -= scores * p.transpose();
        columns.push(p);
    }

    Ok(ProjectionFit {
        projection: ProjectionMatrix::from_columns(&columns)?,
        importance: ImportanceMatrix::new(DMatrix::from_columns(&importances))?,
        columns: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn random_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn soft_threshold_piecewise() {
        let out = soft_threshold(&dvector![0.5, -0.02, -0.3], 0.1).unwrap();
        assert!((out - dvector![0.4, 0.0, -0.2]).amax() < 1e-15);
    }

    #[test]
    fn soft_threshold_identity_and_dead_zone() {
        let v = dvector![1.5, -0.7, 0.0, 3.25];
        assert_eq!(soft_threshold(&v, 0.0).unwrap(), v);
        let small = dvector![0.1, -0.2, 0.05];
        assert_eq!(soft_threshold(&small, 0.2).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn soft_threshold_rejects_negative_kappa() {
        assert!(matches!(
            soft_threshold(&dvector![1.0], -0.1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn smooth_value_at_zero() {
        let x = DataMatrix::new(random_matrix(20, 4, 1));
        let v = smooth_value(&DVector::zeros(4), &x, 2.5, None).unwrap();
        let expected = x.as_matrix().norm_squared() + 2.5;
        assert!((v - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn smooth_value_rank_one_perfect_reconstruction() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.0]);
        let dir = dvector![0.6, 0.0, -0.8];
        let x = DataMatrix::new(&u * dir.transpose());
        let v = smooth_value(&dir, &x, 0.0, None).unwrap();
        assert!(v.abs() < 1e-24);
    }

    #[test]
    fn smooth_value_matches_gram_form() {
        let x = DataMatrix::new(random_matrix(30, 5, 2));
        let prior = PriorTerm::new(
            dvector![0.1, -0.2, 0.3, 0.0, 0.5],
            dvector![1.0, 0.0, 2.0, 3.0, 0.5],
        )
        .unwrap();
        let p = dvector![0.3, -0.1, 0.7, 0.2, -0.4];
        let direct = smooth_value(&p, &x, 1.7, Some(&prior)).unwrap();
        let gram = Problem::new(&x, 0.0, Some(&prior)).smooth(&p, 1.7);
        assert!((direct - gram).abs() < 1e-10 * direct.abs());
    }

    #[test]
    fn objective_adds_l1() {
        let x = DataMatrix::new(random_matrix(10, 3, 3));
        let p = dvector![0.2, -0.5, 0.1];
        let s = smooth_value(&p, &x, 1.0, None).unwrap();
        assert_eq!(objective_value(&p, &x, 1.0, 0.0, None).unwrap(), s);
        let zero = DVector::zeros(3);
        assert_eq!(
            objective_value(&zero, &x, 1.0, 5.0, None).unwrap(),
            smooth_value(&zero, &x, 1.0, None).unwrap()
        );
        let j = objective_value(&p, &x, 1.0, 2.0, None).unwrap();
        assert!((j - (s + 2.0 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_zero() {
        let x = DataMatrix::new(random_matrix(10, 3, 4));
        let zero = DVector::zeros(3);
        assert_eq!(grad_p(&zero, &x, 3.0, None).unwrap(), zero);
        let prior = PriorTerm::new(dvector![1.0, -1.0, 0.5], dvector![2.0, 3.0, 0.0]).unwrap();
        let g = grad_p(&zero, &x, 3.0, Some(&prior)).unwrap();
        assert!((g - dvector![-4.0, 6.0, 0.0]).amax() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_on_unit_sphere_for_isotropic_gram() {
        // Orthonormal columns scaled so that X^T X = c I.
        let c: f64 = 4.0;
        let x = DataMatrix::new(DMatrix::identity(3, 3) * c.sqrt());
        let p = dvector![0.6, 0.0, 0.8];
        let g = grad_p(&p, &x, 1.3, None).unwrap();
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn grad_mu_values() {
        assert!(grad_mu(&dvector![0.6, 0.8]) < 1e-30);
        assert!((grad_mu(&dvector![1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(grad_mu(&DVector::zeros(3)), 1.0);
    }

    #[test]
    fn adaptive_rate_zero_gradient() {
        let r = adaptive_rate(0.001, 0.0, 0.0, 0.9, 0.999, 1e-8);
        assert!((r - 0.001 / 1e-8).abs() < 1e-6);
    }

    #[test]
    fn adaptive_rate_reference_value() {
        // sqrt((0.999e-4 + 0.1) / 0.001) = sqrt(100.0999)
        let expected = 0.001 / (100.0999_f64.sqrt() + 1e-8);
        let r = adaptive_rate(0.001, 1e-4, 1.0, 0.9, 0.999, 1e-8);
        assert!((r - expected).abs() < 1e-18);
        assert!((r - 9.995004e-5).abs() < 1e-10);
    }

    #[test]
    fn adaptive_rate_decreases_with_gradient() {
        let mut last = f64::INFINITY;
        for g2 in [0.0, 1e-6, 0.1, 1.0, 10.0, 1e4] {
            let r = adaptive_rate(0.01, 1e-4, g2, 0.9, 0.999, 1e-8);
            assert!(r > 0.0 && r < last);
            last = r;
        }
    }

    #[test]
    fn prox_step_cases() {
        let p = dvector![0.5, -1.0, 0.25];
        let g = dvector![1.0, 2.0, -4.0];
        let plain = prox_step(&p, &g, 0.1, 0.0).unwrap();
        assert!((plain - (&p - &g * 0.1)).amax() < 1e-15);
        let zero_grad = DVector::zeros(3);
        assert_eq!(prox_step(&p, &zero_grad, 0.5, 3.0).unwrap(), DVector::zeros(3));
        assert!(matches!(
            prox_step(&p, &g, 0.0, 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn normalize_importance_cases() {
        let z = 1e-3;
        let out = normalize_importance(&dvector![-1.0, -0.5], &dvector![0.1, 0.0], z);
        assert_eq!(out, DVector::zeros(2));
        let out = normalize_importance(&dvector![z], &dvector![0.0], z);
        assert!((out[0] - 1.0).abs() < 1e-15);
        let out = normalize_importance(&dvector![2.0], &dvector![0.5], z);
        assert!((out[0] - 2.0 / (0.25 + z)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = [
            SolverConfig { lambda: -1.0, ..Default::default() },
            SolverConfig { tau1: 1.0, ..Default::default() },
            SolverConfig { tau2: 0.0, ..Default::default() },
            SolverConfig { epsilon: 0.0, ..Default::default() },
            SolverConfig { zeta: -1.0, ..Default::default() },
            SolverConfig { max_iters: 0, ..Default::default() },
            SolverConfig { mu0: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn dimension_mismatch_reported() {
        let x = DataMatrix::new(random_matrix(10, 3, 5));
        let p = DVector::zeros(4);
        assert!(matches!(
            smooth_value(&p, &x, 1.0, None),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(grad_p(&p, &x, 1.0, None), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            fit_projection(&x, 4, &SolverConfig::default(), None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn optimal_start_accumulates_no_importance() {
        let u = DVector::from_vec((0..50).map(|i| ((i * 7 % 13) as f64) - 6.0).collect());
        let dir = dvector![0.0, 1.0, 0.0, 0.0];
        let x = DataMatrix::new(&u * dir.transpose());
        let cfg = SolverConfig { lambda: 0.0, ..Default::default() };
        let sol = apg_solve(&x, &dir, &cfg, None).unwrap();
        assert!(sol.raw_importance.amax() < 1e-12, "{}", sol.raw_importance);
        assert!((&sol.p - &dir).amax() < 1e-9);
    }

    #[test]
    fn zero_prior_weights_change_nothing() {
        let x = DataMatrix::new(random_matrix(60, 4, 6));
        let cfg = SolverConfig::default();
        let priors: Vec<PriorTerm> = (0..2)
            .map(|_| PriorTerm::new(dvector![0.3, 0.1, -0.2, 0.9], DVector::zeros(4)).unwrap())
            .collect();
        let a = fit_projection(&x, 2, &cfg, None).unwrap();
        let b = fit_projection(&x, 2, &cfg, Some(&priors)).unwrap();
        assert_eq!(a.projection, b.projection);
        assert_eq!(a.importance, b.importance);
    }

    #[test]
    fn huge_lambda_sparsifies() {
        let x = DataMatrix::new(random_matrix(40, 5, 7));
        let gram_norm = {
            let xm = x.as_matrix();
            xm.tr_mul(xm).norm()
        };
        let dense_cfg = SolverConfig { lambda: 0.0, ..Default::default() };
        let sparse_cfg = SolverConfig { lambda: 2.0 * gram_norm, ..Default::default() };
        let mut p0 = DVector::zeros(5);
        p0[0] = 1.0;
        let dense = apg_solve(&x, &p0, &dense_cfg, None).unwrap();
        let sparse = apg_solve(&x, &p0, &sparse_cfg, None).unwrap();
        let zeros = |v: &DVector<f64>| v.iter().filter(|x| **x == 0.0).count();
        assert!(zeros(&sparse.p) > zeros(&dense.p));
    }
}
