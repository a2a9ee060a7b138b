//! Optimization drivers on the manifold: Armijo backtracking, steepest descent,
//! nonlinear conjugate gradients (Hestenes–Stiefel), Newton's method with an
//! inner truncated conjugate-gradient solve, and the CG-then-Newton hybrid.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernels::{random_normal, rng_from_seed, Mat};
use crate::manifold::{ManifoldSpec, PointWorkspace, TangentVector};
use crate::second_order::{riemannian_gradient_mat, EuclideanDerivatives, HessianOperator, Objective};

/// Relative tolerance of the one-time finite-difference check of `egrad`.
pub const EGRAD_CHECK_TOL: f64 = 1e-6;

/// An objective together with the manifold it is minimized over.
#[derive(Clone)]
pub struct Problem {
    spec: Arc<ManifoldSpec>,
    objective: Arc<dyn Objective>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl Problem {
    /// Checks `egrad` against a central difference of `value` at a random
    /// ambient point along a random direction before accepting the objective.
    pub fn new(spec: Arc<ManifoldSpec>, objective: Arc<dyn Objective>) -> Result<Self> {
        let (n, p) = (spec.n(), spec.p());
        let mut rng = rng_from_seed(0x5eed_f00d);
        let x = random_normal(n, p, &mut rng);
        let e = random_normal(n, p, &mut rng);
        let h = 1e-5;
        let fd = (objective.value(&(&x + &e * h)) - objective.value(&(&x - &e * h))) / (2.0 * h);
        let g = objective.egrad(&x);
        if g.shape() != (n, p) {
            return Err(Error::ShapeMismatch {
                expected: (n, p),
                found: g.shape(),
            });
        }
        let exact = g.dot(&e);
        let err = (fd - exact).abs();
        if !err.is_finite() || err > EGRAD_CHECK_TOL * exact.abs().max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "Euclidean gradient disagrees with finite differences of the objective (error {err:e})"
            )));
        }
        Ok(Problem { spec, objective })
    }

    pub fn spec(&self) -> &Arc<ManifoldSpec> {
        &self.spec
    }

    pub fn objective(&self) -> &dyn Objective {
        self.objective.as_ref()
    }

    pub fn value(&self, ws: &PointWorkspace) -> f64 {
        self.objective.value(ws.x())
    }

    pub fn gradient(&self, ws: &PointWorkspace) -> TangentVector {
        ws.wrap(riemannian_gradient_mat(ws, &self.objective.egrad(ws.x())))
    }

    fn workspace(&self, x0: &Mat) -> Result<PointWorkspace> {
        PointWorkspace::new(self.spec.clone(), x0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SteepestDescent,
    NonlinearCg,
    Newton,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SteepestDescent,
        Method::NonlinearCg,
        Method::Newton,
        Method::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SteepestDescent => "sd",
            Method::NonlinearCg => "cg",
            Method::Newton => "newton",
            Method::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd" => Ok(Method::SteepestDescent),
            "cg" => Ok(Method::NonlinearCg),
            "newton" => Ok(Method::Newton),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected sd, cg, newton or hybrid)"
            ))),
        }
    }
}

/// Backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_decrease: f64,
    pub max_halvings: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            initial_step: 1.0,
            contraction: 0.5,
            sufficient_decrease: 1e-4,
            max_halvings: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    /// `None` selects `2·(np − p(p+1)/2)`.
    pub max_inner: Option<usize>,
    /// Gradient norm at which the hybrid hands over to Newton. Zero means
    /// never switch and infinity means start with Newton.
    pub switch_tol: f64,
    pub linesearch: LineSearchConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Hybrid,
            outer_tol: 1e-10,
            max_outer: 500,
            inner_tol: 1e-10,
            max_inner: None,
            switch_tol: 1e-6,
            linesearch: LineSearchConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("outer_tol", self.outer_tol)?;
        positive("inner_tol", self.inner_tol)?;
        positive("initial_step", self.linesearch.initial_step)?;
        if !(self.switch_tol >= 0.0) {
            return Err(Error::Config(format!(
                "switch_tol must be non-negative, got {}",
                self.switch_tol
            )));
        }
        let ls = &self.linesearch;
        if !(ls.contraction > 0.0 && ls.contraction < 1.0) {
            return Err(Error::Config(format!(
                "contraction must lie in (0, 1), got {}",
                ls.contraction
            )));
        }
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return Err(Error::Config(format!(
                "sufficient_decrease must lie in (0, 1), got {}",
                ls.sufficient_decrease
            )));
        }
        if self.max_inner == Some(0) {
            return Err(Error::Config("max_inner must be at least 1".into()));
        }
        Ok(())
    }

    pub fn max_inner_for(&self, spec: &ManifoldSpec) -> usize {
        self.max_inner.unwrap_or(2 * spec.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Sd,
    Cg,
    Newton,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Sd => "sd",
            Phase::Cg => "cg",
            Phase::Newton => "newton",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd" => Ok(Phase::Sd),
            "cg" => Ok(Phase::Cg),
            "newton" => Ok(Phase::Newton),
            other => Err(Error::Config(format!("unknown phase '{other}'"))),
        }
    }
}

/// State after iteration `index` (index 0 is the starting point).
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub index: usize,
    pub phase: Phase,
    pub f: f64,
    pub gradnorm: f64,
    /// Step length that produced this iterate (0 for the starting point).
    pub step: f64,
    pub inner_iters: usize,
    /// Milliseconds since the solver started.
    pub time_ms: f64,
    /// The inner CG hit non-positive curvature while computing this step.
    pub safeguard: bool,
    /// Directly recomputed Newton-equation residual of the step that produced
    /// this iterate; `None` outside the Newton phase.
    pub inner_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIter,
    InnerFailure,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max-iter",
            Status::InnerFailure => "inner-failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub records: Vec<IterRecord>,
    pub status: Status,
    /// Index of the last record produced before the hybrid handed over to Newton.
    pub switch_iter: Option<usize>,
    pub final_point: PointWorkspace,
}

impl SolverTrace {
    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("a trace always holds the starting point")
    }

    /// Records whose phase is Newton, excluding the starting point of a pure Newton run.
    pub fn newton_steps(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.phase == Phase::Newton && r.index > 0)
            .count()
    }
}

/// Backtracking Armijo search along `R_X(t·d)`.
///
/// Returns the accepted step and the new point. A direction with
/// `⟨grad f, d⟩ ≥ 0` is rejected with [`Error::AscentDirection`]; if no step
/// passes the sufficient-decrease test after `max_halvings` contractions the
/// result is [`Error::LineSearchFailed`].
pub fn armijo_linesearch(
    problem: &Problem,
    ws: &PointWorkspace,
    direction: &TangentVector,
    cfg: &LineSearchConfig,
) -> Result<(f64, PointWorkspace)> {
    let grad = problem.gradient(ws);
    let slope = ws.inner(&grad, direction)?;
    armijo_with(problem, ws, problem.value(ws), slope, cfg.initial_step, direction, cfg)
}

fn armijo_with(
    problem: &Problem,
    ws: &PointWorkspace,
    f0: f64,
    slope: f64,
    initial_step: f64,
    direction: &TangentVector,
    cfg: &LineSearchConfig,
) -> Result<(f64, PointWorkspace)> {
    ws.check_anchor(direction)?;
    if !(slope < 0.0) {
        return Err(Error::AscentDirection { slope });
    }
    let mut t = initial_step;
    for _ in 0..=cfg.max_halvings {
        if let Ok(next) = ws.retract(&direction.scaled(t)) {
            let f = problem.value(&next);
            if f.is_finite() && f <= f0 + cfg.sufficient_decrease * t * slope {
                return Ok((t, next));
            }
        }
        t *= cfg.contraction;
    }
    Err(Error::LineSearchFailed {
        halvings: cfg.max_halvings,
    })
}

struct Recorder {
    start: Instant,
    records: Vec<IterRecord>,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            start: Instant::now(),
            records: Vec::new(),
        }
    }

    fn push(&mut self, phase: Phase, f: f64, gradnorm: f64, step: f64) {
        self.push_newton(phase, f, gradnorm, step, None);
    }

    fn push_newton(&mut self, phase: Phase, f: f64, gradnorm: f64, step: f64, inner: Option<&NewtonStep>) {
        self.records.push(IterRecord {
            index: self.records.len(),
            phase,
            f,
            gradnorm,
            step,
            time_ms: self.start.elapsed().as_secs_f64() * 1e3,
            inner_iters: inner.map_or(0, |s| s.inner_iters),
            safeguard: inner.is_some_and(|s| s.outcome == InnerOutcome::NegativeCurvature),
            inner_residual: inner.map(|s| s.residual),
        });
    }

    fn finish(self, status: Status, final_point: PointWorkspace) -> SolverTrace {
        SolverTrace {
            records: self.records,
            status,
            switch_iter: None,
            final_point,
        }
    }
}

fn gradient_norm(ws: &PointWorkspace, g: &TangentVector) -> f64 {
    ws.norm(g).expect("gradient is anchored at its own point")
}

/// Shared loop for the line-search methods. `conjugate` selects the
/// Hestenes–Stiefel update instead of plain steepest descent.
fn line_search_method(problem: &Problem, x0: &Mat, cfg: &SolverConfig, conjugate: bool) -> Result<SolverTrace> {
    cfg.validate()?;
    let phase = if conjugate { Phase::Cg } else { Phase::Sd };
    let mut rec = Recorder::new();
    let mut ws = problem.workspace(x0)?;
    let mut f = problem.value(&ws);
    let mut grad = problem.gradient(&ws);
    let mut gnorm = gradient_norm(&ws, &grad);
    rec.push(phase, f, gnorm, 0.0);
    let mut dir = grad.scaled(-1.0);
    let mut f_prev: Option<f64> = None;

    loop {
        if !gnorm.is_finite() {
            return Ok(rec.finish(Status::InnerFailure, ws));
        }
        if gnorm < cfg.outer_tol {
            return Ok(rec.finish(Status::Converged, ws));
        }
        if rec.records.len() > cfg.max_outer {
            return Ok(rec.finish(Status::MaxIter, ws));
        }
        let slope = ws.inner(&grad, &dir)?;
        let initial = initial_step_guess(f, f_prev, slope, &cfg.linesearch);
        let (t, next) = match armijo_with(problem, &ws, f, slope, initial, &dir, &cfg.linesearch) {
            Ok(v) => v,
            Err(Error::LineSearchFailed { .. }) | Err(Error::AscentDirection { .. }) => {
                return Ok(rec.finish(Status::InnerFailure, ws));
            }
            Err(e) => return Err(e),
        };
        let next_f = problem.value(&next);
        let next_grad = problem.gradient(&next);
        let next_gnorm = gradient_norm(&next, &next_grad);

        let next_dir = if conjugate {
            hestenes_stiefel_direction(&next, &next_grad, grad.mat(), dir.mat())
        } else {
            next_grad.scaled(-1.0)
        };

        rec.push(phase, next_f, next_gnorm, t);
        ws = next;
        f_prev = Some(f);
        f = next_f;
        grad = next_grad;
        gnorm = next_gnorm;
        dir = next_dir;
    }
}

/// Growth factor applied to the interpolated initial step.
const LS_OPTIMISM: f64 = 1.1;

/// First trial step: `initial_step` on the first iteration, afterwards the
/// step at which a quadratic model with the last decrease `f_prev − f` and the
/// current slope would reach its minimum, enlarged by [`LS_OPTIMISM`].
fn initial_step_guess(f: f64, f_prev: Option<f64>, slope: f64, cfg: &LineSearchConfig) -> f64 {
    match f_prev {
        Some(prev) => {
            let guess = LS_OPTIMISM * 2.0 * (f - prev) / slope;
            if guess.is_finite() && guess > 0.0 {
                guess
            } else {
                cfg.initial_step
            }
        }
        None => cfg.initial_step,
    }
}

/// New CG direction at `ws`, with the previous gradient and direction moved
/// over by projection. Falls back to `−grad` when the result is not a descent
/// direction.
fn hestenes_stiefel_direction(ws: &PointWorkspace, grad: &TangentVector, prev_grad: &Mat, prev_dir: &Mat) -> TangentVector {
    let moved_dir = ws.project(prev_dir).expect("previous direction has n×p shape");
    let moved_grad = ws.project(prev_grad).expect("previous gradient has n×p shape");
    let y = ws.wrap(grad.mat() - moved_grad.mat());
    let num = ws.inner(grad, &y).expect("same anchor");
    let den = ws.inner(&moved_dir, &y).expect("same anchor");
    let beta = num / den;
    let steepest = grad.scaled(-1.0);
    if !beta.is_finite() {
        return steepest;
    }
    let candidate = ws.wrap(steepest.mat() + moved_dir.mat() * beta);
    if ws.inner(&candidate, grad).expect("same anchor") < 0.0 {
        candidate
    } else {
        steepest
    }
}

pub fn steepest_descent(problem: &Problem, x0: &Mat, cfg: &SolverConfig) -> Result<SolverTrace> {
    line_search_method(problem, x0, cfg, false)
}

pub fn nonlinear_cg(problem: &Problem, x0: &Mat, cfg: &SolverConfig) -> Result<SolverTrace> {
    line_search_method(problem, x0, cfg, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerOutcome {
    /// Residual below `inner_tol`.
    Converged,
    /// Non-positive curvature met; the direction is the last iterate or `−grad`.
    NegativeCurvature,
    /// `max_inner` reached without meeting the tolerance.
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub direction: TangentVector,
    pub inner_iters: usize,
    /// `‖Hess[ξ] + grad f‖_X` recomputed with a fresh Hessian application.
    pub residual: f64,
    pub outcome: InnerOutcome,
}

/// Solves `Hess f(X)[ξ] = −grad f(X)` by linear conjugate gradients in the
/// Riemannian inner product at `X`.
///
/// The recursive residual is checked against a directly computed one when it
/// drops below `inner_tol`; if they disagree the iteration restarts from the
/// direct residual.
pub fn newton_direction(
    ws: &PointWorkspace,
    derivs: &EuclideanDerivatives<'_>,
    cfg: &SolverConfig,
) -> Result<NewtonStep> {
    let hess = HessianOperator::new(ws, derivs)?;
    let solution = linear_cg(
        |v| hess.apply_mat(v),
        |a, b| ws.inner_ambient(a, b),
        hess.gradient(),
        cfg.inner_tol,
        cfg.max_inner_for(ws.spec()),
    );
    Ok(NewtonStep {
        direction: ws.project(&solution.xi)?,
        inner_iters: solution.iters,
        residual: solution.residual,
        outcome: solution.outcome,
    })
}

pub(crate) struct CgSolution {
    pub xi: Mat,
    pub iters: usize,
    pub residual: f64,
    pub outcome: InnerOutcome,
}

/// Conjugate gradients for `H ξ = −g` in the inner product `inner`.
pub(crate) fn linear_cg(
    apply: impl Fn(&Mat) -> Mat,
    inner: impl Fn(&Mat, &Mat) -> f64,
    grad: &Mat,
    tol: f64,
    max_inner: usize,
) -> CgSolution {
    let true_residual = |xi: &Mat| apply(xi) + grad;
    let mut xi = Mat::zeros(grad.nrows(), grad.ncols());
    let mut r = grad.clone();
    let mut rr = inner(&r, &r);
    let mut d = -&r;
    let mut iters = 0;
    let mut outcome = InnerOutcome::MaxIter;

    loop {
        if rr.max(0.0).sqrt() < tol {
            let direct = true_residual(&xi);
            let direct_rr = inner(&direct, &direct);
            if direct_rr.max(0.0).sqrt() < tol {
                outcome = InnerOutcome::Converged;
                break;
            }
            r = direct;
            rr = direct_rr;
            d = -&r;
        }
        if iters >= max_inner {
            break;
        }
        let hd = apply(&d);
        let curvature = inner(&d, &hd);
        if !(curvature > 0.0) {
            outcome = InnerOutcome::NegativeCurvature;
            if xi.iter().all(|v| *v == 0.0) {
                xi = -grad;
            }
            break;
        }
        iters += 1;
        let t = rr / curvature;
        xi += &d * t;
        r += &hd * t;
        let rr_next = inner(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        d = &d * beta - &r;
    }

    let direct = true_residual(&xi);
    let residual = inner(&direct, &direct).max(0.0).sqrt();
    if outcome == InnerOutcome::Converged && !(residual < tol) {
        outcome = InnerOutcome::MaxIter;
    }
    CgSolution {
        xi,
        iters,
        residual,
        outcome,
    }
}

/// Newton's method with unit steps `X_{k+1} = R_{X_k}(ξ_k)`.
///
/// Stops with [`Status::InnerFailure`] when the inner solve exhausts its
/// iteration budget or the step cannot be retracted to a feasible point.
pub fn newton_method(problem: &Problem, x0: &Mat, cfg: &SolverConfig) -> Result<SolverTrace> {
    cfg.validate()?;
    if !problem.spec().metric().is_canonical() {
        return Err(Error::UnsupportedMetric);
    }
    let mut rec = Recorder::new();
    let mut ws = problem.workspace(x0)?;
    let grad = problem.gradient(&ws);
    let mut gnorm = gradient_norm(&ws, &grad);
    rec.push(Phase::Newton, problem.value(&ws), gnorm, 0.0);

    loop {
        if !gnorm.is_finite() {
            return Ok(rec.finish(Status::InnerFailure, ws));
        }
        if gnorm < cfg.outer_tol {
            return Ok(rec.finish(Status::Converged, ws));
        }
        if rec.records.len() > cfg.max_outer {
            return Ok(rec.finish(Status::MaxIter, ws));
        }
        let derivs = EuclideanDerivatives::from_objective(problem.objective(), ws.x());
        let step = newton_direction(&ws, &derivs, cfg)?;
        if step.outcome == InnerOutcome::MaxIter {
            return Ok(rec.finish(Status::InnerFailure, ws));
        }
        let finite = step.direction.mat().iter().all(|v| v.is_finite());
        let next = match ws.retract(&step.direction) {
            Ok(next) if finite => next,
            _ => return Ok(rec.finish(Status::InnerFailure, ws)),
        };
        let next_grad = problem.gradient(&next);
        gnorm = gradient_norm(&next, &next_grad);
        rec.push_newton(Phase::Newton, problem.value(&next), gnorm, 1.0, Some(&step));
        ws = next;
    }
}

/// Nonlinear CG until the gradient norm drops below `switch_tol`, then Newton.
pub fn hybrid(problem: &Problem, x0: &Mat, cfg: &SolverConfig) -> Result<SolverTrace> {
    cfg.validate()?;
    let cg_cfg = SolverConfig {
        outer_tol: cfg.switch_tol.max(cfg.outer_tol),
        ..cfg.clone()
    };
    let cg = if cg_cfg.outer_tol.is_finite() {
        nonlinear_cg(problem, x0, &cg_cfg)?
    } else {
        // Every gradient norm is below an infinite threshold: CG would stop at once.
        return newton_method(problem, x0, cfg).map(|mut t| {
            t.switch_iter = Some(0);
            t
        });
    };
    let cg_iters = cg.records.len() - 1;
    if cg.status != Status::Converged || cg.last().gradnorm < cfg.outer_tol {
        return Ok(cg);
    }
    if cg_iters == 0 {
        let mut t = newton_method(problem, x0, cfg)?;
        t.switch_iter = Some(0);
        return Ok(t);
    }
    let newton_cfg = SolverConfig {
        max_outer: cfg.max_outer.saturating_sub(cg_iters),
        ..cfg.clone()
    };
    let newton = newton_method(problem, cg.final_point.x(), &newton_cfg)?;
    let offset_ms = cg.last().time_ms;
    let mut records = cg.records;
    let switch_iter = records.len() - 1;
    for r in newton.records.into_iter().skip(1) {
        records.push(IterRecord {
            index: records.len(),
            time_ms: r.time_ms + offset_ms,
            ..r
        });
    }
    Ok(SolverTrace {
        records,
        status: newton.status,
        switch_iter: Some(switch_iter),
        final_point: newton.final_point,
    })
}

/// Dispatches on `cfg.method`.
pub fn solve(problem: &Problem, x0: &Mat, cfg: &SolverConfig) -> Result<SolverTrace> {
    match cfg.method {
        Method::SteepestDescent => steepest_descent(problem, x0, cfg),
        Method::NonlinearCg => nonlinear_cg(problem, x0, cfg),
        Method::Newton => newton_method(problem, x0, cfg),
        Method::Hybrid => hybrid(problem, x0, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{build_benchmark, eigen_solution_basis, BenchmarkProblem, ExperimentConfig, MetricChoice};

    fn bench(metric: MetricChoice, rho: f64) -> BenchmarkProblem {
        build_benchmark(&ExperimentConfig {
            metric,
            rho,
            ..ExperimentConfig::default()
        })
        .unwrap()
    }

    fn minimizer(b: &BenchmarkProblem) -> Mat {
        eigen_solution_basis(&b.m, b.spec.a(), b.spec.p_plus(), b.spec.p_minus()).unwrap()
    }

    fn same_iterates(a: &SolverTrace, b: &SolverTrace) -> bool {
        a.status == b.status
            && a.records.len() == b.records.len()
            && a.records.iter().zip(&b.records).all(|(x, y)| {
                x.index == y.index
                    && x.phase == y.phase
                    && x.f == y.f
                    && x.gradnorm == y.gradnorm
                    && x.step == y.step
                    && x.inner_iters == y.inner_iters
            })
    }

    struct WrongGradient;
    impl Objective for WrongGradient {
        fn value(&self, x: &Mat) -> f64 {
            x.norm_squared()
        }
        fn egrad(&self, x: &Mat) -> Mat {
            x * 3.0
        }
        fn ehess(&self, _x: &Mat, xi: &Mat) -> Mat {
            xi * 3.0
        }
    }

    #[test]
    fn problem_rejects_inconsistent_gradient() {
        let b = bench(MetricChoice::G1, 1.0);
        let err = Problem::new(b.spec.clone(), Arc::new(WrongGradient)).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = [
            SolverConfig { outer_tol: 0.0, ..Default::default() },
            SolverConfig { inner_tol: -1.0, ..Default::default() },
            SolverConfig { switch_tol: f64::NAN, ..Default::default() },
            SolverConfig { max_inner: Some(0), ..Default::default() },
            SolverConfig {
                linesearch: LineSearchConfig { contraction: 1.0, ..Default::default() },
                ..Default::default()
            },
            SolverConfig {
                linesearch: LineSearchConfig { sufficient_decrease: 0.0, ..Default::default() },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let b = bench(MetricChoice::G1, 1.0);
        assert_eq!(SolverConfig::default().max_inner_for(&b.spec), 60);
        assert_eq!("hybrid".parse::<Method>().unwrap(), Method::Hybrid);
        assert!("bfgs".parse::<Method>().is_err());
    }

    #[test]
    fn armijo_steepest_descent_step() {
        for metric in [MetricChoice::G1, MetricChoice::G2] {
            let b = bench(metric, 0.5);
            let ws = PointWorkspace::new(b.spec.clone(), b.x0.clone()).unwrap();
            let grad = b.problem.gradient(&ws);
            let dir = grad.scaled(-1.0);
            let ls = LineSearchConfig::default();
            let (t, next) = armijo_linesearch(&b.problem, &ws, &dir, &ls).unwrap();
            let f0 = b.problem.value(&ws);
            let f1 = b.problem.value(&next);
            let slope = ws.inner(&grad, &dir).unwrap();
            assert!(t > 0.0);
            assert!(f1 < f0);
            assert!(f1 <= f0 + ls.sufficient_decrease * t * slope);
            let check = ws.retract(&dir.scaled(t)).unwrap();
            assert_eq!(check.x(), next.x());
        }
    }

    #[test]
    fn armijo_rejects_ascent() {
        let b = bench(MetricChoice::G2, 1.0);
        let ws = PointWorkspace::new(b.spec.clone(), b.x0.clone()).unwrap();
        let up = b.problem.gradient(&ws);
        let err = armijo_linesearch(&b.problem, &ws, &up, &LineSearchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::AscentDirection { .. }));
    }

    #[test]
    fn steepest_descent_monotone_and_capped() {
        let b = bench(MetricChoice::G2, 1.0);
        let cfg = SolverConfig {
            max_outer: 40,
            ..Default::default()
        };
        let trace = steepest_descent(&b.problem, &b.x0, &cfg).unwrap();
        assert_eq!(trace.status, Status::MaxIter);
        assert_eq!(trace.records.len(), 41);
        for (k, w) in trace.records.windows(2).enumerate() {
            assert!(w[1].f < w[0].f, "no decrease at {k}");
            assert_eq!(w[1].index, w[0].index + 1);
        }
        assert!(trace.final_point.feasibility_residual() < 1e-9);
    }

    #[test]
    fn zero_budget_records_only_the_start() {
        let b = bench(MetricChoice::G1, 1.0);
        for method in [Method::SteepestDescent, Method::NonlinearCg, Method::Newton, Method::Hybrid] {
            let cfg = SolverConfig {
                method,
                max_outer: 0,
                ..Default::default()
            };
            let trace = solve(&b.problem, &b.x0, &cfg).unwrap();
            assert_eq!(trace.records.len(), 1, "{method}");
            assert_eq!(trace.status, Status::MaxIter);
        }
    }

    #[test]
    fn stationary_start_needs_no_iterations() {
        let b = bench(MetricChoice::G1, 2.0);
        let x = minimizer(&b);
        let cfg = SolverConfig {
            outer_tol: 1e-8,
            ..Default::default()
        };
        for method in [Method::SteepestDescent, Method::NonlinearCg, Method::Newton, Method::Hybrid] {
            let trace = solve(&b.problem, &x, &SolverConfig { method, ..cfg.clone() }).unwrap();
            assert_eq!(trace.status, Status::Converged, "{method}");
            assert_eq!(trace.records.len(), 1, "{method}");
        }
    }

    #[test]
    fn cg_first_step_matches_steepest_descent() {
        let b = bench(MetricChoice::G2, 0.5);
        let cfg = SolverConfig {
            max_outer: 1,
            ..Default::default()
        };
        let sd = steepest_descent(&b.problem, &b.x0, &cfg).unwrap();
        let cg = nonlinear_cg(&b.problem, &b.x0, &cfg).unwrap();
        assert_eq!(sd.records[1].f, cg.records[1].f);
        assert_eq!(sd.records[1].step, cg.records[1].step);
        assert_eq!(sd.final_point.x(), cg.final_point.x());
    }

    #[test]
    fn hestenes_stiefel_always_descends() {
        let b = bench(MetricChoice::G1, 1.0);
        let ws = PointWorkspace::new(b.spec.clone(), b.x0.clone()).unwrap();
        let grad = b.problem.gradient(&ws);
        let mut rng = rng_from_seed(11);
        for _ in 0..50 {
            let prev_grad = random_normal(10, 4, &mut rng);
            let prev_dir = random_normal(10, 4, &mut rng) * 10.0;
            let d = hestenes_stiefel_direction(&ws, &grad, &prev_grad, &prev_dir);
            assert!(ws.inner(&d, &grad).unwrap() < 0.0);
            assert!(ws.tangency_defect(d.mat()) < 1e-10);
        }
    }

    #[test]
    fn linear_cg_identity_is_one_step() {
        let mut rng = rng_from_seed(5);
        let g = random_normal(6, 3, &mut rng);
        let sol = linear_cg(|v| v.clone(), |a, b| a.dot(b), &g, 1e-12, 10);
        assert_eq!(sol.iters, 1);
        assert_eq!(sol.outcome, InnerOutcome::Converged);
        assert!((sol.xi + &g).norm() < 1e-14);
    }

    #[test]
    fn linear_cg_negative_curvature_falls_back_to_steepest_descent() {
        let mut rng = rng_from_seed(6);
        let g = random_normal(4, 2, &mut rng);
        let sol = linear_cg(|v| -v, |a, b| a.dot(b), &g, 1e-12, 10);
        assert_eq!(sol.outcome, InnerOutcome::NegativeCurvature);
        assert_eq!(sol.iters, 0);
        assert_eq!(sol.xi, -&g);
    }

    #[test]
    fn linear_cg_respects_budget() {
        let d = Mat::from_diagonal(&nalgebra::DVector::from_fn(8, |i, _| 1.0 + i as f64));
        let g = Mat::from_element(8, 1, 1.0);
        let sol = linear_cg(|v| &d * v, |a, b| a.dot(b), &g, 1e-14, 3);
        assert_eq!(sol.outcome, InnerOutcome::MaxIter);
        assert_eq!(sol.iters, 3);
        let full = linear_cg(|v| &d * v, |a, b| a.dot(b), &g, 1e-12, 16);
        assert_eq!(full.outcome, InnerOutcome::Converged);
        assert!(full.iters <= 8 + 2);
    }

    #[test]
    fn newton_direction_near_solution() {
        for metric in [MetricChoice::G1, MetricChoice::G2] {
            let b = bench(metric, 1.0);
            let cfg = SolverConfig {
                method: Method::NonlinearCg,
                outer_tol: 1e-6,
                ..Default::default()
            };
            let near = nonlinear_cg(&b.problem, &b.x0, &cfg).unwrap();
            assert_eq!(near.status, Status::Converged);
            let ws = &near.final_point;
            let derivs = EuclideanDerivatives::from_objective(b.problem.objective(), ws.x());
            let step = newton_direction(ws, &derivs, &SolverConfig::default()).unwrap();
            assert_eq!(step.outcome, InnerOutcome::Converged);
            assert!(step.inner_iters <= 60);
            assert!(step.residual < 1e-10);
            let hess = HessianOperator::new(ws, &derivs).unwrap();
            let recheck = hess.apply(&step.direction).unwrap().into_mat() + hess.gradient();
            assert!(ws.inner_ambient(&recheck, &recheck).sqrt() < 1e-10);
            assert!(ws.tangency_defect(step.direction.mat()) < 1e-12);
        }
    }

    #[test]
    fn newton_from_switch_point_converges_fast() {
        for metric in [MetricChoice::G1, MetricChoice::G2] {
            let b = bench(metric, 0.5);
            let cfg = SolverConfig {
                outer_tol: 1e-3,
                ..Default::default()
            };
            let near = nonlinear_cg(&b.problem, &b.x0, &cfg).unwrap();
            let trace = newton_method(&b.problem, near.final_point.x(), &SolverConfig::default()).unwrap();
            assert_eq!(trace.status, Status::Converged);
            assert!(trace.records.len() - 1 <= 5);
            let g: Vec<f64> = trace.records.iter().map(|r| r.gradnorm).collect();
            assert!(g.windows(2).any(|w| w[1] / w[0] < 0.1));
            assert!(trace.final_point.feasibility_residual() < 1e-9);
        }
    }

    #[test]
    fn hybrid_switches_once_and_finishes_with_newton() {
        let b = bench(MetricChoice::G2, 2.0);
        let trace = hybrid(&b.problem, &b.x0, &SolverConfig::default()).unwrap();
        assert_eq!(trace.status, Status::Converged);
        let switch = trace.switch_iter.unwrap();
        assert!(trace.records[switch].gradnorm < 1e-6);
        assert!(trace.records[..switch].iter().all(|r| r.gradnorm >= 1e-6));
        assert!(trace.records[..=switch].iter().all(|r| r.phase == Phase::Cg));
        assert!(trace.records[switch + 1..].iter().all(|r| r.phase == Phase::Newton));
        assert!(trace.newton_steps() <= 5);
        assert!(trace.last().gradnorm < 1e-10);
        for (k, r) in trace.records.iter().enumerate() {
            assert_eq!(r.index, k);
        }
    }

    #[test]
    fn hybrid_degenerate_thresholds() {
        let b = bench(MetricChoice::G1, 1.0);
        let near = nonlinear_cg(
            &b.problem,
            &b.x0,
            &SolverConfig {
                outer_tol: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        let x = near.final_point.x();
        let newton_cfg = SolverConfig::default();
        let as_newton = hybrid(&b.problem, x, &SolverConfig { switch_tol: f64::INFINITY, ..newton_cfg.clone() }).unwrap();
        let pure_newton = newton_method(&b.problem, x, &newton_cfg).unwrap();
        assert!(same_iterates(&as_newton, &pure_newton));

        let cg_cfg = SolverConfig {
            max_outer: 60,
            ..Default::default()
        };
        let as_cg = hybrid(&b.problem, &b.x0, &SolverConfig { switch_tol: 0.0, ..cg_cfg.clone() }).unwrap();
        let pure_cg = nonlinear_cg(&b.problem, &b.x0, &cg_cfg).unwrap();
        assert!(same_iterates(&as_cg, &pure_cg));
    }

    #[test]
    fn newton_needs_canonical_metric() {
        use crate::manifold::{Metric, MetricField};
        let b = bench(MetricChoice::G1, 1.0);
        let base = b.spec.clone();
        let field = MetricField::new(move |x: &Mat| base.metric_matrix_at(x).unwrap());
        let spec = Arc::new(b.spec.with_metric(Metric::General(field), 1.0).unwrap());
        let problem = Problem::new(spec, Arc::new(crate::experiments::TraceObjective::new(b.m.clone()).unwrap())).unwrap();
        let err = newton_method(&problem, &b.x0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedMetric));
        let sd = steepest_descent(
            &problem,
            &b.x0,
            &SolverConfig {
                max_outer: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(sd.records.windows(2).all(|w| w[1].f < w[0].f));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let b = bench(MetricChoice::G2, 0.5);
        let first = hybrid(&b.problem, &b.x0, &SolverConfig::default()).unwrap();
        let second = hybrid(&b.problem, &b.x0, &SolverConfig::default()).unwrap();
        assert!(same_iterates(&first, &second));
    }
}
