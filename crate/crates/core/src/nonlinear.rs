//! Newton-family nonlinear solvers (direct, Krylov, inexact Krylov) with a
//! cubic strong-Wolfe line search. Used for the subproblem solves of
//! alternate minimization and as building blocks of the monolithic solvers.

use crate::linalg::{
    build_preconditioner, direct_solve, dot, krylov_solve, norm2, CsrMatrix, KrylovMethod,
    KrylovSpec, PrecondChoice,
};
use std::fmt;

#[derive(Debug)]
pub enum NonlinearError {
    /// Iteration budget exhausted before reaching the residual target.
    MaxIters { iters: usize, res_norm: f64 },
    /// No step satisfying the strong Wolfe conditions was found.
    LineSearch(String),
    /// The linear subsolve failed or did not reach its tolerance.
    Linear(String),
    /// Residual/Jacobian/merit evaluation failed.
    Eval(String),
    /// The supplied direction is not a descent direction.
    NonDescent,
    /// Gradient is zero: already stationary (convergence, not failure).
    Stationary,
}

impl fmt::Display for NonlinearError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlinearError::MaxIters { iters, res_norm } => {
                write!(f, "no convergence in {iters} iterations (residual {res_norm:.3e})")
            }
            NonlinearError::LineSearch(s) => write!(f, "line search failed: {s}"),
            NonlinearError::Linear(s) => write!(f, "linear solve failed: {s}"),
            NonlinearError::Eval(s) => write!(f, "evaluation failed: {s}"),
            NonlinearError::NonDescent => write!(f, "direction is not a descent direction"),
            NonlinearError::Stationary => write!(f, "gradient is zero (stationary point)"),
        }
    }
}

impl std::error::Error for NonlinearError {}

/// How the Newton correction is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonVariant {
    /// Sparse direct factorization.
    Nd,
    /// Krylov solve to the tight linear tolerances.
    Nk,
    /// Krylov solve to the loose forcing tolerance `eta * ||R||`.
    Ink,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub variant: NewtonVariant,
    /// Absolute residual target.
    pub eps_abs: f64,
    /// Relative residual target (against the initial residual).
    pub eps_rel: f64,
    /// Absolute linear tolerance.
    pub eps_abs_lin: f64,
    /// Relative linear tolerance (times current `||R||`).
    pub eps_rel_lin: f64,
    /// Inexact-Newton forcing term.
    pub eta: f64,
    pub max_iters: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Preconditioner for the Krylov correction solves (ignored by the
    /// direct variant).
    pub preconditioner: PrecondChoice,
}

impl NewtonConfig {
    pub fn new(variant: NewtonVariant) -> Self {
        NewtonConfig {
            variant,
            eps_abs: 1e-7,
            eps_rel: 1e-6,
            eps_abs_lin: 1e-9,
            eps_rel_lin: 1e-9,
            eta: 1e-4,
            max_iters: 500,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            preconditioner: PrecondChoice::default(),
        }
    }
}

/// A residual system `R(x) = 0` that is the gradient of a merit energy
/// `f` (so `∇f = R`), with an assembled Jacobian.
pub trait NonlinearProblem {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>, NonlinearError>;
    fn jacobian(&self, x: &[f64]) -> Result<CsrMatrix, NonlinearError>;
    fn merit(&self, x: &[f64]) -> Result<f64, NonlinearError>;
}

/// One accepted Newton iteration.
#[derive(Debug, Clone, Copy)]
pub struct NewtonTrace {
    pub iter: usize,
    /// Residual norm after the step.
    pub res_norm: f64,
    pub alpha: f64,
    pub lin_iters: usize,
    /// Fresh `||J p + R||` of the accepted correction.
    pub lin_res: f64,
    /// Linear tolerance the correction had to satisfy (0 for direct).
    pub forcing_bound: f64,
    pub merit_after: f64,
}

/// Merit at the starting iterate plus the per-iteration trace of one
/// solve: enough to audit that every accepted iterate decreased the merit
/// and every correction met its forcing bound.
#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    /// Merit energy at the initial iterate.
    pub merit0: f64,
    pub steps: Vec<NewtonTrace>,
}

#[derive(Debug)]
pub struct NewtonResult {
    pub x: Vec<f64>,
    pub iters: usize,
    pub linear_iters: usize,
    pub res_norm: f64,
    pub res_norm0: f64,
    /// Merit energy at the initial iterate.
    pub merit0: f64,
    pub trace: Vec<NewtonTrace>,
    /// Jacobian assembled at the initial iterate, when at least one
    /// iteration ran. Reused by the Schwarz preconditioners.
    pub first_jacobian: Option<CsrMatrix>,
}

impl NewtonResult {
    /// The solve's audit trace (starting merit plus accepted steps).
    pub fn solve_trace(&self) -> SolveTrace {
        SolveTrace { merit0: self.merit0, steps: self.trace.clone() }
    }
}

const MAX_LS_EVALS: usize = 40;
const MIN_STEP: f64 = 1e-12;

/// Solves `R(x) = 0` from `x0`, stopping at
/// `||R|| <= max(eps_abs, eps_rel * ||R(x0)||)` (checked before iterating).
pub fn newton_solve(
    prob: &dyn NonlinearProblem,
    x0: &[f64],
    config: &NewtonConfig,
) -> Result<NewtonResult, NonlinearError> {
    let mut x = x0.to_vec();
    let mut r = prob.residual(&x)?;
    let res_norm0 = norm2(&r);
    let merit_start = prob.merit(&x)?;
    let target = config.eps_abs.max(config.eps_rel * res_norm0);
    let mut res_norm = res_norm0;
    let mut trace = Vec::new();
    let mut linear_iters = 0usize;
    let mut first_jacobian = None;
    let mut iters = 0usize;

    while res_norm > target {
        if iters >= config.max_iters {
            return Err(NonlinearError::MaxIters { iters, res_norm });
        }
        let jac = prob.jacobian(&x)?;
        if first_jacobian.is_none() {
            first_jacobian = Some(jac.clone());
        }
        let mut rhs = vec![0.0; r.len()];
        for (o, v) in rhs.iter_mut().zip(&r) {
            *o = -v;
        }
        let (p, lin_iters, forcing_bound) = solve_correction(&jac, &rhs, res_norm, config)?;
        linear_iters += lin_iters;
        let mut jp = vec![0.0; r.len()];
        jac.spmv(&p, &mut jp);
        for (o, v) in jp.iter_mut().zip(&r) {
            *o += v;
        }
        let lin_res = norm2(&jp);

        let merit0 = trace.last().map_or(merit_start, |t: &NewtonTrace| t.merit_after);
        let slope = dot(&r, &p);
        let (dir, slope) = if slope < 0.0 {
            (p, slope)
        } else {
            // Newton direction lost descent (e.g. indefinite Jacobian):
            // fall back to steepest descent on the merit.
            let mut d = vec![0.0; r.len()];
            for (o, v) in d.iter_mut().zip(&r) {
                *o = -v;
            }
            let s = -dot(&r, &r);
            if s == 0.0 {
                return Err(NonlinearError::Stationary);
            }
            (d, s)
        };

        let mut phi = |alpha: f64| -> Result<(f64, f64), NonlinearError> {
            let mut xt = x.clone();
            for (o, v) in xt.iter_mut().zip(&dir) {
                *o += alpha * v;
            }
            let f = prob.merit(&xt)?;
            let g = dot(&prob.residual(&xt)?, &dir);
            Ok((f, g))
        };
        let alpha = line_search_cubic(&mut phi, merit0, slope, config.wolfe_c1, config.wolfe_c2)?;

        for (o, v) in x.iter_mut().zip(&dir) {
            *o += alpha * v;
        }
        r = prob.residual(&x)?;
        res_norm = norm2(&r);
        iters += 1;
        trace.push(NewtonTrace {
            iter: iters,
            res_norm,
            alpha,
            lin_iters,
            lin_res,
            forcing_bound,
            merit_after: prob.merit(&x)?,
        });
    }

    Ok(NewtonResult {
        x,
        iters,
        linear_iters,
        res_norm,
        res_norm0,
        merit0: merit_start,
        trace,
        first_jacobian,
    })
}

/// Solves `J p = rhs` per the Newton variant. Returns the correction, the
/// Krylov iteration count, and the linear tolerance that was enforced.
fn solve_correction(
    jac: &CsrMatrix,
    rhs: &[f64],
    res_norm: f64,
    config: &NewtonConfig,
) -> Result<(Vec<f64>, usize, f64), NonlinearError> {
    match config.variant {
        NewtonVariant::Nd => {
            let p = direct_solve(jac, rhs).map_err(|e| NonlinearError::Linear(e.to_string()))?;
            Ok((p, 0, 0.0))
        }
        NewtonVariant::Nk | NewtonVariant::Ink => {
            let tol = if config.variant == NewtonVariant::Nk {
                (config.eps_rel_lin * res_norm).max(config.eps_abs_lin)
            } else {
                (config.eta * res_norm).max(config.eps_abs_lin)
            };
            let pc = build_preconditioner(jac, config.preconditioner)
                .map_err(|e| NonlinearError::Linear(e.to_string()))?;
            let spec = KrylovSpec::new(KrylovMethod::Bicgstab).with_tols(0.0, tol);
            let x0 = vec![0.0; rhs.len()];
            let out = krylov_solve(jac, rhs, &x0, Some(&pc), &spec)
                .map_err(|e| NonlinearError::Linear(e.to_string()))?;
            if !out.converged {
                return Err(NonlinearError::Linear(format!(
                    "BCGSTAB stalled at residual {:.3e} (target {:.3e})",
                    out.residual_norm, tol
                )));
            }
            Ok((out.x, out.iters, tol))
        }
    }
}

/// Cubic-interpolation line search enforcing the strong Wolfe conditions
/// `f(x+αp) <= f(x) + c1 α ⟨∇f,p⟩` and `|⟨∇f(x+αp),p⟩| <= c2 |⟨∇f,p⟩|`.
/// `phi(α)` returns the merit and its directional derivative; `phi0`/`dphi0`
/// are their values at α = 0. The first trial step is α = 1.
pub fn line_search_cubic(
    phi: &mut dyn FnMut(f64) -> Result<(f64, f64), NonlinearError>,
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
) -> Result<f64, NonlinearError> {
    if dphi0 >= 0.0 {
        return Err(NonlinearError::NonDescent);
    }
    let mut a_prev = 0.0;
    let mut f_prev = phi0;
    let mut g_prev = dphi0;
    let mut alpha = 1.0;
    for i in 0..MAX_LS_EVALS {
        let (f_a, g_a) = phi(alpha)?;
        if f_a > phi0 + c1 * alpha * dphi0 || (i > 0 && f_a >= f_prev) {
            return zoom(phi, phi0, dphi0, c1, c2, a_prev, f_prev, g_prev, alpha, f_a, g_a);
        }
        if g_a.abs() <= c2 * dphi0.abs() {
            return Ok(alpha);
        }
        if g_a >= 0.0 {
            return zoom(phi, phi0, dphi0, c1, c2, alpha, f_a, g_a, a_prev, f_prev, g_prev);
        }
        a_prev = alpha;
        f_prev = f_a;
        g_prev = g_a;
        alpha *= 2.0;
    }
    Err(NonlinearError::LineSearch(format!(
        "no Wolfe step within {MAX_LS_EVALS} trials"
    )))
}

/// Shrinks a bracketing interval `[lo, hi]` (in function, not coordinate,
/// order) around a strong-Wolfe point by cubic interpolation.
#[allow(clippy::too_many_arguments)]
fn zoom(
    phi: &mut dyn FnMut(f64) -> Result<(f64, f64), NonlinearError>,
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    mut a_lo: f64,
    mut f_lo: f64,
    mut g_lo: f64,
    mut a_hi: f64,
    mut f_hi: f64,
    mut g_hi: f64,
) -> Result<f64, NonlinearError> {
    for _ in 0..MAX_LS_EVALS {
        if (a_hi - a_lo).abs() < MIN_STEP {
            return Err(NonlinearError::LineSearch(format!(
                "bracket collapsed to width {:.3e} without a Wolfe point",
                (a_hi - a_lo).abs()
            )));
        }
        let a = cubic_step(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi);
        let (f_a, g_a) = phi(a)?;
        if f_a > phi0 + c1 * a * dphi0 || f_a >= f_lo {
            a_hi = a;
            f_hi = f_a;
            g_hi = g_a;
        } else {
            if g_a.abs() <= c2 * dphi0.abs() {
                return Ok(a);
            }
            if g_a * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
                g_hi = g_lo;
            }
            a_lo = a;
            f_lo = f_a;
            g_lo = g_a;
        }
    }
    Err(NonlinearError::LineSearch(format!(
        "zoom exhausted {MAX_LS_EVALS} trials"
    )))
}

/// Minimizer of the cubic interpolant through two point/slope pairs,
/// safeguarded into the interior of the interval.
fn cubic_step(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let mid = 0.5 * (a + b);
    if disc < 0.0 {
        return mid;
    }
    let d2 = disc.sqrt() * (b - a).signum();
    let denom = gb - ga + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let c = b - (b - a) * (gb + d2 - d1) / denom;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    if !c.is_finite() || c < lo + margin || c > hi - margin {
        mid
    } else {
        c
    }
}

/// Which direction `ensure_descent` settled on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentKind {
    Given,
    NewtonFallback,
    SteepestDescent,
}

/// Returns a guaranteed descent direction for a merit with gradient
/// `grad`: the given direction if it descends, else the Newton fallback,
/// else steepest descent. A zero gradient signals stationarity.
pub fn ensure_descent(
    p: Vec<f64>,
    grad: &[f64],
    newton_fallback: Vec<f64>,
) -> Result<(Vec<f64>, DescentKind), NonlinearError> {
    if norm2(grad) == 0.0 {
        return Err(NonlinearError::Stationary);
    }
    if dot(&p, grad) < 0.0 {
        return Ok((p, DescentKind::Given));
    }
    if dot(&newton_fallback, grad) < 0.0 {
        return Ok((newton_fallback, DescentKind::NewtonFallback));
    }
    let d: Vec<f64> = grad.iter().map(|&g| -g).collect();
    Ok((d, DescentKind::SteepestDescent))
}
