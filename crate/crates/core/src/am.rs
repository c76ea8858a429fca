//! Alternate minimization: the coupled fracture system is solved by
//! repeatedly minimizing the energy in the displacement field (at fixed
//! phase field) and then in the phase field (at fixed displacement).
//! Each half-step is a Newton solve of the corresponding residual block.

use crate::linalg::{norm2, CsrMatrix};
use crate::model::{FractureModel, ModelError, SystemState};
use crate::nonlinear::{
    newton_solve, NewtonConfig, NewtonVariant, NonlinearError, NonlinearProblem, SolveTrace,
};
use std::fmt;

#[derive(Debug)]
pub enum AmError {
    MaxOuterIters { outer: usize, res_norm: f64 },
    Displacement(NonlinearError),
    Phase(NonlinearError),
    Model(ModelError),
}

impl fmt::Display for AmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmError::MaxOuterIters { outer, res_norm } => write!(
                f,
                "no convergence in {outer} outer iterations (coupled residual {res_norm:.3e})"
            ),
            AmError::Displacement(e) => write!(f, "displacement solve: {e}"),
            AmError::Phase(e) => write!(f, "phase-field solve: {e}"),
            AmError::Model(e) => write!(f, "model evaluation: {e}"),
        }
    }
}

impl std::error::Error for AmError {}

/// Which solver runs the two half-steps and what stops the outer loop.
/// `Nd`/`Nk`/`Ink` stop on the coupled residual; `St` is the classic
/// staggered scheme stopping on iterate change, with direct subsolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmVariant {
    Nd,
    Nk,
    Ink,
    St,
}

#[derive(Debug, Clone, Copy)]
pub struct AmConfig {
    pub variant: AmVariant,
    /// Absolute coupled-residual target.
    pub eps_abs_glob: f64,
    /// Relative coupled-residual target (against the entry residual).
    pub eps_rel_glob: f64,
    /// Staggered stop: max-norm tolerance on the phase-field change.
    pub eps_c_diff: f64,
    /// Staggered stop: max-norm tolerance on the displacement change.
    pub disp_diff_tol: f64,
    pub max_outer_iters: usize,
    /// Subproblem Newton settings.
    pub newton: NewtonConfig,
}

impl AmConfig {
    pub fn new(variant: AmVariant) -> Self {
        let newton = NewtonConfig::new(match variant {
            AmVariant::Nd | AmVariant::St => NewtonVariant::Nd,
            AmVariant::Nk => NewtonVariant::Nk,
            AmVariant::Ink => NewtonVariant::Ink,
        });
        AmConfig {
            variant,
            eps_abs_glob: 1e-7,
            eps_rel_glob: 1e-6,
            eps_c_diff: 1e-4,
            disp_diff_tol: 1e-12,
            max_outer_iters: 10_000,
            newton,
        }
    }
}

/// Displacement subproblem at frozen phase field: unknowns are the `2n`
/// displacement coefficients, the merit is the total energy.
pub struct DisplacementProblem<'a> {
    pub model: &'a FractureModel,
    pub base: &'a SystemState,
}

impl DisplacementProblem<'_> {
    fn at(&self, x: &[f64]) -> SystemState {
        let mut s = self.base.clone();
        s.u = x.to_vec();
        s
    }
}

fn eval_err(e: ModelError) -> NonlinearError {
    NonlinearError::Eval(e.to_string())
}

impl NonlinearProblem for DisplacementProblem<'_> {
    fn dim(&self) -> usize {
        2 * self.model.n_nodes()
    }
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>, NonlinearError> {
        let r = self.model.residual(&self.at(x)).map_err(eval_err)?;
        Ok(r[..self.dim()].to_vec())
    }
    fn jacobian(&self, x: &[f64]) -> Result<CsrMatrix, NonlinearError> {
        Ok(self.model.jacobian(&self.at(x)).map_err(eval_err)?.uu)
    }
    fn merit(&self, x: &[f64]) -> Result<f64, NonlinearError> {
        Ok(self.model.total_energy(&self.at(x)).map_err(eval_err)?.total)
    }
}

/// Phase-field subproblem at frozen displacement: unknowns are the `n`
/// nodal phase-field coefficients, the merit is the total energy.
pub struct PhaseProblem<'a> {
    pub model: &'a FractureModel,
    pub base: &'a SystemState,
}

impl PhaseProblem<'_> {
    fn at(&self, x: &[f64]) -> SystemState {
        let mut s = self.base.clone();
        s.c = x.to_vec();
        s
    }
}

impl NonlinearProblem for PhaseProblem<'_> {
    fn dim(&self) -> usize {
        self.model.n_nodes()
    }
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>, NonlinearError> {
        let r = self.model.residual(&self.at(x)).map_err(eval_err)?;
        Ok(r[2 * self.model.n_nodes()..].to_vec())
    }
    fn jacobian(&self, x: &[f64]) -> Result<CsrMatrix, NonlinearError> {
        Ok(self.model.jacobian(&self.at(x)).map_err(eval_err)?.cc)
    }
    fn merit(&self, x: &[f64]) -> Result<f64, NonlinearError> {
        Ok(self.model.total_energy(&self.at(x)).map_err(eval_err)?.total)
    }
}

/// Newton/Krylov work done by one outer iteration.
#[derive(Debug, Clone, Copy, Default)]
pub struct AmStepCounts {
    pub nl_u: usize,
    pub nl_c: usize,
    pub lin_u: usize,
    pub lin_c: usize,
}

/// One outer iteration: coupled residual after both half-steps, iterate
/// changes, the energy after each half-step, and the audit traces of the
/// two subproblem solves.
#[derive(Debug, Clone)]
pub struct AmOuterRecord {
    pub outer: usize,
    pub res_norm: f64,
    pub dc_inf: f64,
    pub du_inf: f64,
    pub psi_after_u: f64,
    pub psi_after_c: f64,
    pub counts: AmStepCounts,
    pub trace_u: SolveTrace,
    pub trace_c: SolveTrace,
}

#[derive(Debug, Default)]
pub struct AmStats {
    pub outer: usize,
    pub nl_u: usize,
    pub nl_c: usize,
    pub lin_u: usize,
    pub lin_c: usize,
    pub res_norm0: f64,
    pub res_norm: f64,
    pub records: Vec<AmOuterRecord>,
}

/// Everything observed during one sweep.
#[derive(Debug)]
pub struct AmSweep {
    pub counts: AmStepCounts,
    pub psi_after_u: f64,
    pub psi_after_c: f64,
    pub trace_u: SolveTrace,
    pub trace_c: SolveTrace,
}

/// One alternate-minimization sweep: displacement solve at frozen `c`,
/// then phase-field solve at the updated `u`. Returns the new state plus
/// the work counts, energies after each half-step, and solve traces.
pub fn am_step(
    model: &FractureModel,
    state: &SystemState,
    newton: &NewtonConfig,
) -> Result<(SystemState, AmSweep), AmError> {
    let u_out = newton_solve(&DisplacementProblem { model, base: state }, &state.u, newton)
        .map_err(AmError::Displacement)?;
    let mut mid = state.clone();
    mid.u = u_out.x;
    let psi_after_u = model.total_energy(&mid).map_err(AmError::Model)?.total;

    let c_out = newton_solve(&PhaseProblem { model, base: &mid }, &mid.c, newton)
        .map_err(AmError::Phase)?;
    let mut next = mid;
    next.c = c_out.x;
    let psi_after_c = model.total_energy(&next).map_err(AmError::Model)?.total;

    let sweep = AmSweep {
        counts: AmStepCounts {
            nl_u: u_out.iters,
            nl_c: c_out.iters,
            lin_u: u_out.linear_iters,
            lin_c: c_out.linear_iters,
        },
        psi_after_u,
        psi_after_c,
        trace_u: u_out.solve_trace(),
        trace_c: c_out.solve_trace(),
    };
    Ok((next, sweep))
}

/// Runs alternate minimization from `state0` until convergence.
/// Residual-based variants stop at a fresh coupled residual below
/// `max(eps_abs_glob, eps_rel_glob * ||F(state0)||)`; the staggered
/// variant stops when both iterate changes drop below their max-norm
/// tolerances. A state already below the absolute target takes zero
/// outer iterations.
pub fn am_solve(
    model: &FractureModel,
    state0: &SystemState,
    cfg: &AmConfig,
) -> Result<(SystemState, AmStats), AmError> {
    let r0 = norm2(&model.residual(state0).map_err(AmError::Model)?);
    let target = cfg.eps_abs_glob.max(cfg.eps_rel_glob * r0);
    let mut stats = AmStats { res_norm0: r0, res_norm: r0, ..AmStats::default() };
    if r0 <= target {
        return Ok((state0.clone(), stats));
    }

    let mut s = state0.clone();
    loop {
        if stats.outer >= cfg.max_outer_iters {
            return Err(AmError::MaxOuterIters { outer: stats.outer, res_norm: stats.res_norm });
        }
        let (next, sweep) = am_step(model, &s, &cfg.newton)?;
        let dc_inf = next
            .c
            .iter()
            .zip(&s.c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let du_inf = next
            .u
            .iter()
            .zip(&s.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        s = next;
        let res_norm = norm2(&model.residual(&s).map_err(AmError::Model)?);

        stats.outer += 1;
        stats.nl_u += sweep.counts.nl_u;
        stats.nl_c += sweep.counts.nl_c;
        stats.lin_u += sweep.counts.lin_u;
        stats.lin_c += sweep.counts.lin_c;
        stats.res_norm = res_norm;
        stats.records.push(AmOuterRecord {
            outer: stats.outer,
            res_norm,
            dc_inf,
            du_inf,
            psi_after_u: sweep.psi_after_u,
            psi_after_c: sweep.psi_after_c,
            counts: sweep.counts,
            trace_u: sweep.trace_u,
            trace_c: sweep.trace_c,
        });

        let done = match cfg.variant {
            AmVariant::St => dc_inf <= cfg.eps_c_diff && du_inf <= cfg.disp_diff_tol,
            _ => res_norm <= target,
        };
        if done {
            return Ok((s, stats));
        }
    }
}
