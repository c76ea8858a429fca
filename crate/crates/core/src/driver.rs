//! Benchmark definitions, the quasi-static loading loop, and reporting.
//!
//! Five standard plane-strain fracture benchmarks are built here as
//! parameterized geometries: a cracked plate under tension, the same
//! plate under shear, a three-point bending beam with a bottom notch, an
//! L-shaped panel, and an asymmetrically notched beam with three holes.
//! Each benchmark prescribes a displacement ramp `u_D(t) = t * rate` on
//! tagged dofs and a pseudo-time schedule of (step size, step count)
//! phases. The loading loop warm-starts every step from the previous
//! converged state, updates the phase-field history after each accepted
//! step, and records energies and iteration counts per step. Reports are
//! written as CSV; fields can be dumped as legacy VTK. [`cli_main`]
//! exposes all of it as a command line.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::am::{am_solve, AmConfig, AmVariant};
use crate::fem::FemError;
use crate::mesh::{graded_axis, MeshError, QuadMesh};
use crate::model::{Energies, FractureModel, MaterialParams, ModelError, SystemState};
use crate::linalg::PrecondChoice;
use crate::nonlinear::NewtonVariant;
use crate::spin::{spin_solve, SpinConfig, SpinMode};

/// Preconditioner the driver configures for every iterative linear solve.
///
/// The library default is plain Jacobi, which is fine for the small direct
/// subproblem solves but makes the SPIN inner applications grind at
/// benchmark resolutions (and the resulting application noise can break
/// the global Krylov basis). The benchmark runs therefore opt into the
/// multilevel aggregation preconditioner; iteration counts of the outer
/// nonlinear methods do not depend on this choice.
const DRIVER_PRECOND: PrecondChoice = PrecondChoice::Aggregation { levels: 12 };

/// Errors of the benchmark driver.
#[derive(Debug)]
pub enum DriverError {
    Mesh(MeshError),
    Model(ModelError),
    Fem(FemError),
    Io(std::io::Error),
    BadArgs(String),
    /// A solver failed at one loading step; the report holds every step
    /// accepted before the failure.
    Solve { step: usize, time: f64, message: String, partial: Box<RunReport> },
}

impl fmt::Display for DriverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverError::Mesh(e) => write!(f, "mesh: {e}"),
            DriverError::Model(e) => write!(f, "model: {e}"),
            DriverError::Fem(e) => write!(f, "fem: {e}"),
            DriverError::Io(e) => write!(f, "io: {e}"),
            DriverError::BadArgs(m) => write!(f, "bad arguments: {m}"),
            DriverError::Solve { step, time, message, partial } => write!(
                f,
                "solver failed at step {step} (t = {time:.6e}) after {} accepted steps: {message}",
                partial.records.len()
            ),
        }
    }
}

impl std::error::Error for DriverError {}

impl From<MeshError> for DriverError {
    fn from(e: MeshError) -> Self {
        DriverError::Mesh(e)
    }
}
impl From<ModelError> for DriverError {
    fn from(e: ModelError) -> Self {
        DriverError::Model(e)
    }
}
impl From<FemError> for DriverError {
    fn from(e: FemError) -> Self {
        DriverError::Fem(e)
    }
}
impl From<std::io::Error> for DriverError {
    fn from(e: std::io::Error) -> Self {
        DriverError::Io(e)
    }
}

// ---------------------------------------------------------------------------
// Solver selection
// ---------------------------------------------------------------------------

/// One of the six solver configurations the driver can run.
#[derive(Debug, Clone)]
pub enum SolverConfig {
    Am(AmConfig),
    Spin(SpinConfig),
}

impl SolverConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SolverConfig::Am(cfg) => match cfg.variant {
                AmVariant::Nd => "am-nd",
                AmVariant::Nk => "am-nk",
                AmVariant::Ink => "am-ink",
                AmVariant::St => "am-st",
            },
            SolverConfig::Spin(cfg) => match cfg.mode {
                SpinMode::Additive => "aspin",
                SpinMode::Multiplicative => "mspin",
            },
        }
    }

    /// Solves one loading step, returning the converged state and the
    /// iteration counts in report layout.
    fn solve(&self, model: &FractureModel, state: &SystemState) -> Result<(SystemState, StepCounts), String> {
        match self {
            SolverConfig::Am(cfg) => match am_solve(model, state, cfg) {
                Ok((next, stats)) => Ok((
                    next,
                    StepCounts {
                        nl_global: stats.outer,
                        nl_u: stats.nl_u,
                        nl_c: stats.nl_c,
                        lin_u: stats.lin_u,
                        lin_c: stats.lin_c,
                        krylov_global: 0,
                    },
                )),
                Err(e) => Err(e.to_string()),
            },
            SolverConfig::Spin(cfg) => match spin_solve(model, state, cfg) {
                Ok((next, stats)) => Ok((
                    next,
                    StepCounts {
                        nl_global: stats.outer,
                        nl_u: stats.nl_u,
                        nl_c: stats.nl_c,
                        lin_u: stats.lin_u,
                        lin_c: stats.lin_c,
                        krylov_global: stats.global_krylov_iters,
                    },
                )),
                Err(e) => Err(e.to_string()),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Benchmark specifications
// ---------------------------------------------------------------------------

/// A built benchmark: discretized model, initial state, and the
/// displacement ramp program.
pub struct BuiltCase {
    pub model: FractureModel,
    pub state: SystemState,
    /// Dirichlet dofs driven as `value = t * rate`; zero-valued (fixed)
    /// constraints are already installed in the model's dof map.
    pub ramp: Vec<(usize, f64)>,
    /// Effective regularization length of the built mesh (twice the
    /// finest band spacing after lattice snapping).
    pub l_s_eff: f64,
}

/// Definition of one benchmark: material parameters, loading schedule,
/// and a geometry builder parameterized by a resolution scale.
pub struct BenchmarkSpec {
    pub name: &'static str,
    pub lambda: f64,
    pub mu: f64,
    pub g_c: f64,
    /// Regularization length at the reference scale 1.
    pub l_s: f64,
    pub tau_irr: f64,
    /// Loading phases `(step size, step count)`.
    pub schedule: Vec<(f64, usize)>,
    /// Mesh resolution scale used when the caller does not override it.
    pub default_scale: f64,
    build: fn(&BenchmarkSpec, f64) -> Result<BuiltCase, DriverError>,
}

impl BenchmarkSpec {
    /// Material parameters at the reference scale (the penalty
    /// coefficient is always derived, never set by hand).
    pub fn params(&self) -> Result<MaterialParams, ModelError> {
        MaterialParams::new(self.lambda, self.mu, self.g_c, self.l_s, self.tau_irr)
    }

    /// Builds mesh, model, and loading program at resolution `scale`
    /// (1 = reference; larger is finer). The regularization length is
    /// scaled as `l_s / scale` and kept at twice the finest band
    /// spacing.
    pub fn build(&self, scale: f64) -> Result<BuiltCase, DriverError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(DriverError::BadArgs(format!("mesh scale {scale} must be positive")));
        }
        (self.build)(self, scale)
    }

    pub fn total_steps(&self) -> usize {
        self.schedule.iter().map(|&(_, n)| n).sum()
    }

    /// Pseudo-times of the first `limit` steps (all when `limit` is
    /// `None`), strictly increasing from the first step on.
    pub fn times(&self, limit: Option<usize>) -> Vec<f64> {
        let cap = limit.unwrap_or(usize::MAX);
        let mut ts = Vec::new();
        let mut t = 0.0;
        for &(dt, n) in &self.schedule {
            for _ in 0..n {
                if ts.len() >= cap {
                    return ts;
                }
                t += dt;
                ts.push(t);
            }
        }
        ts
    }
}

/// The five standard benchmarks.
pub fn benchmark_specs() -> Vec<BenchmarkSpec> {
    vec![
        BenchmarkSpec {
            name: "tension",
            lambda: 121.15,
            mu: 80.77,
            g_c: 2.7e-3,
            l_s: 0.003,
            tau_irr: 1e-2,
            schedule: vec![(5e-5, 130)],
            default_scale: 1.0,
            build: build_tension,
        },
        BenchmarkSpec {
            name: "shear",
            lambda: 121.15,
            mu: 80.77,
            g_c: 2.7e-3,
            l_s: 0.006,
            tau_irr: 1e-2,
            schedule: vec![(1e-3, 8), (7.5e-5, 160)],
            default_scale: 0.5,
            build: build_shear,
        },
        BenchmarkSpec {
            name: "three_point_bending",
            lambda: 12.0,
            mu: 8.0,
            g_c: 5.4e-4,
            l_s: 0.01,
            tau_irr: 1e-2,
            schedule: vec![(1e-3, 100)],
            default_scale: 1.0,
            build: build_bending,
        },
        BenchmarkSpec {
            name: "l_shape",
            lambda: 6.16,
            mu: 10.95,
            g_c: 8.9e-5,
            l_s: 2.0,
            tau_irr: 1e-2,
            schedule: vec![(1e-2, 20), (1e-3, 300)],
            default_scale: 1.0,
            build: build_l_shape,
        },
        BenchmarkSpec {
            name: "asym_notched_beam",
            lambda: 12.0,
            mu: 8.0,
            g_c: 1e-3,
            l_s: 0.06,
            tau_irr: 1e-2,
            schedule: vec![(1e-3, 160), (1e-4, 300)],
            default_scale: 0.5,
            build: build_asym_beam,
        },
    ]
}

/// Looks a benchmark up by its CLI name.
pub fn find_benchmark(name: &str) -> Option<BenchmarkSpec> {
    benchmark_specs().into_iter().find(|s| s.name == name)
}

// ---------------------------------------------------------------------------
// Geometry builders
// ---------------------------------------------------------------------------

/// Uniform fine band `[lo, hi]` whose lattice contains `anchor` exactly:
/// the spacing is `h_nom` snapped so that `anchor - lo` is a whole number
/// of cells, and `hi` is pulled back to the nearest lattice point at or
/// below `hi_target`. Keeping geometric anchors (seam tips, re-entrant
/// corners) on the lattice lets seams and cutouts align with element
/// edges at every resolution.
fn anchored_band(lo_target: f64, anchor: f64, hi_target: f64, h_nom: f64) -> (f64, f64, f64) {
    let j = ((anchor - lo_target) / h_nom).round().max(0.0);
    let u = if j > 0.0 { (anchor - lo_target) / j } else { h_nom };
    let i = ((hi_target - anchor) / u + 1e-9).floor().max(1.0);
    let mut lo = anchor - j * u;
    if lo.abs() < 1e-12 * (1.0 + anchor.abs()) {
        lo = 0.0;
    }
    (lo, anchor + i * u, u)
}

/// Node selection tolerance for boundary tagging.
const SEL_TOL: f64 = 1e-9;

fn constrain_zero(model: &mut FractureModel, nodes: &[usize], comps: &[usize]) -> Result<(), DriverError> {
    for &n in nodes {
        for &c in comps {
            let dof = model.dofmap.u_dof(n, c);
            model.dofmap.constrain(dof, 0.0)?;
        }
    }
    Ok(())
}

/// Cracked unit plate pulled upward: seam from the left edge to the
/// center at mid-height, bottom edge clamped, top edge sheared-free
/// laterally and ramped vertically at rate +1.
fn build_tension(spec: &BenchmarkSpec, scale: f64) -> Result<BuiltCase, DriverError> {
    let h = 0.5 * spec.l_s / scale;
    let (xlo, xhi, hx) = anchored_band(0.35, 0.5, 0.96, 2.0 * h);
    let (ylo, yhi, hy) = anchored_band(0.5 - 8.0 * h, 0.5, 0.5 + 8.0 * h, h);
    let xs = graded_axis(1.0, 0.05, Some((xlo, xhi, hx)))?;
    let ys = graded_axis(1.0, 0.05, Some((ylo, yhi, hy)))?;
    let mesh = QuadMesh::from_tensor_coords(&xs, &ys)?.cut_seam([0.0, 0.5], [0.5, 0.5], "seam")?;

    let l_s_eff = 2.0 * hy.min(hx);
    let params = MaterialParams::new(spec.lambda, spec.mu, spec.g_c, l_s_eff, spec.tau_irr)?;
    let bottom = mesh.select_nodes(|_, y| y.abs() < SEL_TOL);
    let top = mesh.select_nodes(|_, y| (y - 1.0).abs() < SEL_TOL);
    let mut model = FractureModel::new(mesh, params)?;
    constrain_zero(&mut model, &bottom, &[0, 1])?;
    constrain_zero(&mut model, &top, &[0])?;
    let mut ramp = Vec::new();
    for &n in &top {
        let dof = model.dofmap.u_dof(n, 1);
        model.dofmap.constrain(dof, 0.0)?;
        ramp.push((dof, 1.0));
    }
    let state = SystemState::zero(model.n_nodes());
    Ok(BuiltCase { model, state, ramp, l_s_eff })
}

/// Cracked unit plate sheared sideways: same seam as the tension plate,
/// bottom edge clamped, top edge ramped horizontally at rate +1 with
/// zero vertical motion.
fn build_shear(spec: &BenchmarkSpec, scale: f64) -> Result<BuiltCase, DriverError> {
    let h = 0.5 * spec.l_s / scale;
    let (xlo, xhi, hx) = anchored_band(0.35, 0.5, 0.96, h);
    let (ylo, yhi, hy) = anchored_band(0.0, 0.5, 0.56, h);
    let xs = graded_axis(1.0, 0.05, Some((xlo, xhi, hx)))?;
    let ys = graded_axis(1.0, 0.05, Some((ylo, yhi, hy)))?;
    let mesh = QuadMesh::from_tensor_coords(&xs, &ys)?.cut_seam([0.0, 0.5], [0.5, 0.5], "seam")?;

    let l_s_eff = 2.0 * hy.min(hx);
    let params = MaterialParams::new(spec.lambda, spec.mu, spec.g_c, l_s_eff, spec.tau_irr)?;
    let bottom = mesh.select_nodes(|_, y| y.abs() < SEL_TOL);
    let top = mesh.select_nodes(|_, y| (y - 1.0).abs() < SEL_TOL);
    let mut model = FractureModel::new(mesh, params)?;
    constrain_zero(&mut model, &bottom, &[0, 1])?;
    constrain_zero(&mut model, &top, &[1])?;
    let mut ramp = Vec::new();
    for &n in &top {
        let dof = model.dofmap.u_dof(n, 0);
        model.dofmap.constrain(dof, 0.0)?;
        ramp.push((dof, 1.0));
    }
    let state = SystemState::zero(model.n_nodes());
    Ok(BuiltCase { model, state, ramp, l_s_eff })
}

/// Three-point bending beam 8 x 2 with a bottom notch at midspan from
/// (4, 0) to (4, 0.5), pin supports near the bottom corners, and the
/// top-center node pushed down at rate -1.
fn build_bending(spec: &BenchmarkSpec, scale: f64) -> Result<BuiltCase, DriverError> {
    let h = 0.5 * spec.l_s / scale;
    let (xlo, xhi, hx) = anchored_band(3.8, 4.0, 4.2, h);
    let xs = graded_axis(8.0, 0.2, Some((xlo, xhi, hx)))?;
    // Uniform rows with the notch tip height 0.5 = height/4 on the lattice.
    let n_rows = 4 * ((2.0 / (5.0 * h) / 4.0).round().max(1.0) as usize);
    let ys = graded_axis(2.0, 2.0 / n_rows as f64, None)?;
    let mesh = QuadMesh::from_tensor_coords(&xs, &ys)?.cut_seam([4.0, 0.0], [4.0, 0.5], "notch")?;

    let l_s_eff = 2.0 * hx.min(2.0 / n_rows as f64);
    let params = MaterialParams::new(spec.lambda, spec.mu, spec.g_c, l_s_eff, spec.tau_irr)?;
    let pin_l = mesh.nearest_node(0.25, 0.0);
    let pin_r = mesh.nearest_node(7.75, 0.0);
    let load = mesh.nearest_node(4.0, 2.0);
    let mut model = FractureModel::new(mesh, params)?;
    constrain_zero(&mut model, &[pin_l], &[0, 1])?;
    constrain_zero(&mut model, &[pin_r], &[1])?;
    let dof = model.dofmap.u_dof(load, 1);
    model.dofmap.constrain(dof, 0.0)?;
    let ramp = vec![(dof, -1.0)];
    let state = SystemState::zero(model.n_nodes());
    Ok(BuiltCase { model, state, ramp, l_s_eff })
}

/// L-shaped panel: a 500 x 500 square with the lower-right 250 x 250
/// quadrant removed, bottom edge clamped, and one node on the exposed
/// ledge near (470, 250) pulled upward at rate +1.
fn build_l_shape(spec: &BenchmarkSpec, scale: f64) -> Result<BuiltCase, DriverError> {
    let h = 0.5 * spec.l_s / scale;
    let (xlo, xhi, hx) = anchored_band(60.0, 250.0, 260.0, 2.0 * h);
    let (ylo, yhi, hy) = anchored_band(230.0, 250.0, 300.0, h);
    let xs = graded_axis(500.0, 12.5, Some((xlo, xhi, hx)))?;
    let ys = graded_axis(500.0, 12.5, Some((ylo, yhi, hy)))?;
    let mesh = QuadMesh::from_tensor_coords(&xs, &ys)?
        .remove_elements(|x, y| x > 250.0 && y < 250.0)?;

    let l_s_eff = 2.0 * hy.min(hx);
    let params = MaterialParams::new(spec.lambda, spec.mu, spec.g_c, l_s_eff, spec.tau_irr)?;
    let bottom = mesh.select_nodes(|_, y| y.abs() < SEL_TOL * 500.0);
    let load = mesh.nearest_node(470.0, 250.0);
    let mut model = FractureModel::new(mesh, params)?;
    constrain_zero(&mut model, &bottom, &[0, 1])?;
    let dof = model.dofmap.u_dof(load, 1);
    model.dofmap.constrain(dof, 0.0)?;
    let ramp = vec![(dof, 1.0)];
    let state = SystemState::zero(model.n_nodes());
    Ok(BuiltCase { model, state, ramp, l_s_eff })
}

/// Asymmetrically notched beam 20 x 8: bottom notch from (6, 0) to
/// (6, 1), three holes of radius 0.25 centered at x = 5, pin supports
/// near the bottom ends, and the top-center node pushed down at rate -1.
fn build_asym_beam(spec: &BenchmarkSpec, scale: f64) -> Result<BuiltCase, DriverError> {
    let h = 0.5 * spec.l_s / scale;
    let (xlo, xhi, hx) = anchored_band(4.2, 6.0, 6.6, h);
    let (ylo, yhi, hy) = anchored_band(0.0, 1.0, 3.6, h);
    let xs = graded_axis(20.0, 0.6, Some((xlo, xhi, hx)))?;
    let ys = graded_axis(8.0, 0.48, Some((ylo, yhi, hy)))?;
    let holes: [(f64, f64); 3] = [(5.0, 1.25), (5.0, 2.75), (5.0, 4.25)];
    let r = 0.25;
    let mesh = QuadMesh::from_tensor_coords(&xs, &ys)?
        .remove_elements(|x, y| {
            holes
                .iter()
                .any(|&(cx, cy)| (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r)
        })?
        .cut_seam([6.0, 0.0], [6.0, 1.0], "notch")?;

    let l_s_eff = 2.0 * hy.min(hx);
    let params = MaterialParams::new(spec.lambda, spec.mu, spec.g_c, l_s_eff, spec.tau_irr)?;
    let pin_l = mesh.nearest_node(1.0, 0.0);
    let pin_r = mesh.nearest_node(19.0, 0.0);
    let load = mesh.nearest_node(10.0, 8.0);
    let mut model = FractureModel::new(mesh, params)?;
    constrain_zero(&mut model, &[pin_l], &[0, 1])?;
    constrain_zero(&mut model, &[pin_r], &[1])?;
    let dof = model.dofmap.u_dof(load, 1);
    model.dofmap.constrain(dof, 0.0)?;
    let ramp = vec![(dof, -1.0)];
    let state = SystemState::zero(model.n_nodes());
    Ok(BuiltCase { model, state, ramp, l_s_eff })
}

// ---------------------------------------------------------------------------
// Loading loop
// ---------------------------------------------------------------------------

/// Iteration counters of one loading step in report layout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounts {
    pub nl_global: usize,
    pub nl_u: usize,
    pub nl_c: usize,
    pub lin_u: usize,
    pub lin_c: usize,
    pub krylov_global: usize,
}

/// One accepted loading step.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// 1-based step index.
    pub step: usize,
    pub time: f64,
    pub energies: Energies,
    pub counts: StepCounts,
    /// Max over nodes of (previous phase - new phase); positive values
    /// are reversals, bounded by the irreversibility tolerance.
    pub reverse_violation: f64,
    pub c_min: f64,
    pub c_max: f64,
}

/// Full result of a benchmark run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub benchmark: String,
    pub solver: String,
    pub n_nodes: usize,
    pub n_dofs: usize,
    pub l_s_eff: f64,
    pub records: Vec<RunRecord>,
    pub wall_time: f64,
}

/// Options of one run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scale: f64,
    /// Truncates the schedule to this many steps.
    pub max_steps: Option<usize>,
    /// Writes a VTK snapshot every this many steps (0 = never).
    pub vtk_every: usize,
    /// Directory for VTK snapshots (only used when `vtk_every > 0`).
    pub out_dir: Option<PathBuf>,
    /// Prints one progress line per step when set.
    pub verbose: bool,
}

impl RunOptions {
    pub fn new(scale: f64) -> Self {
        RunOptions { scale, max_steps: None, vtk_every: 0, out_dir: None, verbose: false }
    }
}

/// Runs one benchmark under one solver configuration.
///
/// Every step sets the ramped Dirichlet values to `t * rate`, warm-starts
/// the solver from the previous converged state, updates the phase-field
/// history, and records energies and iteration counts. A solver failure
/// aborts with the partial report embedded in the error.
pub fn run_benchmark(
    spec: &BenchmarkSpec,
    solver: &SolverConfig,
    opts: &RunOptions,
) -> Result<RunReport, DriverError> {
    let start = Instant::now();
    let built = spec.build(opts.scale)?;
    let BuiltCase { mut model, mut state, ramp, l_s_eff } = built;
    let mut report = RunReport {
        benchmark: spec.name.to_string(),
        solver: solver.name().to_string(),
        n_nodes: model.n_nodes(),
        n_dofs: model.n_dofs(),
        l_s_eff,
        records: Vec::new(),
        wall_time: 0.0,
    };
    if let (Some(dir), true) = (&opts.out_dir, opts.vtk_every > 0) {
        fs::create_dir_all(dir)?;
    }

    for (i, t) in spec.times(opts.max_steps).into_iter().enumerate() {
        let step = i + 1;
        for &(dof, rate) in &ramp {
            model.dofmap.constrain(dof, t * rate)?;
            state.u[dof] = t * rate;
        }
        state.t = t;

        let (next, counts) = match solver.solve(&model, &state) {
            Ok(ok) => ok,
            Err(message) => {
                report.wall_time = start.elapsed().as_secs_f64();
                return Err(DriverError::Solve {
                    step,
                    time: t,
                    message,
                    partial: Box::new(report),
                });
            }
        };
        state = next;
        state.t = t;

        let energies = model.total_energy(&state)?;
        let reverse_violation = state
            .c_prev
            .iter()
            .zip(&state.c)
            .map(|(p, c)| p - c)
            .fold(f64::NEG_INFINITY, f64::max);
        let (c_min, c_max) = state
            .c
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
        state.c_prev = state.c.clone();

        report.records.push(RunRecord {
            step,
            time: t,
            energies,
            counts,
            reverse_violation,
            c_min,
            c_max,
        });
        if opts.verbose {
            println!(
                "step {step:4} t {t:.6e} psi {:.6e} nl {:3} c_max {:.3}",
                energies.total, counts.nl_global, c_max
            );
        }

        if opts.vtk_every > 0 && step % opts.vtk_every == 0 {
            if let Some(dir) = &opts.out_dir {
                let path = dir.join(format!(
                    "{}_{}_step{step:05}.vtk",
                    report.benchmark, report.solver
                ));
                write_vtk(&model.mesh, &state, &path)?;
            }
        }
    }

    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

const CSV_HEADER: &str =
    "step,time,E_elastic,E_fracture,E_penalty,Psi,nl_global,nl_u,nl_c,lin_u,lin_c,krylov_global";

/// Writes the report as CSV with full float precision (17 significant
/// digits, enough to round-trip every value exactly).
pub fn write_csv(report: &RunReport, path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for r in &report.records {
        writeln!(
            f,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{},{}",
            r.step,
            r.time,
            r.energies.elastic,
            r.energies.fracture,
            r.energies.penalty,
            r.energies.total,
            r.counts.nl_global,
            r.counts.nl_u,
            r.counts.nl_c,
            r.counts.lin_u,
            r.counts.lin_c,
            r.counts.krylov_global,
        )?;
    }
    Ok(())
}

/// Writes mesh and fields as legacy ASCII VTK: points, quad cells, the
/// phase field as a point scalar `c`, and the displacement as a point
/// vector `u`.
pub fn write_vtk(mesh: &QuadMesh, state: &SystemState, path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let n = mesh.n_nodes();
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "# vtk DataFile Version 3.0")?;
    writeln!(f, "phase-field fracture state")?;
    writeln!(f, "ASCII")?;
    writeln!(f, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(f, "POINTS {n} double")?;
    for c in &mesh.node_coords {
        writeln!(f, "{:.9e} {:.9e} 0.0", c[0], c[1])?;
    }
    writeln!(f, "CELLS {} {}", mesh.n_elements(), 5 * mesh.n_elements())?;
    for el in &mesh.elements {
        writeln!(f, "4 {} {} {} {}", el[0], el[1], el[2], el[3])?;
    }
    writeln!(f, "CELL_TYPES {}", mesh.n_elements())?;
    for _ in 0..mesh.n_elements() {
        writeln!(f, "9")?;
    }
    writeln!(f, "POINT_DATA {n}")?;
    writeln!(f, "SCALARS c double 1")?;
    writeln!(f, "LOOKUP_TABLE default")?;
    for &c in &state.c {
        writeln!(f, "{c:.9e}")?;
    }
    writeln!(f, "VECTORS u double")?;
    for i in 0..n {
        writeln!(f, "{:.9e} {:.9e} 0.0", state.u[2 * i], state.u[2 * i + 1])?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

/// Solver-related command line options with their defaults.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub choice: Option<&'static str>,
    /// Absolute residual tolerance of the outer iteration.
    pub atol: f64,
    /// Relative residual tolerance of the outer iteration.
    pub rtol: f64,
    /// Correction tolerance; parsed for compatibility, no stop rule uses it.
    pub stol: f64,
    pub max_it: usize,
    /// Staggered stop: max-norm tolerance on the phase update.
    pub c_diff_tol: f64,
    /// Staggered stop: max-norm tolerance on the displacement update.
    pub disp_diff_tol: f64,
    /// Subproblem Newton solves its corrections inexactly (Krylov with a
    /// residual-proportional forcing) instead of to fixed tolerance.
    pub inexact_solve: bool,
    /// Subproblem Newton uses the sparse direct solver.
    pub direct_solver: bool,
    /// Field-split preconditioner acts additively (both fields solved
    /// from the same iterate) rather than multiplicatively.
    pub spin_additive: bool,
    /// Relative tolerance of the linear solves inside each
    /// preconditioner application.
    pub action_rtol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            choice: None,
            atol: 1e-7,
            rtol: 1e-6,
            stol: 1e-8,
            max_it: 50_000,
            c_diff_tol: 1e-4,
            disp_diff_tol: 1e-12,
            inexact_solve: true,
            direct_solver: false,
            spin_additive: true,
            action_rtol: 1e-4,
        }
    }
}

impl SolverOptions {
    fn newton_variant(&self) -> NewtonVariant {
        if self.direct_solver {
            NewtonVariant::Nd
        } else if self.inexact_solve {
            NewtonVariant::Ink
        } else {
            NewtonVariant::Nk
        }
    }

    /// Materializes the solver configuration these options describe.
    pub fn build(&self) -> Result<SolverConfig, DriverError> {
        let name = self.choice.unwrap_or(if self.spin_additive { "aspin" } else { "mspin" });
        let cfg = match name {
            "am-nd" | "am-nk" | "am-ink" | "am-st" => {
                let variant = match name {
                    "am-nd" => AmVariant::Nd,
                    "am-nk" => AmVariant::Nk,
                    "am-ink" => AmVariant::Ink,
                    _ => AmVariant::St,
                };
                let mut cfg = AmConfig::new(variant);
                cfg.eps_abs_glob = self.atol;
                cfg.eps_rel_glob = self.rtol;
                cfg.eps_c_diff = self.c_diff_tol;
                cfg.disp_diff_tol = self.disp_diff_tol;
                cfg.max_outer_iters = self.max_it;
                cfg.newton.preconditioner = DRIVER_PRECOND;
                SolverConfig::Am(cfg)
            }
            "aspin" | "mspin" => {
                let mode = if name == "aspin" { SpinMode::Additive } else { SpinMode::Multiplicative };
                let mut cfg = SpinConfig::new(mode);
                cfg.eps_abs_glob = self.atol;
                cfg.eps_rel_glob = self.rtol;
                cfg.eps_app_lin = self.action_rtol;
                cfg.max_outer_iters = self.max_it;
                cfg.newton.variant = self.newton_variant();
                cfg.newton.preconditioner = DRIVER_PRECOND;
                cfg.preconditioner = DRIVER_PRECOND;
                SolverConfig::Spin(cfg)
            }
            other => return Err(DriverError::BadArgs(format!("unknown solver '{other}'"))),
        };
        Ok(cfg)
    }
}

const SOLVER_NAMES: [&str; 6] = ["am-nd", "am-nk", "am-ink", "am-st", "aspin", "mspin"];

fn usage() -> String {
    let benches: Vec<&str> = benchmark_specs().iter().map(|s| s.name).collect();
    format!(
        "usage: fissure --benchmark <{}>\n\
         \x20  [--solver <{}>] [--mesh-scale <f>] [--out <dir>]\n\
         \x20  [--steps <n>] [--vtk-every <n>]\n\
         \x20  [-snes_atol <f>] [-snes_rtol <f>] [-snes_stol <f>] [-snes_max_it <n>]\n\
         \x20  [-snes_am_c_diff_tol <f>] [-snes_am_disp_diff_tol <f>]\n\
         \x20  [-snes_am_inexact_solve <bool>] [-snes_am_direct_solver <bool>]\n\
         \x20  [-snes_spin_additive <bool>] [-snes_spin_action_rtol <f>]",
        benches.join("|"),
        SOLVER_NAMES.join("|"),
    )
}

/// Parsed command line.
#[derive(Debug, Clone)]
pub struct CliArgs {
    pub benchmark: String,
    pub solver: SolverOptions,
    pub mesh_scale: Option<f64>,
    pub out_dir: PathBuf,
    pub steps: Option<usize>,
    pub vtk_every: usize,
}

/// Parses the argument list (without the program name).
pub fn parse_args<I: IntoIterator<Item = String>>(args: I) -> Result<CliArgs, String> {
    let mut it = args.into_iter();
    let mut benchmark: Option<String> = None;
    let mut solver = SolverOptions::default();
    let mut mesh_scale = None;
    let mut out_dir = PathBuf::from("out");
    let mut steps = None;
    let mut vtk_every = 0usize;

    fn value(it: &mut impl Iterator<Item = String>, flag: &str) -> Result<String, String> {
        it.next().ok_or_else(|| format!("flag {flag} needs a value"))
    }
    fn float(it: &mut impl Iterator<Item = String>, flag: &str) -> Result<f64, String> {
        let v = value(it, flag)?;
        v.parse().map_err(|_| format!("flag {flag}: '{v}' is not a number"))
    }
    fn count(it: &mut impl Iterator<Item = String>, flag: &str) -> Result<usize, String> {
        let v = value(it, flag)?;
        v.parse().map_err(|_| format!("flag {flag}: '{v}' is not a count"))
    }
    fn boolean(it: &mut impl Iterator<Item = String>, flag: &str) -> Result<bool, String> {
        let v = value(it, flag)?;
        match v.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(format!("flag {flag}: '{v}' is not a boolean")),
        }
    }

    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--benchmark" => {
                let v = value(&mut it, &flag)?;
                if find_benchmark(&v).is_none() {
                    return Err(format!("unknown benchmark '{v}'"));
                }
                benchmark = Some(v);
            }
            "--solver" => {
                let v = value(&mut it, &flag)?;
                match SOLVER_NAMES.iter().find(|&&n| n == v) {
                    Some(&n) => solver.choice = Some(n),
                    None => return Err(format!("unknown solver '{v}'")),
                }
            }
            "--mesh-scale" => mesh_scale = Some(float(&mut it, &flag)?),
            "--out" => out_dir = PathBuf::from(value(&mut it, &flag)?),
            "--steps" => steps = Some(count(&mut it, &flag)?),
            "--vtk-every" => vtk_every = count(&mut it, &flag)?,
            "-snes_atol" => solver.atol = float(&mut it, &flag)?,
            "-snes_rtol" => solver.rtol = float(&mut it, &flag)?,
            "-snes_stol" => solver.stol = float(&mut it, &flag)?,
            "-snes_max_it" => solver.max_it = count(&mut it, &flag)?,
            "-snes_am_c_diff_tol" => solver.c_diff_tol = float(&mut it, &flag)?,
            "-snes_am_disp_diff_tol" => solver.disp_diff_tol = float(&mut it, &flag)?,
            "-snes_am_inexact_solve" => solver.inexact_solve = boolean(&mut it, &flag)?,
            "-snes_am_direct_solver" => solver.direct_solver = boolean(&mut it, &flag)?,
            "-snes_spin_additive" => solver.spin_additive = boolean(&mut it, &flag)?,
            "-snes_spin_action_rtol" => solver.action_rtol = float(&mut it, &flag)?,
            other => return Err(format!("unknown flag '{other}'")),
        }
    }

    let benchmark = benchmark.ok_or_else(|| "missing required flag --benchmark".to_string())?;
    Ok(CliArgs { benchmark, solver, mesh_scale, out_dir, steps, vtk_every })
}

/// Command line entry point; returns the process exit code (0 success,
/// 1 solver failure, 2 usage error).
pub fn cli_main<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let cli = match parse_args(args) {
        Ok(cli) => cli,
        Err(msg) => {
            eprintln!("error: {msg}");
            eprintln!("{}", usage());
            return 2;
        }
    };
    let spec = find_benchmark(&cli.benchmark).expect("benchmark validated during parsing");
    let solver = match cli.solver.build() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", usage());
            return 2;
        }
    };
    let mut opts = RunOptions::new(cli.mesh_scale.unwrap_or(spec.default_scale));
    opts.max_steps = cli.steps;
    opts.vtk_every = cli.vtk_every;
    opts.out_dir = Some(cli.out_dir.clone());
    opts.verbose = true;

    let csv_path = cli.out_dir.join(format!("{}_{}.csv", spec.name, solver.name()));
    match run_benchmark(&spec, &solver, &opts) {
        Ok(report) => {
            if let Err(e) = write_csv(&report, &csv_path) {
                eprintln!("error: writing {}: {e}", csv_path.display());
                return 1;
            }
            println!(
                "{} / {}: {} steps, {} dofs, wall {:.1}s -> {}",
                report.benchmark,
                report.solver,
                report.records.len(),
                report.n_dofs,
                report.wall_time,
                csv_path.display()
            );
            0
        }
        Err(DriverError::Solve { step, time, message, partial }) => {
            let _ = write_csv(&partial, &csv_path);
            eprintln!(
                "error: solver failed at step {step} (t = {time:.6e}): {message}; partial report in {}",
                csv_path.display()
            );
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

// ---------------------------------------------------------------------------
