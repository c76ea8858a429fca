//! Jacobi and smoothed-aggregation-style multilevel preconditioners.

use super::{CsrMatrix, LinearOperator};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum PrecondError {
    ZeroDiagonal { row: usize },
    NonFiniteDiagonal { row: usize },
}

impl fmt::Display for PrecondError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecondError::ZeroDiagonal { row } => write!(f, "zero diagonal entry in row {row}"),
            PrecondError::NonFiniteDiagonal { row } => write!(f, "non-finite diagonal entry in row {row}"),
        }
    }
}

impl std::error::Error for PrecondError {}

/// Diagonal (Jacobi) preconditioner: applies D^-1.
#[derive(Debug, Clone)]
pub struct JacobiPrecond {
    inv_diag: Vec<f64>,
}

impl LinearOperator for JacobiPrecond {
    fn nrows(&self) -> usize {
        self.inv_diag.len()
    }

    fn ncols(&self) -> usize {
        self.inv_diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..x.len() {
            y[i] = self.inv_diag[i] * x[i];
        }
    }
}

pub fn jacobi_preconditioner(a: &CsrMatrix) -> Result<JacobiPrecond, PrecondError> {
    let mut inv_diag = Vec::with_capacity(a.nrows());
    for (i, d) in a.diagonal().into_iter().enumerate() {
        if d == 0.0 {
            return Err(PrecondError::ZeroDiagonal { row: i });
        }
        if !d.is_finite() {
            return Err(PrecondError::NonFiniteDiagonal { row: i });
        }
        inv_diag.push(1.0 / d);
    }
    Ok(JacobiPrecond { inv_diag })
}

/// Which preconditioner a solver should build for its matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrecondChoice {
    /// Inverse diagonal.
    #[default]
    Jacobi,
    /// Plain-aggregation multilevel V-cycle with at most `levels` levels.
    Aggregation { levels: usize },
}

/// A built preconditioner of either kind.
pub enum Precond {
    Jacobi(JacobiPrecond),
    Aggregation(AggregationPrecond),
}

impl LinearOperator for Precond {
    fn nrows(&self) -> usize {
        match self {
            Precond::Jacobi(p) => p.nrows(),
            Precond::Aggregation(p) => p.nrows(),
        }
    }

    fn ncols(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Precond::Jacobi(p) => p.apply(x, y),
            Precond::Aggregation(p) => p.apply(x, y),
        }
    }
}

pub fn build_preconditioner(a: &CsrMatrix, choice: PrecondChoice) -> Result<Precond, PrecondError> {
    match choice {
        PrecondChoice::Jacobi => Ok(Precond::Jacobi(jacobi_preconditioner(a)?)),
        PrecondChoice::Aggregation { levels } => {
            Ok(Precond::Aggregation(aggregation_preconditioner(a, levels)?))
        }
    }
}

const SMOOTHER_DAMPING: f64 = 2.0 / 3.0;
const STRENGTH_THRESHOLD: f64 = 0.08;
const COARSEST_DIM: usize = 64;
const SINGLETON_PACK: usize = 16;

struct AggLevel {
    a: CsrMatrix,
    inv_diag: Vec<f64>,
    /// Aggregate index of each fine node; maps to the next (coarser) level.
    agg_of: Vec<usize>,
    n_coarse: usize,
}

enum Coarsest {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Smooth { inv_diag: Vec<f64> },
}

/// Plain-aggregation multilevel V-cycle with damped Jacobi smoothing.
pub struct AggregationPrecond {
    levels: Vec<AggLevel>,
    coarsest: Coarsest,
    coarsest_dim: usize,
    /// Set when aggregation made no progress and the operator degraded to
    /// plain Jacobi.
    pub fell_back_to_jacobi: bool,
}

/// Builds a multilevel hierarchy by greedy strength-based aggregation.
/// `max_levels = 1` degenerates to a single damped Jacobi sweep. If the first
/// coarsening pass makes no progress the preconditioner falls back to plain
/// Jacobi and warns on stderr.
pub fn aggregation_preconditioner(a: &CsrMatrix, max_levels: usize) -> Result<AggregationPrecond, PrecondError> {
    assert!(max_levels >= 1);
    let inv_diag_of = |m: &CsrMatrix| -> Result<Vec<f64>, PrecondError> {
        let mut inv = Vec::with_capacity(m.nrows());
        for (i, d) in m.diagonal().into_iter().enumerate() {
            if d == 0.0 {
                return Err(PrecondError::ZeroDiagonal { row: i });
            }
            if !d.is_finite() {
                return Err(PrecondError::NonFiniteDiagonal { row: i });
            }
            inv.push(1.0 / d);
        }
        Ok(inv)
    };

    if max_levels == 1 {
        return Ok(AggregationPrecond {
            levels: Vec::new(),
            coarsest: Coarsest::Smooth { inv_diag: inv_diag_of(a)? },
            coarsest_dim: a.nrows(),
            fell_back_to_jacobi: false,
        });
    }

    let mut levels = Vec::new();
    let mut current = a.clone();
    for level in 1..max_levels {
        let n = current.nrows();
        if n <= COARSEST_DIM {
            break;
        }
        let agg_of = aggregate(&current);
        let n_coarse = agg_of.iter().copied().max().map_or(0, |m| m + 1);
        if n_coarse == 0 || n_coarse >= n {
            if level == 1 {
                eprintln!("warning: aggregation made no progress on a {n}x{n} matrix; falling back to Jacobi");
                return Ok(AggregationPrecond {
                    levels: Vec::new(),
                    coarsest: Coarsest::Smooth { inv_diag: inv_diag_of(a)? },
                    coarsest_dim: a.nrows(),
                    fell_back_to_jacobi: true,
                });
            }
            break;
        }
        let coarse = galerkin_product(&current, &agg_of, n_coarse);
        levels.push(AggLevel { a: current, inv_diag: Vec::new(), agg_of, n_coarse });
        current = coarse;
    }
    for lvl in &mut levels {
        lvl.inv_diag = inv_diag_of(&lvl.a)?;
    }
    let coarsest_dim = current.nrows();
    let coarsest = if coarsest_dim <= 2000 {
        Coarsest::Dense(current.to_dense().lu())
    } else {
        Coarsest::Smooth { inv_diag: inv_diag_of(&current)? }
    };
    Ok(AggregationPrecond { levels, coarsest, coarsest_dim, fell_back_to_jacobi: false })
}

/// Greedy aggregation over the strength graph
/// |a_ij| >= theta * sqrt(|a_ii a_jj|).
fn aggregate(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let diag = a.diagonal();
    let strong = |i: usize, j: usize, v: f64| -> bool {
        i != j && v.abs() >= STRENGTH_THRESHOLD * (diag[i].abs() * diag[j].abs()).sqrt()
    };
    let mut agg_of = vec![usize::MAX; n];
    let mut next_agg = 0usize;
    // Pass 1: seed aggregates from nodes whose strong neighborhood is free.
    for i in 0..n {
        if agg_of[i] != usize::MAX {
            continue;
        }
        let (cols, vals) = a.row(i);
        let mut free = true;
        for (k, &j) in cols.iter().enumerate() {
            if strong(i, j, vals[k]) && agg_of[j] != usize::MAX {
                free = false;
                break;
            }
        }
        if !free {
            continue;
        }
        agg_of[i] = next_agg;
        for (k, &j) in cols.iter().enumerate() {
            if strong(i, j, vals[k]) {
                agg_of[j] = next_agg;
            }
        }
        next_agg += 1;
    }
    // Pass 2: attach leftovers to the strongest neighboring aggregate.
    for i in 0..n {
        if agg_of[i] != usize::MAX {
            continue;
        }
        let (cols, vals) = a.row(i);
        let mut best: Option<(f64, usize)> = None;
        for (k, &j) in cols.iter().enumerate() {
            if strong(i, j, vals[k]) && agg_of[j] != usize::MAX {
                let w = vals[k].abs();
                if best.map_or(true, |(bw, _)| w > bw) {
                    best = Some((w, agg_of[j]));
                }
            }
        }
        match best {
            Some((_, agg)) => agg_of[i] = agg,
            None => {
                agg_of[i] = next_agg;
                next_agg += 1;
            }
        }
    }
    // Pass 3: rows without strong couplings (typically constrained dofs
    // reduced to identity rows) each formed their own aggregate above, which
    // would stop the hierarchy from ever coarsening below their count. Pack
    // them in fixed-size groups: the members are mutually decoupled or weakly
    // coupled, so sharing a coarse dof costs little and keeps levels shrinking.
    // Skipped when nothing aggregated, so a diagonal matrix still reports
    // "no progress" and falls back to Jacobi.
    let mut size = vec![0usize; next_agg];
    for &a in &agg_of {
        size[a] += 1;
    }
    if size.iter().any(|&s| s >= 2) {
        let mut remap = vec![usize::MAX; next_agg];
        let mut next = 0usize;
        for (a, &s) in size.iter().enumerate() {
            if s >= 2 {
                remap[a] = next;
                next += 1;
            }
        }
        let mut packed = 0usize;
        for (a, &s) in size.iter().enumerate() {
            if s == 1 {
                remap[a] = next + packed / SINGLETON_PACK;
                packed += 1;
            }
        }
        for a in agg_of.iter_mut() {
            *a = remap[*a];
        }
    }
    agg_of
}

/// Coarse operator P^T A P for piecewise-constant prolongation.
fn galerkin_product(a: &CsrMatrix, agg_of: &[usize], n_coarse: usize) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(a.nnz());
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        for (k, &j) in cols.iter().enumerate() {
            triplets.push((agg_of[i], agg_of[j], vals[k]));
        }
    }
    CsrMatrix::from_triplets(n_coarse, n_coarse, &triplets).expect("aggregate indices in range")
}

impl AggregationPrecond {
    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn coarsest_dim(&self) -> usize {
        self.coarsest_dim
    }

    fn solve_coarsest(&self, b: &[f64]) -> Vec<f64> {
        match &self.coarsest {
            Coarsest::Dense(lu) => {
                let rhs = nalgebra::DVector::from_column_slice(b);
                match lu.solve(&rhs) {
                    Some(x) => x.as_slice().to_vec(),
                    None => b.to_vec(),
                }
            }
            Coarsest::Smooth { inv_diag } => {
                b.iter().zip(inv_diag).map(|(bi, di)| SMOOTHER_DAMPING * bi * di).collect()
            }
        }
    }

    fn vcycle(&self, level: usize, b: &[f64]) -> Vec<f64> {
        if level == self.levels.len() {
            return self.solve_coarsest(b);
        }
        let lvl = &self.levels[level];
        let n = lvl.a.nrows();
        // Pre-smooth from a zero start: x = omega D^-1 b.
        let mut x: Vec<f64> = b.iter().zip(&lvl.inv_diag).map(|(bi, di)| SMOOTHER_DAMPING * bi * di).collect();
        // Restrict the residual, correct, prolongate.
        let mut ax = vec![0.0; n];
        lvl.a.spmv(&x, &mut ax);
        let mut r_coarse = vec![0.0; lvl.n_coarse];
        for i in 0..n {
            r_coarse[lvl.agg_of[i]] += b[i] - ax[i];
        }
        let x_coarse = self.vcycle(level + 1, &r_coarse);
        for i in 0..n {
            x[i] += x_coarse[lvl.agg_of[i]];
        }
        // Post-smooth.
        lvl.a.spmv(&x, &mut ax);
        for i in 0..n {
            x[i] += SMOOTHER_DAMPING * lvl.inv_diag[i] * (b[i] - ax[i]);
        }
        x
    }
}

impl LinearOperator for AggregationPrecond {
    fn nrows(&self) -> usize {
        match self.levels.first() {
            Some(lvl) => lvl.a.nrows(),
            None => self.coarsest_dim,
        }
    }

    fn ncols(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let out = self.vcycle(0, x);
        y.copy_from_slice(&out);
    }
}
