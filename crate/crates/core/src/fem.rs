//! Q1 finite elements: shape functions, Gauss quadrature, dof management
//! with a displacement/phase-field split, and generic assembly.

use crate::linalg::CsrMatrix;
use crate::mesh::QuadMesh;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

#[derive(Debug)]
pub enum FemError {
    /// Constraint or scatter index outside the dof range.
    DofOutOfRange { dof: usize, n_dofs: usize },
    /// Element kernel returned a local block of the wrong size.
    KernelDim { expected: usize, got: usize },
    /// Matrix/vector shapes do not match the dof map.
    ShapeMismatch(String),
}

impl fmt::Display for FemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FemError::DofOutOfRange { dof, n_dofs } => {
                write!(f, "dof {dof} out of range for {n_dofs} dofs")
            }
            FemError::KernelDim { expected, got } => {
                write!(f, "kernel returned {got} entries, expected {expected}")
            }
            FemError::ShapeMismatch(s) => write!(f, "shape mismatch: {s}"),
        }
    }
}

impl std::error::Error for FemError {}

/// Bilinear shape functions on `[-1,1]^2`, nodes counter-clockwise from
/// `(-1,-1)`. Returns nodal values and reference gradients `(d/dξ, d/dη)`.
pub fn shape_eval(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let vals = [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ];
    let grads = [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ];
    (vals, grads)
}

/// Quadrature rule on the reference square.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// 2x2 Gauss rule: points at `±1/√3`, unit weights.
    pub fn gauss_2x2() -> Self {
        let g = 1.0 / 3f64.sqrt();
        Quadrature {
            points: vec![[-g, -g], [g, -g], [g, g], [-g, g]],
            weights: vec![1.0; 4],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Jacobian determinant and physical shape gradients at one reference
/// point of an element with the given corner coordinates.
pub fn qp_geometry(coords: &[[f64; 2]; 4], xi: f64, eta: f64) -> (f64, [[f64; 2]; 4]) {
    let (_, gref) = shape_eval(xi, eta);
    // J[r][c] = d x_r / d ξ_c
    let mut j = [[0.0; 2]; 2];
    for k in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += coords[k][r] * gref[k][c];
            }
        }
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [
        [j[1][1] / det, -j[0][1] / det],
        [-j[1][0] / det, j[0][0] / det],
    ];
    // dN/dx_r = Σ_c dN/dξ_c · dξ_c/dx_r, with dξ/dx = J^{-1}.
    let mut gphys = [[0.0; 2]; 4];
    for k in 0..4 {
        for r in 0..2 {
            gphys[k][r] = gref[k][0] * inv[0][r] + gref[k][1] * inv[1][r];
        }
    }
    (det, gphys)
}

/// Dof layout: displacement dofs first (node-major, x then y), then one
/// phase-field dof per node, plus the Dirichlet constraint list.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_nodes: usize,
    constraints: BTreeMap<usize, f64>,
}

impl DofMap {
    pub fn new(n_nodes: usize) -> Self {
        DofMap { n_nodes, constraints: BTreeMap::new() }
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_nodes
    }

    pub fn n_u_dofs(&self) -> usize {
        2 * self.n_nodes
    }

    pub fn n_c_dofs(&self) -> usize {
        self.n_nodes
    }

    /// Displacement dof of `node` in component `comp` (0 = x, 1 = y).
    pub fn u_dof(&self, node: usize, comp: usize) -> usize {
        2 * node + comp
    }

    /// Phase-field dof of `node`.
    pub fn c_dof(&self, node: usize) -> usize {
        2 * self.n_nodes + node
    }

    /// Index set of all displacement dofs.
    pub fn i_u(&self) -> Range<usize> {
        0..2 * self.n_nodes
    }

    /// Index set of all phase-field dofs.
    pub fn i_c(&self) -> Range<usize> {
        2 * self.n_nodes..3 * self.n_nodes
    }

    /// Adds or replaces a Dirichlet constraint.
    pub fn constrain(&mut self, dof: usize, value: f64) -> Result<(), FemError> {
        if dof >= self.n_dofs() {
            return Err(FemError::DofOutOfRange { dof, n_dofs: self.n_dofs() });
        }
        self.constraints.insert(dof, value);
        Ok(())
    }

    pub fn clear_constraints(&mut self) {
        self.constraints.clear();
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constraints.contains_key(&dof)
    }

    /// Constraints as sorted `(dof, value)` pairs.
    pub fn constraints(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.constraints.iter().map(|(&d, &v)| (d, v))
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }
}

/// Builds a zero CSR matrix whose pattern is the union of all per-element
/// row/column dof couplings.
pub fn build_pattern(
    n_rows: usize,
    n_cols: usize,
    element_dofs: impl Iterator<Item = (Vec<usize>, Vec<usize>)>,
) -> Result<CsrMatrix, FemError> {
    let mut triplets = Vec::new();
    for (rows, cols) in element_dofs {
        for &r in &rows {
            if r >= n_rows {
                return Err(FemError::DofOutOfRange { dof: r, n_dofs: n_rows });
            }
            for &c in &cols {
                if c >= n_cols {
                    return Err(FemError::DofOutOfRange { dof: c, n_dofs: n_cols });
                }
                triplets.push((r, c, 0.0));
            }
        }
    }
    CsrMatrix::from_triplets(n_rows, n_cols, &triplets)
        .map_err(|_| FemError::ShapeMismatch("pattern triplets out of bounds".into()))
}

/// Adds a dense local block into a CSR matrix at the given global dofs.
/// The pattern must already contain every `(row, col)` pair.
pub fn scatter_add(mat: &mut CsrMatrix, rows: &[usize], cols: &[usize], local: &[f64]) {
    debug_assert_eq!(local.len(), rows.len() * cols.len());
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            mat.add_at(r, c, local[i * cols.len() + j]);
        }
    }
}

/// Assembles a sparse matrix over all elements. `row_dofs`/`col_dofs` give
/// the global dofs of an element; `kernel` fills the local row-major block.
pub fn assemble_matrix(
    mesh: &QuadMesh,
    n_rows: usize,
    n_cols: usize,
    row_dofs: impl Fn(usize) -> Vec<usize>,
    col_dofs: impl Fn(usize) -> Vec<usize>,
    mut kernel: impl FnMut(usize) -> Vec<f64>,
) -> Result<CsrMatrix, FemError> {
    let ne = mesh.n_elements();
    let mut mat = build_pattern(
        n_rows,
        n_cols,
        (0..ne).map(|e| (row_dofs(e), col_dofs(e))),
    )?;
    for e in 0..ne {
        let rows = row_dofs(e);
        let cols = col_dofs(e);
        let local = kernel(e);
        if local.len() != rows.len() * cols.len() {
            return Err(FemError::KernelDim {
                expected: rows.len() * cols.len(),
                got: local.len(),
            });
        }
        scatter_add(&mut mat, &rows, &cols, &local);
    }
    Ok(mat)
}

/// Assembles a global vector over all elements.
pub fn assemble_vector(
    mesh: &QuadMesh,
    n_dofs: usize,
    dofs: impl Fn(usize) -> Vec<usize>,
    mut kernel: impl FnMut(usize) -> Vec<f64>,
) -> Result<Vec<f64>, FemError> {
    let mut v = vec![0.0; n_dofs];
    for e in 0..mesh.n_elements() {
        let idx = dofs(e);
        let local = kernel(e);
        if local.len() != idx.len() {
            return Err(FemError::KernelDim { expected: idx.len(), got: local.len() });
        }
        for (k, &d) in idx.iter().enumerate() {
            if d >= n_dofs {
                return Err(FemError::DofOutOfRange { dof: d, n_dofs });
            }
            v[d] += local[k];
        }
    }
    Ok(v)
}

/// Symmetric elimination of the dof map's Dirichlet constraints: zeroes
/// constrained rows and columns, sets unit diagonals, and moves column
/// loads to the rhs so constrained dofs solve to their prescribed values.
pub fn apply_dirichlet(
    mat: &mut CsrMatrix,
    rhs: &mut [f64],
    dofmap: &DofMap,
) -> Result<(), FemError> {
    if mat.nrows() != mat.ncols() {
        return Err(FemError::ShapeMismatch(format!(
            "matrix {}x{} not square",
            mat.nrows(), mat.ncols()
        )));
    }
    if rhs.len() != mat.nrows() {
        return Err(FemError::ShapeMismatch(format!(
            "rhs length {} vs matrix dim {}",
            rhs.len(),
            mat.nrows()
        )));
    }
    for (dof, value) in dofmap.constraints() {
        if dof >= mat.nrows() {
            return Err(FemError::DofOutOfRange { dof, n_dofs: mat.nrows() });
        }
        mat.eliminate_dof(dof, value, Some(rhs));
    }
    Ok(())
}

/// Same elimination with every prescribed value treated as zero; used for
/// Newton corrections, where increments at constrained dofs must vanish.
pub fn apply_dirichlet_homogeneous(
    mat: &mut CsrMatrix,
    rhs: &mut [f64],
    dofmap: &DofMap,
) -> Result<(), FemError> {
    if rhs.len() != mat.nrows() {
        return Err(FemError::ShapeMismatch(format!(
            "rhs length {} vs matrix dim {}",
            rhs.len(),
            mat.nrows()
        )));
    }
    for (dof, _) in dofmap.constraints() {
        if dof >= mat.nrows() {
            return Err(FemError::DofOutOfRange { dof, n_dofs: mat.nrows() });
        }
        mat.eliminate_dof(dof, 0.0, Some(rhs));
    }
    Ok(())
}
