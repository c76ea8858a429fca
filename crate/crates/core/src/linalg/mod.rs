//! Sparse linear algebra: CSR storage, direct and Krylov solvers,
//! preconditioners, and the block Jacobian shared by the coupled solvers.

mod direct;
mod krylov;
mod precond;

pub use direct::{direct_solve, DirectError};
pub use krylov::{krylov_solve, KrylovError, KrylovMethod, KrylovResult, KrylovSpec};
pub use precond::{
    aggregation_preconditioner, build_preconditioner, jacobi_preconditioner, AggregationPrecond,
    JacobiPrecond, Precond, PrecondChoice, PrecondError,
};

use std::fmt;

/// Square (or rectangular) linear operator applied matrix-free.
pub trait LinearOperator {
    /// Number of rows of the operator.
    fn nrows(&self) -> usize;
    /// Number of columns of the operator.
    fn ncols(&self) -> usize;
    /// y = A x. `x.len() == ncols()`, `y.len() == nrows()`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CsrError {
    /// A triplet or pattern index is out of bounds.
    IndexOutOfBounds { row: usize, col: usize, nrows: usize, ncols: usize },
}

impl fmt::Display for CsrError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CsrError::IndexOutOfBounds { row, col, nrows, ncols } => {
                write!(f, "entry ({row},{col}) outside {nrows}x{ncols} matrix")
            }
        }
    }
}

impl std::error::Error for CsrError {}

impl CsrMatrix {
    /// Builds from triplets, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, CsrError> {
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(CsrError::IndexOutOfBounds { row: i, col: j, nrows, ncols });
            }
        }
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            by_row[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut by_row {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    vals.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix { nrows, ncols, row_ptr, col_idx, vals })
    }

    /// Builds a zero-valued matrix over a fixed sparsity pattern. `cols_per_row`
    /// holds the column set of each row; it is sorted and deduplicated here.
    pub fn zeros_from_pattern(nrows: usize, ncols: usize, cols_per_row: &mut [Vec<usize>]) -> Result<Self, CsrError> {
        assert_eq!(cols_per_row.len(), nrows);
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for cols in cols_per_row.iter_mut() {
            cols.sort_unstable();
            cols.dedup();
            if let Some(&j) = cols.last() {
                if j >= ncols {
                    return Err(CsrError::IndexOutOfBounds { row: row_ptr.len() - 1, col: j, nrows, ncols });
                }
            }
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let vals = vec![0.0; col_idx.len()];
        Ok(CsrMatrix { nrows, ncols, row_ptr, col_idx, vals })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    fn row_mut(&mut self, i: usize) -> (&[usize], &mut [f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &mut self.vals[lo..hi])
    }

    /// Position of entry (i, j) in the value array, if present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    /// Adds `v` to entry (i, j). The entry must exist in the pattern.
    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) not in sparsity pattern"));
        self.vals[k] += v;
    }

    /// Overwrites entry (i, j). The entry must exist in the pattern.
    pub fn set_at(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) not in sparsity pattern"));
        self.vals[k] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |k| self.vals[k])
    }

    pub fn set_zero(&mut self) {
        self.vals.fill(0.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    /// y = A x.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// y += A x.
    pub fn spmv_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] += acc;
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols];
        for &j in &self.col_idx {
            counts[j] += 1;
        }
        let mut row_ptr = vec![0usize; self.ncols + 1];
        for j in 0..self.ncols {
            row_ptr[j + 1] = row_ptr[j] + counts[j];
        }
        let mut col_idx = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        let mut next = row_ptr.clone();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let pos = next[j];
                col_idx[pos] = i;
                vals[pos] = self.vals[k];
                next[j] += 1;
            }
        }
        // Rows of the transpose are filled in increasing source-row order, so
        // the column indices come out sorted.
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, row_ptr, col_idx, vals }
    }

    /// Largest absolute asymmetry max |a_ij - a_ji|; zero for symmetric input.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let t = self.transpose();
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = t.row(i);
            // Merge the two sorted rows.
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let ja = ca.get(p).copied().unwrap_or(usize::MAX);
                let jb = cb.get(q).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    worst = worst.max((va[p] - vb[q]).abs());
                    p += 1;
                    q += 1;
                } else if ja < jb {
                    worst = worst.max(va[p].abs());
                    p += 1;
                } else {
                    worst = worst.max(vb[q].abs());
                    q += 1;
                }
            }
        }
        worst
    }

    pub fn diagonal(&self) -> Vec<f64> {
        assert_eq!(self.nrows, self.ncols);
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.col_idx[k])] = self.vals[k];
            }
        }
        d
    }

    /// Symmetric elimination of one constrained unknown: zero row and column
    /// `dof`, set the diagonal to one. Off-diagonal column entries are pushed
    /// to the right-hand side when `rhs` is given.
    pub fn eliminate_dof(&mut self, dof: usize, value: f64, rhs: Option<&mut [f64]>) {
        assert_eq!(self.nrows, self.ncols);
        if let Some(rhs) = rhs {
            // rhs_i -= a_ij * value for unconstrained rows; done via the
            // transpose-free column walk below (the pattern is symmetric for
            // all matrices this is used on, so walk the row instead).
            for k in self.row_ptr[dof]..self.row_ptr[dof + 1] {
                let i = self.col_idx[k];
                if i != dof {
                    // a_ji where j = dof; symmetric pattern makes a_ij present
                    if let Some(p) = self.find(i, dof) {
                        rhs[i] -= self.vals[p] * value;
                    }
                }
            }
            rhs[dof] = value;
        }
        // Zero column `dof` using the symmetric pattern, then the row.
        for k in self.row_ptr[dof]..self.row_ptr[dof + 1] {
            let j = self.col_idx[k];
            if j != dof {
                if let Some(p) = self.find(j, dof) {
                    self.vals[p] = 0.0;
                }
            }
        }
        let (cols, vals) = self.row_mut(dof);
        for (q, &j) in cols.iter().enumerate() {
            vals[q] = if j == dof { 1.0 } else { 0.0 };
        }
    }

    /// Writes the matrix in MatrixMarket coordinate format.
    pub fn write_matrix_market(&self, w: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                writeln!(w, "{} {} {:.16e}", i + 1, self.col_idx[k] + 1, self.vals[k])?;
            }
        }
        Ok(())
    }
}

impl LinearOperator for CsrMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spmv(x, y);
    }
}

/// Coupled Jacobian in 2x2 block form over (displacement, phase-field) dofs.
///
/// `uc` is kept as the exact transpose of `cu`; both are stored because the
/// field-split operators walk them row-wise in either direction.
#[derive(Clone, Debug)]
pub struct BlockJacobian {
    pub uu: CsrMatrix,
    pub uc: CsrMatrix,
    pub cu: CsrMatrix,
    pub cc: CsrMatrix,
}

impl BlockJacobian {
    pub fn n_u(&self) -> usize {
        self.uu.nrows()
    }

    pub fn n_c(&self) -> usize {
        self.cc.nrows()
    }

    pub fn dim(&self) -> usize {
        self.n_u() + self.n_c()
    }

    /// Assembles the monolithic matrix with displacement dofs first.
    pub fn to_monolithic(&self) -> CsrMatrix {
        let dn = self.n_u();
        let n = self.n_c();
        let total = dn + n;
        let mut row_ptr = Vec::with_capacity(total + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..dn {
            let (c, v) = self.uu.row(i);
            col_idx.extend_from_slice(c);
            vals.extend_from_slice(v);
            let (c, v) = self.uc.row(i);
            col_idx.extend(c.iter().map(|&j| j + dn));
            vals.extend_from_slice(v);
            row_ptr.push(col_idx.len());
        }
        for i in 0..n {
            let (c, v) = self.cu.row(i);
            col_idx.extend_from_slice(c);
            vals.extend_from_slice(v);
            let (c, v) = self.cc.row(i);
            col_idx.extend(c.iter().map(|&j| j + dn));
            vals.extend_from_slice(v);
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { nrows: total, ncols: total, row_ptr, col_idx, vals }
    }
}

impl LinearOperator for BlockJacobian {
    fn nrows(&self) -> usize {
        self.dim()
    }

    fn ncols(&self) -> usize {
        self.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let dn = self.n_u();
        let (xu, xc) = x.split_at(dn);
        let (yu, yc) = y.split_at_mut(dn);
        self.uu.spmv(xu, yu);
        self.uc.spmv_add(xc, yu);
        self.cu.spmv(xu, yc);
        self.cc.spmv_add(xc, yc);
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, -1.0)])
            .unwrap();
        assert_eq!(a.row(0), (&[0usize, 2][..], &[2.0, 1.5][..]));
        assert_eq!(a.row(1), (&[1usize][..], &[-1.0][..]));
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn triplet_bounds_checked() {
        let err = CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, CsrError::IndexOutOfBounds { row: 2, .. }));
    }

    #[test]
    fn spmv_matches_dense() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (0, 2, -1.0), (1, 1, 3.0), (2, 0, 1.0), (2, 2, 4.0)])
            .unwrap();
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 3];
        a.spmv(&x, &mut y);
        assert_eq!(y, [-1.0, 6.0, 13.0]);
        let d = a.to_dense();
        let yd = d * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert_eq!(y[i], yd[i]);
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 1, 5.0), (1, 0, -2.0), (1, 2, 7.0)]).unwrap();
        let att = a.transpose().transpose();
        assert_eq!(a, att);
    }

    #[test]
    fn asymmetry_detects_off_pattern_entries() {
        let sym = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 3.0), (1, 0, 3.0), (1, 1, 2.0)]).unwrap();
        assert_eq!(sym.asymmetry(), 0.0);
        let asym = CsrMatrix::from_triplets(2, 2, &[(0, 1, 3.0)]).unwrap();
        assert_eq!(asym.asymmetry(), 3.0);
    }

    #[test]
    fn eliminate_dof_is_symmetric_and_moves_load() {
        // 1D Laplacian, 3 dofs, constrain u_0 = 1.
        let mut a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 2.0)],
        )
        .unwrap();
        let mut rhs = vec![0.0, 0.0, 0.0];
        a.eliminate_dof(0, 1.0, Some(&mut rhs));
        assert_eq!(a.asymmetry(), 0.0);
        assert_eq!(rhs, vec![1.0, 1.0, 0.0]);
        let x = direct_solve(&a, &rhs).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn block_jacobian_monolithic_matches_blockwise_apply() {
        let uu = CsrMatrix::from_triplets(2, 2, &[(0, 0, 4.0), (1, 1, 5.0)]).unwrap();
        let uc = CsrMatrix::from_triplets(2, 1, &[(0, 0, 1.0)]).unwrap();
        let cu = uc.transpose();
        let cc = CsrMatrix::from_triplets(1, 1, &[(0, 0, 3.0)]).unwrap();
        let j = BlockJacobian { uu, uc, cu, cc };
        let x = [1.0, -2.0, 0.5];
        let mut y1 = [0.0; 3];
        j.apply(&x, &mut y1);
        let mut y2 = [0.0; 3];
        j.to_monolithic().apply(&x, &mut y2);
        assert_eq!(y1, y2);
        assert_eq!(j.to_monolithic().asymmetry(), 0.0);
    }
}
