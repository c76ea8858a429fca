//! Phase-field brittle fracture physics (AT-2): split elastic energy,
//! fracture surface energy, penalty-based irreversibility, and their
//! first and second variations assembled over a mesh.
//!
//! The phase field runs from 0 (intact) to 1 (fully broken); tension is
//! degraded by `(1 - c)^2` while the compressive response survives.

use crate::fem::{self, DofMap, Quadrature};
use crate::linalg::{BlockJacobian, CsrMatrix};
use crate::mesh::QuadMesh;
use std::fmt;

/// 2x2 tensor stored row-major.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug)]
pub enum ModelError {
    /// A material parameter violates its positivity/range constraint.
    InvalidParams(String),
    /// State vector lengths do not match the mesh.
    StateShape { expected: usize, got: usize },
    /// Assembly plumbing failure (pattern construction).
    Assembly(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidParams(s) => write!(f, "invalid material parameters: {s}"),
            ModelError::StateShape { expected, got } => {
                write!(f, "state vector length {got}, expected {expected}")
            }
            ModelError::Assembly(s) => write!(f, "assembly error: {s}"),
        }
    }
}

impl std::error::Error for ModelError {}

/// Penalty coefficient enforcing irreversibility of the phase field:
/// `gamma = g_c/l_s * (1/tau_irr^2 - 1)`.
pub fn penalty_gamma(g_c: f64, l_s: f64, tau_irr: f64) -> Result<f64, ModelError> {
    if !(g_c > 0.0) || !(l_s > 0.0) {
        return Err(ModelError::InvalidParams(format!(
            "g_c = {g_c} and l_s = {l_s} must be positive"
        )));
    }
    if !(tau_irr > 0.0 && tau_irr < 1.0) {
        return Err(ModelError::InvalidParams(format!(
            "tau_irr = {tau_irr} must lie in (0, 1)"
        )));
    }
    Ok(g_c / l_s * (1.0 / (tau_irr * tau_irr) - 1.0))
}

/// Isotropic material and regularization parameters.
/// Units: λ, μ in kN/mm²; g_c in kN/mm; l_s in mm; γ in kN/mm³.
#[derive(Debug, Clone, Copy)]
pub struct MaterialParams {
    pub lambda: f64,
    pub mu: f64,
    pub g_c: f64,
    pub l_s: f64,
    pub tau_irr: f64,
    /// Penalty coefficient, always derived via [`penalty_gamma`].
    pub gamma: f64,
    /// AT-2 normalization constant (fixed 2).
    pub c_omega: f64,
}

impl MaterialParams {
    pub fn new(lambda: f64, mu: f64, g_c: f64, l_s: f64, tau_irr: f64) -> Result<Self, ModelError> {
        if !(mu > 0.0) {
            return Err(ModelError::InvalidParams(format!("mu = {mu} must be positive")));
        }
        if !(lambda + mu > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "lambda + mu = {} must be positive",
                lambda + mu
            )));
        }
        let gamma = penalty_gamma(g_c, l_s, tau_irr)?;
        Ok(MaterialParams { lambda, mu, g_c, l_s, tau_irr, gamma, c_omega: 2.0 })
    }
}

/// Nodal coefficients of the coupled problem at one pseudo-time.
#[derive(Debug, Clone)]
pub struct SystemState {
    /// Displacement coefficients, node-major `(u_x, u_y)`, length `2n`.
    pub u: Vec<f64>,
    /// Phase-field coefficients, length `n`.
    pub c: Vec<f64>,
    /// Phase field of the previous loading step (not mutated in-step).
    pub c_prev: Vec<f64>,
    /// Pseudo-time in s.
    pub t: f64,
}

impl SystemState {
    pub fn zero(n_nodes: usize) -> Self {
        SystemState {
            u: vec![0.0; 2 * n_nodes],
            c: vec![0.0; n_nodes],
            c_prev: vec![0.0; n_nodes],
            t: 0.0,
        }
    }
}

/// Spectral decomposition of a strain tensor into tensile and compressive
/// parts. Eigenpairs sorted ascending; eigenvector signs fixed so the
/// first nonzero component is positive.
#[derive(Debug, Clone, Copy)]
pub struct StrainSplit {
    pub eps_plus: Mat2,
    pub eps_minus: Mat2,
    pub tr_plus: f64,
    pub tr_minus: f64,
    /// Eigenvalues, `eig[0] <= eig[1]`.
    pub eig: [f64; 2],
    /// Unit eigenvectors matching `eig`.
    pub vecs: [[f64; 2]; 2],
}

/// Eigenvalue gap below which the split tangent switches to its
/// repeated-eigenvalue limit.
const EIG_GAP_TOL: f64 = 1e-8;

fn ramp_plus(x: f64) -> f64 {
    x.max(0.0)
}

fn ramp_minus(x: f64) -> f64 {
    x.min(0.0)
}

/// Step derivative of the negative ramp: 1 for `x < 0`, else 0.
fn heaviside_minus(x: f64) -> f64 {
    if x < 0.0 {
        1.0
    } else {
        0.0
    }
}

fn heaviside_plus(x: f64) -> f64 {
    1.0 - heaviside_minus(x)
}

fn outer_sym(a: [f64; 2], b: [f64; 2]) -> Mat2 {
    [
        [a[0] * b[0], 0.5 * (a[0] * b[1] + a[1] * b[0])],
        [0.5 * (a[0] * b[1] + a[1] * b[0]), a[1] * b[1]],
    ]
}

fn mat_add_scaled(m: &mut Mat2, s: f64, a: &Mat2) {
    for r in 0..2 {
        for c in 0..2 {
            m[r][c] += s * a[r][c];
        }
    }
}

fn mat_inner(a: &Mat2, b: &Mat2) -> f64 {
    let mut s = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            s += a[r][c] * b[r][c];
        }
    }
    s
}

/// Splits a symmetric 2x2 strain into positive/negative spectral parts.
pub fn spectral_split(eps: Mat2) -> StrainSplit {
    let a = eps[0][0];
    let d = eps[1][1];
    let b = 0.5 * (eps[0][1] + eps[1][0]);
    let m = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let eig = [m - r, m + r];

    let vecs = if r < EIG_GAP_TOL {
        [[1.0, 0.0], [0.0, 1.0]]
    } else {
        // Eigenvector of the larger eigenvalue from the better-conditioned
        // residual column; the other is its perpendicular.
        let v2 = if (eig[1] - a).abs() > (eig[1] - d).abs() {
            [b, eig[1] - a]
        } else {
            [eig[1] - d, b]
        };
        let norm = (v2[0] * v2[0] + v2[1] * v2[1]).sqrt();
        let n2 = [v2[0] / norm, v2[1] / norm];
        let n1 = [-n2[1], n2[0]];
        [fix_sign(n1), fix_sign(n2)]
    };

    let mut eps_plus = [[0.0; 2]; 2];
    let mut eps_minus = [[0.0; 2]; 2];
    for k in 0..2 {
        let p = outer_sym(vecs[k], vecs[k]);
        mat_add_scaled(&mut eps_plus, ramp_plus(eig[k]), &p);
        mat_add_scaled(&mut eps_minus, ramp_minus(eig[k]), &p);
    }
    let tr = a + d;
    StrainSplit {
        eps_plus,
        eps_minus,
        tr_plus: ramp_plus(tr),
        tr_minus: ramp_minus(tr),
        eig,
        vecs,
    }
}

fn fix_sign(v: [f64; 2]) -> [f64; 2] {
    let flip = if v[0].abs() > 1e-12 { v[0] < 0.0 } else { v[1] < 0.0 };
    if flip {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Tensile/compressive elastic energy densities
/// `ψ± = λ/2 [tr±(ε)]² + μ ε± : ε±`.
pub fn energy_densities(p: &MaterialParams, eps: Mat2) -> (f64, f64) {
    let s = spectral_split(eps);
    energy_densities_split(p, &s)
}

fn energy_densities_split(p: &MaterialParams, s: &StrainSplit) -> (f64, f64) {
    let plus = 0.5 * p.lambda * s.tr_plus * s.tr_plus + p.mu * mat_inner(&s.eps_plus, &s.eps_plus);
    let minus =
        0.5 * p.lambda * s.tr_minus * s.tr_minus + p.mu * mat_inner(&s.eps_minus, &s.eps_minus);
    (plus, minus)
}

/// Split Cauchy stresses `σ± = λ tr±(ε) I + 2μ ε±`.
pub fn stresses(p: &MaterialParams, eps: Mat2) -> (Mat2, Mat2) {
    let s = spectral_split(eps);
    stresses_split(p, &s)
}

fn stresses_split(p: &MaterialParams, s: &StrainSplit) -> (Mat2, Mat2) {
    let mut plus = [[0.0; 2]; 2];
    let mut minus = [[0.0; 2]; 2];
    for r in 0..2 {
        plus[r][r] = p.lambda * s.tr_plus;
        minus[r][r] = p.lambda * s.tr_minus;
    }
    mat_add_scaled(&mut plus, 2.0 * p.mu, &s.eps_plus);
    mat_add_scaled(&mut minus, 2.0 * p.mu, &s.eps_minus);
    (plus, minus)
}

/// Applies the tangent of `σ+` (`which > 0`) or `σ−` (`which < 0`) at the
/// split strain to a symmetric increment `deps`.
///
/// Eigenvectors are held at the current strain; ramp derivatives enter as
/// Heaviside factors on the trace and on each eigenvalue, and the
/// eigenvector rotation contributes the divided-difference shear term
/// `(⟨ε_i⟩± − ⟨ε_j⟩±)/(ε_i − ε_j)`. Below an eigenvalue gap of 1e-8 the
/// tangent degenerates to `H±(ε_1)(λ̂ tr-part + 2μ identity-part)`.
pub fn split_tangent_apply(p: &MaterialParams, s: &StrainSplit, which: i32, deps: &Mat2) -> Mat2 {
    let tr_d = deps[0][0] + deps[1][1];
    let tr = s.eig[0] + s.eig[1];
    let h = |x: f64| {
        if which > 0 {
            heaviside_plus(x)
        } else {
            heaviside_minus(x)
        }
    };
    let ramp = |x: f64| {
        if which > 0 {
            ramp_plus(x)
        } else {
            ramp_minus(x)
        }
    };

    let mut out = [[0.0; 2]; 2];
    let lam_fac = p.lambda * h(tr) * tr_d;
    out[0][0] += lam_fac;
    out[1][1] += lam_fac;

    let gap = s.eig[1] - s.eig[0];
    if gap < EIG_GAP_TOL {
        let hf = h(s.eig[0]);
        mat_add_scaled(&mut out, 2.0 * p.mu * hf, deps);
        return out;
    }

    // Diagonal (eigenvalue-derivative) part.
    let mut proj = [[[0.0; 2]; 2]; 2];
    for k in 0..2 {
        proj[k] = outer_sym(s.vecs[k], s.vecs[k]);
        let ndn = s.vecs[k][0] * (deps[0][0] * s.vecs[k][0] + deps[0][1] * s.vecs[k][1])
            + s.vecs[k][1] * (deps[1][0] * s.vecs[k][0] + deps[1][1] * s.vecs[k][1]);
        mat_add_scaled(&mut out, 2.0 * p.mu * h(s.eig[k]) * ndn, &proj[k]);
    }

    // Off-diagonal (eigenvector rotation) part.
    let theta = (ramp(s.eig[1]) - ramp(s.eig[0])) / gap;
    let n1 = s.vecs[0];
    let n2 = s.vecs[1];
    let n1dn2 = n1[0] * (deps[0][0] * n2[0] + deps[0][1] * n2[1])
        + n1[1] * (deps[1][0] * n2[0] + deps[1][1] * n2[1]);
    let cross = outer_sym(n1, n2);
    // Both (1,2) and (2,1) orderings contribute equally.
    mat_add_scaled(&mut out, 2.0 * p.mu * theta * 2.0 * n1dn2, &cross);
    out
}

/// Energy breakdown of one state, all in kN·mm.
#[derive(Debug, Clone, Copy, Default)]
pub struct Energies {
    pub elastic: f64,
    pub fracture: f64,
    pub penalty: f64,
    pub total: f64,
}

struct QpData {
    /// Quadrature weight times Jacobian determinant.
    wdet: f64,
    vals: [f64; 4],
    grads: [[f64; 2]; 4],
}

struct ElemData {
    /// Global displacement dofs, node-major x/y.
    u_dofs: [usize; 8],
    /// Global node indices (phase-field dofs in block numbering).
    nodes: [usize; 4],
    qp: Vec<QpData>,
}

/// Discretized fracture model over one mesh: precomputed element
/// geometry, sparsity templates, and the assembly routines.
pub struct FractureModel {
    pub mesh: QuadMesh,
    pub dofmap: DofMap,
    pub params: MaterialParams,
    elems: Vec<ElemData>,
    pattern_uu: CsrMatrix,
    pattern_uc: CsrMatrix,
    pattern_cu: CsrMatrix,
    pattern_cc: CsrMatrix,
}

impl FractureModel {
    pub fn new(mesh: QuadMesh, params: MaterialParams) -> Result<Self, ModelError> {
        let quad = Quadrature::gauss_2x2();
        let n = mesh.n_nodes();
        let dofmap = DofMap::new(n);
        let mut elems = Vec::with_capacity(mesh.n_elements());
        for el in &mesh.elements {
            let coords = [
                mesh.node_coords[el[0]],
                mesh.node_coords[el[1]],
                mesh.node_coords[el[2]],
                mesh.node_coords[el[3]],
            ];
            let mut qp = Vec::with_capacity(quad.len());
            for (pt, w) in quad.points.iter().zip(&quad.weights) {
                let (vals, _) = fem::shape_eval(pt[0], pt[1]);
                let (det, grads) = fem::qp_geometry(&coords, pt[0], pt[1]);
                if !(det > 0.0) {
                    return Err(ModelError::Assembly(format!(
                        "nonpositive Jacobian determinant {det}"
                    )));
                }
                qp.push(QpData { wdet: w * det, vals, grads });
            }
            let mut u_dofs = [0usize; 8];
            for k in 0..4 {
                u_dofs[2 * k] = 2 * el[k];
                u_dofs[2 * k + 1] = 2 * el[k] + 1;
            }
            elems.push(ElemData { u_dofs, nodes: *el, qp });
        }

        let mk = |nr: usize,
                  nc: usize,
                  rows: &dyn Fn(&ElemData) -> Vec<usize>,
                  cols: &dyn Fn(&ElemData) -> Vec<usize>|
         -> Result<CsrMatrix, ModelError> {
            fem::build_pattern(nr, nc, elems.iter().map(|e| (rows(e), cols(e))))
                .map_err(|e| ModelError::Assembly(e.to_string()))
        };
        let urows = |e: &ElemData| e.u_dofs.to_vec();
        let crows = |e: &ElemData| e.nodes.to_vec();
        let pattern_uu = mk(2 * n, 2 * n, &urows, &urows)?;
        let pattern_uc = mk(2 * n, n, &urows, &crows)?;
        let pattern_cu = mk(n, 2 * n, &crows, &urows)?;
        let pattern_cc = mk(n, n, &crows, &crows)?;
        Ok(FractureModel {
            mesh,
            dofmap,
            params,
            elems,
            pattern_uu,
            pattern_uc,
            pattern_cu,
            pattern_cc,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.mesh.n_nodes()
    }

    fn check_state(&self, state: &SystemState) -> Result<(), ModelError> {
        let n = self.n_nodes();
        for (len, expected) in [
            (state.u.len(), 2 * n),
            (state.c.len(), n),
            (state.c_prev.len(), n),
        ] {
            if len != expected {
                return Err(ModelError::StateShape { expected, got: len });
            }
        }
        Ok(())
    }

    /// Strain at one quadrature point from nodal displacements.
    fn qp_strain(&self, e: &ElemData, q: &QpData, u: &[f64]) -> Mat2 {
        let mut g = [[0.0; 2]; 2];
        for k in 0..4 {
            let ux = u[e.u_dofs[2 * k]];
            let uy = u[e.u_dofs[2 * k + 1]];
            g[0][0] += ux * q.grads[k][0];
            g[0][1] += ux * q.grads[k][1];
            g[1][0] += uy * q.grads[k][0];
            g[1][1] += uy * q.grads[k][1];
        }
        let sh = 0.5 * (g[0][1] + g[1][0]);
        [[g[0][0], sh], [sh, g[1][1]]]
    }

    /// Total energy `Ψ = E_elastic + E_fracture + E_penalty`.
    pub fn total_energy(&self, state: &SystemState) -> Result<Energies, ModelError> {
        self.check_state(state)?;
        let p = &self.params;
        let mut en = Energies::default();
        for e in &self.elems {
            for q in &e.qp {
                let eps = self.qp_strain(e, q, &state.u);
                let split = spectral_split(eps);
                let (psi_p, psi_m) = energy_densities_split(p, &split);
                let mut c = 0.0;
                let mut cp = 0.0;
                let mut gc = [0.0; 2];
                for k in 0..4 {
                    let cn = state.c[e.nodes[k]];
                    c += q.vals[k] * cn;
                    cp += q.vals[k] * state.c_prev[e.nodes[k]];
                    gc[0] += q.grads[k][0] * cn;
                    gc[1] += q.grads[k][1] * cn;
                }
                let g = (1.0 - c) * (1.0 - c);
                en.elastic += q.wdet * (g * psi_p + psi_m);
                en.fracture += q.wdet
                    * (p.g_c / p.c_omega)
                    * (c * c / p.l_s + p.l_s * (gc[0] * gc[0] + gc[1] * gc[1]));
                let viol = ramp_minus(c - cp);
                en.penalty += q.wdet * 0.5 * p.gamma * viol * viol;
            }
        }
        en.total = en.elastic + en.fracture + en.penalty;
        Ok(en)
    }

    /// Gradient of the total energy, stacked `[F_u; F_c]`, with entries at
    /// constrained dofs zeroed. Dirichlet values must already be embedded
    /// in `state.u`.
    pub fn residual(&self, state: &SystemState) -> Result<Vec<f64>, ModelError> {
        self.check_state(state)?;
        let p = &self.params;
        let n = self.n_nodes();
        let mut f = vec![0.0; 3 * n];
        for e in &self.elems {
            for q in &e.qp {
                let eps = self.qp_strain(e, q, &state.u);
                let split = spectral_split(eps);
                let (psi_p, _) = energy_densities_split(p, &split);
                let (sig_p, sig_m) = stresses_split(p, &split);
                let mut c = 0.0;
                let mut cp = 0.0;
                let mut gc = [0.0; 2];
                for k in 0..4 {
                    let cn = state.c[e.nodes[k]];
                    c += q.vals[k] * cn;
                    cp += q.vals[k] * state.c_prev[e.nodes[k]];
                    gc[0] += q.grads[k][0] * cn;
                    gc[1] += q.grads[k][1] * cn;
                }
                let g = (1.0 - c) * (1.0 - c);
                let mut sig_eff = sig_m;
                mat_add_scaled(&mut sig_eff, g, &sig_p);
                let viol = ramp_minus(c - cp);

                for k in 0..4 {
                    let gr = q.grads[k];
                    f[e.u_dofs[2 * k]] += q.wdet * (sig_eff[0][0] * gr[0] + sig_eff[0][1] * gr[1]);
                    f[e.u_dofs[2 * k + 1]] +=
                        q.wdet * (sig_eff[1][0] * gr[0] + sig_eff[1][1] * gr[1]);
                    let fc = 2.0 * (c - 1.0) * psi_p * q.vals[k]
                        + (p.g_c / p.l_s) * c * q.vals[k]
                        + p.g_c * p.l_s * (gc[0] * gr[0] + gc[1] * gr[1])
                        + p.gamma * viol * q.vals[k];
                    f[2 * n + e.nodes[k]] += q.wdet * fc;
                }
            }
        }
        for (dof, _) in self.dofmap.constraints() {
            f[dof] = 0.0;
        }
        Ok(f)
    }

    /// Second variation of the total energy as four sparse blocks, with
    /// Dirichlet rows/columns eliminated (unit diagonal on the constrained
    /// dofs). `J_cu` is the exact transpose of `J_uc`.
    pub fn jacobian(&self, state: &SystemState) -> Result<BlockJacobian, ModelError> {
        self.jacobian_selected(state, true, true, true)
    }

    /// Like `jacobian`, but assembles only the requested blocks; a skipped
    /// block comes back as its all-zero sparsity template. Lets callers
    /// that already hold a block assembled at the same state (the Schwarz
    /// preconditioners) avoid recomputing it.
    pub fn jacobian_selected(
        &self,
        state: &SystemState,
        need_uu: bool,
        need_uc: bool,
        need_cc: bool,
    ) -> Result<BlockJacobian, ModelError> {
        self.check_state(state)?;
        let p = &self.params;
        let n = self.n_nodes();
        let mut uu = self.pattern_uu.clone();
        let mut uc = self.pattern_uc.clone();
        let mut cu = self.pattern_cu.clone();
        let mut cc = self.pattern_cc.clone();
        let mut constrained = vec![false; 3 * n];
        for (dof, _) in self.dofmap.constraints() {
            constrained[dof] = true;
        }

        let mut k_uu = [0.0f64; 64];
        let mut k_uc = [0.0f64; 32];
        let mut k_cc = [0.0f64; 16];
        for e in &self.elems {
            k_uu.fill(0.0);
            k_uc.fill(0.0);
            k_cc.fill(0.0);
            for q in &e.qp {
                let eps = self.qp_strain(e, q, &state.u);
                let split = spectral_split(eps);
                let mut c = 0.0;
                let mut cp = 0.0;
                for k in 0..4 {
                    c += q.vals[k] * state.c[e.nodes[k]];
                    cp += q.vals[k] * state.c_prev[e.nodes[k]];
                }
                let g = (1.0 - c) * (1.0 - c);

                if need_uu {
                    // Tangent applied to each displacement basis strain.
                    let mut t_eff = [[[0.0f64; 2]; 2]; 8];
                    for j in 0..4 {
                        for l in 0..2 {
                            let mut basis = [[0.0; 2]; 2];
                            // sym(e_l ⊗ grad_j)
                            basis[l][0] += 0.5 * q.grads[j][0];
                            basis[l][1] += 0.5 * q.grads[j][1];
                            basis[0][l] += 0.5 * q.grads[j][0];
                            basis[1][l] += 0.5 * q.grads[j][1];
                            let tp = split_tangent_apply(p, &split, 1, &basis);
                            let tm = split_tangent_apply(p, &split, -1, &basis);
                            let mut t = tm;
                            mat_add_scaled(&mut t, g, &tp);
                            t_eff[2 * j + l] = t;
                        }
                    }
                    for row in 0..8 {
                        let i = row / 2;
                        let k = row % 2;
                        let gi = q.grads[i];
                        for col in row..8 {
                            let t = &t_eff[col];
                            k_uu[row * 8 + col] += q.wdet * (t[k][0] * gi[0] + t[k][1] * gi[1]);
                        }
                    }
                }
                if need_uc {
                    let (sig_p, _) = stresses_split(p, &split);
                    for row in 0..8 {
                        let i = row / 2;
                        let k = row % 2;
                        let gi = q.grads[i];
                        // Coupling: ∂F_u/∂c = 2(c-1) φ_j (σ⁺ ∇φ_i)_k.
                        let su = sig_p[k][0] * gi[0] + sig_p[k][1] * gi[1];
                        for j in 0..4 {
                            k_uc[row * 4 + j] += q.wdet * 2.0 * (c - 1.0) * q.vals[j] * su;
                        }
                    }
                }
                if need_cc {
                    let (psi_p, _) = energy_densities_split(p, &split);
                    let mass_coef =
                        2.0 * psi_p + p.g_c / p.l_s + p.gamma * heaviside_minus(c - cp);
                    for i in 0..4 {
                        for j in i..4 {
                            k_cc[i * 4 + j] += q.wdet
                                * (mass_coef * q.vals[i] * q.vals[j]
                                    + p.g_c
                                        * p.l_s
                                        * (q.grads[i][0] * q.grads[j][0]
                                            + q.grads[i][1] * q.grads[j][1]));
                        }
                    }
                }
            }
            // Mirror upper triangles for exact symmetry.
            for row in 0..8 {
                for col in 0..row {
                    k_uu[row * 8 + col] = k_uu[col * 8 + row];
                }
            }
            for i in 0..4 {
                for j in 0..i {
                    k_cc[i * 4 + j] = k_cc[j * 4 + i];
                }
            }

            // Scatter with Dirichlet masking.
            for row in 0..8 {
                let gr = e.u_dofs[row];
                if constrained[gr] {
                    continue;
                }
                if need_uu {
                    for col in 0..8 {
                        let gc = e.u_dofs[col];
                        if !constrained[gc] {
                            uu.add_at(gr, gc, k_uu[row * 8 + col]);
                        }
                    }
                }
                if need_uc {
                    for j in 0..4 {
                        let gcn = e.nodes[j];
                        if !constrained[2 * n + gcn] {
                            let v = k_uc[row * 4 + j];
                            uc.add_at(gr, gcn, v);
                            cu.add_at(gcn, gr, v);
                        }
                    }
                }
            }
            if need_cc {
                for i in 0..4 {
                    let gi = e.nodes[i];
                    if constrained[2 * n + gi] {
                        continue;
                    }
                    for j in 0..4 {
                        let gj = e.nodes[j];
                        if !constrained[2 * n + gj] {
                            cc.add_at(gi, gj, k_cc[i * 4 + j]);
                        }
                    }
                }
            }
        }

        for (dof, _) in self.dofmap.constraints() {
            if dof < 2 * n && need_uu {
                uu.set_at(dof, dof, 1.0);
            } else if dof >= 2 * n && need_cc {
                cc.set_at(dof - 2 * n, dof - 2 * n, 1.0);
            }
        }
        Ok(BlockJacobian { uu, uc, cu, cc })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm2, norm_inf};
    use crate::mesh::build_rect_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(lambda: f64, mu: f64) -> MaterialParams {
        MaterialParams::new(lambda, mu, 2.7e-3, 0.02, 1e-2).unwrap()
    }

    fn mat_close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (0..2).all(|r| (0..2).all(|c| (a[r][c] - b[r][c]).abs() <= tol))
    }

    #[test]
    fn split_diagonal_tension() {
        let s = spectral_split([[1.0, 0.0], [0.0, 0.0]]);
        assert!(mat_close(&s.eps_plus, &[[1.0, 0.0], [0.0, 0.0]], 1e-14));
        assert!(mat_close(&s.eps_minus, &[[0.0, 0.0], [0.0, 0.0]], 1e-14));
        assert!((s.tr_plus - 1.0).abs() <= 1e-14 && s.tr_minus == 0.0);
    }

    #[test]
    fn split_pure_compression() {
        let s = spectral_split([[-1.0, 0.0], [0.0, -1.0]]);
        assert!(mat_close(&s.eps_plus, &[[0.0; 2]; 2], 1e-14));
        assert!(mat_close(&s.eps_minus, &[[-1.0, 0.0], [0.0, -1.0]], 1e-14));
        assert!((s.tr_minus + 2.0).abs() <= 1e-14 && s.tr_plus == 0.0);
    }

    #[test]
    fn split_pure_shear() {
        let s = spectral_split([[0.0, 1.0], [1.0, 0.0]]);
        assert!((s.eig[0] + 1.0).abs() <= 1e-14 && (s.eig[1] - 1.0).abs() <= 1e-14);
        assert!(mat_close(&s.eps_plus, &[[0.5, 0.5], [0.5, 0.5]], 1e-14));
        assert!(mat_close(&s.eps_minus, &[[-0.5, 0.5], [0.5, -0.5]], 1e-14));
        // Parts must recompose the strain.
        let sum = [
            [s.eps_plus[0][0] + s.eps_minus[0][0], s.eps_plus[0][1] + s.eps_minus[0][1]],
            [s.eps_plus[1][0] + s.eps_minus[1][0], s.eps_plus[1][1] + s.eps_minus[1][1]],
        ];
        assert!(mat_close(&sum, &[[0.0, 1.0], [1.0, 0.0]], 1e-14));
    }

    #[test]
    fn split_matches_dense_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            let d = rng.gen_range(-1.0..1.0);
            let eps = [[a, b], [b, d]];
            let s = spectral_split(eps);

            let m = nalgebra::Matrix2::new(a, b, b, d);
            let eig = m.symmetric_eigen();
            let mut vals = [eig.eigenvalues[0], eig.eigenvalues[1]];
            vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
            assert!((s.eig[0] - vals[0]).abs() <= 1e-12);
            assert!((s.eig[1] - vals[1]).abs() <= 1e-12);

            // Recomposition and semidefiniteness of the parts.
            for r in 0..2 {
                for c in 0..2 {
                    assert!((s.eps_plus[r][c] + s.eps_minus[r][c] - eps[r][c]).abs() <= 1e-12);
                }
            }
            let plus_eig = spectral_split(s.eps_plus).eig;
            let minus_eig = spectral_split(s.eps_minus).eig;
            assert!(plus_eig[0] >= -1e-12);
            assert!(minus_eig[1] <= 1e-12);
            assert!((s.tr_plus + s.tr_minus - (a + d)).abs() <= 1e-12);
        }
    }

    #[test]
    fn eigenvector_sign_convention() {
        let s = spectral_split([[0.0, 1.0], [1.0, 0.0]]);
        for v in s.vecs {
            let first = if v[0].abs() > 1e-12 { v[0] } else { v[1] };
            assert!(first > 0.0);
        }
    }

    #[test]
    fn energy_density_examples() {
        let p = params(1.0, 1.0);
        assert_eq!(energy_densities(&p, [[0.0; 2]; 2]), (0.0, 0.0));
        let a = 0.7;
        let (plus, minus) = energy_densities(&p, [[a, 0.0], [0.0, 0.0]]);
        assert!((plus - 1.5 * a * a).abs() <= 1e-14);
        assert_eq!(minus, 0.0);
        let (plus, minus) = energy_densities(&p, [[-1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(plus, 0.0);
        assert!((minus - 4.0).abs() <= 1e-14);
    }

    #[test]
    fn energy_split_adds_up_for_definite_strain() {
        let p = params(2.0, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = rng.gen_range(0.1..1.0);
            let d = rng.gen_range(0.1..1.0);
            let b = rng.gen_range(-0.09..0.09);
            // Diagonally dominant positive matrix: positive definite.
            let eps = [[a, b], [b, d]];
            let s = spectral_split(eps);
            if s.eig[0] <= 0.0 {
                continue;
            }
            let (plus, minus) = energy_densities(&p, eps);
            assert_eq!(minus, 0.0);
            let tr = a + d;
            let unsplit = 0.5 * p.lambda * tr * tr + p.mu * mat_inner(&eps, &eps);
            assert!((plus - unsplit).abs() <= 1e-12 * unsplit.max(1.0));
        }
    }

    #[test]
    fn stress_examples() {
        let p = MaterialParams::new(2.0, 1.0, 1e-3, 0.01, 1e-2).unwrap();
        let (sp, sm) = stresses(&p, [[0.0; 2]; 2]);
        assert!(mat_close(&sp, &[[0.0; 2]; 2], 0.0));
        assert!(mat_close(&sm, &[[0.0; 2]; 2], 0.0));
        let (sp, sm) = stresses(&p, [[1.0, 0.0], [0.0, 1.0]]);
        assert!(mat_close(&sp, &[[6.0, 0.0], [0.0, 6.0]], 1e-13));
        assert!(mat_close(&sm, &[[0.0; 2]; 2], 1e-13));
    }

    #[test]
    fn stress_is_fd_gradient_of_energy() {
        let p = params(1.3, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        let mut tested = 0;
        for _ in 0..100 {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            let d = rng.gen_range(-1.0..1.0);
            let eps = [[a, b], [b, d]];
            let s = spectral_split(eps);
            // Stay away from ramp kinks where ψ± is not differentiable.
            if s.eig[1] - s.eig[0] < 1e-3
                || s.eig[0].abs() < 1e-3
                || s.eig[1].abs() < 1e-3
                || (a + d).abs() < 1e-3
            {
                continue;
            }
            tested += 1;
            let (sp, sm) = stresses(&p, eps);
            for r in 0..2 {
                for c in 0..2 {
                    let mut ep = eps;
                    let mut em = eps;
                    // Perturb symmetrically to stay on symmetric tensors.
                    ep[r][c] += h;
                    ep[c][r] = ep[r][c];
                    em[r][c] -= h;
                    em[c][r] = em[r][c];
                    let dplus = (energy_densities(&p, ep).0 - energy_densities(&p, em).0) / (2.0 * h);
                    let dminus = (energy_densities(&p, ep).1 - energy_densities(&p, em).1) / (2.0 * h);
                    // Off-diagonal perturbation moves two entries at once.
                    let scale = if r == c { 1.0 } else { 2.0 };
                    assert!(
                        (dplus - scale * sp[r][c]).abs() <= 1e-5 * (1.0 + dplus.abs()),
                        "sigma_plus[{r}][{c}] fd {dplus} vs {}",
                        scale * sp[r][c]
                    );
                    assert!(
                        (dminus - scale * sm[r][c]).abs() <= 1e-5 * (1.0 + dminus.abs()),
                        "sigma_minus[{r}][{c}] fd {dminus} vs {}",
                        scale * sm[r][c]
                    );
                }
            }
        }
        assert!(tested > 30, "only {tested} samples away from kinks");
    }

    #[test]
    fn split_tangent_is_fd_derivative_of_stress() {
        let p = params(121.15, 80.77);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-7;
        let mut tested = 0;
        for _ in 0..200 {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            let d = rng.gen_range(-1.0..1.0);
            let eps = [[a, b], [b, d]];
            let s = spectral_split(eps);
            if s.eig[1] - s.eig[0] < 1e-2
                || s.eig[0].abs() < 1e-2
                || s.eig[1].abs() < 1e-2
                || (a + d).abs() < 1e-2
            {
                continue;
            }
            tested += 1;
            let da = rng.gen_range(-1.0..1.0);
            let db = rng.gen_range(-1.0..1.0);
            let dd = rng.gen_range(-1.0..1.0);
            let deps = [[da, db], [db, dd]];
            for which in [1, -1] {
                let t = split_tangent_apply(&p, &s, which, &deps);
                let mut ep = eps;
                let mut em = eps;
                for r in 0..2 {
                    for c in 0..2 {
                        ep[r][c] += h * deps[r][c];
                        em[r][c] -= h * deps[r][c];
                    }
                }
                let pick = |pair: (Mat2, Mat2)| if which > 0 { pair.0 } else { pair.1 };
                let s_p = pick(stresses(&p, ep));
                let s_m = pick(stresses(&p, em));
                let scale = p.mu;
                for r in 0..2 {
                    for c in 0..2 {
                        let fd = (s_p[r][c] - s_m[r][c]) / (2.0 * h);
                        assert!(
                            (fd - t[r][c]).abs() <= 1e-5 * scale * (1.0 + fd.abs() / scale),
                            "tangent[{r}][{c}] which={which}: fd {fd} vs {}",
                            t[r][c]
                        );
                    }
                }
            }
        }
        assert!(tested > 40, "only {tested} samples away from kinks");
    }

    #[test]
    fn penalty_gamma_reference_values() {
        let g = penalty_gamma(2.7e-3, 0.003, 1e-2).unwrap();
        assert!((g - 8999.1).abs() <= 1e-9 * 8999.1);
        let g = penalty_gamma(5.4e-4, 0.01, 1e-2).unwrap();
        assert!((g - 539.946).abs() <= 1e-9 * 539.946);
        let g = penalty_gamma(1e-3, 0.06, 1e-2).unwrap();
        assert!((g - 166.65).abs() <= 1e-9 * 166.65);
        assert!(penalty_gamma(1.0, 1.0, 1.0).is_err());
        assert!(penalty_gamma(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn material_params_validate() {
        assert!(MaterialParams::new(0.0, 1.0, 1.0, 1.0, 0.1).is_ok());
        assert!(MaterialParams::new(1.0, 0.0, 1.0, 1.0, 0.1).is_err());
        assert!(MaterialParams::new(-2.0, 1.0, 1.0, 1.0, 0.1).is_err());
        let p = MaterialParams::new(1.0, 1.0, 2.0, 0.5, 0.1).unwrap();
        assert!((p.gamma - 2.0 / 0.5 * 99.0).abs() <= 1e-12);
        assert_eq!(p.c_omega, 2.0);
    }

    fn small_model(nx: usize, lambda: f64, mu: f64) -> FractureModel {
        let mesh = build_rect_mesh(1.0, 1.0, nx, nx, None).unwrap();
        let p = MaterialParams::new(lambda, mu, 2.7e-3, 0.1, 1e-2).unwrap();
        FractureModel::new(mesh, p).unwrap()
    }

    #[test]
    fn zero_state_has_zero_energy_and_residual() {
        let m = small_model(3, 121.15, 80.77);
        let st = SystemState::zero(m.n_nodes());
        let en = m.total_energy(&st).unwrap();
        assert_eq!(
            (en.elastic, en.fracture, en.penalty, en.total),
            (0.0, 0.0, 0.0, 0.0)
        );
        let f = m.residual(&st).unwrap();
        assert_eq!(norm_inf(&f), 0.0);
    }

    #[test]
    fn fully_broken_constant_field_energy() {
        let m = small_model(4, 1.0, 1.0);
        let n = m.n_nodes();
        let mut st = SystemState::zero(n);
        st.c = vec![1.0; n];
        st.c_prev = vec![1.0; n];
        let en = m.total_energy(&st).unwrap();
        let expect = m.params.g_c / (2.0 * m.params.l_s);
        assert!((en.fracture - expect).abs() <= 1e-12 * expect);
        assert_eq!(en.penalty, 0.0);
        assert_eq!(en.elastic, 0.0);
    }

    #[test]
    fn healing_violation_penalty_energy() {
        let m = small_model(4, 1.0, 1.0);
        let n = m.n_nodes();
        let mut st = SystemState::zero(n);
        st.c = vec![0.0; n];
        st.c_prev = vec![1.0; n];
        let en = m.total_energy(&st).unwrap();
        let expect = 0.5 * m.params.gamma;
        assert!((en.penalty - expect).abs() <= 1e-12 * expect);
        assert_eq!(en.fracture, 0.0);
    }

    #[test]
    fn uniform_phase_field_residual_is_mass_weighted() {
        let m = small_model(3, 121.15, 80.77);
        let n = m.n_nodes();
        let c0 = 0.4;
        let mut st = SystemState::zero(n);
        st.c = vec![c0; n];
        st.c_prev = vec![c0; n];
        let f = m.residual(&st).unwrap();
        assert_eq!(norm_inf(&f[..2 * n]), 0.0);

        // Oracle: scalar mass matrix times constant vector, scaled by
        // G_c c0 / l_s + the degradation term 2(c0-1)ψ⁺ which vanishes
        // at zero displacement.
        let mesh = &m.mesh;
        let q = Quadrature::gauss_2x2();
        let nodes = |e: usize| mesh.elements[e].to_vec();
        let mass = fem::assemble_matrix(mesh, n, n, nodes, nodes, |e| {
            let el = mesh.elements[e];
            let coords = [
                mesh.node_coords[el[0]],
                mesh.node_coords[el[1]],
                mesh.node_coords[el[2]],
                mesh.node_coords[el[3]],
            ];
            let mut local = vec![0.0; 16];
            for (pt, w) in q.points.iter().zip(&q.weights) {
                let (v, _) = fem::shape_eval(pt[0], pt[1]);
                let (det, _) = fem::qp_geometry(&coords, pt[0], pt[1]);
                for i in 0..4 {
                    for j in 0..4 {
                        local[i * 4 + j] += w * det * v[i] * v[j];
                    }
                }
            }
            local
        })
        .unwrap();
        let ones = vec![c0; n];
        let mut expect = vec![0.0; n];
        mass.spmv(&ones, &mut expect);
        for i in 0..n {
            let want = m.params.g_c / m.params.l_s * expect[i];
            assert!(
                (f[2 * n + i] - want).abs() <= 1e-12 * want.abs().max(1e-12),
                "node {i}: {} vs {want}",
                f[2 * n + i]
            );
        }
    }

    /// Random state with all quadrature points away from the ramp kinks
    /// and the penalty kink, so the energy is twice differentiable there.
    fn smooth_random_state(m: &FractureModel, seed: u64, penalty_active: bool) -> SystemState {
        let n = m.n_nodes();
        'seeds: for s in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + s);
            let mut st = SystemState::zero(n);
            for v in st.u.iter_mut() {
                *v = rng.gen_range(-0.01..0.01);
            }
            for i in 0..n {
                st.c[i] = rng.gen_range(0.05..0.8);
                st.c_prev[i] = if penalty_active {
                    st.c[i] + rng.gen_range(0.05..0.1)
                } else {
                    st.c[i] - rng.gen_range(0.05..0.1)
                };
            }
            for e in &m.elems {
                for q in &e.qp {
                    let eps = m.qp_strain(e, q, &st.u);
                    let sp = spectral_split(eps);
                    let tr = eps[0][0] + eps[1][1];
                    if sp.eig[1] - sp.eig[0] < 1e-3
                        || sp.eig[0].abs() < 1e-3
                        || sp.eig[1].abs() < 1e-3
                        || tr.abs() < 1e-3
                    {
                        continue 'seeds;
                    }
                    let mut c = 0.0;
                    let mut cp = 0.0;
                    for k in 0..4 {
                        c += q.vals[k] * st.c[e.nodes[k]];
                        cp += q.vals[k] * st.c_prev[e.nodes[k]];
                    }
                    if (c - cp).abs() < 1e-3 {
                        continue 'seeds;
                    }
                }
            }
            return st;
        }
        panic!("no smooth random state found");
    }

    #[test]
    fn residual_is_fd_gradient_of_energy() {
        for penalty_active in [false, true] {
            let m = small_model(2, 12.0, 8.0);
            let st = smooth_random_state(&m, 100, penalty_active);
            let f = m.residual(&st).unwrap();
            let n = m.n_nodes();
            let scale = norm_inf(&f);
            let h = 1e-6;
            for dof in 0..3 * n {
                let mut sp = st.clone();
                let mut sm = st.clone();
                if dof < 2 * n {
                    sp.u[dof] += h;
                    sm.u[dof] -= h;
                } else {
                    sp.c[dof - 2 * n] += h;
                    sm.c[dof - 2 * n] -= h;
                }
                let fd = (m.total_energy(&sp).unwrap().total - m.total_energy(&sm).unwrap().total)
                    / (2.0 * h);
                assert!(
                    (fd - f[dof]).abs() <= 1e-6 * scale + 1e-10,
                    "dof {dof} (penalty={penalty_active}): fd {fd} vs {}",
                    f[dof]
                );
            }
        }
    }

    #[test]
    fn jacobian_is_fd_derivative_of_residual() {
        for penalty_active in [false, true] {
            let m = small_model(2, 12.0, 8.0);
            let st = smooth_random_state(&m, 300, penalty_active);
            let jac = m.jacobian(&st).unwrap().to_monolithic();
            let n3 = 3 * m.n_nodes();
            let n = m.n_nodes();
            let scale = jac.max_abs();
            let h = 1e-6;
            for dof in 0..n3 {
                let mut sp = st.clone();
                let mut sm = st.clone();
                if dof < 2 * n {
                    sp.u[dof] += h;
                    sm.u[dof] -= h;
                } else {
                    sp.c[dof - 2 * n] += h;
                    sm.c[dof - 2 * n] -= h;
                }
                let fp = m.residual(&sp).unwrap();
                let fm = m.residual(&sm).unwrap();
                for row in 0..n3 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    let an = jac.get(row, dof);
                    assert!(
                        (fd - an).abs() <= 1e-5 * scale + 1e-9,
                        "J[{row}][{dof}] (penalty={penalty_active}): fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_is_symmetric_and_blocks_transpose() {
        let m = small_model(3, 121.15, 80.77);
        let st = smooth_random_state(&m, 500, true);
        let jac = m.jacobian(&st).unwrap();
        let uc_t = jac.uc.transpose();
        for i in 0..jac.cu.nrows() {
            let (ca, va) = jac.cu.row(i);
            let (cb, vb) = uc_t.row(i);
            assert_eq!(ca, cb);
            assert_eq!(va, vb);
        }
        let mono = jac.to_monolithic();
        assert!(mono.asymmetry() <= 1e-12 * mono.max_abs());
    }

    #[test]
    fn jacobian_at_zero_state_reduces_to_screened_laplacian() {
        let m = small_model(3, 121.15, 80.77);
        let n = m.n_nodes();
        let st = SystemState::zero(n);
        let jac = m.jacobian(&st).unwrap();
        assert_eq!(jac.uc.max_abs(), 0.0);
        assert_eq!(jac.cu.max_abs(), 0.0);

        // Oracle: G_c/l_s (M + l_s² K) with scalar mass and stiffness.
        let mesh = &m.mesh;
        let q = Quadrature::gauss_2x2();
        let nodes = |e: usize| mesh.elements[e].to_vec();
        let p = m.params;
        let oracle = fem::assemble_matrix(mesh, n, n, nodes, nodes, |e| {
            let el = mesh.elements[e];
            let coords = [
                mesh.node_coords[el[0]],
                mesh.node_coords[el[1]],
                mesh.node_coords[el[2]],
                mesh.node_coords[el[3]],
            ];
            let mut local = vec![0.0; 16];
            for (pt, w) in q.points.iter().zip(&q.weights) {
                let (v, _) = fem::shape_eval(pt[0], pt[1]);
                let (det, g) = fem::qp_geometry(&coords, pt[0], pt[1]);
                for i in 0..4 {
                    for j in 0..4 {
                        local[i * 4 + j] += w
                            * det
                            * (p.g_c / p.l_s * v[i] * v[j]
                                + p.g_c * p.l_s * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
                    }
                }
            }
            local
        })
        .unwrap();
        let scale = oracle.max_abs();
        for i in 0..n {
            for j in 0..n {
                assert!((jac.cc.get(i, j) - oracle.get(i, j)).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn full_damage_leaves_only_compressive_response() {
        let m = small_model(3, 121.15, 80.77);
        let n = m.n_nodes();
        let mut st = SystemState::zero(n);
        st.c = vec![1.0; n];
        st.c_prev = vec![1.0; n];
        // Uniaxial extension: σ⁻ = 0, so F_u must vanish entirely.
        for (i, c) in m.mesh.node_coords.iter().enumerate() {
            st.u[2 * i] = 0.03 * c[0];
        }
        let f = m.residual(&st).unwrap();
        assert!(norm_inf(&f[..2 * n]) <= 1e-14);
        // Uniaxial compression still carries force.
        for (i, c) in m.mesh.node_coords.iter().enumerate() {
            st.u[2 * i] = -0.03 * c[0];
        }
        let f = m.residual(&st).unwrap();
        assert!(norm2(&f[..2 * n]) > 1e-4);
    }

    #[test]
    fn constrained_dofs_zero_residual_and_unit_diagonal() {
        let mut m = small_model(2, 12.0, 8.0);
        let n = m.n_nodes();
        let bottom: Vec<usize> = m.mesh.select_nodes(|_, y| y == 0.0);
        for &node in &bottom {
            m.dofmap.constrain(2 * node, 0.0).unwrap();
            m.dofmap.constrain(2 * node + 1, 0.1).unwrap();
        }
        let c_node = bottom[0];
        m.dofmap.constrain(2 * n + c_node, 0.0).unwrap();
        let st = smooth_random_state(&m, 700, false);
        let f = m.residual(&st).unwrap();
        for (dof, _) in m.dofmap.constraints() {
            assert_eq!(f[dof], 0.0);
        }
        let jac = m.jacobian(&st).unwrap();
        for (dof, _) in m.dofmap.constraints() {
            if dof < 2 * n {
                assert_eq!(jac.uu.get(dof, dof), 1.0);
                let (_, vals) = jac.uc.row(dof);
                assert!(vals.iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(jac.cc.get(dof - 2 * n, dof - 2 * n), 1.0);
            }
        }
        let mono = jac.to_monolithic();
        assert!(mono.asymmetry() <= 1e-12 * mono.max_abs());
    }

    #[test]
    fn selective_assembly_matches_full_jacobian() {
        let mesh = build_rect_mesh(1.0, 1.0, 3, 3, None).unwrap();
        let mut m = FractureModel::new(mesh, params(121.15, 80.77)).unwrap();
        m.dofmap.constrain(0, 0.0).unwrap();
        m.dofmap.constrain(1, 0.0).unwrap();
        let st = smooth_random_state(&m, 41, true);
        let full = m.jacobian(&st).unwrap();
        let uu_only = m.jacobian_selected(&st, true, false, false).unwrap();
        assert_eq!(uu_only.uu, full.uu);
        assert_eq!(uu_only.uc.max_abs(), 0.0);
        assert_eq!(uu_only.cc.max_abs(), 0.0);
        let rest = m.jacobian_selected(&st, false, true, true).unwrap();
        assert_eq!(rest.uc, full.uc);
        assert_eq!(rest.cu, full.cu);
        assert_eq!(rest.cc, full.cc);
        assert_eq!(rest.uu.max_abs(), 0.0);
    }
}
