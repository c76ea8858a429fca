//! Two-dimensional quasi-static brittle fracture solver.
//!
//! The crate simulates crack nucleation and growth in linear-elastic plates
//! with a phase-field description of the fracture surface. A scalar damage
//! field `c` (0 intact, 1 broken) is evolved together with the displacement
//! field `u` by minimizing a regularized energy functional under a
//! displacement-driven pseudo-time loading loop.
//!
//! Module map:
//! - [`mesh`]: structured quadrilateral meshes, notch seams, hole cutouts
//! - [`fem`]: bilinear shape functions, quadrature, dof maps, assembly
//! - [`model`]: energy, residual and Jacobian of the fracture functional
//! - [`linalg`]: CSR matrices, direct and Krylov linear solvers
//! - [`nonlinear`]: Newton variants with a strong-Wolfe line search
//! - [`am`]: alternate minimization over the two fields
//! - [`spin`]: field-split (additive/multiplicative) preconditioned Newton
//! - [`driver`]: benchmark definitions, loading loop, reports, CLI

pub mod am;
pub mod driver;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod nonlinear;
pub mod spin;
