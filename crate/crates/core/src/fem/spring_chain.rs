use nalgebra::DVector;

use super::sparse::{CsrMatrix, SparseJacobian};
use super::{LoadParams, ResidualModel};
use crate::error::Result;

/// Fixed-end chain of cubic-hardening springs with a point load on the free end.
///
/// Spring `i` connects dof `i - 1` (or the wall) to dof `i` and carries force
/// `k d + alpha d³` for elongation `d`. The end load is taken from `load.px`.
/// Small and fully nonlinear, this is the fast oracle model for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringChain {
    pub stiffness: f64,
    pub hardening: f64,
    pub n_dof: usize,
}

impl SpringChain {
    pub fn new(stiffness: f64, hardening: f64, n_dof: usize) -> Self {
        assert!(n_dof >= 1, "spring chain needs at least one dof");
        SpringChain {
            stiffness,
            hardening,
            n_dof,
        }
    }

    fn elongation(u: &DVector<f64>, i: usize) -> f64 {
        if i == 0 {
            u[0]
        } else {
            u[i] - u[i - 1]
        }
    }

    fn force(&self, d: f64) -> f64 {
        self.stiffness * d + self.hardening * d * d * d
    }

    fn force_slope(&self, d: f64) -> f64 {
        self.stiffness + 3.0 * self.hardening * d * d
    }

    pub fn spring_chain_residual(&self, u: &DVector<f64>, load_scalar: f64) -> DVector<f64> {
        let n = self.n_dof;
        let forces: Vec<f64> = (0..n).map(|i| self.force(Self::elongation(u, i))).collect();
        DVector::from_fn(n, |i, _| {
            let next = if i + 1 < n { forces[i + 1] } else { 0.0 };
            let ext = if i + 1 == n { load_scalar } else { 0.0 };
            forces[i] - next - ext
        })
    }

    pub fn spring_chain_jacobian(&self, u: &DVector<f64>) -> CsrMatrix {
        let n = self.n_dof;
        let slopes: Vec<f64> = (0..n).map(|i| self.force_slope(Self::elongation(u, i))).collect();
        let mut triplets = Vec::with_capacity(3 * n);
        for i in 0..n {
            let next = if i + 1 < n { slopes[i + 1] } else { 0.0 };
            triplets.push((i, i, slopes[i] + next));
            if i > 0 {
                triplets.push((i, i - 1, -slopes[i]));
            }
            if i + 1 < n {
                triplets.push((i, i + 1, -slopes[i + 1]));
            }
        }
        CsrMatrix::from_triplets(n, &triplets)
    }
}

impl ResidualModel for SpringChain {
    fn n_dofs(&self) -> usize {
        self.n_dof
    }

    fn residual(&self, u: &DVector<f64>, load: &LoadParams) -> Result<DVector<f64>> {
        Ok(self.spring_chain_residual(u, load.px))
    }

    fn jacobian(&self, u: &DVector<f64>, _load: &LoadParams) -> Result<SparseJacobian> {
        Ok(self.spring_chain_jacobian(u))
    }
}
