//! Nonlinear static FEM kernel: residuals, tangents, vector-Jacobian products and
//! the full-order Newton solve.

mod material;
mod mesh;
mod model;
pub mod newton;
pub mod sparse;
mod spring_chain;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use material::NeoHookean;
pub use mesh::Mesh;
pub use model::{FemModel, DEFAULT_POISSON_RATIO, DEFAULT_YOUNGS_MODULUS};
pub use newton::{NewtonConfig, NewtonReport};
pub use sparse::{BandedLu, CsrMatrix, SparseJacobian};
pub use spring_chain::SpringChain;

use crate::error::Result;

/// Right-edge line loads in N/m.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub px: f64,
    pub py: f64,
}

impl LoadParams {
    pub const fn new(px: f64, py: f64) -> Self {
        LoadParams { px, py }
    }
}

/// A discrete residual `R(u; load)` over free dofs with its tangent.
///
/// Implementations must be pure in `(u, load)` so that distinct states can be
/// evaluated concurrently.
pub trait ResidualModel: Sync {
    fn n_dofs(&self) -> usize;

    fn residual(&self, u: &DVector<f64>, load: &LoadParams) -> Result<DVector<f64>>;

    fn jacobian(&self, u: &DVector<f64>, load: &LoadParams) -> Result<SparseJacobian>;

    /// `wᵀ dR/du`. The default assembles the tangent first.
    fn residual_vjp(
        &self,
        u: &DVector<f64>,
        load: &LoadParams,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.jacobian(u, load)?.tr_mul_vec(w))
    }
}

impl FemModel {
    /// Full-order solution for `load`.
    pub fn solve_fom(&self, load: &LoadParams, cfg: &NewtonConfig) -> Result<DVector<f64>> {
        newton::solve(self, load, cfg).map(|(u, _)| u)
    }
}
