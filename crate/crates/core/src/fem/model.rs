use nalgebra::DVector;

use super::material::{Mat2, NeoHookean};
use super::mesh::Mesh;
use super::sparse::{CsrMatrix, SparseJacobian};
use super::{LoadParams, ResidualModel};
use crate::error::{Error, Result};

/// Default Young's modulus (Pa) of a soft rubber. Loads of 3000 N/m then
/// deflect the 2 m beam by up to about 1.4 m.
pub const DEFAULT_YOUNGS_MODULUS: f64 = 3.0e5;
/// Default Poisson ratio.
pub const DEFAULT_POISSON_RATIO: f64 = 0.40;

#[derive(Debug, Clone)]
struct Element {
    area: f64,
    // reference shape-function gradients dN_a/dX_J
    grads: [[f64; 2]; 3],
    // free-dof index of local dof 2a + i, None when constrained
    free: [Option<usize>; 6],
    // value-array position of local entry (r, c) at r * 6 + c
    scatter: [Option<usize>; 36],
}

/// Plane-strain hyperelastic cantilever clamped on its left edge and loaded by
/// uniform line tractions on its right edge.
///
/// All state vectors hold free dofs only; constrained dofs are implicitly zero.
#[derive(Debug, Clone)]
pub struct FemModel {
    mesh: Mesh,
    youngs_modulus: f64,
    poisson_ratio: f64,
    material: NeoHookean,
    dirichlet_dofs: Vec<bool>,
    free_index: Vec<Option<usize>>,
    free_to_global: Vec<usize>,
    elements: Vec<Element>,
    pattern: CsrMatrix,
    unit_traction_x: DVector<f64>,
    unit_traction_y: DVector<f64>,
}

impl FemModel {
    pub fn new(mesh: Mesh, youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        mesh.validate()?;
        if !(youngs_modulus > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Young's modulus must be positive, got {youngs_modulus}"
            )));
        }
        if !(poisson_ratio > 0.0 && poisson_ratio < 0.5) {
            return Err(Error::InvalidInput(format!(
                "Poisson ratio must lie in (0, 0.5), got {poisson_ratio}"
            )));
        }
        let n_total = 2 * mesh.node_count();
        let mut dirichlet_dofs = vec![false; n_total];
        for &node in &mesh.left_edge_nodes {
            dirichlet_dofs[2 * node] = true;
            dirichlet_dofs[2 * node + 1] = true;
        }
        let mut free_index = vec![None; n_total];
        let mut free_to_global = Vec::new();
        for (g, &fixed) in dirichlet_dofs.iter().enumerate() {
            if !fixed {
                free_index[g] = Some(free_to_global.len());
                free_to_global.push(g);
            }
        }
        let n_free = free_to_global.len();

        let mut rows = vec![Vec::new(); n_free];
        let mut elements = Vec::with_capacity(mesh.triangles.len());
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let area = mesh.signed_area(t);
            let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.node_coordinates[v]).collect();
            // gradients of barycentric coordinates
            let inv2a = 1.0 / (2.0 * area);
            let grads = [
                [(p[1][1] - p[2][1]) * inv2a, (p[2][0] - p[1][0]) * inv2a],
                [(p[2][1] - p[0][1]) * inv2a, (p[0][0] - p[2][0]) * inv2a],
                [(p[0][1] - p[1][1]) * inv2a, (p[1][0] - p[0][0]) * inv2a],
            ];
            let mut free = [None; 6];
            for (a, &v) in tri.iter().enumerate() {
                for i in 0..2 {
                    free[2 * a + i] = free_index[2 * v + i];
                }
            }
            for r in free.iter().flatten() {
                for c in free.iter().flatten() {
                    rows[*r].push(*c);
                }
            }
            elements.push(Element {
                area,
                grads,
                free,
                scatter: [None; 36],
            });
        }
        let pattern = CsrMatrix::from_pattern(rows);
        for e in &mut elements {
            for r in 0..6 {
                for c in 0..6 {
                    if let (Some(fr), Some(fc)) = (e.free[r], e.free[c]) {
                        e.scatter[r * 6 + c] = pattern.position(fr, fc);
                    }
                }
            }
        }

        // consistent nodal integration of a constant traction along the right edge
        let mut edge = mesh.right_edge_nodes.clone();
        edge.sort_by(|&a, &b| {
            mesh.node_coordinates[a][1].total_cmp(&mesh.node_coordinates[b][1])
        });
        let mut unit_traction_x = DVector::zeros(n_free);
        let mut unit_traction_y = DVector::zeros(n_free);
        for pair in edge.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (pa, pb) = (mesh.node_coordinates[a], mesh.node_coordinates[b]);
            let half = 0.5 * ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            for v in [a, b] {
                if let Some(fx) = free_index[2 * v] {
                    unit_traction_x[fx] += half;
                }
                if let Some(fy) = free_index[2 * v + 1] {
                    unit_traction_y[fy] += half;
                }
            }
        }

        Ok(FemModel {
            material: NeoHookean::from_young_poisson(youngs_modulus, poisson_ratio),
            mesh,
            youngs_modulus,
            poisson_ratio,
            dirichlet_dofs,
            free_index,
            free_to_global,
            elements,
            pattern,
            unit_traction_x,
            unit_traction_y,
        })
    }

    /// The default desk-scale cantilever: 40 x 10 cells on a 2.0 m x 0.5 m beam.
    pub fn desk_cantilever() -> Self {
        let mesh = Mesh::cantilever(40, 10, 2.0, 0.5).expect("valid default mesh");
        Self::new(mesh, DEFAULT_YOUNGS_MODULUS, DEFAULT_POISSON_RATIO).expect("valid default model")
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn youngs_modulus(&self) -> f64 {
        self.youngs_modulus
    }

    pub fn poisson_ratio(&self) -> f64 {
        self.poisson_ratio
    }

    pub fn material(&self) -> NeoHookean {
        self.material
    }

    pub fn dirichlet_dofs(&self) -> &[bool] {
        &self.dirichlet_dofs
    }

    pub fn free_dof_count(&self) -> usize {
        self.free_to_global.len()
    }

    /// Free-dof index of global dof `2 * node + component`.
    pub fn free_index(&self, global_dof: usize) -> Option<usize> {
        self.free_index[global_dof]
    }

    pub fn free_to_global(&self) -> &[usize] {
        &self.free_to_global
    }

    /// Nodal force of the right-edge traction `(px, py)`.
    pub fn external_force(&self, load: &LoadParams) -> DVector<f64> {
        &self.unit_traction_x * load.px + &self.unit_traction_y * load.py
    }

    /// Nodal displacements with the constrained dofs reinserted as zeros.
    pub fn nodal_displacements(&self, u: &DVector<f64>) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.mesh.node_count()];
        for (f, &g) in self.free_to_global.iter().enumerate() {
            out[g / 2][g % 2] = u[f];
        }
        out
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.free_dof_count() {
            return Err(Error::DimensionMismatch {
                expected: self.free_dof_count(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `H = sum_a u_a ⊗ grad N_a`, formed from nodal differences relative to the
    /// first vertex. Since the shape gradients sum to zero this is exact
    /// algebraically, and it avoids rounding errors proportional to the rigid
    /// part of the motion.
    #[inline]
    fn displacement_gradient(e: &Element, u: &DVector<f64>) -> Mat2 {
        let nodal = |a: usize, i: usize| e.free[2 * a + i].map_or(0.0, |idx| u[idx]);
        let mut h = [[0.0, 0.0], [0.0, 0.0]];
        for i in 0..2 {
            let base = nodal(0, i);
            for a in 1..3 {
                let d = nodal(a, i) - base;
                h[i][0] += d * e.grads[a][0];
                h[i][1] += d * e.grads[a][1];
            }
        }
        h
    }

    /// Internal nodal forces `f_int(u)` at the free dofs.
    pub fn internal_force(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(u)?;
        let mut out = DVector::<f64>::zeros(self.free_dof_count());
        for (t, e) in self.elements.iter().enumerate() {
            let h = Self::displacement_gradient(e, u);
            let p = self
                .material
                .first_piola_from_gradient(&h)
                .map_err(|det| Error::DegenerateState { element: t, det })?;
            for a in 0..3 {
                for i in 0..2 {
                    if let Some(idx) = e.free[2 * a + i] {
                        out[idx] += e.area * (p[i][0] * e.grads[a][0] + p[i][1] * e.grads[a][1]);
                    }
                }
            }
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateState {
                element: usize::MAX,
                det: f64::NAN,
            });
        }
        Ok(out)
    }

    /// `R(u; load) = f_int(u) - f_ext(load)`.
    pub fn assemble_residual(&self, u: &DVector<f64>, load: &LoadParams) -> Result<DVector<f64>> {
        Ok(self.internal_force(u)? - self.external_force(load))
    }

    #[inline]
    fn element_stiffness(&self, t: usize, e: &Element, u: &DVector<f64>) -> Result<[[f64; 6]; 6]> {
        let h = Self::displacement_gradient(e, u);
        let f = [[1.0 + h[0][0], h[0][1]], [h[1][0], 1.0 + h[1][1]]];
        let (_, tangent) = self
            .material
            .stress_and_tangent(&f)
            .map_err(|det| Error::DegenerateState { element: t, det })?;
        let mut ke = [[0.0; 6]; 6];
        for a in 0..3 {
            for i in 0..2 {
                for b in 0..3 {
                    for k in 0..2 {
                        let mut s = 0.0;
                        for jj in 0..2 {
                            for l in 0..2 {
                                s += e.grads[a][jj] * tangent[i][jj][k][l] * e.grads[b][l];
                            }
                        }
                        ke[2 * a + i][2 * b + k] = e.area * s;
                    }
                }
            }
        }
        Ok(ke)
    }

    /// Consistent tangent `dR/du`. The load enters only the residual, so the
    /// result does not depend on it.
    pub fn assemble_jacobian(&self, u: &DVector<f64>, _load: &LoadParams) -> Result<SparseJacobian> {
        self.check_len(u)?;
        let mut jac = self.pattern.clone();
        let values = jac.values_mut();
        for (t, e) in self.elements.iter().enumerate() {
            let ke = self.element_stiffness(t, e, u)?;
            for r in 0..6 {
                for c in 0..6 {
                    if let Some(pos) = e.scatter[r * 6 + c] {
                        values[pos] += ke[r][c];
                    }
                }
            }
        }
        Ok(jac)
    }

    /// `wᵀ J(u)` computed element by element, never assembling `J`.
    pub fn residual_vjp(
        &self,
        u: &DVector<f64>,
        _load: &LoadParams,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_len(u)?;
        self.check_len(w)?;
        let mut out = DVector::<f64>::zeros(self.free_dof_count());
        for (t, e) in self.elements.iter().enumerate() {
            let we: [f64; 6] = std::array::from_fn(|r| e.free[r].map_or(0.0, |i| w[i]));
            if we.iter().all(|&x| x == 0.0) {
                // still validate the element state
                let h = Self::displacement_gradient(e, u);
                self.material
                    .first_piola_from_gradient(&h)
                    .map_err(|det| Error::DegenerateState { element: t, det })?;
                continue;
            }
            let ke = self.element_stiffness(t, e, u)?;
            for c in 0..6 {
                if let Some(idx) = e.free[c] {
                    let s: f64 = (0..6).map(|r| we[r] * ke[r][c]).sum();
                    out[idx] += s;
                }
            }
        }
        Ok(out)
    }
}

impl ResidualModel for FemModel {
    fn n_dofs(&self) -> usize {
        self.free_dof_count()
    }

    fn residual(&self, u: &DVector<f64>, load: &LoadParams) -> Result<DVector<f64>> {
        self.assemble_residual(u, load)
    }

    fn jacobian(&self, u: &DVector<f64>, load: &LoadParams) -> Result<SparseJacobian> {
        self.assemble_jacobian(u, load)
    }

    fn residual_vjp(
        &self,
        u: &DVector<f64>,
        load: &LoadParams,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        FemModel::residual_vjp(self, u, load, w)
    }
}
