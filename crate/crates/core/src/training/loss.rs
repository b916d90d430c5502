use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ann::Gradient;
use crate::error::{Error, Result};
use crate::fem::{LoadParams, ResidualModel};
use crate::manifold::{PromAnnManifold, Variant};

/// Relative weights of the data and residual terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub omega_d: f64,
    pub omega_r: f64,
}

/// Global normalizers: the POD reference errors of the training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScalings {
    pub e_pod_d: f64,
    pub e_pod_r: f64,
}

impl LossScalings {
    pub fn from_manifold(manifold: &PromAnnManifold) -> Self {
        LossScalings {
            e_pod_d: manifold.bases.e_pod_d,
            e_pod_r: manifold.bases.e_pod_r,
        }
    }

    fn check(&self, weights: &LossWeights) -> Result<()> {
        if weights.omega_d > 0.0 && !(self.e_pod_d > 0.0) {
            return Err(Error::config("svd.n", "e_pod_d is zero, the data loss cannot be normalized"));
        }
        if weights.omega_r > 0.0 && !(self.e_pod_r > 0.0) {
            return Err(Error::config("svd.n", "e_pod_r is zero, the residual loss cannot be normalized"));
        }
        Ok(())
    }
}

/// Per-batch intermediate vectors; every column belongs to one sample.
#[derive(Debug, Clone)]
pub struct BatchWork {
    /// Encoded targets `q*_j`.
    pub q: DMatrix<f64>,
    /// `u_j = D(q*_j)`.
    pub predictions: DMatrix<f64>,
    /// `e_d,j = u_j - u*_j`, which is also the data cotangent `v_d,j`.
    pub e_d: DMatrix<f64>,
    /// `e_R,j = R(u_j) - R(u*_j)` when the residual term is active.
    pub e_r: Option<DMatrix<f64>>,
    /// `v_R,j = J(u_j)ᵀ e_R,j` when the residual term is active.
    pub v_r: Option<DMatrix<f64>>,
    /// Normalized data loss of the batch.
    pub data_loss: f64,
    /// Normalized residual loss of the batch, when computed.
    pub residual_loss: Option<f64>,
}

impl BatchWork {
    pub fn batch_size(&self) -> usize {
        self.q.ncols()
    }

    pub fn total_loss(&self, weights: &LossWeights) -> f64 {
        let mut l = 0.0;
        if weights.omega_d > 0.0 {
            l += weights.omega_d * self.data_loss;
        }
        if let (true, Some(r)) = (weights.omega_r > 0.0, self.residual_loss) {
            l += weights.omega_r * r;
        }
        l
    }
}

fn mean_sq(m: &DMatrix<f64>) -> f64 {
    m.norm_squared() / m.len() as f64
}

/// `L_d = (1/(m N e_pod_d)) sum_j |D(E(u*_j)) - u*_j|²`.
pub fn data_loss(manifold: &PromAnnManifold, u_star: &DMatrix<f64>, e_pod_d: f64) -> Result<f64> {
    if !(e_pod_d > 0.0) {
        return Err(Error::config("svd.n", "e_pod_d must be positive"));
    }
    let e = manifold.reconstruct_batch(u_star) - u_star;
    Ok(mean_sq(&e) / e_pod_d)
}

/// Loss on the secondary coordinates. For the scaled variant this is
/// `(1/(m N)) sum_j |Ξ̄(N(q*_j) - Ξ̄⁻¹Φ̄ᵀu*_j)|²`, which differs from the
/// unnormalized data loss only by a constant. For the original variant it is
/// `(1/m) sum_j |q̄*_j - N(q*_j)|²`.
pub fn compact_q_loss(manifold: &PromAnnManifold, u_star: &DMatrix<f64>) -> f64 {
    let q = manifold.encode_batch(u_star);
    let targets = manifold.secondary_targets(u_star);
    compact_q_loss_from_coords(manifold, &q, &targets)
}

/// [`compact_q_loss`] from precomputed coordinates and targets.
pub fn compact_q_loss_from_coords(
    manifold: &PromAnnManifold,
    q: &DMatrix<f64>,
    q_bar_target: &DMatrix<f64>,
) -> f64 {
    let m = q.ncols() as f64;
    let mut diff = manifold.net.forward_batch(q) - q_bar_target;
    match manifold.variant {
        Variant::Scaled => {
            for (i, mut row) in diff.row_iter_mut().enumerate() {
                row *= manifold.bases.xi_bar[i];
            }
            diff.norm_squared() / (m * manifold.n_dofs() as f64)
        }
        Variant::Original => diff.norm_squared() / m,
    }
}

/// [`compact_q_loss`] and its gradient from precomputed coordinates.
pub fn compact_q_loss_and_gradient(
    manifold: &PromAnnManifold,
    q: &DMatrix<f64>,
    q_bar_target: &DMatrix<f64>,
) -> (f64, Gradient) {
    let m = q.ncols() as f64;
    let diff = manifold.net.forward_batch(q) - q_bar_target;
    let (loss, cot) = match manifold.variant {
        Variant::Scaled => {
            let n = manifold.n_dofs() as f64;
            let mut weighted = diff.clone();
            let mut sq = diff.clone();
            for (i, (mut w, mut s)) in weighted.row_iter_mut().zip(sq.row_iter_mut()).enumerate() {
                let x = manifold.bases.xi_bar[i];
                s *= x;
                w *= x * x;
            }
            (sq.norm_squared() / (m * n), weighted * (2.0 / (m * n)))
        }
        Variant::Original => (diff.norm_squared() / m, &diff * (2.0 / m)),
    };
    (loss, manifold.net.grad_from_cotangents(q, &cot))
}

/// `e_R,j = R(u_j; mu) - R*_j` and `v_R,j = J(u_j)ᵀ e_R,j` for every column.
fn residual_errors<M: ResidualModel>(
    model: &M,
    predictions: &DMatrix<f64>,
    r_star: &DMatrix<f64>,
    mu_res: &LoadParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let cols: Vec<(DVector<f64>, DVector<f64>)> = (0..predictions.ncols())
        .into_par_iter()
        .map(|j| {
            let u = predictions.column(j).into_owned();
            let e = model.residual(&u, mu_res)? - r_star.column(j);
            let v = model.residual_vjp(&u, mu_res, &e)?;
            Ok((e, v))
        })
        .collect::<Result<_>>()?;
    let (e, v): (Vec<_>, Vec<_>) = cols.into_iter().unzip();
    Ok((DMatrix::from_columns(&e), DMatrix::from_columns(&v)))
}

/// `L_R = (1/(m N e_pod_r)) sum_j |R(D(E(u*_j)); mu) - R*_j|²` with the
/// cotangents `v_R,j`.
pub fn residual_loss_and_cotangents<M: ResidualModel>(
    manifold: &PromAnnManifold,
    model: &M,
    u_star: &DMatrix<f64>,
    r_star: &DMatrix<f64>,
    mu_res: &LoadParams,
    e_pod_r: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if !(e_pod_r > 0.0) {
        return Err(Error::config("svd.n", "e_pod_r must be positive"));
    }
    let pred = manifold.reconstruct_batch(u_star);
    let (e, v) = residual_errors(model, &pred, r_star, mu_res)?;
    Ok((mean_sq(&e) / e_pod_r, v))
}

/// Evaluates losses and cotangents of one batch. The residual term is
/// assembled only when `weights.omega_r > 0` or `force_residual` is set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_batch<M: ResidualModel>(
    manifold: &PromAnnManifold,
    model: &M,
    q_star: &DMatrix<f64>,
    u_star: &DMatrix<f64>,
    r_star: &DMatrix<f64>,
    mu_res: &LoadParams,
    weights: &LossWeights,
    scalings: &LossScalings,
    force_residual: bool,
) -> Result<BatchWork> {
    scalings.check(weights)?;
    let predictions = manifold.decode_batch(q_star);
    let e_d = &predictions - u_star;
    let data_loss = if scalings.e_pod_d > 0.0 {
        mean_sq(&e_d) / scalings.e_pod_d
    } else {
        f64::NAN
    };
    let (e_r, v_r, residual_loss) = if weights.omega_r > 0.0 || force_residual {
        let (e, v) = residual_errors(model, &predictions, r_star, mu_res)?;
        let l = mean_sq(&e) / scalings.e_pod_r;
        (Some(e), Some(v), Some(l))
    } else {
        (None, None, None)
    };
    Ok(BatchWork {
        q: q_star.clone(),
        predictions,
        e_d,
        e_r,
        v_r,
        data_loss,
        residual_loss,
    })
}

/// Weighted cotangents `c_j = (2/(m N)) (ω_R/e_R v_R,j + ω_d/e_d v_d,j)` in full space.
fn full_cotangents(
    work: &BatchWork,
    weights: &LossWeights,
    scalings: &LossScalings,
) -> Result<DMatrix<f64>> {
    let m = work.batch_size() as f64;
    let n = work.e_d.nrows() as f64;
    let mut c = DMatrix::zeros(work.e_d.nrows(), work.e_d.ncols());
    if weights.omega_d > 0.0 {
        c += &work.e_d * (weights.omega_d / scalings.e_pod_d);
    }
    if weights.omega_r > 0.0 {
        let v = work
            .v_r
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("residual cotangents were not computed".into()))?;
        c += v * (weights.omega_r / scalings.e_pod_r);
    }
    Ok(c * (2.0 / (m * n)))
}

/// Gradient of `ω_d L_d + ω_R L_R` with every cotangent frozen. Only the
/// secondary term of the decoder depends on the weights, so each full-space
/// cotangent is pulled back through `Φ̄ Ξ̄` and handed to the network as one
/// reverse sweep over the batch.
pub fn combined_gradient(
    manifold: &PromAnnManifold,
    work: &BatchWork,
    weights: &LossWeights,
    scalings: &LossScalings,
) -> Result<Gradient> {
    scalings.check(weights)?;
    let c = full_cotangents(work, weights, scalings)?;
    let mut net_cot = manifold.bases.phi_bar.tr_mul(&c);
    let s = manifold.secondary_scale();
    for (i, mut row) in net_cot.row_iter_mut().enumerate() {
        row *= s[i];
    }
    Ok(manifold.net.grad_from_cotangents(&work.q, &net_cot))
}

/// Reference gradient that forms, per sample, the full derivative of the
/// decoded state and of the residual with respect to every weight, then
/// contracts with the error vectors. Mathematically identical to
/// [`combined_gradient`] and orders of magnitude slower.
#[allow(clippy::too_many_arguments)]
pub fn naive_combined_gradient<M: ResidualModel>(
    manifold: &PromAnnManifold,
    model: &M,
    q_star: &DMatrix<f64>,
    u_star: &DMatrix<f64>,
    r_star: &DMatrix<f64>,
    mu_res: &LoadParams,
    weights: &LossWeights,
    scalings: &LossScalings,
) -> Result<DVector<f64>> {
    scalings.check(weights)?;
    const CHUNK: usize = 256;
    let m = q_star.ncols() as f64;
    let n = u_star.nrows() as f64;
    let p = manifold.net.parameter_count();
    let mut lift = manifold.bases.phi_bar.clone();
    let s = manifold.secondary_scale();
    for (k, mut col) in lift.column_iter_mut().enumerate() {
        col *= s[k];
    }
    let mut grad = DVector::zeros(p);
    for j in 0..q_star.ncols() {
        let q = q_star.column(j).into_owned();
        let u = manifold.decode(&q);
        let e_d = &u - u_star.column(j);
        let net_jac = manifold.net.parameter_jacobian(&q);
        let (e_r, jac) = if weights.omega_r > 0.0 {
            let e = model.residual(&u, mu_res)? - r_star.column(j);
            (Some(e), Some(model.jacobian(&u, mu_res)?))
        } else {
            (None, None)
        };
        let mut start = 0;
        while start < p {
            let width = CHUNK.min(p - start);
            let du = &lift * net_jac.columns(start, width);
            let mut g = DVector::zeros(width);
            if weights.omega_d > 0.0 {
                g += du.tr_mul(&e_d) * (weights.omega_d / scalings.e_pod_d);
            }
            if let (Some(e), Some(jac)) = (&e_r, &jac) {
                let dr = jac.mul_dense(&du);
                g += dr.tr_mul(e) * (weights.omega_r / scalings.e_pod_r);
            }
            let mut dst = grad.rows_mut(start, width);
            dst += g * (2.0 / (m * n));
            start += width;
        }
    }
    Ok(grad)
}
