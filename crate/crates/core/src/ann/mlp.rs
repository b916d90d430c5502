use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Right-continuous derivative, so `elu'(0) = 1`.
#[inline]
fn elu_slope(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Bias-free perceptron with ELU hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    /// `weights[l]` maps layer `l` to layer `l + 1` and has shape `dims[l+1] x dims[l]`.
    pub weights: Vec<DMatrix<f64>>,
}

/// One matrix per layer, shaped like [`MlpModel::weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<DMatrix<f64>>,
}

impl Gradient {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradient {
            layers: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &Gradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += b * alpha;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers.iter().map(|l| l.norm_squared()).sum::<f64>().sqrt()
    }

    /// Weights flattened layer by layer, column-major within a layer.
    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.layers.iter().map(|l| l.len()).sum(),
            self.layers.iter().flat_map(|l| l.iter().copied()),
        )
    }

    /// Inverse of [`Gradient::flatten`] for the layer shapes of `model`.
    pub fn from_flat(model: &MlpModel, flat: &DVector<f64>) -> Self {
        let mut offset = 0;
        let layers = model
            .weights
            .iter()
            .map(|w| {
                let l = DMatrix::from_column_slice(w.nrows(), w.ncols(), &flat.as_slice()[offset..offset + w.len()]);
                offset += w.len();
                l
            })
            .collect();
        Gradient { layers }
    }
}

/// Glorot-uniform initialization from a seeded ChaCha stream.
pub fn init_mlp(layer_dims: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_dims.len() < 3 {
        return Err(Error::config("ann.hidden", "need at least one hidden layer"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::config("ann.hidden", "layer widths must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = layer_dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            // fill row-major so the draw order does not depend on storage layout
            let vals: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            DMatrix::from_row_slice(fan_out, fan_in, &vals)
        })
        .collect();
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
    })
}

/// Pre-activations of every layer for a batch, kept for the reverse sweep.
struct Tape {
    /// `pre[l]` is the pre-activation of layer `l + 1`.
    pre: Vec<DMatrix<f64>>,
    /// `post[l]` is the input to weight matrix `l`.
    post: Vec<DMatrix<f64>>,
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// A network whose weights are all zero, so it maps everything to zero.
    pub fn zeroed(&self) -> MlpModel {
        MlpModel {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
        }
    }

    fn last(&self) -> usize {
        self.weights.len() - 1
    }

    fn record(&self, q: &DMatrix<f64>) -> Tape {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post = Vec::with_capacity(self.weights.len());
        let mut x = q.clone();
        for (l, w) in self.weights.iter().enumerate() {
            let z = w * &x;
            post.push(x);
            x = if l == self.last() { z.clone() } else { z.map(elu) };
            pre.push(z);
        }
        Tape { pre, post }
    }

    /// Network output for every column of `q` (`n x m` to `n̄ x m`).
    pub fn forward_batch(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = q.clone();
        for (l, w) in self.weights.iter().enumerate() {
            x = w * &x;
            if l != self.last() {
                x.apply(|v| *v = elu(*v));
            }
        }
        x
    }

    pub fn forward(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut x = q.clone();
        for (l, w) in self.weights.iter().enumerate() {
            x = w * &x;
            if l != self.last() {
                x.apply(|v| *v = elu(*v));
            }
        }
        x
    }

    /// `dN/dq`, shape `n̄ x n`, by forward accumulation.
    pub fn input_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.forward_with_jacobian(q).1
    }

    /// Output and input Jacobian from one pass.
    pub fn forward_with_jacobian(&self, q: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut x = q.clone();
        let mut jac: Option<DMatrix<f64>> = None;
        for (l, w) in self.weights.iter().enumerate() {
            let z = w * &x;
            let mut j = match &jac {
                None => w.clone(),
                Some(prev) => w * prev,
            };
            if l != self.last() {
                for (r, mut row) in j.row_iter_mut().enumerate() {
                    row *= elu_slope(z[r]);
                }
                x = z.map(elu);
            } else {
                x = z;
            }
            jac = Some(j);
        }
        (x, jac.unwrap())
    }

    /// Gradient over all weights of `sum_j c_jᵀ N(q_j)` for columns `q_j`
    /// of `batch_q` and `c_j` of `cotangents`.
    pub fn grad_from_cotangents(&self, batch_q: &DMatrix<f64>, cotangents: &DMatrix<f64>) -> Gradient {
        assert_eq!(batch_q.ncols(), cotangents.ncols(), "batch and cotangent counts differ");
        assert_eq!(cotangents.nrows(), self.output_dim(), "cotangent length must match the output");
        let tape = self.record(batch_q);
        let mut layers = vec![DMatrix::zeros(0, 0); self.weights.len()];
        let mut delta = cotangents.clone();
        for l in (0..self.weights.len()).rev() {
            if l != self.last() {
                delta.zip_apply(&tape.pre[l], |d, z| *d *= elu_slope(z));
            }
            layers[l] = &delta * tape.post[l].transpose();
            if l > 0 {
                delta = self.weights[l].tr_mul(&delta);
            }
        }
        Gradient { layers }
    }

    /// Cotangent pulled back to the input, `(dN/dq)ᵀ c`, for one sample.
    pub fn input_vjp(&self, q: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let qm = DMatrix::from_column_slice(q.len(), 1, q.as_slice());
        let tape = self.record(&qm);
        let mut delta = DMatrix::from_column_slice(c.len(), 1, c.as_slice());
        for l in (0..self.weights.len()).rev() {
            if l != self.last() {
                delta.zip_apply(&tape.pre[l], |d, z| *d *= elu_slope(z));
            }
            delta = self.weights[l].tr_mul(&delta);
        }
        delta.column(0).into_owned()
    }

    /// Full Jacobian of the output with respect to the flattened weights,
    /// `n̄ x P`, one reverse sweep per output. Used only by the naive
    /// gradient path that the runtime benchmark compares against.
    pub fn parameter_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let qm = DMatrix::from_column_slice(q.len(), 1, q.as_slice());
        let out = self.output_dim();
        let mut jac = DMatrix::zeros(out, self.parameter_count());
        for k in 0..out {
            let mut e = DMatrix::zeros(out, 1);
            e[k] = 1.0;
            let g = self.grad_from_cotangents(&qm, &e).flatten();
            jac.row_mut(k).copy_from(&g.transpose());
        }
        jac
    }

    /// Adds `alpha * flat` to the weights, `flat` ordered as in [`Gradient::flatten`].
    pub fn add_flat(&mut self, alpha: f64, flat: &DVector<f64>) {
        let mut offset = 0;
        for w in &mut self.weights {
            let len = w.len();
            for (x, d) in w.iter_mut().zip(flat.rows(offset, len).iter()) {
                *x += alpha * d;
            }
            offset += len;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(model: &MlpModel, q: &[f64]) -> Vec<f64> {
        let mut x = q.to_vec();
        for (l, w) in model.weights.iter().enumerate() {
            let mut y = vec![0.0; w.nrows()];
            for (r, yr) in y.iter_mut().enumerate() {
                for (c, xc) in x.iter().enumerate() {
                    *yr += w[(r, c)] * xc;
                }
                if l + 1 < model.weights.len() {
                    *yr = if *yr >= 0.0 { *yr } else { yr.exp() - 1.0 };
                }
            }
            x = y;
        }
        x
    }

    #[test]
    fn shapes_and_determinism() {
        let a = init_mlp(&[6, 200, 200, 54], 5).unwrap();
        let shapes: Vec<_> = a.weights.iter().map(|w| w.shape()).collect();
        assert_eq!(shapes, vec![(200, 6), (200, 200), (54, 200)]);
        assert_eq!(a, init_mlp(&[6, 200, 200, 54], 5).unwrap());
        assert_ne!(a, init_mlp(&[6, 200, 200, 54], 6).unwrap());
        assert!(init_mlp(&[6, 54], 1).is_err());
    }

    #[test]
    fn zero_maps_to_zero() {
        let m = init_mlp(&[3, 7, 5, 4], 2).unwrap();
        assert_eq!(m.forward(&DVector::zeros(3)).amax(), 0.0);
    }

    #[test]
    fn identity_layers_pass_nonnegative_inputs() {
        let m = MlpModel {
            layer_dims: vec![3, 3, 3],
            weights: vec![DMatrix::identity(3, 3), DMatrix::identity(3, 3)],
        };
        let q = DVector::from_vec(vec![0.0, 1.5, 2.0]);
        assert_eq!(m.forward(&q), q);
    }

    #[test]
    fn forward_matches_naive_loop() {
        let m = init_mlp(&[4, 9, 6, 5], 8).unwrap();
        let q = DVector::from_vec(vec![0.7, -1.3, 0.2, -2.1]);
        let fast = m.forward(&q);
        let slow = naive_forward(&m, q.as_slice());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        let batch = DMatrix::from_columns(&[q.clone(), -q.clone()]);
        let out = m.forward_batch(&batch);
        assert_eq!(out.column(0), fast.column(0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = init_mlp(&[4, 8, 8, 6], 3).unwrap();
        let q = DVector::from_vec(vec![0.4, -0.9, 1.1, -0.2]);
        let jac = m.input_jacobian(&q);
        let h = 1e-6;
        for c in 0..4 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += h;
            qm[c] -= h;
            let fd = (m.forward(&qp) - m.forward(&qm)) / (2.0 * h);
            let col = jac.column(c);
            assert!((fd - col).amax() <= 1e-6 * col.amax().max(1.0));
        }
    }

    #[test]
    fn jacobian_rows_match_reverse_sweeps() {
        let m = init_mlp(&[3, 5, 4], 4).unwrap();
        let q = DVector::from_vec(vec![-0.5, 0.8, 0.1]);
        let jac = m.input_jacobian(&q);
        for k in 0..4 {
            let mut e = DVector::zeros(4);
            e[k] = 1.0;
            let row = m.input_vjp(&q, &e);
            assert!((row.transpose() - jac.row(k)).amax() < 1e-12);
        }
    }

    #[test]
    fn linear_regime_jacobian_is_weight_product() {
        let m = MlpModel {
            layer_dims: vec![2, 2, 2],
            weights: vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.25, 2.0]),
                DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 0.0, 1.0]),
            ],
        };
        let q = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(m.input_jacobian(&q), &m.weights[1] * &m.weights[0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = init_mlp(&[2, 3, 2], 1).unwrap();
        let q = DMatrix::from_column_slice(2, 1, &[0.6, -1.4]);
        for k in 0..2 {
            let mut c = DMatrix::zeros(2, 1);
            c[k] = 1.0;
            let g = m.grad_from_cotangents(&q, &c);
            for l in 0..2 {
                for idx in 0..m.weights[l].len() {
                    let h = 1e-6;
                    let mut mp = m.clone();
                    let mut mm = m.clone();
                    mp.weights[l][idx] += h;
                    mm.weights[l][idx] -= h;
                    let fd = (mp.forward_batch(&q)[k] - mm.forward_batch(&q)[k]) / (2.0 * h);
                    let an = g.layers[l][idx];
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn gradient_is_linear_in_cotangents() {
        let m = init_mlp(&[3, 6, 4], 9).unwrap();
        let q = DMatrix::from_fn(3, 5, |i, j| ((i * 5 + j) as f64).sin());
        let c1 = DMatrix::from_fn(4, 5, |i, j| ((i + 2 * j) as f64).cos());
        let c2 = DMatrix::from_fn(4, 5, |i, j| (i as f64 - j as f64) * 0.3);
        let mut sum = m.grad_from_cotangents(&q, &c1);
        sum.axpy(1.0, &m.grad_from_cotangents(&q, &c2));
        let joint = m.grad_from_cotangents(&q, &(c1 + c2));
        for (a, b) in sum.layers.iter().zip(&joint.layers) {
            assert!((a - b).amax() < 1e-12);
        }
        let zero = m.grad_from_cotangents(&q, &DMatrix::zeros(4, 5));
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn parameter_jacobian_contracts_to_gradient() {
        let m = init_mlp(&[2, 4, 3], 12).unwrap();
        let q = DVector::from_vec(vec![0.3, -0.7]);
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let jac = m.parameter_jacobian(&q);
        let via_jac = jac.tr_mul(&c);
        let direct = m
            .grad_from_cotangents(&DMatrix::from_column_slice(2, 1, q.as_slice()), &DMatrix::from_column_slice(3, 1, c.as_slice()))
            .flatten();
        assert!((via_jac - direct).amax() < 1e-12);
    }
}
