//! Compressible Neo-Hookean material in plane strain.
//!
//! Strain energy `psi = mu/2 (tr(FᵀF) - 2) - mu ln J + lambda/2 (ln J)²`, with the
//! out-of-plane stretch fixed to one.

use serde::{Deserialize, Serialize};

pub type Mat2 = [[f64; 2]; 2];
/// Fourth-order tangent `dP_iJ / dF_kL`, indexed `[i][J][k][L]`.
pub type Tangent = [[[[f64; 2]; 2]; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeoHookean {
    pub mu: f64,
    pub lambda: f64,
}

impl NeoHookean {
    pub fn from_young_poisson(youngs_modulus: f64, poisson_ratio: f64) -> Self {
        let e = youngs_modulus;
        let nu = poisson_ratio;
        NeoHookean {
            mu: e / (2.0 * (1.0 + nu)),
            lambda: e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
        }
    }

    /// First Piola-Kirchhoff stress, or the offending `det F` if it is not positive.
    #[inline]
    pub fn first_piola(&self, f: &Mat2) -> Result<Mat2, f64> {
        let (det, finv) = inverse(f)?;
        let ln_j = det.ln();
        let c = self.lambda * ln_j - self.mu;
        // P = mu F + (lambda ln J - mu) F^-T
        let mut p = [[0.0; 2]; 2];
        for i in 0..2 {
            for jj in 0..2 {
                p[i][jj] = self.mu * f[i][jj] + c * finv[jj][i];
            }
        }
        Ok(p)
    }

    /// First Piola-Kirchhoff stress from the displacement gradient `H = F - I`.
    ///
    /// Near the reference state `mu F` and `mu F^-T` nearly cancel. Expanding
    /// `J F - cof F = H + Hᵀ + det(H) I + (tr H + det H) H` keeps the stress
    /// accurate relative to its own size instead of relative to `mu`.
    #[inline]
    pub fn first_piola_from_gradient(&self, h: &Mat2) -> Result<Mat2, f64> {
        let det_h = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let s = h[0][0] + h[1][1] + det_h;
        let det = 1.0 + s;
        if !(det > 0.0) || !det.is_finite() {
            return Err(det);
        }
        let inv = 1.0 / det;
        let lam_ln = self.lambda * s.ln_1p();
        // cof F = (1 + tr H) I - Hᵀ
        let cof = [
            [1.0 + h[1][1], -h[1][0]],
            [-h[0][1], 1.0 + h[0][0]],
        ];
        let mut p = [[0.0; 2]; 2];
        for i in 0..2 {
            for jj in 0..2 {
                let diag = if i == jj { det_h } else { 0.0 };
                let jf_minus_cof = h[i][jj] + h[jj][i] + diag + s * h[i][jj];
                p[i][jj] = (self.mu * jf_minus_cof + lam_ln * cof[i][jj]) * inv;
            }
        }
        Ok(p)
    }

    /// Stress and consistent tangent.
    #[inline]
    pub fn stress_and_tangent(&self, f: &Mat2) -> Result<(Mat2, Tangent), f64> {
        let (det, finv) = inverse(f)?;
        let ln_j = det.ln();
        let c = self.lambda * ln_j - self.mu;
        let mut p = [[0.0; 2]; 2];
        let mut a = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..2 {
            for jj in 0..2 {
                p[i][jj] = self.mu * f[i][jj] + c * finv[jj][i];
                for k in 0..2 {
                    for l in 0..2 {
                        let identity = if i == k && jj == l { self.mu } else { 0.0 };
                        a[i][jj][k][l] = identity
                            - c * finv[jj][k] * finv[l][i]
                            + self.lambda * finv[jj][i] * finv[l][k];
                    }
                }
            }
        }
        Ok((p, a))
    }
}

#[inline]
fn inverse(f: &Mat2) -> Result<(f64, Mat2), f64> {
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    if !(det > 0.0) || !det.is_finite() {
        return Err(det);
    }
    let inv = 1.0 / det;
    Ok((
        det,
        [
            [f[1][1] * inv, -f[0][1] * inv],
            [-f[1][0] * inv, f[0][0] * inv],
        ],
    ))
}
