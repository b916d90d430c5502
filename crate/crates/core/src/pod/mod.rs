//! Proper orthogonal decomposition: snapshot SVD, primary and secondary bases
//! with their unit-variance scalings, and the POD reference errors used to
//! normalize the training losses.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::binio::{self, Cursor};
use crate::error::{Error, Result};
use crate::fem::ResidualModel;
use crate::snapshots::SnapshotSet;

const BASES_MAGIC: &[u8; 4] = b"ROMB";
const BASES_VERSION: u32 = 1;
/// Smallest admissible `sigma_k / sigma_1` for a retained mode: a few units
/// of roundoff above the floor of a double-precision SVD.
pub const RANK_TOLERANCE: f64 = 4.0 * f64::EPSILON;

/// Thin SVD `S = U diag(sigma) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Thin SVD with singular values sorted descending and a deterministic sign
/// convention: the largest-magnitude entry of every left vector is positive.
pub fn compute_svd(s: &DMatrix<f64>) -> Result<SvdFactors> {
    if s.nrows() == 0 || s.ncols() == 0 {
        return Err(Error::InvalidInput("SVD of an empty matrix".into()));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("snapshot matrix has non-finite entries".into()));
    }
    let svd = s.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let sigma = svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let r = order.len();
    let mut uo = DMatrix::zeros(s.nrows(), r);
    let mut vo = DMatrix::zeros(s.ncols(), r);
    let mut so = DVector::zeros(r);
    for (k, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let pivot = col.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        uo.set_column(k, &(col * sign));
        vo.set_column(k, &(v_t.row(src).transpose() * sign));
        so[k] = sigma[src];
    }
    Ok(SvdFactors {
        u: uo,
        sigma: so,
        v: vo,
    })
}

/// Primary and secondary reduced-order bases.
#[derive(Debug, Clone, PartialEq)]
pub struct RomBases {
    /// `N x n`.
    pub phi: DMatrix<f64>,
    /// `N x n̄`.
    pub phi_bar: DMatrix<f64>,
    /// `sigma_i / sqrt(M)` for the primary modes.
    pub xi: DVector<f64>,
    /// `sigma_{n+i} / sqrt(M)` for the secondary modes.
    pub xi_bar: DVector<f64>,
    /// Mean squared POD reconstruction error of the states.
    pub e_pod_d: f64,
    /// Mean squared residual error of the POD reconstructions.
    pub e_pod_r: f64,
    /// Number of training snapshots the bases were built from.
    pub m: usize,
}

/// Splits the leading `n + n_bar` left singular vectors into `Φ` and `Φ̄`.
///
/// The POD errors are left at zero; see [`RomBases::fill_pod_errors`].
pub fn build_bases(svd: &SvdFactors, n: usize, n_bar: usize, m: usize) -> Result<RomBases> {
    if n == 0 {
        return Err(Error::config("svd.n", "need at least one primary mode"));
    }
    if m == 0 {
        return Err(Error::InvalidInput("bases need at least one snapshot".into()));
    }
    let total = n + n_bar;
    let available = svd.sigma.len();
    let s1 = svd.sigma[0];
    if total > available || !(s1 > 0.0) {
        return Err(Error::RankDeficient {
            requested: total,
            ratio: 0.0,
        });
    }
    let ratio = svd.sigma[total - 1] / s1;
    if !(ratio >= RANK_TOLERANCE) {
        return Err(Error::RankDeficient {
            requested: total,
            ratio,
        });
    }
    let scale = 1.0 / (m as f64).sqrt();
    Ok(RomBases {
        phi: svd.u.columns(0, n).into_owned(),
        phi_bar: svd.u.columns(n, n_bar).into_owned(),
        xi: svd.sigma.rows(0, n) * scale,
        xi_bar: svd.sigma.rows(n, n_bar) * scale,
        e_pod_d: 0.0,
        e_pod_r: 0.0,
        m,
    })
}

impl RomBases {
    pub fn n_dofs(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_bar(&self) -> usize {
        self.phi_bar.ncols()
    }

    /// `q = Ξ⁻¹ Φᵀ u`.
    pub fn encode(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.phi.tr_mul(u)).component_div(&self.xi)
    }

    /// Column-wise [`encode`](Self::encode) of an `N x m` batch.
    pub fn encode_batch(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut q = self.phi.tr_mul(u);
        for (i, mut row) in q.row_iter_mut().enumerate() {
            row /= self.xi[i];
        }
        q
    }

    /// `Φ̄ᵀ u` scaled by `Ξ̄⁻¹`, the secondary coordinates of a state.
    pub fn encode_secondary(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.phi_bar.tr_mul(u)).component_div(&self.xi_bar)
    }

    /// `Φ Ξ q`.
    pub fn decode_linear_part(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.phi * q.component_mul(&self.xi)
    }

    /// `Φ̄ Ξ̄ q̄`.
    pub fn lift_secondary(&self, q_bar: &DVector<f64>) -> DVector<f64> {
        &self.phi_bar * q_bar.component_mul(&self.xi_bar)
    }

    /// `Φ Φᵀ u`.
    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.phi * self.phi.tr_mul(u)
    }

    /// Fills both POD reference errors from the training set.
    pub fn fill_pod_errors<M: ResidualModel>(&mut self, model: &M, train: &SnapshotSet) -> Result<()> {
        self.e_pod_d = compute_e_pod_d(self, train)?;
        self.e_pod_r = compute_e_pod_r(self, model, train)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BASES_MAGIC);
        binio::write_u32(&mut buf, BASES_VERSION)?;
        for v in [self.n_dofs(), self.n(), self.n_bar(), self.m] {
            binio::write_u64(&mut buf, v as u64)?;
        }
        binio::write_f64s(&mut buf, self.phi.as_slice())?;
        binio::write_f64s(&mut buf, self.phi_bar.as_slice())?;
        binio::write_f64s(&mut buf, self.xi.as_slice())?;
        binio::write_f64s(&mut buf, self.xi_bar.as_slice())?;
        binio::write_f64s(&mut buf, &[self.e_pod_d, self.e_pod_r])?;
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RomBases> {
        Self::from_bytes(&binio::read_file(path.as_ref())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RomBases> {
        let mut c = Cursor::new(bytes);
        c.magic(BASES_MAGIC)?;
        let version = c.u32()?;
        if version != BASES_VERSION {
            return Err(Error::Format(format!("unsupported bases version {version}")));
        }
        let big_n = c.usize()?;
        let n = c.usize()?;
        let n_bar = c.usize()?;
        let m = c.usize()?;
        let size = |a: usize, b: usize| {
            a.checked_mul(b)
                .ok_or_else(|| Error::Format("size field overflows".into()))
        };
        let phi = DMatrix::from_vec(big_n, n, c.f64s(size(big_n, n)?)?);
        let phi_bar = DMatrix::from_vec(big_n, n_bar, c.f64s(size(big_n, n_bar)?)?);
        let xi = DVector::from_vec(c.f64s(n)?);
        let xi_bar = DVector::from_vec(c.f64s(n_bar)?);
        let e_pod_d = c.f64()?;
        let e_pod_r = c.f64()?;
        c.finish()?;
        Ok(RomBases {
            phi,
            phi_bar,
            xi,
            xi_bar,
            e_pod_d,
            e_pod_r,
            m,
        })
    }
}

/// `(1/(M N)) sum_j |Φ Φᵀ u_j - u_j|²`.
pub fn compute_e_pod_d(bases: &RomBases, train: &SnapshotSet) -> Result<f64> {
    check_set(bases, train)?;
    let s = &train.u_star;
    let err = &bases.phi * bases.phi.tr_mul(s) - s;
    Ok(err.norm_squared() / (train.len() * train.n_dofs()) as f64)
}

/// `(1/(M N)) sum_j |R(Φ Φᵀ u_j; mu_res) - R(u_j; mu_res)|²`.
pub fn compute_e_pod_r<M: ResidualModel>(
    bases: &RomBases,
    model: &M,
    train: &SnapshotSet,
) -> Result<f64> {
    check_set(bases, train)?;
    let projected = &bases.phi * bases.phi.tr_mul(&train.u_star);
    let sq: Vec<f64> = (0..train.len())
        .into_par_iter()
        .map(|j| {
            let u = projected.column(j).into_owned();
            let r = model.residual(&u, &train.mu_res)?;
            Ok((r - train.r_star.column(j)).norm_squared())
        })
        .collect::<Result<_>>()?;
    Ok(sq.iter().sum::<f64>() / (train.len() * train.n_dofs()) as f64)
}

fn check_set(bases: &RomBases, train: &SnapshotSet) -> Result<()> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if train.n_dofs() != bases.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: bases.n_dofs(),
            found: train.n_dofs(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{LoadParams, SpringChain};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let svd = compute_svd(&DMatrix::identity(3, 3)).unwrap();
        assert!(svd.sigma.iter().all(|&s| (s - 1.0).abs() < 1e-14));
    }

    #[test]
    fn rank_one() {
        let a = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, 4.0]);
        let svd = compute_svd(&(&a * b.transpose())).unwrap();
        assert_relative_eq!(svd.sigma[0], 15.0, epsilon = 1e-12);
        assert!(svd.sigma[1].abs() < 1e-12);
    }

    #[test]
    fn random_matrix_against_gram_eigenvalues() {
        let s = random(20, 10, 3);
        let svd = compute_svd(&s).unwrap();
        let utu = svd.u.tr_mul(&svd.u) - DMatrix::identity(10, 10);
        let vtv = svd.v.tr_mul(&svd.v) - DMatrix::identity(10, 10);
        assert!(utu.amax() < 1e-12 && vtv.amax() < 1e-12);
        let mut eig: Vec<f64> = s.tr_mul(&s).symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in svd.sigma.iter().zip(&eig) {
            assert!((a - b).abs() < 1e-8);
        }
        let rebuilt = &svd.u * DMatrix::from_diagonal(&svd.sigma) * svd.v.transpose();
        assert!((rebuilt - &s).norm() <= 1e-8 * s.norm());
    }

    #[test]
    fn non_finite_rejected() {
        let mut s = DMatrix::zeros(2, 2);
        s[(0, 1)] = f64::NAN;
        assert!(compute_svd(&s).is_err());
    }

    #[test]
    fn scalings_follow_sigma() {
        let svd = SvdFactors {
            u: DMatrix::identity(3, 3),
            sigma: DVector::from_vec(vec![2.0, 1.0, 0.5]),
            v: DMatrix::identity(3, 3),
        };
        let b = build_bases(&svd, 1, 1, 4).unwrap();
        assert_eq!(b.xi.as_slice(), &[1.0]);
        assert_eq!(b.xi_bar.as_slice(), &[0.5]);
        assert!(matches!(build_bases(&svd, 3, 1, 4), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn rank_guard_rejects_null_modes() {
        let a = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let s = &a * DVector::from_vec(vec![1.0, 2.0]).transpose();
        let svd = compute_svd(&s).unwrap();
        assert!(matches!(build_bases(&svd, 1, 1, 2), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn rank_guard_rejects_roundoff_modes() {
        let a = DVector::from_fn(50, |i, _| (i as f64 * 0.37).sin());
        let b = DVector::from_fn(20, |i, _| (i as f64 * 0.11).cos());
        let svd = compute_svd(&(&a * b.transpose())).unwrap();
        assert!(svd.sigma[1] > 0.0);
        assert!(matches!(build_bases(&svd, 1, 1, 20), Err(Error::RankDeficient { .. })));
        assert!(build_bases(&svd, 1, 0, 20).is_ok());
    }

    fn set_from(s: DMatrix<f64>) -> SnapshotSet {
        let m = s.ncols();
        let r = DMatrix::zeros(s.nrows(), m);
        SnapshotSet::new(s, r, vec![LoadParams::default(); m], LoadParams::default()).unwrap()
    }

    #[test]
    fn encode_decode_round_trip() {
        let s = random(12, 8, 9);
        let b = build_bases(&compute_svd(&s).unwrap(), 3, 4, 8).unwrap();
        assert_eq!(b.encode(&DVector::zeros(12)).amax(), 0.0);
        let q0 = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        assert!((b.encode(&b.decode_linear_part(&q0)) - &q0).amax() < 1e-10);
        assert!(b.phi.tr_mul(&b.phi_bar).amax() < 1e-10);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!((b.decode_linear_part(&e1) - b.phi.column(0) * b.xi[0]).amax() < 1e-15);
        let batch = b.encode_batch(&s);
        for j in 0..8 {
            assert!((batch.column(j) - b.encode(&s.column(j).into_owned())).amax() < 1e-12);
        }
    }

    #[test]
    fn e_pod_d_is_eckart_young_tail() {
        let s = random(15, 10, 11);
        let svd = compute_svd(&s).unwrap();
        let b = build_bases(&svd, 2, 1, 10).unwrap();
        let tail: f64 = svd.sigma.iter().skip(2).map(|x| x * x).sum::<f64>() / 150.0;
        assert!((compute_e_pod_d(&b, &set_from(s.clone())).unwrap() - tail).abs() < 1e-10);
        let full = build_bases(&svd, 10, 0, 10).unwrap();
        assert!(compute_e_pod_d(&full, &set_from(s.clone())).unwrap() < 1e-16 * s.norm_squared());
    }

    #[test]
    fn e_pod_d_orthogonal_snapshot() {
        let b = RomBases {
            phi: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            phi_bar: DMatrix::zeros(3, 0),
            xi: DVector::from_vec(vec![1.0]),
            xi_bar: DVector::zeros(0),
            e_pod_d: 0.0,
            e_pod_r: 0.0,
            m: 1,
        };
        let u = DMatrix::from_column_slice(3, 1, &[0.0, 3.0, 4.0]);
        assert!((compute_e_pod_d(&b, &set_from(u)).unwrap() - 25.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn e_pod_r_single_spring_by_hand() {
        // one dof, k = 2, alpha = 1, a zero basis: R(0) - R(u) = -(2u + u³)
        let chain = SpringChain::new(2.0, 1.0, 1);
        let u = 0.5;
        let r = chain.spring_chain_residual(&DVector::from_vec(vec![u]), 0.0);
        let set = SnapshotSet::new(
            DMatrix::from_element(1, 1, u),
            DMatrix::from_element(1, 1, r[0]),
            vec![LoadParams::default()],
            LoadParams::default(),
        )
        .unwrap();
        let b = RomBases {
            phi: DMatrix::zeros(1, 1),
            phi_bar: DMatrix::zeros(1, 0),
            xi: DVector::from_vec(vec![1.0]),
            xi_bar: DVector::zeros(0),
            e_pod_d: 0.0,
            e_pod_r: 0.0,
            m: 1,
        };
        let expected = (2.0 * u + u * u * u).powi(2);
        assert!((compute_e_pod_r(&b, &chain, &set).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn bases_file_round_trip() {
        let s = random(6, 5, 1);
        let mut b = build_bases(&compute_svd(&s).unwrap(), 2, 2, 5).unwrap();
        b.e_pod_d = 0.125;
        b.e_pod_r = 3.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.romb");
        b.save(&path).unwrap();
        assert_eq!(RomBases::load(&path).unwrap(), b);
        let bytes = std::fs::read(&path).unwrap();
        assert!(matches!(RomBases::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::DimensionMismatch { .. })));
    }
}
