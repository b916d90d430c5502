//! Nonlinear manifold decoder built from POD bases and a network mapping
//! primary to secondary coordinates, in the scaled and the original form.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ann::{MlpModel, OptimizerConfig, WeightsFile};
use crate::error::{Error, Result};
use crate::pod::RomBases;

/// How reduced coordinates relate to the POD bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `q = Ξ⁻¹Φᵀu`, `u = ΦΞq + Φ̄Ξ̄N(q)`.
    Scaled,
    /// `q = Φᵀ(u - u_ref)`, `u = u_ref + Φq + Φ̄N(q)`.
    Original,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromAnnManifold {
    pub variant: Variant,
    pub bases: RomBases,
    pub net: MlpModel,
    /// Reference state; zero for the scaled variant.
    pub u_ref: DVector<f64>,
}

impl PromAnnManifold {
    pub fn scaled(bases: RomBases, net: MlpModel) -> Result<Self> {
        let n = bases.n_dofs();
        Self::build(Variant::Scaled, bases, net, DVector::zeros(n))
    }

    /// Original formulation with `u_ref` set to the mean of `snapshots`' columns.
    pub fn original(bases: RomBases, net: MlpModel, snapshots: &DMatrix<f64>) -> Result<Self> {
        if snapshots.ncols() == 0 {
            return Err(Error::InvalidInput("mean of an empty snapshot set".into()));
        }
        let u_ref = snapshots.column_mean();
        Self::build(Variant::Original, bases, net, u_ref)
    }

    fn build(variant: Variant, bases: RomBases, net: MlpModel, u_ref: DVector<f64>) -> Result<Self> {
        if net.input_dim() != bases.n() {
            return Err(Error::DimensionMismatch {
                expected: bases.n(),
                found: net.input_dim(),
            });
        }
        if net.output_dim() != bases.n_bar() {
            return Err(Error::DimensionMismatch {
                expected: bases.n_bar(),
                found: net.output_dim(),
            });
        }
        if u_ref.len() != bases.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: bases.n_dofs(),
                found: u_ref.len(),
            });
        }
        Ok(PromAnnManifold {
            variant,
            bases,
            net,
            u_ref,
        })
    }

    pub fn n(&self) -> usize {
        self.bases.n()
    }

    pub fn n_dofs(&self) -> usize {
        self.bases.n_dofs()
    }

    /// Column scaling of the primary basis: `Ξ` or the identity.
    pub fn primary_scale(&self) -> DVector<f64> {
        match self.variant {
            Variant::Scaled => self.bases.xi.clone(),
            Variant::Original => DVector::from_element(self.bases.n(), 1.0),
        }
    }

    /// Column scaling of the secondary basis: `Ξ̄` or the identity.
    pub fn secondary_scale(&self) -> DVector<f64> {
        match self.variant {
            Variant::Scaled => self.bases.xi_bar.clone(),
            Variant::Original => DVector::from_element(self.bases.n_bar(), 1.0),
        }
    }

    pub fn encode(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.variant {
            Variant::Scaled => self.bases.encode(u),
            Variant::Original => self.bases.phi.tr_mul(&(u - &self.u_ref)),
        }
    }

    /// Encodes every column of `u`.
    pub fn encode_batch(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        match self.variant {
            Variant::Scaled => self.bases.encode_batch(u),
            Variant::Original => {
                let mut shifted = u.clone();
                for mut c in shifted.column_iter_mut() {
                    c -= &self.u_ref;
                }
                self.bases.phi.tr_mul(&shifted)
            }
        }
    }

    /// The secondary coordinates the network should output for each column of `u`.
    pub fn secondary_targets(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut shifted = u.clone();
        if self.variant == Variant::Original {
            for mut c in shifted.column_iter_mut() {
                c -= &self.u_ref;
            }
        }
        let mut t = self.bases.phi_bar.tr_mul(&shifted);
        let s = self.secondary_scale();
        for (i, mut row) in t.row_iter_mut().enumerate() {
            row /= s[i];
        }
        t
    }

    /// `offset + Φ S q + Φ̄ S̄ q̄` column by column.
    pub fn assemble(&self, q: &DMatrix<f64>, q_bar: &DMatrix<f64>) -> DMatrix<f64> {
        let mut q = q.clone();
        let s = self.primary_scale();
        for (i, mut row) in q.row_iter_mut().enumerate() {
            row *= s[i];
        }
        let mut q_bar = q_bar.clone();
        let sb = self.secondary_scale();
        for (i, mut row) in q_bar.row_iter_mut().enumerate() {
            row *= sb[i];
        }
        let mut u = &self.bases.phi * q + &self.bases.phi_bar * q_bar;
        if self.variant == Variant::Original {
            for mut c in u.column_iter_mut() {
                c += &self.u_ref;
            }
        }
        u
    }

    /// Decodes every column of `q`.
    pub fn decode_batch(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let q_bar = self.net.forward_batch(q);
        self.assemble(q, &q_bar)
    }

    /// Single-sample decode; runs the batch path so both agree bitwise.
    pub fn decode(&self, q: &DVector<f64>) -> DVector<f64> {
        let qm = DMatrix::from_column_slice(q.len(), 1, q.as_slice());
        self.decode_batch(&qm).column(0).into_owned()
    }

    /// `dD/dq`, shape `N x n`.
    pub fn decode_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.decode_with_jacobian(q).1
    }

    /// Decoded state and its Jacobian from one network pass.
    pub fn decode_with_jacobian(&self, q: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (q_bar, dn) = self.net.forward_with_jacobian(q);
        let s = self.primary_scale();
        let sb = self.secondary_scale();
        let mut lin = self.bases.phi.clone();
        for (k, mut col) in lin.column_iter_mut().enumerate() {
            col *= s[k];
        }
        let mut dn_scaled = dn;
        for (i, mut row) in dn_scaled.row_iter_mut().enumerate() {
            row *= sb[i];
        }
        let jac = lin + &self.bases.phi_bar * dn_scaled;
        let u = self.assemble(
            &DMatrix::from_column_slice(q.len(), 1, q.as_slice()),
            &DMatrix::from_column_slice(q_bar.len(), 1, q_bar.as_slice()),
        );
        (u.column(0).into_owned(), jac)
    }

    /// `D(E(u_j))` for every column.
    pub fn reconstruct_batch(&self, u_star: &DMatrix<f64>) -> DMatrix<f64> {
        self.decode_batch(&self.encode_batch(u_star))
    }

    /// Same manifold with every network weight set to zero.
    pub fn with_zero_net(&self) -> PromAnnManifold {
        PromAnnManifold {
            net: self.net.zeroed(),
            ..self.clone()
        }
    }
}

/// Provenance stored next to a saved manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub variant: Variant,
    pub dataset_hash: String,
    pub config_hash: String,
    /// Training regimes applied so far, oldest first (e.g. `["s_loss", "r_loss"]`).
    pub lineage: Vec<String>,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Reference state of the original variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_ref: Option<Vec<f64>>,
}

const BASES_FILE: &str = "bases.romb";
const WEIGHTS_FILE: &str = "weights.json";
const MANIFEST_FILE: &str = "manifest.json";

/// A manifold with its manifest, stored as a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifold: PromAnnManifold,
    pub manifest: BundleManifest,
}

impl Bundle {
    /// Writes the bundle into `dir`, refusing to replace an existing one unless `overwrite`.
    pub fn save(&self, dir: impl AsRef<Path>, overwrite: bool) -> Result<PathBuf> {
        let dir = dir.as_ref();
        if dir.join(MANIFEST_FILE).exists() && !overwrite {
            return Err(Error::AlreadyExists(dir.to_path_buf()));
        }
        std::fs::create_dir_all(dir)?;
        self.manifold.bases.save(dir.join(BASES_FILE))?;
        WeightsFile::from_model(&self.manifold.net, self.manifest.seed, self.manifest.optimizer)
            .save(dir.join(WEIGHTS_FILE))?;
        let mut manifest = self.manifest.clone();
        manifest.variant = self.manifold.variant;
        manifest.u_ref = match self.manifold.variant {
            Variant::Scaled => None,
            Variant::Original => Some(self.manifold.u_ref.as_slice().to_vec()),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(f, &manifest)?;
        Ok(dir.to_path_buf())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Bundle> {
        let dir = dir.as_ref();
        let manifest: BundleManifest = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(dir.join(MANIFEST_FILE))?,
        ))?;
        let bases = RomBases::load(dir.join(BASES_FILE))?;
        let net = WeightsFile::load(dir.join(WEIGHTS_FILE))?.to_model()?;
        let manifold = match manifest.variant {
            Variant::Scaled => PromAnnManifold::scaled(bases, net)?,
            Variant::Original => {
                let u_ref = manifest
                    .u_ref
                    .clone()
                    .ok_or_else(|| Error::Format("original-variant bundle without u_ref".into()))?;
                PromAnnManifold::build(Variant::Original, bases, net, DVector::from_vec(u_ref))?
            }
        };
        Ok(Bundle { manifold, manifest })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::init_mlp;
    use crate::pod::{build_bases, compute_svd, compute_e_pod_d};
    use crate::snapshots::SnapshotSet;
    use crate::fem::LoadParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n_dofs: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // decaying spectrum so scalings differ from mode to mode
        DMatrix::from_fn(n_dofs, m, |i, _| rng.random_range(-1.0..1.0) / (1.0 + i as f64))
    }

    fn manifold(variant: Variant) -> (PromAnnManifold, DMatrix<f64>) {
        let s = data(12, 9, 1);
        let bases = build_bases(&compute_svd(&s).unwrap(), 3, 4, 9).unwrap();
        let net = init_mlp(&[3, 8, 4], 2).unwrap();
        let m = match variant {
            Variant::Scaled => PromAnnManifold::scaled(bases, net).unwrap(),
            Variant::Original => PromAnnManifold::original(bases, net, &s).unwrap(),
        };
        (m, s)
    }

    #[test]
    fn zero_is_fixed_and_encode_inverts_decode() {
        let (m, _) = manifold(Variant::Scaled);
        assert_eq!(m.decode(&m.encode(&DVector::zeros(12))).amax(), 0.0);
        let q = DVector::from_vec(vec![0.4, -2.0, 1.3]);
        assert!((m.encode(&m.decode(&q)) - q).amax() < 1e-10);
    }

    #[test]
    fn original_variant_centres_on_mean() {
        let (m, s) = manifold(Variant::Original);
        let mean = s.column_mean();
        assert!(m.encode(&mean).amax() < 1e-14);
        // scaled q relates to original q by Ξ⁻¹ plus the mean offset
        let (sc, _) = manifold(Variant::Scaled);
        let u = s.column(2).into_owned();
        let expected = (m.encode(&u) + m.bases.phi.tr_mul(&mean)).component_div(&sc.bases.xi);
        assert!((sc.encode(&u) - expected).amax() < 1e-12);
    }

    #[test]
    fn zero_net_decodes_linear_part() {
        let (m, s) = manifold(Variant::Scaled);
        let z = m.with_zero_net();
        let q = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        assert_eq!(z.decode(&q), z.bases.decode_linear_part(&q));
        let xi_phi = DMatrix::from_fn(12, 3, |i, k| m.bases.phi[(i, k)] * m.bases.xi[k]);
        assert!((z.decode_jacobian(&q) - xi_phi).amax() < 1e-15);
        let rec = z.reconstruct_batch(&s);
        let proj = &m.bases.phi * m.bases.phi.tr_mul(&s);
        assert!((rec - proj).amax() < 1e-13);
    }

    #[test]
    fn zero_net_error_is_e_pod_d() {
        let (m, s) = manifold(Variant::Scaled);
        let z = m.with_zero_net();
        let set = SnapshotSet::new(s.clone(), DMatrix::zeros(12, 9), vec![LoadParams::default(); 9], LoadParams::default()).unwrap();
        let mse = (z.reconstruct_batch(&s) - &s).norm_squared() / (12.0 * 9.0);
        assert!((mse - compute_e_pod_d(&m.bases, &set).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for variant in [Variant::Scaled, Variant::Original] {
            let (m, _) = manifold(variant);
            let q = DVector::from_vec(vec![0.3, -0.6, 0.9]);
            let jac = m.decode_jacobian(&q);
            let h = 1e-6;
            for c in 0..3 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[c] += h;
                qm[c] -= h;
                let fd = (m.decode(&qp) - m.decode(&qm)) / (2.0 * h);
                assert!((fd - jac.column(c)).amax() <= 1e-6 * jac.column(c).amax().max(1e-3));
            }
        }
    }

    #[test]
    fn doubling_xi_doubles_linear_columns() {
        let (m, _) = manifold(Variant::Scaled);
        let z = m.with_zero_net();
        let mut z2 = z.clone();
        z2.bases.xi *= 2.0;
        let q = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        assert!((z2.decode_jacobian(&q) - z.decode_jacobian(&q) * 2.0).amax() < 1e-15);
    }

    #[test]
    fn batch_of_one_is_bitwise_single() {
        let (m, s) = manifold(Variant::Scaled);
        let col = s.columns(0, 1).into_owned();
        let batch = m.reconstruct_batch(&col);
        let single = m.decode(&m.encode(&s.column(0).into_owned()));
        assert_eq!(batch.column(0), single.column(0));
    }

    #[test]
    fn bundle_round_trip_and_no_clobber() {
        for variant in [Variant::Scaled, Variant::Original] {
            let (m, _) = manifold(variant);
            let bundle = Bundle {
                manifold: m,
                manifest: BundleManifest {
                    variant,
                    dataset_hash: "d".into(),
                    config_hash: "c".into(),
                    lineage: vec!["s_loss".into()],
                    seed: 3,
                    optimizer: OptimizerConfig::default(),
                    epochs: 0,
                    u_ref: None,
                },
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("b");
            bundle.save(&path, false).unwrap();
            let back = Bundle::load(&path).unwrap();
            assert_eq!(back.manifold, bundle.manifold);
            assert!(matches!(bundle.save(&path, false), Err(Error::AlreadyExists(_))));
            bundle.save(&path, true).unwrap();
        }
    }
}
