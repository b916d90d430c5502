//! Parameter sampling, full-order dataset generation and snapshot persistence.

mod halton;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use halton::{halton_point, radical_inverse, sample_parameters, ParamBox};

use crate::binio::{self, Cursor};
use crate::error::{Error, Result};
use crate::fem::{newton, LoadParams, NewtonConfig, ResidualModel};

const SNAPSHOT_MAGIC: &[u8; 4] = b"ROMF";
const SNAPSHOT_VERSION: u32 = 1;

/// Converged full-order states, their parameters and their residuals at `mu_res`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    /// `N x M`, column `j` is the converged state of sample `j`.
    pub u_star: DMatrix<f64>,
    /// `N x M`, column `j` is `R(u_star_j; mu_res)`.
    pub r_star: DMatrix<f64>,
    pub params: Vec<LoadParams>,
    pub mu_res: LoadParams,
}

/// A sample whose full-order solve failed and was left out of the set.
#[derive(Debug)]
pub struct SampleFailure {
    pub index: usize,
    pub load: LoadParams,
    pub error: Error,
}

impl SnapshotSet {
    pub fn new(
        u_star: DMatrix<f64>,
        r_star: DMatrix<f64>,
        params: Vec<LoadParams>,
        mu_res: LoadParams,
    ) -> Result<Self> {
        if u_star.shape() != r_star.shape() {
            return Err(Error::InvalidInput(format!(
                "snapshot {:?} and residual {:?} shapes differ",
                u_star.shape(),
                r_star.shape()
            )));
        }
        if params.len() != u_star.ncols() {
            return Err(Error::DimensionMismatch {
                expected: u_star.ncols(),
                found: params.len(),
            });
        }
        Ok(SnapshotSet {
            u_star,
            r_star,
            params,
            mu_res,
        })
    }

    /// Number of dofs `N`.
    pub fn n_dofs(&self) -> usize {
        self.u_star.nrows()
    }

    /// Number of samples `M`.
    pub fn len(&self) -> usize {
        self.u_star.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Columns `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> SnapshotSet {
        SnapshotSet {
            u_star: self.u_star.select_columns(indices),
            r_star: self.r_star.select_columns(indices),
            params: indices.iter().map(|&i| self.params[i]).collect(),
            mu_res: self.mu_res,
        }
    }

    /// The first `count` samples.
    pub fn head(&self, count: usize) -> SnapshotSet {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 16 * self.u_star.len() + 16 * self.len());
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        binio::write_u32(&mut buf, SNAPSHOT_VERSION)?;
        binio::write_u64(&mut buf, self.n_dofs() as u64)?;
        binio::write_u64(&mut buf, self.len() as u64)?;
        binio::write_f64s(&mut buf, &[self.mu_res.px, self.mu_res.py])?;
        // nalgebra storage is column-major already
        binio::write_f64s(&mut buf, self.u_star.as_slice())?;
        binio::write_f64s(&mut buf, self.r_star.as_slice())?;
        let flat: Vec<f64> = self.params.iter().flat_map(|p| [p.px, p.py]).collect();
        binio::write_f64s(&mut buf, &flat)?;
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SnapshotSet> {
        Self::from_bytes(&binio::read_file(path.as_ref())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SnapshotSet> {
        let mut c = Cursor::new(bytes);
        c.magic(SNAPSHOT_MAGIC)?;
        let version = c.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let n = c.usize()?;
        let m = c.usize()?;
        let mu_res = LoadParams::new(c.f64()?, c.f64()?);
        let len = n
            .checked_mul(m)
            .ok_or_else(|| Error::Format("size field overflows".into()))?;
        let u_star = DMatrix::from_vec(n, m, c.f64s(len)?);
        let r_star = DMatrix::from_vec(n, m, c.f64s(len)?);
        let flat = c.f64s(2 * m)?;
        c.finish()?;
        let params = flat.chunks_exact(2).map(|p| LoadParams::new(p[0], p[1])).collect();
        SnapshotSet::new(u_star, r_star, params, mu_res)
    }

    /// Parameter table as `index,px,py`.
    pub fn write_params_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "px", "py"])?;
        for (i, p) in self.params.iter().enumerate() {
            w.write_record([i.to_string(), p.px.to_string(), p.py.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of a dataset generation run.
#[derive(Debug)]
pub struct GeneratedDataset {
    pub set: SnapshotSet,
    pub failures: Vec<SampleFailure>,
}

/// Solves the full-order model for every parameter and stores states with
/// their residuals at `mu_res`.
///
/// Samples are solved in parallel; output order always follows `params`.
/// Failed samples are dropped and reported, unless more than 10% fail.
pub fn generate_dataset<M: ResidualModel>(
    model: &M,
    params: &[LoadParams],
    mu_res: LoadParams,
    cfg: &NewtonConfig,
) -> Result<GeneratedDataset> {
    let results: Vec<Result<(DVector<f64>, DVector<f64>)>> = params
        .par_iter()
        .map(|p| {
            let (u, _) = newton::solve(model, p, cfg)?;
            let r = model.residual(&u, &mu_res)?;
            Ok((u, r))
        })
        .collect();
    let n = model.n_dofs();
    let mut cols_u = Vec::new();
    let mut cols_r = Vec::new();
    let mut kept = Vec::new();
    let mut failures = Vec::new();
    for (index, (res, p)) in results.into_iter().zip(params).enumerate() {
        match res {
            Ok((u, r)) => {
                cols_u.push(u);
                cols_r.push(r);
                kept.push(*p);
            }
            Err(error) => {
                log::warn!("FOM solve {index} at ({}, {}) failed: {error}", p.px, p.py);
                failures.push(SampleFailure {
                    index,
                    load: *p,
                    error,
                });
            }
        }
    }
    if failures.len() * 10 > params.len() {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: params.len(),
        });
    }
    let u_star = if cols_u.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols_u)
    };
    let r_star = if cols_r.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols_r)
    };
    Ok(GeneratedDataset {
        set: SnapshotSet::new(u_star, r_star, kept, mu_res)?,
        failures,
    })
}

/// Sizes and domains of the sampled datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub domain: ParamBox,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Samples in the out-of-domain band.
    pub extrapolation: usize,
    /// Width of the out-of-domain band in N/m.
    pub extrapolation_band: f64,
    pub extrapolation_seed: u64,
    pub mu_res: LoadParams,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            domain: ParamBox::default(),
            train: 500,
            validation: 125,
            test: 50,
            extrapolation: 50,
            extrapolation_band: 500.0,
            extrapolation_seed: 7,
            mu_res: LoadParams::default(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.train == 0 {
            return Err(Error::config("sampling.train", "need at least one training sample"));
        }
        if !(self.extrapolation_band >= 0.0) {
            return Err(Error::config("sampling.extrapolation_band", "must be nonnegative"));
        }
        Ok(())
    }

    /// Train, validation and test parameters: consecutive runs of one Halton stream.
    pub fn split_params(&self) -> [Vec<LoadParams>; 3] {
        let train = sample_parameters(self.train, &self.domain, 1);
        let validation = sample_parameters(self.validation, &self.domain, 1 + self.train as u64);
        let test = sample_parameters(
            self.test,
            &self.domain,
            1 + (self.train + self.validation) as u64,
        );
        [train, validation, test]
    }

    /// Uniform samples in the band of width `extrapolation_band` around the domain.
    pub fn extrapolation_params(&self) -> Vec<LoadParams> {
        let b = self.extrapolation_band;
        let outer = ParamBox {
            px: [self.domain.px[0] - b, self.domain.px[1] + b],
            py: [self.domain.py[0] - b, self.domain.py[1] + b],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.extrapolation_seed);
        let mut out = Vec::with_capacity(self.extrapolation);
        if b <= 0.0 {
            return out;
        }
        while out.len() < self.extrapolation {
            let p = LoadParams::new(
                rng.random_range(outer.px[0]..=outer.px[1]),
                rng.random_range(outer.py[0]..=outer.py[1]),
            );
            if !self.domain.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

/// Train, validation and test sets generated from one configuration.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: SnapshotSet,
    pub validation: SnapshotSet,
    pub test: SnapshotSet,
}

pub fn generate_split<M: ResidualModel>(
    model: &M,
    cfg: &SamplingConfig,
    newton_cfg: &NewtonConfig,
) -> Result<DatasetSplit> {
    cfg.validate()?;
    let [train, validation, test] = cfg.split_params();
    Ok(DatasetSplit {
        train: generate_dataset(model, &train, cfg.mu_res, newton_cfg)?.set,
        validation: generate_dataset(model, &validation, cfg.mu_res, newton_cfg)?.set,
        test: generate_dataset(model, &test, cfg.mu_res, newton_cfg)?.set,
    })
}
