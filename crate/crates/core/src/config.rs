//! One JSON document configuring every pipeline stage, with stage hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{BenchConfig, Experiment, ExperimentContext, GridConfig, NetVariant};
use crate::fem::{FemModel, Mesh, ResidualModel, NewtonConfig, DEFAULT_POISSON_RATIO, DEFAULT_YOUNGS_MODULUS};
use crate::rom::RomConfig;
use crate::snapshots::{DatasetSplit, SamplingConfig, SnapshotSet};
use crate::training::TrainingPlan;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ENV: &str = "ROMFORGE_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FemConfig {
    pub nx: usize,
    pub ny: usize,
    pub length: f64,
    pub height: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

impl Default for FemConfig {
    fn default() -> Self {
        FemConfig {
            nx: 40,
            ny: 10,
            length: 2.0,
            height: 0.5,
            youngs_modulus: DEFAULT_YOUNGS_MODULUS,
            poisson_ratio: DEFAULT_POISSON_RATIO,
        }
    }
}

impl FemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::config("fem.nx", "element counts must be positive"));
        }
        if !(self.length > 0.0 && self.height > 0.0) {
            return Err(Error::config("fem.length", "beam dimensions must be positive"));
        }
        if !(self.youngs_modulus > 0.0) {
            return Err(Error::config("fem.youngs_modulus", "must be positive"));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(Error::config("fem.poisson_ratio", "must lie in (0, 0.5)"));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::cantilever(self.nx, self.ny, self.length, self.height)
    }

    pub fn build(&self) -> Result<FemModel> {
        self.validate()?;
        FemModel::new(self.mesh()?, self.youngs_modulus, self.poisson_ratio)
    }
}

/// Basis sizes for the single-model `svd`, `train` and `rom` commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodConfig {
    pub n: usize,
    pub n_bar: usize,
}

impl Default for PodConfig {
    fn default() -> Self {
        PodConfig { n: 14, n_bar: 46 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of every network initialization.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub fem: FemConfig,
    pub sampling: SamplingConfig,
    pub newton: NewtonConfig,
    pub pod: PodConfig,
    /// Hidden widths and batch size of every network outside the
    /// hyperparameter sub-grid.
    pub ann: NetVariant,
    pub training: TrainingPlan,
    pub rom: RomConfig,
    pub eval: GridConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("romforge_out"),
            fem: FemConfig::default(),
            sampling: SamplingConfig::default(),
            newton: NewtonConfig::default(),
            pod: PodConfig::default(),
            ann: NetVariant::default(),
            training: TrainingPlan::default(),
            rom: RomConfig::default(),
            eval: GridConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn defaults_json() -> String {
        serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes")
    }

    /// Checks every section and the constraints between them.
    pub fn validate(&self) -> Result<()> {
        self.fem.validate()?;
        self.sampling.validate()?;
        if self.newton.tolerance <= 0.0 || self.newton.max_iter == 0 || self.newton.load_steps == 0 {
            return Err(Error::config("newton", "tolerance, max_iter and load_steps must be positive"));
        }
        if self.pod.n == 0 {
            return Err(Error::config("pod.n", "must be positive"));
        }
        if self.pod.n + self.pod.n_bar > self.sampling.train {
            return Err(Error::config("pod.n_bar", "n + n_bar exceeds the number of training samples"));
        }
        if self.ann.batch_size == 0 || self.ann.hidden_layers.is_empty() || self.ann.hidden_layers.contains(&0) {
            return Err(Error::config("ann", "needs positive batch size and hidden widths"));
        }
        self.training.validate()?;
        self.rom.validate()?;
        self.grid().validate()?;
        if self.eval.latent_total > self.sampling.train {
            return Err(Error::config("eval.latent_total", "exceeds the number of training samples"));
        }
        if self.bench.prom_n.iter().any(|&n| n == 0 || n >= self.eval.latent_total) || self.bench.train_n >= self.eval.latent_total {
            return Err(Error::config("bench.prom_n", "sizes must lie in 1..eval.latent_total"));
        }
        if self.bench.pod_n.iter().any(|&n| n == 0 || n > self.sampling.train) {
            return Err(Error::config("bench.pod_n", "sizes must lie in 1..=sampling.train"));
        }
        Ok(())
    }

    /// The grid configuration with the main network taken from `ann`.
    pub fn grid(&self) -> GridConfig {
        GridConfig {
            net: self.ann.clone(),
            ..self.eval.clone()
        }
    }

    /// Output root, overridden by `ROMFORGE_OUT` when set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    /// Hash of everything that determines the snapshot data.
    pub fn dataset_hash(&self) -> String {
        hash_json(&(&self.fem, &self.sampling, &self.newton)).expect("config serializes")
    }

    /// Hash of everything that determines trained networks, given their
    /// sizes and architecture.
    pub fn training_hash(&self) -> String {
        hash_json(&(self.dataset_hash(), &self.training, self.seed)).expect("config serializes")
    }

    /// Grid runner over `data` that trains missing networks and stores
    /// bundles in `bundle_dir` when given.
    pub fn experiment<'a, M: ResidualModel>(
        &'a self,
        model: &'a M,
        data: &'a DatasetSplit,
        extrapolation: Option<&'a SnapshotSet>,
        bundle_dir: Option<PathBuf>,
    ) -> Experiment<'a, M> {
        Experiment::new(ExperimentContext {
            model,
            data,
            extrapolation,
            training: &self.training,
            rom: self.rom,
            net_seed: self.seed,
            dataset_hash: self.dataset_hash(),
            config_hash: self.training_hash(),
            bundle_dir,
            train_missing: true,
            retrain: false,
        })
    }
}

/// Lowercase hex SHA-256 of the compact JSON encoding.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let text = RunConfig::defaults_json();
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.grid().n_values, vec![6, 10, 14, 18, 20]);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 9, "sampling": {"train": 80}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sampling.train, 80);
        assert_eq!(cfg.sampling.validation, 125);
    }

    #[test]
    fn inverted_domain_names_the_field() {
        let err = RunConfig::from_json(r#"{"sampling": {"domain": {"px": [10.0, -10.0], "py": [0.0, 1.0]}}}"#).unwrap_err();
        assert!(err.to_string().contains("sampling.domain.px"), "{err}");
    }

    #[test]
    fn partial_training_sections_keep_their_regime() {
        let cfg = RunConfig::from_json(r#"{"training": {"r_loss": {"epochs": 3}}}"#).unwrap();
        assert_eq!(cfg.training.r_loss.epochs, 3);
        assert_eq!(cfg.training.r_loss.omega_d, 0.0);
        assert_eq!(cfg.training.r_loss.lr0, 1e-4);
        assert_eq!(cfg.training.s_loss, crate::training::TrainConfig::s_loss());
        assert!(RunConfig::from_json(r#"{"training": {"r_loss": {"epoch": 3}}}"#).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sede": 3}"#).is_err());
    }

    #[test]
    fn latent_sizes_checked_against_sample_count() {
        let err = RunConfig::from_json(r#"{"sampling": {"train": 30}}"#).unwrap_err();
        assert!(err.to_string().contains("pod.n_bar"), "{err}");
    }

    #[test]
    fn hashes_track_the_right_sections() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.rom.tolerance = 1e-6;
        assert_eq!(a.dataset_hash(), b.dataset_hash());
        assert_eq!(a.training_hash(), b.training_hash());
        b.training.s_loss.epochs = 3;
        assert_eq!(a.dataset_hash(), b.dataset_hash());
        assert_ne!(a.training_hash(), b.training_hash());
        b.sampling.train = 400;
        assert_ne!(a.dataset_hash(), b.dataset_hash());
        assert_eq!(a.dataset_hash().len(), 64);
    }
}
