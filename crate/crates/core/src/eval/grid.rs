use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::metrics::{metric_e_r, metric_e_u};
use crate::ann::init_mlp;
use crate::config::hash_json;
use crate::error::{Error, Result};
use crate::fem::ResidualModel;
use crate::manifold::{Bundle, BundleManifest, PromAnnManifold};
use crate::pod::{build_bases, compute_svd, RomBases, SvdFactors};
use crate::rom::{pod_rom_solve_many, rom_solve_many, RomConfig, RomSolution};
use crate::snapshots::{DatasetSplit, SnapshotSet};
use crate::training::{data_loss, require_warm_start, train_with_checkpoints, write_history, LossMode, TrainingPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pod,
    QLoss,
    SLoss,
    RLoss,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Pod => "POD",
            ModelKind::QLoss => "q-loss",
            ModelKind::SLoss => "s-loss",
            ModelKind::RLoss => "r-loss",
        }
    }

    fn loss_mode(self) -> Option<LossMode> {
        match self {
            ModelKind::Pod => None,
            ModelKind::QLoss => Some(LossMode::QLoss),
            ModelKind::SLoss => Some(LossMode::SLoss),
            ModelKind::RLoss => Some(LossMode::RLoss),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// `D(E(u*))` on the evaluation set.
    Reconstruction,
    /// Online Galerkin solve at each evaluation load.
    Rom,
}

impl EvalMode {
    pub fn tag(self) -> &'static str {
        match self {
            EvalMode::Reconstruction => "reconstruction",
            EvalMode::Rom => "rom",
        }
    }
}

/// Hidden layer widths and batch size of one network configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetVariant {
    pub hidden_layers: Vec<usize>,
    pub batch_size: usize,
}

impl NetVariant {
    fn label(&self) -> String {
        let h: Vec<String> = self.hidden_layers.iter().map(|w| w.to_string()).collect();
        format!("layers={} batch={}", h.join("-"), self.batch_size)
    }
}

impl Default for NetVariant {
    fn default() -> Self {
        NetVariant {
            hidden_layers: vec![200, 200],
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub n_values: Vec<usize>,
    /// `n + n̄` for every grid point.
    pub latent_total: usize,
    /// Main network; a run configuration supplies it from its `ann` section.
    #[serde(skip)]
    pub net: NetVariant,
    pub models: Vec<ModelKind>,
    pub modes: Vec<EvalMode>,
    /// Primary sizes of the reduced-dataset and extrapolation sub-grids.
    pub appendix_n_values: Vec<usize>,
    /// Training samples of the reduced-dataset sub-grid.
    pub reduced_train_samples: usize,
    /// Primary size of the hyperparameter sub-grid.
    pub appendix_c_n: usize,
    pub appendix_c_variants: Vec<NetVariant>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let v = |h: &[usize], b| NetVariant {
            hidden_layers: h.to_vec(),
            batch_size: b,
        };
        GridConfig {
            n_values: vec![6, 10, 14, 18, 20],
            latent_total: 60,
            net: NetVariant::default(),
            models: vec![ModelKind::Pod, ModelKind::QLoss, ModelKind::SLoss, ModelKind::RLoss],
            modes: vec![EvalMode::Reconstruction, EvalMode::Rom],
            appendix_n_values: vec![6, 10, 14, 18],
            reduced_train_samples: 250,
            appendix_c_n: 14,
            appendix_c_variants: vec![
                v(&[200], 16),
                v(&[200, 200], 8),
                v(&[200, 200], 16),
                v(&[400, 400], 16),
            ],
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let all_n = self.n_values.iter().chain(&self.appendix_n_values).chain([&self.appendix_c_n]);
        for &n in all_n {
            if n == 0 || n >= self.latent_total {
                return Err(Error::config("eval.n_values", format!("n = {n} must lie in 1..latent_total")));
            }
        }
        let nets = std::iter::once(&self.net).chain(&self.appendix_c_variants);
        for net in nets {
            if net.batch_size == 0 || net.hidden_layers.is_empty() || net.hidden_layers.contains(&0) {
                return Err(Error::config("eval.net", "needs positive batch size and hidden widths"));
            }
        }
        if self.reduced_train_samples == 0 {
            return Err(Error::config("eval.reduced_train_samples", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub n: usize,
    pub nbar: usize,
    pub mode: String,
    pub e_u: f64,
    #[serde(rename = "e_R")]
    pub e_r: f64,
    pub n_samples: usize,
    pub mean_iter: f64,
    pub notes: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    /// Normalized training-set data loss of every network used, by bundle name.
    pub data_losses: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn find(&self, model: ModelKind, n: usize, mode: EvalMode) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model.tag() && r.n == n && r.mode == mode.tag())
    }

    fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.data_losses.extend(other.data_losses);
    }
}

/// Inputs shared by every grid cell.
pub struct ExperimentContext<'a, M: ResidualModel> {
    pub model: &'a M,
    pub data: &'a DatasetSplit,
    pub extrapolation: Option<&'a SnapshotSet>,
    pub training: &'a TrainingPlan,
    pub rom: RomConfig,
    /// Seed of every freshly initialized network.
    pub net_seed: u64,
    pub dataset_hash: String,
    /// Hash of the configuration sections that shape trained networks.
    pub config_hash: String,
    /// Directory holding one bundle per trained network.
    pub bundle_dir: Option<PathBuf>,
    /// Train networks whose bundle is missing instead of skipping them.
    pub train_missing: bool,
    /// Retrain even when a bundle exists.
    pub retrain: bool,
}

/// A trained or loaded network with the bundle name it is stored under.
#[derive(Clone)]
pub struct Obtained {
    pub manifold: PromAnnManifold,
    pub key: String,
    pub lineage: Vec<String>,
    /// Bundle directory, when bundles are stored.
    pub bundle_path: Option<PathBuf>,
}

/// Grid runner with SVD and manifold caches.
pub struct Experiment<'a, M: ResidualModel> {
    ctx: ExperimentContext<'a, M>,
    svds: HashMap<usize, Arc<SvdFactors>>,
    manifolds: HashMap<String, Obtained>,
}

#[derive(Debug, Clone, Copy)]
struct Cell<'v> {
    kind: ModelKind,
    n: usize,
    n_bar: usize,
    net: &'v NetVariant,
    train_len: usize,
}

impl<'a, M: ResidualModel> Experiment<'a, M> {
    pub fn new(ctx: ExperimentContext<'a, M>) -> Self {
        Experiment {
            ctx,
            svds: HashMap::new(),
            manifolds: HashMap::new(),
        }
    }

    pub fn context(&self) -> &ExperimentContext<'a, M> {
        &self.ctx
    }

    pub fn into_context(self) -> ExperimentContext<'a, M> {
        self.ctx
    }

    fn train_set(&self, len: usize) -> SnapshotSet {
        let full = &self.ctx.data.train;
        if len >= full.len() {
            full.clone()
        } else {
            full.head(len)
        }
    }

    fn svd(&mut self, train_len: usize) -> Result<Arc<SvdFactors>> {
        if let Some(s) = self.svds.get(&train_len) {
            return Ok(s.clone());
        }
        let set = self.train_set(train_len);
        let svd = Arc::new(compute_svd(&set.u_star)?);
        self.svds.insert(train_len, svd.clone());
        Ok(svd)
    }

    /// POD bases with both normalizers filled from the training set.
    pub fn bases(&mut self, n: usize, n_bar: usize, train_len: usize) -> Result<RomBases> {
        let svd = self.svd(train_len)?;
        let set = self.train_set(train_len);
        let mut bases = build_bases(&svd, n, n_bar, set.len())?;
        bases.fill_pod_errors(self.ctx.model, &set)?;
        Ok(bases)
    }

    /// Leading `n` POD modes of the training set.
    pub fn pod_basis(&mut self, n: usize, train_len: usize) -> Result<DMatrix<f64>> {
        let svd = self.svd(train_len)?;
        if n > svd.u.ncols() {
            return Err(Error::config("eval.n_values", format!("n = {n} exceeds the snapshot count")));
        }
        Ok(svd.u.columns(0, n).into_owned())
    }

    fn key(cell: &Cell) -> String {
        let h: Vec<String> = cell.net.hidden_layers.iter().map(|w| w.to_string()).collect();
        format!(
            "{}_n{}_nb{}_h{}_b{}_m{}",
            cell.kind.loss_mode().map_or("pod", |m| m.tag()),
            cell.n,
            cell.n_bar,
            h.join("-"),
            cell.net.batch_size,
            cell.train_len
        )
    }

    fn cell_hash(&self, cell: &Cell) -> Result<String> {
        #[derive(Serialize)]
        struct CellId<'c> {
            base: &'c str,
            kind: ModelKind,
            n: usize,
            n_bar: usize,
            net: &'c NetVariant,
            train_len: usize,
            seed: u64,
        }
        hash_json(&CellId {
            base: &self.ctx.config_hash,
            kind: cell.kind,
            n: cell.n,
            n_bar: cell.n_bar,
            net: cell.net,
            train_len: cell.train_len,
            seed: self.ctx.net_seed,
        })
    }

    /// Trained network for a grid cell: from cache, from its bundle, or trained
    /// now. `None` when the bundle is missing and training is disabled.
    pub fn obtain(
        &mut self,
        kind: ModelKind,
        n: usize,
        n_bar: usize,
        net: &NetVariant,
        train_len: usize,
    ) -> Result<Option<Obtained>> {
        let cell = Cell {
            kind,
            n,
            n_bar,
            net,
            train_len: train_len.min(self.ctx.data.train.len()),
        };
        self.obtain_cell(&cell)
    }

    /// Name of the bundle directory of a grid cell.
    pub fn bundle_key(&self, kind: ModelKind, n: usize, n_bar: usize, net: &NetVariant, train_len: usize) -> String {
        Self::key(&Cell {
            kind,
            n,
            n_bar,
            net,
            train_len: train_len.min(self.ctx.data.train.len()),
        })
    }

    /// Trains a snapshot or q-loss cell from a fresh network, replacing any
    /// stored bundle.
    pub fn retrain(
        &mut self,
        kind: ModelKind,
        n: usize,
        n_bar: usize,
        net: &NetVariant,
        train_len: usize,
    ) -> Result<Obtained> {
        if !matches!(kind, ModelKind::SLoss | ModelKind::QLoss) {
            return Err(Error::InvalidInput(format!("{} is not trained from scratch", kind.tag())));
        }
        let cell = Cell {
            kind,
            n,
            n_bar,
            net,
            train_len: train_len.min(self.ctx.data.train.len()),
        };
        self.train_cell(&cell, None)
    }

    fn obtain_cell(&mut self, cell: &Cell) -> Result<Option<Obtained>> {
        let Some(mode) = cell.kind.loss_mode() else {
            return Err(Error::InvalidInput("POD has no trained network".into()));
        };
        let key = Self::key(cell);
        if let Some(o) = self.manifolds.get(&key) {
            return Ok(Some(o.clone()));
        }
        let hash = self.cell_hash(cell)?;
        let path = self.ctx.bundle_dir.as_ref().map(|d| d.join(&key));
        if let Some(p) = path.as_ref().filter(|p| p.join("manifest.json").exists() && !self.ctx.retrain) {
            let bundle = Bundle::load(p)?;
            check_hash(&key, "dataset", &bundle.manifest.dataset_hash, &self.ctx.dataset_hash)?;
            check_hash(&key, "config", &bundle.manifest.config_hash, &hash)?;
            let o = Obtained {
                manifold: bundle.manifold,
                key: key.clone(),
                lineage: bundle.manifest.lineage,
                bundle_path: Some(p.clone()),
            };
            self.manifolds.insert(key, o.clone());
            return Ok(Some(o));
        }
        if !self.ctx.train_missing {
            return Ok(None);
        }
        let parent = match mode {
            LossMode::RLoss => {
                let parent = Cell {
                    kind: ModelKind::SLoss,
                    ..*cell
                };
                match self.obtain_cell(&parent)? {
                    Some(p) => Some(p),
                    None => return Ok(None),
                }
            }
            LossMode::SLoss | LossMode::QLoss => None,
        };
        self.train_cell(cell, parent).map(Some)
    }

    /// Residual fine-tuning of `parent` into the r-loss cell for these sizes,
    /// replacing any stored bundle of that cell.
    pub fn fine_tune(
        &mut self,
        n: usize,
        n_bar: usize,
        net: &NetVariant,
        train_len: usize,
        parent: Obtained,
    ) -> Result<Obtained> {
        let cell = Cell {
            kind: ModelKind::RLoss,
            n,
            n_bar,
            net,
            train_len: train_len.min(self.ctx.data.train.len()),
        };
        if parent.manifold.n() != n || parent.manifold.net.output_dim() != n_bar {
            return Err(Error::DimensionMismatch {
                expected: n + n_bar,
                found: parent.manifold.n() + parent.manifold.net.output_dim(),
            });
        }
        self.train_cell(&cell, Some(parent))
    }

    /// Trains a cell from a fresh network, or from `parent` for residual
    /// fine-tuning, and stores its bundle with epoch checkpoints.
    fn train_cell(&mut self, cell: &Cell, parent: Option<Obtained>) -> Result<Obtained> {
        let mode = cell.kind.loss_mode().expect("trained cell");
        let key = Self::key(cell);
        let hash = self.cell_hash(cell)?;
        let path = self.ctx.bundle_dir.as_ref().map(|d| d.join(&key));
        let set = self.train_set(cell.train_len);
        let cfg = crate::training::TrainConfig {
            batch_size: cell.net.batch_size,
            ..self.ctx.training.get(mode).clone()
        };
        let (start, mut lineage) = match (mode, parent) {
            (LossMode::RLoss, Some(p)) => {
                require_warm_start(&p.lineage)?;
                (p.manifold, p.lineage)
            }
            (LossMode::RLoss, None) => return Err(Error::ColdResidualStart),
            _ => {
                let bases = self.bases(cell.n, cell.n_bar, cell.train_len)?;
                let mut dims = vec![cell.n];
                dims.extend(&cell.net.hidden_layers);
                dims.push(cell.n_bar);
                let net = init_mlp(&dims, self.ctx.net_seed)?;
                let m = if mode == LossMode::QLoss {
                    PromAnnManifold::original(bases, net, &set.u_star)?
                } else {
                    PromAnnManifold::scaled(bases, net)?
                };
                (m, Vec::new())
            }
        };
        lineage.push(mode.tag().to_string());
        let manifest = |m: &PromAnnManifold, epochs: usize| BundleManifest {
            variant: m.variant,
            dataset_hash: self.ctx.dataset_hash.clone(),
            config_hash: hash.clone(),
            lineage: lineage.clone(),
            seed: self.ctx.net_seed,
            optimizer: cfg.optimizer,
            epochs,
            u_ref: None,
        };
        log::info!("training {key} ({} epochs)", cfg.epochs);
        let t0 = std::time::Instant::now();
        let outcome = train_with_checkpoints(
            start,
            &set,
            &self.ctx.data.validation,
            self.ctx.model,
            &cfg,
            |epoch, m| match &path {
                Some(p) => {
                    let bundle = Bundle {
                        manifold: m.clone(),
                        manifest: manifest(m, epoch),
                    };
                    bundle.save(p.join("checkpoints").join(format!("epoch_{epoch:05}")), true)?;
                    Ok(())
                }
                None => Ok(()),
            },
        )?;
        log::info!(
            "trained {key} in {:.1} s, best validation loss {:.3e} at epoch {}",
            t0.elapsed().as_secs_f64(),
            outcome.best_val_loss,
            outcome.best_epoch
        );
        if let Some(p) = &path {
            let bundle = Bundle {
                manifold: outcome.manifold.clone(),
                manifest: manifest(&outcome.manifold, cfg.epochs),
            };
            bundle.save(p, true)?;
            write_history(p.join("history.csv"), &outcome.history)?;
        }
        let o = Obtained {
            manifold: outcome.manifold,
            key: key.clone(),
            lineage,
            bundle_path: path,
        };
        self.manifolds.insert(key, o.clone());
        Ok(o)
    }

    /// One report row for a model on an evaluation set.
    fn evaluate(
        &mut self,
        cell: &Cell,
        mode: EvalMode,
        set: &SnapshotSet,
        notes: &[String],
        report: &mut EvalReport,
    ) -> Result<()> {
        let mut notes = notes.to_vec();
        let mut row = ReportRow {
            model: cell.kind.tag().to_string(),
            n: cell.n,
            nbar: if cell.kind == ModelKind::Pod { 0 } else { cell.n_bar },
            mode: mode.tag().to_string(),
            e_u: f64::NAN,
            e_r: f64::NAN,
            n_samples: 0,
            mean_iter: f64::NAN,
            notes: String::new(),
        };
        let (predictions, truths, iters) = if cell.kind == ModelKind::Pod {
            let phi = self.pod_basis(cell.n, cell.train_len)?;
            match mode {
                EvalMode::Reconstruction => (&phi * phi.tr_mul(&set.u_star), set.u_star.clone(), None),
                EvalMode::Rom => {
                    let sols = pod_rom_solve_many(&phi, self.ctx.model, &set.params, &self.ctx.rom);
                    collect_rom(sols, set, &mut notes)
                }
            }
        } else {
            let Some(o) = self.obtain_cell(cell)? else {
                notes.push("missing bundle".into());
                row.notes = notes.join("; ");
                report.rows.push(row);
                return Ok(());
            };
            let ld = data_loss(&o.manifold, &self.train_set(cell.train_len).u_star, o.manifold.bases.e_pod_d)?;
            report.data_losses.insert(o.key.clone(), ld);
            notes.push(format!("bundle={}", o.key));
            match mode {
                EvalMode::Reconstruction => (o.manifold.reconstruct_batch(&set.u_star), set.u_star.clone(), None),
                EvalMode::Rom => {
                    let sols = rom_solve_many(&o.manifold, self.ctx.model, &set.params, &self.ctx.rom);
                    collect_rom(sols, set, &mut notes)
                }
            }
        };
        row.n_samples = predictions.ncols();
        if row.n_samples > 0 {
            let mu = set.mu_res;
            row.e_u = metric_e_u(&predictions, &truths)?;
            row.e_r = metric_e_r(self.ctx.model, &predictions, &truths, &mu)?;
        }
        if let Some(it) = iters {
            row.mean_iter = it;
        }
        row.notes = notes.join("; ");
        report.rows.push(row);
        Ok(())
    }

    fn full_len(&self) -> usize {
        self.ctx.data.train.len()
    }

    /// Main grid: every model at every `n` with `n + n̄` fixed, in both modes.
    pub fn run_grid(&mut self, cfg: &GridConfig) -> Result<EvalReport> {
        cfg.validate()?;
        let mut report = EvalReport::default();
        let test = self.ctx.data.test.clone();
        let full = self.full_len();
        for &n in &cfg.n_values {
            for &kind in &cfg.models {
                for &mode in &cfg.modes {
                    let cell = Cell {
                        kind,
                        n,
                        n_bar: cfg.latent_total - n,
                        net: &cfg.net,
                        train_len: full,
                    };
                    self.evaluate(&cell, mode, &test, &[], &mut report)?;
                }
            }
        }
        Ok(report)
    }

    /// Models trained on the full and on a reduced training set.
    pub fn run_reduced_dataset(&mut self, cfg: &GridConfig) -> Result<EvalReport> {
        cfg.validate()?;
        let mut report = EvalReport::default();
        let test = self.ctx.data.test.clone();
        let full = self.full_len();
        let reduced = cfg.reduced_train_samples.min(full);
        for &n in &cfg.appendix_n_values {
            for train_len in [full, reduced] {
                for kind in [ModelKind::Pod, ModelKind::SLoss, ModelKind::RLoss] {
                    for &mode in &cfg.modes {
                        let cell = Cell {
                            kind,
                            n,
                            n_bar: cfg.latent_total - n,
                            net: &cfg.net,
                            train_len,
                        };
                        let notes = [format!("train_samples={train_len}")];
                        self.evaluate(&cell, mode, &test, &notes, &mut report)?;
                    }
                }
            }
        }
        Ok(report)
    }

    /// Models evaluated on the test set and on the out-of-domain band.
    pub fn run_extrapolation(&mut self, cfg: &GridConfig) -> Result<EvalReport> {
        cfg.validate()?;
        let Some(extra) = self.ctx.extrapolation.cloned() else {
            return Err(Error::InvalidInput("no extrapolation set available".into()));
        };
        let mut report = EvalReport::default();
        let test = self.ctx.data.test.clone();
        let full = self.full_len();
        for &n in &cfg.appendix_n_values {
            for kind in [ModelKind::Pod, ModelKind::SLoss, ModelKind::RLoss] {
                for (label, set) in [("test", &test), ("extrapolation", &extra)] {
                    for &mode in &cfg.modes {
                        let cell = Cell {
                            kind,
                            n,
                            n_bar: cfg.latent_total - n,
                            net: &cfg.net,
                            train_len: full,
                        };
                        self.evaluate(&cell, mode, set, &[format!("set={label}")], &mut report)?;
                    }
                }
            }
        }
        Ok(report)
    }

    /// Network width and batch-size variants at one grid point.
    pub fn run_hyperparameters(&mut self, cfg: &GridConfig) -> Result<EvalReport> {
        cfg.validate()?;
        let mut report = EvalReport::default();
        let test = self.ctx.data.test.clone();
        let full = self.full_len();
        let n = cfg.appendix_c_n;
        for net in &cfg.appendix_c_variants {
            for kind in [ModelKind::SLoss, ModelKind::RLoss] {
                for &mode in &cfg.modes {
                    let cell = Cell {
                        kind,
                        n,
                        n_bar: cfg.latent_total - n,
                        net,
                        train_len: full,
                    };
                    self.evaluate(&cell, mode, &test, &[net.label()], &mut report)?;
                }
            }
        }
        Ok(report)
    }

    /// Main grid followed by the requested sub-grids.
    pub fn run_all(&mut self, cfg: &GridConfig, appendices: &[Appendix]) -> Result<GridReports> {
        let main = self.run_grid(cfg)?;
        let mut out = GridReports {
            main,
            appendices: Vec::new(),
        };
        for &a in appendices {
            let r = match a {
                Appendix::ReducedDataset => self.run_reduced_dataset(cfg)?,
                Appendix::Extrapolation => self.run_extrapolation(cfg)?,
                Appendix::Hyperparameters => self.run_hyperparameters(cfg)?,
            };
            out.appendices.push((a, r));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Appendix {
    /// Reduced training set.
    ReducedDataset,
    /// Out-of-domain loads.
    Extrapolation,
    /// Network width and batch size.
    Hyperparameters,
}

impl Appendix {
    pub fn letter(self) -> char {
        match self {
            Appendix::ReducedDataset => 'a',
            Appendix::Extrapolation => 'b',
            Appendix::Hyperparameters => 'c',
        }
    }

    pub fn from_letter(c: char) -> Result<Self> {
        match c.to_ascii_lowercase() {
            'a' => Ok(Appendix::ReducedDataset),
            'b' => Ok(Appendix::Extrapolation),
            'c' => Ok(Appendix::Hyperparameters),
            other => Err(Error::config("eval.appendix", format!("unknown appendix {other:?}"))),
        }
    }
}

pub struct GridReports {
    pub main: EvalReport,
    pub appendices: Vec<(Appendix, EvalReport)>,
}

impl GridReports {
    /// `report.csv`, `appendix_<x>.csv` and the per-figure plot data in `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut emit = |name: String, report: &EvalReport| -> Result<()> {
            let p = dir.join(name);
            report.write_csv(&p)?;
            written.push(p);
            Ok(())
        };
        emit("report.csv".into(), &self.main)?;
        for (a, r) in &self.appendices {
            emit(format!("appendix_{}.csv", a.letter()), r)?;
        }
        let pick = |models: &[ModelKind], modes: &[EvalMode]| EvalReport {
            rows: self
                .main
                .rows
                .iter()
                .filter(|r| models.iter().any(|m| m.tag() == r.model) && modes.iter().any(|m| m.tag() == r.mode))
                .cloned()
                .collect(),
            data_losses: BTreeMap::new(),
        };
        let both = [EvalMode::Reconstruction, EvalMode::Rom];
        emit(
            "plot_snapshot_errors_by_architecture.csv".into(),
            &pick(&[ModelKind::Pod, ModelKind::QLoss, ModelKind::SLoss], &both),
        )?;
        emit(
            "plot_snapshot_errors_by_loss.csv".into(),
            &pick(&[ModelKind::SLoss, ModelKind::RLoss], &both),
        )?;
        emit(
            "plot_residual_errors_by_loss.csv".into(),
            &pick(&[ModelKind::SLoss, ModelKind::RLoss], &[EvalMode::Reconstruction]),
        )?;
        Ok(written)
    }

    pub fn combined(&self) -> EvalReport {
        let mut all = self.main.clone();
        for (_, r) in &self.appendices {
            all.extend(r.clone());
        }
        all
    }
}

fn check_hash(key: &str, what: &str, recorded: &str, expected: &str) -> Result<()> {
    if recorded != expected {
        return Err(Error::HashMismatch {
            artifact: format!("bundle {key} ({what})"),
            recorded: recorded.to_string(),
            expected: expected.to_string(),
        });
    }
    Ok(())
}

/// Converged ROM states next to their truths, and the mean iteration count.
fn collect_rom(
    sols: Vec<Result<RomSolution>>,
    set: &SnapshotSet,
    notes: &mut Vec<String>,
) -> (DMatrix<f64>, DMatrix<f64>, Option<f64>) {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut iters = 0usize;
    let mut failures = 0usize;
    for (j, s) in sols.into_iter().enumerate() {
        match s {
            Ok(s) => {
                iters += s.total_iterations();
                preds.push(s.u);
                truths.push(set.u_star.column(j).into_owned());
            }
            Err(e) => {
                log::warn!("ROM failed for sample {j}: {e}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        notes.push(format!("rom_failures={failures}"));
    }
    if preds.is_empty() {
        let n = set.n_dofs();
        return (DMatrix::zeros(n, 0), DMatrix::zeros(n, 0), None);
    }
    let mean = iters as f64 / preds.len() as f64;
    (DMatrix::from_columns(&preds), DMatrix::from_columns(&truths), Some(mean))
}
