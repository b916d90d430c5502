//! Offline training of the manifold network: snapshot, residual and
//! secondary-coordinate losses, their gradients and the epoch loop.

mod loss;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    combined_gradient, compact_q_loss, compact_q_loss_and_gradient, compact_q_loss_from_coords, data_loss, evaluate_batch,
    naive_combined_gradient, residual_loss_and_cotangents, BatchWork, LossScalings, LossWeights,
};

use crate::ann::{lr_at_epoch, AdamW, Gradient, OptimizerConfig};
use crate::error::{Error, Result};
use crate::fem::ResidualModel;
use crate::manifold::{PromAnnManifold, Variant};
use crate::snapshots::SnapshotSet;

/// Which loss drives the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Secondary-coordinate loss of the original formulation.
    QLoss,
    /// Full-space snapshot loss.
    SLoss,
    /// Residual loss, fine-tuning a snapshot-trained network.
    RLoss,
}

impl LossMode {
    pub fn tag(self) -> &'static str {
        match self {
            LossMode::QLoss => "q_loss",
            LossMode::SLoss => "s_loss",
            LossMode::RLoss => "r_loss",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "q_loss" | "qloss" => Ok(LossMode::QLoss),
            "s_loss" | "sloss" => Ok(LossMode::SLoss),
            "r_loss" | "rloss" => Ok(LossMode::RLoss),
            other => Err(Error::config("training.loss_mode", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub omega_d: f64,
    pub omega_r: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::s_loss()
    }
}

impl TrainConfig {
    /// Snapshot loss: 800 epochs from 1e-3.
    pub fn s_loss() -> Self {
        TrainConfig {
            loss_mode: LossMode::SLoss,
            omega_d: 1.0,
            omega_r: 0.0,
            epochs: 800,
            batch_size: 16,
            lr0: 1e-3,
            lr_min: 1e-6,
            seed: 42,
            checkpoint_every: 0,
            optimizer: OptimizerConfig::default(),
        }
    }

    /// Residual fine-tuning: 200 epochs from 1e-4.
    pub fn r_loss() -> Self {
        TrainConfig {
            loss_mode: LossMode::RLoss,
            omega_d: 0.0,
            omega_r: 1.0,
            epochs: 200,
            lr0: 1e-4,
            ..TrainConfig::s_loss()
        }
    }

    /// Original secondary-coordinate loss: 800 epochs from 1e-3.
    pub fn q_loss() -> Self {
        TrainConfig {
            loss_mode: LossMode::QLoss,
            ..TrainConfig::s_loss()
        }
    }

    pub fn for_mode(mode: LossMode) -> Self {
        match mode {
            LossMode::QLoss => Self::q_loss(),
            LossMode::SLoss => Self::s_loss(),
            LossMode::RLoss => Self::r_loss(),
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            omega_d: self.omega_d,
            omega_r: self.omega_r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_d >= 0.0 && self.omega_r >= 0.0) {
            return Err(Error::config("training.omega", "weights must be nonnegative"));
        }
        if self.loss_mode != LossMode::QLoss && !(self.omega_d + self.omega_r > 0.0) {
            return Err(Error::config("training.omega", "omega_d + omega_r must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        if !(self.lr0 > 0.0) || !(self.lr_min >= 0.0) {
            return Err(Error::config("training.lr0", "learning rates must be positive"));
        }
        self.optimizer.validate()
    }
}

/// The three regimes used by the experiments. A partial section keeps the
/// preset of its own regime for every field it omits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartialPlan")]
pub struct TrainingPlan {
    pub s_loss: TrainConfig,
    pub r_loss: TrainConfig,
    pub q_loss: TrainConfig,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        TrainingPlan {
            s_loss: TrainConfig::s_loss(),
            r_loss: TrainConfig::r_loss(),
            q_loss: TrainConfig::q_loss(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialPlan {
    #[serde(default)]
    s_loss: Option<serde_json::Value>,
    #[serde(default)]
    r_loss: Option<serde_json::Value>,
    #[serde(default)]
    q_loss: Option<serde_json::Value>,
}

impl TryFrom<PartialPlan> for TrainingPlan {
    type Error = serde_json::Error;

    fn try_from(p: PartialPlan) -> std::result::Result<Self, Self::Error> {
        let merge = |mode: LossMode, patch: Option<serde_json::Value>| -> std::result::Result<TrainConfig, _> {
            let mut base = serde_json::to_value(TrainConfig::for_mode(mode))?;
            match (patch, &mut base) {
                (Some(serde_json::Value::Object(patch)), serde_json::Value::Object(base)) => base.extend(patch),
                (Some(other), _) => return serde_json::from_value(other),
                (None, _) => {}
            }
            serde_json::from_value(base)
        };
        Ok(TrainingPlan {
            s_loss: merge(LossMode::SLoss, p.s_loss)?,
            r_loss: merge(LossMode::RLoss, p.r_loss)?,
            q_loss: merge(LossMode::QLoss, p.q_loss)?,
        })
    }
}

impl TrainingPlan {
    pub fn get(&self, mode: LossMode) -> &TrainConfig {
        match mode {
            LossMode::QLoss => &self.q_loss,
            LossMode::SLoss => &self.s_loss,
            LossMode::RLoss => &self.r_loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for mode in [LossMode::SLoss, LossMode::RLoss, LossMode::QLoss] {
            let cfg = self.get(mode);
            if cfg.loss_mode != mode {
                return Err(Error::config(
                    format!("training.{}.loss_mode", mode.tag()),
                    "does not match its section",
                ));
            }
            cfg.validate()?;
        }
        Ok(())
    }
}

/// Residual training must start from a network that already saw the snapshot loss.
pub fn require_warm_start(lineage: &[String]) -> Result<()> {
    if lineage.iter().any(|l| l == LossMode::SLoss.tag()) {
        Ok(())
    } else {
        Err(Error::ColdResidualStart)
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: f64,
    /// Snapshot loss on the validation set, whatever the training mode.
    pub val_data_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network with the lowest validation loss seen (epoch 0 is the input network).
    pub manifold: PromAnnManifold,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Writes the history as CSV.
pub fn write_history(path: impl AsRef<std::path::Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// A snapshot set with its encoded coordinates.
#[derive(Debug, Clone)]
pub struct PreparedSet<'a> {
    pub set: &'a SnapshotSet,
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
}

impl<'a> PreparedSet<'a> {
    pub fn new(manifold: &PromAnnManifold, set: &'a SnapshotSet) -> Self {
        PreparedSet {
            set,
            q: manifold.encode_batch(&set.u_star),
            q_bar: manifold.secondary_targets(&set.u_star),
        }
    }
}

/// Loss and gradient of one batch in the configured mode.
pub fn batch_loss_and_gradient<M: ResidualModel>(
    manifold: &PromAnnManifold,
    model: &M,
    data: &PreparedSet<'_>,
    idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, Gradient)> {
    let q = data.q.select_columns(idx);
    match cfg.loss_mode {
        LossMode::QLoss => {
            let target = data.q_bar.select_columns(idx);
            Ok(compact_q_loss_and_gradient(manifold, &q, &target))
        }
        LossMode::SLoss | LossMode::RLoss => {
            let weights = cfg.weights();
            let scalings = LossScalings::from_manifold(manifold);
            let work = evaluate_batch(
                manifold,
                model,
                &q,
                &data.set.u_star.select_columns(idx),
                &data.set.r_star.select_columns(idx),
                &data.set.mu_res,
                &weights,
                &scalings,
                false,
            )?;
            let grad = combined_gradient(manifold, &work, &weights, &scalings)?;
            Ok((work.total_loss(&weights), grad))
        }
    }
}

/// Validation loss in the training mode, plus the snapshot loss.
fn validation_losses<M: ResidualModel>(
    manifold: &PromAnnManifold,
    model: &M,
    data: &PreparedSet<'_>,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let scalings = LossScalings::from_manifold(manifold);
    let all: Vec<usize> = (0..data.set.len()).collect();
    let mut total = 0.0;
    let mut data_total = 0.0;
    for chunk in all.chunks(256) {
        let q = data.q.select_columns(chunk);
        let u = data.set.u_star.select_columns(chunk);
        let weight = chunk.len() as f64 / all.len() as f64;
        let (loss, data_loss) = match cfg.loss_mode {
            LossMode::QLoss => {
                let target = data.q_bar.select_columns(chunk);
                let l = compact_q_loss_from_coords(manifold, &q, &target);
                let d = if scalings.e_pod_d > 0.0 {
                    (manifold.decode_batch(&q) - &u).norm_squared() / u.len() as f64 / scalings.e_pod_d
                } else {
                    f64::NAN
                };
                (l, d)
            }
            LossMode::SLoss | LossMode::RLoss => {
                let weights = cfg.weights();
                let work = evaluate_batch(
                    manifold,
                    model,
                    &q,
                    &u,
                    &data.set.r_star.select_columns(chunk),
                    &data.set.mu_res,
                    &weights,
                    &scalings,
                    false,
                )?;
                (work.total_loss(&weights), work.data_loss)
            }
        };
        total += weight * loss;
        data_total += weight * data_loss;
    }
    Ok((total, data_total))
}

/// Trains without checkpoints; see [`train_with_checkpoints`].
pub fn train<M: ResidualModel>(
    manifold: PromAnnManifold,
    train_set: &SnapshotSet,
    validation: &SnapshotSet,
    model: &M,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_checkpoints(manifold, train_set, validation, model, cfg, |_, _| Ok(()))
}

/// Epoch loop: seeded Fisher-Yates shuffle, mini-batch AdamW steps on the
/// half-cosine schedule, validation after every epoch. The network with the
/// lowest validation loss is returned. `on_checkpoint` sees the current
/// network every `cfg.checkpoint_every` epochs.
pub fn train_with_checkpoints<M, F>(
    manifold: PromAnnManifold,
    train_set: &SnapshotSet,
    validation: &SnapshotSet,
    model: &M,
    cfg: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<TrainOutcome>
where
    M: ResidualModel,
    F: FnMut(usize, &PromAnnManifold) -> Result<()>,
{
    cfg.validate()?;
    if (cfg.loss_mode == LossMode::QLoss) != (manifold.variant == Variant::Original) {
        return Err(Error::config(
            "training.loss_mode",
            "q_loss trains the original variant; s_loss and r_loss train the scaled one",
        ));
    }
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut manifold = manifold;
    let train_data = PreparedSet::new(&manifold, train_set);
    let val_data = PreparedSet::new(&manifold, validation);
    let has_val = !validation.is_empty();

    let mut best = manifold.clone();
    let mut best_epoch = 0;
    let mut best_val = if has_val {
        validation_losses(&manifold, model, &val_data, cfg)?.0
    } else {
        f64::INFINITY
    };

    let mut opt = AdamW::new(cfg.optimizer, &manifold.net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = lr_at_epoch(cfg.lr0, cfg.lr_min, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = batch_loss_and_gradient(&manifold, model, &train_data, idx, cfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                });
            }
            loss_sum += loss * idx.len() as f64;
            opt.step(&mut manifold.net, &grad, lr);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_data_loss) = if has_val {
            validation_losses(&manifold, model, &val_data, cfg)?
        } else {
            (f64::NAN, f64::NAN)
        };
        if !has_val || val_loss < best_val {
            best_val = if has_val { val_loss } else { train_loss };
            best_epoch = epoch + 1;
            best = manifold.clone();
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            val_loss,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            val_data_loss,
        });
        log::debug!("epoch {} lr {lr:.3e} train {train_loss:.4e} val {val_loss:.4e}", epoch + 1);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(epoch + 1, &manifold)?;
        }
    }
    Ok(TrainOutcome {
        manifold: best,
        history,
        best_epoch,
        best_val_loss: best_val,
    })
}
