// SPDX-License-Identifier: Apache-2.0

//! Mini-batch Adam training with BCE loss and validation-AUC early stopping.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{rng_for, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::auc;
use crate::graph::NeighborIndex;
use crate::model::{Model, ModelKind, ModelParams};
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub embedding_init_std: f64,
    pub embedding_dim: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 2048,
            max_epochs: 5000,
            patience: 50,
            embedding_init_std: 1e-2,
            embedding_dim: 32,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.embedding_dim == 0 {
            return bad("batch_size, max_epochs, patience and embedding_dim must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.embedding_init_std > 0.0 && self.embedding_init_std.is_finite()) {
            return bad("embedding_init_std must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_auc: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub best_valid_auc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
}

/// Trains from a seeded Gaussian initialization and returns the parameters of
/// the epoch with the best validation AUC, rounded to `f32`.
pub fn train(train: &Dataset, valid: &Dataset, kind: ModelKind, config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    kind.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::EmptyDataset("validation split is empty".into()));
    }
    train.ensure_labeled()?;
    valid.ensure_labeled()?;
    let valid_labels: Vec<bool> = valid.records.iter().map(|r| r.label == Some(true)).collect();

    let index = kind.uses_graph().then(|| NeighborIndex::build(train));
    let mut params = ModelParams::gaussian(
        train.num_users,
        train.num_items,
        config.embedding_dim,
        config.embedding_init_std,
        &mut rng_for(config.seed, 0),
    );
    let model = Model::for_params(kind, &params, index.as_ref(), config.l2)?;
    let mut adam = Adam::new(params.len(), config.learning_rate);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut log = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.sort_unstable();
        order.shuffle(&mut rng_for(config.seed, 1_000 + epoch as u64));

        let mut loss_acc = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| train.records[k].clone()));
            let loss = model.loss_sum(&params.values, &batch)?;
            loss_acc += loss;
            let grad = model.grad_total(&params.values, &batch)?;
            adam.step(&mut params.values, &grad);
        }
        let train_loss = loss_acc / train.len() as f64;
        if !train_loss.is_finite() || !params.all_finite() {
            return Err(Error::Divergence { epoch });
        }

        let scores = model.score_records(&params.values, &valid.records);
        let valid_auc = auc(&scores, &valid_labels)?;
        log::debug!("epoch {epoch}: loss {train_loss:.6} valid auc {valid_auc:.5}");
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_auc,
        });

        match &best {
            Some((b, _, _)) if valid_auc <= *b => {}
            _ => best = Some((valid_auc, epoch, params.values.clone())),
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (best_valid_auc, best_epoch, values) = best.expect("at least one epoch runs");
    params.values = values;
    params.round_to_f32();
    Ok(Checkpoint {
        params,
        kind,
        config: config.clone(),
        best_valid_auc,
        best_epoch,
        epochs_run,
        log,
    })
}

/// Full retraining on the reduced data with the same seeded initialization.
pub fn retrain_from_scratch(
    reduced_train: &Dataset,
    valid: &Dataset,
    kind: ModelKind,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    if reduced_train.is_empty() {
        return Err(Error::EmptyDataset("nothing left to retrain on".into()));
    }
    train(reduced_train, valid, kind, config)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RUNLRNCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Header of the binary checkpoint format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub num_users: u64,
    pub num_items: u64,
    pub dim: u32,
    pub kind: ModelKind,
    pub seed: u64,
}

/// Writes `magic, version, num_users, num_items, dim, kind, layers, seed`
/// (little-endian) followed by the parameters as `f32`, users then items.
pub fn write_params<W: Write>(mut out: W, params: &ModelParams, kind: ModelKind, seed: u64) -> Result<()> {
    let (tag, layers) = match kind {
        ModelKind::Mf => (0u8, 0u32),
        ModelKind::LightGcn { layers } => (1u8, layers as u32),
    };
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.num_users as u64).to_le_bytes())?;
    out.write_all(&(params.num_items as u64).to_le_bytes())?;
    out.write_all(&(params.dim as u32).to_le_bytes())?;
    out.write_all(&[tag])?;
    out.write_all(&layers.to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 4);
    for &x in &params.values {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_params<R: Read>(mut input: R) -> Result<(CheckpointHeader, ModelParams)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    input.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    input.read_exact(&mut u64b)?;
    let num_users = u64::from_le_bytes(u64b);
    input.read_exact(&mut u64b)?;
    let num_items = u64::from_le_bytes(u64b);
    input.read_exact(&mut u32b)?;
    let dim = u32::from_le_bytes(u32b);
    let mut tag = [0u8; 1];
    input.read_exact(&mut tag)?;
    input.read_exact(&mut u32b)?;
    let layers = u32::from_le_bytes(u32b) as usize;
    input.read_exact(&mut u64b)?;
    let seed = u64::from_le_bytes(u64b);
    let kind = match tag[0] {
        0 => ModelKind::Mf,
        1 => ModelKind::LightGcn { layers },
        t => return Err(Error::Format(format!("unknown model tag {t}"))),
    };
    if dim == 0 {
        return Err(Error::Format("checkpoint has zero embedding dimension".into()));
    }
    let count = (num_users + num_items)
        .checked_mul(dim as u64)
        .ok_or_else(|| Error::Format("checkpoint dimensions overflow".into()))? as usize;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != count * 4 {
        return Err(Error::Format(format!(
            "expected {} bytes of parameters for {num_users}+{num_items} rows of width {dim}, found {}",
            count * 4,
            raw.len()
        )));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let params = ModelParams::from_flat(num_users as usize, num_items as usize, dim as usize, values)?;
    Ok((
        CheckpointHeader {
            num_users,
            num_items,
            dim,
            kind,
            seed,
        },
        params,
    ))
}
