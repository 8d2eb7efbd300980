use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{mse, AutoencoderConfig, AutoencoderParams};
use crate::dataset::WindowedDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone)]
pub struct AdamState {
    m: AutoencoderParams,
    v: AutoencoderParams,
    steps: u64,
}

impl AdamState {
    pub fn new(params: &AutoencoderParams) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Mean loss and mean gradient over a batch. Per-window work runs in
/// parallel; the reduction is sequential in batch order, so the result does
/// not depend on thread scheduling.
pub fn batch_gradient(params: &AutoencoderParams, batch: &[&[f64]]) -> Result<(f64, AutoencoderParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let parts = batch
        .par_iter()
        .map(|w| params.loss_and_gradient(w))
        .collect::<Result<Vec<_>>>()?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// One Adam update on `batch`; returns the batch loss before the update.
pub fn train_step(
    params: &mut AutoencoderParams,
    batch: &[&[f64]],
    state: &mut AdamState,
    config: &AutoencoderConfig,
) -> Result<f64> {
    let (loss, mut grad) = batch_gradient(params, batch)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("batch loss {loss} at step {}", state.steps)));
    }
    let norm = grad.norm();
    if norm > config.grad_clip {
        grad.scale(config.grad_clip / norm);
    }
    state.steps += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.steps as i32);
    let c2 = 1.0 - b2.powi(state.steps as i32);
    let lr = config.learning_rate;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grad.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= lr * mhat / (vhat.sqrt() + config.epsilon);
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    #[serde(skip)]
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean reconstruction MSE on the fitting windows before any update.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub optimizer_steps: u64,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    /// Validation loss of the returned parameters (training loss when no
    /// windows were held out).
    pub final_loss: f64,
    /// Mean reconstruction MSE of the returned parameters on the fitting windows.
    pub final_train_loss: f64,
    pub train_windows: usize,
    pub validation_windows: usize,
}

impl TrainReport {
    /// Report equality ignoring wall-clock timings.
    pub fn same_trace(&self, other: &TrainReport) -> bool {
        let strip = |r: &TrainReport| {
            let mut r = r.clone();
            r.epochs.iter_mut().for_each(|e| e.wall_secs = 0.0);
            r
        };
        strip(self) == strip(other)
    }
}

pub fn mean_loss(params: &AutoencoderParams, windows: &[&[f64]]) -> Result<f64> {
    if windows.is_empty() {
        return Ok(0.0);
    }
    let losses = windows
        .par_iter()
        .map(|w| {
            let cache = params.forward(w)?;
            mse(&cache.reconstruction, w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / windows.len() as f64)
}

/// Mini-batch training with a seeded shuffle each epoch. A seeded
/// `validation_fraction` of the windows is held out; training stops after
/// `early_stop_patience` epochs without a validation improvement and the
/// best-validation parameters are returned.
pub fn fit(ds: &WindowedDataset, config: &AutoencoderConfig) -> Result<(AutoencoderParams, TrainReport)> {
    config.validate(ds.timesteps(), ds.channels())?;
    let mut params = AutoencoderParams::init(config, ds.channels(), derive_seed(config.seed, "autoenc/init"));
    let mut rng = seeded_rng(derive_seed(config.seed, "autoenc/shuffle"));

    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (ds.len() as f64 * config.validation_fraction).floor() as usize;
    let n_val = if ds.len() - n_val == 0 { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val: Vec<&[f64]> = val_idx.iter().map(|&i| ds.window(i)).collect();
    let train_all: Vec<&[f64]> = train_idx.iter().map(|&i| ds.window(i)).collect();

    let initial_train_loss = mean_loss(&params, &train_all)?;
    let mut state = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        let started = std::time::Instant::now();
        train_idx.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| ds.window(i)).collect();
            weighted += train_step(&mut params, &batch, &mut state, config)? * chunk.len() as f64;
        }
        let train_loss = weighted / train_idx.len() as f64;
        let val_loss = if val.is_empty() { None } else { Some(mean_loss(&params, &val)?) };
        let score = val_loss.unwrap_or(train_loss);
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:?}");
        epochs.push(EpochRecord { epoch, train_loss, val_loss, wall_secs: started.elapsed().as_secs_f64() });
        if score < best_score {
            best_score = score;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    let final_train_loss = mean_loss(&best, &train_all)?;
    let stopped_epoch = epochs.len();
    let report = TrainReport {
        initial_train_loss,
        epochs,
        optimizer_steps: state.steps,
        stopped_epoch,
        best_epoch,
        final_loss: best_score,
        final_train_loss,
        train_windows: train_idx.len(),
        validation_windows: val.len(),
    };
    Ok((best, report))
}
