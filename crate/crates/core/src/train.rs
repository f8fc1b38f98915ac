//! Optimization: Adam, the plateau schedule, the epoch loop and checkpoints.

use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::checkpoint::{Checkpoint, CheckpointError};
use crate::diff::{DiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::seed::mix;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Data(String),
}

impl TrainError {
    /// True for failures caused by NaN/Inf values rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteGradient(_)
                | TrainError::NonFiniteLoss { .. }
                | TrainError::Diff(DiffError::NonFinite(_))
        )
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(store: &ParamStore<f32>) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect()
        };
        Self {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update with decoupled weight decay. Parameters without a
/// gradient entry are treated as having a zero gradient.
pub fn adam_step(
    store: &mut ParamStore<f32>,
    grads: &[(ParamId, Tensor<f32>)],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if !(lr > 0.0) {
        return Err(TrainError::Data(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for (id, g) in grads {
        if g.shape() != store.value(*id).shape() {
            return Err(DiffError::Shape(format!(
                "gradient for {}: {:?}",
                store.name(*id),
                g.shape()
            ))
            .into());
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(store.name(*id).to_string()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    let mut gi = grads.iter().peekable();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let grad = match gi.peek() {
            Some((gid, _)) if *gid == id => gi.next().map(|(_, g)| g.data()),
            _ => None,
        };
        let (m, v) = (state.m[id.0].data_mut(), state.v[id.0].data_mut());
        let p = store.value_mut(id).data_mut();
        for j in 0..p.len() {
            let g = grad.map_or(0.0, |g| g[j] as f64);
            let mj = BETA1 * m[j] as f64 + (1.0 - BETA1) * g;
            let vj = BETA2 * v[j] as f64 + (1.0 - BETA2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let mut w = p[j] as f64;
            w -= lr * weight_decay * w;
            w -= lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS);
            p[j] = w as f32;
        }
    }
    Ok(())
}

/// Scale gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Tensor<f32>)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|(_, g)| {
            g.data()
                .iter()
                .map(|&x| (x as f64) * (x as f64))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = (max_norm / norm) as f32;
        for (_, g) in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= k;
            }
        }
    }
    norm
}

/// Plateau rules keyed to the best validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: f64,
    pub min_lr: f64,
    pub best: Option<f64>,
    /// Epochs without improvement, reset on improvement only.
    pub since_improvement: usize,
    /// Same, but also reset whenever the rate is halved.
    pub since_halving: usize,
    pub halve_patience: usize,
    pub stop_patience: usize,
    pub stop: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleEvent {
    Improved,
    Plateau,
    Halved,
    Stop,
}

impl Schedule {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            min_lr: 1e-8,
            best: None,
            since_improvement: 0,
            since_halving: 0,
            halve_patience: 2,
            stop_patience: 10,
            stop: false,
        }
    }

    /// Feed one epoch's validation loss.
    pub fn update(&mut self, val_loss: f64) -> ScheduleEvent {
        if self.best.is_none_or(|b| val_loss < b) {
            self.best = Some(val_loss);
            self.since_improvement = 0;
            self.since_halving = 0;
            return ScheduleEvent::Improved;
        }
        self.since_improvement += 1;
        self.since_halving += 1;
        if self.since_improvement >= self.stop_patience {
            self.stop = true;
        }
        let mut ev = ScheduleEvent::Plateau;
        if self.since_halving >= self.halve_patience {
            self.lr = (self.lr / 2.0).max(self.min_lr);
            self.since_halving = 0;
            ev = ScheduleEvent::Halved;
        }
        if self.stop {
            ScheduleEvent::Stop
        } else {
            ev
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub min_lr: f64,
    pub halve_patience: usize,
    pub stop_patience: usize,
    /// Use only the first `n` training examples.
    pub train_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 8,
            max_epochs: 100,
            clip_norm: 5.0,
            min_lr: 1e-8,
            halve_patience: 2,
            stop_patience: 10,
            train_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) || !(self.min_lr > 0.0) || self.weight_decay < 0.0 {
            return Err(TrainError::Data(format!(
                "bad learning-rate settings in {self:?}"
            )));
        }
        if self.batch_size == 0 || self.halve_patience == 0 || self.stop_patience == 0 {
            return Err(TrainError::Data(format!(
                "zero batch size or patience in {self:?}"
            )));
        }
        Ok(())
    }
}

/// Everything besides parameters needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    pub schedule: Schedule,
    pub best_epoch: Option<usize>,
}

/// A training objective over an indexed dataset.
pub trait Objective {
    fn train_len(&self) -> usize;

    /// Mean loss of the training items `idx`, recorded on `g`.
    fn batch_loss(
        &self,
        g: &mut Graph<f32>,
        store: &ParamStore<f32>,
        idx: &[usize],
        epoch: usize,
    ) -> Result<Var, TrainError>;

    /// Mean loss over the validation split.
    fn validation_loss(&self, store: &ParamStore<f32>) -> Result<f64, TrainError>;
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOG_NAME: &str = "train_log.csv";

/// Packs parameters plus trainer state into a checkpoint.
pub trait CheckpointCodec {
    fn config_hash(&self) -> u64;
    fn header(&self) -> serde_json::Value;
}

pub struct Trainer<'a, O: Objective, C: CheckpointCodec> {
    pub objective: &'a O,
    pub codec: &'a C,
    pub store: ParamStore<f32>,
    pub adam: AdamState,
    pub state: TrainState,
    pub cfg: TrainConfig,
    pub out_dir: Option<PathBuf>,
    pub log: Vec<LogRow>,
}

impl<'a, O: Objective, C: CheckpointCodec> Trainer<'a, O, C> {
    pub fn new(
        objective: &'a O,
        codec: &'a C,
        store: ParamStore<f32>,
        cfg: TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut schedule = Schedule::new(cfg.lr);
        schedule.min_lr = cfg.min_lr;
        schedule.halve_patience = cfg.halve_patience;
        schedule.stop_patience = cfg.stop_patience;
        Ok(Self {
            objective,
            codec,
            adam: AdamState::new(&store),
            store,
            state: TrainState {
                epoch: 0,
                step: 0,
                seed,
                schedule,
                best_epoch: None,
            },
            cfg,
            out_dir: None,
            log: Vec::new(),
        })
    }

    pub fn with_output(mut self, dir: &Path) -> Self {
        self.out_dir = Some(dir.to_path_buf());
        self
    }

    /// Restore parameters, moments and state from a checkpoint written by
    /// [`Trainer::checkpoint`].
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<(), TrainError> {
        if ck.config_hash != self.codec.config_hash() {
            return Err(TrainError::Data(
                "checkpoint was written for a different model configuration".into(),
            ));
        }
        restore_params(&mut self.store, ck)?;
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = self.store.name(id).to_string();
            for (slot, prefix) in [(&mut self.adam.m, "adam.m."), (&mut self.adam.v, "adam.v.")] {
                let t = ck.get(&format!("{prefix}{name}")).ok_or_else(|| {
                    TrainError::Data(format!("checkpoint lacks optimizer state for {name}"))
                })?;
                if t.shape() != slot[id.0].shape() {
                    return Err(TrainError::Data(format!(
                        "optimizer state shape mismatch for {name}"
                    )));
                }
                slot[id.0] = t.clone();
            }
        }
        let tr = ck
            .header
            .get("train")
            .ok_or_else(|| TrainError::Data("checkpoint has no trainer state".into()))?;
        self.state = serde_json::from_value(tr["state"].clone())
            .map_err(|e| TrainError::Data(e.to_string()))?;
        self.adam.t = tr["adam_t"].as_u64().unwrap_or(self.state.step);
        self.log = serde_json::from_value(tr["log"].clone()).unwrap_or_default();
        Ok(())
    }

    /// Current parameters, optimizer moments and state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut header = self.codec.header();
        header["train"] = serde_json::json!({
            "state": self.state,
            "adam_t": self.adam.t,
            "config": self.cfg,
            "log": self.log,
        });
        let mut tensors = params_to_tensors(&self.store);
        for id in self.store.ids() {
            let name = self.store.name(id);
            tensors.push((format!("adam.m.{name}"), self.adam.m[id.0].clone()));
            tensors.push((format!("adam.v.{name}"), self.adam.v[id.0].clone()));
        }
        Checkpoint {
            config_hash: self.codec.config_hash(),
            header,
            tensors,
        }
    }

    /// Order in which epoch `epoch` visits the training items.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let n = self.train_items();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(
            self.state.seed,
            epoch as u64,
        )));
        order
    }

    fn train_items(&self) -> usize {
        let n = self.objective.train_len();
        self.cfg.train_limit.map_or(n, |l| l.min(n))
    }

    /// One optimizer step on the given items; returns the batch loss.
    pub fn step(&mut self, idx: &[usize]) -> Result<f64, TrainError> {
        let mut g = Graph::new();
        let loss = self
            .objective
            .batch_loss(&mut g, &self.store, idx, self.state.epoch)?;
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: self.state.epoch,
                step: self.state.step,
            });
        }
        g.backward(loss)?;
        let mut grads = g.param_grads();
        drop(g);
        for (id, gr) in &grads {
            if !gr.is_finite() {
                return Err(TrainError::NonFiniteGradient(
                    self.store.name(*id).to_string(),
                ));
            }
        }
        clip_global_norm(&mut grads, self.cfg.clip_norm);
        let lr = self.state.schedule.lr;
        adam_step(
            &mut self.store,
            &grads,
            &mut self.adam,
            lr,
            self.cfg.weight_decay,
        )?;
        self.state.step += 1;
        Ok(lv)
    }

    /// Run one epoch, validate, update the schedule and write checkpoints.
    pub fn epoch(&mut self) -> Result<LogRow, TrainError> {
        let order = self.epoch_order(self.state.epoch);
        if order.is_empty() {
            return Err(TrainError::Data("no training examples".into()));
        }
        let lr = self.state.schedule.lr;
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            total += self.step(chunk)? * chunk.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = self.objective.validation_loss(&self.store)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: self.state.epoch,
                step: self.state.step,
            });
        }
        let row = LogRow {
            epoch: self.state.epoch,
            train_loss,
            val_loss,
            lr,
        };
        let ev = self.state.schedule.update(val_loss);
        let improved = ev == ScheduleEvent::Improved;
        if improved {
            self.state.best_epoch = Some(self.state.epoch);
        }
        self.state.epoch += 1;
        self.log.push(row.clone());
        info!(
            "epoch {} train {:.4} val {:.4} lr {:.2e} {:?}",
            row.epoch, row.train_loss, row.val_loss, row.lr, ev
        );
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir)?;
            let ck = self.checkpoint();
            ck.save(&dir.join(LAST_CHECKPOINT))?;
            if improved {
                ck.save(&dir.join(BEST_CHECKPOINT))?;
            }
            write_log(&dir.join(LOG_NAME), &self.log)?;
        }
        Ok(row)
    }

    /// Train until the stop rule fires or `max_epochs` epochs have run.
    pub fn run(&mut self) -> Result<&[LogRow], TrainError> {
        while self.state.epoch < self.cfg.max_epochs && !self.state.schedule.stop {
            self.epoch()?;
        }
        Ok(&self.log)
    }
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn params_to_tensors(store: &ParamStore<f32>) -> Vec<(String, Tensor<f32>)> {
    store
        .ids()
        .map(|id| (store.name(id).to_string(), store.value(id).clone()))
        .collect()
}

/// Overwrite every parameter in `store` with the same-named checkpoint tensor.
pub fn restore_params(store: &mut ParamStore<f32>, ck: &Checkpoint) -> Result<(), TrainError> {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let t = ck
            .get(&name)
            .ok_or_else(|| TrainError::Data(format!("checkpoint lacks parameter {name}")))?;
        store
            .set(id, t.clone())
            .map_err(|e| TrainError::Data(e.to_string()))?;
    }
    let extra = ck
        .tensors
        .iter()
        .find(|(n, _)| !n.starts_with("adam.") && store.id(n).is_none());
    if let Some((n, _)) = extra {
        return Err(TrainError::Data(format!(
            "checkpoint has unknown parameter {n}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::InitScheme;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = ParamStore::<f32>::new(3);
        let id = s.add("w", &[4], InitScheme::FanIn { fan_in: 4 }).unwrap();
        let before = s.value(id).clone();
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[(id, Tensor::zeros(&[4]))], &mut st, 1e-2, 0.0).unwrap();
        assert_eq!(s.value(id), &before);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut s = ParamStore::<f32>::new(3);
        let id = s.add("enc.w", &[2], InitScheme::Zeros).unwrap();
        let mut st = AdamState::new(&s);
        let err = adam_step(
            &mut s,
            &[(id, Tensor::new(&[2], vec![0.0, f32::NAN]).unwrap())],
            &mut st,
            1e-3,
            0.0,
        );
        assert!(matches!(err, Err(TrainError::NonFiniteGradient(n)) if n == "enc.w"));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![(ParamId(0), Tensor::new(&[2], vec![3.0f32, 4.0]).unwrap())];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let d = g[0].1.data();
        assert!((d[0] - 0.6).abs() < 1e-6 && (d[1] - 0.8).abs() < 1e-6);
    }
}
