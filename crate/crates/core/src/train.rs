//! Teacher-forced training with Adam and a step-decay schedule.
//!
//! Batches are a pure function of `(seed, step)`, so a run resumed from a
//! checkpoint sees exactly the batches the uninterrupted run would have.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{EncodedInstance, Model};
use crate::numerics::{AdamConfig, AdamState, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Steps at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<u64>,
    pub decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 8, adam: AdamConfig::default(), milestones: Vec::new(), decay: 0.1, seed: 0 }
    }
}

impl TrainConfig {
    /// Full-scale schedule: decays at 14000 and 19000 iterations, batch 96.
    pub fn full() -> Self {
        Self { batch_size: 96, milestones: alloc::vec![14_000, 19_000], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.lr.is_finite() && a.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::Config(format!("decay must be positive, got {}", self.decay)));
        }
        Ok(())
    }

    /// Learning rate in effect for the update made at `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| step >= m).count();
        let mut lr = self.adam.lr;
        for _ in 0..passed {
            lr *= self.decay;
        }
        lr
    }
}

/// Instance indices of the batch used at `step`.
///
/// The data is walked in epochs; each epoch is a fresh shuffle seeded by
/// `(seed, epoch)`. A batch may straddle two epochs.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    let start = step * batch_size as u64;
    for pos in start..start + batch_size as u64 {
        let epoch = pos / n as u64;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, epoch_order(n, seed, epoch)));
        }
        let order = &cached.as_ref().expect("just filled").1;
        out.push(order[(pos % n as u64) as usize]);
    }
    out
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Model plus optimizer state. `step` counts completed updates.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: AdamState,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params, config.adam);
        Ok(Self { model, config, adam, step: 0 })
    }

    /// Resumes from saved optimizer state.
    pub fn resume(model: Model, config: TrainConfig, adam: AdamState, step: u64) -> Result<Self> {
        config.validate()?;
        if adam.m.len() != model.params.len() || adam.v.len() != model.params.len() {
            return Err(Error::Invalid("optimizer state does not match the parameter set".into()));
        }
        Ok(Self { model, config, adam, step })
    }

    /// One update on the batch chosen for the current step.
    pub fn train_step(&mut self, data: &[EncodedInstance]) -> Result<LossRecord> {
        let trainable: Vec<&EncodedInstance> = data.iter().filter(|e| e.targets.is_some()).collect();
        if trainable.is_empty() {
            return Err(Error::Invalid("no instance carries a training answer".into()));
        }
        let idx = batch_indices(trainable.len(), self.config.batch_size, self.config.seed, self.step);
        let batch: Vec<&EncodedInstance> = idx.iter().map(|&i| trainable[i]).collect();

        let mut tape = Tape::new();
        let bp = self.model.params.bind(&mut tape);
        let loss_var = self.model.batch_loss(&mut tape, &bp, &batch)?;
        let loss = tape.value(loss_var).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {} is {loss}", self.step)));
        }
        let mut grads = tape.backward(loss_var)?;
        let grad_list: Vec<Tensor> = bp
            .vars()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                grads.take(v).unwrap_or_else(|| {
                    let t = self.model.params.tensor(i);
                    Tensor::zeros(t.rows(), t.cols())
                })
            })
            .collect();
        drop(bp);
        drop(tape);
        let lr = self.config.lr_at(self.step);
        self.adam.step(&mut self.model.params, &grad_list, lr)?;
        let record = LossRecord { step: self.step, loss, lr };
        self.step += 1;
        Ok(record)
    }

    /// Runs `steps` updates, handing each record to `on_step`.
    pub fn run(&mut self, data: &[EncodedInstance], steps: u64, mut on_step: impl FnMut(&LossRecord)) -> Result<Vec<LossRecord>> {
        let mut log = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let r = self.train_step(data)?;
            on_step(&r);
            log.push(r);
        }
        Ok(log)
    }
}
