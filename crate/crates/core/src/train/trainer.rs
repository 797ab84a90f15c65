use std::path::Path;

use rand::seq::SliceRandom;

use super::loss::{si_sdr_loss, LossMode};
use super::parallel::ordered_map;
use super::sisdr::si_sdr_slice;
use super::synth::Example;
use crate::autodiff::{lr_at, AdamConfig, GradBuffer, ScheduleConfig, Tensor};
use crate::config::{value, KeyValue};
use crate::error::{BasenError, Result};
use crate::model::{save_checkpoint, BasenModel};
use crate::rng::SeedTree;

/// Worker count from `BASEN_THREADS`, default 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("BASEN_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(BasenError::Config(format!("BASEN_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub max_lr: f64,
    pub warmup_ratio: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Global gradient-norm ceiling; `None` leaves gradients untouched.
    pub clip_norm: Option<f64>,
    /// Worker threads for per-example gradients. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 60,
            max_lr: 2e-4,
            warmup_ratio: 0.05,
            seed: 0,
            loss_mode: LossMode::TargetOnly,
            clip_norm: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(BasenError::Config("batch_size and epochs must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(BasenError::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        ScheduleConfig::new(self.max_lr, self.warmup_ratio, 1).map(|_| ())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, n_train: usize) -> Result<ScheduleConfig> {
        ScheduleConfig::new(self.max_lr, self.warmup_ratio, self.epochs * self.steps_per_epoch(n_train))
    }
}

impl KeyValue for TrainConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "batch_size" => self.batch_size = value(key, v)?,
            "epochs" => self.epochs = value(key, v)?,
            "max_lr" => self.max_lr = value(key, v)?,
            "warmup_ratio" => self.warmup_ratio = value(key, v)?,
            "seed" => self.seed = value(key, v)?,
            "loss_mode" => self.loss_mode = v.parse()?,
            "clip_norm" => {
                let c: f64 = value(key, v)?;
                self.clip_norm = (c > 0.0).then_some(c);
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn pairs(&self) -> Vec<(String, String)> {
        [
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_lr", self.max_lr.to_string()),
            ("warmup_ratio", self.warmup_ratio.to_string()),
            ("seed", self.seed.to_string()),
            ("loss_mode", self.loss_mode.to_string()),
            ("clip_norm", self.clip_norm.unwrap_or(0.0).to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_si_sdr: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_si_sdr: f64,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tmean_loss\tval_si_sdr\tlr\n");
        for e in &self.epochs {
            s.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.6e}\n", e.epoch, e.mean_loss, e.val_si_sdr, e.lr));
        }
        s
    }
}

/// Model-precision copies of one example.
pub(crate) struct Prepared {
    pub audio: Vec<f32>,
    pub eeg: Tensor<f32>,
    pub target: Vec<f32>,
    pub interferer: Vec<f32>,
}

impl Prepared {
    pub fn new(ex: &Example) -> Result<Self> {
        let f = |x: &[f64]| x.iter().map(|&v| v as f32).collect::<Vec<f32>>();
        let eeg: Vec<f32> = ex.eeg.channels().iter().flat_map(|c| f(c)).collect();
        Ok(Self {
            audio: f(ex.mixture.samples()),
            eeg: Tensor::new(vec![ex.eeg.channel_count(), ex.eeg.len()], eeg)?,
            target: f(ex.target.samples()),
            interferer: f(ex.interferer.samples()),
        })
    }
}

/// Waveform estimates for `ex` from a model forward pass.
pub(crate) fn estimate(model: &BasenModel<f32>, ex: &Prepared) -> Result<Vec<Vec<f64>>> {
    let mut g = model.graph();
    let vars = model.forward_graph(&mut g, &ex.audio, ex.eeg.clone())?;
    Ok(vars.outputs.iter().map(|&o| g.value(o).to_f64()).collect())
}

fn example_grads(model: &BasenModel<f32>, ex: &Prepared, mode: LossMode) -> Result<(f64, GradBuffer<f32>)> {
    let mut g = model.graph();
    let vars = model.forward_graph(&mut g, &ex.audio, ex.eeg.clone())?;
    let loss = si_sdr_loss(&mut g, &vars.outputs, &ex.target, &ex.interferer, mode)?;
    let mut buf = model.params().grad_buffer();
    g.backward(loss)?.accumulate(&mut buf);
    Ok((f64::from(g.value(loss).item()), buf))
}

fn mean_val_si_sdr(model: &BasenModel<f32>, val: &[Prepared], threads: usize) -> Result<f64> {
    let scores = ordered_map(val, threads, |ex| -> Result<f64> {
        let out = estimate(model, ex)?;
        let target: Vec<f64> = ex.target.iter().map(|&v| f64::from(v)).collect();
        si_sdr_slice(&out[0], &target)
    });
    let scores: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Trains `model` in place with shuffled minibatches, Adam and the warmup +
/// cosine schedule. After each epoch the mean SI-SDR of output 0 on `val`
/// is measured; the best epoch's parameters are written to `checkpoint` (if
/// given) and left in `model` on return.
pub fn train(
    model: &mut BasenModel<f32>,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(BasenError::invalid("training and validation sets must be non-empty"));
    }
    let schedule = cfg.schedule(train_set.len())?;
    let adam = AdamConfig::default();
    let train_data: Vec<Prepared> = train_set.iter().map(Prepared::new).collect::<Result<_>>()?;
    let val_data: Vec<Prepared> = val_set.iter().map(Prepared::new).collect::<Result<_>>()?;
    let seeds = SeedTree::new(cfg.seed);

    let mut log = TrainLog {
        best_val_si_sdr: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best: Option<Vec<Tensor<f32>>> = None;
    let mut step = 0;
    let mut lr = 0.0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut seeds.stream("shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<&Prepared> = batch.iter().map(|&i| &train_data[i]).collect();
            let results = ordered_map(&items, cfg.threads, |ex| example_grads(model, ex, cfg.loss_mode));
            let store = model.params_mut();
            store.zero_grads();
            let mut batch_loss = 0.0;
            for r in results {
                let (l, buf) = r?;
                batch_loss += l;
                store.add_grads(&buf);
            }
            store.scale_grads(1.0 / batch.len() as f64);
            lr = lr_at(step + 1, &schedule)?;
            let norm = store.grad_norm();
            if !batch_loss.is_finite() || !norm.is_finite() {
                return Err(BasenError::Diverged {
                    step: step + 1,
                    loss: batch_loss / batch.len() as f64,
                    lr,
                    grad_norm: norm,
                });
            }
            if let Some(c) = cfg.clip_norm {
                if norm > c {
                    store.scale_grads(c / norm);
                }
            }
            store.adam_step(lr, &adam);
            loss_sum += batch_loss;
            step += 1;
        }
        let mean_loss = loss_sum / train_data.len() as f64;
        let val = mean_val_si_sdr(model, &val_data, cfg.threads)?;
        log::info!("epoch {epoch}: loss {mean_loss:.3} dB, val SI-SDR {val:.3} dB, lr {lr:.3e}");
        log.epochs.push(EpochLog {
            epoch,
            mean_loss,
            val_si_sdr: val,
            lr,
        });
        if val > log.best_val_si_sdr {
            log.best_val_si_sdr = val;
            log.best_epoch = epoch;
            best = Some(model.params().iter().map(|p| p.value().clone()).collect());
            if let Some(path) = checkpoint {
                save_checkpoint(path, model)?;
            }
        }
    }
    if let Some(values) = best {
        for (p, v) in model.params_mut().iter_mut().zip(values) {
            *p.value_mut() = v;
        }
    }
    Ok(log)
}
