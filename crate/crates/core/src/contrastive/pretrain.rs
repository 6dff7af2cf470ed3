use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Modality, PairedData};
use super::towers::{TowerConfig, Towers};
use super::{clip_loss, ContrastiveConfig};
use crate::dataprep::AugmentParams;
use crate::encoders::Checkpoint;
use crate::error::{Error, Result};
use crate::numcore::{adam_step, AdamConfig, AdamState, Parameterized, Tape};
use crate::scalar::Scalar;

/// Exact position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, hex.
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint(format!("bad RNG state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// One JSON line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Cursor {
    epoch: usize,
    batch: usize,
    loss_sum_bits: u64,
    adam_step: u64,
    rng: RngState,
}

/// Stateful contrastive trainer; can stop after any batch and resume
/// bit-exactly from a checkpoint.
pub struct Pretrainer<'a, T> {
    pub config: ContrastiveConfig,
    pub towers: Towers<T>,
    data: PairedData<'a>,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    epoch: usize,
    batch: usize,
    perm: Vec<usize>,
    loss_sum: f64,
    epoch_start: Option<Instant>,
}

pub(crate) fn batch_bounds(n: usize, b: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(b).map(|s| (s, (s + b).min(n))).collect();
    if out.last().is_some_and(|&(s, e)| e - s < 2) {
        out.pop();
    }
    out
}

impl<'a, T: Scalar> Pretrainer<'a, T> {
    /// Towers are initialised from `config.seed`; the same stream then
    /// drives shuffling and augmentation.
    pub fn new(config: ContrastiveConfig, towers: TowerConfig, data: PairedData<'a>) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Empty("pretraining dataset"));
        }
        if data.modality() != towers.modality {
            return Err(Error::invalid(format!("data modality {} but towers built for {}", data.modality(), towers.modality)));
        }
        if towers.tabular.input_dim != data.tab_dim {
            return Err(Error::shape("pretrain", format!("tabular encoder expects {} columns, data has {}", towers.tabular.input_dim, data.tab_dim)));
        }
        if data.len() < 2 {
            return Err(Error::invalid("pretraining needs at least 2 pairs"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let towers = Towers::new(towers, &mut rng)?;
        let adam = AdamState::new(AdamConfig::with_lr(config.lr));
        Ok(Pretrainer { config, towers, data, adam, rng, epoch: 0, batch: 0, perm: Vec::new(), loss_sum: 0.0, epoch_start: None })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn batches(&self) -> Vec<(usize, usize)> {
        batch_bounds(self.data.len(), self.config.batch_size)
    }

    /// Runs one optimiser step; returns the batch loss, and the epoch log
    /// when the step closed an epoch.
    pub fn step(&mut self) -> Result<(f64, Option<EpochLog>)> {
        if self.is_done() {
            return Err(Error::invalid("pretraining already finished"));
        }
        if self.batch == 0 {
            self.perm = self.data.indices.clone();
            self.perm.shuffle(&mut self.rng);
            self.loss_sum = 0.0;
            self.epoch_start = Some(Instant::now());
        }
        let bounds = self.batches();
        let (s, e) = bounds[self.batch];
        let subjects = self.perm[s..e].to_vec();

        let augment = self.config.augment && self.data.modality() != Modality::Graph;
        let aug: Option<Vec<AugmentParams>> =
            augment.then(|| subjects.iter().map(|_| AugmentParams::sample(&self.config.augment_cfg, &mut self.rng)).collect());
        let imaging = self.data.imaging_batch::<T>(&subjects, aug.as_deref())?;
        let tab = self.data.tabular_batch::<T>(&subjects)?;

        let mut tape = Tape::new();
        let (xi, xt) = self.towers.project(&mut tape, &imaging, &tab)?;
        let loss = clip_loss(&mut tape, xi, xt, self.config.temperature, self.config.lambda, self.config.mode)?;
        let lv = tape.scalar_value(loss).as_f64();
        tape.backward(loss)?;
        tape.write_grads(self.towers.params_mut())?;
        adam_step(&mut self.towers.params_mut(), &mut self.adam)?;

        self.loss_sum += lv;
        self.batch += 1;
        let mut log = None;
        if self.batch == bounds.len() {
            let wall = self.epoch_start.map_or(0.0, |t| t.elapsed().as_secs_f64());
            log = Some(EpochLog { epoch: self.epoch, mean_loss: self.loss_sum / bounds.len() as f64, wall_seconds: wall });
            self.epoch += 1;
            self.batch = 0;
        }
        Ok((lv, log))
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        loop {
            if let (_, Some(log)) = self.step()? {
                return Ok(log);
            }
        }
    }

    /// Trains to `config.epochs`, calling `on_epoch` after each epoch.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while !self.is_done() {
            let log = self.run_epoch()?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    /// Towers, optimiser moments, RNG position and epoch cursor.
    pub fn checkpoint(&self) -> Checkpoint {
        let cursor = Cursor {
            epoch: self.epoch,
            batch: self.batch,
            loss_sum_bits: self.loss_sum.to_bits(),
            adam_step: self.adam.step,
            rng: RngState::capture(&self.rng),
        };
        let header = serde_json::json!({
            "kind": "pretrain",
            "towers": self.towers.config,
            "contrastive": self.config,
            "cursor": cursor,
        });
        let mut ck = Checkpoint::new(header);
        self.towers.store(&mut ck);
        for (k, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            ck.push(format!("adam/m/{k}"), &[m.len()], m.iter().map(|x| x.as_f64()).collect());
            ck.push(format!("adam/v/{k}"), &[v.len()], v.iter().map(|x| x.as_f64()).collect());
        }
        if self.batch > 0 {
            ck.push("cursor/perm", &[self.perm.len()], self.perm.iter().map(|&i| i as f64).collect());
        }
        ck
    }

    /// Continues a run saved by [`Pretrainer::checkpoint`] on the same data.
    pub fn resume(ck: &Checkpoint, data: PairedData<'a>) -> Result<Self> {
        let field = |k: &str| ck.header.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("header lacks {k:?}")));
        let json = |e: serde_json::Error| Error::Checkpoint(e.to_string());
        let config: ContrastiveConfig = serde_json::from_value(field("contrastive")?).map_err(json)?;
        let tcfg: TowerConfig = serde_json::from_value(field("towers")?).map_err(json)?;
        let cursor: Cursor = serde_json::from_value(field("cursor")?).map_err(json)?;
        let mut p = Self::new(config, tcfg.clone(), data)?;
        p.towers = Towers::restore(tcfg, ck)?;
        let nparams = p.towers.params().len();
        if cursor.adam_step > 0 {
            let load = |kind: &str| -> Result<Vec<Vec<T>>> {
                (0..nparams).map(|k| Ok(ck.get(&format!("adam/{kind}/{k}"))?.values.iter().map(|&x| T::lit(x)).collect())).collect()
            };
            p.adam.m = load("m")?;
            p.adam.v = load("v")?;
        }
        p.adam.step = cursor.adam_step;
        p.rng = cursor.rng.restore()?;
        p.epoch = cursor.epoch;
        p.batch = cursor.batch;
        p.loss_sum = f64::from_bits(cursor.loss_sum_bits);
        if p.batch > 0 {
            p.perm = ck.get("cursor/perm")?.values.iter().map(|&x| x as usize).collect();
            if p.perm.len() != p.data.len() {
                return Err(Error::Checkpoint("saved permutation does not match the dataset".into()));
            }
            p.epoch_start = Some(Instant::now());
        }
        Ok(p)
    }
}
