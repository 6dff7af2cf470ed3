//! Bidirectional CLIP objective and the paired pretraining loop.

mod data;
mod pretrain;
mod towers;

pub use data::{ImageSource, ImagingBatch, ImagingSet, Modality, PairedData};
pub use pretrain::{EpochLog, Pretrainer, RngState};
pub use towers::{ImageEncoder, ImageEncoderConfig, TowerConfig, Towers};

use serde::{Deserialize, Serialize};

use crate::dataprep::AugmentConfig;
use crate::error::{Error, Result};
use crate::numcore::{Tape, Var};
use crate::scalar::Scalar;

/// Which pairs enter the denominator of each log-ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorMode {
    /// Sum over the other members of the batch only.
    #[default]
    AsWritten,
    /// InfoNCE: the positive pair is part of the denominator.
    Standard,
}

impl std::str::FromStr for DenominatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(DenominatorMode::AsWritten),
            "standard" => Ok(DenominatorMode::Standard),
            _ => Err(Error::invalid(format!("unknown denominator mode {s:?} (as-written | standard)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub mode: DenominatorMode,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Augment raw/prob images; graphs are never augmented.
    pub augment: bool,
    #[serde(skip, default)]
    pub augment_cfg: AugmentConfig,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.1,
            lambda: 0.5,
            batch_size: 64,
            mode: DenominatorMode::AsWritten,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
            augment: true,
            augment_cfg: AugmentConfig::default(),
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// `Σ_x [log Σ_y exp(S_xy) − S_xx]` over the rows of `s`.
fn directional<T: Scalar>(tape: &mut Tape<T>, s: Var, mode: DenominatorMode) -> Result<Var> {
    let lse = tape.logsumexp_rows(s, mode == DenominatorMode::AsWritten)?;
    let d = tape.diag(s)?;
    let per_row = tape.sub(lse, d)?;
    tape.sum(per_row)
}

/// `L = λ·ℓ_it + (1−λ)·ℓ_ti` for projections `xi`, `xt` of shape `[B×d]`
/// whose rows are paired, with cosine similarities scaled by `1/τ`. Each
/// directional term sums over the batch.
pub fn clip_loss<T: Scalar>(tape: &mut Tape<T>, xi: Var, xt: Var, temperature: f64, lambda: f64, mode: DenominatorMode) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let b = match (tape.shape(xi), tape.shape(xt)) {
        ([b, d], [b2, d2]) if b == b2 && d == d2 => *b,
        (a, c) => return Err(Error::shape("clip_loss", format!("projections {a:?} and {c:?}"))),
    };
    if b < 2 {
        return Err(Error::invalid(format!("clip_loss needs a batch of at least 2, got {b}")));
    }
    let cos = tape.cosine_matrix(xi, xt)?;
    let s = tape.scale(cos, T::lit(1.0 / temperature))?;
    let l_it = directional(tape, s, mode)?;
    let st = tape.transpose(s)?;
    let l_ti = directional(tape, st, mode)?;
    let a = tape.scale(l_it, T::lit(lambda))?;
    let c = tape.scale(l_ti, T::lit(1.0 - lambda))?;
    tape.add(a, c)
}

#[cfg(test)]
mod tests;
