//! Deterministic synthetic cohorts: rendered vessel trees, blurred
//! probability maps, pseudo-fundus images and tabular records, with a label
//! driven by both modalities.

mod schema;
mod tree;
mod write;

#[cfg(test)]
mod tests;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use schema::{cohort_fields, FieldSpec, FieldRole};
pub use tree::{blur_mask, gen_vessel_tree, TreeConfig, TreeStats};
pub use write::{render_raw, write_cohort, Manifest, MANIFEST_VERSION};

use crate::dataprep::RawCell;
use crate::error::{Error, Result};
use crate::tasks::{stratified_roles, SplitConfig, SplitRole};
use crate::vesselgraph::BinaryMask;

/// Fixed logit weights of the label model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelWeights {
    pub tortuosity: f64,
    pub branching: f64,
    pub risk: f64,
    /// Standard deviation of the extra Gaussian logit noise.
    pub noise: f64,
}

impl Default for LabelWeights {
    fn default() -> Self {
        LabelWeights { tortuosity: 1.5, branching: 1.5, risk: 1.0, noise: 0.3 }
    }
}

/// Generative latents of one subject. Tortuosity, branching and calibre
/// are uniform on [0, 1]; risk and noise are standard normal; `u` is the
/// uniform draw that decides the label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentSubject {
    pub tortuosity: f64,
    pub branching: f64,
    pub caliber: f64,
    pub risk: f64,
    pub noise: f64,
    pub u: f64,
}

/// Standardises a U(0, 1) draw.
pub fn z_uniform(v: f64) -> f64 {
    (v - 0.5) * 12f64.sqrt()
}

impl LatentSubject {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        LatentSubject {
            tortuosity: rng.random(),
            branching: rng.random(),
            caliber: rng.random(),
            risk: StandardNormal.sample(rng),
            noise: StandardNormal.sample(rng),
            u: rng.random(),
        }
    }

    /// Logit without intercept.
    pub fn logit(&self, w: &LabelWeights) -> f64 {
        w.tortuosity * z_uniform(self.tortuosity) + w.branching * z_uniform(self.branching) + w.risk * self.risk + w.noise * self.noise
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept giving mean label probability `target` over `logits`.
pub fn solve_intercept(logits: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) || logits.is_empty() {
        return Err(Error::invalid(format!("prevalence must lie in (0, 1), got {target}")));
    }
    let mean_p = |b: f64| logits.iter().map(|&l| sigmoid(b + l)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub prevalence: f64,
    pub missing_rate: f64,
    pub blur_sigma: f64,
    pub weights: LabelWeights,
    pub split: SplitConfig,
    #[serde(skip, default)]
    pub tree: TreeConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 10_000,
            prevalence: 0.1,
            missing_rate: 0.05,
            blur_sigma: 1.5,
            weights: LabelWeights::default(),
            split: SplitConfig::default(),
            tree: TreeConfig::default(),
        }
    }
}

/// Low-frequency background of the pseudo-fundus image: three plane
/// waves `[fx, fy, phase, amplitude]` and a tint in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    pub waves: [[f64; 4]; 3],
    pub tint: f64,
}

impl Background {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut waves = [[0.0; 4]; 3];
        for w in &mut waves {
            *w = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..0.5)];
        }
        Background { waves, tint: rng.random() }
    }
}

#[derive(Debug, Clone)]
pub struct Subject {
    pub latent: LatentSubject,
    pub mask: BinaryMask,
    pub stats: TreeStats,
    /// One raw cell per field of [`cohort_fields`].
    pub tabular: Vec<RawCell>,
    pub background: Background,
    pub p: f64,
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub seed: u64,
    pub config: SynthConfig,
    pub intercept: f64,
    pub subjects: Vec<Subject>,
    pub roles: Vec<SplitRole>,
}

impl SynthCohort {
    pub fn labels(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.label).collect()
    }
}

/// Stream of subject `i`: the cohort seed keyed by the subject index.
pub fn subject_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Latents, mask and raw tabular cells of subject `i`; the label is
/// assigned later, once the intercept is known.
pub fn gen_subject(cfg: &SynthConfig, seed: u64, i: usize) -> Subject {
    let mut rng = subject_rng(seed, i);
    let latent = LatentSubject::sample(&mut rng);
    let (mask, stats) = gen_vessel_tree(&latent, &cfg.tree, &mut rng);
    let tabular = schema::sample_row(&latent, cfg.missing_rate, &mut rng);
    let background = Background::sample(&mut rng);
    Subject { latent, mask, stats, tabular, background, p: 0.0, label: false }
}

/// Generates `cfg.n` subjects in parallel, calibrates the intercept to the
/// target prevalence and assigns labels and split roles.
pub fn gen_cohort(cfg: &SynthConfig, seed: u64) -> Result<SynthCohort> {
    if cfg.n < 50 {
        return Err(Error::invalid(format!("cohort needs at least 50 subjects, got {}", cfg.n)));
    }
    if !(0.0..1.0).contains(&cfg.missing_rate) {
        return Err(Error::invalid("missing rate must lie in [0, 1)"));
    }
    let mut subjects: Vec<Subject> = (0..cfg.n).into_par_iter().map(|i| gen_subject(cfg, seed, i)).collect();
    let logits: Vec<f64> = subjects.iter().map(|s| s.latent.logit(&cfg.weights)).collect();
    let intercept = solve_intercept(&logits, cfg.prevalence)?;
    for (s, l) in subjects.iter_mut().zip(&logits) {
        s.p = sigmoid(intercept + l);
        s.label = s.latent.u < s.p;
    }
    let labels: Vec<bool> = subjects.iter().map(|s| s.label).collect();
    let roles = stratified_roles(&labels, &cfg.split, seed)?;
    Ok(SynthCohort { seed, config: cfg.clone(), intercept, subjects, roles })
}
