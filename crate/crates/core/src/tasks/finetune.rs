use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{auroc, roc_points};
use super::split::{CohortSplit, SplitConfig};
use crate::contrastive::{ImageEncoder, ImageEncoderConfig, ImagingBatch, ImagingSet, Modality, PairedData, TowerConfig, Towers};
use crate::dataprep::{AugmentConfig, AugmentParams};
use crate::encoders::{Checkpoint, Cnn, GatEncoder, Mlp, MlpConfig, ParamCursor};
use crate::error::{Error, Result};
use crate::numcore::{adam_step, AdamConfig, AdamState, Parameterized, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Downstream methods, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TabularNn,
    MultimodalNn,
    ClRaw,
    ClProb,
    ClGraph,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::TabularNn, Method::MultimodalNn, Method::ClRaw, Method::ClProb, Method::ClGraph];

    pub fn name(self) -> &'static str {
        match self {
            Method::TabularNn => "tabular-nn",
            Method::MultimodalNn => "multimodal-nn",
            Method::ClRaw => "cl-raw",
            Method::ClProb => "cl-prob",
            Method::ClGraph => "cl-graph",
        }
    }

    /// Display name used in result tables.
    pub fn title(self) -> &'static str {
        match self {
            Method::TabularNn => "Tabular-NN",
            Method::MultimodalNn => "Multimodal-NN",
            Method::ClRaw => "Multimodal-CL-raw",
            Method::ClProb => "Multimodal-CL-prob",
            Method::ClGraph => "Multimodal-CL-graph",
        }
    }

    /// Imaging modality of a contrastive method.
    pub fn contrastive_modality(self) -> Option<Modality> {
        match self {
            Method::ClRaw => Some(Modality::Raw),
            Method::ClProb => Some(Modality::Prob),
            Method::ClGraph => Some(Modality::Graph),
            _ => None,
        }
    }

    pub fn is_contrastive(self) -> bool {
        self.contrastive_modality().is_some()
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?} (tabular-nn | multimodal-nn | cl-raw | cl-prob | cl-graph)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub method: Method,
    pub epochs: usize,
    /// Epochs without a new best validation AUROC before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate factor for pretrained encoders.
    pub encoder_lr_scale: f64,
    pub freeze_encoders: bool,
    /// Allows contrastive methods without a checkpoint (random towers).
    pub from_scratch: bool,
    /// Feed the projector outputs instead of the encoder outputs to the head.
    pub use_projections: bool,
    /// Shuffle training and validation labels (no-signal control).
    pub permute_labels: bool,
    pub augment: bool,
    /// Hidden width of the tabular baseline, and embedding width of both
    /// branches of the multimodal baseline.
    pub baseline_width: usize,
    pub seed: u64,
    pub split: SplitConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            method: Method::ClGraph,
            epochs: 100,
            patience: 10,
            batch_size: 64,
            lr: 1e-3,
            encoder_lr_scale: 0.1,
            freeze_encoders: false,
            from_scratch: false,
            use_projections: false,
            permute_labels: false,
            augment: true,
            baseline_width: 256,
            seed: 0,
            split: SplitConfig::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.baseline_width == 0 {
            return Err(Error::invalid("epochs, batch size and widths must be positive"));
        }
        if !(self.lr > 0.0) || !(self.encoder_lr_scale >= 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }
}

/// Where the encoders come from.
pub enum Init<'a> {
    /// Towers saved by contrastive pretraining.
    Pretrained(&'a Checkpoint),
    /// Random towers of this shape. Contrastive methods need
    /// `from_scratch`; the multimodal baseline takes its image encoder shape
    /// from here; the tabular baseline ignores it.
    Fresh(TowerConfig),
}

/// Shapes of every part of a [`Classifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub method: Method,
    pub modality: Option<Modality>,
    pub image: Option<ImageEncoderConfig>,
    pub image_proj: Option<MlpConfig>,
    pub tabular: MlpConfig,
    pub tabular_proj: Option<MlpConfig>,
    pub head: Option<MlpConfig>,
}

/// Encoders plus a two-logit head.
#[derive(Debug, Clone)]
pub struct Classifier<T> {
    pub config: ClassifierConfig,
    pub image: Option<ImageEncoder<T>>,
    pub image_proj: Option<Mlp<T>>,
    pub tabular: Mlp<T>,
    pub tabular_proj: Option<Mlp<T>>,
    pub head: Option<Mlp<T>>,
}

fn linear(input: usize, output: usize) -> MlpConfig {
    MlpConfig { input_dim: input, hidden: Vec::new(), output_dim: output, activation: Default::default() }
}

fn fresh_image<T: Scalar>(cfg: &ImageEncoderConfig, rng: &mut ChaCha8Rng) -> Result<ImageEncoder<T>> {
    Ok(match cfg {
        ImageEncoderConfig::Cnn(c) => ImageEncoder::Cnn(Cnn::new("image", c.clone(), rng)?),
        ImageEncoderConfig::Gat(g) => ImageEncoder::Gat(GatEncoder::new("image", g.clone(), rng)?),
    })
}

const PARTS: [&str; 5] = ["image", "image_proj", "tabular", "tabular_proj", "head"];

impl<T: Scalar> Classifier<T> {
    /// Builds the head for `cfg.method` around `init`. Random parts draw
    /// from `rng` in a fixed order.
    pub fn build(cfg: &FinetuneConfig, init: &Init, tab_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = cfg.baseline_width;
        match cfg.method {
            Method::TabularNn => {
                let tabular = MlpConfig { input_dim: tab_dim, hidden: vec![w], output_dim: 2, activation: Default::default() };
                let config = ClassifierConfig { method: cfg.method, modality: None, image: None, image_proj: None, tabular, tabular_proj: None, head: None };
                Self::fresh(config, rng)
            }
            Method::MultimodalNn => {
                let Init::Fresh(towers) = init else {
                    return Err(Error::invalid("the multimodal baseline trains from scratch; pass a tower shape, not a checkpoint"));
                };
                let image_dim = towers.image.output_dim();
                let config = ClassifierConfig {
                    method: cfg.method,
                    modality: Some(towers.modality),
                    image: Some(towers.image.clone()),
                    image_proj: Some(linear(image_dim, w)),
                    tabular: MlpConfig { input_dim: tab_dim, hidden: vec![w], output_dim: w, activation: Default::default() },
                    tabular_proj: None,
                    head: Some(linear(2 * w, 2)),
                };
                Self::fresh(config, rng)
            }
            m => {
                let modality = m.contrastive_modality().expect("contrastive method");
                let towers: Towers<T> = match init {
                    Init::Pretrained(ck) => {
                        let tcfg: TowerConfig = serde_json::from_value(ck.header.get("towers").cloned().ok_or_else(|| Error::Checkpoint("header lacks towers".into()))?)
                            .map_err(|e| Error::Checkpoint(e.to_string()))?;
                        Towers::restore(tcfg, ck)?
                    }
                    Init::Fresh(tcfg) if cfg.from_scratch => Towers::new(tcfg.clone(), rng)?,
                    Init::Fresh(_) => return Err(Error::invalid(format!("{m} needs a pretrained checkpoint unless from_scratch is set"))),
                };
                if towers.config.modality != modality {
                    return Err(Error::invalid(format!("{m} needs {modality} towers, checkpoint holds {}", towers.config.modality)));
                }
                if towers.config.tabular.input_dim != tab_dim {
                    return Err(Error::shape("finetune", format!("towers expect {} tabular columns, data has {tab_dim}", towers.config.tabular.input_dim)));
                }
                let Towers { config: tc, image, tabular, proj_image, proj_tabular } = towers;
                let (image_proj, tabular_proj) = if cfg.use_projections { (Some(proj_image), Some(proj_tabular)) } else { (None, None) };
                let d = image_proj.as_ref().map_or(image.output_dim(), |p| p.output_dim()) + tabular_proj.as_ref().map_or(tabular.output_dim(), |p| p.output_dim());
                let head_cfg = linear(d, 2);
                let head = Mlp::new("head", head_cfg.clone(), rng)?;
                let config = ClassifierConfig {
                    method: m,
                    modality: Some(modality),
                    image: Some(tc.image),
                    image_proj: image_proj.as_ref().map(|p| p.config.clone()),
                    tabular: tc.tabular,
                    tabular_proj: tabular_proj.as_ref().map(|p| p.config.clone()),
                    head: Some(head_cfg),
                };
                Ok(Classifier { config, image: Some(image), image_proj, tabular, tabular_proj, head: Some(head) })
            }
        }
    }

    /// Random parameters for every part of `config`.
    pub fn fresh(config: ClassifierConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let image = config.image.as_ref().map(|c| fresh_image(c, rng)).transpose()?;
        let image_proj = config.image_proj.clone().map(|c| Mlp::new("image_proj", c, rng)).transpose()?;
        let tabular = Mlp::new("tabular", config.tabular.clone(), rng)?;
        let tabular_proj = config.tabular_proj.clone().map(|c| Mlp::new("tabular_proj", c, rng)).transpose()?;
        let head = config.head.clone().map(|c| Mlp::new("head", c, rng)).transpose()?;
        Ok(Classifier { config, image, image_proj, tabular, tabular_proj, head })
    }

    fn parts(&self) -> [Vec<&Tensor<T>>; 5] {
        [
            self.image.as_ref().map(|m| m.params()).unwrap_or_default(),
            self.image_proj.as_ref().map(|m| m.params()).unwrap_or_default(),
            self.tabular.params(),
            self.tabular_proj.as_ref().map(|m| m.params()).unwrap_or_default(),
            self.head.as_ref().map(|m| m.params()).unwrap_or_default(),
        ]
    }

    fn parts_mut(&mut self) -> [Vec<&mut Tensor<T>>; 5] {
        [
            self.image.as_mut().map(|m| m.params_mut()).unwrap_or_default(),
            self.image_proj.as_mut().map(|m| m.params_mut()).unwrap_or_default(),
            self.tabular.params_mut(),
            self.tabular_proj.as_mut().map(|m| m.params_mut()).unwrap_or_default(),
            self.head.as_mut().map(|m| m.params_mut()).unwrap_or_default(),
        ]
    }

    /// Parameters of pretrained encoders (contrastive methods only) and the
    /// rest.
    pub fn groups_mut(&mut self) -> (Vec<&mut Tensor<T>>, Vec<&mut Tensor<T>>) {
        let contrastive = self.config.method.is_contrastive();
        let [a, b, c, d, e] = self.parts_mut();
        if contrastive {
            (a.into_iter().chain(b).chain(c).chain(d).collect(), e)
        } else {
            (Vec::new(), a.into_iter().chain(b).chain(c).chain(d).chain(e).collect())
        }
    }

    /// `[B×2]` logits.
    pub fn logits(&self, tape: &mut Tape<T>, imaging: Option<&ImagingBatch<T>>, tab: &Tensor<T>) -> Result<Var> {
        let vars = crate::encoders::bind_params(tape, self)?;
        let mut p = ParamCursor::new(&vars);
        let zi = match (&self.image, imaging) {
            (Some(enc), Some(batch)) => {
                let z = enc.forward_with(tape, &mut p, batch)?;
                Some(match &self.image_proj {
                    Some(proj) => proj.forward_with(tape, &mut p, z)?,
                    None => z,
                })
            }
            (Some(_), None) => return Err(Error::invalid(format!("{} needs imaging input", self.config.method))),
            (None, _) => None,
        };
        let t = tape.constant(tab)?;
        let mut zt = self.tabular.forward_with(tape, &mut p, t)?;
        if let Some(proj) = &self.tabular_proj {
            zt = proj.forward_with(tape, &mut p, zt)?;
        }
        let h = match zi {
            Some(zi) => tape.concat_cols(&[zi, zt])?,
            None => zt,
        };
        match &self.head {
            Some(head) => head.forward_with(tape, &mut p, h),
            None => Ok(h),
        }
    }

    pub fn store(&self, extra: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({ "kind": "classifier", "classifier": self.config, "finetune": extra }));
        for (name, params) in PARTS.iter().zip(self.parts()) {
            if !params.is_empty() {
                ck.push_params(name, &params);
            }
        }
        ck
    }

    pub fn restore(ck: &Checkpoint) -> Result<Self> {
        if ck.header.get("kind").and_then(|k| k.as_str()) != Some("classifier") {
            return Err(Error::Checkpoint("not a classifier checkpoint".into()));
        }
        let config: ClassifierConfig = serde_json::from_value(ck.header["classifier"].clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut c = Self::fresh(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, params) in PARTS.iter().zip(c.parts_mut()) {
            if !params.is_empty() {
                ck.restore_params(name, params)?;
            }
        }
        Ok(c)
    }

    fn snapshot(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| p.values().to_vec()).collect()
    }

    fn load_snapshot(&mut self, snap: &[Vec<T>]) {
        for (p, v) in self.params_mut().into_iter().zip(snap) {
            p.values_mut().copy_from_slice(v);
        }
    }
}

impl<T: Scalar> Parameterized<T> for Classifier<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.parts().into_iter().flatten().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.parts_mut().into_iter().flatten().collect()
    }
}

/// Inputs shared by every method.
#[derive(Clone, Copy)]
pub struct TaskData<'a> {
    pub labels: &'a [bool],
    /// Row-major `[n × tab_dim]`.
    pub tabular: &'a [f64],
    pub tab_dim: usize,
    pub imaging: Option<ImagingSet<'a>>,
}

impl<'a> TaskData<'a> {
    fn paired(&self, modality: Option<Modality>, subjects: Vec<usize>) -> Result<(PairedData<'a>, bool)> {
        let n = self.labels.len();
        let imaging = match (modality, self.imaging) {
            (None, _) => ImagingSet::Graphs(&[]),
            (Some(m), Some(set)) if set.modality() == m => set,
            (Some(m), _) => return Err(Error::Data(format!("method needs {m} imaging for every subject"))),
        };
        let has_imaging = modality.is_some();
        if has_imaging && imaging.len() != n {
            return Err(Error::Data(format!("{} imaging entries for {n} subjects", imaging.len())));
        }
        // tabular-only methods only read tabular rows
        let paired = if has_imaging {
            PairedData::new(imaging, self.tabular, self.tab_dim, subjects)?
        } else {
            if self.tabular.len() != n * self.tab_dim {
                return Err(Error::shape("task data", format!("{} tabular values for {n} × {}", self.tabular.len(), self.tab_dim)));
            }
            PairedData { imaging, tabular: self.tabular, tab_dim: self.tab_dim, indices: subjects }
        };
        Ok((paired, has_imaging))
    }
}

/// Test-set result, serialised as the report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
    pub config_hash: String,
    pub pretrained: bool,
    pub permuted: bool,
    pub best_val_auroc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub roc: Vec<[f64; 2]>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Two columns, `fpr,tpr`.
    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("fpr,tpr\n");
        for [f, t] in &self.roc {
            s.push_str(&format!("{f},{t}\n"));
        }
        fs::write(path, s)?;
        Ok(())
    }
}

/// Hex SHA-256 of `bytes`, first 16 digits.
pub fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Positive-class probabilities for `subjects`, in batches.
pub fn predict<T: Scalar>(model: &Classifier<T>, data: &TaskData, subjects: &[usize]) -> Result<Vec<f64>> {
    let (paired, has_imaging) = data.paired(model.config.modality, subjects.to_vec())?;
    let mut out = Vec::with_capacity(subjects.len());
    for chunk in subjects.chunks(128) {
        let imaging = if has_imaging { Some(paired.imaging_batch::<T>(chunk, None)?) } else { None };
        let tab = paired.tabular_batch::<T>(chunk)?;
        let mut tape = Tape::new();
        let logits = model.logits(&mut tape, imaging.as_ref(), &tab)?;
        let probs = tape.softmax_rows(logits)?;
        out.extend(tape.value(probs).chunks(2).map(|r| r[1].as_f64()));
    }
    Ok(out)
}

/// Test AUROC and ROC of a trained model.
pub fn evaluate<T: Scalar>(model: &Classifier<T>, data: &TaskData, split: &CohortSplit) -> Result<(f64, Vec<(f64, f64)>, usize, usize)> {
    let scores = predict(model, data, &split.test)?;
    let labels: Vec<bool> = split.test.iter().map(|&i| data.labels[i]).collect();
    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok((auroc(&scores, &labels)?, roc_points(&scores, &labels)?, n_pos, labels.len() - n_pos))
}

/// Supervised training on the balanced subset with early stopping on
/// validation AUROC, then evaluation on the untouched test rows.
pub fn finetune<T: Scalar>(cfg: &FinetuneConfig, init: Init, data: &TaskData, split: &CohortSplit) -> Result<(Classifier<T>, EvalReport)> {
    cfg.validate()?;
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(cfg).map_err(|e| Error::invalid(e.to_string()))?);
    match &init {
        Init::Pretrained(ck) => hasher.update(ck.to_bytes()),
        Init::Fresh(t) => hasher.update(serde_json::to_vec(t).map_err(|e| Error::invalid(e.to_string()))?),
    }
    let config_hash: String = hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Classifier::<T>::build(cfg, &init, data.tab_dim, &mut rng)?;
    // start from constant scores so an untrained direction cannot rank subjects
    let out = model.head.as_mut().unwrap_or(&mut model.tabular).layers.last_mut().expect("at least one layer");
    out.weight.values_mut().iter_mut().for_each(|w| *w = T::zero());
    if cfg.freeze_encoders {
        model.groups_mut().0.into_iter().for_each(|p| p.set_requires_grad(false));
    }
    split.guard(&split.balanced)?;
    split.guard(&split.val)?;

    let mut labels = data.labels.to_vec();
    if cfg.permute_labels {
        for rows in [&split.balanced, &split.val] {
            let mut l: Vec<bool> = rows.iter().map(|&i| labels[i]).collect();
            l.shuffle(&mut rng);
            rows.iter().zip(l).for_each(|(&i, v)| labels[i] = v);
        }
    }
    let val_labels: Vec<bool> = split.val.iter().map(|&i| labels[i]).collect();
    let train_data = TaskData { labels: &labels, ..*data };

    let (paired, has_imaging) = data.paired(model.config.modality, split.balanced.clone())?;
    let augment = cfg.augment && has_imaging && model.config.modality != Some(Modality::Graph);
    let aug_cfg = AugmentConfig::default();
    let mut head_adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut enc_adam = AdamState::new(AdamConfig::with_lr(cfg.lr * cfg.encoder_lr_scale));

    let mut order = split.balanced.clone();
    let mut best = (f64::NEG_INFINITY, 0usize, model.snapshot());
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            split.guard(chunk)?;
            let aug: Option<Vec<AugmentParams>> = augment.then(|| chunk.iter().map(|_| AugmentParams::sample(&aug_cfg, &mut rng)).collect());
            let imaging = if has_imaging { Some(paired.imaging_batch::<T>(chunk, aug.as_deref())?) } else { None };
            let tab = paired.tabular_batch::<T>(chunk)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| labels[i] as usize).collect();
            let mut tape = Tape::new();
            let logits = model.logits(&mut tape, imaging.as_ref(), &tab)?;
            let loss = tape.cross_entropy(logits, &targets)?;
            loss_sum += tape.scalar_value(loss).as_f64() * chunk.len() as f64;
            tape.backward(loss)?;
            tape.write_grads(model.params_mut().into_iter().filter(|p| p.requires_grad()))?;
            let (mut enc, mut head) = model.groups_mut();
            enc.retain(|p| p.requires_grad());
            if !enc.is_empty() {
                adam_step(&mut enc, &mut enc_adam)?;
            }
            adam_step(&mut head, &mut head_adam)?;
        }
        epochs_run = epoch + 1;
        let val_scores = predict(&model, &train_data, &split.val)?;
        let val_auc = auroc(&val_scores, &val_labels)?;
        info!("{} epoch {epoch}: train loss {:.4}, val AUROC {val_auc:.4}, {:.1} s", cfg.method, loss_sum / order.len() as f64, start.elapsed().as_secs_f64());
        if val_auc > best.0 {
            best = (val_auc, epoch, model.snapshot());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    model.load_snapshot(&best.2);
    model.groups_mut().0.into_iter().for_each(|p| p.set_requires_grad(true));

    let (auc, roc, n_pos, n_neg) = evaluate(&model, data, split)?;
    info!("{} seed {}: test AUROC {auc:.4} (best val {:.4} at epoch {})", cfg.method, cfg.seed, best.0, best.1);
    let report = EvalReport {
        method: cfg.method,
        auroc: auc,
        n_pos,
        n_neg,
        seed: cfg.seed,
        config_hash,
        pretrained: matches!(init, Init::Pretrained(_)),
        permuted: cfg.permute_labels,
        best_val_auroc: best.0,
        best_epoch: best.1,
        epochs_run,
        roc: roc.into_iter().map(|(f, t)| [f, t]).collect(),
    };
    Ok((model, report))
}
