use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{ImagingBatch, Modality};
use crate::encoders::{bind_params, Checkpoint, Cnn, CnnConfig, GatConfig, GatEncoder, Mlp, MlpConfig, ParamCursor};
use crate::error::{Error, Result};
use crate::numcore::{Parameterized, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ImageEncoderConfig {
    Cnn(CnnConfig),
    Gat(GatConfig),
}

impl ImageEncoderConfig {
    pub fn output_dim(&self) -> usize {
        match self {
            ImageEncoderConfig::Cnn(c) => c.output_dim(),
            ImageEncoderConfig::Gat(g) => g.output_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            ImageEncoderConfig::Cnn(c) => c.num_params(),
            ImageEncoderConfig::Gat(g) => g.num_params(),
        }
    }
}

/// Shapes of the four towers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub modality: Modality,
    pub image: ImageEncoderConfig,
    pub tabular: MlpConfig,
    pub proj_image: MlpConfig,
    pub proj_tabular: MlpConfig,
}

impl TowerConfig {
    /// Published sizes: 512-d GAT or desk CNN, tabular MLP 1024/1024,
    /// projectors 512 → 128.
    pub fn published(modality: Modality, tab_dim: usize) -> Self {
        let image = match modality.image_channels() {
            Some(c) => ImageEncoderConfig::Cnn(CnnConfig::desk(c)),
            None => ImageEncoderConfig::Gat(GatConfig::published()),
        };
        Self::assemble(modality, image, MlpConfig::tabular(tab_dim), 512, 128)
    }

    /// Published sizes with a ResNet50 image encoder for raw and
    /// probability images; graph towers match [`TowerConfig::published`].
    pub fn resnet50(modality: Modality, tab_dim: usize) -> Self {
        let image = match modality.image_channels() {
            Some(c) => ImageEncoderConfig::Cnn(CnnConfig::resnet50(c)),
            None => ImageEncoderConfig::Gat(GatConfig::published()),
        };
        Self::assemble(modality, image, MlpConfig::tabular(tab_dim), 512, 128)
    }

    /// Reduced widths for single-core runs.
    pub fn light(modality: Modality, tab_dim: usize) -> Self {
        let image = match modality.image_channels() {
            Some(c) => {
                let mut cnn = CnnConfig::desk(c);
                cnn.stem_channels = 8;
                for (s, ch) in cnn.stages.iter_mut().zip([8, 16, 32]) {
                    s.channels = ch;
                    s.blocks = 1;
                }
                cnn.out_dim = Some(128);
                ImageEncoderConfig::Cnn(cnn)
            }
            None => ImageEncoderConfig::Gat(GatConfig::with_layers(&[(4, 8), (4, 16), (2, 64)])),
        };
        let tab = MlpConfig { input_dim: tab_dim, hidden: vec![256], output_dim: 128, activation: Default::default() };
        Self::assemble(modality, image, tab, 128, 64)
    }

    fn assemble(modality: Modality, image: ImageEncoderConfig, tabular: MlpConfig, proj_hidden: usize, proj_out: usize) -> Self {
        let proj = |d: usize| MlpConfig { input_dim: d, hidden: vec![proj_hidden], output_dim: proj_out, activation: Default::default() };
        TowerConfig { modality, proj_image: proj(image.output_dim()), proj_tabular: proj(tabular.output_dim), image, tabular }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.image, self.modality.image_channels()) {
            (ImageEncoderConfig::Gat(_), None) => {}
            (ImageEncoderConfig::Cnn(c), Some(ch)) if c.in_channels == ch => {}
            _ => return Err(Error::invalid(format!("image encoder does not fit modality {}", self.modality))),
        }
        if self.proj_image.input_dim != self.image.output_dim() || self.proj_tabular.input_dim != self.tabular.output_dim {
            return Err(Error::invalid("projector input dims must match encoder outputs"));
        }
        if self.proj_image.output_dim != self.proj_tabular.output_dim {
            return Err(Error::invalid("projectors must map into one shared dimension"));
        }
        Ok(())
    }

    /// Trainable scalars of all four towers.
    pub fn num_params(&self) -> usize {
        self.image.num_params() + self.tabular.num_params() + self.proj_image.num_params() + self.proj_tabular.num_params()
    }
}

#[derive(Debug, Clone)]
pub enum ImageEncoder<T> {
    Cnn(Cnn<T>),
    Gat(GatEncoder<T>),
}

impl<T: Scalar> ImageEncoder<T> {
    pub fn output_dim(&self) -> usize {
        match self {
            ImageEncoder::Cnn(c) => c.output_dim(),
            ImageEncoder::Gat(g) => g.output_dim(),
        }
    }

    pub fn forward_with(&self, tape: &mut Tape<T>, p: &mut ParamCursor, batch: &ImagingBatch<T>) -> Result<Var> {
        match (self, batch) {
            (ImageEncoder::Cnn(c), ImagingBatch::Images(x)) => {
                let x = tape.constant(x)?;
                c.forward_with(tape, p, x)
            }
            (ImageEncoder::Gat(g), ImagingBatch::Graphs(b)) => {
                let n = tape.constant(&b.node_feats)?;
                let e = tape.constant(&b.edge_feats)?;
                g.forward_with(tape, p, n, e, b)
            }
            _ => Err(Error::invalid("imaging batch does not match the image encoder")),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, batch: &ImagingBatch<T>) -> Result<Var> {
        let vars = bind_params(tape, self)?;
        self.forward_with(tape, &mut ParamCursor::new(&vars), batch)
    }
}

impl<T: Scalar> Parameterized<T> for ImageEncoder<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            ImageEncoder::Cnn(c) => c.params(),
            ImageEncoder::Gat(g) => g.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            ImageEncoder::Cnn(c) => c.params_mut(),
            ImageEncoder::Gat(g) => g.params_mut(),
        }
    }
}

/// Image encoder f_i, tabular encoder f_t and projectors g_i, g_t.
#[derive(Debug, Clone)]
pub struct Towers<T> {
    pub config: TowerConfig,
    pub image: ImageEncoder<T>,
    pub tabular: Mlp<T>,
    pub proj_image: Mlp<T>,
    pub proj_tabular: Mlp<T>,
}

pub(crate) const PREFIXES: [&str; 4] = ["image", "tabular", "proj_image", "proj_tabular"];

impl<T: Scalar> Towers<T> {
    /// Initialises towers in a fixed order from one stream.
    pub fn new<R: Rng + ?Sized>(config: TowerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let image = match &config.image {
            ImageEncoderConfig::Cnn(c) => ImageEncoder::Cnn(Cnn::new("image", c.clone(), rng)?),
            ImageEncoderConfig::Gat(g) => ImageEncoder::Gat(GatEncoder::new("image", g.clone(), rng)?),
        };
        let tabular = Mlp::new("tabular", config.tabular.clone(), rng)?;
        let proj_image = Mlp::new("proj_image", config.proj_image.clone(), rng)?;
        let proj_tabular = Mlp::new("proj_tabular", config.proj_tabular.clone(), rng)?;
        Ok(Towers { config, image, tabular, proj_image, proj_tabular })
    }

    /// Projected pair `(x'_i, x'_t)`, each `[B×d_p]`.
    pub fn project(&self, tape: &mut Tape<T>, imaging: &ImagingBatch<T>, tab: &Tensor<T>) -> Result<(Var, Var)> {
        let vars = bind_params(tape, self)?;
        let mut p = ParamCursor::new(&vars);
        let zi = self.image.forward_with(tape, &mut p, imaging)?;
        let t = tape.constant(tab)?;
        let zt = self.tabular.forward_with(tape, &mut p, t)?;
        let xi = self.proj_image.forward_with(tape, &mut p, zi)?;
        let xt = self.proj_tabular.forward_with(tape, &mut p, zt)?;
        Ok((xi, xt))
    }

    pub fn store(&self, ck: &mut Checkpoint) {
        ck.push_params(PREFIXES[0], &self.image.params());
        ck.push_params(PREFIXES[1], &self.tabular.params());
        ck.push_params(PREFIXES[2], &self.proj_image.params());
        ck.push_params(PREFIXES[3], &self.proj_tabular.params());
    }

    /// Rebuilds towers of `config` and fills them from `ck`.
    pub fn restore(config: TowerConfig, ck: &Checkpoint) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = Self::new(config, &mut rng)?;
        ck.restore_params(PREFIXES[0], t.image.params_mut())?;
        ck.restore_params(PREFIXES[1], t.tabular.params_mut())?;
        ck.restore_params(PREFIXES[2], t.proj_image.params_mut())?;
        ck.restore_params(PREFIXES[3], t.proj_tabular.params_mut())?;
        Ok(t)
    }
}

impl<T: Scalar> Parameterized<T> for Towers<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = self.image.params();
        v.extend(self.tabular.params());
        v.extend(self.proj_image.params());
        v.extend(self.proj_tabular.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.image.params_mut();
        v.extend(self.tabular.params_mut());
        v.extend(self.proj_image.params_mut());
        v.extend(self.proj_tabular.params_mut());
        v
    }
}
