//! Residual convolutional image encoder without normalisation layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bind_params, Linear, ParamCursor};
use crate::dataprep::ImageTensor;
use crate::error::{Error, Result};
use crate::numcore::{Parameterized, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand by `expansion`.
    Bottleneck { expansion: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    /// Stride of the stage's first block.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub block: BlockKind,
    pub stages: Vec<StageConfig>,
    /// Final linear map; `None` exposes the pooled features directly.
    pub out_dim: Option<usize>,
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

impl CnnConfig {
    /// Stem 16, stages (16, 32, 64) × 2 basic blocks, strides 1/2/2, 512-d.
    pub fn desk(in_channels: usize) -> Self {
        CnnConfig {
            in_channels,
            input_size: crate::dataprep::IMAGE_SIZE,
            stem_channels: 16,
            stem_kernel: 3,
            stem_stride: 2,
            block: BlockKind::Basic,
            stages: [(16, 1), (32, 2), (64, 2)].iter().map(|&(channels, stride)| StageConfig { blocks: 2, channels, stride }).collect(),
            out_dim: Some(512),
        }
    }

    /// ResNet50 layout (bottleneck stages 3, 4, 6, 3), 2048-d pooled
    /// features. Meant for parameter counting.
    pub fn resnet50(in_channels: usize) -> Self {
        CnnConfig {
            in_channels,
            input_size: crate::dataprep::IMAGE_SIZE,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            block: BlockKind::Bottleneck { expansion: 4 },
            stages: [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)]
                .iter()
                .map(|&(blocks, channels, stride)| StageConfig { blocks, channels, stride })
                .collect(),
            out_dim: None,
        }
    }

    fn expansion(&self) -> usize {
        match self.block {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck { expansion } => expansion,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |s| s.channels * self.expansion())
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim.unwrap_or_else(|| self.feature_dim())
    }

    /// `(in, width, stride)` for every block in order.
    fn block_plan(&self) -> Vec<(usize, usize, usize)> {
        let mut cin = self.stem_channels;
        let mut plan = Vec::new();
        for s in &self.stages {
            for b in 0..s.blocks {
                plan.push((cin, s.channels, if b == 0 { s.stride } else { 1 }));
                cin = s.channels * self.expansion();
            }
        }
        plan
    }

    fn block_params(&self, cin: usize, c: usize, stride: usize) -> usize {
        let cout = c * self.expansion();
        let body = match self.block {
            BlockKind::Basic => conv_params(cin, c, 3) + conv_params(c, c, 3),
            BlockKind::Bottleneck { .. } => conv_params(cin, c, 1) + conv_params(c, c, 3) + conv_params(c, cout, 1),
        };
        let shortcut = if stride != 1 || cin != cout { conv_params(cin, cout, 1) } else { 0 };
        body + shortcut
    }

    /// Closed-form trainable parameter count; allocates nothing.
    pub fn num_params(&self) -> usize {
        let stem = conv_params(self.in_channels, self.stem_channels, self.stem_kernel);
        let blocks: usize = self.block_plan().iter().map(|&(cin, c, s)| self.block_params(cin, c, s)).sum();
        let head = self.out_dim.map_or(0, |d| Linear::<f64>::num_params_for(self.feature_dim(), d));
        stem + blocks + head
    }

    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.in_channels > 0 && self.input_size > 0 && self.stem_channels > 0 && self.stem_kernel > 0 && self.stem_stride > 0;
        let stages_ok = self.stages.iter().all(|s| s.blocks > 0 && s.channels > 0 && s.stride > 0);
        if !dims_ok || !stages_ok || self.expansion() == 0 || self.out_dim == Some(0) {
            return Err(Error::invalid(format!("invalid CNN config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Conv<T> {
    w: Tensor<T>,
    b: Tensor<T>,
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Conv<T> {
    fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        Conv {
            w: Tensor::kaiming_uniform(format!("{name}.w"), &[cout, cin, k, k], cin * k * k, rng),
            b: Tensor::zeros_param(format!("{name}.b"), &[cout]),
            stride,
            pad: k / 2,
        }
    }

    fn forward_with(&self, tape: &mut Tape<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let (w, b) = (p.next_var()?, p.next_var()?);
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
struct Block<T> {
    convs: Vec<Conv<T>>,
    shortcut: Option<Conv<T>>,
}

impl<T: Scalar> Block<T> {
    fn forward_with(&self, tape: &mut Tape<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward_with(tape, p, h)?;
            if i + 1 < self.convs.len() {
                h = tape.relu(h)?;
            }
        }
        let skip = match &self.shortcut {
            Some(c) => c.forward_with(tape, p, x)?,
            None => x,
        };
        let y = tape.add(h, skip)?;
        tape.relu(y)
    }

    fn params(&self) -> Vec<&Conv<T>> {
        self.convs.iter().chain(self.shortcut.iter()).collect()
    }
}

/// Stem convolution, residual stages, global average pool, optional
/// linear head.
#[derive(Debug, Clone)]
pub struct Cnn<T> {
    pub config: CnnConfig,
    stem: Conv<T>,
    blocks: Vec<Block<T>>,
    head: Option<Linear<T>>,
}

impl<T: Scalar> Cnn<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, config: CnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = Conv::new(&format!("{name}.stem"), config.in_channels, config.stem_channels, config.stem_kernel, config.stem_stride, rng);
        let e = config.expansion();
        let blocks = config
            .block_plan()
            .into_iter()
            .enumerate()
            .map(|(i, (cin, c, stride))| {
                let n = format!("{name}.block{i}");
                let cout = c * e;
                let convs = match config.block {
                    BlockKind::Basic => vec![Conv::new(&format!("{n}.conv0"), cin, c, 3, stride, rng), Conv::new(&format!("{n}.conv1"), c, c, 3, 1, rng)],
                    BlockKind::Bottleneck { .. } => vec![
                        Conv::new(&format!("{n}.conv0"), cin, c, 1, 1, rng),
                        Conv::new(&format!("{n}.conv1"), c, c, 3, stride, rng),
                        Conv::new(&format!("{n}.conv2"), c, cout, 1, 1, rng),
                    ],
                };
                let shortcut = (stride != 1 || cin != cout).then(|| Conv::new(&format!("{n}.skip"), cin, cout, 1, stride, rng));
                Block { convs, shortcut }
            })
            .collect();
        let head = config.out_dim.map(|d| Linear::new(&format!("{name}.head"), config.feature_dim(), d, rng));
        Ok(Cnn { config, stem, blocks, head })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// `x [N×C×S×S] -> [N×D]`.
    pub fn forward_with(&self, tape: &mut Tape<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let c = &self.config;
        match tape.shape(x) {
            [_, ch, h, w] if *ch == c.in_channels && *h == c.input_size && *w == c.input_size => {}
            s => {
                return Err(Error::shape(
                    "cnn_encode",
                    format!("input {s:?}, expected [N×{}×{}×{}]", c.in_channels, c.input_size, c.input_size),
                ))
            }
        }
        let h = self.stem.forward_with(tape, p, x)?;
        let mut h = tape.relu(h)?;
        for b in &self.blocks {
            h = b.forward_with(tape, p, h)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        match &self.head {
            Some(l) => l.forward_with(tape, p, pooled),
            None => Ok(pooled),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let vars = bind_params(tape, self)?;
        self.forward_with(tape, &mut ParamCursor::new(&vars), x)
    }

    pub fn encode(&self, images: &[&ImageTensor]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(&images_to_tensor(images)?)?;
        let y = self.forward(&mut tape, x)?;
        Ok(tape.to_tensor(y))
    }
}

impl<T: Scalar> Parameterized<T> for Cnn<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.stem.w, &self.stem.b];
        for b in &self.blocks {
            for c in b.params() {
                out.push(&c.w);
                out.push(&c.b);
            }
        }
        if let Some(h) = &self.head {
            out.extend(h.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.stem.w, &mut self.stem.b];
        for b in &mut self.blocks {
            for c in b.convs.iter_mut().chain(b.shortcut.iter_mut()) {
                out.push(&mut c.w);
                out.push(&mut c.b);
            }
        }
        if let Some(h) = &mut self.head {
            out.extend(h.params_mut());
        }
        out
    }
}

/// Stacks equally shaped images into `[N×C×H×W]`.
pub fn images_to_tensor<T: Scalar>(images: &[&ImageTensor]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::Empty("image batch"))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for (i, img) in images.iter().enumerate() {
        if (img.channels, img.height, img.width) != (c, h, w) {
            return Err(Error::shape("image batch", format!("image {i} is {}×{}×{}, first is {c}×{h}×{w}", img.channels, img.height, img.width)));
        }
        data.extend(img.data.iter().map(|&v| T::lit(v)));
    }
    Tensor::new(&[images.len(), c, h, w], data)
}
