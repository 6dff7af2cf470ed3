//! Learnable towers: tabular MLP, projectors, the GAT graph encoder and a
//! small residual CNN, plus parameter counting and checkpoints.

pub mod check;
mod checkpoint;
mod cnn;
mod gat;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use cnn::{images_to_tensor, BlockKind, Cnn, CnnConfig, StageConfig};
pub use gat::{GatConfig, GatEncoder, GatLayer, GatLayerConfig, GraphBatch, LayerOutput, Pooling};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Parameterized, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Walks a slice of bound parameter nodes in `params()` order.
#[derive(Debug)]
pub struct ParamCursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl<'a> ParamCursor<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        ParamCursor { vars, pos: 0 }
    }

    pub fn next_var(&mut self) -> Result<Var> {
        let v = self.vars.get(self.pos).copied().ok_or_else(|| Error::invalid(format!("ran out of bound parameters after {}", self.pos)))?;
        self.pos += 1;
        Ok(v)
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }
}

/// Binds every parameter of `m` on `tape`, in `params()` order.
pub fn bind_params<T: Scalar, M: Parameterized<T> + ?Sized>(tape: &mut Tape<T>, m: &M) -> Result<Vec<Var>> {
    m.params().into_iter().map(|p| tape.param(p)).collect()
}

/// Exact number of trainable scalars.
pub fn count_params<T: Scalar, M: Parameterized<T> + ?Sized>(m: &M) -> usize {
    m.params().iter().filter(|p| p.requires_grad()).map(|p| p.len()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Elu,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Affine map `x W + b` with `W [in×out]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            weight: Tensor::kaiming_uniform(format!("{name}.w"), &[input, output], input, rng),
            bias: Tensor::zeros_param(format!("{name}.b"), &[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward_with(&self, tape: &mut Tape<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let (w, b) = (p.next_var()?, p.next_var()?);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    pub fn num_params_for(input: usize, output: usize) -> usize {
        input * output + output
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    /// Tabular encoder: one hidden layer of 1024, output 1024.
    pub fn tabular(input_dim: usize) -> Self {
        MlpConfig { input_dim, hidden: vec![1024], output_dim: 1024, activation: Activation::Relu }
    }

    /// Projector into the shared latent space: hidden 512, output 128.
    pub fn projector(input_dim: usize) -> Self {
        MlpConfig { input_dim, hidden: vec![512], output_dim: 128, activation: Activation::Relu }
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.output_dim);
        d
    }

    pub fn num_params(&self) -> usize {
        self.dims().windows(2).map(|w| Linear::<f64>::num_params_for(w[0], w[1])).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::invalid(format!("MLP dims must be positive: {:?}", self.dims())));
        }
        Ok(())
    }
}

/// Affine → activation for each hidden layer, then an affine output.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub config: MlpConfig,
    pub layers: Vec<Linear<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config.dims().windows(2).enumerate().map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng)).collect();
        Ok(Mlp { config, layers })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// `x [B×in] -> [B×out]`.
    pub fn forward_with(&self, tape: &mut Tape<T>, p: &mut ParamCursor, x: Var) -> Result<Var> {
        match tape.shape(x) {
            [_, d] if *d == self.config.input_dim => {}
            s => return Err(Error::shape("mlp_encode", format!("input {s:?}, expected [B×{}]", self.config.input_dim))),
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward_with(tape, p, h)?;
            if i + 1 < self.layers.len() {
                h = self.config.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let vars = bind_params(tape, self)?;
        self.forward_with(tape, &mut ParamCursor::new(&vars), x)
    }
}

impl<T: Scalar> Parameterized<T> for Mlp<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Runs `x` through `m` on a fresh tape and returns the output values.
pub fn mlp_encode<T: Scalar>(m: &Mlp<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x)?;
    let y = m.forward(&mut tape, xv)?;
    Ok(tape.to_tensor(y))
}
