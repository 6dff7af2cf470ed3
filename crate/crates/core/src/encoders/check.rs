//! Finite-difference checks of whole encoders: every parameter and the
//! inputs are perturbed, the output is reduced with fixed random weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Cnn, GatEncoder, GatLayer, GraphBatch, Mlp, ParamCursor};
use crate::error::Result;
use crate::numcore::{grad_check, GradCheckReport, Parameterized, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// `Σ y ⊙ r` with `r` drawn from a fixed stream, so every output
/// coordinate contributes with its own weight.
fn weigh<T: Scalar>(tape: &mut Tape<T>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = tape.constant_f64(&shape, &r)?;
    let p = tape.mul(y, c)?;
    tape.sum(p)
}

fn inputs_with<T: Scalar, M: Parameterized<T>>(m: &M, extra: &[&Tensor<T>]) -> (Vec<Tensor<T>>, usize) {
    let mut all: Vec<Tensor<T>> = m.params().into_iter().cloned().collect();
    let np = all.len();
    all.extend(extra.iter().map(|&t| t.clone()));
    (all, np)
}

pub fn mlp_grad_check<T: Scalar>(m: &Mlp<T>, x: &Tensor<T>, tol: f64) -> GradCheckReport {
    let (inputs, np) = inputs_with(m, &[x]);
    grad_check(
        |tape, v| {
            let y = m.forward_with(tape, &mut ParamCursor::new(&v[..np]), v[np])?;
            weigh(tape, y)
        },
        &inputs,
        tol,
    )
}

pub fn gat_layer_grad_check<T: Scalar>(layer: &GatLayer<T>, h: &Tensor<T>, batch: &GraphBatch<T>, slope: f64, edge_messages: bool, tol: f64) -> GradCheckReport {
    let (inputs, np) = inputs_with(layer, &[h, &batch.edge_feats]);
    grad_check(
        |tape, v| {
            let o = layer.forward_with(tape, &mut ParamCursor::new(&v[..np]), v[np], v[np + 1], &batch.src, &batch.dst, slope, edge_messages)?;
            weigh(tape, o.h)
        },
        &inputs,
        tol,
    )
}

pub fn gat_grad_check<T: Scalar>(enc: &GatEncoder<T>, batch: &GraphBatch<T>, tol: f64) -> GradCheckReport {
    let (inputs, np) = inputs_with(enc, &[&batch.node_feats, &batch.edge_feats]);
    grad_check(
        |tape, v| {
            let y = enc.forward_with(tape, &mut ParamCursor::new(&v[..np]), v[np], v[np + 1], batch)?;
            weigh(tape, y)
        },
        &inputs,
        tol,
    )
}

pub fn cnn_grad_check<T: Scalar>(cnn: &Cnn<T>, x: &Tensor<T>, tol: f64) -> GradCheckReport {
    let (inputs, np) = inputs_with(cnn, &[x]);
    grad_check(
        |tape, v| {
            let y = cnn.forward_with(tape, &mut ParamCursor::new(&v[..np]), v[np])?;
            weigh(tape, y)
        },
        &inputs,
        tol,
    )
}
