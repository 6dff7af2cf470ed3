use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoders::{GatConfig, MlpConfig};
use crate::numcore::{grad_check, Tensor};
use crate::vesselgraph::{GraphFeatures, EDGE_FEATURES, NODE_FEATURES};

fn loss_of(xi: &Tensor<f64>, xt: &Tensor<f64>, tau: f64, lambda: f64, mode: DenominatorMode) -> f64 {
    let mut tape = Tape::new();
    let a = tape.constant(xi).unwrap();
    let b = tape.constant(xt).unwrap();
    let l = clip_loss(&mut tape, a, b, tau, lambda, mode).unwrap();
    tape.scalar_value(l)
}

fn rand_mat(r: &mut ChaCha8Rng, b: usize, d: usize) -> Tensor<f64> {
    Tensor::new(&[b, d], (0..b * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rows(t: &Tensor<f64>, order: &[usize]) -> Tensor<f64> {
    let d = t.shape()[1];
    Tensor::new(&[order.len(), d], order.iter().flat_map(|&i| t.values()[i * d..(i + 1) * d].to_vec()).collect()).unwrap()
}

#[test]
fn orthonormal_pair_oracle() {
    let e = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let l = loss_of(&e, &e, 1.0, 0.5, DenominatorMode::AsWritten);
    assert!((l + 2.0).abs() < 1e-9, "{l}");
}

#[test]
fn lambda_one_keeps_only_image_to_tabular_term() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let (xi, xt) = (rand_mat(&mut r, 5, 3), rand_mat(&mut r, 5, 3));
    let tau = 0.3;
    // direct evaluation of the image→tabular sum
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let row = |t: &Tensor<f64>, i: usize| t.values()[i * 3..i * 3 + 3].to_vec();
    let mut expect = 0.0;
    for x in 0..5 {
        let num = cos(&row(&xi, x), &row(&xt, x)) / tau;
        let den: f64 = (0..5).filter(|&y| y != x).map(|y| (cos(&row(&xi, x), &row(&xt, y)) / tau).exp()).sum();
        expect -= num - den.ln();
    }
    let l = loss_of(&xi, &xt, tau, 1.0, DenominatorMode::AsWritten);
    assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");
}

#[test]
fn swapping_modalities_mirrors_lambda() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for mode in [DenominatorMode::AsWritten, DenominatorMode::Standard] {
        let (xi, xt) = (rand_mat(&mut r, 6, 4), rand_mat(&mut r, 6, 4));
        let a = loss_of(&xi, &xt, 0.1, 0.3, mode);
        let b = loss_of(&xt, &xi, 0.1, 0.7, mode);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn batch_order_does_not_matter() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (xi, xt) = (rand_mat(&mut r, 6, 4), rand_mat(&mut r, 6, 4));
    let order = [4, 0, 5, 2, 1, 3];
    let a = loss_of(&xi, &xt, 0.1, 0.5, DenominatorMode::AsWritten);
    let b = loss_of(&rows(&xi, &order), &rows(&xt, &order), 0.1, 0.5, DenominatorMode::AsWritten);
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn rescaling_one_embedding_changes_nothing() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let (xi, xt) = (rand_mat(&mut r, 4, 5), rand_mat(&mut r, 4, 5));
    let mut scaled = xi.clone();
    scaled.values_mut()[5..10].iter_mut().for_each(|v| *v *= 3.0);
    for mode in [DenominatorMode::AsWritten, DenominatorMode::Standard] {
        let a = loss_of(&xi, &xt, 0.1, 0.5, mode);
        let b = loss_of(&scaled, &xt, 0.1, 0.5, mode);
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn aligned_pairs_beat_every_mismatch_in_standard_mode() {
    let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let aligned = loss_of(&eye, &eye, 0.5, 0.5, DenominatorMode::Standard);
    for order in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        let l = loss_of(&eye, &rows(&eye, &order), 0.5, 0.5, DenominatorMode::Standard);
        assert!(aligned < l, "{aligned} vs {l}");
    }
}

#[test]
fn invalid_batches_and_temperatures_fail() {
    let one = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(&one).unwrap();
    assert!(clip_loss(&mut tape, a, a, 0.1, 0.5, DenominatorMode::AsWritten).is_err());
    let two = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = tape.constant(&two).unwrap();
    assert!(clip_loss(&mut tape, b, b, 0.0, 0.5, DenominatorMode::AsWritten).is_err());
    assert!(clip_loss(&mut tape, b, b, -1.0, 0.5, DenominatorMode::Standard).is_err());
}

#[test]
fn clip_loss_passes_grad_check() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for mode in [DenominatorMode::AsWritten, DenominatorMode::Standard] {
        for b in [2, 4, 8] {
            let inputs = [rand_mat(&mut r, b, 3), rand_mat(&mut r, b, 3)];
            let rep = grad_check(|t, v| clip_loss(t, v[0], v[1], 0.2, 0.4, mode), &inputs, 1e-4);
            assert!(rep.passed, "{mode:?} B={b}: {rep:?}");
        }
    }
}

/// Graphs and tabular rows that share a two-dimensional latent.
fn correlated_pairs(n: usize, seed: u64) -> (Vec<GraphFeatures>, Vec<f64>, usize) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let d = 6;
    let mut graphs = Vec::with_capacity(n);
    let mut tab = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z: [f64; 2] = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let k = r.random_range(2..6);
        let node_feats = (0..k * NODE_FEATURES).map(|i| z[i % 2] + 0.1 * r.random_range(-1.0..1.0)).collect();
        let mut edge_index = Vec::new();
        for v in 1..k {
            edge_index.push((v - 1, v));
            edge_index.push((v, v - 1));
        }
        let edge_feats = (0..edge_index.len() * EDGE_FEATURES).map(|_| 0.1).collect();
        graphs.push(GraphFeatures { num_nodes: k, node_feats, edge_index, edge_feats });
        for j in 0..d {
            tab.push(z[j % 2] * (1.0 + j as f64 * 0.2) + 0.1 * r.random_range(-1.0..1.0));
        }
    }
    (graphs, tab, d)
}

fn tiny_towers(d: usize) -> TowerConfig {
    let gat = GatConfig::with_layers(&[(2, 4), (2, 4)]);
    let mlp = |i, h, o| MlpConfig { input_dim: i, hidden: vec![h], output_dim: o, activation: Default::default() };
    TowerConfig { modality: Modality::Graph, image: ImageEncoderConfig::Gat(gat), tabular: mlp(d, 16, 8), proj_image: mlp(8, 8, 4), proj_tabular: mlp(8, 8, 4) }
}

fn cfg(epochs: usize) -> ContrastiveConfig {
    ContrastiveConfig { batch_size: 16, epochs, seed: 11, temperature: 0.5, lr: 3e-3, ..Default::default() }
}

#[test]
fn pretraining_lowers_the_loss() {
    let (graphs, tab, d) = correlated_pairs(512, 6);
    let data = PairedData::new(ImagingSet::Graphs(&graphs), &tab, d, (0..512).collect()).unwrap();
    let mut p = Pretrainer::<f64>::new(cfg(4), tiny_towers(d), data).unwrap();
    let (first, _) = p.step().unwrap();
    let mut last_epoch = Vec::new();
    let logs = p.run(|l| last_epoch.push(l.mean_loss)).unwrap();
    // 512 / 16 = 32 steps per epoch, 4 epochs
    assert_eq!(logs.len(), 4);
    assert!(logs[3].mean_loss < first, "{first} -> {:?}", logs);
}

#[test]
fn identical_seeds_give_identical_checkpoints_and_resume_is_exact() {
    let (graphs, tab, d) = correlated_pairs(100, 7);
    let data = PairedData::new(ImagingSet::Graphs(&graphs), &tab, d, (0..100).collect()).unwrap();
    let run = |steps: usize| {
        let mut p = Pretrainer::<f64>::new(cfg(3), tiny_towers(d), data.clone()).unwrap();
        for _ in 0..steps {
            p.step().unwrap();
        }
        p
    };
    assert_eq!(run(9).checkpoint().to_bytes(), run(9).checkpoint().to_bytes());

    // 100 / 16 -> 7 batches (the last holds 4); stop mid-epoch
    let saved = run(9).checkpoint();
    let bytes = saved.to_bytes();
    let mut resumed = Pretrainer::<f64>::resume(&crate::encoders::Checkpoint::from_bytes(&bytes).unwrap(), data.clone()).unwrap();
    resumed.step().unwrap();
    assert_eq!(resumed.checkpoint().to_bytes(), run(10).checkpoint().to_bytes());
}

#[test]
fn trailing_singleton_batch_is_dropped() {
    assert_eq!(pretrain_bounds(33, 16), vec![(0, 16), (16, 32)]);
    assert_eq!(pretrain_bounds(34, 16), vec![(0, 16), (16, 32), (32, 34)]);
}

fn pretrain_bounds(n: usize, b: usize) -> Vec<(usize, usize)> {
    pretrain::batch_bounds(n, b)
}

#[test]
fn empty_or_mismatched_data_is_rejected() {
    let (graphs, tab, d) = correlated_pairs(10, 8);
    let empty = PairedData::new(ImagingSet::Graphs(&graphs), &tab, d, vec![]).unwrap();
    assert!(Pretrainer::<f64>::new(cfg(1), tiny_towers(d), empty).is_err());
    assert!(PairedData::new(ImagingSet::Graphs(&graphs), &tab[1..], d, vec![0]).is_err());
    let bad = ContrastiveConfig { temperature: 0.0, ..cfg(1) };
    let data = PairedData::new(ImagingSet::Graphs(&graphs), &tab, d, (0..10).collect()).unwrap();
    assert!(Pretrainer::<f64>::new(bad, tiny_towers(d), data).is_err());
}
