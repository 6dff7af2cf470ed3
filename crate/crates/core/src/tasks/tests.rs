use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::contrastive::{ImagingSet, Modality, TowerConfig};
use crate::vesselgraph::{GraphFeatures, EDGE_FEATURES, NODE_FEATURES};

#[test]
fn auroc_small_examples() {
    assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap(), 0.5);
    assert_eq!(auroc(&[0.9, 0.4, 0.6, 0.1], &[true, true, false, false]).unwrap(), 0.75);
    assert_eq!(auroc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
}

#[test]
fn auroc_rejects_bad_input() {
    assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(auroc(&[0.1], &[true, false]).is_err());
    assert!(auroc(&[f64::NAN, 0.2], &[true, false]).is_err());
}

fn brute_force(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        // coarse scores force plenty of ties
        (prop::collection::vec(0u8..12, n), prop::collection::vec(any::<bool>(), n))
    })
    .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
    .prop_map(|(s, l)| (s.into_iter().map(|v| v as f64 / 4.0).collect(), l))
}

proptest! {
    #[test]
    fn auroc_matches_pair_count_and_trapezoid((scores, labels) in instance()) {
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((a - brute_force(&scores, &labels)).abs() < 1e-12);
        let t = trapezoid(&roc_points(&scores, &labels).unwrap());
        prop_assert!((a - t).abs() < 1e-12);
    }

    #[test]
    fn auroc_is_rank_invariant_and_antisymmetric((scores, labels) in instance()) {
        let a = auroc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((a - auroc(&warped, &labels).unwrap()).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((a + auroc(&flipped, &labels).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn roc_curve_runs_corner_to_corner() {
    let pts = roc_points(&[0.9, 0.7, 0.7, 0.1], &[true, false, true, false]).unwrap();
    assert_eq!(pts, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]);
}

fn labels_with(n: usize, pos: usize) -> Vec<bool> {
    let mut l = vec![false; n];
    // spread positives through the index range
    for k in 0..pos {
        l[k * n / pos] = true;
    }
    l
}

#[test]
fn balanced_subset_is_balanced_and_capped() {
    let labels = labels_with(1000, 100);
    let cfg = SplitConfig { max_labels: Some(40), ..Default::default() };
    let s = make_balanced_split(&labels, &cfg, 3).unwrap();
    let pos = s.balanced.iter().filter(|&&i| labels[i]).count();
    assert_eq!((pos, s.balanced.len()), (20, 40));
    assert!(s.balanced.iter().all(|i| s.train.binary_search(i).is_ok()));

    let uncapped = make_balanced_split(&labels, &SplitConfig::default(), 3).unwrap();
    let pos = uncapped.balanced.iter().filter(|&&i| labels[i]).count();
    assert_eq!(uncapped.balanced.len(), 2 * pos);
    assert_eq!(pos, uncapped.train.iter().filter(|&&i| labels[i]).count());
}

#[test]
fn hundred_subjects_ten_positive() {
    let labels = labels_with(100, 10);
    let cfg = SplitConfig { test_frac: 0.0, val_frac: 0.0, ..Default::default() };
    let s = make_balanced_split(&labels, &cfg, 0).unwrap();
    assert_eq!(s.balanced.iter().filter(|&&i| labels[i]).count(), 10);
    assert_eq!(s.balanced.len(), 20);
}

#[test]
fn splits_are_disjoint_stratified_and_seeded() {
    let labels = labels_with(500, 50);
    let cfg = SplitConfig::default();
    let a = make_balanced_split(&labels, &cfg, 9).unwrap();
    assert_eq!(a, make_balanced_split(&labels, &cfg, 9).unwrap());
    assert_ne!(a, make_balanced_split(&labels, &cfg, 10).unwrap());
    let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..500).collect::<Vec<_>>());
    assert_eq!(a.test.iter().filter(|&&i| labels[i]).count(), 10);
    assert_eq!(a.test.len(), 100);
}

#[test]
fn guard_flags_held_out_rows() {
    let labels = labels_with(200, 20);
    let s = make_balanced_split(&labels, &SplitConfig::default(), 1).unwrap();
    assert!(s.guard(&s.balanced).is_ok());
    let leak = s.test[3];
    assert!(matches!(s.guard(&[s.balanced[0], leak]), Err(crate::Error::SplitViolation(i)) if i == leak));
}

#[test]
fn degenerate_splits_fail() {
    assert!(make_balanced_split(&[false; 50], &SplitConfig::default(), 0).is_err());
    assert!(make_balanced_split(&[true; 50], &SplitConfig::default(), 0).is_err());
}

#[test]
fn roles_round_trip() {
    let labels = labels_with(300, 30);
    let cfg = SplitConfig::default();
    let roles = stratified_roles(&labels, &cfg, 4).unwrap();
    let s = CohortSplit::from_roles(&roles, &labels, &cfg, 4).unwrap();
    assert_eq!(s.roles(300), roles);
    for r in [SplitRole::Train, SplitRole::Val, SplitRole::Test] {
        assert_eq!(r.as_str().parse::<SplitRole>().unwrap(), r);
    }
}

#[test]
fn method_names_round_trip_in_table_order() {
    let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
    assert_eq!(names, ["tabular-nn", "multimodal-nn", "cl-raw", "cl-prob", "cl-graph"]);
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("cl-mesh".parse::<Method>().is_err());
}

/// Graph + tabular cohort where both modalities carry the label.
fn toy(n: usize, seed: u64) -> (Vec<GraphFeatures>, Vec<f64>, Vec<bool>, usize) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let d = 5;
    let (mut graphs, mut tab, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let z: f64 = r.random_range(-1.0..1.0);
        let y = z + 0.4 * r.random_range(-1.0..1.0) > 0.5;
        let k = r.random_range(2..5);
        let node_feats = (0..k * NODE_FEATURES).map(|_| z + 0.2 * r.random_range(-1.0..1.0)).collect();
        let edge_index: Vec<(usize, usize)> = (1..k).flat_map(|v| [(v - 1, v), (v, v - 1)]).collect();
        let edge_feats = vec![0.1; edge_index.len() * EDGE_FEATURES];
        graphs.push(GraphFeatures { num_nodes: k, node_feats, edge_index, edge_feats });
        tab.extend((0..d).map(|j| if j == 0 { z } else { r.random_range(-1.0..1.0) }));
        labels.push(y);
    }
    (graphs, tab, labels, d)
}

fn small_cfg(method: Method) -> FinetuneConfig {
    FinetuneConfig { method, epochs: 6, patience: 3, batch_size: 32, lr: 3e-3, baseline_width: 16, from_scratch: true, seed: 5, ..Default::default() }
}

fn tiny_towers(d: usize) -> TowerConfig {
    use crate::contrastive::ImageEncoderConfig;
    use crate::encoders::{GatConfig, MlpConfig};
    let mlp = |i, h, o| MlpConfig { input_dim: i, hidden: vec![h], output_dim: o, activation: Default::default() };
    TowerConfig { modality: Modality::Graph, image: ImageEncoderConfig::Gat(GatConfig::with_layers(&[(2, 4)])), tabular: mlp(d, 8, 8), proj_image: mlp(8, 8, 4), proj_tabular: mlp(8, 8, 4) }
}

#[test]
fn finetune_is_deterministic_and_learns() {
    let (graphs, tab, labels, d) = toy(600, 1);
    let split = make_balanced_split(&labels, &SplitConfig::default(), 2).unwrap();
    let data = TaskData { labels: &labels, tabular: &tab, tab_dim: d, imaging: Some(ImagingSet::Graphs(&graphs)) };
    for method in [Method::TabularNn, Method::ClGraph] {
        let run = || finetune::<f64>(&small_cfg(method), Init::Fresh(tiny_towers(d)), &data, &split).unwrap();
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1.store(serde_json::Value::Null).to_bytes(), m2.store(serde_json::Value::Null).to_bytes());
        assert!(r1.auroc > 0.8, "{method}: {}", r1.auroc);
        assert_eq!(r1.n_pos + r1.n_neg, split.test.len());
    }
}

#[test]
fn classifier_checkpoint_round_trips() {
    let (graphs, tab, labels, d) = toy(200, 3);
    let split = make_balanced_split(&labels, &SplitConfig::default(), 2).unwrap();
    let data = TaskData { labels: &labels, tabular: &tab, tab_dim: d, imaging: Some(ImagingSet::Graphs(&graphs)) };
    let (model, _) = finetune::<f64>(&small_cfg(Method::ClGraph), Init::Fresh(tiny_towers(d)), &data, &split).unwrap();
    let ck = model.store(serde_json::json!({ "seed": 5 }));
    let back = Classifier::<f64>::restore(&crate::encoders::Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
    assert_eq!(predict(&model, &data, &split.test).unwrap(), predict(&back, &data, &split.test).unwrap());
}

#[test]
fn contrastive_methods_need_a_checkpoint_unless_from_scratch() {
    let (graphs, tab, labels, d) = toy(200, 4);
    let split = make_balanced_split(&labels, &SplitConfig::default(), 2).unwrap();
    let data = TaskData { labels: &labels, tabular: &tab, tab_dim: d, imaging: Some(ImagingSet::Graphs(&graphs)) };
    let cfg = FinetuneConfig { from_scratch: false, ..small_cfg(Method::ClGraph) };
    assert!(finetune::<f64>(&cfg, Init::Fresh(tiny_towers(d)), &data, &split).is_err());
    let wrong = small_cfg(Method::ClRaw);
    assert!(finetune::<f64>(&wrong, Init::Fresh(tiny_towers(d)), &data, &split).is_err());
}

#[test]
fn permuted_labels_remove_the_signal() {
    // many weakly informative columns, as in a clinical table
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let (n, d) = (3000, 30);
    let mut tab = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let risk: f64 = row[..10].iter().sum::<f64>() / 10f64.sqrt();
        labels.push(risk + 0.5 * r.random_range(-1.0..1.0) > 0.6);
        tab.extend(row);
    }
    let split = make_balanced_split(&labels, &SplitConfig::default(), 2).unwrap();
    let data = TaskData { labels: &labels, tabular: &tab, tab_dim: d, imaging: None };
    let mut mean = 0.0;
    for seed in 0..8 {
        let cfg = FinetuneConfig { seed, ..small_cfg(Method::TabularNn) };
        let (_, signal) = finetune::<f64>(&cfg, Init::Fresh(tiny_towers(d)), &data, &split).unwrap();
        assert!(signal.auroc > 0.8, "{}", signal.auroc);
        let cfg = FinetuneConfig { permute_labels: true, ..cfg };
        let (_, r) = finetune::<f64>(&cfg, Init::Fresh(tiny_towers(d)), &data, &split).unwrap();
        assert!(r.permuted);
        mean += r.auroc / 8.0;
    }
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
}
