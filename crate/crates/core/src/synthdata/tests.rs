use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tasks::auroc;
use crate::vesselgraph::{extract_graph, ExtractConfig};

fn latent(t: f64, b: f64, c: f64) -> LatentSubject {
    LatentSubject { tortuosity: t, branching: b, caliber: c, risk: 0.0, noise: 0.0, u: 0.5 }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    idx.iter().enumerate().for_each(|(k, &i)| r[i] = k as f64);
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let m = (n - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - m) * (y - m)).sum();
    let var: f64 = ra.iter().map(|x| (x - m) * (x - m)).sum();
    cov / var
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn unbranched_tree_is_a_single_path() {
    let cfg = TreeConfig::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = latent(seed as f64 / 19.0, 0.0, (seed % 5) as f64 / 4.0);
        let (mask, stats) = gen_vessel_tree(&l, &cfg, &mut rng);
        assert_eq!(stats.branches, 1);
        let g = extract_graph(&mask, &ExtractConfig::default()).unwrap();
        assert_eq!((g.endpoints(), g.edges.len(), g.nodes.len()), (2, 1, 2), "seed {seed}");
    }
}

#[test]
fn every_tree_is_one_component_and_extracts_cleanly() {
    let cfg = SynthConfig { n: 200, ..Default::default() };
    for i in 0..200 {
        let s = gen_subject(&cfg, 3, i);
        assert_eq!(s.mask.components().1, 1, "subject {i}");
        let g = extract_graph(&s.mask, &ExtractConfig::default()).unwrap();
        assert!(!g.is_empty());
    }
}

#[test]
fn extracted_curveness_tracks_planted_tortuosity() {
    let cfg = SynthConfig { n: 200, ..Default::default() };
    let (mut planted, mut measured) = (Vec::new(), Vec::new());
    for i in 0..200 {
        let s = gen_subject(&cfg, 11, i);
        planted.push(s.latent.tortuosity);
        measured.push(extract_graph(&s.mask, &ExtractConfig::default()).unwrap().mean_curveness());
    }
    let rho = spearman(&planted, &measured);
    assert!(rho > 0.8, "Spearman {rho}");
}

#[test]
fn branch_count_tracks_branch_intensity() {
    let cfg = SynthConfig { n: 200, ..Default::default() };
    let (mut planted, mut branches) = (Vec::new(), Vec::new());
    for i in 0..200 {
        let s = gen_subject(&cfg, 12, i);
        planted.push(s.latent.branching);
        branches.push(s.stats.branches as f64);
    }
    let rho = spearman(&planted, &branches);
    assert!(rho > 0.6, "{rho}");
}

#[test]
fn too_small_cohorts_are_rejected() {
    assert!(gen_cohort(&SynthConfig { n: 49, ..Default::default() }, 0).is_err());
}

#[test]
fn blur_is_normalised_and_bounded() {
    let mut m = BinaryMask::empty(32, 32).unwrap();
    for y in 0..32 {
        for x in 10..22 {
            m.set(crate::vesselgraph::Pixel::new(x, y), true);
        }
    }
    let b = blur_mask(&m, 1.5);
    assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
    // deep inside the bar the kernel sees only foreground
    assert!((b[16 * 32 + 16] - 1.0).abs() < 1e-12);
    assert!(b[16 * 32] < 1e-12);
    let edge = b[16 * 32 + 10];
    assert!(edge > 0.5 && edge < 1.0);
}

#[test]
fn intercept_hits_target_mean_probability() {
    let logits: Vec<f64> = (0..1000).map(|i| (i as f64 / 100.0).sin() * 2.0).collect();
    let b = solve_intercept(&logits, 0.1).unwrap();
    let mean = logits.iter().map(|l| sigmoid(b + l)).sum::<f64>() / 1000.0;
    assert!((mean - 0.1).abs() < 1e-9);
    assert!(solve_intercept(&logits, 1.0).is_err());
}

#[test]
fn generation_keeps_up_with_fifty_subjects_per_second() {
    let cfg = SynthConfig { n: 100, ..Default::default() };
    let t = Instant::now();
    for i in 0..100 {
        std::hint::black_box(gen_subject(&cfg, 5, i));
    }
    let rate = 100.0 / t.elapsed().as_secs_f64();
    assert!(rate >= 50.0, "{rate:.1} subjects/s");
}

/// Newton-fitted logistic regression with intercept.
fn fit_logistic(x: &DMatrix<f64>, y: &[bool]) -> DVector<f64> {
    let (n, d) = (x.nrows(), x.ncols() + 1);
    let xa = DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let mut w = DVector::zeros(d);
    for _ in 0..25 {
        let p: Vec<f64> = (0..n).map(|i| sigmoid(xa.row(i).dot(&w.transpose()))).collect();
        let g = DVector::from_fn(d, |j, _| (0..n).map(|i| (p[i] - y[i] as u8 as f64) * xa[(i, j)]).sum());
        let h = DMatrix::from_fn(d, d, |a, b| (0..n).map(|i| p[i] * (1.0 - p[i]) * xa[(i, a)] * xa[(i, b)]).sum::<f64>());
        w -= h.lu().solve(&g).unwrap();
    }
    w
}

#[test]
fn cohort_labels_are_learnable_and_calibrated() {
    let c = gen_cohort(&SynthConfig { n: 10_000, ..Default::default() }, 7).unwrap();
    let labels = c.labels();
    let prevalence = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
    assert!((prevalence - 0.1).abs() <= 0.03, "{prevalence}");

    let feats = |s: &Subject| [z_uniform(s.latent.tortuosity), z_uniform(s.latent.branching), s.latent.risk];
    let (train, test): (Vec<usize>, Vec<usize>) = (0..c.subjects.len()).partition(|&i| c.roles[i] != SplitRole::Test);
    let x = DMatrix::from_fn(train.len(), 3, |i, j| feats(&c.subjects[train[i]])[j]);
    let y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
    let w = fit_logistic(&x, &y);
    let scores: Vec<f64> = test.iter().map(|&i| {
        let f = feats(&c.subjects[i]);
        w[0] + w[1] * f[0] + w[2] * f[1] + w[3] * f[2]
    }).collect();
    let yt: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
    let a = auroc(&scores, &yt).unwrap();
    assert!(a > 0.85, "oracle AUROC {a}");

    // noise columns carry no label information
    let fields = cohort_fields();
    let y: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
    for (j, f) in fields.iter().enumerate() {
        if f.role != FieldRole::Noise || f.field.kind != crate::dataprep::FieldKind::Continuous {
            continue;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = c
            .subjects
            .iter()
            .zip(&y)
            .filter_map(|(s, &yy)| s.tabular[j].as_ref().map(|v| (v.parse::<f64>().unwrap(), yy)))
            .unzip();
        assert!(pearson(&xs, &ys).abs() < 0.05, "{}", f.field.name);
    }
}

#[test]
fn same_seed_gives_identical_directories() {
    let cfg = SynthConfig { n: 60, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        write_cohort(&gen_cohort(&cfg, 9).unwrap(), d.path(), &ExtractConfig::default()).unwrap();
    }
    for sub in ["cohort.csv", "manifest.json", "masks/00007.pgm", "prob/00059.pgm", "raw/00000.png", "graphs/00031.json"] {
        let (x, y) = (std::fs::read(a.path().join(sub)).unwrap(), std::fs::read(b.path().join(sub)).unwrap());
        assert_eq!(x, y, "{sub}");
    }
    let n = std::fs::read_dir(a.path().join("graphs")).unwrap().count();
    assert_eq!(n, 60);
    let csv = std::fs::read_to_string(a.path().join("cohort.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 49 + 2);
}

#[test]
fn dense_trees_never_leave_unthinned_blocks() {
    let cfg = SynthConfig::default();
    let failures: Vec<usize> = (0..1000).filter(|&i| extract_graph(&gen_subject(&cfg, 9, i).mask, &ExtractConfig::default()).is_err()).collect();
    assert!(failures.is_empty(), "{failures:?}");
}
