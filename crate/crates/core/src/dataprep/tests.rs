use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn cell(s: &str) -> RawCell {
    Some(s.to_string())
}

#[test]
fn continuous_column_is_z_scored_with_population_std() {
    let mut schema = TabularSchema::new(vec![Field::continuous("x")]);
    let rows = vec![vec![cell("1")], vec![cell("2")], vec![cell("3")]];
    schema.fit(&rows).unwrap();
    let m = schema.encode(&rows).unwrap();
    // population std of [1,2,3] is sqrt(2/3)
    let want = [-1.224744871391589, 0.0, 1.224744871391589];
    for (got, want) in m.cells.iter().zip(want) {
        assert!((got.unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn categorical_and_binary_are_one_hot() {
    let mut schema = TabularSchema::new(vec![Field::categorical("smoke", &["never", "former", "current"]), Field::binary("sex")]);
    let rows = vec![vec![cell("former"), cell("1")], vec![cell("current"), cell("0")], vec![cell("never"), None]];
    schema.fit(&rows).unwrap();
    assert_eq!(schema.encoded_width(), 5);
    let m = schema.encode(&rows).unwrap();
    for r in 0..3 {
        let block: f64 = (0..3).map(|c| m.get(r, c).unwrap()).sum();
        assert_eq!(block, 1.0);
    }
    assert_eq!(m.get(0, 1), Some(1.0));
    assert_eq!((m.get(0, 3), m.get(0, 4)), (Some(0.0), Some(1.0)));
    assert_eq!((m.get(2, 3), m.get(2, 4)), (None, None));
    assert_eq!(schema.column_names()[4], "sex=1");
}

#[test]
fn unseen_level_encodes_as_zero_block() {
    let mut schema = TabularSchema::new(vec![Field::categorical("c", &["a", "b"])]);
    schema.fit(&[vec![cell("a")]]).unwrap();
    let m = schema.encode(&[vec![cell("z")]]).unwrap();
    assert_eq!(m.cells, vec![Some(0.0), Some(0.0)]);
}

#[test]
fn row_width_mismatch_is_an_error() {
    let mut schema = TabularSchema::new(vec![Field::continuous("a"), Field::continuous("b")]);
    assert!(schema.fit(&[vec![cell("1")]]).is_err());
    schema.fit(&[vec![cell("1"), cell("2")]]).unwrap();
    assert!(schema.encode(&[vec![cell("1")]]).is_err());
}

#[test]
fn training_columns_have_zero_mean_unit_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fields = (0..4).map(|k| Field::continuous(format!("f{k}"))).collect();
    let mut schema = TabularSchema::new(fields);
    let rows: Vec<Vec<RawCell>> =
        (0..200).map(|_| (0..4).map(|k| cell(&format!("{}", rng.random_range(-5.0..5.0) * (k + 1) as f64 + 3.0))).collect()).collect();
    schema.fit(&rows).unwrap();
    let m = schema.encode(&rows).unwrap();
    for c in 0..4 {
        let col: Vec<f64> = (0..200).map(|r| m.get(r, c).unwrap()).collect();
        let mean = col.iter().sum::<f64>() / 200.0;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9, "{mean} {std}");
    }
}

#[test]
fn csv_reading_maps_na_and_empty_to_missing() {
    let text = "a,b,label\n1.5,,1\nNA,x,0\n";
    let t = RawTable::read_csv(text.as_bytes()).unwrap();
    assert_eq!(t.header, vec!["a", "b", "label"]);
    assert_eq!(t.rows[0], vec![cell("1.5"), None, cell("1")]);
    assert_eq!(t.rows[1][0], None);
    assert_eq!(t.project(&["label", "a"]).unwrap()[0], vec![cell("1"), cell("1.5")]);
    assert!(t.column("nope").is_err());
}

#[test]
fn complete_column_is_unchanged() {
    let m = TableMatrix::new(3, 2, vec![Some(1.0), Some(5.0), Some(2.0), None, Some(3.0), Some(7.0)]).unwrap();
    let x = iterative_impute(&m, ImputeConfig::default()).unwrap();
    assert_eq!([x[0], x[2], x[4]], [1.0, 2.0, 3.0]);
}

#[test]
fn exact_linear_relation_is_recovered() {
    // y = 2x with the y at x = 3.5 hidden
    let xs = [1.0, 2.0, 3.0, 3.5, 4.0, 5.0];
    let cells = xs.iter().flat_map(|&x| [Some(x), if x == 3.5 { None } else { Some(2.0 * x) }]).collect();
    let m = TableMatrix::new(xs.len(), 2, cells).unwrap();
    let x = iterative_impute(&m, ImputeConfig::default()).unwrap();
    // ridge closed form: slope 2·Sxx/(Sxx + λ) through the observed means
    let obs = [1.0, 2.0, 3.0, 4.0, 5.0];
    let mx = obs.iter().sum::<f64>() / 5.0;
    let sxx: f64 = obs.iter().map(|v| (v - mx) * (v - mx)).sum();
    let slope = 2.0 * sxx / (sxx + 1e-3);
    let oracle = 2.0 * mx + slope * (3.5 - mx);
    assert!((x[7] - oracle).abs() < 1e-9, "{} vs {oracle}", x[7]);
    assert!((x[7] - 7.0).abs() < 1e-3);
}

#[test]
fn fully_missing_column_becomes_zero() {
    let m = TableMatrix::new(3, 2, vec![Some(1.0), None, Some(2.0), None, Some(4.0), None]).unwrap();
    let x = iterative_impute(&m, ImputeConfig::default()).unwrap();
    assert_eq!([x[1], x[3], x[5]], [0.0, 0.0, 0.0]);
}

#[test]
fn transform_replays_fit_and_respects_observed_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d) = (120, 5);
    let mut cells = Vec::new();
    for _ in 0..n {
        let z: f64 = rng.random_range(-1.0..1.0);
        for c in 0..d {
            let v = z * (c + 1) as f64 + rng.random_range(-0.1..0.1);
            cells.push(if rng.random_bool(0.15) { None } else { Some(v) });
        }
    }
    let m = TableMatrix::new(n, d, cells).unwrap();
    let (imp, x) = IterativeImputer::fit(&m, ImputeConfig::default()).unwrap();
    assert_eq!(imp.transform(&m).unwrap(), x);
    for (c, v) in m.cells.iter().zip(&x) {
        if let Some(c) = c {
            assert_eq!(c, v);
        }
    }
    // correlated columns make imputation better than the mean
    let truth_gap: f64 = (0..n)
        .filter(|&r| m.get(r, 4).is_none())
        .map(|r| {
            let z = x[r * d];
            (x[r * d + 4] - 5.0 * z).abs()
        })
        .fold(0.0, f64::max);
    assert!(truth_gap < 1.5, "{truth_gap}");
}

fn gradient(c: usize, h: usize, w: usize) -> ImageTensor {
    let data = (0..c * h * w).map(|i| ((i % w) as f64 + 2.0 * ((i / w) % h) as f64) / (w + 2 * h) as f64).collect();
    ImageTensor::new(c, h, w, data).unwrap()
}

#[test]
fn preprocess_shape_and_range() {
    let raw = gradient(3, 150, 200);
    let out = preprocess_image(&raw).unwrap();
    assert_eq!((out.channels, out.height, out.width), (3, IMAGE_SIZE, IMAGE_SIZE));
    let lo = out.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((lo, hi), (0.0, 1.0));
    assert!(preprocess_image(&gradient(1, 127, 300)).is_err());
}

#[test]
fn constant_image_maps_to_zero() {
    let raw = ImageTensor::new(1, 130, 140, vec![0.7; 130 * 140]).unwrap();
    assert!(preprocess_image(&raw).unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn normalised_128_input_is_unchanged() {
    let raw = gradient(1, 128, 128);
    let mut want = raw.clone();
    let (lo, hi) = (want.data[0], *want.data.last().unwrap());
    want.data.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    assert_eq!(preprocess_image(&want).unwrap(), want);
    // identity resize is exact too
    assert_eq!(resize_bicubic(&raw, 128, 128), raw);
}

#[test]
fn bicubic_matches_kernel_by_hand() {
    // 4 → 2 samples: output centre 0 maps to source 0.5
    let img = ImageTensor::new(1, 1, 4, vec![0.0, 1.0, 4.0, 9.0]).unwrap();
    let out = resize_bicubic(&img, 1, 2);
    // taps at -1(clamped→0), 0, 1, 2 with t = 1.5, 0.5, -0.5, -1.5
    let k = |t: f64| {
        let t: f64 = t.abs();
        if t <= 1.0 {
            1.5 * t.powi(3) - 2.5 * t * t + 1.0
        } else {
            -0.5 * t.powi(3) + 2.5 * t * t - 4.0 * t + 2.0
        }
    };
    let want = k(1.5) * 0.0 + k(0.5) * 0.0 + k(0.5) * 1.0 + k(1.5) * 4.0;
    assert!((out.data[0] - want).abs() < 1e-12);
}

#[test]
fn preprocess_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raw = ImageTensor::new(3, 160, 180, (0..3 * 160 * 180).map(|_| rng.random()).collect()).unwrap();
    let once = preprocess_image(&raw).unwrap();
    let twice = preprocess_image(&once).unwrap();
    let err = once.data.iter().zip(&twice.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn double_flip_is_identity() {
    let img = gradient(2, 16, 20);
    let flip = AugmentParams { flip: true, ..AugmentParams::IDENTITY };
    assert_eq!(augment_with(&augment_with(&img, &flip), &flip), img);
    assert_ne!(augment_with(&img, &flip), img);
}

#[test]
fn identity_params_leave_image_alone() {
    let img = gradient(3, 12, 12);
    assert_eq!(augment_with(&img, &AugmentParams::IDENTITY), img);
}

#[test]
fn rotation_keeps_centre_and_fills_zero() {
    let img = ImageTensor::new(1, 9, 9, vec![1.0; 81]).unwrap();
    let p = AugmentParams { rotation_deg: 15.0, ..AugmentParams::IDENTITY };
    let out = augment_with(&img, &p);
    assert_eq!(out.at(0, 4, 4), 1.0);
    assert!(out.at(0, 0, 0) < 1.0);
}

#[test]
fn augmentation_is_seed_deterministic() {
    let img = gradient(3, 32, 32);
    let cfg = AugmentConfig::default();
    let a = augment_image(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(5));
    let b = augment_image(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn sampled_params_stay_in_bounds(seed in any::<u64>()) {
        let p = AugmentParams::sample(&AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(p.rotation_deg.abs() <= 15.0);
        prop_assert!((0.8..=1.2).contains(&p.brightness));
        prop_assert!((0.8..=1.2).contains(&p.contrast));
    }

    #[test]
    fn augmented_values_stay_in_unit_range(seed in any::<u64>()) {
        let img = gradient(1, 16, 16);
        let out = augment_image(&img, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
