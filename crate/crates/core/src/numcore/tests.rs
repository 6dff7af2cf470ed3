use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let i = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let c = tape.matmul(a, i).unwrap();
    assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);

    let r = tape.constant(&t(&[1, 2], &[1.0, 2.0])).unwrap();
    let col = tape.constant(&t(&[2, 1], &[3.0, 4.0])).unwrap();
    let d = tape.matmul(r, col).unwrap();
    assert_eq!(tape.value(d), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(&Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(&Tensor::zeros(&[2, 4])).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(msg.contains("[2×3]") && msg.contains("[2×4]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&t(&[3, 2], &[0.0, 0.0, 2f64.ln(), 0.0, 1000.0, 1000.0])).unwrap();
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y);
    assert_eq!(&v[0..2], &[0.5, 0.5]);
    assert!((v[2] - 2.0 / 3.0).abs() < 1e-15);
    assert!((v[3] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(&v[4..6], &[0.5, 0.5]);

    let empty = tape.constant(&Tensor::zeros(&[2, 0])).unwrap();
    assert!(tape.softmax_rows(empty).is_err());
}

#[test]
fn cosine_examples() {
    let mut tape = Tape::<f64>::new();
    let e1 = tape.constant(&t(&[2], &[1.0, 0.0])).unwrap();
    let e2 = tape.constant(&t(&[2], &[0.0, 1.0])).unwrap();
    let ones = tape.constant(&t(&[2], &[1.0, 1.0])).unwrap();
    let a = tape.cosine_similarity(e1, e1).unwrap();
    let b = tape.cosine_similarity(e1, e2).unwrap();
    let c = tape.cosine_similarity(ones, e1).unwrap();
    assert_eq!(tape.scalar_value(a), 1.0);
    assert_eq!(tape.scalar_value(b), 0.0);
    assert!((tape.scalar_value(c) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
}

#[test]
fn zero_vector_cosine_is_clamped_and_counted() {
    let mut tape = Tape::<f64>::new();
    let z = tape.input(&t(&[3], &[0.0, 0.0, 0.0])).unwrap();
    let e = tape.constant(&t(&[3], &[1.0, 0.0, 0.0])).unwrap();
    let c = tape.cosine_similarity(z, e).unwrap();
    assert_eq!(tape.scalar_value(c), 0.0);
    assert_eq!(tape.clamped_norms(), 1);
    tape.backward(c).unwrap();
    assert!(tape.grad(z).unwrap().iter().all(|g| g.is_finite()));
}

#[test]
fn backward_square_sum() {
    let mut x = Tensor::param("x", &[2], vec![1.0, 2.0]).unwrap();
    let mut tape = Tape::new();
    let v = tape.param(&x).unwrap();
    let sq = tape.mul(v, v).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    tape.write_grads([&mut x]).unwrap();
    assert_eq!(x.grad().unwrap(), &[2.0, 4.0]);
}

#[test]
fn constant_only_graph_gives_zero_grads() {
    let mut w = Tensor::param("w", &[2], vec![1.0, 2.0]).unwrap();
    let mut tape = Tape::new();
    let _bound = tape.param(&w).unwrap();
    let c = tape.constant(&t(&[2], &[3.0, 4.0])).unwrap();
    let loss = tape.sum(c).unwrap();
    tape.backward(loss).unwrap();
    tape.write_grads([&mut w]).unwrap();
    assert_eq!(w.grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_and_double_call() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(&t(&[2], &[1.0, 2.0])).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Backward(_))));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(Error::Backward(_))));
    tape.clear_grads();
    tape.backward(s).unwrap();
}

#[test]
fn overflow_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&t(&[1], &[1000.0])).unwrap();
    assert!(matches!(tape.exp(x), Err(Error::NonFinite("exp"))));
}

/// Hand-rolled forward of a 2-layer tanh-free MLP used as an independent
/// finite-difference oracle (no tape involved).
fn mlp_loss_plain(x: &[f64], w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], dims: (usize, usize, usize, usize)) -> f64 {
    let (n, d, h, o) = dims;
    let mut total = 0.0;
    for r in 0..n {
        let mut hid = vec![0.0; h];
        for j in 0..h {
            let mut s = b1[j];
            for k in 0..d {
                s += x[r * d + k] * w1[k * h + j];
            }
            hid[j] = 1.0 / (1.0 + (-s).exp());
        }
        for j in 0..o {
            let mut s = b2[j];
            for k in 0..h {
                s += hid[k] * w2[k * o + j];
            }
            total += s * s;
        }
    }
    total
}

#[test]
fn two_layer_mlp_matches_plain_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = (4, 3, 5, 2);
    let x = rand_tensor(&mut rng, &[4, 3]);
    let mut params = [
        rand_tensor(&mut rng, &[3, 5]),
        rand_tensor(&mut rng, &[5]),
        rand_tensor(&mut rng, &[5, 2]),
        rand_tensor(&mut rng, &[2]),
    ];
    let mut tape = Tape::new();
    let xv = tape.constant(&x).unwrap();
    let pv: Vec<Var> = params.iter().map(|p| tape.input(p).unwrap()).collect();
    let h = tape.matmul(xv, pv[0]).unwrap();
    let h = tape.add_row(h, pv[1]).unwrap();
    let h = tape.sigmoid(h).unwrap();
    let o = tape.matmul(h, pv[2]).unwrap();
    let o = tape.add_row(o, pv[3]).unwrap();
    let sq = tape.mul(o, o).unwrap();
    let loss = tape.sum(sq).unwrap();
    let plain = |ps: &[Tensor<f64>]| {
        mlp_loss_plain(x.values(), ps[0].values(), ps[1].values(), ps[2].values(), ps[3].values(), dims)
    };
    assert!((tape.scalar_value(loss) - plain(&params)).abs() < 1e-12);
    tape.backward(loss).unwrap();
    let step = 1e-5;
    for pi in 0..params.len() {
        let auto = tape.grad(pv[pi]).unwrap();
        for ci in 0..params[pi].len() {
            let orig = params[pi].values()[ci];
            params[pi].values_mut()[ci] = orig + step;
            let fp = plain(&params);
            params[pi].values_mut()[ci] = orig - step;
            let fm = plain(&params);
            params[pi].values_mut()[ci] = orig;
            let num = (fp - fm) / (2.0 * step);
            let rel = (num - auto[ci]).abs() / num.abs().max(auto[ci].abs()).max(1e-3);
            assert!(rel < 1e-4, "param {pi}[{ci}]: {} vs {num}", auto[ci]);
        }
    }
}

type OpBuilder = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Every differentiable kernel, reduced to a scalar by a fixed random
/// weighting so that gradients are not symmetric.
fn kernel_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpBuilder)> {
    fn weigh(t: &mut Tape<f64>, v: Var) -> Result<Var> {
        let n = t.value(v).len();
        let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.7 + 0.3).sin()).collect();
        let wv = t.constant_f64(t.shape(v).to_vec().as_slice(), &w)?;
        let p = t.mul(v, wv)?;
        t.sum(p)
    }
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| { let y = t.matmul(v[0], v[1])?; weigh(t, y) }),
        ("transpose", vec![vec![3, 2]], |t, v| { let y = t.transpose(v[0])?; weigh(t, y) }),
        ("add", vec![vec![2, 3], vec![2, 3]], |t, v| { let y = t.add(v[0], v[1])?; weigh(t, y) }),
        ("sub", vec![vec![2, 3], vec![2, 3]], |t, v| { let y = t.sub(v[0], v[1])?; weigh(t, y) }),
        ("mul", vec![vec![2, 3], vec![2, 3]], |t, v| { let y = t.mul(v[0], v[1])?; weigh(t, y) }),
        ("add_row", vec![vec![3, 2], vec![2]], |t, v| { let y = t.add_row(v[0], v[1])?; weigh(t, y) }),
        ("mul_col", vec![vec![3, 2], vec![3, 1]], |t, v| { let y = t.mul_col(v[0], v[1])?; weigh(t, y) }),
        ("scale", vec![vec![4]], |t, v| { let y = t.scale(v[0], -2.5)?; weigh(t, y) }),
        ("relu", vec![vec![6]], |t, v| { let y = t.relu(v[0])?; weigh(t, y) }),
        ("leaky_relu", vec![vec![6]], |t, v| { let y = t.leaky_relu(v[0], 0.2)?; weigh(t, y) }),
        ("elu", vec![vec![6]], |t, v| { let y = t.elu(v[0])?; weigh(t, y) }),
        ("sigmoid", vec![vec![6]], |t, v| { let y = t.sigmoid(v[0])?; weigh(t, y) }),
        ("exp", vec![vec![6]], |t, v| { let y = t.exp(v[0])?; weigh(t, y) }),
        ("log", vec![vec![6]], |t, v| { let e = t.exp(v[0])?; let y = t.log(e)?; let y = t.mul(y, y)?; weigh(t, y) }),
        ("concat_cols", vec![vec![2, 2], vec![2, 3]], |t, v| { let y = t.concat_cols(&[v[0], v[1]])?; weigh(t, y) }),
        ("slice_cols", vec![vec![3, 4]], |t, v| { let y = t.slice_cols(v[0], 1, 2)?; weigh(t, y) }),
        ("mean", vec![vec![2, 3]], |t, v| { let y = t.mul(v[0], v[0])?; t.mean(y) }),
        ("segment_sum", vec![vec![5, 2]], |t, v| { let y = t.segment_sum(v[0], &[0, 1, 0, 2, 1], 3)?; weigh(t, y) }),
        ("segment_mean", vec![vec![5, 2]], |t, v| { let y = t.segment_mean(v[0], &[0, 1, 0, 2, 1], 3)?; weigh(t, y) }),
        ("segment_max", vec![vec![5, 2]], |t, v| { let y = t.segment_max(v[0], &[0, 1, 0, 2, 1], 3)?; weigh(t, y) }),
        ("softmax_rows", vec![vec![3, 4]], |t, v| { let y = t.softmax_rows(v[0])?; weigh(t, y) }),
        ("logsumexp_rows", vec![vec![3, 4]], |t, v| { let y = t.logsumexp_rows(v[0], false)?; weigh(t, y) }),
        ("logsumexp_rows_offdiag", vec![vec![3, 3]], |t, v| { let y = t.logsumexp_rows(v[0], true)?; weigh(t, y) }),
        ("diag", vec![vec![3, 3]], |t, v| { let y = t.diag(v[0])?; weigh(t, y) }),
        ("gather_rows", vec![vec![3, 2]], |t, v| { let y = t.gather_rows(v[0], &[2, 0, 2, 1])?; weigh(t, y) }),
        ("scatter_add_rows", vec![vec![4, 2]], |t, v| { let y = t.scatter_add_rows(v[0], &[1, 0, 1, 2], 3)?; weigh(t, y) }),
        ("segment_softmax", vec![vec![5, 1]], |t, v| { let y = t.segment_softmax(v[0], &[0, 0, 1, 1, 1], 2)?; weigh(t, y) }),
        ("segment_softmax_cols", vec![vec![5, 3]], |t, v| { let y = t.segment_softmax(v[0], &[1, 0, 1, 0, 1], 2)?; weigh(t, y) }),
        ("block_dot", vec![vec![3, 6], vec![6]], |t, v| { let y = t.block_dot(v[0], v[1], 2)?; weigh(t, y) }),
        ("block_scale", vec![vec![3, 6], vec![3, 3]], |t, v| { let y = t.block_scale(v[0], v[1])?; weigh(t, y) }),
        ("normalize_rows", vec![vec![3, 4]], |t, v| { let y = t.normalize_rows(v[0])?; weigh(t, y) }),
        ("cosine_matrix", vec![vec![3, 4], vec![2, 4]], |t, v| { let y = t.cosine_matrix(v[0], v[1])?; weigh(t, y) }),
        ("cross_entropy", vec![vec![4, 3]], |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2])),
        ("conv2d", vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3], vec![3]], |t, v| { let y = t.conv2d(v[0], v[1], v[2], 2, 1)?; weigh(t, y) }),
        ("global_avg_pool", vec![vec![2, 3, 2, 2]], |t, v| { let y = t.global_avg_pool(v[0])?; weigh(t, y) }),
    ]
}

#[test]
fn every_kernel_passes_grad_check_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (name, shapes, op) in kernel_cases() {
        for instance in 0..5 {
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
            let r = grad_check(op, &inputs, 1e-4);
            assert!(r.passed, "{name} instance {instance}: {r:?}");
        }
    }
}

#[test]
fn linear_softmax_cross_entropy_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[3, 5]), rand_tensor(&mut rng, &[5])];
    let r = grad_check(
        |t, v| {
            let z = t.matmul(v[0], v[1])?;
            let z = t.add_row(z, v[2])?;
            let p = t.softmax_rows(z)?;
            let lp = t.log(p)?;
            let picked = t.constant_f64(&[4, 5], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0])?;
            let s = t.mul(lp, picked)?;
            let s = t.sum(s)?;
            t.scale(s, -0.25)
        },
        &inputs,
        1e-4,
    );
    assert!(r.passed, "{r:?}");
}

#[test]
fn gradients_accumulate_across_uses() {
    let x = t(&[3], &[0.2, -0.4, 0.9]);
    let grad_of = |twice: bool| {
        let mut tape = Tape::new();
        let v = tape.input(&x).unwrap();
        let f = |tape: &mut Tape<f64>| {
            let e = tape.sigmoid(v).unwrap();
            let e = tape.mul(e, v).unwrap();
            tape.sum(e).unwrap()
        };
        let a = f(&mut tape);
        let loss = if twice {
            let b = f(&mut tape);
            tape.add(a, b).unwrap()
        } else {
            a
        };
        tape.backward(loss).unwrap();
        tape.grad(v).unwrap()
    };
    let once = grad_of(false);
    let twice = grad_of(true);
    for (a, b) in once.iter().zip(&twice) {
        assert!((2.0 * a - b).abs() < 1e-15);
    }
}

#[test]
fn ops_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = rand_tensor(&mut rng, &[6, 5]);
        let b = rand_tensor(&mut rng, &[5, 4]);
        let mut tape = Tape::new();
        let av = tape.input(&a).unwrap();
        let bv = tape.input(&b).unwrap();
        let c = tape.matmul(av, bv).unwrap();
        let s = tape.softmax_rows(c).unwrap();
        let l = tape.sum(s).unwrap();
        let l = tape.mul(l, l).unwrap();
        tape.backward(l).unwrap();
        let mut bits: Vec<u64> = tape.value(s).iter().map(|x| x.to_bits()).collect();
        bits.extend(tape.grad(av).unwrap().iter().map(|x| x.to_bits()));
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn generic_over_f32() {
    let mut tape = Tape::<f32>::new();
    let x = tape.input(&Tensor::new(&[2], vec![1.0f32, 2.0]).unwrap()).unwrap();
    let s = tape.mul(x, x).unwrap();
    let l = tape.sum(s).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), vec![2.0f32, 4.0]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_are_shift_invariant(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..8), 1..5),
        shift in -100.0f64..100.0,
    ) {
        let n = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(n, 0.0); r }).collect();
        let m = rows.len();
        let flat: Vec<f64> = rows.concat();
        let shifted: Vec<f64> = flat.iter().map(|x| x + shift).collect();
        let mut tape = Tape::<f64>::new();
        let a = tape.constant_f64(&[m, n], &flat).unwrap();
        let b = tape.constant_f64(&[m, n], &shifted).unwrap();
        let sa = tape.softmax_rows(a).unwrap();
        let sb = tape.softmax_rows(b).unwrap();
        for r in 0..m {
            let s: f64 = tape.value(sa)[r * n..(r + 1) * n].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        for (x, y) in tape.value(sa).iter().zip(tape.value(sb)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
