//! Record-on-forward computation tape with reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward rule. [`Tape::backward`] walks the nodes in exact
//! reverse creation order, so gradients of tensors used more than once
//! accumulate additively.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::tensor::{ParamKey, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norm floor used by row normalisation; hitting it bumps
/// [`Tape::clamped_norms`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-supplied backward rule for [`Tape::custom`].
pub trait CustomBackward<T>: Send {
    /// Returns one gradient buffer per input, given the inputs' values, the
    /// op output and the upstream gradient.
    fn backward(&self, inputs: &[&[T]], output: &[T], grad: &[T]) -> Vec<Vec<T>>;
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Elu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    SegmentSum(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    SoftmaxRows(Var),
    LogSumExpRows(Var, bool),
    Diag(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    BlockDot(Var, Var),
    BlockScale(Var, Var),
    NormalizeRows(Var, Vec<T>),
    CrossEntropy(Var, Vec<usize>),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    GlobalAvgPool(Var),
    Custom(Vec<Var>, Box<dyn CustomBackward<T>>),
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Piecewise-linear activity seen during a forward pass, used by the
/// gradient checker to avoid differencing across kinks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinkTrace {
    pub min_distance: f64,
    pub signature: u64,
}

impl Default for KinkTrace {
    fn default() -> Self {
        KinkTrace { min_distance: f64::INFINITY, signature: 0xcbf2_9ce4_8422_2325 }
    }
}

impl KinkTrace {
    fn mix(&mut self, word: u64) {
        self.signature ^= word;
        self.signature = self.signature.wrapping_mul(0x0100_0000_01b3);
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamKey, Var>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
    track_kinks: bool,
    kinks: KinkTrace,
    clamped_norms: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(op: &'static str, v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            backward_done: false,
            track_kinks: false,
            kinks: KinkTrace::default(),
            clamped_norms: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Enables recording of ReLU/LeakyReLU pre-activation margins and
    /// max-pool argmax choices.
    pub fn track_kinks(&mut self, on: bool) {
        self.track_kinks = on;
    }

    pub fn kinks(&self) -> KinkTrace {
        self.kinks
    }

    /// Number of rows whose norm was clamped to [`NORM_EPS`].
    pub fn clamped_norms(&self) -> usize {
        self.clamped_norms
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, value: Vec<T>, node_op: Op<T>, needs_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        check_finite(op, &value)?;
        if self.backward_done {
            return Err(Error::Backward("tape already differentiated; clear it before recording".into()));
        }
        self.nodes.push(Node { shape, value, op: node_op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    // ---- leaves ----------------------------------------------------------

    /// Records a constant (no gradient).
    pub fn constant(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.push("constant", t.shape().to_vec(), t.values().to_vec(), Op::Leaf, false)
    }

    pub fn constant_f64(&mut self, shape: &[usize], values: &[f64]) -> Result<Var> {
        let t = Tensor::<T>::from_f64(shape, values)?;
        self.constant(&t)
    }

    /// Records a leaf whose gradient is wanted but which is not tied to a
    /// parameter tensor (gradient checks, input sensitivities).
    pub fn input(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.push("input", t.shape().to_vec(), t.values().to_vec(), Op::Leaf, true)
    }

    /// Binds a trainable tensor. Binding the same tensor twice returns the
    /// same node, so shared weights accumulate into one gradient.
    pub fn param(&mut self, t: &Tensor<T>) -> Result<Var> {
        let Some(key) = t.key().filter(|_| t.requires_grad()) else {
            return self.constant(t);
        };
        if let Some(&v) = self.params.get(&key) {
            return Ok(v);
        }
        let v = self.push("param", t.shape().to_vec(), t.values().to_vec(), Op::Leaf, true)?;
        self.params.insert(key, v);
        Ok(v)
    }

    // ---- linear algebra --------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (j, n) = self.dims2("matmul", b)?;
        if k != j {
            return Err(Error::shape("matmul", format!("[{m}×{k}] × [{j}×{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", a)?;
        let out = kernels::transpose(self.value(a), m, n);
        let ng = self.needs(a);
        self.push("transpose", vec![n, m], out, Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let out = self.value(a).to_vec();
        let ng = self.needs(a);
        self.push("reshape", shape.to_vec(), out, Op::Reshape(a), ng)
    }

    // ---- elementwise -----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        self.push(op, shape, out, node, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[m×n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2("add_row", a)?;
        if self.value(bias).len() != n {
            return Err(Error::shape("add_row", format!("[{m}×{n}] + bias {:?}", self.shape(bias))));
        }
        let b = self.value(bias);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            add_into(row, b);
        }
        let ng = self.needs(a) || self.needs(bias);
        self.push("add_row", vec![m, n], out, Op::AddRow(a, bias), ng)
    }

    /// `a[m×n] * c[m×1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, n) = self.dims2("mul_col", a)?;
        if self.value(c).len() != m {
            return Err(Error::shape("mul_col", format!("[{m}×{n}] * column {:?}", self.shape(c))));
        }
        let cv = self.value(c);
        let mut out = self.value(a).to_vec();
        for (row, &s) in out.chunks_mut(n.max(1)).zip(cv) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.needs(a) || self.needs(c);
        self.push("mul_col", vec![m, n], out, Op::MulCol(a, c), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let ng = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push("scale", shape, out, Op::Scale(a, s), ng)
    }

    fn unary(&mut self, op: &'static str, a: Var, f: impl Fn(T) -> T, node: Op<T>) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(op, shape, out, node, ng)
    }

    fn record_kinks(&mut self, a: Var) {
        if !self.track_kinks {
            return;
        }
        let mut trace = self.kinks;
        let mut word = 0u64;
        for (i, &x) in self.nodes[a.0].value.iter().enumerate() {
            trace.min_distance = trace.min_distance.min(x.as_f64().abs());
            if x > T::zero() {
                word ^= (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            }
        }
        trace.mix(word ^ a.0 as u64);
        self.kinks = trace;
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record_kinks(a);
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        self.record_kinks(a);
        self.unary("leaky_relu", a, |x| if x > T::zero() { x } else { x * slope }, Op::LeakyRelu(a, slope))
    }

    /// ELU with `alpha = 1`.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary("elu", a, |x| if x > T::zero() { x } else { x.exp() - T::one() }, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "sigmoid",
            a,
            |x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(a),
        )
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| x <= T::zero()) {
            return Err(Error::invalid("log of a non-positive value"));
        }
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    // ---- structural ------------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_cols"));
        }
        let (m, _) = self.dims2("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2("concat_cols", p)?;
            if pm != m {
                return Err(Error::shape("concat_cols", format!("row counts {m} and {pm}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", vec![m, total], out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2("slice_cols", a)?;
        if start + len > n {
            return Err(Error::shape("slice_cols", format!("columns {start}..{} of {n}", start + len)));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + start..i * n + start + len]);
        }
        let ng = self.needs(a);
        self.push("slice_cols", vec![m, len], out, Op::SliceCols(a, start), ng)
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        let ng = self.needs(a);
        self.push("sum", vec![1], vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Empty("mean"));
        }
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    fn check_segments(&self, op: &'static str, a: Var, seg: &[usize], nseg: usize) -> Result<(usize, usize)> {
        let (m, n) = self.dims2(op, a)?;
        if seg.len() != m {
            return Err(Error::shape(op, format!("{} segment ids for {m} rows", seg.len())));
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= nseg) {
            return Err(Error::shape(op, format!("segment id {bad} out of range {nseg}")));
        }
        Ok((m, n))
    }

    pub fn segment_sum(&mut self, a: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let (_, n) = self.check_segments("segment_sum", a, seg, nseg)?;
        let mut out = vec![T::zero(); nseg * n];
        for (row, &s) in self.value(a).chunks(n.max(1)).zip(seg) {
            add_into(&mut out[s * n..(s + 1) * n], row);
        }
        let ng = self.needs(a);
        self.push("segment_sum", vec![nseg, n], out, Op::SegmentSum(a, seg.to_vec()), ng)
    }

    /// Row mean per segment; every segment must be non-empty.
    pub fn segment_mean(&mut self, a: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let (_, n) = self.check_segments("segment_mean", a, seg, nseg)?;
        let mut counts = vec![0usize; nseg];
        seg.iter().for_each(|&s| counts[s] += 1);
        if counts.contains(&0) {
            return Err(Error::Empty("segment_mean segment"));
        }
        let mut out = vec![T::zero(); nseg * n];
        for (row, &s) in self.value(a).chunks(n.max(1)).zip(seg) {
            add_into(&mut out[s * n..(s + 1) * n], row);
        }
        for (s, &c) in counts.iter().enumerate() {
            let inv = T::one() / T::lit(c as f64);
            out[s * n..(s + 1) * n].iter_mut().for_each(|x| *x *= inv);
        }
        let ng = self.needs(a);
        self.push("segment_mean", vec![nseg, n], out, Op::SegmentMean(a, seg.to_vec(), counts), ng)
    }

    pub fn segment_max(&mut self, a: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let (m, n) = self.check_segments("segment_max", a, seg, nseg)?;
        let mut arg = vec![usize::MAX; nseg * n];
        let v = self.value(a);
        for i in 0..m {
            let s = seg[i];
            for j in 0..n {
                let slot = &mut arg[s * n + j];
                if *slot == usize::MAX || v[i * n + j] > v[*slot * n + j] {
                    *slot = i;
                }
            }
        }
        if arg.contains(&usize::MAX) && n > 0 {
            return Err(Error::Empty("segment_max segment"));
        }
        let out = arg.iter().enumerate().map(|(p, &i)| v[i * n + p % n]).collect();
        if self.track_kinks {
            let mut trace = self.kinks;
            for (p, &i) in arg.iter().enumerate() {
                let j = p % n;
                for r in 0..m {
                    if r != i && seg[r] == seg[i] {
                        let gap = (v[i * n + j] - v[r * n + j]).as_f64();
                        trace.min_distance = trace.min_distance.min(gap);
                    }
                }
                trace.mix((p as u64) << 32 ^ i as u64);
            }
            self.kinks = trace;
        }
        let ng = self.needs(a);
        self.push("segment_max", vec![nseg, n], out, Op::SegmentMax(a, arg), ng)
    }

    // ---- normalisations --------------------------------------------------

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("softmax_rows", a)?;
        if n == 0 {
            return Err(Error::Empty("softmax_rows row"));
        }
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let ng = self.needs(a);
        self.push("softmax_rows", vec![m, n], out, Op::SoftmaxRows(a), ng)
    }

    /// Row-wise `log Σ_j exp(a_ij)` as an `[m×1]` column. With
    /// `exclude_diag` the diagonal entry of each row is left out of the sum.
    pub fn logsumexp_rows(&mut self, a: Var, exclude_diag: bool) -> Result<Var> {
        let (m, n) = self.dims2("logsumexp_rows", a)?;
        let effective = if exclude_diag && m > 0 { n.saturating_sub(1) } else { n };
        if effective == 0 {
            return Err(Error::Empty("logsumexp_rows row"));
        }
        if exclude_diag && m > n {
            return Err(Error::shape("logsumexp_rows", format!("diagonal exclusion on [{m}×{n}]")));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = &v[i * n..(i + 1) * n];
            let keep = |j: usize| !(exclude_diag && j == i);
            let mx = (0..n).filter(|&j| keep(j)).map(|j| row[j]).fold(T::neg_infinity(), T::max);
            let s: T = (0..n).filter(|&j| keep(j)).map(|j| (row[j] - mx).exp()).sum();
            out.push(mx + s.ln());
        }
        let ng = self.needs(a);
        self.push("logsumexp_rows", vec![m, 1], out, Op::LogSumExpRows(a, exclude_diag), ng)
    }

    /// Diagonal of a square matrix as an `[n×1]` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("diag", a)?;
        if m != n {
            return Err(Error::shape("diag", format!("non-square [{m}×{n}]")));
        }
        let out = (0..n).map(|i| self.value(a)[i * n + i]).collect();
        let ng = self.needs(a);
        self.push("diag", vec![n, 1], out, Op::Diag(a), ng)
    }

    /// Divides each row by its Euclidean norm, clamped below at [`NORM_EPS`].
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("normalize_rows", a)?;
        let eps = T::lit(NORM_EPS);
        let mut out = self.value(a).to_vec();
        let mut norms = Vec::with_capacity(m);
        let mut clamped = 0;
        for row in out.chunks_mut(n.max(1)) {
            let raw = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            let norm = if raw > eps {
                raw
            } else {
                clamped += 1;
                eps
            };
            row.iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        if clamped > 0 {
            self.clamped_norms += clamped;
            log::debug!("normalize_rows: clamped {clamped} near-zero row norm(s)");
        }
        let ng = self.needs(a);
        self.push("normalize_rows", vec![m, n], out, Op::NormalizeRows(a, norms), ng)
    }

    /// Pairwise cosine similarities `[m×p]` between rows of `a[m×d]` and `b[p×d]`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        let nbt = self.transpose(nb)?;
        self.matmul(na, nbt)
    }

    /// Cosine similarity of two vectors as a `[1]` scalar.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let du = self.value(u).len();
        let dv = self.value(v).len();
        if du != dv {
            return Err(Error::shape("cosine_similarity", format!("lengths {du} and {dv}")));
        }
        let u2 = self.reshape(u, &[1, du])?;
        let v2 = self.reshape(v, &[1, dv])?;
        let c = self.cosine_matrix(u2, v2)?;
        self.reshape(c, &[1])
    }

    /// Mean cross-entropy of `logits[m×c]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.dims2("cross_entropy", logits)?;
        if targets.len() != m || m == 0 {
            return Err(Error::shape("cross_entropy", format!("{} targets for {m} rows", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::shape("cross_entropy", format!("target class {t} with {c} logits")));
        }
        let v = self.value(logits);
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &v[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
            total += lse - row[t];
        }
        let loss = total / T::lit(m as f64);
        let ng = self.needs(logits);
        self.push("cross_entropy", vec![1], vec![loss], Op::CrossEntropy(logits, targets.to_vec()), ng)
    }

    // ---- sparse / graph --------------------------------------------------

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2("gather_rows", a)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {m}")));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&v[i * n..(i + 1) * n]);
        }
        let ng = self.needs(a);
        self.push("gather_rows", vec![idx.len(), n], out, Op::GatherRows(a, idx.to_vec()), ng)
    }

    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let (_, n) = self.check_segments("scatter_add_rows", a, idx, rows)?;
        let mut out = vec![T::zero(); rows * n];
        for (row, &i) in self.value(a).chunks(n.max(1)).zip(idx) {
            add_into(&mut out[i * n..(i + 1) * n], row);
        }
        let ng = self.needs(a);
        self.push("scatter_add_rows", vec![rows, n], out, Op::ScatterAddRows(a, idx.to_vec()), ng)
    }

    /// Softmax of each column of `a [E×n]` within the row groups given by
    /// `seg`.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let (m, n) = self.check_segments("segment_softmax", a, seg, nseg)?;
        let v = self.value(a);
        let mut mx = vec![T::neg_infinity(); nseg * n];
        for (row, &s) in v.chunks(n.max(1)).zip(seg) {
            for (j, &x) in row.iter().enumerate() {
                mx[s * n + j] = mx[s * n + j].max(x);
            }
        }
        let mut out = vec![T::zero(); m * n];
        let mut z = vec![T::zero(); nseg * n];
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..n {
                let e = (v[r * n + j] - mx[s * n + j]).exp();
                out[r * n + j] = e;
                z[s * n + j] += e;
            }
        }
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..n {
                out[r * n + j] /= z[s * n + j];
            }
        }
        let ng = self.needs(a);
        self.push("segment_softmax", vec![m, n], out, Op::SegmentSoftmax(a, seg.to_vec()), ng)
    }

    /// Per-block dot products: `a [m×(h·k)]` against `b [h·k]` gives
    /// `[m×h]` with `out[i, j] = Σ_t a[i, j·k + t] · b[j·k + t]`.
    pub fn block_dot(&mut self, a: Var, b: Var, blocks: usize) -> Result<Var> {
        let (m, n) = self.dims2("block_dot", a)?;
        if blocks == 0 || n % blocks != 0 || self.value(b).len() != n {
            return Err(Error::shape("block_dot", format!("{:?} against {:?} in {blocks} blocks", self.shape(a), self.shape(b))));
        }
        let k = n / blocks;
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * blocks];
        for i in 0..m {
            for j in 0..blocks {
                out[i * blocks + j] = (0..k).map(|t| av[i * n + j * k + t] * bv[j * k + t]).sum();
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push("block_dot", vec![m, blocks], out, Op::BlockDot(a, b), ng)
    }

    /// Scales each `k`-wide column block of `a [m×(h·k)]` by the matching
    /// column of `s [m×h]`.
    pub fn block_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (m, n) = self.dims2("block_scale", a)?;
        let (ms, h) = self.dims2("block_scale", s)?;
        if ms != m || h == 0 || n % h != 0 {
            return Err(Error::shape("block_scale", format!("{:?} by {:?}", self.shape(a), self.shape(s))));
        }
        let k = n / h;
        let (av, sv) = (self.value(a), self.value(s));
        let out = (0..m * n).map(|p| av[p] * sv[(p / n) * h + (p % n) / k]).collect();
        let ng = self.needs(a) || self.needs(s);
        self.push("block_scale", vec![m, n], out, Op::BlockScale(a, s), ng)
    }

    // ---- convolution -----------------------------------------------------

    /// 2-D convolution: `x[N×C×H×W]`, `w[Co×C×k×k]`, `b[Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = match self.shape(x) {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return Err(Error::shape("conv2d", format!("input must be N×C×H×W, got {s:?}"))),
        };
        let (co, k) = match self.shape(w) {
            [co, ci, k1, k2] if *ci == c && k1 == k2 => (*co, *k1),
            s => return Err(Error::shape("conv2d", format!("kernel {s:?} for input {:?}", self.shape(x)))),
        };
        if self.value(b).len() != co {
            return Err(Error::shape("conv2d", format!("bias {:?} for {co} filters", self.shape(b))));
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", format!("kernel {k} stride {stride} on {h}×{wd}")));
        }
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: k, stride, pad };
        let (oh, ow) = geom.out_hw();
        let npos = oh * ow;
        let rows = geom.col_rows();
        let mut cols = vec![T::zero(); rows * npos];
        let mut out = vec![T::zero(); n * co * npos];
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        for i in 0..n {
            kernels::im2col(&xv[i * c * h * wd..(i + 1) * c * h * wd], &geom, &mut cols);
            let dst = &mut out[i * co * npos..(i + 1) * co * npos];
            for (o, plane) in dst.chunks_mut(npos).enumerate() {
                plane.iter_mut().for_each(|v| *v = bv[o]);
            }
            kernels::matmul_acc(wv, &cols, dst, co, rows, npos);
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push("conv2d", vec![n, co, oh, ow], out, Op::Conv2d { x, w, b, geom }, ng)
    }

    /// Spatial mean: `[N×C×H×W] -> [N×C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, hw) = match self.shape(x) {
            [n, c, h, w] => (*n, *c, h * w),
            s => return Err(Error::shape("global_avg_pool", format!("expected N×C×H×W, got {s:?}"))),
        };
        if hw == 0 {
            return Err(Error::Empty("global_avg_pool"));
        }
        let inv = T::one() / T::lit(hw as f64);
        let out = self.value(x).chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let ng = self.needs(x);
        self.push("global_avg_pool", vec![n, c], out, Op::GlobalAvgPool(x), ng)
    }

    /// Records an op with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], shape: &[usize], value: Vec<T>, rule: Box<dyn CustomBackward<T>>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::shape("custom", format!("shape {shape:?} with {} values", value.len())));
        }
        let ng = inputs.iter().any(|&v| self.needs(v));
        self.push("custom", shape.to_vec(), value, Op::Custom(inputs.to_vec(), rule), ng)
    }

    // ---- backward --------------------------------------------------------

    /// Propagates gradients from a scalar `loss` to every reachable node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward("backward already ran on this tape; call clear_grads first".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Backward(format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape)));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.backprop_node(i, &g);
            }
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    /// Forgets computed gradients so [`Tape::backward`] may run again.
    pub fn clear_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient of `v` after [`Tape::backward`]; zeros for unreached nodes.
    pub fn grad(&self, v: Var) -> Option<Vec<T>> {
        if !self.backward_done {
            return None;
        }
        Some(match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.nodes[v.0].value.len()],
        })
    }

    /// Accumulates gradients into every parameter that was bound on this tape.
    pub fn write_grads<'a, I>(&self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Tensor<T>>,
    {
        if !self.backward_done {
            return Err(Error::Backward("write_grads before backward".into()));
        }
        for p in params {
            if let Some(&v) = p.key().and_then(|k| self.params.get(&k)) {
                let g = self.grad(v).expect("backward done");
                p.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => add_into(g, &contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn acc_with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        // Temporarily move the op out so that node values can be borrowed.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_nt_acc(g, &self.nodes[b.0].value, &mut da, m, n, k);
                    self.acc(*a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_tn_acc(&self.nodes[a.0].value, g, &mut db, k, m, n);
                    self.acc(*b, db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                self.acc(*a, kernels::transpose(g, n, m));
            }
            Op::Reshape(a) => self.acc(*a, g.to_vec()),
            Op::Add(a, b) => {
                self.acc(*a, g.to_vec());
                self.acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(*a, g.to_vec());
                self.acc(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let da = g.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| x * y).collect();
                let db = g.iter().zip(&self.nodes[a.0].value).map(|(&x, &y)| x * y).collect();
                self.acc(*a, da);
                self.acc(*b, db);
            }
            Op::AddRow(a, bias) => {
                self.acc(*a, g.to_vec());
                let n = self.nodes[bias.0].value.len();
                let mut db = vec![T::zero(); n];
                for row in g.chunks(n.max(1)) {
                    add_into(&mut db, row);
                }
                self.acc(*bias, db);
            }
            Op::MulCol(a, c) => {
                let n = self.nodes[a.0].shape[1];
                let cv = &self.nodes[c.0].value;
                let av = &self.nodes[a.0].value;
                let mut da = g.to_vec();
                let mut dc = vec![T::zero(); cv.len()];
                for (r, (row, &s)) in da.chunks_mut(n.max(1)).zip(cv).enumerate() {
                    let mut acc = T::zero();
                    for (j, x) in row.iter_mut().enumerate() {
                        acc += *x * av[r * n + j];
                        *x *= s;
                    }
                    dc[r] = acc;
                }
                self.acc(*a, da);
                self.acc(*c, dc);
            }
            Op::Scale(a, s) => self.acc(*a, g.iter().map(|&x| x * *s).collect()),
            Op::Relu(a) => {
                let d = g.iter().zip(&self.nodes[a.0].value).map(|(&x, &v)| if v > T::zero() { x } else { T::zero() }).collect();
                self.acc(*a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = g.iter().zip(&self.nodes[a.0].value).map(|(&x, &v)| if v > T::zero() { x } else { x * *slope }).collect();
                self.acc(*a, d);
            }
            Op::Elu(a) => {
                let y = &self.nodes[i].value;
                let d = g
                    .iter()
                    .zip(&self.nodes[a.0].value)
                    .zip(y)
                    .map(|((&x, &v), &yv)| if v > T::zero() { x } else { x * (yv + T::one()) })
                    .collect();
                self.acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.iter().zip(&self.nodes[i].value).map(|(&x, &y)| x * y * (T::one() - y)).collect();
                self.acc(*a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(&self.nodes[i].value).map(|(&x, &y)| x * y).collect();
                self.acc(*a, d);
            }
            Op::Log(a) => {
                let d = g.iter().zip(&self.nodes[a.0].value).map(|(&x, &v)| x / v).collect();
                self.acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let m = self.nodes[i].shape[0];
                let total = self.nodes[i].shape[1];
                let mut off = 0;
                for &p in parts {
                    let w = self.nodes[p.0].shape[1];
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for r in 0..m {
                            d.extend_from_slice(&g[r * total + off..r * total + off + w]);
                        }
                        self.acc(p, d);
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let len = self.nodes[i].shape[1];
                let start = *start;
                self.acc_with(*a, |d| {
                    for r in 0..m {
                        add_into(&mut d[r * n + start..r * n + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                self.acc(*a, vec![g[0]; n]);
            }
            Op::SegmentSum(a, seg) => {
                let n = self.nodes[a.0].shape[1];
                let mut d = Vec::with_capacity(seg.len() * n);
                for &s in seg {
                    d.extend_from_slice(&g[s * n..(s + 1) * n]);
                }
                self.acc(*a, d);
            }
            Op::SegmentMean(a, seg, counts) => {
                let n = self.nodes[a.0].shape[1];
                let mut d = Vec::with_capacity(seg.len() * n);
                for &s in seg {
                    let inv = T::one() / T::lit(counts[s] as f64);
                    d.extend(g[s * n..(s + 1) * n].iter().map(|&x| x * inv));
                }
                self.acc(*a, d);
            }
            Op::SegmentMax(a, arg) => {
                let n = self.nodes[a.0].shape[1];
                let arg = arg.clone();
                self.acc_with(*a, |d| {
                    for (p, &r) in arg.iter().enumerate() {
                        d[r * n + p % n] += g[p];
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = self.nodes[i].shape[1];
                let y = &self.nodes[i].value;
                let mut d = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.acc(*a, d);
            }
            Op::LogSumExpRows(a, exclude) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let v = &self.nodes[a.0].value;
                let lse = &self.nodes[i].value;
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    for j in 0..n {
                        if *exclude && j == r {
                            continue;
                        }
                        d[r * n + j] = g[r] * (v[r * n + j] - lse[r]).exp();
                    }
                }
                self.acc(*a, d);
            }
            Op::Diag(a) => {
                let n = self.nodes[i].shape[0];
                self.acc_with(*a, |d| {
                    for r in 0..n {
                        d[r * n + r] += g[r];
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let n = self.nodes[a.0].shape[1];
                let idx = idx.clone();
                self.acc_with(*a, |d| {
                    for (e, &r) in idx.iter().enumerate() {
                        add_into(&mut d[r * n..(r + 1) * n], &g[e * n..(e + 1) * n]);
                    }
                });
            }
            Op::ScatterAddRows(a, idx) => {
                let n = self.nodes[a.0].shape[1];
                let mut d = Vec::with_capacity(idx.len() * n);
                for &r in idx {
                    d.extend_from_slice(&g[r * n..(r + 1) * n]);
                }
                self.acc(*a, d);
            }
            Op::SegmentSoftmax(a, seg) => {
                let y = &self.nodes[i].value;
                let n = self.nodes[i].shape[1];
                let nseg = seg.iter().copied().max().map_or(0, |s| s + 1);
                let mut dot = vec![T::zero(); nseg * n];
                for (r, &s) in seg.iter().enumerate() {
                    for j in 0..n {
                        dot[s * n + j] += y[r * n + j] * g[r * n + j];
                    }
                }
                let d = (0..y.len()).map(|p| y[p] * (g[p] - dot[seg[p / n.max(1)] * n + p % n])).collect();
                self.acc(*a, d);
            }
            Op::BlockDot(a, b) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let h = self.nodes[i].shape[1];
                let k = n / h;
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let mut da = vec![T::zero(); m * n];
                let mut db = vec![T::zero(); n];
                for r in 0..m {
                    for c in 0..n {
                        let gv = g[r * h + c / k];
                        da[r * n + c] = gv * bv[c];
                        db[c] += gv * av[r * n + c];
                    }
                }
                self.acc(*a, da);
                self.acc(*b, db);
            }
            Op::BlockScale(a, s) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let h = self.nodes[s.0].shape[1];
                let k = n / h;
                let (av, sv) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
                let mut da = vec![T::zero(); m * n];
                let mut ds = vec![T::zero(); m * h];
                for r in 0..m {
                    for c in 0..n {
                        da[r * n + c] = g[r * n + c] * sv[r * h + c / k];
                        ds[r * h + c / k] += g[r * n + c] * av[r * n + c];
                    }
                }
                self.acc(*a, da);
                self.acc(*s, ds);
            }
            Op::NormalizeRows(a, norms) => {
                let n = self.nodes[a.0].shape[1];
                let y = &self.nodes[i].value;
                let eps = T::lit(NORM_EPS);
                let mut d = vec![T::zero(); y.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dr = &mut d[r * n..(r + 1) * n];
                    if norm > eps {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *dv = (gv - yv * dot) / norm;
                        }
                    } else {
                        for (dv, &gv) in dr.iter_mut().zip(gr) {
                            *dv = gv / norm;
                        }
                    }
                }
                self.acc(*a, d);
            }
            Op::CrossEntropy(a, targets) => {
                let (m, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let v = &self.nodes[a.0].value;
                let scale = g[0] / T::lit(m as f64);
                let mut d = vec![T::zero(); m * c];
                for (r, &t) in targets.iter().enumerate() {
                    let row = &v[r * c..(r + 1) * c];
                    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let z: T = row.iter().map(|&x| (x - mx).exp()).sum();
                    for j in 0..c {
                        let p = (row[j] - mx).exp() / z;
                        let y = if j == t { T::one() } else { T::zero() };
                        d[r * c + j] = (p - y) * scale;
                    }
                }
                self.acc(*a, d);
            }
            Op::Conv2d { x, w, b, geom } => self.conv2d_backward(i, *x, *w, *b, geom, g),
            Op::GlobalAvgPool(x) => {
                let hw = self.nodes[x.0].shape[2] * self.nodes[x.0].shape[3];
                let inv = T::one() / T::lit(hw as f64);
                let mut d = Vec::with_capacity(g.len() * hw);
                for &gv in g {
                    d.extend(std::iter::repeat_n(gv * inv, hw));
                }
                self.acc(*x, d);
            }
            Op::Custom(inputs, rule) => {
                let vals: Vec<&[T]> = inputs.iter().map(|v| self.nodes[v.0].value.as_slice()).collect();
                let ds = rule.backward(&vals, &self.nodes[i].value, g);
                for (&v, d) in inputs.iter().zip(ds) {
                    self.acc(v, d);
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn conv2d_backward(&mut self, i: usize, x: Var, w: Var, b: Var, geom: &ConvGeom, g: &[T]) {
        let n = self.nodes[x.0].shape[0];
        let co = self.nodes[w.0].shape[0];
        let (oh, ow) = geom.out_hw();
        let npos = oh * ow;
        let rows = geom.col_rows();
        let img = geom.channels * geom.height * geom.width;
        debug_assert_eq!(g.len(), self.nodes[i].value.len());

        if self.needs(b) {
            let mut db = vec![T::zero(); co];
            for gi in g.chunks(co * npos) {
                for (o, plane) in gi.chunks(npos).enumerate() {
                    db[o] += plane.iter().copied().sum::<T>();
                }
            }
            self.acc(b, db);
        }
        let need_w = self.needs(w);
        let need_x = self.needs(x);
        if !need_w && !need_x {
            return;
        }
        let mut dw = vec![T::zero(); co * rows];
        let mut dx = if need_x { vec![T::zero(); n * img] } else { Vec::new() };
        let mut cols = vec![T::zero(); rows * npos];
        let mut dcols = vec![T::zero(); rows * npos];
        for s in 0..n {
            let gs = &g[s * co * npos..(s + 1) * co * npos];
            if need_w {
                kernels::im2col(&self.nodes[x.0].value[s * img..(s + 1) * img], geom, &mut cols);
                kernels::matmul_nt_acc(gs, &cols, &mut dw, co, npos, rows);
            }
            if need_x {
                dcols.iter_mut().for_each(|v| *v = T::zero());
                kernels::matmul_tn_acc(&self.nodes[w.0].value, gs, &mut dcols, rows, co, npos);
                kernels::col2im_acc(&dcols, geom, &mut dx[s * img..(s + 1) * img]);
            }
        }
        if need_w {
            self.acc(w, dw);
        }
        if need_x {
            self.acc(x, dx);
        }
    }
}
