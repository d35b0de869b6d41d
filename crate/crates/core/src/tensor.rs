//! A small reverse-mode differentiation engine over row-major 2-D `f64`
//! matrices.
//!
//! A [`Tape`] records every operation as a node; [`Tape::backward`] walks
//! the nodes in reverse and returns the gradient of a scalar output with
//! respect to each node. Trainable tensors live in a [`ParamStore`] and
//! enter a tape through [`Tape::param`], so a fresh tape can be built for
//! every training step while parameters and optimizer state persist.
//!
//! Edge-level graph computations are expressed with [`Tape::gather_rows`]
//! (entity row to edge row, scatter-add on backward) and the segment ops
//! [`Tape::segment_softmax`] / [`Tape::segment_sum`].

use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::Rng;
use rayon::prelude::*;

use crate::error::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Work size (multiply-adds) above which matmul splits rows across threads.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{:?}, ...]", &self.data[..16])
        }
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::Invalid {
                op: "from_vec",
                message: format!("{} values cannot fill a {rows}x{cols} matrix", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::Invalid {
                    op: "from_rows",
                    message: "rows of unequal length".into(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    /// Uniform Glorot initialization with fan-in `rows` and fan-out `cols`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        if m == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a = &self.data[i * k..(i + 1) * k];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b = &other.data[p * m..(p + 1) * m];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += av * bv;
                }
            }
        };
        if n * k * m >= PAR_THRESHOLD {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Assigns each edge row to a segment (the head entity it belongs to).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentIndex {
    ids: Vec<usize>,
    n_segments: usize,
}

impl SegmentIndex {
    pub fn new(ids: Vec<usize>, n_segments: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&s| s >= n_segments) {
            return Err(TensorError::Invalid {
                op: "segment_index",
                message: format!("segment id {bad} >= number of segments {n_segments}"),
            });
        }
        Ok(Self { ids, n_segments })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a trainable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<SegmentIndex>),
    SegmentSum(Var, Var, Arc<SegmentIndex>),
    L1Rows(Var, Var),
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input that is not backed by a parameter.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    /// Adds a `1 x cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let g = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddRow(a, bias), g))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        let g = self.needs(a);
        self.push(out, Op::Scale(a, k), g)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        let g = self.needs(a);
        self.push(out, Op::AddScalar(a), g)
    }

    /// Multiplies every element of `a` by the `1 x 1` tensor `s`.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "scale_by",
                left: self.value(s).shape(),
                right: self.value(a).shape(),
            });
        }
        let k = self.value(s).data[0];
        let out = self.value(a).map(|x| x * k);
        let g = self.needs(s) || self.needs(a);
        Ok(self.push(out, Op::ScaleBy(s, a), g))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let g = self.needs(a);
        self.push(out, Op::Relu(a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let g = self.needs(a);
        self.push(out, Op::Sigmoid(a), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat_cols",
            message: "no inputs".into(),
        })?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape(),
                    right: self.value(*p).shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let g = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), g))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                message: format!("range {start}..{end} out of bounds for {:?}", av.shape()),
            });
        }
        let mut out = Matrix::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        let g = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a, start), g))
    }

    /// `out[k] = a[index[k]]`; gradients scatter-add back.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= av.rows()) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                message: format!("row {bad} out of bounds for {:?}", av.shape()),
            });
        }
        let mut out = Matrix::zeros(index.len(), av.cols());
        for (k, &i) in index.iter().enumerate() {
            out.row_mut(k).copy_from_slice(av.row(i));
        }
        let g = self.needs(a);
        Ok(self.push(out, Op::GatherRows(a, index), g))
    }

    /// Softmax of each column of `scores` within each segment, stabilized
    /// by subtracting the per-segment maximum.
    pub fn segment_softmax(&mut self, scores: Var, seg: Arc<SegmentIndex>) -> Result<Var> {
        let sv = self.value(scores);
        if sv.rows() != seg.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: sv.shape(),
                right: (seg.len(), 1),
            });
        }
        let out = segment_softmax_values(sv, &seg);
        let g = self.needs(scores);
        Ok(self.push(out, Op::SegmentSoftmax(scores, seg), g))
    }

    /// `out[s] = sum over edges e in segment s of weights[e] * rows[e]`.
    pub fn segment_sum(&mut self, rows: Var, weights: Var, seg: Arc<SegmentIndex>) -> Result<Var> {
        let (rv, wv) = (self.value(rows), self.value(weights));
        if wv.cols() != 1 || wv.rows() != rv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: rv.shape(),
                right: wv.shape(),
            });
        }
        if seg.len() != rv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: rv.shape(),
                right: (seg.len(), 1),
            });
        }
        let mut out = Matrix::zeros(seg.n_segments(), rv.cols());
        for (e, &s) in seg.ids().iter().enumerate() {
            let w = wv.data[e];
            let src = rv.row(e);
            for (o, x) in out.row_mut(s).iter_mut().zip(src) {
                *o += w * x;
            }
        }
        let g = self.needs(rows) || self.needs(weights);
        Ok(self.push(out, Op::SegmentSum(rows, weights, seg), g))
    }

    /// Row-wise Manhattan distance, `n x 1`.
    pub fn l1_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("l1_rows", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = (0..av.rows())
            .map(|r| l1(av.row(r), bv.row(r)))
            .collect();
        let out = Matrix {
            rows: av.rows(),
            cols: 1,
            data,
        };
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::L1Rows(a, b), g))
    }

    /// Sum of all elements, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let g = self.needs(a);
        self.push(Matrix::scalar(s), Op::Sum(a), g)
    }

    /// Gradients of the `1 x 1` node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Grads> {
        if self.value(output).shape() != (1, 1) {
            return Err(TensorError::Invalid {
                op: "backward",
                message: format!("output must be 1x1, got {:?}", self.value(output).shape()),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn backprop(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut acc = |v: Var, d: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    acc(*a, g.matmul(&bv.transpose())?);
                }
                if self.needs(*b) {
                    acc(*b, av.transpose().matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, x) in db.data.iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                acc(*bias, db);
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ScaleBy(s, a) => {
                let k = self.value(*s).data[0];
                let ds: f64 = g.data.iter().zip(&self.value(*a).data).map(|(x, y)| x * y).sum();
                acc(*s, Matrix::scalar(ds));
                acc(*a, g.map(|x| x * k));
            }
            Op::Relu(a) => {
                acc(*a, g.zip_map(&node.value, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                acc(*a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y)));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    let mut d = Matrix::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    acc(*p, d);
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Matrix::zeros(g.rows(), self.value(*a).cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::GatherRows(a, index) => {
                let mut d = Matrix::zeros(self.value(*a).rows(), g.cols());
                for (k, &i) in index.iter().enumerate() {
                    for (o, x) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                acc(*a, d);
            }
            Op::SegmentSoftmax(a, seg) => {
                let y = &node.value;
                let cols = y.cols();
                let mut dot = vec![0.0; seg.n_segments() * cols];
                for (e, &s) in seg.ids().iter().enumerate() {
                    for c in 0..cols {
                        dot[s * cols + c] += y.get(e, c) * g.get(e, c);
                    }
                }
                let mut d = Matrix::zeros(y.rows(), cols);
                for (e, &s) in seg.ids().iter().enumerate() {
                    for c in 0..cols {
                        d.set(e, c, y.get(e, c) * (g.get(e, c) - dot[s * cols + c]));
                    }
                }
                acc(*a, d);
            }
            Op::SegmentSum(rows, weights, seg) => {
                let (rv, wv) = (self.value(*rows), self.value(*weights));
                if self.needs(*rows) {
                    let mut d = Matrix::zeros(rv.rows(), rv.cols());
                    for (e, &s) in seg.ids().iter().enumerate() {
                        let w = wv.data[e];
                        for (o, x) in d.row_mut(e).iter_mut().zip(g.row(s)) {
                            *o = w * x;
                        }
                    }
                    acc(*rows, d);
                }
                if self.needs(*weights) {
                    let data = seg
                        .ids()
                        .iter()
                        .enumerate()
                        .map(|(e, &s)| dot(rv.row(e), g.row(s)))
                        .collect();
                    acc(
                        *weights,
                        Matrix {
                            rows: rv.rows(),
                            cols: 1,
                            data,
                        },
                    );
                }
            }
            Op::L1Rows(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let gr = g.data[r];
                    for ((o, x), y) in d.row_mut(r).iter_mut().zip(av.row(r)).zip(bv.row(r)) {
                        *o = gr * sign(x - y);
                    }
                }
                acc(*b, d.map(|x| -x));
                acc(*a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.data[0]));
            }
        }
        Ok(())
    }

    /// Adds the gradients of every parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, grads: &Grads, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, &grads.grads[i]) {
                store.params[pid.0].grad.add_assign(g);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn segment_softmax_values(scores: &Matrix, seg: &SegmentIndex) -> Matrix {
    let cols = scores.cols();
    let n = seg.n_segments();
    let mut max = vec![f64::NEG_INFINITY; n * cols];
    for (e, &s) in seg.ids().iter().enumerate() {
        for c in 0..cols {
            let m = &mut max[s * cols + c];
            *m = m.max(scores.get(e, c));
        }
    }
    let mut out = Matrix::zeros(scores.rows(), cols);
    let mut denom = vec![0.0; n * cols];
    for (e, &s) in seg.ids().iter().enumerate() {
        for c in 0..cols {
            let v = (scores.get(e, c) - max[s * cols + c]).exp();
            out.set(e, c, v);
            denom[s * cols + c] += v;
        }
    }
    for (e, &s) in seg.ids().iter().enumerate() {
        for c in 0..cols {
            let v = out.get(e, c) / denom[s * cols + c];
            out.set(e, c, v);
        }
    }
    out
}

#[derive(Clone)]
struct Param {
    name: String,
    value: Matrix,
    grad: Matrix,
    m: Matrix,
    v: Matrix,
}

/// Named trainable tensors with gradient accumulators and Adam moments.
#[derive(Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Copies parameter values (not optimizer state) from `other`, which
    /// must hold the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(TensorError::Invalid {
                op: "copy_values_from",
                message: "parameter count differs".into(),
            });
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            check_same("copy_values_from", &dst.value, &src.value)?;
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// Snapshot of all values, used to keep the best checkpoint.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Matrix]) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
    }

    /// Serializes as `name\trows\tcols\tbase64(little-endian f64)` lines.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            let bytes: Vec<u8> = p.value.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                p.name,
                p.value.rows,
                p.value.cols,
                BASE64.encode(bytes)
            ));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<ParamStore> {
        let invalid = |message: String| TensorError::Invalid {
            op: "checkpoint",
            message,
        };
        let mut store = ParamStore::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(invalid(format!("line {}: expected 4 fields", i + 1)));
            }
            let rows: usize = f[1].parse().map_err(|_| invalid(format!("line {}: bad rows", i + 1)))?;
            let cols: usize = f[2].parse().map_err(|_| invalid(format!("line {}: bad cols", i + 1)))?;
            let bytes = BASE64
                .decode(f[3])
                .map_err(|e| invalid(format!("line {}: {e}", i + 1)))?;
            if bytes.len() != rows * cols * 8 {
                return Err(invalid(format!("line {}: payload size mismatch", i + 1)));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.add(f[0], Matrix::from_vec(rows, cols, data)?);
        }
        Ok(store)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in &mut store.params {
            for i in 0..p.value.data.len() {
                let g = p.grad.data[i];
                let m = self.beta1 * p.m.data[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.v.data[i] + (1.0 - self.beta2) * g * g;
                p.m.data[i] = m;
                p.v.data[i] = v;
                p.value.data[i] -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            }
        }
        store.zero_grads();
    }
}
