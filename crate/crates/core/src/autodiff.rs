//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves may borrow
//! their values so parameter matrices are not copied on each pass.
//! [`Tape::backward`] then walks the records in reverse and accumulates
//! adjoints for every node that depends on a leaf created with
//! [`Tape::param`].

use std::borrow::Cow;

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape {rows}x{cols} does not match data");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(1, 1, vec![value])
    }

    pub fn column(data: Vec<f64>) -> Self {
        Self::new(data.len(), 1, data)
    }

    pub fn row(data: Vec<f64>) -> Self {
        Self::new(1, data.len(), data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a (r x k) * b (k x c)`.
fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul {}x{} by {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let row = &mut out[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let x = a.data[i * a.cols + k];
            if x == 0.0 {
                continue;
            }
            for (o, w) in row.iter_mut().zip(b.row_slice(k)) {
                *o += x * w;
            }
        }
    }
    Tensor::new(a.rows, b.cols, out)
}

/// `a^T (k x r) * g (r x c)`.
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let mut out = vec![0.0; a.cols * g.cols];
    for i in 0..a.rows {
        let grow = g.row_slice(i);
        for k in 0..a.cols {
            let x = a.data[i * a.cols + k];
            if x == 0.0 {
                continue;
            }
            let orow = &mut out[k * g.cols..(k + 1) * g.cols];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += x * gv;
            }
        }
    }
    Tensor::new(a.cols, g.cols, out)
}

/// `g (r x c) * b^T (c x k)`.
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.rows * b.rows];
    for i in 0..g.rows {
        let grow = g.row_slice(i);
        for k in 0..b.rows {
            out[i * b.rows + k] = grow.iter().zip(b.row_slice(k)).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(g.rows, b.rows, out)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Elu(Var),
    Relu(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    Square(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ScaleRows(Var, Var),
    SegmentSoftmax(Var, Vec<usize>),
    LogSoftmax(Var),
    Sum(Var),
    Pick(Var, usize),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Which piece of every piecewise op each element landed on. Two tapes
    /// recording the same graph with equal patterns lie on one smooth piece.
    pub fn branch_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu(a, _) | Op::Relu(a) | Op::Elu(a) => {
                    out.extend(self.value(*a).data.iter().map(|v| u8::from(*v > 0.0)));
                }
                Op::Clamp(a, lo, hi) => {
                    out.extend(self.value(*a).data.iter().map(|v| match v {
                        v if v <= lo => 0,
                        v if v >= hi => 2,
                        _ => 1,
                    }));
                }
                Op::Min(a, b) => {
                    let (a, b) = (self.value(*a), self.value(*b));
                    out.extend(a.data.iter().zip(&b.data).map(|(x, y)| u8::from(x <= y)));
                }
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf borrowing its value.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed leaf that never receives a gradient.
    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!(b.rows, 1);
        assert_eq!(x.cols, b.cols);
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols.max(1)) {
            for (o, bv) in row.iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(a, bias), &[a, bias])
    }

    /// `a * w + b` for a weight `w` and bias row `b`.
    pub fn linear(&mut self, a: Var, weight: Var, bias: Var) -> Var {
        let z = self.matmul(a, weight);
        self.add_bias(z, bias)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert!(x.same_shape(y), "elementwise op on {}x{} and {}x{}", x.rows, x.cols, y.rows, y.cols);
        let data = x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect();
        let out = Tensor::new(x.rows, x.cols, data);
        self.push(out, op, &[a, b])
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.rows, x.cols, x.data.iter().map(|v| f(*v)).collect());
        self.push(out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Min(a, b), f64::min)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |v| c * v)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, Op::Elu(a), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |v| v * v)
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(index.len() * x.cols);
        for &r in &index {
            data.extend_from_slice(x.row_slice(r));
        }
        let out = Tensor::new(index.len(), x.cols, data);
        self.push(out, Op::GatherRows(a, index), &[a])
    }

    /// Sums row `k` of `a` into output row `index[k]`; output has `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: Vec<usize>, rows: usize) -> Var {
        let x = self.value(a);
        assert_eq!(index.len(), x.rows);
        let mut out = Tensor::zeros(rows, x.cols);
        for (k, &r) in index.iter().enumerate() {
            for (o, v) in out.data[r * x.cols..(r + 1) * x.cols].iter_mut().zip(x.row_slice(k)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAddRows(a, index), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                assert_eq!(t.rows, rows);
                data.extend_from_slice(t.row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data);
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Multiplies row `k` of `a` by the `k`-th entry of the column `weights`.
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Var {
        let (x, w) = (self.value(a), self.value(weights));
        assert_eq!(w.cols, 1);
        assert_eq!(w.rows, x.rows);
        let mut out = x.clone();
        for (r, row) in out.data.chunks_mut(x.cols.max(1)).enumerate() {
            for v in row {
                *v *= w.data[r];
            }
        }
        self.push(out, Op::ScaleRows(a, weights), &[a, weights])
    }

    /// Softmax of a column over groups sharing the same `segment[k]`.
    pub fn segment_softmax(&mut self, a: Var, segment: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(x.cols, 1);
        assert_eq!(segment.len(), x.rows);
        let groups = segment.iter().max().map_or(0, |m| m + 1);
        let mut peak = vec![f64::NEG_INFINITY; groups];
        for (k, &s) in segment.iter().enumerate() {
            peak[s] = peak[s].max(x.data[k]);
        }
        let mut total = vec![0.0; groups];
        let mut out: Vec<f64> = x.data.iter().zip(&segment).map(|(v, &s)| (v - peak[s]).exp()).collect();
        for (e, &s) in out.iter().zip(&segment) {
            total[s] += e;
        }
        for (e, &s) in out.iter_mut().zip(&segment) {
            *e /= total[s];
        }
        let out = Tensor::column(out);
        self.push(out, Op::SegmentSoftmax(a, segment), &[a])
    }

    /// Log-softmax over every entry of `a`.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let peak = x.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = peak + x.data.iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
        let out = Tensor::new(x.rows, x.cols, x.data.iter().map(|v| v - log_z).collect());
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Flat element `index` of `a` as a `1 x 1` tensor.
    pub fn pick(&mut self, a: Var, index: usize) -> Var {
        let v = self.value(a).data[index];
        self.push(Tensor::scalar(v), Op::Pick(a, index), &[a])
    }

    /// Reverse pass from a scalar `loss` seeded with gradient 1.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        self.backward_with(loss, Tensor::scalar(1.0))
    }

    pub fn backward_with(&self, output: Var, seed: Tensor) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = matmul_nt(&g, self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = matmul_tn(self.value(*a), &g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddBias(a, b) => {
                    if self.needs(*b) {
                        let mut gb = Tensor::zeros(1, g.cols);
                        for row in g.data.chunks(g.cols.max(1)) {
                            for (o, v) in gb.data.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    self.pass(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    self.pass(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        let neg = Tensor::new(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                        accumulate(&mut grads, *b, neg);
                    }
                    self.pass(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = elementwise(&g, self.value(*b), |gv, y| gv * y);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = elementwise(&g, self.value(*a), |gv, x| gv * x);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Min(a, b) => {
                    // Ties route the gradient to the first operand.
                    let (x, y) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let ga = Tensor::new(
                            g.rows,
                            g.cols,
                            g.data.iter().zip(x.data.iter().zip(&y.data)).map(|(gv, (p, q))| if p <= q { *gv } else { 0.0 }).collect(),
                        );
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = Tensor::new(
                            g.rows,
                            g.cols,
                            g.data.iter().zip(x.data.iter().zip(&y.data)).map(|(gv, (p, q))| if p <= q { 0.0 } else { *gv }).collect(),
                        );
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    self.pass_map(&mut grads, *a, &g, |gv, _| c * gv);
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    self.pass_map(&mut grads, *a, &g, |gv, x| if x > 0.0 { gv } else { slope * gv });
                }
                Op::Elu(a) => {
                    self.pass_map(&mut grads, *a, &g, |gv, x| if x > 0.0 { gv } else { gv * x.exp() });
                }
                Op::Relu(a) => {
                    self.pass_map(&mut grads, *a, &g, |gv, x| if x > 0.0 { gv } else { 0.0 });
                }
                Op::Exp(a) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, elementwise(&g, out, |gv, y| gv * y));
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    self.pass_map(&mut grads, *a, &g, |gv, x| if x > lo && x < hi { gv } else { 0.0 });
                }
                Op::Square(a) => {
                    self.pass_map(&mut grads, *a, &g, |gv, x| 2.0 * x * gv);
                }
                Op::GatherRows(a, index) => {
                    if self.needs(*a) {
                        let x = self.value(*a);
                        let mut ga = Tensor::zeros(x.rows, x.cols);
                        for (k, &r) in index.iter().enumerate() {
                            for (o, v) in ga.data[r * x.cols..(r + 1) * x.cols].iter_mut().zip(g.row_slice(k)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::ScatterAddRows(a, index) => {
                    if self.needs(*a) {
                        let mut data = Vec::with_capacity(index.len() * g.cols);
                        for &r in index {
                            data.extend_from_slice(g.row_slice(r));
                        }
                        accumulate(&mut grads, *a, Tensor::new(index.len(), g.cols, data));
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        if self.needs(*p) {
                            let mut data = Vec::with_capacity(g.rows * cols);
                            for r in 0..g.rows {
                                data.extend_from_slice(&g.row_slice(r)[offset..offset + cols]);
                            }
                            accumulate(&mut grads, *p, Tensor::new(g.rows, cols, data));
                        }
                        offset += cols;
                    }
                }
                Op::ScaleRows(a, w) => {
                    let (x, wv) = (self.value(*a), self.value(*w));
                    if self.needs(*w) {
                        let gw: Vec<f64> = (0..x.rows)
                            .map(|r| g.row_slice(r).iter().zip(x.row_slice(r)).map(|(p, q)| p * q).sum())
                            .collect();
                        accumulate(&mut grads, *w, Tensor::column(gw));
                    }
                    if self.needs(*a) {
                        let mut ga = g.clone();
                        for (r, row) in ga.data.chunks_mut(x.cols.max(1)).enumerate() {
                            for v in row {
                                *v *= wv.data[r];
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::SegmentSoftmax(a, segment) => {
                    if self.needs(*a) {
                        let groups = segment.iter().max().map_or(0, |m| m + 1);
                        let mut dot = vec![0.0; groups];
                        for (k, &s) in segment.iter().enumerate() {
                            dot[s] += g.data[k] * out.data[k];
                        }
                        let ga = (0..segment.len()).map(|k| out.data[k] * (g.data[k] - dot[segment[k]])).collect();
                        accumulate(&mut grads, *a, Tensor::column(ga));
                    }
                }
                Op::LogSoftmax(a) => {
                    if self.needs(*a) {
                        let total: f64 = g.data.iter().sum();
                        let ga = Tensor::new(
                            g.rows,
                            g.cols,
                            g.data.iter().zip(&out.data).map(|(gv, lp)| gv - lp.exp() * total).collect(),
                        );
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::Sum(a) => {
                    if self.needs(*a) {
                        let x = self.value(*a);
                        accumulate(&mut grads, *a, Tensor::filled(x.rows, x.cols, g.data[0]));
                    }
                }
                Op::Pick(a, index) => {
                    if self.needs(*a) {
                        let x = self.value(*a);
                        let mut ga = Tensor::zeros(x.rows, x.cols);
                        ga.data[*index] = g.data[0];
                        accumulate(&mut grads, *a, ga);
                    }
                }
            }
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn pass(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if self.needs(v) {
            accumulate(grads, v, g);
        }
    }

    fn pass_map(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(f64, f64) -> f64) {
        if self.needs(v) {
            accumulate(grads, v, elementwise(g, self.value(v), f));
        }
    }
}

fn elementwise(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(a, b)| f(*a, *b)).collect())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut g = Tensor::zeros(x.rows, x.cols);
        for k in 0..x.len() {
            let mut p = x.clone();
            p.data[k] += h;
            let mut m = x.clone();
            m.data[k] -= h;
            g.data[k] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    fn sample(rows: usize, cols: usize, shift: f64) -> Tensor {
        Tensor::new(rows, cols, (0..rows * cols).map(|k| ((k as f64 * 0.731 + shift).sin()) * 1.3).collect())
    }

    #[test]
    fn matmul_chain_gradients() {
        let a = sample(3, 4, 0.1);
        let b = sample(4, 2, 0.7);
        let bias = sample(1, 2, 0.3);
        let f = |a: &Tensor, b: &Tensor| {
            let mut t = Tape::new();
            let (va, vb, vc) = (t.param(a), t.param(b), t.constant(bias.clone()));
            let z = t.linear(va, vb, vc);
            let z = t.elu(z);
            let s = t.square(z);
            let s = t.sum(s);
            (t.value(s).item(), {
                let g = t.backward(s);
                (g.get(va).unwrap().clone(), g.get(vb).unwrap().clone())
            })
        };
        let (_, (ga, gb)) = f(&a, &b);
        assert_close(&ga, &numeric_grad(&a, |x| f(x, &b).0), 1e-6);
        assert_close(&gb, &numeric_grad(&b, |x| f(&a, x).0), 1e-6);
    }

    #[test]
    fn graph_ops_gradients() {
        let h = sample(4, 3, 0.2);
        let scores = sample(6, 1, 1.1);
        let src = vec![0, 1, 2, 3, 1, 0];
        let dst = vec![1, 0, 0, 2, 3, 3];
        let f = |h: &Tensor, scores: &Tensor| {
            let mut t = Tape::new();
            let (vh, vs) = (t.param(h), t.param(scores));
            let alpha = t.segment_softmax(vs, dst.clone());
            let hs = t.gather_rows(vh, src.clone());
            let hd = t.gather_rows(vh, dst.clone());
            let cat = t.concat_cols(&[hs, hd]);
            let w = t.scale_rows(cat, alpha);
            let agg = t.scatter_add_rows(w, dst.clone(), 4);
            let act = t.leaky_relu(agg, 0.2);
            let lsm = t.log_softmax(act);
            let p = t.pick(lsm, 5);
            let g = t.backward(p);
            (t.value(p).item(), g.get(vh).unwrap().clone(), g.get(vs).unwrap().clone())
        };
        let (_, gh, gs) = f(&h, &scores);
        assert_close(&gh, &numeric_grad(&h, |x| f(x, &scores).0), 1e-6);
        assert_close(&gs, &numeric_grad(&scores, |x| f(&h, x).0), 1e-6);
    }

    #[test]
    fn clipped_surrogate_gradients() {
        let x = Tensor::new(1, 3, vec![-0.1, 0.05, 0.4]);
        let adv = Tensor::new(1, 3, vec![1.5, -0.7, 2.0]);
        let f = |x: &Tensor| {
            let mut t = Tape::new();
            let vx = t.param(x);
            let va = t.constant(adv.clone());
            let r = t.exp(vx);
            let c = t.clamp(r, 0.8, 1.2);
            let s1 = t.mul(r, va);
            let s2 = t.mul(c, va);
            let m = t.min(s1, s2);
            let m = t.scale(m, -1.0);
            let relu = t.relu(m);
            let d = t.sub(m, relu);
            let tot = t.add(d, m);
            let out = t.sum(tot);
            let g = t.backward(out);
            (t.value(out).item(), g.get(vx).unwrap().clone())
        };
        let (_, g) = f(&x);
        assert_close(&g, &numeric_grad(&x, |x| f(x).0), 1e-6);
    }

    #[test]
    fn constants_get_no_gradient() {
        let w = sample(2, 2, 0.0);
        let mut t = Tape::new();
        let c = t.constant(sample(1, 2, 0.5));
        let p = t.param(&w);
        let z = t.matmul(c, p);
        let s = t.sum(z);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let s = t.constant(Tensor::column(vec![3.0, -1.0, 0.5, 100.0, 7.0]));
        let a = t.segment_softmax(s, vec![0, 0, 1, 1, 2]);
        let v = &t.value(a).data;
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] + v[3] - 1.0).abs() < 1e-12);
        assert_eq!(v[4], 1.0);
    }
}
