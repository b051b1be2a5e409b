use std::sync::Arc;

use rand::Rng;

use super::kernels;
use super::{AttnMask, Result, Tensor, TensorError, LAYER_NORM_EPS, MASK_VALUE};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    /// Produced without any grad-requiring input; nothing to propagate.
    Constant,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Relu(Var),
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Transpose(Var),
    Dropout(Var, Vec<f64>),
    MaskedFill(Var),
    Sum(Var),
    Mean(Var),
    WeightedSum(Var, Arc<Tensor>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Linear record of executed operations, in topological order by
/// construction: a node can only reference nodes created before it.
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true }
    }

    /// A tape that never records backward information. Leaves registered
    /// with `requires_grad = true` are treated as constants.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), record: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Register a shared tensor (typically a model parameter) without copying.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        let needs_grad = requires_grad && self.record;
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shared_value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let op = if needs_grad { op } else { Op::Constant };
        self.nodes.push(Node { value: Arc::new(value), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(shape_err(op, format!("expected a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor { shape: vec![m, n], data: out }, &[a, b], Op::MatMul(a, b))
    }

    /// `[m×k] · [n×k]ᵀ → [m×n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_nt", a)?;
        let (n, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("[{m}x{k}] · [{n}x{k2}]ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul_nt", Tensor { shape: vec![m, n], data: out }, &[a, b], Op::MatMulNt(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    /// Elementwise sum of equal shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        self.push("add", value, &[a, b], Op::Add(a, b))
    }

    /// `[m×n] + [n]`, the vector added to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("add_row", a)?;
        let tr = self.value(row);
        if tr.numel() != n {
            return Err(shape_err("add_row", format!("[{m}x{n}] + {:?}", tr.shape())));
        }
        let rv = tr.data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (d, r) in chunk.iter_mut().zip(rv) {
                *d += r;
            }
        }
        self.push("add_row", Tensor { shape: vec![m, n], data }, &[a, row], Op::AddRow(a, row))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        self.push("mul", value, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor { shape: ta.shape().to_vec(), data: ta.data().iter().map(|x| x * factor).collect() };
        self.push("scale", value, &[a], Op::Scale(a, factor))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (_, cols) = ta.dims2();
        let value = Tensor { shape: ta.shape().to_vec(), data: kernels::softmax_rows(ta.data(), cols) };
        self.push("softmax", value, &[a], Op::Softmax(a))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (_, cols) = ta.dims2();
        let value = Tensor { shape: ta.shape().to_vec(), data: kernels::log_softmax_rows(ta.data(), cols) };
        self.push("log_softmax", value, &[a], Op::LogSoftmax(a))
    }

    /// Row-wise normalization of `[m×n]` with gain and bias of length `n`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("layer_norm", x)?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(shape_err(
                "layer_norm",
                format!("[{m}x{n}] with gain {:?} bias {:?}", self.value(gain).shape(), self.value(bias).shape()),
            ));
        }
        let (tx, g, b) = (self.value(x).data(), self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &tx[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor { shape: vec![m, n], data: out };
        self.push("layer_norm", value, &[x, gain, bias], Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor { shape: ta.shape().to_vec(), data: ta.data().iter().map(|&v| kernels::gelu(v)).collect() };
        self.push("gelu", value, &[a], Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor { shape: ta.shape().to_vec(), data: ta.data().iter().map(|&v| v.max(0.0)).collect() };
        self.push("relu", value, &[a], Op::Relu(a))
    }

    /// Gather rows of a `[V×d]` table: output `[ids.len()×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.matrix_dims("embedding", table)?;
        let tt = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index { op: "embedding", index: id, size: v });
            }
            data.extend_from_slice(&tt[id * d..(id + 1) * d]);
        }
        let value = Tensor { shape: vec![ids.len(), d], data };
        self.push("embedding", value, &[table], Op::Embedding { table, ids: ids.to_vec() })
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs".into()));
        }
        let (_, cols) = self.matrix_dims("concat_rows", parts[0])?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_rows", p)?;
            if c != cols {
                return Err(shape_err("concat_rows", format!("column counts {cols} and {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        self.push("concat_rows", Tensor { shape: vec![rows, cols], data }, parts, Op::ConcatRows(parts.to_vec()))
    }

    /// Join matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        let (rows, _) = self.matrix_dims("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_cols", p)?;
            if r != rows {
                return Err(shape_err("concat_cols", format!("row counts {rows} and {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push("concat_cols", Tensor { shape: vec![rows, total], data }, parts, Op::ConcatCols(parts.to_vec()))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("slice_rows", a)?;
        if start > end || end > m {
            return Err(shape_err("slice_rows", format!("range {start}..{end} of {m} rows")));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        self.push("slice_rows", Tensor { shape: vec![end - start, n], data }, &[a], Op::SliceRows(a, start))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("slice_cols", a)?;
        if start > end || end > n {
            return Err(shape_err("slice_cols", format!("range {start}..{end} of {n} columns")));
        }
        let src = self.value(a).data();
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        self.push("slice_cols", Tensor { shape: vec![m, w], data }, &[a], Op::SliceCols(a, start))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", ta.shape(), shape)));
        }
        let value = Tensor { shape: shape.to_vec(), data: ta.data().to_vec() };
        self.push("reshape", value, &[a], Op::Reshape(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let data = kernels::transpose(self.value(a).data(), m, n);
        self.push("transpose", Tensor { shape: vec![n, m], data }, &[a], Op::Transpose(a))
    }

    /// Inverted dropout. `p = 0` returns the input unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p == 0.0 {
            return Ok(a);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(shape_err("dropout", format!("probability {p} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - p);
        let ta = self.value(a);
        let mask: Vec<f64> = (0..ta.numel()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        self.push("dropout", value, &[a], Op::Dropout(a, mask))
    }

    /// Add [`MASK_VALUE`] at every forbidden position of a `[m×n]` score
    /// matrix. Rows with no permitted position are rejected.
    pub fn masked_fill(&mut self, a: Var, mask: &AttnMask) -> Result<Var> {
        let (m, n) = self.matrix_dims("masked_fill", a)?;
        if mask.rows() != m || mask.cols() != n {
            return Err(shape_err("masked_fill", format!("[{m}x{n}] with {}x{} mask", mask.rows(), mask.cols())));
        }
        let mut data = self.value(a).data().to_vec();
        for r in 0..m {
            let mut any = false;
            for c in 0..n {
                if mask.allows(r, c) {
                    any = true;
                } else {
                    data[r * n + c] += MASK_VALUE;
                }
            }
            if !any {
                return Err(TensorError::FullyMasked { row: r });
            }
        }
        self.push("masked_fill", Tensor { shape: vec![m, n], data }, &[a], Op::MaskedFill(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.data().iter().sum::<f64>() / ta.numel() as f64;
        self.push("mean", Tensor::scalar(s), &[a], Op::Mean(a))
    }

    /// `Σ a ∘ w` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != weights.shape() {
            return Err(shape_err("weighted_sum", format!("{:?} vs weights {:?}", ta.shape(), weights.shape())));
        }
        let s = ta.data().iter().zip(weights.data()).map(|(x, w)| x * w).sum();
        self.push("weighted_sum", Tensor::scalar(s), &[a], Op::WeightedSum(a, Arc::new(weights)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.needs_grad => Some(Tensor { shape: node.value.shape().to_vec(), data: g }),
                (Op::Leaf, None) if node.needs_grad => Some(Tensor::zeros(node.value.shape())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).dims2().1;
                if self.nodes[a.0].needs_grad {
                    let ga = self.acc(grads, *a);
                    kernels::matmul_nt_acc(g, self.value(*b).data(), ga, m, n, k);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = self.acc(grads, *b);
                    kernels::matmul_tn_acc(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).dims2().0;
                if self.nodes[a.0].needs_grad {
                    let ga = self.acc(grads, *a);
                    kernels::matmul_acc(g, self.value(*b).data(), ga, m, n, k);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = self.acc(grads, *b);
                    kernels::matmul_tn_acc(g, self.value(*a).data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.nodes[v.0].needs_grad {
                        add_into(self.acc(grads, *v), g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.nodes[a.0].needs_grad {
                    add_into(self.acc(grads, *a), g);
                }
                if self.nodes[row.0].needs_grad {
                    let n = self.value(*row).numel();
                    let gr = self.acc(grads, *row);
                    for chunk in g.chunks(n) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let bv = self.value(*b).data();
                    let ga = self.acc(grads, *a);
                    for ((d, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let av = self.value(*a).data();
                    let gb = self.acc(grads, *b);
                    for ((d, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, factor) => {
                let ga = self.acc(grads, *a);
                for (d, gi) in ga.iter_mut().zip(g) {
                    *d += gi * factor;
                }
            }
            Op::Softmax(a) => {
                let cols = node.value.dims2().1;
                let ga = self.acc(grads, *a);
                for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                    for ((d, yi), gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *d += yi * (gi - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let cols = node.value.dims2().1;
                let ga = self.acc(grads, *a);
                for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let total: f64 = gr.iter().sum();
                    for ((d, yi), gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *d += gi - yi.exp() * total;
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let n = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                if self.nodes[x.0].needs_grad {
                    let gx = self.acc(grads, *x);
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..n {
                            let d = gr[c] * gv[c];
                            mean_d += d;
                            mean_dh += d * hr[c];
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        for c in 0..n {
                            let d = gr[c] * gv[c];
                            gx[r * n + c] += is * (d - mean_d - hr[c] * mean_dh);
                        }
                    }
                }
                if self.nodes[gain.0].needs_grad {
                    let gg = self.acc(grads, *gain);
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((d, gi), hi) in gg.iter_mut().zip(gr).zip(hr) {
                            *d += gi * hi;
                        }
                    }
                }
                if self.nodes[bias.0].needs_grad {
                    let gb = self.acc(grads, *bias);
                    for gr in g.chunks(n) {
                        add_into(gb, gr);
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                let ga = self.acc(grads, *a);
                for ((d, gi), xi) in ga.iter_mut().zip(g).zip(av) {
                    *d += gi * kernels::gelu_grad(*xi);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let ga = self.acc(grads, *a);
                for ((d, gi), xi) in ga.iter_mut().zip(g).zip(av) {
                    if *xi > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).dims2().1;
                let gt = self.acc(grads, *table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if self.nodes[p.0].needs_grad {
                        add_into(self.acc(grads, *p), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).dims2().1;
                    if self.nodes[p.0].needs_grad {
                        let gp = self.acc(grads, *p);
                        for r in 0..rows {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows(a, start) => {
                let n = node.value.dims2().1;
                let ga = self.acc(grads, *a);
                add_into(&mut ga[start * n..start * n + g.len()], g);
            }
            Op::SliceCols(a, start) => {
                let (rows, w) = node.value.dims2();
                let n = self.value(*a).dims2().1;
                let ga = self.acc(grads, *a);
                for r in 0..rows {
                    add_into(&mut ga[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                }
            }
            Op::Reshape(a) => add_into(self.acc(grads, *a), g),
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2();
                let gt = kernels::transpose(g, n, m);
                add_into(self.acc(grads, *a), &gt);
            }
            Op::Dropout(a, mask) => {
                let ga = self.acc(grads, *a);
                for ((d, gi), mi) in ga.iter_mut().zip(g).zip(mask) {
                    *d += gi * mi;
                }
            }
            Op::MaskedFill(a) => add_into(self.acc(grads, *a), g),
            Op::Sum(a) => {
                let ga = self.acc(grads, *a);
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(a) => {
                let ga = self.acc(grads, *a);
                let share = g[0] / ga.len() as f64;
                for d in ga.iter_mut() {
                    *d += share;
                }
            }
            Op::WeightedSum(a, w) => {
                let ga = self.acc(grads, *a);
                for (d, wi) in ga.iter_mut().zip(w.data()) {
                    *d += g[0] * wi;
                }
            }
        }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let numel = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; numel])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients of one backward sweep, available for every leaf registered
/// with `requires_grad`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
