//! Reverse-mode differentiation on a linear operation tape.
//!
//! Every operation appends one node holding its output tensor and a record of
//! its inputs. `backward` walks the tape once in reverse execution order and
//! accumulates gradients additively across fan-out. One tape per training
//! step; tensors recorded without gradient state are never mutated.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MASK_FILL: f64 = -1e9;

/// Handle into a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    AddRow(TensorId, TensorId),
    MulRow(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    MulScalar(TensorId, TensorId),
    Exp(TensorId),
    Relu(TensorId),
    SumAll(TensorId),
    MeanAll(TensorId),
    SumSquares(TensorId),
    MeanRows(TensorId),
    SoftmaxRows(TensorId),
    CrossEntropyRows(TensorId, Vec<usize>),
    L2NormalizeRows(TensorId),
    LayerNormRows(TensorId),
    ConcatCols(Vec<TensorId>),
    ConcatRows(Vec<TensorId>),
    Embedding(TensorId, Vec<usize>),
    AddMask(TensorId),
    CosineSimRowsMean(TensorId, TensorId),
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Ordered record of executed operations. Replaying it backward visits each
/// recorded operation exactly once, in reverse execution order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

fn dims2(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::dimension("expected rank-2 tensor", shape, &[])),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                values,
                grad: None,
                requires_grad,
            },
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn rg(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.values
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        self.nodes[id.0].tensor.values[0]
    }

    pub fn check_finite(&self, id: TensorId, context: &str) -> Result<()> {
        self.nodes[id.0].tensor.check_finite(context)
    }

    /// Record an input tensor.
    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<TensorId> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t.shape, t.values, requires_grad, Op::Leaf))
    }

    /// Record a non-differentiable input tensor.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<TensorId> {
        self.leaf(shape, values, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = dims2(self.shape(a))?;
        let (k2, n) = dims2(self.shape(b))?;
        if k != k2 {
            return Err(Error::dimension(
                "matmul inner extents",
                self.shape(a),
                self.shape(b),
            ));
        }
        let av = self.values(a);
        let bv = self.values(b);
        let mut out = vec![0.0; m * n];
        matmul_into(av, bv, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = dims2(self.shape(x))?;
        let xv = self.values(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![n, m], out, rg, Op::Transpose(x)))
    }

    fn binary_same_shape(&mut self, a: TensorId, b: TensorId, context: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dimension(context, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "elementwise add")?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "elementwise sub")?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "elementwise mul")?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Mul(a, b)))
    }

    /// Broadcast-add a length-n row vector to every row of an m-by-n matrix.
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> Result<TensorId> {
        let (m, n) = dims2(self.shape(x))?;
        let rn = self.values(row).len();
        if rn != n {
            return Err(Error::dimension("row broadcast add", self.shape(x), self.shape(row)));
        }
        let xv = self.values(x);
        let rv = self.values(row);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = xv[i * n + j] + rv[j];
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(vec![m, n], out, rg, Op::AddRow(x, row)))
    }

    /// Broadcast-multiply every row of an m-by-n matrix by a length-n row vector.
    pub fn mul_row(&mut self, x: TensorId, row: TensorId) -> Result<TensorId> {
        let (m, n) = dims2(self.shape(x))?;
        if self.values(row).len() != n {
            return Err(Error::dimension("row broadcast mul", self.shape(x), self.shape(row)));
        }
        let xv = self.values(x);
        let rv = self.values(row);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = xv[i * n + j] * rv[j];
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(vec![m, n], out, rg, Op::MulRow(x, row)))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.values(x).iter().map(|v| v * c).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, rg, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.values(x).iter().map(|v| v + c).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, rg, Op::AddConst(x))
    }

    /// Multiply a tensor by a single-element scalar tensor.
    pub fn mul_scalar(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        if self.values(s).len() != 1 {
            return Err(Error::dimension("scalar multiplier", self.shape(s), &[1]));
        }
        let sv = self.values(s)[0];
        let out: Vec<f64> = self.values(x).iter().map(|v| v * sv).collect();
        let rg = self.rg(x) || self.rg(s);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, rg, Op::MulScalar(x, s)))
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f64> = self.values(x).iter().map(|v| v.exp()).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, rg, Op::Exp(x))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f64> = self.values(x).iter().map(|v| v.max(0.0)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, rg, Op::Relu(x))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.values(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.values(x).len() as f64;
        let s: f64 = self.values(x).iter().sum::<f64>() / n;
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::MeanAll(x))
    }

    pub fn sum_squares(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.values(x).iter().map(|v| v * v).sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::SumSquares(x))
    }

    /// Column-wise mean over rows: m-by-n input, 1-by-n output.
    pub fn mean_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = dims2(self.shape(x))?;
        let xv = self.values(x);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += xv[i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        let rg = self.rg(x);
        Ok(self.push(vec![1, n], out, rg, Op::MeanRows(x)))
    }

    /// Row-wise softmax with per-row max subtraction for stability.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = dims2(self.shape(x))?;
        let xv = self.values(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&xv[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![m, n], out, rg, Op::SoftmaxRows(x)))
    }

    /// Mean negative log softmax probability of the target column per row.
    pub fn cross_entropy_rows(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        let (m, n) = dims2(self.shape(logits))?;
        if targets.len() != m {
            return Err(Error::dimension("cross entropy targets", &[m], &[targets.len()]));
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(Error::Index {
                    context: format!("cross entropy target for row {i}"),
                    index: t,
                    bound: n,
                });
            }
        }
        let xv = self.values(logits);
        let mut loss = 0.0;
        let mut probs = vec![0.0; n];
        for (i, &t) in targets.iter().enumerate() {
            let row = &xv[i * n..(i + 1) * n];
            softmax_row(row, &mut probs);
            // log softmax computed directly from shifted logits for accuracy
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss -= row[t] - mx - lse;
        }
        loss /= m as f64;
        let rg = self.rg(logits);
        Ok(self.push(vec![1], vec![loss], rg, Op::CrossEntropyRows(logits, targets.to_vec())))
    }

    /// Scale every row to unit L2 norm. Rows with norm at or below `eps` are
    /// rejected as degenerate.
    pub fn l2_normalize_rows_eps(&mut self, x: TensorId, eps: f64) -> Result<TensorId> {
        let (m, n) = dims2(self.shape(x))?;
        let xv = self.values(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= eps {
                return Err(Error::Degenerate(format!(
                    "l2_normalize: row {i} has norm {norm} <= {eps}"
                )));
            }
            for j in 0..n {
                out[i * n + j] = row[j] / norm;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![m, n], out, rg, Op::L2NormalizeRows(x)))
    }

    pub fn l2_normalize_rows(&mut self, x: TensorId) -> Result<TensorId> {
        self.l2_normalize_rows_eps(x, 1e-12)
    }

    /// Layer normalization over the last axis (no affine parameters).
    pub fn layer_norm_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = dims2(self.shape(x))?;
        let xv = self.values(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let (mu, inv_sigma) = layer_norm_stats(row);
            for j in 0..n {
                out[i * n + j] = (row[j] - mu) * inv_sigma;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![m, n], out, rg, Op::LayerNormRows(x)))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Config("concat_cols: empty part list".into()));
        }
        let (m, _) = dims2(self.shape(parts[0]))?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = dims2(self.shape(p))?;
            if pm != m {
                return Err(Error::dimension("concat_cols row counts", &[m], &[pm]));
            }
            widths.push(pn);
            total += pn;
        }
        let mut out = vec![0.0; m * total];
        for i in 0..m {
            let mut off = 0;
            for (pi, &p) in parts.iter().enumerate() {
                let n = widths[pi];
                let pv = self.values(p);
                out[i * total + off..i * total + off + n].copy_from_slice(&pv[i * n..(i + 1) * n]);
                off += n;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![m, total], out, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Stack matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Config("concat_rows: empty part list".into()));
        }
        let (_, n) = dims2(self.shape(parts[0]))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = dims2(self.shape(p))?;
            if pn != n {
                return Err(Error::dimension("concat_rows column counts", &[n], &[pn]));
            }
            out.extend_from_slice(self.values(p));
            rows += pm;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![rows, n], out, rg, Op::ConcatRows(parts.to_vec())))
    }

    /// Gather rows of an embedding table by index.
    pub fn embedding(&mut self, table: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (v, f) = dims2(self.shape(table))?;
        for &ix in indices {
            if ix >= v {
                return Err(Error::Index {
                    context: "embedding lookup".into(),
                    index: ix,
                    bound: v,
                });
            }
        }
        let tv = self.values(table);
        let mut out = Vec::with_capacity(indices.len() * f);
        for &ix in indices {
            out.extend_from_slice(&tv[ix * f..(ix + 1) * f]);
        }
        let rg = self.rg(table);
        Ok(self.push(vec![indices.len(), f], out, rg, Op::Embedding(table, indices.to_vec())))
    }

    /// Additive large-negative fill outside the mask, applied to attention
    /// scores before softmax. `mask[i]` true keeps the score.
    pub fn add_mask(&mut self, x: TensorId, mask: &[bool]) -> Result<TensorId> {
        if mask.len() != self.values(x).len() {
            return Err(Error::dimension("attention mask", self.shape(x), &[mask.len()]));
        }
        let out: Vec<f64> = self
            .values(x)
            .iter()
            .zip(mask)
            .map(|(v, &keep)| if keep { *v } else { v + MASK_FILL })
            .collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, rg, Op::AddMask(x)))
    }

    /// Mean row-wise cosine similarity between two equal-shape matrices.
    pub fn cosine_sim_rows_mean(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "cosine similarity rows")?;
        let (m, n) = dims2(self.shape(a))?;
        let av = self.values(a);
        let bv = self.values(b);
        let mut acc = 0.0;
        for i in 0..m {
            let ra = &av[i * n..(i + 1) * n];
            let rb = &bv[i * n..(i + 1) * n];
            let na = norm(ra);
            let nb = norm(rb);
            if na <= 1e-12 || nb <= 1e-12 {
                return Err(Error::Degenerate(format!(
                    "cosine similarity: zero-norm row {i}"
                )));
            }
            acc += dot(ra, rb) / (na * nb);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![1], vec![acc / m as f64], rg, Op::CosineSimRowsMean(a, b)))
    }

    /// Populate gradients of every requires_grad tensor reachable from `loss`.
    /// Tensors not on a path to the loss keep an all-zero gradient.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.values(loss).len() != 1 {
            return Err(Error::dimension("backward requires a scalar loss", self.shape(loss), &[1]));
        }
        for node in &mut self.nodes {
            if node.tensor.requires_grad {
                node.tensor.grad = Some(vec![0.0; node.tensor.values.len()]);
            } else {
                node.tensor.grad = None;
            }
        }
        if !self.rg(loss) {
            return Ok(());
        }
        if let Some(g) = self.nodes[loss.0].tensor.grad.as_mut() {
            g[0] = 1.0;
        }
        for i in (0..=loss.0).rev() {
            if self.nodes[i].tensor.grad.is_none() {
                continue;
            }
            self.backward_step(i);
        }
        Ok(())
    }

    fn add_into_grad(&mut self, id: TensorId, contrib: &[f64]) {
        if let Some(g) = self.nodes[id.0].tensor.grad.as_mut() {
            for (gi, &c) in g.iter_mut().zip(contrib) {
                *gi += c;
            }
        }
    }

    fn backward_step(&mut self, i: usize) {
        let op = self.nodes[i].op.clone();
        let g = match self.nodes[i].tensor.grad.clone() {
            Some(g) => g,
            None => return,
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.shape(a)).unwrap();
                let n = self.shape(b)[1];
                if self.rg(a) {
                    // dA = dC . B^T
                    let bv = self.values(b);
                    let mut da = vec![0.0; m * k];
                    for ii in 0..m {
                        for jj in 0..n {
                            let gv = g[ii * n + jj];
                            if gv != 0.0 {
                                for pp in 0..k {
                                    da[ii * k + pp] += gv * bv[pp * n + jj];
                                }
                            }
                        }
                    }
                    self.add_into_grad(a, &da);
                }
                if self.rg(b) {
                    // dB = A^T . dC
                    let av = self.values(a);
                    let mut db = vec![0.0; k * n];
                    for ii in 0..m {
                        for pp in 0..k {
                            let avv = av[ii * k + pp];
                            if avv != 0.0 {
                                for jj in 0..n {
                                    db[pp * n + jj] += avv * g[ii * n + jj];
                                }
                            }
                        }
                    }
                    self.add_into_grad(b, &db);
                }
            }
            Op::Transpose(x) => {
                let (n, m) = dims2(&self.nodes[i].tensor.shape).unwrap();
                let mut dx = vec![0.0; m * n];
                for r in 0..n {
                    for c in 0..m {
                        dx[c * n + r] = g[r * m + c];
                    }
                }
                self.add_into_grad(x, &dx);
            }
            Op::Add(a, b) => {
                self.add_into_grad(a, &g);
                self.add_into_grad(b, &g);
            }
            Op::Sub(a, b) => {
                self.add_into_grad(a, &g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.add_into_grad(b, &neg);
            }
            Op::Mul(a, b) => {
                if self.rg(a) {
                    let da: Vec<f64> = g.iter().zip(self.values(b)).map(|(gv, bv)| gv * bv).collect();
                    self.add_into_grad(a, &da);
                }
                if self.rg(b) {
                    let db: Vec<f64> = g.iter().zip(self.values(a)).map(|(gv, av)| gv * av).collect();
                    self.add_into_grad(b, &db);
                }
            }
            Op::AddRow(x, row) => {
                let (m, n) = dims2(self.shape(x)).unwrap();
                self.add_into_grad(x, &g);
                if self.rg(row) {
                    let mut dr = vec![0.0; n];
                    for ii in 0..m {
                        for jj in 0..n {
                            dr[jj] += g[ii * n + jj];
                        }
                    }
                    self.add_into_grad(row, &dr);
                }
            }
            Op::MulRow(x, row) => {
                let (m, n) = dims2(self.shape(x)).unwrap();
                if self.rg(x) {
                    let rv = self.values(row);
                    let mut dx = vec![0.0; m * n];
                    for ii in 0..m {
                        for jj in 0..n {
                            dx[ii * n + jj] = g[ii * n + jj] * rv[jj];
                        }
                    }
                    self.add_into_grad(x, &dx);
                }
                if self.rg(row) {
                    let xv = self.values(x);
                    let mut dr = vec![0.0; n];
                    for ii in 0..m {
                        for jj in 0..n {
                            dr[jj] += g[ii * n + jj] * xv[ii * n + jj];
                        }
                    }
                    self.add_into_grad(row, &dr);
                }
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.add_into_grad(x, &dx);
            }
            Op::AddConst(x) | Op::AddMask(x) => {
                self.add_into_grad(x, &g);
            }
            Op::MulScalar(x, s) => {
                if self.rg(x) {
                    let sv = self.values(s)[0];
                    let dx: Vec<f64> = g.iter().map(|v| v * sv).collect();
                    self.add_into_grad(x, &dx);
                }
                if self.rg(s) {
                    let ds: f64 = g.iter().zip(self.values(x)).map(|(gv, xv)| gv * xv).sum();
                    self.add_into_grad(s, &[ds]);
                }
            }
            Op::Exp(x) => {
                let yv = self.nodes[i].tensor.values.clone();
                let dx: Vec<f64> = g.iter().zip(&yv).map(|(gv, y)| gv * y).collect();
                self.add_into_grad(x, &dx);
            }
            Op::Relu(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.values(x))
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.add_into_grad(x, &dx);
            }
            Op::SumAll(x) => {
                let dx = vec![g[0]; self.values(x).len()];
                self.add_into_grad(x, &dx);
            }
            Op::MeanAll(x) => {
                let n = self.values(x).len() as f64;
                let dx = vec![g[0] / n; self.values(x).len()];
                self.add_into_grad(x, &dx);
            }
            Op::SumSquares(x) => {
                let dx: Vec<f64> = self.values(x).iter().map(|xv| 2.0 * xv * g[0]).collect();
                self.add_into_grad(x, &dx);
            }
            Op::MeanRows(x) => {
                let (m, n) = dims2(self.shape(x)).unwrap();
                let mut dx = vec![0.0; m * n];
                for ii in 0..m {
                    for jj in 0..n {
                        dx[ii * n + jj] = g[jj] / m as f64;
                    }
                }
                self.add_into_grad(x, &dx);
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = dims2(self.shape(x)).unwrap();
                let yv = self.nodes[i].tensor.values.clone();
                let mut dx = vec![0.0; m * n];
                for ii in 0..m {
                    let y = &yv[ii * n..(ii + 1) * n];
                    let gr = &g[ii * n..(ii + 1) * n];
                    let s: f64 = y.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                    for jj in 0..n {
                        dx[ii * n + jj] = y[jj] * (gr[jj] - s);
                    }
                }
                self.add_into_grad(x, &dx);
            }
            Op::CrossEntropyRows(logits, targets) => {
                let (m, n) = dims2(self.shape(logits)).unwrap();
                let xv = self.values(logits).to_vec();
                let mut dx = vec![0.0; m * n];
                let mut probs = vec![0.0; n];
                let scale = g[0] / m as f64;
                for (ii, &t) in targets.iter().enumerate() {
                    softmax_row(&xv[ii * n..(ii + 1) * n], &mut probs);
                    for jj in 0..n {
                        let onehot = if jj == t { 1.0 } else { 0.0 };
                        dx[ii * n + jj] = scale * (probs[jj] - onehot);
                    }
                }
                self.add_into_grad(logits, &dx);
            }
            Op::L2NormalizeRows(x) => {
                let (m, n) = dims2(self.shape(x)).unwrap();
                let xv = self.values(x).to_vec();
                let yv = self.nodes[i].tensor.values.clone();
                let mut dx = vec![0.0; m * n];
                for ii in 0..m {
                    let xr = &xv[ii * n..(ii + 1) * n];
                    let yr = &yv[ii * n..(ii + 1) * n];
                    let gr = &g[ii * n..(ii + 1) * n];
                    let nrm = norm(xr);
                    let yg = dot(yr, gr);
                    for jj in 0..n {
                        dx[ii * n + jj] = (gr[jj] - yr[jj] * yg) / nrm;
                    }
                }
                self.add_into_grad(x, &dx);
            }
            Op::LayerNormRows(x) => {
                let (m, n) = dims2(self.shape(x)).unwrap();
                let xv = self.values(x).to_vec();
                let yv = self.nodes[i].tensor.values.clone();
                let mut dx = vec![0.0; m * n];
                for ii in 0..m {
                    let xr = &xv[ii * n..(ii + 1) * n];
                    let yr = &yv[ii * n..(ii + 1) * n];
                    let gr = &g[ii * n..(ii + 1) * n];
                    let (_, inv_sigma) = layer_norm_stats(xr);
                    let mean_g: f64 = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for jj in 0..n {
                        dx[ii * n + jj] = inv_sigma * (gr[jj] - mean_g - yr[jj] * mean_gy);
                    }
                }
                self.add_into_grad(x, &dx);
            }
            Op::ConcatCols(parts) => {
                let m = self.nodes[i].tensor.shape[0];
                let total = self.nodes[i].tensor.shape[1];
                let mut off = 0;
                for &p in &parts {
                    let n = self.shape(p)[1];
                    if self.rg(p) {
                        let mut dp = vec![0.0; m * n];
                        for ii in 0..m {
                            dp[ii * n..(ii + 1) * n]
                                .copy_from_slice(&g[ii * total + off..ii * total + off + n]);
                        }
                        self.add_into_grad(p, &dp);
                    }
                    off += n;
                }
            }
            Op::ConcatRows(parts) => {
                let n = self.nodes[i].tensor.shape[1];
                let mut off = 0;
                for &p in &parts {
                    let pm = self.shape(p)[0];
                    if self.rg(p) {
                        let dp = g[off * n..(off + pm) * n].to_vec();
                        self.add_into_grad(p, &dp);
                    }
                    off += pm;
                }
            }
            Op::Embedding(table, indices) => {
                if self.rg(table) {
                    let f = self.shape(table)[1];
                    let v = self.shape(table)[0];
                    let mut dt = vec![0.0; v * f];
                    for (r, &ix) in indices.iter().enumerate() {
                        for jj in 0..f {
                            dt[ix * f + jj] += g[r * f + jj];
                        }
                    }
                    self.add_into_grad(table, &dt);
                }
            }
            Op::CosineSimRowsMean(a, b) => {
                let (m, n) = dims2(self.shape(a)).unwrap();
                let av = self.values(a).to_vec();
                let bv = self.values(b).to_vec();
                let scale = g[0] / m as f64;
                let mut da = vec![0.0; m * n];
                let mut db = vec![0.0; m * n];
                for ii in 0..m {
                    let ra = &av[ii * n..(ii + 1) * n];
                    let rb = &bv[ii * n..(ii + 1) * n];
                    let na = norm(ra);
                    let nb = norm(rb);
                    let c = dot(ra, rb) / (na * nb);
                    for jj in 0..n {
                        da[ii * n + jj] = scale * (rb[jj] / (na * nb) - c * ra[jj] / (na * na));
                        db[ii * n + jj] = scale * (ra[jj] / (na * nb) - c * rb[jj] / (nb * nb));
                    }
                }
                if self.rg(a) {
                    self.add_into_grad(a, &da);
                }
                if self.rg(b) {
                    self.add_into_grad(b, &db);
                }
            }
        }
    }
}

fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                let crow = &mut c[i * n..(i + 1) * n];
                for j in 0..n {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - mx).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn layer_norm_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / (var + LN_EPS).sqrt())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
