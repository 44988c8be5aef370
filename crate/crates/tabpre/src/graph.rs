//! Define-by-run reverse-mode autodiff.
//!
//! A `Graph` is a tape of operation records built fresh for every batch.
//! `forward` evaluates the tape in creation order (which is topological by
//! construction), `backward` walks it in reverse accumulating gradients for
//! every `Param` leaf.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::TabError;
use crate::params::ParamSet;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
enum Op {
    Const(Tensor),
    /// Leaf bound to `ParamSet` slot.
    Param(usize),
    MatMul(NodeId, NodeId),
    /// A · Bᵀ, used for similarity matrices.
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Matrix plus broadcast row vector (bias).
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    /// Inverted dropout; active only when forward runs in train mode.
    Dropout(NodeId, f64),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    /// Row gather from an embedding table.
    EmbedLookup { table: NodeId, codes: Vec<usize> },
    RowL2Normalize(NodeId),
    LogSoftmaxRows(NodeId),
    /// sum(w ⊙ x), scalar.
    WeightedSum(NodeId, Tensor),
    MeanAll(NodeId),
    /// mean((x - t)²), scalar.
    MseMean(NodeId, Tensor),
    /// Mean binary cross-entropy with logits, scalar. Numerically stable form.
    BceWithLogits(NodeId, Tensor),
    /// Mean softmax cross-entropy against integer class targets, scalar.
    SoftmaxCrossEntropy(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    name: &'static str,
}

/// Result of a forward pass: cached values per node plus dropout masks.
pub struct Evaluation {
    values: Vec<Tensor>,
    dropout_masks: Vec<Option<Vec<f64>>>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn rows(&self, id: NodeId) -> usize {
        let s = self.shape(id);
        if s.len() == 2 {
            s[0]
        } else {
            1
        }
    }

    pub fn cols(&self, id: NodeId) -> usize {
        let s = self.shape(id);
        s[s.len() - 1]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, name: &'static str) -> NodeId {
        self.nodes.push(Node { op, shape, name });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape().to_vec();
        self.push(Op::Const(t), shape, "const")
    }

    /// Binds a tape leaf to a `ParamSet` slot. The shape is recorded here and
    /// validated against the actual parameter at forward time.
    pub fn param(&mut self, pid: usize, shape: Vec<usize>) -> NodeId {
        self.push(Op::Param(pid), shape, "param")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TabError> {
        if self.cols(a) != self.rows(b) {
            return Err(TabError::Shape(format!(
                "matmul node: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let shape = vec![self.rows(a), self.cols(b)];
        Ok(self.push(Op::MatMul(a, b), shape, "matmul"))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TabError> {
        if self.cols(a) != self.cols(b) {
            return Err(TabError::Shape(format!(
                "matmul_nt node: {:?} x {:?}^T",
                self.shape(a),
                self.shape(b)
            )));
        }
        let shape = vec![self.rows(a), self.rows(b)];
        Ok(self.push(Op::MatMulNT(a, b), shape, "matmul_nt"))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), TabError> {
        if self.shape(a) != self.shape(b) {
            return Err(TabError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TabError> {
        self.same_shape(a, b, "add")?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b), shape, "add"))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TabError> {
        if self.cols(a) != self.cols(bias) || self.rows(bias) != 1 {
            return Err(TabError::Shape(format!(
                "add_row: {:?} + {:?}",
                self.shape(a),
                self.shape(bias)
            )));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::AddRow(a, bias), shape, "add_row"))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TabError> {
        self.same_shape(a, b, "sub")?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Sub(a, b), shape, "sub"))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TabError> {
        self.same_shape(a, b, "mul")?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul(a, b), shape, "mul"))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, c), shape, "scale")
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Relu(a), shape, "relu")
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Sin(a), shape, "sin")
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Cos(a), shape, "cos")
    }

    pub fn dropout(&mut self, a: NodeId, p: f64) -> Result<NodeId, TabError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TabError::Graph(format!("dropout rate {p} outside [0,1)")));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Dropout(a, p), shape, "dropout"))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TabError> {
        if parts.is_empty() {
            return Err(TabError::Graph("concat_cols of zero parts".into()));
        }
        let rows = self.rows(parts[0]);
        let mut cols = 0;
        for &p in parts {
            if self.rows(p) != rows {
                return Err(TabError::Shape("concat_cols: row mismatch".into()));
            }
            cols += self.cols(p);
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), vec![rows, cols], "concat_cols"))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, TabError> {
        if start >= end || end > self.cols(a) {
            return Err(TabError::Shape(format!(
                "slice_cols [{start},{end}) of {:?}",
                self.shape(a)
            )));
        }
        let shape = vec![self.rows(a), end - start];
        Ok(self.push(Op::SliceCols(a, start, end), shape, "slice_cols"))
    }

    pub fn embed_lookup(&mut self, table: NodeId, codes: Vec<usize>) -> Result<NodeId, TabError> {
        let card = self.rows(table);
        if let Some(&bad) = codes.iter().find(|&&c| c >= card) {
            return Err(TabError::Graph(format!(
                "embed_lookup: code {bad} out of range for table with {card} rows"
            )));
        }
        let shape = vec![codes.len(), self.cols(table)];
        Ok(self.push(Op::EmbedLookup { table, codes }, shape, "embed_lookup"))
    }

    pub fn row_l2_normalize(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::RowL2Normalize(a), shape, "row_l2_normalize")
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::LogSoftmaxRows(a), shape, "log_softmax_rows")
    }

    pub fn weighted_sum(&mut self, a: NodeId, weights: Tensor) -> Result<NodeId, TabError> {
        if weights.shape() != self.shape(a) {
            return Err(TabError::Shape("weighted_sum: weight shape mismatch".into()));
        }
        Ok(self.push(Op::WeightedSum(a, weights), vec![1], "weighted_sum"))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MeanAll(a), vec![1], "mean_all")
    }

    pub fn mse_mean(&mut self, a: NodeId, target: Tensor) -> Result<NodeId, TabError> {
        if target.shape() != self.shape(a) {
            return Err(TabError::Shape("mse_mean: target shape mismatch".into()));
        }
        Ok(self.push(Op::MseMean(a, target), vec![1], "mse_mean"))
    }

    pub fn bce_with_logits(&mut self, a: NodeId, target: Tensor) -> Result<NodeId, TabError> {
        if target.shape() != self.shape(a) {
            return Err(TabError::Shape("bce_with_logits: target shape mismatch".into()));
        }
        Ok(self.push(Op::BceWithLogits(a, target), vec![1], "bce_with_logits"))
    }

    pub fn softmax_cross_entropy(
        &mut self,
        a: NodeId,
        targets: Vec<usize>,
    ) -> Result<NodeId, TabError> {
        if targets.len() != self.rows(a) {
            return Err(TabError::Shape("softmax_cross_entropy: target count mismatch".into()));
        }
        let cols = self.cols(a);
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(TabError::Graph(format!(
                "softmax_cross_entropy: class {bad} out of range {cols}"
            )));
        }
        Ok(self.push(Op::SoftmaxCrossEntropy(a, targets), vec![1], "softmax_ce"))
    }

    /// Evaluates the tape. `train` enables dropout; `rng` drives dropout masks.
    pub fn forward(
        &self,
        params: &ParamSet,
        rng: &mut ChaCha8Rng,
        train: bool,
    ) -> Result<Evaluation, TabError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut dropout_masks: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = match &node.op {
                Op::Const(t) => t.clone(),
                Op::Param(pid) => {
                    let p = params.tensor(*pid);
                    if p.shape() != node.shape.as_slice() {
                        return Err(TabError::Graph(format!(
                            "param {} shape {:?} differs from declared {:?}",
                            params.name(*pid),
                            p.shape(),
                            node.shape
                        )));
                    }
                    p.clone()
                }
                Op::MatMul(a, b) => matmul(&values[a.0], &values[b.0])?,
                Op::MatMulNT(a, b) => matmul_nt(&values[a.0], &values[b.0])?,
                Op::Add(a, b) => zip_map(&values[a.0], &values[b.0], |x, y| x + y),
                Op::AddRow(a, b) => {
                    let (m, bias) = (&values[a.0], &values[b.0]);
                    let cols = m.cols();
                    let mut out = m.clone();
                    for r in 0..m.rows() {
                        for c in 0..cols {
                            out.data_mut()[r * cols + c] += bias.data()[c];
                        }
                    }
                    out
                }
                Op::Sub(a, b) => zip_map(&values[a.0], &values[b.0], |x, y| x - y),
                Op::Mul(a, b) => zip_map(&values[a.0], &values[b.0], |x, y| x * y),
                Op::Scale(a, c) => values[a.0].map(|x| x * c),
                Op::Relu(a) => values[a.0].map(|x| x.max(0.0)),
                Op::Sin(a) => values[a.0].map(f64::sin),
                Op::Cos(a) => values[a.0].map(f64::cos),
                Op::Dropout(a, p) => {
                    if train && *p > 0.0 {
                        let keep = 1.0 - p;
                        let mask: Vec<f64> = (0..values[a.0].numel())
                            .map(|_| if rng.gen::<f64>() < *p { 0.0 } else { 1.0 / keep })
                            .collect();
                        let mut out = values[a.0].clone();
                        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
                            *o *= m;
                        }
                        dropout_masks[idx] = Some(mask);
                        out
                    } else {
                        values[a.0].clone()
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = values[parts[0].0].rows();
                    let total: usize = parts.iter().map(|p| values[p.0].cols()).sum();
                    let mut out = vec![0.0; rows * total];
                    let mut off = 0;
                    for p in parts {
                        let t = &values[p.0];
                        let c = t.cols();
                        for r in 0..rows {
                            out[r * total + off..r * total + off + c]
                                .copy_from_slice(t.row(r));
                        }
                        off += c;
                    }
                    Tensor::matrix(rows, total, out)?
                }
                Op::SliceCols(a, start, end) => {
                    let t = &values[a.0];
                    let w = end - start;
                    let mut out = vec![0.0; t.rows() * w];
                    for r in 0..t.rows() {
                        out[r * w..(r + 1) * w].copy_from_slice(&t.row(r)[*start..*end]);
                    }
                    Tensor::matrix(t.rows(), w, out)?
                }
                Op::EmbedLookup { table, codes } => {
                    let t = &values[table.0];
                    let d = t.cols();
                    let mut out = vec![0.0; codes.len() * d];
                    for (r, &c) in codes.iter().enumerate() {
                        out[r * d..(r + 1) * d].copy_from_slice(t.row(c));
                    }
                    Tensor::matrix(codes.len(), d, out)?
                }
                Op::RowL2Normalize(a) => {
                    let t = &values[a.0];
                    let cols = t.cols();
                    let mut out = t.clone();
                    for r in 0..t.rows() {
                        let norm = t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                        for c in 0..cols {
                            out.data_mut()[r * cols + c] /= norm;
                        }
                    }
                    out
                }
                Op::LogSoftmaxRows(a) => {
                    let t = &values[a.0];
                    let cols = t.cols();
                    let mut out = t.clone();
                    for r in 0..t.rows() {
                        let row = t.row(r);
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
                        for c in 0..cols {
                            out.data_mut()[r * cols + c] = row[c] - lse;
                        }
                    }
                    out
                }
                Op::WeightedSum(a, w) => {
                    let s: f64 = values[a.0]
                        .data()
                        .iter()
                        .zip(w.data())
                        .map(|(x, wv)| x * wv)
                        .sum();
                    Tensor::scalar(s)
                }
                Op::MeanAll(a) => {
                    let t = &values[a.0];
                    Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
                }
                Op::MseMean(a, target) => {
                    let t = &values[a.0];
                    let s: f64 = t
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    Tensor::scalar(s / t.numel() as f64)
                }
                Op::BceWithLogits(a, target) => {
                    let t = &values[a.0];
                    let s: f64 = t
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
                        .sum();
                    Tensor::scalar(s / t.numel() as f64)
                }
                Op::SoftmaxCrossEntropy(a, targets) => {
                    let t = &values[a.0];
                    let cols = t.cols();
                    let mut s = 0.0;
                    for (r, &cls) in targets.iter().enumerate() {
                        let row = t.row(r);
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
                        s += lse - row[cls];
                        let _ = cols;
                    }
                    Tensor::scalar(s / targets.len() as f64)
                }
            };
            if !v.all_finite() {
                return Err(TabError::Graph(format!(
                    "non-finite value at node {idx} ({})",
                    node.name
                )));
            }
            values.push(v);
        }
        Ok(Evaluation { values, dropout_masks })
    }

    /// Accumulates gradients of a scalar loss node w.r.t. every `Param` leaf.
    /// Returns a vector aligned with the `ParamSet`; slots that do not
    /// participate in the loss hold `None`.
    pub fn backward(
        &self,
        eval: &Evaluation,
        loss: NodeId,
        params: &ParamSet,
    ) -> Result<Vec<Option<Tensor>>, TabError> {
        if !eval.values[loss.0].is_scalar() {
            return Err(TabError::Graph("backward: loss node is not scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut param_grads: Vec<Option<Tensor>> = vec![None; params.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Const(_) => {}
                Op::Param(pid) => accumulate_opt(&mut param_grads[*pid], &g),
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, &eval.values[b.0])?;
                    let db = matmul_tn(&eval.values[a.0], &g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNT(a, b) => {
                    let da = matmul(&g, &eval.values[b.0])?;
                    let db = matmul_tn(&g, &eval.values[a.0])?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            db[c] += g.at(r, c);
                        }
                    }
                    let bshape = self.shape(*b).to_vec();
                    accumulate(&mut grads, *b, Tensor::new(bshape, db)?);
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&g, &eval.values[b.0], |gv, bv| gv * bv);
                    let db = zip_map(&g, &eval.values[a.0], |gv, av| gv * av);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| x * c)),
                Op::Relu(a) => {
                    let da = zip_map(&g, &eval.values[a.0], |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, da);
                }
                Op::Sin(a) => {
                    let da = zip_map(&g, &eval.values[a.0], |gv, x| gv * x.cos());
                    accumulate(&mut grads, *a, da);
                }
                Op::Cos(a) => {
                    let da = zip_map(&g, &eval.values[a.0], |gv, x| -gv * x.sin());
                    accumulate(&mut grads, *a, da);
                }
                Op::Dropout(a, _) => match &eval.dropout_masks[idx] {
                    Some(mask) => {
                        let mut da = g;
                        for (dv, m) in da.data_mut().iter_mut().zip(mask) {
                            *dv *= m;
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    None => accumulate(&mut grads, *a, g),
                },
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut off = 0;
                    for p in parts {
                        let c = eval.values[p.0].cols();
                        let mut dp = vec![0.0; rows * c];
                        for r in 0..rows {
                            dp[r * c..(r + 1) * c]
                                .copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        accumulate(&mut grads, *p, Tensor::matrix(rows, c, dp)?);
                        off += c;
                    }
                    let _ = total;
                }
                Op::SliceCols(a, start, _end) => {
                    let src = &eval.values[a.0];
                    let mut da = Tensor::zeros(src.shape().to_vec());
                    let (rows, w, cols) = (g.rows(), g.cols(), src.cols());
                    for r in 0..rows {
                        for c in 0..w {
                            da.data_mut()[r * cols + start + c] = g.at(r, c);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::EmbedLookup { table, codes } => {
                    let t = &eval.values[table.0];
                    let d = t.cols();
                    let mut dt = Tensor::zeros(t.shape().to_vec());
                    for (r, &c) in codes.iter().enumerate() {
                        for j in 0..d {
                            dt.data_mut()[c * d + j] += g.at(r, j);
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::RowL2Normalize(a) => {
                    let x = &eval.values[a.0];
                    let y = &eval.values[idx];
                    let cols = x.cols();
                    let mut da = Tensor::zeros(x.shape().to_vec());
                    for r in 0..x.rows() {
                        let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(yv, gv)| yv * gv).sum();
                        for c in 0..cols {
                            da.data_mut()[r * cols + c] =
                                (g.at(r, c) - y.at(r, c) * dot) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &eval.values[idx];
                    let cols = y.cols();
                    let mut da = Tensor::zeros(y.shape().to_vec());
                    for r in 0..y.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for c in 0..cols {
                            da.data_mut()[r * cols + c] =
                                g.at(r, c) - y.at(r, c).exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::WeightedSum(a, w) => {
                    let gv = g.item();
                    accumulate(&mut grads, *a, w.map(|x| x * gv));
                }
                Op::MeanAll(a) => {
                    let n = eval.values[a.0].numel() as f64;
                    let gv = g.item() / n;
                    let shape = eval.values[a.0].shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::new(shape, vec![gv; n as usize])?);
                }
                Op::MseMean(a, target) => {
                    let x = &eval.values[a.0];
                    let n = x.numel() as f64;
                    let gv = g.item();
                    let da = Tensor::new(
                        x.shape().to_vec(),
                        x.data()
                            .iter()
                            .zip(target.data())
                            .map(|(xv, tv)| gv * 2.0 * (xv - tv) / n)
                            .collect(),
                    )?;
                    accumulate(&mut grads, *a, da);
                }
                Op::BceWithLogits(a, target) => {
                    let x = &eval.values[a.0];
                    let n = x.numel() as f64;
                    let gv = g.item();
                    let da = Tensor::new(
                        x.shape().to_vec(),
                        x.data()
                            .iter()
                            .zip(target.data())
                            .map(|(&xv, &tv)| gv * (sigmoid(xv) - tv) / n)
                            .collect(),
                    )?;
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxCrossEntropy(a, targets) => {
                    let x = &eval.values[a.0];
                    let cols = x.cols();
                    let n = targets.len() as f64;
                    let gv = g.item();
                    let mut da = Tensor::zeros(x.shape().to_vec());
                    for (r, &cls) in targets.iter().enumerate() {
                        let row = x.row(r);
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                        for c in 0..cols {
                            let p = (row[c] - mx).exp() / denom;
                            let delta = if c == cls { 1.0 } else { 0.0 };
                            da.data_mut()[r * cols + c] = gv * (p - delta) / n;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
            }
        }
        Ok(param_grads)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shape")
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    accumulate_opt(&mut grads[id.0], &g);
}

fn accumulate_opt(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g.clone()),
    }
}
