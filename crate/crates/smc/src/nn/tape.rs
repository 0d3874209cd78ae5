//! Define-by-run computation tape with reverse-mode gradients.
//!
//! Values are computed eagerly as nodes are appended, so the tape order is
//! already topological and `backward` is a single reverse sweep. The op set
//! is fixed to what the codec's three networks need; every backward formula
//! here is covered by a finite-difference oracle in the test suite.
//!
//! Batch convention: a batch of sequences is folded into rows, item-major
//! (item 0 rows, then item 1 rows, ...). Ops that need the batch structure
//! (attention, recurrent steps) take explicit row indices or counts instead
//! of a third tensor dimension.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul_acc, matmul_transa_acc, matmul_transb_acc, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [m,k]·[k,n]
    MatMul(NodeId, NodeId),
    /// [m,k]·[n,k]ᵀ
    MatMulTransB(NodeId, NodeId),
    /// rhs broadcast: same shape, [1,c] over rows, or [r,1] over cols
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Silu(NodeId),
    /// Row-wise (x−μ)/sqrt(σ²+eps); aux caches 1/sqrt per row.
    LayerNormCore(NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    /// Each row repeated k consecutive times.
    RepeatRows(NodeId, usize),
    StackRows(Vec<NodeId>),
    /// Fused LSTM cell: (x, h_prev, c_prev, w, b) → [B, 2H] as [h | c].
    /// aux caches (i, f, g, o, tanh_c) gate activations.
    LstmCell {
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w: NodeId,
        b: NodeId,
    },
    /// Value injected externally; gradient passes through unchanged.
    StraightThrough(NodeId),
    /// Mean of squared differences → scalar.
    Mse(NodeId, NodeId),
    /// Sum of squared differences → scalar.
    SumSqDiff(NodeId, NodeId),
    /// Mean softmax cross-entropy of logit rows against integer targets;
    /// aux caches the softmax probabilities.
    CrossEntropy(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    aux: Vec<f64>,
    /// Bound parameter name when this leaf mirrors a ParamStore entry.
    param: Option<String>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
}

/// How the rhs of an elementwise op lines up with the lhs.
#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    RowVec, // [1, c]
    ColVec, // [r, 1]
}

fn broadcast_kind(op: &str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape == b.shape {
        return Ok(Broadcast::Same);
    }
    if b.rows() == 1 && b.cols() == a.cols() {
        return Ok(Broadcast::RowVec);
    }
    if b.cols() == 1 && b.rows() == a.rows() {
        return Ok(Broadcast::ColVec);
    }
    Err(shape_err(
        op,
        format!("cannot broadcast {:?} against {:?}", b.shape, a.shape),
    ))
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward target w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> Result<&Tensor> {
        if !self.backward_done {
            return Err(Error::Config(
                "gradient requested before backward ran".into(),
            ));
        }
        Ok(self.nodes[id.0]
            .grad
            .as_ref()
            .expect("grads allocated during backward"))
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.push_aux(op, value, Vec::new())
    }

    fn push_aux(&mut self, op: Op, value: Tensor, aux: Vec<f64>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            aux,
            param: None,
        });
        id
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Leaf bound to a named parameter; its gradient is collected by
    /// [`Tape::param_grads`] after backward.
    pub fn param_leaf(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.leaf(value);
        self.nodes[id.0].param = Some(name.to_string());
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("[{m},{k}] · [{k2},{n}] inner dims differ"),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, &ta.data, &tb.data, m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?))
    }

    pub fn matmul_transb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n, k2) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(shape_err(
                "matmul_transb",
                format!("[{m},{k}] · [{n},{k2}]ᵀ inner dims differ"),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_transb_acc(&mut out, &ta.data, &tb.data, m, k, n);
        Ok(self.push(Op::MatMulTransB(a, b), Tensor::new(vec![m, n], out)?))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let kind = broadcast_kind("add", self.value(a), self.value(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = ta.data.clone();
        apply_broadcast(&mut out, &tb.data, r, c, kind, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), Tensor::new(ta.shape.clone(), out)?))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let kind = broadcast_kind("mul", self.value(a), self.value(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = ta.data.clone();
        apply_broadcast(&mut out, &tb.data, r, c, kind, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), Tensor::new(ta.shape.clone(), out)?))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let ta = self.value(a);
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|v| v * s).collect(),
        };
        self.push(Op::Scale(a, s), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.map_unary(a, |x| x.tanh());
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.map_unary(a, sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let sig: Vec<f64> = ta.data.iter().map(|&x| sigmoid(x)).collect();
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&sig).map(|(x, s)| x * s).collect(),
        };
        self.push_aux(Op::Silu(a), out, sig)
    }

    fn map_unary(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn layer_norm_core(&mut self, a: NodeId, eps: f64) -> NodeId {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = ta.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv;
            }
        }
        self.push_aux(
            Op::LayerNormCore(a),
            Tensor {
                shape: ta.shape.clone(),
                data: out,
            },
            inv_std,
        )
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = ta.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out[i * c + j] /= z;
            }
        }
        self.push(
            Op::Softmax(a),
            Tensor {
                shape: ta.shape.clone(),
                data: out,
            },
        )
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(shape_err(
                "concat_cols",
                format!("row counts differ: {} vs {}", ta.rows(), tb.rows()),
            ));
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; r * (ca + cb)];
        for i in 0..r {
            out[i * (ca + cb)..i * (ca + cb) + ca].copy_from_slice(ta.row(i));
            out[i * (ca + cb) + ca..(i + 1) * (ca + cb)].copy_from_slice(tb.row(i));
        }
        Ok(self.push(
            Op::ConcatCols(a, b),
            Tensor::new(vec![r, ca + cb], out)?,
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        if start + len > c {
            return Err(shape_err(
                "slice_cols",
                format!("range {start}..{} out of {c} cols", start + len),
            ));
        }
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&ta.row(i)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols(a, start, len), Tensor::new(vec![r, len], out)?))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        if start + len > r {
            return Err(shape_err(
                "slice_rows",
                format!("range {start}..{} out of {r} rows", start + len),
            ));
        }
        let out = ta.data[start * c..(start + len) * c].to_vec();
        Ok(self.push(Op::SliceRows(a, start, len), Tensor::new(vec![len, c], out)?))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; indices.len() * c];
        for (k, &i) in indices.iter().enumerate() {
            if i >= r {
                return Err(shape_err(
                    "gather_rows",
                    format!("index {i} out of {r} rows"),
                ));
            }
            out[k * c..(k + 1) * c].copy_from_slice(ta.row(i));
        }
        Ok(self.push(
            Op::GatherRows(a, indices.to_vec()),
            Tensor::new(vec![indices.len(), c], out)?,
        ))
    }

    pub fn repeat_rows(&mut self, a: NodeId, k: usize) -> NodeId {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * k * c];
        for i in 0..r {
            for rep in 0..k {
                out[(i * k + rep) * c..(i * k + rep + 1) * c].copy_from_slice(ta.row(i));
            }
        }
        self.push(
            Op::RepeatRows(a, k),
            Tensor {
                shape: vec![r * k, c],
                data: out,
            },
        )
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(shape_err("stack_rows", "no inputs".into()));
        }
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err(
                    "stack_rows",
                    format!("col counts differ: {} vs {c}", t.cols()),
                ));
            }
            rows += t.rows();
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(&self.value(p).data);
        }
        Ok(self.push(
            Op::StackRows(parts.to_vec()),
            Tensor::new(vec![rows, c], out)?,
        ))
    }

    /// Fused LSTM cell step. `w` is [(I+H), 4H] with gate order (i, f, g, o),
    /// `b` is [1, 4H]. Returns [B, 2H] holding [h | c].
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let (tx, th, tc, tw, tb) = (
            self.value(x),
            self.value(h),
            self.value(c),
            self.value(w),
            self.value(b),
        );
        let (bsz, in_dim, hid) = (tx.rows(), tx.cols(), th.cols());
        if th.rows() != bsz || tc.rows() != bsz || tc.cols() != hid {
            return Err(shape_err("lstm_cell", "state shapes inconsistent".into()));
        }
        if tw.rows() != in_dim + hid || tw.cols() != 4 * hid || tb.cols() != 4 * hid {
            return Err(shape_err(
                "lstm_cell",
                format!(
                    "weights [{},{}] do not match input {in_dim} + hidden {hid}",
                    tw.rows(),
                    tw.cols()
                ),
            ));
        }
        let mut z = vec![0.0; bsz * 4 * hid];
        for i in 0..bsz {
            z[i * 4 * hid..(i + 1) * 4 * hid].copy_from_slice(&tb.data);
        }
        matmul_acc(&mut z, &tx.data, &tw.data[..in_dim * 4 * hid], bsz, in_dim, 4 * hid);
        matmul_acc(&mut z, &th.data, &tw.data[in_dim * 4 * hid..], bsz, hid, 4 * hid);

        let mut value = vec![0.0; bsz * 2 * hid];
        // aux layout: per sample, 5 blocks of H: i, f, g, o, tanh_c
        let mut aux = vec![0.0; bsz * 5 * hid];
        for s in 0..bsz {
            let zr = &z[s * 4 * hid..(s + 1) * 4 * hid];
            let cr = tc.row(s);
            for j in 0..hid {
                let ig = sigmoid(zr[j]);
                let fg = sigmoid(zr[hid + j]);
                let gg = zr[2 * hid + j].tanh();
                let og = sigmoid(zr[3 * hid + j]);
                let c_new = fg * cr[j] + ig * gg;
                let tc_new = c_new.tanh();
                value[s * 2 * hid + j] = og * tc_new;
                value[s * 2 * hid + hid + j] = c_new;
                let a = &mut aux[s * 5 * hid..];
                a[j] = ig;
                a[hid + j] = fg;
                a[2 * hid + j] = gg;
                a[3 * hid + j] = og;
                a[4 * hid + j] = tc_new;
            }
        }
        Ok(self.push_aux(
            Op::LstmCell { x, h, c, w, b },
            Tensor::new(vec![bsz, 2 * hid], value)?,
            aux,
        ))
    }

    /// Replace the forward value while passing gradients straight through to
    /// `source`; the quantization hook.
    pub fn straight_through(&mut self, source: NodeId, value: Tensor) -> Result<NodeId> {
        if self.value(source).shape != value.shape {
            return Err(shape_err(
                "straight_through",
                format!(
                    "value shape {:?} differs from source {:?}",
                    value.shape,
                    self.value(source).shape
                ),
            ));
        }
        Ok(self.push(Op::StraightThrough(source), value))
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(
                "mse",
                format!("shapes differ: {:?} vs {:?}", ta.shape, tb.shape),
            ));
        }
        let n = ta.len() as f64;
        let s: f64 = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(s / n)))
    }

    pub fn sum_sq_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(
                "sum_sq_diff",
                format!("shapes differ: {:?} vs {:?}", ta.shape, tb.shape),
            ));
        }
        let s: f64 = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::SumSqDiff(a, b), Tensor::scalar(s)))
    }

    /// Mean −log softmax(logits)[target] over rows, computed via the
    /// log-sum-exp identity so large logits stay finite.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let t = self.value(logits);
        let (r, c) = (t.rows(), t.cols());
        if targets.len() != r {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {r} logit rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&j| j >= c) {
            return Err(shape_err(
                "cross_entropy",
                format!("target {bad} out of {c} classes"),
            ));
        }
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let row = t.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                probs[i * c + j] /= z;
            }
            loss += z.ln() + mx - row[targets[i]];
        }
        Ok(self.push_aux(
            Op::CrossEntropy(logits, targets.to_vec()),
            Tensor::scalar(loss / r as f64),
            probs,
        ))
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Tensor {
        let shape = self.nodes[id.0].value.shape.clone();
        self.nodes[id.0]
            .grad
            .get_or_insert_with(|| Tensor::zeros(&shape))
    }

    fn add_grad(&mut self, id: NodeId, g: &[f64]) {
        let buf = self.grad_buf(id);
        for (d, s) in buf.data.iter_mut().zip(g) {
            *d += s;
        }
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Config("backward already ran on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward target must be scalar, got {:?}",
                self.value(loss).shape
            )));
        }
        // Ensure every node has a grad buffer so unused params read as 0.
        for i in 0..self.nodes.len() {
            self.grad_buf(NodeId(i));
        }
        self.nodes[loss.0].grad.as_mut().unwrap().data[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let g = self.nodes[idx].grad.as_ref().unwrap().data.clone();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut da = vec![0.0; m * k];
                    matmul_transb_acc(&mut da, &g, &tb.data, m, n, k);
                    let mut db = vec![0.0; k * n];
                    matmul_transa_acc(&mut db, &ta.data, &g, m, k, n);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::MatMulTransB(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                    let mut da = vec![0.0; m * k];
                    matmul_acc(&mut da, &g, &tb.data, m, n, k);
                    let mut db = vec![0.0; n * k];
                    matmul_transa_acc(&mut db, &g, &ta.data, m, n, k);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Add(a, b) => {
                    let (r, c) = {
                        let t = &self.nodes[a.0].value;
                        (t.rows(), t.cols())
                    };
                    let kind = broadcast_kind("add", &self.nodes[a.0].value, &self.nodes[b.0].value)
                        .expect("validated at forward");
                    self.add_grad(a, &g);
                    let db = reduce_broadcast(&g, r, c, kind);
                    self.add_grad(b, &db);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (r, c) = (ta.rows(), ta.cols());
                    let kind = broadcast_kind("mul", ta, tb).expect("validated at forward");
                    let mut da = g.clone();
                    apply_broadcast(&mut da, &tb.data, r, c, kind, |x, y| x * y);
                    let mut gb_full = g.clone();
                    for (v, a_val) in gb_full.iter_mut().zip(&ta.data) {
                        *v *= a_val;
                    }
                    let db = reduce_broadcast(&gb_full, r, c, kind);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Scale(a, s) => {
                    let da: Vec<f64> = g.iter().map(|v| v * s).collect();
                    self.add_grad(a, &da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value.data;
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    self.add_grad(a, &da);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value.data;
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    self.add_grad(a, &da);
                }
                Op::Silu(a) => {
                    let x = &self.nodes[a.0].value.data;
                    let sig = &self.nodes[idx].aux;
                    let da: Vec<f64> = g
                        .iter()
                        .zip(x.iter().zip(sig))
                        .map(|(g, (x, s))| g * (s + x * s * (1.0 - s)))
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::LayerNormCore(a) => {
                    let y = &self.nodes[idx].value;
                    let inv_std = &self.nodes[idx].aux;
                    let (r, c) = (y.rows(), y.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = &g[i * c..(i + 1) * c];
                        let mean_g = gr.iter().sum::<f64>() / c as f64;
                        let mean_gy =
                            gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                        for j in 0..c {
                            da[i * c + j] = inv_std[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[idx].value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            da[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.nodes[a.0].value.cols(), self.nodes[b.0].value.cols());
                    let r = self.nodes[a.0].value.rows();
                    let mut da = vec![0.0; r * ca];
                    let mut db = vec![0.0; r * cb];
                    for i in 0..r {
                        da[i * ca..(i + 1) * ca]
                            .copy_from_slice(&g[i * (ca + cb)..i * (ca + cb) + ca]);
                        db[i * cb..(i + 1) * cb]
                            .copy_from_slice(&g[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                    }
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::SliceCols(a, start, len) => {
                    let ta = &self.nodes[a.0].value;
                    let (r, c) = (ta.rows(), ta.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        da[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    self.add_grad(a, &da);
                }
                Op::SliceRows(a, start, len) => {
                    let c = self.nodes[a.0].value.cols();
                    let r = self.nodes[a.0].value.rows();
                    let mut da = vec![0.0; r * c];
                    da[start * c..(start + len) * c].copy_from_slice(&g);
                    self.add_grad(a, &da);
                }
                Op::GatherRows(a, ref indices) => {
                    let (r, c) = {
                        let t = &self.nodes[a.0].value;
                        (t.rows(), t.cols())
                    };
                    let mut da = vec![0.0; r * c];
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            da[i * c + j] += g[k * c + j];
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::RepeatRows(a, k) => {
                    let (r, c) = {
                        let t = &self.nodes[a.0].value;
                        (t.rows(), t.cols())
                    };
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for rep in 0..k {
                            for j in 0..c {
                                da[i * c + j] += g[(i * k + rep) * c + j];
                            }
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::StackRows(ref parts) => {
                    let parts = parts.clone();
                    let c = self.nodes[idx].value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let r = self.nodes[p.0].value.rows();
                        let slice = g[offset * c..(offset + r) * c].to_vec();
                        self.add_grad(p, &slice);
                        offset += r;
                    }
                }
                Op::LstmCell { x, h, c, w, b } => {
                    self.backward_lstm_cell(idx, &g, x, h, c, w, b);
                }
                Op::StraightThrough(a) => {
                    self.add_grad(a, &g);
                }
                Op::Mse(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let n = ta.len() as f64;
                    let gs = g[0] * 2.0 / n;
                    let da: Vec<f64> = ta
                        .data
                        .iter()
                        .zip(&tb.data)
                        .map(|(x, y)| gs * (x - y))
                        .collect();
                    let db: Vec<f64> = da.iter().map(|v| -v).collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::SumSqDiff(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let gs = g[0] * 2.0;
                    let da: Vec<f64> = ta
                        .data
                        .iter()
                        .zip(&tb.data)
                        .map(|(x, y)| gs * (x - y))
                        .collect();
                    let db: Vec<f64> = da.iter().map(|v| -v).collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::CrossEntropy(a, targets) => {
                    let probs = self.nodes[idx].aux.clone();
                    let (r, c) = {
                        let t = &self.nodes[a.0].value;
                        (t.rows(), t.cols())
                    };
                    let gs = g[0] / r as f64;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            let one = if j == targets[i] { 1.0 } else { 0.0 };
                            da[i * c + j] = gs * (probs[i * c + j] - one);
                        }
                    }
                    self.add_grad(a, &da);
                }
            }
        }
        self.backward_done = true;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_lstm_cell(
        &mut self,
        idx: usize,
        g: &[f64],
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w: NodeId,
        b: NodeId,
    ) {
        let (bsz, in_dim, hid) = {
            let tx = &self.nodes[x.0].value;
            let th = &self.nodes[h.0].value;
            (tx.rows(), tx.cols(), th.cols())
        };
        let aux = self.nodes[idx].aux.clone();
        let c_prev = self.nodes[c.0].value.data.clone();

        // Pre-activation gradient dz, then matrix products for dw/dx/dh.
        let mut dz = vec![0.0; bsz * 4 * hid];
        let mut dc_prev = vec![0.0; bsz * hid];
        for s in 0..bsz {
            let a = &aux[s * 5 * hid..];
            for j in 0..hid {
                let (ig, fg, gg, og, tc_new) =
                    (a[j], a[hid + j], a[2 * hid + j], a[3 * hid + j], a[4 * hid + j]);
                let gh = g[s * 2 * hid + j];
                let gc_direct = g[s * 2 * hid + hid + j];
                let gc = gc_direct + gh * og * (1.0 - tc_new * tc_new);
                let go = gh * tc_new;
                let gi = gc * gg;
                let gg_grad = gc * ig;
                let gf = gc * c_prev[s * hid + j];
                dc_prev[s * hid + j] = gc * fg;
                let z = &mut dz[s * 4 * hid..(s + 1) * 4 * hid];
                z[j] = gi * ig * (1.0 - ig);
                z[hid + j] = gf * fg * (1.0 - fg);
                z[2 * hid + j] = gg_grad * (1.0 - gg * gg);
                z[3 * hid + j] = go * og * (1.0 - og);
            }
        }

        let tx = self.nodes[x.0].value.data.clone();
        let th = self.nodes[h.0].value.data.clone();
        let tw = self.nodes[w.0].value.data.clone();

        // dw = [x|h]ᵀ · dz, accumulated blockwise without materializing [x|h].
        let mut dw = vec![0.0; (in_dim + hid) * 4 * hid];
        matmul_transa_acc(&mut dw[..in_dim * 4 * hid], &tx, &dz, bsz, in_dim, 4 * hid);
        matmul_transa_acc(&mut dw[in_dim * 4 * hid..], &th, &dz, bsz, hid, 4 * hid);
        let mut db = vec![0.0; 4 * hid];
        for s in 0..bsz {
            for j in 0..4 * hid {
                db[j] += dz[s * 4 * hid + j];
            }
        }
        let mut dx = vec![0.0; bsz * in_dim];
        matmul_transb_acc(&mut dx, &dz, &tw[..in_dim * 4 * hid], bsz, 4 * hid, in_dim);
        let mut dh = vec![0.0; bsz * hid];
        matmul_transb_acc(&mut dh, &dz, &tw[in_dim * 4 * hid..], bsz, 4 * hid, hid);

        self.add_grad(x, &dx);
        self.add_grad(h, &dh);
        self.add_grad(c, &dc_prev);
        self.add_grad(w, &dw);
        self.add_grad(b, &db);
    }

    /// Gradients of all bound parameters, in binding order.
    pub fn param_grads(&self) -> Result<Vec<(&str, &Tensor)>> {
        if !self.backward_done {
            return Err(Error::Config(
                "parameter gradients requested before backward ran".into(),
            ));
        }
        Ok(self
            .nodes
            .iter()
            .filter_map(|n| {
                n.param
                    .as_deref()
                    .map(|name| (name, n.grad.as_ref().unwrap()))
            })
            .collect())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn apply_broadcast(
    out: &mut [f64],
    rhs: &[f64],
    r: usize,
    c: usize,
    kind: Broadcast,
    f: impl Fn(f64, f64) -> f64,
) {
    match kind {
        Broadcast::Same => {
            for (o, &v) in out.iter_mut().zip(rhs) {
                *o = f(*o, v);
            }
        }
        Broadcast::RowVec => {
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = f(out[i * c + j], rhs[j]);
                }
            }
        }
        Broadcast::ColVec => {
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = f(out[i * c + j], rhs[i]);
                }
            }
        }
    }
}

/// Sum a full-shaped gradient down to the rhs broadcast shape.
fn reduce_broadcast(g: &[f64], r: usize, c: usize, kind: Broadcast) -> Vec<f64> {
    match kind {
        Broadcast::Same => g.to_vec(),
        Broadcast::RowVec => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += g[i * c + j];
                }
            }
            out
        }
        Broadcast::ColVec => {
            let mut out = vec![0.0; r];
            for i in 0..r {
                for j in 0..c {
                    out[i] += g[i * c + j];
                }
            }
            out
        }
    }
}

/// Map of parameter name → accumulated gradient, summed in binding order.
pub fn collect_param_grads(tape: &Tape) -> Result<HashMap<String, Tensor>> {
    let mut out: HashMap<String, Tensor> = HashMap::new();
    for (name, grad) in tape.param_grads()? {
        match out.get_mut(name) {
            Some(acc) => {
                for (d, s) in acc.data.iter_mut().zip(&grad.data) {
                    *d += s;
                }
            }
            None => {
                out.insert(name.to_string(), grad.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.tanh(x);
        let zero = tape.leaf(Tensor::scalar(0.0));
        // loss = sum((y - 0)^2) has gradient 2y·y' = 0 at x=0, so instead
        // regress y against a constant 1 to leave dy/dx visible: use identity
        // loss L = sum_sq_diff(y, 0) is no good; use L = y itself via
        // sum_sq_diff(y+0.5, 0) ... simplest: L = mse(y, c) with c=-1 gives
        // dL/dx = 2(y+1)(1-y²)/1 = 2 at x=0 → dy/dx = 1 recovered as dL/2.
        let minus_one = tape.leaf(Tensor::scalar(-1.0));
        let loss = tape.mse(y, minus_one).unwrap();
        let _ = zero;
        tape.backward(loss).unwrap();
        let dx = tape.grad(x).unwrap().item();
        assert!((dx - 2.0).abs() < 1e-12, "dL/dx = {dx}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.3).collect()).unwrap());
        let y = tape.softmax(x);
        for i in 0..3 {
            let s: f64 = tape.value(y).row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 5], vec![3.7; 10]).unwrap());
        let y = tape.layer_norm_core(x, 1e-5);
        for v in &tape.value(y).data {
            assert!(v.abs() < 1e-3);
        }
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param_leaf("used", Tensor::scalar(2.0));
        let unused = tape.param_leaf("unused", Tensor::scalar(5.0));
        let t = tape.leaf(Tensor::scalar(0.0));
        let loss = tape.sum_sq_diff(x, t).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).unwrap().data, vec![0.0]);
        assert_eq!(tape.grad(x).unwrap().data, vec![4.0]);
    }

    #[test]
    fn grad_before_backward_is_state_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.grad(x), Err(Error::Config(_))));
    }

    #[test]
    fn double_backward_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let t = tape.leaf(Tensor::scalar(0.0));
        let loss = tape.mse(x, t).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Config(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[4, 5]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(matches!(err, Error::Shape(ref m) if m.starts_with("matmul:")));
        let err = tape.add(a, b).unwrap_err();
        assert!(matches!(err, Error::Shape(ref m) if m.starts_with("add:")));
    }

    #[test]
    fn straight_through_passes_gradient() {
        let mut tape = Tape::new();
        let x = tape.param_leaf("x", Tensor::new(vec![1, 2], vec![0.3, 0.7]).unwrap());
        let q = tape
            .straight_through(x, Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap())
            .unwrap();
        let t = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let loss = tape.sum_sq_diff(q, t).unwrap();
        tape.backward(loss).unwrap();
        // d/dq sum((q-t)^2) = 2(q-t) = [-2, 0], forwarded to x unchanged.
        assert_eq!(tape.grad(x).unwrap().data, vec![-2.0, 0.0]);
    }
}
