//! Layer builders: parameter initialization plus tape-graph application.
//!
//! A layer owns nothing but its name and dimensions; parameters live in a
//! [`ParamStore`] under `{name}.{field}` keys so checkpoints stay flat.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::adam::ParamStore;
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Silu,
}

fn apply_activation(tape: &mut Tape, x: NodeId, act: Activation) -> NodeId {
    match act {
        Activation::Linear => x,
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Silu => tape.silu(x),
    }
}

/// Fully connected layer: x·W + b followed by an activation.
#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, activation: Activation) -> Dense {
        Dense {
            name: name.to_string(),
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let std = 1.0 / (self.in_dim as f64).sqrt();
        store.insert(
            &format!("{}.w", self.name),
            Tensor::randn(&[self.in_dim, self.out_dim], std, rng),
        )?;
        store.insert(
            &format!("{}.b", self.name),
            Tensor::zeros(&[1, self.out_dim]),
        )
    }

    pub fn apply(&self, store: &ParamStore, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let w = store.bind(tape, &format!("{}.w", self.name))?;
        let b = store.bind(tape, &format!("{}.b", self.name))?;
        let xw = tape.matmul(x, w)?;
        let pre = tape.add(xw, b)?;
        Ok(apply_activation(tape, pre, self.activation))
    }
}

/// Row-wise layer normalization with learned affine (gamma, beta).
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            name: name.to_string(),
            dim,
            eps: 1e-5,
        }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(
            &format!("{}.gamma", self.name),
            Tensor::new(vec![1, self.dim], vec![1.0; self.dim])?,
        )?;
        store.insert(&format!("{}.beta", self.name), Tensor::zeros(&[1, self.dim]))
    }

    pub fn apply(&self, store: &ParamStore, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let gamma = store.bind(tape, &format!("{}.gamma", self.name))?;
        let beta = store.bind(tape, &format!("{}.beta", self.name))?;
        let norm = tape.layer_norm_core(x, self.eps);
        let scaled = tape.mul(norm, gamma)?;
        tape.add(scaled, beta)
    }
}

/// Bidirectional LSTM over item-major batched sequences.
///
/// Input is [batch·steps, in_dim] with item rows contiguous; output is
/// [batch·steps, 2·hidden] in the same layout, forward direction in the
/// first `hidden` columns.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(name: &str, in_dim: usize, hidden: usize) -> BiLstm {
        BiLstm {
            name: name.to_string(),
            in_dim,
            hidden,
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let std = 1.0 / ((self.in_dim + self.hidden) as f64).sqrt();
        for dir in ["fw", "bw"] {
            store.insert(
                &format!("{}.{dir}.w", self.name),
                Tensor::randn(&[self.in_dim + self.hidden, 4 * self.hidden], std, rng),
            )?;
            // Forget-gate bias starts at 1 so early training keeps state.
            let mut bias = vec![0.0; 4 * self.hidden];
            bias[self.hidden..2 * self.hidden].fill(1.0);
            store.insert(
                &format!("{}.{dir}.b", self.name),
                Tensor::new(vec![1, 4 * self.hidden], bias)?,
            )?;
        }
        Ok(())
    }

    fn run_direction(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: NodeId,
        batch: usize,
        steps: usize,
        dir: &str,
    ) -> Result<NodeId> {
        let w = store.bind(tape, &format!("{}.{dir}.w", self.name))?;
        let b = store.bind(tape, &format!("{}.{dir}.b", self.name))?;
        let mut h = tape.leaf(Tensor::zeros(&[batch, self.hidden]));
        let mut c = tape.leaf(Tensor::zeros(&[batch, self.hidden]));
        // outputs[t] holds the hidden state at true timestep t.
        let mut outputs = vec![NodeId(0); steps];
        let order: Vec<usize> = if dir == "fw" {
            (0..steps).collect()
        } else {
            (0..steps).rev().collect()
        };
        for t in order {
            let idx: Vec<usize> = (0..batch).map(|i| i * steps + t).collect();
            let x_t = tape.gather_rows(x, &idx)?;
            let cell = tape.lstm_cell(x_t, h, c, w, b)?;
            h = tape.slice_cols(cell, 0, self.hidden)?;
            c = tape.slice_cols(cell, self.hidden, self.hidden)?;
            outputs[t] = h;
        }
        // Stack is [t, item] major; permute back to item-major rows.
        let stacked = tape.stack_rows(&outputs)?;
        let perm: Vec<usize> = (0..batch)
            .flat_map(|i| (0..steps).map(move |t| t * batch + i))
            .collect();
        tape.gather_rows(stacked, &perm)
    }

    pub fn apply(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: NodeId,
        batch: usize,
        steps: usize,
    ) -> Result<NodeId> {
        let rows = tape.value(x).rows();
        if rows != batch * steps {
            return Err(Error::Shape(format!(
                "bilstm: input has {rows} rows, expected batch {batch} × steps {steps}"
            )));
        }
        let fw = self.run_direction(store, tape, x, batch, steps, "fw")?;
        let bw = self.run_direction(store, tape, x, batch, steps, "bw")?;
        tape.concat_cols(fw, bw)
    }
}

/// Multi-head cross-attention from a query sequence onto a key/value
/// sequence, batched item-major. `query_dim` must divide evenly by `heads`.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub name: String,
    pub query_dim: usize,
    pub kv_dim: usize,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new(name: &str, query_dim: usize, kv_dim: usize, heads: usize) -> Result<CrossAttention> {
        if heads == 0 || query_dim % heads != 0 {
            return Err(Error::Config(format!(
                "cross_attention {name:?}: query_dim {query_dim} not divisible by heads {heads}"
            )));
        }
        Ok(CrossAttention {
            name: name.to_string(),
            query_dim,
            kv_dim,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.query_dim / self.heads
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let inner = self.heads * self.head_dim();
        let sq = 1.0 / (self.query_dim as f64).sqrt();
        let skv = 1.0 / (self.kv_dim as f64).sqrt();
        store.insert(
            &format!("{}.wq", self.name),
            Tensor::randn(&[self.query_dim, inner], sq, rng),
        )?;
        store.insert(
            &format!("{}.wk", self.name),
            Tensor::randn(&[self.kv_dim, inner], skv, rng),
        )?;
        store.insert(
            &format!("{}.wv", self.name),
            Tensor::randn(&[self.kv_dim, inner], skv, rng),
        )?;
        store.insert(
            &format!("{}.wo", self.name),
            Tensor::randn(&[inner, self.query_dim], 1.0 / (inner as f64).sqrt(), rng),
        )
    }

    /// `q_in` is [batch·q_steps, query_dim]; `kv_in` is [batch·kv_steps, kv_dim].
    pub fn apply(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        q_in: NodeId,
        kv_in: NodeId,
        batch: usize,
        q_steps: usize,
        kv_steps: usize,
    ) -> Result<NodeId> {
        if tape.value(q_in).rows() != batch * q_steps {
            return Err(Error::Shape(format!(
                "cross_attention: query rows {} ≠ batch {batch} × steps {q_steps}",
                tape.value(q_in).rows()
            )));
        }
        if tape.value(kv_in).rows() != batch * kv_steps {
            return Err(Error::Shape(format!(
                "cross_attention: key/value rows {} ≠ batch {batch} × steps {kv_steps}",
                tape.value(kv_in).rows()
            )));
        }
        let wq = store.bind(tape, &format!("{}.wq", self.name))?;
        let wk = store.bind(tape, &format!("{}.wk", self.name))?;
        let wv = store.bind(tape, &format!("{}.wv", self.name))?;
        let wo = store.bind(tape, &format!("{}.wo", self.name))?;
        let q = tape.matmul(q_in, wq)?;
        let k = tape.matmul(kv_in, wk)?;
        let v = tape.matmul(kv_in, wv)?;

        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut per_item = Vec::with_capacity(batch);
        for item in 0..batch {
            let q_item = tape.slice_rows(q, item * q_steps, q_steps)?;
            let k_item = tape.slice_rows(k, item * kv_steps, kv_steps)?;
            let v_item = tape.slice_rows(v, item * kv_steps, kv_steps)?;
            let mut head_outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qs = tape.slice_cols(q_item, h * dh, dh)?;
                let ks = tape.slice_cols(k_item, h * dh, dh)?;
                let vs = tape.slice_cols(v_item, h * dh, dh)?;
                let logits = tape.matmul_transb(qs, ks)?;
                let scaled = tape.scale(logits, scale);
                let attn = tape.softmax(scaled);
                head_outs.push(tape.matmul(attn, vs)?);
            }
            let mut joined = head_outs[0];
            for &h in &head_outs[1..] {
                joined = tape.concat_cols(joined, h)?;
            }
            per_item.push(joined);
        }
        let all = tape.stack_rows(&per_item)?;
        tape.matmul(all, wo)
    }
}
