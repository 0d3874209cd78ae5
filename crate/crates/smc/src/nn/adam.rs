//! Named parameter storage and the Adam update rule.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warm-up: effective lr at step s ≤ W is lr·s/W. 0 disables.
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
        }
    }
}

#[derive(Clone)]
struct ParamEntry {
    name: String,
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Parameters with per-parameter Adam moments and a shared step counter.
/// Iteration order is insertion order everywhere, which keeps updates and
/// checkpoints deterministic.
#[derive(Default, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let n = value.len();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].value)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    /// Overwrite a parameter value in place (shape must match). Moments are
    /// kept; used for EMA codebook writes which bypass the gradient path.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))?;
        if self.entries[i].value.shape != value.shape {
            return Err(Error::Shape(format!(
                "parameter {name:?} shape {:?} cannot be replaced by {:?}",
                self.entries[i].value.shape, value.shape
            )));
        }
        self.entries[i].value = value;
        Ok(())
    }

    /// Bind a parameter into a tape as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape, name: &str) -> Result<NodeId> {
        Ok(tape.param_leaf(name, self.get(name)?.clone()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// CRC32 over all parameter values in insertion order; detects any drift
    /// in tensors that are supposed to stay frozen.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for v in &e.value.data {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }

    /// One Adam step with bias correction and optional linear warm-up.
    /// Parameters absent from `grads` are treated as having zero gradient.
    pub fn adam_step(&mut self, grads: &HashMap<String, Tensor>, cfg: &AdamConfig) -> Result<()> {
        self.step += 1;
        let s = self.step;
        let warm = if cfg.warmup_steps > 0 {
            (s as f64 / cfg.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let lr = cfg.lr * warm;
        let bc1 = 1.0 - cfg.beta1.powi(s as i32);
        let bc2 = 1.0 - cfg.beta2.powi(s as i32);
        for e in &mut self.entries {
            let zero;
            let g = match grads.get(&e.name) {
                Some(t) => {
                    if t.shape != e.value.shape {
                        return Err(Error::Shape(format!(
                            "gradient for {name:?} has shape {got:?}, parameter is {want:?}",
                            name = e.name,
                            got = t.shape,
                            want = e.value.shape
                        )));
                    }
                    &t.data
                }
                None => {
                    zero = vec![0.0; e.value.len()];
                    &zero
                }
            };
            for i in 0..e.value.len() {
                if !g[i].is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for parameter {:?}",
                        e.name
                    )));
                }
                e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
                e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = e.m[i] / bc1;
                let v_hat = e.v[i] / bc2;
                e.value.data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Export (name, shape, data) triples for checkpointing, including the
    /// optimizer moments, in insertion order.
    pub fn export_records(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::with_capacity(self.entries.len() * 3 + 1);
        for e in &self.entries {
            out.push((e.name.clone(), e.value.shape.clone(), e.value.data.clone()));
            out.push((
                format!("optim.m.{}", e.name),
                e.value.shape.clone(),
                e.m.clone(),
            ));
            out.push((
                format!("optim.v.{}", e.name),
                e.value.shape.clone(),
                e.v.clone(),
            ));
        }
        out.push(("optim.step".to_string(), vec![1, 1], vec![self.step as f64]));
        out
    }

    /// Rebuild a store from checkpoint records written by `export_records`.
    pub fn from_records(records: &[(String, Vec<usize>, Vec<f64>)]) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let by_name: HashMap<&str, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.0.as_str(), i))
            .collect();
        for (name, shape, data) in records {
            if name.starts_with("optim.") {
                continue;
            }
            store.insert(name, Tensor::new(shape.clone(), data.clone())?)?;
            let idx = store.entries.len() - 1;
            if let Some(&mi) = by_name.get(format!("optim.m.{name}").as_str()) {
                store.entries[idx].m = records[mi].2.clone();
            }
            if let Some(&vi) = by_name.get(format!("optim.v.{name}").as_str()) {
                store.entries[idx].v = records[vi].2.clone();
            }
        }
        if let Some(&si) = by_name.get("optim.step") {
            store.step = records[si].2[0] as u64;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::collect_param_grads;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = ParamStore::new();
        store
            .insert("p", Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let before = store.get("p").unwrap().data.clone();
        let mut grads = HashMap::new();
        grads.insert("p".to_string(), Tensor::zeros(&[1, 3]));
        store.adam_step(&grads, &AdamConfig::default()).unwrap();
        assert_eq!(store.get("p").unwrap().data, before);
        // Absent gradient behaves the same way.
        store.adam_step(&HashMap::new(), &AdamConfig::default()).unwrap();
        assert_eq!(store.get("p").unwrap().data, before);
        assert_eq!(store.step(), 2);
    }

    #[test]
    fn warmup_scales_first_step() {
        // With fresh moments, Adam's bias-corrected step is lr_eff·g/(|g|+ε),
        // so from p=1 with loss p² the first update is almost exactly lr/W.
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(1.0)).unwrap();
        let cfg = AdamConfig {
            lr: 1e-2,
            warmup_steps: 10,
            ..AdamConfig::default()
        };
        let mut grads = HashMap::new();
        grads.insert("p".to_string(), Tensor::scalar(2.0));
        store.adam_step(&grads, &cfg).unwrap();
        let p = store.get("p").unwrap().item();
        let expected = 1.0 - cfg.lr / 10.0;
        assert!(
            (p - expected).abs() < 1e-8,
            "p after warm first step = {p}, expected ≈ {expected}"
        );
    }

    #[test]
    fn scalar_descent_reaches_near_zero() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(1.0)).unwrap();
        let cfg = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, "p").unwrap();
            let target = tape.leaf(Tensor::scalar(0.0));
            let loss = tape.sum_sq_diff(p, target).unwrap();
            tape.backward(loss).unwrap();
            let grads = collect_param_grads(&tape).unwrap();
            store.adam_step(&grads, &cfg).unwrap();
        }
        let p = store.get("p").unwrap().item();
        assert!(p.abs() < 1e-2, "p after 2000 steps = {p}");
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.0)).unwrap();
        assert!(matches!(
            store.insert("w", Tensor::scalar(1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn export_import_round_trip_preserves_state() {
        let mut store = ParamStore::new();
        store
            .insert("a", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        store.insert("b", Tensor::scalar(-0.5)).unwrap();
        let mut grads = HashMap::new();
        grads.insert("a".to_string(), Tensor::new(vec![2, 2], vec![0.1; 4]).unwrap());
        grads.insert("b".to_string(), Tensor::scalar(0.2));
        store.adam_step(&grads, &AdamConfig::default()).unwrap();

        let records = store.export_records();
        let restored = ParamStore::from_records(&records).unwrap();
        assert_eq!(restored.step(), store.step());
        assert_eq!(restored.checksum(), store.checksum());
        assert_eq!(restored.export_records(), records);
        let names: Vec<&str> = restored.names().collect();
        assert_eq!(names, vec!["a", "b"]);
    }
}
