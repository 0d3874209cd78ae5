//! Encoder-side token production: nearest-centroid semantic quantization
//! over a frozen codebook, a BiLSTM acoustic encoder, and a learnable
//! EMA-updated acoustic vector quantizer.
//!
//! The two layers are complementary, not residual: the acoustic quantizer
//! sees the encoder's own output, never `Y − E_s`.

use rand::Rng;

use crate::clustering::EnsembleCodebook;
use crate::error::{Error, Result};
use crate::features::StackedFeatures;
use crate::nn::{Activation, BiLstm, Dense, NodeId, ParamStore, Tape, Tensor};

/// Semantic tokens plus the dequantized feature rows they stand for.
#[derive(Debug, Clone)]
pub struct SemanticQuantization {
    pub tokens: Vec<u32>,
    /// (len × dim) row-major; row i is the centroid of tokens[i], exactly.
    pub features: Vec<f64>,
    pub len: usize,
    pub dim: usize,
    /// Codebook size, for bitstream width accounting.
    pub codebook_size: usize,
}

/// Nearest centroid per row, squared Euclidean, ties to the lowest index.
fn nearest_centroid(row: &[f64], centroids: &[f64], n: usize, dim: usize) -> u32 {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for j in 0..n {
        let c = &centroids[j * dim..(j + 1) * dim];
        let mut d = 0.0;
        for (x, y) in row.iter().zip(c) {
            let t = x - y;
            d += t * t;
        }
        if d < best_d {
            best_d = d;
            best = j as u32;
        }
    }
    best
}

pub fn semantic_quantize(
    y: &StackedFeatures,
    cb: &EnsembleCodebook,
) -> Result<SemanticQuantization> {
    if y.dim != cb.dim {
        return Err(Error::Shape(format!(
            "semantic_quantize: feature dim {} does not match codebook dim {}",
            y.dim, cb.dim
        )));
    }
    let mut tokens = Vec::with_capacity(y.len);
    let mut features = Vec::with_capacity(y.len * y.dim);
    for i in 0..y.len {
        let t = nearest_centroid(y.row(i), &cb.centroids, cb.n, cb.dim);
        tokens.push(t);
        features.extend_from_slice(cb.centroid(t as usize));
    }
    Ok(SemanticQuantization {
        tokens,
        features,
        len: y.len,
        dim: y.dim,
        codebook_size: cb.n,
    })
}

/// BiLSTM over `[Y, E_s]` followed by a linear projection back to the
/// stacked feature width, so the acoustic stream carries what the semantic
/// quantization discarded.
#[derive(Debug, Clone)]
pub struct AcousticEncoder {
    pub bilstm: BiLstm,
    pub proj: Dense,
    /// K·E: the stacked feature width; input is twice this.
    pub feature_dim: usize,
}

impl AcousticEncoder {
    pub fn new(feature_dim: usize, hidden: usize) -> AcousticEncoder {
        let bilstm = BiLstm::new("acoustic.rnn", 2 * feature_dim, hidden);
        let proj = Dense::new("acoustic.proj", 2 * hidden, feature_dim, Activation::Linear);
        AcousticEncoder {
            bilstm,
            proj,
            feature_dim,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.bilstm.init(store, rng)?;
        self.proj.init(store, rng)
    }

    /// Build the encoder graph on `tape`. `x` is [batch·steps, 2·feature_dim]
    /// item-major; output is [batch·steps, feature_dim].
    pub fn apply(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: NodeId,
        batch: usize,
        steps: usize,
    ) -> Result<NodeId> {
        if tape.value(x).cols() != 2 * self.feature_dim {
            return Err(Error::Shape(format!(
                "acoustic encoder expects input dim {}, got {}",
                2 * self.feature_dim,
                tape.value(x).cols()
            )));
        }
        let h = self.bilstm.apply(store, tape, x, batch, steps)?;
        self.proj.apply(store, tape, h)
    }

    /// Inference path: run [Y, E_s] through the network without keeping a
    /// training graph around afterwards.
    pub fn forward(
        &self,
        store: &ParamStore,
        y: &StackedFeatures,
        e_s: &[f64],
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = concat_rows_node(&mut tape, y, e_s)?;
        let out = self.apply(store, &mut tape, x, 1, y.len)?;
        Ok(tape.value(out).data.clone())
    }
}

/// Leaf holding the per-row concatenation [Y | E_s].
pub fn concat_rows_node(tape: &mut Tape, y: &StackedFeatures, e_s: &[f64]) -> Result<NodeId> {
    if e_s.len() != y.len * y.dim {
        return Err(Error::Shape(format!(
            "semantic features have {} values, expected {}",
            e_s.len(),
            y.len * y.dim
        )));
    }
    let mut data = Vec::with_capacity(y.len * 2 * y.dim);
    for i in 0..y.len {
        data.extend_from_slice(y.row(i));
        data.extend_from_slice(&e_s[i * y.dim..(i + 1) * y.dim]);
    }
    Ok(tape.leaf(Tensor::new(vec![y.len, 2 * y.dim], data)?))
}

/// Learnable vector quantizer whose codebook follows exponential moving
/// averages of assigned vectors instead of gradients.
#[derive(Debug, Clone)]
pub struct AcousticVq {
    /// n × dim row-major; always equal to ema_sum / (ema_size + epsilon).
    pub codebook: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub ema_size: Vec<f64>,
    pub ema_sum: Vec<f64>,
    pub decay: f64,
    pub epsilon: f64,
}

impl AcousticVq {
    pub const DEFAULT_DECAY: f64 = 0.99;
    pub const EPSILON: f64 = 1e-5;

    /// Seed the codebook rows; EMA state starts with unit mass on each row
    /// so the derived centroids begin at (almost exactly) the given rows.
    pub fn new(n: usize, dim: usize, init_rows: Vec<f64>) -> Result<AcousticVq> {
        if n == 0 || dim == 0 || init_rows.len() != n * dim {
            return Err(Error::Shape(format!(
                "acoustic VQ init: {} values for {n}×{dim} codebook",
                init_rows.len()
            )));
        }
        if init_rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("acoustic VQ init rows must be finite".into()));
        }
        let mut vq = AcousticVq {
            codebook: vec![0.0; n * dim],
            n,
            dim,
            ema_size: vec![1.0; n],
            ema_sum: init_rows,
            decay: Self::DEFAULT_DECAY,
            epsilon: Self::EPSILON,
        };
        vq.refresh_codebook();
        Ok(vq)
    }

    pub fn new_random<R: Rng>(n: usize, dim: usize, std: f64, rng: &mut R) -> Result<AcousticVq> {
        let rows = Tensor::randn(&[n, dim], std, rng).data;
        AcousticVq::new(n, dim, rows)
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.codebook[i * self.dim..(i + 1) * self.dim]
    }

    fn refresh_codebook(&mut self) {
        for j in 0..self.n {
            let denom = self.ema_size[j] + self.epsilon;
            for d in 0..self.dim {
                self.codebook[j * self.dim + d] = self.ema_sum[j * self.dim + d] / denom;
            }
        }
    }

    /// Nearest-centroid assignment of each row of `ya` (rows × dim).
    pub fn quantize(&self, ya: &[f64], rows: usize) -> Result<(Vec<u32>, Vec<f64>)> {
        if ya.len() != rows * self.dim {
            return Err(Error::Shape(format!(
                "acoustic quantize: {} values for {rows} rows of dim {}",
                ya.len(),
                self.dim
            )));
        }
        let mut tokens = Vec::with_capacity(rows);
        let mut features = Vec::with_capacity(rows * self.dim);
        for i in 0..rows {
            let row = &ya[i * self.dim..(i + 1) * self.dim];
            let t = nearest_centroid(row, &self.codebook, self.n, self.dim);
            tokens.push(t);
            features.extend_from_slice(self.centroid(t as usize));
        }
        Ok((tokens, features))
    }

    /// EMA update from one batch of encoder outputs and their assignments.
    /// Must be called by a single writer; the codebook rows are recomputed
    /// as sum/(size+ε) afterwards.
    pub fn ema_update(&mut self, ya: &[f64], assignments: &[u32]) -> Result<()> {
        if ya.len() != assignments.len() * self.dim {
            return Err(Error::Shape(format!(
                "ema_update: {} values for {} assignments of dim {}",
                ya.len(),
                assignments.len(),
                self.dim
            )));
        }
        let mut count = vec![0.0f64; self.n];
        let mut sum = vec![0.0f64; self.n * self.dim];
        for (i, &a) in assignments.iter().enumerate() {
            let j = a as usize;
            if j >= self.n {
                return Err(Error::Shape(format!(
                    "ema_update: assignment {j} out of codebook size {}",
                    self.n
                )));
            }
            count[j] += 1.0;
            for d in 0..self.dim {
                sum[j * self.dim + d] += ya[i * self.dim + d];
            }
        }
        let g = self.decay;
        for j in 0..self.n {
            self.ema_size[j] = g * self.ema_size[j] + (1.0 - g) * count[j];
            for d in 0..self.dim {
                let k = j * self.dim + d;
                self.ema_sum[k] = g * self.ema_sum[k] + (1.0 - g) * sum[k];
            }
        }
        self.refresh_codebook();
        Ok(())
    }

    /// Fraction of codes hit at least once by the given assignments;
    /// logged during training so codebook collapse is visible.
    pub fn usage_fraction(&self, assignments: &[u32]) -> f64 {
        let mut used = vec![false; self.n];
        for &a in assignments {
            if (a as usize) < self.n {
                used[a as usize] = true;
            }
        }
        used.iter().filter(|&&u| u).count() as f64 / self.n as f64
    }

    /// Checkpoint records under a name prefix.
    pub fn export_records(&self, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        vec![
            (
                format!("{prefix}.codebook"),
                vec![self.n, self.dim],
                self.codebook.clone(),
            ),
            (format!("{prefix}.ema_size"), vec![1, self.n], self.ema_size.clone()),
            (
                format!("{prefix}.ema_sum"),
                vec![self.n, self.dim],
                self.ema_sum.clone(),
            ),
            (
                format!("{prefix}.decay"),
                vec![1, 1],
                vec![self.decay],
            ),
        ]
    }

    pub fn from_records(
        prefix: &str,
        records: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<AcousticVq> {
        let find = |suffix: &str| -> Result<&(String, Vec<usize>, Vec<f64>)> {
            let name = format!("{prefix}.{suffix}");
            records
                .iter()
                .find(|r| r.0 == name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing record {name:?}")))
        };
        let cb = find("codebook")?;
        let (n, dim) = (cb.1[0], cb.1[1]);
        let vq = AcousticVq {
            codebook: cb.2.clone(),
            n,
            dim,
            ema_size: find("ema_size")?.2.clone(),
            ema_sum: find("ema_sum")?.2.clone(),
            decay: find("decay")?.2[0],
            epsilon: Self::EPSILON,
        };
        if vq.ema_size.len() != n || vq.ema_sum.len() != n * dim {
            return Err(Error::Shape("acoustic VQ records have mismatched sizes".into()));
        }
        Ok(vq)
    }
}

/// Σ_i ‖y_i − q_i‖² over equal-shaped row blocks.
pub fn commitment_loss(ya: &[f64], ea: &[f64]) -> f64 {
    debug_assert_eq!(ya.len(), ea.len());
    ya.iter().zip(ea).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Joint encoder output: all semantic tokens, then all acoustic tokens;
/// features concatenated per row.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// [c_s..., c_a...], length 2·rows.
    pub tokens: Vec<u32>,
    /// rows × (2·dim): [E_s | E_a] per row.
    pub features: Vec<f64>,
    pub rows: usize,
    /// Width of each half (K·E).
    pub dim: usize,
    pub semantic_codebook_size: usize,
    pub acoustic_codebook_size: usize,
}

impl EncoderOutput {
    pub fn semantic_tokens(&self) -> &[u32] {
        &self.tokens[..self.rows]
    }
    pub fn acoustic_tokens(&self) -> &[u32] {
        &self.tokens[self.rows..]
    }
    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * 2 * self.dim..(i + 1) * 2 * self.dim]
    }
}

/// Full encoder pass over one window of stacked features.
pub fn encode(
    y: &StackedFeatures,
    cb: &EnsembleCodebook,
    enc: &AcousticEncoder,
    store: &ParamStore,
    vq: &AcousticVq,
) -> Result<EncoderOutput> {
    let sq = semantic_quantize(y, cb)?;
    let ya = enc.forward(store, y, &sq.features)?;
    let (c_a, e_a) = vq.quantize(&ya, y.len)?;
    let mut tokens = sq.tokens;
    tokens.extend_from_slice(&c_a);
    let mut features = Vec::with_capacity(y.len * 2 * y.dim);
    for i in 0..y.len {
        features.extend_from_slice(&sq.features[i * y.dim..(i + 1) * y.dim]);
        features.extend_from_slice(&e_a[i * y.dim..(i + 1) * y.dim]);
    }
    Ok(EncoderOutput {
        tokens,
        features,
        rows: y.len,
        dim: y.dim,
        semantic_codebook_size: cb.n,
        acoustic_codebook_size: vq.n,
    })
}

/// Dequantize a token pair stream back to condition features using the same
/// codebooks; the decoder-side mirror of [`encode`].
pub fn tokens_to_features(
    semantic: &[u32],
    acoustic: &[u32],
    cb: &EnsembleCodebook,
    vq: &AcousticVq,
) -> Result<Vec<f64>> {
    if semantic.len() != acoustic.len() {
        return Err(Error::Shape(format!(
            "token halves differ in length: {} semantic vs {} acoustic",
            semantic.len(),
            acoustic.len()
        )));
    }
    if cb.dim != vq.dim {
        return Err(Error::Shape(format!(
            "codebook dims differ: semantic {} vs acoustic {}",
            cb.dim, vq.dim
        )));
    }
    let mut features = Vec::with_capacity(semantic.len() * 2 * cb.dim);
    for (&s, &a) in semantic.iter().zip(acoustic) {
        if s as usize >= cb.n {
            return Err(Error::Corruption(format!(
                "semantic token {s} out of range for codebook size {}",
                cb.n
            )));
        }
        if a as usize >= vq.n {
            return Err(Error::Corruption(format!(
                "acoustic token {a} out of range for codebook size {}",
                vq.n
            )));
        }
        features.extend_from_slice(cb.centroid(s as usize));
        features.extend_from_slice(vq.centroid(a as usize));
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn toy_ensemble(centroids: Vec<f64>, n: usize, dim: usize) -> EnsembleCodebook {
        EnsembleCodebook {
            centroids,
            n,
            dim,
            provenance: Vec::new(),
        }
    }

    fn stacked(vectors: Vec<f64>, len: usize, dim: usize) -> StackedFeatures {
        StackedFeatures {
            vectors,
            len,
            dim,
            stack_factor: 1,
        }
    }

    #[test]
    fn semantic_nearest_by_inspection() {
        let cb = toy_ensemble(vec![0.0, 0.0, 1.0, 1.0], 2, 2);
        let y = stacked(vec![0.1, 0.1], 1, 2);
        let q = semantic_quantize(&y, &cb).unwrap();
        assert_eq!(q.tokens, vec![0]);
        assert_eq!(q.features, vec![0.0, 0.0]);
    }

    #[test]
    fn exact_centroid_hit_has_zero_error_and_is_idempotent() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let dim = 6;
        let cb_data: Vec<f64> = (0..8 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cb = toy_ensemble(cb_data.clone(), 8, dim);
        let y = stacked(cb.centroid(5).to_vec(), 1, dim);
        let q = semantic_quantize(&y, &cb).unwrap();
        assert_eq!(q.tokens, vec![5]);
        assert_eq!(q.features, cb.centroid(5));

        // Quantizing the dequantized features returns the same tokens.
        let n = 40;
        let ys: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q1 = semantic_quantize(&stacked(ys, n, dim), &cb).unwrap();
        let q2 = semantic_quantize(&stacked(q1.features.clone(), n, dim), &cb).unwrap();
        assert_eq!(q1.tokens, q2.tokens);
    }

    #[test]
    fn semantic_matches_brute_force_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(seeds::derive_seed(99, 4, 1));
        let (n, dim, rows) = (16, 4, 200);
        let cb_data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cb = toy_ensemble(cb_data.clone(), n, dim);
        let ys: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let q = semantic_quantize(&stacked(ys.clone(), rows, dim), &cb).unwrap();
        for i in 0..rows {
            let row = &ys[i * dim..(i + 1) * dim];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..n {
                let d: f64 = row
                    .iter()
                    .zip(&cb_data[j * dim..(j + 1) * dim])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(q.tokens[i] as usize, best, "row {i}");
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        // Two identical centroids: the earlier one must win.
        let cb = toy_ensemble(vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 3, 2);
        let q = semantic_quantize(&stacked(vec![0.4, 0.6], 1, 2), &cb).unwrap();
        assert_eq!(q.tokens, vec![0]);
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let cb = toy_ensemble(vec![0.0; 8], 2, 4);
        let y = stacked(vec![0.0; 6], 2, 3);
        assert!(matches!(semantic_quantize(&y, &cb), Err(Error::Shape(_))));
    }

    #[test]
    fn acoustic_encoder_shape_and_zero_cases() {
        let (dim, hidden, steps) = (4, 3, 5);
        let enc = AcousticEncoder::new(dim, hidden);
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        enc.init(&mut store, &mut rng).unwrap();

        let y = stacked(
            (0..steps * dim).map(|i| (i as f64 * 0.37).sin()).collect(),
            steps,
            dim,
        );
        let e_s = vec![0.25; steps * dim];
        let out = enc.forward(&store, &y, &e_s).unwrap();
        assert_eq!(out.len(), steps * dim);

        // Zero every parameter: zero input must give exactly zero output.
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for n in names {
            let shape = store.get(&n).unwrap().shape.clone();
            store.set(&n, Tensor::zeros(&shape)).unwrap();
        }
        let zero_y = stacked(vec![0.0; steps * dim], steps, dim);
        let out = enc.forward(&store, &zero_y, &vec![0.0; steps * dim]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn acoustic_encoder_is_direction_sensitive() {
        let (dim, hidden, steps) = (3, 4, 6);
        let enc = AcousticEncoder::new(dim, hidden);
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        enc.init(&mut store, &mut rng).unwrap();
        let mut fwd = Vec::new();
        for i in 0..steps * dim {
            fwd.push(((i * i) as f64 * 0.11).sin());
        }
        let mut rev = Vec::new();
        for t in (0..steps).rev() {
            rev.extend_from_slice(&fwd[t * dim..(t + 1) * dim]);
        }
        let e_s = vec![0.0; steps * dim];
        let a = enc.forward(&store, &stacked(fwd, steps, dim), &e_s).unwrap();
        let b = enc.forward(&store, &stacked(rev, steps, dim), &e_s).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "sequence reversal should change the output");
    }

    #[test]
    fn acoustic_quantize_matches_oracle_and_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let (n, dim, rows) = (16, 5, 120);
        let init: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vq = AcousticVq::new(n, dim, init).unwrap();
        let ya: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.2..1.2)).collect();
        let (tokens, feats) = vq.quantize(&ya, rows).unwrap();
        assert!(tokens.iter().all(|&t| (t as usize) < n));
        for i in 0..rows {
            let row = &ya[i * dim..(i + 1) * dim];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..n {
                let d: f64 = row
                    .iter()
                    .zip(vq.centroid(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(tokens[i] as usize, best, "row {i}");
            assert_eq!(&feats[i * dim..(i + 1) * dim], vq.centroid(best));
        }
    }

    #[test]
    fn commitment_loss_definition() {
        assert_eq!(commitment_loss(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
        assert_eq!(commitment_loss(&[0.3, -0.4], &[0.3, -0.4]), 0.0);

        // Independent summation oracle on a random case.
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let a: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut expect = 0.0;
        for i in 0..60 {
            expect += (a[i] - b[i]).powi(2);
        }
        let got = commitment_loss(&a, &b);
        assert!((got - expect).abs() < 1e-12);
        assert!(got >= 0.0);

        // A row sitting exactly on a centroid contributes zero.
        let vq = AcousticVq::new(2, 2, vec![0.7, -0.1, 0.0, 0.4]).unwrap();
        let row = vq.centroid(0).to_vec();
        let (_, e_a) = vq.quantize(&row, 1).unwrap();
        assert_eq!(commitment_loss(&row, &e_a), 0.0);
    }

    #[test]
    fn ema_gamma_one_leaves_codebook_unchanged() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let init: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut vq = AcousticVq::new(4, 3, init).unwrap();
        vq.decay = 1.0;
        let before = vq.codebook.clone();
        let ya: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (assign, _) = vq.quantize(&ya, 6).unwrap();
        vq.ema_update(&ya, &assign).unwrap();
        assert_eq!(vq.codebook, before);
    }

    #[test]
    fn ema_converges_to_stationary_point() {
        // Single code, zero-seeded history: after t updates at point p the
        // centroid is (1−γᵗ)p/(1+ε·…); with γ=0.99, t=500 the gap is under
        // 1e-3 in Euclidean norm.
        let mut vq = AcousticVq::new(1, 2, vec![0.0, 0.0]).unwrap();
        let p = [0.1, 0.1];
        for _ in 0..500 {
            let (assign, _) = vq.quantize(&p, 1).unwrap();
            vq.ema_update(&p, &assign).unwrap();
        }
        let d = ((vq.codebook[0] - p[0]).powi(2) + (vq.codebook[1] - p[1]).powi(2)).sqrt();
        assert!(d < 1e-3, "distance to stationary point after 500 updates: {d}");
        assert!(vq.codebook.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unused_code_with_unchanged_history_keeps_its_centroid() {
        // Code 1 sits far away and has zero EMA history; feeding data near
        // code 0 never assigns to it, and its centroid stays at exactly
        // sum/(size+ε) = 0 throughout.
        let mut vq = AcousticVq::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        vq.ema_size[1] = 0.0;
        vq.ema_sum[2] = 0.0;
        vq.ema_sum[3] = 0.0;
        vq.refresh_codebook();
        let before = vq.centroid(1).to_vec();
        for _ in 0..50 {
            let ya = [0.5, 0.45];
            let (assign, _) = vq.quantize(&ya, 1).unwrap();
            assert_eq!(assign, vec![0]);
            vq.ema_update(&ya, &assign).unwrap();
        }
        assert_eq!(vq.centroid(1), &before[..]);
        assert!(vq.codebook.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn usage_fraction_counts_distinct_codes() {
        let vq = AcousticVq::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(vq.usage_fraction(&[0, 0, 1]), 0.5);
        assert_eq!(vq.usage_fraction(&[0, 1, 2, 3]), 1.0);
        assert_eq!(vq.usage_fraction(&[]), 0.0);
    }

    #[test]
    fn vq_records_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let init: Vec<f64> = (0..8 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut vq = AcousticVq::new(8, 4, init).unwrap();
        let ya: Vec<f64> = (0..10 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (assign, _) = vq.quantize(&ya, 10).unwrap();
        vq.ema_update(&ya, &assign).unwrap();
        let records = vq.export_records("vq.acoustic");
        let back = AcousticVq::from_records("vq.acoustic", &records).unwrap();
        assert_eq!(back.codebook, vq.codebook);
        assert_eq!(back.ema_size, vq.ema_size);
        assert_eq!(back.ema_sum, vq.ema_sum);
        assert_eq!(back.decay, vq.decay);
    }

    fn full_setup(
        rows: usize,
        dim: usize,
        seed: u64,
    ) -> (EnsembleCodebook, AcousticEncoder, ParamStore, AcousticVq, StackedFeatures) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n_s = 8;
        let cb = toy_ensemble(
            (0..n_s * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            n_s,
            dim,
        );
        let enc = AcousticEncoder::new(dim, 4);
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut rng).unwrap();
        let vq = AcousticVq::new_random(6, dim, 0.5, &mut rng).unwrap();
        let y = stacked(
            (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            rows,
            dim,
        );
        (cb, enc, store, vq, y)
    }

    #[test]
    fn encode_shapes_and_token_order() {
        let (rows, dim) = (12, 4);
        let (cb, enc, store, vq, y) = full_setup(rows, dim, 13);
        let out = encode(&y, &cb, &enc, &store, &vq).unwrap();
        assert_eq!(out.tokens.len(), 2 * rows);
        assert_eq!(out.features.len(), rows * 2 * dim);
        assert!(out.semantic_tokens().iter().all(|&t| (t as usize) < cb.n));
        assert!(out.acoustic_tokens().iter().all(|&t| (t as usize) < vq.n));

        // First half must equal a standalone semantic pass.
        let sq = semantic_quantize(&y, &cb).unwrap();
        assert_eq!(out.semantic_tokens(), &sq.tokens[..]);
        // Feature rows are [E_s | E_a].
        for i in 0..rows {
            assert_eq!(&out.feature_row(i)[..dim], &sq.features[i * dim..(i + 1) * dim]);
        }

        // Window accounting: 512 rows at K=1 over a 10.24 s window is 1024
        // tokens, i.e. 100 tokens/s; 128 rows at K=4 gives 25 tokens/s.
        assert_eq!(2 * 512, 1024);
        assert_eq!(1024.0 / 10.24, 100.0);
        assert_eq!((2.0 * 128.0) / 10.24, 25.0);
    }

    #[test]
    fn acoustic_layer_ignores_residual_by_construction() {
        // Zero the acoustic encoder: Y_A is all zeros no matter what
        // Y − E_s looks like, so E_a cannot depend on the residual.
        let (rows, dim) = (6, 3);
        let (cb, enc, mut store, vq, y1) = full_setup(rows, dim, 14);
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for n in names {
            let shape = store.get(&n).unwrap().shape.clone();
            store.set(&n, Tensor::zeros(&shape)).unwrap();
        }
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let y2 = stacked(
            (0..rows * dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
            rows,
            dim,
        );
        let a = encode(&y1, &cb, &enc, &store, &vq).unwrap();
        let b = encode(&y2, &cb, &enc, &store, &vq).unwrap();
        assert_eq!(a.acoustic_tokens(), b.acoustic_tokens());
        for i in 0..rows {
            assert_eq!(&a.feature_row(i)[dim..], &b.feature_row(i)[dim..]);
        }
    }

    #[test]
    fn tokens_to_features_mirrors_encode() {
        let (rows, dim) = (9, 4);
        let (cb, enc, store, vq, y) = full_setup(rows, dim, 16);
        let out = encode(&y, &cb, &enc, &store, &vq).unwrap();
        let feats =
            tokens_to_features(out.semantic_tokens(), out.acoustic_tokens(), &cb, &vq).unwrap();
        assert_eq!(feats, out.features);

        // Out-of-range tokens are corruption, not a panic.
        let bad = vec![cb.n as u32; rows];
        assert!(matches!(
            tokens_to_features(&bad, out.acoustic_tokens(), &cb, &vq),
            Err(Error::Corruption(_))
        ));
    }
}
