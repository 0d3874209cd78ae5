//! K-means over stacked features and the frozen semantic codebook family.
//!
//! Each audio domain gets its own k-means fit; a merged ensemble gives the
//! general domain twice the centroids of speech or music (2:1:1). Four
//! ensemble sizes {S, 2S, 4S, 8S} form the family a packet's `N_s` selects
//! from. Everything here is fit once and then frozen; nothing is updated
//! by codec training.
//!
//! Determinism: assignment is parallel over points, but centroid updates
//! accumulate in point-index order, so results are bit-reproducible for a
//! fixed seed regardless of worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::seeds;
use crate::synthcorpus::Domain;

pub const CODEBOOK_FILE_MAGIC: &[u8; 4] = b"SMCK";
pub const CODEBOOK_FILE_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansOptions {
    pub max_iters: usize,
    /// Relative centroid-shift stopping tolerance.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        KmeansOptions {
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub domain: Option<Domain>,
    /// Inertia measured after each assignment step; non-increasing.
    pub inertia_trace: Vec<f64>,
}

impl Codebook {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

/// Merged per-domain codebooks with provenance offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleCodebook {
    pub centroids: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    /// (domain, offset, count), in concatenation order.
    pub provenance: Vec<(Domain, usize, usize)>,
}

impl EnsembleCodebook {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn domain_of(&self, index: usize) -> Option<Domain> {
        self.provenance
            .iter()
            .find(|(_, off, cnt)| index >= *off && index < off + cnt)
            .map(|(d, _, _)| *d)
    }
}

/// Ensembles at sizes {S, 2S, 4S, 8S}, sharing stack factor and feature dim.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookFamily {
    pub ensembles: Vec<EnsembleCodebook>,
    pub stack_factor: usize,
    pub feature_dim: usize,
}

impl CodebookFamily {
    pub fn sizes(&self) -> Vec<usize> {
        self.ensembles.iter().map(|e| e.n).collect()
    }

    pub fn by_size(&self, n: usize) -> Option<&EnsembleCodebook> {
        self.ensembles.iter().find(|e| e.n == n)
    }

    /// CRC over all centroid bits; used by frozenness checks.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for e in &self.ensembles {
            for c in &e.centroids {
                h.update(&c.to_le_bytes());
            }
        }
        h.finalize()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Index of the nearest centroid, ties broken toward the lowest index.
fn nearest(point: &[f64], centroids: &[f64], k: usize, dim: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = sq_dist(point, &centroids[c * dim..(c + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn kmeans_pp_init(points: &[f64], m: usize, dim: usize, k: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..m);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = (0..m)
        .map(|i| sq_dist(&points[i * dim..(i + 1) * dim], &centroids[0..dim]))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining distances zero (duplicate-heavy data): spread
            // deterministically over the points instead.
            c % m
        };
        let new = &points[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(new);
        for i in 0..m {
            let d = sq_dist(&points[i * dim..(i + 1) * dim], new);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

pub fn kmeans_fit(points: &[f64], dim: usize, k: usize, opts: &KmeansOptions) -> Result<Codebook> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "point buffer of {} values is not a multiple of dim {}",
            points.len(),
            dim
        )));
    }
    let m = points.len() / dim;
    if m < k {
        return Err(Error::Config(format!(
            "insufficient data: {m} points for k={k}"
        )));
    }
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in clustering input".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut centroids = kmeans_pp_init(points, m, dim, k, &mut rng);
    let mut assignment = vec![0usize; m];
    let mut inertia_trace = Vec::new();

    for _ in 0..opts.max_iters.max(1) {
        // Assignment: parallel over points, deterministic per point.
        let assigned: Vec<(usize, f64)> = (0..m)
            .into_par_iter()
            .map(|i| nearest(&points[i * dim..(i + 1) * dim], &centroids, k, dim))
            .collect();
        let mut inertia = 0.0;
        for (i, (a, d)) in assigned.iter().enumerate() {
            assignment[i] = *a;
            inertia += d;
        }
        inertia_trace.push(inertia);

        // Update: fixed-order accumulation.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..m {
            let a = assignment[i];
            counts[a] += 1;
            let p = &points[i * dim..(i + 1) * dim];
            let s = &mut sums[a * dim..(a + 1) * dim];
            for j in 0..dim {
                s[j] += p[j];
            }
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..dim {
                    new_centroids[c * dim + j] = sums[c * dim + j] * inv;
                }
            }
        }

        // Empty-cluster repair: move each empty centroid onto the point
        // currently farthest from its assigned centroid, in index order.
        let mut taken = vec![false; m];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_i = 0;
            let mut far_d = -1.0;
            for i in 0..m {
                if taken[i] {
                    continue;
                }
                let d = assigned[i].1;
                if d > far_d {
                    far_d = d;
                    far_i = i;
                }
            }
            taken[far_i] = true;
            new_centroids[c * dim..(c + 1) * dim]
                .copy_from_slice(&points[far_i * dim..(far_i + 1) * dim]);
        }

        // Relative centroid shift.
        let mut shift = 0.0;
        let mut norm = 0.0;
        for (a, b) in centroids.iter().zip(&new_centroids) {
            let d = a - b;
            shift += d * d;
            norm += b * b;
        }
        centroids = new_centroids;
        if shift.sqrt() / (norm.sqrt() + 1e-12) < opts.tol {
            break;
        }
    }

    // Final assignment so the reported inertia matches the final centroids.
    let final_assigned: Vec<(usize, f64)> = (0..m)
        .into_par_iter()
        .map(|i| nearest(&points[i * dim..(i + 1) * dim], &centroids, k, dim))
        .collect();
    inertia_trace.push(final_assigned.iter().map(|(_, d)| d).sum());

    Ok(Codebook {
        centroids,
        n: k,
        dim,
        domain: None,
        inertia_trace,
    })
}

/// Merge per-domain codebooks in the fixed order [general, speech, music].
/// The general domain must hold exactly twice the centroids of each other.
pub fn merge_ensemble(
    speech: &Codebook,
    music: &Codebook,
    general: &Codebook,
) -> Result<EnsembleCodebook> {
    if speech.dim != music.dim || speech.dim != general.dim {
        return Err(Error::Config(format!(
            "codebook dims differ: speech {}, music {}, general {}",
            speech.dim, music.dim, general.dim
        )));
    }
    if general.n != 2 * speech.n || speech.n != music.n {
        return Err(Error::Config(format!(
            "ensemble ratio must be 2:1:1 (general:speech:music), got {}:{}:{}",
            general.n, speech.n, music.n
        )));
    }
    let mut centroids = Vec::with_capacity((general.n + speech.n + music.n) * general.dim);
    let mut provenance = Vec::new();
    let mut offset = 0;
    for (domain, cb) in [
        (Domain::General, general),
        (Domain::SpeechLike, speech),
        (Domain::MusicLike, music),
    ] {
        centroids.extend_from_slice(&cb.centroids);
        provenance.push((domain, offset, cb.n));
        offset += cb.n;
    }
    Ok(EnsembleCodebook {
        centroids,
        n: offset,
        dim: general.dim,
        provenance,
    })
}

/// Fit 3 domains × 4 sizes and merge into a family {S, 2S, 4S, 8S}.
/// `per_domain` supplies each domain's training rows (row-major, `dim` wide).
pub fn build_family(
    per_domain: &[(Domain, Vec<f64>)],
    dim: usize,
    base_size: usize,
    stack_factor: usize,
    opts: &KmeansOptions,
) -> Result<CodebookFamily> {
    if base_size % 4 != 0 {
        return Err(Error::Config(format!(
            "base ensemble size {base_size} must be divisible by 4 for the 2:1:1 split"
        )));
    }
    let find = |d: Domain| -> Result<&Vec<f64>> {
        per_domain
            .iter()
            .find(|(dd, _)| *dd == d)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Config(format!("missing features for domain {d}")))
    };
    let speech = find(Domain::SpeechLike)?;
    let music = find(Domain::MusicLike)?;
    let general = find(Domain::General)?;

    let mut ensembles = Vec::with_capacity(4);
    for size_idx in 0..4usize {
        let total = base_size << size_idx;
        let n_general = total / 2;
        let n_each = total / 4;
        let fit = |points: &Vec<f64>, k: usize, domain: Domain, tag: u64| -> Result<Codebook> {
            let mut cb = kmeans_fit(
                points,
                dim,
                k,
                &KmeansOptions {
                    seed: seeds::derive_seed(opts.seed, tag, size_idx as u64),
                    ..*opts
                },
            )?;
            cb.domain = Some(domain);
            Ok(cb)
        };
        let cb_s = fit(speech, n_each, Domain::SpeechLike, 1)?;
        let cb_m = fit(music, n_each, Domain::MusicLike, 2)?;
        let cb_g = fit(general, n_general, Domain::General, 3)?;
        ensembles.push(merge_ensemble(&cb_s, &cb_m, &cb_g)?);
    }
    Ok(CodebookFamily {
        ensembles,
        stack_factor,
        feature_dim: dim,
    })
}

fn domain_tag(d: Domain) -> u8 {
    match d {
        Domain::General => 0,
        Domain::SpeechLike => 1,
        Domain::MusicLike => 2,
    }
}

fn domain_from_tag(t: u8) -> Result<Domain> {
    match t {
        0 => Ok(Domain::General),
        1 => Ok(Domain::SpeechLike),
        2 => Ok(Domain::MusicLike),
        other => Err(Error::Format(format!("unknown domain tag {other}"))),
    }
}

/// Serialize a codebook family: magic "SMCK", version, stack factor, feature
/// dim, then per ensemble the per-domain sections, CRC32 trailer. Centroids
/// are stored as little-endian f64 so save/load/save is byte-identical.
pub fn save_family(path: impl AsRef<Path>, family: &CodebookFamily) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CODEBOOK_FILE_MAGIC);
    bytes.extend_from_slice(&CODEBOOK_FILE_VERSION.to_le_bytes());
    bytes.push(family.stack_factor as u8);
    bytes.extend_from_slice(&(family.feature_dim as u32).to_le_bytes());
    bytes.push(family.ensembles.len() as u8);
    for e in &family.ensembles {
        bytes.extend_from_slice(&(e.n as u32).to_le_bytes());
        bytes.push(e.provenance.len() as u8);
        for &(domain, offset, count) in &e.provenance {
            bytes.push(domain_tag(domain));
            let section = &e.centroids[offset * e.dim..(offset + count) * e.dim];
            bytes.extend_from_slice(&(count as u32).to_le_bytes());
            for v in section {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_family(path: impl AsRef<Path>) -> Result<CodebookFamily> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "{}: truncated codebook file",
            path.display()
        )));
    }
    if &bytes[0..4] != CODEBOOK_FILE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a codebook file",
            path.display()
        )));
    }
    let body_end = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if stored_crc != crc32fast::hash(&bytes[..body_end]) {
        return Err(Error::Corruption(format!(
            "{}: CRC mismatch",
            path.display()
        )));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != CODEBOOK_FILE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CODEBOOK_FILE_VERSION,
        });
    }
    let mut pos = 6;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > body_end {
            return Err(Error::Format(format!(
                "{}: truncated codebook body",
                path.display()
            )));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let stack_factor = take(1)?[0] as usize;
    let feature_dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let n_ensembles = take(1)?[0] as usize;
    let mut ensembles = Vec::with_capacity(n_ensembles);
    for _ in 0..n_ensembles {
        let total = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n_sections = take(1)?[0] as usize;
        let mut centroids = Vec::with_capacity(total * feature_dim);
        let mut provenance = Vec::with_capacity(n_sections);
        let mut offset = 0;
        for _ in 0..n_sections {
            let tag = take(1)?[0];
            let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let raw = take(count * feature_dim * 8)?;
            for c in raw.chunks_exact(8) {
                centroids.push(f64::from_le_bytes(c.try_into().unwrap()));
            }
            provenance.push((domain_from_tag(tag)?, offset, count));
            offset += count;
        }
        if offset != total {
            return Err(Error::Format(format!(
                "{}: ensemble sections sum to {offset}, header says {total}",
                path.display()
            )));
        }
        ensembles.push(EnsembleCodebook {
            centroids,
            n: total,
            dim: feature_dim,
            provenance,
        });
    }
    if pos != body_end {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes in codebook file",
            path.display(),
            body_end - pos
        )));
    }
    Ok(CodebookFamily {
        ensembles,
        stack_factor,
        feature_dim,
    })
}

/// Mean squared quantization error of rows against their nearest centroid.
pub fn quantization_error(points: &[f64], dim: usize, centroids: &[f64], k: usize) -> f64 {
    let m = points.len() / dim;
    let total: f64 = (0..m)
        .into_par_iter()
        .map(|i| nearest(&points[i * dim..(i + 1) * dim], centroids, k, dim).1)
        .sum();
    total / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: best 2-partition of 4 points by exhaustive
    /// enumeration, centroids as means accumulated in point order.
    fn brute_force_2means(points: &[f64]) -> (Vec<f64>, f64) {
        let m = points.len();
        let mut best = (vec![0.0; 2], f64::INFINITY);
        for mask in 1..(1u32 << m) - 1 {
            let mut sums = [0.0; 2];
            let mut counts = [0usize; 2];
            for (i, &p) in points.iter().enumerate() {
                let c = ((mask >> i) & 1) as usize;
                sums[c] += p;
                counts[c] += 1;
            }
            if counts[0] == 0 || counts[1] == 0 {
                continue;
            }
            let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
            let inertia: f64 = points
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let c = ((mask >> i) & 1) as usize;
                    (p - means[c]) * (p - means[c])
                })
                .sum();
            if inertia < best.1 {
                best = (means.to_vec(), inertia);
            }
        }
        best.0.sort_by(|a, b| a.partial_cmp(b).unwrap());
        best
    }

    #[test]
    fn two_clusters_match_brute_force_oracle() {
        let points = [0.0, 0.1, 10.0, 10.1];
        let (oracle_centroids, oracle_inertia) = brute_force_2means(&points);
        for seed in 0..20 {
            let cb = kmeans_fit(&points, 1, 2, &KmeansOptions { seed, ..Default::default() })
                .unwrap();
            let mut got = cb.centroids.clone();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, oracle_centroids, "seed {seed}");
            let inertia = *cb.inertia_trace.last().unwrap();
            assert_eq!(inertia, oracle_inertia, "seed {seed}");
            assert!((inertia - 0.01).abs() < 1e-12);
            assert!((got[0] - 0.05).abs() < 1e-12);
            assert!((got[1] - 10.05).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equals_m_reaches_zero_inertia() {
        let points = [1.0, 2.0, 3.0, 4.0, 5.0];
        let cb = kmeans_fit(&points, 1, 5, &KmeansOptions::default()).unwrap();
        assert_eq!(*cb.inertia_trace.last().unwrap(), 0.0);
        let mut got = cb.centroids.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, points.to_vec());
    }

    fn blob_points(seed: u64, m: usize, dim: usize, spread: f64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let centers: Vec<f64> = (0..8 * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        (0..m)
            .flat_map(|i| {
                let c = i % 8;
                (0..dim)
                    .map(|j| centers[c * dim + j] + spread * seeds::standard_normal(&mut rng))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn inertia_is_monotone_nonincreasing() {
        let points = blob_points(3, 400, 6, 0.4);
        let cb = kmeans_fit(&points, 6, 8, &KmeansOptions { seed: 11, ..Default::default() })
            .unwrap();
        for w in cb.inertia_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "inertia rose from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn fit_is_bit_reproducible() {
        let points = blob_points(5, 300, 4, 0.5);
        let opts = KmeansOptions { seed: 42, ..Default::default() };
        let a = kmeans_fit(&points, 4, 16, &opts).unwrap();
        let b = kmeans_fit(&points, 4, 16, &opts).unwrap();
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn insufficient_data_rejected() {
        let points = [1.0, 2.0];
        assert!(matches!(
            kmeans_fit(&points, 1, 3, &KmeansOptions::default()),
            Err(Error::Config(_))
        ));
    }

    fn dummy_codebook(n: usize, dim: usize, domain: Domain) -> Codebook {
        Codebook {
            centroids: vec![0.0; n * dim],
            n,
            dim,
            domain: Some(domain),
            inertia_trace: vec![],
        }
    }

    #[test]
    fn merge_order_ratio_and_provenance() {
        let s = dummy_codebook(1024, 1, Domain::SpeechLike);
        let m = dummy_codebook(1024, 1, Domain::MusicLike);
        let g = dummy_codebook(2048, 1, Domain::General);
        let e = merge_ensemble(&s, &m, &g).unwrap();
        assert_eq!(e.n, 4096);
        assert_eq!(e.provenance[0], (Domain::General, 0, 2048));
        assert_eq!(e.domain_of(2048), Some(Domain::SpeechLike));
        assert_eq!(e.domain_of(2047), Some(Domain::General));
        assert_eq!(e.domain_of(3072), Some(Domain::MusicLike));
        assert_eq!(e.domain_of(4096), None);

        let bad = merge_ensemble(&s, &m, &dummy_codebook(999, 1, Domain::General));
        assert!(matches!(bad, Err(Error::Config(_))));
        let bad_dim = merge_ensemble(&s, &dummy_codebook(1024, 2, Domain::MusicLike), &g);
        assert!(matches!(bad_dim, Err(Error::Config(_))));
    }

    fn domain_features(seed: u64, m: usize, dim: usize) -> Vec<(Domain, Vec<f64>)> {
        Domain::ALL
            .iter()
            .enumerate()
            .map(|(i, &d)| (d, blob_points(seed + i as u64, m, dim, 0.3)))
            .collect()
    }

    #[test]
    fn family_sizes_ratio_and_reproducibility() {
        let feats = domain_features(7, 200, 4);
        let opts = KmeansOptions { seed: 9, max_iters: 30, ..Default::default() };
        let fam = build_family(&feats, 4, 16, 1, &opts).unwrap();
        assert_eq!(fam.sizes(), vec![16, 32, 64, 128]);
        for e in &fam.ensembles {
            let counts: Vec<usize> = e.provenance.iter().map(|&(_, _, c)| c).collect();
            assert_eq!(counts[0], 2 * counts[1]);
            assert_eq!(counts[1], counts[2]);
        }
        let fam2 = build_family(&feats, 4, 16, 1, &opts).unwrap();
        assert_eq!(fam.checksum(), fam2.checksum());
    }

    #[test]
    fn larger_ensembles_quantize_training_data_no_worse() {
        let feats = domain_features(13, 300, 4);
        let opts = KmeansOptions { seed: 21, max_iters: 50, ..Default::default() };
        let fam = build_family(&feats, 4, 16, 1, &opts).unwrap();
        let all: Vec<f64> = feats.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let errs: Vec<f64> = fam
            .ensembles
            .iter()
            .map(|e| quantization_error(&all, 4, &e.centroids, e.n))
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0], "larger ensemble quantized worse: {errs:?}");
        }
    }

    #[test]
    fn family_file_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fam.smck");
        let feats = domain_features(3, 120, 3);
        let opts = KmeansOptions { seed: 4, max_iters: 20, ..Default::default() };
        let fam = build_family(&feats, 3, 8, 2, &opts).unwrap();
        save_family(&path, &fam).unwrap();
        let back = load_family(&path).unwrap();
        assert_eq!(fam, back);

        // Save→load→save must be byte-identical.
        let path2 = dir.path().join("fam2.smck");
        save_family(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        std::fs::write(dir.path().join("bad.smck"), &bytes).unwrap();
        assert!(matches!(
            load_family(dir.path().join("bad.smck")),
            Err(Error::Corruption(_))
        ));
    }
}
