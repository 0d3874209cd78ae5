//! Per-patch embedding vectors and K-stacking.
//!
//! The extractor role is pluggable: the built-in surrogate is a frozen
//! random projection (weights derived only from a seed) with a tanh
//! squashing and per-vector standardization. Anything frozen and
//! information-preserving exercises the downstream pipeline the same way;
//! externally computed features can be imported through the "SMCF" tensor
//! file instead.
//!
//! Feature values are f32-precision by contract (the interchange format
//! stores 32-bit floats), so extractor outputs are rounded through f32 and
//! an export/import cycle is lossless.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::seeds;
use crate::spectral::PatchGrid;

pub const FEATURE_FILE_MAGIC: &[u8; 4] = b"SMCF";
pub const FEATURE_FILE_VERSION: u32 = 1;

/// L feature vectors of dimension E, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub vectors: Vec<f64>,
    pub len: usize,
    pub dim: usize,
}

impl FeatureSequence {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// (L/K) rows, each the concatenation of K consecutive feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeatures {
    pub vectors: Vec<f64>,
    pub len: usize,
    pub dim: usize,
    pub stack_factor: usize,
}

impl StackedFeatures {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Frozen random-projection feature extractor. Weights are a pure function
/// of (input dim, output dim, seed); nothing here ever trains.
#[derive(Debug, Clone)]
pub struct SurrogateExtractor {
    weights: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
}

impl SurrogateExtractor {
    /// Weight scale 1/in_dim keeps pre-activations of log-mel patches in
    /// tanh's responsive range (patch norms grow like sqrt(in_dim)·|logmel|).
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seeds::derive_seed(seed, 0x5EED, 0xFEA7));
        let scale = 1.0 / in_dim as f64;
        let weights = (0..in_dim * out_dim)
            .map(|_| seeds::standard_normal(&mut rng) * scale)
            .collect();
        SurrogateExtractor {
            weights,
            in_dim,
            out_dim,
            seed,
        }
    }

    /// CRC over the exact weight bits; used by frozenness checks.
    pub fn weight_checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for w in &self.weights {
            h.update(&w.to_le_bytes());
        }
        h.finalize()
    }

    pub fn extract(&self, patches: &PatchGrid) -> Result<FeatureSequence> {
        if patches.dim() != self.in_dim {
            return Err(Error::Shape(format!(
                "patch dim {} does not match extractor input dim {}",
                patches.dim(),
                self.in_dim
            )));
        }
        let e = self.out_dim;
        let rows: Vec<Vec<f64>> = (0..patches.len())
            .into_par_iter()
            .map(|l| {
                let x = patches.patch_vec(l);
                let mut y = vec![0.0; e];
                for (i, &xi) in x.iter().enumerate() {
                    let wrow = &self.weights[i * e..(i + 1) * e];
                    for j in 0..e {
                        y[j] += xi * wrow[j];
                    }
                }
                for v in y.iter_mut() {
                    *v = v.tanh();
                }
                standardize(&mut y);
                for v in y.iter_mut() {
                    *v = *v as f32 as f64;
                }
                y
            })
            .collect();
        let mut vectors = Vec::with_capacity(patches.len() * e);
        for r in rows {
            vectors.extend_from_slice(&r);
        }
        Ok(FeatureSequence {
            vectors,
            len: patches.len(),
            dim: e,
        })
    }
}

/// In-place zero-mean unit-variance normalization across dims.
fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var < 1e-24 {
        for x in v.iter_mut() {
            *x = 0.0;
        }
        return;
    }
    let inv = 1.0 / var.sqrt();
    for x in v.iter_mut() {
        *x = (*x - mean) * inv;
    }
}

pub fn stack(f: &FeatureSequence, k: usize) -> Result<StackedFeatures> {
    if k == 0 {
        return Err(Error::Config("stack factor must be >= 1".into()));
    }
    if f.len % k != 0 {
        return Err(Error::Shape(format!(
            "sequence length {} not divisible by stack factor {}",
            f.len, k
        )));
    }
    Ok(StackedFeatures {
        vectors: f.vectors.clone(),
        len: f.len / k,
        dim: f.dim * k,
        stack_factor: k,
    })
}

/// Exact inverse of [`stack`].
pub fn unstack(s: &StackedFeatures) -> FeatureSequence {
    FeatureSequence {
        vectors: s.vectors.clone(),
        len: s.len * s.stack_factor,
        dim: s.dim / s.stack_factor,
    }
}

pub fn export_features(path: impl AsRef<Path>, f: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + f.vectors.len() * 4);
    bytes.extend_from_slice(FEATURE_FILE_MAGIC);
    bytes.extend_from_slice(&FEATURE_FILE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(f.len as u32).to_le_bytes());
    bytes.extend_from_slice(&(f.dim as u32).to_le_bytes());
    for &v in &f.vectors {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read an "SMCF" tensor file. When `expected_dim` is given, a mismatching
/// E is a configuration error rather than silent acceptance.
pub fn import_features(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 {
        return Err(Error::Format(format!(
            "{}: truncated feature file ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != FEATURE_FILE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a feature file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_FILE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version as u16,
            supported: FEATURE_FILE_VERSION as u16,
        });
    }
    let l = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let e = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected_len = 16 + l * e * 4 + 4;
    if bytes.len() != expected_len {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for a {}×{} tensor, found {}",
            path.display(),
            expected_len,
            l,
            e,
            bytes.len()
        )));
    }
    let body_end = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let actual_crc = crc32fast::hash(&bytes[..body_end]);
    if stored_crc != actual_crc {
        return Err(Error::Corruption(format!(
            "{}: CRC mismatch (stored {stored_crc:08x}, computed {actual_crc:08x})",
            path.display()
        )));
    }
    if let Some(d) = expected_dim {
        if d != e {
            return Err(Error::Config(format!(
                "{}: feature dim {} does not match configured dim {}",
                path.display(),
                e,
                d
            )));
        }
    }
    let vectors = bytes[16..body_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureSequence {
        vectors,
        len: l,
        dim: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::Waveform;
    use crate::spectral::{patchify, waveform_to_logmel, SpectralConfig};

    fn test_patches() -> PatchGrid {
        let cfg = SpectralConfig::default();
        let n = 40960;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                0.4 * (std::f64::consts::TAU * (300.0 + 900.0 * t) * t).sin()
            })
            .collect();
        let mel = waveform_to_logmel(&Waveform::new(samples), &cfg).unwrap();
        patchify(&mel).unwrap()
    }

    #[test]
    fn extraction_is_deterministic() {
        let patches = test_patches();
        let ex1 = SurrogateExtractor::new(256, 64, 33);
        let ex2 = SurrogateExtractor::new(256, 64, 33);
        assert_eq!(ex1.weight_checksum(), ex2.weight_checksum());
        let a = ex1.extract(&patches).unwrap();
        let b = ex2.extract(&patches).unwrap();
        assert_eq!(a, b);
        let c = SurrogateExtractor::new(256, 64, 34).extract(&patches).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rows_are_standardized() {
        let patches = test_patches();
        let f = SurrogateExtractor::new(256, 64, 1).extract(&patches).unwrap();
        assert_eq!(f.len, 128);
        for i in 0..f.len {
            let r = f.row(i);
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / r.len() as f64;
            assert!(mean.abs() < 1e-6, "row {i} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row {i} var {var}");
        }
    }

    /// Oracle: by construction no input pixel has an all-zero weight row, so
    /// flipping one pixel must change the projection, hence the features.
    #[test]
    fn single_pixel_changes_features() {
        let ex = SurrogateExtractor::new(256, 64, 5);
        for i in 0..ex.in_dim {
            let row = &ex.weights[i * ex.out_dim..(i + 1) * ex.out_dim];
            assert!(row.iter().any(|&w| w != 0.0), "zero weight row {i}");
        }
        let patches = test_patches();
        let base = ex.extract(&patches).unwrap();
        let mut bumped = patches.clone();
        bumped.data[3 * 256 + 17] += 0.5;
        let changed = ex.extract(&bumped).unwrap();
        assert_ne!(base.row(3), changed.row(3));
        assert_eq!(base.row(4), changed.row(4));
    }

    #[test]
    fn stack_geometry_and_identity() {
        let f = FeatureSequence {
            vectors: (0..512 * 8).map(|i| i as f64).collect(),
            len: 512,
            dim: 8,
        };
        let s4 = stack(&f, 4).unwrap();
        assert_eq!(s4.len, 128);
        assert_eq!(s4.dim, 32);
        assert_eq!(&s4.row(0)[..8], f.row(0));
        assert_eq!(&s4.row(0)[8..16], f.row(1));
        assert_eq!(unstack(&s4), f);

        let s1 = stack(&f, 1).unwrap();
        assert_eq!(s1.vectors, f.vectors);
        assert_eq!(s1.len, 512);

        assert!(matches!(stack(&f, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn feature_file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.smcf");
        let patches = test_patches();
        let f = SurrogateExtractor::new(256, 32, 9).extract(&patches).unwrap();
        export_features(&path, &f).unwrap();
        let back = import_features(&path, Some(32)).unwrap();
        assert_eq!(f, back);

        assert!(matches!(
            import_features(&path, Some(64)),
            Err(Error::Config(_))
        ));

        let bytes = std::fs::read(&path).unwrap();
        let trunc_path = dir.path().join("trunc.smcf");
        std::fs::write(&trunc_path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            import_features(&trunc_path, None),
            Err(Error::Format(_))
        ));

        let mut corrupted = bytes.clone();
        let mid = corrupted.len() / 2;
        corrupted[mid] ^= 0x10;
        let bad_path = dir.path().join("bad.smcf");
        std::fs::write(&bad_path, &corrupted).unwrap();
        assert!(matches!(
            import_features(&bad_path, None),
            Err(Error::Corruption(_))
        ));

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        std::fs::write(dir.path().join("m.smcf"), &wrong_magic).unwrap();
        assert!(matches!(
            import_features(dir.path().join("m.smcf"), None),
            Err(Error::Format(_))
        ));
    }
}
