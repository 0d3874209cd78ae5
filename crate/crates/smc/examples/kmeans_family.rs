//! Fits the semantic codebook family on synthetic per-domain points
//! and shows the pieces: Lloyd iterations with a non-increasing inertia
//! trace, the 2:1:1 domain merge, and nearest-centroid token assignment.
//!
//!     cargo run --example kmeans_family

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use smc::clustering::{build_family, kmeans_fit, KmeansOptions};
use smc::error::Result;
use smc::quantizers::semantic_quantize;
use smc::seeds::standard_normal;
use smc::synthcorpus::Domain;

/// Gaussian blobs around per-domain anchor points.
fn blob_points(domain_index: usize, n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * dim);
    for i in 0..n {
        let center = ((domain_index * 7 + i % 5) % 11) as f64 - 5.0;
        for d in 0..dim {
            out.push(center * ((d + 1) as f64 * 0.3).sin() + 0.2 * standard_normal(&mut rng));
        }
    }
    out
}

fn main() -> Result<()> {
    let dim = 8;
    let opts = KmeansOptions::default();

    // Plain k-means first: the inertia trace never increases.
    let points = blob_points(0, 600, dim, 1);
    let cb = kmeans_fit(&points, dim, 16, &opts)?;
    println!("k-means k=16 inertia trace:");
    for (i, v) in cb.inertia_trace.iter().enumerate() {
        println!("  iter {i:>2}: {v:.5}");
    }
    let monotone = cb.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    println!("non-increasing: {monotone}");

    // The family: four ensemble sizes, each merged 2:1:1 from general,
    // speech_like, and music_like centroids.
    let per_domain: Vec<(Domain, Vec<f64>)> = Domain::ALL
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, blob_points(i, 800, dim, 10 + i as u64)))
        .collect();
    let family = build_family(&per_domain, dim, 8, 1, &opts)?;
    println!("family sizes: {:?}", family.sizes());
    for ens in &family.ensembles {
        let mut counts = [0usize; 3];
        for i in 0..ens.n {
            match ens.domain_of(i) {
                Some(Domain::General) => counts[0] += 1,
                Some(Domain::SpeechLike) => counts[1] += 1,
                Some(Domain::MusicLike) => counts[2] += 1,
                None => {}
            }
        }
        println!(
            "  size {:>3}: general={} speech_like={} music_like={}",
            ens.n, counts[0], counts[1], counts[2]
        );
    }

    // Quantize held-out points against the largest ensemble.
    let probe = smc::features::StackedFeatures {
        vectors: blob_points(1, 64, dim, 99),
        len: 64,
        dim,
        stack_factor: 1,
    };
    let largest = family.by_size(64).expect("family holds size 64");
    let q = semantic_quantize(&probe, largest)?;
    println!(
        "quantized 64 held-out vectors; first tokens: {:?}",
        &q.tokens[..8.min(q.tokens.len())]
    );
    Ok(())
}
