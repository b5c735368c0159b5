//! Random inputs shared by oracle and acceptance tests.

use laps::cluster::{kmeans, KMeansConfig};
use laps::detector::DetectorConfig;
use laps::latent::LatentStream;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::two_means_exhaustive;

/// Energy trace of quiet and busy blocks, so the detector actually switches.
pub fn energy_trace(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let busy = rng.random_bool(0.5);
        let block = rng.random_range(1..25);
        for _ in 0..block {
            out.push(if busy {
                rng.random_range(0.8..4.0)
            } else {
                rng.random_range(0.0..0.6)
            });
        }
    }
    out.truncate(len);
    out
}

/// Latent stream that alternates between held and jumping vectors.
pub fn latent_stream(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> LatentStream {
    let mut vectors = Vec::with_capacity(len * dim);
    let mut codes = Vec::with_capacity(len);
    let mut current: Vec<f32> = vec![0.0; dim];
    let mut code = 0u32;
    let mut busy = false;
    for t in 0..len {
        if t % 10 == 0 {
            busy = rng.random_bool(0.5);
        }
        if busy {
            current = (0..dim)
                .map(|_| rng.random_range(-2i32..=2) as f32)
                .collect();
            code = rng.random_range(0..64);
        }
        vectors.extend_from_slice(&current);
        codes.push(code);
    }
    LatentStream::new(dim, 64, codes, (0..len as u32).collect(), vectors).unwrap()
}

/// Detector settings spread over the whole valid range.
pub fn random_detector(r: &mut ChaCha8Rng) -> DetectorConfig {
    DetectorConfig {
        alpha: r.random_range(0.05..=1.0),
        theta_on: r.random_range(0.8..2.0),
        hysteresis_ratio: r.random_range(0.2..=1.0),
        up_count: r.random_range(1..6),
        down_count: r.random_range(1..10),
        min_len: r.random_range(1..5),
    }
}

/// Two-component Gaussian mixture with random weights and spreads.
pub fn bimodal(r: &mut ChaCha8Rng) -> Vec<f64> {
    let (m0, m1) = (r.random_range(0.0..2.0), r.random_range(4.0..9.0));
    let (s0, s1) = (r.random_range(0.1..1.0), r.random_range(0.1..1.5));
    let n = r.random_range(50..600);
    let p = r.random_range(0.2..0.8);
    (0..n)
        .map(|_| {
            let (m, s) = if r.random_bool(p) { (m0, s0) } else { (m1, s1) };
            Normal::new(m, s).unwrap().sample(r)
        })
        .collect()
}

/// Seeds (out of `seeds`) where k = 2 k-means finds the exhaustive optimum
/// on a small random planar instance.
pub fn kmeans_hits_exhaustive_optimum(seeds: u64) -> usize {
    let mut hits = 0;
    for seed in 0..seeds {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = r.random_range(3..=12);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
            .collect();
        let fit = kmeans(
            &Array2::from_shape_fn((n, 2), |(i, j)| pts[i][j]),
            &KMeansConfig {
                k: 2,
                seed,
                n_init: 50,
                max_iter: 300,
            },
        )
        .unwrap();
        if (fit.inertia - two_means_exhaustive(&pts)).abs() <= 1e-9 {
            hits += 1;
        }
    }
    hits
}
