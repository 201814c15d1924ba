use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::nn::Matrix;
use crate::rng::{stream, stream_rng};

/// Deterministic unit-norm class centers.
///
/// With `num_classes <= 2 * dim` the centers are signed basis vectors
/// (`+e_0, +e_1, ..., -e_0, ...`), which keeps every pair at distance at
/// least `sqrt(2)`. Larger class counts fall back to normalized Gaussian
/// directions drawn from `seed`.
pub fn blob_centers(dim: usize, num_classes: usize, seed: u64) -> Vec<Vec<f64>> {
    if num_classes <= 2 * dim {
        return (0..num_classes)
            .map(|c| {
                let mut v = vec![0.0; dim];
                v[c % dim] = if c < dim { 1.0 } else { -1.0 };
                v
            })
            .collect();
    }
    let mut rng = stream_rng(seed, stream::BLOB_CENTERS);
    (0..num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Isotropic Gaussian blobs around [`blob_centers`]. Samples are interleaved
/// by class (`0, 1, ..., C-1, 0, 1, ...`).
pub fn generate_blobs(dim: usize, num_classes: usize, n_per_class: usize, spread: f64, seed: u64) -> Dataset {
    generate_blobs_on_stream(dim, num_classes, n_per_class, spread, seed, stream::BLOB_SAMPLES)
}

/// Same centers as [`generate_blobs`] with fresh noise, for held-out data.
pub fn generate_blobs_test(dim: usize, num_classes: usize, n_per_class: usize, spread: f64, seed: u64) -> Dataset {
    generate_blobs_on_stream(dim, num_classes, n_per_class, spread, seed, stream::TEST_SAMPLES)
}

fn generate_blobs_on_stream(
    dim: usize,
    num_classes: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
    noise_stream: u64,
) -> Dataset {
    let centers = blob_centers(dim, num_classes, seed);
    let mut rng = stream_rng(seed, noise_stream);
    let n = n_per_class * num_classes;
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (c, center) in centers.iter().enumerate() {
            for &mu in center {
                let z: f64 = rng.sample(StandardNormal);
                values.push(mu + spread * z);
            }
            labels.push(c);
        }
    }
    let features = Matrix::from_vec(n, dim, values).expect("sized by construction");
    Dataset::new(features, labels, num_classes).expect("labels in range")
}
