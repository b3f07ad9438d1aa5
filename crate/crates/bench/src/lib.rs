//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmera_core::ingest::encode_sample;
use wmera_core::{DenseTensor, Mps, ScaleData};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `n` encoded samples of width `sites` with random `+-1` labels.
pub fn product_dataset(n: usize, sites: usize, rng: &mut ChaCha8Rng) -> ScaleData {
    let samples: Vec<Mps> = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..sites).map(|_| rng.random_range(0.0..1.0)).collect();
            encode_sample(&x).expect("finite input")
        })
        .collect();
    let labels = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    ScaleData::new(samples, labels).expect("matching lengths")
}
