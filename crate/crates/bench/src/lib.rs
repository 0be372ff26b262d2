//! Shared input builders for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prnet_core::metrics::{GtMask, SaliencyMap};
use prnet_core::Tensor;

pub fn seeded_tensor(seed: u64, shape: Vec<usize>) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn seeded_map(seed: u64, w: usize, h: usize) -> (SaliencyMap, GtMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = SaliencyMap::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let g = GtMask::new(w, h, (0..w * h).map(|_| rng.gen_bool(0.3)).collect()).unwrap();
    (p, g)
}
