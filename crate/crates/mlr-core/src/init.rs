//! Seeded weight initialization.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

/// i.i.d. Gaussian draws with mean 0 and the given std.
///
/// The generator stream is fixed by `seed`, so identical `(dims, seed, std)`
/// calls return bitwise-identical tensors.
pub fn normal_init(dims: &[usize], seed: u64, std: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        })
        .collect();
    Tensor::new(dims.to_vec(), data).expect("dims/data constructed consistently")
}
