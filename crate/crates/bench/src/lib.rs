//! Inputs shared by the criterion benches.

use hadanet::{PackedHadaMatrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1)` values for an `rows × cols` matrix.
pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(&[rows, cols], data).expect("non-empty shape")
}

/// A square weight/activation pair in dense and packed form.
pub struct SquarePair {
    pub w: Tensor,
    pub a: Tensor,
    pub pw: PackedHadaMatrix,
    pub pa: PackedHadaMatrix,
}

impl SquarePair {
    pub fn new(m: usize, beta: usize, seed: u64) -> Self {
        let w = uniform_matrix(m, m, seed);
        let a = uniform_matrix(m, m, seed.wrapping_add(1));
        let pw = PackedHadaMatrix::pack(&w, beta).expect("valid beta");
        let pa = PackedHadaMatrix::pack(&a, beta).expect("valid beta");
        SquarePair { w, a, pw, pa }
    }
}
