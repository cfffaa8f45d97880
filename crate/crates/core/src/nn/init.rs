use rand::Rng;

use super::graph::Tensor;

/// Uniform in `±sqrt(6 / (rows + cols))`.
pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor {
        rows,
        cols,
        data: (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect(),
    }
}

pub fn zeros(rows: usize, cols: usize) -> Tensor {
    Tensor::zeros(rows, cols)
}
