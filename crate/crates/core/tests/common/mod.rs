#![allow(dead_code)]

use ile::{IleConfig, Tensor};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn from_na(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    Tensor::matrix(m.nrows(), m.ncols(), data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// D = 4 (1×4 frames), T = 3, depth 2, n = 4.
pub fn tiny_config(seed: u64) -> IleConfig {
    IleConfig {
        flow_depth: 2,
        flow_hidden: 6,
        state_dim: 4,
        cond_len: 1,
        seed,
        ..IleConfig::new(1, 4, 3)
    }
}
