//! Deterministic parameter initializers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Orthogonal initialization of a weight whose first axis is the output
/// dimension; the remaining axes are flattened into the fan-in.
///
/// Rows (or columns, whichever are fewer) of the flattened matrix are
/// orthonormal, then scaled by `gain`.
pub fn orthogonal<T: Scalar>(shape: &[usize], gain: f64, seed: u64) -> Tensor<T> {
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // column-major tall x short matrix
    let mut q: Vec<f64> = (0..tall * short).map(|_| StandardNormal.sample(&mut rng)).collect();
    for j in 0..short {
        for p in 0..j {
            let dot: f64 = (0..tall).map(|i| q[j * tall + i] * q[p * tall + i]).sum();
            for i in 0..tall {
                q[j * tall + i] -= dot * q[p * tall + i];
            }
        }
        let norm: f64 = (0..tall).map(|i| q[j * tall + i].powi(2)).sum::<f64>().sqrt();
        for i in 0..tall {
            q[j * tall + i] /= norm.max(1e-12);
        }
    }
    let data = (0..rows * cols)
        .map(|idx| {
            let (r, c) = (idx / cols, idx % cols);
            let v = if rows >= cols { q[c * tall + r] } else { q[r * tall + c] };
            T::lit(v * gain)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("orthogonal init shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(t: &Tensor<f64>, by_rows: bool) -> Vec<f64> {
        let rows = t.shape()[0];
        let cols = t.len() / rows;
        let d = t.data();
        let m = if by_rows { rows } else { cols };
        let mut g = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                g[a * m + b] = if by_rows {
                    (0..cols).map(|c| d[a * cols + c] * d[b * cols + c]).sum()
                } else {
                    (0..rows).map(|r| d[r * cols + a] * d[r * cols + b]).sum()
                };
            }
        }
        g
    }

    #[test]
    fn wide_matrix_has_orthonormal_rows() {
        let w = orthogonal::<f64>(&[4, 3, 3, 3], 1.0, 3);
        let g = gram(&w, true);
        for a in 0..4 {
            for b in 0..4 {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((g[a * 4 + b] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tall_matrix_has_orthonormal_columns_scaled_by_gain() {
        let w = orthogonal::<f64>(&[10, 2, 1, 1], 2.0, 5);
        let g = gram(&w, false);
        assert!((g[0] - 4.0).abs() < 1e-10 && (g[3] - 4.0).abs() < 1e-10 && g[1].abs() < 1e-10);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = orthogonal::<f32>(&[8, 4, 3, 3], 1.0, 11);
        let b = orthogonal::<f32>(&[8, 4, 3, 3], 1.0, 11);
        let c = orthogonal::<f32>(&[8, 4, 3, 3], 1.0, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
