//! Central finite differences, kept independent of the analytic backward
//! rules so they can serve as a test oracle.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Numerical gradient of `f` at `x` by central differences with `step`.
///
/// Only the entries listed in `indices` are perturbed (all when `None`);
/// the others are left at zero in the result.
pub fn numeric_gradient<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    step: T,
    indices: Option<&[usize]>,
) -> Tensor<T> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    for &i in idx {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (T::two() * step);
    }
    out
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, restricted to `indices`
/// when given. Returns 0 when both are zero.
pub fn relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, indices: Option<&[usize]>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error shape mismatch");
    let pick = |i: usize| (a.data()[i].as_f64(), b.data()[i].as_f64());
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    let mut visit = |i: usize| {
        let (x, y) = pick(i);
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    };
    match indices {
        Some(idx) => idx.iter().for_each(|&i| visit(i)),
        None => (0..a.len()).for_each(&mut visit),
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}
