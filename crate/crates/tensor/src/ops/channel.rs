//! Channel-axis operations on `[N, C, H, W]` tensors.

use crate::graph::{Backward, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn copy_channels<T: Scalar>(
    src: &[T],
    src_c: usize,
    src_start: usize,
    dst: &mut [T],
    dst_c: usize,
    dst_start: usize,
    count: usize,
    n: usize,
    plane: usize,
) {
    for b in 0..n {
        let s = (b * src_c + src_start) * plane;
        let d = (b * dst_c + dst_start) * plane;
        dst[d..d + count * plane].copy_from_slice(&src[s..s + count * plane]);
    }
}

struct ConcatOp {
    channels: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ConcatOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, total, h, w) = grad.dims4();
        let mut start = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (k, &c) in self.channels.iter().enumerate() {
            out.push(needs[k].then(|| {
                let mut g = Tensor::zeros(&[n, c, h, w]);
                copy_channels(grad.data(), total, start, g.data_mut(), c, 0, c, n, h * w);
                g
            }));
            start += c;
        }
        out
    }
}

struct SliceOp {
    start: usize,
}

impl<T: Scalar> Backward<T> for SliceOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = grad.dims4();
        let total = inputs[0].shape()[1];
        let mut g = Tensor::zeros(inputs[0].shape());
        copy_channels(grad.data(), c, 0, g.data_mut(), total, self.start, c, n, h * w);
        vec![Some(g)]
    }
}

struct SoftmaxOp;

impl<T: Scalar> Backward<T> for SoftmaxOp {
    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = output.dims4();
        let plane = h * w;
        let (y, g) = (output.data(), grad.data());
        let mut gx = Tensor::zeros(output.shape());
        let gd = gx.data_mut();
        let mut dot = vec![T::zero(); plane];
        for b in 0..n {
            let base = b * c * plane;
            dot.iter_mut().for_each(|d| *d = T::zero());
            for ch in 0..c {
                let o = base + ch * plane;
                for p in 0..plane {
                    dot[p] += y[o + p] * g[o + p];
                }
            }
            for ch in 0..c {
                let o = base + ch * plane;
                for p in 0..plane {
                    gd[o + p] = y[o + p] * (g[o + p] - dot[p]);
                }
            }
        }
        vec![Some(gx)]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn concat_channels(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "concat of nothing");
        let (n, _, h, w) = self.dims4(vars[0]);
        let channels: Vec<usize> = vars
            .iter()
            .map(|v| {
                let (vn, vc, vh, vw) = self.dims4(*v);
                assert_eq!((vn, vh, vw), (n, h, w), "concat_channels spatial/batch mismatch");
                vc
            })
            .collect();
        let total: usize = channels.iter().sum();
        let mut value = Tensor::zeros(&[n, total, h, w]);
        let mut start = 0;
        for (v, &c) in vars.iter().zip(&channels) {
            copy_channels(self.value(*v).data(), c, 0, value.data_mut(), total, start, c, n, h * w);
            start += c;
        }
        self.apply(vars, value, ConcatOp { channels })
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, c, h, w) = self.dims4(x);
        assert!(start + len <= c, "slice_channels {start}+{len} exceeds {c}");
        let mut value = Tensor::zeros(&[n, len, h, w]);
        copy_channels(self.value(x).data(), c, start, value.data_mut(), len, 0, len, n, h * w);
        self.apply(&[x], value, SliceOp { start })
    }

    /// Softmax across the channel axis, independently at every pixel.
    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.dims4(x);
        let plane = h * w;
        let xd = self.value(x).data();
        let mut value = Tensor::zeros(&[n, c, h, w]);
        {
            let vd = value.data_mut();
            let mut mx = vec![T::zero(); plane];
            let mut sum = vec![T::zero(); plane];
            for b in 0..n {
                let base = b * c * plane;
                mx.iter_mut().for_each(|m| *m = T::neg_infinity());
                sum.iter_mut().for_each(|s| *s = T::zero());
                for ch in 0..c {
                    let o = base + ch * plane;
                    for p in 0..plane {
                        mx[p] = mx[p].max(xd[o + p]);
                    }
                }
                for ch in 0..c {
                    let o = base + ch * plane;
                    for p in 0..plane {
                        let e = (xd[o + p] - mx[p]).exp();
                        vd[o + p] = e;
                        sum[p] += e;
                    }
                }
                for ch in 0..c {
                    let o = base + ch * plane;
                    for p in 0..plane {
                        vd[o + p] /= sum[p];
                    }
                }
            }
        }
        self.apply(&[x], value, SoftmaxOp)
    }
}
