//! Deformable-kernel warping.
//!
//! For output pixel `(i, j)` and tap `(p, q)` of a `K x K` kernel with
//! dilation `d` the warp samples the frame at
//! `(i + d*p + alpha, j + d*q + beta)`, with taps centred on zero, and sums
//! the samples weighted by the tap weight. Sampling is bilinear; positions
//! outside the frame are clamped to the nearest edge pixel.

use jnmr_tensor::{Backward, Graph, Scalar, Tensor, Var};

use crate::error::{invalid, Result};
use crate::motion_model::{FrameTensor, MotionField, MotionSet};

#[derive(Clone, Copy)]
struct Axis<T> {
    lo: usize,
    hi: usize,
    frac: T,
    inside: bool,
}

#[inline]
fn locate<T: Scalar>(pos: T, len: usize) -> Axis<T> {
    let max = T::from_usize(len - 1).unwrap();
    let inside = pos >= T::zero() && pos <= max;
    let c = pos.max(T::zero()).min(max);
    let f = c.floor();
    let lo = f.to_usize().unwrap_or(0).min(len - 1);
    Axis {
        lo,
        hi: (lo + 1).min(len - 1),
        frac: c - f,
        inside,
    }
}

#[derive(Clone, Copy)]
struct Layout {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    dilation: usize,
}

impl Layout {
    fn taps(&self) -> usize {
        self.k * self.k
    }

    fn tap_offset(&self, t: usize) -> (isize, isize) {
        let r = (self.k / 2) as isize;
        let d = self.dilation as isize;
        (((t / self.k) as isize - r) * d, ((t % self.k) as isize - r) * d)
    }

    /// Calls `f(batch, tap, pixel, y_axis, x_axis)` for every sample.
    fn for_each_sample<T: Scalar>(
        &self,
        alpha: &[T],
        beta: &[T],
        mut f: impl FnMut(usize, usize, usize, Axis<T>, Axis<T>),
    ) {
        let plane = self.h * self.w;
        let taps = self.taps();
        for b in 0..self.n {
            for t in 0..taps {
                let (oy, ox) = self.tap_offset(t);
                let base = (b * taps + t) * plane;
                for i in 0..self.h {
                    let gy = T::from_isize(i as isize + oy).unwrap();
                    for j in 0..self.w {
                        let p = i * self.w + j;
                        let gx = T::from_isize(j as isize + ox).unwrap();
                        let ay = locate(gy + alpha[base + p], self.h);
                        let ax = locate(gx + beta[base + p], self.w);
                        f(b, t, p, ay, ax);
                    }
                }
            }
        }
    }
}

fn check_layout<T: Scalar>(frame: &Tensor<T>, weights: &Tensor<T>, alpha: &Tensor<T>, beta: &Tensor<T>, k: usize, dilation: usize) -> Result<Layout> {
    if frame.shape().len() != 4 {
        return Err(invalid(format!("warp frame must be N x C x H x W, got {:?}", frame.shape())));
    }
    let (n, c, h, w) = frame.dims4();
    if k == 0 || k % 2 == 0 {
        return Err(invalid(format!("kernel size must be odd and positive, got {k}")));
    }
    let expect = [n, k * k, h, w];
    for (name, t) in [("weights", weights), ("alpha", alpha), ("beta", beta)] {
        if t.shape() != expect {
            return Err(invalid(format!("warp {name} shape {:?}, expected {expect:?}", t.shape())));
        }
    }
    Ok(Layout { n, c, h, w, k, dilation })
}

fn forward<T: Scalar>(l: &Layout, frame: &[T], weights: &[T], alpha: &[T], beta: &[T]) -> Tensor<T> {
    let plane = l.h * l.w;
    let mut out = Tensor::zeros(&[l.n, l.c, l.h, l.w]);
    let od = out.data_mut();
    let one = T::one();
    l.for_each_sample(alpha, beta, |b, t, p, ay, ax| {
        let wt = weights[(b * l.taps() + t) * plane + p];
        if wt == T::zero() {
            return;
        }
        let (r0, r1) = (ay.lo * l.w, ay.hi * l.w);
        for ch in 0..l.c {
            let f = &frame[(b * l.c + ch) * plane..][..plane];
            let top = (one - ax.frac) * f[r0 + ax.lo] + ax.frac * f[r0 + ax.hi];
            let bot = (one - ax.frac) * f[r1 + ax.lo] + ax.frac * f[r1 + ax.hi];
            od[(b * l.c + ch) * plane + p] += wt * ((one - ay.frac) * top + ay.frac * bot);
        }
    });
    out
}

/// Warps a single frame with a motion field.
pub fn deformable_warp<T: Scalar>(frame: &FrameTensor<T>, motion: &MotionField<T>) -> Result<FrameTensor<T>> {
    if (frame.height(), frame.width()) != (motion.height(), motion.width()) {
        return Err(invalid(format!(
            "frame is {}x{} but motion is {}x{}",
            frame.height(),
            frame.width(),
            motion.height(),
            motion.width()
        )));
    }
    let (h, w) = (motion.height(), motion.width());
    let taps = motion.taps();
    let batch = |t: &Tensor<T>| t.clone().reshape(&[1, taps, h, w]).expect("motion reshape");
    let out = warp_tensors(
        &frame.to_batch(),
        &batch(motion.weights()),
        &batch(motion.alpha()),
        &batch(motion.beta()),
        motion.kernel_size(),
        motion.dilation(),
    )?;
    FrameTensor::from_batch(&out, 0)
}

/// Warps each reference frame by its own motion; frames in temporal order
/// `-2, -1, 1, 2`.
pub fn warp_all_references<T: Scalar>(frames: &[FrameTensor<T>], motions: &MotionSet<T>) -> Result<Vec<FrameTensor<T>>> {
    if frames.len() != 4 {
        return Err(invalid(format!("expected 4 reference frames, got {}", frames.len())));
    }
    frames.iter().zip(motions.motions()).map(|(f, m)| deformable_warp(f, m)).collect()
}

/// Batched warp on raw `[N, ...]` tensors.
pub fn warp_tensors<T: Scalar>(
    frame: &Tensor<T>,
    weights: &Tensor<T>,
    alpha: &Tensor<T>,
    beta: &Tensor<T>,
    kernel_size: usize,
    dilation: usize,
) -> Result<Tensor<T>> {
    let l = check_layout(frame, weights, alpha, beta, kernel_size, dilation)?;
    Ok(forward(&l, frame.data(), weights.data(), alpha.data(), beta.data()))
}

struct WarpOp {
    layout: Layout,
}

impl<T: Scalar> Backward<T> for WarpOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let l = self.layout;
        let (frame, weights, alpha, beta) = (inputs[0].data(), inputs[1].data(), inputs[2].data(), inputs[3].data());
        let g = grad.data();
        let plane = l.h * l.w;
        let one = T::one();
        let mut g_frame = needs[0].then(|| Tensor::zeros(inputs[0].shape()));
        let mut g_w = needs[1].then(|| Tensor::zeros(inputs[1].shape()));
        let mut g_a = needs[2].then(|| Tensor::zeros(inputs[2].shape()));
        let mut g_b = needs[3].then(|| Tensor::zeros(inputs[3].shape()));
        l.for_each_sample(alpha, beta, |b, t, p, ay, ax| {
            let mi = (b * l.taps() + t) * plane + p;
            let wt = weights[mi];
            let (r0, r1) = (ay.lo * l.w, ay.hi * l.w);
            let (mut dw, mut dy, mut dx) = (T::zero(), T::zero(), T::zero());
            for ch in 0..l.c {
                let fo = (b * l.c + ch) * plane;
                let go = g[fo + p];
                if go == T::zero() {
                    continue;
                }
                let f = &frame[fo..fo + plane];
                let (v00, v01, v10, v11) = (f[r0 + ax.lo], f[r0 + ax.hi], f[r1 + ax.lo], f[r1 + ax.hi]);
                let top = (one - ax.frac) * v00 + ax.frac * v01;
                let bot = (one - ax.frac) * v10 + ax.frac * v11;
                dw += go * ((one - ay.frac) * top + ay.frac * bot);
                dy += go * (bot - top);
                let left = (one - ay.frac) * v00 + ay.frac * v10;
                let right = (one - ay.frac) * v01 + ay.frac * v11;
                dx += go * (right - left);
                if let Some(gf) = g_frame.as_mut() {
                    let gf = &mut gf.data_mut()[fo..fo + plane];
                    let s = go * wt;
                    gf[r0 + ax.lo] += s * (one - ay.frac) * (one - ax.frac);
                    gf[r0 + ax.hi] += s * (one - ay.frac) * ax.frac;
                    gf[r1 + ax.lo] += s * ay.frac * (one - ax.frac);
                    gf[r1 + ax.hi] += s * ay.frac * ax.frac;
                }
            }
            if let Some(gw) = g_w.as_mut() {
                gw.data_mut()[mi] = dw;
            }
            if let Some(ga) = g_a.as_mut() {
                if ay.inside {
                    ga.data_mut()[mi] = wt * dy;
                }
            }
            if let Some(gb) = g_b.as_mut() {
                if ax.inside {
                    gb.data_mut()[mi] = wt * dx;
                }
            }
        });
        vec![g_frame, g_w, g_a, g_b]
    }
}

/// Records a warp of `frame` (`[N, C, H, W]`) by per-pixel kernels
/// `weights`, `alpha`, `beta` (each `[N, K*K, H, W]`).
///
/// Panics on inconsistent shapes; shapes inside a model are fixed by
/// construction.
pub fn warp_var<T: Scalar>(
    g: &mut Graph<T>,
    frame: Var,
    weights: Var,
    alpha: Var,
    beta: Var,
    kernel_size: usize,
    dilation: usize,
) -> Var {
    let layout = check_layout(g.value(frame), g.value(weights), g.value(alpha), g.value(beta), kernel_size, dilation)
        .unwrap_or_else(|e| panic!("{e}"));
    let value = forward(
        &layout,
        g.value(frame).data(),
        g.value(weights).data(),
        g.value(alpha).data(),
        g.value(beta).data(),
    );
    g.apply(&[frame, weights, alpha, beta], value, WarpOp { layout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use jnmr_tensor::gradcheck::{numeric_gradient, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(c: usize, h: usize, w: usize) -> FrameTensor<f64> {
        FrameTensor::from_fn(c, h, w, |ch, y, x| ((ch * 31 + y * 7 + x * 3) % 17) as f64 / 17.0)
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let f = ramp(3, 6, 7);
        let out = deformable_warp(&f, &MotionField::identity(5, 1, 6, 7)).unwrap();
        assert_eq!(out, f);
        let f32frame = f.cast::<f32>();
        let out = deformable_warp(&f32frame, &MotionField::identity(3, 2, 6, 7)).unwrap();
        assert_eq!(out, f32frame);
    }

    #[test]
    fn unit_vertical_offset_shifts_and_replicates_last_row() {
        let f = ramp(2, 5, 4);
        let out = deformable_warp(&f, &MotionField::translation(3, 1, 5, 4, 1.0, 0.0)).unwrap();
        for c in 0..2 {
            for y in 0..5 {
                for x in 0..4 {
                    let src = (y + 1).min(4);
                    assert_eq!(out.get(c, y, x), f.get(c, src, x));
                }
            }
        }
    }

    #[test]
    fn box_filter_matches_clamped_dense_convolution() {
        let (k, d, h, w) = (3, 2, 6, 7);
        let f = ramp(2, h, w);
        let mut m = MotionField::identity(k, d, h, w);
        m.weights_mut().data_mut().iter_mut().for_each(|v| *v = 1.0 / 9.0);
        let out = deformable_warp(&f, &m).unwrap();
        for c in 0..2 {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for p in -1..=1isize {
                        for q in -1..=1isize {
                            let sy = (y + d as isize * p).clamp(0, h as isize - 1) as usize;
                            let sx = (x + d as isize * q).clamp(0, w as isize - 1) as usize;
                            acc += f.get(c, sy, sx) / 9.0;
                        }
                    }
                    assert!((out.get(c, y as usize, x as usize) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn references_are_warped_independently() {
        let frames: Vec<_> = (0..4).map(|i| FrameTensor::from_fn(1, 4, 5, |_, y, x| (y * 5 + x + i) as f64)).collect();
        let shifts = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        let set = MotionSet::new(
            shifts.map(|(dy, dx)| MotionField::translation(3, 1, 4, 5, dy, dx)),
            crate::motion_model::OcclusionMap::constant(4, 5, 0.5).unwrap(),
        )
        .unwrap();
        let out = warp_all_references(&frames, &set).unwrap();
        for (i, (dy, dx)) in shifts.iter().enumerate() {
            for y in 0..4 {
                for x in 0..5 {
                    let sy = (y as f64 + dy).clamp(0.0, 3.0) as usize;
                    let sx = (x as f64 + dx).clamp(0.0, 4.0) as usize;
                    assert_eq!(out[i].get(0, y, x), frames[i].get(0, sy, sx));
                }
            }
        }
        assert!(warp_all_references(&frames[..1], &set).is_err());
    }

    #[test]
    fn fractional_offset_interpolates() {
        let f = FrameTensor::from_fn(1, 3, 4, |_, _, x| x as f64);
        let out = deformable_warp(&f, &MotionField::translation(1, 1, 3, 4, 0.0, 0.25)).unwrap();
        assert!((out.get(0, 1, 1) - 1.25).abs() < 1e-12);
        assert!((out.get(0, 1, 3) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let f = ramp(3, 6, 7);
        assert!(deformable_warp(&f, &MotionField::identity(3, 1, 6, 8)).is_err());
        let t = f.to_batch();
        let bad = Tensor::zeros(&[1, 4, 6, 7]);
        assert!(warp_tensors(&t, &bad, &bad, &bad, 2, 1).is_err());
    }

    #[test]
    fn warp_gradients_match_finite_differences() {
        let (n, c, h, w, k) = (2, 2, 5, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.random_range(lo..hi));
        let frame = rand(&[n, c, h, w], 0.0, 1.0);
        let weights = rand(&[n, k * k, h, w], -0.5, 1.0);
        // fractional parts kept away from the bilinear kinks
        let off = |t: Tensor<f64>| t.map(|v| v.floor() + 0.2 + 0.6 * (v - v.floor()));
        let alpha = off(rand(&[n, k * k, h, w], -2.0, 2.0));
        let beta = off(rand(&[n, k * k, h, w], -2.0, 2.0));
        let probe = rand(&[n, c, h, w], -1.0, 1.0);
        let inputs = [frame, weights, alpha, beta];
        let eval = |xs: &[Tensor<f64>]| warp_tensors(&xs[0], &xs[1], &xs[2], &xs[3], k, 1).unwrap().mul(&probe).sum();

        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = warp_var(&mut g, vars[0], vars[1], vars[2], vars[3], k, 1);
        let p = g.constant(probe.clone());
        let prod = g.mul(out, p);
        let loss = g.sum(prod);
        let grads = g.backward(loss);
        for i in 0..4 {
            let numeric = numeric_gradient(
                |x| {
                    let mut xs = inputs.to_vec();
                    xs[i] = x.clone();
                    eval(&xs)
                },
                &inputs[i],
                1e-6,
                None,
            );
            let err = relative_error(grads.get(vars[i]).unwrap(), &numeric, None);
            assert!(err < 1e-6, "input {i}: {err}");
        }
    }
}
