//! Convolution, pooling, resampling and spatial differences.

use crate::graph::{Backward, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Unfolds one `[C, H, W]` image into a `[C*k*k, H*W]` patch matrix with
/// zero "same" padding.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    for ci in 0..c {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let sy = sy as usize;
                    out_row[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                    out_row[x_hi..].iter_mut().for_each(|v| *v = T::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    out_row[x_lo..x_hi].copy_from_slice(&src[sy * w + s0..sy * w + s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    for ci in 0..c {
        let dst = &mut x[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let s0 = (x_lo as isize + dx) as usize;
                    let d = &mut dst[sy * w + s0..sy * w + s0 + (x_hi - x_lo)];
                    for (a, &b) in d.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    k: usize,
}

impl<T: Scalar> Backward<T> for Conv2dOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, wt) = (inputs[0], inputs[1]);
        let (n, ci, h, w) = x.dims4();
        let co = wt.shape()[0];
        let k = self.k;
        let kk = ci * k * k;
        let plane = h * w;
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(wt.shape()));
        let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); kk * plane] };
        let mut gcols = if k == 1 { Vec::new() } else { vec![T::zero(); kk * plane] };
        for b in 0..n {
            let xb = &x.data()[b * ci * plane..(b + 1) * ci * plane];
            let gb = &grad.data()[b * co * plane..(b + 1) * co * plane];
            if let Some(gw) = gw.as_mut() {
                let cols_ref: &[T] = if k == 1 {
                    xb
                } else {
                    im2col(xb, ci, h, w, k, &mut cols);
                    &cols
                };
                T::gemm(
                    co, plane, kk, T::one(), gb, plane as isize, 1, cols_ref, 1, plane as isize, T::one(),
                    gw.data_mut(), kk as isize, 1,
                );
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx.data_mut()[b * ci * plane..(b + 1) * ci * plane];
                if k == 1 {
                    T::gemm(
                        kk, co, plane, T::one(), wt.data(), 1, kk as isize, gb, plane as isize, 1, T::one(), gxb,
                        plane as isize, 1,
                    );
                } else {
                    T::gemm(
                        kk, co, plane, T::one(), wt.data(), 1, kk as isize, gb, plane as isize, 1, T::zero(),
                        &mut gcols, plane as isize, 1,
                    );
                    col2im(&gcols, ci, h, w, k, gxb);
                }
            }
        }
        let mut out = vec![gx, gw];
        if inputs.len() == 3 {
            out.push(needs[2].then(|| {
                let mut gbias = Tensor::zeros(&[co]);
                for b in 0..n {
                    for o in 0..co {
                        let s: T = grad.data()[(b * co + o) * plane..(b * co + o + 1) * plane].iter().copied().sum();
                        gbias.data_mut()[o] += s;
                    }
                }
                gbias
            }));
        }
        out
    }
}

struct AvgPool2Op;

impl<T: Scalar> Backward<T> for AvgPool2Op {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = inputs[0].dims4();
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut gx = Tensor::zeros(inputs[0].shape());
        let (gd, g) = (gx.data_mut(), grad.data());
        for nc in 0..n * c {
            for y in 0..oh {
                for x in 0..ow {
                    let v = g[(nc * oh + y) * ow + x] * quarter;
                    let base = (nc * h + 2 * y) * w + 2 * x;
                    gd[base] = v;
                    gd[base + 1] = v;
                    gd[base + w] = v;
                    gd[base + w + 1] = v;
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Source index pair and interpolation weight for half-pixel bilinear
/// resampling (`align_corners = false`).
fn resample_table(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i0 == input - 1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

struct ResizeOp {
    ty: Vec<(usize, usize, f64)>,
    tx: Vec<(usize, usize, f64)>,
}

impl<T: Scalar> Backward<T> for ResizeOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = inputs[0].dims4();
        let (oh, ow) = (self.ty.len(), self.tx.len());
        let mut gx = Tensor::zeros(inputs[0].shape());
        let (gd, g) = (gx.data_mut(), grad.data());
        for nc in 0..n * c {
            let src = nc * h * w;
            for (y, &(y0, y1, fy)) in self.ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (x, &(x0, x1, fx)) in self.tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    let v = g[(nc * oh + y) * ow + x];
                    gd[src + y0 * w + x0] += v * (T::one() - fy) * (T::one() - fx);
                    gd[src + y0 * w + x1] += v * (T::one() - fy) * fx;
                    gd[src + y1 * w + x0] += v * fy * (T::one() - fx);
                    gd[src + y1 * w + x1] += v * fy * fx;
                }
            }
        }
        vec![Some(gx)]
    }
}

struct CropOp {
    top: usize,
    left: usize,
}

impl<T: Scalar> Backward<T> for CropOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = inputs[0].dims4();
        let (_, _, oh, ow) = grad.dims4();
        let mut gx = Tensor::zeros(inputs[0].shape());
        let (gd, g) = (gx.data_mut(), grad.data());
        for nc in 0..n * c {
            for y in 0..oh {
                let d = (nc * h + y + self.top) * w + self.left;
                gd[d..d + ow].copy_from_slice(&g[(nc * oh + y) * ow..(nc * oh + y + 1) * ow]);
            }
        }
        vec![Some(gx)]
    }
}

struct PadOp {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl<T: Scalar> Backward<T> for PadOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = inputs[0].dims4();
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut gx = Tensor::zeros(inputs[0].shape());
        let (gd, g) = (gx.data_mut(), grad.data());
        for nc in 0..n * c {
            for (y, &sy) in self.rows.iter().enumerate() {
                for (x, &sx) in self.cols.iter().enumerate() {
                    gd[(nc * h + sy) * w + sx] += g[(nc * oh + y) * ow + x];
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Source index of each padded position: identity inside, mirrored about
/// the last element beyond it (edge replicated when mirroring runs out).
fn reflect_index(len: usize, pad: usize) -> Vec<usize> {
    (0..len + pad)
        .map(|i| {
            if i < len {
                i
            } else {
                let over = i - len + 1;
                if over < len { len - 1 - over } else { 0 }
            }
        })
        .collect()
}

struct DiffOp {
    horizontal: bool,
}

impl<T: Scalar> Backward<T> for DiffOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = inputs[0].dims4();
        let (_, _, oh, ow) = grad.dims4();
        let mut gx = Tensor::zeros(inputs[0].shape());
        let (gd, g) = (gx.data_mut(), grad.data());
        for nc in 0..n * c {
            for y in 0..oh {
                for x in 0..ow {
                    let v = g[(nc * oh + y) * ow + x];
                    let here = (nc * h + y) * w + x;
                    let next = if self.horizontal { here + 1 } else { here + w };
                    gd[next] += v;
                    gd[here] -= v;
                }
            }
        }
        vec![Some(gx)]
    }
}

impl<T: Scalar> Graph<T> {
    /// Stride-1 convolution with "same" zero padding.
    ///
    /// `x` is `[N, Cin, H, W]`, `weight` is `[Cout, Cin, k, k]` with odd `k`,
    /// `bias` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let (n, ci, h, w) = self.dims4(x);
        let ws = self.shape(weight).to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be rank 4");
        let (co, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], ci, "conv weight expects {} input channels, got {ci}", ws[1]);
        assert!(k % 2 == 1 && ws[3] == k, "conv kernel must be square and odd");
        let kk = ci * k * k;
        let plane = h * w;
        let mut value = Tensor::zeros(&[n, co, h, w]);
        {
            let xd = self.value(x).data();
            let wd = self.value(weight).data();
            let bd = bias.map(|b| {
                assert_eq!(self.shape(b), &[co], "conv bias shape");
                self.value(b).data()
            });
            let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); kk * plane] };
            let vd = value.data_mut();
            for b in 0..n {
                let xb = &xd[b * ci * plane..(b + 1) * ci * plane];
                let ob = &mut vd[b * co * plane..(b + 1) * co * plane];
                if let Some(bd) = bd {
                    for o in 0..co {
                        ob[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = bd[o]);
                    }
                }
                let cols_ref: &[T] = if k == 1 {
                    xb
                } else {
                    im2col(xb, ci, h, w, k, &mut cols);
                    &cols
                };
                T::gemm(
                    co, kk, plane, T::one(), wd, kk as isize, 1, cols_ref, plane as isize, 1, T::one(), ob,
                    plane as isize, 1,
                );
            }
        }
        let inputs: Vec<Var> = match bias {
            Some(b) => vec![x, weight, b],
            None => vec![x, weight],
        };
        self.apply(&inputs, value, Conv2dOp { k })
    }

    /// 2x2 average pooling with stride 2; `H` and `W` must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.dims4(x);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial size, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut value = Tensor::zeros(&[n, c, oh, ow]);
        {
            let xd = self.value(x).data();
            let vd = value.data_mut();
            for nc in 0..n * c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let base = (nc * h + 2 * y) * w + 2 * xx;
                        vd[(nc * oh + y) * ow + xx] = (xd[base] + xd[base + 1] + xd[base + w] + xd[base + w + 1]) * quarter;
                    }
                }
            }
        }
        self.apply(&[x], value, AvgPool2Op)
    }

    /// Bilinear resampling to `out_h x out_w` with half-pixel centers.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let (n, c, h, w) = self.dims4(x);
        let ty = resample_table(h, out_h);
        let tx = resample_table(w, out_w);
        let mut value = Tensor::zeros(&[n, c, out_h, out_w]);
        {
            let xd = self.value(x).data();
            let vd = value.data_mut();
            for nc in 0..n * c {
                let src = nc * h * w;
                for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::lit(fy);
                    for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::lit(fx);
                        let top = xd[src + y0 * w + x0] * (T::one() - fx) + xd[src + y0 * w + x1] * fx;
                        let bot = xd[src + y1 * w + x0] * (T::one() - fx) + xd[src + y1 * w + x1] * fx;
                        vd[(nc * out_h + y) * out_w + xx] = top * (T::one() - fy) + bot * fy;
                    }
                }
            }
        }
        self.apply(&[x], value, ResizeOp { ty, tx })
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let (_, _, h, w) = self.dims4(x);
        self.resize_bilinear(x, 2 * h, 2 * w)
    }

    /// Spatial window `[top, top+h) x [left, left+w)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Var {
        let (n, c, ih, iw) = self.dims4(x);
        assert!(top + h <= ih && left + w <= iw, "crop window outside {ih}x{iw}");
        let mut value = Tensor::zeros(&[n, c, h, w]);
        {
            let xd = self.value(x).data();
            let vd = value.data_mut();
            for nc in 0..n * c {
                for y in 0..h {
                    let s = (nc * ih + y + top) * iw + left;
                    vd[(nc * h + y) * w..(nc * h + y + 1) * w].copy_from_slice(&xd[s..s + w]);
                }
            }
        }
        self.apply(&[x], value, CropOp { top, left })
    }

    /// Reflect-pads `bottom` rows and `right` columns.
    pub fn pad_reflect(&mut self, x: Var, bottom: usize, right: usize) -> Var {
        let (n, c, h, w) = self.dims4(x);
        let rows = reflect_index(h, bottom);
        let cols = reflect_index(w, right);
        let (oh, ow) = (rows.len(), cols.len());
        let mut value = Tensor::zeros(&[n, c, oh, ow]);
        {
            let xd = self.value(x).data();
            let vd = value.data_mut();
            for nc in 0..n * c {
                for (y, &sy) in rows.iter().enumerate() {
                    for (xx, &sx) in cols.iter().enumerate() {
                        vd[(nc * oh + y) * ow + xx] = xd[(nc * h + sy) * w + sx];
                    }
                }
            }
        }
        self.apply(&[x], value, PadOp { rows, cols })
    }

    /// Forward difference along the width axis: `x[.., j+1] - x[.., j]`.
    pub fn diff_x(&mut self, x: Var) -> Var {
        self.diff(x, true)
    }

    /// Forward difference along the height axis: `x[.., i+1, ..] - x[.., i, ..]`.
    pub fn diff_y(&mut self, x: Var) -> Var {
        self.diff(x, false)
    }

    fn diff(&mut self, x: Var, horizontal: bool) -> Var {
        let (n, c, h, w) = self.dims4(x);
        let (oh, ow) = if horizontal { (h, w - 1) } else { (h - 1, w) };
        let mut value = Tensor::zeros(&[n, c, oh, ow]);
        {
            let xd = self.value(x).data();
            let vd = value.data_mut();
            for nc in 0..n * c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let here = (nc * h + y) * w + xx;
                        let next = if horizontal { here + 1 } else { here + w };
                        vd[(nc * oh + y) * ow + xx] = xd[next] - xd[here];
                    }
                }
            }
        }
        self.apply(&[x], value, DiffOp { horizontal })
    }
}
