//! Training objective and evaluation metrics.

use std::path::PathBuf;

use jnmr_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion_model::{FrameTensor, MotionField, RegressedMotions};
use crate::nn::{leaky_gain, Conv2d, Init, ParamStore, Params, LEAKY_SLOPE};
use crate::rdfl::MotionVars;

pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_vgg: f64,
    pub lambda_d: f64,
    pub epsilon: f64,
    /// Also penalize the deformation of the reference motions.
    pub deform_reference_motions: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_vgg: 0.005,
            lambda_d: 0.01,
            epsilon: 0.001,
            deform_reference_motions: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_vgg >= 0.0 && self.lambda_d >= 0.0 && self.epsilon >= 0.0) {
            return Err(invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

fn same_dims<T: Scalar>(a: &FrameTensor<T>, b: &FrameTensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(invalid(format!("frame shapes {:?} and {:?} differ", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean over elements of `sqrt(x^2 + eps^2)`, `x = pred - target`.
pub fn charbonnier_loss<T: Scalar>(pred: &FrameTensor<T>, target: &FrameTensor<T>, eps: f64) -> Result<f64> {
    same_dims(pred, target)?;
    let e2 = eps * eps;
    let sum: f64 = pred
        .tensor()
        .data()
        .iter()
        .zip(target.tensor().data())
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            (d * d + e2).sqrt()
        })
        .sum();
    Ok(sum / pred.tensor().len() as f64)
}

pub fn charbonnier_var<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, eps: f64) -> Var {
    let d = g.sub(pred, target);
    let d2 = g.square(d);
    let s = g.add_scalar(d2, T::lit(eps * eps));
    let r = g.sqrt(s);
    g.mean(r)
}

fn tv_sum<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> f64 {
    let d = t.data();
    let planes = t.len() / (h * w);
    let mut acc = 0.0;
    for p in 0..planes {
        let o = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let v = d[o + i * w + j].as_f64();
                if j + 1 < w {
                    acc += (d[o + i * w + j + 1].as_f64() - v).abs();
                }
                if i + 1 < h {
                    acc += (d[o + (i + 1) * w + j].as_f64() - v).abs();
                }
            }
        }
    }
    acc
}

/// Total variation of the offsets of `field`, divided by the pixel count.
pub fn field_deformation<T: Scalar>(field: &MotionField<T>) -> f64 {
    let (h, w) = (field.height(), field.width());
    (tv_sum(field.alpha(), h, w) + tv_sum(field.beta(), h, w)) / (h * w) as f64
}

/// Offset total variation of both regressed motions.
pub fn deformation_loss<T: Scalar>(regressed: &RegressedMotions<T>) -> f64 {
    field_deformation(&regressed.forward) + field_deformation(&regressed.backward)
}

/// Graph form: summed over `fields`, each divided by `N * H * W`.
pub fn deformation_var<T: Scalar>(g: &mut Graph<T>, fields: &[MotionVars]) -> Option<Var> {
    let mut terms = Vec::with_capacity(4 * fields.len());
    for f in fields {
        let (n, _, h, w) = g.dims4(f.alpha);
        let norm = T::one() / T::from_usize(n * h * w).unwrap();
        for v in [f.alpha, f.beta] {
            for horizontal in [true, false] {
                if (horizontal && w < 2) || (!horizontal && h < 2) {
                    continue;
                }
                let d = if horizontal { g.diff_x(v) } else { g.diff_y(v) };
                let a = g.abs(d);
                let s = g.sum(a);
                terms.push(g.scale(s, norm));
            }
        }
    }
    match terms.len() {
        0 => None,
        1 => Some(terms[0]),
        _ => Some(g.add_n(&terms)),
    }
}

pub fn mse<T: Scalar>(pred: &FrameTensor<T>, target: &FrameTensor<T>) -> Result<f64> {
    same_dims(pred, target)?;
    let sum: f64 = pred
        .tensor()
        .data()
        .iter()
        .zip(target.tensor().data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(sum / pred.tensor().len() as f64)
}

/// Peak signal-to-noise ratio of `[0, 1]` frames in dB, capped at
/// [`PSNR_CAP`].
pub fn psnr<T: Scalar>(pred: &FrameTensor<T>, target: &FrameTensor<T>) -> Result<f64> {
    let m = mse(pred, target)?;
    if m < 1e-10 {
        Ok(PSNR_CAP)
    } else {
        Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|t| k[t] * x[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|t| k[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity over channels, Gaussian window 11x11 with
/// sigma 1.5 (shrunk to the frame for frames smaller than the window).
pub fn ssim<T: Scalar>(pred: &FrameTensor<T>, target: &FrameTensor<T>) -> Result<f64> {
    same_dims(pred, target)?;
    let (c, h, w) = pred.dims();
    let k = gaussian_window(SSIM_WINDOW.min(h).min(w));
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = pred.tensor().data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = target.tensor().data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, _, _) = filter_valid(&x, h, w, &k);
        let (my, _, _) = filter_valid(&y, h, w, &k);
        let (sxx, _, _) = filter_valid(&xx, h, w, &k);
        let (syy, _, _) = filter_valid(&yy, h, w, &k);
        let (sxy, _, _) = filter_valid(&xy, h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Stacks row `row` of every frame into a `C x len x W` image.
pub fn temporal_profile<T: Scalar>(sequence: &[FrameTensor<T>], row: usize) -> Result<FrameTensor<T>> {
    let first = sequence.first().ok_or_else(|| invalid("temporal profile of an empty sequence"))?;
    let (c, h, w) = first.dims();
    if row >= h {
        return Err(invalid(format!("row {row} outside frame height {h}")));
    }
    if sequence.iter().any(|f| f.dims() != (c, h, w)) {
        return Err(invalid("sequence frames differ in shape"));
    }
    Ok(FrameTensor::from_fn(c, sequence.len(), w, |ch, t, x| sequence[t].get(ch, row, x)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualMode {
    /// Frozen convolutional stack with seeded random weights.
    FixedRandom,
    /// Same stack, weights read from a parameter file.
    ExternalPlugin,
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    pub mode: PerceptualMode,
    pub seed: u64,
    /// Output width of each conv stage; every stage but the last is
    /// followed by 2x2 average pooling.
    pub channels: Vec<usize>,
    /// Parameter file for `external_plugin`.
    pub path: Option<PathBuf>,
    /// Names the feature layer in reports.
    pub layer: String,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig {
            mode: PerceptualMode::FixedRandom,
            seed: 0x5eed,
            channels: vec![16, 32, 32],
            path: None,
            layer: "stage3".into(),
        }
    }
}

/// Frozen feature extractor for the perceptual term.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor<T: Scalar> {
    mode: PerceptualMode,
    convs: Vec<Conv2d>,
    params: ParamStore<T>,
}

impl<T: Scalar> PerceptualExtractor<T> {
    pub fn new(cfg: &PerceptualConfig) -> Result<Self> {
        let mut params = ParamStore::new(cfg.seed);
        let mut convs = Vec::new();
        if cfg.mode != PerceptualMode::Disabled {
            if cfg.channels.is_empty() {
                return Err(invalid("perceptual extractor needs at least one stage"));
            }
            let mut cin = 3;
            for (i, &c) in cfg.channels.iter().enumerate() {
                convs.push(Conv2d::new(&mut params, &format!("perceptual.{i}"), cin, c, 3, Init::Orthogonal(leaky_gain())));
                cin = c;
            }
        }
        if cfg.mode == PerceptualMode::ExternalPlugin {
            let path = cfg
                .path
                .as_ref()
                .ok_or_else(|| crate::Error::Config("perceptual.path is required for external_plugin".into()))?;
            crate::checkpoint::load_params(&mut params, path)?;
        }
        Ok(PerceptualExtractor {
            mode: cfg.mode,
            convs,
            params,
        })
    }

    pub fn mode(&self) -> PerceptualMode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn features(&self, g: &mut Graph<T>, p: &Params, mut x: Var) -> Var {
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(g, p, x);
            x = g.leaky_relu(y, T::lit(LEAKY_SLOPE));
            let (_, _, h, w) = g.dims4(x);
            if i < last && h % 2 == 0 && w % 2 == 0 {
                x = g.avg_pool2(x);
            }
        }
        x
    }

    /// Mean squared feature difference; `None` when disabled.
    pub fn loss_var(&self, g: &mut Graph<T>, pred: Var, target: Var) -> Option<Var> {
        if self.mode == PerceptualMode::Disabled {
            return None;
        }
        let p = self.params.bind(g, false);
        let fp = self.features(g, &p, pred);
        let ft = self.features(g, &p, target);
        let d = g.sub(fp, ft);
        let d2 = g.square(d);
        Some(g.mean(d2))
    }

    pub fn loss(&self, pred: &FrameTensor<T>, target: &FrameTensor<T>) -> Result<f64> {
        same_dims(pred, target)?;
        let mut g = Graph::new();
        let (a, b) = (g.constant(pred.to_batch()), g.constant(target.to_batch()));
        Ok(self.loss_var(&mut g, a, b).map_or(0.0, |v| g.value(v).data()[0].as_f64()))
    }
}

/// Loss terms of one evaluation of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub charbonnier: f64,
    pub perceptual: f64,
    pub deformation: f64,
    pub total: f64,
}

/// `charbonnier + lambda_vgg * perceptual + lambda_d * deformation`.
pub fn total_loss<T: Scalar>(
    pred: &FrameTensor<T>,
    target: &FrameTensor<T>,
    regressed: &RegressedMotions<T>,
    weights: &LossWeights,
    extractor: &PerceptualExtractor<T>,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let charbonnier = charbonnier_loss(pred, target, weights.epsilon)?;
    let perceptual = extractor.loss(pred, target)?;
    let deformation = deformation_loss(regressed);
    Ok(LossBreakdown {
        charbonnier,
        perceptual,
        deformation,
        total: charbonnier + weights.lambda_vgg * perceptual + weights.lambda_d * deformation,
    })
}

/// Graph form of the objective: the scalar loss and its terms.
pub struct LossVars {
    pub total: Var,
    pub charbonnier: Var,
    pub perceptual: Option<Var>,
    pub deformation: Option<Var>,
}

pub fn total_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    deform_fields: &[MotionVars],
    weights: &LossWeights,
    extractor: &PerceptualExtractor<T>,
) -> LossVars {
    let charbonnier = charbonnier_var(g, pred, target, weights.epsilon);
    let perceptual = if weights.lambda_vgg > 0.0 {
        extractor.loss_var(g, pred, target)
    } else {
        None
    };
    let deformation = if weights.lambda_d > 0.0 {
        deformation_var(g, deform_fields)
    } else {
        None
    };
    let mut terms = vec![charbonnier];
    if let Some(p) = perceptual {
        terms.push(g.scale(p, T::lit(weights.lambda_vgg)));
    }
    if let Some(d) = deformation {
        terms.push(g.scale(d, T::lit(weights.lambda_d)));
    }
    let total = if terms.len() == 1 { terms[0] } else { g.add_n(&terms) };
    LossVars {
        total,
        charbonnier,
        perceptual,
        deformation,
    }
}
