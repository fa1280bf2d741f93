//! Coarse-to-fine synthesis enhancement: coarse-scale reconstructions of
//! the target, a grid-shaped multi-scale fusion network, and the final
//! per-pixel blend with the full-resolution prediction.

use jnmr_tensor::{Graph, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion_model::FrameTensor;
use crate::nn::{leaky_gain, Conv2d, Init, ParamStore, Params, LEAKY_SLOPE};
use crate::rdfl::{FeaturePyramid, MotionHeads, MotionSetVars, NetworkConfig};
use crate::regressor::{synthesize, RegressedVars, Regressor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFeatures {
    /// Deepest encoder feature and the first compensated decoder feature.
    F2f3,
    /// The two deepest encoder features.
    F1f2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    On,
    /// Average the upsampled coarse reconstructions instead of fusing.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfseConfig {
    pub enabled: bool,
    pub source_features: SourceFeatures,
    pub gridnet: GridMode,
    pub columns: usize,
    /// Channel width per grid row; zeros mean `(32, 64, 96)` scaled by
    /// `base_channels / 64`.
    pub row_channels: [usize; 3],
    /// Orthogonal gain of the fusion output layer; `0` zero-initializes it.
    pub head_gain: f64,
    /// Hidden width of the coarse decoupling heads; `0` means
    /// `5/8 * base_channels`.
    pub coarse_head_channels: usize,
}

impl Default for CfseConfig {
    fn default() -> Self {
        CfseConfig {
            enabled: true,
            source_features: SourceFeatures::F2f3,
            gridnet: GridMode::On,
            columns: 4,
            row_channels: [0; 3],
            head_gain: 0.0,
            coarse_head_channels: 0,
        }
    }
}

impl CfseConfig {
    pub fn widths(&self, base_channels: usize) -> [usize; 3] {
        if self.row_channels.iter().all(|&c| c > 0) {
            return self.row_channels;
        }
        [32, 64, 96].map(|c| (c * base_channels / 64).max(1))
    }
}

/// One coarse reconstruction of the target and the motions behind it.
#[derive(Clone, Debug)]
pub struct CoarseVars {
    /// Downsampling factor relative to the input.
    pub factor: usize,
    pub motions: MotionSetVars,
    pub regressed: RegressedVars,
    pub reconstruction: Var,
}

#[derive(Clone, Debug)]
struct Residual {
    a: Conv2d,
    b: Conv2d,
}

impl Residual {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, x: Var) -> Var {
        let s = T::lit(LEAKY_SLOPE);
        let h = g.leaky_relu(x, s);
        let h = self.a.forward(g, p, h);
        let h = g.leaky_relu(h, s);
        let h = self.b.forward(g, p, h);
        g.add(x, h)
    }
}

/// Three-row fusion grid; row `r` runs at `1 / 2^r` resolution. The first
/// half of the columns passes information down the rows, the second half
/// up.
#[derive(Clone, Debug)]
pub struct GridFusion {
    widths: [usize; 3],
    columns: usize,
    stems: Vec<Conv2d>,
    /// `lateral[r][j]` joins column `j` to `j + 1` on row `r`.
    lateral: Vec<Vec<Residual>>,
    /// `down[j][r]` feeds row `r + 1` from row `r` in column `j`.
    down: Vec<Vec<Conv2d>>,
    /// `up[j][r]` feeds row `r` from row `r + 1` in column `j`.
    up: Vec<Vec<Conv2d>>,
    head: Conv2d,
}

impl GridFusion {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, inputs: [usize; 3], widths: [usize; 3], columns: usize, head_gain: f64) -> Result<Self> {
        if columns < 2 || columns % 2 != 0 {
            return Err(invalid(format!("grid columns must be even and at least 2, got {columns}")));
        }
        let gain = Init::Orthogonal(leaky_gain());
        let stems = (0..3)
            .map(|r| Conv2d::new(ps, &format!("cfse.grid.stem{r}"), inputs[r], widths[r], 3, gain))
            .collect();
        let lateral = (0..3)
            .map(|r| {
                (0..columns - 1)
                    .map(|j| Residual {
                        a: Conv2d::new(ps, &format!("cfse.grid.lat{r}_{j}.a"), widths[r], widths[r], 3, gain),
                        b: Conv2d::new(ps, &format!("cfse.grid.lat{r}_{j}.b"), widths[r], widths[r], 3, gain),
                    })
                    .collect()
            })
            .collect();
        let half = columns / 2;
        let down = (0..half)
            .map(|j| {
                (0..2)
                    .map(|r| Conv2d::new(ps, &format!("cfse.grid.down{j}_{r}"), widths[r], widths[r + 1], 3, gain))
                    .collect()
            })
            .collect();
        let up = (half..columns)
            .map(|j| {
                (0..2)
                    .map(|r| Conv2d::new(ps, &format!("cfse.grid.up{j}_{r}"), widths[r + 1], widths[r], 3, gain))
                    .collect()
            })
            .collect();
        let head_init = if head_gain == 0.0 { Init::Zero } else { Init::Orthogonal(head_gain) };
        let head = Conv2d::new(ps, "cfse.grid.head", widths[0], 3, 3, head_init);
        Ok(GridFusion {
            widths,
            columns,
            stems,
            lateral,
            down,
            up,
            head,
        })
    }

    pub fn widths(&self) -> [usize; 3] {
        self.widths
    }

    /// `rows[r]` is the input of row `r`, at `1 / 2^r` resolution.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, rows: [Var; 3]) -> Var {
        let s = T::lit(LEAKY_SLOPE);
        let half = self.columns / 2;
        let down = |g: &mut Graph<T>, conv: &Conv2d, x: Var| {
            let h = g.leaky_relu(x, s);
            let h = g.avg_pool2(h);
            conv.forward(g, p, h)
        };
        let up = |g: &mut Graph<T>, conv: &Conv2d, x: Var| {
            let h = g.leaky_relu(x, s);
            let h = conv.forward(g, p, h);
            g.upsample2(h)
        };
        let mut col: Vec<Var> = Vec::with_capacity(3);
        for r in 0..3 {
            let stem = self.stems[r].forward(g, p, rows[r]);
            let mut x = g.leaky_relu(stem, s);
            if r > 0 {
                let d = down(g, &self.down[0][r - 1], col[r - 1]);
                x = g.add(x, d);
            }
            col.push(x);
        }
        for j in 1..self.columns {
            let mut next: Vec<Var> = (0..3).map(|r| self.lateral[r][j - 1].forward(g, p, col[r])).collect();
            if j < half {
                for r in 1..3 {
                    let d = down(g, &self.down[j][r - 1], next[r - 1]);
                    next[r] = g.add(next[r], d);
                }
            } else {
                for r in (0..2).rev() {
                    let u = up(g, &self.up[j - half][r], next[r + 1]);
                    next[r] = g.add(next[r], u);
                }
            }
            col = next;
        }
        self.head.forward(g, p, col[0])
    }
}

/// Enhancement parameters.
#[derive(Clone, Debug)]
pub struct Cfse {
    cfg: CfseConfig,
    /// Coarse sources as `(factor, heads)`, coarsest first.
    heads: Vec<(usize, MotionHeads)>,
    grid: Option<GridFusion>,
    lambda: Conv2d,
}

impl Cfse {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, cfg: &CfseConfig, net: &NetworkConfig) -> Result<Self> {
        // both source pairs provide widths (4c, 2c) at factors (8, 4)
        let sources = [(8, net.width(2)), (4, net.width(1))];
        let head_net = NetworkConfig {
            head_channels: match cfg.coarse_head_channels {
                0 => (net.base_channels * 5 / 8).max(1),
                c => c,
            },
            ..net.clone()
        };
        let heads = sources
            .iter()
            .map(|&(factor, ch)| (factor, MotionHeads::new(ps, &format!("cfse.heads{factor}"), ch, &head_net)))
            .collect();
        let grid = match cfg.gridnet {
            GridMode::On => Some(GridFusion::new(ps, [9, 6, 6], cfg.widths(net.base_channels), cfg.columns, cfg.head_gain)?),
            GridMode::Off => None,
        };
        let lambda = Conv2d::new(ps, "cfse.lambda", net.width(0), 1, 3, Init::Zero);
        Ok(Cfse {
            cfg: cfg.clone(),
            heads,
            grid,
            lambda,
        })
    }

    pub fn config(&self) -> &CfseConfig {
        &self.cfg
    }

    fn source(&self, pyr: &FeaturePyramid, factor: usize) -> Result<Var> {
        match (self.cfg.source_features, factor) {
            (SourceFeatures::F2f3, 8) => pyr.encoded_at(3),
            (SourceFeatures::F2f3, _) => pyr.decoded_at(2),
            (SourceFeatures::F1f2, 8) => pyr.encoded_at(3),
            (SourceFeatures::F1f2, _) => pyr.encoded_at(2),
        }
    }

    /// Decouples each coarse source, regresses and synthesizes the target at
    /// that scale.
    pub fn coarse_reconstruct<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Params,
        pyr: &FeaturePyramid,
        frames: &[Var; 4],
        regressor: &Regressor,
    ) -> Result<Vec<CoarseVars>> {
        let mut out = Vec::with_capacity(self.heads.len());
        for (factor, heads) in &self.heads {
            let feature = self.source(pyr, *factor)?;
            let motions = heads.decouple(g, p, feature)?;
            let scaled = frames.map(|f| {
                let mut x = f;
                let mut k = 1;
                while k < *factor {
                    x = g.avg_pool2(x);
                    k *= 2;
                }
                x
            });
            let (fh, fw) = (g.dims4(scaled[0]).2, g.dims4(scaled[0]).3);
            let (mh, mw) = (g.dims4(motions.occlusion).2, g.dims4(motions.occlusion).3);
            if (fh, fw) != (mh, mw) {
                return Err(crate::Error::InvalidState(format!(
                    "coarse feature {mh}x{mw} does not match frames downsampled by {factor} ({fh}x{fw})"
                )));
            }
            let regressed = regressor.regress(g, p, &motions)?;
            let syn = synthesize(g, &scaled, &motions, &regressed, heads.kernel_size(), heads.dilation());
            out.push(CoarseVars {
                factor: *factor,
                motions,
                regressed,
                reconstruction: syn.predicted,
            });
        }
        Ok(out)
    }

    /// Fuses the coarse reconstructions with the full-resolution prediction.
    /// The grid predicts a correction of the fine prediction; without the
    /// grid the upsampled coarse reconstructions are averaged.
    pub fn fuse<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, coarse: &[CoarseVars], fine: Var) -> Var {
        let (_, _, h, w) = g.dims4(fine);
        let resized = |g: &mut Graph<T>, r: usize| -> Vec<Var> {
            coarse.iter().map(|c| g.resize_bilinear(c.reconstruction, h >> r, w >> r)).collect()
        };
        match &self.grid {
            Some(grid) => {
                let mut row0 = vec![fine];
                row0.extend(resized(g, 0));
                let row0 = g.concat_channels(&row0);
                let row1 = resized(g, 1);
                let row1 = g.concat_channels(&row1);
                let row2 = resized(g, 2);
                let row2 = g.concat_channels(&row2);
                let residual = grid.forward(g, p, [row0, row1, row2]);
                g.add(fine, residual)
            }
            None => {
                let ups = resized(g, 0);
                let sum = g.add_n(&ups);
                g.scale(sum, T::one() / T::from_usize(ups.len()).unwrap())
            }
        }
    }

    /// Blend coefficient from the fused feature, initialized at the
    /// occlusion.
    pub fn lambda<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, fused_feature: Var, occlusion_logits: Var) -> Var {
        let z = self.lambda.forward(g, p, fused_feature);
        let z = g.add(occlusion_logits, z);
        g.sigmoid(z)
    }
}

/// `clamp(lambda * tilde + (1 - lambda) * bar, 0, 1)`.
pub fn final_blend<T: Scalar>(tilde: &FrameTensor<T>, bar: &FrameTensor<T>, lambda: &jnmr_tensor::Tensor<T>) -> Result<FrameTensor<T>> {
    let blended = crate::motion_model::compose_offset_frame(tilde, bar, lambda)?;
    Ok(blended.clamp01())
}

/// Graph form of [`final_blend`].
pub fn final_blend_var<T: Scalar>(g: &mut Graph<T>, tilde: Var, bar: Var, lambda: Var) -> Var {
    let b = g.lerp_bcast(lambda, tilde, bar);
    g.clamp(b, T::zero(), T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use jnmr_tensor::Tensor;

    #[test]
    fn final_blend_cases() {
        let a = FrameTensor::filled(3, 2, 2, 0.2);
        let b = FrameTensor::filled(3, 2, 2, 0.6);
        let ones = Tensor::ones(&[1, 2, 2]);
        let zeros = Tensor::zeros(&[1, 2, 2]);
        assert_eq!(final_blend(&a, &b, &ones).unwrap(), a);
        assert_eq!(final_blend(&a, &b, &zeros).unwrap(), b);
        let mid = final_blend(&a, &b, &Tensor::full(&[1, 2, 2], 0.5)).unwrap();
        assert!(mid.tensor().data().iter().all(|v| (v - 0.4f64).abs() < 1e-12));
        let hi = FrameTensor::filled(3, 2, 2, 1.7);
        let lo = FrameTensor::filled(3, 2, 2, -0.3);
        assert!(final_blend(&hi, &lo, &ones).unwrap().tensor().data().iter().all(|&v| v == 1.0));
        assert!(final_blend(&hi, &lo, &zeros).unwrap().tensor().data().iter().all(|&v| v == 0.0));
        assert!(final_blend(&a, &FrameTensor::filled(3, 2, 3, 0.0), &ones).is_err());
    }

    #[test]
    fn zero_head_grid_outputs_zero_at_full_resolution() {
        let mut ps = ParamStore::<f64>::new(3);
        let grid = GridFusion::new(&mut ps, [9, 6, 6], [4, 6, 8], 4, 0.0).unwrap();
        let mut g = Graph::new();
        let p = ps.bind(&mut g, false);
        let rows = [
            g.constant(Tensor::full(&[1, 9, 16, 16], 0.3)),
            g.constant(Tensor::full(&[1, 6, 8, 8], 0.3)),
            g.constant(Tensor::full(&[1, 6, 4, 4], 0.3)),
        ];
        let out = grid.forward(&mut g, &p, rows);
        assert_eq!(g.shape(out), &[1, 3, 16, 16]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
        assert!(GridFusion::new(&mut ParamStore::<f64>::new(3), [9, 6, 6], [4, 6, 8], 3, 0.0).is_err());
    }

    #[test]
    fn default_widths_scale_with_base_channels() {
        let cfg = CfseConfig::default();
        assert_eq!(cfg.widths(64), [32, 64, 96]);
        assert_eq!(cfg.widths(16), [8, 16, 24]);
    }
}
