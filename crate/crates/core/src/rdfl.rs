//! Hierarchical encoder-decoder that fuses the four reference frames into a
//! full-resolution feature, and the heads that decouple a feature into
//! reference motions and an occlusion map.

use jnmr_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion_model::{MotionField, MotionSet, OcclusionMap};
use crate::nn::{leaky_gain, Conv2d, ConvStack, Init, ParamStore, Params, LEAKY_SLOPE};

/// Encoder-decoder shape parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub conv_block_depth: usize,
    /// Number of pooling stages; 3 by default, 5 for the deep variant.
    pub num_hierarchies: usize,
    /// Skip compensation between decoder stages (three-level wiring only).
    pub compensation: bool,
    pub kernel_size: usize,
    pub dilation: usize,
    /// Hidden width of each decoupling head; `0` means `base_channels`.
    pub head_channels: usize,
    /// Orthogonal gain of the last layer of every decoupling head; `0`
    /// zero-initializes it.
    pub head_gain: f64,
    /// Initial softmax mass of the centre tap of every predicted kernel.
    pub centre_mass: f64,
    /// Initial weight of the nearer reference within each temporal side.
    pub near_weight: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 64,
            conv_block_depth: 3,
            num_hierarchies: 3,
            compensation: true,
            kernel_size: 5,
            dilation: 1,
            head_channels: 0,
            head_gain: 0.0,
            centre_mass: 0.9,
            near_weight: 0.9,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.conv_block_depth == 0 {
            return Err(invalid("base_channels and conv_block_depth must be positive"));
        }
        if self.num_hierarchies < 3 {
            return Err(invalid(format!("num_hierarchies must be at least 3, got {}", self.num_hierarchies)));
        }
        if self.compensation && self.num_hierarchies != 3 {
            return Err(invalid("skip compensation is defined for three hierarchies only"));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(invalid(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if !(self.head_gain >= 0.0) {
            return Err(invalid("head_gain must be non-negative"));
        }
        if !(self.centre_mass > 0.0 && self.centre_mass < 1.0) {
            return Err(invalid("centre_mass must lie in (0, 1)"));
        }
        if !(self.near_weight > 0.0 && self.near_weight < 1.0) {
            return Err(invalid("near_weight must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Channel width of encoder level `l`.
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level.min(2)
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    /// Spatial sizes must be multiples of this; other sizes are padded.
    pub fn size_multiple(&self) -> usize {
        1 << self.num_hierarchies
    }

    /// Logit bias of the centre tap that gives it `centre_mass` when all
    /// other logits are zero.
    fn centre_bias(&self) -> f64 {
        let others = (self.taps() - 1) as f64;
        if others == 0.0 {
            return 0.0;
        }
        (self.centre_mass * others / (1.0 - self.centre_mass)).ln()
    }

    fn head_width(&self) -> usize {
        if self.head_channels == 0 {
            self.base_channels
        } else {
            self.head_channels
        }
    }
}

/// Intermediate features of one forward pass.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    /// Channel concatenation of the four inputs.
    pub input: Var,
    /// `encoder[l]` is at `1 / 2^(l+1)` resolution.
    pub encoder: Vec<Var>,
    /// `decoder[l]` is at `1 / 2^l` resolution; `decoder[0]` is the fused
    /// full-resolution feature. Empty until decoded.
    pub decoder: Vec<Var>,
    /// Upsampled second encoder level, only with compensation.
    pub lateral: Option<Var>,
}

impl FeaturePyramid {
    /// Fused full-resolution feature.
    pub fn fused(&self) -> Result<Var> {
        self.decoder
            .first()
            .copied()
            .ok_or_else(|| crate::Error::InvalidState("feature pyramid has not been decoded".into()))
    }

    /// Decoder feature at `1 / 2^level` resolution.
    pub fn decoded_at(&self, level: usize) -> Result<Var> {
        self.decoder
            .get(level)
            .copied()
            .ok_or_else(|| crate::Error::InvalidState(format!("no decoder feature at level {level}")))
    }

    /// Encoder feature at `1 / 2^level` resolution (`level >= 1`).
    pub fn encoded_at(&self, level: usize) -> Result<Var> {
        level
            .checked_sub(1)
            .and_then(|l| self.encoder.get(l))
            .copied()
            .ok_or_else(|| crate::Error::InvalidState(format!("no encoder feature at level {level}")))
    }
}

/// Encoder-decoder parameters.
#[derive(Clone, Debug)]
pub struct Rdfl {
    cfg: NetworkConfig,
    encoder: Vec<ConvStack>,
    decoder: Vec<ConvStack>,
}

impl Rdfl {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, cfg: &NetworkConfig, in_channels: usize) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.conv_block_depth;
        let levels = cfg.num_hierarchies;
        let encoder = (0..levels)
            .map(|l| {
                let cin = if l == 0 { in_channels } else { cfg.width(l - 1) };
                ConvStack::new(ps, &format!("rdfl.enc{l}"), cin, cfg.width(l), depth)
            })
            .collect();
        let decoder = if cfg.compensation {
            let (c0, c1, c2) = (cfg.width(0), cfg.width(1), cfg.width(2));
            vec![
                ConvStack::new(ps, "rdfl.dec_f3", c2, c1, depth),
                ConvStack::new(ps, "rdfl.dec_f4", c1, c0, depth),
                ConvStack::new(ps, "rdfl.dec_f5", c1, c0, depth),
                ConvStack::new(ps, "rdfl.dec_f6", c0, c0, depth),
            ]
        } else {
            // level l output comes from level l + 1
            (0..levels)
                .rev()
                .map(|l| {
                    let cout = if l == 0 { cfg.width(0) } else { cfg.width(l - 1) };
                    ConvStack::new(ps, &format!("rdfl.dec{l}"), cfg.width(l), cout, depth)
                })
                .collect()
        };
        Ok(Rdfl {
            cfg: cfg.clone(),
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Concatenates the frames in temporal order and runs the encoder.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, frames: &[Var]) -> Result<FeaturePyramid> {
        if frames.len() != 4 {
            return Err(invalid(format!("encoder expects 4 frames, got {}", frames.len())));
        }
        let (_, _, h, w) = g.dims4(frames[0]);
        let m = self.cfg.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(invalid(format!("encoder input {h}x{w} is not a multiple of {m}")));
        }
        let input = g.concat_channels(frames);
        let mut x = input;
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for stack in &self.encoder {
            let y = stack.forward(g, p, x);
            x = g.avg_pool2(y);
            encoder.push(x);
        }
        Ok(FeaturePyramid {
            input,
            encoder,
            decoder: Vec::new(),
            lateral: None,
        })
    }

    /// Completes the pyramid with the decoder features.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, mut pyr: FeaturePyramid) -> Result<FeaturePyramid> {
        let levels = self.cfg.num_hierarchies;
        if pyr.encoder.len() != levels {
            return Err(crate::Error::InvalidState(format!(
                "pyramid has {} encoder levels, expected {levels}",
                pyr.encoder.len()
            )));
        }
        let up = |g: &mut Graph<T>, stack: &ConvStack, x: Var| {
            let y = stack.forward(g, p, x);
            g.upsample2(y)
        };
        let mut decoder = vec![None; levels + 1];
        if self.cfg.compensation {
            let (f0, f1, f2) = (pyr.encoder[0], pyr.encoder[1], pyr.encoder[2]);
            let u = up(g, &self.decoder[0], f2);
            let f3 = g.add(u, f1);
            let f4 = up(g, &self.decoder[1], f1);
            let u = up(g, &self.decoder[2], f3);
            let f5 = g.add_n(&[u, f0, f4]);
            let f6 = up(g, &self.decoder[3], f5);
            decoder[2] = Some(f3);
            decoder[1] = Some(f5);
            decoder[0] = Some(f6);
            pyr.lateral = Some(f4);
        } else {
            let mut x = pyr.encoder[levels - 1];
            decoder[levels] = Some(x);
            for (i, stack) in self.decoder.iter().enumerate() {
                x = up(g, stack, x);
                decoder[levels - 1 - i] = Some(x);
            }
        }
        pyr.decoder = decoder.into_iter().take(levels).map(|v| v.expect("decoder level")).collect();
        Ok(pyr)
    }
}

/// Graph-level motion of one reference for a batch: each `[N, K*K, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct MotionVars {
    pub weights: Var,
    pub alpha: Var,
    pub beta: Var,
}

impl MotionVars {
    pub fn constant<T: Scalar>(g: &mut Graph<T>, m: &MotionField<T>) -> Self {
        let (k, h, w) = (m.taps(), m.height(), m.width());
        let mut c = |t: &Tensor<T>| g.constant(t.clone().reshape(&[1, k, h, w]).expect("motion reshape"));
        MotionVars {
            weights: c(m.weights()),
            alpha: c(m.alpha()),
            beta: c(m.beta()),
        }
    }

    /// Batch item `index` as a concrete field.
    pub fn to_field<T: Scalar>(&self, g: &Graph<T>, index: usize, kernel_size: usize, dilation: usize) -> Result<MotionField<T>> {
        let item = |v: Var| -> Result<Tensor<T>> {
            let t = g.value(v).batch_item(index);
            let (_, c, h, w) = t.dims4();
            Ok(t.reshape(&[c, h, w])?)
        };
        MotionField::new(item(self.weights)?, item(self.alpha)?, item(self.beta)?, kernel_size, dilation)
    }

    /// `sum_i c_i * m_i`, channel-wise.
    pub fn combine<T: Scalar>(g: &mut Graph<T>, terms: &[(f64, MotionVars)]) -> MotionVars {
        let mut channel = |pick: fn(&MotionVars) -> Var| {
            let parts: Vec<Var> = terms
                .iter()
                .map(|(c, m)| if *c == 1.0 { pick(m) } else { g.scale(pick(m), T::lit(*c)) })
                .collect();
            if parts.len() == 1 {
                parts[0]
            } else {
                g.add_n(&parts)
            }
        };
        MotionVars {
            weights: channel(|m| m.weights),
            alpha: channel(|m| m.alpha),
            beta: channel(|m| m.beta),
        }
    }

    /// `[W, alpha, beta]` stacked along channels.
    pub fn concat<T: Scalar>(&self, g: &mut Graph<T>) -> Var {
        g.concat_channels(&[self.weights, self.alpha, self.beta])
    }

    /// Inverse of [`MotionVars::concat`].
    pub fn split<T: Scalar>(g: &mut Graph<T>, x: Var, taps: usize) -> MotionVars {
        MotionVars {
            weights: g.slice_channels(x, 0, taps),
            alpha: g.slice_channels(x, taps, taps),
            beta: g.slice_channels(x, 2 * taps, taps),
        }
    }
}

/// Graph-level reference motions and occlusion.
#[derive(Clone, Copy, Debug)]
pub struct MotionSetVars {
    /// Temporal order `-2, -1, 1, 2`.
    pub motions: [MotionVars; 4],
    /// `[N, 1, H, W]`, after the sigmoid.
    pub occlusion: Var,
    /// Pre-sigmoid occlusion, used to initialize other coefficient heads.
    pub occlusion_logits: Var,
    /// `[N, 2, H, W]` weight of `t = -1` against `t = -2` and of `t = 1`
    /// against `t = 2`; `None` weighs both references of a side equally.
    pub proximity: Option<Var>,
}

impl MotionSetVars {
    pub fn to_motion_set<T: Scalar>(&self, g: &Graph<T>, index: usize, kernel_size: usize, dilation: usize) -> Result<MotionSet<T>> {
        let f = |m: &MotionVars| m.to_field(g, index, kernel_size, dilation);
        let motions = [f(&self.motions[0])?, f(&self.motions[1])?, f(&self.motions[2])?, f(&self.motions[3])?];
        let o = g.value(self.occlusion).batch_item(index);
        let (_, _, h, w) = o.dims4();
        MotionSet::new(motions, OcclusionMap::new(o.reshape(&[1, h, w])?)?)
    }
}

#[derive(Clone, Debug)]
struct Head {
    hidden: Conv2d,
    out: Conv2d,
}

impl Head {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, cin: usize, hidden: usize, cout: usize, gain: f64) -> Self {
        let init = if gain == 0.0 { Init::Zero } else { Init::Orthogonal(gain) };
        Head {
            hidden: Conv2d::new(ps, &format!("{name}.hidden"), cin, hidden, 3, Init::Orthogonal(leaky_gain())),
            out: Conv2d::new(ps, &format!("{name}.out"), hidden, cout, 3, init),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, x: Var) -> Var {
        let h = self.hidden.forward(g, p, x);
        let h = g.leaky_relu(h, T::lit(LEAKY_SLOPE));
        self.out.forward(g, p, h)
    }
}

/// Five sub-heads: one per reference motion and one for occlusion and
/// proximity.
#[derive(Clone, Debug)]
pub struct MotionHeads {
    motion: Vec<Head>,
    occlusion: Head,
    in_channels: usize,
    kernel_size: usize,
    dilation: usize,
}

impl MotionHeads {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, in_channels: usize, cfg: &NetworkConfig) -> Self {
        let (hidden, taps) = (cfg.head_width(), cfg.taps());
        let motion = ["m2", "m1", "p1", "p2"]
            .iter()
            .map(|r| {
                let head = Head::new(ps, &format!("{name}.{r}"), in_channels, hidden, 3 * taps, cfg.head_gain);
                ps.get_mut(head.out.bias()).data_mut()[taps / 2] = T::lit(cfg.centre_bias());
                head
            })
            .collect();
        let occlusion = Head::new(ps, &format!("{name}.occ"), in_channels, hidden, 3, cfg.head_gain);
        let near = T::lit((cfg.near_weight / (1.0 - cfg.near_weight)).ln());
        ps.get_mut(occlusion.out.bias()).data_mut()[1..].fill(near);
        MotionHeads {
            motion,
            occlusion,
            in_channels,
            kernel_size: cfg.kernel_size,
            dilation: cfg.dilation,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    /// Maps a feature to softmax-normalized kernels, offsets, occlusion and
    /// the proximity weights of each side.
    pub fn decouple<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, feature: Var) -> Result<MotionSetVars> {
        let c = g.dims4(feature).1;
        if c != self.in_channels {
            return Err(invalid(format!("decoupling heads expect {} channels, got {c}", self.in_channels)));
        }
        let taps = self.kernel_size * self.kernel_size;
        let mut motions = Vec::with_capacity(4);
        for head in &self.motion {
            let out = head.forward(g, p, feature);
            let logits = g.slice_channels(out, 0, taps);
            motions.push(MotionVars {
                weights: g.softmax_channels(logits),
                alpha: g.slice_channels(out, taps, taps),
                beta: g.slice_channels(out, 2 * taps, taps),
            });
        }
        let out = self.occlusion.forward(g, p, feature);
        let occlusion_logits = g.slice_channels(out, 0, 1);
        let near = g.slice_channels(out, 1, 2);
        Ok(MotionSetVars {
            motions: [motions[0], motions[1], motions[2], motions[3]],
            occlusion: g.sigmoid(occlusion_logits),
            occlusion_logits,
            proximity: Some(g.sigmoid(near)),
        })
    }
}
