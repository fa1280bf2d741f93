//! The assembled interpolation model.

use jnmr_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::cfse::{final_blend_var, Cfse, CfseConfig, CoarseVars};
use crate::error::{invalid, Result};
use crate::motion_model::FrameTensor;
use crate::nn::{ParamStore, Params};
use crate::rdfl::{FeaturePyramid, MotionHeads, MotionSetVars, NetworkConfig, Rdfl};
use crate::regressor::{synthesize, RegressedVars, RegressionMode, Regressor, RegressorConfig, SynthesisVars};

/// Channels per frame.
pub const FRAME_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub network: NetworkConfig,
    pub regression: RegressorConfig,
    pub cfse: CfseConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Named model sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
    Tiny,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::full(),
            Preset::Desk => ModelConfig::desk(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            "tiny" => Ok(Preset::Tiny),
            _ => Err(invalid(format!("unknown preset {s:?}"))),
        }
    }
}

impl ModelConfig {
    pub fn full() -> Self {
        ModelConfig {
            network: NetworkConfig::default(),
            regression: RegressorConfig::default(),
            cfse: CfseConfig::default(),
        }
    }

    pub fn desk() -> Self {
        let mut cfg = Self::full();
        cfg.network.base_channels = 16;
        cfg
    }

    /// Smallest working configuration, sized for single-core test runs.
    pub fn tiny() -> Self {
        let mut cfg = Self::full();
        cfg.network.base_channels = 8;
        cfg.network.conv_block_depth = 2;
        cfg.network.kernel_size = 3;
        cfg.regression.hidden_channels = 8;
        cfg
    }

    pub fn with_mode(mut self, mode: RegressionMode) -> Self {
        self.regression.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.cfse.enabled && self.cfse.columns % 2 != 0 {
            return Err(invalid("cfse.columns must be even"));
        }
        Ok(())
    }
}

/// Per-call switches that do not change the parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Replaces the learned blend coefficient by a constant.
    pub lambda_override: Option<f64>,
}

/// Everything one forward pass exposes.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Final interpolated frame in `[0, 1]`, at input size.
    pub output: Var,
    /// Prediction before enhancement, at input size.
    pub predicted: Var,
    pub motions: MotionSetVars,
    pub regressed: RegressedVars,
    pub synthesis: SynthesisVars,
    pub pyramid: FeaturePyramid,
    pub coarse: Vec<CoarseVars>,
    /// Multi-scale fused frame, when enhancement is on.
    pub fused: Option<Var>,
    pub lambda: Option<Var>,
}

/// Model structure; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    rdfl: Rdfl,
    heads: MotionHeads,
    regressor: Regressor,
    cfse: Option<Cfse>,
}

impl Model {
    /// Builds the model and registers freshly initialized parameters.
    pub fn new<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Model, ParamStore<T>)> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed);
        let net = &cfg.network;
        let rdfl = Rdfl::new(&mut ps, net, 4 * FRAME_CHANNELS)?;
        let heads = MotionHeads::new(&mut ps, "heads", net.width(0), net);
        let regressor = Regressor::new(&mut ps, &cfg.regression, net.kernel_size, net.dilation)?;
        let cfse = if cfg.cfse.enabled {
            Some(Cfse::new(&mut ps, &cfg.cfse, net)?)
        } else {
            None
        };
        Ok((
            Model {
                cfg: cfg.clone(),
                rdfl,
                heads,
                regressor,
                cfse,
            },
            ps,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn kernel_size(&self) -> usize {
        self.cfg.network.kernel_size
    }

    pub fn dilation(&self) -> usize {
        self.cfg.network.dilation
    }

    /// `frames` are `[N, 3, H, W]` in temporal order `-2, -1, 1, 2`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, frames: [Var; 4], opts: ForwardOptions) -> Result<ModelOutput> {
        let (n, c, h, w) = g.dims4(frames[0]);
        if c != FRAME_CHANNELS {
            return Err(invalid(format!("frames must have {FRAME_CHANNELS} channels, got {c}")));
        }
        for f in &frames[1..] {
            if g.dims4(*f) != (n, c, h, w) {
                return Err(invalid(format!("input frames differ in shape: {:?} vs {:?}", g.shape(*f), [n, c, h, w])));
            }
        }
        let m = self.cfg.network.size_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let frames = if (ph, pw) != (h, w) {
            frames.map(|f| g.pad_reflect(f, ph - h, pw - w))
        } else {
            frames
        };
        let pyr = self.rdfl.encode(g, p, &frames)?;
        let pyramid = self.rdfl.decode(g, p, pyr)?;
        let fused_feature = pyramid.fused()?;
        let motions = self.heads.decouple(g, p, fused_feature)?;
        let regressed = self.regressor.regress(g, p, &motions)?;
        let synthesis = synthesize(g, &frames, &motions, &regressed, self.kernel_size(), self.dilation());
        let predicted_full = synthesis.predicted;
        let (output, coarse, fused, lambda) = match &self.cfse {
            Some(cfse) => {
                let coarse = cfse.coarse_reconstruct(g, p, &pyramid, &frames, &self.regressor)?;
                let fused = cfse.fuse(g, p, &coarse, predicted_full);
                let lambda = match opts.lambda_override {
                    Some(v) => g.constant(Tensor::full(&[n, 1, ph, pw], T::lit(v))),
                    None => cfse.lambda(g, p, fused_feature, motions.occlusion_logits),
                };
                let out = final_blend_var(g, predicted_full, fused, lambda);
                (out, coarse, Some(fused), Some(lambda))
            }
            None => {
                let out = g.clamp(predicted_full, T::zero(), T::one());
                (out, Vec::new(), None, None)
            }
        };
        let crop = |g: &mut Graph<T>, v: Var| if (ph, pw) != (h, w) { g.crop(v, 0, 0, h, w) } else { v };
        Ok(ModelOutput {
            output: crop(g, output),
            predicted: crop(g, predicted_full),
            motions,
            regressed,
            synthesis,
            pyramid,
            coarse,
            fused,
            lambda,
        })
    }

    /// Inference on a batch without recording gradients. `frames` are four
    /// `[N, 3, H, W]` tensors.
    pub fn infer<T: Scalar>(&self, params: &ParamStore<T>, frames: &[Tensor<T>; 4]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let vars = frames.clone().map(|f| g.constant(f));
        let out = self.forward(&mut g, &p, vars, ForwardOptions::default())?;
        Ok(g.value(out.output).clone())
    }

    /// Interpolates the middle frame of four single frames.
    pub fn interpolate<T: Scalar>(&self, params: &ParamStore<T>, frames: &[FrameTensor<T>; 4]) -> Result<FrameTensor<T>> {
        let dims = frames[0].dims();
        if frames.iter().any(|f| f.dims() != dims) {
            return Err(invalid("input frames differ in shape"));
        }
        let batch = frames.clone().map(|f| f.to_batch());
        let out = self.infer(params, &batch)?;
        FrameTensor::from_batch(&out, 0)
    }
}

/// Number of trainable scalars of the assembled model.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    let (_, ps) = Model::new::<f32>(cfg, 0)?;
    Ok(ps.num_elements())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inputs(n: usize, h: usize, w: usize, seed: u64) -> [Tensor<f32>; 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [0, 1, 2, 3].map(|_| Tensor::from_fn(&[n, 3, h, w], |_| rng.random_range(0.0..1.0)))
    }

    #[test]
    fn tiny_model_runs_and_stays_in_range() {
        let (model, ps) = Model::new::<f32>(&ModelConfig::tiny(), 3).unwrap();
        let out = model.infer(&ps, &inputs(2, 16, 24, 1)).unwrap();
        assert_eq!(out.shape(), &[2, 3, 16, 24]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let (model, ps) = Model::new::<f32>(&ModelConfig::tiny(), 3).unwrap();
        let out = model.infer(&ps, &inputs(1, 13, 10, 2)).unwrap();
        assert_eq!(out.shape(), &[1, 3, 13, 10]);
    }

    #[test]
    fn inference_is_deterministic() {
        let (model, ps) = Model::new::<f32>(&ModelConfig::tiny(), 5).unwrap();
        let x = inputs(1, 16, 16, 3);
        assert_eq!(model.infer(&ps, &x).unwrap(), model.infer(&ps, &x).unwrap());
    }

    #[test]
    fn parameter_counts() {
        let full = count_parameters(&ModelConfig::full()).unwrap();
        assert!((full as f64 - 5.7e6).abs() <= 0.57e6, "full preset has {full} parameters");
        let desk = count_parameters(&ModelConfig::desk()).unwrap();
        assert!(desk < 1_000_000, "desk preset has {desk} parameters");
        assert_eq!(desk, count_parameters(&ModelConfig::desk()).unwrap());
    }

    #[test]
    fn unit_lambda_matches_the_model_without_enhancement() {
        let mut with = ModelConfig::tiny();
        with.cfse.head_gain = 0.3;
        let mut without = with.clone();
        without.cfse.enabled = false;
        let (m1, p1) = Model::new::<f64>(&with, 7).unwrap();
        let (m2, p2) = Model::new::<f64>(&without, 7).unwrap();
        let x = inputs(1, 16, 16, 4).map(|t| t.cast::<f64>());
        let run = |m: &Model, ps: &ParamStore<f64>, opts| {
            let mut g = Graph::new();
            let p = ps.bind(&mut g, false);
            let v = x.clone().map(|t| g.constant(t));
            let out = m.forward(&mut g, &p, v, opts).unwrap();
            g.value(out.output).clone()
        };
        let a = run(&m1, &p1, ForwardOptions { lambda_override: Some(1.0) });
        let b = run(&m2, &p2, ForwardOptions::default());
        assert_eq!(a, b);
        let c = run(&m1, &p1, ForwardOptions::default());
        assert!(c.max_abs_diff(&b) > 0.0);
    }

    #[test]
    fn channel_and_shape_errors() {
        let (model, ps) = Model::new::<f32>(&ModelConfig::tiny(), 3).unwrap();
        let mut x = inputs(1, 16, 16, 1);
        x[2] = Tensor::zeros(&[1, 3, 16, 8]);
        assert!(model.infer(&ps, &x).is_err());
        let gray = [0, 1, 2, 3].map(|_| Tensor::<f32>::zeros(&[1, 1, 16, 16]));
        assert!(model.infer(&ps, &gray).is_err());
    }
}
