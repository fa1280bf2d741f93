//! Motion regression toward the target instant and the synthesis of the
//! predicted frame from warped references.
//!
//! The closed-form regression is always the starting point. The learned
//! modes add a residual computed by a ConvLSTM that reads the motion
//! variations between consecutive references.

use std::fmt;
use std::str::FromStr;

use jnmr_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion_model::{
    blend_occlusion_mean, compose_offset_frame, compose_predicted_frame, regress_backward_motion, regress_forward_motion,
    solve_individual_quadratic, FrameTensor, MotionField, MotionSet, Ref, RegressedMotions,
};
use crate::nn::{Conv2d, Init, ParamStore, Params};
use crate::rdfl::{MotionSetVars, MotionVars};
use crate::warp::{deformable_warp, warp_all_references, warp_var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionMode {
    /// No regressed motions; the prediction is the occlusion blend alone.
    Linear,
    /// One quadratic through `M_-1`, the identity motion at `t = 0` and `M_1`.
    Quadratic,
    /// Closed-form forward and backward regression, no learned residual.
    LinearCombination,
    UnidirectionalFwd,
    UnidirectionalBwd,
    /// Forward then backward branch, the second continuing from the state
    /// of the first.
    SecondOrderUnidirectional,
    JointBidirectional,
}

impl RegressionMode {
    pub const ALL: [RegressionMode; 7] = [
        RegressionMode::Linear,
        RegressionMode::Quadratic,
        RegressionMode::LinearCombination,
        RegressionMode::UnidirectionalFwd,
        RegressionMode::UnidirectionalBwd,
        RegressionMode::SecondOrderUnidirectional,
        RegressionMode::JointBidirectional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegressionMode::Linear => "linear",
            RegressionMode::Quadratic => "quadratic",
            RegressionMode::LinearCombination => "linear_combination",
            RegressionMode::UnidirectionalFwd => "unidirectional_fwd",
            RegressionMode::UnidirectionalBwd => "unidirectional_bwd",
            RegressionMode::SecondOrderUnidirectional => "second_order_unidirectional",
            RegressionMode::JointBidirectional => "joint_bidirectional",
        }
    }

    /// Whether the mode runs the ConvLSTM combiner.
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            RegressionMode::UnidirectionalFwd
                | RegressionMode::UnidirectionalBwd
                | RegressionMode::SecondOrderUnidirectional
                | RegressionMode::JointBidirectional
        )
    }
}

impl fmt::Display for RegressionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegressionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        RegressionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown regression mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub mode: RegressionMode,
    /// ConvLSTM hidden width; `0` means the motion channel count `3*K*K`.
    pub hidden_channels: usize,
    pub gate_kernel: usize,
    /// One ConvLSTM and residual head for both directions.
    pub share_branches: bool,
    /// Orthogonal gain of the residual and coefficient heads; `0` (the
    /// default) zero-initializes them so training starts from the closed
    /// form.
    pub head_gain: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            mode: RegressionMode::JointBidirectional,
            hidden_channels: 0,
            gate_kernel: 3,
            share_branches: true,
            head_gain: 0.0,
        }
    }
}

/// Convolutional LSTM cell; gates in order input, forget, output, cell.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    gates: Conv2d,
    hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl ConvLstmCell {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, kernel: usize) -> Self {
        let gates = Conv2d::new(ps, &format!("{name}.gates"), input + hidden, 4 * hidden, kernel, Init::Orthogonal(1.0));
        ConvLstmCell { gates, hidden }
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, x: Var, state: Option<LstmState>) -> LstmState {
        let (n, _, h, w) = g.dims4(x);
        let prev_h = match state {
            Some(s) => s.hidden,
            None => g.constant(Tensor::zeros(&[n, self.hidden, h, w])),
        };
        let xh = g.concat_channels(&[x, prev_h]);
        let z = self.gates.forward(g, p, xh);
        let hc = self.hidden;
        let zi = g.slice_channels(z, 0, hc);
        let zf = g.slice_channels(z, hc, hc);
        let zo = g.slice_channels(z, 2 * hc, hc);
        let zg = g.slice_channels(z, 3 * hc, hc);
        let (i, o, gg) = (g.sigmoid(zi), g.sigmoid(zo), g.tanh(zg));
        let ig = g.mul(i, gg);
        let cell = match state {
            Some(s) => {
                let f = g.sigmoid(zf);
                let fc = g.mul(f, s.cell);
                g.add(fc, ig)
            }
            None => ig,
        };
        let tc = g.tanh(cell);
        LstmState {
            hidden: g.mul(o, tc),
            cell,
        }
    }

    /// Runs the cell over `seq` in order.
    pub fn run<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, seq: &[Var], init: Option<LstmState>) -> Result<LstmState> {
        if seq.is_empty() {
            return Err(invalid("ConvLSTM needs a non-empty sequence"));
        }
        let mut state = init;
        for &x in seq {
            state = Some(self.step(g, p, x, state));
        }
        Ok(state.expect("non-empty sequence"))
    }
}

#[derive(Clone, Debug)]
struct Branch {
    cell: ConvLstmCell,
    residual: Conv2d,
}

/// Graph-level regression result. A missing direction contributes nothing
/// to the offset frame.
#[derive(Clone, Copy, Debug)]
pub struct RegressedVars {
    pub forward: Option<MotionVars>,
    pub backward: Option<MotionVars>,
    /// `[N, 1, H, W]` in `[0, 1]`.
    pub theta: Var,
}

/// Regression engine parameters for one configuration.
#[derive(Clone, Debug)]
pub struct Regressor {
    cfg: RegressorConfig,
    kernel_size: usize,
    dilation: usize,
    forward: Option<Branch>,
    backward: Option<Branch>,
    theta: Option<Conv2d>,
}

impl Regressor {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, cfg: &RegressorConfig, kernel_size: usize, dilation: usize) -> Result<Self> {
        if cfg.gate_kernel % 2 == 0 {
            return Err(invalid(format!("gate_kernel must be odd, got {}", cfg.gate_kernel)));
        }
        if !(cfg.head_gain >= 0.0) {
            return Err(invalid("regressor head_gain must be non-negative"));
        }
        let channels = 3 * kernel_size * kernel_size;
        let hidden = if cfg.hidden_channels == 0 { channels } else { cfg.hidden_channels };
        let head = if cfg.head_gain == 0.0 { Init::Zero } else { Init::Orthogonal(cfg.head_gain) };
        let branch = |ps: &mut ParamStore<T>, name: &str| Branch {
            cell: ConvLstmCell::new(ps, &format!("{name}.lstm"), channels, hidden, cfg.gate_kernel),
            residual: Conv2d::new(ps, &format!("{name}.residual"), hidden, channels, 3, head),
        };
        let (forward, backward, theta) = match cfg.mode {
            m if !m.is_learned() => (None, None, None),
            RegressionMode::UnidirectionalFwd => (Some(branch(ps, "jnmr.fwd")), None, None),
            RegressionMode::UnidirectionalBwd => (None, Some(branch(ps, "jnmr.bwd")), None),
            mode => {
                let f = branch(ps, "jnmr.fwd");
                let b = if cfg.share_branches { None } else { Some(branch(ps, "jnmr.bwd")) };
                let theta = (mode == RegressionMode::JointBidirectional)
                    .then(|| Conv2d::new(ps, "jnmr.theta", 2 * hidden, 1, 1, head));
                (Some(f), b, theta)
            }
        };
        Ok(Regressor {
            cfg: cfg.clone(),
            kernel_size,
            dilation,
            forward,
            backward,
            theta,
        })
    }

    pub fn mode(&self) -> RegressionMode {
        self.cfg.mode
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.cfg
    }

    fn backward_branch(&self) -> &Branch {
        self.backward.as_ref().or(self.forward.as_ref()).expect("learned mode has a branch")
    }

    fn forward_branch(&self) -> &Branch {
        self.forward.as_ref().or(self.backward.as_ref()).expect("learned mode has a branch")
    }

    /// Runs `branch` over the variations `[b - a, c - b]` and adds its
    /// residual to `closed`.
    #[allow(clippy::too_many_arguments)]
    fn refine<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Params,
        branch: &Branch,
        seq: [MotionVars; 3],
        closed: MotionVars,
        init: Option<LstmState>,
    ) -> Result<(MotionVars, LstmState)> {
        let d1 = MotionVars::combine(g, &[(1.0, seq[1]), (-1.0, seq[0])]);
        let d2 = MotionVars::combine(g, &[(1.0, seq[2]), (-1.0, seq[1])]);
        let x1 = d1.concat(g);
        let x2 = d2.concat(g);
        let state = branch.cell.run(g, p, &[x1, x2], init)?;
        let r = branch.residual.forward(g, p, state.hidden);
        let taps = self.kernel_size * self.kernel_size;
        let r = MotionVars::split(g, r, taps);
        Ok((MotionVars::combine(g, &[(1.0, closed), (1.0, r)]), state))
    }

    pub fn regress<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, set: &MotionSetVars) -> Result<RegressedVars> {
        let [m2, m1, p1, p2] = set.motions;
        let two3 = 2.0 / 3.0;
        let third = 1.0 / 3.0;
        let closed_f = |g: &mut Graph<T>| MotionVars::combine(g, &[(two3, m2), (-1.0, m1), (third, p1)]);
        let closed_b = |g: &mut Graph<T>| MotionVars::combine(g, &[(two3, p2), (-1.0, p1), (third, m1)]);
        let (n, _, h, w) = g.dims4(set.occlusion);
        let filled = |g: &mut Graph<T>, v: f64| g.constant(Tensor::full(&[n, 1, h, w], T::lit(v)));
        let out = match self.cfg.mode {
            RegressionMode::Linear => RegressedVars {
                forward: None,
                backward: None,
                theta: set.occlusion,
            },
            RegressionMode::Quadratic => {
                let id = self.identity_vars(g, n, h, w);
                let acc = MotionVars::combine(g, &[(1.0, p1), (1.0, m1), (-2.0, id)]);
                RegressedVars {
                    forward: Some(acc),
                    backward: Some(acc),
                    theta: set.occlusion,
                }
            }
            RegressionMode::LinearCombination => RegressedVars {
                forward: Some(closed_f(g)),
                backward: Some(closed_b(g)),
                theta: set.occlusion,
            },
            RegressionMode::UnidirectionalFwd => {
                let cf = closed_f(g);
                let (mf, _) = self.refine(g, p, self.forward_branch(), [m2, m1, p1], cf, None)?;
                RegressedVars {
                    forward: Some(mf),
                    backward: None,
                    theta: filled(g, 1.0),
                }
            }
            RegressionMode::UnidirectionalBwd => {
                let cb = closed_b(g);
                let (mb, _) = self.refine(g, p, self.backward_branch(), [p2, p1, m1], cb, None)?;
                RegressedVars {
                    forward: None,
                    backward: Some(mb),
                    theta: filled(g, 0.0),
                }
            }
            RegressionMode::SecondOrderUnidirectional => {
                let cf = closed_f(g);
                let (mf, state) = self.refine(g, p, self.forward_branch(), [m2, m1, p1], cf, None)?;
                let cb = closed_b(g);
                let (mb, _) = self.refine(g, p, self.backward_branch(), [p2, p1, m1], cb, Some(state))?;
                RegressedVars {
                    forward: Some(mf),
                    backward: Some(mb),
                    theta: set.occlusion,
                }
            }
            RegressionMode::JointBidirectional => {
                let cf = closed_f(g);
                let (mf, sf) = self.refine(g, p, self.forward_branch(), [m2, m1, p1], cf, None)?;
                let cb = closed_b(g);
                let (mb, sb) = self.refine(g, p, self.backward_branch(), [p2, p1, m1], cb, None)?;
                let hs = g.concat_channels(&[sf.hidden, sb.hidden]);
                let head = self.theta.as_ref().expect("joint mode has a coefficient head");
                let z = head.forward(g, p, hs);
                let z = g.add(set.occlusion_logits, z);
                RegressedVars {
                    forward: Some(mf),
                    backward: Some(mb),
                    theta: g.sigmoid(z),
                }
            }
        };
        Ok(out)
    }

    fn identity_vars<T: Scalar>(&self, g: &mut Graph<T>, n: usize, h: usize, w: usize) -> MotionVars {
        let taps = self.kernel_size * self.kernel_size;
        let plane = h * w;
        let centre = taps / 2;
        let weights = Tensor::from_fn(&[n, taps, h, w], |i| if (i / plane) % taps == centre { T::one() } else { T::zero() });
        MotionVars {
            weights: g.constant(weights),
            alpha: g.constant(Tensor::zeros(&[n, taps, h, w])),
            beta: g.constant(Tensor::zeros(&[n, taps, h, w])),
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }
}

/// Graph-level synthesis results.
#[derive(Clone, Debug)]
pub struct SynthesisVars {
    /// Warped references in temporal order.
    pub warped: [Var; 4],
    /// Occlusion blend of the warped references.
    pub base: Var,
    /// Offset frame from the regressed motions, when any.
    pub offset: Option<Var>,
    /// `base + offset`.
    pub predicted: Var,
}

/// Warps the references, blends them by occlusion (each side mixed by
/// proximity, or averaged) and adds the offset frame of the regressed
/// motions.
pub fn synthesize<T: Scalar>(
    g: &mut Graph<T>,
    frames: &[Var; 4],
    set: &MotionSetVars,
    regressed: &RegressedVars,
    kernel_size: usize,
    dilation: usize,
) -> SynthesisVars {
    let warp = |g: &mut Graph<T>, f: Var, m: &MotionVars| warp_var(g, f, m.weights, m.alpha, m.beta, kernel_size, dilation);
    let warped: Vec<Var> = frames.iter().zip(&set.motions).map(|(&f, m)| warp(g, f, m)).collect();
    let (fwd, bwd) = match set.proximity {
        Some(near) => {
            let nf = g.slice_channels(near, 0, 1);
            let nb = g.slice_channels(near, 1, 1);
            (g.lerp_bcast(nf, warped[1], warped[0]), g.lerp_bcast(nb, warped[2], warped[3]))
        }
        None => {
            let fwd = g.add(warped[0], warped[1]);
            let bwd = g.add(warped[2], warped[3]);
            (g.scale(fwd, T::half()), g.scale(bwd, T::half()))
        }
    };
    let base = g.lerp_bcast(set.occlusion, fwd, bwd);
    let wf = regressed.forward.as_ref().map(|m| warp(g, frames[Ref::Minus1.index()], m));
    let wb = regressed.backward.as_ref().map(|m| warp(g, frames[Ref::Plus1.index()], m));
    let offset = match (wf, wb) {
        (Some(a), Some(b)) => Some(g.lerp_bcast(regressed.theta, a, b)),
        (Some(a), None) => Some(g.mul_bcast(a, regressed.theta)),
        (None, Some(b)) => {
            let rest = g.one_minus(regressed.theta);
            Some(g.mul_bcast(b, rest))
        }
        (None, None) => None,
    };
    let predicted = match offset {
        Some(o) => g.add(base, o),
        None => base,
    };
    SynthesisVars {
        warped: [warped[0], warped[1], warped[2], warped[3]],
        base,
        offset,
        predicted,
    }
}

/// Closed-form regression of a concrete motion set. Learned modes fall
/// back to their closed-form starting point, i.e. their value with zero
/// residual heads.
pub fn regress_closed_form<T: Scalar>(set: &MotionSet<T>, mode: RegressionMode) -> Result<RegressedMotions<T>> {
    let m = |r| set.get(r);
    let first = m(Ref::Minus1);
    let (k, d, h, w) = (first.kernel_size(), first.dilation(), first.height(), first.width());
    let occ = set.occlusion().tensor().clone();
    let zero = || MotionField::zeros(k, d, h, w);
    let fwd = || regress_forward_motion(m(Ref::Minus2), m(Ref::Minus1), m(Ref::Plus1));
    let bwd = || regress_backward_motion(m(Ref::Plus2), m(Ref::Plus1), m(Ref::Minus1));
    match mode {
        RegressionMode::Linear => RegressedMotions::new(zero(), zero(), occ),
        RegressionMode::Quadratic => {
            let fit = solve_individual_quadratic(m(Ref::Minus1), &MotionField::identity(k, d, h, w), m(Ref::Plus1))?;
            let acc = MotionField::linear_combination(&[(T::two(), &fit.acceleration)])?;
            RegressedMotions::new(acc.clone(), acc, occ)
        }
        RegressionMode::LinearCombination | RegressionMode::SecondOrderUnidirectional | RegressionMode::JointBidirectional => {
            RegressedMotions::new(fwd()?, bwd()?, occ)
        }
        RegressionMode::UnidirectionalFwd => RegressedMotions::new(fwd()?, zero(), Tensor::ones(&[1, h, w])),
        RegressionMode::UnidirectionalBwd => RegressedMotions::new(zero(), bwd()?, Tensor::zeros(&[1, h, w])),
    }
}

/// Concrete counterpart of [`synthesize`]: returns `(base, offset,
/// predicted)`.
pub fn synthesize_intermediate<T: Scalar>(
    frames: &[FrameTensor<T>],
    set: &MotionSet<T>,
    regressed: &RegressedMotions<T>,
) -> Result<(FrameTensor<T>, FrameTensor<T>, FrameTensor<T>)> {
    let warped = warp_all_references(frames, set)?;
    let base = blend_occlusion_mean(&warped[..2], &warped[2..], set.occlusion())?;
    let wf = deformable_warp(&frames[Ref::Minus1.index()], &regressed.forward)?;
    let wb = deformable_warp(&frames[Ref::Plus1.index()], &regressed.backward)?;
    let offset = compose_offset_frame(&wf, &wb, regressed.theta())?;
    let predicted = compose_predicted_frame(&base, &offset)?;
    Ok((base, offset, predicted))
}
