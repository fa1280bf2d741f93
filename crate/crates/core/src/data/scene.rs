//! Synthetic kinematic scenes: textured sprites on a textured static
//! background, moving on analytic trajectories. The trajectories give exact
//! motions, which makes the generator an oracle for the regression.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion_model::{FrameTensor, MotionField, MotionSet, OcclusionMap, RegressedMotions, Ref};
use jnmr_tensor::Tensor;

/// Sub-samples per pixel along each axis.
pub const SUPERSAMPLE: usize = 4;
/// Half width of the anti-aliasing filter in pixels.
pub const FILTER_RADIUS: usize = 2;
pub const FILTER_SIGMA: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Quadratic,
    PiecewiseQuadratic,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Linear, Family::Quadratic, Family::PiecewiseQuadratic];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Quadratic => "quadratic",
            Family::PiecewiseQuadratic => "piecewise_quadratic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Ellipse,
}

/// Change of acceleration at `time` (multi-stage motion).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub time: f64,
    pub accel: [f64; 2],
}

/// `p(t) = p0 + v0 t + a t^2 / 2` per axis (`[y, x]`), continued with
/// acceleration `stage.accel` after `stage.time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub p0: [f64; 2],
    pub v0: [f64; 2],
    pub accel: [f64; 2],
    pub stage: Option<Stage>,
}

impl Trajectory {
    pub fn stationary(p0: [f64; 2]) -> Self {
        Trajectory {
            p0,
            v0: [0.0; 2],
            accel: [0.0; 2],
            stage: None,
        }
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        let quad = |p: [f64; 2], v: [f64; 2], a: [f64; 2], t: f64| [0, 1].map(|k| p[k] + v[k] * t + 0.5 * a[k] * t * t);
        match self.stage {
            Some(s) if t > s.time => {
                let ps = quad(self.p0, self.v0, self.accel, s.time);
                let vs = [0, 1].map(|k| self.v0[k] + self.accel[k] * s.time);
                quad(ps, vs, s.accel, t - s.time)
            }
            _ => quad(self.p0, self.v0, self.accel, t),
        }
    }

    /// Sampling offset `p(n) - p(0)` of the reference at time `n`.
    pub fn offset(&self, n: f64) -> [f64; 2] {
        let (a, b) = (self.position(n), self.position(0.0));
        [a[0] - b[0], a[1] - b[1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    /// Half extents `[y, x]` in pixels.
    pub half_size: [f64; 2],
    pub texture_seed: u64,
    /// Side of the texture cells in pixels.
    pub cell: f64,
    pub trajectory: Trajectory,
}

impl Sprite {
    fn contains(&self, y: f64, x: f64, t: f64) -> bool {
        let c = self.trajectory.position(t);
        let (dy, dx) = ((y - c[0]) / self.half_size[0], (x - c[1]) / self.half_size[1]);
        match self.shape {
            Shape::Rect => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            Shape::Ellipse => dy * dy + dx * dx <= 1.0,
        }
    }

    fn colour(&self, y: f64, x: f64, t: f64) -> [f64; 3] {
        let c = self.trajectory.position(t);
        texture(self.texture_seed, self.cell, y - c[0], x - c[1])
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Piecewise-constant colour of cell `floor(p / cell)`, channels in
/// `[0.1, 0.9]`.
fn texture(seed: u64, cell: f64, y: f64, x: f64) -> [f64; 3] {
    let (cy, cx) = ((y / cell).floor() as i64, (x / cell).floor() as i64);
    let h = mix(seed ^ mix((cy as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (cx as u64)));
    [0, 1, 2].map(|k| 0.1 + 0.8 * ((h >> (16 * k)) & 0xffff) as f64 / 65535.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicScene {
    pub height: usize,
    pub width: usize,
    pub family: Family,
    pub background_seed: u64,
    pub background_cell: f64,
    /// Back to front.
    pub sprites: Vec<Sprite>,
}

/// Sampling offsets of one scene, per sprite, relative to time 0.
fn regressed_offsets(traj: &Trajectory) -> ([f64; 2], [f64; 2]) {
    match traj.stage {
        // p(n) - p(0) = v n + a n^2 / 2, so the forward and backward
        // closed forms both reduce to the acceleration.
        None => (traj.accel, traj.accel),
        Some(_) => {
            let o = |n: f64| traj.offset(n);
            let (m2, m1, p1, p2) = (o(-2.0), o(-1.0), o(1.0), o(2.0));
            (
                [0, 1].map(|k| (2.0 * m2[k] - 3.0 * m1[k] + p1[k]) / 3.0),
                [0, 1].map(|k| (2.0 * p2[k] - 3.0 * p1[k] + m1[k]) / 3.0),
            )
        }
    }
}

/// Rendered frames and analytic motions of a scene.
#[derive(Clone, Debug)]
pub struct GeneratedScene {
    /// Inputs at `t = -2, -1, 1, 2`.
    pub inputs: [FrameTensor<f64>; 4],
    pub target: FrameTensor<f64>,
    pub motions: MotionSet<f64>,
    pub regressed: RegressedMotions<f64>,
    /// Pixels whose reconstruction from each reference is free of
    /// occlusion and of boundary mixing, per reference.
    pub valid: [Vec<bool>; 4],
}

impl KinematicScene {
    pub fn validate(&self, times: &[f64]) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(invalid("scene canvas must be at least 4x4"));
        }
        for (i, s) in self.sprites.iter().enumerate() {
            if !(s.half_size[0] > 0.0 && s.half_size[1] > 0.0 && s.cell > 0.0) {
                return Err(invalid(format!("sprite {i} has a degenerate size")));
            }
            for &t in times {
                let p = s.trajectory.position(t);
                let lo = [p[0] - s.half_size[0], p[1] - s.half_size[1]];
                let hi = [p[0] + s.half_size[0], p[1] + s.half_size[1]];
                let inside = lo[0] >= 1.0
                    && lo[1] >= 1.0
                    && hi[0] <= self.height as f64 - 2.0
                    && hi[1] <= self.width as f64 - 2.0;
                if !inside {
                    return Err(invalid(format!("sprite {i} leaves the canvas at t = {t}")));
                }
            }
        }
        Ok(())
    }

    /// Index of the topmost sprite covering `(y, x)` at `t`, if any.
    fn owner(&self, y: f64, x: f64, t: f64) -> Option<usize> {
        self.sprites.iter().rposition(|s| s.contains(y, x, t))
    }

    /// Point samples on a grid `SUPERSAMPLE` times finer than the pixels,
    /// covering the canvas plus a `FILTER_RADIUS` margin. Returns owners and
    /// colours, row-major with side `(n + 2 * FILTER_RADIUS) * SUPERSAMPLE`.
    fn subsamples(&self, t: f64) -> (Vec<Option<usize>>, Vec<[f64; 3]>, usize, usize) {
        let s = SUPERSAMPLE as f64;
        let r = FILTER_RADIUS;
        let (gh, gw) = ((self.height + 2 * r) * SUPERSAMPLE, (self.width + 2 * r) * SUPERSAMPLE);
        let origin = -(r as f64) - 0.5;
        let mut owners = Vec::with_capacity(gh * gw);
        let mut colours = Vec::with_capacity(gh * gw);
        for a in 0..gh {
            let y = origin + (a as f64 + 0.5) / s;
            for b in 0..gw {
                let x = origin + (b as f64 + 0.5) / s;
                let o = self.owner(y, x, t);
                owners.push(o);
                colours.push(match o {
                    Some(i) => self.sprites[i].colour(y, x, t),
                    None => texture(self.background_seed, self.background_cell, y, x),
                });
            }
        }
        (owners, colours, gh, gw)
    }

    /// Gaussian weights of the `2 * FILTER_RADIUS * SUPERSAMPLE` sub-samples
    /// under one pixel along an axis.
    fn prefilter() -> Vec<f64> {
        let s = SUPERSAMPLE as f64;
        let w: Vec<f64> = (0..2 * FILTER_RADIUS * SUPERSAMPLE)
            .map(|k| {
                let d = (k as f64 + 0.5) / s - FILTER_RADIUS as f64;
                (-d * d / (2.0 * FILTER_SIGMA * FILTER_SIGMA)).exp()
            })
            .collect();
        let sum: f64 = w.iter().sum();
        w.into_iter().map(|v| v / sum).collect()
    }

    /// Renders time `t`: point samples at `SUPERSAMPLE` per pixel and axis,
    /// filtered with a separable truncated Gaussian. The smooth prefilter
    /// keeps bilinear resampling of the frames close to re-rendering at
    /// fractional positions.
    pub fn render(&self, t: f64) -> Result<FrameTensor<f64>> {
        self.validate(&[t])?;
        let (h, w) = (self.height, self.width);
        let (_, colours, gh, gw) = self.subsamples(t);
        let k = Self::prefilter();
        let s = SUPERSAMPLE;
        // Horizontal pass: one value per pixel column, every grid row.
        let mut rows = vec![[0.0; 3]; gh * w];
        for a in 0..gh {
            for j in 0..w {
                let mut acc = [0.0; 3];
                for (m, &wt) in k.iter().enumerate() {
                    let c = colours[a * gw + j * s + m];
                    for ch in 0..3 {
                        acc[ch] += wt * c[ch];
                    }
                }
                rows[a * w + j] = acc;
            }
        }
        let mut out = vec![0.0; 3 * h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = [0.0; 3];
                for (m, &wt) in k.iter().enumerate() {
                    let c = rows[(i * s + m) * w + j];
                    for ch in 0..3 {
                        acc[ch] += wt * c[ch];
                    }
                }
                for ch in 0..3 {
                    out[ch * h * w + i * w + j] = acc[ch];
                }
            }
        }
        FrameTensor::new(Tensor::from_vec(&[3, h, w], out)?)
    }

    /// Layer label of each pixel at `t` when every sub-sample within
    /// `FILTER_RADIUS + 1` pixels falls in one layer (`Some(None)` is
    /// background).
    fn pure_labels(&self, t: f64) -> Vec<Option<Option<usize>>> {
        let (h, w) = (self.height, self.width);
        let (owners, _, gh, gw) = self.subsamples(t);
        let s = SUPERSAMPLE;
        let r = FILTER_RADIUS;
        // Filter support widened by one pixel for bilinear neighbours.
        let mut out = vec![None; h * w];
        for i in 0..h {
            for j in 0..w {
                let centre = owners[((i + r) * s + s / 2) * gw + (j + r) * s + s / 2];
                let (a0, a1) = ((i * s).saturating_sub(s), ((i + 2 * r + 1) * s).min(gh));
                let (b0, b1) = ((j * s).saturating_sub(s), ((j + 2 * r + 1) * s).min(gw));
                let pure = (a0..a1).all(|a| (b0..b1).all(|b| owners[a * gw + b] == centre));
                if pure {
                    out[i * w + j] = Some(centre);
                }
            }
        }
        out
    }

    /// Renders inputs and target and derives the analytic motions with
    /// `kernel_size x kernel_size` identity-centre kernels.
    pub fn generate(&self, kernel_size: usize, dilation: usize) -> Result<GeneratedScene> {
        self.validate(&[-2.0, -1.0, 0.0, 1.0, 2.0])?;
        let (h, w) = (self.height, self.width);
        let owners: Vec<Option<usize>> = (0..h * w)
            .map(|p| self.owner((p / w) as f64, (p % w) as f64, 0.0))
            .collect();
        let field = |f: &dyn Fn(&Trajectory) -> [f64; 2]| -> Result<MotionField<f64>> {
            let mut dy = vec![0.0; h * w];
            let mut dx = vec![0.0; h * w];
            for (p, o) in owners.iter().enumerate() {
                if let Some(s) = o {
                    let d = f(&self.sprites[*s].trajectory);
                    dy[p] = d[0];
                    dx[p] = d[1];
                }
            }
            MotionField::from_center_offsets(kernel_size, dilation, h, w, &dy, &dx)
        };
        let motions = Ref::ALL.map(|r| field(&|tr: &Trajectory| tr.offset(r.offset() as f64)));
        let [m0, m1, m2, m3] = motions;
        let set = MotionSet::new([m0?, m1?, m2?, m3?], OcclusionMap::constant(h, w, 0.5)?)?;

        let mut forward = field(&|tr: &Trajectory| regressed_offsets(tr).0)?;
        let mut backward = field(&|tr: &Trajectory| regressed_offsets(tr).1)?;
        // Weights of the regressed kernels: the closed-form coefficients
        // sum to zero.
        for m in [&mut forward, &mut backward] {
            m.weights_mut().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let regressed = RegressedMotions::new(forward, backward, Tensor::full(&[1, h, w], 0.5))?;

        let labels0 = self.pure_labels(0.0);
        let mut valid: [Vec<bool>; 4] = Default::default();
        let mut frames = Vec::with_capacity(4);
        for r in Ref::ALL {
            let t = r.offset() as f64;
            frames.push(self.render(t)?);
            let labels = self.pure_labels(t);
            let m = set.get(r);
            let plane = h * w;
            let centre = m.taps() / 2;
            valid[r.index()] = (0..plane)
                .map(|p| {
                    let Some(l0) = labels0[p] else { return false };
                    let y = (p / w) as f64 + m.alpha().data()[centre * plane + p];
                    let x = (p % w) as f64 + m.beta().data()[centre * plane + p];
                    if y < 0.0 || x < 0.0 || y > (h - 1) as f64 || x > (w - 1) as f64 {
                        return false;
                    }
                    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                    [(y0, x0), (y0 + 1, x0), (y0, x0 + 1), (y0 + 1, x0 + 1)]
                        .iter()
                        .all(|&(a, b)| labels[a.min(h - 1) * w + b.min(w - 1)] == Some(l0))
                })
                .collect();
        }
        let inputs: [FrameTensor<f64>; 4] = frames.try_into().expect("four references");
        Ok(GeneratedScene {
            inputs,
            target: self.render(0.0)?,
            motions: set,
            regressed,
            valid,
        })
    }

    /// Mean displacement magnitude of the pixels between `t = -1` and
    /// `t = 1`, over the whole frame.
    pub fn motion_magnitude(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut total = 0.0;
        for p in 0..h * w {
            if let Some(s) = self.owner((p / w) as f64, (p % w) as f64, 0.0) {
                let tr = &self.sprites[s].trajectory;
                for n in [-1.0, 1.0] {
                    let o = tr.offset(n);
                    total += 0.5 * (o[0] * o[0] + o[1] * o[1]).sqrt();
                }
            }
        }
        total / (h * w) as f64
    }
}

/// Knobs of the random scene sampler, in pixels per frame at the given
/// canvas size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSampler {
    pub min_sprites: usize,
    pub max_sprites: usize,
    /// Sprite half extent range as a fraction of the shorter canvas side.
    pub min_half_size: f64,
    pub max_half_size: f64,
    /// Speed bound as a fraction of the shorter canvas side.
    pub max_speed: f64,
    pub max_accel: f64,
    /// Lowest acceleration magnitude of the accelerating families.
    pub min_accel: f64,
    /// Sprites must stay inside for every time in `[-span, span]`.
    pub span: i32,
    /// Probability that a sprite is static.
    pub static_probability: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        SceneSampler {
            min_sprites: 1,
            max_sprites: 3,
            min_half_size: 0.08,
            max_half_size: 0.2,
            max_speed: 0.04,
            max_accel: 1.0,
            min_accel: 0.3,
            span: 3,
            static_probability: 0.1,
        }
    }
}

impl SceneSampler {
    fn times(&self) -> Vec<f64> {
        (-self.span..=self.span).map(f64::from).collect()
    }

    fn accel<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let mag = rng.random_range(self.min_accel..=self.max_accel);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        [mag * angle.sin(), mag * angle.cos()]
    }

    fn sprite<R: Rng>(&self, rng: &mut R, family: Family, h: usize, w: usize) -> Sprite {
        let side = h.min(w) as f64;
        let half_size = [0, 1].map(|_| (side * rng.random_range(self.min_half_size..=self.max_half_size)).max(1.5));
        let p0 = [h, w].map(|n| rng.random_range(0.0..n as f64));
        let still = rng.random_bool(self.static_probability);
        let speed = rng.random_range(0.0..=self.max_speed * side);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let mut trajectory = Trajectory {
            p0,
            v0: [speed * angle.sin(), speed * angle.cos()],
            accel: [0.0; 2],
            stage: None,
        };
        if still {
            trajectory = Trajectory::stationary(p0);
        } else {
            match family {
                Family::Linear => {}
                Family::Quadratic => trajectory.accel = self.accel(rng),
                Family::PiecewiseQuadratic => {
                    trajectory.accel = self.accel(rng);
                    trajectory.stage = Some(Stage {
                        time: rng.random_range(-1.5..1.5),
                        accel: self.accel(rng),
                    });
                }
            }
        }
        Sprite {
            shape: if rng.random_bool(0.5) { Shape::Rect } else { Shape::Ellipse },
            half_size,
            texture_seed: rng.random(),
            cell: rng.random_range(4.0..10.0f64).min(side / 4.0).max(2.0),
            trajectory,
        }
    }

    /// Draws a valid scene of `family`; sprites that would leave the canvas
    /// are redrawn.
    pub fn sample<R: Rng>(&self, rng: &mut R, family: Family, height: usize, width: usize) -> Result<KinematicScene> {
        if self.min_sprites == 0 || self.min_sprites > self.max_sprites {
            return Err(invalid("sprite count range is empty"));
        }
        let times = self.times();
        let n = rng.random_range(self.min_sprites..=self.max_sprites);
        let mut scene = KinematicScene {
            height,
            width,
            family,
            background_seed: rng.random(),
            background_cell: rng.random_range(6.0..14.0f64).min(height.min(width) as f64 / 2.0),
            sprites: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let mut placed = false;
            for _ in 0..1000 {
                let s = self.sprite(rng, family, height, width);
                let probe = KinematicScene {
                    sprites: vec![s.clone()],
                    ..scene.clone()
                };
                if probe.validate(&times).is_ok() {
                    scene.sprites.push(s);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(invalid(format!("could not place a sprite on a {height}x{width} canvas")));
            }
        }
        Ok(scene)
    }
}
