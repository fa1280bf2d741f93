//! Self-check of the closed-form motion math against analytic trajectories.

use std::fmt;

use jnmr_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Family, KinematicScene, SceneSampler, Shape, Sprite, Trajectory};
use crate::error::Result;
use crate::motion_model::{
    blend_occlusion, compose_predicted_frame, regress_backward_motion, regress_forward_motion, solve_individual_quadratic,
    FrameTensor, MotionField, MotionSet, OcclusionMap, Ref,
};
use crate::warp::deformable_warp;

/// Signature of the forward closed form, injectable for mutation tests.
pub type ForwardRegression = fn(&MotionField<f64>, &MotionField<f64>, &MotionField<f64>) -> Result<MotionField<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Worst deviation seen, in the property's own unit.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.properties {
            let status = if p.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{status} {:<32} worst {:.3e} tol {:.1e} {}", p.name, p.worst, p.tolerance, p.detail)?;
        }
        let n = self.properties.iter().filter(|p| p.passed).count();
        write!(f, "{n}/{} properties passed", self.properties.len())
    }
}

#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub seed: u64,
    /// Random scenes per trajectory family.
    pub scenes_per_family: usize,
    /// Random motion sets for the algebraic properties.
    pub random_sets: usize,
    pub size: usize,
    pub forward: ForwardRegression,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            scenes_per_family: 20,
            random_sets: 100,
            size: 32,
            forward: regress_forward_motion::<f64>,
        }
    }
}

struct Check {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    cases: usize,
    below: bool,
}

impl Check {
    /// Deviation must stay at or below the tolerance.
    fn new(name: &'static str, tolerance: f64) -> Self {
        Check { name, tolerance, worst: 0.0, cases: 0, below: true }
    }

    /// Value must stay at or above the threshold.
    fn at_least(name: &'static str, threshold: f64) -> Self {
        Check { name, tolerance: threshold, worst: f64::INFINITY, cases: 0, below: false }
    }

    fn see(&mut self, v: f64) {
        self.cases += 1;
        if self.below {
            if !(v <= self.worst) {
                self.worst = v;
            }
        } else if !(v >= self.worst) {
            self.worst = v;
        }
    }

    fn finish(self) -> PropertyResult {
        let passed = self.cases > 0 && if self.below { self.worst <= self.tolerance } else { self.worst >= self.tolerance };
        PropertyResult {
            name: self.name.to_string(),
            passed,
            worst: self.worst,
            tolerance: self.tolerance,
            detail: format!("{} cases", self.cases),
        }
    }

    fn failed(name: &'static str, err: crate::Error) -> PropertyResult {
        PropertyResult {
            name: name.to_string(),
            passed: false,
            worst: f64::NAN,
            tolerance: f64::NAN,
            detail: format!("error: {err}"),
        }
    }
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.max_abs_diff(b)
}

/// Largest offset deviation between two motion fields.
fn offset_diff(a: &MotionField<f64>, b: &MotionField<f64>) -> f64 {
    max_diff(a.alpha(), b.alpha()).max(max_diff(a.beta(), b.beta()))
}

fn field_diff(a: &MotionField<f64>, b: &MotionField<f64>) -> f64 {
    offset_diff(a, b).max(max_diff(a.weights(), b.weights()))
}

fn single_sprite(traj: Trajectory, size: usize) -> KinematicScene {
    KinematicScene {
        height: size,
        width: size,
        family: Family::Quadratic,
        background_seed: 1,
        background_cell: 8.0,
        sprites: vec![Sprite {
            shape: Shape::Rect,
            half_size: [size as f64 / 8.0; 2],
            texture_seed: 5,
            cell: 3.0,
            trajectory: traj,
        }],
    }
}

fn random_field(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> MotionField<f64> {
    let taps = k * k;
    let mut m = MotionField::zeros(k, 1, h, w);
    m.alpha_mut().data_mut().iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
    m.beta_mut().data_mut().iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
    let plane = h * w;
    let raw: Vec<f64> = (0..taps * plane).map(|_| rng.random_range(0.01..1.0)).collect();
    let wd = m.weights_mut().data_mut();
    for p in 0..plane {
        let s: f64 = (0..taps).map(|t| raw[t * plane + p]).sum();
        for t in 0..taps {
            wd[t * plane + p] = raw[t * plane + p] / s;
        }
    }
    m
}

fn random_set(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> Result<MotionSet<f64>> {
    let motions = [0; 4].map(|_| random_field(rng, k, h, w));
    let occ = Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..1.0));
    MotionSet::new(motions, OcclusionMap::new(occ)?)
}

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FrameTensor<f64> {
    FrameTensor::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..1.0))
}

fn forward_of(set: &MotionSet<f64>, f: ForwardRegression) -> Result<MotionField<f64>> {
    f(set.get(Ref::Minus2), set.get(Ref::Minus1), set.get(Ref::Plus1))
}

fn backward_of(set: &MotionSet<f64>) -> Result<MotionField<f64>> {
    regress_backward_motion(set.get(Ref::Plus2), set.get(Ref::Plus1), set.get(Ref::Minus1))
}

type Property = fn(&OracleConfig) -> Result<PropertyResult>;

fn analytic_case(cfg: &OracleConfig, name: &'static str, traj: Trajectory, expected: [f64; 2], backward: bool) -> Result<PropertyResult> {
    let mut c = Check::new(name, 1e-9);
    let g = single_sprite(traj, cfg.size).generate(3, 1)?;
    let got = if backward { backward_of(&g.motions)? } else { forward_of(&g.motions, cfg.forward)? };
    let truth = if backward { &g.regressed.backward } else { &g.regressed.forward };
    c.see(offset_diff(&got, truth));
    let centre = (cfg.size / 2) * cfg.size + cfg.size / 2;
    let plane = cfg.size * cfg.size;
    let t = got.taps() / 2;
    c.see((got.alpha().data()[t * plane + centre] - expected[0]).abs());
    c.see((got.beta().data()[t * plane + centre] - expected[1]).abs());
    Ok(c.finish())
}

fn p_forward_constant_velocity(cfg: &OracleConfig) -> Result<PropertyResult> {
    let traj = Trajectory { p0: [cfg.size as f64 / 2.0; 2], v0: [0.5, 1.0], accel: [0.0; 2], stage: None };
    analytic_case(cfg, "forward_constant_velocity", traj, [0.0, 0.0], false)
}

fn p_forward_pure_acceleration(cfg: &OracleConfig) -> Result<PropertyResult> {
    let traj = Trajectory { p0: [cfg.size as f64 / 2.0; 2], v0: [0.0; 2], accel: [1.0, -0.5], stage: None };
    analytic_case(cfg, "forward_pure_acceleration", traj, [1.0, -0.5], false)
}

fn p_backward_constant_velocity(cfg: &OracleConfig) -> Result<PropertyResult> {
    let traj = Trajectory { p0: [cfg.size as f64 / 2.0; 2], v0: [-1.0, 0.5], accel: [0.0; 2], stage: None };
    analytic_case(cfg, "backward_constant_velocity", traj, [0.0, 0.0], true)
}

fn p_backward_pure_acceleration(cfg: &OracleConfig) -> Result<PropertyResult> {
    let traj = Trajectory { p0: [cfg.size as f64 / 2.0; 2], v0: [0.0; 2], accel: [-0.5, 1.0], stage: None };
    analytic_case(cfg, "backward_pure_acceleration", traj, [-0.5, 1.0], true)
}

fn scenes(cfg: &OracleConfig, salt: u64) -> Result<Vec<KinematicScene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    let sampler = SceneSampler::default();
    let mut out = Vec::new();
    for family in Family::ALL {
        for _ in 0..cfg.scenes_per_family {
            out.push(sampler.sample(&mut rng, family, cfg.size, cfg.size)?);
        }
    }
    Ok(out)
}

fn p_forward_matches_trajectories(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("forward_matches_trajectories", 1e-5);
    for s in scenes(cfg, 0xf0)? {
        let g = s.generate(3, 1)?;
        c.see(offset_diff(&forward_of(&g.motions, cfg.forward)?, &g.regressed.forward));
    }
    Ok(c.finish())
}

fn p_backward_matches_trajectories(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("backward_matches_trajectories", 1e-5);
    for s in scenes(cfg, 0xb0)? {
        let g = s.generate(3, 1)?;
        c.see(offset_diff(&backward_of(&g.motions)?, &g.regressed.backward));
    }
    Ok(c.finish())
}

fn p_quadratic_fit(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("quadratic_fit_recovers_coefficients", 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9a);
    let (h, w) = (4, 5);
    for _ in 0..cfg.random_sets {
        let (m0, v, a) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let at = |t: f64| MotionField::translation(3, 1, h, w, m0 + v * t + a * t * t, -(m0 + v * t + a * t * t));
        let fit = solve_individual_quadratic(&at(-1.0), &at(0.0), &at(1.0))?;
        let expect = |x: f64| MotionField::translation(3, 1, h, w, x, -x);
        c.see(offset_diff(&fit.velocity, &expect(v)));
        c.see(offset_diff(&fit.acceleration, &expect(a)));
    }
    Ok(c.finish())
}

fn p_forward_linearity(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("forward_linearity", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11);
    for _ in 0..cfg.random_sets / 4 {
        let a = random_set(&mut rng, 3, 4, 4)?;
        let b = random_set(&mut rng, 3, 4, 4)?;
        let k: f64 = rng.random_range(-2.0..2.0);
        let fa = forward_of(&a, cfg.forward)?;
        let fb = forward_of(&b, cfg.forward)?;
        let mix = |r: Ref| MotionField::linear_combination(&[(k, a.get(r)), (1.0, b.get(r))]);
        let fmix = (cfg.forward)(&mix(Ref::Minus2)?, &mix(Ref::Minus1)?, &mix(Ref::Plus1)?)?;
        let expect = MotionField::linear_combination(&[(k, &fa), (1.0, &fb)])?;
        c.see(offset_diff(&fmix, &expect));
    }
    Ok(c.finish())
}

fn p_time_reversal(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("time_reversal_duality", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e);
    for _ in 0..cfg.random_sets {
        let set = random_set(&mut rng, 3, 5, 4)?;
        c.see(field_diff(&backward_of(&set)?, &forward_of(&set.time_reversed(), cfg.forward)?));
    }
    Ok(c.finish())
}

fn p_occlusion_swap(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("occlusion_swap_symmetry", 1e-7);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a);
    let (h, w) = (6, 7);
    for _ in 0..cfg.random_sets {
        let fwd = [random_frame(&mut rng, h, w), random_frame(&mut rng, h, w)];
        let bwd = [random_frame(&mut rng, h, w), random_frame(&mut rng, h, w)];
        let occ = OcclusionMap::new(Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..1.0)))?;
        let a = blend_occlusion(&fwd, &bwd, &occ)?;
        let b = blend_occlusion(&bwd, &fwd, &occ.complement())?;
        c.see(max_diff(a.tensor(), b.tensor()));
    }
    Ok(c.finish())
}

fn p_warp_identity(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("warp_identity_exact", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1d);
    for k in [1, 3, 5] {
        let f = random_frame(&mut rng, 9, 11);
        let out = deformable_warp(&f, &MotionField::identity(k, 2, 9, 11))?;
        c.see(max_diff(out.tensor(), f.tensor()));
    }
    Ok(c.finish())
}

fn p_warp_integer_shift(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("warp_integer_shift", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x2d);
    let (h, w) = (7, 6);
    let f = random_frame(&mut rng, h, w);
    let out = deformable_warp(&f, &MotionField::translation(3, 1, h, w, 1.0, 0.0))?;
    let expect = FrameTensor::from_fn(3, h, w, |ch, y, x| f.get(ch, (y + 1).min(h - 1), x));
    c.see(max_diff(out.tensor(), expect.tensor()));
    Ok(c.finish())
}

fn p_oracle_warp(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::at_least("oracle_warp_psnr_db", 40.0);
    for s in scenes(cfg, 0x3a)? {
        let g = s.generate(1, 1)?;
        let plane = cfg.size * cfg.size;
        for r in Ref::ALL {
            let warped = deformable_warp(&g.inputs[r.index()], g.motions.get(r))?;
            let valid = &g.valid[r.index()];
            let (mut se, mut n) = (0.0, 0usize);
            for ch in 0..3 {
                for p in (0..plane).filter(|&p| valid[p]) {
                    let d = warped.tensor().data()[ch * plane + p] - g.target.tensor().data()[ch * plane + p];
                    se += d * d;
                    n += 1;
                }
            }
            if n > 0 {
                c.see(10.0 * (n as f64 / se.max(1e-30)).log10().min(10.0));
            }
        }
    }
    Ok(c.finish())
}

fn p_compose(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("compose_is_addition", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0);
    let (base, offset) = (random_frame(&mut rng, 5, 5), random_frame(&mut rng, 5, 5));
    let out = compose_predicted_frame(&base, &offset)?;
    c.see(max_diff(out.tensor(), &base.tensor().add(offset.tensor())));
    let zero = FrameTensor::filled(3, 5, 5, 0.0);
    c.see(max_diff(compose_predicted_frame(&base, &zero)?.tensor(), base.tensor()));
    Ok(c.finish())
}

fn p_true_kernels_normalized(cfg: &OracleConfig) -> Result<PropertyResult> {
    let mut c = Check::new("true_kernels_normalized", 1e-12);
    for s in scenes(cfg, 0x4b)?.into_iter().take(6) {
        let g = s.generate(3, 1)?;
        for m in g.motions.motions() {
            c.see(m.kernel_mass_error());
        }
    }
    Ok(c.finish())
}

const PROPERTIES: [Property; 15] = [
    p_forward_constant_velocity,
    p_forward_pure_acceleration,
    p_backward_constant_velocity,
    p_backward_pure_acceleration,
    p_forward_matches_trajectories,
    p_backward_matches_trajectories,
    p_quadratic_fit,
    p_forward_linearity,
    p_time_reversal,
    p_occlusion_swap,
    p_warp_identity,
    p_warp_integer_shift,
    p_oracle_warp,
    p_compose,
    p_true_kernels_normalized,
];

const NAMES: [&str; 15] = [
    "forward_constant_velocity",
    "forward_pure_acceleration",
    "backward_constant_velocity",
    "backward_pure_acceleration",
    "forward_matches_trajectories",
    "backward_matches_trajectories",
    "quadratic_fit_recovers_coefficients",
    "forward_linearity",
    "time_reversal_duality",
    "occlusion_swap_symmetry",
    "warp_identity_exact",
    "warp_integer_shift",
    "oracle_warp_psnr_db",
    "compose_is_addition",
    "true_kernels_normalized",
];

/// Runs every property; an error inside one property is reported as its
/// failure.
pub fn oracle_check(cfg: &OracleConfig) -> OracleReport {
    let properties = PROPERTIES
        .iter()
        .zip(NAMES)
        .map(|(p, name)| p(cfg).unwrap_or_else(|e| Check::failed(name, e)))
        .collect();
    OracleReport { seed: cfg.seed, properties }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> OracleConfig {
        OracleConfig {
            scenes_per_family: 3,
            random_sets: 12,
            ..OracleConfig::default()
        }
    }

    #[test]
    fn pristine_build_passes_every_property() {
        let r = oracle_check(&quick());
        assert!(r.passed(), "{r}");
        assert!(r.properties.len() >= 10);
        for (p, name) in r.properties.iter().zip(NAMES) {
            assert_eq!(p.name, name);
        }
    }

    fn flipped(a: &MotionField<f64>, b: &MotionField<f64>, c: &MotionField<f64>) -> Result<MotionField<f64>> {
        let f = regress_forward_motion(a, b, c)?;
        MotionField::linear_combination(&[(-1.0, &f)])
    }

    #[test]
    fn sign_flip_fails_the_forward_property() {
        let r = oracle_check(&OracleConfig {
            forward: flipped,
            ..quick()
        });
        assert!(!r.passed());
        assert!(!r.get("forward_pure_acceleration").unwrap().passed);
        assert!(!r.get("forward_matches_trajectories").unwrap().passed);
        assert!(r.get("backward_matches_trajectories").unwrap().passed);
    }
}
