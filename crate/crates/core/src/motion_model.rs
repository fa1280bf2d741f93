//! Frames, deformable-kernel motions and the closed-form kinematic
//! regression that turns four reference motions into the motions of an
//! infinitesimal neighbourhood of the target instant.
//!
//! Everything here is a pure function of its inputs; no learned parameters
//! are involved.
//!
//! Motion offsets follow the sampling convention of the warp: a motion for
//! reference `n` carries, per pixel of the target grid and per kernel tap,
//! the displacement at which frame `n` is sampled. For an object moving
//! along `p(t)` that displacement is `p(n) - p(0)`.

use jnmr_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Temporal position of a reference frame relative to the target (`t = 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ref {
    Minus2,
    Minus1,
    Plus1,
    Plus2,
}

impl Ref {
    /// Temporal order `-2, -1, 1, 2`.
    pub const ALL: [Ref; 4] = [Ref::Minus2, Ref::Minus1, Ref::Plus1, Ref::Plus2];

    pub fn offset(self) -> i32 {
        match self {
            Ref::Minus2 => -2,
            Ref::Minus1 => -1,
            Ref::Plus1 => 1,
            Ref::Plus2 => 2,
        }
    }

    pub fn from_offset(n: i32) -> Option<Ref> {
        Ref::ALL.into_iter().find(|r| r.offset() == n)
    }

    /// Position in [`Ref::ALL`].
    pub fn index(self) -> usize {
        match self {
            Ref::Minus2 => 0,
            Ref::Minus1 => 1,
            Ref::Plus1 => 2,
            Ref::Plus2 => 3,
        }
    }

    /// The reference at the negated time offset.
    pub fn mirrored(self) -> Ref {
        Ref::ALL[3 - self.index()]
    }
}

/// One image, `C x H x W`, nominally in `[0, 1]`.
///
/// Intermediate synthesis results may leave the range; only final outputs
/// are clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTensor<T: Scalar> {
    data: Tensor<T>,
}

impl<T: Scalar> FrameTensor<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        let shape = data.shape();
        if shape.len() != 3 || shape.iter().any(|&d| d == 0) {
            return Err(invalid(format!("frame must be C x H x W with non-zero extents, got {shape:?}")));
        }
        if !data.all_finite() {
            return Err(invalid("frame contains non-finite values"));
        }
        Ok(FrameTensor { data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        FrameTensor {
            data: Tensor::full(&[channels, height, width], value),
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let plane = height * width;
        FrameTensor {
            data: Tensor::from_fn(&[channels, height, width], |i| f(i / plane, (i % plane) / width, i % width)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn clamp01(&self) -> Self {
        FrameTensor {
            data: self.data.map(|v| v.max(T::zero()).min(T::one())),
        }
    }

    /// `[1, C, H, W]` view for batched code.
    pub fn to_batch(&self) -> Tensor<T> {
        let (c, h, w) = self.dims();
        self.data.clone().reshape(&[1, c, h, w]).expect("frame reshape")
    }

    /// Sample `index` of a `[N, C, H, W]` tensor.
    pub fn from_batch(batch: &Tensor<T>, index: usize) -> Result<Self> {
        let item = batch.batch_item(index);
        let (_, c, h, w) = item.dims4();
        FrameTensor::new(item.reshape(&[c, h, w])?)
    }

    pub fn cast<U: Scalar>(&self) -> FrameTensor<U> {
        FrameTensor { data: self.data.cast() }
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(invalid(format!("{op}: frame shapes {:?} and {:?} differ", self.dims(), other.dims())));
        }
        Ok(())
    }
}

/// Per-pixel deformable kernel: `K*K` tap weights and per-tap vertical
/// (`alpha`) and horizontal (`beta`) offsets in pixels, each `K*K x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField<T: Scalar> {
    weights: Tensor<T>,
    alpha: Tensor<T>,
    beta: Tensor<T>,
    kernel_size: usize,
    dilation: usize,
}

impl<T: Scalar> MotionField<T> {
    /// Validates shapes and finiteness. Kernel mass is not enforced here:
    /// regressed motions are differences of motions and carry zero mass.
    /// Use [`MotionField::check_normalized`] where unit mass is required.
    pub fn new(weights: Tensor<T>, alpha: Tensor<T>, beta: Tensor<T>, kernel_size: usize, dilation: usize) -> Result<Self> {
        if kernel_size == 0 {
            return Err(invalid("kernel size must be positive"));
        }
        let taps = kernel_size * kernel_size;
        let shape = weights.shape().to_vec();
        if shape.len() != 3 || shape[0] != taps || shape[1] == 0 || shape[2] == 0 {
            return Err(invalid(format!("motion weights must be {taps} x H x W, got {shape:?}")));
        }
        if alpha.shape() != shape.as_slice() || beta.shape() != shape.as_slice() {
            return Err(invalid(format!(
                "motion channel shapes differ: W {:?}, alpha {:?}, beta {:?}",
                shape,
                alpha.shape(),
                beta.shape()
            )));
        }
        if !(weights.all_finite() && alpha.all_finite() && beta.all_finite()) {
            return Err(invalid("motion contains non-finite values"));
        }
        Ok(MotionField {
            weights,
            alpha,
            beta,
            kernel_size,
            dilation,
        })
    }

    /// Kernel with all mass on the centre tap and no offsets.
    pub fn identity(kernel_size: usize, dilation: usize, height: usize, width: usize) -> Self {
        Self::translation(kernel_size, dilation, height, width, T::zero(), T::zero())
    }

    /// Identity-centre kernel whose every tap is displaced by `(dy, dx)`.
    pub fn translation(kernel_size: usize, dilation: usize, height: usize, width: usize, dy: T, dx: T) -> Self {
        let taps = kernel_size * kernel_size;
        let plane = height * width;
        let centre = taps / 2;
        let weights = Tensor::from_fn(&[taps, height, width], |i| if i / plane == centre { T::one() } else { T::zero() });
        MotionField {
            weights,
            alpha: Tensor::full(&[taps, height, width], dy),
            beta: Tensor::full(&[taps, height, width], dx),
            kernel_size,
            dilation,
        }
    }

    /// Identity-centre kernel with a dense per-pixel offset field shared by
    /// all taps. `dy` and `dx` are `H x W` row-major.
    pub fn from_center_offsets(kernel_size: usize, dilation: usize, height: usize, width: usize, dy: &[T], dx: &[T]) -> Result<Self> {
        let plane = height * width;
        if dy.len() != plane || dx.len() != plane {
            return Err(invalid(format!("offset planes must have {plane} entries")));
        }
        let mut field = Self::identity(kernel_size, dilation, height, width);
        let taps = kernel_size * kernel_size;
        for t in 0..taps {
            field.alpha.data_mut()[t * plane..(t + 1) * plane].copy_from_slice(dy);
            field.beta.data_mut()[t * plane..(t + 1) * plane].copy_from_slice(dx);
        }
        Ok(field)
    }

    /// All channels zero, including the weights.
    pub fn zeros(kernel_size: usize, dilation: usize, height: usize, width: usize) -> Self {
        let shape = [kernel_size * kernel_size, height, width];
        MotionField {
            weights: Tensor::zeros(&shape),
            alpha: Tensor::zeros(&shape),
            beta: Tensor::zeros(&shape),
            kernel_size,
            dilation,
        }
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn alpha(&self) -> &Tensor<T> {
        &self.alpha
    }

    pub fn beta(&self) -> &Tensor<T> {
        &self.beta
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    pub fn alpha_mut(&mut self) -> &mut Tensor<T> {
        &mut self.alpha
    }

    pub fn beta_mut(&mut self) -> &mut Tensor<T> {
        &mut self.beta
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    pub fn height(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Largest deviation of the per-pixel kernel mass from one.
    pub fn kernel_mass_error(&self) -> T {
        let plane = self.height() * self.width();
        let w = self.weights.data();
        (0..plane)
            .map(|p| {
                let mass: T = (0..self.taps()).map(|t| w[t * plane + p]).sum();
                (mass - T::one()).abs()
            })
            .fold(T::zero(), T::max)
    }

    /// Checks the unit-mass, non-negative kernel invariant.
    pub fn check_normalized(&self, tol: T) -> Result<()> {
        let err = self.kernel_mass_error();
        if err > tol {
            return Err(invalid(format!("kernel mass deviates from 1 by {err}")));
        }
        if self.weights.min_value() < -tol {
            return Err(invalid("kernel has negative weights"));
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.kernel_size == other.kernel_size
            && self.dilation == other.dilation
            && self.weights.shape() == other.weights.shape()
    }

    /// `sum_i c_i * M_i` over all channels.
    pub fn linear_combination(terms: &[(T, &MotionField<T>)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or_else(|| invalid("empty linear combination"))?;
        for (_, m) in terms {
            if !first.same_layout(m) {
                return Err(invalid(format!(
                    "motion layouts differ: K={} d={} {:?} vs K={} d={} {:?}",
                    first.kernel_size,
                    first.dilation,
                    first.weights.shape(),
                    m.kernel_size,
                    m.dilation,
                    m.weights.shape()
                )));
            }
        }
        let mut out = MotionField::zeros(first.kernel_size, first.dilation, first.height(), first.width());
        for &(c, m) in terms {
            out.weights.axpy(c, &m.weights);
            out.alpha.axpy(c, &m.alpha);
            out.beta.axpy(c, &m.beta);
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> MotionField<U> {
        MotionField {
            weights: self.weights.cast(),
            alpha: self.alpha.cast(),
            beta: self.beta.cast(),
            kernel_size: self.kernel_size,
            dilation: self.dilation,
        }
    }
}

/// Per-pixel forward/backward arbitration in `[0, 1]`, `1 x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMap<T: Scalar> {
    data: Tensor<T>,
}

impl<T: Scalar> OcclusionMap<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        check_unit_map(&data, "occlusion")?;
        Ok(OcclusionMap { data })
    }

    pub fn constant(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Tensor::full(&[1, height, width], value))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn complement(&self) -> Self {
        OcclusionMap {
            data: self.data.map(|o| T::one() - o),
        }
    }
}

fn check_unit_map<T: Scalar>(data: &Tensor<T>, what: &str) -> Result<()> {
    let s = data.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(invalid(format!("{what} map must be 1 x H x W, got {s:?}")));
    }
    if data.data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
        return Err(invalid(format!("{what} map has entries outside [0, 1]")));
    }
    Ok(())
}

/// The four reference motions `M_-2, M_-1, M_1, M_2` and the occlusion map.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSet<T: Scalar> {
    motions: [MotionField<T>; 4],
    occlusion: OcclusionMap<T>,
}

impl<T: Scalar> MotionSet<T> {
    /// `motions` in temporal order `-2, -1, 1, 2`.
    pub fn new(motions: [MotionField<T>; 4], occlusion: OcclusionMap<T>) -> Result<Self> {
        for m in &motions[1..] {
            if !motions[0].same_layout(m) {
                return Err(invalid("reference motions must share H, W, K and dilation"));
            }
        }
        let (h, w) = (motions[0].height(), motions[0].width());
        if occlusion.tensor().shape() != [1, h, w] {
            return Err(invalid(format!(
                "occlusion shape {:?} does not match motions {h}x{w}",
                occlusion.tensor().shape()
            )));
        }
        Ok(MotionSet { motions, occlusion })
    }

    pub fn get(&self, r: Ref) -> &MotionField<T> {
        &self.motions[r.index()]
    }

    pub fn motions(&self) -> &[MotionField<T>; 4] {
        &self.motions
    }

    pub fn occlusion(&self) -> &OcclusionMap<T> {
        &self.occlusion
    }

    /// The same scene with time reversed: `M'_n = M_-n`, `O' = 1 - O`.
    pub fn time_reversed(&self) -> Self {
        MotionSet {
            motions: [
                self.motions[3].clone(),
                self.motions[2].clone(),
                self.motions[1].clone(),
                self.motions[0].clone(),
            ],
            occlusion: self.occlusion.complement(),
        }
    }
}

/// Forward/backward regressed motions and the coefficient `theta` that
/// weighs them.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressedMotions<T: Scalar> {
    pub forward: MotionField<T>,
    pub backward: MotionField<T>,
    theta: Tensor<T>,
}

impl<T: Scalar> RegressedMotions<T> {
    pub fn new(forward: MotionField<T>, backward: MotionField<T>, theta: Tensor<T>) -> Result<Self> {
        if !forward.same_layout(&backward) {
            return Err(invalid("forward and backward regressed motions differ in layout"));
        }
        check_unit_map(&theta, "theta")?;
        if theta.shape()[1..] != [forward.height(), forward.width()] {
            return Err(invalid("theta size differs from the motions"));
        }
        Ok(RegressedMotions { forward, backward, theta })
    }

    pub fn theta(&self) -> &Tensor<T> {
        &self.theta
    }
}

fn third<T: Scalar>() -> T {
    T::one() / T::lit(3.0)
}

/// `M_f = [(M_1 - M_-1) - 2 (M_-1 - M_-2)] / 3`, over all channels.
///
/// Because the coefficients sum to zero, the kernel weights of the result
/// have zero mass whenever the inputs have equal mass: the regressed motion
/// is a variation, not a standalone warp.
pub fn regress_forward_motion<T: Scalar>(
    m_minus2: &MotionField<T>,
    m_minus1: &MotionField<T>,
    m_plus1: &MotionField<T>,
) -> Result<MotionField<T>> {
    let t = third::<T>();
    MotionField::linear_combination(&[(T::two() * t, m_minus2), (-T::one(), m_minus1), (t, m_plus1)])
}

/// `M_b = [(M_-1 - M_1) - 2 (M_1 - M_2)] / 3`, the mirror of
/// [`regress_forward_motion`].
pub fn regress_backward_motion<T: Scalar>(
    m_plus2: &MotionField<T>,
    m_plus1: &MotionField<T>,
    m_minus1: &MotionField<T>,
) -> Result<MotionField<T>> {
    regress_forward_motion(m_plus2, m_plus1, m_minus1)
}

/// Velocity and acceleration of the quadratic through three unit-spaced
/// motions.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFit<T: Scalar> {
    pub velocity: MotionField<T>,
    /// Coefficient of `t^2`: `m(t) = m_mid + v t + a t^2`.
    pub acceleration: MotionField<T>,
}

/// Solves `m(t) = m_mid + v t + a t^2` through `t = -1, 0, 1`:
/// `v = (m_next - m_prev) / 2`, `a = [(m_next - m_mid) - (m_mid - m_prev)] / 2`.
pub fn solve_individual_quadratic<T: Scalar>(
    m_prev: &MotionField<T>,
    m_mid: &MotionField<T>,
    m_next: &MotionField<T>,
) -> Result<QuadraticFit<T>> {
    let h = T::half();
    let velocity = MotionField::linear_combination(&[(h, m_next), (-h, m_prev)])?;
    let acceleration = MotionField::linear_combination(&[(h, m_next), (-T::one(), m_mid), (h, m_prev)])?;
    Ok(QuadraticFit { velocity, acceleration })
}

fn sum_frames<T: Scalar>(frames: &[FrameTensor<T>], what: &str) -> Result<Tensor<T>> {
    let first = frames.first().ok_or_else(|| invalid(format!("{what} frame list is empty")))?;
    let mut acc = first.tensor().clone();
    for f in &frames[1..] {
        first.same_shape(f, what)?;
        acc.add_assign(f.tensor());
    }
    Ok(acc)
}

fn lerp_map<T: Scalar>(map: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let plane = h * w;
    Tensor::from_fn(&[c, h, w], |i| {
        let m = map.data()[i % plane];
        m * a.data()[i] + (T::one() - m) * b.data()[i]
    })
}

/// `O * sum(forward) + (1 - O) * sum(backward)`, per pixel.
pub fn blend_occlusion<T: Scalar>(
    forward_frames: &[FrameTensor<T>],
    backward_frames: &[FrameTensor<T>],
    occlusion: &OcclusionMap<T>,
) -> Result<FrameTensor<T>> {
    let fwd = sum_frames(forward_frames, "forward")?;
    let bwd = sum_frames(backward_frames, "backward")?;
    if fwd.shape() != bwd.shape() {
        return Err(invalid("forward and backward frames differ in shape"));
    }
    if occlusion.tensor().shape()[1..] != fwd.shape()[1..] {
        return Err(invalid("occlusion size differs from the frames"));
    }
    FrameTensor::new(lerp_map(occlusion.tensor(), &fwd, &bwd))
}

/// Like [`blend_occlusion`] but each side is averaged instead of summed,
/// which keeps the blend a convex combination when every warp kernel has
/// unit mass. This is the form used by the synthesis pipeline.
pub fn blend_occlusion_mean<T: Scalar>(
    forward_frames: &[FrameTensor<T>],
    backward_frames: &[FrameTensor<T>],
    occlusion: &OcclusionMap<T>,
) -> Result<FrameTensor<T>> {
    let scaled = |frames: &[FrameTensor<T>]| -> Vec<FrameTensor<T>> {
        let s = T::one() / T::from_usize(frames.len().max(1)).unwrap();
        frames.iter().map(|f| FrameTensor { data: f.data.scale(s) }).collect()
    };
    blend_occlusion(&scaled(forward_frames), &scaled(backward_frames), occlusion)
}

/// `theta * warped_fwd + (1 - theta) * warped_bwd`.
pub fn compose_offset_frame<T: Scalar>(
    warped_fwd: &FrameTensor<T>,
    warped_bwd: &FrameTensor<T>,
    theta: &Tensor<T>,
) -> Result<FrameTensor<T>> {
    warped_fwd.same_shape(warped_bwd, "offset frame")?;
    if theta.shape() != [1, warped_fwd.height(), warped_fwd.width()] {
        return Err(invalid(format!("theta shape {:?} does not match frames", theta.shape())));
    }
    FrameTensor::new(lerp_map(theta, warped_fwd.tensor(), warped_bwd.tensor()))
}

/// `base + offset`, unclamped.
pub fn compose_predicted_frame<T: Scalar>(base: &FrameTensor<T>, offset: &FrameTensor<T>) -> Result<FrameTensor<T>> {
    base.same_shape(offset, "predicted frame")?;
    FrameTensor::new(base.tensor().add(offset.tensor()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offsets(dy: f64, dx: f64) -> MotionField<f64> {
        MotionField::translation(3, 1, 4, 5, dy, dx)
    }

    fn assert_offsets(m: &MotionField<f64>, dy: f64, dx: f64, tol: f64) {
        assert!(m.alpha().data().iter().all(|v| (v - dy).abs() <= tol), "alpha {:?}", m.alpha().data()[0]);
        assert!(m.beta().data().iter().all(|v| (v - dx).abs() <= tol), "beta {:?}", m.beta().data()[0]);
    }

    #[test]
    fn zero_offsets_regress_to_zero() {
        let z = offsets(0.0, 0.0);
        let f = regress_forward_motion(&z, &z, &z).unwrap();
        assert_offsets(&f, 0.0, 0.0, 0.0);
        // equal kernels regress to a zero-mass kernel
        assert!(f.weights().data().iter().all(|w| w.abs() < 1e-15));
    }

    #[test]
    fn constant_velocity_regresses_to_zero() {
        let v = 1.7;
        let f = regress_forward_motion(&offsets(2.0 * v, 0.0), &offsets(v, 0.0), &offsets(-v, 0.0)).unwrap();
        assert_offsets(&f, 0.0, 0.0, 1e-12);
        let b = regress_backward_motion(&offsets(-2.0 * v, 0.0), &offsets(-v, 0.0), &offsets(v, 0.0)).unwrap();
        assert_offsets(&b, 0.0, 0.0, 1e-12);
    }

    #[test]
    fn pure_acceleration_regresses_to_minus_a() {
        // displacement convention p(0) - p(n) with p(t) = a t^2 / 2
        let a = 0.8;
        let f = regress_forward_motion(&offsets(-2.0 * a, 0.0), &offsets(-a / 2.0, 0.0), &offsets(-a / 2.0, 0.0)).unwrap();
        assert_offsets(&f, -a, 0.0, 1e-12);
        let b = regress_backward_motion(&offsets(-2.0 * a, 0.0), &offsets(-a / 2.0, 0.0), &offsets(-a / 2.0, 0.0)).unwrap();
        assert_offsets(&b, -a, 0.0, 1e-12);
    }

    #[test]
    fn backward_is_forward_of_reversed_sequence() {
        let (m2, m1, p1, p2) = (offsets(0.3, -1.0), offsets(0.1, 0.4), offsets(-0.7, 2.0), offsets(1.5, 0.2));
        let b = regress_backward_motion(&p2, &p1, &m1).unwrap();
        let f = regress_forward_motion(&p2, &p1, &m1).unwrap();
        assert_eq!(b, f);
        let _ = m2;
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = MotionField::<f64>::identity(3, 1, 4, 5);
        let b = MotionField::<f64>::identity(3, 1, 4, 6);
        let c = MotionField::<f64>::identity(5, 1, 4, 5);
        assert!(regress_forward_motion(&a, &a, &b).is_err());
        assert!(regress_backward_motion(&c, &a, &a).is_err());
        assert!(solve_individual_quadratic(&a, &b, &a).is_err());
    }

    #[test]
    fn quadratic_fit_cases() {
        let eq = solve_individual_quadratic(&offsets(0.4, 0.4), &offsets(0.4, 0.4), &offsets(0.4, 0.4)).unwrap();
        assert_offsets(&eq.velocity, 0.0, 0.0, 0.0);
        assert_offsets(&eq.acceleration, 0.0, 0.0, 0.0);
        let lin = solve_individual_quadratic(&offsets(0.0, 0.0), &offsets(1.0, 0.0), &offsets(2.0, 0.0)).unwrap();
        assert_offsets(&lin.velocity, 1.0, 0.0, 0.0);
        assert_offsets(&lin.acceleration, 0.0, 0.0, 0.0);
        let quad = solve_individual_quadratic(&offsets(0.0, 0.0), &offsets(1.0, 0.0), &offsets(4.0, 0.0)).unwrap();
        assert_offsets(&quad.velocity, 2.0, 0.0, 0.0);
        assert_offsets(&quad.acceleration, 1.0, 0.0, 0.0);
    }

    fn frame(v: f64) -> FrameTensor<f64> {
        FrameTensor::filled(3, 4, 5, v)
    }

    #[test]
    fn occlusion_blend_cases() {
        let one = OcclusionMap::constant(4, 5, 1.0).unwrap();
        let out = blend_occlusion(&[frame(0.2), frame(0.3)], &[frame(0.9)], &one).unwrap();
        assert!(out.tensor().data().iter().all(|v| (v - 0.5).abs() < 1e-12));

        let half = OcclusionMap::constant(4, 5, 0.5).unwrap();
        let out = blend_occlusion(&[frame(0.7)], &[frame(0.7)], &half).unwrap();
        assert!(out.tensor().data().iter().all(|v| (v - 0.7).abs() < 1e-12));

        let quarter = OcclusionMap::constant(4, 5, 0.25).unwrap();
        let out = blend_occlusion(&[frame(0.4), frame(0.6)], &[frame(0.0), frame(0.0)], &quarter).unwrap();
        assert!(out.tensor().data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn occlusion_blend_rejects_empty_and_mismatched() {
        let o = OcclusionMap::constant(4, 5, 0.5).unwrap();
        assert!(blend_occlusion(&[], &[frame(0.1)], &o).is_err());
        assert!(blend_occlusion(&[frame(0.1)], &[FrameTensor::filled(3, 4, 6, 0.1)], &o).is_err());
    }

    #[test]
    fn mean_blend_of_identical_sides_is_identity() {
        let o = OcclusionMap::constant(4, 5, 0.3).unwrap();
        let out = blend_occlusion_mean(&[frame(0.6), frame(0.6)], &[frame(0.6), frame(0.6)], &o).unwrap();
        assert!(out.tensor().data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn offset_and_predicted_frame_cases() {
        let ones = Tensor::full(&[1, 4, 5], 1.0);
        let zeros = Tensor::zeros(&[1, 4, 5]);
        let halves = Tensor::full(&[1, 4, 5], 0.5);
        let (a, b) = (frame(0.2), frame(0.6));
        assert_eq!(compose_offset_frame(&a, &b, &ones).unwrap(), a);
        assert_eq!(compose_offset_frame(&a, &b, &zeros).unwrap(), b);
        let mid = compose_offset_frame(&a, &b, &halves).unwrap();
        assert!(mid.tensor().data().iter().all(|v| (v - 0.4).abs() < 1e-12));
        assert!(compose_offset_frame(&a, &FrameTensor::filled(3, 4, 6, 0.0), &ones).is_err());

        assert_eq!(compose_predicted_frame(&a, &frame(0.0)).unwrap(), a);
        assert_eq!(compose_predicted_frame(&frame(0.0), &b).unwrap(), b);
        let sum = compose_predicted_frame(&frame(0.3), &frame(0.2)).unwrap();
        assert!(sum.tensor().data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        assert!(FrameTensor::new(Tensor::<f32>::zeros(&[0, 2, 2])).is_err());
        assert!(FrameTensor::new(Tensor::<f32>::full(&[1, 2, 2], f32::NAN)).is_err());
        assert!(OcclusionMap::new(Tensor::<f32>::full(&[1, 2, 2], 1.5)).is_err());
        let w = Tensor::<f32>::zeros(&[9, 2, 2]);
        assert!(MotionField::new(w.clone(), w.clone(), Tensor::zeros(&[9, 2, 3]), 3, 1).is_err());
        assert!(MotionField::new(w.clone(), w.clone(), w.clone(), 2, 1).is_err());
        let mut bad = w.clone();
        bad.data_mut()[0] = f32::INFINITY;
        assert!(MotionField::new(w.clone(), bad, w, 3, 1).is_err());
    }

    #[test]
    fn identity_kernel_is_normalized() {
        let m = MotionField::<f32>::identity(5, 1, 3, 3);
        assert!(m.check_normalized(1e-6).is_ok());
        assert!(MotionField::<f32>::zeros(5, 1, 3, 3).check_normalized(1e-6).is_err());
    }

    #[test]
    fn reference_index_helpers() {
        for r in Ref::ALL {
            assert_eq!(Ref::from_offset(r.offset()), Some(r));
            assert_eq!(r.mirrored().offset(), -r.offset());
        }
        assert_eq!(Ref::from_offset(0), None);
    }
}
