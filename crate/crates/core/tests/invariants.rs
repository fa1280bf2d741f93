use jnmr::data::{augment, epoch_order, Applied, AugmentationPolicy, Sample, Trajectory};
use jnmr::losses::{charbonnier_loss, psnr, ssim, PSNR_CAP};
use jnmr::motion_model::{
    blend_occlusion, regress_backward_motion, regress_forward_motion, solve_individual_quadratic, FrameTensor, MotionField,
    MotionSet, OcclusionMap, Ref,
};
use jnmr::train::OptimizerConfig;
use jnmr::warp::deformable_warp;
use jnmr_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> MotionField<f64> {
    let mut m = MotionField::zeros(k, 1, h, w);
    m.alpha_mut().data_mut().iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
    m.beta_mut().data_mut().iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
    let (taps, plane) = (k * k, h * w);
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

fn motion_set(seed: u64, h: usize, w: usize) -> MotionSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motions = [0; 4].map(|_| field(&mut rng, 3, h, w));
    let occ = Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..1.0));
    MotionSet::new(motions, OcclusionMap::new(occ).unwrap()).unwrap()
}

fn frame(seed: u64, h: usize, w: usize) -> FrameTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FrameTensor::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..1.0))
}

fn offsets_close(a: &MotionField<f64>, b: &MotionField<f64>, tol: f64) -> bool {
    a.alpha().max_abs_diff(b.alpha()) <= tol && a.beta().max_abs_diff(b.beta()) <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_regression_is_linear(seed in any::<u64>(), k in -3.0f64..3.0, h in 2usize..6, w in 2usize..6) {
        let a = motion_set(seed, h, w);
        let b = motion_set(seed ^ 0x55, h, w);
        let fwd = |s: &MotionSet<f64>| regress_forward_motion(s.get(Ref::Minus2), s.get(Ref::Minus1), s.get(Ref::Plus1)).unwrap();
        let mix = |r: Ref| MotionField::linear_combination(&[(k, a.get(r)), (1.0, b.get(r))]).unwrap();
        let mixed = regress_forward_motion(&mix(Ref::Minus2), &mix(Ref::Minus1), &mix(Ref::Plus1)).unwrap();
        let expect = MotionField::linear_combination(&[(k, &fwd(&a)), (1.0, &fwd(&b))]).unwrap();
        prop_assert!(offsets_close(&mixed, &expect, 1e-6));
    }

    #[test]
    fn backward_is_forward_of_the_reversed_set(seed in any::<u64>(), h in 1usize..7, w in 1usize..7) {
        let s = motion_set(seed, h, w);
        let r = s.time_reversed();
        let b = regress_backward_motion(s.get(Ref::Plus2), s.get(Ref::Plus1), s.get(Ref::Minus1)).unwrap();
        let f = regress_forward_motion(r.get(Ref::Minus2), r.get(Ref::Minus1), r.get(Ref::Plus1)).unwrap();
        prop_assert!(offsets_close(&b, &f, 1e-6));
        prop_assert!(b.weights().max_abs_diff(f.weights()) <= 1e-6);
        prop_assert_eq!(r.time_reversed(), s);
    }

    #[test]
    fn occlusion_swap_is_symmetric(seed in any::<u64>(), h in 1usize..7, w in 1usize..7) {
        let s = motion_set(seed, h, w);
        let fr: Vec<_> = (0..4).map(|i| frame(seed.wrapping_add(i), h, w)).collect();
        let a = blend_occlusion(&fr[..2], &fr[2..], s.occlusion()).unwrap();
        let b = blend_occlusion(&fr[2..], &fr[..2], &s.occlusion().complement()).unwrap();
        prop_assert!(a.tensor().max_abs_diff(b.tensor()) <= 1e-7);
    }

    #[test]
    fn quadratic_fit_recovers_global_quadratics(
        p0 in -5.0f64..5.0, v in -3.0f64..3.0, a in -2.0f64..2.0, centre in -1i32..=1,
    ) {
        let traj = Trajectory { p0: [p0, -p0], v0: [v, 0.5 * v], accel: [a, -a], stage: None };
        let at = |t: f64| {
            let o = traj.offset(t);
            MotionField::translation(3, 1, 2, 3, o[0], o[1])
        };
        let c = centre as f64;
        let fit = solve_individual_quadratic(&at(c - 1.0), &at(c), &at(c + 1.0)).unwrap();
        // offset(t) = v t + a t^2 / 2 around t = c: slope v + a c, curvature a / 2
        let want_v = MotionField::translation(3, 1, 2, 3, v + a * c, 0.5 * v - a * c);
        let want_a = MotionField::translation(3, 1, 2, 3, 0.5 * a, -0.5 * a);
        prop_assert!(offsets_close(&fit.velocity, &want_v, 1e-9));
        prop_assert!(offsets_close(&fit.acceleration, &want_a, 1e-9));
    }

    #[test]
    fn identity_warp_is_exact(seed in any::<u64>(), k in 0usize..3, d in 1usize..3, h in 1usize..9, w in 1usize..9) {
        let f = frame(seed, h, w);
        let out = deformable_warp(&f, &MotionField::identity(2 * k + 1, d, h, w)).unwrap();
        prop_assert_eq!(out, f);
    }

    #[test]
    fn warp_of_a_constant_frame_is_constant(seed in any::<u64>(), c in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = field(&mut rng, 3, 5, 4);
        let f = FrameTensor::filled(3, 5, 4, c);
        let out = deformable_warp(&f, &m).unwrap();
        prop_assert!(out.tensor().data().iter().all(|v| (v - c).abs() <= 1e-12));
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
        let (a, b) = (frame(seed, h, w), frame(seed ^ 1, h, w));
        prop_assert!(charbonnier_loss(&a, &b, 1e-3).unwrap() >= 1e-3 - 1e-15);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(s <= 1.0 + 1e-12);
    }

    #[test]
    fn augmentation_undo_restores_the_sample(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
        let sample = Sample {
            id: "s".into(),
            inputs: [0u64, 1, 2, 3].map(|i| frame(seed.wrapping_add(i), h, w)),
            target: frame(seed ^ 9, h, w),
            magnitude: None,
        };
        let policy = AugmentationPolicy { horizontal_flip: true, vertical_flip: true, temporal_reversal: true, probability: 0.5 };
        let (aug, applied) = augment(&sample, &policy, seed);
        prop_assert_eq!(applied.undo(&aug), sample.clone());
        let none = Applied { horizontal_flip: false, vertical_flip: false, temporal_reversal: false };
        prop_assert_eq!(none.apply(&sample), sample);
    }

    #[test]
    fn epoch_order_is_a_deterministic_permutation(len in 0usize..200, seed in any::<u64>(), epoch in 0usize..50) {
        let order = epoch_order(len, seed, epoch);
        prop_assert_eq!(&order, &epoch_order(len, seed, epoch));
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn learning_rate_never_increases_and_respects_the_floor(epoch in 0usize..500) {
        let o = OptimizerConfig::default();
        let lr = o.learning_rate_at(epoch);
        prop_assert!(lr <= o.learning_rate_at(epoch.saturating_sub(1)));
        prop_assert!(lr >= o.min_learning_rate);
    }
}
