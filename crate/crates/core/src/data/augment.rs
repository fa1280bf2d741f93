//! Random flips and temporal reversal, applied identically to every frame
//! of a sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use jnmr_tensor::Scalar;

use super::Sample;
use crate::motion_model::FrameTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub temporal_reversal: bool,
    /// Chance of each enabled transform.
    pub probability: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            horizontal_flip: true,
            vertical_flip: true,
            temporal_reversal: true,
            probability: 0.5,
        }
    }
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        AugmentationPolicy {
            horizontal_flip: false,
            vertical_flip: false,
            temporal_reversal: false,
            probability: 0.0,
        }
    }
}

/// Transforms chosen for one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Applied {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub temporal_reversal: bool,
}

impl Applied {
    pub fn apply<T: Scalar>(&self, sample: &Sample<T>) -> Sample<T> {
        let tf = |f: &FrameTensor<T>| flip(f, self.horizontal_flip, self.vertical_flip);
        let mut inputs = sample.inputs.clone().map(|f| tf(&f));
        if self.temporal_reversal {
            inputs.reverse();
        }
        Sample {
            id: sample.id.clone(),
            inputs,
            target: tf(&sample.target),
            magnitude: sample.magnitude,
        }
    }

    /// Every transform is an involution and they commute, so undoing is
    /// applying again.
    pub fn undo<T: Scalar>(&self, sample: &Sample<T>) -> Sample<T> {
        self.apply(sample)
    }
}

fn flip<T: Scalar>(f: &FrameTensor<T>, horizontal: bool, vertical: bool) -> FrameTensor<T> {
    if !horizontal && !vertical {
        return f.clone();
    }
    let (_, h, w) = f.dims();
    FrameTensor::from_fn(f.channels(), h, w, |c, y, x| {
        f.get(c, if vertical { h - 1 - y } else { y }, if horizontal { w - 1 - x } else { x })
    })
}

pub fn augment<T: Scalar>(sample: &Sample<T>, policy: &AugmentationPolicy, rng_seed: u64) -> (Sample<T>, Applied) {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let p = policy.probability.clamp(0.0, 1.0);
    let mut draw = |enabled: bool| {
        let hit = rng.random_bool(p);
        enabled && hit
    };
    let applied = Applied {
        horizontal_flip: draw(policy.horizontal_flip),
        vertical_flip: draw(policy.vertical_flip),
        temporal_reversal: draw(policy.temporal_reversal),
    };
    (applied.apply(sample), applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sample<f32> {
        let frame = |k: usize| FrameTensor::from_fn(3, 4, 5, move |c, y, x| (k * 100 + c * 20 + y * 5 + x) as f32 / 1000.0);
        Sample {
            id: "s".into(),
            inputs: [frame(0), frame(1), frame(3), frame(4)],
            target: frame(2),
            magnitude: None,
        }
    }

    #[test]
    fn zero_probability_is_identity() {
        let s = sample();
        let policy = AugmentationPolicy {
            probability: 0.0,
            ..AugmentationPolicy::default()
        };
        for seed in 0..20 {
            let (out, applied) = augment(&s, &policy, seed);
            assert_eq!(applied, Applied::default());
            assert_eq!(out, s);
        }
    }

    #[test]
    fn transforms_are_involutions() {
        let s = sample();
        for bits in 0..8 {
            let a = Applied {
                horizontal_flip: bits & 1 != 0,
                vertical_flip: bits & 2 != 0,
                temporal_reversal: bits & 4 != 0,
            };
            assert_eq!(a.undo(&a.apply(&s)), s);
        }
    }

    #[test]
    fn reversal_swaps_input_order_and_keeps_target() {
        let s = sample();
        let a = Applied {
            temporal_reversal: true,
            ..Applied::default()
        };
        let r = a.apply(&s);
        assert_eq!(r.inputs[0], s.inputs[3]);
        assert_eq!(r.inputs[1], s.inputs[2]);
        assert_eq!(r.target, s.target);
    }

    #[test]
    fn flip_moves_pixels() {
        let s = sample();
        let a = Applied {
            horizontal_flip: true,
            ..Applied::default()
        };
        let r = a.apply(&s);
        assert_eq!(r.target.get(1, 2, 0), s.target.get(1, 2, 4));
        assert_eq!(r.inputs[2].get(0, 3, 1), s.inputs[2].get(0, 3, 3));
    }
}
