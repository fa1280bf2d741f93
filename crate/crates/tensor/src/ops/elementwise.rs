//! Pointwise operations and the channel-broadcast product.

use crate::graph::{Backward, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct AddOp;

impl<T: Scalar> Backward<T> for AddOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        (0..inputs.len()).map(|k| needs[k].then(|| grad.clone())).collect()
    }
}

struct SubOp;

impl<T: Scalar> Backward<T> for SubOp {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.scale(-T::one()))]
    }
}

struct MulOp;

impl<T: Scalar> Backward<T> for MulOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![
            needs[0].then(|| grad.mul(inputs[1])),
            needs[1].then(|| grad.mul(inputs[0])),
        ]
    }
}

struct ScaleOp<T>(T);

impl<T: Scalar> Backward<T> for ScaleOp<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.scale(self.0))]
    }
}

struct IdentityGrad;

impl<T: Scalar> Backward<T> for IdentityGrad {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.clone())]
    }
}

/// Derivative expressed through the input value.
struct FromInput<F>(F);

impl<T: Scalar, F: Fn(T) -> T> Backward<T> for FromInput<F> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.zip_map(inputs[0], |g, x| g * (self.0)(x)))]
    }
}

/// Derivative expressed through the output value.
struct FromOutput<F>(F);

impl<T: Scalar, F: Fn(T) -> T> Backward<T> for FromOutput<F> {
    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.zip_map(output, |g, y| g * (self.0)(y)))]
    }
}

struct MulBcastOp;

impl<T: Scalar> Backward<T> for MulBcastOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, m) = (inputs[0], inputs[1]);
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let gx = needs[0].then(|| {
            let mut out = Tensor::zeros(x.shape());
            let (od, gd, md) = (out.data_mut(), grad.data(), m.data());
            for b in 0..n {
                let mm = &md[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for p in 0..plane {
                        od[base + p] = gd[base + p] * mm[p];
                    }
                }
            }
            out
        });
        let gm = needs[1].then(|| {
            let mut out = Tensor::zeros(m.shape());
            let (od, gd, xd) = (out.data_mut(), grad.data(), x.data());
            for b in 0..n {
                let acc = &mut od[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for p in 0..plane {
                        acc[p] += gd[base + p] * xd[base + p];
                    }
                }
            }
            out
        });
        vec![gx, gm]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.apply(&[a, b], value, AddOp)
    }

    /// Sum of any number of equally shaped values.
    pub fn add_n(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "add_n of nothing");
        let mut value = self.value(vars[0]).clone();
        for v in &vars[1..] {
            value.add_assign(self.value(*v));
        }
        self.apply(vars, value, AddOp)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.apply(&[a, b], value, SubOp)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).mul(self.value(b));
        self.apply(&[a, b], value, MulOp)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        self.apply(&[a], value, ScaleOp(s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.apply(&[a], value, IdentityGrad)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| T::one() - x);
        self.apply(&[a], value, ScaleOp(-T::one()))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { slope * x });
        self.apply(
            &[a],
            value,
            FromInput(move |x: T| if x > T::zero() { T::one() } else { slope }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.apply(&[a], value, FromOutput(|y: T| y * (T::one() - y)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.apply(&[a], value, FromOutput(|y: T| T::one() - y * y))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.sqrt());
        self.apply(&[a], value, FromOutput(|y: T| T::half() / y))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.apply(&[a], value, FromInput(|x: T| T::two() * x))
    }

    /// `|a|`, with subgradient 0 at the origin.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.abs());
        self.apply(
            &[a],
            value,
            FromInput(|x: T| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }),
        )
    }

    /// Clamp into `[lo, hi]`; the gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let value = self.value(a).map(|x| x.max(lo).min(hi));
        self.apply(
            &[a],
            value,
            FromInput(move |x: T| if x > lo && x < hi { T::one() } else { T::zero() }),
        )
    }

    /// `x * m` where `x` is `[N, C, H, W]` and `m` is `[N, 1, H, W]`.
    pub fn mul_bcast(&mut self, x: Var, m: Var) -> Var {
        let (n, c, h, w) = self.dims4(x);
        assert_eq!(self.shape(m), &[n, 1, h, w], "mul_bcast map shape");
        let plane = h * w;
        let mut value = self.value(x).clone();
        {
            let md = self.value(m).data().to_vec();
            let vd = value.data_mut();
            for b in 0..n {
                let mm = &md[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for p in 0..plane {
                        vd[base + p] *= mm[p];
                    }
                }
            }
        }
        self.apply(&[x, m], value, MulBcastOp)
    }

    /// `m * a + (1 - m) * b` with a channel-broadcast map `m`.
    pub fn lerp_bcast(&mut self, m: Var, a: Var, b: Var) -> Var {
        let inv = self.one_minus(m);
        let ta = self.mul_bcast(a, m);
        let tb = self.mul_bcast(b, inv);
        self.add(ta, tb)
    }
}
