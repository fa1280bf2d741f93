use crate::graph::{Backward, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct BroadcastGrad<T>(T);

impl<T: Scalar> Backward<T> for BroadcastGrad<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.data()[0] * self.0))]
    }
}

impl<T: Scalar> Graph<T> {
    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.apply(&[a], value, BroadcastGrad(T::one()))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len()).unwrap();
        let value = Tensor::scalar(self.value(a).sum() / n);
        self.apply(&[a], value, BroadcastGrad(T::one() / n))
    }
}
