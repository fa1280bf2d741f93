//! Named parameter storage and the few layer types the networks are built
//! from.

use jnmr_tensor::{init, Graph, Scalar, Tensor, Var};

use crate::error::{invalid, Result};

/// Slope of every leaky rectifier in the networks.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Orthogonal-init gain matched to a leaky rectifier of [`LEAKY_SLOPE`].
pub fn leaky_gain() -> f64 {
    (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named parameter tensors. Order of registration is the order of
/// serialization, so building the same architecture twice yields the same
/// layout.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    seed: u64,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Orthogonal tensor seeded from the store seed and the parameter name.
    pub fn orthogonal(&mut self, name: impl Into<String>, shape: &[usize], gain: f64) -> ParamId {
        let name = name.into();
        let seed = self.seed ^ name_hash(&name);
        self.add(name, init::orthogonal(shape, gain, seed))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Replaces all values; shapes must match.
    pub fn load(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(invalid(format!("expected {} parameter tensors, got {}", self.tensors.len(), values.len())));
        }
        for (i, (cur, new)) in self.tensors.iter().zip(&values).enumerate() {
            if cur.shape() != new.shape() {
                return Err(invalid(format!(
                    "parameter {} has shape {:?}, got {:?}",
                    self.names[i],
                    cur.shape(),
                    new.shape()
                )));
            }
        }
        self.tensors = values;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            seed: self.seed,
        }
    }

    /// Records every parameter on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Params {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Params { vars }
    }
}

/// Parameters recorded on a graph, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Params {
    vars: Vec<Var>,
}

impl Params {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Weight initialization of a layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Orthogonal(f64),
    Zero,
}

/// Stride-1, same-padded 2-D convolution.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        init: Init,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let weight = match init {
            Init::Orthogonal(gain) => ps.orthogonal(format!("{name}.weight"), &shape, gain),
            Init::Zero => ps.zeros(format!("{name}.weight"), &shape),
        };
        let bias = ps.zeros(format!("{name}.bias"), &[out_channels]);
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, x: Var) -> Var {
        g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)))
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

/// A run of 3x3 convolutions, each followed by a leaky rectifier.
#[derive(Clone, Debug)]
pub struct ConvStack {
    layers: Vec<Conv2d>,
}

impl ConvStack {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, in_channels: usize, out_channels: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { out_channels };
                Conv2d::new(ps, &format!("{name}.{i}"), cin, out_channels, 3, Init::Orthogonal(leaky_gain()))
            })
            .collect();
        ConvStack { layers }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params, mut x: Var) -> Var {
        for layer in &self.layers {
            let y = layer.forward(g, p, x);
            x = g.leaky_relu(y, T::lit(LEAKY_SLOPE));
        }
        x
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let build = |seed| {
            let mut ps = ParamStore::<f32>::new(seed);
            ConvStack::new(&mut ps, "enc", 3, 8, 2);
            ps
        };
        let (a, b, c) = (build(1), build(1), build(2));
        assert_eq!(a.tensors(), b.tensors());
        assert_ne!(a.tensors(), c.tensors());
        assert_eq!(a.num_elements(), 3 * 8 * 9 + 8 + 8 * 8 * 9 + 8);
    }

    #[test]
    fn zero_conv_outputs_bias() {
        let mut ps = ParamStore::<f64>::new(0);
        let conv = Conv2d::new(&mut ps, "head", 2, 3, 3, Init::Zero);
        let mut g = Graph::new();
        let p = ps.bind(&mut g, false);
        let x = g.constant(Tensor::ones(&[1, 2, 4, 4]));
        let y = conv.forward(&mut g, &p, x);
        assert_eq!(g.shape(y), &[1, 3, 4, 4]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_checks_shapes() {
        let mut ps = ParamStore::<f32>::new(0);
        ps.zeros("a", &[2, 2]);
        assert!(ps.load(vec![Tensor::zeros(&[3])]).is_err());
        assert!(ps.load(vec![Tensor::ones(&[2, 2])]).is_ok());
        assert_eq!(ps.get(ps.find("a").unwrap()).sum(), 4.0);
    }
}
