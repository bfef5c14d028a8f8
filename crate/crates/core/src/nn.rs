//! Parameter storage and the small set of layers the models are built from.

use rand::{RngExt, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub type Rng = SplitMix64;

pub fn seeded_rng(seed: u64) -> Rng {
    SplitMix64::seed_from_u64(seed)
}

/// Mixes a stream index into a base seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Owns every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Validation(format!("no parameter named {name}")))?;
        Ok(self.get_mut(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Records every parameter as a gradient-carrying leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant; for inference only.
    pub fn bind_frozen(&self, g: &mut Graph) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }
}

/// Graph handles for the parameters of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wraps vars already on a graph, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform in ±sqrt(6/(fan_in+fan_out)).
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

/// Affine map `x·W + b` with `W[in×out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            xavier_uniform(&[in_dim, out_dim], in_dim, out_dim, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// `x` is `[rows×in]` (or a bare `[in]` vector, treated as one row).
    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let x = if g.value(x).rank() == 1 {
            g.reshape(x, vec![1, self.in_dim])?
        } else {
            x
        };
        let xw = g.matmul(x, p.var(self.weight))?;
        g.add_bias(xw, p.var(self.bias))
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// 3-D convolution layer, cubic kernel.
#[derive(Clone, Copy, Debug)]
pub struct Conv3dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv3dLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut Rng,
    ) -> Self {
        let k3 = kernel.pow(3);
        let weight = store.add(
            format!("{name}.weight"),
            xavier_uniform(
                &[out_channels, in_channels, kernel, kernel, kernel],
                in_channels * k3,
                out_channels * k3,
                rng,
            ),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        }
    }

    /// Same-padded, stride-1 convolution.
    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        g.conv3d(x, p.var(self.weight), p.var(self.bias), 1, self.kernel / 2)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.pow(3) + self.out_channels
    }
}
