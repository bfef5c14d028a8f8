//! 3-D CNN encoders and the token projection into the attention space.
//!
//! Each stage is `conv3d(k=3, pad=1) → ReLU → maxpool(2)`. The final feature
//! map `C×h×w×d` is flattened to `N = h·w·d` tokens of `C` features (x fastest,
//! then y, then z) and projected by a modality-specific linear map to `d`.

use crate::error::{dim_err, Result};
use crate::nn::{Binding, Conv3dLayer, Linear, ParamStore, Rng};
use crate::tensor::{Graph, Tensor, Var};
use crate::volume_io::Volume;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    /// Cubic input extent the encoder accepts.
    pub input_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            stage_channels: vec![8, 16, 32],
            kernel: 3,
            pool: 2,
            input_size: 32,
        }
    }
}

impl EncoderConfig {
    pub fn with_in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn output_channels(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&self.in_channels)
    }

    /// Spatial extent of the final feature map along each axis.
    pub fn output_extent(&self) -> usize {
        self.input_size / self.pool.pow(self.stage_channels.len() as u32)
    }

    pub fn num_tokens(&self) -> usize {
        self.output_extent().pow(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.in_channels == 0 || self.kernel.is_multiple_of(2) {
            return dim_err(format!("invalid encoder config {self:?}"));
        }
        let div = self.pool.pow(self.stage_channels.len() as u32);
        if self.input_size == 0 || !self.input_size.is_multiple_of(div) {
            return dim_err(format!(
                "input size {} must be a positive multiple of {div} for {} pooling stages",
                self.input_size,
                self.stage_channels.len()
            ));
        }
        Ok(())
    }

    /// Scalar parameter count, a pure function of the configuration.
    pub fn num_params(&self) -> usize {
        let k3 = self.kernel.pow(3);
        let mut c_in = self.in_channels;
        let mut total = 0;
        for &c in &self.stage_channels {
            total += c * c_in * k3 + c;
            c_in = c;
        }
        total
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub stages: Vec<Conv3dLayer>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut c_in = cfg.in_channels;
        let mut stages = Vec::with_capacity(cfg.stage_channels.len());
        for (i, &c) in cfg.stage_channels.iter().enumerate() {
            stages.push(Conv3dLayer::new(
                store,
                &format!("{name}.conv{i}"),
                c_in,
                c,
                cfg.kernel,
                rng,
            ));
            c_in = c;
        }
        Ok(Self { cfg, stages })
    }

    /// Maps `x[C_in×S×S×S]` to the final feature map `[C×s×s×s]`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let s = self.cfg.input_size;
        let expected = [self.cfg.in_channels, s, s, s];
        if g.value(x).shape() != expected {
            return dim_err(format!(
                "encoder expects input {expected:?}, got {:?}",
                g.value(x).shape()
            ));
        }
        let mut h = x;
        for stage in &self.stages {
            h = stage.forward(g, p, h)?;
            h = g.relu(h);
            h = g.max_pool3d(h, self.cfg.pool)?;
        }
        Ok(h)
    }

    pub fn num_params(&self) -> usize {
        self.stages.iter().map(Conv3dLayer::num_params).sum()
    }
}

/// `N×d` feature matrix in the attention embedding space.
#[derive(Clone, Copy, Debug)]
pub struct TokenSequence {
    pub tokens: Var,
    pub n: usize,
    pub d: usize,
}

impl TokenSequence {
    pub fn from_var(g: &Graph, tokens: Var) -> Result<Self> {
        match *g.value(tokens).shape() {
            [n, d] => Ok(Self { tokens, n, d }),
            ref s => dim_err(format!("token sequence must be N×d, got {s:?}")),
        }
    }
}

/// Flattens a `C×h×w×d` feature map into `N×C` rows.
pub fn flatten_tokens(g: &mut Graph, fm: Var) -> Result<Var> {
    let shape = g.value(fm).shape().to_vec();
    let [c, d, h, w] = shape[..] else {
        return dim_err(format!("feature map must be C×D×H×W, got {shape:?}"));
    };
    let cn = g.reshape(fm, vec![c, d * h * w])?;
    g.transpose(cn)
}

pub fn tokenize_and_project(g: &mut Graph, p: &Binding, fm: Var, proj: &Linear) -> Result<TokenSequence> {
    let rows = flatten_tokens(g, fm)?;
    let tokens = proj.forward(g, p, rows)?;
    TokenSequence::from_var(g, tokens)
}

/// Resamples every channel onto an `out[x,y,z]` grid with trilinear
/// interpolation, aligning voxel centres.
pub fn resample_trilinear(v: &Volume, out: [usize; 3]) -> Volume {
    let [nx, ny, nz] = v.dims;
    let [ox, oy, oz] = out;
    let scale = [nx as f64 / ox as f64, ny as f64 / oy as f64, nz as f64 / oz as f64];
    let mut data = Vec::with_capacity(v.channels * ox * oy * oz);
    for c in 0..v.channels {
        for z in 0..oz {
            let sz = ((z as f64 + 0.5) * scale[2] - 0.5).clamp(0.0, (nz - 1) as f64);
            for y in 0..oy {
                let sy = ((y as f64 + 0.5) * scale[1] - 0.5).clamp(0.0, (ny - 1) as f64);
                for x in 0..ox {
                    let sx = ((x as f64 + 0.5) * scale[0] - 0.5).clamp(0.0, (nx - 1) as f64);
                    data.push(v.sample_trilinear(c, [sx, sy, sz]));
                }
            }
        }
    }
    let spacing = [
        v.spacing[0] * scale[0],
        v.spacing[1] * scale[1],
        v.spacing[2] * scale[2],
    ];
    Volume::new(v.channels, out, spacing, data).expect("resampled volume is consistent")
}

/// Converts a volume to a `C×Z×Y×X` tensor.
pub fn volume_tensor(v: &Volume) -> Tensor {
    let [nx, ny, nz] = v.dims;
    Tensor::new(vec![v.channels, nz, ny, nx], v.data.clone()).expect("volume invariant")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    #[test]
    fn default_config_yields_4cubed_tokens() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.output_extent(), 4);
        assert_eq!(cfg.num_tokens(), 64);
        assert_eq!(cfg.output_channels(), 32);
    }

    #[test]
    fn feature_map_shape_and_zero_input() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", EncoderConfig::default(), &mut seeded_rng(1)).unwrap();
        assert_eq!(enc.num_params(), enc.cfg.num_params());
        assert_eq!(store.num_scalars(), enc.num_params());
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[1, 32, 32, 32]));
        let fm = enc.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(fm).shape(), &[32, 4, 4, 4]);
        assert!(g.value(fm).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extent_mismatch_is_dimension_error() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", EncoderConfig::default(), &mut seeded_rng(1)).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[1, 16, 16, 16]));
        assert!(matches!(enc.forward(&mut g, &p, x), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn identity_projection_keeps_flattened_features() {
        let mut store = ParamStore::new();
        let proj = Linear::new(&mut store, "proj", 3, 3, &mut seeded_rng(0));
        *store.get_mut(proj.weight) = Tensor::eye(3);
        let data: Vec<f64> = (0..3 * 8).map(|i| i as f64).collect();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let fm = g.constant(Tensor::new(vec![3, 2, 2, 2], data.clone()).unwrap());
        let ts = tokenize_and_project(&mut g, &p, fm, &proj).unwrap();
        assert_eq!((ts.n, ts.d), (8, 3));
        let tokens = g.value(ts.tokens);
        for n in 0..8 {
            for c in 0..3 {
                assert_eq!(tokens.at(&[n, c]), data[c * 8 + n]);
            }
        }
    }

    #[test]
    fn invalid_input_size_rejected() {
        let cfg = EncoderConfig {
            input_size: 20,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
