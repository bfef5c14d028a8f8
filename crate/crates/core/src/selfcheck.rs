//! Finite-difference gradient suite over every differentiable op, each
//! fusion head, and complete tiny models.

use crate::encoder::{EncoderConfig, TokenSequence};
use crate::error::Result;
use crate::fusion::{
    bottleneck_fuse, cross_attention_fuse, self_attention_fuse, BottleneckState, FusionKind, FusionModel, ModelConfig,
    MultiHeadAttention, SubjectInputs,
};
use crate::nn::{derive_seed, seeded_rng, Binding, ParamStore, Rng};
use crate::tensor::gradcheck::{check, weighted_sum, GradCheckReport};
use crate::tensor::Tensor;
use rand::RngExt;

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_THRESHOLD: f64 = 1e-5;

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Tiny configuration: input 8³, two stages, `d = 8`.
pub fn tiny_config(kind: FusionKind) -> ModelConfig {
    ModelConfig {
        kind,
        encoder: EncoderConfig {
            stage_channels: vec![2, 4],
            input_size: 8,
            ..EncoderConfig::default()
        },
        embed: 8,
        heads: 2,
        bottleneck_tokens: 2,
        classifier_hidden: true,
    }
}

fn head_check(
    name: &str,
    rng: &mut Rng,
    build: impl Fn(&mut ParamStore, &mut Rng) -> Result<HeadParams>,
) -> Result<GradCheckReport> {
    let (n, d) = (4, 8);
    let mut store = ParamStore::new();
    let head = build(&mut store, rng)?;
    let mut inputs = vec![uniform(&[n, d], rng), uniform(&[n, d], rng)];
    inputs.extend(store.tensors().iter().cloned());
    let w = uniform(&[d], rng);
    check(name, &inputs, |g, vars| {
        let ts = TokenSequence { tokens: vars[0], n, d };
        let tj = TokenSequence { tokens: vars[1], n, d };
        let p = Binding::from_vars(vars[2..].to_vec());
        let f = match &head {
            HeadParams::Cross(a) => cross_attention_fuse(g, &p, &ts, &tj, a)?,
            HeadParams::SelfAttn(a) => self_attention_fuse(g, &p, &ts, &tj, a)?,
            HeadParams::Bottleneck(b) => bottleneck_fuse(g, &p, &ts, &tj, b)?,
        };
        weighted_sum(g, f.vector, &w)
    })
}

enum HeadParams {
    Cross(MultiHeadAttention),
    SelfAttn(MultiHeadAttention),
    Bottleneck(BottleneckState),
}

fn model_check(kind: FusionKind, seed: u64) -> Result<GradCheckReport> {
    let model = FusionModel::new(tiny_config(kind), seed)?;
    let mut rng = seeded_rng(derive_seed(seed, 1));
    let s = SubjectInputs {
        smri: uniform(&[1, 8, 8, 8], &mut rng),
        jsm: uniform(&[1, 8, 8, 8], &mut rng),
    };
    let label = (seed % 2) as usize;
    check(&format!("model:{kind}"), model.params.tensors(), |g, vars| {
        let p = Binding::from_vars(vars.to_vec());
        let logits = model.forward_subject(g, &p, &s)?;
        g.cross_entropy(logits, &[label])
    })
}

/// Runs every check; the caller compares against [`GRADCHECK_THRESHOLD`].
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = seeded_rng(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    let (a, b, w) = (uniform(&[3, 4], r), uniform(&[4, 5], r), uniform(&[15], r));
    out.push(check("matmul", &[a, b], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        weighted_sum(g, y, &w)
    })?);

    let x = uniform(&[2, 5, 4, 6], r);
    let k = uniform(&[3, 2, 3, 3, 3], r);
    let bias = uniform(&[3], r);
    let w1 = uniform(&[3 * 5 * 4 * 6], r);
    out.push(check("conv3d", &[x.clone(), k.clone(), bias.clone()], |g, v| {
        let y = g.conv3d(v[0], v[1], v[2], 1, 1)?;
        weighted_sum(g, y, &w1)
    })?);
    let w2 = uniform(&[3 * 3 * 2 * 3], r);
    out.push(check("conv3d(stride 2)", &[x.clone(), k, bias], |g, v| {
        let y = g.conv3d(v[0], v[1], v[2], 2, 1)?;
        weighted_sum(g, y, &w2)
    })?);
    let w3 = uniform(&[2 * 2 * 2 * 3], r);
    out.push(check("max_pool3d", &[x], |g, v| {
        let y = g.max_pool3d(v[0], 2)?;
        weighted_sum(g, y, &w3)
    })?);

    let (s, w4) = (uniform(&[3, 5], r), uniform(&[15], r));
    out.push(check("softmax", &[s], |g, v| {
        let y = g.softmax_lastdim(v[0])?;
        weighted_sum(g, y, &w4)
    })?);

    let (t, w5) = (uniform(&[6, 4], r), uniform(&[4], r));
    out.push(check("gap", &[t], |g, v| {
        let y = g.mean_rows(v[0])?;
        weighted_sum(g, y, &w5)
    })?);

    let logits = uniform(&[4, 2], r);
    out.push(check("cross_entropy", &[logits], |g, v| {
        g.cross_entropy(v[0], &[0, 1, 1, 0])
    })?);

    let (m, bb, w6) = (uniform(&[3, 4], r), uniform(&[4], r), uniform(&[12], r));
    out.push(check("relu+bias", &[m, bb], |g, v| {
        let y = g.add_bias(v[0], v[1])?;
        let y = g.relu(y);
        weighted_sum(g, y, &w6)
    })?);

    for heads in [1, 2] {
        out.push(head_check(&format!("cross fusion (heads={heads})"), r, |st, r| {
            Ok(HeadParams::Cross(MultiHeadAttention::new(st, "a", 8, heads, r)?))
        })?);
        out.push(head_check(&format!("self fusion (heads={heads})"), r, |st, r| {
            Ok(HeadParams::SelfAttn(MultiHeadAttention::new(st, "a", 8, heads, r)?))
        })?);
        out.push(head_check(
            &format!("bottleneck fusion (heads={heads})"),
            r,
            |st, r| Ok(HeadParams::Bottleneck(BottleneckState::new(st, "b", 8, heads, 2, r)?)),
        )?);
    }

    for (i, kind) in FusionKind::ALL.into_iter().enumerate() {
        out.push(model_check(kind, derive_seed(seed, 100 + i as u64))?);
    }
    Ok(out)
}
