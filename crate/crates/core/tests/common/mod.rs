//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use deformfuse::encoder::TokenSequence;
use deformfuse::fusion::{
    bottleneck_fuse, cross_attention_fuse, self_attention_fuse, BottleneckState, FusedRepresentation,
    MultiHeadAttention,
};
use deformfuse::nn::{seeded_rng, Linear, ParamStore, Rng};
use deformfuse::tensor::{Graph, Tensor};
use rand::RngExt;

// ------------------------------------------------------------ attention

pub type Mat = Vec<Vec<f64>>;

pub fn rand_mat(r: usize, c: usize, rng: &mut Rng) -> Mat {
    (0..r)
        .map(|_| (0..c).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn linear(store: &ParamStore, l: &Linear, x: &Mat) -> Mat {
    let w = store.get(l.weight);
    let b = store.get(l.bias);
    x.iter()
        .map(|row| {
            (0..l.out_dim)
                .map(|j| b.data()[j] + (0..l.in_dim).map(|i| row[i] * w.at(&[i, j])).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn attention(store: &ParamStore, a: &MultiHeadAttention, xq: &Mat, xkv: &Mat) -> Mat {
    let q = linear(store, &a.q, xq);
    let k = linear(store, &a.k, xkv);
    let v = linear(store, &a.v, xkv);
    let dh = a.dim / a.heads;
    let mut z = vec![vec![0.0; a.dim]; xq.len()];
    for h in 0..a.heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, zi) in z.iter_mut().enumerate() {
            let s: Vec<f64> = (0..xkv.len())
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let tot: f64 = e.iter().sum();
            for c in cols.clone() {
                zi[c] = (0..xkv.len()).map(|j| e[j] / tot * v[j][c]).sum();
            }
        }
    }
    linear(store, &a.o, &z)
}

pub fn mean_rows(m: &[Vec<f64>]) -> Vec<f64> {
    let d = m[0].len();
    (0..d)
        .map(|c| m.iter().map(|r| r[c]).sum::<f64>() / m.len() as f64)
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub struct Case {
    pub n: usize,
    pub d: usize,
    pub heads: usize,
    pub fs: Mat,
    pub fj: Mat,
}

pub fn case(seed: u64) -> Case {
    let mut rng = seeded_rng(seed);
    let heads = 1 + (seed % 2) as usize;
    let d = 2 * rng.random_range(1..=4usize);
    let n = rng.random_range(1..=4usize);
    Case {
        n,
        d,
        heads,
        fs: rand_mat(n, d, &mut rng),
        fj: rand_mat(n, d, &mut rng),
    }
}

pub fn run(
    c: &Case,
    store: &ParamStore,
    f: impl Fn(&mut Graph, &deformfuse::nn::Binding, &TokenSequence, &TokenSequence) -> FusedRepresentation,
) -> Vec<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let (vs, vj) = (g.constant(to_tensor(&c.fs)), g.constant(to_tensor(&c.fj)));
    let ts = TokenSequence::from_var(&g, vs).unwrap();
    let tj = TokenSequence::from_var(&g, vj).unwrap();
    let out = f(&mut g, &p, &ts, &tj);
    g.value(out.vector).data().to_vec()
}

pub fn close(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max abs gap between the graph and the loops, per fusion head.
pub fn self_fusion_error(seed: u64) -> f64 {
    let c = case(seed);
    let mut store = ParamStore::new();
    let a = MultiHeadAttention::new(&mut store, "a", c.d, c.heads, &mut seeded_rng(seed + 1000)).unwrap();
    let got = run(&c, &store, |g, p, s, j| self_attention_fuse(g, p, s, j, &a).unwrap());
    let joint: Mat = c.fs.iter().chain(&c.fj).cloned().collect();
    let z = attention(&store, &a, &joint, &joint);
    close(&got, &add(&mean_rows(&z[..c.n]), &mean_rows(&z[c.n..])))
}

pub fn cross_fusion_error(seed: u64) -> f64 {
    let c = case(seed);
    let mut store = ParamStore::new();
    let a = MultiHeadAttention::new(&mut store, "a", c.d, c.heads, &mut seeded_rng(seed + 2000)).unwrap();
    let got = run(&c, &store, |g, p, s, j| cross_attention_fuse(g, p, s, j, &a).unwrap());
    close(&got, &mean_rows(&attention(&store, &a, &c.fj, &c.fs)))
}

pub fn bottleneck_fusion_error(seed: u64) -> f64 {
    let c = case(seed);
    let mut store = ParamStore::new();
    let b = 1 + (seed % 4) as usize;
    let s = BottleneckState::new(&mut store, "b", c.d, c.heads, b, &mut seeded_rng(seed + 3000)).unwrap();
    let got = run(&c, &store, |g, p, fs, fj| bottleneck_fuse(g, p, fs, fj, &s).unwrap());
    let t = store.get(s.tokens);
    let fsn: Mat = (0..b).map(|i| (0..c.d).map(|j| t.at(&[i, j])).collect()).collect();
    let xs: Mat = c.fs.iter().chain(&fsn).cloned().collect();
    let xj: Mat = c.fj.iter().chain(&fsn).cloned().collect();
    let ys = attention(&store, &s.attn_smri, &xs, &xs);
    let yj = attention(&store, &s.attn_jsm, &xj, &xj);
    let shared: Mat = (0..b)
        .map(|i| (0..c.d).map(|k| 0.5 * (ys[c.n + i][k] + yj[c.n + i][k])).collect())
        .collect();
    close(
        &got,
        &add(
            &add(&mean_rows(&ys[..c.n]), &mean_rows(&yj[..c.n])),
            &mean_rows(&shared),
        ),
    )
}

// ------------------------------------------------------------ ranking

/// Counts ordered (positive, negative) pairs directly.
pub fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

// ------------------------------------------------------------ nifti

/// Minimal NIfTI-1 writer, built field by field from the published layout.
pub fn nifti_bytes(
    dims: &[i16],
    datatype: i16,
    bitpix: i16,
    pixdim: [f32; 3],
    magic: &[u8; 4],
    body: &[u8],
) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    h[40..42].copy_from_slice(&(dims.len() as i16).to_le_bytes());
    for (i, d) in dims.iter().enumerate() {
        h[42 + 2 * i..44 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&datatype.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    h[76..80].copy_from_slice(&1.0f32.to_le_bytes());
    for (i, p) in pixdim.iter().enumerate() {
        h[80 + 4 * i..84 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352.0f32.to_le_bytes());
    h[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    h[344..348].copy_from_slice(magic);
    h.extend_from_slice(body);
    h
}

pub fn f32_body(vals: &[f32]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}
