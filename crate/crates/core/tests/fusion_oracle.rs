//! Each attention head against a plain nested-loop implementation.

mod common;

use common::*;
use deformfuse::encoder::TokenSequence;
use deformfuse::fusion::*;
use deformfuse::nn::{seeded_rng, ParamStore};
use deformfuse::tensor::{Graph, Tensor};

#[test]
fn self_attention_matches_dense_oracle() {
    for seed in 0..100 {
        assert!(self_fusion_error(seed) < 1e-10, "seed {seed}");
    }
}

#[test]
fn cross_attention_matches_dense_oracle() {
    for seed in 0..100 {
        assert!(cross_fusion_error(seed) < 1e-10, "seed {seed}");
    }
}

#[test]
fn bottleneck_matches_dense_oracle() {
    for seed in 0..100 {
        assert!(bottleneck_fusion_error(seed) < 1e-10, "seed {seed}");
    }
}

#[test]
fn attention_rows_are_distributions() {
    let c = case(5);
    let mut store = ParamStore::new();
    let a = MultiHeadAttention::new(&mut store, "a", c.d, c.heads, &mut seeded_rng(9)).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(to_tensor(&c.fs));
    let y = g.constant(to_tensor(&c.fj));
    let t = a.trace(&mut g, &p, x, y).unwrap();
    assert_eq!(t.weights.len(), c.heads);
    for w in t.weights {
        let w = g.value(w);
        for row in w.data().chunks(w.shape()[1]) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn constant_tokens_make_attention_uniform() {
    let (n, d) = (4, 8);
    let mut store = ParamStore::new();
    let a = MultiHeadAttention::new(&mut store, "a", d, 2, &mut seeded_rng(3)).unwrap();
    let row: Vec<f64> = (0..d).map(|i| i as f64 * 0.1).collect();
    let m: Mat = vec![row; n];
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(to_tensor(&m));
    let t = a.trace(&mut g, &p, x, x).unwrap();
    for w in t.weights {
        assert!(g.value(w).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}

#[test]
fn mismatched_widths_are_rejected() {
    let mut store = ParamStore::new();
    let a = MultiHeadAttention::new(&mut store, "a", 4, 1, &mut seeded_rng(0)).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[3, 4]));
    let y = g.constant(Tensor::zeros(&[3, 6]));
    let tx = TokenSequence::from_var(&g, x).unwrap();
    let ty = TokenSequence::from_var(&g, y).unwrap();
    assert!(cross_attention_fuse(&mut g, &p, &tx, &ty, &a).is_err());
    assert!(self_attention_fuse(&mut g, &p, &tx, &ty, &a).is_err());
}
