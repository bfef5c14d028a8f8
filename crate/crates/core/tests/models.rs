use deformfuse::encoder::EncoderConfig;
use deformfuse::fusion::*;
use deformfuse::nn::seeded_rng;
use deformfuse::tensor::{Graph, Tensor};
use deformfuse::Error;
use rand::RngExt;

fn small(kind: FusionKind) -> ModelConfig {
    ModelConfig {
        kind,
        encoder: EncoderConfig {
            stage_channels: vec![3, 4],
            input_size: 8,
            ..EncoderConfig::default()
        },
        embed: 8,
        heads: 2,
        bottleneck_tokens: 3,
        classifier_hidden: true,
    }
}

fn random_volume(seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed);
    Tensor::new(
        vec![1, 8, 8, 8],
        (0..512).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn logits(m: &FusionModel, s: &SubjectInputs) -> Vec<f64> {
    let mut g = Graph::new();
    let p = m.params.bind(&mut g);
    let l = m.forward_subject(&mut g, &p, s).unwrap();
    assert_eq!(g.value(l).shape(), &[1, 2]);
    g.value(l).data().to_vec()
}

#[test]
fn every_kind_produces_two_logits_and_a_probability() {
    let s = SubjectInputs {
        smri: random_volume(1),
        jsm: random_volume(2),
    };
    for kind in FusionKind::ALL {
        let m = FusionModel::new(small(kind), 7).unwrap();
        assert!(logits(&m, &s).iter().all(|x| x.is_finite()), "{kind}");
        let p = m.predict_proba(&s).unwrap();
        assert!((0.0..=1.0).contains(&p), "{kind}");
    }
}

#[test]
fn input_level_with_zero_second_channel_equals_single_modality() {
    let single = FusionModel::new(small(FusionKind::SingleSmri), 11).unwrap();
    let mut ilf = FusionModel::new(small(FusionKind::Ilf), 12).unwrap();
    let names: Vec<String> = ilf.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let src_name = name.replacen("ilf.", "smri.", 1);
        let src = single.params.get(single.params.find(&src_name).unwrap()).clone();
        let dst = ilf.params.by_name_mut(&name).unwrap();
        if dst.shape() == src.shape() {
            *dst = src;
        } else {
            // First conv: [C_out, 2, k, k, k]; channel 0 from the single
            // model, channel 1 left at its random init.
            let k3 = 27;
            for o in 0..dst.shape()[0] {
                dst.data_mut()[o * 2 * k3..o * 2 * k3 + k3].copy_from_slice(&src.data()[o * k3..(o + 1) * k3]);
            }
        }
    }
    let s = SubjectInputs {
        smri: random_volume(3),
        jsm: Tensor::zeros(&[1, 8, 8, 8]),
    };
    let a = logits(&single, &s);
    let b = logits(&ilf, &s);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
    }
}

#[test]
fn modality_projections_are_independent() {
    let mut m = FusionModel::new(small(FusionKind::Cross), 5).unwrap();
    let (xs, xj) = (random_volume(8), random_volume(9));
    let tokens = |m: &FusionModel| {
        let mut g = Graph::new();
        let p = m.params.bind(&mut g);
        let (a, b) = (g.constant(xs.clone()), g.constant(xj.clone()));
        let (ts, tj) = m.encode_pair(&mut g, &p, a, b).unwrap();
        assert_eq!((ts.n, ts.d), (8, 8));
        (g.value(ts.tokens).clone(), g.value(tj.tokens).clone())
    };
    let (s0, j0) = tokens(&m);
    m.params
        .by_name_mut("jsm.proj.weight")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|w| *w += 0.5);
    let (s1, j1) = tokens(&m);
    assert_eq!(s0, s1);
    assert_ne!(j0, j1);
}

#[test]
fn cross_attention_ignores_queries_when_context_is_constant() {
    // Identical key/value tokens give every query the same values.
    let mut store = deformfuse::nn::ParamStore::new();
    let a = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut seeded_rng(4)).unwrap();
    let ctx = Tensor::full(&[5, 8], 0.3);
    let out = |q: Tensor| {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let (cv, qv) = (g.constant(ctx.clone()), g.constant(q));
        let ts = deformfuse::encoder::TokenSequence::from_var(&g, cv).unwrap();
        let tj = deformfuse::encoder::TokenSequence::from_var(&g, qv).unwrap();
        let f = cross_attention_fuse(&mut g, &p, &ts, &tj, &a).unwrap();
        g.value(f.vector).clone()
    };
    let mut rng = seeded_rng(1);
    let q1 = Tensor::new(vec![3, 8], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let q2 = Tensor::new(vec![3, 8], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    assert!(out(q1).max_abs_diff(&out(q2)) < 1e-12);
}

#[test]
fn wrong_input_kind_and_extent() {
    let m = FusionModel::new(small(FusionKind::Cross), 0).unwrap();
    let x = random_volume(0);
    let mut g = Graph::new();
    let p = m.params.bind(&mut g);
    assert!(matches!(
        m.forward(&mut g, &p, ModelInput::Single(&x)),
        Err(Error::Validation(_))
    ));
    let big = Tensor::zeros(&[1, 16, 16, 16]);
    let s = SubjectInputs {
        smri: big.clone(),
        jsm: big,
    };
    assert!(matches!(m.forward_subject(&mut g, &p, &s), Err(Error::Dimension(_))));
}

#[test]
fn same_seed_same_init() {
    for kind in FusionKind::ALL {
        let a = FusionModel::new(small(kind), 3).unwrap();
        let b = FusionModel::new(small(kind), 3).unwrap();
        assert_eq!(a.params.tensors(), b.params.tensors());
    }
}

#[test]
fn cross_attention_weights_are_row_distributions() {
    use deformfuse::selfcheck::tiny_config;
    let m = FusionModel::new(tiny_config(FusionKind::Cross), 2).unwrap();
    let mut rng = seeded_rng(5);
    let mut vol = || {
        Tensor::new(
            vec![1, 8, 8, 8],
            (0..512).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let s = SubjectInputs {
        smri: vol(),
        jsm: vol(),
    };
    let w = m.cross_attention_weights(&s).unwrap();
    assert_eq!(w.len(), 2);
    for h in &w {
        let n = h.shape()[1];
        for row in h.data().chunks(n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let other = FusionModel::new(tiny_config(FusionKind::SelfAttention), 2).unwrap();
    assert!(matches!(other.cross_attention_weights(&s), Err(Error::Validation(_))));
}
