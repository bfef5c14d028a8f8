mod common;

use deformfuse::fusion::{FusionKind, FusionModel, ModelConfig};
use deformfuse::metrics::{count_parameters, roc_auc, sample_std};
use deformfuse::nn::{seeded_rng, Linear, ParamStore};
use proptest::prelude::*;

use common::pair_count_auc;

/// Scores on a coarse grid so ties are frequent.
fn scored_set() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=100).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..20).prop_map(|k| k as f64 / 19.0), n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_pair_counting((s, l) in scored_set()) {
        let got = roc_auc(&s, &l).unwrap();
        let want = pair_count_auc(&s, &l);
        prop_assert!((got - want).abs() < 1e-15, "{} vs {}", got, want);
    }

    #[test]
    fn complement_sums_to_one((s, l) in scored_set()) {
        let flipped: Vec<u8> = l.iter().map(|x| 1 - x).collect();
        let a = roc_auc(&s, &l).unwrap() + roc_auc(&s, &flipped).unwrap();
        prop_assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariant_under_increasing_maps((s, l) in scored_set()) {
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() + x * x * x).collect();
        prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&t, &l).unwrap());
    }
}

#[test]
fn hand_case() {
    assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
}

#[test]
fn std_of_folds() {
    let aucs = [0.9, 0.85, 0.95, 0.8, 0.88];
    let m = aucs.iter().sum::<f64>() / 5.0;
    let v = aucs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
    assert!((sample_std(&aucs) - v.sqrt()).abs() < 1e-15);
}

#[test]
fn linear_and_empty_counts() {
    let mut store = ParamStore::new();
    assert_eq!(count_parameters(&store), 0);
    Linear::new(&mut store, "l", 128, 64, &mut seeded_rng(1));
    assert_eq!(count_parameters(&store), 8256);
}

fn count(kind: FusionKind) -> usize {
    count_parameters(&FusionModel::new(ModelConfig::new(kind), 0).unwrap().params)
}

#[test]
fn parameter_orderings() {
    let cross = count(FusionKind::Cross);
    assert_eq!(cross, count(FusionKind::SelfAttention));
    assert!(count(FusionKind::Bottleneck) > cross);
    let ilf = count(FusionKind::Ilf);
    let single = count(FusionKind::SingleSmri);
    assert!(count(FusionKind::Flf) > ilf);
    // Only the extra input channel of the first convolution differs.
    assert_eq!(ilf - single, 8 * 27);
    assert_eq!(single, count(FusionKind::SingleJsm));
    assert!(count(FusionKind::IlfSa) > ilf);
    assert!(count(FusionKind::FlfSa) > count(FusionKind::Flf));
    assert!(count(FusionKind::ScSa) > count(FusionKind::Sc));
}

#[test]
fn closed_form_counts() {
    // Encoder: 3 conv stages 1→8→16→32 with 3³ kernels and biases.
    let enc = (8 * 27 + 8) + (16 * 8 * 27 + 16) + (32 * 16 * 27 + 32);
    let proj = 32 * 128 + 128;
    let mha = 4 * (128 * 128 + 128);
    let head = (128 * 64 + 64) + (64 * 2 + 2);
    assert_eq!(count(FusionKind::Cross), 2 * (enc + proj) + mha + head);
    assert_eq!(
        count(FusionKind::Bottleneck),
        2 * (enc + proj) + 4 * 128 + 2 * mha + head
    );
    assert_eq!(count(FusionKind::SingleSmri), enc + proj + head);
    let head2 = (256 * 128 + 128) + (128 * 2 + 2);
    assert_eq!(count(FusionKind::Flf), 2 * (enc + proj) + head2);
    assert_eq!(count(FusionKind::Sc), 2 * (enc + proj + head));
}
