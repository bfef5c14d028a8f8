//! Cross-attention weights of a briefly trained model: how much each sMRI
//! token is attended to by the JSM queries, per head, for one subject of
//! each class.
//!
//! cargo run --release --example attention_weights

use deformfuse::fusion::{FusionKind, FusionModel};
use deformfuse::synthgen::{synthetic_dataset, SynthConfig};
use deformfuse::training::{train_model, ExperimentConfig, PrepOptions, Subject};

fn main() -> deformfuse::Result<()> {
    let synth = SynthConfig {
        n_subjects: 24,
        dim: 16,
        atrophy_sigma: 2.0,
        seed: 11,
        ..SynthConfig::default()
    };
    let data = synthetic_dataset(
        &synth,
        &PrepOptions {
            input_size: 16,
            ..PrepOptions::default()
        },
    )?;

    let mut cfg = ExperimentConfig::new(FusionKind::Cross);
    cfg.model.encoder.input_size = 16;
    cfg.model.embed = 16;
    cfg.model.heads = 2;
    cfg.epochs = 30;
    cfg.adam.lr = 1e-3;
    let mut model = FusionModel::new(cfg.model.clone(), 0)?;
    let train: Vec<&Subject> = data.subjects.iter().collect();
    let losses = train_model(&mut model, &train, &cfg, 0)?;
    println!(
        "trained {} epochs, final loss {:.4}",
        losses.len(),
        losses.last().unwrap()
    );

    for s in &data.subjects[..2] {
        let p = model.predict_proba(&s.inputs)?;
        println!("{} label {} p(class 1) {p:.3}", s.id, s.label);
        for (h, w) in model.cross_attention_weights(&s.inputs)?.iter().enumerate() {
            let [nq, nk] = w.shape().try_into().unwrap();
            // Column means: attention each key token receives on average.
            let recv: Vec<f64> = (0..nk)
                .map(|k| (0..nq).map(|q| w.at(&[q, k])).sum::<f64>() / nq as f64)
                .collect();
            let entropy = -recv.iter().map(|a| a * a.ln()).sum::<f64>();
            let cols: Vec<String> = recv.iter().map(|a| format!("{a:.3}")).collect();
            println!(
                "  head {h}: [{}] entropy {entropy:.3} / {:.3}",
                cols.join(" "),
                (nk as f64).ln()
            );
        }
    }
    Ok(())
}
