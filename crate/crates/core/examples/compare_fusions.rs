//! Every fusion strategy on the same folds, with parameter counts.
//!
//! cargo run --release --example compare_fusions

use deformfuse::fusion::FusionKind;
use deformfuse::synthgen::{synthetic_dataset, SynthConfig};
use deformfuse::training::{run_cv_with_folds, stratified_kfold, ExperimentConfig, PrepOptions};

fn main() -> deformfuse::Result<()> {
    let synth = SynthConfig {
        n_subjects: 24,
        dim: 16,
        atrophy_sigma: 2.0,
        seed: 5,
        ..SynthConfig::default()
    };
    let data = synthetic_dataset(
        &synth,
        &PrepOptions {
            input_size: 16,
            ..PrepOptions::default()
        },
    )?;
    let folds = stratified_kfold(&data.labels(), 3, 0)?;

    println!("{:<12} {:>10} {:>8}", "fusion", "params", "auc");
    for kind in FusionKind::ALL {
        let mut cfg = ExperimentConfig::new(kind);
        cfg.model.embed = 16;
        cfg.model.heads = 2;
        cfg.epochs = 5;
        cfg.adam.lr = 1e-3;
        let r = run_cv_with_folds(&data, &cfg, &folds)?;
        println!(
            "{:<12} {:>10} {:>8.3}",
            kind.as_str(),
            r.summary.params,
            r.summary.mean_auc
        );
    }
    Ok(())
}
