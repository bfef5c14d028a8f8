//! Cross-validated cross-attention fusion on a small in-memory cohort.
//!
//! cargo run --release --example train_cross

use deformfuse::fusion::FusionKind;
use deformfuse::synthgen::{synthetic_dataset, SynthConfig};
use deformfuse::training::{run_cv_experiment, ExperimentConfig, PrepOptions};

fn main() -> deformfuse::Result<()> {
    let synth = SynthConfig {
        n_subjects: 40,
        dim: 16,
        atrophy_sigma: 2.0,
        seed: 3,
        ..SynthConfig::default()
    };
    let data = synthetic_dataset(
        &synth,
        &PrepOptions {
            input_size: 16,
            ..PrepOptions::default()
        },
    )?;

    // Narrower than the defaults so this finishes in seconds.
    let mut cfg = ExperimentConfig::new(FusionKind::Cross);
    cfg.model.embed = 32;
    cfg.epochs = 15;
    cfg.adam.lr = 1e-3;

    let report = run_cv_experiment(&data, &cfg)?;
    for f in &report.folds {
        println!("fold {}: auc {:.3}, final loss {:.4}", f.fold, f.roc_auc, f.final_loss);
    }
    println!(
        "mean auc {:.3} ± {:.3}, {} parameters",
        report.summary.mean_auc, report.summary.std_auc, report.summary.params
    );
    Ok(())
}
