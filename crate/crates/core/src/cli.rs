//! Command-line front end. Exit codes: 0 success, 1 usage or validation
//! error, 2 I/O or format error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::jacobian::{determinant_map, jacobian_matrix_field, log_jacobian_map, FieldConvention, FieldUnits};
use crate::nn::derive_seed;
use crate::selfcheck::{gradient_suite, GRADCHECK_THRESHOLD};
use crate::synthgen::{generate_dataset, SynthConfig};
use crate::training::{
    run_cv_with_folds, stratified_kfold, write_reports, CsvOptions, CvReport, Dataset, ExperimentConfig, PrepOptions,
};
use crate::volume_io::{read_volume_file, write_rawvol_file, DeformationField, RawDtype};

#[derive(Parser, Debug)]
#[command(
    name = "deformfuse",
    version,
    about = "Deformation-aware multimodal fusion for 3-D volumes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Jacobian-determinant or log-Jacobian map of a deformation field.
    Jacobian(JacobianArgs),
    /// Generate a synthetic paired dataset with a manifest.
    Synth(SynthArgs),
    /// Cross-validate one fusion kind on a manifest.
    Train(TrainArgs),
    /// Finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Cross-validate several fusion kinds on shared folds.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ConventionArg {
    Displacement,
    Total,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum UnitsArg {
    Voxel,
    Mm,
}

#[derive(Args, Debug)]
pub struct JacobianArgs {
    /// Input deformation field (RAWVOL or .nii, 3 channels).
    #[arg(long = "in", value_name = "FIELD")]
    pub input: PathBuf,
    /// Output RAWVOL path.
    #[arg(long, value_name = "MAP")]
    pub out: PathBuf,
    /// Write the folded log-Jacobian map (default).
    #[arg(long, conflicts_with = "det")]
    pub log: bool,
    /// Write the raw determinant map instead.
    #[arg(long)]
    pub det: bool,
    /// Use plain ln(d) instead of the folded log.
    #[arg(long, conflicts_with = "det")]
    pub signed_log: bool,
    /// Displacement u (J = I + grad u) or total map v (J = grad v).
    #[arg(long, value_enum, default_value = "displacement")]
    pub convention: ConventionArg,
    /// Units of the field components.
    #[arg(long, value_enum, default_value = "voxel")]
    pub units: UnitsArg,
    /// Clamp for determinants before the log.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of subjects (labels alternate 0,1).
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Cubic grid extent.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Peak contraction strength for class 1, in [0, 0.5].
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    /// Gaussian radius of the contraction, voxels.
    #[arg(long, default_value_t = 4.0)]
    pub sigma: f64,
    /// Intensity noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CommonTrain {
    /// Manifest CSV: subject_id,label,smri,field.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Attention embedding dimension.
    #[arg(long, default_value_t = 128)]
    pub embed: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Number of bottleneck tokens.
    #[arg(long, default_value_t = 4)]
    pub bottleneck: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the CSVs.
    #[arg(long)]
    pub out: PathBuf,
    /// Task name written into the CSVs.
    #[arg(long, default_value = "binary")]
    pub task: String,
    /// Resample volumes to this cubic extent.
    #[arg(long, default_value_t = 32)]
    pub input_size: usize,
    /// Permute labels before training (null control).
    #[arg(long)]
    pub shuffle_labels: bool,
    /// Fill the seconds column (makes results.csv run-dependent).
    #[arg(long)]
    pub record_time: bool,
    /// Train on the plain ln(d) map instead of the folded log.
    #[arg(long)]
    pub signed_log: bool,
    /// Units of the deformation fields.
    #[arg(long, value_enum, default_value = "voxel")]
    pub units: UnitsArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Fusion kind: cross|self|bottleneck|ilf|ilf-sa|flf|flf-sa|sc|sc-sa|single-smri|single-jsm.
    #[arg(long, default_value = "cross")]
    pub fusion: String,
    #[command(flatten)]
    pub common: CommonTrain,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Comma-separated fusion kinds.
    #[arg(long, default_value = "cross,self,bottleneck,ilf,flf,sc")]
    pub fusions: String,
    #[command(flatten)]
    pub common: CommonTrain,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn flag_err(flag: &str, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("--{flag}: {msg}"))
}

fn run_jacobian(a: &JacobianArgs) -> Result<()> {
    if !(a.eps > 0.0) {
        return Err(flag_err("eps", "must be positive"));
    }
    let vol = read_volume_file(&a.input)?;
    let field = DeformationField::new(vol).map_err(|e| e.with_context(a.input.display()))?;
    let convention = match a.convention {
        ConventionArg::Displacement => FieldConvention::Displacement,
        ConventionArg::Total => FieldConvention::TotalMap,
    };
    let units = match a.units {
        UnitsArg::Voxel => FieldUnits::Voxel,
        UnitsArg::Mm => FieldUnits::Millimeter,
    };
    let j = jacobian_matrix_field(&field, convention, units).map_err(|e| e.with_context(a.input.display()))?;
    let det = determinant_map(&j);
    let out = if a.det {
        det.into_volume()
    } else {
        let (map, stats) = log_jacobian_map(&det, a.eps, a.signed_log)?;
        if stats.clamped > 0 {
            eprintln!(
                "note: {} of {} determinants clamped to {}",
                stats.clamped, stats.total, a.eps
            );
        }
        map.into_volume()
    };
    write_rawvol_file(&a.out, &out, RawDtype::F64)
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_subjects: a.n,
        dim: a.dim,
        atrophy_alpha: a.alpha,
        atrophy_sigma: a.sigma,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    if a.n == 0 {
        return Err(flag_err("n", "must be positive"));
    }
    let recs = generate_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} subjects to {}",
        recs.len(),
        a.out.join("manifest.csv").display()
    );
    Ok(())
}

fn experiment(c: &CommonTrain, kind: FusionKind) -> Result<ExperimentConfig> {
    if !(c.lr > 0.0) {
        return Err(flag_err("lr", "must be positive"));
    }
    if c.batch == 0 {
        return Err(flag_err("batch", "must be positive"));
    }
    if c.folds < 2 {
        return Err(flag_err("folds", "must be at least 2"));
    }
    if c.embed == 0 || c.heads == 0 || !c.embed.is_multiple_of(c.heads) {
        return Err(flag_err(
            "heads",
            format!("--embed {} must be a positive multiple of it", c.embed),
        ));
    }
    if c.bottleneck == 0 {
        return Err(flag_err("bottleneck", "must be positive"));
    }
    let mut cfg = ExperimentConfig::new(kind);
    cfg.adam.lr = c.lr;
    cfg.batch = c.batch;
    cfg.epochs = c.epochs;
    cfg.folds = c.folds;
    cfg.seed = c.seed;
    cfg.task = c.task.clone();
    cfg.model.embed = c.embed;
    cfg.model.heads = c.heads;
    cfg.model.bottleneck_tokens = c.bottleneck;
    cfg.model.encoder.input_size = c.input_size;
    cfg.model
        .encoder
        .validate()
        .map_err(|e| e.with_context("--input-size"))?;
    Ok(cfg)
}

fn load(c: &CommonTrain) -> Result<Dataset> {
    let mut prep = PrepOptions {
        input_size: c.input_size,
        ..PrepOptions::default()
    };
    prep.jsm.signed = c.signed_log;
    prep.jsm.units = match c.units {
        UnitsArg::Voxel => FieldUnits::Voxel,
        UnitsArg::Mm => FieldUnits::Millimeter,
    };
    let data = Dataset::load(&c.manifest, &prep)?;
    Ok(if c.shuffle_labels {
        data.with_shuffled_labels(derive_seed(c.seed, 0x5eed))
    } else {
        data
    })
}

fn run_kinds(c: &CommonTrain, kinds: &[FusionKind]) -> Result<Vec<CvReport>> {
    let cfgs = kinds.iter().map(|&k| experiment(c, k)).collect::<Result<Vec<_>>>()?;
    let data = load(c)?;
    let folds = stratified_kfold(&data.labels(), c.folds, c.seed)?;
    let mut reports = Vec::with_capacity(kinds.len());
    for cfg in &cfgs {
        let r = run_cv_with_folds(&data, cfg, &folds)?;
        for f in &r.folds {
            println!(
                "{} fold {}: auc={:.4} final_loss={:.4}",
                r.kind, f.fold, f.roc_auc, f.final_loss
            );
        }
        reports.push(r);
    }
    let files = write_reports(
        &c.out,
        &reports,
        CsvOptions {
            record_time: c.record_time,
        },
    )?;
    println!("{:<12} {:>8} {:>8} {:>10}", "fusion", "mean", "std", "params");
    for r in &reports {
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>10}",
            r.kind.as_str(),
            r.summary.mean_auc,
            r.summary.std_auc,
            r.summary.params
        );
    }
    println!("wrote {} and {}", files.results.display(), files.summary.display());
    Ok(reports)
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let reports = gradient_suite(a.seed)?;
    let mut ok = true;
    for r in &reports {
        let pass = r.max_rel_error < GRADCHECK_THRESHOLD;
        ok &= pass;
        println!("{} {}", if pass { "PASS" } else { "FAIL" }, r);
    }
    Ok(ok)
}

fn parse_kinds(list: &str) -> Result<Vec<FusionKind>> {
    let kinds = list
        .split(',')
        .map(|s| s.trim().parse::<FusionKind>().map_err(|e| e.with_context("--fusions")))
        .collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(flag_err("fusions", "empty list"));
    }
    Ok(kinds)
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Jacobian(a) => run_jacobian(&a).map(|_| 0),
        Command::Synth(a) => run_synth(&a).map(|_| 0),
        Command::Train(a) => {
            let kind = a.fusion.parse::<FusionKind>().map_err(|e| e.with_context("--fusion"))?;
            run_kinds(&a.common, &[kind]).map(|_| 0)
        }
        Command::Compare(a) => {
            let kinds = parse_kinds(&a.fusions)?;
            run_kinds(&a.common, &kinds).map(|_| 0)
        }
        Command::Gradcheck(a) => run_gradcheck(&a).map(|ok| if ok { 0 } else { 1 }),
    }
}

/// Parses `argv` (program name first) and runs it, returning the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
