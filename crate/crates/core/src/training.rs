//! Adam, stratified k-fold splitting, minibatch training and the
//! cross-validation experiment loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::encoder::{resample_trilinear, volume_tensor};
use crate::error::{Error, Result};
use crate::fusion::{FusionKind, FusionModel, ModelConfig, SubjectInputs};
use crate::jacobian::{jsm_pipeline, JsmOptions};
use crate::metrics::{mean, roc_auc, sample_std};
use crate::nn::{derive_seed, seeded_rng};
use crate::tensor::{Graph, Tensor};
use crate::volume_io::{load_manifest, read_volume_file, DeformationField, Volume};

// Seed streams, so that adding a consumer never perturbs another.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_FOLD: u64 = 0x100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return Err(Error::Dimension(format!(
                "adam: param {i} has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((th, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mh = *mi / c1;
            let vh = *vi / c2;
            *th -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Splits indices into `k` folds, shuffling each class with its own seeded
/// stream and dealing members round-robin. Classes continue the deal where
/// the previous one stopped, so fold sizes differ by at most one as well.
///
/// When `k` exceeds a class's size some folds simply lack that class; a
/// warning is printed and the split proceeds.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Validation(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Validation(format!("{k} folds for {} samples", labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Validation(format!("label {l} outside {{0,1}}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::Validation(format!("class {class} has no members")));
        }
        if members.len() < k {
            eprintln!(
                "warning: class {class} has {} members for {k} folds; some folds lack it",
                members.len()
            );
        }
        members.shuffle(&mut seeded_rng(derive_seed(seed, class as u64)));
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

// ---------------------------------------------------------------- data

/// A preprocessed subject ready for the models.
#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub label: u8,
    pub inputs: SubjectInputs,
}

/// Preprocessing applied when turning raw volumes into model inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrepOptions {
    pub jsm: JsmOptions,
    /// Cubic extent the volumes are resampled to.
    pub input_size: usize,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self {
            jsm: JsmOptions::default(),
            input_size: 32,
        }
    }
}

impl Subject {
    /// Computes the log-Jacobian map, resamples both volumes to the input
    /// size and scales the intensity volume to unit max magnitude.
    pub fn prepare(
        id: impl Into<String>,
        label: u8,
        smri: &Volume,
        field: &DeformationField,
        opts: &PrepOptions,
    ) -> Result<Self> {
        let id = id.into();
        if label > 1 {
            return Err(Error::Validation(format!(
                "subject {id}: label {label} outside {{0,1}}"
            )));
        }
        if smri.channels != 1 {
            return Err(Error::Dimension(format!(
                "subject {id}: intensity volume has {} channels",
                smri.channels
            )));
        }
        let (jsm, _) = jsm_pipeline(field, &opts.jsm)?;
        let s = opts.input_size;
        let fit = |v: &Volume| {
            if v.dims == [s, s, s] {
                v.clone()
            } else {
                resample_trilinear(v, [s, s, s])
            }
        };
        let mut smri_t = volume_tensor(&fit(smri));
        let peak = smri_t.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak > 0.0 {
            smri_t.data_mut().iter_mut().for_each(|x| *x /= peak);
        }
        let jsm_t = volume_tensor(&fit(jsm.volume()));
        Ok(Self {
            id,
            label,
            inputs: SubjectInputs {
                smri: smri_t,
                jsm: jsm_t,
            },
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>) -> Self {
        Self { subjects }
    }

    /// Loads and preprocesses every subject listed in a manifest.
    pub fn load(manifest: &Path, opts: &PrepOptions) -> Result<Self> {
        let records = load_manifest(manifest)?;
        let mut subjects = Vec::with_capacity(records.len());
        for r in records {
            let smri = read_volume_file(&r.smri_path)?;
            let field = DeformationField::new(read_volume_file(&r.field_path)?)
                .map_err(|e| e.with_context(r.field_path.display()))?;
            subjects.push(Subject::prepare(r.subject_id, r.label, &smri, &field, opts)?);
        }
        Ok(Self { subjects })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    /// Permutes labels across subjects (null-distribution control).
    pub fn with_shuffled_labels(&self, seed: u64) -> Self {
        let mut labels = self.labels();
        labels.shuffle(&mut seeded_rng(seed));
        let mut out = self.clone();
        for (s, l) in out.subjects.iter_mut().zip(labels) {
            s.label = l;
        }
        out
    }

    pub fn input_size(&self) -> Option<usize> {
        self.subjects.first().map(|s| s.inputs.smri.shape()[1])
    }
}

// ---------------------------------------------------------------- training

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    /// Free-form name of the binary task, echoed into the CSVs.
    pub task: String,
}

impl ExperimentConfig {
    pub fn new(kind: FusionKind) -> Self {
        Self {
            model: ModelConfig::new(kind),
            adam: AdamConfig::default(),
            batch: 16,
            epochs: 20,
            folds: 5,
            seed: 0,
            task: "binary".into(),
        }
    }

    pub fn kind(&self) -> FusionKind {
        self.model.kind
    }
}

/// Loss and gradients for one subject.
fn subject_grads(model: &FusionModel, s: &Subject) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let logits = model.forward_subject(&mut g, &p, &s.inputs)?;
    let loss = g.cross_entropy(logits, &[s.label as usize])?;
    let l = g.value(loss).item();
    let grads = g.backward(loss)?;
    Ok((l, p.vars().iter().map(|&v| grads.get(&g, v)).collect()))
}

/// Trains in place; returns the mean training loss of each epoch.
///
/// Per-subject gradients may be computed concurrently but are summed in
/// subject order, so the result does not depend on the thread count.
pub fn train_model(model: &mut FusionModel, train: &[&Subject], cfg: &ExperimentConfig, seed: u64) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let pos = train.iter().filter(|s| s.label == 1).count();
    if pos == 0 || pos == train.len() {
        return Err(Error::Validation("training set contains a single class".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Validation("batch size must be positive".into()));
    }
    let mut state = AdamState::new(model.params.tensors());
    let mut rng = seeded_rng(derive_seed(seed, STREAM_SHUFFLE));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let m = &*model;
            let per: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&i| subject_grads(m, train[i]))
                .collect::<Result<_>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut sum: Vec<Tensor> = model
                .params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for (l, gs) in &per {
                epoch_loss += l;
                for (acc, g) in sum.iter_mut().zip(gs) {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
            }
            sum.iter_mut()
                .for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= inv));
            adam_step(model.params.tensors_mut(), &sum, &mut state, &cfg.adam)?;
        }
        let l = epoch_loss / train.len() as f64;
        if !l.is_finite() {
            return Err(Error::Numeric(format!("training loss became {l}")));
        }
        trace.push(l);
    }
    Ok(trace)
}

// ---------------------------------------------------------------- CV

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub predictions: Vec<Prediction>,
    pub roc_auc: f64,
    /// Mean loss of the last epoch (NaN when `epochs == 0`).
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvSummary {
    pub mean_auc: f64,
    pub std_auc: f64,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub kind: FusionKind,
    pub task: String,
    pub folds: Vec<FoldResult>,
    pub summary: CvSummary,
}

pub fn run_cv_experiment(data: &Dataset, cfg: &ExperimentConfig) -> Result<CvReport> {
    let folds = stratified_kfold(&data.labels(), cfg.folds, cfg.seed)?;
    run_cv_with_folds(data, cfg, &folds)
}

/// Cross-validation over caller-supplied folds (shared across kinds when
/// comparing).
pub fn run_cv_with_folds(data: &Dataset, cfg: &ExperimentConfig, folds: &[Vec<usize>]) -> Result<CvReport> {
    let mut mcfg = cfg.model.clone();
    if let Some(s) = data.input_size() {
        mcfg.encoder.input_size = s;
    }
    let mut results = Vec::with_capacity(folds.len());
    let mut params = 0;
    for (f, test) in folds.iter().enumerate() {
        let start = Instant::now();
        let fold_seed = derive_seed(cfg.seed, STREAM_FOLD + f as u64);
        let mut model = FusionModel::new(mcfg.clone(), derive_seed(fold_seed, STREAM_INIT))?;
        params = model.num_params();
        let mut in_test = vec![false; data.len()];
        test.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<&Subject> = (0..data.len())
            .filter(|&i| !in_test[i])
            .map(|i| &data.subjects[i])
            .collect();
        let trace = train_model(&mut model, &train, cfg, fold_seed)?;
        let predictions = test
            .par_iter()
            .map(|&i| {
                let s = &data.subjects[i];
                Ok(Prediction {
                    id: s.id.clone(),
                    score: model.predict_proba(&s.inputs)?,
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
        let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
        results.push(FoldResult {
            fold: f,
            roc_auc: roc_auc(&scores, &labels)?,
            final_loss: trace.last().copied().unwrap_or(f64::NAN),
            loss_trace: trace,
            predictions,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let aucs: Vec<f64> = results.iter().map(|r| r.roc_auc).collect();
    Ok(CvReport {
        kind: cfg.kind(),
        task: cfg.task.clone(),
        summary: CvSummary {
            mean_auc: mean(&aucs),
            std_auc: sample_std(&aucs),
            params,
        },
        folds: results,
    })
}

// ---------------------------------------------------------------- output

/// Controls what goes into the CSVs.
#[derive(Clone, Copy, Debug, Default)]
pub struct CsvOptions {
    /// Fill the `seconds` column. Off by default so reruns are byte-identical.
    pub record_time: bool,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Paths of the files written by [`write_reports`].
#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub predictions: PathBuf,
    pub losses: PathBuf,
}

/// Writes `results.csv` (one row per fold), `summary.csv` (one row per
/// kind), `predictions.csv` and `losses.csv` into `dir`.
pub fn write_reports(dir: &Path, reports: &[CvReport], opts: CsvOptions) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        results: dir.join("results.csv"),
        summary: dir.join("summary.csv"),
        predictions: dir.join("predictions.csv"),
        losses: dir.join("losses.csv"),
    };

    let p = &files.results;
    let mut w = csv_writer(p)?;
    w.write_record(["fusion", "task", "fold", "auc", "final_loss", "seconds"])
        .map_err(csv_err(p))?;
    for r in reports {
        for f in &r.folds {
            let secs = if opts.record_time {
                format!("{:.3}", f.seconds)
            } else {
                String::new()
            };
            w.write_record([
                r.kind.to_string(),
                r.task.clone(),
                f.fold.to_string(),
                f.roc_auc.to_string(),
                f.final_loss.to_string(),
                secs,
            ])
            .map_err(csv_err(p))?;
        }
    }
    w.flush().map_err(|e| Error::io(p, e))?;

    let p = &files.summary;
    let mut w = csv_writer(p)?;
    w.write_record(["fusion", "task", "mean_auc", "std_auc", "params"])
        .map_err(csv_err(p))?;
    for r in reports {
        w.write_record([
            r.kind.to_string(),
            r.task.clone(),
            r.summary.mean_auc.to_string(),
            r.summary.std_auc.to_string(),
            r.summary.params.to_string(),
        ])
        .map_err(csv_err(p))?;
    }
    w.flush().map_err(|e| Error::io(p, e))?;

    let p = &files.predictions;
    let mut w = csv_writer(p)?;
    w.write_record(["fusion", "fold", "subject_id", "label", "score"])
        .map_err(csv_err(p))?;
    for r in reports {
        for f in &r.folds {
            for pr in &f.predictions {
                w.write_record([
                    r.kind.to_string(),
                    f.fold.to_string(),
                    pr.id.clone(),
                    pr.label.to_string(),
                    pr.score.to_string(),
                ])
                .map_err(csv_err(p))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(p, e))?;

    let p = &files.losses;
    let mut w = csv_writer(p)?;
    w.write_record(["fusion", "fold", "epoch", "loss"])
        .map_err(csv_err(p))?;
    for r in reports {
        for f in &r.folds {
            for (e, l) in f.loss_trace.iter().enumerate() {
                w.write_record([r.kind.to_string(), f.fold.to_string(), e.to_string(), l.to_string()])
                    .map_err(csv_err(p))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(p, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = vec![Tensor::scalar(0.5)];
        let g = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        let want = 0.5 - 1e-4 / (1.0 + 1e-8);
        assert!((p[0].item() - want).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![Tensor::full(&[3], 2.0)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].data(), &[2.0; 3]);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[2])], &mut st, &AdamConfig::default()).is_err());
    }

    #[test]
    fn kfold_six_four() {
        let labels = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let folds = stratified_kfold(&labels, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let pos: Vec<usize> = folds
            .iter()
            .map(|f| f.iter().filter(|&&i| labels[i] == 1).count())
            .collect();
        assert!(pos.iter().all(|&c| c <= 1));
        assert_eq!(pos.iter().filter(|&&c| c == 1).count(), 4);
    }

    #[test]
    fn kfold_rejects_bad_k() {
        assert!(stratified_kfold(&[0, 1, 0, 1], 1, 0).is_err());
        assert!(stratified_kfold(&[0, 1], 3, 0).is_err());
        assert!(stratified_kfold(&[1, 1, 1], 2, 0).is_err());
    }
}
