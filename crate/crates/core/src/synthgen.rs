//! Synthetic paired subjects: a smooth ellipsoid phantom warped by a
//! localized radial contraction whose strength depends on the class.
//!
//! The displacement is `u(x) = −s·exp(−‖x−c‖²/2σ²)·(x−c)`. Its gradient at
//! `c` is `−s·I`, so the determinant there is `(1−s)³`. Class 1 uses
//! `s = α`; class 0 draws `s` uniformly from `[0, α/4]`.

use std::fs;
use std::path::Path;

use rand::RngExt;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded_rng, Rng};
use crate::training::{Dataset, PrepOptions, Subject};
use crate::volume_io::{write_manifest, write_rawvol_file, DeformationField, RawDtype, SubjectRecord, Volume};

/// Region centre as a fraction of the grid extent along x, y, z.
pub const REGION_CENTER_FRACTION: [f64; 3] = [0.375, 0.5, 0.4375];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub dim: usize,
    pub atrophy_alpha: f64,
    /// Gaussian radius of the contraction, voxels.
    pub atrophy_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 200,
            dim: 32,
            atrophy_alpha: 0.25,
            atrophy_sigma: 4.0,
            noise_sigma: 0.05,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.atrophy_alpha) {
            return Err(Error::Validation(format!(
                "atrophy alpha must lie in [0, 0.5], got {}",
                self.atrophy_alpha
            )));
        }
        if self.dim < 8 {
            return Err(Error::Validation(format!("dim must be at least 8, got {}", self.dim)));
        }
        if !(self.atrophy_sigma > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Validation(format!(
                "sigma must be positive and noise non-negative, got {} / {}",
                self.atrophy_sigma, self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn region_center(&self) -> [f64; 3] {
        REGION_CENTER_FRACTION.map(|f| f * self.dim as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSubject {
    pub smri: Volume,
    pub field: DeformationField,
    pub label: u8,
    /// Contraction strength actually applied.
    pub strength: f64,
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Normalized ellipsoidal radius of `p` around `c` with semi-axes `a`.
fn ellip(p: [f64; 3], c: [f64; 3], a: [f64; 3]) -> f64 {
    (0..3).map(|i| ((p[i] - c[i]) / a[i]).powi(2)).sum::<f64>().sqrt()
}

/// Smooth indicator of an ellipsoid, edge width about one voxel.
fn blob(p: [f64; 3], c: [f64; 3], a: [f64; 3]) -> f64 {
    let amin = a.iter().cloned().fold(f64::INFINITY, f64::min);
    logistic((1.0 - ellip(p, c, a)) * amin)
}

fn phantom(cfg: &SynthConfig, rng: &mut Rng) -> Volume {
    let n = cfg.dim;
    let d = n as f64;
    let mid = (d - 1.0) / 2.0;
    let m = [mid; 3];
    let jitter = |rng: &mut Rng| 1.0 + rng.random_range(-0.04..0.04);
    let brain = [0.38 * d * jitter(rng), 0.44 * d * jitter(rng), 0.36 * d * jitter(rng)];
    let inner = brain.map(|a| 0.7 * a);
    let gain = rng.random_range(0.9..1.1);
    let vent = [0.05 * d, 0.12 * d, 0.07 * d];
    let vl = [mid - 0.08 * d, mid, mid];
    let vr = [mid + 0.08 * d, mid, mid];
    let hc = cfg.region_center();
    let hip = [0.08 * d; 3];
    let mut v = Volume::zeros(1, [n; 3]);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as f64, y as f64, z as f64];
                let mut i = 0.6 * blob(p, m, brain) + 0.3 * blob(p, m, inner);
                i *= 1.0 - 0.8 * blob(p, vl, vent).max(blob(p, vr, vent));
                i += 0.25 * blob(p, hc, hip);
                let idx = v.index(0, x, y, z);
                v.data[idx] = gain * i;
            }
        }
    }
    v
}

/// Radial contraction about `c`; zero everywhere when `strength == 0`.
pub fn contraction_field(dims: [usize; 3], c: [f64; 3], strength: f64, sigma: f64) -> DeformationField {
    DeformationField::from_fn(dims, |x, y, z| {
        let r = [x - c[0], y - c[1], z - c[2]];
        let r2 = r.iter().map(|t| t * t).sum::<f64>();
        let w = -strength * (-r2 / (2.0 * sigma * sigma)).exp();
        r.map(|t| w * t)
    })
}

pub fn generate_subject(cfg: &SynthConfig, label: u8, subject_seed: u64) -> Result<SyntheticSubject> {
    cfg.validate()?;
    if label > 1 {
        return Err(Error::Validation(format!("label {label} outside {{0,1}}")));
    }
    let mut rng = seeded_rng(derive_seed(cfg.seed, subject_seed));
    let strength = if label == 1 {
        cfg.atrophy_alpha
    } else {
        rng.random_range(0.0..=cfg.atrophy_alpha / 4.0)
    };
    let base = phantom(cfg, &mut rng);
    let dims = [cfg.dim; 3];
    let field = contraction_field(dims, cfg.region_center(), strength, cfg.atrophy_sigma);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let fv = field.volume();
    let mut smri = Volume::zeros(1, dims);
    for z in 0..cfg.dim {
        for y in 0..cfg.dim {
            for x in 0..cfg.dim {
                let pos = [
                    x as f64 + fv.get(0, x, y, z),
                    y as f64 + fv.get(1, x, y, z),
                    z as f64 + fv.get(2, x, y, z),
                ];
                let i = smri.index(0, x, y, z);
                smri.data[i] = base.sample_trilinear(0, pos) + noise.sample(&mut rng);
            }
        }
    }
    Ok(SyntheticSubject {
        smri,
        field,
        label,
        strength,
    })
}

pub fn subject_id(i: usize) -> String {
    format!("sub-{i:04}")
}

/// Labels alternate `0, 1, 0, 1, …`, so even counts split exactly in half.
pub fn subject_label(i: usize) -> u8 {
    (i % 2) as u8
}

pub fn generate_subjects(cfg: &SynthConfig) -> Result<Vec<(String, SyntheticSubject)>> {
    (0..cfg.n_subjects)
        .map(|i| Ok((subject_id(i), generate_subject(cfg, subject_label(i), i as u64)?)))
        .collect()
}

/// Writes `<id>_smri.rvol`, `<id>_field.rvol` (float32) and `manifest.csv`
/// into `dir`; returns the manifest records.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path) -> Result<Vec<SubjectRecord>> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(cfg.n_subjects);
    for i in 0..cfg.n_subjects {
        let id = subject_id(i);
        let s = generate_subject(cfg, subject_label(i), i as u64)?;
        let smri_path = dir.join(format!("{id}_smri.rvol"));
        let field_path = dir.join(format!("{id}_field.rvol"));
        write_rawvol_file(&smri_path, &s.smri, RawDtype::F32)?;
        write_rawvol_file(&field_path, s.field.volume(), RawDtype::F32)?;
        records.push(SubjectRecord {
            subject_id: id,
            label: s.label,
            smri_path,
            field_path,
        });
    }
    write_manifest(&dir.join("manifest.csv"), &records)?;
    Ok(records)
}

/// In-memory dataset, skipping the file round trip.
pub fn synthetic_dataset(cfg: &SynthConfig, prep: &PrepOptions) -> Result<Dataset> {
    let subjects = generate_subjects(cfg)?
        .into_iter()
        .map(|(id, s)| Subject::prepare(id, s.label, &s.smri, &s.field, prep))
        .collect::<Result<_>>()?;
    Ok(Dataset::new(subjects))
}
