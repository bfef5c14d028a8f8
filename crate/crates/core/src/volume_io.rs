//! Volume containers, a minimal NIfTI-1 reader, the RAWVOL interchange
//! format, and the subject manifest.
//!
//! RAWVOL layout (all little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "RVOL"
//!      4     4  u32 version (1)
//!      8     4  u32 dtype (0 = f32, 1 = f64)
//!     12     4  u32 channels
//!     16    12  u32 nx, ny, nz
//!     28    12  f32 sx, sy, sz
//!     40     -  samples, [c][z][y][x] with x fastest
//! ```

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Dense scalar grid with a channel axis, indexed `[c][z][y][x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub channels: usize,
    /// `(nx, ny, nz)`.
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(channels: usize, dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if channels == 0 || dims.contains(&0) {
            return Err(Error::Validation(format!(
                "volume extents must be positive: channels={channels}, dims={dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation(format!("spacing must be positive, got {spacing:?}")));
        }
        let n = channels * dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::Validation(format!(
                "volume {channels}×{dims:?} needs {n} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            dims,
            spacing,
            data,
        })
    }

    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        let n = channels * dims.iter().product::<usize>();
        Self {
            channels,
            dims,
            spacing: [1.0; 3],
            data: vec![0.0; n],
        }
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        let [nx, ny, nz] = self.dims;
        ((c * nz + z) * ny + y) * nx + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(c, x, y, z)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Trilinear interpolation at a continuous voxel position, replicating
    /// the border outside the grid.
    pub fn sample_trilinear(&self, c: usize, pos: [f64; 3]) -> f64 {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f64;
            let p = pos[a].clamp(0.0, max);
            let f = p.floor();
            lo[a] = f as usize;
            hi[a] = (lo[a] + 1).min(self.dims[a] - 1);
            frac[a] = p - f;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let pick = |a: usize| {
                if corner >> a & 1 == 1 {
                    (hi[a], frac[a])
                } else {
                    (lo[a], 1.0 - frac[a])
                }
            };
            let (x, wx) = pick(0);
            let (y, wy) = pick(1);
            let (z, wz) = pick(2);
            let w = wx * wy * wz;
            if w != 0.0 {
                acc += w * self.get(c, x, y, z);
            }
        }
        acc
    }
}

/// A three-channel volume of displacement components (x, y, z) in voxel
/// units, or millimetres when stated by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField(Volume);

impl DeformationField {
    pub fn new(v: Volume) -> Result<Self> {
        if v.channels != 3 {
            return Err(Error::Validation(format!(
                "deformation field needs 3 channels, got {}",
                v.channels
            )));
        }
        if v.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("deformation field contains non-finite entries".into()));
        }
        Ok(Self(v))
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self(Volume::zeros(3, dims))
    }

    /// Samples `u(x, y, z)` for every voxel.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(f64, f64, f64) -> [f64; 3]) -> Self {
        let mut v = Volume::zeros(3, dims);
        let [nx, ny, nz] = dims;
        let n = v.voxels();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let u = f(x as f64, y as f64, z as f64);
                    let i = (z * ny + y) * nx + x;
                    for (c, uc) in u.iter().enumerate() {
                        v.data[c * n + i] = *uc;
                    }
                }
            }
        }
        Self(v)
    }

    pub fn volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0.dims
    }
}

// ---------------------------------------------------------------- NIfTI-1

const NIFTI_HEADER_LEN: usize = 348;
const NIFTI_MIN_LEN: usize = 352;

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn le_u32(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

/// Parses a little-endian single-file NIfTI-1 image (`n+1`) holding 32- or
/// 64-bit floats. Orientation (qform/sform) is ignored.
pub fn read_nifti(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < NIFTI_MIN_LEN {
        return Err(Error::Length(format!(
            "NIfTI stream has {} bytes, need at least {NIFTI_MIN_LEN}",
            bytes.len()
        )));
    }
    let sizeof_hdr = le_i32(bytes, 0);
    if sizeof_hdr != NIFTI_HEADER_LEN as i32 {
        if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == NIFTI_HEADER_LEN as i32 {
            return Err(Error::Unsupported("big-endian NIfTI".into()));
        }
        return Err(Error::Format(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => return Err(Error::Format("two-file NIfTI (ni1) is not supported".into())),
        m => return Err(Error::Format(format!("bad NIfTI magic {m:?}"))),
    }
    let ndim = le_i16(bytes, 40);
    if !(ndim == 3 || ndim == 4) {
        return Err(Error::Unsupported(format!("dim[0] = {ndim}, only 3-D or 4-D images")));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let v = le_i16(bytes, 42 + 2 * a);
        if v < 1 {
            return Err(Error::Format(format!("dim[{}] = {v}", a + 1)));
        }
        *d = v as usize;
    }
    let channels = if ndim == 4 {
        let t = le_i16(bytes, 48);
        if t < 1 {
            return Err(Error::Format(format!("dim[4] = {t}")));
        }
        t as usize
    } else {
        1
    };
    let datatype = le_i16(bytes, 70);
    let elem = match datatype {
        16 => 4,
        64 => 8,
        other => return Err(Error::Unsupported(format!("NIfTI datatype {other}"))),
    };
    let mut spacing = [1.0; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let p = le_f32(bytes, 80 + 4 * a).abs() as f64;
        if p > 0.0 && p.is_finite() {
            *s = p;
        }
    }
    let vox_offset = le_f32(bytes, 108);
    if !(vox_offset >= NIFTI_MIN_LEN as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::Format(format!("vox_offset {vox_offset} is invalid")));
    }
    let start = vox_offset as usize;
    let n = channels * dims.iter().product::<usize>();
    let end = start + n * elem;
    if bytes.len() < end {
        return Err(Error::Length(format!(
            "NIfTI body needs {end} bytes, stream has {}",
            bytes.len()
        )));
    }
    let body = &bytes[start..end];
    let mut data: Vec<f64> = if elem == 4 {
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    } else {
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let slope = le_f32(bytes, 112) as f64;
    let inter = le_f32(bytes, 116) as f64;
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        data.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    Volume::new(channels, dims, spacing, data)
}

// ---------------------------------------------------------------- RAWVOL

pub const RAWVOL_MAGIC: &[u8; 4] = b"RVOL";
pub const RAWVOL_VERSION: u32 = 1;
pub const RAWVOL_HEADER_LEN: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawDtype {
    F32,
    F64,
}

impl RawDtype {
    fn code(self) -> u32 {
        match self {
            RawDtype::F32 => 0,
            RawDtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            RawDtype::F32 => 4,
            RawDtype::F64 => 8,
        }
    }
}

/// Serializes `v`. Samples are narrowed to `f32` when `dtype` is `F32`.
pub fn write_rawvol<W: Write>(v: &Volume, dtype: RawDtype, mut sink: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(RAWVOL_HEADER_LEN + v.data.len() * dtype.size());
    buf.extend_from_slice(RAWVOL_MAGIC);
    for x in [
        RAWVOL_VERSION,
        dtype.code(),
        v.channels as u32,
        v.dims[0] as u32,
        v.dims[1] as u32,
        v.dims[2] as u32,
    ] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for s in v.spacing {
        buf.extend_from_slice(&(s as f32).to_le_bytes());
    }
    match dtype {
        RawDtype::F32 => v
            .data
            .iter()
            .for_each(|&x| buf.extend_from_slice(&(x as f32).to_le_bytes())),
        RawDtype::F64 => v.data.iter().for_each(|&x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    sink.write_all(&buf)
}

pub fn read_rawvol(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < RAWVOL_HEADER_LEN {
        return Err(Error::Length(format!(
            "RAWVOL stream has {} bytes, header needs {RAWVOL_HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != RAWVOL_MAGIC {
        return Err(Error::Format(format!("bad RAWVOL magic {:?}", &bytes[0..4])));
    }
    let version = le_u32(bytes, 4);
    if version != RAWVOL_VERSION {
        return Err(Error::Format(format!("unsupported RAWVOL version {version}")));
    }
    let dtype = match le_u32(bytes, 8) {
        0 => RawDtype::F32,
        1 => RawDtype::F64,
        other => return Err(Error::Format(format!("unknown RAWVOL dtype {other}"))),
    };
    let channels = le_u32(bytes, 12) as usize;
    let dims = [
        le_u32(bytes, 16) as usize,
        le_u32(bytes, 20) as usize,
        le_u32(bytes, 24) as usize,
    ];
    let spacing = [
        le_f32(bytes, 28) as f64,
        le_f32(bytes, 32) as f64,
        le_f32(bytes, 36) as f64,
    ];
    if channels == 0 || dims.contains(&0) {
        return Err(Error::Format(format!(
            "RAWVOL header has empty extents {channels}×{dims:?}"
        )));
    }
    let n = channels * dims.iter().product::<usize>();
    let expected = RAWVOL_HEADER_LEN + n * dtype.size();
    if bytes.len() != expected {
        return Err(Error::Length(format!(
            "RAWVOL header declares {expected} bytes, stream has {}",
            bytes.len()
        )));
    }
    let body = &bytes[RAWVOL_HEADER_LEN..];
    let data = match dtype {
        RawDtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        RawDtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Volume::new(channels, dims, spacing, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_rawvol_file(path: &Path, v: &Volume, dtype: RawDtype) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_rawvol(v, dtype, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Reads a volume file, choosing the parser by extension (`.nii` → NIfTI,
/// anything else → RAWVOL).
pub fn read_volume_file(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "nii") {
        read_nifti(&bytes)
    } else {
        read_rawvol(&bytes)
    };
    parsed.map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Length(m) => Error::Length(format!("{}: {m}", path.display())),
        Error::Unsupported(m) => Error::Unsupported(format!("{}: {m}", path.display())),
        other => other,
    })
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: u8,
    pub smri_path: PathBuf,
    pub field_path: PathBuf,
}

pub const MANIFEST_HEADER: [&str; 4] = ["subject_id", "label", "smri", "field"];

/// Reads a `subject_id,label,smri,field` CSV. Relative paths resolve against
/// the manifest's directory; referenced files are not opened here.
pub fn load_manifest(path: &Path) -> Result<Vec<SubjectRecord>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Validation(format!(
            "manifest {} header must be `{}`, got `{}`",
            path.display(),
            MANIFEST_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let id = row[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate subject_id {id} in {}",
                path.display()
            )));
        }
        let label = match &row[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Validation(format!(
                    "subject {id}: label {other:?} outside {{0,1}}"
                )))
            }
        };
        records.push(SubjectRecord {
            subject_id: id,
            label,
            smri_path: base.join(&row[2]),
            field_path: base.join(&row[3]),
        });
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[SubjectRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
    let mut write = || -> std::result::Result<(), csv::Error> {
        w.write_record(MANIFEST_HEADER)?;
        for r in records {
            w.write_record([
                r.subject_id.clone(),
                r.label.to_string(),
                rel(&r.smri_path),
                rel(&r.field_path),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros_222() -> Volume {
        Volume::zeros(1, [2, 2, 2])
    }

    #[test]
    fn rawvol_length_for_small_zero_volume() {
        let mut buf = Vec::new();
        write_rawvol(&zeros_222(), RawDtype::F32, &mut buf).unwrap();
        // 40-byte header + 8 voxels × 4 bytes.
        assert_eq!(buf.len(), 72);
        let mut buf64 = Vec::new();
        write_rawvol(&zeros_222(), RawDtype::F64, &mut buf64).unwrap();
        assert_eq!(buf64.len(), 40 + 64);
    }

    #[test]
    fn rawvol_errors() {
        let mut buf = Vec::new();
        write_rawvol(&zeros_222(), RawDtype::F32, &mut buf).unwrap();
        assert!(matches!(read_rawvol(&buf[..buf.len() - 1]), Err(Error::Length(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_rawvol(&extra), Err(Error::Length(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_rawvol(&bad), Err(Error::Format(_))));
        let mut badv = buf.clone();
        badv[4] = 2;
        assert!(matches!(read_rawvol(&badv), Err(Error::Format(_))));
        assert_eq!(read_rawvol(&buf).unwrap(), zeros_222());
    }

    #[test]
    fn trilinear_midpoint() {
        let v = Volume::new(1, [2, 1, 1], [1.0; 3], vec![0.0, 2.0]).unwrap();
        assert_eq!(v.sample_trilinear(0, [0.5, 0.0, 0.0]), 1.0);
        assert_eq!(v.sample_trilinear(0, [5.0, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn volume_rejects_bad_spacing() {
        assert!(Volume::new(1, [1, 1, 1], [1.0, 0.0, 1.0], vec![0.0]).is_err());
    }
}
