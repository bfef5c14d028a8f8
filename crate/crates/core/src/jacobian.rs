//! Jacobian matrix, determinant, and log-Jacobian maps of deformation fields.

use crate::error::{dim_err, Error, Result};
use crate::volume_io::{DeformationField, Volume};

/// How the field's vectors relate to the spatial transformation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FieldConvention {
    /// Vectors are displacements `u`; the transformation is `x ↦ x + u(x)`
    /// and its gradient is `I + ∇u`.
    #[default]
    Displacement,
    /// Vectors are the mapped coordinates themselves; the gradient is `∇v`.
    TotalMap,
}

/// Units of the stored vectors. Derivatives are always taken per voxel in
/// `Voxel` mode and per millimetre in `Millimeter` mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FieldUnits {
    #[default]
    Voxel,
    Millimeter,
}

/// Per-voxel 3×3 gradient, stored as a 9-channel volume in row-major order:
/// channel `3·r + c` holds `∂v_r/∂x_c` with axes ordered x, y, z.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianField(Volume);

impl JacobianField {
    pub fn volume(&self) -> &Volume {
        &self.0
    }

    pub fn matrix_at(&self, x: usize, y: usize, z: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.0.get(3 * r + c, x, y, z);
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianDeterminantMap(Volume);

impl JacobianDeterminantMap {
    pub fn volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Position `(x, y, z)` of the smallest determinant (first in scan order).
    pub fn argmin(&self) -> [usize; 3] {
        let (i, _) = self.0.data.iter().enumerate().fold(
            (0, f64::INFINITY),
            |best, (i, &v)| if v < best.1 { (i, v) } else { best },
        );
        let [nx, ny, _] = self.0.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogJacobianMap(Volume);

impl LogJacobianMap {
    pub fn volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }
}

/// Gradient of the field by central differences at interior voxels and
/// first-order one-sided differences on the boundary.
pub fn jacobian_matrix_field(
    field: &DeformationField,
    convention: FieldConvention,
    units: FieldUnits,
) -> Result<JacobianField> {
    let v = field.volume();
    let [nx, ny, nz] = v.dims;
    if nx < 3 || ny < 3 || nz < 3 {
        return dim_err(format!("Jacobian needs at least 3 voxels per axis, got {:?}", v.dims));
    }
    let step = match units {
        FieldUnits::Voxel => [1.0; 3],
        FieldUnits::Millimeter => v.spacing,
    };
    let extents = [nx, ny, nz];
    let strides = [1, nx, nx * ny];
    let n = v.voxels();
    let mut out = Volume::zeros(9, v.dims);
    out.spacing = v.spacing;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let pos = [x, y, z];
                let i = (z * ny + y) * nx + x;
                for comp in 0..3 {
                    let f = v.channel(comp);
                    for axis in 0..3 {
                        let (p, e, s) = (pos[axis], extents[axis], strides[axis]);
                        let diff = if p == 0 {
                            f[i + s] - f[i]
                        } else if p == e - 1 {
                            f[i] - f[i - s]
                        } else {
                            0.5 * (f[i + s] - f[i - s])
                        };
                        let mut d = diff / step[axis];
                        if convention == FieldConvention::Displacement && comp == axis {
                            d += 1.0;
                        }
                        out.data[(3 * comp + axis) * n + i] = d;
                    }
                }
            }
        }
    }
    if out.data.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite Jacobian entry".into()));
    }
    Ok(JacobianField(out))
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn determinant_map(j: &JacobianField) -> JacobianDeterminantMap {
    let v = j.volume();
    let n = v.voxels();
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let e = |k: usize| v.data[k * n + i];
        let m = [[e(0), e(1), e(2)], [e(3), e(4), e(5)], [e(6), e(7), e(8)]];
        data.push(det3(&m));
    }
    JacobianDeterminantMap(Volume::new(1, v.dims, v.spacing, data).expect("same grid"))
}

/// Symmetrized log of a single determinant: `ln d` for `d ≥ 1`, `ln(1/d)`
/// below 1. `d` is first clamped to `eps`.
pub fn folded_log(d: f64, eps: f64) -> f64 {
    let d = d.max(eps);
    if d >= 1.0 {
        d.ln()
    } else {
        (1.0 / d).ln()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClampStats {
    /// Voxels whose determinant was below `eps` (folding or collapse).
    pub clamped: usize,
    pub total: usize,
}

/// Log-Jacobian map. `signed` keeps `ln d` (negative under contraction)
/// instead of folding both directions onto non-negative values.
pub fn log_jacobian_map(det: &JacobianDeterminantMap, eps: f64, signed: bool) -> Result<(LogJacobianMap, ClampStats)> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!("eps must be positive, got {eps}")));
    }
    let v = det.volume();
    let mut clamped = 0;
    let data = v
        .data
        .iter()
        .map(|&d| {
            if !(d >= eps) {
                clamped += 1;
            }
            if signed {
                d.max(eps).ln()
            } else {
                folded_log(d, eps)
            }
        })
        .collect();
    let stats = ClampStats {
        clamped,
        total: v.data.len(),
    };
    Ok((LogJacobianMap(Volume::new(1, v.dims, v.spacing, data)?), stats))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JsmOptions {
    pub convention: FieldConvention,
    pub units: FieldUnits,
    pub eps: f64,
    pub signed: bool,
}

impl Default for JsmOptions {
    fn default() -> Self {
        Self {
            convention: FieldConvention::Displacement,
            units: FieldUnits::Voxel,
            eps: 1e-6,
            signed: false,
        }
    }
}

/// Field → Jacobian → determinant → log map.
pub fn jsm_pipeline(field: &DeformationField, opts: &JsmOptions) -> Result<(LogJacobianMap, ClampStats)> {
    let j = jacobian_matrix_field(field, opts.convention, opts.units)?;
    log_jacobian_map(&determinant_map(&j), opts.eps, opts.signed)
}
