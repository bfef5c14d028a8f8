//! Raw slice kernels. Summation order is fixed so results are bit-reproducible.

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ` (row dot products).
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(arow, brow);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// Four-lane accumulation keeps the loop vectorizable while staying
/// deterministic.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y[m×n] += a[m×k] · b[k×n]` on strided row-major views (`ld*` are row
/// strides). Register-blocked over 4 rows × 8 columns; the summation order
/// over `k` is sequential for every entry.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc(a: &[f64], lda: usize, b: &[f64], ldb: usize, m: usize, k: usize, n: usize, y: &mut [f64], ldy: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let mut j = 0;
        while j + 8 <= n {
            let mut acc = [[0.0f64; 8]; 4];
            for p in 0..k {
                let bv: &[f64; 8] = b[p * ldb + j..p * ldb + j + 8].try_into().unwrap();
                let s = [
                    a[i * lda + p],
                    a[(i + 1) * lda + p],
                    a[(i + 2) * lda + p],
                    a[(i + 3) * lda + p],
                ];
                for r in 0..4 {
                    for l in 0..8 {
                        acc[r][l] += s[r] * bv[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                for (o, v) in y[(i + r) * ldy + j..][..8].iter_mut().zip(row) {
                    *o += v;
                }
            }
            j += 8;
        }
        for r in i..i + 4 {
            for j in j..n {
                y[r * ldy + j] += gemm_entry(a, lda, b, ldb, k, r, j);
            }
        }
        i += 4;
    }
    for r in i..m {
        for j in 0..n {
            y[r * ldy + j] += gemm_entry(a, lda, b, ldb, k, r, j);
        }
    }
}

fn gemm_entry(a: &[f64], lda: usize, b: &[f64], ldb: usize, k: usize, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for p in 0..k {
        acc += a[i * lda + p] * b[p * ldb + j];
    }
    acc
}

fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(channels: usize, input: [usize; 3], kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * pad;
            if span < kernel || stride == 0 {
                return None;
            }
            output[a] = (span - kernel) / stride + 1;
        }
        Some(Self {
            channels,
            input,
            output,
            kernel,
            stride,
            pad,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel.pow(3)
    }

    pub fn out_voxels(&self) -> usize {
        self.output.iter().product()
    }
}

/// Output voxels per im2col tile; tiles always hold whole output rows.
const TILE_VOXELS: usize = 256;

impl ConvGeometry {
    fn rows_per_tile(&self) -> usize {
        (TILE_VOXELS / self.output[2]).max(1)
    }

    fn out_rows(&self) -> usize {
        self.output[0] * self.output[1]
    }
}

/// Output columns `lo..hi` whose stride-1 source index `ox + shift` lies in
/// `0..w`.
fn valid_span(shift: isize, ow: usize, w: usize) -> (usize, usize) {
    let lo = (-shift).clamp(0, ow as isize) as usize;
    let hi = (w as isize - shift).clamp(lo as isize, ow as isize) as usize;
    (lo, hi)
}

/// Unfolds output rows `row0..row0+nrows` of `x[C×D×H×W]` into a
/// `(C·k³) × (nrows·W')` patch tile, zero where the window hits padding.
fn fill_cols(x: &[f64], g: &ConvGeometry, row0: usize, nrows: usize, cols: &mut [f64]) {
    let [d, h, w] = g.input;
    let [_, oh, ow] = g.output;
    let k = g.kernel;
    let t = nrows * ow;
    let pad = g.pad as isize;
    let s = g.stride as isize;
    let mut r = 0;
    for c in 0..g.channels {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[r * t..(r + 1) * t];
                    for (ri, out_row) in dst.chunks_mut(ow).enumerate() {
                        let orow = row0 + ri;
                        let (oz, oy) = (orow / oh, orow % oh);
                        let iz = oz as isize * s + kz as isize - pad;
                        let iy = oy as isize * s + ky as isize - pad;
                        if iz < 0 || iz >= d as isize || iy < 0 || iy >= h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src_row = &xc[(iz as usize * h + iy as usize) * w..][..w];
                        if s == 1 {
                            let (lo, hi) = valid_span(kx as isize - pad, ow, w);
                            out_row[..lo].fill(0.0);
                            out_row[hi..].fill(0.0);
                            if lo < hi {
                                let off = (lo as isize + kx as isize - pad) as usize;
                                out_row[lo..hi].copy_from_slice(&src_row[off..off + hi - lo]);
                            }
                            continue;
                        }
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - pad;
                            *o = if ix >= 0 && ix < w as isize {
                                src_row[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Adjoint of [`fill_cols`].
fn scatter_cols(cols: &[f64], g: &ConvGeometry, row0: usize, nrows: usize, dx: &mut [f64]) {
    let [d, h, w] = g.input;
    let [_, oh, ow] = g.output;
    let k = g.kernel;
    let t = nrows * ow;
    let pad = g.pad as isize;
    let s = g.stride as isize;
    let mut r = 0;
    for c in 0..g.channels {
        let xc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[r * t..(r + 1) * t];
                    for (ri, in_row) in src.chunks(ow).enumerate() {
                        let orow = row0 + ri;
                        let (oz, oy) = (orow / oh, orow % oh);
                        let iz = oz as isize * s + kz as isize - pad;
                        let iy = oy as isize * s + ky as isize - pad;
                        if iz < 0 || iz >= d as isize || iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut xc[(iz as usize * h + iy as usize) * w..][..w];
                        if s == 1 {
                            let (lo, hi) = valid_span(kx as isize - pad, ow, w);
                            if lo < hi {
                                let off = (lo as isize + kx as isize - pad) as usize;
                                for (d, &v) in dst_row[off..off + hi - lo].iter_mut().zip(&in_row[lo..hi]) {
                                    *d += v;
                                }
                            }
                            continue;
                        }
                        for (ox, &v) in in_row.iter().enumerate() {
                            let ix = ox as isize * s + kx as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// `y[Co×D'×H'×W'] = w ⋆ x + b`, cross-correlation without kernel flip.
pub fn conv3d_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let c_out = b.len();
    let kk = g.patch_len();
    let p = g.out_voxels();
    let ow = g.output[2];
    let mut y = vec![0.0; c_out * p];
    for (co, row) in y.chunks_mut(p).enumerate() {
        row.fill(b[co]);
    }
    let rpt = g.rows_per_tile();
    let mut cols = vec![0.0; kk * rpt * ow];
    let mut row0 = 0;
    while row0 < g.out_rows() {
        let nrows = rpt.min(g.out_rows() - row0);
        let t = nrows * ow;
        let p0 = row0 * ow;
        let cols = &mut cols[..kk * t];
        fill_cols(x, g, row0, nrows, cols);
        gemm_acc(w, kk, cols, t, c_out, kk, t, &mut y[p0..], p);
        row0 += nrows;
    }
    y
}

/// Accumulates conv3d gradients. `dw`/`dx` are skipped when `None`.
pub fn conv3d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeometry,
    mut dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let kk = g.patch_len();
    let p = g.out_voxels();
    let c_out = gy.len() / p;
    let ow = g.output[2];
    let rpt = g.rows_per_tile();
    let mut cols = vec![0.0; kk * rpt * ow];
    let mut gy_t = if dw.is_some() {
        vec![0.0; c_out * rpt * ow]
    } else {
        Vec::new()
    };
    let mut dw_t = if dw.is_some() {
        vec![0.0; kk * c_out]
    } else {
        Vec::new()
    };
    let mut dcols = if dx.is_some() {
        vec![0.0; kk * rpt * ow]
    } else {
        Vec::new()
    };
    let mut w_t = Vec::new();
    if dx.is_some() {
        w_t = vec![0.0; w.len()];
        transpose_into(w, c_out, kk, &mut w_t);
    }
    let mut row0 = 0;
    while row0 < g.out_rows() {
        let nrows = rpt.min(g.out_rows() - row0);
        let t = nrows * ow;
        let p0 = row0 * ow;
        if dw.is_some() {
            let cols = &mut cols[..kk * t];
            fill_cols(x, g, row0, nrows, cols);
            // dWᵀ[K×Co] += cols[K×t] · gyᵀ[t×Co]
            let gy_t = &mut gy_t[..t * c_out];
            for co in 0..c_out {
                for (j, &v) in gy[co * p + p0..][..t].iter().enumerate() {
                    gy_t[j * c_out + co] = v;
                }
            }
            gemm_acc(cols, t, gy_t, c_out, kk, t, c_out, &mut dw_t, c_out);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dcols = &mut dcols[..kk * t];
            dcols.fill(0.0);
            gemm_acc(&w_t, c_out, &gy[p0..], p, kk, c_out, t, dcols, t);
            scatter_cols(dcols, g, row0, nrows, dx);
        }
        row0 += nrows;
    }
    if let Some(dw) = dw {
        for k in 0..kk {
            for co in 0..c_out {
                dw[co * kk + k] += dw_t[k * c_out + co];
            }
        }
    }
}

/// Non-overlapping max pooling over `x[C×D×H×W]` with cubic window `k`.
/// Returns the pooled values and the flat input index of each maximum
/// (first occurrence wins on ties).
pub fn max_pool3d(x: &[f64], channels: usize, input: [usize; 3], k: usize) -> (Vec<f64>, Vec<usize>, [usize; 3]) {
    let [d, h, w] = input;
    let out = [d / k, h / k, w / k];
    let n_out = channels * out[0] * out[1] * out[2];
    let mut vals = Vec::with_capacity(n_out);
    let mut idx = Vec::with_capacity(n_out);
    for c in 0..channels {
        let base = c * d * h * w;
        for oz in 0..out[0] {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = base + (oz * k * h + oy * k) * w + ox * k;
                    for dz in 0..k {
                        for dy in 0..k {
                            let row = base + ((oz * k + dz) * h + oy * k + dy) * w + ox * k;
                            for dx in 0..k {
                                let v = x[row + dx];
                                if v > best {
                                    best = v;
                                    best_i = row + dx;
                                }
                            }
                        }
                    }
                    vals.push(best);
                    idx.push(best_i);
                }
            }
        }
    }
    (vals, idx, out)
}
