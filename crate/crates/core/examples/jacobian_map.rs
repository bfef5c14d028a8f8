//! Log-Jacobian map of a synthetic radial contraction.
//!
//! cargo run --example jacobian_map

use deformfuse::jacobian::{
    determinant_map, jacobian_matrix_field, jsm_pipeline, FieldConvention, FieldUnits, JsmOptions,
};
use deformfuse::synthgen::contraction_field;
use deformfuse::volume_io::{write_rawvol_file, RawDtype};

fn main() -> deformfuse::Result<()> {
    let dims = [24, 24, 24];
    let centre = [12.0, 12.0, 12.0];
    let field = contraction_field(dims, centre, 0.25, 3.0);

    let det = determinant_map(&jacobian_matrix_field(
        &field,
        FieldConvention::Displacement,
        FieldUnits::Voxel,
    )?);
    println!("determinant: min {:.4} at {:?}", det.min(), det.argmin());

    let (log, stats) = jsm_pipeline(&field, &JsmOptions::default())?;
    let peak = log.volume().data.iter().cloned().fold(0.0, f64::max);
    println!(
        "folded log map: peak {peak:.4}, clamped {}/{}",
        stats.clamped, stats.total
    );

    // A slice through the centre, coarse enough to read.
    for y in (0..dims[1]).step_by(3) {
        let row: String = (0..dims[0])
            .step_by(2)
            .map(|x| match log.volume().get(0, x, y, 12) {
                v if v > 0.5 => '#',
                v if v > 0.1 => '+',
                v if v > 0.01 => '.',
                _ => ' ',
            })
            .collect();
        println!("|{row}|");
    }

    let out = std::env::temp_dir().join("deformfuse_log_jacobian.rvol");
    write_rawvol_file(&out, log.volume(), RawDtype::F64)?;
    println!("wrote {}", out.display());
    Ok(())
}
