//! Reads a NIfTI-1 or RAWVOL file and prints its geometry. Without an
//! argument a small float32 NIfTI is built in memory first.
//!
//! cargo run --example read_nifti -- path/to/volume.nii

use deformfuse::volume_io::{read_nifti, read_volume_file, Volume};

fn demo_nifti() -> Vec<u8> {
    let dims = [6i16, 5, 4];
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    h[40..42].copy_from_slice(&3i16.to_le_bytes());
    for (i, d) in dims.iter().enumerate() {
        h[42 + 2 * i..44 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&16i16.to_le_bytes()); // float32
    h[72..74].copy_from_slice(&32i16.to_le_bytes());
    for (i, p) in [1.0f32, 1.0, 1.0, 2.0].iter().enumerate() {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352.0f32.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    for i in 0..6 * 5 * 4 {
        h.extend_from_slice(&(i as f32 / 10.0).to_le_bytes());
    }
    h
}

fn describe(v: &Volume) {
    let (lo, hi) = v
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    println!(
        "channels {} dims {:?} spacing {:?} range [{lo}, {hi}]",
        v.channels, v.dims, v.spacing
    );
}

fn main() {
    let result = match std::env::args_os().nth(1) {
        Some(path) => read_volume_file(path.as_ref()),
        None => read_nifti(&demo_nifti()),
    };
    match result {
        Ok(v) => describe(&v),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
