mod common;

use std::fs;

use common::{f32_body, nifti_bytes};
use deformfuse::volume_io::*;
use deformfuse::Error;
use proptest::prelude::*;

#[test]
fn nifti_large_header_declares_dims() {
    // Header and a truncated body: the dims parse before the length check.
    let b = nifti_bytes(&[182, 218, 182], 16, 32, [1.0; 3], b"n+1\0", &[]);
    match read_nifti(&b) {
        Err(Error::Length(m)) => assert!(m.contains(&(352 + 182 * 218 * 182 * 4).to_string()), "{m}"),
        other => panic!("expected length error, got {other:?}"),
    }
}

#[test]
fn nifti_full_size_volume_reads() {
    let n = 182 * 218 * 182;
    let body = vec![0u8; n * 4];
    let v = read_nifti(&nifti_bytes(&[182, 218, 182], 16, 32, [1.0; 3], b"n+1\0", &body)).unwrap();
    assert_eq!(v.dims, [182, 218, 182]);
    assert_eq!(v.channels, 1);
    assert_eq!(v.data.len(), n);
}

#[test]
fn nifti_float32_values_and_order() {
    let vals: Vec<f32> = (0..4 * 5 * 6).map(|i| i as f32 * 0.5 - 3.0).collect();
    let v = read_nifti(&nifti_bytes(
        &[4, 5, 6],
        16,
        32,
        [1.5, 2.0, 2.5],
        b"n+1\0",
        &f32_body(&vals),
    ))
    .unwrap();
    assert_eq!(v.dims, [4, 5, 6]);
    assert_eq!(v.spacing, [1.5, 2.0, 2.5]);
    // x fastest: linear index = x + 4·(y + 5·z)
    assert_eq!(v.get(0, 3, 2, 1), vals[3 + 4 * (2 + 5)] as f64);
    assert_eq!(v.data.iter().map(|&x| x as f32).collect::<Vec<_>>(), vals);
}

#[test]
fn nifti_float64_and_four_d() {
    let vals: Vec<f64> = (0..2 * 3 * 2 * 3).map(|i| i as f64 / 7.0).collect();
    let body: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
    let v = read_nifti(&nifti_bytes(&[2, 3, 2, 3], 64, 64, [1.0; 3], b"n+1\0", &body)).unwrap();
    assert_eq!(v.channels, 3);
    assert_eq!(v.data, vals);
}

#[test]
fn nifti_rejections() {
    let body = f32_body(&[0.0; 8]);
    let ni1 = nifti_bytes(&[2, 2, 2], 16, 32, [1.0; 3], b"ni1\0", &body);
    assert!(matches!(read_nifti(&ni1), Err(Error::Format(_))));
    let bad = nifti_bytes(&[2, 2, 2], 16, 32, [1.0; 3], b"xyz\0", &body);
    assert!(matches!(read_nifti(&bad), Err(Error::Format(_))));
    let int16 = nifti_bytes(&[2, 2, 2], 4, 16, [1.0; 3], b"n+1\0", &body);
    assert!(matches!(read_nifti(&int16), Err(Error::Unsupported(_))));
    let good = nifti_bytes(&[2, 2, 2], 16, 32, [1.0; 3], b"n+1\0", &body);
    assert!(read_nifti(&good).is_ok());
    assert!(matches!(read_nifti(&good[..good.len() - 1]), Err(Error::Length(_))));
    assert!(matches!(read_nifti(&good[..100]), Err(Error::Length(_))));
    let mut be = good.clone();
    be[0..4].copy_from_slice(&348i32.to_be_bytes());
    assert!(matches!(read_nifti(&be), Err(Error::Unsupported(_))));
}

#[test]
fn rawvol_fixed_layout() {
    let v = Volume::zeros(1, [2, 2, 2]);
    let mut buf = Vec::new();
    write_rawvol(&v, RawDtype::F32, &mut buf).unwrap();
    assert_eq!(buf.len(), 40 + 8 * 4);
    assert_eq!(&buf[0..4], b"RVOL");
    assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 0);
    assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2);
}

#[test]
fn rawvol_rejections() {
    let v = Volume::zeros(3, [2, 3, 4]);
    let mut buf = Vec::new();
    write_rawvol(&v, RawDtype::F64, &mut buf).unwrap();
    assert!(matches!(read_rawvol(&buf[..buf.len() - 8]), Err(Error::Length(_))));
    let mut long = buf.clone();
    long.push(0);
    assert!(matches!(read_rawvol(&long), Err(Error::Length(_))));
    let mut magic = buf.clone();
    magic[0] = b'X';
    assert!(matches!(read_rawvol(&magic), Err(Error::Format(_))));
    let mut dt = buf.clone();
    dt[8] = 9;
    assert!(matches!(read_rawvol(&dt), Err(Error::Format(_))));
    assert!(matches!(read_rawvol(&buf[..10]), Err(Error::Length(_))));
}

fn vol_strategy() -> impl Strategy<Value = Volume> {
    (
        1usize..4,
        1usize..5,
        1usize..5,
        1usize..5,
        prop::array::uniform3(1u8..8),
    )
        .prop_flat_map(|(c, x, y, z, sp)| {
            prop::collection::vec(-1e3f64..1e3, c * x * y * z)
                .prop_map(move |data| Volume::new(c, [x, y, z], sp.map(|s| s as f64 * 0.25), data).unwrap())
        })
}

proptest! {
    #[test]
    fn rawvol_f64_round_trip(v in vol_strategy()) {
        let mut buf = Vec::new();
        write_rawvol(&v, RawDtype::F64, &mut buf).unwrap();
        prop_assert_eq!(read_rawvol(&buf).unwrap(), v);
    }

    #[test]
    fn rawvol_f32_round_trip(v in vol_strategy()) {
        let narrowed = Volume::new(v.channels, v.dims, v.spacing, v.data.iter().map(|&x| x as f32 as f64).collect()).unwrap();
        let mut buf = Vec::new();
        write_rawvol(&narrowed, RawDtype::F32, &mut buf).unwrap();
        prop_assert_eq!(read_rawvol(&buf).unwrap(), narrowed);
    }

    #[test]
    fn nifti_random_float32_round_trip(vals in prop::collection::vec(-1e6f32..1e6, 4 * 5 * 6)) {
        let v = read_nifti(&nifti_bytes(&[4, 5, 6], 16, 32, [1.0; 3], b"n+1\0", &f32_body(&vals))).unwrap();
        prop_assert_eq!(v.data.iter().map(|&x| x as f32).collect::<Vec<_>>(), vals);
    }
}

#[test]
fn volume_file_dispatch_and_errors_name_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.rvol");
    let v = Volume::zeros(1, [3, 3, 3]);
    write_rawvol_file(&p, &v, RawDtype::F64).unwrap();
    assert_eq!(read_volume_file(&p).unwrap(), v);

    let nii = dir.path().join("b.nii");
    fs::write(
        &nii,
        nifti_bytes(&[2, 2, 2], 16, 32, [1.0; 3], b"n+1\0", &f32_body(&[1.0; 8])),
    )
    .unwrap();
    assert_eq!(read_volume_file(&nii).unwrap().data, vec![1.0; 8]);

    let bad = dir.path().join("bad.rvol");
    fs::write(&bad, b"nope").unwrap();
    let e = read_volume_file(&bad).unwrap_err();
    assert!(e.to_string().contains("bad.rvol"), "{e}");
    assert_eq!(e.exit_code(), 2);

    let missing = read_volume_file(&dir.path().join("missing.rvol")).unwrap_err();
    assert!(missing.to_string().contains("missing.rvol"));
    assert_eq!(missing.exit_code(), 2);
}

#[test]
fn manifest_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.csv");
    let recs = vec![
        SubjectRecord {
            subject_id: "s1".into(),
            label: 0,
            smri_path: dir.path().join("s1_smri.rvol"),
            field_path: dir.path().join("s1_field.rvol"),
        },
        SubjectRecord {
            subject_id: "s2".into(),
            label: 1,
            smri_path: dir.path().join("s2_smri.rvol"),
            field_path: dir.path().join("s2_field.rvol"),
        },
    ];
    write_manifest(&m, &recs).unwrap();
    let text = fs::read_to_string(&m).unwrap();
    assert!(text.starts_with("subject_id,label,smri,field\n"));
    assert!(text.contains("s1,0,s1_smri.rvol,s1_field.rvol"));
    assert_eq!(load_manifest(&m).unwrap(), recs);

    fs::write(&m, "subject_id,label,smri,field\na,0,x,y\na,1,x,y\n").unwrap();
    assert!(matches!(load_manifest(&m), Err(Error::Validation(_))));
    fs::write(&m, "subject_id,label,smri,field\na,2,x,y\n").unwrap();
    assert!(matches!(load_manifest(&m), Err(Error::Validation(_))));
    fs::write(&m, "id,label,smri,field\na,0,x,y\n").unwrap();
    assert!(matches!(load_manifest(&m), Err(Error::Validation(_))));
}
