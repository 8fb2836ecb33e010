use mcseg::features::{apply_standardization, extract_features, fit_standardization, ScalingMode};
use mcseg::rng::SplitMix64;
use mcseg::{GridShape, LabelVolume, MultiChannelVolume};

fn random_volume(shape: GridShape, channels: usize, seed: u64) -> MultiChannelVolume {
    let mut rng = SplitMix64::new(seed);
    let data = (0..shape.len() * channels)
        .map(|_| (rng.normal() * 3.0 + 1.0) as f32)
        .collect();
    MultiChannelVolume::new(shape, channels, data).unwrap()
}

// Direct per-voxel evaluation with explicit clamping and a two-pass variance.
fn oracle_row(v: &MultiChannelVolume, x: usize, y: usize, z: usize) -> Vec<f64> {
    let [nx, ny, nz] = v.shape().dims();
    let clamp = |a: isize, n: usize| a.max(0).min(n as isize - 1) as usize;
    let mut row = Vec::new();
    for c in 0..v.channels() {
        let at = |dx: isize, dy: isize, dz: isize| {
            let i = clamp(x as isize + dx, nx)
                + nx * (clamp(y as isize + dy, ny) + ny * clamp(z as isize + dz, nz));
            v.get(c, i) as f64
        };
        let mut neigh = Vec::new();
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dx, dy, dz) != (0, 0, 0) {
                        neigh.push(at(dx, dy, dz));
                    }
                }
            }
        }
        let mean = neigh.iter().sum::<f64>() / 26.0;
        let var = neigh.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 26.0;
        row.extend([at(0, 0, 0), mean, var.sqrt()]);
        row.extend([
            at(-1, 0, 0),
            at(1, 0, 0),
            at(0, -1, 0),
            at(0, 1, 0),
            at(0, 0, -1),
            at(0, 0, 1),
        ]);
    }
    row
}

#[test]
fn features_match_direct_stencil() {
    let shape = GridShape::cube(5).unwrap();
    let v = random_volume(shape, 2, 11);
    let f = extract_features(&v, None).unwrap();
    assert_eq!((f.rows(), f.cols()), (125, 18));
    for i in 0..shape.len() {
        let (x, y, z) = shape.coords(i);
        let want = oracle_row(&v, x, y, z);
        for (a, b) in f.row(i).iter().zip(&want) {
            assert!(
                (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                "voxel {i}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn mask_selects_rows_in_voxel_order() {
    let shape = GridShape::new(4, 3, 2).unwrap();
    let v = random_volume(shape, 1, 3);
    let mask_vals: Vec<u8> = (0..shape.len()).map(|i| (i % 3 == 0) as u8).collect();
    let mask = LabelVolume::new(shape, 2, mask_vals).unwrap();
    let full = extract_features(&v, None).unwrap();
    let masked = extract_features(&v, Some(&mask)).unwrap();
    assert_eq!(masked.voxel_index(), mask.nonzero_indices().as_slice());
    for (r, &vox) in masked.voxel_index().iter().enumerate() {
        assert_eq!(masked.row(r), full.row(vox));
    }
}

#[test]
fn constant_volume_has_zero_spread() {
    let shape = GridShape::cube(3).unwrap();
    let v = MultiChannelVolume::new(shape, 1, vec![2.5; 27]).unwrap();
    let f = extract_features(&v, None).unwrap();
    for row in f.iter_rows() {
        assert_eq!(row[2], 0.0);
        assert!(row.iter().enumerate().all(|(j, &x)| j == 2 || x == 2.5));
    }
    assert!(fit_standardization(&f, ScalingMode::TotalVariance).is_err());
}

#[test]
fn standardization_properties() {
    let shape = GridShape::cube(6).unwrap();
    let train = extract_features(&random_volume(shape, 3, 5), None).unwrap();
    for mode in [ScalingMode::TotalVariance, ScalingMode::PerFeature] {
        let stats = fit_standardization(&train, mode).unwrap();
        let z = apply_standardization(&train, &stats).unwrap();
        let n = z.rows() as f64;
        let mut total_var = 0.0;
        for j in 0..z.cols() {
            let col: Vec<f64> = z.iter_rows().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9, "column {j} mean {m}");
            if mode == ScalingMode::PerFeature {
                assert!((var - 1.0).abs() < 1e-9);
            }
            total_var += var;
        }
        if mode == ScalingMode::TotalVariance {
            assert!((total_var - 1.0).abs() < 1e-9, "total variance {total_var}");
        }
        let back = stats.invert(&z).unwrap();
        for (a, b) in back.values().iter().zip(train.values()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}

#[test]
fn shifted_test_set_keeps_its_offset() {
    let shape = GridShape::cube(5).unwrap();
    let train = extract_features(&random_volume(shape, 1, 8), None).unwrap();
    let stats = fit_standardization(&train, ScalingMode::TotalVariance).unwrap();
    let shifted: Vec<f32> = random_volume(shape, 1, 9)
        .data()
        .iter()
        .map(|v| v + 10.0)
        .collect();
    let test =
        extract_features(&MultiChannelVolume::new(shape, 1, shifted).unwrap(), None).unwrap();
    let z = apply_standardization(&test, &stats).unwrap();
    let mean0 = z.iter_rows().map(|r| r[0]).sum::<f64>() / z.rows() as f64;
    assert!(
        mean0 > 0.5,
        "training statistics must not be refit on test data: {mean0}"
    );
}
