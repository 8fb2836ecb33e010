//! Per-voxel neighborhood features and their standardization.
//!
//! For every channel a voxel gets nine features, in this order:
//!
//! | offset | feature                                         |
//! |--------|-------------------------------------------------|
//! | 0      | center intensity                                |
//! | 1      | mean over the 26-neighborhood (center excluded) |
//! | 2      | population std. dev. over the 26-neighborhood   |
//! | 3..9   | face neighbors at -x, +x, -y, +y, -z, +z        |
//!
//! Channel blocks are concatenated in channel order, so a `c`-channel volume
//! yields `9 * c` columns. Coordinates outside the grid are clamped to the
//! nearest edge voxel (replicate padding).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::volume::{LabelVolume, MultiChannelVolume};
use crate::{Error, Result};

pub const FEATURES_PER_CHANNEL: usize = 9;

/// Face-neighbor offsets in feature order.
pub const FACE_OFFSETS: [(isize, isize, isize); 6] = [
    (-1, 0, 0),
    (1, 0, 0),
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, -1),
    (0, 0, 1),
];

/// Dense row-major feature matrix, one row per extracted voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    /// Linear voxel index of each row.
    voxel_index: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(cols: usize, values: Vec<f64>, voxel_index: Vec<usize>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::invalid("feature matrix needs at least one column"));
        }
        let rows = voxel_index.len();
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values for {rows} rows x {cols} columns",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            rows,
            cols,
            values,
            voxel_index,
        })
    }

    /// Rows without a voxel association (indices `0..rows`).
    pub fn from_rows(cols: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 || !values.len().is_multiple_of(cols) {
            return Err(Error::shape("value count is not a multiple of cols"));
        }
        let rows = values.len() / cols;
        Self::new(cols, values, (0..rows).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn voxel_index(&self) -> &[usize] {
        &self.voxel_index
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.cols)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        let mut voxel_index = Vec::with_capacity(rows.len());
        for &r in rows {
            values.extend_from_slice(self.row(r));
            voxel_index.push(self.voxel_index[r]);
        }
        FeatureMatrix {
            rows: rows.len(),
            cols: self.cols,
            values,
            voxel_index,
        }
    }
}

/// Extracts the nine-per-channel feature vectors for every voxel, or only
/// for voxels where `mask` is nonzero.
pub fn extract_features(
    volume: &MultiChannelVolume,
    mask: Option<&LabelVolume>,
) -> Result<FeatureMatrix> {
    let shape = volume.shape();
    let voxel_index: Vec<usize> = match mask {
        Some(m) => {
            if m.shape() != shape {
                return Err(Error::shape(format!(
                    "mask {:?} vs volume {:?}",
                    m.shape().dims(),
                    shape.dims()
                )));
            }
            m.nonzero_indices()
        }
        None => (0..shape.len()).collect(),
    };
    let channels = volume.channels();
    let cols = FEATURES_PER_CHANNEL * channels;
    let mut values = vec![0.0; voxel_index.len() * cols];
    values
        .par_chunks_mut(cols)
        .zip(voxel_index.par_iter())
        .for_each(|(row, &voxel)| {
            let (x, y, z) = shape.coords(voxel);
            let (x, y, z) = (x as isize, y as isize, z as isize);
            for c in 0..channels {
                let data = volume.channel(c);
                let at = |dx: isize, dy: isize, dz: isize| {
                    data[shape.clamped_index(x + dx, y + dy, z + dz)] as f64
                };
                let mut neigh = [0.0f64; 26];
                let mut k = 0;
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            neigh[k] = at(dx, dy, dz);
                            k += 1;
                        }
                    }
                }
                let mean = neigh.iter().sum::<f64>() / 26.0;
                let var = neigh.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 26.0;
                let out = &mut row[c * FEATURES_PER_CHANNEL..(c + 1) * FEATURES_PER_CHANNEL];
                out[0] = at(0, 0, 0);
                out[1] = mean;
                out[2] = var.sqrt();
                for (j, &(dx, dy, dz)) in FACE_OFFSETS.iter().enumerate() {
                    out[3 + j] = at(dx, dy, dz);
                }
            }
        });
    FeatureMatrix::new(cols, values, voxel_index)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    /// One global divisor so that the feature variances sum to one.
    #[default]
    TotalVariance,
    /// Each feature scaled to unit variance.
    PerFeature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    /// Per-column divisor. In total-variance mode every entry is the same
    /// global scale.
    pub scale: Vec<f64>,
    pub mode: ScalingMode,
}

impl StandardizationStats {
    /// The global scale; for per-feature stats this is `None`.
    pub fn global_scale(&self) -> Option<f64> {
        match self.mode {
            ScalingMode::TotalVariance => self.scale.first().copied(),
            ScalingMode::PerFeature => None,
        }
    }

    /// Maps standardized values back to the original feature space.
    pub fn invert(&self, f: &FeatureMatrix) -> Result<FeatureMatrix> {
        check_cols(f, self)?;
        let values = f
            .iter_rows()
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.scale))
                    .map(|(v, (m, s))| v * s + m)
            })
            .collect();
        FeatureMatrix::new(f.cols, values, f.voxel_index.clone())
    }
}

/// Column means and (population) variances, summed in row order.
fn column_moments(f: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = f.rows as f64;
    let mut mean = vec![0.0; f.cols];
    for row in f.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; f.cols];
    for row in f.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

pub fn fit_standardization(f: &FeatureMatrix, mode: ScalingMode) -> Result<StandardizationStats> {
    if f.rows < 2 {
        return Err(Error::invalid("standardization needs at least two rows"));
    }
    let (mean, var) = column_moments(f);
    let scale = match mode {
        ScalingMode::TotalVariance => {
            let total: f64 = var.iter().sum();
            if !(total > 0.0) {
                return Err(Error::ZeroVariance);
            }
            vec![total.sqrt(); f.cols]
        }
        ScalingMode::PerFeature => {
            if var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::ZeroVariance);
            }
            var.iter().map(|v| v.sqrt()).collect()
        }
    };
    Ok(StandardizationStats { mean, scale, mode })
}

fn check_cols(f: &FeatureMatrix, s: &StandardizationStats) -> Result<()> {
    if f.cols != s.mean.len() || f.cols != s.scale.len() {
        return Err(Error::shape(format!(
            "matrix has {} columns, stats have {}",
            f.cols,
            s.mean.len()
        )));
    }
    Ok(())
}

/// `(F - mean) / scale`, column-wise.
pub fn apply_standardization(f: &FeatureMatrix, s: &StandardizationStats) -> Result<FeatureMatrix> {
    check_cols(f, s)?;
    if f.rows == 0 {
        return Err(Error::invalid("cannot standardize an empty matrix"));
    }
    let values = f
        .iter_rows()
        .flat_map(|row| {
            row.iter()
                .zip(s.mean.iter().zip(&s.scale))
                .map(|(v, (m, sc))| (v - m) / sc)
        })
        .collect();
    FeatureMatrix::new(f.cols, values, f.voxel_index.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridShape;

    fn volume(nx: usize, ny: usize, nz: usize, data: Vec<f32>) -> MultiChannelVolume {
        let s = GridShape::new(nx, ny, nz).unwrap();
        let c = data.len() / s.len();
        MultiChannelVolume::new(s, c, data).unwrap()
    }

    #[test]
    fn constant_volume() {
        let v = volume(4, 4, 4, vec![5.0; 64]);
        let f = extract_features(&v, None).unwrap();
        assert_eq!(f.cols(), 9);
        let i = v.shape().index(1, 2, 1);
        assert_eq!(f.row(i), &[5.0, 5.0, 0.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn impulse_at_center() {
        let mut data = vec![0.0; 27];
        data[13] = 1.0;
        let v = volume(3, 3, 3, data);
        let f = extract_features(&v, None).unwrap();
        assert_eq!(f.row(13), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // +x neighbor of the corner-adjacent voxel (0,1,1) is the impulse.
        let r = f.row(v.shape().index(0, 1, 1));
        assert_eq!(r[4], 1.0);
        assert_eq!(r[3], 0.0);
    }

    #[test]
    fn replicate_padding_at_corner() {
        let v = volume(2, 1, 1, vec![1.0, 3.0]);
        let f = extract_features(&v, None).unwrap();
        // Voxel 0: -x clamps to itself, +x is 3, y/z clamp to itself.
        assert_eq!(&f.row(0)[3..], &[1.0, 3.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn mask_selects_rows() {
        let s = GridShape::new(3, 1, 1).unwrap();
        let v = volume(3, 1, 1, vec![1.0, 2.0, 3.0]);
        let mask = LabelVolume::new(s, 2, vec![0, 1, 1]).unwrap();
        let f = extract_features(&v, Some(&mask)).unwrap();
        assert_eq!(f.rows(), 2);
        assert_eq!(f.voxel_index(), &[1, 2]);
        assert_eq!(f.row(0)[0], 2.0);
        let bad = LabelVolume::new(GridShape::new(2, 1, 1).unwrap(), 2, vec![0, 1]).unwrap();
        assert!(extract_features(&v, Some(&bad)).is_err());
    }

    #[test]
    fn two_row_hand_example() {
        let f = FeatureMatrix::from_rows(2, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let s = fit_standardization(&f, ScalingMode::TotalVariance).unwrap();
        assert_eq!(s.mean, vec![1.0, 1.0]);
        assert_eq!(s.global_scale(), Some(2f64.sqrt()));
    }

    #[test]
    fn zero_variance_is_an_error() {
        let f = FeatureMatrix::from_rows(2, vec![3.0, 1.0, 3.0, 1.0, 3.0, 1.0]).unwrap();
        assert!(matches!(
            fit_standardization(&f, ScalingMode::TotalVariance),
            Err(Error::ZeroVariance)
        ));
        let one = FeatureMatrix::from_rows(2, vec![3.0, 1.0]).unwrap();
        assert!(fit_standardization(&one, ScalingMode::TotalVariance).is_err());
    }

    #[test]
    fn per_feature_mode_gives_unit_columns() {
        let f = FeatureMatrix::from_rows(2, vec![0.0, 0.0, 2.0, 10.0, 4.0, 5.0]).unwrap();
        let s = fit_standardization(&f, ScalingMode::PerFeature).unwrap();
        let z = apply_standardization(&f, &s).unwrap();
        let (_, var) = column_moments(&z);
        for v in var {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_rejects_mismatch_and_empty() {
        let f = FeatureMatrix::from_rows(2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let s = fit_standardization(&f, ScalingMode::TotalVariance).unwrap();
        let g = FeatureMatrix::from_rows(3, vec![0.0; 6]).unwrap();
        assert!(apply_standardization(&g, &s).is_err());
        let empty = FeatureMatrix::from_rows(2, vec![]).unwrap();
        assert!(apply_standardization(&empty, &s).is_err());
    }

    #[test]
    fn round_trip_through_inverse() {
        let f = FeatureMatrix::from_rows(3, vec![1.0, 2.0, 3.0, -4.0, 0.5, 9.0, 7.0, 7.0, 1.0])
            .unwrap();
        let s = fit_standardization(&f, ScalingMode::TotalVariance).unwrap();
        let back = s.invert(&apply_standardization(&f, &s).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
