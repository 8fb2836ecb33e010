//! Grid geometry and the in-memory volume types.
//!
//! Voxels are addressed by a linear index with x varying fastest, then y,
//! then z: `index(x, y, z) = x + nx * (y + ny * z)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on row sums for simplex-valued fields.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridShape {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        nx.checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::invalid("grid voxel count overflows usize"))?;
        Ok(Self { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let rest = index / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }

    /// Index of `(x, y, z)` after clamping each coordinate into the grid.
    #[inline]
    pub fn clamped_index(&self, x: isize, y: isize, z: isize) -> usize {
        let cx = x.clamp(0, self.nx as isize - 1) as usize;
        let cy = y.clamp(0, self.ny as isize - 1) as usize;
        let cz = z.clamp(0, self.nz as isize - 1) as usize;
        self.index(cx, cy, cz)
    }

    /// Linear index stride along `axis` (0 = x, 1 = y, 2 = z).
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.nx,
            2 => self.nx * self.ny,
            _ => panic!("axis {axis} out of range"),
        }
    }
}

/// `c` co-registered scalar channels on one grid, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelVolume {
    shape: GridShape,
    channels: usize,
    data: Vec<f32>,
}

impl MultiChannelVolume {
    pub fn new(shape: GridShape, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("volume needs at least one channel"));
        }
        if data.len() != shape.len() * channels {
            return Err(Error::shape(format!(
                "{} values for {} voxels x {} channels",
                data.len(),
                shape.len(),
                channels
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            shape,
            channels,
            data,
        })
    }

    pub fn zeros(shape: GridShape, channels: usize) -> Result<Self> {
        Self::new(shape, channels, vec![0.0; shape.len() * channels])
    }

    /// Stacks single-channel volumes (or any volumes) on a shared grid.
    pub fn stack(parts: &[&MultiChannelVolume]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to stack"))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::shape("stacked volumes must share a grid"));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Self::new(first.shape, channels, data)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.shape.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// New volume holding only the listed channels, in the listed order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("channel subset must be nonempty"));
        }
        let mut data = Vec::with_capacity(channels.len() * self.shape.len());
        for &c in channels {
            if c >= self.channels {
                return Err(Error::invalid(format!(
                    "channel {c} out of range for {} channels",
                    self.channels
                )));
            }
            data.extend_from_slice(self.channel(c));
        }
        Self::new(self.shape, channels.len(), data)
    }

    #[inline]
    pub fn get(&self, channel: usize, index: usize) -> f32 {
        self.data[channel * self.shape.len() + index]
    }
}

/// One label in `0..num_labels` per voxel; label 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    shape: GridShape,
    num_labels: usize,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(shape: GridShape, num_labels: usize, labels: Vec<u8>) -> Result<Self> {
        if !(2..=256).contains(&num_labels) {
            return Err(Error::invalid(format!(
                "num_labels must be in 2..=256, got {num_labels}"
            )));
        }
        if labels.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} labels for {} voxels",
                labels.len(),
                shape.len()
            )));
        }
        if let Some(index) = labels.iter().position(|&l| l as usize >= num_labels) {
            return Err(Error::LabelOutOfRange {
                index,
                label: labels[index],
                num_labels,
            });
        }
        Ok(Self {
            shape,
            num_labels,
            labels,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Indices of nonzero voxels, in increasing order.
    pub fn nonzero_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-label voxel counts.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_labels];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// An `n x num_labels` field of per-voxel label weights, stored voxel-major.
///
/// Used both for relaxed labelings (rows on the unit simplex) and for
/// classifier posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelField {
    shape: GridShape,
    num_labels: usize,
    values: Vec<f64>,
}

pub type SimplexField = LabelField;
pub type PosteriorField = LabelField;

impl LabelField {
    /// Wraps raw values without checking the simplex constraint.
    pub fn from_raw(shape: GridShape, num_labels: usize, values: Vec<f64>) -> Result<Self> {
        if num_labels < 2 {
            return Err(Error::invalid("a label field needs at least two labels"));
        }
        if values.len() != shape.len() * num_labels {
            return Err(Error::shape(format!(
                "{} values for {} voxels x {} labels",
                values.len(),
                shape.len(),
                num_labels
            )));
        }
        Ok(Self {
            shape,
            num_labels,
            values,
        })
    }

    /// Wraps values and checks every row lies on the unit simplex.
    pub fn simplex(shape: GridShape, num_labels: usize, values: Vec<f64>) -> Result<Self> {
        let f = Self::from_raw(shape, num_labels, values)?;
        f.check_simplex(SIMPLEX_TOL)?;
        Ok(f)
    }

    pub fn uniform(shape: GridShape, num_labels: usize) -> Result<Self> {
        let v = 1.0 / num_labels as f64;
        Self::from_raw(shape, num_labels, vec![v; shape.len() * num_labels])
    }

    pub fn check_simplex(&self, tol: f64) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            let mut sum = 0.0;
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::NonFinite { index: i });
                }
                if v < 0.0 {
                    return Err(Error::invalid(format!("voxel {i}: negative entry {v}")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::invalid(format!("voxel {i}: row sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, voxel: usize) -> &[f64] {
        &self.values[voxel * self.num_labels..(voxel + 1) * self.num_labels]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.num_labels)
    }
}

/// One-hot encoding of a label volume.
pub fn one_hot(labels: &LabelVolume) -> SimplexField {
    let l = labels.num_labels();
    let mut values = vec![0.0; labels.shape().len() * l];
    for (i, &lab) in labels.labels().iter().enumerate() {
        values[i * l + lab as usize] = 1.0;
    }
    LabelField {
        shape: labels.shape(),
        num_labels: l,
        values,
    }
}

/// Index of the largest entry of `row`; ties go to the lowest index.
#[inline]
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Winner-takes-all rounding of a label field.
pub fn argmax_labels(field: &LabelField) -> LabelVolume {
    let labels = field.rows().map(|r| argmax(r) as u8).collect();
    LabelVolume {
        shape: field.shape,
        num_labels: field.num_labels,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_rejects_zero_axis() {
        assert!(GridShape::new(0, 3, 3).is_err());
        assert!(GridShape::new(usize::MAX, 2, 2).is_err());
    }

    #[test]
    fn index_is_x_fastest() {
        let s = GridShape::new(4, 3, 2).unwrap();
        assert_eq!(s.index(1, 0, 0), 1);
        assert_eq!(s.index(0, 1, 0), 4);
        assert_eq!(s.index(0, 0, 1), 12);
        assert_eq!(s.index(3, 2, 1), 23);
    }

    #[test]
    fn one_hot_label_two() {
        let s = GridShape::new(1, 1, 1).unwrap();
        let lv = LabelVolume::new(s, 4, vec![2]).unwrap();
        let f = one_hot(&lv);
        assert_eq!(f.values(), &[0.0, 0.0, 1.0, 0.0]);
        f.check_simplex(SIMPLEX_TOL).unwrap();
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.1, 0.7, 0.1, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 0.3, 0.3, 0.4]), 3);
    }

    #[test]
    fn label_volume_rejects_out_of_range() {
        let s = GridShape::new(2, 1, 1).unwrap();
        assert!(matches!(
            LabelVolume::new(s, 2, vec![0, 2]),
            Err(Error::LabelOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn volume_rejects_nan() {
        let s = GridShape::new(2, 1, 1).unwrap();
        assert!(MultiChannelVolume::new(s, 1, vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn select_channels_reorders() {
        let s = GridShape::new(2, 1, 1).unwrap();
        let v = MultiChannelVolume::new(s, 3, vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let sub = v.select_channels(&[2, 0]).unwrap();
        assert_eq!(sub.data(), &[4., 5., 0., 1.]);
        assert!(v.select_channels(&[]).is_err());
        assert!(v.select_channels(&[3]).is_err());
    }

    proptest! {
        #[test]
        fn coords_round_trip(nx in 1usize..40, ny in 1usize..40, nz in 1usize..40, seed in any::<u64>()) {
            let s = GridShape::new(nx, ny, nz).unwrap();
            let i = (seed % s.len() as u64) as usize;
            let (x, y, z) = s.coords(i);
            prop_assert!(x < nx && y < ny && z < nz);
            prop_assert_eq!(s.index(x, y, z), i);
            prop_assert_eq!(i, x + nx * (y + ny * z));
        }

        #[test]
        fn one_hot_then_argmax_is_identity(labels in proptest::collection::vec(0u8..5, 1..200)) {
            let s = GridShape::new(labels.len(), 1, 1).unwrap();
            let lv = LabelVolume::new(s, 5, labels).unwrap();
            prop_assert_eq!(argmax_labels(&one_hot(&lv)), lv);
        }

        #[test]
        fn argmax_matches_row_scan(values in proptest::collection::vec(0u8..4, 4..400)) {
            // Coarse values force plenty of ties.
            let n = values.len() / 4;
            let vals: Vec<f64> = values[..n * 4].iter().map(|&v| v as f64).collect();
            let f = LabelField::from_raw(GridShape::new(n, 1, 1).unwrap(), 4, vals.clone()).unwrap();
            let got = argmax_labels(&f);
            for i in 0..n {
                let row = &vals[i * 4..i * 4 + 4];
                let max = row.iter().cloned().fold(f64::MIN, f64::max);
                let first = row.iter().position(|&v| v == max).unwrap();
                prop_assert_eq!(got.labels()[i] as usize, first);
            }
        }
    }
}
