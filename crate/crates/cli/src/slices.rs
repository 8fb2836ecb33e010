//! Slice export as binary PGM (intensities) and PPM (labels).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use mcseg::{GridShape, LabelVolume, MultiChannelVolume};

/// Label colors; index 0..=3 follow the figure legend, the rest are fixed
/// extras for larger label sets (cycled past the end).
pub const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [255, 255, 0],
    [0, 0, 255],
    [255, 255, 255],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(format!("axis must be x, y or z, got {s:?}")),
        }
    }
}

impl Axis {
    fn name(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

/// Voxel indices of a slice in row-major image order, with (width, height).
/// Images are indexed (column, row) = (x, y) for z slices, (x, z) for y
/// slices and (y, z) for x slices.
pub fn slice_indices(
    shape: GridShape,
    axis: Axis,
    index: usize,
) -> Result<(usize, usize, Vec<usize>)> {
    let [nx, ny, nz] = shape.dims();
    let extent = match axis {
        Axis::X => nx,
        Axis::Y => ny,
        Axis::Z => nz,
    };
    if index >= extent {
        bail!(
            "slice {index} out of range for axis {} of extent {extent}",
            axis.name()
        );
    }
    let (w, h) = match axis {
        Axis::X => (ny, nz),
        Axis::Y => (nx, nz),
        Axis::Z => (nx, ny),
    };
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            out.push(match axis {
                Axis::X => shape.index(index, col, row),
                Axis::Y => shape.index(col, index, row),
                Axis::Z => shape.index(col, row, index),
            });
        }
    }
    Ok((w, h, out))
}

/// Linear map of `[min, max]` onto `0..=255`, rounded; a constant slice maps to 0.
pub fn rescale(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v as f64 - lo) / span).round() as u8
            } else {
                0
            }
        })
        .collect()
}

fn write_pnm(path: &Path, magic: &str, w: usize, h: usize, payload: &[u8]) -> Result<()> {
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(payload);
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// One PGM per channel and slice; returns the written paths.
pub fn export_intensity(
    v: &MultiChannelVolume,
    axis: Axis,
    indices: &[usize],
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &index in indices {
        let (w, h, voxels) = slice_indices(v.shape(), axis, index)?;
        for c in 0..v.channels() {
            let data = v.channel(c);
            let values: Vec<f32> = voxels.iter().map(|&i| data[i]).collect();
            let path = dir.join(format!("{stem}_{}{index}_c{c}.pgm", axis.name()));
            write_pnm(&path, "P5", w, h, &rescale(&values))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// One palette-mapped PPM per slice; returns the written paths.
pub fn export_labels(
    l: &LabelVolume,
    axis: Axis,
    indices: &[usize],
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &index in indices {
        let (w, h, voxels) = slice_indices(l.shape(), axis, index)?;
        let payload: Vec<u8> = voxels
            .iter()
            .flat_map(|&i| PALETTE[l.labels()[i] as usize % PALETTE.len()])
            .collect();
        let path = dir.join(format!("{stem}_{}{index}.ppm", axis.name()));
        write_pnm(&path, "P6", w, h, &payload)?;
        written.push(path);
    }
    Ok(written)
}
