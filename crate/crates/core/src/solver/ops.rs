//! Forward-difference gradient, its negative adjoint and the projections
//! used by the primal-dual iteration.
//!
//! Label fields are voxel-major `n x l` arrays. A gradient-shaped field
//! stacks one such array per spatial axis: entry `(axis, voxel, label)`
//! lives at `(axis * n + voxel) * l + label`. The difference at the last
//! voxel along an axis is zero (Neumann boundary).

use serde::{Deserialize, Serialize};

use crate::volume::GridShape;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TvMode {
    /// Differences along x, y and z.
    #[default]
    #[serde(rename = "3d")]
    Full3d,
    /// Differences along x and y only, i.e. independent axial slices.
    #[serde(rename = "2d")]
    Slicewise2d,
}

impl TvMode {
    pub fn axes(self) -> usize {
        match self {
            TvMode::Full3d => 3,
            TvMode::Slicewise2d => 2,
        }
    }

    /// Upper bound on the squared operator norm of the gradient.
    pub fn norm_bound_sq(self) -> f64 {
        4.0 * self.axes() as f64
    }
}

impl std::str::FromStr for TvMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "3d" => Ok(TvMode::Full3d),
            "2d" => Ok(TvMode::Slicewise2d),
            other => Err(format!("unknown tv mode {other:?} (expected 3d or 2d)")),
        }
    }
}

/// Layout of one axis: difference offset and block length, in values.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisLayout {
    /// Offset between neighbors along the axis.
    pub step: usize,
    /// Length of a contiguous block spanning the axis once.
    pub block: usize,
}

pub(crate) fn axis_layouts(shape: GridShape, num_labels: usize, mode: TvMode) -> Vec<AxisLayout> {
    let dims = shape.dims();
    (0..mode.axes())
        .map(|a| {
            let step = shape.stride(a) * num_labels;
            AxisLayout {
                step,
                block: step * dims[a],
            }
        })
        .collect()
}

/// Gradient of a voxel-major field; output has `axes * values.len()` entries.
pub fn gradient(values: &[f64], shape: GridShape, num_labels: usize, mode: TvMode) -> Vec<f64> {
    let len = values.len();
    let mut out = vec![0.0; len * mode.axes()];
    for (a, lay) in axis_layouts(shape, num_labels, mode)
        .into_iter()
        .enumerate()
    {
        let out = &mut out[a * len..(a + 1) * len];
        for (src, dst) in values
            .chunks_exact(lay.block)
            .zip(out.chunks_exact_mut(lay.block))
        {
            let inner = lay.block - lay.step;
            for j in 0..inner {
                dst[j] = src[j + lay.step] - src[j];
            }
        }
    }
    out
}

/// Divergence, the negative adjoint of [`gradient`]:
/// `<gradient(u), p> = -<u, divergence(p)>` for all `u`, `p`.
pub fn divergence(dual: &[f64], shape: GridShape, num_labels: usize, mode: TvMode) -> Vec<f64> {
    let len = shape.len() * num_labels;
    assert_eq!(dual.len(), len * mode.axes());
    let mut out = vec![0.0; len];
    divergence_into(dual, shape, num_labels, mode, &mut out);
    out
}

pub(crate) fn divergence_into(
    dual: &[f64],
    shape: GridShape,
    num_labels: usize,
    mode: TvMode,
    out: &mut [f64],
) {
    let len = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (a, lay) in axis_layouts(shape, num_labels, mode)
        .into_iter()
        .enumerate()
    {
        let p = &dual[a * len..(a + 1) * len];
        for (src, dst) in p
            .chunks_exact(lay.block)
            .zip(out.chunks_exact_mut(lay.block))
        {
            let inner = lay.block - lay.step;
            for j in 0..inner {
                dst[j] += src[j];
                dst[j + lay.step] -= src[j];
            }
        }
    }
}

/// Anisotropic total variation: the sum of absolute forward differences.
pub fn total_variation(values: &[f64], shape: GridShape, num_labels: usize, mode: TvMode) -> f64 {
    let mut tv = 0.0;
    for lay in axis_layouts(shape, num_labels, mode) {
        for src in values.chunks_exact(lay.block) {
            let inner = lay.block - lay.step;
            let mut s = 0.0;
            for j in 0..inner {
                s += (src[j + lay.step] - src[j]).abs();
            }
            tv += s;
        }
    }
    tv
}

/// Clamps every dual component into `[-lambda, lambda]`.
pub fn project_dual(dual: &mut [f64], lambda: f64) {
    for v in dual.iter_mut() {
        *v = v.clamp(-lambda, lambda);
    }
}

/// True when `v` is on the unit simplex up to rounding.
#[inline]
fn on_simplex(v: &[f64]) -> bool {
    let mut sum = 0.0;
    for &x in v {
        if !(x >= 0.0) {
            return false;
        }
        sum += x;
    }
    (sum - 1.0).abs() <= 4.0 * f64::EPSILON * v.len() as f64
}

/// Euclidean projection onto the unit simplex, in place (sort and
/// threshold). `scratch` must have the same length as `v`. Points already
/// on the simplex (up to rounding) are left untouched.
#[inline]
pub fn project_simplex_in_place(v: &mut [f64], scratch: &mut [f64]) {
    if on_simplex(v) {
        return;
    }
    scratch.copy_from_slice(v);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &s) in scratch.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    let mut scratch = vec![0.0; v.len()];
    project_simplex_in_place(&mut out, &mut scratch);
    out
}
