//! Synthetic multi-contrast phantoms with known labels.
//!
//! A phantom is a background (label 0) holding up to three ellipsoidal
//! "nuclei" (labels 1, 2, 3) whose boundaries are perturbed by smooth
//! seeded noise. Each channel's intensity is the class mean of the voxel's
//! label plus independent Gaussian noise. All randomness comes from
//! [`CounterRng`] keyed by (stream, voxel index), so generation does not
//! depend on traversal order.
//!
//! Streams: `1..=3` boundary perturbation of nucleus `j`, `100 + k` noise
//! of channel `k`; subjects use `300 + a` for the displacement of axis `a`
//! and `200 + k` for their extra noise.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::rng::CounterRng;
use crate::volume::{GridShape, LabelVolume, MultiChannelVolume};
use crate::{Error, Result};

/// Nucleus ellipsoids as (center, radii), in fractions of the grid extent.
const NUCLEI: [([f64; 3], [f64; 3]); 3] = [
    ([0.28, 0.33, 0.5], [0.19, 0.22, 0.36]),
    ([0.72, 0.33, 0.5], [0.19, 0.22, 0.36]),
    ([0.5, 0.76, 0.5], [0.30, 0.15, 0.36]),
];

/// Sinusoids summed into each smooth random field.
const WAVES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    #[serde(default = "default_labels")]
    pub num_labels: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// `num_labels x channels` class means.
    pub class_means: Vec<Vec<f64>>,
    /// Per-channel Gaussian noise standard deviation.
    pub noise_sigma: Vec<f64>,
    /// Relative amplitude of the boundary perturbation, in `[0, 1)`.
    #[serde(default)]
    pub smoothness: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_labels() -> usize {
    4
}

fn default_channels() -> usize {
    3
}

/// Canonical class means: every channel separates background from the
/// nuclei, and channel `k` leaves one pair of nuclei indistinguishable
/// (channel 0: {2, 3}, channel 1: {1, 3}, channel 2: {1, 2}).
pub const CONFUSABLE_MEANS: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [1.0, 2.0, 2.0],
    [2.0, 1.0, 2.0],
    [2.0, 2.0, 1.0],
];

/// Noise level of the canonical phantom, in class-mean units.
pub const CONFUSABLE_SIGMA: f64 = 2.0;

/// Boundary perturbation of the canonical phantom.
pub const CONFUSABLE_SMOOTHNESS: f64 = 0.15;

pub fn default_confusable_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: [64, 64, 64],
        num_labels: 4,
        channels: 3,
        class_means: CONFUSABLE_MEANS.iter().map(|r| r.to_vec()).collect(),
        noise_sigma: vec![CONFUSABLE_SIGMA; 3],
        smoothness: CONFUSABLE_SMOOTHNESS,
        seed,
    }
}

impl PhantomSpec {
    pub fn shape(&self) -> Result<GridShape> {
        GridShape::new(self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        if !(2..=4).contains(&self.num_labels) {
            return Err(Error::invalid("phantoms support 2 to 4 labels"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("phantom needs at least one channel"));
        }
        if self.class_means.len() != self.num_labels
            || self.class_means.iter().any(|r| r.len() != self.channels)
        {
            return Err(Error::invalid("class_means must be num_labels x channels"));
        }
        if self.class_means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("class means must be finite"));
        }
        for i in 0..self.num_labels {
            for j in 0..i {
                if self.class_means[i] == self.class_means[j] {
                    return Err(Error::invalid(format!(
                        "labels {j} and {i} have identical mean vectors"
                    )));
                }
            }
        }
        if self.noise_sigma.len() != self.channels
            || self
                .noise_sigma
                .iter()
                .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::invalid(
                "noise_sigma must hold one value >= 0 per channel",
            ));
        }
        if !(0.0..1.0).contains(&self.smoothness) {
            return Err(Error::invalid("smoothness must be in [0, 1)"));
        }
        Ok(())
    }
}

/// A smooth random scalar field in `[-1, 1]` built from a few sinusoids
/// with low integer frequencies over the unit cube.
#[derive(Clone, Debug)]
struct SmoothField {
    waves: [([f64; 3], f64, f64); WAVES],
    norm: f64,
}

impl SmoothField {
    fn new(rng: &CounterRng, stream: u64) -> Self {
        let mut g = rng.stream(stream);
        let mut waves = [([0.0; 3], 0.0, 0.0); WAVES];
        let mut norm = 0.0;
        for w in waves.iter_mut() {
            for f in w.0.iter_mut() {
                *f = (g.below(3) + 1) as f64;
            }
            w.1 = g.next_f64() * TAU;
            w.2 = 0.5 + g.next_f64();
            norm += w.2;
        }
        Self { waves, norm }
    }

    /// Value at normalized coordinates `t` in `[0, 1]^3`.
    fn at(&self, t: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for (f, phase, amp) in &self.waves {
            s += amp * (TAU * (f[0] * t[0] + f[1] * t[1] + f[2] * t[2]) + phase).sin();
        }
        s / self.norm
    }
}

fn normalized(shape: GridShape, index: usize) -> [f64; 3] {
    let (x, y, z) = shape.coords(index);
    let dims = shape.dims();
    let norm = |v: usize, n: usize| {
        if n > 1 {
            v as f64 / (n - 1) as f64
        } else {
            0.5
        }
    };
    [norm(x, dims[0]), norm(y, dims[1]), norm(z, dims[2])]
}

/// Ground-truth labels of a phantom.
pub fn phantom_labels(spec: &PhantomSpec) -> Result<LabelVolume> {
    spec.validate()?;
    let shape = spec.shape()?;
    let rng = CounterRng::new(spec.seed);
    let nuclei = spec.num_labels - 1;
    let fields: Vec<SmoothField> = (1..=nuclei as u64)
        .map(|j| SmoothField::new(&rng, j))
        .collect();
    let mut labels = vec![0u8; shape.len()];
    for (i, lab) in labels.iter_mut().enumerate() {
        let t = normalized(shape, i);
        for (j, field) in fields.iter().enumerate() {
            let (center, radii) = NUCLEI[j];
            let q: f64 = (0..3)
                .map(|a| ((t[a] - center[a]) / radii[a]).powi(2))
                .sum();
            let threshold = if spec.smoothness > 0.0 {
                1.0 + spec.smoothness * field.at(t)
            } else {
                1.0
            };
            if q < threshold {
                *lab = (j + 1) as u8;
                break;
            }
        }
    }
    let lv = LabelVolume::new(shape, spec.num_labels, labels)?;
    let hist = lv.histogram();
    if let Some(j) = (1..spec.num_labels).find(|&j| hist[j] == 0) {
        return Err(Error::invalid(format!(
            "nucleus {j} does not fit in a {:?} grid",
            spec.dims
        )));
    }
    Ok(lv)
}

/// Generates the phantom volume and its ground-truth labels.
pub fn generate(spec: &PhantomSpec) -> Result<(MultiChannelVolume, LabelVolume)> {
    let labels = phantom_labels(spec)?;
    let shape = labels.shape();
    let rng = CounterRng::new(spec.seed);
    let n = shape.len();
    let mut data = vec![0f32; n * spec.channels];
    for k in 0..spec.channels {
        let sigma = spec.noise_sigma[k];
        let out = &mut data[k * n..(k + 1) * n];
        for (i, (v, &l)) in out.iter_mut().zip(labels.labels()).enumerate() {
            let mean = spec.class_means[l as usize][k];
            let noise = if sigma > 0.0 {
                sigma * rng.normal_at(100 + k as u64, i as u64)
            } else {
                0.0
            };
            *v = (mean + noise) as f32;
        }
    }
    Ok((MultiChannelVolume::new(shape, spec.channels, data)?, labels))
}

/// Peak warp of the canonical subjects, in voxels.
pub const SUBJECT_AMPLITUDE: f64 = 4.0;

/// Extra noise of the canonical subjects. Resampling smooths the template
/// noise, so this has to be about as large as the template noise for
/// subjects to come out noisier than the template.
pub const SUBJECT_NOISE: f64 = 2.0;

/// Seed of the independent test realization paired with a template seed.
pub fn test_seed(template_seed: u64) -> u64 {
    template_seed.wrapping_add(1000)
}

/// Seed of the `i`-th canonical subject derived from a template seed.
pub fn subject_seed(template_seed: u64, i: usize) -> u64 {
    template_seed.wrapping_add(500 + i as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    /// Peak displacement, in voxels.
    pub deform_amplitude: f64,
    /// Standard deviation of the added noise, all channels.
    pub extra_noise: f64,
    pub seed: u64,
}

impl SubjectSpec {
    pub fn canonical(seed: u64) -> Self {
        Self {
            deform_amplitude: SUBJECT_AMPLITUDE,
            extra_noise: SUBJECT_NOISE,
            seed,
        }
    }
}

/// Derives a "single subject" from a template pair: a smooth seeded warp
/// (nearest-neighbor for labels, trilinear for intensities) followed by
/// extra Gaussian noise. The displacement vanishes on the grid faces.
pub fn make_subject(
    volume: &MultiChannelVolume,
    labels: &LabelVolume,
    subject: &SubjectSpec,
) -> Result<(MultiChannelVolume, LabelVolume)> {
    let shape = volume.shape();
    if labels.shape() != shape {
        return Err(Error::shape("template volume and labels differ in grid"));
    }
    if !(subject.deform_amplitude.is_finite() && subject.deform_amplitude >= 0.0) {
        return Err(Error::invalid("deform amplitude must be >= 0"));
    }
    if !(subject.extra_noise.is_finite() && subject.extra_noise >= 0.0) {
        return Err(Error::invalid("extra noise must be >= 0"));
    }
    let rng = CounterRng::new(subject.seed);
    let fields: Vec<SmoothField> = (0..3).map(|a| SmoothField::new(&rng, 300 + a)).collect();
    let dims = shape.dims();
    let n = shape.len();
    let channels = volume.channels();
    let mut out_labels = vec![0u8; n];
    let mut out = vec![0f32; n * channels];

    for i in 0..n {
        let t = normalized(shape, i);
        let (x, y, z) = shape.coords(i);
        let window: f64 = (0..3)
            .filter(|&a| dims[a] > 1)
            .map(|a| (PI * t[a]).sin())
            .product();
        let mut pos = [x as f64, y as f64, z as f64];
        for a in 0..3 {
            if dims[a] > 1 && subject.deform_amplitude > 0.0 {
                pos[a] += subject.deform_amplitude * window * fields[a].at(t);
            }
            let hi = (dims[a] - 1) as f64;
            if !(0.0..=hi).contains(&pos[a]) {
                return Err(Error::invalid(format!(
                    "deformation moves voxel {i} outside the grid"
                )));
            }
        }
        let nearest = shape.index(
            pos[0].round() as usize,
            pos[1].round() as usize,
            pos[2].round() as usize,
        );
        out_labels[i] = labels.labels()[nearest];

        let base = pos.map(|p| p.floor() as usize);
        let frac = [
            pos[0] - base[0] as f64,
            pos[1] - base[1] as f64,
            pos[2] - base[2] as f64,
        ];
        for c in 0..channels {
            let data = volume.channel(c);
            let mut v = 0.0;
            for corner in 0..8 {
                let mut w = 1.0;
                let mut idx = [0usize; 3];
                for a in 0..3 {
                    let up = (corner >> a) & 1 == 1;
                    w *= if up { frac[a] } else { 1.0 - frac[a] };
                    idx[a] = if up {
                        (base[a] + 1).min(dims[a] - 1)
                    } else {
                        base[a]
                    };
                }
                if w != 0.0 {
                    v += w * data[shape.index(idx[0], idx[1], idx[2])] as f64;
                }
            }
            if subject.extra_noise > 0.0 {
                v += subject.extra_noise * rng.normal_at(200 + c as u64, i as u64);
            }
            out[c * n + i] = v as f32;
        }
    }
    Ok((
        MultiChannelVolume::new(shape, channels, out)?,
        LabelVolume::new(shape, labels.num_labels(), out_labels)?,
    ))
}
