//! Supervised posterior estimation from labeled feature vectors.
//!
//! Both classifiers work in the (standardized) feature space with the
//! Euclidean metric:
//!
//! * k-NN: the posterior of label `l` is the fraction of the `k` nearest
//!   training rows carrying `l`.
//! * Parzen: the posterior of `l` is proportional to
//!   `sum_{i: y_i = l} exp(-|psi - psi_i|^2 / (2 h^2))`.

mod kdtree;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kdtree::{squared_distance, KdTree};

use crate::features::FeatureMatrix;
use crate::io::{self, Matrix};
use crate::rng::CounterRng;
use crate::volume::{GridShape, PosteriorField};
use crate::{Error, Result};

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_H: f64 = 0.1668;

/// Labeled training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    features: FeatureMatrix,
    labels: Vec<u8>,
    num_labels: usize,
}

impl TrainingSet {
    pub fn new(features: FeatureMatrix, labels: Vec<u8>, num_labels: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_labels < 2 {
            return Err(Error::invalid("need at least two labels"));
        }
        let mut counts = vec![0usize; num_labels];
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= num_labels {
                return Err(Error::LabelOutOfRange {
                    index: i,
                    label: l,
                    num_labels,
                });
            }
            counts[l as usize] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(empty));
        }
        Ok(Self {
            features,
            labels,
            num_labels,
        })
    }

    /// Training rows from the voxels of `features`, labeled by `labels`
    /// (indexed by voxel).
    pub fn from_voxels(
        features: FeatureMatrix,
        voxel_labels: &[u8],
        num_labels: usize,
    ) -> Result<Self> {
        let labels = features
            .voxel_index()
            .iter()
            .map(|&v| {
                voxel_labels
                    .get(v)
                    .copied()
                    .ok_or_else(|| Error::shape("label volume smaller than feature grid"))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(features, labels, num_labels)
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.num_labels];
        for &l in &self.labels {
            f[l as usize] += 1.0;
        }
        let n = self.labels.len() as f64;
        f.iter_mut().for_each(|v| *v /= n);
        f
    }
}

/// Keeps at most `cap` rows per label, chosen uniformly with a seeded
/// shuffle. Surviving rows keep their original relative order.
pub fn subsample_training(t: &TrainingSet, cap: usize, seed: u64) -> Result<TrainingSet> {
    if cap == 0 {
        return Err(Error::invalid("per-class cap must be at least 1"));
    }
    let rng = CounterRng::new(seed);
    let mut keep = Vec::new();
    for label in 0..t.num_labels {
        let mut rows: Vec<usize> = (0..t.rows())
            .filter(|&r| t.labels[r] as usize == label)
            .collect();
        if rows.len() > cap {
            // Partial Fisher-Yates: the first `cap` slots become the sample.
            let mut g = rng.stream(label as u64);
            for i in 0..cap {
                let j = i + g.below((rows.len() - i) as u64) as usize;
                rows.swap(i, j);
            }
            rows.truncate(cap);
        }
        keep.extend(rows);
    }
    keep.sort_unstable();
    let labels = keep.iter().map(|&r| t.labels[r]).collect();
    TrainingSet::new(t.features.select_rows(&keep), labels, t.num_labels)
}

/// Per-row posteriors for the rows of a feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors {
    pub num_labels: usize,
    /// Row-major, `rows x num_labels`.
    pub values: Vec<f64>,
    /// Voxel index of each row.
    pub voxel_index: Vec<usize>,
}

impl Posteriors {
    pub fn rows(&self) -> usize {
        self.voxel_index.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_labels..(i + 1) * self.num_labels]
    }

    /// Scatters rows onto a grid. Voxels without a row get a one-hot
    /// background posterior.
    pub fn into_field(self, shape: GridShape) -> Result<PosteriorField> {
        let l = self.num_labels;
        if self.rows() == shape.len() && self.voxel_index.iter().enumerate().all(|(i, &v)| i == v) {
            return PosteriorField::from_raw(shape, l, self.values);
        }
        let mut values = vec![0.0; shape.len() * l];
        for row in values.chunks_exact_mut(l) {
            row[0] = 1.0;
        }
        for (i, &v) in self.voxel_index.iter().enumerate() {
            if v >= shape.len() {
                return Err(Error::shape("posterior row outside the grid"));
            }
            values[v * l..(v + 1) * l].copy_from_slice(&self.values[i * l..(i + 1) * l]);
        }
        PosteriorField::from_raw(shape, l, values)
    }
}

fn check_dims(train: &TrainingSet, f: &FeatureMatrix) -> Result<()> {
    if f.cols() != train.features.cols() {
        return Err(Error::shape(format!(
            "query has {} features, model was trained on {}",
            f.cols(),
            train.features.cols()
        )));
    }
    Ok(())
}

fn predict_rows<F>(f: &FeatureMatrix, num_labels: usize, per_row: F) -> Posteriors
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let mut values = vec![0.0; f.rows() * num_labels];
    values
        .par_chunks_mut(num_labels)
        .enumerate()
        .for_each(|(i, out)| per_row(f.row(i), out));
    Posteriors {
        num_labels,
        values,
        voxel_index: f.voxel_index().to_vec(),
    }
}

#[derive(Clone, Debug)]
pub struct KnnModel {
    train: TrainingSet,
    k: usize,
    tree: KdTree,
}

pub fn train_knn(train: TrainingSet, k: usize) -> Result<KnnModel> {
    if k == 0 || k > train.rows() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={}",
            train.rows()
        )));
    }
    let tree = KdTree::build(train.features.values(), train.features.cols());
    Ok(KnnModel { train, k, tree })
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn training(&self) -> &TrainingSet {
        &self.train
    }

    /// The `k` nearest training rows, nearest first; ties go to the lower row.
    pub fn neighbors(&self, query: &[f64]) -> Vec<(f64, usize)> {
        self.tree
            .nearest(self.train.features.values(), query, self.k)
    }

    pub fn predict(&self, f: &FeatureMatrix) -> Result<Posteriors> {
        check_dims(&self.train, f)?;
        let k = self.k as f64;
        Ok(predict_rows(f, self.train.num_labels, |q, out| {
            let mut counts = [0usize; 256];
            for (_, row) in self.neighbors(q) {
                counts[self.train.labels[row] as usize] += 1;
            }
            for (o, &c) in out.iter_mut().zip(&counts) {
                *o = c as f64 / k;
            }
        }))
    }
}

#[derive(Clone, Debug)]
pub struct ParzenModel {
    train: TrainingSet,
    h: f64,
}

pub fn train_parzen(train: TrainingSet, h: f64) -> Result<ParzenModel> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!(
            "kernel width must be positive, got {h}"
        )));
    }
    Ok(ParzenModel { train, h })
}

impl ParzenModel {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn training(&self) -> &TrainingSet {
        &self.train
    }

    /// Posterior for one query. The smallest squared distance is factored
    /// out of every exponent so the nearest row contributes `exp(0)`.
    pub fn posterior_row(&self, q: &[f64], out: &mut [f64]) {
        let feats = &self.train.features;
        let d2: Vec<f64> = feats.iter_rows().map(|r| squared_distance(q, r)).collect();
        let dmin = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let inv = 1.0 / (2.0 * self.h * self.h);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (d, &l) in d2.iter().zip(&self.train.labels) {
            out[l as usize] += (-(d - dmin) * inv).exp();
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 && total.is_finite() {
            out.iter_mut().for_each(|o| *o /= total);
        } else {
            let u = 1.0 / out.len() as f64;
            out.iter_mut().for_each(|o| *o = u);
        }
    }

    pub fn predict(&self, f: &FeatureMatrix) -> Result<Posteriors> {
        check_dims(&self.train, f)?;
        Ok(predict_rows(f, self.train.num_labels, |q, out| {
            self.posterior_row(q, out)
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Knn,
    Parzen,
}

/// A trained classifier of either kind.
#[derive(Clone, Debug)]
pub enum Model {
    Knn(KnnModel),
    Parzen(ParzenModel),
}

impl Model {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Model::Knn(_) => ClassifierKind::Knn,
            Model::Parzen(_) => ClassifierKind::Parzen,
        }
    }

    pub fn training(&self) -> &TrainingSet {
        match self {
            Model::Knn(m) => &m.train,
            Model::Parzen(m) => &m.train,
        }
    }

    pub fn predict(&self, f: &FeatureMatrix) -> Result<Posteriors> {
        match self {
            Model::Knn(m) => m.predict(f),
            Model::Parzen(m) => m.predict(f),
        }
    }

    pub fn manifest(&self) -> ModelManifest {
        let t = self.training();
        let (k, h) = match self {
            Model::Knn(m) => (Some(m.k), None),
            Model::Parzen(m) => (None, Some(m.h)),
        };
        ModelManifest {
            kind: self.kind(),
            k,
            h,
            num_labels: t.num_labels,
            features: t.features.cols(),
            rows: t.rows(),
        }
    }

    /// Writes `model.json`, `train_features.mat.*` and `train_labels.mat.*`
    /// into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let t = self.training();
        io::save_matrix_f64(
            t.rows(),
            t.features.cols(),
            t.features.values(),
            &dir.join("train_features"),
        )?;
        io::save_matrix_u8(t.rows(), 1, &t.labels, &dir.join("train_labels"))?;
        let mut text = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        text.push(b'\n');
        let path = dir.join("model.json");
        fs::write(&path, text).map_err(|source| Error::Io { path, source })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let text = fs::read(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let manifest: ModelManifest = serde_json::from_slice(&text).map_err(|e| Error::Header {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let features = match io::load_matrix(&dir.join("train_features"))? {
            Matrix::F64 { rows, cols, data }
                if rows == manifest.rows && cols == manifest.features =>
            {
                FeatureMatrix::from_rows(cols, data)?
            }
            _ => return Err(Error::shape("training features disagree with the manifest")),
        };
        let labels = match io::load_matrix(&dir.join("train_labels"))? {
            Matrix::U8 {
                rows,
                cols: 1,
                data,
            } if rows == manifest.rows => data,
            _ => return Err(Error::shape("training labels disagree with the manifest")),
        };
        let train = TrainingSet::new(features, labels, manifest.num_labels)?;
        match manifest.kind {
            ClassifierKind::Knn => Ok(Model::Knn(train_knn(
                train,
                manifest
                    .k
                    .ok_or_else(|| Error::invalid("k-NN manifest lacks k"))?,
            )?)),
            ClassifierKind::Parzen => Ok(Model::Parzen(train_parzen(
                train,
                manifest
                    .h
                    .ok_or_else(|| Error::invalid("Parzen manifest lacks h"))?,
            )?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: ClassifierKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub num_labels: usize,
    pub features: usize,
    pub rows: usize,
}
