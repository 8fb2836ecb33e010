//! End-to-end pipeline runs: train on a template, classify a test volume,
//! regularize with the convex solver and score against reference labels.
//! Also hosts the parameter sweeps (lambda, prior weight, channel subsets).

use serde::{Deserialize, Serialize};

use crate::classifiers::{
    self, subsample_training, ClassifierKind, Model, TrainingSet, DEFAULT_H, DEFAULT_K,
};
use crate::eval::{self, confusion, global_error};
use crate::features::{
    apply_standardization, extract_features, fit_standardization, ScalingMode, StandardizationStats,
};
use crate::solver::{
    build_data_term, build_weighted_data_term, solve, Diagnostics, SolverConfig, KNN_LAMBDA,
    PARZEN_LAMBDA,
};
use crate::volume::{argmax_labels, LabelVolume, MultiChannelVolume, PosteriorField, SimplexField};
use crate::{Error, Result};

pub const DEFAULT_PER_CLASS_CAP: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierParams {
    pub kind: ClassifierKind,
    pub k: usize,
    pub h: f64,
    /// Training rows kept per label; `None` keeps everything.
    pub per_class_cap: Option<usize>,
    pub seed: u64,
    pub scaling: ScalingMode,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Knn,
            k: DEFAULT_K,
            h: DEFAULT_H,
            per_class_cap: Some(DEFAULT_PER_CLASS_CAP),
            seed: 0,
            scaling: ScalingMode::TotalVariance,
        }
    }
}

impl ClassifierParams {
    pub fn knn() -> Self {
        Self::default()
    }

    pub fn parzen() -> Self {
        Self {
            kind: ClassifierKind::Parzen,
            ..Self::default()
        }
    }

    /// Regularization weight used when none is configured.
    pub fn default_lambda(&self) -> f64 {
        match self.kind {
            ClassifierKind::Knn => KNN_LAMBDA,
            ClassifierKind::Parzen => PARZEN_LAMBDA,
        }
    }
}

/// A trained classifier with the standardization fitted on its training data.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub stats: StandardizationStats,
}

pub fn train(
    volume: &MultiChannelVolume,
    labels: &LabelVolume,
    mask: Option<&LabelVolume>,
    params: &ClassifierParams,
) -> Result<Trained> {
    if volume.shape() != labels.shape() {
        return Err(Error::shape("template volume and labels differ in grid"));
    }
    let features = extract_features(volume, mask)?;
    let stats = fit_standardization(&features, params.scaling)?;
    let standardized = apply_standardization(&features, &stats)?;
    let mut set = TrainingSet::from_voxels(standardized, labels.labels(), labels.num_labels())?;
    if let Some(cap) = params.per_class_cap {
        set = subsample_training(&set, cap, params.seed)?;
    }
    let model = match params.kind {
        ClassifierKind::Knn => Model::Knn(classifiers::train_knn(set, params.k)?),
        ClassifierKind::Parzen => Model::Parzen(classifiers::train_parzen(set, params.h)?),
    };
    Ok(Trained { model, stats })
}

impl Trained {
    /// Posterior field of `volume`; voxels outside `mask` get background.
    pub fn classify(
        &self,
        volume: &MultiChannelVolume,
        mask: Option<&LabelVolume>,
    ) -> Result<PosteriorField> {
        let features = extract_features(volume, mask)?;
        let standardized = apply_standardization(&features, &self.stats)?;
        self.model
            .predict(&standardized)?
            .into_field(volume.shape())
    }
}

/// Solves the convex problem on a posterior field (blended with `prior` at
/// weight `w` when given) and rounds to hard labels.
pub fn segment(
    posterior: &PosteriorField,
    cfg: &SolverConfig,
    prior: Option<(&SimplexField, f64)>,
) -> Result<(LabelVolume, SimplexField, Diagnostics)> {
    let dt = match prior {
        Some((n, w)) => build_weighted_data_term(posterior, n, w, cfg.epsilon_clamp)?,
        None => build_data_term(posterior, cfg.epsilon_clamp)?,
    };
    let (u, diag) = solve(&dt, cfg, Some(posterior))?;
    Ok((argmax_labels(&u), u, diag))
}

pub fn error_pct(
    pred: &LabelVolume,
    reference: &LabelVolume,
    mask: Option<&LabelVolume>,
) -> Result<f64> {
    global_error(&confusion(pred, reference, mask)?)
}

/// Template and test pairs plus the run settings shared by every sweep.
#[derive(Clone, Debug)]
pub struct ExperimentInputs {
    pub template: MultiChannelVolume,
    pub template_labels: LabelVolume,
    pub test: MultiChannelVolume,
    pub test_labels: LabelVolume,
    /// Extraction and evaluation region; `None` is the whole grid.
    pub mask: Option<LabelVolume>,
    pub classifier: ClassifierParams,
    pub solver: SolverConfig,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Winner-takes-all error of the posteriors, percent.
    pub classification_error: f64,
    /// Error after convex segmentation, percent.
    pub segmentation_error: f64,
    pub segmentation: LabelVolume,
    pub diagnostics: Diagnostics,
}

impl ExperimentInputs {
    fn mask(&self) -> Option<&LabelVolume> {
        self.mask.as_ref()
    }

    pub fn train(&self) -> Result<Trained> {
        train(
            &self.template,
            &self.template_labels,
            self.mask(),
            &self.classifier,
        )
    }

    pub fn test_posterior(&self) -> Result<PosteriorField> {
        self.train()?.classify(&self.test, self.mask())
    }

    /// Classification followed by convex segmentation at `cfg.lambda`.
    pub fn run(&self) -> Result<RunResult> {
        let posterior = self.test_posterior()?;
        self.run_on(&posterior, &self.solver)
    }

    pub fn run_on(&self, posterior: &PosteriorField, cfg: &SolverConfig) -> Result<RunResult> {
        let wta = argmax_labels(posterior);
        let classification_error = error_pct(&wta, &self.test_labels, self.mask())?;
        let (segmentation, _, diagnostics) = segment(posterior, cfg, None)?;
        let segmentation_error = error_pct(&segmentation, &self.test_labels, self.mask())?;
        Ok(RunResult {
            classification_error,
            segmentation_error,
            segmentation,
            diagnostics,
        })
    }

    /// Restricts both volumes to a channel subset.
    pub fn with_channels(&self, channels: &[usize]) -> Result<Self> {
        Ok(Self {
            template: self.template.select_channels(channels)?,
            test: self.test.select_channels(channels)?,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    /// Global error in percent, or the failure message.
    pub error: Result<f64, String>,
}

/// One convex segmentation per lambda on a shared posterior field (the
/// classification step does not depend on lambda).
pub fn sweep_lambda(inputs: &ExperimentInputs, lambdas: &[f64]) -> Result<Vec<LambdaRow>> {
    let posterior = inputs.test_posterior()?;
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let cfg = SolverConfig {
                lambda,
                ..inputs.solver.clone()
            };
            let error = segment(&posterior, &cfg, None)
                .and_then(|(labels, _, _)| error_pct(&labels, &inputs.test_labels, inputs.mask()))
                .map_err(|e| e.to_string());
            LambdaRow { lambda, error }
        })
        .collect())
}

/// A test subject with its own reference labels.
#[derive(Clone, Debug)]
pub struct Subject {
    pub volume: MultiChannelVolume,
    pub labels: LabelVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WRow {
    pub w: f64,
    /// (mean, S.E.M.) of the global error across subjects, or the failure.
    pub error: Result<(f64, f64), String>,
    pub per_subject: Vec<f64>,
}

/// Prior-weighted segmentation of every subject for each `w`.
pub fn sweep_w(
    trained: &Trained,
    subjects: &[Subject],
    prior: &SimplexField,
    ws: &[f64],
    cfg: &SolverConfig,
    mask: Option<&LabelVolume>,
) -> Result<Vec<WRow>> {
    if subjects.is_empty() {
        return Err(Error::invalid("w sweep needs at least one subject"));
    }
    let posteriors = subjects
        .iter()
        .map(|s| trained.classify(&s.volume, mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(ws
        .iter()
        .map(|&w| {
            let errs: Result<Vec<f64>> = subjects
                .iter()
                .zip(&posteriors)
                .map(|(s, p)| {
                    let (labels, _, _) = segment(p, cfg, Some((prior, w)))?;
                    error_pct(&labels, &s.labels, mask)
                })
                .collect();
            match errs {
                Ok(errs) => WRow {
                    w,
                    error: Ok(eval::mean_sem(&errs)),
                    per_subject: errs,
                },
                Err(e) => WRow {
                    w,
                    error: Err(e.to_string()),
                    per_subject: Vec::new(),
                },
            }
        })
        .collect())
}

/// All nonempty channel subsets, by size and then lexicographically.
pub fn channel_subsets(channels: usize) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << channels))
        .map(|mask| (0..channels).filter(|&c| mask >> c & 1 == 1).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsetRow {
    pub channels: Vec<usize>,
    pub result: Result<SubsetErrors, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubsetErrors {
    pub classification_error: f64,
    pub segmentation_error: f64,
}

/// Re-extracts, retrains and re-segments for every channel subset.
pub fn ablate_contrasts(inputs: &ExperimentInputs, subsets: &[Vec<usize>]) -> Vec<SubsetRow> {
    subsets
        .iter()
        .map(|channels| {
            let result = inputs
                .with_channels(channels)
                .and_then(|sub| sub.run())
                .map(|r| SubsetErrors {
                    classification_error: r.classification_error,
                    segmentation_error: r.segmentation_error,
                })
                .map_err(|e| e.to_string());
            SubsetRow {
                channels: channels.clone(),
                result,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_of_three() {
        let s = channel_subsets(3);
        assert_eq!(s.len(), 7);
        assert_eq!(s[0], vec![0]);
        assert_eq!(s[3], vec![0, 1]);
        assert_eq!(s[6], vec![0, 1, 2]);
    }
}
