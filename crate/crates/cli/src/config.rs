//! Run configuration: one JSON document, overridden key by key from the
//! command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use mcseg::classifiers::ClassifierKind;
use mcseg::experiments::ClassifierParams;
use mcseg::solver::{SolverConfig, TvMode};

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// JSON run configuration; flags take precedence over its keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Regularization weight (default 1 for knn, 5 for parzen).
    #[arg(long, global = true, value_name = "F")]
    pub lambda: Option<f64>,
    /// Prior weight in [0, 1]; enables the prior-weighted data term.
    #[arg(long, global = true, value_name = "F")]
    pub w: Option<f64>,
    #[arg(long, global = true, value_parser = parse_kind)]
    pub classifier: Option<ClassifierKind>,
    #[arg(long, global = true, value_name = "N")]
    pub k: Option<usize>,
    #[arg(long, global = true, value_name = "F")]
    pub h: Option<f64>,
    /// Comma-separated channel indices, e.g. `0,2`.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long = "tv-mode", global = true, value_name = "3d|2d")]
    pub tv_mode: Option<TvMode>,
}

fn parse_kind(s: &str) -> Result<ClassifierKind, String> {
    match s {
        "knn" => Ok(ClassifierKind::Knn),
        "parzen" => Ok(ClassifierKind::Parzen),
        _ => Err(format!("expected knn or parzen, got {s:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectPaths {
    pub volume: PathBuf,
    pub labels: PathBuf,
}

/// Keys of the configuration file. Paths are taken relative to the
/// working directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub template: Option<PathBuf>,
    pub template_labels: Option<PathBuf>,
    /// Volume to classify or segment.
    pub input: Option<PathBuf>,
    /// Reference labels of `input`.
    pub reference: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Model directory written by `train`.
    pub model: Option<PathBuf>,
    /// Labels whose one-hot encoding is blended in at weight `w`.
    pub prior: Option<PathBuf>,
    pub subjects: Vec<SubjectPaths>,
    pub out: Option<PathBuf>,
    pub classifier: ClassifierParams,
    pub solver: SolverConfig,
    pub channels: Option<Vec<usize>>,
    pub w: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub ws: Option<Vec<f64>>,
    pub save_posterior: bool,
}

/// Configuration after merging file and flags. `lambda` stays unset unless
/// given by either, since its default depends on the classifier.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: PipelineConfig,
    pub lambda: Option<f64>,
}

pub fn resolve(common: &CommonArgs) -> Result<Resolved> {
    let (mut cfg, mut lambda) = match &common.config {
        Some(path) => load_file(path)?,
        None => (PipelineConfig::default(), None),
    };
    if let Some(l) = common.lambda {
        lambda = Some(l);
    }
    if common.w.is_some() {
        cfg.w = common.w;
    }
    if let Some(kind) = common.classifier {
        cfg.classifier.kind = kind;
    }
    if let Some(k) = common.k {
        cfg.classifier.k = k;
    }
    if let Some(h) = common.h {
        cfg.classifier.h = h;
    }
    if let Some(seed) = common.seed {
        cfg.classifier.seed = seed;
    }
    if common.channels.is_some() {
        cfg.channels = common.channels.clone();
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if let Some(mode) = common.tv_mode {
        cfg.solver.tv_mode = mode;
    }
    if let Some(w) = cfg.w {
        if !(0.0..=1.0).contains(&w) {
            bail!("prior weight w must be in [0, 1], got {w}");
        }
    }
    if cfg.channels.as_ref().is_some_and(|c| c.is_empty()) {
        bail!("channel subset is empty");
    }
    Ok(Resolved { cfg, lambda })
}

fn load_file(path: &Path) -> Result<(PipelineConfig, Option<f64>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let lambda = raw.pointer("/solver/lambda").and_then(|v| v.as_f64());
    let cfg: PipelineConfig = serde_json::from_value(raw)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok((cfg, lambda))
}

impl Resolved {
    pub fn out_dir(&self) -> PathBuf {
        self.cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Solver settings with lambda resolved for `kind`.
    pub fn solver(&self, kind: ClassifierKind) -> SolverConfig {
        let params = ClassifierParams {
            kind,
            ..self.cfg.classifier.clone()
        };
        SolverConfig {
            lambda: self.lambda.unwrap_or_else(|| params.default_lambda()),
            ..self.cfg.solver.clone()
        }
    }
}

/// A required path: the flag value, else the config key, else an error
/// naming both.
pub fn required(
    flag: &Option<PathBuf>,
    from_cfg: &Option<PathBuf>,
    what: &str,
    key: &str,
) -> Result<PathBuf> {
    flag.clone().or_else(|| from_cfg.clone()).with_context(|| {
        format!(
            "no {what} given (flag --{} or config key {key:?})",
            key.replace('_', "-")
        )
    })
}
