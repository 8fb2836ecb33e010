use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mcseg::classifiers::Model;
use mcseg::eval;
use mcseg::experiments::{self, ExperimentInputs, Subject, Trained};
use mcseg::features::StandardizationStats;
use mcseg::io;
use mcseg::phantom::{self, PhantomSpec, SubjectSpec};
use mcseg::volume::{argmax_labels, one_hot, LabelField};
use mcseg::{LabelVolume, MultiChannelVolume};

use crate::config::{required, Resolved};
use crate::slices::{self, Axis};

pub const PREPROCESSING_FILE: &str = "preprocessing.json";
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.01, 0.3, 1.0, 3.0, 10.0, 30.0];
pub const DEFAULT_WS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Everything applied to a volume before classification, stored next to
/// the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    pub channels: Option<Vec<usize>>,
    pub standardization: StandardizationStats,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_real(path: &Path, what: &str, channels: Option<&[usize]>) -> Result<MultiChannelVolume> {
    let v = io::load_multichannel(path)
        .with_context(|| format!("loading {what} {}", path.display()))?;
    match channels {
        Some(c) => v
            .select_channels(c)
            .with_context(|| format!("selecting channels {c:?} of {what}")),
        None => Ok(v),
    }
}

fn load_labels(path: &Path, what: &str) -> Result<LabelVolume> {
    io::load_labels(path).with_context(|| format!("loading {what} {}", path.display()))
}

fn load_mask(r: &Resolved, flag: &Option<PathBuf>) -> Result<Option<LabelVolume>> {
    flag.clone()
        .or_else(|| r.cfg.mask.clone())
        .map(|p| load_labels(&p, "mask"))
        .transpose()
}

pub struct TrainArgs {
    pub template: Option<PathBuf>,
    pub template_labels: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

pub fn train(r: &Resolved, a: &TrainArgs) -> Result<()> {
    let channels = r.cfg.channels.as_deref();
    let tpath = required(&a.template, &r.cfg.template, "template volume", "template")?;
    let lpath = required(
        &a.template_labels,
        &r.cfg.template_labels,
        "template labels",
        "template_labels",
    )?;
    let volume = load_real(&tpath, "template volume", channels)?;
    let labels = load_labels(&lpath, "template labels")?;
    let mask = load_mask(r, &a.mask)?;
    let trained = experiments::train(&volume, &labels, mask.as_ref(), &r.cfg.classifier)
        .context("training classifier")?;
    let dir = r.out_dir();
    create_dir(&dir)?;
    trained.model.save(&dir).context("saving model")?;
    let pre = Preprocessing {
        channels: r.cfg.channels.clone(),
        standardization: trained.stats.clone(),
    };
    write_text(
        &dir.join(PREPROCESSING_FILE),
        &serde_json::to_string_pretty(&pre)?,
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&trained.model.manifest())?
    );
    Ok(())
}

fn load_model(dir: &Path) -> Result<(Trained, Preprocessing)> {
    let model =
        Model::load(dir).with_context(|| format!("loading model from {}", dir.display()))?;
    let path = dir.join(PREPROCESSING_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let pre: Preprocessing =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let trained = Trained {
        model,
        stats: pre.standardization.clone(),
    };
    Ok((trained, pre))
}

pub struct ApplyArgs {
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub save_posterior: bool,
}

/// Loads the model and input and returns the posterior field.
fn posterior_for(r: &Resolved, a: &ApplyArgs) -> Result<(Trained, LabelField)> {
    let mdir = required(&a.model, &r.cfg.model, "model directory", "model")?;
    let (trained, pre) = load_model(&mdir)?;
    let channels = r.cfg.channels.clone().or(pre.channels);
    let ipath = required(&a.input, &r.cfg.input, "input volume", "input")?;
    let volume = load_real(&ipath, "input volume", channels.as_deref())?;
    let mask = load_mask(r, &a.mask)?;
    let posterior = trained
        .classify(&volume, mask.as_ref())
        .context("classifying input volume")?;
    Ok((trained, posterior))
}

fn save_posterior(p: &LabelField, dir: &Path) -> Result<()> {
    let path = dir.join("posterior");
    io::save_matrix_f64(p.shape().len(), p.num_labels(), p.values(), &path)
        .with_context(|| format!("writing {}", path.display()))
}

fn save_label_volume(l: &LabelVolume, dir: &Path) -> Result<()> {
    let path = dir.join("labels");
    io::save_labels(l, &path).with_context(|| format!("writing {}", path.display()))
}

pub fn classify(r: &Resolved, a: &ApplyArgs) -> Result<()> {
    let (_, posterior) = posterior_for(r, a)?;
    let labels = argmax_labels(&posterior);
    let dir = r.out_dir();
    create_dir(&dir)?;
    save_label_volume(&labels, &dir)?;
    save_posterior(&posterior, &dir)?;
    println!("histogram {:?}", labels.histogram());
    Ok(())
}

pub fn segment(r: &Resolved, a: &ApplyArgs) -> Result<()> {
    let (trained, posterior) = posterior_for(r, a)?;
    let cfg = r.solver(trained.model.kind());
    let prior = match r.cfg.w {
        Some(w) => {
            let ppath = required(&a.prior, &r.cfg.prior, "prior labels for --w", "prior")?;
            Some((one_hot(&load_labels(&ppath, "prior labels")?), w))
        }
        None => None,
    };
    let (labels, _, diag) =
        experiments::segment(&posterior, &cfg, prior.as_ref().map(|(n, w)| (n, *w)))
            .context("convex segmentation")?;
    let dir = r.out_dir();
    create_dir(&dir)?;
    save_label_volume(&labels, &dir)?;
    write_text(&dir.join("diagnostics.csv"), &diag.to_csv())?;
    if a.save_posterior || r.cfg.save_posterior {
        save_posterior(&posterior, &dir)?;
    }
    println!(
        "lambda {} iterations {} converged {} gap {:.3e}",
        cfg.lambda,
        diag.iterations(),
        diag.converged,
        diag.final_gap().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub struct EvaluateArgs {
    pub pred: PathBuf,
    pub reference: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

pub fn evaluate(r: &Resolved, a: &EvaluateArgs) -> Result<()> {
    let pred = load_labels(&a.pred, "predicted labels")?;
    let rpath = required(
        &a.reference,
        &r.cfg.reference,
        "reference labels",
        "reference",
    )?;
    let reference = load_labels(&rpath, "reference labels")?;
    let mask = load_mask(r, &a.mask)?;
    let cm = eval::confusion(&pred, &reference, mask.as_ref()).context("comparing labels")?;
    let report = eval::report(&cm)?;
    let dir = r.out_dir();
    create_dir(&dir)?;
    write_text(
        &dir.join("metrics.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    write_text(&dir.join("confusion.csv"), &cm.to_csv())?;
    print!("{}", report.to_text());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepKind {
    Lambda,
    W,
    Contrasts,
}

pub struct SweepArgs {
    pub kind: SweepKind,
    pub template: Option<PathBuf>,
    pub template_labels: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    /// Flat (volume, labels) pairs.
    pub subjects: Vec<PathBuf>,
    pub values: Option<Vec<f64>>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn status(err: Option<&String>) -> String {
    err.map_or("ok".to_string(), |e| format!("failed: {e}"))
}

pub fn sweep(r: &Resolved, a: &SweepArgs) -> Result<()> {
    let channels = r.cfg.channels.as_deref();
    let tpath = required(&a.template, &r.cfg.template, "template volume", "template")?;
    let lpath = required(
        &a.template_labels,
        &r.cfg.template_labels,
        "template labels",
        "template_labels",
    )?;
    let template = load_real(&tpath, "template volume", channels)?;
    let template_labels = load_labels(&lpath, "template labels")?;
    let mask = load_mask(r, &a.mask)?;
    let solver = r.solver(r.cfg.classifier.kind);
    let dir = r.out_dir();
    create_dir(&dir)?;

    let test_inputs = || -> Result<ExperimentInputs> {
        let ipath = required(&a.input, &r.cfg.input, "test volume", "input")?;
        let rpath = required(
            &a.reference,
            &r.cfg.reference,
            "test reference labels",
            "reference",
        )?;
        Ok(ExperimentInputs {
            template: template.clone(),
            template_labels: template_labels.clone(),
            test: load_real(&ipath, "test volume", channels)?,
            test_labels: load_labels(&rpath, "test reference labels")?,
            mask: mask.clone(),
            classifier: r.cfg.classifier.clone(),
            solver: solver.clone(),
        })
    };

    let path = match a.kind {
        SweepKind::Lambda => {
            let lambdas = a
                .values
                .clone()
                .or(r.cfg.lambdas.clone())
                .unwrap_or(DEFAULT_LAMBDAS.to_vec());
            let rows =
                experiments::sweep_lambda(&test_inputs()?, &lambdas).context("lambda sweep")?;
            let path = dir.join("sweep_lambda.csv");
            let mut w = csv_writer(&path)?;
            w.write_record(["lambda", "error_pct", "status"])?;
            for row in &rows {
                let e = row.error.as_ref();
                w.write_record([
                    row.lambda.to_string(),
                    fmt_opt(e.ok().copied()),
                    status(e.err()),
                ])?;
            }
            w.flush()?;
            path
        }
        SweepKind::W => {
            let ws = a
                .values
                .clone()
                .or(r.cfg.ws.clone())
                .unwrap_or(DEFAULT_WS.to_vec());
            if let Some(w) = ws.iter().find(|w| !(0.0..=1.0).contains(*w)) {
                bail!("prior weight {w} outside [0, 1]");
            }
            let mut subjects = Vec::new();
            let pairs: Vec<(PathBuf, PathBuf)> = if a.subjects.is_empty() {
                r.cfg
                    .subjects
                    .iter()
                    .map(|s| (s.volume.clone(), s.labels.clone()))
                    .collect()
            } else {
                a.subjects
                    .chunks(2)
                    .map(|c| (c[0].clone(), c[1].clone()))
                    .collect()
            };
            if pairs.is_empty() {
                bail!("w sweep needs subjects (flag --subject VOLUME LABELS or config key \"subjects\")");
            }
            for (v, l) in &pairs {
                subjects.push(Subject {
                    volume: load_real(v, "subject volume", channels)?,
                    labels: load_labels(l, "subject labels")?,
                });
            }
            let prior_labels = match a.prior.clone().or(r.cfg.prior.clone()) {
                Some(p) => load_labels(&p, "prior labels")?,
                None => template_labels.clone(),
            };
            let trained = experiments::train(
                &template,
                &template_labels,
                mask.as_ref(),
                &r.cfg.classifier,
            )
            .context("training classifier")?;
            let rows = experiments::sweep_w(
                &trained,
                &subjects,
                &one_hot(&prior_labels),
                &ws,
                &solver,
                mask.as_ref(),
            )
            .context("w sweep")?;
            let path = dir.join("sweep_w.csv");
            let mut out = csv_writer(&path)?;
            out.write_record([
                "w",
                "mean_error_pct",
                "sem_pct",
                "status",
                "subject_errors_pct",
            ])?;
            for row in &rows {
                let e = row.error.as_ref();
                let per: Vec<String> = row.per_subject.iter().map(|v| v.to_string()).collect();
                out.write_record([
                    row.w.to_string(),
                    fmt_opt(e.ok().map(|m| m.0)),
                    fmt_opt(e.ok().map(|m| m.1)),
                    status(e.err()),
                    per.join(";"),
                ])?;
            }
            out.flush()?;
            path
        }
        SweepKind::Contrasts => {
            let inputs = test_inputs()?;
            let subsets = experiments::channel_subsets(inputs.template.channels());
            let rows = experiments::ablate_contrasts(&inputs, &subsets);
            // Report channels by their index in the file, not in the selection.
            let original = |c: usize| channels.map_or(c, |sel| sel[c]);
            let path = dir.join("sweep_contrasts.csv");
            let mut w = csv_writer(&path)?;
            w.write_record([
                "channels",
                "classification_error_pct",
                "segmentation_error_pct",
                "status",
            ])?;
            for row in &rows {
                let names: Vec<String> = row
                    .channels
                    .iter()
                    .map(|&c| original(c).to_string())
                    .collect();
                let res = row.result.as_ref();
                w.write_record([
                    names.join("+"),
                    fmt_opt(res.ok().map(|e| e.classification_error)),
                    fmt_opt(res.ok().map(|e| e.segmentation_error)),
                    status(res.err()),
                ])?;
            }
            w.flush()?;
            path
        }
    };
    print!("{}", fs::read_to_string(&path)?);
    Ok(())
}

pub struct PhantomArgs {
    pub canonical: bool,
    pub spec: Option<PathBuf>,
    pub subjects: usize,
    pub with_test: bool,
}

pub fn phantom(r: &Resolved, seed: Option<u64>, a: &PhantomArgs) -> Result<()> {
    let mut spec: PhantomSpec = match (&a.spec, a.canonical) {
        (Some(_), true) => bail!("give either --spec or --canonical, not both"),
        (Some(path), false) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing phantom spec {}", path.display()))?
        }
        (None, true) => phantom::default_confusable_spec(seed.unwrap_or(1)),
        (None, false) => bail!("phantom needs --canonical or --spec FILE"),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let dir = r.out_dir();
    create_dir(&dir)?;
    let write_pair = |name: &str, v: &MultiChannelVolume, l: &LabelVolume| -> Result<()> {
        io::save_multichannel(v, &dir.join(name)).with_context(|| format!("writing {name}"))?;
        io::save_labels(l, &dir.join(format!("{name}_labels")))
            .with_context(|| format!("writing {name}_labels"))
    };
    let (volume, labels) = phantom::generate(&spec).context("generating phantom")?;
    write_pair("template", &volume, &labels)?;
    if a.with_test {
        let test_spec = PhantomSpec {
            seed: phantom::test_seed(spec.seed),
            ..spec.clone()
        };
        let (tv, tl) = phantom::generate(&test_spec).context("generating test realization")?;
        write_pair("test", &tv, &tl)?;
    }
    for i in 0..a.subjects {
        let s = SubjectSpec::canonical(phantom::subject_seed(spec.seed, i));
        let (sv, sl) = phantom::make_subject(&volume, &labels, &s)
            .with_context(|| format!("deriving subject {i}"))?;
        write_pair(&format!("subject_{i}"), &sv, &sl)?;
    }
    write_text(
        &dir.join("phantom.json"),
        &serde_json::to_string_pretty(&spec)?,
    )?;
    println!(
        "wrote template{} and {} subjects to {}",
        if a.with_test { ", test" } else { "" },
        a.subjects,
        dir.display()
    );
    Ok(())
}

pub struct ExportArgs {
    pub input: PathBuf,
    pub axis: Axis,
    pub indices: Vec<usize>,
}

pub fn export_slices(r: &Resolved, a: &ExportArgs) -> Result<()> {
    let volume =
        io::load_volume(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let (header, _) = io::sidecar_paths(&a.input, io::VOLUME_EXT);
    let stem = header
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(".mcv.json"))
        .unwrap_or("volume")
        .to_string();
    let dir = r.out_dir();
    create_dir(&dir)?;
    let written = match &volume {
        io::Volume::Real(v) => slices::export_intensity(v, a.axis, &a.indices, &dir, &stem)?,
        io::Volume::Labels(l) => slices::export_labels(l, a.axis, &a.indices, &dir, &stem)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
