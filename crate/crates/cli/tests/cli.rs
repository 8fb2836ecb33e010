use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcseg::io::{self, Matrix};
use mcseg::volume::argmax;

const SPEC: &str = r#"{"dims":[20,18,16],"class_means":[[0,0,0],[1,2,2],[2,1,2],[2,2,1]],
"noise_sigma":[1,1,1],"smoothness":0.15,"seed":4}"#;

fn mcseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn mcseg")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mcseg(dir, args);
    assert!(
        out.status.success(),
        "mcseg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small phantom with a test realization and two subjects, plus a trained model.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), SPEC).unwrap();
    ok(
        dir.path(),
        &[
            "phantom",
            "--spec",
            "spec.json",
            "--subjects",
            "2",
            "--with-test",
            "--out",
            "ph",
        ],
    );
    ok(
        dir.path(),
        &[
            "train",
            "--template",
            "ph/template",
            "--template-labels",
            "ph/template_labels",
            "--out",
            "model",
        ],
    );
    dir
}

fn bytes(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn error_pct(dir: &Path, pred: &str) -> f64 {
    let text = ok(
        dir,
        &[
            "evaluate",
            "--pred",
            pred,
            "--reference",
            "ph/test_labels",
            "--out",
            "ev",
        ],
    );
    let line = text
        .lines()
        .find(|l| l.starts_with("global error"))
        .unwrap();
    line.rsplit(':').next().unwrap().trim().parse().unwrap()
}

#[test]
fn train_writes_manifest_and_is_reproducible() {
    let dir = workspace();
    let d = dir.path();
    let manifest: serde_json::Value =
        serde_json::from_slice(&bytes(d.join("model/model.json"))).unwrap();
    assert_eq!(manifest["kind"], "knn");
    assert_eq!(manifest["k"], 3);
    assert_eq!(manifest["features"], 27);
    assert_eq!(manifest["num_labels"], 4);
    ok(
        d,
        &[
            "train",
            "--template",
            "ph/template",
            "--template-labels",
            "ph/template_labels",
            "--out",
            "model2",
        ],
    );
    for f in [
        "model.json",
        "preprocessing.json",
        "train_features.mat.raw",
        "train_labels.mat.raw",
    ] {
        assert_eq!(
            bytes(d.join("model").join(f)),
            bytes(d.join("model2").join(f)),
            "{f}"
        );
    }
}

#[test]
fn missing_label_file_exits_2() {
    let dir = workspace();
    let out = mcseg(
        dir.path(),
        &[
            "train",
            "--template",
            "ph/template",
            "--template-labels",
            "ph/nope",
            "--out",
            "m",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("template labels") && err.contains("kind: input"),
        "{err}"
    );
}

#[test]
fn numerical_failure_exits_3() {
    let dir = workspace();
    let out = mcseg(
        dir.path(),
        &[
            "segment", "--model", "model", "--input", "ph/test", "--lambda", "1e308", "--out", "s",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn segmentation_beats_classification_and_prior_weight_zero_is_identity() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "classify", "--model", "model", "--input", "ph/test", "--out", "cls",
        ],
    );
    ok(
        d,
        &[
            "segment", "--model", "model", "--input", "ph/test", "--out", "seg",
        ],
    );
    assert!(error_pct(d, "seg/labels") < error_pct(d, "cls/labels"));

    ok(
        d,
        &[
            "segment",
            "--model",
            "model",
            "--input",
            "ph/test",
            "--w",
            "0",
            "--prior",
            "ph/template_labels",
            "--out",
            "seg_w0",
        ],
    );
    assert_eq!(
        bytes(d.join("seg/labels.mcv.raw")),
        bytes(d.join("seg_w0/labels.mcv.raw"))
    );
    let diag = fs::read_to_string(d.join("seg/diagnostics.csv")).unwrap();
    assert!(diag.starts_with("iteration,energy,dual,gap\n"));
    assert!(!d.join("seg/posterior.mat.json").exists());
}

#[test]
fn classify_posteriors_and_tiny_lambda_agree() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "classify", "--model", "model", "--input", "ph/test", "--out", "cls",
        ],
    );
    ok(
        d,
        &[
            "segment", "--model", "model", "--input", "ph/test", "--lambda", "1e-8", "--out", "seg",
        ],
    );
    let Matrix::F64 { rows, cols, data } = io::load_matrix(&d.join("cls/posterior")).unwrap()
    else {
        panic!("posterior must be f64");
    };
    assert_eq!((rows, cols), (20 * 18 * 16, 4));
    let cls = io::load_labels(&d.join("cls/labels")).unwrap();
    let seg = io::load_labels(&d.join("seg/labels")).unwrap();
    let mut unique = 0;
    for (i, row) in data.chunks_exact(cols).enumerate() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(row), cls.labels()[i] as usize);
        let top = row[argmax(row)];
        if row.iter().filter(|&&v| v == top).count() == 1 {
            unique += 1;
            assert_eq!(seg.labels()[i], cls.labels()[i], "voxel {i}");
        }
    }
    assert!(unique > rows / 2);
}

#[test]
fn lambda_flag_overrides_config() {
    let dir = workspace();
    let d = dir.path();
    fs::write(
        d.join("cfg.json"),
        r#"{"model":"model","input":"ph/test","solver":{"lambda":10}}"#,
    )
    .unwrap();
    let from_file = ok(d, &["segment", "--config", "cfg.json", "--out", "a"]);
    assert!(from_file.starts_with("lambda 10 "), "{from_file}");
    let flagged = ok(
        d,
        &[
            "segment", "--config", "cfg.json", "--lambda", "1", "--out", "b",
        ],
    );
    assert!(flagged.starts_with("lambda 1 "), "{flagged}");
    ok(
        d,
        &[
            "segment", "--model", "model", "--input", "ph/test", "--out", "c",
        ],
    );
    assert_eq!(
        bytes(d.join("b/labels.mcv.raw")),
        bytes(d.join("c/labels.mcv.raw"))
    );

    fs::write(d.join("bad.json"), r#"{"model":"model","lamda":3}"#).unwrap();
    assert_eq!(
        mcseg(d, &["segment", "--config", "bad.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn sweeps_emit_one_row_per_point() {
    let dir = workspace();
    let d = dir.path();
    let pair = [
        "--template",
        "ph/template",
        "--template-labels",
        "ph/template_labels",
    ];
    let test = ["--input", "ph/test", "--reference", "ph/test_labels"];
    let rows = |s: &str| s.lines().count() - 1;

    let mut args = vec![
        "sweep",
        "lambda",
        "--values",
        "0.1,1,3,1e308",
        "--out",
        "sw",
    ];
    args.extend(pair);
    args.extend(test);
    let out = ok(d, &args);
    assert_eq!(rows(&out), 4);
    assert!(out.lines().last().unwrap().contains("failed"), "{out}");

    let mut args = vec!["sweep", "contrasts", "--out", "sw"];
    args.extend(pair);
    args.extend(test);
    assert_eq!(rows(&ok(d, &args)), 7);

    let mut args = vec!["sweep", "w", "--out", "sw"];
    args.extend(pair);
    args.extend([
        "--subject",
        "ph/subject_0",
        "ph/subject_0_labels",
        "--subject",
        "ph/subject_1",
        "ph/subject_1_labels",
    ]);
    let out = ok(d, &args);
    assert_eq!(rows(&out), 6);
    assert!(out.starts_with("w,mean_error_pct,sem_pct"));
    assert_eq!(fs::read_to_string(d.join("sw/sweep_w.csv")).unwrap(), out);
}

#[test]
fn phantom_outputs_load_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.json"), SPEC).unwrap();
    ok(
        d,
        &[
            "phantom",
            "--spec",
            "spec.json",
            "--subjects",
            "6",
            "--out",
            "a",
        ],
    );
    ok(
        d,
        &[
            "phantom",
            "--spec",
            "spec.json",
            "--subjects",
            "6",
            "--out",
            "b",
        ],
    );
    let mut stems = vec!["template".to_string()];
    stems.extend((0..6).map(|i| format!("subject_{i}")));
    for s in &stems {
        let v = io::load_multichannel(&d.join("a").join(s)).unwrap();
        let l = io::load_labels(&d.join("a").join(format!("{s}_labels"))).unwrap();
        assert_eq!((v.shape(), v.channels(), l.num_labels()), (l.shape(), 3, 4));
        for f in [format!("{s}.mcv.raw"), format!("{s}_labels.mcv.raw")] {
            assert_eq!(bytes(d.join("a").join(&f)), bytes(d.join("b").join(&f)));
        }
    }
    let volumes = fs::read_dir(d.join("a")).unwrap().filter(|e| {
        e.as_ref()
            .unwrap()
            .file_name()
            .to_string_lossy()
            .ends_with(".mcv.json")
    });
    assert_eq!(volumes.count(), 14);
    assert_eq!(mcseg(d, &["phantom", "--out", "c"]).status.code(), Some(2));
}

fn read_pnm(path: &Path) -> (String, usize, usize, Vec<u8>) {
    let raw = bytes(path.to_path_buf());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(raw[start..pos].to_vec()).unwrap());
    }
    assert_eq!(fields[3], "255");
    (
        fields[0].clone(),
        fields[1].parse().unwrap(),
        fields[2].parse().unwrap(),
        raw[pos + 1..].to_vec(),
    )
}

#[test]
fn slice_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--canonical", "--out", "ph"]);
    ok(
        d,
        &[
            "export-slices",
            "--input",
            "ph/template_labels",
            "--axis",
            "z",
            "--indices",
            "0,32",
            "--out",
            "img",
        ],
    );
    let (magic, w, h, payload) = read_pnm(&d.join("img/template_labels_z32.ppm"));
    assert_eq!(
        (magic.as_str(), w, h, payload.len()),
        ("P6", 64, 64, 64 * 64 * 3)
    );
    assert!(payload.chunks(3).any(|p| p == [255, 0, 0]));
    let (_, _, _, bg) = read_pnm(&d.join("img/template_labels_z0.ppm"));
    assert!(bg.iter().all(|&b| b == 0));

    ok(
        d,
        &[
            "export-slices",
            "--input",
            "ph/template.mcv.json",
            "--axis",
            "y",
            "--indices",
            "10",
            "--out",
            "img",
        ],
    );
    let v = io::load_multichannel(&d.join("ph/template")).unwrap();
    let (magic, w, h, payload) = read_pnm(&d.join("img/template_y10_c1.pgm"));
    assert_eq!((magic.as_str(), w, h), ("P5", 64, 64));
    let slice: Vec<f64> = (0..64)
        .flat_map(|z| (0..64).map(move |x| (x, z)))
        .map(|(x, z)| v.get(1, v.shape().index(x, 10, z)) as f64)
        .collect();
    let lo = slice.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (p, s) in payload.iter().zip(&slice) {
        assert_eq!(*p, (255.0 * (s - lo) / (hi - lo)).round() as u8);
    }

    let out = mcseg(
        d,
        &[
            "export-slices",
            "--input",
            "ph/template",
            "--axis",
            "x",
            "--indices",
            "64",
            "--out",
            "img",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
