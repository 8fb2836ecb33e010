//! On-disk volume and matrix format.
//!
//! A volume named `name` is a pair of files:
//!
//! * `name.mcv.json`: UTF-8 JSON header, e.g.
//!   `{"dims":[64,64,64],"channels":3,"dtype":"f32","order":"x-fastest","channel_layout":"channel-major"}`.
//!   Label volumes use `"dtype":"u8"`, a single channel and may carry an
//!   extra `"num_labels"` key.
//! * `name.mcv.raw`: little-endian payload of exactly
//!   `nx * ny * nz * channels * sizeof(dtype)` bytes, x fastest, channels
//!   one after another.
//!
//! Dense matrices (feature matrices, training labels) use the same payload
//! convention with a `name.mat.json` header `{"rows":n,"cols":m,"dtype":...}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::volume::{GridShape, LabelVolume, MultiChannelVolume};
use crate::{Error, Result};

pub const VOLUME_EXT: &str = "mcv";
pub const MATRIX_EXT: &str = "mat";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn parse(s: &str, path: &Path) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Dtype {
                path: path.to_owned(),
                dtype: other.to_owned(),
            }),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    channels: usize,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel_layout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_labels: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixHeader {
    rows: usize,
    cols: usize,
    dtype: String,
}

/// Header and payload paths for a file stem.
///
/// Accepts the stem itself or either of the two file names.
pub fn sidecar_paths(path: &Path, ext: &str) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let json_suffix = format!(".{ext}.json");
    let raw_suffix = format!(".{ext}.raw");
    let stem = s
        .strip_suffix(&json_suffix)
        .or_else(|| s.strip_suffix(&raw_suffix))
        .unwrap_or(&s)
        .to_owned();
    (
        PathBuf::from(format!("{stem}{json_suffix}")),
        PathBuf::from(format!("{stem}{raw_suffix}")),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Real(MultiChannelVolume),
    Labels(LabelVolume),
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn header_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Header {
        path: path.to_owned(),
        reason: reason.into(),
    }
}

fn check_payload(path: &Path, bytes: &[u8], expected: u64) -> Result<()> {
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadSize {
            path: path.to_owned(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Loads a volume, validating header, payload size and contents.
pub fn load_volume(path: &Path) -> Result<Volume> {
    let (json_path, raw_path) = sidecar_paths(path, VOLUME_EXT);
    let text = read(&json_path)?;
    let header: VolumeHeader =
        serde_json::from_slice(&text).map_err(|e| header_err(&json_path, e.to_string()))?;
    if let Some(order) = header.order.as_deref().filter(|o| *o != "x-fastest") {
        return Err(header_err(
            &json_path,
            format!("unsupported order {order:?}"),
        ));
    }
    if let Some(layout) = header
        .channel_layout
        .as_deref()
        .filter(|l| *l != "channel-major")
    {
        return Err(header_err(
            &json_path,
            format!("unsupported channel_layout {layout:?}"),
        ));
    }
    let [nx, ny, nz] = header.dims;
    let shape = GridShape::new(nx, ny, nz).map_err(|e| header_err(&json_path, e.to_string()))?;
    if header.channels == 0 {
        return Err(header_err(&json_path, "channels must be positive"));
    }
    let dtype = Dtype::parse(&header.dtype, &json_path)?;
    let expected = (shape.len() as u64)
        .checked_mul(header.channels as u64)
        .and_then(|v| v.checked_mul(dtype.size() as u64))
        .ok_or_else(|| header_err(&json_path, "declared size overflows"))?;
    let bytes = read(&raw_path)?;
    check_payload(&raw_path, &bytes, expected)?;

    match dtype {
        Dtype::F32 => {
            let data = decode_f32(&bytes);
            Ok(Volume::Real(MultiChannelVolume::new(
                shape,
                header.channels,
                data,
            )?))
        }
        Dtype::U8 => {
            if header.channels != 1 {
                return Err(header_err(&json_path, "label volumes have one channel"));
            }
            let num_labels = match header.num_labels {
                Some(l) => l,
                None => (bytes.iter().copied().max().unwrap_or(0) as usize + 1).max(2),
            };
            Ok(Volume::Labels(LabelVolume::new(shape, num_labels, bytes)?))
        }
        Dtype::F64 => Err(Error::Dtype {
            path: json_path,
            dtype: "f64".into(),
        }),
    }
}

pub fn load_multichannel(path: &Path) -> Result<MultiChannelVolume> {
    match load_volume(path)? {
        Volume::Real(v) => Ok(v),
        Volume::Labels(_) => Err(header_err(
            path,
            "expected a real-valued volume, found labels",
        )),
    }
}

pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    match load_volume(path)? {
        Volume::Labels(l) => Ok(l),
        Volume::Real(_) => Err(header_err(
            path,
            "expected a label volume, found real values",
        )),
    }
}

fn write_header<T: Serialize>(path: &Path, header: &T) -> Result<()> {
    let mut text = serde_json::to_vec(header).expect("header serializes");
    text.push(b'\n');
    write(path, &text)
}

pub fn save_multichannel(v: &MultiChannelVolume, path: &Path) -> Result<()> {
    let (json_path, raw_path) = sidecar_paths(path, VOLUME_EXT);
    let s = v.shape();
    let header = VolumeHeader {
        dims: s.dims(),
        channels: v.channels(),
        dtype: Dtype::F32.name().into(),
        order: Some("x-fastest".into()),
        channel_layout: Some("channel-major".into()),
        num_labels: None,
    };
    let bytes: Vec<u8> = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    write_header(&json_path, &header)?;
    write(&raw_path, &bytes)
}

pub fn save_labels(l: &LabelVolume, path: &Path) -> Result<()> {
    let (json_path, raw_path) = sidecar_paths(path, VOLUME_EXT);
    let header = VolumeHeader {
        dims: l.shape().dims(),
        channels: 1,
        dtype: Dtype::U8.name().into(),
        order: Some("x-fastest".into()),
        channel_layout: Some("channel-major".into()),
        num_labels: Some(l.num_labels()),
    };
    write_header(&json_path, &header)?;
    write(&raw_path, l.labels())
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    match v {
        Volume::Real(v) => save_multichannel(v, path),
        Volume::Labels(l) => save_labels(l, path),
    }
}

/// Row-major dense matrix as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Matrix {
    U8 {
        rows: usize,
        cols: usize,
        data: Vec<u8>,
    },
    F32 {
        rows: usize,
        cols: usize,
        data: Vec<f32>,
    },
    F64 {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
}

pub fn save_matrix_f64(rows: usize, cols: usize, data: &[f64], path: &Path) -> Result<()> {
    save_matrix_bytes(
        rows,
        cols,
        Dtype::F64,
        data.iter().flat_map(|x| x.to_le_bytes()).collect(),
        path,
    )
}

pub fn save_matrix_f32(rows: usize, cols: usize, data: &[f32], path: &Path) -> Result<()> {
    save_matrix_bytes(
        rows,
        cols,
        Dtype::F32,
        data.iter().flat_map(|x| x.to_le_bytes()).collect(),
        path,
    )
}

pub fn save_matrix_u8(rows: usize, cols: usize, data: &[u8], path: &Path) -> Result<()> {
    save_matrix_bytes(rows, cols, Dtype::U8, data.to_vec(), path)
}

fn save_matrix_bytes(
    rows: usize,
    cols: usize,
    dtype: Dtype,
    bytes: Vec<u8>,
    path: &Path,
) -> Result<()> {
    assert_eq!(bytes.len(), rows * cols * dtype.size());
    let (json_path, raw_path) = sidecar_paths(path, MATRIX_EXT);
    let header = MatrixHeader {
        rows,
        cols,
        dtype: dtype.name().into(),
    };
    write_header(&json_path, &header)?;
    write(&raw_path, &bytes)
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let (json_path, raw_path) = sidecar_paths(path, MATRIX_EXT);
    let text = read(&json_path)?;
    let header: MatrixHeader =
        serde_json::from_slice(&text).map_err(|e| header_err(&json_path, e.to_string()))?;
    let dtype = Dtype::parse(&header.dtype, &json_path)?;
    let (rows, cols) = (header.rows, header.cols);
    let expected = (rows as u64)
        .checked_mul(cols as u64)
        .and_then(|v| v.checked_mul(dtype.size() as u64))
        .ok_or_else(|| header_err(&json_path, "declared size overflows"))?;
    let bytes = read(&raw_path)?;
    check_payload(&raw_path, &bytes, expected)?;
    let m = match dtype {
        Dtype::U8 => Matrix::U8 {
            rows,
            cols,
            data: bytes,
        },
        Dtype::F32 => Matrix::F32 {
            rows,
            cols,
            data: decode_f32(&bytes),
        },
        Dtype::F64 => Matrix::F64 {
            rows,
            cols,
            data: decode_f64(&bytes),
        },
    };
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MultiChannelVolume {
        let s = GridShape::new(2, 2, 2).unwrap();
        MultiChannelVolume::new(s, 1, (0..8).map(|i| i as f32 * 0.5).collect()).unwrap()
    }

    #[test]
    fn smallest_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v");
        fs::write(
            dir.path().join("v.mcv.json"),
            r#"{"dims":[2,2,2],"channels":1,"dtype":"f32"}"#,
        )
        .unwrap();
        fs::write(dir.path().join("v.mcv.raw"), [0u8; 32]).unwrap();
        let v = load_multichannel(&p).unwrap();
        assert_eq!(v.shape().len(), 8);
    }

    #[test]
    fn short_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v");
        save_multichannel(&tiny(), &p).unwrap();
        fs::write(dir.path().join("v.mcv.raw"), [0u8; 28]).unwrap();
        assert!(matches!(
            load_volume(&p),
            Err(Error::PayloadSize {
                expected: 32,
                actual: 28,
                ..
            })
        ));
    }

    #[test]
    fn zero_voxel_payload_is_four_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.mcv.json");
        let v = MultiChannelVolume::zeros(GridShape::new(1, 1, 1).unwrap(), 1).unwrap();
        save_multichannel(&v, &p).unwrap();
        assert_eq!(fs::read(dir.path().join("z.mcv.raw")).unwrap().len(), 4);
    }

    #[test]
    fn labels_are_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l");
        let s = GridShape::new(3, 1, 1).unwrap();
        let l = LabelVolume::new(s, 4, vec![0, 3, 1]).unwrap();
        save_labels(&l, &p).unwrap();
        assert_eq!(
            fs::read(dir.path().join("l.mcv.raw")).unwrap(),
            vec![0, 3, 1]
        );
        assert_eq!(load_labels(&p).unwrap(), l);
    }

    #[test]
    fn label_beyond_declared_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("l.mcv.json"),
            r#"{"dims":[2,1,1],"channels":1,"dtype":"u8","num_labels":2}"#,
        )
        .unwrap();
        fs::write(dir.path().join("l.mcv.raw"), [0u8, 5]).unwrap();
        assert!(matches!(
            load_volume(&dir.path().join("l")),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn bad_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v");
        fs::write(dir.path().join("v.mcv.raw"), [0u8; 8]).unwrap();
        for header in [
            r#"{"dims":[2,1,1],"channels":1,"dtype":"f16"}"#,
            r#"{"dims":[2,1],"channels":1,"dtype":"f32"}"#,
            r#"{"dims":[2,1,1],"channels":1,"dtype":"f32","order":"z-fastest"}"#,
            r#"{"dims":[0,1,1],"channels":1,"dtype":"f32"}"#,
            "not json",
        ] {
            fs::write(dir.path().join("v.mcv.json"), header).unwrap();
            assert!(load_volume(&p).is_err(), "{header}");
        }
        fs::write(
            dir.path().join("v.mcv.json"),
            r#"{"dims":[2,1,1],"channels":1,"dtype":"f32"}"#,
        )
        .unwrap();
        fs::write(
            dir.path().join("v.mcv.raw"),
            [f32::NAN.to_le_bytes(), 0f32.to_le_bytes()].concat(),
        )
        .unwrap();
        assert!(matches!(
            load_volume(&p),
            Err(Error::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_volume(&dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m");
        let data = vec![0.1, -2.5, 1e-300, 3.0, 4.0, 5.0];
        save_matrix_f64(2, 3, &data, &p).unwrap();
        assert_eq!(
            load_matrix(&p).unwrap(),
            Matrix::F64 {
                rows: 2,
                cols: 3,
                data
            }
        );
    }

    #[test]
    fn sidecar_names() {
        let (j, r) = sidecar_paths(Path::new("a/b.mcv.json"), VOLUME_EXT);
        assert_eq!(j, PathBuf::from("a/b.mcv.json"));
        assert_eq!(r, PathBuf::from("a/b.mcv.raw"));
        let (j, _) = sidecar_paths(Path::new("a/b"), VOLUME_EXT);
        assert_eq!(j, PathBuf::from("a/b.mcv.json"));
    }
}
