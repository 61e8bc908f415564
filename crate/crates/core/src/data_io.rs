//! File formats: IDX tensors (MNIST), model files, spin datasets and
//! metrics CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drbm::DrbmParams;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::rbm::{RbmParams, SpinDataset};
use crate::special::HiddenLevels;

/// IDX element type code for unsigned bytes.
pub const IDX_UBYTE: u8 = 0x08;
pub const MNIST_SIDE: usize = 28;
pub const MNIST_PIXELS: usize = MNIST_SIDE * MNIST_SIDE;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const METRICS_HEADER: &str = "epoch,metric,value,seed,config_id";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic: expected two leading zero bytes, found {0:02x} {1:02x}")]
    BadMagic(u8, u8),
    #[error("truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("unsupported element type code 0x{0:02x} (only unsigned bytes, 0x08, are supported)")]
    UnsupportedType(u8),
    #[error("{0} unexpected trailing bytes after the payload")]
    TrailingBytes(usize),
    #[error("unexpected shape {found:?}, expected {expected}")]
    Shape { found: Vec<usize>, expected: String },
}

/// An IDX container holding unsigned bytes in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub type_code: u8,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl IdxTensor {
    pub fn new(dims: Vec<usize>, payload: Vec<u8>) -> Result<Self, IdxError> {
        let needed: usize = dims.iter().product();
        if needed != payload.len() {
            return Err(IdxError::Shape {
                found: dims,
                expected: format!("dimensions whose product is {}", payload.len()),
            });
        }
        Ok(Self {
            type_code: IDX_UBYTE,
            dims,
            payload,
        })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, IdxError> {
        if bytes.len() < 4 {
            return Err(IdxError::Truncated {
                needed: 4,
                found: bytes.len(),
            });
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(IdxError::BadMagic(bytes[0], bytes[1]));
        }
        let type_code = bytes[2];
        if type_code != IDX_UBYTE {
            return Err(IdxError::UnsupportedType(type_code));
        }
        let n_dims = usize::from(bytes[3]);
        let header = 4 + 4 * n_dims;
        if bytes.len() < header {
            return Err(IdxError::Truncated {
                needed: header,
                found: bytes.len(),
            });
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let needed = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|payload| payload.checked_add(header))
            .ok_or(IdxError::Truncated {
                needed: usize::MAX,
                found: bytes.len(),
            })?;
        if bytes.len() < needed {
            return Err(IdxError::Truncated {
                needed,
                found: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(IdxError::TrailingBytes(bytes.len() - needed));
        }
        Ok(Self {
            type_code,
            dims,
            payload: bytes[header..].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&[0, 0, self.type_code, self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Reads an IDX file; `.gz` files are decompressed transparently.
pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    let file = open(path)?;
    let read = if is_gzip(path) {
        GzDecoder::new(file).read_to_end(&mut bytes)
    } else {
        BufReader::new(file).read_to_end(&mut bytes)
    };
    read.map_err(|e| Error::io(path, e))?;
    Ok(IdxTensor::parse(&bytes)?)
}

pub fn write_idx(path: impl AsRef<Path>, tensor: &IdxTensor) -> Result<()> {
    let path = path.as_ref();
    let file = create(path)?;
    let bytes = tensor.to_bytes();
    let written = if is_gzip(path) {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        BufWriter::new(file).write_all(&bytes)
    };
    written.map_err(|e| Error::io(path, e))
}

/// Raw images of an `(N, 28, 28)` tensor as an `N x 784` byte matrix.
pub fn raw_images(tensor: &IdxTensor) -> Result<Array2<u8>> {
    if tensor.dims.len() != 3 || tensor.dims[1] != MNIST_SIDE || tensor.dims[2] != MNIST_SIDE {
        return Err(IdxError::Shape {
            found: tensor.dims.clone(),
            expected: "(N, 28, 28)".into(),
        }
        .into());
    }
    Ok(Array2::from_shape_vec((tensor.dims[0], MNIST_PIXELS), tensor.payload.clone()).expect("checked shape"))
}

/// Scales byte pixels to `[0, 1]` by dividing by 255.
pub fn normalize_images(images: &Array2<u8>) -> Array2<f64> {
    images.mapv(|p| f64::from(p) / 255.0)
}

/// Flattened, normalized images of an `(N, 28, 28)` tensor.
pub fn preprocess_images(tensor: &IdxTensor) -> Result<Array2<f64>> {
    raw_images(tensor).map(|raw| normalize_images(&raw))
}

pub fn labels(tensor: &IdxTensor) -> Result<Vec<usize>> {
    if tensor.dims.len() != 1 {
        return Err(IdxError::Shape {
            found: tensor.dims.clone(),
            expected: "(N)".into(),
        }
        .into());
    }
    Ok(tensor.payload.iter().map(|&b| usize::from(b)).collect())
}

/// Adds Gaussian(0, sigma²) noise to every raw pixel, clamps to `[0, 255]`
/// and rounds back to a byte.
pub fn corrupt_gaussian<R: Rng + ?Sized>(images: &Array2<u8>, sigma: f64, rng: &mut R) -> Result<Array2<u8>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(images.clone());
    }
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    Ok(images.mapv(|p| (f64::from(p) + noise.sample(rng)).clamp(0.0, 255.0).round() as u8))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RbmFile {
    format_version: u32,
    kind: String,
    levels: HiddenLevels,
    n_visible: usize,
    n_hidden: usize,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
    couplings: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DrbmFile {
    format_version: u32,
    kind: String,
    levels: HiddenLevels,
    n_inputs: usize,
    n_hidden: usize,
    n_classes: usize,
    class_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
    input_couplings: Vec<Vec<f64>>,
    class_couplings: Vec<Vec<f64>>,
}

/// A saved model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Rbm(RbmParams),
    Drbm(DrbmParams),
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>, n_rows: usize, n_cols: usize, name: &str) -> Result<Array2<f64>> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::ModelSchema(format!("{name} must be {n_rows} x {n_cols}")));
    }
    Ok(Array2::from_shape_vec((n_rows, n_cols), rows.concat()).expect("checked shape"))
}

fn vector(values: Vec<f64>, len: usize, name: &str) -> Result<Array1<f64>> {
    if values.len() != len {
        return Err(Error::ModelSchema(format!("{name} must have length {len}")));
    }
    Ok(Array1::from(values))
}

pub fn model_to_string(model: &Model) -> String {
    let json = match model {
        Model::Rbm(p) => serde_json::to_string_pretty(&RbmFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: "rbm".into(),
            levels: p.levels(),
            n_visible: p.n_visible(),
            n_hidden: p.n_hidden(),
            visible_bias: p.visible_bias().to_vec(),
            hidden_bias: p.hidden_bias().to_vec(),
            couplings: rows(p.couplings()),
        }),
        Model::Drbm(p) => serde_json::to_string_pretty(&DrbmFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: "drbm".into(),
            levels: p.levels(),
            n_inputs: p.n_inputs(),
            n_hidden: p.n_hidden(),
            n_classes: p.n_classes(),
            class_bias: p.class_bias().to_vec(),
            hidden_bias: p.hidden_bias().to_vec(),
            input_couplings: rows(p.input_couplings()),
            class_couplings: rows(p.class_couplings()),
        }),
    };
    json.expect("model serialization cannot fail") + "\n"
}

pub fn model_from_str(text: &str) -> Result<Model> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::ModelSchema(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::ModelSchema("missing format_version".into()))?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(Error::ModelVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let schema = |e: serde_json::Error| Error::ModelSchema(e.to_string());
    match value.get("kind").and_then(serde_json::Value::as_str) {
        Some("rbm") => {
            let f: RbmFile = serde_json::from_value(value).map_err(schema)?;
            let params = RbmParams::new(
                vector(f.visible_bias, f.n_visible, "visible_bias")?,
                vector(f.hidden_bias, f.n_hidden, "hidden_bias")?,
                matrix(f.couplings, f.n_visible, f.n_hidden, "couplings")?,
                f.levels,
            )
            .map_err(|e| Error::ModelSchema(e.to_string()))?;
            Ok(Model::Rbm(params))
        }
        Some("drbm") => {
            let f: DrbmFile = serde_json::from_value(value).map_err(schema)?;
            let params = DrbmParams::new(
                vector(f.class_bias, f.n_classes, "class_bias")?,
                vector(f.hidden_bias, f.n_hidden, "hidden_bias")?,
                matrix(f.input_couplings, f.n_inputs, f.n_hidden, "input_couplings")?,
                matrix(f.class_couplings, f.n_hidden, f.n_classes, "class_couplings")?,
                f.levels,
            )
            .map_err(|e| Error::ModelSchema(e.to_string()))?;
            Ok(Model::Drbm(params))
        }
        other => Err(Error::ModelSchema(format!("unknown model kind {other:?}"))),
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let mut file = create(path)?;
    file.write_all(model_to_string(model).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

/// Writes a spin dataset: optional `# key=value` comment lines, then one
/// comma-separated row of `1`/`-1` per point.
pub fn save_spin_dataset(path: impl AsRef<Path>, data: &SpinDataset, comments: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (k, v) in comments {
        out.push_str(&format!("# {k}={v}\n"));
    }
    for row in data.points().rows() {
        let cells: Vec<&str> = row.iter().map(|&x| if x > 0.0 { "1" } else { "-1" }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    create(path)?
        .write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_spin_dataset(path: impl AsRef<Path>) -> Result<SpinDataset> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| match cell.trim() {
                "1" | "+1" => Ok(1.0),
                "-1" => Ok(-1.0),
                other => Err(Error::DatasetFormat {
                    path: path.to_path_buf(),
                    reason: format!("line {}: invalid spin {other:?}", lineno + 1),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    SpinDataset::from_rows(&rows).map_err(|e| Error::DatasetFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Metrics as CSV text (header plus one LF-terminated row per record).
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.metric, r.value, r.seed, r.config_id));
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let path = path.as_ref();
    create(path)?
        .write_all(metrics_csv(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    create(path)?
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngStream;

    fn fixture_3d() -> Vec<u8> {
        let mut bytes = vec![0x00, 0x00, 0x08, 0x03];
        for _ in 0..3 {
            bytes.extend_from_slice(&[0, 0, 0, 2]);
        }
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8]);
        bytes
    }

    #[test]
    fn parses_hand_built_fixtures() {
        let t = IdxTensor::parse(&fixture_3d()).unwrap();
        assert_eq!(t.dims, vec![2, 2, 2]);
        assert_eq!(t.payload, vec![1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(t.to_bytes(), fixture_3d());

        let labels_bytes = [0x00, 0x00, 0x08, 0x01, 0, 0, 0, 3, 7, 0, 9];
        let t = IdxTensor::parse(&labels_bytes).unwrap();
        assert_eq!(labels(&t).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn malformed_inputs_have_distinct_errors() {
        let mut bad_magic = fixture_3d();
        bad_magic[1] = 1;
        assert_eq!(IdxTensor::parse(&bad_magic), Err(IdxError::BadMagic(0, 1)));

        let mut wrong_type = fixture_3d();
        wrong_type[2] = 0x0D;
        assert_eq!(IdxTensor::parse(&wrong_type), Err(IdxError::UnsupportedType(0x0D)));

        let full = fixture_3d();
        assert!(matches!(IdxTensor::parse(&full[..full.len() - 1]), Err(IdxError::Truncated { .. })));
        assert!(matches!(IdxTensor::parse(&full[..6]), Err(IdxError::Truncated { .. })));
        assert!(matches!(IdxTensor::parse(&full[..2]), Err(IdxError::Truncated { .. })));

        let mut long = fixture_3d();
        long.push(0);
        assert_eq!(IdxTensor::parse(&long), Err(IdxError::TrailingBytes(1)));
    }

    #[test]
    fn gzip_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = IdxTensor::parse(&fixture_3d()).unwrap();
        for name in ["t.idx", "t.idx.gz"] {
            let path = dir.path().join(name);
            write_idx(&path, &t).unwrap();
            assert_eq!(read_idx(&path).unwrap(), t);
        }
        assert!(matches!(read_idx(dir.path().join("absent")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn image_preprocessing() {
        let mut payload = vec![0u8; 2 * MNIST_PIXELS];
        payload[0] = 255;
        payload[MNIST_PIXELS + 5] = 51;
        let t = IdxTensor::new(vec![2, 28, 28], payload).unwrap();
        let x = preprocess_images(&t).unwrap();
        assert_eq!(x.dim(), (2, 784));
        assert_eq!(x[[0, 0]], 1.0);
        assert_eq!(x[[0, 1]], 0.0);
        assert_eq!(x[[1, 5]], 0.2);
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));

        let wrong = IdxTensor::new(vec![2, 4], vec![0; 8]).unwrap();
        assert!(preprocess_images(&wrong).is_err());
    }

    #[test]
    fn corruption_rules() {
        let mut rng = RngStream::new(3);
        let images = Array2::from_shape_fn((3, 10), |(i, j)| (i * 40 + j) as u8);
        assert_eq!(corrupt_gaussian(&images, 0.0, &mut rng).unwrap(), images);
        assert!(corrupt_gaussian(&images, -1.0, &mut rng).is_err());

        let white = Array2::from_elem((50, 50), 255u8);
        let noisy = corrupt_gaussian(&white, 120.0, &mut rng).unwrap();
        assert!(noisy.iter().any(|&p| p < 255));
        assert!(noisy.iter().filter(|&&p| p == 255).count() >= 1000);
    }

    #[test]
    fn corruption_noise_spread() {
        let mut rng = RngStream::new(4);
        let n = 1_000_000;
        let gray = Array2::from_elem((1000, 1000), 128u8);
        let noisy = corrupt_gaussian(&gray, 30.0, &mut rng).unwrap();
        let diffs: Vec<f64> = noisy.iter().map(|&p| f64::from(p) - 128.0).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        // Rounding adds variance 1/12; clamping at 4.3 sigma is negligible.
        let expected = (900.0f64 + 1.0 / 12.0).sqrt();
        assert!((sd - expected).abs() < 3.0 * 30.0 / (2.0 * n as f64).sqrt(), "sd={sd}");
    }

    #[test]
    fn model_round_trips_bitwise() {
        let mut rng = RngStream::new(5);
        let shape = crate::trainer::RbmShape {
            n_visible: 6,
            n_hidden: 3,
            levels: HiddenLevels::Infinite,
        };
        let p = crate::trainer::init_generative(shape, &mut rng).unwrap();
        let text = model_to_string(&Model::Rbm(p.clone()));
        assert!(text.contains("\"levels\": \"inf\""));
        match model_from_str(&text).unwrap() {
            Model::Rbm(q) => {
                assert_eq!(q.levels(), HiddenLevels::Infinite);
                for (a, b) in crate::ParamBlocks::to_flat(&p).iter().zip(crate::ParamBlocks::to_flat(&q)) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            other => panic!("unexpected {other:?}"),
        }

        let d = DrbmParams::init_xavier(5, 4, 3, HiddenLevels::finite(2).unwrap(), &mut rng).unwrap();
        assert_eq!(model_from_str(&model_to_string(&Model::Drbm(d.clone()))).unwrap(), Model::Drbm(d));
    }

    #[test]
    fn model_version_and_schema_errors() {
        let p = RbmParams::zeros(2, 1, HiddenLevels::BINARY).unwrap();
        let text = model_to_string(&Model::Rbm(p));
        let future = text.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(model_from_str(&future), Err(Error::ModelVersion { found: 9, .. })));
        let broken = text.replace("\"n_hidden\": 1", "\"n_hidden\": 2");
        assert!(matches!(model_from_str(&broken), Err(Error::ModelSchema(_))));
        let unknown = text.replace("\"kind\": \"rbm\"", "\"kind\": \"dbn\"");
        assert!(matches!(model_from_str(&unknown), Err(Error::ModelSchema(_))));
        assert!(matches!(model_from_str("{}"), Err(Error::ModelSchema(_))));
    }

    #[test]
    fn spin_dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = SpinDataset::from_rows(&[vec![1.0, -1.0, 1.0], vec![-1.0, -1.0, 1.0]]).unwrap();
        save_spin_dataset(&path, &data, &[("burn_in".into(), "1000".into())]).unwrap();
        assert_eq!(load_spin_dataset(&path).unwrap(), data);
        std::fs::write(&path, "1,0\n").unwrap();
        assert!(matches!(load_spin_dataset(&path), Err(Error::DatasetFormat { .. })));
    }

    #[test]
    fn metrics_csv_layout() {
        let rec = MetricsRecord {
            epoch: 3,
            metric: "kld@s=inf".into(),
            value: 0.125,
            seed: 7,
            config_id: "abc".into(),
        };
        assert_eq!(metrics_csv(&[rec]), "epoch,metric,value,seed,config_id\n3,kld@s=inf,0.125,7,abc\n");
    }
}
