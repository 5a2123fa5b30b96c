//! MNIST in the IDX format: loading, validation and download.
//!
//! IDX files are big-endian. Image files carry magic `0x00000803` followed
//! by the dimensions `[n, 28, 28]` and `n·784` unsigned pixel bytes; label
//! files carry magic `0x00000801`, `n`, and `n` label bytes.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const PIXELS: usize = 28 * 28;
pub const CLASSES: usize = 10;

/// The four distribution files with the SHA-256 of their decompressed contents.
pub const FILES: [(&str, &str); 4] = [
    (
        "train-images-idx3-ubyte",
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    ),
    (
        "train-labels-idx1-ubyte",
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    ),
    (
        "t10k-images-idx3-ubyte",
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    ),
    (
        "t10k-labels-idx1-ubyte",
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ),
];

/// Raw IDX image tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// `count × (rows·cols)` matrix with pixels scaled to `[0, 1]`.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Matrix::from_vec(self.count, self.rows * self.cols, data).expect("sizes checked at load")
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn idx_error(path: &Path, offset: u64, msg: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            idx_error(
                path,
                bytes.len() as u64,
                format!(
                    "truncated header: expected at least {} bytes, found {}",
                    offset + 4,
                    bytes.len()
                ),
            )
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(idx_error(
            path,
            0,
            format!("wrong magic number 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

fn check_length(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Less => Err(idx_error(
            path,
            bytes.len() as u64,
            format!("truncated file: expected {expected} bytes, found {}", bytes.len()),
        )),
        std::cmp::Ordering::Greater => Err(idx_error(
            path,
            expected as u64,
            format!("trailing data: expected {expected} bytes, found {}", bytes.len()),
        )),
    }
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    if rows != 28 || cols != 28 {
        return Err(idx_error(
            path,
            8,
            format!("image dimensions {rows}x{cols}, expected 28x28"),
        ));
    }
    check_length(bytes, 16 + count * PIXELS, path)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    check_length(bytes, 8 + count, path)?;
    let labels = bytes[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= CLASSES) {
        return Err(idx_error(
            path,
            (8 + pos) as u64,
            format!("label {} outside 0..{CLASSES}", labels[pos]),
        ));
    }
    Ok(labels)
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read_file(path)?, path)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Images (one per row, pixels in `[0, 1]`) and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Matrix, labels: Vec<u8>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn load(dir: &Path, split: Split) -> Result<Dataset> {
        let images = load_idx_images(&dir.join(format!("{}-images-idx3-ubyte", split.prefix())))?;
        let labels = load_idx_labels(&dir.join(format!("{}-labels-idx1-ubyte", split.prefix())))?;
        if images.count != labels.len() {
            return Err(Error::Data(format!(
                "{:?} split has {} images but {} labels",
                split,
                images.count,
                labels.len()
            )));
        }
        Dataset::new(images.to_matrix(), labels)
    }
}

/// Fraction of rows whose arg-max logit (lowest index on ties) differs from the label.
pub fn test_error(logits: &Matrix, labels: &[u8]) -> Result<f64> {
    if logits.rows() != labels.len() || logits.rows() == 0 {
        return Err(Error::Shape {
            op: "test_error",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    let wrong = logits
        .row_iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best != label as usize
        })
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checks every distribution file in `dir` against its recorded checksum.
pub fn verify_dir(dir: &Path) -> Result<()> {
    for (name, expected) in FILES {
        let path = dir.join(name);
        let got = sha256_hex(&read_file(&path)?);
        if got != expected {
            return Err(Error::Data(format!(
                "{} has sha256 {got}, expected {expected}",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Places the distribution files may be fetched from.
#[derive(Debug, Clone)]
pub enum Source {
    /// Base URL serving the four `*.gz` files.
    GzipMirror(String),
    /// A `.tgz` archive containing the raw files anywhere inside it.
    Tarball(String),
    /// Local directory holding the raw or gzipped files.
    Directory(PathBuf),
}

pub fn default_sources() -> Vec<Source> {
    vec![
        Source::GzipMirror("https://storage.googleapis.com/cvdf-datasets/mnist".into()),
        Source::GzipMirror("https://ossci-datasets.s3.amazonaws.com/mnist".into()),
        Source::GzipMirror("http://yann.lecun.com/exdb/mnist".into()),
        Source::Tarball("https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz".into()),
    ]
}

fn http_get(url: &str) -> Result<Vec<u8>> {
    let mut response = ureq::get(url)
        .call()
        .map_err(|e| Error::Data(format!("GET {url}: {e}")))?;
    response
        .body_mut()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| Error::Data(format!("reading body of {url}: {e}")))
}

fn gunzip(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| Error::io(format!("decompressing {what}"), e))?;
    Ok(out)
}

fn files_from_source(source: &Source) -> Result<Vec<(String, Vec<u8>)>> {
    match source {
        Source::GzipMirror(base) => FILES
            .iter()
            .map(|(name, _)| {
                let url = format!("{}/{name}.gz", base.trim_end_matches('/'));
                Ok((name.to_string(), gunzip(&http_get(&url)?, &url)?))
            })
            .collect(),
        Source::Tarball(url) => {
            let tgz = http_get(url)?;
            let mut archive = tar::Archive::new(GzDecoder::new(&tgz[..]));
            let mut found = Vec::new();
            let entries = archive
                .entries()
                .map_err(|e| Error::io(format!("reading archive {url}"), e))?;
            for entry in entries {
                let mut entry = entry.map_err(|e| Error::io(format!("reading archive {url}"), e))?;
                let path = entry
                    .path()
                    .map_err(|e| Error::io("archive entry path", e))?
                    .into_owned();
                let Some(file_name) = path.file_name().and_then(|f| f.to_str()) else {
                    continue;
                };
                if let Some((name, _)) = FILES.iter().find(|(n, _)| *n == file_name) {
                    let mut buf = Vec::new();
                    entry
                        .read_to_end(&mut buf)
                        .map_err(|e| Error::io(format!("extracting {file_name}"), e))?;
                    found.push((name.to_string(), buf));
                }
            }
            Ok(found)
        }
        Source::Directory(dir) => FILES
            .iter()
            .map(|(name, _)| {
                let raw = dir.join(name);
                if raw.exists() {
                    return Ok((name.to_string(), read_file(&raw)?));
                }
                let gz = dir.join(format!("{name}.gz"));
                Ok((name.to_string(), gunzip(&read_file(&gz)?, &gz.display().to_string())?))
            })
            .collect(),
    }
}

/// Downloads (or copies) the four files into `dest`, trying sources in order
/// until one supplies all of them with matching checksums.
pub fn fetch(dest: &Path, sources: &[Source]) -> Result<()> {
    if verify_dir(dest).is_ok() {
        log::info!("{} already holds verified MNIST files", dest.display());
        return Ok(());
    }
    fs::create_dir_all(dest).map_err(|e| Error::io(format!("creating {}", dest.display()), e))?;
    let mut failures = Vec::new();
    for source in sources {
        log::info!("fetching MNIST from {source:?}");
        let files = match files_from_source(source) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("{e}");
                failures.push(e.to_string());
                continue;
            }
        };
        let verified = FILES.iter().all(|(name, sum)| {
            files
                .iter()
                .any(|(n, bytes)| n == name && sha256_hex(bytes) == *sum)
        });
        if !verified {
            failures.push(format!("{source:?}: missing files or checksum mismatch"));
            continue;
        }
        for (name, bytes) in files {
            let path = dest.join(&name);
            fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        return verify_dir(dest);
    }
    Err(Error::Data(format!(
        "no source supplied verified MNIST files:\n  {}",
        failures.join("\n  ")
    )))
}
