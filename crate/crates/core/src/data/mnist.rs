//! MNIST in the IDX container: big-endian u32 header (magic, counts,
//! dimensions) followed by raw u8 payload.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::nn::FeatureShape;

use super::dataset::sha256_hex;
use super::{DatasetMeta, LabeledDataset, Role};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
const CLASSES: usize = 10;

/// Standard file names inside an MNIST directory, for the train or test split.
pub fn mnist_files(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

fn read_u32(bytes: &[u8], offset: usize, name: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(name, "truncated header"))
}

/// Parses an IDX3 image file into `(rows, cols, pixels)`; pixel count is
/// `n · rows · cols`.
pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<(usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, name)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(name, format!("image magic {magic}, expected {IMAGE_MAGIC}")));
    }
    let n = read_u32(bytes, 4, name)? as usize;
    let rows = read_u32(bytes, 8, name)? as usize;
    let cols = read_u32(bytes, 12, name)? as usize;
    let expected = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(name, "header dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::format(
            name,
            format!("payload is {} bytes, header promises {expected}", payload.len()),
        ));
    }
    Ok((rows, cols, payload.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, name)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(name, format!("label magic {magic}, expected {LABEL_MAGIC}")));
    }
    let n = read_u32(bytes, 4, name)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::format(
            name,
            format!("payload is {} bytes, header promises {n}", payload.len()),
        ));
    }
    if let Some(&bad) = payload.iter().find(|&&b| b as usize >= CLASSES) {
        return Err(Error::format(name, format!("label {bad} outside 0..{CLASSES}")));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]`.
pub fn load_mnist_idx<R: Role>(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset<R>> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let image_name = images_path.display().to_string();
    let label_name = labels_path.display().to_string();
    let (rows, cols, pixels) = parse_idx_images(&image_bytes, &image_name)?;
    let labels = parse_idx_labels(&label_bytes, &label_name)?;

    let d = rows * cols;
    let n = pixels.len().checked_div(d).unwrap_or(0);
    if n != labels.len() {
        return Err(Error::Consistency(format!(
            "{image_name} holds {n} images but {label_name} holds {} labels",
            labels.len()
        )));
    }
    let images = Matrix::new(n, d, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let mut meta = DatasetMeta::new("mnist", CLASSES);
    meta.preprocessing.push("pixels scaled to [0, 1]".into());
    let mut ds = LabeledDataset::new(FeatureShape::image(1, rows, cols), images, labels, meta)?;
    for (path, bytes) in [(images_path, &image_bytes), (labels_path, &label_bytes)] {
        let file = path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
        ds.push_source_digest(file, sha256_hex(bytes));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Test, Train};

    pub(crate) fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGE_MAGIC, n, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    pub(crate) fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [LABEL_MAGIC, labels.len() as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn parses_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = mnist_files(dir.path(), true);
        std::fs::write(&img, idx_images(2, 2, 2, &[0, 255, 51, 0, 255, 255, 0, 0])).unwrap();
        std::fs::write(&lab, idx_labels(&[3, 9])).unwrap();
        let ds = load_mnist_idx::<Train>(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), FeatureShape::image(1, 2, 2));
        assert_eq!(ds.images().row(0), &[0.0, 1.0, 0.2, 0.0]);
        assert_eq!(ds.true_labels(), &[3, 9]);
        assert_eq!(ds.meta().source_digests.len(), 2);
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = idx_images(1, 1, 1, &[0]);
        bytes[3] = 0x04;
        assert!(matches!(parse_idx_images(&bytes, "x"), Err(Error::Format { .. })));
        assert!(matches!(
            parse_idx_labels(&idx_images(1, 1, 1, &[0]), "x"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = idx_images(3, 2, 2, &[0; 11]);
        assert!(matches!(parse_idx_images(&bytes, "x"), Err(Error::Format { .. })));
        assert!(matches!(parse_idx_images(&bytes[..10], "x"), Err(Error::Format { .. })));
        assert!(matches!(parse_idx_labels(&idx_labels(&[1, 2])[..9], "x"), Err(Error::Format { .. })));
        assert!(matches!(parse_idx_labels(&idx_labels(&[10]), "x"), Err(Error::Format { .. })));
    }

    #[test]
    fn count_mismatch_is_a_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = mnist_files(dir.path(), false);
        std::fs::write(&img, idx_images(2, 1, 1, &[0, 1])).unwrap();
        std::fs::write(&lab, idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(load_mnist_idx::<Test>(&img, &lab), Err(Error::Consistency(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = mnist_files(dir.path(), false);
        assert!(matches!(load_mnist_idx::<Test>(&img, &lab), Err(Error::Io { .. })));
    }
}
