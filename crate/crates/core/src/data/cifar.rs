//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! pixel bytes (1024 red, then green, then blue, each row-major 32×32).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::nn::FeatureShape;

use super::dataset::sha256_hex;
use super::{DatasetMeta, LabeledDataset, Role};

const RECORD: usize = 3073;
const PIXELS: usize = 3072;
const CLASSES: usize = 10;

/// The five training batches, or the single test batch.
pub fn cifar10_files(dir: &Path, train: bool) -> Vec<PathBuf> {
    if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    }
}

/// Decodes one batch file into `(pixels scaled to [0, 1], labels)`.
pub fn parse_cifar10(bytes: &[u8], name: &str) -> Result<(Vec<f64>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::format(
            name,
            format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CLASSES {
            return Err(Error::format(name, format!("record {i} has label byte {label}")));
        }
        labels.push(label);
        // Planar channel order already matches the CHW layout used by the network.
        pixels.extend(record[1..].iter().map(|&p| f64::from(p) / 255.0));
    }
    Ok((pixels, labels))
}

pub fn load_cifar10_bin<R: Role, P: AsRef<Path>>(paths: &[P]) -> Result<LabeledDataset<R>> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut digests = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (p, l) = parse_cifar10(&bytes, &path.display().to_string())?;
        pixels.extend(p);
        labels.extend(l);
        let file = path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
        digests.push((file, sha256_hex(&bytes)));
    }
    let images = Matrix::new(labels.len(), PIXELS, pixels)?;
    let mut meta = DatasetMeta::new("cifar10", CLASSES);
    meta.preprocessing.push("pixels scaled to [0, 1]".into());
    let mut ds = LabeledDataset::new(FeatureShape::image(3, 32, 32), images, labels, meta)?;
    for (name, digest) in digests {
        ds.push_source_digest(name, digest);
    }
    Ok(ds)
}
