use std::marker::PhantomData;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::{Matrix, RngState};
use crate::nn::FeatureShape;
use crate::noise::{corrupt_labels, NoiseMatrix};

/// Marker for the role a dataset plays.
pub trait Role: Clone + std::fmt::Debug + Send + Sync + 'static {
    const NAME: &'static str;
}

#[derive(Clone, Copy, Debug)]
pub struct Train;

#[derive(Clone, Copy, Debug)]
pub struct Test;

impl Role for Train {
    const NAME: &'static str = "train";
}

impl Role for Test {
    const NAME: &'static str = "test";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub classes: usize,
    /// `(file name, sha256 hex)` of every source file.
    pub source_digests: Vec<(String, String)>,
    /// Preprocessing steps applied after loading, in order.
    pub preprocessing: Vec<String>,
}

impl DatasetMeta {
    pub fn new(name: impl Into<String>, classes: usize) -> Self {
        DatasetMeta {
            name: name.into(),
            classes,
            source_digests: Vec::new(),
            preprocessing: Vec::new(),
        }
    }
}

/// Images (one row per sample) with clean labels and, for training sets,
/// optionally corrupted labels.
#[derive(Clone, Debug)]
pub struct LabeledDataset<R: Role> {
    shape: FeatureShape,
    images: Matrix,
    true_labels: Vec<usize>,
    noisy_labels: Option<Vec<usize>>,
    meta: DatasetMeta,
    _role: PhantomData<R>,
}

impl<R: Role> LabeledDataset<R> {
    pub fn new(
        shape: FeatureShape,
        images: Matrix,
        labels: Vec<usize>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if meta.classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", meta.classes)));
        }
        if images.cols() != shape.len() {
            return Err(Error::shape(format!(
                "images have {} values each, shape {shape:?} needs {}",
                images.cols(),
                shape.len()
            )));
        }
        if images.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= meta.classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                meta.classes
            )));
        }
        Ok(LabeledDataset {
            shape,
            images,
            true_labels: labels,
            noisy_labels: None,
            meta,
            _role: PhantomData,
        })
    }

    pub fn role(&self) -> &'static str {
        R::NAME
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn shape(&self) -> FeatureShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.meta.classes
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    /// Clean labels. Only corruption and evaluation code should read these.
    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    /// Samples at `indices`, in that order, keeping noisy labels if present.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("index {bad} out of range for {} samples", self.len())));
        }
        let pick = |v: &Vec<usize>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut meta = self.meta.clone();
        meta.preprocessing
            .push(format!("subset of {} out of {} samples", indices.len(), self.len()));
        Ok(LabeledDataset {
            shape: self.shape,
            images: super::gather_rows(&self.images, indices),
            true_labels: pick(&self.true_labels),
            noisy_labels: self.noisy_labels.as_ref().map(pick),
            meta,
            _role: PhantomData,
        })
    }

    /// The first `n` samples (or all of them when `n` exceeds the size).
    pub fn head(&self, n: usize) -> Result<Self> {
        let indices: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&indices)
    }

    /// SHA-256 over shape, pixel bits and clean labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in [self.shape.channels, self.shape.height, self.shape.width, self.meta.classes] {
            h.update((d as u64).to_le_bytes());
        }
        for v in self.images.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &y in &self.true_labels {
            h.update((y as u64).to_le_bytes());
        }
        hex(&h.finalize())
    }

    pub(crate) fn with_images(self, images: Matrix, step: String) -> Self {
        let mut meta = self.meta;
        meta.preprocessing.push(step);
        LabeledDataset {
            images,
            meta,
            ..self
        }
    }

    pub(crate) fn push_source_digest(&mut self, name: String, digest: String) {
        self.meta.source_digests.push((name, digest));
    }
}

impl LabeledDataset<Train> {
    /// Replaces the noisy labels with a fresh corruption of the clean ones.
    pub fn corrupt(&mut self, psi: &NoiseMatrix, rng: &mut RngState) -> Result<()> {
        if psi.classes() != self.classes() {
            return Err(Error::shape(format!(
                "noise matrix covers {} classes, dataset has {}",
                psi.classes(),
                self.classes()
            )));
        }
        self.noisy_labels = Some(corrupt_labels(&self.true_labels, psi, rng)?);
        Ok(())
    }

    pub fn noisy_labels(&self) -> Option<&[usize]> {
        self.noisy_labels.as_deref()
    }

    /// Fraction of noisy labels that differ from the clean ones.
    pub fn flip_rate(&self) -> Option<f64> {
        let noisy = self.noisy_labels.as_ref()?;
        let flipped = noisy.iter().zip(&self.true_labels).filter(|(a, b)| a != b).count();
        Some(flipped as f64 / self.len().max(1) as f64)
    }

    /// Images with noisy labels: everything the training loop may see.
    pub fn training_view(&self) -> Result<TrainingView<'_>> {
        let labels = self.noisy_labels.as_deref().ok_or_else(|| {
            Error::invalid("training set has no noisy labels; corrupt it first (identity noise for clean runs)")
        })?;
        Ok(TrainingView {
            shape: self.shape,
            images: &self.images,
            labels,
            classes: self.meta.classes,
        })
    }
}

/// Borrowed images plus the labels to fit. Built from a training set it
/// carries the noisy labels only.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    pub shape: FeatureShape,
    pub images: &'a Matrix,
    pub labels: &'a [usize],
    pub classes: usize,
}

impl<'a> TrainingView<'a> {
    pub fn new(shape: FeatureShape, images: &'a Matrix, labels: &'a [usize], classes: usize) -> Result<Self> {
        if images.rows() != labels.len() || images.cols() != shape.len() {
            return Err(Error::shape("images and labels do not line up"));
        }
        if labels.iter().any(|&y| y >= classes) {
            return Err(Error::invalid("label out of range"));
        }
        Ok(TrainingView {
            shape,
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Subtracts the mean training image from both sets. The mean comes from
/// the training set only.
pub fn normalize_mean_image(
    train: LabeledDataset<Train>,
    test: LabeledDataset<Test>,
) -> Result<(LabeledDataset<Train>, LabeledDataset<Test>)> {
    if train.shape != test.shape {
        return Err(Error::shape(format!(
            "train images are {:?}, test images {:?}",
            train.shape, test.shape
        )));
    }
    if train.is_empty() {
        return Err(Error::invalid("cannot normalise with an empty training set"));
    }
    let d = train.shape.len();
    let mut mean = vec![0.0; d];
    for r in 0..train.len() {
        for (m, v) in mean.iter_mut().zip(train.images.row(r)) {
            *m += v;
        }
    }
    let inv = 1.0 / train.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);

    let centre = |images: &Matrix| {
        let mut out = images.clone();
        for r in 0..out.rows() {
            for (v, m) in out.row_mut(r).iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        out
    };
    let step = "subtract training-set mean image".to_string();
    let train_images = centre(&train.images);
    let test_images = centre(&test.images);
    Ok((
        train.with_images(train_images, step.clone()),
        test.with_images(test_images, step),
    ))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
