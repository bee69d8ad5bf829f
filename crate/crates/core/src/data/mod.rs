//! Datasets: MNIST IDX and CIFAR-10 binary loaders, synthetic blobs,
//! mean-image normalisation and mini-batch ordering.
//!
//! A dataset's role (train or test) is part of its type. Label corruption
//! and training views exist only for [`Train`] datasets, so test labels can
//! never be perturbed and the training loop never sees clean labels.

mod batch;
mod cifar;
mod dataset;
mod mnist;
mod synthetic;

pub use batch::{batches, gather_rows};
pub use cifar::{cifar10_files, load_cifar10_bin, parse_cifar10};
pub use dataset::{
    normalize_mean_image, DatasetMeta, LabeledDataset, Role, Test, Train, TrainingView,
};
pub use mnist::{load_mnist_idx, mnist_files, parse_idx_images, parse_idx_labels};
pub use synthetic::make_synthetic_blobs;
