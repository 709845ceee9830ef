//! Datasets: MNIST IDX files, precomputed embedding tables and synthetic
//! Gaussian blobs.

mod embeddings;
mod mnist;
mod synth;

use std::hash::Hasher;

use fnv::FnvHasher;

pub use embeddings::{load_embeddings, save_embeddings};
pub use mnist::{load_mnist, write_idx_images, write_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use synth::synth_blobs;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Inputs with one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Matrix,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Matrix, class_names: Vec<String>) -> Result<Self> {
        if inputs.rows() != labels.rows() {
            return Err(Error::shape(
                "Dataset",
                format!("{} inputs but {} labels", inputs.rows(), labels.rows()),
            ));
        }
        if labels.cols() != class_names.len() {
            return Err(Error::shape(
                "Dataset",
                format!("{} label columns but {} class names", labels.cols(), class_names.len()),
            ));
        }
        if !inputs.is_finite() {
            return Err(Error::Argument("dataset inputs must be finite".into()));
        }
        for r in 0..labels.rows() {
            let row = labels.row(r);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::Argument(format!("label row {r} is not one-hot")));
            }
        }
        Ok(Dataset {
            inputs,
            labels,
            class_names,
        })
    }

    /// Builds one-hot labels from class indices.
    pub fn from_class_indices(
        inputs: Matrix,
        classes: &[usize],
        class_names: Vec<String>,
    ) -> Result<Self> {
        let d = class_names.len();
        let mut labels = Matrix::zeros(classes.len(), d);
        for (i, &c) in classes.iter().enumerate() {
            if c >= d {
                return Err(Error::Argument(format!(
                    "class index {c} at row {i} out of range for {d} classes"
                )));
            }
            labels[(i, c)] = 1.0;
        }
        Dataset::new(inputs, labels, class_names)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels_onehot(&self) -> &Matrix {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Class index of example `i`.
    pub fn class_of(&self, i: usize) -> usize {
        self.labels
            .row(i)
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot invariant")
    }

    pub fn class_indices(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.class_of(i)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: self.labels.select_rows(indices),
            class_names: self.class_names.clone(),
        }
    }

    /// The first `n` examples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// 64-bit FNV-1a over the canonical bytes: `len`, `input_dim`,
    /// `num_classes` as `u64` LE, every input as `f64` LE (row-major), then
    /// every class index as `u64` LE.
    pub fn content_hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        for v in [self.len(), self.input_dim(), self.num_classes()] {
            h.write(&(v as u64).to_le_bytes());
        }
        for v in self.inputs.as_slice() {
            h.write(&v.to_le_bytes());
        }
        for c in self.class_indices() {
            h.write(&(c as u64).to_le_bytes());
        }
        h.finish()
    }
}
