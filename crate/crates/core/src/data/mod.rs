//! Datasets, domain batching, and generators.
//!
//! Target labels ride along in [`LabeledDataset`] for evaluation, but the
//! batching path only ever sees a [`FeaturesView`], so no training code can
//! reach them: [`DomainBatch`] has no target-label field by construction.

mod digits;
mod idx;
mod synthetic;

pub use digits::{generate_digits_proxy, DigitsProxySpec, RawDigits};
pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use synthetic::{
    generate_nuisance_task, generate_rotated_moons, NuisancePair, SyntheticSpec, TaskKind,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    n: usize,
    d: usize,
    x: Vec<f64>,
    y: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(n: usize, d: usize, x: Vec<f64>, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::contract("dataset must be non-empty"));
        }
        if x.len() != n * d || y.len() != n {
            return Err(Error::contract(format!(
                "dataset dims inconsistent: n={n} d={d} x={} y={}",
                x.len(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            n,
            d,
            x,
            y,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Unlabeled view: the only form the batching path accepts.
    pub fn features(&self) -> FeaturesView<'_> {
        FeaturesView {
            n: self.n,
            d: self.d,
            x: &self.x,
        }
    }

    /// Evaluation-only label access. Never called on the target domain by
    /// the training loop; the batch iterator cannot reach it at all.
    pub fn labels_for_eval(&self) -> &[usize] {
        &self.y
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }
}

/// Borrowed feature matrix without labels.
#[derive(Debug, Clone, Copy)]
pub struct FeaturesView<'a> {
    n: usize,
    d: usize,
    x: &'a [f64],
}

impl<'a> FeaturesView<'a> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(&self.x[i * self.d..(i + 1) * self.d]);
        }
        Tensor::new(vec![indices.len(), self.d], data).expect("gather shape")
    }

    pub fn full_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n, self.d], self.x.to_vec()).expect("full shape")
    }
}

/// Paired mini-batches: labeled source rows and unlabeled target rows.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub x_s: Tensor,
    pub y_s: Vec<usize>,
    pub x_t: Tensor,
}

/// Streams domain batches with independent per-domain shuffles per epoch.
/// The tail shorter than a full batch is dropped; the stream then reshuffles.
pub struct BatchIterator<'a> {
    source: &'a LabeledDataset,
    target: FeaturesView<'a>,
    b_s: usize,
    b_t: usize,
    rng: RngStream,
    src_order: Vec<usize>,
    src_pos: usize,
    tgt_order: Vec<usize>,
    tgt_pos: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(
        source: &'a LabeledDataset,
        target: FeaturesView<'a>,
        b_s: usize,
        b_t: usize,
        mut rng: RngStream,
    ) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::contract("batch_iterator: empty dataset"));
        }
        if b_s == 0 || b_t == 0 {
            return Err(Error::contract("batch_iterator: zero batch size"));
        }
        if b_s > source.len() || b_t > target.len() {
            return Err(Error::contract(format!(
                "batch sizes ({b_s}, {b_t}) exceed dataset sizes ({}, {})",
                source.len(),
                target.len()
            )));
        }
        let src_order = rng.shuffled_indices(source.len());
        let tgt_order = rng.shuffled_indices(target.len());
        Ok(BatchIterator {
            source,
            target,
            b_s,
            b_t,
            rng,
            src_order,
            src_pos: 0,
            tgt_order,
            tgt_pos: 0,
        })
    }

    pub fn next_batch(&mut self) -> DomainBatch {
        if self.src_pos + self.b_s > self.src_order.len() {
            self.src_order = self.rng.shuffled_indices(self.source.len());
            self.src_pos = 0;
        }
        if self.tgt_pos + self.b_t > self.tgt_order.len() {
            self.tgt_order = self.rng.shuffled_indices(self.target.len());
            self.tgt_pos = 0;
        }
        let src_idx = &self.src_order[self.src_pos..self.src_pos + self.b_s];
        let tgt_idx = &self.tgt_order[self.tgt_pos..self.tgt_pos + self.b_t];
        self.src_pos += self.b_s;
        self.tgt_pos += self.b_t;
        let x_s = self.source.features().gather(src_idx);
        let y_s = src_idx.iter().map(|&i| self.source.labels_for_eval()[i]).collect();
        let x_t = self.target.gather(tgt_idx);
        DomainBatch { x_s, y_s, x_t }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(n: usize, d: usize) -> LabeledDataset {
        let x: Vec<f64> = (0..n * d).map(|i| i as f64).collect();
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        LabeledDataset::new(n, d, x, y, 2).unwrap()
    }

    #[test]
    fn epoch_covers_each_example_at_most_once() {
        let src = tiny_dataset(10, 2);
        let tgt = tiny_dataset(10, 2);
        let mut it =
            BatchIterator::new(&src, tgt.features(), 3, 3, RngStream::new(1)).unwrap();
        let mut seen = std::collections::HashSet::new();
        // 3 batches of 3 fit in one epoch of 10 (tail of 1 dropped).
        for _ in 0..3 {
            let b = it.next_batch();
            for i in 0..3 {
                let row = b.x_s.row(i)[0];
                assert!(seen.insert(row.to_bits()), "row repeated within epoch");
            }
        }
    }

    #[test]
    fn same_seed_same_batches() {
        let src = tiny_dataset(8, 2);
        let tgt = tiny_dataset(6, 2);
        let mut a = BatchIterator::new(&src, tgt.features(), 4, 3, RngStream::new(9)).unwrap();
        let mut b = BatchIterator::new(&src, tgt.features(), 4, 3, RngStream::new(9)).unwrap();
        for _ in 0..10 {
            let ba = a.next_batch();
            let bb = b.next_batch();
            assert_eq!(ba.x_s.data(), bb.x_s.data());
            assert_eq!(ba.y_s, bb.y_s);
            assert_eq!(ba.x_t.data(), bb.x_t.data());
        }
    }

    #[test]
    fn full_batch_is_whole_shuffled_dataset() {
        let src = tiny_dataset(6, 1);
        let tgt = tiny_dataset(6, 1);
        let mut it =
            BatchIterator::new(&src, tgt.features(), 6, 6, RngStream::new(3)).unwrap();
        let b = it.next_batch();
        let mut rows: Vec<f64> = b.x_s.data().to_vec();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn oversized_batch_is_contract_error() {
        let src = tiny_dataset(4, 1);
        let tgt = tiny_dataset(4, 1);
        assert!(matches!(
            BatchIterator::new(&src, tgt.features(), 5, 2, RngStream::new(0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn domain_batch_exposes_no_target_labels() {
        // Structural leakage guard: a DomainBatch is exactly
        // (x_s, y_s, x_t) and the iterator is constructed from an
        // unlabeled FeaturesView of the target.
        let src = tiny_dataset(4, 1);
        let tgt = tiny_dataset(4, 1);
        let mut it =
            BatchIterator::new(&src, tgt.features(), 2, 2, RngStream::new(0)).unwrap();
        let DomainBatch { x_s, y_s, x_t } = it.next_batch();
        assert_eq!(x_s.nrows(), 2);
        assert_eq!(y_s.len(), 2);
        assert_eq!(x_t.nrows(), 2);
    }

    #[test]
    fn bad_label_rejected() {
        assert!(LabeledDataset::new(2, 1, vec![0.0, 1.0], vec![0, 2], 2).is_err());
    }
}
