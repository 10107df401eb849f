//! Feature datasets: the class catalog, record/feature storage, dataset
//! directory ingestion, average-image imputation, paired-subset filtering,
//! balanced class weights, and the majority baseline.
//!
//! Feature values are 32-bit on disk and in memory; models cast to their
//! compute precision at the tape boundary.

pub mod format;
pub mod synth;

pub use format::{load_dataset, write_dataset};
pub use synth::{class_patterns, synth_generate, SynthConfig};

use crate::error::DataError;
use crate::matrix::Matrix;
use crate::models::Granularity;
use serde::{Deserialize, Serialize};

/// The eight point-of-interest categories, in catalog order.
pub const POI_CLASSES: [&str; 8] = [
    "Arts & Entertainment",
    "College & University",
    "Food",
    "Great Outdoors",
    "Nightlife Spot",
    "Professional & Other Places",
    "Shop & Service",
    "Travel & Transport",
];

/// Ordered, unique class names. The index of a name is its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        if names.is_empty() || names.iter().any(|n| n.is_empty()) {
            return Err(DataError::BadCatalog);
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(DataError::BadCatalog);
            }
        }
        Ok(ClassCatalog { names })
    }

    /// The default POI catalog.
    pub fn poi() -> Self {
        ClassCatalog { names: POI_CLASSES.iter().map(|s| s.to_string()).collect() }
    }

    /// Generic `class-<i>` names for synthetic data.
    pub fn generic(n: usize) -> Self {
        ClassCatalog { names: (0..n).map(|i| format!("class-{i}")).collect() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: usize) -> &str {
        &self.names[label]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.iter().find(|x| x.as_str() == s).copied()
    }
}

/// One post: identifier, gold label, split membership, and the precomputed
/// feature matrices. `has_image` records whether the image was genuinely
/// present before imputation; imputation fills `image_feats` but never
/// touches the flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub has_image: bool,
    pub text_feats: Matrix<f32>,
    pub image_feats: Option<Matrix<f32>>,
    /// Which modality carries signal, for synthetic data only.
    pub informative: Option<String>,
}

/// Dataset header: feature widths, sequence granularity, class catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub d_t: usize,
    pub d_v: usize,
    pub granularity: Granularity,
    pub classes: ClassCatalog,
}

/// An in-memory dataset. Records keep manifest order; splits are disjoint
/// by id. Immutable after load except for explicit imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<FeatureRecord>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, records: Vec<FeatureRecord>) -> Self {
        Dataset { header, records }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &FeatureRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Gold-label histogram over one split.
    pub fn label_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0usize; self.header.classes.len()];
        for r in self.split(split) {
            counts[r.label] += 1;
        }
        counts
    }

    /// Elementwise mean of the genuine train-split image features.
    ///
    /// Accumulates in f64 so that identical inputs average back to
    /// themselves bitwise. Dev/test images never contribute.
    pub fn average_image(&self) -> Result<Matrix<f32>, DataError> {
        let mut sum: Option<(Matrix<f64>, usize)> = None;
        for r in self.split(Split::Train).filter(|r| r.has_image) {
            let img = r.image_feats.as_ref().ok_or_else(|| {
                DataError::ImageFieldsInconsistent {
                    id: r.id.clone(),
                    has_image: true,
                    offsets: "absent",
                }
            })?;
            match &mut sum {
                None => sum = Some((img.cast::<f64>(), 1)),
                Some((acc, n)) => {
                    if acc.shape() != img.shape() {
                        return Err(DataError::AverageShape {
                            expected: acc.shape(),
                            found: img.shape(),
                        });
                    }
                    for (a, &x) in acc.data_mut().iter_mut().zip(img.data()) {
                        *a += x as f64;
                    }
                    *n += 1;
                }
            }
        }
        let (acc, n) = sum.ok_or(DataError::NoTrainImages)?;
        let inv = 1.0 / n as f64;
        Ok(acc.map(|x| x * inv).cast::<f32>())
    }

    /// Fill every missing image with `avg`. Idempotent; never alters a
    /// record whose image is genuinely present.
    pub fn impute_missing(&mut self, avg: &Matrix<f32>) -> Result<(), DataError> {
        if avg.cols() != self.header.d_v {
            return Err(DataError::AverageShape {
                expected: (avg.rows(), self.header.d_v),
                found: avg.shape(),
            });
        }
        for r in self.records.iter_mut() {
            if !r.has_image {
                r.image_feats = Some(avg.clone());
            }
        }
        Ok(())
    }

    /// Keep only genuinely-paired records in the named splits; other splits
    /// pass through untouched.
    pub fn filter_paired(&self, splits: &[Split]) -> Dataset {
        let records = self
            .records
            .iter()
            .filter(|r| !splits.contains(&r.split) || r.has_image)
            .cloned()
            .collect();
        Dataset { header: self.header.clone(), records }
    }

    pub fn paired_count(&self, split: Split) -> usize {
        self.split(split).filter(|r| r.has_image).count()
    }
}

/// Balanced class weights `w_c = N / (M * N_c)`.
///
/// A zero count is an error: it signals a broken split rather than an
/// infinitely up-weighted class.
pub fn class_weights(counts: &[usize], classes: &ClassCatalog) -> Result<Vec<f64>, DataError> {
    let n: usize = counts.iter().sum();
    let m = counts.len();
    let mut weights = Vec::with_capacity(m);
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(DataError::ZeroCountClass { class: classes.name(c).to_string() });
        }
        weights.push(n as f64 / (m as f64 * count as f64));
    }
    Ok(weights)
}

/// Most frequent class, ties broken toward the lowest index.
pub fn majority_class(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Constant predictions of the train-majority class for every test record.
pub fn majority_baseline(train_counts: &[usize], test_len: usize) -> Vec<usize> {
    vec![majority_class(train_counts); test_len]
}

/// Per-split tweet/image counts for one category of the bundled statistics
/// fixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub name: String,
    pub train: SplitCounts,
    pub dev: SplitCounts,
    pub test: SplitCounts,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitCounts {
    pub tweets: usize,
    pub images: usize,
}

/// The bundled POI statistics fixture: per-category counts plus the printed
/// totals row. The printed image totals do not equal the per-category sums;
/// both are preserved as published.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoiCounts {
    pub format: String,
    pub categories: Vec<CategoryCounts>,
    pub totals: CategoryCounts,
}

impl PoiCounts {
    /// The statistics fixture bundled with the crate.
    pub fn bundled() -> Result<Self, DataError> {
        Ok(serde_json::from_str(include_str!("../../fixtures/poi_counts.json"))?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, DataError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn catalog(&self) -> Result<ClassCatalog, DataError> {
        ClassCatalog::new(self.categories.iter().map(|c| c.name.clone()).collect())
    }

    pub fn tweet_counts(&self, split: Split) -> Vec<usize> {
        self.categories
            .iter()
            .map(|c| match split {
                Split::Train => c.train.tweets,
                Split::Dev => c.dev.tweets,
                Split::Test => c.test.tweets,
            })
            .collect()
    }
}
