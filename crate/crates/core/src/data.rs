//! Concept datasets, their fixed partition, split views and on-disk format.
//!
//! On disk a dataset is two files sharing a stem: `<stem>.json` is a
//! human-readable header and `<stem>.bin` holds little-endian `f64` columns
//! in the order `X[:,0..p]`, `C[:,0..K]`, `y`, each of length `N`.

use std::borrow::Cow;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::store::write_atomic;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Bottleneck,
    Incomplete,
}

/// Disjoint, exhaustive train/validation/test index sets (sorted).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    /// Shuffled 60/20/20 split; sizes are `round(0.6 N)`, `round(0.2 N)` and the remainder.
    pub fn sixty_twenty_twenty(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (0.6 * n as f64).round() as usize;
        let n_val = ((0.2 * n as f64).round() as usize).min(n - n_train);
        let mut train = idx[..n_train].to_vec();
        let mut validation = idx[n_train..n_train + n_val].to_vec();
        let mut test = idx[n_train + n_val..].to_vec();
        train.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        Self { train, validation, test }
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Split membership of every row, or an error if the sets overlap or leave gaps.
    pub fn membership(&self) -> Result<Vec<Split>> {
        let n = self.len();
        let mut owner: Vec<Option<Split>> = vec![None; n];
        for split in [Split::Train, Split::Validation, Split::Test] {
            for &i in self.indices(split) {
                if i >= n || owner[i].is_some() {
                    return Err(Error::InvalidArgument(format!("partition row {i} duplicated or out of range")));
                }
                owner[i] = Some(split);
            }
        }
        Ok(owner.into_iter().map(|o| o.expect("exhaustive")).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub j: usize,
    pub seed: u64,
    pub mechanism: Mechanism,
}

/// Covariates, binary concepts and binary targets with a fixed partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptDataset<T> {
    pub x: Matrix<T>,
    pub c: Matrix<T>,
    pub y: Vec<T>,
    pub partition: Partition,
    pub meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    #[serde(flatten)]
    meta: DatasetMeta,
    layout: String,
    partition: Partition,
}

impl<T: Scalar> ConceptDataset<T> {
    pub fn new(x: Matrix<T>, c: Matrix<T>, y: Vec<T>, partition: Partition, meta: DatasetMeta) -> Result<Self> {
        let n = x.rows();
        if c.rows() != n || y.len() != n || partition.len() != n {
            return Err(shape_err("ConceptDataset", format!("{n} rows everywhere"), format!("C {}, y {}, partition {}", c.rows(), y.len(), partition.len())));
        }
        partition.membership()?;
        let binary = |v: &T| *v == T::zero() || *v == T::one();
        if !c.as_slice().iter().all(binary) || !y.iter().all(binary) {
            return Err(Error::InvalidArgument("concepts and targets must be binary".into()));
        }
        Ok(Self { x, c, y, partition, meta })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn num_concepts(&self) -> usize {
        self.c.cols()
    }

    pub fn view(&self, split: Split) -> DataView<'_, T> {
        DataView {
            dataset: self,
            split,
            indices: Cow::Borrowed(self.partition.indices(split)),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ConceptDataset<U> {
        ConceptDataset {
            x: self.x.cast(),
            c: self.c.cast(),
            y: self.y.iter().map(|v| U::lit(v.as_f64())).collect(),
            partition: self.partition.clone(),
            meta: self.meta.clone(),
        }
    }

    fn paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("json"), stem.with_extension("bin"))
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (hpath, bpath) = Self::paths(stem);
        let header = Header {
            schema_version: DATASET_SCHEMA_VERSION,
            meta: self.meta.clone(),
            layout: "f64le columns: x[0..p], c[0..k], y".into(),
            partition: self.partition.clone(),
        };
        let n = self.n();
        let mut bytes = Vec::with_capacity(8 * n * (self.x.cols() + self.c.cols() + 1));
        for m in [&self.x, &self.c] {
            for j in 0..m.cols() {
                for i in 0..n {
                    bytes.write_all(&m[(i, j)].as_f64().to_le_bytes())?;
                }
            }
        }
        for v in &self.y {
            bytes.write_all(&v.as_f64().to_le_bytes())?;
        }
        write_atomic(&bpath, &bytes)?;
        write_atomic(&hpath, &serde_json::to_vec_pretty(&header)?)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (hpath, bpath) = Self::paths(stem);
        let header: Header = serde_json::from_slice(&std::fs::read(hpath)?)?;
        if header.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Config(format!("dataset schema {} unsupported", header.schema_version)));
        }
        let DatasetMeta { n, p, k, .. } = header.meta;
        let mut raw = Vec::new();
        std::fs::File::open(bpath)?.read_to_end(&mut raw)?;
        if raw.len() != 8 * n * (p + k + 1) {
            return Err(shape_err("dataset body", format!("{} bytes", 8 * n * (p + k + 1)), format!("{}", raw.len())));
        }
        let vals: Vec<T> = raw
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))))
            .collect();
        let column_block = |offset: usize, cols: usize| Matrix::from_fn(n, cols, |i, j| vals[offset + j * n + i]);
        let x = column_block(0, p);
        let c = column_block(n * p, k);
        let y = vals[n * (p + k)..].to_vec();
        Self::new(x, c, y, header.partition, header.meta)
    }
}

/// Rows of one split, optionally subsampled.
#[derive(Clone, Debug)]
pub struct DataView<'a, T> {
    dataset: &'a ConceptDataset<T>,
    split: Split,
    indices: Cow<'a, [usize]>,
}

impl<'a, T: Scalar> DataView<'a, T> {
    pub fn split(&self) -> Split {
        self.split
    }

    pub fn dataset(&self) -> &'a ConceptDataset<T> {
        self.dataset
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn x(&self) -> Matrix<T> {
        self.dataset.x.select_rows(&self.indices)
    }

    pub fn c(&self) -> Matrix<T> {
        self.dataset.c.select_rows(&self.indices)
    }

    pub fn y(&self) -> Vec<T> {
        self.indices.iter().map(|&i| self.dataset.y[i]).collect()
    }

    pub fn y_matrix(&self) -> Matrix<T> {
        Matrix::column_vector(&self.y())
    }

    /// Deterministic subsample keeping `max(1, round(fraction · len))` rows.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<DataView<'a, T>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("subsample fraction {fraction} outside (0, 1]")));
        }
        let keep = ((fraction * self.len() as f64).round() as usize).clamp(1.min(self.len()), self.len());
        let mut idx = self.indices.to_vec();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(keep);
        idx.sort_unstable();
        Ok(DataView {
            dataset: self.dataset,
            split: self.split,
            indices: Cow::Owned(idx),
        })
    }

    /// View restricted to the first `n` rows of this view.
    pub fn head(&self, n: usize) -> DataView<'a, T> {
        DataView {
            dataset: self.dataset,
            split: self.split,
            indices: Cow::Owned(self.indices[..n.min(self.len())].to_vec()),
        }
    }

    /// Number of rows per split, audited against the dataset partition.
    pub fn audit(&self) -> Result<SplitAudit> {
        let membership = self.dataset.partition.membership()?;
        let mut audit = SplitAudit::default();
        for &i in self.indices.iter() {
            match membership[i] {
                Split::Train => audit.train_rows += 1,
                Split::Validation => audit.validation_rows += 1,
                Split::Test => audit.test_rows += 1,
            }
        }
        Ok(audit)
    }
}

/// Row counts per split that reached a training routine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub train_rows: usize,
    pub validation_rows: usize,
    pub test_rows: usize,
}

impl SplitAudit {
    pub fn add(&mut self, other: SplitAudit) {
        self.train_rows += other.train_rows;
        self.validation_rows += other.validation_rows;
        self.test_rows += other.test_rows;
    }
}

/// Mini-batch index lists over `0..n`, reshuffled from `rng`. A trailing
/// single-row batch is folded into the previous one so batch statistics stay
/// defined.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().map_or(false, |b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}
