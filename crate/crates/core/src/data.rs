//! Synthetic classification data and agent-level partitions.
//!
//! Datasets are Gaussian blobs: one center per class, isotropic noise with
//! standard deviation `spread`, centers rescaled so every pairwise center
//! distance is at least `4 * spread`. Partitions are either IID (uniform
//! near-equal split) or non-IID: each agent draws a class count, that many
//! distinct classes, a sample count, and then samples without replacement
//! from the pooled remaining samples of its chosen classes. All draws are
//! deterministic in the partition seed, and no index is ever assigned twice.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng;

const TAG_CENTERS: u64 = 0x43454e54;
const TAG_NOISE: u64 = 0x4e4f4953;
const TAG_PARTITION: u64 = 0x50415254;
const TAG_BATCHES: u64 = 0x42415443;
const TAG_SPLIT: u64 = 0x53504c49;

/// Labeled inputs with a fixed class count; every class is represented.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ds = Self { inputs, labels, num_classes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.nrows() != self.labels.len() {
            return Err(Error::ContractViolation(format!(
                "{} input rows but {} labels",
                self.inputs.nrows(),
                self.labels.len()
            )));
        }
        if self.num_classes < 1 {
            return Err(Error::ContractViolation("dataset needs at least one class".into()));
        }
        let mut seen = vec![false; self.num_classes];
        for &y in &self.labels {
            if y >= self.num_classes {
                return Err(Error::ContractViolation(format!(
                    "label {y} out of range for {} classes",
                    self.num_classes
                )));
            }
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::ContractViolation(format!(
                "class {missing} has no samples"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Materialize the rows at `indices` as one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::ContractViolation(format!(
                "index {bad} out of range for {} samples",
                self.len()
            )));
        }
        let mut inputs = Array2::zeros((indices.len(), self.dim()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            inputs.row_mut(row).assign(&self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, labels)
    }

    /// CSV with header `label,x1,..,xd`; values round-trip exactly.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.inputs.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.is_empty() || &header[0] != "label" {
            return Err(Error::SchemaMismatch(format!(
                "dataset CSV must start with a `label` column, got {:?}",
                header.iter().next()
            )));
        }
        let d = header.len() - 1;
        if d == 0 {
            return Err(Error::SchemaMismatch("dataset CSV has no feature columns".into()));
        }
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(Error::SchemaMismatch(format!(
                    "dataset CSV row has {} fields, expected {}",
                    rec.len(),
                    d + 1
                )));
            }
            labels.push(
                rec[0]
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad label {:?}: {e}", &rec[0])))?,
            );
            for j in 1..=d {
                values.push(
                    rec[j]
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad value {:?}: {e}", &rec[j])))?,
                );
            }
        }
        let m = labels.len();
        let num_classes = labels.iter().max().map_or(0, |&y| y + 1);
        let inputs = Array2::from_shape_vec((m, d), values)
            .map_err(|e| Error::Parse(format!("bad dataset shape: {e}")))?;
        Self::new(inputs, labels, num_classes)
    }
}

/// How to split a dataset across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub num_agents: usize,
    pub classes_per_agent: (usize, usize),
    pub samples_per_agent: (usize, usize),
    pub iid: bool,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Gaussian blobs: `c` classes in `d` dimensions, `per_class` samples each.
/// Centers are standard-normal draws, rescaled so the minimum pairwise
/// center distance is at least `4 * spread`; noise is isotropic with
/// standard deviation `spread`. Samples are ordered class by class.
pub fn make_gaussian_blobs(
    c: usize,
    d: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if c < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 classes, got {c}")));
    }
    if d < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 dimensions, got {d}")));
    }
    if per_class == 0 {
        return Err(Error::InvalidParameter("per_class must be positive".into()));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "spread must be finite and nonnegative, got {spread}"
        )));
    }
    let mut center_rng = rng::stream(seed, &[TAG_CENTERS]);
    let mut centers = Array2::zeros((c, d));
    for v in centers.iter_mut() {
        *v = center_rng.sample::<f64, _>(StandardNormal);
    }
    let mut min_dist = f64::INFINITY;
    for i in 0..c {
        for j in i + 1..c {
            let dist: f64 = (0..d)
                .map(|t| (centers[[i, t]] - centers[[j, t]]).powi(2))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(dist);
        }
    }
    if min_dist < 4.0 * spread {
        if min_dist == 0.0 {
            return Err(Error::InvalidParameter(
                "degenerate class centers coincide; use a different seed".into(),
            ));
        }
        let scale = 4.0 * spread / min_dist;
        centers.mapv_inplace(|v| v * scale);
    }
    let mut noise_rng = rng::stream(seed, &[TAG_NOISE]);
    let m = c * per_class;
    let mut inputs = Array2::zeros((m, d));
    let mut labels = Vec::with_capacity(m);
    for class in 0..c {
        for s in 0..per_class {
            let row = class * per_class + s;
            for t in 0..d {
                let z: f64 = noise_rng.sample(StandardNormal);
                inputs[[row, t]] = centers[[class, t]] + spread * z;
            }
            labels.push(class);
        }
    }
    Dataset::new(inputs, labels, c)
}

/// Deterministic stratified split: per class, a seeded shuffle and a
/// `test_fraction` cut. Both halves keep every class represented.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut gen = rng::stream(seed, &[TAG_SPLIT]);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..ds.num_classes {
        let mut members: Vec<usize> =
            (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        members.shuffle(&mut gen);
        let n_test = (test_fraction * members.len() as f64).floor() as usize;
        if test_fraction > 0.0 && n_test == 0 {
            return Err(Error::Infeasible(format!(
                "class {class} has {} samples, too few for test fraction {test_fraction}",
                members.len()
            )));
        }
        if n_test >= members.len() {
            return Err(Error::Infeasible(format!(
                "test fraction {test_fraction} leaves class {class} without training samples"
            )));
        }
        test_idx.extend(&members[..n_test]);
        train_idx.extend(&members[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let take = |idx: &[usize]| -> Result<Dataset> {
        let b = ds.batch(idx)?;
        Dataset::new(b.inputs, b.labels, ds.num_classes)
    };
    let train = take(&train_idx)?;
    if test_fraction == 0.0 {
        return Ok((train, Dataset::new(Array2::zeros((0, ds.dim())), vec![], ds.num_classes)
            .unwrap_or(Dataset {
                inputs: Array2::zeros((0, ds.dim())),
                labels: vec![],
                num_classes: ds.num_classes,
            })));
    }
    Ok((train, take(&test_idx)?))
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

/// Split sample indices across agents. IID mode shuffles and chunks into
/// near-equal parts; non-IID mode draws per-agent class subsets and sample
/// counts, then samples without replacement from the pooled chosen classes.
/// The returned index sets are disjoint and sorted.
pub fn partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let k = spec.num_agents;
    let m = ds.len();
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one agent".into()));
    }
    let mut gen = rng::stream(spec.seed, &[TAG_PARTITION]);

    if spec.iid {
        if k > m {
            return Err(Error::Infeasible(format!(
                "cannot split {m} samples across {k} agents without empty shards"
            )));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut gen);
        let base = m / k;
        let extra = m % k;
        let mut out = Vec::with_capacity(k);
        let mut start = 0;
        for a in 0..k {
            let size = base + usize::from(a < extra);
            let mut shard: Vec<usize> = order[start..start + size].to_vec();
            shard.sort_unstable();
            out.push(shard);
            start += size;
        }
        return Ok(out);
    }

    let (clo, chi) = spec.classes_per_agent;
    let (slo, shi) = spec.samples_per_agent;
    if clo < 1 || clo > chi || chi > ds.num_classes {
        return Err(Error::Infeasible(format!(
            "class range [{clo}, {chi}] invalid for {} classes",
            ds.num_classes
        )));
    }
    if slo < 1 || slo > shi {
        return Err(Error::Infeasible(format!("sample range [{slo}, {shi}] invalid")));
    }
    if k * slo > m {
        return Err(Error::Infeasible(format!(
            "minimum total demand {k} x {slo} = {} exceeds dataset size {m}",
            k * slo
        )));
    }

    let mut taken = vec![false; m];
    let mut out = Vec::with_capacity(k);
    for agent in 0..k {
        let n_classes = gen.gen_range(clo..=chi);
        let mut class_order: Vec<usize> = (0..ds.num_classes).collect();
        class_order.shuffle(&mut gen);
        let mut chosen: Vec<usize> = class_order[..n_classes].to_vec();
        chosen.sort_unstable();
        let n_samples = gen.gen_range(slo..=shi);
        let mut pool: Vec<usize> = (0..m)
            .filter(|&i| !taken[i] && chosen.binary_search(&ds.labels[i]).is_ok())
            .collect();
        if pool.len() < n_samples {
            return Err(Error::Infeasible(format!(
                "agent {agent} requested {n_samples} samples from classes {chosen:?} but only {} remain",
                pool.len()
            )));
        }
        pool.shuffle(&mut gen);
        let mut shard: Vec<usize> = pool[..n_samples].to_vec();
        for &i in &shard {
            taken[i] = true;
        }
        shard.sort_unstable();
        out.push(shard);
    }
    Ok(out)
}

/// One epoch over an index set: seeded shuffle, contiguous chunks, final
/// partial batch included.
pub fn batches(
    ds: &Dataset,
    indices: &[usize],
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be positive".into()));
    }
    let mut order = indices.to_vec();
    let mut gen = rng::stream(epoch_seed, &[TAG_BATCHES]);
    order.shuffle(&mut gen);
    order.chunks(batch_size).map(|chunk| ds.batch(chunk)).collect()
}
