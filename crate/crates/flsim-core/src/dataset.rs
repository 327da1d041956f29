//! Labeled datasets, the IDX binary format, and the non-IID Dirichlet split.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamLabel};
use crate::scalar::Scalar;
use crate::ClientId;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A single-label classification dataset with flat row-major features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset<S: Scalar> {
    features: Vec<S>,
    labels: Vec<u32>,
    num_classes: usize,
    feature_dim: usize,
}

impl<S: Scalar> LabeledDataset<S> {
    /// Builds a dataset, checking the shape/label invariants.
    pub fn new(features: Vec<S>, labels: Vec<u32>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::Consistency("feature_dim and num_classes must be positive".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::Consistency(format!(
                "feature matrix has {} entries, expected {} ({} rows x {} dims)",
                features.len(),
                labels.len() * feature_dim,
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Consistency("non-finite feature value".into()));
        }
        Ok(Self { features, labels, num_classes, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Feature row of sample `idx`.
    pub fn row(&self, idx: usize) -> &[S] {
        &self.features[idx * self.feature_dim..(idx + 1) * self.feature_dim]
    }

    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Class counts over the whole dataset.
    pub fn global_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// Dataset restricted to the first `n` samples (no-op when `n == 0` or
    /// `n >= len`). Used by the `subsample_size` config knob.
    pub fn head(&self, n: usize) -> Self {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        Self {
            features: self.features[..n * self.feature_dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    /// Splits off the first `per_class` samples of every class into one
    /// dataset and the rest into another. Sample order is preserved.
    pub fn split_per_class(&self, per_class: usize) -> (Self, Self) {
        let mut taken = vec![0usize; self.num_classes];
        let mut first_rows = Vec::new();
        let mut rest_rows = Vec::new();
        for i in 0..self.len() {
            let c = self.labels[i] as usize;
            if taken[c] < per_class {
                taken[c] += 1;
                first_rows.push(i);
            } else {
                rest_rows.push(i);
            }
        }
        (self.subset(&first_rows), self.subset(&rest_rows))
    }

    fn subset(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Self { features, labels, num_classes: self.num_classes, feature_dim: self.feature_dim }
    }
}

/// One client's slice of the training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: ClientId,
    pub sample_indices: Vec<usize>,
    pub class_histogram: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// Parameters of the Dirichlet non-IID split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub alpha: f64,
    pub min_samples_per_client: usize,
    pub seed: u64,
}

impl PartitionConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated form rejects NaN
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::ConfigRange {
                field: "num_clients".into(),
                message: "must be >= 1".into(),
            });
        }
        if !(self.alpha > 0.0) {
            return Err(Error::ConfigRange {
                field: "alpha".into(),
                message: format!("must be > 0, got {}", self.alpha),
            });
        }
        Ok(())
    }
}

fn read_u32_be(reader: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("truncated stream reading {what}")))
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads an IDX image/label pair (the MNIST container format) into a dataset.
///
/// Pixels are scaled to `[0, 1]` by dividing the raw bytes by 255.
pub fn load_idx<S: Scalar>(
    mut images_source: impl Read,
    mut labels_source: impl Read,
) -> Result<LabeledDataset<S>> {
    let images_magic = read_u32_be(&mut images_source, "images magic")?;
    if images_magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad images magic 0x{images_magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let num_images = read_u32_be(&mut images_source, "image count")? as usize;
    let rows = read_u32_be(&mut images_source, "image rows")? as usize;
    let cols = read_u32_be(&mut images_source, "image cols")? as usize;
    let feature_dim = rows.checked_mul(cols).ok_or_else(|| {
        Error::Format(format!("image dimensions {rows}x{cols} overflow"))
    })?;
    if feature_dim == 0 {
        return Err(Error::Format("zero-sized images".into()));
    }

    let labels_magic = read_u32_be(&mut labels_source, "labels magic")?;
    if labels_magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad labels magic 0x{labels_magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let num_labels = read_u32_be(&mut labels_source, "label count")? as usize;
    if num_labels != num_images {
        return Err(Error::Consistency(format!(
            "image/label count mismatch: {num_images} images vs {num_labels} labels"
        )));
    }

    let mut raw_pixels = vec![0u8; num_images * feature_dim];
    images_source.read_exact(&mut raw_pixels).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), "truncated stream reading pixel data"))
    })?;
    let mut raw_labels = vec![0u8; num_labels];
    labels_source.read_exact(&mut raw_labels).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), "truncated stream reading label data"))
    })?;

    let inv = S::from_f64_lossy(1.0 / 255.0);
    let features: Vec<S> = raw_pixels
        .iter()
        .map(|&b| S::from_u8(b).expect("u8 fits any Scalar") * inv)
        .collect();
    let labels: Vec<u32> = raw_labels.iter().map(|&b| u32::from(b)).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m as usize + 1);

    LabeledDataset::new(features, labels, num_classes, feature_dim)
}

/// Serializes a dataset back to IDX bytes (images, labels).
///
/// Features are mapped to bytes with `round(v * 255)`; exact for anything
/// produced by [`load_idx`]. Images are written as `n x feature_dim x 1`.
pub fn save_idx<S: Scalar>(dataset: &LabeledDataset<S>) -> (Vec<u8>, Vec<u8>) {
    let n = dataset.len();
    let mut images = Vec::with_capacity(16 + n * dataset.feature_dim());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(dataset.feature_dim() as u32).to_be_bytes());
    images.extend_from_slice(&1u32.to_be_bytes());
    let max = S::from_f64_lossy(255.0);
    for i in 0..n {
        for &v in dataset.row(i) {
            let byte = (v * max).round().to_u8().unwrap_or(255);
            images.push(byte);
        }
    }

    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(dataset.labels().iter().map(|&l| l as u8));

    (images, labels)
}

/// Distance between the two class means of a confusable pair, in units of the
/// noise standard deviation.
const SYNTH_PAIR_SEPARATION: f64 = 3.0;

/// Generates Gaussian class-cluster data: per class, a mean vector drawn once
/// from the seeded stream, then `samples = mean + unit-variance noise`.
/// Samples are laid out class-major (all of class 0 first).
///
/// Classes come in confusable pairs (2j, 2j+1) that share a standard-normal
/// base mean and sit [`SYNTH_PAIR_SEPARATION`] noise-sigmas apart along a
/// random direction, mimicking the near/far confusion structure of image
/// digits. An odd trailing class stands alone at its base mean.
pub fn synth_dataset<S: Scalar>(
    num_classes: usize,
    samples_per_class: usize,
    feature_dim: usize,
    seed: u64,
) -> LabeledDataset<S> {
    assert!(num_classes > 0 && samples_per_class > 0 && feature_dim > 0);
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * feature_dim);
    let mut labels = Vec::with_capacity(n);

    for class in 0..num_classes {
        let pair = (class / 2) as u64;
        let mut mean_rng = stream(seed, StreamLabel::SynthMeans, pair, 0);
        let base: Vec<f64> = (0..feature_dim)
            .map(|_| StandardNormal.sample(&mut mean_rng))
            .collect();
        // same stream position for both pair members: identical direction draw
        let direction: Vec<f64> = (0..feature_dim)
            .map(|_| StandardNormal.sample(&mut mean_rng))
            .collect();
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let side = if class % 2 == 0 { -0.5 } else { 0.5 };
        let offset = SYNTH_PAIR_SEPARATION * side;
        let mean: Vec<f64> = base
            .iter()
            .zip(&direction)
            .map(|(b, d)| b + offset * d / norm)
            .collect();

        for sample in 0..samples_per_class {
            let mut noise_rng = stream(seed, StreamLabel::SynthNoise, class as u64, sample as u64);
            for m in &mean {
                let noise: f64 = StandardNormal.sample(&mut noise_rng);
                features.push(S::from_f64_lossy(m + noise));
            }
            labels.push(class as u32);
        }
    }

    LabeledDataset::new(features, labels, num_classes, feature_dim)
        .expect("synthetic data satisfies the invariants by construction")
}

/// Dirichlet proportions over `n` bins with symmetric concentration `alpha`.
fn dirichlet_proportions(rng: &mut impl Rng, n: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0 checked by PartitionConfig");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|d| d / total).collect()
    } else {
        // alpha small enough to underflow every draw; fall back to uniform
        vec![1.0 / n as f64; n]
    }
}

/// Splits a dataset across `cfg.num_clients` shards with per-class Dirichlet
/// proportions, then rebalances until every shard has at least
/// `cfg.min_samples_per_client` samples.
pub fn dirichlet_partition<S: Scalar>(
    dataset: &LabeledDataset<S>,
    cfg: &PartitionConfig,
) -> Result<Vec<ClientShard>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Consistency("cannot partition an empty dataset".into()));
    }
    let needed = cfg.num_clients * cfg.min_samples_per_client;
    if dataset.len() < needed {
        return Err(Error::InfeasiblePartition {
            needed,
            clients: cfg.num_clients,
            available: dataset.len(),
        });
    }

    let n_clients = cfg.num_clients;
    let mut indices: Vec<Vec<usize>> = vec![Vec::new(); n_clients];

    for class in 0..dataset.num_classes() {
        let mut class_indices: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.label(i) as usize == class)
            .collect();
        if class_indices.is_empty() {
            continue;
        }
        let mut shuffle_rng = stream(cfg.seed, StreamLabel::PartitionShuffle, class as u64, 0);
        class_indices.shuffle(&mut shuffle_rng);

        let mut prop_rng = stream(cfg.seed, StreamLabel::PartitionProportions, class as u64, 0);
        let proportions = dirichlet_proportions(&mut prop_rng, n_clients, cfg.alpha);

        // Contiguous split at the cumulative proportion boundaries.
        let m = class_indices.len();
        let mut cum = 0.0;
        let mut start = 0usize;
        for (client, &p) in proportions.iter().enumerate() {
            cum += p;
            let end = if client + 1 == n_clients {
                m
            } else {
                ((cum * m as f64).floor() as usize).min(m).max(start)
            };
            indices[client].extend_from_slice(&class_indices[start..end]);
            start = end;
        }
    }

    // Rebalance starved shards from the currently largest one.
    while let Some(recipient) =
        (0..n_clients).find(|&c| indices[c].len() < cfg.min_samples_per_client)
    {
        let donor = (0..n_clients)
            .max_by_key(|&c| (indices[c].len(), std::cmp::Reverse(c)))
            .expect("at least one client");
        debug_assert_ne!(donor, recipient);
        let moved = indices[donor].pop().expect("donor non-empty");
        indices[recipient].push(moved);
    }

    Ok(indices
        .into_iter()
        .enumerate()
        .map(|(client, sample_indices)| {
            
            ClientShard {
                client_id: client as ClientId,
                class_histogram: histogram_of(&sample_indices, dataset),
                sample_indices,
            }
        })
        .collect())
}

fn histogram_of<S: Scalar>(indices: &[usize], dataset: &LabeledDataset<S>) -> Vec<usize> {
    let mut hist = vec![0usize; dataset.num_classes()];
    for &i in indices {
        hist[dataset.label(i) as usize] += 1;
    }
    hist
}

/// Class counts of a shard's samples, recomputed from its indices.
pub fn class_histogram<S: Scalar>(
    shard: &ClientShard,
    dataset: &LabeledDataset<S>,
) -> Result<Vec<usize>> {
    if let Some(&bad) = shard.sample_indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Consistency(format!(
            "shard {} references sample {bad} outside dataset of {} rows",
            shard.client_id,
            dataset.len()
        )));
    }
    Ok(histogram_of(&shard.sample_indices, dataset))
}

/// Shannon entropy (nats) of a count histogram; zero counts contribute zero.
pub fn histogram_entropy(hist: &[usize]) -> f64 {
    let total: usize = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}
