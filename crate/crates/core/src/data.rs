//! Datasets, synthetic generation, IDX ingestion and non-i.i.d. partitions.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::DataError;
use crate::rng::{stream, Purpose};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        let rows = labels.len();
        if features.len() != rows * num_features {
            return Err(DataError::ShapeMismatch {
                len: features.len(),
                rows,
                cols: num_features,
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, l)| **l >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                row,
                label,
                classes: num_classes,
            });
        }
        if num_features > 0 {
            if let Some(row) = features
                .chunks_exact(num_features)
                .position(|r| r.iter().any(|x| !x.is_finite()))
            {
                return Err(DataError::NonFiniteFeature(row));
            }
        }
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Copy of the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            num_features: self.num_features,
            num_classes: self.num_classes,
        }
    }

    /// Split off the last `n` rows.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let keep = self.len().saturating_sub(n);
        let tail_features = self.features.split_off(keep * self.num_features);
        let tail_labels = self.labels.split_off(keep);
        let tail = Dataset {
            features: tail_features,
            labels: tail_labels,
            num_features: self.num_features,
            num_classes: self.num_classes,
        };
        (self, tail)
    }

    /// Count of each label among `indices`.
    pub fn label_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in indices {
            h[self.labels[i]] += 1;
        }
        h
    }
}

/// Gaussian blobs: class `c` has a mean drawn from `N(0, class_sep²·I)` and
/// unit covariance. Labels cycle `0, 1, …, C−1`, so every prefix is
/// near-balanced.
pub fn synth_classification(
    n: usize,
    f: usize,
    c: usize,
    class_sep: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if c == 0 || f == 0 || n < 2 * c {
        return Err(DataError::InvalidParameters(format!(
            "need C >= 1, f >= 1 and n >= 2C (n = {n}, f = {f}, C = {c})"
        )));
    }
    if !(class_sep >= 0.0 && class_sep.is_finite()) {
        return Err(DataError::InvalidParameters(format!(
            "class separation must be non-negative, got {class_sep}"
        )));
    }
    let mut rng = stream(seed, Purpose::Dataset, &[]);
    let means: Vec<f64> = (0..c * f)
        .map(|_| class_sep * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut features = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % c;
        let mean = &means[label * f..(label + 1) * f];
        features.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
        labels.push(label);
    }
    Dataset::new(features, labels, f, c)
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, file: &'static str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(DataError::Truncated {
            file,
            needed: at + 4,
            available: bytes.len(),
        })
}

/// Parse IDX image and label buffers. Pixels are scaled to `[0, 1]`; the
/// class count is one more than the largest label.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset, DataError> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            file: "images",
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            file: "labels",
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n_images = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let f = rows * cols;
    let needed = 16 + n_images * f;
    if images.len() < needed {
        return Err(DataError::Truncated {
            file: "images",
            needed,
            available: images.len(),
        });
    }
    if labels.len() < 8 + n_labels {
        return Err(DataError::Truncated {
            file: "labels",
            needed: 8 + n_labels,
            available: labels.len(),
        });
    }
    let features: Vec<f64> = images[16..needed].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels[8..8 + n_labels].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, f, classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    parse_idx(&read_file(images_path)?, &read_file(labels_path)?)
}

/// Sample indices owned by each client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Disjoint, covers `0..n`, and no client is empty.
    pub fn is_valid_for(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for a in &self.assignments {
            if a.is_empty() {
                return false;
            }
            for &i in a {
                if i >= n || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Per-client label distributions.
    pub fn label_distributions(&self, ds: &Dataset) -> Vec<Vec<f64>> {
        self.assignments
            .iter()
            .map(|a| {
                let h = ds.label_histogram(a);
                let total = a.len().max(1) as f64;
                h.into_iter().map(|c| c as f64 / total).collect()
            })
            .collect()
    }

    /// Mean total-variation distance between all client pairs' label
    /// distributions.
    pub fn mean_pairwise_tv(&self, ds: &Dataset) -> f64 {
        let dists = self.label_distributions(ds);
        let m = dists.len();
        if m < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for a in 0..m {
            for b in a + 1..m {
                total += total_variation(&dists[a], &dists[b]);
            }
        }
        total / (m * (m - 1) / 2) as f64
    }

    /// Largest TV distance between any client and the pooled label distribution.
    pub fn max_tv_to_global(&self, ds: &Dataset) -> f64 {
        let all: Vec<usize> = self.assignments.iter().flatten().copied().collect();
        let global: Vec<f64> = ds
            .label_histogram(&all)
            .into_iter()
            .map(|c| c as f64 / all.len().max(1) as f64)
            .collect();
        self.label_distributions(ds)
            .iter()
            .map(|d| total_variation(d, &global))
            .fold(0.0, f64::max)
    }
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Label-sorted shards: sort by label, cut into `m·shards_per_client`
/// contiguous shards (sizes differ by at most one), and deal them out after a
/// seeded shuffle.
pub fn partition_shards(
    ds: &Dataset,
    m: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Partition, DataError> {
    let n = ds.len();
    if m == 0 || m > n {
        return Err(DataError::TooManyClients { m, n });
    }
    if shards_per_client == 0 || m * shards_per_client > n {
        return Err(DataError::InvalidParameters(format!(
            "{m} clients x {shards_per_client} shards need at least that many samples (n = {n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (ds.label(i), i));

    let total = m * shards_per_client;
    let base = n / total;
    let extra = n % total;
    let mut shards = Vec::with_capacity(total);
    let mut start = 0;
    for s in 0..total {
        let len = base + usize::from(s < extra);
        shards.push(&order[start..start + len]);
        start += len;
    }
    let mut rng = stream(seed, Purpose::Partition, &[0]);
    let mut ids: Vec<usize> = (0..total).collect();
    ids.shuffle(&mut rng);

    let assignments = ids
        .chunks(shards_per_client)
        .map(|chunk| {
            let mut a: Vec<usize> = chunk.iter().flat_map(|&s| shards[s].iter().copied()).collect();
            a.sort_unstable();
            a
        })
        .collect();
    Ok(Partition { assignments })
}

/// Per-class Dirichlet(`beta`) allocation. Clients left with fewer than
/// `min_samples` take samples one at a time from the currently largest client.
pub fn partition_dirichlet(
    ds: &Dataset,
    m: usize,
    beta: f64,
    min_samples: usize,
    seed: u64,
) -> Result<Partition, DataError> {
    let n = ds.len();
    if m == 0 || m > n || m * min_samples.max(1) > n {
        return Err(DataError::TooManyClients { m, n });
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(DataError::InvalidParameters(format!(
            "Dirichlet concentration must be positive, got {beta}"
        )));
    }
    let gamma = Gamma::new(beta, 1.0)
        .map_err(|e| DataError::InvalidParameters(format!("gamma({beta}): {e}")))?;
    let mut rng = stream(seed, Purpose::Partition, &[1]);
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); m];

    for class in 0..ds.num_classes() {
        let mut members: Vec<usize> = (0..n).filter(|&i| ds.label(i) == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut weights: Vec<f64> = (0..m).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            // Every draw underflowed: give the class to one client.
            weights = vec![0.0; m];
            weights[rng.random_range(0..m)] = 1.0;
        }
        let len = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (client, w) in weights.iter().enumerate() {
            cum += w;
            let end = if client + 1 == m {
                len
            } else {
                ((cum * len as f64).round() as usize).clamp(start, len)
            };
            assignments[client].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    let need = min_samples.max(1);
    while let Some(poor) = (0..m).find(|&c| assignments[c].len() < need) {
        let rich = (0..m)
            .max_by_key(|&c| (assignments[c].len(), std::cmp::Reverse(c)))
            .unwrap();
        let moved = assignments[rich].pop().unwrap();
        assignments[poor].push(moved);
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(Partition { assignments })
}
