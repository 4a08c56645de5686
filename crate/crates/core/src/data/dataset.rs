use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::fingerprint::fingerprint;

/// Ground-truth annotation planted by a generator or noise injector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planted {
    Clean,
    Mislabeled,
    SubmodeMember,
    DensityOutlier,
}

impl Planted {
    pub fn as_str(self) -> &'static str {
        match self {
            Planted::Clean => "clean",
            Planted::Mislabeled => "mislabeled",
            Planted::SubmodeMember => "submode_member",
            Planted::DensityOutlier => "density_outlier",
        }
    }
}

impl fmt::Display for Planted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Planted {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "clean" => Ok(Planted::Clean),
            "mislabeled" => Ok(Planted::Mislabeled),
            "submode_member" => Ok(Planted::SubmodeMember),
            "density_outlier" => Ok(Planted::DensityOutlier),
            other => Err(format!("unknown planted annotation {other:?}")),
        }
    }
}

/// Dense row-major labeled examples with stable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    ids: Vec<u32>,
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
    planted: Option<Vec<Planted>>,
}

impl LabeledDataset {
    pub fn new(
        ids: Vec<u32>,
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
        planted: Option<Vec<Planted>>,
    ) -> Result<Self> {
        let n = ids.len();
        ensure!(dim > 0, "feature dimension must be positive");
        ensure!(num_classes >= 2, "need at least 2 classes, got {num_classes}");
        ensure!(features.len() == n * dim, "feature matrix has {} values, expected {n} x {dim}", features.len());
        ensure!(labels.len() == n, "{} labels for {n} examples", labels.len());
        if let Some(p) = &planted {
            ensure!(p.len() == n, "{} annotations for {n} examples", p.len());
        }
        ensure!(features.iter().all(|v| v.is_finite()), "non-finite feature value");
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            crate::error::contract!("label {bad} out of range for {num_classes} classes");
        }
        let mut seen = HashSet::with_capacity(n);
        for &id in &ids {
            ensure!(seen.insert(id), "duplicate id {id}");
        }
        Ok(Self { ids, features, dim, labels, num_classes, planted })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn planted(&self) -> Option<&[Planted]> {
        self.planted.as_deref()
    }

    /// Annotation of row `i`; `Clean` when the dataset carries none.
    pub fn planted_at(&self, i: usize) -> Planted {
        self.planted.as_ref().map_or(Planted::Clean, |p| p[i])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    /// Row references for `indices`, in order.
    pub fn batch(&self, indices: &[usize]) -> (Vec<&[f64]>, Vec<usize>) {
        (indices.iter().map(|&i| self.row(i)).collect(), indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn all_rows(&self) -> Vec<&[f64]> {
        self.rows().collect()
    }

    /// Map from id to row index.
    pub fn index_of(&self) -> HashMap<u32, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// New dataset holding rows `indices` in the given order. Annotations
    /// travel with their rows.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            planted: self.planted.as_ref().map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }

    /// Rows whose id is in `ids`, in dataset order.
    pub fn select_ids(&self, ids: &HashSet<u32>) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| ids.contains(&self.ids[i])).collect();
        self.select(&idx)
    }

    /// Rows whose id is not in `ids`, in dataset order.
    pub fn without_ids(&self, ids: &HashSet<u32>) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| !ids.contains(&self.ids[i])).collect();
        self.select(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub(crate) fn with_labels(&self, labels: Vec<usize>, planted: Vec<Planted>) -> Self {
        Self { labels, planted: Some(planted), ..self.clone() }
    }

    /// Content hash over ids, labels, annotations and the bit patterns of the features.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.len() * (12 + 8 * self.dim) + 16);
        bytes.extend_from_slice(&(self.dim as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.num_classes as u64).to_le_bytes());
        for i in 0..self.len() {
            bytes.extend_from_slice(&self.ids[i].to_le_bytes());
            bytes.extend_from_slice(&(self.labels[i] as u32).to_le_bytes());
            bytes.push(self.planted.as_ref().map_or(255, |p| p[i] as u8));
            for v in self.row(i) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fingerprint(&bytes)
    }
}

/// Disjoint train / holdout partition of a parent dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: LabeledDataset,
    pub holdout: LabeledDataset,
    pub seed: u64,
    /// False when some class was too small and the split fell back to an
    /// unstratified draw.
    pub stratified: bool,
}

impl DatasetSplit {
    /// The same partition with the two sides exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            train: self.holdout.clone(),
            holdout: self.train.clone(),
            seed: self.seed,
            stratified: self.stratified,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        LabeledDataset::new(
            vec![10, 11, 12],
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            2,
            vec![0, 1, 1],
            2,
            Some(vec![Planted::Clean, Planted::Mislabeled, Planted::Clean]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_labels() {
        assert!(LabeledDataset::new(vec![1, 1], vec![0.0; 2], 1, vec![0, 0], 2, None).is_err());
        assert!(LabeledDataset::new(vec![1, 2], vec![0.0; 2], 1, vec![0, 2], 2, None).is_err());
        assert!(LabeledDataset::new(vec![1], vec![f64::NAN], 1, vec![0], 2, None).is_err());
    }

    #[test]
    fn select_carries_annotations() {
        let d = tiny();
        let s = d.select(&[1, 0]);
        assert_eq!(s.ids(), &[11, 10]);
        assert_eq!(s.row(0), &[2.0, 3.0]);
        assert_eq!(s.planted().unwrap(), &[Planted::Mislabeled, Planted::Clean]);
    }

    #[test]
    fn fingerprint_sensitive_to_content() {
        let d = tiny();
        let mut other = d.clone();
        other.features[0] = 1e-300;
        assert_ne!(d.fingerprint(), other.fingerprint());
        assert_eq!(d.fingerprint(), tiny().fingerprint());
    }
}
