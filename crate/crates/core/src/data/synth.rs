use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Planted};
use crate::error::{ensure, Result};
use crate::rng::RngStream;

/// A displaced subcluster inside one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodeConfig {
    pub class: usize,
    /// Fraction of the class drawn from the displaced Gaussian.
    pub fraction: f64,
    /// Displacement of the subcluster mean, in units of the class standard deviation.
    pub mean_offset: f64,
}

/// Isotropic Gaussian mixture with planted structure.
///
/// Class means sit on the first coordinate axis, `class_separation` apart and
/// centred on the origin; every class has unit variance. A submode is displaced
/// along the second axis (the first when `dims == 1`), i.e. perpendicular to
/// the line of class means, so it stays inside its own class's region while
/// sitting away from where the bulk of the data lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_classes: usize,
    pub dims: usize,
    pub n_per_class: usize,
    pub class_separation: f64,
    pub mislabel_fraction: f64,
    pub submode: Option<SubmodeConfig>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            dims: 2,
            n_per_class: 500,
            class_separation: 6.0,
            mislabel_fraction: 0.02,
            submode: None,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_classes >= 2, "num_classes must be at least 2");
        ensure!(self.dims >= 1, "dims must be positive");
        ensure!(self.n_per_class >= 1, "n_per_class must be positive");
        ensure!(
            self.class_separation > 0.0 && self.class_separation.is_finite(),
            "class_separation must be positive"
        );
        ensure!((0.0..1.0).contains(&self.mislabel_fraction), "mislabel_fraction must be in [0, 1)");
        if let Some(sub) = &self.submode {
            ensure!(sub.class < self.num_classes, "submode class {} out of range", sub.class);
            ensure!((0.0..1.0).contains(&sub.fraction), "submode fraction must be in [0, 1)");
            ensure!(sub.mean_offset.is_finite(), "submode offset must be finite");
        }
        Ok(())
    }

    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.dims];
        mean[0] = (class as f64 - (self.num_classes as f64 - 1.0) / 2.0) * self.class_separation;
        mean
    }
}

pub fn generate_mixture(cfg: &GenConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 0);
    let mut rng = root.child(0).rng();
    let n = cfg.num_classes * cfg.n_per_class;
    let mut features = Vec::with_capacity(n * cfg.dims);
    let mut labels = Vec::with_capacity(n);
    let mut planted = Vec::with_capacity(n);
    let submode_axis = if cfg.dims >= 2 { 1 } else { 0 };

    for class in 0..cfg.num_classes {
        let mean = cfg.class_mean(class);
        let n_sub = match &cfg.submode {
            Some(sub) if sub.class == class => (sub.fraction * cfg.n_per_class as f64).round() as usize,
            _ => 0,
        };
        for i in 0..cfg.n_per_class {
            let mut center = mean.clone();
            if i < n_sub {
                center[submode_axis] += cfg.submode.as_ref().map_or(0.0, |s| s.mean_offset);
                planted.push(Planted::SubmodeMember);
            } else {
                planted.push(Planted::Clean);
            }
            for c in &center {
                let z: f64 = rng.sample(StandardNormal);
                features.push(c + z);
            }
            labels.push(class);
        }
    }

    let n_flip = (cfg.mislabel_fraction * n as f64).round() as usize;
    if n_flip > 0 {
        let candidates: Vec<usize> = (0..n).filter(|&i| planted[i] == Planted::Clean).collect();
        ensure!(
            n_flip <= candidates.len(),
            "cannot mislabel {n_flip} of {} clean points",
            candidates.len()
        );
        let mut rng = root.child(1).rng();
        for pick in sample(&mut rng, candidates.len(), n_flip).into_vec() {
            let i = candidates[pick];
            labels[i] = different_label(labels[i], cfg.num_classes, &mut rng);
            planted[i] = Planted::Mislabeled;
        }
    }

    LabeledDataset::new((0..n as u32).collect(), features, cfg.dims, labels, cfg.num_classes, Some(planted))
}

/// Uniform draw from the `num_classes - 1` labels other than `label`.
pub(crate) fn different_label<R: Rng>(label: usize, num_classes: usize, rng: &mut R) -> usize {
    let r = rng.random_range(0..num_classes - 1);
    if r >= label {
        r + 1
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_config_has_only_clean_points() {
        let cfg = GenConfig { mislabel_fraction: 0.0, ..GenConfig::default() };
        let d = generate_mixture(&cfg).unwrap();
        assert_eq!(d.len(), 2000);
        assert!(d.planted().unwrap().iter().all(|&p| p == Planted::Clean));
    }

    #[test]
    fn exact_mislabel_count() {
        let d = generate_mixture(&GenConfig::default()).unwrap();
        let planted = d.planted().unwrap();
        let flipped: Vec<usize> = (0..d.len()).filter(|&i| planted[i] == Planted::Mislabeled).collect();
        assert_eq!(flipped.len(), 40);
        // Generation order is class-blocked, so the original label is i / n_per_class.
        for i in flipped {
            assert_ne!(d.labels()[i], i / 500);
        }
    }

    #[test]
    fn submode_is_displaced() {
        let cfg = GenConfig {
            mislabel_fraction: 0.0,
            submode: Some(SubmodeConfig { class: 1, fraction: 0.1, mean_offset: 4.0 }),
            ..GenConfig::default()
        };
        let d = generate_mixture(&cfg).unwrap();
        let members: Vec<usize> =
            (0..d.len()).filter(|&i| d.planted_at(i) == Planted::SubmodeMember).collect();
        assert_eq!(members.len(), 50);
        let mean_y = members.iter().map(|&i| d.row(i)[1]).sum::<f64>() / 50.0;
        assert!((mean_y - 4.0).abs() < 0.5, "{mean_y}");
        assert!(members.iter().all(|&i| d.labels()[i] == 1));
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_mixture(&GenConfig::default()).unwrap();
        let b = generate_mixture(&GenConfig::default()).unwrap();
        let c = generate_mixture(&GenConfig { seed: 1, ..GenConfig::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_fractions() {
        assert!(generate_mixture(&GenConfig { mislabel_fraction: 1.0, ..GenConfig::default() }).is_err());
        let cfg = GenConfig {
            submode: Some(SubmodeConfig { class: 9, fraction: 0.1, mean_offset: 1.0 }),
            ..GenConfig::default()
        };
        assert!(generate_mixture(&cfg).is_err());
    }
}
