use std::collections::HashMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use super::synth::different_label;
use super::{DatasetSplit, LabeledDataset, Planted};
use crate::error::{contract, ensure, Result};
use crate::rng::RngStream;

/// Flips exactly `round(fraction * n)` labels to a uniformly drawn different
/// class and marks them `Mislabeled`.
pub fn inject_label_noise(dataset: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset> {
    ensure!((0.0..1.0).contains(&fraction), "noise fraction must be in [0, 1), got {fraction}");
    let n = dataset.len();
    let count = (fraction * n as f64).round() as usize;
    if count == 0 {
        return Ok(dataset.clone());
    }
    let mut rng = RngStream::new(seed, 0x6e6f_6973_65).rng();
    let mut labels = dataset.labels().to_vec();
    let mut planted: Vec<Planted> = (0..n).map(|i| dataset.planted_at(i)).collect();
    for i in sample(&mut rng, n, count).into_vec() {
        labels[i] = different_label(labels[i], dataset.num_classes(), &mut rng);
        planted[i] = Planted::Mislabeled;
    }
    Ok(dataset.with_labels(labels, planted))
}

/// Stratified random split. Falls back to an unstratified draw (and logs a
/// warning) when some present class has a single member.
pub fn split(dataset: &LabeledDataset, holdout_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    ensure!(
        holdout_fraction > 0.0 && holdout_fraction < 1.0,
        "holdout fraction must be in (0, 1), got {holdout_fraction}"
    );
    let mut rng = RngStream::new(seed, 0x7370_6c69_74).rng();
    let n = dataset.len();
    let counts = dataset.class_counts();
    let stratified = counts.iter().all(|&c| c == 0 || c >= 2);

    let mut holdout = Vec::new();
    if stratified {
        for class in 0..dataset.num_classes() {
            let mut members: Vec<usize> = (0..n).filter(|&i| dataset.labels()[i] == class).collect();
            members.shuffle(&mut rng);
            let take = (holdout_fraction * members.len() as f64).round() as usize;
            holdout.extend_from_slice(&members[..take]);
        }
    } else {
        log::warn!("a class has fewer than 2 members; falling back to an unstratified split");
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let take = (holdout_fraction * n as f64).round() as usize;
        holdout.extend_from_slice(&all[..take]);
    }
    holdout.sort_unstable();
    let mut in_holdout = vec![false; n];
    for &i in &holdout {
        in_holdout[i] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| !in_holdout[i]).collect();
    Ok(DatasetSplit { train: dataset.select(&train), holdout: dataset.select(&holdout), seed, stratified })
}

/// Examples at ranking positions `[lo, hi)`, kept in dataset order so that a
/// full-range subset is the dataset itself.
pub fn subset_by_rank(dataset: &LabeledDataset, ranking: &[u32], lo: usize, hi: usize) -> Result<LabeledDataset> {
    let n = dataset.len();
    ensure!(ranking.len() == n, "ranking has {} ids, dataset has {n}", ranking.len());
    ensure!(lo < hi && hi <= n, "invalid rank range [{lo}, {hi}) for {n} examples");
    let index: HashMap<u32, usize> = dataset.index_of();
    let mut seen = vec![false; n];
    for &id in ranking {
        match index.get(&id) {
            Some(&i) if !seen[i] => seen[i] = true,
            Some(_) => contract!("id {id} appears twice in ranking"),
            None => contract!("ranking id {id} is not in the dataset"),
        }
    }
    let mut rows: Vec<usize> = ranking[lo..hi].iter().map(|id| index[id]).collect();
    rows.sort_unstable();
    Ok(dataset.select(&rows))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::data::{generate_mixture, GenConfig};

    fn balanced(n_per_class: usize) -> LabeledDataset {
        generate_mixture(&GenConfig {
            num_classes: 2,
            n_per_class,
            mislabel_fraction: 0.0,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let d = balanced(50);
        assert_eq!(inject_label_noise(&d, 0.0, 3).unwrap(), d);
    }

    #[test]
    fn noise_flips_exact_count_to_different_labels() {
        let d = generate_mixture(&GenConfig { mislabel_fraction: 0.0, n_per_class: 125, ..GenConfig::default() })
            .unwrap();
        let noisy = inject_label_noise(&d, 0.1, 9).unwrap();
        let changed: Vec<usize> = (0..d.len()).filter(|&i| noisy.labels()[i] != d.labels()[i]).collect();
        assert_eq!(changed.len(), 50);
        assert!(changed.iter().all(|&i| noisy.planted_at(i) == Planted::Mislabeled));
        let marked = (0..d.len()).filter(|&i| noisy.planted_at(i) == Planted::Mislabeled).count();
        assert_eq!(marked, 50);
        assert_eq!(noisy, inject_label_noise(&d, 0.1, 9).unwrap());
        assert_eq!(noisy.features(), d.features());
    }

    #[test]
    fn stratified_half_split() {
        let d = balanced(50);
        let s = split(&d, 0.5, 1).unwrap();
        assert!(s.stratified);
        assert_eq!(s.train.len(), 50);
        assert_eq!(s.holdout.len(), 50);
        assert_eq!(s.train.class_counts(), vec![25, 25]);
        assert_eq!(s.holdout.class_counts(), vec![25, 25]);
        let a: HashSet<u32> = s.train.ids().iter().copied().collect();
        let b: HashSet<u32> = s.holdout.ids().iter().copied().collect();
        assert!(a.is_disjoint(&b));
        let union: HashSet<u32> = a.union(&b).copied().collect();
        assert_eq!(union, d.ids().iter().copied().collect());
    }

    #[test]
    fn split_seeds_differ_and_repeat() {
        let d = balanced(20);
        let a = split(&d, 0.3, 1).unwrap();
        let b = split(&d, 0.3, 2).unwrap();
        assert_ne!(a.holdout.ids(), b.holdout.ids());
        assert_eq!(a.holdout.ids(), split(&d, 0.3, 1).unwrap().holdout.ids());
    }

    #[test]
    fn split_counts_within_one_of_ideal() {
        let d = generate_mixture(&GenConfig { num_classes: 3, n_per_class: 7, mislabel_fraction: 0.0, ..GenConfig::default() })
            .unwrap();
        let s = split(&d, 0.4, 5).unwrap();
        for c in s.holdout.class_counts() {
            assert!((c as f64 - 2.8).abs() <= 1.0);
        }
    }

    #[test]
    fn singleton_class_falls_back() {
        let d = LabeledDataset::new(vec![0, 1, 2, 3], vec![0.0; 4], 1, vec![0, 0, 0, 1], 2, None).unwrap();
        let s = split(&d, 0.5, 0).unwrap();
        assert!(!s.stratified);
        assert_eq!(s.holdout.len(), 2);
        assert!(split(&d, 1.0, 0).is_err());
    }

    #[test]
    fn rank_subsets() {
        let d = balanced(10);
        let mut ranking: Vec<u32> = d.ids().to_vec();
        ranking.reverse();
        let all = subset_by_rank(&d, &ranking, 0, d.len()).unwrap();
        assert_eq!(all, d);
        let top = subset_by_rank(&d, &ranking, 0, 1).unwrap();
        assert_eq!(top.ids(), &[ranking[0]]);
        // windows of stride 5 tile the ranking
        let mut tiled = Vec::new();
        for k in (0..d.len()).step_by(5) {
            let mut window = subset_by_rank(&d, &ranking, k, k + 5).unwrap().ids().to_vec();
            let mut expected = ranking[k..k + 5].to_vec();
            window.sort_unstable();
            expected.sort_unstable();
            assert_eq!(window, expected);
            tiled.extend(window);
        }
        tiled.sort_unstable();
        assert_eq!(tiled, d.ids());
        assert!(subset_by_rank(&d, &ranking, 0, 0).is_err());
        let mut bad = ranking.clone();
        bad[0] = bad[1];
        assert!(subset_by_rank(&d, &bad, 0, 2).is_err());
    }
}
