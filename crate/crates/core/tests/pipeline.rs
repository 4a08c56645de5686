use std::collections::HashSet;

use proptest::prelude::*;
use protoscope::analysis::{
    extract_canonical_prototypes, extract_memorized_exceptions, extract_uncommon_submodes, rank_correlations,
    CorrelationMethod,
};
use protoscope::data::{
    generate_mixture, load_idx, read_dataset_csv, subset_by_rank, write_dataset_csv, write_idx, SubmodeConfig,
};
use protoscope::dp::DpConfig;
use protoscope::metrics::{assemble_table, Metric};
use protoscope::nn::{load_checkpoint, save_checkpoint};
use protoscope::pipeline::{score_all, LadderConfig, PipelineConfig};
use protoscope::{EnsembleConfig, GenConfig, LabeledDataset, Planted, ScoreColumn, ScoreTable};

fn small_data() -> LabeledDataset {
    generate_mixture(&GenConfig {
        num_classes: 3,
        n_per_class: 30,
        submode: Some(SubmodeConfig { class: 1, fraction: 0.2, mean_offset: 4.0 }),
        ..GenConfig::default()
    })
    .unwrap()
}

fn fast_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().reseeded(seed);
    cfg.train.epochs = 8;
    cfg.fine_tune.max_epochs = 5;
    cfg.ensemble = EnsembleConfig { n_members: 4, train: cfg.train.clone(), ..cfg.ensemble };
    cfg.ladder = LadderConfig {
        sigmas: vec![0.5, 2.0, 8.0],
        replicates: 3,
        dp: DpConfig { epochs: 4, ..cfg.ladder.dp },
        ..cfg.ladder
    };
    cfg
}

#[test]
fn score_table_round_trips_through_csv() {
    let d = small_data();
    let a = score_all(&d, &fast_config(2)).unwrap();
    let mut buf = Vec::new();
    a.table.write_csv(&mut buf).unwrap();
    let back = ScoreTable::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.ids(), a.table.ids());
    assert_eq!(back.metrics(), a.table.metrics());
    for m in a.table.metrics() {
        assert_eq!(back.percentile(&m), a.table.percentile(&m));
    }
    let mut again = Vec::new();
    back.write_csv(&mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn extraction_sets_are_consistent_with_the_table() {
    let d = small_data();
    let t = score_all(&d, &fast_config(3)).unwrap().table;
    let ids: HashSet<u32> = t.ids().iter().copied().collect();
    for set in [
        extract_memorized_exceptions(&t, 25.0, 50.0, 50.0).unwrap(),
        extract_uncommon_submodes(&t, 25.0, 50.0).unwrap(),
        extract_canonical_prototypes(&t, 50.0).unwrap(),
    ] {
        assert!(set.ids.iter().all(|id| ids.contains(id)));
        assert!(set.ids.windows(2).all(|w| w[0] < w[1]));
    }
    let everything = extract_memorized_exceptions(&t, 100.0, 100.0, 100.0).unwrap();
    assert_eq!(everything.ids, t.ids());
    assert!(extract_memorized_exceptions(&t, 0.0, 0.0, 0.0).unwrap().is_empty());
}

#[test]
fn correlation_matrix_over_pipeline_output() {
    let t = score_all(&small_data(), &fast_config(4)).unwrap().table;
    let m = rank_correlations(&t, CorrelationMethod::Spearman).unwrap();
    assert_eq!(m.metrics.len(), 7);
    for i in 0..7 {
        assert_eq!(m.values[i][i], 1.0);
        for j in 0..7 {
            assert_eq!(m.values[i][j], m.values[j][i]);
            assert!((-1.0..=1.0).contains(&m.values[i][j]));
        }
    }
}

#[test]
fn dataset_and_checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = small_data();
    let mut buf = Vec::new();
    write_dataset_csv(&d, &mut buf).unwrap();
    let back = read_dataset_csv(buf.as_slice()).unwrap();
    assert_eq!(back.fingerprint(), d.fingerprint());
    assert_eq!(back.planted_at(0), d.planted_at(0));

    let a = score_all(&d, &fast_config(5)).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&a.baseline, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), a.baseline);
}

#[test]
fn idx_files_load_as_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    // Features already on the 1/255 grid survive quantisation exactly.
    let raw = generate_mixture(&GenConfig { dims: 4, n_per_class: 5, mislabel_fraction: 0.0, ..GenConfig::default() }).unwrap();
    let grid: Vec<f64> = raw.features().iter().map(|v| (v.abs().fract() * 255.0).round() / 255.0).collect();
    let d = LabeledDataset::new(raw.ids().to_vec(), grid, raw.dim(), raw.labels().to_vec(), raw.num_classes(), None).unwrap();
    let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
    write_idx(&d, 2, 2, &img, &lbl).unwrap();
    let back = load_idx(&img, &lbl).unwrap();
    assert_eq!(back.labels(), d.labels());
    assert_eq!(back.features(), d.features());
}

#[test]
fn planted_annotations_reach_the_table() {
    let d = small_data();
    let t = score_all(&d, &fast_config(6)).unwrap().table;
    let meta = t.meta().unwrap();
    let submode = meta.iter().filter(|m| m.planted == Some(Planted::SubmodeMember)).count();
    assert_eq!(submode, (0..d.len()).filter(|&i| d.planted_at(i) == Planted::SubmodeMember).count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rank_windows_partition_the_dataset(n in 4usize..60, w in 1usize..10, seed in 0u64..100) {
        let d = generate_mixture(&GenConfig { num_classes: 2, n_per_class: n, seed, ..GenConfig::default() }).unwrap();
        let raw: Vec<f64> = (0..d.len()).map(|i| d.row(i)[0]).collect();
        let col = ScoreColumn::for_metric(Metric::Adv, d.ids().to_vec(), raw).unwrap();
        let ranking = assemble_table(vec![col]).unwrap().ranking(&Metric::Adv).unwrap();
        let w = w.min(d.len());
        let mut seen = Vec::new();
        let mut k = 0;
        while k < d.len() {
            let hi = (k + w).min(d.len());
            seen.extend_from_slice(subset_by_rank(&d, &ranking, k, hi).unwrap().ids());
            k = hi;
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, d.ids().to_vec());
    }
}
