use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::metrics::{Metric, ScoreColumn, ScoreTable};

/// Column whose raw value is the mean of the constituents' percentiles.
pub fn combine_metrics(table: &ScoreTable, metrics: &[Metric], name: Metric) -> Result<ScoreColumn> {
    ensure!(!metrics.is_empty(), "nothing to combine");
    let columns = metrics.iter().map(|m| table.require(m)).collect::<Result<Vec<_>>>()?;
    let k = columns.len() as f64;
    let raw = (0..table.len()).map(|i| columns.iter().map(|c| c[i]).sum::<f64>() / k).collect();
    ScoreColumn::new(name, crate::metrics::Orientation::HigherIsPrototypical, table.ids().to_vec(), raw)
}

/// Adds `boundary` (adv + ret) and `ensemble` (agr + conf) to the table.
pub fn add_standard_combinations(table: &mut ScoreTable) -> Result<()> {
    let boundary = combine_metrics(table, &[Metric::Adv, Metric::Ret], Metric::Boundary)?;
    table.add_column(boundary)?;
    let ensemble = combine_metrics(table, &[Metric::Agr, Metric::Conf], Metric::Ensemble)?;
    table.add_column(ensemble)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetName {
    MemorizedExceptions,
    UncommonSubmodes,
    CanonicalPrototypes,
    Custom(String),
}

impl fmt::Display for SetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SetName::MemorizedExceptions => "memorized_exceptions",
            SetName::UncommonSubmodes => "uncommon_submodes",
            SetName::CanonicalPrototypes => "canonical_prototypes",
            SetName::Custom(s) => s,
        })
    }
}

impl FromStr for SetName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "memorized_exceptions" => SetName::MemorizedExceptions,
            "uncommon_submodes" => SetName::UncommonSubmodes,
            "canonical_prototypes" => SetName::CanonicalPrototypes,
            other => return Err(format!("unknown example set {other:?}")),
        })
    }
}

/// Ids selected by percentile thresholds, with the thresholds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub name: SetName,
    /// Ascending.
    pub ids: Vec<u32>,
    pub thresholds: Vec<(String, f64)>,
}

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// `# set=<name> k=v ...` followed by `id,label,planted` rows.
    pub fn write_csv<W: Write>(&self, mut writer: W, table: &ScoreTable) -> Result<()> {
        let mut header = format!("# set={}", self.name);
        for (k, v) in &self.thresholds {
            header.push_str(&format!(" {k}={v}"));
        }
        writeln!(writer, "{header}")?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "label", "planted"])?;
        let meta = table.meta();
        for &id in &self.ids {
            let row = table.ids().binary_search(&id).ok();
            let m = row.and_then(|r| meta.map(|m| m[r]));
            w.write_record([
                id.to_string(),
                m.map_or(String::new(), |m| m.label.to_string()),
                m.and_then(|m| m.planted).map_or(String::new(), |p| p.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn select(table: &ScoreTable, keep: impl Fn(usize) -> bool) -> Vec<u32> {
    (0..table.len()).filter(|&i| keep(i)).map(|i| table.ids()[i]).collect()
}

fn check_threshold(name: &str, v: f64) -> Result<()> {
    ensure!((0.0..=100.0).contains(&v), "{name} must be a percentage in [0, 100], got {v}");
    Ok(())
}

/// Confidently learned by the ensemble yet fragile at the boundary and lost
/// under private training: `ensemble >= 100 - ens_top`, `boundary <= bnd_bottom`,
/// `priv <= priv_bottom`.
pub fn extract_memorized_exceptions(table: &ScoreTable, ens_top: f64, bnd_bottom: f64, priv_bottom: f64) -> Result<ExampleSet> {
    check_threshold("ens_top", ens_top)?;
    check_threshold("bnd_bottom", bnd_bottom)?;
    check_threshold("priv_bottom", priv_bottom)?;
    let ens = table.require(&Metric::Ensemble)?;
    let bnd = table.require(&Metric::Boundary)?;
    let pv = table.require(&Metric::Priv)?;
    Ok(ExampleSet {
        name: SetName::MemorizedExceptions,
        ids: select(table, |i| ens[i] >= 100.0 - ens_top && bnd[i] <= bnd_bottom && pv[i] <= priv_bottom),
        thresholds: vec![("ens_top".into(), ens_top), ("bnd_bottom".into(), bnd_bottom), ("priv_bottom".into(), priv_bottom)],
    })
}

/// Lost under private training but well represented by the boundary or
/// ensemble view: `priv <= priv_bottom` and either `boundary` or `ensemble`
/// `>= 100 - other_top`.
pub fn extract_uncommon_submodes(table: &ScoreTable, priv_bottom: f64, other_top: f64) -> Result<ExampleSet> {
    check_threshold("priv_bottom", priv_bottom)?;
    check_threshold("other_top", other_top)?;
    let pv = table.require(&Metric::Priv)?;
    let bnd = table.require(&Metric::Boundary)?;
    let ens = table.require(&Metric::Ensemble)?;
    let cut = 100.0 - other_top;
    Ok(ExampleSet {
        name: SetName::UncommonSubmodes,
        ids: select(table, |i| pv[i] <= priv_bottom && (bnd[i] >= cut || ens[i] >= cut)),
        thresholds: vec![("priv_bottom".into(), priv_bottom), ("other_top".into(), other_top)],
    })
}

/// Examples in the top `top` percent of every base metric.
pub fn extract_canonical_prototypes(table: &ScoreTable, top: f64) -> Result<ExampleSet> {
    check_threshold("top", top)?;
    let columns = Metric::BASE.iter().map(|m| table.require(m)).collect::<Result<Vec<_>>>()?;
    let cut = 100.0 - top;
    Ok(ExampleSet {
        name: SetName::CanonicalPrototypes,
        ids: select(table, |i| columns.iter().all(|c| c[i] >= cut)),
        thresholds: vec![("top".into(), top)],
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::metrics::assemble_table;

    fn table(cols: [&[f64]; 5]) -> ScoreTable {
        let ids: Vec<u32> = (0..cols[0].len() as u32).collect();
        let mut t = assemble_table(
            Metric::BASE.iter().zip(cols).map(|(m, raw)| ScoreColumn::for_metric(m.clone(), ids.clone(), raw.to_vec()).unwrap()).collect(),
        )
        .unwrap();
        add_standard_combinations(&mut t).unwrap();
        t
    }

    fn toy() -> ScoreTable {
        // adv, ret (outlier-high), agr (outlier-high), conf, priv
        table([
            &[1.0, 2.0, 3.0, 4.0],
            &[0.4, 0.3, 0.2, 0.1],
            &[0.1, 0.2, 0.3, 0.4],
            &[0.9, 0.8, 0.7, 0.6],
            &[0.0, 1.0, 2.0, 3.0],
        ])
    }

    #[test]
    fn combination_matches_hand_means() {
        let t = toy();
        // adv pct: 12.5, 37.5, 62.5, 87.5; ret pct identical (lower ret is better)
        let bnd = t.column(&Metric::Boundary).unwrap();
        assert_eq!(bnd.raw, vec![12.5, 37.5, 62.5, 87.5]);
        // agr pct: 87.5 .. 12.5; conf pct: 87.5 .. 12.5
        assert_eq!(t.column(&Metric::Ensemble).unwrap().raw, vec![87.5, 62.5, 37.5, 12.5]);
        let same = combine_metrics(&t, &[Metric::Adv, Metric::Adv], Metric::Custom("a2".into())).unwrap();
        assert_eq!(same.percentiles(), t.percentile(&Metric::Adv).unwrap());
        assert!(combine_metrics(&t, &[Metric::Custom("nope".into())], Metric::Boundary).is_err());
    }

    #[test]
    fn threshold_extremes() {
        let t = toy();
        assert!(extract_memorized_exceptions(&t, 0.0, 0.0, 0.0).unwrap().is_empty());
        assert_eq!(extract_memorized_exceptions(&t, 100.0, 100.0, 100.0).unwrap().len(), 4);
        assert_eq!(extract_canonical_prototypes(&t, 100.0).unwrap().len(), 4);
        assert!(extract_uncommon_submodes(&t, 0.0, 50.0).unwrap().is_empty());
        let open = extract_uncommon_submodes(&t, 25.0, 100.0).unwrap();
        let priv_pct = t.percentile(&Metric::Priv).unwrap();
        let slice: Vec<u32> = (0..4).filter(|&i| priv_pct[i] <= 25.0).map(|i| i as u32).collect();
        assert_eq!(open.ids, slice);
        // id 0: ensemble top, boundary and priv bottom
        assert_eq!(extract_memorized_exceptions(&t, 25.0, 50.0, 50.0).unwrap().ids, vec![0]);
    }

    #[test]
    fn missing_columns_error() {
        let a = ScoreColumn::for_metric(Metric::Adv, vec![1], vec![1.0]).unwrap();
        let t = assemble_table(vec![a]).unwrap();
        assert!(extract_memorized_exceptions(&t, 25.0, 50.0, 50.0).is_err());
        assert!(extract_canonical_prototypes(&t, 50.0).is_err());
        assert!(extract_uncommon_submodes(&t, 25.0, 50.0).is_err());
    }

    proptest! {
        #[test]
        fn loosening_never_shrinks(
            raw in proptest::collection::vec(proptest::collection::vec(0u8..20, 5), 1..30),
            a in 0.0f64..100.0, b in 0.0f64..100.0, c in 0.0f64..100.0, extra in 0.0f64..50.0,
            scale in 0.1f64..10.0,
        ) {
            let cols: Vec<Vec<f64>> = (0..5).map(|m| raw.iter().map(|r| f64::from(r[m])).collect()).collect();
            let t = table([&cols[0], &cols[1], &cols[2], &cols[3], &cols[4]]);
            let up = |v: f64| (v + extra).min(100.0);
            let subset = |s: &ExampleSet, of: &ExampleSet| s.ids.iter().all(|&id| of.contains(id));
            let base = extract_memorized_exceptions(&t, a, b, c).unwrap();
            prop_assert!(subset(&base, &extract_memorized_exceptions(&t, up(a), b, c).unwrap()));
            prop_assert!(subset(&base, &extract_memorized_exceptions(&t, a, up(b), c).unwrap()));
            prop_assert!(subset(&base, &extract_memorized_exceptions(&t, a, b, up(c)).unwrap()));
            prop_assert_eq!(&base, &extract_memorized_exceptions(&t, a, b, c).unwrap());
            let sub = extract_uncommon_submodes(&t, a, b).unwrap();
            prop_assert!(subset(&sub, &extract_uncommon_submodes(&t, up(a), b).unwrap()));
            prop_assert!(subset(&sub, &extract_uncommon_submodes(&t, a, up(b)).unwrap()));
            let proto = extract_canonical_prototypes(&t, a).unwrap();
            prop_assert!(subset(&proto, &extract_canonical_prototypes(&t, up(a)).unwrap()));
            // rescaling a constituent leaves the combination alone
            let scaled = table([&cols[0].iter().map(|v| v * scale).collect::<Vec<_>>(), &cols[1], &cols[2], &cols[3], &cols[4]]);
            prop_assert_eq!(scaled.percentile(&Metric::Boundary), t.percentile(&Metric::Boundary));
        }
    }
}
