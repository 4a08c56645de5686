//! Score columns, prototypicality percentiles, and the ScoreTable CSV.
//!
//! Percentiles put every metric on one scale: 100 is most well-represented.
//! Values are sorted by goodness (raw for `HigherIsPrototypical`, `-raw`
//! otherwise), tied values share the mean of their positions `r`, and the
//! percentile is `100 * (r + 0.5) / n`.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Planted};
use crate::error::{contract, ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Adv,
    Ret,
    Agr,
    Conf,
    Priv,
    /// Mean of `adv` and `ret` percentiles.
    Boundary,
    /// Mean of `agr` and `conf` percentiles.
    Ensemble,
    Custom(String),
}

impl Metric {
    pub const BASE: [Metric; 5] = [Metric::Adv, Metric::Ret, Metric::Agr, Metric::Conf, Metric::Priv];

    pub fn name(&self) -> &str {
        match self {
            Metric::Adv => "adv",
            Metric::Ret => "ret",
            Metric::Agr => "agr",
            Metric::Conf => "conf",
            Metric::Priv => "priv",
            Metric::Boundary => "boundary",
            Metric::Ensemble => "ensemble",
            Metric::Custom(name) => name,
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            Metric::Ret | Metric::Agr => Orientation::HigherIsOutlier,
            _ => Orientation::HigherIsPrototypical,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "adv" => Metric::Adv,
            "ret" => Metric::Ret,
            "agr" => Metric::Agr,
            "conf" => Metric::Conf,
            "priv" => Metric::Priv,
            "boundary" => Metric::Boundary,
            "ensemble" => Metric::Ensemble,
            other if !other.is_empty() && other.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                Metric::Custom(other.to_string())
            }
            other => return Err(format!("invalid metric name {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsPrototypical,
    HigherIsOutlier,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::HigherIsPrototypical => Orientation::HigherIsOutlier,
            Orientation::HigherIsOutlier => Orientation::HigherIsPrototypical,
        }
    }
}

/// Raw per-example values of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreColumn {
    pub metric: Metric,
    pub orientation: Orientation,
    pub ids: Vec<u32>,
    pub raw: Vec<f64>,
}

impl ScoreColumn {
    pub fn new(metric: Metric, orientation: Orientation, ids: Vec<u32>, raw: Vec<f64>) -> Result<Self> {
        ensure!(ids.len() == raw.len(), "{} ids but {} values for {metric}", ids.len(), raw.len());
        ensure!(raw.iter().all(|v| !v.is_nan()), "NaN score in {metric}");
        Ok(Self { metric, orientation, ids, raw })
    }

    /// Column with the metric's canonical orientation.
    pub fn for_metric(metric: Metric, ids: Vec<u32>, raw: Vec<f64>) -> Result<Self> {
        let orientation = metric.orientation();
        Self::new(metric, orientation, ids, raw)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Concatenates columns of the same metric covering disjoint ids.
    pub fn concat(parts: &[ScoreColumn]) -> Result<Self> {
        ensure!(!parts.is_empty(), "nothing to concatenate");
        let first = &parts[0];
        ensure!(
            parts.iter().all(|p| p.metric == first.metric && p.orientation == first.orientation),
            "cannot concatenate columns of different metrics"
        );
        let ids = parts.iter().flat_map(|p| p.ids.iter().copied()).collect();
        let raw = parts.iter().flat_map(|p| p.raw.iter().copied()).collect();
        Self::new(first.metric.clone(), first.orientation, ids, raw)
    }

    /// Prototypicality percentiles, aligned with `self.ids`.
    pub fn percentiles(&self) -> Vec<f64> {
        let proto = self.orientation == Orientation::HigherIsPrototypical;
        let key: Vec<f64> = self.raw.iter().map(|&v| if proto { v } else { -v }).collect();
        mean_tie_ranks(&key).into_iter().map(|r| 100.0 * (r + 0.5) / key.len() as f64).collect()
    }
}

/// 0-based ascending ranks; tied values share the mean of their positions.
pub fn mean_tie_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("NaN excluded"));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mean = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

/// Per-row label and annotation carried into CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowMeta {
    pub label: usize,
    pub planted: Option<Planted>,
}

/// All metric columns over one id set, with prototypicality percentiles.
/// Rows are ordered by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    ids: Vec<u32>,
    meta: Option<Vec<RowMeta>>,
    columns: Vec<ScoreColumn>,
    percentiles: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn metrics(&self) -> Vec<Metric> {
        self.columns.iter().map(|c| c.metric.clone()).collect()
    }

    pub fn meta(&self) -> Option<&[RowMeta]> {
        self.meta.as_deref()
    }

    fn position(&self, metric: &Metric) -> Option<usize> {
        self.columns.iter().position(|c| &c.metric == metric)
    }

    pub fn column(&self, metric: &Metric) -> Option<&ScoreColumn> {
        self.position(metric).map(|i| &self.columns[i])
    }

    pub fn percentile(&self, metric: &Metric) -> Option<&[f64]> {
        self.position(metric).map(|i| self.percentiles[i].as_slice())
    }

    /// Percentile column or a contract error naming the missing metric.
    pub fn require(&self, metric: &Metric) -> Result<&[f64]> {
        match self.percentile(metric) {
            Some(p) => Ok(p),
            None => contract!("score table has no {metric} column"),
        }
    }

    /// Adds (or replaces) a column covering exactly this table's ids.
    pub fn add_column(&mut self, column: ScoreColumn) -> Result<()> {
        let aligned = align(&self.ids, &column)?;
        let pct = aligned.percentiles();
        match self.position(&aligned.metric) {
            Some(i) => {
                self.columns[i] = aligned;
                self.percentiles[i] = pct;
            }
            None => {
                self.columns.push(aligned);
                self.percentiles.push(pct);
            }
        }
        Ok(())
    }

    /// Attaches labels and annotations from `dataset`, which must contain every id.
    pub fn with_dataset_meta(mut self, dataset: &LabeledDataset) -> Result<Self> {
        let index = dataset.index_of();
        let mut meta = Vec::with_capacity(self.ids.len());
        for id in &self.ids {
            let Some(&i) = index.get(id) else {
                contract!("dataset has no row for id {id}");
            };
            meta.push(RowMeta { label: dataset.labels()[i], planted: dataset.planted().map(|p| p[i]) });
        }
        self.meta = Some(meta);
        Ok(self)
    }

    /// Ids ordered from least to most prototypical under `metric` (ties by id).
    pub fn ranking(&self, metric: &Metric) -> Result<Vec<u32>> {
        let pct = self.require(metric)?;
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| pct[a].partial_cmp(&pct[b]).expect("finite").then(self.ids[a].cmp(&self.ids[b])));
        Ok(order.into_iter().map(|i| self.ids[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "label".to_string(), "planted".to_string()];
        for c in &self.columns {
            header.push(format!("{}_raw", c.metric));
            header.push(format!("{}_pct", c.metric));
        }
        w.write_record(&header)?;
        for (row, id) in self.ids.iter().enumerate() {
            let meta = self.meta.as_ref().map(|m| m[row]);
            let mut rec = vec![
                id.to_string(),
                meta.map_or(String::new(), |m| m.label.to_string()),
                meta.and_then(|m| m.planted).map_or(String::new(), |p| p.to_string()),
            ];
            for (c, pct) in self.columns.iter().zip(&self.percentiles) {
                rec.push(c.raw[row].to_string());
                rec.push(pct[row].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`ScoreTable::write_csv`]. Percentiles are taken
    /// from the file; orientations from the metric names.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let bad_header = || Error::Parse { offset: 0, message: "expected header id,label,planted,{metric}_raw,{metric}_pct,...".into() };
        if header.len() < 3 || (header.len() - 3) % 2 != 0 || &header[0] != "id" {
            return Err(bad_header());
        }
        let mut metrics = Vec::new();
        for k in 0..(header.len() - 3) / 2 {
            let raw = header[3 + 2 * k].strip_suffix("_raw").ok_or_else(bad_header)?;
            let pct = header[4 + 2 * k].strip_suffix("_pct").ok_or_else(bad_header)?;
            if raw != pct {
                return Err(bad_header());
            }
            metrics.push(raw.parse::<Metric>().map_err(|_| bad_header())?);
        }
        let mut ids = Vec::new();
        let mut meta = Vec::new();
        let mut has_meta = true;
        let mut raws: Vec<Vec<f64>> = vec![Vec::new(); metrics.len()];
        let mut pcts: Vec<Vec<f64>> = vec![Vec::new(); metrics.len()];
        for rec in r.records() {
            let rec = rec?;
            let offset = rec.position().map_or(0, |p| p.byte());
            let bad = |what: &str| Error::Parse { offset, message: format!("invalid {what}") };
            ids.push(rec[0].parse::<u32>().map_err(|_| bad("id"))?);
            if rec[1].is_empty() {
                has_meta = false;
            } else {
                let label = rec[1].parse::<usize>().map_err(|_| bad("label"))?;
                let planted = if rec[2].is_empty() {
                    None
                } else {
                    Some(rec[2].parse::<Planted>().map_err(|_| bad("planted"))?)
                };
                meta.push(RowMeta { label, planted });
            }
            for k in 0..metrics.len() {
                raws[k].push(rec[3 + 2 * k].parse::<f64>().map_err(|_| bad("raw score"))?);
                pcts[k].push(rec[4 + 2 * k].parse::<f64>().map_err(|_| bad("percentile"))?);
            }
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by_key(|&i| ids[i]);
        ensure!(order.windows(2).all(|w| ids[w[0]] != ids[w[1]]), "duplicate id in score table");
        let pick = |v: &Vec<f64>| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let sorted_ids: Vec<u32> = order.iter().map(|&i| ids[i]).collect();
        let columns = metrics
            .iter()
            .zip(&raws)
            .map(|(m, raw)| ScoreColumn::for_metric(m.clone(), sorted_ids.clone(), pick(raw)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            meta: (has_meta && !meta.is_empty()).then(|| order.iter().map(|&i| meta[i]).collect()),
            ids: sorted_ids,
            columns,
            percentiles: pcts.iter().map(pick).collect(),
        })
    }
}

fn align(ids: &[u32], column: &ScoreColumn) -> Result<ScoreColumn> {
    ensure!(
        column.ids.len() == ids.len(),
        "{} column covers {} ids, table has {}",
        column.metric,
        column.ids.len(),
        ids.len()
    );
    let index: HashMap<u32, usize> = column.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    ensure!(index.len() == column.ids.len(), "duplicate id in {} column", column.metric);
    let mut raw = Vec::with_capacity(ids.len());
    for id in ids {
        match index.get(id) {
            Some(&i) => raw.push(column.raw[i]),
            None => contract!("{} column has no value for id {id}", column.metric),
        }
    }
    ScoreColumn::new(column.metric.clone(), column.orientation, ids.to_vec(), raw)
}

/// Builds a table from columns covering one common id set.
pub fn assemble_table(columns: Vec<ScoreColumn>) -> Result<ScoreTable> {
    ensure!(!columns.is_empty(), "need at least one score column");
    let mut ids = columns[0].ids.clone();
    ids.sort_unstable();
    let mut table = ScoreTable { ids, meta: None, columns: Vec::new(), percentiles: Vec::new() };
    for c in columns {
        ensure!(table.position(&c.metric).is_none(), "duplicate {} column", c.metric);
        table.add_column(c)?;
    }
    Ok(table)
}
