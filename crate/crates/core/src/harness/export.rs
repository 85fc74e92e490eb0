//! `records.csv`, `timing.csv` and `summary.json`.
//!
//! `records.csv` columns, in order:
//!
//! ```text
//! seed, num_layers, filter_size, num_filters, penultimate_filters,
//! batch_norm, dropout, split_slice, provenance, status, epochs, mean_l1,
//! frames, per_frame_l1
//! ```
//!
//! `penultimate_filters` is `na` for single-layer networks, `status` is
//! `ok` or `failed: <reason>`, and the two list columns are
//! `;`-separated. Floats use the shortest representation that reads back
//! to the same value. Wall-clock time lives in `timing.csv` so that
//! `records.csv` is reproducible byte for byte.

use super::eval::{EvalRecord, Status};
use super::grid::HyperParams;
use super::rank::{normalize_and_rank, NormalizedRecord, PERCENTILE_CONVENTION};
use crate::augment::Provenance;
use crate::error::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

pub const RECORD_COLUMNS: [&str; 14] = [
    "seed",
    "num_layers",
    "filter_size",
    "num_filters",
    "penultimate_filters",
    "batch_norm",
    "dropout",
    "split_slice",
    "provenance",
    "status",
    "epochs",
    "mean_l1",
    "frames",
    "per_frame_l1",
];

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

pub fn records_csv(records: &[EvalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        let h = &r.hyper;
        let status = match &r.status {
            Status::Ok => "ok".to_string(),
            Status::Failed(m) => format!("failed: {m}"),
        };
        w.write_record([
            r.seed.to_string(),
            h.num_layers.to_string(),
            h.filter_size.to_string(),
            h.num_filters.to_string(),
            h.penultimate_filters.map_or("na".to_string(), |p| p.to_string()),
            h.batch_norm.to_string(),
            h.dropout.to_string(),
            h.split_slice.to_string(),
            r.provenance.as_str().to_string(),
            status,
            r.epochs.to_string(),
            r.mean_l1.to_string(),
            join(&r.frames),
            join(&r.per_frame_l1),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T> {
    let s = row.get(i).ok_or_else(|| Error::Format(format!("missing column {}", RECORD_COLUMNS[i])))?;
    s.parse().map_err(|_| Error::Format(format!("bad {} value {s:?}", RECORD_COLUMNS[i])))
}

fn list<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<Vec<T>> {
    let s = row.get(i).unwrap_or("");
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|v| v.parse().map_err(|_| Error::Format(format!("bad {} entry {v:?}", RECORD_COLUMNS[i]))))
        .collect()
}

/// Reads back what [`records_csv`] writes. Wall time is not stored there
/// and comes back as zero.
pub fn parse_records_csv(data: &[u8]) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_reader(data);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(RECORD_COLUMNS) {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let penultimate = match row.get(4) {
            Some("na") => None,
            _ => Some(field(&row, 4)?),
        };
        let provenance = match row.get(8) {
            Some("standard") => Provenance::Standard,
            Some("split-slice") => Provenance::SplitSlice,
            other => return Err(Error::Format(format!("bad provenance {other:?}"))),
        };
        let status = match row.get(9) {
            Some("ok") => Status::Ok,
            Some(s) if s.starts_with("failed: ") => Status::Failed(s["failed: ".len()..].to_string()),
            other => return Err(Error::Format(format!("bad status {other:?}"))),
        };
        out.push(EvalRecord {
            seed: field(&row, 0)?,
            hyper: HyperParams {
                num_layers: field(&row, 1)?,
                filter_size: field(&row, 2)?,
                num_filters: field(&row, 3)?,
                penultimate_filters: penultimate,
                batch_norm: field(&row, 5)?,
                dropout: field(&row, 6)?,
                split_slice: field(&row, 7)?,
            },
            provenance,
            status,
            epochs: field(&row, 10)?,
            wall_seconds: 0.0,
            mean_l1: field(&row, 11)?,
            frames: list(&row, 12)?,
            per_frame_l1: list(&row, 13)?,
        });
    }
    Ok(out)
}

pub fn timing_csv(records: &[EvalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "config", "wall_seconds"]).map_err(csv_err)?;
    for r in records {
        w.write_record([r.seed.to_string(), r.hyper.key(), format!("{:.3}", r.wall_seconds)])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupSummary {
    pub seed: u64,
    pub records: usize,
    pub failed: usize,
    pub best_config: String,
    pub best_mean_l1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfigSummary {
    pub config: String,
    pub groups: usize,
    pub median_normalized_loss: f64,
    pub median_percentile: f64,
}

/// Standard against split-slice training for otherwise equal settings.
#[derive(Clone, Debug, Serialize)]
pub struct SplitSliceSummary {
    pub pairs: usize,
    pub standard_median_l1: f64,
    pub split_slice_median_l1: f64,
    /// Median of standard minus split-slice normalized loss.
    pub median_normalized_reduction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub percentile_convention: &'static str,
    pub groups: Vec<GroupSummary>,
    pub split_slice: Option<SplitSliceSummary>,
    /// Configurations ordered by median normalized loss across groups.
    pub configs: Vec<ConfigSummary>,
}

fn med(mut v: Vec<f64>) -> f64 {
    super::errmap::median(&mut v)
}

/// Groups by seed, ranks within each group and summarizes.
pub fn summarize(records: &[EvalRecord]) -> Result<(Vec<NormalizedRecord>, Summary)> {
    let ranked = normalize_and_rank(records, |r| r.seed)?;
    let mut by_seed: BTreeMap<u64, Vec<&NormalizedRecord>> = BTreeMap::new();
    for r in &ranked {
        by_seed.entry(r.record.seed).or_default().push(r);
    }
    let groups = by_seed
        .iter()
        .map(|(&seed, rs)| {
            let best = rs.iter().find(|r| r.rank == Some(1)).expect("ranked group has a best record");
            GroupSummary {
                seed,
                records: rs.len(),
                failed: rs.iter().filter(|r| r.rank.is_none()).count(),
                best_config: best.record.hyper.key(),
                best_mean_l1: best.record.mean_l1,
            }
        })
        .collect();

    let mut per_config: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &ranked {
        if let (Some(n), Some(p)) = (r.normalized_loss, r.percentile) {
            let e = per_config.entry(r.record.hyper.key()).or_default();
            e.0.push(n);
            e.1.push(p);
        }
    }
    let mut configs: Vec<ConfigSummary> = per_config
        .into_iter()
        .map(|(config, (n, p))| ConfigSummary {
            config,
            groups: n.len(),
            median_normalized_loss: med(n),
            median_percentile: med(p),
        })
        .collect();
    configs.sort_by(|a, b| a.median_normalized_loss.total_cmp(&b.median_normalized_loss).then_with(|| a.config.cmp(&b.config)));

    let mut pairs: BTreeMap<(u64, HyperParams), [Option<&NormalizedRecord>; 2]> = BTreeMap::new();
    for r in ranked.iter().filter(|r| r.normalized_loss.is_some()) {
        let mut h = r.record.hyper;
        h.split_slice = false;
        pairs.entry((r.record.seed, h)).or_default()[r.record.hyper.split_slice as usize] = Some(r);
    }
    let complete: Vec<(&NormalizedRecord, &NormalizedRecord)> = pairs
        .values()
        .filter_map(|p| Some((p[0]?, p[1]?)))
        .collect();
    let split_slice = (!complete.is_empty()).then(|| SplitSliceSummary {
        pairs: complete.len(),
        standard_median_l1: med(complete.iter().map(|(s, _)| s.record.mean_l1).collect()),
        split_slice_median_l1: med(complete.iter().map(|(_, x)| x.record.mean_l1).collect()),
        median_normalized_reduction: med(
            complete
                .iter()
                .map(|(s, x)| s.normalized_loss.unwrap_or(f64::NAN) - x.normalized_loss.unwrap_or(f64::NAN))
                .collect(),
        ),
    });

    Ok((
        ranked,
        Summary {
            percentile_convention: PERCENTILE_CONVENTION,
            groups,
            split_slice,
            configs,
        },
    ))
}

/// Writes `records.csv`, `timing.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: impl AsRef<Path>, records: &[EvalRecord]) -> Result<Summary> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("records.csv"), records_csv(records)?)?;
    std::fs::write(dir.join("timing.csv"), timing_csv(records)?)?;
    let (_, summary) = summarize(records)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, layers: usize, split: bool, l1: f64) -> EvalRecord {
        EvalRecord {
            seed,
            hyper: HyperParams {
                num_layers: layers,
                filter_size: 3,
                num_filters: 8,
                penultimate_filters: (layers > 1).then_some(16),
                batch_norm: true,
                dropout: false,
                split_slice: split,
            },
            provenance: if split { Provenance::SplitSlice } else { Provenance::Standard },
            status: Status::Ok,
            epochs: 7,
            wall_seconds: 1.25,
            frames: vec![1, 3],
            per_frame_l1: vec![l1, l1 * 0.5 + 0.1],
            mean_l1: l1,
        }
    }

    #[test]
    fn csv_roundtrip() {
        let mut failed = rec(2, 3, true, f64::NAN);
        failed.status = Status::Failed("loss, then \"NaN\"".into());
        failed.per_frame_l1 = vec![f64::NAN, f64::NAN];
        let recs = vec![rec(1, 1, false, 0.1 + 0.2), rec(1, 3, true, 1e-300), failed];
        let bytes = records_csv(&recs).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("seed,num_layers,filter_size,"));
        assert!(text.contains(",na,"));
        let back = parse_records_csv(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.hyper, b.hyper);
            assert_eq!(a.status, b.status);
            assert_eq!(a.mean_l1.to_bits(), b.mean_l1.to_bits());
            assert_eq!(a.frames, b.frames);
            assert_eq!(b.wall_seconds, 0.0);
        }
        assert_eq!(records_csv(&back).unwrap(), bytes);
        assert!(parse_records_csv(b"seed,other\n1,2\n").is_err());
    }

    #[test]
    fn summary_pairs_and_best() {
        let recs = vec![
            rec(1, 3, false, 2.0),
            rec(1, 3, true, 1.0),
            rec(2, 3, false, 3.0),
            rec(2, 3, true, 4.0),
            rec(2, 1, false, 6.0),
        ];
        let (ranked, s) = summarize(&recs).unwrap();
        assert_eq!(ranked.len(), 5);
        assert_eq!(s.groups.len(), 2);
        assert_eq!(s.groups[0].best_config, "L3-k3-f8-p16-bn1-do0-ss1");
        assert_eq!(s.groups[1].best_mean_l1, 3.0);
        let ss = s.split_slice.unwrap();
        assert_eq!(ss.pairs, 2);
        // normalized reductions: seed 1: 2 - 1, seed 2: 1 - 4/3
        assert!((ss.median_normalized_reduction - 0.5 * (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(s.configs.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &recs).unwrap();
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["groups"].as_array().unwrap().len(), 2);
        assert!(dir.path().join("timing.csv").exists());
    }
}
