use super::eval::EvalRecord;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Percentile convention: rank `r` (1 = lowest loss) of `N` successful
/// records maps to `100 × (N - r + 0.5) / N`, so the best record sits half
/// a slot below 100 and a single record lands on 50.
pub const PERCENTILE_CONVENTION: &str = "percentile = 100 * (N - rank + 0.5) / N, rank 1 = lowest mean L1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub record: EvalRecord,
    /// Mean L1 over the group's minimum; `None` for failed records.
    pub normalized_loss: Option<f64>,
    pub rank: Option<usize>,
    pub percentile: Option<f64>,
}

pub fn percentile(rank: usize, n: usize) -> f64 {
    100.0 * (n as f64 - rank as f64 + 0.5) / n as f64
}

/// Normalizes and ranks records within groups. Ties in loss are broken by
/// the hyperparameter key so the result does not depend on input order.
/// Output keeps the input order.
pub fn normalize_and_rank<K, F>(records: &[EvalRecord], group: F) -> Result<Vec<NormalizedRecord>>
where
    K: Ord,
    F: Fn(&EvalRecord) -> K,
{
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(group(r)).or_default().push(i);
    }
    let mut out: Vec<NormalizedRecord> = records
        .iter()
        .map(|r| NormalizedRecord {
            record: r.clone(),
            normalized_loss: None,
            rank: None,
            percentile: None,
        })
        .collect();
    for members in groups.values() {
        let mut ok: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| records[i].status.is_ok() && records[i].mean_l1.is_finite())
            .collect();
        if ok.is_empty() {
            return Err(Error::Group(format!("group of {} records has no successful run", members.len())));
        }
        ok.sort_by(|&a, &b| {
            records[a]
                .mean_l1
                .total_cmp(&records[b].mean_l1)
                .then_with(|| records[a].hyper.key().cmp(&records[b].hyper.key()))
        });
        let best = records[ok[0]].mean_l1;
        let n = ok.len();
        for (pos, &i) in ok.iter().enumerate() {
            let rank = pos + 1;
            out[i].normalized_loss = Some(if best > 0.0 { records[i].mean_l1 / best } else if records[i].mean_l1 == 0.0 { 1.0 } else { f64::INFINITY });
            out[i].rank = Some(rank);
            out[i].percentile = Some(percentile(rank, n));
        }
    }
    Ok(out)
}
