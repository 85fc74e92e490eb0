use crate::augment::Provenance;
use crate::error::{Error, Result};
use crate::net::NetworkConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Value lists for the seven searched hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub num_layers: Vec<usize>,
    pub filter_size: Vec<usize>,
    pub num_filters: Vec<usize>,
    pub penultimate_filters: Vec<usize>,
    pub batch_norm: Vec<bool>,
    pub dropout: Vec<bool>,
    pub split_slice: Vec<bool>,
}

impl Default for GridSpec {
    /// The full default search: layers 1:2:7, filter size 1:2:11,
    /// filters 32:32:128, penultimate 64 and 128:128:512, and both settings
    /// of each flag.
    fn default() -> Self {
        Self {
            num_layers: vec![1, 3, 5, 7],
            filter_size: vec![1, 3, 5, 7, 9, 11],
            num_filters: vec![32, 64, 96, 128],
            penultimate_filters: vec![64, 128, 256, 384, 512],
            batch_norm: vec![false, true],
            dropout: vec![false, true],
            split_slice: vec![false, true],
        }
    }
}

/// One point of the search. `penultimate_filters` is `None` for
/// single-layer networks, which have no penultimate layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HyperParams {
    pub num_layers: usize,
    pub filter_size: usize,
    pub num_filters: usize,
    pub penultimate_filters: Option<usize>,
    pub batch_norm: bool,
    pub dropout: bool,
    pub split_slice: bool,
}

impl HyperParams {
    pub fn provenance(&self) -> Provenance {
        if self.split_slice {
            Provenance::SplitSlice
        } else {
            Provenance::Standard
        }
    }

    pub fn network_config(&self, coils: usize) -> NetworkConfig {
        NetworkConfig {
            num_layers: self.num_layers,
            filter_size: self.filter_size,
            num_filters: self.num_filters,
            penultimate_filters: self.penultimate_filters.unwrap_or(0),
            batch_norm: self.batch_norm,
            dropout: self.dropout,
            in_channels: 2 * coils,
            out_channels: 2,
        }
    }

    /// The same search point with every setting the network does not use
    /// cleared. Points with equal effective parameters train identical
    /// networks.
    pub fn effective(&self) -> HyperParams {
        let mut e = *self;
        if e.num_layers == 1 {
            e.num_filters = 0;
            e.penultimate_filters = None;
            e.batch_norm = false;
            e.dropout = false;
        } else if e.num_layers == 2 {
            e.num_filters = 0;
        }
        e
    }

    /// Short stable identifier, e.g. `L3-k5-f32-p128-bn1-do0-ss1`.
    pub fn key(&self) -> String {
        let p = self.penultimate_filters.map_or("na".to_string(), |p| p.to_string());
        format!(
            "L{}-k{}-f{}-p{}-bn{}-do{}-ss{}",
            self.num_layers,
            self.filter_size,
            self.num_filters,
            p,
            self.batch_norm as u8,
            self.dropout as u8,
            self.split_slice as u8
        )
    }
}

impl GridSpec {
    /// One fixed configuration with both training provenances.
    pub fn single(num_layers: usize, filter_size: usize, num_filters: usize, penultimate: usize, batch_norm: bool, dropout: bool) -> Self {
        Self {
            num_layers: vec![num_layers],
            filter_size: vec![filter_size],
            num_filters: vec![num_filters],
            penultimate_filters: vec![penultimate],
            batch_norm: vec![batch_norm],
            dropout: vec![dropout],
            split_slice: vec![false, true],
        }
    }

    /// Size of the raw cartesian product of the value lists.
    pub fn product_size(&self) -> usize {
        self.num_layers.len()
            * self.filter_size.len()
            * self.num_filters.len()
            * self.penultimate_filters.len()
            * self.batch_norm.len()
            * self.dropout.len()
            * self.split_slice.len()
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("num_layers", self.num_layers.len()),
            ("filter_size", self.filter_size.len()),
            ("num_filters", self.num_filters.len()),
            ("penultimate_filters", self.penultimate_filters.len()),
            ("batch_norm", self.batch_norm.len()),
            ("dropout", self.dropout.len()),
            ("split_slice", self.split_slice.len()),
        ];
        let empty: Vec<&str> = lists.iter().filter(|(_, n)| *n == 0).map(|(k, _)| *k).collect();
        if !empty.is_empty() {
            return Err(Error::Config(format!("empty grid lists: {}", empty.join(", "))));
        }
        if let Some(k) = self.filter_size.iter().find(|k| k.is_multiple_of(2)) {
            return Err(Error::Config(format!("filter_size {k} must be odd")));
        }
        if self.num_layers.contains(&0) || self.num_filters.contains(&0) || self.penultimate_filters.contains(&0) {
            return Err(Error::Config("layer and filter counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Unique search points in a fixed order. Single-layer points do not
    /// vary over the penultimate list, so the default grid gives 3072
    /// points out of a 3840 raw product.
    pub fn combinations(&self) -> Result<Vec<HyperParams>> {
        self.validate()?;
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for &num_layers in &self.num_layers {
            for &filter_size in &self.filter_size {
                for &num_filters in &self.num_filters {
                    for &p in &self.penultimate_filters {
                        for &batch_norm in &self.batch_norm {
                            for &dropout in &self.dropout {
                                for &split_slice in &self.split_slice {
                                    let hp = HyperParams {
                                        num_layers,
                                        filter_size,
                                        num_filters,
                                        penultimate_filters: (num_layers >= 2).then_some(p),
                                        batch_norm,
                                        dropout,
                                        split_slice,
                                    };
                                    if seen.insert(hp) {
                                        out.push(hp);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_counts() {
        let g = GridSpec::default();
        assert_eq!(g.product_size(), 4 * 6 * 4 * 5 * 2 * 2 * 2);
        let combos = g.combinations().unwrap();
        assert_eq!(combos.len(), 3072);
        assert!(combos.iter().filter(|c| c.num_layers == 1).all(|c| c.penultimate_filters.is_none()));
        let keys: BTreeSet<String> = combos.iter().map(HyperParams::key).collect();
        assert_eq!(keys.len(), 3072);
    }

    #[test]
    fn small_grid_product_and_effective_runs() {
        let g = GridSpec {
            num_layers: vec![1, 2, 3],
            filter_size: vec![3],
            num_filters: vec![8, 16],
            penultimate_filters: vec![4],
            batch_norm: vec![false, true],
            dropout: vec![false],
            split_slice: vec![true],
        };
        let combos = g.combinations().unwrap();
        assert_eq!(combos.len(), 12);
        let runs: BTreeSet<HyperParams> = combos.iter().map(HyperParams::effective).collect();
        // L1: one network; L2: filters unused, 2 BN settings; L3: 4
        assert_eq!(runs.len(), 1 + 2 + 4);
    }

    #[test]
    fn invalid_grids() {
        let mut g = GridSpec::default();
        g.dropout.clear();
        assert!(g.combinations().unwrap_err().to_string().contains("dropout"));
        let mut g = GridSpec::default();
        g.filter_size.push(4);
        assert!(g.combinations().is_err());
    }

    #[test]
    fn key_format() {
        let hp = HyperParams {
            num_layers: 3,
            filter_size: 5,
            num_filters: 32,
            penultimate_filters: Some(128),
            batch_norm: true,
            dropout: false,
            split_slice: true,
        };
        assert_eq!(hp.key(), "L3-k5-f32-p128-bn1-do0-ss1");
        assert_eq!(hp.provenance(), Provenance::SplitSlice);
        assert_eq!(hp.network_config(8).in_channels, 16);
    }
}
