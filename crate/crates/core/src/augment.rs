//! Training sets for one (slice, coil) network: the standard single-sample
//! set and the split-slice set of all `2^n` synthetically aliased subsets.

use crate::error::{Error, Result};
use crate::num::Tensor3;
use crate::sim::{MultiCoil, Grid};
use serde::{Deserialize, Serialize};

pub const MAX_SMS_FACTOR: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Standard,
    SplitSlice,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Standard => "standard",
            Provenance::SplitSlice => "split-slice",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// Aliased multi-coil k-space, `2 × coils` channels.
    pub input: Tensor3,
    /// Real/imaginary k-space of the target slice and coil, or zeros.
    pub target: Tensor3,
    /// Bit `s` set when slice `s` is summed into the input.
    pub mask: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub samples: Vec<TrainingSample>,
    pub target_slice: usize,
    pub target_coil: usize,
    pub provenance: Provenance,
    /// Multiplier applied to every input and target; divide network output
    /// by it to return to acquisition units.
    pub scale: f64,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn in_channels(&self) -> usize {
        self.samples.first().map_or(0, |s| s.input.channels)
    }
}

/// All `2^n` subset masks in ascending order, the empty subset included.
pub fn enumerate_subsets(n: usize) -> Result<Vec<u32>> {
    if !(1..=MAX_SMS_FACTOR).contains(&n) {
        return Err(Error::Parameter(format!("SMS factor {n} outside 1..={MAX_SMS_FACTOR}")));
    }
    Ok((0..1u32 << n).collect())
}

pub fn full_mask(n: usize) -> u32 {
    ((1u64 << n) - 1) as u32
}

/// Coil-wise sum of the slices selected by `mask`, in slice order.
pub fn subset_sum(calib: &[MultiCoil], mask: u32) -> Result<MultiCoil> {
    let first = calib.first().ok_or_else(|| Error::Data("no calibration slices".into()))?;
    let mut sum = MultiCoil::zeros(first.grid, first.coil_count());
    for (s, slice) in calib.iter().enumerate() {
        if mask >> s & 1 == 1 {
            sum.add_scaled(slice, 1.0)?;
        }
    }
    Ok(sum)
}

fn check_targets(calib: &[MultiCoil], target_slice: usize, target_coil: usize) -> Result<()> {
    let first = calib.first().ok_or_else(|| Error::Data("no calibration slices".into()))?;
    if calib.len() > MAX_SMS_FACTOR {
        return Err(Error::Parameter(format!("{} slices exceeds {MAX_SMS_FACTOR}", calib.len())));
    }
    for s in calib {
        s.check_compatible(first)?;
    }
    if target_slice >= calib.len() {
        return Err(Error::Index(format!("target slice {target_slice} of {}", calib.len())));
    }
    if target_coil >= first.coil_count() {
        return Err(Error::Index(format!("target coil {target_coil} of {}", first.coil_count())));
    }
    Ok(())
}

fn target_tensor(calib: &[MultiCoil], slice: usize, coil: usize) -> Tensor3 {
    let grid: Grid = calib[slice].grid;
    Tensor3::from_complex_planes(&[&calib[slice].coils[coil]], grid.height, grid.width).expect("plane matches grid")
}

fn scale_for(full_input: &MultiCoil) -> Result<f64> {
    let m = full_input.max_magnitude();
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Data(format!("full aliased input has max magnitude {m}")));
    }
    Ok(1.0 / m)
}

/// Split-slice set: one sample per subset of the packet. The target is the
/// target slice/coil k-space when that slice is in the subset, else zero.
/// Calibration slices must already carry their CAIPI shifts.
pub fn build_split_slice_set(calib: &[MultiCoil], target_slice: usize, target_coil: usize) -> Result<TrainingSet> {
    check_targets(calib, target_slice, target_coil)?;
    let n = calib.len();
    let scale = scale_for(&subset_sum(calib, full_mask(n))?)?;
    let target = target_tensor(calib, target_slice, target_coil).scaled(scale);
    let grid = calib[0].grid;
    let samples = enumerate_subsets(n)?
        .into_iter()
        .map(|mask| {
            let input = subset_sum(calib, mask)?.to_tensor().scaled(scale);
            let target = if mask >> target_slice & 1 == 1 {
                target.clone()
            } else {
                Tensor3::zeros(2, grid.height, grid.width)
            };
            Ok(TrainingSample { input, target, mask })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet {
        samples,
        target_slice,
        target_coil,
        provenance: Provenance::SplitSlice,
        scale,
    })
}

/// Standard set: the acquired aliased frame against the calibration k-space
/// of the target slice and coil.
pub fn build_standard_set(
    calib: &[MultiCoil],
    aliased_frame: &MultiCoil,
    target_slice: usize,
    target_coil: usize,
) -> Result<TrainingSet> {
    check_targets(calib, target_slice, target_coil)?;
    aliased_frame.check_compatible(&calib[0])?;
    let scale = scale_for(aliased_frame)?;
    Ok(TrainingSet {
        samples: vec![TrainingSample {
            input: aliased_frame.to_tensor().scaled(scale),
            target: target_tensor(calib, target_slice, target_coil).scaled(scale),
            mask: full_mask(calib.len()),
        }],
        target_slice,
        target_coil,
        provenance: Provenance::Standard,
        scale,
    })
}

/// Either set, chosen by provenance.
pub fn build_set(
    provenance: Provenance,
    calib: &[MultiCoil],
    aliased_frame: &MultiCoil,
    target_slice: usize,
    target_coil: usize,
) -> Result<TrainingSet> {
    match provenance {
        Provenance::Standard => build_standard_set(calib, aliased_frame, target_slice, target_coil),
        Provenance::SplitSlice => build_split_slice_set(calib, target_slice, target_coil),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::sim::{simulate, sms_alias, SimConfig, SlicePacket};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn integer_slices(n: usize, coils: usize, grid: Grid, rng: &mut Rng) -> Vec<MultiCoil> {
        (0..n)
            .map(|_| MultiCoil {
                grid,
                coils: (0..coils)
                    .map(|_| {
                        (0..grid.len())
                            .map(|_| Complex64::new(rng.below(201) as f64 - 100.0, rng.below(201) as f64 - 100.0))
                            .collect()
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn subset_counts() {
        assert_eq!(enumerate_subsets(1).unwrap(), vec![0, 1]);
        assert_eq!(enumerate_subsets(3).unwrap().len(), 8);
        assert_eq!(enumerate_subsets(8).unwrap().len(), 256);
        assert!(enumerate_subsets(0).is_err());
        assert!(enumerate_subsets(17).is_err());
    }

    #[test]
    fn full_mask_sample_is_the_aliased_packet() {
        let cfg = SimConfig { matrix: 16, coils: 4, frames: 2, noise_sigma: 0.0, ..Default::default() };
        let ts = simulate(&cfg, 3).unwrap().timeseries;
        let set = build_split_slice_set(&ts.calibration, 1, 2).unwrap();
        assert_eq!(set.len(), 4);
        let packet = SlicePacket { fov_shift: ts.fov_shift, shifts: ts.shifts.clone(), slices: ts.calibration.clone() };
        let full = sms_alias(&packet).unwrap().to_tensor().scaled(set.scale);
        assert_eq!(set.samples[3].input, full);
        let max = set.samples[3].input.data.chunks(1).map(|v| v[0].abs()).fold(0.0, f64::max);
        assert!(max <= 1.0 + 1e-12);

        // excluded target slice -> zero target
        assert!(set.samples[1].target.data.iter().all(|&v| v == 0.0));
        // singleton subset -> own k-space in, own coil out
        let own = ts.calibration[1].to_tensor().scaled(set.scale);
        assert_eq!(set.samples[2].input, own);
        let coil = Tensor3::from_complex_planes(&[&ts.calibration[1].coils[2]], 16, 16).unwrap().scaled(set.scale);
        assert_eq!(set.samples[2].target, coil);

        // noiseless standard set equals the full-mask sample
        let std = build_standard_set(&ts.calibration, &ts.frames[0], 1, 2).unwrap();
        assert_eq!(std.len(), 1);
        assert_eq!(std.samples[0], set.samples[3]);
        assert_eq!(std.provenance, Provenance::Standard);
    }

    #[test]
    fn noisy_standard_input_differs_by_noise_only() {
        let cfg = SimConfig { matrix: 32, coils: 4, frames: 2, noise_sigma: 0.05, ..Default::default() };
        let ts = simulate(&cfg, 8).unwrap().timeseries;
        let std = build_standard_set(&ts.calibration, &ts.frames[1], 0, 0).unwrap();
        let truth: Vec<_> = (0..2).map(|s| ts.truth(1, s)).collect();
        let clean = subset_sum(&truth, full_mask(2)).unwrap().to_tensor();
        let noisy = std.samples[0].input.scaled(1.0 / std.scale);
        let d: Vec<f64> = noisy.data.iter().zip(&clean.data).map(|(a, b)| a - b).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.05).abs() < 0.005, "{sd}");
        assert!(mean.abs() < 0.005);
    }

    #[test]
    fn index_errors() {
        let grid = Grid::square(4);
        let calib = integer_slices(2, 2, grid, &mut Rng::new(1));
        assert!(matches!(build_split_slice_set(&calib, 2, 0), Err(Error::Index(_))));
        assert!(matches!(build_split_slice_set(&calib, 0, 2), Err(Error::Index(_))));
        assert!(matches!(build_standard_set(&calib, &calib[0], 5, 0), Err(Error::Index(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn split_set_invariants(n in 1usize..=6, seed in 0u64..1000) {
            let grid = Grid::square(4);
            let calib = integer_slices(n, 2, grid, &mut Rng::new(seed));
            let target = (seed as usize) % n;
            let set = build_split_slice_set(&calib, target, 1).unwrap();
            prop_assert_eq!(set.len(), 1 << n);
            let zero_targets = set.samples.iter().filter(|s| s.target.data.iter().all(|&v| v == 0.0)).count();
            prop_assert_eq!(zero_targets, 1 << (n - 1));
            let mut masks: Vec<u32> = set.samples.iter().map(|s| s.mask).collect();
            masks.dedup();
            prop_assert_eq!(masks.len(), 1 << n);
            // integer-valued k-space: subset sums are exact
            let full = subset_sum(&calib, full_mask(n)).unwrap();
            for m in 0..(1u32 << n) {
                let mut s = subset_sum(&calib, m).unwrap();
                s.add_scaled(&subset_sum(&calib, full_mask(n) & !m).unwrap(), 1.0).unwrap();
                prop_assert_eq!(&s, &full);
            }
        }
    }
}
