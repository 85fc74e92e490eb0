use super::eval::plane_l1;
use crate::error::{shape_err, Error, Result};
use crate::sim::{Grid, MultiCoil};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Relative floor added to the reference magnitude in the percent-error
/// denominator.
pub const EPS_RELATIVE: f64 = 1e-6;

/// Fraction of the peak reference magnitude that defines the support when
/// no phantom mask is available.
pub const SUPPORT_THRESHOLD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMap {
    pub slice: usize,
    pub height: usize,
    pub width: usize,
    /// `100 × |recon - ref| / (|ref| + ε)` on root-sum-of-squares images.
    pub percent: Vec<f64>,
    pub support: Vec<bool>,
    pub median_percent: f64,
    /// Mean absolute real/imaginary k-space difference.
    pub kspace_l1: f64,
}

/// Root-sum-of-squares coil combination of the images of `mc`.
pub fn rss_image(mc: &MultiCoil) -> Result<Vec<f64>> {
    let images = mc.to_images()?;
    let mut out = vec![0.0; mc.grid.len()];
    for img in &images {
        out.iter_mut().zip(img).for_each(|(o, z)| *o += z.norm_sqr());
    }
    out.iter_mut().for_each(|v| *v = v.sqrt());
    Ok(out)
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Percent-error maps per slice. `recon` and `truth` must be in the same
/// (unshifted) frame. `support[s]`, when given, restricts the median;
/// otherwise voxels above [`SUPPORT_THRESHOLD`] of the reference peak are
/// used.
pub fn error_map(recon: &[MultiCoil], truth: &[MultiCoil], support: Option<&[Vec<bool>]>) -> Result<Vec<ErrorMap>> {
    if recon.len() != truth.len() {
        return Err(shape_err(format!("{} reconstructed slices vs {} references", recon.len(), truth.len())));
    }
    recon
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(s, (r, t))| {
            r.check_compatible(t)?;
            let ri = rss_image(r)?;
            let ti = rss_image(t)?;
            let peak = ti.iter().fold(0.0_f64, |m, v| m.max(*v));
            let eps = EPS_RELATIVE * peak.max(f64::MIN_POSITIVE);
            let percent: Vec<f64> = ri.iter().zip(&ti).map(|(a, b)| 100.0 * (a - b).abs() / (b + eps)).collect();
            let mask = match support {
                Some(m) => {
                    let m = m.get(s).ok_or_else(|| Error::Index(format!("no support mask for slice {s}")))?;
                    if m.len() != t.grid.len() {
                        return Err(shape_err(format!("support has {} voxels, grid {}", m.len(), t.grid.len())));
                    }
                    m.clone()
                }
                None => ti.iter().map(|v| *v > SUPPORT_THRESHOLD * peak).collect(),
            };
            let mut inside: Vec<f64> = percent.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
            let values = 2 * t.grid.len() * t.coil_count();
            let l1: f64 = r.coils.iter().zip(&t.coils).map(|(a, b)| plane_l1(a, b)).sum();
            Ok(ErrorMap {
                slice: s,
                height: t.grid.height,
                width: t.grid.width,
                median_percent: median(&mut inside),
                percent,
                support: mask,
                kspace_l1: l1 / values as f64,
            })
        })
        .collect()
}

/// Binary 8-bit graymap; values are clipped to `[0, clip]` and scaled to
/// 0..=255.
pub fn encode_pgm(values: &[f64], grid: Grid, clip: f64) -> Result<Vec<u8>> {
    if values.len() != grid.len() {
        return Err(shape_err(format!("{} values for a {}x{} image", values.len(), grid.height, grid.width)));
    }
    let mut out = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend(values.iter().map(|v| {
        let t = if v.is_finite() { (v / clip).clamp(0.0, 1.0) } else { 1.0 };
        (t * 255.0).round() as u8
    }));
    Ok(out)
}

/// Row-major little-endian f64 values.
pub fn encode_raw(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `{prefix}_s{slice}.pgm` (clipped at 100%) and `{prefix}_s{slice}.f64`
/// into `dir`.
pub fn write_error_maps(dir: impl AsRef<Path>, prefix: &str, maps: &[ErrorMap]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for m in maps {
        let grid = Grid::new(m.height, m.width);
        std::fs::write(dir.join(format!("{prefix}_s{}.pgm", m.slice)), encode_pgm(&m.percent, grid, 100.0)?)?;
        std::fs::write(dir.join(format!("{prefix}_s{}.f64", m.slice)), encode_raw(&m.percent))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimConfig};

    fn truth() -> (Vec<MultiCoil>, Vec<Vec<bool>>) {
        let cfg = SimConfig { matrix: 16, coils: 3, frames: 2, ..SimConfig::default() };
        let ds = simulate(&cfg, 1).unwrap();
        let slices = (0..2).map(|s| crate::sim::shift_multicoil(&ds.timeseries.calibration[s], -ds.timeseries.shifts[s])).collect();
        let support = (0..2).map(|s| ds.support(s).unwrap()).collect();
        (slices, support)
    }

    #[test]
    fn identical_inputs_give_zero() {
        let (t, sup) = truth();
        let maps = error_map(&t, &t, Some(&sup)).unwrap();
        for m in &maps {
            assert!(m.percent.iter().all(|&p| p == 0.0));
            assert_eq!(m.kspace_l1, 0.0);
            assert_eq!(m.median_percent, 0.0);
        }
    }

    #[test]
    fn doubled_recon_is_one_hundred_percent() {
        let (t, sup) = truth();
        let doubled: Vec<MultiCoil> = t.iter().map(|m| m.scaled(2.0)).collect();
        for m in error_map(&doubled, &t, Some(&sup)).unwrap() {
            assert!((m.median_percent - 100.0).abs() < 1e-3, "{}", m.median_percent);
            assert!(m.kspace_l1 > 0.0);
        }
        let fallback = error_map(&doubled, &t, None).unwrap();
        assert!((fallback[0].median_percent - 100.0).abs() < 1e-3);
    }

    #[test]
    fn mismatches_are_rejected() {
        let (t, _) = truth();
        assert!(error_map(&t[..1], &t, None).is_err());
        assert!(error_map(&t, &t, Some(&[vec![true; 3]])).is_err());
    }

    #[test]
    fn pgm_layout_and_raw_dump() {
        let grid = Grid::new(2, 3);
        let pgm = encode_pgm(&[0.0, 50.0, 100.0, 200.0, -1.0, f64::NAN], grid, 100.0).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0, 128, 255, 255, 0, 255]);
        let raw = encode_raw(&[1.5, -2.0]);
        assert_eq!(raw.len(), 16);
        assert_eq!(f64::from_le_bytes(raw[8..].try_into().unwrap()), -2.0);
        let dir = tempfile::tempdir().unwrap();
        let (t, sup) = truth();
        write_error_maps(dir.path(), "raki", &error_map(&t, &t, Some(&sup)).unwrap()).unwrap();
        assert!(dir.path().join("raki_s1.pgm").exists());
        assert_eq!(std::fs::metadata(dir.path().join("raki_s0.f64")).unwrap().len(), 8 * 256);
    }
}
