//! Synthetic SMS acquisitions: phantoms, coil maps, CAIPI-shifted
//! single-band slices, their aliased sum and a perturbed time series.

pub mod container;

use crate::error::{shape_err, Error, Result};
use crate::num::{fft2c, Tensor3};
use crate::rng::Rng;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

pub use container::{read_dataset, write_dataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_pow2(&self) -> Result<()> {
        if !self.height.is_power_of_two() || !self.width.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "grid {}x{} is not a power of two",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Normalized coordinates in [-1, 1] of voxel `(y, x)`.
    fn coords(&self, y: usize, x: usize) -> (f64, f64) {
        let u = (x as f64 + 0.5 - self.width as f64 / 2.0) / (self.width as f64 / 2.0);
        let v = (y as f64 + 0.5 - self.height as f64 / 2.0) / (self.height as f64 / 2.0);
        (u, v)
    }
}

/// One coil's k-space for one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceSlice {
    pub coil: usize,
    pub slice: usize,
    pub grid: Grid,
    pub data: Vec<Complex64>,
}

/// All coils of one k-space (a single-band slice or an aliased frame).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCoil {
    pub grid: Grid,
    pub coils: Vec<Vec<Complex64>>,
}

impl MultiCoil {
    pub fn zeros(grid: Grid, coils: usize) -> Self {
        Self {
            grid,
            coils: vec![vec![Complex64::new(0.0, 0.0); grid.len()]; coils],
        }
    }

    pub fn coil_count(&self) -> usize {
        self.coils.len()
    }

    pub fn coil(&self, coil: usize, slice: usize) -> KSpaceSlice {
        KSpaceSlice {
            coil,
            slice,
            grid: self.grid,
            data: self.coils[coil].clone(),
        }
    }

    pub fn check_compatible(&self, other: &MultiCoil) -> Result<()> {
        if self.grid != other.grid || self.coil_count() != other.coil_count() {
            return Err(shape_err(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.coil_count(),
                self.grid.height,
                self.grid.width,
                other.coil_count(),
                other.grid.height,
                other.grid.width
            )));
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &MultiCoil, s: f64) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.coils.iter_mut().zip(&other.coils) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y * s);
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.coils.iter_mut().flatten().for_each(|z| *z *= s);
        m
    }

    /// Interleaved real/imaginary channel tensor (2 × coils channels).
    pub fn to_tensor(&self) -> Tensor3 {
        let refs: Vec<&[Complex64]> = self.coils.iter().map(|c| c.as_slice()).collect();
        Tensor3::from_complex_planes(&refs, self.grid.height, self.grid.width).expect("planes match grid")
    }

    pub fn from_tensor(t: &Tensor3) -> Result<Self> {
        Ok(Self {
            grid: Grid::new(t.height, t.width),
            coils: t.to_complex_planes()?,
        })
    }

    /// Per-coil inverse transform to image space.
    pub fn to_images(&self) -> Result<Vec<Vec<Complex64>>> {
        self.coils
            .iter()
            .map(|c| {
                let mut p = c.clone();
                fft2c(&mut p, self.grid.height, self.grid.width, true)?;
                Ok(p)
            })
            .collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.coils.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Complex receive sensitivity of one coil.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilProfile {
    pub coil: usize,
    pub grid: Grid,
    pub sensitivity: Vec<Complex64>,
}

/// Real-valued phantom image, row-major.
pub type Image = Vec<f64>;

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cu: f64,
    cv: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let du = u - self.cu;
        let dv = v - self.cv;
        let p = (c * du + s * dv) / self.a;
        let q = (-s * du + c * dv) / self.b;
        p * p + q * q <= 1.0
    }
}

/// Ellipse-composite phantoms, one per slice, with values in [0, 1] and
/// zero outside a randomized head outline.
pub fn make_phantom(grid: Grid, slice_count: usize, rng: &mut Rng) -> Result<Vec<Image>> {
    grid.check_pow2()?;
    if slice_count == 0 {
        return Err(Error::Parameter("slice_count must be at least 1".into()));
    }
    let mut images = Vec::with_capacity(slice_count);
    for _ in 0..slice_count {
        let head = Ellipse {
            cu: rng.uniform_range(-0.05, 0.05),
            cv: rng.uniform_range(-0.05, 0.05),
            a: rng.uniform_range(0.6, 0.78),
            b: rng.uniform_range(0.72, 0.9),
            angle: rng.uniform_range(-0.3, 0.3),
        };
        let features: Vec<(Ellipse, f64)> = (0..6)
            .map(|_| {
                let r = rng.uniform_range(0.0, 0.5);
                let t = rng.uniform_range(0.0, TAU);
                let e = Ellipse {
                    cu: head.cu + r * t.cos(),
                    cv: head.cv + r * t.sin(),
                    a: rng.uniform_range(0.08, 0.35),
                    b: rng.uniform_range(0.08, 0.35),
                    angle: rng.uniform_range(0.0, PI),
                };
                (e, rng.uniform_range(-0.35, 0.4))
            })
            .collect();
        let base = rng.uniform_range(0.45, 0.6);
        let mut img = vec![0.0; grid.len()];
        for y in 0..grid.height {
            for x in 0..grid.width {
                let (u, v) = grid.coords(y, x);
                if !head.contains(u, v) {
                    continue;
                }
                let mut val = base;
                for (e, d) in &features {
                    if e.contains(u, v) {
                        val += d;
                    }
                }
                // keep the whole head inside the support
                img[y * grid.width + x] = val.clamp(0.05, 1.0);
            }
        }
        images.push(img);
    }
    Ok(images)
}

/// Gaussian-lobe coil sensitivities centred just outside the field of view
/// with smooth linear phase.
pub fn make_coils(grid: Grid, coil_count: usize, rng: &mut Rng) -> Result<Vec<CoilProfile>> {
    grid.check_pow2()?;
    if coil_count < 2 {
        return Err(Error::Parameter(format!(
            "{coil_count} coil(s); unaliasing needs at least 2"
        )));
    }
    (0..coil_count)
        .map(|coil| {
            let angle = TAU * coil as f64 / coil_count as f64 + rng.uniform_range(-0.2, 0.2);
            let radius = rng.uniform_range(1.1, 1.3);
            let (cu, cv) = (radius * angle.cos(), radius * angle.sin());
            let width = rng.uniform_range(0.75, 0.95);
            let phase0 = rng.uniform_range(0.0, TAU);
            let gu = rng.uniform_range(-0.8, 0.8);
            let gv = rng.uniform_range(-0.8, 0.8);
            let sensitivity = (0..grid.len())
                .map(|i| {
                    let (u, v) = grid.coords(i / grid.width, i % grid.width);
                    let d2 = (u - cu).powi(2) + (v - cv).powi(2);
                    let mag = (-d2 / (2.0 * width * width)).exp();
                    Complex64::from_polar(mag, phase0 + gu * u + gv * v)
                })
                .collect();
            Ok(CoilProfile { coil, grid, sensitivity })
        })
        .collect()
}

/// k-space of every coil: centred DFT of sensitivity ⊙ image.
pub fn encode_slice(image: &[f64], coils: &[CoilProfile]) -> Result<MultiCoil> {
    let first = coils.first().ok_or_else(|| Error::Parameter("no coils".into()))?;
    let grid = first.grid;
    if image.len() != grid.len() {
        return Err(shape_err(format!("image of {} for grid {}x{}", image.len(), grid.height, grid.width)));
    }
    let mut out = MultiCoil::zeros(grid, coils.len());
    for (dst, coil) in out.coils.iter_mut().zip(coils) {
        if coil.grid != grid {
            return Err(shape_err("coil grids differ"));
        }
        for ((d, s), &m) in dst.iter_mut().zip(&coil.sensitivity).zip(image) {
            *d = s * m;
        }
        fft2c(dst, grid.height, grid.width, false)?;
    }
    Ok(out)
}

/// Multiplies centred k-space by `exp(-2πi·ky·Δ/N)` along the phase-encode
/// (row) axis, which circularly shifts the image down by `Δ` voxels.
pub fn phase_ramp(plane: &mut [Complex64], grid: Grid, delta: f64) {
    let n = grid.height as f64;
    for ky in 0..grid.height {
        let k = ky as f64 - (grid.height / 2) as f64;
        let r = Complex64::from_polar(1.0, -TAU * k * delta / n);
        plane[ky * grid.width..(ky + 1) * grid.width].iter_mut().for_each(|z| *z *= r);
    }
}

/// Voxel shift of slice `slice_index` for a given FOV fraction.
pub fn caipi_delta(slice_index: usize, fov_shift: f64, height: usize) -> f64 {
    slice_index as f64 * fov_shift * height as f64
}

pub fn apply_caipi_shift(ks: &KSpaceSlice, slice_index: usize, fov_shift: f64) -> KSpaceSlice {
    let mut out = ks.clone();
    phase_ramp(&mut out.data, ks.grid, caipi_delta(slice_index, fov_shift, ks.grid.height));
    out
}

/// Shifts every coil of a slice by `delta` voxels (negative undoes a shift).
pub fn shift_multicoil(mc: &MultiCoil, delta: f64) -> MultiCoil {
    let mut out = mc.clone();
    for c in out.coils.iter_mut() {
        phase_ramp(c, mc.grid, delta);
    }
    out
}

/// The slices excited together, stored CAIPI-shifted.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicePacket {
    pub fov_shift: f64,
    /// Applied image-domain shift of each slice, in voxels.
    pub shifts: Vec<f64>,
    pub slices: Vec<MultiCoil>,
}

impl SlicePacket {
    /// Applies the CAIPI shift `s × fov_shift × N` to unshifted slice `s`.
    pub fn from_unshifted(slices: Vec<MultiCoil>, fov_shift: f64) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::Parameter("empty packet".into()))?;
        for s in &slices {
            s.check_compatible(first)?;
        }
        let height = first.grid.height;
        let shifts: Vec<f64> = (0..slices.len()).map(|s| caipi_delta(s, fov_shift, height)).collect();
        let slices = slices
            .iter()
            .zip(&shifts)
            .map(|(s, &d)| shift_multicoil(s, d))
            .collect();
        Ok(Self { fov_shift, shifts, slices })
    }

    pub fn sms_factor(&self) -> usize {
        self.slices.len()
    }

    pub fn grid(&self) -> Grid {
        self.slices[0].grid
    }

    pub fn coil_count(&self) -> usize {
        self.slices[0].coil_count()
    }
}

/// Coil-wise sum over the packet's (already shifted) slices.
pub fn sms_alias(packet: &SlicePacket) -> Result<MultiCoil> {
    alias_slices(&packet.slices)
}

pub(crate) fn alias_slices(slices: &[MultiCoil]) -> Result<MultiCoil> {
    let first = slices.first().ok_or_else(|| Error::Parameter("no slices to alias".into()))?;
    let mut sum = MultiCoil::zeros(first.grid, first.coil_count());
    for s in slices {
        sum.add_scaled(s, 1.0)?;
    }
    Ok(sum)
}

/// Calibration block plus aliased acquisition frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTimeseries {
    pub fov_shift: f64,
    pub shifts: Vec<f64>,
    /// Single-band slices in the acquisition (shifted) frame.
    pub calibration: Vec<MultiCoil>,
    /// Aliased multi-coil k-space; frame 0 is the training input.
    pub frames: Vec<MultiCoil>,
    /// `factors[frame][slice]`: intensity modulation applied to each slice.
    pub factors: Vec<Vec<f64>>,
    pub perturbation: f64,
    pub noise_sigma: f64,
}

impl SimTimeseries {
    pub fn sms_factor(&self) -> usize {
        self.calibration.len()
    }

    pub fn coil_count(&self) -> usize {
        self.calibration[0].coil_count()
    }

    pub fn grid(&self) -> Grid {
        self.calibration[0].grid
    }

    /// Single-band ground truth of `slice` in frame `frame` (shifted frame).
    pub fn truth(&self, frame: usize, slice: usize) -> MultiCoil {
        self.calibration[slice].scaled(self.factors[frame][slice])
    }
}

fn add_noise(mc: &mut MultiCoil, sigma: f64, rng: &mut Rng) {
    if sigma == 0.0 {
        return;
    }
    for z in mc.coils.iter_mut().flatten() {
        let re = rng.normal();
        let im = rng.normal();
        *z += Complex64::new(sigma * re, sigma * im);
    }
}

/// Builds `frames` aliased frames. Frame 0 is the plain aliased packet;
/// later frames scale each slice by a factor drawn from `[1 - a, 1 + a]`
/// and get complex white noise with standard deviation `sigma` on the real
/// and on the imaginary part. The calibration block keeps the noiseless
/// slices unless `calibration_noise` is set.
pub fn make_timeseries(
    packet: &SlicePacket,
    frames: usize,
    perturbation: f64,
    noise_sigma: f64,
    calibration_noise: bool,
    rng: &mut Rng,
) -> Result<SimTimeseries> {
    if frames < 2 {
        return Err(Error::Parameter(format!("{frames} frame(s); need a training frame and held-out frames")));
    }
    if !(0.0..1.0).contains(&perturbation) || noise_sigma < 0.0 {
        return Err(Error::Parameter(format!(
            "perturbation {perturbation} must be in [0, 1) and noise {noise_sigma} non-negative"
        )));
    }
    let n = packet.sms_factor();
    let mut factors = Vec::with_capacity(frames);
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let fac: Vec<f64> = if f == 0 {
            vec![1.0; n]
        } else {
            (0..n).map(|_| rng.uniform_range(1.0 - perturbation, 1.0 + perturbation)).collect()
        };
        let mut frame = MultiCoil::zeros(packet.grid(), packet.coil_count());
        for (s, &a) in packet.slices.iter().zip(&fac) {
            frame.add_scaled(s, a)?;
        }
        if f > 0 {
            add_noise(&mut frame, noise_sigma, rng);
        }
        factors.push(fac);
        out.push(frame);
    }
    let mut calibration = packet.slices.clone();
    if calibration_noise {
        for c in calibration.iter_mut() {
            add_noise(c, noise_sigma, rng);
        }
    }
    Ok(SimTimeseries {
        fov_shift: packet.fov_shift,
        shifts: packet.shifts.clone(),
        calibration,
        frames: out,
        factors,
        perturbation,
        noise_sigma,
    })
}

/// Simulator geometry and noise settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub matrix: usize,
    pub coils: usize,
    pub sms_factor: usize,
    /// Defaults to `1 / sms_factor` when absent.
    pub fov_shift: Option<f64>,
    pub frames: usize,
    pub perturbation: f64,
    pub noise_sigma: f64,
    pub calibration_noise: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            matrix: 32,
            coils: 8,
            sms_factor: 2,
            fov_shift: None,
            frames: 21,
            perturbation: 0.1,
            noise_sigma: 0.02,
            calibration_noise: false,
        }
    }
}

impl SimConfig {
    pub fn fov_shift(&self) -> f64 {
        self.fov_shift.unwrap_or(1.0 / self.sms_factor as f64)
    }

    pub fn grid(&self) -> Grid {
        Grid::square(self.matrix)
    }
}

/// A simulated subject: the time series plus the images behind it.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub seed: u64,
    pub timeseries: SimTimeseries,
    /// Phantom images per slice (unshifted); empty when loaded from disk.
    pub phantoms: Vec<Image>,
}

impl Dataset {
    /// Voxels inside the phantom of `slice`, if the phantom is known.
    pub fn support(&self, slice: usize) -> Option<Vec<bool>> {
        self.phantoms.get(slice).map(|img| img.iter().map(|&v| v > 0.0).collect())
    }
}

/// Phantom → coils → shifted packet → time series, all from one seed.
pub fn simulate(config: &SimConfig, seed: u64) -> Result<Dataset> {
    let grid = config.grid();
    if config.sms_factor == 0 {
        return Err(Error::Parameter("sms_factor must be at least 1".into()));
    }
    let mut rng = Rng::new(seed);
    let phantoms = make_phantom(grid, config.sms_factor, &mut rng)?;
    let coils = make_coils(grid, config.coils, &mut rng)?;
    let slices = phantoms
        .iter()
        .map(|img| encode_slice(img, &coils))
        .collect::<Result<Vec<_>>>()?;
    let packet = SlicePacket::from_unshifted(slices, config.fov_shift())?;
    let timeseries = make_timeseries(
        &packet,
        config.frames,
        config.perturbation,
        config.noise_sigma,
        config.calibration_noise,
        &mut rng,
    )?;
    Ok(Dataset {
        seed,
        timeseries,
        phantoms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn phantoms_are_distinct_and_bounded() {
        let imgs = make_phantom(Grid::square(32), 2, &mut Rng::new(42)).unwrap();
        assert_eq!(imgs.len(), 2);
        let r = correlation(&imgs[0], &imgs[1]);
        assert!(r < 0.95, "correlation {r}");
        assert!(imgs.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn phantom_preconditions_and_determinism() {
        assert!(make_phantom(Grid::square(32), 0, &mut Rng::new(1)).is_err());
        assert!(make_phantom(Grid::new(24, 32), 1, &mut Rng::new(1)).is_err());
        let a = make_phantom(Grid::square(16), 3, &mut Rng::new(5)).unwrap();
        let b = make_phantom(Grid::square(16), 3, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coil_maps_cover_grid_and_differ() {
        let grid = Grid::square(32);
        let coils = make_coils(grid, 8, &mut Rng::new(3)).unwrap();
        for i in 0..grid.len() {
            let rss: f64 = coils.iter().map(|c| c.sensitivity[i].norm_sqr()).sum::<f64>().sqrt();
            assert!(rss > 0.0);
        }
        assert!(coils.iter().flat_map(|c| &c.sensitivity).all(|z| z.norm() <= 1.0));
        for a in &coils {
            for b in &coils {
                if a.coil >= b.coil {
                    continue;
                }
                let ip: Complex64 = a.sensitivity.iter().zip(&b.sensitivity).map(|(x, y)| x.conj() * y).sum();
                let na: f64 = a.sensitivity.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                let nb: f64 = b.sensitivity.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                assert!(ip.norm() / (na * nb) < 0.999);
            }
        }
        let again = make_coils(grid, 8, &mut Rng::new(3)).unwrap();
        assert_eq!(coils, again);
        assert!(make_coils(grid, 1, &mut Rng::new(3)).is_err());
    }

    #[test]
    fn encode_zero_and_identity() {
        let grid = Grid::square(8);
        let coils = make_coils(grid, 2, &mut Rng::new(1)).unwrap();
        let zero = encode_slice(&vec![0.0; 64], &coils).unwrap();
        assert!(zero.coils.iter().flatten().all(|z| z.norm() == 0.0));

        let img: Vec<f64> = (0..64).map(|i| (i % 7) as f64 / 7.0).collect();
        let unit = vec![CoilProfile {
            coil: 0,
            grid,
            sensitivity: vec![Complex64::new(1.0, 0.0); 64],
        }];
        let ks = encode_slice(&img, &unit).unwrap();
        let mut expect: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2c(&mut expect, 8, 8, false).unwrap();
        assert_eq!(ks.coils[0], expect);
        assert!(encode_slice(&img[..10], &unit).is_err());
    }

    #[test]
    fn encode_roundtrip_recovers_weighted_image() {
        let grid = Grid::square(16);
        let mut rng = Rng::new(2);
        let img = make_phantom(grid, 1, &mut rng).unwrap().remove(0);
        let coils = make_coils(grid, 4, &mut rng).unwrap();
        let ks = encode_slice(&img, &coils).unwrap();
        let back = ks.to_images().unwrap();
        for (b, c) in back.iter().zip(&coils) {
            for i in 0..grid.len() {
                assert!((b[i] - c.sensitivity[i] * img[i]).norm() < 1e-10);
            }
        }
    }

    fn image_plane(grid: Grid, rng: &mut Rng) -> Vec<Complex64> {
        (0..grid.len()).map(|_| Complex64::new(rng.normal(), rng.normal())).collect()
    }

    #[test]
    fn caipi_half_fov_is_roll() {
        let grid = Grid::square(32);
        let mut rng = Rng::new(4);
        let img = image_plane(grid, &mut rng);
        let mut ks = img.clone();
        fft2c(&mut ks, 32, 32, false).unwrap();
        let slice = KSpaceSlice { coil: 0, slice: 1, grid, data: ks };
        assert_eq!(apply_caipi_shift(&slice, 0, 0.5), slice);
        let mut shifted = apply_caipi_shift(&slice, 1, 0.5).data;
        fft2c(&mut shifted, 32, 32, true).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let src = ((y + 32 - 16) % 32) * 32 + x;
                assert!((shifted[y * 32 + x] - img[src]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn fractional_ramp_is_invertible() {
        let grid = Grid::square(32);
        let mut rng = Rng::new(5);
        let data = image_plane(grid, &mut rng);
        let slice = KSpaceSlice { coil: 0, slice: 2, grid, data: data.clone() };
        let shifted = apply_caipi_shift(&slice, 2, 1.0 / 3.0);
        let mut back = shifted.data.clone();
        phase_ramp(&mut back, grid, -64.0 / 3.0);
        for (a, b) in back.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn alias_identities() {
        let grid = Grid::square(8);
        let mut rng = Rng::new(6);
        let mk = |rng: &mut Rng| MultiCoil {
            grid,
            coils: (0..3).map(|_| image_plane(grid, rng)).collect(),
        };
        let a = mk(&mut rng);
        let single = SlicePacket { fov_shift: 0.5, shifts: vec![0.0], slices: vec![a.clone()] };
        assert_eq!(sms_alias(&single).unwrap(), a);
        let zero = MultiCoil::zeros(grid, 3);
        let pair = SlicePacket { fov_shift: 0.5, shifts: vec![0.0, 4.0], slices: vec![zero, a.clone()] };
        assert_eq!(sms_alias(&pair).unwrap(), a);

        let b = mk(&mut rng);
        let c = mk(&mut rng);
        let d = mk(&mut rng);
        let p1 = SlicePacket { fov_shift: 0.5, shifts: vec![0.0, 4.0], slices: vec![a.clone(), b.clone()] };
        let p2 = SlicePacket { fov_shift: 0.5, shifts: vec![0.0, 4.0], slices: vec![c.clone(), d.clone()] };
        let mut ac = a.clone();
        ac.add_scaled(&c, 1.0).unwrap();
        let mut bd = b.clone();
        bd.add_scaled(&d, 1.0).unwrap();
        let p12 = SlicePacket { fov_shift: 0.5, shifts: vec![0.0, 4.0], slices: vec![ac, bd] };
        let mut lhs = sms_alias(&p1).unwrap();
        lhs.add_scaled(&sms_alias(&p2).unwrap(), 1.0).unwrap();
        let rhs = sms_alias(&p12).unwrap();
        // same additions in a different order: equal up to rounding
        for (x, y) in lhs.coils.iter().flatten().zip(rhs.coils.iter().flatten()) {
            assert!((x - y).norm() <= 1e-15 * (1.0 + x.norm()));
        }
        let bad = SlicePacket {
            fov_shift: 0.5,
            shifts: vec![0.0, 4.0],
            slices: vec![a, MultiCoil::zeros(Grid::square(4), 3)],
        };
        assert!(sms_alias(&bad).is_err());
    }

    #[test]
    fn aliasing_commutes_with_dft() {
        let cfg = SimConfig { matrix: 16, coils: 4, noise_sigma: 0.0, perturbation: 0.0, frames: 2, ..Default::default() };
        let grid = cfg.grid();
        let mut rng = Rng::new(7);
        let imgs = make_phantom(grid, 2, &mut rng).unwrap();
        let coils = make_coils(grid, 4, &mut rng).unwrap();
        let slices: Vec<MultiCoil> = imgs.iter().map(|i| encode_slice(i, &coils).unwrap()).collect();
        let packet = SlicePacket::from_unshifted(slices, 0.5).unwrap();
        let aliased = sms_alias(&packet).unwrap().to_images().unwrap();
        for (c, coil) in coils.iter().enumerate() {
            for y in 0..16 {
                for x in 0..16 {
                    let mut expect = Complex64::new(0.0, 0.0);
                    for (s, img) in imgs.iter().enumerate() {
                        let sy = (y + 16 - 8 * s) % 16;
                        expect += coil.sensitivity[sy * 16 + x] * img[sy * 16 + x];
                    }
                    assert!((aliased[c][y * 16 + x] - expect).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn timeseries_without_perturbation_is_constant() {
        let cfg = SimConfig { matrix: 16, coils: 4, noise_sigma: 0.0, perturbation: 0.0, frames: 4, ..Default::default() };
        let ds = simulate(&cfg, 1).unwrap();
        let ts = &ds.timeseries;
        for f in &ts.frames {
            assert_eq!(f, &ts.frames[0]);
        }
        assert!(simulate(&SimConfig { frames: 1, ..cfg }, 1).is_err());
    }

    #[test]
    fn timeseries_noise_statistics() {
        let cfg = SimConfig { matrix: 64, coils: 4, noise_sigma: 0.05, perturbation: 0.0, frames: 3, ..Default::default() };
        let ds = simulate(&cfg, 9).unwrap();
        let ts = &ds.timeseries;
        let diffs: Vec<f64> = ts.frames[1]
            .coils
            .iter()
            .flatten()
            .zip(ts.frames[2].coils.iter().flatten())
            .flat_map(|(a, b)| {
                let d = a - b;
                [d.re, d.im]
            })
            .collect();
        assert!(diffs.len() >= 10_000);
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expect = 0.05 * 2f64.sqrt();
        assert!((std - expect).abs() / expect < 0.1, "{std}");
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = SimConfig { matrix: 16, coils: 4, frames: 3, ..Default::default() };
        let a = simulate(&cfg, 11).unwrap();
        let b = simulate(&cfg, 11).unwrap();
        assert_eq!(a.timeseries, b.timeseries);
        let c = simulate(&cfg, 12).unwrap();
        assert_ne!(a.timeseries, c.timeseries);
    }

    #[test]
    fn truth_matches_frame_without_noise() {
        let cfg = SimConfig { matrix: 16, coils: 3, frames: 4, noise_sigma: 0.0, perturbation: 0.2, ..Default::default() };
        let ts = simulate(&cfg, 2).unwrap().timeseries;
        for f in 0..4 {
            let mut sum = MultiCoil::zeros(ts.grid(), 3);
            for s in 0..ts.sms_factor() {
                sum.add_scaled(&ts.truth(f, s), 1.0).unwrap();
            }
            for (a, b) in sum.coils.iter().flatten().zip(ts.frames[f].coils.iter().flatten()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }
}
