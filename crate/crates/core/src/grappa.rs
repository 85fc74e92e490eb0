//! Closed-form linear slice-GRAPPA and split-slice-GRAPPA kernels.
//!
//! A kernel maps the multi-coil k-space around a point to one slice/coil
//! sample at that point:
//!
//! ```text
//! est(y, x) = Σ_c Σ_{ky,kx} w[c][ky][kx] · in_c(y + ky - k/2, x + kx - k/2)
//! ```
//!
//! which is the same cross-correlation the network convolutions use.
//! Fitting uses only interior points whose whole neighbourhood lies inside
//! the grid; application zero-pads.

use crate::codec::{put_f64, put_plane, put_u32, Cursor};
use crate::error::{shape_err, Error, Result};
use crate::net::Unaliaser;
use crate::num::ConvWeights;
use crate::par::Exec;
use crate::sim::{KSpaceSlice, MultiCoil};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Ridge weight relative to the mean diagonal of `AᴴA` when none is given.
pub const DEFAULT_RELATIVE_LAMBDA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GrappaKernel {
    pub target_slice: usize,
    pub target_coil: usize,
    pub kernel: usize,
    pub coils: usize,
    /// `[coil][ky][kx]`.
    pub weights: Vec<Complex64>,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrappaMethod {
    Slice,
    SplitSlice,
}

impl GrappaMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GrappaMethod::Slice => "slice-grappa",
            GrappaMethod::SplitSlice => "split-slice-grappa",
        }
    }
}

/// Accumulated normal equations `AᴴA w = Aᴴb`.
struct NormalSystem {
    kernel: usize,
    coils: usize,
    gram: Vec<Complex64>,
    rhs: Vec<Complex64>,
}

impl NormalSystem {
    fn new(kernel: usize, coils: usize) -> Result<Self> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::Parameter(format!("kernel size {kernel} must be odd")));
        }
        if coils == 0 {
            return Err(Error::Parameter("no coils".into()));
        }
        let m = coils * kernel * kernel;
        Ok(Self {
            kernel,
            coils,
            gram: vec![Complex64::new(0.0, 0.0); m * m],
            rhs: vec![Complex64::new(0.0, 0.0); m],
        })
    }

    fn unknowns(&self) -> usize {
        self.rhs.len()
    }

    /// Adds one block of rows: every interior point of `input`, with target
    /// `target` or zero.
    fn accumulate(&mut self, input: &MultiCoil, target: Option<&[Complex64]>) -> Result<()> {
        if input.coil_count() != self.coils {
            return Err(Error::Dimension(format!("{} coils, kernel expects {}", input.coil_count(), self.coils)));
        }
        let (h, w, k) = (input.grid.height, input.grid.width, self.kernel);
        if let Some(t) = target {
            if t.len() != input.grid.len() {
                return Err(shape_err(format!("target has {} points, grid {}", t.len(), input.grid.len())));
            }
        }
        if h < k || w < k {
            return Err(shape_err(format!("{h}x{w} grid has no interior points for a {k}x{k} kernel")));
        }
        let m = self.unknowns();
        let mut row = vec![Complex64::new(0.0, 0.0); m];
        for y in 0..=h - k {
            for x in 0..=w - k {
                for (c, plane) in input.coils.iter().enumerate() {
                    for ky in 0..k {
                        let src = &plane[(y + ky) * w + x..(y + ky) * w + x + k];
                        row[(c * k + ky) * k..(c * k + ky + 1) * k].copy_from_slice(src);
                    }
                }
                for i in 0..m {
                    let ai = row[i].conj();
                    if ai == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let g = &mut self.gram[i * m..(i + 1) * m];
                    for (gj, aj) in g.iter_mut().zip(&row) {
                        *gj += ai * aj;
                    }
                }
                if let Some(t) = target {
                    let b = t[(y + k / 2) * w + x + k / 2];
                    for (r, a) in self.rhs.iter_mut().zip(&row) {
                        *r += a.conj() * b;
                    }
                }
            }
        }
        Ok(())
    }

    fn default_lambda(&self) -> f64 {
        let m = self.unknowns();
        let trace: f64 = (0..m).map(|i| self.gram[i * m + i].re).sum();
        DEFAULT_RELATIVE_LAMBDA * trace / m as f64
    }

    fn solve(&self, lambda: f64) -> Result<Vec<Complex64>> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda {lambda} must be finite and >= 0")));
        }
        let m = self.unknowns();
        let mut a = self.gram.clone();
        for i in 0..m {
            a[i * m + i] += lambda;
        }
        cholesky_solve(&mut a, &self.rhs, m)
    }
}

/// Solves the Hermitian positive-definite system `a x = b` in place.
/// `a` is overwritten with its lower Cholesky factor.
fn cholesky_solve(a: &mut [Complex64], b: &[Complex64], m: usize) -> Result<Vec<Complex64>> {
    let max_diag = (0..m).map(|i| a[i * m + i].re).fold(0.0_f64, f64::max);
    let floor = max_diag * 1e-13;
    for j in 0..m {
        let mut d = a[j * m + j].re;
        for p in 0..j {
            d -= a[j * m + p].norm_sqr();
        }
        if d.is_nan() || d <= floor {
            return Err(Error::Numerical(format!(
                "normal matrix is singular or ill-conditioned at pivot {j}; fit with lambda > 0"
            )));
        }
        let d = d.sqrt();
        a[j * m + j] = Complex64::new(d, 0.0);
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for p in 0..j {
                s -= a[i * m + p] * a[j * m + p].conj();
            }
            a[i * m + j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..m {
        for p in 0..i {
            let t = a[i * m + p] * y[p];
            y[i] -= t;
        }
        y[i] /= a[i * m + i].re;
    }
    for i in (0..m).rev() {
        for p in i + 1..m {
            let t = a[p * m + i].conj() * y[p];
            y[i] -= t;
        }
        y[i] /= a[i * m + i].re;
    }
    Ok(y)
}

fn finish(sys: &NormalSystem, lambda: Option<f64>, target_slice: usize, target_coil: usize) -> Result<GrappaKernel> {
    let lambda = lambda.unwrap_or_else(|| sys.default_lambda());
    let weights = sys.solve(lambda)?;
    if weights.iter().any(|w| !w.re.is_finite() || !w.im.is_finite()) {
        return Err(Error::Numerical("non-finite kernel weights".into()));
    }
    Ok(GrappaKernel {
        target_slice,
        target_coil,
        kernel: sys.kernel,
        coils: sys.coils,
        weights,
        lambda,
    })
}

/// Fits a kernel mapping `input` to `target` by ridge regression.
/// `lambda = None` uses [`DEFAULT_RELATIVE_LAMBDA`] times the mean diagonal
/// of the normal matrix.
pub fn fit_slice_grappa(input: &MultiCoil, target: &KSpaceSlice, kernel: usize, lambda: Option<f64>) -> Result<GrappaKernel> {
    if target.grid != input.grid {
        return Err(shape_err(format!("input grid {:?} vs target {:?}", input.grid, target.grid)));
    }
    let mut sys = NormalSystem::new(kernel, input.coil_count())?;
    sys.accumulate(input, Some(&target.data))?;
    finish(&sys, lambda, target.slice, target.coil)
}

/// Stacks one block per single-band slice: slice `s` alone as input, the
/// target coil as target for the target slice and zero for every other.
pub fn fit_split_slice_grappa(
    calib: &[MultiCoil],
    target_slice: usize,
    target_coil: usize,
    kernel: usize,
    lambda: Option<f64>,
) -> Result<GrappaKernel> {
    let first = calib.first().ok_or_else(|| Error::Parameter("no calibration slices".into()))?;
    if target_slice >= calib.len() || target_coil >= first.coil_count() {
        return Err(Error::Index(format!(
            "target (slice {target_slice}, coil {target_coil}) outside {}x{}",
            calib.len(),
            first.coil_count()
        )));
    }
    let mut sys = NormalSystem::new(kernel, first.coil_count())?;
    for (s, slice) in calib.iter().enumerate() {
        slice.check_compatible(first)?;
        let target = (s == target_slice).then(|| calib[target_slice].coils[target_coil].as_slice());
        sys.accumulate(slice, target)?;
    }
    finish(&sys, lambda, target_slice, target_coil)
}

/// Complex convolution of `frame` with the kernel, zero padded.
pub fn apply_kernel(kernel: &GrappaKernel, frame: &MultiCoil) -> Result<KSpaceSlice> {
    if frame.coil_count() != kernel.coils {
        return Err(shape_err(format!("frame has {} coils, kernel {}", frame.coil_count(), kernel.coils)));
    }
    let (h, w, k) = (frame.grid.height, frame.grid.width, kernel.kernel);
    let r = (k / 2) as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for (c, plane) in frame.coils.iter().enumerate() {
        for ky in 0..k {
            for kx in 0..k {
                let wt = kernel.weights[(c * k + ky) * k + kx];
                let (dy, dx) = (ky as isize - r, kx as isize - r);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            out[y * w + x] += wt * plane[sy as usize * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(KSpaceSlice {
        coil: kernel.target_coil,
        slice: kernel.target_slice,
        grid: frame.grid,
        data: out,
    })
}

/// The same kernel as a real convolution on interleaved re/im channels.
pub fn to_conv_weights(kernel: &GrappaKernel) -> Result<ConvWeights> {
    let k = kernel.kernel;
    let mut w = ConvWeights::zeros(2, 2 * kernel.coils, k)?;
    for c in 0..kernel.coils {
        for ky in 0..k {
            for kx in 0..k {
                let z = kernel.weights[(c * k + ky) * k + kx];
                let idx = |o, i| w.index(o, i, ky, kx);
                let (a, b, cc, d) = (idx(0, 2 * c), idx(0, 2 * c + 1), idx(1, 2 * c), idx(1, 2 * c + 1));
                w.data[a] = z.re;
                w.data[b] = -z.im;
                w.data[cc] = z.im;
                w.data[d] = z.re;
            }
        }
    }
    Ok(w)
}

/// Kernels for every `(slice, coil)` of a packet.
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaBank {
    pub method: GrappaMethod,
    pub shifts: Vec<f64>,
    pub coils: usize,
    pub kernels: Vec<GrappaKernel>,
}

impl GrappaBank {
    /// Fits all kernels. Slice-GRAPPA maps `aliased` (the aliased
    /// calibration frame) to each calibration slice; split-slice uses the
    /// calibration slices alone.
    pub fn fit(
        method: GrappaMethod,
        calib: &[MultiCoil],
        aliased: &MultiCoil,
        shifts: &[f64],
        kernel: usize,
        lambda: Option<f64>,
        exec: Exec,
    ) -> Result<Self> {
        let first = calib.first().ok_or_else(|| Error::Parameter("no calibration slices".into()))?;
        let coils = first.coil_count();
        if shifts.len() != calib.len() {
            return Err(Error::Dimension(format!("{} shifts for {} slices", shifts.len(), calib.len())));
        }
        let kernels = exec
            .map_range(calib.len() * coils, |i| {
                let (s, c) = (i / coils, i % coils);
                match method {
                    GrappaMethod::Slice => fit_slice_grappa(aliased, &calib[s].coil(c, s), kernel, lambda),
                    GrappaMethod::SplitSlice => fit_split_slice_grappa(calib, s, c, kernel, lambda),
                }
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method,
            shifts: shifts.to_vec(),
            coils,
            kernels,
        })
    }
}

impl Unaliaser for GrappaBank {
    fn sms_factor(&self) -> usize {
        self.shifts.len()
    }

    fn coil_count(&self) -> usize {
        self.coils
    }

    fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    fn estimate(&self, slice: usize, coil: usize, aliased: &MultiCoil) -> Result<Vec<Complex64>> {
        let k = self
            .kernels
            .get(slice * self.coils + coil)
            .ok_or_else(|| Error::Index(format!("no kernel for slice {slice}, coil {coil}")))?;
        Ok(apply_kernel(k, aliased)?.data)
    }
}

pub const MAGIC: &[u8; 8] = b"RAKIGRP\0";
pub const VERSION: u32 = 1;

/// Kernel file layout, little-endian: magic `"RAKIGRP\0"`, u32 version,
/// u32 target slice, target coil, kernel size, coil count, f64 lambda, then
/// `coils·k²` complex weights as (re, im) f64 pairs in `[coil][ky][kx]`
/// order.
pub fn encode_kernel(k: &GrappaKernel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [k.target_slice, k.target_coil, k.kernel, k.coils] {
        put_u32(&mut out, v)?;
    }
    put_f64(&mut out, k.lambda);
    put_plane(&mut out, &k.weights);
    Ok(out)
}

pub fn decode_kernel(buf: &[u8]) -> Result<GrappaKernel> {
    let mut cur = Cursor::new(buf);
    if cur.take(8)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (target_slice, target_coil, kernel, coils) = (cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?);
    if kernel.is_multiple_of(2) || coils == 0 {
        return Err(Error::Format(format!("bad kernel geometry {kernel} x {coils} coils")));
    }
    let lambda = cur.f64()?;
    let weights = cur.plane(coils * kernel * kernel)?;
    if cur.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", cur.remaining())));
    }
    Ok(GrappaKernel {
        target_slice,
        target_coil,
        kernel,
        coils,
        weights,
        lambda,
    })
}

pub fn write_kernel(path: impl AsRef<Path>, k: &GrappaKernel) -> Result<()> {
    std::fs::write(path, encode_kernel(k)?)?;
    Ok(())
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<GrappaKernel> {
    decode_kernel(&std::fs::read(path)?)
}
