//! Same-size 2D cross-correlation with zero padding `kernel / 2`, no bias,
//! one group.
//!
//! Every kernel tap is one strided GEMM over a zero-padded copy of the
//! input. Output rows are computed on the padded row pitch so the shifted
//! input window is a plain strided matrix; the `2 * pad` wrap-around
//! columns per row are discarded afterwards.

use crate::error::{shape_err, Error, Result};
use crate::num::Tensor3;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Convolution weights laid out `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub data: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        check_kernel(kernel)?;
        Ok(Self {
            out_channels,
            in_channels,
            kernel,
            data: vec![0.0; out_channels * in_channels * kernel * kernel],
        })
    }

    /// Fan-in scaled uniform init on `±sqrt(1 / (in * k²))`.
    pub fn init_uniform(out_channels: usize, in_channels: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        let mut w = Self::zeros(out_channels, in_channels, kernel)?;
        let bound = (1.0 / (in_channels * kernel * kernel) as f64).sqrt();
        w.data.iter_mut().for_each(|v| *v = rng.uniform_range(-bound, bound));
        Ok(w)
    }

    #[inline]
    pub fn index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[self.index(o, i, ky, kx)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Weights of the adjoint correlation: in/out swapped, taps flipped.
    fn adjoint(&self) -> Self {
        let k = self.kernel;
        let mut t = ConvWeights {
            out_channels: self.in_channels,
            in_channels: self.out_channels,
            kernel: k,
            data: vec![0.0; self.data.len()],
        };
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        let dst = t.index(i, o, k - 1 - ky, k - 1 - kx);
                        t.data[dst] = self.at(o, i, ky, kx);
                    }
                }
            }
        }
        t
    }
}

pub(crate) fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::Parameter(format!("kernel size {kernel} must be odd")));
    }
    Ok(())
}

/// Input copied into a `(h + 2p) x (w + 2p)` zero frame with `2p` slack
/// values so the last shifted window stays in bounds.
struct Padded {
    data: Vec<f64>,
    pitch: usize,
    plane: usize,
}

fn pad(x: &Tensor3, p: usize) -> Padded {
    let pitch = x.width + 2 * p;
    let plane = (x.height + 2 * p) * pitch;
    let mut data = vec![0.0; x.channels * plane + 2 * p];
    for c in 0..x.channels {
        let src = x.channel(c);
        for y in 0..x.height {
            let dst = c * plane + (y + p) * pitch + p;
            data[dst..dst + x.width].copy_from_slice(&src[y * x.width..(y + 1) * x.width]);
        }
    }
    Padded { data, pitch, plane }
}

/// `C (m x n) = A (m x k) * B (k x n) + beta * C` for arbitrary strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Bounds for the strided views, so the unsafe call only reads and
    // writes inside the borrowed slices.
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len());
        assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// GEMM register-block height; below it a dimension wastes most of the
/// micro-kernel.
const MIN_ROWS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Strategy {
    /// One GEMM per kernel tap, `out × in` weights against a shifted view.
    PerTap,
    /// Unfolded input, one GEMM with inner dimension `in × k²`.
    Im2col,
    /// One GEMM producing every tap's partial output, then a shifted sum.
    TapsAsOutputs,
}

fn forward_strategy(w: &ConvWeights) -> Strategy {
    if w.kernel == 1 {
        Strategy::PerTap
    } else if w.out_channels < MIN_ROWS && w.in_channels >= MIN_ROWS {
        Strategy::TapsAsOutputs
    } else if w.in_channels < MIN_ROWS {
        Strategy::Im2col
    } else {
        Strategy::PerTap
    }
}

/// Forward pass. Output has `w.out_channels` channels and the input's
/// spatial size.
pub fn conv2d_forward(x: &Tensor3, w: &ConvWeights) -> Result<Tensor3> {
    conv2d_forward_with(x, w, forward_strategy(w))
}

pub(crate) fn conv2d_forward_with(x: &Tensor3, w: &ConvWeights, strategy: Strategy) -> Result<Tensor3> {
    check_kernel(w.kernel)?;
    if x.channels != w.in_channels {
        return Err(shape_err(format!(
            "input has {} channels, weights expect {}",
            x.channels, w.in_channels
        )));
    }
    let k = w.kernel;
    let p = k / 2;
    let xp = pad(x, p);
    let (h, wd) = (x.height, x.width);
    let n = h * xp.pitch;
    let kk = k * k;
    let mut out = Tensor3::zeros(w.out_channels, h, wd);
    if strategy == Strategy::TapsAsOutputs {
        // rows (o, tap), columns input channels
        let mut wt = vec![0.0; w.out_channels * kk * w.in_channels];
        for o in 0..w.out_channels {
            for i in 0..w.in_channels {
                for t in 0..kk {
                    wt[(o * kk + t) * w.in_channels + i] = w.data[(o * w.in_channels + i) * kk + t];
                }
            }
        }
        let mut z = vec![0.0; w.out_channels * kk * xp.plane];
        gemm(
            w.out_channels * kk,
            w.in_channels,
            xp.plane,
            &wt,
            w.in_channels,
            1,
            &xp.data,
            xp.plane,
            1,
            0.0,
            &mut z,
            xp.plane,
            1,
        );
        for o in 0..w.out_channels {
            let dst = out.channel_mut(o);
            for t in 0..kk {
                let src = &z[(o * kk + t) * xp.plane + (t / k) * xp.pitch + t % k..];
                for y in 0..h {
                    let row = &src[y * xp.pitch..y * xp.pitch + wd];
                    dst[y * wd..(y + 1) * wd].iter_mut().zip(row).for_each(|(d, s)| *d += s);
                }
            }
        }
        return Ok(out);
    }
    if k == 1 {
        gemm(w.out_channels, w.in_channels, n, &w.data, w.in_channels, 1, &xp.data, xp.plane, 1, 0.0, &mut out.data, n, 1);
        return Ok(out);
    }
    let mut ext = vec![0.0; w.out_channels * n];
    if strategy == Strategy::Im2col {
        let col = unfold(&xp, w.in_channels, k, n);
        gemm(w.out_channels, w.in_channels * kk, n, &w.data, w.in_channels * kk, 1, &col, n, 1, 0.0, &mut ext, n, 1);
    } else {
        for dy in 0..k {
            for dx in 0..k {
                gemm(
                    w.out_channels,
                    w.in_channels,
                    n,
                    &w.data[dy * k + dx..],
                    w.in_channels * kk,
                    kk,
                    &xp.data[dy * xp.pitch + dx..],
                    xp.plane,
                    1,
                    1.0,
                    &mut ext,
                    n,
                    1,
                );
            }
        }
    }
    for o in 0..w.out_channels {
        let dst = out.channel_mut(o);
        for y in 0..h {
            let src = o * n + y * xp.pitch;
            dst[y * wd..(y + 1) * wd].copy_from_slice(&ext[src..src + wd]);
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv2d_forward(x, w))` with respect to the
/// input and the weights.
pub fn conv2d_backward(x: &Tensor3, w: &ConvWeights, grad_out: &Tensor3) -> Result<(Tensor3, ConvWeights)> {
    let grad_x = conv2d_backward_input(w, grad_out)?;
    let grad_w = conv2d_backward_weights(x, w, grad_out)?;
    if grad_x.shape() != x.shape() {
        return Err(shape_err(format!("grad_out {:?} vs input {:?}", grad_out.shape(), x.shape())));
    }
    Ok((grad_x, grad_w))
}

/// Input gradient only (the first layer of a network does not need it).
pub fn conv2d_backward_input(w: &ConvWeights, grad_out: &Tensor3) -> Result<Tensor3> {
    if grad_out.channels != w.out_channels {
        return Err(shape_err(format!(
            "grad_out has {} channels, weights produce {}",
            grad_out.channels, w.out_channels
        )));
    }
    conv2d_forward(grad_out, &w.adjoint())
}

/// Weight gradient only.
pub fn conv2d_backward_weights(x: &Tensor3, w: &ConvWeights, grad_out: &Tensor3) -> Result<ConvWeights> {
    check_kernel(w.kernel)?;
    if x.channels != w.in_channels
        || grad_out.channels != w.out_channels
        || x.height != grad_out.height
        || x.width != grad_out.width
    {
        return Err(shape_err(format!(
            "x {:?}, grad_out {:?}, weights {}x{}",
            x.shape(),
            grad_out.shape(),
            w.out_channels,
            w.in_channels
        )));
    }
    weight_grad_with(x, w, grad_out, weight_grad_strategy(w, x.plane_len()))
}

/// Largest unfolded input, in values, the weight gradient will build.
const MAX_UNFOLDED: usize = 1 << 21;

fn weight_grad_strategy(w: &ConvWeights, plane: usize) -> Strategy {
    if w.kernel == 1 {
        Strategy::PerTap
    } else if w.out_channels < MIN_ROWS {
        Strategy::TapsAsOutputs
    } else if w.in_channels * w.kernel * w.kernel * plane <= MAX_UNFOLDED {
        Strategy::Im2col
    } else {
        Strategy::PerTap
    }
}

/// Input copied once per tap: rows `(in, tap)`, columns the padded output
/// positions.
fn unfold(xp: &Padded, in_channels: usize, k: usize, n: usize) -> Vec<f64> {
    let kk = k * k;
    let mut col = vec![0.0; in_channels * kk * n];
    for i in 0..in_channels {
        for t in 0..kk {
            let src = i * xp.plane + (t / k) * xp.pitch + t % k;
            col[(i * kk + t) * n..(i * kk + t + 1) * n].copy_from_slice(&xp.data[src..src + n]);
        }
    }
    col
}

pub(crate) fn weight_grad_with(x: &Tensor3, w: &ConvWeights, grad_out: &Tensor3, strategy: Strategy) -> Result<ConvWeights> {
    let k = w.kernel;
    let p = k / 2;
    let xp = pad(x, p);
    let (h, wd) = (x.height, x.width);
    let n = h * xp.pitch;
    let kk = k * k;
    let mut gw = ConvWeights::zeros(w.out_channels, w.in_channels, k)?;
    if strategy == Strategy::TapsAsOutputs {
        // grad_out copied once per tap, offset so that a plain product with
        // the padded input lines up: rows (o, tap), columns input channels
        let mut gs = vec![0.0; w.out_channels * kk * xp.plane];
        for o in 0..w.out_channels {
            let src = grad_out.channel(o);
            for t in 0..kk {
                let base = (o * kk + t) * xp.plane + (t / k) * xp.pitch + t % k;
                for y in 0..h {
                    let dst = base + y * xp.pitch;
                    gs[dst..dst + wd].copy_from_slice(&src[y * wd..(y + 1) * wd]);
                }
            }
        }
        let mut c = vec![0.0; w.out_channels * kk * w.in_channels];
        gemm(
            w.out_channels * kk,
            xp.plane,
            w.in_channels,
            &gs,
            xp.plane,
            1,
            &xp.data,
            1,
            xp.plane,
            0.0,
            &mut c,
            w.in_channels,
            1,
        );
        for o in 0..w.out_channels {
            for t in 0..kk {
                for i in 0..w.in_channels {
                    gw.data[(o * w.in_channels + i) * kk + t] = c[(o * kk + t) * w.in_channels + i];
                }
            }
        }
        return Ok(gw);
    }
    // grad_out on the padded pitch, wrap columns zeroed
    let mut g_ext = vec![0.0; w.out_channels * n];
    for o in 0..w.out_channels {
        let src = grad_out.channel(o);
        for y in 0..h {
            let dst = o * n + y * xp.pitch;
            g_ext[dst..dst + wd].copy_from_slice(&src[y * wd..(y + 1) * wd]);
        }
    }
    if strategy == Strategy::Im2col {
        let col = unfold(&xp, w.in_channels, k, n);
        let m = w.in_channels * kk;
        gemm(w.out_channels, n, m, &g_ext, n, 1, &col, 1, n, 0.0, &mut gw.data, m, 1);
        return Ok(gw);
    }
    for dy in 0..k {
        for dx in 0..k {
            let off = dy * k + dx;
            gemm(
                w.out_channels,
                n,
                w.in_channels,
                &g_ext,
                n,
                1,
                &xp.data[dy * xp.pitch + dx..],
                1,
                xp.plane,
                0.0,
                &mut gw.data[off..],
                w.in_channels * kk,
                kk,
            );
        }
    }
    Ok(gw)
}
