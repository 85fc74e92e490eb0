//! Centered, orthonormal 2D DFT on power-of-two grids.
//!
//! The forward transform places DC at index `(h/2, w/2)` on both sides and
//! scales by `1/sqrt(h*w)`, so it is unitary: the inverse is the conjugate
//! transform and Parseval holds without extra factors.

use crate::error::{Error, Result};
use crate::num::Tensor3;
use num_complex::Complex64;
use std::f64::consts::PI;

fn check_pow2(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Dimension(format!("{what} {n} is not a power of two")));
    }
    Ok(())
}

/// In-place iterative radix-2 FFT (unnormalized). `inverse` flips the sign
/// of the exponent.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Centered orthonormal 2D transform of one row-major complex plane.
pub fn fft2c(plane: &mut [Complex64], height: usize, width: usize, inverse: bool) -> Result<()> {
    check_pow2(height, "height")?;
    check_pow2(width, "width")?;
    if plane.len() != height * width {
        return Err(Error::Shape(format!("plane of {} values for {height}x{width}", plane.len())));
    }
    // For even sizes, the centering shifts fold into a (-1)^(y+x) checkerboard
    // before and after the transform, up to a global (-1)^((h+w)/2) sign.
    let global = if ((height / 2 + width / 2) % 2) == 1 { -1.0 } else { 1.0 };
    let checker = |plane: &mut [Complex64]| {
        for y in 0..height {
            for x in 0..width {
                if (y + x) % 2 == 1 {
                    plane[y * width + x] = -plane[y * width + x];
                }
            }
        }
    };
    if height * width > 1 {
        checker(plane);
    }
    for row in plane.chunks_mut(width) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = plane[y * width + x];
        }
        fft_in_place(&mut col, inverse);
        for y in 0..height {
            plane[y * width + x] = col[y];
        }
    }
    if height * width > 1 {
        checker(plane);
    }
    let s = global / ((height * width) as f64).sqrt();
    plane.iter_mut().for_each(|z| *z *= s);
    Ok(())
}

fn dft2_tensor(ks: &Tensor3, inverse: bool) -> Result<Tensor3> {
    if !ks.channels.is_multiple_of(2) {
        return Err(Error::ChannelPairing(ks.channels));
    }
    check_pow2(ks.height, "height")?;
    check_pow2(ks.width, "width")?;
    let mut planes = ks.to_complex_planes()?;
    for p in planes.iter_mut() {
        fft2c(p, ks.height, ks.width, inverse)?;
    }
    let refs: Vec<&[Complex64]> = planes.iter().map(|p| p.as_slice()).collect();
    Tensor3::from_complex_planes(&refs, ks.height, ks.width)
}

/// Forward centered DFT of every complex channel pair.
pub fn dft2_centered(ks: &Tensor3) -> Result<Tensor3> {
    dft2_tensor(ks, false)
}

/// Inverse of [`dft2_centered`].
pub fn idft2_centered(ks: &Tensor3) -> Result<Tensor3> {
    dft2_tensor(ks, true)
}
