use crate::error::{shape_err, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Real-valued channel × height × width array, channel-major.
///
/// Complex k-space is carried as interleaved channel pairs: channel `2c` is
/// the real part and `2c + 1` the imaginary part of coil `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err(format!(
                "{} values for a {}x{}x{} tensor",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Stacks complex planes as interleaved real/imaginary channels.
    pub fn from_complex_planes(planes: &[&[Complex64]], height: usize, width: usize) -> Result<Self> {
        let plane = height * width;
        let mut t = Self::zeros(2 * planes.len(), height, width);
        for (c, p) in planes.iter().enumerate() {
            if p.len() != plane {
                return Err(shape_err(format!("plane {c} has {} values, expected {plane}", p.len())));
            }
            let (re, rest) = t.data[2 * c * plane..(2 * c + 2) * plane].split_at_mut(plane);
            for ((r, i), z) in re.iter_mut().zip(rest.iter_mut()).zip(p.iter()) {
                *r = z.re;
                *i = z.im;
            }
        }
        Ok(t)
    }

    /// Inverse of [`Tensor3::from_complex_planes`].
    pub fn to_complex_planes(&self) -> Result<Vec<Vec<Complex64>>> {
        if !self.channels.is_multiple_of(2) {
            return Err(crate::Error::ChannelPairing(self.channels));
        }
        let plane = self.plane_len();
        Ok((0..self.channels / 2)
            .map(|c| {
                let re = self.channel(2 * c);
                let im = self.channel(2 * c + 1);
                re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect::<Vec<_>>()
            })
            .inspect(|p| debug_assert_eq!(p.len(), plane))
            .collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut t = self.clone();
        t.scale(s);
        t
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        self.check_same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_same_shape(&self, other: &Tensor3) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor3::from_vec(2, 3, 3, vec![0.0; 17]).is_err());
        assert!(Tensor3::from_vec(2, 3, 3, vec![0.0; 18]).is_ok());
    }

    #[test]
    fn complex_planes_roundtrip() {
        let a: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let b: Vec<Complex64> = (0..6).map(|i| Complex64::new(2.0 * i as f64, 0.5)).collect();
        let t = Tensor3::from_complex_planes(&[&a, &b], 2, 3).unwrap();
        assert_eq!(t.channels, 4);
        assert_eq!(t.at(1, 1, 2), -5.0);
        let back = t.to_complex_planes().unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn odd_channels_cannot_pair() {
        let t = Tensor3::zeros(3, 2, 2);
        assert!(matches!(t.to_complex_planes(), Err(crate::Error::ChannelPairing(3))));
    }
}
