//! Complex spectrogram state.
//!
//! A [`SpecGrid`] is an (n_freq x n_frames) array of complex values stored as
//! (re, im) coordinate pairs. The diffusion process treats the two
//! coordinates of every bin as independent real variables, so most helpers
//! here operate per real coordinate.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Complex-valued spectrogram of shape (n_freq, n_frames), frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecGrid {
    n_freq: usize,
    n_frames: usize,
    data: Vec<Complex64>,
}

impl SpecGrid {
    /// All-zero grid.
    pub fn zeros(n_freq: usize, n_frames: usize) -> Self {
        assert!(n_freq >= 1 && n_frames >= 1, "grid dimensions must be >= 1");
        Self {
            n_freq,
            n_frames,
            data: vec![Complex64::ZERO; n_freq * n_frames],
        }
    }

    /// Grid with every bin set to `value`.
    pub fn constant(n_freq: usize, n_frames: usize, value: Complex64) -> Self {
        let mut g = Self::zeros(n_freq, n_frames);
        g.data.fill(value);
        g
    }

    /// 1x1 grid holding a single complex value (the scalar toy case).
    pub fn scalar(value: Complex64) -> Self {
        Self::constant(1, 1, value)
    }

    /// Builds a grid from per-bin values, row = frequency, column = frame.
    pub fn from_fn(
        n_freq: usize,
        n_frames: usize,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Self {
        let mut g = Self::zeros(n_freq, n_frames);
        for fi in 0..n_freq {
            for ti in 0..n_frames {
                g.data[fi * n_frames + ti] = f(fi, ti);
            }
        }
        g
    }

    /// Wraps an existing frequency-major buffer.
    pub fn from_vec(n_freq: usize, n_frames: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n_freq * n_frames || n_freq == 0 || n_frames == 0 {
            return Err(Error::InvalidParam(format!(
                "buffer of {} values does not form a {}x{} grid",
                data.len(),
                n_freq,
                n_frames
            )));
        }
        Ok(Self {
            n_freq,
            n_frames,
            data,
        })
    }

    /// Grid of independent standard-normal draws per real coordinate.
    pub fn standard_normal(n_freq: usize, n_frames: usize, rng: &mut impl Rng) -> Self {
        let mut g = Self::zeros(n_freq, n_frames);
        for c in &mut g.data {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *c = Complex64::new(re, im);
        }
        g
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_freq, self.n_frames)
    }

    /// Number of complex bins.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of real coordinates (two per bin).
    pub fn n_coords(&self) -> usize {
        2 * self.data.len()
    }

    pub fn get(&self, freq: usize, frame: usize) -> Complex64 {
        self.data[freq * self.n_frames + frame]
    }

    pub fn set(&mut self, freq: usize, frame: usize, value: Complex64) {
        self.data[freq * self.n_frames + frame] = value;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Errors unless `other` has the same shape.
    pub fn check_same_shape(&self, other: &SpecGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    /// Elementwise map.
    pub fn map(&self, mut f: impl FnMut(Complex64) -> Complex64) -> Self {
        Self {
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }

    /// Elementwise combination of two grids of equal shape.
    pub fn zip_map(
        &self,
        other: &SpecGrid,
        mut f: impl FnMut(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Multiplies every coordinate by a real scalar.
    pub fn scale(&self, s: f64) -> Self {
        self.map(|c| c * s)
    }

    pub fn add(&self, other: &SpecGrid) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SpecGrid) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// self + s * other, elementwise.
    pub fn add_scaled(&self, other: &SpecGrid, s: f64) -> Result<Self> {
        self.zip_map(other, |a, b| a + b * s)
    }

    /// Sum of squared real coordinates, i.e. the squared l2 norm over all
    /// (re, im) pairs.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Mean of |bin|^2 over all complex bins.
    pub fn mean_sq_modulus(&self) -> f64 {
        self.norm_sq() / self.data.len() as f64
    }

    /// Largest absolute real coordinate.
    pub fn max_abs_coord(&self) -> f64 {
        self.data
            .iter()
            .map(|c| c.re.abs().max(c.im.abs()))
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Iterator over the real coordinates in (re, im) order per bin.
    pub fn coords(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().flat_map(|c| [c.re, c.im])
    }
}
