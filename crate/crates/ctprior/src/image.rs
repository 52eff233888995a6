//! The reconstruction variable: a rectangular grid of attenuation values.

use crate::error::{Error, Result};
use crate::Real;

/// A dense `height × width` image stored row-major. Pixel values are real
/// attenuation coefficients, nominally in `[0, 1]` for the shipped phantoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<Real>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image { height, width, data: vec![0.0; height * width] }
    }

    pub fn constant(height: usize, width: usize, value: Real) -> Self {
        Image { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "image data length",
                height * width,
                data.len(),
            ));
        }
        Ok(Image { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Real) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Real {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Real) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_size(&self, other: &Image, what: &'static str) -> Result<()> {
        if !self.same_size(other) {
            return Err(Error::shape(
                what,
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + scale · other`.
    pub fn axpy(&self, scale: Real, other: &Image) -> Image {
        debug_assert!(self.same_size(other));
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + scale * b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Image) -> Image {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Image) -> Image {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, s: Real) -> Image {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &Image) -> Real {
        debug_assert!(self.same_size(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> Real {
        self.dot(self).sqrt()
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> Real {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as Real
        }
    }

    pub fn min(&self) -> Real {
        self.data.iter().copied().fold(Real::INFINITY, Real::min)
    }

    pub fn max(&self) -> Real {
        self.data.iter().copied().fold(Real::NEG_INFINITY, Real::max)
    }

    pub fn clamp(&self, lo: Real, hi: Real) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }
}
