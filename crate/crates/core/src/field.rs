//! Spatial-domain grids and their DCT-coefficient counterparts.
//!
//! `Field2D` is the one spatial object in the crate: images, velocity fields,
//! residuals and perturbations are all H×W grids of finite f64 values.
//! `Spectrum2D` holds the orthonormal DCT-II coefficients of such a grid; the
//! integer frequency index of bin (row, col) is the pair (row, col) itself.

use crate::error::{Error, Result};

/// Real-valued H×W grid in the spatial domain. Values are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Field2D {
    /// Builds a field from row-major values, validating shape and finiteness.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "field shape {height}x{width} has zero area"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Validation(format!(
                "field {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Field2D {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Field2D {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Field2D {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Fills a field cell-by-cell; `f(row, col)` must return finite values.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Field2D {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Field2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected_h: self.height,
                expected_w: self.width,
                got_h: other.height,
                got_w: other.width,
            });
        }
        Ok(())
    }

    /// Cell-wise sum.
    pub fn add(&self, other: &Field2D) -> Result<Field2D> {
        self.zip_map(other, |a, b| a + b)
    }

    /// Cell-wise difference `self - other`.
    pub fn sub(&self, other: &Field2D) -> Result<Field2D> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Field2D {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2D {
        Field2D {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field2D, f: impl Fn(f64, f64) -> f64) -> Result<Field2D> {
        self.check_same_shape(other)?;
        Ok(Field2D {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Field2D) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Plain L² inner product: Σ cells a·b.
    pub fn l2_inner(&self, other: &Field2D) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Squared L² norm: Σ cells v².
    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|&v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Orthonormal DCT-II coefficients of a `Field2D`, same H×W layout.
///
/// The integer frequency index of the coefficient at (row, col) is
/// ω = (row, col) with 0 ≤ row < H, 0 ≤ col < W.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    height: usize,
    width: usize,
    coefficients: Vec<f64>,
}

impl Spectrum2D {
    pub fn new(height: usize, width: usize, coefficients: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "spectrum shape {height}x{width} has zero area"
            )));
        }
        if coefficients.len() != height * width {
            return Err(Error::Validation(format!(
                "spectrum {height}x{width} needs {} coefficients, got {}",
                height * width,
                coefficients.len()
            )));
        }
        if !coefficients.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("spectrum coefficients"));
        }
        Ok(Spectrum2D {
            height,
            width,
            coefficients,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Spectrum2D {
            height,
            width,
            coefficients: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn coefficient(&self, kx: usize, ky: usize) -> f64 {
        self.coefficients[kx * self.width + ky]
    }

    pub fn set_coefficient(&mut self, kx: usize, ky: usize, value: f64) {
        self.coefficients[kx * self.width + ky] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    /// Frequency index ω = (k_x, k_y) of the bin at flat position `i`.
    pub fn freq_index(&self, i: usize) -> (usize, usize) {
        (i / self.width, i % self.width)
    }

    /// Iterates (k_x, k_y, coefficient) over all bins in row-major order.
    pub fn bins(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width;
        self.coefficients
            .iter()
            .enumerate()
            .map(move |(i, &c)| (i / w, i % w, c))
    }

    /// Total spectral energy Σ coeff².
    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|&c| c * c).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_area() {
        assert!(Field2D::new(0, 4, vec![]).is_err());
        assert!(Field2D::new(4, 0, vec![]).is_err());
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(Field2D::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Field2D::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Field2D::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(Spectrum2D::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn shape_mismatch_on_binary_ops() {
        let a = Field2D::zeros(2, 3);
        let b = Field2D::zeros(3, 2);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(a.l2_inner(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn freq_index_is_row_col() {
        let s = Spectrum2D::zeros(3, 5);
        assert_eq!(s.freq_index(0), (0, 0));
        assert_eq!(s.freq_index(7), (1, 2));
        assert_eq!(s.freq_index(14), (2, 4));
    }
}
