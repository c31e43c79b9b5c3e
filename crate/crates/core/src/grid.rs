//! 2D scalar grids and binary masks used for images, labels and predictions.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// HxW grid of f64 values, row-major. Used for normalized image intensities
/// in [0,1] and for label/prediction maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(h: usize, w: usize) -> Self {
        Grid { h, w, data: vec![0.0; h * w] }
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        Grid { h, w, data: vec![value; h * w] }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::InvalidArgument(format!(
                "grid data length {} != {h}x{w}",
                data.len()
            )));
        }
        Ok(Grid { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Binarize with a strict threshold: pixel set iff value > tau.
    pub fn threshold(&self, tau: f64) -> Mask {
        Mask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| v > tau).collect(),
        }
    }

    /// View as a 1x1xHxW tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.h, self.w), self.data.clone())
            .expect("grid dims match tensor shape")
    }

    /// Take the single channel of a 1x1xHxW tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::InvalidArgument(format!(
                "expected 1x1xHxW tensor, got {s}"
            )));
        }
        Grid::from_vec(s.h, s.w, t.data().to_vec())
    }
}

/// HxW binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Mask { h, w, data: vec![false; h * w] }
    }

    pub fn filled(h: usize, w: usize, value: bool) -> Self {
        Mask { h, w, data: vec![value; h * w] }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::InvalidArgument(format!(
                "mask data length {} != {h}x{w}",
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Coordinates of set pixels in row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if self.at(y, x) {
                    out.push((y, x));
                }
            }
        }
        out
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a || b)
            .count()
    }

    /// 0/1-valued grid view of the mask.
    pub fn to_grid(&self) -> Grid {
        Grid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}
