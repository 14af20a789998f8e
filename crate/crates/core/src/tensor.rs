//! Dense channel-major activation volumes.

use crate::error::{Error, Result};

/// A `channels × rows × cols` volume stored row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Tensor {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    pub fn from_vec(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * rows * cols {
            return Err(Error::Shape(format!(
                "tensor {channels}x{rows}x{cols} needs {} values, got {}",
                channels * rows * cols,
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
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
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.rows + y) * self.cols + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.rows + y) * self.cols + x] = v;
    }

    /// Per-pixel arithmetic mean over channels, as a single-channel tensor.
    pub fn channel_mean(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.rows, self.cols);
        let inv = 1.0 / self.channels as f64;
        for c in 0..self.channels {
            for (o, v) in out.data.iter_mut().zip(self.channel(c)) {
                *o += v;
            }
        }
        out.data.iter_mut().for_each(|v| *v *= inv);
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn same_spatial(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}
