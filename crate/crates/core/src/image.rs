//! Dense float image, the unit every augmentation acts on.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Canonical side length enforced at ingestion so every supported patch
/// count divides the image evenly.
pub const CANONICAL_SIDE: usize = 32;

/// H×W×C image, row-major with interleaved channels, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ImageError {
    /// Buffer length does not equal `height * width * channels`.
    BadLength { expected: usize, got: usize },
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::BadLength { expected, got } => {
                write!(f, "image buffer holds {got} floats, expected {expected}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ImageError {}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImageError::BadLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Channel slice at `(y, x)`.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn is_canonical(&self) -> bool {
        self.height == CANONICAL_SIDE && self.width == CANONICAL_SIDE
    }

    /// True when every intensity is finite and inside `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_length() {
        assert!(Image::new(2, 2, 3, vec![0.0; 12]).is_ok());
        let err = Image::new(2, 2, 3, vec![0.0; 11]).unwrap_err();
        assert_eq!(err, ImageError::BadLength { expected: 12, got: 11 });
    }

    #[test]
    fn pixel_indexing_is_row_major_interleaved() {
        let mut img = Image::zeros(2, 3, 3);
        img.set(1, 2, 0, 0.5);
        assert_eq!(img.data()[(1 * 3 + 2) * 3], 0.5);
        assert_eq!(img.pixel(1, 2)[0], 0.5);
    }
}
