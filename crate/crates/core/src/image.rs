use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(width * height, data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    /// Quantizes intensities in `[0, 1]` (clamped) to 8 bits.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let data = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Intensity in `[0, 1]` with coordinates clamped to the image.
    pub fn unit_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        f64::from(self.at(x, y)) / 255.0
    }

    pub fn mean_intensity(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / (255.0 * self.data.len() as f64)
    }

    /// Mean squared horizontal forward difference, in unit intensities.
    pub fn gradient_energy(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 1..self.width {
                let d = (f64::from(self.at(x, y)) - f64::from(self.at(x - 1, y))) / 255.0;
                sum += d * d;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}
