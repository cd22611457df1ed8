use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("data length {len} does not match {width}x{height}")]
    LengthMismatch { width: usize, height: usize, len: usize },
    #[error("pixel {index} = {value} is not a finite value in [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("image must be non-empty")]
    Empty,
}

/// A normalized single-channel slice, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        if data.len() != width * height {
            return Err(ImageError::LengthMismatch { width, height, len: data.len() });
        }
        if let Some((index, &value)) =
            data.iter().enumerate().find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from arbitrary finite values by clamping into `[0, 1]`.
    /// Non-finite values map to 0.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self, ImageError> {
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Mean over non-overlapping `factor`x`factor` blocks. Dimensions must be
    /// divisible by `factor`.
    pub fn box_downsample(&self, factor: usize) -> Image2D {
        assert!(factor > 0 && self.width % factor == 0 && self.height % factor == 0);
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = vec![0.0; w * h];
        for (y, row) in out.chunks_mut(w).enumerate() {
            for (x, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for dy in 0..factor {
                    let base = (y * factor + dy) * self.width + x * factor;
                    acc += self.data[base..base + factor].iter().sum::<f64>();
                }
                *o = (acc * norm).clamp(0.0, 1.0);
            }
        }
        Image2D { width: w, height: h, data: out }
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn bilinear_resize(&self, width: usize, height: usize) -> Image2D {
        assert!(width > 0 && height > 0);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.get(x0, y0) * (1.0 - wx) + self.get(x1, y0) * wx;
                let bot = self.get(x0, y1) * (1.0 - wx) + self.get(x1, y1) * wx;
                out.push((top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0));
            }
        }
        Image2D { width, height, data: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(Image2D::new(2, 1, vec![0.0, 1.5]), Err(ImageError::OutOfRange { index: 1, .. })));
        assert!(matches!(Image2D::new(2, 1, vec![f64::NAN, 0.0]), Err(ImageError::OutOfRange { .. })));
        assert!(matches!(Image2D::new(2, 2, vec![0.0; 3]), Err(ImageError::LengthMismatch { .. })));
        assert_eq!(Image2D::new(0, 2, vec![]), Err(ImageError::Empty));
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let img = Image2D::new(4, 2, vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.5]).unwrap();
        let d = img.box_downsample(2);
        assert_eq!(d.dims(), (2, 1));
        assert_eq!(d.data(), &[0.5, 0.5]);
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let img = Image2D::filled(8, 8, 0.25).unwrap();
        let up = img.bilinear_resize(32, 32);
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn bilinear_identity_size() {
        let img = Image2D::new(2, 2, vec![0.0, 0.2, 0.4, 0.6]).unwrap();
        assert_eq!(img.bilinear_resize(2, 2), img);
    }
}
