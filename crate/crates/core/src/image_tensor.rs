use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An RGB image with values in `[0, 1]`, stored row-major as
/// `values[(y * width + x) * 3 + channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("non-empty image", format!("{width}x{height}")));
        }
        if values.len() != width * height * CHANNELS {
            return Err(Error::shape(
                format!(
                    "{} values for {width}x{height}x3",
                    width * height * CHANNELS
                ),
                values.len(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(ImageTensor {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        ImageTensor::new(width, height, vec![value; width * height * CHANNELS])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * CHANNELS + c
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[self.index(x, y, c)]
    }

    pub fn to_rgb8(&self) -> RgbImage {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let mut px = [0u8; 3];
            for (c, p) in px.iter_mut().enumerate() {
                let v = self.pixel(x as usize, y as usize, c);
                *p = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
            Rgb(px)
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let values = img
            .pixels()
            .flat_map(|p| p.0)
            .map(|b| b as f64 / 255.0)
            .collect();
        ImageTensor::new(img.width() as usize, img.height() as usize, values)
    }

    /// Writes an 8-bit RGB PNG. Values are quantized to `round(v * 255)`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        ImageTensor::from_rgb8(&img)
    }
}
