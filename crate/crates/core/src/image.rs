//! Float RGB images in `[0, 1]`, row-major `H×W×3`.

use std::path::Path;

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

/// An RGB image with `f32` channels, stored row-major as `H×W×3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// A single brushstroke rendered on a white background.
pub type StrokeImage = Image;

impl Image {
    pub fn white(height: usize, width: usize) -> Self {
        Self::filled(height, width, [1.0; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}x3 = {}", height * width * 3),
                got: data.len().to_string(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Decodes 8-bit RGB bytes (row-major) into floats.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::from_vec(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{}", other.height, other.width),
            });
        }
        Ok(())
    }

    /// Quantizes to 8 bits, rounding half up.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_u8(h as usize, w as usize, img.as_raw())
    }

    /// Bilinear resize (used to bring external images to painter resolution).
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let src = image::Rgb32FImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length matches dimensions");
        let out = image::imageops::resize(
            &src,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        let data = out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image {
            height,
            width,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(y, self.width - 1 - x, self.pixel(y, x));
            }
        }
        out
    }

    /// Σ over pixels of `1 − min channel`.
    pub fn ink_mass(&self) -> f32 {
        self.data
            .chunks_exact(3)
            .map(|p| 1.0 - p[0].min(p[1]).min(p[2]))
            .sum()
    }

    pub fn mean(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len().max(1) as f32
    }

    pub fn mse(&self, other: &Image) -> Result<f32> {
        self.same_shape(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        Ok((sum / self.data.len() as f64) as f32)
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f32> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Converts to a `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        images_to_tensor(std::slice::from_ref(self), device)
    }

    /// Accepts `(3, H, W)` or `(1, 3, H, W)` tensors.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let t = if t.rank() == 4 { t.squeeze(0)? } else { t.clone() };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::ShapeMismatch {
                expected: "3 channels".into(),
                got: format!("{c} channels"),
            });
        }
        let hwc = t
            .to_dtype(candle_core::DType::F32)?
            .permute((1, 2, 0))?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Image::from_vec(h, w, hwc)
    }

    /// Lays images out left to right with `gap` white pixels between them.
    pub fn hstack(images: &[Image], gap: usize) -> Result<Image> {
        let height = images.iter().map(|i| i.height).max().unwrap_or(0);
        let width = images.iter().map(|i| i.width).sum::<usize>() + gap * images.len().saturating_sub(1);
        let mut out = Image::white(height, width);
        let mut x0 = 0;
        for img in images {
            out.blit(img, 0, x0);
            x0 += img.width + gap;
        }
        Ok(out)
    }

    /// Lays rows of images out top to bottom.
    pub fn grid(rows: &[Vec<Image>], gap: usize) -> Result<Image> {
        let strips = rows
            .iter()
            .map(|r| Image::hstack(r, gap))
            .collect::<Result<Vec<_>>>()?;
        let width = strips.iter().map(|s| s.width).max().unwrap_or(0);
        let height = strips.iter().map(|s| s.height).sum::<usize>() + gap * strips.len().saturating_sub(1);
        let mut out = Image::white(height, width);
        let mut y0 = 0;
        for s in &strips {
            out.blit(s, y0, 0);
            y0 += s.height + gap;
        }
        Ok(out)
    }

    fn blit(&mut self, src: &Image, y0: usize, x0: usize) {
        for y in 0..src.height.min(self.height.saturating_sub(y0)) {
            for x in 0..src.width.min(self.width.saturating_sub(x0)) {
                self.set_pixel(y0 + y, x0 + x, src.pixel(y, x));
            }
        }
    }
}

/// Maps `[0, 1]` to `0..=255`, rounding half up.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Stacks same-sized images into an `(N, 3, H, W)` tensor.
pub fn images_to_tensor(images: &[Image], device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data: Vec<f32> = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        first.same_shape(img)?;
        for c in 0..3 {
            data.extend(img.data.iter().skip(c).step_by(3).copied());
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?)
}

/// Splits an `(N, 3, H, W)` tensor into images.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let n = t.dim(0)?;
    (0..n).map(|i| Image::from_tensor(&t.get(i)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(-3.0), 0);
    }

    #[test]
    fn tensor_round_trip() {
        let mut img = Image::white(4, 5);
        img.set_pixel(1, 3, [0.1, 0.2, 0.3]);
        let t = img.to_tensor(&Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 4, 5]);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn ink_mass_counts_darkest_channel() {
        let mut img = Image::white(2, 2);
        img.set_pixel(0, 0, [0.5, 0.9, 1.0]);
        assert!((img.ink_mass() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn png_round_trip_is_exact_on_u8_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_u8(3, 2, &[0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150, 160, 255])
            .unwrap();
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap().to_u8(), img.to_u8());
    }
}
