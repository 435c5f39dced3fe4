//! Dense `H x W x C` float images and the pixel operations shared by
//! preprocessing, augmentation and attention rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Argument(format!(
                "image buffer holds {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image::new(height, width, channels, vec![value; height * width * channels])
            .expect("positive dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Mirror about the vertical axis.
    pub fn flipped_horizontally(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.index(y, self.width - 1 - x, 0);
                let dst = self.index(y, x, 0);
                out.data[dst..dst + self.channels]
                    .copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    /// Replicate a single-channel image to `channels` channels.
    pub fn replicate_channels(&self, channels: usize) -> Result<Image> {
        if self.channels == channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(Error::Argument(format!(
                "cannot expand {} channels to {channels}",
                self.channels
            )));
        }
        let data = self
            .data
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(channels))
            .collect();
        Image::new(self.height, self.width, channels, data)
    }

    /// Bilinear resize with half-pixel centres and edge clamping. A resize to
    /// the current size returns the input unchanged.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let map = |dst: usize, n_out: usize, n_in: usize| {
            let s = (dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
            s.clamp(0.0, (n_in - 1) as f64)
        };
        self.resample(height, width, map)
    }

    /// Bilinear resize with corner alignment: the four corner pixels of the
    /// output sample the four corner values of the input exactly.
    pub fn resize_bilinear_corners(&self, height: usize, width: usize) -> Image {
        let map = |dst: usize, n_out: usize, n_in: usize| {
            if n_out <= 1 || n_in <= 1 {
                0.0
            } else {
                dst as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            }
        };
        self.resample(height, width, map)
    }

    fn resample(&self, height: usize, width: usize, map: impl Fn(usize, usize, usize) -> f64) -> Image {
        let c = self.channels;
        let mut out = Image::filled(height, width, c, 0.0);
        let xs: Vec<(usize, usize, f64)> = (0..width)
            .map(|x| split(map(x, width, self.width), self.width))
            .collect();
        for y in 0..height {
            let (y0, y1, fy) = split(map(y, height, self.height), self.height);
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                for ch in 0..c {
                    let v00 = self.get(y0, x0, ch) as f64;
                    let v01 = self.get(y0, x1, ch) as f64;
                    let v10 = self.get(y1, x0, ch) as f64;
                    let v11 = self.get(y1, x1, ch) as f64;
                    let top = v00 + (v01 - v00) * fx;
                    let bottom = v10 + (v11 - v10) * fx;
                    out.set(y, x, ch, (top + (bottom - top) * fy) as f32);
                }
            }
        }
        out
    }
}

fn split(s: f64, n: usize) -> (usize, usize, f64) {
    let i0 = (s.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    let f = if i1 == i0 { 0.0 } else { s - i0 as f64 };
    (i0, i1, f)
}

#[cfg(feature = "io")]
pub mod png {
    //! 8-bit PNG reading and writing.

    use std::path::Path;

    use image::{DynamicImage, GrayImage, RgbImage};

    use super::Image;
    use crate::error::{Error, Result};

    /// Decode a PNG (or any format `image` understands) into `[0, 1]` floats
    /// with one channel for grayscale sources and three otherwise.
    pub fn read(path: &Path) -> Result<Image> {
        let dynimg = image::open(path)
            .map_err(|e| Error::ingest(None, format!("{}: {e}", path.display())))?;
        from_dynamic(dynimg)
    }

    pub fn from_dynamic(dynimg: DynamicImage) -> Result<Image> {
        let gray = matches!(
            dynimg.color(),
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
        );
        if gray {
            let g = dynimg.into_luma8();
            let (w, h) = g.dimensions();
            let data = g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Image::new(h as usize, w as usize, 1, data)
        } else {
            let rgb = dynimg.into_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Image::new(h as usize, w as usize, 3, data)
        }
    }

    pub fn to_bytes(img: &Image) -> Vec<u8> {
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Write a one- or three-channel `[0, 1]` image as 8-bit PNG.
    pub fn write(path: &Path, img: &Image) -> Result<()> {
        let (h, w, c) = img.dims();
        let bytes = to_bytes(img);
        let res = match c {
            1 => GrayImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer sized from dims")
                .save(path),
            3 => RgbImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer sized from dims")
                .save(path),
            _ => {
                return Err(Error::Argument(format!(
                    "cannot write a {c}-channel image as PNG"
                )))
            }
        };
        res.map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
    }
}
