//! Canonical image representation and 8-bit PNG I/O.
//!
//! Every image is held as an `H × W × C` array of `f64` in `[0, 1]`,
//! obtained from 8-bit samples as `v / 255`. Export goes the other way with
//! round-half-away-from-zero, so a tensor whose values are exact multiples
//! of `1/255` survives a save/load cycle unchanged.

use std::path::Path;

use image::{ColorType, ExtendedColorType, ImageFormat, ImageReader};
use ndarray::{Array3, ArrayView3};

use crate::error::{ensure, Error, Result};

/// An `H × W × C` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
    source_bit_depth: u8,
}

impl ImageTensor {
    /// Smallest accepted height or width.
    pub const MIN_SIDE: usize = 32;

    /// Wraps `data`, checking shape, finiteness and range.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        ensure!(
            h >= Self::MIN_SIDE && w >= Self::MIN_SIDE,
            "image is {h}x{w}, both sides must be at least {}",
            Self::MIN_SIDE
        );
        ensure!(c == 1 || c == 3, "image has {c} channels, expected 1 or 3");
        for &v in data.iter() {
            ensure!(v.is_finite(), "image contains a non-finite value");
            ensure!((0.0..=1.0).contains(&v), "image value {v} outside [0, 1]");
        }
        Ok(Self {
            data,
            source_bit_depth: 8,
        })
    }

    /// Clamps `data` into `[0, 1]` and wraps it.
    pub fn from_clipped(data: ArrayView3<f64>) -> Result<Self> {
        Self::new(clip01(data)?)
    }

    /// Builds an image from interleaved 8-bit samples in row-major order.
    pub fn from_u8(height: usize, width: usize, channels: usize, samples: &[u8]) -> Result<Self> {
        ensure!(
            samples.len() == height * width * channels,
            "expected {} samples, got {}",
            height * width * channels,
            samples.len()
        );
        let data = Array3::from_shape_vec(
            (height, width, channels),
            samples.iter().map(|&s| f64::from(s) / 255.0).collect(),
        )
        .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn source_bit_depth(&self) -> u8 {
        self.source_bit_depth
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    /// Interleaved 8-bit samples, `round(v * 255)` with ties away from zero.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8_sample(v)).collect()
    }

    /// The image as it would read back after an 8-bit PNG export.
    pub fn quantize_8bit(&self) -> ImageTensor {
        Self {
            data: self.data.mapv(|v| f64::from(to_u8_sample(v)) / 255.0),
            source_bit_depth: 8,
        }
    }

    /// Copies out the centered `height × width` window.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<ImageTensor> {
        ensure!(
            height <= self.height() && width <= self.width(),
            "crop {height}x{width} larger than image {}x{}",
            self.height(),
            self.width()
        );
        let top = (self.height() - height) / 2;
        let left = (self.width() - width) / 2;
        let data = self
            .data
            .slice(ndarray::s![top..top + height, left..left + width, ..])
            .to_owned();
        Self::new(data)
    }
}

fn to_u8_sample(v: f64) -> u8 {
    // f64::round breaks ties away from zero.
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Reads an 8-bit grayscale or RGB PNG.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: "not a PNG file".into(),
        });
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, samples) = match decoded.color() {
        ColorType::L8 => (1, decoded.into_luma8().into_raw()),
        ColorType::Rgb8 => (3, decoded.into_rgb8().into_raw()),
        other => {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: format!("color type {other:?} is not 8-bit grayscale or RGB"),
            })
        }
    };
    ImageTensor::from_u8(height, width, channels, &samples)
}

/// Writes `img` as an 8-bit PNG.
pub fn save_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    image::save_buffer_with_format(
        path,
        &img.to_u8(),
        img.width() as u32,
        img.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Clamps every value into `[0, 1]`.
pub fn clip01(data: ArrayView3<f64>) -> Result<Array3<f64>> {
    ensure!(
        data.iter().all(|v| v.is_finite()),
        "cannot clip a tensor with non-finite values"
    );
    Ok(data.mapv(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn filled(h: usize, w: usize, c: usize, v: f64) -> ImageTensor {
        ImageTensor::new(Array3::from_elem((h, w, c), v)).unwrap()
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(ImageTensor::new(Array3::zeros((31, 40, 3))).is_err());
        assert!(ImageTensor::new(Array3::zeros((32, 32, 2))).is_err());
        assert!(ImageTensor::new(Array3::from_elem((32, 32, 1), 1.5)).is_err());
        assert!(ImageTensor::new(Array3::from_elem((32, 32, 1), f64::NAN)).is_err());
        assert!(ImageTensor::new(Array3::zeros((32, 48, 1))).is_ok());
    }

    #[test]
    fn clip_examples() {
        let data = Array3::from_shape_vec((1, 3, 1), vec![1.3, -0.2, 0.42]).unwrap();
        let out = clip01(data.view()).unwrap();
        assert_eq!(out.as_slice().unwrap(), &[1.0, 0.0, 0.42]);
        assert!(clip01(Array3::from_elem((1, 1, 1), f64::INFINITY).view()).is_err());
    }

    #[test]
    fn half_rounds_away_from_zero() {
        assert!(filled(32, 32, 3, 0.5).to_u8().iter().all(|&p| p == 128));
        assert!(filled(32, 32, 3, 0.0).to_u8().iter().all(|&p| p == 0));
    }

    #[test]
    fn png_saturation_cases() {
        let dir = tempfile::tempdir().unwrap();
        for (v, expect) in [(0.0, 0.0), (1.0, 1.0)] {
            let path = dir.path().join(format!("{v}.png"));
            save_png(&filled(40, 36, 3, v), &path).unwrap();
            let back = load_png(&path).unwrap();
            assert_eq!((back.height(), back.width(), back.channels()), (40, 36, 3));
            assert!(back.data().iter().all(|&p| p == expect));
        }
    }

    #[test]
    fn grayscale_roundtrip() {
        let samples: Vec<u8> = (0..32 * 33).map(|i| (i * 7 % 256) as u8).collect();
        let img = ImageTensor::from_u8(32, 33, 1, &samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        save_png(&img, &path).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_png(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));

        let rgba = dir.path().join("rgba.png");
        image::save_buffer(&rgba, &vec![7u8; 32 * 32 * 4], 32, 32, ExtendedColorType::Rgba8)
            .unwrap();
        assert!(matches!(load_png(&rgba), Err(Error::Format { .. })));

        let deep = dir.path().join("deep.png");
        let buf: Vec<u8> = vec![1u8; 32 * 32 * 2];
        image::save_buffer(&deep, &buf, 32, 32, ExtendedColorType::L16).unwrap();
        assert!(matches!(load_png(&deep), Err(Error::Format { .. })));

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image").unwrap();
        assert!(load_png(&junk).is_err());
    }
}
