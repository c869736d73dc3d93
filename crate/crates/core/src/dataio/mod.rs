//! Image ingestion, preprocessing, the synthetic phantom dataset and
//! deterministic epoch streaming.

mod dataset;
mod phantom;
mod pnm;
mod preprocess;

pub use dataset::{load_images_from_dir, Dataset, DirDataset, EpochStream, PhantomDataset};
pub use phantom::PhantomConfig;
pub use pnm::{load_pgm, save_pgm, PgmDepth};
pub use preprocess::preprocess;

use std::path::Path;

use crate::tensor::{Tensor, TensorError};
use crate::View;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("{path}: {detail}")]
    Malformed { path: String, detail: String },
    #[error("pixel value {0} outside [0, 1]")]
    PixelRange(f32),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("zero-sized image")]
    ZeroSized,
    #[error(
        "dataset resolution {src:?} cannot be downsampled to {dst:?} (needs equal power-of-two factors)"
    )]
    IncompatibleResolution { src: (usize, usize), dst: (usize, usize) },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png: {0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Single-channel image with pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<GrayImage> {
        if height == 0 || width == 0 {
            return Err(DataError::ZeroSized);
        }
        if data.len() != height * width {
            return Err(DataError::Malformed {
                path: String::new(),
                detail: format!("{}x{} wants {} pixels, got {}", height, width, height * width, data.len()),
            });
        }
        for &v in &data {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::PixelRange(v));
            }
        }
        Ok(GrayImage { height, width, data })
    }

    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f32>) -> GrayImage {
        debug_assert_eq!(data.len(), height * width);
        GrayImage { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> GrayImage {
        GrayImage::from_parts(height, width, vec![0.0; height * width])
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

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, 1, self.height, self.width], self.data.clone())
    }

    /// Build from a `[H,W]`, `[1,H,W]` or `[1,1,H,W]` tensor, clamping into
    /// the unit range.
    pub fn from_tensor_clamped(t: &Tensor) -> Result<GrayImage> {
        let (h, w) = match t.shape() {
            [h, w] => (*h, *w),
            [1, h, w] => (*h, *w),
            [1, 1, h, w] => (*h, *w),
            other => {
                return Err(DataError::Malformed {
                    path: String::new(),
                    detail: format!("tensor shape {other:?} is not a single grayscale image"),
                })
            }
        };
        let data: Vec<f32> = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(GrayImage::from_parts(h, w, data))
    }
}

/// A grayscale image with its mammographic view label.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub view: View,
    pub source_id: String,
}

/// Load a grayscale image from PGM (8/16-bit), PNG (8-bit) or a raw tensor
/// file. Values map linearly onto `[0, 1]`.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "pgm" => load_pgm(path),
        Some(ext) if ext == "png" => load_png(path),
        Some(ext) if ext == "tnsr" => {
            let t = Tensor::load(path)?;
            let img = GrayImage::from_tensor_clamped(&t)?;
            // tensor caches must already be in range; clamping hides errors
            for &v in t.data() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DataError::PixelRange(v));
                }
            }
            Ok(img)
        }
        other => Err(DataError::UnsupportedFormat(format!(
            "{} ({:?})",
            path.display(),
            other
        ))),
    }
}

/// Save an image as 8-bit PGM, 16-bit PGM or 8-bit grayscale PNG depending
/// on the file extension (`.pgm` defaults to 8-bit).
pub fn save_image(img: &GrayImage, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "pgm" => save_pgm(img, path, PgmDepth::Eight),
        Some(ext) if ext == "png" => save_png(img, path),
        Some(ext) if ext == "tnsr" => {
            let t = Tensor::from_parts(vec![img.height, img.width], img.data.clone());
            t.save(path)?;
            Ok(())
        }
        other => Err(DataError::UnsupportedFormat(format!(
            "{} ({:?})",
            path.display(),
            other
        ))),
    }
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| DataError::Png(e.to_string()))?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data: Vec<f32> = gray.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    if h == 0 || w == 0 {
        return Err(DataError::ZeroSized);
    }
    Ok(GrayImage::from_parts(h, w, data))
}

fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| DataError::Png(e.to_string()))
}
