//! Synthetic track imagery, grayscale image IO and ROI extraction.

mod pgm;
mod scene;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use pgm::{decode_pgm, encode_pgm, read_pgm, read_pgm_any, write_pgm};
pub use scene::{generate, generate_corpus, generate_with_truth, SceneKind, SceneParams, SceneTruth};

/// Side length of the working resolution.
pub const IMAGE_SIZE: usize = 64;

/// Row-major grayscale image with every pixel in `[0, 1]`.
///
/// Most images are the 64x64 working size; camera frames handed to
/// [`crop_resize_roi`] may be any size.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    /// Builds an image from `f(row, col)`, clamping each value into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(clamp_unit(f(r, c)));
            }
        }
        Image { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn is_working_size(&self) -> bool {
        self.width == IMAGE_SIZE && self.height == IMAGE_SIZE
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// `(1, 64, 64)` network input.
    pub fn to_tensor(&self) -> Result<Tensor> {
        if !self.is_working_size() {
            return Err(Error::shape(format!(
                "network input must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {}x{}",
                self.width, self.height
            )));
        }
        Tensor::new(vec![1, IMAGE_SIZE, IMAGE_SIZE], self.pixels.clone())
    }
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Region of interest `x,y,w,h` in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Roi {
    pub fn full(image: &Image) -> Self {
        Roi { x: 0, y: 0, w: image.width, h: image.height }
    }
}

impl FromStr for Roi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [x, y, w, h] = parts.as_slice() else {
            return Err(Error::invalid(format!("ROI must be x,y,w,h, got {s:?}")));
        };
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::invalid(format!("ROI component {v:?} is not a non-negative integer")))
        };
        Ok(Roi { x: num(x)?, y: num(y)?, w: num(w)?, h: num(h)? })
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// Crops `roi` out of `frame` and resamples it to 64x64 by nearest neighbour.
/// Target pixel `(ty, tx)` reads source `(y + ty*h/64, x + tx*w/64)`.
pub fn crop_resize_roi(frame: &Image, roi: Roi) -> Result<Image> {
    if roi.w == 0 || roi.h == 0 {
        return Err(Error::invalid(format!("ROI {roi} has zero extent")));
    }
    if roi.x + roi.w > frame.width || roi.y + roi.h > frame.height {
        return Err(Error::invalid(format!(
            "ROI {roi} exceeds {}x{} frame",
            frame.width, frame.height
        )));
    }
    let mut pixels = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for ty in 0..IMAGE_SIZE {
        let sy = roi.y + ty * roi.h / IMAGE_SIZE;
        for tx in 0..IMAGE_SIZE {
            let sx = roi.x + tx * roi.w / IMAGE_SIZE;
            pixels.push(frame.get(sy, sx));
        }
    }
    Ok(Image { width: IMAGE_SIZE, height: IMAGE_SIZE, pixels })
}

/// Path of the `index`-th file in a corpus directory.
pub fn corpus_file_name(index: usize) -> String {
    format!("img_{index:05}.pgm")
}

/// Writes `images` as `img_00000.pgm`, `img_00001.pgm`, ... creating `dir`.
pub fn write_corpus_dir(dir: &Path, images: &[Image]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let path = dir.join(corpus_file_name(i));
            write_pgm(img, &path)?;
            Ok(path)
        })
        .collect()
}

/// Reads every `.pgm` file in `dir` in file-name order as a 64x64 image.
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<Image>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "pgm") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no .pgm files in {}", dir.display())));
    }
    paths.iter().map(|p| read_pgm(p)).collect()
}
