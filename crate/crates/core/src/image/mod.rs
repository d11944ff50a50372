//! Grayscale image representation and the filtering primitives the rest of
//! the crate is built on.
//!
//! Intensities live in `[0, 1]`. Metrics that need 8-bit semantics scale or
//! quantize internally.

mod filter;
mod pgm;
mod pyramid;

pub use filter::{
    box_kernel, convolve, convolve_adjoint, downsample2, gaussian_kernel, upsample2, Kernel,
};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, quantize, save_pgm};
pub use pyramid::Pyramid;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed PGM header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("unsupported PGM maxval {maxval} at byte {offset} (only 255 is accepted)")]
    UnsupportedMaxval { offset: usize, maxval: u32 },
    #[error("truncated PGM payload: expected {expected} bytes from byte {offset}, found {found}")]
    TruncatedData {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("kernel sides must be odd, got {width}x{height}")]
    EvenKernel { width: usize, height: usize },
    #[error("gaussian sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("gaussian radius must be at least 1")]
    InvalidRadius,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Dense row-major grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image, rejecting empty dimensions, length mismatches and
    /// intensities outside `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImageError::Invalid(format!(
                "intensity {} at index {pos} outside [0,1]",
                data[pos]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image after clamping every sample to `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        assert_eq!(data.len(), width * height, "sample count");
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_clamped(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
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

    /// Sample with replicate-border addressing.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Intensities rescaled to the 8-bit range `[0, 255]`, unquantized.
    pub fn scaled_255(&self) -> Plane {
        Plane::new(
            self.width,
            self.height,
            self.data.iter().map(|v| v * 255.0).collect(),
        )
    }

    pub fn to_plane(&self) -> Plane {
        Plane::new(self.width, self.height, self.data.clone())
    }

    /// Copies the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, ImageError> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(ImageError::DimensionMismatch(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.dims() == other.dims()
    }

    /// Largest absolute per-pixel difference. Panics on mismatched dimensions.
    pub fn max_abs_diff(&self, other: &GrayImage) -> f64 {
        assert!(self.same_dims(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// The image exactly as it reads back after an 8-bit PGM round trip.
    pub fn quantized(&self) -> GrayImage {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| pgm::quantize(v) as f64 / 255.0)
                .collect(),
        }
    }
}

/// Unconstrained real-valued grid. Filters, pyramid levels and gradients
/// produce planes, since their values may leave `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane sample count");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        assert_eq!(self.dims(), other.dims(), "plane dimensions");
        Plane::new(
            self.width,
            self.height,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn into_image(self) -> GrayImage {
        GrayImage::from_clamped(self.width, self.height, self.data)
    }
}

impl From<&GrayImage> for Plane {
    fn from(img: &GrayImage) -> Self {
        img.to_plane()
    }
}

/// Fusion task family of a source pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    MultiExposure,
    InfraredVisible,
    MultiFocus,
    Medical,
    Cvs,
    Unknown,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::MultiExposure,
        TaskKind::InfraredVisible,
        TaskKind::MultiFocus,
        TaskKind::Medical,
        TaskKind::Cvs,
        TaskKind::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::MultiExposure => "MultiExposure",
            TaskKind::InfraredVisible => "InfraredVisible",
            TaskKind::MultiFocus => "MultiFocus",
            TaskKind::Medical => "Medical",
            TaskKind::Cvs => "CVS",
            TaskKind::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multiexposure" | "me" => Ok(TaskKind::MultiExposure),
            "infraredvisible" | "ir" | "v" => Ok(TaskKind::InfraredVisible),
            "multifocus" | "mf" => Ok(TaskKind::MultiFocus),
            "medical" | "m" => Ok(TaskKind::Medical),
            "cvs" => Ok(TaskKind::Cvs),
            "unknown" | "" => Ok(TaskKind::Unknown),
            other => Err(format!("unknown task tag '{other}'")),
        }
    }
}

/// Two registered source images plus an optional ground-truth reference.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub id: String,
    pub a: GrayImage,
    pub b: GrayImage,
    pub task: TaskKind,
    pub reference: Option<GrayImage>,
}

impl ImagePair {
    pub fn new(
        id: impl Into<String>,
        a: GrayImage,
        b: GrayImage,
        task: TaskKind,
    ) -> Result<Self, ImageError> {
        let id = id.into();
        if !a.same_dims(&b) {
            return Err(ImageError::DimensionMismatch(format!(
                "pair '{id}': {}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            )));
        }
        Ok(Self {
            id,
            a,
            b,
            task,
            reference: None,
        })
    }

    pub fn with_reference(mut self, reference: GrayImage) -> Result<Self, ImageError> {
        if !reference.same_dims(&self.a) {
            return Err(ImageError::DimensionMismatch(format!(
                "pair '{}': reference is {}x{}, sources are {}x{}",
                self.id,
                reference.width(),
                reference.height(),
                self.a.width(),
                self.a.height()
            )));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.a.dims()
    }
}

/// 256-bin histogram of `round(i * 255)`.
pub fn histogram256(img: &GrayImage) -> [u64; 256] {
    let mut bins = [0u64; 256];
    for &v in img.data() {
        bins[quantize(v) as usize] += 1;
    }
    bins
}

/// Reduces an RGB triple to luminance.
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.5]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn histogram_constant() {
        let img = GrayImage::constant(5, 2, 0.0);
        let h = histogram256(&img);
        assert_eq!(h[0], 10);
        assert_eq!(h.iter().sum::<u64>(), 10);
    }

    #[test]
    fn histogram_endpoints() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let h = histogram256(&img);
        assert_eq!(h[0], 1);
        assert_eq!(h[255], 1);
        assert_eq!(h.iter().sum::<u64>(), 2);
    }

    #[test]
    fn histogram_every_level_once() {
        let img = GrayImage::from_fn(16, 16, |x, y| (y * 16 + x) as f64 / 255.0);
        assert!(histogram256(&img).iter().all(|&c| c == 1));
    }

    #[test]
    fn pair_requires_matching_dims() {
        let a = GrayImage::constant(4, 4, 0.1);
        let b = GrayImage::constant(4, 5, 0.1);
        assert!(matches!(
            ImagePair::new("p", a, b, TaskKind::Unknown),
            Err(ImageError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn crop_window() {
        let img = GrayImage::from_fn(4, 4, |x, y| (x + 4 * y) as f64 / 15.0);
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(
            c.data(),
            &[9.0 / 15.0, 10.0 / 15.0, 13.0 / 15.0, 14.0 / 15.0]
        );
        assert!(img.crop(3, 3, 2, 2).is_err());
    }

    #[test]
    fn luminance_weights_sum_to_one() {
        assert!((luminance(1.0, 1.0, 1.0) - 1.0).abs() < 1e-12);
    }
}
