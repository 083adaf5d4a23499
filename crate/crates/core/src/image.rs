//! Rasters and the intensity normalizations compared against tone-curve
//! correction: per-image full range, bit-depth range, display window and z-score.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Display window in raw counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub center: f64,
    pub width: f64,
}

impl Window {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !center.is_finite() || !width.is_finite() {
            return Err(Error::WindowWidth(width));
        }
        Ok(Self { center, width })
    }

    /// Lower and upper bounds of the linear ramp.
    pub fn bounds(&self) -> (f64, f64) {
        (self.center - self.width / 2.0, self.center + self.width / 2.0)
    }
}

/// Single-channel integer raster as produced by a scanner.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    width: usize,
    height: usize,
    bit_depth: u8,
    pixels: Vec<u16>,
    pub window: Option<Window>,
    pub scanner_id: String,
    pub label: Option<usize>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, bit_depth: u8, pixels: Vec<u16>) -> Result<Self> {
        if !(8..=16).contains(&bit_depth) {
            return Err(Error::BitDepth(bit_depth));
        }
        if width * height != pixels.len() || pixels.is_empty() {
            return Err(Error::Dimensions { width, height, len: pixels.len() });
        }
        let max = max_count(bit_depth);
        if let Some(&value) = pixels.iter().find(|&&p| u32::from(p) > max) {
            return Err(Error::PixelExceedsBitDepth { value: u32::from(value), bit_depth });
        }
        Ok(Self { width, height, bit_depth, pixels, window: None, scanner_id: String::new(), label: None })
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = Some(window);
        self
    }

    pub fn with_scanner(mut self, scanner_id: impl Into<String>) -> Self {
        self.scanner_id = scanner_id.into();
        self
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    /// Per-image min-max stretch. Constant images map to zeros.
    pub fn normalize_full_range(&self) -> UnitImage {
        let (lo, hi) = self.pixels.iter().fold((u16::MAX, 0u16), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let span = f64::from(hi - lo);
        let values =
            self.pixels.iter().map(|&p| if span == 0.0 { 0.0 } else { (f64::from(p - lo) / span) as f32 }).collect();
        UnitImage { plane: Plane { width: self.width, height: self.height, data: values } }
    }

    /// Division by the largest representable count, `2^bit_depth - 1`.
    pub fn normalize_bit_depth(&self) -> UnitImage {
        let max = f64::from(max_count(self.bit_depth));
        let values = self.pixels.iter().map(|&p| (f64::from(p) / max) as f32).collect();
        UnitImage { plane: Plane { width: self.width, height: self.height, data: values } }
    }

    /// Linear ramp between `center - width/2` and `center + width/2`, clamped to [0, 1].
    pub fn normalize_window(&self) -> Result<UnitImage> {
        let window = self.window.ok_or(Error::MissingWindow)?;
        let (lo, hi) = window.bounds();
        let values = self.pixels.iter().map(|&p| ((f64::from(p) - lo) / (hi - lo)).clamp(0.0, 1.0) as f32).collect();
        Ok(UnitImage { plane: Plane { width: self.width, height: self.height, data: values } })
    }

    /// `(p - mean) / std` with the population standard deviation.
    pub fn normalize_zscore(&self) -> Result<ZImage> {
        let raw: Vec<f64> = self.pixels.iter().map(|&p| f64::from(p)).collect();
        Ok(ZImage { width: self.width, height: self.height, values: zscore(&raw)? })
    }
}

/// Intensity normalization applied before any model sees an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Per-image min-max stretch.
    #[default]
    FullRange,
    /// Division by `2^bit_depth - 1`.
    BitDepth,
    /// Display-window clamp; needs window metadata.
    Window,
    /// Zero mean, unit variance (unbounded output).
    ZScore,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::FullRange => "full-range",
            Normalization::BitDepth => "bitdepth",
            Normalization::Window => "window",
            Normalization::ZScore => "zscore",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::FullRange, Self::BitDepth, Self::Window, Self::ZScore].into_iter().find(|n| n.name() == name)
    }

    /// Whether outputs are guaranteed to lie in [0, 1].
    pub fn is_unit_range(self) -> bool {
        !matches!(self, Normalization::ZScore)
    }

    pub fn apply(self, img: &RawImage) -> Result<Plane> {
        Ok(match self {
            Normalization::FullRange => img.normalize_full_range().into_plane(),
            Normalization::BitDepth => img.normalize_bit_depth().into_plane(),
            Normalization::Window => img.normalize_window()?.into_plane(),
            Normalization::ZScore => img.normalize_zscore()?.to_plane(),
        })
    }
}

pub fn max_count(bit_depth: u8) -> u32 {
    (1u32 << bit_depth) - 1
}

/// Standardize a buffer to zero mean and unit population variance.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Unbounded real-valued image produced by z-score normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ZImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ZImage {
    pub fn to_plane(&self) -> Plane {
        Plane { width: self.width, height: self.height, data: self.values.iter().map(|&v| v as f32).collect() }
    }
}

/// Row-major single-channel f32 raster with no range constraint; the common
/// input type for the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width * height != data.len() || data.is_empty() {
            return Err(Error::Dimensions { width, height, len: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self { width, height, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Image with every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct UnitImage {
    plane: Plane,
}

impl UnitImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        Self::try_from(Plane::new(width, height, values)?)
    }

    pub fn width(&self) -> usize {
        self.plane.width
    }

    pub fn height(&self) -> usize {
        self.plane.height
    }

    pub fn values(&self) -> &[f32] {
        &self.plane.data
    }

    pub fn as_plane(&self) -> &Plane {
        &self.plane
    }

    pub fn into_plane(self) -> Plane {
        self.plane
    }

    /// Quantize to integer counts at the given bit depth (round to nearest).
    pub fn quantize(&self, bit_depth: u8) -> Result<RawImage> {
        if !(8..=16).contains(&bit_depth) {
            return Err(Error::BitDepth(bit_depth));
        }
        let max = f64::from(max_count(bit_depth));
        let pixels = self.values().iter().map(|&v| libm::round(f64::from(v) * max) as u16).collect();
        RawImage::new(self.width(), self.height(), bit_depth, pixels)
    }
}

impl TryFrom<Plane> for UnitImage {
    type Error = Error;

    fn try_from(plane: Plane) -> Result<Self> {
        if let Some(&v) = plane.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfUnitRange(f64::from(v)));
        }
        Ok(Self { plane })
    }
}
