//! Synthetic label-separable grayscale images and parameterized acquisition
//! shifts.
//!
//! Each class is a field of Gaussian elliptical blobs with its own count and
//! scale. Every image is then histogram-matched onto one shared intensity
//! template, so all images carry exactly the same histogram and the label is
//! only readable from spatial structure.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{max_count, RawImage, UnitImage};
use crate::rng;

pub const REFERENCE_SCANNER: &str = "reference";
pub const SHIFTED_SCANNER: &str = "shifted";

/// Number of cross-validation folds assigned at generation time.
pub const FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    /// Blobs per image, one entry per class.
    pub blob_counts: Vec<usize>,
    /// Blob scale in pixels at 64x64, one entry per class.
    pub blob_sigmas: Vec<f64>,
    /// Std of the additive noise before histogram matching (breaks ties).
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 100,
            image_size: 64,
            blob_counts: vec![32, 12, 5, 2],
            blob_sigmas: vec![1.5, 2.5, 4.0, 7.0],
            noise: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.classes < 2 {
            return Err(Error::SingleClass);
        }
        if self.per_class == 0 {
            return bad("zero images per class".into());
        }
        if self.image_size < 4 {
            return bad(format!("image size {} is too small", self.image_size));
        }
        if self.blob_counts.len() != self.classes || self.blob_sigmas.len() != self.classes {
            return bad(format!(
                "{} classes but {} blob counts and {} sigmas",
                self.classes,
                self.blob_counts.len(),
                self.blob_sigmas.len()
            ));
        }
        if self.blob_counts.contains(&0) || self.blob_sigmas.iter().any(|s| !(*s > 0.0)) {
            return bad("blob counts and sigmas must be positive".into());
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        Ok(())
    }
}

/// Class names "A", "B", ...
pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| {
            let mut s = String::new();
            let mut c = c;
            loop {
                s.insert(0, char::from(b'A' + (c % 26) as u8));
                if c < 26 {
                    break;
                }
                c = c / 26 - 1;
            }
            s
        })
        .collect()
}

/// Intensity template shared by every image: `(i / (P - 1))^1.5`.
fn template(pixels: usize) -> Vec<f32> {
    let denom = (pixels.max(2) - 1) as f64;
    (0..pixels).map(|i| libm::pow(i as f64 / denom, 1.5) as f32).collect()
}

fn render(spec: &SynthSpec, label: usize, rng: &mut impl Rng, template: &[f32]) -> UnitImage {
    let s = spec.image_size;
    let scale = s as f64 / 64.0;
    let mut field = vec![0.0f64; s * s];
    for _ in 0..spec.blob_counts[label] {
        let cx = rng.gen_range(0.0..s as f64);
        let cy = rng.gen_range(0.0..s as f64);
        let theta = rng.gen_range(0.0..core::f64::consts::PI);
        let sa = spec.blob_sigmas[label] * scale * rng.gen_range(0.8..1.2);
        let sb = sa * rng.gen_range(0.6..1.0);
        let (sin, cos) = libm::sincos(theta);
        let reach = 4.0 * sa;
        let x0 = libm::floor(cx - reach).max(0.0) as usize;
        let x1 = (libm::ceil(cx + reach) as usize).min(s - 1);
        let y0 = libm::floor(cy - reach).max(0.0) as usize;
        let y1 = (libm::ceil(cy + reach) as usize).min(s - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                field[y * s + x] += libm::exp(-0.5 * (u * u / (sa * sa) + v * v / (sb * sb)));
            }
        }
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("validated");
        field.iter_mut().for_each(|f| *f += normal.sample(rng));
    }
    // Rank-based histogram specification onto the template.
    let mut order: Vec<usize> = (0..field.len()).collect();
    order.sort_by(|&a, &b| field[a].total_cmp(&field[b]));
    let mut values = vec![0.0f32; field.len()];
    for (rank, &i) in order.iter().enumerate() {
        values[i] = template[rank];
    }
    UnitImage::new(s, s, values).expect("template lies in [0, 1]")
}

/// One generated image with its class and fold.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: UnitImage,
    pub label: usize,
    pub fold: usize,
}

/// Generate `per_class` images of every class for one domain. Different
/// domain tags give disjoint draws of the same class structure.
pub fn generate(spec: &SynthSpec, domain: u64) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let template = template(spec.image_size * spec.image_size);
    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    for label in 0..spec.classes {
        for i in 0..spec.per_class {
            let mut rng = rng::stream(spec.seed, &[domain, label as u64, i as u64]);
            out.push(SynthSample { image: render(spec, label, &mut rng, &template), label, fold: i % FOLDS });
        }
    }
    let spread = class_mean_spread(&out, spec.classes);
    if spread > 0.02 {
        return Err(Error::InvalidConfig(format!("class means differ by {:.1}%", spread * 100.0)));
    }
    Ok(out)
}

/// Reference-domain dataset.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    generate(spec, 0)
}

/// Relative spread `(max - min) / max` of per-class mean intensities.
pub fn class_mean_spread(samples: &[SynthSample], classes: usize) -> f64 {
    let mut sums = vec![(0.0f64, 0usize); classes];
    for s in samples {
        let v = s.image.values();
        sums[s.label].0 += v.iter().map(|&p| f64::from(p)).sum::<f64>() / v.len() as f64;
        sums[s.label].1 += 1;
    }
    let means: Vec<f64> = sums.iter().filter(|(_, n)| *n > 0).map(|(s, n)| s / *n as f64).collect();
    let hi = means.iter().copied().fold(f64::MIN, f64::max);
    let lo = means.iter().copied().fold(f64::MAX, f64::min);
    if hi > 0.0 {
        (hi - lo) / hi
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ShiftProfile {
    pub gamma: f64,
    /// Slope of the normalized logistic sensor response; 0 is linear.
    pub sigmoid_gain: f64,
    pub sigmoid_center: f64,
    /// Offset added after the power law, as a fraction of the range.
    pub window_shift: f64,
    pub out_bit_depth: u8,
    /// Std of additive Gaussian noise (0 keeps the shift monotone).
    pub noise: f64,
    pub seed: u64,
}

impl Default for ShiftProfile {
    fn default() -> Self {
        Self::identity()
    }
}

impl ShiftProfile {
    pub fn identity() -> Self {
        Self {
            gamma: 1.0,
            sigmoid_gain: 0.0,
            sigmoid_center: 0.5,
            window_shift: 0.0,
            out_bit_depth: 16,
            noise: 0.0,
            seed: 0,
        }
    }

    /// Gamma 0.5 over a gain-6 logistic, stored at 12 bits.
    pub fn gamma_sigmoid() -> Self {
        Self { gamma: 0.5, sigmoid_gain: 6.0, out_bit_depth: 12, ..Self::identity() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidProfile(m.into()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.sigmoid_gain >= 0.0 && self.sigmoid_gain.is_finite()) {
            return bad("sigmoid gain must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.sigmoid_center) {
            return bad("sigmoid center must lie in [0, 1]");
        }
        if !(-1.0..=1.0).contains(&self.window_shift) {
            return bad("window shift must lie in [-1, 1]");
        }
        if !(8..=16).contains(&self.out_bit_depth) {
            return bad("output bit depth must lie in 8..=16");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative");
        }
        Ok(())
    }

    fn logistic(&self, x: f64) -> f64 {
        let g = self.sigmoid_gain;
        if g < 1e-9 {
            return x;
        }
        let s = |z: f64| 1.0 / (1.0 + libm::exp(-z));
        let c = self.sigmoid_center;
        let lo = s(-g * c);
        let hi = s(g * (1.0 - c));
        (s(g * (x - c)) - lo) / (hi - lo)
    }

    /// Noise-free pixel map before quantization.
    pub fn map(&self, x: f64) -> f64 {
        let y = libm::pow(self.logistic(x).clamp(0.0, 1.0), self.gamma);
        (y + self.window_shift).clamp(0.0, 1.0)
    }
}

/// Push a unit image through a simulated acquisition pipeline.
pub fn apply_shift(img: &UnitImage, profile: &ShiftProfile) -> Result<RawImage> {
    profile.validate()?;
    let max = f64::from(max_count(profile.out_bit_depth));
    let mut values: Vec<f64> = img.values().iter().map(|&v| profile.map(f64::from(v))).collect();
    if profile.noise > 0.0 {
        // Seeded by the image content so equal profiles replay exactly.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in img.values() {
            h = (h ^ u64::from(v.to_bits())).wrapping_mul(0x0100_0000_01b3);
        }
        let mut rng = rng::stream(profile.seed, &[h]);
        let normal = Normal::new(0.0, profile.noise).map_err(|e| Error::InvalidProfile(format!("{e}")))?;
        values.iter_mut().for_each(|v| *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0));
    }
    let pixels = values.iter().map(|v| libm::round(v * max) as u16).collect();
    RawImage::new(img.width(), img.height(), profile.out_bit_depth, pixels)
}

/// Raw image plus its fold.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSample {
    pub image: RawImage,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub reference: Vec<DomainSample>,
    pub shifted: Vec<DomainSample>,
}

/// Reference images stored losslessly at 16 bits, plus an unpaired draw
/// pushed through `profile`.
pub fn make_domain_pair(spec: &SynthSpec, profile: &ShiftProfile) -> Result<DomainPair> {
    profile.validate()?;
    let reference = to_domain(generate(spec, 0)?, REFERENCE_SCANNER, |img| img.quantize(16))?;
    let shifted = to_domain(generate(spec, 1)?, SHIFTED_SCANNER, |img| apply_shift(img, profile))?;
    Ok(DomainPair { reference, shifted })
}

pub fn to_domain(
    samples: Vec<SynthSample>,
    scanner: &str,
    mut acquire: impl FnMut(&UnitImage) -> Result<RawImage>,
) -> Result<Vec<DomainSample>> {
    samples
        .into_iter()
        .map(|s| Ok(DomainSample { image: acquire(&s.image)?.with_scanner(scanner).with_label(s.label), fold: s.fold }))
        .collect()
}

/// Keep samples whose label is not in `drop`.
pub fn drop_classes(samples: Vec<DomainSample>, drop: &[usize]) -> Vec<DomainSample> {
    samples.into_iter().filter(|s| !s.image.label.is_some_and(|l| drop.contains(&l))).collect()
}

/// Accuracy of a classifier that only sees each image's global mean: nearest
/// per-class centroid of the training means, ties to the lowest class.
pub fn global_mean_baseline(train: &[(f64, usize)], test: &[(f64, usize)], classes: usize) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty);
    }
    let mut sums = vec![(0.0, 0usize); classes];
    for &(m, l) in train {
        let e = sums.get_mut(l).ok_or(Error::LabelOutOfRange { label: l, classes })?;
        e.0 += m;
        e.1 += 1;
    }
    let centroids: Vec<Option<f64>> = sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect();
    let mut correct = 0;
    for &(m, l) in test {
        let mut best = (f64::INFINITY, 0);
        for (c, centroid) in centroids.iter().enumerate() {
            if let Some(v) = centroid {
                let d = libm::fabs(m - v);
                if d < best.0 {
                    best = (d, c);
                }
            }
        }
        correct += usize::from(best.1 == l);
    }
    Ok(correct as f64 / test.len() as f64)
}
