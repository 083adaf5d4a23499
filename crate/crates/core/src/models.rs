//! The three concrete networks: the curve-coefficient predictor, the frozen
//! task discriminator and the fixed perceptual feature extractor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::curve::CurveCoefficients;
use crate::error::{Error, Result};
use crate::image::UnitImage;
use crate::nn::{Conv3x3, Dense, Layer, LayerKind, Network, Scalar, Tensor, Trace};
use crate::rng;

/// Spatial grid the adaptive pool reduces feature maps to before the dense head.
pub const POOL_GRID: usize = 4;

/// Seed of the perceptual extractor when none is given.
pub const PERCEPTUAL_SEED: u64 = 0x5eed_0f_f1;

/// Which of the three networks a weight set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Gdce,
    Discriminator,
    Perceptual,
}

impl ModelRole {
    pub fn name(self) -> &'static str {
        match self {
            ModelRole::Gdce => "gdce",
            ModelRole::Discriminator => "discriminator",
            ModelRole::Perceptual => "perceptual",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Gdce, Self::Discriminator, Self::Perceptual].into_iter().find(|r| r.name() == name)
    }
}

/// Conv + leaky rectifier blocks, each followed by a 2x2 average pool while
/// the map stays at least twice the pool grid.
fn conv_blocks<T: Scalar, R: rand::Rng>(rng: &mut R, channels: &[usize], mut size: usize) -> (Vec<Layer<T>>, usize) {
    let mut layers = Vec::new();
    for pair in channels.windows(2) {
        layers.push(Layer::Conv3x3(Conv3x3::init(rng, pair[0], pair[1])));
        layers.push(Layer::LeakyRelu);
        if size / 2 >= POOL_GRID {
            layers.push(Layer::AvgPool2x2);
            size /= 2;
        }
    }
    (layers, size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GdceConfig {
    /// Number of conv + pool blocks.
    pub layers: usize,
    pub conv_channels: usize,
    /// Curve iterations N.
    pub iterations: usize,
    pub hidden: [usize; 2],
    /// Side of the square input.
    pub image_size: usize,
}

impl Default for GdceConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            conv_channels: 16,
            iterations: crate::curve::DEFAULT_ITERATIONS,
            hidden: [128, 64],
            image_size: 64,
        }
    }
}

impl GdceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidConfig("gdce needs at least one conv layer".into()));
        }
        if self.iterations == 0 {
            return Err(Error::EmptyCurve);
        }
        if self.conv_channels == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.image_size < POOL_GRID {
            return Err(Error::InvalidConfig(format!(
                "image size {} is below the {POOL_GRID}x{POOL_GRID} pooling grid",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Curve-coefficient predictor: conv features, adaptive pool, three dense
/// layers and a tanh head producing one coefficient per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Gdce<T: Scalar = f32> {
    net: Network<T>,
    iterations: usize,
}

impl<T: Scalar> Gdce<T> {
    pub fn new(config: &GdceConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[1]);
        let mut channels = vec![1];
        channels.extend(core::iter::repeat(config.conv_channels).take(config.layers));
        let (mut layers, _) = conv_blocks(&mut rng, &channels, config.image_size);
        layers.push(Layer::AdaptiveAvgPool { grid: POOL_GRID });
        let mut width = config.conv_channels * POOL_GRID * POOL_GRID;
        for &h in &config.hidden {
            layers.push(Layer::Dense(Dense::init(&mut rng, width, h)));
            layers.push(Layer::LeakyRelu);
            width = h;
        }
        layers.push(Layer::Dense(Dense::init(&mut rng, width, config.iterations)));
        layers.push(Layer::Tanh);
        let net = Network::new(layers, (1, config.image_size, config.image_size))?;
        Ok(Self { net, iterations: config.iterations })
    }

    /// Wrap a loaded network, checking that it ends in a tanh head over single-channel input.
    pub fn from_network(net: Network<T>) -> Result<Self> {
        let kinds = net.descriptor();
        let n = match kinds.as_slice() {
            [.., LayerKind::Dense { outputs, .. }, LayerKind::Tanh] => *outputs,
            _ => return Err(Error::Shape("gdce network must end in dense + tanh".into())),
        };
        if net.input_shape().0 != 1 {
            return Err(Error::Shape("gdce takes single-channel input".into()));
        }
        Ok(Self { net, iterations: n })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn into_network(self) -> Network<T> {
        self.net
    }

    /// Zero the last dense layer so every prediction is the identity curve.
    pub fn zero_head(&mut self) {
        if let Some(Layer::Dense(d)) = self.net.layers_mut().iter_mut().rev().find(|l| matches!(l, Layer::Dense(_))) {
            d.weight.iter_mut().for_each(|w| *w = T::zero());
            d.bias.iter_mut().for_each(|b| *b = T::zero());
        }
    }

    fn split(&self, alphas: &Tensor<T>) -> Result<Vec<CurveCoefficients<T>>> {
        (0..alphas.batch()).map(|i| CurveCoefficients::new(alphas.item(i).to_vec())).collect()
    }

    /// One coefficient vector per batch item, each component in (-1, 1).
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<CurveCoefficients<T>>> {
        self.split(&self.net.infer(x)?)
    }

    /// Apply each item's predicted curve to the item itself.
    pub fn enhance_batch(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<CurveCoefficients<T>>)> {
        let coeffs = self.predict(x)?;
        Ok((apply_batch(x, &coeffs), coeffs))
    }

    /// Traced forward pass for training: the network trace, the coefficients
    /// and the enhanced batch.
    pub fn trace(&self, x: &Tensor<T>) -> Result<(Trace<T>, Vec<CurveCoefficients<T>>, Tensor<T>)> {
        let trace = self.net.trace(x)?;
        let coeffs = self.split(trace.output())?;
        let y = apply_batch(x, &coeffs);
        Ok((trace, coeffs, y))
    }
}

impl Gdce<f32> {
    /// Enhance one image, returning the coefficients that were applied.
    pub fn enhance(&self, img: &UnitImage) -> Result<(UnitImage, CurveCoefficients<f32>)> {
        let x = Tensor::from_planes([img.as_plane()])?;
        let coeffs = self.predict(&x)?.pop().ok_or(Error::Empty)?;
        Ok((coeffs.apply(img), coeffs))
    }
}

/// Apply per-item curves to a `(n, 1, h, w)` batch.
pub fn apply_batch<T: Scalar>(x: &Tensor<T>, coeffs: &[CurveCoefficients<T>]) -> Tensor<T> {
    let mut y = x.clone();
    for (i, c) in coeffs.iter().enumerate() {
        c.apply_in_place(y.item_mut(i));
    }
    y
}

/// Task classifier used as the frozen domain discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T: Scalar = f32> {
    net: Network<T>,
    classes: usize,
    frozen: bool,
}

impl<T: Scalar> Discriminator<T> {
    /// Conv blocks of 16, 32, 64 and 64 channels, adaptive pool and a dense head.
    pub fn new(classes: usize, image_size: usize, seed: u64) -> Result<Self> {
        Self::with_channels(classes, image_size, &[16, 32, 64, 64], seed)
    }

    pub fn with_channels(classes: usize, image_size: usize, widths: &[usize], seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::SingleClass);
        }
        if widths.is_empty() || image_size < POOL_GRID {
            return Err(Error::InvalidConfig("discriminator needs conv blocks and an input of at least 4x4".into()));
        }
        let mut rng = rng::stream(seed, &[2]);
        let mut channels = vec![1];
        channels.extend_from_slice(widths);
        let (mut layers, _) = conv_blocks(&mut rng, &channels, image_size);
        let last = *widths.last().expect("non-empty");
        layers.push(Layer::AdaptiveAvgPool { grid: POOL_GRID });
        layers.push(Layer::Dense(Dense::init(&mut rng, last * POOL_GRID * POOL_GRID, classes)));
        let net = Network::new(layers, (1, image_size, image_size))?;
        Ok(Self { net, classes, frozen: false })
    }

    pub fn from_network(net: Network<T>, frozen: bool) -> Result<Self> {
        let classes = match net.descriptor().last() {
            Some(LayerKind::Dense { outputs, .. }) => *outputs,
            _ => return Err(Error::Shape("discriminator must end in a dense layer".into())),
        };
        if classes < 2 {
            return Err(Error::SingleClass);
        }
        Ok(Self { net, classes, frozen })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Fails unless the model is frozen.
    pub fn require_frozen(&self) -> Result<()> {
        if self.frozen {
            Ok(())
        } else {
            Err(Error::NotFrozen)
        }
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    /// Mutable access for training; refused once frozen.
    pub fn network_mut(&mut self) -> Result<&mut Network<T>> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.net)
    }

    pub fn into_network(self) -> Network<T> {
        self.net
    }

    /// `(n, classes, 1, 1)` logits.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.infer(x)
    }

    /// Class probabilities per item, in f64.
    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let logits = self.logits(x)?;
        Ok((0..logits.batch())
            .map(|i| crate::nn::softmax(logits.item(i)).into_iter().map(Scalar::as_f64).collect())
            .collect())
    }

    pub fn checksum(&self) -> u64 {
        self.net.checksum()
    }
}

/// Fixed random conv stack standing in for a pretrained feature network.
/// Features are read after the `tap`-th conv + leaky rectifier pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualExtractor<T: Scalar = f32> {
    net: Network<T>,
    tap: usize,
}

impl<T: Scalar> PerceptualExtractor<T> {
    pub const DEPTH: usize = 4;
    pub const CHANNELS: usize = 8;

    pub fn new(tap: usize, image_size: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, &[3]);
        let layers = (0..Self::DEPTH)
            .flat_map(|i| {
                let cin = if i == 0 { 1 } else { Self::CHANNELS };
                [Layer::Conv3x3(Conv3x3::init(&mut rng, cin, Self::CHANNELS)), Layer::LeakyRelu]
            })
            .collect();
        let net = Network::new(layers, (1, image_size, image_size))?;
        Self::from_network(net, tap)
    }

    pub fn from_network(net: Network<T>, tap: usize) -> Result<Self> {
        let depth = net.descriptor().iter().filter(|k| matches!(k, LayerKind::Conv3x3 { .. })).count();
        if tap == 0 || tap > depth {
            return Err(Error::TapIndex { tap, depth });
        }
        Ok(Self { net, tap })
    }

    pub fn tap(&self) -> usize {
        self.tap
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    /// Number of layers evaluated to reach the tap.
    fn prefix(&self) -> usize {
        let mut convs = 0;
        for (i, k) in self.net.descriptor().iter().enumerate() {
            if matches!(k, LayerKind::Conv3x3 { .. }) {
                convs += 1;
                if convs > self.tap {
                    return i;
                }
            }
        }
        self.net.layers().len()
    }

    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.infer_prefix(x, self.prefix())
    }

    pub fn trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        self.net.trace_prefix(x, self.prefix())
    }

    /// Input gradient for a gradient on the tapped features. Never touches parameters.
    pub fn backward(&self, trace: &Trace<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.backward_trace(trace, grad, None)
    }

    pub fn checksum(&self) -> u64 {
        self.net.checksum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_batch(n: usize, size: usize, seed: u64) -> Tensor<f32> {
        let mut rng = rng::stream(seed, &[]);
        Tensor::new([n, 1, size, size], (0..n * size * size).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    fn small() -> GdceConfig {
        GdceConfig { image_size: 16, layers: 2, conv_channels: 4, hidden: [8, 8], ..GdceConfig::default() }
    }

    #[test]
    fn coefficients_lie_in_open_interval() {
        let g = Gdce::<f32>::new(&small(), 3).unwrap();
        for c in g.predict(&random_batch(5, 16, 1)).unwrap() {
            assert_eq!(c.len(), 8);
            assert!(c.alphas().iter().all(|a| a.abs() < 1.0));
        }
    }

    #[test]
    fn zero_head_is_identity() {
        let mut g = Gdce::<f32>::new(&small(), 3).unwrap();
        g.zero_head();
        let x = random_batch(2, 16, 2);
        let (y, c) = g.enhance_batch(&x).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(c.iter().all(|c| c.alphas().iter().all(|&a| a == 0.0)));
    }

    #[test]
    fn identical_items_get_identical_coefficients() {
        let g = Gdce::<f32>::new(&small(), 4).unwrap();
        let one = random_batch(1, 16, 7);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let c = g.predict(&Tensor::new([2, 1, 16, 16], data).unwrap()).unwrap();
        assert_eq!(c[0], c[1]);
    }

    #[test]
    fn deep_config_skips_pooling_below_grid() {
        let cfg = GdceConfig { layers: 12, ..GdceConfig::default() };
        let g = Gdce::<f32>::new(&cfg, 0).unwrap();
        let pools = g.network().descriptor().iter().filter(|k| **k == LayerKind::AvgPool2x2).count();
        assert_eq!(pools, 4);
    }

    #[test]
    fn frozen_discriminator_refuses_mutation() {
        let mut d = Discriminator::<f32>::new(4, 16, 1).unwrap();
        assert_eq!(d.require_frozen().unwrap_err(), Error::NotFrozen);
        assert!(d.network_mut().is_ok());
        d.freeze();
        assert_eq!(d.network_mut().unwrap_err(), Error::Frozen);
    }

    #[test]
    fn probabilities_are_finite_and_sum_to_one() {
        let d = Discriminator::<f32>::new(4, 16, 1).unwrap();
        let p = d.probabilities(&Tensor::zeros([1, 1, 16, 16])).unwrap();
        assert!(p[0].iter().all(|v| v.is_finite()));
        assert!((p[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn perceptual_tap_bounds() {
        assert!(PerceptualExtractor::<f32>::new(4, 8, 1).is_ok());
        assert_eq!(PerceptualExtractor::<f32>::new(5, 8, 1).unwrap_err(), Error::TapIndex { tap: 5, depth: 4 });
        assert!(PerceptualExtractor::<f32>::new(0, 8, 1).is_err());
    }

    #[test]
    fn perceptual_features_are_deterministic_and_shift_sensitive() {
        let v = PerceptualExtractor::<f32>::new(2, 16, PERCEPTUAL_SEED).unwrap();
        let x = random_batch(1, 16, 9);
        let a = v.features(&x).unwrap();
        assert_eq!(a, v.features(&x).unwrap());
        assert_eq!(a.shape(), [1, 8, 16, 16]);
        let mut shifted = x.clone();
        shifted.data_mut().iter_mut().for_each(|p| *p = p.sqrt());
        let b = v.features(&shifted).unwrap();
        let l1: f32 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum();
        assert!(l1 > 0.0);
    }
}
