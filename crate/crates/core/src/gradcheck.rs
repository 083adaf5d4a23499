//! Central finite-difference checks of every differentiable op, run in f64.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::curve::CurveCoefficients;
use crate::error::Result;
use crate::models::{Discriminator, Gdce, GdceConfig, PerceptualExtractor};
use crate::nn::{softmax_cross_entropy, Conv3x3, Dense, Layer, Network, Tensor};
use crate::rng;
use crate::train::{gdce_loss, Reduction};

/// Step for network ops.
pub const NET_STEP: f64 = 1e-4;
/// Step for the composite loss: smaller, so fewer probes straddle a kink.
pub const COMPOSITE_STEP: f64 = 1e-6;
/// Step for the curve engine.
pub const CURVE_STEP: f64 = 1e-5;
pub const NET_TOLERANCE: f64 = 1e-4;
pub const CURVE_TOLERANCE: f64 = 1e-6;

/// Gradients smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-3;

/// One-sided slope disagreement that marks a probe as straddling a kink.
const KINK: f64 = 1e-3;

/// Parameters perturbed per buffer at most; larger buffers are sampled.
const MAX_PROBES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub probes: usize,
    /// Probes dropped because the step straddled a kink.
    pub skipped: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / libm::fabs(analytic).max(libm::fabs(numeric)).max(FLOOR)
}

fn probes(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= MAX_PROBES {
        (0..len).collect()
    } else {
        (0..MAX_PROBES).map(|_| rng.gen_range(0..len)).collect()
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches")
}

/// Values bounded away from 0 so activation kinks are never crossed.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Check parameter and input gradients of `loss = <net(x), r>` for a random `r`.
fn check_network(op: &'static str, net: &Network<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng) -> Result<OpCheck> {
    let out_shape = net.infer(x)?.shape();
    let r = random_tensor(rng, out_shape, -1.0, 1.0);
    let loss = |net: &Network<f64>, x: &Tensor<f64>| -> Result<f64> {
        Ok(net.infer(x)?.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };
    let trace = net.trace(x)?;
    let mut grads = net.zero_gradients();
    let gx = net.backward_trace(&trace, &r, Some(&mut grads))?;

    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in probes(x.data().len(), rng) {
        let mut xp = x.clone();
        xp.data_mut()[i] += NET_STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= NET_STEP;
        let num = (loss(net, &xp)? - loss(net, &xm)?) / (2.0 * NET_STEP);
        worst = worst.max(rel_error(gx.data()[i], num));
        count += 1;
    }
    for b in 0..grads.buffers.len() {
        for i in probes(grads.buffers[b].len(), rng) {
            let mut np = net.clone();
            np.params_mut()[b][i] += NET_STEP;
            let mut nm = net.clone();
            nm.params_mut()[b][i] -= NET_STEP;
            let num = (loss(&np, x)? - loss(&nm, x)?) / (2.0 * NET_STEP);
            worst = worst.max(rel_error(grads.buffers[b][i], num));
            count += 1;
        }
    }
    Ok(OpCheck { op, max_rel_error: worst, tolerance: NET_TOLERANCE, probes: count, skipped: 0 })
}

fn single(layer: Layer<f64>, shape: (usize, usize, usize)) -> Result<Network<f64>> {
    Network::new(vec![layer], shape)
}

pub fn check_conv(seed: u64) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[1]);
    let mut conv = Conv3x3::init(&mut rng, 2, 3);
    conv.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    let net = single(Layer::Conv3x3(conv), (2, 5, 6))?;
    let x = random_tensor(&mut rng, [2, 2, 5, 6], -1.0, 1.0);
    check_network("conv3x3", &net, &x, &mut rng)
}

pub fn check_avgpool(seed: u64) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[2]);
    let net = single(Layer::AvgPool2x2, (2, 6, 5))?;
    let x = random_tensor(&mut rng, [2, 2, 6, 5], -1.0, 1.0);
    check_network("avgpool2x2", &net, &x, &mut rng)
}

pub fn check_adaptive_pool(seed: u64) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[3]);
    let net = single(Layer::AdaptiveAvgPool { grid: 4 }, (2, 7, 9))?;
    let x = random_tensor(&mut rng, [2, 2, 7, 9], -1.0, 1.0);
    check_network("adaptive-avgpool", &net, &x, &mut rng)
}

pub fn check_dense(seed: u64) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[4]);
    let mut d = Dense::init(&mut rng, 12, 5);
    d.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    let net = single(Layer::Dense(d), (3, 2, 2))?;
    let x = random_tensor(&mut rng, [3, 3, 2, 2], -1.0, 1.0);
    check_network("dense", &net, &x, &mut rng)
}

pub fn check_leaky_relu(seed: u64) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[5]);
    let net = single(Layer::LeakyRelu, (2, 3, 3))?;
    let x = away_from_zero(&mut rng, [2, 2, 3, 3]);
    check_network("leaky-relu", &net, &x, &mut rng)
}

pub fn check_tanh(seed: u64) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[6]);
    let net = single(Layer::Tanh, (2, 3, 3))?;
    let x = random_tensor(&mut rng, [2, 2, 3, 3], -2.0, 2.0);
    check_network("tanh", &net, &x, &mut rng)
}

pub fn check_softmax_ce(seed: u64) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[7]);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..20 {
        let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let label = rng.gen_range(0..5);
        let (_, grad) = softmax_cross_entropy(&logits, label)?;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p[i] += NET_STEP;
            let mut m = logits.clone();
            m[i] -= NET_STEP;
            let num = (softmax_cross_entropy(&p, label)?.0 - softmax_cross_entropy(&m, label)?.0) / (2.0 * NET_STEP);
            worst = worst.max(rel_error(grad[i], num));
            count += 1;
        }
    }
    Ok(OpCheck { op: "softmax-ce", max_rel_error: worst, tolerance: NET_TOLERANCE, probes: count, skipped: 0 })
}

fn random_curve(rng: &mut ChaCha8Rng) -> (CurveCoefficients<f64>, f64) {
    let n = rng.gen_range(1..=8);
    let alphas = (0..n).map(|_| rng.gen_range(-0.95..0.95)).collect();
    (CurveCoefficients::new(alphas).expect("in range"), rng.gen_range(0.01..0.99))
}

/// `dI_N/dalpha_n` against central differences over `cases` random draws.
pub fn check_curve_alpha(seed: u64, cases: usize) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[8]);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..cases {
        let (c, x) = random_curve(&mut rng);
        let g = c.grad_alpha(&[x]);
        for k in 0..c.len() {
            let shifted = |d: f64| {
                let mut a = c.alphas().to_vec();
                a[k] += d;
                a.iter().fold(x, |x, &a| x + a * x * (1.0 - x))
            };
            let num = (shifted(CURVE_STEP) - shifted(-CURVE_STEP)) / (2.0 * CURVE_STEP);
            worst = worst.max(rel_error(g[k][0], num));
            count += 1;
        }
    }
    Ok(OpCheck { op: "curve-alpha", max_rel_error: worst, tolerance: CURVE_TOLERANCE, probes: count, skipped: 0 })
}

/// `dI_N/dI_0` against central differences over `cases` random draws.
pub fn check_curve_input(seed: u64, cases: usize) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[9]);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (c, x) = random_curve(&mut rng);
        let g = c.grad_input(&[x])[0];
        let num = (c.map(x + CURVE_STEP) - c.map(x - CURVE_STEP)) / (2.0 * CURVE_STEP);
        worst = worst.max(rel_error(g, num));
    }
    Ok(OpCheck { op: "curve-input", max_rel_error: worst, tolerance: CURVE_TOLERANCE, probes: cases, skipped: 0 })
}

/// Gradient of the full composite loss with respect to enhancer parameters,
/// through the frozen discriminator, the perceptual extractor and the curve.
pub fn check_composite_loss(seed: u64) -> Result<OpCheck> {
    let mut rng = rng::stream(seed, &[10]);
    let size = 8;
    let cfg = GdceConfig { layers: 2, conv_channels: 3, iterations: 4, hidden: [6, 5], image_size: size };
    let g = Gdce::<f64>::new(&cfg, rng.gen())?;
    let mut d = Discriminator::<f64>::with_channels(3, size, &[3, 4], rng.gen())?;
    d.freeze();
    let v = PerceptualExtractor::<f64>::new(2, size, rng.gen())?;
    let x = random_tensor(&mut rng, [3, 1, size, size], 0.02, 0.98);
    let refs = random_tensor(&mut rng, [3, 1, size, size], 0.0, 1.0);
    let labels = [0, 2, 1];
    let loss =
        |g: &Gdce<f64>| -> Result<f64> { Ok(gdce_loss(g, &d, &v, &x, &labels, &refs, Reduction::Mean, None)?.total) };
    let mut grads = g.network().zero_gradients();
    gdce_loss(&g, &d, &v, &x, &labels, &refs, Reduction::Mean, Some(&mut grads))?;
    let base = loss(&g)?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut skipped = 0;
    for b in 0..grads.buffers.len() {
        for i in probes(grads.buffers[b].len(), &mut rng) {
            let mut gp = g.clone();
            gp.network_mut().params_mut()[b][i] += COMPOSITE_STEP;
            let mut gm = g.clone();
            gm.network_mut().params_mut()[b][i] -= COMPOSITE_STEP;
            let (lp, lm) = (loss(&gp)?, loss(&gm)?);
            // The L1 term and the rectifiers have kinks; a step across one
            // shows up as disagreeing one-sided slopes.
            if rel_error((lp - base) / COMPOSITE_STEP, (base - lm) / COMPOSITE_STEP) > KINK {
                skipped += 1;
                continue;
            }
            let num = (lp - lm) / (2.0 * COMPOSITE_STEP);
            worst = worst.max(rel_error(grads.buffers[b][i], num));
            count += 1;
        }
    }
    Ok(OpCheck { op: "composite-loss", max_rel_error: worst, tolerance: NET_TOLERANCE, probes: count, skipped })
}

/// Every check, network ops first, then the curve engine and the full loss.
pub fn run_all(seed: u64, curve_cases: usize) -> Result<Vec<OpCheck>> {
    Ok(vec![
        check_conv(seed)?,
        check_avgpool(seed)?,
        check_adaptive_pool(seed)?,
        check_dense(seed)?,
        check_leaky_relu(seed)?,
        check_tanh(seed)?,
        check_softmax_ce(seed)?,
        check_curve_alpha(seed, curve_cases)?,
        check_curve_input(seed, curve_cases)?,
        check_composite_loss(seed)?,
    ])
}
