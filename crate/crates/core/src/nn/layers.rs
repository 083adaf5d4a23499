use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{fan_in_uniform, Scalar, Tensor};
use crate::error::{Error, Result};

/// Negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Architecture-level description of a layer, without weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LayerKind {
    Conv3x3 { in_channels: usize, out_channels: usize },
    AvgPool2x2,
    AdaptiveAvgPool { grid: usize },
    Dense { inputs: usize, outputs: usize },
    LeakyRelu,
    Tanh,
}

impl LayerKind {
    /// Output `(channels, height, width)` for a given input, or a shape error.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match *self {
            LayerKind::Conv3x3 { in_channels, out_channels } => {
                if c != in_channels {
                    return Err(Error::Shape(format!("conv expects {in_channels} channels, got {c}")));
                }
                Ok((out_channels, h, w))
            }
            LayerKind::AvgPool2x2 => {
                if h < 2 || w < 2 {
                    return Err(Error::Shape(format!("cannot 2x2-pool a {h}x{w} map")));
                }
                Ok((c, h / 2, w / 2))
            }
            LayerKind::AdaptiveAvgPool { grid } => {
                if h < grid || w < grid || grid == 0 {
                    return Err(Error::Shape(format!("cannot pool {h}x{w} to a {grid}x{grid} grid")));
                }
                Ok((c, grid, grid))
            }
            LayerKind::Dense { inputs, outputs } => {
                if c * h * w != inputs {
                    return Err(Error::Shape(format!("dense expects {inputs} inputs, got {}", c * h * w)));
                }
                Ok((outputs, 1, 1))
            }
            LayerKind::LeakyRelu | LayerKind::Tanh => Ok((c, h, w)),
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(out, in, 3, 3)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv3x3<T> {
    pub fn init<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize) -> Self {
        let fan_in = in_channels * 9;
        Self {
            in_channels,
            out_channels,
            weight: fan_in_uniform(rng, fan_in, out_channels * fan_in),
            bias: vec![T::zero(); out_channels],
        }
    }
}

/// Fully connected layer over the flattened item.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `(outputs, inputs)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn init<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: fan_in_uniform(rng, inputs, inputs * outputs), bias: vec![T::zero(); outputs] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv3x3(Conv3x3<T>),
    AvgPool2x2,
    AdaptiveAvgPool { grid: usize },
    Dense(Dense<T>),
    LeakyRelu,
    Tanh,
}

fn im2col<T: Scalar>(input: &[T], channels: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], channels: usize, h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += *s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += *s),
                    }
                }
            }
        }
    }
}

/// Below this many inputs per output the weight gradient is cheaper as plain
/// dot products than as a gemm.
const GEMM_MIN_K: usize = 32;

/// Row-major `rows x cols` into `cols x rows`.
fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators so it vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// PyTorch-style adaptive pooling cell bounds.
fn cell(i: usize, size: usize, grid: usize) -> (usize, usize) {
    (i * size / grid, ((i + 1) * size).div_ceil(grid))
}

impl<T: Scalar> Layer<T> {
    /// Rebuild a layer from its kind and parameter buffers (weight, then bias).
    pub fn from_kind<I: Iterator<Item = Vec<T>>>(kind: LayerKind, params: &mut I) -> Result<Self> {
        let mut take = |len: usize, what: &str| -> Result<Vec<T>> {
            let buf = params.next().ok_or_else(|| Error::Shape(format!("missing {what} buffer")))?;
            if buf.len() != len {
                return Err(Error::Shape(format!("{what} holds {} values, expected {len}", buf.len())));
            }
            Ok(buf)
        };
        Ok(match kind {
            LayerKind::Conv3x3 { in_channels, out_channels } => Layer::Conv3x3(Conv3x3 {
                in_channels,
                out_channels,
                weight: take(out_channels * in_channels * 9, "conv weight")?,
                bias: take(out_channels, "conv bias")?,
            }),
            LayerKind::Dense { inputs, outputs } => Layer::Dense(Dense {
                inputs,
                outputs,
                weight: take(inputs * outputs, "dense weight")?,
                bias: take(outputs, "dense bias")?,
            }),
            LayerKind::AvgPool2x2 => Layer::AvgPool2x2,
            LayerKind::AdaptiveAvgPool { grid } => Layer::AdaptiveAvgPool { grid },
            LayerKind::LeakyRelu => Layer::LeakyRelu,
            LayerKind::Tanh => Layer::Tanh,
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv3x3(c) => LayerKind::Conv3x3 { in_channels: c.in_channels, out_channels: c.out_channels },
            Layer::AvgPool2x2 => LayerKind::AvgPool2x2,
            Layer::AdaptiveAvgPool { grid } => LayerKind::AdaptiveAvgPool { grid: *grid },
            Layer::Dense(d) => LayerKind::Dense { inputs: d.inputs, outputs: d.outputs },
            Layer::LeakyRelu => LayerKind::LeakyRelu,
            Layer::Tanh => LayerKind::Tanh,
        }
    }

    /// Parameter buffers in a fixed order (weight, then bias).
    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Conv3x3(c) => vec![&c.weight[..], &c.bias[..]],
            Layer::Dense(d) => vec![&d.weight[..], &d.bias[..]],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Conv3x3(c) => vec![&mut c.weight[..], &mut c.bias[..]],
            Layer::Dense(d) => vec![&mut d.weight[..], &mut d.bias[..]],
            _ => Vec::new(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        match self {
            Layer::Conv3x3(c) => Layer::Conv3x3(Conv3x3 {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                weight: conv(&c.weight),
                bias: conv(&c.bias),
            }),
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: conv(&d.weight),
                bias: conv(&d.bias),
            }),
            Layer::AvgPool2x2 => Layer::AvgPool2x2,
            Layer::AdaptiveAvgPool { grid } => Layer::AdaptiveAvgPool { grid: *grid },
            Layer::LeakyRelu => Layer::LeakyRelu,
            Layer::Tanh => Layer::Tanh,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        let (oc, oh, ow) = self.kind().output_shape((c, h, w))?;
        let mut out = Tensor::zeros([n, oc, oh, ow]);
        match self {
            Layer::Conv3x3(conv) => {
                let hw = h * w;
                let k = c * 9;
                let mut col = vec![T::zero(); k * hw];
                for i in 0..n {
                    im2col(x.item(i), c, h, w, &mut col);
                    let y = out.item_mut(i);
                    for (o, row) in y.chunks_mut(hw).enumerate() {
                        row.fill(conv.bias[o]);
                    }
                    T::gemm(oc, k, hw, T::one(), &conv.weight, (k, 1), &col, (hw, 1), T::one(), y, (hw, 1));
                }
            }
            Layer::AvgPool2x2 => {
                let quarter = T::of(0.25);
                for i in 0..n {
                    let src = x.item(i);
                    let dst = out.item_mut(i);
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let base = ch * h * w + 2 * y * w + 2 * xx;
                                let s = src[base] + src[base + 1] + src[base + w] + src[base + w + 1];
                                dst[ch * oh * ow + y * ow + xx] = s * quarter;
                            }
                        }
                    }
                }
            }
            Layer::AdaptiveAvgPool { grid } => {
                let g = *grid;
                for i in 0..n {
                    let src = x.item(i);
                    let dst = out.item_mut(i);
                    for ch in 0..c {
                        for gy in 0..g {
                            let (y0, y1) = cell(gy, h, g);
                            for gx in 0..g {
                                let (x0, x1) = cell(gx, w, g);
                                let mut s = T::zero();
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        s += src[ch * h * w + y * w + xx];
                                    }
                                }
                                dst[ch * g * g + gy * g + gx] = s / T::of(((y1 - y0) * (x1 - x0)) as f64);
                            }
                        }
                    }
                }
            }
            Layer::Dense(d) => {
                for i in 0..n {
                    out.item_mut(i).copy_from_slice(&d.bias);
                }
                let inputs = d.inputs;
                T::gemm(
                    n,
                    inputs,
                    d.outputs,
                    T::one(),
                    x.data(),
                    (inputs, 1),
                    &d.weight,
                    (1, inputs),
                    T::one(),
                    out.data_mut(),
                    (d.outputs, 1),
                );
            }
            Layer::LeakyRelu => {
                let slope = T::of(LEAKY_SLOPE);
                for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o = if v > T::zero() { v } else { v * slope };
                }
            }
            Layer::Tanh => {
                for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o = v.tanh();
                }
            }
        }
        Ok(out)
    }

    /// Propagate `grad_out` back through this layer given the layer input `x`
    /// and output `y`. Parameter gradients are accumulated into `param_grads`
    /// when provided.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        grad_out: &Tensor<T>,
        param_grads: Option<&mut [Vec<T>]>,
    ) -> Result<Tensor<T>> {
        if grad_out.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match output {:?}",
                grad_out.shape(),
                y.shape()
            )));
        }
        let [n, c, h, w] = x.shape();
        let mut gx = Tensor::zeros(x.shape());
        match self {
            Layer::Conv3x3(conv) => {
                let hw = h * w;
                let k = c * 9;
                let oc = conv.out_channels;
                let mut col = vec![T::zero(); k * hw];
                let mut gcol = vec![T::zero(); k * hw];
                let mut pg = param_grads;
                let (mut gy_t, mut col_t) = match pg {
                    Some(_) if k >= GEMM_MIN_K => (vec![T::zero(); oc * hw], vec![T::zero(); k * hw]),
                    _ => (Vec::new(), Vec::new()),
                };
                for i in 0..n {
                    let gy = grad_out.item(i);
                    if let Some(pg) = pg.as_deref_mut() {
                        im2col(x.item(i), c, h, w, &mut col);
                        let (gw, gb) = pg.split_at_mut(1);
                        if k < GEMM_MIN_K {
                            for (o, grow) in gy.chunks(hw).enumerate() {
                                for (t, crow) in col.chunks(hw).enumerate() {
                                    gw[0][o * k + t] += dot(grow, crow);
                                }
                            }
                        } else {
                            // The long pixel reduction runs fastest with both
                            // operands transposed to the packing-friendly layout.
                            transpose(gy, oc, hw, &mut gy_t);
                            transpose(&col, k, hw, &mut col_t);
                            T::gemm(oc, hw, k, T::one(), &gy_t, (1, oc), &col_t, (k, 1), T::one(), &mut gw[0], (k, 1));
                        }
                        for (o, row) in gy.chunks(hw).enumerate() {
                            gb[0][o] += row.iter().copied().sum::<T>();
                        }
                    }
                    T::gemm(k, oc, hw, T::one(), &conv.weight, (1, k), gy, (hw, 1), T::zero(), &mut gcol, (hw, 1));
                    col2im_add(&gcol, c, h, w, gx.item_mut(i));
                }
            }
            Layer::AvgPool2x2 => {
                let [_, _, oh, ow] = y.shape();
                let quarter = T::of(0.25);
                for i in 0..n {
                    let g = grad_out.item(i);
                    let dst = gx.item_mut(i);
                    for ch in 0..c {
                        for yy in 0..oh {
                            for xx in 0..ow {
                                let v = g[ch * oh * ow + yy * ow + xx] * quarter;
                                let base = ch * h * w + 2 * yy * w + 2 * xx;
                                dst[base] += v;
                                dst[base + 1] += v;
                                dst[base + w] += v;
                                dst[base + w + 1] += v;
                            }
                        }
                    }
                }
            }
            Layer::AdaptiveAvgPool { grid } => {
                let g = *grid;
                for i in 0..n {
                    let go = grad_out.item(i);
                    let dst = gx.item_mut(i);
                    for ch in 0..c {
                        for gy in 0..g {
                            let (y0, y1) = cell(gy, h, g);
                            for gxx in 0..g {
                                let (x0, x1) = cell(gxx, w, g);
                                let v = go[ch * g * g + gy * g + gxx] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                                for yy in y0..y1 {
                                    for xx in x0..x1 {
                                        dst[ch * h * w + yy * w + xx] += v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Layer::Dense(d) => {
                let (inputs, outputs) = (d.inputs, d.outputs);
                if let Some(pg) = param_grads {
                    let (gw, gb) = pg.split_at_mut(1);
                    T::gemm(
                        outputs,
                        n,
                        inputs,
                        T::one(),
                        grad_out.data(),
                        (1, outputs),
                        x.data(),
                        (inputs, 1),
                        T::one(),
                        &mut gw[0],
                        (inputs, 1),
                    );
                    for i in 0..n {
                        for (b, &g) in gb[0].iter_mut().zip(grad_out.item(i)) {
                            *b += g;
                        }
                    }
                }
                T::gemm(
                    n,
                    outputs,
                    inputs,
                    T::one(),
                    grad_out.data(),
                    (outputs, 1),
                    &d.weight,
                    (inputs, 1),
                    T::zero(),
                    gx.data_mut(),
                    (inputs, 1),
                );
            }
            Layer::LeakyRelu => {
                let slope = T::of(LEAKY_SLOPE);
                for ((o, &v), &g) in gx.data_mut().iter_mut().zip(x.data()).zip(grad_out.data()) {
                    *o = if v > T::zero() { g } else { g * slope };
                }
            }
            Layer::Tanh => {
                for ((o, &t), &g) in gx.data_mut().iter_mut().zip(y.data()).zip(grad_out.data()) {
                    *o = g * (T::one() - t * t);
                }
            }
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn avgpool_of_two_by_two_is_mean() {
        let y = Layer::<f64>::AvgPool2x2.forward(&t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn all_ones_conv_on_one_hot_image() {
        let conv =
            Layer::Conv3x3(Conv3x3 { in_channels: 1, out_channels: 1, weight: vec![1.0f64; 9], bias: vec![0.0] });
        let mut img = [0.0f64; 9];
        img[4] = 1.0;
        let y = conv.forward(&t([1, 1, 3, 3], &img)).unwrap();
        // The one-hot pixel is inside every 3x3 neighborhood of the 3x3 image.
        assert_eq!(y.data(), &[1.0; 9]);

        img = [0.0; 9];
        img[0] = 1.0;
        let y = conv.forward(&t([1, 1, 3, 3], &img)).unwrap();
        assert_eq!(y.data()[4], 1.0);
        assert_eq!(y.data()[8], 0.0);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = crate::rng::stream(3, &[]);
        let conv = Conv3x3::<f64>::init(&mut rng, 2, 3);
        let x: Vec<f64> = (0..2 * 4 * 5).map(|i| ((i * 7 % 11) as f64) / 11.0 - 0.3).collect();
        let input = t([1, 2, 4, 5], &x);
        let y = Layer::Conv3x3(conv.clone()).forward(&input).unwrap();
        for o in 0..3 {
            for yy in 0..4isize {
                for xx in 0..5isize {
                    let mut s = conv.bias[o];
                    for c in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                if (0..4).contains(&sy) && (0..5).contains(&sx) {
                                    s += conv.weight[((o * 2 + c) * 3 + ky as usize) * 3 + kx as usize]
                                        * x[c * 20 + sy as usize * 5 + sx as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[o * 20 + yy as usize * 5 + xx as usize];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adaptive_pool_cells_cover_input() {
        assert_eq!(cell(0, 6, 4), (0, 2));
        assert_eq!(cell(1, 6, 4), (1, 3));
        assert_eq!(cell(3, 6, 4), (4, 6));
        let x = t([1, 1, 4, 4], &(0..16).map(f64::from).collect::<Vec<_>>());
        let y = Layer::AdaptiveAvgPool { grid: 2 }.forward(&x).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn shape_errors() {
        let conv =
            Layer::Conv3x3(Conv3x3 { in_channels: 2, out_channels: 1, weight: vec![0.0f64; 18], bias: vec![0.0] });
        assert!(matches!(conv.forward(&Tensor::zeros([1, 1, 3, 3])), Err(Error::Shape(_))));
        assert!(Layer::<f64>::AvgPool2x2.forward(&Tensor::zeros([1, 1, 1, 4])).is_err());
    }
}
