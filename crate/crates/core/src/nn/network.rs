use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Layer, LayerKind, Scalar, Tensor};
use crate::error::{Error, Result};

/// Activations recorded by a forward pass: the input to every layer plus the
/// final output.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    inputs: Vec<Tensor<T>>,
    output: Tensor<T>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    pub fn into_output(self) -> Tensor<T> {
        self.output
    }
}

/// Parameter gradients, one buffer per parameter in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub buffers: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_zero(&self) -> bool {
        self.buffers.iter().flatten().all(|v| *v == T::zero())
    }

    pub fn scale(&mut self, s: T) {
        self.buffers.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn flat(&self) -> impl Iterator<Item = &T> {
        self.buffers.iter().flatten()
    }
}

/// Sequential stack of layers over `(channels, height, width)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    layers: Vec<Layer<T>>,
    input_shape: (usize, usize, usize),
    cache: Option<Trace<T>>,
}

impl<T: Scalar> PartialEq for Trace<T> {
    fn eq(&self, other: &Self) -> bool {
        self.inputs == other.inputs && self.output == other.output
    }
}

impl<T: Scalar> Network<T> {
    /// Build a network, checking that consecutive layer shapes are compatible
    /// and all weights are finite.
    pub fn new(layers: Vec<Layer<T>>, input_shape: (usize, usize, usize)) -> Result<Self> {
        let mut shape = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.kind().output_shape(shape).map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
            if layer.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite("weights"));
            }
        }
        Ok(Self { layers, input_shape, cache: None })
    }

    /// Rebuild a network from an architecture descriptor and parameter
    /// buffers in [`Network::params`] order.
    pub fn from_parts(kinds: &[LayerKind], input_shape: (usize, usize, usize), params: Vec<Vec<T>>) -> Result<Self> {
        let mut it = params.into_iter();
        let layers = kinds.iter().map(|&k| Layer::from_kind(k, &mut it)).collect::<Result<Vec<_>>>()?;
        if it.next().is_some() {
            return Err(Error::Shape("more parameter buffers than layers need".into()));
        }
        Self::new(layers, input_shape)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.layers
            .iter()
            .try_fold(self.input_shape, |s, l| l.kind().output_shape(s))
            .expect("validated at construction")
    }

    pub fn descriptor(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients { buffers: self.params().iter().map(|p| vec![T::zero(); p.len()]).collect() }
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.params().into_iter().flatten() {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network { layers: self.layers.iter().map(Layer::cast).collect(), input_shape: self.input_shape, cache: None }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if n == 0 || (c, h, w) != self.input_shape {
            return Err(Error::Shape(format!(
                "network expects (n, {}, {}, {}), got {:?}",
                self.input_shape.0,
                self.input_shape.1,
                self.input_shape.2,
                x.shape()
            )));
        }
        x.check_finite("network input")
    }

    /// Forward pass without recording activations.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_prefix(x, self.layers.len())
    }

    /// Forward pass through the first `depth` layers only.
    pub fn infer_prefix(&self, x: &Tensor<T>, depth: usize) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers[..depth] {
            cur = layer.forward(&cur)?;
        }
        cur.check_finite("activation")?;
        Ok(cur)
    }

    /// Forward pass that records what the backward pass needs. The network
    /// itself is untouched, so frozen models can be traced through `&self`.
    pub fn trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        self.trace_prefix(x, self.layers.len())
    }

    pub fn trace_prefix(&self, x: &Tensor<T>, depth: usize) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for layer in &self.layers[..depth] {
            let next = layer.forward(&cur)?;
            inputs.push(cur);
            cur = next;
        }
        cur.check_finite("activation")?;
        Ok(Trace { inputs, output: cur })
    }

    /// Backward pass over a trace. Parameter gradients are accumulated only
    /// when `grads` is given; the input gradient is always returned.
    pub fn backward_trace(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        mut grads: Option<&mut Gradients<T>>,
    ) -> Result<Tensor<T>> {
        if grad_out.shape() != trace.output.shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                trace.output.shape()
            )));
        }
        grad_out.check_finite("output gradient")?;
        let depth = trace.inputs.len();
        // Parameter buffer offset of each layer.
        let mut offsets = Vec::with_capacity(depth);
        let mut acc = 0;
        for layer in &self.layers[..depth] {
            offsets.push(acc);
            acc += layer.params().len();
        }
        let mut g = grad_out.clone();
        for i in (0..depth).rev() {
            let layer = &self.layers[i];
            let y = if i + 1 < depth { &trace.inputs[i + 1] } else { &trace.output };
            let nparams = layer.params().len();
            let pg = match grads.as_deref_mut() {
                Some(gr) if nparams > 0 => Some(&mut gr.buffers[offsets[i]..offsets[i] + nparams]),
                _ => None,
            };
            g = layer.backward(&trace.inputs[i], y, &g, pg)?;
        }
        Ok(g)
    }

    /// Forward pass that caches activations inside the network for a
    /// following [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let trace = self.trace(x)?;
        let out = trace.output.clone();
        self.cache = Some(trace);
        Ok(out)
    }

    /// Consume the cached forward pass and return parameter and input gradients.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<(Gradients<T>, Tensor<T>)> {
        let trace = self.cache.take().ok_or(Error::NoForwardCache)?;
        let mut grads = self.zero_gradients();
        let gx = self.backward_trace(&trace, grad_out, Some(&mut grads))?;
        Ok((grads, gx))
    }
}
