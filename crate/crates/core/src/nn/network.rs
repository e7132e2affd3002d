use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{output_shape, Layer, LayerSpec};
use super::Scalar;
use crate::error::{Error, Result};

/// A trainable parameter tensor paired with its accumulated gradient.
pub struct ParamSlot<'a, T> {
    pub value: &'a mut [T],
    pub grad: &'a [T],
}

#[derive(Debug, Clone, PartialEq)]
struct Cache<T> {
    batch: usize,
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    /// A leading convolution keeps its patches instead, leaving `acts[0]`
    /// empty.
    acts: Vec<Vec<T>>,
    /// Unfolded patches, one buffer per layer (empty for non-conv layers).
    cols: Vec<Vec<T>>,
}

/// Sequential stack of layers over a fixed per-sample input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    shapes: Vec<Vec<usize>>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-uniform weights and zero biases.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Network<T>> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shapes = vec![input_shape.to_vec()];
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let input = shapes.last().expect("non-empty");
            layers.push(Layer::build(spec, input, &mut rng)?);
            let next = output_shape(spec, input)?;
            shapes.push(next);
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            specs: specs.to_vec(),
            layers,
            shapes,
            cache: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub(crate) fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Same architecture and parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            specs: self.specs.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            shapes: self.shapes.clone(),
            cache: None,
        }
    }

    fn check_batch(&self, input: &[T]) -> Result<usize> {
        let per = self.input_len();
        if input.is_empty() || !input.len().is_multiple_of(per) {
            return Err(Error::Shape(format!(
                "input of {} values is not a batch of shape {:?}",
                input.len(),
                self.input_shape
            )));
        }
        Ok(input.len() / per)
    }

    /// Inference without caching activations.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        let batch = self.check_batch(input)?;
        let Some((first, rest)) = self.layers.split_first() else {
            return Ok(input.to_vec());
        };
        let mut x = first.forward(input, batch, None);
        for layer in rest {
            x = layer.forward(&x, batch, None);
        }
        Ok(x)
    }

    /// Forward pass that keeps every activation for a following `backward`.
    pub fn forward(&mut self, input: &[T]) -> Result<&[T]> {
        let batch = self.check_batch(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut cols = Vec::with_capacity(self.layers.len());
        let conv_first = matches!(self.layers.first(), Some(Layer::Conv2d { .. }));
        acts.push(if conv_first { Vec::new() } else { input.to_vec() });
        for (i, layer) in self.layers.iter().enumerate() {
            let mut c = Vec::new();
            let keep = matches!(layer, Layer::Conv2d { .. });
            let x = if i == 0 { input } else { &acts[i] };
            let y = layer.forward(x, batch, keep.then_some(&mut c));
            cols.push(c);
            acts.push(y);
        }
        self.cache = Some(Cache { batch, acts, cols });
        Ok(self.cache.as_ref().expect("just set").acts.last().expect("output"))
    }

    /// Every intermediate activation of the cached forward pass.
    pub fn activations(&self) -> Option<&[Vec<T>]> {
        self.cache.as_ref().map(|c| c.acts.as_slice())
    }

    fn backward_impl(&mut self, grad_out: &[T], want_input: bool) -> Result<Option<Vec<T>>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Protocol("backward called without a cached forward pass".into()))?;
        let expected = cache.batch * self.output_len();
        if grad_out.len() != expected {
            let err = Error::Shape(format!(
                "upstream gradient has {} values, expected {expected}",
                grad_out.len()
            ));
            self.cache = Some(cache);
            return Err(err);
        }
        let mut grad = grad_out.to_vec();
        let last = self.layers.len();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let need = want_input || i > 0;
            match layer.backward(
                &cache.acts[i],
                &cache.acts[i + 1],
                &cache.cols[i],
                &grad,
                cache.batch,
                need,
            ) {
                Some(g) => grad = g,
                None => {
                    debug_assert!(i == 0 || last == 0);
                    return Ok(None);
                }
            }
        }
        Ok(Some(grad))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    /// Consumes the forward cache.
    pub fn backward(&mut self, grad_out: &[T]) -> Result<Vec<T>> {
        self.backward_impl(grad_out, true)
            .map(|g| g.expect("input gradient requested"))
    }

    /// Like `backward` but skips the input gradient of the first layer.
    pub fn backward_params(&mut self, grad_out: &[T]) -> Result<()> {
        self.backward_impl(grad_out, false).map(|_| ())
    }

    pub fn zero_grad(&mut self) {
        for p in self.layers.iter_mut().filter_map(|l| l.params_mut()) {
            p.zero_grad();
        }
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in self.layers.iter_mut().filter_map(|l| l.params_mut()) {
            p.grad_weight.iter_mut().for_each(|g| *g *= factor);
            p.grad_bias.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Parameters in a fixed order: per layer, weights then biases.
    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut out = Vec::new();
        for p in self.layers.iter_mut().filter_map(|l| l.params_mut()) {
            out.push(ParamSlot {
                value: &mut p.weight,
                grad: &p.grad_weight,
            });
            out.push(ParamSlot {
                value: &mut p.bias,
                grad: &p.grad_bias,
            });
        }
        out
    }

    /// Flat copy of all parameters in `param_slots` order.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for p in self.layers.iter().filter_map(|l| l.params()) {
            out.extend_from_slice(&p.weight);
            out.extend_from_slice(&p.bias);
        }
        out
    }

    /// Flat copy of all gradients in `param_slots` order.
    pub fn flat_grads(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for p in self.layers.iter().filter_map(|l| l.params()) {
            out.extend_from_slice(&p.grad_weight);
            out.extend_from_slice(&p.grad_bias);
        }
        out
    }

    /// Overwrites parameters from a flat vector in `param_slots` order.
    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for p in self.layers.iter_mut().filter_map(|l| l.params_mut()) {
            for dst in [&mut p.weight, &mut p.bias] {
                let n = dst.len();
                dst.copy_from_slice(&flat[at..at + n]);
                at += n;
            }
        }
        Ok(())
    }

    /// Copies parameters from a network with the same architecture.
    pub fn copy_params_from(&mut self, other: &Network<T>) -> Result<()> {
        if self.specs != other.specs || self.input_shape != other.input_shape {
            return Err(Error::Shape("architecture mismatch in parameter copy".into()));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(d), Some(s)) = (dst.params_mut(), src.params()) {
                d.weight.copy_from_slice(&s.weight);
                d.bias.copy_from_slice(&s.bias);
            }
        }
        Ok(())
    }

    /// `head ∘ self` as one network, parameters copied.
    pub fn stack(&self, head: &Network<T>) -> Result<Network<T>> {
        if head.input_shape != [self.output_len()] {
            return Err(Error::Shape(format!(
                "cannot stack a head expecting {:?} on an output of shape {:?}",
                head.input_shape,
                self.output_shape()
            )));
        }
        let mut shapes = self.shapes.clone();
        shapes.extend(head.shapes[1..].iter().cloned());
        Ok(Network {
            input_shape: self.input_shape.clone(),
            specs: self.specs.iter().chain(&head.specs).copied().collect(),
            layers: self.layers.iter().chain(&head.layers).cloned().collect(),
            shapes,
            cache: None,
        })
    }

    /// Human-readable architecture summary, used in mismatch diagnostics.
    pub fn describe(&self) -> String {
        let layers: Vec<String> = self.specs.iter().map(describe_spec).collect();
        format!("input {:?} -> [{}]", self.input_shape, layers.join(", "))
    }
}

pub(crate) fn describe_spec(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
        } => format!("conv({out_channels}, {kernel}x{kernel}, stride {stride})"),
        LayerSpec::Dense { out_dim } => format!("dense({out_dim})"),
        LayerSpec::Relu => "relu".into(),
        LayerSpec::Flatten => "flatten".into(),
        LayerSpec::Softmax => "softmax".into(),
    }
}
