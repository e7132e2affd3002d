use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, Scalar};
use crate::error::{Error, Result};

/// Architecture description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) square convolution.
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        out_dim: usize,
    },
    Relu,
    Flatten,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Scalar> Params<T> {
    fn he_uniform<R: Rng>(rows: usize, fan_in: usize, rng: &mut R) -> Params<T> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let weight = (0..rows * fan_in)
            .map(|_| T::from_f64(rng.random_range(-limit..limit)))
            .collect();
        Params {
            weight,
            bias: vec![T::zero(); rows],
            grad_weight: vec![T::zero(); rows * fan_in],
            grad_bias: vec![T::zero(); rows],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        Params {
            weight: c(&self.weight),
            bias: c(&self.bias),
            grad_weight: c(&self.grad_weight),
            grad_bias: c(&self.grad_bias),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one sample into columns `col0..col0 + positions` of a patch
    /// matrix with leading dimension `ld`.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T], ld: usize, col0: usize) {
        let p = self.positions();
        let k = self.kernel;
        for c in 0..self.in_channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ld + col0..row * ld + col0 + p];
                    for oy in 0..self.out_h {
                        let src_row = (c * self.in_h + oy * self.stride + ki) * self.in_w + kj;
                        let dst_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            *d = x[src_row + ox * self.stride];
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], ld: usize, col0: usize, dx: &mut [T]) {
        let p = self.positions();
        let k = self.kernel;
        for c in 0..self.in_channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ld + col0..row * ld + col0 + p];
                    for oy in 0..self.out_h {
                        let dst_row = (c * self.in_h + oy * self.stride + ki) * self.in_w + kj;
                        for ox in 0..self.out_w {
                            dx[dst_row + ox * self.stride] += src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer<T> {
    Conv2d {
        geom: ConvGeometry,
        params: Params<T>,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
        params: Params<T>,
    },
    Relu,
    Flatten,
    Softmax {
        width: usize,
    },
}

/// Per-sample output shape of `spec` applied to `input`, or a shape error.
pub(crate) fn output_shape(spec: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    match *spec {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
        } => {
            let [_, h, w] = input else {
                return Err(Error::Shape(format!(
                    "conv2d needs a (channels, height, width) input, got {input:?}"
                )));
            };
            if out_channels == 0 || kernel == 0 || stride == 0 || kernel > *h || kernel > *w {
                return Err(Error::Shape(format!(
                    "conv2d(out={out_channels}, kernel={kernel}, stride={stride}) does not fit input {input:?}"
                )));
            }
            Ok(vec![
                out_channels,
                (h - kernel) / stride + 1,
                (w - kernel) / stride + 1,
            ])
        }
        LayerSpec::Dense { out_dim } => {
            if input.len() != 1 || out_dim == 0 {
                return Err(Error::Shape(format!(
                    "dense(out={out_dim}) needs a flat input, got {input:?}"
                )));
            }
            Ok(vec![out_dim])
        }
        LayerSpec::Relu => Ok(input.to_vec()),
        LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        LayerSpec::Softmax => {
            if input.len() != 1 {
                return Err(Error::Shape(format!(
                    "softmax needs a flat input, got {input:?}"
                )));
            }
            Ok(input.to_vec())
        }
    }
}

impl<T: Scalar> Layer<T> {
    pub fn build<R: Rng>(spec: &LayerSpec, input: &[usize], rng: &mut R) -> Result<Layer<T>> {
        let out = output_shape(spec, input)?;
        Ok(match *spec {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
            } => {
                let geom = ConvGeometry {
                    in_channels: input[0],
                    in_h: input[1],
                    in_w: input[2],
                    out_channels,
                    kernel,
                    stride,
                    out_h: out[1],
                    out_w: out[2],
                };
                Layer::Conv2d {
                    geom,
                    params: Params::he_uniform(out_channels, geom.patch_len(), rng),
                }
            }
            LayerSpec::Dense { out_dim } => Layer::Dense {
                in_dim: input[0],
                out_dim,
                params: Params::he_uniform(out_dim, input[0], rng),
            },
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Softmax => Layer::Softmax { width: input[0] },
        })
    }

    pub fn params(&self) -> Option<&Params<T>> {
        match self {
            Layer::Conv2d { params, .. } | Layer::Dense { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut Params<T>> {
        match self {
            Layer::Conv2d { params, .. } | Layer::Dense { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d { geom, params } => Layer::Conv2d {
                geom: *geom,
                params: params.cast(),
            },
            Layer::Dense {
                in_dim,
                out_dim,
                params,
            } => Layer::Dense {
                in_dim: *in_dim,
                out_dim: *out_dim,
                params: params.cast(),
            },
            Layer::Relu => Layer::Relu,
            Layer::Flatten => Layer::Flatten,
            Layer::Softmax { width } => Layer::Softmax { width: *width },
        }
    }

    /// Forward pass over a batch. `cols` receives the unfolded patches of a
    /// convolution when the caller wants to keep them for backward.
    pub fn forward(&self, x: &[T], batch: usize, cols: Option<&mut Vec<T>>) -> Vec<T> {
        match self {
            Layer::Conv2d { geom, params } => {
                // Patches of the whole batch side by side: `kl × (batch·p)`.
                let in_len = geom.in_channels * geom.in_h * geom.in_w;
                let (kl, p, oc) = (geom.patch_len(), geom.positions(), geom.out_channels);
                let ld = batch * p;
                let mut scratch = Vec::new();
                let cols = cols.unwrap_or(&mut scratch);
                cols.resize(kl * ld, T::zero());
                for n in 0..batch {
                    geom.im2col(&x[n * in_len..(n + 1) * in_len], cols, ld, n * p);
                }
                let mut flat = vec![T::zero(); oc * ld];
                gemm::nn(oc, kl, ld, &params.weight, cols, T::zero(), &mut flat);
                let mut out = vec![T::zero(); batch * oc * p];
                for (o, (row, &b)) in flat.chunks_exact(ld).zip(&params.bias).enumerate() {
                    for n in 0..batch {
                        let dst = &mut out[(n * oc + o) * p..(n * oc + o + 1) * p];
                        for (d, &v) in dst.iter_mut().zip(&row[n * p..(n + 1) * p]) {
                            *d = v + b;
                        }
                    }
                }
                out
            }
            Layer::Dense {
                in_dim,
                out_dim,
                params,
            } => {
                let mut out = vec![T::zero(); batch * out_dim];
                gemm::nt(batch, *in_dim, *out_dim, x, &params.weight, T::zero(), &mut out);
                for row in out.chunks_exact_mut(*out_dim) {
                    for (v, &b) in row.iter_mut().zip(&params.bias) {
                        *v += b;
                    }
                }
                out
            }
            Layer::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
            Layer::Flatten => x.to_vec(),
            Layer::Softmax { width } => super::softmax_rows(x, *width),
        }
    }

    /// Accumulates parameter gradients and, when `want_input` is set,
    /// returns the gradient with respect to the layer input.
    pub fn backward(
        &mut self,
        x: &[T],
        y: &[T],
        cols: &[T],
        grad_out: &[T],
        batch: usize,
        want_input: bool,
    ) -> Option<Vec<T>> {
        match self {
            Layer::Conv2d { geom, params } => {
                let in_len = geom.in_channels * geom.in_h * geom.in_w;
                let (kl, p, oc) = (geom.patch_len(), geom.positions(), geom.out_channels);
                let ld = batch * p;
                let mut g = vec![T::zero(); oc * ld];
                for n in 0..batch {
                    for o in 0..oc {
                        let src = &grad_out[(n * oc + o) * p..(n * oc + o + 1) * p];
                        g[o * ld + n * p..o * ld + (n + 1) * p].copy_from_slice(src);
                    }
                }
                for (gb, row) in params.grad_bias.iter_mut().zip(g.chunks_exact(ld)) {
                    *gb += row.iter().copied().sum::<T>();
                }
                gemm::nt(oc, ld, kl, &g, cols, T::one(), &mut params.grad_weight);
                want_input.then(|| {
                    let mut dcols = vec![T::zero(); kl * ld];
                    gemm::tn(kl, oc, ld, &params.weight, &g, T::zero(), &mut dcols);
                    let mut dx = vec![T::zero(); batch * in_len];
                    for n in 0..batch {
                        geom.col2im_add(&dcols, ld, n * p, &mut dx[n * in_len..(n + 1) * in_len]);
                    }
                    dx
                })
            }
            Layer::Dense {
                in_dim,
                out_dim,
                params,
            } => {
                gemm::tn(*out_dim, batch, *in_dim, grad_out, x, T::one(), &mut params.grad_weight);
                for row in grad_out.chunks_exact(*out_dim) {
                    for (gb, &g) in params.grad_bias.iter_mut().zip(row) {
                        *gb += g;
                    }
                }
                want_input.then(|| {
                    let mut dx = vec![T::zero(); batch * *in_dim];
                    gemm::nn(batch, *out_dim, *in_dim, grad_out, &params.weight, T::zero(), &mut dx);
                    dx
                })
            }
            Layer::Relu => want_input.then(|| {
                x.iter()
                    .zip(grad_out)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect()
            }),
            Layer::Flatten => want_input.then(|| grad_out.to_vec()),
            Layer::Softmax { width } => want_input.then(|| {
                let mut dx = vec![T::zero(); grad_out.len()];
                for ((yr, gr), dr) in y
                    .chunks_exact(*width)
                    .zip(grad_out.chunks_exact(*width))
                    .zip(dx.chunks_exact_mut(*width))
                {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                dx
            }),
        }
    }
}
