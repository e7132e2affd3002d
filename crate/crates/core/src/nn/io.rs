//! `NNW1` weight files.
//!
//! Layout, little-endian: the magic `NNW1`, a u32 layer count, then per layer
//! a u8 kind, a u32 rank followed by that many u32 dims, and the f32 payload
//! (weights then biases). Convolutions store `[out, in, k, k, stride]`, dense
//! layers `[out, in]`; parameter-free layers have rank 0.

use std::path::Path;

use super::layers::{Layer, LayerSpec};
use super::{Network, Scalar};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NNW1";

const KIND_CONV: u8 = 0;
const KIND_DENSE: u8 = 1;
const KIND_RELU: u8 = 2;
const KIND_FLATTEN: u8 = 3;
const KIND_SOFTMAX: u8 = 4;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Encodes a network; parameters are stored as f32 regardless of `T`.
pub fn to_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, net.layers().len());
    for layer in net.layers() {
        let (kind, dims): (u8, Vec<usize>) = match layer {
            Layer::Conv2d { geom, .. } => (
                KIND_CONV,
                vec![geom.out_channels, geom.in_channels, geom.kernel, geom.kernel, geom.stride],
            ),
            Layer::Dense { in_dim, out_dim, .. } => (KIND_DENSE, vec![*out_dim, *in_dim]),
            Layer::Relu => (KIND_RELU, vec![]),
            Layer::Flatten => (KIND_FLATTEN, vec![]),
            Layer::Softmax { .. } => (KIND_SOFTMAX, vec![]),
        };
        out.push(kind);
        put_u32(&mut out, dims.len());
        for d in dims {
            put_u32(&mut out, d);
        }
        if let Some(p) = layer.params() {
            for v in p.weight.iter().chain(&p.bias) {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Weights(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.at,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Decodes a network for the given per-sample input shape. The stored
/// architecture must be consistent with that shape and the byte length
/// must match exactly.
pub fn from_bytes<T: Scalar>(bytes: &[u8], input_shape: &[usize]) -> Result<Network<T>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Weights("bad magic, expected NNW1".into()));
    }
    let count = r.u32()?;
    if count > 4096 {
        return Err(Error::Weights(format!("implausible layer count {count}")));
    }
    let mut specs = Vec::with_capacity(count);
    let mut stored = Vec::with_capacity(count);
    for i in 0..count {
        let kind = r.u8()?;
        let rank = r.u32()?;
        if rank > 8 {
            return Err(Error::Weights(format!("layer {i}: implausible rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let (spec, n_params) = match (kind, dims.as_slice()) {
            (KIND_CONV, &[out, inp, k, k2, stride]) if k == k2 => (
                LayerSpec::Conv2d {
                    out_channels: out,
                    kernel: k,
                    stride,
                },
                out.checked_mul(inp)
                    .and_then(|v| v.checked_mul(k * k))
                    .and_then(|v| v.checked_add(out)),
            ),
            (KIND_DENSE, &[out, inp]) => (
                LayerSpec::Dense { out_dim: out },
                out.checked_mul(inp).and_then(|v| v.checked_add(out)),
            ),
            (KIND_RELU, []) => (LayerSpec::Relu, Some(0)),
            (KIND_FLATTEN, []) => (LayerSpec::Flatten, Some(0)),
            (KIND_SOFTMAX, []) => (LayerSpec::Softmax, Some(0)),
            _ => {
                return Err(Error::Weights(format!(
                    "layer {i}: unknown kind {kind} with dims {dims:?}"
                )))
            }
        };
        let n = n_params.ok_or_else(|| Error::Weights(format!("layer {i}: size overflow")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Weights("size overflow".into()))?)?;
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        specs.push(spec);
        stored.push((dims, values));
    }
    if r.at != bytes.len() {
        return Err(Error::Weights(format!(
            "{} trailing bytes after last layer",
            bytes.len() - r.at
        )));
    }

    let mut net = Network::<T>::new(input_shape, &specs, 0)
        .map_err(|e| Error::Weights(format!("architecture does not fit input {input_shape:?}: {e}")))?;
    let mut flat = Vec::with_capacity(net.parameter_count());
    for (i, (layer, (dims, values))) in net.layers().iter().zip(&stored).enumerate() {
        let fits = match layer {
            Layer::Conv2d { geom, .. } => dims[1] == geom.in_channels,
            Layer::Dense { in_dim, .. } => dims[1] == *in_dim,
            _ => true,
        };
        if !fits {
            return Err(Error::Weights(format!(
                "layer {i}: stored input size {} does not match the network input {input_shape:?}",
                dims[1]
            )));
        }
        flat.extend_from_slice(values);
    }
    net.set_flat_params(&flat)?;
    Ok(net)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &to_bytes(net))
}

pub fn load<T: Scalar>(path: &Path, input_shape: &[usize]) -> Result<Network<T>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Weights(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&bytes, input_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 2,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_dim: 3 },
            LayerSpec::Softmax,
        ]
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let net = Network::<f32>::new(&[1, 4, 4], &specs(), 5).unwrap();
        let bytes = to_bytes(&net);
        let back: Network<f32> = from_bytes(&bytes, &[1, 4, 4]).unwrap();
        assert_eq!(net.flat_params(), back.flat_params());
        let x: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let net = Network::<f32>::new(&[1, 4, 4], &specs(), 5).unwrap();
        let bytes = to_bytes(&net);
        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(from_bytes::<f32>(short, &[1, 4, 4]), Err(Error::Weights(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes::<f32>(&long, &[1, 4, 4]), Err(Error::Weights(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bad, &[1, 4, 4]), Err(Error::Weights(_))));
    }

    #[test]
    fn rejects_mismatched_input() {
        let net = Network::<f32>::new(&[1, 4, 4], &specs(), 5).unwrap();
        let bytes = to_bytes(&net);
        assert!(from_bytes::<f32>(&bytes, &[2, 4, 4]).is_err());
        assert!(from_bytes::<f32>(&bytes, &[1, 6, 6]).is_err());
    }
}
