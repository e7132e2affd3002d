//! `EMB1` embedding assets: three action text embeddings and a bank of
//! (frame fingerprint, image embedding) pairs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::obs::FINGERPRINT_LEN;
use crate::sim::MetaAction;

pub const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub fingerprint: [u8; FINGERPRINT_LEN],
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingAssets {
    dim: usize,
    text: [Vec<f64>; 3],
    bank: Vec<BankEntry>,
}

fn check_vector(what: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Asset(format!(
            "{what} has dimension {}, expected {dim}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Asset(format!("{what} has non-finite entries")));
    }
    Ok(())
}

impl EmbeddingAssets {
    /// `text` is indexed by `MetaAction::index`.
    pub fn new(text: [Vec<f64>; 3], bank: Vec<BankEntry>) -> Result<EmbeddingAssets> {
        let dim = text[0].len();
        if dim == 0 {
            return Err(Error::Asset("embedding dimension must be positive".into()));
        }
        for (a, t) in MetaAction::ALL.iter().zip(&text) {
            check_vector(&format!("text embedding for {}", a.name()), t, dim)?;
        }
        for (i, e) in bank.iter().enumerate() {
            check_vector(&format!("bank entry {i}"), &e.embedding, dim)?;
        }
        Ok(EmbeddingAssets { dim, text, bank })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn text_embeddings(&self) -> &[Vec<f64>; 3] {
        &self.text
    }

    pub fn bank(&self) -> &[BankEntry] {
        &self.bank
    }

    /// Bank entry with the smallest L2 fingerprint distance; the first one
    /// wins ties.
    pub fn nearest(&self, fingerprint: &[u8; FINGERPRINT_LEN]) -> Result<&BankEntry> {
        let mut best: Option<(u64, &BankEntry)> = None;
        for e in &self.bank {
            let d: u64 = e
                .fingerprint
                .iter()
                .zip(fingerprint)
                .map(|(&a, &b)| {
                    let diff = a as i64 - b as i64;
                    (diff * diff) as u64
                })
                .sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, e));
            }
        }
        best.map(|(_, e)| e)
            .ok_or_else(|| Error::MissingAssets("embedding frame bank is empty".into()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        let put = |out: &mut Vec<u8>, v: &[f64]| {
            for x in v {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        };
        for (i, t) in self.text.iter().enumerate() {
            out.push(i as u8);
            put(&mut out, t);
        }
        out.extend_from_slice(&(self.bank.len() as u32).to_le_bytes());
        for e in &self.bank {
            out.extend_from_slice(&e.fingerprint);
            put(&mut out, &e.embedding);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<EmbeddingAssets> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = at
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::Asset(format!("truncated at offset {at}")))?;
            let s = &bytes[at..end];
            at = end;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(Error::Asset("bad magic, expected EMB1".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
        let dim = u32_at(take(4)?);
        if dim == 0 {
            return Err(Error::Asset("embedding dimension must be positive".into()));
        }
        let text_count = u32_at(take(4)?);
        if text_count != 3 {
            return Err(Error::Asset(format!("expected 3 text embeddings, found {text_count}")));
        }
        let floats = |b: &[u8]| -> Vec<f64> {
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        };
        let vec_bytes = dim
            .checked_mul(4)
            .ok_or_else(|| Error::Asset("dimension overflow".into()))?;
        let mut text: [Option<Vec<f64>>; 3] = [None, None, None];
        for _ in 0..3 {
            let id = take(1)?[0] as usize;
            let v = floats(take(vec_bytes)?);
            match text.get_mut(id) {
                Some(slot @ None) => *slot = Some(v),
                Some(Some(_)) => return Err(Error::Asset(format!("duplicate action id {id}"))),
                None => return Err(Error::Asset(format!("invalid action id {id}"))),
            }
        }
        let [Some(s), Some(i), Some(f)] = text else {
            unreachable!("three distinct ids in 0..3 fill every slot")
        };
        let count = u32_at(take(4)?);
        let mut bank = Vec::new();
        for _ in 0..count {
            let mut fingerprint = [0u8; FINGERPRINT_LEN];
            fingerprint.copy_from_slice(take(FINGERPRINT_LEN)?);
            let embedding = floats(take(vec_bytes)?);
            bank.push(BankEntry {
                fingerprint,
                embedding,
            });
        }
        if at != bytes.len() {
            return Err(Error::Asset(format!(
                "{} trailing bytes",
                bytes.len() - at
            )));
        }
        EmbeddingAssets::new([s, i, f], bank)
    }

    pub fn load(path: &Path) -> Result<EmbeddingAssets> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::MissingAssets(format!("cannot read {}: {e}", path.display()))
        })?;
        EmbeddingAssets::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }
}
