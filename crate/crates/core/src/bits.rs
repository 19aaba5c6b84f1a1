//! Fixed-length binary words packed into 64-bit limbs.
//!
//! Bit `i` lives in word `i / 64` at bit position `i % 64`. The byte
//! serialization is little-endian within each word, so byte `j` holds bits
//! `8j..8j+8` with bit `8j` in the least significant position. Bits past
//! `len` in the last word are always zero.

use std::fmt;
use std::ops::{BitXor, BitXorAssign};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; words_for(len)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self {
            words: vec![u64::MAX; words_for(len)],
            len,
        };
        v.clear_tail();
        v
    }

    /// Builds a vector from 0/1 values; any non-zero byte counts as 1.
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b != 0 {
                v.words[i / 64] |= 1 << (i % 64);
            }
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.words[i / 64] |= 1 << (i % 64);
            }
        }
        v
    }

    /// Uniformly random word of `len` bits.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut v = Self {
            words: (0..words_for(len)).map(|_| rng.gen()).collect(),
            len,
        };
        v.clear_tail();
        v
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn bit(&self, i: usize) -> u8 {
        self.get(i) as u8
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.words[i / 64] >> (i % 64)) & 1 == 1)
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn hamming_distance(&self, other: &Self) -> Result<usize> {
        check_len(self.len, other.len)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    pub fn complement(&self) -> Self {
        let mut v = Self {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
        };
        v.clear_tail();
        v
    }

    /// XOR of two equal-length words.
    pub fn xor(&self, other: &Self) -> Result<Self> {
        check_len(self.len, other.len)?;
        let mut out = self.clone();
        out ^= other;
        Ok(out)
    }

    /// Copies bits `start..start + len` into a new vector.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len, "slice out of range");
        let mut out = Self::zeros(len);
        for w in 0..out.words.len() {
            out.words[w] = self.word_at(start + 64 * w);
        }
        out.clear_tail();
        out
    }

    /// Splits into `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> (Self, Self) {
        (self.slice(0, at), self.slice(at, self.len - at))
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.len + other.len);
        out.words[..self.words.len()].copy_from_slice(&self.words);
        for i in 0..other.len {
            if other.get(i) {
                out.set(self.len + i, true);
            }
        }
        out
    }

    /// The 64 bits starting at `offset` (bits past the end read as zero).
    #[inline]
    pub(crate) fn word_at(&self, offset: usize) -> u64 {
        let w = offset / 64;
        let s = offset % 64;
        let lo = self.words.get(w).copied().unwrap_or(0);
        if s == 0 {
            lo
        } else {
            let hi = self.words.get(w + 1).copied().unwrap_or(0);
            (lo >> s) | (hi << (64 - s))
        }
    }

    #[inline]
    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }

    /// Little-endian byte image, `ceil(len / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        check_len(len.div_ceil(8), bytes.len())?;
        let mut v = Self::zeros(len);
        for (w, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            v.words[w] = u64::from_le_bytes(buf);
        }
        let tail_dirty = {
            let before = v.words.clone();
            v.clear_tail();
            before != v.words
        };
        if tail_dirty {
            return Err(Error::Decode(format!(
                "non-zero padding bits beyond length {len}"
            )));
        }
        Ok(v)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::Decode(e.to_string()))?;
        Self::from_bytes(&bytes, len)
    }

    pub fn to_base64(&self) -> String {
        BASE64.encode(self.to_bytes())
    }

    pub fn from_base64(s: &str, len: usize) -> Result<Self> {
        let bytes = BASE64
            .decode(s.trim())
            .map_err(|e| Error::Decode(e.to_string()))?;
        Self::from_bytes(&bytes, len)
    }
}

impl BitXorAssign<&BitVector> for BitVector {
    fn bitxor_assign(&mut self, rhs: &BitVector) {
        assert_eq!(self.len, rhs.len, "xor of unequal lengths");
        for (a, b) in self.words.iter_mut().zip(&rhs.words) {
            *a ^= b;
        }
    }
}

impl BitXor for &BitVector {
    type Output = BitVector;

    fn bitxor(self, rhs: &BitVector) -> BitVector {
        let mut out = self.clone();
        out ^= rhs;
        out
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector[{}](", self.len)?;
        if self.len <= 128 {
            for b in self.iter() {
                f.write_str(if b { "1" } else { "0" })?;
            }
        } else {
            write!(f, "{}…", &self.to_hex()[..32])?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// JSON interchange form of a bit string: explicit bit length plus the
/// little-endian byte image as hex or base64 (exactly one must be present).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitEnvelope {
    pub bits: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base64: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextEncoding {
    Hex,
    Base64,
}

impl BitEnvelope {
    pub fn wrap(v: &BitVector, encoding: TextEncoding) -> Self {
        match encoding {
            TextEncoding::Hex => Self {
                bits: v.len(),
                hex: Some(v.to_hex()),
                base64: None,
            },
            TextEncoding::Base64 => Self {
                bits: v.len(),
                hex: None,
                base64: Some(v.to_base64()),
            },
        }
    }

    pub fn unwrap(&self) -> Result<BitVector> {
        match (&self.hex, &self.base64) {
            (Some(h), None) => BitVector::from_hex(h, self.bits),
            (None, Some(b)) => BitVector::from_base64(b, self.bits),
            _ => Err(Error::Decode(
                "envelope must carry exactly one of `hex` or `base64`".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout_is_little_endian() {
        let v = BitVector::from_bits(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(v.to_bytes(), vec![0x01, 0x02]);
        assert_eq!(v.to_hex(), "0102");
    }

    #[test]
    fn tail_bits_stay_clear() {
        let v = BitVector::ones(70);
        assert_eq!(v.count_ones(), 70);
        assert_eq!(v.complement().count_ones(), 0);
        assert!(BitVector::from_hex("ff", 4).is_err());
    }

    #[test]
    fn envelope_requires_one_payload() {
        let env = BitEnvelope {
            bits: 3,
            hex: None,
            base64: None,
        };
        assert!(env.unwrap().is_err());
    }

    #[test]
    fn hamming_rejects_mismatch() {
        assert!(BitVector::zeros(3)
            .hamming_distance(&BitVector::zeros(4))
            .is_err());
    }

    proptest! {
        #[test]
        fn text_roundtrip(bits in proptest::collection::vec(0u8..2, 0..300)) {
            let v = BitVector::from_bits(&bits);
            for enc in [TextEncoding::Hex, TextEncoding::Base64] {
                let env = BitEnvelope::wrap(&v, enc);
                let json = serde_json::to_string(&env).unwrap();
                let back: BitEnvelope = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back.unwrap().unwrap(), v.clone());
            }
        }

        #[test]
        fn slice_concat_roundtrip(bits in proptest::collection::vec(0u8..2, 1..300), cut in 0usize..300) {
            let v = BitVector::from_bits(&bits);
            let at = cut % (bits.len() + 1);
            let (a, b) = v.split_at(at);
            prop_assert_eq!(a.to_bits(), bits[..at].to_vec());
            prop_assert_eq!(a.concat(&b), v);
        }
    }
}
