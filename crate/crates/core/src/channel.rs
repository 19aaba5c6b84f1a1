//! Seeded channel noise and QBER bookkeeping.
//!
//! Every random draw comes from a ChaCha12 generator keyed by
//! `(seed, stream_id)` and positioned on ChaCha stream `nonce`, so the
//! realization for trial `k` is available without generating trials
//! `0..k`. Callers own the nonce (usually the trial index).

use rand::distributions::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::construct::{ChannelKind, ChannelParams};
use crate::error::{check_len, out_of_range, Error, Result};

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, stream_id, nonce)`.
pub fn derive_rng(seed: u64, stream_id: u64, nonce: u64) -> ChaCha12Rng {
    let a = mix64(seed);
    let b = mix64(a ^ mix64(stream_id ^ 0xD1B5_4A32_D192_ED03));
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        let word = mix64(b.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ a);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(nonce);
    rng
}

/// Immutable description of a noisy channel realization family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelInstance {
    pub params: ChannelParams,
    pub seed: u64,
    pub stream_id: u64,
}

impl ChannelInstance {
    pub fn new(params: ChannelParams, seed: u64, stream_id: u64) -> Self {
        Self {
            params,
            seed,
            stream_id,
        }
    }

    pub fn rng(&self, nonce: u64) -> ChaCha12Rng {
        derive_rng(self.seed, self.stream_id, nonce)
    }
}

/// Flips each bit independently with probability `p` (BSC only).
pub fn transmit(x: &BitVector, ch: &ChannelInstance, nonce: u64) -> Result<BitVector> {
    ch.params.validate()?;
    if ch.params.kind != ChannelKind::Bsc {
        return Err(Error::WrongChannel { expected: "BSC" });
    }
    let mut y = x.clone();
    if ch.params.p == 0.0 {
        return Ok(y);
    }
    let flip = Bernoulli::new(ch.params.p).map_err(|_| out_of_range("p", ch.params.p, "[0, 1]"))?;
    let mut rng = ch.rng(nonce);
    for i in 0..y.len() {
        if flip.sample(&mut rng) {
            y.flip(i);
        }
    }
    Ok(y)
}

/// Erases each bit independently with probability `p` (BEC only);
/// `None` marks an erasure.
pub fn transmit_erasures(
    x: &BitVector,
    ch: &ChannelInstance,
    nonce: u64,
) -> Result<Vec<Option<bool>>> {
    ch.params.validate()?;
    if ch.params.kind != ChannelKind::Bec {
        return Err(Error::WrongChannel { expected: "BEC" });
    }
    let erase =
        Bernoulli::new(ch.params.p).map_err(|_| out_of_range("p", ch.params.p, "[0, 1]"))?;
    let mut rng = ch.rng(nonce);
    Ok(x.iter()
        .map(|b| {
            if erase.sample(&mut rng) {
                None
            } else {
                Some(b)
            }
        })
        .collect())
}

/// Fraction of positions where `x` and `y` differ.
pub fn measure_qber(x: &BitVector, y: &BitVector) -> Result<f64> {
    check_len(x.len(), y.len())?;
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(x.hamming_distance(y)? as f64 / x.len() as f64)
}

/// How the QBER fed into key-length accounting is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QberMode {
    /// Use the channel's true `p`.
    #[default]
    Exact,
    /// Compare the `e` estimation bits and use the observed error fraction.
    Estimated,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bsc(p: f64) -> ChannelInstance {
        ChannelInstance::new(ChannelParams::bsc(p).unwrap(), 42, 7)
    }

    #[test]
    fn noiseless_is_identity() {
        let mut rng = derive_rng(1, 2, 3);
        let x = BitVector::random(1000, &mut rng);
        assert_eq!(transmit(&x, &bsc(0.0), 0).unwrap(), x);
    }

    #[test]
    fn rejects_p_above_half_and_bec() {
        let ch = ChannelInstance {
            params: ChannelParams {
                kind: ChannelKind::Bsc,
                p: 1.0,
            },
            seed: 0,
            stream_id: 0,
        };
        assert!(transmit(&BitVector::zeros(8), &ch, 0).is_err());
        let bec = ChannelInstance::new(ChannelParams::bec(0.2).unwrap(), 0, 0);
        assert!(matches!(
            transmit(&BitVector::zeros(8), &bec, 0),
            Err(Error::WrongChannel { .. })
        ));
        assert!(transmit_erasures(&BitVector::zeros(8), &bsc(0.1), 0).is_err());
    }

    #[test]
    fn flip_rate_within_three_sigma() {
        let n = 100_000;
        let x = BitVector::zeros(n);
        let y = transmit(&x, &bsc(0.1), 0).unwrap();
        let q = measure_qber(&x, &y).unwrap();
        let sigma = (0.1 * 0.9 / n as f64).sqrt();
        assert!((q - 0.1).abs() <= 3.0 * sigma, "qber {q}");
    }

    #[test]
    fn erasure_rate_within_three_sigma() {
        let n = 100_000;
        let ch = ChannelInstance::new(ChannelParams::bec(0.3).unwrap(), 5, 1);
        let out = transmit_erasures(&BitVector::ones(n), &ch, 0).unwrap();
        let frac = out.iter().filter(|b| b.is_none()).count() as f64 / n as f64;
        assert!((frac - 0.3).abs() <= 3.0 * (0.21 / n as f64).sqrt());
        assert!(out.iter().flatten().all(|&b| b));
    }

    #[test]
    fn reproducible_per_seed_stream_nonce() {
        let x = BitVector::zeros(4096);
        let a = transmit(&x, &bsc(0.2), 9).unwrap();
        assert_eq!(a, transmit(&x, &bsc(0.2), 9).unwrap());
        assert_ne!(a, transmit(&x, &bsc(0.2), 10).unwrap());
        let other = ChannelInstance::new(ChannelParams::bsc(0.2).unwrap(), 42, 8);
        assert_ne!(a, transmit(&x, &other, 9).unwrap());
    }

    #[test]
    fn independent_streams_chi_square() {
        // 2x2 contingency of flips on stream A vs stream B at the same
        // positions; chi-square with 1 dof should sit below 10.83 (p = 0.001).
        let n = 50_000;
        let x = BitVector::zeros(n);
        let a = transmit(
            &x,
            &ChannelInstance::new(ChannelParams::bsc(0.3).unwrap(), 1, 100),
            0,
        )
        .unwrap();
        let b = transmit(
            &x,
            &ChannelInstance::new(ChannelParams::bsc(0.3).unwrap(), 1, 101),
            0,
        )
        .unwrap();
        let mut table = [[0f64; 2]; 2];
        for (ai, bi) in a.iter().zip(b.iter()) {
            table[ai as usize][bi as usize] += 1.0;
        }
        let total = n as f64;
        let mut chi2 = 0.0;
        for (r, row) in table.iter().enumerate() {
            for (c, &obs) in row.iter().enumerate() {
                let exp = (table[r][0] + table[r][1]) * (table[0][c] + table[1][c]) / total;
                chi2 += (obs - exp).powi(2) / exp;
            }
        }
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn qber_examples() {
        let x = BitVector::from_bits(&[0, 0, 0, 0]);
        assert_eq!(measure_qber(&x, &x).unwrap(), 0.0);
        assert_eq!(measure_qber(&x, &x.complement()).unwrap(), 1.0);
        assert_eq!(
            measure_qber(&x, &BitVector::from_bits(&[0, 1, 0, 1])).unwrap(),
            0.5
        );
        assert!(measure_qber(&x, &BitVector::zeros(3)).is_err());
    }
}
