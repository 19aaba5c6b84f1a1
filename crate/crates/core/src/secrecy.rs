//! Privacy amplification and finite-key length accounting.
//!
//! The key-length bound is
//!
//! ```text
//! ℓ ≤ N (q − h₂(Q + μ)) − leak_EC − log(2 / (ε_sec² ε_cor))
//! μ = sqrt( (e + 1)(N + e) / (e² N) · log(1 / ε′) )
//! ```
//!
//! with `leak_EC = N − K` for an `(N, K)` polar code. Logarithms are base 2
//! unless the budget selects [`LogBase::E`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{check_len, out_of_range, Result};

/// Binary Shannon entropy in bits. `h2(0) = h2(1) = 0`.
pub fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Two,
    E,
}

impl LogBase {
    #[inline]
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Two => x.log2(),
            LogBase::E => x.ln(),
        }
    }
}

/// Inputs to the finite-key bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecrecyBudget {
    /// Reconciled block length `N`.
    pub n: usize,
    /// Parameter-estimation sample size.
    pub e: usize,
    /// Information bits of the polar code.
    pub k: usize,
    /// Tolerated error rate `Q_max`.
    pub qber: f64,
    pub eps_cor: f64,
    pub eps_sec: f64,
    pub eps_prime: f64,
    /// Source preparation quality.
    pub q: f64,
    #[serde(default)]
    pub log_base: LogBase,
}

pub const DEFAULT_EPS_COR: f64 = 0.05;
pub const DEFAULT_EPS_SEC: f64 = 0.5e-10;

impl SecrecyBudget {
    /// ε_cor = 0.05, ε_sec = 0.5e-10, ε′ = ε_sec / 4, q = 1, e = ⌊N / 3⌋.
    pub fn with_defaults(n: usize, k: usize, qber: f64) -> Self {
        Self {
            n,
            e: (n / 3).max(1),
            k,
            qber,
            eps_cor: DEFAULT_EPS_COR,
            eps_sec: DEFAULT_EPS_SEC,
            eps_prime: DEFAULT_EPS_SEC / 4.0,
            q: 1.0,
            log_base: LogBase::Two,
        }
    }

    /// Replaces ε_sec and keeps ε′ = ε_sec / 4.
    pub fn with_eps_sec(mut self, eps_sec: f64) -> Self {
        self.eps_sec = eps_sec;
        self.eps_prime = eps_sec / 4.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(out_of_range(name, v, "0 < eps <= 1"))
            }
        };
        unit("eps_cor", self.eps_cor)?;
        unit("eps_sec", self.eps_sec)?;
        unit("eps_prime", self.eps_prime)?;
        if self.e == 0 {
            return Err(out_of_range("e", 0.0, "e >= 1"));
        }
        if self.n == 0 {
            return Err(out_of_range("N", 0.0, "N >= 1"));
        }
        if self.k > self.n {
            return Err(out_of_range("K", self.k as f64, "K <= N"));
        }
        if !(0.0..=1.0).contains(&self.qber) {
            return Err(out_of_range("qber", self.qber, "0 <= qber <= 1"));
        }
        Ok(())
    }

    pub fn leak_ec(&self) -> usize {
        self.n - self.k
    }

    fn log(&self, x: f64) -> f64 {
        self.log_base.log(x)
    }
}

/// Finite-size penalty on the observed error rate.
pub fn mu(budget: &SecrecyBudget) -> f64 {
    let n = budget.n as f64;
    let e = budget.e as f64;
    let factor = (e + 1.0) * (n + e) / (e * e * n);
    (factor * budget.log(1.0 / budget.eps_prime))
        .max(0.0)
        .sqrt()
}

/// `N (q − h₂(Q + μ))`, the smooth min-entropy lower bound. `None` once
/// `Q + μ ≥ 1/2`.
pub fn min_entropy_bound(budget: &SecrecyBudget) -> Option<f64> {
    let arg = budget.qber + mu(budget);
    if arg >= 0.5 {
        None
    } else {
        Some(budget.n as f64 * (budget.q - h2(arg)))
    }
}

/// Real-valued right-hand side of the key-length inequality.
pub fn secret_key_length_bound(budget: &SecrecyBudget) -> Option<f64> {
    let h = min_entropy_bound(budget)?;
    let penalty = budget.log(2.0 / (budget.eps_sec * budget.eps_sec * budget.eps_cor));
    Some(h - budget.leak_ec() as f64 - penalty)
}

/// Same bound assembled step by step: error-correction leakage, the
/// verification hash's `log(2/ε_cor)`, then the leftover-hash cost
/// `2 log(1/ε_sec)`.
pub fn secret_key_length_chain_form(budget: &SecrecyBudget) -> Option<f64> {
    let h = min_entropy_bound(budget)?;
    let after_ec = h - budget.leak_ec() as f64 - budget.log(2.0 / budget.eps_cor);
    Some(after_ec - 2.0 * budget.log(1.0 / budget.eps_sec))
}

/// Largest integer key length satisfying the bound, or 0 when none does.
pub fn secret_key_length(budget: &SecrecyBudget) -> usize {
    match secret_key_length_bound(budget) {
        Some(b) if b > 0.0 => b.floor() as usize,
        _ => 0,
    }
}

/// Verification tag length `⌈log₂(1/ε_cor)⌉`.
pub fn tag_length(eps_cor: f64) -> usize {
    (1.0 / eps_cor).log2().ceil().max(0.0) as usize
}

/// Secrecy content per processed bit, `(1 − FER)(K/N − h₂(p))`.
pub fn secrecy_content_gamma(k: usize, n: usize, fer: f64, p: f64) -> f64 {
    (1.0 - fer) * (k as f64 / n as f64 - h2(p))
}

/// `(1 − FER)(K − N h₂(p))`, the block-level form of γ.
pub fn secret_bits_per_block(k: usize, n: usize, fer: f64, p: f64) -> f64 {
    (1.0 - fer) * (k as f64 - n as f64 * h2(p))
}

/// Asymptotic rate `1 − 2 h₂(p)` (may be negative).
pub fn infinite_key_rate(p: f64) -> f64 {
    1.0 - 2.0 * h2(p)
}

/// Toeplitz hash `{0,1}^n → {0,1}^ℓ` with `T[i][j] = s[i − j + n − 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzExtractor {
    input_len: usize,
    output_len: usize,
    seed: BitVector,
}

impl ToeplitzExtractor {
    pub fn new(input_len: usize, output_len: usize, seed: BitVector) -> Result<Self> {
        if output_len > input_len {
            return Err(out_of_range(
                "output_len",
                output_len as f64,
                "output_len <= input_len",
            ));
        }
        check_len(Self::seed_len(input_len, output_len), seed.len())?;
        Ok(Self {
            input_len,
            output_len,
            seed,
        })
    }

    pub fn seed_len(input_len: usize, output_len: usize) -> usize {
        if output_len == 0 {
            0
        } else {
            input_len + output_len - 1
        }
    }

    /// Uniform seed drawn from `rng`.
    pub fn random<R: RngCore + ?Sized>(
        input_len: usize,
        output_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let seed = BitVector::random(Self::seed_len(input_len, output_len), rng);
        Self::new(input_len, output_len, seed)
    }

    /// Seed bits expanded from a 32-byte public seed; `stream` separates
    /// independent hashes derived from the same seed.
    pub fn from_public_seed(
        input_len: usize,
        output_len: usize,
        seed: &[u8; 32],
        stream: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha12Rng::from_seed(*seed);
        rng.set_stream(stream);
        Self::random(input_len, output_len, &mut rng)
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn seed(&self) -> &BitVector {
        &self.seed
    }

    /// `T · key` over GF(2).
    pub fn extract(&self, key: &BitVector) -> Result<BitVector> {
        check_len(self.input_len, key.len())?;
        let n = self.input_len;
        let mut out = BitVector::zeros(self.output_len);
        if self.output_len == 0 {
            return Ok(out);
        }
        // out_i = XOR_k s[i + k] · key[n − 1 − k]
        let rev: Vec<bool> = (0..n).map(|k| key.get(n - 1 - k)).collect();
        let rev = BitVector::from_bools(&rev);
        let rev_words = rev.words();
        for i in 0..self.output_len {
            let mut acc = 0u64;
            for (w, &kw) in rev_words.iter().enumerate() {
                acc ^= self.seed.word_at(i + 64 * w) & kw;
            }
            if acc.count_ones() % 2 == 1 {
                out.set(i, true);
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`ToeplitzExtractor::extract`].
pub fn extract(key: &BitVector, ext: &ToeplitzExtractor) -> Result<BitVector> {
    ext.extract(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::derive_rng;
    use proptest::prelude::*;

    fn dense_toeplitz(ext: &ToeplitzExtractor, key: &BitVector) -> BitVector {
        let n = ext.input_len();
        let bits: Vec<bool> = (0..ext.output_len())
            .map(|i| {
                (0..n).fold(false, |acc, j| {
                    acc ^ (ext.seed().get(i + n - 1 - j) & key.get(j))
                })
            })
            .collect();
        BitVector::from_bools(&bits)
    }

    #[test]
    fn h2_values() {
        assert_eq!(h2(0.0), 0.0);
        assert_eq!(h2(0.5), 1.0);
        assert!((h2(0.03) - 0.1943918578315762).abs() < 1e-14);
        assert!((h2(0.11) - 0.499915958164528).abs() < 1e-14);
    }

    #[test]
    fn mu_examples() {
        let mut b = SecrecyBudget::with_defaults(1024, 512, 0.02);
        assert_eq!(b.e, 341);
        b.eps_prime = 1.25e-11;
        assert!((mu(&b) - 0.3768295341782032).abs() < 1e-12);
        b.eps_prime = 1.0;
        assert_eq!(mu(&b), 0.0);
    }

    #[test]
    fn mu_shrinks_with_block_length() {
        let mut prev = f64::INFINITY;
        for n in 10..=20 {
            let m = mu(&SecrecyBudget::with_defaults(1 << n, 0, 0.0));
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn key_length_examples() {
        // Q + μ past 1/2
        assert_eq!(
            secret_key_length(&SecrecyBudget::with_defaults(4096, 4096, 0.45)),
            0
        );
        // N = 2^16 at the p = 0.03 operating point
        let n = 1 << 16;
        let k = 38647;
        let b = SecrecyBudget::with_defaults(n, k, 0.03);
        assert!((mu(&b) - 0.047018889496062075).abs() < 1e-12);
        assert_eq!(secret_key_length(&b), 12910);
    }

    #[test]
    fn tag_length_examples() {
        assert_eq!(tag_length(0.05), 5);
        assert_eq!(tag_length(0.5), 1);
        assert_eq!(tag_length(1.0 / 1024.0), 10);
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(secrecy_content_gamma(70, 100, 1.0, 0.03), 0.0);
        assert!((secrecy_content_gamma(70, 100, 0.2, 0.0) - 0.56).abs() < 1e-15);
        assert!((secrecy_content_gamma(70, 100, 0.05, 0.03) - 0.48032773506000254).abs() < 1e-12);
    }

    #[test]
    fn infinite_rate_examples() {
        assert_eq!(infinite_key_rate(0.0), 1.0);
        assert_eq!(infinite_key_rate(0.5), -1.0);
        assert!((infinite_key_rate(0.11) - 0.0001680836709440081).abs() < 1e-12);
    }

    #[test]
    fn extractor_identity_and_zero() {
        let n = 100;
        let mut seed = BitVector::zeros(2 * n - 1);
        seed.set(n - 1, true);
        let ext = ToeplitzExtractor::new(n, n, seed).unwrap();
        let mut rng = derive_rng(1, 1, 1);
        let key = BitVector::random(n, &mut rng);
        assert_eq!(ext.extract(&key).unwrap(), key);
        assert_eq!(
            ext.extract(&BitVector::zeros(n)).unwrap(),
            BitVector::zeros(n)
        );

        let empty = ToeplitzExtractor::random(n, 0, &mut rng).unwrap();
        assert!(empty.extract(&key).unwrap().is_empty());
        assert!(ToeplitzExtractor::new(4, 5, BitVector::zeros(8)).is_err());
        assert!(ToeplitzExtractor::new(4, 2, BitVector::zeros(4)).is_err());
    }

    #[test]
    fn public_seed_streams_differ() {
        let seed = [7u8; 32];
        let a = ToeplitzExtractor::from_public_seed(300, 20, &seed, 0).unwrap();
        let b = ToeplitzExtractor::from_public_seed(300, 20, &seed, 1).unwrap();
        assert_ne!(a.seed(), b.seed());
        assert_eq!(
            a,
            ToeplitzExtractor::from_public_seed(300, 20, &seed, 0).unwrap()
        );
    }

    proptest! {
        #[test]
        fn packed_extract_matches_dense(n in 1usize..200, l_frac in 0.0f64..1.0, s in any::<u64>()) {
            let l = ((n as f64) * l_frac) as usize;
            let mut rng = derive_rng(s, 0, 0);
            let ext = ToeplitzExtractor::random(n, l, &mut rng).unwrap();
            let key = BitVector::random(n, &mut rng);
            prop_assert_eq!(ext.extract(&key).unwrap(), dense_toeplitz(&ext, &key));
        }

        #[test]
        fn chain_form_agrees(
            logn in 10u32..20,
            rate in 0.0f64..1.0,
            qber in 0.0f64..0.12,
            eps_cor in 1e-6f64..0.5,
            eps_sec_exp in -15.0f64..-1.0,
        ) {
            let n = 1usize << logn;
            let mut b = SecrecyBudget::with_defaults(n, (rate * n as f64) as usize, qber)
                .with_eps_sec(10f64.powf(eps_sec_exp));
            b.eps_cor = eps_cor;
            match (secret_key_length_bound(&b), secret_key_length_chain_form(&b)) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0)),
                (None, None) => {}
                other => prop_assert!(false, "forms disagree: {:?}", other),
            }
        }

        #[test]
        fn key_length_monotone(logn in 10u32..19, k_frac in 0.3f64..1.0, q in 0.0f64..0.1, dq in 0.0f64..0.02) {
            let n = 1usize << logn;
            let k = (k_frac * n as f64) as usize;
            let base = secret_key_length(&SecrecyBudget::with_defaults(n, k, q));
            prop_assert!(secret_key_length(&SecrecyBudget::with_defaults(n, k, q + dq)) <= base);
            prop_assert!(secret_key_length(&SecrecyBudget::with_defaults(n, (k + n / 64).min(n), q)) >= base);
            let k2 = (k_frac * (2 * n) as f64) as usize;
            prop_assert!(secret_key_length(&SecrecyBudget::with_defaults(2 * n, k2, q)) >= base);
        }

        #[test]
        fn gamma_scales_to_block_form(k in 0usize..4096, fer in 0.0f64..1.0, p in 0.0f64..0.5) {
            let n = 4096;
            let g = secrecy_content_gamma(k, n, fer, p) * n as f64;
            prop_assert!((g - secret_bits_per_block(k, n, fer, p)).abs() < 1e-9);
        }
    }
}
