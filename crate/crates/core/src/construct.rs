//! Bhattacharyya-parameter code construction.
//!
//! Synthetic channel `i` (0-based encoder input position, decoded in natural
//! order) is reached from the physical channel by `n` polarization steps.
//! Reading the bits of `i` from most to least significant gives the steps in
//! the order they are applied: bit 0 takes the degraded ("minus") branch,
//! bit 1 the upgraded ("plus") branch. Equivalently, the children of level
//! entry `i` are `2i` (minus) and `2i + 1` (plus).
//!
//! Values are kept as natural logs because the plus branch squares `Z` at
//! every level and underflows in linear precision long before `n = 18`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{check_len, out_of_range, Error, Result};

/// Largest supported `n` (block length `2^n`).
pub const MAX_LOG2_N: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChannelKind {
    Bsc,
    Bec,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Bsc => "BSC",
            ChannelKind::Bec => "BEC",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bsc" => Ok(ChannelKind::Bsc),
            "bec" => Ok(ChannelKind::Bec),
            other => Err(Error::Decode(format!("unknown channel kind `{other}`"))),
        }
    }
}

/// A memoryless binary-input channel: crossover probability for the BSC,
/// erasure probability for the BEC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub kind: ChannelKind,
    pub p: f64,
}

impl ChannelParams {
    pub fn new(kind: ChannelKind, p: f64) -> Result<Self> {
        let params = Self { kind, p };
        params.validate()?;
        Ok(params)
    }

    pub fn bsc(p: f64) -> Result<Self> {
        Self::new(ChannelKind::Bsc, p)
    }

    pub fn bec(p: f64) -> Result<Self> {
        Self::new(ChannelKind::Bec, p)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ChannelKind::Bsc if !(0.0..=0.5).contains(&self.p) => {
                Err(out_of_range("p", self.p, "0 <= p <= 0.5 for a BSC"))
            }
            ChannelKind::Bec if !(0.0..=1.0).contains(&self.p) => {
                Err(out_of_range("p", self.p, "0 <= p <= 1 for a BEC"))
            }
            _ => Ok(()),
        }
    }
}

/// Bhattacharyya parameter of the unpolarized channel.
pub fn root_z(params: ChannelParams) -> Result<f64> {
    params.validate()?;
    Ok(match params.kind {
        ChannelKind::Bsc => 2.0 * ((1.0 - params.p) * params.p).sqrt(),
        ChannelKind::Bec => params.p,
    })
}

fn check_unit(z: f64) -> Result<()> {
    if (0.0..=1.0).contains(&z) {
        Ok(())
    } else {
        Err(out_of_range("z", z, "0 <= z <= 1"))
    }
}

/// One BSC polarization step: `(z * sqrt(2 - z^2), z^2)`.
pub fn polarize_step_bsc(z: f64) -> Result<(f64, f64)> {
    check_unit(z)?;
    Ok((z * (2.0 - z * z).sqrt(), z * z))
}

/// One BEC polarization step: `(2z - z^2, z^2)`.
pub fn polarize_step_bec(z: f64) -> Result<(f64, f64)> {
    check_unit(z)?;
    Ok((2.0 * z - z * z, z * z))
}

fn log_root_z(params: ChannelParams) -> f64 {
    match params.kind {
        ChannelKind::Bsc => {
            let v = std::f64::consts::LN_2 + 0.5 * (params.p.ln() + (-params.p).ln_1p());
            v.min(0.0)
        }
        ChannelKind::Bec => params.p.ln(),
    }
}

/// Log-domain step, returns `(ln z_minus, ln z_plus)` for `ln z <= 0`.
///
/// `ln(2 - z^2)` is evaluated as `ln_1p(-expm1(2 ln z))`, which stays
/// accurate both when `z^2` underflows and when `z` is within rounding of 1.
#[inline]
pub fn log_polarize_step(kind: ChannelKind, log_z: f64) -> (f64, f64) {
    if log_z == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, f64::NEG_INFINITY);
    }
    let minus = match kind {
        ChannelKind::Bsc => log_z + 0.5 * (-(2.0 * log_z).exp_m1()).ln_1p(),
        ChannelKind::Bec => log_z + (-log_z.exp_m1()).ln_1p(),
    };
    (minus.min(0.0), 2.0 * log_z)
}

/// Per-position `ln Z` values and the positions sorted most reliable first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityProfile {
    pub kind: ChannelKind,
    pub p: f64,
    pub n: u32,
    pub order: Vec<usize>,
    /// In JSON, `null` stands for `ln Z = -inf` (a perfect channel).
    #[serde(with = "log_z_json")]
    pub log_z: Vec<f64>,
}

mod log_z_json {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| x.is_finite().then_some(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|x| x.unwrap_or(f64::NEG_INFINITY))
            .collect())
    }
}

impl ReliabilityProfile {
    pub fn block_len(&self) -> usize {
        1 << self.n
    }

    pub fn z(&self, i: usize) -> f64 {
        self.log_z[i].exp()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let profile: Self = serde_json::from_str(s)?;
        ChannelParams::new(profile.kind, profile.p)?;
        check_len(profile.block_len(), profile.log_z.len())?;
        validate_permutation(&profile.order, profile.block_len())?;
        Ok(profile)
    }

    /// Writes `order` one index per line.
    pub fn write_order<W: Write>(&self, mut w: W) -> Result<()> {
        for i in &self.order {
            writeln!(w, "{i}")?;
        }
        Ok(())
    }
}

/// Reads an index sequence in the one-index-per-line text format. Blank
/// lines and lines starting with `#` are skipped.
pub fn read_order<R: BufRead>(r: R) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let idx = t
            .parse::<usize>()
            .map_err(|e| Error::InvalidSequence(format!("line {}: `{t}`: {e}", lineno + 1)))?;
        out.push(idx);
    }
    Ok(out)
}

pub fn validate_permutation(order: &[usize], n: usize) -> Result<()> {
    check_len(n, order.len())?;
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n {
            return Err(Error::InvalidSequence(format!("index {i} >= {n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidSequence(format!("index {i} repeated")));
        }
    }
    Ok(())
}

fn check_log2_n(n: u32) -> Result<()> {
    if (1..=MAX_LOG2_N).contains(&n) {
        Ok(())
    } else {
        Err(out_of_range("n", n as f64, "1 <= n <= 20"))
    }
}

/// Leaf `ln Z` values after `n` polarization steps, indexed by encoder
/// input position.
pub fn leaf_log_z(params: ChannelParams, n: u32) -> Result<Vec<f64>> {
    params.validate()?;
    check_log2_n(n)?;
    let mut level = vec![log_root_z(params)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(level.len() * 2);
        for &lz in &level {
            let (minus, plus) = log_polarize_step(params.kind, lz);
            next.push(minus);
            next.push(plus);
        }
        level = next;
    }
    Ok(level)
}

/// Builds the reliability profile for a `2^n` block. Ties in `Z` keep the
/// lower index first.
pub fn reliability_sequence(params: ChannelParams, n: u32) -> Result<ReliabilityProfile> {
    let log_z = leaf_log_z(params, n)?;
    let mut order: Vec<usize> = (0..log_z.len()).collect();
    order.sort_by(|&a, &b| log_z[a].total_cmp(&log_z[b]).then(a.cmp(&b)));
    Ok(ReliabilityProfile {
        kind: params.kind,
        p: params.p,
        n,
        order,
        log_z,
    })
}

/// An `(N, K)` polar code: which inputs carry information and what the
/// frozen inputs are pinned to.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarCodeSpec {
    n: u32,
    /// Information positions, most reliable first.
    info: Vec<usize>,
    /// Frozen positions in ascending index order.
    frozen: Vec<usize>,
    /// Value of `frozen[j]` is bit `j`.
    frozen_values: BitVector,
    frozen_mask: BitVector,
    frozen_word: BitVector,
}

impl PolarCodeSpec {
    pub fn new(n: u32, info: Vec<usize>) -> Result<Self> {
        check_log2_n(n)?;
        let big_n = 1usize << n;
        if info.len() > big_n {
            return Err(out_of_range("K", info.len() as f64, "K <= N"));
        }
        let mut frozen_mask = BitVector::ones(big_n);
        for &i in &info {
            if i >= big_n || !frozen_mask.get(i) {
                return Err(Error::InvalidSequence(format!(
                    "information index {i} invalid or repeated"
                )));
            }
            frozen_mask.set(i, false);
        }
        let frozen: Vec<usize> = (0..big_n).filter(|&i| frozen_mask.get(i)).collect();
        Ok(Self {
            n,
            info,
            frozen_values: BitVector::zeros(frozen.len()),
            frozen,
            frozen_mask,
            frozen_word: BitVector::zeros(big_n),
        })
    }

    pub fn with_frozen_values(mut self, values: BitVector) -> Result<Self> {
        check_len(self.frozen.len(), values.len())?;
        let mut word = BitVector::zeros(self.block_len());
        for (j, &pos) in self.frozen.iter().enumerate() {
            word.set(pos, values.get(j));
        }
        self.frozen_values = values;
        self.frozen_word = word;
        Ok(self)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn block_len(&self) -> usize {
        1 << self.n
    }

    pub fn k(&self) -> usize {
        self.info.len()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.block_len() as f64
    }

    pub fn info_set(&self) -> &[usize] {
        &self.info
    }

    pub fn frozen_set(&self) -> &[usize] {
        &self.frozen
    }

    pub fn frozen_values(&self) -> &BitVector {
        &self.frozen_values
    }

    #[inline]
    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen_mask.get(i)
    }

    /// Value pinned at position `i` (0 for information positions).
    #[inline]
    pub fn frozen_value_at(&self, i: usize) -> bool {
        self.frozen_word.get(i)
    }

    /// Length-`N` word holding the frozen values (zero elsewhere).
    pub fn frozen_word(&self) -> &BitVector {
        &self.frozen_word
    }

    pub fn frozen_mask(&self) -> &BitVector {
        &self.frozen_mask
    }
}

/// Takes the `K` most reliable positions as the information set.
pub fn select_frozen(profile: &ReliabilityProfile, k: usize) -> Result<PolarCodeSpec> {
    let big_n = profile.block_len();
    if k > big_n {
        return Err(out_of_range("K", k as f64, "0 <= K <= N"));
    }
    PolarCodeSpec::new(profile.n, profile.order[..k].to_vec())
}

/// Fraction of the worst `ceil(fraction * N)` positions of `profile` that are
/// also among the worst of `reference_order` (both most-reliable-first).
pub fn rs_overlap(
    profile: &ReliabilityProfile,
    reference_order: &[usize],
    frozen_fraction: f64,
) -> Result<f64> {
    let big_n = profile.block_len();
    validate_permutation(reference_order, big_n)?;
    if !(frozen_fraction > 0.0 && frozen_fraction < 1.0) {
        return Err(out_of_range(
            "frozen_fraction",
            frozen_fraction,
            "0 < fraction < 1",
        ));
    }
    let m = ((frozen_fraction * big_n as f64).ceil() as usize).clamp(1, big_n);
    let mut in_ref = vec![false; big_n];
    for &i in &reference_order[big_n - m..] {
        in_ref[i] = true;
    }
    let common = profile.order[big_n - m..]
        .iter()
        .filter(|&&i| in_ref[i])
        .count();
    Ok(common as f64 / m as f64)
}
