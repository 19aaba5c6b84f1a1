//! Polar encoding `x = u · B_N · F^{⊗n}` and successive-cancellation decoding.
//!
//! Because `B_N` commutes with `F^{⊗n}`, the codeword equals `(u · F^{⊗n})`
//! with its positions bit-reversed. The decoder undoes that output
//! permutation on the channel LLRs and then runs the natural-order SC
//! recursion, so decision `i` sees exactly the synthetic channel that the
//! construction module indexes as `i`.

use crate::bits::BitVector;
use crate::construct::{ChannelKind, ChannelParams, PolarCodeSpec};
use crate::error::{check_len, Error, Result};

/// Channel LLRs beyond this magnitude are clamped before decoding so that
/// the `g` update never sees `inf - inf`.
const LLR_CAP: f64 = 1e12;

/// Decoder-side view of the channel output: `ln P(y|0) / P(y|1)` per position.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftInput {
    pub llr: Vec<f64>,
}

impl SoftInput {
    pub fn len(&self) -> usize {
        self.llr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.llr.is_empty()
    }
}

/// Check-node rule used by the SC recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckNode {
    /// `2 atanh(tanh(a/2) tanh(b/2))`.
    #[default]
    Exact,
    /// `sign(a) sign(b) min(|a|, |b|)`.
    MinSum,
}

fn log2_len(len: usize) -> Result<u32> {
    if len == 0 || !len.is_power_of_two() {
        Err(Error::NotPowerOfTwo(len))
    } else {
        Ok(len.trailing_zeros())
    }
}

#[inline]
fn reverse_bits(i: usize, n: u32) -> usize {
    if n == 0 {
        0
    } else {
        i.reverse_bits() >> (usize::BITS - n)
    }
}

/// `out[i] = v[rev_n(i)]` where `rev_n` reverses the `n`-bit expansion of `i`.
pub fn bit_reversal_permute(v: &BitVector) -> Result<BitVector> {
    let n = log2_len(v.len())?;
    let mut out = BitVector::zeros(v.len());
    for i in 0..v.len() {
        if v.get(reverse_bits(i, n)) {
            out.set(i, true);
        }
    }
    Ok(out)
}

fn bit_reverse_slice<T: Copy>(v: &[T], n: u32) -> Vec<T> {
    (0..v.len()).map(|i| v[reverse_bits(i, n)]).collect()
}

/// In-place `v ← v · F^{⊗n}` on packed words.
fn kernel_transform(v: &mut BitVector) {
    const MASKS: [u64; 6] = [
        0x5555_5555_5555_5555,
        0x3333_3333_3333_3333,
        0x0F0F_0F0F_0F0F_0F0F,
        0x00FF_00FF_00FF_00FF,
        0x0000_FFFF_0000_FFFF,
        0x0000_0000_FFFF_FFFF,
    ];
    let len = v.len();
    let words = v.words_mut();
    // Butterflies inside one word: the lower half of each 2h block absorbs
    // the upper half.
    for (s, &mask) in MASKS.iter().enumerate() {
        let h = 1usize << s;
        if h >= len {
            break;
        }
        for w in words.iter_mut() {
            *w ^= (*w >> h) & mask;
        }
    }
    // Butterflies across words.
    let mut hw = 1;
    while hw < words.len() {
        for block in words.chunks_mut(2 * hw) {
            let (lo, hi) = block.split_at_mut(hw);
            for (a, b) in lo.iter_mut().zip(hi.iter()) {
                *a ^= *b;
            }
        }
        hw *= 2;
    }
}

/// `u · G_N` with no frozen-bit constraint. Self-inverse.
pub fn polar_transform(u: &BitVector) -> Result<BitVector> {
    let mut x = bit_reversal_permute(u)?;
    kernel_transform(&mut x);
    Ok(x)
}

/// Encodes a full input word whose frozen positions carry the frozen values.
pub fn encode(u: &BitVector, spec: &PolarCodeSpec) -> Result<BitVector> {
    check_len(spec.block_len(), u.len())?;
    let mask = spec.frozen_mask().words();
    let fixed = spec.frozen_word().words();
    for (w, ((a, b), m)) in u.words().iter().zip(fixed).zip(mask).enumerate() {
        let bad = (a ^ b) & m;
        if bad != 0 {
            return Err(Error::FrozenMismatch {
                index: 64 * w + bad.trailing_zeros() as usize,
            });
        }
    }
    polar_transform(u)
}

/// Places `K` information bits on the information positions, best channel
/// first, and the frozen values everywhere else.
pub fn assemble_message(info_bits: &BitVector, spec: &PolarCodeSpec) -> Result<BitVector> {
    check_len(spec.k(), info_bits.len())?;
    let mut u = spec.frozen_word().clone();
    for (rank, &pos) in spec.info_set().iter().enumerate() {
        u.set(pos, info_bits.get(rank));
    }
    Ok(u)
}

/// Inverse of [`assemble_message`]: reads the information bits back out.
pub fn extract_info(u: &BitVector, spec: &PolarCodeSpec) -> Result<BitVector> {
    check_len(spec.block_len(), u.len())?;
    let mut out = BitVector::zeros(spec.k());
    for (rank, &pos) in spec.info_set().iter().enumerate() {
        out.set(rank, u.get(pos));
    }
    Ok(out)
}

/// BSC log-likelihood ratios `(1 - 2y) ln((1 - p) / p)`.
pub fn channel_llr(received: &BitVector, params: ChannelParams) -> Result<SoftInput> {
    params.validate()?;
    if params.kind != ChannelKind::Bsc {
        return Err(Error::WrongChannel { expected: "BSC" });
    }
    let mag = if params.p == 0.0 {
        f64::INFINITY
    } else {
        (1.0 - params.p).ln() - params.p.ln()
    };
    Ok(SoftInput {
        llr: received
            .iter()
            .map(|b| if b { -mag } else { mag })
            .collect(),
    })
}

/// Exact check-node combine `2 atanh(tanh(a/2) tanh(b/2))`.
///
/// The sign is taken from the inputs so it is never lost to rounding. The
/// magnitude uses the tanh form while one input is small and
/// `min(|a|,|b|) + ln(1 + e^{-(|a|+|b|)}) - ln(1 + e^{-||a|-|b||})` otherwise,
/// which never saturates.
#[inline]
pub fn check_node_exact(a: f64, b: f64) -> f64 {
    let (aa, bb) = (a.abs(), b.abs());
    let sign = if (a < 0.0) != (b < 0.0) { -1.0 } else { 1.0 };
    let lo = aa.min(bb);
    let mag = if lo.is_infinite() || aa.is_infinite() || bb.is_infinite() {
        lo
    } else if lo < 1.0 {
        2.0 * ((aa / 2.0).tanh() * (bb / 2.0).tanh()).atanh()
    } else {
        lo + (-(aa + bb)).exp().ln_1p() - (-(aa - bb).abs()).exp().ln_1p()
    };
    sign * mag
}

#[inline]
pub fn check_node_min_sum(a: f64, b: f64) -> f64 {
    let sign = if (a < 0.0) != (b < 0.0) { -1.0 } else { 1.0 };
    sign * a.abs().min(b.abs())
}

#[inline]
fn variable_node(a: f64, b: f64, partial: u8) -> f64 {
    if partial == 0 {
        b + a
    } else {
        b - a
    }
}

/// Natural-order SC recursion over `x = u · F^{⊗n}`.
///
/// `llr` has length `L`; `x_out` receives the re-encoded partial sums of
/// this subtree; `scratch` needs at least `L` entries. `decide` is called
/// once per leaf in increasing index order with the leaf LLR.
fn sc_node<D>(
    llr: &[f64],
    x_out: &mut [u8],
    scratch: &mut [f64],
    base: usize,
    rule: CheckNode,
    decide: &mut D,
) where
    D: FnMut(usize, f64) -> u8,
{
    let len = llr.len();
    if len == 1 {
        x_out[0] = decide(base, llr[0]);
        return;
    }
    let half = len / 2;
    let (cur, rest) = scratch.split_at_mut(half);
    let (top, bottom) = llr.split_at(half);
    match rule {
        CheckNode::Exact => {
            for ((c, &a), &b) in cur.iter_mut().zip(top).zip(bottom) {
                *c = check_node_exact(a, b);
            }
        }
        CheckNode::MinSum => {
            for ((c, &a), &b) in cur.iter_mut().zip(top).zip(bottom) {
                *c = check_node_min_sum(a, b);
            }
        }
    }
    let (x_left, x_right) = x_out.split_at_mut(half);
    sc_node(cur, x_left, rest, base, rule, decide);
    for (((c, &a), &b), &s) in cur.iter_mut().zip(top).zip(bottom).zip(x_left.iter()) {
        *c = variable_node(a, b, s);
    }
    sc_node(cur, x_right, rest, base + half, rule, decide);
    for (l, r) in x_left.iter_mut().zip(x_right.iter()) {
        *l ^= *r;
    }
}

fn run_sc<D>(soft: &SoftInput, rule: CheckNode, mut decide: D) -> Result<()>
where
    D: FnMut(usize, f64) -> u8,
{
    let n = log2_len(soft.len())?;
    let llr: Vec<f64> = bit_reverse_slice(&soft.llr, n)
        .into_iter()
        .map(|v| v.clamp(-LLR_CAP, LLR_CAP))
        .collect();
    let mut x = vec![0u8; llr.len()];
    let mut scratch = vec![0.0; llr.len()];
    sc_node(&llr, &mut x, &mut scratch, 0, rule, &mut decide);
    Ok(())
}

/// SC decoding with the exact check-node rule.
pub fn sc_decode(soft: &SoftInput, spec: &PolarCodeSpec) -> Result<BitVector> {
    sc_decode_with(soft, spec, CheckNode::Exact)
}

/// SC decoding returning the estimated input word `û`. Frozen positions are
/// pinned; information positions take bit 1 only on a strictly negative LLR.
pub fn sc_decode_with(
    soft: &SoftInput,
    spec: &PolarCodeSpec,
    rule: CheckNode,
) -> Result<BitVector> {
    check_len(spec.block_len(), soft.len())?;
    let mut u = BitVector::zeros(spec.block_len());
    run_sc(soft, rule, |i, llr| {
        let bit = if spec.is_frozen(i) {
            spec.frozen_value_at(i)
        } else {
            llr < 0.0
        };
        if bit {
            u.set(i, true);
        }
        bit as u8
    })?;
    Ok(u)
}

/// Genie-aided SC: every decision is fed the true `u_i`, and the LLR seen
/// by each leaf is returned. `llr_i < 0` (or `== 0` when `u_i = 1`) marks
/// an error on synthetic channel `i`.
pub fn genie_aided_llrs(soft: &SoftInput, truth: &BitVector, rule: CheckNode) -> Result<Vec<f64>> {
    check_len(truth.len(), soft.len())?;
    let mut out = vec![0.0; soft.len()];
    run_sc(soft, rule, |i, llr| {
        out[i] = llr;
        truth.bit(i)
    })?;
    Ok(out)
}
