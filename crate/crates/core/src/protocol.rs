//! One-way reconciliation sessions between Alice and Bob.
//!
//! Alice masks a fresh polar codeword with her raw key (`ct = W ⊕ X^N`) and
//! sends it over the authenticated classical channel. Bob's view
//! `ct ⊕ Y^N = W ⊕ (X^N ⊕ Y^N)` is the codeword seen through the quantum
//! channel's error pattern, so SC decoding followed by re-encoding recovers
//! `W` and hence `X^N`.
//!
//! [`Mode::Full`] adds a Toeplitz verification tag of `⌈log₂(1/ε_cor)⌉` bits
//! and a public seed for privacy amplification. [`Mode::NakassisMink`] sends
//! only `ct` and Bob accepts whatever he decodes.
//!
//! Messages cross a [`Transport`] as frames: a 4-byte little-endian length
//! followed by a UTF-8 JSON envelope
//! `{"ct": b64, "tag": b64, "seed": b64, "params": {"n", "K", "epsilon_cor"}}`.

use std::collections::VecDeque;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::RngCore;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::channel::{derive_rng, measure_qber, transmit, ChannelInstance, QberMode};
use crate::codec::{assemble_message, channel_llr, encode, sc_decode_with, CheckNode};
use crate::construct::{
    reliability_sequence, select_frozen, ChannelKind, ChannelParams, PolarCodeSpec,
};
use crate::error::{check_len, out_of_range, Error, Result};
use crate::secrecy::{
    secret_key_length, tag_length, SecrecyBudget, ToeplitzExtractor, DEFAULT_EPS_COR,
    DEFAULT_EPS_SEC,
};

/// Seed streams; the trial index is the nonce on each.
pub const STREAM_RAW_KEY: u64 = 1;
pub const STREAM_QUANTUM: u64 = 2;
pub const STREAM_ALICE: u64 = 3;

/// Hash streams expanded from the public seed.
const TAG_STREAM: u64 = 0;
const PA_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    NakassisMink,
}

/// Alice's side of one session.
#[derive(Debug, Clone)]
pub struct AliceState {
    /// `X^{N+e}`: reconciliation bits first, then estimation bits.
    pub raw_key: BitVector,
    pub spec: Arc<PolarCodeSpec>,
    pub eps_cor: f64,
    pub mode: Mode,
    /// Source of the information bits and the public hash seed.
    pub rng: ChaCha12Rng,
}

/// Bob's side of one session.
#[derive(Debug, Clone)]
pub struct BobState {
    /// `Y^{N+e}`, split like Alice's key.
    pub received_key: BitVector,
    pub spec: Arc<PolarCodeSpec>,
    /// Crossover probability used for the decoder LLRs.
    pub decoder_p: f64,
    pub check_node: CheckNode,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageParams {
    pub n: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub epsilon_cor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconcileMessage {
    pub ct: BitVector,
    /// Empty in [`Mode::NakassisMink`].
    pub verify_tag: BitVector,
    /// 32-byte public seed for the verification and amplification hashes;
    /// empty in [`Mode::NakassisMink`].
    pub extractor_seed: Vec<u8>,
    pub params: MessageParams,
}

#[derive(Serialize, Deserialize)]
struct WireEnvelope {
    ct: String,
    tag: String,
    seed: String,
    params: MessageParams,
}

impl ReconcileMessage {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&WireEnvelope {
            ct: self.ct.to_base64(),
            tag: self.verify_tag.to_base64(),
            seed: BASE64.encode(&self.extractor_seed),
            params: self.params,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: WireEnvelope = serde_json::from_str(s)?;
        let params = env.params;
        if params.n == 0 || params.n > crate::construct::MAX_LOG2_N {
            return Err(out_of_range("n", params.n as f64, "1 <= n <= 20"));
        }
        if !(params.epsilon_cor > 0.0 && params.epsilon_cor <= 1.0) {
            return Err(out_of_range(
                "epsilon_cor",
                params.epsilon_cor,
                "0 < eps <= 1",
            ));
        }
        let tag_bits = if env.tag.is_empty() {
            0
        } else {
            tag_length(params.epsilon_cor)
        };
        let extractor_seed = BASE64
            .decode(env.seed.as_bytes())
            .map_err(|e| Error::Decode(e.to_string()))?;
        if !(extractor_seed.is_empty() || extractor_seed.len() == 32) {
            return Err(Error::Decode(format!(
                "seed must be 0 or 32 bytes, got {}",
                extractor_seed.len()
            )));
        }
        Ok(Self {
            ct: BitVector::from_base64(&env.ct, 1 << params.n)?,
            verify_tag: BitVector::from_base64(&env.tag, tag_bits)?,
            extractor_seed,
            params,
        })
    }

    /// Length-prefixed wire frame.
    pub fn to_frame(&self) -> Result<Vec<u8>> {
        let json = self.to_json()?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Decode("frame too large".into()))?;
        let mut out = Vec::with_capacity(4 + json.len());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        Ok(out)
    }

    pub fn from_frame(frame: &[u8]) -> Result<Self> {
        if frame.len() < 4 {
            return Err(Error::Decode("truncated frame header".into()));
        }
        let len = u32::from_le_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
        check_len(len, frame.len() - 4)?;
        let json = std::str::from_utf8(&frame[4..]).map_err(|e| Error::Decode(e.to_string()))?;
        Self::from_json(json)
    }

    fn public_seed(&self) -> Option<[u8; 32]> {
        self.extractor_seed.as_slice().try_into().ok()
    }
}

/// Carries frames from Alice to Bob.
pub trait Transport {
    fn send(&mut self, frame: Vec<u8>) -> Result<()>;
    fn recv(&mut self) -> Result<Option<Vec<u8>>>;
}

/// In-process queue that also keeps a copy of every frame sent.
#[derive(Debug, Default)]
pub struct Loopback {
    queue: VecDeque<Vec<u8>>,
    pub transcript: Vec<Vec<u8>>,
}

impl Transport for Loopback {
    fn send(&mut self, frame: Vec<u8>) -> Result<()> {
        self.transcript.push(frame.clone());
        self.queue.push_back(frame);
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Vec<u8>>> {
        Ok(self.queue.pop_front())
    }
}

fn verification_hash(n: usize, eps_cor: f64, seed: &[u8; 32]) -> Result<ToeplitzExtractor> {
    ToeplitzExtractor::from_public_seed(n, tag_length(eps_cor), seed, TAG_STREAM)
}

/// Alice's steps: draw `K` info bits, encode, mask with `X^N`, and (in full
/// mode) attach the verification tag and public seed. Returns the message
/// and `X^N`.
pub fn alice_round(state: &mut AliceState) -> Result<(ReconcileMessage, BitVector)> {
    let spec = &state.spec;
    let big_n = spec.block_len();
    if state.raw_key.len() < big_n {
        return Err(Error::LengthMismatch {
            expected: big_n,
            actual: state.raw_key.len(),
        });
    }
    let x_n = state.raw_key.slice(0, big_n);
    let info = BitVector::random(spec.k(), &mut state.rng);
    let u = assemble_message(&info, spec)?;
    let codeword = encode(&u, spec)?;
    let ct = &codeword ^ &x_n;

    let (verify_tag, extractor_seed) = match state.mode {
        Mode::Full => {
            let mut seed = [0u8; 32];
            state.rng.fill_bytes(&mut seed);
            let tag = verification_hash(big_n, state.eps_cor, &seed)?.extract(&x_n)?;
            (tag, seed.to_vec())
        }
        Mode::NakassisMink => (BitVector::zeros(0), Vec::new()),
    };
    let msg = ReconcileMessage {
        ct,
        verify_tag,
        extractor_seed,
        params: MessageParams {
            n: spec.n(),
            k: spec.k(),
            epsilon_cor: state.eps_cor,
        },
    };
    Ok((msg, x_n))
}

/// Bob's steps: unmask, SC-decode, re-encode and unmask again. `verified`
/// is the tag comparison in full mode and always `true` otherwise (Bob
/// accepts without a check).
pub fn bob_round(state: &BobState, msg: &ReconcileMessage) -> Result<(BitVector, bool)> {
    let spec = &state.spec;
    let big_n = spec.block_len();
    check_len(big_n, msg.ct.len())?;
    if state.received_key.len() < big_n {
        return Err(Error::LengthMismatch {
            expected: big_n,
            actual: state.received_key.len(),
        });
    }
    let y_n = state.received_key.slice(0, big_n);
    let noisy_codeword = &msg.ct ^ &y_n;
    let soft = channel_llr(&noisy_codeword, ChannelParams::bsc(state.decoder_p)?)?;
    let u_hat = sc_decode_with(&soft, spec, state.check_node)?;
    let w_hat = encode(&u_hat, spec)?;
    let x_hat = &w_hat ^ &msg.ct;

    let verified = match state.mode {
        Mode::NakassisMink => true,
        Mode::Full => match msg.public_seed() {
            Some(seed) => {
                let tag =
                    verification_hash(big_n, msg.params.epsilon_cor, &seed)?.extract(&x_hat)?;
                tag == msg.verify_tag
            }
            None => false,
        },
    };
    Ok((x_hat, verified))
}

/// Everything needed to run sessions of one `(N, K, p)` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n: u32,
    pub k: usize,
    /// True BSC crossover probability of the quantum channel.
    pub p: f64,
    pub mode: Mode,
    /// Channel model assumed when building the reliability sequence.
    pub rs_kind: ChannelKind,
    /// Design parameter for the reliability sequence (defaults to `p`).
    pub design_p: Option<f64>,
    pub eps_cor: f64,
    pub eps_sec: f64,
    /// Parameter-estimation bits `e`; `None` means `⌊N/3⌋` in full mode
    /// and 0 otherwise.
    pub estimation_bits: Option<usize>,
    pub qber_mode: QberMode,
    /// Run privacy amplification after reconciliation (full mode only).
    pub amplify: bool,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn new(n: u32, k: usize, p: f64, mode: Mode, seed: u64) -> Self {
        Self {
            n,
            k,
            p,
            mode,
            rs_kind: ChannelKind::Bsc,
            design_p: None,
            eps_cor: DEFAULT_EPS_COR,
            eps_sec: DEFAULT_EPS_SEC,
            estimation_bits: None,
            qber_mode: QberMode::Exact,
            amplify: true,
            seed,
        }
    }

    pub fn block_len(&self) -> usize {
        1 << self.n
    }

    pub fn estimation_len(&self) -> usize {
        match (self.estimation_bits, self.mode) {
            (Some(e), _) => e,
            (None, Mode::Full) => (self.block_len() / 3).max(1),
            (None, Mode::NakassisMink) => 0,
        }
    }

    /// Reliability-sequence design channel.
    pub fn design_params(&self) -> Result<ChannelParams> {
        ChannelParams::new(self.rs_kind, self.design_p.unwrap_or(self.p))
    }

    pub fn build_spec(&self) -> Result<PolarCodeSpec> {
        let profile = reliability_sequence(self.design_params()?, self.n)?;
        select_frozen(&profile, self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    /// Bob's reconciled key equals Alice's `X^N`.
    pub agreed: bool,
    /// Bob accepted the reconciliation.
    pub verified: bool,
    /// Public disclosure: `N − K`, plus the tag in full mode.
    pub leak_bits: usize,
    /// Secret key length ℓ used for amplification (0 when not amplifying).
    pub secret_len: usize,
    /// `K_Alice == K_Bob`, when Bob produced a final key.
    pub final_keys_equal: Option<bool>,
    /// Channel errors inside `X^N`.
    pub bit_errors: usize,
    /// Error fraction on the estimation bits, when there are any.
    pub qber_estimate: Option<f64>,
}

/// A prepared configuration with its code built once.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: ProtocolConfig,
    pub spec: Arc<PolarCodeSpec>,
    pub check_node: CheckNode,
}

impl Session {
    pub fn new(config: ProtocolConfig) -> Result<Self> {
        ChannelParams::bsc(config.p)?;
        let spec = Arc::new(config.build_spec()?);
        Ok(Self {
            config,
            spec,
            check_node: CheckNode::Exact,
        })
    }

    pub fn with_spec(config: ProtocolConfig, spec: Arc<PolarCodeSpec>) -> Result<Self> {
        ChannelParams::bsc(config.p)?;
        check_len(config.block_len(), spec.block_len())?;
        Ok(Self {
            config,
            spec,
            check_node: CheckNode::Exact,
        })
    }

    /// Runs trial `trial` over an in-process loopback.
    pub fn run(&self, trial: u64) -> Result<ProtocolOutcome> {
        self.run_over(trial, &mut Loopback::default())
    }

    pub fn run_over<T: Transport>(&self, trial: u64, transport: &mut T) -> Result<ProtocolOutcome> {
        let cfg = &self.config;
        let big_n = cfg.block_len();
        let e = cfg.estimation_len();

        let mut key_rng = derive_rng(cfg.seed, STREAM_RAW_KEY, trial);
        let raw_key = BitVector::random(big_n + e, &mut key_rng);
        let quantum = ChannelInstance::new(ChannelParams::bsc(cfg.p)?, cfg.seed, STREAM_QUANTUM);
        let received = transmit(&raw_key, &quantum, trial)?;

        let (x_e, y_e) = (raw_key.slice(big_n, e), received.slice(big_n, e));
        let qber_estimate = if e > 0 {
            Some(measure_qber(&x_e, &y_e)?)
        } else {
            None
        };

        let mut alice = AliceState {
            raw_key,
            spec: Arc::clone(&self.spec),
            eps_cor: cfg.eps_cor,
            mode: cfg.mode,
            rng: derive_rng(cfg.seed, STREAM_ALICE, trial),
        };
        let bob = BobState {
            received_key: received,
            spec: Arc::clone(&self.spec),
            decoder_p: cfg.p,
            check_node: self.check_node,
            mode: cfg.mode,
        };

        let (msg, x_n) = alice_round(&mut alice)?;
        transport.send(msg.to_frame()?)?;
        let frame = transport
            .recv()?
            .ok_or_else(|| Error::Decode("transport closed before Alice's message".into()))?;
        let received_msg = ReconcileMessage::from_frame(&frame)?;
        let (x_hat, verified) = bob_round(&bob, &received_msg)?;

        let agreed = x_hat == x_n;
        let bit_errors = x_n.hamming_distance(&bob.received_key.slice(0, big_n))?;
        let tag_bits = msg.verify_tag.len();
        let leak_bits = big_n - self.spec.k() + tag_bits;

        let mut secret_len = 0;
        let mut final_keys_equal = None;
        if cfg.mode == Mode::Full && cfg.amplify {
            let qber = match (cfg.qber_mode, qber_estimate) {
                (QberMode::Estimated, Some(q)) => q,
                _ => cfg.p,
            };
            let mut budget =
                SecrecyBudget::with_defaults(big_n, self.spec.k(), qber).with_eps_sec(cfg.eps_sec);
            budget.eps_cor = cfg.eps_cor;
            budget.e = e.max(1);
            secret_len = secret_key_length(&budget);
            let seed = msg.public_seed().expect("full mode always sends a seed");
            let pa = ToeplitzExtractor::from_public_seed(big_n, secret_len, &seed, PA_STREAM)?;
            let k_alice = pa.extract(&x_n)?;
            if verified {
                final_keys_equal = Some(k_alice == pa.extract(&x_hat)?);
            }
        }

        Ok(ProtocolOutcome {
            agreed,
            verified,
            leak_bits,
            secret_len,
            final_keys_equal,
            bit_errors,
            qber_estimate,
        })
    }
}

/// Builds the code for `config` and runs one session.
pub fn run_protocol(config: &ProtocolConfig, trial: u64) -> Result<ProtocolOutcome> {
    Session::new(config.clone())?.run(trial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::polar_transform;

    fn spec(n: u32, k: usize, p: f64) -> Arc<PolarCodeSpec> {
        let prof = reliability_sequence(ChannelParams::bsc(p).unwrap(), n).unwrap();
        Arc::new(select_frozen(&prof, k).unwrap())
    }

    fn alice(raw_key: BitVector, spec: Arc<PolarCodeSpec>, mode: Mode) -> AliceState {
        AliceState {
            raw_key,
            spec,
            eps_cor: 0.05,
            mode,
            rng: derive_rng(9, STREAM_ALICE, 0),
        }
    }

    #[test]
    fn zero_info_bits_leave_ct_equal_to_key() {
        let s = spec(6, 0, 0.05);
        let mut rng = derive_rng(1, 0, 0);
        let x = BitVector::random(64, &mut rng);
        let (msg, x_n) = alice_round(&mut alice(x.clone(), s, Mode::Full)).unwrap();
        assert_eq!(msg.ct, x);
        assert_eq!(x_n, x);
        assert_eq!(msg.verify_tag.len(), 5);
        assert_eq!(msg.extractor_seed.len(), 32);
    }

    #[test]
    fn full_rate_codeword_equal_to_key_gives_zero_ct() {
        // K = N: pick info bits so that u = X·G_N, hence W = X.
        let s = spec(5, 32, 0.05);
        let mut rng = derive_rng(2, 0, 0);
        let x = BitVector::random(32, &mut rng);
        let u = polar_transform(&x).unwrap();
        let codeword = encode(&u, &s).unwrap();
        assert_eq!(&codeword ^ &x, BitVector::zeros(32));
    }

    #[test]
    fn noiseless_bob_recovers_and_verifies() {
        let s = spec(8, 100, 0.02);
        let mut rng = derive_rng(3, 0, 0);
        let x = BitVector::random(256 + 10, &mut rng);
        let (msg, x_n) = alice_round(&mut alice(x.clone(), Arc::clone(&s), Mode::Full)).unwrap();
        let bob = BobState {
            received_key: x,
            spec: s,
            decoder_p: 0.0,
            check_node: CheckNode::Exact,
            mode: Mode::Full,
        };
        let (x_hat, verified) = bob_round(&bob, &msg).unwrap();
        assert_eq!(x_hat, x_n);
        assert!(verified);
    }

    #[test]
    fn masking_identity() {
        let s = spec(7, 40, 0.05);
        for t in 0..20 {
            let mut rng = derive_rng(4, 0, t);
            let x = BitVector::random(128, &mut rng);
            let y = transmit(
                &x,
                &ChannelInstance::new(ChannelParams::bsc(0.1).unwrap(), 4, 1),
                t,
            )
            .unwrap();
            let mut a = alice(x.clone(), Arc::clone(&s), Mode::NakassisMink);
            let info = {
                let mut probe = a.rng.clone();
                BitVector::random(40, &mut probe)
            };
            let (msg, _) = alice_round(&mut a).unwrap();
            let w = encode(&assemble_message(&info, &s).unwrap(), &s).unwrap();
            assert_eq!(&msg.ct ^ &y, &w ^ &(&x ^ &y));
        }
    }

    #[test]
    fn wire_roundtrip_and_rejects() {
        let s = spec(6, 20, 0.05);
        let mut rng = derive_rng(5, 0, 0);
        let (msg, _) =
            alice_round(&mut alice(BitVector::random(64, &mut rng), s, Mode::Full)).unwrap();
        let frame = msg.to_frame().unwrap();
        assert_eq!(
            u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize,
            frame.len() - 4
        );
        assert_eq!(ReconcileMessage::from_frame(&frame).unwrap(), msg);
        let json = msg.to_json().unwrap();
        assert!(json.contains("\"K\":20"));
        assert!(ReconcileMessage::from_frame(&frame[..frame.len() - 1]).is_err());
        assert!(ReconcileMessage::from_frame(&[1, 0]).is_err());
    }

    #[test]
    fn nakassis_mink_message_is_bare() {
        let s = spec(6, 20, 0.05);
        let mut rng = derive_rng(6, 0, 0);
        let (msg, _) = alice_round(&mut alice(
            BitVector::random(64, &mut rng),
            s,
            Mode::NakassisMink,
        ))
        .unwrap();
        assert!(msg.verify_tag.is_empty());
        assert!(msg.extractor_seed.is_empty());
        let back = ReconcileMessage::from_frame(&msg.to_frame().unwrap()).unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn p_zero_always_agrees() {
        for mode in [Mode::Full, Mode::NakassisMink] {
            let cfg = ProtocolConfig::new(8, 128, 0.0, mode, 11);
            let session = Session::new(cfg).unwrap();
            for t in 0..5 {
                let out = session.run(t).unwrap();
                assert!(out.agreed && out.verified);
                assert_eq!(out.bit_errors, 0);
            }
        }
    }

    #[test]
    fn k_zero_is_trivial_and_leaks_everything() {
        let cfg = ProtocolConfig::new(8, 0, 0.1, Mode::NakassisMink, 12);
        let out = run_protocol(&cfg, 0).unwrap();
        assert!(out.agreed);
        assert_eq!(out.leak_bits, 256);
        let cfg = ProtocolConfig::new(8, 0, 0.1, Mode::Full, 12);
        let out = run_protocol(&cfg, 0).unwrap();
        assert!(out.agreed && out.verified);
        assert_eq!(out.leak_bits, 256 + 5);
        assert_eq!(out.secret_len, 0);
    }

    #[test]
    fn leakage_accounting() {
        let cfg = ProtocolConfig::new(10, 700, 0.01, Mode::Full, 13);
        let out = run_protocol(&cfg, 0).unwrap();
        assert_eq!(out.leak_bits, 1024 - 700 + 5);
        let cfg = ProtocolConfig {
            mode: Mode::NakassisMink,
            ..cfg
        };
        assert_eq!(run_protocol(&cfg, 0).unwrap().leak_bits, 1024 - 700);
    }

    #[test]
    fn transcript_is_deterministic() {
        let cfg = ProtocolConfig::new(9, 300, 0.03, Mode::Full, 14);
        let session = Session::new(cfg).unwrap();
        let mut a = Loopback::default();
        let mut b = Loopback::default();
        let oa = session.run_over(3, &mut a).unwrap();
        let ob = session.run_over(3, &mut b).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(a.transcript, b.transcript);
        let mut c = Loopback::default();
        session.run_over(4, &mut c).unwrap();
        assert_ne!(a.transcript, c.transcript);
    }

    #[test]
    fn estimated_qber_mode_reports_sample() {
        let mut cfg = ProtocolConfig::new(10, 600, 0.05, Mode::Full, 15);
        cfg.qber_mode = QberMode::Estimated;
        let out = run_protocol(&cfg, 0).unwrap();
        let q = out.qber_estimate.unwrap();
        // 341 samples at p = 0.05: 4 sigma is about 0.047
        assert!((q - 0.05).abs() < 0.05, "estimate {q}");
    }
}
