use std::io::{Read, Write};
use std::os::unix::net::UnixStream;
use std::sync::Arc;

use polarqkd::channel::derive_rng;
use polarqkd::codec::CheckNode;
use polarqkd::construct::{reliability_sequence, select_frozen, ChannelParams};
use polarqkd::error::Result;
use polarqkd::protocol::{
    alice_round, bob_round, AliceState, BobState, Mode, ProtocolConfig, ReconcileMessage, Session,
    Transport, STREAM_ALICE,
};
use polarqkd::BitVector;
use rand::Rng;

fn spec(n: u32, k: usize, p: f64) -> Arc<polarqkd::PolarCodeSpec> {
    let profile = reliability_sequence(ChannelParams::bsc(p).unwrap(), n).unwrap();
    Arc::new(select_frozen(&profile, k).unwrap())
}

fn parties(
    x: BitVector,
    y: BitVector,
    spec: Arc<polarqkd::PolarCodeSpec>,
    p: f64,
    trial: u64,
) -> (AliceState, BobState) {
    (
        AliceState {
            raw_key: x,
            spec: Arc::clone(&spec),
            eps_cor: 0.05,
            mode: Mode::Full,
            rng: derive_rng(77, STREAM_ALICE, trial),
        },
        BobState {
            received_key: y,
            spec,
            decoder_p: p,
            check_node: CheckNode::Exact,
            mode: Mode::Full,
        },
    )
}

#[test]
fn single_flip_is_corrected_at_half_rate() {
    let s = spec(10, 512, 0.01);
    let mut rng = derive_rng(5, 0, 0);
    let mut ok = 0;
    for t in 0..1000 {
        let x = BitVector::random(1024, &mut rng);
        let mut y = x.clone();
        y.flip(rng.gen_range(0..1024));
        let (mut alice, bob) = parties(x, y, Arc::clone(&s), 0.01, t);
        let (msg, x_n) = alice_round(&mut alice).unwrap();
        let (x_hat, verified) = bob_round(&bob, &msg).unwrap();
        if x_hat == x_n {
            assert!(verified);
            ok += 1;
        }
    }
    assert!(ok >= 990, "{ok}/1000");
}

#[test]
fn failed_decodes_pass_the_tag_rarely() {
    // K = N leaves nothing frozen, so a noisy block almost never decodes.
    let s = spec(8, 256, 0.1);
    let mut rng = derive_rng(6, 0, 0);
    let (mut failures, mut accepted) = (0u64, 0u64);
    for t in 0..4000 {
        let x = BitVector::random(256, &mut rng);
        let mut y = x.clone();
        for i in 0..256 {
            if rng.gen_bool(0.1) {
                y.flip(i);
            }
        }
        let (mut alice, bob) = parties(x, y, Arc::clone(&s), 0.1, t);
        let (msg, x_n) = alice_round(&mut alice).unwrap();
        let (x_hat, verified) = bob_round(&bob, &msg).unwrap();
        if x_hat != x_n {
            failures += 1;
            accepted += verified as u64;
        }
    }
    assert!(failures > 3500);
    let q = 1.0 / 32.0;
    let rate = accepted as f64 / failures as f64;
    let sigma = (q * (1.0 - q) / failures as f64).sqrt();
    assert!(rate <= q + 3.0 * sigma, "false accept rate {rate}");
}

#[test]
fn agreement_implies_verification_and_equal_final_keys() {
    let mut cfg = ProtocolConfig::new(12, 2600, 0.02, Mode::Full, 3);
    cfg.estimation_bits = Some(4096);
    let session = Session::new(cfg).unwrap();
    let mut agreed = 0;
    for t in 0..60 {
        let out = session.run(t).unwrap();
        if out.agreed {
            agreed += 1;
            assert!(out.verified);
            if out.secret_len > 0 {
                assert_eq!(out.final_keys_equal, Some(true));
            }
        }
    }
    assert!(agreed > 50);
}

#[test]
fn nakassis_mink_agrees_with_full_mode_on_decoding() {
    let full = Session::new(ProtocolConfig::new(10, 600, 0.03, Mode::Full, 4)).unwrap();
    let bare = Session::new(ProtocolConfig {
        mode: Mode::NakassisMink,
        estimation_bits: Some(full.config.estimation_len()),
        ..full.config.clone()
    })
    .unwrap();
    for t in 0..30 {
        let (a, b) = (full.run(t).unwrap(), bare.run(t).unwrap());
        assert_eq!(a.bit_errors, b.bit_errors);
        assert_eq!(a.leak_bits, b.leak_bits + 5);
    }
}

/// Frames over a Unix socket, length prefix first.
struct SocketTransport(UnixStream);

impl Transport for SocketTransport {
    fn send(&mut self, frame: Vec<u8>) -> Result<()> {
        self.0.write_all(&frame)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Vec<u8>>> {
        let mut len = [0u8; 4];
        self.0.read_exact(&mut len)?;
        let mut frame = len.to_vec();
        frame.resize(4 + u32::from_le_bytes(len) as usize, 0);
        self.0.read_exact(&mut frame[4..])?;
        Ok(Some(frame))
    }
}

#[test]
fn two_endpoints_over_a_socket() {
    let (a, b) = UnixStream::pair().unwrap();
    let s = spec(9, 300, 0.02);
    let mut rng = derive_rng(8, 0, 0);
    let x = BitVector::random(512, &mut rng);
    let mut y = x.clone();
    y.flip(3);
    y.flip(400);
    let (mut alice, bob) = parties(x, y, s, 0.02, 0);

    let sender = std::thread::spawn(move || {
        let mut tx = SocketTransport(a);
        let (msg, x_n) = alice_round(&mut alice).unwrap();
        tx.send(msg.to_frame().unwrap()).unwrap();
        x_n
    });
    let mut rx = SocketTransport(b);
    let frame = rx.recv().unwrap().unwrap();
    let msg = ReconcileMessage::from_frame(&frame).unwrap();
    let (x_hat, verified) = bob_round(&bob, &msg).unwrap();
    let x_n = sender.join().unwrap();
    assert!(verified);
    assert_eq!(x_hat, x_n);
}
