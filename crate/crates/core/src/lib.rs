//! Polar-code information reconciliation for quantum key distribution.
//!
//! - [`construct`]: Bhattacharyya recursion, reliability sequences, frozen sets.
//! - [`codec`]: polar encoding and successive-cancellation decoding.
//! - [`channel`]: seeded BSC/BEC noise.
//! - [`protocol`]: one-way Alice/Bob reconciliation sessions.
//! - [`secrecy`]: Toeplitz privacy amplification and finite-key lengths.
//! - [`harness`]: Monte-Carlo FER estimation and sweeps.

pub mod bits;
pub mod channel;
pub mod codec;
pub mod construct;
pub mod error;
pub mod harness;
pub mod protocol;
pub mod secrecy;

pub use bits::{BitEnvelope, BitVector, TextEncoding};
pub use channel::{derive_rng, transmit, ChannelInstance, QberMode};
pub use codec::{encode, sc_decode, CheckNode, SoftInput};
pub use construct::{
    reliability_sequence, select_frozen, ChannelKind, ChannelParams, PolarCodeSpec,
    ReliabilityProfile,
};
pub use error::{Error, Result};
pub use harness::{estimate_fer, sweep, ResultRow, SweepConfig, TrialPlan};
pub use protocol::{run_protocol, Mode, ProtocolConfig, ProtocolOutcome, Session};
pub use secrecy::{secret_key_length, SecrecyBudget, ToeplitzExtractor};
