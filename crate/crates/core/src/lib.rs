//! Protocol library for LocalCoin, a witness-based ad-hoc cryptocurrency.
//!
//! The crate is `no_std` and only needs an allocator. It holds the message
//! types and their wire format, the per-user protocol state machine, chain
//! bookkeeping, and the geometric and attack calculators.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;


pub mod attack;
pub mod attest;
pub mod chain;
pub mod geom;

pub mod message;
pub mod node;

pub mod types;
pub mod wire;

pub use attest::{Attestation, KeyRing, Signer};
pub use chain::ChainView;
pub use message::{
    check_conservation, Ack, Block, BlockProposal, DoubleSpendAlert, Message, Transaction, TransactionBody, TxEnvelope,
    TxPair, VerifierEntry,
};

pub use node::NodeState;
pub use types::{digest, Coins, Digest, Location, ProtocolParams, SimTime, UserId};
