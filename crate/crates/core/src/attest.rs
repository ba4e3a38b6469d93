//! Unforgeable attestations.
//!
//! Signatures are modeled rather than implemented: every user owns a secret
//! key derived from the scenario's master seed, and an attestation carries a
//! keyed hash ("seal") over its fields. Only a [`Signer`] can produce a valid
//! seal for its user, and signers are handed out exactly once per user by the
//! [`KeyRing`]. Anyone holding a shared reference to the ring can verify.

use alloc::collections::BTreeSet;

use sha2::{Digest as _, Sha256};

use crate::types::{Digest, SimTime, UserId};

/// A statement "`signer` vouches for `payload` at `timestamp`".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Attestation {
    signer: UserId,
    payload: Digest,
    timestamp: SimTime,
    seal: [u8; 32],
}

impl Attestation {
    pub fn signer(&self) -> UserId {
        self.signer
    }

    pub fn payload(&self) -> Digest {
        self.payload
    }

    pub fn timestamp(&self) -> SimTime {
        self.timestamp
    }

    pub fn seal(&self) -> &[u8; 32] {
        &self.seal
    }

    /// Reassembles an attestation from wire fields. The result is only
    /// meaningful after [`KeyRing::verify`] accepts it.
    pub fn from_wire(signer: UserId, payload: Digest, timestamp: SimTime, seal: [u8; 32]) -> Self {
        Attestation { signer, payload, timestamp, seal }
    }
}

fn seal(key: &[u8; 32], signer: UserId, payload: &Digest, timestamp: SimTime) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"localcoin-seal");
    h.update(key);
    h.update(signer.0.to_le_bytes());
    h.update(payload.0);
    h.update(timestamp.0.to_le_bytes());
    h.finalize().into()
}

/// Signing capability for one user.
#[derive(Clone)]
pub struct Signer {
    user: UserId,
    key: [u8; 32],
}

impl core::fmt::Debug for Signer {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Signer").field("user", &self.user).finish_non_exhaustive()
    }
}

impl Signer {
    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn attest(&self, payload: Digest, timestamp: SimTime) -> Attestation {
        Attestation {
            signer: self.user,
            payload,
            timestamp,
            seal: seal(&self.key, self.user, &payload, timestamp),
        }
    }
}

/// Issues signers and verifies attestations for one scenario.
#[derive(Clone)]
pub struct KeyRing {
    master: [u8; 32],
    issued: BTreeSet<UserId>,
}

impl KeyRing {
    pub fn new(master_seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"localcoin-master");
        h.update(master_seed.to_le_bytes());
        KeyRing { master: h.finalize().into(), issued: BTreeSet::new() }
    }

    fn key_for(&self, user: UserId) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master);
        h.update(user.0.to_le_bytes());
        h.finalize().into()
    }

    /// Hands out the signer for `user`. Returns `None` if it was already issued.
    pub fn issue(&mut self, user: UserId) -> Option<Signer> {
        if !self.issued.insert(user) {
            return None;
        }
        Some(Signer { user, key: self.key_for(user) })
    }

    pub fn verify(&self, att: &Attestation) -> bool {
        seal(&self.key_for(att.signer), att.signer, &att.payload, att.timestamp) == att.seal
    }

    /// Verifies that `att` is a valid attestation by `signer` over `payload`.
    pub fn verify_for(&self, att: &Attestation, signer: UserId, payload: &Digest) -> bool {
        att.signer == signer && att.payload == *payload && self.verify(att)
    }
}
