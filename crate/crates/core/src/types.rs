//! Plain value types shared by every protocol message.

use core::fmt;
use core::ops::{Add, AddAssign, Sub};

use sha2::{Digest as _, Sha256};

/// Identifier of a registered user.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u64);

impl UserId {
    /// Pseudo-user that signs the bootstrap endowments.
    pub const MINT: UserId = UserId(u64::MAX);
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == UserId::MINT {
            f.write_str("mint")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Simulation time in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1000)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime(libm::round(s * 1000.0) as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn millis(self) -> u64 {
        self.0
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

/// Amount of localcoins, stored in milli-localcoins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coins(pub u64);

impl Coins {
    pub const ZERO: Coins = Coins(0);

    pub const fn from_millis(m: u64) -> Self {
        Coins(m)
    }

    /// Whole coins; panics on overflow.
    pub const fn from_coins(c: u64) -> Self {
        Coins(c * 1000)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn checked_add(self, rhs: Coins) -> Option<Coins> {
        self.0.checked_add(rhs.0).map(Coins)
    }

    pub fn checked_sub(self, rhs: Coins) -> Option<Coins> {
        self.0.checked_sub(rhs.0).map(Coins)
    }
}

impl Add for Coins {
    type Output = Coins;
    fn add(self, rhs: Coins) -> Coins {
        Coins(self.0 + rhs.0)
    }
}

impl AddAssign for Coins {
    fn add_assign(&mut self, rhs: Coins) {
        self.0 += rhs.0;
    }
}

impl Sub for Coins {
    type Output = Coins;
    fn sub(self, rhs: Coins) -> Coins {
        Coins(self.0 - rhs.0)
    }
}

impl core::iter::Sum for Coins {
    fn sum<I: Iterator<Item = Coins>>(iter: I) -> Coins {
        iter.fold(Coins::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Coins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

/// Position inside the normalized unit-square service area.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Location { x, y }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn in_service_area(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }
}

/// 32-byte SHA-256 content hash.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(content: &[u8]) -> Digest {
        Digest(Sha256::digest(content).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// First eight bytes as an integer, handy for deterministic tie-breaks.
    pub fn prefix_u64(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.0[..8]);
        u64::from_be_bytes(b)
    }
}

/// Computes the content digest of a byte string.
pub fn digest(content: &[u8]) -> Digest {
    Digest::of(content)
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest(")?;
        for b in &self.0[..6] {
            write!(f, "{:02x}", b)?;
        }
        write!(f, "..)")
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{:02x}", b)?;
        }
        Ok(())
    }
}

/// Tunable protocol knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolParams {
    /// Trusted-peer attestations a receiver waits for.
    pub m_tr: u32,
    /// Transaction pairs per block.
    pub block_size: u32,
    /// Minimum verifiers per transaction.
    pub m_vu: u32,
    /// Minimum average pairwise verifier distance (normalized units).
    pub avd: f64,
    /// Normalized broadcast coverage radius.
    pub r_cov: f64,
    /// Use the literal `trusted > mTr` acceptance test instead of `>=`.
    pub strict_threshold: bool,
    /// Extra distance tolerated when checking a forwarder's claimed location,
    /// covering movement during one delivery tick.
    pub location_slack: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            m_tr: 2,
            block_size: 5,
            m_vu: 5,
            avd: 0.1,
            r_cov: 0.05,
            strict_threshold: false,
            location_slack: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParamsError {
    #[error("block size must be at least 1")]
    BlockSize,
    #[error("mVu must be at least 1")]
    MinVerifiers,
    #[error("aVd must lie in [0, diameter of the service area)")]
    AverageDistance,
    #[error("coverage radius must lie in (0, 1]")]
    Coverage,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.block_size < 1 {
            return Err(ParamsError::BlockSize);
        }
        if self.m_vu < 1 {
            return Err(ParamsError::MinVerifiers);
        }
        if !(self.avd >= 0.0 && self.avd < core::f64::consts::SQRT_2) {
            return Err(ParamsError::AverageDistance);
        }
        if !(self.r_cov > 0.0 && self.r_cov <= 1.0) {
            return Err(ParamsError::Coverage);
        }
        Ok(())
    }

    /// Whether `trusted` attestations are enough to accept a payment.
    pub fn accepts(&self, trusted: u32) -> bool {
        if self.strict_threshold {
            trusted > self.m_tr
        } else {
            trusted >= self.m_tr
        }
    }
}
