//! Double-spend orchestration: who colludes, who receives the fakes, and how
//! adversarial nodes filter what they pass on.

use std::collections::{BTreeMap, BTreeSet};

use localcoin_core::{Digest, Location, Message, SimTime, UserId};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ColluderPolicy {
    /// Relay everything, conflicting fakes included.
    #[default]
    ForwardAll,
    /// Pass traffic about a fake only to nodes on its receiver's side.
    ForwardAllToSide,
    /// Drop any message whose originator is on the far side of the cut.
    SuppressCrossRegion,
    /// The attacker's own fakes go out to everyone in range, but nobody
    /// adversarial relays anything about a fake.
    Withhold,
}

/// How fake receivers are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverChoice {
    /// Drawn at the start of the run.
    #[default]
    Drawn,
    /// An honest neighbour of the attacker when the fake is due, preferring
    /// one that holds no earlier fake. Waits while the attacker has no
    /// honest neighbour at all.
    Nearby,
}

/// How nodes are split into two sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    /// Side 0 is `x < cut`, judged on current positions.
    HalfPlane { cut: f64 },
    /// Side 0 is the attacker, its colluders and the fake receivers.
    Adversary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackPlanConfig {
    pub attacker: u64,
    /// Explicit colluder ids; when empty, `colluder_fraction` of the other
    /// users are drawn at random.
    pub colluders: Vec<u64>,
    pub colluder_fraction: f64,
    pub fake_tx_count: u32,
    /// Seconds between consecutive fakes.
    pub inter_fake_delay: f64,
    /// Seconds until the first fake.
    pub start: f64,
    pub colluder_policy: ColluderPolicy,
    pub regions: Option<RegionSpec>,
    /// Pinned receivers, one per fake.
    pub receivers: Vec<u64>,
    pub receiver_choice: ReceiverChoice,
}

impl Default for AttackPlanConfig {
    fn default() -> Self {
        AttackPlanConfig {
            attacker: 0,
            colluders: Vec::new(),
            colluder_fraction: 0.0,
            fake_tx_count: 2,
            inter_fake_delay: 0.0,
            start: 1.0,
            colluder_policy: ColluderPolicy::ForwardAll,
            regions: None,
            receivers: Vec::new(),
            receiver_choice: ReceiverChoice::Drawn,
        }
    }
}

impl AttackPlanConfig {
    pub fn validate(&self, n: u64) -> Result<(), String> {
        if self.fake_tx_count < 2 {
            return Err("fake_tx_count must be at least 2".into());
        }
        if n > 0 && self.attacker >= n {
            return Err(format!("attacker {} is not a user", self.attacker));
        }
        if self.colluders.contains(&self.attacker) {
            return Err("the attacker cannot be its own colluder".into());
        }
        if n > 0 && self.colluders.iter().chain(&self.receivers).any(|u| *u >= n) {
            return Err("colluder or receiver id out of range".into());
        }
        if !(0.0..1.0).contains(&self.colluder_fraction) {
            return Err("colluder_fraction must lie in [0, 1)".into());
        }
        if !(self.inter_fake_delay >= 0.0) || !(self.start >= 0.0) {
            return Err("times must be non-negative".into());
        }
        if !self.receivers.is_empty() && self.receivers.len() != self.fake_tx_count as usize {
            return Err("pin one receiver per fake or none".into());
        }
        if !self.receivers.is_empty() && self.receiver_choice == ReceiverChoice::Nearby {
            return Err("pinned receivers and receiver_choice = \"nearby\" exclude each other".into());
        }
        if self.receivers.iter().any(|r| *r == self.attacker || self.colluders.contains(r)) {
            return Err("fake receivers must be honest users".into());
        }
        let needs_regions =
            matches!(self.colluder_policy, ColluderPolicy::ForwardAllToSide | ColluderPolicy::SuppressCrossRegion);
        if needs_regions && self.regions.is_none() {
            return Err("this colluder policy needs `regions`".into());
        }
        Ok(())
    }
}

/// A plan with colluders and receivers fixed for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackPlan {
    pub attacker: UserId,
    pub colluders: BTreeSet<UserId>,
    pub fake_tx_count: u32,
    pub inter_fake_delay: SimTime,
    pub start: SimTime,
    pub policy: ColluderPolicy,
    pub regions: Option<RegionSpec>,
    /// One per fake. Under [`ReceiverChoice::Nearby`] a fake not yet sent
    /// names the attacker.
    pub receivers: Vec<UserId>,
    pub receiver_choice: ReceiverChoice,
}

impl AttackPlan {
    /// Draws colluders and receivers. With a half-plane split and no pinned
    /// receivers, fakes alternate between the two sides.
    pub fn resolve(cfg: &AttackPlanConfig, positions: &[Location], rng: &mut ChaCha8Rng) -> AttackPlan {
        let n = positions.len() as u64;
        let attacker = UserId(cfg.attacker);
        let colluders: BTreeSet<UserId> = if cfg.colluders.is_empty() {
            let mut others: Vec<u64> = (0..n).filter(|u| *u != cfg.attacker).collect();
            others.shuffle(rng);
            let k = (cfg.colluder_fraction * n as f64).round() as usize;
            others.into_iter().take(k).map(UserId).collect()
        } else {
            cfg.colluders.iter().copied().map(UserId).collect()
        };
        let receivers = if cfg.receiver_choice == ReceiverChoice::Nearby {
            vec![attacker; cfg.fake_tx_count as usize]
        } else if cfg.receivers.is_empty() {
            let honest: Vec<u64> =
                (0..n).filter(|u| *u != cfg.attacker && !colluders.contains(&UserId(*u))).collect();
            pick_receivers(cfg, &honest, positions, rng)
        } else {
            cfg.receivers.iter().copied().map(UserId).collect()
        };
        AttackPlan {
            attacker,
            colluders,
            fake_tx_count: cfg.fake_tx_count,
            inter_fake_delay: SimTime::from_secs_f64(cfg.inter_fake_delay),
            start: SimTime::from_secs_f64(cfg.start),
            policy: cfg.colluder_policy,
            regions: cfg.regions,
            receivers,
            receiver_choice: cfg.receiver_choice,
        }
    }

    pub fn is_adversarial(&self, u: UserId) -> bool {
        u == self.attacker || self.colluders.contains(&u)
    }

    pub fn fake_time(&self, k: u32) -> SimTime {
        SimTime(self.start.0 + self.inter_fake_delay.0 * k as u64)
    }

    /// Side of user `u` at its current position.
    pub fn side(&self, u: UserId, positions: &[Location]) -> u8 {
        match self.regions {
            Some(RegionSpec::HalfPlane { cut }) => u8::from(positions[u.0 as usize].x >= cut),
            Some(RegionSpec::Adversary) => u8::from(!(self.is_adversarial(u) || self.receivers.contains(&u))),
            None => 0,
        }
    }

    /// Whether adversarial `sender` passes `msg` on to `to`.
    pub fn passes(&self, sender: UserId, msg: &Message, to: UserId, fakes: &BTreeMap<Digest, usize>, positions: &[Location]) -> bool {
        match self.policy {
            ColluderPolicy::ForwardAll => true,
            ColluderPolicy::ForwardAllToSide => match attack_tag(msg, fakes) {
                Some(k) => self.side(to, positions) == self.side(self.receivers[k], positions),
                None => true,
            },
            ColluderPolicy::SuppressCrossRegion => {
                self.side(originator(msg), positions) == self.side(sender, positions)
            }
            ColluderPolicy::Withhold => match msg {
                Message::Transaction(env) if fakes.contains_key(&env.tx.id()) => sender == env.tx.sender,
                _ => attack_tag(msg, fakes).is_none(),
            },
        }
    }
}

fn pick_receivers(cfg: &AttackPlanConfig, honest: &[u64], positions: &[Location], rng: &mut ChaCha8Rng) -> Vec<UserId> {
    let k = cfg.fake_tx_count as usize;
    let mut out = Vec::with_capacity(k);
    if let Some(RegionSpec::HalfPlane { cut }) = cfg.regions {
        let mut sides: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
        for u in honest {
            sides[usize::from(positions[*u as usize].x >= cut)].push(*u);
        }
        for s in &mut sides {
            s.shuffle(rng);
        }
        for i in 0..k {
            let s = &mut sides[i % 2];
            if let Some(u) = s.pop() {
                out.push(UserId(u));
            }
        }
    }
    if out.len() < k {
        let mut pool: Vec<u64> = honest.iter().copied().filter(|u| !out.contains(&UserId(*u))).collect();
        pool.shuffle(rng);
        out.extend(pool.into_iter().take(k - out.len()).map(UserId));
    }
    // fewer honest users than fakes: reuse receivers
    let mut i = 0;
    while out.len() < k && !honest.is_empty() {
        out.push(UserId(honest[i % honest.len()]));
        i += 1;
    }
    out
}

/// Which fake, if any, a message is about.
pub fn attack_tag(msg: &Message, fakes: &BTreeMap<Digest, usize>) -> Option<usize> {
    let first = |ds: &mut dyn Iterator<Item = Digest>| ds.filter_map(|d| fakes.get(&d).copied()).next();
    match msg {
        Message::Transaction(env) => fakes.get(&env.tx.id()).copied(),
        Message::Ack(a) => fakes.get(&a.tx).copied(),
        Message::Proposal(p) => first(&mut p.transactions.iter().map(|t| t.tx.id())),
        Message::Block(b) => first(&mut b.tx_ids()),
        Message::Alert(a) => first(&mut [a.first.id(), a.second.id()].into_iter()),
    }
}

/// The user a message started from.
pub fn originator(msg: &Message) -> UserId {
    match msg {
        Message::Transaction(env) => env.tx.sender,
        Message::Ack(a) => a.receiver,
        Message::Proposal(p) => p.builder,
        Message::Block(b) => b.transactions.first().map_or(UserId(0), |p| p.tx.sender),
        Message::Alert(a) => a.reporter,
    }
}
