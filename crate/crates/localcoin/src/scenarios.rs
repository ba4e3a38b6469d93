//! Ready-made scenario templates for the standard experiments.

use std::path::PathBuf;

use crate::adversary::{AttackPlanConfig, ColluderPolicy, ReceiverChoice, RegionSpec};
use crate::config::{
    ArrivalLaw, BuilderPolicyConfig, MobilityConfig, PinnedNode, PlacementConfig, ScenarioConfig, ScriptedTx,
};

/// Size of the square walking area.
pub const WALK_AREA_KM2: f64 = 4.0;

fn metres(r: f64) -> f64 {
    r / (WALK_AREA_KM2.sqrt() * 1000.0)
}

/// Walking speed ranges in km/h.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Walk {
    /// 0.5 to 1.5 km/h.
    Normal,
    /// 0.1 to 0.5 km/h.
    Slow,
}

impl Walk {
    pub fn range(self) -> (f64, f64) {
        match self {
            Walk::Normal => (0.5, 1.5),
            Walk::Slow => (0.1, 0.5),
        }
    }
}

/// `n` walkers over 4 km² with coverage `r_m` metres and one payment from
/// user 0 to user 1 at `t = 1 s`.
pub fn single_payment_walk(n: usize, r_m: f64, walk: Walk, duration: f64, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(n, duration);
    let (lo, hi) = walk.range();
    cfg.mobility = MobilityConfig::Waypoint { speed_min: lo, speed_max: hi, area_km2: WALK_AREA_KM2, pause: 0.0 };
    cfg.params.r_cov = metres(r_m);
    cfg.tx_workload.scripted = vec![ScriptedTx { at: 1.0, from: 0, to: 1, amount: 1000 }];
    cfg.seed = seed;
    cfg
}

/// Static honest users on one connected patch, with a passive attacker at
/// the centre that tries to pay two receivers from the same coin.
pub fn passive_attack(n: usize, r_cov: f64, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(n, 60.0);
    cfg.placement = PlacementConfig::Uniform { n, pinned: vec![PinnedNode { id: 0, x: 0.5, y: 0.5 }] };
    cfg.params.r_cov = r_cov;
    cfg.params.block_size = 1;
    cfg.params.m_vu = 3;
    cfg.params.avd = 0.2;
    cfg.node.builder_policy = BuilderPolicyConfig::Any;
    cfg.adversary_plan = Some(AttackPlanConfig { attacker: 0, fake_tx_count: 2, start: 1.0, ..Default::default() });
    cfg.seed = seed;
    cfg
}

/// The attacker sits between two clusters that cannot hear each other and
/// hands each side a different fake.
pub fn split_attack(n: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = passive_attack(n, 0.25, seed);
    cfg.params.m_tr = 0;
    cfg.placement = PlacementConfig::Clusters {
        n,
        boxes: vec![[0.0, 0.0, 0.3, 1.0], [0.7, 0.0, 1.0, 1.0]],
        pinned: vec![PinnedNode { id: 0, x: 0.5, y: 0.5 }],
    };
    if let Some(p) = &mut cfg.adversary_plan {
        p.colluder_policy = ColluderPolicy::ForwardAllToSide;
        p.regions = Some(RegionSpec::HalfPlane { cut: 0.5 });
    }
    cfg
}

/// Two fakes `delay` seconds apart among walkers. The attacker pays
/// whoever he meets, and a fraction of users collude by never relaying the
/// fakes. Receivers accept on first sight.
pub fn fake_race(n: usize, r_m: f64, colluder_fraction: f64, delay: f64, seed: u64) -> ScenarioConfig {
    let mut cfg = single_payment_walk(n, r_m, Walk::Normal, delay + 120.0, seed);
    cfg.tx_workload.scripted.clear();
    cfg.params.m_tr = 0;
    cfg.adversary_plan = Some(AttackPlanConfig {
        attacker: 0,
        colluder_fraction,
        fake_tx_count: 2,
        inter_fake_delay: delay,
        start: 1.0,
        colluder_policy: ColluderPolicy::Withhold,
        receiver_choice: ReceiverChoice::Nearby,
        ..Default::default()
    });
    cfg
}

/// A fully connected static group under a Poisson payment stream of `rate`
/// payments per second.
pub fn poisson_load(n: usize, rate: f64, block_size: u32, duration: f64, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(n, duration);
    cfg.params.r_cov = 1.0;
    cfg.params.m_tr = 1;
    cfg.params.block_size = block_size;
    cfg.params.m_vu = 3;
    cfg.params.avd = 0.1;
    cfg.tx_workload.arrival = ArrivalLaw::Poisson;
    cfg.tx_workload.rate = rate;
    cfg.economy.initial_balance = 1_000_000;
    cfg.economy.initial_outputs = 20;
    cfg.seed = seed;
    cfg
}

/// Contact-trace replay with `fakes` fakes and half the users colluding.
/// Colluders only hand the fakes to each other and to the receivers.
pub fn trace_fakes(trace: PathBuf, users: usize, fakes: u32, duration: f64, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(users, duration);
    cfg.mobility = MobilityConfig::TraceReplay { trace };
    cfg.tx_workload.per_user = 1;
    cfg.adversary_plan = Some(AttackPlanConfig {
        attacker: 0,
        colluder_fraction: 0.5,
        fake_tx_count: fakes,
        start: 60.0,
        colluder_policy: ColluderPolicy::ForwardAllToSide,
        regions: Some(RegionSpec::Adversary),
        ..Default::default()
    });
    cfg.seed = seed;
    cfg
}
