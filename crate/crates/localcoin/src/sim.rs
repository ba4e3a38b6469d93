//! Deterministic tick-driven engine. Broadcasts sent during tick `t` reach
//! every node in range of the sender at tick `t + 1`.

use std::collections::{BTreeMap, BTreeSet};

use localcoin_core::geom::{Placement, PlacementKind};
use localcoin_core::node::{genesis_block, Behavior, Ctx, Effects, EventKind, NodeState};
use localcoin_core::{Block, Coins, Digest, KeyRing, Location, Message, SimTime, Signer, TransactionBody, UserId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{AttackPlan, ReceiverChoice};
use crate::config::{ArrivalLaw, MobilityConfig, PlacementConfig, ScenarioConfig};
use crate::log::{sim_event, EventLog};
use crate::metrics::{compute_report, MetricsReport};
use crate::mobility::Mobility;
use crate::trace::{load_trace, TraceError};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace has {trace} users but the placement only {placement}")]
    TraceUsers { trace: usize, placement: usize },
    #[error("placement produced no users")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Action {
    Pay { from: usize, to: usize, amount: Coins },
    Fake(u32),
}

/// Output of one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: EventLog,
    pub report: MetricsReport,
}

pub struct World {
    ring: KeyRing,
    pub nodes: Vec<NodeState>,
    pub positions: Vec<Location>,
    torus: bool,
    r_cov: f64,
    mobility: Mobility,
    rng: ChaCha8Rng,
    tick_ms: u64,
    tick: u64,
    last_tick: u64,
    inflight: Vec<(usize, Message)>,
    prev_neighbors: Vec<Vec<u32>>,
    actions: Vec<(SimTime, Action)>,
    next_action: usize,
    fees: (Coins, Coins),
    pub plan: Option<AttackPlan>,
    pub fakes: BTreeMap<Digest, usize>,
    adversarial: Vec<bool>,
    fake_input: Option<(Digest, Coins)>,
    /// Fakes due but waiting for the attacker to meet an honest user.
    waiting_fakes: Vec<u32>,
    last_fake_at: Option<SimTime>,
    pub log: EventLog,
    messages: u64,
    deliveries: u64,
    pub genesis: Block,
}

fn sample_positions(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> (Vec<Location>, bool) {
    match &cfg.placement {
        PlacementConfig::Uniform { n, pinned } => {
            let mut p = Placement::uniform(*n).sample(rng);
            for pin in pinned {
                p[pin.id as usize] = Location::new(pin.x, pin.y);
            }
            (p, false)
        }
        PlacementConfig::Torus { n } => (Placement::torus(*n).sample(rng), true),
        PlacementConfig::GridPoisson { weights } => {
            let mut w = [[0.0; 10]; 10];
            for (i, row) in weights.iter().enumerate() {
                w[i].copy_from_slice(row);
            }
            let pl = Placement { kind: PlacementKind::GridPoisson { weights: w }, n: 0, torus: false };
            (pl.sample(rng), false)
        }
        PlacementConfig::Clusters { n, boxes, pinned } => {
            let mut p: Vec<Location> = (0..*n)
                .map(|i| {
                    let [x0, y0, x1, y1] = boxes[i % boxes.len()];
                    Location::new(x0 + (x1 - x0) * rng.gen::<f64>(), y0 + (y1 - y0) * rng.gen::<f64>())
                })
                .collect();
            for pin in pinned {
                p[pin.id as usize] = Location::new(pin.x, pin.y);
            }
            (p, false)
        }
    }
}

/// Symmetric trusted networks: each user picks `k` others at random.
fn trust_networks(n: usize, k: u32, rng: &mut ChaCha8Rng) -> Vec<BTreeSet<UserId>> {
    let mut tn = vec![BTreeSet::new(); n];
    if n < 2 {
        return tn;
    }
    for i in 0..n {
        for _ in 0..k.min(n as u32 - 1) {
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            tn[i].insert(UserId(j as u64));
            tn[j].insert(UserId(i as u64));
        }
    }
    tn
}

fn schedule(cfg: &ScenarioConfig, n: usize, plan: Option<&AttackPlan>, rng: &mut ChaCha8Rng) -> Vec<(SimTime, Action)> {
    let w = &cfg.tx_workload;
    let amount = Coins::from_millis(w.amount);
    let mut out = Vec::new();
    let excluded = |u: usize| plan.is_some_and(|p| p.attacker.0 as usize == u);
    let pick_other = |rng: &mut ChaCha8Rng, from: usize| {
        let mut to = rng.gen_range(0..n - 1);
        if to >= from {
            to += 1;
        }
        to
    };
    if n >= 2 {
        match w.arrival {
            ArrivalLaw::Uniform if w.start < cfg.duration => {
                for from in 0..n {
                    for _ in 0..w.per_user {
                        let at = rng.gen_range(w.start..cfg.duration);
                        let to = pick_other(rng, from);
                        if !excluded(from) {
                            out.push((SimTime::from_secs_f64(at), Action::Pay { from, to, amount }));
                        }
                    }
                }
            }
            ArrivalLaw::Poisson if w.rate > 0.0 => {
                let mut t = w.start;
                loop {
                    let u: f64 = rng.gen();
                    t += -(1.0 - u).ln() / w.rate;
                    if t >= cfg.duration {
                        break;
                    }
                    let from = rng.gen_range(0..n);
                    let to = pick_other(rng, from);
                    if !excluded(from) {
                        out.push((SimTime::from_secs_f64(t), Action::Pay { from, to, amount }));
                    }
                }
            }
            _ => {}
        }
    }
    for s in &w.scripted {
        out.push((
            SimTime::from_secs_f64(s.at),
            Action::Pay { from: s.from as usize, to: s.to as usize, amount: Coins::from_millis(s.amount) },
        ));
    }
    if let Some(p) = plan {
        for k in 0..p.fake_tx_count {
            out.push((p.fake_time(k), Action::Fake(k)));
        }
    }
    // stable: equal times keep generation order
    out.sort_by_key(|(t, _)| *t);
    out
}

impl World {
    pub fn new(cfg: &ScenarioConfig) -> Result<World, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (positions, torus) = sample_positions(cfg, &mut rng);
        let n = positions.len();
        if n == 0 {
            return Err(SimError::Empty);
        }
        let mobility = match &cfg.mobility {
            MobilityConfig::Static => Mobility::Static,
            MobilityConfig::Waypoint { speed_min, speed_max, area_km2, pause } => {
                Mobility::waypoint(&positions, *speed_min, *speed_max, *area_km2, *pause, &mut rng)
            }
            MobilityConfig::TraceReplay { trace } => {
                let t = load_trace(trace)?;
                if t.users > n {
                    return Err(SimError::TraceUsers { trace: t.users, placement: n });
                }
                Mobility::trace(&t)
            }
        };
        let plan = cfg.adversary_plan.as_ref().map(|p| AttackPlan::resolve(p, &positions, &mut rng));
        let actions = schedule(cfg, n, plan.as_ref(), &mut rng);
        let tn = trust_networks(n, cfg.economy.trust_size, &mut rng);

        let mut funded = vec![false; n];
        let w = &cfg.tx_workload;
        let random_load = w.per_user > 0 || (w.arrival == ArrivalLaw::Poisson && w.rate > 0.0);
        for (i, f) in funded.iter_mut().enumerate() {
            *f = random_load || plan.as_ref().is_some_and(|p| p.attacker.0 as usize == i);
        }
        for s in &w.scripted {
            funded[s.from as usize] = true;
        }

        let mut ring = KeyRing::new(cfg.seed ^ 0x4c43_5345_4544);
        let mint = ring.issue(UserId::MINT).expect("fresh ring");
        let signers: Vec<Signer> = (0..n).map(|i| ring.issue(UserId(i as u64)).expect("fresh ring")).collect();
        let outputs = cfg.economy.initial_outputs as u64;
        let each = Coins::from_millis(cfg.economy.initial_balance / outputs);
        let endow: Vec<(&Signer, Coins)> = signers
            .iter()
            .enumerate()
            .filter(|(i, _)| funded[*i])
            .flat_map(|(_, s)| (0..outputs).map(move |_| (s, each)))
            .collect();
        let genesis = genesis_block(&mint, &endow);
        let params = cfg.protocol();
        let node_cfg = cfg.node.into();
        let adversarial: Vec<bool> =
            (0..n).map(|i| plan.as_ref().is_some_and(|p| p.is_adversarial(UserId(i as u64)))).collect();
        let nodes: Vec<NodeState> = signers
            .into_iter()
            .zip(&positions)
            .zip(tn)
            .enumerate()
            .map(|(i, ((s, loc), tn))| {
                let mut node = NodeState::new(s, *loc, params, node_cfg, tn);
                if adversarial[i] {
                    node = node.with_behavior(Behavior::colluder());
                }
                node.install_genesis(&genesis);
                node
            })
            .collect();
        let fake_input = plan.as_ref().and_then(|p| {
            genesis.transactions.iter().find(|t| t.tx.receiver == p.attacker).map(|t| (t.tx.id(), t.tx.amount_to_receiver))
        });

        let tick_ms = SimTime::from_secs_f64(cfg.tick).millis();
        let last_tick = SimTime::from_secs_f64(cfg.duration).millis().div_ceil(tick_ms);
        let mut log = EventLog::new();
        log.sim(0, None, sim_event::SCENARIO, Digest::ZERO, n as u64);
        log.sim(0, None, sim_event::TICK_MS, Digest::ZERO, tick_ms);
        if let Some(p) = &plan {
            log.sim(0, Some(p.attacker.0), sim_event::ATTACKER, Digest::ZERO, 0);
            for c in &p.colluders {
                log.sim(0, Some(c.0), sim_event::COLLUDER, Digest::ZERO, 0);
            }
        }
        let fees = (Coins::from_millis(w.tx_fee), Coins::from_millis(w.block_fee));
        Ok(World {
            ring,
            nodes,
            positions,
            torus,
            r_cov: params.r_cov,
            mobility,
            rng,
            tick_ms,
            tick: 0,
            last_tick,
            inflight: Vec::new(),
            prev_neighbors: vec![Vec::new(); n],
            actions,
            next_action: 0,
            fees,
            plan,
            fakes: BTreeMap::new(),
            adversarial,
            fake_input,
            waiting_fakes: Vec::new(),
            last_fake_at: None,
            log,
            messages: 0,
            deliveries: 0,
            genesis,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn now(&self) -> SimTime {
        SimTime(self.tick * self.tick_ms)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn ring(&self) -> &KeyRing {
        &self.ring
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.last_tick
    }

    /// Broadcasts delivered so far, counted per receiving node.
    pub fn deliveries(&self) -> u64 {
        self.deliveries
    }

    /// Sends fake `k`, picking its receiver first if the plan defers that.
    /// Returns false if the attacker has no one to pay yet or the previous
    /// fake went out less than the inter-fake delay ago.
    fn emit_fake(&mut self, ctx: Ctx<'_>, k: u32, out: &mut Vec<(usize, Message)>) -> bool {
        let plan = self.plan.as_ref().expect("fakes come with a plan");
        let Some((input, value)) = self.fake_input else { return true };
        if self.last_fake_at.is_some_and(|t| ctx.now < t + plan.inter_fake_delay) {
            return false;
        }
        let attacker = plan.attacker;
        let receiver = if plan.receiver_choice == ReceiverChoice::Nearby {
            let honest: Vec<usize> = self.prev_neighbors[attacker.0 as usize]
                .iter()
                .map(|&v| v as usize)
                .filter(|&v| !self.adversarial[v])
                .collect();
            let fresh: Vec<usize> = honest
                .iter()
                .copied()
                .filter(|&v| !self.fakes.keys().any(|d| self.nodes[v].holds(d)))
                .collect();
            let pool = if fresh.is_empty() { &honest } else { &fresh };
            let Some(&r) = pool.choose(&mut self.rng) else { return false };
            let r = UserId(r as u64);
            self.plan.as_mut().expect("checked").receivers[k as usize] = r;
            r
        } else {
            plan.receivers[k as usize]
        };
        let body = TransactionBody {
            sender: attacker,
            receiver,
            inputs: vec![input],
            amount_to_receiver: value,
            change: Coins::ZERO,
            tx_fee: Coins::ZERO,
            block_fee: Coins::ZERO,
            balance_note: value,
            timestamp: ctx.now,
        };
        let mut fx = Effects::new();
        let tx = self.nodes[attacker.0 as usize].emit_transaction(ctx, body, &mut fx);
        let d = tx.id();
        self.fakes.insert(d, k as usize);
        self.last_fake_at = Some(ctx.now);
        self.log.sim(self.tick, Some(attacker.0), sim_event::FAKE_CREATED, d, k as u64);
        self.log.sim(self.tick, Some(attacker.0), sim_event::FAKE_RECEIVER, d, receiver.0);
        self.absorb(attacker.0 as usize, fx, out);
        true
    }

    fn absorb(&mut self, node: usize, fx: Effects, out: &mut Vec<(usize, Message)>) {
        for e in &fx.events {
            self.log.node_event(self.tick, node as u64, e);
            if e.kind == EventKind::BlockCreated {
                if let Some(b) = self.nodes[node].chain().block(&e.digest) {
                    for d in b.tx_ids() {
                        self.log.sim(self.tick, Some(node as u64), sim_event::BLOCK_TX, d, e.digest.prefix_u64());
                    }
                }
            }
        }
        out.extend(fx.outbox.into_iter().map(|m| (node, m)));
    }

    /// Advances one tick: move, deliver last tick's broadcasts, re-send on
    /// new contacts, run scheduled payments and housekeeping.
    pub fn step(&mut self) {
        self.tick += 1;
        let now = self.now();
        let dt = self.tick_ms as f64 / 1000.0;
        self.mobility.advance(&mut self.positions, dt, &mut self.rng);
        if !self.mobility.is_static() {
            for (n, p) in self.nodes.iter_mut().zip(&self.positions) {
                n.location = *p;
            }
        }
        let neighbors = self.mobility.neighbors(now.as_secs_f64(), &self.positions, self.r_cov, self.torus);
        let ring = self.ring.clone();
        let ctx = Ctx { now, ring: &ring };

        let mut out = Vec::new();
        for (from, msg) in std::mem::take(&mut self.inflight) {
            for &to in &neighbors[from] {
                let to = to as usize;
                if self.adversarial[from] {
                    if let Some(plan) = &self.plan {
                        if !plan.passes(UserId(from as u64), &msg, UserId(to as u64), &self.fakes, &self.positions) {
                            continue;
                        }
                    }
                }
                self.deliveries += 1;
                let mut fx = Effects::new();
                self.nodes[to].handle(ctx, msg.clone(), UserId(from as u64), &mut fx);
                self.absorb(to, fx, &mut out);
            }
        }

        for i in 0..self.nodes.len() {
            let gained = neighbors[i].iter().any(|v| self.prev_neighbors[i].binary_search(v).is_err());
            if gained {
                let mut fx = Effects::new();
                self.nodes[i].on_contact(ctx, &mut fx);
                self.absorb(i, fx, &mut out);
            }
        }
        self.prev_neighbors = neighbors;

        while self.next_action < self.actions.len() && self.actions[self.next_action].0 <= now {
            let (_, action) = self.actions[self.next_action];
            self.next_action += 1;
            match action {
                Action::Pay { from, to, amount } => {
                    let mut fx = Effects::new();
                    let r = self.nodes[from].send(ctx, UserId(to as u64), amount, self.fees, &mut fx);
                    if r.is_err() {
                        self.log.sim(self.tick, Some(from as u64), sim_event::TX_REFUSED, Digest::ZERO, amount.millis());
                    }
                    self.absorb(from, fx, &mut out);
                }
                Action::Fake(k) => self.waiting_fakes.push(k),
            }
        }
        let due = std::mem::take(&mut self.waiting_fakes);
        for (n, k) in due.iter().enumerate() {
            if !self.emit_fake(ctx, *k, &mut out) {
                self.waiting_fakes.extend_from_slice(&due[n..]);
                break;
            }
        }

        for i in 0..self.nodes.len() {
            let mut fx = Effects::new();
            self.nodes[i].on_tick(ctx, &mut fx);
            self.absorb(i, fx, &mut out);
        }
        self.messages += out.len() as u64;
        self.inflight = out;
    }

    /// Runs to the configured duration and closes the log.
    pub fn run_to_end(&mut self) {
        while !self.finished() {
            self.step();
        }
        self.close();
    }

    fn close(&mut self) {
        if self.log.is_complete() {
            return;
        }
        self.log.sim(self.tick, None, sim_event::MESSAGES, Digest::ZERO, self.messages);
        self.log.sim(self.tick, None, sim_event::END, Digest::ZERO, self.tick);
    }
}

/// Builds, runs and measures one scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    let mut world = World::new(cfg)?;
    world.run_to_end();
    let report = compute_report(&world.log).expect("engine logs are complete");
    Ok(RunOutput { log: std::mem::take(&mut world.log), report })
}
