//! Node movement and the contact graph it induces.

use localcoin_core::geom::neighbor_lists;
use localcoin_core::Location;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::trace::{ContactSchedule, Trace};

#[derive(Clone, Copy, Debug)]
pub struct Walker {
    target: Location,
    /// Normalized units per second.
    speed: f64,
    pause_left: f64,
}

#[derive(Clone, Debug)]
pub enum Mobility {
    Static,
    Waypoint {
        walkers: Vec<Walker>,
        /// Normalized units per second.
        speed_range: (f64, f64),
        pause: f64,
    },
    Trace(ContactSchedule),
}

/// Normalized units per second for a walking speed in km/h over a square
/// area of `area_km2`.
pub fn normalized_speed(kmh: f64, area_km2: f64) -> f64 {
    let side_m = area_km2.sqrt() * 1000.0;
    kmh * 1000.0 / 3600.0 / side_m
}

impl Mobility {
    pub fn waypoint(
        positions: &[Location],
        speed_min_kmh: f64,
        speed_max_kmh: f64,
        area_km2: f64,
        pause: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let speed_range = (normalized_speed(speed_min_kmh, area_km2), normalized_speed(speed_max_kmh, area_km2));
        let walkers = positions.iter().map(|_| new_leg(speed_range, 0.0, rng)).collect();
        Mobility::Waypoint { walkers, speed_range, pause }
    }

    pub fn trace(trace: &Trace) -> Self {
        Mobility::Trace(ContactSchedule::new(trace))
    }

    /// Moves every node by `dt` seconds.
    pub fn advance(&mut self, positions: &mut [Location], dt: f64, rng: &mut ChaCha8Rng) {
        let Mobility::Waypoint { walkers, speed_range, pause } = self else { return };
        for (w, p) in walkers.iter_mut().zip(positions.iter_mut()) {
            let mut left = dt;
            while left > 0.0 {
                if w.pause_left > 0.0 {
                    let wait = w.pause_left.min(left);
                    w.pause_left -= wait;
                    left -= wait;
                    continue;
                }
                let dist = p.distance(&w.target);
                let step = w.speed * left;
                if step < dist {
                    let f = step / dist;
                    p.x += (w.target.x - p.x) * f;
                    p.y += (w.target.y - p.y) * f;
                    left = 0.0;
                } else {
                    *p = w.target;
                    left -= dist / w.speed;
                    *w = new_leg(*speed_range, *pause, rng);
                }
            }
        }
    }

    /// Who can hear whom at time `t`.
    pub fn neighbors(&mut self, t: f64, positions: &[Location], r_cov: f64, torus: bool) -> Vec<Vec<u32>> {
        match self {
            Mobility::Trace(s) => s.neighbors_at(t, positions.len()),
            _ => neighbor_lists(positions, r_cov, torus),
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, Mobility::Static)
    }
}

fn new_leg(speed_range: (f64, f64), pause: f64, rng: &mut ChaCha8Rng) -> Walker {
    let target = Location::new(rng.gen(), rng.gen());
    let speed = if speed_range.1 > speed_range.0 { rng.gen_range(speed_range.0..=speed_range.1) } else { speed_range.0 };
    Walker { target, speed, pause_left: pause }
}
