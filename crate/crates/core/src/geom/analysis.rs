use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rgg::Rgg;
use crate::types::Location;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GeomError {
    #[error("need at least two locations")]
    TooFewLocations,
    #[error("need at least 1000 samples, got {0}")]
    TooFewSamples(usize),
    #[error("probability argument outside [0, 1]")]
    Probability,
}

/// Mean Euclidean distance over all unordered pairs.
pub fn average_pairwise_distance(locations: &[Location]) -> Result<f64, GeomError> {
    let n = locations.len();
    if n < 2 {
        return Err(GeomError::TooFewLocations);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += locations[i].distance(&locations[j]);
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegreeBound {
    pub satisfied: bool,
    pub connect_prob_bound: f64,
    pub expected_degree: f64,
}

/// Connectivity threshold `n r^d >= 2 ln n` and the matching degree law.
pub fn degree_bound_check(n: usize, r_cov: f64, dim: u32) -> DegreeBound {
    let nf = n as f64;
    let rd = libm::pow(r_cov, dim as f64);
    let half = dim as f64 / 2.0;
    let ball = libm::pow(core::f64::consts::PI, half) / libm::tgamma(1.0 + half);
    DegreeBound {
        satisfied: nf * rd >= 2.0 * libm::log(nf),
        connect_prob_bound: 1.0 - 1.0 / (nf * nf),
        expected_degree: ball * nf * rd,
    }
}

/// Hop bound `2(l + 1)` with `l = log_{1+beta}(n / (2 degree))`, floored at 2.
pub fn path_length_bound(beta: f64, n: usize, degree: f64) -> f64 {
    let ratio = n as f64 / (2.0 * degree);
    if ratio <= 1.0 {
        return 2.0;
    }
    2.0 * (libm::log(ratio) / libm::log1p(beta) + 1.0)
}

/// Smallest vertex-boundary ratio `|N(S) \ S| / |S|` over BFS balls (of every
/// radius that keeps `|S| <= n/2`) grown from `sources`.
pub fn empirical_expansion(g: &Rgg, sources: &[usize]) -> Option<f64> {
    let half = g.len() / 2;
    let mut best: Option<f64> = None;
    for &s in sources {
        let dist = g.bfs(s);
        let mut layers: Vec<usize> = Vec::new();
        for &d in &dist {
            if d != u32::MAX {
                let d = d as usize;
                if layers.len() <= d {
                    layers.resize(d + 1, 0);
                }
                layers[d] += 1;
            }
        }
        let mut ball = 0;
        for h in 0..layers.len() {
            ball += layers[h];
            if ball > half {
                break;
            }
            let boundary = layers.get(h + 1).copied().unwrap_or(0);
            let ratio = boundary as f64 / ball as f64;
            best = Some(best.map_or(ratio, |b: f64| b.min(ratio)));
        }
    }
    best
}

fn binomial_tail(q: f64, tn: u32, m_tr: u32) -> f64 {
    let mut sum = 0.0;
    let mut coeff = 1.0;
    for l in 0..=tn {
        if l >= m_tr {
            sum += coeff * libm::pow(q, l as f64) * libm::pow(1.0 - q, (tn - l) as f64);
        }
        coeff = coeff * (tn - l) as f64 / (l + 1) as f64;
    }
    sum
}

/// Probability that sender and receiver both sit in the covered share and at
/// least `m_tr` of the receiver's trusted peers are reached.
pub fn tx_success_probability(p: f64, frac_c: f64, tn_size: u32, m_tr: u32) -> Result<f64, GeomError> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&frac_c) {
        return Err(GeomError::Probability);
    }
    if m_tr > tn_size {
        return Ok(0.0);
    }
    let tail = binomial_tail(p * frac_c, tn_size, m_tr).clamp(0.0, 1.0);
    Ok(frac_c * frac_c * tail)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    UnitSquare,
    /// Disc of the given radius.
    Disc(f64),
    /// Quarter of a disc of the given radius.
    QuarterDisc(f64),
}

impl Region {
    pub fn sample(&self, rng: &mut impl Rng) -> Location {
        match *self {
            Region::UnitSquare => Location::new(rng.gen(), rng.gen()),
            Region::Disc(r) | Region::QuarterDisc(r) => {
                let rho = r * libm::sqrt(rng.gen::<f64>());
                let span = if matches!(self, Region::Disc(_)) {
                    2.0 * core::f64::consts::PI
                } else {
                    core::f64::consts::FRAC_PI_2
                };
                let theta = span * rng.gen::<f64>();
                Location::new(rho * libm::cos(theta), rho * libm::sin(theta))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte-Carlo mean distance between two independent uniform points of
/// `region`, from `samples` pairs.
pub fn mean_pairwise_distance_estimate(region: Region, samples: usize, seed: u64) -> Result<Estimate, GeomError> {
    if samples < 1000 {
        return Err(GeomError::TooFewSamples(samples));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..samples {
        let d = region.sample(&mut rng).distance(&region.sample(&mut rng));
        sum += d;
        sq += d * d;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(Estimate { mean, std_err: libm::sqrt(var / n) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Subcritical,
    Transition,
    Supercritical,
}

pub const PERCOLATION_LOWER: f64 = 0.696;
pub const PERCOLATION_EMPIRICAL: f64 = 1.44;
pub const PERCOLATION_UPPER: f64 = 3.372;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityReport {
    /// `n r^2` over the unit area.
    pub density: f64,
    /// `pi n r^2`.
    pub mean_degree: f64,
    pub phase: Phase,
    /// Within 2% of the empirical percolation density.
    pub at_percolation_point: bool,
}

pub fn critical_density_report(n: usize, r_cov: f64) -> DensityReport {
    let density = n as f64 * r_cov * r_cov;
    let phase = if density < PERCOLATION_LOWER {
        Phase::Subcritical
    } else if density > PERCOLATION_UPPER {
        Phase::Supercritical
    } else {
        Phase::Transition
    };
    DensityReport {
        density,
        mean_degree: core::f64::consts::PI * density,
        phase,
        at_percolation_point: libm::fabs(density / PERCOLATION_EMPIRICAL - 1.0) <= 0.02,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rgg::{generate_rgg, Placement};

    #[test]
    fn pairwise_distance_examples() {
        let two = [Location::new(0.0, 0.0), Location::new(1.0, 0.0)];
        assert_eq!(average_pairwise_distance(&two), Ok(1.0));
        let three = [Location::new(0.0, 0.0), Location::new(1.0, 0.0), Location::new(0.5, 0.0)];
        assert!((average_pairwise_distance(&three).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_pairwise_distance(&two[..1]), Err(GeomError::TooFewLocations));
    }

    #[test]
    fn degree_bound_examples() {
        let l = degree_bound_check(1000, 0.2, 2);
        assert!(l.satisfied);
        assert!((l.connect_prob_bound - 0.999999).abs() < 1e-12);
        assert!(!degree_bound_check(1000, 0.05, 2).satisfied);
        assert!((degree_bound_check(1000, 0.05, 2).expected_degree - core::f64::consts::PI * 2.5).abs() < 1e-9);
        // one dimension: the unit ball is a segment of length 2
        assert!((degree_bound_check(10, 0.1, 1).expected_degree - 2.0).abs() < 1e-12);
    }

    #[test]
    fn path_bound_examples() {
        assert!((path_length_bound(1.0, 1024, 8.0) - 14.0).abs() < 1e-12);
        assert!(path_length_bound(2.0, 1024, 8.0) < path_length_bound(1.0, 1024, 8.0));
        assert_eq!(path_length_bound(1.0, 10, 8.0), 2.0);
    }

    #[test]
    fn expansion_of_a_path() {
        // path on 10 vertices: ball of 5 around an end has one boundary vertex
        let pts = (0..10).map(|i| Location::new(i as f64 * 0.1, 0.0)).collect();
        let g = Rgg::from_positions(pts, 0.1001, false);
        assert_eq!(empirical_expansion(&g, &[0]), Some(0.2));
    }

    #[test]
    fn eq1_edges() {
        assert!((tx_success_probability(0.3, 0.7, 5, 0).unwrap() - 0.49).abs() < 1e-12);
        assert!((tx_success_probability(1.0, 1.0, 5, 5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tx_success_probability(0.5, 0.5, 3, 4), Ok(0.0));
        assert_eq!(tx_success_probability(1.5, 0.5, 3, 1), Err(GeomError::Probability));
    }

    #[test]
    fn estimator_rejects_small_sample() {
        assert_eq!(mean_pairwise_distance_estimate(Region::UnitSquare, 10, 0), Err(GeomError::TooFewSamples(10)));
    }

    #[test]
    fn estimates_match_closed_forms() {
        let square = (2.0 + libm::sqrt(2.0) + 5.0 * libm::log(1.0 + libm::sqrt(2.0))) / 15.0;
        let disc = 128.0 / (45.0 * core::f64::consts::PI);
        for (region, exact) in [(Region::UnitSquare, square), (Region::Disc(1.0), disc), (Region::Disc(2.0), 2.0 * disc)] {
            let e = mean_pairwise_distance_estimate(region, 200_000, 4).unwrap();
            assert!((e.mean - exact).abs() < 4.0 * e.std_err, "{region:?}: {} vs {exact}", e.mean);
        }
    }

    #[test]
    fn quarter_disc_samples_stay_in_quadrant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = Region::QuarterDisc(1.0).sample(&mut rng);
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x * p.x + p.y * p.y <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn density_phases() {
        assert_eq!(critical_density_report(1000, 0.02).phase, Phase::Subcritical);
        let at = critical_density_report(1000, libm::sqrt(1.44 / 1000.0));
        assert_eq!(at.phase, Phase::Transition);
        assert!(at.at_percolation_point);
        assert_eq!(critical_density_report(1000, 0.1).phase, Phase::Supercritical);
    }

    #[test]
    fn bfs_distances_respect_path_bound() {
        let g = generate_rgg(&Placement::uniform(300), 0.2, 3);
        assert_eq!(crate::geom::rgg::connected_components(&g).len(), 1);
        let all: Vec<usize> = (0..g.len()).collect();
        let beta = empirical_expansion(&g, &all).unwrap();
        let min_deg = (0..g.len()).map(|v| g.degree(v)).min().unwrap() as f64;
        let bound = path_length_bound(beta, g.len(), min_deg);
        for s in 0..g.len() {
            assert!(g.bfs(s).iter().all(|&d| d as f64 <= bound));
        }
    }
}
