use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::Location;

/// How users are dropped into the service area.
#[derive(Clone, Debug, PartialEq)]
pub enum PlacementKind {
    Uniform,
    /// 10x10 cells, each holding a Poisson number of users whose rate is
    /// proportional to the cell weight (weights are rescaled so the expected
    /// total is `n`).
    GridPoisson { weights: [[f64; 10]; 10] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub kind: PlacementKind,
    pub n: usize,
    pub torus: bool,
}

impl Placement {
    pub fn uniform(n: usize) -> Self {
        Placement { kind: PlacementKind::Uniform, n, torus: false }
    }

    pub fn torus(n: usize) -> Self {
        Placement { kind: PlacementKind::Uniform, n, torus: true }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<Location> {
        match &self.kind {
            PlacementKind::Uniform => {
                (0..self.n).map(|_| Location::new(rng.gen::<f64>(), rng.gen::<f64>())).collect()
            }
            PlacementKind::GridPoisson { weights } => {
                let total: f64 = weights.iter().flatten().sum();
                let mut out = Vec::new();
                if total <= 0.0 {
                    return out;
                }
                for (row, ws) in weights.iter().enumerate() {
                    for (col, w) in ws.iter().enumerate() {
                        let count = poisson(rng, self.n as f64 * w / total);
                        for _ in 0..count {
                            let x = (col as f64 + rng.gen::<f64>()) / 10.0;
                            let y = (row as f64 + rng.gen::<f64>()) / 10.0;
                            out.push(Location::new(x, y));
                        }
                    }
                }
                out
            }
        }
    }
}

/// Poisson variate by multiplication of uniforms, in chunks so `exp(-rate)`
/// never underflows.
pub fn poisson(rng: &mut impl Rng, rate: f64) -> u64 {
    let mut remaining = rate.max(0.0);
    let mut count = 0;
    while remaining > 0.0 {
        let chunk = remaining.min(200.0);
        remaining -= chunk;
        let limit = libm::exp(-chunk);
        let mut prod = rng.gen::<f64>();
        while prod > limit {
            count += 1;
            prod *= rng.gen::<f64>();
        }
    }
    count
}

pub(crate) fn wrapped_delta(a: f64, b: f64, torus: bool) -> f64 {
    let d = libm::fabs(a - b);
    if torus {
        d.min(1.0 - d)
    } else {
        d
    }
}

/// Random geometric graph: an edge joins every pair within `radius`.
#[derive(Clone, Debug)]
pub struct Rgg {
    pub positions: Vec<Location>,
    pub radius: f64,
    pub torus: bool,
    adjacency: Vec<Vec<u32>>,
}

impl Rgg {
    pub fn from_positions(positions: Vec<Location>, radius: f64, torus: bool) -> Self {
        let adjacency = neighbor_lists(&positions, radius, torus);
        Rgg { positions, radius, torus, adjacency }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        2.0 * self.edge_count() as f64 / self.len() as f64
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.positions[a], self.positions[b]);
        libm::hypot(wrapped_delta(p.x, q.x, self.torus), wrapped_delta(p.y, q.y, self.torus))
    }

    /// Hop distances from `source`; `u32::MAX` marks unreachable vertices.
    pub fn bfs(&self, source: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.len()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                let w = w as usize;
                if dist[w] == u32::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// Neighbor lists for all pairs within `radius`, found through a cell grid.
pub fn neighbor_lists(positions: &[Location], radius: f64, torus: bool) -> Vec<Vec<u32>> {
    let n = positions.len();
    let mut adjacency = vec![Vec::new(); n];
    if n < 2 || radius <= 0.0 {
        return adjacency;
    }
    let cells = ((1.0 / radius) as usize).clamp(1, 1024);
    let cell_of = |v: f64| ((v * cells as f64) as usize).min(cells - 1);
    let mut grid: Vec<Vec<u32>> = vec![Vec::new(); cells * cells];
    for (i, p) in positions.iter().enumerate() {
        grid[cell_of(p.y) * cells + cell_of(p.x)].push(i as u32);
    }
    let r2 = radius * radius;
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = (cell_of(p.x) as isize, cell_of(p.y) as isize);
        let mut visited = [usize::MAX; 9];
        let mut k = 0;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (mut x, mut y) = (cx + dx, cy + dy);
                if torus {
                    x = x.rem_euclid(cells as isize);
                    y = y.rem_euclid(cells as isize);
                } else if x < 0 || y < 0 || x >= cells as isize || y >= cells as isize {
                    continue;
                }
                let cell = y as usize * cells + x as usize;
                // small grids wrap onto the same cell more than once
                if visited[..k].contains(&cell) {
                    continue;
                }
                visited[k] = cell;
                k += 1;
                for &j in &grid[cell] {
                    if j as usize == i {
                        continue;
                    }
                    let q = positions[j as usize];
                    let ddx = wrapped_delta(p.x, q.x, torus);
                    let ddy = wrapped_delta(p.y, q.y, torus);
                    if ddx * ddx + ddy * ddy <= r2 {
                        adjacency[i].push(j);
                    }
                }
            }
        }
        adjacency[i].sort_unstable();
    }
    adjacency
}

/// Places users per `placement` and links those within `radius`.
pub fn generate_rgg(placement: &Placement, radius: f64, seed: u64) -> Rgg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = placement.sample(&mut rng);
    Rgg::from_positions(positions, radius, placement.torus)
}

/// Connected components, each sorted, ordered by their smallest vertex.
pub fn connected_components(g: &Rgg) -> Vec<Vec<usize>> {
    let n = g.len();
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut comp = vec![s];
        label[s] = id;
        let mut head = 0;
        while head < comp.len() {
            let v = comp[head];
            head += 1;
            for &w in g.neighbors(v) {
                let w = w as usize;
                if label[w] == usize::MAX {
                    label[w] = id;
                    comp.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Share of vertices in the largest component (0 for an empty graph).
pub fn major_component_fraction(g: &Rgg) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    let largest = connected_components(g).iter().map(Vec::len).max().unwrap_or(0);
    largest as f64 / g.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_distance_is_an_edge() {
        let g = Rgg::from_positions(vec![Location::new(0.2, 0.5), Location::new(0.25, 0.5)], 0.05, false);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn single_vertex_has_no_edges() {
        let g = generate_rgg(&Placement::uniform(1), 0.5, 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(connected_components(&g), vec![vec![0]]);
    }

    #[test]
    fn torus_wraps_edges() {
        let pos = vec![Location::new(0.01, 0.5), Location::new(0.99, 0.5)];
        assert_eq!(Rgg::from_positions(pos.clone(), 0.05, true).edge_count(), 1);
        assert_eq!(Rgg::from_positions(pos, 0.05, false).edge_count(), 0);
    }

    #[test]
    fn complete_and_isolated_graphs() {
        let g = generate_rgg(&Placement::uniform(30), 2.0, 4);
        assert_eq!(g.edge_count(), 30 * 29 / 2);
        assert_eq!(connected_components(&g).len(), 1);
        assert_eq!(major_component_fraction(&g), 1.0);
        let pts = (0..10).map(|i| Location::new(i as f64 / 10.0, 0.0)).collect();
        let g = Rgg::from_positions(pts, 0.01, false);
        assert_eq!(connected_components(&g).len(), 10);
    }

    #[test]
    fn two_equal_halves() {
        let pts = vec![
            Location::new(0.1, 0.1),
            Location::new(0.12, 0.1),
            Location::new(0.9, 0.9),
            Location::new(0.92, 0.9),
        ];
        let g = Rgg::from_positions(pts, 0.05, false);
        assert_eq!(major_component_fraction(&g), 0.5);
    }

    #[test]
    fn grid_matches_brute_force() {
        for seed in 0..5 {
            for torus in [false, true] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pts = Placement::uniform(300).sample(&mut rng);
                let g = Rgg::from_positions(pts.clone(), 0.08, torus);
                for i in 0..pts.len() {
                    let expect: Vec<u32> =
                        (0..pts.len()).filter(|&j| j != i && g.distance(i, j) <= 0.08).map(|j| j as u32).collect();
                    assert_eq!(g.neighbors(i), expect.as_slice());
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_rgg(&Placement::uniform(200), 0.1, 9);
        let b = generate_rgg(&Placement::uniform(200), 0.1, 9);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.edge_count(), b.edge_count());
    }

    #[test]
    fn grid_poisson_expected_count() {
        let placement = Placement {
            kind: PlacementKind::GridPoisson { weights: [[1.0; 10]; 10] },
            n: 1000,
            torus: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let total: usize = (0..50).map(|_| placement.sample(&mut rng).len()).sum();
        let mean = total as f64 / 50.0;
        // sd of the mean is sqrt(1000/50) ~ 4.5
        assert!((mean - 1000.0).abs() < 20.0, "{mean}");
    }

    #[test]
    fn poisson_mean_for_large_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean = (0..200).map(|_| poisson(&mut rng, 900.0)).sum::<u64>() as f64 / 200.0;
        assert!((mean - 900.0).abs() < 10.0, "{mean}");
    }
}
