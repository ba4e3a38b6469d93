//! Closed-form attack geometry: how many colluders a virtual cut needs, how
//! much area an attacker must control, and how likely a dynamic attack is.

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AttackError {
    #[error("zeta must differ from 1")]
    UnitZeta,
    #[error("no colluder count satisfies the cut inequality")]
    Infeasible,
    #[error("argument outside its domain")]
    Domain,
}

/// Shape of a virtual-cut attack and the two empirical distance constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackGeometry {
    /// Size of the isolated component A as a share of all users.
    pub alpha: f64,
    /// Mean pairwise distance inside A over aVd.
    pub gamma: f64,
    /// Mean distance between colluders and A (and among colluders) over aVd.
    pub zeta: f64,
    pub r_prime: f64,
    /// Mean pairwise distance in a quarter of a unit disc, as published.
    pub d_tilde: f64,
    /// Mean pairwise distance in a unit disc, as published.
    pub d_bar: f64,
}

impl Default for AttackGeometry {
    fn default() -> Self {
        AttackGeometry { alpha: 1.0, gamma: 0.5, zeta: 1.5, r_prime: 0.0, d_tilde: 0.45, d_bar: 0.903 }
    }
}

impl AttackGeometry {
    /// Left-hand side of the cut inequality for `m` colluders among `n` users.
    pub fn cut_margin(&self, m: f64, n: f64) -> f64 {
        let an = self.alpha * n;
        2.0 * an * m * (self.zeta - 1.0) + m * m * (self.zeta - 1.0) + an * an * (self.gamma - 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColluderBound {
    pub count: u64,
    pub fraction: f64,
}

/// Smallest colluder count whose cut pushes the verifiers' mean distance over
/// aVd. Needs no colluders when A is already spread out (`gamma >= 1`).
pub fn min_colluders_virtual_cut(g: &AttackGeometry, n: u64) -> Result<ColluderBound, AttackError> {
    if g.zeta == 1.0 {
        return Err(AttackError::UnitZeta);
    }
    let nf = n as f64;
    let done = |count: u64| Ok(ColluderBound { count, fraction: if n == 0 { 0.0 } else { count as f64 / nf } });
    if g.gamma >= 1.0 {
        return done(0);
    }
    if g.zeta < 1.0 {
        // downward parabola with its vertex at a negative count
        return Err(AttackError::Infeasible);
    }
    let a = g.zeta - 1.0;
    let b = 2.0 * g.alpha * nf * a;
    let c = g.alpha * g.alpha * nf * nf * (g.gamma - 1.0);
    let root = (-b + libm::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);
    let mut m = libm::ceil(root).max(0.0) as u64;
    while m > 0 && g.cut_margin((m - 1) as f64, nf) > 0.0 {
        m -= 1;
    }
    while g.cut_margin(m as f64, nf) <= 0.0 {
        m += 1;
    }
    if m > n {
        return Err(AttackError::Infeasible);
    }
    done(m)
}

/// Area of the ring of width `2 r_cov` the attacker must hold around a disc
/// of radius `r_prime`.
pub fn annulus_control_area(r_prime: f64, r_cov: f64) -> Result<f64, AttackError> {
    if !(r_cov >= 0.0 && r_prime > 2.0 * r_cov) {
        return Err(AttackError::Infeasible);
    }
    Ok(4.0 * core::f64::consts::PI * r_cov * (r_prime - r_cov))
}

/// Lower bound on the quarter-ring area an attacker in a corner must hold.
pub fn corner_control_area(avd: f64, r_cov: f64, d_tilde: f64) -> Result<f64, AttackError> {
    if d_tilde <= 0.0 || r_cov < 0.0 {
        return Err(AttackError::Domain);
    }
    let reach = avd / d_tilde;
    if reach <= r_cov {
        return Err(AttackError::Infeasible);
    }
    Ok(core::f64::consts::PI * r_cov * (reach - r_cov))
}

/// Smallest aVd forcing a verifier disc to cover half the service area.
pub fn min_avd_for_half_coverage(d_bar: f64) -> Result<f64, AttackError> {
    if !(d_bar > 0.0 && d_bar < 1.0 + f64::EPSILON) {
        return Err(AttackError::Domain);
    }
    Ok(d_bar * libm::sqrt(0.5 / core::f64::consts::PI))
}

/// Chance that none of the `n - m` honest users is inside the controlled
/// share `frac_r` of the area.
pub fn dynamic_attack_success_prob(frac_r: f64, n: u64, m: u64) -> Result<f64, AttackError> {
    if !(0.0..=1.0).contains(&frac_r) || m > n {
        return Err(AttackError::Domain);
    }
    Ok(libm::pow(frac_r, (n - m) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicAttackCheck {
    pub connectivity_met: bool,
    pub expansion_met: bool,
    /// `1/n^2` when both conditions hold.
    pub bound: Option<f64>,
}

impl DynamicAttackCheck {
    pub fn conditions_met(&self) -> bool {
        self.connectivity_met && self.expansion_met
    }
}

/// Conditions under which double spending succeeds with probability at most
/// `1/n^2`; `lambda_ratio` is aVd over r_cov.
pub fn dynamic_attack_check(n: u64, avd: f64, lambda_ratio: f64, degree: f64) -> Result<DynamicAttackCheck, AttackError> {
    if !(lambda_ratio > 0.0) || n < 2 {
        return Err(AttackError::Domain);
    }
    let nf = n as f64;
    let r = avd / lambda_ratio;
    let connectivity_met = nf * r * r >= 2.0 * libm::log(nf);
    let expansion_met = lambda_ratio * degree > nf / 2.0;
    let bound = (connectivity_met && expansion_met).then(|| 1.0 / (nf * nf));
    Ok(DynamicAttackCheck { connectivity_met, expansion_met, bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_cut_example() {
        let b = min_colluders_virtual_cut(&AttackGeometry::default(), 1000).unwrap();
        assert_eq!(b.count, 415);
        assert!((0.414..=0.415).contains(&b.fraction));
    }

    #[test]
    fn spread_component_needs_no_colluders() {
        let g = AttackGeometry { gamma: 1.2, ..Default::default() };
        assert_eq!(min_colluders_virtual_cut(&g, 100).unwrap().count, 0);
        let g = AttackGeometry { gamma: 1.0, ..Default::default() };
        assert_eq!(min_colluders_virtual_cut(&g, 100).unwrap().count, 0);
    }

    #[test]
    fn cut_errors() {
        let g = AttackGeometry { zeta: 1.0, ..Default::default() };
        assert_eq!(min_colluders_virtual_cut(&g, 10), Err(AttackError::UnitZeta));
        let g = AttackGeometry { zeta: 0.8, ..Default::default() };
        assert_eq!(min_colluders_virtual_cut(&g, 10), Err(AttackError::Infeasible));
        // barely above one: the required count exceeds the population
        let g = AttackGeometry { zeta: 1.0001, ..Default::default() };
        assert_eq!(min_colluders_virtual_cut(&g, 10), Err(AttackError::Infeasible));
    }

    #[test]
    fn annulus_examples() {
        assert!((annulus_control_area(0.25, 0.05).unwrap() - 0.125_663_706_143_591_7).abs() < 1e-12);
        assert!(annulus_control_area(0.25, 1e-9).unwrap() < 1e-7);
        assert_eq!(annulus_control_area(0.1, 0.05), Err(AttackError::Infeasible));
    }

    #[test]
    fn corner_example() {
        let a = corner_control_area(1.0 / 3.0, 0.05, 0.45).unwrap();
        assert!((a - 0.1085).abs() < 5e-4, "{a}");
        assert!(corner_control_area(1.0 / 3.0, 0.1, 0.45).unwrap() > a);
        assert_eq!(corner_control_area(0.01, 0.05, 0.45), Err(AttackError::Infeasible));
    }

    #[test]
    fn half_coverage_examples() {
        assert!((min_avd_for_half_coverage(0.903).unwrap() - 0.360).abs() < 5e-4);
        assert!((min_avd_for_half_coverage(1.0).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn dynamic_examples() {
        assert!(dynamic_attack_success_prob(0.1085, 1000, 900).unwrap() <= 1e-6);
        assert_eq!(dynamic_attack_success_prob(1.0, 50, 10), Ok(1.0));
        assert_eq!(dynamic_attack_success_prob(0.5, 5, 6), Err(AttackError::Domain));
    }

    #[test]
    fn dynamic_attack_gate() {
        let t = dynamic_attack_check(1000, 0.36, 3.0, 200.0).unwrap();
        assert!(t.conditions_met());
        assert_eq!(t.bound, Some(1e-6));
        let t = dynamic_attack_check(1000, 0.36, 3.0, 100.0).unwrap();
        assert!(!t.expansion_met);
        assert_eq!(t.bound, None);
    }
}
