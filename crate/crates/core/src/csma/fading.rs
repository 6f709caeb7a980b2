//! Channel-fading extensions: log-normal shadowing outage, pairwise hidden
//! probabilities, and the hidden-node corrections to the collision and
//! sensing probabilities.

use crate::error::{Error, Result};

use super::effective_collision;

/// Largest hidden set the subset enumerations accept (they are exponential
/// in the set size).
pub const MAX_HIDDEN_SET: usize = 12;

/// Distance-dependent attenuation model, in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathLoss {
    /// Short-range 2.4 GHz model:
    /// `27.6 * log10(distance_mm) + 46.5 * log10(2400) - 157`.
    Wpan2400,
    /// Log-distance model `ref_loss_db + 10 * exponent * log10(meters)`.
    LogDistance { ref_loss_db: f64, exponent: f64 },
    /// Distance-independent loss, mostly for tests.
    Fixed(f64),
}

impl PathLoss {
    pub fn loss_db(&self, meters: f64) -> f64 {
        match *self {
            PathLoss::Wpan2400 => {
                27.6 * (meters * 1000.0).log10() + 46.5 * 2400.0_f64.log10() - 157.0
            }
            PathLoss::LogDistance {
                ref_loss_db,
                exponent,
            } => ref_loss_db + 10.0 * exponent * meters.log10(),
            PathLoss::Fixed(db) => db,
        }
    }
}

/// Radio environment for the fading extension. The coordinator sits at the
/// origin; `positions` are node coordinates in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingEnv {
    /// Transmit power in dB.
    pub tx_power_db: f64,
    pub path_loss: PathLoss,
    /// Log-normal shadowing standard deviation in dB, strictly positive.
    pub shadowing_sigma_db: f64,
    /// Receiver threshold in dB.
    pub rx_threshold_db: f64,
    /// Carrier-sensing threshold in dB.
    pub cs_threshold_db: f64,
    pub positions: Vec<(f64, f64)>,
}

impl FadingEnv {
    pub fn validate(&self) -> Result<()> {
        if !(self.shadowing_sigma_db > 0.0) {
            return Err(Error::invalid("shadowing sigma must be positive"));
        }
        if self
            .positions
            .iter()
            .any(|p| !p.0.is_finite() || !p.1.is_finite())
        {
            return Err(Error::invalid("node positions must be finite"));
        }
        Ok(())
    }

    pub fn distance_to_coordinator(&self, node: usize) -> f64 {
        let (x, y) = self.positions[node];
        (x * x + y * y).sqrt()
    }

    pub fn distance_between(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.positions[a];
        let (xb, yb) = self.positions[b];
        ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt()
    }
}

/// Probability that the received power at the coordinator falls below the
/// receiver threshold under log-normal shadowing:
/// `1 - erfc(-(margin) / (sqrt(2) * sigma)) / 2` with
/// `margin = tx_power - loss(distance) - rx_threshold`.
pub fn outage_probability(env: &FadingEnv, distance_m: f64) -> f64 {
    shadowing_exceedance(
        env.tx_power_db - env.path_loss.loss_db(distance_m) - env.rx_threshold_db,
        env.shadowing_sigma_db,
    )
}

/// Probability that two nodes at the given separation cannot sense each
/// other; same form as the outage, against the carrier-sensing threshold.
pub fn pairwise_hidden(env: &FadingEnv, distance_m: f64) -> f64 {
    shadowing_exceedance(
        env.tx_power_db - env.path_loss.loss_db(distance_m) - env.cs_threshold_db,
        env.shadowing_sigma_db,
    )
}

/// `P(shadowing > margin)` for zero-mean Gaussian shadowing.
fn shadowing_exceedance(margin_db: f64, sigma_db: f64) -> f64 {
    1.0 - 0.5 * libm::erfc(-margin_db / (std::f64::consts::SQRT_2 * sigma_db))
}

/// Hidden-node structure: pairwise hidden probabilities plus per-node outage.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTopology {
    /// `h[n][j]`: probability that nodes `n` and `j` are hidden from each
    /// other. Symmetric with a zero diagonal.
    h: Vec<Vec<f64>>,
    /// Per-node uplink outage probability.
    theta: Vec<f64>,
}

impl HiddenTopology {
    pub fn from_matrix(h: Vec<Vec<f64>>, theta: Vec<f64>) -> Result<Self> {
        let n = h.len();
        if theta.len() != n {
            return Err(Error::invalid("theta length does not match matrix size"));
        }
        for (i, row) in h.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid("hidden matrix is not square"));
            }
            for (j, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!("h[{i}][{j}] = {p} outside [0, 1]")));
                }
                if i == j && p != 0.0 {
                    return Err(Error::invalid("hidden matrix diagonal must be zero"));
                }
            }
        }
        Ok(Self { h, theta })
    }

    /// Derive the topology from node geometry.
    pub fn from_env(env: &FadingEnv) -> Result<Self> {
        env.validate()?;
        let n = env.positions.len();
        let mut h = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let p = pairwise_hidden(env, env.distance_between(a, b));
                h[a][b] = p;
                h[b][a] = p;
            }
        }
        let theta = (0..n)
            .map(|i| outage_probability(env, env.distance_to_coordinator(i)))
            .collect();
        Ok(Self { h, theta })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn hidden_prob(&self, n: usize, j: usize) -> f64 {
        self.h[n][j]
    }

    pub fn theta(&self, n: usize) -> f64 {
        self.theta[n]
    }

    /// Hidden set of node `n`: the nodes with a nonzero hidden probability.
    pub fn hidden_set(&self, n: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| j != n && self.h[n][j] > 0.0)
            .collect()
    }
}

/// Weighted sum over the non-empty subsets of the hidden set of node `n`.
///
/// Each subset `t` of hidden neighbors contributes
/// `prod_{j in t} h[n][j] * prod_{j not in t} (1 - h[n][j]) * busy_prob(s)`
/// where `s` is the sorted node set `{n} ∪ t` handed to the caller's
/// busy-probability model.
pub fn hidden_collision<F>(n: usize, topo: &HiddenTopology, mut busy_prob: F) -> Result<f64>
where
    F: FnMut(&[usize]) -> f64,
{
    let psi = topo.hidden_set(n);
    if psi.len() > MAX_HIDDEN_SET {
        return Err(Error::TooLarge(format!(
            "hidden set of {} nodes exceeds the enumeration bound of {MAX_HIDDEN_SET}",
            psi.len()
        )));
    }
    let mut total = 0.0;
    for mask in 1u32..(1u32 << psi.len()) {
        let mut weight = 1.0;
        let mut set = vec![n];
        for (bit, &j) in psi.iter().enumerate() {
            let p = topo.hidden_prob(n, j);
            if mask & (1 << bit) != 0 {
                weight *= p;
                set.push(j);
            } else {
                weight *= 1.0 - p;
            }
        }
        if weight == 0.0 {
            continue;
        }
        set.sort_unstable();
        total += weight * busy_prob(&set);
    }
    Ok(total)
}

/// Collision probability under both fading and hidden nodes:
/// `(p_c * (1 - h) + h) * (1 - theta) + theta`.
pub fn fading_adjusted_collision(p_c: f64, h_n: f64, theta_n: f64) -> f64 {
    effective_collision(p_c * (1.0 - h_n) + h_n, theta_n)
}

/// Mixture of a sensing probability over hidden-subset configurations.
///
/// For every subset `t` of node `n`'s hidden set (including the empty set),
/// the callback receives the sorted excluded set `t` and returns the sensing
/// probability computed without those nodes; the results are weighted by the
/// probability of that hidden configuration. Applies identically to `alpha`
/// and `beta`.
pub fn alpha_with_hidden<F>(n: usize, topo: &HiddenTopology, mut alpha_by_subset: F) -> Result<f64>
where
    F: FnMut(&[usize]) -> f64,
{
    let psi = topo.hidden_set(n);
    if psi.len() > MAX_HIDDEN_SET {
        return Err(Error::TooLarge(format!(
            "hidden set of {} nodes exceeds the enumeration bound of {MAX_HIDDEN_SET}",
            psi.len()
        )));
    }
    let mut total = 0.0;
    for mask in 0u32..(1u32 << psi.len()) {
        let mut weight = 1.0;
        let mut excluded = Vec::new();
        for (bit, &j) in psi.iter().enumerate() {
            let p = topo.hidden_prob(n, j);
            if mask & (1 << bit) != 0 {
                weight *= p;
                excluded.push(j);
            } else {
                weight *= 1.0 - p;
            }
        }
        if weight == 0.0 {
            continue;
        }
        excluded.sort_unstable();
        total += weight * alpha_by_subset(&excluded);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn env_with_loss(loss_db: f64) -> FadingEnv {
        FadingEnv {
            tx_power_db: 0.0,
            path_loss: PathLoss::Fixed(loss_db),
            shadowing_sigma_db: 4.4,
            rx_threshold_db: 0.0,
            cs_threshold_db: 0.0,
            positions: vec![],
        }
    }

    #[test]
    fn zero_margin_gives_half() {
        let env = env_with_loss(0.0);
        assert_relative_eq!(outage_probability(&env, 1.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(pairwise_hidden(&env, 1.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn large_margin_vanishes() {
        let mut env = env_with_loss(0.0);
        env.tx_power_db = 100.0;
        assert!(outage_probability(&env, 1.0) < 1e-12);
        env.cs_threshold_db = -200.0; // effectively always sensed
        assert!(pairwise_hidden(&env, 1.0) < 1e-12);
    }

    #[test]
    fn wpan_path_loss_at_ten_meters() {
        let loss = PathLoss::Wpan2400.loss_db(10.0);
        assert_relative_eq!(loss, 110.58, epsilon = 0.01);
    }

    #[test]
    fn outage_matches_gaussian_quadrature() {
        // Oracle: integrate the shadowing density over the outage region
        // P(zeta > margin) with Simpson's rule.
        let sigma = 4.4;
        let margin = 3.7;
        let density = |z: f64| {
            (-z * z / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let (a, b) = (margin, margin + 12.0 * sigma);
        let steps = 20_000;
        let h = (b - a) / steps as f64;
        let mut integral = density(a) + density(b);
        for i in 1..steps {
            let x = a + i as f64 * h;
            integral += if i % 2 == 1 { 4.0 } else { 2.0 } * density(x);
        }
        integral *= h / 3.0;

        let mut env = env_with_loss(0.0);
        env.shadowing_sigma_db = sigma;
        env.rx_threshold_db = -margin; // margin = tx - loss - psi = 3.7
        assert_relative_eq!(outage_probability(&env, 5.0), integral, epsilon = 1e-9);
    }

    #[test]
    fn hidden_probability_is_symmetric_in_distance() {
        let env = FadingEnv {
            tx_power_db: 0.0,
            path_loss: PathLoss::Wpan2400,
            shadowing_sigma_db: 4.4,
            rx_threshold_db: -95.0,
            cs_threshold_db: -110.0,
            positions: vec![(0.0, 3.0), (4.0, 0.0), (-5.0, 1.0)],
        };
        let topo = HiddenTopology::from_env(&env).unwrap();
        for a in 0..3 {
            assert_eq!(topo.hidden_prob(a, a), 0.0);
            for b in 0..3 {
                assert_eq!(topo.hidden_prob(a, b), topo.hidden_prob(b, a));
            }
        }
    }

    #[test]
    fn hidden_collision_zero_when_nothing_is_hidden() {
        let topo = HiddenTopology::from_matrix(vec![vec![0.0; 4]; 4], vec![0.0; 4]).unwrap();
        let h = hidden_collision(1, &topo, |_| 0.7).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn hidden_collision_two_neighbor_expansion() {
        // Node 1 hides from nodes 3 and 4; the three-term expansion is
        // h13(1-h14)Pb{1,3} + h14(1-h13)Pb{1,4} + h13 h14 Pb{1,3,4}.
        let n = 5;
        let (h13, h14) = (0.3, 0.6);
        let mut m = vec![vec![0.0; n]; n];
        m[1][3] = h13;
        m[3][1] = h13;
        m[1][4] = h14;
        m[4][1] = h14;
        let topo = HiddenTopology::from_matrix(m, vec![0.0; n]).unwrap();
        let busy = |set: &[usize]| -> f64 {
            match set {
                [1, 3] => 0.11,
                [1, 4] => 0.23,
                [1, 3, 4] => 0.37,
                other => panic!("unexpected set {other:?}"),
            }
        };
        let got = hidden_collision(1, &topo, busy).unwrap();
        let want = h13 * (1.0 - h14) * 0.11 + h14 * (1.0 - h13) * 0.23 + h13 * h14 * 0.37;
        assert_relative_eq!(got, want, epsilon = 1e-15);
    }

    /// Recursive expansion used as an independent oracle for the subset sums.
    fn subset_sum_oracle(
        pairs: &[(usize, f64)],
        mut include: Vec<usize>,
        weight: f64,
        term: &mut dyn FnMut(&[usize]) -> f64,
    ) -> f64 {
        match pairs.split_first() {
            None => {
                include.sort_unstable();
                weight * term(&include)
            }
            Some((&(j, p), rest)) => {
                let mut total =
                    subset_sum_oracle(rest, include.clone(), weight * (1.0 - p), term);
                include.push(j);
                total += subset_sum_oracle(rest, include, weight * p, term);
                total
            }
        }
    }

    #[test]
    fn hidden_collision_matches_recursive_oracle() {
        let n = 6;
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let neighbors = [2usize, 4, 5];
        let mut m = vec![vec![0.0; n]; n];
        for &j in &neighbors {
            let p: f64 = rng.random();
            m[0][j] = p;
            m[j][0] = p;
        }
        let topo = HiddenTopology::from_matrix(m.clone(), vec![0.0; n]).unwrap();
        let busy = |set: &[usize]| set.iter().map(|&i| (i + 1) as f64 * 0.01).sum::<f64>();

        let got = hidden_collision(0, &topo, busy).unwrap();
        let pairs: Vec<(usize, f64)> = neighbors.iter().map(|&j| (j, m[0][j])).collect();
        let mut term = |t: &[usize]| {
            if t.is_empty() {
                0.0
            } else {
                let mut s = t.to_vec();
                s.push(0);
                s.sort_unstable();
                busy(&s)
            }
        };
        let want = subset_sum_oracle(&pairs, Vec::new(), 1.0, &mut term);
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn alpha_mixture_identities() {
        let n = 4;
        let mut m = vec![vec![0.0; n]; n];
        let base = |excluded: &[usize]| 0.9 - 0.1 * excluded.len() as f64;

        // No hidden neighbors: alpha unchanged.
        let topo = HiddenTopology::from_matrix(m.clone(), vec![0.0; n]).unwrap();
        assert_eq!(alpha_with_hidden(0, &topo, base).unwrap(), 0.9);

        // Fully hidden neighbors: the single surviving term excludes them all.
        m[0][1] = 1.0;
        m[1][0] = 1.0;
        m[0][2] = 1.0;
        m[2][0] = 1.0;
        let topo = HiddenTopology::from_matrix(m, vec![0.0; n]).unwrap();
        assert_relative_eq!(alpha_with_hidden(0, &topo, base).unwrap(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn alpha_mixture_matches_recursive_oracle() {
        let n = 5;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut m = vec![vec![0.0; n]; n];
        for &j in &[1usize, 3] {
            let p: f64 = rng.random();
            m[0][j] = p;
            m[j][0] = p;
        }
        let topo = HiddenTopology::from_matrix(m.clone(), vec![0.0; n]).unwrap();
        let alpha = |excluded: &[usize]| {
            0.95 * excluded.iter().map(|&j| 1.0 - 0.07 * j as f64).product::<f64>()
        };
        let got = alpha_with_hidden(0, &topo, alpha).unwrap();
        let pairs: Vec<(usize, f64)> = vec![(1, m[0][1]), (3, m[0][3])];
        let mut term = |t: &[usize]| alpha(t);
        let want = subset_sum_oracle(&pairs, Vec::new(), 1.0, &mut term);
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_bound_is_enforced() {
        let n = 15;
        let mut m = vec![vec![0.0; n]; n];
        for j in 1..n {
            m[0][j] = 0.5;
            m[j][0] = 0.5;
        }
        let topo = HiddenTopology::from_matrix(m, vec![0.0; n]).unwrap();
        assert!(hidden_collision(0, &topo, |_| 0.5).is_err());
        assert!(alpha_with_hidden(0, &topo, |_| 0.5).is_err());
    }

    #[test]
    fn fading_adjustment_identities() {
        assert_relative_eq!(fading_adjusted_collision(0.2, 0.1, 0.05), 0.316, epsilon = 1e-12);
        assert_eq!(fading_adjusted_collision(0.37, 0.0, 0.0), 0.37);
        assert_eq!(
            fading_adjusted_collision(0.37, 0.0, 0.2),
            effective_collision(0.37, 0.2)
        );
        assert_eq!(fading_adjusted_collision(0.2, 0.4, 1.0), 1.0);
    }
}
