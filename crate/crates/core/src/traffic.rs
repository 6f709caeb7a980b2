//! Batch-Poisson traffic generation and the compound-Poisson arrival-count
//! pmf used by the MDP solvers.
//!
//! Batches arrive as a Poisson process; each batch carries an i.i.d. number
//! of packets. The number of packets arriving in an interval therefore
//! follows a compound Poisson distribution, which we evaluate by exact
//! truncated convolution rather than characteristic-function inversion.

use crate::error::{Error, Result};
use rand::Rng;

/// Batch-size distribution over sizes `z >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPmf {
    /// `probs[z]` is the probability of a batch of `z` packets; `probs[0]`
    /// is always zero.
    probs: Vec<f64>,
}

impl BatchPmf {
    /// Build from `(size, probability)` pairs. Probabilities must sum to 1
    /// within 1e-12.
    pub fn new(entries: &[(u32, f64)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("batch pmf is empty"));
        }
        let max_z = entries.iter().map(|&(z, _)| z).max().unwrap();
        let mut probs = vec![0.0; max_z as usize + 1];
        for &(z, p) in entries {
            if z == 0 {
                return Err(Error::invalid("batch size 0 is not allowed"));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("batch probability {p} outside [0, 1]")));
            }
            probs[z as usize] += p;
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "batch pmf sums to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Every batch carries exactly one packet.
    pub fn unit() -> Self {
        Self {
            probs: vec![0.0, 1.0],
        }
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(z, &p)| z as f64 * p)
            .sum()
    }

    pub fn max_size(&self) -> u32 {
        self.probs.len() as u32 - 1
    }

    pub fn prob(&self, z: u32) -> f64 {
        self.probs.get(z as usize).copied().unwrap_or(0.0)
    }

    /// `(size, probability)` pairs with nonzero probability, ascending size.
    pub fn entries(&self) -> Vec<(u32, f64)> {
        self.probs
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > 0.0)
            .map(|(z, &p)| (z as u32, p))
            .collect()
    }
}

/// Per-node traffic description: batch rate plus batch-size distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    /// Batch arrival rate in batches per UBP.
    pub lambda_per_ubp: f64,
    pub batch_pmf: BatchPmf,
}

impl TrafficSpec {
    pub fn new(lambda_per_ubp: f64, batch_pmf: BatchPmf) -> Result<Self> {
        if !(lambda_per_ubp >= 0.0) {
            return Err(Error::invalid(format!(
                "batch rate {lambda_per_ubp} must be non-negative"
            )));
        }
        Ok(Self {
            lambda_per_ubp,
            batch_pmf,
        })
    }

    /// Build from a rate expressed in batches per interval of `interval_ubp`.
    pub fn per_interval(batches_per_interval: f64, interval_ubp: u32, batch_pmf: BatchPmf) -> Result<Self> {
        if interval_ubp == 0 {
            return Err(Error::invalid("interval must be positive"));
        }
        Self::new(batches_per_interval / interval_ubp as f64, batch_pmf)
    }

    /// Mean packets per interval of `gamma` UBP.
    pub fn mean_packets(&self, gamma: u32) -> f64 {
        self.lambda_per_ubp * gamma as f64 * self.batch_pmf.mean()
    }
}

/// Truncated pmf of the packet count arriving within an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalPmf {
    /// Interval length in UBP.
    pub gamma: u32,
    /// `probs[x]` for `x` in `0..=x_max`.
    probs: Vec<f64>,
    /// Probability mass beyond `x_max`.
    tail: f64,
}

impl ArrivalPmf {
    pub fn x_max(&self) -> u32 {
        self.probs.len() as u32 - 1
    }

    /// Exact probability of exactly `x` arrivals, for `x <= x_max`.
    pub fn prob(&self, x: u32) -> f64 {
        self.probs.get(x as usize).copied().unwrap_or(0.0)
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// Probability of at least `x` arrivals: `1 - sum_{h < x} f(h)`, clamped
    /// to `[0, 1]`. Queries beyond the truncation bound return the stored
    /// tail mass.
    pub fn tail_mass(&self, x: u32) -> f64 {
        if x == 0 {
            return 1.0;
        }
        if x > self.x_max() {
            return self.tail;
        }
        let head: f64 = self.probs[..x as usize].iter().sum();
        (1.0 - head).clamp(0.0, 1.0)
    }

    /// Mean arrivals counting the tail at its smallest possible value
    /// `x_max + 1`.
    pub fn mean_lower_bound(&self) -> f64 {
        let head: f64 = self
            .probs
            .iter()
            .enumerate()
            .map(|(x, &p)| x as f64 * p)
            .sum();
        head + self.tail * (self.x_max() as f64 + 1.0)
    }
}

/// Compound-Poisson pmf of the packet count in an interval of `gamma` UBP,
/// truncated at `x_max`.
///
/// Computed as `sum_k Poisson(lambda*gamma; k) * conv^k(batch_pmf)` with the
/// batch-count sum cut off once the Poisson weight drops below 1e-12 past the
/// mode. Entries below `x_max` are exact; everything else is folded into the
/// tail so that entries plus tail always sum to 1.
pub fn arrival_pmf(spec: &TrafficSpec, gamma: u32, x_max: u32) -> Result<ArrivalPmf> {
    if !(spec.lambda_per_ubp >= 0.0) {
        return Err(Error::invalid("negative batch rate"));
    }
    let rate = spec.lambda_per_ubp * gamma as f64;
    let len = x_max as usize + 1;
    let mut probs = vec![0.0; len];

    if rate == 0.0 {
        probs[0] = 1.0;
        return Ok(ArrivalPmf {
            gamma,
            probs,
            tail: 0.0,
        });
    }

    let batch: Vec<f64> = (0..len.min(spec.batch_pmf.probs.len()))
        .map(|z| spec.batch_pmf.probs[z])
        .collect();

    // conv holds the k-fold convolution of the batch pmf, truncated at x_max;
    // truncation is exact for indices <= x_max because batch sizes are >= 1.
    let mut conv = vec![0.0; len];
    conv[0] = 1.0;
    let mut poisson = (-rate).exp(); // Poisson(rate; 0)
    probs[0] = poisson;

    let mut k: u64 = 0;
    loop {
        k += 1;
        poisson *= rate / k as f64;
        conv = convolve_truncated(&conv, &batch, len);
        if poisson > 0.0 {
            for (p, c) in probs.iter_mut().zip(conv.iter()) {
                *p += poisson * c;
            }
        }
        // Past the mode the Poisson weights decay monotonically; stop once
        // they are negligible. Each k-fold convolution of unit-or-larger
        // batches also has no mass below x = k, so k > x_max contributes
        // nothing to the retained entries.
        if (k as f64 >= rate && poisson < 1e-12) || k as usize > len {
            break;
        }
    }

    let head: f64 = probs.iter().sum();
    let tail = (1.0 - head).max(0.0);
    Ok(ArrivalPmf { gamma, probs, tail })
}

fn convolve_truncated(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            let x = i + j;
            if x >= len {
                break;
            }
            out[x] += ai * bj;
        }
    }
    out
}

/// One batch arrival: UBP offset within the interval plus batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivalBatch {
    /// UBP index within `[0, gamma)` at which the batch lands.
    pub time_ubp: u64,
    pub size: u32,
}

/// Draw one realization of the batch-Poisson process on `[0, gamma)`.
///
/// Batch times come from exponential inter-arrival gaps; sizes are i.i.d.
/// from the batch pmf. Identical RNG state yields an identical list.
pub fn sample_arrivals<R: Rng>(spec: &TrafficSpec, gamma: u32, rng: &mut R) -> Vec<ArrivalBatch> {
    let mut out = Vec::new();
    if spec.lambda_per_ubp <= 0.0 {
        return out;
    }
    let mut t = 0.0_f64;
    loop {
        // Inverse-transform exponential with mean 1/lambda.
        let u: f64 = rng.random::<f64>();
        t += -(1.0 - u).ln() / spec.lambda_per_ubp;
        if t >= gamma as f64 {
            return out;
        }
        out.push(ArrivalBatch {
            time_ubp: t as u64,
            size: sample_batch_size(&spec.batch_pmf, rng),
        });
    }
}

fn sample_batch_size<R: Rng>(pmf: &BatchPmf, rng: &mut R) -> u32 {
    let mut u: f64 = rng.random();
    for (z, &p) in pmf.probs.iter().enumerate() {
        if u < p {
            return z as u32;
        }
        u -= p;
    }
    pmf.max_size()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn poisson_pmf(rate: f64, x: u32) -> f64 {
        let mut p = (-rate).exp();
        for k in 1..=x {
            p *= rate / k as f64;
        }
        p
    }

    #[test]
    fn unit_batches_reduce_to_poisson() {
        let spec = TrafficSpec::per_interval(2.0, 100, BatchPmf::unit()).unwrap();
        let pmf = arrival_pmf(&spec, 100, 30).unwrap();
        for x in 0..=30 {
            assert_relative_eq!(pmf.prob(x), poisson_pmf(2.0, x), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_rate_is_a_point_mass() {
        let spec = TrafficSpec::new(0.0, BatchPmf::unit()).unwrap();
        let pmf = arrival_pmf(&spec, 388, 10).unwrap();
        assert_eq!(pmf.prob(0), 1.0);
        for x in 1..=10 {
            assert_eq!(pmf.prob(x), 0.0);
        }
        assert_eq!(pmf.tail(), 0.0);
    }

    #[test]
    fn mixed_batches_zero_count_probability() {
        let batch = BatchPmf::new(&[(1, 0.5), (2, 0.5)]).unwrap();
        let spec = TrafficSpec::per_interval(1.0, 388, batch).unwrap();
        let pmf = arrival_pmf(&spec, 388, 40).unwrap();
        assert_relative_eq!(pmf.prob(0), (-1.0_f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn normalization_head_plus_tail() {
        for (rate, batch) in [
            (0.5, BatchPmf::unit()),
            (2.0, BatchPmf::new(&[(1, 0.5), (2, 0.5)]).unwrap()),
            (7.3, BatchPmf::new(&[(1, 0.2), (3, 0.5), (5, 0.3)]).unwrap()),
        ] {
            let spec = TrafficSpec::per_interval(rate, 388, batch).unwrap();
            for x_max in [0, 3, 25] {
                let pmf = arrival_pmf(&spec, 388, x_max).unwrap();
                let total: f64 =
                    (0..=x_max).map(|x| pmf.prob(x)).sum::<f64>() + pmf.tail();
                assert_relative_eq!(total, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn mean_identity_at_wide_truncation() {
        let batch = BatchPmf::new(&[(1, 0.5), (2, 0.5)]).unwrap();
        let spec = TrafficSpec::per_interval(2.0, 388, batch).unwrap();
        let mean = spec.mean_packets(388); // 3.0
        let x_max = (20.0 * mean).ceil() as u32;
        let pmf = arrival_pmf(&spec, 388, x_max).unwrap();
        assert_relative_eq!(pmf.mean_lower_bound(), mean, max_relative = 1e-6);
    }

    #[test]
    fn tail_mass_basics() {
        let spec = TrafficSpec::per_interval(2.0, 100, BatchPmf::unit()).unwrap();
        let pmf = arrival_pmf(&spec, 100, 20).unwrap();
        assert_eq!(pmf.tail_mass(0), 1.0);
        assert_relative_eq!(pmf.tail_mass(1), 1.0 - (-2.0_f64).exp(), epsilon = 1e-12);
        assert_eq!(pmf.tail_mass(21), pmf.tail());
        assert_eq!(pmf.tail_mass(100), pmf.tail());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let batch = BatchPmf::new(&[(1, 0.7), (4, 0.3)]).unwrap();
        let spec = TrafficSpec::per_interval(5.0, 388, batch).unwrap();
        let a = sample_arrivals(&spec, 388, &mut ChaCha12Rng::seed_from_u64(42));
        let b = sample_arrivals(&spec, 388, &mut ChaCha12Rng::seed_from_u64(42));
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn zero_rate_samples_nothing() {
        let spec = TrafficSpec::new(0.0, BatchPmf::unit()).unwrap();
        let batches = sample_arrivals(&spec, 388, &mut ChaCha12Rng::seed_from_u64(1));
        assert!(batches.is_empty());
    }

    #[test]
    fn sample_mean_matches_rate() {
        let batch = BatchPmf::new(&[(1, 0.5), (2, 0.5)]).unwrap();
        let spec = TrafficSpec::per_interval(5.0, 388, batch).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let reps = 100_000;
        let mut total: u64 = 0;
        for _ in 0..reps {
            total += sample_arrivals(&spec, 388, &mut rng)
                .iter()
                .map(|b| b.size as u64)
                .sum::<u64>();
        }
        let mean = total as f64 / reps as f64;
        assert_relative_eq!(mean, spec.mean_packets(388), max_relative = 0.01);
    }

    #[test]
    fn batch_pmf_validation() {
        assert!(BatchPmf::new(&[]).is_err());
        assert!(BatchPmf::new(&[(0, 1.0)]).is_err());
        assert!(BatchPmf::new(&[(1, 0.6), (2, 0.6)]).is_err());
        assert!(TrafficSpec::new(-1.0, BatchPmf::unit()).is_err());
    }
}
