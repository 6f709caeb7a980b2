//! Generic value iteration for finite discounted MDPs.
//!
//! Both the per-node policy solver and the joint coordinator oracle reduce to
//! this table-driven form: states and actions are dense indices, transitions
//! are sparse `(next_state, probability)` lists.

/// Tabular MDP description.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    /// `transitions[s][a]` lists `(next_state, probability)` with the
    /// probabilities of each list summing to 1.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
}

impl FiniteMdp {
    /// One-step lookahead value of `(s, a)` under `value`.
    pub fn q_value(&self, s: usize, a: usize, gamma: f64, value: &[f64]) -> f64 {
        let future: f64 = self.transitions[s][a]
            .iter()
            .map(|&(s2, p)| p * value[s2])
            .sum();
        self.reward[s][a] + gamma * future
    }
}

/// Result of a value-iteration run.
#[derive(Debug, Clone)]
pub struct ValueIterationOutcome {
    pub value: Vec<f64>,
    /// Greedy action index per state; ties resolve to the lowest index.
    pub policy: Vec<usize>,
    pub iterations: usize,
    /// Last sup-norm difference between successive value functions.
    pub final_residual: f64,
    /// Sup-norm difference recorded at every iteration.
    pub residuals: Vec<f64>,
}

/// Iterate the Bellman optimality operator from `V = 0` until the sup-norm
/// change drops below `epsilon * (1 - gamma) / (2 * gamma)`.
///
/// With `gamma = 0` a single sweep is exact and iteration stops as soon as
/// the residual reaches zero.
pub fn value_iterate(mdp: &FiniteMdp, gamma: f64, epsilon: f64) -> ValueIterationOutcome {
    assert!((0.0..1.0).contains(&gamma), "discount must be in [0, 1)");
    assert!(epsilon > 0.0, "epsilon must be positive");
    let threshold = if gamma > 0.0 {
        epsilon * (1.0 - gamma) / (2.0 * gamma)
    } else {
        epsilon
    };

    let mut value = vec![0.0; mdp.n_states];
    let mut next = vec![0.0; mdp.n_states];
    let mut residuals = Vec::new();

    loop {
        let mut delta = 0.0_f64;
        for s in 0..mdp.n_states {
            let best = (0..mdp.n_actions)
                .map(|a| mdp.q_value(s, a, gamma, &value))
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - value[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut value, &mut next);
        residuals.push(delta);
        if delta < threshold {
            break;
        }
    }

    let policy = greedy_policy(mdp, gamma, &value);
    ValueIterationOutcome {
        final_residual: *residuals.last().unwrap(),
        iterations: residuals.len(),
        value,
        policy,
        residuals,
    }
}

/// Greedy action per state under `value`, lowest index winning ties.
pub fn greedy_policy(mdp: &FiniteMdp, gamma: f64, value: &[f64]) -> Vec<usize> {
    (0..mdp.n_states)
        .map(|s| {
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let q = mdp.q_value(s, a, gamma, value);
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            best_a
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Two-state chain: action 0 stays (reward 0), action 1 hops (reward 1
    /// from state 0, -1 from state 1). Optimal: hop in state 0, stay in 1.
    fn toy() -> FiniteMdp {
        FiniteMdp {
            n_states: 2,
            n_actions: 2,
            reward: vec![vec![0.0, 1.0], vec![0.0, -1.0]],
            transitions: vec![
                vec![vec![(0, 1.0)], vec![(1, 1.0)]],
                vec![vec![(1, 1.0)], vec![(0, 1.0)]],
            ],
        }
    }

    #[test]
    fn solves_the_toy_chain() {
        let out = value_iterate(&toy(), 0.5, 1e-10);
        assert_eq!(out.policy, vec![1, 0]);
        // V(0) = 1 + 0.5 V(1), V(1) = 0.5 V(1) => V(1) = 0, V(0) = 1.
        assert_relative_eq!(out.value[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(out.value[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn myopic_limit_at_zero_discount() {
        let out = value_iterate(&toy(), 0.0, 1e-12);
        assert_eq!(out.policy, vec![1, 0]);
        assert_eq!(out.value, vec![1.0, 0.0]);
    }

    #[test]
    fn residuals_contract_at_rate_gamma() {
        let gamma = 0.9;
        let out = value_iterate(&toy(), gamma, 1e-9);
        for pair in out.residuals.windows(2) {
            assert!(pair[1] <= gamma * pair[0] + 1e-12);
        }
    }

    #[test]
    fn ties_resolve_to_the_lowest_action() {
        let mdp = FiniteMdp {
            n_states: 1,
            n_actions: 3,
            reward: vec![vec![2.0, 2.0, 1.0]],
            transitions: vec![vec![vec![(0, 1.0)]; 3]],
        };
        let out = value_iterate(&mdp, 0.3, 1e-10);
        assert_eq!(out.policy, vec![0]);
    }
}
