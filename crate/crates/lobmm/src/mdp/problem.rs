//! Explicit sparse MDP representation.
//!
//! Used for small problems, oracle tests, and as the materialization
//! target of the matrix-free book kernels. Termination actions come
//! before continuation actions in the per-state action indexing, so the
//! greedy tie-break (termination preferred, then lowest index) is the
//! natural order.

use super::{MdpError, MdpKernel};

/// A continuation action with absorbed outcomes folded in: `value` is
/// v_C plus the probability-weighted value of transitions to states of
/// known value; `transitions` hold the live mass only.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationAction {
    pub value: f64,
    pub transitions: Vec<(u32, f64)>,
    /// Probability mass folded into `value` (for stochasticity checks).
    pub absorbed_mass: f64,
}

impl ContinuationAction {
    /// Build from a continuation value, live transitions and absorbed
    /// outcomes `(probability, value)`.
    pub fn new(v_c: f64, transitions: Vec<(u32, f64)>, absorbed: &[(f64, f64)]) -> ContinuationAction {
        let absorbed_mass: f64 = absorbed.iter().map(|(p, _)| p).sum();
        let value = v_c + absorbed.iter().map(|(p, v)| p * v).sum::<f64>();
        ContinuationAction { value, transitions, absorbed_mass }
    }

    pub fn mass(&self) -> f64 {
        self.absorbed_mass + self.transitions.iter().map(|(_, p)| p).sum::<f64>()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MdpProblem {
    /// Termination values per state (may be empty for a given state).
    pub terminations: Vec<Vec<f64>>,
    /// Continuation actions per state.
    pub continuations: Vec<Vec<ContinuationAction>>,
}

impl MdpProblem {
    pub fn new(n: usize) -> MdpProblem {
        MdpProblem { terminations: vec![Vec::new(); n], continuations: vec![Vec::new(); n] }
    }

    pub fn n_states(&self) -> usize {
        self.terminations.len()
    }

    /// Check the framework invariants: every state has an action, values
    /// are finite with v_T >= 0, rows are stochastic within 1e-12, and a
    /// termination-capable state is reachable from everywhere.
    pub fn validate(&self) -> Result<(), MdpError> {
        let n = self.n_states();
        for s in 0..n {
            if self.terminations[s].is_empty() && self.continuations[s].is_empty() {
                return Err(MdpError::InvalidKernel(format!("state {s} has no actions")));
            }
            for &v in &self.terminations[s] {
                if !v.is_finite() || v < 0.0 {
                    return Err(MdpError::InvalidKernel(format!(
                        "state {s}: termination value {v} invalid"
                    )));
                }
            }
            for (ai, a) in self.continuations[s].iter().enumerate() {
                if !a.value.is_finite() {
                    return Err(MdpError::InvalidKernel(format!(
                        "state {s} action {ai}: non-finite value"
                    )));
                }
                let mass = a.mass();
                if (mass - 1.0).abs() > 1e-12 {
                    return Err(MdpError::InvalidKernel(format!(
                        "state {s} action {ai}: row mass {mass} != 1"
                    )));
                }
                for &(t, p) in &a.transitions {
                    if t as usize >= n || !(0.0..=1.0 + 1e-12).contains(&p) {
                        return Err(MdpError::InvalidKernel(format!(
                            "state {s} action {ai}: bad transition ({t}, {p})"
                        )));
                    }
                }
            }
        }
        // Reachability of termination: walk backwards from states that can
        // terminate directly or leak absorbed mass.
        let mut can_reach = vec![false; n];
        for s in 0..n {
            if !self.terminations[s].is_empty()
                || self.continuations[s].iter().any(|a| a.absorbed_mass > 0.0)
            {
                can_reach[s] = true;
            }
        }
        loop {
            let mut changed = false;
            for s in 0..n {
                if can_reach[s] {
                    continue;
                }
                let reaches = self.continuations[s]
                    .iter()
                    .any(|a| a.transitions.iter().any(|&(t, p)| p > 0.0 && can_reach[t as usize]));
                if reaches {
                    can_reach[s] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if let Some(s) = can_reach.iter().position(|c| !c) {
            return Err(MdpError::InvalidKernel(format!(
                "state {s} cannot reach any termination"
            )));
        }
        Ok(())
    }

    /// Relabel states by a permutation: state `s` becomes `perm[s]`.
    pub fn permuted(&self, perm: &[usize]) -> MdpProblem {
        let n = self.n_states();
        assert_eq!(perm.len(), n);
        let mut out = MdpProblem::new(n);
        for s in 0..n {
            out.terminations[perm[s]] = self.terminations[s].clone();
            out.continuations[perm[s]] = self
                .continuations[s]
                .iter()
                .map(|a| ContinuationAction {
                    value: a.value,
                    transitions: a
                        .transitions
                        .iter()
                        .map(|&(t, p)| (perm[t as usize] as u32, p))
                        .collect(),
                    absorbed_mass: a.absorbed_mass,
                })
                .collect();
        }
        out
    }
}

impl MdpKernel for MdpProblem {
    fn n_states(&self) -> usize {
        self.terminations.len()
    }

    fn backup(&self, s: usize, prev: &[f64]) -> (f64, u16) {
        let mut best = f64::NEG_INFINITY;
        let mut action = 0u16;
        for (i, &v) in self.terminations[s].iter().enumerate() {
            if v > best {
                best = v;
                action = i as u16;
            }
        }
        let n_term = self.terminations[s].len() as u16;
        for (i, a) in self.continuations[s].iter().enumerate() {
            let v = a.value + a.transitions.iter().map(|&(t, p)| p * prev[t as usize]).sum::<f64>();
            if v > best {
                best = v;
                action = n_term + i as u16;
            }
        }
        (best, action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{value_iterate, ValueIterOptions};

    #[test]
    fn pure_termination_solves_in_one_sweep() {
        let mut p = MdpProblem::new(3);
        p.terminations[0] = vec![0.5, 1.5];
        p.terminations[1] = vec![2.0];
        p.terminations[2] = vec![0.0];
        p.validate().unwrap();
        let sol = value_iterate(&p, &ValueIterOptions::default()).unwrap();
        assert!(sol.sweeps <= 2, "values settle after one application");
        assert_eq!(sol.values.values, vec![1.5, 2.0, 0.0]);
        assert_eq!(sol.policy.actions, vec![1, 0, 0]);
    }

    #[test]
    fn two_state_chain_waits_for_the_better_exit() {
        // s0 -> s1 deterministically, v_T(s0) = 0, v_T(s1) = 1, v_C = 0:
        // waiting at s0 is worth 1.
        let mut p = MdpProblem::new(2);
        p.terminations[0] = vec![0.0];
        p.continuations[0] = vec![ContinuationAction::new(0.0, vec![(1, 1.0)], &[])];
        p.terminations[1] = vec![1.0];
        p.validate().unwrap();
        let sol = value_iterate(&p, &ValueIterOptions::default()).unwrap();
        assert!((sol.values.values[0] - 1.0).abs() < 1e-12);
        assert!((sol.values.values[1] - 1.0).abs() < 1e-12);
        // Greedy at s0: waiting (action index 1, after the termination).
        assert_eq!(sol.policy.actions[0], 1);
    }

    #[test]
    fn termination_preferred_on_ties() {
        // Identical values for stopping and waiting: stop.
        let mut p = MdpProblem::new(1);
        p.terminations[0] = vec![1.0];
        p.continuations[0] = vec![ContinuationAction::new(0.0, vec![], &[(1.0, 1.0)])];
        p.validate().unwrap();
        let sol = value_iterate(&p, &ValueIterOptions::default()).unwrap();
        assert_eq!(sol.policy.actions[0], 0);
    }

    #[test]
    fn validation_rejects_non_stochastic_rows() {
        let mut p = MdpProblem::new(2);
        p.terminations[1] = vec![0.0];
        p.continuations[0] = vec![ContinuationAction::new(0.0, vec![(1, 0.7)], &[])];
        assert!(matches!(p.validate(), Err(MdpError::InvalidKernel(_))));
    }

    #[test]
    fn validation_rejects_unreachable_termination() {
        let mut p = MdpProblem::new(2);
        // Two states waiting on each other forever.
        p.continuations[0] = vec![ContinuationAction::new(0.0, vec![(1, 1.0)], &[])];
        p.continuations[1] = vec![ContinuationAction::new(0.0, vec![(0, 1.0)], &[])];
        assert!(matches!(p.validate(), Err(MdpError::InvalidKernel(_))));
    }
}
