//! Spread-making MDP: one bid and one ask lot working simultaneously.
//!
//! While both orders stand, the maker can wait or cancel both (worth 0).
//! When one leg fills, the remaining leg continues as a one-unit problem,
//! so fills absorb at the precomputed one-unit values: selling at the ask
//! then buying back is worth `1 + (V_buy - ticks-to-stop)` relative to
//! flat, which with the 1-tick geometry reduces to `V_one_unit - 1`.
//!
//! Neither queue can be emptied without filling the maker (cancellations
//! spare the agent's lot, and a clearing market order fills it), so the
//! pair chain has no awaiting states and both legs can never fill on the
//! same transition.
//!
//! The extended variant adds cancel-and-resubmit-at-the-tails as an
//! instantaneous continuation action (the tracked book offers the current
//! best levels for replacement).

use super::kernel::{tri, tri_count, KernelModel};
use super::one_unit::{OneUnitSolution, Target};
use super::problem::{ContinuationAction, MdpProblem};
use super::{value_iterate, MdpError, MdpKernel, Solution, ValueIterOptions};
use crate::book::RemovalKind;
use crate::sim::ModelSpec;

pub const PAIR_ACTION_CANCEL: u16 = 0;
pub const PAIR_ACTION_WAIT: u16 = 1;
pub const PAIR_ACTION_RESUBMIT: u16 = 2;

#[derive(Debug, Clone)]
pub struct PairProblem {
    model: KernelModel,
    /// One-unit continuation values (symmetric tables: shared by both legs).
    one_unit: OneUnitSolution,
    extended: bool,
}

impl PairProblem {
    pub fn grid(&self) -> u32 {
        self.model.grid
    }

    #[inline]
    fn t_count(&self) -> usize {
        tri_count(self.model.grid)
    }

    #[inline]
    pub(crate) fn id(&self, x_b: u32, y0: u32, x_a: u32, y1: u32) -> usize {
        tri(x_b, y0) * self.t_count() + tri(x_a, y1)
    }

    fn unpack(&self, s: usize) -> (u32, u32, u32, u32) {
        let t = self.t_count();
        let (xb, y0) = untri(s / t);
        let (xa, y1) = untri(s % t);
        (xb, y0, xa, y1)
    }

    /// A state where no channel fires (degenerate rate tables): only the
    /// cancel-both termination remains.
    pub(crate) fn rate_dead(&self, x_b: u32, x_a: u32) -> bool {
        self.model.total_rate_both_own(x_b, x_a) <= 0.0
    }

    /// Wait-action outcomes: live transitions plus absorbed fill values.
    /// Zero-rate channels and zero-probability outcomes are skipped.
    pub(crate) fn visit_wait(
        &self,
        x_b: u32,
        y0: u32,
        x_a: u32,
        y1: u32,
        f: &mut impl FnMut(Target, f64),
    ) {
        let m = &self.model;
        let total = m.total_rate_both_own(x_b, x_a);
        debug_assert!(total > 0.0, "visit_wait on a rate-dead state");
        use crate::book::EventKind::*;

        // --- Bid side (agent's buy leg). ---
        let w = m.rate(Limit, x_b) / total;
        if w > 0.0 {
            let (inc, self_mass) = m.limit_targets(x_b);
            for (i, p) in inc.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                f(Target::Live(self.id(x_b + 1 + i as u32, y0, x_a, y1)), w * p);
            }
            if self_mass > 0.0 {
                f(Target::Live(self.id(x_b, y0, x_a, y1)), w * self_mass);
            }
        }
        if x_b > 1 {
            let w = m.rate(Cancel, x_b) / total;
            if w > 0.0 {
                for (mi, pm) in m.cancel_agent_pmf(x_b).iter().enumerate().filter(|(_, p)| **p > 0.0)
                {
                    let mm = mi as u32 + 1;
                    KernelModel::cancel_ahead_split(x_b, y0, mm, |k, pk| {
                        f(Target::Live(self.id(x_b - mm, y0 - k, x_a, y1)), w * pm * pk);
                    });
                }
            }
        }
        let w = m.rate(Market, x_b) / total;
        if w > 0.0 {
            for (mi, pm) in m.market_pmf_at(x_b).iter().enumerate().filter(|(_, p)| **p > 0.0) {
                let mm = mi as u32 + 1;
                if mm >= y0 {
                    // Buy leg fills at the bid; the sell leg continues one-unit.
                    let cont =
                        self.one_unit.value_post(x_a, y1, x_b - mm, RemovalKind::Market, mm) - 1.0;
                    f(Target::Value(cont), w * pm);
                } else {
                    f(Target::Live(self.id(x_b - mm, y0 - mm, x_a, y1)), w * pm);
                }
            }
        }

        // --- Ask side (agent's sell leg), mirrored. ---
        let w = m.rate(Limit, x_a) / total;
        if w > 0.0 {
            let (inc, self_mass) = m.limit_targets(x_a);
            for (i, p) in inc.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                f(Target::Live(self.id(x_b, y0, x_a + 1 + i as u32, y1)), w * p);
            }
            if self_mass > 0.0 {
                f(Target::Live(self.id(x_b, y0, x_a, y1)), w * self_mass);
            }
        }
        if x_a > 1 {
            let w = m.rate(Cancel, x_a) / total;
            if w > 0.0 {
                for (mi, pm) in m.cancel_agent_pmf(x_a).iter().enumerate().filter(|(_, p)| **p > 0.0)
                {
                    let mm = mi as u32 + 1;
                    KernelModel::cancel_ahead_split(x_a, y1, mm, |k, pk| {
                        f(Target::Live(self.id(x_b, y0, x_a - mm, y1 - k)), w * pm * pk);
                    });
                }
            }
        }
        let w = m.rate(Market, x_a) / total;
        if w > 0.0 {
            for (mi, pm) in m.market_pmf_at(x_a).iter().enumerate().filter(|(_, p)| **p > 0.0) {
                let mm = mi as u32 + 1;
                if mm >= y1 {
                    let cont =
                        self.one_unit.value_post(x_b, y0, x_a - mm, RemovalKind::Market, mm) - 1.0;
                    f(Target::Value(cont), w * pm);
                } else {
                    f(Target::Live(self.id(x_b, y0, x_a - mm, y1 - mm)), w * pm);
                }
            }
        }
    }

    /// Explicit sparse form (small grids).
    pub fn materialize(&self) -> MdpProblem {
        let n = self.n_states();
        let mut p = MdpProblem::new(n);
        for s in 0..n {
            let (xb, y0, xa, y1) = self.unpack(s);
            p.terminations[s] = vec![0.0];
            if self.rate_dead(xb, xa) {
                continue;
            }
            let mut live = Vec::new();
            let mut absorbed = Vec::new();
            self.visit_wait(xb, y0, xa, y1, &mut |t, prob| match t {
                Target::Live(id) => live.push((id as u32, prob)),
                Target::Value(v) => absorbed.push((prob, v)),
            });
            p.continuations[s] = vec![ContinuationAction::new(0.0, live, &absorbed)];
            if self.extended {
                let tail = self.id(xb, xb, xa, xa);
                p.continuations[s].push(ContinuationAction::new(0.0, vec![(tail as u32, 1.0)], &[]));
            }
        }
        p
    }

    pub fn solve(&self, opts: &ValueIterOptions) -> Result<PairSolution, MdpError> {
        let sol: Solution = value_iterate(self, opts)?;
        Ok(PairSolution {
            grid: self.model.grid,
            extended: self.extended,
            values: sol.values.values,
            policy: sol.policy.actions,
            sweeps: sol.sweeps,
            residual: sol.residual,
        })
    }
}

fn untri(t: usize) -> (u32, u32) {
    let x = ((((8 * t + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize + 1;
    let base = (x * (x - 1)) / 2;
    debug_assert!(base <= t && t < base + x);
    (x as u32, (t - base) as u32 + 1)
}

impl MdpKernel for PairProblem {
    fn n_states(&self) -> usize {
        self.t_count() * self.t_count()
    }

    fn backup(&self, s: usize, prev: &[f64]) -> (f64, u16) {
        let (xb, y0, xa, y1) = self.unpack(s);
        if self.rate_dead(xb, xa) {
            return (0.0, PAIR_ACTION_CANCEL);
        }
        let mut wait = 0.0;
        self.visit_wait(xb, y0, xa, y1, &mut |t, p| match t {
            Target::Live(id) => wait += p * prev[id],
            Target::Value(v) => wait += p * v,
        });
        // Termination (cancel both) is worth 0 and preferred on ties;
        // among continuations, wait precedes resubmission.
        let mut best = 0.0f64;
        let mut action = PAIR_ACTION_CANCEL;
        if wait > best {
            best = wait;
            action = PAIR_ACTION_WAIT;
        }
        if self.extended {
            let resub = prev[self.id(xb, xb, xa, xa)];
            if resub > best {
                best = resub;
                action = PAIR_ACTION_RESUBMIT;
            }
        }
        (best, action)
    }
}

/// Build the spread-making problem on top of solved one-unit tables.
pub fn build_pair(
    spec: &ModelSpec,
    grid: u32,
    one_unit: &OneUnitSolution,
) -> Result<PairProblem, MdpError> {
    build_pair_inner(spec, grid, one_unit, false)
}

/// The extended variant with cancel-and-resubmit at the tracked levels.
pub fn build_pair_extended(
    spec: &ModelSpec,
    grid: u32,
    one_unit: &OneUnitSolution,
) -> Result<PairProblem, MdpError> {
    build_pair_inner(spec, grid, one_unit, true)
}

fn build_pair_inner(
    spec: &ModelSpec,
    grid: u32,
    one_unit: &OneUnitSolution,
    extended: bool,
) -> Result<PairProblem, MdpError> {
    if one_unit.grid != grid {
        return Err(MdpError::GridMismatch(format!(
            "one-unit table solved on grid {} but the pair problem needs {grid}",
            one_unit.grid
        )));
    }
    let model = KernelModel::from_spec(spec, grid)?;
    if model.ctxs != one_unit.ctxs {
        return Err(MdpError::GridMismatch(format!(
            "one-unit table has {} establishment contexts, kernel has {}",
            one_unit.ctxs, model.ctxs
        )));
    }
    Ok(PairProblem { model, one_unit: one_unit.clone(), extended })
}

/// Solved pair value table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSolution {
    pub grid: u32,
    pub extended: bool,
    pub values: Vec<f64>,
    pub policy: Vec<u16>,
    pub sweeps: u64,
    pub residual: f64,
}

impl PairSolution {
    #[inline]
    fn id(&self, x_b: u32, y0: u32, x_a: u32, y1: u32) -> usize {
        tri(x_b, y0) * tri_count(self.grid) + tri(x_a, y1)
    }

    pub fn value(&self, x_b: u32, y0: u32, x_a: u32, y1: u32) -> f64 {
        assert!(y0 >= 1 && y0 <= x_b && x_b <= self.grid);
        assert!(y1 >= 1 && y1 <= x_a && x_a <= self.grid);
        self.values[self.id(x_b, y0, x_a, y1)]
    }

    /// Value with queues and positions clamped onto the grid (lookups from
    /// live books that may exceed the solved cap).
    pub fn value_clamped(&self, x_b: u32, y0: u32, x_a: u32, y1: u32) -> f64 {
        let xb = x_b.clamp(1, self.grid);
        let xa = x_a.clamp(1, self.grid);
        self.value(xb, y0.clamp(1, xb), xa, y1.clamp(1, xa))
    }

    /// Entry value: both orders just placed at the tails (y = x).
    pub fn entry_value(&self, x_b: u32, x_a: u32) -> f64 {
        self.value(x_b, x_b, x_a, x_a)
    }

    /// Greedy decision: true = stay in the book.
    pub fn stays(&self, x_b: u32, y0: u32, x_a: u32, y1: u32) -> bool {
        let xb = x_b.clamp(1, self.grid);
        let xa = x_a.clamp(1, self.grid);
        self.policy[self.id(xb, y0.clamp(1, xb), xa, y1.clamp(1, xa))] != PAIR_ACTION_CANCEL
    }

    pub fn save(&self, bin_path: &std::path::Path, variant: &str, tol: f64) -> Result<(), MdpError> {
        super::write_values_bin(bin_path, &self.values)?;
        let sidecar = super::ValuesSidecar {
            schema: super::VALUES_SCHEMA.to_string(),
            problem: if self.extended { "pair-ext".into() } else { "pair".into() },
            variant: variant.to_string(),
            grid: self.grid,
            contexts: 1,
            n_states: self.values.len() as u64,
            tol,
            layout: "state id = tri(x_bid, y_bid) * T + tri(x_ask, y_ask), \
                     tri(x, y) = x(x-1)/2 + y - 1 over 1 <= y <= x <= grid, T = grid(grid+1)/2"
                .to_string(),
        };
        let f = std::fs::File::create(sidecar_path(bin_path))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &sidecar)
            .map_err(|e| MdpError::Sidecar(e.to_string()))?;
        Ok(())
    }

    pub fn load(bin_path: &std::path::Path) -> Result<PairSolution, MdpError> {
        let sidecar: super::ValuesSidecar = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(sidecar_path(bin_path))?,
        ))
        .map_err(|e| MdpError::Sidecar(e.to_string()))?;
        if sidecar.schema != super::VALUES_SCHEMA {
            return Err(MdpError::Sidecar(format!("unsupported schema {}", sidecar.schema)));
        }
        let extended = match sidecar.problem.as_str() {
            "pair" => false,
            "pair-ext" => true,
            other => return Err(MdpError::Sidecar(format!("not a pair table: `{other}`"))),
        };
        let values = super::read_values_bin(bin_path)?;
        let expect = tri_count(sidecar.grid) * tri_count(sidecar.grid);
        if values.len() != expect {
            return Err(MdpError::Sidecar(format!(
                "value table has {} entries, layout expects {expect}",
                values.len()
            )));
        }
        Ok(PairSolution {
            grid: sidecar.grid,
            extended,
            values,
            // The policy is reconstructible from the values; persisted
            // tables carry the stay/cancel decision implicitly (value > 0).
            policy: Vec::new(),
            sweeps: 0,
            residual: sidecar.tol,
        })
    }

    /// Stay decision for loaded tables without an explicit policy: the
    /// maker stays while the state value is strictly positive.
    pub fn stays_by_value(&self, x_b: u32, y0: u32, x_a: u32, y1: u32) -> bool {
        if self.policy.is_empty() {
            self.value_clamped(x_b, y0, x_a, y1) > 0.0
        } else {
            self.stays(x_b, y0, x_a, y1)
        }
    }
}

fn sidecar_path(bin: &std::path::Path) -> std::path::PathBuf {
    let mut s = bin.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::Side;
    use crate::mdp::{bellman_residual, build_one_unit};
    use crate::sim::{ModelSpec, ModelVariant};
    use crate::synthetic;

    fn solved_pair(variant: ModelVariant, grid: u32, extended: bool) -> (PairProblem, PairSolution) {
        let spec = ModelSpec::from_model_file(&synthetic::enriched_model2(10.0), variant).unwrap();
        let one = build_one_unit(&spec, grid, 100, 102, Side::Bid)
            .unwrap()
            .solve(&ValueIterOptions::default())
            .unwrap();
        let p = if extended {
            build_pair_extended(&spec, grid, &one).unwrap()
        } else {
            build_pair(&spec, grid, &one).unwrap()
        };
        let sol = p.solve(&ValueIterOptions::default()).unwrap();
        (p, sol)
    }

    #[test]
    fn symmetric_kernel_gives_symmetric_values() {
        let (_, sol) = solved_pair(ModelVariant::ModelII, 8, false);
        for xb in 1..=8u32 {
            for xa in 1..=8u32 {
                for y0 in 1..=xb {
                    for y1 in 1..=xa {
                        let a = sol.value(xb, y0, xa, y1);
                        let b = sol.value(xa, y1, xb, y0);
                        assert!((a - b).abs() < 1e-9, "({xb},{y0},{xa},{y1}): {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn extended_with_tail_positions_matches_plain_pair() {
        // At tail positions the resubmission action maps a state to
        // itself, so the extended problem adds nothing anywhere.
        let (_, plain) = solved_pair(ModelVariant::ModelII, 6, false);
        let (_, ext) = solved_pair(ModelVariant::ModelII, 6, true);
        for (a, b) in plain.values.iter().zip(&ext.values) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn resubmission_never_chosen_when_dominated() {
        // Resubmitting to the tail discards queue priority for the same
        // payoffs; the greedy policy must never pick it.
        let (_, ext) = solved_pair(ModelVariant::ModelII, 6, true);
        assert!(ext.policy.iter().all(|&a| a != PAIR_ACTION_RESUBMIT));
    }

    #[test]
    fn fabricated_better_tail_state_attracts_resubmission() {
        // A hand-built 3-state problem where relocating (continuation to a
        // better state at full probability, no transition consumed) beats
        // both waiting and cancelling.
        use crate::mdp::problem::{ContinuationAction, MdpProblem};
        let mut p = MdpProblem::new(2);
        // State 1: guaranteed fill next transition, worth 1 tick.
        p.terminations[1] = vec![0.0];
        p.continuations[1] = vec![ContinuationAction::new(0.0, vec![], &[(1.0, 1.0)])];
        // State 0: waiting absorbs at 0.1; resubmitting jumps to state 1.
        p.terminations[0] = vec![0.0];
        p.continuations[0] = vec![
            ContinuationAction::new(0.0, vec![], &[(1.0, 0.1)]),
            ContinuationAction::new(0.0, vec![(1, 1.0)], &[]),
        ];
        p.validate().unwrap();
        let sol = value_iterate(&p, &ValueIterOptions::default()).unwrap();
        assert!((sol.values.values[0] - 1.0).abs() < 1e-9);
        assert_eq!(sol.policy.actions[0], 2, "resubmit action (index 2) chosen");
    }

    #[test]
    fn values_never_negative_and_residual_holds() {
        let (p, sol) = solved_pair(ModelVariant::ModelII, 8, false);
        assert!(sol.values.iter().all(|&v| v >= 0.0));
        assert!(bellman_residual(&p, &sol.values, true) <= 1e-9);
    }

    #[test]
    fn matrix_free_matches_materialized() {
        let (p, _) = solved_pair(ModelVariant::ModelII, 6, true);
        let explicit = p.materialize();
        explicit.validate().unwrap();
        let n = p.n_states();
        let probe: Vec<f64> = (0..n).map(|i| ((i * 53) % 17) as f64 / 13.0).collect();
        for s in 0..n {
            let a = p.backup(s, &probe);
            let b = explicit.backup(s, &probe);
            assert!((a.0 - b.0).abs() < 1e-12, "state {s}");
        }
    }

    #[test]
    fn certain_fill_kernel_pins_pair_value_at_the_spread() {
        // Market-only flow at one-lot queues and always-revert
        // regeneration: every leg eventually fills at its own level, so
        // the one-unit saving is the full 2 ticks (expected buy cost
        // pi^j0) and the pair is worth exactly the 1-tick spread.
        use crate::calib::IntensityTable;
        let mut file = synthetic::enriched_model2(10.0);
        let g = file.q_max as usize;
        let mut market = vec![0.0; g + 1];
        market[1] = 1.0;
        let rates: [Vec<f64>; 3] = [vec![0.0; g + 1], vec![0.0; g + 1], market];
        file.intensity_bid = IntensityTable::from_rates(file.q_max, &rates, 1e6);
        file.intensity_ask = file.intensity_bid.clone();
        file.follow_marginal = 0.0;
        let spec = ModelSpec::from_model_file(&file, ModelVariant::Model0).unwrap();
        let one = build_one_unit(&spec, 6, 100, 102, Side::Bid)
            .unwrap()
            .solve(&ValueIterOptions::default())
            .unwrap();
        assert!((one.value(1, 1, 1) - 2.0).abs() < 1e-8, "certain fill saves 2 ticks");
        let pair = build_pair(&spec, 6, &one).unwrap();
        let sol = pair.solve(&ValueIterOptions::default()).unwrap();
        assert!((sol.value(1, 1, 1, 1) - 1.0).abs() < 1e-7, "v={}", sol.value(1, 1, 1, 1));
    }

    #[test]
    fn save_load_round_trip() {
        let (_, sol) = solved_pair(ModelVariant::Model0, 5, false);
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("values.bin");
        sol.save(&bin, "0", 1e-9).unwrap();
        let back = PairSolution::load(&bin).unwrap();
        assert_eq!(back.values, sol.values);
        assert_eq!(back.grid, sol.grid);
        assert_eq!(
            back.stays_by_value(3, 2, 4, 4),
            sol.value(3, 2, 4, 4) > 0.0
        );
    }
}
