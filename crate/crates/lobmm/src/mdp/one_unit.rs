//! Keep-or-cancel MDP for buying (or selling) one lot.
//!
//! The agent holds a one-lot limit order at its initial best level with a
//! stop-loss one tick beyond the opposite best (the working geometry of a
//! 1-tick book: one adverse price move hits the stop). States:
//!
//! * alive `(x, y, xo)` — own-side queue `x` (agent included), position
//!   `y` (lots to consume through the agent's own, so `y = x` at the tail
//!   and execution is `y = 0`), opposite best queue `xo`;
//! * awaiting `(x, y, ctx)` — the opposite side was just emptied; `ctx`
//!   carries the removal kind and size bucket that condition the
//!   establishment;
//! * two sinks — executed (value = stop minus own level, in ticks) and
//!   stopped out (value 0).
//!
//! Alive states offer wait (continuation, zero running value) or
//! cancel-and-cross (termination worth one tick). In awaiting states the
//! establishment delay is far below any reaction latency, so the only
//! action is to wait; a Follow against the agent lands on the stop.

use super::kernel::{tri, tri_count, KernelModel};
use super::problem::{ContinuationAction, MdpProblem};
use super::{value_iterate, MdpError, MdpKernel, Solution, ValueIterOptions};
use crate::book::{RemovalKind, Side};
use crate::sim::ModelSpec;

/// Matrix-free kernel of the one-unit problem.
#[derive(Debug, Clone)]
pub struct OneUnitProblem {
    pub(crate) model: KernelModel,
    pub side: Side,
    /// Execution value: stop level minus own level, ticks.
    pub v_exec: f64,
    /// Cancel-and-cross value from an alive state, ticks.
    pub v_cancel: f64,
}

/// Transition target of a wait action: a live state or a folded value.
pub(crate) enum Target {
    Live(usize),
    Value(f64),
}

impl OneUnitProblem {
    pub fn grid(&self) -> u32 {
        self.model.grid
    }

    pub fn ctxs(&self) -> usize {
        self.model.ctxs
    }

    fn n_alive(&self) -> usize {
        tri_count(self.model.grid) * self.model.grid as usize
    }

    fn n_await(&self) -> usize {
        tri_count(self.model.grid) * self.model.ctxs
    }

    #[inline]
    pub(crate) fn alive_id(&self, x: u32, y: u32, xo: u32) -> usize {
        tri(x, y) * self.model.grid as usize + (xo as usize - 1)
    }

    #[inline]
    pub(crate) fn await_id(&self, x: u32, y: u32, ctx: usize) -> usize {
        self.n_alive() + tri(x, y) * self.model.ctxs + ctx
    }

    pub(crate) fn exec_id(&self) -> usize {
        self.n_alive() + self.n_await()
    }

    pub(crate) fn stop_id(&self) -> usize {
        self.exec_id() + 1
    }

    fn classify(&self, s: usize) -> StateKind {
        let n_alive = self.n_alive();
        if s < n_alive {
            let g = self.model.grid as usize;
            let t = s / g;
            let xo = (s % g) as u32 + 1;
            let (x, y) = untri(t);
            StateKind::Alive(x, y, xo)
        } else if s < n_alive + self.n_await() {
            let r = s - n_alive;
            let t = r / self.model.ctxs;
            let ctx = r % self.model.ctxs;
            let (x, y) = untri(t);
            StateKind::Await(x, y, ctx)
        } else if s == self.exec_id() {
            StateKind::Exec
        } else {
            StateKind::Stop
        }
    }

    /// A state where no channel fires (degenerate rate tables): waiting
    /// would last forever, so only termination is available.
    pub(crate) fn rate_dead(&self, x: u32, xo: u32) -> bool {
        self.model.total_rate_agent_own(x, xo) <= 0.0
    }

    /// Enumerate the wait-action outcomes of an alive state. Zero-rate
    /// channels and zero-probability outcomes are skipped.
    pub(crate) fn visit_alive(&self, x: u32, y: u32, xo: u32, f: &mut impl FnMut(Target, f64)) {
        let m = &self.model;
        let total = m.total_rate_agent_own(x, xo);
        debug_assert!(total > 0.0, "visit_alive on a rate-dead state");
        use crate::book::EventKind::*;

        // Own-side limit arrivals (behind the agent).
        let w = m.rate(Limit, x) / total;
        if w > 0.0 {
            let (inc, self_mass) = m.limit_targets(x);
            for (i, p) in inc.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                f(Target::Live(self.alive_id(x + 1 + i as u32, y, xo)), w * p);
            }
            if self_mass > 0.0 {
                f(Target::Live(self.alive_id(x, y, xo)), w * self_mass);
            }
        }

        // Own-side cancellations (never the agent's lot).
        if x > 1 {
            let w = m.rate(Cancel, x) / total;
            if w > 0.0 {
                for (mi, pm) in m.cancel_agent_pmf(x).iter().enumerate().filter(|(_, p)| **p > 0.0) {
                    let mm = mi as u32 + 1;
                    KernelModel::cancel_ahead_split(x, y, mm, |k, pk| {
                        f(Target::Live(self.alive_id(x - mm, y - k, xo)), w * pm * pk);
                    });
                }
            }
        }

        // Own-side market orders: execution at m >= y.
        let w = m.rate(Market, x) / total;
        if w > 0.0 {
            for (mi, pm) in m.market_pmf_at(x).iter().enumerate().filter(|(_, p)| **p > 0.0) {
                let mm = mi as u32 + 1;
                if mm >= y {
                    f(Target::Live(self.exec_id()), w * pm);
                } else {
                    f(Target::Live(self.alive_id(x - mm, y - mm, xo)), w * pm);
                }
            }
        }

        // Opposite-side limit arrivals.
        let w = m.rate(Limit, xo) / total;
        if w > 0.0 {
            let (inc, self_mass) = m.limit_targets(xo);
            for (i, p) in inc.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                f(Target::Live(self.alive_id(x, y, xo + 1 + i as u32)), w * p);
            }
            if self_mass > 0.0 {
                f(Target::Live(self.alive_id(x, y, xo)), w * self_mass);
            }
        }

        // Opposite-side cancellations; a full clear awaits establishment.
        let w = m.rate(Cancel, xo) / total;
        if w > 0.0 {
            for (mi, pm) in m.cancel_full_pmf(xo).iter().enumerate().filter(|(_, p)| **p > 0.0) {
                let mm = mi as u32 + 1;
                if mm == xo {
                    let ctx = m.ctx_of(RemovalKind::Cancel, mm);
                    f(Target::Live(self.await_id(x, y, ctx)), w * pm);
                } else {
                    f(Target::Live(self.alive_id(x, y, xo - mm)), w * pm);
                }
            }
        }

        // Opposite-side market orders.
        let w = m.rate(Market, xo) / total;
        if w > 0.0 {
            for (mi, pm) in m.market_pmf_at(xo).iter().enumerate().filter(|(_, p)| **p > 0.0) {
                let mm = mi as u32 + 1;
                if mm == xo {
                    let ctx = m.ctx_of(RemovalKind::Market, mm);
                    f(Target::Live(self.await_id(x, y, ctx)), w * pm);
                } else {
                    f(Target::Live(self.alive_id(x, y, xo - mm)), w * pm);
                }
            }
        }
    }

    /// Enumerate the establishment outcomes of an awaiting state: a Follow
    /// against the agent reaches the stop, a Revert refills the opposite
    /// best.
    pub(crate) fn visit_await(&self, x: u32, y: u32, ctx: usize, f: &mut impl FnMut(Target, f64)) {
        let pf = self.model.p_follow(ctx);
        if pf > 0.0 {
            f(Target::Live(self.stop_id()), pf);
        }
        let revert = 1.0 - pf;
        if revert > 0.0 {
            for (qi, p) in self.model.revert_qe(ctx).iter().enumerate() {
                f(Target::Live(self.alive_id(x, y, qi as u32 + 1)), revert * p);
            }
        }
    }

    /// Explicit sparse form (small grids; tests and oracles).
    pub fn materialize(&self) -> MdpProblem {
        let n = self.n_states();
        let mut p = MdpProblem::new(n);
        for s in 0..n {
            match self.classify(s) {
                StateKind::Alive(x, y, xo) => {
                    p.terminations[s] = vec![self.v_cancel];
                    if self.rate_dead(x, xo) {
                        continue;
                    }
                    let mut live = Vec::new();
                    self.visit_alive(x, y, xo, &mut |t, prob| match t {
                        Target::Live(id) => live.push((id as u32, prob)),
                        Target::Value(_) => unreachable!("one-unit targets are live"),
                    });
                    p.continuations[s] = vec![ContinuationAction::new(0.0, live, &[])];
                }
                StateKind::Await(x, y, ctx) => {
                    let mut live = Vec::new();
                    self.visit_await(x, y, ctx, &mut |t, prob| match t {
                        Target::Live(id) => live.push((id as u32, prob)),
                        Target::Value(_) => unreachable!(),
                    });
                    p.continuations[s] = vec![ContinuationAction::new(0.0, live, &[])];
                }
                StateKind::Exec => p.terminations[s] = vec![self.v_exec],
                StateKind::Stop => p.terminations[s] = vec![0.0],
            }
        }
        p
    }

    /// Solve and wrap the table with its layout.
    pub fn solve(&self, opts: &ValueIterOptions) -> Result<OneUnitSolution, MdpError> {
        let sol: Solution = value_iterate(self, opts)?;
        Ok(OneUnitSolution {
            grid: self.model.grid,
            ctxs: self.model.ctxs,
            side: self.side,
            v_exec: self.v_exec,
            values: sol.values.values,
            policy: sol.policy.actions,
            sweeps: sol.sweeps,
            residual: sol.residual,
        })
    }
}

enum StateKind {
    Alive(u32, u32, u32),
    Await(u32, u32, usize),
    Exec,
    Stop,
}

fn untri(t: usize) -> (u32, u32) {
    // Invert tri(x, y): x is the triangular root.
    let x = ((((8 * t + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize + 1;
    let base = (x * (x - 1)) / 2;
    debug_assert!(base <= t && t < base + x);
    (x as u32, (t - base) as u32 + 1)
}

impl MdpKernel for OneUnitProblem {
    fn n_states(&self) -> usize {
        self.n_alive() + self.n_await() + 2
    }

    fn backup(&self, s: usize, prev: &[f64]) -> (f64, u16) {
        match self.classify(s) {
            StateKind::Alive(x, y, xo) => {
                if self.rate_dead(x, xo) {
                    return (self.v_cancel, 0);
                }
                let mut wait = 0.0;
                self.visit_alive(x, y, xo, &mut |t, p| match t {
                    Target::Live(id) => wait += p * prev[id],
                    Target::Value(v) => wait += p * v,
                });
                if self.v_cancel >= wait {
                    (self.v_cancel, 0)
                } else {
                    (wait, 1)
                }
            }
            StateKind::Await(x, y, ctx) => {
                let mut v = 0.0;
                self.visit_await(x, y, ctx, &mut |t, p| match t {
                    Target::Live(id) => v += p * prev[id],
                    Target::Value(val) => v += p * val,
                });
                (v, 0)
            }
            StateKind::Exec => (self.v_exec, 0),
            StateKind::Stop => (0.0, 0),
        }
    }
}

/// Build the keep-or-cancel problem for one lot at `j0` with stop level
/// `j_stop`. The two-limit book supports exactly the 1-tick geometry
/// (|j_stop - j0| = 2: one adverse price move hits the stop).
pub fn build_one_unit(
    spec: &ModelSpec,
    grid: u32,
    j0: i64,
    j_stop: i64,
    side: Side,
) -> Result<OneUnitProblem, MdpError> {
    let depth = match side {
        Side::Bid => j_stop - j0,
        Side::Ask => j0 - j_stop,
    };
    if depth != 2 {
        return Err(MdpError::Geometry(format!(
            "one-unit stop must sit 2 ticks beyond the order (side {side:?}, j0={j0}, J={j_stop}): \
             deeper stops need book depth beyond the tracked best limits"
        )));
    }
    let model = KernelModel::from_spec(spec, grid)?;
    Ok(OneUnitProblem { model, side, v_exec: depth as f64, v_cancel: (depth - 1) as f64 })
}

/// Solved one-unit value table with its state layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OneUnitSolution {
    pub grid: u32,
    pub ctxs: usize,
    pub side: Side,
    pub v_exec: f64,
    pub values: Vec<f64>,
    pub policy: Vec<u16>,
    pub sweeps: u64,
    pub residual: f64,
}

impl OneUnitSolution {
    fn n_alive(&self) -> usize {
        tri_count(self.grid) * self.grid as usize
    }

    fn n_await(&self) -> usize {
        tri_count(self.grid) * self.ctxs
    }

    /// Value of an alive state; `y = 0` is the executed terminal.
    pub fn value(&self, x_own: u32, y: u32, x_opp: u32) -> f64 {
        if y == 0 {
            return self.v_exec;
        }
        assert!(x_own >= 1 && x_own <= self.grid && y <= x_own, "state ({x_own},{y}) off grid");
        assert!(x_opp >= 1 && x_opp <= self.grid);
        self.values[tri(x_own, y) * self.grid as usize + (x_opp as usize - 1)]
    }

    /// Value of an awaiting state after the opposite side was emptied by
    /// (`kind`, `q_r` lots).
    pub fn value_await(&self, x_own: u32, y: u32, kind: RemovalKind, q_r: u32) -> f64 {
        let ctx = if self.ctxs == 1 {
            0
        } else {
            kind.index() * crate::regen::QR_BUCKETS + crate::regen::bucket_of_lots(q_r)
        };
        self.values[self.n_alive() + tri(x_own, y) * self.ctxs + ctx]
    }

    /// Value after an opposite-side transition that may have emptied it:
    /// `x_opp_after = 0` reads the awaiting state for the removal context.
    pub fn value_post(&self, x_own: u32, y: u32, x_opp_after: u32, kind: RemovalKind, q_r: u32) -> f64 {
        if x_opp_after == 0 {
            self.value_await(x_own, y, kind, q_r)
        } else {
            self.value(x_own, y, x_opp_after)
        }
    }

    pub fn exec_value(&self) -> f64 {
        self.values[self.n_alive() + self.n_await()]
    }

    pub fn stop_value(&self) -> f64 {
        self.values[self.n_alive() + self.n_await() + 1]
    }

    /// Greedy decision in an alive state: true = keep waiting. Tables
    /// loaded from disk carry no explicit policy; there the decision falls
    /// back to the value test (waiting strictly beats the 1-tick cancel).
    pub fn keeps(&self, x_own: u32, y: u32, x_opp: u32) -> bool {
        if self.policy.is_empty() {
            self.value(x_own, y, x_opp) > self.v_exec - 1.0 + 1e-12
        } else {
            self.policy[tri(x_own, y) * self.grid as usize + (x_opp as usize - 1)] == 1
        }
    }

    pub fn save(&self, bin_path: &std::path::Path, variant: &str, tol: f64) -> Result<(), MdpError> {
        super::write_values_bin(bin_path, &self.values)?;
        let sidecar = super::ValuesSidecar {
            schema: super::VALUES_SCHEMA.to_string(),
            problem: "buy-one".to_string(),
            variant: variant.to_string(),
            grid: self.grid,
            contexts: self.ctxs as u32,
            n_states: self.values.len() as u64,
            tol,
            layout: "alive id = tri(x_own, y) * grid + x_opp - 1; awaiting id = \
                     n_alive + tri(x_own, y) * contexts + ctx; then executed and stopped sinks; \
                     tri(x, y) = x(x-1)/2 + y - 1 over 1 <= y <= x <= grid"
                .to_string(),
        };
        let f = std::fs::File::create(one_unit_sidecar_path(bin_path))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &sidecar)
            .map_err(|e| MdpError::Sidecar(e.to_string()))?;
        Ok(())
    }

    pub fn load(bin_path: &std::path::Path) -> Result<OneUnitSolution, MdpError> {
        let sidecar: super::ValuesSidecar = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(one_unit_sidecar_path(bin_path))?,
        ))
        .map_err(|e| MdpError::Sidecar(e.to_string()))?;
        if sidecar.schema != super::VALUES_SCHEMA || sidecar.problem != "buy-one" {
            return Err(MdpError::Sidecar(format!(
                "not a buy-one value table: {}/{}",
                sidecar.schema, sidecar.problem
            )));
        }
        let values = super::read_values_bin(bin_path)?;
        let grid = sidecar.grid;
        let ctxs = sidecar.contexts as usize;
        let expect = tri_count(grid) * grid as usize + tri_count(grid) * ctxs + 2;
        if values.len() != expect {
            return Err(MdpError::Sidecar(format!(
                "value table has {} entries, layout expects {expect}",
                values.len()
            )));
        }
        let v_exec = values[tri_count(grid) * grid as usize + tri_count(grid) * ctxs];
        Ok(OneUnitSolution {
            grid,
            ctxs,
            side: Side::Bid,
            v_exec,
            values,
            policy: Vec::new(),
            sweeps: 0,
            residual: sidecar.tol,
        })
    }
}

fn one_unit_sidecar_path(bin: &std::path::Path) -> std::path::PathBuf {
    let mut s = bin.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::IntensityTable;
    use crate::mdp::bellman_residual;
    use crate::sim::ModelVariant;
    use crate::synthetic;

    fn spec(variant: ModelVariant) -> ModelSpec {
        ModelSpec::from_model_file(&synthetic::enriched_model2(10.0), variant).unwrap()
    }

    #[test]
    fn terminal_cases_are_exact() {
        for variant in [ModelVariant::Model0, ModelVariant::ModelII] {
            let p = build_one_unit(&spec(variant), 10, 100, 102, Side::Bid).unwrap();
            let sol = p.solve(&ValueIterOptions::default()).unwrap();
            assert_eq!(sol.exec_value(), 2.0, "executed: J - j0 ticks exactly");
            assert_eq!(sol.stop_value(), 0.0, "stop level reached: 0 exactly");
            assert_eq!(sol.value(5, 0, 3), 2.0);
        }
    }

    #[test]
    fn geometry_is_validated() {
        let s = spec(ModelVariant::Model0);
        assert!(build_one_unit(&s, 10, 100, 103, Side::Bid).is_err());
        assert!(build_one_unit(&s, 10, 100, 98, Side::Ask).unwrap().v_exec == 2.0);
        assert!(build_one_unit(&s, 10, 100, 101, Side::Bid).is_err());
    }

    #[test]
    fn values_bounded_by_terminal_payoffs() {
        let p = build_one_unit(&spec(ModelVariant::ModelII), 12, 100, 102, Side::Bid).unwrap();
        let sol = p.solve(&ValueIterOptions::default()).unwrap();
        for v in &sol.values {
            assert!(*v >= 0.0 && *v <= 2.0 + 1e-12, "value {v} out of [0, 2]");
        }
        // Alive states can always cancel for one tick.
        for x in 1..=12u32 {
            for y in 1..=x {
                for xo in 1..=12u32 {
                    assert!(sol.value(x, y, xo) >= 1.0 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn certain_execution_one_backup() {
        // Market-only flow at the agent's bin; the opposite queue is
        // pinned at a bin with zero rates, so the next transition executes.
        let mut file = synthetic::enriched_model2(10.0);
        let g = file.q_max as usize;
        let mut market = vec![0.0; g + 1];
        market[1] = 1.0;
        let rates: [Vec<f64>; 3] = [vec![0.0; g + 1], vec![0.0; g + 1], market];
        file.intensity_bid = IntensityTable::from_rates(file.q_max, &rates, 1e6);
        file.intensity_ask = file.intensity_bid.clone();
        let spec = ModelSpec::from_model_file(&file, ModelVariant::Model0).unwrap();
        let p = build_one_unit(&spec, 10, 100, 102, Side::Bid).unwrap();
        let sol = p.solve(&ValueIterOptions::default()).unwrap();
        // x = 1 (agent alone), opposite bin 10 has zero rate: the only
        // transition is the executing market order.
        assert!((sol.value(1, 1, 10) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_free_matches_materialized() {
        let p = build_one_unit(&spec(ModelVariant::ModelII), 8, 100, 102, Side::Bid).unwrap();
        let explicit = p.materialize();
        explicit.validate().unwrap();
        let n = p.n_states();
        let probe: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 / 7.0).collect();
        for s in (0..n).step_by(7) {
            let a = p.backup(s, &probe);
            let b = explicit.backup(s, &probe);
            assert!((a.0 - b.0).abs() < 1e-12, "state {s}: {} vs {}", a.0, b.0);
        }
        let sol_a = p.solve(&ValueIterOptions::default()).unwrap();
        let sol_b = value_iterate(&explicit, &ValueIterOptions::default()).unwrap();
        for (a, b) in sol_a.values.iter().zip(&sol_b.values.values) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(bellman_residual(&p, &sol_a.values, true) <= 1e-9);
    }

    #[test]
    fn await_value_interpolates_follow_and_revert() {
        let p = build_one_unit(&spec(ModelVariant::ModelII), 10, 100, 102, Side::Bid).unwrap();
        let sol = p.solve(&ValueIterOptions::default()).unwrap();
        // After a large market removal, Follow (stop, value 0) dominates:
        // the awaiting value is far below the alive value.
        let alive = sol.value(5, 3, 4);
        let await_big = sol.value_await(5, 3, RemovalKind::Market, 4);
        assert!(await_big < 0.35, "await after big market removal: {await_big}");
        assert!(alive >= 1.0);
        // After a small cancel removal, Revert dominates: closer to alive.
        let await_cancel = sol.value_await(5, 3, RemovalKind::Cancel, 1);
        assert!(await_cancel > await_big);
    }
}
