//! Strategy evaluation inside the simulator.
//!
//! The maker's one-lot orders live inside the simulated queues with the
//! same dynamics the MDP kernels assume: the queue count includes the
//! maker's lot, market orders consume from the front (a clearing order
//! fills the maker), cancellations spare the maker's lot and split
//! hypergeometrically around it, and decisions are taken at every jump.
//! An adverse price move past a standing order triggers the one-unit
//! stop for the locally-optimal strategy (cross at one tick beyond) and a
//! requote for the naive one. Inventory is closed at the touch at the
//! horizon.

use crate::book::{BookState, EventKind, LastRemoval, RemovalKind, Side, LOT_CONTRACTS, Q_MAX};
use crate::mdp::{KernelModel, PairSolution};
use crate::rng::indexed_substream;
use crate::sim::{step_establishment, ModelSpec, SimError};
use crate::{exec, rng};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub enum EvalStrategy<'a> {
    /// Always quote both sides.
    Naive,
    /// Enter and stay per the solved pair values.
    LocallyOptimal { values: &'a PairSolution },
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub horizon_s: f64,
    pub runs: usize,
    pub seed: u64,
    /// Inventory cap in lots; `None` reproduces the unconstrained setup.
    pub max_inventory: Option<i64>,
    pub tick_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub pnl: f64,
    /// Time-averaged absolute inventory, lots.
    pub mean_abs_inventory: f64,
    pub turnover_contracts: f64,
    pub fills: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub runs: usize,
    pub mean_pnl: f64,
    pub se_pnl: f64,
    pub mean_abs_inventory: f64,
    pub mean_turnover_contracts: f64,
    pub per_run: Vec<RunResult>,
}

impl EvalStats {
    fn from_runs(per_run: Vec<RunResult>) -> EvalStats {
        let n = per_run.len().max(1) as f64;
        let mean_pnl = per_run.iter().map(|r| r.pnl).sum::<f64>() / n;
        let var = if per_run.len() > 1 {
            per_run.iter().map(|r| (r.pnl - mean_pnl).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        EvalStats {
            runs: per_run.len(),
            mean_pnl,
            se_pnl: (var / n).sqrt(),
            mean_abs_inventory: per_run.iter().map(|r| r.mean_abs_inventory).sum::<f64>() / n,
            mean_turnover_contracts: per_run.iter().map(|r| r.turnover_contracts).sum::<f64>() / n,
            per_run,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Leg {
    /// MDP position: lots to consume through the maker's own.
    y: u32,
}

struct Session<'a, 'b> {
    spec: &'a ModelSpec,
    strategy: EvalStrategy<'b>,
    config: &'a EvalConfig,
    state: BookState,
    legs: [Option<Leg>; 2], // bid, ask
    inventory: i64,
    cash: f64,
    turnover: f64,
    fills: u64,
    abs_inv_integral: f64,
    t: f64,
}

impl<'a, 'b> Session<'a, 'b> {
    fn queue(&self, side: Side) -> u32 {
        self.state.queue(side)
    }

    fn set_queue(&mut self, side: Side, q: u32) {
        match side {
            Side::Bid => self.state.q_bid = q,
            Side::Ask => self.state.q_ask = q,
        }
    }

    fn level(&self, side: Side) -> i64 {
        match side {
            Side::Bid => self.state.bid_level(),
            Side::Ask => self.state.ask_level(),
        }
    }

    fn record_fill(&mut self, side: Side, price_ticks: i64, lots: u32) {
        let notional = price_ticks as f64 * self.config.tick_size * (lots * LOT_CONTRACTS) as f64;
        match side {
            Side::Bid => {
                self.cash -= notional;
                self.inventory += lots as i64;
            }
            Side::Ask => {
                self.cash += notional;
                self.inventory -= lots as i64;
            }
        }
        self.turnover += (lots * LOT_CONTRACTS) as f64;
        self.fills += 1;
    }

    fn inventory_allows(&self, side: Side) -> bool {
        match self.config.max_inventory {
            None => true,
            Some(cap) => match side {
                Side::Bid => self.inventory < cap,
                Side::Ask => self.inventory > -cap,
            },
        }
    }

    /// Place the maker's lot at the tail of `side` (the queue count
    /// includes it afterwards).
    fn place(&mut self, side: Side) {
        debug_assert!(self.legs[side_idx(side)].is_none());
        let x = (self.queue(side) + 1).min(Q_MAX);
        self.set_queue(side, x);
        self.legs[side_idx(side)] = Some(Leg { y: x });
    }

    /// Cancel the maker's lot; an emptied queue regenerates like any
    /// removal.
    fn cancel(&mut self, side: Side) {
        if self.legs[side_idx(side)].take().is_none() {
            return;
        }
        let x = self.queue(side) - 1;
        self.set_queue(side, x);
        if x == 0 {
            self.state.last_removal = Some(LastRemoval { kind: RemovalKind::Cancel, q_r: 1 });
        }
    }

    /// Pair-table state of a standing leg.
    fn leg_state(&self, side: Side) -> Option<(u32, u32)> {
        self.legs[side_idx(side)].map(|l| (self.queue(side), l.y))
    }

    /// Strategy decision after a transition (the book must not be
    /// awaiting establishment).
    fn decide(&mut self) {
        debug_assert!(self.state.awaiting().is_none());
        match self.strategy {
            EvalStrategy::Naive => {
                for side in [Side::Bid, Side::Ask] {
                    if self.legs[side_idx(side)].is_none() && self.inventory_allows(side) {
                        self.place(side);
                    }
                }
            }
            EvalStrategy::LocallyOptimal { values } => {
                match (self.leg_state(Side::Bid), self.leg_state(Side::Ask)) {
                    (Some((xb, y0)), Some((xa, y1))) => {
                        if !values.stays_by_value(xb, y0, xa, y1) {
                            self.cancel(Side::Bid);
                            self.cancel(Side::Ask);
                        }
                    }
                    (Some((xb, y0)), None) => {
                        let xa = (self.queue(Side::Ask) + 1).min(Q_MAX);
                        if values.stays_by_value(xb, y0, xa, xa)
                            && self.inventory_allows(Side::Ask)
                        {
                            self.place(Side::Ask);
                        } else {
                            self.cancel(Side::Bid);
                        }
                    }
                    (None, Some((xa, y1))) => {
                        let xb = (self.queue(Side::Bid) + 1).min(Q_MAX);
                        if values.stays_by_value(xb, xb, xa, y1)
                            && self.inventory_allows(Side::Bid)
                        {
                            self.place(Side::Bid);
                        } else {
                            self.cancel(Side::Ask);
                        }
                    }
                    (None, None) => {
                        let xb = (self.queue(Side::Bid) + 1).min(Q_MAX);
                        let xa = (self.queue(Side::Ask) + 1).min(Q_MAX);
                        if values.value_clamped(xb, xb, xa, xa) > 0.0
                            && self.inventory_allows(Side::Bid)
                            && self.inventory_allows(Side::Ask)
                        {
                            self.place(Side::Bid);
                            self.place(Side::Ask);
                        }
                    }
                }
            }
        }
    }

    /// One market transition with the maker's lots inside the queues.
    /// Returns the waiting time.
    fn step_with_agent(&mut self, rng: &mut rng::Stream) -> Result<f64, SimError> {
        let spec = self.spec;
        let mut weights = [0.0f64; 6];
        let mut total = 0.0;
        for (si, side) in [Side::Bid, Side::Ask].into_iter().enumerate() {
            let x = self.queue(side);
            for kind in EventKind::ALL {
                // The maker's lot cannot be cancelled by market flow.
                let w = if kind == EventKind::Cancel
                    && self.legs[si].is_some()
                    && x <= 1
                {
                    0.0
                } else {
                    spec.lambda(kind, x)
                };
                weights[si * 3 + kind.index()] = w;
                total += w;
            }
        }
        if total <= 0.0 {
            return Err(SimError::AbsorbingState(self.state.q_bid, self.state.q_ask));
        }
        let u: f64 = rng.random();
        let dt = -(1.0 - u).ln() / total;
        let mut u = rng.random::<f64>() * total;
        let mut channel = 5;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                channel = i;
                break;
            }
            u -= w;
        }
        let side = if channel < 3 { Side::Bid } else { Side::Ask };
        let kind = EventKind::ALL[channel % 3];
        let x = self.queue(side);
        let leg = self.legs[side_idx(side)];
        match kind {
            EventKind::Limit => {
                let s = spec.size_law(EventKind::Limit, x).sample(rng);
                self.set_queue(side, (x + s).min(Q_MAX));
            }
            EventKind::Cancel => {
                let m = spec.size_law(EventKind::Cancel, x).sample(rng).min(x);
                match leg {
                    Some(l) => {
                        let m_eff = m.min(x - 1);
                        if m_eff >= 1 {
                            let k = sample_cancel_ahead(x, l.y, m_eff, rng);
                            self.set_queue(side, x - m_eff);
                            self.legs[side_idx(side)] = Some(Leg { y: l.y - k });
                        }
                    }
                    None => {
                        self.set_queue(side, x - m);
                        if x == m {
                            self.state.last_removal =
                                Some(LastRemoval { kind: RemovalKind::Cancel, q_r: m });
                        }
                    }
                }
            }
            EventKind::Market => {
                let m = spec.size_law(EventKind::Market, x).sample(rng).min(x);
                if let Some(l) = leg {
                    if m >= l.y {
                        self.record_fill(side, self.level(side), 1);
                        self.legs[side_idx(side)] = None;
                    } else {
                        self.legs[side_idx(side)] = Some(Leg { y: l.y - m });
                    }
                }
                self.set_queue(side, x - m);
                if x == m {
                    self.state.last_removal =
                        Some(LastRemoval { kind: RemovalKind::Market, q_r: m });
                }
            }
        }
        Ok(dt)
    }

    /// Resolve a pending establishment. A price move strands any standing
    /// leg one tick off the best, which in the 1-tick geometry is the
    /// one-unit stop: the leg crosses at the touch (a stranded bid buys at
    /// the new ask and vice versa). Both strategies face the same cost.
    fn establish(&mut self, rng: &mut rng::Stream) -> Result<f64, SimError> {
        let pre_ref = self.state.p_ref;
        let (dt, _est, _hidden, next) = step_establishment(&self.state, self.spec, rng)?;
        let moved = next.p_ref != pre_ref;
        self.state = next;
        if moved {
            for side in [Side::Bid, Side::Ask] {
                if self.legs[side_idx(side)].take().is_some() {
                    let price = self.level(side.opposite());
                    self.record_fill(side, price, 1);
                }
            }
        }
        Ok(dt)
    }

    fn close_at_touch(&mut self) {
        // Cancel standing orders, then flatten at the opposite touch.
        self.cancel(Side::Bid);
        self.cancel(Side::Ask);
        let inv = self.inventory;
        if inv > 0 {
            self.record_fill(Side::Ask, self.state.bid_level(), inv as u32);
        } else if inv < 0 {
            self.record_fill(Side::Bid, self.state.ask_level(), (-inv) as u32);
        }
    }
}

fn side_idx(side: Side) -> usize {
    match side {
        Side::Bid => 0,
        Side::Ask => 1,
    }
}

/// Sample the number of cancelled lots ahead of the maker (inverse-CDF
/// over the hypergeometric split).
fn sample_cancel_ahead(x: u32, y: u32, m: u32, rng: &mut rng::Stream) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = y - 1;
    let mut done = false;
    KernelModel::cancel_ahead_split(x, y, m, |k, p| {
        if !done {
            acc += p;
            if u < acc {
                chosen = k;
                done = true;
            }
        }
    });
    chosen
}

/// One simulated session; deterministic given the stream.
fn run_session(
    spec: &ModelSpec,
    strategy: EvalStrategy<'_>,
    config: &EvalConfig,
    rng: &mut rng::Stream,
) -> Result<RunResult, SimError> {
    let q0 = (spec.q_max / 3).max(1);
    let mut session = Session {
        spec,
        strategy,
        config,
        state: BookState::new(q0, q0, 1_000),
        legs: [None, None],
        inventory: 0,
        cash: 0.0,
        turnover: 0.0,
        fills: 0,
        abs_inv_integral: 0.0,
        t: 0.0,
    };
    session.decide();
    while session.t < config.horizon_s {
        let dt = if session.state.awaiting().is_some() {
            session.establish(rng)?
        } else {
            session.step_with_agent(rng)?
        };
        let dt_capped = dt.min(config.horizon_s - session.t);
        session.abs_inv_integral += session.inventory.unsigned_abs() as f64 * dt_capped;
        session.t += dt;
        if session.t >= config.horizon_s {
            break;
        }
        if session.state.awaiting().is_none() {
            session.decide();
        }
    }
    session.close_at_touch();
    Ok(RunResult {
        pnl: session.cash,
        mean_abs_inventory: session.abs_inv_integral / config.horizon_s.max(f64::MIN_POSITIVE),
        turnover_contracts: session.turnover,
        fills: session.fills,
    })
}

/// Monte Carlo evaluation of a strategy inside the simulator.
pub fn monte_carlo_eval(
    spec: &ModelSpec,
    strategy: EvalStrategy<'_>,
    config: &EvalConfig,
    parallel: bool,
) -> Result<EvalStats, SimError> {
    let results = exec::map_indexed(
        config.runs,
        |i| {
            let mut rng = indexed_substream(config.seed, "eval.session", i as u64);
            run_session(spec, strategy, config, &mut rng)
        },
        parallel,
    );
    let per_run = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalStats::from_runs(per_run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ModelVariant;
    use crate::synthetic;

    fn spec() -> ModelSpec {
        ModelSpec::from_model_file(&synthetic::enriched_model2(10.0), ModelVariant::ModelII).unwrap()
    }

    #[test]
    fn never_entering_strategy_has_zero_pnl() {
        // A value table of zeros never enters.
        let values = PairSolution {
            grid: 10,
            extended: false,
            values: vec![0.0; crate::mdp::tri_count(10).pow(2)],
            policy: Vec::new(),
            sweeps: 0,
            residual: 0.0,
        };
        let spec = spec();
        let cfg = EvalConfig {
            horizon_s: 300.0,
            runs: 8,
            seed: 3,
            max_inventory: None,
            tick_size: 1.0,
        };
        let stats =
            monte_carlo_eval(&spec, EvalStrategy::LocallyOptimal { values: &values }, &cfg, true)
                .unwrap();
        assert_eq!(stats.mean_pnl, 0.0);
        assert!(stats.per_run.iter().all(|r| r.pnl == 0.0 && r.fills == 0));
    }

    #[test]
    fn identical_seeds_identical_stats() {
        let spec = spec();
        let cfg = EvalConfig {
            horizon_s: 120.0,
            runs: 4,
            seed: 11,
            max_inventory: Some(8),
            tick_size: 1.0,
        };
        let a = monte_carlo_eval(&spec, EvalStrategy::Naive, &cfg, true).unwrap();
        let b = monte_carlo_eval(&spec, EvalStrategy::Naive, &cfg, false).unwrap();
        assert_eq!(a, b, "parallel and sequential runs agree bit-for-bit");
    }

    #[test]
    fn naive_trades_and_inventory_cap_binds() {
        let spec = spec();
        let cfg = EvalConfig {
            horizon_s: 600.0,
            runs: 4,
            seed: 5,
            max_inventory: Some(2),
            tick_size: 1.0,
        };
        let stats = monte_carlo_eval(&spec, EvalStrategy::Naive, &cfg, true).unwrap();
        assert!(stats.per_run.iter().all(|r| r.fills > 0));
        // With a 2-lot cap the time-averaged |inventory| stays small.
        assert!(stats.mean_abs_inventory <= 2.0 + 1e-9);
    }
}
