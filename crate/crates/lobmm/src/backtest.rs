//! Historical replay with fictitious market-maker orders.
//!
//! The data stream is replayed unchanged (no market impact); the maker's
//! one-lot orders ride along as overlays with a queue position. Matching
//! rules:
//!
//! * R1 — a data cancellation hits a position drawn from an exponential
//!   law over depth-from-tail (low-priority orders cancel more often),
//!   capped at the queue length; it advances the maker iff it lands ahead.
//! * R2 — a market order of size m fills the maker iff fewer than m
//!   contracts stand ahead.
//! * R3 — a market order that clears the whole limit fills the maker
//!   regardless of position.
//! * R4 — after a fictitious fill the queue is reset to the quantity
//!   observed in the data (as if the trade had been enlarged).
//! * R5 — no market impact is applied.
//!
//! Strategy decisions take effect a fixed round-trip latency after the
//! triggering event. End of day, inventory is closed at the touch.

use crate::book::{Side, LOT_CONTRACTS};
use crate::mdp::PairSolution;
use crate::rng::substream;
use crate::stream::{replay, EventRole, ReplayQuality, StreamRecord, TrackedEvent};
use crate::{exec, rng};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    /// Round-trip latency, seconds.
    pub latency_rt: f64,
    /// Inventory cap, lots (new orders that would push past it are held).
    pub max_inventory: i64,
    /// Rate of the capped exponential cancellation-position law, 1/lot.
    pub cancel_law_rate: f64,
    /// Currency per tick per contract.
    pub tick_size: f64,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            latency_rt: 200e-6,
            max_inventory: 8,
            cancel_law_rate: 0.1,
            tick_size: 1.0,
            seed: 0,
        }
    }
}

/// Maker strategy run against a replayed day.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    /// Quote both sides whenever the corresponding queue is longer than
    /// the threshold (contracts).
    Naive { q_min_contracts: u32 },
    /// Quote per the solved pair value tables: stay while the state value
    /// is positive.
    LocallyOptimal { values: &'a PairSolution },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub time: f64,
    pub side: Side,
    pub price_ticks: i64,
    pub qty_contracts: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub fills: Vec<Fill>,
    /// Signed inventory, lots.
    pub inventory: i64,
    pub cash: f64,
    /// Cash plus inventory marked at the final mid.
    pub pnl: f64,
    /// Total traded notional, currency.
    pub turnover: f64,
    /// (time, mark-to-market pnl) after every fill and at the close.
    pub pnl_series: Vec<(f64, f64)>,
    pub quality: ReplayQuality,
    /// Order placements; entries whose queue had not grown since the
    /// decision snapshot.
    pub placements: u64,
    pub favorable_entries: u64,
}

#[derive(Debug, Clone, Copy)]
struct MakerOrder {
    level: i64,
    /// Contracts standing ahead.
    position_ahead: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Place { side: Side, decision_queue: u32 },
    Cancel { side: Side },
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    effect_time: f64,
    action: Action,
}

struct Engine<'a, 'b> {
    config: &'a BacktestConfig,
    strategy: Strategy<'b>,
    rng: rng::Stream,
    bid_order: Option<MakerOrder>,
    ask_order: Option<MakerOrder>,
    pending: Vec<Pending>,
    pending_place: [bool; 2],
    pending_cancel: [bool; 2],
    ledger: BacktestLedger,
    // Current data book.
    bid_px: i64,
    ask_px: i64,
    bid_qty: u32,
    ask_qty: u32,
}

fn side_idx(side: Side) -> usize {
    match side {
        Side::Bid => 0,
        Side::Ask => 1,
    }
}

impl<'a, 'b> Engine<'a, 'b> {
    fn order(&mut self, side: Side) -> &mut Option<MakerOrder> {
        match side {
            Side::Bid => &mut self.bid_order,
            Side::Ask => &mut self.ask_order,
        }
    }

    fn queue(&self, side: Side) -> u32 {
        match side {
            Side::Bid => self.bid_qty,
            Side::Ask => self.ask_qty,
        }
    }

    fn best(&self, side: Side) -> i64 {
        match side {
            Side::Bid => self.bid_px,
            Side::Ask => self.ask_px,
        }
    }

    fn mid(&self) -> f64 {
        (self.bid_px + self.ask_px) as f64 / 2.0 * self.config.tick_size
    }

    fn mark_pnl(&mut self, time: f64) {
        self.ledger.pnl =
            self.ledger.cash + self.ledger.inventory as f64 * LOT_CONTRACTS as f64 * self.mid();
        self.ledger.pnl_series.push((time, self.ledger.pnl));
    }

    fn record_fill(&mut self, time: f64, side: Side, price_ticks: i64, qty_contracts: u32) {
        let notional = price_ticks as f64 * self.config.tick_size * qty_contracts as f64;
        match side {
            Side::Bid => {
                // Our bid filled: we bought.
                self.ledger.cash -= notional;
                self.ledger.inventory += (qty_contracts / LOT_CONTRACTS) as i64;
            }
            Side::Ask => {
                self.ledger.cash += notional;
                self.ledger.inventory -= (qty_contracts / LOT_CONTRACTS) as i64;
            }
        }
        self.ledger.turnover += notional.abs();
        self.ledger.fills.push(Fill { time, side, price_ticks, qty_contracts });
        self.mark_pnl(time);
    }

    /// Inventory-capped willingness to add an order on `side`.
    fn inventory_allows(&self, side: Side) -> bool {
        match side {
            Side::Bid => self.ledger.inventory < self.config.max_inventory,
            Side::Ask => self.ledger.inventory > -self.config.max_inventory,
        }
    }

    /// The maker state as the MDP sees it: queue including the maker's
    /// lot, position counting lots to consume through its own.
    fn mdp_state(&self, side: Side) -> Option<(u32, u32)> {
        let order = match side {
            Side::Bid => self.bid_order,
            Side::Ask => self.ask_order,
        }?;
        let queue_lots = (self.queue(side) / LOT_CONTRACTS).max(0) + 1;
        let ahead_lots = order.position_ahead.div_ceil(LOT_CONTRACTS);
        Some((queue_lots, (ahead_lots + 1).min(queue_lots)))
    }

    /// Whether a standing order sits off the current best (stranded by a
    /// price move).
    fn stranded(&self, side: Side) -> bool {
        match side {
            Side::Bid => self.bid_order.map(|o| o.level != self.bid_px).unwrap_or(false),
            Side::Ask => self.ask_order.map(|o| o.level != self.ask_px).unwrap_or(false),
        }
    }

    /// Desired presence per side under the strategy, given the current
    /// book and orders.
    fn desired(&self) -> [bool; 2] {
        match self.strategy {
            Strategy::Naive { q_min_contracts } => {
                // Naive orders wait for execution; a stranded order is
                // kept (it can only fill if the price comes back through
                // it). The threshold applies at the best.
                let want = |side: Side| self.stranded(side) || self.queue(side) > q_min_contracts;
                [want(Side::Bid), want(Side::Ask)]
            }
            Strategy::LocallyOptimal { values } => {
                let entry = |q: u32| q / LOT_CONTRACTS + 1;
                match (self.mdp_state(Side::Bid), self.mdp_state(Side::Ask)) {
                    (Some((xb, y0)), Some((xa, y1))) => {
                        let stay = values.stays_by_value(xb, y0, xa, y1);
                        [stay, stay]
                    }
                    (Some((xb, y0)), None) => {
                        // Re-enter the ask iff the post-entry state has value.
                        let xa = entry(self.ask_qty);
                        let stay = values.stays_by_value(xb, y0, xa, xa);
                        [stay, stay]
                    }
                    (None, Some((xa, y1))) => {
                        let xb = entry(self.bid_qty);
                        let stay = values.stays_by_value(xb, xb, xa, y1);
                        [stay, stay]
                    }
                    (None, None) => {
                        let xb = entry(self.bid_qty);
                        let xa = entry(self.ask_qty);
                        let enter = values.stays_by_value(xb, xb, xa, xa)
                            && values.value_clamped(xb, xb, xa, xa) > 0.0;
                        [enter, enter]
                    }
                }
            }
        }
    }

    /// Queue strategy actions that change the standing orders, with
    /// latency. The locally-optimal strategy cancels stranded orders (its
    /// tables price the 1-tick book only); naive keeps them.
    fn evaluate(&mut self, time: f64) {
        let desired = self.desired();
        for side in [Side::Bid, Side::Ask] {
            let i = side_idx(side);
            let has = self.order(side).is_some();
            let cancel_strand = self.stranded(side)
                && matches!(self.strategy, Strategy::LocallyOptimal { .. });
            let want = desired[i] && self.inventory_allows(side);
            if has && (!want || cancel_strand) && !self.pending_cancel[i] {
                self.pending_cancel[i] = true;
                self.pending.push(Pending {
                    effect_time: time + self.config.latency_rt,
                    action: Action::Cancel { side },
                });
            }
            if !has && want && !self.pending_place[i] {
                self.pending_place[i] = true;
                self.pending.push(Pending {
                    effect_time: time + self.config.latency_rt,
                    action: Action::Place { side, decision_queue: self.queue(side) },
                });
            }
        }
    }

    /// Apply pending actions whose latency has elapsed.
    fn activate(&mut self, now: f64) {
        loop {
            // Earliest pending action due by `now` (stable under ties).
            let idx = self
                .pending
                .iter()
                .enumerate()
                .filter(|(_, p)| p.effect_time <= now)
                .min_by(|a, b| a.1.effect_time.partial_cmp(&b.1.effect_time).unwrap())
                .map(|(i, _)| i);
            let Some(idx) = idx else { break };
            let p = self.pending.remove(idx);
            match p.action {
                Action::Place { side, decision_queue } => {
                    self.pending_place[side_idx(side)] = false;
                    if self.order(side).is_some() || !self.inventory_allows(side) {
                        continue;
                    }
                    // Join the end of the queue at the current best.
                    let queue = self.queue(side);
                    let level = self.best(side);
                    *self.order(side) = Some(MakerOrder { level, position_ahead: queue });
                    self.ledger.placements += 1;
                    if queue <= decision_queue {
                        self.ledger.favorable_entries += 1;
                    }
                }
                Action::Cancel { side } => {
                    self.pending_cancel[side_idx(side)] = false;
                    *self.order(side) = None;
                }
            }
        }
    }

    /// Apply one data event to the standing orders (R1-R4).
    fn on_event(&mut self, ev: &TrackedEvent) {
        // Track the data book first.
        self.bid_px = ev.bid_px;
        self.ask_px = ev.bid_px + 1;
        let pre = match ev.side {
            Side::Bid => ev.pre_bid,
            Side::Ask => ev.pre_ask,
        };
        let post = match ev.side {
            Side::Bid => ev.post_bid,
            Side::Ask => ev.post_ask,
        };
        self.bid_qty = ev.post_bid;
        self.ask_qty = ev.post_ask;

        let side = ev.side;
        let Some(order) = *self.order(side) else { return };
        // The maker's order interacts only at its own level. A stranded
        // order resumes matching when the price comes back through it; its
        // remembered position cannot exceed the rebuilt queue.
        let level = match side {
            Side::Bid => ev.bid_px,
            Side::Ask => ev.bid_px + 1,
        };
        if order.level != level {
            return;
        }
        let order = {
            let o = self.order(side).as_mut().unwrap();
            o.position_ahead = o.position_ahead.min(pre);
            *o
        };
        match ev.kind {
            crate::book::EventKind::Limit => {
                // Arrivals join behind the maker.
            }
            crate::book::EventKind::Cancel => {
                // R1: position from the tail ~ capped exponential.
                let u: f64 = self.rng.random();
                let depth_lots = -(1.0 - u).ln() / self.config.cancel_law_rate;
                let depth = (depth_lots * LOT_CONTRACTS as f64).min(pre as f64);
                let behind = pre.saturating_sub(order.position_ahead) as f64;
                if depth > behind {
                    let o = self.order(side).as_mut().unwrap();
                    o.position_ahead = o.position_ahead.saturating_sub(ev.size_contracts);
                }
            }
            crate::book::EventKind::Market => {
                let clears = post == 0;
                if clears || order.position_ahead < ev.size_contracts {
                    // R2/R3: filled one lot at the order's level.
                    self.record_fill(ev.time, side, order.level, LOT_CONTRACTS);
                    *self.order(side) = None;
                    // R4: the book already equals the data snapshot; the
                    // maker's order is simply gone.
                } else {
                    let o = self.order(side).as_mut().unwrap();
                    o.position_ahead -= ev.size_contracts;
                }
            }
        }
    }

    fn close_at_touch(&mut self, time: f64) {
        let inv = self.ledger.inventory;
        if inv > 0 {
            self.record_fill(time, Side::Ask, self.bid_px, inv as u32 * LOT_CONTRACTS);
        } else if inv < 0 {
            self.record_fill(time, Side::Bid, self.ask_px, (-inv) as u32 * LOT_CONTRACTS);
        }
        self.mark_pnl(time);
    }
}

/// Replay one day of data under a strategy.
pub fn replay_day(
    records: &[StreamRecord],
    config: &BacktestConfig,
    strategy: Strategy<'_>,
) -> BacktestLedger {
    let rep = replay(records);
    let mut engine = Engine {
        config,
        strategy,
        rng: substream(config.seed, "backtest.cancel-position"),
        bid_order: None,
        ask_order: None,
        pending: Vec::new(),
        pending_place: [false; 2],
        pending_cancel: [false; 2],
        ledger: BacktestLedger { quality: rep.quality.clone(), ..Default::default() },
        bid_px: 0,
        ask_px: 1,
        bid_qty: 0,
        ask_qty: 0,
    };
    let mut last_time = 0.0;
    for ev in &rep.events {
        engine.activate(ev.time);
        if ev.role == EventRole::Skipped {
            // Resync only.
            engine.bid_px = ev.bid_px;
            engine.ask_px = ev.bid_px + 1;
            engine.bid_qty = ev.post_bid;
            engine.ask_qty = ev.post_ask;
            continue;
        }
        engine.on_event(ev);
        engine.evaluate(ev.time);
        last_time = ev.time;
        // Continuous accounting identity: cash always equals the sum of
        // fill cash-flows, so pnl = cash + inventory * mid by definition
        // of mark_pnl; audit the cash reconstruction as we go.
        debug_assert!({
            let cash_from_fills: f64 = engine
                .ledger
                .fills
                .iter()
                .map(|f| {
                    let notional =
                        f.price_ticks as f64 * engine.config.tick_size * f.qty_contracts as f64;
                    match f.side {
                        Side::Bid => -notional,
                        Side::Ask => notional,
                    }
                })
                .sum();
            (cash_from_fills - engine.ledger.cash).abs() < 1e-9
        });
    }
    engine.close_at_touch(last_time);
    engine.ledger
}

/// Recompute the accounting identity of a finished ledger: cash equals
/// the sum of fill cash-flows and pnl marks it plus inventory at mid.
pub fn audit_ledger(ledger: &BacktestLedger, tick_size: f64, final_mid: f64) -> bool {
    let cash: f64 = ledger
        .fills
        .iter()
        .map(|f| {
            let notional = f.price_ticks as f64 * tick_size * f.qty_contracts as f64;
            match f.side {
                Side::Bid => -notional,
                Side::Ask => notional,
            }
        })
        .sum();
    (cash - ledger.cash).abs() < 1e-6
        && (ledger.pnl - (cash + ledger.inventory as f64 * LOT_CONTRACTS as f64 * final_mid)).abs()
            < 1e-6
}

/// Per-strategy aggregate over a set of days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub name: String,
    pub days: usize,
    pub mean_pnl: f64,
    pub se_pnl: f64,
    pub total_pnl: f64,
    pub total_turnover: f64,
    /// 1e4 * pnl / turnover; NaN when nothing traded.
    pub profitability_bp: f64,
    pub fills: u64,
    pub per_day_pnl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub strategies: Vec<StrategyReport>,
}

pub fn summarize(name: &str, ledgers: &[BacktestLedger]) -> StrategyReport {
    let n = ledgers.len();
    let pnls: Vec<f64> = ledgers.iter().map(|l| l.pnl).collect();
    let mean = pnls.iter().sum::<f64>() / n.max(1) as f64;
    let var = if n > 1 {
        pnls.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let total_pnl: f64 = pnls.iter().sum();
    let total_turnover: f64 = ledgers.iter().map(|l| l.turnover).sum();
    StrategyReport {
        name: name.to_string(),
        days: n,
        mean_pnl: mean,
        se_pnl: (var / n.max(1) as f64).sqrt(),
        total_pnl,
        total_turnover,
        profitability_bp: if total_turnover > 0.0 { 1e4 * total_pnl / total_turnover } else { f64::NAN },
        fills: ledgers.iter().map(|l| l.fills.len() as u64).sum(),
        per_day_pnl: pnls,
    }
}

/// Run the locally-optimal strategy and naive thresholds over a set of
/// days (days processed in parallel, merged in order).
pub fn run_strategy_suite(
    days: &[Vec<StreamRecord>],
    values: &PairSolution,
    config: &BacktestConfig,
    naive_qmins: &[u32],
    parallel: bool,
) -> SuiteReport {
    let mut strategies = Vec::new();
    let run = |strategy: Strategy<'_>| -> Vec<BacktestLedger> {
        exec::map_indexed(
            days.len(),
            |i| {
                let cfg = BacktestConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
                replay_day(&days[i], &cfg, strategy)
            },
            parallel,
        )
    };
    let ledgers = run(Strategy::LocallyOptimal { values });
    strategies.push(summarize("locally-optimal", &ledgers));
    for &q in naive_qmins {
        let ledgers = run(Strategy::Naive { q_min_contracts: q });
        strategies.push(summarize(&format!("naive-{q}"), &ledgers));
    }
    SuiteReport { strategies }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::EventKind;

    fn rec(
        ts_ms: u64,
        kind: EventKind,
        side: Side,
        price: i64,
        size: u32,
        bb: u32,
        ba: u32,
    ) -> StreamRecord {
        StreamRecord {
            ts_ns: ts_ms * 1_000_000,
            kind,
            side,
            price_ticks: price,
            size_contracts: size,
            bb_qty: bb,
            ba_qty: ba,
        }
    }

    /// A quiet day: both queues build up, then market orders hit the ask.
    fn golden_day() -> Vec<StreamRecord> {
        let mut out = vec![
            rec(1, EventKind::Limit, Side::Bid, 100, 100, 100, 0),
            rec(2, EventKind::Limit, Side::Ask, 101, 80, 100, 80),
            rec(500, EventKind::Limit, Side::Bid, 100, 50, 150, 80),
            rec(900, EventKind::Limit, Side::Ask, 101, 40, 150, 120),
        ];
        // Market orders chewing the ask without clearing it.
        let mut ba = 120u32;
        for i in 0..10u64 {
            ba -= 10;
            out.push(rec(1000 + i * 300, EventKind::Market, Side::Ask, 101, 10, 150, ba));
        }
        // Refill and a final bid-side trade.
        out.push(rec(4200, EventKind::Limit, Side::Ask, 101, 100, 150, ba + 100));
        out.push(rec(4500, EventKind::Market, Side::Bid, 100, 30, 120, ba + 100));
        out
    }

    #[test]
    fn r2_fill_iff_position_ahead_less_than_market_size() {
        // Maker joins the ask with 20 contracts ahead, then markets of 30
        // (fill) vs a fresh maker with 40 ahead against 30 (no fill).
        let records = vec![
            rec(1, EventKind::Limit, Side::Bid, 100, 100, 100, 0),
            rec(2, EventKind::Limit, Side::Ask, 101, 20, 100, 20),
            // Maker placed after this event (naive, threshold 0).
            rec(1000, EventKind::Market, Side::Ask, 101, 30, 100, 0),
        ];
        // pre-ask = 20 -> position_ahead = 20 < 30: filled even though the
        // market also clears (R3 would apply anyway).
        let cfg = BacktestConfig::default();
        let ledger = replay_day(&records, &cfg, Strategy::Naive { q_min_contracts: 0 });
        assert_eq!(ledger.fills.iter().filter(|f| f.side == Side::Ask).count(), 1);

        // Non-clearing market smaller than the queue ahead: no fill.
        let records = vec![
            rec(1, EventKind::Limit, Side::Bid, 100, 100, 100, 0),
            rec(2, EventKind::Limit, Side::Ask, 101, 40, 100, 40),
            rec(1000, EventKind::Market, Side::Ask, 101, 30, 100, 10),
        ];
        let ledger = replay_day(&records, &cfg, Strategy::Naive { q_min_contracts: 0 });
        assert_eq!(ledger.fills.iter().filter(|f| f.side == Side::Ask).count(), 0);
    }

    #[test]
    fn r3_clearing_market_fills_bottom_of_queue() {
        let records = vec![
            rec(1, EventKind::Limit, Side::Bid, 100, 100, 100, 0),
            rec(2, EventKind::Limit, Side::Ask, 101, 40, 100, 40),
            // Clears the limit: the maker, last in queue, is filled (R3).
            rec(1000, EventKind::Market, Side::Ask, 101, 40, 100, 0),
        ];
        let cfg = BacktestConfig::default();
        let ledger = replay_day(&records, &cfg, Strategy::Naive { q_min_contracts: 0 });
        assert_eq!(ledger.fills.iter().filter(|f| f.side == Side::Ask && f.price_ticks == 101).count(), 1);
    }

    #[test]
    fn r1_cancellations_pass_the_maker_per_drawn_position() {
        // The maker joins at 40 ahead, then 20 contracts arrive behind it.
        // A cancel of 20 drawn near the tail (huge rate) lands behind and
        // leaves the position at 40; drawn deep (tiny rate, capped at the
        // queue) it lands ahead and advances the maker to 20, so a
        // non-clearing market of 25 fills only in the second case.
        let records = vec![
            rec(1, EventKind::Limit, Side::Bid, 100, 100, 100, 0),
            rec(2, EventKind::Limit, Side::Ask, 101, 40, 100, 40),
            rec(500, EventKind::Limit, Side::Ask, 101, 20, 100, 60),
            rec(1000, EventKind::Cancel, Side::Ask, 101, 20, 100, 40),
            rec(2000, EventKind::Market, Side::Ask, 101, 25, 100, 15),
        ];
        let behind = BacktestConfig { cancel_law_rate: 1e6, ..Default::default() };
        let l_behind = replay_day(&records, &behind, Strategy::Naive { q_min_contracts: 0 });
        assert_eq!(
            l_behind.fills.iter().filter(|f| f.side == Side::Ask).count(),
            0,
            "cancel behind: still 40 ahead, 25 < 40"
        );
        let ahead = BacktestConfig { cancel_law_rate: 1e-9, ..Default::default() };
        let l_ahead = replay_day(&records, &ahead, Strategy::Naive { q_min_contracts: 0 });
        assert_eq!(
            l_ahead.fills.iter().filter(|f| f.side == Side::Ask).count(),
            1,
            "cancel ahead: 20 ahead, filled by 25"
        );
    }

    #[test]
    fn accounting_identity_and_round_trip() {
        // One buy at 100, one sell at 101, flat close: pnl = 1 tick * 10
        // contracts * tick_size.
        let records = vec![
            rec(1, EventKind::Limit, Side::Bid, 100, 50, 50, 0),
            rec(2, EventKind::Limit, Side::Ask, 101, 50, 50, 50),
            // Clear the bid (fills our bid), then refill.
            rec(1000, EventKind::Market, Side::Bid, 100, 50, 0, 50),
            rec(1001, EventKind::Limit, Side::Bid, 100, 60, 60, 50),
            // Clear the ask (fills our ask).
            rec(2000, EventKind::Market, Side::Ask, 101, 50, 60, 0),
            rec(2001, EventKind::Limit, Side::Ask, 101, 60, 60, 60),
        ];
        let cfg = BacktestConfig::default();
        let ledger = replay_day(&records, &cfg, Strategy::Naive { q_min_contracts: 0 });
        let maker_fills: Vec<&Fill> =
            ledger.fills.iter().filter(|f| f.qty_contracts == LOT_CONTRACTS).collect();
        assert_eq!(maker_fills.len(), 2);
        assert_eq!(ledger.inventory, 0);
        assert!((ledger.pnl - 10.0).abs() < 1e-9, "pnl={}", ledger.pnl);
        assert!((ledger.turnover - (100.0 + 101.0) * 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_fills_means_zero_pnl_and_nan_profitability() {
        let records = vec![
            rec(1, EventKind::Limit, Side::Bid, 100, 50, 50, 0),
            rec(2, EventKind::Limit, Side::Ask, 101, 50, 50, 50),
        ];
        let cfg = BacktestConfig::default();
        let ledger = replay_day(&records, &cfg, Strategy::Naive { q_min_contracts: 10_000 });
        assert!(ledger.fills.is_empty());
        assert_eq!(ledger.pnl, 0.0);
        let report = summarize("naive", &[ledger]);
        assert!(report.profitability_bp.is_nan());
    }

    #[test]
    fn deterministic_ledgers() {
        let day = golden_day();
        let cfg = BacktestConfig { seed: 9, ..Default::default() };
        let a = replay_day(&day, &cfg, Strategy::Naive { q_min_contracts: 0 });
        let b = replay_day(&day, &cfg, Strategy::Naive { q_min_contracts: 0 });
        assert_eq!(a, b);
    }

    #[test]
    fn latency_monotonicity_on_golden_day() {
        let day = golden_day();
        let mut favorable = Vec::new();
        for latency in [100e-6, 1e-3, 10e-3, 100e-3] {
            let cfg = BacktestConfig { latency_rt: latency, seed: 5, ..Default::default() };
            let ledger = replay_day(&day, &cfg, Strategy::Naive { q_min_contracts: 0 });
            favorable.push(ledger.favorable_entries);
        }
        for w in favorable.windows(2) {
            assert!(w[1] <= w[0], "favorable entries grew with latency: {favorable:?}");
        }
    }
}
