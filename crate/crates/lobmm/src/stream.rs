//! Event-stream file format: ingestion, emission, and book reconstruction.
//!
//! One record per line, comma-separated, header required:
//!
//! ```text
//! ts_ns,kind,side,price_ticks,size_contracts,bb_qty,ba_qty
//! ```
//!
//! `kind` is `L|C|M`, `side` is `B|A`, quantities are contracts, and
//! `bb_qty`/`ba_qty` are the best-bid/ask quantities immediately *after*
//! the event. Records must be non-decreasing in `ts_ns`.
//!
//! [`replay`] reconstructs per-event book states from a record sequence,
//! classifies removals and establishing orders, and reports data-quality
//! counters. Both calibration and the backtester consume its output.

use crate::book::{EstablishKind, EventKind, RemovalKind, Side};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const STREAM_HEADER: &str = "ts_ns,kind,side,price_ticks,size_contracts,bb_qty,ba_qty";

/// Session gaps longer than this are treated as halts and excluded from
/// occupation times.
pub const GAP_THRESHOLD_S: f64 = 10.0;

#[derive(Error, Debug)]
pub enum StreamError {
    #[error("io error reading stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("line 1: bad header, expected `{STREAM_HEADER}`")]
    BadHeader,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: timestamps must be non-decreasing")]
    Unordered { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub ts_ns: u64,
    pub kind: EventKind,
    pub side: Side,
    pub price_ticks: i64,
    pub size_contracts: u32,
    /// Best bid quantity after the event, contracts.
    pub bb_qty: u32,
    /// Best ask quantity after the event, contracts.
    pub ba_qty: u32,
}

impl StreamRecord {
    pub fn time(&self) -> f64 {
        self.ts_ns as f64 * 1e-9
    }
}

fn kind_code(k: EventKind) -> &'static str {
    match k {
        EventKind::Limit => "L",
        EventKind::Cancel => "C",
        EventKind::Market => "M",
    }
}

fn side_code(s: Side) -> &'static str {
    match s {
        Side::Bid => "B",
        Side::Ask => "A",
    }
}

/// Parse an event stream. Errors carry 1-based line numbers.
pub fn read_stream<R: BufRead>(reader: R) -> Result<Vec<StreamRecord>, StreamError> {
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == STREAM_HEADER => {}
        Some(Ok(_)) | None => return Err(StreamError::BadHeader),
        Some(Err(e)) => return Err(StreamError::Io(e)),
    }
    let mut out = Vec::new();
    let mut last_ts = 0u64;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse = |line_no: usize, line: &str| -> Result<StreamRecord, String> {
            let mut f = line.split(',');
            let mut next = |name: &str| f.next().ok_or_else(|| format!("missing field {name}"));
            let ts_ns = next("ts_ns")?.trim().parse::<u64>().map_err(|e| format!("ts_ns: {e}"))?;
            let kind = match next("kind")?.trim() {
                "L" => EventKind::Limit,
                "C" => EventKind::Cancel,
                "M" => EventKind::Market,
                other => return Err(format!("kind must be L|C|M, got `{other}`")),
            };
            let side = match next("side")?.trim() {
                "B" => Side::Bid,
                "A" => Side::Ask,
                other => return Err(format!("side must be B|A, got `{other}`")),
            };
            let price_ticks =
                next("price_ticks")?.trim().parse::<i64>().map_err(|e| format!("price_ticks: {e}"))?;
            let size_contracts = next("size_contracts")?
                .trim()
                .parse::<u32>()
                .map_err(|e| format!("size_contracts: {e}"))?;
            let bb_qty = next("bb_qty")?.trim().parse::<u32>().map_err(|e| format!("bb_qty: {e}"))?;
            let ba_qty = next("ba_qty")?.trim().parse::<u32>().map_err(|e| format!("ba_qty: {e}"))?;
            if f.next().is_some() {
                return Err("too many fields".to_string());
            }
            if size_contracts == 0 {
                return Err("size_contracts must be >= 1".to_string());
            }
            let _ = line_no;
            Ok(StreamRecord { ts_ns, kind, side, price_ticks, size_contracts, bb_qty, ba_qty })
        };
        let rec = parse(line_no, line).map_err(|msg| StreamError::Parse { line: line_no, msg })?;
        if rec.ts_ns < last_ts {
            return Err(StreamError::Unordered { line: line_no });
        }
        last_ts = rec.ts_ns;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_stream_file(path: &Path) -> Result<Vec<StreamRecord>, StreamError> {
    let file = std::fs::File::open(path)?;
    read_stream(std::io::BufReader::new(file))
}

pub fn write_stream<W: Write>(mut w: W, records: &[StreamRecord]) -> std::io::Result<()> {
    writeln!(w, "{STREAM_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.ts_ns,
            kind_code(r.kind),
            side_code(r.side),
            r.price_ticks,
            r.size_contracts,
            r.bb_qty,
            r.ba_qty
        )?;
    }
    Ok(())
}

pub fn write_stream_file(path: &Path, records: &[StreamRecord]) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_stream(std::io::BufWriter::new(file), records)
}

/// Classification of a replayed record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventRole {
    /// Ordinary flow at the side's best limit.
    Regular,
    /// Emptied its side; the book is awaiting an establishing order.
    Removal { kind: RemovalKind },
    /// Limit order that closed the spread after a removal.
    Establishment { kind: EstablishKind },
    /// Unclassifiable record (e.g. limit at an off-book price); the book
    /// state is resynced from the record's snapshot.
    Skipped,
}

/// One replayed record with reconstructed before/after book state.
#[derive(Debug, Clone, Copy)]
pub struct TrackedEvent {
    pub idx: usize,
    pub time: f64,
    pub kind: EventKind,
    pub side: Side,
    pub size_contracts: u32,
    /// Contracts standing before the event.
    pub pre_bid: u32,
    pub pre_ask: u32,
    /// Contracts standing after the event (from the data snapshot).
    pub post_bid: u32,
    pub post_ask: u32,
    /// Bid price level after the event, ticks.
    pub bid_px: i64,
    /// Seconds since the previous record (0 for the first).
    pub dt_prev: f64,
    /// Same interval in integer nanoseconds (exact accumulation).
    pub dt_prev_ns: u64,
    /// The interval since the previous record crosses a session gap.
    pub gap: bool,
    /// Which side was empty before this event, if any.
    pub awaiting_before: Option<Side>,
    pub role: EventRole,
    /// Reconstruction disagreed with the record's snapshot and was resynced.
    pub desync: bool,
}

/// A matched (removal, establishment) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegenObservation {
    pub o_r: RemovalKind,
    /// Size of the removal order, contracts.
    pub q_r_contracts: u32,
    pub o_e: EstablishKind,
    /// Size of the establishing order, contracts.
    pub q_e_contracts: u32,
    /// Establishment delay, seconds.
    pub dt: f64,
    /// Surviving-side best queue just before the removal, contracts.
    pub q_surv_at_removal: u32,
    /// Surviving-side best queue just before the establishment, contracts.
    pub q_surv_at_estab: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayQuality {
    pub records: usize,
    pub desyncs: usize,
    pub skipped: usize,
    /// Removals left unmatched at end of stream or displaced by a new removal.
    pub unmatched_removals: usize,
    pub gaps: usize,
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub events: Vec<TrackedEvent>,
    pub pairs: Vec<RegenObservation>,
    pub quality: ReplayQuality,
}

struct AwaitCtx {
    side: Side,
    o_r: RemovalKind,
    q_r_contracts: u32,
    t_r: f64,
    q_surv_at_removal: u32,
    /// Price level of the emptied limit.
    level: i64,
}

/// Reconstruct book states from a record sequence.
///
/// Quantities are taken from the data snapshots whenever the incremental
/// reconstruction disagrees (counted as desyncs). Price levels are derived
/// from event prices under the 1-tick-spread convention.
pub fn replay(records: &[StreamRecord]) -> Replay {
    let mut events = Vec::with_capacity(records.len());
    let mut pairs = Vec::new();
    let mut quality = ReplayQuality { records: records.len(), ..Default::default() };

    let mut bid_qty = 0u32;
    let mut ask_qty = 0u32;
    let mut bid_px = 0i64;
    let mut prices_known = false;
    let mut last_ts: Option<u64> = None;
    let mut awaiting: Option<AwaitCtx> = None;

    for (idx, r) in records.iter().enumerate() {
        let time = r.time();
        let dt_prev_ns = last_ts.map(|t| r.ts_ns - t).unwrap_or(0);
        let dt_prev = dt_prev_ns as f64 * 1e-9;
        let gap = dt_prev > GAP_THRESHOLD_S;
        if gap {
            quality.gaps += 1;
        }
        last_ts = Some(r.ts_ns);

        if !prices_known {
            bid_px = match r.side {
                Side::Bid => r.price_ticks,
                Side::Ask => r.price_ticks - 1,
            };
            prices_known = true;
            // Infer the pre-state of the very first record from its effect.
            bid_qty = r.bb_qty;
            ask_qty = r.ba_qty;
            match (r.kind, r.side) {
                (EventKind::Limit, Side::Bid) => bid_qty = r.bb_qty.saturating_sub(r.size_contracts),
                (EventKind::Limit, Side::Ask) => ask_qty = r.ba_qty.saturating_sub(r.size_contracts),
                (_, Side::Bid) => bid_qty = r.bb_qty + r.size_contracts,
                (_, Side::Ask) => ask_qty = r.ba_qty + r.size_contracts,
            }
        }

        let (pre_bid, pre_ask) = (bid_qty, ask_qty);
        let awaiting_before = awaiting.as_ref().map(|a| a.side);
        let ask_px = bid_px + 1;
        let mut role = EventRole::Regular;
        let mut desync = false;

        // Classify and update prices.
        match r.kind {
            EventKind::Limit => {
                if let Some(ctx) = awaiting.take() {
                    if r.side == ctx.side && r.price_ticks == ctx.level {
                        role = EventRole::Establishment { kind: EstablishKind::Revert };
                        pairs.push(RegenObservation {
                            o_r: ctx.o_r,
                            q_r_contracts: ctx.q_r_contracts,
                            o_e: EstablishKind::Revert,
                            q_e_contracts: r.size_contracts,
                            dt: time - ctx.t_r,
                            q_surv_at_removal: ctx.q_surv_at_removal,
                            q_surv_at_estab: if ctx.side == Side::Ask { pre_bid } else { pre_ask },
                        });
                    } else if r.side != ctx.side && r.price_ticks == ctx.level {
                        role = EventRole::Establishment { kind: EstablishKind::Follow };
                        // Price moves one tick in the removal direction.
                        bid_px = match ctx.side {
                            Side::Ask => ctx.level,
                            Side::Bid => ctx.level - 1,
                        };
                        pairs.push(RegenObservation {
                            o_r: ctx.o_r,
                            q_r_contracts: ctx.q_r_contracts,
                            o_e: EstablishKind::Follow,
                            q_e_contracts: r.size_contracts,
                            dt: time - ctx.t_r,
                            q_surv_at_removal: ctx.q_surv_at_removal,
                            q_surv_at_estab: if ctx.side == Side::Ask { pre_bid } else { pre_ask },
                        });
                    } else {
                        // Limit elsewhere while the book has a hole: keep waiting.
                        let expected = match r.side {
                            Side::Bid => bid_px,
                            Side::Ask => ask_px,
                        };
                        if r.price_ticks != expected {
                            role = EventRole::Skipped;
                            quality.skipped += 1;
                        }
                        awaiting = Some(ctx);
                    }
                } else {
                    let expected = match r.side {
                        Side::Bid => bid_px,
                        Side::Ask => ask_px,
                    };
                    if r.price_ticks != expected {
                        // A spread-closing limit without a tracked removal, or
                        // an off-best placement: not classifiable at depth 1.
                        role = EventRole::Skipped;
                        quality.skipped += 1;
                        bid_px = match r.side {
                            Side::Bid => r.price_ticks,
                            Side::Ask => r.price_ticks - 1,
                        };
                    }
                }
            }
            EventKind::Cancel | EventKind::Market => {
                let post = match r.side {
                    Side::Bid => r.bb_qty,
                    Side::Ask => r.ba_qty,
                };
                if post == 0 {
                    let kind = RemovalKind::try_from(r.kind).expect("removal kind");
                    role = EventRole::Removal { kind };
                    if awaiting.take().is_some() {
                        quality.unmatched_removals += 1;
                    }
                    awaiting = Some(AwaitCtx {
                        side: r.side,
                        o_r: kind,
                        q_r_contracts: r.size_contracts,
                        t_r: time,
                        q_surv_at_removal: match r.side {
                            Side::Bid => pre_ask,
                            Side::Ask => pre_bid,
                        },
                        level: match r.side {
                            Side::Bid => bid_px,
                            Side::Ask => ask_px,
                        },
                    });
                }
            }
        }

        // Reconcile quantities with the snapshot.
        let mut expect_bid = pre_bid;
        let mut expect_ask = pre_ask;
        {
            let q = match r.side {
                Side::Bid => &mut expect_bid,
                Side::Ask => &mut expect_ask,
            };
            match r.kind {
                EventKind::Limit => *q = q.saturating_add(r.size_contracts),
                _ => *q = q.saturating_sub(r.size_contracts),
            }
        }
        if role == EventRole::Skipped
            || matches!(role, EventRole::Establishment { kind: EstablishKind::Follow })
        {
            // Establishments reshape both sides; trust the snapshot.
        } else if expect_bid.abs_diff(r.bb_qty) >= crate::book::LOT_CONTRACTS
            || expect_ask.abs_diff(r.ba_qty) >= crate::book::LOT_CONTRACTS
        {
            // Mismatch beyond one bin width: resync from the snapshot.
            desync = true;
            quality.desyncs += 1;
        }
        bid_qty = r.bb_qty;
        ask_qty = r.ba_qty;

        events.push(TrackedEvent {
            idx,
            time,
            kind: r.kind,
            side: r.side,
            size_contracts: r.size_contracts,
            pre_bid,
            pre_ask,
            post_bid: r.bb_qty,
            post_ask: r.ba_qty,
            bid_px,
            dt_prev,
            dt_prev_ns,
            gap,
            awaiting_before,
            role,
            desync,
        });
    }
    if awaiting.is_some() {
        quality.unmatched_removals += 1;
    }
    Replay { events, pairs, quality }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(
        ts_ns: u64,
        kind: EventKind,
        side: Side,
        price: i64,
        size: u32,
        bb: u32,
        ba: u32,
    ) -> StreamRecord {
        StreamRecord { ts_ns, kind, side, price_ticks: price, size_contracts: size, bb_qty: bb, ba_qty: ba }
    }

    #[test]
    fn header_is_required() {
        let res = read_stream("nope\n1,L,B,100,10,10,0".as_bytes());
        assert!(matches!(res, Err(StreamError::BadHeader)));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = format!("{STREAM_HEADER}\n1000,L,B,100,10,10,20\n2000,X,B,100,10,10,20\n");
        match read_stream(text.as_bytes()) {
            Err(StreamError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unordered_stream_rejected() {
        let text = format!("{STREAM_HEADER}\n2000,L,B,100,10,10,20\n1000,L,B,100,10,20,20\n");
        match read_stream(text.as_bytes()) {
            Err(StreamError::Unordered { line }) => assert_eq!(line, 3),
            other => panic!("expected unordered error, got {other:?}"),
        }
    }

    #[test]
    fn replay_matches_market_removal_and_revert() {
        // Bid at 100 (30 contracts), ask at 101 (20). Market clears the ask,
        // then a new ask limit reverts at 101.
        let records = vec![
            rec(1_000_000_000, EventKind::Limit, Side::Bid, 100, 10, 30, 20),
            rec(2_000_000_000, EventKind::Market, Side::Ask, 101, 20, 30, 0),
            rec(2_000_200_000, EventKind::Limit, Side::Ask, 101, 40, 30, 40),
        ];
        let rep = replay(&records);
        assert_eq!(rep.quality.desyncs, 0);
        assert_eq!(rep.pairs.len(), 1);
        let p = rep.pairs[0];
        assert_eq!(p.o_r, RemovalKind::Market);
        assert_eq!(p.q_r_contracts, 20);
        assert_eq!(p.o_e, EstablishKind::Revert);
        assert_eq!(p.q_e_contracts, 40);
        assert!((p.dt - 2e-4).abs() < 1e-9);
        assert_eq!(p.q_surv_at_removal, 30);
        assert_eq!(rep.events[1].role, EventRole::Removal { kind: RemovalKind::Market });
    }

    #[test]
    fn replay_matches_follow_and_price_shift() {
        let records = vec![
            rec(1_000_000_000, EventKind::Limit, Side::Bid, 100, 10, 30, 20),
            rec(2_000_000_000, EventKind::Market, Side::Ask, 101, 20, 30, 0),
            // New bid at the old ask price: price moved up one tick; the
            // snapshot reveals the queue standing at 102.
            rec(2_000_300_000, EventKind::Limit, Side::Bid, 101, 50, 50, 70),
        ];
        let rep = replay(&records);
        assert_eq!(rep.pairs.len(), 1);
        assert_eq!(rep.pairs[0].o_e, EstablishKind::Follow);
        assert_eq!(rep.events[2].bid_px, 101);
        assert_eq!(rep.events[2].post_ask, 70);
    }

    #[test]
    fn unmatched_removal_counted() {
        let records = vec![
            rec(1_000_000_000, EventKind::Limit, Side::Bid, 100, 10, 30, 20),
            rec(2_000_000_000, EventKind::Cancel, Side::Ask, 101, 20, 30, 0),
        ];
        let rep = replay(&records);
        assert_eq!(rep.pairs.len(), 0);
        assert_eq!(rep.quality.unmatched_removals, 1);
    }

    proptest! {
        #[test]
        fn stream_round_trip(records in proptest::collection::vec(
            (0u64..10_000_000_000, 0u8..3, proptest::bool::ANY, -100i64..100, 1u32..600, 0u32..600, 0u32..600),
            0..50,
        )) {
            let mut ts = 0u64;
            let records: Vec<StreamRecord> = records
                .into_iter()
                .map(|(dt, kind, side, price, size, bb, ba)| {
                    ts += dt;
                    StreamRecord {
                        ts_ns: ts,
                        kind: match kind { 0 => EventKind::Limit, 1 => EventKind::Cancel, _ => EventKind::Market },
                        side: if side { Side::Bid } else { Side::Ask },
                        price_ticks: price,
                        size_contracts: size,
                        bb_qty: bb,
                        ba_qty: ba,
                    }
                })
                .collect();
            let mut buf = Vec::new();
            write_stream(&mut buf, &records).unwrap();
            let back = read_stream(buf.as_slice()).unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
