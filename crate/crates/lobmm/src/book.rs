//! Canonical domain types for the two-limit order book.
//!
//! The book tracks the best bid and best ask only. Quantities are held in
//! lots (1 lot = 10 contracts) and capped at [`Q_MAX`] lots. The spread
//! between the tracked limits is identically one tick: the ask always sits
//! one tick above `p_ref`, the bid level. When one queue is emptied by a
//! cancellation or market order, the book is "awaiting establishment"
//! until the next limit order either reverts (refills the emptied level)
//! or follows (moves the price one tick in the removal direction).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum tracked queue size, in lots (500 contracts / 10-contract lot).
pub const Q_MAX: u32 = 50;

/// Contracts per lot.
pub const LOT_CONTRACTS: u32 = 10;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BookError {
    #[error("{kind:?} of {size} lots on {side:?} exceeds standing queue of {queue} lots")]
    OversizeRemoval {
        side: Side,
        kind: EventKind,
        size: u32,
        queue: u32,
    },
    #[error("event on {side:?} while awaiting establishment")]
    AwaitingEstablishment { side: Side },
    #[error("establishment applied but no queue is empty")]
    NotAwaitingEstablishment,
    #[error("event size must be at least 1 lot")]
    ZeroSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Limit,
    Cancel,
    Market,
}

impl EventKind {
    pub fn index(self) -> usize {
        match self {
            EventKind::Limit => 0,
            EventKind::Cancel => 1,
            EventKind::Market => 2,
        }
    }

    pub const ALL: [EventKind; 3] = [EventKind::Limit, EventKind::Cancel, EventKind::Market];
}

/// Order types that can empty a limit (the paper's O^r).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RemovalKind {
    Cancel,
    Market,
}

impl RemovalKind {
    pub fn index(self) -> usize {
        match self {
            RemovalKind::Cancel => 0,
            RemovalKind::Market => 1,
        }
    }

    pub const ALL: [RemovalKind; 2] = [RemovalKind::Cancel, RemovalKind::Market];
}

impl TryFrom<EventKind> for RemovalKind {
    type Error = ();
    fn try_from(k: EventKind) -> Result<Self, ()> {
        match k {
            EventKind::Cancel => Ok(RemovalKind::Cancel),
            EventKind::Market => Ok(RemovalKind::Market),
            EventKind::Limit => Err(()),
        }
    }
}

/// Direction of the limit order that closes the spread (the paper's O^e):
/// `Follow` moves the price in the removal direction, `Revert` restores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstablishKind {
    Follow,
    Revert,
}

impl EstablishKind {
    pub fn index(self) -> usize {
        match self {
            EstablishKind::Follow => 0,
            EstablishKind::Revert => 1,
        }
    }

    pub const ALL: [EstablishKind; 2] = [EstablishKind::Follow, EstablishKind::Revert];
}

/// A book event. Sizes are lots; market and cancel events must not exceed
/// the standing queue on their side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds since session start (ns resolution).
    pub time: f64,
    pub kind: EventKind,
    pub side: Side,
    /// Lots, >= 1.
    pub size: u32,
}

/// The limit order closing the spread after a removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstablishEvent {
    pub kind: EstablishKind,
    /// Size of the establishing order, lots >= 1.
    pub q_e: u32,
    /// Delay since the removal, seconds > 0.
    pub dt: f64,
}

/// Type and size of the last order that emptied a limit. Persists across
/// non-emptying events until the next emptying event replaces it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LastRemoval {
    pub kind: RemovalKind,
    /// Lots.
    pub q_r: u32,
}

/// Best-bid/ask book state. `p_ref` is the bid price level in ticks; the
/// ask level is `p_ref + 1` (1-tick spread between the tracked limits).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BookState {
    /// Best bid queue, lots.
    pub q_bid: u32,
    /// Best ask queue, lots.
    pub q_ask: u32,
    /// Bid price level index, ticks.
    pub p_ref: i64,
    pub last_removal: Option<LastRemoval>,
}

impl BookState {
    pub fn new(q_bid: u32, q_ask: u32, p_ref: i64) -> BookState {
        BookState {
            q_bid: q_bid.min(Q_MAX),
            q_ask: q_ask.min(Q_MAX),
            p_ref,
            last_removal: None,
        }
    }

    pub fn queue(&self, side: Side) -> u32 {
        match side {
            Side::Bid => self.q_bid,
            Side::Ask => self.q_ask,
        }
    }

    fn queue_mut(&mut self, side: Side) -> &mut u32 {
        match side {
            Side::Bid => &mut self.q_bid,
            Side::Ask => &mut self.q_ask,
        }
    }

    /// Bid price level, ticks.
    pub fn bid_level(&self) -> i64 {
        self.p_ref
    }

    /// Ask price level, ticks.
    pub fn ask_level(&self) -> i64 {
        self.p_ref + 1
    }

    /// The emptied side, if the book is awaiting an establishing order.
    pub fn awaiting(&self) -> Option<Side> {
        if self.q_bid == 0 {
            Some(Side::Bid)
        } else if self.q_ask == 0 {
            Some(Side::Ask)
        } else {
            None
        }
    }
}

/// Apply a limit / cancel / market event to the book.
///
/// Limit orders add to the side's queue (clipped at [`Q_MAX`], excess
/// discarded). Cancels and markets subtract; an event that empties its
/// side records the removal context and leaves the book awaiting
/// establishment. Oversize removals are rejected.
pub fn apply_event(state: &BookState, e: &Event) -> Result<BookState, BookError> {
    if e.size == 0 {
        return Err(BookError::ZeroSize);
    }
    if let Some(side) = state.awaiting() {
        return Err(BookError::AwaitingEstablishment { side });
    }
    let mut next = *state;
    match e.kind {
        EventKind::Limit => {
            let q = next.queue_mut(e.side);
            *q = (*q + e.size).min(Q_MAX);
        }
        EventKind::Cancel | EventKind::Market => {
            let q = next.queue_mut(e.side);
            if e.size > *q {
                return Err(BookError::OversizeRemoval {
                    side: e.side,
                    kind: e.kind,
                    size: e.size,
                    queue: *q,
                });
            }
            *q -= e.size;
            if *q == 0 {
                next.last_removal = Some(LastRemoval {
                    kind: RemovalKind::try_from(e.kind).expect("limit cannot remove"),
                    q_r: e.size,
                });
            }
        }
    }
    Ok(next)
}

/// Apply an establishing order to a book awaiting establishment.
///
/// `Revert` refills the emptied side with `q_e` at the old level. `Follow`
/// shifts the price one tick in the removal direction: the establishing
/// order of `q_e` lots becomes the new best queue of the *opposite* side
/// at the emptied side's old level, and the newly revealed queue on the
/// emptied side's new level holds `hidden_draw` lots (drawn by the caller
/// from the hidden-limit law).
pub fn apply_establishment(
    state: &BookState,
    est: &EstablishEvent,
    hidden_draw: u32,
) -> Result<BookState, BookError> {
    let side = state.awaiting().ok_or(BookError::NotAwaitingEstablishment)?;
    if est.q_e == 0 || (est.kind == EstablishKind::Follow && hidden_draw == 0) {
        return Err(BookError::ZeroSize);
    }
    let mut next = *state;
    let q_e = est.q_e.min(Q_MAX);
    let hidden = hidden_draw.min(Q_MAX);
    match (est.kind, side) {
        (EstablishKind::Revert, s) => {
            *next.queue_mut(s) = q_e;
        }
        (EstablishKind::Follow, Side::Ask) => {
            // Price up: new bid at the old ask level, hidden queue revealed above.
            next.p_ref += 1;
            next.q_bid = q_e;
            next.q_ask = hidden;
        }
        (EstablishKind::Follow, Side::Bid) => {
            // Price down: new ask at the old bid level, hidden queue revealed below.
            next.p_ref -= 1;
            next.q_ask = q_e;
            next.q_bid = hidden;
        }
    }
    Ok(next)
}

/// Size bin of a raw contract count: bin `q` covers `[10(q-1), 10q)`
/// contracts, so `bin_of(c) = floor(c/10) + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SizeBin(pub u32);

impl SizeBin {
    pub fn of_contracts(contracts: u32) -> SizeBin {
        SizeBin(contracts / LOT_CONTRACTS + 1)
    }

    /// Bin clamped into `1..=q_max`, for indexing per-queue-bin tables.
    pub fn of_contracts_clamped(contracts: u32, q_max: u32) -> SizeBin {
        SizeBin((contracts / LOT_CONTRACTS + 1).min(q_max))
    }

    pub fn index(self) -> u32 {
        self.0
    }
}

/// Table bin of a queue holding `lots` lots (internal unit): the bin index
/// is the lot count itself, clamped into `1..=q_max`.
pub fn queue_bin(lots: u32, q_max: u32) -> u32 {
    lots.clamp(1, q_max)
}

/// Conversion of a raw contract size to the internal lot/bin unit.
pub fn contracts_to_lots(contracts: u32) -> u32 {
    SizeBin::of_contracts(contracts).0
}

/// Representative contract count of bin `q` (its midpoint), used when
/// emitting internally quantized quantities: `bin_of` maps it back to `q`.
pub fn lots_to_contracts_repr(lots: u32) -> u32 {
    if lots == 0 {
        0
    } else {
        lots * LOT_CONTRACTS - LOT_CONTRACTS / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book(q_bid: u32, q_ask: u32) -> BookState {
        BookState::new(q_bid, q_ask, 1000)
    }

    #[test]
    fn market_full_depletion_records_removal() {
        let s = book(3, 5);
        let e = Event { time: 0.0, kind: EventKind::Market, side: Side::Ask, size: 5 };
        let next = apply_event(&s, &e).unwrap();
        assert_eq!(next.q_ask, 0);
        assert_eq!(next.last_removal, Some(LastRemoval { kind: RemovalKind::Market, q_r: 5 }));
        assert_eq!(next.awaiting(), Some(Side::Ask));
    }

    #[test]
    fn limit_adds_to_queue() {
        let s = book(3, 5);
        let e = Event { time: 0.0, kind: EventKind::Limit, side: Side::Bid, size: 2 };
        let next = apply_event(&s, &e).unwrap();
        assert_eq!((next.q_bid, next.q_ask), (5, 5));
        assert_eq!(next.last_removal, None);
    }

    #[test]
    fn oversize_cancel_rejected() {
        let s = book(3, 5);
        let e = Event { time: 0.0, kind: EventKind::Cancel, side: Side::Ask, size: 6 };
        let err = apply_event(&s, &e).unwrap_err();
        assert!(matches!(err, BookError::OversizeRemoval { side: Side::Ask, size: 6, queue: 5, .. }));
    }

    #[test]
    fn limit_clips_at_q_max() {
        let s = book(48, 5);
        let e = Event { time: 0.0, kind: EventKind::Limit, side: Side::Bid, size: 10 };
        let next = apply_event(&s, &e).unwrap();
        assert_eq!(next.q_bid, Q_MAX);
    }

    #[test]
    fn revert_refills_same_level() {
        let mut s = book(3, 0);
        s.last_removal = Some(LastRemoval { kind: RemovalKind::Market, q_r: 5 });
        let est = EstablishEvent { kind: EstablishKind::Revert, q_e: 4, dt: 2e-4 };
        let next = apply_establishment(&s, &est, 0).unwrap();
        assert_eq!(next.q_ask, 4);
        assert_eq!(next.p_ref, s.p_ref);
    }

    #[test]
    fn follow_after_ask_removal_moves_price_up() {
        let mut s = book(3, 0);
        s.last_removal = Some(LastRemoval { kind: RemovalKind::Market, q_r: 5 });
        let est = EstablishEvent { kind: EstablishKind::Follow, q_e: 7, dt: 2e-4 };
        let next = apply_establishment(&s, &est, 20).unwrap();
        assert_eq!(next.p_ref, s.p_ref + 1);
        assert_eq!(next.q_bid, 7);
        assert_eq!(next.q_ask, 20);
    }

    #[test]
    fn follow_after_bid_removal_moves_price_down() {
        let mut s = book(0, 5);
        s.last_removal = Some(LastRemoval { kind: RemovalKind::Cancel, q_r: 3 });
        let est = EstablishEvent { kind: EstablishKind::Follow, q_e: 3, dt: 2e-4 };
        let next = apply_establishment(&s, &est, 10).unwrap();
        assert_eq!(next.p_ref, s.p_ref - 1);
        assert_eq!(next.q_ask, 3);
        assert_eq!(next.q_bid, 10);
    }

    #[test]
    fn establishment_requires_awaiting_state() {
        let s = book(3, 5);
        let est = EstablishEvent { kind: EstablishKind::Revert, q_e: 4, dt: 2e-4 };
        assert_eq!(
            apply_establishment(&s, &est, 0).unwrap_err(),
            BookError::NotAwaitingEstablishment
        );
    }

    #[test]
    fn bin_of_matches_interval_convention() {
        assert_eq!(SizeBin::of_contracts(0).0, 1);
        assert_eq!(SizeBin::of_contracts(9).0, 1);
        assert_eq!(SizeBin::of_contracts(10).0, 2);
        for k in 1..=49u32 {
            assert_eq!(SizeBin::of_contracts(10 * k).0, k + 1);
            assert_eq!(SizeBin::of_contracts(10 * k - 1).0, k);
        }
    }

    #[test]
    fn bin_of_surjective_and_monotone_over_tracked_range() {
        let mut seen = vec![false; Q_MAX as usize + 1];
        let mut prev = 0;
        for c in 0..(LOT_CONTRACTS * Q_MAX) {
            let b = SizeBin::of_contracts_clamped(c, Q_MAX).0;
            assert!(b >= 1 && b <= Q_MAX);
            assert!(b >= prev);
            prev = b;
            seen[b as usize] = true;
        }
        assert!(seen[1..].iter().all(|&x| x), "bin_of covers 1..=Q_MAX");
    }
}
