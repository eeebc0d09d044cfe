//! Calibration of the order-flow model from tick event streams.
//!
//! One pass per file builds a mergeable [`DayAggregate`] (event counts,
//! occupation times, size histograms, regeneration observations). Files
//! are processed in parallel and merged by summation, which is associative
//! and commutative, so the result does not depend on scheduling. The fit
//! phase then turns aggregates into intensities, size laws and
//! regeneration tables.

mod diagnostics;
mod size_fit;

pub use diagnostics::{diagnostics, intensity_regimes, write_intensity_regimes, DiagnosticsReport};
pub use size_fit::{
    fit_geometric, fit_market_mixture, fit_truncated_geometric, rebound_mixture, MixtureFit,
};

use crate::book::{EventKind, SizeBin, Side};
use crate::exec;
use crate::laws::{DiscretePmf, GeometricLaw, MarketSizeMixture, TruncatedGeometricLaw};
use crate::regen::{bucket_of_contracts, DtHistogram, RegenerationTable, DT_CELLS, QR_BUCKETS};
use crate::stream::{replay, EventRole, RegenObservation, ReplayQuality, StreamRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CalibError {
    #[error("no input streams")]
    NoData,
    #[error(transparent)]
    Law(#[from] crate::laws::LawError),
}

/// Mask bins observed for less than this many seconds.
pub const MIN_OCCUPATION_S: f64 = 1.0;

/// Default minimum samples per cell before a cell-specific size-law fit.
pub const DEFAULT_MIN_COUNT: u32 = 200;

/// Event intensities per (order kind, queue bin), with occupation times.
///
/// Occupation is accumulated in integer nanoseconds so that merging
/// tables is exactly associative and commutative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    q_max: u32,
    /// Event counts, indexed `[kind][bin]`, bin 0 unused.
    counts: Vec<Vec<u64>>,
    /// Nanoseconds spent with the queue in each bin.
    occupation_ns: Vec<u64>,
}

impl IntensityTable {
    pub fn new(q_max: u32) -> IntensityTable {
        IntensityTable {
            q_max,
            counts: vec![vec![0; q_max as usize + 1]; 3],
            occupation_ns: vec![0; q_max as usize + 1],
        }
    }

    pub fn q_max(&self) -> u32 {
        self.q_max
    }

    pub fn record_event(&mut self, kind: EventKind, bin: u32) {
        self.counts[kind.index()][bin as usize] += 1;
    }

    pub fn record_occupation_ns(&mut self, bin: u32, ns: u64) {
        self.occupation_ns[bin as usize] += ns;
    }

    /// Seconds observed in this bin.
    pub fn occupation(&self, bin: u32) -> f64 {
        self.occupation_ns[bin as usize] as f64 * 1e-9
    }

    pub fn count(&self, kind: EventKind, bin: u32) -> u64 {
        self.counts[kind.index()][bin as usize]
    }

    /// Estimated rate, masked where the bin was occupied for under
    /// [`MIN_OCCUPATION_S`].
    pub fn lambda(&self, kind: EventKind, bin: u32) -> Option<f64> {
        let occ = self.occupation(bin);
        if occ < MIN_OCCUPATION_S {
            None
        } else {
            Some(self.counts[kind.index()][bin as usize] as f64 / occ)
        }
    }

    /// Standard error of the rate estimate (Poisson MLE), masked like
    /// [`Self::lambda`].
    pub fn lambda_se(&self, kind: EventKind, bin: u32) -> Option<f64> {
        let occ = self.occupation(bin);
        if occ < MIN_OCCUPATION_S {
            None
        } else {
            Some((self.counts[kind.index()][bin as usize] as f64).sqrt() / occ)
        }
    }

    pub fn merge(&mut self, other: &IntensityTable) {
        assert_eq!(self.q_max, other.q_max);
        for k in 0..3 {
            for b in 0..=self.q_max as usize {
                self.counts[k][b] += other.counts[k][b];
            }
        }
        for b in 0..=self.q_max as usize {
            self.occupation_ns[b] += other.occupation_ns[b];
        }
    }

    /// Build a table realizing the given rates (events/s per kind and bin,
    /// index 0 unused) over `base_seconds` of notional observation.
    /// Rates are quantized to one event in `base_seconds`.
    pub fn from_rates(q_max: u32, rates: &[Vec<f64>; 3], base_seconds: f64) -> IntensityTable {
        let mut t = IntensityTable::new(q_max);
        for b in 1..=q_max as usize {
            t.occupation_ns[b] = (base_seconds * 1e9) as u64;
            for k in 0..3 {
                t.counts[k][b] = (rates[k][b] * base_seconds).round() as u64;
            }
        }
        t
    }

    /// Dense per-bin rates with masked bins filled from the nearest
    /// occupied bin (simulation-ready).
    pub fn dense_lambda(&self, kind: EventKind) -> Vec<f64> {
        let n = self.q_max as usize;
        let mut out = vec![0.0; n + 1];
        let known: Vec<(usize, f64)> = (1..=n)
            .filter_map(|b| self.lambda(kind, b as u32).map(|l| (b, l)))
            .collect();
        for b in 1..=n {
            out[b] = match known.iter().min_by_key(|(kb, _)| kb.abs_diff(b)) {
                Some(&(_, l)) => l,
                None => 0.0,
            };
        }
        out
    }
}

/// Per-bin size histograms, indexed by (queue bin, size bin), size <= queue bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeHistogram {
    q_max: u32,
    counts: Vec<u64>, // (q_bin - 1) * q_max + (size_bin - 1)
}

impl SizeHistogram {
    pub fn new(q_max: u32) -> SizeHistogram {
        SizeHistogram { q_max, counts: vec![0; (q_max * q_max) as usize] }
    }

    fn idx(&self, queue_bin: u32, size_bin: u32) -> usize {
        ((queue_bin - 1) * self.q_max + (size_bin - 1)) as usize
    }

    pub fn record(&mut self, queue_bin: u32, size_bin: u32) {
        let size_bin = size_bin.min(queue_bin).max(1);
        let i = self.idx(queue_bin, size_bin);
        self.counts[i] += 1;
    }

    pub fn count(&self, queue_bin: u32, size_bin: u32) -> u64 {
        self.counts[self.idx(queue_bin, size_bin)]
    }

    pub fn bin_total(&self, queue_bin: u32) -> u64 {
        (1..=queue_bin).map(|s| self.count(queue_bin, s)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &SizeHistogram) {
        assert_eq!(self.q_max, other.q_max);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Iterate `(queue_bin, size_bin, count)` over nonzero cells.
    pub fn cells(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        (1..=self.q_max).flat_map(move |q| {
            (1..=q).filter_map(move |s| {
                let c = self.count(q, s);
                (c > 0).then_some((q, s, c))
            })
        })
    }
}

/// Accumulated regeneration observations, mergeable by summation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenAccumulator {
    q_max: u32,
    /// Follow/revert counts per (kind, bucket): `[kind][bucket][est]`.
    fr: Vec<u64>,
    /// q^e bin counts per (kind, est, bucket).
    qe: Vec<u64>,
    /// dt cell counts per (kind, est, bucket).
    dt: Vec<u64>,
    /// Unconditional dt cell counts.
    dt_all: Vec<u64>,
}

impl RegenAccumulator {
    pub fn new(q_max: u32) -> RegenAccumulator {
        RegenAccumulator {
            q_max,
            fr: vec![0; 2 * QR_BUCKETS * 2],
            qe: vec![0; 4 * QR_BUCKETS * q_max as usize],
            dt: vec![0; 4 * QR_BUCKETS * DT_CELLS],
            dt_all: vec![0; DT_CELLS],
        }
    }

    pub fn record(&mut self, obs: &RegenObservation) {
        let b = bucket_of_contracts(obs.q_r_contracts);
        let k = obs.o_r.index();
        let e = obs.o_e.index();
        self.fr[(k * QR_BUCKETS + b) * 2 + e] += 1;
        let qe_bin = SizeBin::of_contracts_clamped(obs.q_e_contracts, self.q_max).0 as usize;
        let cell = ((k * 2 + e) * QR_BUCKETS + b) * self.q_max as usize + (qe_bin - 1);
        self.qe[cell] += 1;
        let dcell = DtHistogram::cell_of(obs.dt);
        self.dt[((k * 2 + e) * QR_BUCKETS + b) * DT_CELLS + dcell] += 1;
        self.dt_all[dcell] += 1;
    }

    pub fn merge(&mut self, other: &RegenAccumulator) {
        assert_eq!(self.q_max, other.q_max);
        for (a, b) in self.fr.iter_mut().zip(&other.fr) {
            *a += b;
        }
        for (a, b) in self.qe.iter_mut().zip(&other.qe) {
            *a += b;
        }
        for (a, b) in self.dt.iter_mut().zip(&other.dt) {
            *a += b;
        }
        for (a, b) in self.dt_all.iter_mut().zip(&other.dt_all) {
            *a += b;
        }
    }

    fn follow_count(&self, kind: usize, bucket: usize) -> (u64, u64) {
        let f = self.fr[(kind * QR_BUCKETS + bucket) * 2]; // Follow has index 0
        let r = self.fr[(kind * QR_BUCKETS + bucket) * 2 + 1];
        (f, r)
    }

    /// Build the regeneration table: any observed cell is calibrated, the
    /// rest stay empty for the sampler's fallback chain.
    pub fn build_table(&self) -> RegenerationTable {
        use crate::book::{EstablishKind, RemovalKind};
        let mut t = RegenerationTable::new();
        for kind in RemovalKind::ALL {
            for b in 0..QR_BUCKETS {
                let (f, r) = self.follow_count(kind.index(), b);
                if f + r > 0 {
                    t.set_p_follow(kind, b, f as f64 / (f + r) as f64, f + r);
                }
                for est in EstablishKind::ALL {
                    let base = ((kind.index() * 2 + est.index()) * QR_BUCKETS + b)
                        * self.q_max as usize;
                    let qe_counts: Vec<f64> = (0..self.q_max as usize)
                        .map(|i| self.qe[base + i] as f64)
                        .collect();
                    let n: f64 = qe_counts.iter().sum();
                    if n > 0.0 {
                        t.set_qe(kind, est, b, DiscretePmf::new(qe_counts).expect("qe pmf"));
                        t.set_est_count(kind, est, b, n as u64);
                    }
                    let dbase = ((kind.index() * 2 + est.index()) * QR_BUCKETS + b) * DT_CELLS;
                    let dt_counts: Vec<f64> =
                        (0..DT_CELLS).map(|i| self.dt[dbase + i] as f64).collect();
                    if dt_counts.iter().sum::<f64>() > 0.0 {
                        t.set_dt(kind, est, b, DtHistogram::from_weights(dt_counts).expect("dt"));
                    }
                }
            }
        }
        t
    }

    pub fn total_follows(&self) -> (u64, u64) {
        let mut f = 0;
        let mut r = 0;
        for k in 0..2 {
            for b in 0..QR_BUCKETS {
                let (cf, cr) = self.follow_count(k, b);
                f += cf;
                r += cr;
            }
        }
        (f, r)
    }

    pub fn dt_marginal(&self) -> Option<DtHistogram> {
        let w: Vec<f64> = self.dt_all.iter().map(|&c| c as f64).collect();
        DtHistogram::from_weights(w).ok()
    }
}

/// One stream's worth of mergeable calibration state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayAggregate {
    pub q_max: u32,
    pub intensity_bid: IntensityTable,
    pub intensity_ask: IntensityTable,
    /// Size histograms per order kind.
    pub sizes: Vec<SizeHistogram>,
    pub regen: RegenAccumulator,
    pub quality: ReplayQuality,
    /// Total time covered, nanoseconds (gap intervals excluded).
    pub span_ns: u64,
}

impl DayAggregate {
    pub fn new(q_max: u32) -> DayAggregate {
        DayAggregate {
            q_max,
            intensity_bid: IntensityTable::new(q_max),
            intensity_ask: IntensityTable::new(q_max),
            sizes: (0..3).map(|_| SizeHistogram::new(q_max)).collect(),
            regen: RegenAccumulator::new(q_max),
            quality: ReplayQuality::default(),
            span_ns: 0,
        }
    }

    /// Single pass over one day's records.
    pub fn from_records(records: &[StreamRecord], q_max: u32) -> DayAggregate {
        let mut agg = DayAggregate::new(q_max);
        let rep = replay(records);
        agg.quality = rep.quality.clone();
        for ev in &rep.events {
            // Occupation: the pre-event state stood for dt_prev seconds.
            if ev.dt_prev_ns > 0 && !ev.gap {
                agg.span_ns += ev.dt_prev_ns;
                if ev.pre_bid > 0 {
                    agg.intensity_bid.record_occupation_ns(
                        SizeBin::of_contracts_clamped(ev.pre_bid, q_max).0,
                        ev.dt_prev_ns,
                    );
                }
                if ev.pre_ask > 0 {
                    agg.intensity_ask.record_occupation_ns(
                        SizeBin::of_contracts_clamped(ev.pre_ask, q_max).0,
                        ev.dt_prev_ns,
                    );
                }
            }
            // Event counts and size samples: regular flow plus removals,
            // excluding establishing limits (their law is the regeneration
            // process) and unclassifiable records.
            let countable = matches!(ev.role, EventRole::Regular | EventRole::Removal { .. });
            if !countable {
                continue;
            }
            let pre = match ev.side {
                Side::Bid => ev.pre_bid,
                Side::Ask => ev.pre_ask,
            };
            if pre == 0 {
                continue;
            }
            let queue_bin = SizeBin::of_contracts_clamped(pre, q_max).0;
            let table = match ev.side {
                Side::Bid => &mut agg.intensity_bid,
                Side::Ask => &mut agg.intensity_ask,
            };
            table.record_event(ev.kind, queue_bin);
            let size_bin = SizeBin::of_contracts_clamped(ev.size_contracts, q_max).0;
            agg.sizes[ev.kind.index()].record(queue_bin, size_bin);
        }
        for obs in &rep.pairs {
            agg.regen.record(obs);
        }
        agg
    }

    pub fn merge(&mut self, other: &DayAggregate) {
        assert_eq!(self.q_max, other.q_max);
        self.intensity_bid.merge(&other.intensity_bid);
        self.intensity_ask.merge(&other.intensity_ask);
        for (a, b) in self.sizes.iter_mut().zip(&other.sizes) {
            a.merge(b);
        }
        self.regen.merge(&other.regen);
        self.quality.records += other.quality.records;
        self.quality.desyncs += other.quality.desyncs;
        self.quality.skipped += other.quality.skipped;
        self.quality.unmatched_removals += other.quality.unmatched_removals;
        self.quality.gaps += other.quality.gaps;
        self.span_ns += other.span_ns;
    }
}

/// Fitted parameters of the market-order mixture, per queue bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCell<T> {
    pub law: T,
    pub samples: u64,
    /// True when the cell had fewer than `min_count` samples and the law
    /// is the pooled fallback.
    pub pooled: bool,
}

/// Size laws per queue bin with pooled fallbacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeLawTables {
    pub q_max: u32,
    pub limit: Vec<FittedCell<GeometricLaw>>,
    pub cancel: Vec<FittedCell<TruncatedGeometricLaw>>,
    pub market: Vec<FittedCell<MarketSizeMixture>>,
    pub limit_pooled_p0: f64,
    pub cancel_pooled_p0: f64,
}

impl SizeLawTables {
    /// Law lookups are by queue bin (1-based).
    pub fn limit_law(&self, bin: u32) -> &GeometricLaw {
        &self.limit[bin as usize - 1].law
    }

    pub fn cancel_law(&self, bin: u32) -> &TruncatedGeometricLaw {
        &self.cancel[bin as usize - 1].law
    }

    pub fn market_law(&self, bin: u32) -> &MarketSizeMixture {
        &self.market[bin as usize - 1].law
    }
}

/// Everything estimated from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub q_max: u32,
    pub min_count: u32,
    pub intensity_bid: IntensityTable,
    pub intensity_ask: IntensityTable,
    pub size_laws: SizeLawTables,
    pub regen: RegenerationTable,
    /// Overall P[O^e = Follow], for the side-only models.
    pub follow_marginal: f64,
    /// Unconditional establishment-delay histogram.
    pub dt_marginal: DtHistogram,
    pub quality: ReplayQuality,
    pub span_s: f64,
}

impl CalibrationSet {
    /// Bid/ask averaged intensities (counts and occupations summed), per
    /// the symmetric presentation of the estimates.
    pub fn symmetric_intensity(&self) -> IntensityTable {
        let mut t = self.intensity_bid.clone();
        t.merge(&self.intensity_ask);
        t
    }
}

/// Estimate intensities for one side from replayed events; thin wrapper
/// kept for direct use in tests and diagnostics.
pub fn estimate_intensities(records: &[StreamRecord], side: Side, q_max: u32) -> IntensityTable {
    let agg = DayAggregate::from_records(records, q_max);
    match side {
        Side::Bid => agg.intensity_bid,
        Side::Ask => agg.intensity_ask,
    }
}

/// Calibrate from one or more day streams (processed in parallel).
pub fn calibrate(
    days: &[Vec<StreamRecord>],
    q_max: u32,
    min_count: u32,
    parallel: bool,
) -> Result<CalibrationSet, CalibError> {
    if days.is_empty() {
        return Err(CalibError::NoData);
    }
    let aggs = exec::map_indexed(days.len(), |i| DayAggregate::from_records(&days[i], q_max), parallel);
    let mut total = aggs[0].clone();
    for a in &aggs[1..] {
        total.merge(a);
    }
    fit(&total, min_count)
}

/// Fit laws from a merged aggregate.
pub fn fit(agg: &DayAggregate, min_count: u32) -> Result<CalibrationSet, CalibError> {
    let q_max = agg.q_max;

    // Pooled estimates over all bins.
    let pooled_mean = |hist: &SizeHistogram| -> Option<f64> {
        let mut n = 0u64;
        let mut sum = 0u64;
        for (_, s, c) in hist.cells() {
            n += c;
            sum += s as u64 * c;
        }
        (n > 0).then(|| sum as f64 / n as f64)
    };
    let limit_pooled_p0 = pooled_mean(&agg.sizes[EventKind::Limit.index()])
        .map(|m| (1.0 / m).clamp(1e-6, 1.0))
        .unwrap_or(0.64);
    let cancel_cells: Vec<(u32, u32, u64)> = agg.sizes[EventKind::Cancel.index()].cells().collect();
    let cancel_pooled_p0 = if cancel_cells.is_empty() {
        0.66
    } else {
        size_fit::fit_truncated_geometric_hist(&cancel_cells)
    };
    let market_hist = &agg.sizes[EventKind::Market.index()];
    let market_pooled = size_fit::fit_market_pooled(market_hist);

    // First pass: cell-specific fits where the cell has enough samples.
    let mut limit_fit: Vec<Option<f64>> = vec![None; q_max as usize];
    let mut cancel_fit: Vec<Option<f64>> = vec![None; q_max as usize];
    let mut market_fit: Vec<Option<MarketSizeMixture>> = vec![None; q_max as usize];
    for q in 1..=q_max {
        let lh = &agg.sizes[EventKind::Limit.index()];
        if lh.bin_total(q) >= min_count as u64 {
            let n = lh.bin_total(q);
            let mean = (1..=q).map(|s| s as u64 * lh.count(q, s)).sum::<u64>() as f64 / n as f64;
            limit_fit[q as usize - 1] = Some((1.0 / mean).clamp(1e-6, 1.0));
        }
        let ch = &agg.sizes[EventKind::Cancel.index()];
        if ch.bin_total(q) >= min_count as u64 {
            let cells: Vec<(u32, u32, u64)> =
                (1..=q).filter_map(|s| (ch.count(q, s) > 0).then(|| (q, s, ch.count(q, s)))).collect();
            cancel_fit[q as usize - 1] = Some(size_fit::fit_truncated_geometric_hist(&cells));
        }
        if market_hist.bin_total(q) >= min_count as u64 {
            let counts: Vec<u64> = (1..=q).map(|s| market_hist.count(q, s)).collect();
            market_fit[q as usize - 1] = Some(size_fit::fit_market_mixture_hist(&counts, q).law);
        }
    }
    // Undersized cells inherit the nearest fitted bin (the calibrated
    // tables vary smoothly in the queue length); the global pooled fit is
    // the last resort.
    let nearest = |fits: &[Option<f64>], q: u32| -> Option<f64> {
        (0..q_max as usize)
            .filter(|&i| fits[i].is_some())
            .min_by_key(|&i| (i as i64 - (q as i64 - 1)).unsigned_abs())
            .and_then(|i| fits[i])
    };
    let nearest_market = |q: u32| -> Option<MarketSizeMixture> {
        (0..q_max as usize)
            .filter(|&i| market_fit[i].is_some())
            .min_by_key(|&i| (i as i64 - (q as i64 - 1)).unsigned_abs())
            .and_then(|i| market_fit[i].clone())
    };
    let mut limit = Vec::with_capacity(q_max as usize);
    let mut cancel = Vec::with_capacity(q_max as usize);
    let mut market = Vec::with_capacity(q_max as usize);
    for q in 1..=q_max {
        let i = q as usize - 1;
        let n_l = agg.sizes[EventKind::Limit.index()].bin_total(q);
        let (p0_l, pooled_l) = match limit_fit[i] {
            Some(p) => (p, false),
            None => (nearest(&limit_fit, q).unwrap_or(limit_pooled_p0), true),
        };
        limit.push(FittedCell { law: GeometricLaw::new(p0_l)?, samples: n_l, pooled: pooled_l });

        let n_c = agg.sizes[EventKind::Cancel.index()].bin_total(q);
        let (p0_c, pooled_c) = match cancel_fit[i] {
            Some(p) => (p, false),
            None => (nearest(&cancel_fit, q).unwrap_or(cancel_pooled_p0), true),
        };
        cancel.push(FittedCell {
            law: TruncatedGeometricLaw::new(p0_c, q)?,
            samples: n_c,
            pooled: pooled_c,
        });

        let n_m = market_hist.bin_total(q);
        let (law_m, pooled_m) = match &market_fit[i] {
            Some(law) => (law.clone(), false),
            None => {
                let base = nearest_market(q).unwrap_or_else(|| market_pooled.clone());
                (size_fit::rebound_mixture(&base, q)?, true)
            }
        };
        market.push(FittedCell { law: law_m, samples: n_m, pooled: pooled_m });
    }

    let regen = agg.regen.build_table();
    let (f, r) = agg.regen.total_follows();
    let follow_marginal = if f + r > 0 { f as f64 / (f + r) as f64 } else { 0.5 };
    let dt_marginal = agg
        .regen
        .dt_marginal()
        .unwrap_or_else(|| DtHistogram::single_cell(DtHistogram::cell_of(2e-4)));

    Ok(CalibrationSet {
        q_max,
        min_count,
        intensity_bid: agg.intensity_bid.clone(),
        intensity_ask: agg.intensity_ask.clone(),
        size_laws: SizeLawTables {
            q_max,
            limit,
            cancel,
            market,
            limit_pooled_p0,
            cancel_pooled_p0,
        },
        regen,
        follow_marginal,
        dt_marginal,
        quality: agg.quality.clone(),
        span_s: agg.span_ns as f64 * 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::{EventKind, Side};
    use crate::rng::substream;
    use crate::stream::StreamRecord;
    use rand::Rng;

    /// Homogeneous Poisson limit-order stream on both sides around a fixed
    /// large queue, so everything lands in one bin per side.
    fn poisson_stream(rate_per_side: f64, horizon_s: f64, seed: u64) -> Vec<StreamRecord> {
        let mut rng = substream(seed, "calib.test.poisson");
        let mut t = 0.0f64;
        let mut out = Vec::new();
        let mut bb = 200u32;
        let mut ba = 200u32;
        while t < horizon_s {
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / (2.0 * rate_per_side);
            if t >= horizon_s {
                break;
            }
            let side = if rng.random::<f64>() < 0.5 { Side::Bid } else { Side::Ask };
            // Alternate limit and cancel of one contract to keep queues put.
            let add = rng.random::<f64>() < 0.5;
            let (kind, delta): (EventKind, i64) =
                if add { (EventKind::Limit, 1) } else { (EventKind::Cancel, -1) };
            match side {
                Side::Bid => bb = (bb as i64 + delta) as u32,
                Side::Ask => ba = (ba as i64 + delta) as u32,
            }
            out.push(StreamRecord {
                ts_ns: (t * 1e9) as u64,
                kind,
                side,
                price_ticks: if side == Side::Bid { 100 } else { 101 },
                size_contracts: 1,
                bb_qty: bb,
                ba_qty: ba,
            });
        }
        out
    }

    #[test]
    fn poisson_rate_recovery() {
        // 2.0 events/s per side total (1.0 limit + 1.0 cancel), 1e5 s.
        let records = poisson_stream(1.0, 1e5, 42);
        let t = estimate_intensities(&records, Side::Bid, 50);
        // Queue hovers around 200 contracts -> bin 21; adjacent bins share
        // occupancy. Pool over the occupied bins.
        let mut occ = 0.0;
        let mut n_limit = 0u64;
        for b in 1..=50 {
            occ += t.occupation(b);
            n_limit += t.count(EventKind::Limit, b);
        }
        let lambda = n_limit as f64 / occ;
        assert!((lambda - 0.5).abs() < 0.02, "lambda={lambda}");
    }

    #[test]
    fn single_event_rate() {
        // Exactly one market event after 10 s with the ask at bin 5.
        let records = vec![
            StreamRecord {
                ts_ns: 0,
                kind: EventKind::Limit,
                side: Side::Ask,
                price_ticks: 101,
                size_contracts: 5,
                bb_qty: 100,
                ba_qty: 45,
            },
            StreamRecord {
                ts_ns: 10_000_000_000,
                kind: EventKind::Market,
                side: Side::Ask,
                price_ticks: 101,
                size_contracts: 5,
                bb_qty: 100,
                ba_qty: 40,
            },
        ];
        let t = estimate_intensities(&records, Side::Ask, 50);
        assert_eq!(t.count(EventKind::Market, 5), 1);
        assert!((t.lambda(EventKind::Market, 5).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_bin_is_masked() {
        let records = poisson_stream(1.0, 100.0, 7);
        let t = estimate_intensities(&records, Side::Bid, 50);
        assert_eq!(t.lambda(EventKind::Limit, 1), None);
        assert_eq!(t.lambda_se(EventKind::Limit, 1), None);
    }

    #[test]
    fn merge_is_associative_and_commutative() {
        let a = DayAggregate::from_records(&poisson_stream(1.0, 200.0, 1), 50);
        let b = DayAggregate::from_records(&poisson_stream(1.5, 150.0, 2), 50);
        let c = DayAggregate::from_records(&poisson_stream(0.5, 300.0, 3), 50);
        let mut ab_c = a.clone();
        ab_c.merge(&b);
        ab_c.merge(&c);
        let mut c_ba = c.clone();
        c_ba.merge(&b);
        c_ba.merge(&a);
        assert_eq!(ab_c, c_ba);
    }
}
