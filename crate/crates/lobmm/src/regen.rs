//! Conditional limit-regeneration tables.
//!
//! After a limit removal order (O^r, q^r) empties one side, the next
//! establishing order is drawn conditionally: its direction O^e
//! (follow/revert), size q^e and delay dt all depend on the removal kind
//! and the removal-size bucket. Buckets follow the calibration tables:
//! (0,10), [10,20), [20,inf) contracts.
//!
//! dt is stored as an empirical histogram over log10 seconds with cell
//! width 0.1 on [-6, 1].

use crate::book::{queue_bin, EstablishEvent, EstablishKind, RemovalKind, Q_MAX};
use crate::laws::{DiscretePmf, GeometricLaw, LawError, SizeLaw};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Removal-size buckets, in contracts: (0,10), [10,20), [20,inf).
pub const QR_BUCKETS: usize = 3;

pub fn bucket_of_contracts(contracts: u32) -> usize {
    match contracts {
        0..=9 => 0,
        10..=19 => 1,
        _ => 2,
    }
}

/// Bucket of a removal size expressed in lots/bins (bin q covers
/// [10(q-1), 10q) contracts).
pub fn bucket_of_lots(lots: u32) -> usize {
    match lots {
        0 | 1 => 0,
        2 => 1,
        _ => 2,
    }
}

pub const BUCKET_LABELS: [&str; QR_BUCKETS] = ["(0,10)", "[10,20)", "[20,inf)"];

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RegenError {
    #[error("empty regeneration table: no calibrated cells")]
    EmptyTable,
    #[error(transparent)]
    Law(#[from] LawError),
}

/// Histogram over log10(dt) in [-6, 1), cell width 0.1 (70 cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtHistogram {
    cells: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

pub const DT_LOG10_LO: f64 = -6.0;
pub const DT_LOG10_HI: f64 = 1.0;
pub const DT_CELL_WIDTH: f64 = 0.1;
pub const DT_CELLS: usize = 70;

impl DtHistogram {
    pub fn cell_of(dt_seconds: f64) -> usize {
        if !(dt_seconds > 0.0) {
            return 0;
        }
        let x = (dt_seconds.log10() - DT_LOG10_LO) / DT_CELL_WIDTH;
        (x.floor().max(0.0) as usize).min(DT_CELLS - 1)
    }

    /// Lower edge of a cell, in seconds.
    pub fn cell_lo(cell: usize) -> f64 {
        10f64.powf(DT_LOG10_LO + cell as f64 * DT_CELL_WIDTH)
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<DtHistogram, LawError> {
        if weights.len() != DT_CELLS {
            return Err(LawError::InvalidParameter(format!(
                "dt histogram needs {DT_CELLS} cells, got {}",
                weights.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(LawError::InvalidParameter("dt histogram weights invalid".into()));
        }
        let cells: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let mut h = DtHistogram { cells, cdf: Vec::new() };
        h.rebuild_cdf();
        Ok(h)
    }

    pub fn single_cell(cell: usize) -> DtHistogram {
        let mut w = vec![0.0; DT_CELLS];
        w[cell.min(DT_CELLS - 1)] = 1.0;
        DtHistogram::from_weights(w).expect("single-cell histogram")
    }

    fn rebuild_cdf(&mut self) {
        let mut acc = 0.0;
        self.cdf = self
            .cells
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
    }

    pub fn ensure_cdf(&mut self) {
        if self.cdf.is_empty() {
            self.rebuild_cdf();
        }
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Draw a delay: pick a cell by its mass, then uniformly inside the
    /// cell in log10 space.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        debug_assert!(!self.cdf.is_empty());
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let cell = match self.cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => (i + 1).min(DT_CELLS - 1),
            Err(i) => i.min(DT_CELLS - 1),
        };
        let frac: f64 = rng.random();
        10f64.powf(DT_LOG10_LO + (cell as f64 + frac) * DT_CELL_WIDTH)
    }
}

fn pf_idx(kind: RemovalKind, bucket: usize) -> usize {
    kind.index() * QR_BUCKETS + bucket
}

fn cell_idx(kind: RemovalKind, est: EstablishKind, bucket: usize) -> usize {
    (kind.index() * 2 + est.index()) * QR_BUCKETS + bucket
}

/// Calibrated conditional regeneration laws with per-cell observation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerationTable {
    /// P[O^e = Follow | O^r, q^r-bucket]; indexed kind*3 + bucket.
    p_follow: Vec<Option<f64>>,
    /// law(q^e | O^r, O^e, bucket) over size bins; indexed (kind*2+est)*3 + bucket.
    qe: Vec<Option<DiscretePmf>>,
    /// law(dt | O^r, O^e, bucket); same indexing as `qe`.
    dt: Vec<Option<DtHistogram>>,
    /// Removal observations per (kind, bucket).
    counts: Vec<u64>,
    /// Establishment observations per (kind, est, bucket).
    counts_e: Vec<u64>,
}

impl Default for RegenerationTable {
    fn default() -> Self {
        Self::new()
    }
}

impl RegenerationTable {
    pub fn new() -> RegenerationTable {
        RegenerationTable {
            p_follow: vec![None; 2 * QR_BUCKETS],
            qe: vec![None; 4 * QR_BUCKETS],
            dt: vec![None; 4 * QR_BUCKETS],
            counts: vec![0; 2 * QR_BUCKETS],
            counts_e: vec![0; 4 * QR_BUCKETS],
        }
    }

    pub fn set_p_follow(&mut self, kind: RemovalKind, bucket: usize, p: f64, count: u64) {
        assert!((0.0..=1.0).contains(&p), "probability out of range");
        self.p_follow[pf_idx(kind, bucket)] = Some(p);
        self.counts[pf_idx(kind, bucket)] = count;
    }

    pub fn set_qe(&mut self, kind: RemovalKind, est: EstablishKind, bucket: usize, law: DiscretePmf) {
        self.qe[cell_idx(kind, est, bucket)] = Some(law);
    }

    pub fn set_dt(&mut self, kind: RemovalKind, est: EstablishKind, bucket: usize, law: DtHistogram) {
        self.dt[cell_idx(kind, est, bucket)] = Some(law);
    }

    pub fn set_est_count(&mut self, kind: RemovalKind, est: EstablishKind, bucket: usize, n: u64) {
        self.counts_e[cell_idx(kind, est, bucket)] = n;
    }

    pub fn p_follow(&self, kind: RemovalKind, bucket: usize) -> Option<f64> {
        self.p_follow[pf_idx(kind, bucket)]
    }

    pub fn qe(&self, kind: RemovalKind, est: EstablishKind, bucket: usize) -> Option<&DiscretePmf> {
        self.qe[cell_idx(kind, est, bucket)].as_ref()
    }

    pub fn dt(&self, kind: RemovalKind, est: EstablishKind, bucket: usize) -> Option<&DtHistogram> {
        self.dt[cell_idx(kind, est, bucket)].as_ref()
    }

    pub fn count(&self, kind: RemovalKind, bucket: usize) -> u64 {
        self.counts[pf_idx(kind, bucket)]
    }

    pub fn est_count(&self, kind: RemovalKind, est: EstablishKind, bucket: usize) -> u64 {
        self.counts_e[cell_idx(kind, est, bucket)]
    }

    pub fn is_empty(&self) -> bool {
        self.p_follow.iter().all(Option::is_none)
    }

    pub fn ensure_cdf(&mut self) {
        for q in self.qe.iter_mut().flatten() {
            q.ensure_cdf();
        }
        for d in self.dt.iter_mut().flatten() {
            d.ensure_cdf();
        }
    }
}

/// Where a resolved cell's law came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FallbackLevel {
    /// Calibrated for this exact (O^r, bucket) cell.
    Exact,
    /// Row marginal over q^r-buckets.
    Marginal,
    /// Neutral default (p = 0.5, q^e ~ Geometric(0.64), dt at the 200us peak).
    Default,
}

#[derive(Debug, Clone)]
struct ResolvedCell {
    p_follow: f64,
    qe: [DiscretePmf; 2],
    dt: [DtHistogram; 2],
    fallback: FallbackLevel,
}

/// Sampling-ready view of a [`RegenerationTable`] with all fallbacks
/// resolved at construction.
#[derive(Debug, Clone)]
pub struct EstablishmentSampler {
    cells: Vec<ResolvedCell>,
}

/// Default q^e law: Geometric(0.64) materialized over the tracked range.
fn default_qe() -> DiscretePmf {
    let g = GeometricLaw::new(0.64).expect("default qe p0");
    DiscretePmf::new((1..=Q_MAX).map(|q| g.pmf(q)).collect()).expect("default qe pmf")
}

/// Default dt: point mass in the cell containing the 200us latency peak.
fn default_dt() -> DtHistogram {
    DtHistogram::single_cell(DtHistogram::cell_of(2e-4))
}

fn weighted_marginal_pmf(cells: &[(u64, &DiscretePmf)]) -> Option<DiscretePmf> {
    if cells.is_empty() {
        return None;
    }
    let total: u64 = cells.iter().map(|(n, _)| *n).sum();
    let len = cells.iter().map(|(_, p)| p.len()).max().unwrap();
    let mut acc = vec![0.0; len];
    for (n, pmf) in cells {
        let w = if total > 0 { *n as f64 } else { 1.0 };
        for (i, p) in pmf.probs().iter().enumerate() {
            acc[i] += w * p;
        }
    }
    DiscretePmf::new(acc).ok()
}

fn weighted_marginal_dt(cells: &[(u64, &DtHistogram)]) -> Option<DtHistogram> {
    if cells.is_empty() {
        return None;
    }
    let total: u64 = cells.iter().map(|(n, _)| *n).sum();
    let mut acc = vec![0.0; DT_CELLS];
    for (n, h) in cells {
        let w = if total > 0 { *n as f64 } else { 1.0 };
        for (i, p) in h.cells().iter().enumerate() {
            acc[i] += w * p;
        }
    }
    DtHistogram::from_weights(acc).ok()
}

impl EstablishmentSampler {
    pub fn build(table: &RegenerationTable) -> Result<EstablishmentSampler, RegenError> {
        if table.is_empty() {
            return Err(RegenError::EmptyTable);
        }
        let mut cells = Vec::with_capacity(2 * QR_BUCKETS);
        for kind in RemovalKind::ALL {
            // Row marginals over buckets for this removal kind.
            let pf_cells: Vec<(u64, f64)> = (0..QR_BUCKETS)
                .filter_map(|b| table.p_follow(kind, b).map(|p| (table.count(kind, b), p)))
                .collect();
            let pf_marginal = if pf_cells.is_empty() {
                None
            } else {
                let total: u64 = pf_cells.iter().map(|(n, _)| *n).sum();
                Some(if total > 0 {
                    pf_cells.iter().map(|(n, p)| *n as f64 * p).sum::<f64>() / total as f64
                } else {
                    pf_cells.iter().map(|(_, p)| p).sum::<f64>() / pf_cells.len() as f64
                })
            };
            let marginal_for = |est: EstablishKind| {
                let qe: Vec<(u64, &DiscretePmf)> = (0..QR_BUCKETS)
                    .filter_map(|b| {
                        table.qe(kind, est, b).map(|p| (table.est_count(kind, est, b), p))
                    })
                    .collect();
                let dt: Vec<(u64, &DtHistogram)> = (0..QR_BUCKETS)
                    .filter_map(|b| {
                        table.dt(kind, est, b).map(|p| (table.est_count(kind, est, b), p))
                    })
                    .collect();
                (weighted_marginal_pmf(&qe), weighted_marginal_dt(&dt))
            };
            let (qe_marg_f, dt_marg_f) = marginal_for(EstablishKind::Follow);
            let (qe_marg_r, dt_marg_r) = marginal_for(EstablishKind::Revert);

            for bucket in 0..QR_BUCKETS {
                let mut fallback = FallbackLevel::Exact;
                let p_follow = match table.p_follow(kind, bucket) {
                    Some(p) => p,
                    None => match pf_marginal {
                        Some(p) => {
                            fallback = FallbackLevel::Marginal;
                            p
                        }
                        None => {
                            fallback = FallbackLevel::Default;
                            0.5
                        }
                    },
                };
                let resolve_qe = |est: EstablishKind, marg: &Option<DiscretePmf>| {
                    table
                        .qe(kind, est, bucket)
                        .cloned()
                        .or_else(|| marg.clone())
                        .unwrap_or_else(default_qe)
                };
                let resolve_dt = |est: EstablishKind, marg: &Option<DtHistogram>| {
                    table
                        .dt(kind, est, bucket)
                        .cloned()
                        .or_else(|| marg.clone())
                        .unwrap_or_else(default_dt)
                };
                let mut qe = [
                    resolve_qe(EstablishKind::Follow, &qe_marg_f),
                    resolve_qe(EstablishKind::Revert, &qe_marg_r),
                ];
                let mut dt = [
                    resolve_dt(EstablishKind::Follow, &dt_marg_f),
                    resolve_dt(EstablishKind::Revert, &dt_marg_r),
                ];
                qe.iter_mut().for_each(DiscretePmf::ensure_cdf);
                dt.iter_mut().for_each(DtHistogram::ensure_cdf);
                cells.push(ResolvedCell { p_follow, qe, dt, fallback });
            }
        }
        Ok(EstablishmentSampler { cells })
    }

    fn cell(&self, kind: RemovalKind, bucket: usize) -> &ResolvedCell {
        &self.cells[pf_idx(kind, bucket)]
    }

    pub fn p_follow(&self, kind: RemovalKind, q_r_lots: u32) -> f64 {
        self.cell(kind, bucket_of_lots(q_r_lots)).p_follow
    }

    pub fn fallback_level(&self, kind: RemovalKind, bucket: usize) -> FallbackLevel {
        self.cell(kind, bucket).fallback
    }

    /// Resolved laws of one cell: (p_follow, q^e law on Follow, q^e law on
    /// Revert). Used by kernels that enumerate establishment outcomes.
    pub fn resolved(&self, kind: RemovalKind, bucket: usize) -> (f64, &DiscretePmf, &DiscretePmf) {
        let cell = self.cell(kind, bucket);
        (
            cell.p_follow,
            &cell.qe[EstablishKind::Follow.index()],
            &cell.qe[EstablishKind::Revert.index()],
        )
    }

    /// Draw (O^e, q^e, dt) conditional on the removal context. The draw
    /// order (direction, size, delay) is fixed for reproducibility.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        kind: RemovalKind,
        q_r_lots: u32,
        rng: &mut R,
    ) -> EstablishEvent {
        let cell = self.cell(kind, bucket_of_lots(q_r_lots));
        let follow = rng.random::<f64>() < cell.p_follow;
        let est = if follow { EstablishKind::Follow } else { EstablishKind::Revert };
        let q_e = cell.qe[est.index()].sample(rng).min(Q_MAX).max(1);
        let dt = cell.dt[est.index()].sample(rng);
        EstablishEvent { kind: est, q_e, dt }
    }
}

/// Side-only establishment laws for Models 0 and I: the follow probability
/// depends only on which side was emptied (symmetric here), and q^e / dt
/// are unconditional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleEstablishment {
    pub p_follow: f64,
    pub qe: SizeLaw,
    pub dt: DtHistogram,
}

impl SimpleEstablishment {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EstablishEvent {
        let follow = rng.random::<f64>() < self.p_follow;
        let est = if follow { EstablishKind::Follow } else { EstablishKind::Revert };
        let q_e = self.qe.sample(rng).min(Q_MAX).max(1);
        let dt = self.dt.sample(rng);
        EstablishEvent { kind: est, q_e, dt }
    }

    pub fn ensure_cdf(&mut self) {
        self.qe.ensure_cdf();
        self.dt.ensure_cdf();
    }
}

/// Queue bin helper re-exported for callers staying in lots.
pub fn lots_bin(lots: u32) -> u32 {
    queue_bin(lots, Q_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn paper_table() -> RegenerationTable {
        // Per-bucket follow counts from the calibrated daily averages.
        let mut t = RegenerationTable::new();
        let m_f = [3623u64, 1128, 2802];
        let m_r = [1153u64, 180, 75];
        let c_f = [906u64, 112, 23];
        let c_r = [2552u64, 243, 26];
        for b in 0..QR_BUCKETS {
            t.set_p_follow(
                RemovalKind::Market,
                b,
                m_f[b] as f64 / (m_f[b] + m_r[b]) as f64,
                m_f[b] + m_r[b],
            );
            t.set_p_follow(
                RemovalKind::Cancel,
                b,
                c_f[b] as f64 / (c_f[b] + c_r[b]) as f64,
                c_f[b] + c_r[b],
            );
        }
        t
    }

    #[test]
    fn marginal_follow_probabilities_match_calibration() {
        let t = paper_table();
        let s = EstablishmentSampler::build(&t).unwrap();
        // Count-weighted marginals: 84.3% after markets, 27.0% after cancels.
        let pm: f64 = (0..3)
            .map(|b| t.count(RemovalKind::Market, b) as f64 * t.p_follow(RemovalKind::Market, b).unwrap())
            .sum::<f64>()
            / (0..3).map(|b| t.count(RemovalKind::Market, b) as f64).sum::<f64>();
        assert!((pm - 0.843).abs() < 5e-4, "pm={pm}");
        let mut rng = substream(11, "regen.test");
        let n = 100_000;
        // q_r = 35 contracts -> bin 4 -> bucket [20,inf).
        let follows = (0..n)
            .filter(|_| s.sample(RemovalKind::Market, 4, &mut rng).kind == EstablishKind::Follow)
            .count();
        let freq = follows as f64 / n as f64;
        let expect = 2802.0 / 2877.0;
        assert!((freq - expect).abs() < 0.004, "freq={freq} expect={expect}");
    }

    #[test]
    fn cancel_follow_frequency() {
        let mut t = RegenerationTable::new();
        for b in 0..QR_BUCKETS {
            t.set_p_follow(RemovalKind::Cancel, b, 0.270, 100);
            t.set_p_follow(RemovalKind::Market, b, 0.843, 100);
        }
        let s = EstablishmentSampler::build(&t).unwrap();
        let mut rng = substream(12, "regen.test");
        let n = 100_000;
        let follows = (0..n)
            .filter(|_| s.sample(RemovalKind::Cancel, 1, &mut rng).kind == EstablishKind::Follow)
            .count();
        assert!((follows as f64 / n as f64 - 0.270).abs() < 0.004);
        let follows = (0..n)
            .filter(|_| s.sample(RemovalKind::Market, 1, &mut rng).kind == EstablishKind::Follow)
            .count();
        assert!((follows as f64 / n as f64 - 0.843).abs() < 0.004);
    }

    #[test]
    fn single_cell_dt_bounds() {
        let mut t = paper_table();
        // log10 cell [1e-4, 10^-3.9): index of 1e-4.
        let cell = DtHistogram::cell_of(1e-4);
        for kind in RemovalKind::ALL {
            for est in EstablishKind::ALL {
                for b in 0..QR_BUCKETS {
                    t.set_dt(kind, est, b, DtHistogram::single_cell(cell));
                }
            }
        }
        let s = EstablishmentSampler::build(&t).unwrap();
        let mut rng = substream(13, "regen.test");
        let hi = 10f64.powf(-3.9);
        for _ in 0..10_000 {
            let e = s.sample(RemovalKind::Market, 1, &mut rng);
            assert!(e.dt >= 1e-4 && e.dt < hi, "dt={} out of [1e-4, {hi})", e.dt);
        }
    }

    #[test]
    fn empty_table_is_config_error() {
        let t = RegenerationTable::new();
        assert!(matches!(EstablishmentSampler::build(&t), Err(RegenError::EmptyTable)));
    }

    #[test]
    fn missing_bucket_falls_back_to_marginal_then_default() {
        let mut t = RegenerationTable::new();
        t.set_p_follow(RemovalKind::Market, 0, 0.9, 50);
        let s = EstablishmentSampler::build(&t).unwrap();
        // Market bucket 2 missing -> kind marginal 0.9.
        assert_eq!(s.fallback_level(RemovalKind::Market, 2), FallbackLevel::Marginal);
        assert!((s.p_follow(RemovalKind::Market, 40) - 0.9).abs() < 1e-12);
        // Cancel row entirely missing -> neutral default.
        assert_eq!(s.fallback_level(RemovalKind::Cancel, 0), FallbackLevel::Default);
        assert!((s.p_follow(RemovalKind::Cancel, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dt_cell_of_matches_examples() {
        // 200us sits in [10^-3.7, 10^-3.6).
        let c = DtHistogram::cell_of(2e-4);
        assert!(DtHistogram::cell_lo(c) <= 2e-4 && 2e-4 < DtHistogram::cell_lo(c + 1));
        assert!((DtHistogram::cell_lo(c) - 10f64.powf(-3.7)).abs() < 1e-12);
    }
}
