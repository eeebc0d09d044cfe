//! Empirical diagnostics around limit regeneration.
//!
//! Emits the conditional-probability tables used to justify the model's
//! conditioning structure: P[O^e = F] against the queue states around the
//! establishment (which should carry little information) and against the
//! removal type and size (which carry most of it), plus the removal-size
//! CDF and the intensity-regime annotation.

use crate::book::{EstablishKind, EventKind, RemovalKind, SizeBin};
use crate::calib::IntensityTable;
use crate::stream::{replay, StreamRecord};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Queue-size bins for the conditional tables, 50 contracts wide.
pub const DIAG_QUEUE_BINS: usize = 10;

pub fn diag_queue_bin(contracts: u32) -> usize {
    ((contracts / 50) as usize).min(DIAG_QUEUE_BINS - 1)
}

fn diag_bin_label(bin: usize) -> String {
    if bin == DIAG_QUEUE_BINS - 1 {
        format!("[{},inf)", bin * 50)
    } else {
        format!("[{},{})", bin * 50, (bin + 1) * 50)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FollowCount {
    pub follows: u64,
    pub total: u64,
}

impl FollowCount {
    pub fn p(&self) -> Option<f64> {
        (self.total > 0).then(|| self.follows as f64 / self.total as f64)
    }

    pub fn se(&self) -> Option<f64> {
        self.p().map(|p| (p * (1.0 - p) / self.total as f64).sqrt())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// P[O^e = F | q_opp at establishment, q_opp at removal, O^r], indexed
    /// `[kind][bin_estab][bin_removal]`. At depth 1 the paper's second
    /// queue is not observable; the surviving-side queue at the two
    /// timestamps stands in for the (q^F, q^S) pair.
    pub follow_by_queues: Vec<Vec<Vec<FollowCount>>>,
    /// P[O^e = F | O^r, q^r-bin], indexed `[kind][qr_bin - 1]`.
    pub follow_by_qr: Vec<Vec<FollowCount>>,
    /// Removal-size counts per kind and q^r bin.
    pub qr_counts: Vec<Vec<u64>>,
    pub pairs: u64,
}

/// Build the diagnostics tables from an event stream.
pub fn diagnostics(records: &[StreamRecord]) -> DiagnosticsReport {
    let q_max = crate::book::Q_MAX;
    let mut report = DiagnosticsReport {
        follow_by_queues: vec![
            vec![vec![FollowCount::default(); DIAG_QUEUE_BINS]; DIAG_QUEUE_BINS];
            2
        ],
        follow_by_qr: vec![vec![FollowCount::default(); q_max as usize]; 2],
        qr_counts: vec![vec![0; q_max as usize]; 2],
        pairs: 0,
    };
    let rep = replay(records);
    for p in &rep.pairs {
        let k = p.o_r.index();
        let follow = u64::from(p.o_e == EstablishKind::Follow);
        let be = diag_queue_bin(p.q_surv_at_estab);
        let br = diag_queue_bin(p.q_surv_at_removal);
        let cell = &mut report.follow_by_queues[k][be][br];
        cell.follows += follow;
        cell.total += 1;
        let qr_bin = SizeBin::of_contracts_clamped(p.q_r_contracts, q_max).0 as usize;
        let cell = &mut report.follow_by_qr[k][qr_bin - 1];
        cell.follows += follow;
        cell.total += 1;
        report.qr_counts[k][qr_bin - 1] += 1;
        report.pairs += 1;
    }
    report
}

fn kind_label(k: usize) -> &'static str {
    match k {
        0 => "cancel",
        _ => "market",
    }
}

impl DiagnosticsReport {
    /// Write the report as CSV files; returns the paths written. An empty
    /// report produces header-only files.
    pub fn write_csv(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();

        for (k, kind) in RemovalKind::ALL.iter().enumerate() {
            let path = dir.join(format!("oe_given_queues_{}.csv", kind_label(kind.index())));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "q_opp_at_estab,q_opp_at_removal,p_follow,n")?;
            for be in 0..DIAG_QUEUE_BINS {
                for br in 0..DIAG_QUEUE_BINS {
                    let c = &self.follow_by_queues[k][be][br];
                    if c.total > 0 {
                        writeln!(
                            f,
                            "{},{},{:.6},{}",
                            diag_bin_label(be),
                            diag_bin_label(br),
                            c.p().unwrap(),
                            c.total
                        )?;
                    }
                }
            }
            written.push(path);
        }

        let path = dir.join("oe_given_or_qr.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "o_r,qr_bin,p_follow,se,n")?;
        for (k, _) in RemovalKind::ALL.iter().enumerate() {
            for (i, c) in self.follow_by_qr[k].iter().enumerate() {
                if c.total > 0 {
                    writeln!(
                        f,
                        "{},{},{:.6},{:.6},{}",
                        kind_label(k),
                        i + 1,
                        c.p().unwrap(),
                        c.se().unwrap(),
                        c.total
                    )?;
                }
            }
        }
        written.push(path);

        let path = dir.join("qr_cdf.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "o_r,qr_bin,cdf,n_cum")?;
        for (k, _) in RemovalKind::ALL.iter().enumerate() {
            let total: u64 = self.qr_counts[k].iter().sum();
            if total == 0 {
                continue;
            }
            let mut acc = 0u64;
            for (i, &n) in self.qr_counts[k].iter().enumerate() {
                acc += n;
                if n > 0 || i + 1 == self.qr_counts[k].len() {
                    writeln!(f, "{},{},{:.6},{}", kind_label(k), i + 1, acc as f64 / total as f64, acc)?;
                }
            }
        }
        written.push(path);
        Ok(written)
    }
}

/// Intensity-regime annotation: bins where the liquidity-constructive rate
/// crosses the destructive rate. Reported for inspection only; nothing in
/// the model switches on these boundaries.
pub fn intensity_regimes(table: &IntensityTable) -> Vec<u32> {
    let l = table.dense_lambda(EventKind::Limit);
    let c = table.dense_lambda(EventKind::Cancel);
    let m = table.dense_lambda(EventKind::Market);
    let mut crossings = Vec::new();
    let mut prev: Option<bool> = None;
    for b in 1..=table.q_max() as usize {
        let constructive = l[b] > c[b] + m[b];
        if let Some(p) = prev {
            if p != constructive {
                crossings.push(b as u32);
            }
        }
        prev = Some(constructive);
    }
    crossings
}

pub fn write_intensity_regimes(table: &IntensityTable, dir: &Path) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("intensity_regimes.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(f, "bin,lambda_limit,lambda_cancel,lambda_market,constructive,crossing")?;
    let crossings = intensity_regimes(table);
    let l = table.dense_lambda(EventKind::Limit);
    let c = table.dense_lambda(EventKind::Cancel);
    let m = table.dense_lambda(EventKind::Market);
    for b in 1..=table.q_max() as usize {
        writeln!(
            f,
            "{},{:.6},{:.6},{:.6},{},{}",
            b,
            l[b],
            c[b],
            m[b],
            u8::from(l[b] > c[b] + m[b]),
            u8::from(crossings.contains(&(b as u32)))
        )?;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::Side;
    use crate::rng::substream;
    use rand::Rng;

    /// Stream of removal/establishment cycles with configurable follow
    /// behaviour and queue sizes.
    fn cycle_stream(n: usize, p_follow: f64, seed: u64) -> Vec<StreamRecord> {
        let mut rng = substream(seed, "diag.test");
        let mut out = Vec::new();
        let mut ts = 0u64;
        let mut bid_px = 100i64;
        let mut bb = 150u32;
        for _ in 0..n {
            let ba = 10 + (rng.random::<u32>() % 30) * 10;
            ts += 1_000_000_000;
            // Ask appears, then is cleared by a market order.
            out.push(StreamRecord {
                ts_ns: ts,
                kind: EventKind::Limit,
                side: Side::Ask,
                price_ticks: bid_px + 1,
                size_contracts: ba,
                bb_qty: bb,
                ba_qty: ba,
            });
            ts += 500_000_000;
            out.push(StreamRecord {
                ts_ns: ts,
                kind: EventKind::Market,
                side: Side::Ask,
                price_ticks: bid_px + 1,
                size_contracts: ba,
                bb_qty: bb,
                ba_qty: 0,
            });
            ts += 200_000;
            let q_e = 10 + (rng.random::<u32>() % 20) * 10;
            if rng.random::<f64>() < p_follow {
                // Follow: new bid at the old ask level.
                bid_px += 1;
                bb = q_e;
                let hidden = 10 + (rng.random::<u32>() % 40) * 10;
                out.push(StreamRecord {
                    ts_ns: ts,
                    kind: EventKind::Limit,
                    side: Side::Bid,
                    price_ticks: bid_px,
                    size_contracts: q_e,
                    bb_qty: bb,
                    ba_qty: hidden,
                });
            } else {
                out.push(StreamRecord {
                    ts_ns: ts,
                    kind: EventKind::Limit,
                    side: Side::Ask,
                    price_ticks: bid_px + 1,
                    size_contracts: q_e,
                    bb_qty: bb,
                    ba_qty: q_e,
                });
                ts += 300_000_000;
                // Clear the reverted ask again to reset for the next cycle.
                out.push(StreamRecord {
                    ts_ns: ts,
                    kind: EventKind::Cancel,
                    side: Side::Ask,
                    price_ticks: bid_px + 1,
                    size_contracts: q_e,
                    bb_qty: bb,
                    ba_qty: 0,
                });
                ts += 200_000;
                bid_px += 1;
                bb = 100;
                out.push(StreamRecord {
                    ts_ns: ts,
                    kind: EventKind::Limit,
                    side: Side::Bid,
                    price_ticks: bid_px,
                    size_contracts: bb,
                    bb_qty: bb,
                    ba_qty: 200,
                });
            }
        }
        out
    }

    #[test]
    fn independence_holds_within_binomial_error() {
        let records = cycle_stream(20_000, 0.7, 5);
        let report = diagnostics(&records);
        let k = RemovalKind::Market.index();
        let total: u64 = report.follow_by_qr[k].iter().map(|c| c.total).sum();
        let follows: u64 = report.follow_by_qr[k].iter().map(|c| c.follows).sum();
        let p_bar = follows as f64 / total as f64;
        for row in &report.follow_by_queues[k] {
            for c in row {
                if c.total >= 30 {
                    let se = (p_bar * (1.0 - p_bar) / c.total as f64).sqrt();
                    assert!(
                        (c.p().unwrap() - p_bar).abs() <= 3.0 * se,
                        "cell p={:?} pbar={p_bar} n={}",
                        c.p(),
                        c.total
                    );
                }
            }
        }
    }

    #[test]
    fn deterministic_follow_stream_gives_unit_probabilities() {
        let records = cycle_stream(500, 1.0, 6);
        let report = diagnostics(&records);
        for c in &report.follow_by_qr[RemovalKind::Market.index()] {
            if c.total > 0 {
                assert_eq!(c.p(), Some(1.0));
            }
        }
    }

    #[test]
    fn empty_stream_empty_report() {
        let report = diagnostics(&[]);
        assert_eq!(report.pairs, 0);
        let dir = tempfile::tempdir().unwrap();
        let files = report.write_csv(dir.path()).unwrap();
        assert!(!files.is_empty());
        for f in files {
            let text = std::fs::read_to_string(f).unwrap();
            assert_eq!(text.lines().count(), 1, "header only");
        }
    }
}
