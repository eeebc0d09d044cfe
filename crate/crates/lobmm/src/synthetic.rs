//! Synthetic model presets.
//!
//! Self-contained calibrations shaped like the published estimates, used
//! by tests, benchmarks and the CLI `--preset` flag to run the full
//! pipeline without proprietary data:
//!
//! * [`stable_model0`] — a stable book whose liquidity-constructive rate
//!   crosses the destructive rate at a configurable queue size;
//! * [`enriched_model2`] — the same flow plus multi-lot size laws and the
//!   conditional regeneration tables (large market removals are followed
//!   by price moves with near-certainty).

use crate::book::{EstablishKind, RemovalKind, Q_MAX};
use crate::calib::{FittedCell, IntensityTable, SizeLawTables};
use crate::laws::{DiscretePmf, GeometricLaw, MarketSizeMixture, TruncatedGeometricLaw};
use crate::model_file::{ModelFile, ModelMeta, MODEL_SCHEMA};
use crate::regen::{DtHistogram, RegenerationTable, DT_CELLS, QR_BUCKETS};

/// Intensities with an exact constructive/destructive crossing at
/// `q_star` (in lots): the destructive rate is constant in total, the
/// constructive rate decays through it.
fn intensity_curves(q_max: u32, q_star: f64, scale: f64) -> IntensityTable {
    let n = q_max as usize;
    let mut limit = vec![0.0; n + 1];
    let mut cancel = vec![0.0; n + 1];
    let mut market = vec![0.0; n + 1];
    for b in 1..=n {
        let q = b as f64;
        // Market share of destructive flow concentrates on short queues
        // (trades race small queues; deep queues mostly churn cancels).
        let m_share = 0.05 + 0.9 * (-q / 4.0).exp();
        limit[b] = scale * ((q_star - q) / 12.0).exp();
        market[b] = scale * m_share;
        cancel[b] = scale * (1.0 - m_share);
    }
    IntensityTable::from_rates(q_max, &[limit, cancel, market], 1e6)
}

/// Market-order mixture for queue bin `q`: geometric bulk, 0.01 per
/// round-number atom, and a full-clear atom concentrated on short queues
/// (deep limits are rarely eaten in one shot).
fn market_mixture(q: u32) -> MarketSizeMixture {
    let p0 = (0.36 - 0.002 * q as f64).max(0.2);
    if q == 1 {
        return MarketSizeMixture::new(p0, 1, 1.0, vec![], 0.0).expect("q=1 mixture");
    }
    let k = MarketSizeMixture::atom_count(q);
    let full_clear = 0.02 + 0.4 * (-(q as f64) / 4.0).exp();
    if MarketSizeMixture::bound_is_atom(q) {
        // The last regular atom is the full-clear atom.
        let mut thetas = vec![0.01; k];
        if k > 0 {
            thetas[k - 1] = full_clear;
            let theta0 = 1.0 - full_clear - 0.01 * (k - 1) as f64;
            MarketSizeMixture::new(p0, q, theta0, thetas, 0.0).expect("mixture")
        } else {
            MarketSizeMixture::new(p0, q, 1.0, vec![], 0.0).expect("mixture")
        }
    } else {
        let thetas = vec![0.01; k];
        let theta0 = 1.0 - full_clear - 0.01 * k as f64;
        MarketSizeMixture::new(p0, q, theta0, thetas, full_clear).expect("mixture")
    }
}

fn size_tables(q_max: u32) -> SizeLawTables {
    let limit: Vec<FittedCell<GeometricLaw>> = (1..=q_max)
        .map(|_| FittedCell { law: GeometricLaw::new(0.64).unwrap(), samples: 0, pooled: false })
        .collect();
    let cancel: Vec<FittedCell<TruncatedGeometricLaw>> = (1..=q_max)
        .map(|q| FittedCell {
            law: TruncatedGeometricLaw::new(0.66, q).unwrap(),
            samples: 0,
            pooled: false,
        })
        .collect();
    let market: Vec<FittedCell<MarketSizeMixture>> = (1..=q_max)
        .map(|q| FittedCell { law: market_mixture(q), samples: 0, pooled: false })
        .collect();
    SizeLawTables {
        q_max,
        limit,
        cancel,
        market,
        limit_pooled_p0: 0.64,
        cancel_pooled_p0: 0.66,
    }
}

/// Establishment-delay histogram: a sharp peak in the cell holding the
/// 200us round-trip latency with light tails on the log grid.
fn latency_peaked_dt(width_cells: f64) -> DtHistogram {
    let peak = DtHistogram::cell_of(2e-4) as f64;
    let mut w = vec![0.0; DT_CELLS];
    for (i, cell) in w.iter_mut().enumerate() {
        let z = (i as f64 - peak) / width_cells;
        *cell = (-0.5 * z * z).exp();
    }
    DtHistogram::from_weights(w).expect("dt histogram")
}

/// Geometric-shaped discrete pmf over bins 1..=q_max with the given mean.
fn geometric_pmf(mean: f64, q_max: u32) -> DiscretePmf {
    let p0 = (1.0 / mean.max(1.0)).clamp(1e-3, 1.0);
    let g = GeometricLaw::new(p0).unwrap();
    DiscretePmf::new((1..=q_max).map(|q| g.pmf(q)).collect()).expect("geometric pmf")
}

/// Regeneration table shaped like the calibrated conditional estimates:
/// follow probabilities per (O^r, q^r-bucket) from the per-bucket daily
/// counts, establishment sizes growing with the removal bucket, delays
/// peaked at the round-trip latency.
pub fn paper_shaped_regen(q_max: u32) -> RegenerationTable {
    let mut t = RegenerationTable::new();
    let follows = [
        (RemovalKind::Market, [3623u64, 1128, 2802], [1153u64, 180, 75]),
        (RemovalKind::Cancel, [906u64, 112, 23], [2552u64, 243, 26]),
    ];
    // Mean establishing sizes per (O^r, O^e, bucket), in bins.
    let qe_means = |kind: RemovalKind, est: EstablishKind, b: usize| -> f64 {
        match (kind, est) {
            (RemovalKind::Market, EstablishKind::Follow) => [1.5, 1.9, 3.5][b],
            (RemovalKind::Market, EstablishKind::Revert) => [1.4, 1.4, 3.5][b],
            (RemovalKind::Cancel, EstablishKind::Follow) => [1.4, 1.5, 1.7][b],
            (RemovalKind::Cancel, EstablishKind::Revert) => [1.3, 1.5, 1.6][b],
        }
    };
    for (kind, f, r) in follows {
        for b in 0..QR_BUCKETS {
            t.set_p_follow(kind, b, f[b] as f64 / (f[b] + r[b]) as f64, f[b] + r[b]);
            for est in EstablishKind::ALL {
                let n = if est == EstablishKind::Follow { f[b] } else { r[b] };
                t.set_qe(kind, est, b, geometric_pmf(qe_means(kind, est, b), q_max));
                let width = if kind == RemovalKind::Market && est == EstablishKind::Follow {
                    1.5
                } else {
                    4.0
                };
                t.set_dt(kind, est, b, latency_peaked_dt(width));
                t.set_est_count(kind, est, b, n);
            }
        }
    }
    t
}

fn base_model(q_star: f64, scale: f64, hidden_mean: f64) -> ModelFile {
    let q_max = Q_MAX;
    let intensity = intensity_curves(q_max, q_star, scale);
    ModelFile {
        schema: MODEL_SCHEMA.to_string(),
        q_max,
        lot_contracts: crate::book::LOT_CONTRACTS,
        tick_size: 1.0,
        intensity_bid: intensity.clone(),
        intensity_ask: intensity,
        size_laws: size_tables(q_max),
        regen: paper_shaped_regen(q_max),
        follow_marginal: 8597.0 / 12829.0,
        dt_marginal: latency_peaked_dt(3.0),
        hidden_law: Some(geometric_pmf(hidden_mean, q_max)),
        meta: ModelMeta::default(),
    }
}

/// Stable synthetic calibration: constructive flow dominates below
/// `q_star` lots and the book concentrates around it. Intended for
/// Model 0 (unit sizes).
pub fn stable_model0(q_star: f64) -> ModelFile {
    base_model(q_star, 1.2, 7.0)
}

/// Enriched synthetic calibration with multi-lot sizes and conditional
/// regeneration: the adverse-selection channel of the model (large
/// market removals followed through by price moves) is fully active.
pub fn enriched_model2(q_star: f64) -> ModelFile {
    base_model(q_star, 1.2, 7.0)
}

/// Named presets for the CLI.
pub fn preset(name: &str) -> Option<ModelFile> {
    match name {
        "stable" => Some(stable_model0(29.5)),
        "enriched" => Some(enriched_model2(10.0)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::EventKind;

    #[test]
    fn crossing_sits_at_q_star() {
        let m = stable_model0(29.5);
        let t = m.symmetric_intensity();
        let l = |b: u32| t.lambda(EventKind::Limit, b).unwrap();
        let d = |b: u32| {
            t.lambda(EventKind::Cancel, b).unwrap() + t.lambda(EventKind::Market, b).unwrap()
        };
        assert!(l(29) > d(29));
        assert!(l(30) < d(30));
        // Ergodic tail: destruction dominates at the cap.
        assert!(l(Q_MAX) < d(Q_MAX));
    }

    #[test]
    fn mixtures_are_normalized_for_every_bin() {
        let m = enriched_model2(10.0);
        for (i, cell) in m.size_laws.market.iter().enumerate() {
            let q = i as u32 + 1;
            let total: f64 = (1..=q).map(|s| cell.law.pmf(s)).sum();
            assert!((total - 1.0).abs() < 1e-9, "bin {q}: {total}");
        }
    }

    #[test]
    fn regen_buckets_follow_calibrated_shares() {
        let t = paper_shaped_regen(Q_MAX);
        assert!((t.p_follow(RemovalKind::Market, 2).unwrap() - 0.9739).abs() < 1e-3);
        assert!((t.p_follow(RemovalKind::Cancel, 0).unwrap() - 0.262).abs() < 1e-3);
        assert_eq!(crate::regen::bucket_of_contracts(35), 2);
    }
}
