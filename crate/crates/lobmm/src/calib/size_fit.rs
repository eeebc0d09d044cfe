//! Maximum-likelihood fits for the order-size laws.
//!
//! Geometric parameters come from the sample mean; truncated-geometric
//! parameters from 1-D likelihood maximization (golden section); the
//! market-order mixture from EM over latent component membership with the
//! geometric parameter updated by safeguarded Newton inside each M-step.
//! All fits operate on size histograms, so cost is independent of sample
//! count.

use super::SizeHistogram;
use crate::laws::{LawError, MarketSizeMixture};

/// Geometric MLE: p0 = 1 / mean.
pub fn fit_geometric(samples: &[u32]) -> f64 {
    assert!(!samples.is_empty());
    let mean = samples.iter().map(|&q| q as f64).sum::<f64>() / samples.len() as f64;
    (1.0 / mean).clamp(1e-9, 1.0)
}

/// Truncated-geometric log-likelihood over histogram cells
/// `(q_bound, size, count)`; supports per-cell bounds for pooled fits.
fn tg_log_lik(cells: &[(u32, u32, u64)], p: f64) -> f64 {
    let lp = p.ln();
    let l1p = (1.0 - p).ln();
    let mut ll = 0.0;
    // Cache normalizers per bound.
    let mut last_bound = 0u32;
    let mut last_norm = 0.0f64;
    for &(q_bound, q, n) in cells {
        if q_bound != last_bound {
            last_bound = q_bound;
            last_norm = (1.0 - (1.0 - p).powi(q_bound as i32)).ln();
        }
        ll += n as f64 * (lp + (q - 1) as f64 * l1p - last_norm);
    }
    ll
}

/// 1-D likelihood maximization on (0,1) by golden section.
pub fn fit_truncated_geometric_hist(cells: &[(u32, u32, u64)]) -> f64 {
    assert!(!cells.is_empty());
    if cells.iter().all(|&(_, q, n)| n == 0 || q == 1) {
        return 1.0;
    }
    let (mut a, mut b) = (1e-9, 1.0 - 1e-9);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = tg_log_lik(cells, c);
    let mut fd = tg_log_lik(cells, d);
    for _ in 0..200 {
        if b - a < 1e-12 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = tg_log_lik(cells, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = tg_log_lik(cells, d);
        }
    }
    (a + b) / 2.0
}

/// Truncated-geometric fit from raw samples with a common bound.
pub fn fit_truncated_geometric(samples: &[u32], q_bound: u32) -> f64 {
    assert!(!samples.is_empty());
    let mut counts = vec![0u64; q_bound as usize];
    for &q in samples {
        counts[(q.min(q_bound).max(1) - 1) as usize] += 1;
    }
    let cells: Vec<(u32, u32, u64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(i, &n)| (q_bound, i as u32 + 1, n))
        .collect();
    fit_truncated_geometric_hist(&cells)
}

/// 1 - (1-p)^m, computed without cancellation.
fn one_minus_beta_pow(p: f64, m: f64) -> f64 {
    -(m * (-p).ln_1p()).exp_m1()
}

/// Count-weighted truncated-geometric log-likelihood
/// W ln p + V ln(1-p) - W ln(1 - (1-p)^Q).
fn wtg_objective(w: f64, v: f64, q_bound: u32, p: f64) -> f64 {
    w * p.ln() + v * (-p).ln_1p() - w * one_minus_beta_pow(p, q_bound as f64).ln()
}

/// Gradient of [`wtg_objective`] in a cancellation-free form:
/// the W/p and normalizer terms combine into
/// (W / (p T)) * sum_j beta^j (1 - beta^(Q-1-j)) with T = (1-beta^Q)/p.
fn wtg_grad(w: f64, v: f64, q_bound: u32, p: f64) -> f64 {
    let beta = 1.0 - p;
    let s = one_minus_beta_pow(p, q_bound as f64);
    let t = s / p; // sum of beta^j, j = 0..Q-1
    let mut acc = 0.0;
    let mut beta_j = 1.0;
    for j in 0..q_bound {
        acc += beta_j * one_minus_beta_pow(p, (q_bound - 1 - j) as f64);
        beta_j *= beta;
    }
    w / (p * t) * acc - v / beta
}

/// Maximize the weighted truncated-geometric likelihood by safeguarded
/// Newton (bisection fallback keeps the iterate inside a sign-change
/// bracket). Never returns a point worse than `p_init`.
fn newton_weighted_tg(w: f64, v: f64, q_bound: u32, p_init: f64) -> f64 {
    if w <= 0.0 {
        return p_init;
    }
    if v <= 0.0 {
        return 1.0; // all weighted mass at q = 1
    }
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    // Boundary case: sample mean above the uniform mean, the maximum sits
    // at p -> 0 (flat truncated geometric).
    if wtg_grad(w, v, q_bound, lo) <= 0.0 {
        return lo;
    }
    let mut p = p_init.clamp(1e-9, 1.0 - 1e-9);
    for _ in 0..200 {
        let g = wtg_grad(w, v, q_bound, p);
        if g.abs() < 1e-10 * w.max(1.0) {
            break;
        }
        if g > 0.0 {
            lo = p;
        } else {
            hi = p;
        }
        let h = 1e-7 * p.min(1.0 - p);
        let gp = (wtg_grad(w, v, q_bound, p + h) - wtg_grad(w, v, q_bound, p - h)) / (2.0 * h);
        let step = if gp.is_finite() && gp < 0.0 { p - g / gp } else { f64::NAN };
        p = if step.is_finite() && step > lo && step < hi { step } else { (lo + hi) / 2.0 };
        if hi - lo < 1e-14 {
            break;
        }
    }
    // Generalized-EM guard: keep the old parameter if the search somehow
    // failed to improve the expected complete-data objective.
    if wtg_objective(w, v, q_bound, p) >= wtg_objective(w, v, q_bound, p_init.clamp(1e-9, 1.0 - 1e-9)) {
        p
    } else {
        p_init
    }
}

/// Result of a market-mixture EM fit.
#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub law: MarketSizeMixture,
    pub log_likelihood: f64,
    pub iterations: u32,
    /// False when the iteration cap was reached before convergence.
    pub converged: bool,
    /// Per-iteration log-likelihood (non-decreasing by construction).
    pub trace: Vec<f64>,
}

fn mixture_log_lik(
    counts: &[u64],
    q_bound: u32,
    p0: f64,
    theta0: f64,
    thetas: &[f64],
    theta_inf: f64,
) -> f64 {
    let norm = 1.0 - (1.0 - p0).powi(q_bound as i32);
    let has_inf = !MarketSizeMixture::bound_is_atom(q_bound);
    let mut ll = 0.0;
    for (i, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let q = i as u32 + 1;
        let g = p0 * (1.0 - p0).powi(q as i32 - 1) / norm;
        let mut atom = 0.0;
        if q >= 6 && (q - 1) % 5 == 0 {
            let k = ((q - 1) / 5) as usize;
            if k <= thetas.len() {
                atom += thetas[k - 1];
            }
        }
        if has_inf && q == q_bound {
            atom += theta_inf;
        }
        ll += n as f64 * (theta0 * g + atom).max(1e-300).ln();
    }
    ll
}

/// EM fit of the market-order mixture from a size histogram
/// (`counts[i]` = observations of size bin `i+1`, length `q_bound`).
pub fn fit_market_mixture_hist(counts: &[u64], q_bound: u32) -> MixtureFit {
    assert_eq!(counts.len(), q_bound as usize);
    let n_total: u64 = counts.iter().sum();
    assert!(n_total > 0, "empty sample");
    let k_atoms = MarketSizeMixture::atom_count(q_bound);
    let has_inf = !MarketSizeMixture::bound_is_atom(q_bound);
    let is_atom_pos = |q: u32| -> bool {
        (q >= 6 && (q - 1) % 5 == 0 && ((q - 1) / 5) as usize <= k_atoms)
            || (has_inf && q == q_bound)
    };

    // Moment-style initializer: p0 from the non-atom sub-sample, atom
    // weights from raw frequencies.
    let mut non_atom_n = 0u64;
    let mut non_atom_sum = 0u64;
    for (i, &n) in counts.iter().enumerate() {
        let q = i as u32 + 1;
        if !is_atom_pos(q) {
            non_atom_n += n;
            non_atom_sum += n * q as u64;
        }
    }
    let mut p0 = if non_atom_n > 0 {
        (non_atom_n as f64 / non_atom_sum as f64).clamp(0.01, 0.99)
    } else {
        0.5
    };
    let mut thetas = vec![0.0f64; k_atoms];
    for (k, t) in thetas.iter_mut().enumerate() {
        let q = 5 * (k + 1) + 1;
        *t = counts[q - 1] as f64 / n_total as f64;
    }
    let mut theta_inf =
        if has_inf { counts[q_bound as usize - 1] as f64 / n_total as f64 } else { 0.0 };
    let mut theta0 = (1.0 - thetas.iter().sum::<f64>() - theta_inf).max(1e-6);
    {
        let s = theta0 + thetas.iter().sum::<f64>() + theta_inf;
        theta0 /= s;
        thetas.iter_mut().for_each(|t| *t /= s);
        theta_inf /= s;
    }

    let mut ll = mixture_log_lik(counts, q_bound, p0, theta0, &thetas, theta_inf);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        // E-step: responsibilities of the geometric component, aggregated
        // over the histogram.
        let norm = 1.0 - (1.0 - p0).powi(q_bound as i32);
        let mut w = 0.0f64; // total geometric responsibility
        let mut v = 0.0f64; // responsibility-weighted (q - 1)
        let mut new_thetas = vec![0.0f64; k_atoms];
        let mut new_inf = 0.0f64;
        for (i, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let q = i as u32 + 1;
            let g = p0 * (1.0 - p0).powi(q as i32 - 1) / norm;
            let mut atom = 0.0;
            let mut atom_k: Option<usize> = None;
            if q >= 6 && (q - 1) % 5 == 0 {
                let k = ((q - 1) / 5) as usize;
                if k <= k_atoms {
                    atom = thetas[k - 1];
                    atom_k = Some(k - 1);
                }
            }
            let inf_here = has_inf && q == q_bound;
            if inf_here {
                atom += theta_inf;
            }
            let denom = (theta0 * g + atom).max(1e-300);
            let r0 = theta0 * g / denom;
            let nr0 = n as f64 * r0;
            w += nr0;
            v += nr0 * (q - 1) as f64;
            if let Some(k) = atom_k {
                new_thetas[k] += n as f64 * thetas[k] / denom;
            }
            if inf_here {
                new_inf += n as f64 * theta_inf / denom;
            }
        }
        // M-step.
        theta0 = w / n_total as f64;
        for (k, t) in thetas.iter_mut().enumerate() {
            *t = new_thetas[k] / n_total as f64;
        }
        theta_inf = new_inf / n_total as f64;
        if w > 0.0 {
            p0 = newton_weighted_tg(w, v, q_bound, p0);
        }
        let new_ll = mixture_log_lik(counts, q_bound, p0, theta0, &thetas, theta_inf);
        debug_assert!(new_ll >= ll - 1e-9 * (1.0 + ll.abs()), "EM log-likelihood decreased");
        trace.push(new_ll);
        let gain = new_ll - ll;
        ll = new_ll;
        if gain.abs() <= 1e-10 * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("market-mixture EM hit the iteration cap (Q={q_bound})");
    }
    let law = MarketSizeMixture::new(p0.clamp(1e-9, 1.0), q_bound, theta0, thetas, theta_inf)
        .expect("EM produced an invalid mixture");
    MixtureFit { law, log_likelihood: ll, iterations, converged, trace }
}

/// EM fit from raw samples.
pub fn fit_market_mixture(samples: &[u32], q_bound: u32) -> MixtureFit {
    let mut counts = vec![0u64; q_bound as usize];
    for &q in samples {
        counts[(q.clamp(1, q_bound) - 1) as usize] += 1;
    }
    fit_market_mixture_hist(&counts, q_bound)
}

/// Pooled fallback: fit one mixture on all market samples, clipped into
/// the count-weighted median bound.
pub fn fit_market_pooled(hist: &SizeHistogram) -> MarketSizeMixture {
    let cells: Vec<(u32, u32, u64)> = hist.cells().collect();
    if cells.is_empty() {
        // Neutral parameters in the vicinity of the calibrated tables.
        return MarketSizeMixture::new(0.33, 20, 0.85, vec![0.02, 0.02, 0.02], 0.09)
            .expect("default market mixture");
    }
    let total: u64 = cells.iter().map(|&(_, _, n)| n).sum();
    // Weighted median queue bin.
    let mut by_q: Vec<(u32, u64)> = Vec::new();
    for &(q, _, n) in &cells {
        match by_q.iter_mut().find(|(qq, _)| *qq == q) {
            Some((_, acc)) => *acc += n,
            None => by_q.push((q, n)),
        }
    }
    by_q.sort_unstable();
    let mut acc = 0u64;
    let mut q_pool = by_q[0].0;
    for (q, n) in by_q {
        acc += n;
        if acc * 2 >= total {
            q_pool = q;
            break;
        }
    }
    let q_pool = q_pool.max(2);
    let mut counts = vec![0u64; q_pool as usize];
    for &(_, s, n) in &cells {
        counts[(s.min(q_pool) - 1) as usize] += n;
    }
    fit_market_mixture_hist(&counts, q_pool).law
}

/// Adapt a mixture to a different support bound, preserving the
/// full-clear semantics of the bound atom: shrinking folds dropped atoms
/// into the clear atom, expanding moves the clear mass to the new bound.
pub fn rebound_mixture(base: &MarketSizeMixture, q_new: u32) -> Result<MarketSizeMixture, LawError> {
    use std::cmp::Ordering;
    match q_new.cmp(&base.q_bound()) {
        Ordering::Equal => Ok(base.clone()),
        Ordering::Less => restrict_mixture(base, q_new),
        Ordering::Greater => {
            let k_new = MarketSizeMixture::atom_count(q_new);
            let old = base.thetas();
            let old_atom_bound = MarketSizeMixture::bound_is_atom(base.q_bound());
            let clear_mass = if old_atom_bound {
                old.last().copied().unwrap_or(0.0)
            } else {
                base.theta_inf()
            };
            let mut thetas: Vec<f64> = (0..k_new)
                .map(|k| {
                    if old_atom_bound && k + 1 == old.len() {
                        0.0 // the old bound atom was the clear atom
                    } else {
                        old.get(k).copied().unwrap_or(0.0)
                    }
                })
                .collect();
            let mut theta_inf = 0.0;
            if MarketSizeMixture::bound_is_atom(q_new) {
                if let Some(last) = thetas.last_mut() {
                    *last += clear_mass;
                }
            } else {
                theta_inf = clear_mass;
            }
            let sum = base.theta0() + thetas.iter().sum::<f64>() + theta_inf;
            MarketSizeMixture::new(
                base.p0(),
                q_new,
                base.theta0() / sum,
                thetas.iter().map(|t| t / sum).collect(),
                theta_inf / sum,
            )
        }
    }
}

/// Adapt a pooled mixture to a smaller support bound: atoms beyond the
/// bound fold into the full-clear atom (or into the geometric weight for
/// tiny bounds).
pub fn restrict_mixture(pooled: &MarketSizeMixture, q_bound: u32) -> Result<MarketSizeMixture, LawError> {
    let k_new = MarketSizeMixture::atom_count(q_bound);
    let old = pooled.thetas();
    let mut thetas: Vec<f64> = (0..k_new).map(|k| old.get(k).copied().unwrap_or(0.0)).collect();
    let dropped: f64 = old.iter().skip(k_new).sum::<f64>() + pooled.theta_inf();
    let mut theta0 = pooled.theta0();
    let mut theta_inf = 0.0;
    if MarketSizeMixture::bound_is_atom(q_bound) {
        if let Some(last) = thetas.last_mut() {
            *last += dropped;
        } else {
            theta0 += dropped;
        }
    } else {
        theta_inf = dropped;
    }
    let sum = theta0 + thetas.iter().sum::<f64>() + theta_inf;
    MarketSizeMixture::new(
        pooled.p0(),
        q_bound,
        theta0 / sum,
        thetas.iter().map(|t| t / sum).collect(),
        theta_inf / sum,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{GeometricLaw, TruncatedGeometricLaw};
    use crate::rng::substream;

    #[test]
    fn geometric_recovery_at_table_parameter() {
        let law = GeometricLaw::new(0.6421).unwrap();
        let mut rng = substream(21, "size_fit.test");
        let samples: Vec<u32> = (0..1_000_000).map(|_| law.sample(&mut rng)).collect();
        let p = fit_geometric(&samples);
        assert!((p - 0.6421).abs() < 0.002, "p={p}");
    }

    #[test]
    fn truncated_geometric_recovery_at_table_parameter() {
        let law = TruncatedGeometricLaw::new(0.6578, 21).unwrap();
        let mut rng = substream(22, "size_fit.test");
        let samples: Vec<u32> = (0..1_000_000).map(|_| law.sample(&mut rng)).collect();
        let p = fit_truncated_geometric(&samples, 21);
        assert!((p - 0.6578).abs() < 0.002, "p={p}");
    }

    #[test]
    fn all_ones_degenerate() {
        assert_eq!(fit_geometric(&[1, 1, 1, 1]), 1.0);
        assert_eq!(fit_truncated_geometric(&[1, 1, 1], 10), 1.0);
    }

    #[test]
    fn estimator_converges_at_root_n_rate() {
        let law = GeometricLaw::new(0.6421).unwrap();
        let mut rng = substream(23, "size_fit.test");
        for &n in &[10_000usize, 100_000, 1_000_000] {
            let samples: Vec<u32> = (0..n).map(|_| law.sample(&mut rng)).collect();
            let p = fit_geometric(&samples);
            // 4x the asymptotic SE of the delta-method estimate.
            let tol = 4.0 * 0.6421 * (0.3579f64 / n as f64).sqrt();
            assert!((p - 0.6421).abs() < tol, "n={n} p={p} tol={tol}");
        }
    }

    #[test]
    fn em_recovers_table_row_q21() {
        let truth =
            MarketSizeMixture::from_table_row(21, 0.3486, &[0.8357, 0.0185, 0.0338, 0.0081, 0.1038])
                .unwrap();
        let mut rng = substream(24, "size_fit.test");
        let samples: Vec<u32> = (0..100_000).map(|_| truth.sample(&mut rng)).collect();
        let fit = fit_market_mixture(&samples, 21);
        assert!((fit.law.p0() - truth.p0()).abs() < 0.02, "p0={}", fit.law.p0());
        assert!((fit.law.theta0() - truth.theta0()).abs() < 0.02);
        for (a, b) in fit.law.thetas().iter().zip(truth.thetas()) {
            assert!((a - b).abs() < 0.02, "theta {a} vs {b}");
        }
        // Monotone log-likelihood trace.
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()));
        }
    }

    #[test]
    fn em_pure_atom_pushes_theta_inf_to_one() {
        let samples = vec![20u32; 5000];
        let fit = fit_market_mixture(&samples, 20);
        assert!(fit.law.theta_inf() > 0.99, "theta_inf={}", fit.law.theta_inf());
        assert!(fit.law.theta0() < 0.01);
    }

    #[test]
    fn em_without_atom_samples_reduces_to_truncated_geometric() {
        // Truncated-geometric samples avoiding every atom position.
        let law = TruncatedGeometricLaw::new(0.55, 14).unwrap();
        let mut rng = substream(25, "size_fit.test");
        let samples: Vec<u32> = (0..50_000)
            .map(|_| law.sample(&mut rng))
            .filter(|&q| !(q >= 6 && (q - 1) % 5 == 0) && q != 14)
            .collect();
        let fit = fit_market_mixture(&samples, 14);
        assert!(fit.law.thetas().iter().all(|&t| t == 0.0));
        assert_eq!(fit.law.theta_inf(), 0.0);
        let tg = fit_truncated_geometric(&samples, 14);
        assert!((fit.law.p0() - tg).abs() < 1e-6, "{} vs {tg}", fit.law.p0());
    }

    #[test]
    fn restrict_folds_dropped_atoms() {
        let pooled =
            MarketSizeMixture::new(0.33, 25, 0.83, vec![0.02, 0.03, 0.01, 0.02], 0.09).unwrap();
        let small = restrict_mixture(&pooled, 8).unwrap();
        let total: f64 = (1..=8).map(|q| small.pmf(q)).sum();
        assert!((total - 1.0).abs() < 1e-9);
        // Bound 8 is not 5n+1: dropped atoms and theta_inf land on q=8.
        assert!(small.theta_inf() > 0.1);
    }
}
