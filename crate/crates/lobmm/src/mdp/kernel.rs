//! Shared transition-kernel machinery for the book MDPs.
//!
//! Precomputes, per queue size on the decision grid: jump-channel rates,
//! size pmfs (with limit tails folded at the grid cap and the full-queue
//! cancel mass folded to "everyone but the agent"), and establishment
//! outcomes per removal context. The agent's own lot cannot be cancelled
//! by market flow, so on the agent's side the cancel channel caps at
//! queue-minus-one and disappears entirely when the agent is alone.
//!
//! Position dynamics within a queue: market orders consume from the
//! front; a cancellation of `m` lots hits `k` lots ahead of the agent
//! with hypergeometric probability (uniform over the other orders).

use crate::book::{EventKind, RemovalKind, Q_MAX};
use crate::mdp::MdpError;
use crate::regen::{bucket_of_lots, QR_BUCKETS};
use crate::sim::{EstablishmentModel, ModelSpec, ModelVariant};

/// Index of (x, y) pairs with 1 <= y <= x <= grid, ordered by x then y.
#[inline]
pub(crate) fn tri(x: u32, y: u32) -> usize {
    debug_assert!(y >= 1 && y <= x);
    ((x as usize - 1) * x as usize) / 2 + (y as usize - 1)
}

/// Number of (x, y) pairs with 1 <= y <= x <= grid: the per-side state
/// count of the position problems.
pub fn tri_count(grid: u32) -> usize {
    (grid as usize * (grid as usize + 1)) / 2
}

#[derive(Debug, Clone)]
pub struct KernelModel {
    pub grid: u32,
    pub variant: ModelVariant,
    /// Rates per kind and queue size 1..=grid (index 0 unused).
    lambda: [Vec<f64>; 3],
    /// Per queue x: probabilities of the post-limit queue x+1..=grid with
    /// the tail beyond the cap folded into the last entry; the residual
    /// `limit_self` mass self-loops (only nonzero at x = grid).
    limit_inc: Vec<Vec<f64>>,
    limit_self: Vec<f64>,
    /// Per queue x: cancel sizes 1..=x-1 with the full-clear mass folded
    /// into x-1 (empty at x = 1). Applies to the agent's side.
    cancel_agent: Vec<Vec<f64>>,
    /// Per queue x: cancel sizes 1..=x (opposite side, full support).
    cancel_pmf: Vec<Vec<f64>>,
    /// Per queue x: market sizes 1..=x.
    market_pmf: Vec<Vec<f64>>,
    /// Establishment contexts: 6 for removal-conditioned kernels, else 1.
    pub ctxs: usize,
    est_p_follow: Vec<f64>,
    /// Per context: q^e law on Revert over 1..=grid (tail folded).
    est_revert_qe: Vec<Vec<f64>>,
}

fn fold_pmf_to_grid(probs: impl Iterator<Item = f64>, grid: u32) -> Vec<f64> {
    let mut out = vec![0.0; grid as usize];
    for (i, p) in probs.enumerate() {
        let slot = i.min(grid as usize - 1);
        out[slot] += p;
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|p| *p /= total);
    }
    out
}

impl KernelModel {
    pub fn from_spec(spec: &ModelSpec, grid: u32) -> Result<KernelModel, MdpError> {
        if grid < 2 || grid > Q_MAX {
            return Err(MdpError::InvalidKernel(format!(
                "grid cap {grid} out of range 2..={Q_MAX}"
            )));
        }
        let g = grid as usize;
        let mut lambda = [vec![0.0; g + 1], vec![0.0; g + 1], vec![0.0; g + 1]];
        for kind in EventKind::ALL {
            for x in 1..=grid {
                lambda[kind.index()][x as usize] = spec.lambda(kind, x);
            }
        }
        let mut limit_inc = Vec::with_capacity(g);
        let mut limit_self = Vec::with_capacity(g);
        let mut cancel_agent = Vec::with_capacity(g);
        let mut cancel_pmf = Vec::with_capacity(g);
        let mut market_pmf = Vec::with_capacity(g);
        for x in 1..=grid {
            // Limit arrivals: support unbounded for geometric laws; fold
            // anything that saturates the cap.
            let law = spec.size_law(EventKind::Limit, x);
            let room = grid - x;
            let mut inc = vec![0.0; room as usize];
            let mut mass = 0.0;
            // Probe far enough to capture the tail of unbounded laws.
            for s in 1..=4 * Q_MAX {
                let p = law.pmf(s);
                if p <= 0.0 && s > Q_MAX {
                    break;
                }
                if room > 0 {
                    let slot = (s.min(room) - 1) as usize;
                    inc[slot] += p;
                }
                mass += p;
            }
            // Remaining tail saturates the cap as well.
            let tail = (1.0 - mass).max(0.0);
            if room > 0 {
                inc[room as usize - 1] += tail;
                limit_self.push(0.0);
            } else {
                limit_self.push(1.0);
            }
            // Normalize against truncation of the probe.
            let total: f64 = inc.iter().sum::<f64>() + limit_self[x as usize - 1];
            if total > 0.0 {
                inc.iter_mut().for_each(|p| *p /= total);
                limit_self[x as usize - 1] /= total;
            }
            limit_inc.push(inc);

            let claw = spec.size_law(EventKind::Cancel, x);
            let full: Vec<f64> = (1..=x).map(|m| claw.pmf(m)).collect();
            let fsum: f64 = full.iter().sum();
            let full: Vec<f64> = full.iter().map(|p| p / fsum.max(1e-300)).collect();
            if x >= 2 {
                let mut folded = full[..(x as usize - 1)].to_vec();
                let last = folded.len() - 1;
                folded[last] += full[x as usize - 1];
                cancel_agent.push(folded);
            } else {
                cancel_agent.push(Vec::new());
            }
            cancel_pmf.push(full);

            let mlaw = spec.size_law(EventKind::Market, x);
            let mp: Vec<f64> = (1..=x).map(|m| mlaw.pmf(m)).collect();
            let msum: f64 = mp.iter().sum();
            market_pmf.push(mp.iter().map(|p| p / msum.max(1e-300)).collect());
        }

        let (ctxs, est_p_follow, est_revert_qe) = match spec.establishment() {
            EstablishmentModel::Conditional(sampler) => {
                let mut pf = Vec::with_capacity(2 * QR_BUCKETS);
                let mut qe = Vec::with_capacity(2 * QR_BUCKETS);
                for kind in RemovalKind::ALL {
                    for bucket in 0..QR_BUCKETS {
                        let (p, _, revert) = sampler.resolved(kind, bucket);
                        pf.push(p);
                        qe.push(fold_pmf_to_grid(
                            (1..=Q_MAX).map(|q| revert.pmf(q)),
                            grid,
                        ));
                    }
                }
                (2 * QR_BUCKETS, pf, qe)
            }
            EstablishmentModel::Simple(simple) => {
                let qe = fold_pmf_to_grid((1..=4 * Q_MAX).map(|q| simple.qe.pmf(q)), grid);
                (1, vec![simple.p_follow], vec![qe])
            }
        };

        Ok(KernelModel {
            grid,
            variant: spec.variant,
            lambda,
            limit_inc,
            limit_self,
            cancel_agent,
            cancel_pmf,
            market_pmf,
            ctxs,
            est_p_follow,
            est_revert_qe,
        })
    }

    #[inline]
    pub(crate) fn rate(&self, kind: EventKind, x: u32) -> f64 {
        self.lambda[kind.index()][x as usize]
    }

    /// Establishment context of a removal.
    #[inline]
    pub(crate) fn ctx_of(&self, kind: RemovalKind, q_r: u32) -> usize {
        if self.ctxs == 1 {
            0
        } else {
            kind.index() * QR_BUCKETS + bucket_of_lots(q_r)
        }
    }

    #[inline]
    pub(crate) fn p_follow(&self, ctx: usize) -> f64 {
        self.est_p_follow[ctx]
    }

    #[inline]
    pub(crate) fn revert_qe(&self, ctx: usize) -> &[f64] {
        &self.est_revert_qe[ctx]
    }

    #[inline]
    pub(crate) fn limit_targets(&self, x: u32) -> (&[f64], f64) {
        (&self.limit_inc[x as usize - 1], self.limit_self[x as usize - 1])
    }

    #[inline]
    pub(crate) fn cancel_agent_pmf(&self, x: u32) -> &[f64] {
        &self.cancel_agent[x as usize - 1]
    }

    #[inline]
    pub(crate) fn cancel_full_pmf(&self, x: u32) -> &[f64] {
        &self.cancel_pmf[x as usize - 1]
    }

    #[inline]
    pub(crate) fn market_pmf_at(&self, x: u32) -> &[f64] {
        &self.market_pmf[x as usize - 1]
    }

    /// Total jump rate at (own queue x with the agent inside, opposite
    /// queue xo): the agent-side cancel channel exists only when other
    /// orders stand in the queue.
    pub(crate) fn total_rate_agent_own(&self, x: u32, xo: u32) -> f64 {
        let mut total = self.rate(EventKind::Limit, x) + self.rate(EventKind::Market, x);
        if x > 1 {
            total += self.rate(EventKind::Cancel, x);
        }
        total += self.rate(EventKind::Limit, xo)
            + self.rate(EventKind::Cancel, xo)
            + self.rate(EventKind::Market, xo);
        total
    }

    /// Total jump rate when the agent holds a lot in both queues.
    pub(crate) fn total_rate_both_own(&self, x_b: u32, x_a: u32) -> f64 {
        let mut total = 0.0;
        for x in [x_b, x_a] {
            total += self.rate(EventKind::Limit, x) + self.rate(EventKind::Market, x);
            if x > 1 {
                total += self.rate(EventKind::Cancel, x);
            }
        }
        total
    }

    /// Hypergeometric split of an `m`-lot cancellation on the agent's
    /// queue of `x` lots at position `y`: calls `f(k, p)` with the
    /// probability that `k` of the cancelled lots were ahead of the agent
    /// (population x-1 others, y-1 ahead, m drawn uniformly).
    pub(crate) fn cancel_ahead_split(x: u32, y: u32, m: u32, mut f: impl FnMut(u32, f64)) {
        debug_assert!(m <= x - 1, "cancel cannot remove the agent's lot");
        let ahead = y - 1;
        let behind = x - y;
        let k_lo = m.saturating_sub(behind);
        let k_hi = m.min(ahead);
        debug_assert!(k_lo <= k_hi);
        // Unnormalized hypergeometric weights by recurrence.
        let mut weights = Vec::with_capacity((k_hi - k_lo + 1) as usize);
        let mut w = 1.0f64;
        weights.push(w);
        for k in k_lo..k_hi {
            let kf = k as f64;
            w *= (ahead as f64 - kf) * (m as f64 - kf)
                / ((kf + 1.0) * (behind as f64 - (m as f64 - kf) + 1.0));
            weights.push(w);
        }
        let total: f64 = weights.iter().sum();
        for (i, w) in weights.into_iter().enumerate() {
            f(k_lo + i as u32, w / total);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn hypergeometric_split_normalizes_and_matches_mean() {
        // x = 10 lots, agent at y = 4 (3 ahead, 6 behind), cancel m = 5.
        let (mut total, mut mean) = (0.0, 0.0);
        KernelModel::cancel_ahead_split(10, 4, 5, |k, p| {
            total += p;
            mean += k as f64 * p;
        });
        assert!((total - 1.0).abs() < 1e-12);
        // E[k] = m * (y-1)/(x-1) = 5 * 3/9.
        assert!((mean - 5.0 * 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn pmfs_are_stochastic_on_the_grid() {
        let file = synthetic::enriched_model2(10.0);
        let spec = ModelSpec::from_model_file(&file, ModelVariant::ModelII).unwrap();
        let km = KernelModel::from_spec(&spec, 20).unwrap();
        for x in 1..=20u32 {
            let (inc, selfm) = km.limit_targets(x);
            let s: f64 = inc.iter().sum::<f64>() + selfm;
            assert!((s - 1.0).abs() < 1e-9, "limit x={x}: {s}");
            let s: f64 = km.market_pmf_at(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "market x={x}: {s}");
            let s: f64 = km.cancel_full_pmf(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "cancel x={x}: {s}");
            if x > 1 {
                let s: f64 = km.cancel_agent_pmf(x).iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "cancel-agent x={x}: {s}");
            }
        }
        assert_eq!(km.ctxs, 6);
        for ctx in 0..km.ctxs {
            let s: f64 = km.revert_qe(ctx).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
