//! Parametric order-size distributions.
//!
//! Sizes are in bins of 10 contracts (lots): `q = 1, 2, ...`. Limit order
//! sizes follow geometric laws, cancellations truncated geometric laws,
//! and market orders a mixture of a truncated geometric with Dirac atoms
//! at q = 5k+1 and at the full queue size q = Q. All samplers use the
//! inverse-CDF method on a caller-owned RNG stream, so identical seeds
//! give identical draws.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LawError {
    #[error("invalid law parameter: {0}")]
    InvalidParameter(String),
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), LawError> {
    if cond {
        Ok(())
    } else {
        Err(LawError::InvalidParameter(msg()))
    }
}

/// Geometric law on q >= 1: pmf(q) = p0 (1-p0)^(q-1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricLaw {
    p0: f64,
}

impl GeometricLaw {
    pub fn new(p0: f64) -> Result<GeometricLaw, LawError> {
        check(p0 > 0.0 && p0 <= 1.0, || format!("geometric p0={p0} not in (0,1]"))?;
        Ok(GeometricLaw { p0 })
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.p0
    }

    pub fn pmf(&self, q: u32) -> f64 {
        if q == 0 {
            return 0.0;
        }
        self.p0 * (1.0 - self.p0).powi(q as i32 - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.p0 >= 1.0 {
            return 1;
        }
        let u: f64 = rng.random();
        // Inverse CDF: smallest q with 1-(1-p0)^q > u.
        let q = ((1.0 - u).ln() / (1.0 - self.p0).ln()).floor() as i64 + 1;
        q.max(1).min(u32::MAX as i64) as u32
    }
}

/// Truncated geometric law on 1 <= q <= Q:
/// pmf(q) = p0 (1-p0)^(q-1) / (1 - (1-p0)^Q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGeometricLaw {
    p0: f64,
    q_bound: u32,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl TruncatedGeometricLaw {
    pub fn new(p0: f64, q_bound: u32) -> Result<TruncatedGeometricLaw, LawError> {
        check(p0 > 0.0 && p0 <= 1.0, || format!("truncated geometric p0={p0} not in (0,1]"))?;
        check(q_bound >= 1, || "truncated geometric needs Q >= 1".to_string())?;
        let mut law = TruncatedGeometricLaw { p0, q_bound, cdf: Vec::new() };
        law.rebuild_cdf();
        Ok(law)
    }

    fn rebuild_cdf(&mut self) {
        let mut cdf = Vec::with_capacity(self.q_bound as usize);
        let mut acc = 0.0;
        for q in 1..=self.q_bound {
            acc += self.pmf(q);
            cdf.push(acc);
        }
        self.cdf = cdf;
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn q_bound(&self) -> u32 {
        self.q_bound
    }

    fn normalizer(&self) -> f64 {
        1.0 - (1.0 - self.p0).powi(self.q_bound as i32)
    }

    pub fn pmf(&self, q: u32) -> f64 {
        if q == 0 || q > self.q_bound {
            return 0.0;
        }
        self.p0 * (1.0 - self.p0).powi(q as i32 - 1) / self.normalizer()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_from_cdf(&self.cdf, rng)
    }
}

// Deserialized laws arrive without the cached CDF; rebuild it lazily is not
// possible on an immutable value, so normalize right after deserialization.
impl TruncatedGeometricLaw {
    pub fn ensure_cdf(&mut self) {
        if self.cdf.is_empty() {
            self.rebuild_cdf();
        }
    }
}

/// Binary search of the inverse CDF; values are 1-based.
fn sample_from_cdf<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> u32 {
    debug_assert!(!cdf.is_empty());
    let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
    match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) => i as u32 + 2, // landed exactly on a boundary: next value
        Err(i) => (i as u32 + 1).min(cdf.len() as u32),
    }
    .min(cdf.len() as u32)
}

/// Market-order size mixture: truncated geometric plus Dirac atoms at
/// q = 5k+1 (k = 1..floor((Q-1)/5)) and, when Q != 5n+1, at q = Q.
///
/// When Q = 5n+1 the last regular atom sits at q = Q itself and doubles as
/// the full-clear atom; a separate theta_inf is structurally excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSizeMixture {
    p0: f64,
    q_bound: u32,
    theta0: f64,
    /// Weights of the atoms at q = 5k+1, k = 1..=thetas.len().
    thetas: Vec<f64>,
    /// Weight of the atom at q = Q when Q != 5n+1, else 0.
    theta_inf: f64,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl MarketSizeMixture {
    /// Number of regular atoms for a support bound Q.
    pub fn atom_count(q_bound: u32) -> usize {
        ((q_bound.saturating_sub(1)) / 5) as usize
    }

    /// Whether q = Q coincides with a regular atom position (Q = 5n+1).
    pub fn bound_is_atom(q_bound: u32) -> bool {
        q_bound % 5 == 1
    }

    /// Build from raw weights. Weights must be nonnegative and sum to 1
    /// within 1e-2 (published parameter sets are rounded); they are
    /// renormalized exactly so every pmf sums to 1 within 1e-9.
    pub fn new(
        p0: f64,
        q_bound: u32,
        theta0: f64,
        thetas: Vec<f64>,
        theta_inf: f64,
    ) -> Result<MarketSizeMixture, LawError> {
        check(p0 > 0.0 && p0 <= 1.0, || format!("mixture p0={p0} not in (0,1]"))?;
        check(q_bound >= 1, || "mixture needs Q >= 1".to_string())?;
        check(thetas.len() == Self::atom_count(q_bound), || {
            format!(
                "mixture with Q={q_bound} needs {} atom weights, got {}",
                Self::atom_count(q_bound),
                thetas.len()
            )
        })?;
        check(!Self::bound_is_atom(q_bound) || theta_inf == 0.0, || {
            format!("Q={q_bound} = 5n+1: the last theta_k is the q=Q atom; theta_inf must be 0")
        })?;
        check(
            theta0 >= 0.0 && theta_inf >= 0.0 && thetas.iter().all(|&t| t >= 0.0),
            || "mixture weights must be nonnegative".to_string(),
        )?;
        let sum: f64 = theta0 + thetas.iter().sum::<f64>() + theta_inf;
        check((sum - 1.0).abs() <= 1e-2, || {
            format!("mixture weights sum to {sum}, expected 1 within 1e-2")
        })?;
        let mut law = MarketSizeMixture {
            p0,
            q_bound,
            theta0: theta0 / sum,
            thetas: thetas.iter().map(|t| t / sum).collect(),
            theta_inf: theta_inf / sum,
            cdf: Vec::new(),
        };
        law.rebuild_cdf();
        Ok(law)
    }

    /// Build from a calibration-table row: `[theta0, theta_1, ...]` with the
    /// trailing entry representing theta_inf when Q != 5n+1.
    pub fn from_table_row(q_bound: u32, p0: f64, weights: &[f64]) -> Result<MarketSizeMixture, LawError> {
        let k = Self::atom_count(q_bound);
        let expect = 1 + k + usize::from(!Self::bound_is_atom(q_bound));
        check(weights.len() == expect, || {
            format!("table row for Q={q_bound} needs {expect} weights, got {}", weights.len())
        })?;
        let theta0 = weights[0];
        let thetas = weights[1..=k].to_vec();
        let theta_inf = if Self::bound_is_atom(q_bound) { 0.0 } else { weights[expect - 1] };
        Self::new(p0, q_bound, theta0, thetas, theta_inf)
    }

    fn rebuild_cdf(&mut self) {
        let mut cdf = Vec::with_capacity(self.q_bound as usize);
        let mut acc = 0.0;
        for q in 1..=self.q_bound {
            acc += self.pmf(q);
            cdf.push(acc);
        }
        self.cdf = cdf;
    }

    pub fn ensure_cdf(&mut self) {
        if self.cdf.is_empty() {
            self.rebuild_cdf();
        }
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn q_bound(&self) -> u32 {
        self.q_bound
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn theta_inf(&self) -> f64 {
        self.theta_inf
    }

    /// Dirac component weight at q, zero off the atom grid.
    pub fn atom_weight(&self, q: u32) -> f64 {
        let mut w = 0.0;
        if q >= 6 && (q - 1) % 5 == 0 {
            let k = ((q - 1) / 5) as usize;
            if k >= 1 && k <= self.thetas.len() {
                w += self.thetas[k - 1];
            }
        }
        if q == self.q_bound && !Self::bound_is_atom(self.q_bound) {
            w += self.theta_inf;
        }
        w
    }

    fn trunc_geom_pmf(&self, q: u32) -> f64 {
        if q == 0 || q > self.q_bound {
            return 0.0;
        }
        let norm = 1.0 - (1.0 - self.p0).powi(self.q_bound as i32);
        self.p0 * (1.0 - self.p0).powi(q as i32 - 1) / norm
    }

    pub fn pmf(&self, q: u32) -> f64 {
        if q == 0 || q > self.q_bound {
            return 0.0;
        }
        self.theta0 * self.trunc_geom_pmf(q) + self.atom_weight(q)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_from_cdf(&self.cdf, rng)
    }
}

/// A per-queue-bin size law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SizeLaw {
    /// Always one lot (Model 0).
    Unit,
    Geometric(GeometricLaw),
    TruncatedGeometric(TruncatedGeometricLaw),
    Mixture(MarketSizeMixture),
}

impl SizeLaw {
    pub fn pmf(&self, q: u32) -> f64 {
        match self {
            SizeLaw::Unit => {
                if q == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            SizeLaw::Geometric(g) => g.pmf(q),
            SizeLaw::TruncatedGeometric(t) => t.pmf(q),
            SizeLaw::Mixture(m) => m.pmf(q),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            SizeLaw::Unit => 1,
            SizeLaw::Geometric(g) => g.sample(rng),
            SizeLaw::TruncatedGeometric(t) => t.sample(rng),
            SizeLaw::Mixture(m) => m.sample(rng),
        }
    }

    /// Rebuild any cached CDF after deserialization.
    pub fn ensure_cdf(&mut self) {
        match self {
            SizeLaw::TruncatedGeometric(t) => t.ensure_cdf(),
            SizeLaw::Mixture(m) => m.ensure_cdf(),
            _ => {}
        }
    }
}

/// Generic discrete pmf over values 1..=n (empirical histograms, hidden-limit law).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePmf {
    probs: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl DiscretePmf {
    pub fn new(weights: Vec<f64>) -> Result<DiscretePmf, LawError> {
        check(!weights.is_empty(), || "empty pmf".to_string())?;
        check(weights.iter().all(|&w| w.is_finite() && w >= 0.0), || {
            "pmf weights must be finite and nonnegative".to_string()
        })?;
        let sum: f64 = weights.iter().sum();
        check(sum > 0.0, || "pmf weights sum to zero".to_string())?;
        let probs: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let mut pmf = DiscretePmf { probs, cdf: Vec::new() };
        pmf.rebuild_cdf();
        Ok(pmf)
    }

    /// Point mass at `value`.
    pub fn dirac(value: u32) -> DiscretePmf {
        let mut w = vec![0.0; value as usize];
        w[value as usize - 1] = 1.0;
        DiscretePmf::new(w).expect("dirac pmf")
    }

    fn rebuild_cdf(&mut self) {
        let mut acc = 0.0;
        self.cdf = self
            .probs
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

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn pmf(&self, q: u32) -> f64 {
        if q == 0 || q as usize > self.probs.len() {
            return 0.0;
        }
        self.probs[q as usize - 1]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_from_cdf(&self.cdf, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn truncated_two_point_closed_form() {
        let law = TruncatedGeometricLaw::new(0.5, 2).unwrap();
        assert!((law.pmf(1) - 2.0 / 3.0).abs() < 1e-12);
        assert!((law.pmf(2) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(law.pmf(3), 0.0);
        assert_eq!(law.pmf(0), 0.0);
    }

    #[test]
    fn degenerate_mixture_reduces_to_truncated_geometric() {
        let m = MarketSizeMixture::new(0.4, 12, 1.0, vec![0.0, 0.0], 0.0).unwrap();
        let t = TruncatedGeometricLaw::new(0.4, 12).unwrap();
        for q in 0..=13 {
            assert!((m.pmf(q) - t.pmf(q)).abs() < 1e-12, "q={q}");
        }
    }

    /// Calibrated market order size parameters, rows Q=21 and Q=25.
    pub(crate) fn table_row_q21() -> MarketSizeMixture {
        MarketSizeMixture::from_table_row(21, 0.3486, &[0.8357, 0.0185, 0.0338, 0.0081, 0.1038])
            .unwrap()
    }

    pub(crate) fn table_row_q25() -> MarketSizeMixture {
        MarketSizeMixture::from_table_row(
            25,
            0.3333,
            &[0.8310, 0.0234, 0.0379, 0.0084, 0.0214, 0.0779],
        )
        .unwrap()
    }

    #[test]
    fn table_row_q21_sums_to_one() {
        let m = table_row_q21();
        let total: f64 = (1..=21).map(|q| m.pmf(q)).sum();
        assert!((total - 1.0).abs() < 1e-9, "sum={total}");
        // Q = 21 = 5*4+1: no separate full-clear atom.
        assert_eq!(m.theta_inf(), 0.0);
        assert!(m.atom_weight(21) > 0.10);
    }

    #[test]
    fn table_row_q25_has_full_clear_atom() {
        let m = table_row_q25();
        let total: f64 = (1..=25).map(|q| m.pmf(q)).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(m.theta_inf() > 0.07);
        // Non-atom pmf is exactly theta0 times the truncated geometric.
        let t = TruncatedGeometricLaw::new(m.p0(), 25).unwrap();
        for q in [2u32, 3, 4, 5, 7, 12, 19, 24] {
            assert!((m.pmf(q) - m.theta0() * t.pmf(q)).abs() < 1e-15);
        }
    }

    #[test]
    fn q_eq_5n_plus_1_rejects_theta_inf() {
        let err = MarketSizeMixture::new(0.3, 21, 0.9, vec![0.02, 0.02, 0.02, 0.02], 0.02);
        assert!(err.is_err());
    }

    #[test]
    fn geometric_p0_one_always_one() {
        let g = GeometricLaw::new(1.0).unwrap();
        let mut rng = substream(1, "laws.test");
        for _ in 0..100 {
            assert_eq!(g.sample(&mut rng), 1);
        }
    }

    #[test]
    fn truncated_sampler_matches_pmf() {
        let law = TruncatedGeometricLaw::new(0.5, 2).unwrap();
        let mut rng = substream(2, "laws.test");
        let n = 1_000_000;
        let ones = (0..n).filter(|_| law.sample(&mut rng) == 1).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 2.0 / 3.0).abs() < 0.002, "freq={freq}");
    }

    #[test]
    fn mixture_q25_atom_mass_at_21() {
        let m = table_row_q25();
        let mut rng = substream(3, "laws.test");
        let n = 1_000_000;
        let hits = (0..n).filter(|_| m.sample(&mut rng) == 21).count();
        let freq = hits as f64 / n as f64;
        // Atom weight theta_4 = 0.0214; the geometric component adds < 1e-4 there.
        assert!((freq - 0.0214).abs() < 0.001, "freq={freq}");
    }

    #[test]
    fn geometric_sampler_mean() {
        let g = GeometricLaw::new(0.25).unwrap();
        let mut rng = substream(4, "laws.test");
        let n = 200_000;
        let mean = (0..n).map(|_| g.sample(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 0.05, "mean={mean}");
    }

    #[test]
    fn truncation_converges_to_geometric() {
        for &p0 in &[0.1, 0.3, 0.6, 0.9] {
            let t = TruncatedGeometricLaw::new(p0, 10_000).unwrap();
            let g = GeometricLaw::new(p0).unwrap();
            let sup = (1..=200u32)
                .map(|q| (t.pmf(q) - g.pmf(q)).abs())
                .fold(0.0, f64::max);
            assert!(sup < 1e-9, "p0={p0} sup={sup}");
        }
    }

    #[test]
    fn discrete_pmf_normalizes_and_samples() {
        let pmf = DiscretePmf::new(vec![2.0, 1.0, 1.0]).unwrap();
        assert!((pmf.pmf(1) - 0.5).abs() < 1e-12);
        assert!((pmf.mean() - 1.75).abs() < 1e-12);
        let mut rng = substream(5, "laws.test");
        let n = 100_000;
        let ones = (0..n).filter(|_| pmf.sample(&mut rng) == 1).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);
    }
}
