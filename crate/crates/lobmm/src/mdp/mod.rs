//! Markov-decision-process construction and value iteration.
//!
//! The framework: a finite-state jump chain with per-state action sets
//! split into continuation actions (wait for the next transition,
//! possibly relocate an order) and termination actions (cancel and cross,
//! or forced exits). Values satisfy
//!
//! ```text
//! V(s) = max( max_{a in C(s)} v_C(s,a) + sum_s' P(s,s',a) V(s'),
//!             max_{a in T(s)} v_T(s,a) )
//! ```
//!
//! and are approximated from V_0 = 0 by monotone value iteration until the
//! sup-norm increment falls under the tolerance; the greedy policy of the
//! final sweep is returned. Stochastic outcomes with known values
//! (executions, stop-outs) are folded into per-action constants, so
//! kernels only enumerate live transitions.
//!
//! Sweeps are embarrassingly parallel over states against the frozen
//! previous table (double-buffered); see [`crate::exec`].

mod kernel;
mod one_unit;
mod pair;
pub mod problem;
pub mod surface;

pub use kernel::{tri_count, KernelModel};
pub use one_unit::{build_one_unit, OneUnitProblem, OneUnitSolution};
pub use pair::{build_pair, build_pair_extended, PairProblem, PairSolution};
pub use problem::{ContinuationAction, MdpProblem};

use crate::exec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum MdpError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("value iteration did not converge: residual {residual:.3e} after {sweeps} sweeps")]
    NonConvergence { residual: f64, sweeps: u64 },
    #[error("unsupported level geometry: {0}")]
    Geometry(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("io error on value table: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad value-table sidecar: {0}")]
    Sidecar(String),
}

/// A Bellman-backup kernel: everything value iteration needs.
pub trait MdpKernel: Sync {
    fn n_states(&self) -> usize;
    /// Optimal one-step backup of state `s` against the previous value
    /// table, with the greedy action (termination preferred at equality,
    /// then lowest action index).
    fn backup(&self, s: usize, prev: &[f64]) -> (f64, u16);
}

/// Per-state optimal values, in ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

/// Greedy stationary policy: chosen action id per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: Vec<u16>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueTable,
    pub policy: Policy,
    pub sweeps: u64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ValueIterOptions {
    pub tol: f64,
    pub max_sweeps: u64,
    pub parallel: bool,
}

impl Default for ValueIterOptions {
    fn default() -> Self {
        ValueIterOptions { tol: 1e-9, max_sweeps: 1_000_000, parallel: true }
    }
}

/// Monotone value iteration from V_0 = 0.
pub fn value_iterate<K: MdpKernel>(kernel: &K, opts: &ValueIterOptions) -> Result<Solution, MdpError> {
    assert!(opts.tol > 0.0, "tolerance must be positive");
    let n = kernel.n_states();
    let mut prev = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    let mut actions = vec![0u16; n];
    let mut sweeps = 0u64;
    let mut residual = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        {
            let prev_ref = &prev;
            exec::fill_indexed2(&mut next, &mut actions, |s| kernel.backup(s, prev_ref), opts.parallel);
        }
        residual = next
            .iter()
            .zip(prev.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        std::mem::swap(&mut prev, &mut next);
        if residual <= opts.tol {
            return Ok(Solution {
                values: ValueTable { values: prev },
                policy: Policy { actions },
                sweeps,
                residual,
            });
        }
    }
    Err(MdpError::NonConvergence { residual, sweeps })
}

/// Sup-norm Bellman residual of a value table.
pub fn bellman_residual<K: MdpKernel>(kernel: &K, values: &[f64], parallel: bool) -> f64 {
    exec::max_indexed(
        kernel.n_states(),
        |s| (kernel.backup(s, values).0 - values[s]).abs(),
        parallel,
    )
}

/// Sidecar describing a serialized value table (`values.bin` is a raw
/// little-endian f64 array in state-id order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuesSidecar {
    pub schema: String,
    /// `buy-one`, `pair` or `pair-ext`.
    pub problem: String,
    pub variant: String,
    /// Queue grid cap, lots.
    pub grid: u32,
    /// Establishment contexts (1, or 6 for removal-conditioned kernels).
    pub contexts: u32,
    pub n_states: u64,
    pub tol: f64,
    pub layout: String,
}

pub const VALUES_SCHEMA: &str = "values.v1";

pub fn write_values_bin(path: &std::path::Path, values: &[f64]) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_values_bin(path: &std::path::Path) -> std::io::Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "value table length is not a multiple of 8",
        ));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
