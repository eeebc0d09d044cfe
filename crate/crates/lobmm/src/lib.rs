//! Enriched queue-reactive limit-order-book model.
//!
//! The crate models the best bid/ask queues of a large-tick instrument as
//! a queue-reactive jump process with calibrated order-size laws and
//! non-Markovian limit regeneration, and builds on top of it:
//!
//! * [`book`] — two-limit book state, events, size binning;
//! * [`laws`] / [`regen`] — order-size distributions and conditional
//!   regeneration tables with deterministic samplers;
//! * [`calib`] — intensity, size-law (MLE/EM) and regeneration estimation
//!   from tick event streams, plus empirical diagnostics;
//! * [`sim`] — event-driven Monte Carlo engine (Models 0, I, II);
//! * [`mdp`] — Markov-decision-process construction and value iteration
//!   for keep-or-cancel and spread-making strategies;
//! * [`backtest`] — historical replay with fictitious maker orders;
//! * [`eval`] — strategy evaluation inside the simulator.
//!
//! Hot loops are data-parallel via rayon (default `parallel` feature) with
//! a sequential fallback; see [`exec`].

pub mod backtest;
pub mod book;
pub mod calib;
pub mod eval;
pub mod exec;
pub mod laws;
pub mod mdp;
pub mod model_file;
pub mod regen;
pub mod rng;
pub mod sim;
pub mod stream;
pub mod synthetic;
