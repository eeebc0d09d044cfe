use lobmm::book::{EventKind, Side};
use lobmm::eval::{monte_carlo_eval, EvalConfig, EvalStrategy};
use lobmm::mdp::{build_one_unit, build_pair, ValueIterOptions};
use lobmm::sim::{run, ModelSpec, ModelVariant, RunOptions};
use lobmm::synthetic;
use std::time::Instant;

fn main() {
    // --- Criterion 6: Model-0 pair positivity at desk scale ---
    let stable = synthetic::stable_model0(29.5);
    let spec0 = ModelSpec::from_model_file(&stable, ModelVariant::Model0).unwrap();
    let t0 = Instant::now();
    let one = build_one_unit(&spec0, 20, 100, 102, Side::Bid).unwrap().solve(&ValueIterOptions::default()).unwrap();
    println!("one-unit M0 grid20: sweeps={} in {:?}", one.sweeps, t0.elapsed());
    let t0 = Instant::now();
    let pair = build_pair(&spec0, 20, &one).unwrap().solve(&ValueIterOptions::default()).unwrap();
    println!("pair M0 grid20: sweeps={} in {:?}", pair.sweeps, t0.elapsed());
    let min = pair.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let neg = pair.values.iter().filter(|v| **v <= 0.0).count();
    println!("pair M0 min value = {min:.4}, non-positive states = {neg}/{}", pair.values.len());

    // --- Criterion 8: stationary mode ---
    let t0 = Instant::now();
    let run0 = run(&spec0, &RunOptions::new(100_000.0, 17)).unwrap();
    println!("sim 1e5 s in {:?}, events={}", t0.elapsed(), run0.stats.events_total);
    let dist = run0.stats.queue_distribution(Side::Bid);
    let mode = dist.iter().enumerate().skip(1).max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
    println!("empirical mode = {mode} (crossing at 29.5→30)");

    // --- Criterion 7 direction: Model II ordering ---
    let enriched = synthetic::enriched_model2(10.0);
    let spec2 = ModelSpec::from_model_file(&enriched, ModelVariant::ModelII).unwrap();
    let t0 = Instant::now();
    let one2 = build_one_unit(&spec2, 20, 100, 102, Side::Bid).unwrap().solve(&ValueIterOptions::default()).unwrap();
    let pair2 = build_pair(&spec2, 20, &one2).unwrap().solve(&ValueIterOptions::default()).unwrap();
    println!("ModelII solves: one sweeps={}, pair sweeps={} in {:?}", one2.sweeps, pair2.sweeps, t0.elapsed());
    let min2 = pair2.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let pos2 = pair2.values.iter().filter(|v| **v > 0.0).count();
    println!("pair MII min={min2:.4}, positive {pos2}/{}", pair2.values.len());
    let entry_frac = {
        let mut pos = 0; let mut tot = 0;
        for xb in 1..=20u32 { for xa in 1..=20u32 { tot += 1; if pair2.entry_value(xb, xa) > 0.0 { pos += 1; } } }
        (pos, tot)
    };
    println!("MII entry states positive: {}/{}", entry_frac.0, entry_frac.1);

    let t0 = Instant::now();
    let cfg_opt = EvalConfig { horizon_s: 3600.0, runs: 200, seed: 42, max_inventory: None, tick_size: 1.0 };
    let opt = monte_carlo_eval(&spec2, EvalStrategy::LocallyOptimal { values: &pair2 }, &cfg_opt, true).unwrap();
    let cfg_naive = EvalConfig { horizon_s: 600.0, runs: 200, seed: 43, max_inventory: None, tick_size: 1.0 };
    let naive = monte_carlo_eval(&spec2, EvalStrategy::Naive, &cfg_naive, true).unwrap();
    println!("eval in {:?}", t0.elapsed());
    println!("opt:   mean={:.3} se={:.3} |inv|={:.2} turn={:.1}", opt.mean_pnl, opt.se_pnl, opt.mean_abs_inventory, opt.mean_turnover_contracts);
    println!("naive: mean={:.3} se={:.3} |inv|={:.2} turn={:.1}", naive.mean_pnl, naive.se_pnl, naive.mean_abs_inventory, naive.mean_turnover_contracts);
    let z = (opt.mean_pnl - naive.mean_pnl) / (opt.se_pnl.powi(2) + naive.se_pnl.powi(2)).sqrt();
    println!("Z = {z:.2}");
    let _ = EventKind::Limit;
}
