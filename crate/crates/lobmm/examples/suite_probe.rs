use lobmm::backtest::{run_strategy_suite, BacktestConfig};
use lobmm::book::Side;
use lobmm::calib::calibrate;
use lobmm::mdp::{build_one_unit, build_pair, ValueIterOptions};
use lobmm::model_file::ModelFile;
use lobmm::sim::{run, ModelSpec, ModelVariant, RunOptions};
use lobmm::synthetic;
use std::time::Instant;

fn main() {
    let file = synthetic::enriched_model2(10.0);
    let spec = ModelSpec::from_model_file(&file, ModelVariant::ModelII).unwrap();

    // Calibration data: 10 hours of simulated flow.
    let t0 = Instant::now();
    let calib_days: Vec<_> = (0..10u64)
        .map(|s| {
            let opts = RunOptions { emit_records: true, ..RunOptions::new(3600.0, 1000 + s) };
            run(&spec, &opts).unwrap().records.unwrap()
        })
        .collect();
    let set = calibrate(&calib_days, 50, 50, true).unwrap();
    let cal_file = {
        let mut f = ModelFile::from_calibration(&set, 1.0);
        f.hidden_law = file.hidden_law.clone();
        f
    };
    println!("calibrated in {:?}", t0.elapsed());
    let cal_spec = ModelSpec::from_model_file(&cal_file, ModelVariant::ModelII).unwrap();

    let t0 = Instant::now();
    let one = build_one_unit(&cal_spec, 20, 100, 102, Side::Bid).unwrap().solve(&ValueIterOptions::default()).unwrap();
    let pair = build_pair(&cal_spec, 20, &one).unwrap().solve(&ValueIterOptions::default()).unwrap();
    println!("solved on calibrated model in {:?}", t0.elapsed());
    let pos_entries = (1..=20u32).flat_map(|xb| (1..=20u32).map(move |xa| (xb, xa)))
        .filter(|&(xb, xa)| pair.entry_value(xb, xa) > 0.0).count();
    println!("calibrated-model positive entries: {pos_entries}/400");

    // 200 pseudo-days of 10 minutes each.
    let t0 = Instant::now();
    let days: Vec<_> = (0..200u64)
        .map(|s| {
            let opts = RunOptions { emit_records: true, ..RunOptions::new(600.0, 5000 + s) };
            run(&spec, &opts).unwrap().records.unwrap()
        })
        .collect();
    println!("generated 200 pseudo-days in {:?}", t0.elapsed());
    let t0 = Instant::now();
    let cfg = BacktestConfig { seed: 77, ..Default::default() };
    let suite = run_strategy_suite(&days, &pair, &cfg, &[0], true);
    println!("suite in {:?}", t0.elapsed());
    for s in &suite.strategies {
        println!("{}: mean={:.2} se={:.2} fills={} turn={:.0}", s.name, s.mean_pnl, s.se_pnl, s.fills, s.total_turnover);
    }
    let a = &suite.strategies[0];
    let b = &suite.strategies[1];
    let z = (a.mean_pnl - b.mean_pnl) / (a.se_pnl.powi(2) + b.se_pnl.powi(2)).sqrt();
    println!("Z(opt - naive0) = {z:.2}");
}
