//! `lobmm` — calibrate, simulate, solve and backtest the enriched
//! queue-reactive market-making model.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. All randomness
//! derives from the single `--seed` through named substreams, so adding a
//! consumer never perturbs existing results. `LOBMM_THREADS` caps the
//! worker pool.

mod manifest;
mod report;

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use lobmm::backtest::{run_strategy_suite, BacktestConfig};
use lobmm::book::{Side, Q_MAX};
use lobmm::calib::{calibrate, diagnostics, DEFAULT_MIN_COUNT};
use lobmm::mdp::{
    build_one_unit, build_pair, build_pair_extended, surface, PairSolution, ValueIterOptions,
};
use lobmm::model_file::ModelFile;
use lobmm::sim::{estimate_hidden_law, run_batch, ModelSpec, ModelVariant, RunOptions};
use lobmm::stream::{read_stream_file, write_stream_file, StreamRecord};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "lobmm", version, about = "Queue-reactive limit-order-book model toolkit")]
struct Cli {
    /// Flat JSON config file with the same keys as the flags (flags
    /// override the file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate intensities, size laws and regeneration tables from event
    /// streams and write a model.v1 file.
    Calibrate(CalibrateArgs),
    /// Monte Carlo simulation of the calibrated model.
    Simulate(SimulateArgs),
    /// Solve the market-making MDPs by value iteration.
    Solve(SolveArgs),
    /// Replay historical event streams with fictitious maker orders.
    Backtest(BacktestArgs),
    /// Gather run outputs into plot-ready figure data.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Input event-stream files (each file is one session/day; `*` in the
    /// file name globs within its directory).
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Minimum samples per cell before a cell-specific size-law fit.
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u32,
    #[arg(long, default_value_t = Q_MAX)]
    qmax: u32,
    /// Currency per tick per contract.
    #[arg(long, default_value_t = 1.0)]
    tick_size: f64,
    /// Also emit empirical diagnostics CSVs into this directory.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Horizon of the self-consistent hidden-law pre-run, seconds.
    #[arg(long, default_value_t = 20_000.0)]
    hidden_prerun: f64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Calibrated model file.
    #[arg(long, conflicts_with = "preset")]
    model: Option<PathBuf>,
    /// Built-in synthetic preset (`stable` or `enriched`).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "II")]
    variant: ModelVariant,
    /// Horizon per run, seconds.
    #[arg(long, default_value_t = 3600.0)]
    horizon: f64,
    /// Seed set: `0..N`, a single seed, or a comma list.
    #[arg(long, default_value = "0..8")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the simulated event stream (first seed, or per-seed
    /// files when the path contains `{seed}`).
    #[arg(long)]
    emit_events: Option<String>,
    /// Queue-distribution sampling period, seconds.
    #[arg(long, default_value_t = 1.0)]
    sample_period: f64,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long, conflicts_with = "preset")]
    model: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Transition kernel: Model 0 or Model II.
    #[arg(long, default_value = "II")]
    variant: String,
    /// Problem: `buy-one`, `pair` or `pair-ext`.
    #[arg(long, default_value = "pair")]
    problem: String,
    /// Queue grid cap of the decision problem, lots.
    #[arg(long, default_value_t = 20)]
    qmax: u32,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Output value table (`<out>.json` sidecar describes the layout).
    #[arg(long)]
    out: PathBuf,
    /// Also emit value surfaces and decision maps into this directory.
    #[arg(long)]
    surfaces: Option<PathBuf>,
    /// Run the value sweeps sequentially (for benchmarking).
    #[arg(long, default_value_t = false)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct BacktestArgs {
    /// Event-stream files, one per day.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Solved pair value table (values.bin with sidecar).
    #[arg(long)]
    values: PathBuf,
    /// Fixed round-trip latency, microseconds.
    #[arg(long, default_value_t = 200.0)]
    latency_us: f64,
    /// Inventory cap, contracts.
    #[arg(long, default_value_t = 80)]
    max_inv: u32,
    /// Naive-strategy thresholds, contracts (comma list).
    #[arg(long, default_value = "0,250,400")]
    naive_qmin: String,
    /// Rate of the capped exponential cancellation-position law, 1/lot.
    #[arg(long, default_value_t = 0.1)]
    cancel_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    tick_size: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Cumulative P&L series for plotting.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding prior run outputs.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
struct CliError {
    code: u8,
    source: anyhow::Error,
}

fn data_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError { code: 2, source: e.into() }
}

fn usage_err(msg: String) -> CliError {
    CliError { code: 1, source: anyhow!(msg) }
}

/// Inject config-file values as trailing flags so that explicit flags win.
fn argv_with_config() -> Result<Vec<std::ffi::OsString>, CliError> {
    let argv: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let Some(pos) = argv.iter().position(|a| a == "--config") else {
        return Ok(argv);
    };
    let path = argv
        .get(pos + 1)
        .ok_or_else(|| usage_err("--config needs a path".into()))?
        .clone();
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config file {}", Path::new(&path).display()))
        .map_err(data_err)?;
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
        .with_context(|| {
            format!("config file {} is not a flat JSON object", Path::new(&path).display())
        })
        .map_err(data_err)?;
    let mut argv = argv;
    for (key, value) in &map {
        let flag = format!("--{key}");
        if argv.iter().any(|a| *a == *flag.as_str()) {
            continue;
        }
        argv.push(flag.clone().into());
        match value {
            serde_json::Value::String(s) => argv.push(s.into()),
            serde_json::Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        argv.push(flag.clone().into());
                    }
                    argv.push(item.to_string().trim_matches('"').to_string().into());
                }
            }
            other => argv.push(other.to_string().into()),
        }
    }
    Ok(argv)
}

fn main() -> ExitCode {
    lobmm::exec::init_thread_pool_from_env();
    let argv = match argv_with_config() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            return ExitCode::from(e.code);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Backtest(args) => cmd_backtest(args),
        Command::Report(args) => report::cmd_report(&args.run_dir, &args.out).map_err(data_err),
    }
}

/// Expand a `*` in the file-name component against its directory.
fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(star) = name.find('*') {
            let (prefix, suffix) = (&name[..star], &name[star + 1..]);
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
                _ => PathBuf::from("."),
            };
            let mut matches: Vec<PathBuf> = std::fs::read_dir(&dir)
                .with_context(|| format!("listing {}", dir.display()))
                .map_err(data_err)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|f| {
                    f.file_name()
                        .and_then(|n| n.to_str())
                        .map(|n| {
                            n.starts_with(prefix)
                                && n.ends_with(suffix)
                                && n.len() >= prefix.len() + suffix.len()
                        })
                        .unwrap_or(false)
                })
                .collect();
            matches.sort();
            if matches.is_empty() {
                return Err(data_err(anyhow!("no files match {}", p.display())));
            }
            out.extend(matches);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_streams(paths: &[PathBuf]) -> Result<Vec<Vec<StreamRecord>>, CliError> {
    let mut days = Vec::with_capacity(paths.len());
    for p in paths {
        if !p.exists() {
            return Err(data_err(anyhow!("input file not found: {}", p.display())));
        }
        let records = read_stream_file(p).map_err(|e| data_err(anyhow!("{}: {e}", p.display())))?;
        days.push(records);
    }
    Ok(days)
}

fn load_model(model: &Option<PathBuf>, preset: &Option<String>) -> Result<ModelFile, CliError> {
    match (model, preset) {
        (Some(path), None) => {
            if !path.exists() {
                return Err(data_err(anyhow!("model file not found: {}", path.display())));
            }
            ModelFile::load(path).map_err(|e| data_err(anyhow!("{}: {e}", path.display())))
        }
        (None, Some(name)) => lobmm::synthetic::preset(name)
            .ok_or_else(|| usage_err(format!("unknown preset `{name}` (try `stable` or `enriched`)"))),
        _ => Err(usage_err("exactly one of --model or --preset is required".into())),
    }
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let inputs = expand_inputs(&args.input)?;
    let days = load_streams(&inputs)?;
    let set = calibrate(&days, args.qmax, args.min_count, true).map_err(data_err)?;
    let mut file = ModelFile::from_calibration(&set, args.tick_size);
    // Self-consistent hidden-limit law: one pre-run per model, richest
    // variant the calibration supports.
    file.hidden_law = [ModelVariant::ModelII, ModelVariant::ModelI, ModelVariant::Model0]
        .into_iter()
        .find_map(|v| estimate_hidden_law(&file, v, args.seed, args.hidden_prerun).ok());
    file.save(&args.out).map_err(data_err)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(dir) = &args.diagnostics {
        let all: Vec<StreamRecord> = days.iter().flatten().copied().collect();
        let report = diagnostics(&all);
        outputs.extend(report.write_csv(dir).map_err(data_err)?);
        outputs.push(
            lobmm::calib::write_intensity_regimes(&set.symmetric_intensity(), dir)
                .map_err(data_err)?,
        );
    }
    for w in ergodicity_report(&file) {
        eprintln!("warning: {w}");
    }
    manifest::write_manifest(
        &args.out,
        "calibrate",
        serde_json::json!({
            "min_count": args.min_count, "qmax": args.qmax,
            "tick_size": args.tick_size, "seed": args.seed,
        }),
        &inputs,
        &outputs,
    )
    .map_err(data_err)?;
    println!(
        "calibrated {} day(s), {:.0} s of flow -> {}",
        days.len(),
        set.span_s,
        args.out.display()
    );
    Ok(())
}

fn ergodicity_report(file: &ModelFile) -> Vec<String> {
    ModelSpec::from_model_file(file, ModelVariant::Model0)
        .map(|s| s.ergodicity_warnings())
        .unwrap_or_default()
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.parse().map_err(|_| usage_err(format!("bad seed range `{spec}`")))?;
        let b: u64 = b.parse().map_err(|_| usage_err(format!("bad seed range `{spec}`")))?;
        if b <= a {
            return Err(usage_err(format!("empty seed range `{spec}`")));
        }
        Ok((a..b).collect())
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| usage_err(format!("bad seed `{s}`"))))
            .collect()
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let file = load_model(&args.model, &args.preset)?;
    let spec = ModelSpec::from_model_file(&file, args.variant).map_err(data_err)?;
    for w in spec.ergodicity_warnings() {
        eprintln!("warning: {w}");
    }
    let seeds = parse_seeds(&args.seeds)?;
    let stats = run_batch(&spec, &seeds, args.horizon, true).map_err(data_err)?;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&args.out)
            .with_context(|| format!("creating {}", args.out.display()))
            .map_err(data_err)?,
    );
    writeln!(out, "seed,q_bin,freq_bid,freq_ask,price_changes,events_total").map_err(data_err)?;
    for s in &stats {
        for q in 0..s.freq_bid.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.seed, q, s.freq_bid[q], s.freq_ask[q], s.price_changes, s.events_total
            )
            .map_err(data_err)?;
        }
    }
    drop(out);
    let mut outputs = vec![args.out.clone()];
    if let Some(template) = &args.emit_events {
        let emit_seeds: Vec<u64> =
            if template.contains("{seed}") { seeds.clone() } else { vec![seeds[0]] };
        for seed in emit_seeds {
            let opts = RunOptions {
                emit_records: true,
                sample_period_s: args.sample_period,
                ..RunOptions::new(args.horizon, seed)
            };
            let run = lobmm::sim::run(&spec, &opts).map_err(data_err)?;
            let path = PathBuf::from(template.replace("{seed}", &seed.to_string()));
            write_stream_file(&path, &run.records.unwrap()).map_err(data_err)?;
            outputs.push(path);
        }
    }
    let inputs = args.model.iter().cloned().collect::<Vec<_>>();
    manifest::write_manifest(
        &args.out,
        "simulate",
        serde_json::json!({
            "variant": args.variant.to_string(), "horizon": args.horizon,
            "seeds": args.seeds, "preset": args.preset,
        }),
        &inputs,
        &outputs,
    )
    .map_err(data_err)?;
    println!("simulated {} run(s) of {} s -> {}", seeds.len(), args.horizon, args.out.display());
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let file = load_model(&args.model, &args.preset)?;
    let variant = match args.variant.as_str() {
        "0" => ModelVariant::Model0,
        "II" | "2" | "ii" => ModelVariant::ModelII,
        other => return Err(usage_err(format!("--variant must be 0 or II, got `{other}`"))),
    };
    let spec = ModelSpec::from_model_file(&file, variant).map_err(data_err)?;
    let opts = ValueIterOptions { tol: args.tol, parallel: !args.sequential, ..Default::default() };
    // The buy order sits at an arbitrary level with the stop one price
    // move beyond (the 1-tick geometry).
    let one = build_one_unit(&spec, args.qmax, 1_000, 1_002, Side::Bid)
        .map_err(data_err)?
        .solve(&opts)
        .map_err(data_err)?;
    let mut outputs = vec![args.out.clone()];
    let pair_solution: Option<PairSolution> = match args.problem.as_str() {
        "buy-one" => {
            one.save(&args.out, &variant.to_string(), args.tol).map_err(data_err)?;
            println!(
                "buy-one solved on grid {} in {} sweeps (residual {:.2e})",
                args.qmax, one.sweeps, one.residual
            );
            None
        }
        "pair" | "pair-ext" => {
            let problem = if args.problem == "pair" {
                build_pair(&spec, args.qmax, &one).map_err(data_err)?
            } else {
                build_pair_extended(&spec, args.qmax, &one).map_err(data_err)?
            };
            let sol = problem.solve(&opts).map_err(data_err)?;
            sol.save(&args.out, &variant.to_string(), args.tol).map_err(data_err)?;
            println!(
                "{} solved on grid {} in {} sweeps (residual {:.2e})",
                args.problem, args.qmax, sol.sweeps, sol.residual
            );
            Some(sol)
        }
        other => {
            return Err(usage_err(format!(
                "--problem must be buy-one, pair or pair-ext, got `{other}`"
            )))
        }
    };
    outputs.push({
        let mut s = args.out.as_os_str().to_os_string();
        s.push(".json");
        PathBuf::from(s)
    });
    if let Some(dir) = &args.surfaces {
        if let Some(pair) = &pair_solution {
            outputs.extend(surface::write_surfaces(pair, Some(&one), dir).map_err(data_err)?);
        } else {
            std::fs::create_dir_all(dir).map_err(data_err)?;
            for x_opp_contracts in [100u32, 140] {
                let x_opp = (x_opp_contracts / lobmm::book::LOT_CONTRACTS).clamp(1, one.grid);
                let path = dir.join(format!("buy_one_map_xopp{x_opp_contracts}.csv"));
                let f = std::fs::File::create(&path).map_err(data_err)?;
                surface::write_one_unit_map(&one, x_opp, std::io::BufWriter::new(f))
                    .map_err(data_err)?;
                outputs.push(path);
            }
        }
    }
    let inputs = args.model.iter().cloned().collect::<Vec<_>>();
    manifest::write_manifest(
        &args.out,
        "solve",
        serde_json::json!({
            "variant": args.variant, "problem": args.problem,
            "qmax": args.qmax, "tol": args.tol, "preset": args.preset,
        }),
        &inputs,
        &outputs,
    )
    .map_err(data_err)?;
    Ok(())
}

fn cmd_backtest(args: BacktestArgs) -> Result<(), CliError> {
    let inputs = expand_inputs(&args.data)?;
    let days = load_streams(&inputs)?;
    if !args.values.exists() {
        return Err(data_err(anyhow!("value table not found: {}", args.values.display())));
    }
    let values = PairSolution::load(&args.values)
        .map_err(|e| data_err(anyhow!("{}: {e}", args.values.display())))?;
    let naive_qmins: Vec<u32> = args
        .naive_qmin
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| usage_err(format!("bad --naive-qmin `{s}`"))))
        .collect::<Result<_, _>>()?;
    let config = BacktestConfig {
        latency_rt: args.latency_us * 1e-6,
        max_inventory: (args.max_inv / lobmm::book::LOT_CONTRACTS).max(1) as i64,
        cancel_law_rate: args.cancel_rate,
        tick_size: args.tick_size,
        seed: args.seed,
    };
    let suite = run_strategy_suite(&days, &values, &config, &naive_qmins, true);
    let f = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(data_err)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &suite).map_err(data_err)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(curve) = &args.curve {
        let mut w = std::io::BufWriter::new(std::fs::File::create(curve).map_err(data_err)?);
        writeln!(w, "strategy,day,pnl,cum_pnl").map_err(data_err)?;
        for s in &suite.strategies {
            let mut cum = 0.0;
            for (day, pnl) in s.per_day_pnl.iter().enumerate() {
                cum += pnl;
                writeln!(w, "{},{},{:.6},{:.6}", s.name, day, pnl, cum).map_err(data_err)?;
            }
        }
        drop(w);
        outputs.push(curve.clone());
    }
    let mut all_inputs = inputs;
    all_inputs.push(args.values.clone());
    manifest::write_manifest(
        &args.out,
        "backtest",
        serde_json::json!({
            "latency_us": args.latency_us, "max_inv": args.max_inv,
            "naive_qmin": args.naive_qmin, "cancel_rate": args.cancel_rate,
            "tick_size": args.tick_size, "seed": args.seed,
        }),
        &all_inputs,
        &outputs,
    )
    .map_err(data_err)?;
    for s in &suite.strategies {
        println!(
            "{}: mean pnl {:.2} (se {:.2}), turnover {:.0}, profitability {:.2} bp",
            s.name, s.mean_pnl, s.se_pnl, s.total_turnover, s.profitability_bp
        );
    }
    Ok(())
}
