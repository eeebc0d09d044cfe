//! The `report` command: gather prior run outputs into plot-ready CSVs.
//!
//! Scans a run directory for simulation statistics (`*stats*.csv`),
//! solved value tables (`*.bin` with a sidecar) and backtest curves
//! (`*pnl*.csv` / `*curve*.csv`), and emits queue-size histograms, value
//! surfaces, decision maps and cumulative P&L series plus an `index.json`.
//! Outputs are deterministic: identical inputs give byte-identical files.

use anyhow::Context;
use lobmm::mdp::{surface, OneUnitSolution, PairSolution};
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn cmd_report(run_dir: &Path, out_dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut emitted: Vec<PathBuf> = Vec::new();
    let mut entries: Vec<PathBuf> = match std::fs::read_dir(run_dir) {
        Ok(rd) => rd.filter_map(|e| e.ok()).map(|e| e.path()).collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();

    for path in &entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".csv") && name.contains("stats") {
            let out = out_dir.join(format!(
                "queue_hist_{}.csv",
                name.trim_end_matches(".csv").replace('.', "_")
            ));
            if let Err(e) = queue_histogram(path, &out) {
                eprintln!("warning: skipping {}: {e:#}", path.display());
                continue;
            }
            emitted.push(out);
        } else if name.ends_with(".bin") {
            let sidecar = PathBuf::from(format!("{}.json", path.display()));
            if !sidecar.exists() {
                continue;
            }
            if let Ok(pair) = PairSolution::load(path) {
                let stem = name.trim_end_matches(".bin").replace('.', "_");
                let dir = out_dir.join(format!("surfaces_{stem}"));
                match surface::write_surfaces(&pair, None, &dir) {
                    Ok(files) => emitted.extend(files),
                    Err(e) => eprintln!("warning: surfaces for {}: {e:#}", path.display()),
                }
            } else if let Ok(one) = OneUnitSolution::load(path) {
                let stem = name.trim_end_matches(".bin").replace('.', "_");
                for x_opp_contracts in [100u32, 140] {
                    let x_opp =
                        (x_opp_contracts / lobmm::book::LOT_CONTRACTS).clamp(1, one.grid);
                    let out = out_dir.join(format!("{stem}_buy_one_xopp{x_opp_contracts}.csv"));
                    let f = std::fs::File::create(&out)?;
                    surface::write_one_unit_map(&one, x_opp, std::io::BufWriter::new(f))?;
                    emitted.push(out);
                }
            }
        } else if name.ends_with(".csv") && (name.contains("pnl") || name.contains("curve")) {
            let out = out_dir.join(name);
            std::fs::copy(path, &out)
                .with_context(|| format!("copying {}", path.display()))?;
            emitted.push(out);
        }
    }

    emitted.sort();
    let index: Vec<String> = emitted.iter().map(|p| p.display().to_string()).collect();
    let index_path = out_dir.join("index.json");
    let f = std::fs::File::create(&index_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &index)?;
    println!("report: {} figure file(s) -> {}", index.len(), out_dir.display());
    Ok(())
}

/// Normalize the per-seed queue-frequency columns of a stats file into a
/// single histogram per side.
fn queue_histogram(stats_csv: &Path, out: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(stats_csv)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    anyhow::ensure!(
        header.starts_with("seed,q_bin,freq_bid,freq_ask"),
        "unexpected stats header `{header}`"
    );
    let mut freq_bid: Vec<u64> = Vec::new();
    let mut freq_ask: Vec<u64> = Vec::new();
    for line in lines {
        let mut f = line.split(',');
        let _seed = f.next();
        let q: usize = f.next().context("q_bin")?.parse()?;
        let fb: u64 = f.next().context("freq_bid")?.parse()?;
        let fa: u64 = f.next().context("freq_ask")?.parse()?;
        if freq_bid.len() <= q {
            freq_bid.resize(q + 1, 0);
            freq_ask.resize(q + 1, 0);
        }
        freq_bid[q] += fb;
        freq_ask[q] += fa;
    }
    let total_bid: u64 = freq_bid.iter().sum();
    let total_ask: u64 = freq_ask.iter().sum();
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(w, "q_bin,p_bid,p_ask")?;
    for q in 0..freq_bid.len() {
        writeln!(
            w,
            "{q},{:.9},{:.9}",
            freq_bid[q] as f64 / total_bid.max(1) as f64,
            freq_ask[q] as f64 / total_ask.max(1) as f64
        )?;
    }
    Ok(())
}
