//! Plot-ready value surfaces and decision maps.
//!
//! Emits CSV grids of the solved tables: entry values over the two queue
//! lengths (positions at the tails), values over positions for a fixed
//! book, and the buy-one-lot decision maps for fixed opposite queues.

use super::{OneUnitSolution, PairSolution};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Entry-state values V(x_b, x_a, y = x_b, y = x_a) and decisions.
pub fn write_entry_surface<W: Write>(sol: &PairSolution, mut w: W) -> std::io::Result<()> {
    writeln!(w, "x_bid,x_ask,value,stay")?;
    for xb in 1..=sol.grid {
        for xa in 1..=sol.grid {
            let v = sol.entry_value(xb, xa);
            writeln!(w, "{xb},{xa},{v:.9},{}", u8::from(sol.stays_by_value(xb, xb, xa, xa)))?;
        }
    }
    Ok(())
}

/// Values over (y_bid, y_ask) for a fixed book (x_b, x_a).
pub fn write_position_surface<W: Write>(
    sol: &PairSolution,
    x_b: u32,
    x_a: u32,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "y_bid,y_ask,value,stay")?;
    for y0 in 1..=x_b.min(sol.grid) {
        for y1 in 1..=x_a.min(sol.grid) {
            let v = sol.value_clamped(x_b, y0, x_a, y1);
            writeln!(w, "{y0},{y1},{v:.9},{}", u8::from(sol.stays_by_value(x_b, y0, x_a, y1)))?;
        }
    }
    Ok(())
}

/// Buy-one-lot values and keep/cancel decisions over (x_own, y) for a
/// fixed opposite queue.
pub fn write_one_unit_map<W: Write>(
    sol: &OneUnitSolution,
    x_opp: u32,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "x_own,y,value,keep")?;
    for x in 1..=sol.grid {
        for y in 1..=x {
            let v = sol.value(x, y, x_opp);
            writeln!(w, "{x},{y},{v:.9},{}", u8::from(sol.keeps(x, y, x_opp)))?;
        }
    }
    Ok(())
}

/// Write the full surface set into a directory; returns the paths.
pub fn write_surfaces(
    pair: &PairSolution,
    one_unit: Option<&OneUnitSolution>,
    dir: &Path,
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();

    let path = dir.join("pair_entry_values.csv");
    write_entry_surface(pair, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    out.push(path);

    // The paper's fixed-book example (300, 200) contracts scales to
    // (30, 20) lots; clamp onto the solved grid.
    let xb = 30.min(pair.grid);
    let xa = 20.min(pair.grid);
    let path = dir.join(format!("pair_position_values_x{xb}_{xa}.csv"));
    write_position_surface(pair, xb, xa, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    out.push(path);

    if let Some(one) = one_unit {
        for x_opp_contracts in [100u32, 140] {
            let x_opp = (x_opp_contracts / crate::book::LOT_CONTRACTS).clamp(1, one.grid);
            let path = dir.join(format!("buy_one_map_xopp{x_opp_contracts}.csv"));
            write_one_unit_map(one, x_opp, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            out.push(path);
        }
    }
    Ok(out)
}
