//! Side-by-side benchmark of the designer and the baselines on shared
//! graphs, written as CSV.
//!
//!     cargo run --release --example benchmark -- <evaluator.json> <designer.json> [out.csv]

use anyhow::{Context, Result};
use qfreq::designer::Designer;
use qfreq::evaluator::{Evaluator, LossWeights};
use qfreq::harness::{benchmark, to_csv, BenchSection, Method};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ev_path = args.first().context("usage: benchmark <evaluator.json> <designer.json> [out.csv]")?;
    let ds_path = args.get(1).context("missing designer file")?;
    let ev = Evaluator::from_json(&std::fs::read_to_string(ev_path)?)?;
    let designer = Designer::from_json(&std::fs::read_to_string(ds_path)?)?;

    let cfg = BenchSection {
        scales: vec![32, 54],
        repeats: 3,
        methods: vec![Method::Designer, Method::Snake, Method::Direct, Method::Grad],
        ..Default::default()
    };
    let report = benchmark(&cfg, &LossWeights::default(), &ev, Some(&designer), designer.band, 0)?;
    println!("{:<18} {:>5} {:>10} {:>10} {:>10}", "method", "scale", "mean", "std", "ms");
    for c in &report.cells {
        match (&c.skipped, c.mean_loss, c.std_loss, c.mean_wall_ms) {
            (None, Some(m), Some(s), Some(t)) => println!("{:<18} {:>5} {m:>10.5} {s:>10.5} {t:>10.0}", c.method.name(), c.scale),
            (reason, ..) => println!("{:<18} {:>5} skipped: {}", c.method.name(), c.scale, reason.as_deref().unwrap_or("")),
        }
    }
    if let Some(out) = args.get(2) {
        std::fs::write(out, to_csv(&report.rows)?)?;
        println!("rows written to {out}");
    }
    Ok(())
}
