//! A complete staged run (datasets, evaluator, designer, benchmark) at a
//! small size, then a second run that reuses every artifact.
//!
//!     cargo run --release --example pipeline -- [out_dir]

use anyhow::Result;
use qfreq::harness::{Pipeline, RunConfig};

const CONFIG: &str = r#"
seed = 1

[dataset]
samples_per_graph = 60
new_structure_samples = 20
holdout_samples = 20

[evaluator]
kind = "theory"

[designer]
steps = 100
val_every = 25

[bench]
scales = [16, 32]
repeats = 2
methods = ["designer", "snake", "grad"]
"#;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("qfreq-pipeline"));
    let cfg = RunConfig::from_toml(CONFIG)?;
    for pass in 1..=2 {
        let mut p = Pipeline::open(cfg.clone(), &out)?;
        let records = p.run_all()?;
        let status: Vec<String> = records.iter().map(|r| format!("{} {:?}", r.stage, r.status)).collect();
        println!("pass {pass}: {}", status.join(", "));
    }
    let report = Pipeline::open(cfg, &out)?.bench()?;
    for c in &report.cells {
        println!("{:<10} scale {:>3}: mean loss {:?}", c.method.name(), c.scale, c.mean_loss);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
