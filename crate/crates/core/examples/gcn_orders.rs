//! Designers with first-order and third-order graph convolutions at a
//! matched parameter budget, trained under the same schedule.
//!
//!     cargo run --release --example gcn_orders -- [evaluator.json] [steps]

use anyhow::Result;
use qfreq::assignment::DEFAULT_BAND;
use qfreq::designer::{compare_gcn_orders, DesignerTrainConfig};
use qfreq::evaluator::{Evaluator, FeatureScale, TheoryEvaluator};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ev = match args.first() {
        Some(p) => Evaluator::from_json(&std::fs::read_to_string(p)?)?,
        None => Evaluator::theory(FeatureScale::from_band(DEFAULT_BAND), TheoryEvaluator::default()),
    };
    let steps = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let cfg = DesignerTrainConfig { steps, batch: 8, val_every: 100, ..DesignerTrainConfig::desk() };
    for r in compare_gcn_orders(&[1, 2, 3], &cfg, &ev, DEFAULT_BAND)? {
        println!(
            "order {}: width {:>2}, {:>5} params, final train loss {:.5}, best validation {:.5}",
            r.order, r.node_width, r.params, r.final_train_loss, r.best_val
        );
    }
    Ok(())
}
