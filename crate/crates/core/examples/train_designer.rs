//! Trains the graph designer against an evaluator and uses it on an unseen
//! lattice, comparing best-of-N designs with random assignments.
//!
//!     cargo run --release --example train_designer -- [evaluator.json] [steps]
//!
//! Without an evaluator file the untrained physics prior is used.

use anyhow::Result;
use rand::SeedableRng;

use qfreq::assignment::{FrequencyAssignment, DEFAULT_BAND};
use qfreq::designer::{batched_design, sample_graph, train_designer, DesignerTrainConfig};
use qfreq::evaluator::{graph_loss, Evaluator, FeatureScale, LossTerms, LossWeights, TheoryEvaluator};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ev = match args.first() {
        Some(p) => Evaluator::from_json(&std::fs::read_to_string(p)?)?,
        None => Evaluator::theory(FeatureScale::from_band(DEFAULT_BAND), TheoryEvaluator::default()),
    };
    let steps = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let cfg = DesignerTrainConfig { steps, val_every: 50, ..DesignerTrainConfig::desk() };
    let (model, report) = train_designer(&cfg, &ev, DEFAULT_BAND)?;
    println!(
        "{} parameters; validation loss {:.5} -> {:.5} (best at step {})",
        model.param_count(),
        report.initial_val,
        report.best_val,
        report.best_step
    );

    let g = sample_graph(54, 2024)?;
    let w = LossWeights::default();
    let terms = LossTerms::new(&g);
    for batch in [1, 32, 512] {
        let (_, loss) = batched_design(&model, &g, &ev, &w, batch, 0)?;
        println!("best of {batch:>3} designs on {} nodes: {loss:.5}", g.node_count());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let random = (0..512)
        .map(|_| graph_loss(&terms, &FrequencyAssignment::uniform(&g, DEFAULT_BAND, &mut rng), &ev, &w))
        .collect::<Result<Vec<_>, _>>()?;
    println!("best of 512 random assignments: {:.5}", random.iter().cloned().fold(f64::INFINITY, f64::min));
    Ok(())
}
