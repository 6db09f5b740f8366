//! The physics-shaped evaluator: a Lorentzian in detuning per operation
//! and distance, fitted to a quarter of the simulated data.

use anyhow::Result;
use qfreq::evaluator::{train_evaluator, EvaluatorKind, FeatureScale, MlpTrainConfig, TheoryTrainConfig};
use qfreq::graph::{small_training_graphs, GraphRole};
use qfreq::sim::{generate_dataset, DatasetConfig, PhysicalParams, Simulator};

fn main() -> Result<()> {
    let params = PhysicalParams::default();
    let sim = Simulator::new(params.clone());
    let graphs: Vec<_> = small_training_graphs().into_iter().filter(|g| g.role == GraphRole::Train).collect();
    let data = generate_dataset(&sim, &graphs, &DatasetConfig::new(300, 7))?;
    let mut split = data.split((0.8, 0.1), 3);
    split.train = split.train.subsample(0.25, 4);

    let (ev, metrics) = train_evaluator(
        EvaluatorKind::Theory,
        &split,
        &[],
        FeatureScale::from_band(params.qubit_band),
        &MlpTrainConfig::default(),
        &TheoryTrainConfig::default(),
    )?;
    println!("fitted a {:?} evaluator on {} records", ev.kind(), split.train.len());
    for (op, sets) in &metrics {
        let t = &sets["test"];
        println!("{op:>4}: test mse {:.4}, R² {:.3}", t.mse, t.r2);
    }
    Ok(())
}
