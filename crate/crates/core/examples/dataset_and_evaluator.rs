//! Simulates a small crosstalk dataset on the training graphs, fits the
//! neural evaluator and reports MSE and R² per operation and split.
//!
//!     cargo run --release --example dataset_and_evaluator -- [samples_per_graph] [out.json]

use anyhow::Result;
use qfreq::evaluator::{train_evaluator, EvaluatorKind, FeatureScale, MlpTrainConfig, TheoryTrainConfig};
use qfreq::graph::{small_training_graphs, GraphRole};
use qfreq::sim::{generate_dataset, DatasetConfig, OpKind, PhysicalParams, Simulator};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let samples: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let params = PhysicalParams::default();
    let sim = Simulator::new(params.clone());
    let graphs = small_training_graphs();
    let of = |role| graphs.iter().filter(|g| g.role == role).cloned().collect::<Vec<_>>();

    let train = generate_dataset(&sim, &of(GraphRole::Train), &DatasetConfig::new(samples, 1))?;
    let fresh = generate_dataset(&sim, &of(GraphRole::NewStructure), &DatasetConfig::new(samples / 4 + 1, 2))?;
    for op in OpKind::ALL {
        println!("{}: {} training records", op.name(), train.count(op));
    }

    let split = train.split((0.8, 0.1), 3);
    let mlp = MlpTrainConfig { max_epochs: 150, ..Default::default() };
    let (ev, metrics) = train_evaluator(
        EvaluatorKind::Mlp,
        &split,
        &[("new_structure", &fresh)],
        FeatureScale::from_band(params.qubit_band),
        &mlp,
        &TheoryTrainConfig::default(),
    )?;
    for (op, sets) in &metrics {
        for (set, m) in sets {
            println!("{op:>4} {set:<14} mse {:.4}  R² {:.3}", m.mse, m.r2);
        }
    }
    if let Some(path) = args.get(1) {
        std::fs::write(path, ev.to_json())?;
        println!("saved evaluator to {path}");
    }
    Ok(())
}
