//! The three conventional allocators on one lattice: Powell over all
//! variables, multi-start gradient descent, and the windowed Snake sweep.

use anyhow::Result;
use qfreq::assignment::DEFAULT_BAND;
use qfreq::baselines::{direct_optim, grad_alg, snake, GradSettings, PowellSettings, SnakeSettings};
use qfreq::designer::sample_graph;
use qfreq::evaluator::{Evaluator, FeatureScale, LossTerms, LossWeights, TheoryEvaluator};

fn main() -> Result<()> {
    let ev = Evaluator::theory(FeatureScale::from_band(DEFAULT_BAND), TheoryEvaluator::default());
    let w = LossWeights::default();
    let g = sample_graph(32, 11)?;
    println!("graph: {} nodes, {} edges", g.node_count(), g.edge_count());

    let direct = direct_optim(&g, &ev, &w, DEFAULT_BAND, 0, &PowellSettings::default())?;
    let grad = grad_alg(&g, &ev, &w, DEFAULT_BAND, 0, &GradSettings::default())?;
    let (sn, trace) = snake(&g, &ev, &w, DEFAULT_BAND, 0, &SnakeSettings::default())?;
    for (name, o) in [("direct", &direct), ("grad", &grad), ("snake", &sn)] {
        println!(
            "{name:<7} loss {:.5} (from {:.5}) after {:>6} evaluations, {:>7.0} ms",
            o.loss, o.initial_loss, o.evals, o.wall_ms
        );
    }
    println!("snake pass losses: {:?}", trace.pass_losses);

    let parts = LossTerms::new(&g).breakdown(&sn.assignment, &ev)?;
    println!("snake result by term: rx {:.5}, ry {:.5}, rxy {:.5}", parts.rx, parts.ry, parts.rxy);
    Ok(())
}
