//! Crosstalk on small circuits: leakage of a single-qubit drive along a
//! chain, a gate's effect on a spectator, and the resonance sweep.

use anyhow::Result;
use qfreq::assignment::FrequencyAssignment;
use qfreq::graph::CouplingGraph;
use qfreq::harness::resonance_scan;
use qfreq::sim::{Axis, PhysicalParams, Simulator};

fn main() -> Result<()> {
    let params = PhysicalParams::default();
    let sim = Simulator::new(params.clone());

    let chain = CouplingGraph::chain(5);
    let nodes = vec![5.00, 5.01, 4.95, 5.06, 4.92];
    let edges = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let a = FrequencyAssignment { node_ghz: nodes, edge_ghz: edges };
    let pops = sim.single_excitations(&chain, &a, 0, Axis::X)?;
    println!("X drive on qubit 0, excitation of the others:");
    for (k, p) in pops.iter().enumerate().skip(1) {
        println!("  qubit {k} at {:.2} GHz: {p:.3e}", a.node_ghz[k]);
    }
    let e = sim.simulate_crosstalk_two(&chain, &a, (1, 2), 3)?;
    println!("gate on (1,2) disturbs qubit 3 by {e:.3e}");

    println!("\nsweep of the drive across a neighbour at the band centre:");
    println!("{:>9} {:>10} {:>10} {:>10}", "detuning", "rx", "ry", "rxy");
    for r in resonance_scan(&params, 0.05, 11)? {
        println!("{:>9.3} {:>10.3e} {:>10.3e} {:>10.3e}", r.detuning, r.rx, r.ry, r.rxy);
    }
    Ok(())
}
