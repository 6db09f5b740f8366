//! Coupling graphs: construction, hop distances, normalized adjacency
//! powers, file formats and the random lattice generator.

use anyhow::Result;
use qfreq::graph::{compute_hop_distances, from_text, normalize_adjacency, parse_any, to_json, to_text, CouplingGraph, MediumGraphSpec};

fn main() -> Result<()> {
    let g = CouplingGraph::grid(3, 4);
    println!("3x4 grid: {} nodes, {} edges, connected = {}", g.node_count(), g.edge_count(), g.is_connected());

    let hops = compute_hop_distances(&g, 4);
    println!("hop distance 0 -> 11: {}", hops.dist(0, 11));
    for p in 1..=4 {
        println!("  nodes exactly {p} hops from 0: {:?}", hops.at_order(p, 0));
    }

    // Ã^p rows are normalized reachability with a self-loop
    let adj = normalize_adjacency(&hops, 3);
    for p in 0..=adj.order() {
        let m = adj.get(p);
        let row: f64 = m.row(5).iter().map(|&(_, v)| v).sum();
        println!("Ã^{p}: nnz {:>3}, row 5 sums to {row:.3}", m.nnz());
    }

    let text = to_text(&g);
    assert_eq!(from_text(&text)?, g);
    assert_eq!(parse_any(&to_json(&g))?, g);
    println!("edge-list format:\n{}", text.lines().take(4).collect::<Vec<_>>().join("\n"));

    for mean in [32, 54, 103, 218, 450] {
        let spec = MediumGraphSpec::for_mean_nodes(mean);
        let sizes: Vec<usize> = (0..5).map(|s| spec.sample(s).map(|g| g.node_count())).collect::<Result<_, _>>()?;
        println!("lattice {}x{} for ~{mean} nodes: sampled sizes {sizes:?}", spec.rows, spec.cols);
    }
    Ok(())
}
