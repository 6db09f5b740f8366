use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qfreq::graph::{compute_hop_distances, from_json, from_text, normalize_adjacency, to_json, to_text, CouplingGraph};

fn random_graph(seed: u64, n: usize, p: f64) -> CouplingGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(p) {
                edges.push((a, b));
            }
        }
    }
    CouplingGraph::new(n, edges).unwrap()
}

/// Boolean matrix powers: node k is within p hops of i iff (I + A)^p[i][k].
fn reach_within(g: &CouplingGraph, p: usize) -> Vec<Vec<bool>> {
    let n = g.node_count();
    let mut step = vec![vec![false; n]; n];
    for i in 0..n {
        step[i][i] = true;
        for &j in g.neighbors(i) {
            step[i][j] = true;
        }
    }
    let mut acc: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|k| i == k).collect()).collect();
    for _ in 0..p {
        acc = (0..n).map(|i| (0..n).map(|k| (0..n).any(|m| acc[i][m] && step[m][k])).collect()).collect();
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hop_distances_match_boolean_powers(seed in any::<u64>(), n in 1usize..11, p in 0.1f64..0.6) {
        let g = random_graph(seed, n, p);
        let hops = compute_hop_distances(&g, 4);
        for order in 0..=4 {
            let reach = reach_within(&g, order);
            for i in 0..n {
                for k in 0..n {
                    prop_assert_eq!(hops.dist(i, k) as usize <= order, reach[i][k], "{} -> {} at order {}", i, k, order);
                }
                if order >= 1 {
                    let exact: Vec<usize> = (0..n).filter(|&k| reach[i][k] && !reach_within(&g, order - 1)[i][k]).collect();
                    prop_assert_eq!(hops.at_order(order, i).to_vec(), exact);
                }
            }
        }
    }

    #[test]
    fn normalized_powers_are_symmetric_and_nonnegative(seed in any::<u64>(), n in 1usize..11) {
        let g = random_graph(seed, n, 0.35);
        let adj = normalize_adjacency(&compute_hop_distances(&g, 3), 3);
        for p in 0..=3 {
            let m = adj.get(p);
            for i in 0..n {
                for k in 0..n {
                    prop_assert!(m.get(i, k) >= 0.0);
                    prop_assert!((m.get(i, k) - m.get(k, i)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn formats_round_trip(seed in any::<u64>(), n in 1usize..15) {
        let g = random_graph(seed, n, 0.3);
        prop_assert_eq!(from_text(&to_text(&g)).unwrap(), g.clone());
        prop_assert_eq!(from_json(&to_json(&g)).unwrap(), g);
    }

    #[test]
    fn relabel_preserves_distances(seed in any::<u64>(), n in 2usize..11) {
        let g = random_graph(seed, n, 0.4);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let h = g.relabel(&perm);
        let (dg, dh) = (compute_hop_distances(&g, 4), compute_hop_distances(&h, 4));
        for i in 0..n {
            for k in 0..n {
                prop_assert_eq!(dg.dist(i, k), dh.dist(perm[i], perm[k]));
            }
        }
    }
}

#[test]
fn malformed_graphs_are_rejected() {
    assert!(CouplingGraph::new(3, [(0, 0)]).is_err());
    assert!(CouplingGraph::new(3, [(0, 3)]).is_err());
    assert!(from_text("nodes 2\nedge 0 5").is_err());
}
