use approx::assert_relative_eq;
use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use qfreq::assignment::FrequencyAssignment;
use qfreq::graph::CouplingGraph;
use qfreq::sim::*;

type C = Complex<f64>;

fn assignment(nodes: &[f64], edges: &[f64]) -> FrequencyAssignment {
    FrequencyAssignment {
        node_ghz: nodes.to_vec(),
        edge_ghz: edges.to_vec(),
    }
}

/// Block Hamiltonian assembled entry by entry from the occupation numbers,
/// without the Fock-basis helpers.
fn reference_block(w: [f64; 3], alpha: f64, gqc: f64, gqq: f64) -> DMatrix<f64> {
    let idx = |a: usize, b: usize, c: usize| a + 3 * b + 9 * c;
    let mut h = DMatrix::zeros(27, 27);
    let couple = [(0usize, 2usize, gqc), (1, 2, gqc), (0, 1, gqq)];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                let occ = [a, b, c];
                let n = idx(a, b, c);
                h[(n, n)] = (0..3)
                    .map(|m| w[m] * occ[m] as f64 + alpha / 2.0 * (occ[m] * occ[m]) as f64 - alpha / 2.0 * occ[m] as f64)
                    .sum();
                for &(i, j, g) in &couple {
                    if occ[j] > 0 && occ[i] < 2 {
                        let mut t = occ;
                        t[j] -= 1;
                        t[i] += 1;
                        let m = idx(t[0], t[1], t[2]);
                        let v = g * (occ[j] as f64).sqrt() * (occ[i] as f64 + 1.0).sqrt();
                        h[(m, n)] += v;
                        h[(n, m)] += v;
                    }
                }
            }
        }
    }
    h
}

/// Jacobi eigenvalue iteration, independent of the library eigensolver.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut e: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    e.sort_by(f64::total_cmp);
    e
}

#[test]
fn block_spectrum_matches_reference_assembly() {
    let p = PhysicalParams::default();
    let block = BuildingBlock {
        omega_q0: 4.97,
        omega_q1: 5.04,
        omega_c: 6.08,
    };
    let h = build_block_hamiltonian(&block, &p, None).unwrap();
    let reference = reference_block([4.97, 5.04, 6.08], p.alpha, p.g_qc, p.g_qq);
    // Same operator in a different state ordering: compare spectra.
    let ours = Propagator::new(&h);
    let mut e: Vec<f64> = ours.energies().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    let r = jacobi_eigenvalues(reference);
    for (a, b) in e.iter().zip(&r) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn zz_magnitude_shrinks_as_coupler_detuning_doubles() {
    let p = PhysicalParams::default();
    let near = g_zz_eff(
        &BuildingBlock {
            omega_q0: 5.0,
            omega_q1: 5.0,
            omega_c: 5.5,
        },
        &p,
    )
    .unwrap();
    let far = g_zz_eff(
        &BuildingBlock {
            omega_q0: 5.0,
            omega_q1: 5.0,
            omega_c: 6.0,
        },
        &p,
    )
    .unwrap();
    assert!(far.abs() < near.abs(), "{far} vs {near}");
}

#[test]
fn zz_sign_change_exists_across_band() {
    let p = PhysicalParams::default();
    for &(a, b) in &[(4.9, 4.9), (4.9, 5.1), (5.0, 5.0), (5.1, 5.1)] {
        let wc = solve_zz_free(a, b, &p).unwrap();
        let g = g_zz_eff(
            &BuildingBlock {
                omega_q0: a,
                omega_q1: b,
                omega_c: wc,
            },
            &p,
        )
        .unwrap();
        assert!(g.abs() < 1e-6);
        let lo = g_zz_eff(&BuildingBlock { omega_q0: a, omega_q1: b, omega_c: wc - 0.05 }, &p).unwrap();
        let hi = g_zz_eff(&BuildingBlock { omega_q0: a, omega_q1: b, omega_c: wc + 0.05 }, &p).unwrap();
        assert!(lo * hi < 0.0);
    }
}

#[test]
fn zz_free_line_is_continuous_at_fine_resolution() {
    let p = PhysicalParams::default();
    let mut prev = solve_zz_free(5.0, 4.95, &p).unwrap();
    for s in 1..=20 {
        let w = 4.95 + 0.001 * s as f64;
        let wc = solve_zz_free(5.0, w, &p).unwrap();
        assert!((wc - prev).abs() < 0.005);
        prev = wc;
    }
}

#[test]
fn one_node_graph_is_a_single_transmon() {
    let sim = Simulator::new(PhysicalParams::default());
    let g = CouplingGraph::new(1, []).unwrap();
    let (basis, h) = sim
        .effective_graph_hamiltonian(&g, &assignment(&[5.0], &[]), Scenario::Idle)
        .unwrap();
    assert_eq!(basis.dim(), 3);
    assert_relative_eq!(h[(1, 1)].re, 5.0);
    assert_relative_eq!(h[(2, 2)].re, 10.0 - 0.3);
}

#[test]
fn two_node_coupling_is_the_effective_exchange() {
    let p = PhysicalParams::default();
    let sim = Simulator::new(p.clone());
    let g = CouplingGraph::chain(2);
    let a = assignment(&[4.92, 5.08], &[5.0]);
    let (basis, h) = sim.effective_graph_hamiltonian(&g, &a, Scenario::Idle).unwrap();
    let wc = solve_zz_free(4.92, 5.08, &p).unwrap();
    let expect = g_xy_eff(4.92, 5.08, wc, &p).unwrap();
    let i10 = basis.index(&[1, 0]).unwrap();
    let i01 = basis.index(&[0, 1]).unwrap();
    assert_relative_eq!(h[(i10, i01)].re, expect, epsilon = 1e-15);
}

#[test]
fn gate_scenario_moves_endpoint_frequency() {
    let p = PhysicalParams::default();
    let sim = Simulator::new(p.clone());
    let g = CouplingGraph::chain(3);
    let a = assignment(&[4.92, 5.08, 4.97], &[5.0, 5.02]);
    let (basis, h) = sim
        .effective_graph_hamiltonian(&g, &a, Scenario::TwoQubitGate { a: 0, b: 1 })
        .unwrap();
    let wc = solve_zz_free(5.0, 4.97, &p).unwrap();
    let expect = g_xy_eff(5.0, 4.97, wc, &p).unwrap();
    let i010 = basis.index(&[0, 1, 0]).unwrap();
    let i001 = basis.index(&[0, 0, 1]).unwrap();
    assert_relative_eq!(h[(i010, i001)].re, expect, epsilon = 1e-15);
}

#[test]
fn iswap_period_swaps_excitation() {
    let g = 0.002;
    let h = DMatrix::from_row_slice(2, 2, &[C::new(0.0, 0.0), C::new(g, 0.0), C::new(g, 0.0), C::new(0.0, 0.0)]);
    let psi = DVector::from_vec(vec![C::new(1.0, 0.0), C::new(0.0, 0.0)]);
    let out = evolve(&h, &psi, 1.0 / (4.0 * g)).unwrap();
    assert!((out[1].norm_sqr() - 1.0).abs() < 1e-12);
}

#[test]
fn truncated_basis_matches_full_basis() {
    let p = PhysicalParams::default();
    let full = Simulator::with_caps(p.clone(), BasisCaps::full());
    let trunc = Simulator::new(p);
    let g = CouplingGraph::chain(4);
    let a = assignment(&[5.0, 5.01, 4.95, 5.07], &[5.005, 4.98, 5.0]);
    let ef = full.single_excitations(&g, &a, 1, Axis::X).unwrap();
    let et = trunc.single_excitations(&g, &a, 1, Axis::X).unwrap();
    for k in [0, 2, 3] {
        assert!((ef[k] - et[k]).abs() <= 1e-3 * ef[k] + 1e-12, "{k}: {} vs {}", ef[k], et[k]);
    }
    let tf = full.two_excitations(&g, &a, 1, 2).unwrap();
    let tt = trunc.two_excitations(&g, &a, 1, 2).unwrap();
    for k in [0, 3] {
        assert!((tf[k] - tt[k]).abs() <= 1e-9 * tf[k] + 1e-14);
    }
}

#[test]
fn far_detuned_three_hop_target_is_below_threshold() {
    let sim = Simulator::new(PhysicalParams::default());
    let g = CouplingGraph::chain(4);
    let a = assignment(&[5.0, 4.95, 5.05, 4.9], &[4.97, 5.0, 5.0]);
    let e = sim.simulate_crosstalk_single(&g, &a, 0, 3, Axis::X).unwrap();
    assert!(e < 1e-4, "{e}");
}

#[test]
fn resonance_peaks_single_qubit_crosstalk() {
    let sim = Simulator::new(PhysicalParams::default());
    let g = CouplingGraph::chain(2);
    let wk = 5.0;
    let grid: Vec<f64> = (0..41).map(|s| 4.9 + 0.005 * s as f64).collect();
    let errs: Vec<f64> = grid
        .iter()
        .map(|&wi| {
            let a = assignment(&[wi, wk], &[(wi + wk) / 2.0]);
            sim.simulate_crosstalk_single(&g, &a, 0, 1, Axis::X).unwrap()
        })
        .collect();
    let arg = (0..grid.len()).max_by(|&x, &y| errs[x].total_cmp(&errs[y])).unwrap();
    assert!((grid[arg] - wk).abs() < 0.0051);
}

#[test]
fn symmetric_chain_error_is_even_in_detuning() {
    let sim = Simulator::new(PhysicalParams::default());
    let g = CouplingGraph::chain(3);
    for delta in [0.002, 0.005, 0.01] {
        let plus = assignment(&[5.0 + delta, 5.0, 5.0 + delta], &[5.0, 5.0]);
        let minus = assignment(&[5.0 - delta, 5.0, 5.0 - delta], &[5.0, 5.0]);
        let ep = sim.simulate_crosstalk_single(&g, &plus, 0, 1, Axis::X).unwrap();
        let em = sim.simulate_crosstalk_single(&g, &minus, 0, 1, Axis::X).unwrap();
        assert!((ep - em).abs() <= 0.05 * ep.max(em), "{ep} vs {em}");
    }
}

#[test]
fn distant_gate_target_is_below_threshold() {
    let sim = Simulator::new(PhysicalParams::default());
    let g = CouplingGraph::chain(6);
    let a = assignment(&[5.0, 5.0, 4.95, 5.05, 4.92, 5.0], &[5.0, 4.97, 5.0, 5.0, 4.95]);
    let e = sim.simulate_crosstalk_two(&g, &a, (0, 1), 5).unwrap();
    assert!(e < 1e-4, "{e}");
}

#[test]
fn gate_crosstalk_peaks_when_gate_frequency_hits_neighbor() {
    let sim = Simulator::new(PhysicalParams::default());
    let g = CouplingGraph::chain(3);
    let wk = 5.0;
    let grid: Vec<f64> = (0..21).map(|s| 4.95 + 0.005 * s as f64).collect();
    let errs: Vec<f64> = grid
        .iter()
        .map(|&wij| {
            let a = assignment(&[4.9, 5.1, wk], &[wij, 5.05]);
            sim.simulate_crosstalk_two(&g, &a, (0, 1), 2).unwrap()
        })
        .collect();
    let arg = (0..grid.len()).max_by(|&x, &y| errs[x].total_cmp(&errs[y])).unwrap();
    assert!((grid[arg] - wk).abs() < 0.0051, "peak at {}", grid[arg]);
}

#[test]
fn stronger_residuals_do_not_reduce_gate_crosstalk() {
    let base = PhysicalParams::default();
    let doubled = PhysicalParams {
        residual_2hop: 2.0 * base.residual_2hop,
        residual_3hop: 2.0 * base.residual_3hop,
        ..base.clone()
    };
    let g = CouplingGraph::chain(4);
    let a = assignment(&[4.95, 5.05, 4.93, 5.0], &[5.0, 4.99, 4.96]);
    let e1 = Simulator::new(base).simulate_crosstalk_two(&g, &a, (0, 1), 3).unwrap();
    let e2 = Simulator::new(doubled).simulate_crosstalk_two(&g, &a, (0, 1), 3).unwrap();
    assert!(e2 >= e1, "{e2} < {e1}");
}

#[test]
fn zero_strength_partner_reproduces_single_operation() {
    let sim = Simulator::new(PhysicalParams::default());
    let g = CouplingGraph::chain(3);
    let a = assignment(&[5.02, 5.0, 4.93], &[5.01, 4.96]);
    let alone = sim.simulate_crosstalk_single(&g, &a, 0, 1, Axis::X).unwrap();
    let ops = [
        ScheduledOp::new(Operation::Single { qubit: 0, axis: Axis::X }),
        ScheduledOp {
            op: Operation::Single { qubit: 2, axis: Axis::X },
            strength: 0.0,
        },
    ];
    let both = sim.simulate_simultaneous(&g, &a, &ops, 1).unwrap();
    assert!((alone - both).abs() < 1e-10);
}

#[test]
fn overlapping_sources_are_rejected() {
    let sim = Simulator::new(PhysicalParams::default());
    let g = CouplingGraph::chain(4);
    let a = assignment(&[5.0; 4], &[5.0; 3]);
    let ops = [
        ScheduledOp::new(Operation::Two { a: 0, b: 1 }),
        ScheduledOp::new(Operation::Two { a: 1, b: 2 }),
    ];
    assert!(sim.simulate_simultaneous(&g, &a, &ops, 3).is_err());
}

#[test]
fn dataset_respects_distance_rule_and_clamp() {
    let sim = Simulator::new(PhysicalParams::default());
    let graphs = vec![qfreq::graph::NamedGraph {
        name: "chain6".into(),
        role: qfreq::graph::GraphRole::Train,
        graph: CouplingGraph::chain(6),
    }];
    let ds = generate_dataset(&sim, &graphs, &DatasetConfig::new(40, 7)).unwrap();
    assert_eq!(ds.count(OpKind::Rx), 40);
    assert_eq!(ds.count(OpKind::Rxy), 40);
    for s in &ds.samples {
        assert!(s.log_err >= -4.0 && s.log_err <= -1.0);
        assert!(s.max_distance() <= 4);
        if s.op == OpKind::Rx && s.source == vec![0] {
            assert_ne!(s.target, 5);
        }
    }
    let again = generate_dataset(&sim, &graphs, &DatasetConfig::new(40, 7)).unwrap();
    assert_eq!(ds, again);
    let back = Dataset::read_jsonl(ds.to_jsonl().as_bytes()).unwrap();
    assert_eq!(back, ds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_preserves_norm(
        seed in any::<u64>(),
        t in 0.0f64..200.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let mut h = DMatrix::from_element(n, n, C::new(0.0, 0.0));
        for r in 0..n {
            h[(r, r)] = C::new(rng.gen_range(-1.0..1.0), 0.0);
            for c in r + 1..n {
                let v = C::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
                h[(r, c)] = v;
                h[(c, r)] = v.conj();
            }
        }
        let raw: Vec<C> = (0..n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let psi = DVector::from_vec(raw);
        let psi = psi.unscale(psi.norm());
        let out = evolve(&h, &psi, t).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-10);
    }
}
