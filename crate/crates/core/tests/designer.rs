use proptest::prelude::*;
use qfreq::assignment::DEFAULT_BAND;
use qfreq::designer::*;
use qfreq::evaluator::*;
use qfreq::graph::{compute_hop_distances, normalize_adjacency, CouplingGraph};
use qfreq::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_arch() -> DesignerArch {
    DesignerArch {
        order: 3,
        node_layers: 2,
        node_width: 8,
        head_width: 4,
        edge_layers: 1,
        edge_width: 4,
        scorer_width: 4,
    }
}

fn wide_theory() -> Evaluator {
    let mut t = TheoryEvaluator::default();
    let inv = |y: f64| y.exp_m1().ln();
    for op in 0..3 {
        t.j_raw[op] = [0.02, 0.01, 0.005, 0.003].map(inv);
    }
    t.w_raw = [0.5, 0.2, 0.3].map(inv);
    Evaluator::theory(FeatureScale::default(), t)
}

fn random_graph(n: usize, extra: usize, seed: u64) -> CouplingGraph {
    // random spanning tree plus a few chords
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && !edges.iter().any(|&(p, q)| (p, q) == (a.min(b), a.max(b)) || (q, p) == (a.min(b), a.max(b))) {
            edges.push((a.min(b), a.max(b)));
        }
    }
    CouplingGraph::new(n, edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn design_is_exactly_equivariant(n in 2usize..14, extra in 0usize..6, seed in 0u64..1000) {
        let g = random_graph(n, extra, seed);
        let model = Designer::new(tiny_arch(), DEFAULT_BAND, seed).unwrap();
        let trials = trial_inputs(n, seed, 0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 77));
        let h = g.relabel(&perm);
        let mut moved = vec![0.0; n];
        for (old, &new) in perm.iter().enumerate() {
            moved[new] = trials[old];
        }
        let a = model.design(&g, &trials).unwrap();
        let b = model.design(&h, &moved).unwrap();
        prop_assert_eq!(a.relabel(&perm), b);
    }

    #[test]
    fn designs_stay_in_band(n in 1usize..12, extra in 0usize..4, seed in 0u64..1000) {
        let g = random_graph(n, extra, seed);
        let model = Designer::new(tiny_arch(), DEFAULT_BAND, seed).unwrap();
        let a = model.design(&g, &trial_inputs(n, seed, 1)).unwrap();
        a.validate(&g, DEFAULT_BAND).unwrap();
    }
}

#[test]
fn equal_scores_put_the_edge_at_the_midpoint() {
    let g = CouplingGraph::chain(3);
    let mut model = Designer::new(tiny_arch(), DEFAULT_BAND, 1).unwrap();
    for (w, b) in model.scorer.layers.iter_mut() {
        *w = Tensor::zeros(w.rows(), w.cols());
        *b = Tensor::zeros(b.rows(), b.cols());
    }
    let a = model.design(&g, &[0.1, 0.6, 0.9]).unwrap();
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        let mid = 0.5 * a.node_ghz[i] + 0.5 * a.node_ghz[j];
        assert!((a.edge_ghz[e] - mid).abs() < 1e-15);
    }
}

#[test]
fn batch_of_one_is_a_single_design() {
    let g = CouplingGraph::grid(3, 3);
    let model = Designer::new(tiny_arch(), DEFAULT_BAND, 2).unwrap();
    let ev = wide_theory();
    let w = LossWeights::default();
    let (a, loss) = batched_design(&model, &g, &ev, &w, 1, 5).unwrap();
    let direct = model.design(&g, &trial_inputs(9, 5, 0)).unwrap();
    assert_eq!(a, direct);
    assert_eq!(loss, graph_loss(&LossTerms::new(&g), &direct, &ev, &w).unwrap());
}

#[test]
fn larger_batches_never_do_worse() {
    let g = CouplingGraph::grid(3, 4);
    let model = Designer::new(tiny_arch(), DEFAULT_BAND, 3).unwrap();
    let ev = wide_theory();
    let w = LossWeights::default();
    let losses: Vec<f64> = [1, 4, 16, 64]
        .iter()
        .map(|&b| batched_design(&model, &g, &ev, &w, b, 9).unwrap().1)
        .collect();
    assert!(losses.windows(2).all(|p| p[1] <= p[0]), "{losses:?}");
}

#[test]
fn wrong_trial_length_is_rejected() {
    let model = Designer::new(tiny_arch(), DEFAULT_BAND, 0).unwrap();
    let err = model.design(&CouplingGraph::chain(4), &[0.5; 3]).unwrap_err();
    assert!(matches!(err, DesignError::TrialLength { expected: 4, got: 3 }));
}

#[test]
fn gcn_layer_gradients_match_finite_differences() {
    let g = CouplingGraph::new(5, [(0, 1), (1, 2), (2, 3), (1, 4), (3, 4)]).unwrap();
    let adj = normalize_adjacency(&compute_hop_distances(&g, 2), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layer = GcnLayer::new(2, 3, 4, &mut rng);
    let x = Tensor::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
    let probe = Tensor::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0));
    let objective = |l: &GcnLayer| -> f64 {
        let y = l.forward(&adj, &x, false).unwrap();
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>().tanh()
    };
    let mut tape = Tape::new();
    let mut vars: Vec<_> = layer.weights.iter().map(|w| tape.param(w.clone())).collect();
    vars.push(tape.param(layer.bias.clone()));
    let xv = tape.constant(x.clone());
    let y = layer.forward_tape(&mut tape, &adj, xv, &vars, false).unwrap();
    let pv = tape.constant(probe.clone());
    let prod = tape.mul(y, pv).unwrap();
    let s = tape.sum_all(prod);
    let loss = tape.tanh(s);
    assert!((tape.value(loss).item() - objective(&layer)).abs() < 1e-14);
    let mut grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
    let h = 1e-6;
    for (slot, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let bump = |d: f64| {
                let mut l = layer.clone();
                let t = if slot < l.weights.len() { &mut l.weights[slot] } else { &mut l.bias };
                t.data_mut()[k] += d;
                objective(&l)
            };
            let num = (bump(h) - bump(-h)) / (2.0 * h);
            let a = grad.data()[k];
            assert!((num - a).abs() <= 1e-4 * a.abs().max(1e-3), "slot {slot} entry {k}: {num} vs {a}");
        }
    }
}

#[test]
fn design_gradient_matches_finite_differences() {
    let g = CouplingGraph::new(5, [(0, 1), (1, 2), (2, 3), (1, 4)]).unwrap();
    let model = Designer::new(tiny_arch(), DEFAULT_BAND, 6).unwrap();
    let ev = wide_theory();
    let w = LossWeights::default();
    let terms = LossTerms::new(&g);
    let trials = trial_inputs(5, 6, 0);
    let adj = model.adjacency(&g);
    let mut tape = Tape::new();
    let t = tape.param(Tensor::column(trials.clone()));
    let out = model.forward_tape(&mut tape, &adj, g.edges(), t).unwrap();
    let loss = graph_loss_tape(&mut tape, &terms, out.node, out.edge, &ev, &w).unwrap();
    let grad = tape.backward(loss).unwrap().take(t).into_data();
    let f = |x: &[f64]| graph_loss(&terms, &model.design(&g, x).unwrap(), &ev, &w).unwrap();
    let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-6;
    for i in 0..5 {
        let mut p = trials.clone();
        p[i] += h;
        let mut m = trials.clone();
        m[i] -= h;
        let num = (f(&p) - f(&m)) / (2.0 * h);
        assert!((num - grad[i]).abs() <= 1e-4 * grad[i].abs().max(1e-2 * scale), "trial {i}: {num} vs {}", grad[i]);
    }
}

#[test]
fn layer_without_neighbour_weights_ignores_the_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut layer = GcnLayer::new(3, 2, 3, &mut rng);
    for w in layer.weights.iter_mut().skip(1) {
        *w = Tensor::zeros(2, 3);
    }
    let x = Tensor::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
    let on = |g: &CouplingGraph| layer.forward(&normalize_adjacency(&compute_hop_distances(g, 3), 3), &x, true).unwrap();
    assert_eq!(on(&CouplingGraph::chain(6)), on(&CouplingGraph::star(6)));
}

#[test]
fn single_node_layer_is_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let layer = GcnLayer::new(3, 4, 2, &mut rng);
    let g = CouplingGraph::new(1, []).unwrap();
    let x = Tensor::from_fn(1, 4, |_, _| rng.gen_range(-1.0..1.0));
    let y = layer.forward(&normalize_adjacency(&compute_hop_distances(&g, 3), 3), &x, false).unwrap();
    // every normalized power of a lone node is its self-loop
    let summed = layer.weights.iter().skip(1).fold(layer.weights[0].clone(), |acc, w| {
        Tensor::from_fn(4, 2, |r, c| acc.get(r, c) + w.get(r, c))
    });
    let dense = x.matmul(&summed).unwrap();
    for c in 0..2 {
        assert!((y.get(0, c) - dense.get(0, c) - layer.bias.get(0, c)).abs() < 1e-12);
    }
}

#[test]
fn model_files_round_trip() {
    let model = Designer::new(tiny_arch(), (4.8, 5.2), 12).unwrap();
    let back = Designer::from_json(&model.to_json()).unwrap();
    assert_eq!(model, back);
    assert!(Designer::from_json("{}").is_err());
}

#[test]
fn training_lowers_held_out_loss_and_leaves_evaluator_alone() {
    let ev = Evaluator::theory(FeatureScale::default(), TheoryEvaluator::default());
    let before = ev.to_json();
    let cfg = DesignerTrainConfig {
        arch: tiny_arch(),
        sizes: vec![10],
        batch: 4,
        steps: 60,
        lr: 5e-3,
        val_every: 20,
        ..DesignerTrainConfig::desk()
    };
    let (model, report) = train_designer(&cfg, &ev, DEFAULT_BAND).unwrap();
    assert_eq!(ev.to_json(), before);
    assert!(report.best_val < report.initial_val, "{report:?}");
    assert_eq!(report.trace.len(), 60);
    assert_eq!(model.arch, tiny_arch());
}

#[test]
fn order_comparison_matches_parameter_budgets() {
    let base = DesignerArch::desk();
    let target = Designer::new(base, DEFAULT_BAND, 0).unwrap().param_count();
    let w = width_for_params(&base, 0, target);
    let got = Designer::new(DesignerArch { order: 0, node_width: w, ..base }, DEFAULT_BAND, 0).unwrap().param_count();
    assert!((got as f64 - target as f64).abs() <= 0.2 * target as f64, "{got} vs {target}");
}

#[test]
fn bad_configs_are_rejected() {
    let mut cfg = DesignerTrainConfig::desk();
    cfg.sizes.clear();
    assert!(cfg.validate().is_err());
    let mut cfg = DesignerTrainConfig::desk();
    cfg.lr = 0.0;
    assert!(cfg.validate().is_err());
    let arch = DesignerArch { node_width: 0, ..DesignerArch::desk() };
    assert!(Designer::new(arch, DEFAULT_BAND, 0).is_err());
}
