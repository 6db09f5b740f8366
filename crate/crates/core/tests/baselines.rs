use proptest::prelude::*;
use qfreq::assignment::DEFAULT_BAND;
use qfreq::baselines::*;
use qfreq::evaluator::*;
use qfreq::graph::CouplingGraph;

fn theory() -> Evaluator {
    Evaluator::theory(FeatureScale::default(), TheoryEvaluator::default())
}

fn loss_of(g: &CouplingGraph, a: &qfreq::assignment::FrequencyAssignment) -> f64 {
    graph_loss(&LossTerms::new(g), a, &theory(), &LossWeights::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn powell_solves_separable_quadratics(
        c in prop::collection::vec(-3.0f64..3.0, 1..6),
        start in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let target = c.clone();
        let f = move |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut obj = f;
        let r = powell_minimize(&mut obj, &start[..c.len()], None, &PowellSettings::default()).unwrap();
        for (x, t) in r.x.iter().zip(&c) {
            prop_assert!((x - t).abs() < 1e-3, "{:?} vs {:?}", r.x, c);
        }
    }
}

#[test]
fn powell_handles_rotated_valleys() {
    let mut rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let s = PowellSettings {
        xtol: 1e-8,
        ftol: 1e-10,
        ..PowellSettings::default()
    };
    let r = powell_minimize(&mut rosen, &[-1.2, 1.0], None, &s).unwrap();
    assert!(r.f < 1e-4, "{r:?}");
    assert!((r.x[0] - 1.0).abs() < 1e-2 && (r.x[1] - 1.0).abs() < 2e-2);
    assert!(r.converged);
}

#[test]
fn powell_keeps_a_flat_start() {
    let mut flat = |_: &[f64]| 3.0;
    let r = powell_minimize(&mut flat, &[0.25, 0.5], None, &PowellSettings::default()).unwrap();
    assert_eq!(r.x, vec![0.25, 0.5]);
    assert_eq!(r.f, 3.0);
}

#[test]
fn powell_respects_bounds() {
    let mut f = |x: &[f64]| (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2);
    let r = powell_minimize(&mut f, &[0.5, 0.5], Some(&[(0.0, 1.0), (0.0, 1.0)]), &PowellSettings::default()).unwrap();
    assert!((r.x[0] - 1.0).abs() < 1e-3 && r.x[1].abs() < 1e-3, "{:?}", r.x);
    assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn powell_rejects_non_finite_start() {
    let mut f = |_: &[f64]| f64::NAN;
    assert!(matches!(
        powell_minimize(&mut f, &[0.0], None, &PowellSettings::default()),
        Err(BaselineError::NonFiniteStart)
    ));
}

#[test]
fn direct_optim_halves_a_pair_loss() {
    let g = CouplingGraph::chain(2);
    let out = direct_optim(&g, &theory(), &LossWeights::default(), DEFAULT_BAND, 1, &PowellSettings::default()).unwrap();
    assert!(out.loss <= 0.5 * out.initial_loss, "{} vs {}", out.loss, out.initial_loss);
    assert!((loss_of(&g, &out.assignment) - out.loss).abs() <= 1e-12 * out.loss);
    out.assignment.validate(&g, DEFAULT_BAND).unwrap();
}

#[test]
fn every_method_ends_at_or_below_its_start() {
    let ev = theory();
    let w = LossWeights::default();
    for (g, seed) in [(CouplingGraph::grid(3, 3), 2), (CouplingGraph::ring(7), 5), (CouplingGraph::t_shape(), 8)] {
        let d = direct_optim(&g, &ev, &w, DEFAULT_BAND, seed, &PowellSettings::default()).unwrap();
        let gr = grad_alg(&g, &ev, &w, DEFAULT_BAND, seed, &GradSettings::default()).unwrap();
        let (s, _) = snake(&g, &ev, &w, DEFAULT_BAND, seed, &SnakeSettings::default()).unwrap();
        for out in [&d, &gr, &s] {
            assert!(out.loss <= out.initial_loss);
            out.assignment.validate(&g, DEFAULT_BAND).unwrap();
        }
        // all three share the seeded start
        assert_eq!(d.initial_loss, gr.initial_loss);
        assert_eq!(d.initial_loss, s.initial_loss);
    }
}

#[test]
fn zero_gradient_steps_return_the_start() {
    let g = CouplingGraph::grid(2, 3);
    let out = grad_alg(&g, &theory(), &LossWeights::default(), DEFAULT_BAND, 4, &GradSettings { steps: 0, lr: 0.05 }).unwrap();
    assert_eq!(out.loss, out.initial_loss);
    let (u, t) = random_unit_start(&g, 4);
    assert_eq!(out.assignment, qfreq::assignment::FrequencyAssignment::from_unit(&g, DEFAULT_BAND, &u, &t));
}

#[test]
fn snake_losses_never_rise() {
    let ev = theory();
    let w = LossWeights::default();
    for scoring in [WindowScoring::Halo, WindowScoring::Incremental] {
        for (g, seed) in [(CouplingGraph::grid(4, 4), 1), (CouplingGraph::chain(12), 3), (CouplingGraph::star(9), 6)] {
            let settings = SnakeSettings { scoring, ..SnakeSettings::default() };
            let (out, trace) = snake(&g, &ev, &w, DEFAULT_BAND, seed, &settings).unwrap();
            let tol = |v: f64| v * (1.0 + 1e-12);
            assert!(trace.pass_losses.windows(2).all(|p| p[1] <= tol(p[0])), "{:?}", trace.pass_losses);
            let mut prev = trace.pass_losses[0];
            for &l in &trace.window_losses {
                assert!(l <= tol(prev), "window raised the loss: {prev} -> {l}");
                prev = l;
            }
            assert!((out.loss - trace.pass_losses.last().unwrap()).abs() <= 1e-12 * out.loss);
        }
    }
}

#[test]
fn one_window_snake_is_a_direct_search() {
    let g = CouplingGraph::grid(2, 3);
    let ev = theory();
    let w = LossWeights::default();
    let direct = direct_optim(&g, &ev, &w, DEFAULT_BAND, 7, &PowellSettings::default()).unwrap();
    let settings = SnakeSettings {
        scope: 6,
        max_passes: 1,
        ..SnakeSettings::default()
    };
    let (s, _) = snake(&g, &ev, &w, DEFAULT_BAND, 7, &settings).unwrap();
    assert!((s.loss - direct.loss).abs() <= 0.05 * direct.loss, "{} vs {}", s.loss, direct.loss);
}

#[test]
fn baselines_are_deterministic() {
    let g = CouplingGraph::grid(3, 3);
    let ev = theory();
    let w = LossWeights::default();
    let run = || {
        let (s, _) = snake(&g, &ev, &w, DEFAULT_BAND, 3, &SnakeSettings::default()).unwrap();
        let gr = grad_alg(&g, &ev, &w, DEFAULT_BAND, 3, &GradSettings::default()).unwrap();
        (s.assignment, gr.assignment)
    };
    assert_eq!(run(), run());
}

#[test]
fn summaries_are_json() {
    let g = CouplingGraph::chain(3);
    let out = direct_optim(&g, &theory(), &LossWeights::default(), DEFAULT_BAND, 0, &PowellSettings::default()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&out.summary_json()).unwrap();
    assert_eq!(v["loss"].as_f64().unwrap(), out.loss);
    assert!(v["wall_ms"].as_f64().unwrap() >= 0.0);
}

#[test]
fn zero_scope_is_rejected() {
    let g = CouplingGraph::chain(3);
    let settings = SnakeSettings { scope: 0, ..SnakeSettings::default() };
    assert!(snake(&g, &theory(), &LossWeights::default(), DEFAULT_BAND, 0, &settings).is_err());
}
