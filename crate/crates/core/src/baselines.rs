//! Conventional allocators scored by the same evaluator: Powell search over
//! the whole assignment, gradient descent, and window-by-window sweeps.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::FrequencyAssignment;
use crate::evaluator::{graph_loss, graph_loss_tape, EvalError, Evaluator, IncrementalLoss, LossTerms, LossWeights};
use crate::graph::CouplingGraph;
use crate::tensor::{Adam, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("invalid settings: {0}")]
    Settings(String),
}

const GOLDEN: f64 = 0.381_966_011_250_105;
const TINY: f64 = 1e-21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowellSettings {
    pub xtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
    pub max_evals: Option<usize>,
    /// Step growth while bracketing an unbounded line minimum.
    pub grow: f64,
}

impl Default for PowellSettings {
    fn default() -> Self {
        Self {
            xtol: 1e-4,
            ftol: 1e-4,
            max_iter: 1000,
            max_evals: None,
            grow: 1.618_034,
        }
    }
}

impl PowellSettings {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.xtol > 0.0 && self.ftol > 0.0 && self.grow > 1.0) {
            return Err(BaselineError::Settings(format!("tolerances must be positive and growth above 1: {self:?}")));
        }
        Ok(())
    }
}

/// Function minimized by [`powell_minimize`]. `moved_to` announces every
/// accepted point, so stateful objectives can rebase their caches.
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> f64;
    fn moved_to(&mut self, _x: &[f64]) {}
}

impl<F: FnMut(&[f64]) -> f64> Objective for F {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowellResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evals: usize,
    pub converged: bool,
    /// Search stopped early on a non-finite objective value.
    pub aborted: bool,
}

struct Counted<'o, O: Objective> {
    inner: &'o mut O,
    evals: usize,
    non_finite: bool,
}

impl<O: Objective> Counted<'_, O> {
    fn f(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = self.inner.eval(x);
        if v.is_finite() {
            v
        } else {
            self.non_finite = true;
            f64::INFINITY
        }
    }
}

/// Brent's parabolic/golden minimization on `[lo, hi]` starting from the
/// already evaluated interior or boundary point `x0`. Returns the best point.
fn brent(f: &mut dyn FnMut(f64) -> f64, lo: f64, hi: f64, x0: f64, f0: f64, rtol: f64, atol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let (mut fx, mut fw, mut fv) = (f0, f0, f0);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = rtol * x.abs() + atol;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let u = u.clamp(a, b);
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, w, x) = (w, x, u);
            (fv, fw, fx) = (fw, fx, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, w) = (w, u);
                (fv, fw) = (fw, fu);
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Expands from `(0, 1)` downhill until a minimum is bracketed; returns
/// `(a, b, c, f(b))` with `f(b) ≤ f(a), f(c)`.
fn bracket(f: &mut dyn FnMut(f64) -> f64, f0: f64, grow: f64) -> (f64, f64, f64, f64) {
    let (mut a, mut b) = (0.0, 1.0);
    let (mut fa, mut fb) = (f0, f(1.0));
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + grow * (b - a);
    let mut fc = f(c);
    let mut guard = 0;
    while fc < fb && guard < 60 {
        let r = (b - a) * (fb - fc);
        let q = (b - c) * (fb - fa);
        let denom = 2.0 * (q - r).abs().max(TINY).copysign(q - r);
        let mut u = b - ((b - c) * q - (b - a) * r) / denom;
        let ulim = b + 100.0 * (c - b);
        let mut fu;
        if (b - u) * (u - c) > 0.0 {
            fu = f(u);
            if fu < fc {
                return (b, u, c, fu);
            } else if fu > fb {
                return (a, b, u, fb);
            }
            u = c + grow * (c - b);
            fu = f(u);
        } else if (c - u) * (u - ulim) > 0.0 {
            fu = f(u);
            if fu < fc {
                b = c;
                c = u;
                u = c + grow * (c - b);
                fb = fc;
                fc = fu;
                fu = f(u);
            }
        } else if (u - ulim) * (ulim - c) >= 0.0 {
            u = ulim;
            fu = f(u);
        } else {
            u = c + grow * (c - b);
            fu = f(u);
        }
        (a, b, c) = (b, c, u);
        (fa, fb, fc) = (fb, fc, fu);
        guard += 1;
    }
    let _ = fa;
    (a, b, c, fb)
}

/// Step range `[lo, hi]` that keeps `x + t·d` inside `bounds`.
fn feasible_steps(x: &[f64], d: &[f64], bounds: &[(f64, f64)]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for ((&xi, &di), &(b0, b1)) in x.iter().zip(d).zip(bounds) {
        if di > 0.0 {
            lo = lo.max((b0 - xi) / di);
            hi = hi.min((b1 - xi) / di);
        } else if di < 0.0 {
            lo = lo.max((b1 - xi) / di);
            hi = hi.min((b0 - xi) / di);
        }
    }
    (lo.min(0.0), hi.max(0.0))
}

fn along(x: &[f64], d: &[f64], t: f64, bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    x.iter()
        .zip(d)
        .enumerate()
        .map(|(k, (xi, di))| {
            let v = xi + t * di;
            match bounds {
                Some(b) => v.clamp(b[k].0, b[k].1),
                None => v,
            }
        })
        .collect()
}

/// Minimizes along `d` from `x` (value `fx`); never returns a worse point.
fn line_search<O: Objective>(obj: &mut Counted<'_, O>, x: &[f64], fx: f64, d: &[f64], s: &PowellSettings, bounds: Option<&[(f64, f64)]>) -> (f64, Vec<f64>, Vec<f64>) {
    if d.iter().all(|&v| v == 0.0) {
        return (fx, x.to_vec(), d.to_vec());
    }
    let mut phi = |t: f64| obj.f(&along(x, d, t, bounds));
    let (t, ft) = match bounds {
        Some(b) => {
            let (lo, hi) = feasible_steps(x, d, b);
            if hi - lo <= 0.0 {
                return (fx, x.to_vec(), vec![0.0; d.len()]);
            }
            brent(&mut phi, lo, hi, 0.0, fx, 0.0, s.xtol)
        }
        None => {
            let (a, b, c, fb) = bracket(&mut phi, fx, s.grow);
            brent(&mut phi, a.min(c), a.max(c), b, fb, 100.0 * s.xtol, 1e-11)
        }
    };
    if ft < fx {
        let step: Vec<f64> = d.iter().map(|v| v * t).collect();
        (ft, along(x, d, t, bounds), step)
    } else {
        (fx, x.to_vec(), vec![0.0; d.len()])
    }
}

/// Powell's conjugate-direction method with Brent line minimization,
/// optionally restricted to a box.
pub fn powell_minimize<O: Objective>(obj: &mut O, x0: &[f64], bounds: Option<&[(f64, f64)]>, s: &PowellSettings) -> Result<PowellResult, BaselineError> {
    s.validate()?;
    if let Some(b) = bounds {
        if b.len() != x0.len() || b.iter().any(|&(lo, hi)| !(lo <= hi)) {
            return Err(BaselineError::Settings("bounds must match x0 and satisfy lo ≤ hi".into()));
        }
    }
    let n = x0.len();
    let mut x: Vec<f64> = match bounds {
        Some(b) => x0.iter().zip(b).map(|(v, &(lo, hi))| v.clamp(lo, hi)).collect(),
        None => x0.to_vec(),
    };
    let mut c = Counted {
        inner: obj,
        evals: 0,
        non_finite: false,
    };
    let mut fval = c.f(&x);
    if !fval.is_finite() {
        return Err(BaselineError::NonFiniteStart);
    }
    if n == 0 {
        return Ok(PowellResult {
            x,
            f: fval,
            iterations: 0,
            evals: c.evals,
            converged: true,
            aborted: false,
        });
    }
    let mut dirs: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect()).collect();
    let mut x1 = x.clone();
    let mut iterations = 0;
    let mut converged = false;
    let budget = |c: &Counted<'_, O>| s.max_evals.is_some_and(|m| c.evals >= m);
    loop {
        let fx = fval;
        let (mut big, mut delta) = (0, 0.0);
        for (i, d) in dirs.iter().enumerate() {
            let before = fval;
            let (f, xn, _) = line_search(&mut c, &x, fval, d, s, bounds);
            if f < fval {
                x = xn;
                fval = f;
                c.inner.moved_to(&x);
            }
            if before - fval > delta {
                delta = before - fval;
                big = i;
            }
            if c.non_finite || budget(&c) {
                break;
            }
        }
        iterations += 1;
        if 2.0 * (fx - fval) <= s.ftol * (fx.abs() + fval.abs()) + 1e-20 {
            converged = true;
            break;
        }
        if c.non_finite || budget(&c) || iterations >= s.max_iter {
            break;
        }
        let d: Vec<f64> = x.iter().zip(&x1).map(|(a, b)| a - b).collect();
        x1 = x.clone();
        let reach = match bounds {
            Some(b) => feasible_steps(&x, &d, b).1.min(1.0),
            None => 1.0,
        };
        let x2 = along(&x, &d, reach, bounds);
        let fx2 = c.f(&x2);
        if fx > fx2 {
            let mut t = 2.0 * (fx + fx2 - 2.0 * fval);
            let tmp = fx - fval - delta;
            t *= tmp * tmp;
            let tmp = fx - fx2;
            t -= delta * tmp * tmp;
            if t < 0.0 {
                let (f, xn, step) = line_search(&mut c, &x, fval, &d, s, bounds);
                if f < fval {
                    x = xn;
                    fval = f;
                    c.inner.moved_to(&x);
                }
                if step.iter().any(|&v| v != 0.0) {
                    dirs[big] = dirs[n - 1].clone();
                    dirs[n - 1] = step;
                }
            }
        }
    }
    Ok(PowellResult {
        x,
        f: fval,
        iterations,
        evals: c.evals,
        converged,
        aborted: c.non_finite,
    })
}

/// Assignment, its loss, and run statistics of one baseline run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub assignment: FrequencyAssignment,
    pub loss: f64,
    pub initial_loss: f64,
    pub evals: usize,
    pub wall_ms: f64,
}

#[derive(Serialize)]
struct OutcomeJson {
    loss: f64,
    wall_ms: f64,
    evals: usize,
}

impl BaselineOutcome {
    /// `{"loss", "wall_ms", "evals"}` summary.
    pub fn summary_json(&self) -> String {
        serde_json::to_string(&OutcomeJson {
            loss: self.loss,
            wall_ms: self.wall_ms,
            evals: self.evals,
        })
        .expect("summary serializes")
    }
}

/// Seeded random start in unit coordinates: band fractions for nodes and
/// convex weights for edges.
pub fn random_unit_start(graph: &CouplingGraph, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = (0..graph.node_count()).map(|_| rng.gen::<f64>()).collect();
    let t = (0..graph.edge_count()).map(|_| rng.gen::<f64>()).collect();
    (u, t)
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Node(usize),
    Edge(usize),
}

/// Current point of a local search in both unit and physical coordinates.
struct SearchState<'a> {
    graph: &'a CouplingGraph,
    band: (f64, f64),
    incident: Vec<Vec<usize>>,
    terms: &'a LossTerms,
    ev: &'a Evaluator,
    weights: LossWeights,
    node_u: Vec<f64>,
    edge_t: Vec<f64>,
    current: FrequencyAssignment,
    /// Present when moves are scored by re-evaluating only the touched terms.
    inc: Option<IncrementalLoss<'a>>,
}

impl<'a> SearchState<'a> {
    fn new(
        graph: &'a CouplingGraph,
        band: (f64, f64),
        terms: &'a LossTerms,
        ev: &'a Evaluator,
        weights: LossWeights,
        seed: u64,
        incremental: bool,
    ) -> Result<Self, BaselineError> {
        let (node_u, edge_t) = random_unit_start(graph, seed);
        let current = FrequencyAssignment::from_unit(graph, band, &node_u, &edge_t);
        let inc = if incremental {
            Some(IncrementalLoss::new(terms, ev, weights, current.clone())?)
        } else {
            None
        };
        Ok(Self {
            graph,
            band,
            incident: incident_edges(graph),
            terms,
            ev,
            weights,
            node_u,
            edge_t,
            current,
            inc,
        })
    }

    fn total(&self) -> Result<f64, BaselineError> {
        Ok(match &self.inc {
            Some(i) => i.total(),
            None => graph_loss(self.terms, &self.current, self.ev, &self.weights)?,
        })
    }

    /// Assignment with the window variables set to `x`, plus the nodes and
    /// edges whose frequencies changed.
    fn candidate(&self, slots: &[Slot], x: &[f64]) -> (FrequencyAssignment, Vec<usize>, Vec<usize>) {
        let mut a = self.current.clone();
        let mut nodes = Vec::new();
        let mut moved_t: Vec<(usize, f64)> = Vec::new();
        let span = self.band.1 - self.band.0;
        for (&slot, &v) in slots.iter().zip(x) {
            let v = v.clamp(0.0, 1.0);
            match slot {
                Slot::Node(i) if v != self.node_u[i] => {
                    a.node_ghz[i] = self.band.0 + span * v;
                    nodes.push(i);
                }
                Slot::Edge(e) if v != self.edge_t[e] => moved_t.push((e, v)),
                _ => {}
            }
        }
        let mut touched: Vec<usize> = moved_t.iter().map(|m| m.0).collect();
        for &i in &nodes {
            touched.extend_from_slice(&self.incident[i]);
        }
        touched.sort_unstable();
        touched.dedup();
        for &e in &touched {
            let (p, q) = self.graph.edges()[e];
            let w = moved_t.iter().find(|m| m.0 == e).map_or(self.edge_t[e], |m| m.1);
            a.edge_ghz[e] = (1.0 - w) * a.node_ghz[p] + w * a.node_ghz[q];
        }
        (a, nodes, touched)
    }

    fn accept(&mut self, slots: &[Slot], x: &[f64]) -> Result<(), EvalError> {
        let (a, nodes, edges) = self.candidate(slots, x);
        if nodes.is_empty() && edges.is_empty() {
            return Ok(());
        }
        if let Some(inc) = self.inc.as_mut() {
            let trial = inc.trial(&a, &nodes, &edges)?;
            inc.commit(a.clone(), trial);
        }
        self.current = a;
        for (&slot, &v) in slots.iter().zip(x) {
            match slot {
                Slot::Node(i) => self.node_u[i] = v.clamp(0.0, 1.0),
                Slot::Edge(e) => self.edge_t[e] = v.clamp(0.0, 1.0),
            }
        }
        Ok(())
    }
}

/// Unit-coordinate objective over a window of variables. With a region,
/// every evaluation sums all terms inside it; otherwise only the terms that
/// read a changed variable are re-evaluated.
struct WindowObjective<'s, 'a> {
    st: &'s mut SearchState<'a>,
    slots: Vec<Slot>,
    region: Option<(Vec<usize>, Vec<usize>)>,
    error: Option<EvalError>,
}

impl WindowObjective<'_, '_> {
    fn score(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        let (a, nodes, edges) = self.st.candidate(&self.slots, x);
        if let Some((single, two)) = &self.region {
            return self.st.terms.partial_loss(single, two, &a, self.st.ev, &self.st.weights);
        }
        let inc = self.st.inc.as_mut().expect("incremental scoring keeps a tracker");
        if nodes.is_empty() && edges.is_empty() {
            return Ok(inc.total());
        }
        Ok(inc.trial(&a, &nodes, &edges)?.total)
    }
}

impl Objective for WindowObjective<'_, '_> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.score(x).unwrap_or_else(|e| {
            self.error = Some(e);
            f64::NAN
        })
    }

    fn moved_to(&mut self, x: &[f64]) {
        if let Err(e) = self.st.accept(&self.slots, x) {
            self.error = Some(e);
        }
    }
}

fn incident_edges(graph: &CouplingGraph) -> Vec<Vec<usize>> {
    let mut inc = vec![Vec::new(); graph.node_count()];
    for (e, &(a, b)) in graph.edges().iter().enumerate() {
        inc[a].push(e);
        inc[b].push(e);
    }
    inc
}

/// Powell over the listed variables with everything else fixed.
fn optimize_window(st: &mut SearchState<'_>, slots: Vec<Slot>, region: Option<(Vec<usize>, Vec<usize>)>, settings: &PowellSettings) -> Result<usize, BaselineError> {
    let x0: Vec<f64> = slots
        .iter()
        .map(|s| match *s {
            Slot::Node(i) => st.node_u[i],
            Slot::Edge(e) => st.edge_t[e],
        })
        .collect();
    let bounds = vec![(0.0, 1.0); x0.len()];
    let mut obj = WindowObjective {
        st,
        slots,
        region,
        error: None,
    };
    let r = powell_minimize(&mut obj, &x0, Some(&bounds), settings)?;
    if let Some(e) = obj.error {
        return Err(e.into());
    }
    Ok(r.evals)
}

/// Powell on all node and edge variables at once, from a seeded random start.
pub fn direct_optim(
    graph: &CouplingGraph,
    ev: &Evaluator,
    weights: &LossWeights,
    band: (f64, f64),
    seed: u64,
    settings: &PowellSettings,
) -> Result<BaselineOutcome, BaselineError> {
    let clock = Instant::now();
    let terms = LossTerms::new(graph);
    let mut st = SearchState::new(graph, band, &terms, ev, *weights, seed, true)?;
    let start = st.current.clone();
    let initial_loss = graph_loss(&terms, &start, ev, weights)?;
    let slots: Vec<Slot> = (0..graph.node_count())
        .map(Slot::Node)
        .chain((0..graph.edge_count()).map(Slot::Edge))
        .collect();
    let evals = optimize_window(&mut st, slots, None, settings)?;
    finish(&terms, ev, weights, start, initial_loss, st.current, evals, clock)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    terms: &LossTerms,
    ev: &Evaluator,
    weights: &LossWeights,
    start: FrequencyAssignment,
    initial_loss: f64,
    end: FrequencyAssignment,
    evals: usize,
    clock: Instant,
) -> Result<BaselineOutcome, BaselineError> {
    let loss = graph_loss(terms, &end, ev, weights)?;
    let (assignment, loss) = if loss <= initial_loss { (end, loss) } else { (start, initial_loss) };
    Ok(BaselineOutcome {
        assignment,
        loss,
        initial_loss,
        evals,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradSettings {
    pub steps: usize,
    pub lr: f64,
}

impl Default for GradSettings {
    fn default() -> Self {
        Self { steps: 500, lr: 0.05 }
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Adam on unconstrained coordinates: sigmoid-bounded node frequencies and
/// a two-way softmax per edge. Starts where [`direct_optim`] starts for the
/// same seed and returns the best iterate seen.
pub fn grad_alg(
    graph: &CouplingGraph,
    ev: &Evaluator,
    weights: &LossWeights,
    band: (f64, f64),
    seed: u64,
    settings: &GradSettings,
) -> Result<BaselineOutcome, BaselineError> {
    let clock = Instant::now();
    let terms = LossTerms::new(graph);
    let (u, t) = random_unit_start(graph, seed);
    let start = FrequencyAssignment::from_unit(graph, band, &u, &t);
    let initial_loss = graph_loss(&terms, &start, ev, weights)?;
    let m = graph.edge_count();
    let mut params = vec![
        Tensor::column(u.iter().map(|&v| logit(v)).collect()),
        Tensor::column(t.iter().map(|&v| logit(v)).collect()),
    ];
    if m == 0 {
        params[1] = Tensor::zeros(0, 1);
    }
    let a: Vec<usize> = graph.edges().iter().map(|e| e.0).collect();
    let b: Vec<usize> = graph.edges().iter().map(|e| e.1).collect();
    let span = band.1 - band.0;
    let mut opt = Adam::new(&params, settings.lr);
    let mut best = (initial_loss, start.clone());
    let mut evals = 1;
    for _ in 0..settings.steps {
        let mut tape = Tape::new();
        let z = tape.param(params[0].clone());
        let l = tape.param(params[1].clone());
        let s = tape.sigmoid(z);
        let s = tape.scale(s, span);
        let node = tape.add_scalar(s, band.0);
        let edge = if m == 0 {
            tape.constant(Tensor::zeros(0, 1))
        } else {
            let neg = tape.scale(l, -1.0);
            let pb = tape.sigmoid(l);
            let pa = tape.sigmoid(neg);
            let wa = tape.gather_rows(node, &a)?;
            let wb = tape.gather_rows(node, &b)?;
            let ta = tape.mul(pa, wa)?;
            let tb = tape.mul(pb, wb)?;
            tape.add(ta, tb)?
        };
        let loss = graph_loss_tape(&mut tape, &terms, node, edge, ev, weights)?;
        let value = tape.value(loss).item();
        evals += 1;
        if !value.is_finite() {
            break;
        }
        if value < best.0 {
            best = (
                value,
                FrequencyAssignment {
                    node_ghz: tape.value(node).data().to_vec(),
                    edge_ghz: tape.value(edge).data().to_vec(),
                },
            );
        }
        let mut g = tape.backward(loss)?;
        let grads = [g.take(z), g.take(l)];
        if grads.iter().any(|g| !g.is_finite()) {
            break;
        }
        opt.step(&mut params, &grads)?;
    }
    finish(&terms, ev, weights, start, initial_loss, best.1, evals, clock)
}

/// How a Snake window scores candidate moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowScoring {
    /// Sum every loss term whose nodes lie within four hops of the window.
    #[default]
    Halo,
    /// Re-evaluate only the terms that read a changed variable; same
    /// optimum, far fewer evaluator calls.
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnakeSettings {
    /// Nodes per optimization window.
    pub scope: usize,
    pub max_passes: usize,
    /// Stop when a pass lowers the loss by less than this fraction.
    pub min_relative_gain: f64,
    pub scoring: WindowScoring,
    pub powell: PowellSettings,
}

impl Default for SnakeSettings {
    fn default() -> Self {
        Self {
            scope: 4,
            max_passes: 10,
            min_relative_gain: 1e-4,
            scoring: WindowScoring::Halo,
            powell: PowellSettings::default(),
        }
    }
}

/// Windows of one sweep: walk nodes in breadth-first order from node 0;
/// each node not yet covered opens a window with its nearest uncovered
/// nodes (ties by index).
pub fn snake_windows(graph: &CouplingGraph, scope: usize) -> Vec<Vec<usize>> {
    let n = graph.node_count();
    let mut covered = vec![false; n];
    let mut windows = Vec::new();
    let mut order = graph.bfs_order(0);
    // disconnected leftovers are visited after the first component
    let mut seen = vec![false; n];
    for &v in &order {
        seen[v] = true;
    }
    order.extend((0..n).filter(|&v| !seen[v]));
    for &c in &order {
        if covered[c] {
            continue;
        }
        let dist = graph.bfs_distances(c);
        let mut near: Vec<usize> = (0..n).filter(|&k| k != c && !covered[k]).collect();
        near.sort_by_key(|&k| (dist[k], k));
        let mut w = vec![c];
        w.extend(near.into_iter().take(scope.saturating_sub(1)));
        for &k in &w {
            covered[k] = true;
        }
        w.sort_unstable();
        windows.push(w);
    }
    windows
}

/// Per-sweep losses of a Snake run, for monotonicity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SnakeTrace {
    pub pass_losses: Vec<f64>,
    pub window_losses: Vec<f64>,
}

/// Sweeps Powell over small windows (nodes plus their incident edges) with
/// all other variables fixed. Window scores include every term that reads
/// a window variable, so each accepted window lowers the global loss.
pub fn snake(
    graph: &CouplingGraph,
    ev: &Evaluator,
    weights: &LossWeights,
    band: (f64, f64),
    seed: u64,
    settings: &SnakeSettings,
) -> Result<(BaselineOutcome, SnakeTrace), BaselineError> {
    if settings.scope == 0 {
        return Err(BaselineError::Settings("scope must be at least 1".into()));
    }
    let clock = Instant::now();
    let terms = LossTerms::new(graph);
    let incremental = settings.scoring == WindowScoring::Incremental;
    let mut st = SearchState::new(graph, band, &terms, ev, *weights, seed, incremental)?;
    let start = st.current.clone();
    let initial_loss = graph_loss(&terms, &start, ev, weights)?;
    let windows = snake_windows(graph, settings.scope);
    let regions: Vec<Option<(Vec<usize>, Vec<usize>)>> = windows
        .iter()
        .map(|w| {
            (!incremental).then(|| {
                let mut inside = vec![false; graph.node_count()];
                for &c in w {
                    for (k, d) in graph.bfs_distances(c).into_iter().enumerate() {
                        if d <= crate::graph::DEFAULT_MAX_ORDER as u32 {
                            inside[k] = true;
                        }
                    }
                }
                terms.terms_within(&inside)
            })
        })
        .collect();
    let mut trace = SnakeTrace {
        pass_losses: vec![initial_loss],
        window_losses: Vec::new(),
    };
    let mut evals = 0;
    let mut before = initial_loss;
    for _ in 0..settings.max_passes {
        for (w, region) in windows.iter().zip(&regions) {
            let mut edges: Vec<usize> = w.iter().flat_map(|&v| st.incident[v].iter().copied()).collect();
            edges.sort_unstable();
            edges.dedup();
            let slots: Vec<Slot> = w.iter().map(|&v| Slot::Node(v)).chain(edges.into_iter().map(Slot::Edge)).collect();
            evals += optimize_window(&mut st, slots, region.clone(), &settings.powell)?;
            trace.window_losses.push(st.total()?);
        }
        let after = st.total()?;
        trace.pass_losses.push(after);
        if before - after < settings.min_relative_gain * before.abs() {
            break;
        }
        before = after;
    }
    let out = finish(&terms, ev, weights, start, initial_loss, st.current, evals, clock)?;
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_parabola_vertex() {
        let mut f = |t: f64| (t - 0.3).powi(2);
        let (t, ft) = brent(&mut f, 0.0, 1.0, 0.0, 0.09, 0.0, 1e-8);
        assert!((t - 0.3).abs() < 1e-6 && ft < 1e-11);
    }

    #[test]
    fn feasible_range_respects_box() {
        let (lo, hi) = feasible_steps(&[0.5, 0.2], &[1.0, -1.0], &[(0.0, 1.0), (0.0, 1.0)]);
        assert!((lo + 0.5).abs() < 1e-12 && (hi - 0.2).abs() < 1e-12);
    }

    #[test]
    fn windows_partition_the_nodes() {
        let g = CouplingGraph::grid(3, 4);
        let w = snake_windows(&g, 4);
        let mut all: Vec<usize> = w.concat();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert!(w.iter().all(|x| x.len() <= 4));
        assert_eq!(snake_windows(&g, 20), vec![(0..12).collect::<Vec<_>>()]);
    }
}
