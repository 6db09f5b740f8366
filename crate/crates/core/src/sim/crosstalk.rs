use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::hamiltonian::{Drive, ModeSystem, C64};
use super::{Axis, FockBasis, PhysicalParams, Propagator, SimError, ZzSolver};
use crate::assignment::FrequencyAssignment;
use crate::graph::{compute_hop_distances, CouplingGraph};

/// Number of gate durations averaged per initial state.
pub const DURATION_POINTS: usize = 20;
/// Largest basis the dense simulator accepts (3 levels on 8 modes).
pub const MAX_BASIS_DIM: usize = 6561;
const MAX_MODES: usize = 14;
/// Gate couplings at or below this leave the duration grid undefined.
const MIN_GATE_COUPLING: f64 = 1e-5;
/// Step length for drives whose carriers differ from the frame.
const MAX_STEP_NS: f64 = 0.05;

/// `DURATION_POINTS` evenly spaced times covering `[0, t_max]`, endpoints included.
pub fn durations(t_max: f64) -> Vec<f64> {
    let last = (DURATION_POINTS - 1) as f64;
    (0..DURATION_POINTS).map(|n| t_max * n as f64 / last).collect()
}

/// Excited population of every mode: `1 − P(mode in |0⟩)`.
pub fn target_excitation(basis: &FockBasis, psi: &DVector<C64>) -> Vec<f64> {
    let mut out = vec![0.0; basis.modes()];
    for (n, amp) in psi.iter().enumerate() {
        let p = amp.norm_sqr();
        for (m, &occ) in basis.state(n).iter().enumerate() {
            if occ > 0 {
                out[m] += p;
            }
        }
    }
    out
}

/// Total-excitation caps for the Fock basis; `None` keeps every state.
///
/// Gates without a drive conserve excitation number, so a cap equal to the
/// prepared excitation count is exact for them. Driven runs need headroom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisCaps {
    pub driven: Option<usize>,
    pub conserving: Option<usize>,
}

impl Default for BasisCaps {
    fn default() -> Self {
        Self {
            driven: Some(3),
            conserving: Some(2),
        }
    }
}

impl BasisCaps {
    pub fn full() -> Self {
        Self {
            driven: None,
            conserving: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Idle,
    SingleQubitGate { qubit: usize, axis: Axis },
    TwoQubitGate { a: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Single { qubit: usize, axis: Axis },
    Two { a: usize, b: usize },
}

impl Operation {
    fn qubits(&self) -> Vec<usize> {
        match *self {
            Operation::Single { qubit, .. } => vec![qubit],
            Operation::Two { a, b } => vec![a, b],
        }
    }
}

/// An operation inside a simultaneous run. `strength` scales a drive's
/// amplitude; for a two-qubit gate any nonzero value switches it on. A
/// zero-strength operation is absent: its qubits are neither driven nor
/// prepared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledOp {
    pub op: Operation,
    pub strength: f64,
}

impl ScheduledOp {
    pub fn new(op: Operation) -> Self {
        Self { op, strength: 1.0 }
    }
}

/// Crosstalk simulator over the coupler-eliminated qubit model.
#[derive(Debug)]
pub struct Simulator {
    solver: ZzSolver,
    caps: BasisCaps,
}

impl Simulator {
    pub fn new(params: PhysicalParams) -> Self {
        Self::with_caps(params, BasisCaps::default())
    }

    pub fn with_caps(params: PhysicalParams, caps: BasisCaps) -> Self {
        Self {
            solver: ZzSolver::new(params),
            caps,
        }
    }

    pub fn params(&self) -> &PhysicalParams {
        self.solver.params()
    }

    pub fn solver(&self) -> &ZzSolver {
        &self.solver
    }

    pub fn caps(&self) -> BasisCaps {
        self.caps
    }

    fn basis(&self, modes: usize, cap: Option<usize>) -> Result<FockBasis, SimError> {
        let levels = self.params().levels_per_mode;
        if modes > MAX_MODES {
            return Err(SimError::TooLarge {
                nodes: modes,
                limit: MAX_MODES,
            });
        }
        let basis = match cap {
            Some(c) => FockBasis::truncated(modes, levels, c),
            None => {
                if levels.checked_pow(modes as u32).map_or(true, |d| d > MAX_BASIS_DIM) {
                    return Err(SimError::TooLarge { nodes: modes, limit: 8 });
                }
                FockBasis::full(modes, levels)
            }
        };
        if basis.dim() > MAX_BASIS_DIM {
            return Err(SimError::TooLarge {
                nodes: modes,
                limit: MAX_MODES,
            });
        }
        Ok(basis)
    }

    /// Exchange couplings among qubits at frequencies `freqs`: nearest
    /// neighbors through their ZZ-free couplers, 2- and 3-hop pairs through
    /// the fixed residuals.
    pub fn couplings(&self, graph: &CouplingGraph, freqs: &[f64]) -> Result<Vec<(usize, usize, f64)>, SimError> {
        let mut out = Vec::new();
        for &(a, b) in graph.edges() {
            out.push((a, b, self.solver.exchange(freqs[a], freqs[b])?));
        }
        let powers = compute_hop_distances(graph, 3);
        let n = graph.node_count();
        for i in 0..n {
            for k in i + 1..n {
                let d = powers.dist(i, k);
                if d == 2 || d == 3 {
                    out.push((i, k, self.params().residual(d)));
                }
            }
        }
        Ok(out)
    }

    fn check_request(&self, graph: &CouplingGraph, assignment: &FrequencyAssignment) -> Result<(), SimError> {
        assignment
            .check_shape(graph)
            .map_err(|e| SimError::Invalid(e.to_string()))
    }

    fn gate_frequencies(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        gates: &[(usize, usize)],
    ) -> Result<Vec<f64>, SimError> {
        let mut freqs = assignment.node_ghz.clone();
        for &(a, b) in gates {
            let e = graph
                .edge_index(a, b)
                .ok_or_else(|| SimError::Invalid(format!("({a}, {b}) is not an edge")))?;
            freqs[a] = assignment.edge_ghz[e];
            freqs[b] = assignment.edge_ghz[e];
        }
        Ok(freqs)
    }

    fn system(&self, freqs: Vec<f64>, couplings: Vec<(usize, usize, f64)>, frame: f64) -> ModeSystem {
        let n = freqs.len();
        ModeSystem {
            freqs,
            alphas: vec![self.params().alpha; n],
            couplings,
            drives: Vec::new(),
            frame,
        }
    }

    /// Dense qubit-only Hamiltonian over the full `levels^N` basis.
    pub fn effective_graph_hamiltonian(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        scenario: Scenario,
    ) -> Result<(FockBasis, DMatrix<C64>), SimError> {
        self.check_request(graph, assignment)?;
        let basis = self.basis(graph.node_count(), None)?;
        let (freqs, frame, drives) = match scenario {
            Scenario::Idle => (assignment.node_ghz.clone(), 0.0, vec![]),
            Scenario::SingleQubitGate { qubit, axis } => {
                let drive = Drive {
                    mode: qubit,
                    strength: self.params().drive_omega,
                    axis,
                    phase: 0.0,
                };
                (assignment.node_ghz.clone(), assignment.node_ghz[qubit], vec![drive])
            }
            Scenario::TwoQubitGate { a, b } => {
                let f = self.gate_frequencies(graph, assignment, &[(a, b)])?;
                let frame = f[a];
                (f, frame, vec![])
            }
        };
        let couplings = self.couplings(graph, &freqs)?;
        let mut sys = self.system(freqs, couplings, frame);
        sys.drives = drives;
        let h = sys.hamiltonian(&basis);
        Ok((basis, h))
    }

    fn single_impl(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        source: usize,
        axis: Axis,
        amplitude: f64,
    ) -> Result<Vec<f64>, SimError> {
        self.check_request(graph, assignment)?;
        let n = graph.node_count();
        if source >= n {
            return Err(SimError::Invalid(format!("source {source} out of range")));
        }
        let basis = self.basis(n, self.caps.driven)?;
        let freqs = assignment.node_ghz.clone();
        let frame = freqs[source];
        let couplings = self.couplings(graph, &freqs)?;
        let mut sys = self.system(freqs, couplings, frame);
        sys.drives.push(Drive {
            mode: source,
            strength: self.params().drive_omega * amplitude,
            axis,
            phase: 0.0,
        });
        let prop = Propagator::new(&sys.hamiltonian(&basis));
        let times = durations(1.0 / self.params().drive_omega);
        let mut acc = vec![0.0; n];
        let mut count = 0.0;
        for psi0 in prepared_states(&basis, &[vec![source]]) {
            let coeffs = prop.coefficients(&psi0);
            for &t in &times {
                let exc = target_excitation(&basis, &prop.state_at(&coeffs, t));
                for (a, e) in acc.iter_mut().zip(exc) {
                    *a += e;
                }
                count += 1.0;
            }
        }
        Ok(acc.into_iter().map(|v| v / count).collect())
    }

    /// Averaged excitation of every qubit while `source` is driven; entry
    /// `k` is the crosstalk error on target `k` (the source's own entry is
    /// meaningless).
    pub fn single_excitations(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        source: usize,
        axis: Axis,
    ) -> Result<Vec<f64>, SimError> {
        self.single_impl(graph, assignment, source, axis, 1.0)
    }

    pub fn simulate_crosstalk_single(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        source: usize,
        target: usize,
        axis: Axis,
    ) -> Result<f64, SimError> {
        if source == target {
            return Err(SimError::Invalid("target coincides with source".into()));
        }
        if target >= graph.node_count() {
            return Err(SimError::Invalid(format!("target {target} out of range")));
        }
        Ok(self.single_excitations(graph, assignment, source, axis)?[target])
    }

    /// Averaged excitation of every qubit during a gate on edge `(a, b)`.
    pub fn two_excitations(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        a: usize,
        b: usize,
    ) -> Result<Vec<f64>, SimError> {
        self.check_request(graph, assignment)?;
        let n = graph.node_count();
        let freqs = self.gate_frequencies(graph, assignment, &[(a, b)])?;
        let frame = freqs[a];
        let couplings = self.couplings(graph, &freqs)?;
        let g = gate_coupling(&couplings, a, b);
        if !(g.abs() > MIN_GATE_COUPLING) {
            return Err(SimError::GateCouplingTooSmall { g_ghz: g });
        }
        let basis = self.basis(n, self.caps.conserving)?;
        let sys = self.system(freqs, couplings, frame);
        let prop = Propagator::from_real(&sys.real_hamiltonian(&basis));
        let times = durations(1.0 / g.abs());
        let mut acc = vec![0.0; n];
        let mut count = 0.0;
        for psi0 in prepared_states(&basis, &[vec![a, b]]) {
            let coeffs = prop.coefficients(&psi0);
            for &t in &times {
                let exc = target_excitation(&basis, &prop.state_at(&coeffs, t));
                for (s, e) in acc.iter_mut().zip(exc) {
                    *s += e;
                }
                count += 1.0;
            }
        }
        Ok(acc.into_iter().map(|v| v / count).collect())
    }

    pub fn simulate_crosstalk_two(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        edge: (usize, usize),
        target: usize,
    ) -> Result<f64, SimError> {
        if target == edge.0 || target == edge.1 {
            return Err(SimError::Invalid("target lies on the gate edge".into()));
        }
        if target >= graph.node_count() {
            return Err(SimError::Invalid(format!("target {target} out of range")));
        }
        Ok(self.two_excitations(graph, assignment, edge.0, edge.1)?[target])
    }

    /// Target excitation with several operations running at once.
    pub fn simulate_simultaneous(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        ops: &[ScheduledOp],
        target: usize,
    ) -> Result<f64, SimError> {
        self.check_request(graph, assignment)?;
        let n = graph.node_count();
        let mut used = vec![false; n];
        if target >= n {
            return Err(SimError::Invalid(format!("target {target} out of range")));
        }
        used[target] = true;
        for s in ops {
            for q in s.op.qubits() {
                if q >= n {
                    return Err(SimError::Invalid(format!("qubit {q} out of range")));
                }
                if used[q] {
                    return Err(SimError::Invalid(format!(
                        "qubit {q} is shared between operations or with the target"
                    )));
                }
                used[q] = true;
            }
        }
        let active: Vec<ScheduledOp> = ops.iter().copied().filter(|s| s.strength != 0.0).collect();
        match active.as_slice() {
            [] => Ok(0.0),
            [one] => match one.op {
                Operation::Single { qubit, axis } => {
                    Ok(self.single_impl(graph, assignment, qubit, axis, one.strength)?[target])
                }
                Operation::Two { a, b } => Ok(self.two_excitations(graph, assignment, a, b)?[target]),
            },
            [first, second] => match (first.op, second.op) {
                (Operation::Single { qubit: qa, axis: xa }, Operation::Single { qubit: qb, axis: xb }) => self
                    .simultaneous_drives(
                        graph,
                        assignment,
                        [(qa, xa, first.strength), (qb, xb, second.strength)],
                        target,
                    ),
                (Operation::Two { a: a0, b: b0 }, Operation::Two { a: a1, b: b1 }) => {
                    self.simultaneous_gates(graph, assignment, [(a0, b0), (a1, b1)], target)
                }
                _ => Err(SimError::Invalid(
                    "simultaneous runs must combine operations of one kind".into(),
                )),
            },
            _ => Err(SimError::Invalid("at most two simultaneous operations are supported".into())),
        }
    }

    /// Two resonant drives with different carriers. The frame follows the
    /// first carrier; the second drive's phase then winds at the carrier
    /// difference and is integrated with midpoint piecewise-constant steps.
    fn simultaneous_drives(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        drives: [(usize, Axis, f64); 2],
        target: usize,
    ) -> Result<f64, SimError> {
        let n = graph.node_count();
        let basis = self.basis(n, self.caps.driven.map(|c| c + 1))?;
        let freqs = assignment.node_ghz.clone();
        let frame = freqs[drives[0].0];
        let delta = freqs[drives[1].0] - frame;
        let couplings = self.couplings(graph, &freqs)?;
        let omega = self.params().drive_omega;
        let mut sys = self.system(freqs, couplings, frame);
        sys.drives.push(Drive {
            mode: drives[0].0,
            strength: omega * drives[0].2,
            axis: drives[0].1,
            phase: 0.0,
        });
        let base = sys.hamiltonian(&basis);
        let states = prepared_states(&basis, &[vec![drives[0].0], vec![drives[1].0]]);
        let times = durations(1.0 / omega);
        let interval = times[1] - times[0];
        let substeps = (interval / MAX_STEP_NS).ceil().max(1.0) as usize;
        let dt = interval / substeps as f64;
        let mut psis = states;
        let mut total = 0.0;
        let mut count = 0.0;
        let record = |psis: &[DVector<C64>], total: &mut f64, count: &mut f64| {
            for psi in psis {
                *total += target_excitation(&basis, psi)[target];
                *count += 1.0;
            }
        };
        record(&psis, &mut total, &mut count);
        let second = |phase: f64| Drive {
            mode: drives[1].0,
            strength: omega * drives[1].2,
            axis: drives[1].1,
            phase,
        };
        if delta == 0.0 {
            let mut h = base.clone();
            sys.add_drives(&basis, &[second(0.0)], &mut h);
            let prop = Propagator::new(&h);
            let coeffs: Vec<_> = psis.iter().map(|p| prop.coefficients(p)).collect();
            for &t in &times[1..] {
                for c in &coeffs {
                    total += target_excitation(&basis, &prop.state_at(c, t))[target];
                    count += 1.0;
                }
            }
            return Ok(total / count);
        }
        let mut t = 0.0;
        for _ in 1..times.len() {
            for _ in 0..substeps {
                let mid = t + 0.5 * dt;
                let mut h = base.clone();
                sys.add_drives(&basis, &[second(2.0 * PI * delta * mid)], &mut h);
                let step = step_unitary(h, dt);
                for psi in psis.iter_mut() {
                    *psi = &step * &*psi;
                }
                t += dt;
            }
            record(&psis, &mut total, &mut count);
        }
        Ok(total / count)
    }

    /// Two gates started together. Each runs for its own duration grid; once
    /// the shorter finishes its qubits return to their idle frequencies.
    fn simultaneous_gates(
        &self,
        graph: &CouplingGraph,
        assignment: &FrequencyAssignment,
        gates: [(usize, usize); 2],
        target: usize,
    ) -> Result<f64, SimError> {
        let n = graph.node_count();
        let basis = self.basis(n, self.caps.conserving.map(|c| c + 2))?;
        let both = self.gate_frequencies(graph, assignment, &gates)?;
        let frame = both[gates[0].0];
        let both_couplings = self.couplings(graph, &both)?;
        let g = [
            gate_coupling(&both_couplings, gates[0].0, gates[0].1),
            gate_coupling(&both_couplings, gates[1].0, gates[1].1),
        ];
        for &gi in &g {
            if !(gi.abs() > MIN_GATE_COUPLING) {
                return Err(SimError::GateCouplingTooSmall { g_ghz: gi });
            }
        }
        let span = [1.0 / g[0].abs(), 1.0 / g[1].abs()];
        let longer = if span[0] >= span[1] { 0 } else { 1 };
        let tail_freqs = self.gate_frequencies(graph, assignment, &[gates[longer]])?;
        let tail_couplings = self.couplings(graph, &tail_freqs)?;
        let p_both = Propagator::from_real(&self.system(both, both_couplings, frame).real_hamiltonian(&basis));
        let p_tail = Propagator::from_real(&self.system(tail_freqs, tail_couplings, frame).real_hamiltonian(&basis));
        let short_times = durations(span[1 - longer]);
        let long_times = durations(span[longer]);
        let states = prepared_states(&basis, &[vec![gates[0].0, gates[0].1], vec![gates[1].0, gates[1].1]]);
        let mut total = 0.0;
        let mut count = 0.0;
        for psi0 in &states {
            let c_both = p_both.coefficients(psi0);
            for (ts, tl) in short_times.iter().zip(&long_times) {
                let mid = p_both.state_at(&c_both, *ts);
                let end = p_tail.evolve(&mid, tl - ts);
                total += target_excitation(&basis, &end)[target];
                count += 1.0;
            }
        }
        Ok(total / count)
    }
}

fn gate_coupling(couplings: &[(usize, usize, f64)], a: usize, b: usize) -> f64 {
    couplings
        .iter()
        .find(|&&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a))
        .map(|c| c.2)
        .unwrap_or(0.0)
}

/// `exp(−i 2π H dt)` as a dense matrix.
fn step_unitary(h: DMatrix<C64>, dt: f64) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(h);
    let v = eig.eigenvectors;
    let mut scaled = v.clone();
    for (c, &e) in eig.eigenvalues.iter().enumerate() {
        let ph = C64::from_polar(1.0, -2.0 * PI * e * dt);
        for r in 0..scaled.nrows() {
            scaled[(r, c)] *= ph;
        }
    }
    scaled * v.adjoint()
}

/// Initial states for a run: each group of qubits starts in `|±⟩^⊗group`
/// (one shared sign per group), everything else in the ground state. One
/// state per sign combination.
fn prepared_states(basis: &FockBasis, groups: &[Vec<usize>]) -> Vec<DVector<C64>> {
    let combos = 1usize << groups.len();
    let qubits: Vec<usize> = groups.iter().flatten().copied().collect();
    let mut out = Vec::with_capacity(combos);
    for mask in 0..combos {
        let signs: Vec<f64> = (0..groups.len())
            .map(|g| if mask >> g & 1 == 0 { 1.0 } else { -1.0 })
            .collect();
        let mut psi = DVector::from_element(basis.dim(), C64::new(0.0, 0.0));
        let amp = (0.5f64).powf(qubits.len() as f64 / 2.0);
        for bits in 0..(1usize << qubits.len()) {
            let mut occ = vec![0u8; basis.modes()];
            let mut coef = amp;
            let mut offset = 0;
            for (g, group) in groups.iter().enumerate() {
                for (t, &q) in group.iter().enumerate() {
                    if bits >> (offset + t) & 1 == 1 {
                        occ[q] = 1;
                        coef *= signs[g];
                    }
                }
                offset += group.len();
            }
            let idx = basis
                .index(&occ)
                .expect("basis cap admits the prepared product state");
            psi[idx] += C64::new(coef, 0.0);
        }
        out.push(psi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_grid_includes_endpoints() {
        let d = durations(40.0);
        assert_eq!(d.len(), 20);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[19], 40.0);
    }

    #[test]
    fn prepared_states_are_normalized() {
        let basis = FockBasis::truncated(4, 3, 4);
        for psi in prepared_states(&basis, &[vec![0, 1], vec![3]]) {
            assert!((psi.norm() - 1.0).abs() < 1e-14);
        }
    }
}
