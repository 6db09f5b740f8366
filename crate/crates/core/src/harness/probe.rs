use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::assignment::FrequencyAssignment;
use crate::graph::CouplingGraph;
use crate::sim::{g_zz_eff, solve_zz_free, Axis, BuildingBlock, Dataset, OpKind, Operation, PhysicalParams, ScheduledOp, Simulator, LOG_ERR_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    ZzScan,
    Additivity,
    Locality,
    Resonance,
}

impl ProbeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zz_scan" => Some(Self::ZzScan),
            "additivity" => Some(Self::Additivity),
            "locality" => Some(Self::Locality),
            "resonance" => Some(Self::Resonance),
            _ => None,
        }
    }
}

/// ZZ-free coupler frequency at one qubit-frequency pair; empty when the
/// solver found none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZzRow {
    pub omega_q0: f64,
    pub omega_q1: f64,
    pub omega_c: Option<f64>,
    /// Residual ZZ at the solution, kHz.
    pub g_zz_khz: Option<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// ZZ-free line over an `n × n` grid of the qubit band, row-major in `omega_q0`.
pub fn zz_scan(params: &PhysicalParams, n: usize) -> Vec<ZzRow> {
    let grid = linspace(params.qubit_band.0, params.qubit_band.1, n);
    let mut rows = Vec::with_capacity(n * n);
    for &w0 in &grid {
        for &w1 in &grid {
            let solved = solve_zz_free(w0, w1, params).ok();
            let residual = solved.and_then(|wc| {
                g_zz_eff(
                    &BuildingBlock {
                        omega_q0: w0,
                        omega_q1: w1,
                        omega_c: wc,
                    },
                    params,
                )
                .ok()
            });
            rows.push(ZzRow {
                omega_q0: w0,
                omega_q1: w1,
                omega_c: solved,
                g_zz_khz: residual.map(|g| g * 1e6),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditivityProtocol {
    /// Chain of three: X drives on both ends, target in the middle.
    Rx3,
    /// Chain of five: gates on the two end edges, target in the middle.
    Rxy5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditivityRow {
    /// Target frequency minus the operation frequency, GHz.
    pub detuning: f64,
    pub e_a: f64,
    pub e_b: f64,
    pub e_simul: f64,
}

/// Individual and simultaneous target errors while the target frequency
/// is swept across `±span` around the operation frequency.
pub fn additivity_scan(params: &PhysicalParams, protocol: AdditivityProtocol, span: f64, points: usize) -> Result<Vec<AdditivityRow>, HarnessError> {
    let sim = Simulator::new(params.clone());
    let centre = 0.5 * (params.qubit_band.0 + params.qubit_band.1);
    let mut rows = Vec::with_capacity(points);
    for d in linspace(-span, span, points) {
        let row = match protocol {
            AdditivityProtocol::Rx3 => {
                let g = CouplingGraph::chain(3);
                let nodes = [centre, centre + d, centre];
                let a = FrequencyAssignment {
                    node_ghz: nodes.to_vec(),
                    edge_ghz: vec![0.5 * (nodes[0] + nodes[1]), 0.5 * (nodes[1] + nodes[2])],
                };
                let op_a = Operation::Single { qubit: 0, axis: Axis::X };
                let op_b = Operation::Single { qubit: 2, axis: Axis::X };
                simultaneous_row(&sim, &g, &a, op_a, op_b, 1, d)?
            }
            AdditivityProtocol::Rxy5 => {
                let g = CouplingGraph::chain(5);
                let off = 0.07 * (params.qubit_band.1 - params.qubit_band.0) / 0.2;
                let nodes = [centre - off, centre + off, centre + d, centre - off + 0.01 * off, centre + off - 0.01 * off];
                let a = FrequencyAssignment {
                    node_ghz: nodes.to_vec(),
                    edge_ghz: vec![centre, 0.5 * (nodes[1] + nodes[2]), 0.5 * (nodes[2] + nodes[3]), centre],
                };
                let op_a = Operation::Two { a: 0, b: 1 };
                let op_b = Operation::Two { a: 3, b: 4 };
                simultaneous_row(&sim, &g, &a, op_a, op_b, 2, d)?
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn simultaneous_row(
    sim: &Simulator,
    g: &CouplingGraph,
    a: &FrequencyAssignment,
    op_a: Operation,
    op_b: Operation,
    target: usize,
    detuning: f64,
) -> Result<AdditivityRow, HarnessError> {
    let off = |op| ScheduledOp { op, strength: 0.0 };
    let on = ScheduledOp::new;
    Ok(AdditivityRow {
        detuning,
        e_a: sim.simulate_simultaneous(g, a, &[on(op_a), off(op_b)], target)?,
        e_b: sim.simulate_simultaneous(g, a, &[off(op_a), on(op_b)], target)?,
        e_simul: sim.simulate_simultaneous(g, a, &[on(op_a), on(op_b)], target)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityRow {
    pub op: OpKind,
    pub distance: u32,
    pub count: usize,
    pub median_log_err: f64,
    pub median_raw_log_err: f64,
    /// Share of records at the lower clamp.
    pub at_floor: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-operation, per-distance error statistics of a dataset (distance is
/// the larger hop distance for gate records).
pub fn locality_table(data: &Dataset) -> Vec<LocalityRow> {
    let mut rows = Vec::new();
    for op in OpKind::ALL {
        for d in 1..=4 {
            let recs: Vec<_> = data.samples.iter().filter(|s| s.op == op && s.max_distance() == d).collect();
            if recs.is_empty() {
                continue;
            }
            rows.push(LocalityRow {
                op,
                distance: d,
                count: recs.len(),
                median_log_err: median(recs.iter().map(|s| s.log_err).collect()),
                median_raw_log_err: median(recs.iter().map(|s| s.raw_log_err).collect()),
                at_floor: recs.iter().filter(|s| s.log_err <= LOG_ERR_MIN).count() as f64 / recs.len() as f64,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceRow {
    /// Operation frequency minus the neighbour's frequency, GHz.
    pub detuning: f64,
    pub rx: f64,
    pub ry: f64,
    pub rxy: f64,
}

/// Nearest-neighbour crosstalk as a drive (or gate) frequency sweeps across
/// a neighbour fixed at the band centre.
pub fn resonance_scan(params: &PhysicalParams, span: f64, points: usize) -> Result<Vec<ResonanceRow>, HarnessError> {
    let sim = Simulator::new(params.clone());
    let centre = 0.5 * (params.qubit_band.0 + params.qubit_band.1);
    let half = 0.5 * (params.qubit_band.1 - params.qubit_band.0);
    let pair = CouplingGraph::chain(2);
    let trio = CouplingGraph::chain(3);
    let mut rows = Vec::with_capacity(points);
    for d in linspace(-span, span, points) {
        let w = centre + d;
        let a = FrequencyAssignment {
            node_ghz: vec![w, centre],
            edge_ghz: vec![0.5 * (w + centre)],
        };
        let gate = FrequencyAssignment {
            node_ghz: vec![centre - half, centre + half, centre],
            edge_ghz: vec![w, centre + 0.5 * half],
        };
        rows.push(ResonanceRow {
            detuning: d,
            rx: sim.simulate_crosstalk_single(&pair, &a, 0, 1, Axis::X)?,
            ry: sim.simulate_crosstalk_single(&pair, &a, 0, 1, Axis::Y)?,
            rxy: sim.simulate_crosstalk_two(&trio, &gate, (0, 1), 2)?,
        });
    }
    Ok(rows)
}
