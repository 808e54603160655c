//! Sub-function assignment and power allocation.
//!
//! The optimal allocation solves, for one OFDM symbol,
//!
//! ```text
//! maximize   Σ_g ½·log₂(N/M + N·η_g)
//! subject to Σ_g G[i,g]·η_g·ω[i,g] ≤ P   for every node i,   η ≥ 0
//! ```
//!
//! with `G[i,g] = 1/|h[i,g]|²` and `ω` the top-M assignment. The chosen
//! nodes of sub-carrier `g` then transmit `P[i,g] = G[i,g]·η_g`, which makes
//! every product `|h[i,g]|²·P[i,g]` equal to the level `η_g`.

mod kkt;
mod oracle;
mod sponge;

pub use kkt::{verify_kkt, KktReport};
pub use oracle::{oracle_solve, ORACLE_MAX_NODES, ORACLE_MAX_SUBCARRIERS};
pub use sponge::{sponge_squeeze, DEFAULT_TOLERANCE, ITERATION_BUDGET};

use crate::error::{Error, Result};
use crate::numerics::{cplus_unchecked, order_indexes, GainMatrix, SimParams};
use crate::rates::GammaEstimate;

/// Binary K×N matrix with exactly M ones per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    nodes: usize,
    subcarriers: usize,
    chosen: usize,
    omega: Vec<bool>,
}

impl AssignmentMatrix {
    /// Builds an assignment from explicit per-sub-carrier node lists.
    pub fn from_columns(nodes: usize, columns: &[Vec<usize>]) -> Result<Self> {
        let subcarriers = columns.len();
        let chosen = columns.first().map_or(0, Vec::len);
        if subcarriers == 0 || chosen == 0 {
            return Err(Error::Shape(
                "assignment needs at least one chosen node per sub-carrier".into(),
            ));
        }
        let mut omega = vec![false; nodes * subcarriers];
        for (g, col) in columns.iter().enumerate() {
            if col.len() != chosen {
                return Err(Error::Shape(format!(
                    "sub-carrier {g} has {} chosen nodes, expected {chosen}",
                    col.len()
                )));
            }
            for &i in col {
                if i >= nodes || omega[i * subcarriers + g] {
                    return Err(Error::InvalidParameter(format!(
                        "bad node {i} in sub-carrier {g}"
                    )));
                }
                omega[i * subcarriers + g] = true;
            }
        }
        Ok(AssignmentMatrix {
            nodes,
            subcarriers,
            chosen,
            omega,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    /// Ones per column (M).
    pub fn chosen(&self) -> usize {
        self.chosen
    }

    #[inline]
    pub fn get(&self, node: usize, subcarrier: usize) -> bool {
        self.omega[node * self.subcarriers + subcarrier]
    }

    /// Chosen nodes of one sub-carrier, ascending.
    pub fn column(&self, subcarrier: usize) -> Vec<usize> {
        (0..self.nodes)
            .filter(|&i| self.get(i, subcarrier))
            .collect()
    }

    pub(crate) fn check_against(&self, gains: &GainMatrix) -> Result<()> {
        if gains.nodes() != self.nodes || gains.subcarriers() != self.subcarriers {
            return Err(Error::Shape(format!(
                "assignment is {}x{} but gains are {}x{}",
                self.nodes,
                self.subcarriers,
                gains.nodes(),
                gains.subcarriers()
            )));
        }
        Ok(())
    }
}

/// Marks the `m` strongest nodes of every sub-carrier.
pub fn build_assignment(gains: &GainMatrix, m: usize) -> Result<AssignmentMatrix> {
    if m == 0 || m > gains.nodes() {
        return Err(Error::InvalidParameter(format!(
            "M must satisfy 1 <= M <= K (M = {m}, K = {})",
            gains.nodes()
        )));
    }
    let columns: Vec<Vec<usize>> = (0..gains.subcarriers())
        .map(|g| order_indexes(&gains.column(g)).map(|o| o.top(m).to_vec()))
        .collect::<Result<_>>()?;
    AssignmentMatrix::from_columns(gains.nodes(), &columns)
}

/// Nonnegative K×N power allocation of one OFDM symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    nodes: usize,
    subcarriers: usize,
    data: Vec<f64>,
}

impl PowerMatrix {
    pub fn zeros(nodes: usize, subcarriers: usize) -> Self {
        PowerMatrix {
            nodes,
            subcarriers,
            data: vec![0.0; nodes * subcarriers],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nodes = rows.len();
        let subcarriers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != subcarriers) {
            return Err(Error::Shape("ragged power rows".into()));
        }
        if rows.iter().flatten().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Domain(
                "power entries must be finite and >= 0".into(),
            ));
        }
        Ok(PowerMatrix {
            nodes,
            subcarriers,
            data: rows.concat(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    #[inline]
    pub fn get(&self, node: usize, subcarrier: usize) -> f64 {
        self.data[node * self.subcarriers + subcarrier]
    }

    #[inline]
    pub(crate) fn set(&mut self, node: usize, subcarrier: usize, value: f64) {
        self.data[node * self.subcarriers + subcarrier] = value;
    }

    /// Total power node `i` spends over all sub-carriers.
    pub fn node_total(&self, node: usize) -> f64 {
        self.data[node * self.subcarriers..(node + 1) * self.subcarriers]
            .iter()
            .sum()
    }
}

/// Average power rule: the chosen nodes of each sub-carrier invert their
/// channel down to the M-th strongest gain, normalized so that each node
/// spends `P` per symbol on average.
pub fn allocate_average(
    gains: &GainMatrix,
    params: &SimParams,
    gamma: &GammaEstimate,
) -> Result<PowerMatrix> {
    params.validate()?;
    if gains.nodes() != params.k || gains.subcarriers() != params.n {
        return Err(Error::Shape(format!(
            "gains are {}x{}, params expect {}x{}",
            gains.nodes(),
            gains.subcarriers(),
            params.k,
            params.n
        )));
    }
    if gamma.k != params.k || gamma.m != params.m {
        return Err(Error::InvalidParameter(format!(
            "normalization was estimated for (K={}, M={}), params have (K={}, M={})",
            gamma.k, gamma.m, params.k, params.m
        )));
    }
    let (k, m, n) = (params.k as f64, params.m as f64, params.n as f64);
    let scale = k * params.power / (n * m * gamma.value);
    let mut power = PowerMatrix::zeros(params.k, params.n);
    for g in 0..params.n {
        let column = gains.column(g);
        let order = order_indexes(&column)?;
        let weakest = column[order.at(params.m - 1)];
        for &i in order.top(params.m) {
            if column[i] <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "chosen node {i} has zero gain on sub-carrier {g}"
                )));
            }
            power.set(i, g, scale * (weakest / column[i]));
        }
    }
    Ok(power)
}

/// Result of an optimal power allocation for one symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSolution {
    /// Level per sub-carrier.
    pub eta: Vec<f64>,
    /// Multiplier per node for the constraint `Σ_g G·η·ω ≤ P`, relative to
    /// the utility `Σ_g ½·log₂(N/M + N·η_g)`.
    pub mu: Vec<f64>,
    pub power: PowerMatrix,
    /// `(M/(K·N))·Σ_g C⁺(N/M + N·η_g)`, the instantaneous computation rate.
    pub objective: f64,
    /// `Σ_g ½·log₂(N/M + N·η_g)`, the unclipped program objective.
    pub utility: f64,
    pub residuals: KktReport,
    pub iterations: usize,
}

/// Instantaneous computation rate of a set of levels.
pub fn levels_rate(eta: &[f64], params: &SimParams) -> f64 {
    let (k, m, n) = (params.k as f64, params.m as f64, params.n as f64);
    let total: f64 = eta.iter().map(|&e| cplus_unchecked(n / m + n * e)).sum();
    m / (k * n) * total
}

/// Unclipped program objective of a set of levels.
pub fn levels_utility(eta: &[f64], params: &SimParams) -> f64 {
    let (m, n) = (params.m as f64, params.n as f64);
    eta.iter().map(|&e| 0.5 * (n / m + n * e).log2()).sum()
}

/// Feasible starting point: every node spreads `P/N` over each sub-carrier,
/// so `η_g = min over chosen i of |h[i,g]|²·P/N`.
pub fn equal_split_levels(
    gains: &GainMatrix,
    assignment: &AssignmentMatrix,
    params: &SimParams,
) -> Result<Vec<f64>> {
    assignment.check_against(gains)?;
    let share = params.power / params.n as f64;
    Ok((0..gains.subcarriers())
        .map(|g| {
            assignment
                .column(g)
                .into_iter()
                .map(|i| gains.get(i, g) * share)
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// `P[i,g] = G[i,g]·η_g·ω[i,g]`.
pub fn power_from_levels(
    eta: &[f64],
    gains: &GainMatrix,
    assignment: &AssignmentMatrix,
) -> PowerMatrix {
    let mut power = PowerMatrix::zeros(gains.nodes(), gains.subcarriers());
    for (g, &level) in eta.iter().enumerate() {
        for i in assignment.column(g) {
            power.set(i, g, level / gains.get(i, g));
        }
    }
    power
}

/// Shared precondition checks of the optimal-allocation solvers.
fn check_program(
    gains: &GainMatrix,
    assignment: &AssignmentMatrix,
    params: &SimParams,
) -> Result<()> {
    params.validate()?;
    assignment.check_against(gains)?;
    if gains.nodes() != params.k || gains.subcarriers() != params.n {
        return Err(Error::Shape(format!(
            "gains are {}x{}, params expect {}x{}",
            gains.nodes(),
            gains.subcarriers(),
            params.k,
            params.n
        )));
    }
    if assignment.chosen() != params.m {
        return Err(Error::Shape(format!(
            "assignment chooses {} nodes per sub-carrier, params have M = {}",
            assignment.chosen(),
            params.m
        )));
    }
    if !(params.power > 0.0) {
        return Err(Error::InvalidParameter(
            "optimal allocation needs a positive budget".into(),
        ));
    }
    for g in 0..gains.subcarriers() {
        for i in assignment.column(g) {
            if !(gains.get(i, g) > 0.0) {
                return Err(Error::Degenerate(format!(
                    "chosen node {i} has zero gain on sub-carrier {g}"
                )));
            }
        }
    }
    Ok(())
}
