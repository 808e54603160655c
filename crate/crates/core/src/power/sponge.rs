//! Sponge-squeezing: dual descent on the per-node multipliers.
//!
//! For fixed multipliers `μ`, every sub-carrier's level is the water-filling
//! answer `η_g = max{0, κ/w_g − 1/M}` with `w_g = Σ_i μ_i·G[i,g]·ω[i,g]` and
//! `κ = 1/(2 ln 2)`. The multipliers are the boards pressing on the sponges:
//! raising `μ_i` squeezes every sub-carrier node `i` takes part in.
//!
//! 1. Initialization: each node spreads `P/N` evenly; `μ` is chosen so that
//!    this point is roughly stationary.
//! 2. Squeezing: boards are pressed one at a time, each exactly until its
//!    node spends `P` (or released to zero if the node cannot fill its
//!    budget even unpressed). Every press lowers the convex dual
//!    `D(μ) = Σ_g max_η[κ·ln(1/M + η) − w_g·η] + P·Σ_i μ_i`.
//! 3. Termination: projected Newton steps on `D`, falling back to a squeeze
//!    sweep whenever a step makes too little progress, until the budget
//!    violation is below tolerance. The levels are finally rescaled so that
//!    the most loaded node spends exactly `P`.

use nalgebra::{DMatrix, DVector};

use super::kkt::kkt_report;
use super::{
    check_program, levels_rate, levels_utility, power_from_levels, AssignmentMatrix, PowerSolution,
};
use crate::error::{Error, Result};
use crate::numerics::{GainMatrix, SimParams};

/// Relative budget tolerance used when callers have no preference.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Total squeeze plus Newton iterations before giving up.
pub const ITERATION_BUDGET: usize = 100_000;

const SQUEEZE_SWEEPS: usize = 20;
const STALL_LIMIT: usize = 20;
const RESIDUAL_TOLERANCE: f64 = 1e-6;
const KAPPA: f64 = 0.5 * std::f64::consts::LOG2_E;
const ARMIJO: f64 = 1e-4;

/// Constraint structure restricted to nodes that are chosen somewhere.
struct Program {
    budget: f64,
    floor: f64,
    nodes: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl Program {
    fn new(gains: &GainMatrix, assignment: &AssignmentMatrix, params: &SimParams) -> Self {
        let n = gains.subcarriers();
        let mut nodes = Vec::new();
        let mut rows = Vec::new();
        let mut cols = vec![Vec::new(); n];
        for i in 0..gains.nodes() {
            let row: Vec<(usize, f64)> = (0..n)
                .filter(|&g| assignment.get(i, g))
                .map(|g| (g, 1.0 / gains.get(i, g)))
                .collect();
            if row.is_empty() {
                continue;
            }
            let j = nodes.len();
            for &(g, inv) in &row {
                cols[g].push((j, inv));
            }
            nodes.push(i);
            rows.push(row);
        }
        Program {
            budget: params.power,
            floor: 1.0 / params.m as f64,
            nodes,
            rows,
            cols,
        }
    }

    fn weights(&self, mu: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|col| col.iter().map(|&(j, inv)| mu[j] * inv).sum())
            .collect()
    }

    fn levels(&self, weights: &[f64]) -> Vec<f64> {
        weights
            .iter()
            .map(|&w| {
                if w > 0.0 {
                    (KAPPA / w - self.floor).max(0.0)
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    fn loads(&self, eta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(g, inv)| inv * eta[g]).sum())
            .collect()
    }

    fn dual(&self, mu: &[f64]) -> f64 {
        let a = self.floor;
        let mut value = self.budget * mu.iter().sum::<f64>();
        for w in self.weights(mu) {
            if !(w > 0.0) {
                return f64::INFINITY;
            }
            value += if KAPPA / w > a {
                KAPPA * (KAPPA / w).ln() - KAPPA + a * w
            } else {
                KAPPA * a.ln()
            };
        }
        value
    }

    /// Largest budget violation relative to `P`, accounting for the sign
    /// constraint on `μ`.
    fn violation(&self, mu: &[f64], loads: &[f64]) -> f64 {
        mu.iter()
            .zip(loads)
            .map(|(&u, &l)| {
                let gap = self.budget - l;
                if u > 0.0 {
                    gap.abs()
                } else {
                    (-gap).max(0.0)
                }
            })
            .fold(0.0, f64::max)
            / self.budget
    }

    /// Presses board `j` until node `j` spends exactly `P`, holding the
    /// other boards fixed.
    fn squeeze_node(&self, mu: &mut [f64], weights: &mut [f64], j: usize) {
        let row = &self.rows[j];
        let rest: Vec<f64> = row
            .iter()
            .map(|&(g, inv)| weights[g] - mu[j] * inv)
            .collect();
        // load of node j and its derivative at board position u
        let load = |u: f64| -> (f64, f64) {
            let mut value = 0.0;
            let mut slope = 0.0;
            for (&(_, inv), &r) in row.iter().zip(&rest) {
                let w = (r + u * inv).max(0.0);
                if w <= 0.0 {
                    return (f64::INFINITY, f64::NEG_INFINITY);
                }
                let eta = KAPPA / w - self.floor;
                if eta > 0.0 {
                    value += inv * eta;
                    slope -= KAPPA * inv * inv / (w * w);
                }
            }
            (value, slope)
        };

        let target = self.budget;
        let position = if load(0.0).0 <= target {
            0.0
        } else {
            // load(u) <= |row|·κ/u, so this board position is never short
            let mut hi = row.len() as f64 * KAPPA / target;
            let mut lo = 0.0;
            let mut u = if mu[j] > 0.0 && mu[j] < hi {
                mu[j]
            } else {
                0.5 * hi
            };
            for _ in 0..200 {
                let (value, slope) = load(u);
                let excess = value - target;
                if excess.abs() <= 1e-14 * target {
                    break;
                }
                if excess > 0.0 {
                    lo = u;
                } else {
                    hi = u;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
                let newton = u - excess / slope;
                u = if slope < 0.0 && newton > lo && newton < hi {
                    newton
                } else {
                    0.5 * (lo + hi)
                };
            }
            u
        };
        for (&(g, inv), &r) in row.iter().zip(&rest) {
            weights[g] = r + position * inv;
        }
        mu[j] = position;
    }

    /// One Gauss-Seidel pass of [`Program::squeeze_node`] over all nodes.
    fn squeeze_sweep(&self, mu: &mut [f64]) {
        let mut weights = self.weights(mu);
        for j in 0..mu.len() {
            self.squeeze_node(mu, &mut weights, j);
        }
    }

    fn state(&self, mu: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let weights = self.weights(mu);
        let eta = self.levels(&weights);
        let loads = self.loads(&eta);
        let violation = self.violation(mu, &loads);
        (weights, eta, loads, violation)
    }

    fn initial_multipliers(&self, eta: &[f64]) -> Vec<f64> {
        let counts: Vec<f64> = self.cols.iter().map(|c| c.len() as f64).collect();
        self.rows
            .iter()
            .map(|row| {
                let total: f64 = row
                    .iter()
                    .map(|&(g, inv)| KAPPA / ((self.floor + eta[g]) * counts[g] * inv))
                    .sum();
                total / row.len() as f64
            })
            .collect()
    }
}

/// Optimal levels, multipliers and per-node powers for one OFDM symbol.
///
/// `tol` bounds the relative budget violation at termination. The returned
/// solution always has `max_i Σ_g P[i,g] = P` up to rounding.
pub fn sponge_squeeze(
    gains: &GainMatrix,
    assignment: &AssignmentMatrix,
    params: &SimParams,
    tol: f64,
) -> Result<PowerSolution> {
    check_program(gains, assignment, params)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let program = Program::new(gains, assignment, params);
    let budget = program.budget;
    let inner_tol = (tol * 1e-2).max(1e-13);

    // initialization phase
    let start = super::equal_split_levels(gains, assignment, params)?;
    let mut mu = program.initial_multipliers(&start);
    let mut iterations = 0;

    // squeezing phase
    for _ in 0..SQUEEZE_SWEEPS {
        iterations += 1;
        program.squeeze_sweep(&mut mu);
        if program.state(&mu).3 < 1e-2 {
            break;
        }
    }

    // termination phase
    let mut violation;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    loop {
        let (weights, eta, loads, current) = program.state(&mu);
        violation = current;
        if violation <= inner_tol {
            break;
        }
        if violation < 0.9 * best {
            best = violation;
            since_best = 0;
        } else {
            since_best += 1;
            // stuck at the rounding floor but within the caller's tolerance
            if since_best >= STALL_LIMIT && violation <= tol {
                break;
            }
        }
        if iterations >= ITERATION_BUDGET {
            return Err(Error::NoConvergence {
                iterations,
                max_violation: violation,
            });
        }
        iterations += 1;
        let grad: Vec<f64> = loads.iter().map(|&l| budget - l).collect();
        match newton_step(&program, &mu, &weights, &eta, &grad, violation) {
            Some(next) if program.state(&next).3 <= 0.5 * violation => mu = next,
            Some(next) => {
                mu = next;
                program.squeeze_sweep(&mut mu);
            }
            None => program.squeeze_sweep(&mut mu),
        }
    }

    let mut eta = program.levels(&program.weights(&mu));
    let max_load = program.loads(&eta).into_iter().fold(0.0, f64::max);
    if max_load > 0.0 {
        let scale = budget / max_load;
        eta.iter_mut().for_each(|e| *e *= scale);
    }
    if violation > tol {
        return Err(Error::NoConvergence {
            iterations,
            max_violation: violation,
        });
    }

    let mut full_mu = vec![0.0; gains.nodes()];
    for (j, &i) in program.nodes.iter().enumerate() {
        full_mu[i] = mu[j];
    }
    let residuals = kkt_report(
        &eta,
        &full_mu,
        gains,
        assignment,
        params,
        RESIDUAL_TOLERANCE,
    );
    Ok(PowerSolution {
        power: power_from_levels(&eta, gains, assignment),
        objective: levels_rate(&eta, params),
        utility: levels_utility(&eta, params),
        eta,
        mu: full_mu,
        residuals,
        iterations,
    })
}

/// One projected Newton step with backtracking. Returns `None` when no
/// step makes progress.
fn newton_step(
    program: &Program,
    mu: &[f64],
    weights: &[f64],
    eta: &[f64],
    grad: &[f64],
    violation: f64,
) -> Option<Vec<f64>> {
    let budget = program.budget;
    let nk = mu.len();
    let mu_scale = mu
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let c = mu_scale / budget;
    let pg = mu
        .iter()
        .zip(grad)
        .map(|(&u, &d)| (u - (u - c * d).max(0.0)).abs())
        .fold(0.0, f64::max);
    let eps = (1e-8 * mu_scale).min(pg);

    // nodes pinned at the bound
    let pinned: Vec<bool> = (0..nk).map(|j| mu[j] <= eps && grad[j] > 0.0).collect();
    let free: Vec<usize> = (0..nk).filter(|&j| !pinned[j]).collect();
    let mut slot = vec![usize::MAX; nk];
    for (f, &j) in free.iter().enumerate() {
        slot[j] = f;
    }

    let nf = free.len();
    let mut hess = DMatrix::<f64>::zeros(nf, nf);
    for (g, col) in program.cols.iter().enumerate() {
        if !(eta[g] > 0.0) {
            continue;
        }
        let curvature = KAPPA / (weights[g] * weights[g]);
        for &(j, gj) in col {
            if slot[j] == usize::MAX {
                continue;
            }
            for &(l, gl) in col {
                if slot[l] != usize::MAX {
                    hess[(slot[j], slot[l])] += curvature * gj * gl;
                }
            }
        }
    }
    // Marquardt damping; nodes whose sub-carriers are all dry borrow the
    // curvature they would have at the water line.
    let damping = 1e-12 + violation.min(1e-4);
    for (f, &j) in free.iter().enumerate() {
        let diag = hess[(f, f)];
        hess[(f, f)] += if diag > 0.0 {
            damping * diag
        } else {
            program.rows[j]
                .iter()
                .map(|&(_, inv)| program.floor * program.floor / KAPPA * inv * inv)
                .sum()
        };
    }
    let rhs = DVector::from_iterator(nf, free.iter().map(|&j| -grad[j]));
    let step_free = match hess.cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => rhs.scale(c),
    };

    let mut direction = vec![0.0; nk];
    for j in 0..nk {
        direction[j] = if pinned[j] {
            -mu[j]
        } else {
            step_free[slot[j]]
        };
    }

    let project = |alpha: f64| -> Vec<f64> {
        mu.iter()
            .zip(&direction)
            .map(|(&u, &d)| (u + alpha * d).max(0.0))
            .collect()
    };
    let base = program.dual(mu);
    let decrease = |candidate: &[f64]| -> f64 {
        candidate
            .iter()
            .zip(mu)
            .zip(grad)
            .map(|((&x, &u), &d)| d * (x - u))
            .sum()
    };

    // Near the optimum the dual decrease drops below rounding; steps are
    // then judged by the budget violation instead.
    let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
    if -slope > 1e-12 * (1.0 + base.abs()) {
        let mut alpha = 1.0;
        for _ in 0..60 {
            let candidate = project(alpha);
            let value = program.dual(&candidate);
            if value.is_finite() && value < base && value <= base + ARMIJO * decrease(&candidate) {
                return Some(candidate);
            }
            alpha *= 0.5;
        }
    }
    let mut alpha = 1.0;
    for _ in 0..30 {
        let candidate = project(alpha);
        let w = program.weights(&candidate);
        if w.iter().all(|&x| x > 0.0) {
            let loads = program.loads(&program.levels(&w));
            if program.violation(&candidate, &loads) < violation {
                return Some(candidate);
            }
        }
        alpha *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ChannelTensor;
    use crate::power::{build_assignment, equal_split_levels, oracle_solve, verify_kkt};
    use proptest::prelude::*;

    fn solve(rows: &[Vec<f64>], m: usize, power: f64) -> PowerSolution {
        let gains = GainMatrix::from_rows(rows).unwrap();
        let a = build_assignment(&gains, m).unwrap();
        let params = SimParams::new(rows.len(), m, rows[0].len(), power);
        sponge_squeeze(&gains, &a, &params, DEFAULT_TOLERANCE).unwrap()
    }

    #[test]
    fn single_constraint_is_tight() {
        let s = solve(&[vec![2.0]], 1, 3.0);
        assert!((s.eta[0] - 6.0).abs() < 1e-9);
        assert!((s.power.get(0, 0) - 3.0).abs() < 1e-9);
        assert!(s.residuals.passed);
    }

    #[test]
    fn single_node_water_filling() {
        // G = [1, 4] means gains [1, 1/4]; threshold lands exactly on the
        // weaker sub-carrier.
        let s = solve(&[vec![1.0, 0.25]], 1, 3.0);
        assert!((s.eta[0] - 3.0).abs() < 1e-7, "{:?}", s.eta);
        assert!(s.eta[1].abs() < 1e-7);
        assert!((s.power.get(0, 0) - 3.0).abs() < 1e-6);
        assert!(s.power.get(0, 1).abs() < 1e-6);
    }

    #[test]
    fn equal_gains_give_uniform_levels() {
        for n in 1..=6 {
            let rows = vec![vec![0.8; n]; 3];
            let s = solve(&rows, 3, 2.0);
            for e in &s.eta {
                assert!((e - s.eta[0]).abs() < 1e-9 * s.eta[0]);
            }
            assert!((s.eta[0] - 0.8 * 2.0 / n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn levels_equalize_products() {
        let gains = ChannelTensor::draw(12, 6, 1, 4, 0).gains(0);
        let a = build_assignment(&gains, 3).unwrap();
        let params = SimParams::new(12, 3, 6, 10.0);
        let s = sponge_squeeze(&gains, &a, &params, DEFAULT_TOLERANCE).unwrap();
        for g in 0..6 {
            for i in a.column(g) {
                let product = gains.get(i, g) * s.power.get(i, g);
                assert!((product - s.eta[g]).abs() <= 1e-12 * (1.0 + s.eta[g]));
            }
        }
        let report = verify_kkt(&s, &gains, &a, &params, 1e-6);
        assert!(report.passed, "{report:?}");
        assert!(report.max_power_gap < 1e-8 * params.power);
    }

    #[test]
    fn dominates_equal_split() {
        for trial in 0..200 {
            let gains = ChannelTensor::draw(16, 8, 1, 21, trial).gains(0);
            let a = build_assignment(&gains, 4).unwrap();
            let params = SimParams::new(16, 4, 8, 10.0);
            let s = sponge_squeeze(&gains, &a, &params, DEFAULT_TOLERANCE).unwrap();
            let base = equal_split_levels(&gains, &a, &params).unwrap();
            assert!(s.utility >= levels_utility(&base, &params) - 1e-10);
            assert!(s.residuals.passed, "trial {trial}: {:?}", s.residuals);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let gains = GainMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let a = build_assignment(&gains, 1).unwrap();
        let params = SimParams::new(1, 1, 2, 1.0);
        assert!(matches!(
            sponge_squeeze(&gains, &a, &params, 1e-8),
            Err(Error::Degenerate(_))
        ));
        let gains = GainMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!(sponge_squeeze(&gains, &a, &params, 0.0).is_err());
        let zero = SimParams::new(1, 1, 2, 0.0);
        assert!(sponge_squeeze(&gains, &a, &zero, 1e-8).is_err());
    }

    #[test]
    fn gain_and_budget_scaling_cancel() {
        // gains·c with budget P/c leaves the feasible levels unchanged
        let gains = ChannelTensor::draw(10, 6, 1, 2, 0).gains(0);
        let a = build_assignment(&gains, 5).unwrap();
        let params = SimParams::new(10, 5, 6, 4.0);
        let base = sponge_squeeze(&gains, &a, &params, DEFAULT_TOLERANCE).unwrap();
        for c in [0.25, 3.0, 1e3] {
            let scaled = SimParams::new(10, 5, 6, 4.0 / c);
            let s = sponge_squeeze(&gains.scaled(c), &a, &scaled, DEFAULT_TOLERANCE).unwrap();
            for (x, y) in s.eta.iter().zip(&base.eta) {
                assert!((x - y).abs() < 1e-7 * (1.0 + y));
            }
            for i in 0..10 {
                for g in 0..6 {
                    let expect = base.power.get(i, g) / c;
                    assert!((s.power.get(i, g) - expect).abs() < 1e-7 * (1.0 + expect));
                }
            }
        }
    }

    fn instance() -> impl Strategy<Value = (usize, usize, usize, f64, Vec<f64>)> {
        (
            1usize..=6,
            1usize..=8,
            prop_oneof![Just(0.5), Just(1.0), Just(10.0), 0.01f64..100.0],
        )
            .prop_flat_map(|(k, n, p)| {
                (
                    Just(k),
                    1..=k,
                    Just(n),
                    Just(p),
                    proptest::collection::vec(1e-3f64..5.0, k * n),
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn solution_is_feasible_equalized_and_dominant((k, m, n, p, data) in instance()) {
            let gains = GainMatrix::new(k, n, data).unwrap();
            let a = build_assignment(&gains, m).unwrap();
            let params = SimParams::new(k, m, n, p);
            let s = sponge_squeeze(&gains, &a, &params, DEFAULT_TOLERANCE).unwrap();
            prop_assert!(s.residuals.passed, "{:?}", s.residuals);
            let max_total = (0..k).map(|i| s.power.node_total(i)).fold(0.0, f64::max);
            prop_assert!((max_total - p).abs() <= 1e-8 * p);
            for g in 0..n {
                for i in a.column(g) {
                    let product = gains.get(i, g) * s.power.get(i, g);
                    prop_assert!((product - s.eta[g]).abs() <= 1e-12 * (1.0 + s.eta[g]));
                }
            }
            let equal = equal_split_levels(&gains, &a, &params).unwrap();
            prop_assert!(s.utility >= levels_utility(&equal, &params) - 1e-10);
        }

        #[test]
        fn agrees_with_oracle((k, m, n, p, data) in instance()) {
            let gains = GainMatrix::new(k, n, data).unwrap();
            let a = build_assignment(&gains, m).unwrap();
            let params = SimParams::new(k, m, n, p);
            let s = sponge_squeeze(&gains, &a, &params, DEFAULT_TOLERANCE).unwrap();
            let o = oracle_solve(&gains, &a, &params).unwrap();
            prop_assert!((s.utility - o.utility).abs() <= 1e-6 * o.utility.abs().max(1e-3));
        }
    }
}
