use super::{AssignmentMatrix, PowerSolution};
use crate::numerics::{GainMatrix, SimParams};

/// Levels below this fraction of `1/M + max η` count as inactive.
const ACTIVE_FRACTION: f64 = 1e-9;

/// Optimality certificate of a power solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Largest relative budget overrun, or negativity of η/μ.
    pub feasibility: f64,
    /// Largest `μ_i·|P − load_i|`, relative to `P·max μ`.
    pub slackness: f64,
    /// Relative spread of `(1/M + η_g)·Σ_i μ_i·G[i,g]·ω[i,g]` over active
    /// sub-carriers, or the dual-feasibility violation of an inactive one.
    pub stationarity: f64,
    /// `|max_i load_i − P|`, in power units.
    pub max_power_gap: f64,
    pub passed: bool,
}

impl KktReport {
    pub fn max_relative(&self, budget: f64) -> f64 {
        self.feasibility
            .max(self.slackness)
            .max(self.stationarity)
            .max(self.max_power_gap / budget)
    }
}

/// Checks a candidate against the optimality conditions of the level
/// program. `μ` is only determined up to a positive factor, so stationarity
/// is judged by the spread of the common value rather than its magnitude.
pub fn verify_kkt(
    solution: &PowerSolution,
    gains: &GainMatrix,
    assignment: &AssignmentMatrix,
    params: &SimParams,
    tol: f64,
) -> KktReport {
    kkt_report(&solution.eta, &solution.mu, gains, assignment, params, tol)
}

pub(crate) fn kkt_report(
    eta: &[f64],
    mu: &[f64],
    gains: &GainMatrix,
    assignment: &AssignmentMatrix,
    params: &SimParams,
    tol: f64,
) -> KktReport {
    let budget = params.power;
    let a = 1.0 / params.m as f64;
    let (k, n) = (gains.nodes(), gains.subcarriers());
    if eta.len() != n || mu.len() != k || assignment.nodes() != k || assignment.subcarriers() != n {
        return KktReport {
            feasibility: f64::INFINITY,
            slackness: f64::INFINITY,
            stationarity: f64::INFINITY,
            max_power_gap: f64::INFINITY,
            passed: false,
        };
    }

    let mut loads = vec![0.0; k];
    let mut weights = vec![0.0; n];
    for i in 0..k {
        for g in 0..n {
            if assignment.get(i, g) {
                let inv = 1.0 / gains.get(i, g);
                loads[i] += inv * eta[g];
                weights[g] += mu[i] * inv;
            }
        }
    }

    let negativity = eta
        .iter()
        .chain(mu)
        .map(|&x| (-x).max(0.0))
        .fold(0.0, f64::max);
    let overrun = loads
        .iter()
        .map(|&l| ((l - budget) / budget).max(0.0))
        .fold(0.0, f64::max);
    let feasibility = overrun.max(negativity);

    let mu_max = mu.iter().copied().fold(0.0, f64::max);
    let slackness = if mu_max > 0.0 {
        mu.iter()
            .zip(&loads)
            .map(|(&u, &l)| u * (budget - l).abs())
            .fold(0.0, f64::max)
            / (budget * mu_max)
    } else {
        0.0
    };

    let eta_max = eta.iter().copied().fold(0.0, f64::max);
    let threshold = ACTIVE_FRACTION * (a + eta_max);
    let active: Vec<f64> = (0..n)
        .filter(|&g| eta[g] > threshold)
        .map(|g| (a + eta[g]) * weights[g])
        .collect();
    let stationarity = if active.is_empty() {
        1.0
    } else {
        let hi = active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = active.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = active.iter().sum::<f64>() / active.len() as f64;
        if !(mean > 0.0) {
            1.0
        } else {
            let spread = (hi - lo) / mean;
            let inactive = (0..n)
                .filter(|&g| eta[g] <= threshold)
                .map(|g| ((mean - a * weights[g]) / mean).max(0.0))
                .fold(0.0, f64::max);
            spread.max(inactive)
        }
    };

    let max_load = loads.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_power_gap = (max_load - budget).abs();

    let passed = feasibility <= tol
        && slackness <= tol
        && stationarity <= tol
        && max_power_gap <= tol * budget;
    KktReport {
        feasibility,
        slackness,
        stationarity,
        max_power_gap,
        passed,
    }
}
