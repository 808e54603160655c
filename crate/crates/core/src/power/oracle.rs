//! Reference solver for small instances: a primal log-barrier method with
//! Newton directions and golden-section line search. Deliberately shares
//! nothing with the sponge solver beyond the input types.

use super::kkt::kkt_report;
use super::{
    check_program, levels_rate, levels_utility, power_from_levels, AssignmentMatrix, PowerSolution,
};
use crate::error::{Error, Result};
use crate::numerics::{GainMatrix, SimParams};

pub const ORACLE_MAX_NODES: usize = 6;
pub const ORACLE_MAX_SUBCARRIERS: usize = 8;

const KAPPA: f64 = 0.5 * std::f64::consts::LOG2_E;
const T_GROWTH: f64 = 8.0;
const T_FINAL: f64 = 1e13;
const NEWTON_ROUNDS: usize = 80;
const GOLDEN_ROUNDS: usize = 120;

struct Barrier {
    budget: f64,
    floor: f64,
    // (sub-carrier, 1/|h|²) per constrained node
    rows: Vec<Vec<(usize, f64)>>,
    nodes: Vec<usize>,
    n: usize,
}

impl Barrier {
    fn slacks(&self, eta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| self.budget - row.iter().map(|&(g, c)| c * eta[g]).sum::<f64>())
            .collect()
    }

    fn value(&self, t: f64, eta: &[f64]) -> f64 {
        if eta.iter().any(|&e| !(e > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let slacks = self.slacks(eta);
        if slacks.iter().any(|&s| !(s > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let utility: f64 = eta.iter().map(|&e| KAPPA * (self.floor + e).ln()).sum();
        t * utility
            + slacks.iter().map(|s| s.ln()).sum::<f64>()
            + eta.iter().map(|e| e.ln()).sum::<f64>()
    }

    /// Gradient and negated Hessian of the barrier objective.
    fn derivatives(&self, t: f64, eta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.n;
        let slacks = self.slacks(eta);
        let mut grad: Vec<f64> = eta
            .iter()
            .map(|&e| t * KAPPA / (self.floor + e) + 1.0 / e)
            .collect();
        let mut neg_hess = vec![vec![0.0; n]; n];
        for g in 0..n {
            let e = eta[g];
            neg_hess[g][g] = t * KAPPA / (self.floor + e).powi(2) + 1.0 / (e * e);
        }
        for (row, &s) in self.rows.iter().zip(&slacks) {
            for &(g, cg) in row {
                grad[g] -= cg / s;
                for &(h, ch) in row {
                    neg_hess[g][h] += cg * ch / (s * s);
                }
            }
        }
        (grad, neg_hess)
    }

    /// Largest step keeping every level and slack positive.
    fn max_step(&self, eta: &[f64], dir: &[f64]) -> f64 {
        let mut limit = f64::INFINITY;
        for (e, d) in eta.iter().zip(dir) {
            if *d < 0.0 {
                limit = limit.min(-e / d);
            }
        }
        for (row, s) in self.rows.iter().zip(self.slacks(eta)) {
            let rise: f64 = row.iter().map(|&(g, c)| c * dir[g]).sum();
            if rise > 0.0 {
                limit = limit.min(s / rise);
            }
        }
        limit
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col] == 0.0 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Maximizes a unimodal function on `[0, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, hi);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ROUNDS {
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

/// Least-squares multipliers of the tight nodes from the stationarity
/// equations `Σ_i μ_i·G[i,g] = κ/(1/M + η_g)` of the active sub-carriers,
/// lightly pulled towards the last barrier stage so the system is never
/// singular.
fn fit_multipliers(barrier: &Barrier, eta: &[f64], stages: &[Vec<f64>]) -> Option<Vec<f64>> {
    let prior = stages.last()?;
    let loads: Vec<f64> = barrier
        .slacks(eta)
        .iter()
        .map(|s| barrier.budget - s)
        .collect();
    let max_load = loads.iter().copied().fold(0.0, f64::max);
    let tight: Vec<usize> = (0..barrier.rows.len())
        .filter(|&j| loads[j] >= max_load * (1.0 - 1e-9))
        .collect();
    let eta_max = eta.iter().copied().fold(0.0, f64::max);
    let active: Vec<usize> = (0..barrier.n)
        .filter(|&g| eta[g] > 1e-10 * (barrier.floor + eta_max))
        .collect();
    if tight.is_empty() || active.is_empty() {
        return None;
    }

    // coefficient of tight node j in the equation of sub-carrier g
    let coef = |j: usize, g: usize| -> f64 {
        barrier.rows[tight[j]]
            .iter()
            .find(|&&(h, _)| h == g)
            .map_or(0.0, |&(_, c)| c)
    };
    let nt = tight.len();
    let mut normal = vec![vec![0.0; nt]; nt];
    let mut rhs = vec![0.0; nt];
    for &g in &active {
        let target = KAPPA / (barrier.floor + eta[g]);
        for a in 0..nt {
            let ca = coef(a, g);
            rhs[a] += ca * target;
            for b in 0..nt {
                normal[a][b] += ca * coef(b, g);
            }
        }
    }
    let trace: f64 = (0..nt).map(|a| normal[a][a]).sum();
    let ridge = 1e-14 * trace.max(f64::MIN_POSITIVE);
    for a in 0..nt {
        let anchor = prior[barrier.nodes[tight[a]]];
        normal[a][a] += ridge;
        rhs[a] += ridge * anchor;
    }
    let solved = solve_dense(normal, rhs)?;
    let mut mu = vec![0.0; prior.len()];
    for (a, &j) in tight.iter().enumerate() {
        mu[barrier.nodes[j]] = solved[a].max(0.0);
    }
    Some(mu)
}

/// Solves the level program for `K ≤ 6`, `N ≤ 8`.
pub fn oracle_solve(
    gains: &GainMatrix,
    assignment: &AssignmentMatrix,
    params: &SimParams,
) -> Result<PowerSolution> {
    check_program(gains, assignment, params)?;
    let (k, n) = (gains.nodes(), gains.subcarriers());
    if k > ORACLE_MAX_NODES || n > ORACLE_MAX_SUBCARRIERS {
        return Err(Error::InvalidParameter(format!(
            "oracle handles at most {ORACLE_MAX_NODES} nodes and {ORACLE_MAX_SUBCARRIERS} sub-carriers, got {k}x{n}"
        )));
    }

    let mut rows = Vec::new();
    let mut nodes = Vec::new();
    for i in 0..k {
        let row: Vec<(usize, f64)> = (0..n)
            .filter(|&g| assignment.get(i, g))
            .map(|g| (g, 1.0 / gains.get(i, g)))
            .collect();
        if !row.is_empty() {
            rows.push(row);
            nodes.push(i);
        }
    }
    let barrier = Barrier {
        budget: params.power,
        floor: 1.0 / params.m as f64,
        rows,
        nodes,
        n,
    };

    // half of the equal split, strictly inside the feasible set
    let share = 0.5 * params.power / n as f64;
    let mut eta: Vec<f64> = (0..n)
        .map(|g| {
            (0..k)
                .filter(|&i| assignment.get(i, g))
                .map(|i| gains.get(i, g) * share)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    let mut iterations = 0;
    let mut t = 1.0;
    // multipliers read off each barrier stage: 1/(t·slack)
    let mut stages: Vec<Vec<f64>> = Vec::new();
    loop {
        for _ in 0..NEWTON_ROUNDS {
            iterations += 1;
            let (grad, neg_hess) = barrier.derivatives(t, &eta);
            let Some(dir) = solve_dense(neg_hess, grad.clone()) else {
                break;
            };
            let decrement: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
            if decrement < 1e-20 {
                break;
            }
            let hi = (0.99 * barrier.max_step(&eta, &dir)).min(4.0);
            let alpha = golden_section(
                |s| {
                    let x: Vec<f64> = eta.iter().zip(&dir).map(|(e, d)| e + s * d).collect();
                    barrier.value(t, &x)
                },
                hi,
            );
            let next: Vec<f64> = eta.iter().zip(&dir).map(|(e, d)| e + alpha * d).collect();
            if !(barrier.value(t, &next) > barrier.value(t, &eta)) {
                break;
            }
            eta = next;
        }
        let mut mu = vec![0.0; k];
        for (&i, s) in barrier.nodes.iter().zip(barrier.slacks(&eta)) {
            mu[i] = 1.0 / (t * s);
        }
        stages.push(mu);
        if t >= T_FINAL {
            break;
        }
        t *= T_GROWTH;
    }

    let slacks = barrier.slacks(&eta);
    let max_load = slacks.iter().map(|s| params.power - s).fold(0.0, f64::max);
    if !(max_load > 0.0) {
        return Err(Error::NoConvergence {
            iterations,
            max_violation: 1.0,
        });
    }
    let scale = params.power / max_load;
    eta.iter_mut().for_each(|e| *e *= scale);

    if let Some(fit) = fit_multipliers(&barrier, &eta, &stages) {
        stages.push(fit);
    }
    // Early stages are far from the optimum and late ones lose the slack to
    // cancellation; keep the candidate that certifies best.
    let (mu, residuals) = stages
        .into_iter()
        .map(|mu| {
            let report = kkt_report(&eta, &mu, gains, assignment, params, 1e-6);
            (mu, report)
        })
        .min_by(|a, b| {
            a.1.max_relative(params.power)
                .total_cmp(&b.1.max_relative(params.power))
        })
        .expect("at least one barrier stage");
    Ok(PowerSolution {
        power: power_from_levels(&eta, gains, assignment),
        objective: levels_rate(&eta, params),
        utility: levels_utility(&eta, params),
        eta,
        mu,
        residuals,
        iterations,
    })
}
