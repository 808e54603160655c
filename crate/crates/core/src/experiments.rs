//! Monte Carlo sweeps over the rate families and the self-test suite.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::combinatorics::{
    combination_count, enumerate_combinations, enumerate_subfunction_sets, subfunction_set_count,
    to_f64, top_set_counts, NodeSet,
};
use crate::error::{Error, Result};
use crate::io::quantize;
use crate::numerics::{substream, ChannelTensor, SimParams, Stream, DEFAULT_SEED, DEFAULT_TRIALS};
use crate::power::{build_assignment, oracle_solve, sponge_squeeze, DEFAULT_TOLERANCE};
use crate::rates::{RateEngine, RateEstimate, RateFamily};
use crate::source::{eval_desired, eval_subfunction, reconstruct, FunctionSpec};

/// Smallest per-point trial count a sweep accepts.
pub const MIN_SWEEP_TRIALS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Figure {
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Custom,
}

impl Figure {
    pub const ALL: [Figure; 5] = [
        Figure::Fig4,
        Figure::Fig5,
        Figure::Fig6,
        Figure::Fig7,
        Figure::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Custom => "custom",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|fig| fig.name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown experiment '{s}' (expected fig4, fig5, fig6, fig7 or custom)"
                ))
            })
    }
}

/// A sweep over a grid of parameters.
///
/// * `fig4` and `custom` evaluate every family at every grid point.
/// * `fig5` evaluates `sfa-avg` at every candidate M and reports the best
///   number of sub-functions per (K, N, P).
/// * `fig6` reports each family at its best M.
/// * `fig7` evaluates every family at the M that is best for `sfa-avg`.
///
/// An empty `ms` means every divisor of K.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub figure: Figure,
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    pub ns: Vec<usize>,
    pub snrs_db: Vec<f64>,
    pub families: Vec<RateFamily>,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl SweepSpec {
    /// Desk-scale defaults for a figure.
    pub fn new(figure: Figure) -> Self {
        use RateFamily::*;
        let wide_k = vec![8, 16, 32, 64, 128, 256, 512];
        let (ks, ns, families) = match figure {
            Figure::Fig4 => (vec![128], vec![1, 4, 16], vec![SfaAvg]),
            Figure::Fig5 => (wide_k, vec![4, 16], vec![SfaAvg]),
            Figure::Fig6 => (
                wide_k,
                vec![16],
                vec![Conventional, Opportunistic, DirectOfdm, SfaAvg],
            ),
            Figure::Fig7 => (vec![8, 16, 32, 64], vec![4, 16], vec![SfaAvg, SfaOpa]),
            Figure::Custom => (vec![16], vec![4], vec![SfaAvg]),
        };
        SweepSpec {
            figure,
            ks,
            ms: Vec::new(),
            ns,
            snrs_db: vec![10.0],
            families,
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.ks.is_empty()
            || self.ns.is_empty()
            || self.snrs_db.is_empty()
            || self.families.is_empty()
        {
            return bad("sweep grids must be nonempty".into());
        }
        if self.ks.contains(&0) || self.ns.contains(&0) || self.ms.contains(&0) {
            return bad("K, M and N must be positive".into());
        }
        if let Some(p) = self.snrs_db.iter().find(|p| !p.is_finite()) {
            return bad(format!("SNR must be finite, got {p} dB"));
        }
        if self.trials < MIN_SWEEP_TRIALS {
            return bad(format!(
                "sweeps need at least {MIN_SWEEP_TRIALS} trials per point, got {}",
                self.trials
            ));
        }
        if self.figure == Figure::Fig5 && self.families != [RateFamily::SfaAvg] {
            return bad("fig5 only evaluates sfa-avg".into());
        }
        Ok(())
    }

    // Candidate M values for a K, in ascending order.
    fn candidates(&self, k: usize) -> Vec<usize> {
        if self.ms.is_empty() {
            divisors(k)
        } else {
            self.ms.clone()
        }
    }
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Rate { mean: f64, stderr: f64 },
    Failed(String),
}

/// One evaluated grid point. Rates and stderrs are rounded to 12
/// significant digits so rows survive a CSV round trip unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub family: RateFamily,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub p_db: f64,
    pub outcome: Outcome,
    pub trials: usize,
    pub seed: u64,
}

impl ResultRow {
    fn new(
        family: RateFamily,
        k: usize,
        m: usize,
        n: usize,
        p_db: f64,
        spec: &SweepSpec,
        result: Result<RateEstimate>,
    ) -> Self {
        let outcome = match result {
            Ok(est) => Outcome::Rate {
                mean: quantize(est.mean),
                stderr: quantize(est.stderr),
            },
            Err(e) => Outcome::Failed(e.to_string()),
        };
        ResultRow {
            family,
            k,
            m,
            n,
            p_db,
            outcome,
            trials: spec.trials,
            seed: spec.seed,
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Rate { mean, .. } => Some(mean),
            Outcome::Failed(_) => None,
        }
    }

    pub fn stderr(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Rate { stderr, .. } => Some(stderr),
            Outcome::Failed(_) => None,
        }
    }
}

/// Best number of sub-functions at one (K, N, P).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalRow {
    pub k: usize,
    pub n: usize,
    pub b_opt: usize,
    pub rate: f64,
    pub stderr: f64,
    pub p_db: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    /// Only filled by `fig5`.
    pub optimal: Vec<OptimalRow>,
}

/// Divisors of `k` in ascending order.
pub fn divisors(k: usize) -> Vec<usize> {
    (1..=k).filter(|d| k % d == 0).collect()
}

// The parameters a family actually depends on, so that equal evaluations
// share one key.
fn canonical(family: RateFamily, k: usize, m: usize, n: usize) -> (usize, usize) {
    match family {
        RateFamily::Conventional => (k, 1),
        RateFamily::DirectOfdm => (k, n),
        RateFamily::Opportunistic => (m, 1),
        RateFamily::SfaAvg | RateFamily::SfaOpa => (m, n),
    }
}

/// Runs a sweep with a fresh engine and no progress reporting.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    run_sweep_with(spec, &RateEngine::new(), &mut |_, _| {})
}

/// Runs a sweep, calling `progress` once per emitted row with the time
/// spent on it. Rows come out in grid order: K, M, N, P, family.
pub fn run_sweep_with(
    spec: &SweepSpec,
    engine: &RateEngine,
    progress: &mut dyn FnMut(&ResultRow, Duration),
) -> Result<SweepOutput> {
    spec.validate()?;
    let mut sweep = Sweep {
        spec,
        engine,
        progress,
        seen: HashSet::new(),
        out: SweepOutput::default(),
    };
    match spec.figure {
        Figure::Fig4 | Figure::Custom => sweep.grid(),
        Figure::Fig5 => sweep.optimal_counts(),
        Figure::Fig6 => sweep.best_per_family(),
        Figure::Fig7 => sweep.matched(),
    }
    Ok(sweep.out)
}

struct Sweep<'a> {
    spec: &'a SweepSpec,
    engine: &'a RateEngine,
    progress: &'a mut dyn FnMut(&ResultRow, Duration),
    seen: HashSet<(RateFamily, usize, usize, usize, u64)>,
    out: SweepOutput,
}

impl Sweep<'_> {
    fn params(&self, k: usize, m: usize, n: usize, p_db: f64) -> SimParams {
        SimParams::with_snr_db(k, m, n, p_db)
            .trials(self.spec.trials)
            .seed(self.spec.seed)
    }

    fn estimate(
        &self,
        family: RateFamily,
        k: usize,
        m: usize,
        n: usize,
        p_db: f64,
    ) -> Result<RateEstimate> {
        self.engine.estimate(family, &self.params(k, m, n, p_db))
    }

    // Emits a row unless an equal evaluation was already emitted.
    fn emit(
        &mut self,
        family: RateFamily,
        k: usize,
        m: usize,
        n: usize,
        p_db: f64,
        compute: impl FnOnce(&Self) -> Result<RateEstimate>,
    ) {
        let (m, n) = canonical(family, k, m, n);
        if !self.seen.insert((family, k, m, n, p_db.to_bits())) {
            return;
        }
        let start = Instant::now();
        let result = compute(self);
        let (m, n) = match &result {
            Ok(est) => canonical(family, k, est.params.m, est.params.n),
            Err(_) => (m, n),
        };
        let row = ResultRow::new(family, k, m, n, p_db, self.spec, result);
        (self.progress)(&row, start.elapsed());
        self.out.rows.push(row);
    }

    fn grid(&mut self) {
        let spec = self.spec;
        for &k in &spec.ks {
            for m in spec.candidates(k) {
                for &n in &spec.ns {
                    for &p in &spec.snrs_db {
                        for &family in &spec.families {
                            let (cm, cn) = canonical(family, k, m, n);
                            self.emit(family, k, m, n, p, |s| s.estimate(family, k, cm, cn, p));
                        }
                    }
                }
            }
        }
    }

    fn optimal_counts(&mut self) {
        let spec = self.spec;
        for &k in &spec.ks {
            for &n in &spec.ns {
                for &p in &spec.snrs_db {
                    let first = self.out.rows.len();
                    for m in spec.candidates(k) {
                        self.emit(RateFamily::SfaAvg, k, m, n, p, |s| {
                            s.estimate(RateFamily::SfaAvg, k, m, n, p)
                        });
                    }
                    // Largest M first so ties go to the fewest sub-functions.
                    let best = self.out.rows[first..]
                        .iter()
                        .rev()
                        .filter_map(|r| Some((r, r.rate()?)))
                        .fold(None::<(&ResultRow, f64)>, |acc, (r, rate)| match acc {
                            Some((_, top)) if rate <= top => acc,
                            _ => Some((r, rate)),
                        });
                    if let Some((row, rate)) = best {
                        self.out.optimal.push(OptimalRow {
                            k,
                            n,
                            b_opt: k / row.m,
                            rate,
                            stderr: row.stderr().unwrap_or(0.0),
                            p_db: p,
                        });
                    }
                }
            }
        }
    }

    fn best_per_family(&mut self) {
        let spec = self.spec;
        for &k in &spec.ks {
            for &n in &spec.ns {
                for &p in &spec.snrs_db {
                    for &family in &spec.families {
                        if family.needs_partition() {
                            let candidates = spec.candidates(k);
                            self.emit(family, k, 0, n, p, |s| {
                                best_partition(s.engine, family, &s.params(k, k, n, p), &candidates)
                            });
                        } else {
                            self.emit(family, k, k, n, p, |s| s.estimate(family, k, k, n, p));
                        }
                    }
                }
            }
        }
    }

    fn matched(&mut self) {
        let spec = self.spec;
        for &k in &spec.ks {
            for &n in &spec.ns {
                for &p in &spec.snrs_db {
                    let best = best_partition(
                        self.engine,
                        RateFamily::SfaAvg,
                        &self.params(k, k, n, p),
                        &spec.candidates(k),
                    );
                    for &family in &spec.families {
                        match &best {
                            Ok(est) => {
                                let m = est.params.m;
                                let (cm, cn) = canonical(family, k, m, n);
                                self.emit(family, k, m, n, p, |s| s.estimate(family, k, cm, cn, p));
                            }
                            Err(e) => {
                                let e = e.clone();
                                self.emit(family, k, 0, n, p, |_| Err(e));
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Highest-rate estimate of `family` over the candidate values of M that
/// divide K, with ties going to the largest M. `params.m` is ignored.
pub fn best_partition(
    engine: &RateEngine,
    family: RateFamily,
    params: &SimParams,
    candidates: &[usize],
) -> Result<RateEstimate> {
    let k = params.k;
    let mut ms: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&m| m > 0 && k % m == 0)
        .collect();
    ms.sort_unstable_by(|a, b| b.cmp(a));
    ms.dedup();
    let mut best: Option<RateEstimate> = None;
    for m in ms {
        let est = engine.estimate(family, &SimParams { m, ..*params })?;
        if best.is_none_or(|b| est.mean > b.mean) {
            best = Some(est);
        }
    }
    best.ok_or_else(|| Error::InvalidParameter(format!("no candidate M divides K = {k}")))
}

/// Number of sub-functions `B = K/M` that maximizes the `sfa-avg` rate,
/// smallest B on ties.
pub fn optimal_subfunction_count(
    k: usize,
    n: usize,
    power: f64,
    trials: usize,
    seed: u64,
) -> Result<usize> {
    let params = SimParams::new(k, k, n, power).trials(trials).seed(seed);
    let best = best_partition(
        &RateEngine::new(),
        RateFamily::SfaAvg,
        &params,
        &divisors(k),
    )?;
    Ok(k / best.params.m)
}

/// Largest per-realization differences for the two reduction identities:
/// `direct-ofdm` at N = 1 against `conventional`, and `sfa-avg` at N = 1
/// against `opportunistic`.
pub fn reduction_gaps(
    engine: &RateEngine,
    k: usize,
    m: usize,
    power: f64,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let params = SimParams::new(k, m, 1, power).trials(trials).seed(seed);
    let gap = |a: RateFamily, b: RateFamily| -> Result<f64> {
        let x = engine.samples(a, &params)?.values;
        let y = engine.samples(b, &params)?.values;
        Ok(x.iter()
            .zip(&y)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max))
    };
    Ok((
        gap(RateFamily::DirectOfdm, RateFamily::Conventional)?,
        gap(RateFamily::SfaAvg, RateFamily::Opportunistic)?,
    ))
}

/// Worst-case agreement between the fast solver and the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverAgreement {
    pub instances: usize,
    /// Largest `|u_fast − u_oracle| / |u_oracle|` of the program objective.
    pub objective_gap: f64,
    /// Largest feasibility, slackness or stationarity residual.
    pub kkt: f64,
    /// Largest `|max load − P| / P`.
    pub power_gap: f64,
}

/// Solves `instances` random programs with K ≤ 6, N ≤ 8 and
/// P ∈ {0.5, 1, 10} by both solvers.
pub fn solver_agreement(instances: usize, seed: u64) -> Result<SolverAgreement> {
    const POWERS: [f64; 3] = [0.5, 1.0, 10.0];
    let mut report = SolverAgreement {
        instances,
        objective_gap: 0.0,
        kkt: 0.0,
        power_gap: 0.0,
    };
    for t in 0..instances as u64 {
        let mut rng = substream(seed, Stream::Instance, t);
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..=k);
        let n = rng.random_range(1..=8);
        let power = POWERS[rng.random_range(0..POWERS.len())];
        let gains = ChannelTensor::draw(k, n, 1, seed, t).gains(0);
        let assignment = build_assignment(&gains, m)?;
        let params = SimParams::new(k, m, n, power);
        let fast = sponge_squeeze(&gains, &assignment, &params, DEFAULT_TOLERANCE)?;
        let reference = oracle_solve(&gains, &assignment, &params)?;
        let gap = (fast.utility - reference.utility).abs() / reference.utility.abs();
        let r = fast.residuals;
        report.objective_gap = report
            .objective_gap
            .max(if gap.is_nan() { 0.0 } else { gap });
        report.kkt = report
            .kkt
            .max(r.feasibility.max(r.slackness).max(r.stationarity));
        report.power_gap = report.power_gap.max(r.max_power_gap / power);
    }
    Ok(report)
}

/// Observed top-M set frequencies against the uniform law.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyCheck {
    /// Largest `|count − n/|S|| / σ` over all sets.
    pub worst_z: f64,
    pub observed_sets: usize,
    pub enumerated_sets: usize,
    pub set_formula: f64,
    pub enumerated_combinations: usize,
    pub combination_formula: f64,
}

pub fn top_set_frequencies(k: usize, m: usize, draws: usize, seed: u64) -> Result<FrequencyCheck> {
    let counts = top_set_counts(k, m, draws, seed)?;
    let sets = enumerate_subfunction_sets(k, m)?.len();
    let p = 1.0 / sets as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    let expected = draws as f64 * p;
    let worst_z = counts
        .values()
        .map(|&c| (c as f64 - expected).abs() / sigma)
        .fold(0.0, f64::max);
    let as_f64 =
        |x: num_bigint::BigUint| to_f64(&num_rational::BigRational::from_integer(x.into()));
    Ok(FrequencyCheck {
        worst_z,
        observed_sets: counts.len(),
        enumerated_sets: sets,
        set_formula: as_f64(subfunction_set_count(k, m)),
        enumerated_combinations: enumerate_combinations(k, m)?.len(),
        combination_formula: as_f64(combination_count(k, m)?),
    })
}

/// Checks reconstruction against direct evaluation on every data row over
/// the alphabet, every combination and both function families. Returns
/// (cases, mismatches).
pub fn reconstruction_mismatches(k: usize, m: usize, alphabet: usize) -> Result<(usize, usize)> {
    let combinations = enumerate_combinations(k, m)?;
    let specs = [FunctionSpec::sum(k), FunctionSpec::type_function(alphabet)?];
    let rows = alphabet
        .checked_pow(k as u32)
        .ok_or_else(|| Error::TooLarge {
            count: format!("{alphabet}^{k}"),
            cap: u64::MAX,
        })?;
    let (mut cases, mut mismatches) = (0, 0);
    for index in 0..rows {
        let row: Vec<usize> = (0..k)
            .map(|i| index / alphabet.pow(i as u32) % alphabet)
            .collect();
        for spec in &specs {
            let desired = eval_desired(spec, &row)?;
            for parts in &combinations {
                let values = parts
                    .iter()
                    .map(|part: &NodeSet| eval_subfunction(spec, &row, part))
                    .collect::<Result<Vec<_>>>()?;
                cases += 1;
                if reconstruct(spec, &values, parts, k)? != desired {
                    mismatches += 1;
                }
            }
        }
    }
    Ok((cases, mismatches))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn record(&mut self, name: &'static str, outcome: Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, e.to_string()));
        self.checks.push(Check {
            name,
            passed,
            detail,
        });
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

pub fn run_selftest() -> SelftestReport {
    run_selftest_seeded(DEFAULT_SEED)
}

pub fn run_selftest_seeded(seed: u64) -> SelftestReport {
    let engine = RateEngine::new();
    let mut report = SelftestReport::default();

    let gaps = reduction_gaps(&engine, 16, 4, 10.0, 10_000, seed);
    report.record(
        "reduction direct-ofdm(N=1) = conventional",
        gaps.clone()
            .map(|(a, _)| (a == 0.0, format!("max difference {a:e}"))),
    );
    report.record(
        "reduction sfa-avg(N=1) = opportunistic",
        gaps.map(|(_, b)| (b == 0.0, format!("max difference {b:e}"))),
    );

    let agreement = solver_agreement(100, seed);
    report.record(
        "solver matches oracle",
        agreement.clone().map(|a| {
            (
                a.objective_gap < 1e-6,
                format!(
                    "{} instances, max relative gap {:.2e}",
                    a.instances, a.objective_gap
                ),
            )
        }),
    );
    report.record(
        "optimality residuals",
        agreement.map(|a| {
            (
                a.kkt < 1e-6 && a.power_gap < 1e-8,
                format!(
                    "max residual {:.2e}, max power gap {:.2e}·P",
                    a.kkt, a.power_gap
                ),
            )
        }),
    );

    report.record(
        "top-set frequencies",
        top_set_frequencies(4, 2, 100_000, seed).map(|f| {
            let ok = f.worst_z <= 3.0
                && f.observed_sets == 6
                && f.enumerated_sets == 6
                && f.set_formula == 6.0
                && f.enumerated_combinations == 6
                && f.combination_formula == 6.0;
            (
                ok,
                format!(
                    "worst deviation {:.2} sigma, |S| = {}, |Q| = {}",
                    f.worst_z, f.enumerated_sets, f.enumerated_combinations
                ),
            )
        }),
    );

    report.record(
        "reconstruction",
        reconstruction_mismatches(4, 2, 3)
            .map(|(cases, bad)| (bad == 0, format!("{bad} mismatches in {cases} cases"))),
    );

    report.record(
        "gamma(2,2) = ln 2",
        engine.gamma(2, 2, 1_000_000, seed).and_then(|g| {
            let one = engine.gamma(1, 1, 1_000, seed)?;
            let z = (g.value - std::f64::consts::LN_2).abs() / g.stderr;
            Ok((
                z < 3.0 && one.value == 1.0,
                format!(
                    "estimate {:.5} ± {:.5} ({z:.2} sigma), gamma(1,1) = {}",
                    g.value, g.stderr, one.value
                ),
            ))
        }),
    );

    report
}
