//! Monte Carlo computation-rate evaluators.
//!
//! Every estimator draws trial `t` from the channel substream `t` of the
//! scenario seed, so two families evaluated with the same `SimParams` see
//! exactly the same gains. Single-sub-carrier families use the gains of
//! sub-carrier 0, which are the first K draws of that substream.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;

use crate::combinatorics::NodeSet;
use crate::error::{Error, Result};
use crate::numerics::{
    complex_gaussian, cplus_unchecked, substream, top_m_descending, ChannelTensor, SimParams,
    Stream, Summary,
};
use crate::power::{
    build_assignment, sponge_squeeze, AssignmentMatrix, PowerMatrix, DEFAULT_TOLERANCE,
};

/// Γ is never estimated from fewer trials than this.
pub const GAMMA_MIN_TRIALS: usize = 100_000;

const KAPPA: f64 = 0.5 * std::f64::consts::LOG2_E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RateFamily {
    /// All K nodes on one flat channel, average power.
    Conventional,
    /// B sub-functions of M nodes, time-shared, average power.
    Opportunistic,
    /// All K nodes on every one of N sub-carriers, average power.
    DirectOfdm,
    /// Sub-function allocation over N sub-carriers, average power.
    SfaAvg,
    /// Sub-function allocation with per-symbol optimal power.
    SfaOpa,
}

impl RateFamily {
    pub const ALL: [RateFamily; 5] = [
        RateFamily::Conventional,
        RateFamily::Opportunistic,
        RateFamily::DirectOfdm,
        RateFamily::SfaAvg,
        RateFamily::SfaOpa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RateFamily::Conventional => "conventional",
            RateFamily::Opportunistic => "opportunistic",
            RateFamily::DirectOfdm => "direct-ofdm",
            RateFamily::SfaAvg => "sfa-avg",
            RateFamily::SfaOpa => "sfa-opa",
        }
    }

    /// Whether the family splits the K nodes into B = K/M groups.
    pub fn needs_partition(self) -> bool {
        matches!(
            self,
            RateFamily::Opportunistic | RateFamily::SfaAvg | RateFamily::SfaOpa
        )
    }
}

impl fmt::Display for RateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RateFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown rate family '{s}' (expected one of conventional, opportunistic, direct-ofdm, sfa-avg, sfa-opa)"
                ))
            })
    }
}

/// Estimate of Γ(K,M) = (1/M)·Σ_{j≤M} E[X_(M)/X_(j)], where X_(j) is the
/// j-th largest of K i.i.d. unit-exponential gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    pub value: f64,
    pub stderr: f64,
    pub k: usize,
    pub m: usize,
    pub trials: usize,
}

fn gamma_sample(k: usize, m: usize, seed: u64, trial: u64, buf: &mut Vec<f64>) -> f64 {
    let mut rng = substream(seed, Stream::Gamma, trial);
    buf.clear();
    buf.extend((0..k).map(|_| complex_gaussian(&mut rng).norm_sqr()));
    top_m_descending(buf, m);
    let weakest = buf[m - 1];
    buf[..m].iter().map(|&x| weakest / x).sum::<f64>() / m as f64
}

fn gamma_with(
    k: usize,
    m: usize,
    trials: usize,
    seed: u64,
    parallel: bool,
) -> Result<GammaEstimate> {
    if m == 0 || m > k {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= M <= K, got K = {k}, M = {m}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter(
            "trial count must be positive".into(),
        ));
    }
    let samples: Vec<f64> = if parallel {
        (0..trials as u64)
            .into_par_iter()
            .map_init(Vec::new, |buf, t| gamma_sample(k, m, seed, t, buf))
            .collect()
    } else {
        let mut buf = Vec::new();
        (0..trials as u64)
            .map(|t| gamma_sample(k, m, seed, t, &mut buf))
            .collect()
    };
    let s = Summary::from_samples(&samples);
    Ok(GammaEstimate {
        value: s.mean,
        stderr: s.stderr,
        k,
        m,
        trials,
    })
}

/// Monte Carlo estimate of Γ(K,M) on the dedicated Γ substreams of `seed`.
pub fn estimate_gamma(k: usize, m: usize, trials: usize, seed: u64) -> Result<GammaEstimate> {
    gamma_with(k, m, trials, seed, true)
}

/// Trials used for the Γ estimate behind a rate estimate of `trials` trials.
pub fn gamma_trials_for(trials: usize) -> usize {
    trials.max(GAMMA_MIN_TRIALS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub family: RateFamily,
    /// Bits per channel use.
    pub mean: f64,
    /// Monte Carlo standard error, including the uncertainty of Γ.
    pub stderr: f64,
    pub trials: usize,
    pub params: SimParams,
}

/// Per-trial rate values with their sensitivity to Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSamples {
    pub values: Vec<f64>,
    /// `∂value/∂Γ` per trial; zero for families without Γ.
    pub gamma_slopes: Vec<f64>,
    pub gamma: Option<GammaEstimate>,
}

impl RateSamples {
    pub fn summary(&self) -> Summary {
        Summary::from_samples(&self.values)
    }

    /// Mean and standard error with Γ uncertainty propagated to first order.
    pub fn mean_stderr(&self) -> (f64, f64) {
        let s = self.summary();
        let gamma_se = match self.gamma {
            Some(g) if !self.gamma_slopes.is_empty() => {
                let slope = self.gamma_slopes.iter().sum::<f64>() / self.gamma_slopes.len() as f64;
                slope * g.stderr
            }
            _ => 0.0,
        };
        (s.mean, (s.stderr * s.stderr + gamma_se * gamma_se).sqrt())
    }
}

/// Rate evaluator with a Γ cache and a switch between parallel and serial
/// trial evaluation. Both modes produce bitwise identical results.
#[derive(Debug)]
pub struct RateEngine {
    parallel: bool,
    cache: Mutex<HashMap<(usize, usize, usize, u64), GammaEstimate>>,
}

impl Default for RateEngine {
    fn default() -> Self {
        RateEngine::new()
    }
}

impl RateEngine {
    pub fn new() -> Self {
        RateEngine {
            parallel: true,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn serial() -> Self {
        RateEngine {
            parallel: false,
            ..RateEngine::new()
        }
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel
    }

    /// Cached Γ(K,M) for the given trial count and seed.
    pub fn gamma(&self, k: usize, m: usize, trials: usize, seed: u64) -> Result<GammaEstimate> {
        let key = (k, m, trials, seed);
        if let Some(g) = self.cache.lock().unwrap().get(&key) {
            return Ok(*g);
        }
        let g = gamma_with(k, m, trials, seed, self.parallel)?;
        self.cache.lock().unwrap().insert(key, g);
        Ok(g)
    }

    fn map_trials<T: Send>(&self, trials: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
        if self.parallel {
            (0..trials as u64).into_par_iter().map(f).collect()
        } else {
            (0..trials as u64).map(f).collect()
        }
    }

    /// Per-trial values of one family.
    pub fn samples(&self, family: RateFamily, params: &SimParams) -> Result<RateSamples> {
        params.validate()?;
        if params.trials == 0 {
            return Err(Error::InvalidParameter(
                "trial count must be positive".into(),
            ));
        }
        if family.needs_partition() {
            params.subfunctions()?;
        }
        match family {
            RateFamily::Conventional => self.average_samples(params, params.k, 1),
            RateFamily::DirectOfdm => self.average_samples(params, params.k, params.n),
            RateFamily::Opportunistic => self.average_samples(params, params.m, 1),
            RateFamily::SfaAvg => self.average_samples(params, params.m, params.n),
            RateFamily::SfaOpa => self.optimal_samples(params),
        }
    }

    /// `(m/K)·C⁺(n/m + X_(m)·K·P/(m·Γ(K,m)))` per trial.
    fn average_samples(&self, params: &SimParams, m: usize, n: usize) -> Result<RateSamples> {
        let k = params.k;
        let gamma = self.gamma(k, m, gamma_trials_for(params.trials), params.seed)?;
        let prefactor = m as f64 / k as f64;
        let offset = n as f64 / m as f64;
        let gain = k as f64 * params.power / m as f64;
        let g = gamma.value;
        let pairs = self.map_trials(params.trials, |t| {
            let mut rng = substream(params.seed, Stream::Channel, t);
            let mut x: Vec<f64> = (0..k)
                .map(|_| complex_gaussian(&mut rng).norm_sqr())
                .collect();
            top_m_descending(&mut x, m);
            let snr = x[m - 1] * gain;
            let arg = offset + snr / g;
            let value = prefactor * cplus_unchecked(arg);
            let slope = if arg > 1.0 {
                -prefactor * KAPPA * snr / (g * g * arg)
            } else {
                0.0
            };
            (value, slope)
        });
        let (values, gamma_slopes) = pairs.into_iter().unzip();
        Ok(RateSamples {
            values,
            gamma_slopes,
            gamma: Some(gamma),
        })
    }

    fn optimal_samples(&self, params: &SimParams) -> Result<RateSamples> {
        let (k, m, n) = (params.k, params.m, params.n);
        if params.power == 0.0 {
            let idle = m as f64 / k as f64 * cplus_unchecked(n as f64 / m as f64);
            return Ok(RateSamples {
                values: vec![idle; params.trials],
                gamma_slopes: vec![0.0; params.trials],
                gamma: None,
            });
        }
        let results = self.map_trials(params.trials, |t| -> Result<f64> {
            let gains = ChannelTensor::draw(k, n, 1, params.seed, t).gains(0);
            let assignment = build_assignment(&gains, m)?;
            Ok(sponge_squeeze(&gains, &assignment, params, DEFAULT_TOLERANCE)?.objective)
        });
        let values = results.into_iter().collect::<Result<Vec<f64>>>()?;
        Ok(RateSamples {
            gamma_slopes: vec![0.0; values.len()],
            values,
            gamma: None,
        })
    }

    pub fn estimate(&self, family: RateFamily, params: &SimParams) -> Result<RateEstimate> {
        let samples = self.samples(family, params)?;
        let (mean, stderr) = samples.mean_stderr();
        Ok(RateEstimate {
            family,
            mean,
            stderr,
            trials: params.trials,
            params: *params,
        })
    }
}

fn shared_engine() -> &'static RateEngine {
    static ENGINE: OnceLock<RateEngine> = OnceLock::new();
    ENGINE.get_or_init(RateEngine::new)
}

/// `E[C⁺(1/K + X_(K)·P/Γ(K,K))]`; `params.m` is ignored.
pub fn rate_conventional(params: &SimParams) -> Result<RateEstimate> {
    shared_engine().estimate(RateFamily::Conventional, params)
}

/// `E[(1/B)·C⁺(1/M + X_(M)·K·P/(M·Γ(K,M)))]`.
pub fn rate_opportunistic(params: &SimParams) -> Result<RateEstimate> {
    shared_engine().estimate(RateFamily::Opportunistic, params)
}

/// `E[C⁺(N/K + X_(K)·P/Γ(K,K))]`; `params.m` is ignored.
pub fn rate_direct_ofdm(params: &SimParams) -> Result<RateEstimate> {
    shared_engine().estimate(RateFamily::DirectOfdm, params)
}

/// `E[(M/K)·C⁺(N/M + X_(M)·K·P/(M·Γ(K,M)))]`.
pub fn rate_sfa_avg(params: &SimParams) -> Result<RateEstimate> {
    shared_engine().estimate(RateFamily::SfaAvg, params)
}

/// Mean instantaneous rate under the per-symbol optimal power allocation.
pub fn rate_sfa_opa(params: &SimParams) -> Result<RateEstimate> {
    shared_engine().estimate(RateFamily::SfaOpa, params)
}

/// Time-averaged rate of explicit per-symbol powers and assignments:
/// `(M/(K·N))·(1/T)·Σ_m Σ_g C⁺(N/M + N·min_{chosen i} |h[i,g,m]|²·P[i,g,m])`.
pub fn rate_general(
    channel: &ChannelTensor,
    powers: &[PowerMatrix],
    assignments: &[AssignmentMatrix],
    params: &SimParams,
) -> Result<f64> {
    let (k, m, n) = (params.k, params.m, params.n);
    let symbols = channel.symbols();
    if channel.nodes() != k || channel.subcarriers() != n {
        return Err(Error::Shape(format!(
            "channel is {}x{}, params expect {k}x{n}",
            channel.nodes(),
            channel.subcarriers()
        )));
    }
    if powers.len() != symbols || assignments.len() != symbols {
        return Err(Error::Shape(format!(
            "{symbols} symbols but {} power and {} assignment matrices",
            powers.len(),
            assignments.len()
        )));
    }
    let mut total = 0.0;
    for (s, (power, assignment)) in powers.iter().zip(assignments).enumerate() {
        if power.nodes() != k || power.subcarriers() != n {
            return Err(Error::Shape(format!(
                "power matrix of symbol {s} is not {k}x{n}"
            )));
        }
        if assignment.nodes() != k || assignment.subcarriers() != n || assignment.chosen() != m {
            return Err(Error::Shape(format!(
                "assignment of symbol {s} must be {k}x{n} with {m} nodes per sub-carrier"
            )));
        }
        for g in 0..n {
            let level = assignment
                .column(g)
                .into_iter()
                .map(|i| channel.gain(i, g, s) * power.get(i, g))
                .fold(f64::INFINITY, f64::min);
            total += cplus_unchecked(n as f64 / m as f64 + n as f64 * level);
        }
    }
    Ok(m as f64 / (k * n) as f64 * total / symbols as f64)
}

/// Instantaneous rate of one sub-function on one sub-carrier:
/// `(1/N)·C⁺(N/M + N·min_{i ∈ chosen} |h_i|²·P_i)`.
pub fn subfunction_rate_instant(
    gains: &[f64],
    power: &[f64],
    chosen: &NodeSet,
    m: usize,
    n: usize,
) -> Result<f64> {
    if chosen.is_empty() {
        return Err(Error::InvalidParameter("chosen node set is empty".into()));
    }
    if chosen.len() != m {
        return Err(Error::InvalidParameter(format!(
            "chosen set has {} nodes, expected M = {m}",
            chosen.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    if gains.len() != power.len() {
        return Err(Error::Shape(
            "gain and power columns differ in length".into(),
        ));
    }
    chosen.check_range(gains.len())?;
    let level = chosen
        .members()
        .iter()
        .map(|&i| gains[i] * power[i])
        .fold(f64::INFINITY, f64::min);
    if level.is_nan() || level < 0.0 {
        return Err(Error::Domain(format!(
            "products |h|²·P must be >= 0, got {level}"
        )));
    }
    Ok(cplus_unchecked(n as f64 / m as f64 + n as f64 * level) / n as f64)
}
