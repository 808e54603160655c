//! Scalar primitives, seeded channel realizations and per-sub-carrier gain
//! ordering.
//!
//! Node, sub-carrier and symbol indexes are zero-based throughout the crate.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Seed used whenever the caller does not supply one.
pub const DEFAULT_SEED: u64 = 20_200_521;

/// Default Monte Carlo trial count.
pub const DEFAULT_TRIALS: usize = 10_000;

/// `C⁺(x) = max{½·log₂ x, 0}`, with `C⁺(0) = 0`.
pub fn cplus(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("C+ is undefined for {x}")));
    }
    Ok(cplus_unchecked(x))
}

/// [`cplus`] without the domain check, for hot loops whose argument is
/// nonnegative by construction.
#[inline]
pub fn cplus_unchecked(x: f64) -> f64 {
    if x <= 1.0 {
        0.0
    } else {
        0.5 * x.log2()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Scenario record shared by every rate evaluation and sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    /// Number of nodes.
    pub k: usize,
    /// Nodes chosen per sub-function.
    pub m: usize,
    /// Number of sub-carriers.
    pub n: usize,
    /// Per-node power budget, linear. Equals the average SNR.
    pub power: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SimParams {
    pub fn new(k: usize, m: usize, n: usize, power: f64) -> Self {
        SimParams {
            k,
            m,
            n,
            power,
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
        }
    }

    pub fn with_snr_db(k: usize, m: usize, n: usize, snr_db: f64) -> Self {
        Self::new(k, m, n, db_to_linear(snr_db))
    }

    pub fn trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn snr_db(&self) -> f64 {
        linear_to_db(self.power)
    }

    /// Checks the invariants every operation relies on. A zero budget is
    /// accepted (all rates collapse to their noise-only terms).
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 {
            return Err(Error::InvalidParameter(format!(
                "K and N must be positive (K = {}, N = {})",
                self.k, self.n
            )));
        }
        if self.m == 0 || self.m > self.k {
            return Err(Error::InvalidParameter(format!(
                "M must satisfy 1 <= M <= K (M = {}, K = {})",
                self.m, self.k
            )));
        }
        if !self.power.is_finite() || self.power < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "power must be finite and nonnegative, got {}",
                self.power
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of sub-functions `B = K/M`.
    pub fn subfunctions(&self) -> Result<usize> {
        self.validate()?;
        if self.k % self.m != 0 {
            return Err(Error::NotDivisible {
                k: self.k,
                m: self.m,
            });
        }
        Ok(self.k / self.m)
    }
}

/// Independent random streams used by the crate. Each gets its own ChaCha
/// key so that, e.g., the normalization estimate never reuses the draws of
/// the rate estimate it normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Channel = 1,
    Gamma = 2,
    Source = 3,
    Instance = 4,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based substream for `(seed, stream, index)`.
///
/// The 256-bit ChaCha8 key is four successive splitmix64 outputs starting
/// from `seed ^ (stream · 0xD1B54A32D192ED03)`; `index` (usually the trial
/// number) selects the ChaCha stream. Substreams never depend on which
/// thread or in which order they are created.
pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ (stream as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Unit-variance circularly-symmetric complex Gaussian sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Complex frequency responses `h[i, g, m]` for K nodes, N sub-carriers and
/// a number of OFDM symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    nodes: usize,
    subcarriers: usize,
    symbols: usize,
    // [symbol][subcarrier][node]
    entries: Vec<Complex64>,
}

impl ChannelTensor {
    /// Draws i.i.d. CN(0, 1) entries from the channel substream of `trial`.
    pub fn draw(nodes: usize, subcarriers: usize, symbols: usize, seed: u64, trial: u64) -> Self {
        let mut rng = substream(seed, Stream::Channel, trial);
        let len = nodes * subcarriers * symbols;
        let entries = (0..len).map(|_| complex_gaussian(&mut rng)).collect();
        ChannelTensor {
            nodes,
            subcarriers,
            symbols,
            entries,
        }
    }

    pub fn from_entries(
        nodes: usize,
        subcarriers: usize,
        symbols: usize,
        entries: Vec<Complex64>,
    ) -> Result<Self> {
        if entries.len() != nodes * subcarriers * symbols {
            return Err(Error::Shape(format!(
                "expected {} entries for {nodes}x{subcarriers}x{symbols}, got {}",
                nodes * subcarriers * symbols,
                entries.len()
            )));
        }
        Ok(ChannelTensor {
            nodes,
            subcarriers,
            symbols,
            entries,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    #[inline]
    pub fn get(&self, node: usize, subcarrier: usize, symbol: usize) -> Complex64 {
        self.entries[(symbol * self.subcarriers + subcarrier) * self.nodes + node]
    }

    /// `|h|²` for one entry.
    #[inline]
    pub fn gain(&self, node: usize, subcarrier: usize, symbol: usize) -> f64 {
        self.get(node, subcarrier, symbol).norm_sqr()
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Gain matrix of one OFDM symbol.
    pub fn gains(&self, symbol: usize) -> GainMatrix {
        let mut data = vec![0.0; self.nodes * self.subcarriers];
        for g in 0..self.subcarriers {
            for i in 0..self.nodes {
                data[i * self.subcarriers + g] = self.gain(i, g, symbol);
            }
        }
        GainMatrix {
            nodes: self.nodes,
            subcarriers: self.subcarriers,
            data,
        }
    }
}

/// Draws the channel of one Monte Carlo trial for the scenario `params`.
pub fn draw_channel(params: &SimParams, symbols: usize, trial: u64) -> Result<ChannelTensor> {
    params.validate()?;
    if symbols == 0 {
        return Err(Error::InvalidParameter(
            "symbol count must be positive".into(),
        ));
    }
    Ok(ChannelTensor::draw(
        params.k,
        params.n,
        symbols,
        params.seed,
        trial,
    ))
}

/// Nonnegative K×N matrix of channel gains `|h_{i,g}|²`, row-major by node.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    nodes: usize,
    subcarriers: usize,
    data: Vec<f64>,
}

impl GainMatrix {
    pub fn new(nodes: usize, subcarriers: usize, data: Vec<f64>) -> Result<Self> {
        if nodes == 0 || subcarriers == 0 {
            return Err(Error::Shape(
                "gain matrix needs at least one node and one sub-carrier".into(),
            ));
        }
        if data.len() != nodes * subcarriers {
            return Err(Error::Shape(format!(
                "expected {} gains for {nodes}x{subcarriers}, got {}",
                nodes * subcarriers,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Domain(format!(
                "channel gains must be finite and >= 0, got {bad}"
            )));
        }
        Ok(GainMatrix {
            nodes,
            subcarriers,
            data,
        })
    }

    /// Builds a matrix from per-node rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nodes = rows.len();
        let subcarriers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != subcarriers) {
            return Err(Error::Shape("ragged gain rows".into()));
        }
        Self::new(nodes, subcarriers, rows.concat())
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

    pub fn column(&self, subcarrier: usize) -> Vec<f64> {
        (0..self.nodes).map(|i| self.get(i, subcarrier)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        GainMatrix {
            nodes: self.nodes,
            subcarriers: self.subcarriers,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }
}

/// Node indexes of one sub-carrier sorted by descending gain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderPermutation(Vec<usize>);

impl OrderPermutation {
    pub fn indexes(&self) -> &[usize] {
        &self.0
    }

    /// The node holding rank `rank` (0 = strongest).
    pub fn at(&self, rank: usize) -> usize {
        self.0[rank]
    }

    pub fn top(&self, m: usize) -> &[usize] {
        &self.0[..m]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sorts node indexes by descending gain; ties go to the lower index.
pub fn order_indexes(gains: &[f64]) -> Result<OrderPermutation> {
    if gains.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot order an empty gain sequence".into(),
        ));
    }
    if let Some(bad) = gains.iter().find(|x| x.is_nan() || **x < 0.0) {
        return Err(Error::Domain(format!("gains must be >= 0, got {bad}")));
    }
    let mut idx: Vec<usize> = (0..gains.len()).collect();
    // stable sort keeps ascending index order among equal gains
    idx.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    Ok(OrderPermutation(idx))
}

/// Sorts `values` in place so that the `m` largest come first in descending
/// order. The tail is left in unspecified order.
pub(crate) fn top_m_descending(values: &mut [f64], m: usize) {
    debug_assert!(m >= 1 && m <= values.len());
    if m < values.len() {
        values.select_nth_unstable_by(m - 1, |a, b| b.total_cmp(a));
    }
    values[..m].sort_unstable_by(|a, b| b.total_cmp(a));
}

/// Neumaier-compensated sum in slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Summary {
    pub fn from_samples(samples: &[f64]) -> Summary {
        let count = samples.len();
        if count == 0 {
            return Summary {
                mean: f64::NAN,
                stderr: f64::NAN,
                count,
            };
        }
        let mean = compensated_sum(samples) / count as f64;
        let stderr = if count > 1 {
            let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
            (compensated_sum(&sq) / (count - 1) as f64 / count as f64).sqrt()
        } else {
            0.0
        };
        Summary {
            mean,
            stderr,
            count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cplus_examples() {
        assert_eq!(cplus(1.0).unwrap(), 0.0);
        assert_eq!(cplus(4.0).unwrap(), 1.0);
        assert_eq!(cplus(0.5).unwrap(), 0.0);
        assert_eq!(cplus(0.0).unwrap(), 0.0);
        assert!(matches!(cplus(-0.1), Err(Error::Domain(_))));
        assert!(cplus(f64::NAN).is_err());
    }

    #[test]
    fn db_conversion() {
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
        assert!((db_to_linear(0.0) - 1.0).abs() < 1e-15);
        assert!((linear_to_db(100.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn order_examples() {
        assert_eq!(
            order_indexes(&[0.2, 0.9, 0.5]).unwrap().indexes(),
            &[1, 2, 0]
        );
        assert_eq!(order_indexes(&[1.0, 1.0]).unwrap().indexes(), &[0, 1]);
        assert_eq!(order_indexes(&[0.7]).unwrap().indexes(), &[0]);
        assert!(order_indexes(&[]).is_err());
        assert!(order_indexes(&[0.1, -1.0]).is_err());
    }

    #[test]
    fn channel_is_deterministic_per_trial() {
        let p = SimParams::new(4, 2, 3, 10.0).seed(7);
        let a = draw_channel(&p, 2, 0).unwrap();
        let b = draw_channel(&p, 2, 0).unwrap();
        let c = draw_channel(&p, 2, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.entries().len(), 4 * 3 * 2);
    }

    #[test]
    fn channel_power_is_unit_mean() {
        // 10^6 entries; |h|^2 ~ Exp(1) has variance 1, so stderr is 1e-3.
        let t = ChannelTensor::draw(100, 100, 100, 11, 0);
        let gains: Vec<f64> = t.entries().iter().map(|h| h.norm_sqr()).collect();
        let s = Summary::from_samples(&gains);
        assert!((s.mean - 1.0).abs() < 0.01, "mean {}", s.mean);
    }

    #[test]
    fn params_validation() {
        assert!(SimParams::new(4, 2, 1, 1.0).validate().is_ok());
        assert!(SimParams::new(4, 5, 1, 1.0).validate().is_err());
        assert!(SimParams::new(0, 0, 1, 1.0).validate().is_err());
        assert!(SimParams::new(4, 2, 1, -1.0).validate().is_err());
        assert!(SimParams::new(4, 2, 1, 1.0).trials(0).validate().is_err());
        assert_eq!(SimParams::new(12, 4, 1, 1.0).subfunctions().unwrap(), 3);
        assert_eq!(
            SimParams::new(10, 3, 1, 1.0).subfunctions(),
            Err(Error::NotDivisible { k: 10, m: 3 })
        );
    }

    #[test]
    fn summary_of_constant_has_zero_stderr() {
        let s = Summary::from_samples(&[2.0; 10]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.stderr, 0.0);
    }

    proptest! {
        #[test]
        fn cplus_nondecreasing(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(cplus(lo).unwrap() <= cplus(hi).unwrap());
            prop_assert_eq!(cplus(a).unwrap() == 0.0, a <= 1.0);
        }

        #[test]
        fn ordering_is_sorted_permutation(gains in prop::collection::vec(0.0f64..10.0, 1..40), m in 1usize..40) {
            let order = order_indexes(&gains).unwrap();
            let mut seen = order.indexes().to_vec();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..gains.len()).collect::<Vec<_>>());
            for w in order.indexes().windows(2) {
                prop_assert!(gains[w[0]] >= gains[w[1]]);
            }
            let m = m.min(gains.len());
            let min_top = order.top(m).iter().map(|&i| gains[i]).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(min_top, gains[order.at(m - 1)]);

            let mut partial = gains.clone();
            top_m_descending(&mut partial, m);
            let expected: Vec<f64> = order.top(m).iter().map(|&i| gains[i]).collect();
            prop_assert_eq!(&partial[..m], &expected[..]);
        }
    }
}
