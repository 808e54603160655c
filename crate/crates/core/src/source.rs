//! Quantized data sources, desired-function and sub-function evaluation, and
//! reconstruction of the desired function from sub-function values.
//!
//! Transmission is idealized: sub-function values reach the fusion center
//! exactly. Noise only enters through the rate formulas.

use rand::Rng;

use crate::combinatorics::{is_valid_partition, NodeSet};
use crate::error::{Error, Result};
use crate::numerics::{substream, Stream};

/// `T_d × K` matrix of quantized samples in `[0, p)`; row `j` holds every
/// node's `j`-th sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataMatrix {
    alphabet: usize,
    nodes: usize,
    values: Vec<usize>,
}

impl DataMatrix {
    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.nodes
    }

    pub fn row(&self, j: usize) -> &[usize] {
        &self.values[j * self.nodes..(j + 1) * self.nodes]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[usize]> {
        self.values.chunks_exact(self.nodes)
    }
}

/// Samples `rows × nodes` symbols uniformly from `[0, alphabet)`.
pub fn sample_data_matrix(
    alphabet: usize,
    nodes: usize,
    rows: usize,
    seed: u64,
) -> Result<DataMatrix> {
    if alphabet < 2 {
        return Err(Error::InvalidParameter(format!(
            "alphabet size must be at least 2, got {alphabet}"
        )));
    }
    if nodes == 0 {
        return Err(Error::InvalidParameter("need at least one node".into()));
    }
    let mut rng = substream(seed, Stream::Source, 0);
    let values = (0..rows * nodes)
        .map(|_| rng.random_range(0..alphabet))
        .collect();
    Ok(DataMatrix {
        alphabet,
        nodes,
        values,
    })
}

/// The two desired-function families.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionSpec {
    /// `Σ aᵢ·sᵢ`.
    ArithmeticSum { weights: Vec<f64> },
    /// Per-symbol node counts over an alphabet of the given size.
    Type { alphabet: usize },
}

impl FunctionSpec {
    /// Unit-weight sum over `k` nodes.
    pub fn sum(k: usize) -> Self {
        FunctionSpec::ArithmeticSum {
            weights: vec![1.0; k],
        }
    }

    /// Arithmetic mean over `k` nodes.
    pub fn mean(k: usize) -> Self {
        FunctionSpec::ArithmeticSum {
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn type_function(alphabet: usize) -> Result<Self> {
        if alphabet < 2 {
            return Err(Error::InvalidParameter(format!(
                "type function needs an alphabet of at least 2, got {alphabet}"
            )));
        }
        Ok(FunctionSpec::Type { alphabet })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionValue {
    Scalar(f64),
    Histogram(Vec<u64>),
}

fn check_row(spec: &FunctionSpec, row: &[usize]) -> Result<()> {
    match spec {
        FunctionSpec::ArithmeticSum { weights } if weights.len() != row.len() => Err(Error::Shape(
            format!("{} weights for a row of {} nodes", weights.len(), row.len()),
        )),
        FunctionSpec::Type { alphabet } => match row.iter().find(|&&s| s >= *alphabet) {
            Some(s) => Err(Error::Domain(format!(
                "symbol {s} outside alphabet of size {alphabet}"
            ))),
            None => Ok(()),
        },
        _ => Ok(()),
    }
}

fn evaluate<I: Iterator<Item = usize>>(
    spec: &FunctionSpec,
    row: &[usize],
    nodes: I,
) -> FunctionValue {
    match spec {
        FunctionSpec::ArithmeticSum { weights } => {
            FunctionValue::Scalar(nodes.map(|i| weights[i] * row[i] as f64).sum())
        }
        FunctionSpec::Type { alphabet } => {
            let mut hist = vec![0u64; *alphabet];
            for i in nodes {
                hist[row[i]] += 1;
            }
            FunctionValue::Histogram(hist)
        }
    }
}

pub fn eval_desired(spec: &FunctionSpec, row: &[usize]) -> Result<FunctionValue> {
    check_row(spec, row)?;
    Ok(evaluate(spec, row, 0..row.len()))
}

/// The desired function restricted to the nodes in `members`.
pub fn eval_subfunction(
    spec: &FunctionSpec,
    row: &[usize],
    members: &NodeSet,
) -> Result<FunctionValue> {
    check_row(spec, row)?;
    members.check_range(row.len())?;
    Ok(evaluate(spec, row, members.members().iter().copied()))
}

/// Combines sub-function values into the desired-function value: scalar sum
/// for arithmetic sums, elementwise histogram sum for the type function.
pub fn reconstruct(
    spec: &FunctionSpec,
    sub_values: &[FunctionValue],
    parts: &[NodeSet],
    k: usize,
) -> Result<FunctionValue> {
    if !is_valid_partition(parts, k) {
        return Err(Error::InvalidParameter(
            "sub-function sets do not form a disjoint cover of the nodes".into(),
        ));
    }
    if sub_values.len() != parts.len() {
        return Err(Error::Shape(format!(
            "{} sub-function values for {} parts",
            sub_values.len(),
            parts.len()
        )));
    }
    match spec {
        FunctionSpec::ArithmeticSum { .. } => {
            let mut total = 0.0;
            for v in sub_values {
                match v {
                    FunctionValue::Scalar(x) => total += x,
                    FunctionValue::Histogram(_) => {
                        return Err(Error::Shape("histogram value for an arithmetic sum".into()))
                    }
                }
            }
            Ok(FunctionValue::Scalar(total))
        }
        FunctionSpec::Type { alphabet } => {
            let mut hist = vec![0u64; *alphabet];
            for v in sub_values {
                match v {
                    FunctionValue::Histogram(h) if h.len() == *alphabet => {
                        for (acc, c) in hist.iter_mut().zip(h) {
                            *acc += c;
                        }
                    }
                    _ => return Err(Error::Shape("type value with the wrong alphabet".into())),
                }
            }
            Ok(FunctionValue::Histogram(hist))
        }
    }
}

/// Largest symbol present in a type-function histogram.
pub fn histogram_max(hist: &[u64]) -> Option<usize> {
    hist.iter().rposition(|&c| c > 0)
}

/// Smallest symbol present in a type-function histogram.
pub fn histogram_min(hist: &[u64]) -> Option<usize> {
    hist.iter().position(|&c| c > 0)
}

pub fn histogram_mean(hist: &[u64]) -> Option<f64> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let weighted: u64 = hist.iter().enumerate().map(|(s, &c)| s as u64 * c).sum();
    Some(weighted as f64 / total as f64)
}
