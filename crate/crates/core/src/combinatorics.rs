//! Sub-function node sets, reconstruction combinations and the expected
//! share of sub-carrier slots each of them receives.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::numerics::{complex_gaussian, substream, Stream};

/// Default cap on the number of elements an enumeration may produce.
pub const ENUMERATION_CAP: u64 = 1_000_000;

/// Set of node indexes participating in one sub-function, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    /// Builds a set from arbitrary indexes; duplicates are rejected.
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!(
                "duplicate node index in {members:?}"
            )));
        }
        Ok(NodeSet(members))
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.0.binary_search(&node).is_ok()
    }

    /// Errors if any member is outside `0..k`.
    pub fn check_range(&self, k: usize) -> Result<()> {
        match self.0.last() {
            Some(&max) if max >= k => Err(Error::InvalidParameter(format!(
                "node index {max} out of range for K = {k}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Ordered tuple of node sets used to rebuild the desired function.
pub type Combination = Vec<NodeSet>;

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for j in 0..k {
        acc *= n - j;
        acc /= j + 1;
    }
    acc
}

/// `|S| = C(K, M)`.
pub fn subfunction_set_count(k: usize, m: usize) -> BigUint {
    binomial(k, m)
}

/// `|Q| = ∏_{l=0}^{B-1} C(K − M·l, M)`, the number of ordered partitions of
/// `[0, K)` into `B = K/M` blocks of size `M`.
pub fn combination_count(k: usize, m: usize) -> Result<BigUint> {
    let b = blocks(k, m)?;
    Ok((0..b).map(|l| binomial(k - m * l, m)).product())
}

fn blocks(k: usize, m: usize) -> Result<usize> {
    if m == 0 || m > k {
        return Err(Error::InvalidParameter(format!(
            "M must satisfy 1 <= M <= K (M = {m}, K = {k})"
        )));
    }
    if k % m != 0 {
        return Err(Error::NotDivisible { k, m });
    }
    Ok(k / m)
}

fn check_cap(count: &BigUint, cap: u64) -> Result<()> {
    if *count > BigUint::from(cap) {
        return Err(Error::TooLarge {
            count: count.to_string(),
            cap,
        });
    }
    Ok(())
}

pub fn enumerate_subfunction_sets(k: usize, m: usize) -> Result<Vec<NodeSet>> {
    enumerate_subfunction_sets_capped(k, m, ENUMERATION_CAP)
}

/// All size-`m` subsets of `[0, k)` in lexicographic order.
pub fn enumerate_subfunction_sets_capped(k: usize, m: usize, cap: u64) -> Result<Vec<NodeSet>> {
    if m == 0 || m > k {
        return Err(Error::InvalidParameter(format!(
            "M must satisfy 1 <= M <= K (M = {m}, K = {k})"
        )));
    }
    check_cap(&subfunction_set_count(k, m), cap)?;
    let pool: Vec<usize> = (0..k).collect();
    Ok(subsets_of(&pool, m).into_iter().map(NodeSet).collect())
}

// Lexicographic m-subsets of a sorted pool.
fn subsets_of(pool: &[usize], m: usize) -> Vec<Vec<usize>> {
    let n = pool.len();
    let mut out = Vec::new();
    if m > n {
        return out;
    }
    let mut pos: Vec<usize> = (0..m).collect();
    loop {
        out.push(pos.iter().map(|&p| pool[p]).collect());
        // rightmost position that can still advance
        let Some(i) = (0..m).rev().find(|&i| pos[i] < n - m + i) else {
            break;
        };
        pos[i] += 1;
        for j in i + 1..m {
            pos[j] = pos[j - 1] + 1;
        }
    }
    out
}

pub fn enumerate_combinations(k: usize, m: usize) -> Result<Vec<Combination>> {
    enumerate_combinations_capped(k, m, ENUMERATION_CAP)
}

/// All ordered tuples `(τ₁, …, τ_B)` of disjoint size-`m` sets covering
/// `[0, k)`.
pub fn enumerate_combinations_capped(k: usize, m: usize, cap: u64) -> Result<Vec<Combination>> {
    blocks(k, m)?;
    check_cap(&combination_count(k, m)?, cap)?;
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    let remaining: Vec<usize> = (0..k).collect();
    extend_combinations(&remaining, m, &mut prefix, &mut out);
    Ok(out)
}

fn extend_combinations(
    remaining: &[usize],
    m: usize,
    prefix: &mut Vec<NodeSet>,
    out: &mut Vec<Combination>,
) {
    if remaining.is_empty() {
        out.push(prefix.clone());
        return;
    }
    for part in subsets_of(remaining, m) {
        let rest: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|x| part.binary_search(x).is_err())
            .collect();
        prefix.push(NodeSet(part));
        extend_combinations(&rest, m, prefix, out);
        prefix.pop();
    }
}

/// True iff `parts` are pairwise disjoint and their union is `[0, k)`.
pub fn is_valid_partition(parts: &[NodeSet], k: usize) -> bool {
    let mut seen = vec![false; k];
    for part in parts {
        for &i in part.members() {
            if i >= k || seen[i] {
                return false;
            }
            seen[i] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

/// Expected number of sub-carrier slots per sub-function set and per
/// (combination, set) pair out of `n` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierShare {
    /// `n / |S|`
    pub per_subfunction: BigRational,
    /// `n / (B·|Q|)`
    pub per_combination: BigRational,
    pub set_count: BigUint,
    pub combination_count: BigUint,
    pub blocks: usize,
}

pub fn expected_subcarrier_share(n: u64, k: usize, m: usize) -> Result<SubcarrierShare> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "slot count n must be positive".into(),
        ));
    }
    let b = blocks(k, m)?;
    let s = subfunction_set_count(k, m);
    let q = combination_count(k, m)?;
    let total = BigRational::from_integer(BigUint::from(n).into());
    let per_subfunction = &total / BigRational::from_integer(s.clone().into());
    let per_combination = &total / BigRational::from_integer((q.clone() * BigUint::from(b)).into());
    Ok(SubcarrierShare {
        per_subfunction,
        per_combination,
        set_count: s,
        combination_count: q,
        blocks: b,
    })
}

/// Draws `draws` i.i.d. unit-mean exponential gain vectors of length `k` and
/// counts how often each top-`m` node set occurs.
pub fn top_set_counts(
    k: usize,
    m: usize,
    draws: usize,
    seed: u64,
) -> Result<BTreeMap<NodeSet, u64>> {
    if m == 0 || m > k {
        return Err(Error::InvalidParameter(format!(
            "M must satisfy 1 <= M <= K (M = {m}, K = {k})"
        )));
    }
    let mut counts = BTreeMap::new();
    for set in enumerate_subfunction_sets(k, m)? {
        counts.insert(set, 0u64);
    }
    let mut rng = substream(seed, Stream::Instance, 0);
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(k);
    for _ in 0..draws {
        indexed.clear();
        for i in 0..k {
            let h = complex_gaussian(&mut rng);
            indexed.push((h.norm_sqr(), i));
        }
        indexed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let set = NodeSet::new(indexed[..m].iter().map(|&(_, i)| i).collect())?;
        *counts.entry(set).or_insert(0) += 1;
    }
    Ok(counts)
}

pub(crate) fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(v: &[usize]) -> NodeSet {
        NodeSet::new(v.to_vec()).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn subfunction_sets_small() {
        let sets = enumerate_subfunction_sets(2, 1).unwrap();
        assert_eq!(sets, vec![ns(&[0]), ns(&[1])]);
        assert_eq!(
            enumerate_subfunction_sets(3, 3).unwrap(),
            vec![ns(&[0, 1, 2])]
        );
    }

    #[test]
    fn subfunction_sets_match_binomial_by_brute_force() {
        // Independent count: every bitmask with popcount M.
        for k in 1..=8usize {
            for m in 1..=k {
                let brute = (0u32..1 << k)
                    .filter(|x| x.count_ones() as usize == m)
                    .count();
                let sets = enumerate_subfunction_sets(k, m).unwrap();
                assert_eq!(sets.len(), brute);
                assert_eq!(subfunction_set_count(k, m), BigUint::from(brute));
                assert!(sets.windows(2).all(|w| w[0] < w[1]), "lexicographic");
            }
        }
        assert_eq!(enumerate_subfunction_sets(4, 2).unwrap().len(), 6);
    }

    #[test]
    fn combinations_small() {
        let c = enumerate_combinations(2, 1).unwrap();
        assert_eq!(c, vec![vec![ns(&[0]), ns(&[1])], vec![ns(&[1]), ns(&[0])]]);
        assert_eq!(enumerate_combinations(4, 2).unwrap().len(), 6);
        assert_eq!(enumerate_combinations(4, 4).unwrap().len(), 1);
        assert_eq!(combination_count(4, 2).unwrap(), BigUint::from(6u32));
        assert_eq!(combination_count(6, 2).unwrap(), BigUint::from(90u32));
        assert_eq!(enumerate_combinations(6, 2).unwrap().len(), 90);
        assert!(matches!(
            enumerate_combinations(5, 2),
            Err(Error::NotDivisible { .. })
        ));
    }

    #[test]
    fn combinations_are_valid_partitions() {
        for (k, m) in [(4, 1), (4, 2), (6, 3), (6, 2), (6, 1)] {
            for c in enumerate_combinations(k, m).unwrap() {
                assert!(is_valid_partition(&c, k));
                assert_eq!(c.len(), k / m);
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = enumerate_subfunction_sets_capped(10, 5, 100).unwrap_err();
        assert_eq!(
            err,
            Error::TooLarge {
                count: "252".into(),
                cap: 100
            }
        );
        assert!(enumerate_combinations(64, 8).is_err());
        // cardinalities stay available beyond the cap
        assert!(combination_count(64, 8).unwrap() > BigUint::from(ENUMERATION_CAP));
    }

    #[test]
    fn partition_predicate() {
        assert!(is_valid_partition(&[ns(&[0, 1]), ns(&[2, 3])], 4));
        assert!(!is_valid_partition(&[ns(&[0, 1]), ns(&[1, 2])], 4));
        assert!(!is_valid_partition(&[ns(&[0, 1])], 4));
        assert!(!is_valid_partition(&[ns(&[0, 1]), ns(&[2, 4])], 4));
    }

    #[test]
    fn shares() {
        let s = expected_subcarrier_share(24, 4, 2).unwrap();
        assert_eq!(s.per_subfunction, rat(4, 1));
        assert_eq!(s.per_combination, rat(2, 1));
        assert_eq!(s.set_count, BigUint::from(6u32));
        assert_eq!(s.combination_count, BigUint::from(6u32));

        let s = expected_subcarrier_share(6, 2, 1).unwrap();
        assert_eq!(s.per_subfunction, rat(3, 1));
        assert_eq!(s.per_combination, rat(3, 2));

        let s = expected_subcarrier_share(1, 5, 5).unwrap();
        assert_eq!(s.per_subfunction, rat(1, 1));
        assert_eq!(s.per_combination, rat(1, 1));

        assert!(expected_subcarrier_share(0, 4, 2).is_err());
        assert!(expected_subcarrier_share(10, 4, 3).is_err());
    }

    #[test]
    fn shares_sum_to_slot_count() {
        for (n, k, m) in [(24u64, 4, 2), (7, 6, 2), (90, 6, 3), (5, 3, 1)] {
            let s = expected_subcarrier_share(n, k, m).unwrap();
            let total = BigRational::from_integer(BigUint::from(n).into());
            let by_set = &s.per_subfunction * BigRational::from_integer(s.set_count.clone().into());
            assert_eq!(by_set, total);
            let pairs = BigUint::from(s.blocks) * &s.combination_count;
            let by_pair = &s.per_combination * BigRational::from_integer(pairs.into());
            assert_eq!(by_pair, total);
        }
    }

    #[test]
    fn node_set_checks() {
        assert!(NodeSet::new(vec![1, 1]).is_err());
        assert!(ns(&[0, 3]).check_range(3).is_err());
        assert!(ns(&[0, 2]).check_range(3).is_ok());
    }
}
