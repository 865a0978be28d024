//! Partition agreement: normalized mutual information and (adjusted) Rand.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::MetricError;

struct Contingency {
    n: usize,
    left: Vec<usize>,
    right: Vec<usize>,
    joint: Vec<usize>,
}

fn contingency<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<Contingency, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(MetricError::TooFewValues { needed: 1, got: 0 });
    }
    let mut left: HashMap<&A, usize> = HashMap::new();
    let mut right: HashMap<&B, usize> = HashMap::new();
    let mut joint: HashMap<(&A, &B), usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *left.entry(x).or_insert(0) += 1;
        *right.entry(y).or_insert(0) += 1;
        *joint.entry((x, y)).or_insert(0) += 1;
    }
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    Ok(Contingency {
        n: a.len(),
        left: sorted(left.into_values().collect()),
        right: sorted(right.into_values().collect()),
        joint: sorted(joint.into_values().collect()),
    })
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with the arithmetic mean of the two
/// entropies as normalizer.
///
/// Two single-cluster partitions score 1; a single-cluster partition
/// against a non-trivial one scores 0.
pub fn nmi<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<f64, MetricError> {
    let c = contingency(a, b)?;
    let n = c.n as f64;
    let (ha, hb) = (entropy(&c.left, n), entropy(&c.right, n));
    match (c.left.len() == 1, c.right.len() == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    // H(A,B) from the joint counts; MI = H(A) + H(B) - H(A,B)
    let hab = entropy(&c.joint, n);
    let mi = (ha + hb - hab).max(0.0);
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandScores {
    pub rand: f64,
    pub adjusted_rand: f64,
}

fn pairs(c: usize) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Rand index and Hubert–Arabie adjusted Rand index.
pub fn rand_index<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<RandScores, MetricError> {
    if a.len() < 2 {
        return Err(MetricError::TooFewValues { needed: 2, got: a.len() });
    }
    let c = contingency(a, b)?;
    let total = pairs(c.n);
    let same_both: f64 = c.joint.iter().map(|&x| pairs(x)).sum();
    let same_a: f64 = c.left.iter().map(|&x| pairs(x)).sum();
    let same_b: f64 = c.right.iter().map(|&x| pairs(x)).sum();
    let agreements = total + 2.0 * same_both - same_a - same_b;
    let expected = same_a * same_b / total;
    let max_index = 0.5 * (same_a + same_b);
    let adjusted_rand = if max_index == expected { 1.0 } else { (same_both - expected) / (max_index - expected) };
    Ok(RandScores { rand: agreements / total, adjusted_rand })
}

/// Restrict two labelled partitions to their shared elements, in key order.
pub fn shared_labels<K: Ord, A: Clone, B: Clone>(a: &BTreeMap<K, A>, b: &BTreeMap<K, B>) -> (Vec<A>, Vec<B>) {
    a.iter().filter_map(|(k, la)| b.get(k).map(|lb| (la.clone(), lb.clone()))).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_partitions() {
        let p = [0, 0, 1, 1, 2];
        assert!((nmi(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        let r = rand_index(&p, &p).unwrap();
        assert_eq!((r.rand, r.adjusted_rand), (1.0, 1.0));
    }

    #[test]
    fn crossed_pairs() {
        let a = [0, 0, 1, 1];
        let b = [0, 1, 0, 1];
        assert!(nmi(&a, &b).unwrap().abs() < 1e-12);
        let r = rand_index(&a, &b).unwrap();
        assert!((r.rand - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_partition_conventions() {
        assert_eq!(nmi(&[1, 1, 1], &[5, 5, 5]).unwrap(), 1.0);
        assert_eq!(nmi(&[1, 1, 1], &[0, 1, 2]).unwrap(), 0.0);
        assert!(rand_index(&[1], &[1]).is_err());
        assert!(nmi(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn symmetric_and_label_invariant() {
        let a = ["x", "x", "y", "z", "z", "z"];
        let b = [3, 1, 1, 2, 2, 1];
        assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-12);
        assert_eq!(rand_index(&a, &b).unwrap().rand, rand_index(&b, &a).unwrap().rand);
        let relabelled = ["q", "q", "p", "r", "r", "r"];
        assert!((nmi(&relabelled, &b).unwrap() - nmi(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn shared_label_restriction() {
        let a: BTreeMap<&str, u32> = [("c1", 0), ("c2", 1), ("c3", 1)].into();
        let b: BTreeMap<&str, u32> = [("c2", 7), ("c3", 8), ("c4", 9)].into();
        assert_eq!(shared_labels(&a, &b), (vec![1, 1], vec![7, 8]));
    }
}
