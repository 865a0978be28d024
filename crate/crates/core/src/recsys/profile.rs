use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::inet::UserRegionCounts;

/// A user's visited regions split into high-interest (top k) and
/// low-interest (remainder) sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInterestProfile {
    pub user_id: String,
    pub k: usize,
    /// Sorted by count desc, first interaction asc, region id asc.
    pub ranked_regions: Vec<(String, u32)>,
    pub top_set: Vec<String>,
    pub bottom_set: Vec<String>,
    /// The k-th count strictly exceeds the (k+1)-th.
    pub eligible: bool,
}

impl UserInterestProfile {
    pub fn is_top(&self, region: &str) -> bool {
        self.top_set.iter().any(|r| r == region)
    }

    pub fn count(&self, region: &str) -> Option<u32> {
        self.ranked_regions.iter().find(|(r, _)| r == region).map(|(_, c)| *c)
    }
}

pub fn label_user(counts: &UserRegionCounts, k: usize) -> UserInterestProfile {
    let mut ranked: Vec<(String, u32)> = counts.counts.iter().map(|(r, c)| (r.clone(), *c)).collect();
    let first = |r: &str| counts.first_seen.get(r).copied().unwrap_or(i64::MAX);
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1).then_with(|| first(&a.0).cmp(&first(&b.0))).then_with(|| a.0.cmp(&b.0))
    });
    profile_from_ranked(&counts.user_id, ranked, k)
}

/// Build a profile from regions already in rank order.
pub fn profile_from_ranked(user_id: &str, ranked: Vec<(String, u32)>, k: usize) -> UserInterestProfile {
    let eligible = k >= 1 && ranked.len() > k && ranked[k - 1].1.cmp(&ranked[k].1) == Ordering::Greater;
    let split = k.min(ranked.len());
    UserInterestProfile {
        user_id: user_id.to_string(),
        k,
        top_set: ranked[..split].iter().map(|r| r.0.clone()).collect(),
        bottom_set: ranked[split..].iter().map(|r| r.0.clone()).collect(),
        ranked_regions: ranked,
        eligible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(values: &[u32]) -> UserRegionCounts {
        UserRegionCounts {
            user_id: "u".into(),
            counts: values.iter().enumerate().map(|(i, c)| (format!("r{i}"), *c)).collect(),
            first_seen: Default::default(),
        }
    }

    #[test]
    fn strictness_rule() {
        let p = label_user(&counts(&[10, 8, 5, 4, 3, 1]), 3);
        assert!(p.eligible);
        assert_eq!(p.top_set, vec!["r0", "r1", "r2"]);
        assert_eq!(p.bottom_set, vec!["r3", "r4", "r5"]);
        assert!(!label_user(&counts(&[10, 8, 5, 5, 3, 1]), 3).eligible);
        assert!(!label_user(&counts(&[10, 8, 5]), 3).eligible);
    }

    #[test]
    fn ties_by_first_seen_then_id() {
        let mut c = counts(&[2, 2, 2]);
        c.first_seen = [("r0".to_string(), 30), ("r1".to_string(), 10), ("r2".to_string(), 10)].into();
        let p = label_user(&c, 1);
        let order: Vec<&str> = p.ranked_regions.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(order, vec!["r1", "r2", "r0"]);
    }
}
