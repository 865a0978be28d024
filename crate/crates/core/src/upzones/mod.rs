//! Urban Preference Zones: community detection, category profiles and
//! cross-platform zone alignment.

mod hungarian;
mod leiden;
mod profile;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use hungarian::max_weight_assignment;
pub use leiden::{leiden, modularity, UpZoneSet};
pub use profile::{profile_terms, profile_zones, smooth_idf, ZoneProfile};

use crate::metrics::{nmi, rand_index, shared_labels, MetricError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UpzoneError {
    #[error("network has no nodes")]
    EmptyNetwork,
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error("partition does not cover node {0}")]
    MissingNode(String),
    #[error("zone sets share no cells")]
    EmptyIntersection,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneAlignment {
    /// Zone of A to its matched zone of B; `None` when unmatched or when the
    /// best available match shares no cells.
    pub matching: BTreeMap<usize, Option<usize>>,
    pub total_overlap: u64,
    pub shared_cells: usize,
}

fn shared_cells(a: &UpZoneSet, b: &UpZoneSet) -> Vec<(usize, usize)> {
    a.zones.iter().filter_map(|(cell, za)| b.zones.get(cell).map(|zb| (*za, *zb))).collect()
}

/// Match zones of A to zones of B maximizing the number of shared cells.
pub fn hungarian_align(a: &UpZoneSet, b: &UpZoneSet) -> Result<ZoneAlignment, UpzoneError> {
    let shared = shared_cells(a, b);
    if shared.is_empty() {
        return Err(UpzoneError::EmptyIntersection);
    }
    let rows: Vec<usize> = shared.iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
    let cols: Vec<usize> = shared.iter().map(|p| p.1).collect::<BTreeSet<_>>().into_iter().collect();
    let row_index: BTreeMap<usize, usize> = rows.iter().enumerate().map(|(i, z)| (*z, i)).collect();
    let col_index: BTreeMap<usize, usize> = cols.iter().enumerate().map(|(i, z)| (*z, i)).collect();
    let mut overlap = vec![vec![0i64; cols.len()]; rows.len()];
    for (za, zb) in &shared {
        overlap[row_index[za]][col_index[zb]] += 1;
    }
    let (assignment, total) = max_weight_assignment(&overlap);
    let mut matching: BTreeMap<usize, Option<usize>> = (0..a.zone_count).map(|z| (z, None)).collect();
    for (i, col) in assignment.iter().enumerate() {
        if let Some(j) = col.filter(|j| overlap[i][*j] > 0) {
            matching.insert(rows[i], Some(cols[j]));
        }
    }
    Ok(ZoneAlignment { matching, total_overlap: total as u64, shared_cells: shared.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSimilarity {
    pub nmi: f64,
    pub rand: f64,
    pub adjusted_rand: f64,
    pub shared_cells: usize,
    /// Fraction of each set's cells present in the other.
    pub coverage_a: f64,
    pub coverage_b: f64,
}

/// NMI and Rand scores of two zone sets over the cells both contain.
pub fn zone_similarity(a: &UpZoneSet, b: &UpZoneSet) -> Result<ZoneSimilarity, UpzoneError> {
    let (la, lb) = shared_labels(&a.zones, &b.zones);
    if la.is_empty() {
        return Err(UpzoneError::EmptyIntersection);
    }
    let r = rand_index(&la, &lb)?;
    Ok(ZoneSimilarity {
        nmi: nmi(&la, &lb)?,
        rand: r.rand,
        adjusted_rand: r.adjusted_rand,
        shared_cells: la.len(),
        coverage_a: la.len() as f64 / a.zones.len() as f64,
        coverage_b: la.len() as f64 / b.zones.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connectivity {
    pub zones: usize,
    pub connected_zones: usize,
    pub fraction: f64,
}

/// Fraction of zones whose cells form one spatially connected piece, with
/// adjacency given by `neighbors`.
pub fn spatial_connectivity<F>(zones: &UpZoneSet, neighbors: F) -> Connectivity
where
    F: Fn(&str) -> Vec<String>,
{
    let members = zones.members();
    let mut connected = 0;
    for cells in members.values() {
        let set: BTreeSet<&str> = cells.iter().copied().collect();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut stack = vec![cells[0].to_string()];
        while let Some(c) = stack.pop() {
            if !seen.insert(c.clone()) {
                continue;
            }
            stack.extend(neighbors(&c).into_iter().filter(|n| set.contains(n.as_str()) && !seen.contains(n)));
        }
        if seen.len() == set.len() {
            connected += 1;
        }
    }
    let total = members.len();
    Connectivity {
        zones: total,
        connected_zones: connected,
        fraction: if total == 0 { 0.0 } else { connected as f64 / total as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexgrid::{encode_cell_id, neighbor_ids, Resolution};
    use crate::ingest::Level;

    fn set(cells: &[(&str, usize)]) -> UpZoneSet {
        let zones: BTreeMap<String, usize> = cells.iter().map(|(c, z)| (c.to_string(), *z)).collect();
        let zone_count = zones.values().max().map_or(0, |m| m + 1);
        UpZoneSet { level: Level::Neighborhood, zones, zone_count, modularity: 0.0, gamma: 1.0, seed: 0, quality_trace: vec![] }
    }

    #[test]
    fn identical_sets_align_identically() {
        let a = set(&[("a", 0), ("b", 0), ("c", 1), ("d", 2)]);
        let al = hungarian_align(&a, &a).unwrap();
        assert_eq!(al.total_overlap, 4);
        assert!(al.matching.iter().all(|(k, v)| *v == Some(*k)));
        let s = zone_similarity(&a, &a).unwrap();
        assert!((s.nmi - 1.0).abs() < 1e-12);
        assert_eq!((s.rand, s.adjusted_rand), (1.0, 1.0));
    }

    #[test]
    fn unmatched_and_disjoint() {
        let a = set(&[("a", 0), ("b", 1), ("c", 2)]);
        let b = set(&[("a", 0), ("b", 0), ("x", 1)]);
        let al = hungarian_align(&a, &b).unwrap();
        assert_eq!(al.total_overlap, 1);
        assert_eq!(al.matching.values().filter(|m| m.is_some()).count(), 1);
        assert_eq!(al.matching[&2], None);
        let c = set(&[("z", 0)]);
        assert_eq!(hungarian_align(&a, &c), Err(UpzoneError::EmptyIntersection));
        let s = zone_similarity(&a, &b).unwrap();
        assert_eq!(s.shared_cells, 2);
        assert!((s.coverage_a - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hex_connectivity() {
        let id = |q, r| encode_cell_id(Resolution::H9, q, r);
        let cells = [(id(0, 0), 0), (id(1, 0), 0), (id(5, 5), 1), (id(7, 5), 1)];
        let zones = set(&cells.iter().map(|(c, z)| (c.as_str(), *z)).collect::<Vec<_>>());
        let c = spatial_connectivity(&zones, |c| neighbor_ids(c).unwrap_or_default());
        assert_eq!((c.zones, c.connected_zones), (2, 1));
    }
}
