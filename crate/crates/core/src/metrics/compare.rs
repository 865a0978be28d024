use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{eigenvector_centrality, kendall_tau, pearson, spearman, MetricError, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::inet::{filter_top_edges, INet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    #[default]
    Intersection,
    UnionZeroFill,
}

/// Edge weights of two networks aligned by edge key. Self-loops are keyed
/// as `(a, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedEdgeSeries {
    pub mode: PairingMode,
    pub pairs: Vec<((String, String), f64, f64)>,
}

impl PairedEdgeSeries {
    pub fn left(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn right(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.2).collect()
    }
}

fn keyed(net: &INet) -> BTreeMap<(String, String), f64> {
    net.edges
        .iter()
        .map(|(k, w)| (k.clone(), *w as f64))
        .chain(net.self_loops.iter().map(|(a, w)| ((a.clone(), a.clone()), *w as f64)))
        .collect()
}

pub fn paired_edges(a: &INet, b: &INet, mode: PairingMode) -> PairedEdgeSeries {
    let (ka, kb) = (keyed(a), keyed(b));
    let pairs = match mode {
        PairingMode::Intersection => {
            ka.iter().filter_map(|(k, wa)| kb.get(k).map(|wb| (k.clone(), *wa, *wb))).collect()
        }
        PairingMode::UnionZeroFill => {
            let mut keys: Vec<&(String, String)> = ka.keys().chain(kb.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter()
                .map(|k| (k.clone(), ka.get(k).copied().unwrap_or(0.0), kb.get(k).copied().unwrap_or(0.0)))
                .collect()
        }
    };
    PairedEdgeSeries { mode, pairs }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub mode: PairingMode,
    /// Compute centrality after keeping this fraction of edges.
    pub centrality_filter: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { mode: PairingMode::Intersection, centrality_filter: None, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub level: String,
    pub mode: PairingMode,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    pub paired_edges: usize,
    pub shared_nodes: usize,
    pub shared_edges: usize,
    pub nodes_a: usize,
    pub nodes_b: usize,
    pub edges_a: usize,
    pub edges_b: usize,
    /// Nodes with nonzero centrality in both networks.
    pub ranked_nodes: usize,
    pub notes: Vec<String>,
}

/// Cross-network agreement: edge-weight correlations plus Kendall's tau on
/// eigenvector centralities of shared nodes. Correlations that cannot be
/// computed are `None` with a note explaining why.
pub fn compare_inets(a: &INet, b: &INet, opts: &CompareOptions) -> Result<CompareReport, MetricError> {
    if a.level != b.level {
        return Err(MetricError::LevelMismatch { left: a.level.to_string(), right: b.level.to_string() });
    }
    let mut notes = Vec::new();
    let series = paired_edges(a, b, opts.mode);
    let (x, y) = (series.left(), series.right());
    let mut correlate = |name: &str, f: fn(&[f64], &[f64]) -> Result<f64, MetricError>| match f(&x, &y) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{name} unavailable: {e}"));
            None
        }
    };
    let pearson_v = correlate("pearson", pearson);
    let spearman_v = correlate("spearman", spearman);

    let centrality_net = |net: &INet| -> Result<INet, MetricError> {
        match opts.centrality_filter {
            Some(f) => filter_top_edges(net, f).map_err(|_| MetricError::TooFewValues { needed: 1, got: 0 }),
            None => Ok(net.clone()),
        }
    };
    let (ca, cb) = (centrality_net(a)?, centrality_net(b)?);
    let mut ranked = 0;
    let kendall_v = if a.nodes.is_empty() || b.nodes.is_empty() {
        notes.push("kendall unavailable: empty network".into());
        None
    } else {
        let sa = eigenvector_centrality(&ca, opts.tol, opts.max_iter)?;
        let sb = eigenvector_centrality(&cb, opts.tol, opts.max_iter)?;
        let (ra, rb): (Vec<f64>, Vec<f64>) =
            sa.iter().filter_map(|(n, va)| sb.get(n).filter(|vb| **vb > 0.0 && *va > 0.0).map(|vb| (*va, *vb))).unzip();
        ranked = ra.len();
        match kendall_tau(&ra, &rb) {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("kendall unavailable: {e}"));
                None
            }
        }
    };

    let shared_edges = a.edges.keys().filter(|k| b.edges.contains_key(*k)).count();
    Ok(CompareReport {
        level: a.level.to_string(),
        mode: opts.mode,
        pearson: pearson_v,
        spearman: spearman_v,
        kendall: kendall_v,
        paired_edges: series.pairs.len(),
        shared_nodes: a.nodes.intersection(&b.nodes).count(),
        shared_edges,
        nodes_a: a.nodes.len(),
        nodes_b: b.nodes.len(),
        edges_a: a.edges.len(),
        edges_b: b.edges.len(),
        ranked_nodes: ranked,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Level, Platform};

    fn net(platform: Platform, edges: &[(&str, &str, u32)]) -> INet {
        let mut n = INet::empty(Level::Zip, platform);
        for (a, b, w) in edges {
            n.set_weight(a, b, *w);
        }
        n
    }

    #[test]
    fn self_comparison_is_perfect() {
        let g = net(Platform::Gp, &[("a", "b", 3), ("b", "c", 5), ("a", "c", 1), ("c", "d", 2), ("a", "a", 4)]);
        let r = compare_inets(&g, &g, &CompareOptions::default()).unwrap();
        for v in [r.pearson, r.spearman, r.kendall] {
            assert!((v.unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.paired_edges, 5);
    }

    #[test]
    fn disjoint_edges_are_unavailable() {
        let a = net(Platform::Gp, &[("a", "b", 3), ("c", "d", 1)]);
        let b = net(Platform::Fs, &[("a", "c", 3), ("b", "d", 2)]);
        let r = compare_inets(&a, &b, &CompareOptions::default()).unwrap();
        assert_eq!((r.pearson, r.spearman, r.shared_edges, r.paired_edges), (None, None, 0, 0));
        assert!(!r.notes.is_empty());
        let u = paired_edges(&a, &b, PairingMode::UnionZeroFill);
        assert_eq!(u.pairs.len(), 4);
        assert_eq!(u.pairs[0], (("a".to_string(), "b".to_string()), 3.0, 0.0));
    }

    #[test]
    fn level_mismatch() {
        let a = net(Platform::Gp, &[("a", "b", 1)]);
        let mut b = a.clone();
        b.level = Level::City;
        assert!(matches!(compare_inets(&a, &b, &CompareOptions::default()), Err(MetricError::LevelMismatch { .. })));
    }
}
