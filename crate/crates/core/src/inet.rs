//! Interest networks: region graphs whose edge weights count the users who
//! reviewed venues in both endpoint regions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{Interaction, Level, Platform, VenueAssignment};

/// Default cap on distinct regions per user during pair expansion.
pub const DEFAULT_MAX_REGIONS_PER_USER: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum InetError {
    #[error("keep fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed edge list: {0}")]
    Format(String),
}

/// Review counts of one user per region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRegionCounts {
    pub user_id: String,
    pub counts: BTreeMap<String, u32>,
    /// Earliest interaction time per region; used for ranking ties.
    #[serde(default)]
    pub first_seen: BTreeMap<String, i64>,
}

/// Group interactions by user and region. Interactions whose venue has no
/// region are ignored.
pub fn build_user_counts(interactions: &[Interaction], assignment: &VenueAssignment) -> Vec<UserRegionCounts> {
    let mut by_user: BTreeMap<&str, UserRegionCounts> = BTreeMap::new();
    for it in interactions {
        let Some(region) = assignment.region_of(&it.venue_id) else {
            continue;
        };
        let entry = by_user.entry(&it.user_id).or_insert_with(|| UserRegionCounts {
            user_id: it.user_id.clone(),
            counts: BTreeMap::new(),
            first_seen: BTreeMap::new(),
        });
        *entry.counts.entry(region.to_string()).or_insert(0) += 1;
        entry
            .first_seen
            .entry(region.to_string())
            .and_modify(|t| *t = (*t).min(it.timestamp))
            .or_insert(it.timestamp);
    }
    by_user.into_values().collect()
}

/// Weighted undirected region graph with self-loops. Edge keys are stored
/// canonically with the smaller id first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "INetRecord", try_from = "INetRecord")]
pub struct INet {
    pub level: Level,
    pub platform: Platform,
    pub nodes: BTreeSet<String>,
    pub edges: BTreeMap<(String, String), u32>,
    pub self_loops: BTreeMap<String, u32>,
}

fn canonical(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl INet {
    pub fn empty(level: Level, platform: Platform) -> Self {
        Self { level, platform, nodes: BTreeSet::new(), edges: BTreeMap::new(), self_loops: BTreeMap::new() }
    }

    /// Weight of `{a, b}` in either orientation; self-loop weight when `a == b`.
    pub fn weight(&self, a: &str, b: &str) -> u32 {
        if a == b {
            return self.self_loops.get(a).copied().unwrap_or(0);
        }
        self.edges.get(&canonical(a, b)).copied().unwrap_or(0)
    }

    /// Set an edge or self-loop weight, adding endpoints as nodes. Zero removes it.
    pub fn set_weight(&mut self, a: &str, b: &str, w: u32) {
        self.nodes.insert(a.to_string());
        self.nodes.insert(b.to_string());
        if a == b {
            if w == 0 {
                self.self_loops.remove(a);
            } else {
                self.self_loops.insert(a.to_string(), w);
            }
        } else if w == 0 {
            self.edges.remove(&canonical(a, b));
        } else {
            self.edges.insert(canonical(a, b), w);
        }
    }

    /// Self-loops followed by edges, each as `(src, dst, weight)`, sorted.
    pub fn weighted_pairs(&self) -> Vec<(&str, &str, u32)> {
        let mut out: Vec<(&str, &str, u32)> = self
            .edges
            .iter()
            .map(|((a, b), w)| (a.as_str(), b.as_str(), *w))
            .chain(self.self_loops.iter().map(|(a, w)| (a.as_str(), a.as_str(), *w)))
            .collect();
        out.sort();
        out
    }

    /// Weighted degree of each node counting self-loops twice.
    pub fn strengths(&self) -> BTreeMap<&str, f64> {
        let mut s: BTreeMap<&str, f64> = self.nodes.iter().map(|n| (n.as_str(), 0.0)).collect();
        for ((a, b), w) in &self.edges {
            *s.get_mut(a.as_str()).unwrap() += *w as f64;
            *s.get_mut(b.as_str()).unwrap() += *w as f64;
        }
        for (a, w) in &self.self_loops {
            *s.get_mut(a.as_str()).unwrap() += 2.0 * *w as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct INetRecord {
    level: Level,
    platform: Platform,
    nodes: Vec<String>,
    edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    pub weight: u32,
}

impl From<INet> for INetRecord {
    fn from(net: INet) -> Self {
        let edges = net
            .weighted_pairs()
            .into_iter()
            .map(|(a, b, w)| EdgeRecord { src: a.into(), dst: b.into(), weight: w })
            .collect();
        INetRecord { level: net.level, platform: net.platform, nodes: net.nodes.into_iter().collect(), edges }
    }
}

impl TryFrom<INetRecord> for INet {
    type Error = InetError;

    fn try_from(rec: INetRecord) -> Result<Self, InetError> {
        let mut net = INet::empty(rec.level, rec.platform);
        net.nodes.extend(rec.nodes);
        for e in rec.edges {
            if e.weight == 0 {
                return Err(InetError::Format(format!("zero weight on {}-{}", e.src, e.dst)));
            }
            net.set_weight(&e.src, &e.dst, e.weight);
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregateOptions {
    pub max_regions_per_user: usize,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self { max_regions_per_user: DEFAULT_MAX_REGIONS_PER_USER }
    }
}

type PairCounts = HashMap<(u32, u32), u32>;

fn merge_counts(mut a: PairCounts, b: PairCounts) -> PairCounts {
    let (mut big, small) = if a.len() >= b.len() { (std::mem::take(&mut a), b) } else { (b, a) };
    for (k, v) in small {
        *big.entry(k).or_insert(0) += v;
    }
    big
}

/// Aggregate per-user counts into an interest network.
///
/// Users whose distinct-region count exceeds the cap contribute nodes and
/// self-loops but no pairwise edges.
pub fn aggregate(user_counts: &[UserRegionCounts], level: Level, platform: Platform) -> INet {
    aggregate_with(user_counts, level, platform, AggregateOptions::default())
}

pub fn aggregate_with(
    user_counts: &[UserRegionCounts],
    level: Level,
    platform: Platform,
    opts: AggregateOptions,
) -> INet {
    let nodes: BTreeSet<String> = user_counts.iter().flat_map(|u| u.counts.keys().cloned()).collect();
    let ids: Vec<&String> = nodes.iter().collect();
    let index: HashMap<&str, u32> = ids.iter().enumerate().map(|(i, n)| (n.as_str(), i as u32)).collect();

    let counts = user_counts
        .par_iter()
        .fold(PairCounts::new, |mut acc, user| {
            let regions: Vec<u32> = user.counts.keys().map(|r| index[r.as_str()]).collect();
            for (r, &c) in &user.counts {
                if c >= 2 {
                    let i = index[r.as_str()];
                    *acc.entry((i, i)).or_insert(0) += 1;
                }
            }
            if regions.len() > opts.max_regions_per_user {
                warn!(
                    "user {:?} spans {} regions (cap {}); pairwise edges skipped",
                    user.user_id,
                    regions.len(),
                    opts.max_regions_per_user
                );
                return acc;
            }
            // keys iterate sorted, so regions[i] < regions[j] for i < j
            for i in 0..regions.len() {
                for j in (i + 1)..regions.len() {
                    *acc.entry((regions[i], regions[j])).or_insert(0) += 1;
                }
            }
            acc
        })
        .reduce(PairCounts::new, merge_counts);

    let mut net = INet::empty(level, platform);
    net.nodes = nodes.clone();
    for ((a, b), w) in counts {
        let (na, nb) = (ids[a as usize], ids[b as usize]);
        if a == b {
            net.self_loops.insert(na.clone(), w);
        } else {
            net.edges.insert((na.clone(), nb.clone()), w);
        }
    }
    net
}

/// Keep the first `ceil(keep_fraction * |E|)` edges ordered by weight
/// descending, then by endpoint ids ascending. Self-loops and nodes are kept.
pub fn filter_top_edges(net: &INet, keep_fraction: f64) -> Result<INet, InetError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(InetError::BadFraction(keep_fraction));
    }
    if net.edges.is_empty() {
        warn!("filter_top_edges on a network without edges");
        return Ok(net.clone());
    }
    let total = net.edges.len();
    // guard against products like 0.7 * 10 = 7.000000000000001
    let keep = ((keep_fraction * total as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut ranked: Vec<(&(String, String), &u32)> = net.edges.iter().collect();
    ranked.sort_by(|(ka, wa), (kb, wb)| wb.cmp(wa).then_with(|| ka.cmp(kb)));
    let mut out = net.clone();
    out.edges = ranked.into_iter().take(keep.min(total)).map(|(k, w)| (k.clone(), *w)).collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NetStats {
    pub nodes: usize,
    pub edges: usize,
    pub self_loops: usize,
    /// Sum of edge and self-loop weights.
    pub total_weight: u64,
}

pub fn net_stats(net: &INet) -> NetStats {
    NetStats {
        nodes: net.nodes.len(),
        edges: net.edges.len(),
        self_loops: net.self_loops.len(),
        total_weight: net.edges.values().chain(net.self_loops.values()).map(|&w| w as u64).sum(),
    }
}

/// Metadata written next to an edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct INetSidecar {
    pub level: Level,
    pub platform: Platform,
    pub nodes: Vec<String>,
    pub stats: NetStats,
}

pub fn to_edge_csv(net: &INet) -> String {
    let mut out = String::from("src,dst,weight\n");
    for (a, b, w) in net.weighted_pairs() {
        out.push_str(&csv_field(a));
        out.push(',');
        out.push_str(&csv_field(b));
        out.push_str(&format!(",{w}\n"));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sidecar(net: &INet) -> INetSidecar {
    INetSidecar {
        level: net.level,
        platform: net.platform,
        nodes: net.nodes.iter().cloned().collect(),
        stats: net_stats(net),
    }
}

pub fn from_edge_csv(csv_text: &str, meta: &INetSidecar) -> Result<INet, InetError> {
    let mut net = INet::empty(meta.level, meta.platform);
    net.nodes.extend(meta.nodes.iter().cloned());
    let mut rdr = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| InetError::Format(e.to_string()))?;
        let (Some(a), Some(b), Some(w)) = (row.get(0), row.get(1), row.get(2)) else {
            return Err(InetError::Format(format!("row {} needs src,dst,weight", i + 2)));
        };
        let w: u32 = w
            .trim()
            .parse()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| InetError::Format(format!("row {}: bad weight {w:?}", i + 2)))?;
        net.set_weight(a.trim(), b.trim(), w);
    }
    Ok(net)
}

/// Sidecar location for an edge list: `x.inet.csv` -> `x.inet.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> InetError + '_ {
    move |source| InetError::Io { path: path.to_path_buf(), source }
}

pub fn write_inet(net: &INet, csv_path: &Path) -> Result<(), InetError> {
    fs::write(csv_path, to_edge_csv(net)).map_err(io_err(csv_path))?;
    let side = sidecar_path(csv_path);
    let json = serde_json::to_string_pretty(&sidecar(net)).expect("sidecar serializes");
    fs::write(&side, json).map_err(io_err(&side))
}

pub fn read_inet(csv_path: &Path) -> Result<INet, InetError> {
    let text = fs::read_to_string(csv_path).map_err(io_err(csv_path))?;
    let side = sidecar_path(csv_path);
    let meta_text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let meta: INetSidecar = serde_json::from_str(&meta_text).map_err(|e| InetError::Format(e.to_string()))?;
    from_edge_csv(&text, &meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Platform;

    fn counts(user: &str, pairs: &[(&str, u32)]) -> UserRegionCounts {
        UserRegionCounts {
            user_id: user.into(),
            counts: pairs.iter().map(|(r, c)| (r.to_string(), *c)).collect(),
            first_seen: BTreeMap::new(),
        }
    }

    fn interaction(u: &str, v: &str, ts: i64) -> Interaction {
        Interaction { user_id: u.into(), venue_id: v.into(), timestamp: ts, platform: Platform::Gp, rating: None }
    }

    #[test]
    fn user_counts_per_region() {
        let mut asg = VenueAssignment::default();
        asg.map.insert("v1".into(), "r1".into());
        asg.map.insert("v2".into(), "r1".into());
        asg.map.insert("v3".into(), "r2".into());
        let data = vec![interaction("A", "v1", 5), interaction("A", "v2", 3), interaction("A", "v3", 9)];
        let uc = build_user_counts(&data, &asg);
        assert_eq!(uc.len(), 1);
        assert_eq!(uc[0].counts, [("r1".to_string(), 2), ("r2".to_string(), 1)].into());
        assert_eq!(uc[0].first_seen["r1"], 3);
        let mut rev = data.clone();
        rev.reverse();
        assert_eq!(build_user_counts(&rev, &asg), uc);
    }

    #[test]
    fn aggregate_hand_example() {
        let net = aggregate(
            &[counts("A", &[("r1", 2), ("r2", 1)]), counts("B", &[("r1", 1), ("r2", 1)])],
            Level::Neighborhood,
            Platform::Gp,
        );
        assert_eq!(net.weight("r1", "r2"), 2);
        assert_eq!(net.weight("r2", "r1"), 2);
        assert_eq!(net.weight("r1", "r1"), 1);
        assert_eq!(net.weight("r2", "r2"), 0);
        assert_eq!(
            net_stats(&net),
            NetStats { nodes: 2, edges: 1, self_loops: 1, total_weight: 3 }
        );
    }

    #[test]
    fn single_review_single_node() {
        let net = aggregate(&[counts("A", &[("r1", 1)])], Level::Zip, Platform::Fs);
        assert_eq!(net.nodes.len(), 1);
        assert!(net.edges.is_empty() && net.self_loops.is_empty());
        assert_eq!(net_stats(&INet::empty(Level::Zip, Platform::Fs)), NetStats::default());
    }

    #[test]
    fn region_cap_skips_pairs() {
        let many: Vec<(String, u32)> = (0..5).map(|i| (format!("r{i}"), 2)).collect();
        let refs: Vec<(&str, u32)> = many.iter().map(|(r, c)| (r.as_str(), *c)).collect();
        let net = aggregate_with(&[counts("A", &refs)], Level::Zip, Platform::Gp, AggregateOptions { max_regions_per_user: 4 });
        assert!(net.edges.is_empty());
        assert_eq!(net.self_loops.len(), 5);
    }

    fn weighted(edges: &[(&str, &str, u32)]) -> INet {
        let mut net = INet::empty(Level::Neighborhood, Platform::Gp);
        for (a, b, w) in edges {
            net.set_weight(a, b, *w);
        }
        net
    }

    #[test]
    fn filter_keeps_ceiling_share() {
        let net = weighted(&[("a", "b", 5), ("c", "d", 4), ("e", "f", 3), ("g", "h", 2)]);
        let f = filter_top_edges(&net, 0.75).unwrap();
        let kept: Vec<u32> = f.edges.values().copied().collect();
        assert_eq!(f.edges.len(), 3);
        assert!(!kept.contains(&2));
        assert_eq!(f.nodes, net.nodes);
        assert_eq!(filter_top_edges(&net, 1.0).unwrap(), net);
        let single = weighted(&[("a", "b", 1)]);
        assert_eq!(filter_top_edges(&single, 0.75).unwrap().edges.len(), 1);
        assert!(filter_top_edges(&net, 0.0).is_err());
        assert!(filter_top_edges(&net, 1.5).is_err());
    }

    #[test]
    fn filter_tie_prefers_smaller_ids() {
        // four edges -> keep 3; the last slot is contested by two weight-3 edges
        let net = weighted(&[("x", "y", 9), ("p", "q", 8), ("a", "c", 3), ("a", "b", 3)]);
        let f = filter_top_edges(&net, 0.75).unwrap();
        assert!(f.edges.contains_key(&("a".to_string(), "b".to_string())));
        assert!(!f.edges.contains_key(&("a".to_string(), "c".to_string())));
    }

    #[test]
    fn self_loops_survive_filter() {
        let net = weighted(&[("a", "a", 7), ("a", "b", 1), ("b", "c", 2)]);
        let f = filter_top_edges(&net, 0.5).unwrap();
        assert_eq!(f.weight("a", "a"), 7);
        assert_eq!(f.edges.len(), 1);
    }

    #[test]
    fn csv_round_trip_keeps_isolated_nodes() {
        let mut net = weighted(&[("a", "b", 2), ("b", "b", 3), ("x,y", "a", 1)]);
        net.nodes.insert("lonely".into());
        let text = to_edge_csv(&net);
        assert!(text.starts_with("src,dst,weight\n"));
        assert!(text.contains("b,b,3"));
        let back = from_edge_csv(&text, &sidecar(&net)).unwrap();
        assert_eq!(back, net);
        let json = serde_json::to_string(&net).unwrap();
        assert_eq!(serde_json::from_str::<INet>(&json).unwrap(), net);
    }
}
