//! Leiden community detection with modularity as quality function.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UpzoneError;
use crate::inet::INet;
use crate::ingest::Level;

/// Randomness of the refinement phase.
const THETA: f64 = 0.01;
/// A full pass must gain at least this much quality to continue.
const CONVERGENCE_TOL: f64 = 1e-10;
const MAX_PASSES: usize = 100;
/// Independent starts per call; the best partition wins.
const RESTARTS: u64 = 10;

/// Undirected weighted graph on dense node indices. Self-loops are kept
/// apart from the adjacency lists.
#[derive(Debug, Clone)]
pub(crate) struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
    strength: Vec<f64>,
    /// Total edge weight, each edge and self-loop counted once.
    total: f64,
}

impl Graph {
    pub(crate) fn from_inet(net: &INet) -> (Graph, Vec<String>) {
        let ids: Vec<String> = net.nodes.iter().cloned().collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let n = ids.len();
        let mut adj = vec![Vec::new(); n];
        let mut loops = vec![0.0; n];
        for ((a, b), w) in &net.edges {
            let (i, j) = (index[a.as_str()], index[b.as_str()]);
            adj[i].push((j, *w as f64));
            adj[j].push((i, *w as f64));
        }
        for (a, w) in &net.self_loops {
            loops[index[a.as_str()]] = *w as f64;
        }
        (Graph::new(adj, loops), ids)
    }

    fn new(adj: Vec<Vec<(usize, f64)>>, loops: Vec<f64>) -> Graph {
        let strength: Vec<f64> =
            adj.iter().zip(&loops).map(|(row, l)| row.iter().map(|e| e.1).sum::<f64>() + 2.0 * l).collect();
        let total = strength.iter().sum::<f64>() / 2.0;
        Graph { adj, loops, strength, total }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Collapse each community of `membership` (ids `0..count`) to one node.
    fn aggregate(&self, membership: &[usize], count: usize) -> Graph {
        let mut loops = vec![0.0; count];
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); count];
        for (v, row) in self.adj.iter().enumerate() {
            let cv = membership[v];
            loops[cv] += self.loops[v];
            for &(u, w) in row {
                let cu = membership[u];
                if cu == cv {
                    // each internal edge is seen from both ends
                    loops[cv] += w / 2.0;
                } else {
                    *rows[cv].entry(cu).or_insert(0.0) += w;
                }
            }
        }
        Graph::new(rows.into_iter().map(|r| r.into_iter().collect()).collect(), loops)
    }

    /// Modularity of `membership` with resolution `gamma`.
    pub(crate) fn quality(&self, membership: &[usize], gamma: f64) -> f64 {
        if self.total == 0.0 {
            return 0.0;
        }
        let count = membership.iter().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; count];
        let mut degree = vec![0.0; count];
        for (v, row) in self.adj.iter().enumerate() {
            let c = membership[v];
            degree[c] += self.strength[v];
            internal[c] += self.loops[v];
            for &(u, w) in row {
                if membership[u] == c && u > v {
                    internal[c] += w;
                }
            }
        }
        let m = self.total;
        internal.iter().zip(&degree).map(|(l, d)| l / m - gamma * (d / (2.0 * m)).powi(2)).sum()
    }
}

/// Renumber communities by first appearance in node order; returns the count.
fn renumber(membership: &mut [usize]) -> usize {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    for c in membership.iter_mut() {
        let next = map.len();
        *c = *map.entry(*c).or_insert(next);
    }
    map.len()
}

fn move_nodes_fast(g: &Graph, membership: &mut [usize], gamma: f64, rng: &mut ChaCha8Rng) {
    let n = g.len();
    let two_m = 2.0 * g.total;
    let eps = 1e-12 * (1.0 + g.total);
    let mut comm_strength = vec![0.0; n];
    let mut comm_size = vec![0usize; n];
    for v in 0..n {
        comm_strength[membership[v]] += g.strength[v];
        comm_size[membership[v]] += 1;
    }
    let mut empty: BTreeSet<usize> = (0..n).filter(|c| comm_size[*c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into();
    let mut queued = vec![true; n];
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let current = membership[v];
        for &(u, w) in &g.adj[v] {
            let c = membership[u];
            if link[c] == 0.0 && !touched.contains(&c) {
                touched.push(c);
            }
            link[c] += w;
        }
        comm_strength[current] -= g.strength[v];
        comm_size[current] -= 1;
        if comm_size[current] == 0 {
            empty.insert(current);
        }
        let kv = g.strength[v];
        let gain = |c: usize, link: &[f64]| link[c] - gamma * kv * comm_strength[c] / two_m;

        let mut best = current;
        let mut best_gain = gain(current, &link);
        let mut candidates = touched.clone();
        if let Some(&e) = empty.iter().next() {
            candidates.push(e);
        }
        candidates.sort_unstable();
        candidates.dedup();
        for c in candidates {
            let gc = gain(c, &link);
            if gc > best_gain + eps {
                best = c;
                best_gain = gc;
            }
        }

        comm_strength[best] += kv;
        comm_size[best] += 1;
        empty.remove(&best);
        membership[v] = best;
        if best != current {
            for &(u, _) in &g.adj[v] {
                if !queued[u] && membership[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
        for c in touched.drain(..) {
            link[c] = 0.0;
        }
    }
}

/// Split each community into well-connected sub-communities.
fn refine(g: &Graph, partition: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.len();
    let two_m = 2.0 * g.total;
    let count = partition.iter().max().map_or(0, |m| m + 1);
    let mut part_strength = vec![0.0; count];
    for v in 0..n {
        part_strength[partition[v]] += g.strength[v];
    }
    // weight from each node to the rest of its community
    let ext: Vec<f64> =
        (0..n).map(|v| g.adj[v].iter().filter(|(u, _)| partition[*u] == partition[v]).map(|e| e.1).sum()).collect();

    let mut refined: Vec<usize> = (0..n).collect();
    let mut strength = g.strength.clone();
    let mut outside = ext.clone();
    let mut singleton = vec![true; n];
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for v in order {
        let own = refined[v];
        if !singleton[own] {
            continue;
        }
        let c = partition[v];
        let kv = g.strength[v];
        let total_c = part_strength[c];
        if ext[v] < gamma * kv * (total_c - kv) / two_m {
            continue;
        }
        for &(u, w) in &g.adj[v] {
            if partition[u] == c {
                let t = refined[u];
                if link[t] == 0.0 && !touched.contains(&t) {
                    touched.push(t);
                }
                link[t] += w;
            }
        }
        touched.sort_unstable();
        let mut options: Vec<(usize, f64)> = vec![(own, 0.0)];
        for &t in &touched {
            if t == own || outside[t] < gamma * strength[t] * (total_c - strength[t]) / two_m {
                continue;
            }
            let gain = link[t] - gamma * kv * strength[t] / two_m;
            if gain >= 0.0 {
                options.push((t, gain));
            }
        }
        let top = options.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = options.iter().map(|o| ((o.1 - top) / THETA).exp()).collect();
        let mut pick = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut chosen = options[options.len() - 1].0;
        for (o, w) in options.iter().zip(&weights) {
            if pick < *w {
                chosen = o.0;
                break;
            }
            pick -= w;
        }
        if chosen != own {
            refined[v] = chosen;
            outside[chosen] += ext[v] - 2.0 * link[chosen];
            strength[chosen] += kv;
            strength[own] = 0.0;
            singleton[chosen] = false;
        }
        for t in touched.drain(..) {
            link[t] = 0.0;
        }
    }
    refined
}

/// One Leiden run from an initial partition of `g`. Records the quality of
/// the working partition after every local-moving phase.
fn leiden_pass(g0: &Graph, initial: Vec<usize>, gamma: f64, rng: &mut ChaCha8Rng, trace: &mut Vec<f64>) -> Vec<usize> {
    let mut g = g0.clone();
    let mut part = initial;
    let mut node_map: Vec<usize> = (0..g0.len()).collect();
    loop {
        move_nodes_fast(&g, &mut part, gamma, rng);
        let count = renumber(&mut part);
        trace.push(g.quality(&part, gamma));
        if count == g.len() {
            break;
        }
        let mut refined = refine(&g, &part, gamma, rng);
        let mut refined_count = renumber(&mut refined);
        if refined_count == g.len() {
            // refinement merged nothing; aggregate by the partition itself
            refined = part.clone();
            refined_count = count;
        }
        let mut next_part = vec![0; refined_count];
        for v in 0..g.len() {
            next_part[refined[v]] = part[v];
        }
        for m in node_map.iter_mut() {
            *m = refined[*m];
        }
        g = g.aggregate(&refined, refined_count);
        part = next_part;
    }
    let mut flat: Vec<usize> = node_map.iter().map(|&m| part[m]).collect();
    renumber(&mut flat);
    flat
}

/// Membership over dense node indices plus the quality trace of the
/// winning start. Earlier starts win ties.
pub(crate) fn leiden_membership(g: &Graph, gamma: f64, seed: u64) -> (Vec<usize>, Vec<f64>) {
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for start in 0..RESTARTS {
        let (membership, trace) = single_start(g, gamma, seed, start);
        let q = g.quality(&membership, gamma);
        if best.as_ref().is_none_or(|b| q > b.0 + CONVERGENCE_TOL) {
            best = Some((q, membership, trace));
        }
    }
    let (_, membership, trace) = best.expect("at least one start");
    (membership, trace)
}

fn single_start(g: &Graph, gamma: f64, seed: u64, stream: u64) -> (Vec<usize>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut trace = Vec::new();
    let mut membership = leiden_pass(g, (0..g.len()).collect(), gamma, &mut rng, &mut trace);
    let mut quality = g.quality(&membership, gamma);
    for _ in 1..MAX_PASSES {
        let next = leiden_pass(g, membership.clone(), gamma, &mut rng, &mut trace);
        let next_quality = g.quality(&next, gamma);
        if next_quality >= quality {
            membership = next;
        }
        if next_quality - quality < CONVERGENCE_TOL {
            break;
        }
        quality = next_quality;
    }
    (membership, trace)
}

/// Urban Preference Zones: a partition of the net's nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpZoneSet {
    pub level: Level,
    /// Node id to zone id; zones are numbered by first appearance in node order.
    pub zones: BTreeMap<String, usize>,
    pub zone_count: usize,
    pub modularity: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Quality after each local-moving phase.
    pub quality_trace: Vec<f64>,
}

impl UpZoneSet {
    pub fn members(&self) -> BTreeMap<usize, Vec<&str>> {
        let mut out: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (cell, z) in &self.zones {
            out.entry(*z).or_default().push(cell);
        }
        out
    }
}

pub fn leiden(net: &INet, gamma: f64, seed: u64) -> Result<UpZoneSet, UpzoneError> {
    if net.nodes.is_empty() {
        return Err(UpzoneError::EmptyNetwork);
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(UpzoneError::BadGamma(gamma));
    }
    let (g, ids) = Graph::from_inet(net);
    let (membership, quality_trace) = leiden_membership(&g, gamma, seed);
    let modularity = g.quality(&membership, gamma);
    let zone_count = membership.iter().max().map_or(0, |m| m + 1);
    Ok(UpZoneSet {
        level: net.level,
        zones: ids.into_iter().zip(membership).collect(),
        zone_count,
        modularity,
        gamma,
        seed,
        quality_trace,
    })
}

/// Weighted modularity of a labelled partition. Self-loops count once in
/// the total weight and in the internal weight, twice in node strength.
pub fn modularity<Z: Ord + Clone>(net: &INet, partition: &BTreeMap<String, Z>, gamma: f64) -> Result<f64, UpzoneError> {
    let (g, ids) = Graph::from_inet(net);
    let mut labels: BTreeMap<&Z, usize> = BTreeMap::new();
    let mut membership = Vec::with_capacity(ids.len());
    for id in &ids {
        let z = partition.get(id).ok_or_else(|| UpzoneError::MissingNode(id.clone()))?;
        let next = labels.len();
        membership.push(*labels.entry(z).or_insert(next));
    }
    Ok(g.quality(&membership, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Platform;

    fn net(edges: &[(usize, usize, u32)]) -> INet {
        let mut n = INet::empty(Level::Hex(crate::hexgrid::Resolution::H9), Platform::Gp);
        for (a, b, w) in edges {
            n.set_weight(&format!("n{a:02}"), &format!("n{b:02}"), *w);
        }
        n
    }

    fn clique(offset: usize, k: usize) -> Vec<(usize, usize, u32)> {
        let mut e = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                e.push((offset + i, offset + j, 1));
            }
        }
        e
    }

    #[test]
    fn triangle_singletons() {
        let g = net(&clique(0, 3));
        let singletons: BTreeMap<String, usize> = g.nodes.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        assert!((modularity(&g, &singletons, 1.0).unwrap() + 1.0 / 3.0).abs() < 1e-12);
        let one: BTreeMap<String, usize> = g.nodes.iter().map(|n| (n.clone(), 0)).collect();
        assert!(modularity(&g, &one, 1.0).unwrap().abs() < 1e-12);
        let mut missing = one.clone();
        missing.remove("n00");
        assert_eq!(modularity(&g, &missing, 1.0), Err(UpzoneError::MissingNode("n00".into())));
    }

    #[test]
    fn self_loop_convention() {
        // a self-loop alone: m = 1, L = 1, d = 2 -> Q = 1 - 1 = 0
        let g = net(&[(0, 0, 1)]);
        let p: BTreeMap<String, usize> = [("n00".to_string(), 0)].into();
        assert!(modularity(&g, &p, 1.0).unwrap().abs() < 1e-12);
        // two nodes, loops on each, no edge: each community holds half the weight
        let g = net(&[(0, 0, 1), (1, 1, 1)]);
        let p: BTreeMap<String, usize> = [("n00".to_string(), 0), ("n01".to_string(), 1)].into();
        assert!((modularity(&g, &p, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_cliques() {
        let mut e = clique(0, 5);
        e.extend(clique(5, 5));
        e.push((4, 5, 1));
        let z = leiden(&net(&e), 1.0, 7).unwrap();
        assert_eq!(z.zone_count, 2);
        for i in 0..10 {
            assert_eq!(z.zones[&format!("n{i:02}")], usize::from(i >= 5));
        }
    }

    #[test]
    fn complete_graph_one_zone() {
        let z = leiden(&net(&clique(0, 5)), 1.0, 1).unwrap();
        assert_eq!(z.zone_count, 1);
    }

    #[test]
    fn trace_monotone_and_seed_fixed() {
        let mut e = clique(0, 4);
        e.extend(clique(4, 4));
        e.extend(clique(8, 4));
        e.extend([(0, 4, 1), (5, 9, 1), (1, 10, 2), (3, 3, 2)]);
        let g = net(&e);
        let a = leiden(&g, 1.0, 3).unwrap();
        assert!(a.quality_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert_eq!(a, leiden(&g, 1.0, 3).unwrap());
        assert!((modularity(&g, &a.zones, 1.0).unwrap() - a.modularity).abs() < 1e-9);
    }

    #[test]
    fn edge_cases() {
        let single = net(&[(0, 0, 2)]);
        assert_eq!(leiden(&single, 1.0, 0).unwrap().zone_count, 1);
        let empty = INet::empty(Level::Zip, Platform::Fs);
        assert_eq!(leiden(&empty, 1.0, 0), Err(UpzoneError::EmptyNetwork));
        assert!(matches!(leiden(&single, 0.0, 0), Err(UpzoneError::BadGamma(_))));
    }
}
