use std::collections::{BTreeMap, HashMap};

use super::MetricError;
use crate::inet::INet;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Node ids of the largest connected component; ties go to the component
/// holding the smallest node id.
pub fn largest_component(net: &INet) -> Vec<String> {
    let ids: Vec<&String> = net.nodes.iter().collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (a, b) in net.edges.keys() {
        let (ra, rb) = (find(&mut parent, index[a.as_str()]), find(&mut parent, index[b.as_str()]));
        if ra != rb {
            // keep the smaller index as root so roots order like their first member
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ids.len() {
        let r = find(&mut parent, i);
        members.entry(r).or_default().push(i);
    }
    let best = members
        .values()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .cloned()
        .unwrap_or_default();
    best.into_iter().map(|i| ids[i].clone()).collect()
}

/// Eigenvector centrality of the weighted adjacency (self-loops on the
/// diagonal), computed on the largest connected component. Scores are
/// L2-normalized and non-negative; nodes outside the component score 0.
///
/// Uses power iteration on `A + I`, which shares eigenvectors with `A` and
/// converges on bipartite components too.
pub fn eigenvector_centrality(net: &INet, tol: f64, max_iter: usize) -> Result<BTreeMap<String, f64>, MetricError> {
    if net.nodes.is_empty() {
        return Err(MetricError::EmptyNetwork);
    }
    let comp = largest_component(net);
    let index: HashMap<&str, usize> = comp.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let n = comp.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for ((a, b), w) in &net.edges {
        if let (Some(&i), Some(&j)) = (index.get(a.as_str()), index.get(b.as_str())) {
            adj[i].push((j, *w as f64));
            adj[j].push((i, *w as f64));
        }
    }
    for (a, w) in &net.self_loops {
        if let Some(&i) = index.get(a.as_str()) {
            adj[i].push((i, *w as f64));
        }
    }

    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        let mut next = x.clone();
        for (i, row) in adj.iter().enumerate() {
            for &(j, w) in row {
                next[i] += w * x[j];
            }
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut next {
            *v /= norm;
        }
        residual = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if residual < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MetricError::NoConvergence { iterations: max_iter, residual });
    }
    let mut scores: BTreeMap<String, f64> = net.nodes.iter().map(|n| (n.clone(), 0.0)).collect();
    for (i, id) in comp.iter().enumerate() {
        scores.insert(id.clone(), x[i].max(0.0));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Level, Platform};

    fn net(edges: &[(&str, &str, u32)]) -> INet {
        let mut n = INet::empty(Level::Neighborhood, Platform::Gp);
        for (a, b, w) in edges {
            n.set_weight(a, b, *w);
        }
        n
    }

    #[test]
    fn complete_graph_uniform() {
        let k4 = net(&[("a", "b", 1), ("a", "c", 1), ("a", "d", 1), ("b", "c", 1), ("b", "d", 1), ("c", "d", 1)]);
        let s = eigenvector_centrality(&k4, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(s.values().all(|v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn star_center_dominates() {
        let star = net(&[("c", "x", 1), ("c", "y", 1), ("c", "z", 1)]);
        let s = eigenvector_centrality(&star, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(["x", "y", "z"].iter().all(|l| s["c"] > s[*l]));
    }

    #[test]
    fn path_closed_form() {
        let p = net(&[("a", "b", 1), ("b", "c", 1)]);
        let s = eigenvector_centrality(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((s["a"] - 0.5).abs() < 1e-9);
        assert!((s["b"] - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((s["c"] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn outside_largest_component_scores_zero() {
        let g = net(&[("a", "b", 1), ("b", "c", 1), ("x", "y", 5)]);
        let s = eigenvector_centrality(&g, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s["x"], 0.0);
        assert_eq!(s["y"], 0.0);
        assert!(s["b"] > 0.0);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let p = net(&[("a", "b", 1), ("b", "c", 1)]);
        match eigenvector_centrality(&p, 1e-300, 3) {
            Err(MetricError::NoConvergence { iterations: 3, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            eigenvector_centrality(&INet::empty(Level::Zip, Platform::Gp), DEFAULT_TOL, 10),
            Err(MetricError::EmptyNetwork)
        );
    }
}
