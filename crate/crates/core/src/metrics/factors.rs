use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{spearman, MetricError};
use crate::inet::INet;
use crate::ingest::{ContextProfile, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Geographic,
    Population,
    Income,
    Education,
    Employment,
    Vote,
    Race,
    Scenes,
    VenueCategories,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Distance,
    Similarity,
}

impl Factor {
    pub const ALL: [Factor; 9] = [
        Factor::Population,
        Factor::Income,
        Factor::Scenes,
        Factor::Vote,
        Factor::VenueCategories,
        Factor::Race,
        Factor::Education,
        Factor::Employment,
        Factor::Geographic,
    ];

    pub fn kind(self) -> FactorKind {
        match self {
            Factor::VenueCategories => FactorKind::Similarity,
            _ => FactorKind::Distance,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Factor::Geographic => "geographic",
            Factor::Population => "population",
            Factor::Income => "income",
            Factor::Education => "education",
            Factor::Employment => "employment",
            Factor::Vote => "vote",
            Factor::Race => "race",
            Factor::Scenes => "scenes",
            Factor::VenueCategories => "venue_categories",
        }
    }

    /// Row label used in the factor correlation table.
    pub fn label(self) -> &'static str {
        match self {
            Factor::Geographic => "Geographic Distance",
            Factor::Population => "Population",
            Factor::Income => "Income Differences",
            Factor::Education => "Education Levels",
            Factor::Employment => "Employment Differences",
            Factor::Vote => "Political Polarization",
            Factor::Race => "Racial Composition",
            Factor::Scenes => "Cultural Affinity",
            Factor::VenueCategories => "Venues Similarity",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Factor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Factor::ALL
            .into_iter()
            .find(|f| f.name() == s || (s == "venues" && *f == Factor::VenueCategories))
            .ok_or_else(|| format!("unknown factor `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorMetricSpec {
    pub factor: Factor,
    pub kind: FactorKind,
}

impl From<Factor> for FactorMetricSpec {
    fn from(factor: Factor) -> Self {
        Self { factor, kind: factor.kind() }
    }
}

fn scalar(factor: Factor, ctx: &ContextProfile) -> Option<f64> {
    match factor {
        Factor::Population => ctx.population,
        Factor::Income => ctx.income,
        Factor::Education => ctx.education.or(ctx.literacy),
        Factor::Employment => ctx.employment,
        Factor::Vote => ctx.vote_share,
        _ => None,
    }
}

fn race_shares(ctx: &ContextProfile) -> Option<BTreeMap<&str, f64>> {
    // P(r) is the region population; fall back to the category total
    let total = ctx.population.filter(|p| *p > 0.0).unwrap_or_else(|| ctx.race_counts.values().sum());
    if ctx.race_counts.is_empty() || total <= 0.0 {
        return None;
    }
    Some(ctx.race_counts.iter().map(|(k, v)| (k.as_str(), v / total)).collect())
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Option<f64> {
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().filter_map(|(k, v)| b.get(k).map(|w| v * w)).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Distance (or, for venue categories, similarity) between two regions.
pub fn factor_metric(spec: FactorMetricSpec, r: &Region, s: &Region) -> Result<f64, MetricError> {
    let factor = spec.factor;
    if factor == Factor::Geographic {
        return Ok(r.centroid.distance(&s.centroid));
    }
    let unavailable = |region: &Region| MetricError::Unavailable { factor, region: region.region_id.clone() };
    let cr = r.context.as_ref().ok_or_else(|| unavailable(r))?;
    let cs = s.context.as_ref().ok_or_else(|| unavailable(s))?;
    match factor {
        Factor::Race => {
            let a = race_shares(cr).ok_or_else(|| unavailable(r))?;
            let b = race_shares(cs).ok_or_else(|| unavailable(s))?;
            let keys: std::collections::BTreeSet<&str> = a.keys().chain(b.keys()).copied().collect();
            let l1: f64 = keys
                .into_iter()
                .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
                .sum();
            Ok(0.5 * l1)
        }
        Factor::Scenes => {
            let a = cr.scene_vector.as_ref().ok_or_else(|| unavailable(r))?;
            let b = cs.scene_vector.as_ref().ok_or_else(|| unavailable(s))?;
            if a.len() != b.len() {
                return Err(MetricError::LengthMismatch { left: a.len(), right: b.len() });
            }
            Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        }
        Factor::VenueCategories => {
            if cr.category_freq.is_empty() {
                return Err(unavailable(r));
            }
            if cs.category_freq.is_empty() {
                return Err(unavailable(s));
            }
            cosine(&cr.category_freq, &cs.category_freq).ok_or_else(|| unavailable(r))
        }
        _ => {
            let a = scalar(factor, cr).ok_or_else(|| unavailable(r))?;
            let b = scalar(factor, cs).ok_or_else(|| unavailable(s))?;
            Ok((a - b).abs())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCorrelation {
    pub factor: Factor,
    pub rho: f64,
    pub used_edges: usize,
    pub dropped_edges: usize,
}

/// Spearman correlation between edge weights and the factor value of each
/// edge's endpoints. Self-loops are ignored; edges whose endpoints lack the
/// factor are dropped and counted.
pub fn correlate_edges_with_factor(
    net: &INet,
    regions: &BTreeMap<String, Region>,
    spec: FactorMetricSpec,
) -> Result<FactorCorrelation, MetricError> {
    let mut weights = Vec::new();
    let mut values = Vec::new();
    let mut dropped = 0;
    for ((a, b), w) in &net.edges {
        let value = match (regions.get(a), regions.get(b)) {
            (Some(ra), Some(rb)) => factor_metric(spec, ra, rb).ok(),
            _ => None,
        };
        match value {
            Some(v) => {
                weights.push(*w as f64);
                values.push(v);
            }
            None => dropped += 1,
        }
    }
    if weights.len() < 3 {
        return Err(MetricError::TooFewValues { needed: 3, got: weights.len() });
    }
    let rho = spearman(&weights, &values)?;
    Ok(FactorCorrelation { factor: spec.factor, rho, used_edges: weights.len(), dropped_edges: dropped })
}

/// Render a factor table: one row per factor, one column per network.
/// Missing cells are left empty.
pub fn factor_table_csv(columns: &[(String, Vec<FactorCorrelation>)]) -> String {
    let mut out = String::from("factor");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for factor in Factor::ALL {
        let cells: Vec<Option<f64>> =
            columns.iter().map(|(_, rows)| rows.iter().find(|c| c.factor == factor).map(|c| c.rho)).collect();
        if cells.iter().all(Option::is_none) {
            continue;
        }
        out.push_str(factor.label());
        for c in cells {
            out.push(',');
            if let Some(v) = c {
                out.push_str(&format!("{v:.4}"));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Point;
    use crate::ingest::Level;

    fn region(id: &str, ctx: ContextProfile) -> Region {
        Region { region_id: id.into(), level: Level::Neighborhood, boundary: None, centroid: Point::new(0.0, 0.0), context: Some(ctx) }
    }

    fn races(pairs: &[(&str, f64)]) -> ContextProfile {
        let race_counts: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        ContextProfile { population: Some(race_counts.values().sum()), race_counts, ..Default::default() }
    }

    #[test]
    fn race_examples() {
        let spec = Factor::Race.into();
        let mixed = region("r", races(&[("White", 50.0), ("Black", 50.0)]));
        let white = region("s", races(&[("White", 100.0)]));
        let black = region("t", races(&[("Black", 10.0)]));
        assert!((factor_metric(spec, &mixed, &white).unwrap() - 0.5).abs() < 1e-12);
        assert!((factor_metric(spec, &white, &black).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(factor_metric(spec, &white, &white).unwrap(), 0.0);
    }

    #[test]
    fn venue_cosine() {
        let freq = |v: [f64; 3]| ContextProfile {
            category_freq: ["a", "b", "c"].iter().zip(v).filter(|(_, x)| *x > 0.0).map(|(k, x)| (k.to_string(), x)).collect(),
            ..Default::default()
        };
        let v = factor_metric(Factor::VenueCategories.into(), &region("r", freq([2.0, 1.0, 0.0])), &region("s", freq([1.0, 1.0, 1.0])))
            .unwrap();
        assert!((v - 3.0 / 15f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn missing_context_propagates() {
        let a = region("a", ContextProfile { income: Some(3.0), ..Default::default() });
        let b = region("b", ContextProfile::default());
        assert_eq!(
            factor_metric(Factor::Income.into(), &a, &b),
            Err(MetricError::Unavailable { factor: Factor::Income, region: "b".into() })
        );
        let lit = region("c", ContextProfile { literacy: Some(0.9), ..Default::default() });
        let edu = region("d", ContextProfile { education: Some(0.5), ..Default::default() });
        assert!((factor_metric(Factor::Education.into(), &lit, &edu).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn kinds_and_parsing() {
        for f in Factor::ALL {
            assert_eq!(f.kind() == FactorKind::Similarity, f == Factor::VenueCategories);
            assert_eq!(f.name().parse::<Factor>().unwrap(), f);
        }
    }

    #[test]
    fn inverse_distance_weights() {
        let mut regions = BTreeMap::new();
        let mut net = INet::empty(Level::Neighborhood, crate::ingest::Platform::Gp);
        for i in 0..6 {
            let mut r = region(&format!("n{i}"), ContextProfile::default());
            r.centroid = Point::new(i as f64 * i as f64 * 10.0, 0.0);
            regions.insert(r.region_id.clone(), r);
        }
        for i in 1..6 {
            net.set_weight("n0", &format!("n{i}"), 100 - i);
        }
        net.set_weight("n0", "n0", 7);
        net.set_weight("n0", "ghost", 3);
        let c = correlate_edges_with_factor(&net, &regions, Factor::Geographic.into()).unwrap();
        assert!((c.rho + 1.0).abs() < 1e-12);
        assert_eq!((c.used_edges, c.dropped_edges), (5, 1));
        let csv = factor_table_csv(&[("GP".into(), vec![c])]);
        assert_eq!(csv, "factor,GP\nGeographic Distance,-1.0000\n");
    }
}
