use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RecsysError, UserInterestProfile};
use crate::ingest::Region;
use crate::metrics::{factor_metric, Factor};

/// Raw candidate attributes that may be appended to the pairwise features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawAttribute {
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub factors: Vec<Factor>,
    pub raw: Vec<RawAttribute>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { factors: Factor::ALL.to_vec(), raw: vec![RawAttribute::Population] }
    }
}

impl FeatureConfig {
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .factors
            .iter()
            .flat_map(|f| [format!("{f}_mean_to_top"), format!("{f}_mean_to_bottom")])
            .collect();
        names.extend(self.raw.iter().map(|r| match r {
            RawAttribute::Population => "population_raw".to_string(),
        }));
        names
    }
}

/// Features of one (user, candidate region) pair. `None` marks a feature
/// that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub user_id: String,
    pub region_id: String,
    pub values: Vec<Option<f64>>,
    pub label: bool,
}

impl FeatureVector {
    pub fn complete(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }
}

fn mean_metric(factor: Factor, candidate: &Region, refs: &[&Region]) -> Option<f64> {
    if refs.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for r in refs {
        sum += factor_metric(factor.into(), candidate, r).ok()?;
    }
    Some(sum / refs.len() as f64)
}

/// Mean factor values from `candidate` to the profile's top and bottom
/// sets, each excluding the candidate itself.
pub fn assemble_features(
    profile: &UserInterestProfile,
    candidate: &str,
    regions: &BTreeMap<String, Region>,
    config: &FeatureConfig,
) -> Result<FeatureVector, RecsysError> {
    let cand = regions.get(candidate).ok_or_else(|| RecsysError::UnknownRegion(candidate.to_string()))?;
    let refs = |set: &[String]| -> Vec<&Region> {
        set.iter().filter(|r| r.as_str() != candidate).filter_map(|r| regions.get(r)).collect()
    };
    let (top, bottom) = (refs(&profile.top_set), refs(&profile.bottom_set));
    let mut values = Vec::with_capacity(config.factors.len() * 2 + config.raw.len());
    for f in &config.factors {
        values.push(mean_metric(*f, cand, &top));
        values.push(mean_metric(*f, cand, &bottom));
    }
    for raw in &config.raw {
        values.push(match raw {
            RawAttribute::Population => cand.context.as_ref().and_then(|c| c.population),
        });
    }
    Ok(FeatureVector {
        user_id: profile.user_id.clone(),
        region_id: candidate.to_string(),
        values,
        label: profile.is_top(candidate),
    })
}

/// Complete training rows plus provenance of every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub users: Vec<String>,
    pub regions: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub users: usize,
    pub ineligible_users: usize,
    pub rows: usize,
    /// Rows dropped because a feature was unavailable.
    pub excluded_rows: usize,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>) -> Self {
        Self { feature_names, rows: Vec::new(), labels: Vec::new(), users: Vec::new(), regions: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    pub fn push(&mut self, fv: &FeatureVector, row: Vec<f64>) {
        self.rows.push(row);
        self.labels.push(fv.label);
        self.users.push(fv.user_id.clone());
        self.regions.push(fv.region_id.clone());
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            users: idx.iter().map(|&i| self.users[i].clone()).collect(),
            regions: idx.iter().map(|&i| self.regions[i].clone()).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("user_id,region_id,label");
        for n in &self.feature_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{},{},{}", self.users[i], self.regions[i], u8::from(self.labels[i]));
            for v in &self.rows[i] {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parse a feature table. Rows with empty feature cells are skipped and
    /// counted.
    pub fn from_csv(text: &str) -> Result<(Dataset, usize), RecsysError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| RecsysError::Format(e.to_string()))?.clone();
        if headers.len() < 4 || &headers[0] != "user_id" || &headers[1] != "region_id" || &headers[2] != "label" {
            return Err(RecsysError::Format("expected columns user_id,region_id,label,<features>".into()));
        }
        let names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
        let mut ds = Dataset::new(names);
        let mut skipped = 0;
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| RecsysError::Format(e.to_string()))?;
            let label = match rec.get(2).map(str::trim) {
                Some("1") | Some("true") => true,
                Some("0") | Some("false") => false,
                other => return Err(RecsysError::Format(format!("row {}: bad label {other:?}", line + 2))),
            };
            let values: Option<Vec<f64>> =
                rec.iter().skip(3).map(|c| c.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect();
            match values {
                Some(row) if row.len() == ds.feature_names.len() => {
                    ds.rows.push(row);
                    ds.labels.push(label);
                    ds.users.push(rec[0].to_string());
                    ds.regions.push(rec[1].to_string());
                }
                _ => skipped += 1,
            }
        }
        Ok((ds, skipped))
    }
}

/// Feature rows for every visited region of every eligible user.
pub fn build_dataset(
    profiles: &[UserInterestProfile],
    regions: &BTreeMap<String, Region>,
    config: &FeatureConfig,
) -> (Dataset, DatasetReport) {
    let per_user: Vec<Vec<FeatureVector>> = profiles
        .par_iter()
        .filter(|p| p.eligible)
        .map(|p| {
            p.ranked_regions.iter().filter_map(|(r, _)| assemble_features(p, r, regions, config).ok()).collect()
        })
        .collect();
    let mut ds = Dataset::new(config.names());
    let mut report = DatasetReport { users: profiles.len(), ..Default::default() };
    report.ineligible_users = profiles.iter().filter(|p| !p.eligible).count();
    for fv in per_user.iter().flatten() {
        match fv.complete() {
            Some(row) => ds.push(fv, row),
            None => report.excluded_rows += 1,
        }
    }
    report.rows = ds.len();
    (ds, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Point;
    use crate::ingest::{ContextProfile, Level};
    use crate::recsys::profile_from_ranked;

    fn regions() -> BTreeMap<String, Region> {
        let at = |id: &str, x: f64, y: f64| Region {
            region_id: id.into(),
            level: Level::City,
            boundary: None,
            centroid: Point::new(x, y),
            context: Some(ContextProfile { population: Some(x + 1.0), ..Default::default() }),
        };
        [at("a", 0.0, 0.0), at("b", 3.0, 4.0), at("c", 0.0, 10.0), at("d", 6.0, 8.0), at("e", 100.0, 0.0)]
            .into_iter()
            .map(|r| (r.region_id.clone(), r))
            .collect()
    }

    fn profile() -> UserInterestProfile {
        let ranked = ["a", "b", "c", "d", "e"].iter().zip([9, 7, 5, 2, 1]).map(|(r, c)| (r.to_string(), c)).collect();
        profile_from_ranked("u", ranked, 3)
    }

    #[test]
    fn means_exclude_candidate() {
        let config = FeatureConfig { factors: vec![Factor::Geographic], raw: vec![RawAttribute::Population] };
        let fv = assemble_features(&profile(), "a", &regions(), &config).unwrap();
        // top without a: b (5), c (10); bottom: d (10), e (100)
        assert_eq!(fv.values, vec![Some(7.5), Some(55.0), Some(1.0)]);
        assert!(fv.label);
        let fv = assemble_features(&profile(), "d", &regions(), &config).unwrap();
        assert_eq!(fv.values[1], Some(94.0f64.hypot(8.0)));
        assert!(!fv.label);
    }

    #[test]
    fn missing_factor_is_absent() {
        let config = FeatureConfig { factors: vec![Factor::Income], raw: vec![] };
        let fv = assemble_features(&profile(), "a", &regions(), &config).unwrap();
        assert_eq!(fv.values, vec![None, None]);
        let (ds, report) = build_dataset(&[profile()], &regions(), &config);
        assert!(ds.is_empty());
        assert_eq!(report.excluded_rows, 5);
    }

    #[test]
    fn csv_round_trip() {
        let config = FeatureConfig { factors: vec![Factor::Geographic], raw: vec![] };
        let (ds, _) = build_dataset(&[profile()], &regions(), &config);
        let (back, skipped) = Dataset::from_csv(&ds.to_csv()).unwrap();
        assert_eq!((back, skipped), (ds, 0));
        assert_eq!(config.names(), vec!["geographic_mean_to_top", "geographic_mean_to_bottom"]);
    }
}
