use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{RecsysError, UserInterestProfile};
use crate::geo::Point;
use crate::ingest::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityClass {
    Returner,
    Explorer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilitySummary {
    pub user_id: String,
    pub r_g_all: f64,
    pub r_g_topk: f64,
    pub class: MobilityClass,
    /// All visits share one location, so the class is returner by convention.
    pub degenerate: bool,
}

/// Weighted root-mean-square distance from the weighted centroid.
pub fn radius_of_gyration(points: &[(Point, f64)]) -> Result<f64, RecsysError> {
    let total: f64 = points.iter().map(|p| p.1).sum();
    if points.is_empty() || total <= 0.0 {
        return Err(RecsysError::EmptyInput("radius of gyration needs positive total weight".into()));
    }
    let cx = points.iter().map(|(p, w)| p.x * w).sum::<f64>() / total;
    let cy = points.iter().map(|(p, w)| p.y * w).sum::<f64>() / total;
    let c = Point::new(cx, cy);
    let ss: f64 = points.iter().map(|(p, w)| w * p.distance(&c).powi(2)).sum();
    Ok((ss / total).sqrt())
}

/// Returner iff the top-k radius of gyration exceeds half the overall one.
/// Points are region centroids weighted by review counts.
pub fn classify_mobility(
    profile: &UserInterestProfile,
    regions: &BTreeMap<String, Region>,
) -> Result<MobilitySummary, RecsysError> {
    let point = |id: &str, count: u32| -> Result<(Point, f64), RecsysError> {
        let r = regions.get(id).ok_or_else(|| RecsysError::UnknownRegion(id.to_string()))?;
        Ok((r.centroid, count as f64))
    };
    let all: Vec<(Point, f64)> =
        profile.ranked_regions.iter().map(|(id, c)| point(id, *c)).collect::<Result<_, _>>()?;
    let top: Vec<(Point, f64)> = all.iter().take(profile.k.min(all.len())).copied().collect();
    let r_g_all = radius_of_gyration(&all)?;
    let r_g_topk = radius_of_gyration(&top)?;
    let degenerate = r_g_all == 0.0;
    let class = if degenerate || r_g_topk > r_g_all / 2.0 { MobilityClass::Returner } else { MobilityClass::Explorer };
    Ok(MobilitySummary { user_id: profile.user_id.clone(), r_g_all, r_g_topk, class, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Level;
    use crate::recsys::profile_from_ranked;

    #[test]
    fn closed_forms() {
        let p = |x: f64, w: f64| (Point::new(x, 0.0), w);
        assert_eq!(radius_of_gyration(&[p(5.0, 1.0), p(5.0, 3.0)]).unwrap(), 0.0);
        assert!((radius_of_gyration(&[p(0.0, 1.0), p(8.0, 1.0)]).unwrap() - 4.0).abs() < 1e-12);
        let d = 8.0;
        assert!((radius_of_gyration(&[p(0.0, 3.0), p(d, 1.0)]).unwrap() - 3f64.sqrt() * d / 4.0).abs() < 1e-12);
        assert!(radius_of_gyration(&[]).is_err());
    }

    fn regions(xs: &[f64]) -> BTreeMap<String, Region> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                let id = format!("r{i}");
                (id.clone(), Region { region_id: id, level: Level::City, boundary: None, centroid: Point::new(*x, 0.0), context: None })
            })
            .collect()
    }

    #[test]
    fn classes() {
        let ranked = |counts: &[u32]| counts.iter().enumerate().map(|(i, c)| (format!("r{i}"), *c)).collect::<Vec<_>>();
        // top 2 collocated, rest far away
        let p = profile_from_ranked("u", ranked(&[5, 4, 1, 1]), 2);
        let s = classify_mobility(&p, &regions(&[0.0, 0.0, 1000.0, -1000.0])).unwrap();
        assert_eq!(s.class, MobilityClass::Explorer);
        // top set is everything
        let p = profile_from_ranked("u", ranked(&[5, 4]), 2);
        assert_eq!(classify_mobility(&p, &regions(&[0.0, 10.0])).unwrap().class, MobilityClass::Returner);
        let s = classify_mobility(&p, &regions(&[3.0, 3.0])).unwrap();
        assert!(s.degenerate && s.class == MobilityClass::Returner);
    }
}
