use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    assemble_features, label_user, shapley_attribution, Attribution, FeatureConfig, RecsysError, TreeEnsembleModel,
    UserInterestProfile,
};
use crate::inet::UserRegionCounts;
use crate::ingest::{Level, Region};

/// A trained model together with the feature layout it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelModel {
    pub level: Level,
    pub features: FeatureConfig,
    pub model: TreeEnsembleModel,
}

/// Regions of one level. `parent` maps each region to its enclosing region
/// one level up, when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCatalog {
    pub level: Level,
    pub regions: BTreeMap<String, Region>,
    #[serde(default)]
    pub parent: BTreeMap<String, String>,
}

impl RegionCatalog {
    pub fn new(level: Level, regions: impl IntoIterator<Item = Region>) -> Self {
        Self { level, regions: regions.into_iter().map(|r| (r.region_id.clone(), r)).collect(), parent: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorContribution {
    pub feature: String,
    pub value: f64,
    pub shapley: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub factors: Vec<FactorContribution>,
}

/// Phrases per feature: `(positive contribution, negative contribution)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub phrases: BTreeMap<String, (String, String)>,
    pub neutral: String,
}

impl Default for Templates {
    fn default() -> Self {
        let mut phrases = BTreeMap::new();
        let mut put = |k: &str, pos: &str, neg: &str| {
            phrases.insert(k.to_string(), (pos.to_string(), neg.to_string()));
        };
        put("geographic_mean_to_top", "close to places you love", "far from the places you visit most");
        put("geographic_mean_to_bottom", "away from places you rarely return to", "near places you rarely return to");
        put("venue_categories_mean_to_top", "offers venues like your favourite places", "offers venues unlike your favourite places");
        put("venue_categories_mean_to_bottom", "offers venues unlike places you visit less", "offers venues like places you visit less");
        put("population_raw", "has a population size that suits you", "has a population size you tend to avoid");
        let nouns = [
            ("population", "population"),
            ("income", "income level"),
            ("education", "education level"),
            ("employment", "employment rate"),
            ("vote", "political profile"),
            ("race", "demographic mix"),
            ("scenes", "cultural scene"),
        ];
        for (f, noun) in nouns {
            put(&format!("{f}_mean_to_top"), &format!("its {noun} fits your favourite places"), &format!("its {noun} differs from your favourite places"));
            put(&format!("{f}_mean_to_bottom"), &format!("its {noun} sets it apart from places you visit less"), &format!("its {noun} resembles places you visit less"));
        }
        Self { phrases, neutral: "no strong signals".to_string() }
    }
}

/// Top-3 features by |shapley| rendered through `templates`.
pub fn explain(attribution: &Attribution, x: &[f64], templates: &Templates) -> Explanation {
    let ranked = attribution.ranked();
    let factors: Vec<FactorContribution> = ranked
        .iter()
        .take(3)
        .map(|(i, phi)| FactorContribution { feature: attribution.feature_names[*i].clone(), value: x[*i], shapley: *phi })
        .collect();
    let phrases: Vec<String> = factors
        .iter()
        .filter(|f| f.shapley.abs() > 1e-12)
        .map(|f| match templates.phrases.get(&f.feature) {
            Some((pos, neg)) => if f.shapley > 0.0 { pos.clone() } else { neg.clone() },
            None => format!("{} {}", f.feature, if f.shapley > 0.0 { "raises the score" } else { "lowers the score" }),
        })
        .collect();
    let text = if phrases.is_empty() { templates.neutral.clone() } else { phrases.join("; ") };
    Explanation { text, factors }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub region_id: String,
    pub score: f64,
    pub explanation: Explanation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_regions: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendOutput {
    pub profile: UserInterestProfile,
    pub items: Vec<Recommendation>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecommendParams {
    pub k: usize,
    pub m: usize,
    /// Coarse candidates; defaults to every unvisited region.
    pub candidates: Option<Vec<String>>,
}

/// Score `candidates` for `profile`, best first (score desc, id asc).
/// Candidates lacking a feature are skipped and counted.
pub fn rank_candidates(
    profile: &UserInterestProfile,
    candidates: &[String],
    regions: &BTreeMap<String, Region>,
    model: &LevelModel,
    templates: &Templates,
) -> Result<(Vec<Recommendation>, usize), RecsysError> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for c in candidates {
        let fv = assemble_features(profile, c, regions, &model.features)?;
        let Some(x) = fv.complete() else {
            skipped += 1;
            continue;
        };
        model.model.check_input(&x)?;
        let attribution = shapley_attribution(&model.model, &x);
        out.push(Recommendation {
            region_id: c.clone(),
            score: model.model.predict_proba(&x),
            explanation: explain(&attribution, &x, templates),
            sub_regions: Vec::new(),
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.region_id.cmp(&b.region_id)));
    Ok((out, skipped))
}

fn ranked_visits(visits: &[(String, u32)]) -> Vec<(String, u32)> {
    let mut v = visits.to_vec();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Fine-level profile: the top set is the `m` most visited fine regions
/// inside each coarse top region; every other visited fine region is bottom.
pub fn fine_profile(
    coarse: &UserInterestProfile,
    fine_visits: &[(String, u32)],
    parent: &BTreeMap<String, String>,
    m: usize,
) -> UserInterestProfile {
    let ranked = ranked_visits(fine_visits);
    let mut taken: BTreeMap<&str, usize> = BTreeMap::new();
    let mut top_set = Vec::new();
    let mut bottom_set = Vec::new();
    for (id, _) in &ranked {
        let inside_top = parent.get(id).filter(|p| coarse.is_top(p));
        match inside_top {
            Some(p) if taken.get(p.as_str()).copied().unwrap_or(0) < m => {
                *taken.entry(p.as_str()).or_insert(0) += 1;
                top_set.push(id.clone());
            }
            _ => bottom_set.push(id.clone()),
        }
    }
    UserInterestProfile {
        user_id: coarse.user_id.clone(),
        k: top_set.len(),
        ranked_regions: ranked,
        top_set,
        bottom_set,
        eligible: true,
    }
}

/// Multi-level recommendation. `visits` may mix coarse and fine region ids;
/// each is routed to the catalog that contains it.
pub fn recommend(
    user_id: &str,
    visits: &[(String, u32)],
    params: &RecommendParams,
    coarse: (&LevelModel, &RegionCatalog),
    fine: Option<(&LevelModel, &RegionCatalog)>,
    templates: &Templates,
) -> Result<RecommendOutput, RecsysError> {
    let (coarse_model, coarse_catalog) = coarse;
    if params.k < 1 {
        return Err(RecsysError::Ineligible("k must be at least 1".into()));
    }
    if params.m > 0 && fine.is_none() {
        return Err(RecsysError::UntrainedLevel("sub-region level".into()));
    }
    let mut coarse_visits = Vec::new();
    let mut fine_visits = Vec::new();
    for (id, count) in visits {
        if coarse_catalog.regions.contains_key(id) {
            coarse_visits.push((id.clone(), *count));
        } else if fine.is_some_and(|(_, cat)| cat.regions.contains_key(id)) {
            fine_visits.push((id.clone(), *count));
        } else {
            return Err(RecsysError::UnknownRegion(id.clone()));
        }
    }
    let counts = UserRegionCounts {
        user_id: user_id.to_string(),
        counts: coarse_visits.iter().cloned().collect(),
        first_seen: BTreeMap::new(),
    };
    let profile = label_user(&counts, params.k);
    if !profile.eligible {
        return Err(RecsysError::Ineligible(format!(
            "need at least {} visited regions with the {}-th most visited strictly ahead of the next",
            params.k + 1,
            params.k
        )));
    }

    let visited: BTreeSet<&str> = visits.iter().map(|v| v.0.as_str()).collect();
    let candidates: Vec<String> = match &params.candidates {
        Some(c) => c.clone(),
        None => coarse_catalog.regions.keys().filter(|r| !visited.contains(r.as_str())).cloned().collect(),
    };
    let mut notes = Vec::new();
    let (mut items, skipped) = rank_candidates(&profile, &candidates, &coarse_catalog.regions, coarse_model, templates)?;
    if skipped > 0 {
        notes.push(format!("{skipped} candidate regions skipped for missing context"));
    }
    items.truncate(params.k);

    if let (Some((fine_model, fine_catalog)), true) = (fine, params.m > 0) {
        let fprofile = fine_profile(&profile, &fine_visits, &fine_catalog.parent, params.m);
        if fprofile.top_set.is_empty() {
            notes.push("no sub-region visits inside the top regions; sub-regions not ranked".into());
        } else {
            for item in &mut items {
                let subs: Vec<String> = fine_catalog
                    .parent
                    .iter()
                    .filter(|(f, p)| **p == item.region_id && !visited.contains(f.as_str()))
                    .map(|(f, _)| f.clone())
                    .collect();
                let (mut ranked, _) = rank_candidates(&fprofile, &subs, &fine_catalog.regions, fine_model, templates)?;
                ranked.truncate(params.m);
                item.sub_regions = ranked;
            }
        }
    }
    Ok(RecommendOutput { profile, items, notes })
}
