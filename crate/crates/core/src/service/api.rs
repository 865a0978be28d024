//! Read-only queries over an artifact store. The HTTP layer is a thin
//! wrapper; the CLI calls the same functions so both produce identical
//! output.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::names;
use super::store::{sha256_hex, ArtifactStore};
use super::ServiceError;
use crate::inet::{net_stats, INet};
use crate::ingest::{Level, Platform};
use crate::metrics::{compare_inets, CompareOptions};
use crate::recsys::{
    classify_mobility, label_user, recommend, LevelModel, MobilityClass, MobilitySummary, RecommendOutput,
    RecommendParams, RecsysError, RegionCatalog, Templates,
};
use crate::UserRegionCounts;

/// `"GP:h8"` style key naming one network.
pub fn net_key(platform: Platform, level: Level) -> String {
    format!("{platform}:{level}")
}

pub fn parse_net_key(key: &str) -> Option<(Platform, Level)> {
    let (p, l) = key.split_once(':')?;
    Some((p.parse().ok()?, l.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

impl ApiError {
    pub fn not_found(artifact: &str) -> Self {
        Self {
            status: 404,
            error: "not_found".into(),
            message: format!("artifact {artifact} not found"),
            fields: Vec::new(),
            artifact: Some(artifact.to_string()),
        }
    }

    pub fn bad_request(fields: Vec<FieldError>) -> Self {
        let message = fields.iter().map(|f| format!("{}: {}", f.field, f.message)).collect::<Vec<_>>().join("; ");
        Self { status: 400, error: "bad_request".into(), message, fields, artifact: None }
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self { status: 422, error: "unprocessable".into(), message: message.into(), fields: Vec::new(), artifact: None }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { status: 500, error: "internal".into(), message: message.into(), fields: Vec::new(), artifact: None }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::MissingArtifact(name) => ApiError::not_found(&name),
            other => ApiError::internal(other.to_string()),
        }
    }
}

/// Every response carries the config hash of the artifacts it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub data: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserMode {
    #[default]
    Auto,
    Returner,
    Explorer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitedRegion {
    pub region_id: String,
    pub review_count: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    #[serde(default)]
    pub user_id: Option<String>,
    pub visited: Vec<VisitedRegion>,
    #[serde(default)]
    pub k: Option<i64>,
    #[serde(default)]
    pub m: Option<i64>,
    #[serde(default)]
    pub user_mode: Option<UserMode>,
}

impl RecommendRequest {
    /// Parse a JSON body; syntax and type errors become field errors.
    pub fn from_json(body: &[u8]) -> Result<Self, ApiError> {
        serde_json::from_slice(body).map_err(|e| {
            let msg = e.to_string();
            let field = ["user_id", "visited", "review_count", "region_id", "user_mode", "k", "m"]
                .into_iter()
                .find(|f| msg.contains(&format!("`{f}`")))
                .unwrap_or("body");
            ApiError::bad_request(vec![FieldError::new(field, msg)])
        })
    }

    /// Structural checks; eligibility is left to the recommender.
    pub fn validate(&self) -> Result<(), ApiError> {
        let mut errors = Vec::new();
        if self.visited.is_empty() {
            errors.push(FieldError::new("visited", "must list at least one region"));
        }
        let mut seen = BTreeSet::new();
        for (i, v) in self.visited.iter().enumerate() {
            if v.region_id.trim().is_empty() {
                errors.push(FieldError::new(format!("visited[{i}].region_id"), "must not be empty"));
            } else if !seen.insert(v.region_id.as_str()) {
                errors.push(FieldError::new(format!("visited[{i}].region_id"), "duplicate region"));
            }
            if v.review_count < 1 || v.review_count > u32::MAX as i64 {
                errors.push(FieldError::new(format!("visited[{i}].review_count"), "must be a positive count"));
            }
        }
        if self.k.is_some_and(|k| k < 1) {
            errors.push(FieldError::new("k", "must be at least 1"));
        }
        if self.m.is_some_and(|m| m < 1) {
            errors.push(FieldError::new("m", "must be at least 1"));
        }
        if errors.is_empty() { Ok(()) } else { Err(ApiError::bad_request(errors)) }
    }
}

/// Recommender settings written by the training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommenderInfo {
    pub coarse_level: Level,
    pub fine_level: Option<Level>,
    pub k: usize,
    pub m: usize,
    /// Mobility classes that have their own model.
    pub class_models: Vec<MobilityClass>,
    pub templates: Templates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    /// Artifact name of the coarse model used.
    pub model: String,
    pub user_mode: UserMode,
    pub mobility: Option<MobilitySummary>,
    pub result: RecommendOutput,
}

/// Read-only view of a store. Holds only a shared reference, so it cannot
/// write.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    store: &'a ArtifactStore,
}

fn required<'q>(params: &'q BTreeMap<String, String>, key: &str, errors: &mut Vec<FieldError>) -> Option<&'q str> {
    match params.get(key).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        Some(v) => Some(v),
        None => {
            errors.push(FieldError::new(key, "required"));
            None
        }
    }
}

fn parse_field<T: std::str::FromStr>(v: Option<&str>, key: &str, errors: &mut Vec<FieldError>) -> Option<T> {
    let v = v?;
    match v.parse() {
        Ok(t) => Some(t),
        Err(_) => {
            errors.push(FieldError::new(key, format!("invalid value `{v}`")));
            None
        }
    }
}

fn net_field(v: Option<&str>, key: &str, errors: &mut Vec<FieldError>) -> Option<(Platform, Level)> {
    let v = v?;
    let parsed = parse_net_key(v);
    if parsed.is_none() {
        errors.push(FieldError::new(key, format!("expected PLATFORM:LEVEL, got `{v}`")));
    }
    parsed
}

impl<'a> Query<'a> {
    pub fn new(store: &'a ArtifactStore) -> Self {
        Self { store }
    }

    fn hash_of(&self, name: &str) -> Result<String, ApiError> {
        self.store.entry(name).map(|e| e.config_hash.clone()).ok_or_else(|| ApiError::not_found(name))
    }

    fn json_artifact(&self, name: &str) -> Result<Envelope<Value>, ApiError> {
        let config_hash = self.hash_of(name)?;
        Ok(Envelope { config_hash, data: self.store.get_json(name)? })
    }

    /// One hash for the whole store: the shared config hash when all
    /// artifacts agree, else a digest of the distinct hashes.
    pub fn store_hash(&self) -> String {
        let hashes: BTreeSet<&str> =
            self.store.manifest().artifacts.values().map(|e| e.config_hash.as_str()).collect();
        match hashes.len() {
            0 => String::new(),
            1 => hashes.into_iter().next().unwrap_or_default().to_string(),
            _ => sha256_hex(hashes.into_iter().collect::<Vec<_>>().join(",").as_bytes()),
        }
    }

    pub fn health(&self) -> Envelope<Value> {
        let broken = self.store.verify();
        let status = if broken.is_empty() { "ok" } else { "degraded" };
        Envelope {
            config_hash: self.store_hash(),
            data: json!({
                "status": status,
                "artifacts": self.store.manifest().artifacts.len(),
                "corrupt": broken,
            }),
        }
    }

    pub fn levels(&self) -> Envelope<Value> {
        let mut levels = BTreeSet::new();
        let mut nets = Vec::new();
        let mut upzones = Vec::new();
        let mut correlations = Vec::new();
        let mut compares = Vec::new();
        for name in self.store.manifest().artifacts.keys() {
            let parts: Vec<&str> = name.split('/').collect();
            match parts.as_slice() {
                ["regions", l] => {
                    levels.insert(l.to_string());
                }
                ["inet", p, l] => nets.push(format!("{p}:{l}")),
                ["upzones", p, l] if *p != "similarity" => upzones.push(format!("{p}:{l}")),
                ["correlations", p, l] => correlations.push(format!("{p}:{l}")),
                ["compare", a, b] => compares.push(json!({"a": a, "b": b})),
                _ => {}
            }
        }
        let recommender: Option<RecommenderInfo> = self.store.get_json(names::RECOMMENDER).ok();
        Envelope {
            config_hash: self.store_hash(),
            data: json!({
                "levels": levels,
                "nets": nets,
                "upzones": upzones,
                "correlations": correlations,
                "compare": compares,
                "recommender": recommender.map(|r| json!({
                    "coarse_level": r.coarse_level,
                    "fine_level": r.fine_level,
                    "k": r.k,
                    "m": r.m,
                    "class_models": r.class_models,
                })),
            }),
        }
    }

    /// Regions of a level as a geographic feature collection.
    pub fn regions(&self, params: &BTreeMap<String, String>) -> Result<Envelope<Value>, ApiError> {
        let mut errors = Vec::new();
        let level: Option<Level> = parse_field(required(params, "level", &mut errors), "level", &mut errors);
        let Some(level) = level else { return Err(ApiError::bad_request(errors)) };
        self.json_artifact(&names::regions_geojson(level))
    }

    pub fn inet(&self, params: &BTreeMap<String, String>) -> Result<Envelope<Value>, ApiError> {
        let mut errors = Vec::new();
        let platform: Option<Platform> =
            parse_field(required(params, "platform", &mut errors), "platform", &mut errors);
        let level: Option<Level> = parse_field(required(params, "level", &mut errors), "level", &mut errors);
        let (Some(platform), Some(level)) = (platform, level) else { return Err(ApiError::bad_request(errors)) };
        let name = names::inet(platform, level);
        let config_hash = self.hash_of(&name)?;
        let net: INet = self.store.get_json(&name)?;
        let data = json!({"net": net, "stats": net_stats(&net), "strengths": net.strengths()});
        Ok(Envelope { config_hash, data })
    }

    pub fn upzones(&self, params: &BTreeMap<String, String>) -> Result<Envelope<Value>, ApiError> {
        let mut errors = Vec::new();
        let platform: Option<Platform> =
            parse_field(required(params, "platform", &mut errors), "platform", &mut errors);
        let level: Option<Level> = parse_field(required(params, "level", &mut errors), "level", &mut errors);
        let (Some(platform), Some(level)) = (platform, level) else { return Err(ApiError::bad_request(errors)) };
        self.json_artifact(&names::upzones(platform, level))
    }

    pub fn correlations(&self, params: &BTreeMap<String, String>) -> Result<Envelope<Value>, ApiError> {
        let mut errors = Vec::new();
        let net = net_field(required(params, "net", &mut errors), "net", &mut errors);
        let Some((platform, level)) = net else { return Err(ApiError::bad_request(errors)) };
        self.json_artifact(&names::correlations(platform, level))
    }

    /// Stored comparison of two nets; computed from the stored nets with
    /// default options when the pipeline did not produce it.
    pub fn compare(&self, params: &BTreeMap<String, String>) -> Result<Envelope<Value>, ApiError> {
        let mut errors = Vec::new();
        let a = net_field(required(params, "a", &mut errors), "a", &mut errors);
        let b = net_field(required(params, "b", &mut errors), "b", &mut errors);
        let (Some(a), Some(b)) = (a, b) else { return Err(ApiError::bad_request(errors)) };
        let stored = names::compare(a, b);
        if self.store.entry(&stored).is_some() {
            return self.json_artifact(&stored);
        }
        let (na, nb) = (names::inet(a.0, a.1), names::inet(b.0, b.1));
        let ha = self.hash_of(&na)?;
        let hb = self.hash_of(&nb)?;
        let (x, y): (INet, INet) = (self.store.get_json(&na)?, self.store.get_json(&nb)?);
        let report = compare_inets(&x, &y, &CompareOptions::default()).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let config_hash = if ha == hb { ha } else { sha256_hex(format!("{ha},{hb}").as_bytes()) };
        Ok(Envelope { config_hash, data: serde_json::to_value(report).expect("report serializes") })
    }

    /// Validate, route to a model and rank regions. The CLI and the HTTP
    /// endpoint both go through here.
    pub fn recommend(&self, req: &RecommendRequest) -> Result<Envelope<RecommendResponse>, ApiError> {
        req.validate()?;
        let info: RecommenderInfo = self.store.get_json(names::RECOMMENDER)?;
        let coarse: RegionCatalog = self.store.get_json(&names::regions(info.coarse_level))?;
        let fine: Option<RegionCatalog> = match info.fine_level {
            Some(l) => Some(self.store.get_json(&names::regions(l))?),
            None => None,
        };
        let unknown: Vec<FieldError> = req
            .visited
            .iter()
            .enumerate()
            .filter(|(_, v)| {
                !coarse.regions.contains_key(&v.region_id)
                    && !fine.as_ref().is_some_and(|f| f.regions.contains_key(&v.region_id))
            })
            .map(|(i, v)| FieldError::new(format!("visited[{i}].region_id"), format!("unknown region `{}`", v.region_id)))
            .collect();
        if !unknown.is_empty() {
            return Err(ApiError::bad_request(unknown));
        }
        let k = req.k.map_or(info.k, |k| k as usize);
        let m = req.m.map_or(info.m, |m| m as usize);
        let user_id = req.user_id.clone().unwrap_or_else(|| "anonymous".to_string());
        let visits: Vec<(String, u32)> = req.visited.iter().map(|v| (v.region_id.clone(), v.review_count as u32)).collect();

        let mode = req.user_mode.unwrap_or_default();
        let coarse_counts = UserRegionCounts {
            user_id: user_id.clone(),
            counts: visits.iter().filter(|(r, _)| coarse.regions.contains_key(r)).cloned().collect(),
            first_seen: BTreeMap::new(),
        };
        let profile = label_user(&coarse_counts, k);
        let mobility = if profile.eligible { Some(classify_mobility(&profile, &coarse.regions)?) } else { None };
        let class = match mode {
            UserMode::Auto => mobility.as_ref().map(|s| s.class),
            UserMode::Returner => Some(MobilityClass::Returner),
            UserMode::Explorer => Some(MobilityClass::Explorer),
        };
        let model_name = match class {
            Some(c) if info.class_models.contains(&c) => names::model(info.coarse_level, Some(c)),
            _ => names::model(info.coarse_level, None),
        };
        let coarse_model: LevelModel = self.store.get_json(&model_name)?;
        let fine_model: Option<LevelModel> = match info.fine_level {
            Some(l) => self.store.get_json(&names::model(l, None)).ok(),
            None => None,
        };
        let fine_pair = match (&fine_model, &fine) {
            (Some(model), Some(catalog)) => Some((model, catalog)),
            _ => None,
        };
        let params = RecommendParams { k, m, candidates: None };
        let result = recommend(&user_id, &visits, &params, (&coarse_model, &coarse), fine_pair, &info.templates)?;
        let config_hash = self.hash_of(&model_name)?;
        Ok(Envelope { config_hash, data: RecommendResponse { model: model_name, user_mode: mode, mobility, result } })
    }
}

impl From<RecsysError> for ApiError {
    fn from(e: RecsysError) -> Self {
        match e {
            RecsysError::Ineligible(_) | RecsysError::UntrainedLevel(_) => ApiError::unprocessable(e.to_string()),
            RecsysError::UnknownRegion(r) => ApiError::bad_request(vec![FieldError::new("visited", format!("unknown region `{r}`"))]),
            other => ApiError::internal(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn net_keys_round_trip() {
        let key = net_key(Platform::Fs, "h8".parse().unwrap());
        assert_eq!(key, "FS:h8");
        assert_eq!(parse_net_key(&key), Some((Platform::Fs, "h8".parse().unwrap())));
        assert_eq!(parse_net_key("nope"), None);
    }

    #[test]
    fn validation_lists_every_field() {
        let req = RecommendRequest {
            user_id: None,
            visited: vec![
                VisitedRegion { region_id: "a".into(), review_count: 0 },
                VisitedRegion { region_id: "a".into(), review_count: 2 },
            ],
            k: Some(0),
            m: Some(-1),
            user_mode: None,
        };
        let err = req.validate().unwrap_err();
        assert_eq!(err.status, 400);
        let fields: Vec<&str> = err.fields.iter().map(|f| f.field.as_str()).collect();
        assert_eq!(fields, vec!["visited[0].review_count", "visited[1].region_id", "k", "m"]);
    }

    #[test]
    fn malformed_body_is_bad_request() {
        let err = RecommendRequest::from_json(br#"{"visited": [{"region_id": "a", "review_count": "x"}]}"#).unwrap_err();
        assert_eq!(err.status, 400);
        let err = RecommendRequest::from_json(b"{").unwrap_err();
        assert_eq!(err.fields[0].field, "body");
    }

    #[test]
    fn missing_artifact_is_404_with_name() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let q = Query::new(&store);
        let params: BTreeMap<String, String> =
            [("platform".to_string(), "GP".to_string()), ("level".to_string(), "h8".to_string())].into();
        let err = q.inet(&params).unwrap_err();
        assert_eq!(err.status, 404);
        assert_eq!(err.artifact.as_deref(), Some("inet/GP/h8"));
        let err = q.inet(&BTreeMap::new()).unwrap_err();
        assert_eq!(err.status, 400);
        assert_eq!(err.fields.len(), 2);
    }
}
