//! Parsing and validation of interaction logs, venue catalogs, region
//! geometries and contextual attribute tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geo::{BBox, LatLon, Point, Polygon, Projection, Shape};
use crate::hexgrid::Resolution;

/// Reserved category for venues whose category is missing or unknown.
pub const UNCATEGORIZED: &str = "uncategorized";

/// Number of Scenes Theory dimensions carried by a region.
pub const SCENE_DIMS: usize = 15;

/// Race columns recognised in context tables.
pub const RACE_COLUMNS: [&str; 7] = ["white", "black", "asian", "hispanic", "brown", "yellow", "indigenous"];

/// Maximum number of per-row diagnostics kept in a load report.
const MAX_DIAGNOSTICS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {skipped} of {total} rows malformed; first problems: {}", diagnostics.join("; "))]
    TooManyMalformed {
        path: String,
        skipped: usize,
        total: usize,
        diagnostics: Vec<String>,
    },
    #[error("invalid JSON in {path}: {message}")]
    Json { path: String, message: String },
    #[error("feature #{index} has no id property")]
    MissingId { index: usize },
    #[error("duplicate region id {0:?}")]
    DuplicateId(String),
    #[error("feature {id:?}: {message}")]
    Geometry { id: String, message: String },
    #[error("CSV error in {path}: {message}")]
    Csv { path: String, message: String },
    #[error("unknown value {value:?} for {what}")]
    UnknownValue { what: &'static str, value: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Platform {
    #[serde(rename = "GP")]
    Gp,
    #[serde(rename = "FS")]
    Fs,
    #[serde(rename = "OTHER")]
    Other,
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Platform::Gp => "GP",
            Platform::Fs => "FS",
            Platform::Other => "OTHER",
        })
    }
}

impl FromStr for Platform {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GP" => Ok(Platform::Gp),
            "FS" => Ok(Platform::Fs),
            "OTHER" => Ok(Platform::Other),
            _ => Err(IngestError::UnknownValue { what: "platform", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub venue_id: String,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub platform: Platform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Venue {
    pub venue_id: String,
    pub name: String,
    pub category: String,
    pub location: LatLon,
}

/// Spatial unit class of a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Level {
    Hex(Resolution),
    Neighborhood,
    Zip,
    Borough,
    City,
    County,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Hex(res) => write!(f, "{res}"),
            Level::Neighborhood => f.write_str("neighborhood"),
            Level::Zip => f.write_str("zip"),
            Level::Borough => f.write_str("borough"),
            Level::City => f.write_str("city"),
            Level::County => f.write_str("county"),
        }
    }
}

impl FromStr for Level {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neighborhood" => Ok(Level::Neighborhood),
            "zip" => Ok(Level::Zip),
            "borough" => Ok(Level::Borough),
            "city" => Ok(Level::City),
            "county" => Ok(Level::County),
            other => other
                .parse::<Resolution>()
                .map(Level::Hex)
                .map_err(|_| IngestError::UnknownValue { what: "level", value: s.to_string() }),
        }
    }
}

impl TryFrom<String> for Level {
    type Error = IngestError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Level> for String {
    fn from(l: Level) -> String {
        l.to_string()
    }
}

/// Contextual attributes attached to a region. Every field is optional
/// because source tables routinely lack some of them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextProfile {
    pub population: Option<f64>,
    pub income: Option<f64>,
    pub education: Option<f64>,
    pub employment: Option<f64>,
    pub literacy: Option<f64>,
    pub vote_share: Option<f64>,
    #[serde(default)]
    pub race_counts: BTreeMap<String, f64>,
    pub scene_vector: Option<Vec<f64>>,
    /// Venue category counts, filled from the venue catalog.
    #[serde(default)]
    pub category_freq: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: String,
    pub level: Level,
    /// Boundary in projected meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Shape>,
    /// Projected centroid in meters.
    pub centroid: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextProfile>,
}

impl Region {
    pub fn context_mut(&mut self) -> &mut ContextProfile {
        self.context.get_or_insert_with(ContextProfile::default)
    }
}

/// Records accepted from a file together with skip accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport<T> {
    pub records: Vec<T>,
    pub skipped: usize,
    pub diagnostics: Vec<String>,
}

impl<T> LoadReport<T> {
    fn new() -> Self {
        Self { records: Vec::new(), skipped: 0, diagnostics: Vec::new() }
    }

    fn reject(&mut self, line: usize, why: impl fmt::Display) {
        self.skipped += 1;
        if self.diagnostics.len() < MAX_DIAGNOSTICS {
            self.diagnostics.push(format!("line {line}: {why}"));
        }
    }

    fn finish(self, path: &str) -> Result<Self> {
        let total = self.records.len() + self.skipped;
        if self.skipped * 2 > total {
            return Err(IngestError::TooManyMalformed {
                path: path.to_string(),
                skipped: self.skipped,
                total,
                diagnostics: self.diagnostics,
            });
        }
        if self.skipped > 0 {
            warn!("{path}: skipped {} malformed rows of {total}", self.skipped);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

impl RecordFormat {
    /// Guess from the file extension; anything that is not `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => RecordFormat::Csv,
            _ => RecordFormat::Jsonl,
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(s)
}

/// Parse a timestamp given as epoch seconds or as an ISO-8601 string.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then(|| v.floor() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

struct RawInteraction {
    user_id: Option<String>,
    venue_id: Option<String>,
    ts: Option<String>,
    platform: Option<String>,
    rating: Option<String>,
}

fn validate_interaction(
    raw: RawInteraction,
    platform: Option<Platform>,
) -> std::result::Result<Interaction, String> {
    let user_id = raw.user_id.filter(|s| !s.trim().is_empty()).ok_or("missing user_id")?;
    let venue_id = raw.venue_id.filter(|s| !s.trim().is_empty()).ok_or("missing venue_id")?;
    let ts = raw.ts.ok_or("missing ts")?;
    let timestamp = parse_timestamp(&ts).ok_or_else(|| format!("unparseable ts {ts:?}"))?;
    if timestamp <= 0 {
        return Err(format!("non-positive ts {timestamp}"));
    }
    let platform = match platform {
        Some(p) => p,
        None => raw
            .platform
            .ok_or("missing platform")?
            .parse()
            .map_err(|e: IngestError| e.to_string())?,
    };
    let rating = match raw.rating.filter(|s| !s.trim().is_empty()) {
        None => None,
        Some(r) => {
            let v: f64 = r.trim().parse().map_err(|_| format!("bad rating {r:?}"))?;
            if !(1.0..=5.0).contains(&v) {
                return Err(format!("rating {v} outside [1,5]"));
            }
            Some(v)
        }
    };
    Ok(Interaction { user_id: user_id.trim().to_string(), venue_id: venue_id.trim().to_string(), timestamp, platform, rating })
}

fn json_scalar(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parse interaction records from in-memory text.
///
/// When `platform` is given it tags every record and the per-row platform
/// field is ignored; otherwise each row must carry a valid platform.
pub fn parse_interactions(
    text: &str,
    platform: Option<Platform>,
    format: RecordFormat,
    source: &str,
) -> Result<LoadReport<Interaction>> {
    let mut report = LoadReport::new();
    match format {
        RecordFormat::Jsonl => {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let obj: Value = match serde_json::from_str(line) {
                    Ok(v @ Value::Object(_)) => v,
                    Ok(_) => {
                        report.reject(i + 1, "not a JSON object");
                        continue;
                    }
                    Err(e) => {
                        report.reject(i + 1, e);
                        continue;
                    }
                };
                let raw = RawInteraction {
                    user_id: json_scalar(obj.get("user_id")),
                    venue_id: json_scalar(obj.get("venue_id")),
                    ts: json_scalar(obj.get("ts")),
                    platform: json_scalar(obj.get("platform")),
                    rating: json_scalar(obj.get("rating")),
                };
                match validate_interaction(raw, platform) {
                    Ok(rec) => report.records.push(rec),
                    Err(e) => report.reject(i + 1, e),
                }
            }
        }
        RecordFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
            let headers = rdr
                .headers()
                .map_err(|e| IngestError::Csv { path: source.to_string(), message: e.to_string() })?
                .clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let (cu, cv, ct, cp, cr) = (col("user_id"), col("venue_id"), col("ts"), col("platform"), col("rating"));
            for (i, row) in rdr.records().enumerate() {
                let line = i + 2;
                let row = match row {
                    Ok(r) => r,
                    Err(e) => {
                        report.reject(line, e);
                        continue;
                    }
                };
                let get = |c: Option<usize>| c.and_then(|c| row.get(c)).map(str::to_string);
                let raw = RawInteraction {
                    user_id: get(cu),
                    venue_id: get(cv),
                    ts: get(ct),
                    platform: get(cp),
                    rating: get(cr),
                };
                match validate_interaction(raw, platform) {
                    Ok(rec) => report.records.push(rec),
                    Err(e) => report.reject(line, e),
                }
            }
        }
    }
    report.finish(source)
}

pub fn load_interactions(
    path: &Path,
    platform: Option<Platform>,
    format: RecordFormat,
) -> Result<LoadReport<Interaction>> {
    let text = read_to_string(path)?;
    parse_interactions(&text, platform, format, &path.display().to_string())
}

/// Map empty or unknown category labels onto [`UNCATEGORIZED`].
pub fn normalize_category(raw: &str) -> String {
    let c = raw.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("unknown") || c.eq_ignore_ascii_case(UNCATEGORIZED) {
        UNCATEGORIZED.to_string()
    } else {
        c.to_string()
    }
}

pub fn parse_venues(text: &str, source: &str) -> Result<LoadReport<Venue>> {
    let mut report = LoadReport::new();
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Csv { path: source.to_string(), message: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (ci, cn, cc, clat, clon) = (col("venue_id"), col("name"), col("category"), col("lat"), col("lon"));
    let mut seen = BTreeSet::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.reject(line, e);
                continue;
            }
        };
        let get = |c: Option<usize>| c.and_then(|c| row.get(c)).map(str::trim).unwrap_or("");
        let id = get(ci);
        if id.is_empty() {
            report.reject(line, "missing venue_id");
            continue;
        }
        let (Ok(lat), Ok(lon)) = (get(clat).parse::<f64>(), get(clon).parse::<f64>()) else {
            report.reject(line, "unparseable coordinates");
            continue;
        };
        let location = LatLon::new(lat, lon);
        if !location.is_valid() {
            report.reject(line, format!("coordinates ({lat}, {lon}) out of range"));
            continue;
        }
        if !seen.insert(id.to_string()) {
            report.reject(line, format!("duplicate venue_id {id:?}"));
            continue;
        }
        report.records.push(Venue {
            venue_id: id.to_string(),
            name: get(cn).to_string(),
            category: normalize_category(get(cc)),
            location,
        });
    }
    report.finish(source)
}

pub fn load_venues(path: &Path) -> Result<LoadReport<Venue>> {
    let text = read_to_string(path)?;
    parse_venues(&text, &path.display().to_string())
}

/// Geometry of one feature in geographic coordinates, before projection.
#[derive(Debug, Clone, PartialEq)]
pub enum RawGeometry {
    /// Polygons as rings of (lat, lon); the first ring of each is the exterior.
    Polygons(Vec<Vec<Vec<LatLon>>>),
    Point(LatLon),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFeature {
    pub id: String,
    pub geometry: RawGeometry,
}

impl RawFeature {
    pub fn coords(&self) -> Vec<LatLon> {
        match &self.geometry {
            RawGeometry::Polygons(polys) => polys.iter().flatten().flatten().copied().collect(),
            RawGeometry::Point(p) => vec![*p],
        }
    }
}

fn parse_position(v: &Value) -> Option<LatLon> {
    let arr = v.as_array()?;
    let lon = arr.first()?.as_f64()?;
    let lat = arr.get(1)?.as_f64()?;
    Some(LatLon::new(lat, lon))
}

fn parse_ring(v: &Value) -> Option<Vec<LatLon>> {
    v.as_array()?.iter().map(parse_position).collect()
}

fn parse_polygon(v: &Value) -> Option<Vec<Vec<LatLon>>> {
    v.as_array()?.iter().map(parse_ring).collect()
}

/// Parse a FeatureCollection whose features carry an `id` property.
pub fn parse_features(text: &str, source: &str) -> Result<Vec<RawFeature>> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| IngestError::Json { path: source.to_string(), message: e.to_string() })?;
    let features = match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => doc
            .get("features")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default(),
        Some("Feature") => vec![doc.clone()],
        _ => {
            return Err(IngestError::Json {
                path: source.to_string(),
                message: "expected a FeatureCollection".into(),
            })
        }
    };
    let mut out = Vec::with_capacity(features.len());
    let mut seen = BTreeSet::new();
    for (index, feat) in features.iter().enumerate() {
        let id = json_scalar(feat.get("properties").and_then(|p| p.get("id")))
            .or_else(|| json_scalar(feat.get("id")))
            .filter(|s| !s.is_empty())
            .ok_or(IngestError::MissingId { index })?;
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId(id));
        }
        let geom = feat.get("geometry").ok_or_else(|| IngestError::Geometry {
            id: id.clone(),
            message: "missing geometry".into(),
        })?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let bad = |m: &str| IngestError::Geometry { id: id.clone(), message: m.to_string() };
        let geometry = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => RawGeometry::Polygons(vec![parse_polygon(coords).ok_or_else(|| bad("malformed Polygon"))?]),
            Some("MultiPolygon") => RawGeometry::Polygons(
                coords
                    .as_array()
                    .ok_or_else(|| bad("malformed MultiPolygon"))?
                    .iter()
                    .map(parse_polygon)
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad("malformed MultiPolygon"))?,
            ),
            Some("Point") => RawGeometry::Point(parse_position(coords).ok_or_else(|| bad("malformed Point"))?),
            other => return Err(bad(&format!("unsupported geometry type {other:?}"))),
        };
        if let RawGeometry::Polygons(polys) = &geometry {
            if polys.is_empty() || polys.iter().any(|p| p.is_empty() || p[0].len() < 3) {
                return Err(bad("polygon needs at least three vertices"));
            }
        }
        if feat_coords_invalid(&geometry) {
            return Err(bad("coordinates out of range"));
        }
        out.push(RawFeature { id, geometry });
    }
    Ok(out)
}

fn feat_coords_invalid(g: &RawGeometry) -> bool {
    match g {
        RawGeometry::Polygons(p) => p.iter().flatten().flatten().any(|c| !c.is_valid()),
        RawGeometry::Point(c) => !c.is_valid(),
    }
}

/// Project raw features into regions. Self-intersecting polygons are
/// accepted with a warning and get the vertex mean as centroid.
pub fn regions_from_features(
    features: &[RawFeature],
    level: Level,
    projection: &Projection,
) -> (Vec<Region>, Vec<String>) {
    let mut warnings = Vec::new();
    let regions = features
        .iter()
        .map(|f| match &f.geometry {
            RawGeometry::Point(p) => Region {
                region_id: f.id.clone(),
                level,
                boundary: None,
                centroid: projection.project(*p),
                context: None,
            },
            RawGeometry::Polygons(polys) => {
                let shape = Shape::new(
                    polys
                        .iter()
                        .map(|rings| {
                            let mut it = rings.iter().map(|r| r.iter().map(|c| projection.project(*c)).collect());
                            let ext = it.next().unwrap_or_default();
                            Polygon::with_holes(ext, it.collect())
                        })
                        .collect(),
                );
                let centroid = if shape.is_self_intersecting() {
                    let msg = format!("region {:?} is self-intersecting; using vertex mean centroid", f.id);
                    warn!("{msg}");
                    warnings.push(msg);
                    shape.vertex_mean()
                } else {
                    shape.centroid()
                };
                Region { region_id: f.id.clone(), level, boundary: Some(shape), centroid, context: None }
            }
        })
        .collect();
    (regions, warnings)
}

/// Load regions from a FeatureCollection file.
pub fn load_regions(path: &Path, level: Level, projection: &Projection) -> Result<(Vec<Region>, Vec<String>)> {
    let text = read_to_string(path)?;
    let features = parse_features(&text, &path.display().to_string())?;
    Ok(regions_from_features(&features, level, projection))
}

/// Serialize regions as a FeatureCollection in geographic coordinates.
pub fn regions_to_geojson(regions: &[Region], projection: &Projection) -> Value {
    let ring = |r: &Vec<Point>| -> Value {
        let mut pts: Vec<Value> = r
            .iter()
            .map(|p| {
                let ll = projection.unproject(*p);
                serde_json::json!([ll.lon, ll.lat])
            })
            .collect();
        if let Some(first) = pts.first().cloned() {
            pts.push(first);
        }
        Value::Array(pts)
    };
    let features: Vec<Value> = regions
        .iter()
        .map(|r| {
            let geometry = match &r.boundary {
                Some(shape) => serde_json::json!({
                    "type": "MultiPolygon",
                    "coordinates": shape.polygons.iter().map(|p| {
                        std::iter::once(&p.exterior).chain(p.holes.iter()).map(ring).collect::<Vec<_>>()
                    }).collect::<Vec<_>>(),
                }),
                None => {
                    let ll = projection.unproject(r.centroid);
                    serde_json::json!({"type": "Point", "coordinates": [ll.lon, ll.lat]})
                }
            };
            serde_json::json!({
                "type": "Feature",
                "properties": {"id": r.region_id, "level": r.level.to_string()},
                "geometry": geometry,
            })
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": features})
}

/// Outcome of attaching a context table to regions.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ContextReport {
    pub updated: usize,
    /// Region ids present in the table but not among the regions.
    pub unmatched: Vec<String>,
    pub rejected: Vec<String>,
}

fn parse_context_row(
    headers: &csv::StringRecord,
    row: &csv::StringRecord,
) -> std::result::Result<(String, ContextProfile), String> {
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for (h, v) in headers.iter().zip(row.iter()) {
        fields.insert(h.trim(), v.trim());
    }
    let id = fields.get("region_id").copied().filter(|s| !s.is_empty()).ok_or("missing region_id")?;
    let num = |name: &str| -> std::result::Result<Option<f64>, String> {
        match fields.get(name).copied() {
            None | Some("") => Ok(None),
            Some(v) => {
                let x: f64 = v.parse().map_err(|_| format!("{name}: not a number {v:?}"))?;
                if !x.is_finite() {
                    return Err(format!("{name}: non-finite value"));
                }
                Ok(Some(x))
            }
        }
    };
    let count = |name: &str| -> std::result::Result<Option<f64>, String> {
        let v = num(name)?;
        if matches!(v, Some(x) if x < 0.0) {
            return Err(format!("{name}: negative count"));
        }
        Ok(v)
    };
    let rate = |name: &str| -> std::result::Result<Option<f64>, String> {
        let v = num(name)?;
        if matches!(v, Some(x) if !(0.0..=1.0).contains(&x)) {
            return Err(format!("{name}: rate outside [0,1]"));
        }
        Ok(v)
    };
    let mut ctx = ContextProfile {
        population: count("population")?,
        income: count("income")?,
        education: rate("education")?,
        employment: rate("employment")?,
        literacy: rate("literacy")?,
        vote_share: rate("vote_share")?,
        ..Default::default()
    };
    for race in RACE_COLUMNS {
        if let Some(v) = count(race)? {
            ctx.race_counts.insert(race.to_string(), v);
        }
    }
    let scenes: Vec<Option<f64>> = (1..=SCENE_DIMS).map(|i| num(&format!("s{i}"))).collect::<std::result::Result<_, _>>()?;
    let present = scenes.iter().filter(|s| s.is_some()).count();
    if present == SCENE_DIMS {
        ctx.scene_vector = Some(scenes.into_iter().flatten().collect());
    } else if present > 0 {
        return Err(format!("scene vector has {present} of {SCENE_DIMS} dimensions"));
    }
    Ok((id.to_string(), ctx))
}

/// Attach context attributes to matching regions. Category frequencies
/// already present on a region are preserved.
pub fn apply_context(text: &str, regions: &mut [Region], source: &str) -> Result<ContextReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Csv { path: source.to_string(), message: e.to_string() })?
        .clone();
    if !headers.iter().any(|h| h.trim() == "region_id") {
        return Err(IngestError::Csv { path: source.to_string(), message: "missing region_id column".into() });
    }
    let index: HashMap<String, usize> =
        regions.iter().enumerate().map(|(i, r)| (r.region_id.clone(), i)).collect();
    let mut report = ContextReport::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let parsed = row.map_err(|e| e.to_string()).and_then(|row| parse_context_row(&headers, &row));
        match parsed {
            Err(e) => {
                warn!("{source} line {line}: row rejected: {e}");
                report.rejected.push(format!("line {line}: {e}"));
            }
            Ok((id, mut ctx)) => match index.get(&id) {
                None => {
                    warn!("{source}: region {id:?} not among loaded regions");
                    report.unmatched.push(id);
                }
                Some(&ri) => {
                    let region = &mut regions[ri];
                    if let Some(old) = region.context.take() {
                        ctx.category_freq = old.category_freq;
                    }
                    region.context = Some(ctx);
                    report.updated += 1;
                }
            },
        }
    }
    Ok(report)
}

pub fn load_context(path: &Path, regions: &mut [Region]) -> Result<ContextReport> {
    let text = read_to_string(path)?;
    apply_context(&text, regions, &path.display().to_string())
}

/// Venue to region assignment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VenueAssignment {
    pub map: BTreeMap<String, String>,
    pub unassigned: Vec<String>,
}

impl VenueAssignment {
    pub fn region_of(&self, venue_id: &str) -> Option<&str> {
        self.map.get(venue_id).map(String::as_str)
    }
}

/// Uniform bucket grid over region bounding boxes.
struct BucketIndex {
    origin: Point,
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl BucketIndex {
    fn build(boxes: &[(usize, BBox)]) -> Option<Self> {
        let total = boxes.iter().map(|(_, b)| *b).reduce(|a, b| a.union(&b))?;
        let mean_dim = boxes.iter().map(|(_, b)| b.width().max(b.height())).sum::<f64>() / boxes.len() as f64;
        let cell = mean_dim.max(1.0);
        let cols = ((total.width() / cell).ceil() as usize + 1).min(4096);
        let rows = ((total.height() / cell).ceil() as usize + 1).min(4096);
        let cell = cell.max(total.width() / cols as f64).max(total.height() / rows as f64);
        let mut idx = BucketIndex { origin: total.min, cell, cols, rows, buckets: vec![Vec::new(); cols * rows] };
        for (i, b) in boxes {
            let (c0, r0) = idx.bucket_of(&Point::new(b.min.x - 1e-6, b.min.y - 1e-6));
            let (c1, r1) = idx.bucket_of(&Point::new(b.max.x + 1e-6, b.max.y + 1e-6));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    idx.buckets[r * cols + c].push(*i);
                }
            }
        }
        Some(idx)
    }

    fn bucket_of(&self, p: &Point) -> (usize, usize) {
        let c = ((p.x - self.origin.x) / self.cell).floor().clamp(0.0, (self.cols - 1) as f64) as usize;
        let r = ((p.y - self.origin.y) / self.cell).floor().clamp(0.0, (self.rows - 1) as f64) as usize;
        (c, r)
    }

    fn candidates(&self, p: &Point) -> &[usize] {
        let (c, r) = self.bucket_of(p);
        &self.buckets[r * self.cols + c]
    }
}

/// Assign every venue to the region containing it. A venue on a shared
/// boundary goes to the lexicographically smallest region id.
pub fn assign_venues_to_regions(venues: &[Venue], regions: &[Region], projection: &Projection) -> VenueAssignment {
    let boxes: Vec<(usize, BBox)> = regions
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.boundary.as_ref().and_then(Shape::bbox).map(|b| (i, b)))
        .collect();
    let mut out = VenueAssignment::default();
    let Some(index) = BucketIndex::build(&boxes) else {
        out.unassigned = venues.iter().map(|v| v.venue_id.clone()).collect();
        return out;
    };
    let bbox_of: HashMap<usize, BBox> = boxes.iter().copied().collect();
    for venue in venues {
        let p = projection.project(venue.location);
        let mut best: Option<&str> = None;
        for &ri in index.candidates(&p) {
            if !bbox_of[&ri].contains(&p, 1e-6) {
                continue;
            }
            let region = &regions[ri];
            let covered = region.boundary.as_ref().is_some_and(|s| s.contains(&p).covers());
            if covered && best.is_none_or(|b| region.region_id.as_str() < b) {
                best = Some(&region.region_id);
            }
        }
        match best {
            Some(id) => {
                out.map.insert(venue.venue_id.clone(), id.to_string());
            }
            None => out.unassigned.push(venue.venue_id.clone()),
        }
    }
    if !out.unassigned.is_empty() {
        warn!("{} venues fall outside every region", out.unassigned.len());
    }
    out
}

/// Count venue categories per region into each region's context.
pub fn attach_category_freq(regions: &mut [Region], venues: &[Venue], assignment: &VenueAssignment) {
    let index: HashMap<String, usize> =
        regions.iter().enumerate().map(|(i, r)| (r.region_id.clone(), i)).collect();
    for v in venues {
        if let Some(&ri) = assignment.region_of(&v.venue_id).and_then(|rid| index.get(rid)) {
            *regions[ri].context_mut().category_freq.entry(v.category.clone()).or_insert(0.0) += 1.0;
        }
    }
}

/// Inclusive time window in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

impl TimeWindow {
    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts <= self.end
    }
}

/// Keep interactions (with an assigned venue, inside the window) of users
/// spanning at least `min_distinct_regions` distinct regions.
pub fn filter_users(
    interactions: &[Interaction],
    assignment: &VenueAssignment,
    min_distinct_regions: usize,
    window: Option<TimeWindow>,
) -> Vec<Interaction> {
    let usable = |i: &Interaction| {
        window.is_none_or(|w| w.contains(i.timestamp)) && assignment.region_of(&i.venue_id).is_some()
    };
    let mut regions_by_user: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for i in interactions.iter().filter(|i| usable(i)) {
        if let Some(r) = assignment.region_of(&i.venue_id) {
            regions_by_user.entry(&i.user_id).or_default().insert(r);
        }
    }
    interactions
        .iter()
        .filter(|i| usable(i))
        .filter(|i| regions_by_user.get(i.user_id.as_str()).is_some_and(|s| s.len() >= min_distinct_regions))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_valid_rows() {
        let text = r#"{"user_id":"u1","venue_id":"v1","ts":1396310400,"platform":"GP"}
{"user_id":"u2","venue_id":"v2","ts":1396310401,"platform":"FS","rating":4}
{"user_id":"u3","venue_id":"v3","ts":"1396310402","platform":"gp"}
"#;
        let rep = parse_interactions(text, None, RecordFormat::Jsonl, "t").unwrap();
        assert_eq!(rep.records.len(), 3);
        assert_eq!(rep.skipped, 0);
        assert_eq!(rep.records[1].platform, Platform::Fs);
        assert_eq!(rep.records[1].rating, Some(4.0));
    }

    #[test]
    fn missing_venue_is_skipped() {
        let text = r#"{"user_id":"u1","venue_id":"v1","ts":5,"platform":"GP"}
{"user_id":"u1","ts":6,"platform":"GP"}
{"user_id":"u2","venue_id":"v1","ts":7,"platform":"GP"}
"#;
        let rep = parse_interactions(text, None, RecordFormat::Jsonl, "t").unwrap();
        assert_eq!(rep.records.len(), 2);
        assert_eq!(rep.skipped, 1);
        assert!(rep.diagnostics[0].contains("venue_id"));
    }

    #[test]
    fn iso_timestamp_is_converted() {
        // 2014-04-01 is 16161 days after the epoch: 16161 * 86400
        assert_eq!(parse_timestamp("2014-04-01T00:00:00Z"), Some(16161 * 86_400));
        assert_eq!(parse_timestamp("2014-04-01T00:00:00Z"), Some(1_396_310_400));
        assert_eq!(parse_timestamp("2014-04-01 00:00:00"), Some(1_396_310_400));
        assert_eq!(parse_timestamp("2014-04-01T03:00:00+03:00"), Some(1_396_310_400));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn majority_malformed_is_fatal() {
        let text = "{\"user_id\":\"u1\"}\n{\"bad\n{\"user_id\":\"u1\",\"venue_id\":\"v\",\"ts\":1,\"platform\":\"GP\"}\n";
        let err = parse_interactions(text, None, RecordFormat::Jsonl, "t").unwrap_err();
        assert!(matches!(err, IngestError::TooManyMalformed { skipped: 2, total: 3, .. }));
    }

    #[test]
    fn csv_interactions_and_platform_override() {
        let text = "user_id,venue_id,ts,platform\nu1,v1,2014-04-01T00:00:00Z,GP\nu2,v2,10,XX\n";
        let rep = parse_interactions(text, Some(Platform::Fs), RecordFormat::Csv, "t").unwrap();
        assert_eq!(rep.records.len(), 2);
        assert!(rep.records.iter().all(|r| r.platform == Platform::Fs));
        assert_eq!(rep.records[0].timestamp, 1_396_310_400);
        let rep = parse_interactions(text, None, RecordFormat::Csv, "t").unwrap();
        assert_eq!((rep.records.len(), rep.skipped), (1, 1));
    }

    #[test]
    fn rating_out_of_range_rejected() {
        let text = "{\"user_id\":\"u\",\"venue_id\":\"v\",\"ts\":1,\"platform\":\"GP\",\"rating\":7}\n{\"user_id\":\"u\",\"venue_id\":\"v\",\"ts\":1,\"platform\":\"GP\"}\n";
        let rep = parse_interactions(text, None, RecordFormat::Jsonl, "t").unwrap();
        assert_eq!(rep.skipped, 1);
    }

    #[test]
    fn venues_normalize_categories() {
        let text = "venue_id,name,category,lat,lon\nv1,A,,10,10\nv2,B,Pub,10,10\nv3,C,Bar,100,0\n";
        let rep = parse_venues(text, "t").unwrap();
        assert_eq!(rep.records.len(), 2);
        assert_eq!(rep.records[0].category, UNCATEGORIZED);
        assert_eq!(rep.skipped, 1);
    }

    fn square_feature(id: &str, x0: f64, y0: f64, s: f64) -> String {
        format!(
            r#"{{"type":"Feature","properties":{{"id":"{id}"}},"geometry":{{"type":"Polygon","coordinates":[[[{x0},{y0}],[{x1},{y0}],[{x1},{y1}],[{x0},{y1}],[{x0},{y0}]]]}}}}"#,
            x1 = x0 + s,
            y1 = y0 + s
        )
    }

    fn collection(feats: &[String]) -> String {
        format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, feats.join(","))
    }

    #[test]
    fn unit_square_centroid_is_projected_center() {
        let text = collection(&[square_feature("a", 0.0, 0.0, 1.0)]);
        let feats = parse_features(&text, "t").unwrap();
        let proj = Projection::new(LatLon::new(0.5, 0.5));
        let (regions, warnings) = regions_from_features(&feats, Level::Neighborhood, &proj);
        assert!(warnings.is_empty());
        let expected = proj.project(LatLon::new(0.5, 0.5));
        let c = regions[0].centroid;
        // the projected square is symmetric in x; the y offset comes from the
        // meridian convergence of a one-degree cell and stays below 0.05%
        assert!((c.x - expected.x).abs() < 1e-3);
        assert!(c.distance(&expected) < 0.0005 * 111_000.0);
    }

    #[test]
    fn duplicate_and_missing_ids_are_fatal() {
        let dup = collection(&[square_feature("a", 0.0, 0.0, 1.0), square_feature("a", 2.0, 0.0, 1.0)]);
        assert!(matches!(parse_features(&dup, "t"), Err(IngestError::DuplicateId(id)) if id == "a"));
        let missing = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        assert!(matches!(parse_features(missing, "t"), Err(IngestError::MissingId { index: 0 })));
    }

    #[test]
    fn self_intersecting_uses_vertex_mean() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"id":"bow"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[0.01,0.01],[0.01,0],[0,0.01],[0,0]]]}}]}"#;
        let feats = parse_features(text, "t").unwrap();
        let proj = Projection::new(LatLon::new(0.005, 0.005));
        let (regions, warnings) = regions_from_features(&feats, Level::Zip, &proj);
        assert_eq!(warnings.len(), 1);
        let mean = regions[0].boundary.as_ref().unwrap().vertex_mean();
        assert_eq!(regions[0].centroid, mean);
    }

    fn bare_region(id: &str) -> Region {
        Region { region_id: id.into(), level: Level::Neighborhood, boundary: None, centroid: Point::new(0.0, 0.0), context: None }
    }

    #[test]
    fn context_rows_applied_and_validated() {
        let mut regions = vec![bare_region("r1"), bare_region("r2"), bare_region("r3")];
        let scenes: Vec<String> = (1..=15).map(|i| format!("s{i}")).collect();
        let mut text = format!("region_id,population,white,black,{}\n", scenes.join(","));
        text += &format!("r1,100,60,40,{}\n", vec!["0.1"; 15].join(","));
        text += &format!("r2,50,,,{},\n", vec!["0.1"; 14].join(","));
        text += &format!("r99,10,,,{}\n", vec![""; 15].join(","));
        text += &format!("r3,-5,,,{}\n", vec![""; 15].join(","));
        let rep = apply_context(&text, &mut regions, "t").unwrap();
        assert_eq!(rep.updated, 1);
        assert_eq!(rep.unmatched, vec!["r99".to_string()]);
        assert_eq!(rep.rejected.len(), 2);
        let ctx = regions[0].context.as_ref().unwrap();
        assert_eq!(ctx.population, Some(100.0));
        assert_eq!(ctx.race_counts["black"], 40.0);
        assert_eq!(ctx.scene_vector.as_ref().unwrap().len(), 15);
        assert!(regions[1].context.is_none());
        assert!(regions[2].context.is_none());
    }

    fn interaction(u: &str, v: &str, ts: i64) -> Interaction {
        Interaction { user_id: u.into(), venue_id: v.into(), timestamp: ts, platform: Platform::Gp, rating: None }
    }

    #[test]
    fn filter_users_by_distinct_regions() {
        let mut assignment = VenueAssignment::default();
        for i in 0..6 {
            assignment.map.insert(format!("v{i}"), format!("r{i}"));
        }
        let mut data: Vec<Interaction> = (0..6).map(|i| interaction("a", &format!("v{i}"), 10 + i)).collect();
        data.extend((0..10).map(|i| interaction("b", "v0", 100 + i)));
        let kept = filter_users(&data, &assignment, 6, None);
        assert!(kept.iter().all(|i| i.user_id == "a"));
        assert_eq!(kept.len(), 6);
        assert_eq!(filter_users(&data, &assignment, 1, None), data);
        // window end is inclusive
        let w = TimeWindow { start: 10, end: 15 };
        assert_eq!(filter_users(&data, &assignment, 6, Some(w)).len(), 6);
        let w = TimeWindow { start: 11, end: 15 };
        assert!(filter_users(&data, &assignment, 6, Some(w)).is_empty());
    }
}
