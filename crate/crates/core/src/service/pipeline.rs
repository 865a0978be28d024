use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::names;
use super::store::{sha256_hex, ArtifactKind, ArtifactStore, Manifest};
use super::ServiceError;
use crate::geo::Projection;
use crate::hexgrid::{cells_to_regions, neighbor_ids, tessellate, Inclusion};
use crate::inet::{aggregate_with, build_user_counts, filter_top_edges, AggregateOptions, INet, UserRegionCounts};
use crate::ingest::{
    apply_context, assign_venues_to_regions, attach_category_freq, filter_users, load_interactions, load_venues,
    parse_features, regions_from_features, regions_to_geojson, Interaction, Level, Platform, RecordFormat, Region,
    TimeWindow, Venue, VenueAssignment,
};
use crate::metrics::{compare_inets, correlate_edges_with_factor, factor_table_csv, CompareOptions, Factor, PairingMode};
use crate::recsys::{
    build_dataset, classify_mobility, label_user, train_with_report, FeatureConfig, LevelModel, MobilityClass,
    RegionCatalog, SearchSpace, Templates, UserInterestProfile,
};
use crate::synth::{SynthDataset, SynthFiles};
use crate::upzones::{hungarian_align, leiden, profile_zones, spatial_connectivity, zone_similarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Regions,
    Inet,
    Compare,
    Upzones,
    Correlate,
    Train,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Regions, Stage::Inet, Stage::Compare, Stage::Upzones, Stage::Correlate, Stage::Train];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Regions => "regions",
            Stage::Inet => "inet",
            Stage::Compare => "compare",
            Stage::Upzones => "upzones",
            Stage::Correlate => "correlate",
            Stage::Train => "train",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = ServiceError;
    fn from_str(s: &str) -> Result<Self, ServiceError> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ServiceError::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSource {
    pub path: PathBuf,
    /// Tag every record with this platform instead of reading the column.
    #[serde(default)]
    pub platform: Option<Platform>,
    #[serde(default)]
    pub format: Option<RecordFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    #[serde(default)]
    pub interactions: Vec<InteractionSource>,
    #[serde(default)]
    pub venues: Option<PathBuf>,
    #[serde(default = "one")]
    pub min_distinct_regions: usize,
    #[serde(default)]
    pub window: Option<TimeWindow>,
}

impl Default for InputSpec {
    fn default() -> Self {
        Self { interactions: Vec::new(), venues: None, min_distinct_regions: 1, window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Feature collection whose polygons bound the tessellation.
    pub boundary: PathBuf,
    #[serde(default)]
    pub inclusion: Inclusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub level: Level,
    /// Feature collection of region boundaries.
    #[serde(default)]
    pub regions: Option<PathBuf>,
    /// Tessellate instead of reading boundaries; the level must be a hex
    /// resolution.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub context: Option<PathBuf>,
    /// Enclosing level; each region is mapped to the parent region
    /// containing its centroid.
    #[serde(default)]
    pub parent: Option<Level>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InetStage {
    pub max_regions_per_user: usize,
}

impl Default for InetStage {
    fn default() -> Self {
        Self { max_regions_per_user: AggregateOptions::default().max_regions_per_user }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareStage {
    pub mode: PairingMode,
    pub centrality_filter: Option<f64>,
}

impl Default for CompareStage {
    fn default() -> Self {
        Self { mode: PairingMode::Intersection, centrality_filter: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpzonesStage {
    pub gamma: f64,
    /// Defaults to the pipeline seed.
    pub seed: Option<u64>,
    /// Keep only this fraction of the heaviest edges before partitioning.
    pub filter_fraction: Option<f64>,
}

impl Default for UpzonesStage {
    fn default() -> Self {
        Self { gamma: 1.0, seed: None, filter_fraction: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateStage {
    pub factors: Vec<Factor>,
    pub filter_fraction: f64,
}

impl Default for CorrelateStage {
    fn default() -> Self {
        Self { factors: Factor::ALL.to_vec(), filter_fraction: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainStage {
    pub level: Level,
    #[serde(default)]
    pub fine_level: Option<Level>,
    #[serde(default = "three")]
    pub k: usize,
    #[serde(default = "two")]
    pub m: usize,
    #[serde(default = "twenty")]
    pub trials: usize,
    #[serde(default = "five")]
    pub importance_repeats: usize,
    /// Also train one model per mobility class.
    #[serde(default = "yes")]
    pub per_class: bool,
    /// Platforms whose interactions feed the recommender; all when unset.
    #[serde(default)]
    pub platforms: Option<Vec<Platform>>,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub search: SearchSpace,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}
fn five() -> usize {
    5
}
fn twenty() -> usize {
    20
}
fn yes() -> bool {
    true
}
fn default_seed() -> u64 {
    42
}

/// Pipeline configuration. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub inputs: InputSpec,
    #[serde(default)]
    pub levels: Vec<LevelSpec>,
    #[serde(default)]
    pub inet: InetStage,
    #[serde(default)]
    pub compare: CompareStage,
    #[serde(default)]
    pub upzones: UpzonesStage,
    #[serde(default)]
    pub correlate: CorrelateStage,
    #[serde(default)]
    pub train: Option<TrainStage>,
}

impl PipelineConfig {
    /// Parse TOML (`.toml`) or JSON (anything else) text.
    pub fn parse(text: &str, toml_syntax: bool) -> Result<Self, ServiceError> {
        if toml_syntax {
            toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
        } else {
            serde_json::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, ServiceError> {
        let text =
            fs::read_to_string(path).map_err(|source| ServiceError::Io { path: path.to_path_buf(), source })?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let mut cfg = Self::parse(&text, is_toml)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.inputs.interactions.iter_mut().for_each(|s| fix(&mut s.path));
        if let Some(v) = self.inputs.venues.as_mut() {
            fix(v);
        }
        for l in &mut self.levels {
            l.regions.as_mut().map(fix);
            l.context.as_mut().map(fix);
            if let Some(g) = l.grid.as_mut() {
                fix(&mut g.boundary);
            }
        }
    }

    fn input_files(&self) -> BTreeSet<&Path> {
        let mut files: BTreeSet<&Path> = self.inputs.interactions.iter().map(|s| s.path.as_path()).collect();
        files.extend(self.inputs.venues.as_deref());
        for l in &self.levels {
            files.extend(l.regions.as_deref());
            files.extend(l.context.as_deref());
            files.extend(l.grid.as_ref().map(|g| g.boundary.as_path()));
        }
        files
    }

    fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::Config(m));
        if self.inputs.interactions.is_empty() {
            return bad("inputs.interactions is empty".into());
        }
        if self.inputs.venues.is_none() {
            return bad("inputs.venues is required".into());
        }
        if self.levels.is_empty() {
            return bad("no levels configured".into());
        }
        let mut seen = BTreeSet::new();
        for l in &self.levels {
            if !seen.insert(l.level) {
                return bad(format!("level {} listed twice", l.level));
            }
            match (&l.regions, &l.grid) {
                (Some(_), Some(_)) | (None, None) => {
                    return bad(format!("level {}: give exactly one of `regions` or `grid`", l.level))
                }
                (None, Some(_)) if !matches!(l.level, Level::Hex(_)) => {
                    return bad(format!("level {}: grids need a hex level", l.level))
                }
                _ => {}
            }
        }
        for l in &self.levels {
            if let Some(p) = l.parent {
                if !seen.contains(&p) || p == l.level {
                    return bad(format!("level {}: parent {p} is not another configured level", l.level));
                }
            }
        }
        if let Some(t) = &self.train {
            if !seen.contains(&t.level) {
                return bad(format!("train.level {} is not configured", t.level));
            }
            if t.k < 1 {
                return bad("train.k must be at least 1".into());
            }
            if t.trials < 1 {
                return bad("train.trials must be at least 1".into());
            }
            if let Some(f) = t.fine_level {
                let parent = self.levels.iter().find(|l| l.level == f).and_then(|l| l.parent);
                if parent != Some(t.level) {
                    return bad(format!("train.fine_level {f} must list {} as its parent", t.level));
                }
                if t.m < 1 {
                    return bad("train.m must be at least 1 when fine_level is set".into());
                }
            }
        } else if self.stages.contains(&Stage::Train) {
            return bad("stage `train` needs a [train] section".into());
        }
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !frac_ok(self.correlate.filter_fraction)
            || self.upzones.filter_fraction.is_some_and(|f| !frac_ok(f))
            || self.compare.centrality_filter.is_some_and(|f| !frac_ok(f))
        {
            return bad("edge filter fractions must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Digest of the configuration (minus the stage list) and every input
    /// file's content.
    pub fn config_hash(&self) -> Result<String, ServiceError> {
        let mut canonical = self.clone();
        canonical.stages.clear();
        let mut text = serde_json::to_string(&canonical).expect("config serializes");
        for path in self.input_files() {
            let bytes = fs::read(path).map_err(|source| ServiceError::Io { path: path.to_path_buf(), source })?;
            text.push('\n');
            text.push_str(&sha256_hex(&bytes));
        }
        Ok(sha256_hex(text.as_bytes()))
    }
}

/// Config for a dataset written by [`crate::synth::write_dataset`] into
/// `dir`, with the coarse level as recommender level.
pub fn synth_config(ds: &SynthDataset, dir: &Path, stages: Vec<Stage>) -> PipelineConfig {
    let (coarse, fine) = (ds.coarse_level(), ds.fine_level());
    PipelineConfig {
        seed: ds.config.seed,
        stages,
        inputs: InputSpec {
            interactions: vec![InteractionSource {
                path: dir.join(SynthFiles::INTERACTIONS),
                platform: None,
                format: Some(RecordFormat::Csv),
            }],
            venues: Some(dir.join(SynthFiles::VENUES)),
            min_distinct_regions: 1,
            window: None,
        },
        levels: vec![
            LevelSpec {
                level: coarse,
                regions: Some(dir.join(SynthFiles::COARSE_REGIONS)),
                grid: None,
                context: Some(dir.join(SynthFiles::COARSE_CONTEXT)),
                parent: None,
            },
            LevelSpec {
                level: fine,
                regions: Some(dir.join(SynthFiles::FINE_REGIONS)),
                grid: None,
                context: Some(dir.join(SynthFiles::FINE_CONTEXT)),
                parent: Some(coarse),
            },
        ],
        inet: InetStage::default(),
        compare: CompareStage::default(),
        upzones: UpzonesStage::default(),
        correlate: CorrelateStage::default(),
        train: Some(TrainStage {
            level: coarse,
            fine_level: Some(fine),
            k: ds.config.k,
            m: 2,
            trials: 20,
            importance_repeats: 5,
            per_class: true,
            platforms: None,
            features: FeatureConfig::default(),
            search: SearchSpace::default(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub manifest: Manifest,
}

/// What a stage hands back for committing.
struct Output {
    name: String,
    kind: ArtifactKind,
    ext: &'static str,
    bytes: Vec<u8>,
}

impl Output {
    fn json(name: String, kind: ArtifactKind, value: &impl Serialize) -> Self {
        let bytes = serde_json::to_vec(value).expect("artifact serializes");
        Self { name, kind, ext: "json", bytes }
    }

    fn text(name: String, kind: ArtifactKind, ext: &'static str, text: String) -> Self {
        Self { name, kind, ext, bytes: text.into_bytes() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StageMarker {
    stage: Stage,
    outputs: Vec<String>,
}

struct LevelData {
    catalog: RegionCatalog,
    assignment: VenueAssignment,
    /// Interactions surviving the user filter at this level.
    interactions: Vec<Interaction>,
    counts: BTreeMap<Platform, Vec<UserRegionCounts>>,
    report: Value,
}

/// Lazily built in-memory state shared by the stages of one run.
struct Workspace<'a> {
    cfg: &'a PipelineConfig,
    projection: Option<Projection>,
    venues: Vec<Venue>,
    levels: BTreeMap<Level, LevelData>,
    nets: BTreeMap<(Platform, Level), INet>,
}

impl<'a> Workspace<'a> {
    fn new(cfg: &'a PipelineConfig) -> Self {
        Self { cfg, projection: None, venues: Vec::new(), levels: BTreeMap::new(), nets: BTreeMap::new() }
    }

    fn ensure_levels(&mut self) -> Result<(), ServiceError> {
        if self.projection.is_some() {
            return Ok(());
        }
        let cfg = self.cfg;
        let venue_path = cfg.inputs.venues.as_deref().expect("validated");
        let venues = load_venues(venue_path)?.records;
        let projection = Projection::for_extent(venues.iter().map(|v| &v.location))
            .ok_or_else(|| ServiceError::Config("venue file has no valid venues".into()))?;
        let mut interactions = Vec::new();
        for src in &cfg.inputs.interactions {
            let format = src.format.unwrap_or_else(|| RecordFormat::from_path(&src.path));
            interactions.extend(load_interactions(&src.path, src.platform, format)?.records);
        }

        for spec in &cfg.levels {
            let (mut regions, mut warnings) = match (&spec.regions, &spec.grid) {
                (Some(path), _) => {
                    let text = fs::read_to_string(path)
                        .map_err(|source| ServiceError::Io { path: path.clone(), source })?;
                    let features = parse_features(&text, &path.display().to_string())?;
                    regions_from_features(&features, spec.level, &projection)
                }
                (None, Some(grid)) => {
                    let Level::Hex(res) = spec.level else { unreachable!("validated") };
                    let text = fs::read_to_string(&grid.boundary)
                        .map_err(|source| ServiceError::Io { path: grid.boundary.clone(), source })?;
                    let features = parse_features(&text, &grid.boundary.display().to_string())?;
                    let (shapes, w) = regions_from_features(&features, spec.level, &projection);
                    let polygons = shapes.into_iter().filter_map(|r| r.boundary).flat_map(|s| s.polygons).collect();
                    let cells = tessellate(&crate::geo::Shape::new(polygons), res, grid.inclusion);
                    (cells_to_regions(&cells), w)
                }
                (None, None) => unreachable!("validated"),
            };
            let context = match &spec.context {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|source| ServiceError::Io { path: path.clone(), source })?;
                    let rep = apply_context(&text, &mut regions, &path.display().to_string())?;
                    warnings.extend(rep.rejected.iter().map(|r| format!("context row rejected: {r}")));
                    Some(rep)
                }
                None => None,
            };
            let assignment = assign_venues_to_regions(&venues, &regions, &projection);
            attach_category_freq(&mut regions, &venues, &assignment);
            let kept = filter_users(&interactions, &assignment, cfg.inputs.min_distinct_regions, cfg.inputs.window);
            let platforms: BTreeSet<Platform> = kept.iter().map(|i| i.platform).collect();
            let counts = platforms
                .into_iter()
                .map(|p| {
                    let subset: Vec<Interaction> = kept.iter().filter(|i| i.platform == p).cloned().collect();
                    (p, build_user_counts(&subset, &assignment))
                })
                .collect::<BTreeMap<_, _>>();
            let report = json!({
                "level": spec.level,
                "regions": regions.len(),
                "venues_unassigned": assignment.unassigned.len(),
                "interactions_kept": kept.len(),
                "users": counts.iter().map(|(p, c)| (p.to_string(), c.len())).collect::<BTreeMap<_, _>>(),
                "context": context,
                "warnings": warnings,
            });
            info!("level {}: {} regions, {} interactions kept", spec.level, regions.len(), kept.len());
            self.levels.insert(
                spec.level,
                LevelData {
                    catalog: RegionCatalog::new(spec.level, regions),
                    assignment,
                    interactions: kept,
                    counts,
                    report,
                },
            );
        }

        for spec in &cfg.levels {
            let Some(parent_level) = spec.parent else { continue };
            let parents: Vec<Region> = self.levels[&parent_level].catalog.regions.values().cloned().collect();
            let probes: Vec<Venue> = self.levels[&spec.level]
                .catalog
                .regions
                .values()
                .map(|r| Venue {
                    venue_id: r.region_id.clone(),
                    name: String::new(),
                    category: String::new(),
                    location: projection.unproject(r.centroid),
                })
                .collect();
            let map = assign_venues_to_regions(&probes, &parents, &projection).map;
            self.levels.get_mut(&spec.level).expect("loaded").catalog.parent = map;
        }
        self.venues = venues;
        self.projection = Some(projection);
        Ok(())
    }

    fn ensure_nets(&mut self) -> Result<(), ServiceError> {
        self.ensure_levels()?;
        if !self.nets.is_empty() {
            return Ok(());
        }
        let opts = AggregateOptions { max_regions_per_user: self.cfg.inet.max_regions_per_user };
        for (level, data) in &self.levels {
            for (platform, counts) in &data.counts {
                let mut net = aggregate_with(counts, *level, *platform, opts);
                // every region is a node even when nobody reviewed it
                net.nodes.extend(data.catalog.regions.keys().cloned());
                self.nets.insert((*platform, *level), net);
            }
        }
        Ok(())
    }

    fn run(&mut self, stage: Stage) -> Result<Vec<Output>, ServiceError> {
        match stage {
            Stage::Regions => self.stage_regions(),
            Stage::Inet => self.stage_inet(),
            Stage::Compare => self.stage_compare(),
            Stage::Upzones => self.stage_upzones(),
            Stage::Correlate => self.stage_correlate(),
            Stage::Train => self.stage_train(),
        }
    }

    fn stage_regions(&mut self) -> Result<Vec<Output>, ServiceError> {
        self.ensure_levels()?;
        let projection = self.projection.as_ref().expect("loaded");
        let mut out = Vec::new();
        for (level, data) in &self.levels {
            let regions: Vec<Region> = data.catalog.regions.values().cloned().collect();
            out.push(Output::json(names::regions(*level), ArtifactKind::Regions, &data.catalog));
            out.push(Output {
                name: names::regions_geojson(*level),
                kind: ArtifactKind::Regions,
                ext: "geojson",
                bytes: serde_json::to_vec(&regions_to_geojson(&regions, projection)).expect("geojson serializes"),
            });
            out.push(Output::json(names::regions_report(*level), ArtifactKind::Report, &data.report));
        }
        Ok(out)
    }

    fn stage_inet(&mut self) -> Result<Vec<Output>, ServiceError> {
        self.ensure_nets()?;
        Ok(self.nets.iter().map(|((p, l), net)| Output::json(names::inet(*p, *l), ArtifactKind::Inet, net)).collect())
    }

    /// Same-level platform pairs, in platform order.
    fn platform_pairs(&self) -> Vec<(Level, Platform, Platform)> {
        let mut pairs = Vec::new();
        for level in self.levels.keys() {
            let ps: Vec<Platform> = self.nets.keys().filter(|(_, l)| l == level).map(|(p, _)| *p).collect();
            for i in 0..ps.len() {
                for j in (i + 1)..ps.len() {
                    pairs.push((*level, ps[i], ps[j]));
                }
            }
        }
        pairs
    }

    fn stage_compare(&mut self) -> Result<Vec<Output>, ServiceError> {
        self.ensure_nets()?;
        let opts = CompareOptions {
            mode: self.cfg.compare.mode,
            centrality_filter: self.cfg.compare.centrality_filter,
            ..CompareOptions::default()
        };
        let mut out = Vec::new();
        for (level, a, b) in self.platform_pairs() {
            let report = compare_inets(&self.nets[&(a, level)], &self.nets[&(b, level)], &opts)?;
            out.push(Output::json(names::compare((a, level), (b, level)), ArtifactKind::Compare, &report));
        }
        Ok(out)
    }

    fn stage_upzones(&mut self) -> Result<Vec<Output>, ServiceError> {
        self.ensure_nets()?;
        let cfg = &self.cfg.upzones;
        let seed = cfg.seed.unwrap_or(self.cfg.seed);
        let mut out = Vec::new();
        let mut sets = BTreeMap::new();
        for ((platform, level), net) in &self.nets {
            let net = match cfg.filter_fraction {
                Some(f) => filter_top_edges(net, f)?,
                None => net.clone(),
            };
            let zones = leiden(&net, cfg.gamma, seed)?;
            let data = &self.levels[level];
            let profiles = profile_zones(&zones, &self.venues, &data.assignment);
            let connectivity = matches!(level, Level::Hex(_))
                .then(|| spatial_connectivity(&zones, |c| neighbor_ids(c).unwrap_or_default()));
            out.push(Output::json(
                names::upzones(*platform, *level),
                ArtifactKind::Upzones,
                &json!({"zones": zones, "profiles": profiles, "connectivity": connectivity}),
            ));
            sets.insert((*platform, *level), zones);
        }
        for (level, a, b) in self.platform_pairs() {
            let (za, zb) = (&sets[&(a, level)], &sets[&(b, level)]);
            let value = match (zone_similarity(za, zb), hungarian_align(za, zb)) {
                (Ok(sim), Ok(align)) => json!({"similarity": sim, "alignment": align}),
                (Err(e), _) | (_, Err(e)) => json!({"error": e.to_string()}),
            };
            out.push(Output::json(names::upzone_similarity(a, b, level), ArtifactKind::Upzones, &value));
        }
        Ok(out)
    }

    fn stage_correlate(&mut self) -> Result<Vec<Output>, ServiceError> {
        self.ensure_nets()?;
        let cfg = &self.cfg.correlate;
        let mut out = Vec::new();
        let mut columns = Vec::new();
        for ((platform, level), net) in &self.nets {
            let filtered = filter_top_edges(net, cfg.filter_fraction)?;
            let regions = &self.levels[level].catalog.regions;
            let mut rows = Vec::new();
            let mut errors = BTreeMap::new();
            for factor in &cfg.factors {
                match correlate_edges_with_factor(&filtered, regions, (*factor).into()) {
                    Ok(row) => rows.push(row),
                    Err(e) => {
                        errors.insert(factor.to_string(), e.to_string());
                    }
                }
            }
            out.push(Output::json(
                names::correlations(*platform, *level),
                ArtifactKind::Correlations,
                &json!({
                    "net": super::api::net_key(*platform, *level),
                    "filter_fraction": cfg.filter_fraction,
                    "edges": filtered.edges.len(),
                    "rows": rows,
                    "errors": errors,
                }),
            ));
            columns.push((super::api::net_key(*platform, *level), rows));
        }
        out.push(Output::text(names::CORRELATION_TABLE.into(), ArtifactKind::Correlations, "csv", factor_table_csv(&columns)));
        Ok(out)
    }

    fn train_counts(&self, level: Level, platforms: &Option<Vec<Platform>>) -> Vec<UserRegionCounts> {
        let data = &self.levels[&level];
        let kept: Vec<Interaction> = data
            .interactions
            .iter()
            .filter(|i| platforms.as_ref().is_none_or(|ps| ps.contains(&i.platform)))
            .cloned()
            .collect();
        build_user_counts(&kept, &data.assignment)
    }

    fn stage_train(&mut self) -> Result<Vec<Output>, ServiceError> {
        self.ensure_levels()?;
        let t = self.cfg.train.as_ref().expect("validated");
        let seed = self.cfg.seed;
        let mut out = Vec::new();
        let fit = |level: Level, profiles: &[UserInterestProfile], class: Option<MobilityClass>, out: &mut Vec<Output>| {
            let regions = &self.levels[&level].catalog.regions;
            let (data, dataset) = build_dataset(profiles, regions, &t.features);
            let (model, report) = train_with_report(&data, &t.search, t.trials, t.importance_repeats, seed)?;
            info!(
                "trained {}: {} rows, held-out recall {:.3} f1 {:.3}",
                names::model(level, class),
                data.len(),
                report.held_out.recall,
                report.held_out.f1
            );
            if class.is_none() {
                out.push(Output::text(names::features(level), ArtifactKind::Features, "csv", data.to_csv()));
            }
            let lm = LevelModel { level, features: t.features.clone(), model };
            out.push(Output::json(names::model(level, class), ArtifactKind::Model, &lm));
            Ok::<_, ServiceError>(json!({"dataset": dataset, "train": report}))
        };

        let profiles: Vec<UserInterestProfile> =
            self.train_counts(t.level, &t.platforms).iter().map(|c| label_user(c, t.k)).collect();
        let mut report = BTreeMap::new();
        report.insert("global".to_string(), fit(t.level, &profiles, None, &mut out)?);
        let mut classes = Vec::new();
        if t.per_class {
            let regions = &self.levels[&t.level].catalog.regions;
            let mut by_class: BTreeMap<MobilityClass, Vec<UserInterestProfile>> = BTreeMap::new();
            for p in profiles.iter().filter(|p| p.eligible) {
                let class = classify_mobility(p, regions)?.class;
                by_class.entry(class).or_default().push(p.clone());
            }
            for (class, group) in by_class {
                let key = serde_json::to_value(class).expect("class serializes").as_str().unwrap_or_default().to_string();
                match fit(t.level, &group, Some(class), &mut out) {
                    Ok(r) => {
                        classes.push(class);
                        report.insert(key, r);
                    }
                    // a class too small to train falls back to the global model
                    Err(ServiceError::Recsys(e)) => {
                        report.insert(key, json!({"skipped": e.to_string(), "users": group.len()}));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        out.push(Output::json(names::train_report(t.level), ArtifactKind::Report, &report));
        if let Some(fine) = t.fine_level {
            let fine_profiles: Vec<UserInterestProfile> =
                self.train_counts(fine, &t.platforms).iter().map(|c| label_user(c, t.m)).collect();
            let r = fit(fine, &fine_profiles, None, &mut out)?;
            out.push(Output::json(names::train_report(fine), ArtifactKind::Report, &json!({"global": r})));
        }
        let info = super::api::RecommenderInfo {
            coarse_level: t.level,
            fine_level: t.fine_level,
            k: t.k,
            m: t.m,
            class_models: classes,
            templates: Templates::default(),
        };
        out.push(Output::json(names::RECOMMENDER.into(), ArtifactKind::Model, &info));
        Ok(out)
    }
}

fn up_to_date(store: &ArtifactStore, stage: Stage, hash: &str) -> bool {
    let name = names::stage(stage);
    let Some(entry) = store.entry(&name) else { return false };
    if entry.config_hash != hash {
        return false;
    }
    let Ok(marker) = store.get_json::<StageMarker>(&name) else { return false };
    marker.outputs.iter().all(|o| store.entry(o).is_some_and(|e| e.config_hash == hash) && store.get(o).is_ok())
}

/// Run the configured stages against the store at `store_root`.
///
/// Stages whose outputs already exist for the same config hash are skipped;
/// a failing stage commits nothing. Holds the store lock throughout.
pub fn run_pipeline(cfg: &PipelineConfig, store_root: &Path) -> Result<PipelineReport, ServiceError> {
    let mut store = ArtifactStore::open(store_root)?;
    let _lock = store.lock()?;
    let mut report = PipelineReport { config_hash: String::new(), ran: Vec::new(), skipped: Vec::new(), manifest: Manifest::default() };
    if cfg.stages.is_empty() {
        report.manifest = store.manifest().clone();
        return Ok(report);
    }
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    report.config_hash = hash.clone();
    let wanted: BTreeSet<Stage> = cfg.stages.iter().copied().collect();
    let mut ws = Workspace::new(cfg);
    for stage in wanted {
        if up_to_date(&store, stage, &hash) {
            info!("stage {stage}: up to date");
            report.skipped.push(stage);
            continue;
        }
        info!("stage {stage}: running");
        let outputs = ws.run(stage).map_err(|e| ServiceError::Stage { stage, source: Box::new(e) })?;
        let marker_name = names::stage(stage);
        let previous: Vec<String> = store.get_json::<StageMarker>(&marker_name).map(|m| m.outputs).unwrap_or_default();
        let mut store_next = store.clone();
        let commit = (|| {
            for o in &outputs {
                store_next.put(&o.name, o.kind, o.ext, &o.bytes, &hash)?;
            }
            let produced: BTreeSet<&str> = outputs.iter().map(|o| o.name.as_str()).collect();
            for stale in previous.iter().filter(|p| !produced.contains(p.as_str())) {
                store_next.remove(stale);
            }
            let marker = StageMarker { stage, outputs: outputs.iter().map(|o| o.name.clone()).collect() };
            let bytes = serde_json::to_vec(&marker).expect("marker serializes");
            store_next.put(&marker_name, ArtifactKind::Report, "json", &bytes, &hash)?;
            store_next.save_manifest()
        })();
        commit.map_err(|e| ServiceError::Stage { stage, source: Box::new(e) })?;
        store = store_next;
        report.ran.push(stage);
    }
    report.manifest = store.manifest().clone();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stage_list_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::parse("seed = 1\nstages = []\n", true).unwrap();
        let report = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(report.manifest.artifacts.is_empty());
        assert!(report.ran.is_empty());
    }

    #[test]
    fn config_errors_are_reported() {
        let cfg = PipelineConfig::parse(r#"{"stages": ["inet"]}"#, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(run_pipeline(&cfg, dir.path()), Err(ServiceError::Config(_))));
        assert!(PipelineConfig::parse("stages = [\"bogus\"]", true).is_err());
        assert!(PipelineConfig::parse("surprise = 1", true).is_err());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
    }
}
