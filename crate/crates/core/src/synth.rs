//! Seeded synthetic LBSN datasets with planted zones, venue archetypes and
//! returner/explorer users.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geo::{LatLon, Point, Projection, Shape};
use crate::hexgrid::{HexGrid, Resolution, NEIGHBOR_OFFSETS};
use crate::ingest::{regions_to_geojson, ContextProfile, Interaction, Level, Platform, Region, Venue, SCENE_DIMS};
use crate::recsys::{classify_mobility, profile_from_ranked, MobilityClass};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

const ARCHETYPE_CATEGORIES: [[&str; 4]; 8] = [
    ["Bar", "Pub", "Night Club", "Music Venue"],
    ["Restaurant", "Cafe", "Bakery", "Pizza Place"],
    ["Park", "Trail", "Plaza", "Garden"],
    ["Shopping Mall", "Clothing Store", "Market", "Bookstore"],
    ["Museum", "Theater", "Art Gallery", "Library"],
    ["Office", "Coworking Space", "Bank", "Government Building"],
    ["Gym", "Stadium", "Pool", "Sports Club"],
    ["Hotel", "Hostel", "Bus Station", "Tourist Information"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub center: LatLon,
    pub n_users: usize,
    pub n_regions: usize,
    pub coarse_resolution: Resolution,
    pub fine_resolution: Resolution,
    /// Inclusive range of distinct coarse regions per user.
    pub regions_per_user: (usize, usize),
    pub distance_decay_exponent: f64,
    pub n_archetypes: usize,
    pub planted_zone_count: usize,
    pub returner_fraction: f64,
    pub k: usize,
    /// Share of users whose k-th count strictly beats the (k+1)-th.
    pub strict_fraction: f64,
    /// Probability that a visit stays inside the home zone.
    pub zone_confinement: f64,
    /// Share of venue categories drawn from the region's archetype.
    pub archetype_affinity: f64,
    pub venues_per_fine_region: usize,
    /// Share of users reviewing on FS; the rest are GP.
    pub fs_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            center: LatLon::new(-25.43, -49.27),
            n_users: 2000,
            n_regions: 60,
            coarse_resolution: Resolution::H7,
            fine_resolution: Resolution::H8,
            regions_per_user: (5, 9),
            distance_decay_exponent: 1.0,
            n_archetypes: 4,
            planted_zone_count: 4,
            returner_fraction: 0.5,
            k: 3,
            strict_fraction: 0.9,
            zone_confinement: 0.9,
            archetype_affinity: 0.8,
            venues_per_fine_region: 3,
            fs_fraction: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let (lo, hi) = self.regions_per_user;
        if self.n_users == 0 || self.n_regions == 0 || self.venues_per_fine_region == 0 {
            return bad("counts must be positive");
        }
        if !(self.distance_decay_exponent > 0.0 && self.distance_decay_exponent.is_finite()) {
            return bad("distance_decay_exponent must be positive");
        }
        if self.n_archetypes == 0 || self.n_archetypes > ARCHETYPE_CATEGORIES.len() {
            return bad("n_archetypes must be between 1 and 8");
        }
        if self.planted_zone_count == 0 || self.planted_zone_count > self.n_regions {
            return bad("planted_zone_count must be between 1 and n_regions");
        }
        if self.k == 0 || lo < 1 || lo > hi {
            return bad("k and regions_per_user must be positive with min <= max");
        }
        if hi > self.n_regions {
            return bad("regions_per_user exceeds n_regions");
        }
        for (name, v) in [
            ("returner_fraction", self.returner_fraction),
            ("strict_fraction", self.strict_fraction),
            ("zone_confinement", self.zone_confinement),
            ("archetype_affinity", self.archetype_affinity),
            ("fs_fraction", self.fs_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.fine_resolution.target_area_m2() >= self.coarse_resolution.target_area_m2() {
            return bad("fine_resolution must be finer than coarse_resolution");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUser {
    pub home: String,
    pub class: MobilityClass,
    pub platform: Platform,
    pub strict: bool,
    /// The generated visits did not reach the planted class.
    pub class_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub zones: BTreeMap<String, usize>,
    pub fine_zones: BTreeMap<String, usize>,
    pub archetypes: BTreeMap<String, usize>,
    pub parent: BTreeMap<String, String>,
    pub users: BTreeMap<String, PlantedUser>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub projection: Projection,
    pub interactions: Vec<Interaction>,
    pub venues: Vec<Venue>,
    pub coarse: Vec<Region>,
    pub fine: Vec<Region>,
    pub truth: SynthTruth,
}

impl SynthDataset {
    pub fn coarse_level(&self) -> Level {
        Level::Hex(self.config.coarse_resolution)
    }

    pub fn fine_level(&self) -> Level {
        Level::Hex(self.config.fine_resolution)
    }
}

fn random_context(rng: &mut ChaCha8Rng, scale: f64) -> ContextProfile {
    let population = (rng.random_range(5_000.0..50_000.0) * scale).round();
    let shares: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = shares.iter().sum();
    let race_counts = ["white", "black", "asian", "hispanic"]
        .iter()
        .zip(&shares)
        .map(|(r, s)| (r.to_string(), (population * s / total).round()))
        .collect();
    ContextProfile {
        population: Some(population),
        income: Some(rng.random_range(1_000.0..10_000.0f64).round()),
        education: Some(rng.random_range(0.05..0.6)),
        employment: Some(rng.random_range(0.5..0.95)),
        literacy: None,
        vote_share: Some(rng.random_range(0.2..0.8)),
        race_counts,
        scene_vector: Some((0..SCENE_DIMS).map(|_| rng.random_range(0.0..5.0)).collect()),
        category_freq: BTreeMap::new(),
    }
}

/// Draw `n` distinct items without replacement with the given weights.
fn weighted_sample(rng: &mut ChaCha8Rng, pool: &[usize], weight: impl Fn(usize) -> f64, n: usize) -> Vec<usize> {
    let mut left: Vec<usize> = pool.to_vec();
    let mut out = Vec::with_capacity(n);
    while out.len() < n && !left.is_empty() {
        let w: Vec<f64> = left.iter().map(|&i| weight(i)).collect();
        let total: f64 = w.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = left.len() - 1;
        for (j, wj) in w.iter().enumerate() {
            if pick < *wj {
                chosen = j;
                break;
            }
            pick -= wj;
        }
        out.push(left.swap_remove(chosen));
    }
    out
}

struct World {
    cells: Vec<Region>,
    zone: Vec<usize>,
    archetype: Vec<usize>,
    dist: Vec<Vec<f64>>,
    spacing: f64,
}

impl World {
    /// Regions for one draw: the home zone with probability `confinement`.
    fn pool(&self, rng: &mut ChaCha8Rng, home: usize, confinement: f64, exclude: &BTreeSet<usize>) -> Vec<usize> {
        let in_zone = rng.random::<f64>() < confinement;
        (0..self.cells.len()).filter(|i| !exclude.contains(i) && (!in_zone || self.zone[*i] == self.zone[home])).collect()
    }

    fn draw(
        &self,
        rng: &mut ChaCha8Rng,
        home: usize,
        confinement: f64,
        exclude: &mut BTreeSet<usize>,
        allowed: impl Fn(usize) -> bool,
        exponent: f64,
    ) -> Option<usize> {
        let mut pool: Vec<usize> = self.pool(rng, home, confinement, exclude).into_iter().filter(|i| allowed(*i)).collect();
        if pool.is_empty() {
            pool = (0..self.cells.len()).filter(|i| !exclude.contains(i) && allowed(*i)).collect();
        }
        let decay = |i: usize| (self.dist[home][i] + self.spacing).powf(-exponent);
        let pick = *weighted_sample(rng, &pool, decay, 1).first()?;
        exclude.insert(pick);
        Some(pick)
    }
}

fn build_world(config: &SynthConfig, rng: &mut ChaCha8Rng) -> World {
    let grid = HexGrid::new(config.coarse_resolution, Point::new(0.0, 0.0));
    // rings of cells around the origin, nearest first
    let radius = (config.n_regions as f64).sqrt() as i64 + 2;
    let mut axial: Vec<(i64, i64)> = Vec::new();
    for q in -radius..=radius {
        for r in -radius..=radius {
            axial.push((q, r));
        }
    }
    let mut cells: Vec<_> = axial.into_iter().map(|(q, r)| grid.cell(q, r)).collect();
    cells.sort_by(|a, b| {
        let (da, db) = (a.center.x.hypot(a.center.y), b.center.x.hypot(b.center.y));
        da.total_cmp(&db).then_with(|| a.cell_id.cmp(&b.cell_id))
    });
    cells.truncate(config.n_regions);
    cells.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));

    // zones are angular sectors of equal size
    let n = cells.len();
    let mut by_angle: Vec<usize> = (0..n).collect();
    by_angle.sort_by(|&a, &b| {
        let ang = |i: usize| cells[i].center.y.atan2(cells[i].center.x);
        ang(a).total_cmp(&ang(b)).then(a.cmp(&b))
    });
    let mut zone = vec![0; n];
    for (rank, &i) in by_angle.iter().enumerate() {
        zone[i] = rank * config.planted_zone_count / n;
    }
    // archetypes cycle within each zone so every zone holds every archetype
    let mut archetype = vec![0; n];
    for z in 0..config.planted_zone_count {
        let mut members: Vec<usize> = (0..n).filter(|i| zone[*i] == z).collect();
        members.shuffle(rng);
        let offset = rng.random_range(0..config.n_archetypes);
        for (j, i) in members.into_iter().enumerate() {
            archetype[i] = (j + offset) % config.n_archetypes;
        }
    }
    let regions: Vec<Region> = cells
        .iter()
        .map(|c| Region {
            region_id: c.cell_id.clone(),
            level: Level::Hex(config.coarse_resolution),
            boundary: Some(Shape::new(vec![c.polygon()])),
            centroid: c.center,
            context: Some(random_context(rng, 1.0)),
        })
        .collect();
    let dist = regions.iter().map(|a| regions.iter().map(|b| a.centroid.distance(&b.centroid)).collect()).collect();
    World { cells: regions, zone, archetype, dist, spacing: config.coarse_resolution.edge_length() * 3f64.sqrt() }
}

fn review_counts(rng: &mut ChaCha8Rng, n: usize, k: usize, strict: bool) -> Vec<u32> {
    let bottom: Vec<u32> = (k..n).map(|_| rng.random_range(1..=2)).collect();
    let bottom_max = bottom.iter().copied().max().unwrap_or(0);
    let mut top = Vec::with_capacity(k.min(n));
    let mut c = if strict { bottom_max + 1 + rng.random_range(0..=1) } else { bottom_max.max(1) };
    for _ in 0..k.min(n) {
        top.push(c);
        c += rng.random_range(1..=2);
    }
    top.reverse();
    top.extend(bottom);
    top
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let world = build_world(config, &mut rng);
    let n = world.cells.len();
    let projection = Projection::new(config.center);

    // fine regions: finer cells whose centers fall inside a coarse cell
    let coarse_grid = HexGrid::new(config.coarse_resolution, Point::new(0.0, 0.0));
    let coarse_index: BTreeMap<&str, usize> = world.cells.iter().enumerate().map(|(i, r)| (r.region_id.as_str(), i)).collect();
    let fine_grid = HexGrid::new(config.fine_resolution, Point::new(0.0, 0.0));
    let extent = world.cells.iter().map(|r| r.centroid.x.abs().max(r.centroid.y.abs())).fold(0.0, f64::max)
        + 2.0 * config.coarse_resolution.edge_length();
    let fine_step = config.fine_resolution.edge_length();
    let span = (extent / fine_step).ceil() as i64 + 2;
    let mut fine_cells = Vec::new();
    let mut fine_parent: Vec<usize> = Vec::new();
    for q in -span..=span {
        for r in -span..=span {
            let cell = fine_grid.cell(q, r);
            if cell.center.x.abs() > extent || cell.center.y.abs() > extent {
                continue;
            }
            if let Some(&p) = coarse_index.get(coarse_grid.locate_xy(&cell.center).as_str()) {
                fine_cells.push(cell);
                fine_parent.push(p);
            }
        }
    }
    let mut order: Vec<usize> = (0..fine_cells.len()).collect();
    order.sort_by(|&a, &b| fine_cells[a].cell_id.cmp(&fine_cells[b].cell_id));
    let fine_cells: Vec<_> = order.iter().map(|&i| fine_cells[i].clone()).collect();
    let fine_parent: Vec<usize> = order.iter().map(|&i| fine_parent[i]).collect();
    let fine: Vec<Region> = fine_cells
        .iter()
        .map(|c| Region {
            region_id: c.cell_id.clone(),
            level: Level::Hex(config.fine_resolution),
            boundary: Some(Shape::new(vec![c.polygon()])),
            centroid: c.center,
            context: Some(random_context(&mut rng, config.fine_resolution.target_area_m2() / config.coarse_resolution.target_area_m2())),
        })
        .collect();
    let mut subregions: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (f, p) in fine_parent.iter().enumerate() {
        subregions[*p].push(f);
    }

    // venues
    let mut venues = Vec::new();
    let mut fine_venues: Vec<Vec<usize>> = vec![Vec::new(); fine.len()];
    let all_categories: Vec<&str> = ARCHETYPE_CATEGORIES[..config.n_archetypes].iter().flatten().copied().collect();
    for (f, cell) in fine_cells.iter().enumerate() {
        let arch = world.archetype[fine_parent[f]];
        for j in 0..config.venues_per_fine_region {
            let category = if rng.random::<f64>() < config.archetype_affinity {
                *ARCHETYPE_CATEGORIES[arch].choose(&mut rng).expect("nonempty pool")
            } else {
                *all_categories.choose(&mut rng).expect("nonempty pool")
            };
            let jitter = 0.25 * fine_step;
            let mut p = Point::new(
                cell.center.x + rng.random_range(-jitter..jitter),
                cell.center.y + rng.random_range(-jitter..jitter),
            );
            if coarse_grid.locate_xy(&p) != world.cells[fine_parent[f]].region_id {
                p = cell.center;
            }
            fine_venues[f].push(venues.len());
            venues.push(Venue {
                venue_id: format!("v{:05}", venues.len()),
                name: format!("{category} {}", j + 1),
                category: category.to_string(),
                location: projection.unproject(p),
            });
        }
    }

    // users
    let coarse_map: BTreeMap<String, Region> = world.cells.iter().map(|r| (r.region_id.clone(), r.clone())).collect();
    let alpha = config.distance_decay_exponent;
    let mut interactions = Vec::new();
    let mut users = BTreeMap::new();
    const START: i64 = 1_672_531_200;
    const YEAR: i64 = 365 * 24 * 3600;
    for u in 0..config.n_users {
        let user_id = format!("u{u:05}");
        let home = rng.random_range(0..n);
        let class = if rng.random::<f64>() < config.returner_fraction { MobilityClass::Returner } else { MobilityClass::Explorer };
        let platform = if rng.random::<f64>() < config.fs_fraction { Platform::Fs } else { Platform::Gp };
        let strict = rng.random::<f64>() < config.strict_fraction;
        let n_visits = rng.random_range(config.regions_per_user.0..=config.regions_per_user.1);
        let top_n = config.k.min(n_visits);

        let mut visits: Vec<(usize, u32)> = Vec::new();
        let mut mismatch = true;
        for _attempt in 0..200 {
            let mut used = BTreeSet::new();
            let mut chosen = Vec::with_capacity(n_visits);
            match class {
                MobilityClass::Explorer => {
                    for _ in 0..top_n {
                        chosen.extend(world.draw(&mut rng, home, 1.0, &mut used, |_| true, 3.0 * alpha + 3.0));
                    }
                }
                MobilityClass::Returner => {
                    let fav = world.archetype[home];
                    for _ in 0..top_n {
                        let pick = world
                            .draw(&mut rng, home, config.zone_confinement, &mut used, |i| world.archetype[i] == fav, alpha / 4.0)
                            .or_else(|| world.draw(&mut rng, home, config.zone_confinement, &mut used, |_| true, alpha / 4.0));
                        chosen.extend(pick);
                    }
                }
            }
            while chosen.len() < n_visits {
                let exponent = if class == MobilityClass::Explorer { alpha / 2.0 } else { alpha };
                match world.draw(&mut rng, home, config.zone_confinement, &mut used, |_| true, exponent) {
                    Some(i) => chosen.push(i),
                    None => break,
                }
            }
            let counts = review_counts(&mut rng, chosen.len(), config.k, strict);
            visits = chosen.into_iter().zip(counts).collect();
            let ranked: Vec<(String, u32)> = visits.iter().map(|(i, c)| (world.cells[*i].region_id.clone(), *c)).collect();
            let profile = profile_from_ranked(&user_id, ranked, config.k);
            if classify_mobility(&profile, &coarse_map).is_ok_and(|s| s.class == class) {
                mismatch = false;
                break;
            }
        }

        let fav_fine: BTreeMap<usize, usize> = visits
            .iter()
            .filter(|(i, _)| !subregions[*i].is_empty())
            .map(|(i, _)| (*i, *subregions[*i].choose(&mut rng).expect("nonempty")))
            .collect();
        for (region, count) in &visits {
            let subs = &subregions[*region];
            if subs.is_empty() {
                continue;
            }
            for _ in 0..*count {
                let f = if rng.random::<f64>() < 0.7 { fav_fine[region] } else { *subs.choose(&mut rng).expect("nonempty") };
                let v = *fine_venues[f].choose(&mut rng).expect("venues per fine region is positive");
                interactions.push(Interaction {
                    user_id: user_id.clone(),
                    venue_id: venues[v].venue_id.clone(),
                    timestamp: START + rng.random_range(0..YEAR),
                    platform,
                    rating: Some(rng.random_range(1..=5) as f64),
                });
            }
        }
        users.insert(
            user_id,
            PlantedUser { home: world.cells[home].region_id.clone(), class, platform, strict, class_mismatch: mismatch },
        );
    }

    let truth = SynthTruth {
        zones: world.cells.iter().zip(&world.zone).map(|(r, z)| (r.region_id.clone(), *z)).collect(),
        fine_zones: fine.iter().zip(&fine_parent).map(|(r, p)| (r.region_id.clone(), world.zone[*p])).collect(),
        archetypes: world.cells.iter().zip(&world.archetype).map(|(r, a)| (r.region_id.clone(), *a)).collect(),
        parent: fine.iter().zip(&fine_parent).map(|(r, p)| (r.region_id.clone(), world.cells[*p].region_id.clone())).collect(),
        users,
    };
    Ok(SynthDataset { config: config.clone(), projection, interactions, venues, coarse: world.cells, fine, truth })
}

/// Axial neighbours of a coarse cell that exist in the dataset.
pub fn coarse_neighbors(ds: &SynthDataset, region_id: &str) -> Vec<String> {
    let Ok((res, q, r)) = crate::hexgrid::decode_cell_id(region_id) else { return Vec::new() };
    NEIGHBOR_OFFSETS
        .iter()
        .map(|(dq, dr)| crate::hexgrid::encode_cell_id(res, q + dq, r + dr))
        .filter(|id| ds.truth.zones.contains_key(id))
        .collect()
}

fn context_csv(regions: &[Region]) -> String {
    let mut out = String::from("region_id,population,income,education,employment,vote_share,white,black,asian,hispanic");
    for i in 1..=SCENE_DIMS {
        let _ = write!(out, ",s{i}");
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in regions {
        let Some(c) = &r.context else { continue };
        let race = |k: &str| c.race_counts.get(k).copied();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.region_id,
            opt(c.population),
            opt(c.income),
            opt(c.education),
            opt(c.employment),
            opt(c.vote_share),
            opt(race("white")),
            opt(race("black")),
            opt(race("asian")),
            opt(race("hispanic"))
        );
        for i in 0..SCENE_DIMS {
            let _ = write!(out, ",{}", opt(c.scene_vector.as_ref().map(|s| s[i])));
        }
        out.push('\n');
    }
    out
}

/// File names written by [`write_dataset`].
pub struct SynthFiles;

impl SynthFiles {
    pub const INTERACTIONS: &'static str = "interactions.csv";
    pub const VENUES: &'static str = "venues.csv";
    pub const COARSE_REGIONS: &'static str = "regions_coarse.geojson";
    pub const FINE_REGIONS: &'static str = "regions_fine.geojson";
    pub const COARSE_CONTEXT: &'static str = "context_coarse.csv";
    pub const FINE_CONTEXT: &'static str = "context_fine.csv";
    pub const TRUTH: &'static str = "truth.json";
}

/// Write the dataset in the ingest file formats. Returns the written paths.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut interactions = String::from("user_id,venue_id,ts,platform,rating\n");
    for it in &ds.interactions {
        let _ = writeln!(
            interactions,
            "{},{},{},{},{}",
            it.user_id,
            it.venue_id,
            it.timestamp,
            it.platform,
            it.rating.map(|r| r.to_string()).unwrap_or_default()
        );
    }
    let mut venues = String::from("venue_id,name,category,lat,lon\n");
    for v in &ds.venues {
        let _ = writeln!(venues, "{},{},{},{:.7},{:.7}", v.venue_id, v.name, v.category, v.location.lat, v.location.lon);
    }
    let geo = |regions: &[Region]| {
        let bare: Vec<Region> = regions.iter().map(|r| Region { context: None, ..r.clone() }).collect();
        serde_json::to_string(&regions_to_geojson(&bare, &ds.projection)).expect("geojson serializes")
    };
    let truth = serde_json::json!({
        "config": ds.config,
        "projection_center": ds.projection.center,
        "truth": ds.truth,
    });
    let files = [
        (SynthFiles::INTERACTIONS, interactions),
        (SynthFiles::VENUES, venues),
        (SynthFiles::COARSE_REGIONS, geo(&ds.coarse)),
        (SynthFiles::FINE_REGIONS, geo(&ds.fine)),
        (SynthFiles::COARSE_CONTEXT, context_csv(&ds.coarse)),
        (SynthFiles::FINE_CONTEXT, context_csv(&ds.fine)),
        (SynthFiles::TRUTH, serde_json::to_string_pretty(&truth).expect("truth serializes")),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { n_users: 150, n_regions: 24, ..Default::default() }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.interactions, c.interactions);
    }

    #[test]
    fn shape() {
        let ds = generate(&small()).unwrap();
        assert_eq!(ds.coarse.len(), 24);
        assert!(ds.fine.len() > ds.coarse.len());
        assert_eq!(ds.truth.users.len(), 150);
        assert_eq!(ds.truth.zones.values().collect::<BTreeSet<_>>().len(), 4);
        assert!(ds.venues.iter().all(|v| v.location.is_valid()));
        let users: BTreeSet<&str> = ds.interactions.iter().map(|i| i.user_id.as_str()).collect();
        assert_eq!(users.len(), 150);
    }

    #[test]
    fn infeasible_configs() {
        let bad = [
            SynthConfig { regions_per_user: (3, 30), n_regions: 20, ..small() },
            SynthConfig { distance_decay_exponent: 0.0, ..small() },
            SynthConfig { n_users: 0, ..small() },
            SynthConfig { fine_resolution: Resolution::H6, ..small() },
        ];
        for c in bad {
            assert!(matches!(generate(&c), Err(SynthError::Config(_))));
        }
    }
}
