use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use urbanet::hexgrid::{cells_to_regions, tessellate, Inclusion};
use urbanet::inet::{aggregate_with, build_user_counts, filter_top_edges, read_inet, write_inet, AggregateOptions};
use urbanet::ingest::{
    apply_context, assign_venues_to_regions, attach_category_freq, filter_users, load_interactions, load_venues,
    parse_features, regions_from_features, regions_to_geojson, Interaction, RecordFormat, VenueAssignment,
};
use urbanet::metrics::{compare_inets, correlate_edges_with_factor, factor_table_csv, CompareOptions, Factor, PairingMode};
use urbanet::recsys::{build_dataset, label_user, train_with_report, Dataset, FeatureConfig, SearchSpace};
use urbanet::service::{
    run_pipeline, synth_config, ArtifactStore, PipelineConfig, Query, RecommendRequest, Stage, UpzonesStage, UserMode,
    VisitedRegion,
};
use urbanet::synth::{generate, write_dataset, SynthConfig};
use urbanet::upzones::leiden;
use urbanet::{Level, Platform, Projection, Region, Resolution, Shape, Venue};

#[derive(Parser)]
#[command(name = "urbanet", version, about = "Interest networks over urban regions")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city with planted structure.
    Synth(SynthArgs),
    /// Tessellate a boundary into hex cells.
    Grid(GridArgs),
    /// Aggregate interactions into an interest network edge list.
    BuildInet(BuildInetArgs),
    /// Correlate two networks' edge weights and centralities.
    Compare(CompareArgs),
    /// Detect preference zones with Leiden.
    Upzones(UpzonesArgs),
    /// Spearman correlation of edge weights with contextual factors.
    Correlate(CorrelateArgs),
    /// Build the recommender feature table.
    Features(FeaturesArgs),
    /// Train the recommender on a feature table.
    Train(TrainArgs),
    /// Recommend regions from a trained store.
    Recommend(RecommendArgs),
    /// Serve a store over HTTP.
    Serve(ServeArgs),
    /// Run a configured pipeline into a store.
    Run(RunArgs),
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// SynthConfig as TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => read_config(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.users {
        cfg.n_users = n;
    }
    if let Some(n) = args.regions {
        cfg.n_regions = n;
    }
    let ds = generate(&cfg)?;
    write_dataset(&ds, &args.out)?;
    let pipeline = synth_config(&ds, Path::new(""), Stage::ALL.to_vec());
    let text = toml::to_string_pretty(&pipeline).context("serializing pipeline config")?;
    fs::write(args.out.join("pipeline.toml"), text)?;
    info!("{} interactions, {} venues written to {}", ds.interactions.len(), ds.venues.len(), args.out.display());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum InclusionArg {
    CenterInside,
    AnyOverlap,
}

#[derive(Args)]
struct GridArgs {
    /// Boundary feature collection.
    #[arg(long)]
    boundary: PathBuf,
    #[arg(long)]
    res: Resolution,
    #[arg(long, value_enum, default_value = "center-inside")]
    inclusion: InclusionArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn grid(args: GridArgs) -> Result<()> {
    let text = fs::read_to_string(&args.boundary).with_context(|| format!("reading {}", args.boundary.display()))?;
    let features = parse_features(&text, &args.boundary.display().to_string())?;
    let coords: Vec<_> = features.iter().flat_map(|f| f.coords()).collect();
    let projection = Projection::for_extent(coords.iter()).context("boundary has no coordinates")?;
    let (shapes, _) = regions_from_features(&features, Level::Hex(args.res), &projection);
    let boundary = Shape::new(shapes.into_iter().filter_map(|r| r.boundary).flat_map(|s| s.polygons).collect());
    let inclusion = match args.inclusion {
        InclusionArg::CenterInside => Inclusion::CenterInside,
        InclusionArg::AnyOverlap => Inclusion::AnyOverlap,
    };
    let cells = tessellate(&boundary, args.res, inclusion);
    info!("{} cells at {}", cells.len(), args.res);
    let geojson = regions_to_geojson(&cells_to_regions(&cells), &projection);
    emit(args.out.as_deref(), &serde_json::to_string(&geojson)?)
}

/// Region layer inputs shared by several commands.
#[derive(Args)]
struct RegionInputs {
    /// Region boundaries as a feature collection.
    #[arg(long)]
    regions: PathBuf,
    #[arg(long)]
    level: Level,
    #[arg(long)]
    venues: PathBuf,
    /// Context table (population, income, ...).
    #[arg(long)]
    context: Option<PathBuf>,
}

struct LoadedRegions {
    regions: Vec<Region>,
    venues: Vec<Venue>,
    assignment: VenueAssignment,
}

fn load_region_inputs(args: &RegionInputs) -> Result<LoadedRegions> {
    let venues = load_venues(&args.venues)?.records;
    let projection = Projection::for_extent(venues.iter().map(|v| &v.location)).context("no valid venues")?;
    let text = fs::read_to_string(&args.regions).with_context(|| format!("reading {}", args.regions.display()))?;
    let (mut regions, _) =
        regions_from_features(&parse_features(&text, &args.regions.display().to_string())?, args.level, &projection);
    if let Some(path) = &args.context {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let rep = apply_context(&text, &mut regions, &path.display().to_string())?;
        info!("context attached to {} regions", rep.updated);
    }
    let assignment = assign_venues_to_regions(&venues, &regions, &projection);
    attach_category_freq(&mut regions, &venues, &assignment);
    Ok(LoadedRegions { regions, venues, assignment })
}

#[derive(Args)]
struct InteractionInputs {
    #[arg(long, required = true, num_args = 1..)]
    interactions: Vec<PathBuf>,
    /// Tag every loaded record with this platform.
    #[arg(long)]
    tag: Option<Platform>,
    /// Keep users spanning at least this many regions.
    #[arg(long, default_value_t = 1)]
    min_distinct: usize,
}

fn load_interaction_inputs(args: &InteractionInputs, assignment: &VenueAssignment) -> Result<Vec<Interaction>> {
    let mut all = Vec::new();
    for path in &args.interactions {
        all.extend(load_interactions(path, args.tag, RecordFormat::from_path(path))?.records);
    }
    Ok(filter_users(&all, assignment, args.min_distinct, None))
}

#[derive(Args)]
struct BuildInetArgs {
    #[command(flatten)]
    regions: RegionInputs,
    #[command(flatten)]
    interactions: InteractionInputs,
    /// Platform to build; required when the input mixes platforms.
    #[arg(long)]
    platform: Option<Platform>,
    #[arg(long, default_value_t = 500)]
    max_regions: usize,
    /// Keep only this fraction of the heaviest edges.
    #[arg(long)]
    keep: Option<f64>,
    /// Edge list path; a `.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

fn build_inet(args: BuildInetArgs) -> Result<()> {
    let loaded = load_region_inputs(&args.regions)?;
    let interactions = load_interaction_inputs(&args.interactions, &loaded.assignment)?;
    let present: std::collections::BTreeSet<Platform> = interactions.iter().map(|i| i.platform).collect();
    let platform = match (args.platform, present.len()) {
        (Some(p), _) => p,
        (None, 1) => *present.iter().next().expect("one platform"),
        (None, 0) => bail!("no interactions fall inside the regions"),
        (None, _) => bail!("input mixes platforms {present:?}; pick one with --platform"),
    };
    let subset: Vec<Interaction> = interactions.into_iter().filter(|i| i.platform == platform).collect();
    let counts = build_user_counts(&subset, &loaded.assignment);
    let mut net =
        aggregate_with(&counts, args.regions.level, platform, AggregateOptions { max_regions_per_user: args.max_regions });
    if let Some(f) = args.keep {
        net = filter_top_edges(&net, f)?;
    }
    write_inet(&net, &args.out)?;
    info!("{} nodes, {} edges, {} self-loops", net.nodes.len(), net.edges.len(), net.self_loops.len());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Intersection,
    UnionZeroFill,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value = "intersection")]
    mode: ModeArg,
    /// Compute centralities after keeping this fraction of edges.
    #[arg(long)]
    centrality_filter: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn compare(args: CompareArgs) -> Result<()> {
    let (a, b) = (read_inet(&args.a)?, read_inet(&args.b)?);
    let opts = CompareOptions {
        mode: match args.mode {
            ModeArg::Intersection => PairingMode::Intersection,
            ModeArg::UnionZeroFill => PairingMode::UnionZeroFill,
        },
        centrality_filter: args.centrality_filter,
        ..CompareOptions::default()
    };
    let report = compare_inets(&a, &b, &opts)?;
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

#[derive(Args)]
struct UpzonesArgs {
    #[arg(long)]
    net: PathBuf,
    /// Zone settings (gamma, seed, filter_fraction) as TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn upzones(args: UpzonesArgs) -> Result<()> {
    let mut cfg: UpzonesStage = match &args.config {
        Some(p) => read_config(p)?,
        None => UpzonesStage::default(),
    };
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    let mut net = read_inet(&args.net)?;
    if let Some(f) = cfg.filter_fraction {
        net = filter_top_edges(&net, f)?;
    }
    let zones = leiden(&net, cfg.gamma, cfg.seed.unwrap_or(42))?;
    info!("{} zones, modularity {:.4}", zones.zone_count, zones.modularity);
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&zones)?)
}

#[derive(Args)]
struct CorrelateArgs {
    /// One or more edge lists; each becomes a column.
    #[arg(long, required = true, num_args = 1..)]
    net: Vec<PathBuf>,
    #[command(flatten)]
    regions: RegionInputs,
    #[arg(long, default_value_t = 0.75)]
    keep: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn correlate(args: CorrelateArgs) -> Result<()> {
    let loaded = load_region_inputs(&args.regions)?;
    let regions: BTreeMap<String, Region> = loaded.regions.into_iter().map(|r| (r.region_id.clone(), r)).collect();
    let mut columns = Vec::new();
    for path in &args.net {
        let net = filter_top_edges(&read_inet(path)?, args.keep)?;
        let mut rows = Vec::new();
        for factor in Factor::ALL {
            match correlate_edges_with_factor(&net, &regions, factor.into()) {
                Ok(row) => rows.push(row),
                Err(e) => log::warn!("{}: {factor}: {e}", path.display()),
            }
        }
        columns.push((format!("{}:{}", net.platform, net.level), rows));
    }
    emit(args.out.as_deref(), &factor_table_csv(&columns))
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    regions: RegionInputs,
    #[command(flatten)]
    interactions: InteractionInputs,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

fn features(args: FeaturesArgs) -> Result<()> {
    let loaded = load_region_inputs(&args.regions)?;
    let interactions = load_interaction_inputs(&args.interactions, &loaded.assignment)?;
    let profiles: Vec<_> =
        build_user_counts(&interactions, &loaded.assignment).iter().map(|c| label_user(c, args.k)).collect();
    let regions: BTreeMap<String, Region> = loaded.regions.into_iter().map(|r| (r.region_id.clone(), r)).collect();
    let (data, report) = build_dataset(&profiles, &regions, &FeatureConfig::default());
    info!("{report:?}; {} venues", loaded.venues.len());
    fs::write(&args.out, data.to_csv()).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    /// Search ranges as TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 5)]
    importance_repeats: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Held-out scores, search trials and permutation importance.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn train(args: TrainArgs) -> Result<()> {
    let space: SearchSpace = match &args.config {
        Some(p) => read_config(p)?,
        None => SearchSpace::default(),
    };
    let text = fs::read_to_string(&args.features).with_context(|| format!("reading {}", args.features.display()))?;
    let (data, skipped): (Dataset, usize) = Dataset::from_csv(&text)?;
    if skipped > 0 {
        log::warn!("{skipped} incomplete rows skipped");
    }
    let (model, report) = train_with_report(&data, &space, args.trials, args.importance_repeats, args.seed)?;
    info!(
        "held-out recall {:.3} precision {:.3} f1 {:.3}",
        report.held_out.recall, report.held_out.precision, report.held_out.f1
    );
    fs::write(&args.out, serde_json::to_string(&model)?)?;
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum UserModeArg {
    Auto,
    Returner,
    Explorer,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    store: PathBuf,
    /// Request body as JSON; other request flags override its fields.
    #[arg(long)]
    request: Option<PathBuf>,
    /// Visited region as ID=COUNT; repeatable.
    #[arg(long = "visit", value_parser = parse_visit)]
    visits: Vec<(String, i64)>,
    #[arg(long)]
    k: Option<i64>,
    #[arg(long)]
    m: Option<i64>,
    #[arg(long, value_enum)]
    mode: Option<UserModeArg>,
    #[arg(long)]
    user: Option<String>,
    #[arg(long)]
    pretty: bool,
}

fn parse_visit(s: &str) -> Result<(String, i64), String> {
    let (id, count) = s.rsplit_once('=').ok_or_else(|| format!("expected ID=COUNT, got `{s}`"))?;
    let count = count.trim().parse().map_err(|_| format!("bad count in `{s}`"))?;
    Ok((id.trim().to_string(), count))
}

fn recommend(args: RecommendArgs) -> Result<()> {
    let mut req = match &args.request {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            RecommendRequest::from_json(&bytes).map_err(|e| anyhow::anyhow!(e.message))?
        }
        None => RecommendRequest { user_id: None, visited: Vec::new(), k: None, m: None, user_mode: None },
    };
    if !args.visits.is_empty() {
        req.visited =
            args.visits.into_iter().map(|(region_id, review_count)| VisitedRegion { region_id, review_count }).collect();
    }
    req.k = args.k.or(req.k);
    req.m = args.m.or(req.m);
    req.user_id = args.user.or(req.user_id);
    if let Some(mode) = args.mode {
        req.user_mode = Some(match mode {
            UserModeArg::Auto => UserMode::Auto,
            UserModeArg::Returner => UserMode::Returner,
            UserModeArg::Explorer => UserMode::Explorer,
        });
    }
    let store = ArtifactStore::open_existing(&args.store)?;
    let response = Query::new(&store).recommend(&req).map_err(|e| anyhow::anyhow!("{} ({})", e.message, e.status))?;
    let text = if args.pretty {
        serde_json::to_string_pretty(&response.data)?
    } else {
        serde_json::to_string(&response.data)?
    };
    emit(None, &text)
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

fn serve(args: ServeArgs) -> Result<()> {
    let store = ArtifactStore::open_existing(&args.store)?;
    let broken = store.verify();
    if !broken.is_empty() {
        bail!("store has corrupt artifacts: {}", broken.join(", "));
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(urbanet_cli::server::serve(store, &args.bind))?;
    Ok(())
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config as TOML or JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured stage list.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<Stage>>,
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = PipelineConfig::from_path(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(stages) = args.stages {
        cfg.stages = stages;
    }
    let report = run_pipeline(&cfg, &args.store)?;
    info!("ran {:?}, skipped {:?}", report.ran, report.skipped);
    emit(None, &serde_json::to_string_pretty(&report)?)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Grid(a) => grid(a),
        Command::BuildInet(a) => build_inet(a),
        Command::Compare(a) => compare(a),
        Command::Upzones(a) => upzones(a),
        Command::Correlate(a) => correlate(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Recommend(a) => recommend(a),
        Command::Serve(a) => serve(a),
        Command::Run(a) => run(a),
    }
}
