use std::collections::BTreeMap;
use std::path::Path;

use urbanet::metrics::CompareReport;
use urbanet::recsys::RegionCatalog;
use urbanet::service::{
    names, run_pipeline, synth_config, ArtifactStore, InteractionSource, PipelineConfig, Query, RecommendRequest,
    ServiceError, Stage, VisitedRegion,
};
use urbanet::synth::{generate, write_dataset, SynthConfig, SynthDataset};
use urbanet::Platform;

fn small_dataset(dir: &Path) -> SynthDataset {
    let cfg = SynthConfig { n_users: 400, n_regions: 30, seed: 7, ..SynthConfig::default() };
    let ds = generate(&cfg).unwrap();
    write_dataset(&ds, dir).unwrap();
    ds
}

fn quick(mut cfg: PipelineConfig) -> PipelineConfig {
    let t = cfg.train.as_mut().unwrap();
    t.trials = 2;
    t.importance_repeats = 1;
    t.search.n_trees = (20, 40);
    cfg
}

#[test]
fn full_run_then_noop_rerun() {
    let data = tempfile::tempdir().unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(data.path());
    let cfg = quick(synth_config(&ds, data.path(), Stage::ALL.to_vec()));

    let first = run_pipeline(&cfg, store_dir.path()).unwrap();
    assert_eq!(first.ran, Stage::ALL.to_vec());
    let store = ArtifactStore::open_existing(store_dir.path()).unwrap();
    assert!(store.verify().is_empty());
    for name in [
        names::regions(ds.coarse_level()),
        names::inet(Platform::Gp, ds.coarse_level()),
        names::compare((Platform::Gp, ds.coarse_level()), (Platform::Fs, ds.coarse_level())),
        names::upzones(Platform::Fs, ds.fine_level()),
        names::correlations(Platform::Gp, ds.coarse_level()),
        names::model(ds.coarse_level(), None),
        names::model(ds.fine_level(), None),
        names::RECOMMENDER.to_string(),
    ] {
        assert!(store.entry(&name).is_some(), "missing {name}");
    }
    assert!(store.manifest().artifacts.values().all(|e| e.config_hash == first.config_hash));

    let second = run_pipeline(&cfg, store_dir.path()).unwrap();
    assert!(second.ran.is_empty());
    assert_eq!(second.skipped, Stage::ALL.to_vec());
    assert_eq!(second.manifest, first.manifest);

    // the parent map sends every fine region somewhere
    let fine: RegionCatalog = store.get_json(&names::regions(ds.fine_level())).unwrap();
    assert_eq!(fine.parent.len(), fine.regions.len());
}

#[test]
fn platform_tagged_copies_compare_perfectly() {
    let data = tempfile::tempdir().unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(data.path());
    let mut cfg = synth_config(&ds, data.path(), vec![Stage::Inet, Stage::Compare, Stage::Upzones]);
    let src = cfg.inputs.interactions[0].path.clone();
    cfg.inputs.interactions = [Platform::Gp, Platform::Fs]
        .into_iter()
        .map(|p| InteractionSource { path: src.clone(), platform: Some(p), format: None })
        .collect();
    run_pipeline(&cfg, store_dir.path()).unwrap();
    let store = ArtifactStore::open_existing(store_dir.path()).unwrap();
    for level in [ds.coarse_level(), ds.fine_level()] {
        let report: CompareReport =
            store.get_json(&names::compare((Platform::Gp, level), (Platform::Fs, level))).unwrap();
        for r in [report.pearson, report.spearman, report.kendall] {
            assert!((r.unwrap() - 1.0).abs() < 1e-12, "{level}: {report:?}");
        }
        let sim: serde_json::Value =
            store.get_json(&names::upzone_similarity(Platform::Gp, Platform::Fs, level)).unwrap();
        assert!((sim["similarity"]["nmi"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((sim["similarity"]["adjusted_rand"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn failing_stage_commits_nothing() {
    let data = tempfile::tempdir().unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(data.path());
    let mut cfg = synth_config(&ds, data.path(), vec![Stage::Regions]);
    cfg.levels[1].context = Some(data.path().join("does_not_exist.csv"));
    match run_pipeline(&cfg, store_dir.path()) {
        Err(ServiceError::Io { .. }) => {}
        Err(ServiceError::Stage { stage, .. }) => assert_eq!(stage, Stage::Regions),
        other => panic!("expected a failure, got {other:?}"),
    }
    let store = ArtifactStore::open_existing(store_dir.path()).unwrap();
    assert!(store.manifest().artifacts.is_empty());
    // lock released after the failure
    assert!(store.lock().is_ok());
}

#[test]
fn recommend_through_the_query_layer() {
    let data = tempfile::tempdir().unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(data.path());
    let cfg = quick(synth_config(&ds, data.path(), vec![Stage::Regions, Stage::Train]));
    run_pipeline(&cfg, store_dir.path()).unwrap();
    let store = ArtifactStore::open_existing(store_dir.path()).unwrap();
    let q = Query::new(&store);

    let ids: Vec<String> = ds.coarse.iter().map(|r| r.region_id.clone()).take(5).collect();
    let visit = |counts: &[i64]| RecommendRequest {
        user_id: Some("tester".into()),
        visited: ids.iter().zip(counts).map(|(r, c)| VisitedRegion { region_id: r.clone(), review_count: *c }).collect(),
        k: Some(3),
        m: Some(2),
        user_mode: None,
    };

    let ok = q.recommend(&visit(&[9, 7, 5, 2, 1])).unwrap();
    let items = &ok.data.result.items;
    assert_eq!(items.len(), 3);
    assert!(items.windows(2).all(|w| w[0].score >= w[1].score));
    for item in items {
        assert!(!ids.contains(&item.region_id));
        assert!(!item.explanation.text.is_empty());
        assert!(item.explanation.factors.len() <= 3);
        assert!(item.sub_regions.len() <= 2);
    }
    // deterministic
    assert_eq!(q.recommend(&visit(&[9, 7, 5, 2, 1])).unwrap(), ok);

    let tied = q.recommend(&visit(&[5, 3, 2, 2, 1])).unwrap_err();
    assert_eq!(tied.status, 422);

    let mut unknown = visit(&[9, 7, 5, 2, 1]);
    unknown.visited[0].region_id = "nowhere".into();
    let err = q.recommend(&unknown).unwrap_err();
    assert_eq!(err.status, 400);
    assert_eq!(err.fields[0].field, "visited[0].region_id");

    let params: BTreeMap<String, String> = [("level".to_string(), ds.coarse_level().to_string())].into();
    let geo = q.regions(&params).unwrap();
    assert_eq!(geo.data["features"].as_array().unwrap().len(), ds.coarse.len());
}
