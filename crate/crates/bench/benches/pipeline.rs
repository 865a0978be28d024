use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use urbanet::inet::{aggregate, build_user_counts, filter_top_edges};
use urbanet::ingest::{assign_venues_to_regions, attach_category_freq};
use urbanet::recsys::{build_dataset, label_user, shapley_attribution, train, FeatureConfig, Hyperparams};
use urbanet::synth::{generate, SynthConfig};
use urbanet::upzones::leiden;
use urbanet::{Platform, Region};

fn benches(c: &mut Criterion) {
    let ds = generate(&SynthConfig { n_users: 1000, ..SynthConfig::default() }).unwrap();
    let mut coarse = ds.coarse.clone();
    let assignment = assign_venues_to_regions(&ds.venues, &coarse, &ds.projection);
    attach_category_freq(&mut coarse, &ds.venues, &assignment);
    let counts = build_user_counts(&ds.interactions, &assignment);
    let net = aggregate(&counts, ds.coarse_level(), Platform::Gp);

    c.bench_function("assign_venues", |b| {
        b.iter(|| assign_venues_to_regions(black_box(&ds.venues), &coarse, &ds.projection))
    });
    c.bench_function("aggregate", |b| b.iter(|| aggregate(black_box(&counts), ds.coarse_level(), Platform::Gp)));
    c.bench_function("filter_top_edges", |b| b.iter(|| filter_top_edges(black_box(&net), 0.75).unwrap()));
    c.bench_function("leiden", |b| b.iter(|| leiden(black_box(&net), 1.0, 1).unwrap()));

    let regions: BTreeMap<String, Region> = coarse.iter().map(|r| (r.region_id.clone(), r.clone())).collect();
    let profiles: Vec<_> = counts.iter().map(|u| label_user(u, 3)).collect();
    let (data, _) = build_dataset(&profiles, &regions, &FeatureConfig::default());
    let params = Hyperparams { n_trees: 50, ..Hyperparams::default() };
    let mut group = c.benchmark_group("recsys");
    group.sample_size(10);
    group.bench_function("build_dataset", |b| {
        b.iter(|| build_dataset(black_box(&profiles), &regions, &FeatureConfig::default()))
    });
    group.bench_function("train_50_trees", |b| b.iter(|| train(black_box(&data), &params, 1).unwrap()));
    let model = train(&data, &params, 1).unwrap();
    group.bench_function("tree_shap_row", |b| b.iter(|| shapley_attribution(&model, black_box(&data.rows[0]))));
    group.finish();
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
