//! Sequential versus rayon execution of the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use featcomp::completion::{disc_batch, Discriminator, Generator, DISC_HIDDEN};
use featcomp::config::RunConfig;
use featcomp::ndnum::Rng;
use featcomp::par::Exec;
use featcomp::pipeline::{build_prototypes, score_proposals, synthesize, train_model};
use featcomp::prototypes::{kmeans_vectors, KMeansConfig};
use featcomp::FeatureMap;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn config() -> RunConfig {
    let mut cfg = RunConfig::default().with_seed(3);
    for (k, v) in [
        ("data.train_visible", "300"),
        ("data.train_occluded", "300"),
        ("data.train_background", "300"),
        ("data.eval_images", "40"),
        ("stage1.T", "20"),
        ("stage2.T", "20"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn kernels(c: &mut Criterion) {
    let cfg = config();
    let (train, eval) = synthesize(&cfg).unwrap();
    let visible: Vec<FeatureMap> = train
        .iter()
        .filter(|p| p.is_fully_visible_pedestrian())
        .map(|p| p.features.clone())
        .collect();
    let occluded: Vec<FeatureMap> = train
        .iter()
        .filter(|p| p.true_mask.is_some())
        .map(|p| p.features.clone())
        .collect();
    let points: Vec<Vec<f64>> = visible.iter().map(|f| f.data().to_vec()).collect();

    let mut rng = Rng::new(1);
    let channels = cfg.world.channels;
    let gen = Generator::new(channels, &mut rng);
    let disc = Discriminator::new(visible[0].data().len(), DISC_HIDDEN, &mut rng);
    let occ: Vec<&FeatureMap> = occluded.iter().take(64).collect();
    let vis: Vec<&FeatureMap> = visible.iter().take(64).collect();

    let bank = build_prototypes(&cfg, &train).unwrap();
    let (model, _) = train_model(&cfg, &train, &bank).unwrap();

    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        let km = KMeansConfig {
            k: 5,
            restarts: 5,
            max_iters: 100,
            seed: 1,
            exec,
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &km, |b, km| {
            b.iter(|| kmeans_vectors(black_box(&points), km).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("disc_batch");
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| disc_batch(&gen, &disc, black_box(&occ), black_box(&vis), exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("score_proposals");
    group.sample_size(10);
    for (name, threads) in [("sequential", 1), ("parallel", 4)] {
        let mut run = cfg.clone();
        run.threads = threads;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| score_proposals(&run, black_box(&eval), &bank, &model).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
