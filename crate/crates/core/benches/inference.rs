//! Single-threaded versus full-pool timings of the data-parallel kernels.
//! Without the `parallel` feature only the sequential variant is measured.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use graspkb::dataset::{self, SynthConfig};
use graspkb::exact;
use graspkb::grounder::GroundingTable;
use graspkb::learner::{self, TrainingData};
use graspkb::logic::Universe;
use graspkb::patches;
use graspkb::sampler::{self, SamplerConfig};

#[cfg(feature = "parallel")]
fn variants() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", one), ("parallel", all)]
}

fn measure<F: Fn() + Sync>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    for (name, pool) in variants() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(&f))
        });
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(&f));
    g.finish();
}

fn two_object_table() -> (Vec<f64>, GroundingTable) {
    let kb = dataset::table1_contrast(0.67, 0.07).unwrap();
    let universe = Universe::new(&kb.schema, &["a", "b"]).unwrap();
    let table = GroundingTable::new(&kb.formulas, universe).unwrap();
    (kb.weights, table)
}

fn bench_gibbs(c: &mut Criterion) {
    let (weights, table) = two_object_table();
    let n = table.n_atoms();
    let free: Vec<usize> = (0..n).collect();
    let evidence = vec![false; n];
    let cfg = SamplerConfig {
        chains: 8,
        burn_in: 200,
        samples: 2000,
        seed: 1,
    };
    measure(c, "gibbs", || {
        sampler::gibbs(&weights, &table, &free, &evidence, &[], &cfg).unwrap();
    });
}

fn bench_exact(c: &mut Criterion) {
    let (weights, table) = two_object_table();
    let n = table.n_atoms();
    let free: Vec<usize> = (0..n).collect();
    let evidence = vec![false; n];
    measure(c, "exact", || {
        exact::enumerate(&weights, &table, &free, &evidence).unwrap();
    });
}

fn bench_pll_gradient(c: &mut Criterion) {
    let kb = dataset::table1_contrast(0.67, 0.07).unwrap();
    let corpus = dataset::synthesize(
        &kb,
        &SynthConfig {
            objects: 328,
            worlds_per_object: 10,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let data = TrainingData::from_worlds(&kb, &corpus.worlds).unwrap();
    measure(c, "pll_gradient", || {
        learner::pll_gradient(&kb.weights, &data, 10.0);
    });
}

fn bench_kmeans(c: &mut Criterion) {
    let mug = patches::synthetic_mug(2000, 0);
    measure(c, "kmeans", || {
        patches::kmeans(&mug.points, 3, patches::DEFAULT_RESTARTS, 0).unwrap();
    });
}

criterion_group!(
    benches,
    bench_gibbs,
    bench_exact,
    bench_pll_gradient,
    bench_kmeans
);
criterion_main!(benches);
