use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use std::hint::black_box;

use fmb_core::corpus;
use fmb_core::evo::{es_sample, EsState};
use fmb_core::exec::Execution;
use fmb_core::hierarchy::{baldwin_experiment, BaldwinConfig, FitnessMode, Landscape};
use fmb_core::objectives::RosenbrockNeg;
use fmb_core::price::fmb_decompose;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn price_corpus(c: &mut Criterion) {
    let pops: Vec<_> = (0..1000).map(corpus::population).collect();
    let mut g = c.benchmark_group("fmb_corpus_1000");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| exec.map(&pops, |p| fmb_decompose(black_box(p)).deterministic_part())));
    }
    g.finish();
}

fn es_generation(c: &mut Criterion) {
    let obj = RosenbrockNeg::new(20).unwrap();
    let state = EsState::isotropic(DVector::zeros(20), 0.3, 1).unwrap();
    let mut g = c.benchmark_group("es_generation");
    for pop in [64, 1024] {
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, pop), &pop, |b, &pop| {
                b.iter(|| es_sample(&state, pop, &obj, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn baldwin(c: &mut Criterion) {
    let cfg = BaldwinConfig {
        genome_len: 20,
        pop_size: 500,
        learn_trials: 200,
        generations: 3,
        mutation_rate: 0.005,
        heritable: false,
        seed: 0,
        fitness_mode: FitnessMode::Simulated,
        landscape: Landscape::Needle,
        baseline: 1e-6,
    };
    let mut g = c.benchmark_group("baldwin_simulated");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| baldwin_experiment(&cfg, exec).unwrap()));
    }
    g.finish();
}

fn replicates(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("replicates_16");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                exec.map(&seeds, |&s| {
                    let cfg = BaldwinConfig {
                        genome_len: 20,
                        pop_size: 500,
                        learn_trials: 1000,
                        generations: 100,
                        mutation_rate: 0.005,
                        heritable: false,
                        seed: s,
                        fitness_mode: FitnessMode::Analytic,
                        landscape: Landscape::Needle,
                        baseline: 1e-6,
                    };
                    baldwin_experiment(&cfg, Execution::Sequential).unwrap().generations_to_target
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, price_corpus, es_generation, baldwin, replicates);
criterion_main!(benches);
