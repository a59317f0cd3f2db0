//! Sequential vs rayon execution of the two seed-parallel workloads: policy
//! evaluation across seeds and batched policy-gradient computation.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gacml_core::harness::{evaluate, Controller, ExperimentConfig};
use gacml_core::par::{self, ExecMode};
use gacml_core::policy::{Trainer, Wiring};
use ndarray::Array2;

const SEEDS: [u64; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

fn modes() -> Vec<(&'static str, ExecMode)> {
    let mut m = vec![("sequential", ExecMode::Sequential)];
    if ExecMode::Parallel.is_parallel() {
        m.push(("parallel", ExecMode::Parallel));
    }
    m
}

fn eval_across_seeds(c: &mut Criterion) {
    let resolved = ExperimentConfig {
        topology: "moderate".into(),
        ..Default::default()
    }
    .resolve()
    .unwrap();
    let trainer = Trainer::for_topology(Wiring::ACML, &resolved.topology, Default::default(), 1).unwrap();
    let mut group = c.benchmark_group("evaluate_8_seeds");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map(mode, &SEEDS, |&s| {
                    let mut env = resolved.make_env().unwrap();
                    evaluate(&mut env, Controller::Policy(&trainer.online), s, 1, 200).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn actor_grads_across_models(c: &mut Criterion) {
    let resolved = ExperimentConfig {
        topology: "large".into(),
        ..Default::default()
    }
    .resolve()
    .unwrap();
    let t = &resolved.topology;
    let models: Vec<Trainer> = SEEDS
        .iter()
        .map(|&s| Trainer::for_topology(Wiring::ACML, t, Default::default(), s).unwrap())
        .collect();
    let obs: Vec<Array2<f64>> = (0..t.num_agents())
        .map(|i| Array2::from_shape_fn((128, t.feature_width(i)), |(r, k)| ((r * 31 + k) as f64).sin()))
        .collect();
    let mut group = c.benchmark_group("actor_grads_8_models");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map(mode, &models, |m| black_box(m.online.actor_loss_grads(&obs).unwrap().0)))
        });
    }
    group.finish();
}

criterion_group!(benches, eval_across_seeds, actor_grads_across_models);
criterion_main!(benches);
