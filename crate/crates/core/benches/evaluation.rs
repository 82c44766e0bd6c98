use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ctrlsense::agent::{evaluate, ActorCritic, Policy, SelectionMode, Setup};
use ctrlsense::{Execution, ExperimentConfig, UpdateRule};

fn evaluation(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let mut group = c.benchmark_group("evaluate_512_episodes");
    group.sample_size(20);
    for rule in [UpdateRule::Marginal, UpdateRule::Naive, UpdateRule::Joint] {
        let setup = Setup::analytic(&cfg, rule).unwrap();
        let nets = ActorCritic::for_setup(&setup, 1);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let id = BenchmarkId::new(format!("{rule:?}"), format!("{exec:?}"));
            group.bench_function(id, |b| {
                b.iter(|| evaluate(Policy::Actor(&nets.actor, SelectionMode::Sample), &setup, 512, 7, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn belief_updates(c: &mut Criterion) {
    use ctrlsense::belief::{update_joint, update_marginal, update_naive};
    use ctrlsense::model::Observation;
    let mut group = c.benchmark_group("belief_update_n10");
    let cfg = ExperimentConfig {
        n_processes: 10,
        ..Default::default()
    };
    let setup = Setup::analytic(&cfg, UpdateRule::Joint).unwrap();
    let dep = &setup.model.dependency;
    let ch = setup.model.channel;
    let obs = Observation {
        process: 0,
        value: 1,
        time: 1,
    };
    let beliefs = setup.prior_beliefs.clone();
    let joint = setup.joint_prior.clone().unwrap();
    group.bench_function("marginal", |b| {
        b.iter(|| update_marginal(&beliefs, dep, &ch, &obs).unwrap())
    });
    group.bench_function("naive", |b| b.iter(|| update_naive(&beliefs, &ch, &obs).unwrap()));
    group.bench_function("joint", |b| b.iter(|| update_joint(&joint, &ch, &obs).unwrap()));
    group.finish();
}

criterion_group!(benches, evaluation, belief_updates);
criterion_main!(benches);
