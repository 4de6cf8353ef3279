use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use preflab_bench::conditioned;
use preflab_core::assistants::BayesianPolicy;
use preflab_core::bayes::{decide, uniform_prior, update};
use preflab_core::harness::{run_episode, Environment};
use preflab_core::seed;
use preflab_core::{ChoiceModel, EpisodeConfig, FeatureSpace, RewardFunction, SimulatedUser};

fn bench_update(c: &mut Criterion) {
    let mut g = c.benchmark_group("update");
    for d in [2, 4, 6, 8] {
        let prior = uniform_prior(d).unwrap();
        let set = FeatureSpace::flight_with(d)
            .unwrap()
            .sample_option_set(3, &mut seed::rng(1))
            .unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| update(black_box(&prior), black_box(&set), 1).unwrap())
        });
    }
    g.finish();
}

fn bench_decide(c: &mut Criterion) {
    let (post, sets) = conditioned(4, 3, 7);
    c.bench_function("decide/d4", |b| {
        let mut rng = seed::rng(0);
        b.iter(|| decide(black_box(&post), black_box(&sets[0]), &mut rng).unwrap())
    });
}

fn bench_episode(c: &mut Criterion) {
    let cfg = EpisodeConfig::flight();
    let env: Arc<dyn Environment> = Arc::new(FeatureSpace::flight());
    let user: Arc<dyn ChoiceModel> = Arc::new(SimulatedUser::deterministic(
        RewardFunction::new(vec![0.5, -1.0, 0.0, -0.5]).unwrap(),
        3,
    ));
    c.bench_function("episode/bayesian_5x100", |b| {
        b.iter(|| {
            let policy = Box::new(BayesianPolicy::new(uniform_prior(4).unwrap()));
            run_episode(&cfg, env.clone(), policy, user.clone(), 0).unwrap()
        })
    });
}

criterion_group!(benches, bench_update, bench_decide, bench_episode);
criterion_main!(benches);
