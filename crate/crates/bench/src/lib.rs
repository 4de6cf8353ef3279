//! Shared fixtures for the benchmarks.

use preflab_core::bayes::{uniform_prior, update};
use preflab_core::reward::choose_deterministic;
use preflab_core::seed;
use preflab_core::{
    ChoiceModel, FeatureSpace, OptionSet, Posterior, RewardFunction, SimulatedUser,
};

/// A posterior after `rounds` observations of a deterministic user, with the
/// option sets that produced it.
pub fn conditioned(d: usize, rounds: usize, seed_value: u64) -> (Posterior, Vec<OptionSet>) {
    let space = FeatureSpace::flight_with(d).expect("1..=8 features");
    let mut rng = seed::rng(seed_value);
    let levels: Vec<usize> = (0..d).map(|j| (j * 3 + 1) % 5).collect();
    let user =
        SimulatedUser::deterministic(RewardFunction::from_levels(&levels).expect("non-zero"), 0);
    let mut post = uniform_prior(d).expect("dimension");
    let mut sets = Vec::new();
    for _ in 0..rounds {
        let set = space.sample_option_set(3, &mut rng).expect("k=3");
        let c = choose_deterministic(&user as &dyn ChoiceModel, &set, &mut rng).expect("utilities");
        post = update(&post, &set, c).expect("update");
        sets.push(set);
    }
    (post, sets)
}
