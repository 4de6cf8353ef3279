//! Feature spaces, reward functions and simulated users.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// The random stream type used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Preference levels a reward-function component may take, in canonical order.
pub const LEVELS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// Rewards closer than this are treated as ties. Grid rewards differ by at
/// least 1/40 when they differ at all.
pub const TIE_EPS: f64 = 1e-9;

/// Maps a preference weight to its position in [`LEVELS`].
pub fn level_index(weight: f64) -> Option<usize> {
    LEVELS.iter().position(|&l| l == weight)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Flight,
    Hotel,
    Product,
}

impl Domain {
    /// Capitalised noun used in option headers and feedback.
    pub fn noun(self) -> &'static str {
        match self {
            Domain::Flight => "Flight",
            Domain::Hotel => "Hotel",
            Domain::Product => "Product",
        }
    }

    pub fn singular(self) -> &'static str {
        match self {
            Domain::Flight => "flight",
            Domain::Hotel => "hotel",
            Domain::Product => "product",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Domain::Flight => "flights",
            Domain::Hotel => "hotels",
            Domain::Product => "products",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flight" => Ok(Domain::Flight),
            "hotel" => Ok(Domain::Hotel),
            "product" | "webshop" => Ok(Domain::Product),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown domain `{other}`"
            ))),
        }
    }
}

/// Identity of a feature; fixes its grid, rendering and wording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    DepartureTime,
    Duration,
    NumberOfStops,
    Price,
    ArrivalTime,
    LayoverDuration,
    CancellationPolicy,
    NumberOfBags,
    DistanceToDowntown,
    HotelPrice,
    Rating,
    Amenities,
}

/// Flight features in inclusion order; a d-feature variant takes the first d.
pub const FLIGHT_FEATURES: [FeatureKind; 8] = [
    FeatureKind::DepartureTime,
    FeatureKind::Duration,
    FeatureKind::NumberOfStops,
    FeatureKind::Price,
    FeatureKind::ArrivalTime,
    FeatureKind::LayoverDuration,
    FeatureKind::CancellationPolicy,
    FeatureKind::NumberOfBags,
];

pub const HOTEL_FEATURES: [FeatureKind; 4] = [
    FeatureKind::DistanceToDowntown,
    FeatureKind::HotelPrice,
    FeatureKind::Rating,
    FeatureKind::Amenities,
];

impl FeatureKind {
    /// Identifier used in configs and data files.
    pub fn id(self) -> &'static str {
        match self {
            FeatureKind::DepartureTime => "departure_time",
            FeatureKind::Duration => "duration",
            FeatureKind::NumberOfStops => "number_of_stops",
            FeatureKind::Price | FeatureKind::HotelPrice => "price",
            FeatureKind::ArrivalTime => "arrival_time",
            FeatureKind::LayoverDuration => "layover_duration",
            FeatureKind::CancellationPolicy => "cancellation_policy",
            FeatureKind::NumberOfBags => "number_of_bags",
            FeatureKind::DistanceToDowntown => "distance_to_downtown",
            FeatureKind::Rating => "rating",
            FeatureKind::Amenities => "amenities",
        }
    }

    /// Name as it appears in prompts.
    pub fn label(self) -> &'static str {
        match self {
            FeatureKind::DepartureTime => "departure time",
            FeatureKind::Duration => "duration",
            FeatureKind::NumberOfStops => "number of stops",
            FeatureKind::Price | FeatureKind::HotelPrice => "price",
            FeatureKind::ArrivalTime => "arrival time",
            FeatureKind::LayoverDuration => "layover duration",
            FeatureKind::CancellationPolicy => "cancellation policy",
            FeatureKind::NumberOfBags => "number of bags",
            FeatureKind::DistanceToDowntown => "distance to downtown",
            FeatureKind::Rating => "rating",
            FeatureKind::Amenities => "amenities",
        }
    }

    pub fn grid_size(self) -> usize {
        match self {
            FeatureKind::NumberOfStops
            | FeatureKind::CancellationPolicy
            | FeatureKind::NumberOfBags => 3,
            FeatureKind::Rating | FeatureKind::Amenities => 5,
            _ => 11,
        }
    }

    pub fn is_price(self) -> bool {
        matches!(self, FeatureKind::Price | FeatureKind::HotelPrice)
    }
}

/// `n` evenly spaced values from 0 to 1 inclusive.
pub fn even_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub kind: FeatureKind,
    pub name: String,
    pub grid: Vec<f64>,
}

impl Feature {
    pub fn new(kind: FeatureKind) -> Self {
        Self {
            kind,
            name: kind.id().to_string(),
            grid: even_grid(kind.grid_size()),
        }
    }

    /// Position of `value` on the grid, if it is a grid point.
    pub fn grid_index(&self, value: f64) -> Option<usize> {
        self.grid.iter().position(|&g| (g - value).abs() < 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    domain: Domain,
    features: Vec<Feature>,
}

impl FeatureSpace {
    pub fn new(domain: Domain, features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(CoreError::InvalidSpace("no features".into()));
        }
        for f in &features {
            if f.grid.len() < 2 {
                return Err(CoreError::InvalidSpace(format!(
                    "grid of `{}` has fewer than 2 values",
                    f.name
                )));
            }
            if f.grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(CoreError::InvalidSpace(format!(
                    "grid of `{}` leaves [0,1]",
                    f.name
                )));
            }
            if f.grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CoreError::InvalidSpace(format!(
                    "grid of `{}` not ascending",
                    f.name
                )));
            }
        }
        Ok(Self { domain, features })
    }

    /// The four-feature flight space.
    pub fn flight() -> Self {
        Self::flight_with(4).expect("4 is in range")
    }

    /// Flight space with the first `d` features of [`FLIGHT_FEATURES`].
    pub fn flight_with(d: usize) -> Result<Self> {
        if !(1..=FLIGHT_FEATURES.len()).contains(&d) {
            return Err(CoreError::DimensionOutOfRange(d));
        }
        let features = FLIGHT_FEATURES[..d]
            .iter()
            .map(|&k| Feature::new(k))
            .collect();
        Self::new(Domain::Flight, features)
    }

    pub fn hotel() -> Self {
        let features = HOTEL_FEATURES.iter().map(|&k| Feature::new(k)).collect();
        Self::new(Domain::Hotel, features).expect("hotel grids are valid")
    }

    pub fn for_domain(domain: Domain, d: usize) -> Result<Self> {
        match domain {
            Domain::Flight => Self::flight_with(d),
            Domain::Hotel if d == 4 => Ok(Self::hotel()),
            Domain::Hotel => Err(CoreError::InvalidConfig(
                "hotel space has exactly 4 features".into(),
            )),
            Domain::Product => Err(CoreError::InvalidConfig(
                "products have no feature grid".into(),
            )),
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.features.iter().map(|f| f.kind).collect()
    }

    /// Number of distinct options (product of grid sizes).
    pub fn option_count(&self) -> u64 {
        self.features.iter().map(|f| f.grid.len() as u64).product()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features
            .iter()
            .position(|f| f.name == name || f.kind.label() == name)
    }

    pub fn price_index(&self) -> Option<usize> {
        self.features.iter().position(|f| f.kind.is_price())
    }

    pub fn validate_option(&self, option: &ItemOption) -> Result<()> {
        if option.features.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                actual: option.features.len(),
            });
        }
        for (f, &v) in self.features.iter().zip(&option.features) {
            if f.grid_index(v).is_none() {
                return Err(CoreError::InvalidOption(format!(
                    "{v} is not on the grid of `{}`",
                    f.name
                )));
            }
        }
        Ok(())
    }

    /// One option with every feature drawn uniformly from its grid.
    pub fn sample_option(&self, rng: &mut SimRng) -> Vec<f64> {
        self.features
            .iter()
            .map(|f| f.grid[rng.random_range(0..f.grid.len())])
            .collect()
    }

    /// `k` independent options; duplicates are allowed.
    pub fn sample_option_set(&self, k: usize, rng: &mut SimRng) -> Result<OptionSet> {
        OptionSet::from_features((0..k).map(|_| self.sample_option(rng)).collect())
    }

    /// Every option on the grid, in lexicographic order of grid indices.
    pub fn all_options(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for f in &self.features {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    f.grid.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// A user's preference vector over item features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RewardFunction {
    weights: Vec<f64>,
}

impl RewardFunction {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::InvalidReward("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|&&w| level_index(w).is_none()) {
            return Err(CoreError::InvalidReward(format!(
                "{w} is not a preference level"
            )));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(CoreError::InvalidReward("all-zero vector".into()));
        }
        Ok(Self { weights })
    }

    /// Builds from level indices 0..5 (0 = -1, 4 = +1).
    pub fn from_levels(levels: &[usize]) -> Result<Self> {
        let weights = levels
            .iter()
            .map(|&l| {
                LEVELS
                    .get(l)
                    .copied()
                    .ok_or_else(|| CoreError::InvalidReward(format!("level {l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn levels(&self) -> Vec<usize> {
        self.weights
            .iter()
            .map(|&w| level_index(w).expect("validated"))
            .collect()
    }
}

impl TryFrom<Vec<f64>> for RewardFunction {
    type Error = CoreError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RewardFunction> for Vec<f64> {
    fn from(r: RewardFunction) -> Self {
        r.weights
    }
}

/// One candidate item. Grid items carry feature values; catalog items carry
/// an id and their rendered text instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemOption {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl ItemOption {
    pub fn grid(index: usize, features: Vec<f64>) -> Self {
        Self {
            index,
            features,
            item_id: None,
            text: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OptionSet {
    options: Vec<ItemOption>,
}

impl OptionSet {
    /// Re-indexes the options 1..=k.
    pub fn new(mut options: Vec<ItemOption>) -> Result<Self> {
        if options.len() < 2 {
            return Err(CoreError::InvalidOption(format!(
                "an option set needs at least 2 options, got {}",
                options.len()
            )));
        }
        for (i, o) in options.iter_mut().enumerate() {
            o.index = i + 1;
        }
        Ok(Self { options })
    }

    pub fn from_features(features: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            features
                .into_iter()
                .map(|f| ItemOption::grid(0, f))
                .collect(),
        )
    }

    pub fn options(&self) -> &[ItemOption] {
        &self.options
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    /// Option at a 1-based index.
    pub fn get(&self, index: usize) -> Option<&ItemOption> {
        index.checked_sub(1).and_then(|i| self.options.get(i))
    }
}

/// The linear reward `θ·φ(o)`.
pub fn reward(theta: &RewardFunction, option: &ItemOption) -> Result<f64> {
    dot(theta.weights(), &option.features)
}

pub fn dot(weights: &[f64], features: &[f64]) -> Result<f64> {
    if weights.len() != features.len() {
        return Err(CoreError::DimensionMismatch {
            expected: weights.len(),
            actual: features.len(),
        });
    }
    Ok(weights.iter().zip(features).map(|(w, f)| w * f).sum())
}

/// 0-based positions whose score is within [`TIE_EPS`] of the maximum.
pub fn maximizers(scores: &[f64]) -> Vec<usize> {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let eps = TIE_EPS * best.abs().max(1.0);
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= best - eps)
        .map(|(i, _)| i)
        .collect()
}

/// Argmax with uniform tie-breaking; returns a 1-based index. The stream is
/// only consumed when there is a tie.
pub fn argmax_with_ties(scores: &[f64], rng: &mut SimRng) -> usize {
    let best = maximizers(scores);
    let pick = if best.len() == 1 {
        best[0]
    } else {
        best[rng.random_range(0..best.len())]
    };
    pick + 1
}

/// Anything that picks among options by maximising a utility.
pub trait ChoiceModel: Send + Sync {
    fn utilities(&self, set: &OptionSet) -> Result<Vec<f64>>;

    /// Probability of picking a non-maximal option.
    fn noise(&self) -> f64 {
        0.0
    }

    /// Stable identity used to derive this user's random streams.
    fn rng_seed(&self) -> u64;

    /// The reward function, when the user has one.
    fn reward_function(&self) -> Option<&RewardFunction> {
        None
    }
}

/// Noise-free choice: reward argmax, ties uniform.
pub fn choose_deterministic(
    user: &dyn ChoiceModel,
    set: &OptionSet,
    rng: &mut SimRng,
) -> Result<usize> {
    Ok(argmax_with_ties(&user.utilities(set)?, rng))
}

/// The user's choice. With probability `1 - noise` the reward argmax (ties
/// uniform); otherwise a uniform draw among the non-maximal options, or among
/// all options when every option attains the maximum.
pub fn choose(user: &dyn ChoiceModel, set: &OptionSet, rng: &mut SimRng) -> Result<usize> {
    let utils = user.utilities(set)?;
    let best = argmax_with_ties(&utils, rng);
    let noise = user.noise();
    if noise > 0.0 && rng.random::<f64>() < noise {
        let top = maximizers(&utils);
        let others: Vec<usize> = (0..utils.len()).filter(|i| !top.contains(i)).collect();
        let pick = if others.is_empty() {
            rng.random_range(0..utils.len())
        } else {
            others[rng.random_range(0..others.len())]
        };
        return Ok(pick + 1);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUser {
    pub reward: RewardFunction,
    pub noise: f64,
    pub rng_seed: u64,
}

impl SimulatedUser {
    pub fn new(reward: RewardFunction, noise: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(CoreError::InvalidConfig(format!(
                "noise {noise} outside [0,1]"
            )));
        }
        Ok(Self {
            reward,
            noise,
            rng_seed,
        })
    }

    pub fn deterministic(reward: RewardFunction, rng_seed: u64) -> Self {
        Self {
            reward,
            noise: 0.0,
            rng_seed,
        }
    }
}

impl ChoiceModel for SimulatedUser {
    fn utilities(&self, set: &OptionSet) -> Result<Vec<f64>> {
        set.options()
            .iter()
            .map(|o| reward(&self.reward, o))
            .collect()
    }

    fn noise(&self) -> f64 {
        self.noise
    }

    fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    fn reward_function(&self) -> Option<&RewardFunction> {
        Some(&self.reward)
    }
}

/// Number of non-zero reward functions over `d` features.
pub fn reward_space_size(d: usize) -> usize {
    5usize.pow(d as u32) - 1
}

/// All `5^d - 1` non-zero reward functions in lexicographic order over
/// components, levels ordered `-1 < -0.5 < 0 < 0.5 < 1`.
pub fn enumerate_reward_space(d: usize) -> Result<Vec<RewardFunction>> {
    if !(1..=8).contains(&d) {
        return Err(CoreError::DimensionOutOfRange(d));
    }
    Ok(enumerate_levels(d)
        .map(|levels| RewardFunction {
            weights: levels.iter().map(|&l| LEVELS[l]).collect(),
        })
        .collect())
}

/// Level-index vectors of the non-zero reward functions, canonical order.
pub(crate) fn enumerate_levels(d: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = 5usize.pow(d as u32);
    (0..total).filter_map(move |code| {
        let mut levels = vec![0usize; d];
        let mut c = code;
        for slot in levels.iter_mut().rev() {
            *slot = c % 5;
            c /= 5;
        }
        if levels.iter().all(|&l| l == 2) {
            None
        } else {
            Some(levels)
        }
    })
}
