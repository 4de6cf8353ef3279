//! Exact inference over the enumerated reward space.
//!
//! The hypothesis space is every non-zero reward function over `d`
//! features (`5^d - 1` of them). Observations are option sets with the
//! user's choice; the likelihood is the indicator that the chosen option
//! maximises the hypothesis' reward (ties count as consistent).

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::reward::{
    argmax_with_ties, choose_deterministic, dot, enumerate_levels, ChoiceModel, FeatureSpace,
    OptionSet, RewardFunction, SimRng, SimulatedUser, LEVELS, TIE_EPS,
};

/// Canonical enumeration of the reward space, stored flat for fast scans.
#[derive(Debug)]
pub struct RewardSpace {
    dim: usize,
    weights: Vec<f64>,
}

static SPACES: [OnceLock<Arc<RewardSpace>>; 9] = [const { OnceLock::new() }; 9];

impl RewardSpace {
    /// Process-wide shared enumeration for `d` features.
    pub fn shared(d: usize) -> Result<Arc<RewardSpace>> {
        if !(1..=8).contains(&d) {
            return Err(CoreError::DimensionOutOfRange(d));
        }
        Ok(SPACES[d]
            .get_or_init(|| {
                let weights = enumerate_levels(d).flatten().map(|l| LEVELS[l]).collect();
                Arc::new(RewardSpace { dim: d, weights })
            })
            .clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i * self.dim..(i + 1) * self.dim]
    }

    pub fn function(&self, i: usize) -> RewardFunction {
        RewardFunction::new(self.weights(i).to_vec()).expect("enumerated functions are valid")
    }

    /// Position of `theta` in the canonical order.
    pub fn index_of(&self, theta: &RewardFunction) -> Option<usize> {
        if theta.dim() != self.dim {
            return None;
        }
        let code = theta.levels().iter().fold(0usize, |acc, &l| acc * 5 + l);
        let zero = (0..self.dim).fold(0usize, |acc, _| acc * 5 + 2);
        Some(if code > zero { code - 1 } else { code })
    }
}

/// Per-feature distributions over the five preference levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 5]>", into = "Vec<[f64; 5]>")]
pub struct FactorizedBelief {
    features: Vec<[f64; 5]>,
}

impl FactorizedBelief {
    pub fn new(features: Vec<[f64; 5]>) -> Result<Self> {
        if features.is_empty() {
            return Err(CoreError::InvalidBelief("no features".into()));
        }
        for (j, p) in features.iter().enumerate() {
            if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(CoreError::InvalidBelief(format!(
                    "feature {j} has a negative or non-finite entry"
                )));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(CoreError::InvalidBelief(format!("feature {j} sums to {s}")));
            }
        }
        Ok(Self { features })
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            features: vec![[0.2; 5]; d],
        }
    }

    /// Point masses at the given 1..=5 ratings.
    pub fn from_ratings(ratings: &[usize]) -> Result<Self> {
        let features = ratings
            .iter()
            .map(|&r| {
                if !(1..=5).contains(&r) {
                    return Err(CoreError::InvalidBelief(format!(
                        "rating {r} outside 1..=5"
                    )));
                }
                let mut p = [0.0; 5];
                p[r - 1] = 1.0;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(features)
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[[f64; 5]] {
        &self.features
    }
}

impl TryFrom<Vec<[f64; 5]>> for FactorizedBelief {
    type Error = CoreError;
    fn try_from(v: Vec<[f64; 5]>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FactorizedBelief> for Vec<[f64; 5]> {
    fn from(b: FactorizedBelief) -> Self {
        b.features
    }
}

/// Reverses every feature's distribution.
pub fn opposite_belief(belief: &FactorizedBelief) -> FactorizedBelief {
    FactorizedBelief {
        features: belief
            .features
            .iter()
            .map(|p| {
                let mut q = *p;
                q.reverse();
                q
            })
            .collect(),
    }
}

/// Per-feature expected preference level.
pub fn beliefs_to_posterior_mean(belief: &FactorizedBelief) -> Vec<f64> {
    belief
        .features
        .iter()
        .map(|p| p.iter().zip(LEVELS).map(|(pi, l)| pi * l).sum())
        .collect()
}

/// A probability vector over the canonical reward enumeration.
#[derive(Clone, Debug)]
pub struct Posterior {
    space: Arc<RewardSpace>,
    mass: Vec<f64>,
    skipped_update: bool,
}

impl PartialEq for Posterior {
    fn eq(&self, other: &Self) -> bool {
        self.space.dim == other.space.dim
            && self.mass == other.mass
            && self.skipped_update == other.skipped_update
    }
}

#[derive(Serialize, Deserialize)]
struct PosteriorRecord {
    dimension: usize,
    order: String,
    mass: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    skipped_update: bool,
}

const ORDER_TAG: &str = "lex-v1";

impl Serialize for Posterior {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PosteriorRecord {
            dimension: self.space.dim,
            order: ORDER_TAG.into(),
            mass: self.mass.clone(),
            skipped_update: self.skipped_update,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Posterior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let rec = PosteriorRecord::deserialize(d)?;
        if rec.order != ORDER_TAG {
            return Err(D::Error::custom(format!(
                "unsupported order `{}`",
                rec.order
            )));
        }
        let space = RewardSpace::shared(rec.dimension).map_err(D::Error::custom)?;
        let mut p = Posterior::from_mass(space, rec.mass).map_err(D::Error::custom)?;
        p.skipped_update = rec.skipped_update;
        Ok(p)
    }
}

impl Posterior {
    pub fn uniform(space: Arc<RewardSpace>) -> Self {
        let n = space.len();
        Self {
            mass: vec![1.0 / n as f64; n],
            space,
            skipped_update: false,
        }
    }

    /// Validates and renormalises an explicit mass vector.
    pub fn from_mass(space: Arc<RewardSpace>, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != space.len() {
            return Err(CoreError::DimensionMismatch {
                expected: space.len(),
                actual: mass.len(),
            });
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(CoreError::InvalidBelief(
                "mass must be finite and non-negative".into(),
            ));
        }
        let z: f64 = mass.iter().sum();
        if z <= 0.0 {
            return Err(CoreError::EmptySupport);
        }
        let mass = if (z - 1.0).abs() <= 1e-12 {
            mass
        } else {
            mass.into_iter().map(|m| m / z).collect()
        };
        Ok(Self {
            mass,
            space,
            skipped_update: false,
        })
    }

    pub fn space(&self) -> &Arc<RewardSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Set when the last update had zero evidence and was skipped.
    pub fn skipped_update(&self) -> bool {
        self.skipped_update
    }

    pub fn prob(&self, theta: &RewardFunction) -> f64 {
        self.space.index_of(theta).map_or(0.0, |i| self.mass[i])
    }

    pub fn support_size(&self) -> usize {
        self.mass.iter().filter(|&&m| m > 0.0).count()
    }

    /// Most probable function; ties go to the earliest in canonical order.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = i;
            }
        }
        best
    }

    /// Marginal distribution of each component over the five levels.
    pub fn marginals(&self) -> FactorizedBelief {
        let d = self.space.dim;
        let mut features = vec![[0.0; 5]; d];
        for (i, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (j, &w) in self.space.weights(i).iter().enumerate() {
                features[j][level_slot(w)] += m;
            }
        }
        FactorizedBelief { features }
    }
}

fn level_slot(w: f64) -> usize {
    ((w + 1.0) * 2.0).round() as usize
}

/// Builds a prior from its description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "belief")]
pub enum PriorSpec {
    #[default]
    Uniform,
    Factorized(FactorizedBelief),
    /// The factorized prior with every feature's distribution reversed.
    Opposite(FactorizedBelief),
}

impl PriorSpec {
    pub fn build(&self, d: usize) -> Result<Posterior> {
        let space = RewardSpace::shared(d)?;
        match self {
            PriorSpec::Uniform => Ok(Posterior::uniform(space)),
            PriorSpec::Factorized(b) => prior_from_factorized(b),
            PriorSpec::Opposite(b) => prior_from_factorized(&opposite_belief(b)),
        }
    }
}

pub fn uniform_prior(d: usize) -> Result<Posterior> {
    Ok(Posterior::uniform(RewardSpace::shared(d)?))
}

/// Joint prior proportional to the product of per-feature marginals, with
/// the all-zero vector excluded.
pub fn prior_from_factorized(belief: &FactorizedBelief) -> Result<Posterior> {
    let space = RewardSpace::shared(belief.dim())?;
    let mass: Vec<f64> = (0..space.len())
        .map(|i| {
            space
                .weights(i)
                .iter()
                .zip(&belief.features)
                .map(|(&w, p)| p[level_slot(w)])
                .product()
        })
        .collect();
    if mass.iter().sum::<f64>() <= 0.0 {
        return Err(CoreError::EmptySupport);
    }
    Posterior::from_mass(space, mass)
}

fn check_choice(set: &OptionSet, chosen: usize) -> Result<()> {
    if chosen == 0 || chosen > set.len() {
        return Err(CoreError::InvalidOption(format!(
            "choice {chosen} outside 1..={}",
            set.len()
        )));
    }
    Ok(())
}

/// Whether `weights` makes option `chosen` (1-based) reward-maximal. Ties
/// count as consistent.
fn consistent(weights: &[f64], options: &[&[f64]], chosen: usize) -> bool {
    let rc: f64 = weights
        .iter()
        .zip(options[chosen - 1])
        .map(|(w, f)| w * f)
        .sum();
    options.iter().all(|o| {
        let r: f64 = weights.iter().zip(*o).map(|(w, f)| w * f).sum();
        r <= rc + TIE_EPS
    })
}

fn option_features<'a>(set: &'a OptionSet, d: usize) -> Result<Vec<&'a [f64]>> {
    set.options()
        .iter()
        .map(|o| {
            if o.features.len() != d {
                Err(CoreError::DimensionMismatch {
                    expected: d,
                    actual: o.features.len(),
                })
            } else {
                Ok(o.features.as_slice())
            }
        })
        .collect()
}

/// 1 if `theta` is consistent with the observed choice, else 0.
pub fn likelihood(theta: &RewardFunction, set: &OptionSet, chosen: usize) -> Result<u8> {
    check_choice(set, chosen)?;
    let opts = option_features(set, theta.dim())?;
    Ok(consistent(theta.weights(), &opts, chosen) as u8)
}

/// Total prior mass consistent with the observation.
pub fn evidence(post: &Posterior, set: &OptionSet, chosen: usize) -> Result<f64> {
    check_choice(set, chosen)?;
    let opts = option_features(set, post.dim())?;
    Ok(post
        .mass
        .iter()
        .enumerate()
        .filter(|(i, &m)| m > 0.0 && consistent(post.space.weights(*i), &opts, chosen))
        .map(|(_, &m)| m)
        .sum())
}

/// Bayes update with the indicator likelihood. When no hypothesis in the
/// support is consistent (possible with noisy users) the input is returned
/// unchanged with the skipped flag set.
pub fn update(post: &Posterior, set: &OptionSet, chosen: usize) -> Result<Posterior> {
    check_choice(set, chosen)?;
    let opts = option_features(set, post.dim())?;
    let mut mass = vec![0.0; post.mass.len()];
    let mut z = 0.0;
    let mut dropped = false;
    for (i, &m) in post.mass.iter().enumerate() {
        if m > 0.0 {
            if consistent(post.space.weights(i), &opts, chosen) {
                mass[i] = m;
                z += m;
            } else {
                dropped = true;
            }
        }
    }
    if z <= 0.0 {
        return Ok(Posterior {
            space: post.space.clone(),
            mass: post.mass.clone(),
            skipped_update: true,
        });
    }
    if !dropped {
        // Nothing was ruled out; renormalising would only add rounding.
        return Ok(Posterior {
            space: post.space.clone(),
            mass: post.mass.clone(),
            skipped_update: false,
        });
    }
    for m in &mut mass {
        *m /= z;
    }
    Ok(Posterior {
        space: post.space.clone(),
        mass,
        skipped_update: false,
    })
}

/// Posterior mean of the reward weights.
pub fn posterior_mean(post: &Posterior) -> Vec<f64> {
    let d = post.dim();
    let mut mean = vec![0.0; d];
    for (i, &m) in post.mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for (acc, w) in mean.iter_mut().zip(post.space.weights(i)) {
            *acc += m * w;
        }
    }
    mean
}

/// Argmax of `mean·φ(o)` over the options, ties uniform.
pub fn decide_with_mean(mean: &[f64], set: &OptionSet, rng: &mut SimRng) -> Result<usize> {
    let scores = set
        .options()
        .iter()
        .map(|o| dot(mean, &o.features))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax_with_ties(&scores, rng))
}

pub fn decide(post: &Posterior, set: &OptionSet, rng: &mut SimRng) -> Result<usize> {
    decide_with_mean(&posterior_mean(post), set, rng)
}

/// `ln after(θ*) - ln before(θ*)`.
pub fn info_gain(before: &Posterior, after: &Posterior, truth: &RewardFunction) -> Result<f64> {
    let b = before.prob(truth);
    if b <= 0.0 {
        return Err(CoreError::TruthNotInSupport);
    }
    let a = after.prob(truth);
    if a <= 0.0 {
        return Err(CoreError::TruthEliminated);
    }
    Ok(a.ln() - b.ln())
}

/// A selected option set with the gain it realises.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetedSet {
    pub set: OptionSet,
    pub chosen: usize,
    pub gain: f64,
    /// Smallest and largest gain among the candidates.
    pub min_gain: f64,
    pub max_gain: f64,
}

/// Samples `n_candidates` sets and returns the one whose information gain
/// under the truthful (noise-free) user is closest to `target_g`.
pub fn targeted_option_sets(
    post: &Posterior,
    truth: &RewardFunction,
    target_g: f64,
    n_candidates: usize,
    k: usize,
    space: &FeatureSpace,
    rng: &mut SimRng,
) -> Result<TargetedSet> {
    if n_candidates == 0 {
        return Err(CoreError::InvalidConfig(
            "n_candidates must be at least 1".into(),
        ));
    }
    if post.prob(truth) <= 0.0 {
        return Err(CoreError::TruthNotInSupport);
    }
    let user = SimulatedUser::deterministic(truth.clone(), 0);
    let mut best: Option<TargetedSet> = None;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..n_candidates {
        let set = space.sample_option_set(k, rng)?;
        let chosen = choose_deterministic(&user as &dyn ChoiceModel, &set, rng)?;
        // The truth stays consistent with its own choice, so the gain is -ln Z.
        let gain = (-evidence(post, &set, chosen)?.ln()).max(0.0);
        lo = lo.min(gain);
        hi = hi.max(gain);
        let better = best
            .as_ref()
            .is_none_or(|b| (gain - target_g).abs() < (b.gain - target_g).abs());
        if better {
            best = Some(TargetedSet {
                set,
                chosen,
                gain,
                min_gain: 0.0,
                max_gain: 0.0,
            });
        }
    }
    let mut best = best.expect("at least one candidate");
    best.min_gain = lo;
    best.max_gain = hi;
    Ok(best)
}
