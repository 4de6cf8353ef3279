//! Post-hoc analyses: human annotation data, normalised reward distances,
//! noise sweeps and information-gain experiments.
//!
//! Human user records are read from JSON (an array of [`HumanUserRecord`])
//! or CSV with one row per participant and round:
//!
//! ```text
//! participant_id,round,stated_preferences,options,choice
//! p01,1,"1 3 3 5","[[0.3,0.3,0.5,0.3],[0.6,0.1,0.0,0.9],[0.0,1.0,0.5,0.2]]",2
//! ```
//!
//! `stated_preferences` holds one 1..=5 rating per feature separated by
//! spaces; `options` is a JSON list of feature vectors; `choice` is 1-based.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::assistants::{AssistantPolicy, BayesianPolicy};
use crate::bayes::{info_gain, targeted_option_sets, update, Posterior};
use crate::error::{CoreError, Result};
use crate::harness::{
    aggregate, as_choice_models, evaluate_population, population, Environment, EpisodeConfig,
    PolicyFactory, Transcript,
};
use crate::reward::{
    choose_deterministic, maximizers, reward, ChoiceModel, FeatureSpace, OptionSet, RewardFunction,
    SimulatedUser, LEVELS,
};
use crate::seed::{self, Purpose, SeedPath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanRound {
    pub options: OptionSet,
    pub choice: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanUserRecord {
    pub participant_id: String,
    pub stated_preferences: Vec<usize>,
    pub rounds: Vec<HumanRound>,
    /// 0 for the original order, i > 0 for the i-th shuffled copy.
    #[serde(default)]
    pub shuffle: u32,
}

pub const HUMAN_ROUNDS: usize = 5;

fn check_ratings(r: &[usize]) -> Result<()> {
    if r.is_empty() || r.iter().any(|x| !(1..=5).contains(x)) {
        return Err(CoreError::InvalidBelief(format!(
            "ratings {r:?} must be 1..=5"
        )));
    }
    Ok(())
}

impl HumanUserRecord {
    pub fn validate(&self) -> Result<()> {
        check_ratings(&self.stated_preferences)?;
        if self.rounds.len() != HUMAN_ROUNDS {
            return Err(CoreError::InvalidConfig(format!(
                "participant {} has {} rounds, expected {HUMAN_ROUNDS}",
                self.participant_id,
                self.rounds.len()
            )));
        }
        for r in &self.rounds {
            if !(1..=r.options.len()).contains(&r.choice) {
                return Err(CoreError::InvalidOption(format!(
                    "choice {} outside 1..={}",
                    r.choice,
                    r.options.len()
                )));
            }
            if r.options
                .options()
                .iter()
                .any(|o| o.features.len() != self.stated_preferences.len())
            {
                return Err(CoreError::DimensionMismatch {
                    expected: self.stated_preferences.len(),
                    actual: r.options.options()[0].features.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanAssistantRound {
    pub options: OptionSet,
    pub recommendation: usize,
    /// The user's choice revealed as feedback.
    pub feedback: usize,
    pub beliefs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanAssistantRecord {
    pub participant_id: String,
    pub target_user_id: String,
    pub rounds: Vec<HumanAssistantRound>,
}

impl HumanAssistantRecord {
    pub fn validate(&self) -> Result<()> {
        for r in &self.rounds {
            check_ratings(&r.beliefs)?;
            let k = r.options.len();
            if !(1..=k).contains(&r.recommendation) || !(1..=k).contains(&r.feedback) {
                return Err(CoreError::InvalidOption(
                    "recommendation or feedback outside the option set".into(),
                ));
            }
        }
        Ok(())
    }

    /// Fraction of rounds whose recommendation matched the user's choice.
    pub fn accuracy(&self) -> f64 {
        let hits = self
            .rounds
            .iter()
            .filter(|r| r.recommendation == r.feedback)
            .count();
        hits as f64 / self.rounds.len().max(1) as f64
    }
}

/// Ratings 1..=5 map to weights -1, -0.5, 0, 0.5, 1.
pub fn stated_prefs_to_reward(ratings: &[usize]) -> Result<RewardFunction> {
    check_ratings(ratings)?;
    if ratings.iter().all(|&r| r == 3) {
        return Err(CoreError::IndifferentUser);
    }
    RewardFunction::new(ratings.iter().map(|&r| LEVELS[r - 1]).collect())
}

/// Fraction of rounds where the choice attains the maximal reward under the
/// stated preferences. Ties count as consistent.
pub fn user_consistency(record: &HumanUserRecord) -> Result<f64> {
    let theta = stated_prefs_to_reward(&record.stated_preferences)?;
    if record.rounds.is_empty() {
        return Err(CoreError::InvalidConfig("no rounds".into()));
    }
    let mut hits = 0usize;
    for r in &record.rounds {
        let utils = r
            .options
            .options()
            .iter()
            .map(|o| reward(&theta, o))
            .collect::<Result<Vec<_>>>()?;
        if maximizers(&utils).contains(&(r.choice - 1)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / record.rounds.len() as f64)
}

/// `n` copies with the round order permuted; option sets keep their choices.
pub fn shuffle_variants(
    record: &HumanUserRecord,
    n: usize,
    rng: &mut crate::reward::SimRng,
) -> Vec<HumanUserRecord> {
    (0..n)
        .map(|i| {
            let mut rounds = record.rounds.clone();
            rounds.shuffle(rng);
            HumanUserRecord {
                participant_id: record.participant_id.clone(),
                stated_preferences: record.stated_preferences.clone(),
                rounds,
                shuffle: i as u32 + 1,
            }
        })
        .collect()
}

/// Originals followed by `n` shuffled copies of each.
pub fn with_shuffles(records: &[HumanUserRecord], n: usize, run_seed: u64) -> Vec<HumanUserRecord> {
    let mut out = records.to_vec();
    for (i, r) in records.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(&[run_seed, i as u64, Purpose::Shuffle as u64]));
        out.extend(shuffle_variants(r, n, &mut rng));
    }
    out
}

/// `θ / Σ|θ_j|`.
pub fn l1_normalize(theta: &[f64]) -> Result<Vec<f64>> {
    let norm: f64 = theta.iter().map(|x| x.abs()).sum();
    if norm == 0.0 {
        return Err(CoreError::InvalidReward(
            "cannot normalise the zero vector".into(),
        ));
    }
    Ok(theta.iter().map(|x| x / norm).collect())
}

/// Prior expectation of the normalised reward function.
pub fn normalized_prior_mean(prior: &Posterior) -> Vec<f64> {
    let space = prior.space();
    let mut mean = vec![0.0; prior.dim()];
    for (i, &m) in prior.mass().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let n = l1_normalize(space.weights(i)).expect("enumerated functions are non-zero");
        for (acc, x) in mean.iter_mut().zip(n) {
            *acc += m * x;
        }
    }
    mean
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Ordinary least squares with a two-sided t-test on the slope.
pub fn ols(x: &[f64], y: &[f64]) -> Result<Regression> {
    if x.len() != y.len() {
        return Err(CoreError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(CoreError::InvalidConfig(
            "regression needs at least 3 points".into(),
        ));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 1e-12 * nf {
        return Err(CoreError::DegenerateDesign(
            "all distances are equal".into(),
        ));
    }
    if y.iter().all(|&b| b == y[0]) {
        return Ok(Regression {
            slope: 0.0,
            intercept: y[0],
            p_value: 1.0,
            n,
        });
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let p_value = if se == 0.0 {
        if slope.abs() <= 1e-12 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = StudentsT::new(0.0, 1.0, nf - 2.0)
            .map_err(|e| CoreError::DegenerateDesign(e.to_string()))?;
        (2.0 * (1.0 - t.cdf((slope / se).abs()))).clamp(0.0, 1.0)
    };
    Ok(Regression {
        slope,
        intercept,
        p_value,
        n,
    })
}

/// Regresses final accuracy on the L2 distance between each normalised
/// reward function and the prior's normalised mean.
pub fn accuracy_vs_prior_distance(
    results: &[(RewardFunction, f64)],
    prior: &Posterior,
) -> Result<Regression> {
    let center = normalized_prior_mean(prior);
    let mut x = Vec::with_capacity(results.len());
    for (theta, _) in results {
        if theta.dim() != center.len() {
            return Err(CoreError::DimensionMismatch {
                expected: center.len(),
                actual: theta.dim(),
            });
        }
        let n = l1_normalize(theta.weights())?;
        x.push(
            n.iter()
                .zip(&center)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
        );
    }
    let y: Vec<f64> = results.iter().map(|r| r.1).collect();
    ols(&x, &y)
}

/// Final-round accuracy per reward function, averaged over seeds.
pub fn final_accuracy_by_user(transcripts: &[Transcript]) -> Result<Vec<(RewardFunction, f64)>> {
    let mut acc: BTreeMap<String, (Vec<f64>, f64, usize)> = BTreeMap::new();
    for t in transcripts {
        let Some(&last) = t.per_round_eval.last() else {
            continue;
        };
        let e = acc
            .entry(t.user_id.clone())
            .or_insert_with(|| (t.reward_function.clone(), 0.0, 0));
        e.1 += last;
        e.2 += 1;
    }
    acc.into_values()
        .map(|(w, s, n)| Ok((RewardFunction::new(w)?, s / n as f64)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub noise: f64,
    pub mean: f64,
    pub se: f64,
}

/// Final-round accuracy per noise level; users, seeds and held-out sets are
/// the same at every level.
pub fn noise_sweep(
    cfg: &EpisodeConfig,
    env: Arc<dyn Environment>,
    noises: &[f64],
    n_users: Option<usize>,
    seeds: &[u64],
    factory: &PolicyFactory<'_>,
) -> Result<Vec<NoisePoint>> {
    noises
        .iter()
        .map(|&noise| {
            if !(0.0..=1.0).contains(&noise) {
                return Err(CoreError::InvalidConfig(format!(
                    "noise {noise} outside [0,1]"
                )));
            }
            let users = as_choice_models(population(env.dim(), noise, n_users, cfg.seed)?);
            let mut c = cfg.clone();
            c.noise = noise;
            let res = evaluate_population(&c, env.clone(), &users, seeds, factory)?;
            Ok(NoisePoint {
                noise,
                mean: res.metrics.final_accuracy(),
                se: res.metrics.final_se(),
            })
        })
        .collect()
}

/// Summary of episodes whose option sets were chosen for a target gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoGainPoint {
    pub target: f64,
    pub mean_gain: f64,
    pub mean_abs_error: f64,
    /// Mean over rounds of the candidates' max minus min gain.
    pub mean_feasible_range: f64,
    pub final_accuracy: f64,
    pub rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoGainConfig {
    pub targets: Vec<f64>,
    pub rounds: usize,
    pub candidates: usize,
    pub heldout_sets: usize,
    pub seed: u64,
}

impl Default for InfoGainConfig {
    fn default() -> Self {
        Self {
            targets: vec![0.0, 0.25, 0.5],
            rounds: 5,
            candidates: 5000,
            heldout_sets: 100,
            seed: 0,
        }
    }
}

/// For each target, every user plays `rounds` rounds on targeted option sets
/// with a Bayesian assistant starting from `prior`; the final posterior is
/// scored on held-out sets.
pub fn info_gain_experiment(
    cfg: &InfoGainConfig,
    space: &FeatureSpace,
    users: &[SimulatedUser],
    prior: &Posterior,
) -> Result<Vec<InfoGainPoint>> {
    use rayon::prelude::*;
    if users.is_empty() || cfg.rounds == 0 || cfg.heldout_sets == 0 {
        return Err(CoreError::InvalidConfig(
            "need users, rounds and held-out sets".into(),
        ));
    }
    cfg.targets
        .iter()
        .map(|&target| {
            let per_user = users
                .par_iter()
                .map(|u| -> Result<(Vec<(f64, f64)>, f64)> {
                    let path = SeedPath::new(cfg.seed, u.rng_seed, target.to_bits());
                    let mut post = prior.clone();
                    let mut rows = Vec::with_capacity(cfg.rounds);
                    for r in 1..=cfg.rounds {
                        let mut rng = seed::rng(path.round(r, Purpose::Targeting));
                        let t = targeted_option_sets(
                            &post,
                            &u.reward,
                            target,
                            cfg.candidates,
                            3,
                            space,
                            &mut rng,
                        )?;
                        let next = update(&post, &t.set, t.chosen)?;
                        let g = info_gain(&post, &next, &u.reward)?;
                        rows.push((g, t.max_gain - t.min_gain));
                        post = next;
                    }
                    let mut policy = BayesianPolicy::new(post);
                    let user: &dyn ChoiceModel = u;
                    let mut hits = 0usize;
                    for j in 0..cfg.heldout_sets {
                        let set = space.sample_option_set(
                            3,
                            &mut seed::rng(path.per_user(j, Purpose::HeldoutSet)),
                        )?;
                        let user_seed = path.per_user(j, Purpose::HeldoutUser);
                        let truth = choose_deterministic(user, &set, &mut seed::rng(user_seed))?;
                        let ctx = crate::assistants::DecisionContext {
                            round: cfg.rounds,
                            history: &[],
                            user_seed,
                            own_seed: path.eval(cfg.rounds, j),
                        };
                        if policy
                            .recommend(&set, &ctx)
                            .map_err(|e| CoreError::Policy(Box::new(e)))?
                            == truth
                        {
                            hits += 1;
                        }
                    }
                    Ok((rows, hits as f64 / cfg.heldout_sets as f64))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<(f64, f64)> = per_user.iter().flat_map(|p| p.0.iter().copied()).collect();
            let n = rows.len() as f64;
            Ok(InfoGainPoint {
                target,
                mean_gain: rows.iter().map(|r| r.0).sum::<f64>() / n,
                mean_abs_error: rows.iter().map(|r| (r.0 - target).abs()).sum::<f64>() / n,
                mean_feasible_range: rows.iter().map(|r| r.1).sum::<f64>() / n,
                final_accuracy: per_user.iter().map(|p| p.1).sum::<f64>() / per_user.len() as f64,
                rounds: rows.len(),
            })
        })
        .collect()
}

/// Records for simulated users: stated preferences are the true ratings and
/// every choice is the noise-free one.
pub fn simulate_user_records(
    users: &[SimulatedUser],
    space: &FeatureSpace,
    run_seed: u64,
) -> Result<Vec<HumanUserRecord>> {
    users
        .iter()
        .map(|u| {
            let path = SeedPath::new(run_seed, u.rng_seed, 0);
            let rounds = (1..=HUMAN_ROUNDS)
                .map(|r| {
                    let options = space
                        .sample_option_set(3, &mut seed::rng(path.round(r, Purpose::MainSet)))?;
                    let choice = choose_deterministic(
                        u,
                        &options,
                        &mut seed::rng(path.round(r, Purpose::MainUser)),
                    )?;
                    Ok(HumanRound { options, choice })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HumanUserRecord {
                participant_id: format!("sim-{}", u.rng_seed),
                stated_preferences: u.reward.levels().iter().map(|l| l + 1).collect(),
                rounds,
                shuffle: 0,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    participant_id: String,
    round: usize,
    stated_preferences: String,
    options: String,
    choice: usize,
}

fn parse_ratings(s: &str) -> Result<Vec<usize>> {
    s.split(|c: char| c.is_whitespace() || c == ';' || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| CoreError::Parse(format!("rating `{t}`")))
        })
        .collect()
}

pub fn read_user_records_csv<R: std::io::Read>(r: R) -> Result<Vec<HumanUserRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut by_id: BTreeMap<String, (Vec<usize>, Vec<(usize, HumanRound)>)> = BTreeMap::new();
    let mut order = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        let feats: Vec<Vec<f64>> = serde_json::from_str(&row.options)
            .map_err(|e| CoreError::Parse(format!("options `{}`: {e}", row.options)))?;
        let ratings = parse_ratings(&row.stated_preferences)?;
        let entry = by_id.entry(row.participant_id.clone()).or_insert_with(|| {
            order.push(row.participant_id.clone());
            (ratings.clone(), Vec::new())
        });
        if entry.0 != ratings {
            return Err(CoreError::Parse(format!(
                "participant {} changes stated preferences",
                row.participant_id
            )));
        }
        entry.1.push((
            row.round,
            HumanRound {
                options: OptionSet::from_features(feats)?,
                choice: row.choice,
            },
        ));
    }
    order
        .into_iter()
        .map(|id| {
            let (ratings, mut rounds) = by_id.remove(&id).expect("registered");
            rounds.sort_by_key(|r| r.0);
            let rec = HumanUserRecord {
                participant_id: id,
                stated_preferences: ratings,
                rounds: rounds.into_iter().map(|r| r.1).collect(),
                shuffle: 0,
            };
            rec.validate()?;
            Ok(rec)
        })
        .collect()
}

pub fn write_user_records_csv<W: std::io::Write>(w: W, records: &[HumanUserRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for rec in records {
        let prefs = rec
            .stated_preferences
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        for (i, r) in rec.rounds.iter().enumerate() {
            let feats: Vec<&Vec<f64>> = r.options.options().iter().map(|o| &o.features).collect();
            wtr.serialize(CsvRow {
                participant_id: rec.participant_id.clone(),
                round: i + 1,
                stated_preferences: prefs.clone(),
                options: serde_json::to_string(&feats)?,
                choice: r.choice,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_user_records_json(text: &str) -> Result<Vec<HumanUserRecord>> {
    let recs: Vec<HumanUserRecord> = serde_json::from_str(text)?;
    for r in &recs {
        r.validate()?;
    }
    Ok(recs)
}

/// A user-role session transcript as a human user record. The stated
/// preferences are recovered from the stored reward function.
pub fn user_record_from_transcript(t: &Transcript) -> Result<HumanUserRecord> {
    let theta = RewardFunction::new(t.reward_function.clone())?;
    let rec = HumanUserRecord {
        participant_id: t
            .participant_id
            .clone()
            .unwrap_or_else(|| t.user_id.clone()),
        stated_preferences: theta.levels().iter().map(|l| l + 1).collect(),
        rounds: t
            .rounds
            .iter()
            .map(|r| HumanRound {
                options: r.options.clone(),
                choice: r.user_choice,
            })
            .collect(),
        shuffle: 0,
    };
    rec.validate()?;
    Ok(rec)
}

/// An assistant-role session transcript as a human assistant record.
pub fn assistant_record_from_transcript(t: &Transcript) -> Result<HumanAssistantRecord> {
    let beliefs = t.beliefs.as_ref().ok_or_else(|| {
        CoreError::InvalidConfig(format!("transcript {} has no stated beliefs", t.user_id))
    })?;
    let rec = HumanAssistantRecord {
        participant_id: t.participant_id.clone().unwrap_or_default(),
        target_user_id: t.user_id.clone(),
        rounds: t
            .rounds
            .iter()
            .zip(beliefs)
            .map(|(r, b)| HumanAssistantRound {
                options: r.options.clone(),
                recommendation: r.assistant_choice,
                feedback: r.user_choice,
                beliefs: b.clone(),
            })
            .collect(),
    };
    rec.validate()?;
    Ok(rec)
}

/// Per-round accuracy over transcripts, as in [`aggregate`].
pub fn accuracy_curve(transcripts: &[Transcript]) -> Vec<f64> {
    aggregate(transcripts)
        .accuracy_by_round
        .iter()
        .map(|s| s.mean)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{prior_from_factorized, uniform_prior, FactorizedBelief};
    use proptest::prelude::*;

    fn users(n: usize) -> Vec<SimulatedUser> {
        population(4, 0.0, Some(n), 5).unwrap()
    }

    #[test]
    fn stated_pref_examples() {
        assert_eq!(
            stated_prefs_to_reward(&[1, 3, 3, 3]).unwrap().weights(),
            &[-1.0, 0.0, 0.0, 0.0]
        );
        assert!(matches!(
            stated_prefs_to_reward(&[3, 3, 3, 3]),
            Err(CoreError::IndifferentUser)
        ));
        assert_eq!(
            stated_prefs_to_reward(&[5, 1, 4, 2]).unwrap().weights(),
            &[1.0, -1.0, 0.5, -0.5]
        );
        assert!(stated_prefs_to_reward(&[6, 1, 1, 1]).is_err());
    }

    #[test]
    fn consistency_examples() {
        let space = FeatureSpace::flight();
        let recs = simulate_user_records(&users(50), &space, 1).unwrap();
        for r in &recs {
            assert_eq!(user_consistency(r).unwrap(), 1.0);
        }
        let mut r = recs[0].clone();
        let theta = stated_prefs_to_reward(&r.stated_preferences).unwrap();
        // Make two rounds inconsistent by picking a strictly worse option.
        let mut broken = 0;
        let mut rng = seed::rng(3);
        while broken < 2 {
            let set = space.sample_option_set(3, &mut rng).unwrap();
            let utils: Vec<f64> = set
                .options()
                .iter()
                .map(|o| reward(&theta, o).unwrap())
                .collect();
            let top = maximizers(&utils);
            if let Some(bad) = (0..3).find(|i| !top.contains(i)) {
                r.rounds[broken] = HumanRound {
                    options: set,
                    choice: bad + 1,
                };
                broken += 1;
            }
        }
        assert!((user_consistency(&r).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn random_choices_near_chance() {
        let space = FeatureSpace::flight();
        let mut recs = simulate_user_records(&users(400), &space, 2).unwrap();
        let mut rng = seed::rng(11);
        for r in &mut recs {
            for round in &mut r.rounds {
                round.choice = rand::Rng::random_range(&mut rng, 1..=3);
            }
        }
        let mean: f64 = recs
            .iter()
            .map(|r| user_consistency(r).unwrap())
            .sum::<f64>()
            / recs.len() as f64;
        // Ties make random choices consistent slightly more often than 1/3.
        assert!((mean - 1.0 / 3.0).abs() < 0.06, "{mean}");
    }

    #[test]
    fn shuffles() {
        let recs = simulate_user_records(&users(500), &FeatureSpace::flight(), 4).unwrap();
        let all = with_shuffles(&recs, 3, 0);
        assert_eq!(all.len(), 2000);
        for r in &all {
            r.validate().unwrap();
            assert_eq!(user_consistency(r).unwrap(), 1.0);
        }
        let v = shuffle_variants(&recs[0], 3, &mut seed::rng(1));
        for s in &v {
            for round in &s.rounds {
                assert!(recs[0].rounds.contains(round));
            }
        }
        assert!(shuffle_variants(&recs[0], 0, &mut seed::rng(1)).is_empty());
    }

    #[test]
    fn l1_examples() {
        let a = l1_normalize(&[-1.0; 4]).unwrap();
        assert_eq!(a, vec![-0.25; 4]);
        assert_eq!(l1_normalize(&[-0.5; 4]).unwrap(), a);
        assert_eq!(
            l1_normalize(&[1.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            l1_normalize(&[-1.0, 1.0, 0.0, 0.0]).unwrap(),
            vec![-0.5, 0.5, 0.0, 0.0]
        );
        assert!(l1_normalize(&[0.0; 4]).is_err());
    }

    proptest! {
        #[test]
        fn l1_scale_invariant_and_idempotent(
            v in prop::collection::vec(-1.0f64..1.0, 1..8),
            c in 0.001f64..1000.0,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
            let n = l1_normalize(&v).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let m = l1_normalize(&scaled).unwrap();
            for (a, b) in n.iter().zip(&m) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let nn = l1_normalize(&n).unwrap();
            for (a, b) in n.iter().zip(&nn) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regression_planted_slope() {
        let mut rng = seed::rng(9);
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let noise = rand_distr_normal(&mut rng, 200, 0.01);
        let y: Vec<f64> = x
            .iter()
            .zip(&noise)
            .map(|(a, e)| 1.0 - 0.5 * a + e)
            .collect();
        let r = ols(&x, &y).unwrap();
        assert!((r.slope + 0.5).abs() < 0.05);
        assert!(r.p_value < 1e-6);
        let flat = ols(&x, &vec![0.7; 200]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!((flat.p_value - 1.0).abs() < 1e-12);
        assert!(matches!(
            ols(&[0.3; 5], &[0.1, 0.2, 0.3, 0.4, 0.5]),
            Err(CoreError::DegenerateDesign(_))
        ));
        assert!(ols(&[0.1, 0.2], &[0.1, 0.2]).is_err());
    }

    fn rand_distr_normal(rng: &mut crate::reward::SimRng, n: usize, sd: f64) -> Vec<f64> {
        // Box-Muller from uniform draws.
        (0..n)
            .map(|_| {
                let u1: f64 = rand::Rng::random_range(rng, f64::EPSILON..1.0);
                let u2: f64 = rand::Rng::random(rng);
                sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn uniform_prior_center_is_zero() {
        let c = normalized_prior_mean(&uniform_prior(4).unwrap());
        assert!(c.iter().all(|x| x.abs() < 1e-12));
        let results: Vec<(RewardFunction, f64)> =
            users(30).into_iter().map(|u| (u.reward, 0.5)).collect();
        let r = accuracy_vs_prior_distance(&results, &uniform_prior(4).unwrap()).unwrap();
        assert_eq!(r.slope, 0.0);

        let skew = prior_from_factorized(
            &FactorizedBelief::new(vec![[0.6, 0.1, 0.1, 0.1, 0.1]; 4]).unwrap(),
        )
        .unwrap();
        let c = normalized_prior_mean(&skew);
        assert!(c.iter().all(|&x| x < 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let recs = simulate_user_records(&users(5), &FeatureSpace::flight(), 7).unwrap();
        let mut buf = Vec::new();
        write_user_records_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("participant_id,round,stated_preferences,options,choice\n"));
        assert_eq!(read_user_records_csv(buf.as_slice()).unwrap(), recs);
        let json = serde_json::to_string(&recs).unwrap();
        assert_eq!(read_user_records_json(&json).unwrap(), recs);
    }

    #[test]
    fn info_gain_orders_targets() {
        let cfg = InfoGainConfig {
            targets: vec![0.0, 0.5],
            rounds: 2,
            candidates: 300,
            heldout_sets: 20,
            seed: 1,
        };
        let pts = info_gain_experiment(
            &cfg,
            &FeatureSpace::flight(),
            &users(10),
            &uniform_prior(4).unwrap(),
        )
        .unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].rounds, 20);
        assert!(pts[0].mean_gain >= 0.0);
        assert!(pts[0].mean_gain < pts[1].mean_gain);
        assert!(pts[0].final_accuracy <= pts[1].final_accuracy);
        for p in &pts {
            assert!(p.mean_abs_error <= p.mean_feasible_range);
        }
    }
}
