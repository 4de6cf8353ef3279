//! The multi-round protocol, held-out evaluation, metrics and persistence.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assistants::{AssistantPolicy, BuildContext, DecisionContext, PolicyError, PolicySpec};
use crate::bayes::PriorSpec;
use crate::error::{CoreError, Result};
use crate::gateway::{ChatMessage, Gateway};
use crate::render::{
    flight_kinds, render_conversation, render_feedback, Pending, PreferenceWeights, RenderStyle,
    RoundView,
};
use crate::reward::{
    choose, choose_deterministic, enumerate_levels, reward_space_size, ChoiceModel, Domain,
    FeatureKind, FeatureSpace, OptionSet, RewardFunction, SimulatedUser, HOTEL_FEATURES,
};
use crate::seed::{self, Purpose, SeedPath};

pub const TRANSCRIPT_SCHEMA: &str = "preflab-transcript-v1";

/// Source of option sets for one domain.
pub trait Environment: Send + Sync {
    fn domain(&self) -> Domain;
    fn kinds(&self) -> Vec<FeatureKind>;
    fn dim(&self) -> usize;
    fn price_index(&self) -> Option<usize>;
    fn sample_set(&self, k: usize, rng: &mut crate::reward::SimRng) -> Result<OptionSet>;
}

impl Environment for FeatureSpace {
    fn domain(&self) -> Domain {
        FeatureSpace::domain(self)
    }
    fn kinds(&self) -> Vec<FeatureKind> {
        FeatureSpace::kinds(self)
    }
    fn dim(&self) -> usize {
        FeatureSpace::dim(self)
    }
    fn price_index(&self) -> Option<usize> {
        FeatureSpace::price_index(self)
    }
    fn sample_set(&self, k: usize, rng: &mut crate::reward::SimRng) -> Result<OptionSet> {
        self.sample_option_set(k, rng)
    }
}

fn default_features() -> usize {
    4
}
fn default_rounds() -> usize {
    5
}
fn default_k() -> usize {
    3
}
fn default_heldout() -> usize {
    100
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub domain: Domain,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_heldout")]
    pub heldout_sets: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub prior: PriorSpec,
    pub style: RenderStyle,
    #[serde(default = "default_true")]
    pub evaluate: bool,
}

impl EpisodeConfig {
    pub fn new(domain: Domain) -> Self {
        Self {
            domain,
            features: if domain == Domain::Hotel {
                HOTEL_FEATURES.len()
            } else {
                4
            },
            rounds: 5,
            k: 3,
            heldout_sets: 100,
            noise: 0.0,
            seed: 0,
            policy: PolicySpec::Bayesian,
            prior: PriorSpec::Uniform,
            style: RenderStyle::textual(domain),
            evaluate: true,
        }
    }

    pub fn flight() -> Self {
        Self::new(Domain::Flight)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(CoreError::InvalidConfig("rounds must be at least 1".into()));
        }
        if self.heldout_sets == 0 {
            return Err(CoreError::InvalidConfig(
                "heldout_sets must be at least 1".into(),
            ));
        }
        if self.k < 2 {
            return Err(CoreError::InvalidConfig("k must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(CoreError::InvalidConfig(format!(
                "noise {} outside [0,1]",
                self.noise
            )));
        }
        if self.style.domain != self.domain {
            return Err(CoreError::InvalidConfig(
                "render style domain differs from episode domain".into(),
            ));
        }
        RenderStyle::new(
            self.style.domain,
            self.style.mode,
            self.style.template_variant,
        )?;
        if self.domain != Domain::Product && !(1..=8).contains(&self.features) {
            return Err(CoreError::DimensionOutOfRange(self.features));
        }
        Ok(())
    }

    /// The grid environment for flight and hotel domains.
    pub fn space(&self) -> Result<FeatureSpace> {
        FeatureSpace::for_domain(self.domain, self.features)
    }
}

/// Feature kinds shown for `d`-feature options of a domain.
pub fn kinds_for(domain: Domain, d: usize) -> Result<Vec<FeatureKind>> {
    match domain {
        Domain::Flight => Ok(flight_kinds(d)?.to_vec()),
        Domain::Hotel if d == HOTEL_FEATURES.len() => Ok(HOTEL_FEATURES.to_vec()),
        Domain::Hotel => Err(CoreError::DimensionMismatch {
            expected: HOTEL_FEATURES.len(),
            actual: d,
        }),
        Domain::Product => Ok(Vec::new()),
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub options: OptionSet,
    /// 0 when the policy produced no usable recommendation.
    pub assistant_choice: usize,
    pub user_choice: usize,
    pub feedback_text: String,
    #[serde(default, skip_serializing_if = "is_false")]
    pub parse_failed: bool,
    /// Raw reply of a model assistant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_text: Option<String>,
}

impl RoundRecord {
    pub fn correct(&self) -> bool {
        self.assistant_choice == self.user_choice
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema: String,
    pub user_id: String,
    pub reward_function: Vec<f64>,
    pub variant: String,
    pub seed: u64,
    pub domain: Domain,
    pub style: RenderStyle,
    #[serde(default)]
    pub interaction: u64,
    pub rounds: Vec<RoundRecord>,
    pub per_round_eval: Vec<f64>,
    pub flags: Vec<String>,
    /// Per-round 1..=5 ratings per feature (stated beliefs or preference supervision).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beliefs: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_control: Option<RoundRecord>,
    /// Annotator identity for human sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_id: Option<String>,
}

impl Transcript {
    pub fn kinds(&self) -> Result<Vec<FeatureKind>> {
        let d = self
            .rounds
            .first()
            .map_or(0, |r| r.options.options()[0].features.len());
        kinds_for(self.domain, d)
    }

    /// Chat form of the transcript, regenerated from the rounds.
    pub fn messages(&self) -> Result<Vec<ChatMessage>> {
        let kinds = self.kinds()?;
        let weights = if self.variant == "preference" {
            PreferenceWeights::PreferenceOnly
        } else {
            PreferenceWeights::Unweighted
        };
        let views: Vec<RoundView<'_>> = self
            .rounds
            .iter()
            .enumerate()
            .map(|(i, r)| RoundView {
                set: &r.options,
                assistant_choice: r.assistant_choice,
                user_choice: r.user_choice,
                preference: self
                    .beliefs
                    .as_ref()
                    .and_then(|b| b.get(i))
                    .map(Vec::as_slice),
                weights,
            })
            .collect();
        render_conversation(&self.style, &kinds, &views, &[], Pending::None)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| {
            Err(CoreError::InvalidConfig(format!(
                "transcript {}: {m}",
                self.user_id
            )))
        };
        if self.schema != TRANSCRIPT_SCHEMA {
            return bad(format!("unknown schema `{}`", self.schema));
        }
        if self.rounds.is_empty() {
            return bad("no rounds".into());
        }
        if !self.reward_function.is_empty() {
            RewardFunction::new(self.reward_function.clone())?;
        }
        let noun = self.domain.noun();
        for (i, r) in self.rounds.iter().chain(&self.quality_control).enumerate() {
            let k = r.options.len();
            if !(1..=k).contains(&r.user_choice) {
                return bad(format!(
                    "round {}: user choice {} outside 1..={k}",
                    i + 1,
                    r.user_choice
                ));
            }
            let ok_assistant = (1..=k).contains(&r.assistant_choice)
                || (r.assistant_choice == 0 && r.parse_failed);
            if !ok_assistant {
                return bad(format!(
                    "round {}: assistant choice {} outside 1..={k}",
                    i + 1,
                    r.assistant_choice
                ));
            }
            if r.feedback_text != render_feedback(r.assistant_choice, r.user_choice, noun) {
                return bad(format!(
                    "round {}: feedback text does not match the choices",
                    i + 1
                ));
            }
        }
        if !self.per_round_eval.is_empty() && self.per_round_eval.len() != self.rounds.len() {
            return bad("per_round_eval length differs from rounds".into());
        }
        if self.per_round_eval.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("accuracy outside [0,1]".into());
        }
        if let Some(b) = &self.beliefs {
            let d = self.kinds()?.len();
            if b.len() != self.rounds.len()
                || b.iter()
                    .any(|r| r.len() != d || r.iter().any(|x| !(1..=5).contains(x)))
            {
                return bad("beliefs must hold one 1..=5 rating per feature per round".into());
            }
        }
        self.messages()?;
        Ok(())
    }
}

/// One episode driven step by step. The simulated user is optional so a
/// person can take the user's seat.
pub struct Episode {
    cfg: EpisodeConfig,
    env: Arc<dyn Environment>,
    user: Option<Arc<dyn ChoiceModel>>,
    policy: Box<dyn AssistantPolicy>,
    path: SeedPath,
    user_id: String,
    reward_function: Vec<f64>,
    variant: String,
    interaction: u64,
    rounds: Vec<RoundRecord>,
    per_round_eval: Vec<f64>,
    flags: Vec<String>,
    beliefs: Vec<Vec<usize>>,
    heldout: Option<Vec<(OptionSet, usize, u64)>>,
    current: Option<OptionSet>,
}

/// Outcome of asking the policy for the current set.
#[derive(Clone, Debug, PartialEq)]
pub struct Recommendation {
    pub choice: usize,
    pub parse_failed: bool,
    pub text: Option<String>,
}

impl Episode {
    pub fn new(
        cfg: EpisodeConfig,
        env: Arc<dyn Environment>,
        user: Option<Arc<dyn ChoiceModel>>,
        policy: Box<dyn AssistantPolicy>,
        user_seed: u64,
        interaction: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.evaluate && user.is_none() {
            return Err(CoreError::InvalidConfig(
                "held-out evaluation needs a simulated user".into(),
            ));
        }
        let reward_function = user
            .as_ref()
            .and_then(|u| u.reward_function())
            .map(|r| r.weights().to_vec())
            .unwrap_or_default();
        let variant = policy.name().to_string();
        Ok(Self {
            path: SeedPath::new(cfg.seed, user_seed, interaction),
            user_id: user_seed.to_string(),
            cfg,
            env,
            user,
            policy,
            reward_function,
            variant,
            interaction,
            rounds: Vec::new(),
            per_round_eval: Vec::new(),
            flags: Vec::new(),
            beliefs: Vec::new(),
            heldout: None,
            current: None,
        })
    }

    pub fn set_user_id(&mut self, id: impl Into<String>) {
        self.user_id = id.into();
    }

    pub fn set_variant(&mut self, v: impl Into<String>) {
        self.variant = v.into();
    }

    pub fn set_reward_function(&mut self, w: Vec<f64>) {
        self.reward_function = w;
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &dyn AssistantPolicy {
        self.policy.as_ref()
    }

    pub fn policy_mut(&mut self) -> &mut dyn AssistantPolicy {
        self.policy.as_mut()
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn per_round_eval(&self) -> &[f64] {
        &self.per_round_eval
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    pub fn push_flag(&mut self, f: impl Into<String>) {
        self.flags.push(f.into());
    }

    pub fn push_beliefs(&mut self, ratings: Vec<usize>) {
        self.beliefs.push(ratings);
    }

    /// 1-based number of the round being played.
    pub fn round(&self) -> usize {
        self.rounds.len() + 1
    }

    pub fn is_finished(&self) -> bool {
        self.rounds.len() >= self.cfg.rounds
    }

    pub fn current_set(&mut self) -> Result<&OptionSet> {
        if self.is_finished() {
            return Err(CoreError::InvalidConfig("episode is finished".into()));
        }
        if self.current.is_none() {
            let mut rng = seed::rng(self.path.round(self.round(), Purpose::MainSet));
            self.current = Some(self.env.sample_set(self.cfg.k, &mut rng)?);
        }
        Ok(self.current.as_ref().expect("just set"))
    }

    /// Asks the policy. Replay divergence and missing human input are
    /// errors; any other failure becomes the sentinel choice 0.
    pub fn recommend(&mut self) -> Result<Recommendation> {
        let set = self.current_set()?.clone();
        let r = self.round();
        let ctx = DecisionContext {
            round: r,
            history: &self.rounds,
            user_seed: self.path.round(r, Purpose::MainUser),
            own_seed: self.path.round(r, Purpose::MainAssistant),
        };
        match self.policy.recommend(&set, &ctx) {
            Ok(choice) => Ok(Recommendation {
                choice,
                parse_failed: false,
                text: None,
            }),
            Err(e @ (PolicyError::Divergence { .. } | PolicyError::AwaitingInput)) => {
                Err(CoreError::Policy(Box::new(e)))
            }
            Err(PolicyError::Parse { raw }) => {
                self.flags.push(format!("parse_error:round={r}"));
                Ok(Recommendation {
                    choice: 0,
                    parse_failed: true,
                    text: Some(raw),
                })
            }
            Err(e) => {
                self.flags.push(format!("policy_error:round={r}:{e}"));
                Ok(Recommendation {
                    choice: 0,
                    parse_failed: true,
                    text: None,
                })
            }
        }
    }

    /// Completes the current round: the user chooses (unless `user_choice`
    /// supplies a person's choice), feedback reaches the policy, and the
    /// forked policy is scored on the held-out sets.
    pub fn resolve(
        &mut self,
        rec: Recommendation,
        user_choice: Option<usize>,
    ) -> Result<&RoundRecord> {
        let set = self.current_set()?.clone();
        let r = self.round();
        if rec.choice > set.len() {
            return Err(CoreError::InvalidOption(format!(
                "choice {} outside 1..={}",
                rec.choice,
                set.len()
            )));
        }
        let user_choice = match (user_choice, &self.user) {
            (Some(c), _) if (1..=set.len()).contains(&c) => c,
            (Some(c), _) => {
                return Err(CoreError::InvalidOption(format!(
                    "choice {c} outside 1..={}",
                    set.len()
                )))
            }
            (None, Some(u)) => choose(
                u.as_ref(),
                &set,
                &mut seed::rng(self.path.round(r, Purpose::MainUser)),
            )?,
            (None, None) => return Err(CoreError::InvalidConfig("no user to choose".into())),
        };
        self.policy
            .observe_feedback(&set, rec.choice, user_choice)
            .map_err(|e| CoreError::Policy(Box::new(e)))?;
        if self.policy.posterior().is_some_and(|p| p.skipped_update()) {
            self.flags.push(format!("skipped_update:round={r}"));
        }
        self.rounds.push(RoundRecord {
            feedback_text: render_feedback(rec.choice, user_choice, self.env.domain().noun()),
            options: set,
            assistant_choice: rec.choice,
            user_choice,
            parse_failed: rec.parse_failed,
            assistant_text: rec.text,
        });
        self.current = None;
        if self.cfg.evaluate {
            let acc = self.evaluate_heldout(r)?;
            self.per_round_eval.push(acc);
        }
        Ok(self.rounds.last().expect("just pushed"))
    }

    /// Recommend, then resolve with the simulated user.
    pub fn step(&mut self) -> Result<&RoundRecord> {
        let rec = self.recommend()?;
        self.resolve(rec, None)
    }

    fn heldout(&mut self) -> Result<&[(OptionSet, usize, u64)]> {
        if self.heldout.is_none() {
            let user = self
                .user
                .as_ref()
                .ok_or_else(|| CoreError::InvalidConfig("no simulated user".into()))?;
            let mut sets = Vec::with_capacity(self.cfg.heldout_sets);
            for j in 0..self.cfg.heldout_sets {
                let set = self.env.sample_set(
                    self.cfg.k,
                    &mut seed::rng(self.path.per_user(j, Purpose::HeldoutSet)),
                )?;
                let user_seed = self.path.per_user(j, Purpose::HeldoutUser);
                let truth = choose_deterministic(user.as_ref(), &set, &mut seed::rng(user_seed))?;
                sets.push((set, truth, user_seed));
            }
            self.heldout = Some(sets);
        }
        Ok(self.heldout.as_deref().expect("just set"))
    }

    /// Accuracy of a forked policy against the user's noise-free choices.
    fn evaluate_heldout(&mut self, round: usize) -> Result<f64> {
        let mut fork = self.policy.fork_for_evaluation();
        let path = self.path;
        self.heldout()?;
        let sets = self.heldout.as_ref().expect("built above");
        let mut hits = 0usize;
        for (j, (set, truth, user_seed)) in sets.iter().enumerate() {
            let ctx = DecisionContext {
                round,
                history: &self.rounds,
                user_seed: *user_seed,
                own_seed: path.eval(round, j),
            };
            if matches!(fork.recommend(set, &ctx), Ok(c) if c == *truth) {
                hits += 1;
            }
        }
        Ok(hits as f64 / sets.len() as f64)
    }

    pub fn into_transcript(self) -> Transcript {
        Transcript {
            schema: TRANSCRIPT_SCHEMA.into(),
            user_id: self.user_id,
            reward_function: self.reward_function,
            variant: self.variant,
            seed: self.cfg.seed,
            domain: self.env.domain(),
            style: self.cfg.style,
            interaction: self.interaction,
            rounds: self.rounds,
            per_round_eval: self.per_round_eval,
            flags: self.flags,
            beliefs: if self.beliefs.is_empty() {
                None
            } else {
                Some(self.beliefs)
            },
            quality_control: None,
            participant_id: None,
        }
    }
}

/// Plays every round with a simulated user.
pub fn run_episode(
    cfg: &EpisodeConfig,
    env: Arc<dyn Environment>,
    policy: Box<dyn AssistantPolicy>,
    user: Arc<dyn ChoiceModel>,
    interaction: u64,
) -> Result<Transcript> {
    let user_seed = user.rng_seed();
    let mut ep = Episode::new(cfg.clone(), env, Some(user), policy, user_seed, interaction)?;
    while !ep.is_finished() {
        ep.step()?;
    }
    Ok(ep.into_transcript())
}

/// Mean and standard error of one round's accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStat {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy_by_round: Vec<RoundStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
}

impl Metrics {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy_by_round.last().map_or(f64::NAN, |s| s.mean)
    }

    pub fn final_se(&self) -> f64 {
        self.accuracy_by_round.last().map_or(f64::NAN, |s| s.se)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-round means over transcripts. With two or more seeds the standard
/// error is taken across per-seed means, otherwise across transcripts.
pub fn aggregate(transcripts: &[Transcript]) -> Metrics {
    let rounds = transcripts
        .iter()
        .map(|t| t.per_round_eval.len())
        .max()
        .unwrap_or(0);
    let mut seeds: Vec<u64> = transcripts.iter().map(|t| t.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let accuracy_by_round = (0..rounds)
        .map(|r| {
            let vals: Vec<(u64, f64)> = transcripts
                .iter()
                .filter_map(|t| t.per_round_eval.get(r).map(|&a| (t.seed, a)))
                .collect();
            let all: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let (mean, mut se) = mean_se(&all);
            if seeds.len() >= 2 {
                let per_seed: Vec<f64> = seeds
                    .iter()
                    .filter_map(|s| {
                        let xs: Vec<f64> = vals.iter().filter(|v| v.0 == *s).map(|v| v.1).collect();
                        (!xs.is_empty()).then(|| mean_se(&xs).0)
                    })
                    .collect();
                se = mean_se(&per_seed).1;
            }
            RoundStat {
                mean,
                se,
                n: all.len(),
            }
        })
        .collect();
    Metrics {
        accuracy_by_round,
        agreement: None,
        consistency: None,
    }
}

/// Builds the policy for one user.
pub type PolicyFactory<'a> =
    dyn Fn(&Arc<dyn ChoiceModel>) -> Result<Box<dyn AssistantPolicy>> + Sync + 'a;

/// Factory from a [`PolicySpec`] and the episode configuration.
pub fn spec_factory<'a>(
    cfg: &'a EpisodeConfig,
    env: &'a Arc<dyn Environment>,
    gateway: Option<Arc<Gateway>>,
) -> impl Fn(&Arc<dyn ChoiceModel>) -> Result<Box<dyn AssistantPolicy>> + Sync + 'a {
    move |user| {
        cfg.policy.build(&BuildContext {
            user: Some(user.clone()),
            prior: cfg.prior.clone(),
            dim: env.dim(),
            price_index: env.price_index(),
            style: cfg.style,
            kinds: env.kinds(),
            gateway: gateway.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PopulationResult {
    pub metrics: Metrics,
    /// Seed-major, then user order.
    pub transcripts: Vec<Transcript>,
}

/// One episode per (seed, user), in parallel; results are ordered by seed
/// then user regardless of completion order.
pub fn evaluate_population(
    cfg: &EpisodeConfig,
    env: Arc<dyn Environment>,
    users: &[Arc<dyn ChoiceModel>],
    seeds: &[u64],
    factory: &PolicyFactory<'_>,
) -> Result<PopulationResult> {
    if users.is_empty() || seeds.is_empty() {
        return Err(CoreError::InvalidConfig(
            "need at least one user and one seed".into(),
        ));
    }
    cfg.validate()?;
    let jobs: Vec<(u64, &Arc<dyn ChoiceModel>)> = seeds
        .iter()
        .flat_map(|&s| users.iter().map(move |u| (s, u)))
        .collect();
    let transcripts = jobs
        .par_iter()
        .map(|&(s, user)| {
            let mut c = cfg.clone();
            c.seed = s;
            run_episode(&c, env.clone(), factory(user)?, user.clone(), 0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PopulationResult {
        metrics: aggregate(&transcripts),
        transcripts,
    })
}

/// Simulated users over the enumerated reward space: all of them, or `n`
/// drawn without replacement. A user's seed is its canonical index.
pub fn population(
    d: usize,
    noise: f64,
    n: Option<usize>,
    sample_seed: u64,
) -> Result<Vec<SimulatedUser>> {
    if !(1..=8).contains(&d) {
        return Err(CoreError::DimensionOutOfRange(d));
    }
    let total = reward_space_size(d);
    let mut idx: Vec<usize> = match n {
        Some(n) if n < total => {
            let mut rng = seed::rng(seed::derive(&[
                sample_seed,
                d as u64,
                Purpose::Population as u64,
            ]));
            sample(&mut rng, total, n).into_vec()
        }
        _ => (0..total).collect(),
    };
    idx.sort_unstable();
    let mut want = idx.iter().peekable();
    let mut out = Vec::with_capacity(idx.len());
    for (i, levels) in enumerate_levels(d).enumerate() {
        if want.peek() == Some(&&i) {
            want.next();
            out.push(SimulatedUser::new(
                RewardFunction::from_levels(&levels)?,
                noise,
                i as u64,
            )?);
        }
    }
    Ok(out)
}

pub fn as_choice_models(users: Vec<SimulatedUser>) -> Vec<Arc<dyn ChoiceModel>> {
    users
        .into_iter()
        .map(|u| Arc::new(u) as Arc<dyn ChoiceModel>)
        .collect()
}

/// Fraction of positions where two prediction lists agree.
pub fn agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(CoreError::InvalidConfig("no predictions to compare".into()));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

/// Agreement between direct and belief-derived predictions.
pub fn consistency(direct: &[usize], belief_derived: &[usize]) -> Result<f64> {
    agreement(direct, belief_derived)
}

/// One CSV row of a metrics export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: String,
    pub domain: String,
    pub round: usize,
    pub mean_acc: f64,
    pub se: f64,
    pub n: usize,
}

pub fn metrics_rows(policy: &str, domain: Domain, m: &Metrics) -> Vec<MetricsRow> {
    m.accuracy_by_round
        .iter()
        .enumerate()
        .map(|(i, s)| MetricsRow {
            policy: policy.into(),
            domain: domain.singular().into(),
            round: i + 1,
            mean_acc: s.mean,
            se: s.se,
            n: s.n,
        })
        .collect()
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_transcripts<W: Write>(mut w: W, transcripts: &[Transcript]) -> Result<()> {
    for t in transcripts {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transcripts<R: std::io::Read>(r: R) -> Result<Vec<Transcript>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transcript = serde_json::from_str(&line)
            .map_err(|e| CoreError::Parse(format!("transcript line {}: {e}", i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

pub fn save_transcripts(path: &Path, transcripts: &[Transcript]) -> Result<()> {
    write_transcripts(
        std::io::BufWriter::new(std::fs::File::create(path)?),
        transcripts,
    )
}

pub fn load_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    read_transcripts(std::fs::File::open(path)?)
}
