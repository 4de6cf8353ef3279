//! Assistant policies behind one interface.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bayes::{
    beliefs_to_posterior_mean, decide_with_mean, posterior_mean, update, FactorizedBelief,
    Posterior, PriorSpec,
};
use crate::error::CoreError;
use crate::gateway::{parse_choice, Gateway, GatewayConfig, GatewayError};
use crate::harness::RoundRecord;
use crate::render::{
    render_conversation, Pending, PreferenceWeights, RenderStyle, RoundView, TemplateVariant,
};
use crate::reward::{argmax_with_ties, choose_deterministic, ChoiceModel, FeatureKind, OptionSet};
use crate::seed;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unparsable reply: {raw:?}")]
    Parse { raw: String },
    #[error("replay diverged at round {round}")]
    Divergence { round: usize },
    #[error("waiting for a human decision")]
    AwaitingInput,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Gateway(GatewayError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl From<GatewayError> for PolicyError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Parse { raw } => PolicyError::Parse { raw },
            other => PolicyError::Gateway(other),
        }
    }
}

/// What a policy sees when asked for a recommendation.
#[derive(Clone, Copy, Debug)]
pub struct DecisionContext<'a> {
    /// 1-based round of the main line.
    pub round: usize,
    pub history: &'a [RoundRecord],
    /// Seed of the user's tie stream for this set.
    pub user_seed: u64,
    /// Seed of the policy's own stream for this set.
    pub own_seed: u64,
}

pub trait AssistantPolicy: Send {
    fn name(&self) -> &'static str;

    /// 1-based index of the recommended option.
    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError>;

    /// `own_choice` is 0 when the recommendation failed.
    fn observe_feedback(
        &mut self,
        _set: &OptionSet,
        _own_choice: usize,
        _user_choice: usize,
    ) -> Result<(), PolicyError> {
        Ok(())
    }

    fn elicit_beliefs(
        &mut self,
        _history: &[RoundRecord],
    ) -> Option<Result<FactorizedBelief, PolicyError>> {
        None
    }

    /// A copy that answers held-out queries; feedback never reaches it.
    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy>;

    /// Serialized main-line state.
    fn snapshot(&self) -> Value;

    fn posterior(&self) -> Option<&Posterior> {
        None
    }
}

/// Exact Bayesian assistant recommending by posterior mean.
#[derive(Clone, Debug)]
pub struct BayesianPolicy {
    posterior: Posterior,
    mean: Vec<f64>,
}

impl BayesianPolicy {
    pub fn new(prior: Posterior) -> Self {
        let mean = posterior_mean(&prior);
        Self {
            posterior: prior,
            mean,
        }
    }
}

impl AssistantPolicy for BayesianPolicy {
    fn name(&self) -> &'static str {
        "bayesian"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        Ok(decide_with_mean(
            &self.mean,
            set,
            &mut seed::rng(ctx.own_seed),
        )?)
    }

    fn observe_feedback(
        &mut self,
        set: &OptionSet,
        _own: usize,
        user_choice: usize,
    ) -> Result<(), PolicyError> {
        self.posterior = update(&self.posterior, set, user_choice)?;
        self.mean = posterior_mean(&self.posterior);
        Ok(())
    }

    fn elicit_beliefs(
        &mut self,
        _history: &[RoundRecord],
    ) -> Option<Result<FactorizedBelief, PolicyError>> {
        Some(Ok(self.posterior.marginals()))
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.name(), "posterior": self.posterior })
    }

    fn posterior(&self) -> Option<&Posterior> {
        Some(&self.posterior)
    }
}

/// Knows the user's reward function; shares the user's tie stream.
#[derive(Clone)]
pub struct OraclePolicy {
    user: Arc<dyn ChoiceModel>,
}

impl OraclePolicy {
    pub fn new(user: Arc<dyn ChoiceModel>) -> Self {
        Self { user }
    }
}

impl AssistantPolicy for OraclePolicy {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        Ok(choose_deterministic(
            self.user.as_ref(),
            set,
            &mut seed::rng(ctx.user_seed),
        )?)
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.name() })
    }
}

/// The oracle, except that with probability `wrong_rate` it picks a
/// uniformly drawn other option.
#[derive(Clone)]
pub struct NoisyOraclePolicy {
    oracle: OraclePolicy,
    wrong_rate: f64,
}

impl NoisyOraclePolicy {
    pub fn new(user: Arc<dyn ChoiceModel>, wrong_rate: f64) -> Result<Self, CoreError> {
        if !(0.0..=1.0).contains(&wrong_rate) {
            return Err(CoreError::InvalidConfig(format!(
                "wrong_rate {wrong_rate} outside [0,1]"
            )));
        }
        Ok(Self {
            oracle: OraclePolicy::new(user),
            wrong_rate,
        })
    }
}

impl AssistantPolicy for NoisyOraclePolicy {
    fn name(&self) -> &'static str {
        "noisy_oracle"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        let right = self.oracle.recommend(set, ctx)?;
        let mut rng = seed::rng(ctx.own_seed);
        if self.wrong_rate > 0.0 && rng.random::<f64>() < self.wrong_rate {
            let pick = rng.random_range(1..set.len());
            return Ok(if pick >= right { pick + 1 } else { pick });
        }
        Ok(right)
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.name(), "wrong_rate": self.wrong_rate })
    }
}

#[derive(Clone, Debug, Default)]
pub struct RandomPolicy;

impl AssistantPolicy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        Ok(seed::rng(ctx.own_seed).random_range(1..=set.len()))
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.name() })
    }
}

/// Always the lowest price; ties uniform.
#[derive(Clone, Debug)]
pub struct CheapestPolicy {
    price_index: usize,
}

impl CheapestPolicy {
    pub fn new(price_index: Option<usize>) -> Result<Self, CoreError> {
        price_index
            .map(|price_index| Self { price_index })
            .ok_or_else(|| {
                CoreError::InvalidConfig("the cheapest heuristic needs a price feature".into())
            })
    }
}

impl AssistantPolicy for CheapestPolicy {
    fn name(&self) -> &'static str {
        "cheapest"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        let scores =
            set.options()
                .iter()
                .map(|o| {
                    o.features.get(self.price_index).map(|p| -p).ok_or(
                        CoreError::DimensionMismatch {
                            expected: self.price_index + 1,
                            actual: o.features.len(),
                        },
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
        Ok(argmax_with_ties(&scores, &mut seed::rng(ctx.own_seed)))
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.name(), "price_index": self.price_index })
    }
}

/// Decides by the expected weights of a fixed factorized belief.
#[derive(Clone, Debug)]
pub struct BeliefDerivedPolicy {
    belief: FactorizedBelief,
    mean: Vec<f64>,
}

impl BeliefDerivedPolicy {
    pub fn new(belief: FactorizedBelief) -> Self {
        let mean = beliefs_to_posterior_mean(&belief);
        Self { belief, mean }
    }
}

impl AssistantPolicy for BeliefDerivedPolicy {
    fn name(&self) -> &'static str {
        "belief_derived"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        Ok(decide_with_mean(
            &self.mean,
            set,
            &mut seed::rng(ctx.own_seed),
        )?)
    }

    fn elicit_beliefs(
        &mut self,
        _history: &[RoundRecord],
    ) -> Option<Result<FactorizedBelief, PolicyError>> {
        Some(Ok(self.belief.clone()))
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.name(), "belief": self.belief })
    }
}

/// Replays the assistant turns of a recorded transcript. Each round's option
/// set must match the recording.
#[derive(Clone, Debug)]
pub struct ReplayPolicy {
    rounds: Vec<RoundRecord>,
}

impl ReplayPolicy {
    pub fn new(rounds: Vec<RoundRecord>) -> Self {
        Self { rounds }
    }
}

impl AssistantPolicy for ReplayPolicy {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        match self.rounds.get(ctx.round.wrapping_sub(1)) {
            Some(r) if r.options == *set && r.assistant_choice >= 1 => Ok(r.assistant_choice),
            _ => Err(PolicyError::Divergence { round: ctx.round }),
        }
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(UnavailablePolicy("a replay has no held-out decisions"))
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.name(), "rounds": self.rounds.len() })
    }
}

#[derive(Clone, Copy, Debug)]
struct UnavailablePolicy(&'static str);

impl AssistantPolicy for UnavailablePolicy {
    fn name(&self) -> &'static str {
        "unavailable"
    }

    fn recommend(
        &mut self,
        _set: &OptionSet,
        _ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        Err(PolicyError::Unsupported(self.0.into()))
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(*self)
    }

    fn snapshot(&self) -> Value {
        Value::Null
    }
}

/// Proxy for a person making recommendations through the server.
#[derive(Clone, Debug, Default)]
pub struct HumanSessionPolicy {
    queued: VecDeque<usize>,
    beliefs: VecDeque<FactorizedBelief>,
}

impl HumanSessionPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_choice(&mut self, choice: usize) {
        self.queued.push_back(choice);
    }

    pub fn push_beliefs(&mut self, belief: FactorizedBelief) {
        self.beliefs.push_back(belief);
    }
}

impl AssistantPolicy for HumanSessionPolicy {
    fn name(&self) -> &'static str {
        "human"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        _ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        let c = self.queued.pop_front().ok_or(PolicyError::AwaitingInput)?;
        if !(1..=set.len()).contains(&c) {
            return Err(
                CoreError::InvalidOption(format!("choice {c} outside 1..={}", set.len())).into(),
            );
        }
        Ok(c)
    }

    fn elicit_beliefs(
        &mut self,
        _history: &[RoundRecord],
    ) -> Option<Result<FactorizedBelief, PolicyError>> {
        self.beliefs.pop_front().map(Ok)
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(UnavailablePolicy(
            "a human session has no held-out decisions",
        ))
    }

    fn snapshot(&self) -> Value {
        json!({ "policy": self.name(), "queued": self.queued.iter().collect::<Vec<_>>() })
    }
}

/// An external chat model. The conversation so far is re-sent on every call.
#[derive(Clone)]
pub struct RemoteLlmPolicy {
    gateway: Arc<Gateway>,
    style: RenderStyle,
    kinds: Vec<FeatureKind>,
    /// Bayesian posterior shown in context for the posterior-in-context template.
    tracker: Option<Posterior>,
    summaries: Vec<FactorizedBelief>,
}

impl RemoteLlmPolicy {
    pub fn new(
        gateway: Arc<Gateway>,
        style: RenderStyle,
        kinds: Vec<FeatureKind>,
    ) -> Result<Self, CoreError> {
        let tracker = if style.template_variant == TemplateVariant::PosteriorInContext {
            Some(PriorSpec::Uniform.build(kinds.len())?)
        } else {
            None
        };
        let summaries = tracker.iter().map(|p| p.marginals()).collect();
        Ok(Self {
            gateway,
            style,
            kinds,
            tracker,
            summaries,
        })
    }

    fn context(
        &self,
        history: &[RoundRecord],
        pending: Pending<'_>,
    ) -> Result<Vec<crate::gateway::ChatMessage>, CoreError> {
        let views: Vec<RoundView<'_>> = history
            .iter()
            .map(|r| RoundView {
                set: &r.options,
                assistant_choice: r.assistant_choice,
                user_choice: r.user_choice,
                preference: None,
                weights: PreferenceWeights::Unweighted,
            })
            .collect();
        render_conversation(&self.style, &self.kinds, &views, &self.summaries, pending)
    }
}

impl AssistantPolicy for RemoteLlmPolicy {
    fn name(&self) -> &'static str {
        "remote_llm"
    }

    fn recommend(
        &mut self,
        set: &OptionSet,
        ctx: &DecisionContext<'_>,
    ) -> Result<usize, PolicyError> {
        let msgs = self.context(ctx.history, Pending::Query(set))?;
        let reply = self.gateway.complete(&msgs, false)?;
        Ok(parse_choice(
            &reply.text,
            set.len(),
            self.style.domain.noun(),
        )?)
    }

    fn observe_feedback(
        &mut self,
        set: &OptionSet,
        _own: usize,
        user_choice: usize,
    ) -> Result<(), PolicyError> {
        if let Some(p) = &self.tracker {
            let next = update(p, set, user_choice)?;
            self.summaries.push(next.marginals());
            self.tracker = Some(next);
        }
        Ok(())
    }

    fn elicit_beliefs(
        &mut self,
        history: &[RoundRecord],
    ) -> Option<Result<FactorizedBelief, PolicyError>> {
        let ctx = match self.context(history, Pending::None) {
            Ok(c) => c,
            Err(e) => return Some(Err(e.into())),
        };
        Some(
            self.gateway
                .elicit_belief(&ctx, &self.kinds, self.style.mode)
                .map_err(Into::into),
        )
    }

    fn fork_for_evaluation(&self) -> Box<dyn AssistantPolicy> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Value {
        json!({
            "policy": self.name(),
            "model": self.gateway.config().model_name,
            "tracker": self.tracker,
        })
    }
}

/// Serializable description of a policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicySpec {
    /// Uses the episode's prior.
    #[default]
    Bayesian,
    Oracle,
    NoisyOracle {
        #[serde(default = "default_wrong_rate")]
        wrong_rate: f64,
    },
    Random,
    Cheapest,
    BeliefDerived {
        belief: FactorizedBelief,
    },
    RemoteLlm {
        gateway: GatewayConfig,
    },
}

fn default_wrong_rate() -> f64 {
    0.4
}

/// Everything a policy may need at construction.
#[derive(Clone)]
pub struct BuildContext {
    pub user: Option<Arc<dyn ChoiceModel>>,
    pub prior: PriorSpec,
    pub dim: usize,
    pub price_index: Option<usize>,
    pub style: RenderStyle,
    pub kinds: Vec<FeatureKind>,
    pub gateway: Option<Arc<Gateway>>,
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Bayesian => "bayesian",
            PolicySpec::Oracle => "oracle",
            PolicySpec::NoisyOracle { .. } => "noisy_oracle",
            PolicySpec::Random => "random",
            PolicySpec::Cheapest => "cheapest",
            PolicySpec::BeliefDerived { .. } => "belief_derived",
            PolicySpec::RemoteLlm { .. } => "remote_llm",
        }
    }

    pub fn build(&self, ctx: &BuildContext) -> Result<Box<dyn AssistantPolicy>, CoreError> {
        let user = || {
            ctx.user.clone().ok_or_else(|| {
                CoreError::InvalidConfig(format!("{} needs the simulated user", self.name()))
            })
        };
        Ok(match self {
            PolicySpec::Bayesian => Box::new(BayesianPolicy::new(ctx.prior.build(ctx.dim)?)),
            PolicySpec::Oracle => Box::new(OraclePolicy::new(user()?)),
            PolicySpec::NoisyOracle { wrong_rate } => {
                Box::new(NoisyOraclePolicy::new(user()?, *wrong_rate)?)
            }
            PolicySpec::Random => Box::new(RandomPolicy),
            PolicySpec::Cheapest => Box::new(CheapestPolicy::new(ctx.price_index)?),
            PolicySpec::BeliefDerived { belief } => {
                if belief.dim() != ctx.dim {
                    return Err(CoreError::DimensionMismatch {
                        expected: ctx.dim,
                        actual: belief.dim(),
                    });
                }
                Box::new(BeliefDerivedPolicy::new(belief.clone()))
            }
            PolicySpec::RemoteLlm { gateway } => {
                let gw = match &ctx.gateway {
                    Some(g) => g.clone(),
                    None => Arc::new(
                        Gateway::new(gateway.clone())
                            .map_err(|e| CoreError::InvalidConfig(e.to_string()))?,
                    ),
                };
                Box::new(RemoteLlmPolicy::new(gw, ctx.style, ctx.kinds.clone())?)
            }
        })
    }
}
