//! Preference inference from observed choices.
//!
//! The crate contains everything needed to run multi-round recommendation
//! experiments against simulated users:
//!
//! * [`reward`]: feature spaces, linear reward functions and simulated users.
//! * [`render`]: the textual and numerical prompt formats.
//! * [`bayes`]: exact inference over the enumerated reward space.
//! * [`assistants`]: the [`AssistantPolicy`] interface and its implementations.
//! * [`gateway`]: a chat-completions client for external language models.
//! * [`harness`]: the interaction protocol, held-out evaluation and metrics.
//! * [`teaching`]: fine-tuning corpus generation.
//! * [`webshop`]: the product-catalog shopping environment.
//! * [`analysis`]: post-hoc analyses and human annotation data.

pub mod analysis;
pub mod assistants;
pub mod bayes;
pub mod error;
pub mod gateway;
pub mod harness;
pub mod render;
pub mod reward;
pub mod seed;
pub mod teaching;
pub mod webshop;

pub use assistants::{AssistantPolicy, DecisionContext, PolicyError, PolicySpec};
pub use bayes::{FactorizedBelief, Posterior, PriorSpec, RewardSpace};
pub use error::{CoreError, Result};
pub use harness::{EpisodeConfig, Metrics, RoundRecord, Transcript};
pub use render::{RenderMode, RenderStyle, TemplateVariant};
pub use reward::{
    ChoiceModel, Domain, FeatureSpace, ItemOption, OptionSet, RewardFunction, SimRng, SimulatedUser,
};
