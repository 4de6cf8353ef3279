//! Fine-tuning corpora built from simulated interactions.

use std::io::{BufRead, BufReader, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assistants::{AssistantPolicy, BayesianPolicy, NoisyOraclePolicy, OraclePolicy};
use crate::bayes::{Posterior, PriorSpec};
use crate::error::{CoreError, Result};
use crate::gateway::{ChatMessage, Role};
use crate::harness::{
    kinds_for, Environment, Episode, EpisodeConfig, RoundRecord, Transcript, TRANSCRIPT_SCHEMA,
};
use crate::render::{
    parse_round, question, render_belief_query, render_choice, render_feedback,
    render_preference_answer, wording, RenderMode, RenderStyle,
};
use crate::reward::{ChoiceModel, Domain, FeatureKind, FeatureSpace, SimulatedUser, LEVELS};
use crate::seed::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeachingVariant {
    Oracle,
    Bayesian,
    NoisyOracle,
    /// Bayesian interactions where only the preference turns are supervised.
    Preference,
    /// Bayesian interactions with supervised preference turns after every round.
    InteractionsPlusPreference,
}

impl TeachingVariant {
    pub fn name(self) -> &'static str {
        match self {
            TeachingVariant::Oracle => "oracle",
            TeachingVariant::Bayesian => "bayesian",
            TeachingVariant::NoisyOracle => "noisy_oracle",
            TeachingVariant::Preference => "preference",
            TeachingVariant::InteractionsPlusPreference => "interactions_plus_preference",
        }
    }

    fn with_preferences(self) -> bool {
        matches!(
            self,
            TeachingVariant::Preference | TeachingVariant::InteractionsPlusPreference
        )
    }
}

impl std::str::FromStr for TeachingVariant {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| CoreError::InvalidConfig(format!("unknown teaching variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeachingSpec {
    pub variant: TeachingVariant,
    pub interactions_per_user: usize,
    pub rounds: usize,
    pub k: usize,
    pub prior: PriorSpec,
    pub wrong_rate: f64,
    pub seed: u64,
    pub style: RenderStyle,
    pub features: usize,
}

impl TeachingSpec {
    pub fn new(variant: TeachingVariant) -> Self {
        Self {
            variant,
            interactions_per_user: 10,
            rounds: 5,
            k: 3,
            prior: PriorSpec::Uniform,
            wrong_rate: 0.4,
            seed: 0,
            style: RenderStyle::textual(Domain::Flight),
            features: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.interactions_per_user == 0 {
            return Err(CoreError::InvalidConfig(
                "interactions_per_user must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.wrong_rate) {
            return Err(CoreError::InvalidConfig(format!(
                "wrong_rate {} outside [0,1]",
                self.wrong_rate
            )));
        }
        self.episode_config().validate()
    }

    /// The episode configuration each transcript is played under.
    pub fn episode_config(&self) -> EpisodeConfig {
        let mut cfg = EpisodeConfig::new(self.style.domain);
        cfg.features = self.features;
        cfg.rounds = self.rounds;
        cfg.k = self.k;
        cfg.seed = self.seed;
        cfg.prior = self.prior.clone();
        cfg.style = self.style;
        cfg.evaluate = false;
        cfg
    }

    fn policy(&self, user: &Arc<dyn ChoiceModel>) -> Result<Box<dyn AssistantPolicy>> {
        Ok(match self.variant {
            TeachingVariant::Oracle => Box::new(OraclePolicy::new(user.clone())),
            TeachingVariant::NoisyOracle => {
                Box::new(NoisyOraclePolicy::new(user.clone(), self.wrong_rate)?)
            }
            _ => Box::new(BayesianPolicy::new(self.prior.build(self.features)?)),
        })
    }
}

/// 1..=5 ratings of the most probable reward function; ties go to the
/// earliest function in canonical order.
pub fn preference_levels(post: &Posterior) -> Vec<usize> {
    post.space()
        .weights(post.argmax())
        .iter()
        .map(|&w| LEVELS.iter().position(|&l| l == w).expect("grid level") + 1)
        .collect()
}

/// Belief question and answer for every feature.
pub fn generate_preference_turns(
    post: &Posterior,
    kinds: &[FeatureKind],
    mode: RenderMode,
) -> Result<Vec<ChatMessage>> {
    if kinds.len() != post.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: post.dim(),
            actual: kinds.len(),
        });
    }
    let mut out = Vec::with_capacity(2 * kinds.len());
    for (&kind, level) in kinds.iter().zip(preference_levels(post)) {
        out.push(ChatMessage::user(render_belief_query(
            kind.label(),
            &wording(kind, mode),
            false,
        )));
        out.push(ChatMessage::assistant(render_preference_answer(
            kind, level,
        )));
    }
    Ok(out)
}

/// One transcript per (user, interaction), ordered by user then interaction.
pub fn generate_corpus(spec: &TeachingSpec, users: &[SimulatedUser]) -> Result<Vec<Transcript>> {
    spec.validate()?;
    let cfg = spec.episode_config();
    let env: Arc<dyn Environment> =
        Arc::new(FeatureSpace::for_domain(spec.style.domain, spec.features)?);
    let jobs: Vec<(&SimulatedUser, u64)> = users
        .iter()
        .flat_map(|u| (0..spec.interactions_per_user as u64).map(move |i| (u, i)))
        .collect();
    jobs.par_iter()
        .map(|&(u, i)| {
            let user: Arc<dyn ChoiceModel> = Arc::new(u.clone());
            let mut ep = Episode::new(
                cfg.clone(),
                env.clone(),
                Some(user.clone()),
                spec.policy(&user)?,
                u.rng_seed,
                i,
            )?;
            ep.set_variant(spec.variant.name());
            while !ep.is_finished() {
                ep.step()?;
                if spec.variant.with_preferences() {
                    let post = ep.policy().posterior().expect("bayesian policy").clone();
                    ep.push_beliefs(preference_levels(&post));
                }
            }
            Ok(ep.into_transcript())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ExportMeta {
    user_id: String,
    reward_function: Vec<f64>,
    variant: String,
    seed: u64,
    interaction: u64,
    domain: Domain,
    style: RenderStyle,
    #[serde(default)]
    per_round_eval: Vec<f64>,
    #[serde(default)]
    flags: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ExportLine {
    messages: Vec<ChatMessage>,
    meta: ExportMeta,
}

/// One `{"messages": [...], "meta": {...}}` object per line.
pub fn export_chat_jsonl<W: Write>(mut w: W, corpus: &[Transcript]) -> Result<()> {
    for t in corpus {
        let line = ExportLine {
            messages: t.messages()?,
            meta: ExportMeta {
                user_id: t.user_id.clone(),
                reward_function: t.reward_function.clone(),
                variant: t.variant.clone(),
                seed: t.seed,
                interaction: t.interaction,
                domain: t.domain,
                style: t.style,
                per_round_eval: t.per_round_eval.clone(),
                flags: t.flags.clone(),
            },
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_indexed(text: &str, prefix: &str, noun: &str) -> Option<usize> {
    text.strip_prefix(prefix)?
        .strip_prefix(noun)?
        .trim_start()
        .strip_suffix('.')?
        .parse()
        .ok()
}

/// Reads the feedback paragraph that opens a user message.
fn parse_feedback(text: &str, assistant: usize, noun: &str) -> Result<usize> {
    let first = text.split("\n\n").next().unwrap_or_default();
    let user = if first.ends_with("is correct.") {
        assistant
    } else if let Some(pos) = first.rfind("I prefer ") {
        parse_indexed(&first[pos..], "I prefer ", noun)
            .ok_or_else(|| CoreError::Parse(format!("feedback `{first}`")))?
    } else {
        return Err(CoreError::Parse(format!("feedback `{first}`")));
    };
    if render_feedback(assistant, user, noun) != first {
        return Err(CoreError::Parse(format!(
            "feedback `{first}` does not match the template"
        )));
    }
    Ok(user)
}

/// Rebuilds a transcript from its exported chat form.
fn import_line(line: ExportLine) -> Result<Transcript> {
    let m = line.meta;
    if m.domain == Domain::Product {
        return Err(CoreError::Unsupported(
            "product corpora cannot be re-imported from text".into(),
        ));
    }
    let noun = m.domain.noun();
    let header = question(m.domain);
    let msgs = &line.messages;
    let mut rounds = Vec::new();
    let mut beliefs: Vec<Vec<usize>> = Vec::new();
    let mut d = None;
    for (i, msg) in msgs.iter().enumerate() {
        if msg.role != Role::Assistant {
            continue;
        }
        let text = msg.content.as_str();
        if text.starts_with("Your preference for ") {
            let rating: usize = text
                .rsplit(": ")
                .next()
                .and_then(|r| r.strip_suffix('.'))
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| CoreError::Parse(format!("preference turn `{text}`")))?;
            if beliefs.len() < rounds.len() {
                beliefs.push(Vec::new());
            }
            beliefs
                .last_mut()
                .ok_or_else(|| CoreError::Parse("preference before any round".into()))?
                .push(rating);
            continue;
        }
        let assistant = if text == "I need more information." {
            0
        } else {
            parse_indexed(text, "The best option is ", noun)
                .ok_or_else(|| CoreError::Parse(format!("assistant turn `{text}`")))?
        };
        let prompt = &msgs
            .get(i.wrapping_sub(1))
            .ok_or_else(|| CoreError::Parse("assistant turn first".into()))?
            .content;
        let start = prompt
            .rfind(&header)
            .ok_or_else(|| CoreError::Parse("missing option set".into()))?;
        let dim = match d {
            Some(x) => x,
            None => {
                let first_line = prompt[start..].lines().nth(3).unwrap_or_default();
                let x = first_line.matches(": ").count();
                d = Some(x);
                x
            }
        };
        let kinds = kinds_for(m.domain, dim)?;
        let set = parse_round(&prompt[start..], &m.style, &kinds)?;
        let next = msgs
            .get(i + 1)
            .ok_or_else(|| CoreError::Parse("missing feedback".into()))?;
        let user = parse_feedback(&next.content, assistant, noun)?;
        let shown = if assistant == 0 {
            "I need more information.".to_string()
        } else {
            render_choice(assistant, noun)
        };
        debug_assert_eq!(shown, text);
        rounds.push(RoundRecord {
            feedback_text: render_feedback(assistant, user, noun),
            options: set,
            assistant_choice: assistant,
            user_choice: user,
            parse_failed: assistant == 0,
            assistant_text: None,
        });
    }
    let t = Transcript {
        schema: TRANSCRIPT_SCHEMA.into(),
        user_id: m.user_id,
        reward_function: m.reward_function,
        variant: m.variant,
        seed: m.seed,
        domain: m.domain,
        style: m.style,
        interaction: m.interaction,
        rounds,
        per_round_eval: m.per_round_eval,
        flags: m.flags,
        beliefs: if beliefs.is_empty() {
            None
        } else {
            Some(beliefs)
        },
        quality_control: None,
        participant_id: None,
    };
    if t.messages()? != line.messages {
        return Err(CoreError::Parse(format!(
            "transcript {} does not regenerate its messages",
            t.user_id
        )));
    }
    Ok(t)
}

pub fn import_chat_jsonl<R: std::io::Read>(r: R) -> Result<Vec<Transcript>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ExportLine = serde_json::from_str(&line)
            .map_err(|e| CoreError::Parse(format!("line {}: {e}", n + 1)))?;
        out.push(import_line(parsed)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct DpoLine<'a> {
    prompt: &'a [ChatMessage],
    chosen: ChatMessage,
    rejected: ChatMessage,
}

/// Preference pairs: for every recommendation turn, the policy's turn is
/// preferred over a uniformly drawn other option.
pub fn export_dpo_jsonl<W: Write>(mut w: W, corpus: &[Transcript]) -> Result<()> {
    for t in corpus {
        let msgs = t.messages()?;
        let noun = t.domain.noun();
        let mut round = 0usize;
        for (i, m) in msgs.iter().enumerate() {
            if m.role != Role::Assistant || !m.content.starts_with("The best option is ") {
                continue;
            }
            let r = &t.rounds[round];
            round += 1;
            let k = r.options.len();
            let own = r.assistant_choice;
            let user_key = seed::derive(&t.user_id.bytes().map(u64::from).collect::<Vec<_>>());
            let mut rng = seed::rng(seed::derive(&[
                t.seed,
                user_key,
                t.interaction,
                round as u64,
                Purpose::Teaching as u64,
            ]));
            let pick = rng.random_range(1..k);
            let other = if pick >= own { pick + 1 } else { pick };
            let line = DpoLine {
                prompt: &msgs[..i],
                chosen: ChatMessage::assistant(render_choice(own, noun)),
                rejected: ChatMessage::assistant(render_choice(other, noun)),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}
