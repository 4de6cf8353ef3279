//! Prompt rendering for flights, hotels and products.
//!
//! Grid values are rendered through their grid index with integer
//! arithmetic, so every string is exact:
//!
//! | feature          | rendering                                   |
//! |------------------|---------------------------------------------|
//! | departure/arrival| 06:00 AM + 960·v minutes, 12-hour clock     |
//! | duration/layover | 30 + 1170·v minutes, "H hr M min"           |
//! | stops, bags      | round(2·v)                                  |
//! | flight price     | 100 + 890·v, rounded to the nearest $10     |
//! | hotel distance   | 0.3 + 4.7·v miles, rounded to 0.1           |
//! | hotel price      | 100 + 900·v                                 |
//! | rating           | 1 + 4·v stars                               |
//! | amenities        | cumulative tiers, 1 + 4·v of them           |

use serde::{Deserialize, Serialize};

use crate::bayes::FactorizedBelief;
use crate::error::{CoreError, Result};
use crate::gateway::{ChatMessage, Role};
use crate::reward::{
    even_grid, Domain, FeatureKind, ItemOption, OptionSet, FLIGHT_FEATURES, HOTEL_FEATURES,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    #[default]
    Textual,
    Numerical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateVariant {
    #[default]
    Interactive,
    NonInteractive,
    Cot,
    PosteriorInContext,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RenderStyle {
    pub mode: RenderMode,
    pub domain: Domain,
    pub template_variant: TemplateVariant,
}

impl RenderStyle {
    pub fn new(
        domain: Domain,
        mode: RenderMode,
        template_variant: TemplateVariant,
    ) -> Result<Self> {
        if domain != Domain::Flight && mode == RenderMode::Numerical {
            return Err(CoreError::InvalidConfig(format!(
                "{} options only have a textual rendering",
                domain.singular()
            )));
        }
        Ok(Self {
            mode,
            domain,
            template_variant,
        })
    }

    pub fn textual(domain: Domain) -> Self {
        Self {
            mode: RenderMode::Textual,
            domain,
            template_variant: TemplateVariant::Interactive,
        }
    }
}

/// Low/high phrases for the five-point preference scale of one feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureWording {
    pub low_phrase: String,
    pub high_phrase: String,
    pub question: String,
}

pub fn wording(kind: FeatureKind, mode: RenderMode) -> FeatureWording {
    let (low, high) = match mode {
        RenderMode::Numerical => ("the minimum value", "the maximum value"),
        RenderMode::Textual => match kind {
            FeatureKind::DepartureTime => (
                "an earlier morning departure time",
                "a later evening departure time",
            ),
            FeatureKind::Duration => ("a shorter flight", "a longer flight"),
            FeatureKind::NumberOfStops => ("fewer stops", "more stops"),
            FeatureKind::Price => ("a cheaper flight", "a more expensive flight"),
            FeatureKind::ArrivalTime => ("an earlier arrival time", "a later arrival time"),
            FeatureKind::LayoverDuration => ("a shorter layover", "a longer layover"),
            FeatureKind::CancellationPolicy => (
                "a stricter cancellation policy",
                "a more flexible cancellation policy",
            ),
            FeatureKind::NumberOfBags => ("fewer checked bags", "more checked bags"),
            FeatureKind::DistanceToDowntown => (
                "a hotel closer to downtown",
                "a hotel farther from downtown",
            ),
            FeatureKind::HotelPrice => ("a cheaper hotel", "a more expensive hotel"),
            FeatureKind::Rating => ("a lower-rated hotel", "a higher-rated hotel"),
            FeatureKind::Amenities => ("fewer amenities", "more amenities"),
        },
    };
    FeatureWording {
        low_phrase: low.to_string(),
        high_phrase: high.to_string(),
        question: format!(
            "On a scale of 1 to 5, what is my preference for {}?",
            kind.label()
        ),
    }
}

fn grid_index(kind: FeatureKind, value: f64) -> Result<usize> {
    even_grid(kind.grid_size())
        .iter()
        .position(|&g| (g - value).abs() < 1e-12)
        .ok_or_else(|| CoreError::InvalidOption(format!("{value} is off the {} grid", kind.id())))
}

fn clock(minutes_after_six: usize) -> String {
    let total = 360 + minutes_after_six;
    let (h, m) = (total / 60, total % 60);
    let suffix = if h < 12 { "AM" } else { "PM" };
    let h12 = (h + 11) % 12 + 1;
    format!("{h12:02}:{m:02} {suffix}")
}

fn span(minutes: usize) -> String {
    let (h, m) = (minutes / 60, minutes % 60);
    match (h, m) {
        (0, m) => format!("{m} min"),
        (h, 0) => format!("{h} hr"),
        (h, m) => format!("{h} hr {m} min"),
    }
}

const AMENITY_TIERS: [&str; 5] = ["free parking", "free breakfast", "pool", "gym", "spa"];

fn amenities(tiers: usize) -> String {
    let items = &AMENITY_TIERS[..tiers];
    match items {
        [one] => one.to_string(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
        [] => String::new(),
    }
}

/// Text for the feature value at grid position `idx`.
pub fn render_value(kind: FeatureKind, idx: usize) -> String {
    match kind {
        FeatureKind::DepartureTime | FeatureKind::ArrivalTime => clock(96 * idx),
        FeatureKind::Duration | FeatureKind::LayoverDuration => span(30 + 117 * idx),
        FeatureKind::NumberOfStops | FeatureKind::NumberOfBags => idx.to_string(),
        FeatureKind::Price => format!("${}", (100 + 89 * idx + 5) / 10 * 10),
        FeatureKind::CancellationPolicy => {
            ["non-refundable", "partially refundable", "fully refundable"][idx].to_string()
        }
        FeatureKind::DistanceToDowntown => {
            let tenths = (30 + 47 * idx + 5) / 10;
            if tenths % 10 == 0 {
                format!("{} miles", tenths / 10)
            } else {
                format!("{}.{} miles", tenths / 10, tenths % 10)
            }
        }
        FeatureKind::HotelPrice => format!("${}", 100 + 90 * idx),
        FeatureKind::Rating => format!("{} stars", 1 + idx),
        FeatureKind::Amenities => amenities(1 + idx),
    }
}

fn render_features(kinds: &[FeatureKind], option: &ItemOption, mode: RenderMode) -> Result<String> {
    if option.features.len() != kinds.len() {
        return Err(CoreError::DimensionMismatch {
            expected: kinds.len(),
            actual: option.features.len(),
        });
    }
    let parts = kinds
        .iter()
        .zip(&option.features)
        .map(|(&kind, &v)| {
            let idx = grid_index(kind, v)?;
            Ok(match mode {
                RenderMode::Textual => format!("{}: {}", kind.label(), render_value(kind, idx)),
                RenderMode::Numerical => format!("{}: {v:.1}", kind.label()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.join(", "))
}

/// Flight features of a d-feature option (the first d of the fixed list).
pub fn flight_kinds(d: usize) -> Result<&'static [FeatureKind]> {
    FLIGHT_FEATURES
        .get(..d)
        .ok_or(CoreError::DimensionOutOfRange(d))
}

pub fn render_flight(option: &ItemOption) -> Result<String> {
    render_features(
        flight_kinds(option.features.len())?,
        option,
        RenderMode::Textual,
    )
}

pub fn render_hotel(option: &ItemOption) -> Result<String> {
    render_features(&HOTEL_FEATURES, option, RenderMode::Textual)
}

/// One option's body (without the "Flight i:" header).
pub fn render_option(option: &ItemOption, style: &RenderStyle) -> Result<String> {
    match style.domain {
        Domain::Flight => render_features(flight_kinds(option.features.len())?, option, style.mode),
        Domain::Hotel => render_hotel(option),
        Domain::Product => option
            .text
            .clone()
            .ok_or_else(|| CoreError::InvalidOption("product option without text".into())),
    }
}

pub fn question(domain: Domain) -> String {
    format!("Which {} is the best option?", domain.singular())
}

pub fn render_round(set: &OptionSet, style: &RenderStyle) -> Result<String> {
    let blocks = set
        .options()
        .iter()
        .map(|o| {
            Ok(format!(
                "{} {}:\n{}",
                style.domain.noun(),
                o.index,
                render_option(o, style)?
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let sep = if style.domain == Domain::Product {
        "\n\n"
    } else {
        "\n"
    };
    let mut out = format!("{}\n\n{}", question(style.domain), blocks.join(sep));
    if style.template_variant == TemplateVariant::Cot {
        out.push_str(&format!(
            "\n\nLet's think step by step. End your response with 'The best option is {} <your choice>.'.",
            style.domain.noun()
        ));
    }
    Ok(out)
}

pub fn render_choice(index: usize, noun: &str) -> String {
    format!("The best option is {noun} {index}.")
}

pub fn render_feedback(assistant_choice: usize, user_choice: usize, noun: &str) -> String {
    if assistant_choice == user_choice {
        format!("Your option {noun} {assistant_choice} is correct.")
    } else if assistant_choice == 0 {
        // No parsable recommendation was given.
        format!("I prefer {noun} {user_choice}.")
    } else {
        format!(
            "Your option {noun} {assistant_choice} is incorrect. I prefer {noun} {user_choice}."
        )
    }
}

fn scale_line(level: usize, w: &FeatureWording) -> String {
    match level {
        1 => format!("I strongly prefer {}", w.low_phrase),
        2 => format!("I prefer {}", w.low_phrase),
        3 => "I have no strong preference".to_string(),
        4 => format!("I prefer {}", w.high_phrase),
        _ => format!("I strongly prefer {}", w.high_phrase),
    }
}

pub const GENERATION_SUFFIX: &str = "Provide an integer between 0 and 100 (%) that reflects the probability of each scale. Format your response exactly as follows:\n\n- 1: ??%\n...";

/// The five-point belief question for one feature. `generation` appends the
/// request for explicit percentages.
pub fn render_belief_query(feature: &str, wording: &FeatureWording, generation: bool) -> String {
    debug_assert!(wording.question.ends_with(&format!("{feature}?")));
    let lines: Vec<String> = (1..=5)
        .map(|l| format!("- {l}: {}", scale_line(l, wording)))
        .collect();
    let mut out = format!("{}\n\n{}", wording.question, lines.join("\n"));
    if generation {
        out.push_str("\n\n");
        out.push_str(GENERATION_SUFFIX);
    }
    out
}

/// Belief query looked up by feature label or identifier.
pub fn belief_query_for(
    kinds: &[FeatureKind],
    feature: &str,
    mode: RenderMode,
    generation: bool,
) -> Result<String> {
    let kind = kinds
        .iter()
        .copied()
        .find(|k| k.label() == feature || k.id() == feature)
        .ok_or_else(|| CoreError::UnknownFeature(feature.to_string()))?;
    Ok(render_belief_query(
        kind.label(),
        &wording(kind, mode),
        generation,
    ))
}

pub fn render_preference_answer(kind: FeatureKind, rating: usize) -> String {
    format!("Your preference for {} is: {rating}.", kind.label())
}

/// Prefix scored in continuation mode.
pub fn preference_prefix(kind: FeatureKind) -> String {
    format!("Your preference for {} is: ", kind.label())
}

pub fn render_system_instruction(style: &RenderStyle) -> String {
    let d = style.domain;
    let opening = match d {
        Domain::Product => "Help me select the best product.".to_string(),
        _ => format!("Help me select the best {} for my trips.", d.plural()),
    };
    let body = format!(
        "{opening} I have specific preferences for what I like and dislike in a {}, and these preferences remain the same. You need to figure out my preferences and select the best {} for me.",
        d.singular(),
        d.plural()
    );
    let closing = "Use your best judgment if you are unsure. Do not say you need more information.";
    if style.template_variant == TemplateVariant::Cot {
        let example = match d {
            Domain::Flight => "an earlier morning flight",
            Domain::Hotel => "a hotel closer to downtown",
            Domain::Product => "a cheaper product",
        };
        format!(
            "{body}\n\nFirst, infer my preferences by reasoning about each feature. For each feature, estimate the probability distribution of my preference across a 1-to-5 scale. For example, you might estimate a 30% probability that I strongly prefer {example} (scale 1), a 10% probability that I prefer {example} (scale 2), a 20% probability that I have no strong preference (scale 3), and so on. Then, use these probabilities to determine the best {} for me.\n\n{closing}",
            d.plural()
        )
    } else {
        format!("{body} {closing}")
    }
}

/// Per-feature marginals rendered as percentage lines.
pub fn render_posterior_in_context(
    kinds: &[FeatureKind],
    belief: &FactorizedBelief,
    mode: RenderMode,
) -> Result<String> {
    if belief.dim() != kinds.len() {
        return Err(CoreError::DimensionMismatch {
            expected: kinds.len(),
            actual: belief.dim(),
        });
    }
    let mut out = String::from(
        "Based on the current information, the probabilities for each preference scale across all features are:",
    );
    for (kind, probs) in kinds.iter().zip(belief.features()) {
        let w = wording(*kind, mode);
        out.push_str(&format!(
            "\n\nThe probabilities for each scale of your preference for {} are:\n",
            kind.label()
        ));
        for (l, p) in probs.iter().enumerate() {
            out.push_str(&format!(
                "\n- {}: {}, {:.1}%",
                l + 1,
                scale_line(l + 1, &w),
                p * 100.0
            ));
        }
    }
    Ok(out)
}

/// Accumulates chat messages; consecutive user texts merge into one message
/// separated by a blank line.
#[derive(Debug, Default)]
pub struct ConversationBuilder {
    messages: Vec<ChatMessage>,
    pending: Vec<String>,
}

impl ConversationBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn user(&mut self, text: impl Into<String>) -> &mut Self {
        self.pending.push(text.into());
        self
    }

    pub fn assistant(&mut self, text: impl Into<String>) -> &mut Self {
        self.assistant_weighted(text, None)
    }

    pub fn assistant_weighted(&mut self, text: impl Into<String>, weight: Option<u8>) -> &mut Self {
        self.flush();
        let mut m = ChatMessage::new(Role::Assistant, text);
        m.weight = weight;
        self.messages.push(m);
        self
    }

    fn flush(&mut self) {
        if !self.pending.is_empty() {
            let text = self.pending.join("\n\n");
            self.pending.clear();
            self.messages.push(ChatMessage::new(Role::User, text));
        }
    }

    pub fn finish(mut self) -> Vec<ChatMessage> {
        self.flush();
        self.messages
    }
}

/// One completed round as seen by the conversation renderer.
#[derive(Clone, Copy, Debug)]
pub struct RoundView<'a> {
    pub set: &'a OptionSet,
    pub assistant_choice: usize,
    pub user_choice: usize,
    /// Ratings (1..=5 per feature) to emit as preference turns after the feedback.
    pub preference: Option<&'a [usize]>,
    /// Whether the recommendation and preference turns carry training weight.
    pub weights: PreferenceWeights,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PreferenceWeights {
    /// No explicit weights.
    #[default]
    Unweighted,
    /// Only preference turns are supervised.
    PreferenceOnly,
}

/// What the conversation ends with.
#[derive(Clone, Copy, Debug)]
pub enum Pending<'a> {
    None,
    /// A new option set awaiting a recommendation.
    Query(&'a OptionSet),
    /// A belief question about one feature.
    Belief {
        kind: FeatureKind,
        generation: bool,
    },
}

/// Renders the full conversation for a sequence of rounds. `posteriors[r]`
/// is the belief summary shown before round `r` (posterior-in-context only;
/// one extra entry precedes a pending query).
pub fn render_conversation(
    style: &RenderStyle,
    kinds: &[FeatureKind],
    rounds: &[RoundView<'_>],
    posteriors: &[FactorizedBelief],
    pending: Pending<'_>,
) -> Result<Vec<ChatMessage>> {
    let noun = style.domain.noun();
    let mut b = ConversationBuilder::new();
    b.user(render_system_instruction(style));
    let show_posterior = |b: &mut ConversationBuilder, r: usize| -> Result<()> {
        if style.template_variant == TemplateVariant::PosteriorInContext {
            let belief = posteriors.get(r).ok_or_else(|| {
                CoreError::InvalidConfig(format!("missing posterior summary for round {}", r + 1))
            })?;
            b.assistant(render_posterior_in_context(kinds, belief, style.mode)?);
        }
        Ok(())
    };
    for (r, round) in rounds.iter().enumerate() {
        show_posterior(&mut b, r)?;
        b.user(render_round(round.set, style)?);
        let (shown, fb) = if style.template_variant == TemplateVariant::NonInteractive {
            (
                round.user_choice,
                render_feedback(round.user_choice, round.user_choice, noun),
            )
        } else {
            (
                round.assistant_choice,
                render_feedback(round.assistant_choice, round.user_choice, noun),
            )
        };
        let rec_weight = match round.weights {
            PreferenceWeights::PreferenceOnly => Some(0),
            PreferenceWeights::Unweighted => None,
        };
        if shown == 0 {
            b.assistant_weighted("I need more information.", rec_weight);
        } else {
            b.assistant_weighted(render_choice(shown, noun), rec_weight);
        }
        b.user(fb);
        if let Some(levels) = round.preference {
            if levels.len() != kinds.len() {
                return Err(CoreError::DimensionMismatch {
                    expected: kinds.len(),
                    actual: levels.len(),
                });
            }
            let pref_weight = match round.weights {
                PreferenceWeights::PreferenceOnly => Some(1),
                PreferenceWeights::Unweighted => None,
            };
            for (&kind, &rating) in kinds.iter().zip(levels) {
                b.user(render_belief_query(
                    kind.label(),
                    &wording(kind, style.mode),
                    false,
                ));
                b.assistant_weighted(render_preference_answer(kind, rating), pref_weight);
            }
        }
    }
    match pending {
        Pending::None => {}
        Pending::Query(set) => {
            show_posterior(&mut b, rounds.len())?;
            b.user(render_round(set, style)?);
        }
        Pending::Belief { kind, generation } => {
            b.user(render_belief_query(
                kind.label(),
                &wording(kind, style.mode),
                generation,
            ));
        }
    }
    Ok(b.finish())
}

/// Recovers grid values from a rendered option line. Each value must render
/// back to exactly the same text.
pub fn parse_option_line(kinds: &[FeatureKind], line: &str, mode: RenderMode) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(kinds.len());
    let mut rest = line;
    for (i, &kind) in kinds.iter().enumerate() {
        let prefix = format!("{}: ", kind.label());
        rest = rest
            .strip_prefix(&prefix)
            .ok_or_else(|| CoreError::Parse(format!("expected `{prefix}` in `{line}`")))?;
        let end = match kinds.get(i + 1) {
            Some(next) => rest.find(&format!(", {}: ", next.label())).ok_or_else(|| {
                CoreError::Parse(format!("missing `{}` in `{line}`", next.label()))
            })?,
            None => rest.len(),
        };
        let text = &rest[..end];
        let grid = even_grid(kind.grid_size());
        let idx = match mode {
            RenderMode::Textual => (0..grid.len()).find(|&i| render_value(kind, i) == text),
            RenderMode::Numerical => (0..grid.len()).find(|&i| format!("{:.1}", grid[i]) == text),
        }
        .ok_or_else(|| {
            CoreError::Parse(format!("`{text}` is not a rendered {} value", kind.id()))
        })?;
        values.push(grid[idx]);
        rest = &rest[end..];
        if i + 1 < kinds.len() {
            rest = &rest[2..];
        }
    }
    Ok(values)
}

/// Parses a rendered round ("Which ... ?\n\nFlight 1:\n...") back into an option set.
pub fn parse_round(text: &str, style: &RenderStyle, kinds: &[FeatureKind]) -> Result<OptionSet> {
    let noun = style.domain.noun();
    let body = text
        .strip_prefix(&format!("{}\n\n", question(style.domain)))
        .ok_or_else(|| CoreError::Parse("missing question header".into()))?;
    let body = body
        .split("\n\nLet's think step by step.")
        .next()
        .unwrap_or(body);
    let mut options = Vec::new();
    let mut lines = body.lines().filter(|l| !l.is_empty());
    let mut expected = 1;
    while let Some(header) = lines.next() {
        if header != format!("{noun} {expected}:") {
            return Err(CoreError::Parse(format!("unexpected line `{header}`")));
        }
        let line = lines
            .next()
            .ok_or_else(|| CoreError::Parse("truncated option block".into()))?;
        options.push(ItemOption::grid(
            expected,
            parse_option_line(kinds, line, style.mode)?,
        ));
        expected += 1;
    }
    OptionSet::new(options)
}
