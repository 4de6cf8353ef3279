//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashSet;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use preflab_core::analysis::{
    info_gain_experiment, l1_normalize, noise_sweep, read_user_records_csv, simulate_user_records,
    user_consistency, with_shuffles, write_user_records_csv, HumanRound, HumanUserRecord,
    InfoGainConfig,
};
use preflab_core::bayes::{info_gain, uniform_prior, update};
use preflab_core::gateway::{
    parse_choice, parse_generation, Gateway, GatewayConfig, GatewayError, RetryPolicy,
};
use preflab_core::harness::{
    as_choice_models, evaluate_population, population, spec_factory, Environment, PopulationResult,
};
use preflab_core::render::render_choice;
use preflab_core::reward::{choose_deterministic, ChoiceModel, FeatureKind, SimulatedUser};
use preflab_core::seed;
use preflab_core::teaching::{generate_corpus, TeachingSpec, TeachingVariant};
use preflab_core::{
    EpisodeConfig, FeatureSpace, OptionSet, PolicySpec, RenderMode, RewardFunction,
};
use rand::Rng;
use regex::Regex;
use serde_json::Value;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn golden_path(name: &str) -> String {
    format!("{}/../core/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Messages of a golden file as (is_user, text).
fn golden(name: &str) -> Vec<(bool, String)> {
    let text = std::fs::read_to_string(golden_path(name)).unwrap();
    let mut out: Vec<(bool, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        match line {
            "### user" => out.push((true, Vec::new())),
            "### assistant" => out.push((false, Vec::new())),
            _ => out.last_mut().unwrap().1.push(line),
        }
    }
    out.into_iter().map(|(u, l)| (u, l.join("\n"))).collect()
}

fn flight_population(cfg: &EpisodeConfig, seeds: &[u64]) -> PopulationResult {
    let env: Arc<dyn Environment> = Arc::new(FeatureSpace::flight());
    let users = as_choice_models(population(4, cfg.noise, None, 0).unwrap());
    let factory = spec_factory(cfg, &env, None);
    evaluate_population(cfg, env.clone(), &users, seeds, &factory).unwrap()
}

fn bayesian_and_learning() -> (Outcome, Outcome) {
    let res = flight_population(&EpisodeConfig::flight(), &[0, 1, 2]);
    let m = &res.metrics;
    let final_acc = m.final_accuracy();
    let first = m.accuracy_by_round[0].mean;
    let a = (res.transcripts.len() == 1872 && (0.75..=0.85).contains(&final_acc))
        .then(|| {
            format!(
                "final-round accuracy {final_acc:.4} over {} episodes",
                res.transcripts.len()
            )
        })
        .ok_or_else(|| format!("final-round accuracy {final_acc:.4} outside [0.75, 0.85]"));
    let gap = final_acc - first;
    // Seeds 0..3 over the full population gave 0.2226 when first run.
    let pinned = 0.2226;
    let b = (gap >= 0.20 && (gap - pinned).abs() <= 5e-4)
        .then(|| {
            format!("round 5 {final_acc:.4} minus round 1 {first:.4} = {gap:.4} (pinned {pinned})")
        })
        .ok_or_else(|| format!("gap {gap:.4}, needs >= 0.20 and to match pinned {pinned}"));
    (a, b)
}

fn chance_floor() -> Outcome {
    let mut cfg = EpisodeConfig::flight();
    cfg.policy = PolicySpec::Random;
    let acc = flight_population(&cfg, &[0, 1, 2]).metrics.final_accuracy();
    ensure((acc - 0.333).abs() <= 0.01, || {
        format!("random accuracy {acc:.4}")
    })?;
    Ok(format!("random final-round accuracy {acc:.4}"))
}

fn oracle_ceiling() -> Outcome {
    let users = population(4, 0.0, None, 0).unwrap();
    let corpus = generate_corpus(&TeachingSpec::new(TeachingVariant::Oracle), &users).unwrap();
    ensure(corpus.len() == 6240, || {
        format!("{} transcripts", corpus.len())
    })?;
    let rounds = corpus.iter().flat_map(|t| &t.rounds).count();
    let wrong = corpus
        .iter()
        .flat_map(|t| &t.rounds)
        .filter(|r| !r.correct())
        .count();
    ensure(wrong == 0, || {
        format!("{wrong} of {rounds} oracle rounds incorrect")
    })?;
    Ok(format!(
        "{rounds} oracle rounds over 6240 transcripts, all correct"
    ))
}

/// Reward functions in lexicographic level order, zero vector excluded, as
/// doubled integer weights.
fn lex_space(d: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for code in 0..5usize.pow(d as u32) {
        let mut w = vec![0i64; d];
        let mut c = code;
        for j in (0..d).rev() {
            w[j] = (c % 5) as i64 - 2;
            c /= 5;
        }
        if w.iter().any(|&x| x != 0) {
            out.push(w);
        }
    }
    out
}

/// Exact integer utility: weights doubled, features scaled by 20.
fn exact_utility(w: &[i64], features: &[f64]) -> i64 {
    w.iter()
        .zip(features)
        .map(|(a, x)| a * (20.0 * x).round() as i64)
        .sum()
}

fn consistent(w: &[i64], set: &OptionSet, chosen: usize) -> bool {
    let best = exact_utility(w, &set.options()[chosen - 1].features);
    set.options()
        .iter()
        .all(|o| exact_utility(w, &o.features) <= best)
}

fn posterior_equivalence() -> Outcome {
    let space = FeatureSpace::flight();
    let lex = lex_space(4);
    let prior = uniform_prior(4).unwrap();
    for (i, w) in lex.iter().enumerate() {
        let engine: Vec<i64> = prior
            .space()
            .weights(i)
            .iter()
            .map(|x| (2.0 * x).round() as i64)
            .collect();
        ensure(&engine == w, || format!("reward space entry {i} differs"))?;
    }
    let mut rounds = 0;
    for e in 0..1000u64 {
        let mut rng = seed::rng(seed::derive(&[0xACCE, e]));
        let truth = rng.random_range(0..lex.len());
        let user = SimulatedUser::deterministic(prior.space().function(truth), e);
        let mut post = prior.clone();
        let mut alive: Vec<bool> = vec![true; lex.len()];
        let mut last_support = lex.len();
        for _ in 0..5 {
            let set = space.sample_option_set(3, &mut rng).unwrap();
            let chosen = choose_deterministic(&user as &dyn ChoiceModel, &set, &mut rng).unwrap();
            post = update(&post, &set, chosen).unwrap();
            for (a, w) in alive.iter_mut().zip(&lex) {
                *a = *a && consistent(w, &set, chosen);
            }
            let n = alive.iter().filter(|&&a| a).count();
            for (j, &a) in alive.iter().enumerate() {
                let want = if a { 1.0 / n as f64 } else { 0.0 };
                ensure((post.mass()[j] - want).abs() <= 1e-12, || {
                    format!("episode {e}: entry {j} is {} not {want}", post.mass()[j])
                })?;
            }
            ensure(post.support_size() == n && n <= last_support, || {
                format!("episode {e}: support {n}")
            })?;
            ensure(post.mass()[truth] > 0.0, || {
                format!("episode {e}: truth eliminated")
            })?;
            last_support = n;
            rounds += 1;
        }
    }
    Ok(format!(
        "1000 episodes, {rounds} rounds match the enumeration oracle"
    ))
}

fn information_gain() -> Outcome {
    let set =
        OptionSet::from_features(vec![vec![0.5, 0.5, 0.5, 0.2], vec![0.5, 0.5, 0.5, 0.8]]).unwrap();
    let survivors = lex_space(4)
        .iter()
        .filter(|w| consistent(w, &set, 1))
        .count();
    let prior = uniform_prior(4).unwrap();
    let truth = RewardFunction::new(vec![0.0, 0.0, 0.0, -1.0]).unwrap();
    let g = info_gain(&prior, &update(&prior, &set, 1).unwrap(), &truth).unwrap();
    let oracle = (624.0 / survivors as f64).ln();
    ensure(survivors == 374, || format!("oracle keeps {survivors}"))?;
    ensure((g - oracle).abs() <= 1e-9, || {
        format!("g = {g} vs {oracle}")
    })?;

    let space = FeatureSpace::flight();
    let mut n = 0;
    let mut min_g = f64::INFINITY;
    for e in 0..2000u64 {
        let mut rng = seed::rng(seed::derive(&[0x1AF0, e]));
        let user =
            SimulatedUser::deterministic(prior.space().function(rng.random_range(0..624)), e);
        let mut post = prior.clone();
        for _ in 0..5 {
            let s = space.sample_option_set(3, &mut rng).unwrap();
            let c = choose_deterministic(&user as &dyn ChoiceModel, &s, &mut rng).unwrap();
            let next = update(&post, &s, c).unwrap();
            let gi = info_gain(&post, &next, &user.reward).unwrap();
            min_g = min_g.min(gi);
            ensure(gi >= 0.0, || format!("negative gain {gi}"))?;
            post = next;
            n += 1;
        }
    }

    let users = population(4, 0.0, Some(50), 7).unwrap();
    let cfg = InfoGainConfig {
        targets: vec![0.0, 0.25, 0.5],
        rounds: 5,
        candidates: 5000,
        heldout_sets: 1,
        seed: 0,
    };
    let points = info_gain_experiment(&cfg, &space, &users, &prior).unwrap();
    let mut parts = Vec::new();
    for p in &points {
        ensure(p.mean_abs_error <= 0.1 * p.mean_feasible_range, || {
            format!(
                "target {}: mean |err| {:.4} > 0.1 x range {:.4}",
                p.target, p.mean_abs_error, p.mean_feasible_range
            )
        })?;
        parts.push(format!(
            "{}: {:.3}/{:.3}",
            p.target, p.mean_abs_error, p.mean_feasible_range
        ));
    }
    Ok(format!(
        "g = {g:.12}; min g over {n} rounds {min_g:.3e}; |err|/range {}",
        parts.join(", ")
    ))
}

struct Templates {
    instruction: String,
    round: Regex,
    recommendation: Regex,
    feedback: Regex,
}

impl Templates {
    /// Patterns generalising the transcribed interaction; each is checked
    /// against the golden text before use.
    fn from_golden() -> Result<Self, String> {
        let g = golden("interaction_textual.txt");
        let first = &g[0].1;
        let split = first
            .find("\n\nWhich flight")
            .ok_or("golden instruction not found")?;
        let instruction = first[..split].to_string();
        let line = r"departure time: (0[1-9]|1[0-2]):[0-5]\d (AM|PM), duration: (\d{1,2} hr \d{1,2} min|\d{1,2} hr|\d{1,2} min), number of stops: [012], price: \$\d{3,4}";
        let line_re = Regex::new(&format!("^{line}$")).unwrap();
        for short in [
            "departure time: 05:12 PM, duration: 30 min, number of stops: 1, price: $190",
            "departure time: 10:00 PM, duration: 20 hr, number of stops: 0, price: $550",
        ] {
            ensure(line_re.is_match(short), || {
                format!("line pattern rejects {short:?}")
            })?;
        }
        let block = format!(
            r"Which flight is the best option\?\n\nFlight 1:\n{line}\nFlight 2:\n{line}\nFlight 3:\n{line}"
        );
        let t = Templates {
            round: Regex::new(&format!("^{block}$")).unwrap(),
            recommendation: Regex::new(r"^The best option is Flight [1-3]\.$").unwrap(),
            feedback: Regex::new(&format!(
                r"^Your option Flight ([1-3]) is (correct\.|incorrect\. I prefer Flight ([1-3])\.)(\n\n{block})?$"
            ))
            .unwrap(),
            instruction,
        };
        ensure(t.round.is_match(&first[split + 2..]), || {
            "round pattern rejects golden".into()
        })?;
        ensure(
            t.recommendation.is_match(&g[1].1) && t.recommendation.is_match(&g[3].1),
            || "recommendation pattern rejects golden".into(),
        )?;
        ensure(
            t.feedback.is_match(&g[2].1) && t.feedback.is_match(&g[4].1),
            || "feedback pattern rejects golden".into(),
        )?;
        Ok(t)
    }

    fn check(&self, messages: &[Value]) -> Result<(), String> {
        let text = |i: usize| messages[i]["content"].as_str().unwrap_or_default();
        let role = |i: usize| messages[i]["role"].as_str().unwrap_or_default();
        ensure(messages.len() == 11, || {
            format!("{} messages", messages.len())
        })?;
        let first = text(0);
        ensure(
            first.starts_with(&self.instruction)
                && first[self.instruction.len()..].starts_with("\n\n"),
            || "instruction differs".into(),
        )?;
        ensure(
            self.round.is_match(&first[self.instruction.len() + 2..]),
            || format!("round text: {first:?}"),
        )?;
        for i in 1..messages.len() {
            let ok = if i % 2 == 1 {
                role(i) == "assistant" && self.recommendation.is_match(text(i))
            } else {
                role(i) == "user" && self.feedback.is_match(text(i))
            };
            ensure(ok, || format!("message {i}: {:?}", text(i)))?;
        }
        ensure(
            self.feedback.captures(text(10)).unwrap().get(4).is_none(),
            || "trailing round after last feedback".into(),
        )
    }
}

fn teaching_corpora() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bayesian.jsonl");
    let status = Command::new(env!("CARGO_BIN_EXE_preflab"))
        .args([
            "gen-data",
            "--variant",
            "bayesian",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ensure(status.status.success(), || {
        String::from_utf8_lossy(&status.stderr).into_owned()
    })?;
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    ensure(lines.len() == 6240, || {
        format!("{} transcripts", lines.len())
    })?;
    let t = Templates::from_golden()?;
    for (i, l) in lines.iter().enumerate() {
        let v: Value = serde_json::from_str(l).map_err(|e| format!("line {i}: {e}"))?;
        t.check(v["messages"].as_array().ok_or("no messages")?)
            .map_err(|e| format!("transcript {i}: {e}"))?;
    }

    let users = population(4, 0.0, None, 0).unwrap();
    let noisy = generate_corpus(&TeachingSpec::new(TeachingVariant::NoisyOracle), &users).unwrap();
    let rounds: Vec<_> = noisy.iter().flat_map(|t| &t.rounds).collect();
    let frac = rounds.iter().filter(|r| !r.correct()).count() as f64 / rounds.len() as f64;
    ensure((frac - 0.40).abs() <= 0.01, || {
        format!("noisy-oracle incorrect fraction {frac:.4}")
    })?;
    Ok(format!(
        "6240 transcripts match the templates; noisy-oracle incorrect fraction {frac:.4}"
    ))
}

fn non_increasing(points: &[(String, f64, f64)]) -> Result<(), String> {
    for w in points.windows(2) {
        let slack = w[0].2.max(w[1].2);
        ensure(w[1].1 <= w[0].1 + slack, || {
            format!(
                "{} {:.4} rises above {} {:.4} by more than {slack:.4}",
                w[1].0, w[1].1, w[0].0, w[0].1
            )
        })?;
    }
    Ok(())
}

fn noise_sweep_criterion() -> Outcome {
    let cfg = EpisodeConfig::flight();
    let env: Arc<dyn Environment> = Arc::new(FeatureSpace::flight());
    let factory = spec_factory(&cfg, &env, None);
    let pts = noise_sweep(
        &cfg,
        env.clone(),
        &[0.0, 0.2, 0.4, 0.6, 0.8],
        None,
        &[0, 1, 2],
        &factory,
    )
    .unwrap();
    let rows: Vec<(String, f64, f64)> = pts
        .iter()
        .map(|p| (format!("noise {}", p.noise), p.mean, p.se))
        .collect();
    non_increasing(&rows)?;

    let noisy0 = as_choice_models(population(4, 0.0, None, 0).unwrap());
    let det: Vec<Arc<dyn ChoiceModel>> = population(4, 0.0, None, 0)
        .unwrap()
        .into_iter()
        .map(|u| {
            Arc::new(SimulatedUser::deterministic(u.reward, u.rng_seed)) as Arc<dyn ChoiceModel>
        })
        .collect();
    let a = evaluate_population(&cfg, env.clone(), &noisy0, &[0, 1, 2], &factory).unwrap();
    let b = evaluate_population(&cfg, env.clone(), &det, &[0, 1, 2], &factory).unwrap();
    let same = serde_json::to_string(&a.transcripts).unwrap()
        == serde_json::to_string(&b.transcripts).unwrap();
    ensure(same && a.transcripts == b.transcripts, || {
        "noise 0 differs from the deterministic run".into()
    })?;
    let summary: Vec<String> = pts
        .iter()
        .map(|p| format!("{}:{:.4}", p.noise, p.mean))
        .collect();
    Ok(format!(
        "{}; noise 0 bit-exact with deterministic users",
        summary.join(" ")
    ))
}

fn generalization() -> Outcome {
    let hotel = FeatureSpace::hotel();
    let all = hotel.all_options();
    let distinct: HashSet<Vec<u64>> = all
        .iter()
        .map(|o| o.iter().map(|x| x.to_bits()).collect())
        .collect();
    ensure(
        all.len() == 5 * 5 * 11 * 11 && distinct.len() == all.len() && hotel.option_count() == 3025,
        || format!("hotel space has {} options", all.len()),
    )?;

    let mut rows = Vec::new();
    for d in 2..=8 {
        let mut cfg = EpisodeConfig::flight();
        cfg.features = d;
        let env: Arc<dyn Environment> = Arc::new(FeatureSpace::flight_with(d).unwrap());
        let users = as_choice_models(population(d, 0.0, Some(1000), 0).unwrap());
        ensure(users.len() <= 1000, || {
            format!("d={d}: {} users", users.len())
        })?;
        let factory = spec_factory(&cfg, &env, None);
        let res = evaluate_population(&cfg, env.clone(), &users, &[0], &factory).unwrap();
        rows.push((
            format!("d={d}"),
            res.metrics.final_accuracy(),
            res.metrics.final_se(),
        ));
    }
    non_increasing(&rows)?;
    let summary: Vec<String> = rows.iter().map(|r| format!("{}:{:.4}", r.0, r.1)).collect();
    Ok(format!("hotel 3025 options; {}", summary.join(" ")))
}

fn gateway_config(base: String) -> GatewayConfig {
    let mut cfg = GatewayConfig::new(base, "mock");
    cfg.retry = RetryPolicy {
        max_attempts: 2,
        backoff_ms: 1,
    };
    cfg
}

fn elicitation_parsers() -> Outcome {
    let g = golden("belief_generation.txt");
    let parsed = parse_generation(&g.last().unwrap().1).map_err(|e| e.to_string())?;
    ensure(parsed == [0.70, 0.10, 0.15, 0.05, 0.00], || {
        format!("parsed {parsed:?}")
    })?;

    let pool = [
        "1", "2", "3", "4", "5", " 1", " 2", "3 ", "\n4", " 5", "0", "6", "11", "x", "", "The",
        "one", "-1",
    ];
    let srv = common::spawn(Duration::ZERO, move |n, _| {
        let mut rng = seed::rng(seed::derive(&[0xF022, n as u64]));
        let len = rng.random_range(0..=25usize);
        let top: Vec<(&str, f64)> = (0..len)
            .map(|_| {
                let lp = match rng.random_range(0..10) {
                    0 => 0.0,
                    1 => -1e4,
                    _ => -rng.random_range(0.0..40.0),
                };
                (pool[rng.random_range(0..pool.len())], lp)
            })
            .collect();
        (
            200,
            common::reply_with_logprobs(top.first().map_or("?", |t| t.0), &top),
        )
    });
    let gw = Gateway::new(gateway_config(srv.base_url())).unwrap();
    let ctx = vec![preflab_core::gateway::ChatMessage::user(
        "Help me select the best flights.",
    )];
    let (mut valid, mut unsupported) = (0, 0);
    for _ in 0..10_000 {
        match gw.elicit_scoring(&ctx, FeatureKind::Price, RenderMode::Textual) {
            Ok(p) => {
                let sum: f64 = p.iter().sum();
                ensure(
                    p.iter().all(|x| x.is_finite() && *x >= 0.0) && (sum - 1.0).abs() <= 1e-9,
                    || format!("invalid distribution {p:?}"),
                )?;
                valid += 1;
            }
            Err(GatewayError::Unsupported) => unsupported += 1,
            Err(e) => return Err(format!("unexpected error {e}")),
        }
    }
    Ok(format!("generation example exact; {valid} valid and {unsupported} unsupported of 10000 fuzzed replies"))
}

fn gateway_robustness() -> Outcome {
    let srv = common::spawn(Duration::ZERO, |_, body| {
        (200, common::reply(common::last_content(body)))
    });
    let gw = Gateway::new(gateway_config(srv.base_url())).unwrap();
    let mut checked = 0;
    for noun in ["Flight", "Hotel", "Product"] {
        for k in 2..=5 {
            for i in 1..=k {
                let text = render_choice(i, noun);
                let echoed = gw
                    .complete(&[preflab_core::gateway::ChatMessage::user(text)], false)
                    .unwrap()
                    .text;
                ensure(parse_choice(&echoed, k, noun).ok() == Some(i), || {
                    format!("{echoed:?} with k={k}")
                })?;
                checked += 1;
            }
        }
    }

    let srv = common::spawn(Duration::ZERO, |n, body| {
        let k = common::option_count(body, "Flight").max(1);
        if n % 3 == 2 {
            (200, common::reply("I need more information."))
        } else {
            (
                200,
                common::reply(&format!(
                    "Let me think. The best option is Flight {}.",
                    n % k + 1
                )),
            )
        }
    });
    let mut cfg = EpisodeConfig::flight();
    cfg.heldout_sets = 10;
    cfg.policy = PolicySpec::RemoteLlm {
        gateway: gateway_config(srv.base_url()),
    };
    let env: Arc<dyn Environment> = Arc::new(FeatureSpace::flight());
    let users = as_choice_models(population(4, 0.0, Some(20), 3).unwrap());
    let factory = spec_factory(&cfg, &env, None);
    let res = evaluate_population(&cfg, env.clone(), &users, &[0], &factory)
        .map_err(|e| e.to_string())?;
    let rounds: Vec<_> = res.transcripts.iter().flat_map(|t| &t.rounds).collect();
    let failed = rounds.iter().filter(|r| r.parse_failed).count();
    ensure(res.transcripts.len() == 20 && failed > 0, || {
        format!("{failed} parse failures")
    })?;
    ensure(
        rounds
            .iter()
            .filter(|r| r.parse_failed)
            .all(|r| r.assistant_choice == 0 && !r.correct()),
        || "a parse failure was scored correct".into(),
    )?;
    Ok(format!(
        "{checked} templated turns round-trip; {failed}/{} rounds unparsable, population completed",
        rounds.len()
    ))
}

fn human_pipeline() -> Outcome {
    let users = population(4, 0.0, Some(500), 11).unwrap();
    let records = simulate_user_records(&users, &FeatureSpace::flight(), 0).unwrap();
    let mut buf = Vec::new();
    write_user_records_csv(&mut buf, &records).unwrap();
    let loaded = read_user_records_csv(buf.as_slice()).unwrap();
    ensure(loaded == records && loaded.len() == 500, || {
        "csv round trip changed the records".into()
    })?;
    let all = with_shuffles(&loaded, 3, 0);
    ensure(all.len() == 2000, || format!("{} interactions", all.len()))?;
    for r in &all {
        let c = user_consistency(r).unwrap();
        ensure(c == 1.0, || format!("{} scored {c}", r.participant_id))?;
    }

    // Hand-built participant whose every choice is the utility maximum.
    let rec = HumanUserRecord {
        participant_id: "p1".into(),
        stated_preferences: vec![3, 3, 3, 1],
        rounds: (0..5)
            .map(|i| {
                let p = 0.1 * i as f64;
                let options = OptionSet::from_features(vec![
                    vec![0.5, 0.5, 0.5, p],
                    vec![0.5, 0.5, 0.5, p + 0.3],
                    vec![0.5, 0.5, 0.5, p + 0.5],
                ])
                .unwrap();
                HumanRound { options, choice: 1 }
            })
            .collect(),
        shuffle: 0,
    };
    ensure(user_consistency(&rec).unwrap() == 1.0, || {
        "consistent participant below 1.0".into()
    })?;

    let a = l1_normalize(&[-1.0; 4]).unwrap();
    let b = l1_normalize(&[-0.5; 4]).unwrap();
    ensure(a == b && a == vec![-0.25; 4], || format!("{a:?} vs {b:?}"))?;
    Ok("2000 interactions from 500 records, consistency 1.0, l1 equivalence holds".into())
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, started: Instant, o: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match o {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} ({secs:.1}s)");
            }
        }
    };
    let t = Instant::now();
    let (bayes, learning) = bayesian_and_learning();
    report("bayesian final-round accuracy", t, bayes);
    let t = Instant::now();
    report("chance floor", t, chance_floor());
    let t = Instant::now();
    report("oracle ceiling", t, oracle_ceiling());
    let t = Instant::now();
    report("posterior oracle equivalence", t, posterior_equivalence());
    let t = Instant::now();
    report("information gain", t, information_gain());
    let t = Instant::now();
    report("teaching corpora", t, teaching_corpora());
    report("monotone learning", Instant::now(), learning);
    let t = Instant::now();
    report("noise sweep", t, noise_sweep_criterion());
    let t = Instant::now();
    report("generalization environments", t, generalization());
    let t = Instant::now();
    report("elicitation parsers", t, elicitation_parsers());
    let t = Instant::now();
    report("gateway robustness", t, gateway_robustness());
    let t = Instant::now();
    report("human-data pipeline", t, human_pipeline());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
