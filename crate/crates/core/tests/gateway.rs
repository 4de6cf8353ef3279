mod common;

use std::sync::Arc;
use std::time::Duration;

use preflab_core::gateway::{
    request_body, ChatMessage, Gateway, GatewayConfig, GatewayError, RetryPolicy,
};
use preflab_core::harness::{
    as_choice_models, evaluate_population, population, spec_factory, Environment,
};
use preflab_core::reward::{FeatureKind, FLIGHT_FEATURES};
use preflab_core::{EpisodeConfig, FeatureSpace, PolicySpec, RenderMode};
use serde_json::{json, Value};

use common::{last_content, option_count, reply, reply_with_logprobs, spawn};

fn config(base: String) -> GatewayConfig {
    let mut cfg = GatewayConfig::new(base, "mock-model");
    cfg.retry = RetryPolicy {
        max_attempts: 3,
        backoff_ms: 5,
    };
    cfg.timeout_ms = 5_000;
    cfg
}

fn convo() -> Vec<ChatMessage> {
    vec![ChatMessage::user("Help me select the best flights.")]
}

#[test]
fn returns_reply_text_verbatim() {
    let srv = spawn(Duration::ZERO, |_, _| {
        (200, reply("The best option is Flight 2."))
    });
    let gw = Gateway::new(config(srv.base_url())).unwrap();
    let c = gw.complete(&convo(), false).unwrap();
    assert_eq!(c.text, "The best option is Flight 2.");
    assert!(c.logprobs.is_none());
}

#[test]
fn retries_rate_limit_once() {
    let srv = spawn(Duration::ZERO, |n, _| {
        if n == 0 {
            (429, json!({ "error": "slow down" }))
        } else {
            (200, reply("ok"))
        }
    });
    let gw = Gateway::new(config(srv.base_url())).unwrap();
    assert_eq!(gw.complete(&convo(), false).unwrap().text, "ok");
    assert_eq!(srv.calls(), 2);
}

#[test]
fn gives_up_after_max_attempts() {
    let srv = spawn(Duration::ZERO, |_, _| (503, json!({ "error": "down" })));
    let gw = Gateway::new(config(srv.base_url())).unwrap();
    match gw.complete(&convo(), false) {
        Err(GatewayError::Network { attempts: 3, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(srv.calls(), 3);
}

#[test]
fn client_errors_and_bad_bodies_are_not_retried() {
    let srv = spawn(Duration::ZERO, |_, _| (400, json!({ "error": "bad" })));
    let gw = Gateway::new(config(srv.base_url())).unwrap();
    assert!(matches!(
        gw.complete(&convo(), false),
        Err(GatewayError::Status { status: 400, .. })
    ));
    assert_eq!(srv.calls(), 1);

    let srv = spawn(Duration::ZERO, |_, _| (200, json!({ "choices": [] })));
    let gw = Gateway::new(config(srv.base_url())).unwrap();
    assert!(matches!(
        gw.complete(&convo(), false),
        Err(GatewayError::Malformed(_))
    ));
}

#[test]
fn empty_messages_are_rejected_before_sending() {
    let srv = spawn(Duration::ZERO, |_, _| (200, reply("x")));
    let gw = Gateway::new(config(srv.base_url())).unwrap();
    let msgs = vec![ChatMessage::user("hi"), ChatMessage::assistant("")];
    assert!(matches!(
        gw.complete(&msgs, false),
        Err(GatewayError::EmptyMessage(1))
    ));
    assert_eq!(srv.calls(), 0);
}

#[test]
fn concurrency_is_capped() {
    let srv = spawn(Duration::from_millis(40), |_, _| {
        (200, reply("The best option is Flight 1."))
    });
    let mut cfg = config(srv.base_url());
    cfg.max_in_flight = 4;
    let gw = Arc::new(Gateway::new(cfg).unwrap());
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let gw = gw.clone();
            std::thread::spawn(move || gw.complete(&convo(), false).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(srv.calls(), 16);
    assert!(srv.peak() <= 4, "peak {}", srv.peak());
    assert!(srv.peak() >= 2);
}

#[test]
fn recording_is_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("calls.jsonl");
    let srv = spawn(Duration::ZERO, |_, _| {
        (200, reply("The best option is Flight 3."))
    });
    let mut cfg = config(srv.base_url());
    cfg.record_path = Some(rec.clone());
    let gw = Gateway::new(cfg.clone()).unwrap();
    gw.complete(&convo(), false).unwrap();
    gw.complete(&convo(), false).unwrap();
    let lines: Vec<Value> = std::fs::read_to_string(&rec)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["request"], lines[1]["request"]);
    assert_eq!(lines[0]["request"], request_body(&cfg, &convo(), false));
    assert_eq!(lines[0]["request"]["temperature"], json!(0.0));
    assert_eq!(
        lines[0]["response"]["choices"][0]["message"]["content"],
        "The best option is Flight 3."
    );
}

#[test]
fn scoring_with_logprobs_and_generation_fallback() {
    let top = [
        ("1", 0.5f64.ln()),
        ("2", 0.2f64.ln()),
        ("3", 0.2f64.ln()),
        ("4", 0.05f64.ln()),
        ("5", 0.05f64.ln()),
    ];
    let srv = spawn(Duration::ZERO, move |_, body| {
        assert_eq!(body["logprobs"], json!(true));
        assert!(body["top_logprobs"].as_u64().unwrap() >= 20);
        (200, reply_with_logprobs("1", &top))
    });
    let gw = Gateway::new(config(srv.base_url())).unwrap();
    let p = gw
        .elicit_scoring(&convo(), FeatureKind::Price, RenderMode::Textual)
        .unwrap();
    for (a, b) in p.iter().zip([0.5, 0.2, 0.2, 0.05, 0.05]) {
        assert!((a - b).abs() < 1e-12);
    }

    // No logprobs: every feature falls back to a generated distribution.
    let srv = spawn(Duration::ZERO, |_, body| {
        if body.get("logprobs").is_some() {
            (200, reply("1"))
        } else {
            assert!(last_content(body).ends_with("- 1: ??%\n..."));
            (
                200,
                reply("- 1: 10%\n- 2: 20%\n- 3: 30%\n- 4: 20%\n- 5: 10%"),
            )
        }
    });
    let gw = Gateway::new(config(srv.base_url())).unwrap();
    let b = gw
        .elicit_belief(&convo(), &FLIGHT_FEATURES[..4], RenderMode::Textual)
        .unwrap();
    for row in b.features() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((row[2] - 0.3 / 0.9).abs() < 1e-12);
    }
}

#[test]
fn unparsable_replies_mark_rounds_incorrect() {
    let srv = spawn(Duration::ZERO, |n, body| {
        let k = option_count(body, "Flight").max(1);
        if n % 4 == 3 {
            (200, reply("I need more information."))
        } else {
            (
                200,
                reply(&format!("The best option is Flight {}.", n % k + 1)),
            )
        }
    });
    let mut cfg = EpisodeConfig::flight();
    cfg.rounds = 3;
    cfg.heldout_sets = 4;
    cfg.policy = PolicySpec::RemoteLlm {
        gateway: config(srv.base_url()),
    };
    let env: Arc<dyn Environment> = Arc::new(FeatureSpace::flight());
    let users = as_choice_models(population(4, 0.0, Some(6), 1).unwrap());
    let gw = Arc::new(Gateway::new(config(srv.base_url())).unwrap());
    let factory = spec_factory(&cfg, &env, Some(gw));
    let res = evaluate_population(&cfg, env.clone(), &users, &[0], &factory).unwrap();
    assert_eq!(res.transcripts.len(), 6);
    let rounds: Vec<_> = res.transcripts.iter().flat_map(|t| &t.rounds).collect();
    let failed: Vec<_> = rounds.iter().filter(|r| r.parse_failed).collect();
    assert!(!failed.is_empty());
    for r in &failed {
        assert_eq!(r.assistant_choice, 0);
        assert!(!r.correct());
        assert_eq!(
            r.assistant_text.as_deref(),
            Some("I need more information.")
        );
    }
    for t in &res.transcripts {
        assert_eq!(t.per_round_eval.len(), 3);
        assert!(t.per_round_eval.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
