//! In-process chat-completions mock.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

pub type Responder = dyn Fn(usize, &Value) -> (u16, Value) + Send + Sync;

#[derive(Default)]
pub struct Counters {
    pub calls: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub peak: AtomicUsize,
}

struct Mock {
    respond: Box<Responder>,
    delay: Duration,
    counters: Arc<Counters>,
}

pub struct MockServer {
    pub addr: SocketAddr,
    pub counters: Arc<Counters>,
}

impl MockServer {
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn calls(&self) -> usize {
        self.counters.calls.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.counters.peak.load(Ordering::SeqCst)
    }
}

async fn handle(State(m): State<Arc<Mock>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let c = &m.counters;
    let n = c.calls.fetch_add(1, Ordering::SeqCst);
    let now = c.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    c.peak.fetch_max(now, Ordering::SeqCst);
    if !m.delay.is_zero() {
        tokio::time::sleep(m.delay).await;
    }
    let (status, out) = (m.respond)(n, &body);
    c.in_flight.fetch_sub(1, Ordering::SeqCst);
    (StatusCode::from_u16(status).unwrap(), Json(out))
}

/// Serves on an ephemeral port from a background thread for the rest of the process.
pub fn spawn(
    delay: Duration,
    respond: impl Fn(usize, &Value) -> (u16, Value) + Send + Sync + 'static,
) -> MockServer {
    let counters = Arc::new(Counters::default());
    let mock = Arc::new(Mock {
        respond: Box::new(respond),
        delay,
        counters: counters.clone(),
    });
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new()
                .route("/v1/chat/completions", post(handle))
                .with_state(mock);
            axum::serve(listener, app).await.unwrap();
        });
    });
    MockServer {
        addr: rx.recv().unwrap(),
        counters,
    }
}

pub fn reply(text: &str) -> Value {
    json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": text } }] })
}

pub fn reply_with_logprobs(text: &str, top: &[(&str, f64)]) -> Value {
    let alts: Vec<Value> = top
        .iter()
        .map(|(t, lp)| json!({ "token": t, "logprob": lp }))
        .collect();
    json!({ "choices": [{
        "index": 0,
        "message": { "role": "assistant", "content": text },
        "logprobs": { "content": [{ "token": text, "logprob": top.first().map_or(0.0, |t| t.1), "top_logprobs": alts }] }
    }] })
}

/// Text of the last message in a request body.
pub fn last_content(body: &Value) -> &str {
    body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or("")
}

/// Option count in the last rendered round of a request.
pub fn option_count(body: &Value, noun: &str) -> usize {
    let text = last_content(body);
    (1..=9)
        .take_while(|i| text.contains(&format!("{noun} {i}:")))
        .count()
}
