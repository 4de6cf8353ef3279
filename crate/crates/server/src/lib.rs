//! HTTP session service for live annotation.
//!
//! Two session modes are supported. In `assistant_role` a person recommends
//! options to a hidden simulated user, receives feedback, and rates what
//! they believe the user prefers after every round; a final
//! quality-control round follows. In `user_role` a person first rates their
//! own preferences and then picks options themselves, at most one choice
//! per 30 seconds.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | `{"mode": "assistant_role", "config": {...}}` |
//! | GET | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/choice` | `{"index": 2, "elapsed_ms": 31000}` |
//! | POST | `/sessions/{id}/beliefs` | `[1, 3, 3, 5]` or `{"ratings": [...]}` |
//! | GET | `/sessions/{id}/transcript` | |
//!
//! Every accepted request is appended to `<data_dir>/<id>.jsonl`; finished
//! transcripts are also appended to `<data_dir>/transcripts.jsonl`.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use preflab_core::analysis::stated_prefs_to_reward;
use preflab_core::assistants::{BuildContext, HumanSessionPolicy};
use preflab_core::bayes::RewardSpace;
use preflab_core::harness::{kinds_for, Episode, Recommendation};
use preflab_core::render::{
    render_belief_query, render_feedback, render_option, render_round, wording,
};
use preflab_core::reward::{choose_deterministic, FeatureKind, ItemOption};
use preflab_core::seed::{self, Purpose};
use preflab_core::{
    ChoiceModel, CoreError, Domain, EpisodeConfig, FeatureSpace, OptionSet, RewardFunction,
    RoundRecord, SimulatedUser, Transcript,
};

/// Minimum thinking time per choice in user-role sessions.
pub const MIN_ELAPSED_MS: u64 = 30_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    AssistantRole,
    UserRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Questionnaire,
    Choosing,
    Beliefs,
    QualityControl,
    Done,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }
    fn conflict(m: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, m)
    }
    fn unprocessable(m: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, m)
    }
    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, m)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidOption(_) | CoreError::InvalidBelief(_) => {
                Self::unprocessable(e.to_string())
            }
            _ => Self::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    mode: Mode,
    #[serde(default)]
    config: Option<EpisodeConfig>,
    #[serde(default)]
    participant_id: Option<String>,
    /// Canonical index of the hidden user in assistant-role sessions.
    #[serde(default)]
    user_index: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ChoiceBody {
    index: usize,
    #[serde(default)]
    elapsed_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BeliefsBody {
    Bare(Vec<usize>),
    Wrapped { ratings: Vec<usize> },
}

impl BeliefsBody {
    fn ratings(self) -> Vec<usize> {
        match self {
            BeliefsBody::Bare(r) | BeliefsBody::Wrapped { ratings: r } => r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub index: usize,
    pub label: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub feature: String,
    pub question: String,
    pub scale: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: usize,
    pub assistant_choice: usize,
    pub user_choice: usize,
    pub feedback: String,
}

/// What the client should show next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub session_id: String,
    pub mode: Mode,
    pub phase: Phase,
    /// 1-based round being played; `rounds + 1` during quality control.
    pub round: usize,
    pub rounds: usize,
    pub prompt: Option<String>,
    pub options: Vec<Card>,
    pub questionnaire: Option<Vec<Question>>,
    pub min_elapsed_ms: Option<u64>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceReply {
    pub feedback: Option<String>,
    pub correct: Option<bool>,
    pub next: Payload,
}

struct Session {
    id: String,
    mode: Mode,
    participant_id: Option<String>,
    created_at: u64,
    cfg: EpisodeConfig,
    space: Arc<FeatureSpace>,
    kinds: Vec<FeatureKind>,
    phase: Phase,
    episode: Option<Episode>,
    /// User-role assistant, built at creation and moved into the episode
    /// once the questionnaire is answered.
    pending_policy: Option<Box<dyn preflab_core::AssistantPolicy>>,
    hidden_user: Option<Arc<SimulatedUser>>,
    qc_set: Option<OptionSet>,
    qc: Option<RoundRecord>,
    history: Vec<HistoryEntry>,
    transcript: Option<String>,
    log: Option<PathBuf>,
}

struct Store {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
    seed: u64,
    data_dir: Option<PathBuf>,
    transcripts: Mutex<()>,
}

/// Shared server state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
}

impl AppState {
    /// `data_dir` enables persistence; `seed` drives session ids and hidden
    /// user selection.
    pub fn new(data_dir: Option<PathBuf>, seed: u64) -> std::io::Result<Self> {
        if let Some(d) = &data_dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self {
            store: Arc::new(Store {
                sessions: RwLock::new(HashMap::new()),
                counter: AtomicU64::new(0),
                seed,
                data_dir,
                transcripts: Mutex::new(()),
            }),
        })
    }

    pub fn session_count(&self) -> usize {
        self.store
            .sessions
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .len()
    }

    fn get(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.store
            .sessions
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn append_line(path: &Path, line: &str) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    f.write_all(&buf)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn questionnaire(kinds: &[FeatureKind], cfg: &EpisodeConfig) -> Vec<Question> {
    kinds
        .iter()
        .map(|&k| {
            let text = render_belief_query(k.label(), &wording(k, cfg.style.mode), false);
            let (question, scale) = text.split_once("\n\n").unwrap_or((&text, ""));
            Question {
                feature: k.label().to_string(),
                question: question.to_string(),
                scale: scale
                    .lines()
                    .map(|l| l.split_once(": ").map_or(l, |(_, rest)| rest).to_string())
                    .collect(),
            }
        })
        .collect()
}

/// Two options equal except on the user's most important feature, plus a
/// third option at that feature's worst value.
pub fn quality_control_set(
    space: &FeatureSpace,
    theta: &RewardFunction,
    rng: &mut preflab_core::SimRng,
) -> OptionSet {
    let w = theta.weights();
    let j = (0..w.len()).fold(
        0,
        |best, i| if w[i].abs() > w[best].abs() { i } else { best },
    );
    let base = space.sample_option(rng);
    let (hi, lo) = if w[j] > 0.0 { (1.0, 0.0) } else { (0.0, 1.0) };
    let mut feats: Vec<Vec<f64>> = [0.5, hi, lo]
        .iter()
        .map(|&v| {
            let mut f = base.clone();
            f[j] = v;
            f
        })
        .collect();
    feats.shuffle(rng);
    let options = feats
        .into_iter()
        .enumerate()
        .map(|(i, f)| ItemOption::grid(i + 1, f))
        .collect();
    OptionSet::new(options).expect("three options")
}

impl Session {
    fn log(&self, event: &str, data: Value) -> ApiResult<()> {
        if let Some(p) = &self.log {
            let line =
                json!({ "at_ms": now_ms(), "session_id": self.id, "event": event, "data": data });
            append_line(p, &line.to_string())
                .map_err(|e| ApiError::internal(format!("persisting session: {e}")))?;
        }
        Ok(())
    }

    fn rounds_total(&self) -> usize {
        self.cfg.rounds
    }

    fn round(&self) -> usize {
        match self.phase {
            Phase::Questionnaire => 1,
            Phase::QualityControl | Phase::Done => self.rounds_total() + 1,
            _ => self.episode.as_ref().map_or(1, |e| e.round()),
        }
    }

    fn cards(&self, set: &OptionSet) -> ApiResult<Vec<Card>> {
        let noun = self.cfg.domain.noun();
        set.options()
            .iter()
            .enumerate()
            .map(|(i, o)| {
                Ok(Card {
                    index: i + 1,
                    label: format!("{noun} {}", i + 1),
                    text: render_option(o, &self.cfg.style)?,
                })
            })
            .collect()
    }

    fn payload(&mut self) -> ApiResult<Payload> {
        let set = match self.phase {
            Phase::Choosing => Some(
                self.episode
                    .as_mut()
                    .expect("episode while choosing")
                    .current_set()?
                    .clone(),
            ),
            Phase::QualityControl => self.qc_set.clone(),
            _ => None,
        };
        let (prompt, options) = match &set {
            Some(s) => (Some(render_round(s, &self.cfg.style)?), self.cards(s)?),
            None => (None, Vec::new()),
        };
        let show_questions = self.mode == Mode::AssistantRole || self.phase == Phase::Questionnaire;
        Ok(Payload {
            session_id: self.id.clone(),
            mode: self.mode,
            phase: self.phase,
            round: self.round(),
            rounds: self.rounds_total(),
            prompt,
            options,
            questionnaire: show_questions.then(|| questionnaire(&self.kinds, &self.cfg)),
            min_elapsed_ms: (self.mode == Mode::UserRole).then_some(MIN_ELAPSED_MS),
            history: self.history.clone(),
        })
    }

    fn check_ratings(&self, ratings: &[usize]) -> ApiResult<()> {
        if ratings.len() != self.kinds.len() {
            return Err(ApiError::unprocessable(format!(
                "expected {} ratings, got {}",
                self.kinds.len(),
                ratings.len()
            )));
        }
        if let Some(r) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
            return Err(ApiError::unprocessable(format!("rating {r} outside 1..=5")));
        }
        Ok(())
    }

    fn choice(&mut self, body: ChoiceBody) -> ApiResult<ChoiceReply> {
        let k = self.cfg.k;
        match self.phase {
            Phase::Choosing | Phase::QualityControl => {}
            p => {
                return Err(ApiError::conflict(format!(
                    "no pending choice (phase {p:?})"
                )))
            }
        }
        if self.mode == Mode::UserRole && body.elapsed_ms.unwrap_or(0) < MIN_ELAPSED_MS {
            return Err(ApiError::unprocessable(format!(
                "choices need at least {MIN_ELAPSED_MS} ms of consideration"
            )));
        }
        if !(1..=k).contains(&body.index) {
            return Err(ApiError::unprocessable(format!(
                "index {} outside 1..={k}",
                body.index
            )));
        }
        self.log(
            "choice",
            json!({ "index": body.index, "elapsed_ms": body.elapsed_ms }),
        )?;
        let noun = self.cfg.domain.noun();
        let record = if self.phase == Phase::QualityControl {
            let set = self.qc_set.take().expect("quality-control set");
            let user = self
                .hidden_user
                .clone()
                .expect("assistant sessions have a user");
            let path = seed::SeedPath::new(self.cfg.seed, user.rng_seed, 0);
            let mut rng = seed::rng(path.round(self.rounds_total() + 1, Purpose::MainUser));
            let user_choice =
                choose_deterministic(user.as_ref() as &dyn ChoiceModel, &set, &mut rng)?;
            let rec = RoundRecord {
                options: set,
                assistant_choice: body.index,
                user_choice,
                feedback_text: render_feedback(body.index, user_choice, noun),
                parse_failed: false,
                assistant_text: None,
            };
            self.qc = Some(rec.clone());
            self.finish()?;
            rec
        } else {
            let ep = self.episode.as_mut().expect("episode while choosing");
            let rec = match self.mode {
                Mode::AssistantRole => {
                    let r = Recommendation {
                        choice: body.index,
                        parse_failed: false,
                        text: None,
                    };
                    ep.resolve(r, None)?.clone()
                }
                Mode::UserRole => {
                    let r = ep.recommend()?;
                    ep.resolve(r, Some(body.index))?.clone()
                }
            };
            let finished = ep.is_finished();
            self.phase = match self.mode {
                Mode::AssistantRole => Phase::Beliefs,
                Mode::UserRole if finished => {
                    self.finish()?;
                    Phase::Done
                }
                Mode::UserRole => Phase::Choosing,
            };
            rec
        };
        let round = self.history.len() + 1;
        self.history.push(HistoryEntry {
            round,
            assistant_choice: record.assistant_choice,
            user_choice: record.user_choice,
            feedback: record.feedback_text.clone(),
        });
        let reply = match self.mode {
            Mode::AssistantRole => ChoiceReply {
                feedback: Some(record.feedback_text.clone()),
                correct: Some(record.correct()),
                next: self.payload()?,
            },
            Mode::UserRole => ChoiceReply {
                feedback: None,
                correct: None,
                next: self.payload()?,
            },
        };
        Ok(reply)
    }

    fn beliefs(&mut self, ratings: Vec<usize>) -> ApiResult<Payload> {
        match (self.mode, self.phase) {
            (Mode::AssistantRole, Phase::Beliefs) | (Mode::UserRole, Phase::Questionnaire) => {}
            (_, p) => {
                return Err(ApiError::conflict(format!(
                    "not awaiting ratings (phase {p:?})"
                )))
            }
        }
        self.check_ratings(&ratings)?;
        self.log("beliefs", json!({ "ratings": ratings }))?;
        match self.mode {
            Mode::AssistantRole => {
                let ep = self
                    .episode
                    .as_mut()
                    .expect("assistant sessions start with an episode");
                ep.push_beliefs(ratings);
                if ep.is_finished() {
                    let user = self
                        .hidden_user
                        .clone()
                        .expect("assistant sessions have a user");
                    let path = seed::SeedPath::new(self.cfg.seed, user.rng_seed, 0);
                    let mut rng = seed::rng(path.round(self.rounds_total() + 1, Purpose::MainSet));
                    self.qc_set = Some(quality_control_set(&self.space, &user.reward, &mut rng));
                    self.phase = Phase::QualityControl;
                } else {
                    self.phase = Phase::Choosing;
                }
            }
            Mode::UserRole => {
                let policy = self
                    .pending_policy
                    .take()
                    .expect("policy built at creation");
                let user_seed = seed::derive(&[self.cfg.seed, Purpose::Session as u64]);
                let mut ep = Episode::new(
                    self.cfg.clone(),
                    self.space.clone(),
                    None,
                    policy,
                    user_seed,
                    0,
                )?;
                ep.set_user_id(
                    self.participant_id
                        .clone()
                        .unwrap_or_else(|| self.id.clone()),
                );
                ep.set_variant("human_user");
                match stated_prefs_to_reward(&ratings) {
                    Ok(theta) => ep.set_reward_function(theta.weights().to_vec()),
                    Err(CoreError::IndifferentUser) => ep.push_flag("indifferent_user"),
                    Err(e) => return Err(e.into()),
                }
                self.episode = Some(ep);
                self.phase = Phase::Choosing;
            }
        }
        self.payload()
    }

    fn finish(&mut self) -> ApiResult<()> {
        let ep = self.episode.take().expect("episode to finish");
        let mut t: Transcript = ep.into_transcript();
        t.quality_control = self.qc.take();
        t.participant_id = self.participant_id.clone();
        t.validate()?;
        let text = serde_json::to_string(&t).map_err(|e| ApiError::internal(e.to_string()))?;
        self.log("finished", json!({ "created_at": self.created_at }))?;
        self.transcript = Some(text);
        self.phase = Phase::Done;
        Ok(())
    }
}

impl AppState {
    fn create(&self, body: CreateBody) -> ApiResult<Payload> {
        let mut cfg = body.config.unwrap_or_else(EpisodeConfig::flight);
        cfg.evaluate = false;
        if cfg.domain == Domain::Product {
            return Err(ApiError::bad_request(
                "sessions support flight and hotel domains",
            ));
        }
        cfg.validate()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let space = Arc::new(
            cfg.space()
                .map_err(|e| ApiError::bad_request(e.to_string()))?,
        );
        let kinds = kinds_for(cfg.domain, cfg.features)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let n = self.store.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!(
            "{:016x}",
            seed::derive(&[self.store.seed, n, Purpose::Session as u64])
        );
        let log = self
            .store
            .data_dir
            .as_ref()
            .map(|d| d.join(format!("{id}.jsonl")));
        let mut session = Session {
            id: id.clone(),
            mode: body.mode,
            participant_id: body.participant_id,
            created_at: now_ms(),
            cfg: cfg.clone(),
            space: space.clone(),
            kinds: kinds.clone(),
            phase: Phase::Questionnaire,
            episode: None,
            pending_policy: None,
            hidden_user: None,
            qc_set: None,
            qc: None,
            history: Vec::new(),
            transcript: None,
            log,
        };
        match body.mode {
            Mode::AssistantRole => {
                let rs = RewardSpace::shared(cfg.features)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?;
                let idx = match body.user_index {
                    Some(i) if i < rs.len() => i,
                    Some(i) => {
                        return Err(ApiError::bad_request(format!(
                            "user_index {i} outside the reward space"
                        )))
                    }
                    None => {
                        (seed::derive(&[self.store.seed, n, Purpose::Population as u64])
                            % rs.len() as u64) as usize
                    }
                };
                let user = Arc::new(
                    SimulatedUser::new(rs.function(idx), cfg.noise, idx as u64)
                        .map_err(|e| ApiError::bad_request(e.to_string()))?,
                );
                let mut ep = Episode::new(
                    cfg,
                    space,
                    Some(user.clone() as Arc<dyn ChoiceModel>),
                    Box::new(HumanSessionPolicy::new()),
                    idx as u64,
                    0,
                )
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
                ep.set_variant("human_assistant");
                session.episode = Some(ep);
                session.hidden_user = Some(user);
                session.phase = Phase::Choosing;
            }
            Mode::UserRole => {
                let ctx = BuildContext {
                    user: None,
                    prior: cfg.prior.clone(),
                    dim: cfg.features,
                    price_index: space.price_index(),
                    style: cfg.style,
                    kinds,
                    gateway: None,
                };
                session.pending_policy = Some(
                    cfg.policy
                        .build(&ctx)
                        .map_err(|e| ApiError::bad_request(e.to_string()))?,
                );
            }
        }
        session.log(
            "created",
            json!({ "mode": session.mode, "config": session.cfg }),
        )?;
        let payload = session.payload()?;
        self.store
            .sessions
            .write()
            .unwrap_or_else(PoisonError::into_inner)
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(payload)
    }

    fn record_transcript(&self, text: &str) -> ApiResult<()> {
        if let Some(d) = &self.store.data_dir {
            let _g = self
                .store
                .transcripts
                .lock()
                .unwrap_or_else(PoisonError::into_inner);
            append_line(&d.join("transcripts.jsonl"), text)
                .map_err(|e| ApiError::internal(e.to_string()))?;
        }
        Ok(())
    }

    /// Runs `f` on the session off the async executor.
    async fn with_session<T: Send + 'static>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> ApiResult<T> + Send + 'static,
    ) -> ApiResult<T> {
        let session = self.get(id)?;
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let mut s = session.lock().unwrap_or_else(PoisonError::into_inner);
            let was_done = s.phase == Phase::Done;
            let out = f(&mut s)?;
            if !was_done && s.phase == Phase::Done {
                if let Some(t) = &s.transcript {
                    state.record_transcript(t)?;
                }
            }
            Ok(out)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
    }
}

async fn create_session(
    State(state): State<AppState>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let body: CreateBody = parse_body(&body)?;
    let st = state.clone();
    let payload = tokio::task::spawn_blocking(move || st.create(body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    tracing::info!(session = %payload.session_id, mode = ?payload.mode, "session created");
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": payload.session_id, "first_payload": payload })),
    ))
}

async fn show_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Payload>> {
    state.with_session(&id, |s| s.payload()).await.map(Json)
}

async fn submit_choice(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<ChoiceReply>> {
    let body: ChoiceBody = parse_body(&body)?;
    state
        .with_session(&id, move |s| s.choice(body))
        .await
        .map(Json)
}

async fn submit_beliefs(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let body: BeliefsBody = parse_body(&body)?;
    let next = state
        .with_session(&id, move |s| s.beliefs(body.ratings()))
        .await?;
    Ok(Json(json!({ "ok": true, "next": next })))
}

async fn get_transcript(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let text = state
        .with_session(&id, |s| {
            s.transcript
                .clone()
                .ok_or_else(|| ApiError::conflict("session is not finished"))
        })
        .await?;
    Ok((
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/json"),
        )],
        text,
    )
        .into_response())
}

/// The session API without static files or CORS.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(show_session))
        .route("/sessions/{id}/choice", post(submit_choice))
        .route("/sessions/{id}/beliefs", post(submit_beliefs))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .with_state(state)
}

#[derive(Clone, Debug, Default)]
pub struct ServeOptions {
    pub static_dir: Option<PathBuf>,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
}

/// Session API plus CORS and, optionally, the built UI as a fallback.
pub fn app(state: AppState, opts: &ServeOptions) -> Result<Router, String> {
    let mut r = router(state);
    if let Some(dir) = &opts.static_dir {
        if !dir.is_dir() {
            return Err(format!("static directory {} does not exist", dir.display()));
        }
        r = r.fallback_service(ServeDir::new(dir));
    }
    let cors = match &opts.cors_origin {
        Some(o) => CorsLayer::new()
            .allow_origin(HeaderValue::from_str(o).map_err(|e| format!("bad origin `{o}`: {e}"))?)
            .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
            .allow_headers([header::CONTENT_TYPE]),
        None => CorsLayer::permissive(),
    };
    Ok(r.layer(cors))
}

pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
