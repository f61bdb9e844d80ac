//! Rewriter backends: a scriptable mock and a JSON-over-HTTP chat client.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::expr::{Expr, Op};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}")]
    Status { status: u16 },
    #[error("response had no text content")]
    EmptyResponse,
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    ChatEndpoint,
    Mock,
    BaselineImport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MockBehavior {
    /// Returns the original expression.
    Echo,
    /// Applies a small set of textbook stabilizing rewrites.
    Rules,
    /// Reply `i` answers iteration `i + 1` (zero-shot uses the first).
    Script { replies: Vec<String> },
    /// Scripts keyed by record id; other records are echoed.
    PerRecord { replies: BTreeMap<String, Vec<String>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub credential_env: Option<String>,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    pub mock: Option<MockBehavior>,
    /// JSON-lines file of `{"id", "expr"}` rewrites for baseline import.
    pub baseline_file: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            name: "mock".into(),
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            credential_env: None,
            temperature: 0.0,
            seed: Some(0),
            timeout_secs: 120,
            max_retries: 3,
            max_concurrent: 4,
            mock: None,
            baseline_file: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::ChatEndpoint if self.endpoint.is_none() || self.model.is_none() => {
                Err(BackendError::Config(format!("backend `{}` needs an endpoint and a model", self.name)))
            }
            BackendKind::BaselineImport if self.baseline_file.is_none() => {
                Err(BackendError::Config(format!("backend `{}` needs a baseline file", self.name)))
            }
            _ if self.max_concurrent == 0 => Err(BackendError::Config("max_concurrent must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// What a backend is being asked about; mocks use it to pick a reply.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext<'a> {
    pub record_id: &'a str,
    /// Expression under rewrite, if any.
    pub expr: Option<&'a Expr>,
    /// 0 for zero-shot, 1.. for few-shot.
    pub iteration: usize,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, ctx: &PromptContext<'_>) -> Result<String, BackendError>;
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn Backend>, BackendError> {
    cfg.validate()?;
    match cfg.kind {
        BackendKind::Mock => Ok(Box::new(MockBackend {
            name: cfg.name.clone(),
            behavior: cfg.mock.clone().unwrap_or(MockBehavior::Echo),
        })),
        BackendKind::ChatEndpoint => Ok(Box::new(ChatBackend::new(cfg.clone()))),
        BackendKind::BaselineImport => Err(BackendError::Config(format!(
            "backend `{}` imports rewrites and cannot be prompted",
            cfg.name
        ))),
    }
}

pub struct MockBackend {
    pub name: String,
    pub behavior: MockBehavior,
}

fn fenced(body: &str) -> String {
    format!("Here is the rewrite.\n```\n{body}\n```\n")
}

fn scripted(replies: &[String], iteration: usize) -> Option<&String> {
    replies.get(iteration.saturating_sub(1)).or_else(|| replies.last())
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _prompt: &str, ctx: &PromptContext<'_>) -> Result<String, BackendError> {
        let echo = || fenced(&ctx.expr.map(|e| e.to_string()).unwrap_or_default());
        Ok(match &self.behavior {
            MockBehavior::Echo => echo(),
            MockBehavior::Rules => ctx.expr.map(|e| fenced(&stabilize(e).to_string())).unwrap_or_else(echo),
            MockBehavior::Script { replies } => scripted(replies, ctx.iteration).cloned().unwrap_or_else(echo),
            MockBehavior::PerRecord { replies } => replies
                .get(ctx.record_id)
                .and_then(|r| scripted(r, ctx.iteration))
                .cloned()
                .unwrap_or_else(echo),
        })
    }
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Literal(l) if l.to_f64() == 1.0)
}

/// Textbook rewrites applied bottom-up.
pub fn stabilize(e: &Expr) -> Expr {
    let e = match e {
        Expr::Op(op, args) => Expr::Op(*op, args.iter().map(stabilize).collect()),
        Expr::If(c, t, f) => Expr::If(c.clone(), Box::new(stabilize(t)), Box::new(stabilize(f))),
        other => return other.clone(),
    };
    rewrite_node(e)
}

fn rewrite_node(e: Expr) -> Expr {
    let Expr::Op(op, args) = &e else { return e };
    match (op, args.as_slice()) {
        (Op::Log, [Expr::Op(Op::Add, xs)]) if is_one(&xs[0]) => Expr::op(Op::Log1p, vec![xs[1].clone()]),
        (Op::Log, [Expr::Op(Op::Add, xs)]) if is_one(&xs[1]) => Expr::op(Op::Log1p, vec![xs[0].clone()]),
        (Op::Sub, [Expr::Op(Op::Exp, x), one]) if is_one(one) => Expr::op(Op::Expm1, vec![x[0].clone()]),
        (Op::Sub, [Expr::Op(Op::Add, xy), x]) if xy[0] == *x => xy[1].clone(),
        (Op::Sub, [Expr::Op(Op::Add, xy), y]) if xy[1] == *y => xy[0].clone(),
        (Op::Sub, [Expr::Op(Op::Sqrt, a), Expr::Op(Op::Sqrt, b)]) => {
            // sqrt(a) - sqrt(b) = (a - b) / (sqrt(a) + sqrt(b))
            Expr::op(
                Op::Div,
                vec![
                    rewrite_node(Expr::op(Op::Sub, vec![a[0].clone(), b[0].clone()])),
                    Expr::op(Op::Add, vec![Expr::op(Op::Sqrt, a.clone()), Expr::op(Op::Sqrt, b.clone())]),
                ],
            )
        }
        (Op::Sub, [one, Expr::Op(Op::Cos, x)]) if is_one(one) => {
            let half = Expr::op(Op::Sin, vec![Expr::op(Op::Div, vec![x[0].clone(), Expr::lit("2")])]);
            Expr::op(Op::Mul, vec![Expr::lit("2"), Expr::op(Op::Mul, vec![half.clone(), half])])
        }
        (Op::Sqrt, [Expr::Op(Op::Add, s)]) => match (&s[0], &s[1]) {
            (Expr::Op(Op::Mul, a), Expr::Op(Op::Mul, b)) if a[0] == a[1] && b[0] == b[1] => {
                Expr::op(Op::Hypot, vec![a[0].clone(), b[0].clone()])
            }
            _ => e.clone(),
        },
        _ => e.clone(),
    }
}

/// FIFO admission with at most `cap` holders.
pub struct FifoLimiter {
    cap: usize,
    state: Mutex<LimiterState>,
    cv: Condvar,
}

#[derive(Default)]
struct LimiterState {
    next_ticket: u64,
    now_serving: u64,
    in_flight: usize,
}

pub struct Permit<'a>(&'a FifoLimiter);

impl FifoLimiter {
    pub fn new(cap: usize) -> FifoLimiter {
        FifoLimiter { cap: cap.max(1), state: Mutex::new(LimiterState::default()), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().expect("limiter lock");
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        while ticket != st.now_serving || st.in_flight >= self.cap {
            st = self.cv.wait(st).expect("limiter lock");
        }
        st.now_serving += 1;
        st.in_flight += 1;
        self.cv.notify_all();
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().expect("limiter lock").in_flight
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.0.state.lock().expect("limiter lock");
        st.in_flight -= 1;
        self.0.cv.notify_all();
    }
}

pub struct ChatBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
    limiter: FifoLimiter,
}

const MAX_BACKOFF_SECS: f64 = 60.0;

impl ChatBackend {
    pub fn new(cfg: BackendConfig) -> ChatBackend {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = FifoLimiter::new(cfg.max_concurrent);
        ChatBackend { cfg, agent, limiter }
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(seed) = self.cfg.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, prompt: &str) -> Result<String, (BackendError, Option<f64>)> {
        let url = self.cfg.endpoint.as_deref().unwrap_or_default();
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(var) = &self.cfg.credential_env {
            if let Ok(key) = std::env::var(var) {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
        }
        let mut resp = req
            .send_json(self.request_body(prompt))
            .map_err(|e| (BackendError::Transport(e.to_string()), None))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok());
            return Err((BackendError::Status { status }, retry_after));
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| (BackendError::Transport(e.to_string()), None))?;
        extract_text(&v).ok_or((BackendError::EmptyResponse, None))
    }
}

/// First text content of a chat-style response.
pub fn extract_text(v: &Value) -> Option<String> {
    let candidates = [
        v.pointer("/choices/0/message/content"),
        v.pointer("/choices/0/text"),
        v.pointer("/content/0/text"),
        v.pointer("/message/content"),
        v.pointer("/response"),
    ];
    candidates
        .into_iter()
        .flatten()
        .find_map(|c| c.as_str().map(str::to_string))
}

impl Backend for ChatBackend {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn complete(&self, prompt: &str, _ctx: &PromptContext<'_>) -> Result<String, BackendError> {
        let _permit = self.limiter.acquire();
        let mut tries = 0;
        loop {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err((e, retry_after)) if e.retryable() && tries < self.cfg.max_retries => {
                    let wait = retry_after.unwrap_or(0.5 * 2f64.powi(tries as i32)).clamp(0.0, MAX_BACKOFF_SECS);
                    log::warn!("{}: {e}; retrying in {wait:.1}s", self.cfg.name);
                    std::thread::sleep(Duration::from_secs_f64(wait));
                    tries += 1;
                }
                Err((e, _)) => return Err(e),
            }
        }
    }
}
