//! Headless operator: runs a JSON script of API calls against a server and
//! records a transcript. Stops at the first failing step.
//!
//! ```json
//! {"base_url": "http://127.0.0.1:8080", "steps": [
//!   {"op": "login", "username": "op", "password": "secret-pass"},
//!   {"op": "command", "kind": "Move", "direction": "Forward", "await_result": true},
//!   {"op": "assert_pose", "x": 3, "y": 4, "heading": "N"}
//! ]}
//! ```

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use futures_util::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;
use uuid::Uuid;

use sentinel_core::messages::{decode_frame_message, CommandKind, Mode};
use sentinel_core::secure::crypto::sha256;
use sentinel_core::world::{Heading, MoveDir};

use crate::CliError;

fn default_timeout() -> u64 {
    10_000
}

fn default_accepted() -> u16 {
    202
}

fn default_kind_motion() -> String {
    "motion".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub base_url: Option<String>,
    pub steps: Vec<Step>,
}

/// `robot` selects by id; when omitted the first listed robot is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Register {
        username: String,
        password: String,
        #[serde(default)]
        expect_status: Option<u16>,
    },
    /// Also opens the notification stream used by later steps.
    Login {
        username: String,
        password: String,
        #[serde(default)]
        expect_status: Option<u16>,
    },
    Get {
        path: String,
        expect_status: u16,
        #[serde(default = "yes")]
        auth: bool,
    },
    Robots,
    WaitRobot {
        #[serde(default)]
        robot: Option<Uuid>,
        #[serde(default)]
        connected: Option<bool>,
        #[serde(default)]
        mode: Option<Mode>,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
    Command {
        #[serde(default)]
        robot: Option<Uuid>,
        kind: CommandKind,
        #[serde(default)]
        direction: Option<MoveDir>,
        #[serde(default = "default_accepted")]
        expect_status: u16,
        /// Wait for the robot's ACK/ERROR on the notification stream.
        #[serde(default)]
        await_result: bool,
        #[serde(default)]
        expect_ok: Option<bool>,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
    AssertPose {
        #[serde(default)]
        robot: Option<Uuid>,
        x: usize,
        y: usize,
        heading: Heading,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
    WaitEvents {
        #[serde(default)]
        kind: Option<String>,
        min: usize,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
    /// Exact count, checked after `settle_ms`.
    AssertEvents {
        #[serde(default)]
        kind: Option<String>,
        count: usize,
        #[serde(default)]
        settle_ms: u64,
    },
    /// Fetches the newest linked clip and checks its digest and magic.
    FetchClip {
        #[serde(default = "default_kind_motion")]
        kind: String,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
    Stream {
        #[serde(default)]
        robot: Option<Uuid>,
        frames: usize,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
    WaitNotification {
        #[serde(rename = "type")]
        note_type: String,
        #[serde(default)]
        kind: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
    Sleep {
        ms: u64,
    },
}

fn yes() -> bool {
    true
}

impl Step {
    fn name(&self) -> &'static str {
        match self {
            Step::Register { .. } => "register",
            Step::Login { .. } => "login",
            Step::Get { .. } => "get",
            Step::Robots => "robots",
            Step::WaitRobot { .. } => "wait_robot",
            Step::Command { .. } => "command",
            Step::AssertPose { .. } => "assert_pose",
            Step::WaitEvents { .. } => "wait_events",
            Step::AssertEvents { .. } => "assert_events",
            Step::FetchClip { .. } => "fetch_clip",
            Step::Stream { .. } => "stream",
            Step::WaitNotification { .. } => "wait_notification",
            Step::Sleep { .. } => "sleep",
        }
    }
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let script: Script = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("bad script: {e}")))?;
        if script.steps.is_empty() {
            return Err(CliError::Usage("bad script: no steps".into()));
        }
        Ok(script)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub op: String,
    pub ok: bool,
    pub elapsed_ms: u64,
    #[serde(skip_serializing_if = "Value::is_null", default)]
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub ok: bool,
    pub steps: Vec<StepRecord>,
}

struct Client {
    base: String,
    http: reqwest::Client,
    token: Option<String>,
    notes: Option<mpsc::UnboundedReceiver<Value>>,
    /// Notifications received but not yet matched by a step.
    pending: VecDeque<Value>,
}

type StepResult = Result<Value, String>;

fn poll_interval() -> Duration {
    Duration::from_millis(25)
}

impl Client {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn ws_url(&self, path: &str) -> String {
        let base = self.base.replacen("http://", "ws://", 1).replacen("https://", "wss://", 1);
        format!("{base}{path}?token={}", self.token.as_deref().unwrap_or(""))
    }

    async fn request(&self, method: reqwest::Method, path: &str, body: Option<Value>, auth: bool) -> Result<(u16, Value), String> {
        let mut req = self.http.request(method, self.url(path));
        if auth {
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.map_err(|e| format!("request failed: {e}"))?;
        let status = resp.status().as_u16();
        let body = resp.json().await.unwrap_or(Value::Null);
        Ok((status, body))
    }

    async fn get_ok(&self, path: &str) -> StepResult {
        let (status, body) = self.request(reqwest::Method::GET, path, None, true).await?;
        if status != 200 {
            return Err(format!("GET {path} returned {status}: {body}"));
        }
        Ok(body)
    }

    async fn robot(&self, selector: Option<Uuid>) -> StepResult {
        let robots = self.get_ok("/api/robots").await?;
        let list = robots.as_array().cloned().unwrap_or_default();
        let found = match selector {
            Some(id) => list.into_iter().find(|r| r["robot_id"] == id.to_string()),
            None => list.into_iter().next(),
        };
        found.ok_or_else(|| "no such robot".to_string())
    }

    async fn robot_id(&self, selector: Option<Uuid>) -> Result<String, String> {
        Ok(self.robot(selector).await?["robot_id"].as_str().unwrap_or_default().to_string())
    }

    /// Polls `probe` until it yields `Some`, or fails with the last observation.
    async fn until<F, Fut>(&self, timeout_ms: u64, mut probe: F) -> StepResult
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<Option<Value>, String>>,
    {
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        let mut last = String::from("nothing observed");
        loop {
            match probe().await {
                Ok(Some(v)) => return Ok(v),
                Ok(None) => {}
                Err(e) => last = e,
            }
            if Instant::now() >= deadline {
                return Err(format!("timed out after {timeout_ms} ms: {last}"));
            }
            tokio::time::sleep(poll_interval()).await;
        }
    }

    async fn open_notifications(&mut self) -> Result<(), String> {
        let (ws, _) = connect_async(self.ws_url("/api/notifications"))
            .await
            .map_err(|e| format!("notification stream: {e}"))?;
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            let (_sink, mut incoming) = ws.split();
            while let Some(Ok(msg)) = incoming.next().await {
                if let Message::Text(t) = msg {
                    if let Ok(v) = serde_json::from_str::<Value>(&t) {
                        if tx.send(v).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        self.notes = Some(rx);
        self.pending.clear();
        Ok(())
    }

    async fn wait_note(&mut self, timeout_ms: u64, matches: impl Fn(&Value) -> bool) -> StepResult {
        if let Some(i) = self.pending.iter().position(&matches) {
            return Ok(self.pending.remove(i).expect("index in range"));
        }
        let rx = self.notes.as_mut().ok_or("no notification stream; log in first")?;
        let deadline = tokio::time::Instant::now() + Duration::from_millis(timeout_ms);
        loop {
            match tokio::time::timeout_at(deadline, rx.recv()).await {
                Ok(Some(v)) if matches(&v) => return Ok(v),
                Ok(Some(v)) => self.pending.push_back(v),
                Ok(None) => return Err("notification stream closed".into()),
                Err(_) => return Err(format!("no matching notification within {timeout_ms} ms")),
            }
        }
    }

    async fn events(&self, kind: Option<&str>) -> Result<(Vec<Value>, u64), String> {
        let path = match kind {
            Some(k) => format!("/api/events?kind={k}"),
            None => "/api/events".to_string(),
        };
        let body = self.get_ok(&path).await?;
        let total = body["total"].as_u64().unwrap_or(0);
        Ok((body["events"].as_array().cloned().unwrap_or_default(), total))
    }

    fn expect(status: u16, expected: u16, body: &Value) -> Result<(), String> {
        if status == expected {
            Ok(())
        } else {
            Err(format!("expected status {expected}, got {status}: {body}"))
        }
    }

    async fn run(&mut self, step: &Step) -> StepResult {
        match step {
            Step::Register { username, password, expect_status } => {
                let body = json!({ "username": username, "password": password });
                let (status, resp) = self.request(reqwest::Method::POST, "/api/register", Some(body), false).await?;
                Self::expect(status, expect_status.unwrap_or(201), &resp)?;
                Ok(json!({ "status": status }))
            }
            Step::Login { username, password, expect_status } => {
                let body = json!({ "username": username, "password": password });
                let (status, resp) = self.request(reqwest::Method::POST, "/api/login", Some(body), false).await?;
                Self::expect(status, expect_status.unwrap_or(200), &resp)?;
                if status == 200 {
                    self.token = resp["token"].as_str().map(str::to_string);
                    self.open_notifications().await?;
                }
                Ok(json!({ "status": status, "expires_at_ms": resp["expires_at_ms"] }))
            }
            Step::Get { path, expect_status, auth } => {
                let (status, resp) = self.request(reqwest::Method::GET, path, None, *auth).await?;
                Self::expect(status, *expect_status, &resp)?;
                Ok(json!({ "status": status }))
            }
            Step::Robots => self.get_ok("/api/robots").await,
            Step::WaitRobot { robot, connected, mode, timeout_ms } => {
                self.until(*timeout_ms, || async {
                    let r = self.robot(*robot).await?;
                    let conn_ok = connected.is_none_or(|c| r["connected"] == c);
                    let mode_ok = mode.is_none_or(|m| r["mode"] == json!(m));
                    if conn_ok && mode_ok {
                        Ok(Some(r))
                    } else {
                        Err(format!("robot is {r}"))
                    }
                })
                .await
            }
            Step::Command { robot, kind, direction, expect_status, await_result, expect_ok, timeout_ms } => {
                let id = self.robot_id(*robot).await?;
                let mut body = json!({ "kind": kind });
                if let Some(d) = direction {
                    body["direction"] = json!(d);
                }
                let (status, resp) = self
                    .request(reqwest::Method::POST, &format!("/api/robots/{id}/commands"), Some(body), true)
                    .await?;
                Self::expect(status, *expect_status, &resp)?;
                if !*await_result || status != 202 {
                    return Ok(resp);
                }
                let cid = resp["command_id"].clone();
                let result = self
                    .wait_note(*timeout_ms, |n| n["type"] == "command_result" && n["command_id"] == cid)
                    .await?;
                if let Some(ok) = expect_ok {
                    if result["ok"] != *ok {
                        return Err(format!("expected ok={ok}, got {result}"));
                    }
                }
                Ok(result)
            }
            Step::AssertPose { robot, x, y, heading, timeout_ms } => {
                let want = json!({ "x": x, "y": y, "heading": heading });
                self.until(*timeout_ms, || async {
                    let r = self.robot(*robot).await?;
                    let pose = &r["last_status"]["pose"];
                    if *pose == want {
                        Ok(Some(pose.clone()))
                    } else {
                        Err(format!("pose is {pose}, want {want}"))
                    }
                })
                .await
            }
            Step::WaitEvents { kind, min, timeout_ms } => {
                self.until(*timeout_ms, || async {
                    let (_, total) = self.events(kind.as_deref()).await?;
                    if total as usize >= *min {
                        Ok(Some(json!({ "total": total })))
                    } else {
                        Err(format!("{total} events so far"))
                    }
                })
                .await
            }
            Step::AssertEvents { kind, count, settle_ms } => {
                tokio::time::sleep(Duration::from_millis(*settle_ms)).await;
                let (_, total) = self.events(kind.as_deref()).await?;
                if total as usize == *count {
                    Ok(json!({ "total": total }))
                } else {
                    Err(format!("expected {count} events, found {total}"))
                }
            }
            Step::FetchClip { kind, timeout_ms } => {
                let clip_id = self
                    .until(*timeout_ms, || async {
                        let (events, _) = self.events(Some(kind)).await?;
                        Ok(events.iter().find_map(|e| e["clip_id"].as_str().map(|c| json!(c))))
                    })
                    .await?;
                let clip_id = clip_id.as_str().unwrap_or_default().to_string();
                let resp = self
                    .http
                    .get(self.url(&format!("/api/clips/{clip_id}")))
                    .bearer_auth(self.token.as_deref().unwrap_or(""))
                    .send()
                    .await
                    .map_err(|e| e.to_string())?;
                if resp.status() != 200 {
                    return Err(format!("clip fetch returned {}", resp.status()));
                }
                let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
                let digest = hex::encode(sha256(&bytes));
                if digest != clip_id {
                    return Err(format!("clip digest {digest} does not match id {clip_id}"));
                }
                if !bytes.starts_with(b"SVC1") {
                    return Err("clip is not an SVC1 container".into());
                }
                Ok(json!({ "clip_id": clip_id, "bytes": bytes.len() }))
            }
            Step::Stream { robot, frames, timeout_ms } => {
                let id = self.robot_id(*robot).await?;
                let (mut ws, _) = connect_async(self.ws_url(&format!("/api/robots/{id}/stream")))
                    .await
                    .map_err(|e| format!("stream: {e}"))?;
                let deadline = tokio::time::Instant::now() + Duration::from_millis(*timeout_ms);
                let mut indices = Vec::with_capacity(*frames);
                let mut size = (0, 0);
                while indices.len() < *frames {
                    let msg = match tokio::time::timeout_at(deadline, ws.next()).await {
                        Ok(Some(Ok(m))) => m,
                        Ok(_) => return Err("stream closed".into()),
                        Err(_) => return Err(format!("received {} of {frames} frames", indices.len())),
                    };
                    if let Message::Binary(b) = msg {
                        let frame = decode_frame_message(&b).map_err(|e| format!("bad frame: {e}"))?;
                        size = (frame.width(), frame.height());
                        indices.push(frame.frame_index);
                    }
                }
                let _ = ws.close(None).await;
                if indices.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(format!("frame indices not increasing: {indices:?}"));
                }
                Ok(json!({ "frames": indices.len(), "width": size.0, "height": size.1, "first_index": indices[0] }))
            }
            Step::WaitNotification { note_type, kind, timeout_ms } => {
                let kind = kind.clone();
                self.wait_note(*timeout_ms, |n| {
                    n["type"] == note_type.as_str()
                        && kind.as_ref().is_none_or(|k| n["event"]["kind"].as_str().is_some_and(|e| e.eq_ignore_ascii_case(k)))
                })
                .await
            }
            Step::Sleep { ms } => {
                tokio::time::sleep(Duration::from_millis(*ms)).await;
                Ok(Value::Null)
            }
        }
    }
}

/// Runs `script` against `base_url` (or the script's own).
pub async fn run_script(script: &Script, base_url: Option<&str>) -> Result<Transcript, CliError> {
    let base = base_url
        .map(str::to_string)
        .or_else(|| script.base_url.clone())
        .ok_or_else(|| CliError::Usage("no server URL: pass --url or set base_url".into()))?;
    let mut client = Client {
        base: base.trim_end_matches('/').to_string(),
        http: reqwest::Client::new(),
        token: None,
        notes: None,
        pending: VecDeque::new(),
    };
    let mut steps = Vec::with_capacity(script.steps.len());
    for (index, step) in script.steps.iter().enumerate() {
        let started = Instant::now();
        let outcome = client.run(step).await;
        let ok = outcome.is_ok();
        let (result, error) = match outcome {
            Ok(v) => (v, None),
            Err(e) => (Value::Null, Some(e)),
        };
        steps.push(StepRecord {
            index,
            op: step.name().to_string(),
            ok,
            elapsed_ms: started.elapsed().as_millis() as u64,
            result,
            error,
        });
        if !ok {
            return Ok(Transcript { ok: false, steps });
        }
    }
    Ok(Transcript { ok: true, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripts_parse_with_defaults() {
        let s = Script::parse(
            r#"{"steps": [
                {"op": "command", "kind": "Move", "direction": "Forward"},
                {"op": "wait_notification", "type": "event", "kind": "fire"},
                {"op": "sleep", "ms": 5}
            ]}"#,
        )
        .unwrap();
        match &s.steps[0] {
            Step::Command { expect_status, await_result, timeout_ms, .. } => {
                assert_eq!((*expect_status, *await_result, *timeout_ms), (202, false, 10_000));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_scripts_are_usage_errors() {
        for text in [
            "not json",
            r#"{"steps": []}"#,
            r#"{"steps": [{"op": "teleport"}]}"#,
            r#"{"steps": [{"op": "sleep", "ms": 1, "extra": true}]}"#,
            r#"{"steps": [{"op": "command", "kind": "Fly"}]}"#,
        ] {
            assert!(matches!(Script::parse(text), Err(CliError::Usage(_))), "{text}");
        }
    }
}
