//! Newline-delimited JSON protocol for live environments.
//!
//! One request per line, one response per line, strictly alternating:
//!
//! ```text
//! {"id":1,"verb":"reset","task":{"id":"map_1","website":"map","intent":"..."}}
//! {"id":1,"ok":true,"observation":{"html":"...","terminal":false}}
//! {"id":2,"verb":"step","action":{"kind":"Click","element":"15"}}
//! {"id":2,"ok":false,"error":{"code":"divergence","message":"..."}}
//! ```
//!
//! The full description lives in `docs/adapter-protocol.md`.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvFactory, Environment};
use crate::domain::{Action, ActionKind, Observation, TaskSpec};

/// Action as sent over the wire; `kind` is the DSL name (`"Scroll Down"`,
/// `"Exit"`), and an exit carries its message in `argument`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireAction {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument: Option<String>,
}

impl From<&Action> for WireAction {
    fn from(a: &Action) -> Self {
        WireAction {
            kind: a.kind.dsl_name().to_string(),
            element: a.element.clone(),
            argument: a.argument.clone(),
        }
    }
}

impl From<&WireAction> for Action {
    fn from(w: &WireAction) -> Self {
        let kind = match w.kind.as_str() {
            "Exit" => ActionKind::Exit,
            other => ActionKind::from_dsl_name(other),
        };
        Action {
            kind,
            element: w.element.clone(),
            argument: w.argument.clone(),
            comments: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum AdapterVerb {
    Reset { task: TaskSpec },
    Step { action: WireAction },
    Observe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub id: u64,
    #[serde(flatten)]
    pub verb: AdapterVerb,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireObservation {
    pub html: String,
    pub terminal: bool,
    /// The adapter's judgment, present once `terminal` is true.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownTask,
    Divergence,
    NotReset,
    Terminal,
    BadRequest,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownTask => "unknown_task",
            ErrorCode::Divergence => "divergence",
            ErrorCode::NotReset => "not_reset",
            ErrorCode::Terminal => "terminal",
            ErrorCode::BadRequest => "bad_request",
            ErrorCode::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<WireObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl AdapterResponse {
    fn success(id: u64, obs: &Observation, success: Option<bool>) -> Self {
        AdapterResponse {
            id,
            ok: true,
            observation: Some(WireObservation {
                html: obs.html.clone(),
                terminal: obs.terminal,
                success: if obs.terminal { success } else { None },
            }),
            error: None,
        }
    }

    fn failure(id: u64, code: ErrorCode, message: impl Into<String>) -> Self {
        AdapterResponse {
            id,
            ok: false,
            observation: None,
            error: Some(ErrorBody {
                code,
                message: message.into(),
            }),
        }
    }
}

fn error_code(e: &EnvError) -> ErrorCode {
    match e {
        EnvError::UnknownTask(_) => ErrorCode::UnknownTask,
        EnvError::Divergence { .. } => ErrorCode::Divergence,
        EnvError::NotReset => ErrorCode::NotReset,
        EnvError::Terminal => ErrorCode::Terminal,
        EnvError::Adapter { code, .. } if code == "bad_request" => ErrorCode::BadRequest,
        _ => ErrorCode::Internal,
    }
}

fn error_from_body(body: ErrorBody) -> EnvError {
    match body.code {
        ErrorCode::UnknownTask => EnvError::UnknownTask(body.message),
        ErrorCode::NotReset => EnvError::NotReset,
        ErrorCode::Terminal => EnvError::Terminal,
        code => EnvError::Adapter {
            code: code.as_str().to_string(),
            message: body.message,
        },
    }
}

/// Serves the protocol until `reader` reaches end of input. Each `reset`
/// creates a fresh environment for its task through `factory`.
pub fn serve_adapter(
    factory: &dyn EnvFactory,
    reader: impl BufRead,
    mut writer: impl Write,
) -> std::io::Result<()> {
    let mut env: Option<Box<dyn Environment>> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<AdapterRequest>(&line) {
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64))
                    .unwrap_or(0);
                AdapterResponse::failure(id, ErrorCode::BadRequest, e.to_string())
            }
            Ok(req) => {
                let result = match &req.verb {
                    AdapterVerb::Reset { task } => factory.create(task).and_then(|mut e| {
                        let obs = e.reset(task)?;
                        env = Some(e);
                        Ok(obs)
                    }),
                    AdapterVerb::Step { action } => match env.as_mut() {
                        Some(e) => e.step(&Action::from(action)),
                        None => Err(EnvError::NotReset),
                    },
                    AdapterVerb::Observe => match env.as_ref() {
                        Some(e) => e.observe(),
                        None => Err(EnvError::NotReset),
                    },
                };
                match result {
                    Ok(obs) => AdapterResponse::success(
                        req.id,
                        &obs,
                        env.as_ref().and_then(|e| e.success()),
                    ),
                    Err(e) => AdapterResponse::failure(req.id, error_code(&e), e.to_string()),
                }
            }
        };
        let mut text = serde_json::to_string(&response).expect("response serializes");
        text.push('\n');
        writer.write_all(text.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Client side of the protocol, usable as an [`Environment`].
pub struct AdapterClient {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    next_id: u64,
    last: Option<Observation>,
    success: Option<bool>,
}

impl std::fmt::Debug for AdapterClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterClient")
            .field("next_id", &self.next_id)
            .field("child", &self.child.as_ref().map(Child::id))
            .finish()
    }
}

fn io_err(e: impl std::fmt::Display) -> EnvError {
    EnvError::Io(e.to_string())
}

impl AdapterClient {
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Self {
        AdapterClient {
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
            next_id: 1,
            last: None,
            success: None,
        }
    }

    /// Connects to `tcp://host:port`, or spawns `exec:<program> [args...]`
    /// and talks over its stdio.
    pub fn connect(endpoint: &str) -> Result<Self, EnvError> {
        if let Some(addr) = endpoint.strip_prefix("tcp://") {
            let stream = TcpStream::connect(addr).map_err(io_err)?;
            let read_half = stream.try_clone().map_err(io_err)?;
            Ok(AdapterClient::from_streams(BufReader::new(read_half), stream))
        } else if let Some(cmd) = endpoint.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| io_err("empty exec endpoint"))?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(io_err)?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let mut client = AdapterClient::from_streams(BufReader::new(stdout), stdin);
            client.child = Some(child);
            Ok(client)
        } else {
            Err(EnvError::Io(format!(
                "unsupported adapter endpoint `{endpoint}` (expected tcp:// or exec:)"
            )))
        }
    }

    fn call(&mut self, verb: AdapterVerb) -> Result<Observation, EnvError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&AdapterRequest { id, verb }).map_err(io_err)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(io_err)?;
        self.writer.flush().map_err(io_err)?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply).map_err(io_err)? == 0 {
            return Err(io_err("adapter closed the connection"));
        }
        let resp: AdapterResponse = serde_json::from_str(&reply).map_err(|e| EnvError::Adapter {
            code: ErrorCode::Internal.as_str().into(),
            message: format!("malformed response: {e}"),
        })?;
        if resp.id != id {
            return Err(EnvError::Adapter {
                code: ErrorCode::Internal.as_str().into(),
                message: format!("response id {} for request {id}", resp.id),
            });
        }
        match (resp.ok, resp.observation, resp.error) {
            (true, Some(o), _) => {
                if o.terminal {
                    self.success = o.success;
                }
                let obs = Observation::new(o.html, o.terminal);
                self.last = Some(obs.clone());
                Ok(obs)
            }
            (false, _, Some(body)) => Err(error_from_body(body)),
            _ => Err(EnvError::Adapter {
                code: ErrorCode::Internal.as_str().into(),
                message: "response has neither observation nor error".into(),
            }),
        }
    }

    /// Asks the adapter for its current observation.
    pub fn refresh(&mut self) -> Result<Observation, EnvError> {
        self.call(AdapterVerb::Observe)
    }
}

impl Environment for AdapterClient {
    fn reset(&mut self, task: &TaskSpec) -> Result<Observation, EnvError> {
        self.success = None;
        self.call(AdapterVerb::Reset { task: task.clone() })
    }

    fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        self.call(AdapterVerb::Step {
            action: WireAction::from(action),
        })
        .map_err(|e| match e {
            EnvError::Adapter { code, message } if code == "divergence" => EnvError::Divergence {
                action: message,
                state: 0,
            },
            other => other,
        })
    }

    /// The last observation received; use [`AdapterClient::refresh`] to ask
    /// the adapter again.
    fn observe(&self) -> Result<Observation, EnvError> {
        self.last.clone().ok_or(EnvError::NotReset)
    }

    fn success(&self) -> Option<bool> {
        self.success
    }
}

impl Drop for AdapterClient {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Website;
    use crate::env::{ActionMatcher, FixtureLibrary, FixtureState, Next, ReplayFixture, SuccessWhen, Transition};

    fn library() -> FixtureLibrary {
        let mut lib = FixtureLibrary::new();
        lib.insert(ReplayFixture {
            task: TaskSpec::new("t1", Website::Map, "go"),
            states: vec![
                FixtureState {
                    html: r#"<a id="15">dir</a>"#.into(),
                    transitions: vec![Transition {
                        matcher: ActionMatcher::new(&ActionKind::Click).on("15"),
                        next: Next::State(1),
                    }],
                },
                FixtureState {
                    html: "<p>Time: 0:34.</p>".into(),
                    transitions: vec![],
                },
            ],
            success_when: SuccessWhen::Substring("0:34".into()),
            exit_states: None,
        })
        .unwrap();
        lib
    }

    fn serve(input: &str) -> Vec<AdapterResponse> {
        let mut out = Vec::new();
        serve_adapter(&library(), input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn request_wire_format() {
        let req = AdapterRequest {
            id: 2,
            verb: AdapterVerb::Step {
                action: WireAction::from(&Action::click("15")),
            },
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"id":2,"verb":"step","action":{"kind":"Click","element":"15"}}"#
        );
        let obs = AdapterRequest {
            id: 3,
            verb: AdapterVerb::Observe,
        };
        assert_eq!(serde_json::to_string(&obs).unwrap(), r#"{"id":3,"verb":"observe"}"#);
    }

    #[test]
    fn server_session() {
        let input = [
            r#"{"id":1,"verb":"step","action":{"kind":"Click","element":"15"}}"#,
            r#"{"id":2,"verb":"reset","task":{"id":"t1","website":"map","intent":"go"}}"#,
            r#"{"id":3,"verb":"step","action":{"kind":"Click","element":"99"}}"#,
            r#"{"id":4,"verb":"step","action":{"kind":"Click","element":"15"}}"#,
            r#"{"id":5,"verb":"step","action":{"kind":"Exit","argument":"It takes 0:34."}}"#,
            r#"{"id":6,"verb":"observe"}"#,
            r#"{"id":7,"verb":"reset","task":{"id":"nope","website":"map","intent":"go"}}"#,
            r#"{"id":8,"verb":"fly"}"#,
            "not json",
        ]
        .join("\n");
        let r = serve(&input);
        assert_eq!(r.len(), 9);
        let code = |i: usize| r[i].error.as_ref().map(|e| e.code);
        assert_eq!(code(0), Some(ErrorCode::NotReset));
        assert!(r[1].ok);
        assert_eq!(code(2), Some(ErrorCode::Divergence));
        assert!(r[3].observation.as_ref().unwrap().html.contains("0:34"));
        let last = r[4].observation.as_ref().unwrap();
        assert!(last.terminal);
        assert_eq!(last.success, Some(true));
        assert!(r[5].ok);
        assert_eq!(code(6), Some(ErrorCode::UnknownTask));
        assert_eq!((r[7].id, code(7)), (8, Some(ErrorCode::BadRequest)));
        assert_eq!((r[8].id, code(8)), (0, Some(ErrorCode::BadRequest)));
    }

    #[test]
    fn client_over_tcp() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            serve_adapter(&library(), reader, stream).unwrap();
        });
        let mut client = AdapterClient::connect(&format!("tcp://{addr}")).unwrap();
        let task = TaskSpec::new("t1", Website::Map, "go");
        let first = client.reset(&task).unwrap();
        assert!(first.element_ids.contains("15"));
        assert!(matches!(
            client.step(&Action::click("1")),
            Err(EnvError::Divergence { .. })
        ));
        client.step(&Action::click("15")).unwrap();
        assert_eq!(client.refresh().unwrap(), client.observe().unwrap());
        let end = client.step(&Action::exit("0:34")).unwrap();
        assert!(end.terminal);
        assert_eq!(client.success(), Some(true));
        drop(client);
        server.join().unwrap();
    }
}
