//! Line-delimited JSON protocol for external recognition backends.
//!
//! ```text
//! -> {"v":1,"type":"recognize","utterance_id":"u1","text":"...","setting":"f2"}
//! <- {"v":1,"type":"result","utterance_id":"u1","lattice":[[{"token":"a","logp":-0.1},...],...]}
//! <- {"v":1,"type":"nbest","utterance_id":"u1","hyps":[{"tokens":["a"],"score":-1.2},...]}
//! <- {"v":1,"type":"error","message":"..."}
//! ```
//!
//! Epsilon lattice candidates are spelled `<eps>`. The client allows one
//! request in flight per connection.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Mutex, TryLockError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::lattice::{Lattice, WireCandidate};
use super::profile::Setting;
use super::{Backend, NBest, Recognition, RecognitionRequest, ScoredHyp};
use crate::corpus::{tokenize, Unit};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizeRequest {
    pub v: u64,
    #[serde(rename = "type")]
    pub kind: String,
    pub utterance_id: String,
    pub text: String,
    pub setting: Setting,
}

impl RecognizeRequest {
    pub fn new(utterance_id: impl Into<String>, text: impl Into<String>, setting: Setting) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: "recognize".into(),
            utterance_id: utterance_id.into(),
            text: text.into(),
            setting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireHyp {
    pub tokens: Vec<String>,
    pub score: f64,
}

/// Messages a backend may send.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Result {
        utterance_id: String,
        lattice: Vec<Vec<WireCandidate>>,
    },
    NBest {
        utterance_id: String,
        hyps: Vec<WireHyp>,
    },
    Error {
        message: String,
    },
}

impl Response {
    pub fn to_json(&self) -> Value {
        match self {
            Response::Result {
                utterance_id,
                lattice,
            } => serde_json::json!({
                "v": PROTOCOL_VERSION, "type": "result",
                "utterance_id": utterance_id, "lattice": lattice,
            }),
            Response::NBest { utterance_id, hyps } => serde_json::json!({
                "v": PROTOCOL_VERSION, "type": "nbest",
                "utterance_id": utterance_id, "hyps": hyps,
            }),
            Response::Error { message } => serde_json::json!({
                "v": PROTOCOL_VERSION, "type": "error", "message": message,
            }),
        }
    }

    pub fn utterance_id(&self) -> Option<&str> {
        match self {
            Response::Result { utterance_id, .. } | Response::NBest { utterance_id, .. } => {
                Some(utterance_id)
            }
            Response::Error { .. } => None,
        }
    }
}

fn protocol(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}

/// Parse one backend line, checking the version and required fields.
pub fn parse_response(line: &str) -> Result<Response> {
    let value: Value = serde_json::from_str(line.trim())
        .map_err(|e| protocol(format!("response is not JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| protocol("response is not a JSON object"))?;
    match obj.get("v").and_then(Value::as_u64) {
        Some(PROTOCOL_VERSION) => {}
        Some(v) => return Err(protocol(format!("unsupported protocol version {v}"))),
        None => return Err(protocol("missing protocol version \"v\"")),
    }
    let kind = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| protocol("missing \"type\""))?;
    if kind == "error" {
        let message = obj
            .get("message")
            .and_then(Value::as_str)
            .unwrap_or("unspecified backend error");
        return Ok(Response::Error {
            message: message.to_owned(),
        });
    }
    let utterance_id = obj
        .get("utterance_id")
        .and_then(Value::as_str)
        .ok_or_else(|| protocol("missing \"utterance_id\""))?
        .to_owned();
    match kind {
        "result" => {
            let lattice = obj.get("lattice").ok_or_else(|| protocol("missing \"lattice\""))?;
            let lattice = serde_json::from_value(lattice.clone())
                .map_err(|e| protocol(format!("malformed lattice: {e}")))?;
            Ok(Response::Result {
                utterance_id,
                lattice,
            })
        }
        "nbest" => {
            let hyps = obj.get("hyps").ok_or_else(|| protocol("missing \"hyps\""))?;
            let hyps = serde_json::from_value(hyps.clone())
                .map_err(|e| protocol(format!("malformed hyps: {e}")))?;
            Ok(Response::NBest { utterance_id, hyps })
        }
        other => Err(protocol(format!("unknown message type `{other}`"))),
    }
}

/// Turn a parsed response into a recognition result. Lattice steps are
/// renormalized when needed; n-best tokens are re-tokenized with `unit`.
pub fn into_recognition(
    response: Response,
    reference_len: usize,
    unit: Unit,
) -> Result<(Recognition, Vec<String>)> {
    match response {
        Response::Error { message } => Err(Error::Backend(message)),
        Response::Result {
            utterance_id,
            lattice,
        } => {
            if lattice.is_empty() {
                return Err(protocol(format!("utterance {utterance_id}: lattice has no steps")));
            }
            let steps = Lattice::steps_from_wire(lattice);
            let (lattice, warnings) = Lattice::normalized(utterance_id, reference_len, steps)
                .map_err(|e| protocol(e.to_string()))?;
            Ok((Recognition::Lattice(lattice), warnings))
        }
        Response::NBest { utterance_id, hyps } => {
            if hyps.is_empty() {
                return Err(protocol(format!("utterance {utterance_id}: empty n-best list")));
            }
            let mut out = Vec::with_capacity(hyps.len());
            for h in hyps {
                if !h.score.is_finite() {
                    return Err(protocol(format!("utterance {utterance_id}: non-finite score")));
                }
                out.push(ScoredHyp {
                    tokens: tokenize(&h.tokens.join(" "), unit).unwrap_or_default(),
                    score: h.score,
                });
            }
            Ok((
                Recognition::NBest(NBest {
                    utterance_id,
                    hyps: out,
                }),
                Vec::new(),
            ))
        }
    }
}

/// A bidirectional line channel to one backend instance.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> Result<()>;
    /// Next line without its terminator; `BackendTimeout` after `timeout`.
    fn recv_line(&mut self, timeout: Duration) -> Result<String>;
}

/// Backend running as a child process speaking over stdin/stdout.
pub struct SubprocessTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl SubprocessTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().ok_or_else(|| protocol("child stdin unavailable"))?;
        let stdout = child.stdout.take().ok_or_else(|| protocol("child stdout unavailable"))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let done = line.is_err();
                if tx.send(line).is_err() || done {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Transport for SubprocessTransport {
    fn send_line(&mut self, line: &str) -> Result<()> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        Ok(())
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(line?),
            Err(RecvTimeoutError::Timeout) => Err(Error::BackendTimeout(timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(protocol("backend closed its output")),
        }
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Backend reachable over TCP.
pub struct TcpTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    pending: String,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            writer: stream,
            reader,
            pending: String::new(),
        })
    }
}

impl Transport for TcpTransport {
    fn send_line(&mut self, line: &str) -> Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String> {
        self.reader.get_ref().set_read_timeout(Some(timeout))?;
        // Partial data survives a timeout in `pending`.
        match self.reader.read_line(&mut self.pending) {
            Ok(0) => Err(protocol("backend closed the connection")),
            Ok(_) if self.pending.ends_with('\n') => {
                let line = std::mem::take(&mut self.pending);
                Ok(line.trim_end_matches(['\r', '\n']).to_owned())
            }
            Ok(_) => Err(protocol("backend closed the connection mid-line")),
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                Err(Error::BackendTimeout(timeout.as_millis() as u64))
            }
            Err(e) => Err(e.into()),
        }
    }
}

struct Connection {
    transport: Box<dyn Transport>,
    // Requests that timed out; their late answers are skipped.
    abandoned: HashSet<String>,
}

/// [`Backend`] forwarding requests over one or more [`Transport`]s.
pub struct ExternalBackend {
    connections: Vec<Mutex<Connection>>,
    next: AtomicUsize,
    timeout: Duration,
    unit: Unit,
    warnings: Mutex<Vec<String>>,
}

impl ExternalBackend {
    /// `unit` is used to re-tokenize n-best hypotheses.
    pub fn new(transports: Vec<Box<dyn Transport>>, timeout: Duration, unit: Unit) -> Result<Self> {
        if transports.is_empty() {
            return Err(protocol("no backend connections"));
        }
        Ok(Self {
            connections: transports
                .into_iter()
                .map(|transport| {
                    Mutex::new(Connection {
                        transport,
                        abandoned: HashSet::new(),
                    })
                })
                .collect(),
            next: AtomicUsize::new(0),
            timeout,
            unit,
            warnings: Mutex::new(Vec::new()),
        })
    }

    /// Spawn `pool` copies of a subprocess backend.
    pub fn spawn(program: &str, args: &[String], pool: usize, timeout: Duration, unit: Unit) -> Result<Self> {
        let transports = (0..pool.max(1))
            .map(|_| SubprocessTransport::spawn(program, args).map(|t| Box::new(t) as Box<dyn Transport>))
            .collect::<Result<_>>()?;
        Self::new(transports, timeout, unit)
    }

    pub fn connect_tcp(addr: &str, pool: usize, timeout: Duration, unit: Unit) -> Result<Self> {
        let transports = (0..pool.max(1))
            .map(|_| TcpTransport::connect(addr).map(|t| Box::new(t) as Box<dyn Transport>))
            .collect::<Result<_>>()?;
        Self::new(transports, timeout, unit)
    }

    /// Warnings recorded so far (e.g. renormalized lattice steps).
    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().expect("warnings lock").clone()
    }

    fn acquire(&self) -> std::sync::MutexGuard<'_, Connection> {
        let n = self.connections.len();
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        for i in 0..n {
            match self.connections[(start + i) % n].try_lock() {
                Ok(guard) => return guard,
                Err(TryLockError::Poisoned(p)) => return p.into_inner(),
                Err(TryLockError::WouldBlock) => {}
            }
        }
        self.connections[start % n]
            .lock()
            .unwrap_or_else(|p| p.into_inner())
    }

    pub fn request(&self, request: &RecognizeRequest, reference_len: usize) -> Result<Recognition> {
        let line = serde_json::to_string(request)?;
        let mut conn = self.acquire();
        conn.transport.send_line(&line)?;
        loop {
            let reply = match conn.transport.recv_line(self.timeout) {
                Ok(reply) => reply,
                Err(e @ Error::BackendTimeout(_)) => {
                    conn.abandoned.insert(request.utterance_id.clone());
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let response = parse_response(&reply)?;
            match response.utterance_id() {
                Some(id) if id != request.utterance_id => {
                    if conn.abandoned.remove(id) {
                        log::warn!("skipping late response for utterance {id}");
                        continue;
                    }
                    return Err(protocol(format!(
                        "response for `{id}` while waiting for `{}`",
                        request.utterance_id
                    )));
                }
                _ => {}
            }
            drop(conn);
            let (recognition, warnings) = into_recognition(response, reference_len, self.unit)?;
            if !warnings.is_empty() {
                for w in &warnings {
                    log::warn!("{w}");
                }
                self.warnings.lock().expect("warnings lock").extend(warnings);
            }
            return Ok(recognition);
        }
    }
}

impl Backend for ExternalBackend {
    fn recognize(&self, req: &RecognitionRequest<'_>) -> Result<Recognition> {
        let request = RecognizeRequest::new(req.utterance.id.clone(), req.utterance.token_text(), req.setting);
        self.request(&request, req.utterance.tokens.len())
    }
}

/// Serve the protocol on a line stream, answering each request with
/// `handler`. Returns when the input ends.
pub fn serve_lines<R, W, F>(input: R, mut output: W, mut handler: F) -> std::io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(std::result::Result<RecognizeRequest, String>) -> Option<String>,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RecognizeRequest>(&line).map_err(|e| e.to_string());
        if let Some(reply) = handler(parsed) {
            output.write_all(reply.as_bytes())?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
    }
    Ok(())
}

/// Answer `request` with its own text as a single-best hypothesis.
pub fn echo_response(request: &RecognizeRequest) -> Response {
    Response::NBest {
        utterance_id: request.utterance_id.clone(),
        hyps: vec![WireHyp {
            tokens: request.text.split_whitespace().map(String::from).collect(),
            score: 0.0,
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn missing_utterance_id() {
        let err = parse_response(r#"{"v":1,"type":"result","lattice":[]}"#).unwrap_err();
        assert!(matches!(err, Error::Protocol(m) if m.contains("utterance_id")));
    }

    #[test]
    fn missing_version() {
        assert!(matches!(
            parse_response(r#"{"type":"nbest","utterance_id":"u","hyps":[]}"#),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn garbage_is_protocol_error() {
        assert!(matches!(parse_response("not json"), Err(Error::Protocol(_))));
    }

    #[test]
    fn error_message_surfaces() {
        let r = parse_response(r#"{"v":1,"type":"error","message":"boom"}"#).unwrap();
        assert!(matches!(into_recognition(r, 1, Unit::Word), Err(Error::Backend(m)) if m == "boom"));
    }

    #[test]
    fn slightly_off_mass_is_renormalized() {
        let line = format!(
            r#"{{"v":1,"type":"result","utterance_id":"u","lattice":[[{{"token":"a","logp":{}}},{{"token":"<eps>","logp":{}}}]]}}"#,
            0.90f64.ln(),
            0.08f64.ln()
        );
        let (rec, warnings) = into_recognition(parse_response(&line).unwrap(), 1, Unit::Word).unwrap();
        assert_eq!(warnings.len(), 1);
        let Recognition::Lattice(lat) = rec else { panic!("expected lattice") };
        assert!((lat.steps[0].mass() - 1.0).abs() < 1e-12);
        assert!(lat.steps[0].candidates[1].is_epsilon());
    }

    #[test]
    fn nbest_retokenized_by_unit() {
        let r = parse_response(r#"{"v":1,"type":"nbest","utterance_id":"u","hyps":[{"tokens":["你好"],"score":-1}]}"#)
            .unwrap();
        let (rec, _) = into_recognition(r, 2, Unit::Character).unwrap();
        let Recognition::NBest(nb) = rec else { panic!("expected nbest") };
        assert_eq!(nb.hyps[0].tokens, vec!["你", "好"]);
    }

    #[test]
    fn request_wire_shape() {
        let req = RecognizeRequest::new("u1", "a b", Setting::OneShotF2);
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"v":1,"type":"recognize","utterance_id":"u1","text":"a b","setting":"f2"}"#
        );
    }

    fn spawn_server<F>(handler: F) -> String
    where
        F: FnMut(std::result::Result<RecognizeRequest, String>) -> Option<String> + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            let _ = serve_lines(reader, stream, handler);
        });
        addr
    }

    #[test]
    fn tcp_echo_roundtrip() {
        let addr = spawn_server(|req| Some(echo_response(&req.unwrap()).to_json().to_string()));
        let backend = ExternalBackend::connect_tcp(&addr, 1, Duration::from_secs(5), Unit::Word).unwrap();
        for i in 0..10 {
            let req = RecognizeRequest::new(format!("u{i}"), "hello there", Setting::Baseline);
            let Recognition::NBest(nb) = backend.request(&req, 2).unwrap() else { panic!() };
            assert_eq!(nb.hyps[0].tokens, vec!["hello", "there"]);
        }
    }

    #[test]
    fn timeout_then_late_answer_is_skipped() {
        let mut first = true;
        let addr = spawn_server(move |req| {
            let req = req.unwrap();
            if first {
                first = false;
                thread::sleep(Duration::from_millis(300));
            }
            Some(echo_response(&req).to_json().to_string())
        });
        let backend = ExternalBackend::connect_tcp(&addr, 1, Duration::from_millis(100), Unit::Word).unwrap();
        let slow = RecognizeRequest::new("slow", "a", Setting::Baseline);
        assert!(matches!(backend.request(&slow, 1), Err(Error::BackendTimeout(100))));
        let ok = RecognizeRequest::new("ok", "b", Setting::Baseline);
        thread::sleep(Duration::from_millis(400));
        let backend_ok = ExternalBackend {
            timeout: Duration::from_secs(5),
            ..backend
        };
        let Recognition::NBest(nb) = backend_ok.request(&ok, 1).unwrap() else { panic!() };
        assert_eq!(nb.utterance_id, "ok");
    }
}
