//! Client for policies served over newline-delimited JSON on TCP.
//!
//! One request per line, one response per line, one connection per query.
//! See `docs/remote-policy.md`.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ActionPolicy, EnvError, EnvState};

pub const DEFAULT_REMOTE_TIMEOUT: Duration = Duration::from_secs(5);
const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RemoteHistoryEntry {
    pub action: Option<usize>,
    pub observation: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RemoteRequest {
    pub task: String,
    pub history: Vec<RemoteHistoryEntry>,
    pub action_space_size: usize,
}

#[derive(Debug, Deserialize)]
struct RemoteResponse {
    probs: Vec<f64>,
}

impl RemoteRequest {
    pub fn from_state(state: &EnvState, action_space_size: usize) -> Self {
        let mut history = vec![RemoteHistoryEntry {
            action: None,
            observation: state.initial_observation().join(" "),
        }];
        history.extend(state.history().iter().map(|h| RemoteHistoryEntry {
            action: Some(h.action),
            observation: h.observation.join(" "),
        }));
        Self {
            task: state.description().join(" "),
            history,
            action_space_size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemotePolicy {
    addr: SocketAddr,
    action_space_size: usize,
    timeout: Duration,
}

fn transport(e: std::io::Error, timeout: Duration) -> EnvError {
    match e.kind() {
        ErrorKind::TimedOut | ErrorKind::WouldBlock => EnvError::RemoteTimeout(timeout),
        _ => EnvError::RemoteIo(e),
    }
}

impl RemotePolicy {
    pub fn new(addr: impl ToSocketAddrs, action_space_size: usize) -> Result<Self, EnvError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(EnvError::RemoteIo)?
            .next()
            .ok_or_else(|| EnvError::RemoteMalformed("address resolved to nothing".into()))?;
        Ok(Self {
            addr,
            action_space_size,
            timeout: DEFAULT_REMOTE_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn query(&self, request: &RemoteRequest) -> Result<Vec<f64>, EnvError> {
        let t = self.timeout;
        let mut stream = TcpStream::connect_timeout(&self.addr, t).map_err(|e| transport(e, t))?;
        stream.set_read_timeout(Some(t)).map_err(EnvError::RemoteIo)?;
        stream.set_write_timeout(Some(t)).map_err(EnvError::RemoteIo)?;
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        stream.write_all(line.as_bytes()).map_err(|e| transport(e, t))?;
        let mut reply = String::new();
        BufReader::new(stream)
            .read_line(&mut reply)
            .map_err(|e| transport(e, t))?;
        if reply.is_empty() {
            return Err(EnvError::RemoteMalformed("connection closed without a reply".into()));
        }
        let resp: RemoteResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| EnvError::RemoteMalformed(e.to_string()))?;
        if resp.probs.len() != self.action_space_size {
            return Err(EnvError::RemoteMalformed(format!(
                "{} probabilities for an action space of {}",
                resp.probs.len(),
                self.action_space_size
            )));
        }
        if resp.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(EnvError::RemoteMalformed("negative or non-finite probability".into()));
        }
        let sum: f64 = resp.probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(EnvError::RemoteNotNormalized { sum });
        }
        Ok(resp.probs)
    }
}

impl ActionPolicy for RemotePolicy {
    fn distribution(&self, state: &EnvState) -> Result<Vec<f64>, EnvError> {
        if state.is_terminal() {
            return Err(EnvError::TerminalState);
        }
        self.query(&RemoteRequest::from_state(state, self.action_space_size))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CriticalStepWorld, EnvConfig};
    use std::net::TcpListener;
    use std::thread;

    /// Serves one connection with `reply(request)`.
    fn serve_once(reply: impl FnOnce(RemoteRequest) -> Option<String> + Send + 'static) -> SocketAddr {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let req: RemoteRequest = serde_json::from_str(&line).unwrap();
            match reply(req) {
                Some(out) => {
                    let mut s = stream;
                    s.write_all(out.as_bytes()).unwrap();
                    s.write_all(b"\n").unwrap();
                }
                None => thread::sleep(Duration::from_millis(800)),
            }
        });
        addr
    }

    fn state() -> EnvState {
        CriticalStepWorld::new(EnvConfig::default()).unwrap().reset(1)
    }

    #[test]
    fn uniform_server() {
        let addr = serve_once(|req| {
            let n = req.action_space_size;
            assert_eq!(req.history.len(), 1);
            assert_eq!(req.history[0].action, None);
            Some(serde_json::json!({ "probs": vec![1.0 / n as f64; n] }).to_string())
        });
        let p = RemotePolicy::new(addr, 6).unwrap().distribution(&state()).unwrap();
        assert_eq!(p, vec![1.0 / 6.0; 6]);
    }

    #[test]
    fn short_reply_is_malformed() {
        let addr = serve_once(|_| Some(r#"{"probs":[0.2,0.2,0.2,0.2,0.2]}"#.into()));
        let err = RemotePolicy::new(addr, 6).unwrap().distribution(&state()).unwrap_err();
        assert!(matches!(err, EnvError::RemoteMalformed(_)), "{err}");
    }

    #[test]
    fn unnormalized_reply_rejected() {
        let addr = serve_once(|_| Some(r#"{"probs":[0.5,0.5,0.5]}"#.into()));
        let err = RemotePolicy::new(addr, 3).unwrap().distribution(&state()).unwrap_err();
        assert!(matches!(err, EnvError::RemoteNotNormalized { sum } if (sum - 1.5).abs() < 1e-12));
    }

    #[test]
    fn silent_server_times_out() {
        let addr = serve_once(|_| None);
        let err = RemotePolicy::new(addr, 6)
            .unwrap()
            .with_timeout(Duration::from_millis(100))
            .distribution(&state())
            .unwrap_err();
        assert!(matches!(err, EnvError::RemoteTimeout(_)), "{err}");
    }
}
