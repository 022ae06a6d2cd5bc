use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sends one request line and returns the matching response line.
pub trait Transport: Send {
    fn exchange(&mut self, line: &str) -> Result<String>;
}

impl Transport for Box<dyn Transport> {
    fn exchange(&mut self, line: &str) -> Result<String> {
        (**self).exchange(line)
    }
}

/// Adapts a closure into a transport.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: FnMut(&str) -> Result<String> + Send,
{
    fn exchange(&mut self, line: &str) -> Result<String> {
        (self.0)(line)
    }
}

/// Talks to a bridge child process over its stdin/stdout.
pub struct ProcessTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl ProcessTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BridgeUnavailable(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .map(BufReader::new)
            .ok_or_else(|| Error::BridgeUnavailable("child has no stdout".into()))?;
        Ok(Self {
            child,
            stdin,
            stdout,
        })
    }

    /// Splits a command line on whitespace: first word is the program.
    pub fn spawn_command_line(command: &str) -> Result<Self> {
        let mut words = command.split_whitespace().map(str::to_string);
        let program = words
            .next()
            .ok_or_else(|| Error::BridgeUnavailable("empty bridge command".into()))?;
        let args: Vec<String> = words.collect();
        Self::spawn(&program, &args)
    }
}

impl Transport for ProcessTransport {
    fn exchange(&mut self, line: &str) -> Result<String> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::BridgeUnavailable("bridge input closed".into()))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::BridgeUnavailable(format!("write to bridge failed: {e}")))?;
        let mut response = String::new();
        let n = self
            .stdout
            .read_line(&mut response)
            .map_err(|e| Error::BridgeUnavailable(format!("read from bridge failed: {e}")))?;
        if n == 0 {
            return Err(Error::BridgeUnavailable("bridge closed its output".into()));
        }
        Ok(response)
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        // EOF on stdin asks the bridge to exit
        drop(self.stdin.take());
        for _ in 0..200 {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) => std::thread::sleep(std::time::Duration::from_millis(10)),
                Err(_) => break,
            }
        }
        log::warn!("bridge did not exit after input closed; killing it");
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One recorded request/response pair. The request is stored without its id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: serde_json::Value,
    pub response: serde_json::Value,
}

fn strip_id(line: &str) -> Result<(Option<u64>, serde_json::Value)> {
    let mut value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| Error::ProtocolError(format!("malformed line: {e}")))?;
    let id = value
        .as_object_mut()
        .and_then(|o| o.remove("id"))
        .and_then(|v| v.as_u64());
    Ok((id, value))
}

/// Serves canned responses from a JSONL file of `{"request":..,"response":..}` lines.
pub struct ReplayTransport {
    responses: HashMap<String, serde_json::Value>,
}

impl ReplayTransport {
    pub fn new(exchanges: impl IntoIterator<Item = Exchange>) -> Self {
        Self {
            responses: exchanges
                .into_iter()
                .map(|e| (e.request.to_string(), e.response))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let exchanges = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str::<Exchange>(l).map_err(|e| Error::MalformedFile {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(exchanges))
    }
}

impl Transport for ReplayTransport {
    fn exchange(&mut self, line: &str) -> Result<String> {
        let (id, request) = strip_id(line)?;
        let mut response = self
            .responses
            .get(&request.to_string())
            .cloned()
            .ok_or_else(|| Error::BridgeUnavailable(format!("no recorded response for {request}")))?;
        if let (Some(id), Some(obj)) = (id, response.as_object_mut()) {
            obj.insert("id".into(), id.into());
        }
        Ok(response.to_string())
    }
}

/// Wraps a transport and keeps every exchange for later replay.
pub struct RecordingTransport<T> {
    inner: T,
    log: std::sync::Arc<std::sync::Mutex<Vec<Exchange>>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Default::default(),
        }
    }

    /// Shared handle to the exchanges recorded so far.
    pub fn log(&self) -> std::sync::Arc<std::sync::Mutex<Vec<Exchange>>> {
        self.log.clone()
    }
}

/// Writes exchanges as JSONL, the format `ReplayTransport::load` reads.
pub fn write_exchanges(exchanges: &[Exchange], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in exchanges {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn exchange(&mut self, line: &str) -> Result<String> {
        let response = self.inner.exchange(line)?;
        let (_, request) = strip_id(line)?;
        let (_, response_value) = strip_id(&response)?;
        self.log
            .lock()
            .expect("recording log poisoned")
            .push(Exchange {
                request,
                response: response_value,
            });
        Ok(response)
    }
}
