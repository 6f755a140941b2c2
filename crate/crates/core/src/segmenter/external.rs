//! Adapter for segmenters running in a child process.
//!
//! The child speaks newline-delimited JSON over stdin/stdout. On startup it
//! prints a handshake line `{"protocol": "clickseg-ext", "version": 1}`;
//! afterwards every request line gets exactly one response line:
//!
//! ```text
//! -> {"id": 3, "width": W, "height": H, "image": b64(rgb8), "pos_map": b64(u8),
//!     "neg_map": b64(u8), "prev_mask": b64(f32 le)}
//! <- {"id": 3, "prob_map": b64(f32 le)}
//! ```
//!
//! Only one request is in flight per child. Any failure (exit, timeout,
//! malformed or mis-sized response) poisons the adapter.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::encoding::ModelInput;
use crate::formats::{f32_bytes, f32_values};
use crate::types::ProbabilityMap;

use super::{Segmenter, SegmenterError};

pub const PROTOCOL_NAME: &str = "clickseg-ext";
pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub image: String,
    pub pos_map: String,
    pub neg_map: String,
    pub prev_mask: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub prob_map: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

impl Request {
    pub fn from_input(id: u64, input: &ModelInput) -> Self {
        let disk = |m: &ProbabilityMap| -> Vec<u8> { m.values().iter().map(|&v| (v >= 0.5) as u8).collect() };
        let (width, height) = input.dims();
        Self {
            id,
            width,
            height,
            image: B64.encode(input.image.to_rgb_bytes()),
            pos_map: B64.encode(disk(&input.click_maps.positive)),
            neg_map: B64.encode(disk(&input.click_maps.negative)),
            prev_mask: B64.encode(f32_bytes(input.previous_mask.values())),
        }
    }
}

impl Response {
    /// Decodes and checks the probability map against the requested size.
    pub fn into_map(self, width: usize, height: usize) -> Result<ProbabilityMap, SegmenterError> {
        let mismatch = |actual| SegmenterError::DimensionMismatch {
            expected: (width, height),
            actual,
        };
        if let (Some(w), Some(h)) = (self.width, self.height) {
            if (w, h) != (width, height) {
                return Err(mismatch((w, h)));
            }
        }
        let bytes = B64
            .decode(self.prob_map.as_bytes())
            .map_err(|e| SegmenterError::Malformed(format!("prob_map base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(SegmenterError::Malformed(
                "prob_map is not a whole number of f32".into(),
            ));
        }
        let values = f32_values(&bytes);
        if values.len() != width * height {
            let rows = values.len() / width.max(1);
            return Err(mismatch((width, rows)));
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SegmenterError::OutOfRange(bad));
        }
        Ok(ProbabilityMap::new(width, height, values).expect("checked above"))
    }
}

pub struct ExternalSegmenter {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    failed: bool,
}

impl std::fmt::Debug for ExternalSegmenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalSegmenter")
            .field("pid", &self.child.id())
            .field("next_id", &self.next_id)
            .field("failed", &self.failed)
            .finish()
    }
}

impl ExternalSegmenter {
    /// Runs `command` through `sh -c` and waits for the handshake.
    pub fn spawn_shell(command: &str, timeout: Duration) -> Result<Self, SegmenterError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command);
        Self::spawn(cmd, timeout)
    }

    pub fn spawn(mut cmd: Command, timeout: Duration) -> Result<Self, SegmenterError> {
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdout = child.stdout.take().expect("stdout piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut seg = Self {
            child,
            stdin,
            lines: rx,
            next_id: 0,
            timeout,
            failed: false,
        };
        let line = seg.read_line()?;
        let hs: Handshake =
            serde_json::from_str(&line).map_err(|e| SegmenterError::Malformed(format!("handshake: {e}")))?;
        if hs.protocol != PROTOCOL_NAME || hs.version != PROTOCOL_VERSION {
            return Err(SegmenterError::Malformed(format!(
                "unsupported handshake {}/{}",
                hs.protocol, hs.version
            )));
        }
        Ok(seg)
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    fn exit_reason(&mut self) -> String {
        // the reader thread may see EOF slightly before the process is reaped
        for _ in 0..50 {
            if let Ok(Some(status)) = self.child.try_wait() {
                return status.to_string();
            }
            thread::sleep(Duration::from_millis(10));
        }
        "stdout closed".to_string()
    }

    fn read_line(&mut self) -> Result<String, SegmenterError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(SegmenterError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(SegmenterError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(SegmenterError::ProcessExited(self.exit_reason())),
        }
    }

    fn exchange(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&Request::from_input(id, input))
            .map_err(|e| SegmenterError::Malformed(e.to_string()))?;
        line.push('\n');
        let stdin = self.stdin.as_mut().ok_or(SegmenterError::Failed)?;
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Err(SegmenterError::ProcessExited(self.exit_reason()));
            }
            return Err(e.into());
        }
        let reply = self.read_line()?;
        let resp: Response =
            serde_json::from_str(&reply).map_err(|e| SegmenterError::Malformed(format!("response: {e}")))?;
        if resp.id != id {
            return Err(SegmenterError::Malformed(format!(
                "response id {} does not match request {id}",
                resp.id
            )));
        }
        let (w, h) = input.dims();
        resp.into_map(w, h)
    }
}

impl Segmenter for ExternalSegmenter {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        if self.failed {
            return Err(SegmenterError::Failed);
        }
        let result = self.exchange(input);
        if result.is_err() {
            self.failed = true;
        }
        result
    }
}

impl Drop for ExternalSegmenter {
    fn drop(&mut self) {
        drop(self.stdin.take());
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}
