//! Adapter for a trainer running in another process.
//!
//! The child reads one JSON request per line on stdin and answers with one
//! JSON response per line on stdout:
//!
//! ```text
//! -> {"round": 3, "allocation": {"s1": 40, "s2": 20}}
//! <- {"round": 3, "losses": {"s1": 0.82, "s2": 1.40}}
//! ```
//!
//! Right after spawning, the adapter sends round 0 with an all-zero
//! allocation; the reply is taken as the initial losses.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Batch, Snapshot, Trainer};
use crate::domain::{LossState, SkillId};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub round: usize,
    pub allocation: IndexMap<String, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub round: usize,
    pub losses: IndexMap<String, f64>,
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalTrainer {
    command: Vec<String>,
    train: Vec<SkillId>,
    eval: Vec<SkillId>,
    timeout: Duration,
    process: Option<Process>,
    current: Option<LossState>,
}

impl ExternalTrainer {
    /// Spawns `command` (program followed by arguments) and reads its initial losses.
    pub fn spawn(
        command: Vec<String>,
        train: Vec<SkillId>,
        eval: Vec<SkillId>,
        timeout: Duration,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidConfig("empty trainer command".into()));
        }
        let mut t = ExternalTrainer {
            command,
            train,
            eval,
            timeout,
            process: None,
            current: None,
        };
        t.reset()?;
        Ok(t)
    }

    fn start(&self) -> Result<Process> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(&self.command[0], e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let eof = line.is_err();
                if tx.send(line).is_err() || eof {
                    break;
                }
            }
        });
        Ok(Process {
            child,
            stdin,
            lines: rx,
        })
    }

    fn exchange(&mut self, round: usize, counts: &[usize]) -> Result<LossState> {
        let request = AdapterRequest {
            round,
            allocation: self
                .train
                .iter()
                .map(|s| s.name.clone())
                .zip(counts.iter().copied())
                .collect(),
        };
        let proc = self
            .process
            .as_mut()
            .ok_or_else(|| Error::Trainer("trainer process is not running".into()))?;
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        proc.stdin
            .write_all(line.as_bytes())
            .and_then(|_| proc.stdin.flush())
            .map_err(|e| Error::Trainer(format!("writing request for round {round}: {e}")))?;
        let reply = match proc.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(Error::Trainer(format!("reading response: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Trainer(format!(
                    "no response for round {round} within {:?}",
                    self.timeout
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Trainer(format!("trainer exited before answering round {round}")))
            }
        };
        let resp: AdapterResponse = serde_json::from_str(&reply)
            .map_err(|e| Error::Trainer(format!("malformed response {reply:?}: {e}")))?;
        if resp.round != round {
            return Err(Error::Trainer(format!(
                "response for round {} while waiting on round {round}",
                resp.round
            )));
        }
        let losses = self
            .eval
            .iter()
            .map(|s| {
                resp.losses
                    .get(&s.name)
                    .copied()
                    .ok_or_else(|| Error::Trainer(format!("response lacks loss for {:?}", s.name)))
            })
            .collect::<Result<Vec<f64>>>()?;
        LossState::new(losses, round).map_err(|e| Error::Trainer(e.to_string()))
    }
}

impl Trainer for ExternalTrainer {
    fn reset(&mut self) -> Result<()> {
        self.process = None;
        self.current = None;
        self.process = Some(self.start()?);
        let zeros = vec![0; self.train.len()];
        self.current = Some(self.exchange(0, &zeros)?);
        Ok(())
    }

    fn step(&mut self, batch: &Batch) -> Result<()> {
        if batch.counts.len() != self.train.len() {
            return Err(Error::DimensionMismatch {
                expected: self.train.len(),
                got: batch.counts.len(),
            });
        }
        let state = self.exchange(batch.round, &batch.counts)?;
        self.current = Some(state);
        Ok(())
    }

    fn observe(&mut self) -> Result<LossState> {
        self.current
            .clone()
            .ok_or_else(|| Error::Trainer("no observation available".into()))
    }

    fn snapshot(&self) -> Result<Snapshot> {
        Err(Error::Unsupported("snapshot"))
    }

    fn restore(&mut self, _snapshot: &Snapshot) -> Result<()> {
        Err(Error::Unsupported("restore"))
    }
}
