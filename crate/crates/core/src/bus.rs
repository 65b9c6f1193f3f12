//! In-process message bus with per-agent FIFO mailboxes and an append-only
//! transcript.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::Role;
use crate::telemetry::Tick;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent `{0}` has terminated")]
    DeadRecipient(String),
    #[error("transcript i/o: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipient {
    Agent(String),
    Broadcast,
}

impl fmt::Display for Recipient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Agent(a) => f.write_str(a),
            Self::Broadcast => f.write_str("BROADCAST"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub sender: String,
    pub recipient: Recipient,
    /// Sender's role at send time, e.g. `[CD]`.
    pub role_tag: String,
    pub body: String,
    pub tick: Tick,
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} -> {}: {}", self.role_tag, self.sender, self.recipient, self.body)
    }
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TranscriptRecord {
    /// Sent and enqueued for `to`.
    Message { message: Message, to: Vec<String> },
    Drain { agent: String, ids: Vec<u64>, tick: Tick },
    /// Still queued when the recipient terminated.
    Undelivered { agent: String, ids: Vec<u64>, tick: Tick },
}

#[derive(Debug, Default)]
pub struct Bus {
    next_id: u64,
    live: BTreeMap<String, Role>,
    dead: BTreeMap<String, Role>,
    mailboxes: BTreeMap<String, VecDeque<Message>>,
    transcript: Vec<TranscriptRecord>,
    sink: Option<std::fs::File>,
}

impl Bus {
    pub fn new() -> Self {
        Self { next_id: 1, ..Self::default() }
    }

    /// Also appends every transcript record to `path` as a JSON line.
    pub fn with_transcript_file(path: &Path) -> Result<Self, BusError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BusError::Storage(e.to_string()))?;
        Ok(Self { sink: Some(file), ..Self::new() })
    }

    pub fn register(&mut self, agent: &str, role: Role) {
        self.live.insert(agent.to_string(), role);
        self.mailboxes.entry(agent.to_string()).or_default();
    }

    /// Marks the agent dead; anything left in its mailbox is recorded as undelivered.
    pub fn retire(&mut self, agent: &str, tick: Tick) -> Result<Vec<Message>, BusError> {
        let role = self.live.remove(agent).ok_or_else(|| BusError::UnknownAgent(agent.to_string()))?;
        self.dead.insert(agent.to_string(), role);
        let left: Vec<Message> = self.mailboxes.remove(agent).unwrap_or_default().into();
        if !left.is_empty() {
            let ids = left.iter().map(|m| m.id).collect();
            self.record(TranscriptRecord::Undelivered { agent: agent.to_string(), ids, tick })?;
        }
        Ok(left)
    }

    pub fn is_live(&self, agent: &str) -> bool {
        self.live.contains_key(agent)
    }

    pub fn live_agents(&self) -> impl Iterator<Item = &String> {
        self.live.keys()
    }

    fn record(&mut self, r: TranscriptRecord) -> Result<(), BusError> {
        if let Some(f) = self.sink.as_mut() {
            let line = serde_json::to_string(&r).map_err(|e| BusError::Storage(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| BusError::Storage(e.to_string()))?;
        }
        self.transcript.push(r);
        Ok(())
    }

    pub fn send(&mut self, sender: &str, recipient: Recipient, body: &str, tick: Tick) -> Result<Message, BusError> {
        let role = *self.live.get(sender).ok_or_else(|| BusError::UnknownAgent(sender.to_string()))?;
        let to: Vec<String> = match &recipient {
            Recipient::Broadcast => self.live.keys().filter(|a| *a != sender).cloned().collect(),
            Recipient::Agent(a) if self.live.contains_key(a) => vec![a.clone()],
            Recipient::Agent(a) if self.dead.contains_key(a) => return Err(BusError::DeadRecipient(a.clone())),
            Recipient::Agent(a) => return Err(BusError::UnknownAgent(a.clone())),
        };
        let message = Message {
            id: self.next_id,
            sender: sender.to_string(),
            recipient,
            role_tag: format!("[{role}]"),
            body: body.to_string(),
            tick,
        };
        self.next_id += 1;
        for a in &to {
            self.mailboxes.get_mut(a).unwrap().push_back(message.clone());
        }
        self.record(TranscriptRecord::Message { message: message.clone(), to })?;
        Ok(message)
    }

    pub fn drain(&mut self, agent: &str, tick: Tick) -> Result<Vec<Message>, BusError> {
        if !self.live.contains_key(agent) {
            return Err(BusError::UnknownAgent(agent.to_string()));
        }
        let msgs: Vec<Message> = self.mailboxes.get_mut(agent).unwrap().drain(..).collect();
        if !msgs.is_empty() {
            let ids = msgs.iter().map(|m| m.id).collect();
            self.record(TranscriptRecord::Drain { agent: agent.to_string(), ids, tick })?;
        }
        Ok(msgs)
    }

    pub fn pending(&self, agent: &str) -> usize {
        self.mailboxes.get(agent).map_or(0, VecDeque::len)
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.transcript.iter().filter_map(|r| match r {
            TranscriptRecord::Message { message, .. } => Some(message),
            _ => None,
        })
    }
}

/// Mailbox contents (message ids, in order) of every agent after all records
/// stamped at or before `tick` are applied.
pub fn mailboxes_at(records: &[TranscriptRecord], tick: Tick) -> BTreeMap<String, Vec<u64>> {
    let mut boxes: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for r in records {
        match r {
            TranscriptRecord::Message { message, to } if message.tick <= tick => {
                for a in to {
                    boxes.entry(a.clone()).or_default().push(message.id);
                }
            }
            TranscriptRecord::Drain { agent, ids, tick: t } | TranscriptRecord::Undelivered { agent, ids, tick: t }
                if *t <= tick =>
            {
                if let Some(b) = boxes.get_mut(agent) {
                    b.retain(|id| !ids.contains(id));
                }
            }
            _ => {}
        }
    }
    boxes
}

pub fn read_transcript(text: &str) -> Result<Vec<TranscriptRecord>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
