use std::fmt;

use serde::{Deserialize, Serialize};

use crate::names::{ForwardingHint, TaskParameters};

/// Simulated time in integer microseconds.
pub type SimTime = u64;

pub const US_PER_MS: u64 = 1_000;

pub fn ms_to_us(ms: f64) -> u64 {
    (ms * US_PER_MS as f64).round().max(0.0) as u64
}

pub fn us_to_ms(us: u64) -> f64 {
    us as f64 / US_PER_MS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceId(pub u32);

/// Face connecting a forwarder to the application (EN or device) on the same node.
pub const APP_FACE: FaceId = FaceId(0);

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interest {
    pub name: String,
    pub hint: Option<ForwardingHint>,
    pub params: Option<TaskParameters>,
    /// Application payload pushed inside the Interest (pushed results).
    pub payload: Option<Payload>,
    pub nonce: u64,
    /// Application-level retry; re-forwarded even when a PIT entry exists.
    pub retransmission: bool,
}

impl Interest {
    pub fn new(name: impl Into<String>, nonce: u64) -> Self {
        Self {
            name: name.into(),
            hint: None,
            params: None,
            payload: None,
            nonce,
            retransmission: false,
        }
    }

    pub fn with_params(mut self, params: TaskParameters) -> Self {
        self.params = Some(params);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultKind {
    /// Served from the reuse store of an EN.
    Reused,
    /// Produced by an execution from scratch.
    Executed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    /// Execution output; in this model the ground-truth label of the executed input.
    pub label: u32,
    pub kind: ResultKind,
    /// Nonce of the task whose execution produced the result.
    pub executed_for: u64,
    pub similarity: Option<f64>,
    pub en_prefix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Result(TaskResult),
    /// Time To Completion estimate plus the prefix of the executing EN.
    Ttc { ttc_us: u64, en_prefix: String },
    Negative { reason: String },
    InputSegment { segment: u32, total: u32, bytes: Vec<u8> },
    Ack,
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Result(_) => "result",
            Payload::Ttc { .. } => "ttc",
            Payload::Negative { .. } => "negative",
            Payload::InputSegment { .. } => "segment",
            Payload::Ack => "ack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Data {
    pub name: String,
    pub payload: Payload,
    /// Node whose Content Store answered, if the Data came from a cache.
    pub served_from_cs: Option<NodeId>,
}

impl Data {
    pub fn new(name: impl Into<String>, payload: Payload) -> Self {
        Self {
            name: name.into(),
            payload,
            served_from_cs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Packet {
    Interest(Interest),
    Data(Data),
}

impl Packet {
    pub fn name(&self) -> &str {
        match self {
            Packet::Interest(i) => &i.name,
            Packet::Data(d) => &d.name,
        }
    }
}

/// Something an application (EN or device) asks the simulator to do.
#[derive(Debug, Clone, PartialEq)]
pub enum AppAction<T> {
    /// Hand `packet` to the co-located forwarder on the app face after `delay_us`.
    Send { delay_us: u64, packet: Packet },
    Timer { delay_us: u64, timer: T },
}
