//! In-process delivery of messages between nodes.

use crate::message::{Envelope, Message, MessageKind, DRIVER};
use crate::node::{Node, NodeError, Outbox};
use crate::wire::{self, WireError};
use ddi_core::{Tick, WorkerId};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("message on {from} -> {to} has seq {got}, expected {expected}")]
    OutOfOrder {
        from: WorkerId,
        to: WorkerId,
        expected: u64,
        got: u64,
    },
    #[error("no node {0}")]
    UnknownNode(WorkerId),
    #[error("network went idle before tick {tick} was acknowledged ({acks} of {want} acks)")]
    Stalled { tick: Tick, acks: usize, want: usize },
    #[error("timed out waiting for tick {0}")]
    Timeout(Tick),
    #[error("node thread {0} died")]
    NodeLost(WorkerId),
}

/// Messages and bytes put on the wire, by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageCounts {
    pub messages: [u64; MessageKind::ALL.len()],
    pub bytes: [u64; MessageKind::ALL.len()],
}

impl MessageCounts {
    pub fn record(&mut self, kind: MessageKind, bytes: usize) {
        let i = usize::from(kind.tag() - 1);
        self.messages[i] += 1;
        self.bytes[i] += bytes as u64;
    }

    pub fn of(&self, kind: MessageKind) -> u64 {
        self.messages[usize::from(kind.tag() - 1)]
    }

    pub fn total(&self) -> u64 {
        self.messages.iter().sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes.iter().sum()
    }

    /// Counts accumulated since `earlier`.
    pub fn since(&self, earlier: &MessageCounts) -> MessageCounts {
        let mut out = *self;
        for i in 0..out.messages.len() {
            out.messages[i] -= earlier.messages[i];
            out.bytes[i] -= earlier.bytes[i];
        }
        out
    }
}

/// Order in which the loopback network delivers queued messages. Both keep
/// each edge FIFO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Global send order.
    Fifo,
    /// A seeded random non-empty edge at every step.
    Random { seed: u64 },
}

type Edge = (WorkerId, WorkerId);

/// Single-threaded network: every node lives in this struct and messages
/// are delivered one at a time. Each message is encoded and decoded on the
/// way so byte counts are real and the codec is exercised.
#[derive(Debug)]
pub struct Loopback {
    nodes: BTreeMap<WorkerId, Node>,
    queues: HashMap<Edge, VecDeque<Envelope>>,
    fifo: VecDeque<Edge>,
    active: Vec<Edge>,
    rng: Option<ChaCha8Rng>,
    next_seq: HashMap<Edge, u64>,
    expected_seq: HashMap<Edge, u64>,
    counts: MessageCounts,
    trace: Sha256,
    driver_inbox: VecDeque<Message>,
    errors: Vec<(WorkerId, NodeError)>,
    outbox: Outbox,
}

impl Loopback {
    pub fn new(nodes: BTreeMap<WorkerId, Node>, schedule: Schedule) -> Self {
        Loopback {
            nodes,
            queues: HashMap::new(),
            fifo: VecDeque::new(),
            active: Vec::new(),
            rng: match schedule {
                Schedule::Fifo => None,
                Schedule::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            },
            next_seq: HashMap::new(),
            expected_seq: HashMap::new(),
            counts: MessageCounts::default(),
            trace: Sha256::new(),
            driver_inbox: VecDeque::new(),
            errors: Vec::new(),
            outbox: Outbox::new(),
        }
    }

    pub fn node(&self, id: WorkerId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&WorkerId, &Node)> {
        self.nodes.iter()
    }

    pub fn counts(&self) -> MessageCounts {
        self.counts
    }

    /// Digest of every delivery so far: edge, seq and kind, in order.
    pub fn trace_hash(&self) -> [u8; 32] {
        self.trace.clone().finalize().into()
    }

    pub fn take_errors(&mut self) -> Vec<(WorkerId, NodeError)> {
        std::mem::take(&mut self.errors)
    }

    pub fn send(&mut self, from: WorkerId, to: WorkerId, message: Message) -> Result<(), TransportError> {
        if to != DRIVER && !self.nodes.contains_key(&to) {
            return Err(TransportError::UnknownNode(to));
        }
        let seq = self.next_seq.entry((from, to)).or_insert(0);
        *seq += 1;
        let env = Envelope {
            from,
            to,
            seq: *seq,
            message,
        };
        let frame = wire::encode(&env);
        self.counts.record(env.message.kind(), frame.len());
        let env = wire::decode(&frame[4..])?;
        let q = self.queues.entry((from, to)).or_default();
        if q.is_empty() && self.rng.is_some() {
            self.active.push((from, to));
        }
        q.push_back(env);
        if self.rng.is_none() {
            self.fifo.push_back((from, to));
        }
        Ok(())
    }

    fn next_edge(&mut self) -> Option<Edge> {
        match &mut self.rng {
            None => self.fifo.pop_front(),
            Some(rng) => {
                if self.active.is_empty() {
                    return None;
                }
                let i = rng.gen_range(0..self.active.len());
                let edge = self.active[i];
                if self.queues[&edge].len() == 1 {
                    self.active.swap_remove(i);
                }
                Some(edge)
            }
        }
    }

    /// Delivers one message. Returns false when nothing is queued.
    pub fn step(&mut self) -> Result<bool, TransportError> {
        let Some(edge) = self.next_edge() else {
            return Ok(false);
        };
        let env = self
            .queues
            .get_mut(&edge)
            .and_then(VecDeque::pop_front)
            .expect("scheduled edges are non-empty");
        let expected = self.expected_seq.entry(edge).or_insert(1);
        if env.seq != *expected {
            return Err(TransportError::OutOfOrder {
                from: edge.0,
                to: edge.1,
                expected: *expected,
                got: env.seq,
            });
        }
        *expected += 1;
        self.trace.update(env.from.0.to_le_bytes());
        self.trace.update(env.to.0.to_le_bytes());
        self.trace.update(env.seq.to_le_bytes());
        self.trace.update([env.message.kind().tag()]);

        if env.to == DRIVER {
            self.driver_inbox.push_back(env.message);
            return Ok(true);
        }
        let node = self.nodes.get_mut(&env.to).ok_or(TransportError::UnknownNode(env.to))?;
        let mut out = std::mem::take(&mut self.outbox);
        if let Err(e) = node.handle(env.from, env.message, &mut out) {
            self.errors.push((env.to, e));
        }
        for (to, msg) in out.drain(..) {
            self.send(env.to, to, msg)?;
        }
        self.outbox = out;
        Ok(true)
    }

    /// Delivers messages until the driver holds `want` barrier acks for
    /// `tick`.
    pub fn run_until_acked(&mut self, tick: Tick, want: usize) -> Result<(), TransportError> {
        let mut acks = 0;
        loop {
            while let Some(m) = self.driver_inbox.pop_front() {
                if m == (Message::TickBarrier { tick }) {
                    acks += 1;
                }
            }
            if acks >= want {
                return Ok(());
            }
            if !self.step()? {
                return Err(TransportError::Stalled { tick, acks, want });
            }
        }
    }
}
