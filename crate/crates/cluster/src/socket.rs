//! TCP transport on localhost: one thread per node, one connection per
//! directed edge, frames as in `docs/wire-format.md`.

use crate::message::{Envelope, Message, DRIVER};
use crate::node::{Node, NodeError, Outbox};
use crate::transport::{MessageCounts, TransportError};
use crate::wire;
use ddi_core::{Tick, WorkerId};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufWriter, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Default)]
struct Shared {
    counts: Mutex<MessageCounts>,
    errors: Mutex<Vec<(WorkerId, NodeError)>>,
    failures: Mutex<Vec<(WorkerId, TransportError)>>,
    shutdown: AtomicBool,
}

/// Outgoing connections of one node, opened on first use.
struct Links {
    from: WorkerId,
    addrs: Arc<BTreeMap<WorkerId, SocketAddr>>,
    streams: HashMap<WorkerId, BufWriter<TcpStream>>,
    seq: HashMap<WorkerId, u64>,
}

impl Links {
    fn new(from: WorkerId, addrs: Arc<BTreeMap<WorkerId, SocketAddr>>) -> Self {
        Links {
            from,
            addrs,
            streams: HashMap::new(),
            seq: HashMap::new(),
        }
    }

    fn send(&mut self, to: WorkerId, message: Message, counts: &Mutex<MessageCounts>) -> Result<(), TransportError> {
        let stream = match self.streams.entry(to) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let addr = self.addrs.get(&to).ok_or(TransportError::UnknownNode(to))?;
                let s = TcpStream::connect(addr)?;
                s.set_nodelay(true)?;
                e.insert(BufWriter::new(s))
            }
        };
        let seq = self.seq.entry(to).or_insert(0);
        *seq += 1;
        let env = Envelope {
            from: self.from,
            to,
            seq: *seq,
            message,
        };
        let frame = wire::encode(&env);
        counts.lock().expect("counts lock").record(env.message.kind(), frame.len());
        stream.write_all(&frame)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        for s in self.streams.values_mut() {
            s.flush()?;
        }
        Ok(())
    }
}

/// Accepts connections for one node and feeds every frame into `tx`.
fn spawn_acceptor(
    id: WorkerId,
    listener: TcpListener,
    tx: Sender<Envelope>,
    shared: Arc<Shared>,
) -> JoinHandle<()> {
    thread::spawn(move || {
        while !shared.shutdown.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let tx = tx.clone();
                    let shared = Arc::clone(&shared);
                    thread::spawn(move || read_loop(id, stream, tx, shared));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => {
                    shared.failures.lock().expect("failures lock").push((id, e.into()));
                    return;
                }
            }
        }
    })
}

fn read_loop(id: WorkerId, stream: TcpStream, tx: Sender<Envelope>, shared: Arc<Shared>) {
    if let Err(e) = stream.set_nonblocking(false) {
        shared.failures.lock().expect("failures lock").push((id, e.into()));
        return;
    }
    let mut r = std::io::BufReader::new(stream);
    loop {
        match wire::read_frame(&mut r) {
            Ok(Some(env)) => {
                if tx.send(env).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                if !shared.shutdown.load(Ordering::Relaxed) {
                    shared.failures.lock().expect("failures lock").push((id, e.into()));
                }
                return;
            }
        }
    }
}

fn node_loop(
    id: WorkerId,
    node: Arc<Mutex<Node>>,
    rx: Receiver<Envelope>,
    mut links: Links,
    shared: Arc<Shared>,
) -> Result<(), TransportError> {
    let mut expected: HashMap<WorkerId, u64> = HashMap::new();
    let mut out = Outbox::new();
    loop {
        let env = match rx.recv_timeout(POLL) {
            Ok(env) => env,
            Err(RecvTimeoutError::Timeout) if shared.shutdown.load(Ordering::Relaxed) => return Ok(()),
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => return Ok(()),
        };
        let want = expected.entry(env.from).or_insert(1);
        if env.seq != *want {
            return Err(TransportError::OutOfOrder {
                from: env.from,
                to: id,
                expected: *want,
                got: env.seq,
            });
        }
        *want += 1;
        let res = node.lock().expect("node lock").handle(env.from, env.message, &mut out);
        if let Err(e) = res {
            shared.errors.lock().expect("errors lock").push((id, e));
        }
        for (to, msg) in out.drain(..) {
            links.send(to, msg, &shared.counts)?;
        }
        links.flush()?;
    }
}

/// Runs every node on its own thread, talking TCP over loopback.
pub struct SocketNet {
    nodes: BTreeMap<WorkerId, Arc<Mutex<Node>>>,
    driver_rx: Receiver<Envelope>,
    driver_links: Option<Links>,
    driver_expected: HashMap<WorkerId, u64>,
    shared: Arc<Shared>,
    threads: Vec<(WorkerId, JoinHandle<Result<(), TransportError>>)>,
    acceptors: Vec<JoinHandle<()>>,
    timeout: Duration,
}

impl SocketNet {
    pub fn start(nodes: BTreeMap<WorkerId, Node>, timeout: Duration) -> Result<Self, TransportError> {
        let shared = Arc::new(Shared::default());
        let mut listeners = BTreeMap::new();
        for id in std::iter::once(DRIVER).chain(nodes.keys().copied()) {
            let l = TcpListener::bind("127.0.0.1:0")?;
            l.set_nonblocking(true)?;
            listeners.insert(id, l);
        }
        let addrs: Arc<BTreeMap<WorkerId, SocketAddr>> = Arc::new(
            listeners
                .iter()
                .map(|(id, l)| Ok((*id, l.local_addr()?)))
                .collect::<Result<_, std::io::Error>>()?,
        );

        let mut acceptors = Vec::new();
        let mut inboxes = BTreeMap::new();
        for (id, l) in listeners {
            let (tx, rx) = mpsc::channel();
            acceptors.push(spawn_acceptor(id, l, tx, Arc::clone(&shared)));
            inboxes.insert(id, rx);
        }
        let driver_rx = inboxes.remove(&DRIVER).expect("driver inbox");

        let mut handles = BTreeMap::new();
        let mut threads = Vec::new();
        for (id, node) in nodes {
            let node = Arc::new(Mutex::new(node));
            handles.insert(id, Arc::clone(&node));
            let rx = inboxes.remove(&id).expect("node inbox");
            let links = Links::new(id, Arc::clone(&addrs));
            let shared = Arc::clone(&shared);
            threads.push((id, thread::spawn(move || node_loop(id, node, rx, links, shared))));
        }
        Ok(SocketNet {
            nodes: handles,
            driver_rx,
            driver_links: Some(Links::new(DRIVER, addrs)),
            driver_expected: HashMap::new(),
            shared,
            threads,
            acceptors,
            timeout,
        })
    }

    pub fn with_node<R>(&self, id: WorkerId, f: impl FnOnce(&Node) -> R) -> Option<R> {
        self.nodes.get(&id).map(|n| f(&n.lock().expect("node lock")))
    }

    pub fn counts(&self) -> MessageCounts {
        *self.shared.counts.lock().expect("counts lock")
    }

    pub fn take_errors(&mut self) -> Vec<(WorkerId, NodeError)> {
        std::mem::take(&mut *self.shared.errors.lock().expect("errors lock"))
    }

    pub fn send(&mut self, to: WorkerId, message: Message) -> Result<(), TransportError> {
        let links = self.driver_links.as_mut().expect("links live until drop");
        links.send(to, message, &self.shared.counts)?;
        links.flush()
    }

    fn check_health(&mut self) -> Result<(), TransportError> {
        if let Some((_, e)) = self.shared.failures.lock().expect("failures lock").pop() {
            return Err(e);
        }
        if let Some(i) = self.threads.iter().position(|(_, h)| h.is_finished()) {
            let (id, h) = self.threads.swap_remove(i);
            return match h.join() {
                Ok(Err(e)) => Err(e),
                _ => Err(TransportError::NodeLost(id)),
            };
        }
        Ok(())
    }

    pub fn run_until_acked(&mut self, tick: Tick, want: usize) -> Result<(), TransportError> {
        let mut acks = 0;
        let mut waited = Duration::ZERO;
        while acks < want {
            match self.driver_rx.recv_timeout(POLL) {
                Ok(env) => {
                    let expected = self.driver_expected.entry(env.from).or_insert(1);
                    if env.seq != *expected {
                        return Err(TransportError::OutOfOrder {
                            from: env.from,
                            to: DRIVER,
                            expected: *expected,
                            got: env.seq,
                        });
                    }
                    *expected += 1;
                    if env.message == (Message::TickBarrier { tick }) {
                        acks += 1;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.check_health()?;
                    waited += POLL;
                    if waited >= self.timeout {
                        return Err(TransportError::Timeout(tick));
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::NodeLost(DRIVER)),
            }
        }
        self.check_health()
    }
}

impl Drop for SocketNet {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Relaxed);
        self.driver_links.take();
        for (_, h) in self.threads.drain(..) {
            let _ = h.join();
        }
        for h in self.acceptors.drain(..) {
            let _ = h.join();
        }
    }
}
