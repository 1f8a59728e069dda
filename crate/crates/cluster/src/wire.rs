//! Binary framing for the socket transport. The byte layout is documented in
//! `docs/wire-format.md`.

use crate::message::{DeltaItem, Envelope, Message, MessageKind};
use ddi_core::{CandidateSet, CellId, Change, Circle, Coverage, ObjectId, Point, QueryId, WorkerId};
use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use thiserror::Error;

pub const WIRE_VERSION: u8 = 1;
/// Frames larger than this are rejected on read.
pub const MAX_FRAME: u32 = 64 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame ended early")]
    Truncated,
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("unknown message kind tag {0}")]
    UnknownKind(u8),
    #[error("invalid {what} tag {tag}")]
    BadTag { what: &'static str, tag: u8 },
    #[error("invalid circle in frame")]
    BadCircle,
    #[error("{0} bytes left after the payload")]
    Trailing(usize),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn point(&mut self, p: &Point) {
        self.f64(p.x);
        self.f64(p.y);
    }
    fn opt_point(&mut self, p: &Option<Point>) {
        match p {
            None => self.u8(0),
            Some(p) => {
                self.u8(1);
                self.point(p);
            }
        }
    }
    fn circle(&mut self, c: &Circle) {
        self.point(&c.center);
        self.f64(c.radius);
    }
    fn cell(&mut self, c: &CellId) {
        self.u32(c.row);
        self.u32(c.col);
    }
    fn cells(&mut self, cells: &BTreeSet<CellId>) {
        self.u32(cells.len() as u32);
        for c in cells {
            self.cell(c);
        }
    }
    fn ids(&mut self, ids: &[ObjectId]) {
        self.u32(ids.len() as u32);
        for o in ids {
            self.u64(o.0);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn point(&mut self) -> Result<Point, WireError> {
        Ok(Point::new(self.f64()?, self.f64()?))
    }
    fn opt_point(&mut self) -> Result<Option<Point>, WireError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.point()?)),
            tag => Err(WireError::BadTag { what: "option", tag }),
        }
    }
    fn circle(&mut self) -> Result<Circle, WireError> {
        let center = self.point()?;
        let r = self.f64()?;
        Circle::try_new(center, r).ok_or(WireError::BadCircle)
    }
    fn cell(&mut self) -> Result<CellId, WireError> {
        Ok(CellId::new(self.u32()?, self.u32()?))
    }
    /// Element count, checked against the bytes left so that a corrupt
    /// count cannot trigger a huge allocation.
    fn count(&mut self, elem_size: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() {
            return Err(WireError::Truncated);
        }
        Ok(n)
    }
    fn cells(&mut self) -> Result<BTreeSet<CellId>, WireError> {
        let n = self.count(8)?;
        (0..n).map(|_| self.cell()).collect()
    }
    fn ids(&mut self) -> Result<Vec<ObjectId>, WireError> {
        let n = self.count(8)?;
        (0..n).map(|_| self.u64().map(ObjectId)).collect()
    }
    fn coverage(&mut self) -> Result<Coverage, WireError> {
        let tag = self.u8()?;
        Coverage::from_tag(tag).ok_or(WireError::BadTag { what: "coverage", tag })
    }
}

fn change_tag(c: Change) -> u8 {
    match c {
        Change::Enter => 0,
        Change::Leave => 1,
    }
}

/// Serializes an envelope as one frame, length prefix included.
pub fn encode(env: &Envelope) -> Vec<u8> {
    let mut w = Writer(vec![0; 4]);
    w.u8(WIRE_VERSION);
    w.u8(env.message.kind().tag());
    w.u64(env.seq);
    w.u32(env.from.0);
    w.u32(env.to.0);
    match &env.message {
        Message::ObjectUpdate { object, old, new } => {
            w.u64(object.0);
            w.opt_point(old);
            w.opt_point(new);
        }
        Message::QueryRegister {
            query,
            circle,
            t_end,
            epoch,
            gr,
        } => {
            w.u64(query.0);
            w.circle(circle);
            w.u64(*t_end);
            w.u32(*epoch);
            w.cells(&gr.full);
            w.cells(&gr.partial);
        }
        Message::QueryMove { query, circle, epoch, gr } => {
            w.u64(query.0);
            w.circle(circle);
            w.u32(*epoch);
            w.cells(&gr.full);
            w.cells(&gr.partial);
        }
        Message::CellSearch {
            query,
            query_worker,
            part,
            epoch,
            circle,
            old_class,
            new_class,
        } => {
            w.u64(query.0);
            w.u32(query_worker.0);
            w.cell(part);
            w.u32(*epoch);
            w.circle(circle);
            w.u8(old_class.tag());
            w.u8(new_class.tag());
        }
        Message::PartialResult {
            query,
            part,
            epoch,
            clear,
            removed,
            added,
        } => {
            w.u64(query.0);
            w.cell(part);
            w.u32(*epoch);
            w.u8(u8::from(*clear));
            w.ids(removed);
            w.ids(added);
        }
        Message::ResultDelta { part, items } => {
            w.cell(part);
            w.u32(items.len() as u32);
            for it in items {
                w.u64(it.query.0);
                w.u32(it.epoch);
                w.u64(it.object.0);
                w.u8(change_tag(it.change));
            }
        }
        Message::QueryExpire { query } => w.u64(query.0),
        Message::TickBarrier { tick } => w.u64(*tick),
    }
    let len = (w.0.len() - 4) as u32;
    w.0[..4].copy_from_slice(&len.to_be_bytes());
    w.0
}

/// Parses a frame body (the bytes after the length prefix).
pub fn decode(body: &[u8]) -> Result<Envelope, WireError> {
    let mut r = Reader { buf: body };
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(WireError::Version(version));
    }
    let tag = r.u8()?;
    let kind = MessageKind::from_tag(tag).ok_or(WireError::UnknownKind(tag))?;
    let seq = r.u64()?;
    let from = WorkerId(r.u32()?);
    let to = WorkerId(r.u32()?);
    let message = match kind {
        MessageKind::ObjectUpdate => Message::ObjectUpdate {
            object: ObjectId(r.u64()?),
            old: r.opt_point()?,
            new: r.opt_point()?,
        },
        MessageKind::QueryRegister => Message::QueryRegister {
            query: QueryId(r.u64()?),
            circle: r.circle()?,
            t_end: r.u64()?,
            epoch: r.u32()?,
            gr: CandidateSet {
                full: r.cells()?,
                partial: r.cells()?,
            },
        },
        MessageKind::QueryMove => Message::QueryMove {
            query: QueryId(r.u64()?),
            circle: r.circle()?,
            epoch: r.u32()?,
            gr: CandidateSet {
                full: r.cells()?,
                partial: r.cells()?,
            },
        },
        MessageKind::CellSearch => Message::CellSearch {
            query: QueryId(r.u64()?),
            query_worker: WorkerId(r.u32()?),
            part: r.cell()?,
            epoch: r.u32()?,
            circle: r.circle()?,
            old_class: r.coverage()?,
            new_class: r.coverage()?,
        },
        MessageKind::PartialResult => Message::PartialResult {
            query: QueryId(r.u64()?),
            part: r.cell()?,
            epoch: r.u32()?,
            clear: match r.u8()? {
                0 => false,
                1 => true,
                tag => return Err(WireError::BadTag { what: "bool", tag }),
            },
            removed: r.ids()?,
            added: r.ids()?,
        },
        MessageKind::ResultDelta => {
            let part = r.cell()?;
            let n = r.count(21)?;
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                items.push(DeltaItem {
                    query: QueryId(r.u64()?),
                    epoch: r.u32()?,
                    object: ObjectId(r.u64()?),
                    change: match r.u8()? {
                        0 => Change::Enter,
                        1 => Change::Leave,
                        tag => return Err(WireError::BadTag { what: "change", tag }),
                    },
                });
            }
            Message::ResultDelta { part, items }
        }
        MessageKind::QueryExpire => Message::QueryExpire {
            query: QueryId(r.u64()?),
        },
        MessageKind::TickBarrier => Message::TickBarrier { tick: r.u64()? },
    };
    if !r.buf.is_empty() {
        return Err(WireError::Trailing(r.buf.len()));
    }
    Ok(Envelope { from, to, seq, message })
}

pub fn write_frame(w: &mut impl Write, env: &Envelope) -> Result<(), WireError> {
    w.write_all(&encode(env))?;
    Ok(())
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream between
/// frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Envelope>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => WireError::Io(e),
    })?;
    decode(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(message: Message) -> Envelope {
        Envelope {
            from: WorkerId(3),
            to: WorkerId(7),
            seq: 42,
            message,
        }
    }

    fn samples() -> Vec<Message> {
        let c = Circle::new(Point::new(0.25, 0.75), 0.125);
        let mut gr = CandidateSet::default();
        gr.full.insert(CellId::new(1, 2));
        gr.partial.insert(CellId::new(3, 4));
        gr.partial.insert(CellId::new(3, 5));
        vec![
            Message::ObjectUpdate {
                object: ObjectId(9),
                old: None,
                new: Some(Point::new(0.1, 0.2)),
            },
            Message::ObjectUpdate {
                object: ObjectId(9),
                old: Some(Point::new(0.1, 0.2)),
                new: None,
            },
            Message::QueryRegister {
                query: QueryId(5),
                circle: c,
                t_end: 77,
                epoch: 1,
                gr: gr.clone(),
            },
            Message::QueryMove {
                query: QueryId(5),
                circle: c,
                epoch: 2,
                gr,
            },
            Message::CellSearch {
                query: QueryId(5),
                query_worker: WorkerId(8),
                part: CellId::new(3, 4),
                epoch: 2,
                circle: c,
                old_class: Coverage::Full,
                new_class: Coverage::Partial,
            },
            Message::PartialResult {
                query: QueryId(5),
                part: CellId::new(3, 4),
                epoch: 2,
                clear: true,
                removed: vec![],
                added: vec![ObjectId(1), ObjectId(u64::MAX)],
            },
            Message::ResultDelta {
                part: CellId::new(0, 0),
                items: vec![DeltaItem {
                    query: QueryId(5),
                    epoch: 3,
                    object: ObjectId(11),
                    change: Change::Leave,
                }],
            },
            Message::QueryExpire { query: QueryId(5) },
            Message::TickBarrier { tick: 12 },
        ]
    }

    #[test]
    fn every_kind_round_trips() {
        for m in samples() {
            let e = env(m);
            let frame = encode(&e);
            assert_eq!(u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize, frame.len() - 4);
            assert_eq!(decode(&frame[4..]).unwrap(), e);
            let mut cursor = std::io::Cursor::new(frame);
            assert_eq!(read_frame(&mut cursor).unwrap(), Some(e));
            assert!(read_frame(&mut cursor).unwrap().is_none());
        }
    }

    #[test]
    fn barrier_layout_matches_the_documentation() {
        let frame = encode(&env(Message::TickBarrier { tick: 0x0102 }));
        let mut want = vec![0, 0, 0, 26, 1, 8];
        want.extend_from_slice(&42u64.to_le_bytes());
        want.extend_from_slice(&3u32.to_le_bytes());
        want.extend_from_slice(&7u32.to_le_bytes());
        want.extend_from_slice(&0x0102u64.to_le_bytes());
        assert_eq!(frame, want);
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let frame = encode(&env(Message::QueryExpire { query: QueryId(1) }));
        for cut in 0..frame.len() - 4 {
            assert!(decode(&frame[4..4 + cut]).is_err(), "cut {cut}");
        }
        let mut bad = frame[4..].to_vec();
        bad[0] = 2;
        assert!(matches!(decode(&bad), Err(WireError::Version(2))));
        bad[0] = 1;
        bad[1] = 99;
        assert!(matches!(decode(&bad), Err(WireError::UnknownKind(99))));
        let mut long = frame[4..].to_vec();
        long.push(0);
        assert!(matches!(decode(&long), Err(WireError::Trailing(1))));
        let huge = (MAX_FRAME + 1).to_be_bytes();
        assert!(matches!(read_frame(&mut &huge[..]), Err(WireError::TooLarge(_))));
    }

    proptest::proptest! {
        #[test]
        fn partial_results_round_trip(
            q in proptest::prelude::any::<u64>(),
            ids in proptest::collection::vec(proptest::prelude::any::<u64>(), 0..50),
            clear in proptest::prelude::any::<bool>(),
            epoch in proptest::prelude::any::<u32>(),
        ) {
            let e = env(Message::PartialResult {
                query: QueryId(q),
                part: CellId::new(epoch % 100, epoch % 7),
                epoch,
                clear,
                removed: ids.iter().rev().map(|i| ObjectId(*i)).collect(),
                added: ids.iter().map(|i| ObjectId(*i)).collect(),
            });
            proptest::prop_assert_eq!(decode(&encode(&e)[4..]).unwrap(), e);
        }
    }
}
