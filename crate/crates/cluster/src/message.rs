//! Messages exchanged between the driver and the workers.

use ddi_core::{CandidateSet, Change, Circle, Coverage, ObjectId, Point, QueryId, Tick, WorkerId};
use ddi_core::CellId;

/// The driving client. Workers reply to it only with tick barriers.
pub const DRIVER: WorkerId = WorkerId(0);
pub const ENTRANCE: WorkerId = WorkerId(1);

/// Per-query registration counter. Every register or move of a query bumps
/// it; worker replies carry the epoch they were computed under.
pub type Epoch = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    ObjectUpdate,
    QueryRegister,
    QueryMove,
    CellSearch,
    PartialResult,
    ResultDelta,
    QueryExpire,
    TickBarrier,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::ObjectUpdate,
        MessageKind::QueryRegister,
        MessageKind::QueryMove,
        MessageKind::CellSearch,
        MessageKind::PartialResult,
        MessageKind::ResultDelta,
        MessageKind::QueryExpire,
        MessageKind::TickBarrier,
    ];

    pub fn tag(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::ObjectUpdate => "object_update",
            MessageKind::QueryRegister => "query_register",
            MessageKind::QueryMove => "query_move",
            MessageKind::CellSearch => "cell_search",
            MessageKind::PartialResult => "partial_result",
            MessageKind::ResultDelta => "result_delta",
            MessageKind::QueryExpire => "query_expire",
            MessageKind::TickBarrier => "tick_barrier",
        }
    }
}

/// A membership change for one query, tagged with the epoch under which the
/// sending index worker knew the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaItem {
    pub query: QueryId,
    pub epoch: Epoch,
    pub object: ObjectId,
    pub change: Change,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Driver → entrance, entrance → index workers. Either end may be absent.
    ObjectUpdate {
        object: ObjectId,
        old: Option<Point>,
        new: Option<Point>,
    },
    /// Driver → entrance (epoch 0, empty `gr`), entrance → query worker.
    QueryRegister {
        query: QueryId,
        circle: Circle,
        t_end: Tick,
        epoch: Epoch,
        gr: CandidateSet,
    },
    /// Driver → entrance (epoch 0, empty `gr`), entrance → query worker.
    QueryMove {
        query: QueryId,
        circle: Circle,
        epoch: Epoch,
        gr: CandidateSet,
    },
    /// Entrance → the index worker owning `part`. `old_class` and
    /// `new_class` are the query's coverage of the part before and after.
    CellSearch {
        query: QueryId,
        query_worker: WorkerId,
        part: CellId,
        epoch: Epoch,
        circle: Circle,
        old_class: Coverage,
        new_class: Coverage,
    },
    /// Index worker → query worker, one per cell search. With `clear` the
    /// part's previous contribution is dropped before applying the lists.
    PartialResult {
        query: QueryId,
        part: CellId,
        epoch: Epoch,
        clear: bool,
        removed: Vec<ObjectId>,
        added: Vec<ObjectId>,
    },
    /// Index worker → query worker: changes caused by one object update in
    /// one part.
    ResultDelta { part: CellId, items: Vec<DeltaItem> },
    /// Driver → entrance, entrance → index workers and query worker.
    QueryExpire { query: QueryId },
    /// Ends a tick. Flows driver → entrance → workers, index workers → query
    /// workers, and query workers → driver as the acknowledgement.
    TickBarrier { tick: Tick },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::ObjectUpdate { .. } => MessageKind::ObjectUpdate,
            Message::QueryRegister { .. } => MessageKind::QueryRegister,
            Message::QueryMove { .. } => MessageKind::QueryMove,
            Message::CellSearch { .. } => MessageKind::CellSearch,
            Message::PartialResult { .. } => MessageKind::PartialResult,
            Message::ResultDelta { .. } => MessageKind::ResultDelta,
            Message::QueryExpire { .. } => MessageKind::QueryExpire,
            Message::TickBarrier { .. } => MessageKind::TickBarrier,
        }
    }
}

/// A message in flight on the edge `from → to`. `seq` counts messages on
/// that edge starting from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub from: WorkerId,
    pub to: WorkerId,
    pub seq: u64,
    pub message: Message,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_tags_round_trip() {
        for k in MessageKind::ALL {
            assert_eq!(MessageKind::from_tag(k.tag()), Some(k));
        }
        assert_eq!(MessageKind::from_tag(0), None);
        assert_eq!(MessageKind::from_tag(9), None);
    }
}
