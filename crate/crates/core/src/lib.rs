//! Distributed dynamic index for continuous range queries over moving objects.
//!
//! The domain is divided into a uniform grid; dense cells additionally carry a
//! dynamic M-ary tree. Circular range queries are decomposed into per-cell
//! searches and then maintained incrementally as objects and queries move.

pub mod baselines;
pub mod cell;
pub mod config;
pub mod engine;
pub mod geometry;
pub mod grid;
pub mod ids;
pub mod mtree;
pub mod query;
pub mod workload;

pub use cell::{Cell, CellConfig, CellError, Change, ObjectDelta};
pub use engine::{Engine, EngineConfig, EngineError, IndexMode, ObjectUpdate};
pub use geometry::{classify, Circle, Coverage, Point, Rect};
pub use grid::{CandidateSet, GlobalGridIndex, Grid};
pub use ids::{CellId, ObjectId, QueryId, Tick, WorkerId};
pub use mtree::{Bgi, MTree, Region, SearchStats, SplitConfig};
pub use query::{PartitionedResult, QueryError, QueryMoveDelta, QueryState};
