//! Distributed execution of continuous range queries: an entrance node
//! partitions object updates and queries over index workers, and query
//! workers assemble results from the partial answers.
//!
//! Nodes are state machines ([`node`]) driven by either an in-process
//! network ([`transport::Loopback`]) or TCP on localhost ([`socket`]).

pub mod cluster;
pub mod layout;
pub mod message;
pub mod node;
pub mod routing;
pub mod socket;
pub mod transport;
pub mod wire;

pub use cluster::{hash_results, Cluster, ClusterConfig, ClusterError, TickReport};
pub use layout::{ClusterMode, Layout};
pub use message::{Envelope, Message, MessageKind, DRIVER, ENTRANCE};
pub use node::{Entrance, IndexWorker, Node, NodeError, QueryWorker};
pub use routing::{jaccard, RoutingTable};
pub use transport::{Loopback, MessageCounts, Schedule, TransportError};
