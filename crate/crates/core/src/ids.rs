use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident($inner:ty), $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl From<$inner> for $name {
            fn from(v: $inner) -> Self {
                $name(v)
            }
        }
    };
}

id_newtype!(
    /// Identifier of a moving object.
    ObjectId(u64), "o"
);
id_newtype!(
    /// Identifier of a continuous range query.
    QueryId(u64), "q"
);
id_newtype!(
    /// Identifier of a worker (or the driving client) in the cluster.
    WorkerId(u32), "w"
);

/// Grid cell coordinates: `row` indexes y, `col` indexes x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub row: u32,
    pub col: u32,
}

impl CellId {
    pub const fn new(row: u32, col: u32) -> Self {
        CellId { row, col }
    }

    /// Row-major linear index in an `n`×`n` grid.
    pub fn linear(&self, n: u32) -> usize {
        self.row as usize * n as usize + self.col as usize
    }

    pub fn from_linear(index: usize, n: u32) -> Self {
        CellId {
            row: (index / n as usize) as u32,
            col: (index % n as usize) as u32,
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Discrete update interval index.
pub type Tick = u64;
