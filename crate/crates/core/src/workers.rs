//! Worker identifiers and worker sets.
//!
//! Workers are indexed from 0 inside the library. Everything that leaves the
//! library (JSON, CSV, `Display`) uses 1-based ids `U_1 .. U_K`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest supported cluster size.
pub const MAX_WORKERS: usize = 128;

/// A set of workers, stored as a 128-bit mask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkerSet(u128);

impl WorkerSet {
    pub const EMPTY: WorkerSet = WorkerSet(0);

    /// `{0, .., n-1}`.
    pub fn first(n: usize) -> Self {
        assert!(n <= MAX_WORKERS);
        if n == MAX_WORKERS {
            WorkerSet(u128::MAX)
        } else {
            WorkerSet((1u128 << n) - 1)
        }
    }

    pub fn from_bits(bits: u128) -> Self {
        WorkerSet(bits)
    }

    pub fn bits(self) -> u128 {
        self.0
    }

    /// Builds a set from 1-based worker ids.
    pub fn from_one_based(ids: &[usize]) -> Option<Self> {
        let mut set = WorkerSet::EMPTY;
        for &id in ids {
            if id == 0 || id > MAX_WORKERS {
                return None;
            }
            set.insert(id - 1);
        }
        Some(set)
    }

    pub fn insert(&mut self, worker: usize) {
        self.0 |= 1u128 << worker;
    }

    pub fn remove(&mut self, worker: usize) {
        self.0 &= !(1u128 << worker);
    }

    pub fn with(mut self, worker: usize) -> Self {
        self.insert(worker);
        self
    }

    pub fn contains(self, worker: usize) -> bool {
        worker < MAX_WORKERS && self.0 >> worker & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        WorkerSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        WorkerSet(self.0 & other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        WorkerSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: Self) -> bool {
        self.0 & other.0 == 0
    }

    /// Lowest member, if any.
    pub fn min(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Members in ascending order (0-based).
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let next = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(next)
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Members as 1-based ids.
    pub fn to_one_based(self) -> Vec<usize> {
        self.iter().map(|w| w + 1).collect()
    }
}

impl FromIterator<usize> for WorkerSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut set = WorkerSet::EMPTY;
        for w in iter {
            set.insert(w);
        }
        set
    }
}

impl fmt::Debug for WorkerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for WorkerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, w) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "U{}", w + 1)?;
        }
        f.write_str("}")
    }
}

impl Serialize for WorkerSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_one_based().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for WorkerSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ids = Vec::<usize>::deserialize(deserializer)?;
        WorkerSet::from_one_based(&ids).ok_or_else(|| {
            serde::de::Error::custom(format!("worker ids must lie in 1..={MAX_WORKERS}"))
        })
    }
}
