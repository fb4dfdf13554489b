//! Redundant assignment of batch files to workers.
//!
//! The subset assignment maps each `r`-subset of the `K` workers to one file,
//! so there are `f = C(K, r)` files, each worker holds `l = C(K-1, r-1)` of
//! them, and every pair of workers shares `C(K-2, r-2)`. File ids are colex
//! ranks of the worker subsets.
//!
//! [`GroupPlacement`] is the disjoint-group layout used by the comparison
//! schemes (`K/r` groups, or one file per worker when `r = 1`).

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::combinatorics::{binomial, for_each_subset};
use crate::error::{invalid, Error, Result};
use crate::workers::{WorkerSet, MAX_WORKERS};

/// Upper bound on the number of files an [`Assignment`] will materialize.
pub const MAX_ASSIGNMENT_FILES: u64 = 2_000_000;

/// Cluster size, redundancy and adversary budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ClusterParams {
    workers: usize,
    redundancy: usize,
    adversaries: usize,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    #[serde(rename = "K")]
    workers: usize,
    r: usize,
    q: usize,
}

impl TryFrom<RawParams> for ClusterParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ClusterParams::new(raw.workers, raw.r, raw.q)
    }
}

impl From<ClusterParams> for RawParams {
    fn from(p: ClusterParams) -> Self {
        RawParams {
            workers: p.workers,
            r: p.redundancy,
            q: p.adversaries,
        }
    }
}

impl ClusterParams {
    /// Validates `K`, `r`, `q`: `r` odd with `3 <= r <= K`, and `2q < K`.
    pub fn new(workers: usize, redundancy: usize, adversaries: usize) -> Result<Self> {
        if workers == 0 || workers > MAX_WORKERS {
            return Err(Error::InvalidParams(format!(
                "K = {workers} must lie in 1..={MAX_WORKERS}"
            )));
        }
        if redundancy < 3 || redundancy % 2 == 0 {
            return Err(Error::InvalidParams(format!(
                "r = {redundancy} must be an odd integer >= 3"
            )));
        }
        if redundancy > workers {
            return Err(Error::InvalidParams(format!(
                "r = {redundancy} exceeds K = {workers}"
            )));
        }
        if 2 * adversaries >= workers {
            return Err(Error::InvalidParams(format!(
                "q = {adversaries} violates the adversary bound q < K/2 (K = {workers})"
            )));
        }
        Ok(ClusterParams {
            workers,
            redundancy,
            adversaries,
        })
    }

    /// `K`.
    pub fn workers(&self) -> usize {
        self.workers
    }

    /// `r`.
    pub fn redundancy(&self) -> usize {
        self.redundancy
    }

    /// `q`.
    pub fn adversaries(&self) -> usize {
        self.adversaries
    }

    /// `r' = (r + 1) / 2`.
    pub fn majority(&self) -> usize {
        (self.redundancy + 1) / 2
    }

    /// `f = C(K, r)`.
    pub fn files(&self) -> u64 {
        binomial(self.workers as u64, self.redundancy as u64)
    }

    /// `l = C(K-1, r-1)`.
    pub fn load(&self) -> u64 {
        binomial(self.workers as u64 - 1, self.redundancy as u64 - 1)
    }

    /// Files shared by any two workers, `C(K-2, r-2)`.
    pub fn pair_overlap(&self) -> u64 {
        if self.workers < 2 {
            return 0;
        }
        binomial(self.workers as u64 - 2, self.redundancy as u64 - 2)
    }

    pub fn with_adversaries(&self, adversaries: usize) -> Result<Self> {
        ClusterParams::new(self.workers, self.redundancy, adversaries)
    }
}

/// Read-only view of a file-to-worker layout.
pub trait Placement {
    fn worker_count(&self) -> usize;
    fn file_count(&self) -> usize;
    /// Copies per file.
    fn replication(&self) -> usize;
    /// Workers holding `file`, ascending.
    fn workers_of_file(&self, file: usize) -> &[usize];
    /// Files held by `worker`, ascending.
    fn files_of_worker(&self, worker: usize) -> &[usize];

    /// Copies needed for a strict majority.
    fn majority(&self) -> usize {
        self.replication() / 2 + 1
    }

    /// Position of `file` within `files_of_worker(worker)`.
    fn slot(&self, worker: usize, file: usize) -> Option<usize> {
        self.files_of_worker(worker).binary_search(&file).ok()
    }

    fn file_members(&self, file: usize) -> WorkerSet {
        self.workers_of_file(file).iter().copied().collect()
    }
}

/// The subset-based assignment. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StoredAssignment", into = "StoredAssignment")]
pub struct Assignment {
    params: ClusterParams,
    files_of_worker: Vec<Vec<usize>>,
    workers_of_file: Vec<Vec<usize>>,
}

/// On-disk form: only the parameters; adjacency is rebuilt on load.
#[derive(Serialize, Deserialize)]
struct StoredAssignment {
    params: ClusterParams,
}

impl TryFrom<StoredAssignment> for Assignment {
    type Error = Error;

    fn try_from(stored: StoredAssignment) -> Result<Self> {
        build_assignment(stored.params)
    }
}

impl From<Assignment> for StoredAssignment {
    fn from(a: Assignment) -> Self {
        StoredAssignment { params: a.params }
    }
}

/// Builds the assignment for `params`, file `i` going to the `i`-th
/// `r`-subset in colex order.
pub fn build_assignment(params: ClusterParams) -> Result<Assignment> {
    let f = params.files();
    if f > MAX_ASSIGNMENT_FILES {
        return Err(Error::TooLarge(format!(
            "C({}, {}) = {f} files exceeds the {MAX_ASSIGNMENT_FILES}-file limit",
            params.workers(),
            params.redundancy()
        )));
    }
    let mut workers_of_file = Vec::with_capacity(f as usize);
    let mut files_of_worker = vec![Vec::with_capacity(params.load() as usize); params.workers()];
    for_each_subset(params.workers(), params.redundancy(), |subset| {
        let file = workers_of_file.len();
        for &w in subset {
            files_of_worker[w].push(file);
        }
        workers_of_file.push(subset.to_vec());
    });
    Ok(Assignment {
        params,
        files_of_worker,
        workers_of_file,
    })
}

impl Assignment {
    pub fn params(&self) -> ClusterParams {
        self.params
    }

    /// Files held by both workers, ascending.
    pub fn shared_files(&self, a: usize, b: usize) -> Vec<usize> {
        let (xs, ys) = (&self.files_of_worker[a], &self.files_of_worker[b]);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < xs.len() && j < ys.len() {
            match xs[i].cmp(&ys[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(xs[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }
}

impl Placement for Assignment {
    fn worker_count(&self) -> usize {
        self.params.workers()
    }

    fn file_count(&self) -> usize {
        self.workers_of_file.len()
    }

    fn replication(&self) -> usize {
        self.params.redundancy()
    }

    fn workers_of_file(&self, file: usize) -> &[usize] {
        &self.workers_of_file[file]
    }

    fn files_of_worker(&self, worker: usize) -> &[usize] {
        &self.files_of_worker[worker]
    }
}

/// `K/r` disjoint groups of `r` consecutive workers; group `g` is file `g`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPlacement {
    workers: usize,
    group_size: usize,
    members: Vec<Vec<usize>>,
    files: Vec<Vec<usize>>,
}

impl GroupPlacement {
    pub fn new(workers: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || workers == 0 || workers % group_size != 0 {
            return Err(invalid(format!(
                "group size {group_size} does not divide K = {workers}"
            )));
        }
        let groups = workers / group_size;
        let members = (0..groups)
            .map(|g| (g * group_size..(g + 1) * group_size).collect())
            .collect();
        let files = (0..workers).map(|w| vec![w / group_size]).collect();
        Ok(GroupPlacement {
            workers,
            group_size,
            members,
            files,
        })
    }

    /// One file per worker, no redundancy.
    pub fn single(workers: usize) -> Result<Self> {
        GroupPlacement::new(workers, 1)
    }

    pub fn group_of(&self, worker: usize) -> usize {
        worker / self.group_size
    }
}

impl Placement for GroupPlacement {
    fn worker_count(&self) -> usize {
        self.workers
    }

    fn file_count(&self) -> usize {
        self.members.len()
    }

    fn replication(&self) -> usize {
        self.group_size
    }

    fn workers_of_file(&self, file: usize) -> &[usize] {
        &self.members[file]
    }

    fn files_of_worker(&self, worker: usize) -> &[usize] {
        &self.files[worker]
    }
}

/// Splits batch positions `0..b` into `f` contiguous ranges. When `f` does not
/// divide `b`, the first `b mod f` ranges get one extra sample.
pub fn partition_batch(batch: usize, files: usize) -> Result<Vec<Range<usize>>> {
    if files == 0 || batch < files {
        return Err(invalid(format!(
            "batch of {batch} samples cannot fill {files} files"
        )));
    }
    let base = batch / files;
    let extra = batch % files;
    let mut start = 0;
    Ok((0..files)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let range = start..start + len;
            start += len;
            range
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::subset_rank;

    fn params(k: usize, r: usize) -> ClusterParams {
        ClusterParams::new(k, r, 0).unwrap()
    }

    fn check_invariants(a: &Assignment) {
        let p = a.params();
        let k = p.workers();
        assert_eq!(a.file_count() as u64, p.files());
        let total: usize = (0..k).map(|w| a.files_of_worker(w).len()).sum();
        assert_eq!(total as u64, p.files() * p.redundancy() as u64);
        for w in 0..k {
            assert_eq!(a.files_of_worker(w).len() as u64, p.load());
            assert!(a.files_of_worker(w).windows(2).all(|x| x[0] < x[1]));
        }
        for file in 0..a.file_count() {
            let members = a.workers_of_file(file);
            assert_eq!(members.len(), p.redundancy());
            let one_based: Vec<usize> = members.iter().map(|w| w + 1).collect();
            assert_eq!(subset_rank(&one_based, k, p.redundancy()).unwrap(), file as u64);
        }
        for x in 0..k {
            for y in x + 1..k {
                assert_eq!(a.shared_files(x, y).len() as u64, p.pair_overlap());
            }
        }
    }

    #[test]
    fn seven_workers_redundancy_three() {
        let a = build_assignment(params(7, 3)).unwrap();
        assert_eq!(a.file_count(), 35);
        assert_eq!(a.files_of_worker(0).len(), 15);
        assert_eq!(a.shared_files(0, 1).len(), 5);
        assert_eq!(a.workers_of_file(0), &[0, 1, 2]);
        check_invariants(&a);
    }

    #[test]
    fn table_sizes() {
        let a = build_assignment(params(15, 3)).unwrap();
        assert_eq!((a.file_count(), a.files_of_worker(3).len()), (455, 91));
        let p = params(21, 3);
        assert_eq!((p.files(), p.load()), (1330, 190));
        let p = params(24, 3);
        assert_eq!((p.files(), p.load()), (2024, 253));
    }

    #[test]
    fn degenerate_single_file() {
        let a = build_assignment(params(3, 3)).unwrap();
        assert_eq!(a.file_count(), 1);
        for w in 0..3 {
            assert_eq!(a.files_of_worker(w), &[0]);
        }
    }

    #[test]
    fn pair_coverage_exhaustive_up_to_21() {
        for k in 3..=21 {
            for r in [3usize, 5] {
                if r > k || binomial(k as u64, r as u64) > 30_000 {
                    continue;
                }
                check_invariants(&build_assignment(params(k, r)).unwrap());
            }
        }
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(ClusterParams::new(7, 2, 0).is_err());
        assert!(ClusterParams::new(7, 1, 0).is_err());
        assert!(ClusterParams::new(7, 9, 0).is_err());
        assert!(ClusterParams::new(8, 3, 4).is_err());
        assert!(ClusterParams::new(7, 3, 3).is_ok());
        assert!(ClusterParams::new(0, 3, 0).is_err());
        let huge = ClusterParams::new(100, 5, 0).unwrap();
        assert!(matches!(build_assignment(huge), Err(Error::TooLarge(_))));
    }

    #[test]
    fn json_stores_only_params() {
        let a = build_assignment(ClusterParams::new(7, 3, 2).unwrap()).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"params":{"K":7,"r":3,"q":2}}"#);
        let back: Assignment = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<Assignment>(r#"{"params":{"K":7,"r":3,"q":4}}"#).is_err());
    }

    #[test]
    fn batch_partition_examples() {
        let ranges = partition_batch(35, 35).unwrap();
        assert!(ranges.iter().all(|r| r.len() == 1));
        let ranges = partition_batch(14560, 455).unwrap();
        assert!(ranges.iter().all(|r| r.len() == 32));
        let ranges = partition_batch(37, 35).unwrap();
        let sizes: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
        assert_eq!(&sizes[..2], &[2, 2]);
        assert!(sizes[2..].iter().all(|&s| s == 1));
        assert_eq!(sizes.len(), 35);
        assert_eq!(ranges.last().unwrap().end, 37);
        assert!(partition_batch(34, 35).is_err());
    }

    #[test]
    fn group_placement_layout() {
        let g = GroupPlacement::new(15, 3).unwrap();
        assert_eq!(g.file_count(), 5);
        assert_eq!(g.workers_of_file(4), &[12, 13, 14]);
        assert_eq!(g.files_of_worker(7), &[2]);
        assert_eq!(g.majority(), 2);
        assert!(GroupPlacement::new(16, 3).is_err());
        let single = GroupPlacement::single(5).unwrap();
        assert_eq!((single.file_count(), single.majority()), (5, 1));
    }

    proptest::proptest! {
        #[test]
        fn partition_is_balanced_cover(files in 1usize..200, extra in 0usize..500) {
            let batch = files + extra;
            let ranges = partition_batch(batch, files).unwrap();
            proptest::prop_assert_eq!(ranges.len(), files);
            let mut next = 0;
            for r in &ranges {
                proptest::prop_assert_eq!(r.start, next);
                next = r.end;
            }
            proptest::prop_assert_eq!(next, batch);
            let min = ranges.iter().map(|r| r.len()).min().unwrap();
            let max = ranges.iter().map(|r| r.len()).max().unwrap();
            proptest::prop_assert!(max - min <= 1);
        }
    }
}
