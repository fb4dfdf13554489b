//! Agreement graph construction and clique-based adversary detection.
//!
//! Two workers are adjacent iff their returned vectors agree on every file
//! they share. Honest workers always form a clique of size at least `K - q`,
//! so a worker with degree below `K - q - 1` is excluded before the clique
//! search. A unique maximum clique of size at least `K - q` is declared
//! honest; anything else is ambiguous and the caller falls back to robust
//! aggregation.

use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, Placement};
use crate::error::{invalid, Result};
use crate::report::{agrees, WorkerReport};
use crate::workers::WorkerSet;

/// Knobs for vector comparison. Acceptance runs use the default, bit-exact
/// equality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionOptions {
    /// Absolute per-coordinate tolerance; `0` means bit-exact.
    pub tolerance: f64,
}

/// Undirected simple graph on the workers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgreementGraph {
    workers: usize,
    adjacency: Vec<WorkerSet>,
}

impl AgreementGraph {
    pub fn empty(workers: usize) -> Self {
        AgreementGraph {
            workers,
            adjacency: vec![WorkerSet::EMPTY; workers],
        }
    }

    pub fn complete(workers: usize) -> Self {
        let all = WorkerSet::first(workers);
        AgreementGraph {
            workers,
            adjacency: (0..workers).map(|w| all.difference(WorkerSet::EMPTY.with(w))).collect(),
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adjacency[a].insert(b);
            self.adjacency[b].insert(a);
        }
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) {
        self.adjacency[a].remove(b);
        self.adjacency[b].remove(a);
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(b)
    }

    pub fn neighbors(&self, w: usize) -> WorkerSet {
        self.adjacency[w]
    }

    pub fn degree(&self, w: usize) -> usize {
        self.adjacency[w].len()
    }

    pub fn is_clique(&self, set: WorkerSet) -> bool {
        set.iter()
            .all(|w| set.difference(WorkerSet::EMPTY.with(w)).is_subset(self.adjacency[w]))
    }

    /// Edges `(a, b)` with `a < b`, 0-based.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.workers)
            .flat_map(|a| {
                self.adjacency[a]
                    .iter()
                    .filter(move |&b| b > a)
                    .map(move |b| (a, b))
            })
            .collect()
    }

    /// Edge-list dump with 1-based ids.
    pub fn to_edge_list(&self) -> EdgeList {
        EdgeList {
            workers: self.workers,
            edges: self.edges().into_iter().map(|(a, b)| [a + 1, b + 1]).collect(),
        }
    }

    pub fn from_edge_list(list: &EdgeList) -> Result<Self> {
        let mut g = AgreementGraph::empty(list.workers);
        for &[a, b] in &list.edges {
            if a == 0 || b == 0 || a > list.workers || b > list.workers || a == b {
                return Err(invalid(format!("bad edge ({a}, {b})")));
            }
            g.add_edge(a - 1, b - 1);
        }
        Ok(g)
    }
}

/// JSON form of a graph, used for debugging dumps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeList {
    pub workers: usize,
    pub edges: Vec<[usize; 2]>,
}

/// Result of one detection round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DetectionOutcome {
    Detected {
        honest: WorkerSet,
        adversarial: WorkerSet,
    },
    Ambiguous {
        maximum_cliques: Vec<WorkerSet>,
    },
}

impl DetectionOutcome {
    pub fn tag(&self) -> &'static str {
        match self {
            DetectionOutcome::Detected { .. } => "detected",
            DetectionOutcome::Ambiguous { .. } => "ambiguous",
        }
    }

    pub fn honest(&self) -> Option<WorkerSet> {
        match self {
            DetectionOutcome::Detected { honest, .. } => Some(*honest),
            DetectionOutcome::Ambiguous { .. } => None,
        }
    }
}

/// Number of shared files on which `a` and `b` returned equal vectors.
pub fn count_agreements(report: &WorkerReport, assignment: &Assignment, a: usize, b: usize) -> u64 {
    count_agreements_with(report, assignment, a, b, DetectionOptions::default())
}

pub fn count_agreements_with(
    report: &WorkerReport,
    assignment: &Assignment,
    a: usize,
    b: usize,
    options: DetectionOptions,
) -> u64 {
    let (xs, ys) = (assignment.files_of_worker(a), assignment.files_of_worker(b));
    let (va, vb) = (report.worker_values(a), report.worker_values(b));
    let (mut i, mut j) = (0, 0);
    let mut count = 0;
    while i < xs.len() && j < ys.len() {
        match xs[i].cmp(&ys[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if agrees(&va[i], &vb[j], options.tolerance) {
                    count += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    count
}

pub fn build_agreement_graph(report: &WorkerReport, assignment: &Assignment) -> Result<AgreementGraph> {
    build_agreement_graph_with(report, assignment, DetectionOptions::default())
}

pub fn build_agreement_graph_with(
    report: &WorkerReport,
    assignment: &Assignment,
    options: DetectionOptions,
) -> Result<AgreementGraph> {
    report.check_shape(assignment)?;
    let k = assignment.worker_count();
    let full = assignment.params().pair_overlap();
    let mut graph = AgreementGraph::empty(k);
    for a in 0..k {
        for b in a + 1..k {
            if count_agreements_with(report, assignment, a, b, options) == full {
                graph.add_edge(a, b);
            }
        }
    }
    Ok(graph)
}

/// All maximum cliques, in lexicographic order of their sorted members.
///
/// Vertices with degree below `K - q - 1` are dropped first. If the reduced
/// graph has no clique of size `K - q` (only possible when honest workers do
/// not all agree), the search is repeated on the full graph so the result is
/// always the exact set of maximum cliques.
pub fn enumerate_maximum_cliques(graph: &AgreementGraph, adversaries: usize) -> Vec<WorkerSet> {
    let k = graph.workers();
    let target = k.saturating_sub(adversaries);
    let min_degree = target.saturating_sub(1);
    let candidates: WorkerSet = (0..k).filter(|&w| graph.degree(w) >= min_degree).collect();
    let pruned = maximum_cliques_within(graph, candidates);
    if pruned.first().is_some_and(|c| c.len() >= target) {
        return pruned;
    }
    maximum_cliques_within(graph, WorkerSet::first(k))
}

/// Maximum cliques of the subgraph induced by `allowed`.
pub fn maximum_cliques_within(graph: &AgreementGraph, allowed: WorkerSet) -> Vec<WorkerSet> {
    let mut search = CliqueSearch {
        graph,
        allowed,
        best: 0,
        found: Vec::new(),
    };
    search.expand(WorkerSet::EMPTY, allowed, WorkerSet::EMPTY);
    let mut found = search.found;
    found.sort_by_key(|c| c.to_vec());
    found
}

struct CliqueSearch<'g> {
    graph: &'g AgreementGraph,
    allowed: WorkerSet,
    best: usize,
    found: Vec<WorkerSet>,
}

impl CliqueSearch<'_> {
    fn neighbors(&self, w: usize) -> WorkerSet {
        self.graph.neighbors(w).intersection(self.allowed)
    }

    // Bron-Kerbosch with Tomita pivoting; branches that cannot reach the
    // current best size are cut.
    fn expand(&mut self, clique: WorkerSet, candidates: WorkerSet, excluded: WorkerSet) {
        if clique.len() + candidates.len() < self.best {
            return;
        }
        if candidates.is_empty() {
            if excluded.is_empty() {
                if clique.len() > self.best {
                    self.best = clique.len();
                    self.found.clear();
                }
                self.found.push(clique);
            }
            return;
        }
        let pivot = candidates
            .union(excluded)
            .iter()
            .max_by_key(|&u| (candidates.intersection(self.neighbors(u)).len(), std::cmp::Reverse(u)))
            .expect("candidates is non-empty");
        let mut candidates = candidates;
        let mut excluded = excluded;
        for v in candidates.difference(self.neighbors(pivot)).iter() {
            let nv = self.neighbors(v);
            self.expand(clique.with(v), candidates.intersection(nv), excluded.intersection(nv));
            candidates.remove(v);
            excluded.insert(v);
        }
    }
}

/// Runs detection on an already-built graph.
pub fn detect_on_graph(graph: &AgreementGraph, adversaries: usize) -> DetectionOutcome {
    let k = graph.workers();
    let cliques = enumerate_maximum_cliques(graph, adversaries);
    match cliques.as_slice() {
        [unique] if unique.len() + adversaries >= k => DetectionOutcome::Detected {
            honest: *unique,
            adversarial: WorkerSet::first(k).difference(*unique),
        },
        _ => DetectionOutcome::Ambiguous {
            maximum_cliques: cliques,
        },
    }
}

pub fn detect(report: &WorkerReport, assignment: &Assignment) -> Result<DetectionOutcome> {
    detect_with(report, assignment, DetectionOptions::default())
}

pub fn detect_with(
    report: &WorkerReport,
    assignment: &Assignment,
    options: DetectionOptions,
) -> Result<DetectionOutcome> {
    let graph = build_agreement_graph_with(report, assignment, options)?;
    Ok(detect_on_graph(&graph, assignment.params().adversaries()))
}
