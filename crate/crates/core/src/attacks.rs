//! Adversary placement, collusion strategies and gradient distortions.
//!
//! All adversaries holding a distorted file return the same vector for it,
//! so collusion needs no simulated communication: the distorted value is a
//! pure function of the method and the batch's true file gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{ClusterParams, GroupPlacement, Placement};
use crate::detection::AgreementGraph;
use crate::error::{invalid, Result};
use crate::report::{Gradient, WorkerReport};
use crate::workers::WorkerSet;

/// How a distorted file value is produced from the true one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionMethod {
    /// `-c * g`.
    Reversed { c: f64 },
    /// Every coordinate set to `value`.
    ConstantVector { value: f64 },
    /// `mu + z * sigma`, per dimension over the batch's true file gradients
    /// (sample standard deviation).
    Alie { z: f64 },
    /// `-epsilon * mean`, the negated mean true file gradient.
    Foe { epsilon: f64 },
}

impl Default for DistortionMethod {
    fn default() -> Self {
        DistortionMethod::Reversed { c: 1.0 }
    }
}

impl DistortionMethod {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistortionMethod::Reversed { c } => c > 0.0 && c.is_finite(),
            DistortionMethod::ConstantVector { value } => value.is_finite(),
            DistortionMethod::Alie { z } => z.is_finite(),
            DistortionMethod::Foe { epsilon } => epsilon > 0.0 && epsilon.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("distortion parameters out of range: {self:?}")))
        }
    }

    fn distort(&self, truth: &[f64], stats: &BatchStats) -> Gradient {
        match *self {
            DistortionMethod::Reversed { c } => truth.iter().map(|g| -c * g).collect(),
            DistortionMethod::ConstantVector { value } => vec![value; truth.len()],
            DistortionMethod::Alie { z } => stats
                .mean
                .iter()
                .zip(&stats.std_dev)
                .map(|(m, s)| m + z * s)
                .collect(),
            DistortionMethod::Foe { epsilon } => stats.mean.iter().map(|m| -epsilon * m).collect(),
        }
    }

    fn needs_stats(&self) -> bool {
        matches!(self, DistortionMethod::Alie { .. } | DistortionMethod::Foe { .. })
    }
}

struct BatchStats {
    mean: Vec<f64>,
    std_dev: Vec<f64>,
}

impl BatchStats {
    fn of(truths: &[Gradient]) -> Self {
        let n = truths.len();
        let dim = truths.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        for g in truths {
            for (m, x) in mean.iter_mut().zip(g) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut std_dev = vec![0.0; dim];
        if n > 1 {
            for g in truths {
                for ((s, x), m) in std_dev.iter_mut().zip(g).zip(&mean) {
                    *s += (x - m) * (x - m);
                }
            }
            std_dev.iter_mut().for_each(|s| *s = (*s / (n - 1) as f64).sqrt());
        }
        BatchStats { mean, std_dev }
    }
}

/// Which files the adversaries distort.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Every file with at least one adversary.
    Weak,
    /// Only files where the adversaries hold a majority and every other
    /// member lies in `target`; adversaries agree with everyone else.
    FixedDisagreement { target: WorkerSet },
}

/// A complete description of one iteration's attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub adversaries: WorkerSet,
    pub strategy: Strategy,
    pub distortion: DistortionMethod,
}

impl AttackPlan {
    /// No adversaries.
    pub fn none() -> Self {
        AttackPlan {
            adversaries: WorkerSet::EMPTY,
            strategy: Strategy::Weak,
            distortion: DistortionMethod::default(),
        }
    }

    /// Whether the adversaries in a file with these members distort it,
    /// given the placement's majority threshold.
    pub fn distorts(&self, members: WorkerSet, majority: usize) -> bool {
        let inside = members.intersection(self.adversaries);
        match &self.strategy {
            Strategy::Weak => !inside.is_empty(),
            Strategy::FixedDisagreement { target } => {
                inside.len() >= majority && members.difference(self.adversaries).is_subset(*target)
            }
        }
    }

    /// Ids of the files this plan distorts under `placement`.
    pub fn distorted_files(&self, placement: &impl Placement) -> Vec<usize> {
        (0..placement.file_count())
            .filter(|&f| self.distorts(placement.file_members(f), placement.majority()))
            .collect()
    }

    /// Workers each adversary ends up disagreeing with.
    pub fn disagreement_sets(&self, workers: usize) -> BTreeMap<usize, WorkerSet> {
        let honest = WorkerSet::first(workers).difference(self.adversaries);
        let d = match &self.strategy {
            Strategy::Weak => honest,
            Strategy::FixedDisagreement { target } => *target,
        };
        self.adversaries.iter().map(|a| (a, d)).collect()
    }

    /// The agreement graph this plan induces on the subset assignment,
    /// derived combinatorially without materializing any report. Valid for
    /// any `K` the worker set supports, including clusters too large to
    /// build an [`Assignment`](crate::assignment::Assignment) for.
    pub fn induced_agreement_graph(&self, params: ClusterParams) -> AgreementGraph {
        let k = params.workers();
        let mut graph = AgreementGraph::complete(k);
        let honest = WorkerSet::first(k).difference(self.adversaries);
        for a in self.adversaries.iter() {
            for x in honest.iter() {
                if self.disagrees_with_honest(params, x) {
                    graph.remove_edge(a, x);
                }
            }
        }
        graph
    }

    // Does some file holding an adversary `a` and honest `x` get distorted?
    // Files are symmetric in the adversaries, so `a` itself does not matter.
    fn disagrees_with_honest(&self, params: ClusterParams, x: usize) -> bool {
        let r = params.redundancy();
        match &self.strategy {
            Strategy::Weak => true,
            Strategy::FixedDisagreement { target } => {
                if !target.contains(x) {
                    return false;
                }
                let other_adversaries = self.adversaries.len() - 1;
                let other_targets = target.difference(self.adversaries).len() - 1;
                // k more adversaries and r - 2 - k more targets fill the file
                (0..=other_adversaries.min(r - 2))
                    .any(|k| 1 + k >= params.majority() && r - 2 - k <= other_targets)
            }
        }
    }
}

fn check_adversaries(params: ClusterParams, adversaries: WorkerSet) -> Result<()> {
    if adversaries.len() != params.adversaries() {
        return Err(invalid(format!(
            "{} adversaries given, q = {}",
            adversaries.len(),
            params.adversaries()
        )));
    }
    if !adversaries.is_subset(WorkerSet::first(params.workers())) {
        return Err(invalid("adversary id outside the cluster"));
    }
    Ok(())
}

/// Every adversary distorts every file it holds.
pub fn weak_plan(
    params: ClusterParams,
    adversaries: WorkerSet,
    method: DistortionMethod,
) -> Result<AttackPlan> {
    check_adversaries(params, adversaries)?;
    method.validate()?;
    Ok(AttackPlan {
        adversaries,
        strategy: Strategy::Weak,
        distortion: method,
    })
}

/// All adversaries share one disagreement set `target` of `q` honest workers.
pub fn optimal_plan(
    params: ClusterParams,
    adversaries: WorkerSet,
    target: WorkerSet,
    method: DistortionMethod,
) -> Result<AttackPlan> {
    check_adversaries(params, adversaries)?;
    method.validate()?;
    if target.len() != params.adversaries() {
        return Err(invalid(format!(
            "disagreement set has {} workers, q = {}",
            target.len(),
            params.adversaries()
        )));
    }
    if !target.is_disjoint(adversaries) || !target.is_subset(WorkerSet::first(params.workers())) {
        return Err(invalid("disagreement set must be honest workers of the cluster"));
    }
    Ok(AttackPlan {
        adversaries,
        strategy: Strategy::FixedDisagreement { target },
        distortion: method,
    })
}

/// The `q` lowest-indexed honest workers.
pub fn default_disagreement_set(params: ClusterParams, adversaries: WorkerSet) -> WorkerSet {
    WorkerSet::first(params.workers())
        .difference(adversaries)
        .iter()
        .take(params.adversaries())
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    #[default]
    Weak,
    Optimal,
}

impl AttackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMode::Weak => "weak",
            AttackMode::Optimal => "optimal",
        }
    }
}

impl std::str::FromStr for AttackMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(AttackMode::Weak),
            "optimal" => Ok(AttackMode::Optimal),
            other => Err(invalid(format!("unknown attack mode `{other}`"))),
        }
    }
}

/// Adversary placement against the disjoint-group scheme.
///
/// `Optimal` packs `r'` adversaries into consecutive groups, corrupting
/// `floor(q / r')` of them. `Weak` adds the `i`-th adversary to group
/// `i mod (K/r)`, round-robin.
pub fn detox_adversary_choice(workers: usize, r: usize, q: usize, mode: AttackMode) -> Result<WorkerSet> {
    let layout = GroupPlacement::new(workers, r)?;
    if 2 * q >= workers {
        return Err(invalid(format!("q = {q} violates q < K/2 (K = {workers})")));
    }
    let groups = layout.file_count();
    let majority = layout.majority();
    Ok((0..q)
        .map(|i| match mode {
            AttackMode::Optimal => (i / majority) * r + i % majority,
            AttackMode::Weak => (i % groups) * r + i / groups,
        })
        .collect())
}

/// Per-file true gradients, read from an honest report.
pub fn file_truths(report: &WorkerReport, placement: &impl Placement) -> Vec<Gradient> {
    (0..placement.file_count())
        .map(|f| report.copies(placement, f)[0].to_vec())
        .collect()
}

/// Replaces the adversaries' values on every distorted file with the
/// colluding distorted vector. Honest values are never touched.
pub fn apply_attack(
    plan: &AttackPlan,
    honest: &WorkerReport,
    placement: &impl Placement,
) -> Result<WorkerReport> {
    honest.check_shape(placement)?;
    let mut report = honest.clone();
    let distorted = plan.distorted_files(placement);
    if distorted.is_empty() {
        return Ok(report);
    }
    let truths = file_truths(honest, placement);
    let stats = if plan.distortion.needs_stats() {
        BatchStats::of(&truths)
    } else {
        BatchStats {
            mean: Vec::new(),
            std_dev: Vec::new(),
        }
    };
    for file in distorted {
        let value = plan.distortion.distort(&truths[file], &stats);
        for &w in placement.workers_of_file(file) {
            if plan.adversaries.contains(w) {
                let slot = placement.slot(w, file).expect("placement is consistent");
                report.set_slot(w, slot, value.clone());
            }
        }
    }
    Ok(report)
}
