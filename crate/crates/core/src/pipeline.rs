//! One parameter-server round for any supported aggregator: honest report,
//! attack, detection where applicable, aggregation.

use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aspis_aggregate, baseline_aggregate, detox_aggregate, AggregationResult, AggregatorKind,
    BaselineRule,
};
use crate::assignment::{build_assignment, Assignment, ClusterParams, GroupPlacement, Placement};
use crate::attacks::{
    apply_attack, default_disagreement_set, detox_adversary_choice, optimal_plan, weak_plan,
    AttackMode, AttackPlan, DistortionMethod,
};
use crate::detection::{detect_with, DetectionOptions, DetectionOutcome};
use crate::error::{invalid, Result};
use crate::report::{Gradient, WorkerReport};
use crate::workers::WorkerSet;

/// The scheme family an aggregator belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Aspis,
    Baseline,
    Detox,
}

impl Scheme {
    pub fn of(kind: AggregatorKind) -> Scheme {
        match kind {
            AggregatorKind::Aspis => Scheme::Aspis,
            AggregatorKind::DetoxMom => Scheme::Detox,
            _ => Scheme::Baseline,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Aspis => "aspis",
            Scheme::Baseline => "baseline",
            Scheme::Detox => "detox",
        }
    }
}

/// Attack description independent of the scheme it is run against.
///
/// Unset `adversaries` resolve per scheme: the first `q` workers for the
/// subset and baseline schemes, and [`detox_adversary_choice`] for the
/// group scheme. An unset `target` resolves to the `q` lowest-indexed honest
/// workers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub mode: AttackMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversaries: Option<WorkerSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<WorkerSet>,
    #[serde(default)]
    pub distortion: DistortionMethod,
}

impl AttackSpec {
    pub fn new(mode: AttackMode, distortion: DistortionMethod) -> Self {
        AttackSpec {
            mode,
            adversaries: None,
            target: None,
            distortion,
        }
    }
}

/// Tunables of the comparison aggregators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregatorOptions {
    /// Group size of the baseline median-of-means; defaults to `r` when it
    /// divides `K`, otherwise 1.
    #[serde(default)]
    pub mom_group_size: Option<usize>,
    /// Multi-Krum selection size; defaults to `K - q`.
    #[serde(default)]
    pub krum_m: Option<usize>,
    /// Second-stage group size for the group scheme; defaults to 1 (plain
    /// coordinate median of the group winners).
    #[serde(default)]
    pub detox_second_stage: Option<usize>,
    #[serde(default)]
    pub detection: DetectionOptions,
}

enum Deployment {
    Subset(Assignment),
    Groups(GroupPlacement, usize),
    Single(GroupPlacement, BaselineRule),
}

/// A configured aggregator plus the attack it faces.
pub struct Protocol {
    kind: AggregatorKind,
    params: ClusterParams,
    deployment: Deployment,
    plan: AttackPlan,
    detection: DetectionOptions,
}

/// What happened in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct Round {
    pub detection: Option<DetectionOutcome>,
    pub aggregation: AggregationResult,
}

impl Protocol {
    pub fn new(
        params: ClusterParams,
        kind: AggregatorKind,
        attack: &AttackSpec,
        options: AggregatorOptions,
    ) -> Result<Self> {
        let k = params.workers();
        let q = params.adversaries();
        let (deployment, plan) = match kind {
            AggregatorKind::Aspis => {
                let adversaries = attack.adversaries.unwrap_or_else(|| WorkerSet::first(q));
                let plan = match attack.mode {
                    AttackMode::Weak => weak_plan(params, adversaries, attack.distortion)?,
                    AttackMode::Optimal => {
                        let target = attack
                            .target
                            .unwrap_or_else(|| default_disagreement_set(params, adversaries));
                        optimal_plan(params, adversaries, target, attack.distortion)?
                    }
                };
                (Deployment::Subset(build_assignment(params)?), plan)
            }
            AggregatorKind::DetoxMom => {
                let r = params.redundancy();
                let groups = GroupPlacement::new(k, r)?;
                let adversaries = match attack.adversaries {
                    Some(a) => a,
                    None => detox_adversary_choice(k, r, q, attack.mode)?,
                };
                let second = options.detox_second_stage.unwrap_or(1);
                if second == 0 || groups.file_count() % second != 0 {
                    return Err(invalid(format!(
                        "second-stage group size {second} does not divide {} groups",
                        groups.file_count()
                    )));
                }
                let plan = weak_plan(params, adversaries, attack.distortion)?;
                (Deployment::Groups(groups, second), plan)
            }
            baseline => {
                let single = GroupPlacement::single(k)?;
                let rule = match baseline {
                    AggregatorKind::BaselineMedian => BaselineRule::Median,
                    AggregatorKind::MedianOfMeans => {
                        let default = if k % params.redundancy() == 0 { params.redundancy() } else { 1 };
                        BaselineRule::MedianOfMeans {
                            group_size: options.mom_group_size.unwrap_or(default),
                        }
                    }
                    AggregatorKind::MultiKrum => BaselineRule::MultiKrum {
                        q,
                        m: options.krum_m.unwrap_or(k - q),
                    },
                    AggregatorKind::Bulyan => BaselineRule::Bulyan { q },
                    AggregatorKind::Aspis | AggregatorKind::DetoxMom => unreachable!(),
                };
                let adversaries = attack.adversaries.unwrap_or_else(|| WorkerSet::first(q));
                let plan = weak_plan(params, adversaries, attack.distortion)?;
                (Deployment::Single(single, rule), plan)
            }
        };
        Ok(Protocol {
            kind,
            params,
            deployment,
            plan,
            detection: options.detection,
        })
    }

    pub fn kind(&self) -> AggregatorKind {
        self.kind
    }

    pub fn params(&self) -> ClusterParams {
        self.params
    }

    pub fn plan(&self) -> &AttackPlan {
        &self.plan
    }

    /// Files per batch under this scheme.
    pub fn file_count(&self) -> usize {
        match &self.deployment {
            Deployment::Subset(a) => a.file_count(),
            Deployment::Groups(g, _) => g.file_count(),
            Deployment::Single(s, _) => s.file_count(),
        }
    }

    /// Runs one round on the given true file gradients.
    pub fn run_round(&self, iteration: u64, truths: &[Gradient]) -> Result<Round> {
        match &self.deployment {
            Deployment::Subset(a) => {
                let honest = WorkerReport::honest(a, iteration, truths)?;
                let report = apply_attack(&self.plan, &honest, a)?;
                let outcome = detect_with(&report, a, self.detection)?;
                let aggregation = aspis_aggregate(&report, a, &outcome, truths)?;
                Ok(Round {
                    detection: Some(outcome),
                    aggregation,
                })
            }
            Deployment::Groups(g, second) => {
                let honest = WorkerReport::honest(g, iteration, truths)?;
                let report = apply_attack(&self.plan, &honest, g)?;
                Ok(Round {
                    detection: None,
                    aggregation: detox_aggregate(&report, g, *second, truths)?,
                })
            }
            Deployment::Single(s, rule) => {
                let honest = WorkerReport::honest(s, iteration, truths)?;
                let report = apply_attack(&self.plan, &honest, s)?;
                Ok(Round {
                    detection: None,
                    aggregation: baseline_aggregate(&report, s, *rule, truths)?,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truths(n: usize) -> Vec<Gradient> {
        (0..n).map(|i| vec![(i as f64).sin() + 2.0, (i as f64).cos() - 2.0]).collect()
    }

    #[test]
    fn every_aggregator_runs_without_attack() {
        let params = ClusterParams::new(15, 3, 0).unwrap();
        for kind in AggregatorKind::ALL {
            let p = Protocol::new(params, kind, &AttackSpec::default(), AggregatorOptions::default()).unwrap();
            let t = truths(p.file_count());
            let round = p.run_round(0, &t).unwrap();
            assert!(round.aggregation.corrupted_files.is_empty(), "{kind:?}");
            assert_eq!(round.aggregation.gradient.len(), 2);
        }
    }

    #[test]
    fn inapplicable_rules_surface_errors() {
        let params = ClusterParams::new(15, 3, 4).unwrap();
        let p = Protocol::new(params, AggregatorKind::Bulyan, &AttackSpec::default(), AggregatorOptions::default()).unwrap();
        let t = truths(p.file_count());
        assert!(p.run_round(0, &t).is_err());
    }

    #[test]
    fn attack_spec_json() {
        let spec: AttackSpec = serde_json::from_str(r#"{"mode":"optimal","distortion":{"kind":"reversed","c":1.0}}"#).unwrap();
        assert_eq!(spec, AttackSpec::new(AttackMode::Optimal, DistortionMethod::Reversed { c: 1.0 }));
        let spec: AttackSpec = serde_json::from_str(r#"{"mode":"weak","adversaries":[2,5]}"#).unwrap();
        assert_eq!(spec.adversaries.unwrap().to_vec(), vec![1, 4]);
    }
}
