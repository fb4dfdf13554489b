//! Redundant gradient assignment over worker subsets, clique-based
//! adversary detection, and a simulator for the attacks and aggregators
//! built on them.

pub mod aggregation;
pub mod analysis;
pub mod assignment;
pub mod attacks;
pub mod combinatorics;
pub mod detection;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod training;
pub mod workers;

pub use aggregation::{AggregationResult, AggregatorKind};
pub use analysis::EpsilonRecord;
pub use assignment::{build_assignment, Assignment, ClusterParams, GroupPlacement, Placement};
pub use attacks::{apply_attack, AttackMode, AttackPlan, DistortionMethod, Strategy};
pub use detection::{detect, AgreementGraph, DetectionOutcome};
pub use error::{Error, Result};
pub use pipeline::{AggregatorOptions, AttackSpec, Protocol, Scheme};
pub use report::{Gradient, WorkerReport};
pub use training::{run_training, TrainingConfig};
pub use workers::WorkerSet;
