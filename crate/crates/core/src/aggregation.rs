//! Aggregation rules: majority vote, coordinate-wise median and the
//! detection-aware rule, plus the comparison aggregators.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, GroupPlacement, Placement};
use crate::detection::DetectionOutcome;
use crate::error::{invalid, Error, Result};
use crate::report::{same_bits, Gradient, WorkerReport};

/// The update direction chosen by an aggregator and the files behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationResult {
    pub gradient: Gradient,
    /// Files whose contribution was a distorted value, or that were dropped
    /// while all of their copies were distorted.
    pub corrupted_files: BTreeSet<usize>,
    /// Files that contributed to `gradient`.
    pub used_files: BTreeSet<usize>,
}

/// Aggregator names accepted in experiment configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    Aspis,
    BaselineMedian,
    MedianOfMeans,
    MultiKrum,
    Bulyan,
    DetoxMom,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::Aspis,
        AggregatorKind::BaselineMedian,
        AggregatorKind::MedianOfMeans,
        AggregatorKind::MultiKrum,
        AggregatorKind::Bulyan,
        AggregatorKind::DetoxMom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorKind::Aspis => "aspis",
            AggregatorKind::BaselineMedian => "baseline-median",
            AggregatorKind::MedianOfMeans => "median-of-means",
            AggregatorKind::MultiKrum => "multi-krum",
            AggregatorKind::Bulyan => "bulyan",
            AggregatorKind::DetoxMom => "detox-mom",
        }
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggregatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown aggregator `{s}`")))
    }
}

fn byte_key(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_bits().to_be_bytes()).collect()
}

/// Majority over `r` copies of a file gradient.
///
/// Returns the value carried by at least `(r + 1) / 2` copies. Without such a
/// majority the most frequent value wins, ties going to the vector whose
/// big-endian IEEE-754 byte string is lexicographically smallest.
pub fn majority_vote(values: &[&[f64]]) -> Result<Gradient> {
    if values.is_empty() {
        return Err(invalid("majority vote over no values"));
    }
    // (representative, count), grouped by bit-exact equality
    let mut groups: Vec<(&[f64], usize)> = Vec::new();
    for v in values {
        match groups.iter_mut().find(|(g, _)| same_bits(g, v)) {
            Some((_, n)) => *n += 1,
            None => groups.push((v, 1)),
        }
    }
    let majority = values.len() / 2 + 1;
    if let Some((v, _)) = groups.iter().find(|(_, n)| *n >= majority) {
        return Ok(v.to_vec());
    }
    let winner = groups
        .iter()
        .max_by(|(a, na), (b, nb)| na.cmp(nb).then_with(|| byte_key(b).cmp(&byte_key(a))))
        .expect("non-empty");
    Ok(winner.0.to_vec())
}

fn check_dims<V: AsRef<[f64]>>(vectors: &[V]) -> Result<usize> {
    let dim = vectors
        .first()
        .ok_or_else(|| invalid("aggregation over an empty list"))?
        .as_ref()
        .len();
    if vectors.iter().any(|v| v.as_ref().len() != dim) {
        return Err(invalid("vectors differ in dimension"));
    }
    Ok(dim)
}

/// Per-dimension median; even counts average the two middle values.
pub fn coordinate_median<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Gradient> {
    let dim = check_dims(vectors)?;
    let mut column = Vec::with_capacity(vectors.len());
    Ok((0..dim)
        .map(|d| {
            column.clear();
            column.extend(vectors.iter().map(|v| v.as_ref()[d]));
            column.sort_by(f64::total_cmp);
            let n = column.len();
            if n % 2 == 1 {
                column[n / 2]
            } else {
                (column[n / 2 - 1] + column[n / 2]) / 2.0
            }
        })
        .collect())
}

fn mean<V: AsRef<[f64]>>(vectors: &[V]) -> Gradient {
    let dim = vectors[0].as_ref().len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.as_ref()) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Coordinate median of the means of consecutive groups of `group_size`.
pub fn median_of_means<V: AsRef<[f64]>>(vectors: &[V], group_size: usize) -> Result<Gradient> {
    check_dims(vectors)?;
    if group_size == 0 || vectors.len() % group_size != 0 {
        return Err(invalid(format!(
            "group size {group_size} does not divide {} vectors",
            vectors.len()
        )));
    }
    let means: Vec<Gradient> = vectors.chunks(group_size).map(mean).collect();
    coordinate_median(&means)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Krum scores: for each vector, the sum of squared distances to its
/// `n - q - 2` nearest neighbours.
fn krum_scores<V: AsRef<[f64]>>(vectors: &[V], q: usize) -> Vec<f64> {
    let n = vectors.len();
    let neighbours = n - q - 2;
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| squared_distance(vectors[i].as_ref(), vectors[j].as_ref()))
                .collect();
            d.sort_by(f64::total_cmp);
            d[..neighbours].iter().sum()
        })
        .collect()
}

/// Indices sorted by ascending Krum score, ties to the lower index.
fn krum_order<V: AsRef<[f64]>>(vectors: &[V], q: usize) -> Vec<usize> {
    let scores = krum_scores(vectors, q);
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

/// Average of the `m` vectors with the lowest Krum score. `m = 1` is Krum.
/// Requires `n >= 2q + 3`.
pub fn multi_krum<V: AsRef<[f64]>>(vectors: &[V], q: usize, m: usize) -> Result<Gradient> {
    check_dims(vectors)?;
    let n = vectors.len();
    if n < 2 * q + 3 {
        return Err(Error::Inapplicable {
            rule: "multi-krum",
            reason: format!("{n} inputs < 2q + 3 = {}", 2 * q + 3),
        });
    }
    if m == 0 || m > n {
        return Err(invalid(format!("multi-krum selection size {m} outside 1..={n}")));
    }
    let chosen: Vec<&[f64]> = krum_order(vectors, q)[..m]
        .iter()
        .map(|&i| vectors[i].as_ref())
        .collect();
    Ok(mean(&chosen))
}

/// Bulyan: pick `theta = n - 2q` vectors by repeatedly taking the Krum
/// winner of the remaining set, then per coordinate average the
/// `beta = theta - 2q` selected values closest to their median.
/// Requires `n >= 4q + 3`.
pub fn bulyan<V: AsRef<[f64]>>(vectors: &[V], q: usize) -> Result<Gradient> {
    let dim = check_dims(vectors)?;
    let n = vectors.len();
    if n < 4 * q + 3 {
        return Err(Error::Inapplicable {
            rule: "bulyan",
            reason: format!("{n} inputs < 4q + 3 = {}", 4 * q + 3),
        });
    }
    let selected = bulyan_selection(vectors, q);
    let theta = selected.len();
    let beta = theta - 2 * q;
    let mut column: Vec<f64> = Vec::with_capacity(theta);
    Ok((0..dim)
        .map(|d| {
            column.clear();
            column.extend(selected.iter().map(|&i| vectors[i].as_ref()[d]));
            column.sort_by(f64::total_cmp);
            let median = if theta % 2 == 1 {
                column[theta / 2]
            } else {
                (column[theta / 2 - 1] + column[theta / 2]) / 2.0
            };
            column.sort_by(|a, b| (a - median).abs().total_cmp(&(b - median).abs()).then(a.total_cmp(b)));
            column[..beta].iter().sum::<f64>() / beta as f64
        })
        .collect())
}

/// Indices picked by Bulyan's iterated Krum stage, in pick order.
pub fn bulyan_selection<V: AsRef<[f64]>>(vectors: &[V], q: usize) -> Vec<usize> {
    let theta = vectors.len() - 2 * q;
    let mut remaining: Vec<usize> = (0..vectors.len()).collect();
    let mut selected = Vec::with_capacity(theta);
    while selected.len() < theta {
        let pick = if remaining.len() >= q + 3 {
            let subset: Vec<&[f64]> = remaining.iter().map(|&i| vectors[i].as_ref()).collect();
            krum_order(&subset, q)[0]
        } else {
            0
        };
        selected.push(remaining.remove(pick));
    }
    selected
}

/// The detection-aware rule.
///
/// `Detected`: each file held by at least one detected-honest worker
/// contributes that worker's value (lowest id first); the chosen values are
/// averaged. Files without a detected-honest holder are dropped and counted
/// corrupted. `Ambiguous`: per-file majority vote, then the coordinate median
/// of the `f` winners.
///
/// `truths` is only used to account for corrupted files.
pub fn aspis_aggregate(
    report: &WorkerReport,
    assignment: &Assignment,
    outcome: &DetectionOutcome,
    truths: &[Gradient],
) -> Result<AggregationResult> {
    report.check_shape(assignment)?;
    if truths.len() != assignment.file_count() {
        return Err(invalid("one true gradient per file is required"));
    }
    let mut corrupted = BTreeSet::new();
    let mut used = BTreeSet::new();
    match outcome {
        DetectionOutcome::Detected { honest, .. } => {
            let mut sum = vec![0.0; report.dim()];
            for file in 0..assignment.file_count() {
                let Some(&w) = assignment.workers_of_file(file).iter().find(|&&w| honest.contains(w)) else {
                    corrupted.insert(file);
                    continue;
                };
                let value = report.value(assignment, w, file).expect("shape checked");
                if !same_bits(value, &truths[file]) {
                    corrupted.insert(file);
                }
                for (s, x) in sum.iter_mut().zip(value) {
                    *s += x;
                }
                used.insert(file);
            }
            if used.is_empty() {
                return Err(invalid("every file was dropped"));
            }
            let n = used.len() as f64;
            sum.iter_mut().for_each(|s| *s /= n);
            Ok(AggregationResult {
                gradient: sum,
                corrupted_files: corrupted,
                used_files: used,
            })
        }
        DetectionOutcome::Ambiguous { .. } => {
            let winners = (0..assignment.file_count())
                .map(|file| {
                    let m = majority_vote(&report.copies(assignment, file))?;
                    if !same_bits(&m, &truths[file]) {
                        corrupted.insert(file);
                    }
                    used.insert(file);
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AggregationResult {
                gradient: coordinate_median(&winners)?,
                corrupted_files: corrupted,
                used_files: used,
            })
        }
    }
}

/// Group-wise majority vote followed by median-of-means over the group
/// winners. `second_stage_group = 1` feeds the winners straight to the
/// coordinate median.
pub fn detox_aggregate(
    report: &WorkerReport,
    groups: &GroupPlacement,
    second_stage_group: usize,
    truths: &[Gradient],
) -> Result<AggregationResult> {
    report.check_shape(groups)?;
    let mut corrupted = BTreeSet::new();
    let winners = (0..groups.file_count())
        .map(|g| {
            let m = majority_vote(&report.copies(groups, g))?;
            if !same_bits(&m, &truths[g]) {
                corrupted.insert(g);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AggregationResult {
        gradient: median_of_means(&winners, second_stage_group)?,
        corrupted_files: corrupted,
        used_files: (0..groups.file_count()).collect(),
    })
}

/// Robust rules applied directly to one gradient per worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineRule {
    Median,
    MedianOfMeans { group_size: usize },
    MultiKrum { q: usize, m: usize },
    Bulyan { q: usize },
}

/// Applies `rule` to the single value each worker returned; distorted inputs
/// count as corrupted.
pub fn baseline_aggregate(
    report: &WorkerReport,
    single: &GroupPlacement,
    rule: BaselineRule,
    truths: &[Gradient],
) -> Result<AggregationResult> {
    report.check_shape(single)?;
    if single.replication() != 1 {
        return Err(invalid("baseline aggregation expects one file per worker"));
    }
    let inputs: Vec<&[f64]> = (0..single.worker_count())
        .map(|w| report.worker_values(w)[0].as_slice())
        .collect();
    let corrupted = (0..single.file_count())
        .filter(|&f| !same_bits(inputs[f], &truths[f]))
        .collect();
    let gradient = match rule {
        BaselineRule::Median => coordinate_median(&inputs)?,
        BaselineRule::MedianOfMeans { group_size } => median_of_means(&inputs, group_size)?,
        BaselineRule::MultiKrum { q, m } => multi_krum(&inputs, q, m)?,
        BaselineRule::Bulyan { q } => bulyan(&inputs, q)?,
    };
    Ok(AggregationResult {
        gradient,
        corrupted_files: corrupted,
        used_files: (0..single.file_count()).collect(),
    })
}
