//! Distortion fractions: closed forms for every scheme, the exhaustive
//! `c_max` oracle, and the measured count from one simulated round.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatorKind;
use crate::assignment::ClusterParams;
use crate::attacks::AttackMode;
use crate::combinatorics::{binomial, colex_rank, for_each_subset};
use crate::error::{invalid, Error, Result};
use crate::pipeline::{AggregatorOptions, AttackSpec, Protocol, Scheme};
use crate::report::Gradient;
use crate::workers::WorkerSet;

/// Corrupted files out of `files`, for one scheme, attack mode and `(K, r, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsilonRecord {
    pub scheme: Scheme,
    pub mode: AttackMode,
    #[serde(rename = "K")]
    pub workers: usize,
    pub r: usize,
    pub q: usize,
    pub corrupted: u64,
    pub files: u64,
}

impl EpsilonRecord {
    fn new(scheme: Scheme, mode: AttackMode, params: ClusterParams, corrupted: u64, files: u64) -> Self {
        debug_assert!(corrupted <= files);
        EpsilonRecord {
            scheme,
            mode,
            workers: params.workers(),
            r: params.redundancy(),
            q: params.adversaries(),
            corrupted,
            files,
        }
    }

    pub fn fraction(&self) -> f64 {
        self.corrupted as f64 / self.files as f64
    }

    /// `corrupted / files` in thousandths, rounded half up with integer
    /// arithmetic.
    pub fn thousandths(&self) -> u64 {
        let c = u128::from(self.corrupted);
        let f = u128::from(self.files);
        ((2000 * c + f) / (2 * f)) as u64
    }

    /// The 3-decimal value without trailing zeros: `0.4`, `0.062`, `0`.
    pub fn rounded(&self) -> String {
        format_thousandths(self.thousandths())
    }
}

impl fmt::Display for EpsilonRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({})", self.corrupted, self.files, self.rounded())
    }
}

/// Renders a thousandths count as a decimal with trailing zeros stripped.
pub fn format_thousandths(t: u64) -> String {
    let whole = t / 1000;
    let frac = t % 1000;
    if frac == 0 {
        return whole.to_string();
    }
    let digits = format!("{frac:03}");
    format!("{whole}.{}", digits.trim_end_matches('0'))
}

/// `c_max = C(2q, r) / 2` out of `C(K, r)` files.
pub fn epsilon_aspis_optimal(params: ClusterParams) -> EpsilonRecord {
    let q = params.adversaries() as u64;
    let c = binomial(2 * q, params.redundancy() as u64) / 2;
    EpsilonRecord::new(Scheme::Aspis, AttackMode::Optimal, params, c, params.files())
}

/// Weak attack: only the `C(q, r)` files held entirely by adversaries survive.
pub fn epsilon_aspis_weak(params: ClusterParams) -> EpsilonRecord {
    let c = binomial(params.adversaries() as u64, params.redundancy() as u64);
    EpsilonRecord::new(Scheme::Aspis, AttackMode::Weak, params, c, params.files())
}

/// Baseline: one file per worker, `q` of them distorted.
pub fn epsilon_baseline(params: ClusterParams, mode: AttackMode) -> EpsilonRecord {
    EpsilonRecord::new(
        Scheme::Baseline,
        mode,
        params,
        params.adversaries() as u64,
        params.workers() as u64,
    )
}

/// Disjoint groups of `r`: `floor(q / r')` groups fall to the optimal
/// placement, `max(q - (K/r)(r' - 1), 0)` to round-robin placement.
pub fn epsilon_detox(params: ClusterParams, mode: AttackMode) -> Result<EpsilonRecord> {
    let k = params.workers();
    let r = params.redundancy();
    if k % r != 0 {
        return Err(invalid(format!("r = {r} does not divide K = {k}")));
    }
    let groups = (k / r) as u64;
    let q = params.adversaries() as u64;
    let majority = params.majority() as u64;
    let c = match mode {
        AttackMode::Optimal => q / majority,
        AttackMode::Weak => q.saturating_sub(groups * (majority - 1)),
    };
    Ok(EpsilonRecord::new(Scheme::Detox, mode, params, c, groups))
}

/// Disagreement sets of the adversaries, evaluated by definition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackScenario {
    workers: usize,
    r: usize,
    disagreement: BTreeMap<usize, WorkerSet>,
}

impl AttackScenario {
    pub fn new(params: ClusterParams, disagreement: BTreeMap<usize, WorkerSet>) -> Result<Self> {
        let q = params.adversaries();
        if disagreement.len() != q {
            return Err(invalid(format!("{} disagreement sets for q = {q}", disagreement.len())));
        }
        for (&i, d) in &disagreement {
            if i >= params.workers() || d.iter().any(|w| w >= params.workers()) {
                return Err(invalid("worker outside the cluster"));
            }
            if d.len() > q {
                return Err(invalid(format!("|D_{}| = {} exceeds q = {q}", i + 1, d.len())));
            }
            if d.contains(i) {
                return Err(invalid(format!("U{} disagrees with itself", i + 1)));
            }
        }
        Ok(AttackScenario {
            workers: params.workers(),
            r: params.redundancy(),
            disagreement,
        })
    }

    pub fn adversaries(&self) -> WorkerSet {
        self.disagreement.keys().copied().collect()
    }

    /// `X_j` for `j = r'..=r`: files with some `j` adversaries `A'` such that
    /// every other member lies in every `D_i`, `i` in `A'`.
    pub fn active_sets(&self) -> BTreeMap<usize, Vec<u64>> {
        let adversaries = self.adversaries();
        let majority = self.r / 2 + 1;
        let mut out: BTreeMap<usize, Vec<u64>> = (majority..=self.r).map(|j| (j, Vec::new())).collect();
        for_each_subset(self.workers, self.r, |file| {
            let members: WorkerSet = file.iter().copied().collect();
            let present = members.intersection(adversaries).to_vec();
            for j in majority..=self.r.min(present.len()) {
                let mut hit = false;
                for_each_subset(present.len(), j, |pick| {
                    if hit {
                        return;
                    }
                    let active: WorkerSet = pick.iter().map(|&p| present[p]).collect();
                    let agreed = active
                        .iter()
                        .fold(WorkerSet::first(self.workers), |acc, i| acc.intersection(self.disagreement[&i]));
                    hit = members.difference(active).is_subset(agreed);
                });
                if hit {
                    out.get_mut(&j).expect("j in range").push(colex_rank(file));
                }
            }
        });
        out
    }

    /// `|X_{r'} ∪ .. ∪ X_r|`.
    pub fn corruptible_files(&self) -> u64 {
        let mut all: Vec<u64> = self.active_sets().into_values().flatten().collect();
        all.sort_unstable();
        all.dedup();
        all.len() as u64
    }
}

/// Largest number of `D_i` combinations [`brute_force_cmax`] will visit.
pub const MAX_BRUTE_FORCE_STATES: u64 = 50_000_000;

/// Upper bound on the entries of the per-active-set lookup tables.
const MAX_TABLE_WORDS: u64 = 1 << 26;

// Active adversary subsets as bitmasks over the first q workers.
fn active_subsets(q: usize, majority: usize, r: usize) -> Vec<u32> {
    let mut active = Vec::new();
    for j in majority..=r.min(q) {
        for_each_subset(q, j, |s| active.push(s.iter().map(|&i| 1u32 << i).sum()));
    }
    active
}

/// Errors with [`Error::TooLarge`] when [`brute_force_cmax`] would refuse
/// the instance.
pub fn check_brute_force_bound(params: ClusterParams) -> Result<()> {
    let k = params.workers();
    let r = params.redundancy();
    let q = params.adversaries();
    if q < params.majority() {
        return Ok(());
    }
    let per_adversary = binomial((k - 1) as u64, q as u64);
    let states = (1u64 << (q - 1)).saturating_mul(per_adversary.saturating_pow(q as u32 - 1));
    if states > MAX_BRUTE_FORCE_STATES || k > 24 {
        return Err(Error::TooLarge(format!(
            "brute-force c_max for K = {k}, r = {r}, q = {q} needs {states} states \
             (limit {MAX_BRUTE_FORCE_STATES}, K <= 24)"
        )));
    }
    let words = (params.files() as usize).div_ceil(64) as u64;
    let table_words = active_subsets(q, params.majority(), r).len() as u64 * (1u64 << k) * words;
    if table_words > MAX_TABLE_WORDS {
        return Err(Error::TooLarge(format!(
            "brute-force c_max for K = {k}, r = {r}, q = {q} needs {table_words} table words \
             (limit {MAX_TABLE_WORDS})"
        )));
    }
    Ok(())
}

/// Exhaustive maximum of `|X_{r'} ∪ .. ∪ X_r|` over all disagreement sets
/// with `|D_i| <= q`.
///
/// Adversaries are taken to be the first `q` workers. Enlarging any `D_i`
/// never shrinks the union, so only `|D_i| = q` is searched. Relabelling the
/// honest workers preserves the count, so the honest part of `D_1` is fixed
/// to the lowest honest ids.
pub fn brute_force_cmax(params: ClusterParams) -> Result<u64> {
    let k = params.workers();
    let r = params.redundancy();
    let q = params.adversaries();
    let majority = params.majority();
    if q < majority {
        return Ok(0);
    }
    check_brute_force_bound(params)?;
    let files = params.files() as usize;
    let words = files.div_ceil(64);
    let active = active_subsets(q, majority, r);

    // table[a][mask]: files A' ∪ T with T ⊆ mask \ A', |T| = r - |A'|
    let tables: Vec<Vec<u64>> = active
        .iter()
        .map(|&a| {
            let j = a.count_ones() as usize;
            let mut table = vec![0u64; (1usize << k) * words];
            for mask in 0..(1usize << k) {
                let free: Vec<usize> = (0..k).filter(|&w| mask >> w & 1 == 1 && a >> w & 1 == 0).collect();
                let row = &mut table[mask * words..(mask + 1) * words];
                for_each_subset(free.len(), r - j, |pick| {
                    let mut file: Vec<usize> = (0..q).filter(|&i| a >> i & 1 == 1).collect();
                    file.extend(pick.iter().map(|&p| free[p]));
                    file.sort_unstable();
                    let rank = colex_rank(&file) as usize;
                    row[rank / 64] |= 1 << (rank % 64);
                });
            }
            table
        })
        .collect();

    // q-subsets of the other workers, per adversary
    let candidates: Vec<Vec<u32>> = (0..q)
        .map(|i| {
            let mut out = Vec::new();
            if i == 0 {
                for honest in (0..=q).rev() {
                    if honest > k - q {
                        continue;
                    }
                    let base: u32 = (q..q + honest).map(|w| 1u32 << w).sum();
                    for_each_subset(q - 1, q - honest, |s| {
                        out.push(base | s.iter().map(|&p| 1u32 << (p + 1)).sum::<u32>());
                    });
                }
            } else {
                let others: Vec<usize> = (0..k).filter(|&w| w != i).collect();
                for_each_subset(others.len(), q, |s| out.push(s.iter().map(|&p| 1u32 << others[p]).sum()));
            }
            out
        })
        .collect();

    let mut chosen = vec![0u32; q];
    let mut scratch = vec![0u64; words];
    let mut best = 0u64;
    search(0, &candidates, &mut chosen, &active, &tables, words, &mut scratch, &mut best);
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn search(
    depth: usize,
    candidates: &[Vec<u32>],
    chosen: &mut [u32],
    active: &[u32],
    tables: &[Vec<u64>],
    words: usize,
    scratch: &mut [u64],
    best: &mut u64,
) {
    if depth == chosen.len() {
        scratch.iter_mut().for_each(|w| *w = 0);
        for (a, table) in active.iter().zip(tables) {
            let mut agreed = u32::MAX;
            let mut bits = *a;
            while bits != 0 {
                agreed &= chosen[bits.trailing_zeros() as usize];
                bits &= bits - 1;
            }
            let row = &table[agreed as usize * words..(agreed as usize + 1) * words];
            for (s, x) in scratch.iter_mut().zip(row) {
                *s |= x;
            }
        }
        let count: u64 = scratch.iter().map(|w| u64::from(w.count_ones())).sum();
        *best = (*best).max(count);
        return;
    }
    for &d in &candidates[depth] {
        chosen[depth] = d;
        search(depth + 1, candidates, chosen, active, tables, words, scratch, best);
    }
}

/// Dimension of the synthetic file gradients used by [`measure_epsilon`].
const MEASURE_DIM: usize = 4;

/// Corrupted files after one full simulated round against `kind`.
///
/// File gradients are standard normal draws from a ChaCha8 stream seeded
/// with `seed`.
pub fn measure_epsilon(
    params: ClusterParams,
    attack: &AttackSpec,
    kind: AggregatorKind,
    seed: u64,
) -> Result<EpsilonRecord> {
    let protocol = Protocol::new(params, kind, attack, AggregatorOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truths: Vec<Gradient> = (0..protocol.file_count())
        .map(|_| (0..MEASURE_DIM).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let round = protocol.run_round(0, &truths)?;
    Ok(EpsilonRecord::new(
        Scheme::of(kind),
        attack.mode,
        params,
        round.aggregation.corrupted_files.len() as u64,
        protocol.file_count() as u64,
    ))
}
