//! Binomial coefficients and the colexicographic combinatorial number system.
//!
//! A `k`-subset `c_1 < c_2 < ... < c_k` of `{0, .., n-1}` has colex rank
//! `sum_i C(c_i, i)`. Ranks are dense in `[0, C(n, k))`.

use crate::error::{invalid, Result};

/// `C(n, k)`, zero when `k > n`. Saturates at `u64::MAX` on overflow.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Colex rank of a strictly increasing 0-based subset.
pub(crate) fn colex_rank(subset: &[usize]) -> u64 {
    subset
        .iter()
        .enumerate()
        .map(|(i, &c)| binomial(c as u64, i as u64 + 1))
        .sum()
}

/// Inverse of [`colex_rank`] for subsets of size `k`.
pub(crate) fn colex_unrank(mut rank: u64, k: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0usize; k];
    let mut upper = n;
    for i in (1..=k).rev() {
        // largest c < upper with C(c, i) <= rank
        let mut c = upper - 1;
        while binomial(c as u64, i as u64) > rank {
            c -= 1;
        }
        out[i - 1] = c;
        rank -= binomial(c as u64, i as u64);
        upper = c;
    }
    out
}

/// Rank of a 1-based, strictly increasing `r`-subset of `{1..K}` in colex order.
pub fn subset_rank(subset: &[usize], workers: usize, r: usize) -> Result<u64> {
    if subset.len() != r {
        return Err(invalid(format!(
            "subset has {} members, expected {r}",
            subset.len()
        )));
    }
    if subset.iter().any(|&w| w == 0 || w > workers) {
        return Err(invalid(format!("subset member outside 1..={workers}")));
    }
    if subset.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("subset must be strictly increasing"));
    }
    let zero_based: Vec<usize> = subset.iter().map(|w| w - 1).collect();
    Ok(colex_rank(&zero_based))
}

/// The 1-based `r`-subset of `{1..K}` with the given colex rank.
pub fn subset_unrank(id: u64, workers: usize, r: usize) -> Result<Vec<usize>> {
    let total = binomial(workers as u64, r as u64);
    if r == 0 || id >= total {
        return Err(invalid(format!("file id {id} outside [0, {total})")));
    }
    Ok(colex_unrank(id, r, workers)
        .into_iter()
        .map(|w| w + 1)
        .collect())
}

/// Visits every `k`-subset of `{0..n}` in colex order.
pub fn for_each_subset(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    if k == 0 {
        visit(&[]);
        return;
    }
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        visit(&current);
        // colex successor: bump the lowest position that has room
        let mut i = 0;
        while i < k {
            let limit = if i + 1 < k { current[i + 1] } else { n };
            if current[i] + 1 < limit {
                current[i] += 1;
                for (j, slot) in current.iter_mut().enumerate().take(i) {
                    *slot = j;
                }
                break;
            }
            i += 1;
        }
        if i == k {
            return;
        }
    }
}
