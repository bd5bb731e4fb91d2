//! One-dimensional spacing machinery shared by direction nets and cap
//! selections: counting points of an integer index set in dyadic windows.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest count a window of 2^j grid steps may hold at exponent `t`
/// (constant 1, never below one point).
pub fn window_cap(j: u32, t: f64) -> usize {
    let cap = (j as f64 * t).exp2();
    (cap + 1e-9).floor().max(1.0) as usize
}

/// Worst window found by [`window_scan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    /// max over windows of count / (width)^t
    pub worst_constant: f64,
    /// first index of the worst window
    pub witness_start: i64,
    /// width of the worst window in grid steps
    pub witness_width: i64,
    pub witness_count: usize,
}

/// Scans all closed windows `[a, a + 2^j]` for `0 <= j <= max_j` and
/// returns the worst ratio `count / 2^(j t)`.
///
/// `indices` must be sorted and distinct. A window of maximal count can always
/// be slid right until it starts at a point of the set, so anchoring windows at
/// the points is exhaustive over all lattice positions.
pub fn window_scan(indices: &[i64], max_j: u32, t: f64) -> WindowReport {
    let mut report = WindowReport {
        worst_constant: 0.0,
        witness_start: 0,
        witness_width: 1,
        witness_count: 0,
    };
    for j in 0..=max_j {
        let width = 1i64 << j;
        let denom = (j as f64 * t).exp2();
        let mut hi = 0usize;
        for (lo, &start) in indices.iter().enumerate() {
            if hi < lo {
                hi = lo;
            }
            while hi < indices.len() && indices[hi] <= start + width {
                hi += 1;
            }
            let count = hi - lo;
            let ratio = count as f64 / denom;
            if ratio > report.worst_constant {
                report = WindowReport {
                    worst_constant: ratio,
                    witness_start: start,
                    witness_width: width,
                    witness_count: count,
                };
            }
        }
    }
    report
}

/// Greedy seeded thinning of the grid `{0, .., n-1}`: candidates are visited
/// in a seeded random order and accepted while every closed window of length
/// `2^j <= 2^max_j` keeps at most [`window_cap`] points.
pub fn thin_grid(n: usize, max_j: u32, t: f64, seed: u64) -> Vec<i64> {
    thin_indices(&(0..n as i64).collect::<Vec<_>>(), max_j, t, seed)
}

/// [`thin_grid`] over an arbitrary candidate list, returned sorted.
pub fn thin_indices(candidates: &[i64], max_j: u32, t: f64, seed: u64) -> Vec<i64> {
    let mut order = candidates.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let caps: Vec<usize> = (0..=max_j).map(|j| window_cap(j, t)).collect();

    let mut accepted = BTreeSet::new();
    for p in order {
        if admissible(&accepted, p, &caps) {
            accepted.insert(p);
        }
    }
    accepted.into_iter().collect()
}

fn admissible(accepted: &BTreeSet<i64>, p: i64, caps: &[usize]) -> bool {
    for (j, &cap) in caps.iter().enumerate() {
        let width = 1i64 << j;
        // windows containing p that start at p or at an accepted point left of p
        let anchors = std::iter::once(p).chain(accepted.range(p - width..p).copied());
        for a in anchors {
            let count = accepted.range(a..=a + width).count() + 1;
            if count > cap {
                return false;
            }
        }
    }
    true
}
