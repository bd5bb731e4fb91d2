//! Multi-scale dyadic coverings with the s-dimensional condition, and a
//! dyadic surrogate of Hausdorff content.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractal::{ancestor, Cell, PointSet};

/// Relative slack on budget and condition (3) comparisons.
pub const SLACK: f64 = 1e-12;

/// Dyadic cube of side 2^-level: `index·2^-level + [0, 2^-level)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: u32,
    pub index: Cell,
}

impl DyadicCube {
    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// The level-`l` cube containing this one (`l <= level`).
    pub fn ancestor(&self, l: u32) -> DyadicCube {
        DyadicCube {
            level: l,
            index: ancestor(&self.index, self.level - l),
        }
    }

    pub fn contains(&self, other: &DyadicCube) -> bool {
        other.level >= self.level && other.ancestor(self.level) == *self
    }
}

/// Cubes per level, covering the cells of a target set.
#[derive(Clone, Debug)]
pub struct Covering {
    dim: usize,
    s: f64,
    epsilon: f64,
    min_level: i32,
    levels: BTreeMap<u32, BTreeSet<Cell>>,
    target: Arc<PointSet>,
}

/// Condition (3) witness: `count` level-`k` cubes inside `cube`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition3Witness {
    pub cube: DyadicCube,
    pub k: u32,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub cover_ok: bool,
    pub disjoint: bool,
    pub budget_value: f64,
    pub budget_ok: bool,
    pub worst_condition3_ratio: f64,
    pub uncovered: Option<Cell>,
    pub overlap: Option<(DyadicCube, DyadicCube)>,
    pub condition3_witness: Option<Condition3Witness>,
}

impl CoveringReport {
    pub fn passes(&self) -> bool {
        self.cover_ok && self.disjoint && self.budget_ok && self.worst_condition3_ratio <= 1.0 + SLACK
    }
}

impl Covering {
    /// Assembles a covering from explicit cubes without checking invariants.
    pub fn from_cubes(
        target: Arc<PointSet>,
        s: f64,
        epsilon: f64,
        min_level: i32,
        cubes: impl IntoIterator<Item = DyadicCube>,
    ) -> Result<Self> {
        let k_max = target.scale().level();
        let mut levels: BTreeMap<u32, BTreeSet<Cell>> = BTreeMap::new();
        for c in cubes {
            if c.level > k_max {
                return Err(Error::Config(format!(
                    "cube level {} finer than the target scale {k_max}",
                    c.level
                )));
            }
            levels.entry(c.level).or_default().insert(c.index);
        }
        Ok(Covering {
            dim: target.dim(),
            s,
            epsilon,
            min_level,
            levels,
            target,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn min_level(&self) -> i32 {
        self.min_level
    }

    pub fn target(&self) -> &Arc<PointSet> {
        &self.target
    }

    /// Finest level, matching the target resolution.
    pub fn k_max(&self) -> u32 {
        self.target.scale().level()
    }

    /// Cubes at level `k`, in lexicographic order.
    pub fn level(&self, k: u32) -> impl Iterator<Item = DyadicCube> + '_ {
        self.levels
            .get(&k)
            .into_iter()
            .flat_map(move |set| set.iter().map(move |&index| DyadicCube { level: k, index }))
    }

    /// Nonempty levels, coarse to fine.
    pub fn levels(&self) -> Vec<u32> {
        self.levels.iter().filter(|(_, v)| !v.is_empty()).map(|(&k, _)| k).collect()
    }

    pub fn cubes(&self) -> impl Iterator<Item = DyadicCube> + '_ {
        self.levels
            .iter()
            .flat_map(|(&k, set)| set.iter().map(move |&index| DyadicCube { level: k, index }))
    }

    pub fn len(&self) -> usize {
        self.levels.values().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Σ r(D)^s over all cubes.
    pub fn budget_value(&self) -> f64 {
        self.levels
            .iter()
            .map(|(&k, set)| set.len() as f64 * (-(k as f64) * self.s).exp2())
            .sum()
    }

    /// The covering restricted to its level-`k` cubes.
    pub fn level_slice(&self, k: u32) -> Covering {
        let mut levels = BTreeMap::new();
        if let Some(set) = self.levels.get(&k) {
            levels.insert(k, set.clone());
        }
        Covering { levels, ..self.clone() }
    }

    fn contains_cube(&self, c: &DyadicCube) -> bool {
        self.levels.get(&c.level).is_some_and(|s| s.contains(&c.index))
    }

    /// Serializes as `{s, epsilon, levels: [{k, cubes: [[indices..]]}]}`.
    pub fn to_json(&self) -> CoveringJson {
        CoveringJson {
            s: self.s,
            epsilon: self.epsilon,
            levels: self
                .levels
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(&k, set)| LevelJson {
                    k,
                    cubes: set.iter().map(|c| c[..self.dim].to_vec()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(json: &CoveringJson, target: Arc<PointSet>, min_level: i32) -> Result<Self> {
        let dim = target.dim();
        let mut cubes = Vec::new();
        for lvl in &json.levels {
            for c in &lvl.cubes {
                if c.len() != dim {
                    return Err(Error::Parse(format!("cube {c:?} does not have {dim} indices")));
                }
                let mut index = [0i64; 3];
                index[..dim].copy_from_slice(c);
                cubes.push(DyadicCube { level: lvl.k, index });
            }
        }
        Covering::from_cubes(target, json.s, json.epsilon, min_level, cubes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringJson {
    pub s: f64,
    pub epsilon: f64,
    pub levels: Vec<LevelJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelJson {
    pub k: u32,
    pub cubes: Vec<Vec<i64>>,
}

fn cap(levels_apart: u32, s: f64) -> f64 {
    (levels_apart as f64 * s).exp2() * (1.0 + SLACK)
}

/// Greedy covering with the s-dimensional condition on levels
/// `min_level < l < k <= k_max`.
///
/// Starts from the finest-level cover of `x`; scanning levels coarse to fine
/// and cubes lexicographically, any cube D whose descendants at some finer
/// level outnumber 2^{(k-l)s} replaces all its descendants. Passes repeat until
/// nothing changes. Each merge strictly lowers both the cube count and the
/// budget.
pub fn greedy_cover(x: Arc<PointSet>, s: f64, epsilon: f64, min_level: i32) -> Result<Covering> {
    let k_max = x.scale().level();
    if min_level >= k_max as i32 {
        return Err(Error::Range(format!(
            "min_level {min_level} leaves no levels below the finest level {k_max}"
        )));
    }
    if !(s >= 0.0) || !(epsilon > 0.0) {
        return Err(Error::Domain(format!("need s >= 0 and epsilon > 0, got {s}, {epsilon}")));
    }
    let mut levels: BTreeMap<u32, BTreeSet<Cell>> = BTreeMap::new();
    levels.insert(k_max, x.cells().iter().copied().collect());
    let first = (min_level + 1).max(0) as u32;

    loop {
        let mut changed = false;
        for l in first..k_max {
            // counts[D][k - l - 1] = number of level-k cubes inside D
            let mut counts: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
            for (&k, set) in levels.range(l + 1..) {
                for c in set {
                    let v = counts.entry(ancestor(c, k - l)).or_insert_with(|| vec![0; (k_max - l) as usize]);
                    v[(k - l - 1) as usize] += 1;
                }
            }
            let violators: Vec<Cell> = counts
                .into_iter()
                .filter(|(_, v)| {
                    v.iter()
                        .enumerate()
                        .any(|(i, &n)| n as f64 > cap(i as u32 + 1, s))
                })
                .map(|(d, _)| d)
                .collect();
            if violators.is_empty() {
                continue;
            }
            changed = true;
            let doomed: BTreeSet<Cell> = violators.iter().copied().collect();
            for (&k, set) in levels.range_mut(l + 1..) {
                set.retain(|c| !doomed.contains(&ancestor(c, k - l)));
            }
            levels.entry(l).or_default().extend(violators);
        }
        if !changed {
            break;
        }
    }
    levels.retain(|_, v| !v.is_empty());

    let cov = Covering {
        dim: x.dim(),
        s,
        epsilon,
        min_level,
        levels,
        target: x,
    };
    let budget = cov.budget_value();
    if budget > epsilon * (1.0 + SLACK) + SLACK {
        return Err(Error::Infeasible(format!(
            "covering budget {budget:.6} exceeds epsilon {epsilon}"
        )));
    }
    Ok(cov)
}

/// Exhaustive check of cover, disjointness, budget, and condition (3) for
/// every pair of levels `min_level < l < k`.
pub fn validate_covering(c: &Covering) -> CoveringReport {
    let levels = c.levels();

    let uncovered = c.target.cells().iter().find(|cell| {
        let k_max = c.k_max();
        !levels.iter().any(|&k| {
            c.contains_cube(&DyadicCube {
                level: k,
                index: ancestor(cell, k_max - k),
            })
        })
    });

    let mut overlap = None;
    'outer: for cube in c.cubes() {
        for &l in levels.iter().take_while(|&&l| l < cube.level) {
            let a = cube.ancestor(l);
            if c.contains_cube(&a) {
                overlap = Some((a, cube));
                break 'outer;
            }
        }
    }

    let mut worst = 0.0f64;
    let mut witness = None;
    let first = (c.min_level + 1).max(0) as u32;
    let finest = levels.last().copied().unwrap_or(0);
    for l in first..finest {
        for &k in levels.iter().filter(|&&k| k > l) {
            let mut counts: HashMap<Cell, usize> = HashMap::new();
            for cube in c.level(k) {
                *counts.entry(ancestor(&cube.index, k - l)).or_default() += 1;
            }
            let denom = ((k - l) as f64 * c.s).exp2();
            let mut entries: Vec<(Cell, usize)> = counts.into_iter().collect();
            entries.sort_unstable();
            for (d, n) in entries {
                let ratio = n as f64 / denom;
                if ratio > worst {
                    worst = ratio;
                    witness = Some(Condition3Witness {
                        cube: DyadicCube { level: l, index: d },
                        k,
                        count: n,
                    });
                }
            }
        }
    }

    let budget_value = c.budget_value();
    CoveringReport {
        cover_ok: uncovered.is_none(),
        disjoint: overlap.is_none(),
        budget_value,
        budget_ok: budget_value <= c.epsilon * (1.0 + SLACK) + SLACK,
        worst_condition3_ratio: worst,
        uncovered: uncovered.copied(),
        overlap,
        condition3_witness: witness,
    }
}

/// Optimal Σ r(D)^t over dyadic covers by cubes of levels 0..=max_level:
/// bottom-up, content(D) = min(r(D)^t, Σ content(children)). Leaves sit at
/// min(max_level, resolution level).
pub fn dyadic_content(x: &PointSet, t: f64, max_level: u32) -> f64 {
    let k = x.scale().level();
    let leaf = max_level.min(k);
    let mut nodes: BTreeMap<Cell, f64> = BTreeMap::new();
    let leaf_value = (-(leaf as f64) * t).exp2();
    for c in x.cells() {
        nodes.insert(ancestor(c, k - leaf), leaf_value);
    }
    for l in (0..leaf).rev() {
        let own = (-(l as f64) * t).exp2();
        let mut parents: BTreeMap<Cell, f64> = BTreeMap::new();
        for (c, v) in nodes {
            *parents.entry(ancestor(&c, 1)).or_default() += v;
        }
        for v in parents.values_mut() {
            *v = v.min(own);
        }
        nodes = parents;
    }
    nodes.values().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::Dyadic;
    use crate::fractal::{cantor_1d, full_grid};

    fn arc(p: PointSet) -> Arc<PointSet> {
        Arc::new(p)
    }

    #[test]
    fn single_cell() {
        let p = PointSet::new(1, Dyadic::from_level(8), vec![[77, 0, 0]], 0.0).unwrap();
        let c = greedy_cover(arc(p), 0.5, 1.0, 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.levels(), vec![8]);
        assert!((c.budget_value() - 2f64.powf(-4.0)).abs() < 1e-15);
    }

    #[test]
    fn four_corners() {
        let cells = vec![[0, 0, 0], [63, 0, 0], [0, 63, 0], [63, 63, 0]];
        let p = PointSet::new(2, Dyadic::from_level(6), cells, 0.0).unwrap();
        let c = greedy_cover(arc(p), 0.5, 1.0, 1).unwrap();
        assert_eq!(c.len(), 4);
        let r = validate_covering(&c);
        assert!(r.passes(), "{r:?}");
        assert!(r.worst_condition3_ratio <= 1.0);
    }

    #[test]
    fn full_square_is_infeasible() {
        let p = full_grid(2, Dyadic::from_level(5)).unwrap();
        assert!(matches!(greedy_cover(arc(p), 0.5, 1.0, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn degenerate_range() {
        let p = full_grid(1, Dyadic::from_level(3)).unwrap();
        assert!(matches!(greedy_cover(arc(p), 0.5, 1.0, 3), Err(Error::Range(_))));
    }

    #[test]
    fn unit_cube_cover() {
        let p = arc(full_grid(2, Dyadic::from_level(4)).unwrap());
        let c = Covering::from_cubes(p, 0.5, 1.0, -1, [DyadicCube { level: 0, index: [0; 3] }]).unwrap();
        let r = validate_covering(&c);
        assert!(r.cover_ok && r.disjoint);
        assert_eq!(r.budget_value, 1.0);
    }

    #[test]
    fn missing_cell_is_reported() {
        let p = arc(cantor_1d(1.0 / 3.0, 4).unwrap());
        let c = greedy_cover(p.clone(), 0.7, 1.0, 1).unwrap();
        let dropped = p.cells()[5];
        let cubes: Vec<DyadicCube> = c
            .cubes()
            .filter(|d| !d.contains(&DyadicCube { level: c.k_max(), index: dropped }))
            .collect();
        let broken = Covering::from_cubes(p.clone(), 0.7, 1.0, 1, cubes).unwrap();
        let r = validate_covering(&broken);
        assert!(!r.cover_ok);
        let w = r.uncovered.unwrap();
        assert!(p.contains(&w));
        // the removed cube held the first uncovered cell in lexicographic order
        assert!(w <= dropped);
    }

    // Brute-force oracle for condition (3): every cube at every level pair.
    #[test]
    fn greedy_output_passes_brute_force_condition3() {
        let p = arc(cantor_1d(0.4, 7).unwrap());
        for &s in &[0.3, 0.5, 0.8] {
            let Ok(c) = greedy_cover(p.clone(), s, 2.0, 1) else { continue };
            let cubes: Vec<DyadicCube> = c.cubes().collect();
            for l in 2..c.k_max() {
                for k in l + 1..=c.k_max() {
                    for d in -1..(1i64 << l) + 1 {
                        let big = DyadicCube { level: l, index: [d, 0, 0] };
                        let n = cubes.iter().filter(|q| q.level == k && big.contains(q)).count();
                        assert!(n as f64 <= cap(k - l, s), "s {s} l {l} k {k} D {d}: {n}");
                    }
                }
            }
            let mut seen = 0;
            for cell in p.cells() {
                let leaf = DyadicCube { level: c.k_max(), index: *cell };
                let hits = cubes.iter().filter(|q| q.contains(&leaf)).count();
                assert_eq!(hits, 1);
                seen += 1;
            }
            assert_eq!(seen, p.len());
        }
    }

    #[test]
    fn merge_example() {
        // three adjacent cells at level 3 under one level-1 cube, s = 0.5:
        // level-2 parents hold 2 > 2^0.5 cells, so they merge.
        let p = PointSet::new(1, Dyadic::from_level(3), vec![[0, 0, 0], [1, 0, 0], [2, 0, 0]], 0.0).unwrap();
        let c = greedy_cover(arc(p), 0.5, 2.0, 1).unwrap();
        let cubes: Vec<DyadicCube> = c.cubes().collect();
        assert_eq!(cubes, vec![DyadicCube { level: 2, index: [0, 0, 0] }, DyadicCube { level: 3, index: [2, 0, 0] }]);
        assert!(validate_covering(&c).passes());
    }

    #[test]
    fn content_of_full_interval() {
        let g = full_grid(1, Dyadic::from_level(8)).unwrap();
        assert_eq!(dyadic_content(&g, 1.0, 8), 1.0);
    }

    // Top-down recursion over the explicit interval tree, independent of the
    // level-by-level map implementation.
    fn content_oracle(xs: &[i64], level: u32, k: u32, start: i64, t: f64) -> f64 {
        let len = 1i64 << (k - level);
        let inside: Vec<i64> = xs.iter().copied().filter(|&x| x >= start && x < start + len).collect();
        if inside.is_empty() {
            return 0.0;
        }
        let own = (-(level as f64) * t).exp2();
        if level == k {
            return own;
        }
        let half = len / 2;
        let kids = content_oracle(&inside, level + 1, k, start, t)
            + content_oracle(&inside, level + 1, k, start + half, t);
        own.min(kids)
    }

    #[test]
    fn cantor_content_golden() {
        let c = cantor_1d(1.0 / 3.0, 8).unwrap();
        let t = 2f64.ln() / 3f64.ln();
        let v = dyadic_content(&c, t, c.scale().level());
        let xs: Vec<i64> = c.cells().iter().map(|c| c[0]).collect();
        let oracle = content_oracle(&xs, 0, c.scale().level(), 0, t);
        assert!((v - oracle).abs() < 1e-12, "{v} vs {oracle}");
        assert!((0.25..=1.0).contains(&v));
        assert!((v - CANTOR_CONTENT_GOLDEN).abs() < 1e-12, "{v}");
    }

    const CANTOR_CONTENT_GOLDEN: f64 = 0.8692922595473366;

    #[test]
    fn cantor_content_small_exponent_side() {
        let c = cantor_1d(1.0 / 3.0, 8).unwrap();
        let v = dyadic_content(&c, 0.9, c.scale().level());
        assert!(v <= 256.0 * 3f64.powf(-8.0 * 0.9));
        assert!(v < 0.1);
    }

    #[test]
    fn content_monotone() {
        let c = cantor_1d(1.0 / 3.0, 6).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=10 {
            let v = dyadic_content(&c, i as f64 / 10.0, 10);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for m in 0..=12 {
            let v = dyadic_content(&c, 0.6, m);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn json_roundtrip() {
        let p = arc(cantor_1d(1.0 / 3.0, 5).unwrap());
        let c = greedy_cover(p.clone(), 0.7, 1.0, 1).unwrap();
        let text = serde_json::to_string(&c.to_json()).unwrap();
        let back: CoveringJson = serde_json::from_str(&text).unwrap();
        let c2 = Covering::from_json(&back, p, 1).unwrap();
        assert_eq!(c.cubes().collect::<Vec<_>>(), c2.cubes().collect::<Vec<_>>());
    }
}
