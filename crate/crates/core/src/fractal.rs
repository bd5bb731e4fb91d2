//! δ-discretized point sets: generators, Frostman-style weights, and
//! (δ, s)-set extraction and validation.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};

/// Largest number of cells a point set may hold.
pub const MAX_CELLS: usize = 1 << 24;

/// Implied constant of the (δ, s)-set condition used for validity verdicts:
/// a ball of diameter r meets at most 2^d dyadic cubes of side r.
pub fn delta_set_constant(dim: usize) -> f64 {
    (1u32 << dim) as f64
}

/// Lattice index of a cell; unused trailing coordinates are zero.
pub type Cell = [i64; 3];

/// A finite subset of the δ-lattice δ·Z^d, d ∈ {1, 2, 3}.
///
/// Cell `i` stands for the point `i·δ`. Cells are kept sorted
/// lexicographically and distinct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    scale: Dyadic,
    cells: Vec<Cell>,
    weights: Option<Vec<f64>>,
    nominal_dim: f64,
    frostman_c: Option<f64>,
}

impl PointSet {
    /// Builds a set from arbitrary cells; duplicates are merged (weights summed).
    pub fn new(dim: usize, scale: Dyadic, cells: Vec<Cell>, nominal_dim: f64) -> Result<Self> {
        Self::build(dim, scale, cells, None, nominal_dim)
    }

    pub fn with_weights(
        dim: usize,
        scale: Dyadic,
        cells: Vec<Cell>,
        weights: Vec<f64>,
        nominal_dim: f64,
    ) -> Result<Self> {
        if weights.len() != cells.len() {
            return Err(Error::Config("one weight per cell required".into()));
        }
        Self::build(dim, scale, cells, Some(weights), nominal_dim)
    }

    fn build(
        dim: usize,
        scale: Dyadic,
        cells: Vec<Cell>,
        weights: Option<Vec<f64>>,
        nominal_dim: f64,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("ambient dimension {dim} not in 1..=3")));
        }
        if cells.len() > MAX_CELLS {
            return Err(Error::Capacity(format!("{} cells exceed the cap of {MAX_CELLS}", cells.len())));
        }
        if cells.iter().any(|c| c[dim..].iter().any(|&x| x != 0)) {
            return Err(Error::Config("cell has coordinates beyond the ambient dimension".into()));
        }
        let (cells, weights) = match weights {
            None => {
                let mut cells = cells;
                cells.sort_unstable();
                cells.dedup();
                (cells, None)
            }
            Some(w) => {
                if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::Config("weights must be finite and nonnegative".into()));
                }
                let mut pairs: Vec<(Cell, f64)> = cells.into_iter().zip(w).collect();
                pairs.sort_by_key(|p| p.0);
                let mut merged: Vec<(Cell, f64)> = Vec::with_capacity(pairs.len());
                for (c, w) in pairs {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += w,
                        _ => merged.push((c, w)),
                    }
                }
                let (c, w): (Vec<Cell>, Vec<f64>) = merged.into_iter().unzip();
                (c, Some(w))
            }
        };
        let mut set = PointSet {
            dim,
            scale,
            cells,
            weights: None,
            nominal_dim,
            frostman_c: None,
        };
        if let Some(w) = weights {
            set.attach_weights(w)?;
        }
        Ok(set)
    }

    /// Normalizes and attaches weights, recording the Frostman constant.
    fn attach_weights(&mut self, mut w: Vec<f64>) -> Result<()> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config("weights must have positive total mass".into()));
        }
        for x in &mut w {
            *x /= total;
        }
        self.weights = Some(w);
        self.frostman_c = Some(frostman_scan(self));
        Ok(())
    }

    /// Same cells with uniform probability weights.
    pub fn with_uniform_weights(mut self) -> Self {
        if !self.cells.is_empty() {
            let w = vec![1.0; self.cells.len()];
            // cannot fail: positive total, finite entries
            self.attach_weights(w).expect("uniform weights");
        }
        self
    }

    pub fn without_weights(mut self) -> Self {
        self.weights = None;
        self.frostman_c = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> Dyadic {
        self.scale
    }

    pub fn delta(&self) -> f64 {
        self.scale.delta()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn nominal_dim(&self) -> f64 {
        self.nominal_dim
    }

    /// Recorded constant C_f with weight(Q) <= C_f · side(Q)^nominal_dim for
    /// every dyadic cube Q of side in [δ, 1].
    pub fn frostman_constant(&self) -> Option<f64> {
        self.frostman_c
    }

    /// Coordinates of a cell's point.
    pub fn point(&self, cell: &Cell) -> [f64; 3] {
        let d = self.delta();
        [cell[0] as f64 * d, cell[1] as f64 * d, cell[2] as f64 * d]
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.cells.iter().map(move |c| self.point(c))
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        self.cells.binary_search(cell).is_ok()
    }

    /// Subset by a cell predicate, keeping weights (renormalized) if present.
    pub fn filter(&self, mut keep: impl FnMut(usize, &Cell) -> bool) -> Result<Self> {
        let mut cells = Vec::new();
        let mut weights = Vec::new();
        for (i, c) in self.cells.iter().enumerate() {
            if keep(i, c) {
                cells.push(*c);
                if let Some(w) = &self.weights {
                    weights.push(w[i]);
                }
            }
        }
        let mut out = PointSet {
            dim: self.dim,
            scale: self.scale,
            cells,
            weights: None,
            nominal_dim: self.nominal_dim,
            frostman_c: None,
        };
        if self.weights.is_some() && weights.iter().sum::<f64>() > 0.0 {
            out.attach_weights(weights)?;
        }
        Ok(out)
    }

    /// Writes the `dim,delta` header and one row per cell (coordinates, then
    /// the weight when present), in lexicographic lattice order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dim,delta")?;
        writeln!(out, "{},{}", self.dim, self.delta())?;
        for (i, c) in self.cells.iter().enumerate() {
            let p = self.point(c);
            let coords: Vec<String> = p[..self.dim].iter().map(|x| x.to_string()).collect();
            match &self.weights {
                Some(w) => writeln!(out, "{},{}", coords.join(","), w[i])?,
                None => writeln!(out, "{}", coords.join(","))?,
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty point set file".into()))??;
        if header.trim() != "dim,delta" {
            return Err(Error::Parse(format!("unexpected header '{header}'")));
        }
        let meta = lines.next().ok_or_else(|| Error::Parse("missing dim,delta row".into()))??;
        let mut fields = meta.split(',');
        let dim: usize = parse_field(fields.next())?;
        let delta: f64 = parse_field(fields.next())?;
        let scale = Dyadic::from_delta(delta)?;
        let inv = scale.inverse();
        let mut cells = Vec::new();
        let mut weights = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            if vals.len() != dim && vals.len() != dim + 1 {
                return Err(Error::Parse(format!("row '{line}' has {} fields", vals.len())));
            }
            let mut cell = [0i64; 3];
            for k in 0..dim {
                let x = vals[k] * inv;
                if (x - x.round()).abs() > 1e-6 {
                    return Err(Error::Parse(format!("coordinate {} is off the lattice", vals[k])));
                }
                cell[k] = x.round() as i64;
            }
            cells.push(cell);
            if vals.len() == dim + 1 {
                weights.push(vals[dim]);
            }
        }
        if weights.is_empty() {
            PointSet::new(dim, scale, cells, dim as f64)
        } else if weights.len() == cells.len() {
            PointSet::with_weights(dim, scale, cells, weights, dim as f64)
        } else {
            Err(Error::Parse("weights present on some rows only".into()))
        }
    }
}

fn parse_field<T: std::str::FromStr>(f: Option<&str>) -> Result<T> {
    f.and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse("malformed header row".into()))
}

/// Max over dyadic cubes Q (sides δ..1) of weight(Q) / side(Q)^nominal_dim.
fn frostman_scan(set: &PointSet) -> f64 {
    let Some(w) = &set.weights else { return 0.0 };
    let k = set.scale.level();
    let mut worst: f64 = 0.0;
    for m in 0..=k {
        let mut mass: HashMap<Cell, f64> = HashMap::new();
        for (c, &x) in set.cells.iter().zip(w) {
            *mass.entry(ancestor(c, m)).or_default() += x;
        }
        let side = (-((k - m) as f64)).exp2();
        let denom = side.powf(set.nominal_dim);
        for v in mass.values() {
            worst = worst.max(v / denom);
        }
    }
    worst
}

/// Index of the dyadic cube of side 2^shift·δ holding the cell.
#[inline]
pub fn ancestor(c: &Cell, shift: u32) -> Cell {
    [c[0] >> shift, c[1] >> shift, c[2] >> shift]
}

/// Scale nearest to `x` among powers of two, compared on a log scale.
fn nearest_dyadic(x: f64) -> Dyadic {
    Dyadic::from_level((-x.log2()).round().max(0.0) as u32)
}

/// Left endpoints of the stage-`depth` middle-(1 - 2·ratio) Cantor construction,
/// snapped to the dyadic lattice nearest to ratio^depth.
pub fn cantor_1d(ratio: f64, depth: u32) -> Result<PointSet> {
    if !(ratio > 0.0 && ratio <= 0.5) {
        return Err(Error::Config(format!("Cantor ratio {ratio} outside (0, 1/2]")));
    }
    if depth == 0 {
        return Err(Error::Config("Cantor depth must be at least 1".into()));
    }
    if depth >= 63 || (1usize << depth) > MAX_CELLS {
        return Err(Error::Capacity(format!("2^{depth} Cantor cells exceed the cap")));
    }
    let scale = nearest_dyadic(ratio.powi(depth as i32));
    let inv = scale.inverse();
    let gap = 1.0 - ratio;
    let cells = (0..1u64 << depth)
        .map(|bits| {
            // x = Σ_i b_i (1 - ratio) ratio^i, digits most significant first
            let mut x = 0.0;
            let mut r = 1.0;
            for i in (0..depth).rev() {
                if (bits >> i) & 1 == 1 {
                    x += gap * r;
                }
                r *= ratio;
            }
            [(x * inv).round() as i64, 0, 0]
        })
        .collect();
    let dim = std::f64::consts::LN_2 / (1.0 / ratio).ln();
    PointSet::new(1, scale, cells, dim)
}

/// The full δ-grid {0, δ, .., 1 - δ}^d of [0, 1)^d.
pub fn full_grid(dim: usize, scale: Dyadic) -> Result<PointSet> {
    let n = 1i64 << scale.level();
    let total = (n as f64).powi(dim as i32);
    if total > MAX_CELLS as f64 {
        return Err(Error::Capacity(format!("{total} grid cells exceed the cap")));
    }
    let mut cells = Vec::with_capacity(total as usize);
    let range = |k: usize| if k < dim { 0..n } else { 0..1 };
    for x in range(0) {
        for y in range(1) {
            for z in range(2) {
                cells.push([x, y, z]);
            }
        }
    }
    PointSet::new(dim, scale, cells, dim as f64)
}

/// Lattice points of the closed unit ball B^d(0, 1).
pub fn grid_ball(dim: usize, scale: Dyadic) -> Result<PointSet> {
    let n = 1i64 << scale.level();
    let total = (2.0 * n as f64 + 1.0).powi(dim as i32);
    if total > 4.0 * MAX_CELLS as f64 {
        return Err(Error::Capacity(format!("ball at level {} is too large", scale.level())));
    }
    let r = |k: usize| if k < dim { -n..=n } else { 0..=0 };
    let mut cells = Vec::new();
    for x in r(0) {
        for y in r(1) {
            for z in r(2) {
                if x * x + y * y + z * z <= n * n {
                    cells.push([x, y, z]);
                }
            }
        }
    }
    PointSet::new(dim, scale, cells, dim as f64)
}

/// Cartesian product of three one-dimensional sets in [0, 1), translated by
/// -1/2 per axis so the product lies in B³(0, 1). Carries uniform weights.
pub fn product_set(sx: &PointSet, sy: &PointSet, sz: &PointSet) -> Result<PointSet> {
    let factors = [sx, sy, sz];
    if factors.iter().any(|f| f.dim != 1) {
        return Err(Error::Config("product factors must be one-dimensional".into()));
    }
    if factors.iter().any(|f| f.scale != sx.scale) {
        return Err(Error::Config("product factors must share a scale".into()));
    }
    let total = sx.len() as f64 * sy.len() as f64 * sz.len() as f64;
    if total > MAX_CELLS as f64 {
        return Err(Error::Capacity(format!("{total} product cells exceed the cap")));
    }
    let half = if sx.scale.level() == 0 { 0 } else { 1i64 << (sx.scale.level() - 1) };
    let mut cells = Vec::with_capacity(total as usize);
    for a in &sx.cells {
        for b in &sy.cells {
            for c in &sz.cells {
                cells.push([a[0] - half, b[0] - half, c[0] - half]);
            }
        }
    }
    let nominal = sx.nominal_dim + sy.nominal_dim + sz.nominal_dim;
    Ok(PointSet::new(3, sx.scale, cells, nominal)?.with_uniform_weights())
}

/// A similarity x ↦ ratio · R x + shift on R^d (only the first d coordinates
/// are used).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub ratio: f64,
    pub rotation: [[f64; 3]; 3],
    pub shift: [f64; 3],
}

impl Similarity {
    pub fn homothety(ratio: f64, shift: [f64; 3]) -> Self {
        Similarity {
            ratio,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            shift,
        }
    }

    fn apply(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut y = self.shift;
        for (i, yi) in y.iter_mut().enumerate() {
            let rx: f64 = (0..3).map(|j| self.rotation[i][j] * x[j]).sum();
            *yi += self.ratio * rx;
        }
        y
    }
}

/// Solves Σ rᵢ^s = 1 for the similarity dimension s.
pub fn similarity_dimension(ratios: &[f64]) -> f64 {
    if ratios.len() <= 1 {
        return 0.0;
    }
    if ratios.windows(2).all(|w| w[0] == w[1]) {
        return (ratios.len() as f64).ln() / (1.0 / ratios[0]).ln();
    }
    let f = |s: f64| ratios.iter().map(|r| r.powf(s)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// δ-cells hit by all `depth`-fold compositions of the maps, applied to the
/// lattice origin (the fixed point of a map with zero shift).
pub fn ifs_attractor(dim: usize, maps: &[Similarity], depth: u32, scale: Dyadic) -> Result<PointSet> {
    if maps.is_empty() {
        return Err(Error::Config("IFS needs at least one map".into()));
    }
    if let Some(m) = maps.iter().find(|m| !(m.ratio > 0.0 && m.ratio < 1.0)) {
        return Err(Error::Config(format!("map with ratio {} is not contracting", m.ratio)));
    }
    let max_ratio = maps.iter().map(|m| m.ratio).fold(0.0, f64::max);
    if max_ratio.powi(depth as i32) > scale.delta() {
        return Err(Error::Config(format!(
            "depth {depth} does not resolve scale {}",
            scale.delta()
        )));
    }
    let count = (maps.len() as f64).powi(depth as i32);
    if count > MAX_CELLS as f64 {
        return Err(Error::Capacity(format!("{count} compositions exceed the cap")));
    }
    let mut pts = vec![[0.0f64; 3]];
    for _ in 0..depth {
        pts = maps.iter().flat_map(|m| pts.iter().map(move |p| m.apply(p))).collect();
    }
    let inv = scale.inverse();
    let cells = pts
        .iter()
        .map(|p| {
            let mut c = [0i64; 3];
            for k in 0..dim {
                c[k] = (p[k] * inv).round() as i64;
            }
            c
        })
        .collect();
    let ratios: Vec<f64> = maps.iter().map(|m| m.ratio).collect();
    PointSet::new(dim, scale, cells, similarity_dimension(&ratios))
}

/// Outcome of a (δ, s)-set scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSetReport {
    pub valid: bool,
    pub worst_constant: f64,
    /// Center cell and diameter (in units of δ) of the worst ball.
    pub witness_center: Cell,
    pub witness_diameter: i64,
    pub witness_count: usize,
}

/// Scans all dyadic diameters r ∈ [δ, 1] and all ball centers on the
/// δ-lattice; the ratio is |P ∩ B| / (r/δ)^s for the closed ball B of
/// diameter r. Valid iff the worst ratio is at most [`delta_set_constant`].
pub fn validate_delta_s_set(p: &PointSet, s: f64) -> DeltaSetReport {
    let k = p.scale.level();
    let mut report = DeltaSetReport {
        valid: true,
        worst_constant: 0.0,
        witness_center: [0; 3],
        witness_diameter: 1,
        witness_count: 0,
    };
    if p.is_empty() {
        return report;
    }
    for j in 0..=k {
        let diameter = 1i64 << j;
        let denom = (j as f64 * s).exp2();
        let (count, center) = if p.dim == 1 {
            max_count_1d(&p.cells, diameter)
        } else {
            max_count_nd(p, diameter)
        };
        let ratio = count as f64 / denom;
        if ratio > report.worst_constant {
            report.worst_constant = ratio;
            report.witness_center = center;
            report.witness_diameter = diameter;
            report.witness_count = count;
        }
    }
    report.valid = report.worst_constant <= delta_set_constant(p.dim);
    report
}

/// Max number of points in a closed interval of length `diameter` centered on
/// a lattice point (radius diameter/2, rounded down to the lattice).
fn max_count_1d(cells: &[Cell], diameter: i64) -> (usize, Cell) {
    // Center c covers [c - R, c + R] with R = floor(diameter / 2). The best
    // window [a, a + 2R] can start at a point of the set.
    let radius = diameter / 2;
    let xs: Vec<i64> = cells.iter().map(|c| c[0]).collect();
    let mut best = (0usize, [0i64; 3]);
    let mut hi = 0;
    for lo in 0..xs.len() {
        if hi < lo {
            hi = lo;
        }
        while hi < xs.len() && xs[hi] <= xs[lo] + 2 * radius {
            hi += 1;
        }
        if hi - lo > best.0 {
            best = (hi - lo, [xs[lo] + radius, 0, 0]);
        }
    }
    best
}

/// Brute-force ball scan for d >= 2 over every lattice center within reach of
/// some cell, using a bucket grid of side `diameter`.
fn max_count_nd(p: &PointSet, diameter: i64) -> (usize, Cell) {
    let dim = p.dim;
    let radius = diameter / 2;
    let r2 = radius * radius;
    let side = diameter.max(1);
    let mut buckets: HashMap<Cell, Vec<Cell>> = HashMap::new();
    for c in &p.cells {
        let mut b = [0i64; 3];
        for k in 0..dim {
            b[k] = c[k].div_euclid(side);
        }
        buckets.entry(b).or_default().push(*c);
    }
    let mut centers: Vec<Cell> = Vec::new();
    {
        let mut seen = std::collections::HashSet::new();
        for c in &p.cells {
            for_each_offset(dim, radius, |o| {
                if o[0] * o[0] + o[1] * o[1] + o[2] * o[2] <= r2 {
                    let q = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
                    if seen.insert(q) {
                        centers.push(q);
                    }
                }
            });
        }
    }
    centers.sort_unstable();
    let mut best = (0usize, [0i64; 3]);
    for q in centers {
        let mut qb = [0i64; 3];
        for k in 0..dim {
            qb[k] = q[k].div_euclid(side);
        }
        let mut count = 0;
        for_each_offset(dim, 1, |o| {
            let b = [qb[0] + o[0], qb[1] + o[1], qb[2] + o[2]];
            if let Some(cs) = buckets.get(&b) {
                for c in cs {
                    let d = [c[0] - q[0], c[1] - q[1], c[2] - q[2]];
                    if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2 {
                        count += 1;
                    }
                }
            }
        });
        if count > best.0 {
            best = (count, q);
        }
    }
    best
}

fn for_each_offset(dim: usize, r: i64, mut f: impl FnMut([i64; 3])) {
    let span = |k: usize| if k < dim { -r..=r } else { 0..=0 };
    for x in span(0) {
        for y in span(1) {
            for z in span(2) {
                f([x, y, z]);
            }
        }
    }
}

/// Extracts a (δ, s)-subset by greedy dyadic-tree pruning.
///
/// Every dyadic cube of side 2^m·δ may keep at most ⌊2^{m s}⌋ cells. The
/// number of cells each subtree can keep is computed bottom-up; quotas are
/// then handed out top-down, heaviest subtrees first (weight, then cell
/// count, then lexicographic order). A set that already passes
/// [`validate_delta_s_set`] is returned unchanged.
pub fn extract_delta_s_set(p: &PointSet, s: f64, kappa: f64) -> Result<PointSet> {
    if !(0.0..=p.dim as f64).contains(&s) {
        return Err(Error::Domain(format!("exponent {s} outside [0, {}]", p.dim)));
    }
    if !(kappa > 0.0) {
        return Err(Error::Domain("content estimate must be positive".into()));
    }
    let required = kappa * (s * p.scale.log2_inv()).exp2() / 64.0;
    let check = |n: usize| -> Result<()> {
        if (n as f64) < required {
            Err(Error::Infeasible(format!(
                "extracted {n} cells, content estimate requires {required:.3}"
            )))
        } else {
            Ok(())
        }
    };

    let keep = prune(p, s);
    if keep.iter().all(|&k| k) {
        check(p.len())?;
        return Ok(p.clone());
    }
    if validate_delta_s_set(p, s).valid {
        check(p.len())?;
        return Ok(p.clone());
    }
    let out = p.filter(|i, _| keep[i])?;
    check(out.len())?;
    Ok(out)
}

/// Returns a keep-flag per cell.
fn prune(p: &PointSet, s: f64) -> Vec<bool> {
    let k = p.scale.level();
    let weight = |i: usize| p.weights.as_ref().map_or(1.0, |w| w[i]);

    // Per level m (cube side 2^m δ), node -> (capacity, weight, children).
    // Level 0 nodes are the cells themselves.
    struct Node {
        achievable: usize,
        weight: f64,
        children: Vec<usize>,
    }
    let mut levels: Vec<Vec<(Cell, Node)>> = Vec::with_capacity(k as usize + 1);
    levels.push(
        p.cells
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, Node { achievable: 1, weight: weight(i), children: vec![i] }))
            .collect(),
    );
    for m in 1..=k {
        let cap = crate::spacing::window_cap(m, s);
        let below = &levels[m as usize - 1];
        let mut index: HashMap<Cell, usize> = HashMap::new();
        let mut nodes: Vec<(Cell, Node)> = Vec::new();
        for (ci, (c, child)) in below.iter().enumerate() {
            let a = ancestor(c, 1);
            let slot = *index.entry(a).or_insert_with(|| {
                nodes.push((a, Node { achievable: 0, weight: 0.0, children: Vec::new() }));
                nodes.len() - 1
            });
            let n = &mut nodes[slot].1;
            n.achievable += child.achievable;
            n.weight += child.weight;
            n.children.push(ci);
        }
        for (_, n) in &mut nodes {
            n.achievable = n.achievable.min(cap);
        }
        levels.push(nodes);
    }

    // Top-down quota distribution.
    let mut keep = vec![false; p.len()];
    let top = k as usize;
    let mut quotas: Vec<usize> = levels[top].iter().map(|(_, n)| n.achievable).collect();
    for m in (1..=top).rev() {
        let mut child_quota = vec![0usize; levels[m - 1].len()];
        for (ni, (_, node)) in levels[m].iter().enumerate() {
            let mut remaining = quotas[ni];
            let mut order = node.children.clone();
            let below = &levels[m - 1];
            order.sort_by(|&a, &b| {
                let (ca, na) = &below[a];
                let (cb, nb) = &below[b];
                nb.achievable
                    .cmp(&na.achievable)
                    .then(nb.weight.total_cmp(&na.weight))
                    .then(ca.cmp(cb))
            });
            for c in order {
                let give = below[c].1.achievable.min(remaining);
                child_quota[c] = give;
                remaining -= give;
            }
        }
        quotas = child_quota;
    }
    for (i, q) in quotas.iter().enumerate() {
        if *q > 0 {
            // level 0 node i has a single child: the cell itself
            keep[levels[0][i].1.children[0]] = true;
        }
    }
    keep
}
