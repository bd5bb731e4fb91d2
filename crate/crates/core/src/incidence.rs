//! Slab families, heavy balls and the incidence bound
//! (#Θ)⁴ #H ≤ C δ^{-(2t + s + 2 + ε)}.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covering::Covering;
use crate::curve::{direction_net, Curve, DirectionNet};
use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::fractal::{extract_delta_s_set, Cell, PointSet};
use crate::vec3::{self, Vec3};

/// Constant for the two slab-family conditions.
pub const FAMILY_CONSTANT: f64 = 64.0;

/// Default ceiling on the fitted constant before a run counts as a violation.
pub const DEFAULT_CEILING: f64 = 65536.0;

pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    UnitScale,
    Rescaled,
}

/// {x : |x·γ(θ) - offset| <= thickness/2, |x| <= extent}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub theta: f64,
    pub offset: f64,
    pub thickness: f64,
    pub extent: f64,
}

impl Slab {
    pub fn contains(&self, gamma: &Vec3, x: &Vec3) -> bool {
        (vec3::dot(x, gamma) - self.offset).abs() <= 0.5 * self.thickness
            && vec3::dot(x, x) <= self.extent * self.extent
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyValidation {
    /// #slabs / (extent/thickness)^s
    pub count_ratio: f64,
    /// worst #{S : S ∩ B_r ≠ ∅} / (r/thickness)^s
    pub ball_condition_worst: f64,
    /// center (along γ) and diameter of the worst ball
    pub witness_center: f64,
    pub witness_diameter: f64,
    pub count_ok: bool,
    pub ball_ok: bool,
}

impl FamilyValidation {
    pub fn valid(&self) -> bool {
        self.count_ok && self.ball_ok
    }
}

/// Slabs normal to one direction γ(θ), sorted by offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabFamily {
    pub theta: f64,
    pub gamma: Vec3,
    pub slabs: Vec<Slab>,
    pub s: f64,
    pub validation: FamilyValidation,
}

impl SlabFamily {
    /// Sorts the slabs and runs both family conditions.
    pub fn new(theta: f64, gamma: Vec3, mut slabs: Vec<Slab>, s: f64) -> Result<Self> {
        if slabs.iter().any(|sl| sl.offset.abs() > sl.extent || !(sl.thickness > 0.0)) {
            return Err(Error::Config("slab offset beyond its extent or nonpositive thickness".into()));
        }
        slabs.sort_by(|a, b| a.offset.total_cmp(&b.offset));
        let validation = validate_family(&slabs, s);
        Ok(SlabFamily { theta, gamma, slabs, s, validation })
    }

    pub fn len(&self) -> usize {
        self.slabs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slabs.is_empty()
    }
}

/// Condition (1) on the count and condition (2) by an exact sliding scan: a
/// ball of diameter r centered at p meets S iff |p·γ - c| <= (w + r)/2, so the
/// worst ball holds the offsets of a closed window of length w + r anchored at
/// an offset.
fn validate_family(slabs: &[Slab], s: f64) -> FamilyValidation {
    let mut v = FamilyValidation {
        count_ratio: 0.0,
        ball_condition_worst: 0.0,
        witness_center: 0.0,
        witness_diameter: 0.0,
        count_ok: true,
        ball_ok: true,
    };
    let Some(first) = slabs.first() else { return v };
    let w = slabs.iter().map(|sl| sl.thickness).fold(0.0, f64::max);
    let extent = first.extent;
    let span = (extent / w).log2().ceil().max(0.0) as u32;
    v.count_ratio = slabs.len() as f64 / (extent / w).powf(s);
    let offsets: Vec<f64> = slabs.iter().map(|sl| sl.offset).collect();
    for j in 0..=span {
        let r = w * (j as f64).exp2();
        let len = w + r;
        let denom = (j as f64 * s).exp2();
        let mut hi = 0;
        for lo in 0..offsets.len() {
            hi = hi.max(lo);
            while hi < offsets.len() && offsets[hi] <= offsets[lo] + len {
                hi += 1;
            }
            let ratio = (hi - lo) as f64 / denom;
            if ratio > v.ball_condition_worst {
                v.ball_condition_worst = ratio;
                v.witness_center = offsets[lo] + 0.5 * len;
                v.witness_diameter = r;
            }
        }
    }
    v.count_ok = v.count_ratio <= FAMILY_CONSTANT;
    v.ball_ok = v.ball_condition_worst <= FAMILY_CONSTANT;
    v
}

/// One slab per interval of a single-level covering of l_θ.
pub fn slabs_from_covering(cov: &Covering, theta: f64, curve: &Curve, mode: Mode) -> Result<SlabFamily> {
    if cov.dim() != 1 {
        return Err(Error::Config("slabs come from a covering of a line".into()));
    }
    let levels = cov.levels();
    if levels.len() > 1 {
        return Err(Error::Config(format!(
            "covering spans levels {levels:?}; slice a single level first"
        )));
    }
    let gamma = curve.eval(theta)?;
    let Some(&j) = levels.first() else {
        return SlabFamily::new(theta, gamma, Vec::new(), cov.s());
    };
    let side = Dyadic::from_level(j).delta();
    let (unit, extent) = match mode {
        Mode::UnitScale => (1.0, 1.0),
        Mode::Rescaled => (Dyadic::from_level(j).inverse(), Dyadic::from_level(j).inverse()),
    };
    let slabs = cov
        .level(j)
        .map(|c| Slab {
            theta,
            offset: (c.index[0] as f64 + 0.5) * side * unit,
            thickness: side * unit,
            extent,
        })
        .collect();
    SlabFamily::new(theta, gamma, slabs, cov.s())
}

#[derive(Clone, Debug)]
pub struct IncidenceConfig {
    pub delta: Dyadic,
    pub mode: Mode,
    pub s: f64,
    pub t: f64,
    pub net: DirectionNet,
    pub families: Vec<SlabFamily>,
    /// Ball centers; δ-lattice cells at unit scale, unit cells when rescaled.
    pub balls: PointSet,
}

impl IncidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.len() != self.net.len() {
            return Err(Error::Inconsistency(format!(
                "{} families for {} directions",
                self.families.len(),
                self.net.len()
            )));
        }
        if let Some((i, f)) = self.families.iter().enumerate().find(|(_, f)| !f.validation.valid()) {
            return Err(Error::Precondition(format!(
                "slab family {i} (θ = {}) fails its conditions: {:?}",
                f.theta, f.validation
            )));
        }
        Ok(())
    }

    pub fn with_balls(&self, balls: PointSet) -> Self {
        IncidenceConfig { balls, ..self.clone() }
    }

    /// #U_x threshold (log₂ δ⁻¹)⁻² #Θ.
    pub fn heavy_threshold(&self) -> f64 {
        self.delta.log_loss() * self.net.len() as f64
    }
}

/// Per-family membership lookup equivalent to testing every slab.
struct FamilyIndex {
    gamma: Vec3,
    extent2: f64,
    half: f64,
    offsets: Vec<f64>,
    lattice: Option<Lattice>,
}

/// Offsets c0 + n·w for the n with `present[n] == 1`; the first and last
/// entries are always empty guards.
struct Lattice {
    c0: f64,
    w: f64,
    inv_w: f64,
    top: f64,
    present: Vec<u8>,
}

impl FamilyIndex {
    fn new(f: &SlabFamily) -> Self {
        let offsets: Vec<f64> = f.slabs.iter().map(|s| s.offset).collect();
        let extent = f.slabs.first().map_or(0.0, |s| s.extent);
        let w = f.slabs.first().map_or(1.0, |s| s.thickness);
        let uniform = f.slabs.iter().all(|s| s.thickness == w && s.extent == extent);
        let lattice = if uniform && !offsets.is_empty() {
            let c0 = offsets[0] - w;
            let steps: Vec<f64> = offsets.iter().map(|c| (c - c0) / w).collect();
            let n_max = *steps.last().expect("nonempty");
            if steps.iter().all(|x| x.fract() == 0.0) && n_max <= 1e7 {
                let mut present = vec![0u8; n_max as usize + 2];
                for x in steps {
                    present[x as usize] = 1;
                }
                let top = (present.len() - 1) as f64;
                Some(Lattice { c0, w, inv_w: 1.0 / w, top, present })
            } else {
                None
            }
        } else {
            None
        };
        FamilyIndex {
            gamma: f.gamma,
            extent2: extent * extent,
            half: 0.5 * w,
            offsets,
            lattice,
        }
    }

    #[inline]
    fn contains(&self, x: &Vec3, norm2: f64) -> bool {
        if self.offsets.is_empty() || norm2 > self.extent2 {
            return false;
        }
        let v = vec3::dot(x, &self.gamma);
        match &self.lattice {
            Some(l) => {
                let y = ((v - l.c0) * l.inv_w + 0.5).clamp(0.0, l.top);
                let n = y as usize;
                let hit = |m: usize| l.present[m] & (((v - (l.c0 + m as f64 * l.w)).abs() <= self.half) as u8) != 0;
                let f = y - n as f64;
                if f > 1e-6 && f < 1.0 - 1e-6 {
                    return hit(n);
                }
                // near a slab boundary a neighbour may also qualify
                hit(n) || (n > 0 && hit(n - 1)) || (n + 1 < l.present.len() && hit(n + 1))
            }
            None => {
                let i = self.offsets.partition_point(|&c| c < v - self.half);
                self.offsets.get(i).is_some_and(|&c| (v - c).abs() <= self.half)
            }
        }
    }
}

/// Sparse ball × direction relation in row-compressed form.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix {
    pub n_balls: usize,
    pub n_thetas: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

impl IncidenceMatrix {
    /// Directions θ with (x, θ) ∈ U.
    pub fn row(&self, ball: usize) -> &[u32] {
        &self.cols[self.row_ptr[ball]..self.row_ptr[ball + 1]]
    }

    pub fn row_counts(&self) -> Vec<usize> {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn column_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_thetas];
        for &j in &self.cols {
            c[j as usize] += 1;
        }
        c
    }

    /// #U.
    pub fn total(&self) -> usize {
        self.cols.len()
    }
}

fn ball_points(balls: &PointSet) -> Vec<(Vec3, f64)> {
    balls.points().map(|p| (p, vec3::dot(&p, &p))).collect()
}

const CHUNK: usize = 1 << 14;

/// Exact membership for every (ball, direction) pair.
pub fn incidence_count(cfg: &IncidenceConfig) -> IncidenceMatrix {
    let index: Vec<FamilyIndex> = cfg.families.iter().map(FamilyIndex::new).collect();
    let pts = ball_points(&cfg.balls);
    let chunks: Vec<(Vec<usize>, Vec<u32>)> = pts
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut counts = Vec::with_capacity(chunk.len());
            let mut cols = Vec::new();
            let mut row = vec![0u32; index.len()];
            for (x, n2) in chunk {
                let mut c = 0;
                for (j, f) in index.iter().enumerate() {
                    row[c] = j as u32;
                    c += f.contains(x, *n2) as usize;
                }
                cols.extend_from_slice(&row[..c]);
                counts.push(c);
            }
            (counts, cols)
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(pts.len() + 1);
    row_ptr.push(0);
    let mut cols = Vec::with_capacity(chunks.iter().map(|c| c.1.len()).sum());
    for (counts, c) in chunks {
        for n in counts {
            let last = *row_ptr.last().expect("nonempty");
            row_ptr.push(last + n);
        }
        cols.extend_from_slice(&c);
    }
    IncidenceMatrix {
        n_balls: pts.len(),
        n_thetas: index.len(),
        row_ptr,
        cols,
    }
}

/// #U_θ per direction by a direction-major pass over blocks of balls,
/// independent of the matrix.
pub fn column_counts(cfg: &IncidenceConfig) -> Vec<usize> {
    let index: Vec<FamilyIndex> = cfg.families.iter().map(FamilyIndex::new).collect();
    let pts = ball_points(&cfg.balls);
    let partial: Vec<Vec<usize>> = pts
        .par_chunks(CHUNK)
        .map(|chunk| {
            index
                .iter()
                .map(|f| chunk.iter().filter(|(x, n2)| f.contains(x, *n2)).count())
                .collect()
        })
        .collect();
    let mut out = vec![0; index.len()];
    for p in partial {
        for (o, c) in out.iter_mut().zip(p) {
            *o += c;
        }
    }
    out
}

/// Balls with #U_x >= (log₂ δ⁻¹)⁻² #Θ.
pub fn heavy_subset(m: &IncidenceMatrix, cfg: &IncidenceConfig) -> Result<PointSet> {
    let threshold = cfg.heavy_threshold();
    let counts = m.row_counts();
    cfg.balls.filter(|i, _| counts[i] as f64 >= threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidenceReport {
    pub lhs: f64,
    pub rhs: f64,
    #[serde(rename = "fitted_C")]
    pub fitted_c: f64,
    pub heavy_count: usize,
    pub theta_count: usize,
    pub exponent: f64,
    pub violation: bool,
    /// min over balls of #U_x / #Θ
    pub min_ratio: f64,
    pub incidences: usize,
}

/// lhs = (#Θ)⁴ #H against δ^{-(2t + s + 2 + ε)}.
pub fn verify_incidence_bound(cfg: &IncidenceConfig, epsilon: f64, ceiling: f64) -> Result<IncidenceReport> {
    cfg.validate()?;
    verify_with_matrix(cfg, &incidence_count(cfg), epsilon, ceiling)
}

/// [`verify_incidence_bound`] for a matrix already computed from `cfg`.
pub fn verify_with_matrix(
    cfg: &IncidenceConfig,
    m: &IncidenceMatrix,
    epsilon: f64,
    ceiling: f64,
) -> Result<IncidenceReport> {
    cfg.validate()?;
    if m.n_balls != cfg.balls.len() || m.n_thetas != cfg.net.len() {
        return Err(Error::Inconsistency("matrix does not match the configuration".into()));
    }
    let threshold = cfg.heavy_threshold();
    let n_theta = cfg.net.len();
    let counts = m.row_counts();
    if let Some((i, &c)) = counts.iter().enumerate().find(|(_, &c)| (c as f64) < threshold) {
        let cell = cfg.balls.cells()[i];
        return Err(Error::Precondition(format!(
            "ball {:?} meets {c} slab families, below the threshold {threshold:.3}",
            cell
        )));
    }
    let exponent = 2.0 * cfg.t + cfg.s + 2.0 + epsilon;
    let lhs = (n_theta as f64).powi(4) * cfg.balls.len() as f64;
    let rhs = (cfg.delta.log2_inv() * exponent).exp2();
    let fitted_c = lhs / rhs;
    let min_ratio = if n_theta == 0 {
        0.0
    } else {
        counts.iter().copied().min().unwrap_or(0) as f64 / n_theta as f64
    };
    Ok(IncidenceReport {
        lhs,
        rhs,
        fitted_c,
        heavy_count: cfg.balls.len(),
        theta_count: n_theta,
        exponent,
        violation: fitted_c > ceiling,
        min_ratio,
        incidences: m.total(),
    })
}

/// Rescales x ↦ δ⁻¹x: unit-thickness slabs of extent δ⁻¹, unit-cell balls.
pub fn rescale_config(cfg: &IncidenceConfig) -> Result<IncidenceConfig> {
    if cfg.mode != Mode::UnitScale {
        return Err(Error::Precondition("configuration is already rescaled".into()));
    }
    let inv = cfg.delta.inverse();
    let families = cfg
        .families
        .iter()
        .map(|f| {
            let slabs = f
                .slabs
                .iter()
                .map(|sl| Slab {
                    theta: sl.theta,
                    offset: sl.offset * inv,
                    thickness: sl.thickness * inv,
                    extent: sl.extent * inv,
                })
                .collect();
            SlabFamily::new(f.theta, f.gamma, slabs, f.s)
        })
        .collect::<Result<_>>()?;
    let cells = cfg.balls.cells().to_vec();
    let balls = PointSet::new(cfg.balls.dim(), Dyadic::from_level(0), cells, cfg.balls.nominal_dim())?;
    Ok(IncidenceConfig {
        mode: Mode::Rescaled,
        families,
        balls,
        ..cfg.clone()
    })
}

/// Lattice points of the closed ball B(0, 1) at scale δ with at least
/// `threshold` incidences, computed without materializing the whole ball.
pub fn heavy_lattice_balls(families: &[SlabFamily], scale: Dyadic, threshold: f64) -> Result<PointSet> {
    let index: Vec<FamilyIndex> = families.iter().map(FamilyIndex::new).collect();
    let n = 1i64 << scale.level();
    let d = scale.delta();
    let need = threshold.max(1.0).ceil() as usize;
    let slices: Vec<Vec<Cell>> = (-n..=n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in -n..=n {
                let rem = n * n - i * i - j * j;
                if rem < 0 {
                    continue;
                }
                let zmax = (rem as f64).sqrt() as i64;
                let zmax = if (zmax + 1) * (zmax + 1) <= rem { zmax + 1 } else { zmax };
                for k in -zmax..=zmax {
                    let x = [i as f64 * d, j as f64 * d, k as f64 * d];
                    let n2 = vec3::dot(&x, &x);
                    if index.iter().filter(|f| f.contains(&x, n2)).take(need).count() == need {
                        out.push([i, j, k]);
                    }
                }
            }
            out
        })
        .collect();
    let cells: Vec<Cell> = slices.into_iter().flatten().collect();
    PointSet::new(3, scale, cells, 3.0)
}

/// Seeded admissible configuration: a (δ, t) direction net, per direction a
/// slab family whose offsets form a (δ, s)-subset of the δ-grid of [-1, 1]
/// (randomly weighted extraction), and H = all heavy δ-lattice balls.
pub fn random_config(curve: &Curve, scale: Dyadic, s: f64, t: f64, seed: u64) -> Result<IncidenceConfig> {
    let net = direction_net(curve, scale, t, seed)?;
    let n = 1i64 << scale.level();
    let grid: Vec<Cell> = (-n..=n).map(|i| [i, 0, 0]).collect();
    let d = scale.delta();
    let families = net
        .thetas()
        .iter()
        .enumerate()
        .map(|(idx, &theta)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(idx as u64 + 1)));
            let weights: Vec<f64> = grid.iter().map(|_| rng.gen::<f64>()).collect();
            let line = PointSet::with_weights(1, scale, grid.clone(), weights, 1.0)?;
            let chosen = extract_delta_s_set(&line, s, 1.0)?;
            let slabs = chosen
                .cells()
                .iter()
                .map(|c| Slab {
                    theta,
                    offset: c[0] as f64 * d,
                    thickness: d,
                    extent: 1.0,
                })
                .collect();
            SlabFamily::new(theta, curve.eval(theta)?, slabs, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let threshold = scale.log_loss() * net.len() as f64;
    let balls = heavy_lattice_balls(&families, scale, threshold)?;
    Ok(IncidenceConfig {
        delta: scale,
        mode: Mode::UnitScale,
        s,
        t,
        net,
        families,
        balls,
    })
}
