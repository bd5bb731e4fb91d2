//! Caps, planks, tubes and envelope boxes over the scaled cone
//! {FREQ_SCALE · r γ(θ) : r_min <= r <= 1, 0 <= θ <= 1}.

use serde::{Deserialize, Serialize};

use super::grid::{frequency, GRID_SIDES};
use super::FREQ_SCALE;
use crate::curve::{nondegeneracy_margin, Curve, ADMISSIBILITY_SAMPLES};
use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

/// Assignment entry of a lattice point outside the neighborhood.
pub const NO_CAP: u32 = u32::MAX;

/// θ samples per cap used for the coarse distance pass.
const SUBSAMPLES: usize = 16;
const REFINE_STEPS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadialFloor {
    /// r ∈ [1/2, 1], one shell
    Half,
    /// r ∈ [1/K, 1] split into dyadic shells [2^-j-1, 2^-j]
    InverseK(u64),
}

impl RadialFloor {
    pub fn value(&self) -> f64 {
        match self {
            RadialFloor::Half => 0.5,
            RadialFloor::InverseK(k) => 1.0 / *k as f64,
        }
    }

    pub fn shells(&self) -> usize {
        match self {
            RadialFloor::Half => 1,
            RadialFloor::InverseK(k) => k.trailing_zeros() as usize,
        }
    }

    fn shell_range(&self, shell: usize) -> [f64; 2] {
        match self {
            RadialFloor::Half => [0.5, 1.0],
            RadialFloor::InverseK(_) => [(-(shell as f64) - 1.0).exp2(), (-(shell as f64)).exp2()],
        }
    }
}

/// θ-bin [dir·δ, (dir+1)·δ) of one radial shell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub index: usize,
    pub dir: usize,
    pub shell: usize,
    pub theta: [f64; 2],
    pub radius: [f64; 2],
    pub sigma: usize,
    /// lattice points assigned to this cap
    pub points: usize,
}

/// Run of consecutive direction bins `dirs[0]..dirs[1]` over the full radial
/// span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plank {
    pub index: usize,
    pub theta: [f64; 2],
    pub dirs: [usize; 2],
}

/// The planks τ_s of angular width s, with the frame (γ̂, t, n) at each plank
/// center used to orient envelope boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauFamily {
    pub s: f64,
    pub level: u32,
    pub planks: Vec<Plank>,
    /// τ containing each σ plank
    pub sigma_parent: Vec<usize>,
    frames: Vec<[Vec3; 3]>,
}

#[derive(Clone, Debug)]
pub struct ConeGeometry {
    curve: Curve,
    scale: Dyadic,
    m: usize,
    floor: RadialFloor,
    caps: Vec<Cap>,
    sigma: Vec<Plank>,
    tau: Vec<TauFamily>,
    assignment: Vec<u32>,
    max_overlap: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CornerBox {
    pub index: usize,
    pub corners: [Vec3; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryDump {
    pub curve: String,
    pub delta: f64,
    pub side: usize,
    pub radial_floor: RadialFloor,
    pub neighborhood_points: usize,
    pub max_overlap: usize,
    pub caps: Vec<CornerBox>,
    pub sigma_planks: Vec<CornerBox>,
    pub tau_planks: Vec<(f64, Vec<CornerBox>)>,
}

/// θ-samples of the curve for the coarse pass.
struct Samples {
    theta: Vec<f64>,
    gamma: Vec<Vec3>,
    norm2: Vec<f64>,
}

impl ConeGeometry {
    pub fn build(curve: &Curve, scale: Dyadic, floor: RadialFloor) -> Result<Self> {
        let m = scale.inverse() as usize;
        if !GRID_SIDES.contains(&m) || scale.level() > 7 {
            return Err(Error::Range(format!("δ⁻¹ = {m} not in {GRID_SIDES:?}")));
        }
        if let RadialFloor::InverseK(k) = floor {
            if k < 2 || !k.is_power_of_two() || k > m as u64 {
                return Err(Error::Config(format!("K = {k} must be a power of two in [2, δ⁻¹]")));
            }
        }
        if nondegeneracy_margin(curve, ADMISSIBILITY_SAMPLES)? == 0.0 {
            return Err(Error::Geometry(format!("curve {} is degenerate; cone frames undefined", curve.label())));
        }
        let k = scale.level() as usize;
        let delta = scale.delta();
        let n_shells = floor.shells();
        let r_min = floor.value();

        let ns = m * SUBSAMPLES + 1;
        let mut samples = Samples { theta: Vec::with_capacity(ns), gamma: Vec::with_capacity(ns), norm2: Vec::with_capacity(ns) };
        for j in 0..ns {
            let th = j as f64 / (ns - 1) as f64;
            let g = curve.eval(th)?;
            samples.theta.push(th);
            samples.norm2.push(vec3::dot(&g, &g));
            samples.gamma.push(g);
        }
        // farthest a cone point moves between neighbouring samples
        let step = samples
            .gamma
            .windows(2)
            .map(|w| FREQ_SCALE * vec3::norm(&vec3::sub(&w[1], &w[0])))
            .fold(0.0, f64::max);
        let reach = delta + step + 1e-12;

        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for g in &samples.gamma {
            for r in [r_min, 1.0] {
                for c in 0..3 {
                    let v = FREQ_SCALE * r * g[c];
                    lo[c] = lo[c].min(v);
                    hi[c] = hi[c].max(v);
                }
            }
        }

        let shell_ranges: Vec<[f64; 2]> = (0..n_shells).map(|j| floor.shell_range(j)).collect();
        let full = [r_min, 1.0];
        let mut assignment = vec![NO_CAP; m * m * m];
        let mut counts = vec![0usize; n_shells * m];
        let mut max_overlap = 0;
        let mut coarse = vec![0.0; ns];
        for (i, slot) in assignment.iter_mut().enumerate() {
            let xi = frequency(m, i);
            if (0..3).any(|c| xi[c] < lo[c] - delta - 1e-12 || xi[c] > hi[c] + delta + 1e-12) {
                continue;
            }
            let mut best = 0;
            for j in 0..ns {
                coarse[j] = sample_dist2(&xi, &samples.gamma[j], samples.norm2[j], full);
                if coarse[j] < coarse[best] {
                    best = j;
                }
            }
            if coarse[best] > reach * reach {
                continue;
            }
            let a = samples.theta[best.saturating_sub(1)];
            let b = samples.theta[(best + 1).min(ns - 1)];
            let (th, d2) = refine(curve, &xi, a, b, full)?;
            if d2 > delta * delta * (1.0 + 1e-12) {
                continue;
            }
            let g = curve.eval(th)?;
            let r = radial(&xi, &g, vec3::dot(&g, &g), full);
            let dir = (((th / delta).ceil() as i64 - 1).max(0) as usize).min(m - 1);
            let shell = if n_shells == 1 {
                0
            } else {
                (((-r.log2()).ceil() as i64 - 1).max(0) as usize).min(n_shells - 1)
            };
            let cap = shell * m + dir;
            *slot = cap as u32;
            counts[cap] += 1;

            // caps whose closed region comes within δ, before assignment
            let mut overlap = 0;
            for d in 0..m {
                let js = d * SUBSAMPLES..=(d + 1) * SUBSAMPLES;
                if coarse[js.clone()].iter().all(|&c| c > reach * reach) {
                    continue;
                }
                for range in &shell_ranges {
                    let jb = js.clone().min_by(|&x, &y| {
                        let dx = sample_dist2(&xi, &samples.gamma[x], samples.norm2[x], *range);
                        let dy = sample_dist2(&xi, &samples.gamma[y], samples.norm2[y], *range);
                        dx.total_cmp(&dy)
                    });
                    let jb = jb.expect("nonempty bin");
                    let a = samples.theta[jb.saturating_sub(1).max(d * SUBSAMPLES)];
                    let b = samples.theta[(jb + 1).min((d + 1) * SUBSAMPLES)];
                    let (_, d2) = refine(curve, &xi, a, b, *range)?;
                    if d2 <= delta * delta * (1.0 + 1e-12) {
                        overlap += 1;
                    }
                }
            }
            max_overlap = max_overlap.max(overlap);
        }

        let sigma_width = 1usize << (k - k / 2);
        let n_sigma = m / sigma_width;
        let caps = (0..n_shells * m)
            .map(|c| {
                let (shell, dir) = (c / m, c % m);
                Cap {
                    index: c,
                    dir,
                    shell,
                    theta: [dir as f64 * delta, (dir + 1) as f64 * delta],
                    radius: shell_ranges[shell],
                    sigma: dir / sigma_width,
                    points: counts[c],
                }
            })
            .collect();
        let sigma = planks(n_sigma, sigma_width, delta);
        let tau = (0..=(k / 2) as u32)
            .map(|level| {
                let width = m >> level;
                let planks = planks(1 << level, width, delta);
                let frames = planks
                    .iter()
                    .map(|p| {
                        let (g, t, n) = curve.frame(0.5 * (p.theta[0] + p.theta[1]))?;
                        let g = vec3::normalize(&g).ok_or_else(|| Error::Geometry("γ vanishes".into()))?;
                        Ok([g, t, n])
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(TauFamily {
                    s: (-(level as f64)).exp2(),
                    level,
                    planks,
                    sigma_parent: (0..n_sigma).map(|q| q * sigma_width / width).collect(),
                    frames,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ConeGeometry {
            curve: curve.clone(),
            scale,
            m,
            floor,
            caps,
            sigma,
            tau,
            assignment,
            max_overlap,
        })
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn scale(&self) -> Dyadic {
        self.scale
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn radial_floor(&self) -> RadialFloor {
        self.floor
    }

    pub fn caps(&self) -> &[Cap] {
        &self.caps
    }

    pub fn sigma_planks(&self) -> &[Plank] {
        &self.sigma
    }

    pub fn tau_families(&self) -> &[TauFamily] {
        &self.tau
    }

    /// Cap index per flat lattice index, [`NO_CAP`] outside N_δ(Γ).
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn cap_of(&self, flat: usize) -> Option<usize> {
        match self.assignment.get(flat) {
            Some(&c) if c != NO_CAP => Some(c as usize),
            _ => None,
        }
    }

    pub fn neighborhood_size(&self) -> usize {
        self.assignment.iter().filter(|&&c| c != NO_CAP).count()
    }

    /// Most caps whose closed δ-neighborhood holds a single lattice point.
    pub fn max_overlap(&self) -> usize {
        self.max_overlap
    }

    /// Index i of the tube direction θ = iδ, 0 <= i <= δ⁻¹.
    pub fn tube_index(&self, theta: f64) -> Result<usize> {
        let x = theta * self.m as f64;
        let i = x.round();
        if (x - i).abs() > 1e-9 || i < 0.0 || i > self.m as f64 {
            return Err(Error::Config(format!("no tube at θ = {theta}; tubes sit at multiples of δ")));
        }
        Ok(i as usize)
    }

    pub fn tube_axis(&self, index: usize) -> Result<Vec3> {
        let g = self.curve.eval(index as f64 * self.scale.delta())?;
        vec3::normalize(&g).ok_or_else(|| Error::Geometry("γ vanishes".into()))
    }

    /// Lattice points within δ of the axis line with |ξ·γ̂| <= FREQ_SCALE.
    pub fn tube_points(&self, index: usize) -> Result<Vec<usize>> {
        let axis = self.tube_axis(index)?;
        let d2 = self.scale.delta().powi(2) * (1.0 + 1e-12);
        let out = (0..self.m * self.m * self.m)
            .filter(|&i| {
                let xi = frequency(self.m, i);
                let u = vec3::dot(&xi, &axis);
                let perp = vec3::sub(&xi, &vec3::scale(&axis, u));
                u.abs() <= FREQ_SCALE + 1e-12 && vec3::dot(&perp, &perp) <= d2
            })
            .collect();
        Ok(out)
    }

    /// Envelope box label of physical point `x` for plank `tau` of family
    /// `family`: floors of its coordinates along (n, t, γ̂) in units of
    /// (M, M s, M s²).
    pub fn envelope_label(&self, family: usize, tau: usize, x: &Vec3) -> [i64; 3] {
        let f = &self.tau[family];
        let [g, t, n] = f.frames[tau];
        let m = self.m as f64;
        [
            (vec3::dot(x, &n) / m).floor() as i64,
            (vec3::dot(x, &t) / (m * f.s)).floor() as i64,
            (vec3::dot(x, &g) / (m * f.s * f.s)).floor() as i64,
        ]
    }

    pub fn dump(&self) -> Result<GeometryDump> {
        let r_min = self.floor.value();
        let corners = |theta: [f64; 2], radius: [f64; 2]| -> Result<[Vec3; 4]> {
            let g0 = self.curve.eval(theta[0])?;
            let g1 = self.curve.eval(theta[1])?;
            let at = |g: &Vec3, r: f64| vec3::scale(g, FREQ_SCALE * r);
            Ok([at(&g0, radius[0]), at(&g0, radius[1]), at(&g1, radius[1]), at(&g1, radius[0])])
        };
        let caps = self
            .caps
            .iter()
            .map(|c| Ok(CornerBox { index: c.index, corners: corners(c.theta, c.radius)? }))
            .collect::<Result<Vec<_>>>()?;
        let plank_boxes = |ps: &[Plank]| {
            ps.iter()
                .map(|p| Ok(CornerBox { index: p.index, corners: corners(p.theta, [r_min, 1.0])? }))
                .collect::<Result<Vec<_>>>()
        };
        Ok(GeometryDump {
            curve: self.curve.label().to_string(),
            delta: self.scale.delta(),
            side: self.m,
            radial_floor: self.floor,
            neighborhood_points: self.neighborhood_size(),
            max_overlap: self.max_overlap,
            caps,
            sigma_planks: plank_boxes(&self.sigma)?,
            tau_planks: self
                .tau
                .iter()
                .map(|f| Ok((f.s, plank_boxes(&f.planks)?)))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

fn planks(n: usize, width: usize, delta: f64) -> Vec<Plank> {
    (0..n)
        .map(|i| Plank {
            index: i,
            theta: [(i * width) as f64 * delta, ((i + 1) * width) as f64 * delta],
            dirs: [i * width, (i + 1) * width],
        })
        .collect()
}

fn radial(xi: &Vec3, g: &Vec3, norm2: f64, range: [f64; 2]) -> f64 {
    (vec3::dot(xi, g) / (FREQ_SCALE * norm2)).clamp(range[0], range[1])
}

/// Squared distance from ξ to the radial segment over one curve point.
fn sample_dist2(xi: &Vec3, g: &Vec3, norm2: f64, range: [f64; 2]) -> f64 {
    let r = radial(xi, g, norm2, range);
    let p = vec3::scale(g, FREQ_SCALE * r);
    let d = vec3::sub(xi, &p);
    vec3::dot(&d, &d)
}

/// Golden-section minimum of the segment distance over θ ∈ [a, b].
fn refine(curve: &Curve, xi: &Vec3, mut a: f64, mut b: f64, range: [f64; 2]) -> Result<(f64, f64)> {
    let f = |th: f64| -> Result<f64> {
        let g = curve.eval(th)?;
        Ok(sample_dist2(xi, &g, vec3::dot(&g, &g), range))
    };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..REFINE_STEPS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d)?;
        }
    }
    // endpoints matter when the minimum sits at the edge of the interval
    let fa = f(a)?;
    let fb = f(b)?;
    let mut best = (c, fc);
    for cand in [(d, fd), (a, fa), (b, fb)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    Ok(best)
}
