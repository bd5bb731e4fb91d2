//! Functions on the grid built from the cone geometry, and the decoupling and
//! wave envelope measurements.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::geometry::{ConeGeometry, NO_CAP};
use super::grid::{frequency, l4_norm, position, GridFunction};
use super::FREQ_SCALE;
use crate::error::{Error, Result};
use crate::incidence::SlabFamily;
use crate::spacing::{thin_indices, window_scan, WindowReport};
use crate::vec3;

/// Largest window constant a cap selection may have.
pub const SPACING_CONSTANT: f64 = 64.0;

/// Coefficients smaller than this fraction of the largest count as zero in
/// support checks.
const LEAK_TOL: f64 = 1e-9;

/// Raised cosine in u = ξ·γ̂ / FREQ_SCALE: 1 on |u| <= 1/2, 0 at |u| = 1.
fn tube_window(u: f64) -> f64 {
    let a = u.abs();
    if a <= 0.5 {
        1.0
    } else if a >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * (a - 0.5) / 0.5).cos())
    }
}

/// f_θ with coefficient ω(ξ) Σ_S e^{-2πi p_S ξ·γ̂} on the tube of the
/// family's direction, where p_S = offset·δ⁻¹ is the slab position on the
/// physical grid. Normalized so that Σ_ξ ω(ξ) = 1.
pub fn synth_tube_function(family: &SlabFamily, geometry: &ConeGeometry) -> Result<GridFunction> {
    let m = geometry.side();
    let tube = geometry.tube_index(family.theta)?;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); m * m * m];
    if family.is_empty() {
        return GridFunction::from_coefficients(m, coeffs);
    }
    let positions = family
        .slabs
        .iter()
        .map(|s| {
            let p = s.offset * m as f64;
            if (p - p.round()).abs() > 1e-9 {
                Err(Error::Config(format!("slab offset {} is off the physical lattice", s.offset)))
            } else {
                Ok(p.round())
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let axis = geometry.tube_axis(tube)?;
    let points = geometry.tube_points(tube)?;
    let weights: Vec<f64> = points
        .iter()
        .map(|&i| tube_window(vec3::dot(&frequency(m, i), &axis) / FREQ_SCALE))
        .collect();
    let total: f64 = weights.iter().sum();
    for (&i, &w) in points.iter().zip(&weights) {
        let u = vec3::dot(&frequency(m, i), &axis);
        let phase: Complex64 = positions
            .iter()
            .map(|p| Complex64::from_polar(1.0, -2.0 * PI * p * u))
            .sum();
        coeffs[i] = phase * (w / total);
    }
    GridFunction::from_coefficients(m, coeffs)
}

fn check_support(g: &GridFunction, allowed: impl Fn(usize) -> bool, what: &str) -> Result<()> {
    let c = g.coefficients();
    let max = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some((i, z)) = c.iter().enumerate().find(|(i, z)| !allowed(*i) && z.norm() > LEAK_TOL * max) {
        return Err(Error::Precondition(format!(
            "coefficient {:.3e} at ξ = {:?} lies outside {what}",
            z.norm(),
            frequency(g.side(), i)
        )));
    }
    Ok(())
}

/// (f_high, f_low) with η_low = 1 on |u| <= 1/(2K), 0 on |u| >= 1/K and a
/// raised cosine between, u = ξ·γ̂(θ) / FREQ_SCALE.
pub fn high_low_split(
    f: &GridFunction,
    theta: f64,
    k: u64,
    geometry: &ConeGeometry,
) -> Result<(GridFunction, GridFunction)> {
    let m = geometry.side();
    if f.side() != m {
        return Err(Error::Config("grid side differs from the geometry".into()));
    }
    if k < 1 {
        return Err(Error::Domain("K must be positive".into()));
    }
    let tube = geometry.tube_index(theta)?;
    let axis = geometry.tube_axis(tube)?;
    let mut inside = vec![false; m * m * m];
    for i in geometry.tube_points(tube)? {
        inside[i] = true;
    }
    check_support(f, |i| inside[i], "the tube τ_θ")?;
    let a = 0.5 / k as f64;
    let b = 1.0 / k as f64;
    let low = |i: usize| {
        let u = (vec3::dot(&frequency(m, i), &axis) / FREQ_SCALE).abs();
        if u <= a {
            1.0
        } else if u >= b {
            0.0
        } else {
            0.5 * (1.0 + (PI * (u - a) / (b - a)).cos())
        }
    };
    Ok((f.multiply(|i| 1.0 - low(i))?, f.multiply(low)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowPartReport {
    pub k: u64,
    pub s: f64,
    pub theta_count: usize,
    pub max_low: f64,
    /// K^{s-1} #Θ
    pub scale: f64,
    pub fitted_c: f64,
}

/// max_x |Σ_θ f_{θ,low}(x)| against K^{s-1} #Θ over a family of directions.
pub fn low_part_envelope(
    families: &[SlabFamily],
    k: u64,
    s: f64,
    geometry: &ConeGeometry,
) -> Result<LowPartReport> {
    let m = geometry.side();
    let mut total = vec![Complex64::new(0.0, 0.0); m * m * m];
    for fam in families {
        let f = synth_tube_function(fam, geometry)?;
        let (_, low) = high_low_split(&f, fam.theta, k, geometry)?;
        for (t, v) in total.iter_mut().zip(low.samples()) {
            *t += v;
        }
    }
    let max_low = total.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = (k as f64).powf(s - 1.0) * families.len() as f64;
    Ok(LowPartReport {
        k,
        s,
        theta_count: families.len(),
        max_low,
        scale,
        fitted_c: if scale > 0.0 { max_low / scale } else { 0.0 },
    })
}

/// g_γ: coefficients kept only on the lattice points assigned to `cap`.
pub fn cap_restrict(g: &GridFunction, cap: usize, geometry: &ConeGeometry) -> Result<GridFunction> {
    if cap >= geometry.caps().len() {
        return Err(Error::Config(format!("cap {cap} not in the geometry")));
    }
    let a = geometry.assignment();
    g.multiply(|i| if a[i] == cap as u32 { 1.0 } else { 0.0 })
}

/// Caps selected by [`tspacing_subsample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapSelection {
    pub t: f64,
    /// direction bins of the selected caps
    pub dirs: Vec<i64>,
    /// cap indices over every radial shell
    pub caps: Vec<usize>,
    pub report: WindowReport,
}

/// Caps whose direction bins form a (δ, t)-set: every window of 2^j bins
/// holds at most 2^{jt} of them. For t < 1 the seeded thinning runs over the
/// bins that hold lattice points; t = 1 keeps every bin.
pub fn tspacing_subsample(geometry: &ConeGeometry, t: f64, seed: u64) -> Result<CapSelection> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    let m = geometry.side();
    let level = geometry.scale().level();
    let dirs: Vec<i64> = if t == 1.0 {
        (0..m as i64).collect()
    } else {
        let mut live: Vec<i64> = geometry.caps().iter().filter(|c| c.points > 0).map(|c| c.dir as i64).collect();
        live.sort_unstable();
        live.dedup();
        thin_indices(&live, level, t, seed)
    };
    let report = window_scan(&dirs, level, t);
    if report.worst_constant > SPACING_CONSTANT {
        return Err(Error::Inconsistency(format!("selection has window constant {}", report.worst_constant)));
    }
    Ok(CapSelection { t, caps: caps_of_dirs(geometry, &dirs), dirs, report })
}

fn caps_of_dirs(geometry: &ConeGeometry, dirs: &[i64]) -> Vec<usize> {
    let mut caps: Vec<usize> = geometry
        .caps()
        .iter()
        .filter(|c| dirs.binary_search(&(c.dir as i64)).is_ok())
        .map(|c| c.index)
        .collect();
    caps.sort_unstable();
    caps
}

/// Function with the given coefficient at every lattice point assigned to one
/// of `caps`, visited in flat-index order.
pub fn cap_support_function(
    geometry: &ConeGeometry,
    caps: &[usize],
    mut coefficient: impl FnMut(usize) -> Complex64,
) -> Result<GridFunction> {
    let m = geometry.side();
    let mut keep = vec![false; geometry.caps().len()];
    for &c in caps {
        *keep
            .get_mut(c)
            .ok_or_else(|| Error::Config(format!("cap {c} not in the geometry")))? = true;
    }
    let coeffs = geometry
        .assignment()
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            if a != NO_CAP && keep[a as usize] {
                coefficient(i)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    GridFunction::from_coefficients(m, coeffs)
}

/// Unit-amplitude coefficients with seeded uniform phases on `caps`.
pub fn random_cap_function(geometry: &ConeGeometry, caps: &[usize], seed: u64) -> Result<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cap_support_function(geometry, caps, |_| Complex64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    pub delta: f64,
    pub t: f64,
    pub caps: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// lhs = Σ|g|⁴ over the periodic box, rhs = δ^{-t} Σ_γ Σ|g_γ|⁴.
pub fn decoupling_ratio(
    g: &GridFunction,
    caps: &[usize],
    t: f64,
    geometry: &ConeGeometry,
) -> Result<DecouplingReport> {
    if g.side() != geometry.side() {
        return Err(Error::Config("grid side differs from the geometry".into()));
    }
    let level = geometry.scale().level();
    let mut dirs: Vec<i64> = caps
        .iter()
        .map(|&c| geometry.caps().get(c).map(|cap| cap.dir as i64))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config("cap index out of range".into()))?;
    dirs.sort_unstable();
    dirs.dedup();
    let scan = window_scan(&dirs, level, t);
    if scan.worst_constant > SPACING_CONSTANT {
        let delta = geometry.scale().delta();
        return Err(Error::Precondition(format!(
            "t-spacing fails: σ_r = [{}, {}] with r = {} holds {} caps (constant {:.2})",
            scan.witness_start as f64 * delta,
            (scan.witness_start + scan.witness_width) as f64 * delta,
            scan.witness_width as f64 * delta,
            scan.witness_count,
            scan.worst_constant
        )));
    }
    let mut keep = vec![false; geometry.caps().len()];
    for &c in caps {
        keep[c] = true;
    }
    let a = geometry.assignment();
    check_support(g, |i| a[i] != NO_CAP && keep[a[i] as usize], "the selected caps")?;

    let lhs = l4_norm(g);
    let mut sum = 0.0;
    let mut sorted = caps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &c in &sorted {
        sum += l4_norm(&cap_restrict(g, c, geometry)?);
    }
    let rhs = (t * geometry.scale().log2_inv()).exp2() * sum;
    Ok(DecouplingReport {
        delta: geometry.scale().delta(),
        t,
        caps: sorted.len(),
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeTerm {
    pub s: f64,
    pub tau: usize,
    pub label: [i64; 3],
    /// |U|, lattice points of the box
    pub size: usize,
    /// ‖S_U f‖₂²
    pub mass: f64,
    /// |U|⁻¹ ‖S_U f‖₂⁴
    pub term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub terms: Vec<EnvelopeTerm>,
    pub total: f64,
    pub l4: f64,
    /// l4 / total, 0 when total vanishes
    pub quotient: f64,
}

/// Σ_s Σ_τ Σ_U |U|⁻¹ (Σ_{x∈U} Σ_{σ⊂τ} |f_σ(x)|²)² over the envelope boxes
/// of every plank family.
pub fn wave_envelope_rhs(f: &GridFunction, geometry: &ConeGeometry) -> Result<EnvelopeReport> {
    let m = geometry.side();
    if f.side() != m {
        return Err(Error::Config("grid side differs from the geometry".into()));
    }
    let a = geometry.assignment();
    check_support(f, |i| a[i] != NO_CAP, "N_δ(Γ)")?;
    let caps = geometry.caps();
    let sigma_sq: Vec<Vec<f64>> = (0..geometry.sigma_planks().len())
        .map(|q| {
            let part = f.multiply(|i| if a[i] != NO_CAP && caps[a[i] as usize].sigma == q { 1.0 } else { 0.0 })?;
            Ok(part.samples().iter().map(|z| z.norm_sqr()).collect())
        })
        .collect::<Result<_>>()?;

    let mut terms = Vec::new();
    for (fi, fam) in geometry.tau_families().iter().enumerate() {
        for tau in 0..fam.planks.len() {
            let members: Vec<usize> = (0..sigma_sq.len()).filter(|&q| fam.sigma_parent[q] == tau).collect();
            let mut boxes: BTreeMap<[i64; 3], (usize, f64)> = BTreeMap::new();
            #[allow(clippy::needless_range_loop)]
            for x in 0..m * m * m {
                let sq: f64 = members.iter().map(|&q| sigma_sq[q][x]).sum();
                let e = boxes.entry(geometry.envelope_label(fi, tau, &position(m, x))).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += sq;
            }
            for (label, (size, mass)) in boxes {
                terms.push(EnvelopeTerm { s: fam.s, tau, label, size, mass, term: mass * mass / size as f64 });
            }
        }
    }
    let total = terms.iter().map(|t| t.term).sum();
    let l4 = l4_norm(f);
    Ok(EnvelopeReport {
        terms,
        total,
        l4,
        quotient: if total > 0.0 { l4 / total } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Curve;
    use crate::dyadic::Dyadic;
    use crate::fourier::RadialFloor;
    use crate::incidence::Slab;

    fn geom(level: u32) -> ConeGeometry {
        ConeGeometry::build(&Curve::model(), Dyadic::from_level(level), RadialFloor::Half).unwrap()
    }

    fn family(g: &ConeGeometry, theta: f64, offsets: &[f64]) -> SlabFamily {
        let d = g.scale().delta();
        let slabs = offsets
            .iter()
            .map(|&c| Slab { theta, offset: c, thickness: d, extent: 1.0 })
            .collect();
        SlabFamily::new(theta, g.curve().eval(theta).unwrap(), slabs, 0.5).unwrap()
    }

    /// f(x) = Σ_ξ c(ξ) e^{2πi x·ξ} by direct summation.
    fn direct(m: usize, coeffs: &[Complex64], x: usize) -> Complex64 {
        let p = position(m, x);
        coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(i, c)| c * Complex64::from_polar(1.0, 2.0 * PI * vec3::dot(&p, &frequency(m, i))))
            .sum()
    }

    #[test]
    fn single_slab_tube_function() {
        let g = geom(4);
        let f = synth_tube_function(&family(&g, 0.25, &[0.0]), &g).unwrap();
        let at0 = direct(16, f.coefficients(), 0);
        assert!((at0.re - 1.0).abs() < 1e-12 && at0.im.abs() < 1e-12);
        assert!((f.samples()[0] - at0).norm() < 1e-12);
        let imag = f.samples().iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        assert!(imag < 1e-12);
    }

    #[test]
    fn single_slab_peaks_on_its_plane() {
        let g = geom(4);
        let theta = 0.5;
        let f = synth_tube_function(&family(&g, theta, &[0.0]), &g).unwrap();
        let axis = g.tube_axis(8).unwrap();
        let (mut core_min, mut off_max) = (f64::INFINITY, 0.0f64);
        for i in 0..4096 {
            // wrapped coordinates centred at the origin
            let p = position(16, i).map(|v| if v >= 8.0 { v - 16.0 } else { v });
            let h = vec3::dot(&p, &axis).abs();
            let r = vec3::norm(&p);
            let v = f.samples()[i].norm();
            if h <= 0.5 && r <= 2.0 {
                core_min = core_min.min(v);
            }
            if h >= 4.0 {
                off_max = off_max.max(v);
            }
        }
        assert!(core_min >= 0.5, "core minimum {core_min}");
        assert!(off_max < core_min, "off-slab maximum {off_max}");
    }

    #[test]
    fn two_slab_coefficients() {
        let g = geom(4);
        let c = 3.0 / 16.0;
        let one = synth_tube_function(&family(&g, 0.5, &[0.0]), &g).unwrap();
        let two = synth_tube_function(&family(&g, 0.5, &[-c, c]), &g).unwrap();
        let axis = g.tube_axis(8).unwrap();
        for (i, (a, b)) in one.coefficients().iter().zip(two.coefficients()).enumerate() {
            let u = vec3::dot(&frequency(16, i), &axis);
            let expect = 2.0 * a.norm() * (2.0 * PI * c * 16.0 * u).cos().abs();
            assert!((b.norm() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_family_is_zero() {
        let g = geom(4);
        let theta = 0.5;
        let fam = SlabFamily::new(theta, g.curve().eval(theta).unwrap(), vec![], 0.5).unwrap();
        let f = synth_tube_function(&fam, &g).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn tube_needs_grid_direction() {
        let g = geom(4);
        assert!(matches!(synth_tube_function(&family(&g, 0.3, &[0.0]), &g), Err(Error::Config(_))));
    }

    #[test]
    fn high_low_reconstruction() {
        let g = geom(5);
        let f = synth_tube_function(&family(&g, 0.25, &[-0.25, 0.0, 0.5]), &g).unwrap();
        let (hi, lo) = high_low_split(&f, 0.25, 4, &g).unwrap();
        let err = f
            .samples()
            .iter()
            .zip(hi.samples().iter().zip(lo.samples()))
            .map(|(a, (b, c))| (a - b - c).norm())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10 * f.max_abs());
    }

    #[test]
    fn high_energy_only() {
        let g = geom(5);
        let f = synth_tube_function(&family(&g, 0.25, &[0.0]), &g).unwrap();
        let axis = g.tube_axis(8).unwrap();
        let high = f.multiply(|i| if (vec3::dot(&frequency(32, i), &axis) / FREQ_SCALE).abs() >= 0.25 { 1.0 } else { 0.0 }).unwrap();
        let (_, lo) = high_low_split(&high, 0.25, 4, &g).unwrap();
        assert!(lo.physical_energy() <= 1e-8 * high.physical_energy());
    }

    #[test]
    fn leakage_rejected() {
        let g = geom(4);
        let f = synth_tube_function(&family(&g, 0.25, &[0.0]), &g).unwrap();
        assert!(matches!(high_low_split(&f, 0.75, 4, &g), Err(Error::Precondition(_))));
    }

    #[test]
    fn low_part_report() {
        let g = geom(4);
        let fams: Vec<SlabFamily> = [0.0, 0.25, 0.5, 1.0].iter().map(|&th| family(&g, th, &[0.0])).collect();
        let r = low_part_envelope(&fams, 4, 0.5, &g).unwrap();
        assert_eq!(r.theta_count, 4);
        assert!((r.scale - 2.0).abs() < 1e-12);
        assert!(r.fitted_c > 0.0 && r.max_low <= 4.0 + 1e-9);
    }

    #[test]
    fn cap_partition_and_orthogonality() {
        let g = geom(4);
        let all: Vec<usize> = (0..16).collect();
        let f = random_cap_function(&g, &all, 7).unwrap();
        let mut sum = vec![Complex64::new(0.0, 0.0); 4096];
        let mut energy = 0.0;
        for c in 0..16 {
            let part = cap_restrict(&f, c, &g).unwrap();
            energy += part.physical_energy();
            for (s, v) in sum.iter_mut().zip(part.samples()) {
                *s += v;
            }
            let again = cap_restrict(&part, c, &g).unwrap();
            assert_eq!(again.coefficients(), part.coefficients());
        }
        let err = sum.iter().zip(f.samples()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-10 * f.max_abs());
        assert!((energy - f.physical_energy()).abs() <= 1e-8 * f.physical_energy());
    }

    #[test]
    fn restrict_to_own_cap_is_identity() {
        let g = geom(4);
        let f = random_cap_function(&g, &[5], 1).unwrap();
        let r = cap_restrict(&f, 5, &g).unwrap();
        assert_eq!(r.coefficients(), f.coefficients());
    }

    #[test]
    fn subsample_extremes() {
        let g = geom(6);
        assert_eq!(tspacing_subsample(&g, 1.0, 0).unwrap().caps.len(), 64);
        assert_eq!(tspacing_subsample(&g, 0.0, 0).unwrap().caps.len(), 1);
        let half = tspacing_subsample(&g, 0.5, 3).unwrap();
        assert!((4..=8).contains(&half.caps.len()), "{}", half.caps.len());
        assert!(half.report.worst_constant <= 1.0);
    }

    #[test]
    fn single_cap_ratio() {
        for level in [4, 5] {
            let g = geom(level);
            let cap = g.caps().iter().find(|c| c.dir > 0 && c.points > 0).unwrap().index;
            let f = random_cap_function(&g, &[cap], 11).unwrap();
            let r = decoupling_ratio(&f, &[cap], 0.5, &g).unwrap();
            let expect = g.scale().delta().powf(0.5);
            assert!((r.ratio - expect).abs() <= 1e-6 * expect);
        }
    }

    #[test]
    fn spacing_violation_names_window() {
        // 65 caps in one window of 64 bins: constant 65 at t = 0
        let g = geom(7);
        let caps: Vec<usize> = (0..65).collect();
        match decoupling_ratio(&random_cap_function(&g, &caps, 0).unwrap(), &caps, 0.0, &g) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("σ_r")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scaling_and_monotonicity() {
        let g = geom(4);
        let caps = [1usize, 6, 12];
        let f = random_cap_function(&g, &caps, 2).unwrap();
        let a = decoupling_ratio(&f, &caps, 0.5, &g).unwrap();
        let b = decoupling_ratio(&f.scaled(Complex64::new(0.0, 3.0)), &caps, 0.5, &g).unwrap();
        assert!((b.lhs / a.lhs - 81.0).abs() < 1e-9 && (b.rhs / a.rhs - 81.0).abs() < 1e-9);
        assert!((a.ratio - b.ratio).abs() < 1e-12 * a.ratio);
        let wider = decoupling_ratio(&f, &[1, 6, 9, 12], 0.5, &g).unwrap();
        assert!(wider.rhs >= a.rhs);
    }

    /// lhs and Σ_γ ‖g_γ‖₄⁴ for unit coefficients on every cap, by direct
    /// summation over the 16³ grid.
    fn direct_all_caps(g: &ConeGeometry) -> (f64, f64) {
        let m = 16;
        let a = g.assignment();
        let mut whole = vec![Complex64::new(0.0, 0.0); 4096];
        let mut parts = vec![vec![Complex64::new(0.0, 0.0); 4096]; 16];
        for (i, &c) in a.iter().enumerate() {
            if c == NO_CAP {
                continue;
            }
            let xi = frequency(m, i);
            for x in 0..4096 {
                let e = Complex64::from_polar(1.0, 2.0 * PI * vec3::dot(&position(m, x), &xi));
                whole[x] += e;
                parts[c as usize][x] += e;
            }
        }
        let l4 = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>();
        (l4(&whole), parts.iter().map(|p| l4(p)).sum())
    }

    const ALL_CAPS_RATIO_M16: f64 = 2.683_369_776_482_032;

    #[test]
    fn all_caps_golden() {
        let g = geom(4);
        let caps: Vec<usize> = (0..16).collect();
        let f = cap_support_function(&g, &caps, |_| Complex64::new(1.0, 0.0)).unwrap();
        let r = decoupling_ratio(&f, &caps, 1.0, &g).unwrap();
        let (lhs, parts) = direct_all_caps(&g);
        let oracle = lhs / (16.0 * parts);
        assert!((r.ratio - oracle).abs() < 1e-9 * oracle, "{} vs {}", r.ratio, oracle);
        assert!((r.ratio - ALL_CAPS_RATIO_M16).abs() < 1e-9 * oracle, "{:.16}", r.ratio);
    }

    #[test]
    fn envelope_zero() {
        let g = geom(4);
        let r = wave_envelope_rhs(&GridFunction::zeros(16).unwrap(), &g).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.quotient, 0.0);
    }

    #[test]
    fn envelope_single_sigma() {
        let g = geom(4);
        let caps: Vec<usize> = g.caps().iter().filter(|c| c.sigma == 1).map(|c| c.index).collect();
        let f = cap_support_function(&g, &caps, |_| Complex64::new(1.0, 0.0)).unwrap();
        let r = wave_envelope_rhs(&f, &g).unwrap();
        let m3: usize = r.terms.iter().filter(|t| t.s == 1.0).map(|t| t.size).sum();
        assert_eq!(m3, 4096);
        assert!(r.quotient <= 1.0, "quotient {}", r.quotient);
    }

    #[test]
    fn envelope_rejects_leakage() {
        let g = geom(4);
        let mut c = vec![Complex64::new(0.0, 0.0); 4096];
        c[0] = Complex64::new(1.0, 0.0);
        let f = GridFunction::from_coefficients(16, c).unwrap();
        assert!(matches!(wave_envelope_rhs(&f, &g), Err(Error::Precondition(_))));
    }
}
