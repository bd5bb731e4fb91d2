//! Projections onto the lines l_θ and planes V_θ, box-counting dimension,
//! and exceptional-set sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covering::Covering;
use crate::curve::Curve;
use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::fractal::{ancestor, Cell, PointSet};
use crate::vec3;

/// Default margin in the test est_dim < s - margin.
pub const DEFAULT_MARGIN: f64 = 0.1;

/// Default number of θ samples.
pub const DEFAULT_THETA_GRID: usize = 256;

fn require_3d(a: &PointSet) -> Result<()> {
    if a.dim() != 3 {
        return Err(Error::Precondition(format!("expected a 3-D set, got dimension {}", a.dim())));
    }
    Ok(())
}

/// Snaps projected coordinates to the lattice and merges coinciding cells.
fn snap(a: &PointSet, dim: usize, coords: impl Iterator<Item = [f64; 3]>, nominal: f64) -> Result<PointSet> {
    let inv = a.scale().inverse();
    let cells: Vec<Cell> = coords
        .map(|p| {
            let mut c = [0i64; 3];
            for k in 0..dim {
                c[k] = (p[k] * inv).round() as i64;
            }
            c
        })
        .collect();
    match a.weights() {
        Some(w) => PointSet::with_weights(dim, a.scale(), cells, w.to_vec(), nominal),
        None => PointSet::new(dim, a.scale(), cells, nominal),
    }
}

/// ρ_θ(a) = {x·γ(θ)} on the δ-lattice of l_θ, weights summed.
pub fn project_line(a: &PointSet, curve: &Curve, theta: f64) -> Result<PointSet> {
    require_3d(a)?;
    let g = curve.eval(theta)?;
    let coords = a.points().map(|x| [vec3::dot(&x, &g), 0.0, 0.0]);
    snap(a, 1, coords, a.nominal_dim().min(1.0))
}

/// π_θ(a) in the orthonormal plane coordinates (tangent, γ × tangent).
pub fn project_plane(a: &PointSet, curve: &Curve, theta: f64) -> Result<PointSet> {
    require_3d(a)?;
    let (_, t, n) = curve.frame(theta)?;
    let coords = a.points().map(|x| [vec3::dot(&x, &t), vec3::dot(&x, &n), 0.0]);
    snap(a, 2, coords, a.nominal_dim().min(2.0))
}

/// Least-squares box-counting fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    pub slope: f64,
    pub r2: f64,
}

/// Number of occupied dyadic cubes of side 2^-j.
pub fn box_count(p: &PointSet, j: u32) -> usize {
    let shift = p.scale().level() - j;
    let mut cubes: Vec<Cell> = p.cells().iter().map(|c| ancestor(c, shift)).collect();
    cubes.sort_unstable();
    cubes.dedup();
    cubes.len()
}

/// Slope of log₂ N(r) against log₂(1/r) over dyadic r in [r_min, r_max].
pub fn box_dimension(p: &PointSet, r_min: f64, r_max: f64) -> Result<DimensionFit> {
    if p.is_empty() {
        return Err(Error::Precondition("box dimension of an empty set".into()));
    }
    if r_min < p.delta() || r_max > 1.0 || r_min > r_max {
        return Err(Error::Range(format!(
            "fit range [{r_min}, {r_max}] not inside [{}, 1]",
            p.delta()
        )));
    }
    let j_lo = (-r_max.log2()).ceil() as u32;
    let j_hi = ((-r_min.log2()).floor() as u32).min(p.scale().level());
    if j_hi < j_lo + 2 {
        return Err(Error::Range(format!(
            "fit range [{r_min}, {r_max}] holds fewer than 3 dyadic scales"
        )));
    }
    let levels: Vec<u32> = (j_lo..=j_hi).collect();
    let counts: Vec<usize> = levels.iter().map(|&j| box_count(p, j)).collect();
    let xs: Vec<f64> = levels.iter().map(|&j| j as f64).collect();
    let ys: Vec<f64> = counts.iter().map(|&n| (n as f64).log2()).collect();
    let (slope, r2) = least_squares(&xs, &ys);
    Ok(DimensionFit {
        scales: levels.iter().map(|&j| Dyadic::from_level(j).delta()).collect(),
        counts,
        slope,
        r2,
    })
}

/// Slope and coefficient of determination; r2 = 1 when y has no variance.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    (slope, r2)
}

/// Default fit range [4δ, 1/4] at resolution `scale`.
pub fn default_fit_range(scale: Dyadic) -> (f64, f64) {
    (4.0 * scale.delta(), 0.25)
}

/// Mass captured by the covering's level-j cubes, per level.
pub fn level_masses(cov: &Covering) -> Result<BTreeMap<u32, f64>> {
    let target = cov.target();
    let w = target
        .weights()
        .ok_or_else(|| Error::Precondition("scale selection needs a weighted set".into()))?;
    let levels = cov.levels();
    let k_max = cov.k_max();
    let sets: BTreeMap<u32, std::collections::HashSet<Cell>> =
        levels.iter().map(|&k| (k, cov.level(k).map(|c| c.index).collect())).collect();
    let mut masses: BTreeMap<u32, f64> = levels.iter().map(|&k| (k, 0.0)).collect();
    for (cell, &m) in target.cells().iter().zip(w) {
        let hit = levels.iter().find(|&&k| sets[&k].contains(&ancestor(cell, k_max - k)));
        match hit {
            Some(k) => *masses.get_mut(k).expect("level present") += m,
            None => {
                return Err(Error::Inconsistency(format!(
                    "cell {:?} of the projection is not covered",
                    &cell[..target.dim()]
                )))
            }
        }
    }
    Ok(masses)
}

/// Smallest level j >= 1 whose cubes carry mass >= 1/(10 j²).
pub fn select_scale(cov: &Covering) -> Result<u32> {
    let masses = level_masses(cov)?;
    masses
        .iter()
        .find(|&(&j, &m)| j >= 1 && m >= 1.0 / (10.0 * (j * j) as f64))
        .map(|(&j, _)| j)
        .ok_or_else(|| Error::Inconsistency("no level captures enough mass".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub est_dim: f64,
    pub r2: f64,
    pub below_s: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub s: f64,
    pub alpha: f64,
    pub bound: f64,
    pub exceptional_fraction: f64,
    /// Box-dimension fit of the exceptional θ set, when it is nonempty.
    pub exceptional_dim_fit: Option<DimensionFit>,
    pub median_est_dim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

/// max{0, 1 + (s - α)/2}.
pub fn exceptional_bound(s: f64, alpha: f64) -> f64 {
    (1.0 + (s - alpha) / 2.0).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub theta_grid: usize,
    pub margin: f64,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            theta_grid: DEFAULT_THETA_GRID,
            margin: DEFAULT_MARGIN,
            r_min: None,
            r_max: None,
        }
    }
}

/// Box dimension of ρ_θ(a) on the grid θ_i = i/(n-1), in θ order.
pub fn exceptional_sweep(a: &PointSet, curve: &Curve, s: f64, opts: &SweepOptions) -> Result<Sweep> {
    require_3d(a)?;
    if opts.theta_grid < 2 {
        return Err(Error::Config("theta grid needs at least 2 samples".into()));
    }
    let (dmin, dmax) = default_fit_range(a.scale());
    let (r_min, r_max) = (opts.r_min.unwrap_or(dmin), opts.r_max.unwrap_or(dmax));
    let n = opts.theta_grid;
    let rows: Vec<SweepRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            let theta = i as f64 / (n - 1) as f64;
            let image = project_line(a, curve, theta)?;
            let fit = box_dimension(&image, r_min, r_max)?;
            Ok(SweepRow {
                theta,
                est_dim: fit.slope,
                r2: fit.r2,
                below_s: fit.slope < s - opts.margin,
            })
        })
        .collect::<Result<_>>()?;

    let exceptional: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.below_s).map(|(i, _)| i).collect();
    let exceptional_dim_fit = exceptional_fit(&exceptional, n)?;
    let mut dims: Vec<f64> = rows.iter().map(|r| r.est_dim).collect();
    dims.sort_by(f64::total_cmp);
    let median = if dims.len() % 2 == 1 {
        dims[dims.len() / 2]
    } else {
        0.5 * (dims[dims.len() / 2 - 1] + dims[dims.len() / 2])
    };
    let alpha = a.nominal_dim();
    Ok(Sweep {
        summary: SweepSummary {
            s,
            alpha,
            bound: exceptional_bound(s, alpha),
            exceptional_fraction: exceptional.len() as f64 / n as f64,
            exceptional_dim_fit,
            median_est_dim: median,
        },
        rows,
    })
}

/// Fits the exceptional θ samples, snapped to the dyadic lattice just finer
/// than the grid spacing, over all scales from that lattice to 1.
fn exceptional_fit(indices: &[usize], n: usize) -> Result<Option<DimensionFit>> {
    let level = ((n - 1) as f64).log2().ceil() as u32;
    if indices.is_empty() || level < 2 {
        return Ok(None);
    }
    let scale = Dyadic::from_level(level);
    let inv = scale.inverse();
    let cells: Vec<Cell> = indices
        .iter()
        .map(|&i| [(i as f64 / (n - 1) as f64 * inv).round() as i64, 0, 0])
        .collect();
    let set = PointSet::new(1, scale, cells, 0.0)?;
    box_dimension(&set, scale.delta(), 1.0).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covering::{greedy_cover, DyadicCube};
    use crate::fractal::{cantor_1d, full_grid, product_set};
    use std::sync::Arc;

    fn single(p: [i64; 3], level: u32) -> PointSet {
        PointSet::new(3, Dyadic::from_level(level), vec![p], 0.0).unwrap()
    }

    #[test]
    fn vertical_point_projects_to_inverse_sqrt2() {
        let a = single([0, 0, 1 << 16], 16);
        let c = Curve::model();
        for &th in &[0.0, 0.4, 1.0] {
            let p = project_line(&a, &c, th).unwrap();
            assert_eq!(p.len(), 1);
            assert!((p.point(&p.cells()[0])[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        }
    }

    #[test]
    fn symmetric_sets_project_symmetrically() {
        let cells = vec![[3, -5, 7], [-3, 5, -7], [10, 0, 2], [-10, 0, -2]];
        let a = PointSet::new(3, Dyadic::from_level(6), cells, 0.0).unwrap();
        let p = project_line(&a, &Curve::model(), 0.37).unwrap();
        let xs: Vec<i64> = p.cells().iter().map(|c| c[0]).collect();
        let mut neg: Vec<i64> = xs.iter().map(|x| -x).collect();
        neg.sort_unstable();
        assert_eq!(xs, neg);
    }

    #[test]
    fn orthogonal_plane_projects_to_zero() {
        let c = Curve::model();
        let th = 0.6;
        let (_, t, n) = c.frame(th).unwrap();
        let level = 8;
        let inv = (level as f64).exp2();
        // lattice points near the plane V_θ spanned by t and n
        let mut pts = Vec::new();
        for i in -4..=4 {
            for j in -4..=4 {
                let x = vec3::add(&vec3::scale(&t, i as f64 / 8.0), &vec3::scale(&n, j as f64 / 8.0));
                pts.push([(x[0] * inv).round() as i64, (x[1] * inv).round() as i64, (x[2] * inv).round() as i64]);
            }
        }
        let a = PointSet::new(3, Dyadic::from_level(level), pts, 2.0).unwrap();
        let p = project_line(&a, &c, th).unwrap();
        // snapping a to the lattice moves points by at most √3·δ/2
        assert!(p.cells().iter().all(|c| c[0].abs() <= 1));
    }

    #[test]
    fn plane_projection_pythagoras() {
        let c = Curve::helix();
        let g = cantor_1d(0.25, 3).unwrap();
        let a = product_set(&g, &g, &g).unwrap();
        let th = 0.81;
        let (gam, t, n) = c.frame(th).unwrap();
        for x in a.points() {
            let u = vec3::dot(&x, &t);
            let v = vec3::dot(&x, &n);
            let w = vec3::dot(&x, &gam);
            assert!((u * u + v * v + w * w - vec3::dot(&x, &x)).abs() < 1e-10);
        }
        let own = single([0, 0, 0], 6);
        let p = project_plane(&own, &c, th).unwrap();
        assert_eq!(p.cells(), &[[0, 0, 0]]);
    }

    #[test]
    fn curve_point_projects_to_plane_origin() {
        let c = Curve::model();
        let th = 0.25;
        let g = c.eval(th).unwrap();
        let inv = 1024.0;
        let a = single([(g[0] * inv).round() as i64, (g[1] * inv).round() as i64, (g[2] * inv).round() as i64], 10);
        let p = project_plane(&a, &c, th).unwrap();
        assert!(p.cells()[0][0].abs() <= 1 && p.cells()[0][1].abs() <= 1);
    }

    #[test]
    fn box_dimension_examples() {
        let g = full_grid(1, Dyadic::from_level(10)).unwrap();
        let fit = box_dimension(&g, 2f64.powi(-8), 0.25).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.02);

        let p = PointSet::new(1, Dyadic::from_level(10), vec![[5, 0, 0]], 0.0).unwrap();
        let fit = box_dimension(&p, 2f64.powi(-8), 0.25).unwrap();
        assert!(fit.slope.abs() < 1e-9);
        assert_eq!(fit.r2, 1.0);

        let c = cantor_1d(1.0 / 3.0, 8).unwrap();
        let (lo, hi) = default_fit_range(c.scale());
        let fit = box_dimension(&c, lo, hi).unwrap();
        assert!((fit.slope - 0.63).abs() < 0.05, "{}", fit.slope);
        assert!(fit.counts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn box_dimension_needs_three_scales() {
        let g = full_grid(1, Dyadic::from_level(10)).unwrap();
        assert!(matches!(box_dimension(&g, 0.25, 0.5), Err(Error::Range(_))));
        assert!(matches!(box_dimension(&g, 1e-6, 0.5), Err(Error::Range(_))));
    }

    fn weighted_line(level: u32, cells: Vec<i64>, weights: Vec<f64>) -> Arc<PointSet> {
        let cells = cells.into_iter().map(|x| [x, 0, 0]).collect();
        Arc::new(PointSet::with_weights(1, Dyadic::from_level(level), cells, weights, 1.0).unwrap())
    }

    #[test]
    fn select_scale_single_level() {
        let t = weighted_line(6, vec![1, 9, 30], vec![1.0, 1.0, 2.0]);
        let cubes = t.cells().iter().map(|c| DyadicCube { level: 4, index: crate::fractal::ancestor(c, 2) });
        let cov = Covering::from_cubes(t.clone(), 0.5, 10.0, 1, cubes).unwrap();
        assert_eq!(select_scale(&cov).unwrap(), 4);
    }

    #[test]
    fn select_scale_uniform_split() {
        // ten cells, one covered at each level 2..=11
        let level = 12;
        let cells: Vec<i64> = (0..10).map(|i| i << 10).collect();
        let t = weighted_line(level, cells.clone(), vec![0.1; 10]);
        let cubes = cells.iter().enumerate().map(|(i, &x)| {
            let l = 2 + i as u32;
            DyadicCube { level: l, index: [x >> (level - l), 0, 0] }
        });
        let cov = Covering::from_cubes(t, 0.5, 10.0, 1, cubes).unwrap();
        assert_eq!(select_scale(&cov).unwrap(), 2);
    }

    #[test]
    fn select_scale_requires_cover() {
        let t = weighted_line(6, vec![1, 40], vec![1.0, 1.0]);
        let cov = Covering::from_cubes(t, 0.5, 10.0, 1, [DyadicCube { level: 3, index: [0; 3] }]).unwrap();
        assert!(matches!(select_scale(&cov), Err(Error::Inconsistency(_))));
    }

    #[test]
    fn select_scale_on_greedy_covers() {
        let c = cantor_1d(1.0 / 3.0, 6).unwrap();
        let a = product_set(&c, &c, &c).unwrap();
        for i in 0..8 {
            let th = i as f64 / 7.0;
            let img = Arc::new(project_line(&a, &Curve::model(), th).unwrap());
            let Ok(cov) = greedy_cover(img, 0.9, 8.0, 0) else { continue };
            let j = select_scale(&cov).unwrap();
            let masses = level_masses(&cov).unwrap();
            assert!(masses[&j] >= 1.0 / (10.0 * (j * j) as f64));
            assert!(masses.iter().all(|(&k, &m)| k >= j || k == 0 || m < 1.0 / (10.0 * (k * k) as f64)));
        }
    }

    #[test]
    fn bound_formula() {
        assert_eq!(exceptional_bound(1.0, 3.0), 0.0);
        let alpha = 3.0 * 2f64.ln() / 3f64.ln();
        assert!((exceptional_bound(1.0, alpha) - 0.5535).abs() < 2.5e-4);
    }

    #[test]
    fn planar_set_is_exceptional_at_its_normal() {
        let c = Curve::model();
        let n = 9;
        let th0 = 4.0 / 8.0;
        let (_, t, nn) = c.frame(th0).unwrap();
        let level = 9;
        let inv = (level as f64).exp2();
        let mut pts = Vec::new();
        for i in -64..64 {
            for j in -64..64 {
                let x = vec3::add(&vec3::scale(&t, i as f64 / 160.0), &vec3::scale(&nn, j as f64 / 160.0));
                pts.push([(x[0] * inv).round() as i64, (x[1] * inv).round() as i64, (x[2] * inv).round() as i64]);
            }
        }
        let a = PointSet::new(3, Dyadic::from_level(level), pts, 2.0).unwrap();
        let opts = SweepOptions { theta_grid: n, ..Default::default() };
        let sweep = exceptional_sweep(&a, &c, 0.5, &opts).unwrap();
        let row = &sweep.rows[4];
        assert!((row.theta - th0).abs() < 1e-15);
        assert!(row.est_dim < 0.1, "{}", row.est_dim);
        assert!(row.below_s);
        // directions far from θ0 see an interval: compare with a direct box count
        let far = &sweep.rows[0];
        let img = project_line(&a, &c, far.theta).unwrap();
        let (lo, hi) = default_fit_range(img.scale());
        assert_eq!(far.est_dim, box_dimension(&img, lo, hi).unwrap().slope);
        assert!(far.est_dim > 0.7, "{}", far.est_dim);
    }
}
