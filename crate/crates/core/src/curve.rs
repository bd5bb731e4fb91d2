//! Direction curves γ: [0, 1] → S² and δ-separated direction nets.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::spacing::{thin_grid, window_scan, WindowReport};
use crate::vec3::{self, Vec3};

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 9.5367431640625e-7; // 2^-20

/// Grid size used when checking a curve for admissibility.
pub const ADMISSIBILITY_SAMPLES: usize = 4096;

#[derive(Clone)]
enum Shape {
    /// θ ↦ (cos θ, sin θ, 1) / √2
    Model,
    /// θ ↦ normalize(cos θ, sin θ, 1 + 0.2 θ)
    Helix,
    /// θ ↦ (cos θ, sin θ, 0); degenerate
    GreatCircle,
    Table(Arc<TableCurve>),
}

/// A direction curve on the unit sphere together with its derivative frame.
#[derive(Clone)]
pub struct Curve {
    label: String,
    shape: Shape,
    h: f64,
    numeric_derivatives: bool,
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Curve")
            .field("label", &self.label)
            .field("h", &self.h)
            .field("numeric_derivatives", &self.numeric_derivatives)
            .finish()
    }
}

impl Curve {
    pub fn model() -> Self {
        Self::with_shape("model", Shape::Model, false)
    }

    pub fn helix() -> Self {
        Self::with_shape("helix", Shape::Helix, true)
    }

    pub fn great_circle() -> Self {
        Self::with_shape("greatcircle", Shape::GreatCircle, false)
    }

    /// Curve through the rows of a `theta,x,y,z` table, cubic-interpolated
    /// per coordinate and projected back onto the sphere.
    pub fn from_table(label: &str, table: TableCurve) -> Self {
        Self::with_shape(label, Shape::Table(Arc::new(table)), true)
    }

    /// Resolves a CLI curve name: `model`, `helix`, `greatcircle`, or
    /// `table:<path.csv>`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "model" => Ok(Self::model()),
            "helix" => Ok(Self::helix()),
            "greatcircle" => Ok(Self::great_circle()),
            other => match other.strip_prefix("table:") {
                Some(path) => Ok(Self::from_table(other, TableCurve::read_csv(path)?)),
                None => Err(Error::Config(format!("unknown curve '{other}'"))),
            },
        }
    }

    fn with_shape(label: &str, shape: Shape, numeric: bool) -> Self {
        Curve {
            label: label.to_string(),
            shape,
            h: DEFAULT_FD_STEP,
            numeric_derivatives: numeric,
        }
    }

    /// Same curve, but derivatives always come from central differences.
    pub fn with_finite_differences(mut self) -> Self {
        self.numeric_derivatives = true;
        self
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn has_closed_form_derivatives(&self) -> bool {
        !self.numeric_derivatives
    }

    /// γ(θ) for θ ∈ [0, 1].
    pub fn eval(&self, theta: f64) -> Result<Vec3> {
        check_parameter(theta)?;
        Ok(self.raw(theta))
    }

    /// γ′(θ).
    pub fn d1(&self, theta: f64) -> Result<Vec3> {
        check_parameter(theta)?;
        Ok(self.raw_d1(theta))
    }

    /// γ″(θ).
    pub fn d2(&self, theta: f64) -> Result<Vec3> {
        check_parameter(theta)?;
        Ok(self.raw_d2(theta))
    }

    /// det(γ, γ′, γ″) at θ.
    pub fn torsion_det(&self, theta: f64) -> Result<f64> {
        check_parameter(theta)?;
        Ok(vec3::det(&self.raw(theta), &self.raw_d1(theta), &self.raw_d2(theta)))
    }

    /// Unit normal of the cone over γ at θ, γ × γ′ / |γ × γ′|, and the unit
    /// tangent γ′ / |γ′|. Fails where γ′ vanishes.
    pub fn frame(&self, theta: f64) -> Result<(Vec3, Vec3, Vec3)> {
        check_parameter(theta)?;
        let g = self.raw(theta);
        let tangent = vec3::normalize(&self.raw_d1(theta))
            .ok_or_else(|| Error::Geometry(format!("γ′ vanishes at θ = {theta}")))?;
        let normal = vec3::normalize(&vec3::cross(&g, &tangent))
            .ok_or_else(|| Error::Geometry(format!("γ × γ′ vanishes at θ = {theta}")))?;
        Ok((g, tangent, normal))
    }

    /// Evaluation without the parameter check; finite differences near the
    /// ends of [0, 1] step slightly outside the interval.
    pub(crate) fn raw(&self, theta: f64) -> Vec3 {
        match &self.shape {
            Shape::Model => {
                let k = std::f64::consts::FRAC_1_SQRT_2;
                [theta.cos() * k, theta.sin() * k, k]
            }
            Shape::Helix => {
                let v = [theta.cos(), theta.sin(), 1.0 + 0.2 * theta];
                vec3::scale(&v, 1.0 / vec3::norm(&v))
            }
            Shape::GreatCircle => [theta.cos(), theta.sin(), 0.0],
            Shape::Table(table) => table.eval(theta),
        }
    }

    pub(crate) fn raw_d1(&self, theta: f64) -> Vec3 {
        if !self.numeric_derivatives {
            match &self.shape {
                Shape::Model => {
                    let k = std::f64::consts::FRAC_1_SQRT_2;
                    return [-theta.sin() * k, theta.cos() * k, 0.0];
                }
                Shape::GreatCircle => return [-theta.sin(), theta.cos(), 0.0],
                _ => {}
            }
        }
        let h = self.h;
        let (p, m) = (self.raw(theta + h), self.raw(theta - h));
        vec3::scale(&vec3::sub(&p, &m), 0.5 / h)
    }

    pub(crate) fn raw_d2(&self, theta: f64) -> Vec3 {
        if !self.numeric_derivatives {
            match &self.shape {
                Shape::Model => {
                    let k = std::f64::consts::FRAC_1_SQRT_2;
                    return [-theta.cos() * k, -theta.sin() * k, 0.0];
                }
                Shape::GreatCircle => return [-theta.cos(), -theta.sin(), 0.0],
                _ => {}
            }
        }
        // The second difference loses h⁻² of roundoff, so it uses √h.
        let h = self.h.sqrt();
        let (p, c, m) = (self.raw(theta + h), self.raw(theta), self.raw(theta - h));
        let num = vec3::add(&vec3::sub(&p, &c), &vec3::sub(&m, &c));
        vec3::scale(&num, 1.0 / (h * h))
    }
}

fn check_parameter(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("parameter {theta} outside [0, 1]")))
    }
}

/// Minimum of |det(γ, γ′, γ″)| over the uniform grid of `n_samples` points on
/// [0, 1]. Zero flags a degenerate curve.
pub fn nondegeneracy_margin(curve: &Curve, n_samples: usize) -> Result<f64> {
    if n_samples < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let mut margin = f64::INFINITY;
    for i in 0..n_samples {
        let theta = i as f64 / (n_samples - 1) as f64;
        let d = curve.torsion_det(theta)?;
        if !d.is_finite() {
            return Err(Error::Numeric(format!("non-finite frame at θ = {theta}")));
        }
        margin = margin.min(d.abs());
    }
    Ok(margin)
}

/// True when the curve passes the admissibility check on the standard grid.
pub fn is_admissible(curve: &Curve) -> Result<bool> {
    Ok(nondegeneracy_margin(curve, ADMISSIBILITY_SAMPLES)? > 0.0)
}

/// A δ-separated set of curve parameters satisfying a (δ, t) counting
/// condition on every dyadic window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionNet {
    pub scale: Dyadic,
    /// Grid indices; the parameter of index i is i·δ.
    pub indices: Vec<i64>,
    pub t: f64,
    /// Achieved worst constant of the window condition.
    pub c_net: f64,
    pub curve: String,
}

impl DirectionNet {
    pub fn delta(&self) -> f64 {
        self.scale.delta()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn thetas(&self) -> Vec<f64> {
        let d = self.delta();
        self.indices.iter().map(|&i| i as f64 * d).collect()
    }

    /// Exhaustive window check: every closed interval of dyadic length
    /// r ∈ [δ, 1] at every grid position.
    pub fn validate(&self) -> WindowReport {
        window_scan(&self.indices, self.scale.level(), self.t)
    }

    /// Lower bound on the cardinality a net at this scale must reach:
    /// (log₂ δ⁻¹)⁻² δ^-t / 16.
    pub fn required_cardinality(scale: Dyadic, t: f64) -> f64 {
        scale.log_loss() * (t * scale.log2_inv()).exp2() / 16.0
    }
}

/// Builds a (δ, t) direction net by seeded greedy thinning of the δ-grid of
/// [0, 1]. For t = 1 this is the full grid, for t = 0 a single point.
pub fn direction_net(curve: &Curve, scale: Dyadic, t: f64, seed: u64) -> Result<DirectionNet> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("net exponent {t} outside [0, 1]")));
    }
    if scale.level() > 24 {
        return Err(Error::Capacity(format!("direction grid at level {} is too fine", scale.level())));
    }
    let n = (1usize << scale.level()) + 1;
    let indices = if t == 1.0 {
        (0..n as i64).collect()
    } else {
        thin_grid(n, scale.level(), t, seed)
    };
    let mut net = DirectionNet {
        scale,
        indices,
        t,
        c_net: 0.0,
        curve: curve.label().to_string(),
    };
    net.c_net = net.validate().worst_constant;
    let required = DirectionNet::required_cardinality(scale, t);
    if (net.len() as f64) < required {
        return Err(Error::Infeasible(format!(
            "net has {} points, needs {required:.3}",
            net.len()
        )));
    }
    Ok(net)
}

/// Cubic interpolation table for custom curves.
#[derive(Clone, Debug)]
pub struct TableCurve {
    thetas: Vec<f64>,
    splines: [Spline; 3],
}

impl TableCurve {
    pub fn new(rows: &[(f64, Vec3)]) -> Result<Self> {
        if rows.len() < 4 {
            return Err(Error::Config("curve table needs at least 4 rows".into()));
        }
        let thetas: Vec<f64> = rows.iter().map(|r| r.0).collect();
        if thetas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("curve table parameters must increase".into()));
        }
        if thetas[0] > 0.0 || thetas[thetas.len() - 1] < 1.0 {
            return Err(Error::Config("curve table must span [0, 1]".into()));
        }
        let coord = |c: usize| -> Vec<f64> { rows.iter().map(|r| r.1[c]).collect() };
        let splines = [
            Spline::new(&thetas, &coord(0)),
            Spline::new(&thetas, &coord(1)),
            Spline::new(&thetas, &coord(2)),
        ];
        Ok(TableCurve { thetas, splines })
    }

    /// Reads `theta,x,y,z` rows; a non-numeric first line is taken as a header.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 4 => rows.push((v[0], [v[1], v[2], v[3]])),
                Err(_) if lineno == 0 => continue,
                _ => return Err(Error::Parse(format!("bad curve table row {}: '{line}'", lineno + 1))),
            }
        }
        Self::new(&rows)
    }

    fn eval(&self, theta: f64) -> Vec3 {
        let i = match self.thetas.binary_search_by(|x| x.total_cmp(&theta)) {
            Ok(i) => i.min(self.thetas.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.thetas.len() - 2),
        };
        let v = [
            self.splines[0].eval(&self.thetas, i, theta),
            self.splines[1].eval(&self.thetas, i, theta),
            self.splines[2].eval(&self.thetas, i, theta),
        ];
        vec3::normalize(&v).unwrap_or([f64::NAN; 3])
    }
}

#[derive(Clone, Debug)]
struct Spline {
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    /// Cubic spline with not-a-knot ends, stored as knot second derivatives.
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let (mut lo, mut di, mut up, mut rhs) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 1..n - 1 {
            lo[i] = h[i - 1] / 6.0;
            di[i] = (h[i - 1] + h[i]) / 3.0;
            up[i] = h[i] / 6.0;
            rhs[i] = (y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1];
        }
        // Continuous third derivative at x[1] and x[n-2] expresses the end
        // values through their neighbours; substitute into rows 1 and n-2.
        let (h0, h1) = (h[0], h[1]);
        di[1] += lo[1] * (h0 + h1) / h1;
        up[1] -= lo[1] * h0 / h1;
        let (a, b) = (h[n - 3], h[n - 2]);
        di[n - 2] += up[n - 2] * (a + b) / a;
        lo[n - 2] -= up[n - 2] * b / a;

        for i in 2..n - 1 {
            let w = lo[i] / di[i - 1];
            di[i] -= w * up[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 2] = rhs[n - 2] / di[n - 2];
        for i in (1..n - 2).rev() {
            m[i] = (rhs[i] - up[i] * m[i + 1]) / di[i];
        }
        m[0] = ((h0 + h1) * m[1] - h0 * m[2]) / h1;
        m[n - 1] = ((a + b) * m[n - 2] - b * m[n - 3]) / a;
        Spline { y: y.to_vec(), m }
    }

    fn eval(&self, x: &[f64], i: usize, t: f64) -> f64 {
        let h = x[i + 1] - x[i];
        let a = (x[i + 1] - t) / h;
        let b = (t - x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn model_curve_at_zero() {
        let g = Curve::model().eval(0.0).unwrap();
        assert!((g[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        assert_eq!(g[1], 0.0);
        assert!((g[2] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
    }

    #[test]
    fn model_third_coordinate_is_constant() {
        let c = Curve::model();
        for i in 0..=100 {
            assert_eq!(c.eval(i as f64 / 100.0).unwrap()[2], INV_SQRT2);
        }
    }

    #[test]
    fn great_circle_is_planar() {
        let g = Curve::great_circle().eval(0.3).unwrap();
        assert_eq!(g[2], 0.0);
        assert!((vec3::norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_outside_unit_interval() {
        assert!(matches!(Curve::model().eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(Curve::model().eval(-1e-9), Err(Error::Domain(_))));
    }

    #[test]
    fn unit_norm_on_grids() {
        for c in [Curve::model(), Curve::great_circle()] {
            for i in 0..ADMISSIBILITY_SAMPLES {
                let th = i as f64 / (ADMISSIBILITY_SAMPLES - 1) as f64;
                assert!((vec3::norm(&c.eval(th).unwrap()) - 1.0).abs() < 1e-10);
            }
        }
        let helix = Curve::helix();
        for i in 0..1024 {
            let th = i as f64 / 1023.0;
            assert!((vec3::norm(&helix.eval(th).unwrap()) - 1.0).abs() < 1e-6);
        }
    }

    // Oracle: for γ∘, γ × γ′ ... det computed symbolically equals
    // (1/√2)³ (cos² + sin²) = 2^{-3/2} for every θ.
    #[test]
    fn model_margin_closed_form() {
        let expected = 0.5f64.powf(1.5);
        let m = nondegeneracy_margin(&Curve::model(), 1024).unwrap();
        assert!((m - expected).abs() < 1e-12, "{m}");
        assert!((m - 0.3535534).abs() < 1e-7);
    }

    #[test]
    fn model_margin_finite_differences() {
        let m = nondegeneracy_margin(&Curve::model().with_finite_differences(), 1024).unwrap();
        assert!((m - 0.3535534).abs() < 1e-4, "{m}");
    }

    #[test]
    fn finite_difference_frame_matches_closed_form() {
        let exact = Curve::model();
        let fd = Curve::model().with_finite_differences();
        for i in 0..=32 {
            let th = i as f64 / 32.0;
            let (a1, b1) = (exact.d1(th).unwrap(), fd.d1(th).unwrap());
            let (a2, b2) = (exact.d2(th).unwrap(), fd.d2(th).unwrap());
            assert!(vec3::norm(&vec3::sub(&a1, &b1)) < 1e-8);
            assert!(vec3::norm(&vec3::sub(&a2, &b2)) < 1e-5);
        }
    }

    #[test]
    fn great_circle_is_degenerate() {
        assert_eq!(nondegeneracy_margin(&Curve::great_circle(), 1024).unwrap(), 0.0);
        assert!(!is_admissible(&Curve::great_circle()).unwrap());
    }

    #[test]
    fn helix_is_admissible() {
        assert!(is_admissible(&Curve::helix()).unwrap());
    }

    #[test]
    fn margin_is_stable_under_refinement() {
        let c = Curve::model();
        let a = nondegeneracy_margin(&c, 512).unwrap();
        let b = nondegeneracy_margin(&c, 1024).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn margin_needs_two_samples() {
        assert!(nondegeneracy_margin(&Curve::model(), 1).is_err());
    }

    #[test]
    fn full_net_at_t_one() {
        let net = direction_net(&Curve::model(), Dyadic::from_level(6), 1.0, 11).unwrap();
        assert_eq!(net.len(), 65);
        let th = net.thetas();
        assert!(th.windows(2).all(|w| (w[1] - w[0] - 1.0 / 64.0).abs() < 1e-15));
    }

    #[test]
    fn single_point_net_at_t_zero() {
        let net = direction_net(&Curve::model(), Dyadic::from_level(4), 0.0, 5).unwrap();
        assert_eq!(net.len(), 1);
    }

    // Cantor-style oracle: the middle-halves selection at depth 8 keeps
    // 2^4 = 16 parameters and every window of 2^j steps holds <= 2^{j/2}
    // of them, so a greedy net should be of the same order.
    #[test]
    fn half_dimensional_net() {
        let scale = Dyadic::from_level(8);
        let oracle: Vec<i64> = (0..16i64)
            .map(|b| (0..4).map(|d| ((b >> d) & 1) * 3 * 4i64.pow(d as u32)).sum())
            .collect();
        assert!(window_scan(&oracle, 8, 0.5).worst_constant <= 2.0);

        let net = direction_net(&Curve::model(), scale, 0.5, 7).unwrap();
        assert!(!net.is_empty());
        assert!(net.len() >= 4 && net.len() <= 16, "{}", net.len());
        assert!(net.validate().worst_constant <= 1.0);
        assert!(net.thetas().windows(2).all(|w| w[1] - w[0] >= scale.delta()));
    }

    #[test]
    fn table_curve_reproduces_model() {
        let model = Curve::model();
        let rows: Vec<(f64, Vec3)> = (0..=32)
            .map(|i| {
                let th = i as f64 / 32.0;
                (th, model.eval(th).unwrap())
            })
            .collect();
        let table = Curve::from_table("custom", TableCurve::new(&rows).unwrap());
        for i in 0..=100 {
            let th = i as f64 / 100.0;
            let d = vec3::sub(&table.eval(th).unwrap(), &model.eval(th).unwrap());
            let e = vec3::norm(&d);
            assert!(if (0.1..=0.9).contains(&th) { e < 1e-6 } else { e < 1e-4 }, "{th} {e}");
        }
        let m = nondegeneracy_margin(&table, 256).unwrap();
        assert!((m - 0.3535534).abs() < 1e-2, "{m}");
    }
}
