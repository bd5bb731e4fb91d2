use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use projlab::covering::{greedy_cover, validate_covering};
use projlab::fourier::{decoupling_ratio, random_cap_function, tspacing_subsample, ConeGeometry, RadialFloor};
use projlab::incidence::{column_counts, incidence_count, random_config, verify_with_matrix};
use projlab::projection::{
    box_dimension, default_fit_range, exceptional_bound, exceptional_sweep, least_squares, SweepOptions,
};
use projlab::{Curve, Dyadic, Result};

use crate::config::{Command, RunConfig};
use crate::svg::{Plot, Series};

/// Files produced by a run, written by the caller in this order.
pub type Outputs = Vec<(String, Vec<u8>)>;

pub fn run(cfg: &RunConfig) -> Result<Outputs> {
    match cfg.command.expect("resolved") {
        Command::Gen => gen(cfg),
        Command::Cover => cover(cfg),
        Command::Sweep => sweep(cfg),
        Command::Incidence => incidence(cfg),
        Command::Decouple => decouple(cfg),
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    config: &'a RunConfig,
    results: T,
}

fn summary<T: Serialize>(cfg: &RunConfig, results: T) -> Result<(String, Vec<u8>)> {
    let mut text = serde_json::to_string_pretty(&Summary { config: cfg, results })?;
    text.push('\n');
    Ok(("summary.json".into(), text.into_bytes()))
}

fn gen(cfg: &RunConfig) -> Result<Outputs> {
    let set = cfg.build_set()?;
    let mut csv = Vec::new();
    set.write_csv(&mut csv)?;
    let (r_min, r_max) = default_fit_range(set.scale());
    #[derive(Serialize)]
    struct GenResult {
        delta: f64,
        points: usize,
        nominal_dim: f64,
        box_dimension: Option<f64>,
    }
    let results = GenResult {
        delta: set.delta(),
        points: set.len(),
        nominal_dim: set.nominal_dim(),
        box_dimension: box_dimension(&set, r_min, r_max).ok().map(|f| f.slope),
    };
    Ok(vec![("points.csv".into(), csv), summary(cfg, results)?])
}

fn cover(cfg: &RunConfig) -> Result<Outputs> {
    let set = Arc::new(cfg.build_set()?);
    let dim = set.dim();
    let c = greedy_cover(set, cfg.s, cfg.epsilon, cfg.min_level)?;
    let report = validate_covering(&c);
    let mut csv = String::from("k");
    for name in ["x", "y", "z"].iter().take(dim) {
        let _ = write!(csv, ",{name}");
    }
    csv.push('\n');
    for k in c.levels() {
        for cube in c.level(k) {
            let _ = write!(csv, "{k}");
            for x in &cube.index[..dim] {
                let _ = write!(csv, ",{x}");
            }
            csv.push('\n');
        }
    }
    let mut json = serde_json::to_string_pretty(&c.to_json())?;
    json.push('\n');
    #[derive(Serialize)]
    struct CoverResult<R: Serialize> {
        cubes: usize,
        report: R,
    }
    Ok(vec![
        ("cubes.csv".into(), csv.into_bytes()),
        ("covering.json".into(), json.into_bytes()),
        summary(cfg, CoverResult { cubes: c.len(), report })?,
    ])
}

fn sweep(cfg: &RunConfig) -> Result<Outputs> {
    let set = cfg.build_set()?;
    let curve = Curve::by_name(&cfg.curve)?;
    let opts = SweepOptions {
        theta_grid: cfg.theta_grid,
        margin: cfg.margin,
        ..SweepOptions::default()
    };
    let mut sw = exceptional_sweep(&set, &curve, cfg.s, &opts)?;
    if cfg.alpha > 0.0 {
        sw.summary.alpha = cfg.alpha;
        sw.summary.bound = exceptional_bound(cfg.s, cfg.alpha);
    }
    let mut csv = String::from("theta,est_dim,r2,below_s\n");
    for r in &sw.rows {
        let _ = writeln!(csv, "{},{},{},{}", r.theta, r.est_dim, r.r2, r.below_s);
    }
    let plot = Plot {
        title: format!("box dimension of projections, {}", curve.label()),
        x_label: "θ".into(),
        y_label: "estimated dimension".into(),
        series: vec![Series {
            label: "est_dim".into(),
            points: sw.rows.iter().map(|r| (r.theta, r.est_dim)).collect(),
        }],
        reference: Some((format!("s − margin = {:.2}", cfg.s - cfg.margin), cfg.s - cfg.margin)),
    };
    Ok(vec![
        ("sweep.csv".into(), csv.into_bytes()),
        summary(cfg, &sw.summary)?,
        ("sweep.svg".into(), plot.render().into_bytes()),
    ])
}

#[derive(Clone, Debug, Serialize)]
pub struct IncidenceRow {
    pub delta: f64,
    pub seed: u64,
    pub theta_count: usize,
    pub heavy_count: usize,
    pub incidences: usize,
    pub column_sum: usize,
    pub identity_ok: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub fitted_c: f64,
    pub violation: bool,
}

/// One seeded incidence experiment at one scale.
pub fn incidence_cell(curve: &Curve, scale: Dyadic, s: f64, t: f64, seed: u64, epsilon: f64, ceiling: f64) -> Result<IncidenceRow> {
    let icfg = random_config(curve, scale, s, t, seed)?;
    let m = incidence_count(&icfg);
    let report = verify_with_matrix(&icfg, &m, epsilon, ceiling)?;
    let column_sum: usize = column_counts(&icfg).iter().sum();
    let row_sum: usize = m.row_counts().iter().sum();
    Ok(IncidenceRow {
        delta: scale.delta(),
        seed,
        theta_count: report.theta_count,
        heavy_count: report.heavy_count,
        incidences: report.incidences,
        column_sum,
        identity_ok: row_sum == column_sum && row_sum == m.total(),
        lhs: report.lhs,
        rhs: report.rhs,
        fitted_c: report.fitted_c,
        violation: report.violation,
    })
}

fn incidence(cfg: &RunConfig) -> Result<Outputs> {
    let curve = Curve::by_name(&cfg.curve)?;
    let scales = cfg.scales();
    // cells run one at a time: a single fine-scale configuration already
    // holds millions of balls and parallelizes internally
    let mut rows = Vec::new();
    for seed in cfg.seed..cfg.seed + cfg.seeds {
        for &scale in &scales {
            rows.push(incidence_cell(&curve, scale, cfg.s, cfg.t, seed, cfg.epsilon, cfg.ceiling)?);
        }
    }
    let mut csv = String::from("delta,s,t,seed,theta_count,heavy_count,incidences,lhs,rhs,fitted_C,violation\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.delta, cfg.s, cfg.t, r.seed, r.theta_count, r.heavy_count, r.incidences, r.lhs, r.rhs, r.fitted_c, r.violation
        );
    }
    let per_seed_ratio: Vec<f64> = rows
        .chunks(scales.len())
        .map(|c| {
            let max = c.iter().map(|r| r.fitted_c).fold(0.0, f64::max);
            let min = c.iter().map(|r| r.fitted_c).fold(f64::INFINITY, f64::min);
            max / min
        })
        .collect();
    #[derive(Serialize)]
    struct ScaleStats {
        delta: f64,
        min_fitted_c: f64,
        max_fitted_c: f64,
    }
    let per_scale: Vec<ScaleStats> = scales
        .iter()
        .enumerate()
        .map(|(i, sc)| {
            let vals: Vec<f64> = rows.iter().skip(i).step_by(scales.len()).map(|r| r.fitted_c).collect();
            ScaleStats {
                delta: sc.delta(),
                min_fitted_c: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max_fitted_c: vals.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    #[derive(Serialize)]
    struct IncidenceResult {
        runs: usize,
        max_fitted_c: f64,
        any_violation: bool,
        identity_holds: bool,
        max_cross_scale_ratio: f64,
        per_scale: Vec<ScaleStats>,
    }
    let results = IncidenceResult {
        runs: rows.len(),
        max_fitted_c: rows.iter().map(|r| r.fitted_c).fold(0.0, f64::max),
        any_violation: rows.iter().any(|r| r.violation),
        identity_holds: rows.iter().all(|r| r.identity_ok),
        max_cross_scale_ratio: per_seed_ratio.iter().copied().fold(0.0, f64::max),
        per_scale,
    };
    let plot = Plot {
        title: format!("fitted C against scale (s = {}, t = {})", cfg.s, cfg.t),
        x_label: "log₂ δ⁻¹".into(),
        y_label: "log₂ fitted C".into(),
        series: vec![
            Series {
                label: "max over seeds".into(),
                points: results.per_scale.iter().map(|p| (-p.delta.log2(), p.max_fitted_c.log2())).collect(),
            },
            Series {
                label: "min over seeds".into(),
                points: results.per_scale.iter().map(|p| (-p.delta.log2(), p.min_fitted_c.log2())).collect(),
            },
        ],
        reference: Some(("ceiling".into(), cfg.ceiling.log2())),
    };
    Ok(vec![
        ("incidence.csv".into(), csv.into_bytes()),
        summary(cfg, results)?,
        ("incidence.svg".into(), plot.render().into_bytes()),
    ])
}

#[derive(Clone, Debug, Serialize)]
pub struct DecoupleRow {
    pub delta: f64,
    pub t: f64,
    pub seed: u64,
    pub caps: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Random-phase function on a seeded t-spaced cap selection.
pub fn decouple_cell(geometry: &ConeGeometry, t: f64, seed: u64) -> Result<DecoupleRow> {
    let sel = tspacing_subsample(geometry, t, seed)?;
    let g = random_cap_function(geometry, &sel.caps, seed)?;
    let r = decoupling_ratio(&g, &sel.caps, t, geometry)?;
    Ok(DecoupleRow { delta: r.delta, t, seed, caps: r.caps, lhs: r.lhs, rhs: r.rhs, ratio: r.ratio })
}

/// Least-squares slope of log₂ ratio against log₂ δ⁻¹.
pub fn fitted_exponent(rows: &[DecoupleRow]) -> Option<f64> {
    let xs: Vec<f64> = rows.iter().map(|r| -r.delta.log2()).collect();
    if xs.iter().all(|&x| x == xs[0]) {
        return None;
    }
    let ys: Vec<f64> = rows.iter().map(|r| r.ratio.log2()).collect();
    Some(least_squares(&xs, &ys).0)
}

fn decouple(cfg: &RunConfig) -> Result<Outputs> {
    let curve = Curve::by_name(&cfg.curve)?;
    let mut rows = Vec::new();
    for scale in cfg.scales() {
        let geometry = ConeGeometry::build(&curve, scale, RadialFloor::Half)?;
        let seeds: Vec<u64> = (cfg.seed..cfg.seed + cfg.seeds).collect();
        let cells: Vec<DecoupleRow> = seeds
            .par_iter()
            .map(|&seed| decouple_cell(&geometry, cfg.t, seed))
            .collect::<Result<_>>()?;
        rows.extend(cells);
    }
    let mut csv = String::from("delta,t,seed,lhs,rhs,ratio\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.delta, r.t, r.seed, r.lhs, r.rhs, r.ratio);
    }
    #[derive(Serialize)]
    struct DecoupleResult {
        runs: usize,
        max_ratio: f64,
        fitted_exponent: Option<f64>,
    }
    let results = DecoupleResult {
        runs: rows.len(),
        max_ratio: rows.iter().map(|r| r.ratio).fold(0.0, f64::max),
        fitted_exponent: fitted_exponent(&rows),
    };
    let mut by_scale: Vec<(f64, f64)> = Vec::new();
    for r in &rows {
        let x = -r.delta.log2();
        match by_scale.last_mut() {
            Some(last) if last.0 == x => last.1 = last.1.max(r.ratio),
            _ => by_scale.push((x, r.ratio)),
        }
    }
    let plot = Plot {
        title: format!("decoupling ratio against scale (t = {})", cfg.t),
        x_label: "log₂ δ⁻¹".into(),
        y_label: "ratio".into(),
        series: vec![
            Series { label: "max over seeds".into(), points: by_scale },
            Series { label: "runs".into(), points: rows.iter().map(|r| (-r.delta.log2(), r.ratio)).collect() },
        ],
        reference: None,
    };
    Ok(vec![
        ("decouple.csv".into(), csv.into_bytes()),
        summary(cfg, results)?,
        ("decouple.svg".into(), plot.render().into_bytes()),
    ])
}
