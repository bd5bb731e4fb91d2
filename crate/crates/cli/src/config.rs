use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use projlab::fractal::{cantor_1d, full_grid, grid_ball, product_set};
use projlab::{Dyadic, Error, PointSet, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Gen,
    Cover,
    Sweep,
    Incidence,
    Decouple,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetKind {
    /// middle-gap Cantor set on [0, 1]
    Cantor,
    /// product of three Cantor sets, centered at the origin
    CantorProduct,
    /// full δ-grid of [0, 1)^dim
    Grid,
    /// δ-lattice points of the closed unit ball
    Ball,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SetSpec {
    pub kind: SetKind,
    pub ratio: f64,
    pub depth: u32,
    pub dim: usize,
}

impl Default for SetSpec {
    fn default() -> Self {
        SetSpec {
            kind: SetKind::Cantor,
            ratio: 1.0 / 3.0,
            depth: 6,
            dim: 1,
        }
    }
}

/// Fully resolved run configuration; every field has a default so that the
/// summary can echo the complete set of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub curve: String,
    pub delta: f64,
    /// scales for incidence and decouple; empty means `[delta]`
    pub deltas: Vec<f64>,
    pub s: f64,
    pub t: f64,
    /// dimension of the swept set; 0 takes the set's nominal dimension
    pub alpha: f64,
    pub theta_grid: usize,
    pub margin: f64,
    pub seed: u64,
    pub seeds: u64,
    pub epsilon: f64,
    pub min_level: i32,
    pub ceiling: f64,
    pub set: SetSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            curve: "model".into(),
            delta: 1.0 / 256.0,
            deltas: Vec::new(),
            s: 0.5,
            t: 0.5,
            alpha: 0.0,
            theta_grid: 256,
            margin: 0.1,
            seed: 0,
            seeds: 1,
            epsilon: 0.1,
            min_level: 0,
            ceiling: 65536.0,
            set: SetSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path`, applies `key=value` overrides (dotted keys reach nested
    /// fields, values parse as JSON when they can) and fills defaults.
    pub fn load(path: &Path, overrides: &[String], command: Command) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !value.is_object() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        match cfg.command {
            Some(c) if c != command => {
                return Err(Error::Config(format!("configuration is for {c:?}, not {command:?}")));
            }
            _ => cfg.command = Some(command),
        }
        if cfg.deltas.is_empty() {
            cfg.deltas = vec![cfg.delta];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        Dyadic::from_delta(self.delta)?;
        for &d in &self.deltas {
            Dyadic::from_delta(d)?;
        }
        let command = self.command.expect("resolved");
        if matches!(command, Command::Sweep | Command::Incidence) && !(0.0..=1.0).contains(&self.s) {
            return Err(Error::Config(format!("s = {} must lie in [0, 1]", self.s)));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::Config(format!("t = {} must lie in [0, 1]", self.t)));
        }
        if self.theta_grid < 2 {
            return Err(Error::Config("theta_grid must be at least 2".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be positive".into()));
        }
        if !(self.set.ratio > 0.0 && self.set.ratio < 0.5) && matches!(self.set.kind, SetKind::Cantor | SetKind::CantorProduct) {
            return Err(Error::Config(format!("Cantor ratio {} must lie in (0, 1/2)", self.set.ratio)));
        }
        Ok(())
    }

    pub fn scale(&self) -> Dyadic {
        Dyadic::from_delta(self.delta).expect("validated")
    }

    pub fn scales(&self) -> Vec<Dyadic> {
        self.deltas.iter().map(|&d| Dyadic::from_delta(d).expect("validated")).collect()
    }

    /// The point set described by `set`; Cantor sets carry their own scale,
    /// grids use `delta`.
    pub fn build_set(&self) -> Result<PointSet> {
        let spec = &self.set;
        match spec.kind {
            SetKind::Cantor => cantor_1d(spec.ratio, spec.depth),
            SetKind::CantorProduct => {
                let c = cantor_1d(spec.ratio, spec.depth)?;
                product_set(&c, &c, &c)
            }
            SetKind::Grid => full_grid(spec.dim, self.scale()),
            SetKind::Ball => grid_ball(spec.dim, self.scale()),
        }
    }
}

fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?} descends into a non-object")))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override key in {spec:?}")))
}
