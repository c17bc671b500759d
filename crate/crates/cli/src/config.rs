//! Experiment config: parsing and per-clause validation.

use std::path::Path;

use jaclab::coefficients::{CoefficientSet, ScalarFn};
use jaclab::geometry::{validate_scene, Scene, SceneSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::expr::Expr;

pub const BUNDLED_TWO_PHASE: &str = include_str!("../configs/bundled-two-phase.json");

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_h")]
    pub h: f64,
    /// Relative residual target of the Krylov solver.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_h() -> f64 {
    1.0 / 32.0
}

fn default_tol() -> f64 {
    1e-12
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            h: default_h(),
            tol: default_tol(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructBlock {
    pub sigma: Option<f64>,
    pub dict_size: Option<usize>,
    pub fit_radius: Option<f64>,
    pub eps_max: Option<f64>,
    pub probes: Option<usize>,
    pub reduce: Option<bool>,
    pub retry_cap: Option<usize>,
    pub max_centers: Option<usize>,
    /// Mesh size used for the shift search.
    pub shift_h: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyBlock {
    /// Dirichlet traces as expressions in `x`, `y`.
    #[serde(default = "default_traces")]
    pub traces: Vec<String>,
    /// Sample grid spacing (default: mesh size).
    pub spacing: Option<f64>,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn default_traces() -> Vec<String> {
    ["x", "y", "x^2 - y^2", "2*x*y", "1"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_probes() -> usize {
    64
}

impl Default for FamilyBlock {
    fn default() -> Self {
        FamilyBlock {
            traces: default_traces(),
            spacing: None,
            probes: default_probes(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceBlock {
    pub seed: Option<u64>,
    /// Random draws allowed per reduction stage.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_target")]
    pub target: usize,
}

fn default_draws() -> usize {
    50
}

fn default_target() -> usize {
    4
}

impl Default for ReduceBlock {
    fn default() -> Self {
        ReduceBlock {
            seed: None,
            draws: default_draws(),
            target: default_target(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconBlock {
    /// `γ` per region; defaults to the isotropic coefficients.
    pub phantom: Option<Vec<ScalarFn>>,
    pub anchor: Option<[f64; 2]>,
    #[serde(default = "one")]
    pub anchor_value: f64,
    pub spacing: Option<f64>,
    pub probes: Option<usize>,
    pub lap_radius: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for ReconBlock {
    fn default() -> Self {
        ReconBlock {
            phantom: None,
            anchor: None,
            anchor_value: 1.0,
            spacing: None,
            probes: None,
            lap_radius: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub prefix: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub coefficients: CoefficientSet,
    pub solver: SolverBlock,
    pub construct: ConstructBlock,
    pub family: FamilyBlock,
    pub reduce: ReduceBlock,
    pub recon: ReconBlock,
    pub output: OutputBlock,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub scene_built: Option<Scene>,
    #[serde(skip)]
    pub traces: Vec<Expr>,
    /// Raw config text, hashed into the manifest.
    #[serde(skip)]
    pub source: String,
}

const TOP_KEYS: [&str; 9] = [
    "scene",
    "coefficients",
    "solver",
    "construct",
    "family",
    "reduce",
    "recon",
    "output",
    "seed",
];

/// Reads a config file, or the bundled two-phase config by name.
pub fn read_source(path: &Path) -> Result<String, Vec<String>> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) => {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if !path.exists() && (name == "bundled-two-phase.json" || name == "bundled-two-phase") {
                Ok(BUNDLED_TWO_PHASE.to_string())
            } else {
                Err(vec![format!("config {}: {e}", path.display())])
            }
        }
    }
}

fn block<T: DeserializeOwned>(v: &Value, key: &str, errs: &mut Vec<String>) -> Option<T> {
    match v.get(key) {
        None => None,
        Some(b) => match serde_json::from_value::<T>(b.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(format!("{key}: {e}"));
                None
            }
        },
    }
}

/// Missing keys a serde error would only report one at a time.
fn required_keys(v: &Value, errs: &mut Vec<String>) {
    for key in ["scene", "coefficients"] {
        if v.get(key).is_none() {
            errs.push(format!("{key}: missing required block"));
        }
    }
    if let Some(s) = v.get("scene") {
        if s.get("outer").is_none() {
            errs.push("scene.outer: missing field".into());
        }
    }
    if let Some(c) = v.get("coefficients") {
        for key in ["lambda", "regions"] {
            if c.get(key).is_none() {
                errs.push(format!("coefficients.{key}: missing field"));
            }
        }
        if let Some(Value::Array(rs)) = c.get("regions") {
            for (k, r) in rs.iter().enumerate() {
                if r.get("id").is_none() {
                    errs.push(format!("coefficients.regions[{k}].id: missing field"));
                }
                if r.get("A").is_none() && r.get("A_scalar").is_none() {
                    errs.push(format!("coefficients.regions[{k}]: missing \"A\" or \"A_scalar\""));
                }
            }
        }
    }
}

/// Parses and validates; every violated clause yields one line.
pub fn parse(text: &str) -> Result<ExperimentConfig, Vec<String>> {
    let v: Value = serde_json::from_str(text).map_err(|e| vec![format!("config is not valid JSON: {e}")])?;
    let Some(obj) = v.as_object() else {
        return Err(vec!["config must be a JSON object".into()]);
    };
    let mut errs = Vec::new();
    for k in obj.keys() {
        if !TOP_KEYS.contains(&k.as_str()) {
            errs.push(format!("{k}: unknown block (expected one of {})", TOP_KEYS.join(", ")));
        }
    }
    let before = errs.len();
    required_keys(&v, &mut errs);
    let structural = errs.len() > before;
    let scene: Option<SceneSpec> = if structural {
        None
    } else {
        block(&v, "scene", &mut errs)
    };
    let coefficients: Option<CoefficientSet> = if structural {
        None
    } else {
        block(&v, "coefficients", &mut errs)
    };
    let solver: SolverBlock = block(&v, "solver", &mut errs).unwrap_or_default();
    let construct: ConstructBlock = block(&v, "construct", &mut errs).unwrap_or_default();
    let family: FamilyBlock = block(&v, "family", &mut errs).unwrap_or_default();
    let reduce: ReduceBlock = block(&v, "reduce", &mut errs).unwrap_or_default();
    let recon: ReconBlock = block(&v, "recon", &mut errs).unwrap_or_default();
    let output: OutputBlock = block(&v, "output", &mut errs).unwrap_or_default();
    let seed: Option<u64> = block(&v, "seed", &mut errs);

    if !(solver.h > 0.0 && solver.h < 1.0) {
        errs.push(format!("solver.h: must lie in (0, 1), got {}", solver.h));
    }
    if !(solver.tol > 0.0 && solver.tol < 1e-3) {
        errs.push(format!("solver.tol: must lie in (0, 1e-3), got {}", solver.tol));
    }
    if let Some(s) = construct.sigma {
        if !(s > 0.0) {
            errs.push(format!("construct.sigma: must be positive, got {s}"));
        }
    }
    if construct.dict_size == Some(0) {
        errs.push("construct.dict_size: must be at least 1".into());
    }
    if reduce.draws == 0 {
        errs.push("reduce.draws: must be at least 1".into());
    }
    if !(recon.anchor_value > 0.0) {
        errs.push(format!(
            "recon.anchor_value: must be positive, got {}",
            recon.anchor_value
        ));
    }
    if let Some(p) = &output.prefix {
        if p.is_empty() || p.contains(['/', '\\']) || p.starts_with('.') {
            errs.push(format!("output.prefix: must be a plain file name, got {p:?}"));
        }
    }
    let mut traces = Vec::new();
    if family.traces.is_empty() {
        errs.push("family.traces: must not be empty".into());
    }
    for (k, t) in family.traces.iter().enumerate() {
        match Expr::parse(t) {
            Ok(e) => traces.push(e),
            Err(e) => errs.push(format!("family.traces[{k}]: {e}")),
        }
    }

    let mut scene_built = None;
    if let Some(spec) = &scene {
        let rep = validate_scene(spec);
        for viol in &rep.violations {
            errs.push(format!("scene: {viol}"));
        }
        if rep.ok() {
            match Scene::new(spec.clone()) {
                Ok(s) => scene_built = Some(s),
                Err(e) => errs.push(format!("scene: {e}")),
            }
        }
    }
    if let (Some(c), Some(s)) = (&coefficients, &scene_built) {
        for viol in c.check_shape(s) {
            errs.push(format!("coefficients: {viol}"));
        }
        if let Some(ph) = &recon.phantom {
            if ph.len() != s.n_regions() {
                errs.push(format!(
                    "recon.phantom: {} conductivities for {} regions",
                    ph.len(),
                    s.n_regions()
                ));
            }
        }
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(ExperimentConfig {
        scene: scene.expect("checked"),
        coefficients: coefficients.expect("checked"),
        solver,
        construct,
        family,
        reduce,
        recon,
        output,
        seed,
        scene_built,
        traces,
        source: text.to_string(),
    })
}

pub fn load(path: &Path) -> Result<ExperimentConfig, Vec<String>> {
    parse(&read_source(path)?)
}

impl ExperimentConfig {
    pub fn scene(&self) -> &Scene {
        self.scene_built.as_ref().expect("validated scene")
    }

    /// `γ` per region for reconstruction: the phantom block, or the
    /// coefficients when they are isotropic without lower-order terms.
    pub fn phantom_gamma(&self) -> Result<Vec<ScalarFn>, String> {
        if let Some(p) = &self.recon.phantom {
            return Ok(p.clone());
        }
        let zero = |f: &ScalarFn| f.is_zero();
        self.coefficients
            .regions
            .iter()
            .map(|r| {
                let iso = r.a[0][0] == r.a[1][1] && zero(&r.a[0][1]) && zero(&r.a[1][0]);
                let plain = r.b.iter().chain(&r.c).all(zero) && zero(&r.q);
                if iso && plain {
                    Ok(r.a[0][0].clone())
                } else {
                    Err(format!(
                        "recon.phantom: required because region {} is not isotropic without lower-order terms",
                        r.id
                    ))
                }
            })
            .collect()
    }
}
