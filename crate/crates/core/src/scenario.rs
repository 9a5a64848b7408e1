//! Scenario configs, the built-in presets, and the CSV/JSON artifacts
//! written for them.
//!
//! Configs are JSON with `//` and `/* */` comments allowed. Complex numbers
//! are `[re, im]` pairs and operators are row-major lists of rows.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::drive::DriveTable;
use crate::envelope::{AmplitudeMode, Envelope, FieldState, GammaMatrix};
use crate::error::{Error, Result};
use crate::filter::survival_curve;
use crate::grid::TimeGrid;
use crate::hierarchy::evolve;
use crate::operator::{Operator, SystemModel};
use crate::oracle::{compare_counting_record, compare_deterministic, compare_homodyne_record, Deviation};
use crate::trajectory::{
    excitation, run_ensemble, simulate_counting, trajectory_seed, EnsembleConfig, EnsembleStats, Scheme,
};

pub type Complex = [f64; 2];
pub type Rows = Vec<Vec<Complex>>;

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_TRAJECTORIES: usize = 2000;

/// Largest deviation `verify` accepts between reduced and extended runs.
pub const ORACLE_TOL: f64 = 1e-6;

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 5] = ["fig1-ground", "fig1-excited", "fig2-ground", "fig2-excited", "two-level-decay"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemSpec,
    #[serde(default)]
    pub initial_state: InitialState,
    pub field: FieldSpec,
    #[serde(default)]
    pub measurement: Measurement,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Either `{"preset": "two-level-decay", "kappa": κ}` or explicit `H`, `L`
/// and optionally `S` (identity if absent) with an optional `dim` check.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Rows>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Rows>,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Rows>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `|0⟩⟨0|`
    #[default]
    Ground,
    /// `|1⟩⟨1|`
    Excited,
    Density(Rows),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldSpec {
    PhotonCombo { gamma: GammaSpec, envelope: EnvelopeSpec },
    CoherentMixture { components: Vec<ComponentSpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub g00: f64,
    pub g11: f64,
    #[serde(default)]
    pub g01: Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub envelope: EnvelopeSpec,
}

/// Gaussian pulses are unit-norm for photon combinations and carry the
/// coherent amplitude `(2Ω²/π)^¼ exp[−Ω²(t−t_c)²/4]` in mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum EnvelopeSpec {
    Gaussian { omega: f64, t_c: f64 },
    Tabulated { times: Vec<f64>, values: Vec<Complex> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measurement {
    #[default]
    None,
    Counting,
    Homodyne,
}

impl Measurement {
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            Measurement::None => None,
            Measurement::Counting => Some(Scheme::Counting),
            Measurement::Homodyne => Some(Scheme::Homodyne),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Horizon; defaults to the end of the last pulse (`t_c + 9/Ω`) rounded up.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            dt: DEFAULT_DT,
            horizon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    #[serde(rename = "M", default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_trajectories() -> usize {
    DEFAULT_TRAJECTORIES
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            trajectories: DEFAULT_TRAJECTORIES,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub format: Format,
}

/// A validated config turned into simulation inputs.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub model: SystemModel,
    pub field: FieldState,
    pub rho0: Operator,
    pub grid: TimeGrid,
    pub measurement: Measurement,
    pub ensemble: EnsembleSpec,
}

/// Removes `//` and `/* */` comments outside string literals.
pub fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut in_string = false;
    while let Some(c) = chars.next() {
        if in_string {
            out.push(c);
            match c {
                '\\' => {
                    if let Some(n) = chars.next() {
                        out.push(n);
                    }
                }
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match (c, chars.peek()) {
            ('"', _) => {
                in_string = true;
                out.push(c);
            }
            ('/', Some('/')) => {
                for n in chars.by_ref() {
                    if n == '\n' {
                        out.push('\n');
                        break;
                    }
                }
            }
            ('/', Some('*')) => {
                chars.next();
                let mut prev = '\0';
                for n in chars.by_ref() {
                    if prev == '*' && n == '/' {
                        break;
                    }
                    if n == '\n' {
                        out.push('\n');
                    }
                    prev = n;
                }
                out.push(' ');
            }
            _ => out.push(c),
        }
    }
    out
}

/// Keys of `given` that the typed config did not consume. Explicit nulls are
/// accepted wherever a key is optional.
fn unknown_keys(given: &Value, parsed: &Value, path: &str, out: &mut Vec<String>) {
    match (given, parsed) {
        (Value::Object(g), Value::Object(p)) => {
            for (k, v) in g {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match p.get(k) {
                    Some(pv) => unknown_keys(v, pv, &here, out),
                    None if v.is_null() => {}
                    None => out.push(here),
                }
            }
        }
        (Value::Array(g), Value::Array(p)) => {
            for (i, (gv, pv)) in g.iter().zip(p).enumerate() {
                unknown_keys(gv, pv, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

/// Parses and validates a config.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let clean = strip_comments(text);
    let value: Value = serde_json::from_str(&clean).map_err(|e| Error::config("", e.to_string()))?;
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    let mut unknown = Vec::new();
    unknown_keys(&value, &serde_json::to_value(&cfg)?, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(Error::UnknownKeys(unknown));
    }
    cfg.build()?;
    Ok(cfg)
}

/// Pretty JSON that [`parse_config`] reads back to an equal config.
pub fn print_config(cfg: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("configs always serialize")
}

/// A preset name, or a path to a config file.
pub fn load(spec: &str) -> Result<ScenarioConfig> {
    if let Some(cfg) = preset(spec) {
        return Ok(cfg);
    }
    let text = fs::read_to_string(spec)
        .map_err(|e| Error::config("", format!("`{spec}` is neither a preset ({}) nor a readable file: {e}", PRESETS.join(", "))))?;
    parse_config(&text)
}

fn c(z: Complex) -> C64 {
    C64::new(z[0], z[1])
}

fn operator(rows: &Rows, path: &str) -> Result<Operator> {
    let rows: Vec<Vec<C64>> = rows.iter().map(|r| r.iter().copied().map(c).collect()).collect();
    Operator::from_rows(&rows).map_err(|e| Error::config(path, e.to_string()))
}

fn envelope(spec: &EnvelopeSpec, mode: AmplitudeMode, path: &str) -> Result<Envelope> {
    let env = match spec {
        EnvelopeSpec::Gaussian { omega, t_c } => Envelope::gaussian(*omega, *t_c, mode),
        EnvelopeSpec::Tabulated { times, values } => {
            Envelope::tabulated(times.clone(), values.iter().copied().map(c).collect())
        }
    };
    env.map_err(|e| Error::config(path, e.to_string()))
}

impl SystemSpec {
    pub fn two_level_decay(kappa: f64) -> Self {
        SystemSpec {
            preset: Some("two-level-decay".into()),
            kappa: Some(kappa),
            ..Default::default()
        }
    }

    fn build(&self) -> Result<SystemModel> {
        if let Some(name) = &self.preset {
            if name != "two-level-decay" {
                return Err(Error::config("system.preset", format!("unknown system preset `{name}`")));
            }
            if self.h.is_some() || self.l.is_some() || self.s.is_some() || self.dim.is_some_and(|d| d != 2) {
                return Err(Error::config("system", "a preset cannot be combined with H, L, S or dim"));
            }
            let kappa = self.kappa.ok_or_else(|| Error::config("system.kappa", "two-level-decay needs κ"))?;
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(Error::config("system.kappa", format!("κ must be positive, got {kappa}")));
            }
            return SystemModel::two_level_decay(kappa).map_err(|e| Error::config("system", e.to_string()));
        }
        if self.kappa.is_some() {
            return Err(Error::config("system.kappa", "κ only applies to the two-level-decay preset"));
        }
        let h = operator(self.h.as_ref().ok_or_else(|| Error::config("system.H", "missing"))?, "system.H")?;
        let l = operator(self.l.as_ref().ok_or_else(|| Error::config("system.L", "missing"))?, "system.L")?;
        let s = match &self.s {
            Some(rows) => operator(rows, "system.S")?,
            None => Operator::identity(h.dim()),
        };
        if let Some(d) = self.dim {
            if d != h.dim() {
                return Err(Error::config("system.dim", format!("dim is {d} but H is {}×{}", h.dim(), h.dim())));
            }
        }
        SystemModel::new(h, l, s).map_err(|e| Error::config("system", e.to_string()))
    }
}

impl InitialState {
    fn build(&self, dim: usize) -> Result<Operator> {
        match self {
            InitialState::Ground => Ok(Operator::ket_bra(dim, 0, 0)),
            InitialState::Excited if dim >= 2 => Ok(Operator::ket_bra(dim, 1, 1)),
            InitialState::Excited => Err(Error::config("initial_state", "a one-level system has no excited state")),
            InitialState::Density(rows) => {
                let rho = operator(rows, "initial_state.density")?;
                if rho.dim() != dim {
                    return Err(Error::config(
                        "initial_state.density",
                        format!("expected a {dim}×{dim} matrix, got {}×{}", rho.dim(), rho.dim()),
                    ));
                }
                if rho.hermiticity_error() > 1e-12 || (rho.trace().re - 1.0).abs() > 1e-12 {
                    return Err(Error::config("initial_state.density", "must be Hermitian with unit trace"));
                }
                if (0..dim).any(|i| rho[(i, i)].re < 0.0) {
                    return Err(Error::config("initial_state.density", "negative population"));
                }
                Ok(rho)
            }
        }
    }
}

impl FieldSpec {
    fn build(&self) -> Result<FieldState> {
        match self {
            FieldSpec::PhotonCombo { gamma, envelope: env } => {
                let g = GammaMatrix::new(gamma.g00, gamma.g11, c(gamma.g01))
                    .map_err(|e| Error::config("field.gamma", e.to_string()))?;
                let xi = envelope(env, AmplitudeMode::UnitNorm, "field.envelope")?;
                FieldState::photon_combo(g, xi).map_err(|e| Error::config("field.envelope", e.to_string()))
            }
            FieldSpec::CoherentMixture { components } => {
                let alphas = components
                    .iter()
                    .enumerate()
                    .map(|(i, comp)| envelope(&comp.envelope, AmplitudeMode::Coherent, &format!("field.components[{i}].envelope")))
                    .collect::<Result<Vec<_>>>()?;
                let weights = components.iter().map(|comp| comp.weight).collect();
                FieldState::coherent_mixture(weights, alphas).map_err(|e| Error::config("field.components", e.to_string()))
            }
        }
    }
}

impl ScenarioConfig {
    /// Validates every field and assembles the simulation inputs.
    pub fn build(&self) -> Result<Scenario> {
        let model = self.system.build()?;
        let rho0 = self.initial_state.build(model.dim())?;
        let field = self.field.build()?;
        let dt = self.grid.dt;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("grid.dt", format!("dt must be positive, got {dt}")));
        }
        let horizon = self.horizon(&field);
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config("grid.T", format!("T must be positive, got {horizon}")));
        }
        if horizon < dt {
            return Err(Error::config("grid.T", "T is shorter than one step"));
        }
        let grid = TimeGrid::new(dt, horizon).map_err(|e| Error::config("grid", e.to_string()))?;
        if self.ensemble.trajectories == 0 {
            return Err(Error::config("ensemble.M", "M must be at least 1"));
        }
        Ok(Scenario {
            model,
            field,
            rho0,
            grid,
            measurement: self.measurement,
            ensemble: self.ensemble.clone(),
        })
    }

    fn horizon(&self, field: &FieldState) -> f64 {
        self.grid.horizon.unwrap_or_else(|| field.pulse_end().ceil())
    }

    /// SHA-256 of the semantic content: defaults resolved, `name` and
    /// `output` dropped, and the ensemble block dropped when nothing is measured.
    pub fn hash(&self) -> Result<String> {
        let field = self.field.build()?;
        let mut canon = self.clone();
        canon.grid.horizon = Some(self.horizon(&field));
        let mut value = serde_json::to_value(&canon)?;
        let obj = value.as_object_mut().expect("config serializes to an object");
        obj.remove("name");
        obj.remove("output");
        if self.measurement == Measurement::None {
            obj.remove("ensemble");
        }
        Ok(hex::encode(Sha256::digest(value.to_string().as_bytes())))
    }

    /// Display name used for output files.
    pub fn stem(&self) -> String {
        if let Some(p) = &self.output.path {
            if let Some(s) = Path::new(p).file_stem() {
                return s.to_string_lossy().into_owned();
            }
        }
        self.name.clone().unwrap_or_else(|| "scenario".into())
    }
}

fn photon_preset(name: &str, excited: bool) -> ScenarioConfig {
    ScenarioConfig {
        name: Some(name.into()),
        system: SystemSpec::two_level_decay(1.0),
        initial_state: if excited { InitialState::Excited } else { InitialState::Ground },
        field: FieldSpec::PhotonCombo {
            gamma: GammaSpec {
                g00: 0.2,
                g11: 0.8,
                g01: [0.0, 0.0],
            },
            envelope: EnvelopeSpec::Gaussian { omega: 1.46, t_c: 3.0 },
        },
        measurement: Measurement::Counting,
        grid: GridSpec {
            dt: DEFAULT_DT,
            horizon: Some(12.0),
        },
        ensemble: EnsembleSpec::default(),
        output: OutputSpec::default(),
    }
}

fn coherent_preset(name: &str, excited: bool) -> ScenarioConfig {
    let pulse = |t_c| ComponentSpec {
        weight: 0.5,
        envelope: EnvelopeSpec::Gaussian { omega: 2.4, t_c },
    };
    ScenarioConfig {
        field: FieldSpec::CoherentMixture {
            components: vec![pulse(3.0), pulse(5.0)],
        },
        ..photon_preset(name, excited)
    }
}

/// Built-in scenarios (all on κ = 1, dt = 1e-3, T = 12).
///
/// * `fig1-*`: γ₁₁ = 0.8, γ₀₀ = 0.2, Gaussian photon with Ω = 1.46 at t_c = 3.
/// * `fig2-*`: equal mixture of coherent Gaussian pulses, Ω = 2.4, at t_c = 3 and 5.
/// * `two-level-decay`: excited atom decaying into vacuum.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    Some(match name {
        "fig1-ground" => photon_preset(name, false),
        "fig1-excited" => photon_preset(name, true),
        "fig2-ground" => coherent_preset(name, false),
        "fig2-excited" => coherent_preset(name, true),
        "two-level-decay" => ScenarioConfig {
            field: FieldSpec::PhotonCombo {
                gamma: GammaSpec {
                    g00: 1.0,
                    g11: 0.0,
                    g01: [0.0, 0.0],
                },
                envelope: EnvelopeSpec::Gaussian { omega: 1.46, t_c: 3.0 },
            },
            ..photon_preset(name, true)
        },
        _ => return None,
    })
}

/// Named columns of equal length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl Table {
    pub fn push(&mut self, name: &str, values: Vec<f64>) {
        debug_assert!(self.data.first().is_none_or(|c| c.len() == values.len()));
        self.columns.push(name.into());
        self.data.push(values);
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.data[i].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    /// Header line, then one row per node; every number has 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in 0..self.rows() {
            let row: Vec<String> = self.data.iter().map(|col| format!("{:.16e}", col[r])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// `{"columns": [...], "rows": [[...], ...]}`
    pub fn to_json(&self) -> Value {
        let rows: Vec<Vec<f64>> = (0..self.rows()).map(|r| self.data.iter().map(|col| col[r]).collect()).collect();
        serde_json::json!({ "columns": self.columns, "rows": rows })
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json()).expect("tables serialize");
                s.push('\n');
                s
            }
        }
    }
}

/// Deterministic columns: `t`, `flux`, `P_exc` from the master equation,
/// and `P_atleast_one_count` from the no-count system unless nothing is measured.
pub fn deterministic_table(sc: &Scenario) -> Result<Table> {
    let times: Vec<f64> = sc.grid.times().collect();
    let flux = times.iter().map(|&t| sc.field.photon_flux(t)).collect::<Result<Vec<_>>>()?;
    let states = evolve(&sc.model, &sc.field, &sc.rho0, &sc.grid)?;
    let gamma = match &sc.field {
        FieldState::PhotonCombo { gamma, .. } => Some(gamma),
        FieldState::CoherentMixture { .. } => None,
    };
    let p_exc = states
        .iter()
        .map(|s| s.system_state(gamma).map(|rho| excitation(&rho)))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::default();
    table.push("t", times);
    table.push("flux", flux);
    table.push("P_exc", p_exc);
    if sc.measurement != Measurement::None {
        let survival = survival_curve(&sc.model, &sc.field, &sc.rho0, &sc.grid)?;
        table.push("P_atleast_one_count", survival.into_iter().map(|p| 1.0 - p).collect());
    }
    Ok(table)
}

/// Deterministic columns followed by ensemble mean/stderr columns:
/// `P_exc_mean`, `P_exc_stderr`, then for counting `P_atleast_one_count_*`
/// and `count_rate_*`, for homodyne `quadrature_rate_*`.
pub fn ensemble_table(sc: &Scenario, threads: Option<usize>) -> Result<(Table, EnsembleStats)> {
    let scheme = sc
        .measurement
        .scheme()
        .ok_or_else(|| Error::config("measurement", "trajectories need counting or homodyne detection"))?;
    let mut table = deterministic_table(sc)?;
    let stats = run_ensemble(
        &sc.model,
        &sc.field,
        &sc.rho0,
        &sc.grid,
        &EnsembleConfig {
            scheme,
            trajectories: sc.ensemble.trajectories,
            master_seed: sc.ensemble.master_seed,
            threads,
        },
    )?;
    table.push("P_exc_mean", stats.p_exc.mean.clone());
    table.push("P_exc_stderr", stats.p_exc.stderr.clone());
    match scheme {
        Scheme::Counting => {
            let atleast = stats.atleast_one.as_ref().expect("counting ensembles track first counts");
            table.push("P_atleast_one_count_mean", atleast.mean.clone());
            table.push("P_atleast_one_count_stderr", atleast.stderr.clone());
            table.push("count_rate_mean", stats.rate.mean.clone());
            table.push("count_rate_stderr", stats.rate.stderr.clone());
        }
        Scheme::Homodyne => {
            table.push("quadrature_rate_mean", stats.rate.mean.clone());
            table.push("quadrature_rate_stderr", stats.rate.stderr.clone());
        }
    }
    Ok((table, stats))
}

/// Provenance written next to every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: ScenarioConfig,
    pub hash: String,
    /// Master seed of the ensemble, absent for deterministic runs.
    pub seed: Option<u64>,
    pub tool_version: String,
}

impl Sidecar {
    pub fn new(cfg: &ScenarioConfig, seed: Option<u64>) -> Result<Self> {
        Ok(Sidecar {
            config: cfg.clone(),
            hash: cfg.hash()?,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        })
    }
}

/// Paths of one run's files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifacts {
    pub data: PathBuf,
    pub sidecar: PathBuf,
}

/// Writes `<dir>/<stem>.<ext>` and `<dir>/<stem>.meta.json`.
pub fn write_artifacts(dir: &Path, stem: &str, format: Format, table: &Table, sidecar: &Sidecar) -> Result<Artifacts> {
    fs::create_dir_all(dir)?;
    let data = dir.join(format!("{stem}.{}", format.extension()));
    let meta = dir.join(format!("{stem}.meta.json"));
    fs::write(&data, table.render(format))?;
    let mut s = serde_json::to_string_pretty(sidecar)?;
    s.push('\n');
    fs::write(&meta, s)?;
    Ok(Artifacts { data, sidecar: meta })
}

/// Where a run's files go: `out_dir` when given, else the directory of
/// `output.path`, else `./out`.
pub fn output_dir(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> PathBuf {
    if let Some(d) = out_dir {
        return d.to_path_buf();
    }
    match cfg.output.path.as_deref().map(Path::new).and_then(Path::parent) {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("out"),
    }
}

/// Largest reduced-vs-extended deviations for one scenario.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleReport {
    pub deterministic: Deviation,
    pub counting: Deviation,
    pub homodyne: Deviation,
    /// Clicks in the replayed counting record.
    pub counts: usize,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        [self.deterministic, self.counting, self.homodyne].iter().all(|d| d.max() < self.tolerance)
    }

    pub fn lines(&self) -> Vec<String> {
        let row = |name: &str, d: &Deviation| {
            format!(
                "{name:<13} state {:.3e}  auxiliary {:.3e}  rate {:.3e}  {}",
                d.state,
                d.auxiliary,
                d.rate,
                if d.max() < self.tolerance { "ok" } else { "FAIL" }
            )
        };
        vec![
            row("deterministic", &self.deterministic),
            row("counting", &self.counting),
            row("homodyne", &self.homodyne),
            format!("counting record has {} clicks; tolerance {:.0e}", self.counts, self.tolerance),
        ]
    }
}

/// Runs the reduced equations against the extended system on the
/// deterministic flow, a sampled counting record and a sampled homodyne
/// record. `drive_scale` multiplies every field amplitude seen by the
/// reduced side (1 for an honest comparison).
pub fn compare_oracle(cfg: &ScenarioConfig, drive_scale: f64) -> Result<OracleReport> {
    let sc = cfg.build()?;
    let table = DriveTable::new(&sc.field, sc.grid);
    let reduced = if drive_scale == 1.0 { table.clone() } else { table.scaled(drive_scale) };
    let seed = sc.ensemble.master_seed;
    let deterministic = compare_deterministic(&sc.model, &sc.field, &sc.rho0, &reduced)?;
    let traj = simulate_counting(&sc.model, &sc.field, &sc.rho0, &sc.grid, trajectory_seed(seed, 0))?;
    let mut jumps = vec![false; sc.grid.n_steps()];
    for &n in &traj.record.jump_steps {
        jumps[n] = true;
    }
    let counting = compare_counting_record(&sc.model, &sc.field, &sc.rho0, &reduced, &jumps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(trajectory_seed(seed, 1));
    let sd = sc.grid.dt().sqrt();
    let dw: Vec<f64> = (0..sc.grid.n_steps())
        .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let homodyne = compare_homodyne_record(&sc.model, &sc.field, &sc.rho0, &reduced, &dw)?;
    Ok(OracleReport {
        deterministic,
        counting,
        homodyne,
        counts: traj.record.count(),
        tolerance: ORACLE_TOL,
    })
}
