//! Scenario files: model, objective, grid, simulation and output settings in
//! one versioned TOML document.
//!
//! ```toml
//! schema_version = 1
//! name = "example"
//!
//! [model]
//! family = "mean_reverting"        # or "geometric_levy"
//! kappa_b = 0.02
//! kappa_delta = 0.02
//! s_bar = 40.0
//! delta_bar = 0.1
//! mu_b = 0.01
//! mu_delta = 0.01
//! beta = 1e-5
//! horizon = 60.0
//! inventory_cap = 30000.0
//! control_cap = 5000.0
//!
//! [model.jumps.bid_up]
//! intensity = 0.2
//! marks = { kind = "uniform", lo = 0.0, hi = 0.1 }
//! # also bid_down, spread_up, spread_down and dark_fill; omitted channels
//! # never fire. Other mark kinds:
//! #   { kind = "point_mass", value = 1.0 }
//! #   { kind = "discrete", values = [0.5, 1.0], probabilities = [0.5, 0.5] }
//!
//! [objective]
//! gamma = 1e-4
//! alpha = 2.0
//! r = 0.0
//!
//! [grid]
//! n_t = 31
//! x = { n = 31, max = 30000.0 }               # starts at 0; optional `stretch`
//! s = { n = 13, min = 39.4, max = 40.6 }
//! d = { n = 7, min = 0.0, max = 0.3 }
//! n_eta = 21
//!
//! [start]
//! x = 30000.0
//! s_b = 40.0
//! delta = 0.1
//!
//! [sim]
//! n_paths = 1000
//! dt_max = 0.05
//! seed = 7
//! record_every = 1.0
//! ```
//!
//! Optional tables: `[outputs]` (directory and format flags), `[figure]`
//! (what `reproduce` exports) and `[validate]` (suite settings).

use std::path::Path;

use litdark_core::grid::{Axis, GridSpec, NuSearch};
use litdark_core::model::{Family, JumpSpec, MarkDistribution, MarketState, ModelSpec, ObjectiveSpec};
use litdark_core::sim::{ForcedFill, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    pub grid: Option<GridSection>,
    pub start: StartSection,
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub outputs: OutputsSection,
    #[serde(default)]
    pub figure: FigureSection,
    #[serde(default)]
    pub validate: ValidateSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    MeanReverting,
    GeometricLevy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: FamilyName,
    pub kappa_b: Option<f64>,
    pub kappa_delta: Option<f64>,
    pub s_bar: Option<f64>,
    pub delta_bar: Option<f64>,
    #[serde(default)]
    pub mu_b: f64,
    #[serde(default)]
    pub mu_delta: f64,
    #[serde(default)]
    pub beta: f64,
    pub horizon: f64,
    pub inventory_cap: f64,
    pub control_cap: f64,
    #[serde(default)]
    pub jumps: JumpsSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpsSection {
    pub bid_up: Option<JumpSection>,
    pub bid_down: Option<JumpSection>,
    pub spread_up: Option<JumpSection>,
    pub spread_down: Option<JumpSection>,
    pub dark_fill: Option<JumpSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSection {
    pub intensity: f64,
    pub marks: MarksSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarksSection {
    Uniform { lo: f64, hi: f64 },
    PointMass { value: f64 },
    Discrete { values: Vec<f64>, probabilities: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    #[serde(default)]
    pub gamma: f64,
    pub alpha: f64,
    #[serde(default)]
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    pub n: usize,
    #[serde(default)]
    pub min: f64,
    pub max: f64,
    /// Power of the node map `(i / (n - 1))^stretch`; 1 is uniform.
    #[serde(default = "one")]
    pub stretch: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuSearchName {
    #[default]
    ClosedForm,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_t: usize,
    pub substeps: Option<usize>,
    pub x: AxisSection,
    pub s: AxisSection,
    pub d: AxisSection,
    #[serde(default = "two")]
    pub n_nu: usize,
    pub n_eta: usize,
    #[serde(default)]
    pub nu_search: NuSearchName,
    /// Cash axis of the reference solve that keeps cash as a grid
    /// coordinate; the reduced solver ignores it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<AxisSection>,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    #[serde(default)]
    pub t: f64,
    pub x: f64,
    pub s_b: f64,
    pub delta: f64,
    #[serde(default)]
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FillSection {
    pub time: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_paths: usize,
    pub dt_max: f64,
    pub seed: u64,
    pub record_every: f64,
    #[serde(default)]
    pub forced_fills: Vec<FillSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default = "default_out")]
    pub dir: String,
    #[serde(default = "yes")]
    pub csv: bool,
    /// Write value/policy grids in the binary container.
    #[serde(default = "yes")]
    pub container: bool,
    /// One CSV with a `path_id` column instead of one file per path.
    #[serde(default = "yes")]
    pub long_format: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            dir: default_out(),
            csv: true,
            container: true,
            long_format: true,
        }
    }
}

fn default_out() -> String {
    "out".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    /// Bid, mid and ask of one simulated path with no trading.
    PriceSeries,
    /// Lit rate over `(s_b, delta)` at several times and a fixed inventory.
    LitSurfaces,
    /// Inventory trajectories under the solved policy with and without
    /// prescribed dark-pool fills.
    InventoryPaths,
    /// Lit and dark surfaces over `(s_b, delta)` at several times.
    LitDarkSurfaces,
    /// Lit rate and posting as functions of the remaining inventory.
    InventoryStrategy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureSection {
    pub kind: Option<FigureKind>,
    /// Times at which surfaces are cut.
    #[serde(default)]
    pub slice_times: Vec<f64>,
    /// Inventory at which surfaces are cut (defaults to the start inventory).
    pub inventory: Option<f64>,
    /// Prescribed dark-pool fill times for inventory paths.
    #[serde(default)]
    pub fill_times: Vec<f64>,
    /// Executed fraction of the "partial" fill variant.
    pub partial_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Alpha,
    Gamma,
    /// Sets both permanent-impact coefficients.
    PermanentImpact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSection {
    pub parameter: Parameter,
    /// Value expected to give the smaller quantity.
    pub low: f64,
    /// Value expected to give the larger quantity.
    pub high: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    /// Horizons at which the bid mean is compared with its start.
    #[serde(default)]
    pub moment_horizons: Vec<f64>,
    /// `(h, h / 2)` pairs for the second-moment scaling check are formed
    /// from these horizons.
    #[serde(default)]
    pub scaling_horizons: Vec<f64>,
    /// Parameter pair for the value comparison suite.
    pub comparison: Option<PairSection>,
    /// Parameter pair whose lit rates must be ordered.
    pub monotone: Option<PairSection>,
}

/// Loaded and checked scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub model: ModelSpec,
    pub objective: ObjectiveSpec,
    pub grid: Option<GridSpec>,
    pub start: MarketState,
    pub sim: Option<SimConfig>,
    /// SHA-256 of the scenario text as read.
    pub hash: String,
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Schema(msg) => CliError::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        let mut scenario = Self::from_file(file)?;
        scenario.hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(scenario)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, CliError> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let model = build_model(&file.model)?;
        model.validate().map_err(|e| CliError::Schema(format!("[model]: {e}")))?;
        let objective = ObjectiveSpec {
            gamma: file.objective.gamma,
            alpha: file.objective.alpha,
            r: file.objective.r,
        };
        objective.validate().map_err(|e| CliError::Schema(format!("[objective]: {e}")))?;
        let grid = file.grid.as_ref().map(|g| build_grid(g, &file.model)).transpose()?;
        let st = &file.start;
        let start = MarketState::new(st.t, st.x, st.s_b, st.delta, st.w);
        start.validate(&model).map_err(|e| CliError::Schema(format!("[start]: {e}")))?;
        let sim = file.sim.as_ref().map(build_sim).transpose()?;
        let hash = hex::encode(Sha256::digest(
            toml::to_string(&file).map_err(|e| CliError::Schema(e.to_string()))?.as_bytes(),
        ));
        Ok(Self {
            file,
            model,
            objective,
            grid,
            start,
            sim,
            hash,
        })
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn require_grid(&self) -> Result<&GridSpec, CliError> {
        self.grid
            .as_ref()
            .ok_or_else(|| CliError::Schema("missing section `[grid]`".into()))
    }

    /// Cash axis from `[grid.w]`.
    pub fn cash_axis(&self) -> Result<Axis, CliError> {
        let w = self
            .file
            .grid
            .as_ref()
            .and_then(|g| g.w.as_ref())
            .ok_or_else(|| CliError::Schema("missing key `grid.w`".into()))?;
        build_axis(w, "w")
    }

    pub fn require_sim(&self) -> Result<&SimConfig, CliError> {
        self.sim
            .as_ref()
            .ok_or_else(|| CliError::Schema("missing section `[sim]`".into()))
    }

    /// Copy with a parameter overridden and the derived specs rebuilt.
    pub fn with_parameter(&self, parameter: Parameter, value: f64) -> Result<Scenario, CliError> {
        let mut file = self.file.clone();
        match parameter {
            Parameter::Alpha => file.objective.alpha = value,
            Parameter::Gamma => file.objective.gamma = value,
            Parameter::PermanentImpact => {
                file.model.mu_b = value;
                file.model.mu_delta = value;
            }
        }
        let mut out = Scenario::from_file(file)?;
        out.hash = self.hash.clone();
        Ok(out)
    }

    /// Copy with the simulation path count and seed overridden.
    pub fn with_sim_overrides(&self, paths: Option<usize>, seed: Option<u64>) -> Result<Scenario, CliError> {
        if paths.is_none() && seed.is_none() {
            return Ok(self.clone());
        }
        let mut file = self.file.clone();
        let sim = file
            .sim
            .as_mut()
            .ok_or_else(|| CliError::Usage("--paths and --seed need a `[sim]` section".into()))?;
        if let Some(n) = paths {
            if n == 0 {
                return Err(CliError::Usage("--paths must be at least 1".into()));
            }
            sim.n_paths = n;
        }
        if let Some(s) = seed {
            sim.seed = s;
        }
        let mut out = Scenario::from_file(file)?;
        out.hash = self.hash.clone();
        Ok(out)
    }
}

fn need(v: Option<f64>, key: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Schema(format!("[model]: `{key}` is required for the mean-reverting family")))
}

fn build_marks(m: &MarksSection, at: &str) -> Result<MarkDistribution, CliError> {
    Ok(match m {
        MarksSection::Uniform { lo, hi } => MarkDistribution::Uniform { lo: *lo, hi: *hi },
        MarksSection::PointMass { value } => MarkDistribution::PointMass(*value),
        MarksSection::Discrete { values, probabilities } => {
            if values.len() != probabilities.len() {
                return Err(CliError::Schema(format!(
                    "[model.jumps.{at}.marks]: `values` and `probabilities` differ in length"
                )));
            }
            MarkDistribution::Discrete(values.iter().copied().zip(probabilities.iter().copied()).collect())
        }
    })
}

fn build_jump(j: &Option<JumpSection>, at: &str) -> Result<JumpSpec, CliError> {
    let Some(j) = j else {
        return Ok(JumpSpec::off());
    };
    let spec = JumpSpec::new(j.intensity, build_marks(&j.marks, at)?);
    spec.validate().map_err(|e| CliError::Schema(format!("[model.jumps.{at}]: {e}")))?;
    Ok(spec)
}

fn build_model(m: &ModelSection) -> Result<ModelSpec, CliError> {
    let family = match m.family {
        FamilyName::MeanReverting => Family::MeanReverting {
            kappa_b: need(m.kappa_b, "kappa_b")?,
            kappa_delta: need(m.kappa_delta, "kappa_delta")?,
            s_bar: need(m.s_bar, "s_bar")?,
            delta_bar: need(m.delta_bar, "delta_bar")?,
        },
        FamilyName::GeometricLevy => {
            for (key, v) in [
                ("kappa_b", m.kappa_b),
                ("kappa_delta", m.kappa_delta),
                ("s_bar", m.s_bar),
                ("delta_bar", m.delta_bar),
            ] {
                if v.is_some() {
                    return Err(CliError::Schema(format!(
                        "[model]: `{key}` only applies to the mean-reverting family"
                    )));
                }
            }
            Family::GeometricLevy
        }
    };
    Ok(ModelSpec {
        family,
        mu_b: m.mu_b,
        mu_delta: m.mu_delta,
        beta: m.beta,
        bid_up: build_jump(&m.jumps.bid_up, "bid_up")?,
        bid_down: build_jump(&m.jumps.bid_down, "bid_down")?,
        spread_up: build_jump(&m.jumps.spread_up, "spread_up")?,
        spread_down: build_jump(&m.jumps.spread_down, "spread_down")?,
        dark_fill: build_jump(&m.jumps.dark_fill, "dark_fill")?,
        horizon: m.horizon,
        inventory_cap: m.inventory_cap,
        control_cap: m.control_cap,
    })
}

fn build_axis(a: &AxisSection, at: &str) -> Result<Axis, CliError> {
    Axis::stretched(a.min, a.max, a.n, a.stretch).map_err(|e| CliError::Schema(format!("[grid.{at}]: {e}")))
}

fn build_grid(g: &GridSection, m: &ModelSection) -> Result<GridSpec, CliError> {
    if g.x.min != 0.0 {
        return Err(CliError::Schema("[grid.x]: `min` must be 0".into()));
    }
    if g.x.max != m.inventory_cap {
        return Err(CliError::Schema("[grid.x]: `max` must equal model.inventory_cap".into()));
    }
    let grid = GridSpec {
        horizon: m.horizon,
        n_t: g.n_t,
        substeps: g.substeps,
        x: build_axis(&g.x, "x")?,
        s: build_axis(&g.s, "s")?,
        d: build_axis(&g.d, "d")?,
        n_nu: g.n_nu,
        n_eta: g.n_eta,
        nu_search: match g.nu_search {
            NuSearchName::ClosedForm => NuSearch::ClosedForm,
            NuSearchName::Grid => NuSearch::Grid,
        },
    };
    grid.validate().map_err(|e| CliError::Schema(format!("[grid]: {e}")))?;
    if let Some(w) = &g.w {
        build_axis(w, "w")?;
    }
    Ok(grid)
}

fn build_sim(s: &SimSection) -> Result<SimConfig, CliError> {
    let mut cfg = SimConfig::new(s.n_paths, s.dt_max, s.seed, s.record_every);
    cfg.forced_fills = s
        .forced_fills
        .iter()
        .map(|f| ForcedFill {
            time: f.time,
            fraction: f.fraction,
        })
        .collect();
    cfg.validate().map_err(|e| CliError::Schema(format!("[sim]: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "minimal"

[model]
family = "geometric_levy"
horizon = 10.0
inventory_cap = 100.0
control_cap = 50.0

[model.jumps.bid_up]
intensity = 0.5
marks = { kind = "uniform", lo = 0.0, hi = 0.1 }

[objective]
alpha = 2.0

[start]
x = 100.0
s_b = 40.0
delta = 0.1
"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.model.bid_up.intensity, 0.5);
        assert!(!s.model.bid_down.is_active());
        assert!(s.grid.is_none());
        assert_eq!(s.hash.len(), 64);
    }

    #[test]
    fn cash_axis_is_optional() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.cash_axis().unwrap_err().exit_code(), 2);
        let text = format!("{MINIMAL}\n[grid]\nn_t = 3\nx = {{ n = 3, max = 100.0 }}\ns = {{ n = 3, min = 39.0, max = 41.0 }}\nd = {{ n = 2, max = 0.2 }}\nw = {{ n = 4, min = -10.0, max = 20.0 }}\nn_eta = 3\n");
        let w = Scenario::from_toml(&text).unwrap().cash_axis().unwrap();
        assert_eq!(w.nodes(), [-10.0, 0.0, 10.0, 20.0]);
        let bad = text.replace("n = 4, min = -10.0", "n = 4, min = 30.0");
        assert!(Scenario::from_toml(&bad).is_err());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("alpha = 2.0", "alpha = 2.0\nalhpa = 3.0");
        let err = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("alhpa"), "{err}");
    }

    #[test]
    fn wrong_schema_version() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(Scenario::from_toml(&text), Err(CliError::Schema(_))));
    }

    #[test]
    fn mean_reverting_keys_are_rejected_for_geometric() {
        let text = MINIMAL.replace("horizon = 10.0", "horizon = 10.0\nkappa_b = 0.1");
        let err = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("kappa_b"), "{err}");
    }

    #[test]
    fn parameter_override() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let t = s.with_parameter(Parameter::PermanentImpact, 0.001).unwrap();
        assert_eq!((t.model.mu_b, t.model.mu_delta), (0.001, 0.001));
        assert_eq!(s.with_parameter(Parameter::Alpha, 6.0).unwrap().objective.alpha, 6.0);
    }
}
