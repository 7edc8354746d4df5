use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use delaypde::certify::AlphaSet;
use delaypde::linalg::Complex;
use delaypde::model::{Measurement, PlantConfig};
use delaypde::sim::{InitialCondition, ObserverInit, SimConfig, TimeProfile};
use delaypde::spectral::{Coefficient, SLProblem};

use crate::CliError;

/// Whole run configuration. Every field has a resolved value after parsing,
/// so serialising it back gives the effective configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    pub gains: GainsSection,
    #[serde(default)]
    pub ic: IcSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub p: Coefficient,
    pub q: Coefficient,
    pub q_c: f64,
    pub c: f64,
    pub h: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    pub grid_points: usize,
    /// Modes reported by `eigs` and used to pick `N0`.
    pub n_modes: usize,
    pub m_modes: usize,
    pub dt: f64,
    pub t_final: f64,
    pub n_max: usize,
    /// Observer dimension `N` for simulations; 0 means `N0 + 2`.
    pub observer_modes: usize,
    /// `[α1, α2, α3, α4]`; empty selects `α1 = α4 = 4|c|`, `α2 = α3 = 4`.
    pub alphas: Vec<f64>,
    pub epsilon: f64,
    pub refine: bool,
    /// Strictness margin written into the exported SDPA problem.
    pub sdpa_margin: f64,
    pub tol_orth: f64,
    pub tol_bc: f64,
    pub record_every: usize,
    pub x_samples: usize,
    pub observer_init: ObserverInit,
    /// Decay fit window as fractions of `T_final`.
    pub fit_window: [f64; 2],
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            grid_points: 2001,
            n_modes: 20,
            m_modes: 100,
            dt: 1e-3,
            t_final: 10.0,
            n_max: 64,
            observer_modes: 0,
            alphas: Vec::new(),
            epsilon: 0.125,
            refine: true,
            sdpa_margin: 1e-6,
            tol_orth: 1e-8,
            tol_bc: 1e-6,
            record_every: 10,
            x_samples: 101,
            observer_init: ObserverInit::Zeros,
            fit_window: [0.25, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainsMode {
    Given,
    Place,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pole {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub mode: GainsMode,
    #[serde(default)]
    pub k: Vec<f64>,
    #[serde(default)]
    pub l: Vec<f64>,
    /// Targets for `spec(A0 + 𝔅0 K)`; empty uses `-(|c| + 0.5 + 0.5 j)`.
    #[serde(default)]
    pub poles_k: Vec<Pole>,
    /// Targets for `spec(A0 - L C0)`.
    #[serde(default)]
    pub poles_l: Vec<Pole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcSection {
    pub time: TimeProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<Coefficient>,
    /// Two-column `x,value` CSV, relative to the config file. Read once and
    /// inlined into `space` in the effective configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_table: Option<PathBuf>,
}

impl Default for IcSection {
    fn default() -> Self {
        Self {
            time: TimeProfile::Constant { value: 0.0 },
            space: Some(Coefficient::constant(0.0)),
            space_table: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Svg],
        }
    }
}

impl OutputSection {
    pub fn svg(&self) -> bool {
        self.formats.contains(&Format::Svg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub delays: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            delays: vec![0.5, 1.0, 2.0, 5.0, 10.0],
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Reads, resolves the IC table path against the config's directory and
    /// validates every section.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(table) = cfg.ic.space_table.take() {
            let full = path.parent().unwrap_or(Path::new(".")).join(table);
            cfg.ic.space = Some(read_table(&full)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serialisable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        let angle = |key: &str, v: f64| {
            if (0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&v) {
                Ok(())
            } else {
                Err(bad(key, format!("must lie in [0, pi/2], got {v}")))
            }
        };
        angle("plant.theta1", self.plant.theta1)?;
        angle("plant.theta2", self.plant.theta2)?;
        if !(self.plant.h > 0.0) {
            return Err(bad("plant.h", format!("must be positive, got {}", self.plant.h)));
        }
        if self.plant.c == 0.0 {
            return Err(bad("plant.c", "must be non-zero"));
        }
        if n.grid_points < 3 {
            return Err(bad("numerics.grid_points", "must be at least 3"));
        }
        if n.n_modes == 0 || n.m_modes == 0 {
            return Err(bad("numerics.n_modes", "mode counts must be positive"));
        }
        if !(n.dt > 0.0) {
            return Err(bad("numerics.dt", format!("must be positive, got {}", n.dt)));
        }
        if !(n.t_final > 0.0) {
            return Err(bad("numerics.t_final", format!("must be positive, got {}", n.t_final)));
        }
        if n.dt > n.t_final {
            return Err(bad("numerics.dt", format!("{} exceeds t_final = {}", n.dt, n.t_final)));
        }
        if !n.alphas.is_empty() && n.alphas.len() != 4 {
            return Err(bad("numerics.alphas", "needs exactly four values"));
        }
        if !(n.epsilon > 0.0 && n.epsilon <= 0.5) {
            return Err(bad("numerics.epsilon", "must lie in (0, 1/2]"));
        }
        let [f0, f1] = n.fit_window;
        if !(0.0 <= f0 && f0 < f1 && f1 <= 1.0) {
            return Err(bad("numerics.fit_window", "needs 0 <= start < end <= 1"));
        }
        if n.record_every == 0 {
            return Err(bad("numerics.record_every", "must be positive"));
        }
        if self.gains.mode == GainsMode::Given && (self.gains.k.is_empty() || self.gains.k.len() != self.gains.l.len()) {
            return Err(bad("gains", "mode = \"given\" needs K and L of equal, non-zero length"));
        }
        if self.ic.space.is_none() {
            return Err(bad("ic.space", "missing (give `space` or `space_table`)"));
        }
        if self.sweep.delays.iter().any(|&h| !(h > 0.0)) {
            return Err(bad("sweep.delays", "every delay must be positive"));
        }
        self.plant_config(self.plant.h)?;
        Ok(())
    }

    pub fn plant_config(&self, h: f64) -> Result<PlantConfig, CliError> {
        let p = &self.plant;
        let sl = SLProblem::new(p.p.clone(), p.q.clone(), p.q_c, p.theta1, p.theta2, self.numerics.grid_points)
            .map_err(|e| bad("plant", e))?;
        PlantConfig::new(sl, p.c, h, p.measurement).map_err(|e| bad("plant", e))
    }

    pub fn alphas(&self) -> Result<Option<AlphaSet>, CliError> {
        match self.numerics.alphas.as_slice() {
            [] => Ok(None),
            [a1, a2, a3, a4] => AlphaSet::new(*a1, *a2, *a3, *a4, self.plant.c)
                .map(Some)
                .map_err(|e| bad("numerics.alphas", e)),
            _ => Err(bad("numerics.alphas", "needs exactly four values")),
        }
    }

    pub fn initial_condition(&self) -> InitialCondition {
        InitialCondition {
            time: self.ic.time.clone(),
            space: self.ic.space.clone().unwrap_or(Coefficient::constant(0.0)),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let n = &self.numerics;
        SimConfig {
            m_modes: n.m_modes,
            dt: n.dt,
            t_final: n.t_final,
            ic: self.initial_condition(),
            observer_init: n.observer_init,
            record_every: n.record_every,
            x_samples: n.x_samples,
        }
    }
}

pub fn poles(list: &[Pole]) -> Vec<Complex> {
    list.iter().map(|p| Complex::new(p.re, p.im)).collect()
}

fn read_table(path: &Path) -> Result<Coefficient, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("ic.space_table {}: {e}", path.display())))?;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(x), Some(v)) = (cols.next(), cols.next()) else {
            return Err(bad("ic.space_table", format!("line {} needs two columns", i + 1)));
        };
        match (x.parse::<f64>(), v.parse::<f64>()) {
            (Ok(x), Ok(v)) => {
                xs.push(x);
                vs.push(v);
            }
            // A header row is allowed in first position only.
            _ if xs.is_empty() && i == 0 => continue,
            _ => return Err(bad("ic.space_table", format!("line {} is not numeric", i + 1))),
        }
    }
    Coefficient::table(xs, vs).map_err(|e| bad("ic.space_table", e))
}
