//! Parameter sweeps: configuration, seed hierarchy, runners and CSV tables.
//!
//! Seeds form a tree. A grid point with swept value `x` owns
//! `derive_seed(master, [value_key(x)])`, and its realizations are the
//! streams below that seed. Adding or removing grid points leaves every
//! other point's draws untouched.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::control::{self, ControlProblem};
use crate::dynamics::{
    self, random_product_state_with, random_qubit, qubit_bloch, time_averaged_purity, EnsembleAverage,
    EnsembleConfig, ProbeChannel, PureState, SamplingMeasure,
};
use crate::error::{Error, Result};
use crate::operators::{sample_random_couplings, ModelKind, ModelParams, SpinModel};
use crate::parallel;
use crate::rng::{self, derive_seed, value_key};
use crate::spectral::{eta_for_model, EtaConfig, EtaEstimate};
use crate::stats;
use crate::symmetry::{Parity, SectorPolicy};

/// Path tag for the control instance streams, disjoint from grid-point keys.
const CONTROL_INSTANCE_TAG: u64 = 0xc0de;

fn default_length() -> usize {
    6
}
fn default_true() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> f64 {
    2.0
}
fn quarter_pi() -> f64 {
    std::f64::consts::FRAC_PI_4
}
fn tenth() -> f64 {
    0.1
}

/// Model family with default parameters; the swept parameter is overwritten
/// per grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    IsingLongTrans {
        #[serde(default = "default_length")]
        length: usize,
        #[serde(default = "one")]
        h_x: f64,
        #[serde(default = "half")]
        h_z: f64,
        /// Uniform coupling, used unless `couplings` is given.
        #[serde(default = "one")]
        coupling: f64,
        #[serde(default)]
        couplings: Option<Vec<f64>>,
        /// Couplings redrawn uniformly in this range per realization.
        #[serde(default)]
        coupling_range: Option<[f64; 2]>,
        #[serde(default = "default_true")]
        include_probe_hamiltonian: bool,
    },
    TiltedIsing {
        #[serde(default = "default_length")]
        length: usize,
        #[serde(default = "two")]
        field: f64,
        #[serde(default = "quarter_pi")]
        theta: f64,
        #[serde(default = "two")]
        coupling: f64,
        #[serde(default = "default_true")]
        include_probe_hamiltonian: bool,
    },
    /// Fields are drawn per realization from `[-field_bound, field_bound]`.
    HeisenbergRandomField {
        #[serde(default = "default_length")]
        length: usize,
        #[serde(default = "half")]
        field_bound: f64,
        #[serde(default = "default_true")]
        include_probe_hamiltonian: bool,
    },
    PerturbedXxz {
        #[serde(default = "default_length")]
        length: usize,
        #[serde(default = "tenth")]
        anisotropy: f64,
        #[serde(default = "half")]
        perturbation: f64,
        #[serde(default = "default_true")]
        include_probe_hamiltonian: bool,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::IsingLongTrans {
            length: 6,
            h_x: 1.0,
            h_z: 0.5,
            coupling: 1.0,
            couplings: None,
            coupling_range: None,
            include_probe_hamiltonian: true,
        }
    }
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::IsingLongTrans { .. } => ModelKind::IsingLongTrans,
            ModelConfig::TiltedIsing { .. } => ModelKind::TiltedIsing,
            ModelConfig::HeisenbergRandomField { .. } => ModelKind::HeisenbergRandomField,
            ModelConfig::PerturbedXxz { .. } => ModelKind::PerturbedXxz,
        }
    }

    pub fn length(&self) -> usize {
        match *self {
            ModelConfig::IsingLongTrans { length, .. }
            | ModelConfig::TiltedIsing { length, .. }
            | ModelConfig::HeisenbergRandomField { length, .. }
            | ModelConfig::PerturbedXxz { length, .. } => length,
        }
    }

    fn include_probe(&self) -> bool {
        match *self {
            ModelConfig::IsingLongTrans { include_probe_hamiltonian, .. }
            | ModelConfig::TiltedIsing { include_probe_hamiltonian, .. }
            | ModelConfig::HeisenbergRandomField { include_probe_hamiltonian, .. }
            | ModelConfig::PerturbedXxz { include_probe_hamiltonian, .. } => include_probe_hamiltonian,
        }
    }

    /// Concrete model on `length` sites. Heisenberg fields start at zero and
    /// are drawn per realization.
    pub fn instantiate(&self, length: usize) -> Result<SpinModel> {
        let model = match self {
            ModelConfig::IsingLongTrans {
                h_x,
                h_z,
                coupling,
                couplings,
                coupling_range,
                ..
            } => {
                let js = match couplings {
                    Some(js) => js.clone(),
                    None => vec![*coupling; length.saturating_sub(1)],
                };
                let mut m = SpinModel::ising(length, *h_x, *h_z, js)?;
                if let ModelParams::IsingLongTrans { coupling_range: r, .. } = &mut m.params {
                    *r = *coupling_range;
                }
                m.validate()?;
                m
            }
            ModelConfig::TiltedIsing {
                field,
                theta,
                coupling,
                ..
            } => SpinModel::tilted_ising(length, *field, *theta, *coupling)?,
            ModelConfig::HeisenbergRandomField { field_bound, .. } => {
                SpinModel::heisenberg(*field_bound, vec![0.0; length])?
            }
            ModelConfig::PerturbedXxz {
                anisotropy,
                perturbation,
                ..
            } => SpinModel::perturbed_xxz(length, *anisotropy, *perturbation)?,
        };
        Ok(model.with_probe_hamiltonian(self.include_probe()))
    }

    /// Model on `length` sites with `parameter` set to `value`.
    pub fn at(&self, length: usize, parameter: &str, value: f64) -> Result<SpinModel> {
        let mut m = self.instantiate(length)?;
        m.set_parameter(parameter, value)?;
        m.validate()?;
        Ok(m)
    }

    /// Symmetry sector used for η when none is configured.
    pub fn default_sector(&self, length: usize) -> SectorPolicy {
        match self.kind() {
            ModelKind::IsingLongTrans | ModelKind::TiltedIsing => SectorPolicy::Odd,
            ModelKind::HeisenbergRandomField => SectorPolicy::Magnetization { up: length / 2 },
            ModelKind::PerturbedXxz => SectorPolicy::Composed {
                up: length / 3,
                parity: Parity::Even,
            },
        }
    }
}

/// Swept values, either listed or evenly spaced with both ends included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Linspace { start: f64, stop: f64, points: usize },
}

impl Default for Grid {
    fn default() -> Self {
        Grid::Linspace {
            start: 0.01,
            stop: 1.5,
            points: 30,
        }
    }
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Grid::Values(ref v) => v.clone(),
            Grid::Linspace { start, stop, points } => match points {
                0 => Vec::new(),
                1 => vec![start],
                n => (0..n)
                    .map(|i| {
                        if i == n - 1 {
                            stop
                        } else {
                            start + (stop - start) * i as f64 / (n - 1) as f64
                        }
                    })
                    .collect(),
            },
        }
    }
}

/// How η accompanies a sweep. η is computed only when `length` is set
/// (an η sweep falls back to the model length).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaSpec {
    /// Chain length of the spectral calculation.
    #[serde(default)]
    pub length: Option<usize>,
    /// Defaults per model family (see [`ModelConfig::default_sector`]).
    #[serde(default)]
    pub sector: Option<SectorPolicy>,
    /// Disorder draws for stochastic models; defaults to 50 for the
    /// random-field chain and 1 otherwise.
    #[serde(default)]
    pub disorder_realizations: Option<usize>,
    /// The spectral chain keeps the probe's own terms unless told otherwise.
    #[serde(default = "default_true")]
    pub include_probe_hamiltonian: bool,
}

impl Default for EtaSpec {
    fn default() -> Self {
        EtaSpec {
            length: None,
            sector: None,
            disorder_realizations: None,
            include_probe_hamiltonian: true,
        }
    }
}

fn default_realizations() -> usize {
    50
}
fn default_parameter() -> String {
    "h_z".into()
}
fn default_lengths() -> Vec<usize> {
    (4..=10).collect()
}
fn default_betas() -> Vec<f64> {
    vec![0.0, 1.0, 5.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_parameter")]
    pub parameter: String,
    #[serde(default)]
    pub grid: Grid,
    /// Random initial states (and disorder draws) per grid point.
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub eta: EtaSpec,
    /// CSV from an earlier η sweep, joined on the grid instead of recomputing.
    #[serde(default)]
    pub eta_curve: Option<PathBuf>,
    /// Chain lengths of a fluctuation-scaling run.
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    /// Inverse temperatures of a temperature sweep.
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            parameter: default_parameter(),
            grid: Grid::default(),
            realizations: default_realizations(),
            seed: None,
            eta: EtaSpec::default(),
            eta_curve: None,
            lengths: default_lengths(),
            betas: default_betas(),
        }
    }
}

fn fifty() -> f64 {
    50.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default = "fifty")]
    pub horizon: f64,
    #[serde(default = "tenth")]
    pub dt: f64,
    #[serde(default)]
    pub measure: SamplingMeasure,
    /// Defaults to `[T/2, T]`.
    #[serde(default)]
    pub fluctuation_window: Option<[f64; 2]>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            horizon: 50.0,
            dt: 0.1,
            measure: SamplingMeasure::default(),
            fluctuation_window: None,
        }
    }
}

impl DynamicsConfig {
    pub fn window(&self) -> [f64; 2] {
        self.fluctuation_window
            .unwrap_or([0.5 * self.horizon, self.horizon])
    }

    fn ensemble(&self, realizations: usize) -> EnsembleConfig {
        EnsembleConfig {
            realizations,
            horizon: self.horizon,
            dt: self.dt,
            measure: self.measure,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Probe `|0⟩ → |1⟩`; the rest of the chain starts in a random product state.
    #[default]
    Transfer,
    /// Bell pair on sites 1–2 from a fully random product state.
    Entangle,
}

fn twenty() -> f64 {
    20.0
}
fn default_steps() -> usize {
    control::DEFAULT_STEPS
}
fn default_bounds() -> [f64; 2] {
    control::DEFAULT_BOUNDS
}
fn default_starts() -> usize {
    10
}
fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "twenty")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_bounds")]
    pub bounds: [f64; 2],
    /// Random optimizer starts besides the zero field.
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Chain instances (couplings and initial state), each fixed across the grid.
    #[serde(default = "one_usize")]
    pub realizations: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            protocol: Protocol::default(),
            horizon: 20.0,
            steps: default_steps(),
            bounds: default_bounds(),
            starts: default_starts(),
            realizations: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// File stem; defaults to the subcommand name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Everything a sweep needs, in the sections of the configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// The sweep kinds, named as on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    EtaSweep,
    PuritySweep,
    Fluctuations,
    ControlSweep,
    TemperatureSweep,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::EtaSweep => "eta_sweep",
            SweepKind::PuritySweep => "purity_sweep",
            SweepKind::Fluctuations => "fluctuations",
            SweepKind::ControlSweep => "control_sweep",
            SweepKind::TemperatureSweep => "temperature_sweep",
        }
    }
}

impl SweepSpec {
    pub fn seed(&self) -> Result<u64> {
        self.sweep
            .seed
            .ok_or_else(|| Error::config("sweep.seed", "a seed is required (no wall-clock seeding)"))
    }

    pub fn grid(&self) -> Vec<f64> {
        self.sweep.grid.values()
    }

    /// Materializes every optional default so the spec is self-describing.
    pub fn resolve(mut self, kind: SweepKind) -> Result<Self> {
        if self.output.name.is_none() {
            self.output.name = Some(kind.name().into());
        }
        if self.dynamics.fluctuation_window.is_none() {
            self.dynamics.fluctuation_window = Some(self.dynamics.window());
        }
        let eta_length = self.eta_length(kind);
        let sector_length = eta_length.unwrap_or(self.model.length());
        let model = self.model.clone();
        let eta = &mut self.sweep.eta;
        eta.length = eta_length;
        if eta.sector.is_none() {
            eta.sector = Some(model.default_sector(sector_length));
        }
        if eta.disorder_realizations.is_none() {
            eta.disorder_realizations = Some(match model.kind() {
                ModelKind::HeisenbergRandomField => 50,
                _ => 1,
            });
        }
        self.validate(kind)?;
        Ok(self)
    }

    /// Checks constraints before any computation; errors name the key.
    pub fn validate(&self, kind: SweepKind) -> Result<()> {
        self.seed()?;
        let grid = self.grid();
        if grid.is_empty() {
            return Err(Error::config("sweep.grid", "grid is empty"));
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sweep.grid", "grid values must be finite"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("sweep.grid", "grid must be strictly increasing"));
        }
        if self.sweep.realizations == 0 {
            return Err(Error::config("sweep.realizations", "must be at least 1"));
        }
        let d = &self.dynamics;
        if !(d.horizon > 0.0 && d.horizon.is_finite()) {
            return Err(Error::config("dynamics.horizon", "must be positive"));
        }
        if !(d.dt > 0.0 && d.dt <= d.horizon) {
            return Err(Error::config("dynamics.dt", "must be positive and at most the horizon"));
        }
        let [w0, w1] = d.window();
        if !(0.0 <= w0 && w0 < w1) {
            return Err(Error::config("dynamics.fluctuation_window", "needs 0 <= start < end"));
        }
        if self.sweep.eta.length.is_some() && self.sweep.eta_curve.is_some() {
            return Err(Error::config("sweep.eta_curve", "give either sweep.eta.length or sweep.eta_curve"));
        }
        let lengths: Vec<usize> = match kind {
            SweepKind::Fluctuations => self.sweep.lengths.clone(),
            SweepKind::EtaSweep => vec![],
            _ => vec![self.model.length()],
        };
        if kind == SweepKind::Fluctuations {
            if self.sweep.lengths.len() < 2 {
                return Err(Error::config("sweep.lengths", "a scaling fit needs at least two lengths"));
            }
            if self.sweep.lengths.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("sweep.lengths", "lengths must be strictly increasing"));
            }
            if !(d.window()[1] <= d.horizon + 1e-12) {
                return Err(Error::config("dynamics.fluctuation_window", "window ends after the horizon"));
            }
        }
        for &l in &lengths {
            if l > 14 {
                return Err(Error::config("model.length", format!("{l} sites exceed the dense limit of 14")));
            }
            for &x in &grid {
                self.model
                    .at(l, &self.sweep.parameter, x)
                    .map_err(|e| Error::config(if lengths.len() > 1 { "sweep.lengths" } else { "model" }, e.to_string()))?;
            }
        }
        if kind == SweepKind::TemperatureSweep {
            if self.model.kind() != ModelKind::IsingLongTrans {
                return Err(Error::config("model.kind", "temperature sweeps use the Ising chain"));
            }
            if self.sweep.betas.is_empty() || self.sweep.betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
                return Err(Error::config("sweep.betas", "needs finite inverse temperatures >= 0"));
            }
            if self.model.length() < 2 {
                return Err(Error::config("model.length", "needs an environment"));
            }
        }
        if kind == SweepKind::ControlSweep {
            let c = &self.control;
            if c.steps == 0 {
                return Err(Error::config("control.steps", "must be at least 1"));
            }
            if !(c.bounds[0] <= c.bounds[1]) || c.bounds.iter().any(|b| !b.is_finite()) {
                return Err(Error::config("control.bounds", "needs finite lower <= upper"));
            }
            if !(c.horizon > 0.0 && c.horizon.is_finite()) {
                return Err(Error::config("control.horizon", "must be positive"));
            }
            if c.starts == 0 {
                return Err(Error::config("control.starts", "must be at least 1"));
            }
            if c.realizations == 0 {
                return Err(Error::config("control.realizations", "must be at least 1"));
            }
            if c.protocol == Protocol::Entangle && self.model.length() < 2 {
                return Err(Error::config("control.protocol", "entangling needs two sites"));
            }
        }
        if let Some(length) = self.eta_length(kind) {
            self.validate_eta(length, &grid)?;
        }
        Ok(())
    }

    /// Length of the η calculation, if this run computes η.
    fn eta_length(&self, kind: SweepKind) -> Option<usize> {
        match (self.sweep.eta.length, kind) {
            (Some(l), _) => Some(l),
            (None, SweepKind::EtaSweep) => Some(self.model.length()),
            (None, _) => None,
        }
    }

    fn eta_sector(&self, length: usize) -> SectorPolicy {
        self.sweep
            .eta
            .sector
            .clone()
            .unwrap_or_else(|| self.model.default_sector(length))
    }

    fn validate_eta(&self, length: usize, grid: &[f64]) -> Result<()> {
        let eta = &self.sweep.eta;
        if !(3..=16).contains(&length) {
            return Err(Error::config("sweep.eta.length", "must be between 3 and 16"));
        }
        if eta.disorder_realizations == Some(0) {
            return Err(Error::config("sweep.eta.disorder_realizations", "must be at least 1"));
        }
        let sector = self.eta_sector(length);
        for &x in grid {
            let m = self
                .eta_model(length, x)
                .map_err(|e| Error::config("sweep.eta.length", e.to_string()))?;
            let parity = matches!(sector, SectorPolicy::Even | SectorPolicy::Odd | SectorPolicy::Composed { .. });
            let magnetization = matches!(sector, SectorPolicy::Magnetization { .. } | SectorPolicy::Composed { .. });
            if parity && !m.has_parity_symmetry() {
                return Err(Error::config(
                    "sweep.eta.sector",
                    format!("{sector:?} needs chain-reversal symmetry, which this model breaks (random or non-palindromic couplings, or a dropped probe term)"),
                ));
            }
            if magnetization && !m.conserves_magnetization() {
                return Err(Error::config(
                    "sweep.eta.sector",
                    format!("{sector:?} needs conserved S^z, which this model breaks at {} = {x}", self.sweep.parameter),
                ));
            }
        }
        Ok(())
    }

    fn eta_model(&self, length: usize, value: f64) -> Result<SpinModel> {
        Ok(self
            .model
            .at(length, &self.sweep.parameter, value)?
            .with_probe_hamiltonian(self.sweep.eta.include_probe_hamiltonian))
    }
}

fn point_seed(master: u64, value: f64) -> u64 {
    derive_seed(master, &[value_key(value)])
}

/// Rows computed before the first failing grid point, plus that failure.
#[derive(Debug)]
pub struct Partial<T> {
    pub completed: T,
    pub failure: Option<Error>,
}

impl<T> Partial<T> {
    pub fn into_result(self) -> Result<T> {
        match self.failure {
            None => Ok(self.completed),
            Some(e) => Err(e),
        }
    }
}

/// Runs `f` for every grid point; keeps rows up to the first failure.
fn run_grid<T: Send>(
    parameter: &str,
    grid: &[f64],
    f: impl Fn(usize, f64) -> Result<T> + Sync + Send,
) -> (Vec<T>, Option<Error>) {
    let results = parallel::map(grid.len(), |i| f(i, grid[i]));
    let mut rows = Vec::with_capacity(grid.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                return (
                    rows,
                    Some(Error::GridPoint {
                        index: i,
                        parameter: parameter.to_string(),
                        value: grid[i],
                        source: Box::new(e),
                    }),
                )
            }
        }
    }
    (rows, None)
}

/// A column-oriented CSV table with `NA` for absent values.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Option<f64>>>,
}

/// Decimal rendering with 12 significant digits, trailing zeros dropped.
pub fn format_value(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{:.11e}", x);
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.map_or_else(|| "NA".to_string(), format_value))
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.header.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Reads `(param, eta)` pairs from an η-sweep CSV.
pub fn read_eta_curve(csv: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::config("sweep.eta_curve", "file is empty"))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::config("sweep.eta_curve", format!("missing column `{name}`")))
    };
    let (p, e) = (col("param")?, col("eta")?);
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            let parse = |j: usize| -> Result<f64> {
                cells
                    .get(j)
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| Error::config("sweep.eta_curve", format!("row {}: bad value", i + 1)))
            };
            Ok((parse(p)?, parse(e)?))
        })
        .collect()
}

/// Looks up η for each grid value. CSV values carry 12 significant digits,
/// so matching is relative to 1e-9.
fn join_eta(grid: &[f64], curve: &[(f64, f64)]) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&x| {
            curve
                .iter()
                .find(|(q, _)| (x - q).abs() <= 1e-9 * x.abs().max(q.abs()).max(1.0))
                .map(|&(_, e)| e)
                .ok_or_else(|| Error::config("sweep.eta_curve", format!("no η value for grid point {x}")))
        })
        .collect()
}

/// η per grid point, computed or joined from `sweep.eta_curve`.
fn eta_column(spec: &SweepSpec, grid: &[f64]) -> Result<Option<Vec<f64>>> {
    if let Some(path) = &spec.sweep.eta_curve {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("sweep.eta_curve", format!("{}: {e}", path.display())))?;
        return Ok(Some(join_eta(grid, &read_eta_curve(&text)?)?));
    }
    match spec.sweep.eta.length {
        None => Ok(None),
        Some(_) => {
            let rows = run_eta_sweep(spec)?;
            Ok(Some(rows.into_iter().map(|r| r.estimate.eta).collect()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaRow {
    pub param: f64,
    pub estimate: EtaEstimate,
}

fn eta_config(spec: &SweepSpec, length: usize, seed: u64) -> EtaConfig {
    EtaConfig {
        sector: spec.eta_sector(length),
        disorder_realizations: spec.sweep.eta.disorder_realizations.unwrap_or(1),
        seed,
    }
}

fn eta_sweep_partial(spec: &SweepSpec) -> Result<Partial<Vec<EtaRow>>> {
    let length = spec.eta_length(SweepKind::EtaSweep).expect("η sweeps always have a length");
    let master = spec.seed()?;
    let grid = spec.grid();
    let (rows, failure) = run_grid(&spec.sweep.parameter, &grid, |_, x| {
        let model = spec.eta_model(length, x)?;
        let estimate = eta_for_model(&model, &eta_config(spec, length, point_seed(master, x)))?;
        Ok(EtaRow { param: x, estimate })
    });
    Ok(Partial {
        completed: rows,
        failure,
    })
}

/// η (and mean `r̃`) per grid point on the configured sector.
pub fn run_eta_sweep(spec: &SweepSpec) -> Result<Vec<EtaRow>> {
    eta_sweep_partial(spec)?.into_result()
}

fn eta_table(rows: &[EtaRow]) -> Table {
    Table {
        header: vec!["param", "mean_purity", "std_purity", "purity_norm", "eta", "one_minus_eta"],
        rows: rows
            .iter()
            .map(|r| vec![Some(r.param), None, None, None, Some(r.estimate.eta), Some(1.0 - r.estimate.eta)])
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityRow {
    pub param: f64,
    pub ensemble: EnsembleAverage,
    /// Absent when the grid has a single value or a flat curve.
    pub purity_norm: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuritySweep {
    pub rows: Vec<PurityRow>,
    /// Why normalization was skipped, if it was.
    pub normalization_error: Option<String>,
}

impl PuritySweep {
    pub fn params(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.param).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ensemble.mean).collect()
    }

    pub fn normalized(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.purity_norm).collect()
    }

    pub fn table(&self) -> Table {
        Table {
            header: vec!["param", "mean_purity", "std_purity", "purity_norm", "eta", "one_minus_eta"],
            rows: self.rows.iter().map(purity_cells).collect(),
        }
    }
}

fn purity_cells(r: &PurityRow) -> Vec<Option<f64>> {
    vec![
        Some(r.param),
        Some(r.ensemble.mean),
        Some(r.ensemble.std),
        r.purity_norm,
        r.eta,
        r.eta.map(|e| 1.0 - e),
    ]
}

/// Attaches the normalized column; normalization failures are recorded, not raised.
fn normalize_rows(mut rows: Vec<PurityRow>) -> PuritySweep {
    let means: Vec<f64> = rows.iter().map(|r| r.ensemble.mean).collect();
    match dynamics::normalize_curve(&means) {
        Ok(norm) => {
            for (r, n) in rows.iter_mut().zip(norm) {
                r.purity_norm = Some(n);
            }
            PuritySweep {
                rows,
                normalization_error: None,
            }
        }
        Err(e) => PuritySweep {
            rows,
            normalization_error: Some(e.to_string()),
        },
    }
}

fn purity_sweep_partial(spec: &SweepSpec) -> Result<Partial<PuritySweep>> {
    let master = spec.seed()?;
    let grid = spec.grid();
    let eta = eta_column(spec, &grid)?;
    let cfg = spec.dynamics.ensemble(spec.sweep.realizations);
    let (rows, failure) = run_grid(&spec.sweep.parameter, &grid, |i, x| {
        let model = spec.model.at(spec.model.length(), &spec.sweep.parameter, x)?;
        Ok(PurityRow {
            param: x,
            ensemble: dynamics::ensemble_averaged_purity(&model, &cfg, point_seed(master, x))?,
            purity_norm: None,
            eta: eta.as_ref().map(|e| e[i]),
        })
    });
    Ok(Partial {
        completed: if failure.is_none() {
            normalize_rows(rows)
        } else {
            PuritySweep {
                rows,
                normalization_error: None,
            }
        },
        failure,
    })
}

/// Ensemble-averaged probe purity per grid point, normalized over the grid.
pub fn run_purity_sweep(spec: &SweepSpec) -> Result<PuritySweep> {
    purity_sweep_partial(spec)?.into_result()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationRow {
    pub param: f64,
    pub length: usize,
    /// Realization means of `δ(P), δ(r_x), δ(r_y), δ(r_z)`.
    pub deltas: [f64; 4],
    /// Slope of `log2 δ(P)` against `L` over all lengths at this `param`.
    pub log2_slope: Option<f64>,
}

/// Realization `i` of a fluctuation run at (`value`, `length`).
fn fluctuation_seed(master: u64, value: f64, length: usize) -> u64 {
    derive_seed(master, &[value_key(value), length as u64])
}

fn window_times(window: [f64; 2], dt: f64) -> Vec<f64> {
    let [t0, t1] = window;
    let steps = (((t1 - t0) / dt).round() as usize).max(1);
    (0..=steps)
        .map(|i| t0 + (t1 - t0) * i as f64 / steps as f64)
        .collect()
}

/// Time fluctuations of the probe over `window` for one (value, length).
pub fn window_fluctuations(
    model: &SpinModel,
    dynamics: &DynamicsConfig,
    realizations: usize,
    seed: u64,
) -> Result<[f64; 4]> {
    let window = dynamics.window();
    let times = window_times(window, dynamics.dt);
    let shared = if model.is_stochastic() {
        None
    } else {
        Some(crate::spectral::eigendecompose(&crate::operators::build_hamiltonian(model)?, true)?)
    };
    let per = parallel::try_map(realizations, |i| {
        let (instance, psi0) = dynamics::realization(model, dynamics.measure, seed, i)?;
        let owned;
        let sd = match &shared {
            Some(s) => s,
            None => {
                owned = crate::spectral::eigendecompose(&crate::operators::build_hamiltonian(&instance)?, true)?;
                &owned
            }
        };
        dynamics::probe_trajectory(sd, &psi0, &times)?.window_fluctuations(window)
    })?;
    let mut mean = [0.0; 4];
    for d in &per {
        for k in 0..4 {
            mean[k] += d[k] / realizations as f64;
        }
    }
    Ok(mean)
}

fn fluctuation_partial(spec: &SweepSpec) -> Result<Partial<Vec<FluctuationRow>>> {
    let master = spec.seed()?;
    let grid = spec.grid();
    let lengths = &spec.sweep.lengths;
    let (blocks, failure) = run_grid(&spec.sweep.parameter, &grid, |_, x| {
        let mut rows = Vec::with_capacity(lengths.len());
        for &l in lengths {
            let model = spec.model.at(l, &spec.sweep.parameter, x)?;
            let deltas = window_fluctuations(&model, &spec.dynamics, spec.sweep.realizations, fluctuation_seed(master, x, l))?;
            rows.push(FluctuationRow {
                param: x,
                length: l,
                deltas,
                log2_slope: None,
            });
        }
        let ls: Vec<f64> = rows.iter().map(|r| r.length as f64).collect();
        let logs: Vec<f64> = rows.iter().map(|r| r.deltas[0].log2()).collect();
        let slope = if logs.iter().all(|v| v.is_finite()) {
            stats::slope(&ls, &logs).ok()
        } else {
            None
        };
        rows.iter_mut().for_each(|r| r.log2_slope = slope);
        Ok(rows)
    });
    Ok(Partial {
        completed: blocks.into_iter().flatten().collect(),
        failure,
    })
}

/// `δ(P)` and `δ(r_i)` per grid value and chain length, with the `log2` slope.
pub fn run_fluctuation_scaling(spec: &SweepSpec) -> Result<Vec<FluctuationRow>> {
    fluctuation_partial(spec)?.into_result()
}

fn fluctuation_table(rows: &[FluctuationRow]) -> Table {
    Table {
        header: vec!["param", "length", "delta_purity", "delta_rx", "delta_ry", "delta_rz", "log2_slope"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    Some(r.param),
                    Some(r.length as f64),
                    Some(r.deltas[0]),
                    Some(r.deltas[1]),
                    Some(r.deltas[2]),
                    Some(r.deltas[3]),
                    r.log2_slope,
                ]
            })
            .collect(),
    }
}

/// Couplings and initial state of control instance `r`, shared by every grid point.
pub fn control_instance(spec: &SweepSpec, master: u64, r: usize) -> Result<(ModelConfig, PureState)> {
    let mut stream = rng::stream(master, &[CONTROL_INSTANCE_TAG, r as u64]);
    let length = spec.model.length();
    let mut model = spec.model.clone();
    if let ModelConfig::IsingLongTrans {
        couplings,
        coupling_range: range @ Some(_),
        ..
    } = &mut model
    {
        let [lo, hi] = range.expect("checked");
        *couplings = Some(sample_random_couplings(length, lo, hi, &mut stream)?);
        *range = None;
    }
    let measure = spec.dynamics.measure;
    let psi0 = match spec.control.protocol {
        Protocol::Transfer => {
            let probe = PureState::basis(2, 0)?;
            if length == 1 {
                probe
            } else {
                probe.tensor(&random_product_state_with(length - 1, measure, &mut stream)?)
            }
        }
        Protocol::Entangle => random_product_state_with(length, measure, &mut stream)?,
    };
    Ok((model, psi0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub param: f64,
    /// Mean over control instances of the best fidelity.
    pub best_fidelity: f64,
    pub per_instance: Vec<control::ControlResult>,
    pub eta: Option<f64>,
    pub evaluations: usize,
}

fn control_sweep_partial(spec: &SweepSpec) -> Result<Partial<Vec<ControlRow>>> {
    let master = spec.seed()?;
    let grid = spec.grid();
    let eta = eta_column(spec, &grid)?;
    let c = &spec.control;
    let instances: Vec<(ModelConfig, PureState)> = (0..c.realizations)
        .map(|r| control_instance(spec, master, r))
        .collect::<Result<_>>()?;
    let target = match c.protocol {
        Protocol::Transfer => control::transfer_target(),
        Protocol::Entangle => control::bell_target(),
    };
    let (rows, failure) = run_grid(&spec.sweep.parameter, &grid, |i, x| {
        let mut per_instance = Vec::with_capacity(instances.len());
        for (template, psi0) in &instances {
            let model = template.at(spec.model.length(), &spec.sweep.parameter, x)?;
            let problem = ControlProblem::new(model, target.clone(), c.horizon, psi0.clone())?
                .with_steps(c.steps)?
                .with_bounds(c.bounds)?;
            per_instance.push(control::optimize(&problem, c.starts, point_seed(master, x))?);
        }
        Ok(ControlRow {
            param: x,
            best_fidelity: per_instance.iter().map(|r| r.best_fidelity).sum::<f64>() / per_instance.len() as f64,
            evaluations: per_instance.iter().map(|r| r.evaluations).sum(),
            per_instance,
            eta: eta.as_ref().map(|e| e[i]),
        })
    });
    Ok(Partial {
        completed: rows,
        failure,
    })
}

/// Optimal control fidelity per grid point.
pub fn run_control_sweep(spec: &SweepSpec) -> Result<Vec<ControlRow>> {
    control_sweep_partial(spec)?.into_result()
}

fn control_table(rows: &[ControlRow]) -> Table {
    Table {
        header: vec!["param", "best_fidelity", "eta", "one_minus_eta", "evaluations"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    Some(r.param),
                    Some(r.best_fidelity),
                    r.eta,
                    r.eta.map(|e| 1.0 - e),
                    Some(r.evaluations as f64),
                ]
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureCurve {
    pub beta: f64,
    pub sweep: PuritySweep,
}

/// Probe purity with the environment in its Gibbs state at each `β`.
///
/// Realization `i` at a grid point draws the probe direction from the
/// point's stream `i`, the same for every `β`.
fn temperature_partial(spec: &SweepSpec) -> Result<Partial<Vec<TemperatureCurve>>> {
    let master = spec.seed()?;
    let grid = spec.grid();
    let eta = eta_column(spec, &grid)?;
    let times = dynamics::time_grid(spec.dynamics.horizon, spec.dynamics.dt)?;
    let window = [0.0, spec.dynamics.horizon];
    let n = spec.sweep.realizations;
    let measure = spec.dynamics.measure;
    let mut curves = Vec::new();
    for &beta in &spec.sweep.betas {
        let (rows, failure) = run_grid(&spec.sweep.parameter, &grid, |i, x| {
            let model = spec.model.at(spec.model.length(), &spec.sweep.parameter, x)?;
            let seed = point_seed(master, x);
            let shared = if model.is_stochastic() {
                None
            } else {
                Some(ProbeChannel::gibbs(&model, beta, &times)?)
            };
            let values = parallel::try_map(n, |r| {
                let mut stream = dynamics::realization_stream(seed, r);
                let owned;
                let channel = match &shared {
                    Some(c) => c,
                    None => {
                        owned = ProbeChannel::gibbs(&model.resample(&mut stream)?, beta, &times)?;
                        &owned
                    }
                };
                let direction = qubit_bloch(random_qubit(measure, &mut stream));
                time_averaged_purity(&channel.trajectory(direction), window)
            })?;
            Ok(PurityRow {
                param: x,
                ensemble: EnsembleAverage::from_values(values)?,
                purity_norm: None,
                eta: eta.as_ref().map(|e| e[i]),
            })
        });
        if let Some(e) = failure {
            curves.push(TemperatureCurve {
                beta,
                sweep: PuritySweep {
                    rows,
                    normalization_error: None,
                },
            });
            return Ok(Partial {
                completed: curves,
                failure: Some(e),
            });
        }
        curves.push(TemperatureCurve {
            beta,
            sweep: normalize_rows(rows),
        });
    }
    Ok(Partial {
        completed: curves,
        failure: None,
    })
}

/// One normalized purity curve per inverse temperature.
pub fn run_temperature_sweep(spec: &SweepSpec) -> Result<Vec<TemperatureCurve>> {
    temperature_partial(spec)?.into_result()
}

fn temperature_table(curves: &[TemperatureCurve]) -> Table {
    Table {
        header: vec!["beta", "param", "mean_purity", "std_purity", "purity_norm", "eta", "one_minus_eta"],
        rows: curves
            .iter()
            .flat_map(|c| {
                c.sweep.rows.iter().map(move |r| {
                    let mut cells = vec![Some(c.beta)];
                    cells.extend(purity_cells(r));
                    cells
                })
            })
            .collect(),
    }
}

/// Table of a finished or interrupted run, with diagnostics for the caller.
#[derive(Debug)]
pub struct RunOutput {
    pub table: Table,
    pub notes: Vec<String>,
    pub failure: Option<Error>,
}

/// Runs `kind` and renders its table; rows before a failing grid point are kept.
pub fn run(kind: SweepKind, spec: &SweepSpec) -> Result<RunOutput> {
    let mut notes = Vec::new();
    let (table, failure) = match kind {
        SweepKind::EtaSweep => {
            let p = eta_sweep_partial(spec)?;
            let degenerate: usize = p.completed.iter().map(|r| r.estimate.degenerate_spacings).sum();
            if degenerate > 0 {
                notes.push(format!("{degenerate} degenerate level spacings were met"));
            }
            (eta_table(&p.completed), p.failure)
        }
        SweepKind::PuritySweep => {
            let p = purity_sweep_partial(spec)?;
            if let Some(e) = &p.completed.normalization_error {
                notes.push(format!("normalization skipped: {e}"));
            }
            (p.completed.table(), p.failure)
        }
        SweepKind::Fluctuations => {
            let p = fluctuation_partial(spec)?;
            (fluctuation_table(&p.completed), p.failure)
        }
        SweepKind::ControlSweep => {
            let p = control_sweep_partial(spec)?;
            (control_table(&p.completed), p.failure)
        }
        SweepKind::TemperatureSweep => {
            let p = temperature_partial(spec)?;
            for c in &p.completed {
                if let Some(e) = &c.sweep.normalization_error {
                    notes.push(format!("beta = {}: normalization skipped: {e}", c.beta));
                }
            }
            (temperature_table(&p.completed), p.failure)
        }
    };
    Ok(RunOutput {
        table,
        notes,
        failure,
    })
}

/// Renders the CSV text for a finished run.
pub fn csv_text(output: &RunOutput) -> String {
    output.table.to_csv()
}

/// Writes `text` to `dir/name.csv`, or `dir/name.csv.partial` when `partial`.
pub fn csv_path(dir: &std::path::Path, name: &str, partial: bool) -> PathBuf {
    let mut file = format!("{name}.csv");
    if partial {
        file.push_str(".partial");
    }
    dir.join(file)
}

/// Human-readable summary line of a spec (for logs).
pub fn describe(spec: &SweepSpec) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{} L={} sweeping {} over {} points",
        spec.model.kind(),
        spec.model.length(),
        spec.sweep.parameter,
        spec.grid().len()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> SweepSpec {
        serde_json::from_str(json).unwrap()
    }

    fn small_ising() -> SweepSpec {
        let mut s = SweepSpec::default();
        s.model = ModelConfig::IsingLongTrans {
            length: 3,
            h_x: 1.0,
            h_z: 0.5,
            coupling: 1.0,
            couplings: None,
            coupling_range: None,
            include_probe_hamiltonian: true,
        };
        s.sweep.seed = Some(5);
        s.sweep.realizations = 4;
        s.sweep.grid = Grid::Linspace { start: 0.01, stop: 1.5, points: 5 };
        s.dynamics.horizon = 10.0;
        s
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let s = spec(r#"{"model": {"kind": "ising_long_trans"}, "sweep": {"seed": 1}}"#)
            .resolve(SweepKind::PuritySweep)
            .unwrap();
        assert_eq!(s.dynamics.dt, 0.1);
        assert_eq!(s.sweep.realizations, 50);
        assert_eq!(s.control.bounds, [-2.0, 2.0]);
        assert_eq!(s.grid().len(), 30);
        assert_eq!(s.output.name.as_deref(), Some("purity_sweep"));
        assert_eq!(s.dynamics.fluctuation_window, Some([25.0, 50.0]));
        assert_eq!(s.sweep.eta.sector, Some(SectorPolicy::Odd));
        assert_eq!(s.sweep.eta.length, None);
        let echoed = serde_json::to_value(&s).unwrap();
        assert_eq!(echoed["model"]["h_x"], 1.0);
        assert_eq!(echoed["dynamics"]["measure"], "sphere_uniform");
    }

    #[test]
    fn eta_defaults_depend_on_the_model() {
        let s = spec(r#"{"model": {"kind": "ising_long_trans"}, "sweep": {"seed": 1, "eta": {"length": 8}}}"#)
            .resolve(SweepKind::EtaSweep)
            .unwrap();
        assert_eq!(s.sweep.eta.sector, Some(SectorPolicy::Odd));
        let s = spec(r#"{"model": {"kind": "perturbed_xxz"}, "sweep": {"seed": 1, "parameter": "perturbation", "grid": [0.1, 0.5], "eta": {"length": 15}}}"#)
            .resolve(SweepKind::EtaSweep)
            .unwrap();
        assert_eq!(s.sweep.eta.sector, Some(SectorPolicy::Composed { up: 5, parity: Parity::Even }));
        let s = spec(r#"{"model": {"kind": "heisenberg_random_field"}, "sweep": {"seed": 1, "parameter": "field_bound", "grid": [0.5], "eta": {"length": 10}}}"#)
            .resolve(SweepKind::EtaSweep)
            .unwrap();
        let eta = s.sweep.eta;
        assert_eq!(eta.sector, Some(SectorPolicy::Magnetization { up: 5 }));
        assert_eq!(eta.disorder_realizations, Some(50));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(serde_json::from_str::<SweepSpec>(r#"{"sweep": {"seeed": 1}}"#).is_err());
        assert!(serde_json::from_str::<SweepSpec>(r#"{"model": {"kind": "ising_long_trans", "hx": 1}}"#).is_err());
        let mut s = small_ising();
        s.sweep.realizations = 0;
        assert!(matches!(s.validate(SweepKind::PuritySweep), Err(Error::Config { key, .. }) if key == "sweep.realizations"));
        let mut s = small_ising();
        s.sweep.grid = Grid::Values(vec![0.5, 0.2]);
        assert!(matches!(s.validate(SweepKind::PuritySweep), Err(Error::Config { key, .. }) if key == "sweep.grid"));
        let mut s = small_ising();
        s.sweep.seed = None;
        assert!(matches!(s.validate(SweepKind::PuritySweep), Err(Error::Config { key, .. }) if key == "sweep.seed"));
        let mut s = small_ising();
        s.sweep.parameter = "theta".into();
        assert!(matches!(s.validate(SweepKind::PuritySweep), Err(Error::Config { .. })));
    }

    #[test]
    fn parity_sector_with_random_couplings_is_rejected() {
        let s = spec(
            r#"{"model": {"kind": "ising_long_trans", "coupling_range": [0.5, 1.5]},
                "sweep": {"seed": 1, "eta": {"length": 8, "sector": "odd"}}}"#,
        );
        assert!(matches!(s.resolve(SweepKind::PuritySweep), Err(Error::Config { key, .. }) if key == "sweep.eta.sector"));
        let s = spec(r#"{"model": {"kind": "ising_long_trans"}, "sweep": {"seed": 1, "eta": {"length": 8, "sector": {"magnetization": {"up": 4}}}}}"#);
        assert!(s.resolve(SweepKind::EtaSweep).is_err());
    }

    #[test]
    fn linspace_hits_both_ends() {
        let g = Grid::Linspace { start: 0.01, stop: 1.5, points: 30 }.values();
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[29], 1.5);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(0.5), "0.5");
        assert_eq!(format_value(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_value(-2.0), "-2");
        assert_eq!(format_value(123456.789), "123456.789");
        assert_eq!(format_value(1.5e-9), "1.5e-9");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(2.0f64.powi(60)), "1.15292150461e18");
    }

    #[test]
    fn purity_sweep_is_deterministic_and_normalized() {
        let s = small_ising();
        let a = run_purity_sweep(&s).unwrap();
        let b = run_purity_sweep(&s).unwrap();
        assert_eq!(a.table().to_csv(), b.table().to_csv());
        let norm = a.normalized().unwrap();
        assert!(norm.contains(&0.0) && norm.contains(&1.0));
        assert_eq!(a.rows.len(), 5);
        let csv = a.table().to_csv();
        assert!(csv.starts_with("param,mean_purity,std_purity,purity_norm,eta,one_minus_eta\n"));
        assert!(csv.lines().nth(1).unwrap().ends_with(",NA,NA"));
    }

    #[test]
    fn grid_points_keep_their_draws_when_the_grid_grows() {
        let s = small_ising();
        let a = run_purity_sweep(&s).unwrap();
        let mut t = s.clone();
        let mut values = s.grid();
        values.insert(2, 0.6);
        t.sweep.grid = Grid::Values(values);
        let b = run_purity_sweep(&t).unwrap();
        assert_eq!(a.rows[0].ensemble, b.rows[0].ensemble);
        assert_eq!(a.rows[4].ensemble, b.rows[5].ensemble);
    }

    #[test]
    fn single_point_grid_reports_degenerate_normalization() {
        let mut s = small_ising();
        s.sweep.grid = Grid::Values(vec![0.5]);
        let out = run_purity_sweep(&s).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert!(out.normalization_error.is_some());
        assert!(out.rows[0].purity_norm.is_none());
        assert!(out.rows[0].ensemble.mean > 0.5);
    }

    #[test]
    fn eta_curve_joins_by_grid() {
        let curve = read_eta_curve("param,mean_purity,std_purity,purity_norm,eta,one_minus_eta\n0.1,NA,NA,NA,0.25,0.75\n0.2,NA,NA,NA,0.5,0.5\n").unwrap();
        assert_eq!(curve, vec![(0.1, 0.25), (0.2, 0.5)]);
        assert_eq!(join_eta(&[0.1, 0.2], &curve).unwrap(), vec![0.25, 0.5]);
        assert_eq!(join_eta(&[0.2], &curve).unwrap(), vec![0.5]);
        assert_eq!(join_eta(&[0.1 + 1e-13], &curve).unwrap(), vec![0.25]);
        assert!(matches!(join_eta(&[0.1, 0.3], &curve), Err(Error::Config { .. })));
    }

    #[test]
    fn eta_sweep_rows_follow_the_grid() {
        let mut s = small_ising();
        s.sweep.eta.length = Some(7);
        let s = s.resolve(SweepKind::EtaSweep).unwrap();
        let rows = run_eta_sweep(&s).unwrap();
        assert_eq!(rows.iter().map(|r| r.param).collect::<Vec<_>>(), s.grid());
        assert!(rows.iter().all(|r| r.estimate.sector_dim == 56));
    }

    #[test]
    fn fluctuation_rows_match_direct_single_trajectories() {
        let mut s = small_ising();
        s.sweep.realizations = 1;
        s.sweep.grid = Grid::Values(vec![0.5]);
        s.sweep.lengths = vec![3, 4];
        s.dynamics.horizon = 20.0;
        let rows = run_fluctuation_scaling(&s).unwrap();
        let master = s.seed().unwrap();
        for row in &rows {
            let model = s.model.at(row.length, "h_z", 0.5).unwrap();
            let (_, psi0) = dynamics::realization(&model, SamplingMeasure::SphereUniform, fluctuation_seed(master, 0.5, row.length), 0).unwrap();
            let sd = crate::spectral::eigendecompose(&crate::operators::build_hamiltonian(&model).unwrap(), true).unwrap();
            let traj = dynamics::probe_trajectory(&sd, &psi0, &window_times([10.0, 20.0], 0.1)).unwrap();
            assert_eq!(traj.window_fluctuations([10.0, 20.0]).unwrap(), row.deltas);
        }
        assert!(rows[0].log2_slope.is_some());
    }

    #[test]
    fn control_sweep_single_point() {
        let mut s = small_ising();
        s.model = ModelConfig::IsingLongTrans {
            length: 2,
            h_x: 1.0,
            h_z: 0.5,
            coupling: 1.0,
            couplings: None,
            coupling_range: Some([0.5, 1.5]),
            include_probe_hamiltonian: true,
        };
        s.sweep.grid = Grid::Values(vec![0.1]);
        s.control.steps = 4;
        s.control.starts = 1;
        let rows = run_control_sweep(&s).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].eta.is_none());
        assert!((0.0..=1.0).contains(&rows[0].best_fidelity));
        let out = run(SweepKind::ControlSweep, &s).unwrap();
        assert!(out.table.to_csv().starts_with("param,best_fidelity,eta,one_minus_eta,evaluations\n"));
    }

    #[test]
    fn control_instance_is_fixed_across_the_grid() {
        let mut s = small_ising();
        s.model = ModelConfig::IsingLongTrans {
            length: 4,
            h_x: 1.0,
            h_z: 0.5,
            coupling: 1.0,
            couplings: None,
            coupling_range: Some([0.5, 1.5]),
            include_probe_hamiltonian: true,
        };
        let (m, psi) = control_instance(&s, 9, 0).unwrap();
        let a = m.at(4, "h_z", 0.1).unwrap();
        let b = m.at(4, "h_z", 1.1).unwrap();
        let couplings = |m: &SpinModel| match &m.params {
            ModelParams::IsingLongTrans { couplings, coupling_range, .. } => {
                assert!(coupling_range.is_none());
                couplings.clone()
            }
            _ => unreachable!(),
        };
        assert_eq!(couplings(&a), couplings(&b));
        assert!(couplings(&a).iter().all(|j| (0.5..=1.5).contains(j)));
        // Probe starts in |0⟩.
        let probe = dynamics::reduce_to_probe(&psi, 4).unwrap();
        assert!((probe.get(0, 0).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn temperature_sweep_shapes() {
        let mut s = small_ising();
        s.sweep.betas = vec![0.0, 2.0];
        s.sweep.grid = Grid::Values(vec![0.5]);
        let curves = run_temperature_sweep(&s).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].sweep.rows.len(), 1);
        let out = run(SweepKind::TemperatureSweep, &s).unwrap();
        assert_eq!(out.table.rows.len(), 2);
        assert_eq!(out.notes.len(), 2);
    }

    #[test]
    fn failing_grid_point_keeps_earlier_rows() {
        let mut s = small_ising();
        // Skips validation: a zero-site chain fails at the first grid point.
        s.sweep.grid = Grid::Values(vec![0.1, 0.2]);
        s.sweep.eta.length = Some(0);
        let out = run(SweepKind::EtaSweep, &s).unwrap();
        assert!(matches!(out.failure, Some(Error::GridPoint { index: 0, .. })));
        assert!(out.table.rows.is_empty());
    }
}
