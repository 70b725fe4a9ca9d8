//! Config-driven experiment runner and figure-data emission.
//!
//! A run reads one TOML file:
//!
//! ```toml
//! kind = "quench"
//! seed = 7
//! out = "runs/quench"
//! format = "csv"
//!
//! [params]
//! t_max_s = 0.01
//! steps = 100
//!
//! [params.power_law]
//! ion_count = 8
//! j0_hz = 400
//! alpha = 1.1
//! ```
//!
//! Frequencies are given in Hz under keys ending in `_hz` and converted to
//! angular frequencies internally. Every run writes its data files, a
//! deterministic `result.json` (or a single `data.json` in JSON format) and a
//! `summary.json` carrying the input echo, version and runtime.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::chain::{equilibrium_positions, modes_with_lamb_dicke, normal_modes, Direction, ModeSpectrum, TrapParameters};
use crate::constants::{AMU, QUBIT_WAVELENGTH};
use crate::coupling::{powerlaw_fit, spin_spin_matrix, CouplingMatrix, DriveParameters};
use crate::dynamics::{evolve, magnetization, magnetization_series, neel_state, HamiltonianSpec, NeelAlignment, SpinModel};
use crate::entanglement::{log_negativity_2, log_negativity_3, reduce, simulate_tomography};
use crate::io::{to_json_string, Table};
use crate::motion::{
    fock_cpmg_scan, peak_excitation, quantum_cpmg_scan, semiclassical_scan, thermal_excitation, CpmgTiming,
    SemiclassicalParams, SpinMotionParams,
};
use crate::sequences::{
    compensate, cpmg, cpmg_signal, ramsey_contrast, reference_line_noise, sense, simulate_scan, CompensationConfig,
    NoiseComponent, RamseyConfig, RamseyScenario,
};
use crate::stochastics::{
    correlations, fit_heating, fit_lifetime, model_select, simulate_phase_noise, simulate_survival, synthetic_heating,
    CollisionModel, HeatingPoint, PhaseNoise,
};
use crate::{rng, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Chain,
    Couplings,
    Quench,
    Negativity,
    CpmgSense,
    Compensate,
    WavefrontSemiclassical,
    WavefrontQuantum,
    HeatingFit,
    Survival,
    RamseyCorrelations,
}

impl ExperimentKind {
    const ALL: [ExperimentKind; 11] = [
        ExperimentKind::Chain,
        ExperimentKind::Couplings,
        ExperimentKind::Quench,
        ExperimentKind::Negativity,
        ExperimentKind::CpmgSense,
        ExperimentKind::Compensate,
        ExperimentKind::WavefrontSemiclassical,
        ExperimentKind::WavefrontQuantum,
        ExperimentKind::HeatingFit,
        ExperimentKind::Survival,
        ExperimentKind::RamseyCorrelations,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Chain => "chain",
            ExperimentKind::Couplings => "couplings",
            ExperimentKind::Quench => "quench",
            ExperimentKind::Negativity => "negativity",
            ExperimentKind::CpmgSense => "cpmg-sense",
            ExperimentKind::Compensate => "compensate",
            ExperimentKind::WavefrontSemiclassical => "wavefront-semiclassical",
            ExperimentKind::WavefrontQuantum => "wavefront-quantum",
            ExperimentKind::HeatingFit => "heating-fit",
            ExperimentKind::Survival => "survival",
            ExperimentKind::RamseyCorrelations => "ramsey-correlations",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Figure-data bundles. Column layouts:
///
/// - `fig1`: `magnetization.csv` (`t_s, sz_1..sz_8`) of an 8-ion XY quench
///   from the Neel state, and `pair_negativity.csv` (`ion_i, ion_j, ion_k,
///   log_negativity, shots, seed`) at the end time
/// - `fig3`: `heating.csv` (`axial_hz, ion_count, normalized_rate, sigma`)
///   and `heating_fit.csv` (`axial_hz, normalized_rate`)
/// - `fig4c`: `cpmg_scan.csv` (`t0_s, p_up_before, p_up_after, fit_before, fit_after`)
/// - `fig4d`: `ramsey.csv` (`phase_rad, p_up_trigger_comp, p_up_comp_only, p_up_both_off`)
/// - `fig6`: `wavefront.csv` (`t_wait_us, excitation_tilted, excitation_straight`)
/// - `fig8`: `correlations.csv` (`lag_s, correlation, exponential_fit, gaussian_fit`)
/// - `fig11`: `fock_cpmg.csv` (`t_wait_periods, ratio_0.5, ratio_1, ratio_5, ratio_50`)
/// - `fig12`: `thermal_cpmg.csv` (`t_wait_periods, quantum, semiclassical`)
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
pub enum FigureKind {
    Fig1,
    Fig3,
    Fig4c,
    Fig4d,
    Fig6,
    Fig8,
    Fig11,
    Fig12,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad input; one message per offending field.
    Validation(Vec<String>),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(issues) => {
                writeln!(f, "invalid configuration:")?;
                for i in issues {
                    writeln!(f, "  - {i}")?;
                }
                Ok(())
            }
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(vec![format!("params: {e}")])
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Accumulates every problem found in a parameter block.
#[derive(Default)]
struct Issues(Vec<String>);

impl Issues {
    fn push(&mut self, field: &str, msg: impl fmt::Display) {
        self.0.push(format!("params.{field}: {msg}"));
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.push(field, format!("must be positive and finite, got {v}"));
        }
    }

    fn non_negative(&mut self, field: &str, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.push(field, format!("must be non-negative and finite, got {v}"));
        }
    }

    fn finite(&mut self, field: &str, v: f64) {
        if !v.is_finite() {
            self.push(field, format!("must be finite, got {v}"));
        }
    }

    fn unit(&mut self, field: &str, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.push(field, format!("must lie in [0, 1], got {v}"));
        }
    }

    fn at_least(&mut self, field: &str, v: usize, min: usize) {
        if v < min {
            self.push(field, format!("must be at least {min}, got {v}"));
        }
    }

    fn range(&mut self, lo_field: &str, lo: f64, hi_field: &str, hi: f64) {
        self.positive(lo_field, lo);
        self.positive(hi_field, hi);
        if lo > hi {
            self.push(hi_field, format!("must not be below {lo_field}"));
        }
    }

    fn finish(self) -> CliResult<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(self.0))
        }
    }
}

/// A parsed run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub params: toml::Table,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::invalid(format!("config: {e}")))?;
        let mut issues = Vec::new();
        for key in table.keys() {
            if !["kind", "seed", "out", "format", "params"].contains(&key.as_str()) {
                issues.push(format!("{key}: unknown key"));
            }
        }
        let kind = match table.get("kind") {
            None => {
                issues.push("kind: missing".to_string());
                None
            }
            Some(toml::Value::String(s)) => {
                let k = ExperimentKind::parse(s);
                if k.is_none() {
                    let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                    issues.push(format!("kind: unknown experiment `{s}` (expected one of {})", names.join(", ")));
                }
                k
            }
            Some(_) => {
                issues.push("kind: must be a string".to_string());
                None
            }
        };
        let seed = match table.get("seed") {
            None => 0,
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(_) => {
                issues.push("seed: must be a non-negative integer".to_string());
                0
            }
        };
        let out = match table.get("out") {
            None => None,
            Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => {
                issues.push("out: must be a path string".to_string());
                None
            }
        };
        let format = match table.get("format").map(|v| v.as_str()) {
            None => Format::Csv,
            Some(Some("csv")) => Format::Csv,
            Some(Some("json")) => Format::Json,
            Some(_) => {
                issues.push("format: must be \"csv\" or \"json\"".to_string());
                Format::Csv
            }
        };
        let params = match table.get("params") {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => {
                issues.push("params: must be a table".to_string());
                toml::Table::new()
            }
        };
        match kind {
            Some(kind) if issues.is_empty() => Ok(ExperimentConfig {
                kind,
                seed,
                out,
                format,
                params,
            }),
            _ => Err(CliError::Validation(issues)),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(f) = o.format {
            self.format = f;
        }
    }
}

/// Data produced by a run, before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<(String, Table)>,
    pub result: Value,
}

impl RunOutput {
    /// File name and content of every deterministic output.
    pub fn files(&self, format: Format) -> Vec<(String, String)> {
        match format {
            Format::Csv => {
                let mut files: Vec<(String, String)> =
                    self.tables.iter().map(|(n, t)| (format!("{n}.csv"), t.to_csv())).collect();
                files.push(("result.json".into(), to_json_string(&self.result)));
                files
            }
            Format::Json => {
                let tables: serde_json::Map<String, Value> = self
                    .tables
                    .iter()
                    .map(|(n, t)| (n.clone(), json!({ "columns": t.header, "rows": t.rows })))
                    .collect();
                let data = json!({ "tables": tables, "result": self.result });
                vec![("data.json".into(), to_json_string(&data))]
            }
        }
    }
}

fn params<T: DeserializeOwned>(table: &toml::Table) -> CliResult<T> {
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::invalid(format!("params: {}", e.message())))
}

fn angular(hz: f64) -> f64 {
    TAU * hz
}

fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![a];
    }
    (0..points).map(|k| a + (b - a) * k as f64 / (points - 1) as f64).collect()
}

fn shots_option(shots: u64) -> Option<u64> {
    (shots > 0).then_some(shots)
}

fn sub_seed(seed: u64, index: u64) -> u64 {
    rng::stream(seed, index).random()
}

fn default_mass_u() -> f64 {
    40.0
}

fn default_wavelength() -> f64 {
    QUBIT_WAVELENGTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    pub ion_count: usize,
    pub axial_hz: f64,
    pub radial_x_hz: f64,
    pub radial_y_hz: f64,
    #[serde(default = "default_mass_u")]
    pub mass_u: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength_m: f64,
}

impl TrapConfig {
    fn check(&self, prefix: &str, iss: &mut Issues) {
        iss.at_least(&format!("{prefix}ion_count"), self.ion_count, 1);
        iss.positive(&format!("{prefix}axial_hz"), self.axial_hz);
        iss.positive(&format!("{prefix}radial_x_hz"), self.radial_x_hz);
        iss.positive(&format!("{prefix}radial_y_hz"), self.radial_y_hz);
        iss.positive(&format!("{prefix}mass_u"), self.mass_u);
        iss.positive(&format!("{prefix}wavelength_m"), self.wavelength_m);
    }

    fn trap(&self) -> TrapParameters {
        TrapParameters {
            omega_x: angular(self.radial_x_hz),
            omega_y: angular(self.radial_y_hz),
            omega_z: angular(self.axial_hz),
            ion_mass: self.mass_u * AMU,
            ion_count: self.ion_count,
            laser_wavelength: self.wavelength_m,
        }
    }
}

fn run_chain(table: &toml::Table) -> CliResult<RunOutput> {
    let p: TrapConfig = params(table)?;
    let mut iss = Issues::default();
    p.check("", &mut iss);
    iss.finish()?;
    let trap = p.trap();
    let pos = equilibrium_positions(&trap)?;
    let mut positions = Table::new(["ion", "z_um"]);
    for (i, z) in pos.as_slice().iter().enumerate() {
        positions.push(vec![(i + 1) as f64, z * 1e6]);
    }
    let mut tables = vec![("positions".to_string(), positions)];
    let mut modes = serde_json::Map::new();
    for (name, dir) in [
        ("axial", Direction::Axial),
        ("radial_x", Direction::RadialX),
        ("radial_y", Direction::RadialY),
    ] {
        let set = normal_modes(&trap, &pos, dir)?;
        let hz: Vec<f64> = set.frequencies.iter().map(|w| w / TAU).collect();
        modes.insert(
            name.to_string(),
            json!({ "lowest_hz": hz.first(), "highest_hz": hz.last() }),
        );
        tables.push((format!("modes_{name}"), set.to_table()));
    }
    Ok(RunOutput {
        tables,
        result: json!({
            "ion_count": p.ion_count,
            "span_um": pos.span() * 1e6,
            "length_scale_um": pos.length_scale() * 1e6,
            "modes": modes,
        }),
    })
}

fn default_directions() -> Vec<Direction> {
    vec![Direction::RadialX]
}

fn one() -> f64 {
    1.0
}

/// Mølmer-Sørensen drive of a chain. The beat note sits `detuning_hz` above
/// the highest mode of the listed directions (the radial COM mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingsConfig {
    pub trap: TrapConfig,
    pub rabi_hz: f64,
    pub detuning_hz: f64,
    #[serde(default)]
    pub field_hz: f64,
    #[serde(default = "default_directions")]
    pub directions: Vec<Direction>,
    /// Fraction of the wavevector along each listed direction.
    #[serde(default = "one")]
    pub k_projection: f64,
}

impl CouplingsConfig {
    fn check(&self, prefix: &str, iss: &mut Issues) {
        self.trap.check(&format!("{prefix}trap."), iss);
        iss.positive(&format!("{prefix}rabi_hz"), self.rabi_hz);
        iss.finite(&format!("{prefix}detuning_hz"), self.detuning_hz);
        iss.finite(&format!("{prefix}field_hz"), self.field_hz);
        iss.finite(&format!("{prefix}k_projection"), self.k_projection);
        if self.directions.is_empty() {
            iss.push(&format!("{prefix}directions"), "at least one direction");
        }
    }

    fn coupling(&self) -> CliResult<CouplingMatrix> {
        let trap = self.trap.trap();
        let pos = equilibrium_positions(&trap)?;
        let k = trap.wavevector() * self.k_projection;
        let spectra = self
            .directions
            .iter()
            .map(|&d| modes_with_lamb_dicke(&trap, &pos, d, k))
            .collect::<crate::Result<Vec<ModeSpectrum>>>()?;
        let top = spectra
            .iter()
            .flat_map(|s| s.frequencies.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        let refs: Vec<&ModeSpectrum> = spectra.iter().collect();
        let drive = DriveParameters::from_beat_note(
            DriveParameters::uniform_rabi(self.trap.ion_count, angular(self.rabi_hz)),
            angular(self.field_hz) * 2.0,
            top + angular(self.detuning_hz),
            &refs,
        );
        Ok(spin_spin_matrix(&refs, &drive)?)
    }
}

fn hz_matrix(c: &CouplingMatrix) -> CouplingMatrix {
    CouplingMatrix {
        j: &c.j / TAU,
        field: c.field / TAU,
    }
}

fn run_couplings(table: &toml::Table) -> CliResult<RunOutput> {
    let p: CouplingsConfig = params(table)?;
    let mut iss = Issues::default();
    p.check("", &mut iss);
    iss.finish()?;
    let c = p.coupling()?;
    let fit = if c.ion_count() >= 4 {
        let f = powerlaw_fit(&c)?;
        json!({ "exponent": f.exponent, "prefactor_hz": f.prefactor / TAU, "residual": f.residual })
    } else {
        Value::Null
    };
    Ok(RunOutput {
        tables: vec![("coupling_hz".to_string(), hz_matrix(&c).to_table())],
        result: json!({
            "max_abs_j_hz": c.max_abs() / TAU,
            "field_hz": c.field / TAU,
            "power_law": fit,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawConfig {
    pub ion_count: usize,
    pub j0_hz: f64,
    pub alpha: f64,
}

fn default_model() -> SpinModel {
    SpinModel::XyEffective
}

fn default_alignment() -> NeelAlignment {
    NeelAlignment::OddUp
}

/// Where the couplings of a spin run come from: exactly one source.
fn spin_hamiltonian(
    model: SpinModel,
    field_hz: f64,
    power_law: &Option<PowerLawConfig>,
    couplings: &Option<CouplingsConfig>,
    iss: &mut Issues,
) -> Option<Box<dyn FnOnce() -> CliResult<HamiltonianSpec>>> {
    iss.finite("field_hz", field_hz);
    match (power_law, couplings) {
        (Some(pl), None) => {
            iss.at_least("power_law.ion_count", pl.ion_count, 1);
            iss.finite("power_law.j0_hz", pl.j0_hz);
            iss.non_negative("power_law.alpha", pl.alpha);
            let pl = pl.clone();
            Some(Box::new(move || {
                let c = CouplingMatrix::power_law(pl.ion_count, angular(pl.j0_hz), pl.alpha, angular(field_hz));
                Ok(HamiltonianSpec::new(c, model))
            }))
        }
        (None, Some(cc)) => {
            cc.check("couplings.", iss);
            let cc = cc.clone();
            Some(Box::new(move || Ok(HamiltonianSpec::new(cc.coupling()?, model))))
        }
        _ => {
            iss.push("power_law", "give exactly one of `power_law` and `couplings`");
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchConfig {
    #[serde(default = "default_model")]
    pub model: SpinModel,
    #[serde(default = "default_alignment")]
    pub alignment: NeelAlignment,
    /// Transverse field of a power-law Ising run.
    #[serde(default)]
    pub field_hz: f64,
    pub power_law: Option<PowerLawConfig>,
    pub couplings: Option<CouplingsConfig>,
    pub t_max_s: f64,
    pub steps: usize,
}

fn run_quench(table: &toml::Table) -> CliResult<RunOutput> {
    let p: QuenchConfig = params(table)?;
    let mut iss = Issues::default();
    let build = spin_hamiltonian(p.model, p.field_hz, &p.power_law, &p.couplings, &mut iss);
    iss.positive("t_max_s", p.t_max_s);
    iss.at_least("steps", p.steps, 1);
    iss.finish()?;
    let h = build.expect("checked")()?;
    let n = h.coupling.ion_count();
    let psi = neel_state(n, p.alignment)?;
    let times = linspace(0.0, p.t_max_s, p.steps + 1);
    let series = magnetization_series(&psi, &h, &times)?;
    let total0: f64 = series.rows[0][1..].iter().sum();
    let drift = series
        .rows
        .iter()
        .map(|r| (r[1..].iter().sum::<f64>() - total0).abs())
        .fold(0.0, f64::max);
    Ok(RunOutput {
        tables: vec![("magnetization".to_string(), series)],
        result: json!({
            "ion_count": n,
            "model": p.model,
            "max_abs_j_hz": h.coupling.max_abs() / TAU,
            "total_magnetization_drift": drift,
        }),
    })
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegativityConfig {
    #[serde(default = "default_model")]
    pub model: SpinModel,
    #[serde(default = "default_alignment")]
    pub alignment: NeelAlignment,
    #[serde(default)]
    pub field_hz: f64,
    pub power_law: Option<PowerLawConfig>,
    pub couplings: Option<CouplingsConfig>,
    pub times_s: Vec<f64>,
    /// Tomography shots per measurement setting; 0 uses the exact reduced state.
    #[serde(default)]
    pub shots: u64,
    #[serde(default = "default_true")]
    pub triplets: bool,
}

/// Log-negativities of adjacent pairs (and triplets) at each time, as rows
/// `t_s, ion_i, ion_j, ion_k, log_negativity, shots, seed`.
fn adjacent_negativities(
    h: &HamiltonianSpec,
    alignment: NeelAlignment,
    times: &[f64],
    shots: Option<u64>,
    triplets: bool,
    seed: u64,
) -> CliResult<Table> {
    let n = h.coupling.ion_count();
    let mut psi = neel_state(n, alignment)?;
    let mut now = 0.0;
    let mut t = Table::new(["t_s", "ion_i", "ion_j", "ion_k", "log_negativity", "shots", "seed"]);
    let mut index = 0u64;
    for &time in times {
        psi = evolve(&psi, h, time - now)?;
        now = time;
        let mut subsets: Vec<Vec<usize>> = (0..n.saturating_sub(1)).map(|i| vec![i, i + 1]).collect();
        if triplets {
            subsets.extend((0..n.saturating_sub(2)).map(|i| vec![i, i + 1, i + 2]));
        }
        for s in subsets {
            let entry_seed = sub_seed(seed, index);
            index += 1;
            let rho = match shots {
                Some(_) => simulate_tomography(&psi, &s, shots, entry_seed)?,
                None => reduce(&psi, &s)?,
            };
            let ln = if s.len() == 2 {
                log_negativity_2(&rho, 1)?
            } else {
                log_negativity_3(&rho)?
            };
            let ion_k = s.get(2).map(|k| k + 1).unwrap_or(0);
            t.push(vec![
                time,
                (s[0] + 1) as f64,
                (s[1] + 1) as f64,
                ion_k as f64,
                ln.value,
                shots.unwrap_or(0) as f64,
                if shots.is_some() { entry_seed as f64 } else { 0.0 },
            ]);
        }
    }
    Ok(t)
}

fn run_negativity(table: &toml::Table, seed: u64) -> CliResult<RunOutput> {
    let p: NegativityConfig = params(table)?;
    let mut iss = Issues::default();
    let build = spin_hamiltonian(p.model, p.field_hz, &p.power_law, &p.couplings, &mut iss);
    if p.times_s.is_empty() {
        iss.push("times_s", "at least one time");
    }
    if p.times_s.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || p.times_s.windows(2).any(|w| w[1] < w[0]) {
        iss.push("times_s", "must be finite, non-negative and ascending");
    }
    iss.finish()?;
    let h = build.expect("checked")()?;
    let t = adjacent_negativities(&h, p.alignment, &p.times_s, shots_option(p.shots), p.triplets, seed)?;
    let entangled = t.rows.iter().filter(|r| r[4] > 0.0).count();
    Ok(RunOutput {
        tables: vec![("log_negativity".to_string(), t.clone())],
        result: json!({
            "ion_count": h.coupling.ion_count(),
            "entries": t.rows.len(),
            "entangled_entries": entangled,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub frequency_hz: f64,
    pub field_microgauss: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

fn reference_components() -> Vec<ComponentConfig> {
    reference_line_noise()
        .iter()
        .map(|c| ComponentConfig {
            frequency_hz: c.frequency,
            field_microgauss: c.field_microgauss(),
            phase_rad: c.phase,
        })
        .collect()
}

fn check_components(cs: &[ComponentConfig], iss: &mut Issues) {
    for (i, c) in cs.iter().enumerate() {
        iss.positive(&format!("components[{i}].frequency_hz"), c.frequency_hz);
        iss.non_negative(&format!("components[{i}].field_microgauss"), c.field_microgauss);
        iss.finite(&format!("components[{i}].phase_rad"), c.phase_rad);
    }
}

fn components(cs: &[ComponentConfig]) -> CliResult<Vec<NoiseComponent>> {
    Ok(cs
        .iter()
        .map(|c| NoiseComponent::from_field(c.frequency_hz, c.field_microgauss, c.phase_rad))
        .collect::<crate::Result<Vec<_>>>()?)
}

fn default_pulses_2() -> usize {
    2
}

fn default_tau() -> f64 {
    0.02
}

fn default_probe() -> f64 {
    50.0
}

fn default_points() -> usize {
    100
}

fn default_shots() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpmgSenseConfig {
    #[serde(default = "reference_components")]
    pub components: Vec<ComponentConfig>,
    #[serde(default = "default_pulses_2")]
    pub pulses: usize,
    #[serde(default = "default_tau")]
    pub tau_s: f64,
    #[serde(default = "default_probe")]
    pub probe_hz: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// 0 gives exact probabilities.
    #[serde(default = "default_shots")]
    pub shots: u64,
    #[serde(default = "one")]
    pub contrast: f64,
}

fn run_cpmg_sense(table: &toml::Table, seed: u64) -> CliResult<RunOutput> {
    let p: CpmgSenseConfig = params(table)?;
    let mut iss = Issues::default();
    check_components(&p.components, &mut iss);
    iss.at_least("pulses", p.pulses, 1);
    iss.positive("tau_s", p.tau_s);
    iss.positive("probe_hz", p.probe_hz);
    iss.at_least("points", p.points, 8);
    iss.unit("contrast", p.contrast);
    iss.finish()?;
    let ambient = components(&p.components)?;
    let seq = cpmg(p.pulses, p.tau_s)?;
    let scan = simulate_scan(&ambient, p.contrast, &seq, p.probe_hz, p.points, shots_option(p.shots), seed)?;
    let fit = sense(&scan, &seq, p.probe_hz)?;
    let mut t = Table::new(["t0_s", "p_up", "fit"]);
    for (t0, pu) in scan.t0.iter().zip(&scan.p_up) {
        t.push(vec![*t0, *pu, cpmg_signal(&[fit.component()], fit.contrast, *t0, &seq)]);
    }
    let mut result = serde_json::to_value(fit).expect("serializable");
    result["amplitude_hz"] = json!(fit.amplitude / TAU);
    result["field_microgauss"] = json!(fit.component().field_microgauss());
    Ok(RunOutput {
        tables: vec![("scan".to_string(), t)],
        result,
    })
}

fn default_targets() -> Vec<f64> {
    vec![50.0, 150.0, 250.0]
}

fn default_rounds() -> usize {
    4
}

fn default_tolerance_hz() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensateConfig {
    #[serde(default = "reference_components")]
    pub components: Vec<ComponentConfig>,
    #[serde(default = "default_targets")]
    pub targets_hz: Vec<f64>,
    #[serde(default = "default_tau")]
    pub tau_s: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_shots")]
    pub shots: u64,
    #[serde(default = "one")]
    pub contrast: f64,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    /// Sensed qubit-shift amplitudes below this are left alone.
    #[serde(default = "default_tolerance_hz")]
    pub tolerance_hz: f64,
    #[serde(default)]
    pub phase_drift_rad: f64,
}

impl CompensateConfig {
    fn check(&self, iss: &mut Issues) {
        check_components(&self.components, iss);
        if self.targets_hz.is_empty() {
            iss.push("targets_hz", "at least one frequency");
        }
        for (i, f) in self.targets_hz.iter().enumerate() {
            iss.positive(&format!("targets_hz[{i}]"), *f);
        }
        iss.positive("tau_s", self.tau_s);
        iss.at_least("points", self.points, 8);
        iss.unit("contrast", self.contrast);
        iss.at_least("max_rounds", self.max_rounds, 1);
        iss.non_negative("tolerance_hz", self.tolerance_hz);
        iss.non_negative("phase_drift_rad", self.phase_drift_rad);
    }

    fn library(&self, seed: u64) -> CompensationConfig {
        CompensationConfig {
            targets: self.targets_hz.clone(),
            tau: self.tau_s,
            points: self.points,
            shots: shots_option(self.shots),
            contrast: self.contrast,
            seed,
            max_rounds: self.max_rounds,
            tolerance: angular(self.tolerance_hz),
            phase_drift: self.phase_drift_rad,
        }
    }
}

fn run_compensate(table: &toml::Table, seed: u64) -> CliResult<RunOutput> {
    let p: CompensateConfig = params(table)?;
    let mut iss = Issues::default();
    p.check(&mut iss);
    iss.finish()?;
    let ambient = components(&p.components)?;
    let report = compensate(&ambient, &p.library(seed))?;
    let mut log = Table::new(["round", "frequency_hz", "pulses", "sensed_amplitude_rad_s", "sensed_phase_rad"]);
    for e in &report.log {
        log.push(vec![
            e.round as f64,
            e.frequency,
            e.pulses as f64,
            e.sensed_amplitude,
            e.sensed_phase,
        ]);
    }
    Ok(RunOutput {
        tables: vec![
            ("compensation".to_string(), report.to_table()),
            ("sense_log".to_string(), log),
        ],
        result: json!({
            "rounds": report.rounds,
            "converged": report.converged,
            "suppression": report.suppression(),
        }),
    })
}

fn default_pulses_20() -> usize {
    20
}

fn default_scan_points() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavefrontSemiclassicalConfig {
    pub trap_hz: f64,
    #[serde(default = "default_pulses_20")]
    pub pulses: usize,
    /// Angle between wavefront and string; alternative to `k_z_per_m`.
    pub tilt_rad: Option<f64>,
    pub k_z_per_m: Option<f64>,
    pub temperature_k: f64,
    #[serde(default = "default_mass_u")]
    pub mass_u: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength_m: f64,
    pub t_wait_min_us: f64,
    pub t_wait_max_us: f64,
    #[serde(default = "default_scan_points")]
    pub points: usize,
}

fn run_wavefront_semiclassical(table: &toml::Table) -> CliResult<RunOutput> {
    let p: WavefrontSemiclassicalConfig = params(table)?;
    let mut iss = Issues::default();
    iss.positive("trap_hz", p.trap_hz);
    iss.at_least("pulses", p.pulses, 1);
    iss.non_negative("temperature_k", p.temperature_k);
    iss.positive("mass_u", p.mass_u);
    iss.positive("wavelength_m", p.wavelength_m);
    iss.range("t_wait_min_us", p.t_wait_min_us, "t_wait_max_us", p.t_wait_max_us);
    iss.at_least("points", p.points, 1);
    let k_z = match (p.tilt_rad, p.k_z_per_m) {
        (Some(a), None) => {
            iss.finite("tilt_rad", a);
            TAU / p.wavelength_m * a.sin().abs()
        }
        (None, Some(k)) => {
            iss.non_negative("k_z_per_m", k);
            k
        }
        _ => {
            iss.push("tilt_rad", "give exactly one of `tilt_rad` and `k_z_per_m`");
            0.0
        }
    };
    iss.finish()?;
    let omega = angular(p.trap_hz);
    let mass = p.mass_u * AMU;
    let sp = SemiclassicalParams {
        omega,
        t_wait: p.t_wait_min_us * 1e-6,
        pulses: p.pulses,
        k_z,
        temperature: p.temperature_k,
        mass,
    };
    let waits: Vec<f64> = linspace(p.t_wait_min_us, p.t_wait_max_us, p.points).iter().map(|t| t * 1e-6).collect();
    let scan = semiclassical_scan(&sp, &waits)?;
    let peak = peak_excitation(p.pulses, omega, k_z, p.temperature_k, mass)?;
    Ok(RunOutput {
        tables: vec![("scan".to_string(), scan)],
        result: json!({ "k_z_per_m": k_z, "peak_excitation": peak, "trap_period_us": 1e6 / p.trap_hz }),
    })
}

fn default_timing() -> CpmgTiming {
    CpmgTiming::Uniform
}

fn default_thermal_tolerance() -> f64 {
    1e-4
}

fn default_leak_limit() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavefrontQuantumConfig {
    pub eta: f64,
    pub rabi_hz: f64,
    pub trap_hz: f64,
    pub nbar: f64,
    /// Defaults to the smallest cutoff accepted for `nbar`.
    pub fock_cutoff: Option<usize>,
    #[serde(default)]
    pub detuning_hz: f64,
    #[serde(default = "default_pulses_20")]
    pub pulses: usize,
    #[serde(default = "default_timing")]
    pub timing: CpmgTiming,
    pub t_wait_min_us: f64,
    pub t_wait_max_us: f64,
    #[serde(default = "default_scan_points")]
    pub points: usize,
    #[serde(default = "default_thermal_tolerance")]
    pub thermal_tolerance: f64,
    #[serde(default = "default_leak_limit")]
    pub leak_limit: f64,
    #[serde(default = "default_mass_u")]
    pub mass_u: f64,
}

fn run_wavefront_quantum(table: &toml::Table) -> CliResult<RunOutput> {
    let p: WavefrontQuantumConfig = params(table)?;
    let mut iss = Issues::default();
    iss.non_negative("eta", p.eta);
    iss.positive("rabi_hz", p.rabi_hz);
    iss.positive("trap_hz", p.trap_hz);
    iss.non_negative("nbar", p.nbar);
    iss.finite("detuning_hz", p.detuning_hz);
    iss.at_least("pulses", p.pulses, 1);
    iss.range("t_wait_min_us", p.t_wait_min_us, "t_wait_max_us", p.t_wait_max_us);
    iss.at_least("points", p.points, 1);
    iss.positive("thermal_tolerance", p.thermal_tolerance);
    iss.positive("leak_limit", p.leak_limit);
    iss.positive("mass_u", p.mass_u);
    let min_cutoff = if p.nbar >= 0.0 { SpinMotionParams::minimum_cutoff(p.nbar) } else { 0 };
    let cutoff = p.fock_cutoff.unwrap_or(min_cutoff);
    iss.at_least("fock_cutoff", cutoff, min_cutoff);
    iss.finish()?;
    let mut sp = SpinMotionParams::new(p.eta, angular(p.rabi_hz), angular(p.trap_hz), p.nbar, cutoff);
    sp.detuning = angular(p.detuning_hz);
    sp.thermal_tolerance = p.thermal_tolerance;
    sp.leak_limit = p.leak_limit;
    sp.mass = p.mass_u * AMU;
    let waits: Vec<f64> = linspace(p.t_wait_min_us, p.t_wait_max_us, p.points).iter().map(|t| t * 1e-6).collect();
    let q = quantum_cpmg_scan(&sp, p.pulses, p.timing, &waits)?;
    let mut t = Table::new(["t_wait_us", "excitation", "semiclassical"]);
    for (tw, e) in q.t_wait.iter().zip(&q.excitation) {
        let s = thermal_excitation(&SemiclassicalParams::matching(&sp, p.pulses, *tw))?;
        t.push(vec![tw * 1e6, *e, s]);
    }
    Ok(RunOutput {
        tables: vec![("scan".to_string(), t)],
        result: json!({
            "fock_cutoff": cutoff,
            "fock_states": q.fock_states,
            "retained_weight": q.retained_weight,
            "leak": q.leak,
            "norm_error": q.norm_error,
            "pi_time_us": sp.pi_time() * 1e6,
            "trap_period_us": sp.trap_period() * 1e6,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingRow {
    pub axial_hz: f64,
    pub ion_count: usize,
    /// Quanta per second.
    pub rate: f64,
    pub sigma: f64,
}

/// Power law `rate / N = rate_per_ion * (f / reference_hz)^(-exponent)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticHeatingConfig {
    pub axial_hz: Vec<f64>,
    pub ion_counts: Vec<usize>,
    pub reference_hz: f64,
    pub rate_per_ion: f64,
    pub exponent: f64,
    #[serde(default)]
    pub relative_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingFitConfig {
    #[serde(default)]
    pub points: Vec<HeatingRow>,
    pub synthetic: Option<SyntheticHeatingConfig>,
}

fn heating_points(p: &HeatingFitConfig, seed: u64) -> CliResult<Vec<HeatingPoint>> {
    let mut iss = Issues::default();
    for (i, r) in p.points.iter().enumerate() {
        iss.positive(&format!("points[{i}].axial_hz"), r.axial_hz);
        iss.at_least(&format!("points[{i}].ion_count"), r.ion_count, 1);
        iss.positive(&format!("points[{i}].rate"), r.rate);
        iss.positive(&format!("points[{i}].sigma"), r.sigma);
    }
    if let Some(s) = &p.synthetic {
        for (i, f) in s.axial_hz.iter().enumerate() {
            iss.positive(&format!("synthetic.axial_hz[{i}]"), *f);
        }
        if s.ion_counts.is_empty() || s.ion_counts.contains(&0) {
            iss.push("synthetic.ion_counts", "at least one count, all positive");
        }
        iss.positive("synthetic.reference_hz", s.reference_hz);
        iss.positive("synthetic.rate_per_ion", s.rate_per_ion);
        iss.finite("synthetic.exponent", s.exponent);
        iss.non_negative("synthetic.relative_noise", s.relative_noise);
    }
    if p.points.is_empty() == p.synthetic.is_none() {
        iss.push("points", "give exactly one of `points` and `synthetic`");
    }
    iss.finish()?;
    Ok(match &p.synthetic {
        Some(s) => {
            let omegas: Vec<f64> = s.axial_hz.iter().map(|f| angular(*f)).collect();
            let prefactor = s.rate_per_ion * angular(s.reference_hz).powf(s.exponent);
            synthetic_heating(&omegas, &s.ion_counts, prefactor, s.exponent, s.relative_noise, seed)
        }
        None => p
            .points
            .iter()
            .map(|r| HeatingPoint {
                omega: angular(r.axial_hz),
                ion_count: r.ion_count,
                rate: r.rate,
                sigma: r.sigma,
            })
            .collect(),
    })
}

fn heating_table(data: &[HeatingPoint]) -> Table {
    let mut t = Table::new(["axial_hz", "ion_count", "normalized_rate", "sigma"]);
    for d in data {
        let n = d.ion_count as f64;
        t.push(vec![d.omega / TAU, n, d.rate / n, d.sigma / n]);
    }
    t
}

fn run_heating_fit(table: &toml::Table, seed: u64) -> CliResult<RunOutput> {
    let p: HeatingFitConfig = params(table)?;
    let data = heating_points(&p, seed)?;
    let fit = fit_heating(&data)?;
    Ok(RunOutput {
        tables: vec![("heating".to_string(), heating_table(&data))],
        result: json!({
            "exponent": fit.exponent,
            "exponent_sigma": fit.exponent_sigma,
            "prefactor_rad_s": fit.prefactor,
            "chi2": fit.chi2,
        }),
    })
}

fn default_survival_points() -> usize {
    50
}

fn default_trials() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalConfig {
    /// Mean time to melting, s.
    pub lifetime_s: f64,
    pub horizon_s: f64,
    #[serde(default = "default_survival_points")]
    pub points: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn run_survival(table: &toml::Table, seed: u64) -> CliResult<RunOutput> {
    let p: SurvivalConfig = params(table)?;
    let mut iss = Issues::default();
    iss.positive("lifetime_s", p.lifetime_s);
    iss.positive("horizon_s", p.horizon_s);
    iss.at_least("points", p.points, 2);
    iss.at_least("trials", p.trials, 100);
    iss.finish()?;
    let model = CollisionModel {
        melt_rate: 1.0 / p.lifetime_s,
        soft_collision_rate: 0.0,
        dark_ion_rate: 0.0,
    };
    let curve = simulate_survival(&model, p.horizon_s, p.points, p.trials, seed)?;
    let fit = fit_lifetime(&curve)?;
    Ok(RunOutput {
        tables: vec![("survival".to_string(), curve.to_table())],
        result: json!({ "lifetime_s": fit.tau, "lifetime_sigma_s": fit.tau_sigma, "trials": p.trials }),
    })
}

fn default_dt() -> f64 {
    0.01
}

fn default_experiments() -> usize {
    10_000
}

fn default_max_lag() -> usize {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamseyCorrelationsConfig {
    pub noise: PhaseNoise,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_experiments")]
    pub experiments: usize,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
}

fn correlation_bundle(noise: PhaseNoise, dt: f64, experiments: usize, max_lag: usize, seed: u64) -> CliResult<(Table, Value)> {
    let phases = simulate_phase_noise(noise, dt, experiments, seed)?;
    let cs = correlations(&phases, dt, max_lag)?;
    let sel = model_select(&cs)?;
    let curve = |fit: Option<crate::stochastics::DecayFit>, l: f64, gauss: bool| -> f64 {
        match fit {
            Some(f) if gauss => f.amplitude * (-(l / f.scale).powi(2)).exp(),
            Some(f) => f.amplitude * (-l / f.scale).exp(),
            None => f64::NAN,
        }
    };
    let mut t = Table::new(["lag_s", "correlation", "exponential_fit", "gaussian_fit"]);
    for (l, c) in cs.lag.iter().zip(&cs.value) {
        t.push(vec![*l, *c, curve(sel.exponential, *l, false), curve(sel.gaussian, *l, true)]);
    }
    let result = json!({ "selection": sel, "scale_s": sel.scale(), "pairs_at_max_lag": cs.pairs.last() });
    Ok((t, result))
}

fn run_ramsey_correlations(table: &toml::Table, seed: u64) -> CliResult<RunOutput> {
    let p: RamseyCorrelationsConfig = params(table)?;
    let mut iss = Issues::default();
    match p.noise {
        PhaseNoise::RandomWalk { diffusion } => iss.non_negative("noise.diffusion", diffusion),
        PhaseNoise::SlowDrift { rms, correlation_time } => {
            iss.non_negative("noise.rms", rms);
            iss.positive("noise.correlation_time", correlation_time);
        }
        PhaseNoise::WhiteFrequency { rms } => iss.non_negative("noise.rms", rms),
    }
    iss.positive("dt_s", p.dt_s);
    iss.at_least("max_lag", p.max_lag, 9);
    iss.at_least("experiments", p.experiments, p.max_lag + 1);
    iss.finish()?;
    let (t, result) = correlation_bundle(p.noise, p.dt_s, p.experiments, p.max_lag, seed)?;
    Ok(RunOutput {
        tables: vec![("correlations".to_string(), t)],
        result,
    })
}

/// Execute one experiment; nothing is written.
pub fn execute(config: &ExperimentConfig) -> CliResult<RunOutput> {
    let p = &config.params;
    let seed = config.seed;
    match config.kind {
        ExperimentKind::Chain => run_chain(p),
        ExperimentKind::Couplings => run_couplings(p),
        ExperimentKind::Quench => run_quench(p),
        ExperimentKind::Negativity => run_negativity(p, seed),
        ExperimentKind::CpmgSense => run_cpmg_sense(p, seed),
        ExperimentKind::Compensate => run_compensate(p, seed),
        ExperimentKind::WavefrontSemiclassical => run_wavefront_semiclassical(p),
        ExperimentKind::WavefrontQuantum => run_wavefront_quantum(p),
        ExperimentKind::HeatingFit => run_heating_fit(p, seed),
        ExperimentKind::Survival => run_survival(p, seed),
        ExperimentKind::RamseyCorrelations => run_ramsey_correlations(p, seed),
    }
}

/// Write every file into `dir` through temporary names, renaming only after
/// all of them were written.
pub fn write_files(dir: &Path, files: &[(String, String)]) -> CliResult<Vec<PathBuf>> {
    let io = |e: std::io::Error, p: &Path| CliError::Io(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let mut staged = Vec::new();
    for (name, content) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, content) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            let _ = fs::remove_file(&tmp);
            return Err(io(e, &tmp));
        }
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::new();
    for (tmp, dest) in staged {
        fs::rename(&tmp, &dest).map_err(|e| io(e, &dest))?;
        written.push(dest);
    }
    Ok(written)
}

fn summary(input: Value, files: &[(String, String)], started: Instant) -> String {
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    to_json_string(&json!({
        "input": input,
        "versions": {
            "ionchain": env!("CARGO_PKG_VERSION"),
            "rustc_target_os": std::env::consts::OS,
            "rustc_target_arch": std::env::consts::ARCH,
        },
        "files": names,
        "runtime_s": started.elapsed().as_secs_f64(),
    }))
}

/// Run a configuration and write its outputs under `config.out`.
pub fn run(config: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let started = Instant::now();
    let out = config
        .out
        .clone()
        .ok_or_else(|| CliError::invalid("out: no output directory in the config or on the command line"))?;
    let output = execute(config)?;
    let mut files = output.files(config.format);
    let input = serde_json::to_value(config).expect("serializable config");
    let s = summary(input, &files, started);
    files.push(("summary.json".into(), s));
    write_files(&out, &files)
}

/// Emit the data behind one figure into `out`.
pub fn run_figure(kind: FigureKind, seed: u64, format: Format, out: &Path) -> CliResult<Vec<PathBuf>> {
    let started = Instant::now();
    let output = emit_figure_data(kind, seed)?;
    let mut files = output.files(format);
    let input = json!({ "figure": kind, "seed": seed, "format": format, "out": out });
    let s = summary(input, &files, started);
    files.push(("summary.json".into(), s));
    write_files(out, &files)
}

/// Build the data of a figure analog; see [`FigureKind`] for the columns.
pub fn emit_figure_data(kind: FigureKind, seed: u64) -> CliResult<RunOutput> {
    match kind {
        FigureKind::Fig1 => figure_quench(seed),
        FigureKind::Fig3 => figure_heating(seed),
        FigureKind::Fig4c => figure_cpmg_scan(seed),
        FigureKind::Fig4d => figure_ramsey(seed),
        FigureKind::Fig6 => figure_wavefront(),
        FigureKind::Fig8 => figure_correlations(seed),
        FigureKind::Fig11 => figure_fock_cpmg(),
        FigureKind::Fig12 => figure_thermal_cpmg(),
    }
}

/// Eight-ion chain driven on the blue side of the radial COM mode.
fn figure_chain_couplings() -> CouplingsConfig {
    CouplingsConfig {
        trap: TrapConfig {
            ion_count: 8,
            axial_hz: 220e3,
            radial_x_hz: 2.93e6,
            radial_y_hz: 2.89e6,
            mass_u: 40.0,
            wavelength_m: QUBIT_WAVELENGTH,
        },
        rabi_hz: 60e3,
        detuning_hz: 25e3,
        field_hz: 0.0,
        directions: vec![Direction::RadialX],
        k_projection: 1.0,
    }
}

fn figure_quench(seed: u64) -> CliResult<RunOutput> {
    let c = figure_chain_couplings().coupling()?;
    let h = HamiltonianSpec::new(c, SpinModel::XyEffective);
    let j_max = h.coupling.max_abs();
    let t_end = 3.0 / j_max;
    let times = linspace(0.0, 4.0 * t_end, 201);
    let psi = neel_state(8, NeelAlignment::OddUp)?;
    let series = magnetization_series(&psi, &h, &times)?;
    let ln = adjacent_negativities(&h, NeelAlignment::OddUp, &[t_end], Some(500), false, seed)?;
    let mut pairs = Table::new(["ion_i", "ion_j", "ion_k", "log_negativity", "shots", "seed"]);
    for r in &ln.rows {
        pairs.push(r[1..].to_vec());
    }
    let end = evolve(&psi, &h, t_end)?;
    Ok(RunOutput {
        tables: vec![("magnetization".into(), series), ("pair_negativity".into(), pairs)],
        result: json!({
            "max_abs_j_hz": j_max / TAU,
            "negativity_time_s": t_end,
            "magnetization_at_negativity_time": magnetization(&end),
        }),
    })
}

fn figure_heating(seed: u64) -> CliResult<RunOutput> {
    let freqs = [60e3, 80e3, 100e3, 120e3, 150e3, 180e3, 220e3];
    let omegas: Vec<f64> = freqs.iter().map(|f| angular(*f)).collect();
    let prefactor = 10.0 * angular(100e3).powf(1.9);
    let data = synthetic_heating(&omegas, &[1, 28, 50], prefactor, 1.9, 0.15, seed);
    let fit = fit_heating(&data)?;
    let mut line = Table::new(["axial_hz", "normalized_rate"]);
    for f in linspace(freqs[0], freqs[freqs.len() - 1], 50) {
        line.push(vec![f, fit.prefactor * angular(f).powf(-fit.exponent)]);
    }
    Ok(RunOutput {
        tables: vec![("heating".into(), heating_table(&data)), ("heating_fit".into(), line)],
        result: json!({ "exponent": fit.exponent, "exponent_sigma": fit.exponent_sigma }),
    })
}

fn figure_cpmg_scan(seed: u64) -> CliResult<RunOutput> {
    let ambient = reference_line_noise();
    let report = compensate(
        &ambient,
        &CompensationConfig {
            seed: sub_seed(seed, 0),
            ..CompensationConfig::default()
        },
    )?;
    let seq = cpmg(2, 0.02)?;
    let before = simulate_scan(&ambient, 1.0, &seq, 50.0, 100, Some(100), sub_seed(seed, 1))?;
    let after = simulate_scan(&report.residual, 1.0, &seq, 50.0, 100, Some(100), sub_seed(seed, 2))?;
    let fit_before = sense(&before, &seq, 50.0)?;
    let fit_after = sense(&after, &seq, 50.0).ok();
    let mut t = Table::new(["t0_s", "p_up_before", "p_up_after", "fit_before", "fit_after"]);
    for i in 0..before.t0.len() {
        let t0 = before.t0[i];
        let fb = cpmg_signal(&[fit_before.component()], fit_before.contrast, t0, &seq);
        let fa = fit_after
            .map(|f| cpmg_signal(&[f.component()], f.contrast, t0, &seq))
            .unwrap_or(0.5);
        t.push(vec![t0, before.p_up[i], after.p_up[i], fb, fa]);
    }
    Ok(RunOutput {
        tables: vec![("cpmg_scan".into(), t)],
        result: json!({
            "amplitude_before_hz": fit_before.amplitude / TAU,
            "amplitude_after_hz": fit_after.map(|f| f.amplitude / TAU),
            "suppression": report.suppression(),
        }),
    })
}

fn figure_ramsey(seed: u64) -> CliResult<RunOutput> {
    let ambient = reference_line_noise();
    let report = compensate(
        &ambient,
        &CompensationConfig {
            seed: sub_seed(seed, 0),
            ..CompensationConfig::default()
        },
    )?;
    let mut results = Vec::new();
    for (k, scenario) in [RamseyScenario::TriggerOnCompOn, RamseyScenario::CompOnly, RamseyScenario::BothOff]
        .into_iter()
        .enumerate()
    {
        let cfg = RamseyConfig {
            seed: sub_seed(seed, 1 + k as u64),
            ..RamseyConfig::default()
        };
        results.push(ramsey_contrast(&ambient, &report.waveform, scenario, &cfg)?);
    }
    let mut t = Table::new(["phase_rad", "p_up_trigger_comp", "p_up_comp_only", "p_up_both_off"]);
    for i in 0..results[0].phases.len() {
        t.push(vec![results[0].phases[i], results[0].p_up[i], results[1].p_up[i], results[2].p_up[i]]);
    }
    let contrasts: Vec<Value> = results
        .iter()
        .map(|r| json!({ "scenario": r.scenario, "contrast": r.contrast, "contrast_sigma": r.contrast_sigma }))
        .collect();
    Ok(RunOutput {
        tables: vec![("ramsey".into(), t)],
        result: json!({ "contrasts": contrasts }),
    })
}

fn figure_wavefront() -> CliResult<RunOutput> {
    let omega = angular(112e3);
    let tilted = SemiclassicalParams {
        omega,
        t_wait: 1e-6,
        pulses: 20,
        k_z: TAU / QUBIT_WAVELENGTH * 4.8e-3f64.sin(),
        temperature: 4.6e-3,
        mass: 40.0 * AMU,
    };
    let straight = SemiclassicalParams { k_z: 0.0, ..tilted };
    let period = TAU / omega;
    let waits = linspace(0.25 * period, 3.25 * period, 601);
    let a = semiclassical_scan(&tilted, &waits)?;
    let b = semiclassical_scan(&straight, &waits)?;
    let mut t = Table::new(["t_wait_us", "excitation_tilted", "excitation_straight"]);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        t.push(vec![ra[0], ra[1], rb[1]]);
    }
    Ok(RunOutput {
        tables: vec![("wavefront".into(), t)],
        result: json!({
            "tilt_rad": 4.8e-3,
            "peak_excitation": peak_excitation(20, omega, tilted.k_z, tilted.temperature, tilted.mass)?,
        }),
    })
}

fn figure_correlations(seed: u64) -> CliResult<RunOutput> {
    let noise = PhaseNoise::SlowDrift {
        rms: 2f64.sqrt() / 0.3,
        correlation_time: 2.0,
    };
    let (t, result) = correlation_bundle(noise, 0.01, 10_000, 60, seed)?;
    Ok(RunOutput {
        tables: vec![("correlations".into(), t)],
        result,
    })
}

fn figure_fock_cpmg() -> CliResult<RunOutput> {
    let ratios = [0.5, 1.0, 5.0, 50.0];
    let omega = TAU;
    let periods = linspace(1.0, 3.0, 401);
    let waits: Vec<f64> = periods.iter().map(|x| x * TAU / omega).collect();
    let mut curves = Vec::new();
    for r in ratios {
        let p = SpinMotionParams::new(0.01, r * omega, omega, 0.0, 120);
        curves.push(fock_cpmg_scan(&p, 50, 10, CpmgTiming::Uniform, &waits)?);
    }
    let mut t = Table::new(["t_wait_periods", "ratio_0.5", "ratio_1", "ratio_5", "ratio_50"]);
    for (i, x) in periods.iter().enumerate() {
        t.push(vec![*x, curves[0][i], curves[1][i], curves[2][i], curves[3][i]]);
    }
    Ok(RunOutput {
        tables: vec![("fock_cpmg".into(), t)],
        result: json!({ "fock_state": 50, "eta": 0.01, "pulses": 10, "rabi_over_trap": ratios }),
    })
}

fn figure_thermal_cpmg() -> CliResult<RunOutput> {
    let omega = angular(112e3);
    let nbar = 100.0;
    let eta = (-(1.0f64 - 2.0 * 0.3).ln() / (2.0 * (2.0 * nbar + 1.0) * 441.0)).sqrt();
    let p = SpinMotionParams::new(eta, 5.0 * omega, omega, nbar, 700);
    let periods = linspace(0.5, 2.0, 121);
    let waits: Vec<f64> = periods.iter().map(|x| x * TAU / omega).collect();
    let q = quantum_cpmg_scan(&p, 20, CpmgTiming::Uniform, &waits)?;
    let mut t = Table::new(["t_wait_periods", "quantum", "semiclassical"]);
    for (i, x) in periods.iter().enumerate() {
        let s = thermal_excitation(&SemiclassicalParams::matching(&p, 20, waits[i]))?;
        t.push(vec![*x, q.excitation[i], s]);
    }
    Ok(RunOutput {
        tables: vec![("thermal_cpmg".into(), t)],
        result: json!({
            "eta": eta,
            "nbar": nbar,
            "rabi_over_trap": 5.0,
            "retained_weight": q.retained_weight,
            "leak": q.leak,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_config_problem_is_reported() {
        let err = ExperimentConfig::parse("kind = \"nope\"\nseed = -1\nformat = \"xml\"\nextra = 1\n").unwrap_err();
        let CliError::Validation(issues) = err else { panic!("expected validation error") };
        assert_eq!(issues.len(), 4, "{issues:?}");
    }

    #[test]
    fn every_parameter_problem_is_reported() {
        let cfg = ExperimentConfig::parse(
            "kind = \"chain\"\n[params]\nion_count = 0\naxial_hz = -1.0\nradial_x_hz = 0.0\nradial_y_hz = 1e6\n",
        )
        .unwrap();
        let CliError::Validation(issues) = execute(&cfg).unwrap_err() else { panic!() };
        assert_eq!(issues.len(), 3, "{issues:?}");
        assert!(issues.iter().any(|i| i.contains("params.axial_hz")));
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let cfg = ExperimentConfig::parse("kind = \"survival\"\n[params]\nlifetime_s = 1.0\nhorizon_s = 2.0\nbogus = 3\n")
            .unwrap();
        assert_eq!(execute(&cfg).unwrap_err().exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ExperimentConfig::parse("kind = \"chain\"\nseed = 3\nformat = \"csv\"\n").unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some("x".into()),
            format: Some(Format::Json),
        });
        assert_eq!((cfg.seed, cfg.format, cfg.out.as_deref()), (9, Format::Json, Some(Path::new("x"))));
    }

    #[test]
    fn numerical_failures_map_to_exit_three() {
        let e: CliError = Error::NoModulation.into();
        assert_eq!(e.exit_code(), EXIT_NUMERICAL);
        let e: CliError = Error::invalid("x", "bad").into();
        assert_eq!(e.exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn json_format_bundles_tables() {
        let out = RunOutput {
            tables: vec![("a".into(), {
                let mut t = Table::new(["x"]);
                t.push(vec![1.0 / 3.0]);
                t
            })],
            result: json!({ "k": 1 }),
        };
        let files = out.files(Format::Json);
        assert_eq!(files.len(), 1);
        let v: Value = serde_json::from_str(&files[0].1).unwrap();
        assert_eq!(v["tables"]["a"]["rows"][0][0], json!(0.333333333333));
        assert_eq!(out.files(Format::Csv).len(), 2);
    }
}
