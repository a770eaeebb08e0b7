//! Experiment configuration: a TOML tree layered over preset defaults, with
//! `--set` overrides applied before anything is validated.

use std::f64::consts::PI;
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use jdpd_core::circuit::{DeviceParams, MutualMatrix, ResonatorParams};
use jdpd_core::classical::ClassicalConfig;
use jdpd_core::protocol::ProtocolConfig;
use jdpd_core::quantum::{EngineConfig, Observable};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Potential,
    Spectroscopy,
    Protocol,
    Transfer,
    SweepAmplitude,
    SweepFliptime,
    Calibrate,
    Multiflip,
    AsymmetryMap,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Potential => "potential",
            Self::Spectroscopy => "spectroscopy",
            Self::Protocol => "protocol",
            Self::Transfer => "transfer",
            Self::SweepAmplitude => "sweep-amplitude",
            Self::SweepFliptime => "sweep-fliptime",
            Self::Calibrate => "calibrate",
            Self::Multiflip => "multiflip",
            Self::AsymmetryMap => "asymmetry-map",
        }
    }
}

/// Numerical resolution defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Coarse grids and 0.1 ps steps.
    #[default]
    Desk,
    /// Finer grids and 0.02 ps steps around the switch.
    Paper,
}

impl Preset {
    pub fn engine(self) -> EngineConfig {
        match self {
            Self::Desk => EngineConfig::desk(),
            Self::Paper => EngineConfig::paper(),
        }
    }

    pub fn classical(self) -> ClassicalConfig {
        match self {
            Self::Desk => ClassicalConfig::default(),
            Self::Paper => ClassicalConfig { dt: 0.02, ..ClassicalConfig::default() },
        }
    }
}

/// Evenly spaced values, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Range {
    pub fn new(start: f64, stop: f64, points: usize) -> Self {
        Self { start, stop, points }
    }

    pub fn values(&self) -> Vec<f64> {
        jdpd_core::detection::linspace(self.start, self.stop, self.points)
    }
}

/// Sweep axes. Unset axes fall back to per-experiment defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Drive phases for `protocol` and `multiflip`, rad.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    /// Add an undriven run to `protocol`.
    pub undriven: bool,
    /// Drive phases for `transfer`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_range: Option<Range>,
    /// `amplitude_n` values for `sweep-amplitude` and `transfer`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<Vec<f64>>,
    /// Drive frequencies for `transfer`, GHz.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drive_freq: Option<Vec<f64>>,
    /// t_flip in drive periods for `sweep-fliptime`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fliptime: Option<Vec<f64>>,
    /// Phase samples for `potential`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Range>,
    /// phi+ values for `potential`, `spectroscopy` and `asymmetry-map`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_plus: Option<Range>,
    /// phi- values for `spectroscopy` and `asymmetry-map`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_minus: Option<Range>,
    /// I_c- / I_c+ values for `asymmetry-map`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    /// I_c+ for `asymmetry-map`, uA. Defaults to the device's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ic_plus: Option<f64>,
}

impl SweepConfig {
    pub fn theta_or(&self, default: &[f64]) -> Vec<f64> {
        self.theta.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn theta_range_or_default(&self) -> Vec<f64> {
        self.theta_range.unwrap_or(Range::new(0.0, 2.0 * PI, 25)).values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory. `--out` wins over it; without either, `JDPD_OUT_DIR`
    /// or else `out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    pub format: Format,
    /// Trajectory sampling interval, ps.
    pub stride: f64,
    pub observables: Vec<Observable>,
    /// Interval of |psi|^2 snapshots, ps. None disables them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            format: Format::Csv,
            stride: 1.0,
            observables: vec![Observable::Phi, Observable::PLeft, Observable::PRight, Observable::Energy],
            snapshot_stride: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub preset: Preset,
    pub device: DeviceParams<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resonator: Option<ResonatorParams<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutuals: Option<MutualMatrix<f64>>,
    pub protocol: ProtocolConfig,
    pub engine: EngineConfig,
    pub classical: ClassicalConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

/// Everything but the experiment, as the tree user input is merged into.
#[derive(Serialize)]
struct Defaults {
    preset: Preset,
    device: DeviceParams<f64>,
    protocol: ProtocolConfig,
    engine: EngineConfig,
    classical: ClassicalConfig,
    sweep: SweepConfig,
    output: OutputConfig,
}

fn defaults(preset: Preset) -> Result<Table, CliError> {
    let d = Defaults {
        preset,
        device: DeviceParams::reference(),
        protocol: ProtocolConfig::default(),
        engine: preset.engine(),
        classical: preset.classical(),
        sweep: SweepConfig::default(),
        output: OutputConfig::default(),
    };
    Table::try_from(d).map_err(|e| CliError::Internal(format!("serializing defaults: {e}")))
}

/// Recursive merge: tables merge key by key, anything else replaces.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `key.path=value`. The value is read as a TOML literal, falling
/// back to a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Config(format!("override `{s}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override `{s}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()));
    Ok((path, value))
}

fn set_path(tree: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut t = tree;
    for (i, p) in parents.iter().enumerate() {
        let entry = t.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{}` is not a table", path[..=i].join("."))))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

fn preset_of(v: &Value) -> Result<Preset, CliError> {
    Preset::deserialize(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))
}

/// Resolves user text, overrides and preset into a validated config.
pub fn resolve(text: &str, overrides: &[String], preset: Option<Preset>) -> Result<ExperimentConfig, CliError> {
    let user: Table = toml::from_str(text).map_err(|e| CliError::Config(format!("parse error: {e}")))?;
    let sets = overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;

    let from_sets = sets.iter().rev().find(|(p, _)| p.len() == 1 && p[0] == "preset").map(|(_, v)| v);
    let preset = match (preset, from_sets, user.get("preset")) {
        (Some(p), _, _) => p,
        (None, Some(v), _) | (None, None, Some(v)) => preset_of(v)?,
        (None, None, None) => Preset::default(),
    };

    let mut tree = defaults(preset)?;
    merge(&mut tree, user);
    for (path, value) in sets {
        set_path(&mut tree, &path, value)?;
    }
    tree.insert("preset".into(), Value::try_from(preset).expect("preset serializes"));

    let cfg: ExperimentConfig = serde_path_to_error::deserialize(Value::Table(tree)).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn load(path: &Path, overrides: &[String], preset: Option<Preset>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    resolve(&text, overrides, preset)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.device.validate()?;
    cfg.protocol.validate()?;
    cfg.engine.validate()?;
    if let Some(r) = &cfg.resonator {
        r.validate()?;
    }
    if !(cfg.output.stride > 0.0) {
        return Err(CliError::Config("output.stride must be positive".into()));
    }
    if let Some(s) = cfg.output.snapshot_stride {
        if !(s > 0.0) {
            return Err(CliError::Config("output.snapshot_stride must be positive".into()));
        }
    }
    if !(cfg.classical.dt > 0.0 && cfg.classical.gamma >= 0.0) {
        return Err(CliError::Config("classical.dt must be positive and classical.gamma non-negative".into()));
    }
    Ok(())
}

/// TOML echo of a resolved config.
pub fn echo(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "experiment = \"protocol\"\n";

    #[test]
    fn defaults_fill_everything() {
        let c = resolve(MIN, &[], None).unwrap();
        assert_eq!(c.preset, Preset::Desk);
        assert_eq!(c.engine, EngineConfig::desk());
        assert_eq!(c.protocol, ProtocolConfig::default());
        assert_eq!(c.device, DeviceParams::reference());
    }

    #[test]
    fn preset_flag_beats_file() {
        let text = format!("{MIN}preset = \"desk\"\n");
        let c = resolve(&text, &[], Some(Preset::Paper)).unwrap();
        assert_eq!(c.engine, EngineConfig::paper());
        let c = resolve(&text, &["preset=paper".into()], None).unwrap();
        assert_eq!(c.engine, EngineConfig::paper());
    }

    #[test]
    fn user_values_override_preset() {
        let text = format!("{MIN}[engine]\nn_points = 96\n[engine.switch_grid]\nn_points = 200\n");
        let c = resolve(&text, &[], None).unwrap();
        assert_eq!(c.engine.n_points, 96);
        assert_eq!(c.engine.switch_grid.unwrap().n_points, 200);
        assert_eq!(c.engine.switch_grid.unwrap().phi_max, 6.0);
    }

    #[test]
    fn set_overrides_apply() {
        let c = resolve(MIN, &["protocol.drive_phase=3.14159".into(), "sweep.theta=[0.0, 1.0]".into()], None).unwrap();
        assert_eq!(c.protocol.drive_phase, 3.14159);
        assert_eq!(c.sweep.theta, Some(vec![0.0, 1.0]));
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = resolve(&format!("{MIN}[protocol]\ndrive_fraq = 7.0\n"), &[], None).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("protocol"), "{err}");
        let err = resolve(MIN, &["engine.bogus=1".into()], None).unwrap_err();
        assert!(err.to_string().contains("engine"), "{err}");
    }

    #[test]
    fn invalid_override_fails_like_invalid_file() {
        let a = resolve(MIN, &["protocol.drive_freq=-1".into()], None).unwrap_err();
        let b = resolve(&format!("{MIN}[protocol]\ndrive_freq = -1.0\n"), &[], None).unwrap_err();
        assert_eq!(a.to_string(), b.to_string());
    }

    #[test]
    fn echo_round_trips() {
        let c = resolve(&format!("{MIN}[sweep]\nundriven = true\n"), &["output.snapshot_stride=5.0".into()], None).unwrap();
        let again = resolve(&echo(&c), &[], None).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn range_hits_both_ends() {
        let v = Range::new(-0.92, 0.92, 21).values();
        assert_eq!(v.len(), 21);
        assert_eq!(v[0], -0.92);
        assert_eq!(v[20], 0.92);
        assert_eq!(v[10], 0.0);
    }
}
