//! End-to-end protocol runs, detection error, symmetry calibration and the
//! sweeps built on them.
//!
//! Detection error is the worst-case misassignment over the two nominal
//! phases: `max(p_right(theta = 0), p_left(theta = pi))`.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{derive_energies, DeviceParams, EnergyScales, FluxBias};
use crate::classical::{classical_assignment, ClassicalConfig};
use crate::error::{config, Error, Result};
use crate::potential::{analyze_shape, PotentialCoefficients, PotentialShape, ShapeOptions};
use crate::protocol::{
    make_detection_schedule, make_experimental_schedule, make_multiflip_schedule, EnvelopeKind, ProtocolConfig, Schedule, Stage,
};
use crate::quantum::{EngineConfig, Observable, QuantumEngine, RecordSpec, Trajectory};
use crate::scalar::Real;

/// Which well the state is read out in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assignment {
    L,
    R,
}

impl Assignment {
    /// L iff `p_left >= 0.5`.
    pub fn from_p_left(p_left: f64) -> Self {
        if p_left >= 0.5 {
            Self::L
        } else {
            Self::R
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Self::L => Self::R,
            Self::R => Self::L,
        }
    }
}

/// Schedule family to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sequence {
    /// Single switch centred on the drive.
    #[default]
    Detection,
    /// Measured sequence with the symmetry step and the long switch.
    Experimental,
    /// `n_flips` switches on one tone.
    Multiflip,
}

pub fn build_schedule(cfg: &ProtocolConfig, scales: &EnergyScales<f64>, sequence: Sequence) -> Result<Schedule> {
    match sequence {
        Sequence::Detection => make_detection_schedule(cfg, scales),
        Sequence::Experimental => make_experimental_schedule(cfg, scales),
        Sequence::Multiflip => make_multiflip_schedule(cfg, scales),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub sequence: Sequence,
    /// Recording; the barrier is filled in from the final bias.
    pub record: RecordSpec,
    /// Record every step of the Sense stage and estimate the ringdown
    /// frequency.
    pub ringdown: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { sequence: Sequence::Detection, record: RecordSpec::default(), ringdown: false }
    }
}

/// Convergence figures of one quantum run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub steps: usize,
    pub max_trace_drift: f64,
    pub min_eigenvalue: Option<f64>,
    /// Probability dropped by grid transfers, summed.
    pub transfer_loss: f64,
}

impl From<&Trajectory> for RunDiagnostics {
    fn from(t: &Trajectory) -> Self {
        Self {
            steps: t.steps,
            max_trace_drift: t.max_trace_drift,
            min_eigenvalue: t.min_eigenvalue,
            transfer_loss: t.transfers.iter().map(|g| g.loss).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub p_left_final: f64,
    pub p_right_final: f64,
    pub assigned: Assignment,
    pub traj: Trajectory,
    /// GHz.
    pub ringdown_freq: Option<f64>,
    /// Curvature frequency of the final well the state sits in, GHz.
    pub well_frequency: Option<f64>,
    /// Barrier position at the final bias, rad.
    pub barrier: f64,
    /// (p_left, p_right) at the end of every Sense stage.
    pub per_flip: Vec<(f64, f64)>,
}

impl ProtocolOutcome {
    pub fn diagnostics(&self) -> RunDiagnostics {
        RunDiagnostics::from(&self.traj)
    }

    pub fn per_flip_assignments(&self) -> Vec<Assignment> {
        self.per_flip.iter().map(|p| Assignment::from_p_left(p.0)).collect()
    }
}

fn final_shape<T: Real>(params: &DeviceParams<T>, bias: &FluxBias<f64>) -> Result<PotentialShape<f64>> {
    let coeffs = PotentialCoefficients::from_params(&params.cast::<f64>())?;
    analyze_shape(&coeffs, bias, &ShapeOptions::default())
}

/// Median of 1 / (t_{k+2} - t_k) over the zero crossings of `x - x_last`.
pub fn ringdown_frequency(times: &[f64], x: &[f64]) -> Option<f64> {
    let last = *x.last()?;
    // Below this swing, rad, crossings are rounding noise.
    const MIN_SWING: f64 = 1e-6;
    if x.iter().all(|v| (v - last).abs() < MIN_SWING) {
        return None;
    }
    let mut crossings = Vec::new();
    for k in 1..x.len() {
        let (a, b) = (x[k - 1] - last, x[k] - last);
        if a != 0.0 && b != 0.0 && (a < 0.0) != (b < 0.0) {
            crossings.push(times[k - 1] + (times[k] - times[k - 1]) * a / (a - b));
        } else if a == 0.0 && k > 1 && k < x.len() - 1 {
            crossings.push(times[k - 1]);
        }
    }
    let mut f: Vec<f64> = crossings.windows(3).map(|w| 1.0 / (w[2] - w[0])).filter(|v| v.is_finite()).collect();
    if f.is_empty() {
        return None;
    }
    f.sort_by(f64::total_cmp);
    let m = f.len() / 2;
    Some(if f.len() % 2 == 1 { f[m] } else { 0.5 * (f[m - 1] + f[m]) })
}

pub fn run_protocol<T: Real>(params: &DeviceParams<T>, cfg: &ProtocolConfig, engine_cfg: &EngineConfig) -> Result<ProtocolOutcome> {
    run_protocol_with(params, cfg, engine_cfg, &RunOptions::default())
}

/// Builds the schedule, starts from the ground state at the ready bias,
/// evolves, and reads the wells at t2 about the final-bias barrier.
pub fn run_protocol_with<T: Real>(
    params: &DeviceParams<T>,
    cfg: &ProtocolConfig,
    engine_cfg: &EngineConfig,
    opts: &RunOptions,
) -> Result<ProtocolOutcome> {
    let mut engine = QuantumEngine::new(params, engine_cfg)?;
    let schedule = build_schedule(cfg, &engine.scales, opts.sequence)?;
    let t2 = schedule.markers.t2;
    let (final_bias, _) = schedule.sample(t2)?;
    let shape = final_shape(params, &final_bias)?;
    let barrier = shape.barrier.unwrap_or(0.0);

    let mut record = opts.record.clone();
    record.barrier = barrier;
    let sense = schedule.segments.iter().rev().find(|s| s.stage == Stage::Sense).map(|s| (s.t_start, s.t_end));
    if opts.ringdown {
        record.dense_window = sense;
        if !record.observables.contains(&Observable::Phi) {
            record.observables.push(Observable::Phi);
        }
    }

    let mut state = engine.initial_state(&schedule.segments[0].bias.start())?;
    let traj = engine.evolve(&mut state, &schedule, &record)?;
    let (p_left, p_right) = engine.well_probabilities(&state, barrier)?;

    let phi_end = traj.column(Observable::Phi).and_then(|c| c.last().copied());
    let well_frequency = match (phi_end, shape.minima.is_empty()) {
        (_, true) => None,
        (Some(x), false) => shape.minima.iter().min_by(|a, b| (a.phi - x).abs().total_cmp(&(b.phi - x).abs())),
        (None, false) => shape.minima.iter().find(|m| (m.phi < barrier) == (p_left >= 0.5)).or(shape.minima.first()),
    }
    .map(|m| m.local_frequency);

    let ringdown_freq = match (opts.ringdown, sense, traj.column(Observable::Phi)) {
        (true, Some((a, b)), Some(phi)) => {
            let idx: Vec<usize> = (0..traj.times.len()).filter(|&k| traj.times[k] >= a && traj.times[k] <= b).collect();
            let t: Vec<f64> = idx.iter().map(|&k| traj.times[k]).collect();
            let x: Vec<f64> = idx.iter().map(|&k| phi[k]).collect();
            ringdown_frequency(&t, &x)
        }
        _ => None,
    };

    let mut per_flip: Vec<(f64, f64)> = traj
        .segments
        .iter()
        .filter(|s| s.stage == Stage::Sense && s.t_end < t2 - 1e-12)
        .map(|s| (s.p_left, 1.0 - s.p_left))
        .collect();
    per_flip.push((p_left, p_right));

    Ok(ProtocolOutcome {
        p_left_final: p_left,
        p_right_final: p_right,
        assigned: Assignment::from_p_left(p_left),
        traj,
        ringdown_freq,
        well_frequency,
        barrier,
        per_flip,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// phi- giving an even split of the undriven protocol, rad.
    pub theta_symm: f64,
    pub p_left: f64,
    /// Every (phi-, p_left) evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
    pub diagnostics: Vec<RunDiagnostics>,
}

pub const CALIBRATION_TOLERANCE: f64 = 5e-3;
const CALIBRATION_MAX_ITER: usize = 40;

/// Finds the phi- offset at which the undriven protocol splits evenly.
/// Illinois-modified regula falsi on `p_left - 0.5` over [-pi/2, pi/2].
pub fn calibrate_symmetry<T: Real>(params: &DeviceParams<T>, cfg: &ProtocolConfig, engine_cfg: &EngineConfig) -> Result<Calibration> {
    let mut diagnostics = Vec::new();
    let mut cal = calibrate_symmetry_by(|x| {
        let c = ProtocolConfig { amplitude_n: 0.0, phi_minus_offset: x, phi_minus_final: None, ..*cfg };
        let out = run_protocol(params, &c, engine_cfg)?;
        diagnostics.push(out.diagnostics());
        Ok(out.p_left_final)
    })?;
    cal.diagnostics = diagnostics;
    Ok(cal)
}

/// Same root search with any `phi- -> p_left` evaluator.
pub fn calibrate_symmetry_by(mut p_left: impl FnMut(f64) -> Result<f64>) -> Result<Calibration> {
    let mut evaluations = Vec::new();
    let mut eval = |x: f64, ev: &mut Vec<(f64, f64)>| -> Result<f64> {
        let p = p_left(x)?;
        ev.push((x, p));
        Ok(p - 0.5)
    };
    let done = |x: f64, f: f64, ev: Vec<(f64, f64)>| Calibration { theta_symm: x, p_left: f + 0.5, evaluations: ev, diagnostics: Vec::new() };

    let (mut a, mut b) = (-FRAC_PI_2, FRAC_PI_2);
    let mut fa = eval(a, &mut evaluations)?;
    if fa.abs() < CALIBRATION_TOLERANCE {
        return Ok(done(a, fa, evaluations));
    }
    let mut fb = eval(b, &mut evaluations)?;
    if fb.abs() < CALIBRATION_TOLERANCE {
        return Ok(done(b, fb, evaluations));
    }
    if (fa < 0.0) == (fb < 0.0) {
        return Err(Error::Calibration(format!(
            "p_left - 0.5 does not change sign on [-pi/2, pi/2] ({fa:.4} and {fb:.4})"
        )));
    }
    let mut side = 0i8;
    for _ in 0..CALIBRATION_MAX_ITER {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = eval(c, &mut evaluations)?;
        if fc.abs() < CALIBRATION_TOLERANCE {
            return Ok(done(c, fc, evaluations));
        }
        if (fc < 0.0) == (fb < 0.0) {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
        if (b - a).abs() < 1e-9 {
            break;
        }
    }
    Err(Error::Calibration(format!("no convergence within {CALIBRATION_MAX_ITER} evaluations")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCurve {
    pub theta_values: Vec<f64>,
    pub p_left: Vec<f64>,
    pub amplitude_n: f64,
    pub drive_freq: f64,
    pub diagnostics: Vec<RunDiagnostics>,
}

/// Runs every job on the current rayon pool; results keep input order.
fn ordered<I: Sync, O: Send>(inputs: &[I], f: impl Fn(&I) -> Result<O> + Sync + Send) -> Result<Vec<O>> {
    inputs.par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

pub fn phase_transfer_curve<T: Real>(
    params: &DeviceParams<T>,
    cfg: &ProtocolConfig,
    engine_cfg: &EngineConfig,
    theta_grid: &[f64],
) -> Result<TransferCurve> {
    if theta_grid.is_empty() {
        return Err(config("theta grid is empty"));
    }
    let runs = ordered(theta_grid, |&th| {
        let c = ProtocolConfig { drive_phase: th, ..*cfg };
        let out = run_protocol(params, &c, engine_cfg)?;
        Ok((out.p_left_final, out.diagnostics()))
    })?;
    let (p_left, diagnostics) = runs.into_iter().unzip();
    Ok(TransferCurve {
        theta_values: theta_grid.to_vec(),
        p_left,
        amplitude_n: cfg.amplitude_n,
        drive_freq: cfg.drive_freq,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorAxis {
    /// Peak displacement in units of sigma.
    Amplitude,
    /// Switch duration in drive periods.
    FlipTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub axis: ErrorAxis,
    pub x_values: Vec<f64>,
    pub error: Vec<f64>,
    /// p_right for theta = 0.
    pub wrong_at_zero: Vec<f64>,
    /// p_left for theta = pi.
    pub wrong_at_pi: Vec<f64>,
    /// Two runs per point, theta = 0 first.
    pub diagnostics: Vec<RunDiagnostics>,
}

fn error_curve<T: Real>(
    params: &DeviceParams<T>,
    engine_cfg: &EngineConfig,
    axis: ErrorAxis,
    xs: &[f64],
    configure: impl Fn(f64) -> ProtocolConfig + Sync + Send,
) -> Result<ErrorCurve> {
    if xs.is_empty() || xs.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(config("sweep values must be positive"));
    }
    let jobs: Vec<(f64, f64)> = xs.iter().flat_map(|&x| [(x, 0.0), (x, PI)]).collect();
    let runs = ordered(&jobs, |&(x, th)| {
        let c = ProtocolConfig { drive_phase: th, ..configure(x) };
        let out = run_protocol(params, &c, engine_cfg)?;
        Ok((if th == 0.0 { out.p_right_final } else { out.p_left_final }, out.diagnostics()))
    })?;
    let (wrong, diagnostics): (Vec<f64>, Vec<RunDiagnostics>) = runs.into_iter().unzip();
    let wrong_at_zero: Vec<f64> = wrong.iter().step_by(2).copied().collect();
    let wrong_at_pi: Vec<f64> = wrong.iter().skip(1).step_by(2).copied().collect();
    let error = wrong_at_zero.iter().zip(&wrong_at_pi).map(|(a, b)| a.max(*b).clamp(0.0, 1.0)).collect();
    Ok(ErrorCurve { axis, x_values: xs.to_vec(), error, wrong_at_zero, wrong_at_pi, diagnostics })
}

pub fn error_vs_amplitude<T: Real>(
    params: &DeviceParams<T>,
    cfg: &ProtocolConfig,
    engine_cfg: &EngineConfig,
    n_grid: &[f64],
) -> Result<ErrorCurve> {
    error_curve(params, engine_cfg, ErrorAxis::Amplitude, n_grid, |n| ProtocolConfig { amplitude_n: n, ..*cfg })
}

/// Sweeps t_flip = x T. The drive is stretched where needed so that the
/// switch fits inside it with `n_periods` of margin.
pub fn error_vs_fliptime<T: Real>(
    params: &DeviceParams<T>,
    cfg: &ProtocolConfig,
    engine_cfg: &EngineConfig,
    tflip_grid_in_t: &[f64],
) -> Result<ErrorCurve> {
    error_curve(params, engine_cfg, ErrorAxis::FlipTime, tflip_grid_in_t, |x| fliptime_config(cfg, x))
}

/// Protocol for a switch lasting `x` drive periods. A switch that leaves
/// less than `edge_periods` of drive on either side gets a flat-top tone
/// over the smallest odd number of periods that does, so the drive phase at
/// the switch centre stays the same.
pub fn fliptime_config(cfg: &ProtocolConfig, x: f64) -> ProtocolConfig {
    let t_flip = x * cfg.period() * 1e3;
    let need = x + 2.0 * cfg.edge_periods;
    if need <= cfg.n_periods {
        return ProtocolConfig { t_flip, ..*cfg };
    }
    let mut n_periods = need.ceil();
    if n_periods % 2.0 == 0.0 {
        n_periods += 1.0;
    }
    ProtocolConfig { t_flip, n_periods, envelope: EnvelopeKind::FlatTop, ..*cfg }
}

/// Multi-switch run; `per_flip` holds the reading after every switch.
pub fn multiflip_outcomes<T: Real>(params: &DeviceParams<T>, cfg: &ProtocolConfig, engine_cfg: &EngineConfig) -> Result<ProtocolOutcome> {
    if cfg.n_flips < 1 {
        return Err(config("n_flips must be at least 1"));
    }
    let opts = RunOptions { sequence: Sequence::Multiflip, ..Default::default() };
    run_protocol_with(params, cfg, engine_cfg, &opts)
}

/// Final switch targets to scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasGrid {
    pub phi_plus: Vec<f64>,
    pub phi_minus: Vec<f64>,
}

impl BiasGrid {
    pub fn linspace(phi_plus: (f64, f64, usize), phi_minus: (f64, f64, usize)) -> Self {
        let lin = |(a, b, n): (f64, f64, usize)| linspace(a, b, n);
        Self { phi_plus: lin(phi_plus), phi_minus: lin(phi_minus) }
    }
}

/// `n` evenly spaced points from `a` to `b`, both ends exact. Mirrored
/// ranges give mirrored points.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|k| match k {
                0 => a,
                k if k == n - 1 => b,
                k => (a * (n - 1 - k) as f64 + b * k as f64) / (n - 1) as f64,
            })
            .collect(),
    }
}

/// Operability over (phi+ final, phi-). `operable[i][j]` is for
/// `phi_minus[i]`, `phi_plus[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    /// I_c- / I_c+.
    pub ratio: f64,
    pub grid: BiasGrid,
    pub operable: Vec<Vec<bool>>,
}

impl RegionMap {
    pub fn at(&self, phi_plus: f64, phi_minus: f64) -> Option<bool> {
        let near = |v: &[f64], x: f64| {
            v.iter().enumerate().min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs())).map(|p| p.0)
        };
        let (i, j) = (near(&self.grid.phi_minus, phi_minus)?, near(&self.grid.phi_plus, phi_plus)?);
        Some(self.operable[i][j])
    }
}

/// Classical detection for theta in {0, pi} at every grid point taken as
/// the switch target, with phi- applied throughout. A point is operable
/// when 0 reads L and pi reads R.
pub fn asymmetry_region_map<T: Real>(
    params: &DeviceParams<T>,
    cfg: &ProtocolConfig,
    ccfg: &ClassicalConfig,
    grid: &BiasGrid,
) -> Result<RegionMap> {
    if grid.phi_plus.is_empty() || grid.phi_minus.is_empty() {
        return Err(config("bias grid is empty"));
    }
    let points: Vec<(f64, f64)> =
        grid.phi_minus.iter().flat_map(|&m| grid.phi_plus.iter().map(move |&p| (p, m))).collect();
    let flags = ordered(&points, |&(p, m)| {
        let c = ProtocolConfig { phi_plus_final: p, phi_minus_offset: m, phi_minus_final: None, ..*cfg };
        let zero = classical_assignment(params, &c, 0.0, ccfg)?.assigned;
        let pi = classical_assignment(params, &c, PI, ccfg)?.assigned;
        Ok(zero == Some(Assignment::L) && pi == Some(Assignment::R))
    })?;
    let w = grid.phi_plus.len();
    let operable = flags.chunks(w).map(<[bool]>::to_vec).collect();
    let ratio = (params.ic_minus() / params.ic_plus()).f64();
    Ok(RegionMap { ratio, grid: grid.clone(), operable })
}

/// One map per asymmetry ratio for a device family sharing I_c+, L and C.
pub fn asymmetry_region_maps(
    ic_plus: f64,
    ratios: &[f64],
    l_center: f64,
    c_total: f64,
    cfg: &ProtocolConfig,
    ccfg: &ClassicalConfig,
    grid: &BiasGrid,
) -> Result<Vec<RegionMap>> {
    ratios
        .iter()
        .map(|&r| asymmetry_region_map(&DeviceParams::asymmetric(ic_plus, r, l_center, c_total), cfg, ccfg, grid))
        .collect()
}

/// Energy scales of `params` in f64, for metadata.
pub fn scales_of<T: Real>(params: &DeviceParams<T>) -> Result<EnergyScales<f64>> {
    derive_energies(&params.cast::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_go_left() {
        assert_eq!(Assignment::from_p_left(0.5), Assignment::L);
        assert_eq!(Assignment::from_p_left(0.4999999), Assignment::R);
        assert_eq!(Assignment::L.opposite(), Assignment::R);
    }

    #[test]
    fn ringdown_of_damped_sine() {
        // Oracle: a decaying 105 GHz cosine about an offset.
        let f = 105.0;
        let t: Vec<f64> = (0..4000).map(|k| k as f64 * 1e-4).collect();
        let x: Vec<f64> = t.iter().map(|&t| -2.7 + 0.3 * (-30.0 * t).exp() * (2.0 * PI * f * t).cos()).collect();
        let est = ringdown_frequency(&t, &x).unwrap();
        assert!((est / f - 1.0).abs() < 1e-3, "{est}");
    }

    #[test]
    fn ringdown_needs_oscillation() {
        let t: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let x: Vec<f64> = t.iter().map(|&t| (-t).exp()).collect();
        assert_eq!(ringdown_frequency(&t, &x), None);
        let noise: Vec<f64> = t.iter().map(|&t| 1e-12 * (3.0 * t).sin()).collect();
        assert_eq!(ringdown_frequency(&t, &noise), None);
    }

    #[test]
    fn illinois_finds_root_of_sigmoid() {
        let root = 0.46;
        let cal = calibrate_symmetry_by(|x| Ok(1.0 / (1.0 + (-(x - root) * 8.0).exp()))).unwrap();
        assert!((cal.theta_symm - root).abs() < 5e-3 / 2.0 * 1.01, "{cal:?}");
        assert!((cal.p_left - 0.5).abs() < CALIBRATION_TOLERANCE);
    }

    #[test]
    fn calibration_without_sign_change_fails() {
        let err = calibrate_symmetry_by(|_| Ok(0.9)).unwrap_err();
        assert_eq!(err.category(), "calibration");
    }

    #[test]
    fn symmetric_function_calibrates_to_zero_first() {
        let cal = calibrate_symmetry_by(|x| Ok(0.5 + 0.4 * x.tanh())).unwrap();
        assert_eq!(cal.theta_symm, 0.0);
        assert_eq!(cal.evaluations.len(), 3);
    }

    #[test]
    fn fliptime_config_fits_switch() {
        let cfg = ProtocolConfig::default();
        for x in [0.35, 1.0, 5.0, 10.0, 30.0] {
            let c = fliptime_config(&cfg, x);
            assert!((c.t_flip * 1e-3 / c.period() - x).abs() < 1e-12);
            assert!(c.drive_duration() > c.t_flip_ns());
        }
    }

    #[test]
    fn bias_grid_contains_centre() {
        let g = BiasGrid::linspace((0.6 * PI, 1.4 * PI, 21), (-0.92, 0.92, 21));
        assert_eq!(g.phi_minus[10], 0.0);
        assert!((g.phi_plus[10] - PI).abs() < 1e-15);
    }

    #[test]
    fn symmetric_map_is_even_in_phi_minus() {
        let p = DeviceParams::<f64>::reference();
        let g = BiasGrid::linspace((0.8 * PI, 1.2 * PI, 3), (-0.6, 0.6, 5));
        let m = asymmetry_region_map(&p, &ProtocolConfig::default(), &ClassicalConfig::default(), &g).unwrap();
        for i in 0..5 {
            assert_eq!(m.operable[i], m.operable[4 - i]);
        }
        assert_eq!(m.at(PI, 0.0), Some(true));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn assignment_threshold(p in 0.0f64..1.0) {
            let a = Assignment::from_p_left(p);
            prop_assert_eq!(a == Assignment::L, p >= 0.5);
            prop_assert_eq!(Assignment::from_p_left(1.0 - p).opposite() == a, p != 0.5);
        }
    }
}
