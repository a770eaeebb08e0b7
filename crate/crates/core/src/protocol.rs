//! Time schedules of flux bias and drive current.
//!
//! Times are in ns, currents in uA, phases in rad. Schedules are built once
//! and then only sampled.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::circuit::{EnergyScales, FluxBias};
use crate::error::{config, Error, Result};
use crate::potential::{analyze_shape, PotentialCoefficients, ShapeKind, ShapeOptions};

/// Time profile of a flux switch, mapping u in [0, 1] onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchShape {
    Linear,
    #[default]
    RaisedCosine,
    Tanh,
}

/// Steepness of the tanh profile.
const TANH_STEEPNESS: f64 = 6.0;

impl SwitchShape {
    pub fn profile(self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            SwitchShape::Linear => u,
            SwitchShape::RaisedCosine => 0.5 * (1.0 - (PI * u).cos()),
            SwitchShape::Tanh => {
                let k = TANH_STEEPNESS;
                0.5 * (1.0 + (k * (u - 0.5)).tanh() / (0.5 * k).tanh())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BiasFn {
    Constant(FluxBias<f64>),
    Ramp { from: FluxBias<f64>, to: FluxBias<f64>, shape: SwitchShape },
}

impl BiasFn {
    fn at(&self, u: f64) -> FluxBias<f64> {
        match *self {
            BiasFn::Constant(b) => b,
            BiasFn::Ramp { from, to, shape } => {
                let s = shape.profile(u);
                FluxBias::new(
                    from.phi_plus + s * (to.phi_plus - from.phi_plus),
                    from.phi_minus + s * (to.phi_minus - from.phi_minus),
                )
            }
        }
    }

    pub fn start(&self) -> FluxBias<f64> {
        self.at(0.0)
    }

    pub fn end(&self) -> FluxBias<f64> {
        self.at(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    Flat,
    Gaussian { center: f64, std: f64 },
    /// Raised-cosine rise after the tone starts and fall before it ends.
    RaisedCosineEdges { rise: f64 },
}

/// Sinusoidal drive I(t) = amplitude * env(t) * off(t) * cos(phase(t)) with
/// phase(t) = phase + 2 pi freq (t - t_ref), non-zero only on [start, end].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub amplitude: f64,
    pub freq: f64,
    pub phase: f64,
    pub t_ref: f64,
    pub start: f64,
    pub end: f64,
    pub envelope: Envelope,
    /// Raised-cosine turn-off starting at `.0` and lasting `.1`.
    pub turn_off: Option<(f64, f64)>,
}

impl Tone {
    pub fn phase_at(&self, t: f64) -> f64 {
        self.phase + TAU * self.freq * (t - self.t_ref)
    }

    pub fn envelope_at(&self, t: f64) -> f64 {
        if t < self.start || t > self.end {
            return 0.0;
        }
        let env = match self.envelope {
            Envelope::Flat => 1.0,
            Envelope::Gaussian { center, std } => (-0.5 * ((t - center) / std).powi(2)).exp(),
            Envelope::RaisedCosineEdges { rise } => {
                let a = ((t - self.start) / rise).min(1.0);
                let b = ((self.end - t) / rise).min(1.0);
                SwitchShape::RaisedCosine.profile(a) * SwitchShape::RaisedCosine.profile(b)
            }
        };
        let off = match self.turn_off {
            Some((t_off, dur)) if t >= t_off && dur > 0.0 => 1.0 - SwitchShape::RaisedCosine.profile((t - t_off) / dur),
            Some((t_off, _)) if t >= t_off => 0.0,
            _ => 1.0,
        };
        env * off
    }

    pub fn at(&self, t: f64) -> f64 {
        let env = self.envelope_at(t);
        if env == 0.0 {
            return 0.0;
        }
        self.amplitude * env * self.phase_at(t).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DriveFn {
    Zero,
    Tone(Tone),
}

impl DriveFn {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            DriveFn::Zero => 0.0,
            DriveFn::Tone(tone) => tone.at(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ready,
    /// phi- moved to the symmetry point (experimental sequence).
    Symmetry,
    Detection,
    Digitalization,
    Sense,
    /// Return of phi+ to the harmonic point between flips.
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub bias: BiasFn,
    pub drive: DriveFn,
    pub stage: Stage,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn bias_at(&self, t: f64) -> FluxBias<f64> {
        self.bias.at((t - self.t_start) / self.duration())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Markers {
    /// Drive start.
    pub t0: f64,
    /// Center of the (first) flux switch.
    pub t1: f64,
    /// Readout time, the end of the schedule.
    pub t2: f64,
    /// Midpoints of every flux switch.
    pub flips: Vec<f64>,
    /// Further labelled instants (switch_start, switch_end, drive_end, ...).
    pub named: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub segments: Vec<Segment>,
    pub markers: Markers,
}

/// Largest tolerated bias jump between adjacent segments, rad.
pub const BIAS_CONTINUITY: f64 = 1e-9;

impl Schedule {
    pub fn new(segments: Vec<Segment>, markers: Markers) -> Result<Self> {
        let s = Self { segments, markers };
        s.validate()?;
        Ok(s)
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.t_start)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(config("schedule has no segments"));
        }
        for s in &self.segments {
            if !(s.t_end > s.t_start) || !s.t_start.is_finite() || !s.t_end.is_finite() {
                return Err(config(format!("segment [{}, {}] has non-positive length", s.t_start, s.t_end)));
            }
        }
        for w in self.segments.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if (a.t_end - b.t_start).abs() > 1e-12 * (1.0 + a.t_end.abs()) {
                return Err(config(format!("segments not contiguous at t = {}", a.t_end)));
            }
            let (e, s) = (a.bias.end(), b.bias.start());
            let jump = (e.phi_plus - s.phi_plus).abs().max((e.phi_minus - s.phi_minus).abs());
            if jump > BIAS_CONTINUITY {
                return Err(config(format!("bias jumps by {jump} rad at t = {}", a.t_end)));
            }
        }
        Ok(())
    }

    /// Index of the segment containing `t`; boundaries belong to the later segment.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * (1.0 + self.end().abs());
        if !(t >= self.start() - tol && t <= self.end() + tol) {
            return Err(Error::OutOfRange(format!(
                "t = {t} ns outside schedule [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let i = self.segments.partition_point(|s| s.t_end <= t);
        Ok(i.min(self.segments.len() - 1))
    }

    /// Bias and drive current at time `t`.
    pub fn sample(&self, t: f64) -> Result<(FluxBias<f64>, f64)> {
        let seg = &self.segments[self.segment_index(t)?];
        Ok((seg.bias_at(t), seg.drive.at(t)))
    }

    /// The drive tone, if any segment carries one.
    pub fn tone(&self) -> Option<&Tone> {
        self.segments.iter().find_map(|s| match &s.drive {
            DriveFn::Tone(t) => Some(t),
            DriveFn::Zero => None,
        })
    }

    /// Rows (t, phi_plus, phi_minus, drive_current) every `dt` ns.
    pub fn dump(&self, dt: f64) -> Result<Vec<[f64; 4]>> {
        if !(dt > 0.0) {
            return Err(config("dump step must be positive"));
        }
        let n = ((self.end() - self.start()) / dt).floor() as usize;
        (0..=n)
            .map(|i| {
                let t = self.start() + i as f64 * dt;
                let (b, i) = self.sample(t)?;
                Ok([t, b.phi_plus, b.phi_minus, i])
            })
            .collect()
    }
}

/// Envelope family used for the drive tone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    /// Gaussian of standard deviation `envelope_std` centred on t1.
    #[default]
    Gaussian,
    /// Flat top with raised-cosine edges of `edge_periods` drive periods.
    FlatTop,
}

/// Timing of the experimental sequence, ns unless stated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentalTiming {
    /// Time at which phi- is moved to the symmetry point.
    pub symmetry_step: f64,
    /// Total drive duration (3 us). Zero gives the calibration sequence.
    pub drive_duration: f64,
    /// Start of the flux switch.
    pub switch_start: f64,
    /// Rise time of the flux switch and of the phi- steps.
    pub rise: f64,
    /// Drive end minus switch start.
    pub overlap: f64,
    /// phi- during the Sense stage, rad.
    pub theta_detect: f64,
    /// Length of the Sense stage.
    pub sense: f64,
}

impl Default for ExperimentalTiming {
    fn default() -> Self {
        Self {
            symmetry_step: 100.0,
            drive_duration: 3000.0,
            switch_start: 3140.0,
            rise: 1.0,
            overlap: 4.0,
            theta_detect: 0.2,
            sense: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Drive frequency omega_r / 2pi, GHz.
    pub drive_freq: f64,
    /// Drive phase theta_r, rad.
    pub drive_phase: f64,
    /// Peak drive displacement in units of sigma.
    pub amplitude_n: f64,
    /// Drive duration in drive periods.
    pub n_periods: f64,
    /// Gaussian envelope standard deviation, ps.
    pub envelope_std: f64,
    pub envelope: EnvelopeKind,
    /// Edge length of the flat-top envelope, drive periods.
    pub edge_periods: f64,
    /// Flux-switch duration, ps.
    pub t_flip: f64,
    pub switch_shape: SwitchShape,
    /// phi- throughout the protocol (symmetry compensation), rad.
    pub phi_minus_offset: f64,
    /// phi+ while the drive is read in, rad.
    pub phi_plus_ready: f64,
    /// phi+ after the switch, rad.
    pub phi_plus_final: f64,
    /// phi- after the switch; defaults to `phi_minus_offset`.
    pub phi_minus_final: Option<f64>,
    pub n_flips: usize,
    /// Idle time before the drive starts, ns.
    pub cooldown: f64,
    /// Raised-cosine drive turn-off after the switch, drive periods. Zero
    /// stops the drive when the switch completes.
    pub drive_off_periods: f64,
    /// Sense stage length after the drive is off, local well periods.
    pub sense_periods: f64,
    pub experimental: ExperimentalTiming,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            drive_freq: 7.0,
            drive_phase: 0.0,
            amplitude_n: 2.0,
            n_periods: 5.0,
            envelope_std: 100.0,
            envelope: EnvelopeKind::Gaussian,
            edge_periods: 2.0,
            t_flip: 50.0,
            switch_shape: SwitchShape::RaisedCosine,
            phi_minus_offset: 0.0,
            phi_plus_ready: FRAC_PI_2,
            phi_plus_final: PI,
            phi_minus_final: None,
            n_flips: 1,
            cooldown: 0.0,
            drive_off_periods: 0.0,
            sense_periods: 5.0,
            experimental: ExperimentalTiming::default(),
        }
    }
}

impl ProtocolConfig {
    /// Drive period, ns.
    pub fn period(&self) -> f64 {
        1.0 / self.drive_freq
    }

    /// Drive duration, ns.
    pub fn drive_duration(&self) -> f64 {
        self.n_periods * self.period()
    }

    pub fn t_flip_ns(&self) -> f64 {
        self.t_flip * 1e-3
    }

    pub fn ready_bias(&self) -> FluxBias<f64> {
        FluxBias::new(self.phi_plus_ready, self.phi_minus_offset)
    }

    pub fn final_bias(&self) -> FluxBias<f64> {
        FluxBias::new(self.phi_plus_final, self.phi_minus_final.unwrap_or(self.phi_minus_offset))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.drive_freq,
            self.drive_phase,
            self.amplitude_n,
            self.n_periods,
            self.envelope_std,
            self.edge_periods,
            self.t_flip,
            self.phi_minus_offset,
            self.phi_plus_ready,
            self.phi_plus_final,
            self.cooldown,
            self.drive_off_periods,
            self.sense_periods,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.phi_minus_final.is_some_and(|v| !v.is_finite()) {
            return Err(config("protocol values must be finite"));
        }
        let positive = [
            (self.drive_freq, "drive_freq"),
            (self.n_periods, "n_periods"),
            (self.envelope_std, "envelope_std"),
            (self.edge_periods, "edge_periods"),
            (self.t_flip, "t_flip"),
            (self.sense_periods, "sense_periods"),
        ];
        for (v, name) in positive {
            if v <= 0.0 {
                return Err(config(format!("protocol.{name} must be positive, got {v}")));
            }
        }
        if !(self.drive_off_periods >= 0.0) {
            return Err(config(format!("protocol.drive_off_periods must be non-negative, got {}", self.drive_off_periods)));
        }
        if self.amplitude_n < 0.0 {
            return Err(config("protocol.amplitude_n must be non-negative"));
        }
        if self.cooldown < 0.0 {
            return Err(config("protocol.cooldown must be non-negative"));
        }
        if self.n_flips == 0 {
            return Err(config("protocol.n_flips must be at least 1"));
        }
        Ok(())
    }
}

/// Approximate local frequency (GHz) of the final wells from the energy
/// scales alone (symmetric junctions).
fn final_well_frequency(cfg: &ProtocolConfig, scales: &EnergyScales<f64>) -> Result<f64> {
    let coeffs = PotentialCoefficients {
        e_l: scales.e_l,
        e_j_plus: 2.0 * scales.e_j,
        e_j_minus: 0.0,
        f_lc: scales.f_lc(),
    };
    let shape = analyze_shape(&coeffs, &cfg.final_bias(), &ShapeOptions::default())?;
    let f = shape.minima.iter().map(|m| m.local_frequency).fold(0.0, f64::max);
    if shape.kind == ShapeKind::Harmonic || f <= 0.0 {
        Ok(scales.f_lc())
    } else {
        Ok(f)
    }
}

fn tone(cfg: &ProtocolConfig, scales: &EnergyScales<f64>, t0: f64, end: f64, envelope: Envelope) -> DriveFn {
    let amplitude = scales.current_per_phase * cfg.amplitude_n * scales.sigma;
    if amplitude == 0.0 {
        return DriveFn::Zero;
    }
    DriveFn::Tone(Tone {
        amplitude,
        freq: cfg.drive_freq,
        phase: cfg.drive_phase,
        t_ref: t0,
        start: t0,
        end,
        envelope,
        turn_off: None,
    })
}

fn envelope(cfg: &ProtocolConfig, t_center: f64) -> Envelope {
    match cfg.envelope {
        EnvelopeKind::Gaussian => Envelope::Gaussian { center: t_center, std: cfg.envelope_std * 1e-3 },
        EnvelopeKind::FlatTop => Envelope::RaisedCosineEdges { rise: cfg.edge_periods * cfg.period() },
    }
}

fn constant(t_start: f64, t_end: f64, bias: FluxBias<f64>, drive: DriveFn, stage: Stage) -> Segment {
    Segment { t_start, t_end, bias: BiasFn::Constant(bias), drive, stage }
}

fn ramp(t_start: f64, t_end: f64, from: FluxBias<f64>, to: FluxBias<f64>, shape: SwitchShape, drive: DriveFn, stage: Stage) -> Segment {
    Segment { t_start, t_end, bias: BiasFn::Ramp { from, to, shape }, drive, stage }
}

/// Ready, Detection, Digitalization and Sense for a single switch centred on
/// the drive.
pub fn make_detection_schedule(cfg: &ProtocolConfig, scales: &EnergyScales<f64>) -> Result<Schedule> {
    cfg.validate()?;
    let t_drive = cfg.drive_duration();
    let t_flip = cfg.t_flip_ns();
    if t_flip >= t_drive {
        return Err(config(format!(
            "t_flip ({} ps) must be shorter than the drive ({} ps)",
            cfg.t_flip,
            t_drive * 1e3
        )));
    }
    let t0 = cfg.cooldown;
    let t1 = t0 + 0.5 * t_drive;
    let (ts, te) = (t1 - 0.5 * t_flip, t1 + 0.5 * t_flip);
    let t_off = cfg.drive_off_periods * cfg.period();
    let drive_end = (te + t_off).min(t0 + t_drive);
    let sense = cfg.sense_periods / final_well_frequency(cfg, scales)?;
    let t2 = te + t_off + sense;

    let mut drive = tone(cfg, scales, t0, drive_end, envelope(cfg, t1));
    if let DriveFn::Tone(t) = &mut drive {
        t.turn_off = Some((te, t_off));
    }
    let (ready, fin) = (cfg.ready_bias(), cfg.final_bias());
    let mut segments = Vec::new();
    if t0 > 0.0 {
        segments.push(constant(0.0, t0, ready, DriveFn::Zero, Stage::Ready));
    }
    segments.push(constant(t0, ts, ready, drive, Stage::Detection));
    segments.push(ramp(ts, te, ready, fin, cfg.switch_shape, drive, Stage::Digitalization));
    segments.push(constant(te, t2, fin, drive, Stage::Sense));

    let mut named = BTreeMap::new();
    named.insert("switch_start".into(), ts);
    named.insert("switch_end".into(), te);
    named.insert("drive_end".into(), drive_end);
    Schedule::new(segments, Markers { t0, t1, t2, flips: vec![t1], named })
}

/// The measured sequence: symmetry step, long drive, 1 ns switch, Sense at
/// theta_detect. A zero drive duration gives the calibration sequence.
pub fn make_experimental_schedule(cfg: &ProtocolConfig, scales: &EnergyScales<f64>) -> Result<Schedule> {
    cfg.validate()?;
    let x = cfg.experimental;
    let vals = [x.symmetry_step, x.drive_duration, x.switch_start, x.rise, x.overlap, x.theta_detect, x.sense];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(config("experimental timings must be finite"));
    }
    if !(x.symmetry_step > 0.0 && x.rise > 0.0 && x.sense > 0.0 && x.drive_duration >= 0.0 && x.overlap >= 0.0) {
        return Err(config("experimental timings must be positive"));
    }
    let drive_end = x.switch_start + x.overlap;
    let drive_start = drive_end - x.drive_duration;
    let sym_end = x.symmetry_step + x.rise;
    if x.drive_duration > 0.0 && drive_start < sym_end {
        return Err(config("drive would start before the symmetry step completes"));
    }
    if sym_end >= x.switch_start {
        return Err(config("switch must start after the symmetry step"));
    }
    let switch_end = x.switch_start + x.rise;
    if x.rise >= x.drive_duration && x.drive_duration > 0.0 {
        return Err(config("switch rise must be shorter than the drive"));
    }
    let detect_start = drive_end.max(switch_end);
    let detect_end = detect_start + x.rise;
    let t2 = detect_end + x.sense;

    let ready0 = FluxBias::new(cfg.phi_plus_ready, 0.0);
    let ready = cfg.ready_bias();
    let fin = FluxBias::new(cfg.phi_plus_final, cfg.phi_minus_offset);
    let sense = FluxBias::new(cfg.phi_plus_final, x.theta_detect);
    let drive = if x.drive_duration > 0.0 {
        let env = Envelope::RaisedCosineEdges { rise: x.rise.min(0.5 * x.drive_duration) };
        tone(cfg, scales, drive_start, drive_end, env)
    } else {
        DriveFn::Zero
    };

    let s = SwitchShape::RaisedCosine;
    let mut cuts = vec![0.0, x.symmetry_step, sym_end];
    if x.drive_duration > 0.0 {
        cuts.push(drive_start);
    }
    cuts.extend([x.switch_start, switch_end]);
    if drive_end > switch_end {
        cuts.push(drive_end);
    }
    cuts.extend([detect_start, detect_end, t2]);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut segments = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let seg = if b <= x.symmetry_step {
            constant(a, b, ready0, DriveFn::Zero, Stage::Ready)
        } else if b <= sym_end {
            ramp(a, b, ready0, ready, s, DriveFn::Zero, Stage::Symmetry)
        } else if b <= x.switch_start {
            let stage = if x.drive_duration > 0.0 && mid > drive_start { Stage::Detection } else { Stage::Symmetry };
            constant(a, b, ready, drive, stage)
        } else if b <= switch_end {
            ramp(a, b, ready, fin, s, drive, Stage::Digitalization)
        } else if b <= detect_start {
            constant(a, b, fin, drive, Stage::Digitalization)
        } else if b <= detect_end {
            ramp(a, b, fin, sense, s, DriveFn::Zero, Stage::Sense)
        } else {
            constant(a, b, sense, DriveFn::Zero, Stage::Sense)
        };
        segments.push(seg);
    }

    let mut named = BTreeMap::new();
    named.insert("symmetry_step".into(), x.symmetry_step);
    named.insert("switch_start".into(), x.switch_start);
    named.insert("switch_end".into(), switch_end);
    named.insert("drive_end".into(), drive_end);
    named.insert("detect_step".into(), detect_start);
    let t1 = 0.5 * (x.switch_start + switch_end);
    let t0 = if x.drive_duration > 0.0 { drive_start } else { sym_end };
    Schedule::new(segments, Markers { t0, t1, t2, flips: vec![t1], named })
}

/// Several switches on one continuous tone. Flip midpoints sit half a drive
/// period past an integer number of periods after t0, the same drive phase
/// that the single-switch schedule sees at t1 for an odd number of periods.
pub fn make_multiflip_schedule(cfg: &ProtocolConfig, scales: &EnergyScales<f64>) -> Result<Schedule> {
    cfg.validate()?;
    if cfg.n_flips == 1 {
        return make_detection_schedule(cfg, scales);
    }
    let period = cfg.period();
    let t_flip = cfg.t_flip_ns();
    let n = cfg.n_flips;
    let whole = cfg.n_periods.floor() as usize;
    let t0 = cfg.cooldown;
    let mids: Vec<f64> = (1..=n)
        .map(|j| t0 + ((j * whole) / (n + 1)) as f64 * period + 0.5 * period)
        .collect();
    let spacing = mids.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if spacing < 2.0 * t_flip {
        return Err(config(format!(
            "flips too dense: spacing {:.1} ps < 2 t_flip for {} flips over {} periods",
            spacing * 1e3,
            n,
            cfg.n_periods
        )));
    }
    let t_drive = cfg.drive_duration();
    let sense = cfg.sense_periods / final_well_frequency(cfg, scales)?;
    let hold = (spacing - 2.0 * t_flip).min(sense);
    let last_end = mids[n - 1] + 0.5 * t_flip;
    if last_end >= t0 + t_drive {
        return Err(config("last flip does not fit inside the drive"));
    }
    let t_off = cfg.drive_off_periods * period;
    let drive_end = (last_end + t_off).min(t0 + t_drive);
    let t2 = last_end + t_off + sense;
    let mut drive = tone(cfg, scales, t0, drive_end, Envelope::RaisedCosineEdges { rise: cfg.edge_periods.min(1.0) * period });
    if let DriveFn::Tone(t) = &mut drive {
        t.turn_off = Some((last_end, t_off));
    }

    let (ready, fin) = (cfg.ready_bias(), cfg.final_bias());
    let mut segments = Vec::new();
    if t0 > 0.0 {
        segments.push(constant(0.0, t0, ready, DriveFn::Zero, Stage::Ready));
    }
    let mut t = t0;
    for (j, &m) in mids.iter().enumerate() {
        let (ts, te) = (m - 0.5 * t_flip, m + 0.5 * t_flip);
        if ts > t {
            segments.push(constant(t, ts, ready, drive, if j == 0 { Stage::Detection } else { Stage::Reset }));
        }
        segments.push(ramp(ts, te, ready, fin, cfg.switch_shape, drive, Stage::Digitalization));
        if j + 1 < n {
            segments.push(constant(te, te + hold, fin, drive, Stage::Sense));
            segments.push(ramp(te + hold, te + hold + t_flip, fin, ready, cfg.switch_shape, drive, Stage::Reset));
            t = te + hold + t_flip;
        } else {
            segments.push(constant(te, t2, fin, drive, Stage::Sense));
        }
    }
    let mut named = BTreeMap::new();
    named.insert("drive_end".into(), drive_end);
    named.insert("flip_hold".into(), hold);
    Schedule::new(segments, Markers { t0, t1: mids[0], t2, flips: mids, named })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{derive_energies, DeviceParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scales() -> EnergyScales<f64> {
        derive_energies(&DeviceParams::reference()).unwrap()
    }

    #[test]
    fn reference_detection_timing() {
        let cfg = ProtocolConfig::default();
        let s = make_detection_schedule(&cfg, &scales()).unwrap();
        assert_relative_eq!(cfg.drive_duration(), 0.7142857, epsilon = 1e-6);
        assert_relative_eq!(s.markers.t1, cfg.drive_duration() / 2.0, epsilon = 1e-15);
        let ts = s.markers.named["switch_start"];
        let te = s.markers.named["switch_end"];
        assert_relative_eq!(te - ts, 0.05, epsilon = 1e-15);
        assert_relative_eq!(0.5 * (ts + te), s.markers.t1, epsilon = 1e-15);
        let tone = s.tone().unwrap();
        let sc = scales();
        assert_relative_eq!(tone.amplitude, sc.current_per_phase * 2.0 * sc.sigma, max_relative = 1e-12);
        // The drive stops with the switch; Sense lasts five well periods.
        assert_eq!(tone.at(te + 1e-6), 0.0);
        let sense = s.end() - te;
        assert!(sense > 0.04 && sense < 0.06, "{sense}");
    }

    #[test]
    fn phase_at_t1() {
        for &theta in &[0.0, 1.0, PI, 5.5] {
            let cfg = ProtocolConfig { drive_phase: theta, cooldown: 0.03, ..Default::default() };
            let s = make_detection_schedule(&cfg, &scales()).unwrap();
            let m = &s.markers;
            let expect = theta + TAU * cfg.drive_freq * (m.t1 - m.t0);
            assert_eq!(s.tone().unwrap().phase_at(m.t1), expect);
        }
    }

    #[test]
    fn zero_amplitude_means_no_drive() {
        let cfg = ProtocolConfig { amplitude_n: 0.0, ..Default::default() };
        let s = make_detection_schedule(&cfg, &scales()).unwrap();
        for row in s.dump(1e-3).unwrap() {
            assert_eq!(row[3], 0.0);
        }
    }

    #[test]
    fn flip_longer_than_drive_is_rejected() {
        let cfg = ProtocolConfig { t_flip: 800.0, ..Default::default() };
        assert!(matches!(make_detection_schedule(&cfg, &scales()), Err(Error::Config(_))));
    }

    #[test]
    fn sampling_stages() {
        let cfg = ProtocolConfig { cooldown: 0.1, phi_minus_offset: 0.01, ..Default::default() };
        let s = make_detection_schedule(&cfg, &scales()).unwrap();
        let (b, i) = s.sample(0.05).unwrap();
        assert_eq!(b, FluxBias::new(FRAC_PI_2, 0.01));
        assert_eq!(i, 0.0);
        let (b, _) = s.sample(s.markers.t1).unwrap();
        assert_relative_eq!(b.phi_plus, 0.75 * PI, epsilon = 1e-12);
        assert!(s.sample(s.end() + 1e-6).is_err());
        assert!(s.sample(s.end()).is_ok());
    }

    #[test]
    fn experimental_markers() {
        let s = make_experimental_schedule(&ProtocolConfig::default(), &scales()).unwrap();
        let m = &s.markers.named;
        assert_eq!(m["symmetry_step"], 100.0);
        assert_eq!(m["switch_start"], 3140.0);
        assert_relative_eq!(m["drive_end"] - m["switch_start"], 4.0, epsilon = 1e-9);
        assert_relative_eq!(m["drive_end"] - s.markers.t0, 3000.0, epsilon = 1e-9);
        let (b, _) = s.sample(s.end()).unwrap();
        assert_relative_eq!(b.phi_minus, 0.2, epsilon = 1e-12);
        assert_relative_eq!(b.phi_plus, PI, epsilon = 1e-12);
    }

    #[test]
    fn experimental_calibration_variant() {
        let mut cfg = ProtocolConfig::default();
        cfg.experimental.drive_duration = 0.0;
        let s = make_experimental_schedule(&cfg, &scales()).unwrap();
        assert!(s.tone().is_none());
        assert!(s.segments.iter().any(|g| g.stage == Stage::Digitalization));
    }

    #[test]
    fn multiflip_structure() {
        let cfg = ProtocolConfig { n_flips: 3, n_periods: 12.0, ..Default::default() };
        let s = make_multiflip_schedule(&cfg, &scales()).unwrap();
        assert_eq!(s.markers.flips.len(), 3);
        let ups = s.segments.iter().filter(|g| g.stage == Stage::Digitalization).count();
        assert_eq!(ups, 3);
        let tone = s.tone().unwrap();
        for &m in &s.markers.flips {
            let (b, _) = s.sample(m).unwrap();
            assert_relative_eq!(b.phi_plus, 0.75 * PI, epsilon = 1e-12);
            let turns = (tone.phase_at(m) - cfg.drive_phase) / TAU;
            assert_relative_eq!(turns.fract(), 0.5, epsilon = 1e-9);
        }
        for g in s.segments.iter().filter(|g| g.stage == Stage::Reset) {
            if let BiasFn::Ramp { to, .. } = g.bias {
                assert_eq!(to.phi_plus, FRAC_PI_2);
            }
        }
    }

    #[test]
    fn multiflip_density_check() {
        let cfg = ProtocolConfig { n_flips: 4, n_periods: 5.0, t_flip: 100.0, ..Default::default() };
        assert!(matches!(make_multiflip_schedule(&cfg, &scales()), Err(Error::Config(_))));
    }

    #[test]
    fn single_flip_multiflip_matches_detection() {
        let cfg = ProtocolConfig::default();
        let a = make_detection_schedule(&cfg, &scales()).unwrap();
        let b = make_multiflip_schedule(&cfg, &scales()).unwrap();
        for (ra, rb) in a.dump(1e-3).unwrap().iter().zip(b.dump(1e-3).unwrap()) {
            assert_eq!(*ra, rb);
        }
    }

    proptest! {
        #[test]
        fn switch_profiles_are_monotone(u in 0.0f64..1.0, du in 0.0f64..0.2) {
            for s in [SwitchShape::Linear, SwitchShape::RaisedCosine, SwitchShape::Tanh] {
                prop_assert!(s.profile(u + du) >= s.profile(u) - 1e-15);
                prop_assert!(s.profile(0.0).abs() < 1e-15 && (s.profile(1.0) - 1.0).abs() < 1e-15);
            }
        }

        #[test]
        fn schedules_are_continuous(theta in 0.0f64..TAU, pm in -0.5f64..0.5, tf in 10.0f64..300.0,
                                    shape in 0usize..3, flips in 1usize..4) {
            let shape = [SwitchShape::Linear, SwitchShape::RaisedCosine, SwitchShape::Tanh][shape];
            let cfg = ProtocolConfig { drive_phase: theta, phi_minus_offset: pm, t_flip: tf,
                                       switch_shape: shape, n_flips: flips, n_periods: 15.0,
                                       cooldown: 0.01, ..Default::default() };
            let s = match make_multiflip_schedule(&cfg, &scales()) {
                Err(Error::Config(_)) => return Ok(()),
                r => r.unwrap(),
            };
            for w in s.segments.windows(2) {
                let (e, b) = (w[0].bias_at(w[0].t_end), w[1].bias_at(w[1].t_start));
                prop_assert!((e.phi_plus - b.phi_plus).abs() < BIAS_CONTINUITY);
                prop_assert!((e.phi_minus - b.phi_minus).abs() < BIAS_CONTINUITY);
            }
            for g in s.segments.iter().filter(|g| matches!(g.bias, BiasFn::Ramp { .. })) {
                let mut prev = g.bias_at(g.t_start).phi_plus;
                let dir = (g.bias.end().phi_plus - g.bias.start().phi_plus).signum();
                for k in 1..=50 {
                    let p = g.bias_at(g.t_start + g.duration() * k as f64 / 50.0).phi_plus;
                    prop_assert!((p - prev) * dir >= -1e-15);
                    prev = p;
                }
            }
        }
    }
}
