//! Damped classical phase particle in the loop potential:
//!
//! phi'' = -(omega0^2 / E_L) (U'(phi) - E_L phi_d(t)) - gamma phi'
//!
//! with U in h*GHz and phi_d = I(t) / (Phi0 / 2pi L). In the harmonic
//! configuration this is an oscillator at f_LC whose energy decays at gamma,
//! the same rate the quantum relaxation gives.

use serde::{Deserialize, Serialize};

use crate::circuit::{derive_energies, DeviceParams, FluxBias};
use crate::detection::Assignment;
use crate::error::{config, Result};
use crate::potential::{analyze_shape, PotentialCoefficients, PotentialShape, ShapeKind, ShapeOptions};
use crate::protocol::{make_detection_schedule, ProtocolConfig, Schedule, Segment, Stage};
use crate::quantum::DEFAULT_GAMMA;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalState<T> {
    /// rad.
    pub phi: T,
    /// rad/ns.
    pub phi_dot: T,
    /// ns.
    pub time: f64,
}

impl<T: Real> ClassicalState<T> {
    pub fn at_rest(phi: T, time: f64) -> Self {
        Self { phi, phi_dot: T::zero(), time }
    }
}

/// Equation of motion of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalModel<T> {
    pub coeffs: PotentialCoefficients<T>,
    /// omega0^2 / E_L, (rad/ns)^2 per h*GHz.
    stiffness: T,
    current_per_phase: f64,
    /// Damping rate, 1/ns.
    pub gamma: T,
}

impl<T: Real> ClassicalModel<T> {
    pub fn new(params: &DeviceParams<T>, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(config("classical gamma must be non-negative"));
        }
        let scales = derive_energies(params)?;
        let coeffs = PotentialCoefficients::from_params(params)?;
        Ok(Self {
            stiffness: scales.omega0 * scales.omega0 / coeffs.e_l,
            coeffs,
            current_per_phase: scales.current_per_phase.f64(),
            gamma: T::of(gamma),
        })
    }

    pub fn acceleration(&self, bias: &FluxBias<T>, phi_d: T, phi: T, phi_dot: T) -> T {
        let force = self.coeffs.first_derivative(bias, phi) - self.coeffs.e_l * phi_d;
        -self.stiffness * force - self.gamma * phi_dot
    }

    /// Kinetic plus potential energy in the tilted potential, h*GHz.
    pub fn energy(&self, s: &ClassicalState<T>, bias: &FluxBias<T>, phi_d: T) -> T {
        let half = T::of(0.5);
        half * s.phi_dot * s.phi_dot / self.stiffness + self.coeffs.value(bias, s.phi) - self.coeffs.e_l * phi_d * s.phi
    }

    fn sample(&self, seg: &Segment, t: f64) -> (FluxBias<T>, T) {
        (seg.bias_at(t).cast(), T::of(seg.drive.at(t) / self.current_per_phase))
    }

    fn rk4(&self, seg: &Segment, s: &mut ClassicalState<T>, h: f64) {
        let (b0, d0) = self.sample(seg, s.time);
        let (bm, dm) = self.sample(seg, s.time + 0.5 * h);
        let (b1, d1) = self.sample(seg, s.time + h);
        let hh = T::of(h);
        let half = T::of(0.5);
        let (x, v) = (s.phi, s.phi_dot);
        let k1x = v;
        let k1v = self.acceleration(&b0, d0, x, v);
        let k2x = v + half * hh * k1v;
        let k2v = self.acceleration(&bm, dm, x + half * hh * k1x, k2x);
        let k3x = v + half * hh * k2v;
        let k3v = self.acceleration(&bm, dm, x + half * hh * k2x, k3x);
        let k4x = v + hh * k3v;
        let k4v = self.acceleration(&b1, d1, x + hh * k3x, k4x);
        let sixth = hh / T::of(6.0);
        s.phi = x + sixth * (k1x + T::of(2.0) * (k2x + k3x) + k4x);
        s.phi_dot = v + sixth * (k1v + T::of(2.0) * (k2v + k3v) + k4v);
        s.time += h;
    }

    /// Largest local well frequency met over the schedule, GHz.
    pub fn max_well_frequency(&self, schedule: &Schedule) -> Result<f64> {
        let opts = ShapeOptions::default();
        let mut f: f64 = 0.0;
        for seg in &schedule.segments {
            for u in [0.0, 0.5, 1.0] {
                let b = seg.bias_at(seg.t_start + u * seg.duration()).cast::<T>();
                let shape = analyze_shape(&self.coeffs, &b, &opts)?;
                for m in &shape.minima {
                    f = f.max(m.local_frequency.f64());
                }
            }
        }
        Ok(f)
    }

    fn check_step(&self, schedule: &Schedule, dt: f64) -> Result<()> {
        let f = self.max_well_frequency(schedule)?;
        if !(dt > 0.0) || dt > 1.0 / (40.0 * f) {
            return Err(config(format!(
                "classical step {:.4} ps exceeds 1/(40 f_well) = {:.4} ps",
                dt * 1e3,
                1e3 / (40.0 * f)
            )));
        }
        Ok(())
    }

    /// Steps `s` through every segment with steps of at most `dt` ns,
    /// calling `observe` after each one.
    pub fn integrate(
        &self,
        schedule: &Schedule,
        s: &mut ClassicalState<T>,
        dt: f64,
        mut observe: impl FnMut(&ClassicalState<T>),
    ) -> Result<usize> {
        schedule.validate()?;
        self.check_step(schedule, dt)?;
        s.time = schedule.start();
        let mut steps = 0;
        for seg in &schedule.segments {
            let n = ((seg.duration() / dt) - 1e-9).ceil().max(1.0) as usize;
            let h = seg.duration() / n as f64;
            for k in 0..n {
                self.rk4(seg, s, h);
                // Pin the clock to the segment grid to keep rounding from drifting.
                s.time = seg.t_start + (k + 1) as f64 * h;
                steps += 1;
                observe(s);
            }
        }
        Ok(steps)
    }
}

/// Full trajectory of a classical run, one state per step plus the initial one.
pub fn evolve_classical<T: Real>(
    params: &DeviceParams<T>,
    schedule: &Schedule,
    gamma: f64,
    init: ClassicalState<T>,
    dt: f64,
) -> Result<Vec<ClassicalState<T>>> {
    let model = ClassicalModel::new(params, gamma)?;
    let mut s = init;
    let mut out = vec![ClassicalState { time: schedule.start(), ..init }];
    model.integrate(schedule, &mut s, dt, |x| out.push(*x))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalConfig {
    /// Damping rate, 1/ns.
    pub gamma: f64,
    /// Step, ps.
    pub dt: f64,
    /// Settling threshold on |phi'|, rad/ns.
    pub settle_velocity: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, dt: 0.1, settle_velocity: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalOutcome {
    /// None when the particle did not settle or settled on the barrier.
    pub assigned: Option<Assignment>,
    pub phi_final: f64,
    /// Time at which the settling criterion was met, ns.
    pub settled_at: Option<f64>,
}

/// Ground position at `bias`: the global minimum.
fn rest_position<T: Real>(shape: &PotentialShape<T>) -> T {
    shape.global_minimum().map_or(T::zero(), |m| m.phi)
}

/// Runs the detection schedule for drive phase `theta_r` and reads out the
/// well the particle settles in.
pub fn classical_assignment<T: Real>(
    params: &DeviceParams<T>,
    cfg: &ProtocolConfig,
    theta_r: f64,
    ccfg: &ClassicalConfig,
) -> Result<ClassicalOutcome> {
    let cfg = ProtocolConfig { drive_phase: theta_r, ..*cfg };
    let scales = derive_energies(&params.cast::<f64>())?;
    let schedule = make_detection_schedule(&cfg, &scales)?;
    let model = ClassicalModel::new(params, ccfg.gamma)?;
    let opts = ShapeOptions::default();
    let ready = analyze_shape(&model.coeffs, &cfg.ready_bias().cast::<T>(), &opts)?;
    let mut s = ClassicalState::at_rest(rest_position(&ready), schedule.start());
    let dt = ccfg.dt * 1e-3;
    model.integrate(&schedule, &mut s, dt, |_| {})?;

    let final_bias = schedule.segments.last().map_or(cfg.final_bias(), |g| g.bias.end());
    let shape = analyze_shape(&model.coeffs, &final_bias.cast::<T>(), &opts)?;
    let barrier = shape.barrier.map_or(0.0, |b| b.f64());
    let f_well = shape.minima.iter().map(|m| m.local_frequency.f64()).fold(0.0, f64::max).max(1e-3);
    let sense: f64 = schedule.segments.iter().filter(|g| g.stage == Stage::Sense).map(|g| g.duration()).sum();
    let horizon = 10.0 * sense.max(1.0 / f_well);

    // Keep going at the final bias, undriven, until |phi'| stays below the
    // threshold for one well period.
    let hold = Segment {
        t_start: s.time,
        t_end: s.time + horizon,
        bias: crate::protocol::BiasFn::Constant(final_bias),
        drive: crate::protocol::DriveFn::Zero,
        stage: Stage::Sense,
    };
    let period = 1.0 / f_well;
    let threshold = T::of(ccfg.settle_velocity);
    let n = (horizon / dt).ceil() as usize;
    let h = horizon / n as f64;
    let mut quiet_since = (s.phi_dot.abs() < threshold).then_some(s.time);
    let mut settled_at = None;
    for _ in 0..n {
        if let Some(t) = quiet_since {
            if s.time - t >= period {
                settled_at = Some(s.time);
                break;
            }
        }
        model.rk4(&hold, &mut s, h);
        if s.phi_dot.abs() < threshold {
            quiet_since.get_or_insert(s.time);
        } else {
            quiet_since = None;
        }
    }
    let phi_final = s.phi.f64();
    let on_barrier = shape.kind == ShapeKind::DoubleWell && (phi_final - barrier).abs() < 1e-3;
    let assigned = match settled_at {
        Some(_) if !on_barrier && phi_final != barrier => Some(if phi_final < barrier { Assignment::L } else { Assignment::R }),
        _ => None,
    };
    Ok(ClassicalOutcome { assigned, phi_final, settled_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{BiasFn, DriveFn, Markers};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn static_schedule(duration: f64, bias: FluxBias<f64>) -> Schedule {
        let seg = Segment { t_start: 0.0, t_end: duration, bias: BiasFn::Constant(bias), drive: DriveFn::Zero, stage: Stage::Ready };
        Schedule::new(vec![seg], Markers { t2: duration, ..Default::default() }).unwrap()
    }

    #[test]
    fn rest_at_origin_stays() {
        let p = DeviceParams::<f64>::reference();
        let sched = static_schedule(0.2, FluxBias::new(FRAC_PI_2, 0.0));
        let tr = evolve_classical(&p, &sched, DEFAULT_GAMMA, ClassicalState::at_rest(0.0, 0.0), 1e-4).unwrap();
        assert!(tr.iter().all(|s| s.phi == 0.0 && s.phi_dot == 0.0));
    }

    #[test]
    fn undamped_period_is_lc() {
        let p = DeviceParams::<f64>::reference();
        let f_lc = derive_energies(&p).unwrap().f_lc();
        let sched = static_schedule(0.5, FluxBias::new(FRAC_PI_2, 0.0));
        let tr = evolve_classical(&p, &sched, 0.0, ClassicalState::at_rest(0.1, 0.0), 1e-4).unwrap();
        // Upward zero crossings of phi', linearly interpolated.
        let mut ups = Vec::new();
        for w in tr.windows(2) {
            if w[0].phi_dot < 0.0 && w[1].phi_dot >= 0.0 {
                let u = w[0].phi_dot / (w[0].phi_dot - w[1].phi_dot);
                ups.push(w[0].time + u * (w[1].time - w[0].time));
            }
        }
        let period = (ups[ups.len() - 1] - ups[0]) / (ups.len() - 1) as f64;
        assert!((1.0 / period / f_lc - 1.0).abs() < 1e-3, "{} vs {f_lc}", 1.0 / period);
    }

    #[test]
    fn energy_conserved_without_damping() {
        let p = DeviceParams::<f64>::reference();
        let bias = FluxBias::new(PI, 0.0);
        let m = ClassicalModel::new(&p, 0.0).unwrap();
        let sched = static_schedule(1.0, bias);
        let tr = evolve_classical(&p, &sched, 0.0, ClassicalState::at_rest(-2.0, 0.0), 1e-5).unwrap();
        let e0 = m.energy(&tr[0], &bias, 0.0);
        let worst = tr.iter().map(|s| ((m.energy(s, &bias, 0.0) - e0) / e0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "relative drift {worst:e}");
    }

    #[test]
    fn harmonic_energy_decays_at_gamma() {
        let p = DeviceParams::<f64>::reference();
        let bias = FluxBias::new(FRAC_PI_2, 0.0);
        let m = ClassicalModel::new(&p, DEFAULT_GAMMA).unwrap();
        let sched = static_schedule(0.2, bias);
        let tr = evolve_classical(&p, &sched, DEFAULT_GAMMA, ClassicalState::at_rest(0.5, 0.0), 1e-4).unwrap();
        // Fit log E against t over whole periods to average the ripple.
        let period = 1.0 / derive_energies(&p).unwrap().f_lc();
        let k = (period / 1e-4).round() as usize;
        let e = |i: usize| m.energy(&tr[i], &bias, 0.0);
        let n = (tr.len() - 1) / k * k;
        let avg = |a: usize| (a..a + k).map(e).sum::<f64>() / k as f64;
        let rate = (avg(0) / avg(n - k)).ln() / (tr[n - k].time - tr[0].time);
        assert!((rate / DEFAULT_GAMMA - 1.0).abs() < 0.05, "rate {rate}");
    }

    #[test]
    fn rejects_coarse_step() {
        let p = DeviceParams::<f64>::reference();
        let sched = static_schedule(0.1, FluxBias::new(PI, 0.0));
        assert!(evolve_classical(&p, &sched, 0.0, ClassicalState::at_rest(-2.0, 0.0), 1e-3).is_err());
    }

    #[test]
    fn symmetric_detection() {
        let p = DeviceParams::<f64>::reference();
        let cfg = ProtocolConfig::default();
        let cc = ClassicalConfig::default();
        assert_eq!(classical_assignment(&p, &cfg, 0.0, &cc).unwrap().assigned, Some(Assignment::L));
        assert_eq!(classical_assignment(&p, &cfg, PI, &cc).unwrap().assigned, Some(Assignment::R));
        let idle = ProtocolConfig { amplitude_n: 0.0, ..cfg };
        assert_eq!(classical_assignment(&p, &idle, 0.0, &cc).unwrap().assigned, None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mirror_symmetry(phi0 in -1.0f64..1.0, v0 in -50.0f64..50.0) {
            // U(-phi) = U(phi) at phi- = 0 for symmetric junctions.
            let p = DeviceParams::<f64>::reference();
            let sched = static_schedule(0.05, FluxBias::new(2.8, 0.0));
            let a = evolve_classical(&p, &sched, DEFAULT_GAMMA, ClassicalState { phi: phi0, phi_dot: v0, time: 0.0 }, 1e-4).unwrap();
            let b = evolve_classical(&p, &sched, DEFAULT_GAMMA, ClassicalState { phi: -phi0, phi_dot: -v0, time: 0.0 }, 1e-4).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.phi + y.phi).abs() < 1e-9);
            }
        }
    }
}
