//! Time evolution on the phase grid.
//!
//! The Lindblad dissipator with L = sqrt(gamma) a, a = (phi/lambda + i lambda n)/sqrt 2,
//! splits exactly into
//!
//! D(rho) = -(gamma / 4 lambda^2) [phi, [phi, rho]] - (gamma lambda^2 / 4) [n, [n, rho]]
//!          - (i gamma / 4) ([phi, {n, rho}] - [n, {phi, rho}]).
//!
//! The first term is diagonal in position, the second in momentum, so together
//! with the potential and kinetic parts they are integrated exactly. The last
//! (friction) term is stepped with RK4. One step is the symmetric sequence
//! Q(h/2) P(h/2) F(h) P(h/2) Q(h/2), second order in h.
//!
//! While the flux bias moves, the state falls through several thousand GHz of
//! potential and picks up momenta far beyond what the drive-stage grid
//! resolves. An optional switch grid is used from the start of every bias
//! ramp until `settle` after its end. Static double-well stretches after that
//! run on an optional hold grid, harmonic ones on the drive grid. States are
//! carried between grids by band-limited interpolation or its adjoint.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::grid::PhaseGrid;
use super::operators::{build_operators, DerivativeScheme, OperatorSet};
use super::reference::DenseModel;
use super::spectral::{hermitize, transpose, Transforms};
use super::state::{DensityMatrix, QuantumState, SimulationMode, StateData};
use super::well_probabilities;
use crate::circuit::{derive_energies, DeviceParams, EnergyScales, FluxBias};
use crate::error::{config, Error, Result};
use crate::potential::{analyze_shape, ShapeKind, ShapeOptions};
use crate::protocol::{BiasFn, Schedule, Segment, Stage};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Exact position/momentum sub-flows with an RK4 friction step.
    #[default]
    SplitOperator,
    /// Classical RK4 on the full master equation with dense operators. Only
    /// practical on small grids; kept as an independent reference.
    Rk4,
}

/// Grid used around bias ramps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchGrid {
    pub phi_min: f64,
    pub phi_max: f64,
    pub n_points: usize,
    /// Time kept on this grid after a ramp ends, ps.
    pub settle: f64,
    /// Ramps longer than this, ps, stay on the resting grid. Slow ramps
    /// leave the state close to the instantaneous wells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ramp: Option<f64>,
}

/// Grid used while the bias sits in a double-well configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldGrid {
    pub phi_min: f64,
    pub phi_max: f64,
    pub n_points: usize,
}

/// Numerical settings of the quantum engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub phi_min: f64,
    pub phi_max: f64,
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_grid: Option<SwitchGrid>,
    /// Without one, static double-well segments use the drive grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_grid: Option<HoldGrid>,
    pub scheme: DerivativeScheme,
    pub mode: SimulationMode,
    pub integrator: Integrator,
    /// Relaxation rate, 1/ns.
    pub gamma: f64,
    /// Step in segments whose bias stays harmonic, ps.
    pub dt_harmonic: f64,
    /// Step everywhere else, ps.
    pub dt_switching: f64,
    /// Largest tolerated |trace - 1| after any step.
    pub trace_tolerance: f64,
    /// Most negative tolerated eigenvalue of the final density matrix.
    pub positivity_tolerance: f64,
}

/// 1/gamma = 7 ps.
pub const DEFAULT_GAMMA: f64 = 1.0 / 0.007;

impl Default for EngineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EngineConfig {
    /// 128 points on [-4.5, 4.5] in the harmonic configuration, 256 on
    /// [-6, 6] around ramps, 160 on [-4.5, 4.5] in the double well, 0.1 ps
    /// steps.
    pub fn desk() -> Self {
        Self {
            phi_min: -4.5,
            phi_max: 4.5,
            n_points: 128,
            switch_grid: Some(SwitchGrid { phi_min: -6.0, phi_max: 6.0, n_points: 256, settle: 40.0, max_ramp: Some(1000.0) }),
            hold_grid: Some(HoldGrid { phi_min: -4.5, phi_max: 4.5, n_points: 160 }),
            scheme: DerivativeScheme::Spectral,
            mode: SimulationMode::DensityMatrix,
            integrator: Integrator::SplitOperator,
            gamma: DEFAULT_GAMMA,
            dt_harmonic: 0.1,
            dt_switching: 0.1,
            trace_tolerance: 1e-9,
            positivity_tolerance: 1e-8,
        }
    }

    /// Twice the desk resolution in phase, 0.02 ps steps away from the
    /// harmonic configuration.
    pub fn paper() -> Self {
        Self {
            phi_min: -6.0,
            phi_max: 6.0,
            n_points: 256,
            switch_grid: Some(SwitchGrid { phi_min: -6.0, phi_max: 6.0, n_points: 512, settle: 120.0, max_ramp: None }),
            hold_grid: None,
            dt_switching: 0.02,
            ..Self::desk()
        }
    }

    /// Single grid, no switch grid.
    pub fn single_grid(phi_min: f64, phi_max: f64, n_points: usize) -> Self {
        Self { phi_min, phi_max, n_points, switch_grid: None, hold_grid: None, ..Self::desk() }
    }

    pub fn grid<T: Real>(&self) -> Result<PhaseGrid<T>> {
        PhaseGrid::new(T::of(self.phi_min), T::of(self.phi_max), self.n_points)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(config("engine.gamma must be non-negative"));
        }
        if !(self.dt_harmonic > 0.0 && self.dt_switching > 0.0) {
            return Err(config("engine time steps must be positive"));
        }
        if self.mode == SimulationMode::PureState && self.gamma > 0.0 {
            return Err(config("pure-state mode requires gamma = 0"));
        }
        if !(self.trace_tolerance > 0.0 && self.positivity_tolerance >= 0.0) {
            return Err(config("engine tolerances must be positive"));
        }
        if let Some(s) = &self.switch_grid {
            if !(s.settle >= 0.0 && s.settle.is_finite()) {
                return Err(config("engine.switch_grid.settle must be non-negative"));
            }
            if s.max_ramp.is_some_and(|m| !(m > 0.0)) {
                return Err(config("engine.switch_grid.max_ramp must be positive"));
            }
        }
        // States are matched to their grid by dimension.
        let mut dims = vec![self.n_points];
        dims.extend(self.switch_grid.map(|g| g.n_points));
        dims.extend(self.hold_grid.map(|g| g.n_points));
        let mut sorted = dims.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != dims.len() {
            return Err(config("engine grids must have distinct point counts"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// <phi>, rad.
    Phi,
    /// <phi^2>, rad^2.
    Phi2,
    /// <n>.
    N,
    /// <H(t)>, rad/ns.
    Energy,
    PLeft,
    PRight,
    Trace,
}

/// What to keep while evolving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSpec {
    /// Sampling interval, ns.
    pub stride: f64,
    pub observables: Vec<Observable>,
    /// Position separating the wells for PLeft/PRight.
    pub barrier: f64,
    /// Sample after every step inside this window.
    pub dense_window: Option<(f64, f64)>,
    /// Interval of |psi(phi)|^2 snapshots, ns.
    pub snapshot_stride: Option<f64>,
}

impl Default for RecordSpec {
    fn default() -> Self {
        Self {
            stride: 1e-3,
            observables: vec![Observable::Phi, Observable::PLeft, Observable::PRight],
            barrier: 0.0,
            dense_window: None,
            snapshot_stride: None,
        }
    }
}

/// State summary at the end of a schedule segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub t_end: f64,
    pub stage: Stage,
    pub p_left: f64,
    pub phi_mean: f64,
}

/// Grid populations at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub phi_min: f64,
    pub spacing: f64,
    pub populations: Vec<f64>,
}

/// One move between grids; `loss` is the probability that did not survive
/// the interpolation (renormalized away).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridTransfer {
    pub time: f64,
    pub from_points: usize,
    pub to_points: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub columns: Vec<(Observable, Vec<f64>)>,
    pub snapshots: Vec<Snapshot>,
    pub segments: Vec<SegmentSummary>,
    pub transfers: Vec<GridTransfer>,
    /// Number of integration steps taken.
    pub steps: usize,
    /// Largest |trace - 1| seen.
    pub max_trace_drift: f64,
    /// Smallest eigenvalue of the final density matrix (density mode).
    pub min_eigenvalue: Option<f64>,
}

impl Trajectory {
    pub fn column(&self, obs: Observable) -> Option<&[f64]> {
        self.columns.iter().find(|c| c.0 == obs).map(|c| c.1.as_slice())
    }
}

type C<T> = Complex<T>;

fn czero<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

/// Periodic band-limited interpolation kernel of an n-point grid with
/// spacing h (Nyquist term split symmetrically).
fn dirichlet(u: f64, n: usize, h: f64) -> f64 {
    let x = std::f64::consts::PI * u / h;
    let s = (x / n as f64).sin();
    if s.abs() < 1e-12 {
        return if n % 2 == 0 { (x.cos() * (x / n as f64).cos()).signum() } else { 1.0 };
    }
    if n % 2 == 0 {
        x.sin() * (x / n as f64).cos() / (n as f64 * s)
    } else {
        x.sin() / (n as f64 * s)
    }
}

/// Matrix carrying grid amplitudes from `from` to `to`, row-major
/// to.n x from.n. Points of `to` outside `from` get zero.
fn interpolation_matrix<T: Real>(from: &PhaseGrid<T>, to: &PhaseGrid<T>) -> Vec<f64> {
    let (nf, nt) = (from.n_points, to.n_points);
    let hf = from.spacing.f64();
    let scale = (to.spacing.f64() / hf).sqrt();
    let (lo, hi) = (from.phi_min.f64() - 0.5 * hf, from.phi_max.f64() + 0.5 * hf);
    let xf: Vec<f64> = from.points().iter().map(|x| x.f64()).collect();
    let mut m = vec![0.0; nt * nf];
    for j in 0..nt {
        let x = to.point(j).f64();
        if x < lo || x > hi {
            continue;
        }
        for (i, &xi) in xf.iter().enumerate() {
            m[j * nf + i] = scale * dirichlet(x - xi, nf, hf);
        }
    }
    m
}

/// Scratch matrices for density-matrix steps.
struct Work<T: Real> {
    a: Vec<C<T>>,
    b: Vec<C<T>>,
    term: Vec<C<T>>,
    acc: Vec<C<T>>,
    y: Vec<C<T>>,
    w: Vec<C<T>>,
}

impl<T: Real> Work<T> {
    fn new(n: usize) -> Self {
        let z = vec![czero(); n * n];
        Self { a: z.clone(), b: z.clone(), term: z.clone(), acc: z.clone(), y: z.clone(), w: z }
    }
}

/// Momentum factors of one step length, laid out as [k'][k].
struct MomentumFactors<T> {
    tau: f64,
    q: Vec<C<T>>,
}

/// Operators and integrator caches of one grid.
struct Level<T: Real> {
    ops: OperatorSet<T>,
    gamma: f64,
    fft: Transforms<T>,
    work: Option<Work<T>>,
    momentum_cache: Vec<MomentumFactors<T>>,
    friction_radius: Option<f64>,
    dense: Option<DenseModel>,
}

impl<T: Real> Level<T> {
    fn new(ops: OperatorSet<T>, gamma: f64) -> Self {
        Self {
            fft: Transforms::new(ops.dim()),
            ops,
            gamma,
            work: None,
            momentum_cache: Vec::new(),
            friction_radius: None,
            dense: None,
        }
    }

    fn dim(&self) -> usize {
        self.ops.dim()
    }

    fn potential_phases(&self, seg: &Segment, cpp: f64, t_mid: f64, tau: f64) -> Vec<C<T>> {
        let bias = seg.bias_at(t_mid).cast::<T>();
        let phi_d = T::of(seg.drive.at(t_mid) / cpp);
        let tau = T::of(tau);
        self.ops
            .potential_diagonal(&bias, phi_d)
            .into_iter()
            .map(|v| Complex::from_polar(T::one(), -v * tau))
            .collect()
    }

    /// Same splitting as the density path: K(h/2) V(h) K(h/2).
    fn pure_step(&mut self, psi: &mut Vec<C<T>>, seg: &Segment, cpp: f64, t: f64, h: f64) {
        let e = self.potential_phases(seg, cpp, t + 0.5 * h, h);
        let norm = T::one() / T::of(self.dim() as f64);
        let hk = T::of(0.5 * h);
        let kinetic = &self.ops.kinetic.momentum;
        let half_kick = |fft: &mut Transforms<T>, psi: &mut Vec<C<T>>| {
            fft.forward(psi);
            for (z, k) in psi.iter_mut().zip(kinetic) {
                *z = *z * Complex::from_polar(norm, -k.re * hk);
            }
            fft.inverse(psi);
        };
        half_kick(&mut self.fft, psi);
        for (z, f) in psi.iter_mut().zip(&e) {
            *z = *z * *f;
        }
        half_kick(&mut self.fft, psi);
    }

    fn momentum_factors(&mut self, tau: f64) -> usize {
        if let Some(i) = self.momentum_cache.iter().position(|m| m.tau == tau) {
            return i;
        }
        let n = self.dim();
        let l2 = self.ops.lambda * self.ops.lambda;
        let c = T::of(self.gamma) * l2 / T::of(4.0) * T::of(tau);
        let tk = T::of(tau);
        let norm = T::one() / T::of((n * n) as f64);
        let kin: Vec<T> = self.ops.kinetic.momentum.iter().map(|z| z.re).collect();
        let s = &self.ops.n_symbol;
        let mut q = vec![czero(); n * n];
        for kp in 0..n {
            for k in 0..n {
                let d = s[k] - s[kp];
                q[kp * n + k] = Complex::from_polar(norm * (-c * d * d).exp(), -(kin[k] - kin[kp]) * tk);
            }
        }
        if self.momentum_cache.len() >= 8 {
            self.momentum_cache.remove(0);
        }
        self.momentum_cache.push(MomentumFactors { tau, q });
        self.momentum_cache.len() - 1
    }

    /// rho <- exp(tau Q) rho, Q the kinetic plus momentum-decoherence generator.
    fn momentum_flow(&mut self, rho: &mut [C<T>], work: &mut Work<T>, tau: f64) {
        let idx = self.momentum_factors(tau);
        let n = self.dim();
        self.fft.inverse(rho);
        transpose(rho, &mut work.b, n);
        self.fft.forward(&mut work.b);
        for (z, f) in work.b.iter_mut().zip(&self.momentum_cache[idx].q) {
            *z = *z * *f;
        }
        self.fft.inverse(&mut work.b);
        transpose(&work.b, rho, n);
        self.fft.forward(rho);
    }

    /// rho <- exp(tau P) rho with the potential phases `e` (already for tau)
    /// and the position decoherence factors `decay`.
    fn position_flow(&self, rho: &mut [C<T>], e: &[C<T>], decay: &[T]) {
        let n = self.dim();
        for i in 0..n {
            let row = &mut rho[i * n..(i + 1) * n];
            for (j, z) in row.iter_mut().enumerate() {
                *z = *z * (e[i] * e[j].conj()) * decay[i.abs_diff(j)];
            }
        }
    }

    fn position_decay(&self, tau: f64) -> Vec<T> {
        let l2 = self.ops.lambda * self.ops.lambda;
        let c = T::of(self.gamma) / (T::of(4.0) * l2) * T::of(tau);
        let dx = self.ops.grid.spacing;
        (0..self.dim())
            .map(|m| {
                let x = dx * T::of(m as f64);
                (-c * x * x).exp()
            })
            .collect()
    }

    /// out = F(r), F the friction part of the dissipator.
    fn friction(&mut self, r: &[C<T>], out: &mut [C<T>], y: &mut [C<T>], w: &mut [C<T>]) {
        let n = self.dim();
        let phi = &self.ops.phi;
        y.copy_from_slice(r);
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = r[i * n + j] * (phi[i] + phi[j]);
            }
        }
        self.fft.right_multiply(y, &self.ops.n_symbol);
        self.fft.right_multiply(w, &self.ops.n_symbol);
        let g = T::of(self.gamma) / T::of(4.0);
        // Tiled: the transposed reads would otherwise miss cache on large grids.
        const B: usize = 16;
        for ib in (0..n).step_by(B) {
            for jb in (0..n).step_by(B) {
                for i in ib..(ib + B).min(n) {
                    for j in jb..(jb + B).min(n) {
                        let anti = y[i * n + j] + y[j * n + i].conj();
                        let comm = w[j * n + i].conj() - w[i * n + j];
                        let v = anti * (phi[i] - phi[j]) - comm;
                        // -i g v
                        out[i * n + j] = Complex::new(v.im * g, -v.re * g);
                    }
                }
            }
        }
    }

    /// Largest |eigenvalue| of the friction superoperator, by power iteration.
    fn friction_radius(&mut self) -> f64 {
        if let Some(r) = self.friction_radius {
            return r;
        }
        let n = self.dim();
        let mut r: Vec<C<T>> = (0..n * n)
            .map(|k| {
                let (i, j) = ((k / n) as f64, (k % n) as f64);
                Complex::new(T::of((1.3 * i + 0.7 * j).sin() + (0.37 * i * j).cos()), T::zero())
            })
            .collect();
        hermitize(&mut r, n);
        let mut out = vec![czero(); n * n];
        let mut y = vec![czero(); n * n];
        let mut w = vec![czero(); n * n];
        let norm = |m: &[C<T>]| m.iter().map(|z| z.norm_sqr().f64()).sum::<f64>().sqrt();
        let mut est: f64 = 0.0;
        for it in 0..60 {
            let a = norm(&r);
            self.friction(&r, &mut out, &mut y, &mut w);
            let b = norm(&out);
            if it >= 40 {
                est = est.max(b / a);
            }
            let s = T::of(1.0 / b.max(f64::MIN_POSITIVE));
            for (x, o) in r.iter_mut().zip(&out) {
                *x = *o * s;
            }
        }
        self.friction_radius = Some(est);
        est
    }

    /// rho <- exp(h F) rho to fourth order (RK4 for a linear autonomous flow).
    fn friction_flow(&mut self, rho: &mut [C<T>], work: &mut Work<T>, h: f64) {
        if self.gamma == 0.0 {
            return;
        }
        // RK4 is stable up to |h lambda| = 2 sqrt 2 on the imaginary axis.
        let subs = ((h * self.friction_radius()) / 2.6).ceil().max(1.0) as usize;
        let hs = h / subs as f64;
        for _ in 0..subs {
            work.acc.copy_from_slice(rho);
            work.term.copy_from_slice(rho);
            for k in 1..=4 {
                let (term, a, y, w) = (&mut work.term, &mut work.a, &mut work.y, &mut work.w);
                self.friction(term, a, y, w);
                let f = T::of(hs / k as f64);
                for ((t, x), acc) in term.iter_mut().zip(a.iter()).zip(work.acc.iter_mut()) {
                    *t = *x * f;
                    *acc += *t;
                }
            }
            rho.copy_from_slice(&work.acc);
        }
    }
}

/// Moves `state` between grids with `m` from [`interpolation_matrix`].
/// Returns the lost probability before renormalization.
fn transfer_state<T: Real>(state: &mut QuantumState<T>, m: &[f64], n_to: usize) -> f64 {
    let n_from = state.dim();
    let mc = |j: usize, i: usize| T::of(m[j * n_from + i]);
    let loss;
    state.data = match &state.data {
        StateData::Pure(psi) => {
            let mut out: Vec<C<T>> = (0..n_to)
                .map(|j| psi.iter().enumerate().fold(czero(), |s, (i, z)| s + *z * mc(j, i)))
                .collect();
            let norm: T = out.iter().map(|z| z.norm_sqr()).sum();
            loss = 1.0 - norm.f64();
            let s = T::one() / norm.sqrt();
            out.iter_mut().for_each(|z| *z = *z * s);
            StateData::Pure(out)
        }
        StateData::Density(rho) => {
            // tmp = rho M^T (n_from x n_to), out = M tmp.
            let mut tmp = vec![czero::<T>(); n_from * n_to];
            for r in 0..n_from {
                let row = &rho.data[r * n_from..(r + 1) * n_from];
                for j in 0..n_to {
                    tmp[r * n_to + j] = row.iter().enumerate().fold(czero(), |s, (i, z)| s + *z * mc(j, i));
                }
            }
            let mut out = vec![czero::<T>(); n_to * n_to];
            for j in 0..n_to {
                for r in 0..n_from {
                    let f = mc(j, r);
                    if f == T::zero() {
                        continue;
                    }
                    let src = &tmp[r * n_to..(r + 1) * n_to];
                    for (o, s) in out[j * n_to..(j + 1) * n_to].iter_mut().zip(src) {
                        *o += *s * f;
                    }
                }
            }
            hermitize(&mut out, n_to);
            let tr: T = (0..n_to).map(|k| out[k * n_to + k].re).sum();
            loss = 1.0 - tr.f64();
            let s = T::one() / tr;
            out.iter_mut().for_each(|z| *z = *z * s);
            StateData::Density(DensityMatrix { n: n_to, data: out })
        }
    };
    loss
}

/// Quantum simulator of one device.
pub struct QuantumEngine<T: Real> {
    pub config: EngineConfig,
    pub params: DeviceParams<T>,
    pub scales: EnergyScales<f64>,
    /// Drive grid, then switch and hold grids when configured.
    levels: Vec<Level<T>>,
    switch_level: Option<usize>,
    hold_level: Option<usize>,
    transfers: Vec<((usize, usize), Vec<f64>)>,
}

impl<T: Real> QuantumEngine<T> {
    pub fn new(params: &DeviceParams<T>, config: &EngineConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid::<T>()?;
        let mut levels = vec![Level::new(build_operators(&grid, params, config.scheme)?, config.gamma)];
        let mut add = |lo: f64, hi: f64, n: usize| -> Result<usize> {
            let g = PhaseGrid::new(T::of(lo), T::of(hi), n)?;
            levels.push(Level::new(build_operators(&g, params, config.scheme)?, config.gamma));
            Ok(levels.len() - 1)
        };
        let switch_level = config.switch_grid.map(|s| add(s.phi_min, s.phi_max, s.n_points)).transpose()?;
        let hold_level = config.hold_grid.map(|s| add(s.phi_min, s.phi_max, s.n_points)).transpose()?;
        let scales = derive_energies(&params.cast::<f64>())?;
        Ok(Self { config: *config, params: *params, scales, levels, switch_level, hold_level, transfers: Vec::new() })
    }

    /// Operators of the drive-stage grid, on which states start.
    pub fn ops(&self) -> &OperatorSet<T> {
        &self.levels[0].ops
    }

    /// Operators of the switch grid, if configured.
    pub fn switch_ops(&self) -> Option<&OperatorSet<T>> {
        self.switch_level.map(|l| &self.levels[l].ops)
    }

    /// Operators of the hold grid, if configured.
    pub fn hold_ops(&self) -> Option<&OperatorSet<T>> {
        self.hold_level.map(|l| &self.levels[l].ops)
    }

    /// Operators whose grid a state of dimension `dim` lives on.
    pub fn ops_for(&self, dim: usize) -> Option<&OperatorSet<T>> {
        self.levels.iter().find(|l| l.dim() == dim).map(|l| &l.ops)
    }

    fn level_of(&self, dim: usize) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l.dim() == dim)
            .ok_or(Error::DimensionMismatch { expected: self.levels[0].dim(), got: dim })
    }

    /// Drive displacement phi_d = 2 pi L I / Phi0 for a current in uA.
    pub fn drive_phase(&self, current: f64) -> T {
        T::of(current / self.scales.current_per_phase)
    }

    /// Ground state at `bias` on the drive-stage grid, in the configured mode.
    pub fn initial_state(&self, bias: &FluxBias<f64>) -> Result<QuantumState<T>> {
        let (g, _) = super::ground_state(self.ops(), &bias.cast())?;
        g.into_mode(self.config.mode)
    }

    /// Well probabilities of a state on any of the engine's grids.
    pub fn well_probabilities(&self, state: &QuantumState<T>, barrier: f64) -> Result<(f64, f64)> {
        let lvl = self.level_of(state.dim())?;
        let (l, r) = well_probabilities(&self.levels[lvl].ops, state, T::of(barrier));
        Ok((l.f64(), r.f64()))
    }

    /// Step length and whether the bias stays harmonic over `seg`.
    fn dt_for(&self, seg: &Segment) -> Result<(f64, bool)> {
        let opts = ShapeOptions::default();
        let pot = &self.ops().potential;
        let mut f_max: f64 = 0.0;
        let mut harmonic = true;
        for u in [0.0, 0.5, 1.0] {
            let b = seg.bias_at(seg.t_start + u * seg.duration()).cast::<T>();
            let shape = analyze_shape(pot, &b, &opts)?;
            harmonic &= shape.kind == ShapeKind::Harmonic;
            for m in &shape.minima {
                f_max = f_max.max(m.local_frequency.f64());
            }
        }
        let dt = 1e-3 * if harmonic { self.config.dt_harmonic } else { self.config.dt_switching };
        if f_max > 0.0 && dt > 1.0 / (20.0 * f_max) {
            return Err(config(format!(
                "time step {:.3} ps does not resolve the {:.1} GHz well frequency (need <= {:.3} ps)",
                dt * 1e3,
                f_max,
                1e3 / (20.0 * f_max)
            )));
        }
        Ok((dt, harmonic))
    }

    /// Band-limited map between two levels: interpolation onto a finer
    /// grid, the adjoint (projection) onto a coarser one. Sampling instead
    /// of projecting would alias momenta above the coarse Nyquist limit.
    fn transfer_matrix(&mut self, from: usize, to: usize) -> &[f64] {
        let pos = match self.transfers.iter().position(|t| t.0 == (from, to)) {
            Some(p) => p,
            None => {
                let (a, b) = (&self.levels[from].ops.grid, &self.levels[to].ops.grid);
                let m = if b.spacing > a.spacing {
                    let (nf, nt) = (a.n_points, b.n_points);
                    let up = interpolation_matrix(b, a);
                    (0..nt * nf).map(|k| up[(k % nf) * nt + k / nf]).collect()
                } else {
                    interpolation_matrix(a, b)
                };
                self.transfers.push(((from, to), m));
                self.transfers.len() - 1
            }
        };
        &self.transfers[pos].1
    }

    /// Time windows spent on the switch grid.
    fn switch_windows(&self, schedule: &Schedule) -> Vec<(f64, f64)> {
        let Some(sg) = &self.config.switch_grid else { return Vec::new() };
        let mut out: Vec<(f64, f64)> = Vec::new();
        for seg in &schedule.segments {
            if let BiasFn::Ramp { from, to, .. } = seg.bias {
                if from == to || sg.max_ramp.is_some_and(|m| seg.duration() > 1e-3 * m) {
                    continue;
                }
                let w = (seg.t_start, seg.t_end + 1e-3 * sg.settle);
                match out.last_mut() {
                    Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
                    _ => out.push(w),
                }
            }
        }
        out
    }

    /// Integrates `state` over the whole schedule. The state must start on
    /// the drive-stage grid; it ends on whichever grid is active at the end.
    pub fn evolve(&mut self, state: &mut QuantumState<T>, schedule: &Schedule, record: &RecordSpec) -> Result<Trajectory> {
        schedule.validate()?;
        let n0 = self.levels[0].dim();
        if state.dim() != n0 {
            return Err(Error::DimensionMismatch { expected: n0, got: state.dim() });
        }
        if self.config.mode == SimulationMode::PureState {
            if self.config.gamma > 0.0 {
                return Err(config("pure-state mode requires gamma = 0"));
            }
            if state.mode() != SimulationMode::PureState {
                return Err(config("pure-state mode needs a pure initial state"));
            }
        } else if state.mode() == SimulationMode::PureState {
            *state = state.to_density();
        }
        if self.config.integrator == Integrator::Rk4 && state.mode() == SimulationMode::PureState {
            return Err(config("the RK4 reference integrator works on density matrices"));
        }
        if !(record.stride > 0.0) {
            return Err(config("record stride must be positive"));
        }
        state.time = schedule.start();
        let mut traj = Trajectory {
            columns: record.observables.iter().map(|&o| (o, Vec::new())).collect(),
            ..Default::default()
        };
        let mut rec = Recorder { next: schedule.start(), next_snapshot: schedule.start() };
        self.record(0, state, schedule, record, &mut traj, &mut rec, true)?;
        let windows = self.switch_windows(schedule);
        let in_window = |t: f64| windows.iter().any(|w| t > w.0 && t < w.1);

        for seg in &schedule.segments {
            let (dt, harmonic) = self.dt_for(seg)?;
            let resting = if harmonic { 0 } else { self.hold_level.unwrap_or(0) };
            let mut cuts = vec![seg.t_start];
            for w in &windows {
                for c in [w.0, w.1] {
                    if c > seg.t_start + 1e-12 && c < seg.t_end - 1e-12 {
                        cuts.push(c);
                    }
                }
            }
            cuts.push(seg.t_end);
            cuts.sort_by(f64::total_cmp);
            for piece in cuts.windows(2) {
                let (ta, tb) = (piece[0], piece[1]);
                let want = match self.switch_level {
                    Some(l) if in_window(0.5 * (ta + tb)) => l,
                    _ => resting,
                };
                let have = self.level_of(state.dim())?;
                if want != have {
                    let n_to = self.levels[want].dim();
                    let loss = transfer_state(state, self.transfer_matrix(have, want), n_to);
                    traj.transfers.push(GridTransfer { time: ta, from_points: self.levels[have].dim(), to_points: n_to, loss });
                }
                let steps = (((tb - ta) / dt) - 1e-9).ceil().max(1.0) as usize;
                let h = (tb - ta) / steps as f64;
                self.integrate(want, state, seg, ta, steps, h, schedule, record, &mut traj, &mut rec)?;
            }
            state.time = seg.t_end;
            let lvl = self.level_of(state.dim())?;
            let (pl, _) = well_probabilities(&self.levels[lvl].ops, state, T::of(record.barrier));
            let phi_mean = mean_phi(&self.levels[lvl].ops, state);
            traj.segments.push(SegmentSummary { t_end: seg.t_end, stage: seg.stage, p_left: pl.f64(), phi_mean });
        }
        if let StateData::Density(rho) = &state.data {
            let m = rho.min_eigenvalue()?;
            traj.min_eigenvalue = Some(m);
            if m < -self.config.positivity_tolerance {
                return Err(Error::Numerics(format!("density matrix lost positivity (eigenvalue {m:e}); reduce dt")));
            }
        }
        Ok(traj)
    }

    #[allow(clippy::too_many_arguments)]
    fn integrate(
        &mut self,
        lvl: usize,
        state: &mut QuantumState<T>,
        seg: &Segment,
        t0: f64,
        steps: usize,
        h: f64,
        schedule: &Schedule,
        record: &RecordSpec,
        traj: &mut Trajectory,
        rec: &mut Recorder,
    ) -> Result<()> {
        let cpp = self.scales.current_per_phase;
        match (state.mode(), self.config.integrator) {
            (SimulationMode::PureState, _) => {
                for k in 0..steps {
                    let t = t0 + k as f64 * h;
                    if let StateData::Pure(psi) = &mut state.data {
                        self.levels[lvl].pure_step(psi, seg, cpp, t, h);
                    }
                    self.after_step(state, traj, t0 + (k + 1) as f64 * h)?;
                    self.record(lvl, state, schedule, record, traj, rec, false)?;
                }
            }
            (SimulationMode::DensityMatrix, Integrator::SplitOperator) => {
                self.split_piece(lvl, state, seg, t0, steps, h, schedule, record, traj, rec)?;
            }
            (SimulationMode::DensityMatrix, Integrator::Rk4) => {
                for k in 0..steps {
                    let t = t0 + k as f64 * h;
                    let level = &mut self.levels[lvl];
                    let v = |t: f64| level.ops.potential_diagonal(&seg.bias_at(t).cast(), T::of(seg.drive.at(t) / cpp));
                    let (v0, vm, v1) = (v(t), v(t + 0.5 * h), v(t + h));
                    let gamma = level.gamma;
                    let model = level.dense.get_or_insert_with(|| DenseModel::new(&level.ops, gamma));
                    if let StateData::Density(rho) = &mut state.data {
                        model.step(rho, [&v0, &vm, &v1], h);
                    }
                    self.after_step(state, traj, t0 + (k + 1) as f64 * h)?;
                    self.record(lvl, state, schedule, record, traj, rec, false)?;
                }
            }
        }
        Ok(())
    }

    fn after_step(&self, state: &mut QuantumState<T>, traj: &mut Trajectory, t: f64) -> Result<()> {
        state.time = t;
        traj.steps += 1;
        let drift = (state.trace().f64() - 1.0).abs();
        traj.max_trace_drift = traj.max_trace_drift.max(drift);
        if !(drift <= self.config.trace_tolerance) {
            return Err(Error::Numerics(format!(
                "trace drifted by {drift:e} at t = {t:.6} ns; reduce the time step"
            )));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        lvl: usize,
        state: &QuantumState<T>,
        schedule: &Schedule,
        spec: &RecordSpec,
        traj: &mut Trajectory,
        rec: &mut Recorder,
        force: bool,
    ) -> Result<()> {
        let t = state.time;
        let eps = 1e-9 * spec.stride;
        let dense = spec.dense_window.is_some_and(|(a, b)| t >= a - eps && t <= b + eps);
        let due = t >= rec.next - eps;
        let last = (t - schedule.end()).abs() <= 1e-12 * (1.0 + t.abs());
        let ops = &self.levels[lvl].ops;
        if force || due || dense || last {
            while rec.next <= t + eps {
                rec.next += spec.stride;
            }
            if !traj.times.last().is_some_and(|&p| (p - t).abs() <= 1e-15) {
                traj.times.push(t);
                let values = self.observe(lvl, state, schedule, spec, t)?;
                for ((_, col), v) in traj.columns.iter_mut().zip(values) {
                    col.push(v);
                }
            }
        }
        if let Some(stride) = spec.snapshot_stride {
            if t >= rec.next_snapshot - 1e-9 * stride || last {
                while rec.next_snapshot <= t + 1e-9 * stride {
                    rec.next_snapshot += stride;
                }
                traj.snapshots.push(Snapshot {
                    time: t,
                    phi_min: ops.grid.phi_min.f64(),
                    spacing: ops.grid.spacing.f64(),
                    populations: state.populations().into_iter().map(|p| p.f64()).collect(),
                });
            }
        }
        Ok(())
    }

    fn observe(&self, lvl: usize, state: &QuantumState<T>, schedule: &Schedule, spec: &RecordSpec, t: f64) -> Result<Vec<f64>> {
        let ops = &self.levels[lvl].ops;
        let pops = state.populations();
        let phi: f64 = ops.phi.iter().zip(&pops).map(|(x, p)| (*x * *p).f64()).sum();
        let needs_momentum = spec.observables.iter().any(|o| matches!(o, Observable::N | Observable::Energy));
        let pk = if needs_momentum { Some(momentum_populations(ops, state)) } else { None };
        let (pl, pr) = well_probabilities(ops, state, T::of(spec.barrier));
        let mut out = Vec::with_capacity(spec.observables.len());
        for obs in &spec.observables {
            let v = match obs {
                Observable::Phi => phi,
                Observable::Phi2 => ops.phi.iter().zip(&pops).map(|(x, p)| (*x * *x * *p).f64()).sum(),
                Observable::N => {
                    let pk = pk.as_ref().expect("computed above");
                    ops.n_symbol.iter().zip(pk).map(|(s, p)| (*s * *p).f64()).sum()
                }
                Observable::Energy => {
                    let pk = pk.as_ref().expect("computed above");
                    let (bias, current) = schedule.sample(t)?;
                    let v = ops.potential_diagonal(&bias.cast(), self.drive_phase(current));
                    let kin: f64 = ops.kinetic.momentum.iter().zip(pk).map(|(k, p)| (k.re * *p).f64()).sum();
                    let pot: f64 = v.iter().zip(&pops).map(|(a, b)| (*a * *b).f64()).sum();
                    kin + pot
                }
                Observable::PLeft => pl.f64(),
                Observable::PRight => pr.f64(),
                Observable::Trace => state.trace().f64(),
            };
            out.push(v);
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn split_piece(
        &mut self,
        lvl: usize,
        state: &mut QuantumState<T>,
        seg: &Segment,
        t0: f64,
        steps: usize,
        h: f64,
        schedule: &Schedule,
        record: &RecordSpec,
        traj: &mut Trajectory,
        rec: &mut Recorder,
    ) -> Result<()> {
        let cpp = self.scales.current_per_phase;
        let n = self.levels[lvl].dim();
        let mut work = self.levels[lvl].work.take().unwrap_or_else(|| Work::new(n));
        let decay = self.levels[lvl].position_decay(0.5 * h);
        let mut result = Ok(());
        if let StateData::Density(r) = &mut state.data {
            self.levels[lvl].momentum_flow(&mut r.data, &mut work, 0.5 * h);
        }
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            let t_next = t0 + (k + 1) as f64 * h;
            let level = &mut self.levels[lvl];
            let e = level.potential_phases(seg, cpp, t + 0.5 * h, 0.5 * h);
            let last = k + 1 == steps;
            let eps = 1e-9 * record.stride;
            let wants_record = last
                || t_next >= rec.next - eps
                || record.dense_window.is_some_and(|(a, b)| t_next >= a - eps && t_next <= b + eps)
                || record.snapshot_stride.is_some_and(|_| t_next >= rec.next_snapshot - eps);
            if let StateData::Density(r) = &mut state.data {
                let rho = &mut r.data;
                level.position_flow(rho, &e, &decay);
                level.friction_flow(rho, &mut work, h);
                level.position_flow(rho, &e, &decay);
                level.momentum_flow(rho, &mut work, if wants_record { 0.5 * h } else { h });
                hermitize(rho, n);
            }
            if let Err(e) = self.after_step(state, traj, t_next) {
                result = Err(e);
                break;
            }
            if wants_record {
                if let Err(e) = self.record(lvl, state, schedule, record, traj, rec, false) {
                    result = Err(e);
                    break;
                }
                if !last {
                    if let StateData::Density(r) = &mut state.data {
                        self.levels[lvl].momentum_flow(&mut r.data, &mut work, 0.5 * h);
                    }
                }
            }
        }
        self.levels[lvl].work = Some(work);
        result
    }
}

struct Recorder {
    next: f64,
    next_snapshot: f64,
}

fn mean_phi<T: Real>(ops: &OperatorSet<T>, state: &QuantumState<T>) -> f64 {
    let pops = state.populations();
    ops.phi.iter().zip(&pops).map(|(x, p)| (*x * *p).f64()).sum()
}

/// Momentum-space populations |psi(k)|^2 or diag(F rho F^dagger).
pub fn momentum_populations<T: Real>(ops: &OperatorSet<T>, state: &QuantumState<T>) -> Vec<T> {
    match &state.data {
        StateData::Pure(psi) => {
            let mut fft = Transforms::new(psi.len());
            let mut v = psi.clone();
            fft.forward(&mut v);
            let norm = T::one() / T::of(v.len() as f64);
            v.iter().map(|z| z.norm_sqr() * norm).collect()
        }
        StateData::Density(rho) => ops.momentum_populations(&rho.data),
    }
}
