//! Acceptance run: one PASS/FAIL line per criterion, 1 through 11.
//!
//! Figure configs from `configs/` run at the desk preset. Verdicts are
//! reported, not asserted; a criterion that cannot be evaluated at all is a
//! FAIL with the reason.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::Value;

use jdpd_cli::{run, Preset, RunReport, RunRequest};
use jdpd_core::circuit::{derive_energies, readout_frequency, ResonatorParams, WellSelect};
use jdpd_core::classical::{classical_assignment, ClassicalConfig};
use jdpd_core::detection::{build_schedule, run_protocol, Assignment, Sequence};
use jdpd_core::protocol::{BiasFn, DriveFn, Markers, ProtocolConfig, Schedule, Segment, Stage};
use jdpd_core::quantum::{EngineConfig, Observable, RecordSpec, SimulationMode};
use jdpd_core::{DeviceParams, FluxBias, QuantumEngine};

type Check = Result<(bool, String), String>;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

struct Ctx {
    scratch: tempfile::TempDir,
    runs: BTreeMap<String, RunReport>,
    counter: usize,
}

impl Ctx {
    fn run_threads(&mut self, name: &str, overrides: &[&str], threads: Option<usize>) -> Result<RunReport, String> {
        self.counter += 1;
        let out = self.scratch.path().join(format!("{:02}_{name}", self.counter));
        let req = RunRequest {
            config: config(name),
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
            preset: Some(Preset::Desk),
            threads,
            out: Some(out),
        };
        run(&req).map_err(|e| format!("{name}: {e}"))
    }

    /// Runs once per key and keeps the report.
    fn cached(&mut self, key: &str, name: &str, overrides: &[&str]) -> Result<RunReport, String> {
        if let Some(r) = self.runs.get(key) {
            return Ok(r.clone());
        }
        let r = self.run_threads(name, overrides, None)?;
        self.runs.insert(key.into(), r.clone());
        Ok(r)
    }
}

fn manifest(r: &RunReport) -> Result<Value, String> {
    let text = std::fs::read_to_string(&r.manifest).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn wall_clock(r: &RunReport) -> Result<f64, String> {
    manifest(r)?["wall_clock_seconds"].as_f64().ok_or_else(|| "no wall clock".into())
}

fn f(v: &Value, key: &str) -> Result<f64, String> {
    v[key].as_f64().ok_or_else(|| format!("missing number `{key}` in {v}"))
}

fn run_named<'a>(r: &'a RunReport, label: &str) -> Result<&'a Value, String> {
    r.results
        .as_array()
        .and_then(|a| a.iter().find(|x| x["run"] == label))
        .ok_or_else(|| format!("no run `{label}`"))
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x / target - 1.0).abs() <= rel
}

fn verdict(checks: &[(bool, String)]) -> (bool, String) {
    let pass = checks.iter().all(|c| c.0);
    let detail = checks
        .iter()
        .map(|(ok, s)| if *ok { s.clone() } else { format!("{s} [x]") })
        .collect::<Vec<_>>()
        .join("; ");
    (pass, detail)
}

fn c1(_: &mut Ctx) -> Check {
    let s = derive_energies(&DeviceParams::reference()).map_err(|e| e.to_string())?;
    Ok(verdict(&[
        (within(s.e_l, 743.0, 0.01), format!("E_L {:.1} h GHz", s.e_l)),
        (within(s.e_j, 2682.0, 0.01), format!("E_J {:.1} h GHz", s.e_j)),
        (within(2.0 * s.beta_l, 7.0, 0.05), format!("2 beta_L {:.3}", 2.0 * s.beta_l)),
        (within(s.sigma, 0.31, 0.05), format!("sigma {:.4} rad", s.sigma)),
    ]))
}

fn fig3(ctx: &mut Ctx) -> Result<RunReport, String> {
    ctx.cached("fig3", "fig3", &[])
}

fn c2(ctx: &mut Ctx) -> Check {
    let r = fig3(ctx)?;
    let zero = run_named(&r, "theta0")?;
    let pi = run_named(&r, "theta1")?;
    let none = run_named(&r, "undriven")?;
    let per_run = wall_clock(&r)? / 3.0;
    Ok(verdict(&[
        (f(zero, "p_left")? >= 0.999, format!("theta 0: p_left {:.6}", f(zero, "p_left")?)),
        (f(pi, "p_right")? >= 0.999, format!("theta pi: p_right {:.6}", f(pi, "p_right")?)),
        ((f(none, "p_left")? - 0.5).abs() <= 0.02, format!("undriven: p_left {:.6}", f(none, "p_left")?)),
        (per_run <= 120.0, format!("{per_run:.0} s per trajectory")),
    ]))
}

fn fig4b(ctx: &mut Ctx) -> Result<RunReport, String> {
    ctx.cached("fig4b", "fig4b", &["sweep.amplitude=[0.3, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0]"])
}

fn error_at(r: &RunReport, x: f64) -> Result<f64, String> {
    let xs = r.results["x"].as_array().ok_or("no x axis")?;
    let k = xs.iter().position(|v| v.as_f64() == Some(x)).ok_or_else(|| format!("x = {x} not swept"))?;
    r.results["error"][k].as_f64().ok_or_else(|| "missing error".into())
}

fn c3(ctx: &mut Ctx) -> Check {
    let e = error_at(&fig4b(ctx)?, 2.0)?;
    Ok((e <= 1e-3, format!("error at n = 2, 7 GHz, t_flip 50 ps: {e:.3e}")))
}

fn c4(ctx: &mut Ctx) -> Check {
    let r = fig4b(ctx)?;
    let e2 = error_at(&r, 2.0)?;
    let mut checks = Vec::new();
    for n in [1.0, 2.0, 4.0, 6.0] {
        let e = error_at(&r, n)?;
        checks.push((e <= 1e-3, format!("error({n}) {e:.2e}")));
    }
    for n in [0.3, 10.0] {
        let e = error_at(&r, n)?;
        checks.push((e >= 10.0 * e2, format!("error({n}) {e:.2e} vs 10 x error(2)")));
    }
    let t = wall_clock(&r)?;
    checks.push((t <= 900.0, format!("8-point sweep {t:.0} s")));
    Ok(verdict(&checks))
}

fn c5(ctx: &mut Ctx) -> Check {
    let r = ctx.cached("fig4c", "fig4c", &["sweep.fliptime=[0.35, 1.0, 5.0, 10.0, 30.0]"])?;
    let mut checks = Vec::new();
    for x in [0.35, 1.0, 5.0, 10.0] {
        let e = error_at(&r, x)?;
        checks.push((e <= 1e-2, format!("error({x} T) {e:.2e}")));
    }
    let (e10, e30) = (error_at(&r, 10.0)?, error_at(&r, 30.0)?);
    checks.push((e30 > e10, format!("error(30 T) {e30:.2e} > error(10 T)")));
    Ok(verdict(&checks))
}

fn c6(ctx: &mut Ctx) -> Check {
    let r = fig3(ctx)?;
    let zero = run_named(&r, "theta0")?;
    let ring = f(zero, "ringdown_freq")?;
    let well = f(zero, "well_frequency")?;
    Ok((within(ring, well, 0.10), format!("ringdown {ring:.2} GHz, curvature {well:.2} GHz")))
}

const PLUS_11: [&str; 2] = ["device.ic1=4.995", "device.ic2=4.005"];
const MINUS_11: [&str; 2] = ["device.ic1=4.005", "device.ic2=4.995"];

fn c7(ctx: &mut Ctx) -> Check {
    let mut checks = Vec::new();
    let mut wells = Vec::new();
    for (tag, dev) in [("+11%", PLUS_11), ("-11%", MINUS_11)] {
        let r = ctx.cached(&format!("fig8b{tag}"), "fig8b", &dev)?;
        let runs: Vec<&Value> = vec![run_named(&r, "theta0")?, run_named(&r, "theta1")?];
        let idle = run_named(&r, "undriven")?;
        let p = f(idle, "p_left")?.max(f(idle, "p_right")?);
        checks.push((p >= 0.999, format!("{tag} at phi- = 0, no drive: {} with p {p:.6}", idle["assigned"])));
        let same = runs.iter().all(|x| x["assigned"] == idle["assigned"]);
        checks.push((same, format!("{tag}: theta 0 and pi also in {}", idle["assigned"])));
        wells.push(idle["assigned"].clone());
    }
    checks.push((wells[0] != wells[1], "opposite asymmetries pick opposite wells".into()));

    let mut thetas = Vec::new();
    for (tag, dev) in [("+11%", PLUS_11), ("-11%", MINUS_11)] {
        let mut ov = dev.to_vec();
        ov.push("experiment=calibrate");
        let r = ctx.cached(&format!("cal{tag}"), "fig8b", &ov)?;
        let th = f(&r.results, "theta_symm")?;
        let pl = f(&r.results, "p_left")?;
        if tag == "+11%" {
            checks.push(((th - 0.46).abs() <= 0.05, format!("theta_symm(+11%) {th:.4} rad")));
        }
        checks.push(((pl - 0.5).abs() <= 0.02, format!("p_left at theta_symm({tag}) {pl:.4}")));
        thetas.push(th);
    }
    checks.push((
        (thetas[0] + thetas[1]).abs() <= 0.01,
        format!("theta_symm(-11%) {:.4} rad mirrors +11%", thetas[1]),
    ));
    Ok(verdict(&checks))
}

fn operable(v: &Value) -> Result<Vec<Vec<bool>>, String> {
    serde_json::from_value(v["operable"].clone()).map_err(|e| e.to_string())
}

fn c8(ctx: &mut Ctx) -> Check {
    let r = ctx.cached("fig8c", "fig8c", &[])?;
    let maps = r.results.as_array().ok_or("no maps")?;
    let by_ratio = |x: f64| -> Result<Vec<Vec<bool>>, String> {
        let m = maps.iter().find(|m| m["ratio"].as_f64() == Some(x)).ok_or_else(|| format!("no map for {x}"))?;
        operable(m)
    };
    let (minus, sym, plus) = (by_ratio(-0.11)?, by_ratio(0.0)?, by_ratio(0.11)?);
    let (ni, nj) = (sym.len(), sym[0].len());
    // Rows are phi-, columns phi+; the configs put pi and 0 / 0.46 on grid points.
    let pm: Vec<f64> = jdpd_core::detection::linspace(-0.92, 0.92, ni);
    let pp: Vec<f64> = jdpd_core::detection::linspace(0.6 * PI, 1.4 * PI, nj);
    let near = |xs: &[f64], x: f64| (0..xs.len()).min_by(|&a, &b| (xs[a] - x).abs().total_cmp(&(xs[b] - x).abs())).unwrap();
    let (jp, i0, i46) = (near(&pp, PI), near(&pm, 0.0), near(&pm, 0.46));
    let even = (0..ni).all(|i| sym[i] == sym[ni - 1 - i]);
    let mirror = (0..ni).all(|i| plus[i] == minus[ni - 1 - i]);
    let t = wall_clock(&r)?;
    Ok(verdict(&[
        (ni >= 21 && nj >= 21, format!("{ni} x {nj} grid")),
        (even, "symmetric map even in phi-".into()),
        (mirror, "+11% and -11% maps mirror in phi-".into()),
        (plus[i46][jp], format!("+11% operable at (pi, {:.2})", pm[i46])),
        (!plus[i0][jp], "+11% inoperable at (pi, 0)".into()),
        (t <= 600.0, format!("{t:.0} s")),
    ]))
}

fn c9(_: &mut Ctx) -> Check {
    let p = DeviceParams::reference();
    let r = ResonatorParams::reference();
    let fr = |pp: f64| readout_frequency(&p, &r, &FluxBias::new(pp, 0.0), WellSelect::Global).map_err(|e| e.to_string());
    let (f0, fpi, fh) = (fr(0.0)?, fr(PI)?, fr(FRAC_PI_2)?);
    Ok((f0 > fpi && fpi > fh, format!("f(0) {f0:.3} > f(pi) {fpi:.3} > f(pi/2) {fh:.3} GHz")))
}

/// Reference protocol at theta_r = 0 on `cfg`: final (p_left, p_right) and
/// the final state's trace, hermiticity error and smallest eigenvalue.
fn reference_run(cfg: &EngineConfig) -> Result<((f64, f64), f64, f64, f64), String> {
    let dev = DeviceParams::reference();
    let pc = ProtocolConfig::default();
    let scales = derive_energies(&dev).map_err(|e| e.to_string())?;
    let sched = build_schedule(&pc, &scales, Sequence::Detection).map_err(|e| e.to_string())?;
    let mut e = QuantumEngine::new(&dev, cfg).map_err(|e| e.to_string())?;
    let mut s = e.initial_state(&sched.segments[0].bias.start()).map_err(|e| e.to_string())?;
    e.evolve(&mut s, &sched, &RecordSpec::default()).map_err(|e| e.to_string())?;
    let p = e.well_probabilities(&s, 0.0).map_err(|e| e.to_string())?;
    let rho = s.density().ok_or("not a density matrix")?;
    Ok((p, rho.trace(), rho.hermiticity_error(), rho.min_eigenvalue().map_err(|e| e.to_string())?))
}

fn c10(ctx: &mut Ctx) -> Check {
    let mut checks = Vec::new();

    let desk = EngineConfig::desk();
    let (p, tr, herm, min_eig) = reference_run(&desk)?;
    checks.push(((tr - 1.0).abs() <= 1e-9, format!("trace {:.1e} off", (tr - 1.0).abs())));
    checks.push((herm <= 1e-9, format!("hermiticity {herm:.1e}")));
    checks.push((min_eig >= -1e-8, format!("min eigenvalue {min_eig:.1e}")));

    // Energy of a non-stationary pure state under a static Hamiltonian.
    let moved = FluxBias::new(FRAC_PI_2 + 0.3, 0.0);
    let seg = Segment { t_start: 0.0, t_end: 1.0, bias: BiasFn::Constant(moved), drive: DriveFn::Zero, stage: Stage::Sense };
    let sched = Schedule::new(vec![seg], Markers { t2: 1.0, ..Default::default() }).map_err(|e| e.to_string())?;
    let ucfg = EngineConfig {
        gamma: 0.0,
        mode: SimulationMode::PureState,
        dt_harmonic: 0.001,
        dt_switching: 0.001,
        ..EngineConfig::single_grid(-4.5, 4.5, 128)
    };
    let mut e = QuantumEngine::new(&DeviceParams::reference(), &ucfg).map_err(|e| e.to_string())?;
    let mut s = e.initial_state(&FluxBias::new(FRAC_PI_2, 0.0)).map_err(|e| e.to_string())?;
    let spec = RecordSpec { stride: 0.01, observables: vec![Observable::Energy], ..Default::default() };
    let traj = e.evolve(&mut s, &sched, &spec).map_err(|e| e.to_string())?;
    let en = traj.column(Observable::Energy).ok_or("no energy")?;
    let drift = en.iter().map(|v| ((v - en[0]) / en[0]).abs()).fold(0.0, f64::max);
    checks.push((drift <= 1e-8, format!("unitary energy drift {drift:.1e} over 1 ns")));

    let mut fine = EngineConfig { n_points: 2 * desk.n_points - 1, ..desk };
    if let (Some(a), Some(b)) = (fine.switch_grid.as_mut(), desk.switch_grid) {
        a.n_points = 2 * b.n_points - 1;
    }
    if let (Some(a), Some(b)) = (fine.hold_grid.as_mut(), desk.hold_grid) {
        a.n_points = 2 * b.n_points - 1;
    }
    let (pg, ..) = reference_run(&fine)?;
    let dg = (pg.0 - p.0).abs().max((pg.1 - p.1).abs());
    checks.push((dg < 1e-3, format!("halved spacing moves p by {dg:.1e}")));
    let half_dt = EngineConfig { dt_harmonic: desk.dt_harmonic / 2.0, dt_switching: desk.dt_switching / 2.0, ..desk };
    let (pt, ..) = reference_run(&half_dt)?;
    let dt = (pt.0 - p.0).abs().max((pt.1 - p.1).abs());
    checks.push((dt < 1e-4, format!("halved dt moves p by {dt:.1e}")));

    let r = fig3(ctx)?;
    let (zero, pi) = (run_named(&r, "theta0")?, run_named(&r, "theta1")?);
    let swap = (f(zero, "p_left")? - f(pi, "p_right")?).abs();
    let flipped = zero["assigned"] == "L" && pi["assigned"] == "R";
    checks.push((flipped && swap < 1e-8, format!("theta -> theta + pi swaps wells, |dp| {swap:.1e}")));

    // Classical and quantum assignments on phases away from the boundary.
    let dev = DeviceParams::reference();
    let pc = ProtocolConfig::default();
    let mut agree = Vec::new();
    for th in [0.0, FRAC_PI_4, FRAC_PI_2 - 0.2, FRAC_PI_2 + 0.2, PI] {
        let q = if th == 0.0 {
            Assignment::L
        } else if th == PI {
            Assignment::R
        } else {
            run_protocol(&dev, &ProtocolConfig { drive_phase: th, ..pc }, &desk).map_err(|e| e.to_string())?.assigned
        };
        let c = classical_assignment(&dev, &pc, th, &ClassicalConfig::default()).map_err(|e| e.to_string())?.assigned;
        agree.push((th, q, c));
    }
    let all = agree.iter().all(|(_, q, c)| Some(*q) == *c);
    let listing = agree.iter().map(|(th, q, c)| format!("{th:.3}:{q:?}/{c:?}")).collect::<Vec<_>>().join(" ");
    checks.push((all, format!("quantum/classical {listing}")));

    // Byte-identical datasets across reruns and thread counts.
    let small = ["sweep.phi_plus.points=5", "sweep.phi_minus.points=5", "sweep.ratios=[0.11]"];
    let quick = ["sweep.undriven=false", "protocol.n_periods=2.0"];
    let mut same = true;
    for (name, ov) in [("fig8c", &small[..]), ("fig3", &quick[..])] {
        let a = ctx.run_threads(name, ov, Some(1))?;
        let b = ctx.run_threads(name, ov, Some(2))?;
        let c = ctx.run_threads(name, ov, Some(1))?;
        for ((x, y), z) in a.datasets.iter().zip(&b.datasets).zip(&c.datasets) {
            let read = |p: &PathBuf| std::fs::read(p).map_err(|e| e.to_string());
            let (x, y, z) = (read(x)?, read(y)?, read(z)?);
            same &= x == y && x == z;
        }
        same &= a.datasets.len() == b.datasets.len();
    }
    checks.push((same, "datasets identical for reruns and 1 vs 2 threads".into()));
    Ok(verdict(&checks))
}

fn c11(ctx: &mut Ctx) -> Check {
    let r = ctx.cached("fig5", "fig5", &[])?;
    let mut checks = Vec::new();
    for (label, want) in [("theta0", "L"), ("theta1", "R")] {
        let v = run_named(&r, label)?;
        let flips: Vec<(f64, f64)> = serde_json::from_value(v["per_flip"].clone()).map_err(|e| e.to_string())?;
        let ok = flips.len() == 3 && flips.iter().all(|&(pl, _)| (pl >= 0.5) == (want == "L"));
        let pls = flips.iter().map(|p| format!("{:.4}", p.0)).collect::<Vec<_>>().join(", ");
        checks.push((ok, format!("{label}: {} flips all {want}, p_left [{pls}]", flips.len())));
    }
    Ok(verdict(&checks))
}

fn main() {
    let criteria: [(u32, fn(&mut Ctx) -> Check); 11] =
        [(1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9), (10, c10), (11, c11)];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut ctx = Ctx { scratch: tempfile::tempdir().expect("temp dir"), runs: BTreeMap::new(), counter: 0 };
    let mut lines = Vec::new();
    for (id, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = check(&mut ctx).unwrap_or_else(|e| (false, format!("not evaluated: {e}")));
        let line = format!("criterion {id:>2} {}: {detail} ({:.0} s)", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
        println!("{line}");
        lines.push(line);
    }
    println!("---");
    for l in &lines {
        println!("{l}");
    }
    let passed = lines.iter().filter(|l| l.contains(" PASS: ")).count();
    println!("acceptance: {passed}/{} criteria pass", lines.len());
}
