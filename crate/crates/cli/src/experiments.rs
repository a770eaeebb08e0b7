//! Dispatch of the named experiments and the run manifest.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use jdpd_core::circuit::{currents_for_bias, derive_energies, readout_frequency, DeviceParams, FluxBias, ResonatorParams, WellSelect};
use jdpd_core::detection::{
    asymmetry_region_map, calibrate_symmetry, error_vs_amplitude, error_vs_fliptime, fliptime_config, multiflip_outcomes,
    phase_transfer_curve, run_protocol_with, BiasGrid, ErrorCurve, ProtocolOutcome, RunDiagnostics, RunOptions, Sequence,
};
use jdpd_core::potential::{analyze_shape, PotentialCoefficients, ShapeOptions};
use jdpd_core::protocol::ProtocolConfig;
use jdpd_core::quantum::RecordSpec;

use crate::config::{self, Experiment, ExperimentConfig, Preset, Range};
use crate::error::CliError;
use crate::output::{emit_dataset, Cell, Dataset};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "JDPD_OUT_DIR";

pub const ERROR_DEFINITION: &str = "error = max(p_right at theta_r = 0, p_left at theta_r = pi)";

#[derive(Debug, Clone, Default)]
pub struct RunRequest {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub preset: Option<Preset>,
    /// Worker threads; None uses every core.
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub datasets: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub results: Value,
}

/// What an experiment produced before anything is written.
#[derive(Default)]
struct Products {
    datasets: Vec<Dataset>,
    diagnostics: Vec<(String, RunDiagnostics)>,
    results: Value,
}

fn out_dir(req: &RunRequest, cfg: &ExperimentConfig) -> PathBuf {
    req.out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Loads, runs and writes one experiment.
pub fn run(req: &RunRequest) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let cfg = config::load(&req.config, &req.overrides, req.preset)?;
    let dir = out_dir(req, &cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    eprintln!("jdpd: {} ({:?} preset, {threads} threads)", cfg.experiment.name(), cfg.preset);
    let products = pool.install(|| execute(&cfg))?;

    let header = header(&cfg);
    let mut written = Vec::new();
    for mut ds in products.datasets {
        let mut meta = header.clone();
        meta.append(&mut ds.meta);
        ds.meta = meta;
        let path = dir.join(format!("{}.{}", ds.name, cfg.output.format.extension()));
        emit_dataset(&ds, &path)?;
        written.push(path);
    }

    let scales = derive_energies(&cfg.device)?;
    let diagnostics: Vec<Value> = products
        .diagnostics
        .iter()
        .map(|(label, d)| json!({ "run": label, "diagnostics": d }))
        .collect();
    let manifest = json!({
        "tool": "jdpd",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment.name(),
        "config_toml": config::echo(&cfg),
        "config": cfg,
        "energy_scales": scales,
        "diagnostics": diagnostics,
        "results": products.results,
        "datasets": written.iter().map(|p| file_name(p)).collect::<Vec<_>>(),
        "threads": threads,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))? + "\n";
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    std::fs::write(&manifest_path, text).map_err(|e| CliError::Io(format!("{}: {e}", manifest_path.display())))?;
    eprintln!("jdpd: wrote {} dataset(s) to {} in {:.1} s", written.len(), dir.display(), started.elapsed().as_secs_f64());
    Ok(RunReport { out_dir: dir, datasets: written, manifest: manifest_path, results: products.results })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Metadata shared by every dataset of a run: version and full config echo.
fn header(cfg: &ExperimentConfig) -> Vec<String> {
    let mut h = vec![format!("jdpd {}", env!("CARGO_PKG_VERSION")), format!("experiment = {}", cfg.experiment.name())];
    if matches!(cfg.experiment, Experiment::SweepAmplitude | Experiment::SweepFliptime) {
        h.push(ERROR_DEFINITION.into());
    }
    h.push("--- config ---".into());
    h.push(config::echo(cfg));
    h.push("--- end config ---".into());
    h
}

fn label<T: Serialize>(v: T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn execute(cfg: &ExperimentConfig) -> Result<Products, CliError> {
    match cfg.experiment {
        Experiment::Potential => potential(cfg),
        Experiment::Spectroscopy => spectroscopy(cfg),
        Experiment::Protocol => protocol(cfg),
        Experiment::Transfer => transfer(cfg),
        Experiment::SweepAmplitude => {
            let xs = cfg.sweep.amplitude.clone().unwrap_or_else(|| vec![0.3, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
            let curve = error_vs_amplitude(&cfg.device, &cfg.protocol, &cfg.engine, &xs)?;
            error_products(cfg, "error_vs_amplitude", "amplitude_n", curve)
        }
        Experiment::SweepFliptime => {
            let xs = cfg.sweep.fliptime.clone().unwrap_or_else(|| vec![0.35, 1.0, 2.0, 5.0, 10.0, 20.0, 30.0]);
            let curve = error_vs_fliptime(&cfg.device, &cfg.protocol, &cfg.engine, &xs)?;
            error_products(cfg, "error_vs_fliptime", "tflip_periods", curve)
        }
        Experiment::Calibrate => calibrate(cfg),
        Experiment::Multiflip => multiflip(cfg),
        Experiment::AsymmetryMap => asymmetry_map(cfg),
    }
}

fn potential(cfg: &ExperimentConfig) -> Result<Products, CliError> {
    let phis = cfg.sweep.phi.unwrap_or(Range::new(-6.0, 6.0, 601)).values();
    let pp = cfg.sweep.phi_plus.map(|r| r.values()).unwrap_or_else(|| vec![0.0, FRAC_PI_2, PI]);
    let coeffs = PotentialCoefficients::from_params(&cfg.device)?;
    let biases: Vec<FluxBias<f64>> = pp.iter().map(|&p| FluxBias::new(p, cfg.protocol.phi_minus_offset)).collect();

    let cols: Vec<String> = std::iter::once("phi".to_string()).chain((0..biases.len()).map(|k| format!("u_{k}"))).collect();
    let mut samples = Dataset { name: "potential".into(), columns: cols, ..Default::default() };
    for (k, b) in biases.iter().enumerate() {
        samples.note(format!("u_{k}: phi+ = {}, phi- = {} (h*GHz)", b.phi_plus, b.phi_minus));
    }
    for &x in &phis {
        let mut row = vec![Cell::F(x)];
        row.extend(biases.iter().map(|b| Cell::F(coeffs.value(b, x))));
        samples.push(row);
    }

    let mut shapes = Dataset::new(
        "shapes",
        &["phi_plus", "phi_minus", "kind", "minima", "phi_left", "phi_right", "barrier", "barrier_height", "f_left", "f_right"],
    );
    let mut results = Vec::new();
    for b in &biases {
        let s = analyze_shape(&coeffs, b, &ShapeOptions::default())?;
        let (first, last) = (s.minima.first(), s.minima.last());
        shapes.push(vec![
            b.phi_plus.into(),
            b.phi_minus.into(),
            label(s.kind).as_str().into(),
            s.minima.len().into(),
            first.map(|m| m.phi).into(),
            last.map(|m| m.phi).into(),
            s.barrier.into(),
            s.barrier_height.into(),
            first.map(|m| m.local_frequency).into(),
            last.map(|m| m.local_frequency).into(),
        ]);
        results.push(json!({ "bias": b, "shape": s }));
    }
    Ok(Products { datasets: vec![samples, shapes], results: json!(results), ..Default::default() })
}

fn spectroscopy(cfg: &ExperimentConfig) -> Result<Products, CliError> {
    let res = cfg.resonator.unwrap_or_else(ResonatorParams::reference);
    let pp = cfg.sweep.phi_plus.unwrap_or(Range::new(0.0, 2.0 * PI, 181)).values();
    let pm = cfg.sweep.phi_minus.map(|r| r.values()).unwrap_or_else(|| vec![cfg.protocol.phi_minus_offset]);
    let coeffs = PotentialCoefficients::from_params(&cfg.device)?;
    let mut ds = Dataset::new("spectroscopy", &["phi_plus", "phi_minus", "kind", "f_global", "f_left", "f_right", "i1", "i2"]);
    ds.note("f_*: readout resonance with the JDPD sitting in that well, GHz; i1, i2: dc line currents, uA");
    for &m in &pm {
        for &p in &pp {
            let b = FluxBias::new(p, m);
            let kind = analyze_shape(&coeffs, &b, &ShapeOptions::default())?.kind;
            let f = |w| readout_frequency(&cfg.device, &res, &b, w);
            let (i1, i2) = match &cfg.mutuals {
                Some(mm) => {
                    let (a, b) = currents_for_bias(mm, &b)?;
                    (Some(a), Some(b))
                }
                None => (None, None),
            };
            ds.push(vec![
                p.into(),
                m.into(),
                label(kind).as_str().into(),
                f(WellSelect::Global)?.into(),
                f(WellSelect::Left)?.into(),
                f(WellSelect::Right)?.into(),
                i1.into(),
                i2.into(),
            ]);
        }
    }
    let at = |p: f64| readout_frequency(&cfg.device, &res, &FluxBias::new(p, cfg.protocol.phi_minus_offset), WellSelect::Global);
    let results = json!({ "f_phi_plus_0": at(0.0)?, "f_phi_plus_half_pi": at(FRAC_PI_2)?, "f_phi_plus_pi": at(PI)? });
    Ok(Products { datasets: vec![ds], results, ..Default::default() })
}

fn record_spec(cfg: &ExperimentConfig) -> RecordSpec {
    RecordSpec {
        stride: cfg.output.stride * 1e-3,
        observables: cfg.output.observables.clone(),
        snapshot_stride: cfg.output.snapshot_stride.map(|s| s * 1e-3),
        ..RecordSpec::default()
    }
}

fn trajectory_datasets(label: &str, out: &ProtocolOutcome) -> Vec<Dataset> {
    let traj = &out.traj;
    let mut cols = vec!["t".to_string()];
    cols.extend(traj.columns.iter().map(|c| self::label(c.0)));
    let mut ds = Dataset { name: format!("trajectory_{label}"), columns: cols, ..Default::default() };
    ds.note(format!("t in ns; p_left/p_right about the barrier at {}", out.barrier));
    for (k, &t) in traj.times.iter().enumerate() {
        let mut row = vec![Cell::F(t)];
        row.extend(traj.columns.iter().map(|c| Cell::F(c.1[k])));
        ds.push(row);
    }
    let mut sets = vec![ds];
    if !traj.snapshots.is_empty() {
        let mut sn = Dataset::new(format!("snapshots_{label}"), &["t", "phi", "population"]);
        for s in &traj.snapshots {
            for (j, p) in s.populations.iter().enumerate() {
                sn.push(vec![s.time.into(), (s.phi_min + j as f64 * s.spacing).into(), (*p).into()]);
            }
        }
        sets.push(sn);
    }
    sets
}

fn outcome_json(label: &str, c: &ProtocolConfig, o: &ProtocolOutcome) -> Value {
    json!({
        "run": label,
        "drive_phase": c.drive_phase,
        "amplitude_n": c.amplitude_n,
        "p_left": o.p_left_final,
        "p_right": o.p_right_final,
        "assigned": o.assigned,
        "ringdown_freq": o.ringdown_freq,
        "well_frequency": o.well_frequency,
        "per_flip": o.per_flip,
    })
}

fn protocol(cfg: &ExperimentConfig) -> Result<Products, CliError> {
    let mut runs: Vec<(String, ProtocolConfig)> = cfg
        .sweep
        .theta_or(&[cfg.protocol.drive_phase])
        .into_iter()
        .enumerate()
        .map(|(k, th)| (format!("theta{k}"), ProtocolConfig { drive_phase: th, ..cfg.protocol }))
        .collect();
    if cfg.sweep.undriven {
        runs.push(("undriven".into(), ProtocolConfig { amplitude_n: 0.0, ..cfg.protocol }));
    }
    let opts = RunOptions { sequence: Sequence::Detection, record: record_spec(cfg), ringdown: true };
    let outs: Vec<ProtocolOutcome> = runs
        .par_iter()
        .map(|(_, c)| run_protocol_with(&cfg.device, c, &cfg.engine, &opts))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut p = Products::default();
    let mut summary = Dataset::new(
        "protocol",
        &["run", "drive_phase", "amplitude_n", "p_left", "p_right", "assigned", "ringdown_freq", "well_frequency"],
    );
    let mut results = Vec::new();
    for ((name, c), o) in runs.iter().zip(&outs) {
        summary.push(vec![
            name.as_str().into(),
            c.drive_phase.into(),
            c.amplitude_n.into(),
            o.p_left_final.into(),
            o.p_right_final.into(),
            label(o.assigned).as_str().into(),
            o.ringdown_freq.into(),
            o.well_frequency.into(),
        ]);
        p.datasets.extend(trajectory_datasets(name, o));
        p.diagnostics.push((name.clone(), o.diagnostics()));
        results.push(outcome_json(name, c, o));
    }
    p.datasets.insert(0, summary);
    p.results = json!(results);
    Ok(p)
}

fn transfer(cfg: &ExperimentConfig) -> Result<Products, CliError> {
    let amps = cfg.sweep.amplitude.clone().unwrap_or_else(|| vec![cfg.protocol.amplitude_n]);
    let freqs = cfg.sweep.drive_freq.clone().unwrap_or_else(|| vec![cfg.protocol.drive_freq]);
    let thetas = cfg.sweep.theta_range_or_default();
    let mut ds = Dataset::new("transfer", &["drive_freq", "amplitude_n", "theta", "p_left"]);
    let mut p = Products::default();
    let mut results = Vec::new();
    for &f in &freqs {
        for &a in &amps {
            let c = ProtocolConfig { drive_freq: f, amplitude_n: a, ..cfg.protocol };
            let curve = phase_transfer_curve(&cfg.device, &c, &cfg.engine, &thetas)?;
            for (k, (th, pl)) in curve.theta_values.iter().zip(&curve.p_left).enumerate() {
                ds.push(vec![f.into(), a.into(), (*th).into(), (*pl).into()]);
                p.diagnostics.push((format!("f={f} n={a} theta={th}"), curve.diagnostics[k]));
            }
            results.push(json!({ "drive_freq": f, "amplitude_n": a, "theta": curve.theta_values, "p_left": curve.p_left }));
        }
    }
    p.datasets.push(ds);
    p.results = json!(results);
    Ok(p)
}

fn error_products(cfg: &ExperimentConfig, name: &str, axis: &str, curve: ErrorCurve) -> Result<Products, CliError> {
    let fliptime = name == "error_vs_fliptime";
    let mut cols = vec![axis];
    if fliptime {
        cols.push("t_flip_ps");
    }
    cols.extend(["error", "p_right_theta_0", "p_left_theta_pi"]);
    let mut ds = Dataset::new(name, &cols);
    let mut p = Products::default();
    for (k, &x) in curve.x_values.iter().enumerate() {
        let mut row = vec![Cell::F(x)];
        if fliptime {
            row.push(fliptime_config(&cfg.protocol, x).t_flip.into());
        }
        row.extend([curve.error[k].into(), curve.wrong_at_zero[k].into(), curve.wrong_at_pi[k].into()]);
        ds.push(row);
        p.diagnostics.push((format!("{axis}={x} theta=0"), curve.diagnostics[2 * k]));
        p.diagnostics.push((format!("{axis}={x} theta=pi"), curve.diagnostics[2 * k + 1]));
    }
    p.datasets.push(ds);
    p.results = json!({ "definition": ERROR_DEFINITION, "x": curve.x_values, "error": curve.error });
    Ok(p)
}

fn calibrate(cfg: &ExperimentConfig) -> Result<Products, CliError> {
    let cal = calibrate_symmetry(&cfg.device, &cfg.protocol, &cfg.engine)?;
    let mut ds = Dataset::new("calibration", &["step", "phi_minus", "p_left"]);
    ds.note(format!("theta_symm = {}", cal.theta_symm));
    let mut p = Products::default();
    for (k, &(x, pl)) in cal.evaluations.iter().enumerate() {
        ds.push(vec![k.into(), x.into(), pl.into()]);
        p.diagnostics.push((format!("phi_minus={x}"), cal.diagnostics[k]));
    }
    p.datasets.push(ds);
    p.results = json!({ "theta_symm": cal.theta_symm, "p_left": cal.p_left, "evaluations": cal.evaluations });
    Ok(p)
}

fn multiflip(cfg: &ExperimentConfig) -> Result<Products, CliError> {
    let thetas = cfg.sweep.theta_or(&[0.0, PI]);
    let cfgs: Vec<ProtocolConfig> = thetas.iter().map(|&th| ProtocolConfig { drive_phase: th, ..cfg.protocol }).collect();
    let outs: Vec<ProtocolOutcome> = cfgs
        .par_iter()
        .map(|c| multiflip_outcomes(&cfg.device, c, &cfg.engine))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut ds = Dataset::new("multiflip", &["drive_phase", "flip", "p_left", "p_right", "assigned"]);
    let mut p = Products::default();
    let mut results = Vec::new();
    for (k, (c, o)) in cfgs.iter().zip(&outs).enumerate() {
        for (j, &(pl, pr)) in o.per_flip.iter().enumerate() {
            ds.push(vec![c.drive_phase.into(), j.into(), pl.into(), pr.into(), label(o.per_flip_assignments()[j]).as_str().into()]);
        }
        let name = format!("theta{k}");
        p.datasets.extend(trajectory_datasets(&name, o));
        p.diagnostics.push((name.clone(), o.diagnostics()));
        results.push(outcome_json(&name, c, o));
    }
    p.datasets.insert(0, ds);
    p.results = json!(results);
    Ok(p)
}

fn asymmetry_map(cfg: &ExperimentConfig) -> Result<Products, CliError> {
    let ratios = cfg.sweep.ratios.clone().unwrap_or_else(|| vec![-0.11, 0.0, 0.11]);
    let ic_plus = cfg.sweep.ic_plus.unwrap_or_else(|| cfg.device.ic_plus());
    let pp = cfg.sweep.phi_plus.unwrap_or(Range::new(0.6 * PI, 1.4 * PI, 21));
    let pm = cfg.sweep.phi_minus.unwrap_or(Range::new(-0.92, 0.92, 21));
    let grid = BiasGrid { phi_plus: pp.values(), phi_minus: pm.values() };
    let mut ds = Dataset::new("region_map", &["ratio", "phi_plus", "phi_minus", "operable"]);
    ds.note(format!("I_c+ = {ic_plus} uA; operable = theta_r 0 reads L and pi reads R (classical model)"));
    let mut results = Vec::new();
    for &r in &ratios {
        let dev = DeviceParams::asymmetric(ic_plus, r, cfg.device.l_center, cfg.device.c_junction_total);
        let map = asymmetry_region_map(&dev, &cfg.protocol, &cfg.classical, &grid)?;
        for (i, &m) in grid.phi_minus.iter().enumerate() {
            for (j, &pl) in grid.phi_plus.iter().enumerate() {
                ds.push(vec![r.into(), pl.into(), m.into(), map.operable[i][j].into()]);
            }
        }
        let count = map.operable.iter().flatten().filter(|b| **b).count();
        results.push(json!({ "ratio": r, "operable_points": count, "operable": map.operable }));
    }
    Ok(Products { datasets: vec![ds], results: json!(results), ..Default::default() })
}
