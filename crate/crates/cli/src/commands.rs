use crate::config::{GeometryConfig, RunConfig};
use crate::error::CliError;
use crate::output::{read_series_csv, write_json, write_series_file};
use log::{debug, info};
use rmt_core::bogovskii::{manufactured_pair, random_clamped_fields, random_compatible_data, BogovskiiOperator};
use rmt_core::dynamics::{simulate, step_count};
use rmt_core::spectral::{nondecay_frequency, richardson};
use rmt_core::{
    assemble, build_initial, build_stiffness_s, fit_decay, korn_constants, laplace_eigen, lyapunov_decay_check,
    solenoidal_eigenmode, AssembledOperators, DecayFit, DiagnosticsError, EigenResult, Mesh, PlateParams, PresetKind,
    SeriesRecorder, Stepper, TimeSeries,
};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Fraction of `t_end` skipped before fitting.
pub const FIT_START_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub final_energy: f64,
    pub decay_fit: DecayFit,
    pub dissipation_identity_max_residual: f64,
    pub mean_theta_drift: f64,
    pub rot_v_growth: f64,
    pub gronwall_margin: f64,
    pub lyapunov_sandwich: Option<(f64, f64)>,
    pub dt: f64,
    pub n_steps: usize,
    pub t_end: f64,
    pub h: f64,
    pub n_vertices: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub series: TimeSeries,
    pub summary: SimulationSummary,
}

struct Discretization {
    mesh: Mesh,
    ops: AssembledOperators,
    params: PlateParams,
}

fn discretize(cfg: &RunConfig, geometry: &GeometryConfig) -> Result<Discretization, CliError> {
    let params = cfg.plate_params()?;
    let mesh = geometry.build()?;
    let ops = assemble(&mesh, &build_stiffness_s(&params));
    debug!("mesh: {} vertices, {} triangles, h = {}", mesh.vertices.len(), mesh.triangles.len(), mesh.h);
    Ok(Discretization { mesh, ops, params })
}

/// Decay fit that treats an identically zero series as non-decaying.
/// A series that is identically zero has nothing to fit and reports alpha = 0.
fn fit_or_zero(series: &TimeSeries, t_start: f64) -> Result<DecayFit, DiagnosticsError> {
    match fit_decay(series, t_start) {
        Err(DiagnosticsError::NonPositiveEnergy { .. }) if series.energies().iter().all(|&e| e == 0.0) => {
            let t_end = series.rows.last().map_or(0.0, |r| r.t);
            Ok(DecayFit { alpha: 0.0, c_prefactor: 0.0, r2: 0.0, t_start, t_end })
        }
        other => other,
    }
}

fn decay_fit_or_zero(series: &TimeSeries, t_start: f64) -> Result<DecayFit, CliError> {
    fit_or_zero(series, t_start).map_err(|e| match e {
        DiagnosticsError::InsufficientData { .. } => CliError::config("time", e),
        e => CliError::Solver(e.to_string()),
    })
}

/// Runs the configured simulation in memory.
pub fn run_simulation(cfg: &RunConfig) -> Result<SimulationOutcome, CliError> {
    let Discretization { mesh, ops, params } = discretize(cfg, &cfg.geometry)?;
    let eig = if cfg.ic.kind == PresetKind::SolenoidalEigenmode {
        let e = solenoidal_eigenmode(&ops, &mesh)?;
        info!("solenoidal eigenmode: lambda = {}", e.lambda);
        Some(e)
    } else {
        None
    };
    let s0 = build_initial(&cfg.ic, &mesh, &ops, cfg.thermal_bc, eig.as_ref()).map_err(|e| CliError::config("ic", e))?;
    let (n_steps, dt) = step_count(cfg.resolve_dt(&params, &mesh), cfg.time.t_end);
    info!("stepping: {n_steps} steps of dt = {dt}");
    let stepper = Stepper::new(&ops, &params, dt, cfg.thermal_bc, cfg.solver_tol)?;
    let mut recorder =
        SeriesRecorder::new(&ops, &mesh, &params, cfg.lyapunov, cfg.thermal_bc).map_err(|e| CliError::config("lyapunov", e))?;
    simulate(&stepper, &s0, n_steps, |report| {
        if report.step % 1000 == 0 {
            debug!("t = {:.6}, E = {:e}", report.t, report.energy.total());
        }
        recorder.record(report).map_err(|e| CliError::Solver(e.to_string()))
    })?;
    let series = recorder.series;
    let t_end = series.rows.last().map_or(0.0, |r| r.t);
    let t_start = FIT_START_FRACTION * t_end;
    let decay_fit = decay_fit_or_zero(&series, t_start)?;
    let summary = SimulationSummary {
        final_energy: series.rows.last().map_or(0.0, |r| r.energy.total()),
        decay_fit,
        dissipation_identity_max_residual: series.dissipation_identity_residual(),
        mean_theta_drift: series.mean_theta_drift(),
        rot_v_growth: series.rot_v_growth(),
        gronwall_margin: lyapunov_decay_check(&series, t_start).margin,
        lyapunov_sandwich: series.lyapunov_sandwich(),
        dt,
        n_steps,
        t_end,
        h: mesh.h,
        n_vertices: mesh.vertices.len(),
    };
    Ok(SimulationOutcome { series, summary })
}

fn prepare_output_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::config("output_dir", format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".rmt-write-probe");
    std::fs::write(&probe, b"").map_err(|e| CliError::config("output_dir", format!("{} is not writable: {e}", dir.display())))?;
    std::fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))
}

/// `simulate`: writes timeseries.csv, summary.json and config_echo.json.
pub fn cmd_simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<SimulationSummary, CliError> {
    let dir: PathBuf = out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    prepare_output_dir(&dir)?;
    let outcome = run_simulation(cfg)?;
    write_series_file(&dir.join("timeseries.csv"), &outcome.series)?;
    write_json(&dir.join("summary.json"), &outcome.summary)?;
    write_json(&dir.join("config_echo.json"), cfg)?;
    info!("wrote results to {}", dir.display());
    Ok(outcome.summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMode {
    Stokes,
    Korn,
    Laplace,
}

impl FromStr for EigenMode {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "stokes" => Ok(EigenMode::Stokes),
            "korn" => Ok(EigenMode::Korn),
            "laplace" => Ok(EigenMode::Laplace),
            other => Err(CliError::config("--mode", format!("unknown mode `{other}` (expected stokes, korn or laplace)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenLevel {
    pub h: f64,
    pub n_vertices: usize,
    pub lambda: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenReport {
    pub mode: &'static str,
    pub lambda: f64,
    pub residual: f64,
    pub h: f64,
    pub extrapolated: Option<Extrapolation>,
    /// Oscillation frequency of the solenoidal mode in the reduced 1-DOF model.
    pub frequency: Option<f64>,
    pub levels: Vec<EigenLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KornLevel {
    pub h: f64,
    pub n_vertices: usize,
    pub c_k1: f64,
    pub c_k2: f64,
    pub c_k: f64,
    pub c_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KornReport {
    pub mode: &'static str,
    pub levels: Vec<KornLevel>,
    /// |x(h/2) / x(h) - 1| for c_k1, c_k2, c_k, c_p.
    pub relative_change: [f64; 4],
    /// 1 / (extrapolated first Dirichlet eigenvalue), on three levels.
    pub c_p_extrapolated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EigenOutput {
    Spectrum(EigenReport),
    Korn(KornReport),
}

fn refinements(cfg: &RunConfig, levels: usize) -> Vec<GeometryConfig> {
    let h = cfg.geometry.h_target();
    (0..levels).map(|k| cfg.geometry.with_h(h / f64::powi(2.0, k as i32))).collect()
}

fn spectrum_report(cfg: &RunConfig, mode: EigenMode) -> Result<EigenReport, CliError> {
    let mut levels = Vec::new();
    let mut first: Option<(EigenResult, PlateParams)> = None;
    for geometry in refinements(cfg, 3) {
        let d = discretize(cfg, &geometry)?;
        let e = match mode {
            EigenMode::Stokes => solenoidal_eigenmode(&d.ops, &d.mesh)?,
            _ => laplace_eigen(&d.ops, &d.mesh)?,
        };
        info!("h = {}: lambda = {}", d.mesh.h, e.lambda);
        levels.push(EigenLevel {
            h: d.mesh.h,
            n_vertices: d.mesh.vertices.len(),
            lambda: e.lambda,
            residual: e.residual,
            iterations: e.iterations,
        });
        first.get_or_insert((e, d.params));
    }
    let (base, params) = first.expect("three levels were computed");
    let extrapolated =
        richardson(levels[0].lambda, levels[1].lambda, levels[2].lambda).map(|(limit, order)| Extrapolation { limit, order });
    let frequency = (mode == EigenMode::Stokes).then(|| nondecay_frequency(base.lambda, &params) / (2.0 * std::f64::consts::PI));
    Ok(EigenReport {
        mode: if mode == EigenMode::Stokes { "stokes" } else { "laplace" },
        lambda: base.lambda,
        residual: base.residual,
        h: base.h,
        extrapolated,
        frequency,
        levels,
    })
}

fn korn_report(cfg: &RunConfig) -> Result<KornReport, CliError> {
    let mut levels = Vec::new();
    let mut lambdas = Vec::new();
    for (k, geometry) in refinements(cfg, 3).into_iter().enumerate() {
        let d = discretize(cfg, &geometry)?;
        if k < 2 {
            let c = korn_constants(&d.ops, &d.mesh, &d.params)?;
            info!("h = {}: {c:?}", d.mesh.h);
            levels.push(KornLevel {
                h: d.mesh.h,
                n_vertices: d.mesh.vertices.len(),
                c_k1: c.c_k1,
                c_k2: c.c_k2,
                c_k: c.c_k,
                c_p: c.c_p,
            });
            lambdas.push(1.0 / c.c_p);
        } else {
            lambdas.push(laplace_eigen(&d.ops, &d.mesh)?.lambda);
        }
    }
    let (a, b) = (&levels[0], &levels[1]);
    let rel = |x: f64, y: f64| (y / x - 1.0).abs();
    Ok(KornReport {
        mode: "korn",
        relative_change: [rel(a.c_k1, b.c_k1), rel(a.c_k2, b.c_k2), rel(a.c_k, b.c_k), rel(a.c_p, b.c_p)],
        c_p_extrapolated: richardson(lambdas[0], lambdas[1], lambdas[2]).map(|(limit, _)| 1.0 / limit),
        levels,
    })
}

pub fn run_eigen(cfg: &RunConfig, mode: EigenMode) -> Result<EigenOutput, CliError> {
    match mode {
        EigenMode::Korn => korn_report(cfg).map(EigenOutput::Korn),
        _ => spectrum_report(cfg, mode).map(EigenOutput::Spectrum),
    }
}

/// `eigen`: report to stdout (returned) and to `eigen_<mode>.json`.
pub fn cmd_eigen(cfg: &RunConfig, mode: EigenMode, out: Option<&Path>) -> Result<EigenOutput, CliError> {
    let dir: PathBuf = out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    prepare_output_dir(&dir)?;
    let report = run_eigen(cfg, mode)?;
    let name = match mode {
        EigenMode::Stokes => "eigen_stokes.json",
        EigenMode::Korn => "eigen_korn.json",
        EigenMode::Laplace => "eigen_laplace.json",
    };
    write_json(&dir.join(name), &report)?;
    Ok(report)
}

/// Number of random compatible data used for the continuity constant.
pub const CONTINUITY_SAMPLES: usize = 50;
/// Number of random clamped fields used for the divergence estimate.
pub const DIV_ESTIMATE_SAMPLES: usize = 20;
/// Relative residuals below this are indistinguishable from roundoff.
pub const RESIDUAL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BogovskiiLevel {
    pub h: f64,
    pub n_vertices: usize,
    /// ||u - u0|| / ||u0|| on the manufactured pair.
    pub error_l2: f64,
    /// Residuals relative to ||f||.
    pub residual_div: f64,
    pub residual_rot: f64,
    pub boundary_norm: f64,
    pub continuity_ratio: f64,
    pub cross_energy: f64,
    /// max ||B f||_H1 / ||f|| over random compatible data.
    pub continuity_constant: f64,
    /// max ||B(div u)|| / ||u|| over random clamped fields.
    pub div_estimate_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BogovskiiRates {
    pub error_l2: f64,
    pub residual_div: f64,
    /// `None` when the residual sits at roundoff on both levels.
    pub residual_rot: Option<f64>,
    pub boundary_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BogovskiiReport {
    pub levels: Vec<BogovskiiLevel>,
    pub rates: BogovskiiRates,
    /// |C(h/2) / C(h) - 1| for the continuity and divergence-estimate constants.
    pub continuity_change: f64,
    pub div_estimate_change: f64,
}

fn bogovskii_level(cfg: &RunConfig, geometry: &GeometryConfig) -> Result<BogovskiiLevel, CliError> {
    let d = discretize(cfg, geometry)?;
    let op = BogovskiiOperator::new(&d.ops, &d.mesh)?;
    let (u0, f) = manufactured_pair(&d.ops, &d.mesh);
    let s = op.apply(&f)?;
    let fnorm = d.ops.l2_norm(&f);
    let err: Vec<f64> = s.u.iter().zip(&u0).map(|(a, b)| a - b).collect();
    let seed = cfg.ic.seed;
    let mut continuity_constant: f64 = 0.0;
    for g in random_compatible_data(&d.ops, &d.mesh, seed, CONTINUITY_SAMPLES) {
        continuity_constant = continuity_constant.max(op.apply(&g)?.continuity_ratio);
    }
    let mut div_estimate_constant: f64 = 0.0;
    for u in random_clamped_fields(&d.ops, &d.mesh, seed.wrapping_add(1), DIV_ESTIMATE_SAMPLES) {
        div_estimate_constant = div_estimate_constant.max(op.div_estimate_ratio(&u)?);
    }
    Ok(BogovskiiLevel {
        h: d.mesh.h,
        n_vertices: d.mesh.vertices.len(),
        error_l2: d.ops.l2_norm_vec(&err) / d.ops.l2_norm_vec(&u0),
        residual_div: s.residual_div / fnorm,
        residual_rot: s.residual_rot / fnorm,
        boundary_norm: s.boundary_norm / fnorm,
        continuity_ratio: s.continuity_ratio,
        cross_energy: s.cross_energy,
        continuity_constant,
        div_estimate_constant,
    })
}

/// Observed order between two levels.
pub fn observed_rate(coarse: (f64, f64), fine: (f64, f64)) -> f64 {
    (coarse.1 / fine.1).ln() / (coarse.0 / fine.0).ln()
}

fn rate_above_floor(a: &BogovskiiLevel, b: &BogovskiiLevel, get: fn(&BogovskiiLevel) -> f64) -> Option<f64> {
    (get(a) > RESIDUAL_FLOOR || get(b) > RESIDUAL_FLOOR).then(|| observed_rate((a.h, get(a)), (b.h, get(b))))
}

pub fn run_bogovskii(cfg: &RunConfig) -> Result<BogovskiiReport, CliError> {
    let levels = refinements(cfg, 2)
        .iter()
        .map(|g| bogovskii_level(cfg, g))
        .collect::<Result<Vec<_>, _>>()?;
    let (a, b) = (&levels[0], &levels[1]);
    let rates = BogovskiiRates {
        error_l2: observed_rate((a.h, a.error_l2), (b.h, b.error_l2)),
        residual_div: observed_rate((a.h, a.residual_div), (b.h, b.residual_div)),
        residual_rot: rate_above_floor(a, b, |l| l.residual_rot),
        boundary_norm: rate_above_floor(a, b, |l| l.boundary_norm),
    };
    Ok(BogovskiiReport {
        continuity_change: (b.continuity_constant / a.continuity_constant - 1.0).abs(),
        div_estimate_change: (b.div_estimate_constant / a.div_estimate_constant - 1.0).abs(),
        rates,
        levels,
    })
}

/// `bogovskii`: report to stdout (returned) and to `bogovskii.json`.
pub fn cmd_bogovskii(cfg: &RunConfig, out: Option<&Path>) -> Result<BogovskiiReport, CliError> {
    let dir: PathBuf = out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    prepare_output_dir(&dir)?;
    let report = run_bogovskii(cfg)?;
    write_json(&dir.join("bogovskii.json"), &report)?;
    Ok(report)
}

/// `decay-fit`: fits a series CSV; the window defaults to the last 80 %.
pub fn cmd_decay_fit(csv_path: &Path, t_start: Option<f64>) -> Result<DecayFit, CliError> {
    let file = std::fs::File::open(csv_path).map_err(|e| CliError::config("csv", format!("{}: {e}", csv_path.display())))?;
    let series = read_series_csv(std::io::BufReader::new(file))?;
    let t_end = series.rows.last().map_or(0.0, |r| r.t);
    let t_start = t_start.unwrap_or(FIT_START_FRACTION * t_end);
    fit_or_zero(&series, t_start).map_err(|e| CliError::config("csv", e))
}
