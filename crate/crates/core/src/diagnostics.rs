//! Energy, Lyapunov functionals and decay fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bogovskii::{BogovskiiError, BogovskiiOperator};
use crate::dynamics::{DissipationParts, State, StepReport, ThermalBc};
use crate::fem::{solve_spd, AssembledOperators, SolverError, SparseCholesky, DEFAULT_TOL};
use crate::initial_data::mean_zero_project;
use crate::mesh::Mesh;
use crate::params::PlateParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("insufficient data: {rows} rows in the fit window, need {needed}")]
    InsufficientData { rows: usize, needed: usize },
    #[error("non-positive energy {energy:e} at t = {t}")]
    NonPositiveEnergy { t: f64, energy: f64 },
    #[error("theta has nonzero mean (defect {0:e})")]
    NonZeroMean(f64),
    #[error("invalid Lyapunov weights: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Bogovskii(#[from] BogovskiiError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// The six quadratic parts of the natural energy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyParts {
    pub kin_w: f64,
    pub kin_v: f64,
    pub bend: f64,
    pub shear: f64,
    pub theta: f64,
    pub q: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kin_w + self.kin_v + self.bend + self.shear + self.theta + self.q
    }
}

/// Energy from the same assembled forms as the stepper.
pub fn energy(ops: &AssembledOperators, p: &PlateParams, s: &State) -> EnergyParts {
    let gw = ops.g_grad.mul_vec(&s.w);
    let shear = ops.a_lap.quad(&s.w) + 2.0 * crate::fem::dot(&gw, &s.v) + ops.mass_vec.quad(&s.v);
    EnergyParts {
        kin_w: 0.5 * p.rho1 * ops.mass.quad(&s.wt),
        kin_v: 0.5 * p.rho2 * ops.mass_vec.quad(&s.vt),
        bend: 0.5 * ops.a_korn.quad(&s.v),
        shear: 0.5 * p.k * shear,
        theta: 0.5 * p.rho3 * ops.mass.quad(&s.theta),
        q: 0.5 * p.tau0 * ops.mass_vec.quad(&s.q),
    }
}

/// Solves -Lap u = div v with u = 0 on the boundary, using the default CG solver.
pub fn poisson_auxiliary(ops: &AssembledOperators, v: &[f64]) -> Result<Vec<f64>, SolverError> {
    let int = ops.interior();
    let a = ops.a_lap.select(&int, &int);
    let bv = ops.b_div.mul_vec(v);
    let b: Vec<f64> = int.iter().map(|&i| bv[i]).collect();
    let x = solve_spd(&a, &b, DEFAULT_TOL)?;
    let mut u = vec![0.0; ops.n];
    for (k, &i) in int.iter().enumerate() {
        u[i] = x[k];
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    #[serde(rename = "N", default = "default_n")]
    pub n: f64,
    #[serde(rename = "N4", default = "default_n4")]
    pub n4: f64,
}

fn default_n() -> f64 {
    50.0
}

fn default_n4() -> f64 {
    5.0
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig { n: default_n(), n4: default_n4() }
    }
}

impl LyapunovConfig {
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(DiagnosticsError::InvalidConfig("N must be positive".into()));
        }
        if !(self.n4 > 0.0 && self.n4.is_finite()) {
            return Err(DiagnosticsError::InvalidConfig("N4 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LyapunovParts {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
    /// N E + F1 + F2 + F3 + N4 F4
    pub total: f64,
}

/// Relative tolerance on the lumped mean of theta accepted by the functionals.
pub const THETA_MEAN_TOL: f64 = 1e-8;

/// Evaluates the Lyapunov functionals with factorized auxiliary solvers.
pub struct LyapunovEvaluator<'a> {
    ops: &'a AssembledOperators,
    p: PlateParams,
    cfg: LyapunovConfig,
    bog: BogovskiiOperator<'a>,
    int: Vec<usize>,
    poisson: SparseCholesky,
}

impl<'a> LyapunovEvaluator<'a> {
    pub fn new(ops: &'a AssembledOperators, mesh: &Mesh, p: &PlateParams, cfg: LyapunovConfig) -> Result<Self, DiagnosticsError> {
        cfg.validate()?;
        let int = ops.interior();
        let poisson = SparseCholesky::new(&ops.a_lap.select(&int, &int))?;
        Ok(LyapunovEvaluator { ops, p: p.clone(), cfg, bog: BogovskiiOperator::new(ops, mesh)?, int, poisson })
    }

    /// Poisson auxiliary field by direct solve.
    pub fn auxiliary(&self, v: &[f64]) -> Vec<f64> {
        let bv = self.ops.b_div.mul_vec(v);
        let b: Vec<f64> = self.int.iter().map(|&i| bv[i]).collect();
        let x = self.poisson.solve(&b);
        let mut u = vec![0.0; self.ops.n];
        for (k, &i) in self.int.iter().enumerate() {
            u[i] = x[k];
        }
        u
    }

    /// With the insulated condition theta must have zero mean; with theta = 0 on
    /// the boundary the mean is removed before applying the right inverse.
    pub fn evaluate(&self, s: &State, energy_total: f64, bc: ThermalBc) -> Result<LyapunovParts, DiagnosticsError> {
        let (ops, p) = (self.ops, &self.p);
        let scale = ops.l2_norm(&s.theta) * ops.total_area().sqrt();
        let defect = ops.lumped_integral(&s.theta);
        if bc == ThermalBc::Neumann && defect.abs() > THETA_MEAN_TOL * scale {
            return Err(DiagnosticsError::NonZeroMean(defect / ops.total_area()));
        }
        let u = self.auxiliary(&s.v);
        let mv_vt = ops.mass_vec.mul_vec(&s.vt);
        let mv_q = ops.mass_vec.mul_vec(&s.q);
        let m_wt = ops.mass.mul_vec(&s.wt);
        let f1 = p.rho1 * crate::fem::dot(&m_wt, &u) + p.rho2 * crate::fem::dot(&mv_vt, &s.v)
            - p.gamma * p.tau0 / p.kappa * crate::fem::dot(&mv_q, &s.v);
        let f2 = p.rho1 * crate::fem::dot(&m_wt, &s.w);
        let (f3, f4) = if scale == 0.0 {
            (0.0, 0.0)
        } else {
            let bt = self.bog.apply(&mean_zero_project(&s.theta, ops))?.u;
            (p.rho2 * p.rho3 * crate::fem::dot(&mv_vt, &bt), -p.tau0 * p.rho3 * crate::fem::dot(&mv_q, &bt))
        };
        let total = self.cfg.n * energy_total + f1 + f2 + f3 + self.cfg.n4 * f4;
        Ok(LyapunovParts { f1, f2, f3, f4, total })
    }
}

/// CSV column names of the time-series schema.
pub const CSV_HEADER: [&str; 20] = [
    "t", "E_total", "E_kin_w", "E_kin_v", "E_bend", "E_shear", "E_theta", "E_q", "diss_w", "diss_v", "diss_theta",
    "diss_q", "mean_theta", "rot_v", "div_v", "F_total", "F1", "F2", "F3", "F4",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SeriesRow {
    pub t: f64,
    pub energy: EnergyParts,
    pub dissipation: DissipationParts,
    pub mean_theta: f64,
    pub rot_v: f64,
    pub div_v: f64,
    pub lyapunov: LyapunovParts,
}

impl SeriesRow {
    pub fn to_record(&self) -> [f64; 20] {
        let (e, d, l) = (&self.energy, &self.dissipation, &self.lyapunov);
        [
            self.t,
            e.total(),
            e.kin_w,
            e.kin_v,
            e.bend,
            e.shear,
            e.theta,
            e.q,
            d.w,
            d.v,
            d.theta,
            d.q,
            self.mean_theta,
            self.rot_v,
            self.div_v,
            l.total,
            l.f1,
            l.f2,
            l.f3,
            l.f4,
        ]
    }

    /// Inverse of [`SeriesRow::to_record`]; the stored total energy is implied by the parts.
    pub fn from_record(r: &[f64; 20]) -> Self {
        SeriesRow {
            t: r[0],
            energy: EnergyParts { kin_w: r[2], kin_v: r[3], bend: r[4], shear: r[5], theta: r[6], q: r[7] },
            dissipation: DissipationParts { w: r[8], v: r[9], theta: r[10], q: r[11] },
            mean_theta: r[12],
            rot_v: r[13],
            div_v: r[14],
            lyapunov: LyapunovParts { total: r[15], f1: r[16], f2: r[17], f3: r[18], f4: r[19] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub rows: Vec<SeriesRow>,
    /// Largest L2 norm of v seen, used to normalize the rotation growth.
    pub v_scale: f64,
    /// RMS of the initial theta, used to normalize the mean drift.
    pub theta_scale: f64,
}

impl TimeSeries {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy.total()).collect()
    }

    /// max_k |E_k - E_{k-1} + dt_k D_k| / E_0.
    pub fn dissipation_identity_residual(&self) -> f64 {
        let e0 = self.rows.first().map_or(0.0, |r| r.energy.total());
        let worst = self
            .rows
            .windows(2)
            .map(|w| (w[1].energy.total() - w[0].energy.total() + (w[1].t - w[0].t) * w[1].dissipation.total()).abs())
            .fold(0.0, f64::max);
        if e0 > 0.0 {
            worst / e0
        } else {
            worst
        }
    }

    /// max_k |mean(theta_k) - mean(theta_0)|, relative to the initial theta scale when nonzero.
    pub fn mean_theta_drift(&self) -> f64 {
        let Some(first) = self.rows.first() else { return 0.0 };
        let worst = self.rows.iter().map(|r| (r.mean_theta - first.mean_theta).abs()).fold(0.0, f64::max);
        let scale = self.theta_scale.max(first.mean_theta.abs());
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    /// (max_k rot_v - rot_v(0)) relative to the largest v norm.
    pub fn rot_v_growth(&self) -> f64 {
        let Some(first) = self.rows.first() else { return 0.0 };
        let growth = self.rows.iter().map(|r| r.rot_v).fold(0.0, f64::max) - first.rot_v;
        if self.v_scale > 0.0 {
            growth / self.v_scale
        } else {
            growth
        }
    }

    /// Extreme ratios F / E over rows with positive energy.
    pub fn lyapunov_sandwich(&self) -> Option<(f64, f64)> {
        let ratios: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.energy.total() > 0.0)
            .map(|r| r.lyapunov.total / r.energy.total())
            .collect();
        if ratios.is_empty() {
            return None;
        }
        Some((ratios.iter().copied().fold(f64::INFINITY, f64::min), ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
    }
}

/// Streams step reports into a [`TimeSeries`].
pub struct SeriesRecorder<'a> {
    ops: &'a AssembledOperators,
    lyap: LyapunovEvaluator<'a>,
    bc: ThermalBc,
    pub series: TimeSeries,
}

impl<'a> SeriesRecorder<'a> {
    pub fn new(ops: &'a AssembledOperators, mesh: &Mesh, p: &PlateParams, cfg: LyapunovConfig, bc: ThermalBc) -> Result<Self, DiagnosticsError> {
        Ok(SeriesRecorder { ops, lyap: LyapunovEvaluator::new(ops, mesh, p, cfg)?, bc, series: TimeSeries::default() })
    }

    pub fn record(&mut self, r: &StepReport) -> Result<(), DiagnosticsError> {
        let ops = self.ops;
        let s = &r.state;
        if self.series.rows.is_empty() {
            self.series.theta_scale = ops.l2_norm(&s.theta) / ops.total_area().sqrt();
        }
        self.series.v_scale = self.series.v_scale.max(ops.l2_norm_vec(&s.v));
        let lyapunov = self.lyap.evaluate(s, r.energy.total(), self.bc)?;
        self.series.rows.push(SeriesRow {
            t: r.t,
            energy: r.energy,
            dissipation: r.dissipation,
            mean_theta: ops.lumped_mean(&s.theta),
            rot_v: ops.lumped_dual_norm(&ops.r_rot.mul_vec(&s.v)),
            div_v: ops.lumped_dual_norm(&ops.b_div.mul_vec(&s.v)),
            lyapunov,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub alpha: f64,
    #[serde(rename = "C")]
    pub c_prefactor: f64,
    pub r2: f64,
    pub t_start: f64,
    pub t_end: f64,
}

/// Minimum number of samples in the fit window.
pub const MIN_FIT_ROWS: usize = 10;

/// Least squares of log E on t over `t >= t_start`; `E(t) ~ C E(0) exp(-2 alpha t)`.
pub fn fit_decay_samples(t: &[f64], e: &[f64], t_start: f64) -> Result<DecayFit, DiagnosticsError> {
    assert_eq!(t.len(), e.len());
    let window: Vec<usize> = (0..t.len()).filter(|&k| t[k] >= t_start - 1e-12 * t_start.abs().max(1.0)).collect();
    if window.len() < MIN_FIT_ROWS {
        return Err(DiagnosticsError::InsufficientData { rows: window.len(), needed: MIN_FIT_ROWS });
    }
    if let Some(&k) = window.iter().find(|&&k| !(e[k] > 0.0)) {
        return Err(DiagnosticsError::NonPositiveEnergy { t: t[k], energy: e[k] });
    }
    if !(e[0] > 0.0) {
        return Err(DiagnosticsError::NonPositiveEnergy { t: t[0], energy: e[0] });
    }
    let m = window.len() as f64;
    let tm = window.iter().map(|&k| t[k]).sum::<f64>() / m;
    let ym = window.iter().map(|&k| e[k].ln()).sum::<f64>() / m;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &k in &window {
        let (dt, dy) = (t[k] - tm, e[k].ln() - ym);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let t_range = (window[0], *window.last().unwrap());
    let (t_start, t_end) = (t[t_range.0], t[t_range.1]);
    // a (numerically) constant log-series carries no rate information
    if syy <= 1e-28 * m * (1.0 + ym * ym) || stt == 0.0 {
        return Ok(DecayFit { alpha: 0.0, c_prefactor: ym.exp() / e[0], r2: 0.0, t_start, t_end });
    }
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let ss_res = (syy - slope * sty).max(0.0);
    let r2 = (1.0 - ss_res / syy).clamp(0.0, 1.0);
    Ok(DecayFit { alpha: -slope / 2.0, c_prefactor: intercept.exp() / e[0], r2, t_start, t_end })
}

pub fn fit_decay(series: &TimeSeries, t_start: f64) -> Result<DecayFit, DiagnosticsError> {
    fit_decay_samples(&series.times(), &series.energies(), t_start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport {
    /// min over the window of -(dF/dt) / E with centered differences.
    pub margin: f64,
    pub passed: bool,
    pub t_start: f64,
    pub t_end: f64,
}

/// Checks dF/dt <= -c E on the interior rows with `t >= t_start`.
pub fn lyapunov_decay_check(series: &TimeSeries, t_start: f64) -> GronwallReport {
    let rows = &series.rows;
    let mut margin = f64::INFINITY;
    let (mut lo, mut hi) = (f64::NAN, f64::NAN);
    for k in 1..rows.len().saturating_sub(1) {
        if rows[k].t < t_start {
            continue;
        }
        let e = rows[k].energy.total();
        let df = (rows[k + 1].lyapunov.total - rows[k - 1].lyapunov.total) / (rows[k + 1].t - rows[k - 1].t);
        let c = if e > 0.0 { -df / e } else { 0.0 };
        margin = margin.min(c);
        if lo.is_nan() {
            lo = rows[k].t;
        }
        hi = rows[k].t;
    }
    if !margin.is_finite() {
        margin = 0.0;
    }
    GronwallReport { margin, passed: margin > 0.0, t_start: lo, t_end: hi }
}
