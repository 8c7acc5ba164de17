//! Initial-condition presets and smooth random fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{State, ThermalBc};
use crate::fem::{project_l2, project_l2_vec, AssembledOperators};
use crate::mesh::{Geometry, Mesh};
use crate::spectral::EigenResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitialDataError {
    #[error("preset needs a solenoidal eigenmode")]
    MissingEigenmode,
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("invalid preset: {0}")]
    InvalidPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetKind {
    RadialGaussian,
    SolenoidalEigenmode,
    RandomClamped,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPreset {
    pub kind: PresetKind,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_width() -> f64 {
    0.3
}

impl InitialPreset {
    pub fn new(kind: PresetKind) -> Self {
        InitialPreset { kind, amplitude: 1.0, width: default_width(), seed: 0 }
    }

    pub fn validate(&self) -> Result<(), InitialDataError> {
        if !self.amplitude.is_finite() {
            return Err(InitialDataError::InvalidPreset("amplitude must be finite".into()));
        }
        if self.kind == PresetKind::RadialGaussian && !(self.width > 0.0 && self.width.is_finite()) {
            return Err(InitialDataError::InvalidPreset("width must be positive".into()));
        }
        Ok(())
    }
}

/// Subtracts the lumped mean, so that the lumped integral vanishes.
pub fn mean_zero_project(theta: &[f64], ops: &AssembledOperators) -> Vec<f64> {
    let m = ops.lumped_mean(theta);
    theta.iter().map(|x| x - m).collect()
}

/// Builds the initial state; `eig` is needed only for the eigenmode preset.
pub fn build_initial(
    preset: &InitialPreset,
    mesh: &Mesh,
    ops: &AssembledOperators,
    bc: ThermalBc,
    eig: Option<&EigenResult>,
) -> Result<State, InitialDataError> {
    preset.validate()?;
    let n = mesh.n_vertices();
    let a = preset.amplitude;
    let mut s = match preset.kind {
        PresetKind::Zero => State::zeros(n),
        PresetKind::SolenoidalEigenmode => {
            let eig = eig.ok_or(InitialDataError::MissingEigenmode)?;
            if eig.field.len() != 2 * n {
                return Err(InitialDataError::GeometryMismatch(format!(
                    "eigenfield has {} entries, expected {}",
                    eig.field.len(),
                    2 * n
                )));
            }
            let mut s = State::zeros(n);
            s.v = eig.field.iter().map(|x| a * x).collect();
            s
        }
        PresetKind::RadialGaussian => {
            let Geometry::Disk { radius } = mesh.geometry else {
                return Err(InitialDataError::GeometryMismatch("radial presets need a disk".into()));
            };
            let sig = preset.width;
            let gauss = move |p: [f64; 2]| (-(p[0] * p[0] + p[1] * p[1]) / (2.0 * sig * sig)).exp();
            let clamp = move |p: [f64; 2]| 1.0 - (p[0] * p[0] + p[1] * p[1]) / (radius * radius);
            // f(r) e_r with f(r) = a (r / sigma) gauss clamp
            let radial = move |p: [f64; 2]| {
                let f = a * gauss(p) * clamp(p) / sig;
                [f * p[0], f * p[1]]
            };
            let theta = project_l2(mesh, |p| a * gauss(p));
            let theta = match bc {
                ThermalBc::Neumann => mean_zero_project(&theta, ops),
                ThermalBc::Dirichlet => project_l2(mesh, |p| a * gauss(p) * clamp(p)),
            };
            State {
                w: project_l2(mesh, |p| a * gauss(p) * clamp(p)),
                wt: vec![0.0; n],
                v: project_l2_vec(mesh, radial),
                vt: vec![0.0; 2 * n],
                theta,
                q: project_l2_vec(mesh, radial),
            }
        }
        PresetKind::RandomClamped => {
            let mut rng = ChaCha8Rng::seed_from_u64(preset.seed);
            let bubble = Bubble::new(&mesh.geometry);
            let mut scalar = |clamped: bool| {
                let f = SmoothField::random(&mut rng, 6, 3.0);
                project_l2(mesh, |p| a * f.value(p) * if clamped { bubble.value(p) } else { 1.0 })
            };
            let w = scalar(true);
            let wt = scalar(true);
            let v = [scalar(true), scalar(true)].concat();
            let vt = [scalar(true), scalar(true)].concat();
            let theta = match bc {
                ThermalBc::Neumann => mean_zero_project(&scalar(false), ops),
                ThermalBc::Dirichlet => scalar(true),
            };
            let q = [scalar(false), scalar(false)].concat();
            State { w, wt, v, vt, theta, q }
        }
    };
    s.apply_constraints(ops, bc);
    Ok(s)
}

/// Sum of plane-wave modes `a cos(k . x + phase)` with analytic derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothField {
    modes: Vec<(f64, [f64; 2], f64)>,
}

impl SmoothField {
    pub fn random<R: Rng>(rng: &mut R, count: usize, max_freq: f64) -> Self {
        let modes = (0..count)
            .map(|_| {
                let amp = rng.random_range(-1.0..1.0);
                let k = [rng.random_range(-max_freq..max_freq), rng.random_range(-max_freq..max_freq)];
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amp, k, phase)
            })
            .collect();
        SmoothField { modes }
    }

    pub fn constant(c: f64) -> Self {
        SmoothField { modes: vec![(c, [0.0, 0.0], 0.0)] }
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        self.modes.iter().map(|(a, k, ph)| a * (k[0] * p[0] + k[1] * p[1] + ph).cos()).sum()
    }

    pub fn grad(&self, p: [f64; 2]) -> [f64; 2] {
        self.modes.iter().fold([0.0, 0.0], |g, (a, k, ph)| {
            let s = -a * (k[0] * p[0] + k[1] * p[1] + ph).sin();
            [g[0] + s * k[0], g[1] + s * k[1]]
        })
    }

    pub fn laplacian(&self, p: [f64; 2]) -> f64 {
        self.modes
            .iter()
            .map(|(a, k, ph)| -a * (k[0] * k[0] + k[1] * k[1]) * (k[0] * p[0] + k[1] * p[1] + ph).cos())
            .sum()
    }
}

/// Polynomial bubble vanishing on the boundary of the geometry, unit at its centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bubble {
    geometry: Geometry,
}

impl Bubble {
    pub fn new(geometry: &Geometry) -> Self {
        Bubble { geometry: *geometry }
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        match self.geometry {
            Geometry::Disk { radius } => 1.0 - (p[0] * p[0] + p[1] * p[1]) / (radius * radius),
            Geometry::Rectangle { lx, ly } => 16.0 * p[0] * (lx - p[0]) * p[1] * (ly - p[1]) / (lx * lx * ly * ly),
        }
    }

    pub fn grad(&self, p: [f64; 2]) -> [f64; 2] {
        match self.geometry {
            Geometry::Disk { radius } => [-2.0 * p[0] / (radius * radius), -2.0 * p[1] / (radius * radius)],
            Geometry::Rectangle { lx, ly } => {
                let c = 16.0 / (lx * lx * ly * ly);
                [c * (lx - 2.0 * p[0]) * p[1] * (ly - p[1]), c * p[0] * (lx - p[0]) * (ly - 2.0 * p[1])]
            }
        }
    }

    pub fn laplacian(&self, p: [f64; 2]) -> f64 {
        match self.geometry {
            Geometry::Disk { radius } => -4.0 / (radius * radius),
            Geometry::Rectangle { lx, ly } => {
                let c = 16.0 / (lx * lx * ly * ly);
                -2.0 * c * (p[1] * (ly - p[1]) + p[0] * (lx - p[0]))
            }
        }
    }

    /// Value and gradient of `b^2 f`, which vanishes with its gradient on the boundary.
    pub fn squared_times(&self, f: &SmoothField, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (b, gb, v, gv) = (self.value(p), self.grad(p), f.value(p), f.grad(p));
        let g = [2.0 * b * gb[0] * v + b * b * gv[0], 2.0 * b * gb[1] * v + b * b * gv[1]];
        (b * b * v, g)
    }

    /// Laplacian of `b^2 f`.
    pub fn squared_times_laplacian(&self, f: &SmoothField, p: [f64; 2]) -> f64 {
        let (b, gb, lb) = (self.value(p), self.grad(p), self.laplacian(p));
        let g2 = [2.0 * b * gb[0], 2.0 * b * gb[1]];
        let lap_g = 2.0 * (gb[0] * gb[0] + gb[1] * gb[1]) + 2.0 * b * lb;
        let gv = f.grad(p);
        f.value(p) * lap_g + 2.0 * (g2[0] * gv[0] + g2[1] * gv[1]) + b * b * f.laplacian(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::mesh::{mesh_disk, mesh_rectangle};
    use crate::params::{build_stiffness_s, PlateParams};
    use proptest::prelude::*;

    fn disk(h: f64) -> (Mesh, AssembledOperators) {
        let mesh = mesh_disk(1.0, h).unwrap();
        let ops = assemble(&mesh, &build_stiffness_s(&PlateParams::default()));
        (mesh, ops)
    }

    #[test]
    fn zero_preset() {
        let (mesh, ops) = disk(0.3);
        let s = build_initial(&InitialPreset::new(PresetKind::Zero), &mesh, &ops, ThermalBc::Neumann, None).unwrap();
        assert_eq!(s, State::zeros(mesh.n_vertices()));
    }

    #[test]
    fn radial_gaussian_properties() {
        let (mesh, ops) = disk(0.1);
        let preset = InitialPreset::new(PresetKind::RadialGaussian);
        let s = build_initial(&preset, &mesh, &ops, ThermalBc::Neumann, None).unwrap();
        let scale = ops.l2_norm(&s.theta);
        assert!(ops.lumped_integral(&s.theta).abs() <= 1e-12 * scale);
        assert_eq!(s.constraint_violation(&ops, ThermalBc::Neumann), 0.0);
        let rot = ops.lumped_dual_norm(&ops.r_rot.mul_vec(&s.v));
        assert!(rot <= mesh.h * ops.l2_norm_vec(&s.v), "rot {rot}");
        let again = build_initial(&preset, &mesh, &ops, ThermalBc::Neumann, None).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn radial_fields_are_equivariant() {
        let (mesh, ops) = disk(0.15);
        let s = build_initial(&InitialPreset::new(PresetKind::RadialGaussian), &mesh, &ops, ThermalBc::Dirichlet, None)
            .unwrap();
        let n = mesh.n_vertices();
        for i in 0..n {
            for j in i + 1..n {
                let (pi, pj) = (mesh.vertices[i], mesh.vertices[j]);
                let (ri, rj) = (pi[0].hypot(pi[1]), pj[0].hypot(pj[1]));
                if (ri - rj).abs() > 1e-13 || ri < 1e-12 {
                    continue;
                }
                assert!((s.w[i] - s.w[j]).abs() < 1e-12);
                assert!((s.theta[i] - s.theta[j]).abs() < 1e-12);
                // radial magnitude equal, direction along e_r
                let fi = s.v[i] * pi[0] / ri + s.v[n + i] * pi[1] / ri;
                let fj = s.v[j] * pj[0] / rj + s.v[n + j] * pj[1] / rj;
                assert!((fi - fj).abs() < 1e-12);
                assert!((s.v[i] * pi[1] - s.v[n + i] * pi[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn preset_errors() {
        let mesh = mesh_rectangle(1.0, 1.0, 0.25).unwrap();
        let ops = assemble(&mesh, &build_stiffness_s(&PlateParams::default()));
        let err = build_initial(&InitialPreset::new(PresetKind::RadialGaussian), &mesh, &ops, ThermalBc::Neumann, None);
        assert!(matches!(err, Err(InitialDataError::GeometryMismatch(_))));
        let err = build_initial(&InitialPreset::new(PresetKind::SolenoidalEigenmode), &mesh, &ops, ThermalBc::Neumann, None);
        assert_eq!(err, Err(InitialDataError::MissingEigenmode));
        let bad = InitialPreset { width: -1.0, ..InitialPreset::new(PresetKind::RadialGaussian) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mean_projection_examples() {
        let (mesh, ops) = disk(0.2);
        let c = mean_zero_project(&vec![2.5; mesh.n_vertices()], &ops);
        assert!(c.iter().all(|x| x.abs() < 1e-14));
        let x = project_l2(&mesh, |p| p[0]);
        let px = mean_zero_project(&x, &ops);
        assert!(px.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        let again = mean_zero_project(&px, &ops);
        assert!(again.iter().zip(&px).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn bubble_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = SmoothField::random(&mut rng, 4, 2.0);
        for geom in [Geometry::Disk { radius: 1.3 }, Geometry::Rectangle { lx: 2.0, ly: 1.0 }] {
            let b = Bubble::new(&geom);
            let p = [0.31, 0.47];
            let e = 1e-4;
            let val = |q: [f64; 2]| b.squared_times(&f, q).0;
            let fd_lap = (val([p[0] + e, p[1]]) + val([p[0] - e, p[1]]) + val([p[0], p[1] + e]) + val([p[0], p[1] - e])
                - 4.0 * val(p))
                / (e * e);
            assert!((fd_lap - b.squared_times_laplacian(&f, p)).abs() < 1e-5);
            let g = b.squared_times(&f, p).1;
            let gx = (val([p[0] + e, p[1]]) - val([p[0] - e, p[1]])) / (2.0 * e);
            assert!((gx - g[0]).abs() < 1e-7);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn random_presets_are_clamped_and_reproducible(seed in any::<u64>(), dirichlet in any::<bool>()) {
            let (mesh, ops) = disk(0.3);
            let bc = if dirichlet { ThermalBc::Dirichlet } else { ThermalBc::Neumann };
            let preset = InitialPreset { seed, ..InitialPreset::new(PresetKind::RandomClamped) };
            let s = build_initial(&preset, &mesh, &ops, bc, None).unwrap();
            prop_assert_eq!(s.constraint_violation(&ops, bc), 0.0);
            prop_assert_eq!(&s, &build_initial(&preset, &mesh, &ops, bc, None).unwrap());
            if !dirichlet {
                prop_assert!(ops.lumped_integral(&s.theta).abs() < 1e-12 * (1.0 + ops.l2_norm(&s.theta)));
            }
        }
    }
}
