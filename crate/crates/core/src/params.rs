//! Physical coefficients of the plate model and the bending stiffness matrix.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

const PSD_TOL: f64 = -1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameters must be a JSON object")]
    NotAnObject,
    #[error("unknown parameter `{0}`")]
    UnknownField(String),
    #[error("parameter `{0}` is not a finite number")]
    NotANumber(String),
    #[error("coefficient `{0}` must be positive")]
    NonPositiveCoefficient(String),
    #[error("coefficient `{0}` must be non-negative")]
    NegativeCoefficient(String),
    #[error("mu = {0} lies outside the open interval (-1, 1)")]
    MuOutOfRange(f64),
    #[error("Ddamp is not symmetric (|D12 - D21| = {0:e})")]
    DampNotSymmetric(f64),
    #[error("Ddamp is not positive semidefinite (min eigenvalue {0:e})")]
    DampNotPSD(f64),
}

/// All coefficients of the damped plate system.
///
/// `k` is the shear modulus K, `ddamp` the angle damping matrix and `dflex`
/// the flexural rigidity. They are serialized under the names used in configs
/// (`K`, `Ddamp`, `Dflex`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateParams {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub tau0: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub kappa: f64,
    pub delta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub d: f64,
    #[serde(rename = "Ddamp")]
    pub ddamp: [[f64; 2]; 2],
    #[serde(rename = "Dflex")]
    pub dflex: f64,
    pub mu: f64,
}

impl Default for PlateParams {
    /// Unit coefficients, mu = 0.3, d = 1 and identity angle damping.
    fn default() -> Self {
        PlateParams {
            rho1: 1.0,
            rho2: 1.0,
            rho3: 1.0,
            tau0: 1.0,
            k: 1.0,
            kappa: 1.0,
            delta: 1.0,
            gamma: 1.0,
            beta: 1.0,
            d: 1.0,
            ddamp: [[1.0, 0.0], [0.0, 1.0]],
            dflex: 1.0,
            mu: 0.3,
        }
    }
}

impl PlateParams {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("plain struct serializes")
    }

    /// Fastest characteristic speed among the shear, bending and thermal waves.
    pub fn max_wave_speed(&self) -> f64 {
        let shear = (self.k / self.rho1).sqrt();
        let bending = (self.dflex * (1.0 + self.mu.abs()) / self.rho2).sqrt();
        let thermal = self.kappa / (self.rho3 * self.tau0).sqrt();
        shear.max(bending).max(thermal)
    }

    /// Default time step for a mesh of size `h`: half a cell per fastest wave.
    pub fn default_dt(&self, h: f64) -> f64 {
        0.5 * h / self.max_wave_speed()
    }
}

/// Reads a parameter map. Missing keys take the values of [`PlateParams::default`];
/// unknown keys are rejected so that typos do not pass silently.
pub fn validate_params(raw: &Value) -> Result<PlateParams, ParamError> {
    let map = raw.as_object().ok_or(ParamError::NotAnObject)?;
    let mut p = PlateParams::default();
    for (key, val) in map {
        match key.as_str() {
            "Ddamp" => p.ddamp = read_matrix(val)?,
            _ => {
                let x = val
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ParamError::NotANumber(key.clone()))?;
                let slot = match key.as_str() {
                    "rho1" => &mut p.rho1,
                    "rho2" => &mut p.rho2,
                    "rho3" => &mut p.rho3,
                    "tau0" => &mut p.tau0,
                    "K" => &mut p.k,
                    "kappa" => &mut p.kappa,
                    "delta" => &mut p.delta,
                    "gamma" => &mut p.gamma,
                    "beta" => &mut p.beta,
                    "d" => &mut p.d,
                    "Dflex" => &mut p.dflex,
                    "mu" => &mut p.mu,
                    _ => return Err(ParamError::UnknownField(key.clone())),
                };
                *slot = x;
            }
        }
    }
    check(&p)?;
    Ok(p)
}

fn read_matrix(val: &Value) -> Result<[[f64; 2]; 2], ParamError> {
    let bad = || ParamError::NotANumber("Ddamp".into());
    let rows = val.as_array().filter(|r| r.len() == 2).ok_or_else(bad)?;
    let mut out = [[0.0; 2]; 2];
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().filter(|r| r.len() == 2).ok_or_else(bad)?;
        for (j, x) in row.iter().enumerate() {
            out[i][j] = x.as_f64().filter(|x| x.is_finite()).ok_or_else(bad)?;
        }
    }
    Ok(out)
}

fn check(p: &PlateParams) -> Result<(), ParamError> {
    let positive = [
        ("rho1", p.rho1),
        ("rho2", p.rho2),
        ("rho3", p.rho3),
        ("tau0", p.tau0),
        ("K", p.k),
        ("kappa", p.kappa),
        ("Dflex", p.dflex),
    ];
    for (name, x) in positive {
        if !(x > 0.0) {
            return Err(ParamError::NonPositiveCoefficient(name.into()));
        }
    }
    // delta and gamma may vanish: the conservative limit switches off every coupling
    for (name, x) in [("delta", p.delta), ("gamma", p.gamma), ("beta", p.beta), ("d", p.d)] {
        if !(x >= 0.0) {
            return Err(ParamError::NegativeCoefficient(name.into()));
        }
    }
    if !(p.mu > -1.0 && p.mu < 1.0) {
        return Err(ParamError::MuOutOfRange(p.mu));
    }
    if !(p.mu > 0.0 && p.mu < 0.5) {
        log::warn!("mu = {} is outside the physical range (0, 1/2)", p.mu);
    }
    let asym = (p.ddamp[0][1] - p.ddamp[1][0]).abs();
    let scale = p.ddamp.iter().flatten().fold(1.0_f64, |m, x| m.max(x.abs()));
    if asym > 4.0 * f64::EPSILON * scale {
        return Err(ParamError::DampNotSymmetric(asym));
    }
    let lmin = min_damping_eigenvalue(p);
    if lmin < PSD_TOL * scale {
        return Err(ParamError::DampNotPSD(lmin));
    }
    Ok(())
}

/// Smallest eigenvalue of the (symmetrized) angle damping matrix, clamped at zero
/// when it is a tiny negative rounding artefact.
pub fn min_damping_eigenvalue(p: &PlateParams) -> f64 {
    let [[a, b], [c, d]] = p.ddamp;
    let off = 0.5 * (b + c);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + off * off).sqrt();
    let l = mean - rad;
    if l < 0.0 && l > PSD_TOL {
        0.0
    } else {
        l
    }
}

/// Bending stiffness S acting on the strain vector (d1 v1, d2 v2, d2 v1 + d1 v2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessS {
    pub entries: [[f64; 3]; 3],
}

impl StiffnessS {
    /// Closed-form spectrum, ascending for mu >= 0.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let a = self.entries[0][0];
        let b = self.entries[0][1];
        let s = self.entries[2][2];
        let mut ev = [s, a - b, a + b];
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Shear part D(1 - mu)/2 of the bending form.
    pub fn shear_modulus(&self) -> f64 {
        self.entries[2][2]
    }

    pub fn apply(&self, e: [f64; 3]) -> [f64; 3] {
        let s = &self.entries;
        [
            s[0][0] * e[0] + s[0][1] * e[1] + s[0][2] * e[2],
            s[1][0] * e[0] + s[1][1] * e[1] + s[1][2] * e[2],
            s[2][0] * e[0] + s[2][1] * e[1] + s[2][2] * e[2],
        ]
    }
}

pub fn build_stiffness_s(p: &PlateParams) -> StiffnessS {
    let d = p.dflex;
    let mu = p.mu;
    StiffnessS {
        entries: [
            [d, d * mu, 0.0],
            [d * mu, d, 0.0],
            [0.0, 0.0, d * (1.0 - mu) / 2.0],
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn sym_eigs(m: [[f64; 3]; 3]) -> [f64; 3] {
        let mat = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
        let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2]]
    }

    #[test]
    fn unit_parameters_validate() {
        let raw = json!({"rho1": 1, "rho2": 1, "rho3": 1, "tau0": 1, "K": 1, "kappa": 1,
            "delta": 1, "gamma": 1, "beta": 1, "d": 1, "Dflex": 1, "mu": 0.3,
            "Ddamp": [[1, 0], [0, 1]]});
        let p = validate_params(&raw).unwrap();
        assert_eq!(p, PlateParams::default());
    }

    #[test]
    fn mu_one_rejected() {
        let err = validate_params(&json!({"mu": 1.0})).unwrap_err();
        assert_eq!(err, ParamError::MuOutOfRange(1.0));
    }

    #[test]
    fn indefinite_damping_rejected() {
        let err = validate_params(&json!({"Ddamp": [[1, 2], [2, 1]]})).unwrap_err();
        match err {
            ParamError::DampNotPSD(l) => assert!((l + 1.0).abs() < 1e-14),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        let err = validate_params(&json!({"kappa": 0.0})).unwrap_err();
        assert_eq!(err, ParamError::NonPositiveCoefficient("kappa".into()));
        assert!(err.to_string().contains("kappa"));
        let err = validate_params(&json!({"beta": -1.0})).unwrap_err();
        assert_eq!(err, ParamError::NegativeCoefficient("beta".into()));
        let err = validate_params(&json!({"rho": 1.0})).unwrap_err();
        assert_eq!(err, ParamError::UnknownField("rho".into()));
        let err = validate_params(&json!({"d": "x"})).unwrap_err();
        assert_eq!(err, ParamError::NotANumber("d".into()));
        let err = validate_params(&json!({"Ddamp": [[1, 0.5], [0, 1]]})).unwrap_err();
        assert!(matches!(err, ParamError::DampNotSymmetric(_)));
    }

    #[test]
    fn stiffness_examples() {
        let mut p = PlateParams { mu: 0.0, ..Default::default() };
        assert_eq!(
            build_stiffness_s(&p).entries,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]]
        );
        p.mu = 0.3;
        let ev = build_stiffness_s(&p).eigenvalues();
        for (a, b) in ev.iter().zip([0.35, 0.7, 1.3]) {
            assert!((a - b).abs() < 1e-14);
        }
        p.dflex = 2.0;
        p.mu = 0.5;
        assert_eq!(
            build_stiffness_s(&p).entries,
            [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.5]]
        );
    }

    #[test]
    fn damping_eigenvalue_examples() {
        let mut p = PlateParams::default();
        assert_eq!(min_damping_eigenvalue(&p), 1.0);
        p.ddamp = [[0.0; 2]; 2];
        assert_eq!(min_damping_eigenvalue(&p), 0.0);
        p.ddamp = [[2.0, 1.0], [1.0, 2.0]];
        assert!((min_damping_eigenvalue(&p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wave_speed_default_dt() {
        let p = PlateParams::default();
        let c = 1.3_f64.sqrt();
        assert!((p.max_wave_speed() - c).abs() < 1e-15);
        assert!((p.default_dt(0.1) - 0.05 / c).abs() < 1e-15);
    }

    fn params_strategy() -> impl Strategy<Value = PlateParams> {
        (
            prop::array::uniform9(0.05..10.0f64),
            0.0..5.0f64,
            0.0..5.0f64,
            -0.99..0.99f64,
            (0.0..3.0f64, 0.0..3.0f64, -1.0..1.0f64),
        )
            .prop_map(|(pos, beta, d, mu, (a, c, t))| {
                let off = t * (a * c).sqrt();
                PlateParams {
                    rho1: pos[0],
                    rho2: pos[1],
                    rho3: pos[2],
                    tau0: pos[3],
                    k: pos[4],
                    kappa: pos[5],
                    delta: pos[6],
                    gamma: pos[7],
                    dflex: pos[8],
                    beta,
                    d,
                    mu,
                    ddamp: [[a, off], [off, c]],
                }
            })
    }

    proptest! {
        #[test]
        fn stiffness_spectrum_matches_closed_form(p in params_strategy()) {
            let s = build_stiffness_s(&p);
            let oracle = sym_eigs(s.entries);
            let mut closed = [p.dflex * (1.0 - p.mu) / 2.0, p.dflex * (1.0 - p.mu), p.dflex * (1.0 + p.mu)];
            closed.sort_by(f64::total_cmp);
            for i in 0..3 {
                prop_assert!((oracle[i] - closed[i]).abs() <= 1e-12 * closed[2]);
                prop_assert!(oracle[i] > 0.0);
            }
        }

        #[test]
        fn validation_is_idempotent(p in params_strategy()) {
            let once = validate_params(&p.to_value()).unwrap();
            let twice = validate_params(&once.to_value()).unwrap();
            prop_assert_eq!(&once, &p);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn psd_damping_matches_oracle(a in -2.0..3.0f64, b in -2.0..2.0f64, c in -2.0..3.0f64) {
            let p = PlateParams { ddamp: [[a, b], [b, c]], ..Default::default() };
            let mat = nalgebra::Matrix2::new(a, b, b, c);
            let lmin = mat.symmetric_eigenvalues().min();
            prop_assert!((min_damping_eigenvalue(&p) - lmin).abs() < 1e-12);
        }
    }
}
