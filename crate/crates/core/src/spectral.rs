//! Extremal eigenpairs: scalar Dirichlet Laplacian, discretely solenoidal
//! (Stokes-type) Dirichlet eigenmode and the Korn/Poincare constants.

use faer::Side;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::State;
use crate::fem::{dot, norm2, AssembledOperators, SolverError, SparseCholesky, SparseLu, SparseMatrix};
use crate::mesh::Mesh;
use crate::params::PlateParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("eigen-iteration did not converge after {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("constrained space is empty")]
    EmptySpace,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenResult {
    pub lambda: f64,
    /// Nodal eigenvector (boundary entries zero), normalized in the mass norm.
    #[serde(skip)]
    pub field: Vec<f64>,
    /// ||A x - lambda B x|| / ||x|| in Euclidean norms.
    pub residual: f64,
    pub h: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KornEstimates {
    pub c_k1: f64,
    pub c_k2: f64,
    pub c_k: f64,
    pub c_p: f64,
}

/// Penalty parameter of the discrete divergence constraint.
pub const PENALTY: f64 = 1e-8;
const RAYLEIGH_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-8;
const MAX_ITER: usize = 500;

fn scatter(n: usize, dofs: &[usize], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, &i) in dofs.iter().enumerate() {
        out[i] = x[k];
    }
    out
}

/// Smallest eigenpair of the scalar Dirichlet Laplacian, A x = lambda M x.
pub fn laplace_eigen(ops: &AssembledOperators, mesh: &Mesh) -> Result<EigenResult, SpectralError> {
    let int = ops.interior();
    if int.is_empty() {
        return Err(SpectralError::EmptySpace);
    }
    let a = ops.a_lap.select(&int, &int);
    let m = ops.mass.select(&int, &int);
    let chol = SparseCholesky::new(&a)?;
    let bubble = crate::initial_data::Bubble::new(&mesh.geometry);
    let mut x: Vec<f64> = int.iter().map(|&i| bubble.value(mesh.vertices[i])).collect();
    let s = m.quad(&x).sqrt();
    x.iter_mut().for_each(|v| *v /= s);
    let mut lambda = a.quad(&x);
    for it in 1..=MAX_ITER {
        let y = chol.solve(&m.mul_vec(&x));
        let s = m.quad(&y).sqrt();
        x = y.iter().map(|v| v / s).collect();
        let l = a.quad(&x);
        let change = (l - lambda).abs() / l;
        lambda = l;
        let mx = m.mul_vec(&x);
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&mx).map(|(ax, bx)| ax - l * bx).collect();
        let residual = norm2(&r) / norm2(&x);
        if change < RAYLEIGH_TOL && residual <= RESIDUAL_TOL {
            return Ok(EigenResult { lambda, field: scatter(ops.n, &int, &x), residual, h: mesh.h, iterations: it });
        }
        if it == MAX_ITER {
            return Err(SpectralError::NoConvergence { iterations: it, change });
        }
    }
    unreachable!()
}

/// Smallest eigenpair of the vector Dirichlet Laplacian on discretely
/// divergence-free fields, from the penalized problem in mixed form
/// `[[A, B^T], [B, -eps L]]` with the lumped mass `L`.
pub fn solenoidal_eigenmode(ops: &AssembledOperators, mesh: &Mesh) -> Result<EigenResult, SpectralError> {
    let n = ops.n;
    let fv = ops.interior_vec();
    if fv.is_empty() {
        return Err(SpectralError::EmptySpace);
    }
    let nf = fv.len();
    let all: Vec<usize> = (0..n).collect();
    let a = ops.a_vec.select(&fv, &fv);
    let m = ops.mass_vec.select(&fv, &fv);
    let b = ops.b_div.select(&all, &fv);
    let kkt = SparseMatrix::from_blocks(
        &[nf, n],
        &[nf, n],
        &[
            (0, 0, 1.0, &a),
            (0, 1, 1.0, &b.transpose()),
            (1, 0, 1.0, &b),
            (1, 1, -PENALTY, &SparseMatrix::from_diagonal(&ops.lumped)),
        ],
    );
    let lu = SparseLu::new(&kkt)?;
    let weight: Vec<f64> = ops.lumped.iter().map(|l| 1.0 / l).collect();
    let rayleigh = |x: &[f64]| {
        let bx = b.mul_vec(x);
        a.quad(x) + bx.iter().zip(&weight).map(|(v, w)| v * v * w).sum::<f64>() / PENALTY
    };

    // start from the curl of the squared bubble
    let bubble = crate::initial_data::Bubble::new(&mesh.geometry);
    let start: Vec<f64> = (0..2 * n)
        .map(|k| {
            let p = mesh.vertices[k % n];
            let (bv, g) = (bubble.value(p), bubble.grad(p));
            if k < n {
                2.0 * bv * g[1]
            } else {
                -2.0 * bv * g[0]
            }
        })
        .collect();
    let mut x: Vec<f64> = fv.iter().map(|&k| start[k]).collect();
    let s = m.quad(&x).sqrt();
    x.iter_mut().for_each(|v| *v /= s);
    let mut lambda = rayleigh(&x);
    let mut rhs = vec![0.0; nf + n];
    for it in 1..=MAX_ITER {
        rhs[..nf].copy_from_slice(&m.mul_vec(&x));
        let sol = lu.solve(&rhs);
        let s = m.quad(&sol[..nf]).sqrt();
        let y: Vec<f64> = sol[..nf].iter().map(|v| v / s).collect();
        let p: Vec<f64> = sol[nf..].iter().map(|v| v / s).collect();
        let l = rayleigh(&y);
        let change = (l - lambda).abs() / l;
        lambda = l;
        let mut r = a.mul_vec(&y);
        b.mul_vec_t(&p).iter().zip(r.iter_mut()).for_each(|(bp, ri)| *ri += bp);
        m.mul_vec_add(-l, &y, &mut r);
        let residual = norm2(&r) / norm2(&y);
        x = y;
        if change < RAYLEIGH_TOL && residual <= RESIDUAL_TOL {
            return Ok(EigenResult { lambda, field: scatter(2 * n, &fv, &x), residual, h: mesh.h, iterations: it });
        }
        if it == MAX_ITER {
            return Err(SpectralError::NoConvergence { iterations: it, change });
        }
    }
    unreachable!()
}

/// Relative residual bound for Ritz values; by Kahan's bound this is also the
/// relative eigenvalue error.
const LANCZOS_TOL: f64 = 1e-4;
const STAGNATION_TOL: f64 = 1e-9;

/// Largest eigenvalue of `P^{-1} Q` for symmetric positive definite `P`, `Q`,
/// by Lanczos in the `Q` inner product with full reorthogonalization.
fn lanczos_max(p: &SparseMatrix, q: &SparseMatrix) -> Result<f64, SpectralError> {
    let dim = p.nrows();
    let chol = SparseCholesky::new(p)?;
    let max_steps = dim.min(800);
    // deterministic, non-symmetric start vector
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.37 * ((i as f64) * 0.618_033_988_75).fract()).collect();
    let s = q.quad(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= s);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut qbasis: Vec<Vec<f64>> = vec![q.mul_vec(&basis[0])];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last = f64::NAN;
    for j in 0..max_steps {
        let mut w = chol.solve(&qbasis[j]);
        let aj = dot(&w, &qbasis[j]);
        alpha.push(aj);
        for _ in 0..2 {
            for (b, qb) in basis.iter().zip(&qbasis) {
                let c = dot(&w, qb);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let qw = q.mul_vec(&w);
        let bj = dot(&w, &qw).max(0.0).sqrt();
        let k = alpha.len();
        if (k >= 3 && k % 3 == 0) || bj <= 1e-14 * aj.abs() || k == max_steps {
            let t = faer::Mat::<f64>::from_fn(k, k, |r, c| {
                if r == c {
                    alpha[r]
                } else if r == c + 1 {
                    beta[c]
                } else if c == r + 1 {
                    beta[r]
                } else {
                    0.0
                }
            });
            let evd = t.self_adjoint_eigen(Side::Lower).map_err(|_| SpectralError::NoConvergence { iterations: k, change: f64::NAN })?;
            let theta = evd.S().column_vector()[k - 1];
            let tail = evd.U()[(k - 1, k - 1)].abs();
            // the top Ritz value increases monotonically; inside a dense cluster it
            // stagnates long before the residual bound becomes small
            let converged = bj * tail <= LANCZOS_TOL * theta.abs() || (theta - last).abs() <= STAGNATION_TOL * theta.abs();
            if converged || bj <= 1e-14 * aj.abs() || k == max_steps {
                if !converged && k == max_steps && k < dim {
                    return Err(SpectralError::NoConvergence { iterations: k, change: bj * tail / theta.abs() });
                }
                return Ok(theta);
            }
            last = theta;
        }
        beta.push(bj);
        basis.push(w.iter().map(|x| x / bj).collect());
        qbasis.push(qw.iter().map(|x| x / bj).collect());
    }
    unreachable!()
}

/// Smallest and largest eigenvalues of the pencil (A, B).
fn pencil_extremes(a: &SparseMatrix, b: &SparseMatrix) -> Result<(f64, f64), SpectralError> {
    let min = 1.0 / lanczos_max(a, b)?;
    let max = lanczos_max(b, a)?;
    Ok((min, max))
}

/// Korn and Poincare constants on the clamped space with the full H1 norm.
pub fn korn_constants(ops: &AssembledOperators, mesh: &Mesh, p: &PlateParams) -> Result<KornEstimates, SpectralError> {
    let fw = ops.interior();
    let fv = ops.interior_vec();
    if fw.is_empty() {
        return Err(SpectralError::EmptySpace);
    }
    let korn = ops.a_korn.select(&fv, &fv);
    let h1v = SparseMatrix::combine(&[(1.0, &ops.mass_vec), (1.0, &ops.a_vec)]).select(&fv, &fv);
    let (c_k1, c_k2) = pencil_extremes(&korn, &h1v)?;

    let h1w = SparseMatrix::combine(&[(1.0, &ops.mass), (1.0, &ops.a_lap)]).select(&fw, &fw);
    let sizes = [fw.len(), fv.len()];
    let gt = ops.g_grad.transpose().select(&fw, &fv);
    let g = ops.g_grad.select(&fv, &fw);
    let vv = SparseMatrix::combine(&[(1.0, &ops.a_korn), (p.k, &ops.mass_vec)]).select(&fv, &fv);
    let coupled = SparseMatrix::from_blocks(
        &sizes,
        &sizes,
        &[(0, 0, p.k, &ops.a_lap.select(&fw, &fw)), (0, 1, p.k, &gt), (1, 0, p.k, &g), (1, 1, 1.0, &vv)],
    );
    let norm = SparseMatrix::from_blocks(&sizes, &sizes, &[(0, 0, 1.0, &h1w), (1, 1, 1.0, &h1v)]);
    let c_k = 1.0 / lanczos_max(&coupled, &norm)?;
    let c_p = 1.0 / laplace_eigen(ops, mesh)?.lambda;
    Ok(KornEstimates { c_k1, c_k2, c_k, c_p })
}

/// Limit of a sequence on three dyadically refined levels, with the observed order.
pub fn richardson(l1: f64, l2: f64, l3: f64) -> Option<(f64, f64)> {
    let (d1, d2) = (l1 - l2, l2 - l3);
    if d1 == 0.0 || d2 == 0.0 || d1.signum() != d2.signum() {
        return None;
    }
    let order = (d1 / d2).log2();
    if !(order.is_finite() && order > 0.0) {
        return None;
    }
    Some((l3 - d2 / (2f64.powf(order) - 1.0), order))
}

/// Non-decaying datum: v = u*, everything else zero.
pub fn nondecay_initial_data(eig: &EigenResult) -> State {
    let n = eig.field.len() / 2;
    let mut s = State::zeros(n);
    s.v = eig.field.clone();
    s
}

/// Predicted angular frequency of the solenoidal mode: sqrt((lambda S33 + K) / rho2).
pub fn nondecay_frequency(lambda: f64, p: &PlateParams) -> f64 {
    ((lambda * p.dflex * (1.0 - p.mu) / 2.0 + p.k) / p.rho2).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::energy;
    use crate::fem::assemble;
    use crate::mesh::{mesh_disk, mesh_rectangle};
    use crate::params::build_stiffness_s;
    use std::f64::consts::PI;

    fn setup(mesh: Mesh) -> (Mesh, AssembledOperators) {
        let ops = assemble(&mesh, &build_stiffness_s(&PlateParams::default()));
        (mesh, ops)
    }

    #[test]
    fn richardson_recovers_power_law() {
        let f = |h: f64| 3.0 + 2.0 * h * h;
        let (lim, order) = richardson(f(0.4), f(0.2), f(0.1)).unwrap();
        assert!((lim - 3.0).abs() < 1e-12);
        assert!((order - 2.0).abs() < 1e-12);
        assert!(richardson(1.0, 1.0, 1.0).is_none());
    }

    #[test]
    fn laplace_disk_close_to_bessel_zero() {
        let (mesh, ops) = setup(mesh_disk(1.0, 0.1).unwrap());
        let e = laplace_eigen(&ops, &mesh).unwrap();
        // j_{0,1}^2
        assert!((e.lambda - 5.783_185_962_946_784).abs() < 0.05, "{}", e.lambda);
        assert!(e.residual <= 1e-8);
        assert!((ops.mass.quad(&e.field) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stokes_mode_is_solenoidal_and_above_scalar() {
        let (mesh, ops) = setup(mesh_disk(1.0, 0.1).unwrap());
        let st = solenoidal_eigenmode(&ops, &mesh).unwrap();
        let lap = laplace_eigen(&ops, &mesh).unwrap();
        assert!(st.lambda > lap.lambda);
        // j_{1,1}^2
        assert!((st.lambda - 14.681_970_642_123_9).abs() < 0.3, "{}", st.lambda);
        assert!(st.residual <= 1e-8, "{}", st.residual);
        let div = ops.lumped_dual_norm(&ops.b_div.mul_vec(&st.field));
        assert!(div <= 1e-6 * ops.h1_norm(&st.field), "{div}");
    }

    #[test]
    fn stokes_square_exceeds_scalar() {
        let (mesh, ops) = setup(mesh_rectangle(1.0, 1.0, 0.1).unwrap());
        let st = solenoidal_eigenmode(&ops, &mesh).unwrap();
        assert!(st.lambda > 2.0 * PI * PI);
    }

    #[test]
    fn nondecay_datum_energy_is_elastic() {
        let p = PlateParams::default();
        let (mesh, ops) = setup(mesh_disk(1.0, 0.2).unwrap());
        let st = solenoidal_eigenmode(&ops, &mesh).unwrap();
        let s = nondecay_initial_data(&st);
        let e = energy(&ops, &p, &s);
        let expect = 0.5 * ops.a_korn.quad(&st.field) + 0.5 * p.k * ops.mass_vec.quad(&st.field);
        assert!((e.total() - expect).abs() < 1e-12 * expect);
        assert_eq!(e.kin_w + e.kin_v + e.theta + e.q, 0.0);
    }

    #[test]
    fn korn_constants_are_ordered() {
        let p = PlateParams { mu: 0.0, ..PlateParams::default() };
        let mesh = mesh_disk(1.0, 0.2).unwrap();
        let ops = assemble(&mesh, &build_stiffness_s(&p));
        let k = korn_constants(&ops, &mesh, &p).unwrap();
        assert!(k.c_k1 > 0.0 && k.c_k1 <= k.c_k2 && k.c_k > 0.0 && k.c_p > 0.0);
        let lap = laplace_eigen(&ops, &mesh).unwrap();
        assert!((k.c_p * lap.lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_matches_diagonal_pencil() {
        let a = SparseMatrix::from_diagonal(&[1.0, 4.0, 9.0, 2.0, 7.0]);
        let b = SparseMatrix::from_diagonal(&[1.0, 2.0, 3.0, 1.0, 1.0]);
        let (lo, hi) = pencil_extremes(&a, &b).unwrap();
        assert!((lo - 1.0).abs() < 1e-12);
        assert!((hi - 7.0).abs() < 1e-12);
    }
}
