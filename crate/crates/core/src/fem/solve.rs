use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::Side;
use thiserror::Error;

use super::sparse::{axpy, dot, norm2, SparseMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual ||b - A x|| / ||b||.
    pub residual: f64,
}

pub const DEFAULT_TOL: f64 = 1e-10;

/// Jacobi-preconditioned CG with the default iteration cap of 20 n.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>, SolverError> {
    let mut x = vec![0.0; b.len()];
    let jac = JacobiPreconditioner::new(a);
    pcg(|v, out| a.mul_vec_into(v, out), |r, z| jac.apply(r, z), b, &mut x, tol, 20 * b.len().max(1), None)?;
    Ok(x)
}

pub struct JacobiPreconditioner {
    inv: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn new(a: &SparseMatrix) -> Self {
        Self::from_diagonal(&a.diagonal())
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let inv = d.iter().map(|&x| if x.abs() > 0.0 { 1.0 / x } else { 1.0 }).collect();
        JacobiPreconditioner { inv }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv) {
            *zi = ri * di;
        }
    }
}

/// Preconditioned conjugate gradients on `x`, starting from its current value.
///
/// `project`, when given, is applied to the residual and the preconditioned
/// residual; with an orthogonal projector onto the complement of the kernel this
/// solves singular consistent systems on the quotient space.
pub fn pcg<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<SolveStats, SolverError>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    if let Some(pr) = project {
        pr(&mut r);
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    if let Some(pr) = project {
        pr(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = norm2(&r) / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolverError::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        if let Some(pr) = project {
            pr(&mut r);
        }
        res = norm2(&r) / bnorm;
        precond(&r, &mut z);
        if let Some(pr) = project {
            pr(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= tol {
        return Ok(SolveStats { iterations: max_iter, residual: res });
    }
    Err(SolverError::NoConvergence { iterations: max_iter, residual: res })
}

/// Restarted, right-preconditioned GMRES with modified Gram-Schmidt.
/// Convergence is declared on the true residual ||b - A x|| <= tol ||b||.
pub fn gmres<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<SolveStats, SolverError>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let m = restart.max(1);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut hess = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut total = 0;
    loop {
        apply(x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm2(&r);
        let res = beta / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: total, residual: res });
        }
        if total >= max_iter {
            return Err(SolverError::NoConvergence { iterations: total, residual: res });
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            precond(&basis[k], &mut z);
            apply(&z, &mut w);
            for (j, v) in basis.iter().enumerate() {
                let hjk = dot(&w, v);
                hess[j][k] = hjk;
                axpy(-hjk, v, &mut w);
            }
            let hn = norm2(&w);
            hess[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = hess[k][k] / denom;
            sn[k] = hess[k + 1][k] / denom;
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            if g[k + 1].abs() <= 0.5 * tol * bnorm || hn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        if k_used == 0 {
            return Err(SolverError::Singular);
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut update);
        }
        precond(&update, &mut z);
        axpy(1.0, &z, x);
    }
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct SparseCholesky {
    llt: Llt<usize, f64>,
    n: usize,
}

impl SparseCholesky {
    pub fn new(a: &SparseMatrix) -> Result<Self, SolverError> {
        let llt = a.to_faer().sp_cholesky(Side::Lower).map_err(|_| SolverError::NotPositiveDefinite)?;
        Ok(SparseCholesky { llt, n: a.nrows() })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let rhs = faer::Col::<f64>::from_fn(self.n, |i| b[i]);
        let x = self.llt.solve(&rhs);
        (0..self.n).map(|i| x[i]).collect()
    }
}

/// Sparse LU factorization with partial pivoting, for indefinite systems.
pub struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn new(a: &SparseMatrix) -> Result<Self, SolverError> {
        let lu = a.to_faer().sp_lu().map_err(|_| SolverError::Singular)?;
        Ok(SparseLu { lu, n: a.nrows() })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let rhs = faer::Col::<f64>::from_fn(self.n, |i| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplace_1d(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn identity_and_diagonal() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(solve_spd(&SparseMatrix::identity(3), &b, 1e-12).unwrap(), b);
        let n = 7;
        let d: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let x = solve_spd(&SparseMatrix::from_diagonal(&d), &vec![1.0; n], 1e-12).unwrap();
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - 1.0 / (i + 1) as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn iteration_cap_reported() {
        let a = laplace_1d(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let err = pcg(|v, o| a.mul_vec_into(v, o), |r, z| z.copy_from_slice(r), &b, &mut x, 1e-12, 3, None)
            .unwrap_err();
        assert!(matches!(err, SolverError::NoConvergence { iterations: 3, .. }));
    }

    #[test]
    fn direct_factorizations() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x = SparseCholesky::new(&a).unwrap().solve(&b);
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&r) < 1e-12);
        let neg = a.scaled(-1.0);
        assert!(SparseCholesky::new(&neg).is_err());
        let x = SparseLu::new(&neg).unwrap().solve(&b);
        let r: Vec<f64> = neg.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&r) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn cg_and_gmres_meet_tolerance(
            n in 5usize..60,
            shift in 0.01..2.0f64,
            skew in 0.0..1.5f64,
            seed in prop::collection::vec(-1.0..1.0f64, 60),
        ) {
            let lap = laplace_1d(n);
            let a = SparseMatrix::combine(&[(1.0, &lap), (shift, &SparseMatrix::identity(n))]);
            let b = &seed[..n];
            let x = solve_spd(&a, b, 1e-10).unwrap();
            let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(p, q)| p - q).collect();
            prop_assert!(norm2(&r) <= 1e-10 * norm2(b) + 1e-300);

            let mut t: Vec<_> = a.triplets().collect();
            for i in 0..n - 1 {
                t.push((i, i + 1, skew));
                t.push((i + 1, i, -skew));
            }
            let ns = SparseMatrix::from_triplets(n, n, &t);
            let jac = JacobiPreconditioner::new(&ns);
            let mut y = vec![0.0; n];
            gmres(|v, o| ns.mul_vec_into(v, o), |r, z| jac.apply(r, z), b, &mut y, 1e-11, 8, 2000).unwrap();
            let r: Vec<f64> = ns.mul_vec(&y).iter().zip(b).map(|(p, q)| p - q).collect();
            prop_assert!(norm2(&r) <= 1e-11 * norm2(b) + 1e-300);
        }
    }
}
