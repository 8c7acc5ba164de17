//! Irrotational right inverse of the divergence.
//!
//! For zero-mean `f` we seek potentials `(phi, psi)` with
//! `(grad phi + rot' psi, grad phi^ + rot' psi^) = -(f, phi^)` for all test pairs,
//! where `rot' psi = (d2 psi, -d1 psi)`, and return `u = grad phi + rot' psi`
//! projected to the nodes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::fem::{dot, AssembledOperators, SolverError, SparseCholesky, SparseMatrix};
use crate::initial_data::{mean_zero_project, Bubble, SmoothField};
use crate::mesh::Mesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BogovskiiError {
    #[error("data has nonzero mean (defect {0:e})")]
    NonZeroMean(f64),
    #[error("field has {got} entries, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BogovskiiSolve {
    #[serde(skip)]
    pub phi: Vec<f64>,
    #[serde(skip)]
    pub psi: Vec<f64>,
    /// Nodal field in the blocked layout.
    #[serde(skip)]
    pub u: Vec<f64>,
    /// Lumped L2 norm of div u - f.
    pub residual_div: f64,
    /// Lumped L2 norm of rot u.
    pub residual_rot: f64,
    /// L2 norm of the trace of u on the boundary.
    pub boundary_norm: f64,
    /// ||u||_H1 / ||f||_L2.
    pub continuity_ratio: f64,
    /// (grad phi, rot' psi), the cross energy left free by the formulation.
    pub cross_energy: f64,
}

/// Relative tolerance on the lumped mean of the data, scaled by ||f|| sqrt(|Omega|).
pub const MEAN_TOL: f64 = 1e-10;

/// Factorized operator, reusable across many right-hand sides.
pub struct BogovskiiOperator<'a> {
    ops: &'a AssembledOperators,
    boundary_edges: Vec<([usize; 2], f64)>,
    cross: SparseMatrix,
    /// Kernel of the potential form, orthonormal in the Euclidean product.
    kernel: Vec<Vec<f64>>,
    /// Dofs kept after pinning the kernel.
    kept: Vec<usize>,
    chol: SparseCholesky,
    mass_chol: SparseCholesky,
}

impl<'a> BogovskiiOperator<'a> {
    pub fn new(ops: &'a AssembledOperators, mesh: &Mesh) -> Result<Self, BogovskiiError> {
        let n = ops.n;
        // C[i, j] = (d1 phi_i d2 phi_j - d2 phi_i d1 phi_j)
        let mut tc = Vec::with_capacity(9 * ops.triangles.len());
        for ((tri, g), area) in ops.triangles.iter().zip(&ops.tri_grad).zip(&ops.tri_area) {
            for (ki, &i) in tri.iter().enumerate() {
                for (kj, &j) in tri.iter().enumerate() {
                    tc.push((i, j, area * (g[ki][0] * g[kj][1] - g[ki][1] * g[kj][0])));
                }
            }
        }
        let cross = SparseMatrix::from_triplets(n, n, &tc);
        let full = SparseMatrix::from_blocks(
            &[n, n],
            &[n, n],
            &[(0, 0, 1.0, &ops.a_lap), (0, 1, 1.0, &cross), (1, 0, 1.0, &cross.transpose()), (1, 1, 1.0, &ops.a_lap)],
        );

        // kernel: (1, 0), (0, 1), (x, -y), (y, x)
        let xs: Vec<f64> = mesh.vertices.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = mesh.vertices.iter().map(|p| p[1]).collect();
        let neg_ys: Vec<f64> = ys.iter().map(|y| -y).collect();
        let raw = [
            [vec![1.0; n], vec![0.0; n]].concat(),
            [vec![0.0; n], vec![1.0; n]].concat(),
            [xs.clone(), neg_ys].concat(),
            [ys, xs].concat(),
        ];
        let mut kernel: Vec<Vec<f64>> = Vec::new();
        for mut k in raw {
            for _ in 0..2 {
                for e in &kernel {
                    let c = dot(&k, e);
                    k.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
                }
            }
            let s = dot(&k, &k).sqrt();
            k.iter_mut().for_each(|a| *a /= s);
            kernel.push(k);
        }

        // pin phi and psi at the two vertices farthest apart in x
        let (mut lo, mut hi) = (0, 0);
        for (i, p) in mesh.vertices.iter().enumerate() {
            if p[0] < mesh.vertices[lo][0] {
                lo = i;
            }
            if p[0] > mesh.vertices[hi][0] {
                hi = i;
            }
        }
        let pinned = [lo, hi, n + lo, n + hi];
        let kept: Vec<usize> = (0..2 * n).filter(|k| !pinned.contains(k)).collect();
        let chol = SparseCholesky::new(&full.select(&kept, &kept))?;
        let mass_chol = SparseCholesky::new(&ops.mass)?;
        let boundary_edges = mesh
            .boundary_edges()
            .into_iter()
            .map(|[a, b]| {
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                ([a, b], (pa[0] - pb[0]).hypot(pa[1] - pb[1]))
            })
            .collect();
        Ok(BogovskiiOperator { ops, boundary_edges, cross, kernel, kept, chol, mass_chol })
    }

    fn check_mean(&self, f: &[f64]) -> Result<(), BogovskiiError> {
        let ops = self.ops;
        if f.len() != ops.n {
            return Err(BogovskiiError::ShapeMismatch { got: f.len(), expected: ops.n });
        }
        let integral = ops.lumped_integral(f);
        let scale = ops.l2_norm(f) * ops.total_area().sqrt();
        if integral.abs() > MEAN_TOL * scale {
            return Err(BogovskiiError::NonZeroMean(integral / ops.total_area()));
        }
        Ok(())
    }

    /// Potentials and nodal field for zero-mean data.
    pub fn apply(&self, f: &[f64]) -> Result<BogovskiiSolve, BogovskiiError> {
        self.check_mean(f)?;
        let ops = self.ops;
        let n = ops.n;
        let mf = ops.mass.mul_vec(f);
        let mut rhs: Vec<f64> = mf.iter().map(|x| -x).chain(std::iter::repeat_n(0.0, n)).collect();
        self.project_out_kernel(&mut rhs);
        let reduced: Vec<f64> = self.kept.iter().map(|&k| rhs[k]).collect();
        let xr = self.chol.solve(&reduced);
        let mut x = vec![0.0; 2 * n];
        for (k, &i) in self.kept.iter().enumerate() {
            x[i] = xr[k];
        }
        self.project_out_kernel(&mut x);
        let phi = mean_zero_project(&x[..n], ops);
        let psi = mean_zero_project(&x[n..], ops);
        let u = self.nodal_field(&phi, &psi);
        let bu = ops.b_div.mul_vec(&u);
        let div_res: Vec<f64> = bu.iter().zip(&mf).map(|(a, b)| a - b).collect();
        let fnorm = ops.l2_norm(f);
        Ok(BogovskiiSolve {
            residual_div: ops.lumped_dual_norm(&div_res),
            residual_rot: ops.lumped_dual_norm(&ops.r_rot.mul_vec(&u)),
            boundary_norm: self.trace_norm(&u),
            continuity_ratio: if fnorm > 0.0 { ops.h1_norm(&u) / fnorm } else { 0.0 },
            cross_energy: self.cross.bilinear(&phi, &psi),
            phi,
            psi,
            u,
        })
    }

    fn project_out_kernel(&self, x: &mut [f64]) {
        for e in &self.kernel {
            let c = dot(x, e);
            x.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
        }
    }

    /// Consistent-mass projection of the elementwise field grad phi + rot' psi.
    fn nodal_field(&self, phi: &[f64], psi: &[f64]) -> Vec<f64> {
        let ops = self.ops;
        let n = ops.n;
        let mut load = vec![0.0; 2 * n];
        for ((tri, g), area) in ops.triangles.iter().zip(&ops.tri_grad).zip(&ops.tri_area) {
            let mut u = [0.0; 2];
            for k in 0..3 {
                u[0] += g[k][0] * phi[tri[k]] + g[k][1] * psi[tri[k]];
                u[1] += g[k][1] * phi[tri[k]] - g[k][0] * psi[tri[k]];
            }
            for &i in tri {
                load[i] += u[0] * area / 3.0;
                load[n + i] += u[1] * area / 3.0;
            }
        }
        let u1 = self.mass_chol.solve(&load[..n]);
        let u2 = self.mass_chol.solve(&load[n..]);
        [u1, u2].concat()
    }

    /// L2 norm of the boundary trace of a nodal vector field.
    pub fn trace_norm(&self, u: &[f64]) -> f64 {
        let n = self.ops.n;
        let mut s = 0.0;
        for &([a, b], len) in &self.boundary_edges {
            for c in 0..2 {
                let (ua, ub) = (u[c * n + a], u[c * n + b]);
                s += len / 3.0 * (ua * ua + ua * ub + ub * ub);
            }
        }
        s.sqrt()
    }

    /// ||B(div u)||_L2 / ||u||_L2, with div u taken as the lumped projection
    /// of the assembled divergence and mean-corrected.
    pub fn div_estimate_ratio(&self, u: &[f64]) -> Result<f64, BogovskiiError> {
        let ops = self.ops;
        if u.len() != 2 * ops.n {
            return Err(BogovskiiError::ShapeMismatch { got: u.len(), expected: 2 * ops.n });
        }
        let bu = ops.b_div.mul_vec(u);
        let f: Vec<f64> = bu.iter().zip(&ops.lumped).map(|(b, m)| b / m).collect();
        let f = mean_zero_project(&f, ops);
        let unorm = ops.l2_norm_vec(u);
        if unorm == 0.0 {
            return Ok(0.0);
        }
        Ok(ops.l2_norm_vec(&self.apply(&f)?.u) / unorm)
    }
}

/// One-shot convenience wrapper around [`BogovskiiOperator`].
pub fn bogovskii_apply(ops: &AssembledOperators, mesh: &Mesh, f: &[f64]) -> Result<BogovskiiSolve, BogovskiiError> {
    BogovskiiOperator::new(ops, mesh)?.apply(f)
}

/// |(grad u, grad u) - ||div u||^2 - ||rot u||^2| for a clamped P1 field, with
/// exact elementwise divergence and rotation.
pub fn gradient_identity_defect(ops: &AssembledOperators, u: &[f64]) -> f64 {
    let (d, r) = ops.div_rot_norms(u);
    (ops.a_vec.quad(u) - d * d - r * r).abs()
}

/// Zero-mean data `f = Lap(b^2 p)` for smooth random `p`; such data lie in the
/// range of the irrotational right inverse on every geometry.
pub fn random_compatible_data(ops: &AssembledOperators, mesh: &Mesh, seed: u64, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bubble = Bubble::new(&mesh.geometry);
    (0..count)
        .map(|_| {
            let p = SmoothField::random(&mut rng, 5, 3.0);
            let f = crate::fem::project_l2(mesh, |x| bubble.squared_times_laplacian(&p, x));
            mean_zero_project(&f, ops)
        })
        .collect()
}

/// Manufactured pair `u0 = grad(b^2)`, `f = div u0 = Lap(b^2)` with the geometry
/// bubble `b`; on the unit disk `u0 = grad (1 - r^2)^2` and `f = 16 r^2 - 8`.
/// `u0` vanishes on the boundary and `f` is returned mean-corrected.
pub fn manufactured_pair(ops: &AssembledOperators, mesh: &Mesh) -> (Vec<f64>, Vec<f64>) {
    let bubble = Bubble::new(&mesh.geometry);
    let one = SmoothField::constant(1.0);
    let mut u0 = crate::fem::project_l2_vec(mesh, |x| bubble.squared_times(&one, x).1);
    ops.clamp(&mut u0);
    let f = crate::fem::project_l2(mesh, |x| bubble.squared_times_laplacian(&one, x));
    (u0, mean_zero_project(&f, ops))
}

/// Random clamped fields `u = grad(b^2 p1) + curl(b^2 p2)`.
pub fn random_clamped_fields(ops: &AssembledOperators, mesh: &Mesh, seed: u64, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bubble = Bubble::new(&mesh.geometry);
    (0..count)
        .map(|_| {
            let p1 = SmoothField::random(&mut rng, 5, 3.0);
            let p2 = SmoothField::random(&mut rng, 5, 3.0);
            let mut u = crate::fem::project_l2_vec(mesh, |x| {
                let g1 = bubble.squared_times(&p1, x).1;
                let g2 = bubble.squared_times(&p2, x).1;
                [g1[0] + g2[1], g1[1] - g2[0]]
            });
            ops.clamp(&mut u);
            u
        })
        .collect()
}
