//! P1 assembly of every bilinear form of the plate system.
//!
//! Vector fields use the blocked layout: component `a` of vertex `i` lives at
//! index `a * n + i`.

mod solve;
mod sparse;

pub use solve::{
    gmres, pcg, solve_spd, JacobiPreconditioner, SolveStats, SolverError, SparseCholesky, SparseLu,
    DEFAULT_TOL,
};
pub use sparse::{axpy, dot, norm2, SparseMatrix};

use crate::mesh::Mesh;
use crate::params::StiffnessS;

#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub n: usize,
    /// Consistent scalar mass matrix.
    pub mass: SparseMatrix,
    /// Vector mass, blockdiag(M, M).
    pub mass_vec: SparseMatrix,
    /// Scalar stiffness (grad, grad), unconstrained.
    pub a_lap: SparseMatrix,
    /// Vector stiffness blockdiag(A, A): the full-gradient form.
    pub a_vec: SparseMatrix,
    /// Bending form (S Dv, Dw) with the generalized gradient D.
    pub a_korn: SparseMatrix,
    /// `G[(a,i), j] = (d_a phi_j, phi_i)`: gradient of a scalar tested with vectors.
    pub g_grad: SparseMatrix,
    /// `B[i, (a,j)] = (d_a phi_j, phi_i)`: divergence of a vector tested with scalars.
    pub b_div: SparseMatrix,
    /// `R[i, (a,j)]`: rotation d1 v2 - d2 v1 tested with scalars.
    pub r_rot: SparseMatrix,
    /// Row sums of the scalar mass (vertex areas).
    pub lumped: Vec<f64>,
    /// Vertices constrained by the clamped condition.
    pub boundary: Vec<bool>,
    /// Per-triangle area and constant basis gradients.
    pub tri_area: Vec<f64>,
    pub tri_grad: Vec<[[f64; 2]; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Element basis gradients of a counterclockwise triangle and its area.
pub fn element_gradients(p: [[f64; 2]; 3]) -> (f64, [[f64; 2]; 3]) {
    let [a, b, c] = p;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let g = [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ];
    (0.5 * det, g)
}

/// Assembles all operators; element contributions are accumulated in triangle order.
pub fn assemble(mesh: &Mesh, s: &StiffnessS) -> AssembledOperators {
    let n = mesh.n_vertices();
    let nt = mesh.triangles.len();
    let mut tm = Vec::with_capacity(9 * nt);
    let mut ta = Vec::with_capacity(9 * nt);
    let mut tk = Vec::with_capacity(36 * nt);
    let mut tg = Vec::with_capacity(18 * nt);
    let mut tb = Vec::with_capacity(18 * nt);
    let mut tr = Vec::with_capacity(18 * nt);
    let mut tri_area = Vec::with_capacity(nt);
    let mut tri_grad = Vec::with_capacity(nt);
    for tri in &mesh.triangles {
        let pts = [mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]];
        let (area, g) = element_gradients(pts);
        tri_area.push(area);
        tri_grad.push(g);
        // D(phi e1) = (gx, 0, gy), D(phi e2) = (0, gy, gx)
        let strain = |k: usize, a: usize| -> [f64; 3] {
            if a == 0 {
                [g[k][0], 0.0, g[k][1]]
            } else {
                [0.0, g[k][1], g[k][0]]
            }
        };
        for (ki, &i) in tri.iter().enumerate() {
            for (kj, &j) in tri.iter().enumerate() {
                let m = if ki == kj { area / 6.0 } else { area / 12.0 };
                tm.push((i, j, m));
                ta.push((i, j, area * (g[ki][0] * g[kj][0] + g[ki][1] * g[kj][1])));
                for a in 0..2 {
                    let sa = s.apply(strain(ki, a));
                    for b in 0..2 {
                        let e = strain(kj, b);
                        let v = sa[0] * e[0] + sa[1] * e[1] + sa[2] * e[2];
                        tk.push((a * n + i, b * n + j, area * v));
                    }
                    // (d_a phi_j, phi_i) = g_j[a] * area / 3
                    let c = g[kj][a] * area / 3.0;
                    tg.push((a * n + i, j, c));
                    tb.push((i, a * n + j, c));
                }
                let third = area / 3.0;
                tr.push((i, j, -g[kj][1] * third));
                tr.push((i, n + j, g[kj][0] * third));
            }
        }
    }
    let mass = SparseMatrix::from_triplets(n, n, &tm);
    let a_lap = SparseMatrix::from_triplets(n, n, &ta);
    let mass_vec = block_diag2(&mass);
    let a_vec = block_diag2(&a_lap);
    let lumped = mass.mul_vec(&vec![1.0; n]);
    AssembledOperators {
        n,
        mass,
        mass_vec,
        a_lap,
        a_vec,
        a_korn: SparseMatrix::from_triplets(2 * n, 2 * n, &tk),
        g_grad: SparseMatrix::from_triplets(2 * n, n, &tg),
        b_div: SparseMatrix::from_triplets(n, 2 * n, &tb),
        r_rot: SparseMatrix::from_triplets(n, 2 * n, &tr),
        lumped,
        boundary: mesh.boundary_mask().to_vec(),
        tri_area,
        tri_grad,
        triangles: mesh.triangles.clone(),
    }
}

fn block_diag2(m: &SparseMatrix) -> SparseMatrix {
    let k = m.nrows();
    SparseMatrix::from_blocks(&[k, k], &[k, k], &[(0, 0, 1.0, m), (1, 1, 1.0, m)])
}

impl AssembledOperators {
    pub fn total_area(&self) -> f64 {
        self.lumped.iter().sum()
    }

    /// Unconstrained scalar vertices.
    pub fn interior(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.boundary[i]).collect()
    }

    /// Unconstrained vector dofs in blocked numbering.
    pub fn interior_vec(&self) -> Vec<usize> {
        let int = self.interior();
        int.iter().copied().chain(int.iter().map(|i| i + self.n)).collect()
    }

    /// Zeroes boundary entries of a scalar or blocked vector field.
    pub fn clamp(&self, x: &mut [f64]) {
        let n = self.n;
        for (k, v) in x.iter_mut().enumerate() {
            if self.boundary[k % n] {
                *v = 0.0;
            }
        }
    }

    /// Integral of a scalar field with the lumped (vertex) rule.
    pub fn lumped_integral(&self, f: &[f64]) -> f64 {
        dot(&self.lumped, f)
    }

    pub fn lumped_mean(&self, f: &[f64]) -> f64 {
        self.lumped_integral(f) / self.total_area()
    }

    /// L2 norm of the scalar field whose load vector is `b`, via the lumped mass.
    pub fn lumped_dual_norm(&self, b: &[f64]) -> f64 {
        b.iter().zip(&self.lumped).map(|(x, m)| x * x / m).sum::<f64>().sqrt()
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.mass.quad(f).max(0.0).sqrt()
    }

    pub fn l2_norm_vec(&self, v: &[f64]) -> f64 {
        self.mass_vec.quad(v).max(0.0).sqrt()
    }

    /// Discrete H1 norm: ||v||_M^2 + ||grad v||^2 for scalar or vector fields.
    pub fn h1_norm(&self, v: &[f64]) -> f64 {
        let (m, a) = if v.len() == self.n { (&self.mass, &self.a_lap) } else { (&self.mass_vec, &self.a_vec) };
        (m.quad(v) + a.quad(v)).max(0.0).sqrt()
    }

    /// Piecewise-constant divergence and rotation per triangle.
    pub fn elementwise_div_rot(&self, v: &[f64]) -> Vec<(f64, f64)> {
        let n = self.n;
        self.triangles
            .iter()
            .zip(&self.tri_grad)
            .map(|(tri, g)| {
                let mut div = 0.0;
                let mut rot = 0.0;
                for k in 0..3 {
                    let (v1, v2) = (v[tri[k]], v[n + tri[k]]);
                    div += g[k][0] * v1 + g[k][1] * v2;
                    rot += g[k][0] * v2 - g[k][1] * v1;
                }
                (div, rot)
            })
            .collect()
    }

    /// Exact L2 norms of div v and rot v for a P1 field.
    pub fn div_rot_norms(&self, v: &[f64]) -> (f64, f64) {
        let (mut d, mut r) = (0.0, 0.0);
        for ((dv, rv), a) in self.elementwise_div_rot(v).into_iter().zip(&self.tri_area) {
            d += a * dv * dv;
            r += a * rv * rv;
        }
        (d.sqrt(), r.sqrt())
    }
}

/// Nodal interpolation of a scalar function.
pub fn project_l2<F: Fn([f64; 2]) -> f64>(mesh: &Mesh, f: F) -> Vec<f64> {
    mesh.vertices.iter().map(|&p| f(p)).collect()
}

/// Nodal interpolation of a vector function into the blocked layout.
pub fn project_l2_vec<F: Fn([f64; 2]) -> [f64; 2]>(mesh: &Mesh, f: F) -> Vec<f64> {
    let n = mesh.n_vertices();
    let mut out = vec![0.0; 2 * n];
    for (i, &p) in mesh.vertices.iter().enumerate() {
        let v = f(p);
        out[i] = v[0];
        out[n + i] = v[1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{mesh_disk, mesh_rectangle, Geometry};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn identity_s() -> StiffnessS {
        StiffnessS { entries: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    fn s_default() -> StiffnessS {
        crate::params::build_stiffness_s(&crate::params::PlateParams::default())
    }

    fn reference_triangle() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            Geometry::Rectangle { lx: 1.0, ly: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn reference_triangle_korn_matrix() {
        // Hand integration with grad phi = (-1,-1), (1,0), (0,1) and area 1/2.
        let expected = [
            [1.0, -0.5, -0.5, 0.5, -0.5, 0.0],
            [-0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
            [-0.5, 0.0, 0.5, -0.5, 0.5, 0.0],
            [0.5, 0.0, -0.5, 1.0, -0.5, -0.5],
            [-0.5, 0.0, 0.5, -0.5, 0.5, 0.0],
            [0.0, 0.0, 0.0, -0.5, 0.0, 0.5],
        ];
        let ops = assemble(&reference_triangle(), &identity_s());
        for (i, row) in expected.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert!((ops.a_korn.get(i, j) - e).abs() < 1e-15, "({i},{j})");
            }
        }
        let m = &ops.mass;
        assert!((m.get(0, 0) - 1.0 / 12.0).abs() < 1e-15);
        assert!((m.get(0, 1) - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn mass_rows_sum_to_vertex_areas() {
        let mesh = mesh_disk(1.0, 0.2).unwrap();
        let ops = assemble(&mesh, &s_default());
        assert!((ops.total_area() - mesh.total_area()).abs() < 1e-13);
        assert!(ops.mass.asymmetry() < 1e-16);
        assert!(ops.a_korn.asymmetry() < 1e-14);
        assert!(ops.lumped.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn translations_in_kernel() {
        let mesh = mesh_rectangle(1.0, 2.0, 0.3).unwrap();
        let ops = assemble(&mesh, &s_default());
        let n = ops.n;
        for a in 0..2 {
            let mut t = vec![0.0; 2 * n];
            t[a * n..(a + 1) * n].iter_mut().for_each(|v| *v = 1.0);
            assert!(norm2(&ops.a_korn.mul_vec(&t)) < 1e-12);
            assert!(norm2(&ops.b_div.mul_vec(&t)) < 1e-14);
            assert!(norm2(&ops.r_rot.mul_vec(&t)) < 1e-14);
        }
        assert!(norm2(&ops.a_lap.mul_vec(&vec![1.0; n])) < 1e-12);
    }

    #[test]
    fn divergence_is_minus_gradient_transpose_on_clamped_rows() {
        let mesh = mesh_disk(1.0, 0.25).unwrap();
        let ops = assemble(&mesh, &s_default());
        let int = ops.interior();
        let iv = ops.interior_vec();
        let b = ops.b_div.select(&int, &iv);
        let gt = ops.g_grad.transpose().select(&int, &iv);
        let d = SparseMatrix::combine(&[(1.0, &b), (1.0, &gt)]);
        assert!(d.triplets().all(|(_, _, v)| v.abs() < 1e-15));
    }

    #[test]
    fn interpolation_examples() {
        let mesh = mesh_rectangle(1.0, 1.0, 0.25).unwrap();
        assert!(project_l2(&mesh, |_| 0.0).iter().all(|&v| v == 0.0));
        assert!(project_l2(&mesh, |_| 1.0).iter().all(|&v| v == 1.0));
        let x = project_l2(&mesh, |p| p[0]);
        assert!(x.iter().zip(&mesh.vertices).all(|(a, p)| *a == p[0]));
    }

    #[test]
    fn gradient_identity_for_clamped_fields() {
        let mesh = mesh_disk(1.0, 0.1).unwrap();
        let ops = assemble(&mesh, &s_default());
        let mut u = project_l2_vec(&mesh, |p| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            [-4.0 * p[0] * (1.0 - r2), -4.0 * p[1] * (1.0 - r2) + p[0] * (1.0 - r2).powi(2)]
        });
        ops.clamp(&mut u);
        let (d, r) = ops.div_rot_norms(&u);
        let defect = ops.a_vec.quad(&u) - d * d - r * r;
        assert!(defect.abs() < 1e-10 * ops.a_vec.quad(&u));
    }

    fn poisson_error(h: f64) -> f64 {
        let mesh = mesh_rectangle(1.0, 1.0, h).unwrap();
        let ops = assemble(&mesh, &s_default());
        let exact = project_l2(&mesh, |p| (PI * p[0]).sin() * (PI * p[1]).sin());
        let f: Vec<f64> = exact.iter().map(|u| 2.0 * PI * PI * u).collect();
        let load = ops.mass.mul_vec(&f);
        let int = ops.interior();
        let a = ops.a_lap.select(&int, &int);
        let b: Vec<f64> = int.iter().map(|&i| load[i]).collect();
        let x = solve_spd(&a, &b, 1e-12).unwrap();
        let mut err = exact.clone();
        for (k, &i) in int.iter().enumerate() {
            err[i] -= x[k];
        }
        ops.l2_norm(&err)
    }

    #[test]
    fn manufactured_poisson_second_order() {
        let e1 = poisson_error(0.1);
        let e2 = poisson_error(0.05);
        let rate = (e1 / e2).log2();
        assert!(e2 < 5e-3, "{e2}");
        assert!(rate > 1.8, "rate {rate}");
    }

    #[test]
    fn unit_square_dirichlet_eigenvalue() {
        let mesh = mesh_rectangle(1.0, 1.0, 0.05).unwrap();
        let ops = assemble(&mesh, &s_default());
        let int = ops.interior();
        let a = ops.a_lap.select(&int, &int);
        let m = ops.mass.select(&int, &int);
        let chol = SparseCholesky::new(&a).unwrap();
        let mut x = vec![1.0; int.len()];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let y = chol.solve(&m.mul_vec(&x));
            let s = m.quad(&y).sqrt();
            x = y.iter().map(|v| v / s).collect();
            let l = a.quad(&x);
            let done = (l - lambda).abs() < 1e-12 * l;
            lambda = l;
            if done {
                break;
            }
        }
        let exact = 2.0 * PI * PI;
        assert!((lambda - exact).abs() < 0.05 * exact, "{lambda}");
        assert!(lambda > exact);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn discrete_duality(seed in prop::collection::vec(-1.0..1.0f64, 400), h in 0.15..0.5f64) {
            let mesh = mesh_disk(1.0, h).unwrap();
            let ops = assemble(&mesh, &s_default());
            let n = ops.n;
            let v: Vec<f64> = (0..2 * n).map(|k| seed[k % 400] * (1.0 + (k / 400) as f64)).collect();
            let mut w: Vec<f64> = (0..n).map(|k| seed[(7 * k + 3) % 400]).collect();
            ops.clamp(&mut w);
            let lhs = dot(&ops.b_div.mul_vec(&v), &w) + dot(&v, &ops.g_grad.mul_vec(&w));
            prop_assert!(lhs.abs() < 1e-12);
        }
    }
}
