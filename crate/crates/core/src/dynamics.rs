//! Implicit midpoint time stepping of the semi-discrete plate system.
//!
//! Each step solves for the midpoint rates of (w, v) and the midpoint values of
//! (theta, q); the discrete energy then changes by exactly `-dt` times the
//! dissipation at the midpoint.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{energy, EnergyParts};
use crate::fem::{axpy, dot, gmres, norm2, AssembledOperators, SolverError, SparseLu, SparseMatrix};
use crate::params::PlateParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThermalBc {
    /// Insulated: q . nu = 0, theta free on the boundary.
    #[default]
    Neumann,
    /// theta = 0 on the boundary.
    Dirichlet,
}

/// Nodal coefficients; vector fields use the blocked layout of the fem module.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub w: Vec<f64>,
    pub wt: Vec<f64>,
    pub v: Vec<f64>,
    pub vt: Vec<f64>,
    pub theta: Vec<f64>,
    pub q: Vec<f64>,
}

impl State {
    pub fn zeros(n: usize) -> Self {
        State {
            w: vec![0.0; n],
            wt: vec![0.0; n],
            v: vec![0.0; 2 * n],
            vt: vec![0.0; 2 * n],
            theta: vec![0.0; n],
            q: vec![0.0; 2 * n],
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.w.len()
    }

    fn fields(&self) -> [&Vec<f64>; 6] {
        [&self.w, &self.wt, &self.v, &self.vt, &self.theta, &self.q]
    }

    fn fields_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [&mut self.w, &mut self.wt, &mut self.v, &mut self.vt, &mut self.theta, &mut self.q]
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        for f in s.fields_mut() {
            f.iter_mut().for_each(|x| *x *= c);
        }
        s
    }

    /// Euclidean norm of all coefficients.
    pub fn coefficient_norm(&self) -> f64 {
        self.fields().iter().map(|f| dot(f, f)).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &State) -> f64 {
        self.fields()
            .iter()
            .zip(other.fields())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Largest boundary value among the constrained fields.
    pub fn constraint_violation(&self, ops: &AssembledOperators, bc: ThermalBc) -> f64 {
        let n = ops.n;
        let mut worst: f64 = 0.0;
        for i in (0..n).filter(|&i| ops.boundary[i]) {
            let mut vals = vec![self.w[i], self.wt[i], self.v[i], self.v[n + i], self.vt[i], self.vt[n + i]];
            if bc == ThermalBc::Dirichlet {
                vals.push(self.theta[i]);
            }
            worst = vals.iter().fold(worst, |m, x| m.max(x.abs()));
        }
        worst
    }

    /// Zeroes all constrained boundary values.
    pub fn apply_constraints(&mut self, ops: &AssembledOperators, bc: ThermalBc) {
        ops.clamp(&mut self.w);
        ops.clamp(&mut self.wt);
        ops.clamp(&mut self.v);
        ops.clamp(&mut self.vt);
        if bc == ThermalBc::Dirichlet {
            ops.clamp(&mut self.theta);
        }
    }
}

/// Dissipation rates evaluated at a (midpoint) state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DissipationParts {
    /// d ||w_t||^2
    pub w: f64,
    /// (Ddamp v_t, v_t)
    pub v: f64,
    /// beta ||theta||^2
    pub theta: f64,
    /// delta ||q||^2
    pub q: f64,
}

impl DissipationParts {
    pub fn total(&self) -> f64 {
        self.w + self.v + self.theta + self.q
    }
}

/// `(Ddamp v, v)` with the blocked mass matrix.
fn damping_form(ops: &AssembledOperators, p: &PlateParams, x: &[f64], y: &[f64]) -> f64 {
    let n = ops.n;
    let (x1, x2) = x.split_at(n);
    let (y1, y2) = y.split_at(n);
    let dd = p.ddamp;
    dd[0][0] * ops.mass.bilinear(x1, y1)
        + dd[0][1] * ops.mass.bilinear(x1, y2)
        + dd[1][0] * ops.mass.bilinear(x2, y1)
        + dd[1][1] * ops.mass.bilinear(x2, y2)
}

pub fn dissipation(ops: &AssembledOperators, p: &PlateParams, wt: &[f64], vt: &[f64], theta: &[f64], q: &[f64]) -> DissipationParts {
    DissipationParts {
        w: p.d * ops.mass.quad(wt),
        v: damping_form(ops, p, vt, vt),
        theta: p.beta * ops.mass.quad(theta),
        q: p.delta * ops.mass_vec.quad(q),
    }
}

fn damping_matrix(ops: &AssembledOperators, p: &PlateParams) -> SparseMatrix {
    let n = ops.n;
    let m = &ops.mass;
    let dd = p.ddamp;
    SparseMatrix::from_blocks(
        &[n, n],
        &[n, n],
        &[(0, 0, dd[0][0], m), (0, 1, dd[0][1], m), (1, 0, dd[1][0], m), (1, 1, dd[1][1], m)],
    )
}

/// Weak-form time derivative, returned as load vectors (mass not inverted):
/// the `w`, `v` slots hold `M w_t`, `M v_t`, the others the momentum and
/// thermal balances `rho_1 M w_tt`, `rho_2 M v_tt`, `rho_3 M theta_t`, `tau_0 M q_t`.
pub fn rhs_apply(ops: &AssembledOperators, p: &PlateParams, s: &State) -> State {
    let mut out = State::zeros(ops.n);
    out.w = ops.mass.mul_vec(&s.wt);
    out.v = ops.mass_vec.mul_vec(&s.vt);

    let gtv = ops.g_grad.mul_vec_t(&s.v);
    let aw = ops.a_lap.mul_vec(&s.w);
    let mwt = ops.mass.mul_vec(&s.wt);
    out.wt = (0..ops.n).map(|i| -p.k * (aw[i] + gtv[i]) - p.d * mwt[i]).collect();

    let mut fv = ops.a_korn.mul_vec(&s.v);
    ops.g_grad.mul_vec_add(p.k, &s.w, &mut fv);
    ops.mass_vec.mul_vec_add(p.k, &s.v, &mut fv);
    ops.g_grad.mul_vec_add(p.gamma, &s.theta, &mut fv);
    damping_matrix(ops, p).mul_vec_add(1.0, &s.vt, &mut fv);
    out.vt = fv.iter().map(|x| -x).collect();

    let mut ft = ops.b_div.mul_vec(&s.vt);
    ft.iter_mut().for_each(|x| *x *= -p.gamma);
    ops.mass.mul_vec_add(-p.beta, &s.theta, &mut ft);
    let gtq = ops.g_grad.mul_vec_t(&s.q);
    for (f, g) in ft.iter_mut().zip(&gtq) {
        *f += p.kappa * g;
    }
    out.theta = ft;

    let mut fq = ops.mass_vec.mul_vec(&s.q);
    fq.iter_mut().for_each(|x| *x *= -p.delta);
    ops.g_grad.mul_vec_add(-p.kappa, &s.theta, &mut fq);
    out.q = fq;

    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    pub state: State,
    pub energy: EnergyParts,
    /// Midpoint dissipation of the step that produced this state (zero at t = 0).
    pub dissipation: DissipationParts,
    pub solver_iterations: usize,
}

/// Degree-of-freedom layout of the reduced step system.
#[derive(Debug, Clone)]
struct Layout {
    fw: Vec<usize>,
    fv: Vec<usize>,
    th: Vec<usize>,
    n: usize,
}

impl Layout {
    fn sizes(&self) -> [usize; 4] {
        [self.fw.len(), self.fv.len(), self.th.len(), 2 * self.n]
    }

    fn len(&self) -> usize {
        self.sizes().iter().sum()
    }
}

/// Implicit midpoint integrator with a factorized step matrix.
pub struct Stepper<'a> {
    ops: &'a AssembledOperators,
    p: PlateParams,
    dt: f64,
    bc: ThermalBc,
    tol: f64,
    layout: Layout,
    system: SparseMatrix,
    lu: SparseLu,
}

impl<'a> Stepper<'a> {
    /// `tol` bounds the relative residual of each step solve; a nonzero `dt` of
    /// either sign is accepted (negative values run the scheme backward).
    pub fn new(ops: &'a AssembledOperators, p: &PlateParams, dt: f64, bc: ThermalBc, tol: f64) -> Result<Self, SolverError> {
        assert!(dt != 0.0 && dt.is_finite(), "dt must be finite and nonzero");
        let n = ops.n;
        let fw = ops.interior();
        let fv = ops.interior_vec();
        let th = match bc {
            ThermalBc::Neumann => (0..n).collect(),
            ThermalBc::Dirichlet => fw.clone(),
        };
        let all_q: Vec<usize> = (0..2 * n).collect();
        let layout = Layout { fw, fv, th, n };
        let c = 2.0 / dt;
        let h = dt / 2.0;
        let gt = ops.g_grad.transpose();
        let ww = SparseMatrix::combine(&[(c * p.rho1 + p.d, &ops.mass), (h * p.k, &ops.a_lap)]);
        let vv = SparseMatrix::combine(&[
            (c * p.rho2 + h * p.k, &ops.mass_vec),
            (1.0, &damping_matrix(ops, p)),
            (h, &ops.a_korn),
        ]);
        let l = &layout;
        let blocks = [
            ww.select(&l.fw, &l.fw),
            gt.select(&l.fw, &l.fv),
            ops.g_grad.select(&l.fv, &l.fw),
            vv.select(&l.fv, &l.fv),
            ops.g_grad.select(&l.fv, &l.th),
            ops.b_div.select(&l.th, &l.fv),
            ops.mass.select(&l.th, &l.th),
            gt.select(&l.th, &all_q),
            ops.g_grad.select(&all_q, &l.th),
            ops.mass_vec.clone(),
        ];
        let system = SparseMatrix::from_blocks(
            &l.sizes(),
            &l.sizes(),
            &[
                (0, 0, 1.0, &blocks[0]),
                (0, 1, h * p.k, &blocks[1]),
                (1, 0, h * p.k, &blocks[2]),
                (1, 1, 1.0, &blocks[3]),
                (1, 2, p.gamma, &blocks[4]),
                (2, 1, p.gamma, &blocks[5]),
                (2, 2, c * p.rho3 + p.beta, &blocks[6]),
                (2, 3, -p.kappa, &blocks[7]),
                (3, 2, p.kappa, &blocks[8]),
                (3, 3, c * p.tau0 + p.delta, &blocks[9]),
            ],
        );
        let lu = SparseLu::new(&system)?;
        Ok(Stepper { ops, p: p.clone(), dt, bc, tol, layout, system, lu })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn thermal_bc(&self) -> ThermalBc {
        self.bc
    }

    pub fn system_size(&self) -> usize {
        self.layout.len()
    }

    fn rhs(&self, s: &State) -> Vec<f64> {
        let (ops, p, l) = (self.ops, &self.p, &self.layout);
        let c = 2.0 / self.dt;
        let mut bw = ops.mass.mul_vec(&s.wt);
        bw.iter_mut().for_each(|x| *x *= c * p.rho1);
        ops.a_lap.mul_vec_add(-p.k, &s.w, &mut bw);
        let gtv = ops.g_grad.mul_vec_t(&s.v);
        axpy(-p.k, &gtv, &mut bw);

        let mut bv = ops.mass_vec.mul_vec(&s.vt);
        bv.iter_mut().for_each(|x| *x *= c * p.rho2);
        ops.a_korn.mul_vec_add(-1.0, &s.v, &mut bv);
        ops.g_grad.mul_vec_add(-p.k, &s.w, &mut bv);
        ops.mass_vec.mul_vec_add(-p.k, &s.v, &mut bv);

        let bt = ops.mass.mul_vec(&s.theta);
        let bq = ops.mass_vec.mul_vec(&s.q);
        let mut b = Vec::with_capacity(l.len());
        b.extend(l.fw.iter().map(|&i| bw[i]));
        b.extend(l.fv.iter().map(|&i| bv[i]));
        b.extend(l.th.iter().map(|&i| c * p.rho3 * bt[i]));
        b.extend(bq.iter().map(|x| c * p.tau0 * x));
        b
    }

    fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, usize), SolverError> {
        let mut x = self.lu.solve(b);
        let bnorm = norm2(b);
        if bnorm == 0.0 {
            return Ok((vec![0.0; b.len()], 0));
        }
        let r: Vec<f64> = self.system.mul_vec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        if norm2(&r) <= self.tol * bnorm {
            return Ok((x, 0));
        }
        let stats = gmres(
            |v, out| self.system.mul_vec_into(v, out),
            |r, z| z.copy_from_slice(&self.lu.solve(r)),
            b,
            &mut x,
            self.tol,
            30,
            300,
        )?;
        Ok((x, stats.iterations))
    }

    /// One midpoint step: returns the new state, the midpoint dissipation and the
    /// number of Krylov iterations spent beyond the direct solve.
    pub fn step(&self, s: &State) -> Result<(State, DissipationParts, usize), SolverError> {
        let (n, l, dt) = (self.ops.n, &self.layout, self.dt);
        let (x, iters) = self.solve(&self.rhs(s))?;
        let [nw, nv, nt, _] = l.sizes();
        let mut wt_mid = vec![0.0; n];
        let mut vt_mid = vec![0.0; 2 * n];
        let mut th_mid = vec![0.0; n];
        for (k, &i) in l.fw.iter().enumerate() {
            wt_mid[i] = x[k];
        }
        for (k, &i) in l.fv.iter().enumerate() {
            vt_mid[i] = x[nw + k];
        }
        for (k, &i) in l.th.iter().enumerate() {
            th_mid[i] = x[nw + nv + k];
        }
        let q_mid = &x[nw + nv + nt..];
        let diss = dissipation(self.ops, &self.p, &wt_mid, &vt_mid, &th_mid, q_mid);
        let advance = |x0: &[f64], rate: &[f64]| -> Vec<f64> { x0.iter().zip(rate).map(|(a, r)| a + dt * r).collect() };
        let reflect = |x0: &[f64], mid: &[f64]| -> Vec<f64> { x0.iter().zip(mid).map(|(a, m)| 2.0 * m - a).collect() };
        let next = State {
            w: advance(&s.w, &wt_mid),
            wt: reflect(&s.wt, &wt_mid),
            v: advance(&s.v, &vt_mid),
            vt: reflect(&s.vt, &vt_mid),
            theta: reflect(&s.theta, &th_mid),
            q: reflect(&s.q, q_mid),
        };
        Ok((next, diss, iters))
    }
}

/// Number of steps and effective step so that `n * dt_eff = t_end` exactly.
pub fn step_count(dt: f64, t_end: f64) -> (usize, f64) {
    let n = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    (n, t_end / n as f64)
}

/// Marches `n_steps` from `s0`, handing every report (including t = 0) to `sink`.
pub fn simulate<E, F>(stepper: &Stepper<'_>, s0: &State, n_steps: usize, mut sink: F) -> Result<State, E>
where
    E: From<SolverError>,
    F: FnMut(&StepReport) -> Result<(), E>,
{
    let (ops, p) = (stepper.ops, &stepper.p);
    let mut report = StepReport {
        step: 0,
        t: 0.0,
        state: s0.clone(),
        energy: energy(ops, p, s0),
        dissipation: DissipationParts::default(),
        solver_iterations: 0,
    };
    sink(&report)?;
    for k in 1..=n_steps {
        let (next, diss, iters) = stepper.step(&report.state)?;
        report = StepReport {
            step: k,
            t: k as f64 * stepper.dt,
            energy: energy(ops, p, &next),
            state: next,
            dissipation: diss,
            solver_iterations: iters,
        };
        sink(&report)?;
    }
    Ok(report.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, project_l2, project_l2_vec};
    use crate::mesh::mesh_disk;
    use crate::params::build_stiffness_s;
    use proptest::prelude::*;

    fn conservative() -> PlateParams {
        PlateParams { d: 0.0, ddamp: [[0.0; 2]; 2], beta: 0.0, delta: 0.0, gamma: 0.0, ..PlateParams::default() }
    }

    fn setup(h: f64, p: &PlateParams) -> (crate::mesh::Mesh, AssembledOperators) {
        let mesh = mesh_disk(1.0, h).unwrap();
        let ops = assemble(&mesh, &build_stiffness_s(p));
        (mesh, ops)
    }

    /// A smooth state with every field active.
    fn generic_state(mesh: &crate::mesh::Mesh, ops: &AssembledOperators, bc: ThermalBc) -> State {
        let bump = |p: [f64; 2]| 1.0 - p[0] * p[0] - p[1] * p[1];
        let mut s = State {
            w: project_l2(mesh, |p| bump(p) * (1.0 + p[0])),
            wt: project_l2(mesh, |p| bump(p) * p[1]),
            v: project_l2_vec(mesh, |p| [bump(p) * p[1], -bump(p) * (p[0] + 0.3)]),
            vt: project_l2_vec(mesh, |p| [bump(p) * 0.5, bump(p) * p[0] * p[1]]),
            theta: project_l2(mesh, |p| (2.0 * p[0]).cos() + p[1]),
            q: project_l2_vec(mesh, |p| [p[0] * p[1], 0.2 - p[0]]),
        };
        s.apply_constraints(ops, bc);
        s
    }

    #[test]
    fn zero_state_has_zero_derivative() {
        let p = PlateParams::default();
        let (_, ops) = setup(0.3, &p);
        let r = rhs_apply(&ops, &p, &State::zeros(ops.n));
        assert_eq!(r.coefficient_norm(), 0.0);
    }

    #[test]
    fn flux_only_block_structure() {
        let p = PlateParams { gamma: 0.0, ..PlateParams::default() };
        let (mesh, ops) = setup(0.3, &p);
        let mut s = State::zeros(ops.n);
        s.q = project_l2_vec(&mesh, |x| [x[1], x[0] * x[0]]);
        let r = rhs_apply(&ops, &p, &s);
        for f in [&r.w, &r.wt, &r.v, &r.vt] {
            assert!(f.iter().all(|&x| x == 0.0));
        }
        let gtq = ops.g_grad.mul_vec_t(&s.q);
        assert!(r.theta.iter().zip(&gtq).all(|(a, b)| (a - p.kappa * b).abs() < 1e-15));
        let mq = ops.mass_vec.mul_vec(&s.q);
        assert!(r.q.iter().zip(&mq).all(|(a, b)| (a + p.delta * b).abs() < 1e-15));
    }

    #[test]
    fn elastic_part_ignores_thermal_fields_without_coupling() {
        let p = PlateParams { gamma: 0.0, ..PlateParams::default() };
        let (mesh, ops) = setup(0.3, &p);
        let s = generic_state(&mesh, &ops, ThermalBc::Neumann);
        let mut s2 = s.clone();
        s2.theta.iter_mut().for_each(|x| *x = 3.0 * *x - 1.0);
        s2.q.iter_mut().for_each(|x| *x *= -2.0);
        let (a, b) = (rhs_apply(&ops, &p, &s), rhs_apply(&ops, &p, &s2));
        assert_eq!((a.w, a.wt, a.v, a.vt), (b.w, b.wt, b.v, b.vt));
    }

    #[test]
    fn rhs_is_consistent_with_the_step() {
        // For tiny dt the midpoint increment approaches dt times the mass-resolved rhs.
        let p = PlateParams::default();
        let (mesh, ops) = setup(0.3, &p);
        let s = generic_state(&mesh, &ops, ThermalBc::Neumann);
        let dt = 1e-6;
        let st = Stepper::new(&ops, &p, dt, ThermalBc::Neumann, 1e-13).unwrap();
        let (next, _, _) = st.step(&s).unwrap();
        let r = rhs_apply(&ops, &p, &s);
        let dwt: Vec<f64> = next.wt.iter().zip(&s.wt).map(|(a, b)| p.rho1 * (a - b) / dt).collect();
        let lhs = ops.mass.mul_vec(&dwt);
        let int = ops.interior();
        let err = int.iter().map(|&i| (lhs[i] - r.wt[i]).abs()).fold(0.0, f64::max);
        let scale = int.iter().map(|&i| r.wt[i].abs()).fold(0.0, f64::max);
        assert!(err < 1e-4 * scale, "{err} vs {scale}");
        let dth: Vec<f64> = next.theta.iter().zip(&s.theta).map(|(a, b)| p.rho3 * (a - b) / dt).collect();
        let lhs = ops.mass.mul_vec(&dth);
        let err = lhs.iter().zip(&r.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = r.theta.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(err < 1e-4 * scale, "{err} vs {scale}");
    }

    #[test]
    fn conservative_limit_preserves_energy() {
        let p = conservative();
        let (mesh, ops) = setup(0.25, &p);
        let s0 = generic_state(&mesh, &ops, ThermalBc::Neumann);
        let st = Stepper::new(&ops, &p, 0.05, ThermalBc::Neumann, 1e-12).unwrap();
        let e0 = energy(&ops, &p, &s0).total();
        let mut worst: f64 = 0.0;
        simulate::<SolverError, _>(&st, &s0, 500, |r| {
            worst = worst.max((r.energy.total() - e0).abs());
            Ok(())
        })
        .unwrap();
        assert!(worst <= 1e-10 * e0, "drift {worst}");
    }

    #[test]
    fn friction_only_dissipates_exactly() {
        let p = PlateParams { d: 0.7, ..conservative() };
        let (mesh, ops) = setup(0.25, &p);
        let mut s0 = State::zeros(ops.n);
        s0.wt = project_l2(&mesh, |x| 1.0 - x[0] * x[0] - x[1] * x[1]);
        s0.apply_constraints(&ops, ThermalBc::Neumann);
        let st = Stepper::new(&ops, &p, 0.02, ThermalBc::Neumann, 1e-12).unwrap();
        let (s1, diss, _) = st.step(&s0).unwrap();
        let (e0, e1) = (energy(&ops, &p, &s0).total(), energy(&ops, &p, &s1).total());
        assert!(e1 < e0);
        assert!(diss.w > 0.0 && diss.v == 0.0 && diss.theta == 0.0 && diss.q == 0.0);
        assert!((e1 - e0 + 0.02 * diss.total()).abs() < 1e-12 * e0);
    }

    #[test]
    fn dissipation_identity_both_thermal_conditions() {
        let p = PlateParams { ddamp: [[1.0, 0.3], [0.3, 0.5]], beta: 0.4, ..PlateParams::default() };
        let (mesh, ops) = setup(0.25, &p);
        for bc in [ThermalBc::Neumann, ThermalBc::Dirichlet] {
            let mut s = generic_state(&mesh, &ops, bc);
            let st = Stepper::new(&ops, &p, 0.03, bc, 1e-12).unwrap();
            let e0 = energy(&ops, &p, &s).total();
            let mut e = e0;
            for _ in 0..50 {
                let (next, diss, _) = st.step(&s).unwrap();
                let en = energy(&ops, &p, &next).total();
                assert!((en - e + 0.03 * diss.total()).abs() <= 1e-11 * e0);
                assert!(next.constraint_violation(&ops, bc) == 0.0);
                e = en;
                s = next;
            }
        }
    }

    #[test]
    fn theta_mean_is_conserved_with_insulated_boundary() {
        let p = PlateParams { beta: 0.0, ..PlateParams::default() };
        let (mesh, ops) = setup(0.25, &p);
        let mut s = generic_state(&mesh, &ops, ThermalBc::Neumann);
        let st = Stepper::new(&ops, &p, 0.05, ThermalBc::Neumann, 1e-12).unwrap();
        let m0 = ops.lumped_integral(&s.theta);
        for _ in 0..100 {
            s = st.step(&s).unwrap().0;
        }
        assert!((ops.lumped_integral(&s.theta) - m0).abs() <= 1e-10 * m0.abs());
    }

    #[test]
    fn forward_then_backward_returns() {
        let p = conservative();
        let (mesh, ops) = setup(0.25, &p);
        let s0 = generic_state(&mesh, &ops, ThermalBc::Neumann);
        let fwd = Stepper::new(&ops, &p, 0.04, ThermalBc::Neumann, 1e-13).unwrap();
        let bwd = Stepper::new(&ops, &p, -0.04, ThermalBc::Neumann, 1e-13).unwrap();
        let mut s = s0.clone();
        for _ in 0..40 {
            s = fwd.step(&s).unwrap().0;
        }
        for _ in 0..40 {
            s = bwd.step(&s).unwrap().0;
        }
        assert!(s.max_abs_diff(&s0) <= 1e-9 * s0.coefficient_norm());
    }

    #[test]
    fn second_order_in_time() {
        let p = PlateParams::default();
        let (mesh, ops) = setup(0.3, &p);
        let s0 = generic_state(&mesh, &ops, ThermalBc::Neumann);
        let run = |dt: f64, steps: usize| {
            let st = Stepper::new(&ops, &p, dt, ThermalBc::Neumann, 1e-13).unwrap();
            let mut s = s0.clone();
            for _ in 0..steps {
                s = st.step(&s).unwrap().0;
            }
            s
        };
        let t = 0.4;
        let reference = run(t / 3200.0, 3200);
        let e1 = run(t / 32.0, 32).max_abs_diff(&reference);
        let e2 = run(t / 64.0, 64).max_abs_diff(&reference);
        let ratio = e1 / e2;
        assert!((3.5..4.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_data_stays_zero() {
        let p = PlateParams::default();
        let (_, ops) = setup(0.3, &p);
        let st = Stepper::new(&ops, &p, 0.1, ThermalBc::Dirichlet, 1e-12).unwrap();
        let mut count = 0;
        simulate::<SolverError, _>(&st, &State::zeros(ops.n), 20, |r| {
            assert_eq!(r.state.coefficient_norm(), 0.0);
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, 21);
    }

    #[test]
    fn step_count_hits_end_time() {
        assert_eq!(step_count(0.1, 1.0).0, 10);
        let (n, dt) = step_count(0.3, 1.0);
        assert_eq!(n, 4);
        assert!((dt * n as f64 - 1.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn energy_never_increases(
            d in 0.0..2.0f64, beta in 0.0..2.0f64, delta in 0.01..2.0f64,
            gamma in 0.01..2.0f64, d11 in 0.0..2.0f64, d22 in 0.0..2.0f64, dt in 0.01..0.3f64,
        ) {
            let off = 0.5 * (d11 * d22).sqrt();
            let p = PlateParams { d, beta, delta, gamma, ddamp: [[d11, off], [off, d22]], ..PlateParams::default() };
            let (mesh, ops) = setup(0.4, &p);
            let mut s = generic_state(&mesh, &ops, ThermalBc::Neumann);
            let st = Stepper::new(&ops, &p, dt, ThermalBc::Neumann, 1e-12).unwrap();
            let e0 = energy(&ops, &p, &s).total();
            let mut e = e0;
            for _ in 0..10 {
                let (next, diss, _) = st.step(&s).unwrap();
                let en = energy(&ops, &p, &next).total();
                prop_assert!(en <= e + 1e-12 * e0);
                prop_assert!((en - e + dt * diss.total()).abs() <= 1e-11 * e0);
                e = en;
                s = next;
            }
        }
    }
}
