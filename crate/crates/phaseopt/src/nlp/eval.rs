//! Evaluation engine: values and analytic first derivatives of every trajectory
//! quantity with respect to the flat decision vector.
//!
//! Derivatives are carried in [`Val3`]: a 3-vector value plus a sparse linear form.
//! The axes of most expressions decouple, so a derivative with respect to a 3-vector
//! variable is a single scalar coefficient on the whole triple; only phase durations
//! get full 3-vector coefficients. Rotating or projecting an expression converts
//! these forms into plain sparse Jacobian rows.
//!
//! The duration chain rule for a stance segment uses the identity
//! `dbeta/dT = -K^-1 K' beta` with `K' beta = -(1/T) [2 alpha/m; chidot; 0]`,
//! so no extra linear solves are needed beyond `K^-T` applied to the basis vectors.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::bezier::{bernstein_deriv, bernstein_deriv2, bernstein_unchecked, second_diff_matrix};
use crate::dynamics::{exp_so3, right_jacobian};

use super::layout::Layout;
use super::{DecisionVector, Problem, ProblemMode};

/// Sparse Jacobian row: `(column, value)` pairs, sorted and merged by `finish_row`.
pub type JacRow = Vec<(usize, f64)>;

pub fn finish_row(mut row: JacRow) -> JacRow {
    row.sort_unstable_by_key(|&(c, _)| c);
    let mut out: JacRow = Vec::with_capacity(row.len());
    for (c, v) in row {
        match out.last_mut() {
            Some((lc, lv)) if *lc == c => *lv += v,
            _ => out.push((c, v)),
        }
    }
    out.retain(|&(_, v)| v != 0.0);
    out
}

/// A 3-vector expression with its first derivatives.
#[derive(Debug, Clone, Default)]
pub struct Val3 {
    pub v: Vector3<f64>,
    /// Diagonal coefficient on a 3-vector variable starting at the base index.
    pub triples: Vec<(usize, f64)>,
    /// Full 3-vector coefficient on a scalar variable.
    pub scalars: Vec<(usize, Vector3<f64>)>,
}

impl Val3 {
    pub fn constant(v: Vector3<f64>) -> Self {
        Self { v, triples: Vec::new(), scalars: Vec::new() }
    }

    pub fn from_triple(v: Vector3<f64>, base: usize) -> Self {
        Self { v, triples: vec![(base, 1.0)], scalars: Vec::new() }
    }

    pub fn add(&mut self, other: &Val3) {
        self.v += other.v;
        self.triples.extend_from_slice(&other.triples);
        self.scalars.extend_from_slice(&other.scalars);
    }

    pub fn sub(&self, other: &Val3) -> Val3 {
        let mut out = self.clone();
        out.v -= other.v;
        out.triples.extend(other.triples.iter().map(|&(b, c)| (b, -c)));
        out.scalars.extend(other.scalars.iter().map(|&(i, c)| (i, -c)));
        out
    }

    /// Scalar row for the residual `a . self`.
    pub fn project_row(&self, a: &Vector3<f64>) -> JacRow {
        let mut row = JacRow::with_capacity(3 * self.triples.len() + self.scalars.len());
        for &(base, c) in &self.triples {
            for ax in 0..3 {
                row.push((base + ax, a[ax] * c));
            }
        }
        for &(idx, ref coeff) in &self.scalars {
            row.push((idx, a.dot(coeff)));
        }
        finish_row(row)
    }

    /// Three rows for the residual block `fac * self`; appended onto `rows`.
    pub fn emit_rows(&self, fac: &Matrix3<f64>, rows: &mut [JacRow; 3]) {
        for &(base, c) in &self.triples {
            for r in 0..3 {
                for cax in 0..3 {
                    let v = fac[(r, cax)] * c;
                    if v != 0.0 {
                        rows[r].push((base + cax, v));
                    }
                }
            }
        }
        for &(idx, ref coeff) in &self.scalars {
            let fc = fac * coeff;
            for r in 0..3 {
                if fc[r] != 0.0 {
                    rows[r].push((idx, fc[r]));
                }
            }
        }
    }

    /// Identity-factor emission (common case).
    pub fn emit_identity(&self, rows: &mut [JacRow; 3]) {
        for &(base, c) in &self.triples {
            for ax in 0..3 {
                rows[ax].push((base + ax, c));
            }
        }
        for &(idx, ref coeff) in &self.scalars {
            for ax in 0..3 {
                if coeff[ax] != 0.0 {
                    rows[ax].push((idx, coeff[ax]));
                }
            }
        }
    }
}

fn basis_vectors(n: usize, s: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let b = DVector::from_fn(n + 1, |k, _| bernstein_unchecked(k, n, s));
    let db = DVector::from_fn(n + 1, |k, _| bernstein_deriv(k, n, s));
    let ddb = DVector::from_fn(n + 1, |k, _| bernstein_deriv2(k, n, s));
    (b, db, ddb)
}

/// Per-stance-segment data: the transposed differentiation matrix, factorized.
struct StanceSolve {
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Per-leg schedule view with prefix sums and stance factorizations.
pub struct LegTimeline {
    pub durations: Vec<f64>,
    /// Prefix sums: sigma[0] = 0, sigma[q+1] = sigma[q] + dT_q.
    pub sigma: Vec<f64>,
    stance: Vec<StanceSolve>,
}

impl LegTimeline {
    /// Segment index (0-based) claiming `t`, plus the segment start time. The first
    /// and last segments extend beyond the leg's own span.
    pub fn segment_at(&self, t: f64) -> (usize, f64) {
        let n = self.durations.len();
        for q in 0..n {
            if t < self.sigma[q + 1] || q + 1 == n {
                return (q, self.sigma[q]);
            }
        }
        unreachable!()
    }
}

/// Everything that is evaluated once per decision vector: schedules, rotations and
/// the per-node caches consumed by cost and constraint assembly.
pub struct EvalContext {
    pub timelines: Vec<LegTimeline>,
    /// R_k = chart_k * Exp(dtheta_k).
    pub rotations: Vec<Matrix3<f64>>,
    /// Right Jacobians J_r(dtheta_k).
    pub jr_dtheta: Vec<Matrix3<f64>>,
    /// Body position at each node.
    pub node_x: Vec<Val3>,
    /// Foot position at each node, per leg: indexed [node][leg].
    pub node_p: Vec<Vec<Val3>>,
    /// Force at each node, per leg.
    pub node_f: Vec<Vec<Val3>>,
}

impl EvalContext {
    pub fn new(problem: &Problem, xi: &DecisionVector) -> Self {
        let layout = &problem.layout;
        let timelines: Vec<LegTimeline> = (0..layout.n_legs)
            .map(|leg| build_timeline(layout, xi, leg))
            .collect();
        let rotations: Vec<Matrix3<f64>> = (0..layout.n_nodes)
            .map(|k| xi.charts[k] * exp_so3(&xi.get_vec3(layout.dtheta(k))))
            .collect();
        let jr_dtheta: Vec<Matrix3<f64>> = (0..layout.n_nodes)
            .map(|k| right_jacobian(&xi.get_vec3(layout.dtheta(k))))
            .collect();
        let mut ctx = Self {
            timelines,
            rotations,
            jr_dtheta,
            node_x: Vec::new(),
            node_p: Vec::new(),
            node_f: Vec::new(),
        };
        for &t in &problem.node_times {
            ctx.node_x.push(ctx.body_position(problem, xi, t));
            ctx.node_p
                .push((0..layout.n_legs).map(|leg| ctx.foot(problem, xi, leg, t)).collect());
            ctx.node_f
                .push((0..layout.n_legs).map(|leg| ctx.force(problem, xi, leg, t)).collect());
        }
        ctx
    }

    /// Body position at an arbitrary time (proposed: gravity + per-leg particular
    /// solutions; baseline: the node variable, valid only at node times).
    pub fn body_position(&self, problem: &Problem, xi: &DecisionVector, t: f64) -> Val3 {
        match problem.layout.mode {
            ProblemMode::Proposed => {
                let mut x = Val3::constant(crate::dynamics::gravity_solution(
                    problem.scenario.x_init,
                    problem.scenario.xdot_init,
                    problem.scenario.robot.gravity,
                    t,
                ));
                for leg in 0..problem.layout.n_legs {
                    let (pos, _) = self.leg_particular(problem, xi, leg, t, false);
                    x.add(&pos);
                }
                x
            }
            ProblemMode::Baseline => {
                let k = problem.node_index(t);
                Val3::from_triple(xi.get_vec3(problem.layout.xnode(k)), problem.layout.xnode(k))
            }
        }
    }

    /// Body position and velocity at an arbitrary time.
    pub fn body_state(
        &self,
        problem: &Problem,
        xi: &DecisionVector,
        t: f64,
    ) -> (Val3, Val3) {
        match problem.layout.mode {
            ProblemMode::Proposed => {
                let g = problem.scenario.robot.gravity;
                let mut x = Val3::constant(crate::dynamics::gravity_solution(
                    problem.scenario.x_init,
                    problem.scenario.xdot_init,
                    g,
                    t,
                ));
                let mut v = Val3::constant(problem.scenario.xdot_init + g * t);
                for leg in 0..problem.layout.n_legs {
                    let (pos, vel) = self.leg_particular(problem, xi, leg, t, true);
                    x.add(&pos);
                    v.add(&vel);
                }
                (x, v)
            }
            ProblemMode::Baseline => {
                let k = problem.node_index(t);
                (
                    Val3::from_triple(
                        xi.get_vec3(problem.layout.xnode(k)),
                        problem.layout.xnode(k),
                    ),
                    Val3::from_triple(
                        xi.get_vec3(problem.layout.vnode(k)),
                        problem.layout.vnode(k),
                    ),
                )
            }
        }
    }

    /// One leg's particular solution at `t` (proposed mode only).
    pub fn leg_particular(
        &self,
        problem: &Problem,
        xi: &DecisionVector,
        leg: usize,
        t: f64,
        with_velocity: bool,
    ) -> (Val3, Val3) {
        let tl = &self.timelines[leg];
        let (q, start) = tl.segment_at(t);
        if q % 2 == 0 {
            let s = (t - start) / tl.durations[q];
            self.stance_eval(problem, xi, leg, q, s, true, with_velocity)
        } else {
            self.swing_state_eval(problem, xi, leg, q, t - start, true)
        }
    }

    /// Stance particular solution at local normalized time `s`.
    ///
    /// `chain_sigma` distinguishes evaluation at a fixed world time (s depends on
    /// every earlier duration and on the segment's own) from evaluation at a fixed
    /// local parameter such as the segment end (only the beta path remains).
    #[allow(clippy::too_many_arguments)]
    fn stance_eval(
        &self,
        problem: &Problem,
        xi: &DecisionVector,
        leg: usize,
        q: usize,
        s: f64,
        chain_sigma: bool,
        with_velocity: bool,
    ) -> (Val3, Val3) {
        let layout = &problem.layout;
        let tl = &self.timelines[leg];
        let d = q / 2;
        let dt = tl.durations[q];
        let mass = problem.scenario.robot.mass;
        let m_force = layout.deg_forces;
        let n_pos = m_force + 2;
        let (b, db, ddb) = basis_vectors(n_pos, s);
        let solve = &tl.stance[d];
        let u = solve.lu_t.solve(&b).expect("differentiation matrix invertible");
        let du = solve.lu_t.solve(&db).expect("differentiation matrix invertible");
        let ddu = solve.lu_t.solve(&ddb).expect("differentiation matrix invertible");

        let chi = xi.get_vec3(layout.chi(leg, q));
        let chi_dot = xi.get_vec3(layout.chi_dot(leg, q));
        let alphas: Vec<Vector3<f64>> = (0..=m_force)
            .map(|k| xi.get_vec3(layout.force_cp(leg, d, k)))
            .collect();

        let combine = |w: &DVector<f64>| -> Vector3<f64> {
            let mut acc = chi_dot * w[m_force + 1] + chi * w[m_force + 2];
            for (k, a) in alphas.iter().enumerate() {
                acc += a * (w[k] / mass);
            }
            acc
        };
        let value = combine(&u);
        let vel_s = combine(&du); // dB/ds
        let acc_s = combine(&ddu); // d^2B/ds^2
        // Derivative of B (resp. dB/ds) through beta's dependence on the duration.
        let beta_path = |w: &DVector<f64>| -> Vector3<f64> {
            let mut acc = chi_dot * w[m_force + 1];
            for (k, a) in alphas.iter().enumerate() {
                acc += a * (2.0 * w[k] / mass);
            }
            acc / dt
        };
        let g_pos = beta_path(&u);
        let g_vel = beta_path(&du);

        let mut pos = Val3::constant(value);
        for (k, _) in alphas.iter().enumerate() {
            pos.triples.push((layout.force_cp(leg, d, k), u[k] / mass));
        }
        pos.triples.push((layout.chi_dot(leg, q), u[m_force + 1]));
        pos.triples.push((layout.chi(leg, q), u[m_force + 2]));
        if chain_sigma {
            for q_prev in 0..q {
                pos.scalars.push((layout.duration(leg, q_prev), vel_s * (-1.0 / dt)));
            }
            pos.scalars
                .push((layout.duration(leg, q), vel_s * (-s / dt) + g_pos));
        } else {
            pos.scalars.push((layout.duration(leg, q), g_pos));
        }

        let mut vel = Val3::default();
        if with_velocity {
            vel.v = vel_s / dt;
            for (k, _) in alphas.iter().enumerate() {
                vel.triples
                    .push((layout.force_cp(leg, d, k), du[k] / (mass * dt)));
            }
            vel.triples.push((layout.chi_dot(leg, q), du[m_force + 1] / dt));
            vel.triples.push((layout.chi(leg, q), du[m_force + 2] / dt));
            if chain_sigma {
                for q_prev in 0..q {
                    vel.scalars
                        .push((layout.duration(leg, q_prev), acc_s * (-1.0 / (dt * dt))));
                }
                vel.scalars.push((
                    layout.duration(leg, q),
                    vel_s * (-1.0 / (dt * dt)) + acc_s * (-s / (dt * dt)) + g_vel / dt,
                ));
            } else {
                vel.scalars.push((
                    layout.duration(leg, q),
                    vel_s * (-1.0 / (dt * dt)) + g_vel / dt,
                ));
            }
        }
        (pos, vel)
    }

    /// Swing particular solution at local time `tau = t - sigma_q`.
    fn swing_state_eval(
        &self,
        problem: &Problem,
        xi: &DecisionVector,
        leg: usize,
        q: usize,
        tau: f64,
        chain_sigma: bool,
    ) -> (Val3, Val3) {
        let layout = &problem.layout;
        let chi = xi.get_vec3(layout.chi(leg, q));
        let chi_dot = xi.get_vec3(layout.chi_dot(leg, q));
        let mut pos = Val3::constant(chi + chi_dot * tau);
        pos.triples.push((layout.chi(leg, q), 1.0));
        pos.triples.push((layout.chi_dot(leg, q), tau));
        if chain_sigma {
            for q_prev in 0..q {
                pos.scalars.push((layout.duration(leg, q_prev), -chi_dot));
            }
        } else {
            // Fixed local parameter (segment end): tau equals the own duration.
            pos.scalars.push((layout.duration(leg, q), chi_dot));
        }
        let mut vel = Val3::constant(chi_dot);
        vel.triples.push((layout.chi_dot(leg, q), 1.0));
        (pos, vel)
    }

    /// Value and derivatives of segment `q`'s state at its own end (s = 1); feeds
    /// the continuity rows.
    pub fn segment_end_state(
        &self,
        problem: &Problem,
        xi: &DecisionVector,
        leg: usize,
        q: usize,
    ) -> (Val3, Val3) {
        if q % 2 == 0 {
            self.stance_eval(problem, xi, leg, q, 1.0, false, true)
        } else {
            let tau = self.timelines[leg].durations[q];
            self.swing_state_eval(problem, xi, leg, q, tau, false)
        }
    }

    /// Ground reaction force of `leg` at `t` (zero during swing).
    pub fn force(&self, problem: &Problem, xi: &DecisionVector, leg: usize, t: f64) -> Val3 {
        let layout = &problem.layout;
        let tl = &self.timelines[leg];
        let (q, start) = tl.segment_at(t);
        if q % 2 == 1 {
            return Val3::constant(Vector3::zeros());
        }
        let d = q / 2;
        let dt = tl.durations[q];
        let s = (t - start) / dt;
        let m_force = layout.deg_forces;
        let mut value = Vector3::zeros();
        let mut slope = Vector3::zeros();
        let mut out = Val3::default();
        for k in 0..=m_force {
            let a = xi.get_vec3(layout.force_cp(leg, d, k));
            let basis = bernstein_unchecked(k, m_force, s);
            value += a * basis;
            slope += a * bernstein_deriv(k, m_force, s);
            out.triples.push((layout.force_cp(leg, d, k), basis));
        }
        out.v = value;
        for q_prev in 0..q {
            out.scalars.push((layout.duration(leg, q_prev), slope * (-1.0 / dt)));
        }
        out.scalars.push((layout.duration(leg, q), slope * (-s / dt)));
        out
    }

    /// Foot position of `leg` at `t` (the foothold during stance, the swing Bezier
    /// otherwise).
    pub fn foot(&self, problem: &Problem, xi: &DecisionVector, leg: usize, t: f64) -> Val3 {
        let layout = &problem.layout;
        let tl = &self.timelines[leg];
        let (q, start) = tl.segment_at(t);
        if q % 2 == 0 {
            let base = layout.foothold(leg, q / 2);
            return Val3::from_triple(xi.get_vec3(base), base);
        }
        let d = q / 2;
        let dt = tl.durations[q];
        let s = (t - start) / dt;
        let n_feet = layout.deg_feet;
        let mut value = Vector3::zeros();
        let mut slope = Vector3::zeros();
        let mut out = Val3::default();
        for k in 0..=n_feet {
            let g = xi.get_vec3(layout.swing_cp(leg, d, k));
            let basis = bernstein_unchecked(k, n_feet, s);
            value += g * basis;
            slope += g * bernstein_deriv(k, n_feet, s);
            out.triples.push((layout.swing_cp(leg, d, k), basis));
        }
        out.v = value;
        for q_prev in 0..q {
            out.scalars.push((layout.duration(leg, q_prev), slope * (-1.0 / dt)));
        }
        out.scalars.push((layout.duration(leg, q), slope * (-s / dt)));
        out
    }
}

fn build_timeline(layout: &Layout, xi: &DecisionVector, leg: usize) -> LegTimeline {
    let durations: Vec<f64> = (0..layout.n_phase)
        .map(|q| xi.values[layout.duration(leg, q)])
        .collect();
    let mut sigma = Vec::with_capacity(layout.n_phase + 1);
    sigma.push(0.0);
    for &d in &durations {
        sigma.push(sigma.last().unwrap() + d);
    }
    let stance = if layout.mode == ProblemMode::Proposed {
        (0..layout.n_stance)
            .map(|d| {
                let dt = durations[2 * d];
                let k = second_diff_matrix(layout.deg_forces + 2, dt)
                    .expect("positive stance duration");
                StanceSolve { lu_t: k.entries().transpose().lu() }
            })
            .collect()
    } else {
        Vec::new()
    };
    LegTimeline { durations, sigma, stance }
}

/// Dense Jacobian assembly for tests and finite-difference checks.
pub fn rows_to_dense(rows: &[JacRow], n_vars: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n_vars);
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            m[(r, c)] += v;
        }
    }
    m
}
