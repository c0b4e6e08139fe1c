//! Cost residual blocks and constraint rows with analytic Jacobians.
//!
//! Every cost is a weighted sum of squared residual rows, which is exactly the shape
//! the Gauss-Newton Hessian needs. Constraint rows carry labels so structural
//! properties (such as "no translational-dynamics defect rows in proposed mode")
//! are assertable.

use nalgebra::{Matrix3, Vector3};

use crate::dynamics::{exp_so3, hat, log_so3, right_jacobian, right_jacobian_inv};
use crate::model::pyramid;

use super::eval::{finish_row, EvalContext, JacRow, Val3};
use super::{DecisionVector, EvalError, Problem, ProblemMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    InitialSegmentState,
    InitialFoot,
    InitialOrientation,
    InitialAngularVelocity,
    InitialPosition,
    InitialVelocity,
    FinalPosition,
    FinalVelocity,
    FinalFoot,
    FinalOrientation,
    FinalAngularVelocity,
    DurationSum,
    Continuity,
    FootholdTerrain,
    AngularRotationDefect,
    AngularVelocityDefect,
    TranslationalDefect,
    FrictionControlPoint,
    FrictionNode,
    SwingClearance,
    KinematicLimit,
    MinDuration,
}

/// Row label: kind plus the leg/node indices it belongs to (unused fields are 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLabel {
    pub kind: RowKind,
    pub leg: usize,
    pub index: usize,
}

impl RowLabel {
    fn new(kind: RowKind, leg: usize, index: usize) -> Self {
        Self { kind, leg, index }
    }
}

#[derive(Debug, Clone)]
pub struct RowEval {
    pub value: f64,
    pub jac: JacRow,
    pub label: RowLabel,
}

#[derive(Debug, Clone)]
pub struct ResidualRow {
    pub value: f64,
    pub jac: JacRow,
}

/// One cost term `h_e = sum_j r_j^2` with its weight.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub weight: f64,
    pub rows: Vec<ResidualRow>,
}

impl ResidualBlock {
    pub fn value(&self) -> f64 {
        self.rows.iter().map(|r| r.value * r.value).sum()
    }
}

fn push_block3(rows: &mut Vec<RowEval>, vals: [f64; 3], jacs: [JacRow; 3], label: RowLabel) {
    for (v, j) in vals.into_iter().zip(jacs) {
        rows.push(RowEval { value: v, jac: finish_row(j), label });
    }
}

fn matrix_rows_on_triple(fac: &Matrix3<f64>, base: usize) -> [JacRow; 3] {
    let mut rows: [JacRow; 3] = Default::default();
    for r in 0..3 {
        for c in 0..3 {
            if fac[(r, c)] != 0.0 {
                rows[r].push((base + c, fac[(r, c)]));
            }
        }
    }
    rows
}

/// Residual and Jacobian rows of `Log(R_target^T chart Exp(dtheta))`.
fn chart_log_rows(
    target: &Matrix3<f64>,
    rotation: &Matrix3<f64>,
    jr_dtheta: &Matrix3<f64>,
    dtheta_base: usize,
) -> (Vector3<f64>, [JacRow; 3]) {
    let e = log_so3(&(target.transpose() * rotation)).expect("rotation chart stays valid");
    let jac = right_jacobian_inv(&e) * jr_dtheta;
    (e, matrix_rows_on_triple(&jac, dtheta_base))
}

/// Assemble the six cost residual blocks (h1..h6).
pub fn cost_blocks(
    problem: &Problem,
    xi: &DecisionVector,
    ctx: &EvalContext,
) -> Vec<ResidualBlock> {
    let layout = &problem.layout;
    let w = &problem.scenario.weights;
    let n_nodes = layout.n_nodes;
    let z_axis = Vector3::new(0.0, 0.0, 1.0);

    // h1: body height tracking at nodes.
    let mut h1 = Vec::with_capacity(n_nodes);
    for k in 0..n_nodes {
        let x = &ctx.node_x[k];
        h1.push(ResidualRow {
            value: x.v.z - problem.z_ref[k],
            jac: x.project_row(&z_axis),
        });
    }

    // h2: orientation tracking, Log(R_ref^T R_k).
    let mut h2 = Vec::with_capacity(3 * n_nodes);
    for k in 0..n_nodes {
        let (e, jacs) = chart_log_rows(
            &problem.r_ref[k],
            &ctx.rotations[k],
            &ctx.jr_dtheta[k],
            layout.dtheta(k),
        );
        for (ax, jac) in jacs.into_iter().enumerate() {
            h2.push(ResidualRow { value: e[ax], jac: finish_row(jac) });
        }
    }

    // h3: angular velocity regularization.
    let mut h3 = Vec::with_capacity(3 * n_nodes);
    for k in 0..n_nodes {
        let base = layout.omega(k);
        let omega = xi.get_vec3(base);
        for ax in 0..3 {
            h3.push(ResidualRow { value: omega[ax], jac: vec![(base + ax, 1.0)] });
        }
    }

    // h4: body-frame foot tracking at nodes.
    let mut h4 = Vec::with_capacity(3 * n_nodes * layout.n_legs);
    for k in 0..n_nodes {
        let r_k = &ctx.rotations[k];
        let rt = r_k.transpose();
        for leg in 0..layout.n_legs {
            let rel = ctx.node_p[k][leg].sub(&ctx.node_x[k]);
            let body_rel = rt * rel.v;
            let value = body_rel - problem.scenario.robot.nominal_foot[leg];
            let mut jacs: [JacRow; 3] = Default::default();
            rel.emit_rows(&rt, &mut jacs);
            let dtheta_jac = hat(&body_rel) * ctx.jr_dtheta[k];
            let base = layout.dtheta(k);
            for r in 0..3 {
                for c in 0..3 {
                    if dtheta_jac[(r, c)] != 0.0 {
                        jacs[r].push((base + c, dtheta_jac[(r, c)]));
                    }
                }
            }
            for (ax, jac) in jacs.into_iter().enumerate() {
                h4.push(ResidualRow { value: value[ax], jac: finish_row(jac) });
            }
        }
    }

    // h5/h6: second/first differences of swing foot control points (numerators only).
    let mut h5 = Vec::new();
    let mut h6 = Vec::new();
    for leg in 0..layout.n_legs {
        for d in 0..layout.n_swing {
            let n = layout.deg_feet;
            for k in 0..=n.saturating_sub(2) {
                if k + 2 > n {
                    break;
                }
                let b0 = layout.swing_cp(leg, d, k);
                let b1 = layout.swing_cp(leg, d, k + 1);
                let b2 = layout.swing_cp(leg, d, k + 2);
                let v = xi.get_vec3(b2) - xi.get_vec3(b1) * 2.0 + xi.get_vec3(b0);
                for ax in 0..3 {
                    h5.push(ResidualRow {
                        value: v[ax],
                        jac: finish_row(vec![(b2 + ax, 1.0), (b1 + ax, -2.0), (b0 + ax, 1.0)]),
                    });
                }
            }
            for k in 0..n {
                let b0 = layout.swing_cp(leg, d, k);
                let b1 = layout.swing_cp(leg, d, k + 1);
                let v = xi.get_vec3(b1) - xi.get_vec3(b0);
                for ax in 0..3 {
                    h6.push(ResidualRow {
                        value: v[ax],
                        jac: vec![(b0 + ax, -1.0), (b1 + ax, 1.0)],
                    });
                }
            }
        }
    }

    vec![
        ResidualBlock { weight: w.w1, rows: h1 },
        ResidualBlock { weight: w.w2, rows: h2 },
        ResidualBlock { weight: w.w3, rows: h3 },
        ResidualBlock { weight: w.w4, rows: h4 },
        ResidualBlock { weight: w.w5, rows: h5 },
        ResidualBlock { weight: w.w6, rows: h6 },
    ]
}

/// Assemble every equality and inequality row.
pub fn constraint_rows(
    problem: &Problem,
    xi: &DecisionVector,
    ctx: &EvalContext,
) -> Result<(Vec<RowEval>, Vec<RowEval>), EvalError> {
    let layout = &problem.layout;
    let scenario = &problem.scenario;
    let n_legs = layout.n_legs;
    let n_nodes = layout.n_nodes;
    let last = n_nodes - 1;
    let mut eq: Vec<RowEval> = Vec::new();
    let mut ineq: Vec<RowEval> = Vec::new();

    // Initial conditions.
    match layout.mode {
        ProblemMode::Proposed => {
            for leg in 0..n_legs {
                let label = RowLabel::new(RowKind::InitialSegmentState, leg, 0);
                let chi = xi.get_vec3(layout.chi(leg, 0));
                let chid = xi.get_vec3(layout.chi_dot(leg, 0));
                for ax in 0..3 {
                    eq.push(RowEval {
                        value: chi[ax],
                        jac: vec![(layout.chi(leg, 0) + ax, 1.0)],
                        label,
                    });
                }
                for ax in 0..3 {
                    eq.push(RowEval {
                        value: chid[ax],
                        jac: vec![(layout.chi_dot(leg, 0) + ax, 1.0)],
                        label,
                    });
                }
            }
        }
        ProblemMode::Baseline => {
            let xb = layout.xnode(0);
            let vb = layout.vnode(0);
            let xv = xi.get_vec3(xb) - scenario.x_init;
            let vv = xi.get_vec3(vb) - scenario.xdot_init;
            for ax in 0..3 {
                eq.push(RowEval {
                    value: xv[ax],
                    jac: vec![(xb + ax, 1.0)],
                    label: RowLabel::new(RowKind::InitialPosition, 0, 0),
                });
            }
            for ax in 0..3 {
                eq.push(RowEval {
                    value: vv[ax],
                    jac: vec![(vb + ax, 1.0)],
                    label: RowLabel::new(RowKind::InitialVelocity, 0, 0),
                });
            }
        }
    }
    for leg in 0..n_legs {
        let base = layout.foothold(leg, 0);
        let v = xi.get_vec3(base) - scenario.p_init[leg];
        for ax in 0..3 {
            eq.push(RowEval {
                value: v[ax],
                jac: vec![(base + ax, 1.0)],
                label: RowLabel::new(RowKind::InitialFoot, leg, 0),
            });
        }
    }
    {
        let (e, jacs) = chart_log_rows(
            &scenario.r_init,
            &ctx.rotations[0],
            &ctx.jr_dtheta[0],
            layout.dtheta(0),
        );
        push_block3(
            &mut eq,
            [e[0], e[1], e[2]],
            jacs,
            RowLabel::new(RowKind::InitialOrientation, 0, 0),
        );
        let base = layout.omega(0);
        let v = xi.get_vec3(base) - scenario.omega_init;
        for ax in 0..3 {
            eq.push(RowEval {
                value: v[ax],
                jac: vec![(base + ax, 1.0)],
                label: RowLabel::new(RowKind::InitialAngularVelocity, 0, 0),
            });
        }
    }

    // Final conditions.
    {
        let (x, v) = ctx.body_state(problem, xi, scenario.t_total);
        let dx = x.v - scenario.x_final;
        let dv = v.v - scenario.xdot_final;
        let mut jx: [JacRow; 3] = Default::default();
        x.emit_identity(&mut jx);
        push_block3(
            &mut eq,
            [dx[0], dx[1], dx[2]],
            jx,
            RowLabel::new(RowKind::FinalPosition, 0, 0),
        );
        let mut jv: [JacRow; 3] = Default::default();
        v.emit_identity(&mut jv);
        push_block3(
            &mut eq,
            [dv[0], dv[1], dv[2]],
            jv,
            RowLabel::new(RowKind::FinalVelocity, 0, 0),
        );
    }
    if layout.n_stance > 1 {
        for leg in 0..n_legs {
            let base = layout.foothold(leg, layout.n_stance - 1);
            let v = xi.get_vec3(base) - scenario.p_final[leg];
            for ax in 0..3 {
                eq.push(RowEval {
                    value: v[ax],
                    jac: vec![(base + ax, 1.0)],
                    label: RowLabel::new(RowKind::FinalFoot, leg, 0),
                });
            }
        }
    }
    {
        let (e, jacs) = chart_log_rows(
            &scenario.r_final,
            &ctx.rotations[last],
            &ctx.jr_dtheta[last],
            layout.dtheta(last),
        );
        push_block3(
            &mut eq,
            [e[0], e[1], e[2]],
            jacs,
            RowLabel::new(RowKind::FinalOrientation, 0, last),
        );
        let base = layout.omega(last);
        let v = xi.get_vec3(base) - scenario.omega_final;
        for ax in 0..3 {
            eq.push(RowEval {
                value: v[ax],
                jac: vec![(base + ax, 1.0)],
                label: RowLabel::new(RowKind::FinalAngularVelocity, 0, last),
            });
        }
    }

    // Per-leg duration sums.
    for leg in 0..n_legs {
        let sum: f64 = (0..layout.n_phase)
            .map(|q| xi.values[layout.duration(leg, q)])
            .sum();
        let jac = (0..layout.n_phase)
            .map(|q| (layout.duration(leg, q), 1.0))
            .collect();
        eq.push(RowEval {
            value: sum - scenario.t_total,
            jac: finish_row(jac),
            label: RowLabel::new(RowKind::DurationSum, leg, 0),
        });
    }

    // Segment continuity (proposed mode).
    if layout.mode == ProblemMode::Proposed {
        for leg in 0..n_legs {
            for q in 1..layout.n_phase {
                let (pos, vel) = ctx.segment_end_state(problem, xi, leg, q - 1);
                let chi_base = layout.chi(leg, q);
                let chid_base = layout.chi_dot(leg, q);
                let label = RowLabel::new(RowKind::Continuity, leg, q);
                let dpos = pos.v - xi.get_vec3(chi_base);
                let mut jp: [JacRow; 3] = Default::default();
                pos.emit_identity(&mut jp);
                for ax in 0..3 {
                    jp[ax].push((chi_base + ax, -1.0));
                }
                push_block3(&mut eq, [dpos[0], dpos[1], dpos[2]], jp, label);
                let dvel = vel.v - xi.get_vec3(chid_base);
                let mut jv: [JacRow; 3] = Default::default();
                vel.emit_identity(&mut jv);
                for ax in 0..3 {
                    jv[ax].push((chid_base + ax, -1.0));
                }
                push_block3(&mut eq, [dvel[0], dvel[1], dvel[2]], jv, label);
            }
        }
    }

    // Interior footholds on the terrain (boundary footholds are pinned separately).
    for leg in 0..n_legs {
        for d in 1..layout.n_stance.saturating_sub(1) {
            let base = layout.foothold(leg, d);
            let p = xi.get_vec3(base);
            let h = scenario.terrain.height(p.x, p.y);
            let (hx, hy) = scenario.terrain.height_gradient(p.x, p.y);
            eq.push(RowEval {
                value: p.z - h,
                jac: finish_row(vec![(base, -hx), (base + 1, -hy), (base + 2, 1.0)]),
                label: RowLabel::new(RowKind::FootholdTerrain, leg, d),
            });
        }
    }

    // Baseline translational defects at nodes.
    if layout.mode == ProblemMode::Baseline {
        let mass = scenario.robot.mass;
        let dt = problem.dt_node;
        for k in 0..n_nodes {
            let accel = baseline_node_accel(problem, xi, k, dt);
            let mut residual = Val3 {
                v: accel.v * mass - scenario.robot.gravity * mass,
                triples: accel.triples.iter().map(|&(b, c)| (b, c * mass)).collect(),
                scalars: Vec::new(),
            };
            for leg in 0..n_legs {
                let f = &ctx.node_f[k][leg];
                residual.v -= f.v;
                residual
                    .triples
                    .extend(f.triples.iter().map(|&(b, c)| (b, -c)));
                residual
                    .scalars
                    .extend(f.scalars.iter().map(|&(i, c)| (i, -c)));
            }
            let mut jacs: [JacRow; 3] = Default::default();
            residual.emit_identity(&mut jacs);
            push_block3(
                &mut eq,
                [residual.v[0], residual.v[1], residual.v[2]],
                jacs,
                RowLabel::new(RowKind::TranslationalDefect, 0, k),
            );
        }
    }

    // Angular dynamics defects at nodes.
    let dt = problem.dt_node;
    let inertia = scenario.robot.inertia;
    let inertia_inv = scenario.robot.inertia_inv;
    for k in 0..n_nodes - 1 {
        let omega_k = xi.get_vec3(layout.omega(k));
        let omega_next = xi.get_vec3(layout.omega(k + 1));
        let r_k = &ctx.rotations[k];
        let r_next = &ctx.rotations[k + 1];
        let e_step = exp_so3(&(omega_k * dt));

        // Rotation defect in the tangent chart.
        {
            let defect = log_so3(&(r_next.transpose() * r_k * e_step))
                .map_err(|_| EvalError::NonFinite("rotation defect left the log domain"))?;
            let a = right_jacobian_inv(&defect);
            let j_omega = a * right_jacobian(&(omega_k * dt)) * dt;
            let j_dtheta_k = a * e_step.transpose() * ctx.jr_dtheta[k];
            let j_dtheta_next = -(a.transpose()) * ctx.jr_dtheta[k + 1];
            let mut jacs: [JacRow; 3] = Default::default();
            for (fac, base) in [
                (&j_omega, layout.omega(k)),
                (&j_dtheta_k, layout.dtheta(k)),
                (&j_dtheta_next, layout.dtheta(k + 1)),
            ] {
                for r in 0..3 {
                    for c in 0..3 {
                        if fac[(r, c)] != 0.0 {
                            jacs[r].push((base + c, fac[(r, c)]));
                        }
                    }
                }
            }
            push_block3(
                &mut eq,
                [defect[0], defect[1], defect[2]],
                jacs,
                RowLabel::new(RowKind::AngularRotationDefect, 0, k),
            );
        }

        // Angular velocity defect.
        {
            let x = &ctx.node_x[k];
            let mut tau_world = Vector3::zeros();
            for leg in 0..n_legs {
                let arm = ctx.node_p[k][leg].v - x.v;
                tau_world += arm.cross(&ctx.node_f[k][leg].v);
            }
            let body_torque = r_k.transpose() * tau_world;
            let gyro = omega_k.cross(&(inertia * omega_k));
            let value = omega_next - omega_k - inertia_inv * (body_torque - gyro) * dt;

            let mut jacs: [JacRow; 3] = Default::default();
            // d/d omega_{k+1} = I.
            for ax in 0..3 {
                jacs[ax].push((layout.omega(k + 1) + ax, 1.0));
            }
            // d/d omega_k = -I + I^-1 (hat(w) I - hat(I w)) dt.
            let j_omega = -Matrix3::identity()
                + inertia_inv * (hat(&omega_k) * inertia - hat(&(inertia * omega_k))) * dt;
            for r in 0..3 {
                for c in 0..3 {
                    if j_omega[(r, c)] != 0.0 {
                        jacs[r].push((layout.omega(k) + c, j_omega[(r, c)]));
                    }
                }
            }
            // d/d dtheta_k through R_k^T tau.
            let j_dtheta = -inertia_inv * hat(&body_torque) * ctx.jr_dtheta[k] * dt;
            for r in 0..3 {
                for c in 0..3 {
                    if j_dtheta[(r, c)] != 0.0 {
                        jacs[r].push((layout.dtheta(k) + c, j_dtheta[(r, c)]));
                    }
                }
            }
            // Force and geometry paths: dw/du_i = I^-1 R^T hat(f_i) dt applied to
            // (dp_i - dx); dw/df_i = -I^-1 R^T hat(u_i) dt.
            let rt = r_k.transpose();
            for leg in 0..n_legs {
                let p = &ctx.node_p[k][leg];
                let f = &ctx.node_f[k][leg];
                let arm = p.v - x.v;
                let fac_u = inertia_inv * rt * hat(&f.v) * dt;
                let rel = p.sub(x);
                rel.emit_rows(&fac_u, &mut jacs);
                let fac_f = -inertia_inv * rt * hat(&arm) * dt;
                f.emit_rows(&fac_f, &mut jacs);
            }
            push_block3(
                &mut eq,
                [value[0], value[1], value[2]],
                jacs,
                RowLabel::new(RowKind::AngularVelocityDefect, 0, k),
            );
        }
    }

    // Inequalities.
    match layout.mode {
        ProblemMode::Proposed => {
            // Friction pyramid on every force control point.
            for leg in 0..n_legs {
                for d in 0..layout.n_stance {
                    let fh = xi.get_vec3(layout.foothold(leg, d));
                    let frame = scenario.terrain.frame(fh.x, fh.y);
                    let pyr = pyramid(&frame, scenario.terrain.friction, scenario.robot.f_n_max)
                        .map_err(|_| EvalError::NonFinite("degenerate terrain frame"))?;
                    for k in 0..=layout.deg_forces {
                        let base = layout.force_cp(leg, d, k);
                        let alpha = xi.get_vec3(base);
                        for (ri, (a, b)) in pyr.rows.iter().enumerate() {
                            ineq.push(RowEval {
                                value: a.dot(&alpha) - b,
                                jac: finish_row(vec![
                                    (base, a.x),
                                    (base + 1, a.y),
                                    (base + 2, a.z),
                                ]),
                                label: RowLabel::new(
                                    RowKind::FrictionControlPoint,
                                    leg,
                                    (d * (layout.deg_forces + 1) + k) * 6 + ri,
                                ),
                            });
                        }
                    }
                }
            }
        }
        ProblemMode::Baseline => {
            // Friction pyramid on sampled node forces, at stance nodes only: swing
            // forces are structurally zero, and rows with empty Jacobians would
            // leave the subproblems without a strict interior.
            for k in 0..n_nodes {
                for leg in 0..n_legs {
                    if ctx.timelines[leg].segment_at(problem.node_times[k]).0 % 2 == 1 {
                        continue;
                    }
                    let p = &ctx.node_p[k][leg];
                    let frame = scenario.terrain.frame(p.v.x, p.v.y);
                    let pyr = pyramid(&frame, scenario.terrain.friction, scenario.robot.f_n_max)
                        .map_err(|_| EvalError::NonFinite("degenerate terrain frame"))?;
                    let f = &ctx.node_f[k][leg];
                    for (ri, (a, b)) in pyr.rows.iter().enumerate() {
                        ineq.push(RowEval {
                            value: a.dot(&f.v) - b,
                            jac: f.project_row(a),
                            label: RowLabel::new(RowKind::FrictionNode, leg, k * 6 + ri),
                        });
                    }
                }
            }
        }
    }

    // Swing clearance at the nodes that fall inside a swing phase. Stance nodes sit
    // exactly on the terrain through the foothold equalities; duplicating them here
    // would remove the feasible region's interior.
    for k in 0..n_nodes {
        for leg in 0..n_legs {
            if ctx.timelines[leg].segment_at(problem.node_times[k]).0 % 2 == 0 {
                continue;
            }
            let p = &ctx.node_p[k][leg];
            let h = scenario.terrain.height(p.v.x, p.v.y);
            let (hx, hy) = scenario.terrain.height_gradient(p.v.x, p.v.y);
            ineq.push(RowEval {
                value: h - p.v.z,
                jac: p.project_row(&Vector3::new(hx, hy, -1.0)),
                label: RowLabel::new(RowKind::SwingClearance, leg, k),
            });
        }
    }

    // Kinematic leg-length limit at nodes.
    for k in 0..n_nodes {
        let r_k = &ctx.rotations[k];
        let rt = r_k.transpose();
        for leg in 0..n_legs {
            let rel = ctx.node_p[k][leg].sub(&ctx.node_x[k]);
            let v = rt * rel.v - scenario.robot.hip_offsets[leg];
            let norm = v.norm();
            let label = RowLabel::new(RowKind::KinematicLimit, leg, k);
            if norm < 1e-9 {
                ineq.push(RowEval {
                    value: -scenario.robot.l_leg,
                    jac: Vec::new(),
                    label,
                });
                continue;
            }
            let dir = v / norm;
            let mut jac = rel.project_row(&(r_k * dir));
            // Orientation path: d(R^T u) = hat(R^T u) J_r dtheta, contracted with
            // dir from the left: coefficients J_r^T (dir x R^T u).
            let dtheta_coeff = ctx.jr_dtheta[k].transpose() * dir.cross(&(rt * rel.v));
            let base = problem.layout.dtheta(k);
            for ax in 0..3 {
                if dtheta_coeff[ax] != 0.0 {
                    jac.push((base + ax, dtheta_coeff[ax]));
                }
            }
            ineq.push(RowEval {
                value: norm - scenario.robot.l_leg,
                jac: finish_row(jac),
                label,
            });
        }
    }

    // Minimum phase durations.
    for leg in 0..n_legs {
        for q in 0..layout.n_phase {
            let idx = layout.duration(leg, q);
            ineq.push(RowEval {
                value: problem.scenario.solver.dt_min - xi.values[idx],
                jac: vec![(idx, -1.0)],
                label: RowLabel::new(RowKind::MinDuration, leg, q),
            });
        }
    }

    for row in eq.iter().chain(ineq.iter()) {
        if !row.value.is_finite() || row.jac.iter().any(|(_, v)| !v.is_finite()) {
            return Err(EvalError::NonFinite("constraint residual or Jacobian"));
        }
    }
    Ok((eq, ineq))
}

/// Cubic-Hermite body acceleration at node `k` (baseline mode): interior nodes use
/// the right segment's start acceleration, the last node the left segment's end.
fn baseline_node_accel(problem: &Problem, xi: &DecisionVector, k: usize, dt: f64) -> Val3 {
    let layout = &problem.layout;
    let last = layout.n_nodes - 1;
    let (k0, k1, sign_end) = if k < last { (k, k + 1, false) } else { (k - 1, k, true) };
    let x0 = xi.get_vec3(layout.xnode(k0));
    let x1 = xi.get_vec3(layout.xnode(k1));
    let v0 = xi.get_vec3(layout.vnode(k0));
    let v1 = xi.get_vec3(layout.vnode(k1));
    let mut out = Val3::default();
    if !sign_end {
        out.v = (x1 - x0) * (6.0 / (dt * dt)) - v0 * (4.0 / dt) - v1 * (2.0 / dt);
        out.triples.push((layout.xnode(k1), 6.0 / (dt * dt)));
        out.triples.push((layout.xnode(k0), -6.0 / (dt * dt)));
        out.triples.push((layout.vnode(k0), -4.0 / dt));
        out.triples.push((layout.vnode(k1), -2.0 / dt));
    } else {
        out.v = (x0 - x1) * (6.0 / (dt * dt)) + v0 * (2.0 / dt) + v1 * (4.0 / dt);
        out.triples.push((layout.xnode(k0), 6.0 / (dt * dt)));
        out.triples.push((layout.xnode(k1), -6.0 / (dt * dt)));
        out.triples.push((layout.vnode(k0), 2.0 / dt));
        out.triples.push((layout.vnode(k1), 4.0 / dt));
    }
    out
}
