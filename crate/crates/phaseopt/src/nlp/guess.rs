//! Default initial guess: feet track the nominal stance under the reference body
//! motion, stance legs share the robot's weight equally, orientations sit on the
//! reference geodesic, and segment initial states come from rolling the guessed
//! forces forward so the continuity rows start satisfied.

use nalgebra::Vector3;

use crate::dynamics::{log_so3, stance_segment};

use super::{DecisionVector, Problem, ProblemMode};

pub fn initial_guess(problem: &Problem) -> DecisionVector {
    let layout = &problem.layout;
    let scenario = &problem.scenario;
    let robot = &scenario.robot;
    let mut xi = DecisionVector {
        values: vec![0.0; layout.n_vars],
        charts: problem.r_ref.clone(),
    };

    for leg in 0..layout.n_legs {
        for q in 0..layout.n_phase {
            xi.values[layout.duration(leg, q)] = scenario.initial_durations[leg][q];
        }
    }

    // Equal weight share, vertical, constant over each stance phase.
    let share = Vector3::new(0.0, 0.0, robot.mass * robot.gravity.z.abs() / layout.n_legs as f64);
    for leg in 0..layout.n_legs {
        for d in 0..layout.n_stance {
            for k in 0..=layout.deg_forces {
                xi.set_vec3(layout.force_cp(leg, d, k), share);
            }
        }
    }

    // Footholds: boundary feet exactly, interior feet under the reference pose at
    // the stance midpoint, snapped to the terrain.
    let body_ref = |t: f64| -> Vector3<f64> {
        scenario.x_init + (scenario.x_final - scenario.x_init) * (t / scenario.t_total)
    };
    for leg in 0..layout.n_legs {
        if layout.n_swing == 0 {
            xi.set_vec3(layout.foothold(leg, 0), scenario.p_init[leg]);
            continue;
        }
        let sigma: Vec<f64> = {
            let mut acc = vec![0.0];
            for q in 0..layout.n_phase {
                acc.push(acc[q] + scenario.initial_durations[leg][q]);
            }
            acc
        };
        let mut footholds = Vec::with_capacity(layout.n_stance);
        for d in 0..layout.n_stance {
            if d == 0 {
                footholds.push(scenario.p_init[leg]);
            } else if d == layout.n_stance - 1 {
                footholds.push(scenario.p_final[leg]);
            } else {
                let t_mid = 0.5 * (sigma[2 * d] + sigma[2 * d + 1]);
                let (_, r_ref) = scenario.reference_at(t_mid);
                let mut p = body_ref(t_mid) + r_ref * robot.nominal_foot[leg];
                p.z = scenario.terrain.height(p.x, p.y);
                footholds.push(p);
            }
        }
        let n = layout.deg_feet;
        for d in 0..layout.n_swing {
            let a = footholds[d];
            let b = footholds[d + 1];
            for k in 0..=n {
                let s = k as f64 / n as f64;
                let mut p = a + (b - a) * s;
                p.z += 0.08 * (std::f64::consts::PI * s).sin();
                if k == 0 {
                    p = a;
                } else if k == n {
                    p = b;
                }
                xi.set_vec3(layout.swing_cp(leg, d, k), p);
            }
        }
    }

    match layout.mode {
        ProblemMode::Proposed => {
            // Roll the guessed forces forward so every continuity row starts at zero.
            for leg in 0..layout.n_legs {
                let mut chi = Vector3::zeros();
                let mut chi_dot = Vector3::zeros();
                for q in 0..layout.n_phase {
                    xi.set_vec3(layout.chi(leg, q), chi);
                    xi.set_vec3(layout.chi_dot(leg, q), chi_dot);
                    let dt = scenario.initial_durations[leg][q];
                    if q % 2 == 0 {
                        let d = q / 2;
                        let pts: Vec<Vector3<f64>> = (0..=layout.deg_forces)
                            .map(|k| xi.get_vec3(layout.force_cp(leg, d, k)))
                            .collect();
                        let seg = stance_segment(&pts, chi, chi_dot, dt, robot.mass)
                            .expect("positive guess duration");
                        chi = seg.eval_unchecked(1.0);
                        chi_dot = seg.derivative().eval_unchecked(1.0);
                    } else {
                        chi += chi_dot * dt;
                    }
                }
            }
        }
        ProblemMode::Baseline => {
            let rate = (scenario.x_final - scenario.x_init) / scenario.t_total;
            let last = layout.n_nodes - 1;
            for k in 0..layout.n_nodes {
                xi.set_vec3(layout.xnode(k), body_ref(problem.node_times[k]));
                let v = if k == 0 {
                    scenario.xdot_init
                } else if k == last {
                    scenario.xdot_final
                } else {
                    rate
                };
                xi.set_vec3(layout.vnode(k), v);
            }
        }
    }

    // Orientation: charts already sit on the reference geodesic (delta-theta zero);
    // angular velocity at the constant geodesic rate, boundary values exact.
    let geo_rate = log_so3(&(scenario.r_init.transpose() * scenario.r_final))
        .expect("validated boundary rotations")
        / scenario.t_total;
    let last = layout.n_nodes - 1;
    for k in 0..layout.n_nodes {
        let w = if k == 0 {
            scenario.omega_init
        } else if k == last {
            scenario.omega_final
        } else {
            geo_rate
        };
        xi.set_vec3(layout.omega(k), w);
    }

    xi
}
