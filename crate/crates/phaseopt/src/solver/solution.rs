//! Converged trajectory with samplers for every quantity the metrics and the CLI
//! consume: body states, feet, forces, node orientations and their zero-order holds.

use nalgebra::{Matrix3, Vector3};

use crate::dynamics::{
    stance_segment, LegDecomposition, LegSegment, PositionDecomposition,
};
use crate::nlp::{DecisionVector, Problem, ProblemMode};
use crate::phase::{PhaseKind, PhaseSchedule};
use crate::scenarios::Scenario;

/// A decision vector lifted into sampleable trajectory form.
#[derive(Debug, Clone)]
pub struct TrajectorySolution {
    pub scenario: Scenario,
    pub mode: ProblemMode,
    pub xi_values: Vec<f64>,
    pub durations: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    /// Proposed mode: the analytic contact-point decomposition.
    decomposition: Option<PositionDecomposition>,
    /// Baseline mode: Hermite nodes.
    xnodes: Vec<Vector3<f64>>,
    vnodes: Vec<Vector3<f64>>,
    /// Swing foot control points: [leg][swing cycle][control point].
    swing_points: Vec<Vec<Vec<Vector3<f64>>>>,
    /// Stance footholds: [leg][stance cycle].
    footholds: Vec<Vec<Vector3<f64>>>,
    /// Force control points: [leg][stance cycle][control point].
    force_points: Vec<Vec<Vec<Vector3<f64>>>>,
    pub rotations: Vec<Matrix3<f64>>,
    pub omegas: Vec<Vector3<f64>>,
    pub node_times: Vec<f64>,
    pub dt_node: f64,
}

impl TrajectorySolution {
    pub fn from_decision(problem: &Problem, xi: &DecisionVector) -> Self {
        let layout = &problem.layout;
        let scenario = &problem.scenario;
        let n_legs = layout.n_legs;
        let durations: Vec<Vec<f64>> = (0..n_legs)
            .map(|leg| (0..layout.n_phase).map(|q| xi.values[layout.duration(leg, q)]).collect())
            .collect();
        let sigma: Vec<Vec<f64>> = durations
            .iter()
            .map(|d| {
                let mut acc = vec![0.0];
                for &dt in d {
                    acc.push(acc.last().unwrap() + dt);
                }
                acc
            })
            .collect();
        let footholds: Vec<Vec<Vector3<f64>>> = (0..n_legs)
            .map(|leg| {
                (0..layout.n_stance)
                    .map(|d| xi.get_vec3(layout.foothold(leg, d)))
                    .collect()
            })
            .collect();
        let swing_points: Vec<Vec<Vec<Vector3<f64>>>> = (0..n_legs)
            .map(|leg| {
                (0..layout.n_swing)
                    .map(|d| {
                        (0..=layout.deg_feet)
                            .map(|k| xi.get_vec3(layout.swing_cp(leg, d, k)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let force_points: Vec<Vec<Vec<Vector3<f64>>>> = (0..n_legs)
            .map(|leg| {
                (0..layout.n_stance)
                    .map(|d| {
                        (0..=layout.deg_forces)
                            .map(|k| xi.get_vec3(layout.force_cp(leg, d, k)))
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let (decomposition, xnodes, vnodes) = match layout.mode {
            ProblemMode::Proposed => {
                let legs: Vec<LegDecomposition> = (0..n_legs)
                    .map(|leg| {
                        let segments = (0..layout.n_phase)
                            .map(|q| {
                                let chi = xi.get_vec3(layout.chi(leg, q));
                                let chi_dot = xi.get_vec3(layout.chi_dot(leg, q));
                                if q % 2 == 0 {
                                    let pts = force_points[leg][q / 2].clone();
                                    let seg = stance_segment(
                                        &pts,
                                        chi,
                                        chi_dot,
                                        durations[leg][q],
                                        scenario.robot.mass,
                                    )
                                    .expect("positive duration at a solution");
                                    LegSegment::Stance { position: seg, force_points: pts }
                                } else {
                                    LegSegment::Swing { chi, chi_dot }
                                }
                            })
                            .collect();
                        LegDecomposition { durations: durations[leg].clone(), segments }
                    })
                    .collect();
                (
                    Some(PositionDecomposition {
                        x_init: scenario.x_init,
                        v_init: scenario.xdot_init,
                        gravity: scenario.robot.gravity,
                        mass: scenario.robot.mass,
                        total: scenario.t_total,
                        legs,
                    }),
                    Vec::new(),
                    Vec::new(),
                )
            }
            ProblemMode::Baseline => {
                let xs = (0..layout.n_nodes).map(|k| xi.get_vec3(layout.xnode(k))).collect();
                let vs = (0..layout.n_nodes).map(|k| xi.get_vec3(layout.vnode(k))).collect();
                (None, xs, vs)
            }
        };

        let rotations = (0..layout.n_nodes)
            .map(|k| xi.charts[k] * crate::dynamics::exp_so3(&xi.get_vec3(layout.dtheta(k))))
            .collect();
        let omegas = (0..layout.n_nodes).map(|k| xi.get_vec3(layout.omega(k))).collect();

        Self {
            scenario: scenario.clone(),
            mode: layout.mode,
            xi_values: xi.values.clone(),
            durations,
            sigma,
            decomposition,
            xnodes,
            vnodes,
            swing_points,
            footholds,
            force_points,
            rotations,
            omegas,
            node_times: problem.node_times.clone(),
            dt_node: problem.dt_node,
        }
    }

    /// Body position, velocity, acceleration at `t`. Proposed mode evaluates the
    /// analytic decomposition with accelerations read from the force curves;
    /// baseline mode evaluates the Hermite spline.
    pub fn body(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match self.mode {
            ProblemMode::Proposed => {
                self.decomposition.as_ref().unwrap().sample_unchecked(t)
            }
            ProblemMode::Baseline => self.hermite(t),
        }
    }

    fn hermite(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let n = self.xnodes.len();
        let h = self.dt_node;
        let cell = ((t / h).floor() as isize).clamp(0, n as isize - 2) as usize;
        let tau = t - self.node_times[cell];
        let (x0, x1) = (self.xnodes[cell], self.xnodes[cell + 1]);
        let (v0, v1) = (self.vnodes[cell], self.vnodes[cell + 1]);
        let (h2, h3) = (h * h, h * h * h);
        let a0 = x0;
        let a1 = v0;
        let a2 = (x1 - x0) * (3.0 / h2) - v0 * (2.0 / h) - v1 * (1.0 / h);
        let a3 = (x0 - x1) * (2.0 / h3) + (v0 + v1) * (1.0 / h2);
        let pos = a0 + a1 * tau + a2 * (tau * tau) + a3 * (tau * tau * tau);
        let vel = a1 + a2 * (2.0 * tau) + a3 * (3.0 * tau * tau);
        let acc = a2 * 2.0 + a3 * (6.0 * tau);
        (pos, vel, acc)
    }

    fn segment_at(&self, leg: usize, t: f64) -> (usize, f64) {
        let sig = &self.sigma[leg];
        let n = self.durations[leg].len();
        for q in 0..n {
            if t < sig[q + 1] || q + 1 == n {
                return (q, sig[q]);
            }
        }
        unreachable!()
    }

    pub fn foot(&self, leg: usize, t: f64) -> Vector3<f64> {
        let (q, start) = self.segment_at(leg, t);
        if q % 2 == 0 {
            return self.footholds[leg][q / 2];
        }
        let d = q / 2;
        let s = (t - start) / self.durations[leg][q];
        let pts = &self.swing_points[leg][d];
        let n = pts.len() - 1;
        let mut acc = Vector3::zeros();
        for (k, p) in pts.iter().enumerate() {
            acc += p * crate::bezier::bernstein_unchecked(k, n, s);
        }
        acc
    }

    pub fn force(&self, leg: usize, t: f64) -> Vector3<f64> {
        let (q, start) = self.segment_at(leg, t);
        if q % 2 == 1 {
            return Vector3::zeros();
        }
        let d = q / 2;
        let s = (t - start) / self.durations[leg][q];
        let pts = &self.force_points[leg][d];
        let n = pts.len() - 1;
        let mut acc = Vector3::zeros();
        for (k, p) in pts.iter().enumerate() {
            acc += p * crate::bezier::bernstein_unchecked(k, n, s);
        }
        acc
    }

    pub fn in_stance(&self, leg: usize, t: f64) -> bool {
        self.segment_at(leg, t).0 % 2 == 0
    }

    /// Total stance time of a leg.
    pub fn stance_duration(&self, leg: usize) -> f64 {
        self.durations[leg]
            .iter()
            .step_by(2)
            .sum()
    }

    /// The leg schedules as a validated phase schedule.
    pub fn schedule(&self) -> PhaseSchedule {
        PhaseSchedule::new(self.durations.clone(), self.scenario.t_total)
            .expect("solution durations are positive")
    }

    /// Zero-order-hold rotation between nodes.
    pub fn rotation_zoh(&self, t: f64) -> Matrix3<f64> {
        self.rotations[self.hold_cell(t)]
    }

    /// Zero-order-hold angular velocity between nodes.
    pub fn omega_zoh(&self, t: f64) -> Vector3<f64> {
        self.omegas[self.hold_cell(t)]
    }

    /// Piecewise-constant angular acceleration `(omega_{k+1} - omega_k) / dt`.
    pub fn omega_dot(&self, t: f64) -> Vector3<f64> {
        let k = self.hold_cell(t);
        (self.omegas[k + 1] - self.omegas[k]) / self.dt_node
    }

    fn hold_cell(&self, t: f64) -> usize {
        let n = self.node_times.len();
        (((t / self.dt_node).floor() as isize).clamp(0, n as isize - 2)) as usize
    }

    /// Times where the trajectory is only piecewise smooth: phase boundaries of
    /// every leg, plus node times in baseline mode (Hermite acceleration kinks).
    pub fn smoothness_breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = vec![0.0, self.scenario.t_total];
        for sig in &self.sigma {
            b.extend(sig.iter().copied());
        }
        if self.mode == ProblemMode::Baseline {
            b.extend(self.node_times.iter().copied());
        }
        b.sort_by(f64::total_cmp);
        b.dedup_by(|a, c| (*a - *c).abs() < 1e-12);
        b
    }

    /// Contact flag per leg at `t` using the stance/swing classification.
    pub fn contact_flags(&self, t: f64) -> Vec<bool> {
        (0..self.durations.len()).map(|leg| self.in_stance(leg, t)).collect()
    }

    /// True when every leg's phase kind at `t` agrees with the schedule's locator
    /// (used as a sanity check in tests).
    pub fn classification_consistent(&self, t: f64) -> bool {
        let schedule = self.schedule();
        (0..self.durations.len()).all(|leg| {
            schedule
                .locate(leg, t.clamp(0.0, self.scenario.t_total))
                .map(|loc| (loc.kind == PhaseKind::Stance) == self.in_stance(leg, t))
                .unwrap_or(true)
        })
    }
}
