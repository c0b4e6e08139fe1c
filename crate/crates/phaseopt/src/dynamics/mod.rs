//! System dynamics: analytic translational dynamics by contact-point superposition
//! and discretized angular dynamics on SO(3).
//!
//! The linear translational ODE splits per contact point. Each leg contributes a
//! particular solution that starts from rest: stance phases integrate the leg's force
//! curve analytically (degree M+2 Bezier), swing phases drift affinely, and gravity
//! plus the initial conditions form the quadratic complementary solution. The body
//! acceleration is always read from the force curves, which makes the translational
//! identity `m xddot = m g + sum_i f_i` exact by construction.

pub mod so3;

pub use so3::{exp_so3, hat, log_so3, polar_orthonormalize, right_jacobian, right_jacobian_inv};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::bezier::{integrate_accel, BezierError, BezierSegment};
use crate::model::RobotModel;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("phase duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("time {t} outside horizon [0, {total}]")]
    TimeOutOfHorizon { t: f64, total: f64 },
    #[error(transparent)]
    Bezier(#[from] BezierError),
}

/// Complementary solution of the translational dynamics: ballistic motion from the
/// initial conditions under gravity.
pub fn gravity_solution(
    x_init: Vector3<f64>,
    v_init: Vector3<f64>,
    gravity: Vector3<f64>,
    t: f64,
) -> Vector3<f64> {
    x_init + v_init * t + gravity * (0.5 * t * t)
}

/// Swing-phase particular solution: affine drift from the segment's initial state.
pub fn swing_segment(
    chi: Vector3<f64>,
    chi_dot: Vector3<f64>,
    t: f64,
    segment_start: f64,
) -> Vector3<f64> {
    chi + chi_dot * (t - segment_start)
}

/// Stance-phase particular solution: the force control points integrated twice with
/// mass scaling, anchored at the segment's initial state.
pub fn stance_segment(
    force_points: &[Vector3<f64>],
    chi: Vector3<f64>,
    chi_dot: Vector3<f64>,
    duration: f64,
    mass: f64,
) -> Result<BezierSegment, DynamicsError> {
    if !(duration > 0.0) {
        return Err(DynamicsError::NonPositiveDuration(duration));
    }
    Ok(integrate_accel(force_points, mass, chi, chi_dot, duration)?)
}

/// One leg's phase-wise particular solution.
#[derive(Debug, Clone)]
pub enum LegSegment {
    Stance {
        /// Position segment of degree M+2 (already integrated).
        position: BezierSegment,
        /// The force control points that produced it, kept for exact accelerations.
        force_points: Vec<Vector3<f64>>,
    },
    Swing { chi: Vector3<f64>, chi_dot: Vector3<f64> },
}

/// Per-leg decomposition: alternating segments, stance first.
#[derive(Debug, Clone)]
pub struct LegDecomposition {
    pub durations: Vec<f64>,
    pub segments: Vec<LegSegment>,
}

impl LegDecomposition {
    /// Index of the segment claiming `t`, with the first/last segment extended
    /// beyond the leg's own span, and the local segment start time.
    fn segment_at(&self, t: f64) -> (usize, f64) {
        let mut start = 0.0;
        for (q, &dt) in self.durations.iter().enumerate() {
            let stop = start + dt;
            if t < stop || q + 1 == self.durations.len() {
                return (q, start);
            }
            start = stop;
        }
        unreachable!("last segment extends to infinity");
    }

    fn position_at(&self, t: f64) -> Vector3<f64> {
        let (q, start) = self.segment_at(t);
        match &self.segments[q] {
            LegSegment::Stance { position, .. } => {
                position.eval_unchecked((t - start) / self.durations[q])
            }
            LegSegment::Swing { chi, chi_dot } => swing_segment(*chi, *chi_dot, t, start),
        }
    }

    fn velocity_at(&self, t: f64) -> Vector3<f64> {
        let (q, start) = self.segment_at(t);
        match &self.segments[q] {
            LegSegment::Stance { position, .. } => position
                .derivative()
                .eval_unchecked((t - start) / self.durations[q]),
            LegSegment::Swing { chi_dot, .. } => *chi_dot,
        }
    }

    /// Force curve sample; zero during swing, extended polynomially at the ends.
    pub fn force_at(&self, t: f64) -> Vector3<f64> {
        let (q, start) = self.segment_at(t);
        match &self.segments[q] {
            LegSegment::Stance { force_points, .. } => {
                let s = (t - start) / self.durations[q];
                let n = force_points.len() - 1;
                let mut f = Vector3::zeros();
                for (k, p) in force_points.iter().enumerate() {
                    f += p * crate::bezier::bernstein_unchecked(k, n, s);
                }
                f
            }
            LegSegment::Swing { .. } => Vector3::zeros(),
        }
    }
}

/// Contact-point decomposition of the body position: gravity polynomial plus one
/// particular solution per leg.
#[derive(Debug, Clone)]
pub struct PositionDecomposition {
    pub x_init: Vector3<f64>,
    pub v_init: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub mass: f64,
    pub total: f64,
    pub legs: Vec<LegDecomposition>,
}

impl PositionDecomposition {
    /// Body position, velocity and acceleration at `t`.
    ///
    /// The acceleration is evaluated from the force curves through the translational
    /// dynamics rather than by differentiating the position segments.
    pub fn sample(&self, t: f64) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>), DynamicsError> {
        if !(0.0..=self.total).contains(&t) || !t.is_finite() {
            return Err(DynamicsError::TimeOutOfHorizon { t, total: self.total });
        }
        Ok(self.sample_unchecked(t))
    }

    pub fn sample_unchecked(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let mut x = gravity_solution(self.x_init, self.v_init, self.gravity, t);
        let mut v = self.v_init + self.gravity * t;
        let mut a = self.gravity;
        for leg in &self.legs {
            x += leg.position_at(t);
            v += leg.velocity_at(t);
            a += leg.force_at(t) / self.mass;
        }
        (x, v, a)
    }

    pub fn force_at(&self, leg: usize, t: f64) -> Vector3<f64> {
        self.legs[leg].force_at(t)
    }
}

/// Discretized orientation state at one grid node.
#[derive(Debug, Clone)]
pub struct AngularNodeState {
    pub rotation: Matrix3<f64>,
    pub omega: Vector3<f64>,
    pub t: f64,
}

impl AngularNodeState {
    /// Orthonormality defect `|R^T R - I|` (spec demands < 1e-9 along rollouts).
    pub fn orthonormality_defect(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }
}

/// World-frame contact torque about the body position.
pub fn contact_torque(
    feet: &[Vector3<f64>],
    forces: &[Vector3<f64>],
    x: &Vector3<f64>,
) -> Vector3<f64> {
    feet.iter()
        .zip(forces)
        .map(|(p, f)| (p - x).cross(f))
        .sum()
}

/// One explicit step of the discretized angular dynamics:
/// `R_next = R Exp(omega dt)`, `omega_next = omega + I^-1 (R^T tau - omega x I omega) dt`.
pub fn angular_step(
    rotation: &Matrix3<f64>,
    omega: &Vector3<f64>,
    feet: &[Vector3<f64>],
    forces: &[Vector3<f64>],
    x: &Vector3<f64>,
    model: &RobotModel,
    dt: f64,
) -> (Matrix3<f64>, Vector3<f64>) {
    let tau_world = contact_torque(feet, forces, x);
    let body_torque = rotation.transpose() * tau_world;
    let gyro = omega.cross(&(model.inertia * omega));
    let omega_next = omega + model.inertia_inv * (body_torque - gyro) * dt;
    let rotation_next = rotation * exp_so3(&(omega * dt));
    (rotation_next, omega_next)
}

/// Chain `n` angular steps under a caller-supplied torque profile, re-orthonormalizing
/// the rotation by polar projection every 100 steps to control drift.
pub fn angular_rollout(
    initial: &AngularNodeState,
    model: &RobotModel,
    dt: f64,
    n: usize,
    mut body_torque: impl FnMut(usize) -> Vector3<f64>,
) -> AngularNodeState {
    let mut r = initial.rotation;
    let mut w = initial.omega;
    for k in 0..n {
        let tau_b = body_torque(k);
        let gyro = w.cross(&(model.inertia * w));
        let w_next = w + model.inertia_inv * (tau_b - gyro) * dt;
        r *= exp_so3(&(w * dt));
        w = w_next;
        if (k + 1) % 100 == 0 {
            r = polar_orthonormalize(&r);
        }
    }
    AngularNodeState { rotation: r, omega: w, t: initial.t + n as f64 * dt }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const G: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

    fn quadruped() -> RobotModel {
        RobotModel::default_quadruped()
    }

    #[test]
    fn gravity_solution_half_g_t_squared() {
        let x = gravity_solution(Vector3::zeros(), Vector3::zeros(), G, 1.0);
        assert!((x - Vector3::new(0.0, 0.0, -4.905)).norm() < 1e-12);
        let x0 = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(gravity_solution(x0, Vector3::new(1.0, 0.0, 0.0), G, 0.0), x0);
    }

    #[test]
    fn gravity_solution_with_initial_velocity() {
        let x = gravity_solution(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), G, 2.0);
        assert!((x - Vector3::new(2.0, 0.0, -19.62)).norm() < 1e-12);
    }

    #[test]
    fn swing_segment_affine() {
        let chi = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(swing_segment(chi, Vector3::zeros(), 5.0, 1.0), chi);
        let p = swing_segment(chi, Vector3::new(0.0, 1.0, 0.0), 1.5, 1.0);
        assert!((p - Vector3::new(1.0, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn stance_segment_zero_force_reduces_to_affine() {
        let chi = Vector3::new(0.2, -0.1, 0.4);
        let chi_dot = Vector3::new(1.0, 0.5, -0.2);
        let seg = stance_segment(&[Vector3::zeros(); 5], chi, chi_dot, 0.6, 43.0).unwrap();
        for i in 0..=10 {
            let s = i as f64 / 10.0;
            let expected = chi + chi_dot * (s * 0.6);
            assert!((seg.eval(s).unwrap() - expected).norm() < 1e-11);
        }
    }

    #[test]
    fn stance_segment_constant_force_endpoint() {
        let mass = 43.0;
        let g_mag = 9.81;
        let dt = 0.8;
        let seg = stance_segment(
            &[Vector3::new(0.0, 0.0, mass * g_mag); 5],
            Vector3::zeros(),
            Vector3::zeros(),
            dt,
            mass,
        )
        .unwrap();
        let end = seg.eval(1.0).unwrap();
        assert!((end.z - g_mag * dt * dt / 2.0).abs() < 1e-10);
    }

    #[test]
    fn stance_segment_rejects_bad_duration() {
        assert!(stance_segment(&[Vector3::zeros()], Vector3::zeros(), Vector3::zeros(), 0.0, 1.0)
            .is_err());
    }

    #[test]
    fn stance_second_derivative_reproduces_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mass = 31.0;
        let pts: Vec<Vector3<f64>> = (0..5)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-200.0..200.0),
                    rng.random_range(-200.0..200.0),
                    rng.random_range(0.0..400.0),
                )
            })
            .collect();
        let seg = stance_segment(&pts, Vector3::zeros(), Vector3::zeros(), 0.45, mass).unwrap();
        let accel = seg.derivative().derivative();
        for (k, p) in accel.control_points().iter().enumerate() {
            assert!((p * mass - pts[k]).norm() < 1e-8 * (1.0 + pts[k].norm()));
        }
    }

    fn ballistic_decomposition(legs: Vec<LegDecomposition>, mass: f64) -> PositionDecomposition {
        PositionDecomposition {
            x_init: Vector3::new(0.0, 0.0, 0.5),
            v_init: Vector3::new(0.3, 0.0, 0.0),
            gravity: G,
            mass,
            total: 1.0,
            legs,
        }
    }

    fn random_leg(rng: &mut ChaCha8Rng, mass: f64, durations: &[f64]) -> LegDecomposition {
        // Chain segments so that continuity holds exactly, starting from rest.
        let mut chi = Vector3::zeros();
        let mut chi_dot = Vector3::zeros();
        let mut segments = Vec::new();
        for (q, &dt) in durations.iter().enumerate() {
            if q % 2 == 0 {
                let pts: Vec<Vector3<f64>> = (0..4)
                    .map(|_| {
                        Vector3::new(
                            rng.random_range(-80.0..80.0),
                            rng.random_range(-80.0..80.0),
                            rng.random_range(0.0..300.0),
                        )
                    })
                    .collect();
                let seg = stance_segment(&pts, chi, chi_dot, dt, mass).unwrap();
                chi = seg.eval(1.0).unwrap();
                chi_dot = seg.derivative().eval(1.0).unwrap();
                segments.push(LegSegment::Stance { position: seg, force_points: pts });
            } else {
                segments.push(LegSegment::Swing { chi, chi_dot });
                chi += chi_dot * dt;
            }
        }
        LegDecomposition { durations: durations.to_vec(), segments }
    }

    #[test]
    fn body_position_pure_ballistic_when_forceless() {
        let d = ballistic_decomposition(vec![], 43.0);
        let (x, v, a) = d.sample(0.7).unwrap();
        assert!((x - gravity_solution(d.x_init, d.v_init, G, 0.7)).norm() < 1e-14);
        assert!((v - (d.v_init + G * 0.7)).norm() < 1e-14);
        assert!((a - G).norm() < 1e-14);
        let (x0, _, _) = d.sample(0.0).unwrap();
        assert!((x0 - d.x_init).norm() < 1e-14);
    }

    #[test]
    fn translational_identity_holds_at_random_times() {
        // Defining identity of the decomposition: m xddot - m g - sum f = 0, checked
        // against an independent numerical second difference of the sampled x(t).
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mass = 43.0;
        let durations = vec![0.3, 0.2, 0.25, 0.15, 0.1];
        let legs: Vec<_> = (0..4).map(|_| random_leg(&mut rng, mass, &durations)).collect();
        let d = PositionDecomposition {
            x_init: Vector3::new(0.0, 0.0, 0.5),
            v_init: Vector3::zeros(),
            gravity: G,
            mass,
            total: 1.0,
            legs,
        };
        let boundaries: Vec<f64> = {
            let mut b = vec![0.3, 0.5, 0.75, 0.9];
            b.push(0.0);
            b.push(1.0);
            b
        };
        let h = 2e-4;
        let mut checked = 0;
        for _ in 0..300 {
            let t = rng.random_range(0.0..1.0);
            if boundaries.iter().any(|&b| (t - b).abs() < 3.0 * h) {
                continue;
            }
            let (_, _, a) = d.sample(t).unwrap();
            let force_sum: Vector3<f64> = (0..4).map(|i| d.force_at(i, t)).sum();
            let residual = a * mass - G * mass - force_sum;
            assert!(residual.norm() < 1e-8, "analytic residual {}", residual.norm());
            // Numerical second difference oracle on x(t).
            let xm = d.sample_unchecked(t - h).0;
            let x0 = d.sample_unchecked(t).0;
            let xp = d.sample_unchecked(t + h).0;
            let a_fd = (xp - x0 * 2.0 + xm) / (h * h);
            // The cross-check tolerance is dominated by differencing truncation,
            // h^2/12 * x'''' with force curvatures up to ~1e5 N/s^2 here.
            assert!(
                (a_fd * mass - G * mass - force_sum).norm() < 2e-2,
                "fd residual {}",
                (a_fd * mass - G * mass - force_sum).norm()
            );
            checked += 1;
        }
        assert!(checked > 250);
    }

    #[test]
    fn superposition_of_single_leg_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mass = 20.0;
        let durations = vec![0.4, 0.3, 0.3];
        let leg_a = random_leg(&mut rng, mass, &durations);
        let leg_b = random_leg(&mut rng, mass, &durations);
        let both = ballistic_decomposition(vec![leg_a.clone(), leg_b.clone()], mass);
        let only_a = ballistic_decomposition(vec![leg_a], mass);
        let only_b = ballistic_decomposition(vec![leg_b], mass);
        let empty = ballistic_decomposition(vec![], mass);
        for i in 0..50 {
            let t = i as f64 / 49.0;
            let x_both = both.sample_unchecked(t).0;
            let x_sum = only_a.sample_unchecked(t).0 + only_b.sample_unchecked(t).0
                - empty.sample_unchecked(t).0;
            assert!((x_both - x_sum).norm() < 1e-12);
        }
    }

    #[test]
    fn sample_rejects_outside_horizon() {
        let d = ballistic_decomposition(vec![], 1.0);
        assert!(d.sample(-0.1).is_err());
        assert!(d.sample(1.1).is_err());
    }

    #[test]
    fn angular_step_at_rest_is_identity() {
        let model = quadruped();
        let (r, w) = angular_step(
            &Matrix3::identity(),
            &Vector3::zeros(),
            &[],
            &[],
            &Vector3::zeros(),
            &model,
            0.05,
        );
        assert!((r - Matrix3::identity()).norm() < 1e-15);
        assert!(w.norm() < 1e-15);
    }

    #[test]
    fn angular_step_single_axis_spin() {
        // Diagonal inertia, spin about body z, no torque: omega is preserved (the
        // gyroscopic term vanishes) and R advances by omega*dt about z.
        let model = quadruped();
        let w0 = Vector3::new(0.0, 0.0, 1.0);
        let (r, w) = angular_step(
            &Matrix3::identity(),
            &w0,
            &[],
            &[],
            &Vector3::zeros(),
            &model,
            0.1,
        );
        assert!((w - w0).norm() < 1e-14);
        assert!((r - exp_so3(&Vector3::new(0.0, 0.0, 0.1))).norm() < 1e-14);
    }

    #[test]
    fn forces_through_com_leave_only_gyroscopic_term() {
        let model = quadruped();
        let x = Vector3::new(0.1, 0.2, 0.5);
        // f parallel to the moment arm: (p - x) x f = 0.
        let arm = Vector3::new(0.3, -0.2, -0.5);
        let feet = vec![x + arm];
        let forces = vec![arm * 50.0];
        let w0 = Vector3::new(0.4, -0.3, 0.2);
        let dt = 0.07;
        let (_, w) = angular_step(&Matrix3::identity(), &w0, &feet, &forces, &x, &model, dt);
        let gyro_only = w0 - model.inertia_inv * w0.cross(&(model.inertia * w0)) * dt;
        assert!((w - gyro_only).norm() < 1e-12);
    }

    #[test]
    fn rollout_preserves_orthonormality() {
        let model = quadruped();
        let initial = AngularNodeState {
            rotation: exp_so3(&Vector3::new(0.2, -0.1, 0.7)),
            omega: Vector3::new(0.5, 0.8, -0.4),
            t: 0.0,
        };
        let final_state = angular_rollout(&initial, &model, 0.01, 1000, |k| {
            Vector3::new((k as f64 * 0.01).sin(), 0.2, -0.1) * 2.0
        });
        assert!(final_state.orthonormality_defect() < 1e-9);
        assert!((final_state.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn time_grid_convergence_first_order() {
        // Halving dt should roughly halve the global integration error on a smooth
        // torque profile (explicit Euler in omega).
        let model = quadruped();
        let horizon = 1.0;
        let torque = |t: f64| Vector3::new((2.0 * t).sin(), (3.0 * t).cos(), 0.5 * t) * 3.0;
        let run = |steps: usize| {
            let dt = horizon / steps as f64;
            let initial = AngularNodeState {
                rotation: Matrix3::identity(),
                omega: Vector3::new(0.3, -0.2, 0.5),
                t: 0.0,
            };
            angular_rollout(&initial, &model, dt, steps, |k| torque(k as f64 * dt))
        };
        let reference = run(1 << 14);
        let coarse = run(200);
        let fine = run(400);
        let err_coarse = (coarse.omega - reference.omega).norm()
            + log_so3(&(reference.rotation.transpose() * coarse.rotation))
                .unwrap()
                .norm();
        let err_fine = (fine.omega - reference.omega).norm()
            + log_so3(&(reference.rotation.transpose() * fine.rotation))
                .unwrap()
                .norm();
        let ratio = err_coarse / err_fine;
        assert!(
            (1.7..=2.3).contains(&ratio),
            "convergence ratio {ratio} outside [1.7, 2.3]"
        );
    }
}
