//! Robot model constants, analytic terrain geometry and friction-pyramid
//! constraint generation.
//!
//! Terrains are analytic height functions, not meshes: the scenario terrains are
//! piecewise planar and need exact surface frames. Height discontinuities follow a
//! half-open convention (the raised region owns its left edge), mirroring the phase
//! intervals.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("robot model invalid: {0}")]
    InvalidRobot(String),
    #[error("friction frame is not orthonormal (defect {0:.3e})")]
    NonOrthonormalFrame(f64),
    #[error("friction parameters must be positive (mu={mu}, f_max={f_max})")]
    BadFrictionParams { mu: f64, f_max: f64 },
}

/// Single-rigid-body robot description with point feet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotModel {
    pub mass: f64,
    /// Body-frame inertia, symmetric positive definite.
    pub inertia: Matrix3<f64>,
    #[serde(skip, default = "Matrix3::zeros")]
    pub inertia_inv: Matrix3<f64>,
    /// Hip positions in the body frame, one per leg.
    pub hip_offsets: Vec<Vector3<f64>>,
    /// Nominal foot positions in the body frame, one per leg.
    pub nominal_foot: Vec<Vector3<f64>>,
    /// Maximum hip-to-foot distance.
    pub l_leg: f64,
    pub n_legs: usize,
    /// Maximum normal contact force.
    pub f_n_max: f64,
    pub gravity: Vector3<f64>,
}

impl RobotModel {
    /// Default quadruped used by the scenario generators. All values are
    /// configurable; nothing downstream depends on these exact numbers.
    pub fn default_quadruped() -> Self {
        let hips = vec![
            Vector3::new(0.36, -0.21, 0.0),  // front right
            Vector3::new(0.36, 0.21, 0.0),   // front left
            Vector3::new(-0.36, -0.21, 0.0), // rear right
            Vector3::new(-0.36, 0.21, 0.0),  // rear left
        ];
        let feet = hips.iter().map(|h| h + Vector3::new(0.0, 0.0, -0.51)).collect();
        let mut m = Self {
            mass: 43.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.41, 2.1, 2.1)),
            inertia_inv: Matrix3::zeros(),
            hip_offsets: hips,
            nominal_foot: feet,
            l_leg: 0.55,
            n_legs: 4,
            f_n_max: 500.0,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        };
        m.inertia_inv = m.inertia.try_inverse().unwrap();
        m
    }

    /// Validate invariants and fill in the cached inertia inverse.
    pub fn validate(mut self) -> Result<Self, ModelError> {
        let mut issues = Vec::new();
        if !(self.mass > 0.0) {
            issues.push(format!("mass must be positive, got {}", self.mass));
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-9 {
            issues.push("inertia matrix is not symmetric".to_string());
        } else {
            let eig = self.inertia.symmetric_eigenvalues();
            if eig.iter().any(|&e| e <= 0.0) {
                issues.push(format!("inertia eigenvalues not all positive: {eig:?}"));
            }
        }
        if self.hip_offsets.len() != self.n_legs || self.nominal_foot.len() != self.n_legs {
            issues.push(format!(
                "expected {} hips and nominal feet, got {} and {}",
                self.n_legs,
                self.hip_offsets.len(),
                self.nominal_foot.len()
            ));
        } else {
            for i in 0..self.n_legs {
                let reach = (self.nominal_foot[i] - self.hip_offsets[i]).norm();
                if self.l_leg <= reach {
                    issues.push(format!(
                        "leg {i}: l_leg {} must exceed nominal reach {reach}",
                        self.l_leg
                    ));
                }
            }
        }
        if !(self.f_n_max > 0.0) {
            issues.push(format!("f_n_max must be positive, got {}", self.f_n_max));
        }
        if !issues.is_empty() {
            return Err(ModelError::InvalidRobot(issues.join("; ")));
        }
        self.inertia_inv = self
            .inertia
            .try_inverse()
            .ok_or_else(|| ModelError::InvalidRobot("inertia not invertible".into()))?;
        Ok(self)
    }
}

/// Terrain shape selector with analytic height functions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TerrainKind {
    Plane,
    /// A single step of `step_height` for `x >= step_start`.
    Block { step_height: f64, step_start: f64 },
    /// `count` risers of height `rise` every `run` meters starting at `start`.
    Stairs { rise: f64, run: f64, start: f64, count: usize },
    /// Flat floor for |y| <= half_gap, 45-degree-style walls outside rising with
    /// lateral distance: left wall on +y, right wall on -y.
    Chimney { half_gap: f64, incline: f64 },
    /// Bilinearly interpolated height samples on a regular grid.
    HeightField {
        origin: [f64; 2],
        spacing: f64,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
}

/// Terrain geometry plus the effective (pyramid) friction coefficient.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Terrain {
    #[serde(flatten)]
    pub kind: TerrainKind,
    /// Effective friction coefficient mu_tilde = mu / sqrt(2).
    pub friction: f64,
}

/// Orthonormal surface frame at a query point.
#[derive(Debug, Clone, Copy)]
pub struct TerrainFrame {
    pub normal: Vector3<f64>,
    pub tangent1: Vector3<f64>,
    pub tangent2: Vector3<f64>,
    /// Set when the query sat exactly on a height discontinuity and the half-open
    /// convention picked the side.
    pub on_discontinuity: bool,
}

const EDGE_EPS: f64 = 1e-12;

impl Terrain {
    pub fn new(kind: TerrainKind, friction: f64) -> Self {
        Self { kind, friction }
    }

    /// Terrain height at `(x, y)`.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match &self.kind {
            TerrainKind::Plane => 0.0,
            TerrainKind::Block { step_height, step_start } => {
                if x >= *step_start {
                    *step_height
                } else {
                    0.0
                }
            }
            TerrainKind::Stairs { rise, run, start, count } => {
                if x < *start {
                    0.0
                } else {
                    let steps = ((x - start) / run).floor() as usize + 1;
                    steps.min(*count) as f64 * rise
                }
            }
            TerrainKind::Chimney { half_gap, incline } => {
                let lateral = y.abs() - half_gap;
                if lateral <= 0.0 {
                    0.0
                } else {
                    lateral * incline.tan()
                }
            }
            TerrainKind::HeightField { origin, spacing, rows, cols, data } => {
                let fx = ((x - origin[0]) / spacing).clamp(0.0, (*cols - 1) as f64 - 1e-9);
                let fy = ((y - origin[1]) / spacing).clamp(0.0, (*rows - 1) as f64 - 1e-9);
                let (i, j) = (fy.floor() as usize, fx.floor() as usize);
                let (ty, tx) = (fy - i as f64, fx - j as f64);
                let at = |r: usize, c: usize| data[r * cols + c];
                at(i, j) * (1.0 - tx) * (1.0 - ty)
                    + at(i, j + 1) * tx * (1.0 - ty)
                    + at(i + 1, j) * (1.0 - tx) * ty
                    + at(i + 1, j + 1) * tx * ty
            }
        }
    }

    /// Horizontal gradient of the height function (zero on flat pieces, the owning
    /// side's slope at discontinuities).
    pub fn height_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match &self.kind {
            TerrainKind::Plane | TerrainKind::Block { .. } | TerrainKind::Stairs { .. } => {
                (0.0, 0.0)
            }
            TerrainKind::Chimney { half_gap, incline } => {
                if y.abs() <= *half_gap {
                    (0.0, 0.0)
                } else {
                    (0.0, y.signum() * incline.tan())
                }
            }
            TerrainKind::HeightField { .. } => {
                let h = 1e-6;
                (
                    (self.height(x + h, y) - self.height(x - h, y)) / (2.0 * h),
                    (self.height(x, y + h) - self.height(x, y - h)) / (2.0 * h),
                )
            }
        }
    }

    /// Orthonormal right-handed surface frame `(n, t1, t2)` at `(x, y)`.
    pub fn frame(&self, x: f64, y: f64) -> TerrainFrame {
        let on_discontinuity = match &self.kind {
            TerrainKind::Block { step_start, .. } => (x - step_start).abs() < EDGE_EPS,
            TerrainKind::Stairs { run, start, count, .. } => (0..*count)
                .any(|k| (x - (start + k as f64 * run)).abs() < EDGE_EPS),
            TerrainKind::Chimney { half_gap, .. } => (y.abs() - half_gap).abs() < EDGE_EPS,
            _ => false,
        };
        let (hx, hy) = self.height_gradient(x, y);
        let normal = Vector3::new(-hx, -hy, 1.0).normalize();
        // Project world x onto the surface for t1; fall back to world y for a
        // vertical-x pathology (cannot occur for graphs z = h(x, y)).
        let xw = Vector3::new(1.0, 0.0, 0.0);
        let t1 = (xw - normal * normal.dot(&xw)).normalize();
        let t2 = normal.cross(&t1);
        TerrainFrame { normal, tangent1: t1, tangent2: t2, on_discontinuity }
    }
}

/// Linearized friction cone: six halfspaces `row . f <= offset` covering
/// `|t1.f| <= mu n.f`, `|t2.f| <= mu n.f` and `0 <= n.f <= f_max`.
///
/// The unilateral lower bound is implied by the tangential rows whenever `mu > 0`
/// but is emitted explicitly.
#[derive(Debug, Clone)]
pub struct FrictionPyramid {
    pub rows: Vec<(Vector3<f64>, f64)>,
    pub frame: TerrainFrame,
}

impl FrictionPyramid {
    pub fn contains(&self, f: &Vector3<f64>, tol: f64) -> bool {
        self.rows.iter().all(|(a, b)| a.dot(f) <= b + tol)
    }

    /// Worst-case (most violated) row value `max_j row_j . f - offset_j`.
    pub fn max_violation(&self, f: &Vector3<f64>) -> f64 {
        self.rows
            .iter()
            .map(|(a, b)| a.dot(f) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Build the friction pyramid for a surface frame.
pub fn pyramid(frame: &TerrainFrame, mu: f64, f_max: f64) -> Result<FrictionPyramid, ModelError> {
    if !(mu > 0.0) || !(f_max > 0.0) {
        return Err(ModelError::BadFrictionParams { mu, f_max });
    }
    let n = frame.normal;
    let t1 = frame.tangent1;
    let t2 = frame.tangent2;
    let defect = (n.norm() - 1.0).abs().max((t1.norm() - 1.0).abs()).max((t2.norm() - 1.0).abs())
        + n.dot(&t1).abs()
        + n.dot(&t2).abs()
        + t1.dot(&t2).abs();
    if defect > 1e-9 {
        return Err(ModelError::NonOrthonormalFrame(defect));
    }
    Ok(FrictionPyramid {
        rows: vec![
            (t1 - n * mu, 0.0),
            (-t1 - n * mu, 0.0),
            (t2 - n * mu, 0.0),
            (-t2 - n * mu, 0.0),
            (-n, 0.0),
            (n, f_max),
        ],
        frame: *frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::exp_so3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn flat() -> Terrain {
        Terrain::new(TerrainKind::Plane, 0.6)
    }

    #[test]
    fn plane_height_and_frame() {
        let t = flat();
        assert_eq!(t.height(3.2, -1.0), 0.0);
        let f = t.frame(0.0, 0.0);
        assert!((f.normal - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert!((f.tangent1 - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((f.tangent2 - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!(!f.on_discontinuity);
    }

    #[test]
    fn block_step_height() {
        let t = Terrain::new(TerrainKind::Block { step_height: 0.5, step_start: 1.5 }, 0.8);
        assert_eq!(t.height(2.0, 0.0), 0.5);
        assert_eq!(t.height(1.0, 0.0), 0.0);
        assert_eq!(t.height(1.5, 3.0), 0.5); // half-open: raised side owns the edge
        assert!(t.frame(1.5, 0.0).on_discontinuity);
        assert!(!t.frame(1.51, 0.0).on_discontinuity);
    }

    #[test]
    fn stairs_two_risers() {
        let t = Terrain::new(
            TerrainKind::Stairs { rise: 0.2, run: 1.0, start: 1.0, count: 2 },
            0.8,
        );
        assert_eq!(t.height(0.5, 0.0), 0.0);
        assert_eq!(t.height(1.5, 0.0), 0.2);
        assert_eq!(t.height(2.5, 0.0), 0.4);
        assert_eq!(t.height(5.0, 0.0), 0.4);
        let f = t.frame(1.5, 0.0);
        assert!((f.normal - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn chimney_wall_frames() {
        let t = Terrain::new(
            TerrainKind::Chimney { half_gap: 0.15, incline: std::f64::consts::FRAC_PI_4 },
            1.0,
        );
        assert_eq!(t.height(0.0, 0.0), 0.0);
        assert!((t.height(0.0, 0.35) - 0.2).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let left = t.frame(0.0, 0.4);
        assert!((left.normal - Vector3::new(0.0, -s, s)).norm() < 1e-12);
        let right = t.frame(0.0, -0.4);
        assert!((right.normal - Vector3::new(0.0, s, s)).norm() < 1e-12);
    }

    #[test]
    fn heightfield_bilinear() {
        let t = Terrain::new(
            TerrainKind::HeightField {
                origin: [0.0, 0.0],
                spacing: 1.0,
                rows: 2,
                cols: 2,
                data: vec![0.0, 1.0, 0.0, 1.0],
            },
            0.7,
        );
        assert!((t.height(0.5, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn frames_are_orthonormal_right_handed() {
        let terrains = [
            flat(),
            Terrain::new(TerrainKind::Block { step_height: 0.5, step_start: 1.5 }, 0.8),
            Terrain::new(TerrainKind::Chimney { half_gap: 0.15, incline: 0.7 }, 1.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for t in &terrains {
            for _ in 0..100 {
                let f = t.frame(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                assert!((f.normal.norm() - 1.0).abs() < 1e-12);
                assert!((f.tangent1.norm() - 1.0).abs() < 1e-12);
                assert!((f.tangent1.cross(&f.tangent2) - f.normal).norm() < 1e-12);
                assert!(f.normal.z > 0.0);
            }
        }
    }

    #[test]
    fn pyramid_basic_feasibility() {
        let p = pyramid(&flat().frame(0.0, 0.0), 0.6, 500.0).unwrap();
        assert!(p.contains(&Vector3::new(0.0, 0.0, 100.0), 0.0));
        assert!(!p.contains(&Vector3::new(60.1, 0.0, 100.0), 0.0));
        assert!(p.contains(&Vector3::new(59.9, 0.0, 100.0), 0.0));
        assert!(!p.contains(&Vector3::new(0.0, 0.0, -1.0), 0.0));
        assert!(!p.contains(&Vector3::new(0.0, 0.0, 501.0), 0.0));
        assert!(p.contains(&Vector3::zeros(), 0.0));
    }

    #[test]
    fn pyramid_rejects_bad_inputs() {
        let mut frame = flat().frame(0.0, 0.0);
        assert!(pyramid(&frame, 0.0, 100.0).is_err());
        frame.tangent1 = Vector3::new(1.0, 0.5, 0.0);
        assert!(pyramid(&frame, 0.5, 100.0).is_err());
    }

    #[test]
    fn pyramid_tilt_covariance() {
        // Rotating the frame and the force together preserves feasibility exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let base = flat().frame(0.0, 0.0);
        let p0 = pyramid(&base, 0.6, 500.0).unwrap();
        for _ in 0..200 {
            let rot = exp_so3(&Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let rotated = TerrainFrame {
                normal: rot * base.normal,
                tangent1: rot * base.tangent1,
                tangent2: rot * base.tangent2,
                on_discontinuity: false,
            };
            let p1 = pyramid(&rotated, 0.6, 500.0).unwrap();
            let f = Vector3::new(
                rng.random_range(-120.0..120.0),
                rng.random_range(-120.0..120.0),
                rng.random_range(-50.0..400.0),
            );
            assert_eq!(p0.contains(&f, 1e-12), p1.contains(&(rot * f), 1e-12));
        }
    }

    #[test]
    fn pyramid_inside_second_order_cone() {
        // Every pyramid-feasible force satisfies the cone with mu = mu_tilde*sqrt(2).
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mu_tilde = 0.6;
        let p = pyramid(&flat().frame(0.0, 0.0), mu_tilde, 500.0).unwrap();
        let mu = mu_tilde * 2.0_f64.sqrt();
        let mut inside = 0;
        let mut tried = 0;
        while inside < 10_000 && tried < 2_000_000 {
            tried += 1;
            let f = Vector3::new(
                rng.random_range(-300.0..300.0),
                rng.random_range(-300.0..300.0),
                rng.random_range(0.0..500.0),
            );
            if !p.contains(&f, 0.0) {
                continue;
            }
            inside += 1;
            let n = Vector3::new(0.0, 0.0, 1.0);
            let tangential = (Matrix3::identity() - n * n.transpose()) * f;
            assert!(tangential.norm() <= mu * n.dot(&f) + 1e-9);
            assert!(n.dot(&f) >= -1e-12 && n.dot(&f) <= 500.0 + 1e-9);
        }
        assert!(inside == 10_000, "only {inside} feasible samples found");
    }

    #[test]
    fn robot_model_validation() {
        let good = RobotModel::default_quadruped().validate().unwrap();
        assert!((good.inertia * good.inertia_inv - Matrix3::identity()).norm() < 1e-12);
        let mut bad = RobotModel::default_quadruped();
        bad.mass = -1.0;
        assert!(bad.validate().is_err());
        let mut short = RobotModel::default_quadruped();
        short.l_leg = 0.3;
        assert!(short.validate().is_err());
    }
}
