//! Scenario construction: terrains, boundary states, reference generators, config
//! file I/O and randomized batch generation.

use nalgebra::{Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{exp_so3, log_so3};
use crate::model::{RobotModel, Terrain, TerrainKind};
use crate::nlp::{CostWeights, ProblemMode};
use crate::phase::DEFAULT_MIN_PHASE_DURATION;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to parse scenario config: {0}")]
    Parse(String),
    #[error("failed to serialize scenario config: {0}")]
    Serialize(String),
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

/// Iteration/termination settings for the SQP driver, carried by the scenario.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Merit line search on top of the full QP step; off reproduces pure full steps.
    pub line_search: bool,
    /// When false the wall-time column of summary CSVs is written as zero so that
    /// repeated runs are byte-identical.
    pub report_walltime: bool,
    /// Lower bound on phase durations.
    pub dt_min: f64,
    /// Stream per-iteration rows to the trace artifact.
    pub trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            line_search: true,
            report_walltime: true,
            dt_min: DEFAULT_MIN_PHASE_DURATION,
            trace: false,
        }
    }
}

/// A complete, solvable problem instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub robot: RobotModel,
    pub terrain: Terrain,
    pub x_init: Vector3<f64>,
    pub xdot_init: Vector3<f64>,
    pub r_init: Matrix3<f64>,
    pub omega_init: Vector3<f64>,
    pub p_init: Vec<Vector3<f64>>,
    pub x_final: Vector3<f64>,
    pub xdot_final: Vector3<f64>,
    pub r_final: Matrix3<f64>,
    pub omega_final: Vector3<f64>,
    pub p_final: Vec<Vector3<f64>>,
    pub t_total: f64,
    pub n_nodes: usize,
    pub n_phase: usize,
    /// Bezier degree N of swing foot curves.
    pub degree_feet: usize,
    /// Bezier degree M of stance force curves.
    pub degree_forces: usize,
    pub weights: CostWeights,
    pub mode: ProblemMode,
    pub seed: u64,
    /// Per-leg initial phase durations used to seed the optimizer.
    pub initial_durations: Vec<Vec<f64>>,
    pub solver: SolverSettings,
    /// Metrics grid spacing.
    pub dt_metrics: f64,
}

impl Scenario {
    /// Reference body height and orientation at `t`: linear in z, geodesic on SO(3).
    pub fn reference_at(&self, t: f64) -> (f64, Matrix3<f64>) {
        let a = (t / self.t_total).clamp(0.0, 1.0);
        let z = self.x_init.z + a * (self.x_final.z - self.x_init.z);
        let delta = log_so3(&(self.r_init.transpose() * self.r_final))
            .expect("boundary rotations validated");
        let r = self.r_init * exp_so3(&(delta * a));
        (z, r)
    }

    /// Check every structural invariant; returns the full list of violations.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut issues = Vec::new();
        if let Err(e) = self.robot.clone().validate() {
            issues.push(e.to_string());
        }
        if self.n_phase % 2 == 0 || self.n_phase == 0 {
            issues.push(format!("n_phase must be odd and positive, got {}", self.n_phase));
        }
        if self.n_nodes < 2 {
            issues.push(format!("n_nodes must be at least 2, got {}", self.n_nodes));
        }
        if !(self.t_total > 0.0) {
            issues.push(format!("t_total must be positive, got {}", self.t_total));
        }
        if self.degree_feet < 1 {
            issues.push(format!("degree_feet must be at least 1, got {}", self.degree_feet));
        }
        if !(self.terrain.friction > 0.0) {
            issues.push(format!("friction must be positive, got {}", self.terrain.friction));
        }
        if !(self.dt_metrics > 0.0) {
            issues.push(format!("dt_metrics must be positive, got {}", self.dt_metrics));
        }
        for w in self.weights.as_array() {
            if !(w >= 0.0) || !w.is_finite() {
                issues.push(format!("weights must be finite and non-negative, got {w}"));
            }
        }
        for (name, r) in [("r_init", &self.r_init), ("r_final", &self.r_final)] {
            let defect = (r.transpose() * r - Matrix3::identity()).norm();
            if defect > 1e-9 || r.determinant() < 0.0 {
                issues.push(format!("{name} is not a rotation (defect {defect:.2e})"));
            }
        }
        let n_legs = self.robot.n_legs;
        if self.p_init.len() != n_legs || self.p_final.len() != n_legs {
            issues.push(format!(
                "expected {n_legs} boundary feet, got {} init / {} final",
                self.p_init.len(),
                self.p_final.len()
            ));
        } else {
            for (label, feet) in [("p_init", &self.p_init), ("p_final", &self.p_final)] {
                for (i, p) in feet.iter().enumerate() {
                    let h = self.terrain.height(p.x, p.y);
                    if (p.z - h).abs() > 1e-8 {
                        issues.push(format!(
                            "{label}[{i}] must lie on the terrain: z={} but h={h}",
                            p.z
                        ));
                    }
                }
            }
        }
        if self.n_phase == 1 {
            for i in 0..self.p_init.len().min(self.p_final.len()) {
                if (self.p_init[i] - self.p_final[i]).norm() > 1e-9 {
                    issues.push(format!(
                        "single-phase schedules keep each foothold fixed, but leg {i} has p_init != p_final"
                    ));
                }
            }
        }
        if self.initial_durations.len() != n_legs {
            issues.push(format!(
                "expected {n_legs} initial duration lists, got {}",
                self.initial_durations.len()
            ));
        } else {
            for (i, d) in self.initial_durations.iter().enumerate() {
                if d.len() != self.n_phase {
                    issues.push(format!(
                        "leg {i}: expected {} initial durations, got {}",
                        self.n_phase,
                        d.len()
                    ));
                    continue;
                }
                if d.iter().any(|&x| !(x > 0.0)) {
                    issues.push(format!("leg {i}: initial durations must be positive"));
                }
                let sum: f64 = d.iter().sum();
                if (sum - self.t_total).abs() > 1e-6 {
                    issues.push(format!(
                        "leg {i}: initial durations sum to {sum}, expected {}",
                        self.t_total
                    ));
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(issues.join("; ")))
        }
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        toml::to_string_pretty(&ScenarioConfig::from_scenario(self))
            .map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        config.into_scenario()
    }
}

fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    exp_so3(&Vector3::new(0.0, 0.0, yaw))
}

/// Place the nominal feet under the body at a given pose and snap them to the terrain.
pub fn nominal_feet_on_terrain(
    robot: &RobotModel,
    terrain: &Terrain,
    x: &Vector3<f64>,
    r: &Matrix3<f64>,
) -> Vec<Vector3<f64>> {
    robot
        .nominal_foot
        .iter()
        .map(|pb| {
            let mut p = x + r * pb;
            p.z = terrain.height(p.x, p.y);
            p
        })
        .collect()
}

/// Standing body height implied by the nominal feet (hip height above the foot).
fn nominal_stand_height(robot: &RobotModel) -> f64 {
    -robot.nominal_foot[0].z
}

/// Build one traverse scenario: move `distance` along world x in `t_total` seconds.
#[allow(clippy::too_many_arguments)]
pub fn traverse_scenario(
    id: String,
    robot: RobotModel,
    terrain: Terrain,
    distance: f64,
    t_total: f64,
    vx_init: f64,
    vx_final: f64,
    yaw_init: f64,
    yaw_final: f64,
    n_phase: usize,
    mode: ProblemMode,
    seed: u64,
    initial_durations: Vec<Vec<f64>>,
) -> Scenario {
    let stand = nominal_stand_height(&robot);
    let r_init = yaw_rotation(yaw_init);
    let r_final = yaw_rotation(yaw_final);
    // Body starts `stand` above the terrain under the initial/final feet centers.
    let ground_init = terrain.height(0.0, 0.0);
    let ground_final = terrain.height(distance, 0.0);
    let x_init = Vector3::new(0.0, 0.0, ground_init + stand);
    let x_final = Vector3::new(distance, 0.0, ground_final + stand);
    let p_init = nominal_feet_on_terrain(&robot, &terrain, &x_init, &r_init);
    let p_final = nominal_feet_on_terrain(&robot, &terrain, &x_final, &r_final);
    Scenario {
        id,
        robot,
        terrain,
        x_init,
        xdot_init: Vector3::new(vx_init, 0.0, 0.0),
        r_init,
        omega_init: Vector3::zeros(),
        p_init,
        x_final,
        xdot_final: Vector3::new(vx_final, 0.0, 0.0),
        r_final,
        omega_final: Vector3::zeros(),
        p_final,
        t_total,
        n_nodes: 30,
        n_phase,
        degree_feet: 4,
        degree_forces: 4,
        weights: CostWeights::default(),
        mode,
        seed,
        initial_durations,
        solver: SolverSettings::default(),
        dt_metrics: 0.01,
    }
}

/// The flat-ground reference scenario: 3 m in 3 s, zero boundary velocities,
/// identity orientations, body height 0.51 m, friction 1.
pub fn plane_reference_scenario(mode: ProblemMode) -> Scenario {
    let robot = RobotModel::default_quadruped();
    let n_phase = 7;
    traverse_scenario(
        format!("plane-reference-{mode}"),
        robot,
        Terrain::new(TerrainKind::Plane, 1.0),
        3.0,
        3.0,
        0.0,
        0.0,
        0.0,
        0.0,
        n_phase,
        mode,
        0,
        vec![vec![3.0 / n_phase as f64; n_phase]; 4],
    )
}

/// A stand-still scenario (identical boundary states, one full-horizon stance phase).
pub fn standing_scenario(mode: ProblemMode) -> Scenario {
    let robot = RobotModel::default_quadruped();
    let mut s = traverse_scenario(
        format!("standing-{mode}"),
        robot,
        Terrain::new(TerrainKind::Plane, 0.8),
        0.0,
        3.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1,
        mode,
        0,
        vec![vec![3.0]; 4],
    );
    s.n_nodes = 10;
    s
}

/// Batch sampling protocol: randomized traverse scenarios on one terrain.
#[derive(Debug, Clone)]
pub struct BatchProtocol {
    pub count: usize,
    pub seed: u64,
    pub terrain: TerrainKind,
    pub mode: ProblemMode,
    pub distance: f64,
    pub t_total: f64,
    pub n_phase: usize,
    /// Symmetric Dirichlet concentration for the initial phase-duration draw.
    pub duration_alpha: f64,
}

impl BatchProtocol {
    pub fn new(count: usize, seed: u64, terrain: TerrainKind, mode: ProblemMode) -> Self {
        Self {
            count,
            seed,
            terrain,
            mode,
            distance: 3.0,
            t_total: 3.0,
            n_phase: 7,
            duration_alpha: 5.0,
        }
    }
}

fn terrain_name(kind: &TerrainKind) -> &'static str {
    match kind {
        TerrainKind::Plane => "plane",
        TerrainKind::Block { .. } => "block",
        TerrainKind::Stairs { .. } => "stairs",
        TerrainKind::Chimney { .. } => "chimney",
        TerrainKind::HeightField { .. } => "heightfield",
    }
}

/// Sample per-leg initial durations: symmetric Dirichlet over the simplex scaled to
/// the horizon, clipped to the minimum duration and renormalized.
pub fn sample_initial_durations(
    rng: &mut ChaCha8Rng,
    n_legs: usize,
    n_phase: usize,
    t_total: f64,
    dt_min: f64,
    alpha: f64,
) -> Vec<Vec<f64>> {
    (0..n_legs)
        .map(|_| {
            if n_phase == 1 {
                return vec![t_total];
            }
            // Symmetric Dirichlet via normalized Gamma(alpha, 1) draws.
            let gamma = Gamma::new(alpha, 1.0).expect("valid alpha");
            let draws: Vec<f64> = (0..n_phase).map(|_| gamma.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            let mut d: Vec<f64> = draws
                .into_iter()
                .map(|w| (w / total * t_total).max(dt_min * 1.5))
                .collect();
            let sum: f64 = d.iter().sum();
            for x in &mut d {
                *x *= t_total / sum;
            }
            d
        })
        .collect()
}

/// Generate the randomized scenario batch of the experimental protocol: x-velocity
/// boundaries uniform in [-0.5, 0.5] m/s, yaw boundaries uniform in [-45 deg, 45 deg],
/// effective friction uniform in [0.6, 1.0], randomized initial phase durations.
pub fn batch(protocol: &BatchProtocol) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let robot = RobotModel::default_quadruped();
    let name = terrain_name(&protocol.terrain);
    (0..protocol.count)
        .map(|idx| {
            let vx_init = rng.random_range(-0.5..=0.5);
            let vx_final = rng.random_range(-0.5..=0.5);
            let yaw_limit = std::f64::consts::FRAC_PI_4;
            let yaw_init = rng.random_range(-yaw_limit..=yaw_limit);
            let yaw_final = rng.random_range(-yaw_limit..=yaw_limit);
            let friction = rng.random_range(0.6..=1.0);
            let durations = sample_initial_durations(
                &mut rng,
                robot.n_legs,
                protocol.n_phase,
                protocol.t_total,
                DEFAULT_MIN_PHASE_DURATION,
                protocol.duration_alpha,
            );
            traverse_scenario(
                format!("{name}-{}-{}-{idx:03}", protocol.mode, protocol.seed),
                robot.clone(),
                Terrain::new(protocol.terrain.clone(), friction),
                protocol.distance,
                protocol.t_total,
                vx_init,
                vx_final,
                yaw_init,
                yaw_final,
                protocol.n_phase,
                protocol.mode,
                protocol.seed.wrapping_add(idx as u64),
                durations,
            )
        })
        .collect()
}

// --- config file schema -----------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoundaryConfig {
    x_init: [f64; 3],
    xdot_init: [f64; 3],
    /// Roll-pitch-yaw (XYZ intrinsic) in radians.
    rpy_init: [f64; 3],
    omega_init: [f64; 3],
    x_final: [f64; 3],
    xdot_final: [f64; 3],
    rpy_final: [f64; 3],
    omega_final: [f64; 3],
    /// Optional explicit boundary feet; defaults to nominal feet snapped to terrain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_init: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_final: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SolverConfig {
    mode: String,
    t_total: f64,
    n_nodes: usize,
    n_phase: usize,
    degree_feet: usize,
    degree_forces: usize,
    seed: u64,
    max_iter: usize,
    line_search: bool,
    report_walltime: bool,
    dt_min: f64,
    trace: bool,
    dt_metrics: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_durations: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsConfig {
    w1: f64,
    w2: f64,
    w3: f64,
    w4: f64,
    w5: f64,
    w6: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioConfig {
    robot: RobotModel,
    terrain: Terrain,
    boundary: BoundaryConfig,
    solver: SolverConfig,
    weights: WeightsConfig,
}

fn rpy_to_matrix(rpy: &[f64; 3]) -> Matrix3<f64> {
    exp_so3(&Vector3::new(0.0, 0.0, rpy[2]))
        * exp_so3(&Vector3::new(0.0, rpy[1], 0.0))
        * exp_so3(&Vector3::new(rpy[0], 0.0, 0.0))
}

fn matrix_to_rpy(r: &Matrix3<f64>) -> [f64; 3] {
    // Inverse of rpy_to_matrix for non-degenerate pitch.
    let pitch = (-r[(2, 0)]).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    [roll, pitch, yaw]
}

impl ScenarioConfig {
    fn from_scenario(s: &Scenario) -> Self {
        let v = |x: &Vector3<f64>| [x.x, x.y, x.z];
        Self {
            robot: s.robot.clone(),
            terrain: s.terrain.clone(),
            boundary: BoundaryConfig {
                x_init: v(&s.x_init),
                xdot_init: v(&s.xdot_init),
                rpy_init: matrix_to_rpy(&s.r_init),
                omega_init: v(&s.omega_init),
                x_final: v(&s.x_final),
                xdot_final: v(&s.xdot_final),
                rpy_final: matrix_to_rpy(&s.r_final),
                omega_final: v(&s.omega_final),
                p_init: Some(s.p_init.iter().map(v).collect()),
                p_final: Some(s.p_final.iter().map(v).collect()),
            },
            solver: SolverConfig {
                mode: s.mode.to_string(),
                t_total: s.t_total,
                n_nodes: s.n_nodes,
                n_phase: s.n_phase,
                degree_feet: s.degree_feet,
                degree_forces: s.degree_forces,
                seed: s.seed,
                max_iter: s.solver.max_iter,
                line_search: s.solver.line_search,
                report_walltime: s.solver.report_walltime,
                dt_min: s.solver.dt_min,
                trace: s.solver.trace,
                dt_metrics: s.dt_metrics,
                initial_durations: Some(s.initial_durations.clone()),
                id: Some(s.id.clone()),
            },
            weights: WeightsConfig {
                w1: s.weights.w1,
                w2: s.weights.w2,
                w3: s.weights.w3,
                w4: s.weights.w4,
                w5: s.weights.w5,
                w6: s.weights.w6,
            },
        }
    }

    fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let v = |a: &[f64; 3]| Vector3::new(a[0], a[1], a[2]);
        let robot = self
            .robot
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mode = match self.solver.mode.as_str() {
            "proposed" => ProblemMode::Proposed,
            "baseline" => ProblemMode::Baseline,
            other => {
                return Err(ScenarioError::Parse(format!(
                    "solver.mode must be \"proposed\" or \"baseline\", got {other:?}"
                )))
            }
        };
        let r_init = rpy_to_matrix(&self.boundary.rpy_init);
        let r_final = rpy_to_matrix(&self.boundary.rpy_final);
        let x_init = v(&self.boundary.x_init);
        let x_final = v(&self.boundary.x_final);
        let p_init = match &self.boundary.p_init {
            Some(feet) => feet.iter().map(v).collect(),
            None => nominal_feet_on_terrain(&robot, &self.terrain, &x_init, &r_init),
        };
        let p_final = match &self.boundary.p_final {
            Some(feet) => feet.iter().map(v).collect(),
            None => nominal_feet_on_terrain(&robot, &self.terrain, &x_final, &r_final),
        };
        let n_phase = self.solver.n_phase;
        let initial_durations = self.solver.initial_durations.clone().unwrap_or_else(|| {
            vec![vec![self.solver.t_total / n_phase as f64; n_phase]; robot.n_legs]
        });
        let scenario = Scenario {
            id: self.solver.id.clone().unwrap_or_else(|| "run".to_string()),
            robot,
            terrain: self.terrain,
            x_init,
            xdot_init: v(&self.boundary.xdot_init),
            r_init,
            omega_init: v(&self.boundary.omega_init),
            p_init,
            x_final,
            xdot_final: v(&self.boundary.xdot_final),
            r_final,
            omega_final: v(&self.boundary.omega_final),
            p_final,
            t_total: self.solver.t_total,
            n_nodes: self.solver.n_nodes,
            n_phase,
            degree_feet: self.solver.degree_feet,
            degree_forces: self.solver.degree_forces,
            weights: CostWeights {
                w1: self.weights.w1,
                w2: self.weights.w2,
                w3: self.weights.w3,
                w4: self.weights.w4,
                w5: self.weights.w5,
                w6: self.weights.w6,
            },
            mode,
            seed: self.solver.seed,
            initial_durations,
            solver: SolverSettings {
                max_iter: self.solver.max_iter,
                line_search: self.solver.line_search,
                report_walltime: self.solver.report_walltime,
                dt_min: self.solver.dt_min,
                trace: self.solver.trace,
            },
            dt_metrics: self.solver.dt_metrics,
        };
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn reference_interpolates_boundaries() {
        let s = plane_reference_scenario(ProblemMode::Proposed);
        let (z0, r0) = s.reference_at(0.0);
        assert!((z0 - s.x_init.z).abs() < 1e-14);
        assert!((r0 - s.r_init).norm() < 1e-12);
        let (zt, rt) = s.reference_at(s.t_total);
        assert!((zt - s.x_final.z).abs() < 1e-14);
        assert!((rt - s.r_final).norm() < 1e-12);
    }

    #[test]
    fn reference_identity_rotations_stay_identity() {
        let s = plane_reference_scenario(ProblemMode::Proposed);
        for i in 0..10 {
            let (_, r) = s.reference_at(i as f64 * 0.3);
            assert!((r - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn reference_geodesic_midpoint_yaw() {
        let mut s = plane_reference_scenario(ProblemMode::Proposed);
        s.r_final = yaw_rotation(FRAC_PI_2);
        s.p_final =
            nominal_feet_on_terrain(&s.robot, &s.terrain, &s.x_final, &s.r_final);
        let (_, r) = s.reference_at(s.t_total / 2.0);
        assert!((r - yaw_rotation(FRAC_PI_2 / 2.0)).norm() < 1e-12);
    }

    #[test]
    fn batch_respects_protocol() {
        let protocol = BatchProtocol::new(300, 42, TerrainKind::Plane, ProblemMode::Proposed);
        let scenarios = batch(&protocol);
        assert_eq!(scenarios.len(), 300);
        for s in &scenarios {
            assert_eq!(s.t_total, 3.0);
            assert!((s.x_final.x - s.x_init.x - 3.0).abs() < 1e-12);
            assert!((0.6..=1.0).contains(&s.terrain.friction));
            assert!(s.xdot_init.x.abs() <= 0.5 && s.xdot_final.x.abs() <= 0.5);
            s.validate().unwrap();
            for d in &s.initial_durations {
                let sum: f64 = d.iter().sum();
                assert!((sum - 3.0).abs() < 1e-9);
                assert!(d.iter().all(|&x| x >= DEFAULT_MIN_PHASE_DURATION));
            }
        }
        // Distinct draws.
        assert!(scenarios[0].terrain.friction != scenarios[1].terrain.friction);
    }

    #[test]
    fn batch_is_reproducible() {
        let protocol = BatchProtocol::new(20, 7, TerrainKind::Plane, ProblemMode::Baseline);
        let a = batch(&protocol);
        let b = batch(&protocol);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.terrain.friction, y.terrain.friction);
            assert_eq!(x.xdot_init, y.xdot_init);
            assert_eq!(x.initial_durations, y.initial_durations);
        }
    }

    #[test]
    fn figure_reference_scenario_exact() {
        let s = plane_reference_scenario(ProblemMode::Proposed);
        assert_eq!(s.x_init, Vector3::new(0.0, 0.0, 0.51));
        assert_eq!(s.x_final, Vector3::new(3.0, 0.0, 0.51));
        assert_eq!(s.xdot_init, Vector3::zeros());
        assert_eq!(s.xdot_final, Vector3::zeros());
        assert_eq!(s.terrain.friction, 1.0);
        assert!((s.r_init - Matrix3::identity()).norm() < 1e-15);
        s.validate().unwrap();
    }

    #[test]
    fn config_round_trip() {
        let mut s = plane_reference_scenario(ProblemMode::Proposed);
        s.r_final = yaw_rotation(0.3);
        s.p_final = nominal_feet_on_terrain(&s.robot, &s.terrain, &s.x_final, &s.r_final);
        let text = s.to_toml_string().unwrap();
        let parsed = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(parsed.n_nodes, s.n_nodes);
        assert_eq!(parsed.mode, s.mode);
        assert!((parsed.r_final - s.r_final).norm() < 1e-12);
        assert!((parsed.x_final - s.x_final).norm() < 1e-15);
        assert_eq!(parsed.initial_durations, s.initial_durations);
        parsed.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_mode() {
        let s = plane_reference_scenario(ProblemMode::Proposed);
        let text = s.to_toml_string().unwrap().replace("proposed", "banana");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn validation_catches_feet_off_terrain() {
        let mut s = plane_reference_scenario(ProblemMode::Proposed);
        s.p_init[0].z = 0.2;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("p_init[0]"));
    }

    #[test]
    fn standing_scenario_valid() {
        standing_scenario(ProblemMode::Proposed).validate().unwrap();
    }

    #[test]
    fn terrain_scenarios_valid() {
        for kind in [
            TerrainKind::Block { step_height: 0.5, step_start: 1.5 },
            TerrainKind::Stairs { rise: 0.2, run: 1.0, start: 1.0, count: 2 },
            TerrainKind::Chimney { half_gap: 0.15, incline: std::f64::consts::FRAC_PI_4 },
        ] {
            let protocol = BatchProtocol::new(5, 3, kind, ProblemMode::Proposed);
            for s in batch(&protocol) {
                s.validate().unwrap();
            }
        }
    }
}
