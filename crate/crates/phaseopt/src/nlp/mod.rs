//! The nonlinear program: decision-vector layout, costs h1..h6, equality and
//! inequality constraints with analytic first derivatives, the tangent-space
//! orientation chart, and the baseline collocation mode.
//!
//! Proposed mode carries no translational-dynamics defect rows at all: the body
//! position is an analytic function of forces, durations and segment states, so the
//! translational identity holds wherever the continuity rows close the segment
//! chain. Baseline mode instead carries the body as Hermite nodes coupled to the
//! forces only through node-wise defect rows, and enforces friction only on node
//! samples; it shares every other piece of machinery.

mod eval;
mod guess;
mod layout;
mod rows;

pub use eval::{finish_row, rows_to_dense, EvalContext, JacRow, Val3};
pub use layout::Layout;
pub use rows::{constraint_rows, cost_blocks, ResidualBlock, ResidualRow, RowEval, RowKind, RowLabel};

use nalgebra::{DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::dynamics::exp_so3;
use crate::scenarios::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProblemMode {
    Proposed,
    Baseline,
}

impl std::fmt::Display for ProblemMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemMode::Proposed => write!(f, "proposed"),
            ProblemMode::Baseline => write!(f, "baseline"),
        }
    }
}

/// Weights of the six cost terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { w1: 10.0, w2: 10.0, w3: 0.1, w4: 1.0, w5: 0.05, w6: 0.05 }
    }
}

impl CostWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [self.w1, self.w2, self.w3, self.w4, self.w5, self.w6]
    }
}

#[derive(Debug, Error)]
#[error("scenario failed validation:\n  {}", issues.join("\n  "))]
pub struct ValidationError {
    pub issues: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("phase duration {0} is not positive; evaluation undefined")]
    DegenerateDuration(f64),
}

/// The flat decision vector plus the per-node orientation chart references.
#[derive(Debug, Clone)]
pub struct DecisionVector {
    pub values: Vec<f64>,
    /// Chart reference rotations; the represented rotation at node k is
    /// `charts[k] * Exp(dtheta_k)`.
    pub charts: Vec<Matrix3<f64>>,
}

impl DecisionVector {
    pub fn get_vec3(&self, base: usize) -> Vector3<f64> {
        Vector3::new(self.values[base], self.values[base + 1], self.values[base + 2])
    }

    pub fn set_vec3(&mut self, base: usize, v: Vector3<f64>) {
        self.values[base] = v.x;
        self.values[base + 1] = v.y;
        self.values[base + 2] = v.z;
    }
}

/// Constraint evaluation: residual vectors and sparse Jacobian rows.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub c_eq: DVector<f64>,
    pub c_ineq: DVector<f64>,
    pub jac_eq: Vec<JacRow>,
    pub jac_ineq: Vec<JacRow>,
}

/// Full evaluation at one decision vector.
pub struct Evaluation {
    pub blocks: Vec<ResidualBlock>,
    pub eq_rows: Vec<RowEval>,
    pub ineq_rows: Vec<RowEval>,
}

impl Evaluation {
    pub fn cost_value(&self, _problem: &Problem) -> f64 {
        self.blocks.iter().map(|b| b.weight * b.value()).sum()
    }
}

/// An assembled problem instance: immutable after `assemble`, evaluated as a pure
/// function of the decision vector.
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub layout: Layout,
    pub node_times: Vec<f64>,
    pub dt_node: f64,
    pub z_ref: Vec<f64>,
    pub r_ref: Vec<Matrix3<f64>>,
    /// Gauss-Newton Hessian regularization.
    pub lambda_gn: f64,
    pub eq_labels: Vec<RowLabel>,
    pub ineq_labels: Vec<RowLabel>,
}

/// Validate a scenario and build the problem (layout, node grid, references, row
/// labels and counts).
pub fn assemble(scenario: Scenario) -> Result<Problem, ValidationError> {
    scenario
        .validate()
        .map_err(|e| ValidationError { issues: e.to_string().split("; ").map(String::from).collect() })?;
    let layout = Layout::new(
        scenario.mode,
        scenario.robot.n_legs,
        scenario.n_phase,
        scenario.degree_feet,
        scenario.degree_forces,
        scenario.n_nodes,
    );
    let dt_node = scenario.t_total / (scenario.n_nodes - 1) as f64;
    let node_times: Vec<f64> = (0..scenario.n_nodes).map(|k| k as f64 * dt_node).collect();
    let refs: Vec<(f64, Matrix3<f64>)> = node_times.iter().map(|&t| scenario.reference_at(t)).collect();
    let mut problem = Problem {
        scenario,
        layout,
        node_times,
        dt_node,
        z_ref: refs.iter().map(|r| r.0).collect(),
        r_ref: refs.iter().map(|r| r.1).collect(),
        lambda_gn: 1e-8,
        eq_labels: Vec::new(),
        ineq_labels: Vec::new(),
    };
    // Snapshot row labels and counts at the initial guess (the row structure is
    // decision-vector independent).
    let xi = problem.initial_guess();
    let ctx = EvalContext::new(&problem, &xi);
    let (eq, ineq) = constraint_rows(&problem, &xi, &ctx).map_err(|e| ValidationError {
        issues: vec![format!("initial guess failed to evaluate: {e}")],
    })?;
    problem.eq_labels = eq.iter().map(|r| r.label).collect();
    problem.ineq_labels = ineq.iter().map(|r| r.label).collect();
    Ok(problem)
}

impl Problem {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars
    }

    pub fn n_eq(&self) -> usize {
        self.eq_labels.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_labels.len()
    }

    pub fn initial_guess(&self) -> DecisionVector {
        guess::initial_guess(self)
    }

    /// Node index of a node time (baseline body lookups; exact to round-off).
    pub fn node_index(&self, t: f64) -> usize {
        let k = (t / self.dt_node).round() as usize;
        k.min(self.layout.n_nodes - 1)
    }

    fn check_durations(&self, xi: &DecisionVector) -> Result<(), EvalError> {
        for leg in 0..self.layout.n_legs {
            for q in 0..self.layout.n_phase {
                let dt = xi.values[self.layout.duration(leg, q)];
                if !(dt > 0.0) || !dt.is_finite() {
                    return Err(EvalError::DegenerateDuration(dt));
                }
            }
        }
        Ok(())
    }

    /// Evaluate costs and constraints with Jacobians.
    pub fn evaluate(&self, xi: &DecisionVector) -> Result<Evaluation, EvalError> {
        self.check_durations(xi)?;
        let ctx = EvalContext::new(self, xi);
        let blocks = cost_blocks(self, xi, &ctx);
        for b in &blocks {
            for r in &b.rows {
                if !r.value.is_finite() {
                    return Err(EvalError::NonFinite("cost residual"));
                }
            }
        }
        let (eq_rows, ineq_rows) = constraint_rows(self, xi, &ctx)?;
        Ok(Evaluation { blocks, eq_rows, ineq_rows })
    }

    /// Total cost `h` and its gradient.
    pub fn cost(&self, xi: &DecisionVector) -> Result<(f64, DVector<f64>), EvalError> {
        let eval = self.evaluate(xi)?;
        let mut grad = DVector::zeros(self.n_vars());
        let mut value = 0.0;
        for b in &eval.blocks {
            value += b.weight * b.value();
            for r in &b.rows {
                for &(c, v) in &r.jac {
                    grad[c] += 2.0 * b.weight * r.value * v;
                }
            }
        }
        Ok((value, grad))
    }

    /// Value and gradient of one unweighted cost term h_e (`e` in 1..=6).
    pub fn cost_component(&self, e: usize, xi: &DecisionVector) -> Result<(f64, DVector<f64>), EvalError> {
        assert!((1..=6).contains(&e), "cost index must be 1..=6");
        self.check_durations(xi)?;
        let ctx = EvalContext::new(self, xi);
        let blocks = cost_blocks(self, xi, &ctx);
        let b = &blocks[e - 1];
        let mut grad = DVector::zeros(self.n_vars());
        for r in &b.rows {
            for &(c, v) in &r.jac {
                grad[c] += 2.0 * r.value * v;
            }
        }
        Ok((b.value(), grad))
    }

    /// Constraint residuals and Jacobians.
    pub fn constraints(&self, xi: &DecisionVector) -> Result<ConstraintEval, EvalError> {
        self.check_durations(xi)?;
        let ctx = EvalContext::new(self, xi);
        let (eq, ineq) = constraint_rows(self, xi, &ctx)?;
        Ok(ConstraintEval {
            c_eq: DVector::from_iterator(eq.len(), eq.iter().map(|r| r.value)),
            c_ineq: DVector::from_iterator(ineq.len(), ineq.iter().map(|r| r.value)),
            jac_eq: eq.into_iter().map(|r| r.jac).collect(),
            jac_ineq: ineq.into_iter().map(|r| r.jac).collect(),
        })
    }

    /// Mean l1 constraint feasibilities: `phi_eq = |c_eq|_1 / n_eq`,
    /// `phi_ineq = |(c_ineq)_+|_1 / n_ineq`.
    pub fn phi(&self, c_eq: &DVector<f64>, c_ineq: &DVector<f64>) -> (f64, f64) {
        let phi_eq = if c_eq.is_empty() {
            0.0
        } else {
            c_eq.iter().map(|v| v.abs()).sum::<f64>() / c_eq.len() as f64
        };
        let phi_ineq = if c_ineq.is_empty() {
            0.0
        } else {
            c_ineq.iter().map(|v| v.max(0.0)).sum::<f64>() / c_ineq.len() as f64
        };
        (phi_eq, phi_ineq)
    }

    /// Apply a step: Euclidean families add, orientation charts absorb their
    /// tangent increments and the chart coordinates re-zero.
    pub fn retract(&self, xi: &DecisionVector, step: &[f64]) -> DecisionVector {
        assert_eq!(step.len(), self.n_vars());
        let mut out = xi.clone();
        for i in 0..step.len() {
            out.values[i] += step[i];
        }
        for k in 0..self.layout.n_nodes {
            let base = self.layout.dtheta(k);
            let increment = out.get_vec3(base);
            out.charts[k] = xi.charts[k] * exp_so3(&increment);
            out.set_vec3(base, Vector3::zeros());
        }
        out
    }

    /// Human-readable variable/constraint count report.
    pub fn counts_report(&self) -> String {
        format!(
            "{}\nn_c_eq = {}, n_c_ineq = {}",
            self.layout.count_formula(),
            self.n_eq(),
            self.n_ineq()
        )
    }

    /// Declared structural sparsity: for each row, a superset of the columns its
    /// Jacobian may touch for any decision vector.
    pub fn declared_sparsity(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let eq = self.eq_labels.iter().map(|l| self.declared_support(l)).collect();
        let ineq = self.ineq_labels.iter().map(|l| self.declared_support(l)).collect();
        (eq, ineq)
    }

    fn declared_support(&self, label: &RowLabel) -> Vec<usize> {
        let l = &self.layout;
        let triple = |b: usize| vec![b, b + 1, b + 2];
        let all_leg_blocks = || -> Vec<usize> {
            let mut v: Vec<usize> = (0..l.n_legs).flat_map(|leg| l.leg_block(leg)).collect();
            if l.mode == ProblemMode::Baseline {
                for k in 0..l.n_nodes {
                    v.extend(triple(l.xnode(k)));
                    v.extend(triple(l.vnode(k)));
                }
            }
            v
        };
        let mut cols = match label.kind {
            RowKind::InitialSegmentState => {
                let mut v = triple(l.chi(label.leg, 0));
                v.extend(triple(l.chi_dot(label.leg, 0)));
                v
            }
            RowKind::InitialFoot => triple(l.foothold(label.leg, 0)),
            RowKind::InitialOrientation => triple(l.dtheta(0)),
            RowKind::InitialAngularVelocity => triple(l.omega(0)),
            RowKind::InitialPosition => triple(l.xnode(0)),
            RowKind::InitialVelocity => triple(l.vnode(0)),
            RowKind::FinalPosition | RowKind::FinalVelocity => all_leg_blocks(),
            RowKind::FinalFoot => triple(l.foothold(label.leg, l.n_stance - 1)),
            RowKind::FinalOrientation => triple(l.dtheta(l.n_nodes - 1)),
            RowKind::FinalAngularVelocity => triple(l.omega(l.n_nodes - 1)),
            RowKind::DurationSum => (0..l.n_phase).map(|q| l.duration(label.leg, q)).collect(),
            RowKind::Continuity => l.leg_block(label.leg),
            RowKind::FootholdTerrain => triple(l.foothold(label.leg, label.index)),
            RowKind::AngularRotationDefect => {
                let k = label.index;
                let mut v = triple(l.dtheta(k));
                v.extend(triple(l.dtheta(k + 1)));
                v.extend(triple(l.omega(k)));
                v
            }
            RowKind::AngularVelocityDefect => {
                let k = label.index;
                let mut v = all_leg_blocks();
                v.extend(triple(l.dtheta(k)));
                v.extend(triple(l.omega(k)));
                v.extend(triple(l.omega(k + 1)));
                v
            }
            RowKind::TranslationalDefect => all_leg_blocks(),
            RowKind::FrictionControlPoint => {
                let d = label.index / (6 * (l.deg_forces + 1));
                let k = (label.index / 6) % (l.deg_forces + 1);
                triple(l.force_cp(label.leg, d, k))
            }
            RowKind::FrictionNode => l.leg_block(label.leg),
            RowKind::SwingClearance => l.leg_block(label.leg),
            RowKind::KinematicLimit => {
                let mut v = all_leg_blocks();
                v.extend(triple(l.dtheta(label.index)));
                v
            }
            RowKind::MinDuration => vec![l.duration(label.leg, label.index)],
        };
        cols.sort_unstable();
        cols.dedup();
        cols
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{plane_reference_scenario, standing_scenario, Scenario};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_scenario(mode: ProblemMode) -> Scenario {
        let mut s = plane_reference_scenario(mode);
        s.n_nodes = 5;
        s.n_phase = 3;
        s.degree_feet = 2;
        s.degree_forces = 2;
        s.initial_durations = vec![vec![1.2, 0.6, 1.2]; 4];
        s
    }

    fn randomized_vector(problem: &Problem, seed: u64, scale: f64) -> DecisionVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let guess = problem.initial_guess();
        // Retraction with a random step randomizes the charts too.
        let step: Vec<f64> = (0..problem.n_vars())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        let mut xi = problem.retract(&guess, &step);
        // Leave a nonzero tangent increment so the chart path is exercised.
        for k in 0..problem.layout.n_nodes {
            let base = problem.layout.dtheta(k);
            for ax in 0..3 {
                xi.values[base + ax] = rng.random_range(-0.2..0.2);
            }
        }
        // Keep durations comfortably positive.
        for leg in 0..problem.layout.n_legs {
            for q in 0..problem.layout.n_phase {
                let idx = problem.layout.duration(leg, q);
                xi.values[idx] = xi.values[idx].abs().max(0.15);
            }
        }
        xi
    }

    fn fd_check_rows(
        problem: &Problem,
        xi: &DecisionVector,
        values: impl Fn(&DecisionVector) -> DVector<f64>,
        jac: &[JacRow],
        tol: f64,
    ) {
        let n = problem.n_vars();
        let h = 1e-6;
        let dense = rows_to_dense(jac, n);
        let mut worst = 0.0f64;
        let mut worst_at = (0usize, 0usize);
        let mut skipped = 0;
        for c in 0..n {
            let mut plus = xi.clone();
            plus.values[c] += h;
            let mut minus = xi.clone();
            minus.values[c] -= h;
            let fp = values(&plus);
            let fm = values(&minus);
            if fp.len() != dense.nrows() || fm.len() != dense.nrows() {
                // The perturbation flipped a node across a phase boundary and the
                // row set changed; the derivative is one-sided there.
                skipped += 1;
                continue;
            }
            for r in 0..dense.nrows() {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                let err = (dense[(r, c)] - fd).abs() / (1.0 + fd.abs());
                if err > worst {
                    worst = err;
                    worst_at = (r, c);
                }
            }
        }
        assert!(skipped < n / 10, "too many phase-boundary skips: {skipped}");
        assert!(
            worst < tol,
            "worst Jacobian mismatch {worst:.3e} at row {} col {}",
            worst_at.0,
            worst_at.1
        );
    }

    #[test]
    fn assemble_reports_structure() {
        let p = assemble(plane_reference_scenario(ProblemMode::Proposed)).unwrap();
        assert!(p.n_vars() > 0 && p.n_eq() > 0 && p.n_ineq() > 0);
        let report = p.counts_report();
        assert!(report.contains("n_z"));
        // Index map round-trips: covered structurally by the layout tests; here we
        // check the documented formula matches the layout.
        assert!(report.contains(&p.n_vars().to_string()));
    }

    #[test]
    fn proposed_mode_has_no_translational_defect_rows() {
        let p = assemble(plane_reference_scenario(ProblemMode::Proposed)).unwrap();
        assert!(p.eq_labels.iter().all(|l| l.kind != RowKind::TranslationalDefect));
        assert!(p.eq_labels.iter().any(|l| l.kind == RowKind::Continuity));
    }

    #[test]
    fn baseline_mode_swaps_defects_for_continuity() {
        let p = assemble(plane_reference_scenario(ProblemMode::Baseline)).unwrap();
        assert!(p.eq_labels.iter().any(|l| l.kind == RowKind::TranslationalDefect));
        assert!(p.eq_labels.iter().all(|l| l.kind != RowKind::Continuity));
        assert!(p.ineq_labels.iter().any(|l| l.kind == RowKind::FrictionNode));
        assert!(p.ineq_labels.iter().all(|l| l.kind != RowKind::FrictionControlPoint));
        // Strictly more dynamics-defect equality rows than proposed (which has none).
        let defects = p
            .eq_labels
            .iter()
            .filter(|l| l.kind == RowKind::TranslationalDefect)
            .count();
        assert_eq!(defects, 3 * p.layout.n_nodes);
    }

    #[test]
    fn validation_rejects_inconsistent_scenario() {
        let mut s = plane_reference_scenario(ProblemMode::Proposed);
        s.n_phase = 4;
        s.initial_durations = vec![vec![0.75; 4]; 4];
        let err = assemble(s).unwrap_err();
        assert!(err.to_string().contains("odd"));
    }

    #[test]
    fn constraint_jacobians_match_finite_differences_proposed() {
        let p = assemble(small_scenario(ProblemMode::Proposed)).unwrap();
        let xi = randomized_vector(&p, 5, 0.05);
        let cons = p.constraints(&xi).unwrap();
        fd_check_rows(
            &p,
            &xi,
            |x| p.constraints(x).unwrap().c_eq,
            &cons.jac_eq,
            2e-5,
        );
        fd_check_rows(
            &p,
            &xi,
            |x| p.constraints(x).unwrap().c_ineq,
            &cons.jac_ineq,
            2e-5,
        );
    }

    #[test]
    fn constraint_jacobians_match_finite_differences_baseline() {
        let p = assemble(small_scenario(ProblemMode::Baseline)).unwrap();
        let xi = randomized_vector(&p, 7, 0.05);
        let cons = p.constraints(&xi).unwrap();
        fd_check_rows(&p, &xi, |x| p.constraints(x).unwrap().c_eq, &cons.jac_eq, 2e-5);
        fd_check_rows(&p, &xi, |x| p.constraints(x).unwrap().c_ineq, &cons.jac_ineq, 2e-5);
    }

    #[test]
    fn cost_gradients_match_finite_differences() {
        for mode in [ProblemMode::Proposed, ProblemMode::Baseline] {
            let p = assemble(small_scenario(mode)).unwrap();
            let xi = randomized_vector(&p, 11, 0.05);
            let h = 1e-6;
            for e in 1..=6 {
                let (_, grad) = p.cost_component(e, &xi).unwrap();
                let mut worst = 0.0f64;
                for c in 0..p.n_vars() {
                    let mut plus = xi.clone();
                    plus.values[c] += h;
                    let mut minus = xi.clone();
                    minus.values[c] -= h;
                    let fp = p.cost_component(e, &plus).unwrap().0;
                    let fm = p.cost_component(e, &minus).unwrap().0;
                    let fd = (fp - fm) / (2.0 * h);
                    worst = worst.max((grad[c] - fd).abs() / (1.0 + fd.abs()));
                }
                assert!(worst < 1e-4, "h{e} gradient mismatch {worst:.3e}");
            }
        }
    }

    #[test]
    fn cost_vanishes_on_reference() {
        // A decision vector exactly on the references zeroes h1, h2, h3.
        let p = assemble(standing_scenario(ProblemMode::Proposed)).unwrap();
        let xi = p.initial_guess();
        assert!(p.cost_component(1, &xi).unwrap().0 < 1e-18);
        assert!(p.cost_component(2, &xi).unwrap().0 < 1e-18);
        assert!(p.cost_component(3, &xi).unwrap().0 < 1e-18);
    }

    #[test]
    fn h5_zero_on_collinear_equally_spaced_points() {
        let p = assemble(small_scenario(ProblemMode::Proposed)).unwrap();
        let mut xi = p.initial_guess();
        for leg in 0..4 {
            for d in 0..p.layout.n_swing {
                let a = Vector3::new(0.1 * leg as f64, 0.2, 0.0);
                let step = Vector3::new(0.05, -0.01, 0.02);
                for k in 0..=p.layout.deg_feet {
                    xi.set_vec3(p.layout.swing_cp(leg, d, k), a + step * k as f64);
                }
            }
        }
        assert!(p.cost_component(5, &xi).unwrap().0 < 1e-24);
    }

    #[test]
    fn standing_guess_satisfies_everything() {
        // Hand-built static equilibrium: all equality residuals ~ 0, all
        // inequalities satisfied.
        let p = assemble(standing_scenario(ProblemMode::Proposed)).unwrap();
        let xi = p.initial_guess();
        let cons = p.constraints(&xi).unwrap();
        let max_eq = cons.c_eq.amax();
        assert!(max_eq < 1e-8, "max equality residual {max_eq}");
        let max_in = cons.c_ineq.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max_in <= 1e-12, "violated inequality {max_in}");
    }

    #[test]
    fn perturbing_one_chi_moves_exactly_its_junction_rows() {
        let p = assemble(small_scenario(ProblemMode::Proposed)).unwrap();
        let xi = p.initial_guess();
        let base = p.constraints(&xi).unwrap();
        let mut moved = xi.clone();
        let leg = 1;
        let q = 1; // swing segment initial state
        moved.values[p.layout.chi(leg, q)] += 1e-3;
        let shifted = p.constraints(&moved).unwrap();
        let mut changed = Vec::new();
        for i in 0..base.c_eq.len() {
            if (base.c_eq[i] - shifted.c_eq[i]).abs() > 1e-12 {
                changed.push(i);
            }
        }
        // The chi junction row itself plus the next junction's rows (the swing end
        // depends on its own initial state): both belong to this leg's continuity.
        assert!(!changed.is_empty());
        for i in changed {
            let label = p.eq_labels[i];
            assert_eq!(label.kind, RowKind::Continuity);
            assert_eq!(label.leg, leg);
        }
    }

    #[test]
    fn friction_rows_feasible_implies_sampled_curve_feasible() {
        // Hull property: control points inside the pyramid imply the whole curve is.
        let p = assemble(small_scenario(ProblemMode::Proposed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut xi = p.initial_guess();
        let pyr = crate::model::pyramid(
            &p.scenario.terrain.frame(0.0, 0.0),
            p.scenario.terrain.friction,
            p.scenario.robot.f_n_max,
        )
        .unwrap();
        for leg in 0..4 {
            for d in 0..p.layout.n_stance {
                for k in 0..=p.layout.deg_forces {
                    // Rejection-sample feasible control points.
                    loop {
                        let f = Vector3::new(
                            rng.random_range(-200.0..200.0),
                            rng.random_range(-200.0..200.0),
                            rng.random_range(0.0..400.0),
                        );
                        if pyr.contains(&f, 0.0) {
                            xi.set_vec3(p.layout.force_cp(leg, d, k), f);
                            break;
                        }
                    }
                }
            }
        }
        let cons = p.constraints(&xi).unwrap();
        let friction_ok = p
            .ineq_labels
            .iter()
            .zip(cons.c_ineq.iter())
            .filter(|(l, _)| l.kind == RowKind::FrictionControlPoint)
            .all(|(_, &v)| v <= 1e-10);
        assert!(friction_ok);
        // Sample each stance curve densely; every sample must stay in the pyramid.
        let ctx = EvalContext::new(&p, &xi);
        for leg in 0..4 {
            for i in 0..1000 {
                let t = p.scenario.t_total * (i as f64 + 0.5) / 1000.0;
                let f = ctx.force(&p, &xi, leg, t);
                assert!(
                    pyr.max_violation(&f.v) <= 1e-9,
                    "sampled force left the pyramid: leg {leg}, t {t}"
                );
            }
        }
    }

    #[test]
    fn jacobian_entries_inside_declared_sparsity() {
        for mode in [ProblemMode::Proposed, ProblemMode::Baseline] {
            let p = assemble(small_scenario(mode)).unwrap();
            let (eq_pattern, ineq_pattern) = p.declared_sparsity();
            for seed in [3, 19] {
                let xi = randomized_vector(&p, seed, 0.08);
                let cons = p.constraints(&xi).unwrap();
                for (row, pattern) in cons.jac_eq.iter().zip(&eq_pattern) {
                    for &(c, _) in row {
                        assert!(pattern.binary_search(&c).is_ok(), "eq column {c} undeclared");
                    }
                }
                for (row, pattern) in cons.jac_ineq.iter().zip(&ineq_pattern) {
                    for &(c, _) in row {
                        assert!(pattern.binary_search(&c).is_ok(), "ineq column {c} undeclared");
                    }
                }
            }
        }
    }

    #[test]
    fn leg_relabeling_symmetry() {
        // Swapping two legs in the scenario and permuting the decision vector the
        // same way leaves the cost and the feasibility measures unchanged.
        let base = small_scenario(ProblemMode::Proposed);
        let mut swapped = base.clone();
        let perm = [1usize, 0, 2, 3];
        let apply = |v: &mut Vec<Vector3<f64>>| {
            let old = v.clone();
            for (i, &j) in perm.iter().enumerate() {
                v[i] = old[j];
            }
        };
        {
            let mut hips = swapped.robot.hip_offsets.clone();
            let mut noms = swapped.robot.nominal_foot.clone();
            let old_h = hips.clone();
            let old_n = noms.clone();
            for (i, &j) in perm.iter().enumerate() {
                hips[i] = old_h[j];
                noms[i] = old_n[j];
            }
            swapped.robot.hip_offsets = hips;
            swapped.robot.nominal_foot = noms;
        }
        apply(&mut swapped.p_init);
        apply(&mut swapped.p_final);
        let old_d = swapped.initial_durations.clone();
        for (i, &j) in perm.iter().enumerate() {
            swapped.initial_durations[i] = old_d[j].clone();
        }
        let pa = assemble(base).unwrap();
        let pb = assemble(swapped).unwrap();
        let xa = randomized_vector(&pa, 23, 0.03);
        // Map xa into pb's labeling.
        let mut xb = pb.initial_guess();
        xb.charts = xa.charts.clone();
        for (i, &j) in perm.iter().enumerate() {
            for d in 0..pa.layout.n_stance {
                for k in 0..=pa.layout.deg_forces {
                    xb.set_vec3(pb.layout.force_cp(i, d, k), xa.get_vec3(pa.layout.force_cp(j, d, k)));
                }
            }
            for d in 0..pa.layout.n_swing {
                for k in 0..=pa.layout.deg_feet {
                    xb.set_vec3(pb.layout.swing_cp(i, d, k), xa.get_vec3(pa.layout.swing_cp(j, d, k)));
                }
            }
            for q in 0..pa.layout.n_phase {
                xb.values[pb.layout.duration(i, q)] = xa.values[pa.layout.duration(j, q)];
                xb.set_vec3(pb.layout.chi(i, q), xa.get_vec3(pa.layout.chi(j, q)));
                xb.set_vec3(pb.layout.chi_dot(i, q), xa.get_vec3(pa.layout.chi_dot(j, q)));
            }
        }
        for k in 0..pa.layout.n_nodes {
            xb.set_vec3(pb.layout.dtheta(k), xa.get_vec3(pa.layout.dtheta(k)));
            xb.set_vec3(pb.layout.omega(k), xa.get_vec3(pa.layout.omega(k)));
        }
        let (ha, _) = pa.cost(&xa).unwrap();
        let (hb, _) = pb.cost(&xb).unwrap();
        assert!((ha - hb).abs() < 1e-9 * (1.0 + ha.abs()));
        let ca = pa.constraints(&xa).unwrap();
        let cb = pb.constraints(&xb).unwrap();
        let (pe_a, pi_a) = pa.phi(&ca.c_eq, &ca.c_ineq);
        let (pe_b, pi_b) = pb.phi(&cb.c_eq, &cb.c_ineq);
        assert!((pe_a - pe_b).abs() < 1e-10 * (1.0 + pe_a));
        assert!((pi_a - pi_b).abs() < 1e-10 * (1.0 + pi_a));
    }

    #[test]
    fn retract_semantics() {
        let p = assemble(small_scenario(ProblemMode::Proposed)).unwrap();
        let xi = p.initial_guess();
        // Zero step changes nothing.
        let same = p.retract(&xi, &vec![0.0; p.n_vars()]);
        assert_eq!(same.values, xi.values);
        for k in 0..p.layout.n_nodes {
            assert!((same.charts[k] - xi.charts[k]).norm() < 1e-15);
        }
        // Two same-axis retractions compose additively.
        let mut step1 = vec![0.0; p.n_vars()];
        let mut step2 = vec![0.0; p.n_vars()];
        step1[p.layout.dtheta(2) + 2] = 0.3;
        step2[p.layout.dtheta(2) + 2] = 0.4;
        let once = p.retract(&p.retract(&xi, &step1), &step2);
        let mut both = vec![0.0; p.n_vars()];
        both[p.layout.dtheta(2) + 2] = 0.7;
        let direct = p.retract(&xi, &both);
        assert!((once.charts[2] - direct.charts[2]).norm() < 1e-12);
        // Orthonormality is preserved exactly.
        let r = once.charts[2];
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
        // Chart coordinates are re-zeroed.
        assert_eq!(once.get_vec3(p.layout.dtheta(2)), Vector3::zeros());
    }

    #[test]
    fn variable_count_matches_paper_shape() {
        // With the experimental shape (30 nodes, 7 phases, 4 legs) the counts are
        // printed for comparison; the formula itself is what is asserted.
        let p = assemble(plane_reference_scenario(ProblemMode::Proposed)).unwrap();
        let l = &p.layout;
        let expected = 3 * (l.deg_forces + 1) * l.n_stance * 4
            + 3 * (l.deg_feet + 1) * l.n_swing * 4
            + l.n_phase * 4
            + 6 * l.n_nodes
            + 6 * l.n_phase * 4;
        assert_eq!(p.n_vars(), expected);
    }
}
