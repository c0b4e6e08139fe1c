//! Sequential quadratic programming with a Gauss-Newton Hessian, driving the
//! interior-point QP subsolver.
//!
//! Each iteration linearizes the constraints, builds `H = sum_e 2 w_e J_e' J_e +
//! lambda I` from the cost residual blocks, solves the QP in the tangent space and
//! retracts. Termination follows the paper's tests: relative decrease of the cost
//! and of both mean-l1 feasibility measures below 0.1, with the feasibility
//! measures themselves below 1e-3.

pub mod qp;
mod solution;

pub use qp::{
    solve_qp, solve_qp_with, KktResiduals, QpOptions, QpProblem, QpSolution, QpStatus,
};
pub use solution::TrajectorySolution;

use faer::Mat;

use crate::nlp::{DecisionVector, EvalError, Problem, RowEval};
use crate::scenarios::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    Converged,
    MaxIter,
    QpFailure,
    EvalFailure,
}

/// Per-iteration record: cost, feasibilities and step data.
#[derive(Debug, Clone)]
pub struct SqpIterate {
    pub h: f64,
    pub phi_eq: f64,
    pub phi_ineq: f64,
    pub step_norm: f64,
    pub alpha: f64,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SqpReport {
    pub iterations: usize,
    pub history: Vec<SqpIterate>,
    pub termination: TerminationReason,
    pub wall_time: f64,
}

impl SqpReport {
    pub fn converged(&self) -> bool {
        self.termination == TerminationReason::Converged
    }
}

#[derive(Debug, Clone)]
pub struct SqpOptions {
    pub max_iter: usize,
    /// Relative-decrease threshold of the convergence tests.
    pub rel_decrease: f64,
    /// Absolute feasibility threshold on both phi measures.
    pub feas_tol: f64,
    pub line_search: bool,
    /// Initial adaptive proximal weight; damps steps where the Gauss-Newton
    /// model has no curvature and decays toward zero as full steps succeed.
    pub prox_initial: f64,
    pub qp: QpOptions,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            rel_decrease: 0.1,
            feas_tol: 1e-3,
            line_search: true,
            prox_initial: 1e-2,
            qp: QpOptions { max_iter: 60, tol: 1e-11 },
        }
    }
}

/// Typical step magnitude per variable, used to make the proximal term
/// dimensionally sensible across families (forces in hundreds of newtons, feet in
/// tenths of meters, durations in hundredths of seconds).
fn variable_scales(problem: &Problem) -> Vec<f64> {
    let l = &problem.layout;
    let mut scales = vec![1.0; l.n_vars];
    let weight = problem.scenario.robot.mass * problem.scenario.robot.gravity.norm();
    for leg in 0..l.n_legs {
        for d in 0..l.n_stance {
            for k in 0..=l.deg_forces {
                let b = l.force_cp(leg, d, k);
                for ax in 0..3 {
                    scales[b + ax] = 0.5 * weight;
                }
            }
        }
        if l.n_swing == 0 {
            let b = l.foothold(leg, 0);
            for ax in 0..3 {
                scales[b + ax] = 0.2;
            }
        } else {
            for d in 0..l.n_swing {
                for k in 0..=l.deg_feet {
                    let b = l.swing_cp(leg, d, k);
                    for ax in 0..3 {
                        scales[b + ax] = 0.2;
                    }
                }
            }
        }
        for q in 0..l.n_phase {
            scales[l.duration(leg, q)] = 0.05;
        }
        if l.mode == crate::nlp::ProblemMode::Proposed {
            for q in 0..l.n_phase {
                let b = l.chi(leg, q);
                for ax in 0..3 {
                    scales[b + ax] = 0.3;
                    scales[b + 3 + ax] = 1.0;
                }
            }
        }
    }
    for k in 0..l.n_nodes {
        let bd = l.dtheta(k);
        let bw = l.omega(k);
        for ax in 0..3 {
            scales[bd + ax] = 0.2;
            scales[bw + ax] = 1.0;
        }
        if l.mode == crate::nlp::ProblemMode::Baseline {
            let bx = l.xnode(k);
            for ax in 0..3 {
                scales[bx + ax] = 0.3;
                scales[bx + 3 + ax] = 1.0;
            }
        }
    }
    scales
}

impl SqpOptions {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            max_iter: s.solver.max_iter,
            line_search: s.solver.line_search,
            ..Self::default()
        }
    }
}

/// Ratio test with the division guard: satisfied when the denominator is tiny.
fn relative_decrease_ok(prev: f64, cur: f64, threshold: f64) -> bool {
    if cur.abs() < 1e-12 {
        return true;
    }
    (prev - cur) / cur < threshold
}

/// Solve the trajectory optimization problem from the given start.
pub fn sqp(
    problem: &Problem,
    xi0: &DecisionVector,
    opts: &SqpOptions,
) -> (TrajectorySolution, SqpReport) {
    let start = std::time::Instant::now();
    let n = problem.n_vars();
    let mut xi = xi0.clone();
    // Clamp the start into the duration bounds.
    for leg in 0..problem.layout.n_legs {
        for q in 0..problem.layout.n_phase {
            let idx = problem.layout.duration(leg, q);
            xi.values[idx] = xi.values[idx].max(problem.scenario.solver.dt_min);
        }
    }

    let mut history: Vec<SqpIterate> = Vec::new();
    let mut termination = TerminationReason::MaxIter;
    let scales = variable_scales(problem);
    let mut prox = opts.prox_initial;

    for _u in 0..opts.max_iter {
        let eval = match problem.evaluate(&xi) {
            Ok(e) => e,
            Err(EvalError::NonFinite(_)) | Err(EvalError::DegenerateDuration(_)) => {
                termination = TerminationReason::EvalFailure;
                break;
            }
        };
        let h = eval.cost_value(problem);
        let c_eq: Vec<f64> = eval.eq_rows.iter().map(|r| r.value).collect();
        let c_in: Vec<f64> = eval.ineq_rows.iter().map(|r| r.value).collect();
        let phi_eq = mean_l1(&c_eq);
        let phi_ineq = mean_l1_pos(&c_in);

        if let Some(prev) = history.last() {
            let ok = relative_decrease_ok(prev.h, h, opts.rel_decrease)
                && relative_decrease_ok(prev.phi_eq, phi_eq, opts.rel_decrease)
                && relative_decrease_ok(prev.phi_ineq, phi_ineq, opts.rel_decrease)
                && phi_eq < opts.feas_tol
                && phi_ineq < opts.feas_tol;
            if ok {
                history.push(SqpIterate {
                    h,
                    phi_eq,
                    phi_ineq,
                    step_norm: 0.0,
                    alpha: 0.0,
                    qp_iterations: 0,
                });
                termination = TerminationReason::Converged;
                break;
            }
        }

        // Gauss-Newton model plus the adaptive proximal damping.
        let mut h_mat = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            h_mat[(i, i)] = problem.lambda_gn + prox / (scales[i] * scales[i]);
        }
        let mut g = vec![0.0; n];
        for block in &eval.blocks {
            if block.weight == 0.0 {
                continue;
            }
            for row in &block.rows {
                let w2 = 2.0 * block.weight;
                for &(c1, v1) in &row.jac {
                    g[c1] += w2 * row.value * v1;
                    for &(c2, v2) in &row.jac {
                        h_mat[(c1, c2)] += w2 * v1 * v2;
                    }
                }
            }
        }
        let (eq_jac, b_eq): (Vec<_>, Vec<f64>) = eval
            .eq_rows
            .iter()
            .map(|r| (r.jac.clone(), -r.value))
            .unzip();
        let (in_jac, b_in): (Vec<_>, Vec<f64>) = eval
            .ineq_rows
            .iter()
            .map(|r| (r.jac.clone(), -r.value))
            .unzip();

        let qp_usable = |sol: &QpSolution| {
            sol.status == QpStatus::Solved
                || (sol.kkt.stationarity
                    < 1e-6 * (1.0 + g.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
                    && sol.kkt.primal_eq < 1e-7
                    && sol.kkt.primal_ineq < 1e-7)
        };
        let mut sol = qp::solve_sparse_qp(
            &qp::SparseQp {
                n,
                h: &h_mat,
                g: &g,
                eq_rows: &eq_jac,
                b_eq: &b_eq,
                in_rows: &in_jac,
                b_in: &b_in,
            },
            &opts.qp,
        );
        if !qp_usable(&sol) {
            // One Levenberg retry with a stiffer diagonal.
            let bump = 1e-4 * (1.0 + (0..n).map(|i| h_mat[(i, i)].abs()).fold(0.0, f64::max));
            let mut h_reg = h_mat.clone();
            for i in 0..n {
                h_reg[(i, i)] += bump;
            }
            sol = qp::solve_sparse_qp(
                &qp::SparseQp {
                    n,
                    h: &h_reg,
                    g: &g,
                    eq_rows: &eq_jac,
                    b_eq: &b_eq,
                    in_rows: &in_jac,
                    b_in: &b_in,
                },
                &opts.qp,
            );
            if !qp_usable(&sol) {
                history.push(SqpIterate {
                    h,
                    phi_eq,
                    phi_ineq,
                    step_norm: 0.0,
                    alpha: 0.0,
                    qp_iterations: sol.iterations,
                });
                termination = TerminationReason::QpFailure;
                break;
            }
        }
        let d: Vec<f64> = sol.x.iter().copied().collect();
        let step_norm = d.iter().fold(0.0f64, |m, &v| m.max(v.abs()));

        // Full step first; merit backtracking as the safeguard. The proximal weight
        // adapts to how much backtracking was needed.
        let mut alpha = 1.0;
        if opts.line_search {
            let rho = 1.1
                * sol
                    .y_eq
                    .iter()
                    .chain(sol.z_in.iter())
                    .fold(1.0f64, |m, &v| m.max(v.abs()));
            let merit0 = h + rho * (l1(&c_eq) + l1_pos(&c_in));
            let mut accepted = false;
            let mut trial_alpha = 1.0;
            for _ in 0..7 {
                let scaled: Vec<f64> = d.iter().map(|v| v * trial_alpha).collect();
                let trial = problem.retract(&xi, &scaled);
                if let Ok(te) = problem.evaluate(&trial) {
                    let th = te.cost_value(problem);
                    let tc_eq: Vec<f64> = te.eq_rows.iter().map(|r| r.value).collect();
                    let tc_in: Vec<f64> = te.ineq_rows.iter().map(|r| r.value).collect();
                    let merit = th + rho * (l1(&tc_eq) + l1_pos(&tc_in));
                    if merit < merit0 {
                        alpha = trial_alpha;
                        accepted = true;
                        break;
                    }
                }
                trial_alpha *= 0.5;
            }
            if !accepted {
                // Non-monotone fallback: take the full step rather than stalling.
                alpha = 1.0;
                prox = (prox * 10.0).min(1e2);
            } else if alpha >= 1.0 {
                prox = (prox * 0.3).max(1e-8);
            } else if alpha < 0.25 {
                prox = (prox * 4.0).min(1e2);
            }
        }
        let scaled: Vec<f64> = d.iter().map(|v| v * alpha).collect();
        xi = problem.retract(&xi, &scaled);
        history.push(SqpIterate {
            h,
            phi_eq,
            phi_ineq,
            step_norm,
            alpha,
            qp_iterations: sol.iterations,
        });
    }

    let report = SqpReport {
        iterations: history.len(),
        history,
        termination,
        wall_time: start.elapsed().as_secs_f64(),
    };
    (TrajectorySolution::from_decision(problem, &xi), report)
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l1_pos(v: &[f64]) -> f64 {
    v.iter().map(|x| x.max(0.0)).sum()
}

fn mean_l1(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        l1(v) / v.len() as f64
    }
}

fn mean_l1_pos(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        l1_pos(v) / v.len() as f64
    }
}

/// Assert that the labelled rows evaluate consistently (debug helper for tests).
pub fn debug_row_summary(rows: &[RowEval]) -> String {
    let mut out = String::new();
    for r in rows.iter().take(12) {
        out.push_str(&format!("{:?} = {:.3e}\n", r.label.kind, r.value));
    }
    out
}
