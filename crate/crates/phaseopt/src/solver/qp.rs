//! Dense convex-QP subsolver: primal-dual interior point with Mehrotra
//! predictor-corrector steps.
//!
//! Solves `min 1/2 x' H x + g' x  s.t.  A_eq x = b_eq, A_in x <= b_in`. The KKT
//! systems are reduced by eliminating the slack/dual pair, then solved through a
//! Cholesky factorization of `M = H + A_in' (Z/S) A_in` and a Schur complement on
//! the equality block. Constraint rows are kept sparse; one factorization serves
//! both the predictor and the corrector.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

/// One sparse constraint row: sorted, deduplicated `(column, value)` pairs.
pub(crate) type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
    }
}

/// Dense quadratic program.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// Symmetry defect of the Hessian (dimension checks happen in the solver).
    pub fn hessian_symmetry_defect(&self) -> f64 {
        (&self.h - self.h.transpose()).amax()
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub z_in: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Barrier merit (complementarity plus scaled KKT residuals) per centering
    /// step; non-increasing by construction.
    pub merit_trace: Vec<f64>,
    pub kkt: KktResiduals,
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { max_iter: 60, tol: 1e-11 }
    }
}

/// Solve a dense QP. Infeasibility and numerical breakdown are reported through the
/// status flag, never as a panic.
pub fn solve_qp(qp: &QpProblem) -> QpSolution {
    solve_qp_with(qp, &QpOptions::default())
}

pub fn solve_qp_with(qp: &QpProblem, opts: &QpOptions) -> QpSolution {
    let n = qp.g.len();
    let dense_rows = |a: &DMatrix<f64>| -> Vec<SparseRow> {
        (0..a.nrows())
            .map(|i| (0..n).filter(|&j| a[(i, j)] != 0.0).map(|j| (j, a[(i, j)])).collect())
            .collect()
    };
    let mut h = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = qp.h[(i, j)];
        }
    }
    let eq_rows = dense_rows(&qp.a_eq);
    let in_rows = dense_rows(&qp.a_in);
    let view = SparseQp {
        n,
        h: &h,
        g: qp.g.as_slice(),
        eq_rows: &eq_rows,
        b_eq: qp.b_eq.as_slice(),
        in_rows: &in_rows,
        b_in: qp.b_in.as_slice(),
    };
    solve_sparse_qp(&view, opts)
}

/// Sparse-row view of a QP; the Hessian stays dense.
pub(crate) struct SparseQp<'a> {
    pub n: usize,
    pub h: &'a Mat<f64>,
    pub g: &'a [f64],
    pub eq_rows: &'a [SparseRow],
    pub b_eq: &'a [f64],
    pub in_rows: &'a [SparseRow],
    pub b_in: &'a [f64],
}

fn row_dot(row: &SparseRow, x: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * x[j]).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

pub(crate) fn solve_sparse_qp(qp: &SparseQp, opts: &QpOptions) -> QpSolution {
    let n = qp.n;
    let m_eq = qp.eq_rows.len();
    let m_in = qp.in_rows.len();

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m_eq];
    let mut z = vec![1.0; m_in];
    let mut s = vec![1.0; m_in];
    for j in 0..m_in {
        let slack = qp.b_in[j] - row_dot(&qp.in_rows[j], &x);
        s[j] = slack.max(1.0);
    }

    let mut merit_trace = Vec::new();
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut stalled = 0usize;
    // Best iterate seen, by absolute KKT residual; returned if the final iterate
    // is worse (late iterations can churn at the numerical floor).
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;

    let g_norm = inf_norm(qp.g);
    let b_norm = inf_norm(qp.b_eq).max(inf_norm(qp.b_in));

    let mut h_x = vec![0.0; n];
    let mut r_d = vec![0.0; n];
    let mut r_p = vec![0.0; m_eq];
    let mut r_i = vec![0.0; m_in];

    for iter in 0..opts.max_iter {
        iterations = iter;
        // Residuals.
        matvec(qp.h, &x, &mut h_x);
        r_d.copy_from_slice(&h_x);
        for i in 0..n {
            r_d[i] += qp.g[i];
        }
        for (j, row) in qp.eq_rows.iter().enumerate() {
            for &(c, v) in row {
                r_d[c] += v * y[j];
            }
        }
        for (j, row) in qp.in_rows.iter().enumerate() {
            for &(c, v) in row {
                r_d[c] += v * z[j];
            }
        }
        for (j, row) in qp.eq_rows.iter().enumerate() {
            r_p[j] = row_dot(row, &x) - qp.b_eq[j];
        }
        for (j, row) in qp.in_rows.iter().enumerate() {
            r_i[j] = row_dot(row, &x) + s[j] - qp.b_in[j];
        }
        let mu = if m_in > 0 {
            s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m_in as f64
        } else {
            0.0
        };

        let scale_d = 1.0 + g_norm + inf_norm(&h_x);
        let scale_p = 1.0 + b_norm + inf_norm(&x);
        let kkt_now = {
            let viol = (0..m_in)
                .map(|j| (r_i[j] - s[j]).max(0.0))
                .fold(0.0f64, f64::max);
            let compl = (0..m_in).map(|j| (s[j] * z[j]).abs()).fold(0.0f64, f64::max);
            inf_norm(&r_d).max(inf_norm(&r_p)).max(viol).max(compl)
        };
        if best.as_ref().map_or(true, |(b, _, _, _)| kkt_now < *b) {
            best = Some((kkt_now, x.clone(), y.clone(), z.clone()));
        }
        let tol = opts.tol;
        if inf_norm(&r_d) <= tol * scale_d
            && inf_norm(&r_p) <= tol * scale_p
            && inf_norm(&r_i) <= tol * scale_p
            && mu <= tol * (1.0 + scale_d)
        {
            status = QpStatus::Solved;
            break;
        }
        if inf_norm(&x) > 1e14 {
            status = QpStatus::NumericalFailure;
            break;
        }

        // M = H + A_in' (Z/S) A_in (+ delta I on factorization failure). The
        // barrier weights enter unmodified so the slack/dual elimination stays an
        // identity; iterative refinement recovers the conditioning loss.
        let mut m_mat = qp.h.clone();
        for (j, row) in qp.in_rows.iter().enumerate() {
            let w = z[j] / s[j];
            for &(c1, v1) in row {
                for &(c2, v2) in row {
                    m_mat[(c1, c2)] += w * v1 * v2;
                }
            }
        }
        let diag_scale = 1.0 + (0..n).map(|i| m_mat[(i, i)].abs()).fold(0.0, f64::max);
        let mut delta = 0.0;
        let llt = loop {
            let attempt = if delta == 0.0 {
                m_mat.llt(Side::Lower)
            } else {
                let mut reg = m_mat.clone();
                for i in 0..n {
                    reg[(i, i)] += delta * diag_scale;
                }
                reg.llt(Side::Lower)
            };
            match attempt {
                Ok(f) => break Some(f),
                Err(_) => {
                    delta = if delta == 0.0 { 1e-14 } else { delta * 100.0 };
                    if delta > 1e-4 {
                        break None;
                    }
                }
            }
        };
        let Some(llt) = llt else {
            status = QpStatus::NumericalFailure;
            break;
        };

        // Schur complement on the equality block, reused for both solves.
        let (w2, schur_llt) = if m_eq > 0 {
            let mut aeq_t = Mat::<f64>::zeros(n, m_eq);
            for (j, row) in qp.eq_rows.iter().enumerate() {
                for &(c, v) in row {
                    aeq_t[(c, j)] = v;
                }
            }
            let w2 = llt.solve(&aeq_t);
            let mut schur = Mat::<f64>::zeros(m_eq, m_eq);
            for (j, row) in qp.eq_rows.iter().enumerate() {
                for i in 0..m_eq {
                    let mut acc = 0.0;
                    for &(c, v) in row {
                        acc += v * w2[(c, i)];
                    }
                    schur[(j, i)] = acc;
                }
            }
            let mut sdelta = 0.0;
            let f = loop {
                let attempt = if sdelta == 0.0 {
                    schur.llt(Side::Lower)
                } else {
                    let mut reg = schur.clone();
                    for i in 0..m_eq {
                        reg[(i, i)] += sdelta;
                    }
                    reg.llt(Side::Lower)
                };
                match attempt {
                    Ok(f) => break Some(f),
                    Err(_) => {
                        sdelta = if sdelta == 0.0 { 1e-12 } else { sdelta * 100.0 };
                        if sdelta > 1e-2 {
                            break None;
                        }
                    }
                }
            };
            let Some(f) = f else {
                status = QpStatus::NumericalFailure;
                break;
            };
            (Some(w2), Some(f))
        } else {
            (None, None)
        };

        // Solve the reduced KKT system [M Ae'; Ae 0] [dx; dy] = [bx; by] through
        // the Schur complement, with two rounds of iterative refinement to recover
        // the digits the barrier-weighted factorization loses.
        let kkt_solve = |bx: &[f64], by: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut dx = vec![0.0; n];
            let mut dy = vec![0.0; m_eq];
            let mut res_x = bx.to_vec();
            let mut res_y = by.to_vec();
            for _refine in 0..3 {
                let mut rhs = Mat::<f64>::zeros(n, 1);
                for i in 0..n {
                    rhs[(i, 0)] = res_x[i];
                }
                let w1 = llt.solve(&rhs);
                let mut ddy = vec![0.0; m_eq];
                let mut ddx = vec![0.0; n];
                if let (Some(w2), Some(schur_llt)) = (&w2, &schur_llt) {
                    let mut srhs = Mat::<f64>::zeros(m_eq, 1);
                    for (j, row) in qp.eq_rows.iter().enumerate() {
                        let mut acc = 0.0;
                        for &(c, v) in row {
                            acc += v * w1[(c, 0)];
                        }
                        srhs[(j, 0)] = acc - res_y[j];
                    }
                    let dy_mat = schur_llt.solve(&srhs);
                    for j in 0..m_eq {
                        ddy[j] = dy_mat[(j, 0)];
                    }
                    for i in 0..n {
                        let mut acc = w1[(i, 0)];
                        for j in 0..m_eq {
                            acc -= w2[(i, j)] * ddy[j];
                        }
                        ddx[i] = acc;
                    }
                } else {
                    for i in 0..n {
                        ddx[i] = w1[(i, 0)];
                    }
                }
                for i in 0..n {
                    dx[i] += ddx[i];
                }
                for j in 0..m_eq {
                    dy[j] += ddy[j];
                }
                // Residuals of the reduced system for the next refinement pass.
                for i in 0..n {
                    let mut acc = 0.0;
                    for jj in 0..n {
                        acc += m_mat[(i, jj)] * dx[jj];
                    }
                    res_x[i] = bx[i] - acc;
                }
                for (j, row) in qp.eq_rows.iter().enumerate() {
                    for &(c, v) in row {
                        res_x[c] -= v * dy[j];
                    }
                    res_y[j] = by[j] - row_dot(row, &dx);
                }
            }
            (dx, dy)
        };

        // One reduced solve for a given complementarity target.
        let solve_step = |r_sz: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut bx = vec![0.0; n];
            for i in 0..n {
                bx[i] = -r_d[i];
            }
            for (j, row) in qp.in_rows.iter().enumerate() {
                let coeff = (r_sz[j] - z[j] * r_i[j]) / s[j];
                for &(c, v) in row {
                    bx[c] += v * coeff;
                }
            }
            let by: Vec<f64> = (0..m_eq).map(|j| -r_p[j]).collect();
            let (dx, dy) = kkt_solve(&bx, &by);
            let mut ds = vec![0.0; m_in];
            let mut dz = vec![0.0; m_in];
            for (j, row) in qp.in_rows.iter().enumerate() {
                ds[j] = -r_i[j] - row_dot(row, &dx);
                dz[j] = (-r_sz[j] - z[j] * ds[j]) / s[j];
            }
            (dx, dy, ds, dz)
        };

        let max_step = |s_: &[f64], ds: &[f64], z_: &[f64], dz: &[f64]| -> f64 {
            let mut a: f64 = 1.0;
            for j in 0..m_in {
                if ds[j] < 0.0 {
                    a = a.min(-s_[j] / ds[j]);
                }
                if dz[j] < 0.0 {
                    a = a.min(-z_[j] / dz[j]);
                }
            }
            a
        };

        let (dx, dy, ds, dz) = if m_in > 0 {
            // Affine predictor.
            let r_sz_aff: Vec<f64> = (0..m_in).map(|j| s[j] * z[j]).collect();
            let (_dx_a, _dy_a, ds_a, dz_a) = solve_step(&r_sz_aff);
            let alpha_aff = max_step(&s, &ds_a, &z, &dz_a).min(1.0);
            let mu_aff = (0..m_in)
                .map(|j| (s[j] + alpha_aff * ds_a[j]) * (z[j] + alpha_aff * dz_a[j]))
                .sum::<f64>()
                / m_in as f64;
            // Centering floor keeps the iterates off corners, and the balance
            // rule keeps mu within two orders of the scaled KKT residuals: letting
            // complementarity undershoot them only destroys the conditioning of
            // the barrier-weighted system.
            let mut sigma = (mu_aff / mu).powi(3).clamp(1e-4, 1.0);
            let balance = (inf_norm(&r_d) / scale_d)
                .max(inf_norm(&r_p) / scale_p)
                .max(inf_norm(&r_i) / scale_p);
            let mu_target_floor = 1e-2 * balance;
            if sigma * mu < mu_target_floor {
                sigma = (mu_target_floor / mu).min(0.99);
            }
            // Corrector.
            let r_sz: Vec<f64> = (0..m_in)
                .map(|j| s[j] * z[j] + ds_a[j] * dz_a[j] - sigma * mu)
                .collect();
            solve_step(&r_sz)
        } else {
            solve_step(&[])
        };

        let mut alpha = if m_in > 0 {
            (0.995 * max_step(&s, &ds, &z, &dz)).min(1.0)
        } else {
            1.0
        };
        // Long-step neighborhood: keep every product s_j z_j above gamma * mu so
        // the barrier weights stay mutually bounded; never demand more centrality
        // than the current point has.
        if m_in > 0 {
            let min_prod_at = |a: f64| {
                (0..m_in)
                    .map(|j| (s[j] + a * ds[j]) * (z[j] + a * dz[j]))
                    .fold(f64::INFINITY, f64::min)
            };
            let mu_at = |a: f64| {
                (0..m_in)
                    .map(|j| (s[j] + a * ds[j]) * (z[j] + a * dz[j]))
                    .sum::<f64>()
                    / m_in as f64
            };
            let gamma = 1e-6;
            let floor0 = min_prod_at(0.0);
            let mut guard = 0;
            while alpha > 1e-12 && guard < 80 {
                let mp = min_prod_at(alpha);
                if mp >= gamma * mu_at(alpha) || mp >= floor0 {
                    break;
                }
                alpha *= 0.8;
                guard += 1;
            }
        }
        // Keep the barrier merit non-increasing within a 1e-12 band. The KKT
        // residuals are linear in the step, so their post-step values are exactly
        // (1 - alpha) times the current ones; only the complementarity needs
        // re-evaluation per trial step.
        let residual_sum =
            inf_norm(&r_d) / scale_d + (inf_norm(&r_p) + inf_norm(&r_i)) / scale_p;
        let merit0 = mu + residual_sum;
        if m_in > 0 {
            let merit_at = |a: f64| {
                let mu_a = (0..m_in)
                    .map(|j| (s[j] + a * ds[j]) * (z[j] + a * dz[j]))
                    .sum::<f64>()
                    / m_in as f64;
                mu_a + (1.0 - a) * residual_sum
            };
            let band = merit0 + 1e-12 * (1.0 + merit0);
            let alpha_in = alpha;
            let mut guard = 0;
            while merit_at(alpha) > band && alpha > 1e-12 && guard < 60 {
                alpha *= 0.7;
                guard += 1;
            }
            if alpha <= 1e-12 {
                // The band is unreachable (round-off floor); progress wins.
                alpha = alpha_in;
            }
        }
        if alpha < 1e-11 {
            stalled += 1;
            if stalled >= 3 {
                status = QpStatus::Infeasible;
                break;
            }
        } else {
            stalled = 0;
        }

        for i in 0..n {
            x[i] += alpha * dx[i];
        }
        for j in 0..m_eq {
            y[j] += alpha * dy[j];
        }
        for j in 0..m_in {
            s[j] += alpha * ds[j];
            z[j] += alpha * dz[j];
        }
        let mu_new = if m_in > 0 {
            s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m_in as f64
        } else {
            0.0
        };
        merit_trace.push(mu_new + (1.0 - alpha) * residual_sum);
    }

    // Hand back the best iterate if the last one is not it.
    if let Some((best_kkt, bx, by, bz)) = best {
        let final_viol_proxy = inf_norm(&r_d).max(inf_norm(&r_p));
        if best_kkt < final_viol_proxy {
            x = bx;
            y = by;
            z = bz;
        }
    }
    // Final KKT residuals.
    matvec(qp.h, &x, &mut h_x);
    let mut stat = vec![0.0; n];
    stat.copy_from_slice(&h_x);
    for i in 0..n {
        stat[i] += qp.g[i];
    }
    for (j, row) in qp.eq_rows.iter().enumerate() {
        for &(c, v) in row {
            stat[c] += v * y[j];
        }
    }
    for (j, row) in qp.in_rows.iter().enumerate() {
        for &(c, v) in row {
            stat[c] += v * z[j];
        }
    }
    let primal_eq = qp
        .eq_rows
        .iter()
        .enumerate()
        .map(|(j, row)| (row_dot(row, &x) - qp.b_eq[j]).abs())
        .fold(0.0f64, f64::max);
    let primal_ineq = qp
        .in_rows
        .iter()
        .enumerate()
        .map(|(j, row)| (row_dot(row, &x) - qp.b_in[j]).max(0.0))
        .fold(0.0f64, f64::max);
    let complementarity = (0..qp.in_rows.len())
        .map(|j| (s[j] * z[j]).abs())
        .fold(0.0f64, f64::max);
    let kkt = KktResiduals {
        stationarity: inf_norm(&stat),
        primal_eq,
        primal_ineq,
        complementarity,
    };
    let status = if status == QpStatus::MaxIter && kkt.max() < 1e-8 {
        QpStatus::Solved
    } else {
        status
    };
    QpSolution {
        x: DVector::from_vec(x),
        y_eq: DVector::from_vec(y),
        z_in: DVector::from_vec(z),
        status,
        iterations: iterations + 1,
        merit_trace,
        kkt,
    }
}

fn matvec(m: &Mat<f64>, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for i in 0..m.nrows() {
        let mut acc = 0.0;
        for j in 0..n {
            acc += m[(i, j)] * x[j];
        }
        out[i] = acc;
    }
}
