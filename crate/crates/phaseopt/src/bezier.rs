//! Bernstein-basis algebra: curve evaluation, degree-aware differentiation matrices
//! and analytic double integration of Bezier-parameterized accelerations.
//!
//! A Bezier curve of degree `n` over a segment of duration `T` is evaluated in
//! normalized time `s = (t - a) / T`. Differentiating twice maps the control points
//! through a banded linear operator; stacking that operator with the initial-velocity
//! and initial-value rows gives a square, invertible matrix, which is what lets a
//! force curve be integrated into a position curve in closed form.

use nalgebra::{DMatrix, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BezierError {
    #[error("index {k} out of range for degree {n}")]
    IndexOutOfRange { k: usize, n: usize },
    #[error("normalized time {s} outside [0, 1]")]
    TimeOutOfRange { s: f64 },
    #[error("degree {0} unsupported: differentiation matrix needs n >= 2")]
    UnsupportedDegree(usize),
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("control point list is empty")]
    EmptyControlPoints,
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("singular linear system while integrating acceleration")]
    SingularSystem,
}

const BINOMIAL_TABLE_MAX: usize = 12;

/// Binomial coefficients up to `BINOMIAL_TABLE_MAX` are precomputed; larger degrees
/// fall back to the multiplicative formula.
fn binomial(n: usize, k: usize) -> f64 {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t: Vec<Vec<f64>> = Vec::with_capacity(BINOMIAL_TABLE_MAX + 1);
        for n in 0..=BINOMIAL_TABLE_MAX {
            let mut row = vec![1.0; n + 1];
            for k in 1..n {
                row[k] = t[n - 1][k - 1] + t[n - 1][k];
            }
            t.push(row);
        }
        t
    });
    if n <= BINOMIAL_TABLE_MAX {
        table[n][k]
    } else {
        let k = k.min(n - k);
        let mut acc = 1.0;
        for j in 0..k {
            acc = acc * (n - j) as f64 / (j + 1) as f64;
        }
        acc
    }
}

/// Bernstein polynomial `b_k^n(s) = C(n,k) s^k (1-s)^(n-k)`.
///
/// Domain-checked: `k <= n` and `s` in `[0, 1]`. Internal evaluation paths that need
/// the polynomial extension outside `[0, 1]` use [`bernstein_unchecked`].
pub fn bernstein(k: usize, n: usize, s: f64) -> Result<f64, BezierError> {
    if k > n {
        return Err(BezierError::IndexOutOfRange { k, n });
    }
    if !(0.0..=1.0).contains(&s) || !s.is_finite() {
        return Err(BezierError::TimeOutOfRange { s });
    }
    Ok(bernstein_unchecked(k, n, s))
}

/// `b_k^n(s)` as a plain polynomial, valid for any real `s`.
pub fn bernstein_unchecked(k: usize, n: usize, s: f64) -> f64 {
    binomial(n, k) * s.powi(k as i32) * (1.0 - s).powi((n - k) as i32)
}

/// First derivative of the Bernstein basis with respect to `s`.
pub fn bernstein_deriv(k: usize, n: usize, s: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let lower = |j: isize| -> f64 {
        if j < 0 || j as usize > n - 1 {
            0.0
        } else {
            bernstein_unchecked(j as usize, n - 1, s)
        }
    };
    n as f64 * (lower(k as isize - 1) - lower(k as isize))
}

/// Second derivative of the Bernstein basis with respect to `s`.
pub fn bernstein_deriv2(k: usize, n: usize, s: f64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let lower = |j: isize| -> f64 {
        if j < 0 || j as usize > n - 2 {
            0.0
        } else {
            bernstein_unchecked(j as usize, n - 2, s)
        }
    };
    let k = k as isize;
    (n * (n - 1)) as f64 * (lower(k - 2) - 2.0 * lower(k - 1) + lower(k))
}

/// A Bezier curve segment in 3D: `degree + 1` control points over `duration` seconds.
///
/// Units of the control points depend on context (m for feet and position segments,
/// N for force curves).
#[derive(Debug, Clone, PartialEq)]
pub struct BezierSegment {
    degree: usize,
    control_points: Vec<Vector3<f64>>,
    duration: f64,
}

impl BezierSegment {
    pub fn new(control_points: Vec<Vector3<f64>>, duration: f64) -> Result<Self, BezierError> {
        if control_points.is_empty() {
            return Err(BezierError::EmptyControlPoints);
        }
        if !(duration > 0.0) {
            return Err(BezierError::NonPositiveDuration(duration));
        }
        Ok(Self {
            degree: control_points.len() - 1,
            control_points,
            duration,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn control_points(&self) -> &[Vector3<f64>] {
        &self.control_points
    }

    /// Evaluate at normalized time `s` in `[0, 1]`.
    pub fn eval(&self, s: f64) -> Result<Vector3<f64>, BezierError> {
        if !(0.0..=1.0).contains(&s) || !s.is_finite() {
            return Err(BezierError::TimeOutOfRange { s });
        }
        Ok(self.eval_unchecked(s))
    }

    /// Evaluate the polynomial extension at any real `s`.
    pub fn eval_unchecked(&self, s: f64) -> Vector3<f64> {
        let n = self.degree;
        let mut acc = Vector3::zeros();
        for (k, c) in self.control_points.iter().enumerate() {
            acc += c * bernstein_unchecked(k, n, s);
        }
        acc
    }

    /// Time derivative of the curve as a degree `n-1` segment over the same duration.
    ///
    /// A degree-0 curve differentiates to the zero degree-0 curve.
    pub fn derivative(&self) -> BezierSegment {
        let n = self.degree;
        if n == 0 {
            return BezierSegment {
                degree: 0,
                control_points: vec![Vector3::zeros()],
                duration: self.duration,
            };
        }
        let scale = n as f64 / self.duration;
        let pts = self
            .control_points
            .windows(2)
            .map(|w| (w[1] - w[0]) * scale)
            .collect();
        BezierSegment {
            degree: n - 1,
            control_points: pts,
            duration: self.duration,
        }
    }
}

/// The square matrix of Eq-style second-order Bezier differentiation: applied to the
/// stacked control points `C` of a degree-`n` curve over `duration`, the top `n-1`
/// rows give the second-derivative control points, row `n` the initial time
/// derivative and row `n+1` the initial value.
#[derive(Debug, Clone)]
pub struct SecondDiffMatrix {
    order: usize,
    duration: f64,
    entries: DMatrix<f64>,
}

impl SecondDiffMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Derivative of the matrix entries with respect to the duration.
    pub(crate) fn entries_d_duration(&self) -> DMatrix<f64> {
        let n = self.order;
        let t = self.duration;
        let mut d = DMatrix::zeros(n + 1, n + 1);
        let scale = -2.0 * n as f64 * (n - 1) as f64 / (t * t * t);
        for r in 0..n - 1 {
            d[(r, r)] = scale;
            d[(r, r + 1)] = -2.0 * scale;
            d[(r, r + 2)] = scale;
        }
        d[(n - 1, 0)] = n as f64 / (t * t);
        d[(n - 1, 1)] = -(n as f64) / (t * t);
        d
    }
}

/// Build the second-order differentiation matrix for degree `n >= 2` and a positive
/// duration.
pub fn second_diff_matrix(n: usize, duration: f64) -> Result<SecondDiffMatrix, BezierError> {
    if n < 2 {
        return Err(BezierError::UnsupportedDegree(n));
    }
    if !(duration > 0.0) {
        return Err(BezierError::NonPositiveDuration(duration));
    }
    let mut m = DMatrix::zeros(n + 1, n + 1);
    let accel = n as f64 * (n - 1) as f64 / (duration * duration);
    for r in 0..n - 1 {
        m[(r, r)] = accel;
        m[(r, r + 1)] = -2.0 * accel;
        m[(r, r + 2)] = accel;
    }
    m[(n - 1, 0)] = -(n as f64) / duration;
    m[(n - 1, 1)] = n as f64 / duration;
    m[(n, 0)] = 1.0;
    Ok(SecondDiffMatrix {
        order: n,
        duration,
        entries: m,
    })
}

/// Integrate a Bezier-parameterized acceleration twice, analytically.
///
/// `accel_points` are the control points of `mass * acceleration` (i.e. a force
/// curve); the result is the degree `M+2` position segment whose second time
/// derivative times `mass` reproduces the input curve and whose value and velocity
/// at the segment start equal `init_pos` / `init_vel`. The stacked linear system is
/// LU-solved with a three-column right-hand side (the axes decouple).
pub fn integrate_accel(
    accel_points: &[Vector3<f64>],
    mass: f64,
    init_pos: Vector3<f64>,
    init_vel: Vector3<f64>,
    duration: f64,
) -> Result<BezierSegment, BezierError> {
    if accel_points.is_empty() {
        return Err(BezierError::EmptyControlPoints);
    }
    if !(mass > 0.0) {
        return Err(BezierError::NonPositiveMass(mass));
    }
    if !(duration > 0.0) {
        return Err(BezierError::NonPositiveDuration(duration));
    }
    let m_force = accel_points.len() - 1;
    let n_pos = m_force + 2;
    let k = second_diff_matrix(n_pos, duration)?;
    let mut rhs = DMatrix::zeros(n_pos + 1, 3);
    for (r, a) in accel_points.iter().enumerate() {
        for ax in 0..3 {
            rhs[(r, ax)] = a[ax] / mass;
        }
    }
    for ax in 0..3 {
        rhs[(m_force + 1, ax)] = init_vel[ax];
        rhs[(m_force + 2, ax)] = init_pos[ax];
    }
    let lu = k.entries.clone().lu();
    let sol = lu.solve(&rhs).ok_or(BezierError::SingularSystem)?;
    let pts = (0..=n_pos)
        .map(|r| Vector3::new(sol[(r, 0)], sol[(r, 1)], sol[(r, 2)]))
        .collect();
    BezierSegment::new(pts, duration)
}
