//! Exponential and logarithmic maps on SO(3), plus the right Jacobians needed to
//! differentiate residuals expressed in a tangent-space chart.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum So3Error {
    #[error("input is not a rotation matrix (orthonormality defect {defect:.3e}, det {det:.6})")]
    NotARotation { defect: f64, det: f64 },
}

/// Skew-symmetric cross-product matrix of `v`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula with a series fallback below 1e-6 rad.
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (a, b) = if theta < 1e-6 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

fn rotation_defect(r: &Matrix3<f64>) -> (f64, f64) {
    let defect = (r.transpose() * r - Matrix3::identity()).norm();
    (defect, r.determinant())
}

/// Inverse of [`exp_so3`] on the open ball of radius pi.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>, So3Error> {
    let (defect, det) = rotation_defect(r);
    if defect > 1e-6 || det < 0.0 {
        return Err(So3Error::NotARotation { defect, det });
    }
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let antisym = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-6 {
        // theta/sin(theta) ~ 1 + theta^2/6
        return Ok(antisym * 0.5 * (1.0 + theta * theta / 6.0));
    }
    if theta > std::f64::consts::PI - 1e-4 {
        // Near pi the antisymmetric part degenerates; recover the axis from the
        // symmetric part R + R^T = 2(cos I + (1 - cos) aa^T).
        let sym = (r + r.transpose()) * 0.5;
        let mut axis = Vector3::zeros();
        for i in 0..3 {
            axis[i] = ((sym[(i, i)] - cos_theta) / (1.0 - cos_theta)).max(0.0).sqrt();
        }
        // Fix signs using the off-diagonal products and the antisymmetric residue.
        let imax = (0..3).max_by(|&a, &b| axis[a].total_cmp(&axis[b])).unwrap();
        let mut signed = axis;
        for i in 0..3 {
            if i != imax {
                let off = sym[(imax.min(i), imax.max(i))];
                signed[i] = (off / (1.0 - cos_theta) / axis[imax]).clamp(-1.0, 1.0).abs()
                    * axis[i].signum();
                signed[i] = off.signum() * axis[i];
            }
        }
        if antisym[imax] < 0.0 {
            signed = -signed;
        }
        return Ok(signed.normalize() * theta);
    }
    Ok(antisym * (theta / (2.0 * theta.sin())))
}

/// Right Jacobian of SO(3): `Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (a, b) = if theta < 1e-5 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Inverse of the right Jacobian.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let c = if theta < 1e-5 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}

/// Project a near-rotation matrix back onto SO(3) (polar factor via SVD).
pub fn polar_orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut polar = u * vt;
    if polar.determinant() < 0.0 {
        let mut u_fixed = u;
        for i in 0..3 {
            u_fixed[(i, 2)] = -u_fixed[(i, 2)];
        }
        polar = u_fixed * vt;
    }
    polar
}
